//! Coherent families of states: heat-kernel, inhomogeneous heat-kernel,
//! dual heat-kernel and the strong-coupling vacuum.
//!
//! On a finite group a lattice state is stored as per-edge tables
//! `ω_e(M(δ_x) λ_h) = F_e(h⁻¹, h⁻¹x) / Z_e` with `Z_e = Σ_g F_e(1, g)`.
//! On U(1) states act on Weyl terms `M(χ_k) λ_θ`; on Z on terms `M(δ_m) λ_n`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dyadic::{is_refinement, Dyadic, DyadicTree, Edge, Orientation, OrientedLattice, RefinementWitness};
use crate::error::{Error, Result};
use crate::field_algebra::{
    edge_endpoints, gauge_map, num_vertices, ConfigSpace, ConvolutionKernel, FiniteGroup,
    OperatorMatrix, Refinement, RestCoordinates, SparseKernel,
};
use crate::group_core::{Conventions, GroupId, GroupValue, C64};
use crate::heat_kernel::{convolution_check, dual_heat_kernel_z, HeatKernel, HeatKernelSpec};

/// Coarse dimension up to which residuals run over every matrix unit.
pub const FULL_SPANNING_DIM: usize = 256;
/// Number of random kernels used above that dimension.
pub const RANDOM_SPANNING_KERNELS: usize = 200;
pub const DEFAULT_SEED: u64 = 0x6c67_7431;

/// Per-edge inverse temperatures of an inhomogeneous family, tabulated on dyadics.
///
/// An L edge `[a, b]` uses `β_{a,L}`, an R edge uses `β_{b,R}`; `β_{0,R} = β_{1,R}`.
#[derive(Clone, Debug, PartialEq)]
pub struct InhomogeneousBeta {
    left: BTreeMap<Dyadic, f64>,
    right: BTreeMap<Dyadic, f64>,
}

impl InhomogeneousBeta {
    pub fn from_tables(left: BTreeMap<Dyadic, f64>, mut right: BTreeMap<Dyadic, f64>) -> Result<Self> {
        if let Some(&b) = right.get(&Dyadic::ONE) {
            right.insert(Dyadic::ZERO, b);
        }
        if left.values().chain(right.values()).any(|b| !(*b > 0.0) || !b.is_finite()) {
            return Err(Error::Domain("inhomogeneous betas must be positive".into()));
        }
        Ok(InhomogeneousBeta { left, right })
    }

    /// Tabulates both sequences on all dyadics `k / 2^max_level` in `[0, 1]`.
    pub fn from_fn(
        max_level: u32,
        left: impl Fn(Dyadic) -> f64,
        right: impl Fn(Dyadic) -> f64,
    ) -> Result<Self> {
        if max_level > 24 {
            return Err(Error::Domain("tabulation level too large".into()));
        }
        let pts: Vec<Dyadic> = (0..=(1u64 << max_level)).map(|k| Dyadic::new(k, max_level)).collect();
        InhomogeneousBeta::from_tables(
            pts.iter().map(|&d| (d, left(d))).collect(),
            pts.iter().map(|&d| (d, right(d))).collect(),
        )
    }

    pub fn beta(&self, edge: &Edge) -> Result<f64> {
        let (table, at) = match edge.orient {
            Orientation::Left => (&self.left, edge.lo),
            Orientation::Right => (&self.right, edge.hi),
        };
        table.get(&at).copied().ok_or_else(|| {
            Error::Contract(format!(
                "no beta tabulated for {}-oriented edge at {at}",
                edge.orient.letter()
            ))
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FamilyKind {
    HeatKernel { beta: f64 },
    Inhomogeneous(InhomogeneousBeta),
    /// Per-edge `β = β₀ |I|` on a lattice of total length `scale`.
    DualHeatKernel { beta0: f64, scale: f64 },
    Vacuum,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateFamily {
    pub kind: FamilyKind,
    pub group: GroupId,
    pub conventions: Conventions,
}

impl StateFamily {
    pub fn heat(group: GroupId, beta: f64) -> Self {
        Self::with_kind(group, FamilyKind::HeatKernel { beta })
    }

    pub fn dual(group: GroupId, beta0: f64, scale: f64) -> Self {
        Self::with_kind(group, FamilyKind::DualHeatKernel { beta0, scale })
    }

    pub fn vacuum(group: GroupId) -> Self {
        Self::with_kind(group, FamilyKind::Vacuum)
    }

    pub fn inhomogeneous(group: GroupId, betas: InhomogeneousBeta) -> Self {
        Self::with_kind(group, FamilyKind::Inhomogeneous(betas))
    }

    pub fn with_kind(group: GroupId, kind: FamilyKind) -> Self {
        StateFamily {
            kind,
            group,
            conventions: Conventions::default(),
        }
    }

    pub fn with_conventions(mut self, conventions: Conventions) -> Self {
        self.conventions = conventions;
        self
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            FamilyKind::HeatKernel { .. } => "heat",
            FamilyKind::Inhomogeneous(_) => "inhom",
            FamilyKind::DualHeatKernel { .. } => "dual",
            FamilyKind::Vacuum => "vacuum",
        }
    }
}

/// The factor `F_e` of a single edge.
#[derive(Clone, Debug, PartialEq)]
pub enum EdgeFactor {
    /// `F(h, g) = ρ_β(h)`.
    Heat { beta: f64 },
    /// `F(h, g) = δ_{h,1} ρ_β(g)`.
    Dual { beta: f64 },
    /// `F ≡ 1`.
    Vacuum,
    /// Explicit table `F(h, g)`, `h`-major, on a finite group.
    Table(Vec<C64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityKernel {
    pub group: GroupId,
    pub conventions: Conventions,
    pub factors: Vec<EdgeFactor>,
}

pub fn density_at_level(fam: &StateFamily, lattice: &OrientedLattice) -> Result<DensityKernel> {
    let factors = lattice
        .edges
        .iter()
        .enumerate()
        .map(|(i, e)| -> Result<EdgeFactor> {
            Ok(match &fam.kind {
                FamilyKind::HeatKernel { beta } => EdgeFactor::Heat { beta: *beta },
                FamilyKind::Inhomogeneous(t) => EdgeFactor::Heat { beta: t.beta(e)? },
                FamilyKind::DualHeatKernel { beta0, scale } => {
                    if (lattice.length - scale).abs() > 1e-12 * scale.abs().max(1.0) {
                        return Err(Error::Contract(format!(
                            "lattice length {} does not match the family scale {scale}",
                            lattice.length
                        )));
                    }
                    EdgeFactor::Dual {
                        beta: beta0 * lattice.edge_length(i),
                    }
                }
                FamilyKind::Vacuum => EdgeFactor::Vacuum,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DensityKernel {
        group: fam.group,
        conventions: fam.conventions,
        factors,
    })
}

fn kernel(group: GroupId, beta: f64, conv: Conventions) -> Result<HeatKernel> {
    HeatKernel::new(HeatKernelSpec::new(group, beta).with_conventions(conv))
}

impl DensityKernel {
    /// Full table `F_e(h, g)` on a finite backend.
    pub fn edge_table(&self, fg: &FiniteGroup, e: usize) -> Result<Vec<C64>> {
        let n = fg.order();
        let rho = |beta: f64| -> Result<Vec<f64>> {
            let hk = kernel(self.group, beta, self.conventions)?;
            (0..n).map(|g| hk.eval(&fg.value(g))).collect()
        };
        let factor = self
            .factors
            .get(e)
            .ok_or_else(|| Error::Contract(format!("edge {e} out of range")))?;
        Ok(match factor {
            EdgeFactor::Heat { beta } => {
                let r = rho(*beta)?;
                (0..n * n).map(|i| C64::new(r[i / n], 0.0)).collect()
            }
            EdgeFactor::Dual { beta } => {
                let r = rho(*beta)?;
                (0..n * n)
                    .map(|i| C64::new(if i / n == 0 { r[i % n] } else { 0.0 }, 0.0))
                    .collect()
            }
            EdgeFactor::Vacuum => vec![C64::new(1.0, 0.0); n * n],
            EdgeFactor::Table(t) => {
                if t.len() != n * n {
                    return Err(Error::Contract("factor table has the wrong size".into()));
                }
                t.clone()
            }
        })
    }
}

/// Checks `f(1) = 1`, the class-function property and nonnegative Fourier
/// coefficients (the latter on cyclic groups); returns the worst violation.
pub fn simple_coherence_violation(fg: &FiniteGroup, f: &[f64]) -> f64 {
    let n = fg.order();
    let mut worst = (f[0] - 1.0).abs();
    for g in 0..n {
        for h in 0..n {
            worst = worst.max((f[fg.conj(g, h)] - f[h]).abs());
        }
    }
    if fg.is_abelian() && fg.name() == format!("Z{n}") {
        for k in 0..n {
            let c: f64 = (0..n)
                .map(|g| f[g] * (2.0 * std::f64::consts::PI * (k * g) as f64 / n as f64).cos())
                .sum::<f64>()
                / n as f64;
            worst = worst.max(-c);
        }
    }
    worst
}

/// A state on a finite-group lattice, stored as per-edge term values.
#[derive(Clone, Debug)]
pub struct FiniteState {
    pub group: FiniteGroup,
    pub space: ConfigSpace,
    values: Vec<Vec<C64>>,
}

impl FiniteState {
    pub fn new(fg: &FiniteGroup, dk: &DensityKernel) -> Result<Self> {
        let tables = (0..dk.factors.len())
            .map(|e| dk.edge_table(fg, e))
            .collect::<Result<Vec<_>>>()?;
        FiniteState::from_tables(fg, tables)
    }

    pub fn from_tables(fg: &FiniteGroup, tables: Vec<Vec<C64>>) -> Result<Self> {
        let n = fg.order();
        let mut values = Vec::with_capacity(tables.len());
        for t in &tables {
            let z: C64 = (0..n).map(|g| t[g]).sum();
            if z.norm() < 1e-300 {
                return Err(Error::Domain("factor has zero trace".into()));
            }
            let mut v = vec![C64::default(); n * n];
            for h in 0..n {
                let hi = fg.inv(h);
                for x in 0..n {
                    v[h * n + x] = t[hi * n + fg.mul(hi, x)] / z;
                }
            }
            values.push(v);
        }
        Ok(FiniteState {
            group: fg.clone(),
            space: ConfigSpace::new(n, tables.len())?,
            values,
        })
    }

    pub fn for_family(fam: &StateFamily, lattice: &OrientedLattice) -> Result<Self> {
        let fg = FiniteGroup::from_group_id(fam.group)?;
        FiniteState::new(&fg, &density_at_level(fam, lattice)?)
    }

    /// `ω(M(δ_x) λ_h)` for digit vectors.
    pub fn term_value_digits(&self, h: &[usize], x: &[usize]) -> C64 {
        let n = self.group.order();
        let mut v = C64::new(1.0, 0.0);
        for (e, vals) in self.values.iter().enumerate() {
            v *= vals[h[e] * n + x[e]];
        }
        v
    }

    pub fn term_value(&self, h: usize, x: usize) -> C64 {
        self.term_value_digits(&self.space.decode(h), &self.space.decode(x))
    }

    pub fn evaluate_sparse(&self, k: &SparseKernel) -> Result<C64> {
        if k.space != self.space {
            return Err(Error::Contract("kernel and state live on different lattices".into()));
        }
        Ok(k.terms.iter().map(|t| t.coef * self.term_value(t.h, t.x)).sum())
    }

    pub fn evaluate_kernel(&self, k: &ConvolutionKernel) -> Result<C64> {
        self.evaluate_sparse(&k.to_sparse())
    }

    pub fn evaluate_matrix(&self, a: &OperatorMatrix) -> Result<C64> {
        if a.space() != self.space {
            return Err(Error::Contract("operator and state live on different lattices".into()));
        }
        let g = &self.group;
        let mut s = C64::default();
        for r in 0..a.dim() {
            let gr = self.space.decode(r);
            for c in 0..a.dim() {
                let v = a.mat[(r, c)];
                if v != C64::default() {
                    let h = g.mul_cfg(&gr, &g.inv_cfg(&self.space.decode(c)));
                    s += v * self.term_value_digits(&h, &gr);
                }
            }
        }
        Ok(s)
    }

    /// The density matrix `T / Tr T` with `ω(a) = Tr(T a)`.
    pub fn density_matrix(&self) -> Result<OperatorMatrix> {
        let mut m = OperatorMatrix::zeros(self.space)?;
        for r in 0..m.dim() {
            for c in 0..m.dim() {
                // ω(E_{cr}) = Tr(T E_{cr}) = T[r, c].
                let g = &self.group;
                let gc = self.space.decode(c);
                let h = g.mul_cfg(&gc, &g.inv_cfg(&self.space.decode(r)));
                m.mat[(r, c)] = self.term_value_digits(&h, &gc);
            }
        }
        Ok(m)
    }
}

/// Weyl term `coef · M(χ_k) λ_θ` on `U(1)^E`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeylTerm {
    pub k: Vec<i64>,
    pub theta: Vec<f64>,
    pub coef: C64,
}

/// Term `coef · M(δ_m) λ_n` on `Z^E`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntTerm {
    pub n: Vec<i64>,
    pub m: Vec<i64>,
    pub coef: C64,
}

/// `α` on a Weyl term: `k` goes to the head and `s·k` to each rest piece, `θ` to the head.
pub fn alpha_weyl(w: &RefinementWitness, t: &WeylTerm) -> WeylTerm {
    let nf = w.fine.num_edges();
    let mut k = vec![0; nf];
    let mut theta = vec![0.0; nf];
    for (e, d) in w.decomp.iter().enumerate() {
        k[d.head] = t.k[e];
        theta[d.head] = t.theta[e];
        for &(r, s) in &d.rest {
            k[r] = s as i64 * t.k[e];
        }
    }
    WeylTerm { k, theta, coef: t.coef }
}

/// A lattice state on U(1).
#[derive(Clone, Debug)]
pub struct CircleState {
    factors: Vec<EdgeFactor>,
    kernels: Vec<Option<HeatKernel>>,
    conventions: Conventions,
}

impl CircleState {
    pub fn new(dk: &DensityKernel) -> Result<Self> {
        if !matches!(dk.group, GroupId::CircleU1(_)) {
            return Err(Error::Unsupported(format!("Weyl terms need U(1), got {}", dk.group)));
        }
        let kernels = dk
            .factors
            .iter()
            .map(|f| match f {
                EdgeFactor::Heat { beta } => kernel(dk.group, *beta, dk.conventions).map(Some),
                EdgeFactor::Table(_) => Err(Error::Unsupported("tables need a finite group".into())),
                _ => Ok(None),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CircleState {
            factors: dk.factors.clone(),
            kernels,
            conventions: dk.conventions,
        })
    }

    pub fn evaluate(&self, t: &WeylTerm) -> Result<C64> {
        if t.k.len() != self.factors.len() || t.theta.len() != self.factors.len() {
            return Err(Error::Contract("Weyl term has the wrong number of edges".into()));
        }
        let mut v = t.coef;
        for (e, f) in self.factors.iter().enumerate() {
            let (k, th) = (t.k[e], t.theta[e]);
            v *= match f {
                EdgeFactor::Heat { .. } => {
                    if k != 0 {
                        return Ok(C64::default());
                    }
                    let hk = self.kernels[e].as_ref().expect("heat kernel");
                    hk.eval(&GroupValue::Angle(th))? / hk.eval(&GroupValue::Angle(0.0))?
                }
                EdgeFactor::Vacuum => {
                    if k != 0 {
                        return Ok(C64::default());
                    }
                    1.0
                }
                EdgeFactor::Dual { beta } => {
                    if th != 0.0 {
                        return Err(Error::Unsupported(
                            "the dual state on U(1) is only defined on multiplication operators".into(),
                        ));
                    }
                    (-0.5 * beta * self.conventions.scale * (k * k) as f64).exp()
                }
                EdgeFactor::Table(_) => unreachable!(),
            };
        }
        Ok(v)
    }
}

/// The dual heat-kernel state on Z: `ω(M(δ_m) λ_n) = Π δ_{n,0} ρ^{(Z)}_{β_e}(m_e)`.
#[derive(Clone, Debug)]
pub struct IntegerState {
    pub betas: Vec<f64>,
}

impl IntegerState {
    pub fn new(dk: &DensityKernel) -> Result<Self> {
        let betas = dk
            .factors
            .iter()
            .map(|f| match f {
                EdgeFactor::Dual { beta } => Ok(*beta),
                _ => Err(Error::Unsupported(
                    "only the dual heat-kernel state is defined on Z".into(),
                )),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(IntegerState { betas })
    }

    pub fn evaluate(&self, t: &IntTerm) -> Result<C64> {
        if t.n.len() != self.betas.len() || t.m.len() != self.betas.len() {
            return Err(Error::Contract("term has the wrong number of edges".into()));
        }
        if t.n.iter().any(|&n| n != 0) {
            return Ok(C64::default());
        }
        let mut v = t.coef;
        for (b, &m) in self.betas.iter().zip(&t.m) {
            v *= dual_heat_kernel_z(*b, m)?;
        }
        Ok(v)
    }
}

/// A lattice state on whichever backend the family's group selects.
#[derive(Clone, Debug)]
pub enum LatticeState {
    Finite(FiniteState),
    Circle(CircleState),
    Integers(IntegerState),
}

impl LatticeState {
    pub fn new(fam: &StateFamily, lattice: &OrientedLattice) -> Result<Self> {
        let dk = density_at_level(fam, lattice)?;
        match fam.group {
            GroupId::CyclicZn(_) => Ok(LatticeState::Finite(FiniteState::new(
                &FiniteGroup::from_group_id(fam.group)?,
                &dk,
            )?)),
            GroupId::CircleU1(_) => Ok(LatticeState::Circle(CircleState::new(&dk)?)),
            GroupId::IntegersZ(_) => Ok(LatticeState::Integers(IntegerState::new(&dk)?)),
            g => Err(Error::Unsupported(format!("no operator-level states on {g}"))),
        }
    }

    pub fn evaluate_matrix(&self, a: &OperatorMatrix) -> Result<C64> {
        match self {
            LatticeState::Finite(s) => s.evaluate_matrix(a),
            _ => Err(Error::Unsupported("dense operators need a finite group".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoherenceReport {
    pub family: String,
    pub residual: f64,
    /// Worst violation of the two marginal integral identities, when applicable.
    pub integral_residual: Option<f64>,
    pub spanning_set: String,
    pub seed: u64,
}

fn witness(coarse: &OrientedLattice, fine: &OrientedLattice) -> Result<RefinementWitness> {
    is_refinement(coarse, fine).ok_or_else(|| {
        Error::Contract(format!(
            "{} is not refined by {}",
            coarse.describe(),
            fine.describe()
        ))
    })
}

/// `max |ω_fine(α(a)) − ω_coarse(a)|` over a spanning set.
pub fn coherence_residual(
    fam: &StateFamily,
    coarse: &OrientedLattice,
    fine: &OrientedLattice,
) -> Result<CoherenceReport> {
    let w = witness(coarse, fine)?;
    let (residual, spanning) = match fam.group {
        GroupId::CyclicZn(_) => {
            let fg = FiniteGroup::from_group_id(fam.group)?;
            let sc = FiniteState::new(&fg, &density_at_level(fam, coarse)?)?;
            let sf = FiniteState::new(&fg, &density_at_level(fam, fine)?)?;
            finite_coherence(&fg, &w, &sc, &sf, DEFAULT_SEED)?
        }
        GroupId::CircleU1(k) => circle_coherence(fam, &w, k as i64, DEFAULT_SEED)?,
        GroupId::IntegersZ(_) => integer_coherence(fam, &w)?,
        g => return Err(Error::Unsupported(format!("coherence checks are not available on {g}"))),
    };
    Ok(CoherenceReport {
        family: fam.name().to_string(),
        residual,
        integral_residual: integral_identity_residual(fam, &w)?,
        spanning_set: spanning,
        seed: DEFAULT_SEED,
    })
}

/// Coherence between two explicit finite-group lattice states.
pub fn finite_coherence(
    fg: &FiniteGroup,
    w: &RefinementWitness,
    coarse: &FiniteState,
    fine: &FiniteState,
    seed: u64,
) -> Result<(f64, String)> {
    finite_coherence_with_limit(fg, w, coarse, fine, seed, FULL_SPANNING_DIM)
}

fn finite_coherence_with_limit(
    fg: &FiniteGroup,
    w: &RefinementWitness,
    coarse: &FiniteState,
    fine: &FiniteState,
    seed: u64,
    full_limit: usize,
) -> Result<(f64, String)> {
    let r = Refinement::new(fg, w, RestCoordinates::Raw)?;
    let cs = r.coarse_space();
    let fs = r.fine_space();
    let heads: Vec<usize> = w.decomp.iter().map(|d| d.head).collect();
    let fine_digits: Vec<Vec<usize>> = (0..fs.dim()).map(|y| fs.decode(y)).collect();
    let fibers = r.fibers();
    // ω_fine(α(M(δ_x) λ_h)) for a coarse momentum h and every coarse x.
    let lifted = |h: usize| -> Vec<C64> {
        let hc = cs.decode(h);
        let mut hf = vec![0; fs.edges];
        for (e, &hd) in heads.iter().enumerate() {
            hf[hd] = hc[e];
        }
        fibers
            .iter()
            .map(|fib| fib.iter().map(|&y| fine.term_value_digits(&hf, &fine_digits[y])).sum())
            .collect()
    };
    if cs.dim() <= full_limit {
        let mut worst: f64 = 0.0;
        for h in 0..cs.dim() {
            let l = lifted(h);
            for (x, v) in l.iter().enumerate() {
                worst = worst.max((v - coarse.term_value(h, x)).norm());
            }
        }
        return Ok((worst, format!("all {} matrix units", cs.dim() * cs.dim())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut cache: BTreeMap<usize, Vec<C64>> = BTreeMap::new();
    for _ in 0..RANDOM_SPANNING_KERNELS {
        let mut diff = C64::default();
        for _ in 0..8 {
            let h = rng.random_range(0..cs.dim());
            let x = rng.random_range(0..cs.dim());
            let c = C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            let l = cache.entry(h).or_insert_with(|| lifted(h));
            diff += c * (l[x] - coarse.term_value(h, x));
        }
        worst = worst.max(diff.norm());
    }
    Ok((
        worst,
        format!("{RANDOM_SPANNING_KERNELS} random 8-term Gaussian kernels"),
    ))
}

fn circle_coherence(fam: &StateFamily, w: &RefinementWitness, kmax: i64, seed: u64) -> Result<(f64, String)> {
    let sc = CircleState::new(&density_at_level(fam, &w.coarse)?)?;
    let sf = CircleState::new(&density_at_level(fam, &w.fine)?)?;
    let dual = matches!(fam.kind, FamilyKind::DualHeatKernel { .. });
    let ne = w.coarse.num_edges();
    let angles: &[f64] = if dual { &[0.0] } else { &[0.0, 0.7, -2.1, 3.0] };
    let mut terms = Vec::new();
    for e in 0..ne {
        for k in -kmax..=kmax {
            for &th in angles {
                let mut t = WeylTerm {
                    k: vec![0; ne],
                    theta: vec![0.0; ne],
                    coef: C64::new(1.0, 0.0),
                };
                t.k[e] = k;
                t.theta[e] = th;
                terms.push(t);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..200 {
        terms.push(WeylTerm {
            k: (0..ne)
                .map(|_| if rng.random_bool(0.5) { 0 } else { rng.random_range(-kmax..=kmax) })
                .collect(),
            theta: (0..ne)
                .map(|_| if dual { 0.0 } else { rng.random_range(-3.0..3.0) })
                .collect(),
            coef: C64::new(1.0, 0.0),
        });
    }
    let mut worst: f64 = 0.0;
    for t in &terms {
        worst = worst.max((sf.evaluate(&alpha_weyl(w, t))? - sc.evaluate(t)?).norm());
    }
    Ok((
        worst,
        format!("{} Weyl terms (single-edge |k| <= {kmax} plus 200 random)", terms.len()),
    ))
}

/// Distribution of `m_head + Σ s m_rest` under the fine product measure, on `[-w, w]`.
fn composite_distribution(betas: &[(f64, i8)], w: i64) -> Result<Vec<f64>> {
    let size = (2 * w + 1) as usize;
    let idx = |m: i64| (m + w) as usize;
    let mut dist = vec![0.0; size];
    for m in -w..=w {
        dist[idx(m)] = dual_heat_kernel_z(betas[0].0, m)?;
    }
    for &(b, s) in &betas[1..] {
        let r: Vec<f64> = (-w..=w).map(|m| dual_heat_kernel_z(b, m)).collect::<Result<_>>()?;
        let mut next = vec![0.0; size];
        for m in -w..=w {
            let mut acc = 0.0;
            for k in -w..=w {
                let prev = m - s as i64 * k;
                if (-w..=w).contains(&prev) {
                    acc += dist[idx(prev)] * r[idx(k)];
                }
            }
            next[idx(m)] = acc;
        }
        dist = next;
    }
    Ok(dist)
}

fn integer_coherence(fam: &StateFamily, w: &RefinementWitness) -> Result<(f64, String)> {
    let sc = IntegerState::new(&density_at_level(fam, &w.coarse)?)?;
    let sf = IntegerState::new(&density_at_level(fam, &w.fine)?)?;
    let total: f64 = sf.betas.iter().sum();
    let window = 64 + (8.0 * total.sqrt() + 4.0 * total) as i64;
    let mut worst: f64 = 0.0;
    for (e, d) in w.decomp.iter().enumerate() {
        let mut pieces = vec![(sf.betas[d.head], 1i8)];
        pieces.extend(d.rest.iter().map(|&(r, s)| (sf.betas[r], s)));
        let dist = composite_distribution(&pieces, window)?;
        for m in -8i64..=8 {
            let v = dist[(m + window) as usize];
            worst = worst.max((v - dual_heat_kernel_z(sc.betas[e], m)?).abs());
        }
    }
    Ok((
        worst,
        "single-edge terms M(delta_m), |m| <= 8, momenta 0 and 1".to_string(),
    ))
}

/// Normalised per-edge density `φ(h, g)` with unit Haar mass of `φ(1, ·)`.
fn phi(group: GroupId, conv: Conventions, f: &EdgeFactor) -> Result<Box<dyn Fn(&GroupValue, &GroupValue) -> f64>> {
    let id = group.identity();
    Ok(match f {
        EdgeFactor::Heat { beta } => {
            let hk = kernel(group, *beta, conv)?;
            let z = hk.eval(&id)?;
            Box::new(move |h, _| hk.eval(h).unwrap_or(f64::NAN) / z)
        }
        EdgeFactor::Dual { beta } => {
            let hk = kernel(group, *beta, conv)?;
            Box::new(move |h, g| {
                if group.distance(h, &id).unwrap_or(1.0) < 1e-14 {
                    hk.eval(g).unwrap_or(f64::NAN)
                } else {
                    0.0
                }
            })
        }
        EdgeFactor::Vacuum => Box::new(|_, _| 1.0),
        EdgeFactor::Table(_) => return Err(Error::Unsupported("tables are not normalised densities".into())),
    })
}

/// Worst violation of the two marginal identities over every coarse edge:
/// `∫ φ_head(h, g g₁^{-s}) φ_rest(1, g₁) dg₁ = φ_parent(h, g)` and
/// `∫ φ_rest(1, g₁) dg₁ = 1`, folded over the pieces of the decomposition.
pub fn integral_identity_residual(fam: &StateFamily, w: &RefinementWitness) -> Result<Option<f64>> {
    let group = fam.group;
    if !matches!(group, GroupId::CyclicZn(_) | GroupId::CircleU1(_)) {
        return Ok(None);
    }
    let dc = density_at_level(fam, &w.coarse)?;
    let df = density_at_level(fam, &w.fine)?;
    let conv = fam.conventions;
    let points: Vec<GroupValue> = match group {
        GroupId::CyclicZn(_) => group.elements()?,
        _ => (0..16)
            .map(|i| GroupValue::Angle(-3.0 + 6.0 * i as f64 / 15.0))
            .collect(),
    };
    let mut worst: f64 = 0.0;
    for (e, d) in w.decomp.iter().enumerate() {
        let parent = phi(group, conv, &dc.factors[e])?;
        for &(r, _) in &d.rest {
            let pr = phi(group, conv, &df.factors[r])?;
            let mass = crate::group_core::haar_integrate(group, &|g| C64::new(pr(&group.identity(), g), 0.0))?;
            worst = worst.max((mass.re - 1.0).abs());
        }
        // Fold the composition identity over the pieces. Heat and vacuum
        // factors do not depend on g, dual factors are heat kernels in g.
        match (&dc.factors[e], &df.factors[d.head]) {
            (EdgeFactor::Dual { beta: parent_beta }, EdgeFactor::Dual { beta: head_beta }) => {
                let mut acc = *head_beta;
                for &(r, _) in &d.rest {
                    let EdgeFactor::Dual { beta } = df.factors[r] else {
                        return Err(Error::Contract("mixed factor kinds".into()));
                    };
                    worst = worst.max(convolution_check(group, acc, beta, conv)?);
                    acc += beta;
                }
                let a = kernel(group, acc, conv)?;
                let b = kernel(group, *parent_beta, conv)?;
                for g in &points {
                    worst = worst.max((a.eval(g)? - b.eval(g)?).abs());
                }
            }
            _ => {
                let head = phi(group, conv, &df.factors[d.head])?;
                for h in &points {
                    for g in &points {
                        worst = worst.max((head(h, g) - parent(h, g)).abs());
                    }
                }
            }
        }
    }
    Ok(Some(worst))
}

/// `max |F(α_{g⁻¹}(h)⁻¹, g⁻¹) − F(h, g)|` for a single-edge factor table.
pub fn inversion_residual(fg: &FiniteGroup, table: &[C64]) -> f64 {
    let n = fg.order();
    let mut worst: f64 = 0.0;
    for h in 0..n {
        for g in 0..n {
            let gi = fg.inv(g);
            let hh = fg.inv(fg.conj(gi, h));
            worst = worst.max((table[hh * n + gi] - table[h * n + g]).norm());
        }
    }
    worst
}

pub fn family_inversion_residual(fam: &StateFamily, lattice: &OrientedLattice, edge: usize) -> Result<f64> {
    let fg = FiniteGroup::from_group_id(fam.group)?;
    let dk = density_at_level(fam, lattice)?;
    Ok(inversion_residual(&fg, &dk.edge_table(&fg, edge)?))
}

/// `max |ω(Ad_{U_τ(g)} a) − ω(a)|` over random gauge tuples and a spanning set.
pub fn gauge_invariance_residual(
    state: &FiniteState,
    lattice: &OrientedLattice,
    periodic: bool,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    let fg = &state.group;
    let space = state.space;
    if space.edges != lattice.num_edges() {
        return Err(Error::Contract("state and lattice disagree".into()));
    }
    let ends = edge_endpoints(lattice, periodic);
    let nv = num_vertices(lattice, periodic);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(usize, usize)> = if space.dim() <= FULL_SPANNING_DIM {
        (0..space.dim())
            .flat_map(|h| (0..space.dim()).map(move |x| (h, x)))
            .collect()
    } else {
        (0..4096)
            .map(|_| (rng.random_range(0..space.dim()), rng.random_range(0..space.dim())))
            .collect()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..n_samples {
        let g: Vec<usize> = (0..nv).map(|_| rng.random_range(0..fg.order())).collect();
        for &(h, x) in &pairs {
            let hc = space.decode(h);
            let xc = space.decode(x);
            let h2: Vec<usize> = hc.iter().zip(&ends).map(|(&he, &(p, _))| fg.conj(g[p], he)).collect();
            let x2 = gauge_map(fg, &ends, &g, &xc);
            let d = state.term_value_digits(&h2, &x2) - state.term_value_digits(&hc, &xc);
            worst = worst.max(d.norm());
        }
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualGaugeReport {
    /// Phases on momenta; the state must be invariant.
    pub u1_type: f64,
    /// Shifts of configurations; the state is not invariant.
    pub z_type: f64,
}

/// Gauge checks of the dual heat-kernel state on Z over the partition of `tree`.
pub fn dual_gauge_check(beta: f64, tree: &DyadicTree, length: f64, seed: u64) -> Result<DualGaugeReport> {
    let betas: Vec<f64> = tree
        .intervals()
        .iter()
        .map(|(lo, hi)| beta * length * (hi.to_f64() - lo.to_f64()))
        .collect();
    let state = IntegerState { betas };
    let ne = state.betas.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut terms = Vec::new();
    for e in 0..ne {
        for m in -2..=2 {
            let mut t = IntTerm {
                n: vec![0; ne],
                m: vec![0; ne],
                coef: C64::new(1.0, 0.0),
            };
            t.m[e] = m;
            terms.push(t);
        }
    }
    for _ in 0..200 {
        terms.push(IntTerm {
            n: (0..ne).map(|_| if rng.random_bool(0.5) { 0 } else { rng.random_range(-2..=2) }).collect(),
            m: (0..ne).map(|_| rng.random_range(-2..=2)).collect(),
            coef: C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)),
        });
    }
    let mut u1: f64 = 0.0;
    let mut zt: f64 = 0.0;
    for _ in 0..20 {
        let phases: Vec<f64> = (0..=ne).map(|_| rng.random_range(-3.0..3.0)).collect();
        let shifts: Vec<i64> = (0..=ne).map(|_| rng.random_range(-2..=2)).collect();
        for t in &terms {
            let base = state.evaluate(t)?;
            // (g_{σ_{i-1}}⁻¹ g_{σ_n})^{n_i}
            let ph: f64 = (0..ne)
                .map(|i| (phases[ne] - phases[i]) * t.n[i] as f64)
                .sum();
            let mut tu = t.clone();
            tu.coef *= C64::from_polar(1.0, ph);
            u1 = u1.max((state.evaluate(&tu)? - base).norm());
            // F(n, m) ↦ F(n, m - k_{i-1} + k_i): the term at m moves to m + k_{i-1} - k_i.
            let mut tz = t.clone();
            for i in 0..ne {
                tz.m[i] = t.m[i] + shifts[i] - shifts[i + 1];
            }
            zt = zt.max((state.evaluate(&tz)? - base).norm());
        }
    }
    Ok(DualGaugeReport {
        u1_type: u1,
        z_type: zt,
    })
}
