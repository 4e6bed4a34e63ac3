//! Holonomies, gauge-invariant functions, two-point functions and closed-form
//! covariances.
//!
//! Edge values sit on the intervals of a dyadic partition of `[0, 1]`, read
//! left to right. The holonomy at a partition point `σ_m` is the ordered
//! product `g_{σ_1} g_{σ_2} ⋯ g_{σ_m}`, so the inverse map sends a based path
//! `h` to `(h_{σ_1}, h_{σ_1}⁻¹h_{σ_2}, …)`.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dyadic::{Dyadic, DyadicTree, OrientedLattice, Orientation};
use crate::error::{Error, Result};
use crate::field_algebra::{
    edge_endpoints, gauge_map, num_vertices, ConfigSpace, FiniteGroup, OperatorMatrix,
};
use crate::group_core::{
    fusion_multiplicity, haar_integrate_class, irreps, wrap_angle, Conventions, GroupId,
    GroupValue, IrrepLabel, IrrepTable, Quadrature, C64,
};
use crate::heat_kernel::{heat_kernel_trace, HeatKernel, HeatKernelSpec};
use crate::states::{FiniteState, StateFamily};

/// Largest number of (configuration, momentum) pairs checked exhaustively.
pub const EXHAUSTIVE_PAIRS: usize = 1 << 20;
/// Relative tail allowed before a two-point series is rejected.
pub const SERIES_TAIL_TOL: f64 = 1e-12;

/// Edge values on the intervals of `tree`, left to right.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeConfig {
    pub tree: DyadicTree,
    pub values: Vec<GroupValue>,
}

/// Based path: `values[j]` is `h_{σ_{j+1}}`; `h_0 = 1` is implicit.
#[derive(Clone, Debug, PartialEq)]
pub struct PathConfig {
    pub tree: DyadicTree,
    pub values: Vec<GroupValue>,
}

fn check_len(tree: &DyadicTree, n: usize) -> Result<()> {
    if tree.leaves() != n {
        return Err(Error::Contract(format!(
            "tree has {} intervals but {n} values were given",
            tree.leaves()
        )));
    }
    Ok(())
}

impl EdgeConfig {
    pub fn new(tree: DyadicTree, values: Vec<GroupValue>) -> Result<Self> {
        check_len(&tree, values.len())?;
        Ok(EdgeConfig { tree, values })
    }

    pub fn identity(group: GroupId, tree: DyadicTree) -> Self {
        let values = vec![group.identity(); tree.leaves()];
        EdgeConfig { tree, values }
    }

    pub fn random<R: Rng + ?Sized>(group: GroupId, tree: DyadicTree, rng: &mut R) -> Result<Self> {
        let values = (0..tree.leaves())
            .map(|_| group.random_element(rng))
            .collect::<Result<_>>()?;
        Ok(EdgeConfig { tree, values })
    }
}

impl PathConfig {
    pub fn new(tree: DyadicTree, values: Vec<GroupValue>) -> Result<Self> {
        check_len(&tree, values.len())?;
        Ok(PathConfig { tree, values })
    }
}

fn point_index(tree: &DyadicTree, tau: Dyadic) -> Result<usize> {
    tree.partition()
        .iter()
        .position(|&p| p == tau)
        .ok_or_else(|| {
            Error::Contract(format!("{tau} is not a partition point of {tree}; refine first"))
        })
}

/// `hol(g)_τ` for a partition point `τ`; `τ = 0` gives the identity.
pub fn holonomy(group: GroupId, cfg: &EdgeConfig, tau: Dyadic) -> Result<GroupValue> {
    let m = point_index(&cfg.tree, tau)?;
    let mut h = group.identity();
    for g in &cfg.values[..m] {
        h = group.multiply(&h, g)?;
    }
    Ok(h)
}

/// The holonomy at every nonzero partition point.
pub fn holonomy_path(group: GroupId, cfg: &EdgeConfig) -> Result<PathConfig> {
    let mut h = group.identity();
    let mut values = Vec::with_capacity(cfg.values.len());
    for g in &cfg.values {
        h = group.multiply(&h, g)?;
        values.push(h);
    }
    Ok(PathConfig {
        tree: cfg.tree.clone(),
        values,
    })
}

pub fn holonomy_inverse(group: GroupId, path: &PathConfig) -> Result<EdgeConfig> {
    let mut prev = group.identity();
    let mut values = Vec::with_capacity(path.values.len());
    for h in &path.values {
        values.push(group.multiply(&group.invert(&prev)?, h)?);
        prev = *h;
    }
    Ok(EdgeConfig {
        tree: path.tree.clone(),
        values,
    })
}

/// Projects a configuration on a finer tree to `coarse` by composing sub-edges.
pub fn coarsen(group: GroupId, fine: &EdgeConfig, coarse: &DyadicTree) -> Result<EdgeConfig> {
    let subs = fine.tree.subtrees_below(coarse)?;
    let mut at = 0;
    let mut values = Vec::with_capacity(subs.len());
    for s in &subs {
        let mut h = group.identity();
        for g in &fine.values[at..at + s.leaves()] {
            h = group.multiply(&h, g)?;
        }
        at += s.leaves();
        values.push(h);
    }
    Ok(EdgeConfig {
        tree: coarse.clone(),
        values,
    })
}

/// A random configuration on `fine` whose projection to the tree of `coarse` is `coarse`.
pub fn random_lift<R: Rng + ?Sized>(
    group: GroupId,
    coarse: &EdgeConfig,
    fine: &DyadicTree,
    rng: &mut R,
) -> Result<EdgeConfig> {
    let subs = fine.subtrees_below(&coarse.tree)?;
    let mut values = Vec::with_capacity(fine.leaves());
    for (s, target) in subs.iter().zip(&coarse.values) {
        let mut h = group.identity();
        for _ in 1..s.leaves() {
            let g = group.random_element(rng)?;
            h = group.multiply(&h, &g)?;
            values.push(g);
        }
        values.push(group.multiply(&group.invert(&h)?, target)?);
    }
    Ok(EdgeConfig {
        tree: fine.clone(),
        values,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualityReport {
    pub residual: f64,
    pub checked: usize,
    pub exhaustive: bool,
}

fn all_configs(group: GroupId, n: usize) -> Result<Vec<Vec<GroupValue>>> {
    let els = group.elements()?;
    let space = ConfigSpace::new(els.len(), n)?;
    Ok((0..space.dim())
        .map(|u| space.decode(u).into_iter().map(|i| els[i]).collect())
        .collect())
}

/// Checks `hol(L_g ḡ) = hol(g)·hol(ḡ)` pointwise on the complete tree of `level`.
pub fn duality_check(group: GroupId, level: u32, samples: usize, seed: u64) -> Result<DualityReport> {
    if !group.is_finite() {
        return Err(Error::Unsupported(format!(
            "duality check needs a finite backend, got {group}"
        )));
    }
    if !group.is_abelian() {
        return Err(Error::Unsupported(
            "left multiplication by hol(g) only intertwines for abelian groups".into(),
        ));
    }
    let tree = DyadicTree::complete(level);
    let n = tree.leaves();
    let order = group.order().unwrap_or(0);
    let pairs = (order as f64).powi(2 * n as i32);
    let check = |gbar: &[GroupValue], mom: &[GroupValue]| -> Result<f64> {
        let moved: Vec<GroupValue> = mom
            .iter()
            .zip(gbar)
            .map(|(a, b)| group.multiply(a, b))
            .collect::<Result<_>>()?;
        let lhs = holonomy_path(group, &EdgeConfig::new(tree.clone(), moved)?)?;
        let hg = holonomy_path(group, &EdgeConfig::new(tree.clone(), mom.to_vec())?)?;
        let hb = holonomy_path(group, &EdgeConfig::new(tree.clone(), gbar.to_vec())?)?;
        let mut worst: f64 = 0.0;
        for j in 0..n {
            let rhs = group.multiply(&hg.values[j], &hb.values[j])?;
            worst = worst.max(group.distance(&lhs.values[j], &rhs)?);
        }
        Ok(worst)
    };
    let mut residual: f64 = 0.0;
    if pairs <= EXHAUSTIVE_PAIRS as f64 {
        let cfgs = all_configs(group, n)?;
        for gbar in &cfgs {
            for mom in &cfgs {
                residual = residual.max(check(gbar, mom)?);
            }
        }
        return Ok(DualityReport {
            residual,
            checked: cfgs.len() * cfgs.len(),
            exhaustive: true,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let gbar = EdgeConfig::random(group, tree.clone(), &mut rng)?;
        let mom = EdgeConfig::random(group, tree.clone(), &mut rng)?;
        residual = residual.max(check(&gbar.values, &mom.values)?);
    }
    Ok(DualityReport {
        residual,
        checked: samples,
        exhaustive: false,
    })
}

/// Holonomy once around a periodic lattice; right-oriented edges enter inverted.
pub fn loop_holonomy(fg: &FiniteGroup, lattice: &OrientedLattice, cfg: &[usize]) -> usize {
    lattice.edges.iter().zip(cfg).fold(0, |h, (e, &c)| {
        let c = match e.orient {
            Orientation::Left => c,
            Orientation::Right => fg.inv(c),
        };
        fg.mul(h, c)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InvariantReport {
    /// Invariant under gauge tuples equal to 1 at the base point.
    pub loop_invariant: bool,
    pub factors_through_holonomy: bool,
    pub fully_invariant: bool,
    pub class_function: bool,
}

/// Tests a function of a periodic-lattice configuration for based and full gauge invariance.
pub fn invariant_function_check(
    fg: &FiniteGroup,
    lattice: &OrientedLattice,
    f: &dyn Fn(&[usize]) -> C64,
) -> Result<InvariantReport> {
    const TOL: f64 = 1e-12;
    let space = ConfigSpace::new(fg.order(), lattice.num_edges())?;
    let ends = edge_endpoints(lattice, true);
    let nv = num_vertices(lattice, true);
    let vals: Vec<C64> = (0..space.dim()).map(|u| f(&space.decode(u))).collect();

    // Single-vertex tuples generate the gauge group.
    let invariant_at = |v: usize| {
        (0..fg.order()).all(|k| {
            let mut g = vec![0; nv];
            g[v] = k;
            (0..space.dim()).all(|u| {
                let moved = space.encode(&gauge_map(fg, &ends, &g, &space.decode(u)));
                (vals[moved] - vals[u]).norm() < TOL
            })
        })
    };
    let based = (1..nv).all(invariant_at);
    let full = based && invariant_at(0);

    let mut fiber: HashMap<usize, C64> = HashMap::new();
    let mut factors = true;
    for u in 0..space.dim() {
        let h = loop_holonomy(fg, lattice, &space.decode(u));
        match fiber.get(&h) {
            Some(v) if (v - vals[u]).norm() >= TOL => factors = false,
            Some(_) => {}
            None => {
                fiber.insert(h, vals[u]);
            }
        }
    }
    let class = factors
        && fiber.iter().all(|(&h, v)| {
            (0..fg.order()).all(|k| {
                fiber
                    .get(&fg.conj(k, h))
                    .is_some_and(|w| (w - v).norm() < TOL)
            })
        });
    Ok(InvariantReport {
        loop_invariant: based,
        factors_through_holonomy: factors,
        fully_invariant: full,
        class_function: class,
    })
}

/// Wilson loop `χ_k ∘ hol` on `Z_n`.
pub fn wilson_loop_zn(n: usize, k: usize, lattice: &OrientedLattice) -> impl Fn(&[usize]) -> C64 + '_ {
    let fg = FiniteGroup::cyclic(n);
    move |c: &[usize]| {
        let h = loop_holonomy(&fg, lattice, c);
        C64::from_polar(1.0, 2.0 * PI * ((k * h) % n) as f64 / n as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoPointSpec {
    pub group: GroupId,
    pub conventions: Conventions,
    pub beta0: f64,
    /// `None` is the thermodynamic limit.
    pub length: Option<f64>,
    pub irrep: IrrepLabel,
    pub irrep2: IrrepLabel,
    pub tau: f64,
    pub tau2: f64,
}

impl TwoPointSpec {
    pub fn new(group: GroupId, beta0: f64, length: Option<f64>, irrep: IrrepLabel, tau: f64, tau2: f64) -> Self {
        TwoPointSpec {
            group,
            conventions: Conventions::default(),
            beta0,
            length,
            irrep,
            irrep2: irrep,
            tau,
            tau2,
        }
    }

    pub fn with_conventions(mut self, conventions: Conventions) -> Self {
        self.conventions = conventions;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta0 > 0.0 && self.beta0.is_finite()) {
            return Err(Error::Domain(format!("beta0 must be positive, got {}", self.beta0)));
        }
        if !(self.tau >= 0.0 && self.tau <= self.tau2) {
            return Err(Error::Domain(format!(
                "need 0 <= tau <= tau2, got {} and {}",
                self.tau, self.tau2
            )));
        }
        if let Some(l) = self.length {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Domain(format!("length must be positive, got {l}")));
            }
            if self.tau2 > l {
                return Err(Error::Domain(format!("tau2 = {} exceeds L = {l}", self.tau2)));
            }
        }
        match self.group {
            GroupId::CyclicZn(_) | GroupId::CircleU1(_) | GroupId::Su2(_) => Ok(()),
            g => Err(Error::Unsupported(format!("two-point functions need a compact group, got {g}"))),
        }
    }

    pub fn separation(&self) -> f64 {
        self.tau2 - self.tau
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoPointValue {
    pub series: f64,
    /// Independent evaluation: a transfer trace for abelian groups, quadrature for SU(2).
    pub oracle: f64,
    pub partition: f64,
    pub est_error: f64,
}

fn table_for(spec: &TwoPointSpec) -> Result<(IrrepTable, usize)> {
    let tbl = irreps(spec.group, spec.conventions)?;
    let p = tbl.index_of(spec.irrep).ok_or_else(|| {
        Error::Contract(format!("irrep {} not in table for {}", spec.irrep, spec.group))
    })?;
    Ok((tbl, p))
}

fn su2_fusion(p: u32, a: u32, b: u32) -> u32 {
    u32::from(a.abs_diff(b) <= p && p <= a + b && (a + b - p) % 2 == 0)
}

/// `Σ_{π̃,π̃′} (d_{π̃} d_{π̃′}/d_π) N^π_{π̃π̃′} e^{-β₀c_{π̃}s/2} e^{-β₀c_{π̃′}(L-s)/2}`, unnormalised.
fn fusion_series(tbl: &IrrepTable, p: usize, beta0: f64, s: f64, l: f64) -> Result<f64> {
    let ip = tbl.entries[p];
    let mut sum = 0.0;
    for (a, ia) in tbl.entries.iter().enumerate() {
        let wa = (-0.5 * beta0 * ia.casimir * s).exp();
        for (b, ib) in tbl.entries.iter().enumerate() {
            let mult = match (ip.label, ia.label, ib.label) {
                (IrrepLabel::Su2 { two_j }, IrrepLabel::Su2 { two_j: x }, IrrepLabel::Su2 { two_j: y }) => {
                    su2_fusion(two_j, x, y)
                }
                _ => fusion_multiplicity(tbl, p, a, b)?,
            };
            if mult == 0 {
                continue;
            }
            let wb = (-0.5 * beta0 * ib.casimir * (l - s)).exp();
            sum += (ia.dim * ib.dim) as f64 / ip.dim as f64 * mult as f64 * wa * wb;
        }
    }
    Ok(sum)
}

fn tail_estimate(spec: &TwoPointSpec, l: f64) -> f64 {
    let b = spec.beta0 * spec.conventions.scale;
    match (spec.group, spec.irrep) {
        (GroupId::CircleU1(k), IrrepLabel::U1(m)) => {
            let r = (k as f64 + 1.0 - m.unsigned_abs() as f64).max(0.0);
            4.0 * (-0.5 * b * r * r * l).exp()
        }
        (GroupId::Su2(tj), IrrepLabel::Su2 { two_j }) => {
            let j = (tj as f64 + 1.0 - two_j as f64).max(0.0) / 2.0;
            let d = tj as f64 + 2.0;
            4.0 * d.powi(3) * (-0.5 * b * j * (j + 1.0) * l).exp()
        }
        _ => 0.0,
    }
}

/// Abelian transfer trace `Tr(D(L-τ′) M_{π} D(τ′-τ) M_{π*} D(τ)) / Tr D(L)` on truncated Fourier modes.
fn transfer_trace(tbl: &IrrepTable, p: usize, beta0: f64, tau: f64, tau2: f64, l: f64) -> Result<(f64, f64)> {
    let dim = tbl.entries.len();
    let diag = |t: f64| {
        DMatrix::from_fn(dim, dim, |i, j| {
            if i == j {
                (-0.5 * beta0 * tbl.entries[i].casimir * t).exp()
            } else {
                0.0
            }
        })
    };
    let shift = |k: i64| -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(dim, dim);
        for (i, e) in tbl.entries.iter().enumerate() {
            let target = match e.label {
                IrrepLabel::Zn { k: a, n } => {
                    Some(IrrepLabel::Zn { k: (a as i64 + k).rem_euclid(n as i64) as u32, n })
                }
                IrrepLabel::U1(a) => Some(IrrepLabel::U1(a + k)),
                _ => return Err(Error::Unsupported("transfer trace is abelian only".into())),
            };
            if let Some(j) = target.and_then(|t| tbl.index_of(t)) {
                m[(j, i)] = 1.0;
            }
        }
        Ok(m)
    };
    let k = match tbl.entries[p].label {
        IrrepLabel::Zn { k, .. } => k as i64,
        IrrepLabel::U1(m) => m,
        _ => return Err(Error::Unsupported("transfer trace is abelian only".into())),
    };
    let op = diag(l - tau2) * shift(k)? * diag(tau2 - tau) * shift(-k)? * diag(tau);
    Ok((op.trace(), diag(l).trace()))
}

/// `Z⁻¹ ∫ ρ_s(Y) ρ_{L-s}(Y⁻¹) χ_π(Y)/d_π dY` by class-function quadrature.
fn su2_quadrature(spec: &TwoPointSpec, tbl: &IrrepTable, p: usize, l: f64) -> Result<f64> {
    let s = spec.separation();
    let beta = |t: f64| spec.beta0 * t;
    let ip = tbl.entries[p];
    let z = heat_kernel_trace(spec.group, beta(l), spec.conventions)?;
    if s == 0.0 || s == l {
        let hk = HeatKernel::new(HeatKernelSpec::new(spec.group, beta(l)).with_conventions(spec.conventions))?;
        let v = haar_integrate_class(spec.group, &Quadrature::for_group(spec.group).doubled(), &|g| {
            C64::new(hk.eval(g).unwrap_or(0.0), 0.0) * ip.character(g).unwrap_or_default()
        })?;
        return Ok(v.re / ip.dim as f64 / z);
    }
    let k1 = HeatKernel::new(HeatKernelSpec::new(spec.group, beta(s)).with_conventions(spec.conventions))?;
    let k2 = HeatKernel::new(HeatKernelSpec::new(spec.group, beta(l - s)).with_conventions(spec.conventions))?;
    let v = haar_integrate_class(spec.group, &Quadrature::for_group(spec.group).doubled(), &|g| {
        let w = k1.eval(g).unwrap_or(0.0) * k2.eval(g).unwrap_or(0.0);
        C64::new(w, 0.0) * ip.character(g).unwrap_or_default()
    })?;
    Ok(v.re / ip.dim as f64 / z)
}

/// Two-point function of character insertions at `τ` and `τ′` in the dual heat-kernel state.
pub fn two_point(spec: &TwoPointSpec) -> Result<TwoPointValue> {
    spec.validate()?;
    let (tbl, p) = table_for(spec)?;
    let s = spec.separation();
    if spec.irrep != spec.irrep2 {
        // Mismatched insertions integrate to zero by Schur orthogonality.
        return Ok(TwoPointValue {
            series: 0.0,
            oracle: 0.0,
            partition: spec.length.map_or(Ok(1.0), |l| {
                heat_kernel_trace(spec.group, spec.beta0 * l, spec.conventions)
            })?,
            est_error: 0.0,
        });
    }
    let Some(l) = spec.length else {
        let v = (-0.5 * spec.beta0 * tbl.entries[p].casimir * s).exp();
        return Ok(TwoPointValue {
            series: v,
            oracle: v,
            partition: 1.0,
            est_error: 0.0,
        });
    };
    let raw = fusion_series(&tbl, p, spec.beta0, s, l)?;
    let z = heat_kernel_trace(spec.group, spec.beta0 * l, spec.conventions)?;
    let tail = tail_estimate(spec, l) / z;
    if tail > SERIES_TAIL_TOL {
        return Err(Error::Cutoff(format!(
            "two-point tail {tail:e} exceeds {SERIES_TAIL_TOL:e}; raise the cutoff"
        )));
    }
    let oracle = match spec.group {
        GroupId::Su2(_) => su2_quadrature(spec, &tbl, p, l)?,
        _ => {
            let (num, den) = transfer_trace(&tbl, p, spec.beta0, spec.tau, spec.tau2, l)?;
            num / den
        }
    };
    Ok(TwoPointValue {
        series: raw / z,
        oracle,
        partition: z,
        est_error: tail,
    })
}

/// `|Z_trace − heat_kernel_trace(β₀L)|` for the normalisation used by [`two_point`].
pub fn partition_residual(group: GroupId, beta0: f64, length: f64, conv: Conventions) -> Result<f64> {
    let tbl = irreps(group, conv)?;
    let direct: f64 = tbl
        .entries
        .iter()
        .map(|e| (e.dim * e.dim) as f64 * (-0.5 * beta0 * e.casimir * length).exp())
        .sum();
    Ok((direct - heat_kernel_trace(group, beta0 * length, conv)?).abs())
}

/// Spread of the transfer-trace value over rotated insertion points with `τ′ − τ` fixed.
pub fn rotation_invariance_residual(spec: &TwoPointSpec, shifts: &[f64]) -> Result<f64> {
    let l = spec
        .length
        .ok_or_else(|| Error::Contract("rotation invariance needs a periodic length".into()))?;
    let s = spec.separation();
    let mut vals = Vec::with_capacity(shifts.len());
    for &t in shifts {
        if !(t >= 0.0 && t + s <= l) {
            return Err(Error::Domain(format!("shift {t} moves tau2 outside [0, L]")));
        }
        let sp = TwoPointSpec {
            tau: t,
            tau2: t + s,
            ..*spec
        };
        vals.push(two_point(&sp)?.oracle);
    }
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

/// Two-point values at the given separations, starting from `τ = 0`.
pub fn decay_curve(spec: &TwoPointSpec, separations: &[f64]) -> Result<Vec<(f64, f64)>> {
    separations
        .iter()
        .map(|&s| {
            let sp = TwoPointSpec {
                tau: 0.0,
                tau2: s,
                ..*spec
            };
            Ok((s, two_point(&sp)?.series))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CovarianceKind {
    Wiener,
    OrnsteinUhlenbeck,
    Ising1d,
}

impl std::str::FromStr for CovarianceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wiener" => Ok(CovarianceKind::Wiener),
            "ou" => Ok(CovarianceKind::OrnsteinUhlenbeck),
            "ising1d" | "ising" => Ok(CovarianceKind::Ising1d),
            _ => Err(Error::Config(format!("unknown covariance '{s}' (wiener, ou, ising1d)"))),
        }
    }
}

pub fn closed_form_covariance(kind: CovarianceKind, beta0: f64, length: f64, tau: f64, tau2: f64) -> Result<f64> {
    if !(beta0 > 0.0) {
        return Err(Error::Domain(format!("beta0 must be positive, got {beta0}")));
    }
    if kind == CovarianceKind::Wiener {
        return Ok(beta0 * tau.min(tau2));
    }
    if !(0.0 <= tau && tau <= tau2 && tau2 <= length) {
        return Err(Error::Domain("need 0 <= tau <= tau2 <= L".into()));
    }
    let s = tau2 - tau;
    Ok(match kind {
        CovarianceKind::OrnsteinUhlenbeck => {
            ((-2.0 * beta0 * s).exp() + (-2.0 * beta0 * (length - s)).exp())
                / (-2.0 * (-2.0 * beta0 * length).exp_m1())
        }
        CovarianceKind::Ising1d => {
            ((-beta0 * s).exp() + (-beta0 * (length - s)).exp()) / (-(-2.0 * beta0 * length).exp_m1())
        }
        CovarianceKind::Wiener => unreachable!(),
    })
}

/// Compares the dual state on `M(f)` with the path-space integral after `hol⁻¹`, on `Z_n`.
pub fn cylindrical_wiener_residual(
    n: usize,
    beta0: f64,
    level: u32,
    length: f64,
    f: &dyn Fn(&[usize]) -> C64,
) -> Result<f64> {
    let group = GroupId::CyclicZn(n as u32);
    let fg = FiniteGroup::cyclic(n);
    let lattice = OrientedLattice::left_oriented(level).with_length(length);
    let fam = StateFamily::dual(group, beta0, length);
    let state = FiniteState::for_family(&fam, &lattice)?;
    let space = ConfigSpace::new(n, lattice.num_edges())?;
    let lhs = state.evaluate_matrix(&OperatorMatrix::multiplication(space, f)?)?;

    let kernels: Vec<HeatKernel> = (0..lattice.num_edges())
        .map(|e| HeatKernel::new(HeatKernelSpec::new(group, beta0 * lattice.edge_length(e))))
        .collect::<Result<_>>()?;
    let mut tables = Vec::with_capacity(kernels.len());
    for k in &kernels {
        tables.push(
            (0..n)
                .map(|g| k.eval(&GroupValue::Residue(g as u32)))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    let mut rhs = C64::new(0.0, 0.0);
    for u in 0..space.dim() {
        let h = space.decode(u);
        let mut w = 1.0;
        let mut prev = 0;
        let mut g = Vec::with_capacity(h.len());
        for (j, &hj) in h.iter().enumerate() {
            let step = fg.mul(fg.inv(prev), hj);
            w *= tables[j][step];
            g.push(step);
            prev = hj;
        }
        rhs += f(&g) * w;
    }
    rhs /= space.dim() as f64;
    Ok((lhs - rhs).norm())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupportRow {
    pub level: u32,
    pub interval: f64,
    pub dual_msq: f64,
    pub uniform_msq: f64,
}

/// Mean-square U(1) increments over level-`N` intervals under the dual and uniform measures.
///
/// Paths are sampled once at the finest level and composed upward.
pub fn support_proxy(beta0: f64, length: f64, levels: std::ops::RangeInclusive<u32>, paths: usize, seed: u64) -> Result<Vec<SupportRow>> {
    if !(beta0 > 0.0 && length > 0.0) {
        return Err(Error::Domain("beta0 and length must be positive".into()));
    }
    let top = *levels.end();
    let nfine = 1usize << top;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, (beta0 * length / nfine as f64).sqrt())
        .map_err(|e| Error::Domain(e.to_string()))?;
    let mut dual_acc = vec![0.0; top as usize + 1];
    let mut unif_acc = vec![0.0; top as usize + 1];
    for _ in 0..paths {
        let dual: Vec<f64> = (0..nfine).map(|_| normal.sample(&mut rng)).collect();
        let unif: Vec<f64> = (0..nfine).map(|_| rng.random_range(-PI..PI)).collect();
        for lev in levels.clone() {
            let block = nfine >> lev;
            let mean = |v: &[f64]| {
                v.chunks(block)
                    .map(|c| wrap_angle(c.iter().sum()).powi(2))
                    .sum::<f64>()
                    / (1usize << lev) as f64
            };
            dual_acc[lev as usize] += mean(&dual);
            unif_acc[lev as usize] += mean(&unif);
        }
    }
    Ok(levels
        .map(|lev| SupportRow {
            level: lev,
            interval: length / (1u64 << lev) as f64,
            dual_msq: dual_acc[lev as usize] / paths as f64,
            uniform_msq: unif_acc[lev as usize] / paths as f64,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z4() -> GroupId {
        GroupId::CyclicZn(4)
    }

    #[test]
    fn identity_config_gives_identity_path() {
        let cfg = EdgeConfig::identity(z4(), DyadicTree::complete(3));
        let p = holonomy_path(z4(), &cfg).unwrap();
        assert!(p.values.iter().all(|h| *h == GroupValue::Residue(0)));
    }

    #[test]
    fn round_trips_exact_on_z4() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for level in 0..=5 {
            let tree = DyadicTree::complete(level);
            for _ in 0..100 {
                let cfg = EdgeConfig::random(z4(), tree.clone(), &mut rng).unwrap();
                let path = holonomy_path(z4(), &cfg).unwrap();
                assert_eq!(holonomy_inverse(z4(), &path).unwrap(), cfg);
                let hvals = EdgeConfig::random(z4(), tree.clone(), &mut rng).unwrap().values;
                let h = PathConfig::new(tree.clone(), hvals).unwrap();
                let back = holonomy_path(z4(), &holonomy_inverse(z4(), &h).unwrap()).unwrap();
                assert_eq!(back, h);
            }
        }
    }

    #[test]
    fn round_trip_on_su2_elements() {
        // Nonabelian: the order of the product matters for the inverse formula.
        let g = GroupId::Su2(4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = EdgeConfig::random(g, DyadicTree::complete(3), &mut rng).unwrap();
        let back = holonomy_inverse(g, &holonomy_path(g, &cfg).unwrap()).unwrap();
        for (a, b) in cfg.values.iter().zip(&back.values) {
            assert!(g.distance(a, b).unwrap() < 1e-12);
        }
    }

    #[test]
    fn refinement_compatibility() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let coarse_tree: DyadicTree = DyadicTree::complete(2);
        let fine_tree = DyadicTree::complete(4).union(&DyadicTree::complete(2));
        for _ in 0..50 {
            let coarse = EdgeConfig::random(z4(), coarse_tree.clone(), &mut rng).unwrap();
            let fine = random_lift(z4(), &coarse, &fine_tree, &mut rng).unwrap();
            assert_eq!(coarsen(z4(), &fine, &coarse_tree).unwrap(), coarse);
            for tau in coarse_tree.partition() {
                assert_eq!(
                    holonomy(z4(), &fine, tau).unwrap(),
                    holonomy(z4(), &coarse, tau).unwrap()
                );
            }
        }
    }

    #[test]
    fn non_partition_point_is_a_contract_error() {
        let cfg = EdgeConfig::identity(z4(), DyadicTree::complete(1));
        let err = holonomy(z4(), &cfg, Dyadic::new(1, 2)).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn duality_exact_on_small_cyclic_groups() {
        let r = duality_check(GroupId::CyclicZn(2), 2, 0, 1).unwrap();
        assert!(r.exhaustive);
        assert_eq!(r.residual, 0.0);
        for level in 0..=3 {
            let r = duality_check(z4(), level, 500, 5).unwrap();
            assert_eq!(r.residual, 0.0);
        }
        assert!(matches!(
            duality_check(GroupId::Su2(2), 1, 10, 1),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn wilson_loop_is_fully_invariant() {
        let lat = OrientedLattice::cofinal(2, Orientation::Left);
        let fg = FiniteGroup::cyclic(3);
        let r = invariant_function_check(&fg, &lat, &wilson_loop_zn(3, 1, &lat)).unwrap();
        assert!(r.loop_invariant && r.factors_through_holonomy && r.fully_invariant && r.class_function);
    }

    #[test]
    fn single_edge_function_is_not_invariant() {
        let lat = OrientedLattice::left_oriented(2);
        let fg = FiniteGroup::cyclic(3);
        let f = |c: &[usize]| C64::new(c[1] as f64, 0.0);
        let r = invariant_function_check(&fg, &lat, &f).unwrap();
        assert!(!r.loop_invariant && !r.factors_through_holonomy && !r.fully_invariant);
    }

    #[test]
    fn non_class_holonomy_function_on_s3() {
        let lat = OrientedLattice::left_oriented(1);
        let fg = FiniteGroup::s3();
        let target = (1..6).find(|&h| (0..6).any(|k| fg.conj(k, h) != h)).unwrap();
        let f = |c: &[usize]| C64::new(f64::from(loop_holonomy(&fg, &lat, c) == target), 0.0);
        let r = invariant_function_check(&fg, &lat, &f).unwrap();
        assert!(r.loop_invariant && r.factors_through_holonomy);
        assert!(!r.fully_invariant && !r.class_function);
    }

    fn u1_spec(beta0: f64, l: Option<f64>, m: i64, tau: f64, tau2: f64) -> TwoPointSpec {
        TwoPointSpec::new(GroupId::CircleU1(32), beta0, l, IrrepLabel::U1(m), tau, tau2)
    }

    #[test]
    fn coincident_insertions_give_one() {
        let v = two_point(&u1_spec(0.5, Some(1.0), 1, 0.3, 0.3)).unwrap();
        assert!((v.series - 1.0).abs() < 1e-14);
        let z = TwoPointSpec::new(GroupId::CyclicZn(2), 1.0, Some(2.0), IrrepLabel::Zn { k: 1, n: 2 }, 0.5, 0.5);
        assert!((two_point(&z).unwrap().series - 1.0).abs() < 1e-14);
    }

    #[test]
    fn series_matches_transfer_trace() {
        let v = two_point(&u1_spec(0.5, Some(1.0), 1, 0.25, 0.5)).unwrap();
        assert!((v.series - v.oracle).abs() < 1e-10);
        for k in 0..2 {
            let z = TwoPointSpec::new(GroupId::CyclicZn(2), 1.3, Some(1.0), IrrepLabel::Zn { k, n: 2 }, 0.1, 0.7);
            let v = two_point(&z).unwrap();
            assert!((v.series - v.oracle).abs() < 1e-14);
        }
    }

    #[test]
    fn su2_series_matches_quadrature() {
        let s = TwoPointSpec::new(GroupId::Su2(40), 1.0, Some(2.0), IrrepLabel::Su2 { two_j: 1 }, 0.2, 0.9);
        let v = two_point(&s).unwrap();
        assert!((v.series - v.oracle).abs() < 1e-10, "{v:?}");
    }

    #[test]
    fn thermodynamic_limit() {
        let t = two_point(&u1_spec(0.5, None, 1, 0.0, 0.25)).unwrap();
        assert!((t.series - (-0.0625f64).exp()).abs() < 1e-15);
        let finite = two_point(&u1_spec(0.5, Some(160.0), 1, 0.0, 0.25)).unwrap();
        assert!((finite.series - t.series).abs() < 1e-8);
    }

    #[test]
    fn mismatched_irreps_vanish() {
        let mut s = u1_spec(0.5, Some(1.0), 1, 0.0, 0.25);
        s.irrep2 = IrrepLabel::U1(2);
        assert_eq!(two_point(&s).unwrap().series, 0.0);
    }

    #[test]
    fn rotation_invariance_and_negative_control() {
        let shifts: Vec<f64> = (0..10).map(|i| 0.07 * i as f64).collect();
        let r = rotation_invariance_residual(&u1_spec(0.5, Some(1.0), 1, 0.0, 0.3), &shifts).unwrap();
        assert!(r < 1e-12);
        let z = TwoPointSpec::new(GroupId::CyclicZn(2), 1.0, Some(1.0), IrrepLabel::Zn { k: 1, n: 2 }, 0.0, 0.3);
        assert!(rotation_invariance_residual(&z, &shifts).unwrap() < 1e-12);
        let w: Vec<f64> = shifts
            .iter()
            .map(|&t| closed_form_covariance(CovarianceKind::Wiener, 1.0, 1.0, t, t + 0.3).unwrap())
            .collect();
        assert!(w[9] - w[0] > 0.1);
    }

    #[test]
    fn partition_matches_heat_kernel_trace() {
        for g in [GroupId::CircleU1(32), GroupId::CyclicZn(2), GroupId::Su2(40)] {
            assert!(partition_residual(g, 0.5, 1.0, Conventions::default()).unwrap() < 1e-12);
        }
    }

    #[test]
    fn monotone_decay_on_half_period() {
        let seps: Vec<f64> = (1..=20).map(|i| 0.025 * i as f64).collect();
        let c = decay_curve(&u1_spec(0.5, Some(1.0), 1, 0.0, 0.0), &seps).unwrap();
        assert!(c.windows(2).all(|w| w[1].1 < w[0].1));
    }

    #[test]
    fn closed_forms() {
        assert_eq!(closed_form_covariance(CovarianceKind::Wiener, 2.0, 1.0, 0.0, 0.5).unwrap(), 0.0);
        let (b, l) = (0.7, 2.0);
        let v = closed_form_covariance(CovarianceKind::Ising1d, b, l, 0.0, l / 2.0).unwrap();
        let plug = 2.0 * (-b * l / 2.0f64).exp() / (1.0 - (-2.0 * b * l).exp());
        assert!((v - plug).abs() < 1e-15);
    }

    #[test]
    fn cylindrical_wiener_on_z4() {
        let f = |g: &[usize]| {
            C64::new((g[0] + 2 * g[1]) as f64, (g[2] * g[3]) as f64)
        };
        let r = cylindrical_wiener_residual(4, 1.5, 2, 1.0, &f).unwrap();
        assert!(r < 1e-14, "{r}");
    }

    #[test]
    fn support_dichotomy_proxy() {
        let rows = support_proxy(1.0, 1.0, 4..=10, 60, 9).unwrap();
        for r in &rows {
            assert!((r.dual_msq / r.interval - 1.0).abs() < 0.15, "{r:?}");
            assert!((r.uniform_msq - PI * PI / 3.0).abs() < 0.3, "{r:?}");
        }
    }
}
