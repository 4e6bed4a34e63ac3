//! Kogut-Susskind Hamiltonians at finite level.
//!
//! In one spatial dimension there are no plaquettes, so the Hamiltonian is its
//! strong-coupling part `H = (g_N² / 2a_N) Σ_e (−Δ_e)`, diagonal in the Fourier
//! basis. The O(2) rotor adds a cosine potential on each edge.

use nalgebra::DMatrix;

use crate::dyadic::{is_refinement, Orientation, OrientedLattice};
use crate::error::{Error, Result};
use crate::field_algebra::{
    fourier_matrix, gauge_perm, ConfigSpace, FiniteGroup, OperatorMatrix, Refinement,
    RestCoordinates, MAX_CONFIGS, MAX_DENSE_DIM,
};
use crate::group_core::{irreps, Conventions, GroupId, C64};
use crate::heat_kernel::{HeatKernel, HeatKernelSpec};

/// Level-dependent couplings with `g_{N+1} = g_N / 2` and `a_N = 2^{-N} L`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CouplingSchedule {
    /// Dimensionless coupling at level 0.
    pub g0: f64,
    /// Bare coupling.
    pub gb: f64,
    pub length: f64,
}

impl CouplingSchedule {
    pub fn new(g0: f64, gb: f64, length: f64) -> Result<Self> {
        for (name, v) in [("g0", g0), ("gb", gb), ("L", length)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(CouplingSchedule { g0, gb, length })
    }

    /// `g_0 = L g_b`, so that `g_N ~ a_N g_b` at every level.
    pub fn from_bare(gb: f64, length: f64) -> Result<Self> {
        Self::new(length * gb, gb, length)
    }

    pub fn coupling(&self, level: u32) -> f64 {
        self.g0 / 2f64.powi(level as i32)
    }

    pub fn spacing(&self, level: u32) -> f64 {
        self.length / 2f64.powi(level as i32)
    }

    /// `g_N² / 2a_N`.
    pub fn prefactor(&self, level: u32) -> f64 {
        let g = self.coupling(level);
        g * g / (2.0 * self.spacing(level))
    }

    /// `β_N = 2^N β_0`, which keeps `β_N g_N² / a_N` fixed.
    pub fn temperature(&self, level: u32, beta0: f64) -> f64 {
        beta0 * 2f64.powi(level as i32)
    }

    /// Heat-kernel time `β_N g_N² / a_N` of the level-N Gibbs state.
    pub fn heat_kernel_time(&self, level: u32, beta_n: f64) -> f64 {
        2.0 * beta_n * self.prefactor(level)
    }
}

/// `H_s` at level `N` on the cofinal lattice with `2^N` edges.
#[derive(Clone, Debug, PartialEq)]
pub struct StrongHamiltonian {
    pub group: GroupId,
    pub conventions: Conventions,
    pub level: u32,
    pub edges: usize,
    pub prefactor: f64,
    /// Single-edge Casimirs indexed by Fourier mode; for U(1) mode `i` is `m = i − K`.
    pub casimirs: Vec<f64>,
}

pub fn ks_strong_matrix(
    group: GroupId,
    level: u32,
    schedule: &CouplingSchedule,
    conventions: Conventions,
) -> Result<StrongHamiltonian> {
    if level > 20 {
        return Err(Error::Resource {
            what: "lattice level".into(),
            required: level as usize,
            limit: 20,
        });
    }
    let tbl = irreps(group, conventions)?;
    let casimirs = match group {
        GroupId::CyclicZn(_) => tbl.entries.iter().map(|e| e.casimir).collect(),
        GroupId::CircleU1(k) => {
            let k = k as i64;
            (-k..=k).map(|m| conventions.scale * (m * m) as f64).collect()
        }
        g => {
            return Err(Error::Unsupported(format!(
                "strong-coupling matrices need Z_n or truncated U(1), got {g}"
            )))
        }
    };
    Ok(StrongHamiltonian {
        group,
        conventions,
        level,
        edges: 1 << level,
        prefactor: schedule.prefactor(level),
        casimirs,
    })
}

impl StrongHamiltonian {
    pub fn modes(&self) -> usize {
        self.casimirs.len()
    }

    pub fn fourier_space(&self) -> Result<ConfigSpace> {
        ConfigSpace::new(self.modes(), self.edges)
    }

    /// Eigenvalues in the Fourier basis, lexicographic in the mode labels.
    pub fn diagonal(&self) -> Result<Vec<f64>> {
        let space = self.fourier_space()?;
        if space.dim() > MAX_CONFIGS {
            return Err(Error::Resource {
                what: "Fourier basis".into(),
                required: space.dim(),
                limit: MAX_CONFIGS,
            });
        }
        Ok((0..space.dim())
            .map(|i| self.prefactor * space.decode(i).iter().map(|&m| self.casimirs[m]).sum::<f64>())
            .collect())
    }

    pub fn fourier_matrix(&self) -> Result<OperatorMatrix> {
        let d = self.diagonal()?;
        OperatorMatrix::multiplication(self.fourier_space()?, |c| {
            C64::new(d[self.fourier_space().unwrap().encode(c)], 0.0)
        })
    }

    /// `H_s` in the configuration basis (finite groups).
    pub fn position_matrix(&self) -> Result<OperatorMatrix> {
        let GroupId::CyclicZn(n) = self.group else {
            return Err(Error::Unsupported("position basis needs a finite group".into()));
        };
        let lap = neg_laplacian(n, self.conventions)?;
        let mut out = OperatorMatrix::zeros(ConfigSpace::new(n as usize, self.edges)?)?;
        for e in 0..self.edges {
            out.mat += embed_single(&lap, e, self.edges);
        }
        out.mat *= C64::new(self.prefactor, 0.0);
        Ok(out)
    }

    pub fn ground_energy(&self) -> Result<f64> {
        Ok(self.diagonal()?.into_iter().fold(f64::INFINITY, f64::min))
    }

    /// `(g_N² / 2a_N) · min_{π ≠ triv} c_π`.
    pub fn gap(&self) -> f64 {
        let m = self.casimirs.iter().copied().filter(|&c| c > 0.0).fold(f64::INFINITY, f64::min);
        self.prefactor * m
    }
}

/// `−Δ` on `L²(Z_n)` in the configuration basis.
pub fn neg_laplacian(n: u32, conv: Conventions) -> Result<DMatrix<C64>> {
    let fg = FiniteGroup::cyclic(n as usize);
    let f = fourier_matrix(&fg)?.mat;
    let tbl = irreps(GroupId::CyclicZn(n), conv)?;
    let d = nalgebra::DVector::from_iterator(
        n as usize,
        tbl.entries.iter().map(|e| C64::new(e.casimir, 0.0)),
    );
    Ok(f.adjoint() * DMatrix::from_diagonal(&d) * f)
}

/// `1 ⊗ … ⊗ a ⊗ … ⊗ 1` with `a` on edge `e` of `edges`.
pub fn embed_single(a: &DMatrix<C64>, e: usize, edges: usize) -> DMatrix<C64> {
    let d = a.nrows();
    let mut term = DMatrix::<C64>::identity(1, 1);
    for j in 0..edges {
        term = if j == e {
            term.kronecker(a)
        } else {
            term.kronecker(&DMatrix::identity(d, d))
        };
    }
    term
}

/// `E_π = ½ c_π L g_b²`.
pub fn wilson_loop_energy(group: GroupId, label: &str, schedule: &CouplingSchedule, conventions: Conventions) -> Result<f64> {
    let tbl = irreps(group, conventions)?;
    let c = tbl.entries[tbl.find(label)?].casimir;
    Ok(0.5 * c * schedule.length * schedule.gb * schedule.gb)
}

fn check_dim(dim: usize) -> Result<()> {
    if dim > MAX_DENSE_DIM {
        return Err(Error::Resource {
            what: "dense operator dimension".into(),
            required: dim,
            limit: MAX_DENSE_DIM,
        });
    }
    Ok(())
}

/// Refinement isometry `(Rψ)(y) = ψ(p(y))` between cofinal levels, in the
/// orthonormal configuration bases with unit Haar mass.
pub fn refinement_isometry(fg: &FiniteGroup, coarse: u32, fine: u32) -> Result<DMatrix<C64>> {
    let c = OrientedLattice::cofinal(coarse, Orientation::Left);
    let f = OrientedLattice::cofinal(fine, Orientation::Left);
    let w = is_refinement(&c, &f)
        .ok_or_else(|| Error::Contract(format!("level {coarse} is not refined by level {fine}")))?;
    let r = Refinement::new(fg, &w, RestCoordinates::Raw)?;
    let (cs, fs) = (r.coarse_space(), r.fine_space());
    check_dim(fs.dim())?;
    let s = (cs.dim() as f64 / fs.dim() as f64).sqrt();
    let mut m = DMatrix::zeros(fs.dim(), cs.dim());
    for (x, fib) in r.fibers().iter().enumerate() {
        for &y in fib {
            m[(y, x)] = C64::new(s, 0.0);
        }
    }
    Ok(m)
}

fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `max |H^{(fine)} R − R H^{(coarse)}|` on a cyclic group.
pub fn refinement_coherence_residual(n: u32, coarse: u32, fine: u32, schedule: &CouplingSchedule, conv: Conventions) -> Result<f64> {
    let fg = FiniteGroup::cyclic(n as usize);
    let r = refinement_isometry(&fg, coarse, fine)?;
    let hc = ks_strong_matrix(GroupId::CyclicZn(n), coarse, schedule, conv)?.position_matrix()?;
    let hf = ks_strong_matrix(GroupId::CyclicZn(n), fine, schedule, conv)?.position_matrix()?;
    Ok(max_abs(&(&hf.mat * &r - &r * &hc.mat)))
}

/// `max |H ψ − E_π ψ|` for `ψ = R(χ_π)`, the level-0 Wilson loop lifted to level `N`.
pub fn wilson_loop_residual(n: u32, label: &str, level: u32, schedule: &CouplingSchedule, conv: Conventions) -> Result<f64> {
    let group = GroupId::CyclicZn(n);
    let fg = FiniteGroup::cyclic(n as usize);
    let tbl = irreps(group, conv)?;
    let irrep = tbl.entries[tbl.find(label)?];
    let chi = nalgebra::DVector::from_iterator(
        n as usize,
        (0..n as usize).map(|g| irrep.character(&fg.value(g)).unwrap()),
    );
    let psi = refinement_isometry(&fg, 0, level)? * chi;
    let h = ks_strong_matrix(group, level, schedule, conv)?.position_matrix()?;
    let e = wilson_loop_energy(group, label, schedule, conv)?;
    Ok((&h.mat * &psi - psi * C64::new(e, 0.0)).iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// `λ(ρ_b ⊗ 1)` on every edge of the level-`N` lattice, with unit Haar normalisation.
pub fn heat_kernel_operator(n: u32, level: u32, b: f64, conv: Conventions) -> Result<OperatorMatrix> {
    let fg = FiniteGroup::cyclic(n as usize);
    let nn = n as usize;
    let single = if b == 0.0 {
        DMatrix::identity(nn, nn)
    } else {
        let hk = HeatKernel::new(HeatKernelSpec::new(GroupId::CyclicZn(n), b).with_conventions(conv))?;
        let rho: Vec<f64> = (0..nn).map(|g| hk.eval(&fg.value(g))).collect::<Result<_>>()?;
        DMatrix::from_fn(nn, nn, |g, gp| C64::new(rho[fg.mul(g, fg.inv(gp))] / nn as f64, 0.0))
    };
    let space = ConfigSpace::new(nn, 1 << level)?;
    check_dim(space.dim())?;
    let mut m = DMatrix::<C64>::identity(1, 1);
    for _ in 0..space.edges {
        m = m.kronecker(&single);
    }
    OperatorMatrix::new(nn, space.edges, m)
}

pub fn gibbs_operator(h: &StrongHamiltonian, beta_n: f64) -> Result<OperatorMatrix> {
    let p = h.position_matrix()?;
    let mat = (p.mat * C64::new(-beta_n, 0.0)).exp();
    OperatorMatrix::new(p.order, p.edges, mat)
}

/// `max |λ(F_γ(β_N g_N² / a_N)) − e^{−β_N H}|`.
pub fn gibbs_is_heat_kernel_residual(n: u32, level: u32, beta_n: f64, schedule: &CouplingSchedule, conv: Conventions) -> Result<f64> {
    if !(beta_n >= 0.0 && beta_n.is_finite()) {
        return Err(Error::Domain("beta_N must be nonnegative".into()));
    }
    let h = ks_strong_matrix(GroupId::CyclicZn(n), level, schedule, conv)?;
    let lhs = heat_kernel_operator(n, level, schedule.heat_kernel_time(level, beta_n), conv)?;
    Ok(lhs.max_abs_diff(&gibbs_operator(&h, beta_n)?))
}

/// Normalised Gibbs state `Tr(e^{−βH} a) / Tr(e^{−βH})` against `α(a)` between levels.
pub fn gibbs_coherence_residual(n: u32, coarse: u32, fine: u32, beta0: f64, schedule: &CouplingSchedule, conv: Conventions) -> Result<f64> {
    let fg = FiniteGroup::cyclic(n as usize);
    let group = GroupId::CyclicZn(n);
    let state = |level: u32| -> Result<DMatrix<C64>> {
        let h = ks_strong_matrix(group, level, schedule, conv)?;
        let g = gibbs_operator(&h, schedule.temperature(level, beta0))?.mat;
        let z = g.trace();
        Ok(g / z)
    };
    let (rc, rf) = (state(coarse)?, state(fine)?);
    let w = is_refinement(
        &OrientedLattice::cofinal(coarse, Orientation::Left),
        &OrientedLattice::cofinal(fine, Orientation::Left),
    )
    .ok_or_else(|| Error::Contract("levels are not ordered".into()))?;
    let r = Refinement::new(&fg, &w, RestCoordinates::Raw)?;
    let cs = r.coarse_space();
    let mut worst: f64 = 0.0;
    for i in 0..cs.dim() {
        for j in 0..cs.dim() {
            let a = OperatorMatrix::matrix_unit(cs, i, j)?;
            let fa = r.alpha_dense(&a)?;
            let vf = (&rf * &fa.mat).trace();
            worst = worst.max((vf - rc[(j, i)]).norm());
        }
    }
    Ok(worst)
}

/// `max |[H_s, U_τ(g)]|` for a gauge tuple on the level-`N` lattice.
pub fn gauge_commutator(n: u32, level: u32, g: &[usize], periodic: bool, schedule: &CouplingSchedule, conv: Conventions) -> Result<f64> {
    let fg = FiniteGroup::cyclic(n as usize);
    let lat = OrientedLattice::cofinal(level, Orientation::Left);
    let u = gauge_perm(&fg, &lat, g, periodic)?.to_matrix(ConfigSpace::new(n as usize, lat.num_edges())?)?;
    let h = ks_strong_matrix(GroupId::CyclicZn(n), level, schedule, conv)?.position_matrix()?;
    Ok(max_abs(&(&h.mat * &u.mat - &u.mat * &h.mat)))
}

/// Single-edge O(2) rotor `β(−½Δ − (2/g̃) cos φ)` on Fourier modes `|m| ≤ K`.
/// `g̃ = ∞` removes the potential.
pub fn o2_rotor_matrix(cutoff: u32, beta: f64, gtilde: f64) -> Result<DMatrix<C64>> {
    if cutoff < 4 {
        return Err(Error::Config(format!("mode cutoff must be at least 4, got {cutoff}")));
    }
    if !(beta > 0.0 && beta.is_finite()) || !(gtilde > 0.0) {
        return Err(Error::Domain("beta and g-tilde must be positive".into()));
    }
    let k = cutoff as i64;
    let d = (2 * k + 1) as usize;
    let hop = if gtilde.is_infinite() { 0.0 } else { -beta / gtilde };
    let h = DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            let m = i as i64 - k;
            C64::new(0.5 * beta * (m * m) as f64, 0.0)
        } else if i.abs_diff(j) == 1 {
            C64::new(hop, 0.0)
        } else {
            C64::default()
        }
    });
    let ground = h.clone().symmetric_eigen();
    let idx = ground
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let v = ground.eigenvectors.column(idx);
    let edge_weight = v[0].norm().max(v[d - 1].norm());
    if edge_weight > 1e-10 {
        return Err(Error::Cutoff(format!(
            "ground state weight {edge_weight:.3e} at |m| = {cutoff}; raise the mode cutoff"
        )));
    }
    Ok(h)
}

/// `(λ(ρ_{β/n}) M(e^{(β/n)(2/g̃) cos φ}))^n` on a single edge.
pub fn trotter_product(cutoff: u32, beta: f64, gtilde: f64, steps: u32) -> Result<DMatrix<C64>> {
    if steps == 0 {
        return Err(Error::Config("at least one Trotter step is needed".into()));
    }
    let h = o2_rotor_matrix(cutoff, beta, gtilde)?;
    let t = 1.0 / steps as f64;
    let kinetic = DMatrix::from_diagonal(&h.diagonal()) * C64::new(-t, 0.0);
    let potential = (&h - DMatrix::from_diagonal(&h.diagonal())) * C64::new(-t, 0.0);
    let step = kinetic.exp() * potential.exp();
    let mut out = DMatrix::identity(h.nrows(), h.ncols());
    for _ in 0..steps {
        out = &out * &step;
    }
    Ok(out)
}

/// `max |(Trotter product)_n − e^{−H}|`.
pub fn trotter_residual(cutoff: u32, beta: f64, gtilde: f64, steps: u32) -> Result<f64> {
    let exact = (o2_rotor_matrix(cutoff, beta, gtilde)? * C64::new(-1.0, 0.0)).exp();
    Ok(max_abs(&(trotter_product(cutoff, beta, gtilde, steps)? - exact)))
}
