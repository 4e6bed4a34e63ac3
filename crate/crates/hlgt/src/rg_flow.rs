//! Renormalisation-group flow of state parameters.
//!
//! For dual heat-kernel families the flow acts on per-leaf inverse
//! temperatures: collapsing two sibling leaves adds their parameters, which on
//! a constant table is `β' = 2^{N'−N} β`.

use nalgebra::DMatrix;

use crate::dyadic::{is_refinement, Orientation, OrientedLattice};
use crate::error::{Error, Result};
use crate::field_algebra::{ConfigSpace, FiniteGroup, OperatorMatrix, Refinement, RestCoordinates};
use crate::group_core::{haar_integrate, Conventions, GroupId, GroupValue, C64};
use crate::hamiltonian::{embed_single, neg_laplacian, CouplingSchedule};
use crate::heat_kernel::{HeatKernel, HeatKernelSpec};
use crate::states::{finite_coherence, DensityKernel, EdgeFactor, FiniteState};

/// Flows a leaf table on the complete tree `t_{N'}` down to `t_N`.
pub fn flow_beta(fine: &[f64], fine_level: u32, level: u32) -> Result<Vec<f64>> {
    if level > fine_level {
        return Err(Error::Contract(format!(
            "cannot flow from level {fine_level} up to level {level}"
        )));
    }
    if fine.len() != 1usize << fine_level {
        return Err(Error::Contract(format!(
            "level {fine_level} needs {} leaves, got {}",
            1usize << fine_level,
            fine.len()
        )));
    }
    let mut cur = fine.to_vec();
    for _ in level..fine_level {
        cur = cur.chunks(2).map(|p| p[0] + p[1]).collect();
    }
    Ok(cur)
}

/// Per-leaf dual-family parameters `β₀ |I_σ|^ν` on the complete tree `t_N` of `[0, L]`.
pub fn power_law_table(beta0: f64, nu: f64, level: u32, length: f64) -> Vec<f64> {
    let w = length / 2f64.powi(level as i32);
    vec![beta0 * w.powf(nu); 1 << level]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowClass {
    Fixed,
    ToZero,
    ToInfinity,
}

impl FlowClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            FlowClass::Fixed => "fixed",
            FlowClass::ToZero => "to_zero",
            FlowClass::ToInfinity => "to_infinity",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowStep {
    pub step: u32,
    /// Leaf value of the level-0 table after `step` steps.
    pub beta: f64,
    /// `|β^{(M)} − β^{(0)}|`.
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowRecord {
    pub nu: f64,
    pub beta0: f64,
    pub steps: Vec<FlowStep>,
    pub class: FlowClass,
    /// Trajectory monotone in the direction of `class`.
    pub monotone: bool,
}

/// Trajectory `β^{(M)}_{t_0}` obtained by flowing `β₀ |I|^ν` from level `M` to level 0 on `[0, 1]`.
pub fn classify_flow(nu: f64, beta0: f64, max_steps: u32) -> Result<FlowRecord> {
    if !(beta0 > 0.0 && beta0.is_finite()) || !nu.is_finite() {
        return Err(Error::Domain("beta0 must be positive and nu finite".into()));
    }
    if max_steps > 1000 {
        return Err(Error::Domain("at most 1000 flow steps".into()));
    }
    // A constant table flows by doubling, so one leaf carries the whole trajectory.
    let steps: Vec<FlowStep> = (0..=max_steps)
        .map(|m| {
            let leaf = power_law_table(beta0, nu, 0, 2f64.powi(-(m as i32)))[0];
            let beta = leaf * 2f64.powi(m as i32);
            FlowStep {
                step: m,
                beta,
                distance: (beta - beta0).abs(),
            }
        })
        .collect();
    let class = if nu > 1.0 {
        FlowClass::ToZero
    } else if nu < 1.0 {
        FlowClass::ToInfinity
    } else {
        FlowClass::Fixed
    };
    let monotone = steps.windows(2).all(|w| match class {
        FlowClass::Fixed => w[1].beta == w[0].beta,
        FlowClass::ToZero => w[1].beta < w[0].beta,
        FlowClass::ToInfinity => w[1].beta > w[0].beta,
    });
    Ok(FlowRecord {
        nu,
        beta0,
        steps,
        class,
        monotone,
    })
}

/// `T(β) = −½ ln tanh β`.
pub fn ising_transform(beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::Domain(format!("beta must be positive, got {beta}")));
    }
    Ok(0.5 * (2.0 / (2.0 * beta).exp_m1()).ln_1p())
}

/// Inverse of [`ising_transform`]: `β = artanh(e^{−2T})`.
pub fn ising_inverse(t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("Ising coupling must be positive, got {t}")));
    }
    let u = (-2.0 * t).exp();
    Ok(0.5 * (2.0 * u / -(-2.0 * t).exp_m1()).ln_1p())
}

/// Decimation map of the 1d Ising chain, `K ↦ ½ ln cosh(2K)`.
pub fn ising_decimation(k: f64) -> f64 {
    let x = (2.0 * k).abs();
    let lncosh = if x < 1.0 {
        (2.0 * (0.5 * x).sinh().powi(2)).ln_1p()
    } else {
        x + (-2.0 * x).exp().ln_1p() - std::f64::consts::LN_2
    };
    0.5 * lncosh
}

/// `max |T(2β) − ½ ln cosh(2T(β))|` over the grid.
pub fn ising_conjugacy_residual(betas: &[f64]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &b in betas {
        let d = ising_transform(2.0 * b)? - ising_decimation(ising_transform(b)?);
        worst = worst.max(d.abs());
    }
    Ok(worst)
}

fn kernel_values(group: GroupId, beta: f64, conv: Conventions) -> Result<Box<dyn Fn(&GroupValue) -> f64>> {
    if beta == 0.0 {
        let GroupId::CyclicZn(n) = group else {
            return Err(Error::Domain("beta = 0 is only allowed on finite groups".into()));
        };
        return Ok(Box::new(move |g| match g {
            GroupValue::Residue(0) => n as f64,
            _ => 0.0,
        }));
    }
    let hk = HeatKernel::new(HeatKernelSpec::new(group, beta).with_conventions(conv))?;
    Ok(Box::new(move |g| hk.eval(g).unwrap_or(f64::NAN)))
}

/// Boundary configurations `(g41, g42, g3, g21, g22, g1)` used by [`plaquette_flow_residual`].
fn plaquette_samples(group: GroupId) -> Result<Vec<[GroupValue; 6]>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x706c_6171);
    (0..64)
        .map(|_| {
            let mut v = Vec::with_capacity(6);
            for _ in 0..6 {
                v.push(group.random_element(&mut rng)?);
            }
            Ok(v.try_into().expect("six elements"))
        })
        .collect()
}

/// Integrates out the shared edge of two refined plaquettes and compares with
/// `ρ_{β₁+β₂}` on the outer holonomy `g41 g42⁻¹ g3⁻¹ g22 g21⁻¹ g1`.
pub fn plaquette_flow_residual(group: GroupId, beta1: f64, beta2: f64, conv: Conventions) -> Result<f64> {
    if !matches!(group, GroupId::CyclicZn(_) | GroupId::CircleU1(_)) {
        return Err(Error::Unsupported(format!("plaquette flow needs Z_n or U(1), got {group}")));
    }
    if !(beta1 > 0.0) || !(beta2 >= 0.0) {
        return Err(Error::Domain("beta1 must be positive and beta2 nonnegative".into()));
    }
    let r1 = kernel_values(group, beta1, conv)?;
    let r2 = kernel_values(group, beta2, conv)?;
    let r12 = kernel_values(group, beta1 + beta2, conv)?;
    let mul = |a: &GroupValue, b: &GroupValue| group.multiply(a, b);
    let inv = |a: &GroupValue| group.invert(a);
    let mut worst: f64 = 0.0;
    for [g41, g42, g3, g21, g22, g1] in plaquette_samples(group)? {
        let outer = mul(&mul(&mul(&mul(&mul(&g41, &inv(&g42)?)?, &inv(&g3)?)?, &g22)?, &inv(&g21)?)?, &g1)?;
        let lhs = haar_integrate(group, &|g5| {
            let p1 = mul(&mul(&mul(&g41, &inv(g5).unwrap()).unwrap(), &inv(&g21).unwrap()).unwrap(), &g1).unwrap();
            let p2 = mul(&mul(&mul(&inv(&g42).unwrap(), &inv(&g3).unwrap()).unwrap(), &g22).unwrap(), g5).unwrap();
            C64::new(r1(&p1) * r2(&p2), 0.0)
        })?;
        worst = worst.max((lhs.re - r12(&outer)).abs());
    }
    Ok(worst)
}

/// `max |exp(−Σ_e b_e(−Δ_e)) − ⊗_e exp(−b'_e(−Δ))|` with `b_e = β_e g_N² / 2a_N`.
///
/// Equal tables must agree exactly; a mismatch is the negative control.
pub fn strong_coupling_factorization_residual(
    n: u32,
    level: u32,
    betas: &[f64],
    factor_betas: &[f64],
    schedule: &CouplingSchedule,
    conv: Conventions,
) -> Result<f64> {
    let edges = 1usize << level;
    if betas.len() != edges || factor_betas.len() != edges {
        return Err(Error::Contract(format!("need {edges} per-edge betas")));
    }
    let dim = (n as usize).pow(edges as u32);
    if dim > crate::field_algebra::MAX_DENSE_DIM {
        return Err(Error::Resource {
            what: "dense operator dimension".into(),
            required: dim,
            limit: crate::field_algebra::MAX_DENSE_DIM,
        });
    }
    let lap = neg_laplacian(n, conv)?;
    let pref = schedule.prefactor(level);
    let mut h = DMatrix::<C64>::zeros(dim, dim);
    for (e, b) in betas.iter().enumerate() {
        h += embed_single(&lap, e, edges) * C64::new(b * pref, 0.0);
    }
    let lhs = (h * C64::new(-1.0, 0.0)).exp();
    let mut rhs = DMatrix::<C64>::identity(1, 1);
    for b in factor_betas {
        rhs = rhs.kronecker(&(&lap * C64::new(-b * pref, 0.0)).exp());
    }
    Ok((lhs - rhs).iter().map(|z| z.norm()).fold(0.0, f64::max))
}

fn dual_state(n: u32, betas: &[f64]) -> Result<FiniteState> {
    let fg = FiniteGroup::cyclic(n as usize);
    FiniteState::new(
        &fg,
        &DensityKernel {
            group: GroupId::CyclicZn(n),
            conventions: Conventions::default(),
            factors: betas.iter().map(|&beta| EdgeFactor::Dual { beta }).collect(),
        },
    )
}

fn witness(level: u32, fine_level: u32) -> Result<crate::dyadic::RefinementWitness> {
    is_refinement(
        &OrientedLattice::cofinal(level, Orientation::Left),
        &OrientedLattice::cofinal(fine_level, Orientation::Left),
    )
    .ok_or_else(|| Error::Contract("levels are not ordered".into()))
}

/// `max |ω_{β}^{(N')}(α(a)) − ω_{β'}^{(N)}(a)|` with `β'` the flowed table.
pub fn flow_duality_residual(n: u32, fine_betas: &[f64], fine_level: u32, level: u32) -> Result<f64> {
    let coarse_betas = flow_beta(fine_betas, fine_level, level)?;
    let fg = FiniteGroup::cyclic(n as usize);
    let (r, _) = finite_coherence(
        &fg,
        &witness(level, fine_level)?,
        &dual_state(n, &coarse_betas)?,
        &dual_state(n, fine_betas)?,
        0,
    )?;
    Ok(r)
}

/// Coherence residual of `Ad_{U₁ ⊗ … ⊗ U_k} ∘ α` for single-site unitaries on the fine level.
pub fn equivalent_rg_residual(
    coarse: &FiniteState,
    fine: &FiniteState,
    level: u32,
    fine_level: u32,
    unitaries: &[DMatrix<C64>],
) -> Result<f64> {
    let fg = &coarse.group;
    if unitaries.len() != fine.space.edges {
        return Err(Error::Contract("one unitary per fine edge".into()));
    }
    let r = Refinement::new(fg, &witness(level, fine_level)?, RestCoordinates::Raw)?;
    let mut u = DMatrix::<C64>::identity(1, 1);
    for x in unitaries {
        u = u.kronecker(x);
    }
    let rho = fine.density_matrix()?.mat;
    let cs: ConfigSpace = r.coarse_space();
    let mut worst: f64 = 0.0;
    for i in 0..cs.dim() {
        for j in 0..cs.dim() {
            let a = OperatorMatrix::matrix_unit(cs, i, j)?;
            let fa = &u * r.alpha_dense(&a)?.mat * u.adjoint();
            let v = (&rho * fa).trace();
            worst = worst.max((v - coarse.evaluate_matrix(&a)?).norm());
        }
    }
    Ok(worst)
}
