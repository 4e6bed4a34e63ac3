//! Heat kernels `ρ_β = Σ_π d_π e^{-β c_π / 2} χ_π`, the dual kernel on Z and
//! partition sums.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::group_core::{
    haar_integrate_with, irreps, suq2_casimir, Conventions, GroupId, GroupValue, Irrep,
    IrrepLabel, Quadrature, C64,
};

pub const DEFAULT_TOL: f64 = 1e-17;
const MIN_TERMS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeatKernelSpec {
    pub group: GroupId,
    pub beta: f64,
    pub tol: f64,
    pub conventions: Conventions,
}

impl HeatKernelSpec {
    pub fn new(group: GroupId, beta: f64) -> Self {
        HeatKernelSpec {
            group,
            beta,
            tol: DEFAULT_TOL,
            conventions: Conventions::default(),
        }
    }

    pub fn with_conventions(mut self, conventions: Conventions) -> Self {
        self.conventions = conventions;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeatKernelValue {
    pub value: f64,
    pub cutoff_used: usize,
    pub est_error: f64,
    pub warning: Option<String>,
}

/// A heat kernel with its truncated character series precomputed.
#[derive(Clone, Debug)]
pub struct HeatKernel {
    pub spec: HeatKernelSpec,
    /// `(irrep, d_π e^{-β c_π / 2})`, in table order.
    pub terms: Vec<(Irrep, f64)>,
    pub est_error: f64,
    pub warning: Option<String>,
}

impl HeatKernel {
    pub fn new(spec: HeatKernelSpec) -> Result<Self> {
        spec.group.validate()?;
        if !(spec.beta > 0.0) || !spec.beta.is_finite() {
            return Err(Error::Domain(format!("beta must be positive, got {}", spec.beta)));
        }
        let mut warning = None;
        if spec.beta < 1e-3 && matches!(spec.group, GroupId::CircleU1(_) | GroupId::Su2(_)) {
            warning = Some(format!(
                "beta = {} is near the delta limit; the kernel is badly conditioned",
                spec.beta
            ));
        }
        match spec.group {
            GroupId::IntegersZ(_) | GroupId::LineR => {
                return Ok(HeatKernel {
                    spec,
                    terms: Vec::new(),
                    est_error: 0.0,
                    warning,
                })
            }
            GroupId::SUq2 { .. } => {
                return Err(Error::Unsupported(
                    "SU_q(2) has no group elements; use suq2_partition".into(),
                ))
            }
            _ => {}
        }
        let table = irreps(spec.group, spec.conventions)?;
        let weight = |e: &Irrep| e.dim as f64 * (-0.5 * spec.beta * e.casimir).exp();
        let mut terms = Vec::new();
        let mut mass = 0.0;
        let n = table.entries.len();
        let mut i = 0;
        let mut converged = false;
        while i < n {
            // U(1) modes ±m are consumed together.
            let block = match table.entries[i].label {
                IrrepLabel::U1(m) if m != 0 => 2,
                _ => 1,
            };
            let mut block_mass = 0.0;
            for e in &table.entries[i..(i + block).min(n)] {
                let w = weight(e);
                terms.push((*e, w));
                block_mass += e.dim as f64 * w;
            }
            mass += block_mass;
            i += block;
            if !spec.group.is_finite() && terms.len() >= MIN_TERMS && block_mass < spec.tol * mass {
                converged = true;
                break;
            }
        }
        let est_error = if spec.group.is_finite() || converged {
            if converged {
                terms.last().map(|(e, w)| e.dim as f64 * w).unwrap_or(0.0)
            } else {
                0.0
            }
        } else {
            tail_bound(&spec, &table.entries)
        };
        if est_error > 1e-10 * mass {
            warning.get_or_insert_with(|| {
                format!(
                    "character series not converged at the {} cutoff (tail ~ {est_error:e})",
                    spec.group
                )
            });
        }
        Ok(HeatKernel {
            spec,
            terms,
            est_error,
            warning,
        })
    }

    pub fn cutoff_used(&self) -> usize {
        self.terms.len()
    }

    pub fn eval(&self, g: &GroupValue) -> Result<f64> {
        match (self.spec.group, g) {
            (GroupId::IntegersZ(_), GroupValue::Int(m)) => dual_heat_kernel_z(self.spec.beta, *m),
            (GroupId::LineR, GroupValue::Real(x)) => {
                let b = self.spec.beta * self.spec.conventions.scale;
                Ok((-x * x / (2.0 * b)).exp() / (2.0 * PI * b).sqrt())
            }
            _ => {
                let mut s = 0.0;
                for (e, w) in &self.terms {
                    s += w * e.character(g)?.re;
                }
                Ok(s)
            }
        }
    }

    /// `ρ_β(1) = Σ d_π² e^{-β c_π / 2}`.
    pub fn trace(&self) -> Result<f64> {
        match self.spec.group {
            GroupId::IntegersZ(_) => dual_heat_kernel_z(self.spec.beta, 0),
            GroupId::LineR => Err(Error::Unsupported("no trace on the line".into())),
            _ => Ok(self.terms.iter().map(|(e, w)| e.dim as f64 * w).sum()),
        }
    }
}

fn tail_bound(spec: &HeatKernelSpec, entries: &[Irrep]) -> f64 {
    // Bound the omitted terms by a geometric series through the next two.
    let b = spec.beta;
    let s = spec.conventions.scale;
    let (t1, t2) = match spec.group {
        GroupId::CircleU1(k) => {
            let m = k as f64 + 1.0;
            (
                2.0 * (-0.5 * b * s * m * m).exp(),
                2.0 * (-0.5 * b * s * (m + 1.0) * (m + 1.0)).exp(),
            )
        }
        GroupId::Su2(tj) => {
            let f = |two_j: f64| {
                let j = two_j / 2.0;
                (two_j + 1.0).powi(2) * (-0.5 * b * s * j * (j + 1.0)).exp()
            };
            (f(tj as f64 + 1.0), f(tj as f64 + 2.0))
        }
        _ => return entries.last().map(|e| e.dim as f64).unwrap_or(0.0),
    };
    let r = (t2 / t1).min(0.999_999);
    t1 / (1.0 - r)
}

pub fn heat_kernel_eval(spec: HeatKernelSpec, g: &GroupValue) -> Result<HeatKernelValue> {
    let hk = HeatKernel::new(spec)?;
    let value = hk.eval(g)?;
    Ok(HeatKernelValue {
        value,
        cutoff_used: hk.cutoff_used(),
        est_error: hk.est_error,
        warning: hk.warning,
    })
}

pub fn heat_kernel_trace(group: GroupId, beta: f64, conv: Conventions) -> Result<f64> {
    if let GroupId::SUq2 { q, cutoff } = group {
        return suq2_partition(q, beta, cutoff);
    }
    HeatKernel::new(HeatKernelSpec::new(group, beta).with_conventions(conv))?.trace()
}

/// `e^{-x} I_m(x)` from the ascending series.
pub fn bessel_i_scaled_series(m: u32, x: f64) -> f64 {
    if x == 0.0 {
        return if m == 0 { 1.0 } else { 0.0 };
    }
    let q = 0.25 * x * x;
    if x > 20.0 {
        // Keep the leading term finite: work with logarithms of the prefactor.
        let ln_t0 = m as f64 * (0.5 * x).ln() - ln_factorial(m) - x;
        let mut t = 1.0;
        let mut s = 1.0;
        let mut k = 0u64;
        loop {
            k += 1;
            t *= q / (k as f64 * (k + m as u64) as f64);
            s += t;
            if t < 1e-17 * s {
                break;
            }
        }
        return (ln_t0 + s.ln()).exp();
    }
    let mut t = 1.0;
    for k in 1..=m {
        t *= 0.5 * x / k as f64;
    }
    let mut s = t;
    let mut k = 0u64;
    while t > 1e-18 * s {
        k += 1;
        t *= q / (k as f64 * (k + m as u64) as f64);
        s += t;
    }
    s * (-x).exp()
}

fn ln_factorial(m: u32) -> f64 {
    (2..=m).map(|k| (k as f64).ln()).sum()
}

/// `e^{-x} I_m(x)` for `m = 0..=mmax` by Miller's downward recurrence,
/// normalised with `Σ_{m∈Z} e^{-x} I_m(x) = 1`.
pub fn bessel_i_scaled_miller(mmax: u32, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; mmax as usize + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let start = 2 * (mmax as usize + (40.0 * x.max(1.0)).sqrt() as usize + 20);
    let mut b_next = 0.0f64;
    let mut b = 1e-280f64;
    let mut sum = 0.0f64;
    for n in (1..=start).rev() {
        let b_prev = b_next + 2.0 * n as f64 / x * b;
        b_next = b;
        b = b_prev;
        let idx = n - 1;
        if idx <= mmax as usize {
            out[idx] = b;
        }
        sum += if idx == 0 { b } else { 2.0 * b };
        if b.abs() > 1e250 {
            for o in out.iter_mut() {
                *o *= 1e-250;
            }
            b *= 1e-250;
            b_next *= 1e-250;
            sum *= 1e-250;
        }
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    out
}

/// `ρ^{(Z)}_β(m) = e^{-β} I_m(β)`.
pub fn dual_heat_kernel_z(beta: f64, m: i64) -> Result<f64> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::Domain(format!("beta must be positive, got {beta}")));
    }
    let m = m.unsigned_abs();
    if m > u32::MAX as u64 {
        return Ok(0.0);
    }
    let m = m as u32;
    if beta <= 20.0 {
        Ok(bessel_i_scaled_series(m, beta))
    } else {
        Ok(bessel_i_scaled_miller(m, beta)[m as usize])
    }
}

/// `sup_g |(ρ_a * ρ_b)(g) - ρ_{a+b}(g)|` over a test grid.
pub fn convolution_check(group: GroupId, a: f64, b: f64, conv: Conventions) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::Domain("convolution parameters must be positive".into()));
    }
    let mk = |t: f64| HeatKernel::new(HeatKernelSpec::new(group, t).with_conventions(conv));
    let (ka, kb, kab) = (mk(a)?, mk(b)?, mk(a + b)?);
    let mut worst = 0.0f64;
    match group {
        GroupId::IntegersZ(_) => {
            let window = 80i64 + (4.0 * (a + b)) as i64;
            for m in -10i64..=10 {
                let mut s = 0.0;
                for k in -window..=window {
                    s += dual_heat_kernel_z(a, k)? * dual_heat_kernel_z(b, m - k)?;
                }
                worst = worst.max((s - dual_heat_kernel_z(a + b, m)?).abs());
            }
        }
        GroupId::LineR => {
            let sigma = (a + b).max(1.0).sqrt() * conv.scale.sqrt();
            let (lo, hi, n) = (-40.0 * sigma, 40.0 * sigma, 8000);
            let h = (hi - lo) / n as f64;
            for i in 0..=20 {
                let x = -3.0 * sigma + 0.3 * sigma * i as f64;
                let mut s = 0.0;
                for j in 0..=n {
                    let y = lo + h * j as f64;
                    let w = if j == 0 || j == n { 0.5 } else { 1.0 };
                    s += w * ka.eval(&GroupValue::Real(y))? * kb.eval(&GroupValue::Real(x - y))?;
                }
                worst = worst.max((s * h - kab.eval(&GroupValue::Real(x))?).abs());
            }
        }
        _ => {
            let points: Vec<GroupValue> = match group {
                GroupId::CyclicZn(_) => group.elements()?,
                GroupId::CircleU1(_) => (0..64)
                    .map(|i| GroupValue::Angle(-PI + 2.0 * PI * (i as f64 + 0.5) / 64.0))
                    .collect(),
                GroupId::Su2(_) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
                    let mut v = vec![group.identity()];
                    for _ in 0..5 {
                        v.push(group.random_element(&mut rng)?);
                    }
                    v
                }
                _ => return Err(Error::Unsupported(format!("no convolution on {group}"))),
            };
            let quad = Quadrature::for_group(group);
            for x in &points {
                let f = |h: &GroupValue| -> C64 {
                    let hinv = group.invert(h).expect("same backend");
                    let y = group.multiply(&hinv, x).expect("same backend");
                    C64::new(
                        ka.eval(h).unwrap_or(f64::NAN) * kb.eval(&y).unwrap_or(f64::NAN),
                        0.0,
                    )
                };
                let conv_val = haar_integrate_with(group, &quad, &f)?.re;
                worst = worst.max((conv_val - kab.eval(x)?).abs());
            }
        }
    }
    Ok(worst)
}

pub const SUQ2_TAIL_TOL: f64 = 1e-14;

/// `Σ_{n=1}^{cutoff} n² e^{-(β/2) c_n(q)}`.
pub fn suq2_partition(q: f64, beta: f64, cutoff: u32) -> Result<f64> {
    GroupId::SUq2 { q, cutoff }.validate()?;
    if !(beta > 0.0) {
        return Err(Error::Domain(format!("beta must be positive, got {beta}")));
    }
    let mut s = 0.0;
    let mut last = 0.0;
    for n in 1..=cutoff {
        last = (n as f64).powi(2) * (-0.5 * beta * suq2_casimir(q, n)).exp();
        s += last;
    }
    if last > SUQ2_TAIL_TOL {
        return Err(Error::Cutoff(format!(
            "last SU_q(2) term {last:e} exceeds {SUQ2_TAIL_TOL:e}; raise the cutoff"
        )));
    }
    Ok(s)
}

/// SU(2) trace with Casimir shifted to `(2j+1)²/4`, the `q → 1` limit of `c_n(q)`.
pub fn su2_matched_partition(beta: f64, two_jmax: u32) -> Result<f64> {
    let z = heat_kernel_trace(GroupId::Su2(two_jmax), beta, Conventions::default())?;
    Ok(z * (-beta / 8.0).exp())
}
