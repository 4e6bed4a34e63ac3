//! Hellinger affinities of shifted heat-kernel product measures and the
//! Kakutani dichotomy at finite truncation.

use std::f64::consts::PI;

use crate::dyadic::{Dyadic, ThompsonElement};
use crate::error::{Error, Result};
use crate::group_core::{haar_integrate, Conventions, GroupId, GroupValue, C64};
use crate::heat_kernel::{HeatKernel, HeatKernelSpec};

pub const SINGULAR_PRODUCT: f64 = 1e-6;
pub const SINGULAR_SLOPE: f64 = -0.05;
pub const NONSINGULAR_PRODUCT: f64 = 0.1;
pub const NONSINGULAR_SLOPE: f64 = -1e-3;
/// Levels used for the fitted trend.
pub const TREND_WINDOW: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Singular,
    Nonsingular,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Singular => "singular",
            Verdict::Nonsingular => "nonsingular",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffinityProduct {
    pub levels: Vec<u32>,
    /// Per-level factors in `(0, 1]`.
    pub factors: Vec<f64>,
    /// Running products; `ln` is kept so that tiny products stay comparable.
    pub log_partial: Vec<f64>,
    pub product: f64,
    /// Least-squares slope of the log running product over the last levels.
    pub slope: f64,
    pub verdict: Verdict,
}

impl AffinityProduct {
    /// Builds the product from per-level log factors.
    pub fn from_log_factors(levels: Vec<u32>, log_factors: Vec<f64>) -> Self {
        let mut acc = 0.0;
        let log_partial: Vec<f64> = log_factors
            .iter()
            .map(|l| {
                acc += l;
                acc
            })
            .collect();
        let slope = log_slope(&levels, &log_partial);
        let product = acc.exp();
        let verdict = if product < SINGULAR_PRODUCT && slope < SINGULAR_SLOPE {
            Verdict::Singular
        } else if product > NONSINGULAR_PRODUCT && slope > NONSINGULAR_SLOPE {
            Verdict::Nonsingular
        } else {
            Verdict::Inconclusive
        };
        AffinityProduct {
            levels,
            factors: log_factors.iter().map(|l| l.exp()).collect(),
            log_partial,
            product,
            slope,
            verdict,
        }
    }

    pub fn log_product(&self) -> f64 {
        self.log_partial.last().copied().unwrap_or(0.0)
    }
}

fn log_slope(levels: &[u32], y: &[f64]) -> f64 {
    let n = y.len().min(TREND_WINDOW);
    if n < 2 {
        return 0.0;
    }
    let xs: Vec<f64> = levels[levels.len() - n..].iter().map(|&l| l as f64).collect();
    let ys = &y[y.len() - n..];
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Wrapped-Gaussian form of the U(1) heat kernel, stable for small `β`.
pub fn u1_heat_density(beta: f64, theta: f64) -> f64 {
    let m = (8.0 * beta.sqrt() / (2.0 * PI)).ceil() as i64 + 2;
    let s: f64 = (-m..=m)
        .map(|k| (-(theta + 2.0 * PI * k as f64).powi(2) / (2.0 * beta)).exp())
        .sum();
    s * (2.0 * PI / beta).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HellingerStep {
    /// `∫ √(ρ_β(hg) ρ_β(g)) dg`.
    pub quadrature: f64,
    /// `√ρ_{2β}(h)`.
    pub bound: f64,
}

/// Per-coordinate Hellinger affinity of a shifted heat-kernel measure and its upper bound.
pub fn hellinger_step(group: GroupId, beta: f64, h: &GroupValue, conv: Conventions) -> Result<HellingerStep> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Domain(format!("beta must be positive, got {beta}")));
    }
    if !group.is_compact() {
        return Err(Error::Unsupported(format!(
            "Hellinger steps need a compact group, got {group}; use gaussian_line_product for the line"
        )));
    }
    if group.distance(h, &group.identity())? == 0.0 {
        return Ok(HellingerStep {
            quadrature: 1.0,
            bound: 1.0,
        });
    }
    match (group, h) {
        (GroupId::CircleU1(_), GroupValue::Angle(t)) => {
            let b = beta * conv.scale;
            let n = ((40.0 * 2.0 * PI / b.sqrt()).ceil() as usize).clamp(2048, 1 << 20);
            let dx = 2.0 * PI / n as f64;
            let q: f64 = (0..n)
                .map(|i| {
                    let g = -PI + dx * i as f64;
                    (u1_heat_density(b, t + g) * u1_heat_density(b, g)).sqrt()
                })
                .sum::<f64>()
                / n as f64;
            Ok(HellingerStep {
                quadrature: q,
                bound: u1_heat_density(2.0 * b, *t).max(0.0).sqrt(),
            })
        }
        _ => {
            let k1 = HeatKernel::new(HeatKernelSpec::new(group, beta).with_conventions(conv))?;
            let k2 = HeatKernel::new(HeatKernelSpec::new(group, 2.0 * beta).with_conventions(conv))?;
            let q = haar_integrate(group, &|g| {
                let hg = group.multiply(h, g).unwrap_or(*g);
                let v = k1.eval(&hg).unwrap_or(0.0).max(0.0) * k1.eval(g).unwrap_or(0.0).max(0.0);
                C64::new(v.sqrt(), 0.0)
            })?;
            Ok(HellingerStep {
                quadrature: q.re,
                bound: k2.eval(h)?.max(0.0).sqrt(),
            })
        }
    }
}

/// `∏_N step(2^{-N}β)^s` over `levels` for a shift supported on `s` coordinates.
pub fn hellinger_product(
    group: GroupId,
    beta: f64,
    h: &GroupValue,
    support: u32,
    levels: std::ops::RangeInclusive<u32>,
    conv: Conventions,
) -> Result<AffinityProduct> {
    let mut lv = Vec::new();
    let mut logs = Vec::new();
    for n in levels {
        let step = hellinger_step(group, beta * 2f64.powi(-(n as i32)), h, conv)?;
        lv.push(n);
        logs.push(support as f64 * step.quadrature.ln());
    }
    Ok(AffinityProduct::from_log_factors(lv, logs))
}

/// `(1 − e^{-2^{-N}β})^{s/2}`, the Z_2 factor with sign-character Casimir 1.
pub fn z2_closed_form_factor(beta: f64, level: u32, support: u32) -> f64 {
    (-(-beta * 2f64.powi(-(level as i32))).exp_m1()).powf(support as f64 / 2.0)
}

/// Shifted Gaussian measures on the line: factor `e^{-2^N ‖x‖²/(8β)}` per level.
pub fn gaussian_line_product(beta: f64, x_norm_sq: f64, levels: std::ops::RangeInclusive<u32>) -> Result<AffinityProduct> {
    if !(beta > 0.0) {
        return Err(Error::Domain(format!("beta must be positive, got {beta}")));
    }
    let lv: Vec<u32> = levels.collect();
    let logs = lv
        .iter()
        .map(|&n| -2f64.powi(n as i32) * x_norm_sq / (8.0 * beta))
        .collect();
    Ok(AffinityProduct::from_log_factors(lv, logs))
}

/// `-‖x‖²/(8β) Σ_{N₀ ≤ N ≤ N₁} 2^N` in closed form.
pub fn gaussian_line_log_closed_form(beta: f64, x_norm_sq: f64, n0: u32, n1: u32) -> f64 {
    -x_norm_sq / (8.0 * beta) * (2f64.powi(n1 as i32 + 1) - 2f64.powi(n0 as i32))
}

/// `Σ_n e^{-β(n+a)²/2}`, by Poisson summation when `β` is small.
fn theta_sum(beta: f64, a: f64) -> f64 {
    if beta >= 1.0 {
        let m = (12.0 / beta.sqrt()).ceil() as i64 + 2;
        (-m..=m)
            .map(|n| (-beta * (n as f64 + a).powi(2) / 2.0).exp())
            .sum()
    } else {
        let m = (12.0 * beta.sqrt() / (2.0 * PI)).ceil() as i64 + 2;
        let s: f64 = (-m..=m)
            .map(|k| {
                let k = k as f64;
                (-2.0 * PI * PI * k * k / beta).exp() * (2.0 * PI * k * a).cos()
            })
            .sum();
        s * (2.0 * PI / beta).sqrt()
    }
}

/// Hellinger affinity `Σ_n √(m_β(n) m_β(n+k))` of the U(1) heat-kernel measure on Z.
pub fn z_affinity(beta: f64, k: i64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let k = k as f64;
    (-beta * k * k / 8.0).exp() * theta_sum(beta, k / 2.0) / theta_sum(beta, 0.0)
}

/// Affinity between the measures `m_{β₁}` and `m_{β₂}` on Z.
pub fn z_cross_affinity(b1: f64, b2: f64) -> f64 {
    let b = (b1 + b2) / 2.0;
    theta_sum(b, 0.0) / (theta_sum(b1, 0.0) * theta_sum(b2, 0.0)).sqrt()
}

/// Number of dyadics in `(0, 1)` first appearing at `level`.
pub fn dyadics_at_level(level: u32) -> f64 {
    if level == 0 {
        0.0
    } else {
        2f64.powi(level as i32 - 1)
    }
}

/// The table `β_d = 2^{-τ ℓ(d)}` with `ℓ(d)` the level at which `d` first appears.
pub fn geometric_beta(tau: f64) -> impl Fn(u32) -> f64 {
    move |level| 2f64.powf(-tau * level as f64)
}

/// Product of `A_d(k)` over the dyadics up to `max_level` for a level-dependent `β` table.
pub fn kakutani_affinity_z(beta_at_level: &dyn Fn(u32) -> f64, k: i64, max_level: u32) -> Result<AffinityProduct> {
    let mut lv = Vec::new();
    let mut logs = Vec::new();
    for n in 1..=max_level {
        let b = beta_at_level(n);
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::Domain(format!("beta at level {n} must be positive, got {b}")));
        }
        lv.push(n);
        logs.push(dyadics_at_level(n) * z_affinity(b, k).ln());
    }
    Ok(AffinityProduct::from_log_factors(lv, logs))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct L1Report {
    pub partial_sum: f64,
    /// Ratio of the last two per-level contributions.
    pub ratio: f64,
    pub verdict: Verdict,
}

/// `Σ_d β_d` to `max_level`; summable when per-level contributions shrink geometrically.
pub fn l1_verdict(beta_at_level: &dyn Fn(u32) -> f64, max_level: u32) -> L1Report {
    let terms: Vec<f64> = (1..=max_level.max(2))
        .map(|n| dyadics_at_level(n) * beta_at_level(n))
        .collect();
    let partial_sum = terms.iter().sum();
    let k = terms.len();
    let ratio = terms[k - 1] / terms[k - 2];
    let verdict = if ratio < 0.9 {
        Verdict::Nonsingular
    } else if ratio >= 1.0 {
        Verdict::Singular
    } else {
        Verdict::Inconclusive
    };
    L1Report {
        partial_sum,
        ratio,
        verdict,
    }
}

/// Affinity of the `β^τ` product measure with its rearrangement by `x0`, over dyadics to `max_level`.
///
/// A finite shadow only: coordinates whose image lies beyond `max_level` are skipped.
pub fn thompson_rearrangement_affinity(tau: f64, max_level: u32) -> Result<AffinityProduct> {
    if max_level > 20 {
        return Err(Error::Resource {
            what: "dyadic enumeration".into(),
            required: 1 << max_level,
            limit: 1 << 20,
        });
    }
    let f = ThompsonElement::x0();
    let beta = geometric_beta(tau);
    let mut lv = Vec::new();
    let mut logs = Vec::new();
    for n in 1..=max_level {
        let mut acc = 0.0;
        for m in (1..(1u64 << n)).step_by(2) {
            let d = Dyadic::new(m, n);
            let img = f.apply(d)?;
            acc += z_cross_affinity(beta(n), beta(img.level())).ln();
        }
        lv.push(n);
        logs.push(acc);
    }
    Ok(AffinityProduct::from_log_factors(lv, logs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quarter() -> Conventions {
        Conventions::quarter_zn()
    }

    #[test]
    fn identity_shift_is_one() {
        let s = hellinger_step(GroupId::CircleU1(32), 0.7, &GroupValue::Angle(0.0), Conventions::default()).unwrap();
        assert_eq!(s.quadrature, 1.0);
    }

    #[test]
    fn u1_step_below_bound() {
        let s = hellinger_step(GroupId::CircleU1(32), 1.0, &GroupValue::Angle(PI), Conventions::default()).unwrap();
        assert!(s.quadrature <= s.bound + 1e-8, "{s:?}");
        assert!(s.quadrature > 0.0 && s.bound < 1.0);
    }

    #[test]
    fn step_vanishes_as_beta_shrinks() {
        let vals: Vec<f64> = [1.0, 0.1, 0.01, 0.001]
            .iter()
            .map(|&b| {
                hellinger_step(GroupId::CircleU1(32), b, &GroupValue::Angle(1.0), Conventions::default())
                    .unwrap()
                    .quadrature
            })
            .collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
        assert!(vals[3] < 1e-50);
    }

    #[test]
    fn u1_density_matches_character_series() {
        let hk = HeatKernel::new(HeatKernelSpec::new(GroupId::CircleU1(32), 0.8)).unwrap();
        for t in [0.0, 0.4, 2.0, PI] {
            let a = hk.eval(&GroupValue::Angle(t)).unwrap();
            assert!((a - u1_heat_density(0.8, t)).abs() < 1e-12);
        }
    }

    #[test]
    fn z2_matches_closed_form() {
        let p = hellinger_product(GroupId::CyclicZn(2), 1.0, &GroupValue::Residue(1), 1, 0..=30, quarter()).unwrap();
        for (i, &n) in p.levels.iter().enumerate() {
            assert!((p.factors[i] - z2_closed_form_factor(1.0, n, 1)).abs() < 1e-12);
        }
        // sqrt(1 - e^{-1}) = 0.7950601...
        assert!((p.factors[0] - 0.795_060_1).abs() < 1e-7);
        assert_eq!(p.verdict, Verdict::Singular);
    }

    #[test]
    fn z2_step_saturates_bound() {
        let s = hellinger_step(GroupId::CyclicZn(2), 0.3, &GroupValue::Residue(1), quarter()).unwrap();
        assert!((s.quadrature - s.bound).abs() < 1e-14);
    }

    #[test]
    fn gaussian_line_closed_form() {
        let p = gaussian_line_product(2.0, 0.5, 3..=12).unwrap();
        let c = gaussian_line_log_closed_form(2.0, 0.5, 3, 12);
        assert!((p.log_product() - c).abs() < 1e-9 * c.abs());
        assert_eq!(p.verdict, Verdict::Singular);
    }

    #[test]
    fn z_affinity_against_direct_sum() {
        for &b in &[0.05, 0.7, 3.0] {
            for k in 1..4i64 {
                let m = |n: i64| (-b * (n * n) as f64 / 2.0).exp();
                let z: f64 = (-400..=400).map(m).sum();
                let direct: f64 = (-400..=400).map(|n| (m(n) * m(n + k)).sqrt()).sum::<f64>() / z;
                assert!((direct - z_affinity(b, k)).abs() < 1e-13, "{b} {k}");
            }
        }
        assert_eq!(z_affinity(0.3, 0), 1.0);
    }

    #[test]
    fn geometric_tables_follow_l1() {
        let two = kakutani_affinity_z(&geometric_beta(2.0), 1, 20).unwrap();
        assert_eq!(two.verdict, Verdict::Nonsingular);
        assert_eq!(l1_verdict(&geometric_beta(2.0), 20).verdict, Verdict::Nonsingular);
        let half = kakutani_affinity_z(&geometric_beta(0.5), 1, 20).unwrap();
        assert_eq!(half.verdict, Verdict::Singular);
        assert!(half.product < 1e-6);
        assert_eq!(l1_verdict(&geometric_beta(0.5), 20).verdict, Verdict::Singular);
        let zero = kakutani_affinity_z(&geometric_beta(0.5), 0, 20).unwrap();
        assert_eq!(zero.product, 1.0);
    }

    #[test]
    fn homogeneous_beta_is_singular_by_level_40() {
        let p = kakutani_affinity_z(&|_| 0.5, 1, 40).unwrap();
        assert!(p.product < 1e-6);
        assert_eq!(p.verdict, Verdict::Singular);
    }

    #[test]
    fn rearrangement_shadow_decays() {
        let p = thompson_rearrangement_affinity(2.5, 14).unwrap();
        assert!(p.factors.iter().all(|&f| f <= 1.0));
        assert!(p.log_partial.windows(2).all(|w| w[1] <= w[0]));
    }
}
