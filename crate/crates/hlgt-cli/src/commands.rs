use std::ops::RangeInclusive;

use anyhow::{anyhow, bail, Result};
use clap::{Args, Subcommand, ValueEnum};
use serde_json::Value;

use hlgt::dyadic::{OrientedLattice, Orientation};
use hlgt::field_algebra::{eta_zeta_residuals, jones_checks, refine_unitaries, FiniteGroup};
use hlgt::group_core::{irreps, IrrepTable};
use hlgt::hamiltonian::{
    gibbs_is_heat_kernel_residual, ks_strong_matrix, refinement_coherence_residual,
    trotter_residual, wilson_loop_energy, wilson_loop_residual, CouplingSchedule,
};
use hlgt::heat_kernel::{convolution_check, heat_kernel_eval, heat_kernel_trace, HeatKernelSpec};
use hlgt::measure_analysis::{
    geometric_beta, hellinger_product, kakutani_affinity_z, l1_verdict, z2_closed_form_factor,
    AffinityProduct,
};
use hlgt::observables::{
    cylindrical_wiener_residual, decay_curve, duality_check, two_point, TwoPointSpec,
};
use hlgt::rg_flow::{classify_flow, ising_conjugacy_residual, plaquette_flow_residual};
use hlgt::states::{
    coherence_residual, family_inversion_residual, gauge_invariance_residual, FiniteState,
    StateFamily,
};
use hlgt::{Conventions, GroupId, C64};

use crate::record::{num, Quantity, Record};

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Irreducible representations with dimensions and Casimirs.
    Irreps(IrrepsArgs),
    /// Heat kernel value at an element, or its trace.
    HeatKernel(HeatKernelArgs),
    /// Residual checks; exit status 2 when a residual exceeds the tolerance.
    #[command(subcommand)]
    Verify(Verify),
    /// Strong-coupling Kogut-Susskind spectrum.
    Spectrum(SpectrumArgs),
    /// Trotter-Kato residuals for the truncated O(2) rotor.
    Trotter(TrotterArgs),
    /// Two-point function of Wilson line insertions.
    TwoPoint(TwoPointArgs),
    /// Renormalisation flow diagnostics.
    #[command(subcommand)]
    Rg(Rg),
    /// Hellinger affinity product for a shifted heat-kernel measure.
    Hellinger(HellingerArgs),
    /// Kakutani affinity products for dual heat-kernel measures on Z.
    Kakutani(KakutaniArgs),
    /// Abelian holonomy duality check.
    Duality(DualityArgs),
    /// Jones action group law and refinement compatibility.
    Jones(JonesArgs),
}

#[derive(Args, Debug, Clone)]
pub struct IrrepsArgs {
    #[arg(long)]
    pub group: GroupId,
    /// Number of entries to print for infinite families.
    #[arg(long, default_value_t = 10)]
    pub count: usize,
}

#[derive(Args, Debug, Clone)]
pub struct HeatKernelArgs {
    #[arg(long)]
    pub group: GroupId,
    #[arg(long)]
    pub beta: f64,
    /// Group element; identity when absent.
    #[arg(long, allow_hyphen_values = true)]
    pub at: Option<String>,
    /// Print Σ d² e^{-βc/2} instead of a point value.
    #[arg(long)]
    pub trace: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Heat,
    Dual,
    Vacuum,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Verify {
    /// Coherence of a state family between consecutive levels.
    Coherence(CoherenceArgs),
    /// Inversion identity of the per-edge factors.
    Inversion(InversionArgs),
    /// Heat-kernel semigroup ρ_a * ρ_b = ρ_{a+b}.
    Convolution(ConvolutionArgs),
    /// Gauge invariance of a finite-group state.
    Gauge(GaugeArgs),
    /// Gibbs state, Wilson loop and refinement checks of the Hamiltonian.
    Hamiltonian(HamiltonianArgs),
    /// η/ζ intertwiners and the elementary refinement unitaries.
    Intertwiners(IntertwinerArgs),
    /// Dual state on a cylinder function against the path-space integral.
    Cylinder(CylinderArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CoherenceArgs {
    #[arg(long)]
    pub group: GroupId,
    #[arg(long, value_enum, default_value = "heat")]
    pub family: Family,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Length scale of the dual family.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Inclusive level range `a..b`.
    #[arg(long, default_value = "0..2", value_parser = parse_levels)]
    pub levels: RangeInclusive<u32>,
}

#[derive(Args, Debug, Clone)]
pub struct InversionArgs {
    #[arg(long)]
    pub group: GroupId,
    #[arg(long, value_enum, default_value = "heat")]
    pub family: Family,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 1)]
    pub level: u32,
}

#[derive(Args, Debug, Clone)]
pub struct ConvolutionArgs {
    #[arg(long)]
    pub group: GroupId,
    #[arg(long)]
    pub beta: f64,
    #[arg(long)]
    pub beta2: f64,
}

#[derive(Args, Debug, Clone)]
pub struct GaugeArgs {
    #[arg(long)]
    pub group: GroupId,
    #[arg(long, value_enum, default_value = "heat")]
    pub family: Family,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 1)]
    pub level: u32,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Identify the endpoints of [0, L].
    #[arg(long)]
    pub periodic: bool,
}

#[derive(Args, Debug, Clone)]
pub struct HamiltonianArgs {
    /// A cyclic group `zN`.
    #[arg(long)]
    pub group: GroupId,
    #[arg(long, default_value_t = 1)]
    pub level: u32,
    /// Bare coupling g_b.
    #[arg(long, default_value_t = 1.0)]
    pub gb: f64,
    #[arg(long = "L", default_value_t = 1.0)]
    pub length: f64,
    /// Lattice inverse temperature β_N for the Gibbs check.
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value = "1")]
    pub irrep: String,
}

#[derive(Args, Debug, Clone)]
pub struct IntertwinerArgs {
    #[arg(long)]
    pub group: GroupId,
    #[arg(long, default_value_t = 1)]
    pub level: u32,
}

#[derive(Args, Debug, Clone)]
pub struct CylinderArgs {
    #[arg(long)]
    pub group: GroupId,
    #[arg(long, default_value_t = 1.0)]
    pub beta0: f64,
    #[arg(long, default_value_t = 2)]
    pub level: u32,
    #[arg(long = "L", default_value_t = 1.0)]
    pub length: f64,
    /// Character index k of the test function χ_k(g_1) χ_k(g_last)^*.
    #[arg(long, default_value_t = 1)]
    pub k: u32,
}

#[derive(Args, Debug, Clone)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub group: GroupId,
    #[arg(long, default_value_t = 1)]
    pub level: u32,
    #[arg(long, default_value_t = 1.0)]
    pub gb: f64,
    #[arg(long = "L", default_value_t = 1.0)]
    pub length: f64,
    /// Irrep whose Wilson-loop energy is reported.
    #[arg(long)]
    pub irrep: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct TrotterArgs {
    #[arg(long, default_value_t = 16)]
    pub cutoff: u32,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.5)]
    pub gtilde: f64,
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
    pub steps: Vec<u32>,
}

#[derive(Args, Debug, Clone)]
pub struct TwoPointArgs {
    #[arg(long)]
    pub group: GroupId,
    #[arg(long)]
    pub beta0: f64,
    #[arg(long = "L", conflicts_with = "thermo", required_unless_present = "thermo")]
    pub length: Option<f64>,
    /// Infinite-volume limit.
    #[arg(long)]
    pub thermo: bool,
    #[arg(long)]
    pub irrep: String,
    #[arg(long, default_value_t = 0.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.0)]
    pub tau2: f64,
    /// Comma-separated separations; one record each, starting at τ = 0.
    #[arg(long, value_delimiter = ',')]
    pub curve: Option<Vec<f64>>,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Rg {
    /// Flow of β₀|I|^ν towards the coarsest level.
    Flow(FlowArgs),
    /// Z_2 conjugacy of the flow with Ising decimation.
    Ising(IsingArgs),
    /// Plaquette coupling flow as a heat-kernel convolution.
    Plaquette(ConvolutionArgs),
}

#[derive(Args, Debug, Clone)]
pub struct FlowArgs {
    #[arg(long)]
    pub nu: f64,
    #[arg(long)]
    pub beta0: f64,
    #[arg(long, default_value_t = 30)]
    pub steps: u32,
}

#[derive(Args, Debug, Clone)]
pub struct IsingArgs {
    #[arg(long, default_value_t = 0.01)]
    pub beta_min: f64,
    #[arg(long, default_value_t = 10.0)]
    pub beta_max: f64,
    #[arg(long, default_value_t = 200)]
    pub points: usize,
}

#[derive(Args, Debug, Clone)]
pub struct HellingerArgs {
    #[arg(long)]
    pub group: GroupId,
    #[arg(long)]
    pub beta: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub shift: String,
    #[arg(long, default_value = "0..40", value_parser = parse_levels)]
    pub levels: RangeInclusive<u32>,
    /// Number of coordinates carrying the shift at each level.
    #[arg(long, default_value_t = 1)]
    pub support: u32,
}

#[derive(Args, Debug, Clone)]
pub struct KakutaniArgs {
    /// Geometric profile β_d = 2^{-τN}.
    #[arg(long, conflicts_with = "constant", required_unless_present = "constant")]
    pub tau: Option<f64>,
    /// Homogeneous profile β_d = b.
    #[arg(long)]
    pub constant: Option<f64>,
    #[arg(long, default_value_t = 1, allow_hyphen_values = true)]
    pub shift: i64,
    #[arg(long, default_value_t = 20)]
    pub levels: u32,
}

#[derive(Args, Debug, Clone)]
pub struct DualityArgs {
    #[arg(long)]
    pub group: GroupId,
    #[arg(long, default_value_t = 2)]
    pub level: u32,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
}

#[derive(Args, Debug, Clone)]
pub struct JonesArgs {
    #[arg(long, default_value = "z2")]
    pub group: GroupId,
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
}

/// `a..b` or `a..=b` (both inclusive), or a single level.
pub fn parse_levels(s: &str) -> std::result::Result<RangeInclusive<u32>, String> {
    let bad = || format!("expected a level range like 0..3, got '{s}'");
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (a, b.trim_start_matches('=')),
        None => (s, s),
    };
    let a: u32 = a.trim().parse().map_err(|_| bad())?;
    let b: u32 = b.trim().parse().map_err(|_| bad())?;
    if b < a {
        return Err(bad());
    }
    Ok(a..=b)
}

pub struct Ctx {
    pub seed: u64,
    pub conv: Conventions,
}

impl Ctx {
    fn notes(&self) -> String {
        self.conv.notes()
    }

    fn rec(&self, cmd: &str, group: &str, q: Quantity) -> Record {
        Record::new(cmd, group, q, self.seed, &self.notes())
    }
}

fn family(kind: Family, group: GroupId, beta: f64, scale: f64, conv: Conventions) -> StateFamily {
    match kind {
        Family::Heat => StateFamily::heat(group, beta),
        Family::Dual => StateFamily::dual(group, beta, scale),
        Family::Vacuum => StateFamily::vacuum(group),
    }
    .with_conventions(conv)
}

fn family_name(kind: Family) -> &'static str {
    match kind {
        Family::Heat => "heat",
        Family::Dual => "dual",
        Family::Vacuum => "vacuum",
    }
}

fn cyclic_order(group: GroupId) -> Result<u32> {
    match group {
        GroupId::CyclicZn(n) => Ok(n),
        g => bail!("this command needs a cyclic group zN, got {g}"),
    }
}

fn finite(group: GroupId) -> Result<FiniteGroup> {
    Ok(FiniteGroup::from_group_id(group)?)
}

fn irrep_entry(tbl: &IrrepTable, label: &str) -> Result<hlgt::group_core::Irrep> {
    Ok(tbl.entries[tbl.find(label)?])
}

fn affinity_extras(r: Record, p: &AffinityProduct) -> Record {
    let factors: Vec<Value> = p.factors.iter().map(|&f| num(f)).collect();
    r.extra("verdict", Value::String(p.verdict.as_str().into()))
        .extra("slope", num(p.slope))
        .extra("log_product", num(p.log_partial.last().copied().unwrap_or(0.0)))
        .extra("factors", Value::Array(factors))
}

pub fn run(cmd: &Command, ctx: &Ctx) -> Result<Vec<Record>> {
    match cmd {
        Command::Irreps(a) => run_irreps(a, ctx),
        Command::HeatKernel(a) => run_heat_kernel(a, ctx),
        Command::Verify(v) => run_verify(v, ctx),
        Command::Spectrum(a) => run_spectrum(a, ctx),
        Command::Trotter(a) => run_trotter(a, ctx),
        Command::TwoPoint(a) => run_two_point(a, ctx),
        Command::Rg(r) => run_rg(r, ctx),
        Command::Hellinger(a) => run_hellinger(a, ctx),
        Command::Kakutani(a) => run_kakutani(a, ctx),
        Command::Duality(a) => {
            let rep = duality_check(a.group, a.level, a.samples, ctx.seed)?;
            Ok(vec![ctx
                .rec("duality", &a.group.to_string(), Quantity::Residual(rep.residual))
                .param("level", a.level)
                .param("samples", a.samples)
                .extra("checked", Value::Number((rep.checked as u64).into()))
                .extra("exhaustive", Value::Bool(rep.exhaustive))])
        }
        Command::Jones(a) => {
            let rep = jones_checks(&finite(a.group)?, a.samples, ctx.seed)?;
            let g = a.group.to_string();
            Ok(vec![
                ctx.rec("jones", &g, Quantity::Residual(rep.group_law))
                    .param("check", "group_law")
                    .param("samples", rep.samples),
                ctx.rec("jones", &g, Quantity::Residual(rep.compatibility))
                    .param("check", "refinement_compatibility")
                    .param("samples", rep.samples),
            ])
        }
    }
}

fn run_irreps(a: &IrrepsArgs, ctx: &Ctx) -> Result<Vec<Record>> {
    let tbl = irreps(a.group, ctx.conv)?;
    let g = a.group.to_string();
    Ok(tbl
        .entries
        .iter()
        .take(a.count)
        .map(|e| {
            ctx.rec("irreps", &g, Quantity::Value(e.casimir))
                .param("label", e.label.to_string())
                .extra("dim", Value::Number(e.dim.into()))
        })
        .collect())
}

fn run_heat_kernel(a: &HeatKernelArgs, ctx: &Ctx) -> Result<Vec<Record>> {
    let g = a.group.to_string();
    if a.trace {
        let t = heat_kernel_trace(a.group, a.beta, ctx.conv)?;
        return Ok(vec![ctx
            .rec("heat-kernel", &g, Quantity::Value(t))
            .param("beta", a.beta)
            .param("quantity", "trace")]);
    }
    let at = match &a.at {
        Some(s) => a.group.parse_element(s)?,
        None => a.group.identity(),
    };
    let v = heat_kernel_eval(
        HeatKernelSpec::new(a.group, a.beta).with_conventions(ctx.conv),
        &at,
    )?;
    let mut r = ctx
        .rec("heat-kernel", &g, Quantity::Value(v.value))
        .param("beta", a.beta)
        .param("at", at.to_string())
        .est_error(v.est_error)
        .extra("cutoff_used", Value::Number((v.cutoff_used as u64).into()));
    if let Some(w) = v.warning {
        r = r.extra("warning", Value::String(w));
    }
    Ok(vec![r])
}

fn run_verify(v: &Verify, ctx: &Ctx) -> Result<Vec<Record>> {
    match v {
        Verify::Coherence(a) => {
            let fam = family(a.family, a.group, a.beta, a.scale, ctx.conv);
            let g = a.group.to_string();
            let mut out = Vec::new();
            let (lo, hi) = (*a.levels.start(), *a.levels.end());
            for n in lo..hi.max(lo + 1) {
                let coarse = OrientedLattice::cofinal(n, Orientation::Left);
                let fine = OrientedLattice::cofinal(n + 1, Orientation::Left);
                let rep = coherence_residual(&fam, &coarse, &fine)?;
                let mut r = ctx
                    .rec("verify coherence", &g, Quantity::Residual(rep.residual))
                    .param("family", family_name(a.family))
                    .param("beta", a.beta)
                    .param("coarse", n)
                    .param("fine", n + 1)
                    .extra("spanning_set", Value::String(rep.spanning_set));
                if let Some(ir) = rep.integral_residual {
                    r = r.extra("integral_residual", num(ir));
                }
                out.push(r);
            }
            Ok(out)
        }
        Verify::Inversion(a) => {
            let fam = family(a.family, a.group, a.beta, 1.0, ctx.conv);
            let lat = OrientedLattice::cofinal(a.level, Orientation::Left);
            let mut worst: f64 = 0.0;
            for e in 0..lat.num_edges() {
                worst = worst.max(family_inversion_residual(&fam, &lat, e)?);
            }
            Ok(vec![ctx
                .rec("verify inversion", &a.group.to_string(), Quantity::Residual(worst))
                .param("family", family_name(a.family))
                .param("beta", a.beta)
                .param("level", a.level)])
        }
        Verify::Convolution(a) => {
            let r = convolution_check(a.group, a.beta, a.beta2, ctx.conv)?;
            Ok(vec![ctx
                .rec("verify convolution", &a.group.to_string(), Quantity::Residual(r))
                .param("beta", a.beta)
                .param("beta2", a.beta2)])
        }
        Verify::Gauge(a) => {
            let fam = family(a.family, a.group, a.beta, 1.0, ctx.conv);
            let lat = OrientedLattice::cofinal(a.level, Orientation::Left);
            let st = FiniteState::for_family(&fam, &lat)?;
            let r = gauge_invariance_residual(&st, &lat, a.periodic, a.samples, ctx.seed)?;
            Ok(vec![ctx
                .rec("verify gauge", &a.group.to_string(), Quantity::Residual(r))
                .param("family", family_name(a.family))
                .param("beta", a.beta)
                .param("level", a.level)
                .param("samples", a.samples)
                .param("periodic", a.periodic)])
        }
        Verify::Hamiltonian(a) => {
            let n = cyclic_order(a.group)?;
            let sched = CouplingSchedule::from_bare(a.gb, a.length)?;
            let g = a.group.to_string();
            let base = |check: &str, r: f64| {
                ctx.rec("verify hamiltonian", &g, Quantity::Residual(r))
                    .param("check", check)
                    .param("level", a.level)
                    .param("gb", a.gb)
                    .param("L", a.length)
            };
            Ok(vec![
                base(
                    "gibbs_heat_kernel",
                    gibbs_is_heat_kernel_residual(n, a.level, a.beta, &sched, ctx.conv)?,
                )
                .param("beta", a.beta),
                base(
                    "wilson_loop",
                    wilson_loop_residual(n, &a.irrep, a.level, &sched, ctx.conv)?,
                )
                .param("irrep", a.irrep.as_str()),
                base(
                    "refinement",
                    refinement_coherence_residual(n, a.level, a.level + 1, &sched, ctx.conv)?,
                ),
            ])
        }
        Verify::Intertwiners(a) => {
            let fg = finite(a.group)?;
            let (eta, zeta) = eta_zeta_residuals(&fg, a.level)?;
            let u = refine_unitaries(&fg)?;
            let unit = u
                .u_l
                .unitarity_residual()
                .max(u.v_r.unitarity_residual())
                .max(u.u_iota.unitarity_residual());
            let flip = u
                .flip
                .compose(&u.u_l)?
                .compose(&u.flip)?
                .max_abs_diff(&u.v_r);
            let g = a.group.to_string();
            let rec = |check: &str, r: f64| {
                ctx.rec("verify intertwiners", &g, Quantity::Residual(r))
                    .param("check", check)
                    .param("level", a.level)
            };
            Ok(vec![
                rec("eta", eta),
                rec("zeta", zeta),
                rec("unitarity", unit),
                rec("flip", flip),
            ])
        }
        Verify::Cylinder(a) => {
            let n = cyclic_order(a.group)? as usize;
            let k = a.k as usize % n;
            let f = move |c: &[usize]| {
                let ph = |x: usize| 2.0 * std::f64::consts::PI * (k * x) as f64 / n as f64;
                C64::from_polar(1.0, ph(c[0]) - ph(c[c.len() - 1]))
            };
            let r = cylindrical_wiener_residual(n, a.beta0, a.level, a.length, &f)?;
            Ok(vec![ctx
                .rec("verify cylinder", &a.group.to_string(), Quantity::Residual(r))
                .param("beta0", a.beta0)
                .param("level", a.level)
                .param("L", a.length)
                .param("k", a.k)])
        }
    }
}

fn run_spectrum(a: &SpectrumArgs, ctx: &Ctx) -> Result<Vec<Record>> {
    let sched = CouplingSchedule::from_bare(a.gb, a.length)?;
    let h = ks_strong_matrix(a.group, a.level, &sched, ctx.conv)?;
    let g = a.group.to_string();
    let rec = |q: &str, v: f64| {
        ctx.rec("spectrum", &g, Quantity::Value(v))
            .param("quantity", q)
            .param("level", a.level)
            .param("gb", a.gb)
            .param("L", a.length)
    };
    let mut out = vec![rec("ground_energy", h.ground_energy()?), rec("gap", h.gap())];
    if let Some(label) = &a.irrep {
        let tbl = irreps(a.group, ctx.conv)?;
        let e = irrep_entry(&tbl, label)?;
        out.push(
            rec(
                "wilson_loop_energy",
                wilson_loop_energy(a.group, label, &sched, ctx.conv)?,
            )
            .param("irrep", e.label.to_string()),
        );
    }
    Ok(out)
}

fn run_trotter(a: &TrotterArgs, ctx: &Ctx) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    let mut prev: Option<f64> = None;
    for &n in &a.steps {
        let r = trotter_residual(a.cutoff, a.beta, a.gtilde, n)?;
        let mut rec = ctx
            .rec("trotter", "u1", Quantity::Value(r))
            .param("cutoff", a.cutoff)
            .param("beta", a.beta)
            .param("gtilde", a.gtilde)
            .param("steps", n);
        if let Some(p) = prev {
            rec = rec.extra("ratio", num(r / p));
        }
        prev = Some(r);
        out.push(rec);
    }
    Ok(out)
}

fn run_two_point(a: &TwoPointArgs, ctx: &Ctx) -> Result<Vec<Record>> {
    let tbl = irreps(a.group, ctx.conv)?;
    let irrep = irrep_entry(&tbl, &a.irrep)?.label;
    let length = if a.thermo { None } else { a.length };
    let spec = TwoPointSpec::new(a.group, a.beta0, length, irrep, a.tau, a.tau2)
        .with_conventions(ctx.conv);
    let g = a.group.to_string();
    let base = |r: Record| {
        let r = r
            .param("beta0", a.beta0)
            .param("irrep", irrep.to_string());
        match length {
            Some(l) => r.param("L", l),
            None => r.param("L", "inf"),
        }
    };
    if let Some(seps) = &a.curve {
        return Ok(decay_curve(&spec, seps)?
            .into_iter()
            .map(|(s, v)| base(ctx.rec("two-point", &g, Quantity::Value(v))).param("separation", s))
            .collect());
    }
    let v = two_point(&spec)?;
    let mut r = base(ctx.rec("two-point", &g, Quantity::Value(v.series)))
        .param("tau", a.tau)
        .param("tau2", a.tau2)
        .est_error(v.est_error);
    if length.is_some() {
        r = r
            .extra("oracle", num(v.oracle))
            .extra("partition", num(v.partition));
    }
    Ok(vec![r])
}

fn run_rg(r: &Rg, ctx: &Ctx) -> Result<Vec<Record>> {
    match r {
        Rg::Flow(a) => {
            let rec = classify_flow(a.nu, a.beta0, a.steps)?;
            Ok(rec
                .steps
                .iter()
                .map(|s| {
                    ctx.rec("rg flow", "-", Quantity::Value(s.beta))
                        .param("nu", a.nu)
                        .param("beta0", a.beta0)
                        .param("step", s.step)
                        .extra("distance", num(s.distance))
                        .extra("class", Value::String(rec.class.as_str().into()))
                        .ok(rec.monotone)
                })
                .collect())
        }
        Rg::Ising(a) => {
            if a.points < 2 || !(a.beta_min > 0.0 && a.beta_max > a.beta_min) {
                bail!("need 0 < beta-min < beta-max and at least 2 points");
            }
            let h = (a.beta_max - a.beta_min) / (a.points - 1) as f64;
            let grid: Vec<f64> = (0..a.points).map(|i| a.beta_min + h * i as f64).collect();
            let res = ising_conjugacy_residual(&grid)?;
            Ok(vec![ctx
                .rec("rg ising", "z2", Quantity::Residual(res))
                .param("beta_min", a.beta_min)
                .param("beta_max", a.beta_max)
                .param("points", a.points)])
        }
        Rg::Plaquette(a) => {
            let res = plaquette_flow_residual(a.group, a.beta, a.beta2, ctx.conv)?;
            Ok(vec![ctx
                .rec("rg plaquette", &a.group.to_string(), Quantity::Residual(res))
                .param("beta", a.beta)
                .param("beta2", a.beta2)])
        }
    }
}

fn run_hellinger(a: &HellingerArgs, ctx: &Ctx) -> Result<Vec<Record>> {
    let h = a.group.parse_element(&a.shift)?;
    let p = hellinger_product(a.group, a.beta, &h, a.support, a.levels.clone(), ctx.conv)?;
    let mut r = ctx
        .rec("hellinger", &a.group.to_string(), Quantity::Value(p.product))
        .param("beta", a.beta)
        .param("shift", h.to_string())
        .param("levels", format!("{}..{}", a.levels.start(), a.levels.end()))
        .param("support", a.support);
    if a.group == GroupId::CyclicZn(2) && h != a.group.identity() && ctx.conv.zn == hlgt::group_core::ZnCasimir::Quarter {
        let closed: f64 = a
            .levels
            .clone()
            .map(|n| z2_closed_form_factor(a.beta, n, a.support).ln())
            .sum();
        r = r.extra("closed_form", num(closed.exp()));
    }
    Ok(vec![affinity_extras(r, &p)])
}

fn run_kakutani(a: &KakutaniArgs, ctx: &Ctx) -> Result<Vec<Record>> {
    let (profile, beta_fn): (String, Box<dyn Fn(u32) -> f64>) = match (a.tau, a.constant) {
        (Some(t), _) => (format!("geometric tau={t}"), Box::new(geometric_beta(t))),
        (None, Some(b)) if b > 0.0 => (format!("constant {b}"), Box::new(move |_| b)),
        (None, Some(b)) => bail!("constant beta must be positive, got {b}"),
        (None, None) => return Err(anyhow!("give --tau or --constant")),
    };
    let p = kakutani_affinity_z(&*beta_fn, a.shift, a.levels)?;
    let l1 = l1_verdict(&*beta_fn, a.levels);
    let r = ctx
        .rec("kakutani", "zdual", Quantity::Value(p.product))
        .param("profile", profile)
        .param("shift", a.shift)
        .param("levels", a.levels)
        .extra("l1_partial_sum", num(l1.partial_sum))
        .extra("l1_ratio", num(l1.ratio))
        .extra("l1_verdict", Value::String(l1.verdict.as_str().into()));
    Ok(vec![affinity_extras(r, &p)])
}
