//! Task dispatch: each task turns a validated configuration into a report,
//! a short summary and plot-ready data files.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use mmp::attractiveness::{check_attractiveness, f_diagnostic, f_table};
use mmp::condensation::{build_canonical, canonical_marginal, fixed_volume_test, max_site_law, thermodynamic_test};
use mmp::coupling::verify_coupling;
use mmp::invariance::{
    build_mmtp_rates, build_mmzrp_rates, check_mmzrp_invariance, check_product_invariance, check_single_jump_balance,
    compute_a, exact_stationarity_check, w_from_mmtp_rates, STATE_GUARD,
};
use mmp::lattice::{Kernel, Torus};
use mmp::measures::{marginal_from_rates, tilt_and_partition, Marginal};
use mmp::num::{parse_rational, to_f64, Rational, Scalar};
use mmp::rates::{growth_constant, make_builtin, GrowthCondition, RateFamily};
use mmp::report::Verdict;
use mmp::seq::Sequence;
use mmp::simulator::{build_coupled, estimate_observables, run_replicas, simulate_coupled, Init, SimOptions, SimReport};
use mmp::MmpError;
use num_traits::{One, Zero};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Mode, Task};

/// Why a run stopped before producing a verdict.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Guard(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Guard(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Validation(m) => write!(f, "invalid experiment: {m}"),
            Failure::Guard(m) => write!(f, "guard exceeded: {m}"),
        }
    }
}

impl From<MmpError> for Failure {
    fn from(e: MmpError) -> Self {
        match e {
            MmpError::Guard { .. } => Failure::Guard(e.to_string()),
            other => Failure::Validation(other.to_string()),
        }
    }
}

pub struct Outcome {
    pub pass: bool,
    pub report: Value,
    pub summary: String,
    /// (file name, contents)
    pub data: Vec<(String, String)>,
}

type Run = Result<Outcome, Failure>;

fn invalid(field: &str, msg: impl std::fmt::Display) -> Failure {
    Failure::Validation(format!("{field}: {msg}"))
}

pub fn marginal_from_str(s: &str) -> Result<Marginal, Failure> {
    let seq = Sequence::parse(s)?;
    Ok(Marginal::from_sequence(&seq)?)
}

fn string_params(cfg: &ExperimentConfig) -> BTreeMap<String, String> {
    cfg.family.as_ref().map_or_else(BTreeMap::new, |f| f.params.iter().map(|(k, v)| (k.clone(), v.to_string())).collect())
}

fn param<'a>(p: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str, Failure> {
    p.get(key).map(String::as_str).ok_or_else(|| invalid(&format!("family.params.{key}"), "missing"))
}

fn cutoff_param(p: &BTreeMap<String, String>, default: usize) -> Result<usize, Failure> {
    p.get("cutoff").map_or(Ok(default), |s| s.parse().map_err(|_| invalid("family.params.cutoff", "not an integer")))
}

/// Built-in families plus the two constructions from single-site weights.
pub fn family(cfg: &ExperimentConfig) -> Result<RateFamily, Failure> {
    let spec = cfg.family.as_ref().ok_or_else(|| invalid("family", "missing"))?;
    let p = string_params(cfg);
    match spec.name.as_str() {
        "built_mmzrp" => {
            let mu = marginal_from_str(param(&p, "weights")?)?;
            let c = Sequence::parse(param(&p, "c")?)?;
            Ok(build_mmzrp_rates(&mu, c, cutoff_param(&p, 16)?)?)
        }
        "built_mmtp" => {
            let mu = marginal_from_str(param(&p, "weights")?)?;
            let g = Sequence::parse(param(&p, "g_star_0")?)?;
            Ok(build_mmtp_rates(&mu, &g, cutoff_param(&p, 16)?)?)
        }
        name => Ok(make_builtin(name, &p)?),
    }
}

/// μ from `weights`, else from the construction parameters, else from the rates.
pub fn weights(cfg: &ExperimentConfig, fam: &RateFamily, truncation: usize) -> Result<Marginal, Failure> {
    if let Some(w) = &cfg.weights {
        return marginal_from_str(w);
    }
    let p = string_params(cfg);
    if let Some(w) = p.get("weights") {
        return marginal_from_str(w);
    }
    if fam.class().is_tp_like() && fam.table_extent().is_some() {
        return Ok(w_from_mmtp_rates(fam, truncation)?);
    }
    Ok(marginal_from_rates(fam, fam.class(), &Rational::one(), truncation)?)
}

fn kernel(cfg: &ExperimentConfig) -> Result<Kernel, Failure> {
    Ok(Kernel::parse(cfg.kernel.as_deref().unwrap_or("totally_asymmetric"))?)
}

fn torus(cfg: &ExperimentConfig, k: &Kernel) -> Result<Torus, Failure> {
    let lat = cfg.lattice.as_ref().ok_or_else(|| invalid("lattice", "missing"))?;
    Ok(Torus::new(k.dim(), lat.side)?)
}

fn parse_init(s: &str) -> Result<Init, Failure> {
    Ok(Init::parse(s)?)
}

fn verdict_line(v: &Verdict) -> String {
    format!("{v}\n")
}

fn two_column<X: std::fmt::Display>(header: &str, rows: impl IntoIterator<Item = (X, f64)>) -> String {
    let mut s = format!("# {header}\n");
    for (x, y) in rows {
        let _ = writeln!(s, "{x} {y:.12e}");
    }
    s
}

pub fn run(task: Task, cfg: &ExperimentConfig) -> Run {
    match task {
        Task::CheckInvariance => match cfg.mode {
            Mode::Exact => check_invariance::<Rational>(cfg),
            Mode::Float => check_invariance::<f64>(cfg),
        },
        Task::CheckAttractiveness => attractiveness(cfg),
        Task::CouplingVerify => coupling(cfg),
        Task::Stationarity => stationarity(cfg),
        Task::Simulate => simulate(cfg),
        Task::SimulateCoupled => simulate_pair(cfg),
        Task::Canonical => match cfg.mode {
            Mode::Exact => canonical::<Rational>(cfg),
            Mode::Float => canonical::<f64>(cfg),
        },
        Task::FixedVolume => fixed_volume(cfg),
        Task::Thermo => thermo(cfg),
        Task::FScan => f_scan(cfg),
    }
}

fn check_invariance<S: Scalar>(cfg: &ExperimentConfig) -> Run {
    let fam = family(cfg)?;
    let cutoff = cfg.limits.cutoff.unwrap_or(12);
    let mu = weights(cfg, &fam, 2 * cutoff + 2)?;
    let k = kernel(cfg)?;
    let a = compute_a::<S>(&fam, &mu, cutoff)?;
    let product = check_product_invariance(&a, k.symmetry(), 1e-9);
    let mut summary = verdict_line(&product);
    let mut report = json!({
        "family": fam.description(),
        "weights": mu.describe(),
        "cutoff": cutoff,
        "kernel": k.to_string(),
        "product_invariance": product,
    });
    let mut pass = product.pass;
    if fam.class().is_zrp_like() {
        match check_mmzrp_invariance(&fam, &mu, cutoff) {
            Ok(r) => {
                summary += &verdict_line(&r.stationarity);
                if let Some(v) = &r.rate_compatibility {
                    summary += &verdict_line(v);
                }
                pass &= r.stationarity.pass;
                report["mass_migration_zrp"] = json!(r);
            }
            Err(e) => report["mass_migration_zrp"] = json!({ "error": e.to_string() }),
        }
    }
    if fam.class().is_single_jump() {
        match check_single_jump_balance(&fam, &mu, cutoff) {
            Ok(r) => {
                for v in [&r.detailed_balance, &r.compatibility, &r.psi_condition] {
                    summary += &verdict_line(v);
                }
                report["single_jump"] = json!(r);
            }
            Err(e) => report["single_jump"] = json!({ "error": e.to_string() }),
        }
    }
    Ok(Outcome { pass, report, summary, data: vec![("a_matrix.dat".into(), a.dump())] })
}

fn attractiveness(cfg: &ExperimentConfig) -> Run {
    let fam = family(cfg)?;
    let r = check_attractiveness(&fam, cfg.limits.cutoff.unwrap_or(20));
    let mut summary: String = r.conditions.iter().map(verdict_line).collect();
    if let Some(agree) = r.equivalent_forms_agree {
        let _ = writeln!(summary, "equivalent forms agree: {agree}");
    }
    Ok(Outcome { pass: r.pass, report: json!({ "family": fam.description(), "result": r }), summary, data: vec![] })
}

fn coupling(cfg: &ExperimentConfig) -> Run {
    let fam = family(cfg)?;
    let c = match &cfg.limits.growth_constant {
        Some(s) => parse_rational(s)?,
        None => growth_constant(&fam, GrowthCondition::LipschitzJump, 30),
    };
    let r = verify_coupling(&fam, cfg.limits.quad_cutoff.unwrap_or(6), &c);
    let summary: String = r.verdicts().into_iter().map(verdict_line).collect();
    let mut data = vec![];
    if !r.passed() {
        let text: String = r
            .verdicts()
            .into_iter()
            .filter(|v| !v.pass)
            .map(|v| format!("{}: {}\n", v.name, v.witness.clone().unwrap_or_default()))
            .collect();
        data.push(("counterexample.txt".into(), text));
    }
    let report = json!({ "family": fam.description(), "growth_constant": c.to_string(), "result": r });
    Ok(Outcome { pass: r.passed(), report, summary, data })
}

fn stationarity(cfg: &ExperimentConfig) -> Run {
    let fam = family(cfg)?;
    let k = kernel(cfg)?;
    let t = torus(cfg, &k)?;
    let n = cfg.lattice.as_ref().and_then(|l| l.particles).ok_or_else(|| invalid("lattice.particles", "missing"))?;
    let mu = weights(cfg, &fam, 2 * n + 2)?;
    let guard = cfg.limits.state_guard.map_or(STATE_GUARD, u128::from);
    let r = exact_stationarity_check(&fam, &mu, t, n, &k, guard)?;
    let pass = r.max_residual_exact.is_zero();
    let summary = format!(
        "{}: {} states, {} transitions, max |muQ| = {}\n",
        if pass { "PASS" } else { "FAIL" },
        r.states,
        r.transitions,
        r.max_residual_exact
    );
    let mut report = json!({ "family": fam.description(), "weights": mu.describe(), "result": r });
    // wall time lives in the manifest so reports stay reproducible
    if let Some(obj) = report["result"].as_object_mut() {
        obj.remove("wall_ms");
    }
    Ok(Outcome { pass, report, summary, data: vec![] })
}

fn sim_target(spec: &crate::config::SimulationSpec, upto: usize) -> Result<Option<Vec<f64>>, Failure> {
    match (&spec.target, &spec.target_phi) {
        (Some(w), Some(phi)) => {
            let t = tilt_and_partition(&marginal_from_str(w)?, &parse_rational(phi)?)?;
            Ok(Some(t.probability_f64(upto)?))
        }
        _ => Ok(None),
    }
}

fn replica_rows(reports: &[SimReport]) -> Value {
    json!(reports
        .iter()
        .map(|r| json!({
            "stream": r.stream,
            "events": r.events,
            "time": r.time,
            "absorbing": r.absorbing,
            "tv_to_target": r.tv_to_target,
            "order_violations": r.order_violations,
        }))
        .collect::<Vec<_>>())
}

fn law_files(agg: &mmp::simulator::Aggregate) -> Vec<(String, String)> {
    let mut hist = String::from("# n probability standard_error\n");
    for (n, (p, e)) in agg.histogram.iter().zip(&agg.standard_error).enumerate() {
        let _ = writeln!(hist, "{n} {p:.12e} {e:.12e}");
    }
    vec![
        ("histogram.dat".into(), hist),
        ("max_law.dat".into(), two_column("m probability", agg.max_law.iter().copied().enumerate())),
    ]
}

fn simulate(cfg: &ExperimentConfig) -> Run {
    let fam = family(cfg)?;
    let k = kernel(cfg)?;
    let t = torus(cfg, &k)?;
    let spec = cfg.simulation.as_ref().ok_or_else(|| invalid("simulation", "missing"))?;
    let seed = cfg.seed.ok_or_else(|| invalid("seed", "missing"))?;
    let init = parse_init(&spec.init)?;
    let target = sim_target(spec, 4096)?;
    let opts = SimOptions { events: spec.events, burn_in: spec.burn_in, target: target.clone(), checkpoints: spec.checkpoints };
    let reports = run_replicas(&fam, &k, t, &init, seed, spec.replicas, &opts)?;
    let agg = estimate_observables(&reports, target.as_deref())?;
    let pass = match (spec.tv_threshold, agg.tv_to_target) {
        (Some(limit), Some(tv)) => tv < limit,
        _ => true,
    };
    let mut summary = format!("{} replicas, {} events after burn-in\n", agg.replicas, agg.events);
    if let Some(tv) = agg.tv_to_target {
        let _ = writeln!(summary, "TV to target: {tv:.6}");
    }
    let mut data = law_files(&agg);
    if spec.checkpoints > 0 && target.is_some() {
        let mut s = String::from("# events mean_tv\n");
        let points = reports.iter().map(|r| r.checkpoints.len()).min().unwrap_or(0);
        for i in 0..points {
            let mean = reports.iter().map(|r| r.checkpoints[i].1).sum::<f64>() / reports.len() as f64;
            let _ = writeln!(s, "{} {mean:.12e}", reports[0].checkpoints[i].0);
        }
        data.push(("tv_checkpoints.dat".into(), s));
    }
    let report = json!({ "family": fam.description(), "aggregate": agg, "replicas": replica_rows(&reports) });
    Ok(Outcome { pass, report, summary, data })
}

fn simulate_pair(cfg: &ExperimentConfig) -> Run {
    let fam = family(cfg)?;
    let k = kernel(cfg)?;
    let t = torus(cfg, &k)?;
    let spec = cfg.simulation.as_ref().ok_or_else(|| invalid("simulation", "missing"))?;
    let seed = cfg.seed.ok_or_else(|| invalid("seed", "missing"))?;
    let first = parse_init(&spec.init)?;
    let second = parse_init(spec.second_init.as_deref().ok_or_else(|| invalid("simulation.second_init", "missing"))?)?;
    let reports: Vec<SimReport> = (0..spec.replicas)
        .into_par_iter()
        .map(|r| {
            let mut pair = build_coupled(&fam, &k, t, &first, &second, seed, r)?;
            Ok(simulate_coupled(&mut pair, spec.events))
        })
        .collect::<Result<_, MmpError>>()?;
    let agg = estimate_observables(&reports, None)?;
    let attractive = check_attractiveness(&fam, cfg.limits.cutoff.unwrap_or(20)).pass;
    let violations = agg.order_violations;
    // ordered starts of attractive families must never lose order
    let pass = !attractive || violations.is_none_or(|v| v == 0);
    let summary = format!(
        "{} coupled replicas, attractive: {attractive}, order violations: {}\n",
        reports.len(),
        violations.map_or("n/a (unordered start)".into(), |v| v.to_string())
    );
    let report = json!({
        "family": fam.description(),
        "attractive": attractive,
        "aggregate": agg,
        "replicas": replica_rows(&reports),
    });
    Ok(Outcome { pass, report, summary, data: law_files(&agg) })
}

fn canonical<S: Scalar>(cfg: &ExperimentConfig) -> Run {
    let spec = cfg.canonical.as_ref().ok_or_else(|| invalid("canonical", "missing"))?;
    let w = marginal_from_str(&spec.weights)?;
    let ens = build_canonical::<S>(&w, spec.sites, spec.particles)?;
    let single: Vec<f64> = ens.single_site().iter().map(Scalar::to_f64).collect();
    let max_law: Vec<f64> = max_site_law(&ens).iter().map(Scalar::to_f64).collect();
    let mut data = vec![
        ("single_site.dat".into(), two_column("n probability", single.iter().copied().enumerate())),
        ("max_site_law.dat".into(), two_column("m probability", max_law.iter().copied().enumerate())),
    ];
    if spec.marginal_sites > 1 {
        let mut s = String::from("# occupancies probability\n");
        for (k, p) in canonical_marginal(&ens, spec.marginal_sites)? {
            let cols: Vec<String> = k.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(s, "{} {:.12e}", cols.join(" "), p.to_f64());
        }
        data.push(("joint_marginal.dat".into(), s));
    }
    let mode = max_law.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(m, _)| m);
    let summary = format!(
        "L = {}, N = {}, Z = {:.12e}, mode of max occupancy = {mode}\n",
        spec.sites,
        spec.particles,
        ens.partition().to_f64()
    );
    let report = json!({
        "weights": w.describe(),
        "sites": spec.sites,
        "particles": spec.particles,
        "partition": ens.partition().to_f64(),
        "single_site": single,
        "max_site_law": max_law,
        "max_site_mode": mode,
    });
    Ok(Outcome { pass: true, report, summary, data })
}

fn fixed_volume(cfg: &ExperimentConfig) -> Run {
    let spec = cfg.fixed_volume.as_ref().ok_or_else(|| invalid("fixed_volume", "missing"))?;
    let w = marginal_from_str(&spec.weights)?;
    let r = fixed_volume_test(&w, spec.sites, &spec.particles)?;
    let mut summary: String = r.rows.iter().map(|(n, tv)| format!("N = {n}: TV = {tv:.6}\n")).collect();
    let _ = writeln!(summary, "decreasing: {}, condensation (heuristic, TV < 0.05): {}", r.decreasing, r.condensation_detected);
    let data = vec![("tv.dat".into(), two_column("N tv", r.rows.iter().copied()))];
    Ok(Outcome { pass: r.decreasing, report: json!({ "weights": w.describe(), "result": r }), summary, data })
}

fn thermo(cfg: &ExperimentConfig) -> Run {
    let spec = cfg.thermo.as_ref().ok_or_else(|| invalid("thermo", "missing"))?;
    let w = marginal_from_str(&spec.weights)?;
    let rho = parse_rational(&spec.rho)?;
    let r = thermodynamic_test(&w, &rho, &spec.sizes, spec.marginal_sites, cfg.mode == Mode::Exact)?;
    let mut summary = format!("rho = {}, rho_c = {:.8}, phi = {:.8}\n", r.rho, r.rho_c, r.phi);
    for row in &r.rows {
        let _ = writeln!(summary, "L = {}, N = {}: TV = {:.6}", row.sites, row.particles, row.tv);
    }
    let data = vec![("tv.dat".into(), two_column("L tv", r.rows.iter().map(|x| (x.sites, x.tv))))];
    Ok(Outcome { pass: r.decreasing, report: json!({ "weights": w.describe(), "result": r }), summary, data })
}

fn f_scan(cfg: &ExperimentConfig) -> Run {
    let spec = cfg.f_scan.as_ref().ok_or_else(|| invalid("f_scan", "missing"))?;
    let r = Sequence::parse(&spec.r)?;
    if spec.alpha_max < 2 {
        return Err(invalid("f_scan.alpha_max", "must be at least 2"));
    }
    let values = f_diagnostic(&r, spec.alpha_max);
    let first_negative = values.iter().find(|(_, f)| *f < Rational::zero()).map(|(a, _)| *a);
    let summary = match first_negative {
        Some(a) => format!("F first negative at alpha = {a}\n"),
        None => format!("F positive on 2..={}\n", spec.alpha_max),
    };
    let report = json!({
        "r": r.to_string(),
        "first_negative": first_negative,
        "values": values.iter().map(|(a, f)| json!([a, f.to_string(), to_f64(f)])).collect::<Vec<_>>(),
    });
    Ok(Outcome { pass: true, report, summary, data: vec![("f.dat".into(), format!("# alpha F\n{}", f_table(&values)))] })
}

#[cfg(test)]
mod tests {
    use super::*;
    #[test]
    fn guard_errors_map_to_their_own_exit_code() {
        let e: Failure = MmpError::Guard { name: "states".into(), limit: 1, requested: 2 }.into();
        assert_eq!(e.exit_code(), 3);
        let e: Failure = MmpError::Parse("x".into()).into();
        assert_eq!(e.exit_code(), 2);
    }
}
