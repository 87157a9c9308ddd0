//! Named experiments. Each returns its artifacts, headline numbers and
//! pass/fail checks; nothing here touches the filesystem.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::{Context, Result};
use pliss_lab::cocycle::{beta_p, chi_f_min_trace, lyapunov_exponents, m_bar_f, m_lower_f, ExponentReport, WINDOW_FRAC};
use pliss_lab::entropy::{self, gibbs_check, is_a_prime_large, pesin_ruelle, EntropyParams, GridPartition};
use pliss_lab::folner::{disk_ensemble, folner_select, verify_folner, Ensemble, FolnerPlan, FolnerReport, Tolerances};
use pliss_lab::geometry::{
    calibrate, containment_check, density_experiment, distortion_check, pliss_iterate_check, tangent_expansions,
    verify_vitali, vitali_select, Calibration, DensityConfig, DiskFlow, FDisk,
};
use pliss_lab::measures::appendix_identity_check;
use pliss_lab::models::{build_model, orbit_with, Jitter, MapModel, Point, CAT_LAMBDA};
use pliss_lab::pliss::{
    bi_pliss_check, mean_ergodic_check, pliss_lower_bound, pliss_times, pliss_times_brute, random_dominated_cycle,
    search_bi_pliss_counterexample,
};
use pliss_lab::rng;
use rand::Rng as _;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, UsageError};

/// Order in which `all` runs the experiments.
pub const ALL_ORDER: [&str; 9] =
    ["lyapunov", "chi-min", "appendix", "pliss", "bipliss", "folner", "gibbs", "density", "entropy"];

const START_STREAM: u64 = 0x5747;
const ORACLE_STREAM: u64 = 1;
const LEMMA_STREAM: u64 = 2;
const ANCHOR_STREAM: u64 = 3;
const CYCLE_STREAM: u64 = 4;
const ERGODIC_STREAM: u64 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: impl Into<String>) -> Check {
        let status = if pass { Status::Pass } else { Status::Fail };
        Check { name: name.into(), status, detail: detail.into() }
    }

    fn skip(name: &str, detail: impl Into<String>) -> Check {
        Check { name: name.into(), status: Status::Skip, detail: detail.into() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub body: String,
}

#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub experiment: String,
    pub model: String,
    pub checks: Vec<Check>,
    pub metrics: BTreeMap<String, f64>,
    pub artifacts: Vec<Artifact>,
    /// Calibrated or derived constants echoed into the manifest.
    pub constants: BTreeMap<String, Value>,
}

impl Outcome {
    fn new(experiment: &str, model: &dyn MapModel) -> Outcome {
        Outcome { experiment: experiment.into(), model: model.name().into(), ..Outcome::default() }
    }

    fn metric(&mut self, key: &str, v: f64) {
        self.metrics.insert(key.into(), v);
    }

    fn artifact(&mut self, name: &str, body: String) {
        self.artifacts.push(Artifact { name: name.into(), body });
    }

    fn json(&mut self, name: &str, v: &Value) {
        let mut s = serde_json::to_string_pretty(v).expect("json values serialise");
        s.push('\n');
        self.artifact(name, s);
    }

    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.status == Status::Fail)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialise")
}

pub fn model_of(cfg: &ExperimentConfig) -> Result<Box<dyn MapModel>> {
    build_model(&cfg.model, &cfg.model_params).map_err(|e| UsageError(e.to_string()).into())
}

/// Orbit start drawn from the seed.
pub fn start_point(model: &dyn MapModel, seed: u64) -> Point {
    model.sample_point(&mut rng::stream(seed, START_STREAM))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<Outcome>> {
    let model = model_of(cfg)?;
    let m = model.as_ref();
    if cfg.experiment == "all" {
        let mut out = Vec::new();
        for name in ALL_ORDER {
            if needs_disk(name) && m.dim_f() != 1 {
                let mut o = Outcome::new(name, m);
                o.checks.push(Check::skip(name, "needs a one-dimensional F"));
                out.push(o);
                continue;
            }
            out.push(run_one(name, cfg, m)?);
        }
        return Ok(out);
    }
    if needs_disk(&cfg.experiment) && m.dim_f() != 1 {
        return Err(UsageError(format!("experiment `{}` needs a model with one-dimensional F", cfg.experiment)).into());
    }
    Ok(vec![run_one(&cfg.experiment, cfg, m)?])
}

fn needs_disk(experiment: &str) -> bool {
    matches!(experiment, "folner" | "gibbs" | "density")
}

fn run_one(name: &str, cfg: &ExperimentConfig, m: &dyn MapModel) -> Result<Outcome> {
    log::info!("running {name} on {}", m.name());
    let o = match name {
        "lyapunov" => lyapunov(cfg, m),
        "chi-min" => chi_min(cfg, m),
        "appendix" => appendix(cfg, m),
        "pliss" => pliss(cfg, m),
        "bipliss" => bipliss(cfg, m),
        "folner" => folner(cfg, m),
        "gibbs" => gibbs(cfg, m),
        "density" => density(cfg, m),
        "entropy" => entropy(cfg, m),
        other => return Err(UsageError(format!("unknown experiment `{other}`")).into()),
    };
    o.with_context(|| format!("experiment `{name}` on `{}`", m.name()))
}

/// log of the larger eigenvalue of [[2,1],[1,1]].
pub fn cat2_top_exponent() -> f64 {
    ((3.0 + 5f64.sqrt()) / 2.0).ln()
}

fn lyapunov(cfg: &ExperimentConfig, m: &dyn MapModel) -> Result<Outcome> {
    let mut o = Outcome::new("lyapunov", m);
    let n = cfg.orbit_len("lyapunov");
    let x = start_point(m, cfg.seed);
    let rep = lyapunov_exponents(m, &x, n)?;
    for (i, l) in rep.exponents.iter().enumerate() {
        o.metric(&format!("lambda_{}", i + 1), *l);
    }
    o.metric("i_u", rep.i_u as f64);
    o.metric("i_cu", rep.i_cu as f64);
    let top = rep.exponents[0];
    match m.name() {
        "cat2" => {
            let h = cat2_top_exponent();
            let err = (top - h).abs().max((rep.exponents[1] + h).abs());
            o.checks.push(Check::new("lyapunov-ground-truth", err <= 1e-6, format!("max error {err:e}")));
        }
        "solenoid" => {
            let err = (top - 2f64.ln()).abs();
            o.checks.push(Check::new("lyapunov-ground-truth", err <= 5e-3, format!("top exponent error {err:e}")));
        }
        _ => o.checks.push(Check::skip("lyapunov-ground-truth", "no closed form for this model")),
    }
    o.artifact("lyapunov.csv", format!("{}\n{}\n", ExponentReport::csv_header(m.dim()), rep.csv_row(m.name(), cfg.seed)));
    Ok(o)
}

fn chi_min(cfg: &ExperimentConfig, m: &dyn MapModel) -> Result<Outcome> {
    let mut o = Outcome::new("chi-min", m);
    let n = cfg.orbit_len("chi-min");
    let x = start_point(m, cfg.seed);
    let trace = orbit_with(m, &x, n + cfg.p_max, 1, Some(Jitter::new(cfg.seed, 0)))?;
    let mut csv = String::from("p,beta_p,beta_p_over_p\n");
    for p in 1..=cfg.p_max {
        let b = beta_p(&trace, p, n, WINDOW_FRAC)?;
        writeln!(csv, "{p},{b},{}", b / p as f64)?;
    }
    let chi = chi_f_min_trace(&trace, cfg.p_max, n, WINDOW_FRAC)?;
    o.metric("chi_f_min", chi);
    o.metric("m_bar_f", m_bar_f(&trace)?);
    o.metric("m_lower_f", m_lower_f(&trace)?);
    if m.name() == "cat2" {
        let err = (chi - CAT_LAMBDA.ln()).abs();
        o.checks.push(Check::new("chi-min-ground-truth", err <= 1e-6, format!("error {err:e}")));
    }
    o.artifact("chi_min.csv", csv);
    o.json("chi_min.json", &json!({ "chi_f_min": chi, "n": n, "p_max": cfg.p_max, "metrics": o.metrics }));
    Ok(o)
}

fn histogram_resolution(cfg: &ExperimentConfig, m: &dyn MapModel) -> usize {
    cfg.resolution.unwrap_or(if m.dim() == 2 { 32 } else { 16 })
}

fn appendix(cfg: &ExperimentConfig, m: &dyn MapModel) -> Result<Outcome> {
    let mut o = Outcome::new("appendix", m);
    let n = cfg.orbit_len("appendix");
    let x = start_point(m, cfg.seed);
    let res = histogram_resolution(cfg, m);
    let r = appendix_identity_check(m, &x, cfg.p_max, n, res)?;
    o.metric("chi", r.chi);
    o.metric("sup_emp", r.sup_emp);
    o.metric("gap", r.gap);
    o.metric("one_sided_excess", r.one_sided_excess);
    o.metric("max_defect", r.max_defect);
    o.checks.push(Check::new(
        "appendix-one-sided",
        r.one_sided_excess <= 1e-6,
        format!("excess {:e}", r.one_sided_excess),
    ));
    let gap_tol = match m.name() {
        "cat2" => Some(1e-6),
        "solenoid" => Some(0.02),
        _ => None,
    };
    match gap_tol {
        Some(t) => o.checks.push(Check::new("appendix-gap", r.gap <= t, format!("gap {:e} (tolerance {t})", r.gap))),
        None => o.checks.push(Check::skip("appendix-gap", "no pinned tolerance for this model")),
    }
    o.json("appendix.json", &json!({ "report": to_value(&r), "resolution": res, "n": n, "p_max": cfg.p_max }));
    Ok(o)
}

/// Fixed-horizon Pliss oracle and quantitative-lemma suites on random
/// sequences. Returns (mismatches, lemma failures).
pub fn pliss_self_test(seed: u64, oracle_cases: usize, lemma_cases: usize) -> (usize, usize) {
    let mut r = rng::stream(seed, ORACLE_STREAM);
    let mut mismatches = 0;
    for c in 0..oracle_cases {
        let n = r.gen_range(1..=200);
        // every other case on a quarter grid so ties are exercised
        let seq: Vec<f64> = (0..n)
            .map(|_| {
                let v: f64 = r.gen_range(-2.0..=2.0);
                if c % 2 == 0 { (v * 4.0).round() / 4.0 } else { v }
            })
            .collect();
        let mut t: f64 = r.gen_range(-1.0..=1.0);
        if c % 2 == 0 {
            t = (t * 4.0).round() / 4.0;
        }
        if pliss_times(&seq, t) != pliss_times_brute(&seq, t) {
            mismatches += 1;
        }
    }
    let mut r = rng::stream(seed, LEMMA_STREAM);
    let mut failures = 0;
    for _ in 0..lemma_cases {
        let n = r.gen_range(1..=500);
        let a_max = 2.0;
        let a_prime: f64 = r.gen_range(-1.0..1.0);
        let a_pp: f64 = r.gen_range(a_prime + 1e-3..a_max);
        let mut seq: Vec<f64> = (0..n).map(|_| r.gen_range(-2.0..=a_max)).collect();
        // raise random entries to A until the mean reaches a''
        let mut sum: f64 = seq.iter().sum();
        while sum < a_pp * n as f64 {
            let i = r.gen_range(0..n);
            sum += a_max - seq[i];
            seq[i] = a_max;
        }
        let count = pliss_times(&seq, a_prime).members().iter().filter(|&&t| t >= 1).count();
        let c = pliss_lower_bound(a_pp, a_prime, a_max).expect("a' < a'' <= A");
        if (count as f64) < n as f64 * c {
            failures += 1;
        }
    }
    (mismatches, failures)
}

fn pliss(cfg: &ExperimentConfig, m: &dyn MapModel) -> Result<Outcome> {
    let mut o = Outcome::new("pliss", m);
    let n = cfg.orbit_len("pliss");
    let x = start_point(m, cfg.seed);
    let trace = orbit_with(m, &x, n + 1, 1, Some(Jitter::new(cfg.seed, 0)))?;
    let seq = &trace.log_min_f[..n];
    let p = pliss_times(seq, cfg.a_prime);
    let count = p.members().iter().filter(|&&t| t >= 1).count();
    let mean = seq.iter().sum::<f64>() / n as f64;
    let a_max = seq.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    o.metric("pliss_count", count as f64);
    o.metric("pliss_density", count as f64 / n as f64);
    o.metric("mean", mean);
    o.metric("a_max", a_max);
    match pliss_lower_bound(mean, cfg.a_prime, a_max) {
        Ok(c) => {
            o.metric("lower_bound", c);
            o.checks.push(Check::new(
                "pliss-model-bound",
                count as f64 >= n as f64 * c,
                format!("{count} Pliss times, bound {:.3}", n as f64 * c),
            ));
        }
        Err(e) => o.checks.push(Check::skip("pliss-model-bound", e.to_string())),
    }
    o.checks.push(Check::new("a-prime-large", is_a_prime_large(seq, cfg.a_prime), "consecutive Pliss times"));
    if cfg.self_test {
        let oracle = cfg.trials.unwrap_or(1000);
        let lemma = cfg.trials.map_or(10_000, |t| 10 * t);
        let (mis, fail) = pliss_self_test(cfg.seed, oracle, lemma);
        o.metric("oracle_cases", oracle as f64);
        o.metric("oracle_mismatches", mis as f64);
        o.metric("lemma_cases", lemma as f64);
        o.metric("lemma_failures", fail as f64);
        o.checks.push(Check::new("pliss-oracle", mis == 0, format!("{mis} mismatches over {oracle} cases")));
        o.checks.push(Check::new("pliss-lemma", fail == 0, format!("{fail} failures over {lemma} cases")));
    }
    let mut csv = String::from("time\n");
    for t in p.members() {
        writeln!(csv, "{t}")?;
    }
    o.artifact("pliss_times.csv", csv);
    o.json("pliss.json", &json!({ "a_prime": cfg.a_prime, "n": n, "metrics": o.metrics }));
    Ok(o)
}

fn bipliss(cfg: &ExperimentConfig, m: &dyn MapModel) -> Result<Outcome> {
    let mut o = Outcome::new("bipliss", m);
    let trials = cfg.trials.unwrap_or(10_000);
    let ergodic = cfg.trials.map_or(100_000, |t| 10 * t);
    let (lg, ll) = (cfg.gamma.ln(), cfg.lambda.ln());
    if 2.0 * lg <= ll {
        return Err(UsageError("bipliss needs gamma^2 > lambda".into()).into());
    }
    let mut r = rng::stream(cfg.seed, CYCLE_STREAM);
    let (mut failures, mut with_hyp) = (0, 0);
    // pF not inside pE, pE not inside pF
    let (mut f_out, mut e_out) = (0, 0);
    let mut first_failure = None;
    for t in 0..trials {
        let p = 2 + t % 11;
        let (e, u) = random_dominated_cycle(&mut r, p, lg, ll);
        let b = bi_pliss_check(&e, &u, lg, ll)?;
        if b.hypotheses {
            with_hyp += 1;
            if !b.equal {
                failures += 1;
                let (pf, pe) = (b.pf.members(), b.pe.members());
                f_out += usize::from(!pf.iter().all(|k| pe.contains(k)));
                e_out += usize::from(!pe.iter().all(|k| pf.contains(k)));
                first_failure.get_or_insert_with(|| json!({ "e": e, "u": u, "pf": pf, "pe": pe }));
            }
        }
    }
    let mut r = rng::stream(cfg.seed, ERGODIC_STREAM);
    let mut erg_fail = 0;
    for _ in 0..ergodic {
        let p = r.gen_range(1..=24);
        let shift: f64 = r.gen_range(-0.5..0.5);
        let phi: Vec<f64> = (0..p).map(|_| shift + r.gen_range(-1.0..1.0)).collect();
        if !mean_ergodic_check(&phi)?.holds {
            erg_fail += 1;
        }
    }
    // gamma^2 < lambda: pF and pE may differ
    let counter = search_bi_pliss_counterexample(cfg.seed, trials, lg, 2.0 * lg + 0.3);
    o.metric("bipliss_trials", trials as f64);
    o.metric("bipliss_with_hypotheses", with_hyp as f64);
    o.metric("bipliss_failures", failures as f64);
    o.metric("bipliss_pf_not_in_pe", f_out as f64);
    o.metric("bipliss_pe_not_in_pf", e_out as f64);
    o.metric("mean_ergodic_trials", ergodic as f64);
    o.metric("mean_ergodic_failures", erg_fail as f64);
    o.metric("counterexample_found", f64::from(u8::from(counter.is_some())));
    o.checks.push(Check::new(
        "bi-pliss",
        failures == 0 && with_hyp > 0,
        format!("{failures} failures over {with_hyp} cycles meeting the hypotheses ({trials} drawn)"),
    ));
    o.checks.push(Check::new("mean-ergodic", erg_fail == 0, format!("{erg_fail} failures over {ergodic} cycles")));
    let cx = counter.map(|(e, u, b)| json!({ "e": e, "u": u, "pf": b.pf.members(), "pe": b.pe.members() }));
    o.json(
        "bipliss.json",
        &json!({
            "gamma": cfg.gamma,
            "lambda": cfg.lambda,
            "metrics": o.metrics,
            "first_failure": first_failure,
            "counterexample": cx,
        }),
    );
    Ok(o)
}

struct PlanRun {
    disk: FDisk,
    ens: Ensemble,
    plan: FolnerPlan,
    report: FolnerReport,
}

fn build_plan(cfg: &ExperimentConfig, m: &dyn MapModel, o: &mut Outcome) -> Result<Option<PlanRun>> {
    let x = start_point(m, cfg.seed);
    let disk = FDisk::straight(m, &x, None, cfg.disk_radius, cfg.samples)?;
    let ens = disk_ensemble(m, &disk, cfg.horizon, cfg.a_prime, cfg.seed)?;
    o.constants.insert("horizon".into(), json!(cfg.horizon));
    o.constants.insert("a_max".into(), json!(ens.a_max));
    o.constants.insert("min_mean".into(), json!(ens.min_mean));
    let alpha = match pliss_lower_bound(ens.min_mean, cfg.a_prime, ens.a_max) {
        Ok(a) => a,
        Err(e) => {
            o.checks.push(Check::new("calibration", false, format!("calibration exhausted: {e}")));
            return Ok(None);
        }
    };
    o.constants.insert("alpha".into(), json!(alpha));
    let plan = match folner_select(&ens.pliss_sets, &ens.weights, alpha, cfg.levels) {
        Ok(p) => p,
        Err(e) => {
            o.checks.push(Check::new("folner-increasing-nonempty", false, e.to_string()));
            return Ok(None);
        }
    };
    let tol = Tolerances { eps_boundary: cfg.eps_boundary, eps_mass: cfg.eps_mass, eps_fill: cfg.eps_fill, m: cfg.m };
    let report = verify_folner(&plan, &ens.pliss_sets, &tol);
    Ok(Some(PlanRun { disk, ens, plan, report }))
}

fn folner(cfg: &ExperimentConfig, m: &dyn MapModel) -> Result<Outcome> {
    let mut o = Outcome::new("folner", m);
    let Some(run) = build_plan(cfg, m, &mut o)? else { return Ok(o) };
    let c = run.report.checks;
    let items = [
        ("folner-increasing-nonempty", c.increasing_nonempty),
        ("folner-mass", c.mass),
        ("folner-q-density", c.q_density),
        ("folner-boundary", c.folner),
        ("folner-boundary-in-pliss", c.boundary_in_pliss),
        ("folner-fill", c.fill),
        ("folner-lower-density", c.lower_density),
    ];
    for (name, pass) in items {
        o.checks.push(Check::new(name, pass, "final level"));
    }
    let last = run.report.levels.last().expect("plan has a level");
    o.metric("q_density", last.q_density);
    o.metric("boundary_ratio", last.boundary_ratio);
    o.metric("log_mass_ratio", last.log_mass_ratio);
    o.metric("fill_deficit", last.fill_deficit);
    o.metric("lower_density", last.lower_density);
    let mut csv = String::from("level,n,lambda,q_len,q_density,boundary_ratio,log_mass_ratio,boundary_in_pliss,fill_deficit,lower_density\n");
    for (i, (l, r)) in run.plan.levels.iter().zip(&run.report.levels).enumerate() {
        writeln!(
            csv,
            "{i},{},{},{},{},{},{},{},{},{}",
            l.n,
            l.lambda_indices.len(),
            l.q.len(),
            r.q_density,
            r.boundary_ratio,
            r.log_mass_ratio,
            r.boundary_in_pliss,
            r.fill_deficit,
            r.lower_density
        )?;
    }
    o.artifact("folner_levels.csv", csv);
    o.json(
        "folner.json",
        &json!({
            "levels": run.report.to_json(),
            "checks": to_value(&c),
            "alpha": run.plan.alpha,
            "dropped": run.plan.dropped,
            "samples": run.disk.len(),
            "level_n": run.plan.levels.iter().map(|l| l.n).collect::<Vec<_>>(),
        }),
    );
    Ok(o)
}

fn calibrated(cfg: &ExperimentConfig, m: &dyn MapModel, o: &mut Outcome) -> Result<Option<Calibration>> {
    let x = start_point(m, cfg.seed);
    match calibrate(m, &x, cfg.a, cfg.a_prime, cfg.epsilon_for(m.name()), cfg.seed) {
        Ok(c) => {
            o.constants.insert("calibration".into(), to_value(&c));
            Ok(Some(c))
        }
        Err(pliss_lab::Error::Calibration(msg)) => {
            o.checks.push(Check::new("calibration", false, format!("calibration exhausted: {msg}")));
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

/// Partition with `res` cells along periodic axes and one along the others.
fn partition_for(m: &dyn MapModel, res: usize) -> Result<GridPartition> {
    let man = m.manifold();
    let r = (0..man.dim()).map(|a| if man.periodic(a) { res } else { 1 }).collect();
    Ok(GridPartition::new(man, r)?)
}

fn gibbs(cfg: &ExperimentConfig, m: &dyn MapModel) -> Result<Outcome> {
    let mut o = Outcome::new("gibbs", m);
    let Some(cal) = calibrated(cfg, m, &mut o)? else { return Ok(o) };
    let Some(run) = build_plan(cfg, m, &mut o)? else { return Ok(o) };
    o.checks.push(Check::new("gibbs-plan-verified", run.report.checks.all(), "all Følner items at the final level"));
    let eps = cfg.epsilon_for(m.name());
    let res = cfg.resolution.unwrap_or(64);
    // every axis is cut so the atoms are small in the full manifold
    let part = GridPartition::uniform(m.manifold(), res)?;
    let diam = part.diameter();
    o.checks.push(Check::new(
        "gibbs-diameter",
        diam < cal.delta0,
        format!("partition diameter {diam:.4} against delta0 {}", cal.delta0),
    ));
    let level = run.plan.levels.last().expect("plan has a level");
    let g = gibbs_check(m, &run.disk, level, &part, eps, Some(cfg.seed))?;
    o.metric("violations", g.violations as f64);
    o.metric("worst_margin", g.worst_margin);
    o.metric("sample_violations", g.sample_violations as f64);
    o.metric("atoms", g.atoms as f64);
    o.metric("anchors", g.anchors as f64);
    o.checks.push(Check::new(
        "gibbs-violations",
        g.violations == 0,
        format!("{} violations over {} anchors, worst log margin {:.3}", g.violations, g.anchors, g.worst_margin),
    ));
    let partition_err = (g.sample_sum_total - g.lambda_weight).abs();
    o.checks.push(Check::new(
        "gibbs-partition",
        partition_err <= 1e-12 * g.lambda_weight.max(1.0),
        format!("atom sums minus weight(Lambda) = {partition_err:e}"),
    ));
    let csv = format!(
        "{}\n{}\n",
        entropy::csv_header(),
        entropy::csv_row(m.name(), run.plan.levels.len() - 1, eps, res, Some(&g), None, None)
    );
    o.artifact("gibbs.csv", csv);
    o.json(
        "gibbs.json",
        &json!({
            "report": to_value(&g),
            "epsilon": eps,
            "resolution": res,
            "level_n": level.n,
            "q_len": level.q.len(),
            "ensemble_samples": run.ens.pliss_sets.len(),
        }),
    );
    Ok(o)
}

fn density(cfg: &ExperimentConfig, m: &dyn MapModel) -> Result<Outcome> {
    let mut o = Outcome::new("density", m);
    let Some(cal) = calibrated(cfg, m, &mut o)? else { return Ok(o) };
    let eps = cfg.epsilon_for(m.name());
    let x = start_point(m, cfg.seed);
    let disk = FDisk::straight(m, &x, None, cfg.disk_radius, cfg.samples)?;
    let mut r = rng::stream(cfg.seed, ANCHOR_STREAM);
    let horizon = cal.n_min + 10;
    let mut csv = String::from("anchor,n,pliss_violation,max_log_rate,lhs,mid,rhs,pass\n");
    let (mut pi_fail, mut d_fail, mut tested) = (0, 0, 0);
    let mut identity_err = 0.0f64;
    for _ in 0..cfg.anchors {
        let k = r.gen_range(0..disk.len());
        let s = &disk.samples[k];
        let seq = tangent_expansions(m, &s.point, &s.tangent, horizon, None)?;
        let times = pliss_times(&seq, cfg.a_prime);
        let Some(&n) = times.members().iter().rfind(|&&t| t >= cal.n_min) else { continue };
        tested += 1;
        let pi = pliss_iterate_check(m, &disk, k, n, cfg.a, cal.delta0, 201);
        let (viol, rate) = match &pi {
            Ok(p) => (p.max_violation, p.max_log_rate),
            Err(_) => (f64::INFINITY, f64::NAN),
        };
        if !pi.as_ref().is_ok_and(|p| p.pass()) {
            pi_fail += 1;
        }
        let sum: f64 = seq[..n].iter().sum();
        let local = disk.local(m, s.param, 2.0 * cal.delta_eps * (-sum).exp(), 101)?;
        let d = distortion_check(m, &local, 50, n, eps, cal.delta_eps)?;
        if !d.pass {
            d_fail += 1;
        }
        let img = d.lhs * (n as f64 * eps).exp();
        identity_err = identity_err.max((img - d.mid).abs() / d.mid);
        writeln!(csv, "{k},{n},{viol},{rate},{},{},{},{}", d.lhs, d.mid, d.rhs, d.pass)?;
    }
    o.metric("anchors_tested", tested as f64);
    o.metric("pliss_iterate_failures", pi_fail as f64);
    o.metric("distortion_failures", d_fail as f64);
    o.metric("distortion_identity_error", identity_err);
    o.checks.push(Check::new(
        "pliss-iterate",
        pi_fail == 0 && tested > 0,
        format!("{pi_fail} failures over {tested} anchors"),
    ));
    o.checks.push(Check::new(
        "bounded-distortion",
        d_fail == 0 && tested > 0,
        format!("{d_fail} failures over {tested} anchors"),
    ));
    if m.name() == "cat2" {
        o.checks.push(Check::new(
            "distortion-identity",
            identity_err <= 1e-6,
            format!("relative error {identity_err:e}"),
        ));
    }

    // Vitali selection over ball families at short times
    let short = 4;
    let flow = DiskFlow::new(m, &disk, short)?;
    let picks: Vec<(usize, usize)> =
        (0..cfg.anchors.min(1000)).map(|_| (r.gen_range(0..disk.len()), r.gen_range(1..=short))).collect();
    let families = picks.iter().map(|&(k, n)| flow.family(k, n, cal.delta0)).collect::<Result<Vec<_>, _>>()?;
    let sel = vitali_select(&families);
    let vitali_ok = verify_vitali(&families, &sel);
    o.metric("vitali_balls", families.len() as f64);
    o.metric("vitali_accepted", sel.accepted.len() as f64);
    o.checks.push(Check::new(
        "vitali",
        vitali_ok,
        format!("{} of {} balls accepted", sel.accepted.len(), families.len()),
    ));
    let pairs: Vec<(usize, usize, usize, usize)> = picks
        .iter()
        .zip(picks.iter().skip(1))
        .filter(|(a, b)| a.1 < b.1)
        .map(|(a, b)| (a.0, a.1, b.0, b.1))
        .collect();
    let (ct, cbad) = containment_check(&flow, &pairs, cal.delta0)?;
    o.metric("containment_tested", ct as f64);
    o.metric("containment_violations", cbad as f64);
    o.checks.push(Check::new("ball-containment", cbad == 0, format!("{cbad} violations over {ct} meeting pairs")));

    let dcfg = DensityConfig {
        center: x,
        disk_half_length: cfg.disk_radius,
        anchors: cfg.density_anchors,
        gamma_horizon: cfg.gamma_horizon,
        a_pp: cfg.a_pp,
        a_prime: cfg.a_prime,
        delta: cal.delta0,
        n_max: cfg.density_n_max,
        local_cells: 201,
        seed: cfg.seed,
    };
    let dr = density_experiment(m, &dcfg)?;
    o.metric("a_pp", dr.a_pp);
    o.metric("gamma_anchors", dr.gamma_anchors as f64);
    o.metric("share_final_above", dr.share_final_above);
    o.metric("share_trend", dr.share_trend);
    if dr.gamma_anchors == 0 {
        o.checks.push(Check::skip("density-trend", "Gamma is empty (constant expansion)"));
    } else {
        o.checks.push(Check::new(
            "density-trend",
            dr.share_final_above >= 0.9,
            format!("{:.3} of {} Gamma anchors end at ratio >= 0.95", dr.share_final_above, dr.gamma_anchors),
        ));
    }
    let mut dcsv = String::from("anchor,n,ratio\n");
    for (i, row) in dr.ratios.iter().enumerate() {
        for (n, ratio) in row {
            writeln!(dcsv, "{i},{n},{ratio}")?;
        }
    }
    o.artifact("distortion.csv", csv);
    o.artifact("density.csv", dcsv);
    o.json("density.json", &json!({ "calibration": to_value(&cal), "metrics": o.metrics }));
    Ok(o)
}

fn entropy(cfg: &ExperimentConfig, m: &dyn MapModel) -> Result<Outcome> {
    let mut o = Outcome::new("entropy", m);
    let solenoid = m.name() == "solenoid";
    let res = cfg.resolution.unwrap_or(if solenoid { 2 } else { 32 });
    let block_max = cfg.block_max.unwrap_or(if solenoid { 12 } else { 8 });
    let n = cfg.orbit_len("entropy");
    let params = EntropyParams {
        n,
        partition: partition_for(m, res)?,
        block_max,
        jitter_seed: Some(cfg.seed),
        lyapunov_n: n.clamp(pliss_lab::cocycle::LYAPUNOV_WARMUP, 100_000),
    };
    let x = start_point(m, cfg.seed);
    let (p, r) = pesin_ruelle(m, &x, &params)?;
    o.metric("h_est", p.h_est);
    o.metric("jac_integral", p.jac_integral);
    o.metric("residual", p.residual);
    o.metric("sum_positive_exponents", r.sum_positive_exponents);
    o.metric("slack", r.slack);
    o.checks.push(Check::new("ruelle", r.slack >= -0.05, format!("slack {:.4}", r.slack)));
    o.checks.push(Check::new("pesin", p.residual.abs() <= 0.05, format!("residual {:.4}", p.residual)));
    o.checks.push(Check::new("entropy-monotone", p.monotone, "plug-in conditional entropies non-increasing"));
    let truth = match m.name() {
        "cat2" => Some(cat2_top_exponent()),
        "solenoid" => Some(2f64.ln()),
        _ => None,
    };
    if let Some(h) = truth {
        let err = (p.h_est - h).abs();
        o.checks.push(Check::new("entropy-ground-truth", err <= 0.05, format!("h_est {:.4} vs {h:.6}", p.h_est)));
    }
    let csv = format!(
        "{}\n{}\n",
        entropy::csv_header(),
        entropy::csv_row(m.name(), 0, 0.0, res, None, Some(&p), Some(&r))
    );
    o.artifact("entropy.csv", csv);
    let mut cond = String::from("block,conditional_entropy\n");
    for (k, h) in p.conditional.iter().enumerate() {
        writeln!(cond, "{},{h}", k + 1)?;
    }
    o.artifact("entropy_blocks.csv", cond);
    o.json(
        "entropy.json",
        &json!({ "pesin": to_value(&p), "ruelle": to_value(&r), "n": n, "resolution": res, "block_max": block_max }),
    );
    Ok(o)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cat2_lyapunov_example() {
        let mut cfg = ExperimentConfig::new("cat2", "lyapunov", 7);
        cfg.n = Some(10_000);
        let o = &run_experiment(&cfg).unwrap()[0];
        assert!((o.metrics["lambda_1"] - 0.962424).abs() < 1e-6);
        assert_eq!(o.failed().count(), 0);
        assert!(o.artifacts[0].body.starts_with("model,seed,n,lambda_1,lambda_2"));
    }

    #[test]
    fn pliss_self_test_is_clean() {
        assert_eq!(pliss_self_test(3, 300, 1000), (0, 0));
    }

    #[test]
    fn disk_experiments_reject_two_dimensional_f() {
        let cfg = ExperimentConfig::new("cat3", "folner", 1);
        let e = run_experiment(&cfg).unwrap_err();
        assert!(e.downcast_ref::<UsageError>().is_some());
    }
}
