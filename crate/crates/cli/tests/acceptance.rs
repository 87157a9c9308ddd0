//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails at the end if any criterion failed or overran its time budget.
//! Ground truth is computed here, independently of the library.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use pliss_lab::geometry::{vitali_select, BallFamily, DynamicalBall};
use pliss_lab::pliss::pliss_times;
use pliss_lab_cli::{run_experiment, write_outputs, ExperimentConfig, Outcome, Status};
use rand::{Rng, SeedableRng};
use rand::rngs::StdRng;

type Verdict = Result<String, String>;

fn cat_log_lambda() -> f64 {
    ((3.0 + 5f64.sqrt()) / 2.0).ln()
}

fn run(cfg: &ExperimentConfig) -> Outcome {
    let mut v = run_experiment(cfg).unwrap_or_else(|e| panic!("{} on {}: {e:#}", cfg.experiment, cfg.model));
    assert_eq!(v.len(), 1);
    v.pop().unwrap()
}

fn metric(o: &Outcome, key: &str) -> f64 {
    *o.metrics.get(key).unwrap_or_else(|| panic!("{}/{} has no metric {key}", o.experiment, o.model))
}

fn check_passed(o: &Outcome, name: &str) -> bool {
    o.check(name).is_some_and(|c| c.status == Status::Pass)
}

/// Pliss times straight from the definition, on integers: t is a Pliss time
/// iff every sum of x[k..t] is at least (t - k) * thr.
fn pliss_oracle(x: &[i64], thr: i64) -> Vec<usize> {
    (0..=x.len())
        .filter(|&t| {
            (0..t).all(|k| {
                let s: i64 = x[k..t].iter().sum();
                s >= (t - k) as i64 * thr
            })
        })
        .collect()
}

fn c1_pliss_oracle() -> Verdict {
    const GRID: f64 = (1u64 << 20) as f64;
    let mut r = StdRng::seed_from_u64(101);
    let mut bad = 0;
    for c in 0..1000 {
        let n = r.gen_range(1..=200);
        // coarse grid on every third case to force ties
        let step: i64 = if c % 3 == 0 { 1 << 18 } else { 1 };
        let lim = 2 * (1i64 << 20) / step;
        let xi: Vec<i64> = (0..n).map(|_| r.gen_range(-lim..=lim) * step).collect();
        let ti = r.gen_range(-lim / 2..=lim / 2) * step;
        let xf: Vec<f64> = xi.iter().map(|&v| v as f64 / GRID).collect();
        let got = pliss_times(&xf, ti as f64 / GRID);
        if got.members() != pliss_oracle(&xi, ti).as_slice() {
            bad += 1;
        }
    }
    if bad == 0 { Ok("1000 sequences agree".into()) } else { Err(format!("{bad} of 1000 sequences differ")) }
}

fn c2_pliss_lemma() -> Verdict {
    let mut r = StdRng::seed_from_u64(202);
    let a_max = 2.0;
    let mut failures = 0;
    for _ in 0..10_000 {
        let n = r.gen_range(1..=400);
        let a_prime: f64 = r.gen_range(-1.0..1.0);
        let a_pp: f64 = r.gen_range(a_prime + 1e-3..=a_max);
        let mut x: Vec<f64> = (0..n).map(|_| r.gen_range(-2.0..=a_max)).collect();
        let mut deficit = a_pp * n as f64 - x.iter().sum::<f64>();
        while deficit > 0.0 {
            let i = r.gen_range(0..n);
            let lift = (a_max - x[i]).min(deficit + 1e-12);
            x[i] += lift;
            deficit -= lift;
        }
        assert!(x.iter().all(|&v| v <= a_max));
        let count = pliss_times(&x, a_prime).members().iter().filter(|&&t| t >= 1).count();
        if (count as f64) < n as f64 * (a_pp - a_prime) / (a_max - a_prime) {
            failures += 1;
        }
    }
    if failures == 0 { Ok("0 failures over 10000 sequences".into()) } else { Err(format!("{failures} failures")) }
}

fn c3_lyapunov() -> Verdict {
    let mut cfg = ExperimentConfig::new("cat2", "lyapunov", 3);
    cfg.n = Some(10_000);
    let o = run(&cfg);
    let h = cat_log_lambda();
    let cat_err = (metric(&o, "lambda_1") - h).abs().max((metric(&o, "lambda_2") + h).abs());
    let mut cfg = ExperimentConfig::new("solenoid", "lyapunov", 3);
    cfg.n = Some(10_000);
    let o = run(&cfg);
    let sol_err = (metric(&o, "lambda_1") - 2f64.ln()).abs();
    let detail = format!("cat2 error {cat_err:.2e}, solenoid error {sol_err:.2e}");
    if cat_err <= 1e-6 && sol_err <= 5e-3 { Ok(detail) } else { Err(detail) }
}

fn c4_chi_min_appendix() -> Verdict {
    let chi = metric(&run(&ExperimentConfig::new("cat2", "chi-min", 5)), "chi_f_min");
    let chi_err = (chi - cat_log_lambda()).abs();
    let mut gaps = BTreeMap::new();
    let mut excess: f64 = 0.0;
    for model in ["cat2", "solenoid", "da2"] {
        let o = run(&ExperimentConfig::new(model, "appendix", 5));
        gaps.insert(model, metric(&o, "gap"));
        excess = excess.max(metric(&o, "one_sided_excess"));
    }
    let detail = format!(
        "cat2 chi error {chi_err:.2e}, gaps cat2 {:.2e} solenoid {:.2e}, one-sided excess {excess:.2e}",
        gaps["cat2"], gaps["solenoid"]
    );
    if chi_err <= 1e-6 && gaps["cat2"] <= 1e-6 && gaps["solenoid"] <= 0.02 && excess <= 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c5_folner() -> Verdict {
    let mut cfg = ExperimentConfig::new("da2", "folner", 7);
    cfg.model_params.insert("eps".into(), 0.25);
    cfg.horizon = 20_000;
    cfg.samples = 1000;
    (cfg.eps_boundary, cfg.eps_mass, cfg.eps_fill, cfg.m) = (0.05, 0.05, 0.1, 50);
    let o = run(&cfg);
    let items: Vec<_> = o.checks.iter().filter(|c| c.name.starts_with("folner-")).collect();
    let failed: Vec<_> = items.iter().filter(|c| c.status != Status::Pass).map(|c| c.name.as_str()).collect();
    if items.len() == 7 && failed.is_empty() {
        Ok(format!("7 items pass, boundary ratio {:.4}", metric(&o, "boundary_ratio")))
    } else {
        Err(format!("{} items, failing {failed:?}", items.len()))
    }
}

fn c6_gibbs() -> Verdict {
    let mut details = Vec::new();
    let mut ok = true;
    for (model, eps) in [("cat2", 0.05), ("da2", 0.1)] {
        let mut cfg = ExperimentConfig::new(model, "gibbs", 7);
        cfg.epsilon = Some(eps);
        cfg.resolution = Some(64);
        let o = run(&cfg);
        let (v, anchors) = (metric(&o, "violations"), metric(&o, "anchors"));
        ok &= v == 0.0 && anchors > 0.0;
        details.push(format!("{model} {v} violations over {anchors} anchors"));
    }
    if ok { Ok(details.join(", ")) } else { Err(details.join(", ")) }
}

fn c7_entropy() -> Verdict {
    let mut details = Vec::new();
    let mut ok = true;
    for (model, truth) in [("cat2", cat_log_lambda()), ("solenoid", 2f64.ln())] {
        let mut cfg = ExperimentConfig::new(model, "entropy", 11);
        cfg.n = Some(10_000_000);
        let o = run(&cfg);
        let (h, res, slack) = (metric(&o, "h_est"), metric(&o, "residual"), metric(&o, "slack"));
        ok &= (h - truth).abs() <= 0.05 && res.abs() <= 0.05 && slack >= -0.05;
        details.push(format!("{model} h {h:.4} residual {res:.4} slack {slack:.4}"));
    }
    if ok { Ok(details.join(", ")) } else { Err(details.join(", ")) }
}

/// Density runs shared by criteria 8, 10 and 11.
fn density_runs() -> BTreeMap<&'static str, Outcome> {
    ["cat2", "solenoid", "da2"].into_iter().map(|m| (m, run(&ExperimentConfig::new(m, "density", 13)))).collect()
}

fn c8_distortion(runs: &BTreeMap<&str, Outcome>) -> Verdict {
    let id_err = metric(&runs["cat2"], "distortion_identity_error");
    let mut details = vec![format!("cat2 identity error {id_err:.2e}")];
    let mut ok = id_err <= 1e-6;
    for model in ["solenoid", "da2"] {
        let o = &runs[model];
        let tested = metric(o, "anchors_tested");
        let (pi, d) = (metric(o, "pliss_iterate_failures"), metric(o, "distortion_failures"));
        ok &= tested == 100.0 && pi == 0.0 && d == 0.0;
        details.push(format!("{model} {pi}+{d} failures over {tested} anchors"));
    }
    if ok { Ok(details.join(", ")) } else { Err(details.join(", ")) }
}

fn c9_bipliss() -> Verdict {
    let o = run(&ExperimentConfig::new("cat2", "bipliss", 17));
    let (trials, hyp, fails) =
        (metric(&o, "bipliss_trials"), metric(&o, "bipliss_with_hypotheses"), metric(&o, "bipliss_failures"));
    let (erg_trials, erg_fails) = (metric(&o, "mean_ergodic_trials"), metric(&o, "mean_ergodic_failures"));
    let detail = format!(
        "{fails} set mismatches over {hyp} of {trials} cycles, {erg_fails} mean-ergodic failures over {erg_trials}"
    );
    if trials >= 1e4 && hyp > 0.0 && fails == 0.0 && erg_trials >= 1e5 && erg_fails == 0.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ball(members: std::ops::Range<usize>) -> DynamicalBall {
    DynamicalBall { anchor: members.start, n: 0, delta: 0.0, member_indices: members.collect() }
}

fn c10_vitali(runs: &BTreeMap<&str, Outcome>) -> Verdict {
    let mut r = StdRng::seed_from_u64(1010);
    let mut bad = 0;
    let trials = 200;
    for _ in 0..trials {
        let count = r.gen_range(1..=1000);
        let families: Vec<BallFamily> = (0..count)
            .map(|_| {
                let (c, w) = (r.gen_range(0..20_000usize), r.gen_range(1..60usize));
                let mut f = BallFamily {
                    ball: ball(c.saturating_sub(w)..c + w),
                    hat: ball(c.saturating_sub(2 * w)..c + 2 * w),
                    hat_hat: ball(c.saturating_sub(3 * w)..c + 3 * w),
                };
                let n = r.gen_range(1..50);
                (f.ball.n, f.hat.n, f.hat_hat.n) = (n, n, n);
                f
            })
            .collect();
        let sel = vitali_select(&families);
        let inter = |a: &DynamicalBall, b: &DynamicalBall| {
            let (a0, a1) = (a.member_indices[0], *a.member_indices.last().unwrap());
            let (b0, b1) = (b.member_indices[0], *b.member_indices.last().unwrap());
            a0 <= b1 && b0 <= a1
        };
        let acc = &sel.accepted;
        let disjoint = acc.iter().enumerate().all(|(i, &a)| acc[i + 1..].iter().all(|&b| !inter(&families[a].ball, &families[b].ball)));
        let covered = (0..count).filter(|i| !acc.contains(i)).all(|i| acc.iter().any(|&a| inter(&families[i].hat, &families[a].ball)));
        if !(disjoint && covered) {
            bad += 1;
        }
    }
    let on_disks = runs.values().all(|o| check_passed(o, "vitali"));
    let detail = format!("{bad} bad selections over {trials} random families, disk runs verified: {on_disks}");
    if bad == 0 && on_disks { Ok(detail) } else { Err(detail) }
}

fn c11_density(runs: &BTreeMap<&str, Outcome>, dir: &Path) -> Verdict {
    let o = &runs["da2"];
    let (share, anchors) = (metric(o, "share_final_above"), metric(o, "gamma_anchors"));
    let mut cfg = ExperimentConfig::new("da2", "density", 13);
    cfg.out = dir.join("density");
    write_outputs(&cfg, std::slice::from_ref(o)).map_err(|e| e.to_string())?;
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(cfg.out.join("manifest.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let recorded = manifest["experiments"][0]["metrics"]["share_final_above"].as_f64() == Some(share);
    let detail = format!("{share:.3} of {anchors} Gamma anchors at ratio >= 0.95, baseline in manifest: {recorded}");
    if anchors > 0.0 && share >= 0.9 && recorded { Ok(detail) } else { Err(detail) }
}

fn read_tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    for e in std::fs::read_dir(dir).expect("output directory") {
        let p = e.expect("dir entry").path();
        files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).expect("artifact"));
    }
    files
}

fn c12_reproducible(dir: &Path) -> Verdict {
    let out = dir.join("repro");
    let config = dir.join("repro.json");
    let body = serde_json::json!({ "model": "da2", "experiment": "all", "seed": 23, "out": out });
    std::fs::write(&config, body.to_string()).map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    for _ in 0..2 {
        let _ = std::fs::remove_dir_all(&out);
        let status = Command::new(env!("CARGO_BIN_EXE_pliss-lab"))
            .args(["run", "--config"])
            .arg(&config)
            .output()
            .map_err(|e| e.to_string())?
            .status;
        if !matches!(status.code(), Some(0 | 1)) {
            return Err(format!("run exited with {status}"));
        }
        trees.push(read_tree(&out));
    }
    let differing: Vec<_> =
        trees[0].iter().filter(|(k, v)| trees[1].get(*k) != Some(v)).map(|(k, _)| k.display().to_string()).collect();
    if trees[0].len() > 1 && trees[0].len() == trees[1].len() && differing.is_empty() {
        Ok(format!("{} files bit-identical", trees[0].len()))
    } else {
        Err(format!("differing files {differing:?}"))
    }
}

#[test]
fn acceptance() {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    let mut failed = Vec::new();
    let mut report = |id: usize, name: &str, limit: Duration, f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        let v = f();
        let dt = t.elapsed();
        let (ok, detail) = match v {
            Ok(d) if dt <= limit => (true, d),
            Ok(d) => (false, format!("{d}; over time budget")),
            Err(d) => (false, d),
        };
        let tag = if ok { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {tag} {name}: {detail} ({:.1}s of {}s)", dt.as_secs_f64(), limit.as_secs());
        if !ok {
            failed.push(format!("{id} {name}"));
        }
    };
    let secs = Duration::from_secs;
    report(1, "pliss oracle", secs(5), &mut c1_pliss_oracle);
    report(2, "pliss lemma", secs(10), &mut c2_pliss_lemma);
    report(3, "lyapunov ground truth", secs(5), &mut c3_lyapunov);
    report(4, "chi-min and appendix identity", secs(60), &mut c4_chi_min_appendix);
    report(5, "folner verification", secs(300), &mut c5_folner);
    report(6, "gibbs property", secs(300), &mut c6_gibbs);
    report(7, "entropy and pesin", secs(600), &mut c7_entropy);
    let mut runs = BTreeMap::new();
    report(8, "distortion and pliss iterate", secs(120), &mut || {
        runs = density_runs();
        c8_distortion(&runs)
    });
    report(9, "bi-pliss and mean ergodic", secs(30), &mut c9_bipliss);
    report(10, "vitali selection", secs(5), &mut || c10_vitali(&runs));
    report(11, "density trend", secs(600), &mut || c11_density(&runs, &dir));
    report(12, "reproducibility", secs(600), &mut || c12_reproducible(&dir));
    assert!(failed.is_empty(), "failing criteria: {}", failed.join(", "));
}
