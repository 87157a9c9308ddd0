//! Følner time sets filled with Pliss times over a sample set of disk points.

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{tangent_expansions, FDisk};
use crate::models::{Jitter, MapModel};
use crate::pliss::{fill, pliss_times, TimeSet};

#[derive(Clone, Debug, PartialEq)]
pub struct FolnerLevel {
    pub n: usize,
    pub lambda_indices: Vec<usize>,
    pub q: TimeSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FolnerPlan {
    pub levels: Vec<FolnerLevel>,
    pub alpha: f64,
    pub sample_weights: Vec<f64>,
    /// Schedule positions dropped for lack of dense samples.
    pub dropped: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct SelectOptions {
    /// Longest gap between consecutive anchors bridged inside Q.
    pub max_gap: usize,
    /// Weighted vote a time needs to become an anchor.
    pub vote: f64,
}

impl Default for SelectOptions {
    fn default() -> Self {
        SelectOptions { max_gap: 50, vote: 0.5 }
    }
}

/// n_l = ceil(N / 2^(L-1-l)) for l < L.
pub fn geometric_schedule(horizon: usize, level_count: usize) -> Vec<usize> {
    (0..level_count)
        .map(|l| {
            let div = 2f64.powi((level_count - 1 - l) as i32);
            ((horizon as f64 / div).ceil() as usize).max(1)
        })
        .collect()
}

fn validate(pliss_sets: &[TimeSet], weights: &[f64]) -> Result<usize> {
    if pliss_sets.is_empty() || pliss_sets.len() != weights.len() {
        return Err(Error::arg("need one weight per nonempty Pliss set"));
    }
    let h = pliss_sets[0].horizon();
    for (i, p) in pliss_sets.iter().enumerate() {
        if p.horizon() != h {
            return Err(Error::arg(format!("Pliss set {i} has horizon {} instead of {h}", p.horizon())));
        }
        if !p.contains(0) {
            return Err(Error::arg(format!("Pliss set {i} misses time 0")));
        }
    }
    if weights.iter().any(|w| w.is_nan() || *w <= 0.0) {
        return Err(Error::arg("weights must be positive"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::arg(format!("weights sum to {total}, expected 1")));
    }
    Ok(h)
}

/// Union of [a, b) over consecutive anchors a < b <= n with b - a <= max_gap.
fn bridge(anchors: &[usize], n: usize, max_gap: usize) -> TimeSet {
    let mut members = Vec::new();
    for w in anchors.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b > n {
            break;
        }
        if b - a <= max_gap {
            members.extend(a..b);
        }
    }
    TimeSet::new(n, members).expect("bridged times lie below n")
}

pub fn folner_select(pliss_sets: &[TimeSet], weights: &[f64], alpha_target: f64, level_count: usize) -> Result<FolnerPlan> {
    folner_select_with(pliss_sets, weights, alpha_target, level_count, &SelectOptions::default())
}

/// Greedy constructor: anchors are times that are Pliss for a weighted
/// majority of samples, Q bridges consecutive anchors, and Lambda keeps the
/// samples whose Pliss set contains the boundary of Q and meets the density
/// target inside Q.
pub fn folner_select_with(
    pliss_sets: &[TimeSet],
    weights: &[f64],
    alpha_target: f64,
    level_count: usize,
    opts: &SelectOptions,
) -> Result<FolnerPlan> {
    let horizon = validate(pliss_sets, weights)?;
    if level_count == 0 {
        return Err(Error::arg("need at least one level"));
    }
    let mut votes = vec![0.0; horizon + 1];
    for (p, w) in pliss_sets.iter().zip(weights) {
        for &t in p.members() {
            votes[t] += w;
        }
    }
    let mut levels = Vec::new();
    let mut dropped = Vec::new();
    let mut last = 0;
    for (l, n) in geometric_schedule(horizon, level_count).into_iter().enumerate() {
        if n <= last {
            dropped.push(l);
            continue;
        }
        let anchors: Vec<usize> = (0..=n).filter(|&t| t == 0 || votes[t] > opts.vote).collect();
        let q = bridge(&anchors, n, opts.max_gap);
        let boundary = q.boundary();
        let lambda_indices: Vec<usize> = pliss_sets
            .par_iter()
            .enumerate()
            .filter(|(_, p)| {
                boundary.members().iter().all(|&t| p.contains(t))
                    && q.intersection_count(p) as f64 / n as f64 >= alpha_target
            })
            .map(|(i, _)| i)
            .collect();
        if lambda_indices.is_empty() {
            warn!("level {l} (n = {n}) dropped: no sample reaches density {alpha_target}");
            dropped.push(l);
            continue;
        }
        last = n;
        levels.push(FolnerLevel { n, lambda_indices, q });
    }
    if levels.is_empty() {
        return Err(Error::EmptySet("every Følner level was dropped".into()));
    }
    Ok(FolnerPlan { levels, alpha: alpha_target, sample_weights: weights.to_vec(), dropped })
}

/// Per-level quantities; serialises with exactly these keys.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct LevelReport {
    pub q_density: f64,
    pub boundary_ratio: f64,
    pub log_mass_ratio: f64,
    pub boundary_in_pliss: bool,
    pub fill_deficit: f64,
    pub lower_density: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    pub eps_boundary: f64,
    pub eps_mass: f64,
    pub eps_fill: f64,
    pub m: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { eps_boundary: 0.05, eps_mass: 0.05, eps_fill: 0.1, m: 50 }
    }
}

/// One flag per item of the Følner contract, evaluated at the final level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub struct FolnerChecks {
    pub increasing_nonempty: bool,
    pub mass: bool,
    pub q_density: bool,
    pub folner: bool,
    pub boundary_in_pliss: bool,
    pub fill: bool,
    pub lower_density: bool,
}

impl FolnerChecks {
    pub fn all(&self) -> bool {
        self.increasing_nonempty
            && self.mass
            && self.q_density
            && self.folner
            && self.boundary_in_pliss
            && self.fill
            && self.lower_density
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FolnerReport {
    pub levels: Vec<LevelReport>,
    pub checks: FolnerChecks,
}

impl FolnerReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.levels).expect("plain numbers serialise")
    }
}

pub fn level_report(level: &FolnerLevel, pliss_sets: &[TimeSet], weights: &[f64], m: usize) -> LevelReport {
    let n = level.n as f64;
    let q = &level.q;
    let boundary = q.boundary();
    let mass: f64 = level.lambda_indices.iter().map(|&i| weights[i]).sum();
    let mut boundary_in_pliss = true;
    let mut fill_deficit = 0.0f64;
    let mut lower_density = f64::INFINITY;
    for &i in &level.lambda_indices {
        let p = &pliss_sets[i];
        boundary_in_pliss &= boundary.members().iter().all(|&t| p.contains(t));
        let pm = fill(p, m);
        fill_deficit = fill_deficit.max((q.len() - q.intersection_count(&pm)) as f64 / n);
        lower_density = lower_density.min(q.intersection_count(p) as f64 / n);
    }
    if level.lambda_indices.is_empty() {
        lower_density = 0.0;
    }
    LevelReport {
        q_density: q.len() as f64 / n,
        boundary_ratio: boundary.len() as f64 / n,
        log_mass_ratio: mass.ln() / n,
        boundary_in_pliss,
        fill_deficit,
        lower_density,
    }
}

pub fn verify_folner(plan: &FolnerPlan, pliss_sets: &[TimeSet], tol: &Tolerances) -> FolnerReport {
    let levels: Vec<LevelReport> = plan
        .levels
        .iter()
        .map(|l| level_report(l, pliss_sets, &plan.sample_weights, tol.m))
        .collect();
    let increasing = plan.levels.windows(2).all(|w| w[0].n < w[1].n)
        && plan.levels.iter().all(|l| !l.lambda_indices.is_empty() && l.q.members().iter().all(|&t| t < l.n));
    let checks = match levels.last() {
        None => FolnerChecks {
            increasing_nonempty: false,
            mass: false,
            q_density: false,
            folner: false,
            boundary_in_pliss: false,
            fill: false,
            lower_density: false,
        },
        Some(r) => FolnerChecks {
            increasing_nonempty: increasing,
            mass: r.log_mass_ratio.abs() <= tol.eps_mass,
            q_density: r.q_density >= plan.alpha - tol.eps_fill,
            folner: r.boundary_ratio <= tol.eps_boundary,
            boundary_in_pliss: r.boundary_in_pliss,
            fill: r.fill_deficit <= tol.eps_fill,
            lower_density: r.lower_density >= plan.alpha - tol.eps_fill,
        },
    };
    FolnerReport { levels, checks }
}

/// Pliss sets of the disk samples along the disk tangent, with weights
/// normalised to one.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub pliss_sets: Vec<TimeSet>,
    pub weights: Vec<f64>,
    /// Largest one-step expansion seen, the A of the Pliss bound.
    pub a_max: f64,
    /// Smallest full-horizon expansion average over the samples.
    pub min_mean: f64,
}

pub fn disk_ensemble(model: &dyn MapModel, disk: &FDisk, horizon: usize, a_prime: f64, seed: u64) -> Result<Ensemble> {
    let total = disk.total_weight();
    let rows: Vec<(TimeSet, f64, f64)> = disk
        .samples
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let seq = tangent_expansions(model, &s.point, &s.tangent, horizon, Some(Jitter::new(seed, k as u64)))?;
            let a_max = seq.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mean = seq.iter().sum::<f64>() / horizon as f64;
            Ok((pliss_times(&seq, a_prime), a_max, mean))
        })
        .collect::<Result<_>>()?;
    let a_max = rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let min_mean = rows.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    Ok(Ensemble {
        pliss_sets: rows.into_iter().map(|r| r.0).collect(),
        weights: disk.samples.iter().map(|s| s.weight / total).collect(),
        a_max,
        min_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Cat2, Point};
    use proptest::prelude::*;

    #[test]
    fn schedule_is_geometric() {
        assert_eq!(geometric_schedule(20_000, 4), vec![2500, 5000, 10_000, 20_000]);
    }

    #[test]
    fn full_pliss_sets_give_full_q() {
        let n = 1000;
        let sets = vec![TimeSet::full(n); 4];
        let w = vec![0.25; 4];
        let plan = folner_select(&sets, &w, 0.9, 3).unwrap();
        for l in &plan.levels {
            assert_eq!(l.q, TimeSet::interval(l.n).with_horizon(l.n).unwrap());
            assert_eq!(l.lambda_indices, vec![0, 1, 2, 3]);
        }
        let tol = Tolerances { eps_boundary: 0.0, eps_mass: 0.0, eps_fill: 0.0, m: 50 };
        let rep = verify_folner(&plan, &sets, &tol);
        for (l, r) in plan.levels.iter().zip(&rep.levels) {
            assert_eq!(r.boundary_ratio, 2.0 / l.n as f64);
            assert_eq!(r.q_density, 1.0);
        }
        let c = rep.checks;
        assert!(c.increasing_nonempty && c.mass && c.q_density && c.boundary_in_pliss && c.fill && c.lower_density);
        assert!(!c.folner);
    }

    #[test]
    fn evens_give_even_endpoints() {
        let n = 400;
        let sets = vec![TimeSet::new(n, (0..=n).filter(|t| t % 2 == 0)).unwrap()];
        let plan = folner_select(&sets, &[1.0], 0.45, 2).unwrap();
        for l in &plan.levels {
            assert!(l.q.len() as f64 / l.n as f64 >= 0.5);
            assert!(l.q.boundary().members().iter().all(|t| t % 2 == 0));
        }
    }

    #[test]
    fn odd_plan_fails_folner_item() {
        let n = 100;
        let sets = vec![TimeSet::full(n)];
        let plan = FolnerPlan {
            levels: vec![FolnerLevel {
                n,
                lambda_indices: vec![0],
                q: TimeSet::new(n, (0..n).filter(|t| t % 2 == 1)).unwrap(),
            }],
            alpha: 0.4,
            sample_weights: vec![1.0],
            dropped: vec![],
        };
        let rep = verify_folner(&plan, &sets, &Tolerances::default());
        assert_eq!(rep.levels[0].boundary_ratio, 1.0);
        assert!(!rep.checks.folner);
    }

    #[test]
    fn sparse_sets_drop_levels() {
        let sets = vec![TimeSet::new(100, [0]).unwrap()];
        assert!(folner_select(&sets, &[1.0], 0.5, 3).is_err());
    }

    #[test]
    fn report_json_keys() {
        let sets = vec![TimeSet::full(64)];
        let plan = folner_select(&sets, &[1.0], 0.5, 1).unwrap();
        let v = verify_folner(&plan, &sets, &Tolerances::default()).to_json();
        let keys: Vec<&String> = v[0].as_object().unwrap().keys().collect();
        assert_eq!(
            keys,
            ["boundary_in_pliss", "boundary_ratio", "fill_deficit", "log_mass_ratio", "lower_density", "q_density"]
        );
    }

    #[test]
    fn cat2_disk_is_fully_pliss() {
        let d = FDisk::straight(&Cat2, &Point::new(&[0.3, 0.6]), None, 0.05, 50).unwrap();
        let ens = disk_ensemble(&Cat2, &d, 2000, 0.9, 1).unwrap();
        assert!(ens.pliss_sets.iter().all(|p| p.len() == 2001));
        let plan = folner_select(&ens.pliss_sets, &ens.weights, 0.9, 3).unwrap();
        let rep = verify_folner(&plan, &ens.pliss_sets, &Tolerances::default());
        assert!(rep.levels.iter().all(|r| r.q_density == 1.0));
        assert!(rep.checks.all());
    }

    fn sets_strategy() -> impl Strategy<Value = (Vec<Vec<bool>>, Vec<Vec<bool>>)> {
        prop::collection::vec(prop::collection::vec(prop::bool::weighted(0.8), 300), 1..6).prop_flat_map(|base| {
            let k = base.len();
            (Just(base), prop::collection::vec(prop::collection::vec(prop::bool::weighted(0.3), 300), k))
        })
    }

    fn to_sets(bits: &[Vec<bool>]) -> Vec<TimeSet> {
        bits.iter()
            .map(|b| TimeSet::new(b.len(), std::iter::once(0).chain((1..b.len()).filter(|&t| b[t]))).unwrap())
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn boundary_is_inside_every_retained_set((base, extra) in sets_strategy()) {
            let sets = to_sets(&base);
            let w = vec![1.0 / sets.len() as f64; sets.len()];
            if let Ok(plan) = folner_select(&sets, &w, 0.3, 3) {
                let rep = verify_folner(&plan, &sets, &Tolerances::default());
                prop_assert!(rep.levels.iter().all(|r| r.boundary_in_pliss));
                prop_assert!(rep.levels.iter().all(|r| r.lower_density >= 0.3));
                let _ = extra;
            }
        }

        #[test]
        fn enlarging_sets_grows_q((base, extra) in sets_strategy()) {
            let small = to_sets(&base);
            let grown: Vec<Vec<bool>> = base.iter().zip(&extra)
                .map(|(b, e)| b.iter().zip(e).map(|(x, y)| *x || *y).collect())
                .collect();
            let large = to_sets(&grown);
            let w = vec![1.0 / small.len() as f64; small.len()];
            if let (Ok(p1), Ok(p2)) = (folner_select(&small, &w, 0.3, 3), folner_select(&large, &w, 0.3, 3)) {
                for l1 in &p1.levels {
                    if let Some(l2) = p2.levels.iter().find(|l| l.n == l1.n) {
                        prop_assert!(l1.q.is_subset(&l2.q));
                    }
                }
            }
        }
    }
}
