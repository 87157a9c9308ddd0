//! Grid histogram measures: empirical, Følner and Pliss-weighted measures,
//! push-forwards and invariance defects, and the identity between chi^F_min
//! and the exponents of empirical measures.

use std::io::Write;

use crate::cocycle::{beta_p, p_step_log_mini_norms};
use crate::error::{Error, Result};
use crate::folner::FolnerLevel;
use crate::geometry::FDisk;
use crate::models::{orbit, walk, Jitter, Manifold, MapModel, Point, MAX_DIM};
use crate::pliss::TimeSet;

/// Nonnegative weights on a uniform grid with `resolution` cells per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct GridMeasure {
    pub resolution: usize,
    pub manifold: Manifold,
    pub weights: Vec<f64>,
}

impl GridMeasure {
    pub fn zeros(manifold: Manifold, resolution: usize) -> Result<GridMeasure> {
        if resolution == 0 {
            return Err(Error::arg("resolution must be positive"));
        }
        let cells = resolution
            .checked_pow(manifold.dim() as u32)
            .filter(|c| *c <= 1 << 28)
            .ok_or_else(|| Error::arg("grid too large"))?;
        Ok(GridMeasure { resolution, manifold, weights: vec![0.0; cells] })
    }

    pub fn uniform(manifold: Manifold, resolution: usize) -> Result<GridMeasure> {
        let mut g = GridMeasure::zeros(manifold, resolution)?;
        let w = 1.0 / g.weights.len() as f64;
        g.weights.iter_mut().for_each(|v| *v = w);
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.manifold.dim()
    }

    pub fn cell_of(&self, p: &Point) -> usize {
        let mut idx = 0;
        for a in 0..self.dim() {
            let (lo, hi) = self.manifold.axis_range(a);
            let k = (((p[a] - lo) / (hi - lo)) * self.resolution as f64).floor();
            let k = (k.max(0.0) as usize).min(self.resolution - 1);
            idx = idx * self.resolution + k;
        }
        idx
    }

    fn cell_corner(&self, cell: usize) -> [f64; MAX_DIM] {
        let d = self.dim();
        let mut c = [0.0; MAX_DIM];
        let mut rest = cell;
        for a in (0..d).rev() {
            let k = rest % self.resolution;
            rest /= self.resolution;
            let (lo, hi) = self.manifold.axis_range(a);
            c[a] = lo + (hi - lo) * k as f64 / self.resolution as f64;
        }
        c
    }

    pub fn cell_center(&self, cell: usize) -> Point {
        let d = self.dim();
        let mut c = self.cell_corner(cell);
        for (a, ca) in c.iter_mut().enumerate().take(d) {
            let (lo, hi) = self.manifold.axis_range(a);
            *ca += 0.5 * (hi - lo) / self.resolution as f64;
        }
        Point::new(&c[..d])
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn add(&mut self, p: &Point, w: f64) {
        let c = self.cell_of(p);
        self.weights[c] += w;
    }

    pub fn normalize(&mut self) -> Result<()> {
        let t = self.total();
        if t.is_nan() || t <= 0.0 {
            return Err(Error::EmptySet("measure has no mass".into()));
        }
        self.weights.iter_mut().for_each(|v| *v /= t);
        Ok(())
    }

    fn same_grid(&self, other: &GridMeasure) -> Result<()> {
        if self.resolution != other.resolution || self.manifold != other.manifold {
            return Err(Error::arg("measures live on different grids"));
        }
        Ok(())
    }

    /// a self + b other.
    pub fn combine(&self, a: f64, other: &GridMeasure, b: f64) -> Result<GridMeasure> {
        self.same_grid(other)?;
        let weights = self.weights.iter().zip(&other.weights).map(|(x, y)| a * x + b * y).collect();
        Ok(GridMeasure { resolution: self.resolution, manifold: self.manifold, weights })
    }

    /// One-step image, moving each cell's mass with a lattice of sub^d points
    /// anchored at the cell corner.
    pub fn push_forward(&self, model: &dyn MapModel, sub: usize) -> Result<GridMeasure> {
        let d = self.dim();
        if model.manifold() != self.manifold {
            return Err(Error::arg("measure and model live on different manifolds"));
        }
        let sub = sub.max(1);
        let per = sub.pow(d as u32);
        let mut out = GridMeasure::zeros(self.manifold, self.resolution)?;
        for (cell, &w) in self.weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let corner = self.cell_corner(cell);
            let share = w / per as f64;
            for j in 0..per {
                let mut c = corner;
                let mut rest = j;
                for (a, ca) in c.iter_mut().enumerate().take(d) {
                    let (lo, hi) = self.manifold.axis_range(a);
                    *ca += (hi - lo) * (rest % sub) as f64 / (self.resolution * sub) as f64;
                    rest /= sub;
                }
                out.add(&model.forward(&Point::new(&c[..d])), share);
            }
        }
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "cell,weight")?;
        for (c, v) in self.weights.iter().enumerate() {
            writeln!(w, "{c},{v:.17e}")?;
        }
        Ok(())
    }

    /// JSON sidecar describing the grid.
    pub fn sidecar(&self, provenance: &str) -> serde_json::Value {
        serde_json::json!({
            "resolution": self.resolution,
            "manifold": self.manifold.tag(),
            "provenance": provenance,
        })
    }
}

pub fn total_variation(a: &GridMeasure, b: &GridMeasure) -> Result<f64> {
    a.same_grid(b)?;
    Ok(0.5 * a.weights.iter().zip(&b.weights).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

pub fn birkhoff_empirical(model: &dyn MapModel, x: &Point, n: usize, resolution: usize) -> Result<GridMeasure> {
    birkhoff_empirical_with(model, x, n, resolution, None)
}

pub fn birkhoff_empirical_with(
    model: &dyn MapModel,
    x: &Point,
    n: usize,
    resolution: usize,
    jitter: Option<Jitter>,
) -> Result<GridMeasure> {
    if n == 0 {
        return Err(Error::arg("n must be at least 1"));
    }
    let mut g = GridMeasure::zeros(model.manifold(), resolution)?;
    // integer counts first so point masses come out exact
    walk(model, x, n, jitter, |_, p| g.add(p, 1.0))?;
    g.weights.iter_mut().for_each(|v| *v /= n as f64);
    Ok(g)
}

/// Lattice sub-sampling used by `invariance_defect`.
pub const PUSH_SUBDIVISION: usize = 4;

/// Total variation between mu and its one-step push-forward.
pub fn invariance_defect(model: &dyn MapModel, mu: &GridMeasure) -> Result<f64> {
    total_variation(mu, &mu.push_forward(model, PUSH_SUBDIVISION)?)
}

pub fn integrate(mu: &GridMeasure, observable: impl Fn(&Point) -> f64) -> f64 {
    mu.weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0)
        .map(|(c, w)| w * observable(&mu.cell_center(c)))
        .sum()
}

#[derive(Clone, Debug)]
pub struct FolnerMeasures {
    /// (1/#Q) sum_{i in Q} f^i_* mu_l, mu_l the normalised disk mass on Lambda_l.
    pub nu: GridMeasure,
    /// Same average restricted to Pliss times; total mass <= 1.
    pub eta: GridMeasure,
    /// Total variation between the particle histograms over Q and Q + 1.
    pub shift_defect: f64,
}

/// nu_l and eta_l of a plan level over the disk samples.
pub fn folner_empirical(
    model: &dyn MapModel,
    disk: &FDisk,
    level: &FolnerLevel,
    pliss_sets: &[TimeSet],
    resolution: usize,
    jitter_seed: Option<u64>,
) -> Result<FolnerMeasures> {
    if level.lambda_indices.is_empty() {
        return Err(Error::EmptySet("Lambda".into()));
    }
    if level.q.is_empty() {
        return Err(Error::EmptySet("Q".into()));
    }
    let man = model.manifold();
    let mut nu = GridMeasure::zeros(man, resolution)?;
    let mut eta = GridMeasure::zeros(man, resolution)?;
    let mut shifted = GridMeasure::zeros(man, resolution)?;
    let lam_mass: f64 = level.lambda_indices.iter().map(|&i| disk.samples[i].weight).sum();
    let q = &level.q;
    let last = *q.members().last().expect("nonempty Q");
    for &i in &level.lambda_indices {
        let w = disk.samples[i].weight / lam_mass / q.len() as f64;
        let p = &pliss_sets[i];
        let jitter = jitter_seed.map(|s| Jitter::new(s, i as u64));
        walk(model, &disk.samples[i].point, last + 2, jitter, |t, pt| {
            if q.contains(t) {
                nu.add(pt, w);
                if p.contains(t) {
                    eta.add(pt, w);
                }
            }
            if t >= 1 && q.contains(t - 1) {
                shifted.add(pt, w);
            }
        })?;
    }
    let shift_defect = total_variation(&nu, &shifted)?;
    Ok(FolnerMeasures { nu, eta, shift_defect })
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct AppendixReport {
    pub chi: f64,
    pub sup_emp: f64,
    pub gap: f64,
    /// Largest excess of a measure-side average over beta_p / p.
    pub one_sided_excess: f64,
    /// Largest invariance defect among the empirical histograms.
    pub max_defect: f64,
    pub schedule: Vec<usize>,
}

/// n_k = ceil(n k / 10) for k = 5..=10.
pub fn appendix_schedule(n: usize) -> Vec<usize> {
    (5..=10).map(|k| (n * k).div_ceil(10)).collect()
}

/// chi^F_min over prefix lengths in [n/2, n] against the largest p-step
/// mini-norm average under the empirical measures mu_x^{n_k}.
pub fn appendix_identity_check(
    model: &dyn MapModel,
    x: &Point,
    p_max: usize,
    n: usize,
    resolution: usize,
) -> Result<AppendixReport> {
    if p_max == 0 {
        return Err(Error::arg("p_max must be at least 1"));
    }
    let trace = orbit(model, x, n + p_max, 1)?;
    let schedule = appendix_schedule(n);
    let mut chi = f64::NEG_INFINITY;
    let mut sup_emp = f64::NEG_INFINITY;
    let mut excess = f64::NEG_INFINITY;
    for p in 1..=p_max {
        let beta = beta_p(&trace, p, n, 0.5)?;
        chi = chi.max(beta / p as f64);
        let seq = p_step_log_mini_norms(&trace, p, n)?;
        // same accumulation order as the windowed prefix scan
        let mut s = 0.0;
        let mut k = 0;
        for (i, v) in seq.iter().enumerate() {
            s += v;
            if k < schedule.len() && i + 1 == schedule[k] {
                let emp = s / schedule[k] as f64;
                sup_emp = sup_emp.max(emp / p as f64);
                excess = excess.max(emp / p as f64 - beta / p as f64);
                k += 1;
            }
        }
    }
    let mut max_defect = 0.0f64;
    for &nk in &schedule {
        let mu = birkhoff_empirical(model, x, nk, resolution)?;
        max_defect = max_defect.max(invariance_defect(model, &mu)?);
    }
    Ok(AppendixReport { chi, sup_emp, gap: (chi - sup_emp).abs(), one_sided_excess: excess, max_defect, schedule })
}
