//! Cone fields, F-disks and their iterates, bounded distortion, dynamical
//! balls and the Vitali selection.
//!
//! Disks are one-dimensional: every disk-consuming model here has dim F = 1.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::{manifold_distance, splitting, MapModel, Point, MAX_DIM};
use crate::pliss::pliss_times;
use crate::rng;

pub type Vector = [f64; MAX_DIM];

fn to_vec(v: &[f64]) -> Vector {
    let mut out = [0.0; MAX_DIM];
    out[..v.len()].copy_from_slice(v);
    out
}

fn vnorm(v: &Vector, d: usize) -> f64 {
    v[..d].iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// One step of the tangent map: image point, unit image tangent, log stretch.
pub fn tangent_step(model: &dyn MapModel, p: &Point, v: &Vector) -> (Point, Vector, f64) {
    let d = model.dim();
    let m = model.derivative(p);
    let mut w = [0.0; MAX_DIM];
    for i in 0..d {
        for j in 0..d {
            w[i] += m[(i, j)] * v[j];
        }
    }
    let s = vnorm(&w, d);
    for a in w.iter_mut().take(d) {
        *a /= s;
    }
    (model.forward(p), w, s.ln())
}

/// log ||Df v_i|| along the forward orbit of (x, v) for i < n, with the
/// optional sub-ulp jitter of long runs.
pub fn tangent_expansions(
    model: &dyn MapModel,
    x: &Point,
    v: &Vector,
    n: usize,
    jitter: Option<crate::models::Jitter>,
) -> Result<Vec<f64>> {
    let man = model.manifold();
    let mut js = jitter.map(crate::models::Jitter::start);
    let mut p = *x;
    let mut t = *v;
    let d = model.dim();
    let s = vnorm(&t, d);
    for a in t.iter_mut().take(d) {
        *a /= s;
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if !model.in_domain(&p) {
            return Err(Error::Escape { step: i });
        }
        let (q, w, l) = tangent_step(model, &p, &t);
        out.push(l);
        p = q;
        t = w;
        if let Some(js) = js.as_mut() {
            p = js.apply(&man, &p);
        }
    }
    Ok(out)
}

/// Norms of the E and F components of v in the splitting at x.
pub fn cone_components(model: &dyn MapModel, x: &Point, v: &[f64]) -> Result<(f64, f64)> {
    let d = model.dim();
    if v.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: v.len() });
    }
    let s = splitting(model, x);
    let (ke, kf) = (s.e.ncols(), s.f.ncols());
    let mut basis = DMatrix::zeros(d, d);
    basis.columns_mut(0, ke).copy_from(&s.e);
    basis.columns_mut(ke, kf).copy_from(&s.f);
    let c = basis
        .lu()
        .solve(&DVector::from_column_slice(v))
        .ok_or_else(|| Error::arg("degenerate splitting"))?;
    let ve = &s.e * c.rows(0, ke);
    let vf = &s.f * c.rows(ke, kf);
    Ok((ve.norm(), vf.norm()))
}

/// ||v^E|| < theta ||v^F||.
pub fn in_cone(model: &dyn MapModel, x: &Point, v: &[f64], theta: f64) -> Result<bool> {
    let (e, f) = cone_components(model, x, v)?;
    Ok(e < theta * f)
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct ConeCheck {
    pub pass: bool,
    pub worst_ratio: f64,
}

/// Pushes random unit vectors on the boundary of C^F_theta and measures how
/// deep their images sit inside C^F_{theta/2}.
pub fn cone_invariance_check(model: &dyn MapModel, theta: f64, samples: usize, seed: u64) -> Result<ConeCheck> {
    if theta <= 0.0 {
        return Err(Error::arg("theta must be positive"));
    }
    let d = model.dim();
    let worst = (0..samples)
        .into_par_iter()
        .map(|s| -> Result<f64> {
            let mut r = rng::stream(seed, s as u64);
            let x = model.sample_point(&mut r);
            let sp = splitting(model, &x);
            let unit = |m: &DMatrix<f64>, r: &mut rng::Rng| {
                let c = DVector::from_fn(m.ncols(), |_, _| r.gen::<f64>() * 2.0 - 1.0);
                let v = m * c;
                let n = v.norm();
                v / n
            };
            let uf = unit(&sp.f, &mut r);
            let ue = unit(&sp.e, &mut r);
            let v = uf + ue * theta;
            let w = model.derivative(&x) * v;
            let (we, wf) = cone_components(model, &model.forward(&x), w.as_slice())?;
            Ok(we / (0.5 * theta * wf))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0f64, f64::max);
    debug_assert!(d > 0);
    Ok(ConeCheck { pass: worst < 1.0, worst_ratio: worst })
}

#[derive(Clone, Copy, Debug)]
pub struct DiskSample {
    pub point: Point,
    /// Riemannian length carried by the sample's cell.
    pub weight: f64,
    pub tangent: Vector,
    /// Parameter of the sample on its disk.
    pub param: f64,
}

/// Graph of a Lipschitz map from the F(center)-interval into E(center),
/// sampled on a regular grid of cells.
#[derive(Clone, Debug)]
pub struct FDisk {
    pub center: Point,
    pub radius: f64,
    pub axis: Vector,
    pub normal: DMatrix<f64>,
    pub params: Vec<f64>,
    pub graph: Vec<Vec<f64>>,
    pub samples: Vec<DiskSample>,
    pub lipschitz_bound: f64,
}

fn require_line(model: &dyn MapModel) -> Result<()> {
    if model.dim_f() != 1 {
        return Err(Error::arg(format!(
            "F-disks are implemented for dim F = 1 ({} has dim F = {})",
            model.name(),
            model.dim_f()
        )));
    }
    Ok(())
}

impl FDisk {
    /// Straight segment through `center` along `dir` (default F(center)).
    pub fn straight(
        model: &dyn MapModel,
        center: &Point,
        dir: Option<&[f64]>,
        radius: f64,
        cells: usize,
    ) -> Result<FDisk> {
        require_line(model)?;
        if cells == 0 || radius <= 0.0 {
            return Err(Error::arg("disk needs positive radius and at least one cell"));
        }
        let d = model.dim();
        let sp = splitting(model, center);
        let mut axis = match dir {
            Some(v) if v.len() == d => to_vec(v),
            Some(v) => return Err(Error::DimensionMismatch { expected: d, got: v.len() }),
            None => to_vec(sp.f.column(0).as_slice()),
        };
        let s = vnorm(&axis, d);
        for a in axis.iter_mut().take(d) {
            *a /= s;
        }
        let h = 2.0 * radius / cells as f64;
        let params: Vec<f64> = (0..cells).map(|k| -radius + (k as f64 + 0.5) * h).collect();
        let man = model.manifold();
        let mut samples = Vec::with_capacity(cells);
        for &t in &params {
            let off: Vec<f64> = (0..d).map(|i| t * axis[i]).collect();
            let point = man.displace(center, &off);
            if !model.in_domain(&point) {
                return Err(Error::arg("disk leaves the model domain"));
            }
            samples.push(DiskSample { point, weight: h, tangent: axis, param: t });
        }
        let ke = sp.e.ncols();
        Ok(FDisk {
            center: *center,
            radius,
            axis,
            normal: sp.e,
            graph: vec![vec![0.0; ke]; cells],
            params,
            samples,
            lipschitz_bound: 0.0,
        })
    }

    /// Re-expresses an ordered run of samples as a graph over the tangent at
    /// `center_idx`.
    pub fn from_samples(model: &dyn MapModel, samples: Vec<DiskSample>, center_idx: usize) -> Result<FDisk> {
        require_line(model)?;
        if samples.is_empty() || center_idx >= samples.len() {
            return Err(Error::EmptySet("disk samples".into()));
        }
        let d = model.dim();
        let man = model.manifold();
        let center = samples[center_idx].point;
        let axis = samples[center_idx].tangent;
        let e = splitting(model, &center).e;
        let ke = e.ncols();
        let mut basis = DMatrix::zeros(d, d);
        basis.column_mut(0).copy_from_slice(&axis[..d]);
        basis.columns_mut(1, ke).copy_from(&e);
        let lu = basis.lu();
        let mut params = Vec::with_capacity(samples.len());
        let mut graph = Vec::with_capacity(samples.len());
        for s in &samples {
            let disp = man.displacement(&center, &s.point)?;
            let c = lu
                .solve(&DVector::from_column_slice(&disp[..d]))
                .ok_or_else(|| Error::arg("degenerate splitting"))?;
            params.push(c[0]);
            graph.push(c.rows(1, ke).iter().copied().collect::<Vec<f64>>());
        }
        let mut lip = 0.0f64;
        for k in 1..params.len() {
            let dt = (params[k] - params[k - 1]).abs();
            if dt > 0.0 {
                let dg: f64 = graph[k].iter().zip(&graph[k - 1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                lip = lip.max(dg / dt);
            }
        }
        let radius = params.iter().fold(0.0f64, |m, t| m.max(t.abs()));
        Ok(FDisk { center, radius, axis, normal: e, params, graph, samples, lipschitz_bound: lip })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.samples.iter().map(|s| s.weight).sum()
    }

    fn graph_at(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let ke = self.normal.ncols();
        let p = &self.params;
        if p.len() < 2 {
            return (vec![0.0; ke], vec![0.0; ke]);
        }
        let k = p.partition_point(|&s| s < t).clamp(1, p.len() - 1);
        let (t0, t1) = (p[k - 1], p[k]);
        let lam = (t - t0) / (t1 - t0);
        let g: Vec<f64> = (0..ke).map(|j| self.graph[k - 1][j] * (1.0 - lam) + self.graph[k][j] * lam).collect();
        let dg: Vec<f64> = (0..ke).map(|j| (self.graph[k][j] - self.graph[k - 1][j]) / (t1 - t0)).collect();
        (g, dg)
    }

    /// Point of the disk over parameter t.
    pub fn point_at(&self, model: &dyn MapModel, t: f64) -> Point {
        let d = model.dim();
        let (g, _) = self.graph_at(t);
        let mut off = vec![0.0; d];
        for (i, o) in off.iter_mut().enumerate() {
            *o = t * self.axis[i] + (0..g.len()).map(|j| self.normal[(i, j)] * g[j]).sum::<f64>();
        }
        model.manifold().displace(&self.center, &off)
    }

    /// Unit tangent of the disk over parameter t.
    pub fn tangent_at(&self, model: &dyn MapModel, t: f64) -> Vector {
        let d = model.dim();
        let (_, dg) = self.graph_at(t);
        let mut v = [0.0; MAX_DIM];
        for (i, vi) in v.iter_mut().enumerate().take(d) {
            *vi = self.axis[i] + (0..dg.len()).map(|j| self.normal[(i, j)] * dg[j]).sum::<f64>();
        }
        let s = vnorm(&v, d);
        for a in v.iter_mut().take(d) {
            *a /= s;
        }
        v
    }

    /// Sub-disk of half-length `half` around parameter `t0`, on `cells` cells.
    pub fn local(&self, model: &dyn MapModel, t0: f64, half: f64, cells: usize) -> Result<FDisk> {
        if cells == 0 || half <= 0.0 {
            return Err(Error::arg("local disk needs positive size"));
        }
        let h = 2.0 * half / cells as f64;
        let samples: Vec<DiskSample> = (0..cells)
            .map(|k| {
                let t = t0 - half + (k as f64 + 0.5) * h;
                DiskSample { point: self.point_at(model, t), weight: h, tangent: self.tangent_at(model, t), param: t }
            })
            .collect();
        // the grid is symmetric around t0, so its middle cell carries t0
        let mut disk = FDisk::from_samples(model, samples, cells / 2)?;
        for (s, k) in disk.samples.iter_mut().zip(0..) {
            s.param = t0 - half + (k as f64 + 0.5) * h;
        }
        Ok(disk)
    }

    /// Exports samples as CSV rows `step,index,x0..,weight`.
    pub fn write_csv<W: Write>(&self, w: &mut W, step: usize, header: bool) -> std::io::Result<()> {
        let d = self.center.dim();
        if header {
            let cols: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
            writeln!(w, "step,index,{},weight", cols.join(","))?;
        }
        for (k, s) in self.samples.iter().enumerate() {
            let c: Vec<String> = s.point.coords().iter().map(|v| format!("{v:.12}")).collect();
            writeln!(w, "{step},{k},{},{:.12e}", c.join(","), s.weight)?;
        }
        Ok(())
    }
}

/// A cell of the original disk followed forward.
#[derive(Clone, Copy, Debug)]
pub struct Particle {
    pub param: f64,
    pub width: f64,
    pub point: Point,
    pub tangent: Vector,
    pub log_jac: f64,
}

impl Particle {
    pub fn image_weight(&self) -> f64 {
        self.width * self.log_jac.exp()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct IterateOptions {
    /// Target image spacing; cells longer than twice this are subdivided.
    pub pitch: f64,
    /// Output pieces carry image length at most 2 delta0.
    pub delta0: f64,
    /// Cone aperture checked on every pushed tangent.
    pub theta: Option<f64>,
    pub max_particles: usize,
}

impl Default for IterateOptions {
    fn default() -> Self {
        IterateOptions { pitch: 1e-3, delta0: 0.05, theta: None, max_particles: 2_000_000 }
    }
}

#[derive(Clone, Debug)]
pub struct DiskImage {
    pub steps: usize,
    pub particles: Vec<Particle>,
    pub pieces: Vec<FDisk>,
}

impl DiskImage {
    pub fn total_weight(&self) -> f64 {
        self.particles.iter().map(Particle::image_weight).sum()
    }
}

fn push_from_disk(model: &dyn MapModel, disk: &FDisk, param: f64, width: f64, steps: usize) -> Result<Particle> {
    let mut p = Particle {
        param,
        width,
        point: disk.point_at(model, param),
        tangent: disk.tangent_at(model, param),
        log_jac: 0.0,
    };
    for i in 0..steps {
        advance(model, &mut p, i)?;
    }
    Ok(p)
}

fn advance(model: &dyn MapModel, p: &mut Particle, step: usize) -> Result<()> {
    if !model.in_domain(&p.point) {
        return Err(Error::Escape { step });
    }
    let (q, w, l) = tangent_step(model, &p.point, &p.tangent);
    p.point = q;
    p.tangent = w;
    p.log_jac += l;
    Ok(())
}

/// Pushes a disk n steps, refining cells whose image outgrows the pitch by
/// re-pushing their children from the original disk, and re-cuts the image
/// into pieces of length at most 2 delta0.
pub fn iterate_disk(model: &dyn MapModel, disk: &FDisk, n: usize, opts: &IterateOptions) -> Result<DiskImage> {
    require_line(model)?;
    let mut particles: Vec<Particle> = disk
        .samples
        .iter()
        .map(|s| Particle { param: s.param, width: s.weight, point: s.point, tangent: s.tangent, log_jac: 0.0 })
        .collect();
    if n == 0 {
        return Ok(DiskImage { steps: 0, particles, pieces: vec![disk.clone()] });
    }
    for k in 0..n {
        particles.par_iter_mut().try_for_each(|p| advance(model, p, k))?;
        let mut refined = Vec::with_capacity(particles.len());
        for p in particles {
            let img = p.image_weight();
            if img > 2.0 * opts.pitch {
                let c = (img / opts.pitch).ceil() as usize;
                let w = p.width / c as f64;
                let children: Vec<Particle> = (0..c)
                    .into_par_iter()
                    .map(|j| push_from_disk(model, disk, p.param - 0.5 * p.width + (j as f64 + 0.5) * w, w, k + 1))
                    .collect::<Result<_>>()?;
                refined.extend(children);
            } else {
                refined.push(p);
            }
            if refined.len() > opts.max_particles {
                return Err(Error::arg(format!("disk image exceeds {} cells at step {}", opts.max_particles, k + 1)));
            }
        }
        particles = refined;
        if let Some(theta) = opts.theta {
            let bad = particles
                .par_iter()
                .position_first(|p| !in_cone(model, &p.point, &p.tangent[..model.dim()], theta).unwrap_or(false));
            if let Some(sample) = bad {
                return Err(Error::ConeViolation { step: k + 1, sample });
            }
        }
    }
    let pieces = cut_pieces(model, &particles, opts.delta0)?;
    Ok(DiskImage { steps: n, particles, pieces })
}

fn cut_pieces(model: &dyn MapModel, particles: &[Particle], delta0: f64) -> Result<Vec<FDisk>> {
    let mut pieces = Vec::new();
    let mut run: Vec<DiskSample> = Vec::new();
    let mut len = 0.0;
    let flush = |run: &mut Vec<DiskSample>, pieces: &mut Vec<FDisk>| -> Result<()> {
        if run.is_empty() {
            return Ok(());
        }
        let total: f64 = run.iter().map(|s| s.weight).sum();
        let mut acc = 0.0;
        let mut c = 0;
        for (k, s) in run.iter().enumerate() {
            acc += s.weight;
            if acc >= 0.5 * total {
                c = k;
                break;
            }
        }
        pieces.push(FDisk::from_samples(model, std::mem::take(run), c)?);
        Ok(())
    };
    for p in particles {
        let w = p.image_weight();
        if len + w > 2.0 * delta0 && !run.is_empty() {
            flush(&mut run, &mut pieces)?;
            len = 0.0;
        }
        len += w;
        run.push(DiskSample { point: p.point, weight: w, tangent: p.tangent, param: p.param });
    }
    flush(&mut run, &mut pieces)?;
    Ok(pieces)
}

/// Forward tracks of every disk sample: points and cumulative log Jacobians
/// along the disk tangent, for times 0..=n.
#[derive(Clone, Debug)]
pub struct DiskFlow {
    pub weights: Vec<f64>,
    pub points: Vec<Vec<Point>>,
    pub log_jac: Vec<Vec<f64>>,
    /// Image arclength coordinate of each sample at each time.
    pub positions: Vec<Vec<f64>>,
}

impl DiskFlow {
    pub fn new(model: &dyn MapModel, disk: &FDisk, n: usize) -> Result<DiskFlow> {
        require_line(model)?;
        let tracks: Vec<(Vec<Point>, Vec<f64>)> = disk
            .samples
            .par_iter()
            .map(|s| {
                let mut pts = Vec::with_capacity(n + 1);
                let mut lj = Vec::with_capacity(n + 1);
                let mut p = Particle { param: s.param, width: s.weight, point: s.point, tangent: s.tangent, log_jac: 0.0 };
                pts.push(p.point);
                lj.push(0.0);
                for i in 0..n {
                    advance(model, &mut p, i)?;
                    pts.push(p.point);
                    lj.push(p.log_jac);
                }
                Ok((pts, lj))
            })
            .collect::<Result<_>>()?;
        let weights: Vec<f64> = disk.samples.iter().map(|s| s.weight).collect();
        let mut positions = vec![Vec::with_capacity(weights.len()); n + 1];
        for (t, pos) in positions.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, w) in weights.iter().enumerate() {
                let img = w * tracks[k].1[t].exp();
                pos.push(acc + 0.5 * img);
                acc += img;
            }
        }
        let (points, log_jac) = tracks.into_iter().unzip();
        Ok(DiskFlow { weights, points, log_jac, positions })
    }

    pub fn horizon(&self) -> usize {
        self.positions.len() - 1
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Samples whose time-n image lies within image distance delta of the
    /// anchor's; a contiguous index range since positions increase.
    pub fn ball(&self, anchor: usize, n: usize, delta: f64) -> Result<DynamicalBall> {
        if n > self.horizon() || anchor >= self.len() {
            return Err(Error::arg("ball outside the tracked flow"));
        }
        let pos = &self.positions[n];
        let c = pos[anchor];
        let lo = pos.partition_point(|&s| s < c - delta);
        let hi = pos.partition_point(|&s| s <= c + delta);
        Ok(DynamicalBall { anchor, n, delta, member_indices: (lo..hi).collect() })
    }

    pub fn family(&self, anchor: usize, n: usize, delta0: f64) -> Result<BallFamily> {
        Ok(BallFamily {
            ball: self.ball(anchor, n, delta0 / 3.0)?,
            hat: self.ball(anchor, n, 2.0 * delta0 / 3.0)?,
            hat_hat: self.ball(anchor, n, delta0)?,
        })
    }

    pub fn mass(&self, ball: &DynamicalBall) -> f64 {
        ball.member_indices.iter().map(|&k| self.weights[k]).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicalBall {
    pub anchor: usize,
    pub n: usize,
    pub delta: f64,
    pub member_indices: Vec<usize>,
}

impl DynamicalBall {
    pub fn meets(&self, other: &DynamicalBall) -> bool {
        let (a, b) = (&self.member_indices, &other.member_indices);
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }

    pub fn is_subset(&self, other: &DynamicalBall) -> bool {
        self.member_indices.iter().all(|k| other.member_indices.binary_search(k).is_ok())
    }
}

/// B, B-hat and B-hat-hat at radii delta0/3, 2 delta0/3 and delta0.
#[derive(Clone, Debug, PartialEq)]
pub struct BallFamily {
    pub ball: DynamicalBall,
    pub hat: DynamicalBall,
    pub hat_hat: DynamicalBall,
}

/// Dynamical ball of a disk sample, pushing the whole disk n steps.
pub fn dynamical_ball(model: &dyn MapModel, disk: &FDisk, anchor: usize, n: usize, delta: f64) -> Result<DynamicalBall> {
    DiskFlow::new(model, disk, n)?.ball(anchor, n, delta)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VitaliSelection {
    /// Indices into the input family, in acceptance order.
    pub accepted: Vec<usize>,
    /// For every rejected ball, an accepted ball meeting its hat.
    pub witness: Vec<Option<usize>>,
}

/// Greedy pass in increasing n: a ball is accepted iff its hat misses every
/// previously accepted ball.
pub fn vitali_select(balls: &[BallFamily]) -> VitaliSelection {
    let mut order: Vec<usize> = (0..balls.len()).collect();
    order.sort_by_key(|&i| balls[i].ball.n);
    let mut accepted: Vec<usize> = Vec::new();
    let mut witness = vec![None; balls.len()];
    for i in order {
        match accepted.iter().find(|&&a| balls[i].hat.meets(&balls[a].ball)) {
            Some(&a) => witness[i] = Some(a),
            None => accepted.push(i),
        }
    }
    VitaliSelection { accepted, witness }
}

/// Exhaustive pair check of a selection.
pub fn verify_vitali(balls: &[BallFamily], sel: &VitaliSelection) -> bool {
    let is_acc: Vec<bool> = (0..balls.len()).map(|i| sel.accepted.contains(&i)).collect();
    for (x, &a) in sel.accepted.iter().enumerate() {
        for &b in &sel.accepted[x + 1..] {
            if balls[a].ball.meets(&balls[b].ball) {
                return false;
            }
        }
    }
    (0..balls.len()).all(|i| {
        is_acc[i]
            || matches!(sel.witness[i], Some(w) if is_acc[w] && balls[i].hat.meets(&balls[w].ball))
    })
}

/// Largest Leb(B-hat-hat) / Leb(B) over the given (anchor, n) pairs.
pub fn double_size_ratio(flow: &DiskFlow, anchors: &[(usize, usize)], delta0: f64) -> Result<f64> {
    let mut worst = 0.0f64;
    for &(a, n) in anchors {
        let f = flow.family(a, n, delta0)?;
        worst = worst.max(flow.mass(&f.hat_hat) / flow.mass(&f.ball));
    }
    Ok(worst)
}

/// Counts (tested, violated) instances of: B_{n1}(z1) meets B-hat_{n2}(z2)
/// implies B_{n2}(z2) inside B-hat-hat_{n1}(z1).
pub fn containment_check(flow: &DiskFlow, pairs: &[(usize, usize, usize, usize)], delta0: f64) -> Result<(usize, usize)> {
    let (mut tested, mut bad) = (0, 0);
    for &(z1, n1, z2, n2) in pairs {
        let f1 = flow.family(z1, n1, delta0)?;
        let f2 = flow.family(z2, n2, delta0)?;
        if f1.ball.meets(&f2.hat) {
            tested += 1;
            if !f2.ball.is_subset(&f1.hat_hat) {
                bad += 1;
            }
        }
    }
    Ok((tested, bad))
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct DistortionReport {
    pub lhs: f64,
    pub mid: f64,
    pub rhs: f64,
    pub pass: bool,
    pub gamma_size: usize,
}

/// Two-sided bound between the image mass of Gamma and its disk mass times
/// the anchor's Jacobian product, Gamma being the samples that stay
/// delta_eps-close to the anchor orbit up to time n.
pub fn distortion_check(
    model: &dyn MapModel,
    disk: &FDisk,
    anchor: usize,
    n: usize,
    epsilon: f64,
    delta_eps: f64,
) -> Result<DistortionReport> {
    let flow = DiskFlow::new(model, disk, n)?;
    distortion_from_flow(model, &flow, anchor, n, epsilon, delta_eps)
}

pub fn distortion_from_flow(
    model: &dyn MapModel,
    flow: &DiskFlow,
    anchor: usize,
    n: usize,
    epsilon: f64,
    delta_eps: f64,
) -> Result<DistortionReport> {
    let man = model.manifold();
    let mut leb = 0.0;
    let mut img = 0.0;
    let mut size = 0;
    for k in 0..flow.len() {
        let mut close = true;
        for i in 0..=n {
            if manifold_distance(&man, &flow.points[k][i], &flow.points[anchor][i])? > delta_eps {
                close = false;
                break;
            }
        }
        if close {
            size += 1;
            leb += flow.weights[k];
            img += flow.weights[k] * flow.log_jac[k][n].exp();
        }
    }
    if size == 0 {
        return Err(Error::EmptySet("shrink delta_eps or n".into()));
    }
    let mid = leb * flow.log_jac[anchor][n].exp();
    let s = (n as f64 * epsilon).exp();
    let (lhs, rhs) = (img / s, img * s);
    Ok(DistortionReport { lhs, mid, rhs, pass: lhs <= mid && mid <= rhs, gamma_size: size })
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct PlissIterateReport {
    /// max over pairs and 0 <= i <= n of log d(f^{-i}y, f^{-i}z) - log d(y, z) + i a.
    pub max_violation: f64,
    /// Largest ratio of Jac f^{-n} between two points of the image disk.
    pub distortion_c: f64,
    /// max over pairs and 1 <= i <= n of (log d(f^{-i}y, f^{-i}z) - log d(y, z)) / i.
    pub max_log_rate: f64,
    pub pairs: usize,
}

impl PlissIterateReport {
    pub fn pass(&self) -> bool {
        self.max_violation <= 0.0
    }
}

/// Backward contraction on the delta0-disk around f^n x, built from a local
/// piece of `disk` around sample `anchor` sized to reach delta0 at time n.
pub fn pliss_iterate_check(
    model: &dyn MapModel,
    disk: &FDisk,
    anchor: usize,
    n: usize,
    a: f64,
    delta0: f64,
    cells: usize,
) -> Result<PlissIterateReport> {
    let s0 = &disk.samples[anchor];
    let sum: f64 = tangent_expansions(model, &s0.point, &s0.tangent, n, None)?.iter().sum();
    let half = 1.5 * delta0 * (-sum).exp();
    let local = disk.local(model, s0.param, half, cells)?;
    let c = cells / 2;
    let flow = DiskFlow::new(model, &local, n)?;
    let pos = &flow.positions[n];
    let centre = pos[c];
    if pos[0] > centre - delta0 || pos[cells - 1] < centre + delta0 {
        return Err(Error::Calibration(format!("image disk at time {n} smaller than delta0 = {delta0}")));
    }
    let inside: Vec<usize> = (0..cells).filter(|&k| (pos[k] - centre).abs() <= delta0).collect();
    let stride = (inside.len() / 40).max(1);
    let picks: Vec<usize> = inside.iter().copied().step_by(stride).collect();
    let man = model.manifold();
    let mut worst = f64::NEG_INFINITY;
    let mut rate = f64::NEG_INFINITY;
    let mut dist_c = 1.0f64;
    let mut pairs = 0;
    for (x, &y) in picks.iter().enumerate() {
        for &z in &picks[x + 1..] {
            pairs += 1;
            let dn = manifold_distance(&man, &flow.points[y][n], &flow.points[z][n])?;
            for i in 0..=n {
                let di = manifold_distance(&man, &flow.points[y][n - i], &flow.points[z][n - i])?;
                worst = worst.max(di.ln() - dn.ln() + i as f64 * a);
                if i > 0 {
                    rate = rate.max((di.ln() - dn.ln()) / i as f64);
                }
            }
            let r = (flow.log_jac[y][n] - flow.log_jac[z][n]).abs().exp();
            dist_c = dist_c.max(r);
        }
    }
    Ok(PlissIterateReport { max_violation: worst, distortion_c: dist_c, max_log_rate: rate, pairs })
}

/// Model-level scales, fixed once per run.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct Calibration {
    pub theta0: f64,
    pub theta1: f64,
    pub delta0: f64,
    pub delta1: f64,
    pub n_min: usize,
    pub delta_eps: f64,
    pub theta_eps: f64,
}

pub const THETA_SWEEP: [f64; 5] = [0.5, 0.4, 0.3, 0.2, 0.1];
pub const DELTA_SWEEP: [f64; 4] = [0.1, 0.05, 0.02, 0.01];

/// Largest cone aperture and scales passing the cone, Pliss-iterate and
/// distortion checks on a short sweep around `center`.
pub fn calibrate(model: &dyn MapModel, center: &Point, a: f64, a_prime: f64, epsilon: f64, seed: u64) -> Result<Calibration> {
    let theta0 = THETA_SWEEP
        .iter()
        .copied()
        .find(|&t| cone_invariance_check(model, t, 500, seed).map(|c| c.pass).unwrap_or(false))
        .ok_or_else(|| Error::Calibration("no cone aperture passes".into()))?;
    let n_min = 10;
    let disk = FDisk::straight(model, center, None, 0.05, 64)?;
    let anchors = [8usize, 24, 40, 56];
    let pliss_ok = |k: usize, n: usize| -> Result<bool> {
        let s = &disk.samples[k];
        let seq = tangent_expansions(model, &s.point, &s.tangent, n, None)?;
        Ok(pliss_times(&seq, a_prime).contains(n))
    };
    let mut delta0 = None;
    'sweep: for &d0 in &DELTA_SWEEP {
        for &k in &anchors {
            for n in n_min..n_min + 6 {
                if !pliss_ok(k, n)? {
                    continue;
                }
                match pliss_iterate_check(model, &disk, k, n, a, d0, 201) {
                    Ok(r) if r.pass() => {}
                    _ => continue 'sweep,
                }
            }
        }
        delta0 = Some(d0);
        break;
    }
    let delta0 = delta0.ok_or_else(|| Error::Calibration("calibration exhausted for delta0".into()))?;
    let mut delta_eps = None;
    for &de in &[0.05, 0.02, 0.01, 0.005, 0.002, 0.001] {
        let mut ok = true;
        for &k in &anchors {
            let s = &disk.samples[k];
            let sum: f64 = tangent_expansions(model, &s.point, &s.tangent, n_min, None)?.iter().sum();
            let local = disk.local(model, s.param, 2.0 * de * (-sum).exp(), 101)?;
            ok &= distortion_check(model, &local, 50, n_min, epsilon, de)?.pass;
        }
        if ok {
            delta_eps = Some(de);
            break;
        }
    }
    let delta_eps = delta_eps.ok_or_else(|| Error::Calibration("calibration exhausted for delta_eps".into()))?;
    Ok(Calibration {
        theta0,
        theta1: theta0,
        delta0,
        delta1: 2.0 * delta0,
        n_min,
        delta_eps,
        theta_eps: theta0 / 2.0,
    })
}

#[derive(Clone, Debug)]
pub struct DensityConfig {
    pub center: Point,
    pub disk_half_length: f64,
    pub anchors: usize,
    /// Horizon of the expansion average that defines Gamma.
    pub gamma_horizon: usize,
    /// Gamma threshold; the median anchor score when absent.
    pub a_pp: Option<f64>,
    pub a_prime: f64,
    pub delta: f64,
    pub n_max: usize,
    pub local_cells: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct DensityReport {
    pub a_pp: f64,
    pub gamma_anchors: usize,
    /// Per Gamma-anchor: (Pliss time, Leb(B ∩ Gamma) / Leb(B)).
    pub ratios: Vec<Vec<(usize, f64)>>,
    /// Share of Gamma-anchors whose ratio at their largest tested time is >= 0.95.
    pub share_final_above: f64,
    /// Share of Gamma-anchors whose ratios never drop by more than 0.05.
    pub share_trend: f64,
}

fn gamma_score(model: &dyn MapModel, p: &Point, v: &Vector, horizon: usize) -> Result<f64> {
    let seq = tangent_expansions(model, p, v, horizon, None)?;
    Ok(seq.iter().sum::<f64>() / horizon as f64)
}

/// Density of Gamma = {short-horizon expansion average > a''} inside
/// dynamical balls around Gamma-anchors, along their Pliss times.
pub fn density_experiment(model: &dyn MapModel, cfg: &DensityConfig) -> Result<DensityReport> {
    let base = FDisk::straight(model, &cfg.center, None, cfg.disk_half_length, 1)?;
    let mut r = rng::stream(cfg.seed, 0);
    let params: Vec<f64> = (0..cfg.anchors)
        .map(|_| (r.gen::<f64>() * 2.0 - 1.0) * cfg.disk_half_length)
        .collect();
    let scores: Vec<f64> = params
        .par_iter()
        .map(|&t| gamma_score(model, &base.point_at(model, t), &base.tangent_at(model, t), cfg.gamma_horizon))
        .collect::<Result<_>>()?;
    let a_pp = match cfg.a_pp {
        Some(v) => v,
        None => {
            let mut s = scores.clone();
            s.sort_by(f64::total_cmp);
            s[s.len() / 2]
        }
    };
    let gamma: Vec<usize> = (0..params.len()).filter(|&i| scores[i] > a_pp).collect();
    let ratios: Vec<Vec<(usize, f64)>> = gamma
        .par_iter()
        .map(|&i| -> Result<Vec<(usize, f64)>> {
            let t0 = params[i];
            let x = base.point_at(model, t0);
            let v = base.tangent_at(model, t0);
            let seq = tangent_expansions(model, &x, &v, cfg.n_max, None)?;
            let times = pliss_times(&seq, cfg.a_prime);
            let mut out = Vec::new();
            for &n in times.members().iter().filter(|&&n| n >= 1) {
                let sum: f64 = seq[..n].iter().sum();
                let half = 1.5 * cfg.delta * (-sum).exp();
                let local = base.local(model, t0, half, cfg.local_cells)?;
                let flow = DiskFlow::new(model, &local, n)?;
                let ball = flow.ball(cfg.local_cells / 2, n, cfg.delta)?;
                let mut inside = 0.0;
                let mut total = 0.0;
                for &k in &ball.member_indices {
                    let s = &local.samples[k];
                    total += s.weight;
                    if gamma_score(model, &s.point, &s.tangent, cfg.gamma_horizon)? > a_pp {
                        inside += s.weight;
                    }
                }
                out.push((n, inside / total));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let g = ratios.len().max(1) as f64;
    let share_final_above = ratios.iter().filter(|v| v.last().is_some_and(|&(_, r)| r >= 0.95)).count() as f64 / g;
    let share_trend = ratios
        .iter()
        .filter(|v| v.windows(2).all(|w| w[1].1 >= w[0].1 - 0.05))
        .count() as f64
        / g;
    Ok(DensityReport { a_pp, gamma_anchors: gamma.len(), ratios, share_final_above, share_trend })
}
