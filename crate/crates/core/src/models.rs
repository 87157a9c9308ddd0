//! Manifolds, model maps and orbit traces.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng as _;

use crate::cocycle::{jacobian_on_subspace, mini_norm, operator_norm, orthonormalize};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const MAX_DIM: usize = 3;

/// Number of push iterations used by the numeric splitting.
pub const NUMERIC_SPLIT_STEPS: usize = 50;

/// (3 + sqrt 5) / 2, the expanding eigenvalue of [[2,1],[1,1]].
pub const CAT_LAMBDA: f64 = 2.618_033_988_749_895;

const GOLD: f64 = 0.618_033_988_749_894_9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    coords: [f64; MAX_DIM],
    dim: usize,
}

impl Point {
    pub fn new(c: &[f64]) -> Point {
        assert!(!c.is_empty() && c.len() <= MAX_DIM, "point dimension must be 1..=3");
        let mut coords = [0.0; MAX_DIM];
        coords[..c.len()].copy_from_slice(c);
        Point { coords, dim: c.len() }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize) -> f64 {
        self.coords[i]
    }
}

impl std::ops::Index<usize> for Point {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.coords[..self.dim][i]
    }
}

/// Reduces into [0,1), mapping the rounding artefact 1.0 back to 0.
#[inline]
pub fn wrap01(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Shortest signed representative of a periodic difference, in [-1/2, 1/2].
#[inline]
pub fn wrap_half(d: f64) -> f64 {
    d - d.round()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum Manifold {
    /// Flat torus [0,1)^d.
    Torus(usize),
    /// S^1 x D^2 with coordinates (theta, x, y), theta periodic.
    SolidTorus,
}

impl Manifold {
    pub fn dim(&self) -> usize {
        match self {
            Manifold::Torus(d) => *d,
            Manifold::SolidTorus => 3,
        }
    }

    pub fn periodic(&self, axis: usize) -> bool {
        match self {
            Manifold::Torus(_) => true,
            Manifold::SolidTorus => axis == 0,
        }
    }

    /// Coordinate range of an axis, used for grids.
    pub fn axis_range(&self, axis: usize) -> (f64, f64) {
        if self.periodic(axis) {
            (0.0, 1.0)
        } else {
            (-1.0, 1.0)
        }
    }

    pub fn tag(&self) -> String {
        match self {
            Manifold::Torus(d) => format!("T{d}"),
            Manifold::SolidTorus => "S1xD2".to_string(),
        }
    }

    pub fn reduce(&self, c: &[f64]) -> Point {
        let mut out = [0.0; MAX_DIM];
        for (i, v) in c.iter().enumerate() {
            out[i] = if self.periodic(i) { wrap01(*v) } else { *v };
        }
        Point::new(&out[..c.len()])
    }

    fn check(&self, p: &Point) -> Result<()> {
        if p.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: p.dim() });
        }
        Ok(())
    }

    /// Shortest displacement from `p` to `q`.
    pub fn displacement(&self, p: &Point, q: &Point) -> Result<[f64; MAX_DIM]> {
        self.check(p)?;
        self.check(q)?;
        let mut d = [0.0; MAX_DIM];
        for (i, di) in d.iter_mut().enumerate().take(self.dim()) {
            let raw = q[i] - p[i];
            *di = if self.periodic(i) { wrap_half(raw) } else { raw };
        }
        Ok(d)
    }

    pub fn displace(&self, p: &Point, v: &[f64]) -> Point {
        let mut c = [0.0; MAX_DIM];
        for i in 0..self.dim() {
            c[i] = p[i] + v[i];
        }
        self.reduce(&c[..self.dim()])
    }

    pub fn contains(&self, p: &Point) -> bool {
        if p.dim() != self.dim() {
            return false;
        }
        match self {
            Manifold::Torus(_) => p.coords().iter().all(|c| (0.0..1.0).contains(c)),
            Manifold::SolidTorus => {
                (0.0..1.0).contains(&p[0]) && p[1] * p[1] + p[2] * p[2] <= 1.0 + 1e-12
            }
        }
    }
}

/// Flat-metric distance, taking the shortest wraparound representative on
/// periodic axes.
pub fn manifold_distance(m: &Manifold, p: &Point, q: &Point) -> Result<f64> {
    let d = m.displacement(p, q)?;
    Ok(d.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Orthonormal frames for E and F at a point.
#[derive(Clone, Debug)]
pub struct Splitting {
    pub e: DMatrix<f64>,
    pub f: DMatrix<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum SplittingKind {
    Analytic,
    Numeric,
}

pub trait MapModel: Send + Sync {
    fn name(&self) -> &str;
    fn manifold(&self) -> Manifold;
    fn dim_f(&self) -> usize;
    fn forward(&self, p: &Point) -> Point;
    fn backward(&self, p: &Point) -> Result<Point>;
    fn derivative(&self, p: &Point) -> DMatrix<f64>;
    fn params(&self) -> BTreeMap<String, f64>;

    fn dim(&self) -> usize {
        self.manifold().dim()
    }

    fn dim_e(&self) -> usize {
        self.dim() - self.dim_f()
    }

    /// Inverse of the derivative at the preimage of `p`.
    fn inverse_derivative(&self, p: &Point) -> Result<DMatrix<f64>> {
        let q = self.backward(p)?;
        self.derivative(&q)
            .try_inverse()
            .ok_or_else(|| Error::arg("singular derivative"))
    }

    fn in_domain(&self, p: &Point) -> bool {
        self.manifold().contains(p)
    }

    fn analytic_e(&self, _p: &Point) -> Option<DMatrix<f64>> {
        None
    }

    fn analytic_f(&self, _p: &Point) -> Option<DMatrix<f64>> {
        None
    }

    /// Cone axes pushed by the numeric splitting.
    fn reference_axes(&self) -> Splitting;

    /// A preimage that never fails; only used to seed power iterations.
    fn lenient_preimage(&self, p: &Point) -> Point {
        self.backward(p).unwrap_or(*p)
    }

    fn splitting_kind(&self) -> SplittingKind {
        let p = self.sample_point(&mut crate::rng::stream(0, 0));
        if self.analytic_e(&p).is_some() && self.analytic_f(&p).is_some() {
            SplittingKind::Analytic
        } else {
            SplittingKind::Numeric
        }
    }

    /// Uniform point of the domain (Lebesgue on the torus, U for the solenoid).
    fn sample_point(&self, rng: &mut Rng) -> Point {
        let d = self.dim();
        let c: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
        self.manifold().reduce(&c)
    }
}

pub fn splitting(model: &dyn MapModel, p: &Point) -> Splitting {
    let e = model.analytic_e(p).unwrap_or_else(|| numeric_e(model, p, NUMERIC_SPLIT_STEPS));
    let f = model.analytic_f(p).unwrap_or_else(|| numeric_f(model, p, NUMERIC_SPLIT_STEPS));
    Splitting { e, f }
}

/// F frame from forward pushes of the reference axis along a backward chain.
pub fn numeric_f(model: &dyn MapModel, p: &Point, steps: usize) -> DMatrix<f64> {
    let mut chain = Vec::with_capacity(steps + 1);
    chain.push(*p);
    for k in 0..steps {
        let q = model.lenient_preimage(&chain[k]);
        chain.push(q);
    }
    let mut v = model.reference_axes().f;
    for k in (1..=steps).rev() {
        v = orthonormalize(&(model.derivative(&chain[k]) * v));
    }
    v
}

/// E frame from backward pushes of the reference axis along the forward orbit.
pub fn numeric_e(model: &dyn MapModel, p: &Point, steps: usize) -> DMatrix<f64> {
    let mut chain = Vec::with_capacity(steps + 1);
    chain.push(*p);
    for k in 0..steps {
        let q = model.forward(&chain[k]);
        chain.push(q);
    }
    let mut w = model.reference_axes().e;
    for k in (0..steps).rev() {
        let inv = model.derivative(&chain[k]).try_inverse().expect("invertible derivative");
        w = orthonormalize(&(inv * w));
    }
    w
}

fn cat_unstable() -> [f64; 2] {
    let n = (1.0 + GOLD * GOLD).sqrt();
    [1.0 / n, GOLD / n]
}

fn cat_stable() -> [f64; 2] {
    let n = (1.0 + GOLD * GOLD).sqrt();
    [-GOLD / n, 1.0 / n]
}

fn col(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v)
}

#[derive(Clone, Debug, Default)]
pub struct Cat2;

impl MapModel for Cat2 {
    fn name(&self) -> &str {
        "cat2"
    }
    fn manifold(&self) -> Manifold {
        Manifold::Torus(2)
    }
    fn dim_f(&self) -> usize {
        1
    }
    fn forward(&self, p: &Point) -> Point {
        Point::new(&[wrap01(2.0 * p[0] + p[1]), wrap01(p[0] + p[1])])
    }
    fn backward(&self, p: &Point) -> Result<Point> {
        Ok(Point::new(&[wrap01(p[0] - p[1]), wrap01(2.0 * p[1] - p[0])]))
    }
    fn derivative(&self, _p: &Point) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0])
    }
    fn inverse_derivative(&self, _p: &Point) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 2.0]))
    }
    fn analytic_e(&self, _p: &Point) -> Option<DMatrix<f64>> {
        Some(col(&cat_stable()))
    }
    fn analytic_f(&self, _p: &Point) -> Option<DMatrix<f64>> {
        Some(col(&cat_unstable()))
    }
    fn reference_axes(&self) -> Splitting {
        Splitting { e: col(&cat_stable()), f: col(&cat_unstable()) }
    }
    fn params(&self) -> BTreeMap<String, f64> {
        BTreeMap::new()
    }
}

/// CAT2 on the base times a fibre rotation z -> z + omega + kappa sin(2 pi x).
#[derive(Clone, Debug)]
pub struct Cat3 {
    pub omega: f64,
    pub kappa: f64,
}

impl Default for Cat3 {
    fn default() -> Self {
        Cat3 { omega: 1.0 - GOLD, kappa: 0.1 }
    }
}

impl MapModel for Cat3 {
    fn name(&self) -> &str {
        "cat3"
    }
    fn manifold(&self) -> Manifold {
        Manifold::Torus(3)
    }
    fn dim_f(&self) -> usize {
        2
    }
    fn forward(&self, p: &Point) -> Point {
        Point::new(&[
            wrap01(2.0 * p[0] + p[1]),
            wrap01(p[0] + p[1]),
            wrap01(p[2] + self.omega + self.kappa * (2.0 * PI * p[0]).sin()),
        ])
    }
    fn backward(&self, p: &Point) -> Result<Point> {
        let x = wrap01(p[0] - p[1]);
        let y = wrap01(2.0 * p[1] - p[0]);
        let z = wrap01(p[2] - self.omega - self.kappa * (2.0 * PI * x).sin());
        Ok(Point::new(&[x, y, z]))
    }
    fn derivative(&self, p: &Point) -> DMatrix<f64> {
        let c = 2.0 * PI * self.kappa * (2.0 * PI * p[0]).cos();
        DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 1.0, 0.0, c, 0.0, 1.0])
    }
    fn analytic_e(&self, _p: &Point) -> Option<DMatrix<f64>> {
        if self.kappa == 0.0 {
            let s = cat_stable();
            Some(col(&[s[0], s[1], 0.0]))
        } else {
            None
        }
    }
    fn analytic_f(&self, _p: &Point) -> Option<DMatrix<f64>> {
        // span(e_u, e_z) is invariant for every kappa
        let u = cat_unstable();
        Some(DMatrix::from_column_slice(3, 2, &[u[0], u[1], 0.0, 0.0, 0.0, 1.0]))
    }
    fn reference_axes(&self) -> Splitting {
        let u = cat_unstable();
        let s = cat_stable();
        Splitting {
            e: col(&[s[0], s[1], 0.0]),
            f: DMatrix::from_column_slice(3, 2, &[u[0], u[1], 0.0, 0.0, 0.0, 1.0]),
        }
    }
    fn params(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([("kappa".to_string(), self.kappa), ("omega".to_string(), self.omega)])
    }
}

/// Smale-Williams solenoid on S^1 x D^2.
#[derive(Clone, Debug)]
pub struct Solenoid {
    pub lambda: f64,
    /// Radius of the trapping region U = S^1 x {r <= radius_u}.
    pub radius_u: f64,
}

impl Default for Solenoid {
    fn default() -> Self {
        Solenoid { lambda: 0.25, radius_u: 0.9 }
    }
}

impl Solenoid {
    fn center(theta: f64) -> (f64, f64) {
        let a = 2.0 * PI * theta;
        (0.5 * a.cos(), 0.5 * a.sin())
    }

    /// Preimage branch whose image tube is nearest to (x, y).
    fn branch(&self, p: &Point) -> Point {
        let t0 = p[0] / 2.0;
        let t1 = t0 + 0.5;
        let (c0x, c0y) = Self::center(t0);
        let (c1x, c1y) = Self::center(t1);
        let d0 = (p[1] - c0x).powi(2) + (p[2] - c0y).powi(2);
        let d1 = (p[1] - c1x).powi(2) + (p[2] - c1y).powi(2);
        let (t, cx, cy) = if d0 <= d1 { (t0, c0x, c0y) } else { (t1, c1x, c1y) };
        Point::new(&[wrap01(t), (p[1] - cx) / self.lambda, (p[2] - cy) / self.lambda])
    }
}

impl MapModel for Solenoid {
    fn name(&self) -> &str {
        "solenoid"
    }
    fn manifold(&self) -> Manifold {
        Manifold::SolidTorus
    }
    fn dim_f(&self) -> usize {
        1
    }
    fn forward(&self, p: &Point) -> Point {
        let (cx, cy) = Self::center(p[0]);
        Point::new(&[wrap01(2.0 * p[0]), self.lambda * p[1] + cx, self.lambda * p[2] + cy])
    }
    fn backward(&self, p: &Point) -> Result<Point> {
        let q = self.branch(p);
        if q[1] * q[1] + q[2] * q[2] > 1.0 {
            return Err(Error::arg("point has no preimage in the solid torus"));
        }
        Ok(q)
    }
    fn lenient_preimage(&self, p: &Point) -> Point {
        self.branch(p)
    }
    fn derivative(&self, p: &Point) -> DMatrix<f64> {
        let a = 2.0 * PI * p[0];
        let l = self.lambda;
        DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, -PI * a.sin(), l, 0.0, PI * a.cos(), 0.0, l])
    }
    fn in_domain(&self, p: &Point) -> bool {
        p.dim() == 3
            && (0.0..1.0).contains(&p[0])
            && p[1] * p[1] + p[2] * p[2] <= self.radius_u * self.radius_u
    }
    fn analytic_e(&self, _p: &Point) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_column_slice(3, 2, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]))
    }
    fn reference_axes(&self) -> Splitting {
        Splitting {
            e: DMatrix::from_column_slice(3, 2, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]),
            f: col(&[1.0, 0.0, 0.0]),
        }
    }
    fn params(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("lambda".to_string(), self.lambda),
            ("radius_u".to_string(), self.radius_u),
        ])
    }
    fn sample_point(&self, rng: &mut Rng) -> Point {
        let t: f64 = rng.gen();
        let r = self.radius_u * rng.gen::<f64>().sqrt();
        let a = 2.0 * PI * rng.gen::<f64>();
        Point::new(&[t, r * a.cos(), r * a.sin()])
    }
}

/// CAT2 composed with a bump-supported contraction along the unstable axis
/// near the fixed point 0: in eigen-coordinates (s, u),
/// h(s, u) = (s, u (1 - eps psi)), psi = (1 - |q|^2/r^2)^3 on |q| < r.
#[derive(Clone, Debug)]
pub struct Da2 {
    pub eps: f64,
    pub r: f64,
}

impl Default for Da2 {
    fn default() -> Self {
        Da2 { eps: 0.25, r: 0.2 }
    }
}

impl Da2 {
    fn shear(&self, p: &Point) -> [f64; 2] {
        let q = [wrap_half(p[0]), wrap_half(p[1])];
        let r2 = q[0] * q[0] + q[1] * q[1];
        let rr = self.r * self.r;
        if self.eps == 0.0 || r2 >= rr {
            return [p[0], p[1]];
        }
        let eu = cat_unstable();
        let psi = (1.0 - r2 / rr).powi(3);
        let u = q[0] * eu[0] + q[1] * eu[1];
        let k = self.eps * psi * u;
        [p[0] - k * eu[0], p[1] - k * eu[1]]
    }

    fn shear_jacobian(&self, p: &Point) -> DMatrix<f64> {
        let q = [wrap_half(p[0]), wrap_half(p[1])];
        let r2 = q[0] * q[0] + q[1] * q[1];
        let rr = self.r * self.r;
        let mut m = DMatrix::identity(2, 2);
        if self.eps == 0.0 || r2 >= rr {
            return m;
        }
        let eu = cat_unstable();
        let t = 1.0 - r2 / rr;
        let psi = t.powi(3);
        let u = q[0] * eu[0] + q[1] * eu[1];
        let g = [
            psi * eu[0] - 6.0 * u * t * t * q[0] / rr,
            psi * eu[1] - 6.0 * u * t * t * q[1] / rr,
        ];
        for i in 0..2 {
            for j in 0..2 {
                m[(i, j)] -= self.eps * eu[i] * g[j];
            }
        }
        m
    }

    fn unshear(&self, z: &Point) -> Point {
        let q = [wrap_half(z[0]), wrap_half(z[1])];
        let rr = self.r * self.r;
        if self.eps == 0.0 || q[0] * q[0] + q[1] * q[1] >= rr {
            return *z;
        }
        let eu = cat_unstable();
        let es = cat_stable();
        let s = q[0] * es[0] + q[1] * es[1];
        let uz = q[0] * eu[0] + q[1] * eu[1];
        let umax = (rr - s * s).max(0.0).sqrt();
        let g = |u: f64| {
            let t = 1.0 - (s * s + u * u) / rr;
            let psi = if t > 0.0 { t.powi(3) } else { 0.0 };
            u * (1.0 - self.eps * psi)
        };
        let dg = |u: f64| {
            let t = 1.0 - (s * s + u * u) / rr;
            if t <= 0.0 {
                return 1.0;
            }
            1.0 - self.eps * t.powi(3) + 6.0 * self.eps * u * u * t * t / rr
        };
        let (mut lo, mut hi) = if uz >= 0.0 { (uz, umax) } else { (-umax, uz) };
        let mut u = uz;
        for _ in 0..200 {
            let val = g(u) - uz;
            if val == 0.0 {
                break;
            }
            if val > 0.0 {
                hi = u;
            } else {
                lo = u;
            }
            let mut next = u - val / dg(u);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - u).abs() <= 1e-17 {
                u = next;
                break;
            }
            u = next;
        }
        let du = u - uz;
        Point::new(&[wrap01(z[0] + du * eu[0]), wrap01(z[1] + du * eu[1])])
    }
}

impl MapModel for Da2 {
    fn name(&self) -> &str {
        "da2"
    }
    fn manifold(&self) -> Manifold {
        Manifold::Torus(2)
    }
    fn dim_f(&self) -> usize {
        1
    }
    fn forward(&self, p: &Point) -> Point {
        let h = self.shear(p);
        Point::new(&[wrap01(2.0 * h[0] + h[1]), wrap01(h[0] + h[1])])
    }
    fn backward(&self, p: &Point) -> Result<Point> {
        let z = Point::new(&[wrap01(p[0] - p[1]), wrap01(2.0 * p[1] - p[0])]);
        Ok(self.unshear(&z))
    }
    fn derivative(&self, p: &Point) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]) * self.shear_jacobian(p)
    }
    fn reference_axes(&self) -> Splitting {
        Splitting { e: col(&cat_stable()), f: col(&cat_unstable()) }
    }
    fn params(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([("eps".to_string(), self.eps), ("r".to_string(), self.r)])
    }
}

pub const MODEL_NAMES: [&str; 4] = ["cat2", "cat3", "solenoid", "da2"];

/// Builds a named model; unknown parameter keys are rejected.
pub fn build_model(name: &str, params: &BTreeMap<String, f64>) -> Result<Box<dyn MapModel>> {
    let get = |key: &str, default: f64, allowed: &[&str]| -> Result<f64> {
        for k in params.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::arg(format!("unknown parameter `{k}` for model {name}")));
            }
        }
        Ok(params.get(key).copied().unwrap_or(default))
    };
    match name {
        "cat2" => {
            get("", 0.0, &[])?;
            Ok(Box::new(Cat2))
        }
        "cat3" => {
            let d = Cat3::default();
            let keys = ["omega", "kappa"];
            Ok(Box::new(Cat3 { omega: get("omega", d.omega, &keys)?, kappa: get("kappa", d.kappa, &keys)? }))
        }
        "solenoid" => {
            let d = Solenoid::default();
            let keys = ["lambda", "radius_u"];
            let m = Solenoid { lambda: get("lambda", d.lambda, &keys)?, radius_u: get("radius_u", d.radius_u, &keys)? };
            if !(m.lambda > 0.0 && m.lambda < 0.5) || m.lambda * m.radius_u + 0.5 > m.radius_u {
                return Err(Error::arg("solenoid needs 0 < lambda < 1/2 and f(U) inside U"));
            }
            Ok(Box::new(m))
        }
        "da2" => {
            let d = Da2::default();
            let keys = ["eps", "r"];
            let m = Da2 { eps: get("eps", d.eps, &keys)?, r: get("r", d.r, &keys)? };
            if !(0.0..1.0).contains(&m.eps) || !(m.r > 0.0 && m.r < 0.5) {
                return Err(Error::arg("da2 needs 0 <= eps < 1 and 0 < r < 1/2"));
            }
            Ok(Box::new(m))
        }
        _ => Err(Error::arg(format!("unknown model `{name}` (expected one of {MODEL_NAMES:?})"))),
    }
}

/// Sub-ulp jitter added to periodic coordinates after every forward step so
/// that doubling-type coordinates do not collapse in binary floating point.
#[derive(Clone, Copy, Debug)]
pub struct Jitter {
    pub seed: u64,
    pub stream: u64,
    pub scale: f64,
}

impl Jitter {
    pub fn new(seed: u64, stream: u64) -> Jitter {
        Jitter { seed, stream, scale: 2f64.powi(-44) }
    }

    pub fn start(self) -> JitterState {
        JitterState { scale: self.scale, rng: crate::rng::stream(self.seed, self.stream) }
    }
}

/// Running jitter stream; `apply` perturbs one point.
pub struct JitterState {
    scale: f64,
    rng: Rng,
}

impl JitterState {
    pub fn apply(&mut self, m: &Manifold, p: &Point) -> Point {
        let mut c = [0.0; MAX_DIM];
        for (a, ca) in c.iter_mut().enumerate().take(m.dim()) {
            *ca = p[a] + if m.periodic(a) { self.scale * self.rng.gen::<f64>() } else { 0.0 };
        }
        m.reduce(&c[..m.dim()])
    }
}

/// Steps a forward orbit, handing each point to `visit`.
pub fn walk(
    model: &dyn MapModel,
    x: &Point,
    n: usize,
    jitter: Option<Jitter>,
    mut visit: impl FnMut(usize, &Point),
) -> Result<()> {
    let m = model.manifold();
    let mut js = jitter.map(Jitter::start);
    let mut p = *x;
    for i in 0..n {
        if !model.in_domain(&p) {
            return Err(Error::Escape { step: i });
        }
        visit(i, &p);
        if i + 1 < n {
            p = model.forward(&p);
            if let Some(js) = js.as_mut() {
                p = js.apply(&m, &p);
            }
        }
    }
    Ok(())
}

pub fn orbit_points(model: &dyn MapModel, x: &Point, n: usize, jitter: Option<Jitter>) -> Result<Vec<Point>> {
    let mut out = Vec::with_capacity(n);
    walk(model, x, n, jitter, |_, p| out.push(*p))?;
    Ok(out)
}

/// Finite orbit with per-step cocycle observables.
///
/// `log_min_f[i]`, `log_norm_e[i]` and `log_jac_f[i]` describe the step from
/// `points[i]` to `points[i+1]` (for direction -1 the step of the inverse map).
#[derive(Clone, Debug)]
pub struct OrbitTrace {
    pub direction: i32,
    pub points: Vec<Point>,
    pub log_min_f: Vec<f64>,
    pub log_norm_e: Vec<f64>,
    pub log_jac_f: Vec<f64>,
    /// F frame at every point, transported along the orbit.
    pub f_frames: Vec<DMatrix<f64>>,
    /// Step derivatives (inverse derivatives for direction -1).
    pub derivatives: Vec<DMatrix<f64>>,
}

impl OrbitTrace {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn orbit(model: &dyn MapModel, x: &Point, n: usize, direction: i32) -> Result<OrbitTrace> {
    orbit_with(model, x, n, direction, None)
}

pub fn orbit_with(
    model: &dyn MapModel,
    x: &Point,
    n: usize,
    direction: i32,
    jitter: Option<Jitter>,
) -> Result<OrbitTrace> {
    if n == 0 {
        return Err(Error::arg("orbit length must be at least 1"));
    }
    if direction != 1 && direction != -1 {
        return Err(Error::arg("direction must be +1 or -1"));
    }
    let points = if direction == 1 {
        orbit_points(model, x, n, jitter)?
    } else {
        let mut pts = Vec::with_capacity(n);
        let mut p = *x;
        for i in 0..n {
            if !model.in_domain(&p) {
                return Err(Error::Escape { step: i });
            }
            pts.push(p);
            if i + 1 < n {
                p = model.backward(&p).map_err(|_| Error::Escape { step: i + 1 })?;
            }
        }
        pts
    };
    let steps = n - 1;
    let mut derivatives = Vec::with_capacity(steps);
    for i in 0..steps {
        let d = if direction == 1 {
            model.derivative(&points[i])
        } else {
            model
                .derivative(&points[i + 1])
                .try_inverse()
                .ok_or_else(|| Error::arg("singular derivative"))?
        };
        derivatives.push(d);
    }
    let analytic = model.analytic_f(x).is_some() && model.analytic_e(x).is_some();
    let (f_frames, e_frames): (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) = if analytic || direction == -1 {
        points
            .iter()
            .map(|p| {
                let s = splitting(model, p);
                (s.f, s.e)
            })
            .unzip()
    } else {
        let mut f = Vec::with_capacity(n);
        f.push(model.analytic_f(&points[0]).unwrap_or_else(|| numeric_f(model, &points[0], NUMERIC_SPLIT_STEPS)));
        for i in 0..steps {
            let next = match model.analytic_f(&points[i + 1]) {
                Some(fr) => fr,
                None => orthonormalize(&(&derivatives[i] * &f[i])),
            };
            f.push(next);
        }
        let mut e = vec![DMatrix::zeros(0, 0); n];
        e[n - 1] = model
            .analytic_e(&points[n - 1])
            .unwrap_or_else(|| numeric_e(model, &points[n - 1], NUMERIC_SPLIT_STEPS));
        for i in (0..steps).rev() {
            e[i] = match model.analytic_e(&points[i]) {
                Some(fr) => fr,
                None => {
                    let inv = derivatives[i].clone().try_inverse().ok_or_else(|| Error::arg("singular derivative"))?;
                    orthonormalize(&(inv * &e[i + 1]))
                }
            };
        }
        (f, e)
    };
    let mut log_min_f = Vec::with_capacity(steps);
    let mut log_norm_e = Vec::with_capacity(steps);
    let mut log_jac_f = Vec::with_capacity(steps);
    for i in 0..steps {
        let l = &derivatives[i];
        log_min_f.push(mini_norm(&(l * &f_frames[i]))?.ln());
        log_norm_e.push(operator_norm(&(l * &e_frames[i]))?.ln());
        log_jac_f.push(jacobian_on_subspace(l, &f_frames[i])?.ln());
    }
    Ok(OrbitTrace { direction, points, log_min_f, log_norm_e, log_jac_f, f_frames, derivatives })
}
