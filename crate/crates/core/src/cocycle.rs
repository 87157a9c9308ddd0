//! Linear algebra of the derivative cocycle: mini-norms, restricted
//! Jacobians, Lyapunov spectra and the Birkhoff-type exponents along F.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lit;
use crate::models::{MapModel, OrbitTrace, Point};
use crate::Real;

/// Orthonormal k-frame based at a point.
#[derive(Clone, Debug)]
pub struct Frame<T: Real> {
    pub matrix: DMatrix<T>,
    pub base: Point,
}

impl<T: Real> Frame<T> {
    pub fn new(matrix: DMatrix<T>, base: Point) -> Result<Self> {
        let (d, k) = matrix.shape();
        if k == 0 || k > d {
            return Err(Error::arg(format!("frame must be d x k with 1 <= k <= d, got {d} x {k}")));
        }
        let gram = matrix.transpose() * &matrix - DMatrix::<T>::identity(k, k);
        let tol = T::default_epsilon() * lit::<T>(4096.0);
        if gram.iter().any(|v| v.abs() > tol) {
            return Err(Error::arg("frame columns are not orthonormal"));
        }
        Ok(Frame { matrix, base })
    }

    pub fn orthonormalized(matrix: &DMatrix<T>, base: Point) -> Self {
        Frame { matrix: orthonormalize(matrix), base }
    }

    pub fn rank(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Thin-QR orthonormal basis of the column span.
pub fn orthonormalize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    if m.ncols() == 1 {
        let n = m.norm();
        return m / n;
    }
    m.clone().qr().q()
}

fn singular_values<T: Real>(l: &DMatrix<T>) -> Result<Vec<T>> {
    if l.nrows() == 0 || l.ncols() == 0 {
        return Err(Error::EmptyMatrix);
    }
    if l.ncols() == 1 {
        return Ok(vec![l.norm()]);
    }
    Ok(l.clone().svd(false, false).singular_values.iter().copied().collect())
}

/// Smallest singular value, inf over unit v of |L v|.
pub fn mini_norm<T: Real>(l: &DMatrix<T>) -> Result<T> {
    let s = singular_values(l)?;
    let mut m = s[0];
    for v in s {
        if v < m {
            m = v;
        }
    }
    if l.ncols() > l.nrows() {
        // wide maps have a kernel
        return Ok(T::zero());
    }
    Ok(m)
}

pub fn operator_norm<T: Real>(l: &DMatrix<T>) -> Result<T> {
    let s = singular_values(l)?;
    let mut m = s[0];
    for v in s {
        if v > m {
            m = v;
        }
    }
    Ok(m)
}

/// k-volume expansion of L on span(V): sqrt(det((LV)^T LV)).
pub fn jacobian_on_subspace<T: Real>(l: &DMatrix<T>, v: &DMatrix<T>) -> Result<T> {
    if l.is_empty() || v.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    if l.ncols() != v.nrows() {
        return Err(Error::DimensionMismatch { expected: l.ncols(), got: v.nrows() });
    }
    let lv = l * v;
    let g = lv.transpose() * &lv;
    let det = g.determinant();
    Ok(if det > T::zero() { det.sqrt() } else { T::zero() })
}

pub fn jacobian_on_frame<T: Real>(l: &DMatrix<T>, frame: &Frame<T>) -> Result<T> {
    jacobian_on_subspace(l, &frame.matrix)
}

/// Default tolerance separating zero exponents from nonzero ones.
pub const INDEX_TOL: f64 = 1e-2;

/// Steps run before accumulation so the QR frame has aligned with the
/// Oseledets filtration.
pub const LYAPUNOV_WARMUP: usize = 100;

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ExponentReport {
    pub exponents: Vec<f64>,
    pub n_used: usize,
    pub i_u: usize,
    pub i_cu: usize,
}

impl ExponentReport {
    pub fn from_exponents(mut exponents: Vec<f64>, n_used: usize, tol: f64) -> Self {
        exponents.sort_by(|a, b| b.partial_cmp(a).expect("finite exponents"));
        let i_u = exponents.iter().filter(|l| **l > tol).count();
        let i_cu = exponents.iter().filter(|l| **l >= -tol).count();
        ExponentReport { exponents, n_used, i_u, i_cu }
    }

    pub fn csv_header(dim: usize) -> String {
        let mut h = vec!["model".to_string(), "seed".to_string(), "n".to_string()];
        h.extend((1..=dim).map(|i| format!("lambda_{i}")));
        h.push("i_u".into());
        h.push("i_cu".into());
        h.join(",")
    }

    pub fn csv_row(&self, model: &str, seed: u64) -> String {
        let mut r = vec![model.to_string(), seed.to_string(), self.n_used.to_string()];
        r.extend(self.exponents.iter().map(|l| format!("{l:.12}")));
        r.push(self.i_u.to_string());
        r.push(self.i_cu.to_string());
        r.join(",")
    }
}

pub fn lyapunov_exponents(model: &dyn MapModel, x: &Point, n: usize) -> Result<ExponentReport> {
    lyapunov_exponents_with(model, x, n, 1, INDEX_TOL)
}

/// QR (Benettin) estimate of the full spectrum, of f (direction 1) or of
/// f^{-1} (direction -1).
pub fn lyapunov_exponents_with(
    model: &dyn MapModel,
    x: &Point,
    n: usize,
    direction: i32,
    tol: f64,
) -> Result<ExponentReport> {
    if n < 100 {
        return Err(Error::arg("lyapunov_exponents needs n >= 100"));
    }
    let d = model.dim();
    let mut q = DMatrix::<f64>::identity(d, d);
    let mut sums = vec![0.0; d];
    let mut p = *x;
    for step in 0..(LYAPUNOV_WARMUP + n) {
        if !model.in_domain(&p) {
            return Err(Error::Escape { step });
        }
        let (jac, next) = if direction == 1 {
            (model.derivative(&p), model.forward(&p))
        } else {
            let prev = model.backward(&p).map_err(|_| Error::Escape { step: step + 1 })?;
            let inv = model.derivative(&prev).try_inverse().ok_or_else(|| Error::arg("singular derivative"))?;
            (inv, prev)
        };
        let qr = (jac * &q).qr();
        let r = qr.r();
        q = qr.q();
        if step >= LYAPUNOV_WARMUP {
            for (i, s) in sums.iter_mut().enumerate() {
                *s += r[(i, i)].abs().ln();
            }
        }
        p = next;
    }
    let ex = sums.iter().map(|s| s / n as f64).collect();
    Ok(ExponentReport::from_exponents(ex, n, tol))
}

/// Default share of the horizon scanned by the limsup/liminf surrogates.
pub const WINDOW_FRAC: f64 = 0.25;

/// First prefix length of the scanned window: N - ceil(N * frac), at least 1.
pub fn window_start(n: usize, frac: f64) -> usize {
    let w = (n as f64 * frac).ceil() as usize;
    n.saturating_sub(w).max(1)
}

/// (min, max) of the prefix averages (1/k) sum_{i<k} seq[i] for k in the
/// final window of [1, N].
pub fn windowed_prefix_extremes(seq: &[f64], n: usize, frac: f64) -> Result<(f64, f64)> {
    if n == 0 || n > seq.len() {
        return Err(Error::arg(format!("window horizon {n} outside 1..={}", seq.len())));
    }
    let start = window_start(n, frac);
    let mut s = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, v) in seq.iter().take(n).enumerate() {
        s += v;
        let k = i + 1;
        if k >= start {
            let a = s / k as f64;
            lo = lo.min(a);
            hi = hi.max(a);
        }
    }
    Ok((lo, hi))
}

/// log m(Df^p | F(f^i x)) for i < count along a trace.
pub fn p_step_log_mini_norms(trace: &OrbitTrace, p: usize, count: usize) -> Result<Vec<f64>> {
    if p == 0 {
        return Err(Error::arg("p must be at least 1"));
    }
    if count + p > trace.len() {
        return Err(Error::arg(format!(
            "trace of {} points too short for {count} windows of {p} steps",
            trace.len()
        )));
    }
    let k = trace.f_frames[0].ncols();
    if k == 1 {
        // transported line: p-step mini-norm telescopes into a window sum
        let mut pref = Vec::with_capacity(count + p);
        pref.push(0.0);
        for v in &trace.log_min_f[..count + p - 1] {
            pref.push(pref.last().unwrap() + v);
        }
        return Ok((0..count).map(|i| pref[i + p] - pref[i]).collect());
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut m = trace.f_frames[i].clone();
        let mut acc = 0.0;
        for j in 0..p {
            m = &trace.derivatives[i + j] * m;
            // renormalise to keep magnitudes bounded; mini_norm scales linearly
            let s = m.norm();
            acc += s.ln();
            m /= s;
        }
        out.push(acc + mini_norm(&m)?.ln());
    }
    Ok(out)
}

/// Finite-horizon beta_p: the largest prefix average of log m(Df^p|F) over the
/// final window of prefix lengths in [1, N].
pub fn beta_p(trace: &OrbitTrace, p: usize, n: usize, frac: f64) -> Result<f64> {
    if n < 10 * p {
        return Err(Error::arg(format!("beta_p needs N >= 10 p (N = {n}, p = {p})")));
    }
    let seq = p_step_log_mini_norms(trace, p, n)?;
    Ok(windowed_prefix_extremes(&seq, n, frac)?.1)
}

pub fn chi_f_min_trace(trace: &OrbitTrace, p_max: usize, n: usize, frac: f64) -> Result<f64> {
    if p_max == 0 {
        return Err(Error::arg("p_max must be at least 1"));
    }
    let mut best = f64::NEG_INFINITY;
    for p in 1..=p_max {
        best = best.max(beta_p(trace, p, n, frac)? / p as f64);
    }
    Ok(best)
}

/// max over p <= p_max of beta_p / p along the forward orbit of x.
pub fn chi_f_min(model: &dyn MapModel, x: &Point, p_max: usize, n: usize) -> Result<f64> {
    let trace = crate::models::orbit(model, x, n + p_max.max(1), 1)?;
    chi_f_min_trace(&trace, p_max, n, WINDOW_FRAC)
}

fn check_len(trace: &OrbitTrace) -> Result<usize> {
    let n = trace.log_min_f.len();
    if n < 100 {
        return Err(Error::arg(format!("need at least 100 steps, trace has {n}")));
    }
    Ok(n)
}

pub fn m_bar_f(trace: &OrbitTrace) -> Result<f64> {
    let n = check_len(trace)?;
    Ok(windowed_prefix_extremes(&trace.log_min_f, n, WINDOW_FRAC)?.1)
}

pub fn m_lower_f(trace: &OrbitTrace) -> Result<f64> {
    let n = check_len(trace)?;
    Ok(windowed_prefix_extremes(&trace.log_min_f, n, WINDOW_FRAC)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{orbit, Cat2, Cat3, Da2, Solenoid, CAT_LAMBDA};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn m2(a: f64, b: f64, c: f64, d: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[a, b, c, d])
    }

    #[test]
    fn mini_norm_examples() {
        assert_abs_diff_eq!(mini_norm(&DMatrix::<f64>::identity(3, 3)).unwrap(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(mini_norm(&m2(3.0, 0.0, 0.0, 0.5)).unwrap(), 0.5, epsilon = 1e-14);
        // oracle: sqrt of the smallest eigenvalue of L^T L = [[5,3],[3,2]]
        let (tr, det) = (7.0f64, 1.0f64);
        let small = ((tr - (tr * tr - 4.0 * det).sqrt()) / 2.0).sqrt();
        assert_abs_diff_eq!(mini_norm(&m2(2.0, 1.0, 1.0, 1.0)).unwrap(), small, epsilon = 1e-12);
        assert_abs_diff_eq!(small, 0.381966, epsilon = 1e-6);
        assert_eq!(mini_norm(&DMatrix::<f64>::zeros(2, 2)).unwrap(), 0.0);
        assert_eq!(mini_norm(&DMatrix::<f64>::zeros(0, 0)), Err(Error::EmptyMatrix));
    }

    #[test]
    fn mini_norm_f32() {
        let l = DMatrix::<f32>::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.5]);
        assert!((mini_norm(&l).unwrap() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn jacobian_examples() {
        let l = m2(2.0, 0.0, 0.0, 3.0);
        let e2 = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert_abs_diff_eq!(jacobian_on_subspace(&l, &e2).unwrap(), 3.0, epsilon = 1e-14);
        let a = m2(2.0, 1.0, 1.0, 1.0);
        let full = DMatrix::<f64>::identity(2, 2);
        assert_abs_diff_eq!(jacobian_on_subspace(&a, &full).unwrap(), a.determinant().abs(), epsilon = 1e-12);
        let u = Cat2.analytic_f(&Point::new(&[0.0, 0.0])).unwrap();
        // Gram determinant of A u
        let au = &a * &u;
        let gram = (au.transpose() * &au)[(0, 0)];
        assert_abs_diff_eq!(jacobian_on_subspace(&a, &u).unwrap(), gram.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(gram.sqrt(), CAT_LAMBDA, epsilon = 1e-12);
    }

    #[test]
    fn frame_rejects_non_orthonormal() {
        let p = Point::new(&[0.0, 0.0]);
        assert!(Frame::new(m2(1.0, 1.0, 0.0, 1.0), p).is_err());
        assert!(Frame::new(DMatrix::<f64>::identity(2, 2), p).is_ok());
        let fr = Frame::orthonormalized(&m2(1.0, 1.0, 0.0, 1.0), p);
        assert!(Frame::new(fr.matrix, p).is_ok());
    }

    #[test]
    fn cat2_spectrum() {
        let r = lyapunov_exponents(&Cat2, &Point::new(&[0.1234, 0.5678]), 10_000).unwrap();
        assert_abs_diff_eq!(r.exponents[0], CAT_LAMBDA.ln(), epsilon = 1e-6);
        assert_abs_diff_eq!(r.exponents[1], -CAT_LAMBDA.ln(), epsilon = 1e-6);
        assert_eq!((r.i_u, r.i_cu), (1, 1));
        let inv = lyapunov_exponents_with(&Cat2, &Point::new(&[0.1234, 0.5678]), 10_000, -1, INDEX_TOL).unwrap();
        for (a, b) in r.exponents.iter().zip(inv.exponents.iter().rev()) {
            assert!((a + b).abs() < 2e-3);
        }
    }

    #[test]
    fn cat3_isometric_fibre() {
        let m = Cat3 { omega: 0.3, kappa: 0.0 };
        let r = lyapunov_exponents(&m, &Point::new(&[0.11, 0.42, 0.5]), 10_000).unwrap();
        assert!(r.exponents[1].abs() < 1e-3);
        assert_eq!((r.i_u, r.i_cu), (1, 2));
    }

    #[test]
    fn solenoid_top_exponent() {
        let r = lyapunov_exponents(&Solenoid::default(), &Point::new(&[0.1234, 0.1, -0.2]), 10_000).unwrap();
        assert!((r.exponents[0] - 2f64.ln()).abs() < 5e-3);
    }

    #[test]
    fn lyapunov_needs_length() {
        assert!(lyapunov_exponents(&Cat2, &Point::new(&[0.1, 0.2]), 99).is_err());
    }

    #[test]
    fn csv_row_shape() {
        let r = ExponentReport::from_exponents(vec![-1.0, 1.0], 100, INDEX_TOL);
        assert_eq!(ExponentReport::csv_header(2), "model,seed,n,lambda_1,lambda_2,i_u,i_cu");
        assert_eq!(r.csv_row("cat2", 7), "cat2,7,100,1.000000000000,-1.000000000000,1,1");
    }

    #[test]
    fn beta_on_cat2_is_linear_in_p() {
        let t = orbit(&Cat2, &Point::new(&[0.3, 0.1]), 1000, 1).unwrap();
        for p in 1..=10 {
            let b = beta_p(&t, p, 900, WINDOW_FRAC).unwrap();
            assert_abs_diff_eq!(b, p as f64 * CAT_LAMBDA.ln(), epsilon = 1e-9);
        }
        assert!(beta_p(&t, 10, 99, WINDOW_FRAC).is_err());
        assert_abs_diff_eq!(chi_f_min(&Cat2, &Point::new(&[0.7, 0.2]), 4, 2000).unwrap(), CAT_LAMBDA.ln(), epsilon = 1e-6);
    }

    #[test]
    fn beta_one_is_windowed_birkhoff() {
        let t = orbit(&Da2::default(), &Point::new(&[0.01, 0.02]), 2000, 1).unwrap();
        let b1 = beta_p(&t, 1, 1000, WINDOW_FRAC).unwrap();
        // oracle: direct max over prefix lengths 750..=1000
        let mut best = f64::NEG_INFINITY;
        for k in 750..=1000 {
            let s: f64 = t.log_min_f[..k].iter().sum();
            best = best.max(s / k as f64);
        }
        assert_abs_diff_eq!(b1, best, epsilon = 1e-12);
        assert_abs_diff_eq!(b1, m_bar_f(&orbit(&Da2::default(), &Point::new(&[0.01, 0.02]), 1001, 1).unwrap()).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn p_step_generic_path_matches_products() {
        let m = Cat3::default();
        let t = orbit(&m, &Point::new(&[0.2, 0.6, 0.1]), 40, 1).unwrap();
        let v = p_step_log_mini_norms(&t, 3, 10).unwrap();
        for (i, vi) in v.iter().enumerate() {
            let prod = &t.derivatives[i + 2] * &t.derivatives[i + 1] * &t.derivatives[i] * &t.f_frames[i];
            assert_abs_diff_eq!(*vi, mini_norm(&prod).unwrap().ln(), epsilon = 1e-10);
        }
    }

    #[test]
    fn cat2_jacobian_multiplicative() {
        let t = orbit(&Cat2, &Point::new(&[0.41, 0.13]), 51, 1).unwrap();
        let mut prod = DMatrix::<f64>::identity(2, 2);
        for d in &t.derivatives {
            prod = d * prod;
        }
        let whole = jacobian_on_subspace(&prod, &t.f_frames[0]).unwrap().ln();
        let parts: f64 = t.log_jac_f.iter().sum();
        assert!((whole - parts).abs() <= 1e-8 * whole.abs().max(1.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn det_one_mini_norm_is_inverse_operator_norm(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0) {
            prop_assume!(a.abs() > 1e-3);
            // d fixed by ad - bc = 1
            let d = (1.0 + b * c) / a;
            let l = m2(a, b, c, d);
            let lhs = mini_norm(&l).unwrap();
            let rhs = 1.0 / operator_norm(&l).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.max(1.0));
        }
    }
}
