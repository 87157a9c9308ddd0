//! Pliss times and the finite combinatorics around them: densities, filling,
//! the classical Pliss bound, the mean ergodic inequality on cycles and the
//! bi-Pliss check on periodic cocycles.

use crate::error::{Error, Result};
use crate::lit;
use crate::Real;

/// Sorted, deduplicated set of integers in [0, horizon].
#[derive(Clone, Debug, PartialEq, Eq, Hash, serde::Serialize)]
pub struct TimeSet {
    horizon: usize,
    members: Vec<usize>,
}

impl TimeSet {
    pub fn new(horizon: usize, members: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut m: Vec<usize> = members.into_iter().collect();
        m.sort_unstable();
        m.dedup();
        if let Some(&last) = m.last() {
            if last > horizon {
                return Err(Error::arg(format!("member {last} exceeds horizon {horizon}")));
            }
        }
        Ok(TimeSet { horizon, members: m })
    }

    /// Caller guarantees sorted, deduplicated members within the horizon.
    fn from_sorted(horizon: usize, members: Vec<usize>) -> Self {
        debug_assert!(members.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(members.last().is_none_or(|&l| l <= horizon));
        TimeSet { horizon, members }
    }

    /// [0, n) with horizon n.
    pub fn interval(n: usize) -> Self {
        TimeSet::from_sorted(n, (0..n).collect())
    }

    /// [0, n] with horizon n.
    pub fn full(n: usize) -> Self {
        TimeSet::from_sorted(n, (0..=n).collect())
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, t: usize) -> bool {
        self.members.binary_search(&t).is_ok()
    }

    /// #(T ∩ [0, n)).
    pub fn count_below(&self, n: usize) -> usize {
        self.members.partition_point(|&t| t < n)
    }

    /// The same members under a different horizon.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        TimeSet::new(horizon, self.members.iter().copied())
    }

    /// T ∩ [0, n], horizon n.
    pub fn truncate(&self, n: usize) -> Self {
        let k = self.members.partition_point(|&t| t <= n);
        TimeSet::from_sorted(n, self.members[..k].to_vec())
    }

    pub fn is_subset(&self, other: &TimeSet) -> bool {
        self.members.iter().all(|t| other.contains(*t))
    }

    pub fn intersection_count(&self, other: &TimeSet) -> usize {
        let (mut i, mut j, mut c) = (0, 0, 0);
        let (a, b) = (&self.members, &other.members);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    c += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        c
    }

    pub fn union(&self, other: &TimeSet) -> TimeSet {
        let mut m = self.members.clone();
        m.extend_from_slice(&other.members);
        m.sort_unstable();
        m.dedup();
        TimeSet::from_sorted(self.horizon.max(other.horizon), m)
    }

    /// Maximal runs of consecutive members as half-open [a, b).
    pub fn intervals(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut it = self.members.iter().copied();
        if let Some(first) = it.next() {
            let (mut a, mut b) = (first, first + 1);
            for t in it {
                if t == b {
                    b += 1;
                } else {
                    out.push((a, b));
                    a = t;
                    b = t + 1;
                }
            }
            out.push((a, b));
        }
        out
    }

    /// Symmetric difference of T and T + 1; horizon grows by one.
    pub fn boundary(&self) -> TimeSet {
        let mut m = Vec::new();
        for (a, b) in self.intervals() {
            m.push(a);
            m.push(b);
        }
        TimeSet::from_sorted(self.horizon + 1, m)
    }

    pub fn fill(&self, m: usize) -> TimeSet {
        fill(self, m)
    }
}

/// All n with t1 <= n <= t2 for members t1, t2 at distance at most m.
pub fn fill(t: &TimeSet, m: usize) -> TimeSet {
    let mem = t.members();
    let mut out = Vec::with_capacity(mem.len());
    for (k, &a) in mem.iter().enumerate() {
        out.push(a);
        if let Some(&b) = mem.get(k + 1) {
            if b - a <= m {
                out.extend(a + 1..b);
            }
        }
    }
    TimeSet::from_sorted(t.horizon(), out)
}

/// d_n(T) = #(T ∩ [0,n)) / n.
pub fn density(t: &TimeSet, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::arg("density needs n >= 1"));
    }
    Ok(t.count_below(n) as f64 / n as f64)
}

/// Largest d_n over the final quarter of [1, horizon].
pub fn upper_density(t: &TimeSet) -> Result<f64> {
    upper_density_with(t, 0.25)
}

pub fn upper_density_with(t: &TimeSet, frac: f64) -> Result<f64> {
    let h = t.horizon();
    if h == 0 {
        return Err(Error::arg("upper density needs a positive horizon"));
    }
    let start = crate::cocycle::window_start(h, frac);
    let mut best = 0.0f64;
    for n in start..=h {
        best = best.max(density(t, n)?);
    }
    Ok(best)
}

/// Pliss times of a finite sequence at threshold a': m is a Pliss time iff
/// every suffix average of seq[..m] is at least a'. Running-maximum test on
/// the drifted walk W_k = sum_{i<k} a_i - a' k; ties count.
pub fn pliss_times<T: Real>(seq: &[T], a_prime: T) -> TimeSet {
    let mut members = Vec::with_capacity(seq.len() + 1);
    members.push(0);
    let mut w = T::zero();
    let mut best = T::zero();
    for (i, a) in seq.iter().enumerate() {
        w += *a - a_prime;
        if w >= best {
            best = w;
            members.push(i + 1);
        }
    }
    TimeSet::from_sorted(seq.len(), members)
}

/// Direct O(n^2) evaluation of the definition, for self-tests.
pub fn pliss_times_brute<T: Real>(seq: &[T], a_prime: T) -> TimeSet {
    let mut members = vec![0];
    for m in 1..=seq.len() {
        let mut ok = true;
        let mut s = T::zero();
        for j in (0..m).rev() {
            s += seq[j] - a_prime;
            if s < T::zero() {
                ok = false;
                break;
            }
        }
        if ok {
            members.push(m);
        }
    }
    TimeSet::from_sorted(seq.len(), members)
}

/// Classical Pliss constant (a'' - a') / (A - a').
pub fn pliss_lower_bound<T: Real>(a_pp: T, a_prime: T, a_max: T) -> Result<T> {
    if a_pp <= a_prime {
        return Err(Error::arg("pliss_lower_bound needs a'' > a'"));
    }
    if a_max <= a_prime {
        return Err(Error::arg("pliss_lower_bound needs A > a'"));
    }
    if a_pp > a_max {
        return Err(Error::arg("pliss_lower_bound needs a'' <= A"));
    }
    Ok((a_pp - a_prime) / (a_max - a_prime))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeanErgodic<T> {
    pub holds: bool,
    /// Sum of phi outside A.
    pub lhs: T,
    /// Sum of phi over the whole cycle.
    pub rhs: T,
    pub set_a: Vec<usize>,
}

/// Mean ergodic inequality on a cycle: A collects the starts with some
/// positive partial sum.
pub fn mean_ergodic_check<T: Real>(phi: &[T]) -> Result<MeanErgodic<T>> {
    let p = phi.len();
    if p == 0 {
        return Err(Error::arg("mean_ergodic_check needs a nonempty cycle"));
    }
    let total = phi.iter().fold(T::zero(), |a, b| a + *b);
    let mut set_a = Vec::new();
    for i in 0..p {
        // with a nonpositive cycle sum the first lap already attains the sup
        let mut s = T::zero();
        let mut pos = total > T::zero();
        for k in 0..p {
            if pos {
                break;
            }
            s += phi[(i + k) % p];
            pos = s > T::zero();
        }
        if pos {
            set_a.push(i);
        }
    }
    let mut lhs = T::zero();
    for (i, v) in phi.iter().enumerate() {
        if set_a.binary_search(&i).is_err() {
            lhs += *v;
        }
    }
    Ok(MeanErgodic { holds: lhs <= total, lhs, rhs: total, set_a })
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct BiPliss {
    pub pf: TimeSet,
    pub pe: TimeSet,
    pub equal: bool,
    /// Both cycle means lie strictly below log gamma.
    pub hypotheses: bool,
}

/// Cyclic Pesin blocks of a periodic cocycle: u_i plays log||Df^{-1}|F|| and
/// e_i plays log||Df|E|| at the i-th point of the cycle.
pub fn bi_pliss_check<T: Real>(e: &[T], u: &[T], log_gamma: T, log_lambda: T) -> Result<BiPliss> {
    let p = e.len();
    if p == 0 || u.len() != p {
        return Err(Error::arg("e and u must be nonempty cycles of the same period"));
    }
    if log_gamma >= T::zero() {
        return Err(Error::arg("need log gamma < 0"));
    }
    if lit::<T>(2.0) * log_gamma <= log_lambda {
        return Err(Error::arg("need gamma^2 > lambda"));
    }
    bi_pliss_unchecked(e, u, log_gamma, log_lambda)
}

/// Same sets without the gamma^2 > lambda requirement; used to exhibit
/// counterexamples.
pub fn bi_pliss_unchecked<T: Real>(e: &[T], u: &[T], log_gamma: T, log_lambda: T) -> Result<BiPliss> {
    let p = e.len();
    if p == 0 || u.len() != p {
        return Err(Error::arg("e and u must be nonempty cycles of the same period"));
    }
    for i in 0..p {
        let v = e[i] + u[(i + 1) % p];
        if v > log_lambda {
            return Err(Error::DominationViolated {
                index: i,
                value: v.to_f64().unwrap_or(f64::NAN),
                bound: log_lambda.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    let pt = lit::<T>(p as f64);
    let mean_u = u.iter().fold(T::zero(), |a, b| a + *b) / pt;
    let mean_e = e.iter().fold(T::zero(), |a, b| a + *b) / pt;
    if mean_u >= log_gamma || mean_e >= log_gamma {
        let empty = TimeSet::from_sorted(p, Vec::new());
        return Ok(BiPliss { pf: empty.clone(), pe: empty, equal: true, hypotheses: false });
    }
    let cap = 2 * p;
    let block = |seq: &[T], backward: bool| -> TimeSet {
        let mut members = Vec::new();
        for k in 0..p {
            let mut s = T::zero();
            let mut ok = true;
            for n in 1..=cap {
                let idx = if backward { (k + cap * p - (n - 1)) % p } else { (k + n - 1) % p };
                s += seq[idx];
                if s > lit::<T>(n as f64) * log_gamma {
                    ok = false;
                    break;
                }
            }
            if ok {
                members.push(k);
            }
        }
        TimeSet::from_sorted(p, members)
    };
    let pf = block(u, true);
    let pe = block(e, false);
    let equal = pf == pe;
    Ok(BiPliss { pf, pe, equal, hypotheses: true })
}

/// Random dominated cycle whose means sit below log gamma.
pub fn random_dominated_cycle(
    rng: &mut crate::rng::Rng,
    p: usize,
    log_gamma: f64,
    log_lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    use rand::Rng as _;
    // u centred between log lambda - log gamma and log gamma, e fills the
    // domination budget minus a random slack
    let lo = log_lambda - log_gamma;
    let centre = lo + (log_gamma - lo) * rng.gen_range(0.05..0.95);
    let spread = rng.gen_range(0.0..1.5);
    let u: Vec<f64> = (0..p).map(|_| centre + spread * rng.gen_range(-1.0..1.0)).collect();
    let e: Vec<f64> = (0..p)
        .map(|i| log_lambda - u[(i + 1) % p] - rng.gen_range(0.0..0.2) * rng.gen::<f64>())
        .collect();
    (e, u)
}

/// Searches random dominated cycles with gamma^2 < lambda for pF != pE.
pub fn search_bi_pliss_counterexample(
    seed: u64,
    trials: usize,
    log_gamma: f64,
    log_lambda: f64,
) -> Option<(Vec<f64>, Vec<f64>, BiPliss)> {
    let mut rng = crate::rng::stream(seed, 0);
    for t in 0..trials {
        let p = 2 + t % 7;
        let (e, u) = random_dominated_cycle(&mut rng, p, log_gamma, log_lambda);
        if let Ok(r) = bi_pliss_unchecked(&e, &u, log_gamma, log_lambda) {
            if r.hypotheses && !r.equal {
                return Some((e, u, r));
            }
        }
    }
    None
}
