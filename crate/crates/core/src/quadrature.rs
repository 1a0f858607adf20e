//! Quadrature rules and compensated summation shared by the other modules.

use std::f64::consts::PI;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut k = KahanSum::new();
        for x in iter {
            k.add(x);
        }
        k
    }
}

/// Compensated sum of a sequence, in iteration order.
pub fn kahan_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<KahanSum>().value()
}

/// Nodes and weights of a quadrature rule.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    /// Applies the rule to `f`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        kahan_sum(self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)))
    }
}

/// Gauss-Legendre rule on [-1, 1], Newton iteration on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1, "Gauss-Legendre needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j as f64 + 1.0) * z * p2 - j as f64 * p3) / (j as f64 + 1.0);
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Rule { nodes, weights }
}

/// Maps a rule on [-1, 1] onto [a, b] and integrates `f`.
pub fn integrate_on(rule: &Rule, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    half * rule.integrate(|x| f(mid + half * x))
}

/// Gauss-Hermite rule for the standard Gaussian measure: weights sum to one
/// and `sum w_i p(x_i) = E[p(N)]` for polynomials of degree < 2n.
///
/// Nodes are the eigenvalues of the Jacobi matrix (zero diagonal, off-diagonal
/// `sqrt(k)`), isolated by Sturm-sequence bisection and polished by Newton
/// steps on the orthonormal recurrence. Weights are `1 / (n p_{n-1}(x)^2)`.
pub fn gauss_hermite(n: usize) -> Rule {
    assert!(n >= 1, "Gauss-Hermite needs at least one node");
    let bound = 2.0 * (n as f64).sqrt() + 1.0;
    // number of eigenvalues strictly below x
    let count_below = |x: f64| -> usize {
        let mut count = 0;
        let mut d = -x;
        if d < 0.0 {
            count += 1;
        }
        for k in 1..n {
            let dd = if d == 0.0 { 1e-300 } else { d };
            d = -x - k as f64 / dd;
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };
    let half = n / 2;
    let mut upper = Vec::with_capacity(n - half);
    for i in half..n {
        let (mut lo, mut hi) = (if i == half { -1e-3 } else { 0.0 }, bound);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if count_below(mid) > i {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-14 * hi.abs().max(1.0) {
                break;
            }
        }
        let mut z = 0.5 * (lo + hi);
        let mut pm1 = 0.0;
        let mut lscale = 0.0;
        for _ in 0..4 {
            let (p, q, ls) = orthonormal_hermite_pair(n, z);
            let step = p / ((n as f64).sqrt() * q);
            if step.is_finite() {
                z -= step;
            }
            pm1 = q;
            lscale = ls;
        }
        let (_, q, ls) = orthonormal_hermite_pair(n, z);
        if q.is_finite() {
            pm1 = q;
            lscale = ls;
        }
        let w = (-2.0 * (pm1.abs().ln() + lscale)).exp() / n as f64;
        upper.push((z, w));
    }
    if n % 2 == 1 {
        upper[0].0 = 0.0;
    }
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for &(z, w) in upper.iter().skip(n % 2).rev() {
        nodes.push(-z);
        weights.push(w);
    }
    for &(z, w) in &upper {
        nodes.push(z);
        weights.push(w);
    }
    let total = kahan_sum(weights.iter().copied());
    for v in &mut weights {
        *v /= total;
    }
    Rule { nodes, weights }
}

/// `(p_n(x), p_{n-1}(x), log_scale)` for the orthonormal probabilists'
/// Hermite polynomials, with both values divided by `exp(log_scale)`.
fn orthonormal_hermite_pair(n: usize, x: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    let mut log_scale = 0.0;
    for k in 0..n {
        let kf = k as f64;
        let next = (x * cur - kf.sqrt() * prev) / (kf + 1.0).sqrt();
        prev = cur;
        cur = next;
        if cur.abs() > 1e150 {
            cur *= 1e-150;
            prev *= 1e-150;
            log_scale += 150.0 * std::f64::consts::LN_10;
        }
    }
    (cur, prev, log_scale)
}

/// Adaptive Simpson quadrature with a fixed, deterministic recursion tree.
///
/// Returns the integral estimate and the accumulated Richardson error
/// estimate.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> (f64, f64) {
    if a == b {
        return (0.0, 0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut err = 0.0;
    let v = simpson_step(f, a, b, fa, fm, fb, whole, tol, 50, &mut err);
    (v, err)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    err: &mut f64,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        *err += (delta / 15.0).abs();
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, err)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, err)
}

/// Ordinary least-squares slope and intercept of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let mx = kahan_sum(x.iter().copied()) / n as f64;
    let my = kahan_sum(y.iter().copied()) / n as f64;
    let sxx = kahan_sum(x.iter().map(|v| (v - mx) * (v - mx)));
    let sxy = kahan_sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    if sxx <= 0.0 || !sxy.is_finite() {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// `n` points geometrically spaced from `a` to `b` inclusive.
pub fn geomspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(a > 0.0 && b > 0.0 && n >= 2);
    let (la, lb) = (a.ln(), b.ln());
    (0..n)
        .map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        let r = gauss_legendre(10);
        // x^18 integrates to 2/19 on [-1, 1]
        let v = r.integrate(|x| x.powi(18));
        assert!((v - 2.0 / 19.0).abs() < 1e-14);
        assert!((integrate_on(&r, 0.0, 2.0, |x| x * x) - 8.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn hermite_rule_reproduces_gaussian_moments() {
        let r = gauss_hermite(20);
        let m2 = r.integrate(|x| x * x);
        let m4 = r.integrate(|x| x.powi(4));
        let m6 = r.integrate(|x| x.powi(6));
        assert!((m2 - 1.0).abs() < 1e-13);
        assert!((m4 - 3.0).abs() < 1e-12);
        assert!((m6 - 15.0).abs() < 1e-11);
        assert!(r.integrate(|x| x.powi(3)).abs() < 1e-13);
    }

    #[test]
    fn hermite_rule_large_n_stays_accurate() {
        let r = gauss_hermite(256);
        assert!((r.integrate(|x| x.powi(8)) - 105.0).abs() < 1e-9);
        assert!(r.nodes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn simpson_handles_endpoint_singular_derivative() {
        let (v, _) = adaptive_simpson(&|x: f64| x.sqrt(), 0.0, 1.0, 1e-12);
        assert!((v - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn kahan_beats_naive_cancellation() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(kahan_sum(xs), 2.0);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.5 * v - 1.0).collect();
        let (s, i) = linear_fit(&x, &y).unwrap();
        assert!((s - 2.5).abs() < 1e-14 && (i + 1.0).abs() < 1e-14);
    }
}
