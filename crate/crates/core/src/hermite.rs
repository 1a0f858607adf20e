//! Probabilists' Hermite polynomials, Gaussian chaos projection, Hermite rank
//! and the action of the one-dimensional Malliavin operators on coefficients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{gauss_hermite, gauss_legendre, kahan_sum, Rule};

/// Highest Hermite order the evaluators accept.
pub const MAX_ORDER: usize = 200;

/// Default truncation order for expansions.
pub const DEFAULT_QMAX: usize = 16;

/// Rank detection threshold, relative to the largest coefficient of order >= 1.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// `H_q(x)` by the three-term recurrence `H_{q+1} = x H_q - q H_{q-1}`.
pub fn eval_hermite(q: usize, x: f64) -> Result<f64> {
    if q > MAX_ORDER {
        return Err(Error::UnsupportedOrder {
            order: q,
            max: MAX_ORDER,
        });
    }
    let (mut prev, mut cur) = (1.0, x);
    if q == 0 {
        return Ok(1.0);
    }
    for k in 1..q {
        let next = x * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// Fills `out[q] = H_q(x) / sqrt(q!)` for `q = 0..out.len()`.
///
/// The normalized recurrence stays bounded where the raw one overflows.
fn normalized_hermite_into(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for q in 1..out.len().saturating_sub(1) {
        let qf = q as f64;
        out[q + 1] = (x * out[q] - qf.sqrt() * out[q - 1]) / (qf + 1.0).sqrt();
    }
}

/// `q!` in floating point.
pub fn factorial(q: usize) -> f64 {
    (1..=q).fold(1.0, |acc, k| acc * k as f64)
}

fn inv_sqrt_factorial(q: usize) -> f64 {
    (1..=q).fold(1.0, |acc, k| acc / (k as f64).sqrt())
}

/// Truncated Hermite chaos expansion `f = sum_q c_q H_q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ExpansionRepr", from = "ExpansionRepr")]
pub struct HermiteExpansion {
    coeffs: Vec<f64>,
    rank: usize,
    tol_rank: f64,
}

#[derive(Serialize, Deserialize)]
struct ExpansionRepr {
    qmax: usize,
    coeffs: Vec<f64>,
    #[serde(default)]
    rank: usize,
}

impl From<HermiteExpansion> for ExpansionRepr {
    fn from(e: HermiteExpansion) -> Self {
        ExpansionRepr {
            qmax: e.qmax(),
            rank: e.rank,
            coeffs: e.coeffs,
        }
    }
}

impl From<ExpansionRepr> for HermiteExpansion {
    fn from(r: ExpansionRepr) -> Self {
        let mut coeffs = r.coeffs;
        coeffs.resize(r.qmax + 1, 0.0);
        HermiteExpansion::new(coeffs)
    }
}

impl HermiteExpansion {
    /// Builds an expansion from `c_0..c_qmax`, detecting the rank with the
    /// default relative tolerance. Rank 0 marks an undetermined rank.
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        let scale = coeffs
            .iter()
            .skip(1)
            .fold(0.0f64, |m, c| m.max(c.abs()));
        let tol_rank = DEFAULT_RANK_TOL * scale;
        let rank = if scale > 0.0 {
            coeffs
                .iter()
                .enumerate()
                .skip(1)
                .find(|(_, c)| c.abs() > tol_rank)
                .map_or(0, |(q, _)| q)
        } else {
            0
        };
        HermiteExpansion {
            coeffs,
            rank,
            tol_rank,
        }
    }

    /// Expansion with a single nonzero coefficient `c_q = value`.
    pub fn monomial(q: usize, value: f64) -> Self {
        let mut c = vec![0.0; q + 1];
        c[q] = value;
        Self::new(c)
    }

    pub fn qmax(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// `c_q`, zero past the truncation.
    pub fn c(&self, q: usize) -> f64 {
        self.coeffs.get(q).copied().unwrap_or(0.0)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn tol_rank(&self) -> f64 {
        self.tol_rank
    }

    /// Copy with `c_0 = 0`.
    pub fn centered(&self) -> Self {
        let mut c = self.coeffs.clone();
        c[0] = 0.0;
        Self::new(c)
    }

    pub fn is_centered(&self) -> bool {
        let scale = self.coeffs.iter().fold(1.0f64, |m, c| m.max(c.abs()));
        self.coeffs[0].abs() <= 1e-12 * scale
    }

    /// `E[f(N)^2] = sum_q c_q^2 q!`.
    pub fn second_moment(&self) -> Result<f64> {
        let v = kahan_sum(
            self.coeffs
                .iter()
                .enumerate()
                .map(|(q, c)| c * c * factorial(q)),
        );
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Precision {
                what: "sum of c_q^2 q! overflowed".into(),
                residual: f64::INFINITY,
            })
        }
    }

    /// Synthesizes `f(x)` from the coefficients.
    pub fn eval(&self, x: f64) -> f64 {
        let mut acc = self.coeffs[0];
        if self.coeffs.len() == 1 {
            return acc;
        }
        let (mut prev, mut cur) = (1.0, x);
        acc += self.coeffs[1] * cur;
        for q in 1..self.coeffs.len() - 1 {
            let next = x * cur - q as f64 * prev;
            prev = cur;
            cur = next;
            acc += self.coeffs[q + 1] * cur;
        }
        acc
    }

    /// Coefficient-wise sum, padded to the longer truncation.
    pub fn add(&self, other: &HermiteExpansion) -> HermiteExpansion {
        let n = self.coeffs.len().max(other.coeffs.len());
        Self::new((0..n).map(|q| self.c(q) + other.c(q)).collect())
    }
}

/// Smallest `q >= 1` with `|c_q| > tol`; `c_0` is treated as the mean.
pub fn hermite_rank(e: &HermiteExpansion, tol: f64) -> Result<usize> {
    e.coeffs
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, c)| c.abs() > tol)
        .map(|(q, _)| q)
        .ok_or(Error::RankUndetermined { tol })
}

fn project_rule(
    f: &dyn Fn(f64) -> f64,
    qmax: usize,
    nodes: &[f64],
    weights: &[f64],
) -> Result<HermiteExpansion> {
    if qmax > MAX_ORDER {
        return Err(Error::UnsupportedOrder {
            order: qmax,
            max: MAX_ORDER,
        });
    }
    let mut h = vec![0.0; qmax + 1];
    let mut acc = vec![crate::quadrature::KahanSum::new(); qmax + 1];
    for (&x, &w) in nodes.iter().zip(weights) {
        let v = f(x);
        if !v.is_finite() {
            return Err(Error::Evaluation { node: x, value: v });
        }
        normalized_hermite_into(x, &mut h);
        for (a, hq) in acc.iter_mut().zip(&h) {
            a.add(w * v * hq);
        }
    }
    let coeffs = acc
        .iter()
        .enumerate()
        .map(|(q, a)| a.value() * inv_sqrt_factorial(q))
        .collect();
    Ok(HermiteExpansion::new(coeffs))
}

/// Projects `f` onto `H_0..H_qmax` with an `n_nodes`-point Gauss-Hermite rule:
/// `c_q = E[f(N) H_q(N)] / q!`.
///
/// Accurate for smooth `f`; use [`project_piecewise`] when `f` has kinks.
pub fn project(f: &dyn Fn(f64) -> f64, qmax: usize, n_nodes: usize) -> Result<HermiteExpansion> {
    if n_nodes < 2 * qmax + 2 {
        return Err(Error::Precondition(format!(
            "n_nodes = {n_nodes} must be at least 2*qmax+2 = {}",
            2 * qmax + 2
        )));
    }
    let rule = gauss_hermite(n_nodes);
    project_rule(f, qmax, &rule.nodes, &rule.weights)
}

/// Half-width of the truncated real line used by [`project_piecewise`];
/// the Gaussian mass beyond it is below 1e-55.
const PIECEWISE_HALF_WIDTH: f64 = 16.0;

fn piecewise_rule(kinks: &[f64]) -> Rule {
    let gl = gauss_legendre(20);
    let mut cuts: Vec<f64> = kinks
        .iter()
        .copied()
        .filter(|k| k.abs() < PIECEWISE_HALF_WIDTH)
        .collect();
    cuts.push(-PIECEWISE_HALF_WIDTH);
    cuts.push(PIECEWISE_HALF_WIDTH);
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup();
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for seg in cuts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let panels = ((b - a) / 0.5).ceil().max(1.0) as usize;
        let width = (b - a) / panels as f64;
        for p in 0..panels {
            let lo = a + p as f64 * width;
            let mid = lo + 0.5 * width;
            for (&x, &w) in gl.nodes.iter().zip(&gl.weights) {
                let node = mid + 0.5 * width * x;
                nodes.push(node);
                weights.push(0.5 * width * w * norm * (-0.5 * node * node).exp());
            }
        }
    }
    Rule { nodes, weights }
}

/// Projection by composite Gauss-Legendre panels split at the given kinks,
/// for functions that are only piecewise smooth (such as `|x|`).
pub fn project_piecewise(
    f: &dyn Fn(f64) -> f64,
    qmax: usize,
    kinks: &[f64],
) -> Result<HermiteExpansion> {
    let rule = piecewise_rule(kinks);
    project_rule(f, qmax, &rule.nodes, &rule.weights)
}

/// Closed-form chaos expansion of `|x|`:
/// `|x| = sqrt(2/pi) (1 + sum_{k>=1} (-1)^{k+1} H_{2k}(x) / (2^k k! (2k-1)))`.
///
/// Odd coefficients vanish. Call [`HermiteExpansion::centered`] for
/// `|x| - sqrt(2/pi)`, which has Hermite rank 2.
pub fn abs_expansion(qmax: usize) -> Result<HermiteExpansion> {
    if qmax < 2 {
        return Err(Error::Precondition(format!("qmax = {qmax} must be >= 2")));
    }
    let mut c = vec![0.0; qmax + 1];
    c[0] = SQRT_2_OVER_PI;
    for k in 1..=qmax / 2 {
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        let denom = 2f64.powi(k as i32) * factorial(k) * (2 * k - 1) as f64;
        c[2 * k] = sign * SQRT_2_OVER_PI / denom;
    }
    Ok(HermiteExpansion::new(c))
}

/// The series `sum_{k>=1} H_{2k} / (k! (2k-1))` in the form it is often
/// displayed for `|x| - sqrt(2/pi)`. Kept for side-by-side reporting only:
/// it is not the chaos expansion of `|x|` (compare [`abs_expansion`]).
pub fn abs_expansion_displayed(qmax: usize) -> HermiteExpansion {
    let mut c = vec![0.0; qmax + 1];
    for k in 1..=qmax / 2 {
        c[2 * k] = 1.0 / (factorial(k) * (2 * k - 1) as f64);
    }
    HermiteExpansion::new(c)
}

/// `f_d = sum_{q>=d} c_q H_{q-d}`: coefficients shifted down by `d`.
///
/// Equals `(-D L^{-1})^d f` whenever `d` does not exceed the rank.
pub fn shift_expansion(e: &HermiteExpansion, d: usize) -> Result<HermiteExpansion> {
    if d > e.qmax() {
        return Err(Error::EmptyExpansion {
            shift: d,
            qmax: e.qmax(),
        });
    }
    if d > 0 && (e.rank() == 0 || d > e.rank()) {
        return Err(Error::Precondition(format!(
            "shift d = {d} exceeds the Hermite rank {}",
            e.rank()
        )));
    }
    Ok(HermiteExpansion::new(e.coeffs[d..].to_vec()))
}

/// Malliavin operators on the one-dimensional Gaussian space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MalliavinOp {
    /// `D g = g'`: `c_q H_q -> q c_q H_{q-1}`.
    D,
    /// `delta g = x g - g'`: `c_q H_q -> c_q H_{q+1}`.
    Delta,
    /// Pseudo-inverse of `L g = g'' - x g'`: `c_q -> -c_q / q`, defined on
    /// centered expansions.
    Linv,
}

pub fn malliavin_apply(op: MalliavinOp, e: &HermiteExpansion) -> Result<HermiteExpansion> {
    let c = e.coeffs();
    let out = match op {
        MalliavinOp::D => {
            if c.len() == 1 {
                vec![0.0]
            } else {
                (1..c.len()).map(|q| q as f64 * c[q]).collect()
            }
        }
        MalliavinOp::Delta => std::iter::once(0.0).chain(c.iter().copied()).collect(),
        MalliavinOp::Linv => {
            if !e.is_centered() {
                return Err(Error::Precondition(format!(
                    "L^-1 needs a centered expansion, c_0 = {}",
                    c[0]
                )));
            }
            std::iter::once(0.0)
                .chain((1..c.len()).map(|q| -c[q] / q as f64))
                .collect()
        }
    };
    Ok(HermiteExpansion::new(out))
}

/// `(E|f(N)|^p)^{1/p}` by Gauss-Hermite quadrature.
pub fn lp_norm_gaussian(f: &dyn Fn(f64) -> f64, p: f64, n_nodes: usize) -> Result<f64> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::Domain {
            name: "p",
            value: p,
            reason: "must be positive and finite",
        });
    }
    let rule = gauss_hermite(n_nodes.max(1));
    let mut acc = crate::quadrature::KahanSum::new();
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        let v = f(x);
        if !v.is_finite() {
            return Err(Error::Evaluation { node: x, value: v });
        }
        acc.add(w * v.abs().powf(p));
    }
    Ok(acc.value().powf(1.0 / p))
}

/// Pointwise functions with known kink locations, addressable by name.
#[derive(Debug, Clone, Copy)]
pub struct NamedFunction {
    pub name: &'static str,
    pub f: fn(f64) -> f64,
    pub kinks: &'static [f64],
}

const NAMED: &[NamedFunction] = &[
    NamedFunction {
        name: "abs",
        f: f64::abs,
        kinks: &[0.0],
    },
    NamedFunction {
        name: "abs_centered",
        f: |x| x.abs() - SQRT_2_OVER_PI,
        kinks: &[0.0],
    },
    NamedFunction {
        name: "square",
        f: |x| x * x,
        kinks: &[],
    },
    NamedFunction {
        name: "cube",
        f: |x| x * x * x,
        kinks: &[],
    },
    NamedFunction {
        name: "h1",
        f: |x| x,
        kinks: &[],
    },
    NamedFunction {
        name: "h2",
        f: |x| x * x - 1.0,
        kinks: &[],
    },
    NamedFunction {
        name: "h3",
        f: |x| x * x * x - 3.0 * x,
        kinks: &[],
    },
];

impl NamedFunction {
    pub fn lookup(name: &str) -> Option<NamedFunction> {
        NAMED.iter().find(|n| n.name == name).copied()
    }

    pub fn names() -> impl Iterator<Item = &'static str> {
        NAMED.iter().map(|n| n.name)
    }

    /// Projects with the rule suited to the function's smoothness.
    pub fn project(&self, qmax: usize) -> Result<HermiteExpansion> {
        if self.kinks.is_empty() {
            project(&self.f, qmax, 2 * qmax + 16)
        } else {
            project_piecewise(&self.f, qmax, self.kinks)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Integer coefficients of `H_q` in the monomial basis, built from the
    /// recurrence on polynomials rather than on values.
    fn symbolic_hermite(q: usize) -> Vec<i64> {
        let mut prev = vec![1i64];
        let mut cur = vec![0i64, 1];
        if q == 0 {
            return prev;
        }
        for k in 1..q {
            let mut next = vec![0i64; cur.len() + 1];
            for (i, c) in cur.iter().enumerate() {
                next[i + 1] += c;
            }
            for (i, c) in prev.iter().enumerate() {
                next[i] -= k as i64 * c;
            }
            prev = cur;
            cur = next;
        }
        cur
    }

    fn poly(c: &[i64], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &a| acc * x + a as f64)
    }

    #[test]
    fn hermite_values() {
        assert_eq!(eval_hermite(2, 0.0).unwrap(), -1.0);
        assert_eq!(eval_hermite(0, 7.3).unwrap(), 1.0);
        let h3 = symbolic_hermite(3);
        assert_eq!(h3, vec![0, -3, 0, 1]);
        assert_eq!(eval_hermite(3, 2.0).unwrap(), poly(&h3, 2.0));
        assert_eq!(eval_hermite(3, 2.0).unwrap(), 2.0);
        assert!(matches!(
            eval_hermite(201, 1.0),
            Err(Error::UnsupportedOrder { .. })
        ));
    }

    #[test]
    fn recurrence_matches_symbolic_expansion() {
        for q in 0..12 {
            let s = symbolic_hermite(q);
            for &x in &[-2.5, -0.3, 0.0, 1.1, 3.0] {
                let v = eval_hermite(q, x).unwrap();
                assert!((v - poly(&s, x)).abs() <= 1e-9 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn orthogonality_under_gaussian_rule() {
        let rule = gauss_hermite(24);
        for q in 0..=10 {
            for r in 0..=10 {
                let v = rule.integrate(|x| eval_hermite(q, x).unwrap() * eval_hermite(r, x).unwrap());
                if q == r {
                    let f = factorial(q);
                    assert!(((v - f) / f).abs() < 1e-10, "q={q} {v}");
                } else {
                    let scale = (factorial(q) * factorial(r)).sqrt();
                    assert!(v.abs() < 1e-12 * scale, "q={q} r={r} {v}");
                }
            }
        }
    }

    #[test]
    fn project_polynomials() {
        let e = project(&|x| x * x - 1.0, 6, 30).unwrap();
        for q in 0..=6 {
            let want = if q == 2 { 1.0 } else { 0.0 };
            assert!((e.c(q) - want).abs() < 1e-12);
        }
        // x^3 = H_3 + 3 H_1, from the symbolic oracle
        assert_eq!(symbolic_hermite(3), vec![0, -3, 0, 1]);
        let e = project(&|x| x * x * x, 6, 30).unwrap();
        for q in 0..=6 {
            let want = match q {
                1 => 3.0,
                3 => 1.0,
                _ => 0.0,
            };
            assert!((e.c(q) - want).abs() < 1e-12);
        }
        assert_eq!(e.rank(), 1);
    }

    #[test]
    fn project_rejects_too_few_nodes_and_nonfinite_values() {
        assert!(matches!(project(&|x| x, 6, 10), Err(Error::Precondition(_))));
        let err = project(&|x| if x > 2.0 { f64::NAN } else { x }, 2, 10).unwrap_err();
        assert!(matches!(err, Error::Evaluation { node, .. } if node > 2.0));
    }

    #[test]
    fn abs_coefficients_from_moments() {
        // c_2 = E[|N| (N^2 - 1)] / 2 = (2 sqrt(2/pi) - sqrt(2/pi)) / 2
        let e = abs_expansion(8).unwrap();
        assert!((e.c(0) - SQRT_2_OVER_PI).abs() < 1e-15);
        assert!((e.c(2) - SQRT_2_OVER_PI / 2.0).abs() < 1e-15);
        // c_4 = E[|N| (N^4 - 6N^2 + 3)] / 24 = sqrt(2/pi) (8 - 12 + 3) / 24
        assert!((e.c(4) + SQRT_2_OVER_PI / 24.0).abs() < 1e-15);
        assert_eq!(e.c(1), 0.0);
        assert_eq!(e.c(3), 0.0);
        assert_eq!(e.centered().rank(), 2);
    }

    #[test]
    fn abs_closed_form_matches_projection() {
        let closed = abs_expansion(12).unwrap();
        let proj = project_piecewise(&f64::abs, 12, &[0.0]).unwrap();
        for q in 0..=12 {
            let (a, b) = (closed.c(q), proj.c(q));
            if a == 0.0 {
                assert!(b.abs() < 1e-13, "q={q} {b}");
            } else {
                assert!(((a - b) / a).abs() < 1e-9, "q={q} {a} {b}");
            }
        }
    }

    #[test]
    fn displayed_series_is_not_the_abs_expansion() {
        let shown = abs_expansion_displayed(8);
        assert_eq!(shown.c(2), 1.0);
        assert!((shown.c(4) - 1.0 / 6.0).abs() < 1e-15);
        assert!((shown.c(6) - 1.0 / 30.0).abs() < 1e-15);
        let proj = project_piecewise(&f64::abs, 8, &[0.0]).unwrap();
        assert!((proj.c(2) - shown.c(2)).abs() > 0.5);
    }

    #[test]
    fn rank_detection() {
        assert_eq!(hermite_rank(&abs_expansion(8).unwrap().centered(), 1e-10).unwrap(), 2);
        let e = HermiteExpansion::new(vec![0.0, 3.0, 0.0, 1.0]);
        assert_eq!(hermite_rank(&e, 1e-10).unwrap(), 1);
        let z = HermiteExpansion::new(vec![0.0; 5]);
        assert!(matches!(hermite_rank(&z, 1e-10), Err(Error::RankUndetermined { .. })));
        assert_eq!(z.rank(), 0);
    }

    #[test]
    fn shifts() {
        let e = shift_expansion(&HermiteExpansion::monomial(2, 1.0), 2).unwrap();
        assert_eq!(e.coeffs(), &[1.0]);
        let e = shift_expansion(&HermiteExpansion::new(vec![0.0, 3.0, 0.0, 1.0]), 1).unwrap();
        assert_eq!(e.coeffs(), &[3.0, 0.0, 1.0]);
        let abs = abs_expansion(8).unwrap().centered();
        let s = shift_expansion(&abs, 2).unwrap();
        for q in 0..=6 {
            assert_eq!(s.c(q), abs.c(q + 2));
        }
        assert!(matches!(
            shift_expansion(&abs, 9),
            Err(Error::EmptyExpansion { .. })
        ));
        assert!(shift_expansion(&abs, 3).is_err());
    }

    #[test]
    fn malliavin_actions() {
        let d = malliavin_apply(MalliavinOp::D, &HermiteExpansion::monomial(3, 1.0)).unwrap();
        assert_eq!(d.coeffs(), &[0.0, 0.0, 3.0]);
        let e = HermiteExpansion::new(vec![0.5, -1.0, 2.0, 0.25, 4.0]);
        let dd = malliavin_apply(
            MalliavinOp::Delta,
            &malliavin_apply(MalliavinOp::D, &e).unwrap(),
        )
        .unwrap();
        for q in 0..=4 {
            assert_eq!(dd.c(q), q as f64 * e.c(q));
        }
        assert!(matches!(
            malliavin_apply(MalliavinOp::Linv, &e),
            Err(Error::Precondition(_))
        ));
    }

    fn minus_d_linv(e: &HermiteExpansion) -> HermiteExpansion {
        let l = malliavin_apply(MalliavinOp::Linv, e).unwrap();
        let d = malliavin_apply(MalliavinOp::D, &l).unwrap();
        HermiteExpansion::new(d.coeffs().iter().map(|c| -c).collect())
    }

    #[test]
    fn shift_equals_iterated_minus_d_linv_for_abs() {
        let abs = abs_expansion(12).unwrap().centered();
        let twice = minus_d_linv(&minus_d_linv(&abs));
        let shifted = shift_expansion(&abs, 2).unwrap();
        for q in 0..=10 {
            assert!((twice.c(q) - shifted.c(q)).abs() < 1e-12);
        }
    }

    #[test]
    fn lp_norms() {
        assert!((lp_norm_gaussian(&|_| 1.0, 3.7, 20).unwrap() - 1.0).abs() < 1e-13);
        assert!((lp_norm_gaussian(&|x| x, 2.0, 20).unwrap() - 1.0).abs() < 1e-13);
        // E[N^4] = 3
        let v = lp_norm_gaussian(&f64::abs, 4.0, 20).unwrap();
        assert!((v - 3f64.powf(0.25)).abs() < 1e-13);
        assert!(lp_norm_gaussian(&|x| x, 0.0, 20).is_err());
    }

    #[test]
    fn json_shape() {
        let e = HermiteExpansion::monomial(2, 1.0);
        let v: serde_json::Value = serde_json::to_value(&e).unwrap();
        assert_eq!(v["qmax"], 2);
        assert_eq!(v["rank"], 2);
        assert_eq!(v["coeffs"].as_array().unwrap().len(), 3);
    }

    proptest! {
        #[test]
        fn synthesis_then_projection_is_identity(
            coeffs in proptest::collection::vec(-2.0f64..2.0, 1..=13)
        ) {
            let e = HermiteExpansion::new(coeffs);
            let q = e.qmax();
            let back = project(&|x| e.eval(x), q, 2 * q + 16).unwrap();
            for k in 0..=q {
                prop_assert!((back.c(k) - e.c(k)).abs() < 1e-9);
            }
        }

        #[test]
        fn shift_matches_minus_d_linv_composition(
            tail in proptest::collection::vec(-1.0f64..1.0, 1..8),
            d in 1usize..4,
        ) {
            let mut c = vec![0.0; d];
            c.push(1.0);
            c.extend(tail);
            let e = HermiteExpansion::new(c);
            let mut it = e.clone();
            for _ in 0..d {
                it = minus_d_linv(&it);
            }
            let s = shift_expansion(&e, d).unwrap();
            for k in 0..=s.qmax() {
                prop_assert!((it.c(k) - s.c(k)).abs() < 1e-12);
            }
        }

        #[test]
        fn delta_after_d_multiplies_by_order(
            coeffs in proptest::collection::vec(-5.0f64..5.0, 1..16)
        ) {
            let e = HermiteExpansion::new(coeffs);
            let dd = malliavin_apply(MalliavinOp::Delta, &malliavin_apply(MalliavinOp::D, &e).unwrap()).unwrap();
            for q in 0..=e.qmax() {
                prop_assert_eq!(dd.c(q), q as f64 * e.c(q));
            }
        }
    }
}
