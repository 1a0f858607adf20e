//! Limiting constants: the central-regime variance, the logarithmic-regime
//! variance, the covariance of the Hermite-type limit, regime classification
//! and normalizations, and summability diagnostics for chaos expansions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::{abs_expansion, lp_norm_gaussian, HermiteExpansion};
use crate::models::{SelfSimilarModel, StationaryModel, Tail};
use crate::quadrature::{adaptive_simpson, gauss_legendre, KahanSum, Rule};

/// Absolute tolerance on `alpha = 2 - 1/d` used by [`classify_regime`].
pub const TIE_TOL: f64 = 1e-9;

/// Per-segment tolerance of the adaptive quadrature for `int rho^q`.
const SEGMENT_TOL: f64 = 1e-13;

/// Lag beyond which `int rho^q` is replaced by its asymptotic series.
const SERIES_CUTOFF: f64 = 64.0;

fn factorial(q: usize) -> f64 {
    (1..=q).fold(1.0, |acc, k| acc * k as f64)
}

/// `int_R rho(h)^q dh` (or `int |rho|^q` when `abs`) with an error estimate.
///
/// Power-law kernels are integrated adaptively up to a fixed lag and the
/// remaining tail is integrated term by term from the large-lag expansion
/// `a_alpha(h) = sum_k C(alpha, 2k) h^{alpha - 2k}`.
pub fn rho_power_integral(rho: &StationaryModel, q: usize, abs: bool) -> Result<(f64, f64)> {
    if q == 0 {
        return Err(Error::NotIntegrable {
            power: 0,
            reason: "rho^0 = 1 is not integrable on the real line".into(),
        });
    }
    let qi = q as i32;
    let eval = |h: f64| -> f64 {
        let r = rho.rho(h).unwrap_or(f64::NAN);
        let v = r.powi(qi);
        if abs {
            v.abs()
        } else {
            v
        }
    };
    let mut acc = KahanSum::new();
    let mut err = 0.0;
    let segment = |a: f64, b: f64, acc: &mut KahanSum, err: &mut f64| {
        let (v, e) = adaptive_simpson(&eval, a, b, SEGMENT_TOL);
        acc.add(v);
        *err += e;
    };
    match rho.tail() {
        Tail::Compact(r) => {
            if r > 0.0 {
                let cuts: Vec<f64> = match rho {
                    StationaryModel::Tabulated { step, values } => {
                        (0..values.len()).map(|k| k as f64 * step).collect()
                    }
                    _ => vec![0.0, r],
                };
                for w in cuts.windows(2) {
                    segment(w[0], w[1], &mut acc, &mut err);
                }
            }
        }
        Tail::Exponential(rate) => {
            let reach = 50.0 / (q as f64 * rate);
            let pieces = 16;
            for k in 0..pieces {
                let a = reach * k as f64 / pieces as f64;
                let b = reach * (k + 1) as f64 / pieces as f64;
                segment(a, b, &mut acc, &mut err);
            }
            err += (-(q as f64) * rate * reach).exp() / (q as f64 * rate);
        }
        Tail::Power(kappa) => {
            if !(kappa * q as f64 > 1.0) {
                return Err(Error::NotIntegrable {
                    power: q,
                    reason: format!("|rho(h)| decays like |h|^-{kappa} and {kappa} * {q} <= 1"),
                });
            }
            let alpha = rho.alpha().ok_or_else(|| {
                Error::Precondition("power-law tails are only available for a_alpha kernels".into())
            })?;
            segment(0.0, 1.0, &mut acc, &mut err);
            let mut a = 1.0;
            while a < SERIES_CUTOFF {
                segment(a, 2.0 * a, &mut acc, &mut err);
                a *= 2.0;
            }
            let (tail, tail_err) = kernel_tail_integral(alpha, q, SERIES_CUTOFF);
            acc.add(if abs { tail.abs() } else { tail });
            err += tail_err;
        }
    }
    let v = acc.value();
    if !v.is_finite() {
        return Err(Error::Precision {
            what: format!("int rho^{q} is not finite"),
            residual: f64::INFINITY,
        });
    }
    Ok((2.0 * v, 2.0 * err))
}

/// `int_H^inf a_alpha(h)^q dh` from the large-lag series, with the size of the
/// first omitted term.
fn kernel_tail_integral(alpha: f64, q: usize, cutoff: f64) -> (f64, f64) {
    const TERMS: usize = 10;
    // a_alpha(h) = h^{alpha-2} B(h^-2), B(x) = sum_j b_j x^j, b_j = C(alpha, 2j+2)
    let mut binom = 1.0;
    let mut b = vec![0.0; TERMS];
    for j in 1..=2 * TERMS {
        binom *= (alpha - (j - 1) as f64) / j as f64;
        if j % 2 == 0 {
            b[j / 2 - 1] = binom;
        }
    }
    let mut g = vec![0.0; TERMS];
    g[0] = 1.0;
    for _ in 0..q {
        let mut next = vec![0.0; TERMS];
        for (i, gi) in g.iter().enumerate() {
            for (j, bj) in b.iter().enumerate() {
                if i + j < TERMS {
                    next[i + j] += gi * bj;
                }
            }
        }
        g = next;
    }
    let base = q as f64 * (alpha - 2.0);
    let mut sum = KahanSum::new();
    let mut last = 0.0;
    for (j, gj) in g.iter().enumerate() {
        let p = base - 2.0 * j as f64 + 1.0;
        let term = gj * cutoff.powf(p) / (-p);
        sum.add(term);
        last = term;
    }
    (sum.value(), 2.0 * last.abs() + 1e-16 * sum.value().abs())
}

/// One chaos contribution `c_q^2 q! int rho^q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sigma2Term {
    pub q: usize,
    pub coeff: f64,
    pub integral: f64,
    pub contribution: f64,
}

/// Limiting variance with its quadrature and tail error budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sigma2 {
    pub value: f64,
    pub tail_bound: f64,
    pub terms: Vec<Sigma2Term>,
}

/// Relative error budget above which [`sigma2_central`] refuses to answer.
const SIGMA2_REL_TOL: f64 = 1e-6;

/// `sigma^2 = sum_{q=d}^{qmax} c_q^2 q! int rho(h)^q dh`.
pub fn sigma2_central(e: &HermiteExpansion, rho: &StationaryModel, d: usize) -> Result<Sigma2> {
    if d == 0 {
        return Err(Error::Precondition("d must be at least 1".into()));
    }
    if let Some(q) = (1..d.min(e.qmax() + 1)).find(|&q| e.c(q) != 0.0) {
        return Err(Error::Precondition(format!(
            "c_{q} = {} is nonzero below d = {d}",
            e.c(q)
        )));
    }
    if let Tail::Power(kappa) = rho.tail() {
        if !(kappa * d as f64 > 1.0) {
            return Err(Error::NotIntegrable {
                power: d,
                reason: format!("|rho(h)|^{d} decays like |h|^-{}", kappa * d as f64),
            });
        }
    }
    let mut value = KahanSum::new();
    let mut tail_bound = 0.0;
    let mut terms = Vec::new();
    for q in d..=e.qmax() {
        let c = e.c(q);
        if c == 0.0 {
            continue;
        }
        let (integral, err) = rho_power_integral(rho, q, false)?;
        let w = c * c * factorial(q);
        let contribution = w * integral;
        value.add(contribution);
        tail_bound += w * err;
        terms.push(Sigma2Term {
            q,
            coeff: c,
            integral,
            contribution,
        });
    }
    let value = value.value();
    if tail_bound > SIGMA2_REL_TOL * value.abs().max(1e-300) && tail_bound > 1e-12 {
        return Err(Error::Precision {
            what: "sigma^2 quadrature/tail budget".into(),
            residual: tail_bound,
        });
    }
    Ok(Sigma2 {
        value,
        tail_bound,
        terms,
    })
}

/// Closed-form variance in the logarithmic regime `alpha = 2 - 1/d`:
/// `c_d^2 d! (1 + (beta - alpha/2) d) (1 - 1/(2d))^d (1 - 1/d)^d`.
pub fn sigma2_log(c_d: f64, d: usize, alpha: f64, beta: f64) -> Result<f64> {
    if d == 0 {
        return Err(Error::Precondition("d must be at least 1".into()));
    }
    let df = d as f64;
    if (alpha - (2.0 - 1.0 / df)).abs() > 1e-12 {
        return Err(Error::Regime(format!(
            "alpha = {alpha} is not 2 - 1/{d} = {}",
            2.0 - 1.0 / df
        )));
    }
    if !(beta > 0.0 && beta >= alpha / 2.0 - 1e-12) {
        return Err(Error::Domain {
            name: "beta",
            value: beta,
            reason: "must satisfy alpha <= 2 beta",
        });
    }
    Ok(c_d * c_d
        * factorial(d)
        * (1.0 + (beta - alpha / 2.0) * df)
        * (1.0 - 1.0 / (2.0 * df)).powi(d as i32)
        * (1.0 - 1.0 / df).powi(d as i32))
}

/// `lim Var(sqrt(eps) int_0^{1/eps} f(Y)) / |log eps|` for a stationary `Y`
/// with correlation `a_alpha` at `alpha = 2 - 1/d`, obtained directly from
/// `a_alpha(h)^d ~ (alpha (alpha - 1) / 2)^d |h|^-1`:
/// `2 c_d^2 d! (alpha (alpha - 1) / 2)^d`.
pub fn log_rate_from_kernel(c_d: f64, d: usize, alpha: f64) -> f64 {
    2.0 * c_d * c_d * factorial(d) * (0.5 * alpha * (alpha - 1.0)).powi(d as i32)
}

/// Constants available for the logarithmic regime, reported side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegimeConstants {
    /// [`sigma2_log`].
    pub closed_form: f64,
    /// [`log_rate_from_kernel`].
    pub kernel_rate: f64,
    /// Limit variance displayed for the fBm length process at `H = 3/4`.
    pub fbm_length_display: f64,
    /// Limit variance displayed for the bifractional length process at
    /// `HK = 3/4`, when `K` is known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bifbm_length_display: Option<f64>,
}

pub fn log_regime_constants(
    c_d: f64,
    d: usize,
    alpha: f64,
    beta: f64,
    bifbm_k: Option<f64>,
) -> Result<LogRegimeConstants> {
    Ok(LogRegimeConstants {
        closed_form: sigma2_log(c_d, d, alpha, beta)?,
        kernel_rate: log_rate_from_kernel(c_d, d, alpha),
        fbm_length_display: 1.0 / 8.0,
        bifbm_length_display: bifbm_k.map(|k| 2f64.powf(-k) / 64.0),
    })
}

/// Which limit theorem governs `F_eps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Central,
    LogCentral,
    Noncentral,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Central => "central",
            Regime::LogCentral => "log_central",
            Regime::Noncentral => "noncentral",
        })
    }
}

/// Shape of the limit process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "limit", rename_all = "snake_case")]
pub enum LimitDescriptor {
    /// Brownian motion with variance `sigma2` (unknown until computed).
    BrownianMotion,
    /// Brownian motion after division by `sqrt(|log eps|)`.
    BrownianMotionLog,
    /// Hermite-type process of the given order with covariance `K_d`.
    HermiteProcess { order: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub alpha: f64,
    pub d: usize,
    pub regime: Regime,
    /// Power of `eps` multiplying `F_eps` beyond its built-in `sqrt(eps)`.
    pub normalization_exponent: f64,
    /// Whether `F_eps` is additionally divided by `sqrt(|log eps|)`.
    pub log_normalization: bool,
    pub limit: LimitDescriptor,
}

/// Compares `alpha` with `2 - 1/d`, treating `|alpha - (2 - 1/d)| <= tie_tol`
/// as the boundary.
pub fn classify_regime(alpha: f64, d: usize, tie_tol: f64) -> Result<RegimeReport> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(Error::Domain {
            name: "alpha",
            value: alpha,
            reason: "must lie in (0, 2]",
        });
    }
    if d == 0 {
        return Err(Error::Precondition("d must be at least 1".into()));
    }
    let threshold = 2.0 - 1.0 / d as f64;
    let (regime, exponent, log, limit) = if (alpha - threshold).abs() <= tie_tol {
        (Regime::LogCentral, 0.0, true, LimitDescriptor::BrownianMotionLog)
    } else if alpha < threshold {
        (Regime::Central, 0.0, false, LimitDescriptor::BrownianMotion)
    } else {
        (
            Regime::Noncentral,
            0.5 - d as f64 * (1.0 - alpha / 2.0),
            false,
            LimitDescriptor::HermiteProcess { order: d },
        )
    };
    Ok(RegimeReport {
        alpha,
        d,
        regime,
        normalization_exponent: exponent,
        log_normalization: log,
        limit,
    })
}

/// Factor applied to `F_eps`: `1`, `|log eps|^{-1/2}` or
/// `eps^{1/2 - d(1 - alpha/2)}` by regime.
pub fn normalization(alpha: f64, d: usize, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain {
            name: "eps",
            value: eps,
            reason: "must lie in (0, 1)",
        });
    }
    let r = classify_regime(alpha, d, TIE_TOL)?;
    Ok(match r.regime {
        Regime::Central => 1.0,
        Regime::LogCentral => 1.0 / eps.ln().abs().sqrt(),
        Regime::Noncentral => eps.powf(r.normalization_exponent),
    })
}

/// Result of a `K_d` evaluation with the difference between two rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdValue {
    pub value: f64,
    pub residual: f64,
}

/// Geometric levels used toward each weak singularity.
const GRADED_LEVELS: usize = 40;
const INNER_LEVELS: usize = 30;
const KD_REL_TOL: f64 = 1e-3;

/// `K_d(s,t) = d!/(2 lambda)^d int_0^s int_0^t (d_u d_v E[X(u)X(v)] / (uv)^{beta-alpha/2})^d du dv`.
pub fn kd_covariance(m: &SelfSimilarModel, d: usize, s: f64, t: f64) -> Result<f64> {
    kd_covariance_detailed(m, d, s, t).map(|k| k.value)
}

pub fn kd_covariance_detailed(m: &SelfSimilarModel, d: usize, s: f64, t: f64) -> Result<KdValue> {
    for (name, v) in [("s", s), ("t", t)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Domain {
                name,
                value: v,
                reason: "must be nonnegative and finite",
            });
        }
    }
    let alpha = m.alpha();
    if d < 2 {
        return Err(Error::Regime(format!("K_d needs d >= 2, got {d}")));
    }
    if !((alpha - 2.0) * d as f64 > -1.0) {
        return Err(Error::Regime(format!(
            "alpha = {alpha} is not above 2 - 1/{d}; the diagonal singularity is not integrable"
        )));
    }
    let (a, b) = if s <= t { (s, t) } else { (t, s) };
    if a == 0.0 {
        return Ok(KdValue {
            value: 0.0,
            residual: 0.0,
        });
    }
    let coarse = kd_integral(m, d, a, b, &gauss_legendre(8))?;
    let fine = kd_integral(m, d, a, b, &gauss_legendre(16))?;
    let pref = factorial(d) / (2.0 * m.lambda()).powi(d as i32);
    let value = pref * fine;
    let residual = pref * (fine - coarse).abs();
    if residual > KD_REL_TOL * value.abs() {
        return Err(Error::Precision {
            what: format!("K_{d}({s}, {t}) quadrature did not settle"),
            residual,
        });
    }
    Ok(KdValue { value, residual })
}

/// `int_0^a int_0^b g(u,v)^d du dv` in the coordinates `w = u - v`, `v`.
fn kd_integral(m: &SelfSimilarModel, d: usize, a: f64, b: f64, rule: &Rule) -> Result<f64> {
    let shift = m.beta() - m.alpha() / 2.0;
    let di = d as i32;
    let integrand = |u: f64, v: f64| -> Result<f64> {
        let g = m.mixed_partial(u, v)? / (u * v).powf(shift);
        Ok(g.powi(di))
    };
    // v ranges over [max(0, -w), min(b, a - w)] and is graded toward its
    // lower end, where u or v vanishes
    let inner = |w: f64| -> Result<f64> {
        let v0 = (-w).max(0.0);
        let v1 = b.min(a - w);
        let len = v1 - v0;
        if len <= 0.0 {
            return Ok(0.0);
        }
        let mut acc = KahanSum::new();
        let mut hi = len;
        for level in 0..=INNER_LEVELS {
            let lo = if level == INNER_LEVELS { 0.0 } else { 0.5 * hi };
            let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            for (&x, &wt) in rule.nodes.iter().zip(&rule.weights) {
                let v = v0 + mid + half * x;
                acc.add(half * wt * integrand(v + w, v)?);
            }
            hi = lo;
        }
        Ok(acc.value())
    };
    let panel = |lo: f64, hi: f64| -> Result<f64> {
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        let mut acc = KahanSum::new();
        for (&x, &wt) in rule.nodes.iter().zip(&rule.weights) {
            acc.add(half * wt * inner(mid + half * x)?);
        }
        Ok(acc.value())
    };
    // geometric tail ratio of panel integrals for |w|^gamma near w = 0
    let gamma = (m.alpha() - 2.0) * d as f64;
    let ratio = 2f64.powf(-(gamma + 1.0));
    let mut total = KahanSum::new();
    for (extent, sign, kink) in [(b, -1.0, a - b), (a, 1.0, f64::NAN)] {
        // |w| from extent down to extent * 2^-levels, split at the kink
        let mut edges: Vec<f64> = (0..=GRADED_LEVELS)
            .map(|k| extent * 2f64.powi(-(k as i32)))
            .collect();
        if kink.is_finite() && kink.abs() > 0.0 && kink.abs() < extent {
            edges.push(kink.abs());
            edges.sort_by(|x, y| y.total_cmp(x));
        }
        let mut last = 0.0;
        for e in edges.windows(2) {
            let (hi, lo) = (e[0], e[1]);
            let p = if sign < 0.0 {
                panel(-hi, -lo)?
            } else {
                panel(lo, hi)?
            };
            total.add(p);
            last = p;
        }
        total.add(last * ratio / (1.0 - ratio));
    }
    Ok(total.value())
}

/// Closed form of `K_d(s,t)` for fBm:
/// `d! (H(2H-1))^d (s^{g+2} + t^{g+2} - |t-s|^{g+2}) / ((g+1)(g+2))`, `g = (2H-2) d`.
pub fn kd_fbm_closed_form(h: f64, d: usize, s: f64, t: f64) -> f64 {
    let g = (2.0 * h - 2.0) * d as f64;
    factorial(d) * (h * (2.0 * h - 1.0)).powi(d as i32)
        * (s.powf(g + 2.0) + t.powf(g + 2.0) - (t - s).abs().powf(g + 2.0))
        / ((g + 1.0) * (g + 2.0))
}

/// Convergence verdict of a series of nonnegative terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesVerdict {
    Finite,
    Converges,
    Diverges,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenHarizReport {
    pub r: f64,
    /// `|c_q| / sqrt(q!) (int |rho|^q)^{1/2} R^q` for `q = d..qmax`.
    pub bh1_terms: Vec<f64>,
    pub bh1_partial_sum: f64,
    /// Last ratio of consecutive nonzero terms.
    pub bh1_ratio: Option<f64>,
    pub bh1_verdict: SeriesVerdict,
    /// All nonzero coefficients of order `>= d` are positive.
    pub bh2_positive: bool,
    /// `(E f(N)^4)^{1/4}` of the truncated expansion.
    pub bh2_l4_norm: f64,
    pub bh2: bool,
}

/// Evaluates the summability condition
/// `sum_q |c_q| / sqrt(q!) (int |rho|^q)^{1/2} R^q < inf` on the truncated
/// expansion and the sign/moment condition (positive coefficients, `f` in L^4).
pub fn benhariz_check(
    e: &HermiteExpansion,
    rho: &StationaryModel,
    r: f64,
    d: usize,
) -> Result<BenHarizReport> {
    if !(r > 1.0) {
        return Err(Error::Domain {
            name: "R",
            value: r,
            reason: "must exceed 1",
        });
    }
    let d = d.max(1);
    let mut terms = Vec::new();
    for q in d..=e.qmax() {
        let c = e.c(q);
        if c == 0.0 {
            terms.push(0.0);
            continue;
        }
        let (integral, _) = rho_power_integral(rho, q, true)?;
        let lg = c.abs().ln() - 0.5 * factorial(q).ln() + 0.5 * integral.ln() + q as f64 * r.ln();
        terms.push(lg.exp());
    }
    let nonzero: Vec<f64> = terms.iter().copied().filter(|t| *t > 0.0).collect();
    let partial = nonzero.iter().copied().collect::<KahanSum>().value();
    let ratio = if nonzero.len() >= 2 {
        Some(nonzero[nonzero.len() - 1] / nonzero[nonzero.len() - 2])
    } else {
        None
    };
    let verdict = match ratio {
        None => SeriesVerdict::Finite,
        Some(x) if x < 1.0 => SeriesVerdict::Converges,
        Some(_) => SeriesVerdict::Diverges,
    };
    let positive = (d..=e.qmax()).all(|q| e.c(q) >= 0.0);
    let n = 2 * e.qmax() + 16;
    let l4 = lp_norm_gaussian(&|x| e.eval(x), 4.0, n)?;
    Ok(BenHarizReport {
        r,
        bh1_terms: terms,
        bh1_partial_sum: partial,
        bh1_ratio: ratio,
        bh1_verdict: verdict,
        bh2_positive: positive,
        bh2_l4_norm: l4,
        bh2: positive && l4.is_finite(),
    })
}

/// Limit variance of the centered length process of fBm for `H < 3/4`,
/// with the series displayed in the literature for comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthSigma2 {
    pub hurst: f64,
    pub qmax: usize,
    pub value: f64,
    pub tail_bound: f64,
    /// `sum_{q=2}^{qmax} (q! (2q-1)^2)^{-1} int a_{2H}^q`.
    pub displayed_series: f64,
}

/// `sigma^2` of `|x| - sqrt(2/pi)` against the kernel `a_{2H}`, `d = 2`.
pub fn sigma2_length(h: f64, qmax: usize) -> Result<LengthSigma2> {
    if !(h > 0.0 && h < 0.75) {
        return Err(Error::Regime(format!(
            "the central length regime needs 0 < H < 3/4, got {h}"
        )));
    }
    let rho = StationaryModel::AAlpha { alpha: 2.0 * h };
    let e = abs_expansion(qmax.max(2))?.centered();
    let s = sigma2_central(&e, &rho, 2)?;
    let mut displayed = KahanSum::new();
    for q in 2..=qmax {
        let (i, _) = rho_power_integral(&rho, q, false)?;
        displayed.add(i / (factorial(q) * ((2 * q - 1) as f64).powi(2)));
    }
    Ok(LengthSigma2 {
        hurst: h,
        qmax,
        value: s.value,
        tail_bound: s.tail_bound,
        displayed_series: displayed.value(),
    })
}
