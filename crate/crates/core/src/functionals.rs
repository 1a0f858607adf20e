//! Integral functionals of sampled paths, evaluated by left Riemann sums with
//! a proportionally weighted partial cell at each endpoint.

use serde::{Deserialize, Serialize};

use crate::asymptotics::{classify_regime, Regime, RegimeReport, TIE_TOL};
use crate::error::{Error, Result};
use crate::hermite::HermiteExpansion;
use crate::models::{Model, SelfSimilarModel};
use crate::quadrature::KahanSum;
use crate::sampler::{apply_increment_scales, increment_scales, GridPath};

/// Grid step for functionals on the unit-lag scale.
pub const DEFAULT_UNIT_DELTA: f64 = 0.25;

/// Grid step for the length process at smoothing scale `eps`.
pub fn default_length_delta(eps: f64) -> f64 {
    eps / 8.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    Z,
    F,
    Length,
    LengthFluct,
}

impl std::fmt::Display for FunctionalKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FunctionalKind::Z => "Z",
            FunctionalKind::F => "F",
            FunctionalKind::Length => "length",
            FunctionalKind::LengthFluct => "length_fluct",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalResult {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub eps: f64,
    pub delta: f64,
    /// Factor multiplying the raw Riemann sum.
    pub normalization: f64,
    pub kind: FunctionalKind,
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::Precondition("no evaluation times".into()));
    }
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::Precondition("times must be finite and nonnegative".into()));
    }
    if times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Precondition("times must be strictly increasing".into()));
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            name: "eps",
            value: eps,
            reason: "must be positive and finite",
        })
    }
}

/// Splits `horizon / delta` into whole cells and a trailing fraction.
fn cells(horizon: f64, delta: f64) -> (usize, f64) {
    let x = horizon / delta;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.max(1.0) {
        (r as usize, 0.0)
    } else {
        (x.floor() as usize, x - x.floor())
    }
}

/// Number of grid values a left Riemann sum up to `horizon` reads.
pub(crate) fn points_needed(horizon: f64, delta: f64) -> usize {
    let (full, frac) = cells(horizon, delta);
    full + usize::from(frac > 0.0)
}

/// `delta * int_0^{h_k}` of the step function through `g` for each horizon.
fn riemann_sums(g: &[f64], delta: f64, horizons: &[f64]) -> Result<Vec<f64>> {
    let last = *horizons.last().unwrap_or(&0.0);
    if points_needed(last, delta) > g.len() {
        return Err(Error::Coverage {
            needed: last,
            len: g.len(),
            delta,
        });
    }
    let mut acc = KahanSum::new();
    let mut next = 0;
    let mut out = Vec::with_capacity(horizons.len());
    for &h in horizons {
        let (full, frac) = cells(h, delta);
        while next < full {
            acc.add(g[next]);
            next += 1;
        }
        let tail = if frac > 0.0 { frac * g[full] } else { 0.0 };
        out.push(delta * (acc.value() + tail));
    }
    Ok(out)
}

fn chaos_sums(
    y: &[f64],
    delta: f64,
    e: &HermiteExpansion,
    eps: f64,
    times: &[f64],
) -> Result<Vec<f64>> {
    check_eps(eps)?;
    check_times(times)?;
    let f = e.centered();
    let horizons: Vec<f64> = times.iter().map(|t| t / eps).collect();
    let n = points_needed(*horizons.last().unwrap(), delta).min(y.len());
    let g: Vec<f64> = y[..n].iter().map(|&x| f.eval(x)).collect();
    let scale = eps.sqrt();
    let mut v = riemann_sums(&g, delta, &horizons)?;
    v.iter_mut().for_each(|x| *x *= scale);
    Ok(v)
}

/// `Z_eps(t) = sqrt(eps) int_0^{t/eps} f(Y(s)) ds` for a stationary path;
/// `c_0` is dropped.
pub fn compute_z(y: &GridPath, e: &HermiteExpansion, eps: f64, times: &[f64]) -> Result<FunctionalResult> {
    Ok(FunctionalResult {
        values: chaos_sums(&y.values, y.delta, e, eps, times)?,
        times: times.to_vec(),
        eps,
        delta: y.delta,
        normalization: eps.sqrt(),
        kind: FunctionalKind::Z,
    })
}

/// Grid steps per unit of time, or an alignment error.
pub fn steps_per(lag: f64, delta: f64) -> Result<usize> {
    let k = (lag / delta).round();
    if k < 1.0 || ((lag / delta) - k).abs() > 1e-9 * k {
        return Err(Error::Alignment { eps: lag, delta });
    }
    Ok(k as usize)
}

/// `F_eps(t) = sqrt(eps) int_0^{t/eps} f(Y_1(u)) du` with `Y_1` the unit-lag
/// increments of `x` normalized by their exact standard deviations.
pub fn compute_f(
    m: &SelfSimilarModel,
    x: &GridPath,
    e: &HermiteExpansion,
    eps: f64,
    times: &[f64],
) -> Result<FunctionalResult> {
    check_eps(eps)?;
    check_times(times)?;
    let lag = steps_per(1.0, x.delta)?;
    let horizon = times.last().unwrap() / eps;
    let count = points_needed(horizon, x.delta);
    if x.len() < count + lag {
        return Err(Error::Coverage {
            needed: horizon + 1.0,
            len: x.len(),
            delta: x.delta,
        });
    }
    let scales = increment_scales(&Model::SelfSimilar(m.clone()), x.delta, lag, count)?;
    compute_f_with_scales(x, &scales, e, eps, times)
}

/// [`compute_f`] with unit-lag increment scales computed once per grid.
pub fn compute_f_with_scales(
    x: &GridPath,
    scales: &[f64],
    e: &HermiteExpansion,
    eps: f64,
    times: &[f64],
) -> Result<FunctionalResult> {
    let lag = steps_per(1.0, x.delta)?;
    if x.len() < scales.len() + lag {
        return Err(Error::Coverage {
            needed: (scales.len() + lag) as f64 * x.delta,
            len: x.len(),
            delta: x.delta,
        });
    }
    let y = apply_increment_scales(x, lag, scales);
    Ok(FunctionalResult {
        values: chaos_sums(&y.values, x.delta, e, eps, times)?,
        times: times.to_vec(),
        eps,
        delta: x.delta,
        normalization: eps.sqrt(),
        kind: FunctionalKind::F,
    })
}

/// `L(X^eps; [0,t]) = eps^{-1} int_0^t |X(u+eps) - X(u)| du`.
pub fn regularized_length(x: &GridPath, eps: f64, times: &[f64]) -> Result<FunctionalResult> {
    check_eps(eps)?;
    check_times(times)?;
    let lag = steps_per(eps, x.delta)?;
    let n = points_needed(*times.last().unwrap(), x.delta);
    if x.len() < n + lag {
        return Err(Error::Coverage {
            needed: times.last().unwrap() + eps,
            len: x.len(),
            delta: x.delta,
        });
    }
    let g: Vec<f64> = (0..n).map(|j| (x.values[j + lag] - x.values[j]).abs()).collect();
    let mut values = riemann_sums(&g, x.delta, times)?;
    values.iter_mut().for_each(|v| *v /= eps);
    Ok(FunctionalResult {
        times: times.to_vec(),
        values,
        eps,
        delta: x.delta,
        normalization: 1.0 / eps,
        kind: FunctionalKind::Length,
    })
}

/// Exact mean of the discretized length at each time, from the model's
/// increment variances: `E|N(0, s^2)| = s sqrt(2/pi)`.
pub fn length_mean(m: &SelfSimilarModel, eps: f64, delta: f64, times: &[f64]) -> Result<Vec<f64>> {
    check_eps(eps)?;
    check_times(times)?;
    let lag = steps_per(eps, delta)?;
    let n = points_needed(*times.last().unwrap(), delta);
    let scales = increment_scales(&Model::SelfSimilar(m.clone()), delta, lag, n)?;
    length_mean_with_scales(&scales, eps, delta, times)
}

fn length_mean_with_scales(scales: &[f64], eps: f64, delta: f64, times: &[f64]) -> Result<Vec<f64>> {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    let g: Vec<f64> = scales.iter().map(|s| k * s).collect();
    let mut v = riemann_sums(&g, delta, times)?;
    v.iter_mut().for_each(|x| *x /= eps);
    Ok(v)
}

/// Regime factor for the centered length: `eps^{1/2-beta}`, with an extra
/// `|log eps|^{-1/2}` on the boundary, or `eps^{beta-1}` past it.
pub fn length_scaling(m: &SelfSimilarModel, eps: f64, regime: &RegimeReport) -> Result<f64> {
    let expected = classify_regime(m.alpha(), 2, TIE_TOL)?;
    if regime.d != 2 || regime.regime != expected.regime {
        return Err(Error::Regime(format!(
            "length fluctuations of {} fall in the {} regime, not {} with d = {}",
            m.id(),
            expected.regime,
            regime.regime,
            regime.d
        )));
    }
    let beta = m.beta();
    Ok(match regime.regime {
        Regime::Central => eps.powf(0.5 - beta),
        Regime::LogCentral => eps.powf(0.5 - beta) / eps.ln().abs().sqrt(),
        Regime::Noncentral => eps.powf(beta - 1.0),
    })
}

/// Length centered by its exact mean and scaled by the regime factor.
pub fn length_fluctuation(
    m: &SelfSimilarModel,
    x: &GridPath,
    eps: f64,
    times: &[f64],
    regime: &RegimeReport,
) -> Result<FunctionalResult> {
    let mean = length_mean(m, eps, x.delta, times)?;
    let scale = length_scaling(m, eps, regime)?;
    length_fluctuation_with(x, eps, times, &mean, scale)
}

/// [`length_fluctuation`] with precomputed means and scale.
pub fn length_fluctuation_with(
    x: &GridPath,
    eps: f64,
    times: &[f64],
    mean: &[f64],
    scale: f64,
) -> Result<FunctionalResult> {
    let l = regularized_length(x, eps, times)?;
    let values = l.values.iter().zip(mean).map(|(v, mu)| scale * (v - mu)).collect();
    Ok(FunctionalResult {
        times: times.to_vec(),
        values,
        eps,
        delta: x.delta,
        normalization: scale / eps,
        kind: FunctionalKind::LengthFluct,
    })
}

/// Per-grid data for [`length_fluctuation_with`].
pub fn length_plan(
    m: &SelfSimilarModel,
    eps: f64,
    delta: f64,
    times: &[f64],
    regime: &RegimeReport,
) -> Result<(Vec<f64>, f64)> {
    Ok((length_mean(m, eps, delta, times)?, length_scaling(m, eps, regime)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::NamedFunction;
    use crate::models::StationaryModel;
    use crate::sampler::{normalized_increments, plan_circulant, sample_fbm, sample_stationary, PathSampler, DEFAULT_TOL_PSD};
    use proptest::prelude::*;

    fn path(values: Vec<f64>, delta: f64) -> GridPath {
        GridPath {
            delta,
            values,
            model_id: "test".into(),
            seed: 0,
            replicate: 0,
        }
    }

    #[test]
    fn riemann_sums_weight_the_partial_cell() {
        let g = [1.0, 2.0, 3.0, 4.0];
        let v = riemann_sums(&g, 0.5, &[0.0, 0.5, 1.25, 2.0]).unwrap();
        assert_eq!(v, vec![0.0, 0.5, 0.5 * (1.0 + 2.0 + 0.5 * 3.0), 5.0]);
        assert!(matches!(riemann_sums(&g, 0.5, &[2.1]), Err(Error::Coverage { .. })));
    }

    #[test]
    fn zero_expansion_and_zero_time() {
        let y = path(vec![0.3, -1.0, 2.0, 0.7, 0.1], 1.0);
        let z = compute_z(&y, &HermiteExpansion::new(vec![0.0; 4]), 0.25, &[0.5, 1.0]).unwrap();
        assert_eq!(z.values, vec![0.0, 0.0]);
        let z = compute_z(&y, &HermiteExpansion::monomial(2, 1.0), 0.25, &[0.0, 1.0]).unwrap();
        assert_eq!(z.values[0], 0.0);
        // sqrt(1/4) * sum of H_2 over four cells
        let want = 0.5 * [0.3f64, -1.0, 2.0, 0.7].iter().map(|x| x * x - 1.0).sum::<f64>();
        assert!((z.values[1] - want).abs() < 1e-15);
    }

    #[test]
    fn c0_is_ignored() {
        let y = path(vec![0.3, -1.0, 2.0], 1.0);
        let a = compute_z(&y, &HermiteExpansion::new(vec![5.0, 1.0]), 0.5, &[1.0]).unwrap();
        let b = compute_z(&y, &HermiteExpansion::new(vec![0.0, 1.0]), 0.5, &[1.0]).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn additivity_over_adjacent_intervals() {
        let y = path((0..40).map(|k| (k as f64 * 0.37).sin()).collect(), 0.25);
        let e = HermiteExpansion::new(vec![0.0, 0.5, 1.0, -0.2]);
        let z = compute_z(&y, &e, 0.1, &[0.33, 0.77, 0.95]).unwrap();
        let z2 = compute_z(&y, &e, 0.1, &[0.77]).unwrap();
        assert!((z.values[1] - z2.values[0]).abs() < 1e-15);
    }

    #[test]
    fn coverage_and_alignment_errors() {
        let y = path(vec![0.0; 10], 0.5);
        let e = HermiteExpansion::monomial(1, 1.0);
        assert!(matches!(compute_z(&y, &e, 0.1, &[1.0]), Err(Error::Coverage { .. })));
        assert!(matches!(regularized_length(&y, 0.3, &[1.0]), Err(Error::Alignment { .. })));
        assert!(compute_z(&y, &e, 0.1, &[1.0, 0.5]).is_err());
    }

    #[test]
    fn length_of_zero_path_and_monotonicity() {
        let z = path(vec![0.0; 20], 0.125);
        let l = regularized_length(&z, 0.25, &[0.5, 1.0]).unwrap();
        assert_eq!(l.values, vec![0.0, 0.0]);
        let b = sample_fbm(0.55, 200, 1.0 / 128.0, 3, 1).unwrap();
        let times: Vec<f64> = (1..=20).map(|k| k as f64 * 0.07).collect();
        let l = regularized_length(&b, 1.0 / 16.0, &times).unwrap();
        assert!(l.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn fbm_length_mean_is_closed_form() {
        let m = SelfSimilarModel::fbm(0.5).unwrap();
        let eps = 0.01;
        let mu = length_mean(&m, eps, eps / 8.0, &[1.0]).unwrap()[0];
        let want = eps.powf(-0.5) * (2.0 / std::f64::consts::PI).sqrt();
        assert!((mu / want - 1.0).abs() < 1e-12, "{mu} vs {want}");
        assert!((want - 7.978_845_608_028_654).abs() < 1e-12);
    }

    #[test]
    fn length_scaling_identity() {
        // direct length equals eps^{H-1} times the sum of |Y_eps|
        let h = 0.65;
        let eps = 1.0 / 32.0;
        let delta = eps / 8.0;
        let model = Model::SelfSimilar(SelfSimilarModel::fbm(h).unwrap());
        let b = sample_fbm(h, 8 * 32 + 9, delta, 5, 0).unwrap();
        let y = normalized_increments(&b, 8, &model).unwrap();
        let direct = regularized_length(&b, eps, &[1.0]).unwrap().values[0];
        let via_y = eps.powf(h - 1.0) * delta * y.values[..256].iter().map(|v| v.abs()).sum::<f64>();
        assert!((direct - via_y).abs() <= 1e-10 * direct);
    }

    #[test]
    fn length_regime_mismatch() {
        let m = SelfSimilarModel::fbm(0.8).unwrap();
        let wrong = classify_regime(1.2, 2, TIE_TOL).unwrap();
        assert!(matches!(length_scaling(&m, 0.01, &wrong), Err(Error::Regime(_))));
        let right = classify_regime(1.6, 2, TIE_TOL).unwrap();
        assert!((length_scaling(&m, 0.01, &right).unwrap() - 0.01f64.powf(-0.2)).abs() < 1e-12);
    }

    #[test]
    fn fbm_f_matches_z_on_unit_increments() {
        // for fBm, Y_1 is fGn; both routes agree pathwise given the same noise
        let model = SelfSimilarModel::fbm(0.7).unwrap();
        let eps = 1.0 / 16.0;
        let b = sample_fbm(0.7, 16 * 4 + 5, 0.25, 9, 0).unwrap();
        let e = NamedFunction::lookup("h2").unwrap().project(4).unwrap();
        let f = compute_f(&model, &b, &e, eps, &[0.5, 1.0]).unwrap();
        let inc: Vec<f64> = (0..b.len() - 4).map(|j| b.values[j + 4] - b.values[j]).collect();
        let z = compute_z(&path(inc, 0.25), &e, eps, &[0.5, 1.0]).unwrap();
        for (a, b) in f.values.iter().zip(&z.values) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(f.values.len(), 2);
    }

    #[test]
    fn fbm_f_and_z_agree_in_law() {
        let eps = 1.0 / 32.0;
        let model = SelfSimilarModel::fbm(0.6).unwrap();
        let sampler = PathSampler::new(&Model::SelfSimilar(model.clone()), 32 * 4 + 5, 0.25).unwrap();
        let plan = plan_circulant(&StationaryModel::Fgn { h: 0.6 }, 32 * 4 + 1, 0.25, DEFAULT_TOL_PSD).unwrap();
        let e = HermiteExpansion::monomial(2, 1.0);
        let r = 4000;
        let fs: Vec<f64> = (0..r)
            .map(|k| compute_f(&model, &sampler.sample(1, k).unwrap(), &e, eps, &[1.0]).unwrap().values[0])
            .collect();
        let zs: Vec<f64> = (0..r)
            .map(|k| compute_z(&sample_stationary(&plan, 2, k).unwrap(), &e, eps, &[1.0]).unwrap().values[0])
            .collect();
        let var = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
        let se = |v: &[f64]| {
            let m2 = var(v);
            (v.iter().map(|x| (x * x - m2).powi(2)).sum::<f64>() / (v.len() as f64).powi(2)).sqrt()
        };
        let (a, b) = (var(&fs), var(&zs));
        assert!((a - b).abs() < 3.0 * (se(&fs).powi(2) + se(&zs).powi(2)).sqrt(), "{a} vs {b}");
    }

    #[test]
    fn centered_abs_length_fluctuation_has_mean_zero() {
        let m = SelfSimilarModel::fbm(0.55).unwrap();
        let eps = 1.0 / 64.0;
        let delta = default_length_delta(eps);
        let regime = classify_regime(1.1, 2, TIE_TOL).unwrap();
        let (mean, scale) = length_plan(&m, eps, delta, &[1.0], &regime).unwrap();
        let n = 8 * 64 + 9;
        let xs: Vec<f64> = (0..2000)
            .map(|r| {
                let b = sample_fbm(0.55, n, delta, 4, r).unwrap();
                length_fluctuation_with(&b, eps, &[1.0], &mean, scale).unwrap().values[0]
            })
            .collect();
        let mu = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
        assert!(mu.abs() < 3.0 * sd / (xs.len() as f64).sqrt(), "{mu} sd {sd}");
    }

    proptest! {
        #[test]
        fn z_is_linear_in_the_expansion(
            a in proptest::collection::vec(-2.0f64..2.0, 6),
            b in proptest::collection::vec(-2.0f64..2.0, 6),
            seed in 0u64..1000,
        ) {
            let plan = plan_circulant(&StationaryModel::Fgn { h: 0.6 }, 129, 0.25, DEFAULT_TOL_PSD).unwrap();
            let y = sample_stationary(&plan, seed, 0).unwrap();
            let (ea, eb) = (HermiteExpansion::new(a), HermiteExpansion::new(b));
            let times = [0.3, 0.6, 1.0];
            let za = compute_z(&y, &ea, 1.0 / 32.0, &times).unwrap();
            let zb = compute_z(&y, &eb, 1.0 / 32.0, &times).unwrap();
            let zab = compute_z(&y, &ea.add(&eb), 1.0 / 32.0, &times).unwrap();
            for k in 0..3 {
                let scale = 1.0 + za.values[k].abs() + zb.values[k].abs();
                prop_assert!((zab.values[k] - za.values[k] - zb.values[k]).abs() <= 1e-12 * scale);
            }
        }

        #[test]
        fn length_is_nondecreasing(seed in 0u64..1000, h in 0.1f64..0.95) {
            let b = sample_fbm(h, 80, 1.0 / 64.0, seed, 0).unwrap();
            let times: Vec<f64> = (1..=9).map(|k| k as f64 / 8.0).collect();
            let l = regularized_length(&b, 1.0 / 16.0, &times).unwrap();
            prop_assert!(l.values.iter().all(|v| *v >= 0.0));
            prop_assert!(l.values.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
