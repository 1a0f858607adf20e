//! Monte Carlo ensembles of path functionals and the statistics run on them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asymptotics::{classify_regime, normalization, Regime, RegimeReport, TIE_TOL};
use crate::error::{Error, Result};
use crate::functionals::{
    compute_f_with_scales, compute_z, length_fluctuation_with, length_plan, points_needed,
    regularized_length, steps_per, FunctionalKind,
};
use crate::hermite::{factorial, HermiteExpansion};
use crate::models::{Model, SelfSimilarModel, StationaryModel};
use crate::quadrature::{kahan_sum, linear_fit, KahanSum};
use crate::rng::normal_cdf;
use crate::sampler::{increment_scales, PathSampler};

/// Grid guard for lag-sum variance evaluation.
pub const LAG_SUM_MAX: usize = 1 << 22;
/// Grid guard for dense pairwise variance evaluation.
pub const DENSE_MAX: usize = 1 << 15;

/// Everything that determines an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub model: Model,
    pub expansion: HermiteExpansion,
    pub functional: FunctionalKind,
    pub eps: f64,
    pub delta: f64,
    pub times: Vec<f64>,
    pub replicates: u64,
    pub seed: u64,
    /// Expected regime; a mismatch with the model is an error.
    #[serde(default)]
    pub regime: Option<Regime>,
}

impl EnsembleConfig {
    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Regime of the configured functional, checked against the override.
    pub fn resolve_regime(&self) -> Result<RegimeReport> {
        let d = match self.functional {
            FunctionalKind::Length | FunctionalKind::LengthFluct => 2,
            FunctionalKind::Z | FunctionalKind::F => self.expansion.rank().max(1),
        };
        let report = match self.model.alpha() {
            Some(alpha) => classify_regime(alpha, d, TIE_TOL)?,
            // summable correlations: always the Brownian limit
            None => RegimeReport {
                alpha: 0.0,
                d,
                regime: Regime::Central,
                normalization_exponent: 0.0,
                log_normalization: false,
                limit: crate::asymptotics::LimitDescriptor::BrownianMotion,
            },
        };
        if let Some(r) = self.regime {
            if r != report.regime {
                return Err(Error::Regime(format!(
                    "{} with d = {d} is in the {} regime, configuration expects {r}",
                    self.model.id(),
                    report.regime
                )));
            }
        }
        Ok(report)
    }

    fn self_similar(&self) -> Result<&SelfSimilarModel> {
        match &self.model {
            Model::SelfSimilar(m) => Ok(m),
            Model::Stationary(_) => Err(Error::Config(format!(
                "functional {} needs a self-similar model, got {}",
                self.functional,
                self.model.id()
            ))),
        }
    }

    /// Number of grid points the sampler must produce.
    pub fn grid_len(&self) -> Result<usize> {
        let tmax = *self
            .times
            .last()
            .ok_or_else(|| Error::Config("no evaluation times".into()))?;
        let n = match self.functional {
            FunctionalKind::Z => {
                if let Model::SelfSimilar(_) = self.model {
                    return Err(Error::Config(format!(
                        "functional Z needs a stationary model, got {}",
                        self.model.id()
                    )));
                }
                points_needed(tmax / self.eps, self.delta)
            }
            FunctionalKind::F => {
                self.self_similar()?;
                points_needed(tmax / self.eps, self.delta) + steps_per(1.0, self.delta)?
            }
            FunctionalKind::Length | FunctionalKind::LengthFluct => {
                self.self_similar()?;
                points_needed(tmax, self.delta) + steps_per(self.eps, self.delta)?
            }
        };
        Ok(n.max(2))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.replicates < 2 {
            return Err(Error::Config("an ensemble needs at least 2 replicates".into()));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) || !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Config("eps and delta must be positive".into()));
        }
        if self.times.is_empty()
            || self.times.iter().any(|t| !(t.is_finite() && *t >= 0.0))
            || self.times.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::Config("times must be nonnegative and strictly increasing".into()));
        }
        self.grid_len()?;
        self.resolve_regime()?;
        Ok(())
    }
}

/// `values[r][k]` is replicate `r` of the functional at `times[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationEnsemble {
    pub config_hash: String,
    pub kind: FunctionalKind,
    pub times: Vec<f64>,
    pub eps: f64,
    pub delta: f64,
    pub replicates: usize,
    pub values: Vec<Vec<f64>>,
    /// Regime factor applied on top of the functional's own scaling.
    pub normalization: f64,
    pub regime: RegimeReport,
}

impl FluctuationEnsemble {
    /// Wraps externally produced samples.
    pub fn from_values(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() < 2 || values.iter().any(|r| r.len() != times.len()) {
            return Err(Error::Precondition("need at least 2 rows of matching length".into()));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("ensemble entries must be finite".into()));
        }
        Ok(FluctuationEnsemble {
            config_hash: String::new(),
            kind: FunctionalKind::Z,
            replicates: values.len(),
            times,
            eps: f64::NAN,
            delta: f64::NAN,
            values,
            normalization: 1.0,
            regime: classify_regime(1.0, 2, TIE_TOL)?,
        })
    }

    /// Column `k` in replicate order.
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[k]).collect()
    }
}

/// Runs `config.replicates` independent replicates, in parallel, collected in
/// replicate order.
pub fn run_ensemble(config: &EnsembleConfig) -> Result<FluctuationEnsemble> {
    config.validate()?;
    let regime = config.resolve_regime()?;
    let n = config.grid_len()?;
    let sampler = PathSampler::new(&config.model, n, config.delta)?;
    let eps = config.eps;
    let times = &config.times;
    let mut norm = 1.0;
    let per_replicate: Box<dyn Fn(u64) -> Result<Vec<f64>> + Sync> = match config.functional {
        FunctionalKind::Z => {
            if config.model.alpha().is_some() {
                norm = normalization(regime.alpha, regime.d, eps)?;
            }
            let e = config.expansion.clone();
            let sampler = &sampler;
            Box::new(move |r| Ok(compute_z(&sampler.sample(config.seed, r)?, &e, eps, times)?.values))
        }
        FunctionalKind::F => {
            norm = normalization(regime.alpha, regime.d, eps)?;
            let lag = steps_per(1.0, config.delta)?;
            let count = n - lag;
            let scales = increment_scales(&config.model, config.delta, lag, count)?;
            let e = config.expansion.clone();
            let sampler = &sampler;
            Box::new(move |r| {
                Ok(compute_f_with_scales(&sampler.sample(config.seed, r)?, &scales, &e, eps, times)?.values)
            })
        }
        FunctionalKind::Length => {
            let sampler = &sampler;
            Box::new(move |r| Ok(regularized_length(&sampler.sample(config.seed, r)?, eps, times)?.values))
        }
        FunctionalKind::LengthFluct => {
            let m = config.self_similar()?;
            let (mean, scale) = length_plan(m, eps, config.delta, times, &regime)?;
            let sampler = &sampler;
            Box::new(move |r| {
                Ok(length_fluctuation_with(&sampler.sample(config.seed, r)?, eps, times, &mean, scale)?.values)
            })
        }
    };
    let rows: Vec<Result<Vec<f64>>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            per_replicate(r)
                .map(|v| v.into_iter().map(|x| x * norm).collect())
                .map_err(|e| Error::Replicate {
                    replicate: r,
                    source: Box::new(e),
                })
        })
        .collect();
    let values = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(FluctuationEnsemble {
        config_hash: config.hash(),
        kind: config.functional,
        times: times.clone(),
        eps,
        delta: config.delta,
        replicates: values.len(),
        values,
        normalization: norm,
        regime,
    })
}

fn mean(xs: &[f64]) -> f64 {
    kahan_sum(xs.iter().copied()) / xs.len() as f64
}

/// Sample mean of column `k` with its standard error.
pub fn empirical_mean(ens: &FluctuationEnsemble, k: usize) -> (f64, f64) {
    let x = ens.column(k);
    let (v, _) = sample_cov(&x, &x);
    (mean(&x), (v / x.len() as f64).sqrt())
}

/// Unbiased covariance of two equally long samples and its jackknife
/// standard error.
pub fn sample_cov(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len();
    let (mx, my) = (mean(x), mean(y));
    let prods: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    let s = kahan_sum(prods.iter().copied());
    let est = s / (n - 1) as f64;
    if n < 3 {
        return (est, f64::NAN);
    }
    let nf = n as f64;
    let loo: Vec<f64> = prods.iter().map(|p| (s - p * nf / (nf - 1.0)) / (nf - 2.0)).collect();
    let m = mean(&loo);
    let ss = kahan_sum(loo.iter().map(|t| (t - m) * (t - m)));
    (est, ((nf - 1.0) / nf * ss).sqrt())
}

/// Covariance of columns `i` and `j`, with jackknife standard error.
pub fn empirical_cov(ens: &FluctuationEnsemble, i: usize, j: usize) -> (f64, f64) {
    sample_cov(&ens.column(i), &ens.column(j))
}

/// Full covariance matrix of the ensemble columns.
pub fn cov_matrix(ens: &FluctuationEnsemble) -> Vec<Vec<f64>> {
    let p = ens.times.len();
    (0..p).map(|i| (0..p).map(|j| empirical_cov(ens, i, j).0).collect()).collect()
}

/// `E|X|^p` of column `k` about zero, with the standard error of the mean.
pub fn raw_moment(ens: &FluctuationEnsemble, k: usize, p: f64) -> (f64, f64) {
    let m: Vec<f64> = ens.column(k).iter().map(|x| x.abs().powf(p)).collect();
    let (v, _) = sample_cov(&m, &m);
    (mean(&m), (v / m.len() as f64).sqrt())
}

/// `Q(x) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 x^2)`, 20 terms.
pub fn kolmogorov_survival(x: f64) -> f64 {
    // the truncated series has not converged below this point, where Q > 0.99999
    if x < 0.27 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=20 {
        let t = (-2.0 * (k * k) as f64 * x * x).exp();
        s += if k % 2 == 1 { t } else { -t };
    }
    (2.0 * s).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample Kolmogorov test against `N(mean, var)`.
pub fn ks_normal_test(samples: &[f64], mean: f64, var: f64) -> Result<KsResult> {
    if !(var > 0.0 && var.is_finite()) {
        return Err(Error::Domain {
            name: "var",
            value: var,
            reason: "must be positive",
        });
    }
    if samples.len() < 20 {
        return Err(Error::Precondition(format!(
            "Kolmogorov test needs at least 20 samples, got {}",
            samples.len()
        )));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let sd = var.sqrt();
    let d = xs
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let f = normal_cdf((x - mean) / sd);
            (f - k as f64 / n).max((k + 1) as f64 / n - f)
        })
        .fold(0.0f64, f64::max);
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival(n.sqrt() * d),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentFit {
    pub p: f64,
    pub kappa: f64,
    pub intercept: f64,
    pub gaps: Vec<f64>,
    pub moments: Vec<f64>,
}

/// Slope of `log E|D|^p` against `log gap` over samples of increments `D`
/// taken at each gap.
pub fn moment_scaling(gaps: &[f64], increments: &[Vec<f64>], p: f64) -> Result<MomentFit> {
    if gaps.len() != increments.len() {
        return Err(Error::Precondition("one sample per gap".into()));
    }
    if gaps.len() < 4 {
        return Err(Error::Fit(format!("need at least 4 gaps, got {}", gaps.len())));
    }
    if p != 2.0 && p != 4.0 {
        return Err(Error::Precondition(format!("moment order must be 2 or 4, got {p}")));
    }
    let moments: Vec<f64> = increments
        .iter()
        .map(|d| mean(&d.iter().map(|x| x.abs().powf(p)).collect::<Vec<_>>()))
        .collect();
    if gaps.iter().any(|g| !(*g > 0.0)) || moments.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
        return Err(Error::Fit("degenerate gaps or vanishing moments".into()));
    }
    let lx: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
    let ly: Vec<f64> = moments.iter().map(|m| m.ln()).collect();
    let (kappa, intercept) =
        linear_fit(&lx, &ly).ok_or_else(|| Error::Fit("gaps do not span a range".into()))?;
    Ok(MomentFit {
        p,
        kappa,
        intercept,
        gaps: gaps.to_vec(),
        moments,
    })
}

/// [`moment_scaling`] over column pairs `(i, j)` of an ensemble, pooling
/// pairs with equal gaps.
pub fn moment_scaling_pairs(ens: &FluctuationEnsemble, pairs: &[(usize, usize)], p: f64) -> Result<MomentFit> {
    let mut groups: Vec<(f64, Vec<f64>)> = Vec::new();
    for &(i, j) in pairs {
        let gap = (ens.times[j] - ens.times[i]).abs();
        let inc = ens.values.iter().map(|r| r[j] - r[i]);
        match groups.iter_mut().find(|(g, _)| (g - gap).abs() <= 1e-12 * gap) {
            Some((_, v)) => v.extend(inc),
            None => groups.push((gap, inc.collect())),
        }
    }
    let (gaps, incs): (Vec<f64>, Vec<Vec<f64>>) = groups.into_iter().unzip();
    moment_scaling(&gaps, &incs, p)
}

/// Dyadic evaluation times `t0 + k 2^{-levels}` and the pairs realising the
/// gaps `2^{-j}`, `j = 1..=levels`, from the left endpoint.
pub fn dyadic_design(t0: f64, levels: u32) -> (Vec<f64>, Vec<(usize, usize)>) {
    let n = 1usize << levels;
    let times: Vec<f64> = (0..=n).map(|k| t0 + k as f64 / n as f64).collect();
    let pairs = (1..=levels).map(|j| (0, n >> j)).collect();
    (times, pairs)
}

/// Correlation of the sampled process at two grid times.
pub enum Correlation<'a> {
    /// Depends on the lag only.
    Stationary(Box<dyn Fn(f64) -> Result<f64> + Sync + 'a>),
    Pairwise(Box<dyn Fn(f64, f64) -> Result<f64> + Sync + 'a>),
}

impl<'a> Correlation<'a> {
    pub fn of_stationary(rho: &'a StationaryModel) -> Self {
        Correlation::Stationary(Box::new(move |h| rho.rho(h)))
    }

    /// Correlation of the exactly normalized unit-lag increments.
    pub fn of_unit_increments(m: &'a SelfSimilarModel) -> Self {
        match m {
            SelfSimilarModel::Fbm { h } => {
                let a = 2.0 * h;
                Correlation::Stationary(Box::new(move |lag| Ok(crate::models::a_alpha(a, lag))))
            }
            _ => Correlation::Pairwise(Box::new(move |s, t| m.increment_corr(s, t))),
        }
    }

    /// Correlation of the process integrated by `Z` (stationary) or `F`.
    pub fn for_model(model: &'a Model) -> Self {
        match model {
            Model::Stationary(s) => Correlation::of_stationary(s),
            Model::SelfSimilar(m) => Correlation::of_unit_increments(m),
        }
    }
}

/// Exact variance of `sqrt(eps) delta sum_j w_j f(Y(s_j))` over the grid
/// covering `[0, t/eps]`, up to truncation of the expansion.
pub fn discretized_variance(
    e: &HermiteExpansion,
    corr: &Correlation<'_>,
    eps: f64,
    delta: f64,
    t: f64,
) -> Result<f64> {
    if !(eps > 0.0 && delta > 0.0 && t >= 0.0) {
        return Err(Error::Precondition("eps, delta positive and t nonnegative".into()));
    }
    let x = t / eps / delta;
    let r = x.round();
    let (full, frac) = if (x - r).abs() <= 1e-9 * r.max(1.0) {
        (r as usize, 0.0)
    } else {
        (x.floor() as usize, x - x.floor())
    };
    let n = full + usize::from(frac > 0.0);
    let w: Vec<f64> = (0..=e.qmax()).map(|q| if q == 0 { 0.0 } else { e.c(q).powi(2) * factorial(q) }).collect();
    if n == 0 || w.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    let kernel = |r: f64| -> f64 {
        let mut acc = 0.0;
        let mut pw = 1.0;
        for wq in &w[1..] {
            pw *= r;
            acc += wq * pw;
        }
        acc
    };
    let weight = |j: usize| if j == full { frac } else { 1.0 };
    let total = match corr {
        Correlation::Stationary(rho) => {
            if n > LAG_SUM_MAX {
                return Err(Error::Size {
                    size: n,
                    limit: LAG_SUM_MAX,
                });
            }
            let g: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|l| rho(l as f64 * delta).map(kernel))
                .collect::<Result<_>>()?;
            // full cells: n g(0) + 2 sum (n - l) g(l); then the partial cell
            let mut s = KahanSum::new();
            s.add(full as f64 * g[0]);
            for (l, gl) in g.iter().enumerate().take(full).skip(1) {
                s.add(2.0 * (full - l) as f64 * gl);
            }
            if frac > 0.0 {
                for j in 0..full {
                    s.add(2.0 * frac * g[full - j]);
                }
                s.add(frac * frac * g[0]);
            }
            s.value()
        }
        Correlation::Pairwise(rho) => {
            if n > DENSE_MAX {
                return Err(Error::Size {
                    size: n,
                    limit: DENSE_MAX,
                });
            }
            let rows: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|j| -> Result<f64> {
                    let sj = j as f64 * delta;
                    let mut s = KahanSum::new();
                    s.add(weight(j) * weight(j) * kernel(1.0));
                    for k in 0..j {
                        s.add(2.0 * weight(j) * weight(k) * kernel(rho(sj, k as f64 * delta)?));
                    }
                    Ok(s.value())
                })
                .collect::<Result<_>>()?;
            kahan_sum(rows)
        }
    };
    Ok(eps * delta * delta * total)
}
