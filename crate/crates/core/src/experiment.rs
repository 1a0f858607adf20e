//! Experiment files: one JSON configuration in, one CSV of ensemble values
//! and one JSON summary out.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::asymptotics::{
    kd_covariance, log_regime_constants, sigma2_central, sigma2_length, Regime, RegimeReport,
};
use crate::error::{Error, Result};
use crate::functionals::{default_length_delta, FunctionalKind, DEFAULT_UNIT_DELTA};
use crate::hermite::{abs_expansion, HermiteExpansion, NamedFunction};
use crate::mcstats::{
    discretized_variance, empirical_cov, empirical_mean, ks_normal_test, raw_moment, run_ensemble,
    Correlation, EnsembleConfig, FluctuationEnsemble,
};
use crate::models::{Model, SelfSimilarModel, StationaryModel};

/// Version of the summary layout; bumped on incompatible changes.
pub const SCHEMA_VERSION: &str = "1.0.0";

/// Truncation used for the length-process variance series.
const LENGTH_QMAX: usize = 40;

/// A model given either as `"fbm:0.6"` or as a tagged object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Text(String),
    Full(Model),
}

impl ModelSpec {
    pub fn resolve(&self) -> Result<Model> {
        let m = match self {
            ModelSpec::Text(s) => s.parse()?,
            ModelSpec::Full(m) => m.clone(),
        };
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionSpec {
    /// Named function with a known expansion.
    Builtin(String),
    /// Coefficients `c_0, c_1, ...` given directly.
    HermiteCoeffs(Vec<f64>),
    /// Named function projected by quadrature.
    Pointwise(String),
}

impl FunctionSpec {
    pub fn expansion(&self, qmax: usize) -> Result<HermiteExpansion> {
        let lookup = |name: &str| {
            NamedFunction::lookup(name).ok_or_else(|| {
                Error::Config(format!(
                    "unknown function {name:?}; known: {}",
                    NamedFunction::names().collect::<Vec<_>>().join(", ")
                ))
            })
        };
        match self {
            FunctionSpec::Builtin(name) => match name.as_str() {
                "abs" => abs_expansion(qmax),
                "abs_centered" => Ok(abs_expansion(qmax)?.centered()),
                other => lookup(other)?.project(qmax),
            },
            FunctionSpec::HermiteCoeffs(c) => {
                if c.is_empty() || c.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config("coefficients must be finite and nonempty".into()));
                }
                Ok(HermiteExpansion::new(c.clone()))
            }
            FunctionSpec::Pointwise(name) => lookup(name)?.project(qmax),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub summary: Option<PathBuf>,
}

fn default_qmax() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub function: FunctionSpec,
    #[serde(default = "default_qmax")]
    pub qmax: usize,
    /// Defaults to `z` for stationary models and `f` otherwise.
    #[serde(default)]
    pub functional: Option<FunctionalKind>,
    /// Strictly decreasing.
    pub eps: Vec<f64>,
    /// Defaults to 1/4 for `z`/`f` and `eps/8` for the length kinds.
    #[serde(default)]
    pub delta: Option<f64>,
    /// Strictly increasing.
    pub times: Vec<f64>,
    pub replicates: u64,
    pub seed: u64,
    #[serde(default)]
    pub output: OutputPaths,
    #[serde(default)]
    pub regime: Option<Regime>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps.is_empty() || self.eps.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            return Err(Error::Config("eps values must lie in (0, 1)".into()));
        }
        if self.eps.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::Config("eps must be strictly decreasing".into()));
        }
        if self.times.is_empty() || self.times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("times must be strictly increasing".into()));
        }
        if self.replicates < 1 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        self.model.resolve()?;
        self.function.expansion(self.qmax)?;
        Ok(())
    }

    /// SHA-256 over every field except output locations.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut v {
            map.remove("output");
        }
        let bytes = serde_json::to_vec(&v).expect("value serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn functional_kind(&self, model: &Model) -> FunctionalKind {
        self.functional.unwrap_or(match model {
            Model::Stationary(_) => FunctionalKind::Z,
            Model::SelfSimilar(_) => FunctionalKind::F,
        })
    }

    /// One ensemble configuration per `eps`.
    pub fn ensembles(&self) -> Result<Vec<EnsembleConfig>> {
        self.validate()?;
        let model = self.model.resolve()?;
        let expansion = self.function.expansion(self.qmax)?;
        let kind = self.functional_kind(&model);
        Ok(self
            .eps
            .iter()
            .map(|&eps| EnsembleConfig {
                model: model.clone(),
                expansion: expansion.clone(),
                functional: kind,
                eps,
                delta: self.delta.unwrap_or(match kind {
                    FunctionalKind::Z | FunctionalKind::F => DEFAULT_UNIT_DELTA,
                    FunctionalKind::Length | FunctionalKind::LengthFluct => default_length_delta(eps),
                }),
                times: self.times.clone(),
                replicates: self.replicates,
                seed: self.seed,
                regime: self.regime,
            })
            .collect())
    }
}

/// Limit quantities for the configured functional. Fields that do not apply
/// or could not be computed are `None`, with the reason in `notes`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TheoryBlock {
    pub regime: Option<RegimeReport>,
    /// Central-regime `sigma^2`; the limit covariance is `sigma^2 min(s,t)`.
    pub sigma2: Option<f64>,
    pub sigma2_tail_bound: Option<f64>,
    /// Limit second moment at each time for the noncentral regime.
    pub kd_second_moment: Option<Vec<f64>>,
    pub log_constants: Option<Value>,
    pub notes: Vec<String>,
}

/// Kernel `a_alpha` of the unit-lag increments of a self-similar model.
fn increment_kernel(m: &SelfSimilarModel) -> StationaryModel {
    StationaryModel::AAlpha { alpha: m.alpha() }
}

pub fn theory_block(model: &Model, e: &HermiteExpansion, kind: FunctionalKind, times: &[f64], regime: &RegimeReport) -> TheoryBlock {
    let mut t = TheoryBlock {
        regime: Some(regime.clone()),
        ..TheoryBlock::default()
    };
    let d = regime.d;
    match (kind, regime.regime) {
        (FunctionalKind::Z | FunctionalKind::F, Regime::Central) => {
            let rho = match model {
                Model::Stationary(s) => s.clone(),
                Model::SelfSimilar(m) => increment_kernel(m),
            };
            match sigma2_central(e, &rho, d) {
                Ok(s) => {
                    t.sigma2 = Some(s.value);
                    t.sigma2_tail_bound = Some(s.tail_bound);
                }
                Err(err) => t.notes.push(format!("sigma2: {err}")),
            }
        }
        (FunctionalKind::Z | FunctionalKind::F, Regime::LogCentral) => {
            let beta = match model {
                Model::SelfSimilar(m) => m.beta(),
                Model::Stationary(_) => regime.alpha / 2.0,
            };
            let k = match model {
                Model::SelfSimilar(SelfSimilarModel::Bifbm { k, .. }) => Some(*k),
                _ => None,
            };
            match log_regime_constants(e.c(d), d, regime.alpha, beta, k) {
                Ok(c) => t.log_constants = Some(serde_json::to_value(c).expect("serializes")),
                Err(err) => t.notes.push(format!("log constants: {err}")),
            }
        }
        (FunctionalKind::F, Regime::Noncentral) => {
            if let Model::SelfSimilar(m) = model {
                let c = e.c(d);
                let ks: Result<Vec<f64>> = times.iter().map(|&s| Ok(c * c * kd_covariance(m, d, s, s)?)).collect();
                match ks {
                    Ok(v) => t.kd_second_moment = Some(v),
                    Err(err) => t.notes.push(format!("K_d: {err}")),
                }
            }
        }
        (FunctionalKind::Z, Regime::Noncentral) => {
            t.notes.push("noncentral limit covariance is only computed for self-similar models".into());
        }
        (FunctionalKind::LengthFluct, Regime::Central) => {
            if let Model::SelfSimilar(m) = model {
                match sigma2_length(m.beta(), LENGTH_QMAX) {
                    Ok(s) => {
                        let factor = 2.0 * m.lambda();
                        t.sigma2 = Some(factor * s.value);
                        t.sigma2_tail_bound = Some(factor * s.tail_bound);
                    }
                    Err(err) => t.notes.push(format!("length sigma2: {err}")),
                }
            }
        }
        (FunctionalKind::LengthFluct, _) | (FunctionalKind::Length, _) => {
            t.notes.push(format!("no limit variance computed for {kind} in the {} regime", regime.regime));
        }
    }
    t
}

/// Statistics of one ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalBlock {
    pub eps: f64,
    pub delta: f64,
    pub replicates: usize,
    pub ensemble_hash: String,
    pub normalization: f64,
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub mean_se: Vec<f64>,
    pub var: Vec<f64>,
    pub var_se: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub second_moment: Vec<f64>,
    pub second_moment_se: Vec<f64>,
    /// Exact variance of the discretized functional at each time, when the
    /// functional is a chaos integral.
    pub discretized_variance: Option<Vec<f64>>,
    pub ks: Option<KsBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsBlock {
    /// Evaluation time of the tested column.
    pub t: f64,
    pub reference_var: f64,
    /// Where `reference_var` comes from.
    pub reference: String,
    pub statistic: f64,
    pub p_value: f64,
}

fn finite_or_none(v: Option<f64>) -> Option<f64> {
    v.filter(|x| x.is_finite())
}

pub fn empirical_block(
    cfg: &EnsembleConfig,
    ens: &FluctuationEnsemble,
    theory: &TheoryBlock,
) -> Result<EmpiricalBlock> {
    let p = ens.times.len();
    let (mean, mean_se): (Vec<f64>, Vec<f64>) = (0..p).map(|k| empirical_mean(ens, k)).unzip();
    let (var, var_se): (Vec<f64>, Vec<f64>) = (0..p).map(|k| empirical_cov(ens, k, k)).unzip();
    let cov = (0..p).map(|i| (0..p).map(|j| empirical_cov(ens, i, j).0).collect()).collect();
    let (second_moment, second_moment_se): (Vec<f64>, Vec<f64>) = (0..p).map(|k| raw_moment(ens, k, 2.0)).unzip();
    let discretized = match cfg.functional {
        FunctionalKind::Z | FunctionalKind::F => {
            let corr = Correlation::for_model(&cfg.model);
            let scale = ens.normalization * ens.normalization;
            Some(
                ens.times
                    .iter()
                    .map(|&t| Ok(scale * discretized_variance(&cfg.expansion, &corr, cfg.eps, cfg.delta, t)?))
                    .collect::<Result<Vec<f64>>>()?,
            )
        }
        _ => None,
    };
    let last = p - 1;
    let t_last = ens.times[last];
    let reference = match (&discretized, finite_or_none(theory.sigma2)) {
        (Some(d), _) if ens.regime.regime != Regime::Noncentral => Some((d[last], "discretized_variance")),
        (None, Some(s)) => Some((s * t_last, "sigma2")),
        _ => None,
    };
    let ks = match reference {
        Some((v, src)) if ens.replicates >= 20 && v > 0.0 => {
            let r = ks_normal_test(&ens.column(last), 0.0, v)?;
            Some(KsBlock {
                t: t_last,
                reference_var: v,
                reference: src.into(),
                statistic: r.statistic,
                p_value: r.p_value,
            })
        }
        _ if ens.replicates >= 20 && var[last] > 0.0 => {
            let r = ks_normal_test(&ens.column(last), mean[last], var[last])?;
            Some(KsBlock {
                t: t_last,
                reference_var: var[last],
                reference: "sample".into(),
                statistic: r.statistic,
                p_value: r.p_value,
            })
        }
        _ => None,
    };
    Ok(EmpiricalBlock {
        eps: ens.eps,
        delta: ens.delta,
        replicates: ens.replicates,
        ensemble_hash: ens.config_hash.clone(),
        normalization: ens.normalization,
        times: ens.times.clone(),
        mean,
        mean_se,
        var,
        var_se,
        cov,
        second_moment,
        second_moment_se,
        discretized_variance: discretized,
        ks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: String,
    pub config_hash: String,
    pub model: String,
    pub functional: FunctionalKind,
    pub expansion: HermiteExpansion,
    pub seed: u64,
    pub theory: TheoryBlock,
    pub empirical: Vec<EmpiricalBlock>,
}

/// Ensembles and summary of a full experiment.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub ensembles: Vec<FluctuationEnsemble>,
    pub summary: Summary,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let configs = cfg.ensembles()?;
    let first = &configs[0];
    let regime = first.resolve_regime()?;
    let theory = theory_block(&first.model, &first.expansion, first.functional, &first.times, &regime);
    let mut ensembles = Vec::with_capacity(configs.len());
    let mut empirical = Vec::with_capacity(configs.len());
    for c in &configs {
        let ens = run_ensemble(c)?;
        empirical.push(empirical_block(c, &ens, &theory)?);
        ensembles.push(ens);
    }
    Ok(ExperimentOutput {
        ensembles,
        summary: Summary {
            schema_version: SCHEMA_VERSION.into(),
            config_hash: cfg.hash(),
            model: first.model.id(),
            functional: first.functional,
            expansion: first.expansion.clone(),
            seed: cfg.seed,
            theory,
            empirical,
        },
    })
}

/// Formats a float with 17 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub const CSV_HEADER: &str = "replicate,kind,eps,t,value";

/// Writes `replicate,kind,eps,t,value` rows, ensembles in order, then
/// replicates, then times.
pub fn write_csv<W: Write>(mut w: W, ensembles: &[FluctuationEnsemble]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for ens in ensembles {
        let eps = format_float(ens.eps);
        for (r, row) in ens.values.iter().enumerate() {
            for (t, v) in ens.times.iter().zip(row) {
                writeln!(w, "{r},{},{eps},{},{}", ens.kind, format_float(*t), format_float(*v))?;
            }
        }
    }
    Ok(())
}

pub fn write_summary<W: Write>(mut w: W, summary: &Summary) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, summary)?;
    writeln!(w)?;
    Ok(())
}

/// Writes the declared outputs of an experiment, if any.
pub fn write_outputs(cfg: &ExperimentConfig, out: &ExperimentOutput) -> Result<()> {
    if let Some(p) = &cfg.output.csv {
        let f = std::io::BufWriter::new(std::fs::File::create(p)?);
        write_csv(f, &out.ensembles)?;
    }
    if let Some(p) = &cfg.output.summary {
        let f = std::io::BufWriter::new(std::fs::File::create(p)?);
        write_summary(f, &out.summary)?;
    }
    Ok(())
}

/// The summary as a JSON value, for callers that post-process it.
pub fn summary_value(summary: &Summary) -> Value {
    serde_json::to_value(summary).expect("summary serializes")
}
