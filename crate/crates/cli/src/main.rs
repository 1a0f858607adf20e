use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use bmlab::asymptotics::{
    benhariz_check, classify_regime, kd_covariance_detailed, kd_fbm_closed_form, log_regime_constants,
    sigma2_central, Regime, TIE_TOL,
};
use bmlab::experiment::{run_experiment, write_outputs, ExperimentConfig, FunctionSpec};
use bmlab::hermite::HermiteExpansion;
use bmlab::models::{check_h1, check_h2, default_h1_grid, default_h2_grid};
use bmlab::{Error, Model, SelfSimilarModel, StationaryModel};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "bmlab", version, about = "Chaos expansions, limit constants and Monte Carlo checks for Gaussian functionals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Hermite expansion of a function.
    Hermite(HermiteArgs),
    /// Limit constants and regime for a model and function.
    Theory(TheoryArgs),
    /// Run a Monte Carlo experiment from a JSON configuration.
    Experiment(ExperimentArgs),
    /// Check the structural hypotheses of a self-similar model.
    Check(CheckArgs),
}

#[derive(Args, Clone)]
#[group(multiple = false)]
struct FunctionArgs {
    /// Named function with a known expansion (abs, abs_centered, square, ...).
    #[arg(long, alias = "f")]
    builtin: Option<String>,
    /// Comma-separated coefficients c_0,c_1,...
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    coeffs: Option<Vec<f64>>,
    /// Named function projected by quadrature.
    #[arg(long)]
    pointwise: Option<String>,
}

impl FunctionArgs {
    fn spec(&self) -> Option<FunctionSpec> {
        if let Some(b) = &self.builtin {
            Some(FunctionSpec::Builtin(b.clone()))
        } else if let Some(c) = &self.coeffs {
            Some(FunctionSpec::HermiteCoeffs(c.clone()))
        } else {
            self.pointwise.clone().map(FunctionSpec::Pointwise)
        }
    }
}

#[derive(Args)]
struct HermiteArgs {
    #[command(flatten)]
    function: FunctionArgs,
    #[arg(long, default_value_t = 8)]
    qmax: usize,
    /// Also write the JSON to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TheoryArgs {
    /// Model, e.g. fbm:0.6, bifbm:0.6,0.75, fgn:0.7.
    #[arg(long)]
    model: String,
    #[command(flatten)]
    function: FunctionArgs,
    #[arg(long, default_value_t = 8)]
    qmax: usize,
    /// Hermite rank; defaults to the rank of the function, or 2.
    #[arg(long)]
    d: Option<usize>,
    /// Evaluate K_d(s,t) at `s,t`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    kd: Option<Vec<f64>>,
    /// Radius for the summability check of stationary models.
    #[arg(long, default_value_t = 1.5)]
    r: f64,
}

#[derive(Args)]
struct ExperimentArgs {
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<u64>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    /// Model string, inline JSON object, or path to a JSON file.
    #[arg(long)]
    model: String,
}

/// Error carrying the process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Replicate { source, .. } => exit_code(source),
        Error::Regime(_) => 3,
        Error::Config(_)
        | Error::Io(_)
        | Error::Precondition(_)
        | Error::Domain { .. }
        | Error::Range { .. }
        | Error::UnsupportedOrder { .. }
        | Error::Coverage { .. }
        | Error::Alignment { .. }
        | Error::Size { .. } => 2,
        _ => 4,
    }
}

fn input(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn print_json(v: &Value) {
    // a closed pipe downstream is not an error
    let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(v).expect("value serializes"));
}

fn parse_model(text: &str) -> Result<Model, Failure> {
    let trimmed = text.trim();
    if trimmed.starts_with('{') {
        return serde_json::from_str(trimmed).map_err(|e| input(format!("bad model JSON: {e}")));
    }
    if trimmed.ends_with(".json") {
        let body = std::fs::read_to_string(trimmed).map_err(|e| input(format!("{trimmed}: {e}")))?;
        return serde_json::from_str(&body).map_err(|e| input(format!("bad model JSON in {trimmed}: {e}")));
    }
    Ok(trimmed.parse()?)
}

fn cmd_hermite(a: HermiteArgs) -> Result<(), Failure> {
    let spec = a
        .function
        .spec()
        .ok_or_else(|| input("one of --builtin, --coeffs or --pointwise is required"))?;
    let e = spec.expansion(a.qmax)?;
    let v = json!({
        "function": spec,
        "qmax": e.qmax(),
        "coeffs": e.coeffs(),
        "rank": e.rank(),
        "second_moment": e.second_moment()?,
    });
    if let Some(p) = &a.out {
        std::fs::write(p, serde_json::to_string_pretty(&v).expect("serializes"))
            .map_err(|err| input(format!("{}: {err}", p.display())))?;
    }
    print_json(&v);
    Ok(())
}

fn cmd_theory(a: TheoryArgs) -> Result<(), Failure> {
    let model = parse_model(&a.model)?;
    let e: Option<HermiteExpansion> = a.function.spec().map(|s| s.expansion(a.qmax)).transpose()?;
    let d = a.d.unwrap_or_else(|| e.as_ref().map_or(2, |e| e.rank().max(1)));
    let mut out = json!({ "model": model.id(), "d": d });
    let rho = match &model {
        Model::Stationary(s) => s.clone(),
        Model::SelfSimilar(m) => {
            out["beta"] = json!(m.beta());
            out["lambda"] = json!(m.lambda());
            StationaryModel::AAlpha { alpha: m.alpha() }
        }
    };
    let regime = match model.alpha() {
        Some(alpha) => {
            let r = classify_regime(alpha, d, TIE_TOL)?;
            out["alpha"] = json!(alpha);
            out["regime"] = json!(r);
            Some(r)
        }
        None => {
            out["regime"] = json!({ "regime": "central", "note": "summable correlation" });
            None
        }
    };
    let reg = regime.as_ref().map_or(Regime::Central, |r| r.regime);
    if let Some(e) = &e {
        out["expansion"] = json!({ "coeffs": e.coeffs(), "rank": e.rank() });
        match reg {
            Regime::Central => {
                let s = sigma2_central(e, &rho, d)?;
                out["sigma2"] = json!({ "value": s.value, "tail_bound": s.tail_bound, "terms": s.terms });
            }
            Regime::LogCentral => {
                let (alpha, beta, k) = match &model {
                    Model::SelfSimilar(m) => (
                        m.alpha(),
                        m.beta(),
                        match m {
                            SelfSimilarModel::Bifbm { k, .. } => Some(*k),
                            _ => None,
                        },
                    ),
                    Model::Stationary(_) => (rho.alpha().unwrap_or(f64::NAN), rho.alpha().unwrap_or(f64::NAN) / 2.0, None),
                };
                out["log_constants"] = json!(log_regime_constants(e.c(d), d, alpha, beta, k)?);
            }
            Regime::Noncentral => {}
        }
        if let Model::Stationary(s) = &model {
            out["summability"] = json!(benhariz_check(e, s, a.r, d)?);
        }
    }
    if let Some(st) = &a.kd {
        let Model::SelfSimilar(m) = &model else {
            return Err(input("--kd needs a self-similar model"));
        };
        let [s, t] = st[..] else {
            return Err(input("--kd takes two times s,t"));
        };
        let k = kd_covariance_detailed(m, d, s, t)?;
        let c_d = e.as_ref().map_or(1.0, |e| e.c(d));
        let mut kd = json!({
            "s": s,
            "t": t,
            "value": k.value,
            "residual": k.residual,
            "c_d": c_d,
            "scaled": c_d * c_d * k.value,
        });
        if let SelfSimilarModel::Fbm { h } = m {
            kd["closed_form"] = json!(kd_fbm_closed_form(*h, d, s, t));
        }
        out["kd"] = kd;
    }
    print_json(&out);
    Ok(())
}

fn cmd_experiment(a: ExperimentArgs) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::from_path(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(r) = a.replicates {
        cfg.replicates = r;
    }
    if a.csv.is_some() {
        cfg.output.csv = a.csv;
    }
    if a.summary.is_some() {
        cfg.output.summary = a.summary;
    }
    let out = run_experiment(&cfg)?;
    write_outputs(&cfg, &out)?;
    if cfg.output.summary.is_none() {
        print_json(&serde_json::to_value(&out.summary).expect("serializes"));
    } else {
        eprintln!(
            "{}: {} ensemble(s), config {}",
            out.summary.model,
            out.ensembles.len(),
            &out.summary.config_hash[..12]
        );
    }
    Ok(())
}

fn cmd_check(a: CheckArgs) -> Result<(), Failure> {
    let Model::SelfSimilar(m) = parse_model(&a.model)? else {
        return Err(input("hypothesis checks apply to self-similar models"));
    };
    let h1 = check_h1(&m, &default_h1_grid())?;
    let h2 = check_h2(&m, &default_h2_grid(&m))?;
    let failures: Vec<String> = h1.failures().into_iter().chain(h2.failures()).collect();
    print_json(&json!({
        "model": m.id(),
        "beta": m.beta(),
        "alpha": m.alpha(),
        "lambda": m.lambda(),
        "h1": h1,
        "h2": h2,
        "pass": failures.is_empty(),
    }));
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: 3,
            message: format!("failing: {}", failures.join("; ")),
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Hermite(a) => cmd_hermite(a),
        Command::Theory(a) => cmd_theory(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Check(a) => cmd_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
