//! Command-line interface: estimation, heterogeneity, prediction
//! intervals, and coverage simulations over reproducible seeds.
//!
//! Exit codes: 0 on success, 1 for input or configuration problems,
//! 2 for estimation failures on valid input.

mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use cimeta::estimators::{StudyMembershipFit, TreatmentModel};
use cimeta::prediction::IntervalMethod;
use cimeta::simulation::MethodSpec;
use cimeta::{
    estimate_gamma_squared, estimate_pooled, interval_from_draws, joint_bootstrap, load_ipd,
    mom_interval, simple_bootstrap_predict, wild_bootstrap_predict, Construction,
    CorrelatedEstimates, CsvSchema, ErrorCategory, EstimatorConfig, IpdDataset, Method,
    MultiplierLaw, PredictionInterval, Scenario,
};

use output::{config_json, write_csv, write_json, VERSION};

#[derive(Parser)]
#[command(
    name = "cimeta",
    version,
    about = "Transported trial outcomes, between-study variance, and new-trial prediction intervals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-study and pooled transported means.
    Estimate(EstimateArgs),
    /// Between-study variance with its bootstrap covariance inputs.
    Gamma(GammaArgs),
    /// Prediction intervals for a new trial in the target population.
    Predict(PredictArgs),
    /// Coverage experiments on synthetic data.
    Simulate(SimulateArgs),
}

fn merge<T>(cli: Option<T>, file: Option<T>) -> Option<T> {
    cli.or(file)
}

fn load_config<T: for<'de> Deserialize<'de> + Default>(
    path: &Option<PathBuf>,
) -> anyhow::Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", p.display()))?;
            serde_json::from_str(&text)
                .map_err(|e| anyhow::anyhow!("invalid config {}: {e}", p.display()))
        }
    }
}

#[derive(Args, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct EstimatorFlags {
    /// Normalize IPW weights by their sum instead of the target count.
    #[arg(long)]
    #[serde(default)]
    hajek: bool,
    /// Use one multinomial membership model instead of pairwise fits.
    #[arg(long)]
    #[serde(default)]
    multinomial: bool,
    /// Fit treatment probabilities instead of using arm fractions.
    #[arg(long)]
    #[serde(default)]
    fitted_treatment: bool,
    /// Flip the AIPW residual sign to (g - Y).
    #[arg(long)]
    #[serde(default)]
    flip_aipw: bool,
}

impl EstimatorFlags {
    fn merged(self, file: EstimatorFlags) -> EstimatorFlags {
        EstimatorFlags {
            hajek: self.hajek || file.hajek,
            multinomial: self.multinomial || file.multinomial,
            fitted_treatment: self.fitted_treatment || file.fitted_treatment,
            flip_aipw: self.flip_aipw || file.flip_aipw,
        }
    }

    fn to_config(&self) -> EstimatorConfig {
        EstimatorConfig {
            hajek: self.hajek,
            flip_aipw_residual: self.flip_aipw,
            study_membership: if self.multinomial {
                StudyMembershipFit::Multinomial
            } else {
                StudyMembershipFit::Pairwise
            },
            treatment_model: if self.fitted_treatment {
                TreatmentModel::Fitted
            } else {
                TreatmentModel::Empirical
            },
        }
    }
}

#[derive(Args, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct EstimateArgs {
    /// Accepted so a recorded report config can be replayed verbatim.
    #[arg(skip)]
    command: Option<String>,
    /// IPD CSV file.
    #[arg(long)]
    input: Option<PathBuf>,
    /// JSON sidecar renaming CSV columns.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Treatment arms to estimate (default: all observed).
    #[arg(long, value_delimiter = ',')]
    arms: Option<Vec<String>>,
    /// Estimation methods: om, ipw, aipw.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// JSON config file; command-line flags override its keys.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    estimator: EstimatorFlags,
}

#[derive(Args, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct GammaArgs {
    /// Accepted so a recorded report config can be replayed verbatim.
    #[arg(skip)]
    command: Option<String>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Treatment arm.
    #[arg(long)]
    arm: Option<String>,
    /// Estimation method backing the per-study means.
    #[arg(long)]
    method: Option<String>,
    /// Bootstrap replicates for the covariance matrix.
    #[arg(long)]
    b: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-study weights (default: equal).
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    estimator: EstimatorFlags,
}

#[derive(Args, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct PredictArgs {
    /// Accepted so a recorded report config can be replayed verbatim.
    #[arg(skip)]
    command: Option<String>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    arm: Option<String>,
    /// Interval methods: mom, simple, wild.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Estimation method behind the pooled estimate and the simple
    /// bootstrap (the wild bootstrap always uses om).
    #[arg(long)]
    est_method: Option<String>,
    /// Interval construction for bootstrap methods.
    #[arg(long)]
    construction: Option<String>,
    #[arg(long)]
    level: Option<f64>,
    /// Bootstrap replicates.
    #[arg(long)]
    b: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the bootstrap draws as CSV.
    #[arg(long)]
    #[serde(default)]
    dump_draws: bool,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    estimator: EstimatorFlags,
}

#[derive(Args, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct SimulateArgs {
    /// Accepted so a recorded report config can be replayed verbatim.
    #[arg(skip)]
    command: Option<String>,
    /// Number of trials.
    #[arg(long)]
    m: Option<usize>,
    /// Heterogeneity law: uniform, normal, exponential, pareto.
    #[arg(long)]
    delta: Option<String>,
    /// Run the full 5 x 4 grid instead of one scenario.
    #[arg(long)]
    #[serde(default)]
    grid: bool,
    /// Monte Carlo replications per scenario.
    #[arg(long)]
    reps: Option<usize>,
    /// Bootstrap replicates inside each replication.
    #[arg(long)]
    b: Option<usize>,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Interval methods (mom, simple-quantile, simple-normal,
    /// wild-quantile, wild-normal); default all.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Use the publication-scale defaults reps=1000, b=1000.
    #[arg(long)]
    #[serde(default)]
    paper_scale: bool,
    /// Center the Pareto law at zero mean.
    #[arg(long)]
    #[serde(default)]
    center_pareto: bool,
    /// Also write per-(construction, law, m, method) coverage series.
    #[arg(long)]
    #[serde(default)]
    plot_data: bool,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Gamma(args) => cmd_gamma(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Simulate(args) => cmd_simulate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = match e.downcast_ref::<cimeta::Error>() {
                Some(err) if err.category() == ErrorCategory::Estimation => 2,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}

fn with_worker_pool<T: Send>(
    workers: Option<usize>,
    f: impl FnOnce() -> anyhow::Result<T> + Send,
) -> anyhow::Result<T> {
    match workers {
        Some(0) => Err(cimeta::Error::InvalidConfig("--workers must be at least 1".into()).into()),
        Some(w) => cimeta::exec::with_workers(w, f),
        None => f(),
    }
}

fn open_dataset(input: &Option<PathBuf>, schema: &Option<PathBuf>) -> anyhow::Result<IpdDataset> {
    let input = input
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("--input is required"))?;
    let schema = match schema {
        Some(p) => Some(CsvSchema::from_json_file(p)?),
        None => None,
    };
    Ok(load_ipd(input, schema.as_ref())?)
}

fn parse_methods(methods: &[String]) -> anyhow::Result<Vec<Method>> {
    methods
        .iter()
        .map(|m| m.parse::<Method>().map_err(Into::into))
        .collect()
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

#[derive(Serialize)]
struct EstimatorFlagsEcho {
    hajek: bool,
    multinomial: bool,
    fitted_treatment: bool,
    flip_aipw: bool,
}

impl From<&EstimatorFlags> for EstimatorFlagsEcho {
    fn from(f: &EstimatorFlags) -> Self {
        EstimatorFlagsEcho {
            hajek: f.hajek,
            multinomial: f.multinomial,
            fitted_treatment: f.fitted_treatment,
            flip_aipw: f.flip_aipw,
        }
    }
}

/// Echoed configs use exactly the flag names and shapes the `--config`
/// loader accepts, so a recorded run can be replayed from its report.
#[derive(Serialize)]
struct EstimateConfigEcho {
    command: &'static str,
    input: String,
    arms: Vec<String>,
    methods: Vec<Method>,
    #[serde(flatten)]
    estimator: EstimatorFlagsEcho,
}

fn cmd_estimate(args: EstimateArgs) -> anyhow::Result<()> {
    let file: EstimateArgs = load_config(&args.config)?;
    let input = merge(args.input, file.input);
    let schema = merge(args.schema, file.schema);
    let arms = merge(args.arms, file.arms);
    let methods = merge(args.methods, file.methods).unwrap_or_else(|| vec!["om".into()]);
    let workers = merge(args.workers, file.workers);
    let output_dir = merge(args.output_dir, file.output_dir).unwrap_or_else(|| PathBuf::from("."));
    let estimator = args.estimator.merged(file.estimator);

    let dataset = open_dataset(&input, &schema)?;
    let arms: Vec<String> = match arms {
        Some(a) => a,
        None => dataset.arm_labels().to_vec(),
    };
    let methods = parse_methods(&methods)?;
    let cfg = estimator.to_config();

    let (per_study, pooled) = with_worker_pool(workers, || {
        let mut per_study = Vec::new();
        let mut pooled = Vec::new();
        for arm in &arms {
            for &method in &methods {
                let p = estimate_pooled(&dataset, arm, method, &cfg)?;
                per_study.extend(p.per_study.iter().cloned());
                pooled.push(p);
            }
        }
        Ok((per_study, pooled))
    })?;

    let echo = EstimateConfigEcho {
        command: "estimate",
        input: input.expect("checked").display().to_string(),
        arms,
        methods,
        estimator: (&estimator).into(),
    };
    let config = config_json(&echo)?;

    #[derive(Serialize)]
    struct Document<'a> {
        version: &'static str,
        config: &'a EstimateConfigEcho,
        per_study: &'a [cimeta::TransportEstimate],
        pooled: &'a [cimeta::PooledEstimate],
    }
    let json_path = write_json(
        &output_dir,
        "estimates.json",
        &Document {
            version: VERSION,
            config: &echo,
            per_study: &per_study,
            pooled: &pooled,
        },
    )?;

    let mut rows: Vec<String> = per_study
        .iter()
        .map(|e| {
            format!(
                "{},{},{},{},{},{},{}",
                e.study,
                e.arm,
                e.method,
                fmt_f64(e.value),
                e.n_target,
                e.n_arm,
                e.clipped_weights
            )
        })
        .collect();
    for p in &pooled {
        rows.push(format!(
            "pooled,{},{},{},{},,",
            p.arm,
            p.method,
            fmt_f64(p.value),
            p.per_study[0].n_target
        ));
    }
    let csv_path = write_csv(
        &output_dir,
        "estimates.csv",
        &config,
        "study,arm,method,value,n_target,n_arm,clipped_weights",
        &rows,
    )?;

    println!("wrote {} and {}", json_path.display(), csv_path.display());
    for p in &pooled {
        println!("pooled {} ({}): {}", p.arm, p.method, p.value);
    }
    Ok(())
}

#[derive(Serialize)]
struct GammaConfigEcho {
    command: &'static str,
    input: String,
    arm: String,
    method: Method,
    b: usize,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
    #[serde(flatten)]
    estimator: EstimatorFlagsEcho,
}

fn cmd_gamma(args: GammaArgs) -> anyhow::Result<()> {
    let file: GammaArgs = load_config(&args.config)?;
    let input = merge(args.input, file.input);
    let schema = merge(args.schema, file.schema);
    let arm = merge(args.arm, file.arm).unwrap_or_else(|| "a".into());
    let method: Method = merge(args.method, file.method)
        .unwrap_or_else(|| "om".into())
        .parse()?;
    let b = merge(args.b, file.b).unwrap_or(1000);
    let seed = merge(args.seed, file.seed).unwrap_or(0);
    let weights = merge(args.weights, file.weights);
    let workers = merge(args.workers, file.workers);
    let output_dir = merge(args.output_dir, file.output_dir).unwrap_or_else(|| PathBuf::from("."));
    let estimator = args.estimator.merged(file.estimator);
    let cfg = estimator.to_config();

    let dataset = open_dataset(&input, &schema)?;
    if let Some(w) = &weights {
        if w.len() != dataset.num_studies() {
            return Err(cimeta::Error::InvalidConfig(format!(
                "--weights needs one value per study ({} given, {} studies)",
                w.len(),
                dataset.num_studies()
            ))
            .into());
        }
    }
    let (pooled, boot) = with_worker_pool(workers, || {
        let pooled = estimate_pooled(&dataset, &arm, method, &cfg)?;
        let boot = joint_bootstrap(&dataset, &arm, method, &cfg, b, seed)?;
        Ok((pooled, boot))
    })?;
    let mu: Vec<f64> = pooled.per_study.iter().map(|e| e.value).collect();
    let correlated = match &weights {
        Some(w) => CorrelatedEstimates::new(mu, w.clone(), boot.cov.clone())?,
        None => CorrelatedEstimates::with_equal_weights(mu, boot.cov.clone())?,
    };
    let gamma = estimate_gamma_squared(&correlated)?;

    let echo = GammaConfigEcho {
        command: "gamma",
        input: input.expect("checked").display().to_string(),
        arm: arm.clone(),
        method,
        b,
        seed,
        weights,
        estimator: (&estimator).into(),
    };
    let config = config_json(&echo)?;

    #[derive(Serialize)]
    struct Document<'a> {
        version: &'static str,
        config: &'a GammaConfigEcho,
        estimates: &'a CorrelatedEstimates,
        gamma: &'a cimeta::HeterogeneityEstimate,
        var_pooled: f64,
        bootstrap_replicates_used: usize,
        bootstrap_failures: usize,
    }
    let json_path = write_json(
        &output_dir,
        "gamma.json",
        &Document {
            version: VERSION,
            config: &echo,
            estimates: &correlated,
            gamma: &gamma,
            var_pooled: boot.var_pooled,
            bootstrap_replicates_used: boot.replicates_used,
            bootstrap_failures: boot.failures,
        },
    )?;

    let row = format!(
        "{},{},{},{},{},{},{},{},{}",
        arm,
        method,
        dataset.num_studies(),
        b,
        seed,
        fmt_f64(gamma.gamma_tilde_sq),
        fmt_f64(gamma.gamma_hat_sq),
        fmt_f64(gamma.q),
        fmt_f64(boot.var_pooled)
    );
    let csv_path = write_csv(
        &output_dir,
        "gamma.csv",
        &config,
        "arm,method,m,b,seed,gamma_tilde_sq,gamma_hat_sq,q,var_pooled",
        &[row],
    )?;

    println!("wrote {} and {}", json_path.display(), csv_path.display());
    println!("gamma_hat_sq = {}", gamma.gamma_hat_sq);
    Ok(())
}

#[derive(Serialize)]
struct PredictConfigEcho {
    command: &'static str,
    input: String,
    arm: String,
    methods: Vec<String>,
    est_method: Method,
    construction: Construction,
    level: f64,
    b: usize,
    seed: u64,
    dump_draws: bool,
    #[serde(flatten)]
    estimator: EstimatorFlagsEcho,
}

fn cmd_predict(args: PredictArgs) -> anyhow::Result<()> {
    let file: PredictArgs = load_config(&args.config)?;
    let input = merge(args.input, file.input);
    let schema = merge(args.schema, file.schema);
    let arm = merge(args.arm, file.arm).unwrap_or_else(|| "a".into());
    let methods = merge(args.methods, file.methods)
        .unwrap_or_else(|| vec!["mom".into(), "simple".into(), "wild".into()]);
    let est_method: Method = merge(args.est_method, file.est_method)
        .unwrap_or_else(|| "om".into())
        .parse()?;
    let construction = match merge(args.construction, file.construction)
        .unwrap_or_else(|| "quantile".into())
        .as_str()
    {
        "quantile" => Construction::Quantile,
        "normal" => Construction::Normal,
        other => {
            return Err(cimeta::Error::InvalidConfig(format!(
                "unknown construction `{other}` (expected quantile or normal)"
            ))
            .into())
        }
    };
    let level = merge(args.level, file.level).unwrap_or(0.95);
    let b = merge(args.b, file.b).unwrap_or(1000);
    let seed = merge(args.seed, file.seed).ok_or_else(|| {
        anyhow::Error::from(cimeta::Error::InvalidConfig("--seed is required".into()))
    })?;
    let dump_draws = args.dump_draws || file.dump_draws;
    let workers = merge(args.workers, file.workers);
    let output_dir = merge(args.output_dir, file.output_dir).unwrap_or_else(|| PathBuf::from("."));
    let estimator = args.estimator.merged(file.estimator);
    let cfg = estimator.to_config();

    if !(0.0 < level && level < 1.0) {
        return Err(
            cimeta::Error::InvalidConfig(format!("level must be in (0,1), got {level}")).into(),
        );
    }

    let dataset = open_dataset(&input, &schema)?;
    let (pooled, boot, gamma, intervals, dumped) = with_worker_pool(workers, || {
        let pooled = estimate_pooled(&dataset, &arm, est_method, &cfg)?;
        let boot = joint_bootstrap(&dataset, &arm, est_method, &cfg, b, seed)?;
        let mu: Vec<f64> = pooled.per_study.iter().map(|e| e.value).collect();
        let correlated = CorrelatedEstimates::with_equal_weights(mu, boot.cov.clone())?;
        let gamma = estimate_gamma_squared(&correlated)?;

        let mut intervals: Vec<PredictionInterval> = Vec::new();
        let mut dumped: Vec<(String, Vec<f64>)> = Vec::new();
        for method in &methods {
            match method.as_str() {
                "mom" => {
                    let mut iv = mom_interval(&pooled, &gamma, boot.var_pooled, level)?;
                    iv.b_reps = b;
                    intervals.push(iv);
                }
                "simple" => {
                    let draws =
                        simple_bootstrap_predict(&dataset, &arm, est_method, b, seed, &cfg)?;
                    intervals.push(interval_from_draws(&draws, construction, level)?);
                    if dump_draws {
                        dumped.push(("draws_simple.csv".into(), draws.values.clone()));
                    }
                }
                "wild" => {
                    let draws =
                        wild_bootstrap_predict(&dataset, &arm, b, seed, MultiplierLaw::Normal)?;
                    let mut iv = interval_from_draws(&draws, construction, level)?;
                    iv.method = IntervalMethod::WildBootstrap;
                    intervals.push(iv);
                    if dump_draws {
                        dumped.push(("draws_wild.csv".into(), draws.values.clone()));
                    }
                }
                other => {
                    return Err(cimeta::Error::InvalidConfig(format!(
                        "unknown interval method `{other}` (expected mom, simple, or wild)"
                    ))
                    .into())
                }
            }
        }
        Ok((pooled, boot, gamma, intervals, dumped))
    })?;

    let echo = PredictConfigEcho {
        command: "predict",
        input: input.expect("checked").display().to_string(),
        arm: arm.clone(),
        methods,
        est_method,
        construction,
        level,
        b,
        seed,
        dump_draws,
        estimator: (&estimator).into(),
    };
    let config = config_json(&echo)?;

    #[derive(Serialize)]
    struct Document<'a> {
        version: &'static str,
        config: &'a PredictConfigEcho,
        pooled: &'a cimeta::PooledEstimate,
        gamma: &'a cimeta::HeterogeneityEstimate,
        var_pooled: f64,
        intervals: &'a [PredictionInterval],
    }
    let json_path = write_json(
        &output_dir,
        "intervals.json",
        &Document {
            version: VERSION,
            config: &echo,
            pooled: &pooled,
            gamma: &gamma,
            var_pooled: boot.var_pooled,
            intervals: &intervals,
        },
    )?;

    let rows: Vec<String> = intervals
        .iter()
        .map(|iv| {
            format!(
                "{},{},{},{},{},{},{}",
                iv.method,
                iv.construction,
                fmt_f64(iv.level),
                fmt_f64(iv.center),
                fmt_f64(iv.lower),
                fmt_f64(iv.upper),
                iv.b_reps
            )
        })
        .collect();
    let csv_path = write_csv(
        &output_dir,
        "intervals.csv",
        &config,
        "method,construction,level,center,lower,upper,b",
        &rows,
    )?;
    for (name, values) in &dumped {
        let rows: Vec<String> = values.iter().map(|v| fmt_f64(*v)).collect();
        write_csv(&output_dir, name, &config, "value", &rows)?;
    }

    println!("wrote {} and {}", json_path.display(), csv_path.display());
    for iv in &intervals {
        println!(
            "{} ({}): [{}, {}]",
            iv.method, iv.construction, iv.lower, iv.upper
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct SimulateConfigEcho {
    command: &'static str,
    grid: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<String>,
    reps: usize,
    b: usize,
    level: f64,
    seed: u64,
    methods: Vec<String>,
    center_pareto: bool,
    plot_data: bool,
}

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let file: SimulateArgs = load_config(&args.config)?;
    let grid = args.grid || file.grid;
    let paper_scale = args.paper_scale || file.paper_scale;
    let center_pareto = args.center_pareto || file.center_pareto;
    let plot_data = args.plot_data || file.plot_data;
    let m = merge(args.m, file.m);
    let delta = merge(args.delta, file.delta);
    let default_scale = if paper_scale { 1000 } else { 200 };
    let reps = merge(args.reps, file.reps).unwrap_or(default_scale);
    let b = merge(args.b, file.b).unwrap_or(default_scale);
    let level = merge(args.level, file.level).unwrap_or(0.95);
    let seed = merge(args.seed, file.seed).ok_or_else(|| {
        anyhow::Error::from(cimeta::Error::InvalidConfig("--seed is required".into()))
    })?;
    let methods_raw = merge(args.methods, file.methods);
    let workers = merge(args.workers, file.workers);
    let output_dir = merge(args.output_dir, file.output_dir).unwrap_or_else(|| PathBuf::from("."));

    let methods: Vec<MethodSpec> = match &methods_raw {
        None => MethodSpec::all(),
        Some(names) => names
            .iter()
            .map(|n| n.parse::<MethodSpec>())
            .collect::<cimeta::Result<_>>()?,
    };
    let method_names: Vec<String> = methods
        .iter()
        .map(|m| match m {
            MethodSpec::Mom => "mom".to_string(),
            other => {
                let (a, b) = other.labels();
                format!("{a}-{b}")
            }
        })
        .collect();

    let scenarios: Vec<Scenario> = if grid {
        cimeta::grid_scenarios(reps, b, seed)
            .into_iter()
            .map(|mut s| {
                s.level = level;
                if center_pareto {
                    if let cimeta::DeltaLaw::Pareto { centered, .. } = &mut s.delta_law {
                        *centered = true;
                    }
                }
                s
            })
            .collect()
    } else {
        let m = m.ok_or_else(|| {
            anyhow::Error::from(cimeta::Error::InvalidConfig(
                "--m is required without --grid".into(),
            ))
        })?;
        let delta = delta.as_deref().ok_or_else(|| {
            anyhow::Error::from(cimeta::Error::InvalidConfig(
                "--delta is required without --grid".into(),
            ))
        })?;
        let law = match delta {
            "uniform" => cimeta::DeltaLaw::Uniform2,
            "normal" => cimeta::DeltaLaw::StdNormal,
            "exponential" => cimeta::DeltaLaw::ExpCentered,
            "pareto" => cimeta::DeltaLaw::pareto_default(center_pareto),
            other => {
                return Err(cimeta::Error::InvalidConfig(format!(
                    "unknown delta law `{other}` (expected uniform, normal, exponential, or pareto)"
                ))
                .into())
            }
        };
        let mut s = Scenario::new(m, law, reps, b, seed);
        s.level = level;
        vec![s]
    };
    for s in &scenarios {
        s.validate()?;
    }

    let reports = with_worker_pool(workers, || {
        let mut all = Vec::new();
        for scenario in &scenarios {
            all.extend(cimeta::run_scenario(scenario, &methods)?);
        }
        Ok(all)
    })?;

    let echo = SimulateConfigEcho {
        command: "simulate",
        grid,
        m,
        delta,
        reps,
        b,
        level,
        seed,
        methods: method_names,
        center_pareto,
        plot_data,
    };
    let config = config_json(&echo)?;

    #[derive(Serialize)]
    struct Document<'a> {
        version: &'static str,
        config: &'a SimulateConfigEcho,
        reports: &'a [cimeta::CoverageReport],
    }
    let json_path = write_json(
        &output_dir,
        "coverage.json",
        &Document {
            version: VERSION,
            config: &echo,
            reports: &reports,
        },
    )?;

    let rows: Vec<String> = reports
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.scenario.m,
                r.scenario.delta_law.label(),
                r.scenario.n_s,
                r.scenario.n_0,
                r.scenario.reps,
                r.scenario.b_reps,
                fmt_f64(r.scenario.level),
                r.scenario.seed,
                r.method,
                r.construction,
                fmt_f64(r.coverage),
                fmt_f64(r.mean_width),
                fmt_f64(r.mc_se),
                r.failures
            )
        })
        .collect();
    let csv_path = write_csv(
        &output_dir,
        "coverage.csv",
        &config,
        "m,delta,n_s,n_0,reps,b,level,seed,method,construction,coverage,mean_width,mc_se,failures",
        &rows,
    )?;

    if plot_data {
        // One coverage series per (construction, law, method) over m,
        // matching the panel layout of the coverage figures.
        let mut plot_rows: Vec<(String, String, usize, String, f64)> = reports
            .iter()
            .map(|r| {
                (
                    r.construction.clone(),
                    r.scenario.delta_law.label(),
                    r.scenario.m,
                    r.method.clone(),
                    r.coverage,
                )
            })
            .collect();
        plot_rows.sort_by(|a, b| {
            (&a.0, &a.1, a.2, &a.3)
                .partial_cmp(&(&b.0, &b.1, b.2, &b.3))
                .unwrap()
        });
        let rows: Vec<String> = plot_rows
            .iter()
            .map(|(c, law, m, method, cov)| format!("{c},{law},{m},{method},{}", fmt_f64(*cov)))
            .collect();
        write_csv(
            &output_dir,
            "plot_data.csv",
            &config,
            "construction,delta,m,method,coverage",
            &rows,
        )?;
    }

    println!("wrote {} and {}", json_path.display(), csv_path.display());
    for r in &reports {
        println!(
            "m={} {} {}-{}: coverage {:.3} (width {:.3})",
            r.scenario.m,
            r.scenario.delta_law.label(),
            r.method,
            r.construction,
            r.coverage,
            r.mean_width
        );
    }
    Ok(())
}
