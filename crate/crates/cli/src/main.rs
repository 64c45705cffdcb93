//! `hotpate`: run hot-PATE simulation experiments from the command line.
//!
//! Metric rows go to stdout; `--out` receives the experiment's data table.
//! Exit status is 0 when every metric passes, 1 when any fails, 2 on a
//! configuration or input error.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;

use hotpate_core::harness::{
    run_alpha_sweep, run_diversity_check, run_dp_audit, run_expectation_check, run_individual_charging,
    run_k_scaling, run_lemma_transfer_check, run_marginal_fidelity, run_model_check, run_relevance_check,
    run_sampling_compare, run_sensitivity_check, AlphaSweepConfig, DataTable, DiversityConfig, DpAuditConfig,
    ExpectationConfig, ExperimentReport, IndividualChargingConfig, KScalingConfig, LemmaConfig,
    MarginalConfig, ModelCheckConfig, OutputFormat, RelevanceConfig, RunSettings, SamplingCompareConfig,
    SensitivityConfig, SuiteSpec,
};
use hotpate_core::{
    default_hit_budget, hot_pate_loop, AggregationMode, Error, LoopConfig, PrivacyLedger, PrivacyParams,
    Result, StepRecord, TeacherProvider,
};
use hotpate_core::aggregation::{FixedProvider, MarkovProvider};

#[derive(Parser)]
#[command(name = "hotpate", version, about = "Hot-PATE simulator and Monte Carlo harness")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Master seed; trial t uses a seed derived from (seed, t).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Number of Monte Carlo trials.
    #[arg(long, global = true, default_value_t = 100_000)]
    trials: u64,
    /// File that receives the data table (metric rows if there is none).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output format for stdout and --out.
    #[arg(long, global = true, default_value = "csv")]
    format: OutputFormat,
    /// JSON configuration for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SuiteArg {
    /// Named ensemble suite; overrides the suite in --config.
    #[arg(long)]
    suite: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Diversity transfer: Pr[c_j >= p c_{j,q}] against (1/2) ln(1/p) q.
    LemmaCheck(SuiteArg),
    /// Relevance: Pr[c_j >= T] against (1/T) sum_i p_j.
    RelevanceCheck(SuiteArg),
    /// Per-teacher marginal fidelity of coordinated votes.
    MarginalCheck(SuiteArg),
    /// Mean coordinated counts against sum_i p_j.
    ExpectationCheck(SuiteArg),
    /// One-teacher swaps move at most one vote.
    SensitivityCheck,
    /// Outcome probabilities of the wrapped homogeneous aggregator across alpha.
    AlphaSweep,
    /// Max-frequency tail against the exponential/binomial model.
    ModelCheck,
    /// Coordinated versus independent sampling.
    CompareSampling {
        #[command(flatten)]
        suite: SuiteArg,
        /// Run the k-scaling comparison instead.
        #[arg(long)]
        k_scaling: bool,
    },
    /// Exact privacy-ratio audit over adjacent histograms.
    DpAudit,
    /// End-to-end diversity contract of an aggregator.
    DiversityCheck(SuiteArg),
    /// Per-teacher individual charging on a group ensemble.
    ChargingCheck,
    /// Generate a response token by token with the aggregation loop.
    Simulate,
    /// Print the number of affordable target hits.
    Budget {
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        eps0: f64,
    },
}

fn default_mode() -> AggregationMode {
    AggregationMode::Homogeneous
}
fn default_max_tokens() -> usize {
    20
}
fn default_retry_cap() -> usize {
    3
}
fn default_eps() -> f64 {
    1.0
}
fn default_delta_total() -> f64 {
    1e-6
}
fn default_delta0() -> f64 {
    1e-3
}
fn default_limit() -> u64 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ProviderSpec {
    /// The same ensemble at every step.
    Suite { suite: SuiteSpec },
    /// Three-token chain whose teachers never repeat the previous token.
    Markov { n: usize },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    provider: ProviderSpec,
    #[serde(default = "default_mode")]
    mode: AggregationMode,
    #[serde(default = "default_max_tokens")]
    max_tokens: usize,
    #[serde(default = "default_retry_cap")]
    retry_cap: usize,
    #[serde(default = "default_eps")]
    eps_total: f64,
    #[serde(default = "default_delta_total")]
    delta_total: f64,
    #[serde(default = "default_eps")]
    eps0: f64,
    #[serde(default = "default_delta0")]
    delta0: f64,
    /// Support bound for the noise error bound; defaults to the number of
    /// distinct tokens in the first step's ensemble.
    #[serde(default)]
    support_bound: Option<usize>,
    /// Target-hit budget; defaults to the budget derived from `eps_total` and `eps0`.
    #[serde(default)]
    hit_budget: Option<u64>,
    #[serde(default = "default_limit")]
    per_teacher_limit: u64,
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn load_or_default<T: DeserializeOwned + Default>(global: &GlobalArgs) -> Result<T> {
    match &global.config {
        Some(path) => read_config(path),
        None => Ok(T::default()),
    }
}

/// Loads a config that names a suite, applying `--suite` on top.
fn load_with_suite<T: DeserializeOwned>(
    global: &GlobalArgs,
    suite: &SuiteArg,
    default_suite: &str,
    build: impl Fn(SuiteSpec) -> Result<T>,
    set_suite: impl Fn(&mut T, SuiteSpec),
) -> Result<T> {
    match &global.config {
        Some(path) => {
            let mut config: T = read_config(path)?;
            if let Some(name) = &suite.suite {
                set_suite(&mut config, SuiteSpec::preset(name)?);
            }
            Ok(config)
        }
        None => build(SuiteSpec::preset(suite.suite.as_deref().unwrap_or(default_suite))?),
    }
}

fn open_out(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn emit(report: &ExperimentReport, global: &GlobalArgs) -> Result<bool> {
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    report.write_rows(&mut lock, global.format)?;
    lock.flush()?;
    if let Some(path) = &global.out {
        let mut w = open_out(path)?;
        match &report.table {
            Some(table) => table.write(&mut w, global.format)?,
            None => report.write_rows(&mut w, global.format)?,
        }
        w.flush()?;
    }
    eprintln!("{}", report.summary());
    Ok(report.all_pass())
}

fn simulate(global: &GlobalArgs) -> Result<bool> {
    let path = global
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("simulate requires --config".into()))?;
    let config: SimulateConfig = read_config(path)?;
    let provider: Box<dyn TeacherProvider> = match config.provider {
        ProviderSpec::Suite { suite } => Box::new(FixedProvider(suite.build()?)),
        ProviderSpec::Markov { n } => Box::new(MarkovProvider { n }),
    };
    let first = provider.distributions(&[])?;
    let n = first.len();
    let support_bound = match config.support_bound {
        Some(s) => s,
        None => {
            let mut tokens: Vec<_> = first.iter().flat_map(|d| d.entries().iter().map(|e| e.0)).collect();
            tokens.sort_unstable();
            tokens.dedup();
            tokens.len()
        }
    };
    let params = PrivacyParams::calibrated(
        config.eps_total,
        config.delta_total,
        config.eps0,
        config.delta0,
        support_bound,
        n as u64,
    )?;
    let hit_budget = match config.hit_budget {
        Some(h) => h,
        None => default_hit_budget(config.eps_total, config.eps0)?.hits,
    };
    let mut ledger = PrivacyLedger::new(&params, n, hit_budget, config.per_teacher_limit)?;
    let loop_config = LoopConfig {
        mode: config.mode,
        max_tokens: config.max_tokens,
        retry_cap: config.retry_cap,
    };
    let settings = RunSettings::new(global.seed, global.trials);
    let run = hot_pate_loop(provider.as_ref(), &params, &mut ledger, &loop_config, &settings.master())?;

    let mut table = DataTable::new(["step", "outcome", "token", "count", "retries"]);
    for step in &run.steps {
        table.push(step_row(step)?);
    }
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    table.write(&mut lock, global.format)?;
    lock.flush()?;
    if let Some(path) = &global.out {
        let mut w = open_out(path)?;
        table.write(&mut w, global.format)?;
        w.flush()?;
    }
    eprintln!(
        "simulate: {} steps, {} tokens, {} answers, status {}, hits used {}/{}",
        run.steps.len(),
        run.tokens().len(),
        run.answers.len(),
        serde_json::to_string(&run.status)?.trim_matches('"'),
        ledger.hits_used,
        ledger.hit_budget
    );
    Ok(true)
}

fn step_row(step: &StepRecord) -> Result<Vec<Value>> {
    let value = serde_json::to_value(step)?;
    Ok(["step", "outcome", "token", "count", "retries"]
        .iter()
        .map(|k| value.get(*k).cloned().unwrap_or(Value::Null))
        .collect())
}

fn run(cli: &Cli) -> Result<bool> {
    let g = &cli.global;
    let settings = RunSettings::new(g.seed, g.trials);
    let report = match &cli.command {
        Command::Budget { eps, eps0 } => {
            let budget = default_hit_budget(*eps, *eps0)?;
            println!("{}", budget.hits);
            return Ok(true);
        }
        Command::Simulate => return simulate(g),
        Command::LemmaCheck(s) => {
            let config = load_with_suite(g, s, "uniform4", |x| Ok(LemmaConfig::new(x)), |c, x| c.suite = x)?;
            run_lemma_transfer_check(&config, &settings)?
        }
        Command::RelevanceCheck(s) => {
            let config = load_with_suite(g, s, "uniform4", |x| Ok(RelevanceConfig::new(x)), |c, x| c.suite = x)?;
            run_relevance_check(&config, &settings)?
        }
        Command::MarginalCheck(s) => {
            let mut config: MarginalConfig = load_or_default(g)?;
            if let Some(name) = &s.suite {
                config.suite = SuiteSpec::preset(name)?;
            }
            run_marginal_fidelity(&config, &settings)?
        }
        Command::ExpectationCheck(s) => {
            let mut config: ExpectationConfig = load_or_default(g)?;
            if let Some(name) = &s.suite {
                config.suite = SuiteSpec::preset(name)?;
            }
            run_expectation_check(&config, &settings)?
        }
        Command::SensitivityCheck => run_sensitivity_check(&load_or_default::<SensitivityConfig>(g)?, &settings)?,
        Command::AlphaSweep => run_alpha_sweep(&load_or_default::<AlphaSweepConfig>(g)?, &settings)?,
        Command::ModelCheck => run_model_check(&load_or_default::<ModelCheckConfig>(g)?, &settings)?,
        Command::CompareSampling { suite, k_scaling } => {
            if *k_scaling {
                run_k_scaling(&load_or_default::<KScalingConfig>(g)?, &settings)?
            } else {
                let name = suite.suite.as_deref().unwrap_or("planetz");
                let config = load_with_suite(
                    g,
                    suite,
                    name,
                    |_| SamplingCompareConfig::preset(name),
                    |c: &mut SamplingCompareConfig, x| c.suite = x,
                )?;
                run_sampling_compare(&config, &settings)?
            }
        }
        Command::DpAudit => run_dp_audit(&load_or_default::<DpAuditConfig>(g)?, &settings)?,
        Command::DiversityCheck(s) => {
            let mut config: DiversityConfig = load_or_default(g)?;
            if let Some(name) = &s.suite {
                config.suite = SuiteSpec::preset(name)?;
            }
            run_diversity_check(&config, &settings)?
        }
        Command::ChargingCheck => {
            run_individual_charging(&load_or_default::<IndividualChargingConfig>(g)?, &settings)?
        }
    };
    emit(&report, g)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
