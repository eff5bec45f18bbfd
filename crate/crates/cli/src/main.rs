mod dataset;
mod gen;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sysid_core::datamodel::{
    normalize, parse_config, serialize_config, ModelClass, NormalizationStats, ParamValue,
    SearchLedger, SysIdConfiguration, Trajectory,
};
use sysid_core::evaluate::{
    cross_validation_score, mee_windows, score_tank_test, windowed_rollout_mae, Benchmark,
    MeeTable, MetricReport, TrainOptions,
};
use sysid_core::models::{load_checkpoint, save_checkpoint, Checkpoint};
use sysid_core::search::{
    ledger_csv, mee_table_csv, reference_rows, run_search, select_final, LlmProposer,
    LlmProposerConfig, MeeRow, Proposer, RandomProposer, RandomSearchSpace, ScriptedProposer,
    SearchBudget, SearchOptions,
};
use sysid_core::simulate::{DroneParams, TankParams};
use sysid_core::train::curve_to_csv;

use dataset::DatasetManifest;
use manifest::RunManifest;

/// System identification search workbench: simulate benchmark plants, train
/// sequence models under an immutable cross-validation protocol, and drive
/// configuration search.
#[derive(Parser)]
#[command(name = "sysid", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchmarkArg {
    Tank,
    Drone,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProposerArg {
    Scripted,
    Random,
    Llm,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic benchmark data (trajectory CSVs plus a dataset
    /// manifest).
    GenData(GenDataArgs),
    /// Fit one configuration under the cross-validation protocol.
    Train(TrainArgs),
    /// Score a trained checkpoint on the held-out test sequence.
    Eval(EvalArgs),
    /// Run the iterative configuration search.
    Search(SearchArgs),
    /// Render a ledger (and optional metric reports) into plot-ready CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(value_enum)]
    benchmark: BenchmarkArg,
    /// Output directory (must exist).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Samples per training trajectory (tank fixed layout wants 1024).
    #[arg(long)]
    samples: Option<usize>,
    /// Samples in the held-out test trajectory (drone only).
    #[arg(long)]
    test_samples: Option<usize>,
    /// JSON file overriding the physical plant parameters.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Gaussian measurement noise sigma (tank output channel).
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory produced by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Configuration JSON file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fold-training worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint JSON produced by train or search.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    proposer: ProposerArg,
    /// Iteration budget.
    #[arg(long, default_value_t = 15)]
    budget: u64,
    /// Length of the exploration phase (distinct model classes required).
    #[arg(long, default_value_t = 5)]
    explore: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Scripted plan JSON (list of {config, rationale}).
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Chat-endpoint settings JSON for the llm proposer.
    #[arg(long)]
    llm_config: Option<PathBuf>,
    /// Plain-text problem description rendered into llm prompts.
    #[arg(long)]
    problem: Option<PathBuf>,
    /// Base configuration the llm patches against (defaults to the
    /// benchmark baseline).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Per-trial wall-clock cap in seconds.
    #[arg(long)]
    trial_budget: Option<f64>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Ledger JSONL file.
    #[arg(long)]
    ledger: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// MetricReport JSON files with MEE tables to tabulate.
    #[arg(long = "mee")]
    mee: Vec<PathBuf>,
    /// Include published benchmark reference rows in the MEE table.
    #[arg(long, default_value_t = false)]
    include_reference: bool,
}

/// Failure taxonomy behind the exit-code contract: usage/config errors exit
/// 2, numeric/search failures exit 1.
enum CliError {
    Usage(anyhow::Error),
    Failure(anyhow::Error),
}

fn usage<T>(r: Result<T>) -> std::result::Result<T, CliError> {
    r.map_err(CliError::Usage)
}

fn failure<T>(r: Result<T>) -> std::result::Result<T, CliError> {
    r.map_err(CliError::Failure)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Failure(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(e)) => {
            eprintln!("usage error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> std::result::Result<(), CliError> {
    match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => train(args),
        Command::Eval(args) => eval(args),
        Command::Search(args) => search(args),
        Command::Report(args) => report(args),
    }
}

fn require_dir(path: &Path) -> Result<()> {
    if !path.is_dir() {
        bail!("output directory {} does not exist", path.display());
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn gen_data(args: GenDataArgs) -> std::result::Result<(), CliError> {
    usage(require_dir(&args.out))?;
    let manifest = RunManifest::new("gen-data").with_seed(args.seed);
    usage(manifest.write(&args.out))?;

    match args.benchmark {
        BenchmarkArg::Tank => {
            let params: TankParams = match &args.params {
                Some(p) => usage(read_json(p))?,
                None => TankParams::default(),
            };
            let samples = args.samples.unwrap_or(1024);
            let period = 4.0;
            let artifacts = failure(gen::generate_tank(
                &params, samples, period, args.seed, args.noise,
            ))?;
            failure(gen::write_tank_dataset(&args.out, &params, &artifacts, period, args.seed))?;
            println!(
                "wrote tank_train.csv and tank_test.csv ({samples} samples each) to {}",
                args.out.display()
            );
        }
        BenchmarkArg::Drone => {
            let params: DroneParams = match &args.params {
                Some(p) => usage(read_json(p))?,
                None => DroneParams::default(),
            };
            let train_samples = args.samples.unwrap_or(18_500);
            let test_samples = args.test_samples.unwrap_or(19_500);
            let period = 0.01;
            let artifacts = failure(gen::generate_drone(
                &params,
                train_samples,
                test_samples,
                period,
                args.seed,
            ))?;
            failure(gen::write_drone_dataset(&args.out, &params, &artifacts, period, args.seed))?;
            println!(
                "wrote 3 training flights ({train_samples} samples) and a test flight ({test_samples}) to {}",
                args.out.display()
            );
        }
    }
    Ok(())
}

fn train(args: TrainArgs) -> std::result::Result<(), CliError> {
    usage(require_dir(&args.out))?;
    let ds = usage(DatasetManifest::load(&args.data))?;
    let cfg_text = usage(
        std::fs::read_to_string(&args.config)
            .with_context(|| format!("reading {}", args.config.display())),
    )?;
    let cfg = usage(parse_config(&cfg_text).map_err(|e| anyhow!(e.to_string())))?;
    let trajs = usage(ds.load_train(&args.data))?;
    let protocol = usage(ds.protocol(&trajs))?;

    let manifest = RunManifest::new("train")
        .with_seed(cfg.seed)
        .with_config(serde_json::to_value(&cfg).unwrap())
        .with_protocol_hash(protocol.content_hash())
        .with_io(
            ds.train_files.clone(),
            vec!["checkpoint.json".into(), "report.json".into()],
        );
    usage(manifest.write(&args.out))?;

    let opts = TrainOptions { wall_budget_override: None, jobs: args.jobs };
    let outcome = failure(
        cross_validation_score(&cfg, &protocol, &trajs, &opts).map_err(|e| anyhow!(e.to_string())),
    )?;

    for (k, fold) in outcome.fold_outcomes.iter().enumerate() {
        let path = args.out.join(format!("curve_fold{k}.csv"));
        failure(std::fs::write(&path, curve_to_csv(&fold.curve)).context("writing curve"))?;
    }
    let report_path = args.out.join("report.json");
    failure(
        std::fs::write(&report_path, serde_json::to_string_pretty(&outcome.report).unwrap())
            .context("writing report"),
    )?;

    if outcome.status != sysid_core::datamodel::TrialStatus::Ok {
        return Err(CliError::Failure(anyhow!(
            "training did not complete: {} (fold {:?})",
            outcome.status.as_str(),
            outcome.failing_fold
        )));
    }
    let ckpt = Checkpoint::from_fold_models(&cfg, &outcome.fold_models);
    failure(
        save_checkpoint(&args.out.join("checkpoint.json"), &ckpt)
            .map_err(|e| anyhow!(e.to_string())),
    )?;
    println!(
        "V = {:.6} over {} folds (per-fold: {:?})",
        outcome.report.aggregate.unwrap(),
        outcome.report.per_fold.len(),
        outcome.report.per_fold
    );
    Ok(())
}

fn full_train_stats(
    ds: &DatasetManifest,
    trajs: &[Trajectory],
    protocol_normalizes_inputs: bool,
) -> Result<NormalizationStats> {
    let segs: Vec<(&Trajectory, std::ops::Range<usize>)> =
        trajs.iter().map(|t| (t, 0..t.len())).collect();
    Ok(NormalizationStats::from_segments(
        &segs,
        protocol_normalizes_inputs,
        format!("{:?}-train-full", ds.benchmark),
    )?)
}

fn eval(args: EvalArgs) -> std::result::Result<(), CliError> {
    usage(require_dir(&args.out))?;
    let ds = usage(DatasetManifest::load(&args.data))?;
    let ckpt = usage(load_checkpoint(&args.checkpoint).map_err(|e| anyhow!(e.to_string())))?;
    let trajs = usage(ds.load_train(&args.data))?;
    let test = usage(ds.load_test(&args.data))?;
    let protocol = usage(ds.protocol(&trajs))?;

    let manifest = RunManifest::new("eval")
        .with_protocol_hash(protocol.content_hash())
        .with_io(
            vec![args.checkpoint.display().to_string(), ds.test_file.clone()],
            vec!["test_report.json".into()],
        );
    usage(manifest.write(&args.out))?;

    let stats = failure(full_train_stats(&ds, &trajs, protocol.normalize_inputs))?;
    // the stored checkpoint was trained under fold statistics; rebuild its
    // members against the full-training statistics for test scoring
    let model = failure(rebuild_for_stats(&ckpt, &stats).map_err(|e| anyhow!(e.to_string())))?;

    let mut report = MetricReport {
        per_fold: vec![],
        aggregate: None,
        protocol_hash: protocol.content_hash(),
        mee: None,
    };
    match ds.benchmark {
        Benchmark::Tank => {
            let (norm_rmse, raw_rmse) = failure(
                score_tank_test(model.as_ref(), &test, &stats, &protocol)
                    .map_err(|e| anyhow!(e.to_string())),
            )?;
            report.per_fold = vec![norm_rmse];
            report.aggregate = Some(norm_rmse);
            println!(
                "test open-loop RMSE: {norm_rmse:.6} (normalized), {raw_rmse:.6} (denormalized)"
            );
        }
        Benchmark::Drone => {
            let test_norm = failure(Ok(normalize(&test, &stats)).and_then(|r| r.context("normalize")))?;
            let mae = failure(
                windowed_rollout_mae(model.as_ref(), &test_norm, protocol.horizon)
                    .map_err(|e| anyhow!(e.to_string())),
            )?;
            let windows = failure(
                mee_windows(model.as_ref(), &test, &stats, protocol.horizon)
                    .map_err(|e| anyhow!(e.to_string())),
            )?;
            let table = failure(MeeTable::from_windows(&windows).map_err(|e| anyhow!(e.to_string())))?;
            report.per_fold = vec![mae];
            report.aggregate = Some(mae);
            report.mee = Some(table.clone());
            let row = MeeRow::from_table("checkpoint", &table);
            failure(
                std::fs::write(args.out.join("mee.csv"), mee_table_csv(&[row]))
                    .context("writing mee.csv"),
            )?;
            println!("test windowed MAE: {mae:.6} (normalized channels)");
        }
    }
    failure(
        std::fs::write(
            args.out.join("test_report.json"),
            serde_json::to_string_pretty(&report).unwrap(),
        )
        .context("writing test_report.json"),
    )?;
    Ok(())
}

/// Rebuilds checkpoint members against different normalization statistics
/// (parameter tensors are carried over unchanged).
fn rebuild_for_stats(
    ckpt: &Checkpoint,
    stats: &NormalizationStats,
) -> std::result::Result<Box<dyn sysid_core::models::SequenceModel>, String> {
    let with_stats = |io: &sysid_core::models::IoSpec| sysid_core::models::IoSpec {
        norm: Some(stats.clone()),
        ..io.clone()
    };
    let adjusted = match ckpt {
        Checkpoint::Single { config, io, params } => Checkpoint::Single {
            config: config.clone(),
            io: with_stats(io),
            params: params.clone(),
        },
        Checkpoint::Ensemble { member_config, io, members } => Checkpoint::Ensemble {
            member_config: member_config.clone(),
            io: with_stats(io),
            members: members.clone(),
        },
    };
    adjusted.build().map_err(|e| e.to_string())
}

/// Benchmark baseline configurations: the simple recurrent starting points
/// the search improves on.
pub fn baseline_config(benchmark: Benchmark, seed: u64) -> SysIdConfiguration {
    match benchmark {
        Benchmark::Tank => SysIdConfiguration::new(ModelClass::VanillaRnn, seed)
            .with_arch("hidden_size", ParamValue::Int(4))
            .with_train("learning_rate", ParamValue::Float(0.01))
            .with_train("epochs", ParamValue::Int(40))
            .with_train("chunk_length", ParamValue::Int(512))
            .with_train("eval_cadence", ParamValue::Int(2))
            .with_train("patience", ParamValue::Int(10))
            .with_train("wall_budget_seconds", ParamValue::Float(240.0)),
        Benchmark::Drone => SysIdConfiguration::new(ModelClass::Lstm, seed)
            .with_arch("hidden_size", ParamValue::Int(32))
            .with_arch("feedback", ParamValue::Bool(true))
            .with_train("learning_rate", ParamValue::Float(1e-3))
            .with_train("epochs", ParamValue::Int(30))
            .with_train("chunk_length", ParamValue::Int(50))
            .with_train("batch_size", ParamValue::Int(16))
            .with_train("eval_cadence", ParamValue::Int(2))
            .with_train("patience", ParamValue::Int(8))
            .with_train("wall_budget_seconds", ParamValue::Float(600.0)),
    }
}

fn tank_space(seed: u64, base: &SysIdConfiguration) -> RandomSearchSpace {
    RandomSearchSpace {
        classes: vec![ModelClass::VanillaRnn, ModelClass::Lstm, ModelClass::Gru, ModelClass::Cfc],
        hidden: (4, 96),
        layers: (1, 2),
        learning_rate: (1e-4, 3e-2),
        dropout: (0.0, 0.2),
        weight_decay: (1e-7, 1e-3),
        base_train: base.train.clone(),
        base_arch: Default::default(),
        seed,
    }
}

#[derive(serde::Deserialize)]
struct PlanEntry {
    config: SysIdConfiguration,
    #[serde(default)]
    rationale: String,
}

fn search(args: SearchArgs) -> std::result::Result<(), CliError> {
    usage(require_dir(&args.out))?;
    let ds = usage(DatasetManifest::load(&args.data))?;
    let trajs = usage(ds.load_train(&args.data))?;
    let protocol = usage(ds.protocol(&trajs))?;
    let base = match &args.config {
        Some(path) => {
            let text = usage(
                std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display())),
            )?;
            usage(parse_config(&text).map_err(|e| anyhow!(e.to_string())))?
        }
        None => baseline_config(ds.benchmark, args.seed),
    };

    let mut proposer: Box<dyn Proposer> = match args.proposer {
        ProposerArg::Scripted => {
            let path = usage(args.plan.clone().ok_or_else(|| anyhow!("--plan is required for the scripted proposer")))?;
            let entries: Vec<PlanEntry> = usage(read_json(&path))?;
            let plan = entries.into_iter().map(|e| (e.config, e.rationale)).collect();
            Box::new(usage(ScriptedProposer::new(plan).map_err(|e| anyhow!(e.to_string())))?)
        }
        ProposerArg::Random => {
            let mut space = match ds.benchmark {
                Benchmark::Tank => tank_space(args.seed, &base),
                Benchmark::Drone => RandomSearchSpace {
                    base_train: base.train.clone(),
                    ..RandomSearchSpace::drone_default(args.seed)
                },
            };
            space.seed = args.seed;
            Box::new(usage(RandomProposer::new(space).map_err(|e| anyhow!(e.to_string())))?)
        }
        ProposerArg::Llm => {
            let path = usage(
                args.llm_config
                    .clone()
                    .ok_or_else(|| anyhow!("--llm-config is required for the llm proposer")),
            )?;
            let cfg: LlmProposerConfig = usage(read_json(&path))?;
            let problem = match &args.problem {
                Some(p) => usage(
                    std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
                )?,
                None => format!(
                    "Identify a dynamical system from sampled input/output trajectories \
                     ({:?} benchmark). Lower cross-validation metric is better.",
                    ds.benchmark
                ),
            };
            Box::new(usage(
                LlmProposer::new(cfg, problem, base.clone()).map_err(|e| anyhow!(e.to_string())),
            )?)
        }
    };

    let manifest = RunManifest::new("search")
        .with_seed(args.seed)
        .with_config(serde_json::to_value(&base).unwrap())
        .with_protocol_hash(protocol.content_hash())
        .with_io(ds.train_files.clone(), vec!["ledger.jsonl".into(), "checkpoint.json".into()]);
    usage(manifest.write(&args.out))?;

    let mut budget = SearchBudget::new(args.budget);
    budget.exploration_phase = args.explore.min(args.budget);
    budget.per_trial_wall_seconds = args.trial_budget;
    let ledger_path = args.out.join("ledger.jsonl");
    let opts = SearchOptions {
        ledger_path: Some(ledger_path.clone()),
        train: TrainOptions { wall_budget_override: args.trial_budget, jobs: args.jobs },
        on_trial: Some(Box::new(|r: &sysid_core::datamodel::TrialRecord| {
            println!(
                "iteration {}: {} metric {:?}",
                r.iteration,
                r.status.as_str(),
                r.aggregate_metric
            );
        })),
    };
    let outcome = failure(
        run_search(proposer.as_mut(), &protocol, &trajs, &budget, opts)
            .map_err(|e| anyhow!(e.to_string())),
    )?;

    failure(
        std::fs::write(args.out.join("ledger.csv"), ledger_csv(outcome.ledger.records()))
            .context("writing ledger.csv"),
    )?;
    match select_final(&outcome) {
        Ok((_, summary)) => {
            let best = outcome.best.as_ref().expect("select_final succeeded");
            let ckpt = Checkpoint::from_fold_models(&best.config, &best.fold_models);
            failure(
                save_checkpoint(&args.out.join("checkpoint.json"), &ckpt)
                    .map_err(|e| anyhow!(e.to_string())),
            )?;
            let best_json =
                failure(serialize_config(&best.config).map_err(|e| anyhow!(e.to_string())))?;
            failure(
                std::fs::write(args.out.join("best_config.json"), best_json)
                    .context("writing best_config.json"),
            )?;
            failure(
                std::fs::write(args.out.join("summary.txt"), &summary).context("writing summary"),
            )?;
            println!("{summary}");
            Ok(())
        }
        Err(e) => Err(CliError::Failure(anyhow!("search finished without a best model: {e}"))),
    }
}

fn report(args: ReportArgs) -> std::result::Result<(), CliError> {
    usage(require_dir(&args.out))?;
    let ledger = usage(SearchLedger::load(&args.ledger).map_err(|e| anyhow!(e.to_string())))?;
    if ledger.is_empty() {
        return Err(CliError::Failure(anyhow!(
            "ledger {} holds no trials; nothing to report",
            args.ledger.display()
        )));
    }
    let manifest = RunManifest::new("report").with_io(
        vec![args.ledger.display().to_string()],
        vec!["ledger.csv".into(), "mee_comparison.csv".into()],
    );
    usage(manifest.write(&args.out))?;

    failure(
        std::fs::write(args.out.join("ledger.csv"), ledger_csv(ledger.records()))
            .context("writing ledger.csv"),
    )?;

    let mut rows: Vec<MeeRow> = Vec::new();
    if args.include_reference {
        rows.extend(reference_rows());
    }
    for path in &args.mee {
        let report: MetricReport = usage(read_json(path))?;
        let table = usage(report.mee.ok_or_else(|| {
            anyhow!("{} carries no MEE table (tank reports have none)", path.display())
        }))?;
        let label = path.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
        rows.push(MeeRow::from_table(label, &table));
    }
    if !rows.is_empty() {
        failure(
            std::fs::write(args.out.join("mee_comparison.csv"), mee_table_csv(&rows))
                .context("writing mee_comparison.csv"),
        )?;
    }
    println!("report written to {}", args.out.display());
    Ok(())
}
