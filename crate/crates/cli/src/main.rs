//! `tradeoff`: complexity analysis, training, architecture search and
//! gradient checking from the command line.

mod manifest;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

use manifest::{absolute, Manifest};
use tradeoff::gradcheck::{self, Fault, GradcheckConfig, LayerKind};
use tradeoff::mnist;
use tradeoff::model::Activation;
use tradeoff::netspec::{
    diff_reports, parse_spec, presets, reference, serialize_spec, ComplexityReport, Convention,
    NetSpec,
};
use tradeoff::search::{
    build_frontier, export_curves, parse_plan, run_plan, select_minimal, AccuracyOracle, Ledger,
    PublishedOracle, TrainedOracle,
};
use tradeoff::trainer::{self, TrainConfig};
use tradeoff::Error;

const DEFAULT_DATA_DIR: &str = "data/mnist";

#[derive(Parser, Debug)]
#[command(
    name = "tradeoff",
    version,
    about,
    arg_required_else_help = true,
    args_conflicts_with_subcommands = true
)]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,

    /// Re-run the command recorded in a run manifest.
    #[arg(long, value_name = "MANIFEST")]
    replay: Option<PathBuf>,

    /// With --replay, write outputs here instead of the recorded directory.
    #[arg(long, value_name = "DIR", requires = "replay")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-layer activation memory and parameter counts.
    Analyze(AnalyzeArgs),
    /// Train a network on MNIST and write a checkpoint.
    Train(TrainArgs),
    /// Run a search plan and select the smallest network meeting the threshold.
    Search(SearchArgs),
    /// Compare analytical gradients with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Spec file or preset name (baseline, iteration1, optimized).
    spec: String,
    /// Second spec; prints both reports and the totals comparison.
    other: Option<String>,
    #[arg(long, default_value = "weights-only")]
    convention: Convention,
    /// Show memory in bytes at this many bytes per element.
    #[arg(long, value_name = "N")]
    bytes: Option<u64>,
    /// Machine-readable key=value output.
    #[arg(long)]
    kv: bool,
    /// Check every cell against a published layer ledger.
    #[arg(long, value_name = "LEDGER", value_parser = ["baseline", "iteration1", "optimized"])]
    expect_golden: Option<String>,
    /// Also write the report and a run manifest here.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Directory holding the four canonical MNIST IDX files.
    #[arg(long, env = "TRADEOFF_DATA_DIR", default_value = DEFAULT_DATA_DIR)]
    data_dir: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Spec file or preset name.
    spec: String,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Override the keep probability of every dropout layer.
    #[arg(long)]
    keep: Option<f64>,
    #[arg(long)]
    activation: Option<Activation>,
    /// Record validation accuracy every N iterations.
    #[arg(long, value_name = "N", default_value_t = 0)]
    eval_every: usize,
    #[arg(long, value_name = "DIR", default_value = "runs/train")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum OracleKind {
    /// Train every candidate with the plan schedule.
    Trained,
    /// Look accuracies up in the published tables.
    Table,
}

#[derive(Args, Debug)]
struct SearchArgs {
    /// Search plan file.
    plan: PathBuf,
    #[arg(long, value_enum, default_value_t = OracleKind::Trained)]
    oracle: OracleKind,
    /// Override the plan threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// Parallel training workers (default: available cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Evaluate the full product of stage values instead of the greedy path.
    #[arg(long)]
    exhaustive: bool,
    #[command(flatten)]
    data: DataArgs,
    /// Output directory; an existing ledger there is resumed.
    #[arg(long, value_name = "DIR", default_value = "runs/search")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Comma-separated subset of conv, maxpool, dense, relu, softmax, network.
    #[arg(long, value_delimiter = ',')]
    layers: Vec<LayerKind>,
    #[arg(long, default_value_t = 20)]
    cases: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, hide = true)]
    inject_fault: Option<Fault>,
    /// Also write the report and a run manifest here.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

enum Failure {
    Core(Error),
    Usage(String),
    GoldenMismatch(usize),
    Gradcheck(Vec<&'static str>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(e) => match e {
                Error::Io(_) => 1,
                Error::InvalidArgument(_) => 2,
                Error::Parse { .. } | Error::Layer { .. } | Error::Shape { .. } => 3,
                Error::Idx { .. } | Error::MissingData { .. } | Error::Format(_) => 4,
                Error::Divergence { .. } | Error::NonFiniteGradient { .. } => 5,
                Error::Infeasible { .. } => 6,
            },
            Failure::Usage(_) => 2,
            Failure::GoldenMismatch(_) => 7,
            Failure::Gradcheck(_) => 8,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Core(e @ Error::MissingData { .. }) => format!(
                "{e}\nexpected {}; fetch them with scripts/fetch-mnist.sh <dir> or set TRADEOFF_DATA_DIR",
                mnist::CANONICAL_FILES.join(", ")
            ),
            Failure::Core(e) => e.to_string(),
            Failure::Usage(m) => m.clone(),
            Failure::GoldenMismatch(n) => format!("{n} cell(s) differ from the published ledger"),
            Failure::Gradcheck(layers) => format!("gradient check failed for: {}", layers.join(", ")),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn load_spec(arg: &str) -> Result<NetSpec, Failure> {
    let path = Path::new(arg);
    if !path.exists() {
        if let Some(spec) = presets::by_name(arg) {
            return Ok(spec);
        }
    }
    let text = fs::read_to_string(path).map_err(|e| {
        Failure::Usage(format!(
            "{arg}: not a readable spec file or preset name ({e})"
        ))
    })?;
    parse_spec(&text).map_err(|e| match e {
        Error::Parse { line, message } => Failure::Core(Error::Parse {
            line,
            message: format!("{arg}: {message}"),
        }),
        other => other.into(),
    })
}

/// Spec argument as recorded in a manifest.
fn spec_arg(arg: &str) -> String {
    if Path::new(arg).exists() || presets::by_name(arg).is_none() {
        absolute(Path::new(arg))
    } else {
        arg.to_string()
    }
}

fn create_dir(dir: &Path) -> Result<String, Failure> {
    fs::create_dir_all(dir)?;
    Ok(absolute(dir))
}

fn analyze(a: &AnalyzeArgs) -> Outcome {
    let spec = load_spec(&a.spec)?;
    let report = ComplexityReport::analyze(&spec, a.convention)?;
    let render = |r: &ComplexityReport| {
        if a.kv {
            r.render_kv()
        } else {
            r.render_table(a.bytes)
        }
    };
    let mut out = render(&report);
    if let Some(other) = &a.other {
        let other_report = ComplexityReport::analyze(&load_spec(other)?, a.convention)?;
        out.push('\n');
        out.push_str(&render(&other_report));
        out.push('\n');
        out.push_str(&diff_reports(&report, &other_report).to_string());
    }
    let mut mismatches = 0;
    if let Some(key) = &a.expect_golden {
        let ledger = reference::ledger(key).expect("clap restricts the ledger names");
        let golden = ComplexityReport::analyze(&spec, Convention::WeightsOnly)?;
        let checks = reference::check(&golden, &ledger);
        mismatches = checks
            .iter()
            .filter(|c| c.status == reference::CellStatus::Mismatch)
            .count();
        let _ = writeln!(out, "\n{}", ledger.title);
        out.push_str(&reference::render_checks(&checks));
        let _ = writeln!(
            out,
            "{}: {} cells, {mismatches} mismatched",
            if mismatches == 0 {
                "golden OK"
            } else {
                "golden MISMATCH"
            },
            checks.len()
        );
    }
    print!("{out}");
    if let Some(dir) = &a.out {
        let dir_abs = create_dir(dir)?;
        fs::write(dir.join("report.txt"), &out)?;
        let mut args = vec!["analyze".to_string(), spec_arg(&a.spec)];
        args.extend(a.other.as_deref().map(spec_arg));
        args.push(format!("--convention={}", a.convention));
        args.extend(a.bytes.map(|b| format!("--bytes={b}")));
        args.extend(a.kv.then(|| "--kv".to_string()));
        args.extend(
            a.expect_golden
                .as_ref()
                .map(|g| format!("--expect-golden={g}")),
        );
        args.push(format!("--out={dir_abs}"));
        Manifest::new("analyze", args)
            .field("spec", &a.spec)
            .write(dir)?;
    }
    if mismatches > 0 {
        return Err(Failure::GoldenMismatch(mismatches));
    }
    Ok(())
}

fn train_config(a: &TrainArgs) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        learning_rate: a.lr.unwrap_or(d.learning_rate),
        batch_size: a.batch.unwrap_or(d.batch_size),
        iterations: a.iterations.unwrap_or(d.iterations),
        dropout_keep: a.keep,
        seed: a.seed,
        activation: a.activation.unwrap_or(d.activation),
        eval_every: a.eval_every,
        ..d
    }
}

fn train(a: &TrainArgs) -> Outcome {
    let spec = load_spec(&a.spec)?;
    let config = train_config(a);
    config.validate()?;
    let data = mnist::load_dir(&a.data.data_dir)?;
    let out_abs = create_dir(&a.out)?;

    let mut args = vec![
        "train".to_string(),
        spec_arg(&a.spec),
        format!("--data-dir={}", absolute(&a.data.data_dir)),
        format!("--iterations={}", config.iterations),
        format!("--seed={}", config.seed),
        format!("--batch={}", config.batch_size),
        format!("--lr={}", config.learning_rate),
        format!("--activation={}", config.activation),
        format!("--eval-every={}", config.eval_every),
        format!("--out={out_abs}"),
    ];
    args.extend(config.dropout_keep.map(|k| format!("--keep={k}")));
    Manifest::new("train", args)
        .field("spec", &a.spec)
        .field("seed", config.seed)
        .field("data_dir", absolute(&a.data.data_dir))
        .field("out_dir", &out_abs)
        .write(&a.out)?;

    let model = trainer::train_model(&spec, &data, &config)?;
    model.checkpoint().save(a.out.join("checkpoint.bin"))?;

    let r = &model.result;
    let mut results = String::new();
    let _ = writeln!(results, "spec={}", spec.name);
    let _ = writeln!(results, "iterations={}", config.iterations);
    let _ = writeln!(results, "seed={}", config.seed);
    let _ = writeln!(results, "test_accuracy={}", r.final_test_accuracy);
    if let Some(&(_, loss)) = r.loss_trace.last() {
        let _ = writeln!(results, "final_loss={loss}");
    }
    for (it, acc) in &r.eval_trace {
        let _ = writeln!(results, "validation_accuracy.{it}={acc}");
    }
    fs::write(a.out.join("results.txt"), results)?;
    let mut trace = String::from("iteration,loss\n");
    for (it, loss) in &r.loss_trace {
        let _ = writeln!(trace, "{it},{loss}");
    }
    fs::write(a.out.join("loss.csv"), trace)?;

    println!("test accuracy: {:.4}", r.final_test_accuracy);
    println!(
        "{} iterations in {:.1}s; outputs in {}",
        config.iterations,
        r.wall_time_seconds,
        a.out.display()
    );
    Ok(())
}

fn search(a: &SearchArgs) -> Outcome {
    let text = fs::read_to_string(&a.plan)?;
    let mut plan = parse_plan(&text, a.plan.parent())?;
    if let Some(t) = a.threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(Failure::Usage(format!(
                "threshold must be in [0, 1], got {t}"
            )));
        }
        plan.threshold = t;
    }
    plan.exhaustive |= a.exhaustive;
    let workers = a
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let out_abs = create_dir(&a.out)?;

    let mut args = vec![
        "search".to_string(),
        absolute(&a.plan),
        format!("--oracle={}", oracle_name(a.oracle)),
        format!("--threshold={}", plan.threshold),
        format!("--workers={workers}"),
        format!("--data-dir={}", absolute(&a.data.data_dir)),
        format!("--out={out_abs}"),
    ];
    args.extend(a.exhaustive.then(|| "--exhaustive".to_string()));
    Manifest::new("search", args)
        .field("plan", absolute(&a.plan))
        .field("seeds", format!("{:?}", plan.seeds))
        .field("out_dir", &out_abs)
        .write(&a.out)?;

    let mut ledger = Ledger::open(a.out.join("ledger.txt"))?;
    let data;
    let table;
    let trained;
    let oracle: &dyn AccuracyOracle = match a.oracle {
        OracleKind::Table => {
            table = PublishedOracle::new();
            &table
        }
        OracleKind::Trained => {
            data = mnist::load_dir(&a.data.data_dir)?;
            trained = TrainedOracle::new(&data, plan.schedule.clone());
            &trained
        }
    };
    let outcome = run_plan(&plan, oracle, &mut ledger, workers)?;

    let mut frontier = String::from("size,accuracy,id\n");
    for p in build_frontier(&outcome.results) {
        let _ = writeln!(frontier, "{},{},{}", p.size, p.accuracy, p.id);
    }
    fs::write(a.out.join("frontier.csv"), frontier)?;
    fs::write(a.out.join("curves.csv"), export_curves(&outcome.results))?;

    println!(
        "{:<28} {:>10} {:>8} {:>9}",
        "candidate", "params", "memory", "accuracy"
    );
    for r in &outcome.results {
        let flag = if r.diverged { "  diverged" } else { "" };
        println!(
            "{:<28} {:>10} {:>8} {:>9.4}{flag}",
            r.id, r.params, r.memory, r.accuracy
        );
    }
    for (stage, carried) in &outcome.path {
        println!("stage {stage} carried {carried}");
    }
    let selected_path = a.out.join("selected.spec");
    match select_minimal(&outcome.results, plan.threshold) {
        Ok(best) => {
            let mut spec = best.spec.clone();
            spec.name = best.id.clone();
            fs::write(&selected_path, serialize_spec(&spec))?;
            println!(
                "selected {} at threshold {}: {} params, {} memory, accuracy {:.4}",
                best.id, plan.threshold, best.params, best.memory, best.accuracy
            );
            Ok(())
        }
        Err(e) => {
            if selected_path.exists() {
                fs::remove_file(&selected_path)?;
            }
            Err(e.into())
        }
    }
}

fn oracle_name(kind: OracleKind) -> &'static str {
    match kind {
        OracleKind::Trained => "trained",
        OracleKind::Table => "table",
    }
}

fn gradcheck_cmd(a: &GradcheckArgs) -> Outcome {
    let config = GradcheckConfig {
        layers: if a.layers.is_empty() {
            LayerKind::ALL.to_vec()
        } else {
            a.layers.clone()
        },
        cases: a.cases,
        seed: a.seed,
        tolerance: a.tolerance,
        fault: a.inject_fault,
        ..GradcheckConfig::default()
    };
    let report = gradcheck::run(&config)?;
    let rendered = report.render();
    print!("{rendered}");
    if let Some(dir) = &a.out {
        let dir_abs = create_dir(dir)?;
        fs::write(dir.join("report.txt"), &rendered)?;
        let layers: Vec<&str> = config.layers.iter().map(|l| l.name()).collect();
        let mut args = vec![
            "gradcheck".to_string(),
            format!("--layers={}", layers.join(",")),
            format!("--cases={}", a.cases),
            format!("--seed={}", a.seed),
            format!("--tolerance={}", a.tolerance),
            format!("--out={dir_abs}"),
        ];
        args.extend(
            a.inject_fault
                .map(|_| "--inject-fault=conv-sign-flip".to_string()),
        );
        Manifest::new("gradcheck", args).write(dir)?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Gradcheck(
            report.failing_layers().iter().map(|l| l.name()).collect(),
        ))
    }
}

fn run(command: &Command) -> Outcome {
    match command {
        Command::Analyze(a) => analyze(a),
        Command::Train(a) => train(a),
        Command::Search(a) => search(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    }
}

fn replay(path: &Path, out: Option<&Path>) -> Outcome {
    let m = Manifest::read(path)?;
    let mut args = vec!["tradeoff".to_string()];
    args.extend(m.args.iter().cloned());
    if let Some(dir) = out {
        args.retain(|a| !a.starts_with("--out="));
        args.push(format!("--out={}", dir.display()));
    }
    let cli = Cli::try_parse_from(&args).map_err(|e| {
        Failure::Usage(format!(
            "{}: recorded arguments are invalid: {e}",
            path.display()
        ))
    })?;
    let command = cli
        .command
        .ok_or_else(|| Failure::Usage(format!("{} records no command", path.display())))?;
    log::info!("replaying {} from {}", m.command, path.display());
    run(&command)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let outcome = match (&cli.replay, &cli.command) {
        (Some(path), _) => replay(path, cli.out.as_deref()),
        (None, Some(command)) => run(command),
        (None, None) => Err(Failure::Usage("no command given; see --help".into())),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn argument_definitions_are_consistent() {
        Cli::command().debug_assert();
    }
}
