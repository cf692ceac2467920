use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use rejectkit::calibration::{self, CalibrationConfig, PercentileGrid};
use rejectkit::evaluation;
use rejectkit::ingest::{self, Format};
use rejectkit::model::ScoreTable;
use rejectkit::split::{self, SplitFractions};
use rejectkit::synth::{self, GeneratorSpec};
use rejectkit::{rejection, Error, Mechanism, Mode, Scope, ThresholdArtifact};

#[derive(Parser)]
#[command(name = "rejectkit", version, about = "Uncertainty-based rejection for multi-label classifier scores")]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "REJECTKIT_THREADS")]
    threads: Option<usize>,
    /// Print a human-readable summary to stdout.
    #[arg(long, global = true)]
    pretty: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
enum Command {
    /// Calibrate rejection thresholds on a score file.
    Calibrate(CalibrateArgs),
    /// Write the selection mask for a score file.
    Apply(ApplyArgs),
    /// Baseline vs selective metrics per source and class.
    Evaluate(ApplyArgs),
    /// Bootstrap CIs for baseline and selective F1.
    Bootstrap(BootstrapArgs),
    /// Risk-coverage curve over a percentile grid.
    Riskcov(RiskcovArgs),
    /// Selective AUC of an entropy artifact next to an interval artifact.
    Compare(CompareArgs),
    /// Generate a synthetic score table.
    Simulate(SimulateArgs),
    /// Partition a score table into train/cal/eval.
    Split(SplitArgs),
}

#[derive(Args, Serialize)]
struct Output {
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct Input {
    #[arg(long)]
    scores: PathBuf,
    /// Defaults to the file extension (.jsonl, otherwise csv).
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Args, Serialize)]
struct GridArgs {
    #[arg(long, default_value_t = 75.0)]
    grid_start: f64,
    #[arg(long, default_value_t = 95.0)]
    grid_end: f64,
    #[arg(long, default_value_t = 2.5)]
    grid_step: f64,
}

#[derive(Args, Serialize)]
struct MethodArgs {
    #[arg(long, value_enum, default_value_t = MechanismArg::Entropy)]
    mechanism: MechanismArg,
    #[arg(long, value_enum, default_value_t = ScopeArg::ClassSpecific)]
    scope: ScopeArg,
    #[arg(long, value_enum, default_value_t = ModeArg::PerClass)]
    mode: ModeArg,
    /// Decision boundary.
    #[arg(long, default_value_t = 0.5)]
    theta: f64,
}

#[derive(Args, Serialize)]
struct CalibrateArgs {
    #[command(flatten)]
    input: Input,
    #[command(flatten)]
    method: MethodArgs,
    /// Maximum mean per-class rejection rate.
    #[arg(long, default_value_t = 0.25)]
    budget: f64,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Serialize)]
struct ApplyArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long)]
    thresholds: PathBuf,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Serialize)]
struct BootstrapArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long)]
    thresholds: PathBuf,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Serialize)]
struct RiskcovArgs {
    #[command(flatten)]
    input: Input,
    #[command(flatten)]
    method: MethodArgs,
    #[command(flatten)]
    grid: GridArgs,
    /// Omit the accept-everything row at the top of the curve.
    #[arg(long)]
    no_endpoint: bool,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Serialize)]
struct CompareArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long)]
    entropy: PathBuf,
    #[arg(long)]
    interval: PathBuf,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    /// Generator spec JSON; the built-in default when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the spec's sample count.
    #[arg(long)]
    n_samples: Option<usize>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Serialize)]
struct SplitArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, value_enum, default_value_t = StrategyArg::IntraSource)]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 0.8)]
    train: f64,
    #[arg(long, default_value_t = 0.0)]
    cal: f64,
    /// Sources held out for evaluation (inter-source only).
    #[arg(long = "held-out", value_delimiter = ',')]
    held_out: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Decision boundary stored with the written tables.
    #[arg(long, default_value_t = 0.5)]
    theta: f64,
    #[command(flatten)]
    output: Output,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum MechanismArg {
    Entropy,
    Interval,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ScopeArg {
    Global,
    ClassSpecific,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ModeArg {
    PerClass,
    ImageLevel,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum FormatArg {
    Csv,
    Jsonl,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum StrategyArg {
    IntraSource,
    InterSource,
}

impl From<MechanismArg> for Mechanism {
    fn from(m: MechanismArg) -> Self {
        match m {
            MechanismArg::Entropy => Mechanism::Entropy,
            MechanismArg::Interval => Mechanism::Interval,
        }
    }
}

impl From<ScopeArg> for Scope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::Global => Scope::Global,
            ScopeArg::ClassSpecific => Scope::ClassSpecific,
        }
    }
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::PerClass => Mode::PerClass,
            ModeArg::ImageLevel => Mode::ImageLevel,
        }
    }
}

impl Input {
    fn format(&self) -> Format {
        match self.format {
            Some(FormatArg::Csv) => Format::Csv,
            Some(FormatArg::Jsonl) => Format::Jsonl,
            None => Format::from_path(&self.scores),
        }
    }

    /// Reads the table with class names taken from the file itself.
    fn read(&self, theta: f64) -> Result<ScoreTable<f64>, Error> {
        let fmt = self.format();
        let schema = ingest::infer_schema(&self.scores, fmt, theta)?;
        ingest::read_scores(&self.scores, fmt, schema)
    }
}

impl GridArgs {
    fn grid(&self) -> Result<PercentileGrid<f64>, Error> {
        PercentileGrid::new(self.grid_start, self.grid_end, self.grid_step)
    }
}

impl MethodArgs {
    fn config(&self, grid: PercentileGrid<f64>) -> CalibrationConfig<f64> {
        let mut cfg = CalibrationConfig::new(self.mechanism.into(), self.scope.into());
        cfg.mode = self.mode.into();
        cfg.grid = grid;
        cfg.theta = self.theta;
        cfg
    }
}

/// Failure carrying its exit code; the error JSON goes to stderr.
struct Failure {
    exit: u8,
    code: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let exit = if matches!(e, Error::CalibrationDegenerate) { 3 } else { 2 };
        Failure { exit, code: e.code(), message: e.to_string() }
    }
}

type CmdResult = Result<Outcome, Failure>;

enum Outcome {
    Done,
    BudgetInfeasible(String),
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), Error> {
    w.flush().map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn out_dir(o: &Output) -> Result<&Path, Error> {
    fs::create_dir_all(&o.out).map_err(|e| Error::Io { path: o.out.clone(), source: e })?;
    Ok(&o.out)
}

fn write_run_json(dir: &Path, command: &Command) -> Result<(), Error> {
    let run = json!({
        "tool": "rejectkit",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
    });
    let mut text = serde_json::to_string_pretty(&run)?;
    text.push('\n');
    write_text(&dir.join("run.json"), &text)
}

/// Reads an artifact and the score file it is meant for.
fn artifact_and_table(input: &Input, path: &Path) -> Result<(ThresholdArtifact, ScoreTable<f64>), Error> {
    let artifact = ThresholdArtifact::read(path)?;
    let table = input.read(artifact.theta)?;
    artifact.check_schema(table.schema())?;
    Ok((artifact, table))
}

fn calibrate(a: &CalibrateArgs, pretty: bool) -> CmdResult {
    let dir = out_dir(&a.output)?;
    let table = a.input.read(a.method.theta)?;
    let mut cfg = a.method.config(a.grid.grid()?);
    cfg.budget = a.budget;
    let cal = calibration::calibrate(&table, &cfg)?;

    write_text(&dir.join("thresholds.json"), &cal.artifact.to_json())?;
    let path = dir.join("calibration_sweep.csv");
    let mut w = create(&path)?;
    calibration::write_sweep_csv(&cal.sweep, table.schema().class_names(), &mut w)?;
    finish(w, &path)?;

    if pretty {
        let names = table.schema().class_names();
        println!("{} / {} / {}", cal.artifact.mechanism, cal.artifact.scope, cal.artifact.mode);
        for (c, name) in names.iter().enumerate() {
            println!("{name:<24} {:.6}", cal.artifact.threshold_for(c));
        }
    }
    if cal.artifact.has_budget_infeasible() {
        return Ok(Outcome::BudgetInfeasible(format!(
            "no grid point satisfies budget {}; lowest-rejection point written",
            a.budget
        )));
    }
    Ok(Outcome::Done)
}

fn apply(a: &ApplyArgs, pretty: bool) -> CmdResult {
    let dir = out_dir(&a.output)?;
    let (artifact, table) = artifact_and_table(&a.input, &a.thresholds)?;
    let mask = rejection::apply(&table, &artifact)?;
    let path = dir.join("mask.csv");
    let mut w = create(&path)?;
    mask.write_csv(&table, &mut w)?;
    finish(w, &path)?;
    if pretty {
        let rates: Vec<f64> = mask.class_rejection_rates()?;
        for (name, r) in table.schema().class_names().iter().zip(rates) {
            println!("{name:<24} rejected {:.2}%", 100.0 * r);
        }
    }
    Ok(Outcome::Done)
}

fn evaluate(a: &ApplyArgs, pretty: bool) -> CmdResult {
    let dir = out_dir(&a.output)?;
    let (artifact, table) = artifact_and_table(&a.input, &a.thresholds)?;
    let report = evaluation::evaluate(&table, &artifact)?;
    write_text(&dir.join("report.json"), &report.to_json())?;
    let path = dir.join("report.csv");
    let mut w = create(&path)?;
    report.write_csv(&mut w)?;
    finish(w, &path)?;
    if pretty {
        print!("{}", report.render());
    }
    Ok(Outcome::Done)
}

fn bootstrap(a: &BootstrapArgs, pretty: bool) -> CmdResult {
    let dir = out_dir(&a.output)?;
    let (artifact, table) = artifact_and_table(&a.input, &a.thresholds)?;
    let res = evaluation::bootstrap_f1(&table, &artifact, a.iterations, a.seed)?;
    let path = dir.join("bootstrap_iterations.csv");
    let mut w = create(&path)?;
    res.write_iterations_csv(&mut w)?;
    finish(w, &path)?;
    let summary = res.summary_json();
    write_text(&dir.join("bootstrap_summary.json"), &summary)?;
    if pretty {
        print!("{summary}");
    }
    Ok(Outcome::Done)
}

fn riskcov(a: &RiskcovArgs, pretty: bool) -> CmdResult {
    let dir = out_dir(&a.output)?;
    let table = a.input.read(a.method.theta)?;
    let cfg = a.method.config(a.grid.grid()?);
    let mut points = Vec::new();
    if !a.no_endpoint {
        points.push(calibration::accept_all_point(&table, &cfg)?);
    }
    points.extend(calibration::risk_coverage_sweep(&table, &cfg)?);
    let path = dir.join("risk_coverage.csv");
    let mut w = create(&path)?;
    calibration::write_sweep_csv(&points, table.schema().class_names(), &mut w)?;
    finish(w, &path)?;
    if pretty {
        for p in &points {
            let q = p.percentile.map(|q| q.to_string()).unwrap_or_else(|| "-".into());
            let auc = p.mean_auc.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
            println!("{q:>6} coverage {:.4} mean_auc {auc}", p.coverage);
        }
    }
    Ok(Outcome::Done)
}

fn compare(a: &CompareArgs, pretty: bool) -> CmdResult {
    let dir = out_dir(&a.output)?;
    let (entropy, table) = artifact_and_table(&a.input, &a.entropy)?;
    let interval = ThresholdArtifact::read(&a.interval)?;
    let report = evaluation::compare_mechanisms(&table, &entropy, &interval)?;
    let path = dir.join("comparison.csv");
    let mut w = create(&path)?;
    report.write_csv(&mut w)?;
    finish(w, &path)?;
    if pretty {
        println!("{}", serde_json::to_string_pretty(&report.to_value()).map_err(Error::from)?);
    }
    Ok(Outcome::Done)
}

fn simulate(a: &SimulateArgs, pretty: bool) -> CmdResult {
    let dir = out_dir(&a.output)?;
    let mut spec = match &a.spec {
        Some(p) => GeneratorSpec::read(p)?,
        None => GeneratorSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(n) = a.n_samples {
        spec.n_samples = n;
    }
    let g = synth::generate::<f64>(&spec)?;
    ingest::write_scores(&g.table, &dir.join("scores.csv"), Format::Csv)?;
    let path = dir.join("truth.csv");
    let mut w = create(&path)?;
    g.write_truth_csv(&mut w)?;
    finish(w, &path)?;
    write_text(&dir.join("generator_spec.json"), &spec.to_json())?;
    if pretty {
        println!("{} samples, {} classes, seed {}", g.table.len(), g.table.n_classes(), spec.seed);
    }
    Ok(Outcome::Done)
}

fn split(a: &SplitArgs, pretty: bool) -> CmdResult {
    let dir = out_dir(&a.output)?;
    let table = a.input.read(a.theta)?;
    let strategy = match a.strategy {
        StrategyArg::IntraSource => split::SplitStrategy::IntraSource,
        StrategyArg::InterSource => split::SplitStrategy::InterSource,
    };
    let fractions = SplitFractions { train: a.train, cal: a.cal };
    let manifest = split::make_split(&table, strategy, fractions, &a.held_out, a.seed)?;
    let parts = manifest.partition(&table)?;
    let path = dir.join("manifest.csv");
    let mut w = create(&path)?;
    manifest.write_csv(&mut w)?;
    finish(w, &path)?;
    for (name, t) in [("train", &parts.train), ("cal", &parts.cal), ("eval", &parts.eval)] {
        ingest::write_scores(t, &dir.join(format!("split_{name}.csv")), Format::Csv)?;
    }
    if pretty {
        println!("train {} cal {} eval {}", parts.train.len(), parts.cal.len(), parts.eval.len());
    }
    Ok(Outcome::Done)
}

fn output_of(c: &Command) -> &Output {
    match c {
        Command::Calibrate(a) => &a.output,
        Command::Apply(a) | Command::Evaluate(a) => &a.output,
        Command::Bootstrap(a) => &a.output,
        Command::Riskcov(a) => &a.output,
        Command::Compare(a) => &a.output,
        Command::Simulate(a) => &a.output,
        Command::Split(a) => &a.output,
    }
}

fn run(cli: &Cli) -> CmdResult {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure {
            exit: 2,
            code: "INVALID_CONFIG",
            message: e.to_string(),
        })?;
    }
    let dir = out_dir(output_of(&cli.command))?;
    write_run_json(dir, &cli.command)?;
    let p = cli.pretty;
    match &cli.command {
        Command::Calibrate(a) => calibrate(a, p),
        Command::Apply(a) => apply(a, p),
        Command::Evaluate(a) => evaluate(a, p),
        Command::Bootstrap(a) => bootstrap(a, p),
        Command::Riskcov(a) => riskcov(a, p),
        Command::Compare(a) => compare(a, p),
        Command::Simulate(a) => simulate(a, p),
        Command::Split(a) => split(a, p),
    }
}

fn report(code: &str, message: &str) {
    eprintln!("{}", json!({ "error": code, "message": message }));
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::BudgetInfeasible(msg)) => {
            report("BUDGET_INFEASIBLE", &msg);
            ExitCode::from(4)
        }
        Err(f) => {
            report(f.code, &f.message);
            ExitCode::from(f.exit)
        }
    }
}
