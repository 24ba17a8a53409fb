//! `semshift`: lexical semantic change detection from the command line.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 data error,
//! 3 non-convergence when `--fail-on-nonconvergence` is set.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "semshift", version, about = "Sense usage shift scores from unbalanced optimal transport")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Read DWUG-style uses and senses tables and write a JSONL instance dump.
    Ingest(IngestArgs),
    /// Run the per-word pipeline over the λ and damping grids, filling the cache.
    Process(ProcessArgs),
    /// Export the per-instance SUS table of one word at one λ.
    Sus(WordLambdaArgs),
    /// Solve OT or UOT between two embedding matrices.
    Solve(SolveArgs),
    /// Affinity propagation clusters and estimated sense frequencies.
    Baseline(BaselineArgs),
    /// Repeated validation/test evaluation against gold senses.
    Eval(EvalArgs),
    /// Dump the transport plan of one word at one λ.
    ExportPlan(ExportPlanArgs),
    /// Write a synthetic corpus with known sense frequency shifts.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads; 1 runs everything serially.
    #[arg(long)]
    threads: Option<usize>,
    /// Artifact cache directory (default: $SEMSHIFT_CACHE_DIR, else ./semshift-cache).
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Exit with status 3 if any solver or clustering run does not converge.
    #[arg(long)]
    fail_on_nonconvergence: bool,
}

#[derive(Debug, Args)]
struct InputArgs {
    /// JSONL instance dump written by `ingest`.
    #[arg(long)]
    instances: Option<PathBuf>,
    /// `.suse` embedding matrix with its sibling `.ids` file.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Drop instances without a gold sense.
    #[arg(long)]
    drop_undefined: bool,
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Comma-separated λ values.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    /// Comma-separated damping values for affinity propagation.
    #[arg(long, value_delimiter = ',')]
    damping_grid: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Tab-separated usage table.
    #[arg(long)]
    uses: Option<PathBuf>,
    /// Tab-separated sense assignment table.
    #[arg(long)]
    senses: Option<PathBuf>,
    /// Output directory; receives instances.jsonl.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Grouping label to period, e.g. `1=old`; repeatable.
    #[arg(long, value_parser = parse_grouping)]
    grouping: Vec<(String, semshift::ingest::Period)>,
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ProcessArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    grids: GridArgs,
    /// Restrict to these words; repeatable.
    #[arg(long)]
    word: Vec<String>,
    /// λ for the exported tables.
    #[arg(long)]
    lambda: Option<f64>,
    /// Directory for word-level scores and per-instance tables.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct WordLambdaArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    word: String,
    #[arg(long)]
    lambda: Option<f64>,
    /// Output CSV; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PlanFormat {
    Csv,
    Suse,
}

#[derive(Debug, Args)]
struct ExportPlanArgs {
    #[command(flatten)]
    inner: WordLambdaArgs,
    #[arg(long, value_enum, default_value = "csv")]
    format: PlanFormat,
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// Old-period embeddings (`.suse`).
    #[arg(long)]
    source: PathBuf,
    /// Modern-period embeddings (`.suse`).
    #[arg(long)]
    target: PathBuf,
    /// Penalty weight for both marginals; exact balanced OT if absent.
    #[arg(long)]
    lambda: Option<f64>,
    /// Plan output as CSV (row id, column id, mass).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    fail_on_nonconvergence: bool,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    input: InputArgs,
    /// Comma-separated damping values.
    #[arg(long, value_delimiter = ',')]
    damping_grid: Option<Vec<f64>>,
    /// Restrict to these words; repeatable.
    #[arg(long)]
    word: Vec<String>,
    /// Output directory for cluster tables and SFDs.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    grids: GridArgs,
    /// instance, sense, word-magnitude or word-scope.
    #[arg(long)]
    task: String,
    /// Methods to evaluate; every method of the task if absent.
    #[arg(long, value_delimiter = ',')]
    method: Vec<String>,
    /// Comma-separated threshold ratios.
    #[arg(long, value_delimiter = ',')]
    r_grid: Option<Vec<f64>>,
    /// Seed for the word splits.
    #[arg(long)]
    seed: Option<u64>,
    /// Validation/test splits to average over.
    #[arg(long)]
    repetitions: Option<usize>,
    /// Restrict to these words; repeatable.
    #[arg(long)]
    word: Vec<String>,
    /// Report JSON path; a CSV summary is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Directory for the corpus files and a matching config.json.
    #[arg(long)]
    out: PathBuf,
    /// RNG seed for the corpus.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of pseudo-words.
    #[arg(long)]
    words: Option<usize>,
    /// Instances per word and period.
    #[arg(long)]
    per_period: Option<usize>,
}

fn parse_grouping(raw: &str) -> Result<(String, semshift::ingest::Period), String> {
    let (label, period) = raw.split_once('=').ok_or("expected LABEL=old or LABEL=modern")?;
    let period = match period.to_ascii_lowercase().as_str() {
        "old" => semshift::ingest::Period::Old,
        "modern" => semshift::ingest::Period::Modern,
        other => return Err(format!("unknown period {other:?}")),
    };
    Ok((label.to_string(), period))
}

/// Failure with its exit status.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { code: 1, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    pub fn nonconvergence(message: impl Into<String>) -> Self {
        CliError { code: 3, message: message.into() }
    }
}

impl From<semshift::Error> for CliError {
    fn from(e: semshift::Error) -> Self {
        match e {
            semshift::Error::Config(_) | semshift::Error::InvalidArgument(_) => CliError::usage(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn base_config(path: Option<&PathBuf>) -> CliResult<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).map_err(|e| CliError::usage(e.to_string())),
        None => Ok(RunConfig::default()),
    }
}

impl RunArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        if let Some(c) = &self.cache {
            cfg.cache = Some(c.clone());
        }
        cfg.fail_on_nonconvergence |= self.fail_on_nonconvergence;
    }
}

impl InputArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(p) = &self.instances {
            cfg.instances = Some(p.clone());
        }
        if let Some(p) = &self.embeddings {
            cfg.embeddings = Some(p.clone());
        }
        cfg.drop_undefined |= self.drop_undefined;
    }
}

impl GridArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(g) = &self.lambda_grid {
            cfg.eval.lambda_grid = g.clone();
        }
        if let Some(g) = &self.damping_grid {
            cfg.eval.damping_grid = g.clone();
        }
    }
}

fn configure(
    run: &RunArgs,
    input: Option<&InputArgs>,
    grids: Option<&GridArgs>,
    words: &[String],
) -> CliResult<RunConfig> {
    let mut cfg = base_config(run.config.as_ref())?;
    run.apply(&mut cfg);
    if let Some(i) = input {
        i.apply(&mut cfg);
    }
    if let Some(g) = grids {
        g.apply(&mut cfg);
    }
    if !words.is_empty() {
        cfg.words = words.to_vec();
    }
    Ok(cfg)
}

fn init_threads(threads: Option<usize>) -> CliResult<()> {
    match threads {
        Some(0) => Err(CliError::usage("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(format!("cannot start thread pool: {e}"))),
        None => Ok(()),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Ingest(a) => {
            let mut cfg = base_config(a.config.as_ref())?;
            if let Some(p) = a.uses {
                cfg.uses = Some(p);
            }
            if let Some(p) = a.senses {
                cfg.senses = Some(p);
            }
            if let Some(p) = a.out {
                cfg.out = Some(p);
            }
            if !a.grouping.is_empty() {
                cfg.groupings = a.grouping.into_iter().collect();
            }
            commands::ingest(&cfg)
        }
        Command::Process(a) => {
            let mut cfg = configure(&a.run, Some(&a.input), Some(&a.grids), &a.word)?;
            if let Some(l) = a.lambda {
                cfg.lambda = l;
            }
            if let Some(o) = a.out {
                cfg.out = Some(o);
            }
            init_threads(cfg.threads)?;
            commands::process(&cfg)
        }
        Command::Sus(a) => {
            let cfg = word_lambda_config(&a)?;
            commands::sus(&cfg, &a.word, a.out.as_deref())
        }
        Command::ExportPlan(a) => {
            let cfg = word_lambda_config(&a.inner)?;
            commands::export_plan(&cfg, &a.inner.word, a.inner.out.as_deref(), a.format == PlanFormat::Suse)
        }
        Command::Solve(a) => {
            init_threads(a.threads)?;
            commands::solve(&a.source, &a.target, a.lambda, a.out.as_deref(), a.fail_on_nonconvergence, a.threads)
        }
        Command::Baseline(a) => {
            let mut cfg = configure(&a.run, Some(&a.input), None, &a.word)?;
            if let Some(g) = a.damping_grid {
                cfg.eval.damping_grid = g;
            }
            if let Some(o) = a.out {
                cfg.out = Some(o);
            }
            init_threads(cfg.threads)?;
            commands::baseline(&cfg)
        }
        Command::Eval(a) => {
            let mut cfg = configure(&a.run, Some(&a.input), Some(&a.grids), &a.word)?;
            if let Some(g) = a.r_grid {
                cfg.eval.r_grid = g;
            }
            if let Some(s) = a.seed {
                cfg.eval.rng_seed = s;
            }
            if let Some(r) = a.repetitions {
                cfg.eval.repetitions = r;
            }
            if let Some(o) = a.out {
                cfg.out = Some(o);
            }
            let task = semshift::eval::Task::parse(&a.task).ok_or_else(|| {
                CliError::usage(format!(
                    "unknown task {:?}; expected instance, sense, word-magnitude or word-scope",
                    a.task
                ))
            })?;
            init_threads(cfg.threads)?;
            commands::eval(&cfg, task, &a.method)
        }
        Command::Synth(a) => {
            let mut sc = semshift::synth::SynthConfig::default();
            if let Some(s) = a.seed {
                sc.seed = s;
            }
            if let Some(w) = a.words {
                sc.words = w;
            }
            if let Some(p) = a.per_period {
                sc.per_period = p;
            }
            commands::synth(&sc, &a.out)
        }
    }
}

fn word_lambda_config(a: &WordLambdaArgs) -> CliResult<RunConfig> {
    let mut cfg = configure(&a.run, Some(&a.input), None, std::slice::from_ref(&a.word))?;
    if let Some(l) = a.lambda {
        cfg.lambda = l;
    }
    init_threads(cfg.threads)?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
