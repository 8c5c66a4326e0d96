//! The `hopmem` command line.
//!
//! Machine-readable results go to stdout as `key=value` lines; progress and
//! diagnostics go to stderr. Exit codes: 0 success, 1 usage, 2 I/O, 3 data.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::classifier::{classify, evaluate, row_seed, sweep_core_patterns};
use crate::corepatterns::{build_bank, CoreId};
use crate::datasetio::{
    format_scalar, load_bank, load_features, save_bank, split, FeatureTable, SplitSpec, TestCount,
};
use crate::error::Error;
use crate::hopfield::{hebbian_store, recall, Mode, Pattern};
use crate::rng::SplitMix64;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "hopmem",
    version,
    about = "Hopfield memory-bank classifier over CNN feature tables"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a memory bank of per-class core patterns.
    Train(TrainArgs),
    /// Classify a feature table against a bank and write an evaluation report.
    Evaluate(EvaluateArgs),
    /// Classify individual rows and print the match details.
    ClassifyOne(ClassifyArgs),
    /// Mean per-class accuracy as a function of core patterns per class.
    Sweep(SweepArgs),
    /// Corrupt a stored core pattern and recall it with Hopfield dynamics.
    Recall(RecallArgs),
}

#[derive(Debug, Args)]
struct SplitArgs {
    /// Split the table per class, taking this many training rows per class.
    #[arg(long)]
    train_per_class: Option<usize>,
    /// Test rows per class after the training rows: a count or `all`
    /// [default: all]. Requires --train-per-class.
    #[arg(long)]
    test_per_class: Option<String>,
    /// Put classes too small to split entirely into training instead of
    /// failing. Requires --train-per-class.
    #[arg(long)]
    allow_small_classes: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Feature table (CSV or FTB1).
    #[arg(long)]
    features: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    /// Core patterns per class.
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Pattern space: `real` keeps features, `bipolar` binarizes at the
    /// per-dimension training median.
    #[arg(long, default_value = "real")]
    mode: Mode,
    /// Seed for the split and K-means.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = one per CPU).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output bank path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Feature table (CSV or FTB1). With split flags only its test part is used.
    #[arg(long)]
    features: PathBuf,
    /// Bank written by `train`.
    #[arg(long)]
    bank: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    /// Seed for the split and for tie-breaking.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = one per CPU).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Report path; no report is written when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    /// Feature table (CSV or FTB1).
    #[arg(long)]
    features: PathBuf,
    /// Bank written by `train`.
    #[arg(long)]
    bank: PathBuf,
    /// Only classify the row with this id [default: every row].
    #[arg(long)]
    id: Option<String>,
    /// Tie-breaking seed; row i uses the same substream as `evaluate`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Feature table (CSV or FTB1).
    #[arg(long)]
    features: PathBuf,
    /// Pre-split test table; when given, --features is used whole for training.
    #[arg(long)]
    test_features: Option<PathBuf>,
    #[command(flatten)]
    split: SplitArgs,
    /// Comma-separated core-pattern counts.
    #[arg(long, default_value = "1,2,4,8,16")]
    k_list: String,
    #[arg(long, default_value = "real")]
    mode: Mode,
    /// Seed for the split, K-means and tie-breaking.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = one per CPU).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// CSV output with header `k,accuracy`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RecallArgs {
    /// Bipolar bank written by `train --mode bipolar`.
    #[arg(long)]
    bank: PathBuf,
    /// Id of the core pattern to corrupt.
    #[arg(long, default_value_t = 0)]
    probe: u32,
    /// Fraction of components to flip, in [0, 1].
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Seed for the corruption and the update orders.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sweep budget.
    #[arg(long, default_value_t = 100)]
    max_sweeps: usize,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Run(Error::io(path, e))
}

/// Parse `args` (including the program name) and run the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(&a, out, err),
        Command::Evaluate(a) => evaluate_cmd(&a, out, err),
        Command::ClassifyOne(a) => classify_one(&a, out),
        Command::Sweep(a) => sweep(&a, out, err),
        Command::Recall(a) => recall_cmd(&a, out),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Run(e)) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_io() {
                EXIT_IO
            } else {
                EXIT_DATA
            }
        }
    }
}

fn worker_pool(threads: usize) -> std::result::Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| usage(format!("cannot start {threads} worker threads: {e}")))
}

fn split_spec(args: &SplitArgs, seed: u64) -> std::result::Result<Option<SplitSpec>, Failure> {
    let Some(train_per_class) = args.train_per_class else {
        if args.test_per_class.is_some() || args.allow_small_classes {
            return Err(usage(
                "--test-per-class and --allow-small-classes require --train-per-class",
            ));
        }
        return Ok(None);
    };
    if train_per_class == 0 {
        return Err(usage("--train-per-class must be at least 1"));
    }
    let test_per_class = match args.test_per_class.as_deref() {
        None | Some("all") => TestCount::AllRemaining,
        Some(n) => TestCount::Count(
            n.parse()
                .map_err(|_| usage(format!("--test-per-class `{n}` is not a count or `all`")))?,
        ),
    };
    Ok(Some(SplitSpec {
        train_per_class,
        test_per_class,
        seed,
        allow_small_classes: args.allow_small_classes,
    }))
}

/// Load a table and, when a split is requested, keep the requested side.
fn load_part(
    path: &Path,
    spec: Option<&SplitSpec>,
    want_train: bool,
    err: &mut dyn Write,
) -> std::result::Result<FeatureTable, Failure> {
    let table = load_features(path)?;
    let Some(spec) = spec else {
        return Ok(table);
    };
    let parts = split(&table, spec)?;
    if !parts.small_classes.is_empty() {
        let _ = writeln!(
            err,
            "note: {} small classes kept for training only: {}",
            parts.small_classes.len(),
            parts.small_classes.join(", ")
        );
    }
    Ok(if want_train { parts.train } else { parts.test })
}

fn train(a: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    if a.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let spec = split_spec(&a.split, a.seed)?;
    let pool = worker_pool(a.threads)?;
    let table = load_part(&a.features, spec.as_ref(), true, err)?;
    let bank = pool.install(|| build_bank(&table, a.k, a.mode, a.seed))?;
    save_bank(&bank, &a.out)?;
    let _ = writeln!(
        err,
        "trained {} classes from {} rows (dim {}, mode {})",
        bank.labels().len(),
        table.len(),
        table.dim(),
        bank.mode()
    );
    let mut text = String::new();
    for (label, count) in bank.class_counts() {
        text.push_str(&format!("class={label} core_patterns={count}\n"));
    }
    text.push_str(&format!(
        "core_patterns_total={}\n",
        bank.core_patterns().len()
    ));
    text.push_str(&format!("bank={}\n", a.out.display()));
    out.write_all(text.as_bytes())
        .map_err(|e| io_failure(Path::new("<stdout>"), e))
}

fn evaluate_cmd(a: &EvaluateArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let spec = split_spec(&a.split, a.seed)?;
    let pool = worker_pool(a.threads)?;
    let bank = load_bank(&a.bank)?;
    let table = load_part(&a.features, spec.as_ref(), false, err)?;
    let report = pool.install(|| evaluate(&table, &bank, a.seed))?;
    if let Some(path) = &a.out {
        std::fs::write(path, report.to_document()).map_err(|e| io_failure(path, e))?;
    }
    if !report.excluded_classes.is_empty() {
        let _ = writeln!(
            err,
            "note: bank classes without test rows: {}",
            report.excluded_classes.join(", ")
        );
    }
    let text = format!(
        "accuracy={}\nn_test={}\nfalse_positives={}\n",
        format_scalar(report.mean_per_class_accuracy),
        report.n_test,
        report.false_positives_total
    );
    out.write_all(text.as_bytes())
        .map_err(|e| io_failure(Path::new("<stdout>"), e))
}

fn classify_one(a: &ClassifyArgs, out: &mut dyn Write) -> CmdResult {
    let bank = load_bank(&a.bank)?;
    let table = load_features(&a.features)?;
    let mut matched = false;
    let mut text = String::new();
    for (i, row) in table.rows().iter().enumerate() {
        if a.id.as_ref().is_some_and(|id| id != &row.id) {
            continue;
        }
        matched = true;
        let r = classify(&row.values, &bank, row_seed(a.seed, i))?;
        let candidates: Vec<String> = r.tied_candidates.iter().map(CoreId::to_string).collect();
        text.push_str(&format!(
            "id={} label={} predicted={} min_distance={} candidates={} tie_broken={}\n",
            row.id,
            row.label,
            r.predicted_label,
            format_scalar(r.min_distance),
            candidates.join(";"),
            r.tie_broken_randomly
        ));
    }
    if let (Some(id), false) = (&a.id, matched) {
        return Err(Error::contract(format!("no row with id `{id}`")).into());
    }
    out.write_all(text.as_bytes())
        .map_err(|e| io_failure(Path::new("<stdout>"), e))
}

fn parse_k_list(s: &str) -> std::result::Result<Vec<usize>, Failure> {
    let ks = s
        .split(',')
        .map(|t| match t.trim().parse::<usize>() {
            Ok(k) if k >= 1 => Ok(k),
            _ => Err(usage(format!("--k-list entry `{t}` is not a count >= 1"))),
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if ks.is_empty() {
        return Err(usage("--k-list is empty"));
    }
    Ok(ks)
}

fn sweep(a: &SweepArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let ks = parse_k_list(&a.k_list)?;
    let spec = split_spec(&a.split, a.seed)?;
    if a.test_features.is_some() && spec.is_some() {
        return Err(usage("--test-features cannot be combined with split flags"));
    }
    if a.test_features.is_none() && spec.is_none() {
        return Err(usage("sweep needs --train-per-class or --test-features"));
    }
    let pool = worker_pool(a.threads)?;
    let (train, test) = match (&a.test_features, &spec) {
        (Some(test_path), _) => (load_features(&a.features)?, load_features(test_path)?),
        (None, Some(spec)) => {
            let parts = split(&load_features(&a.features)?, spec)?;
            (parts.train, parts.test)
        }
        (None, None) => unreachable!("checked above"),
    };
    let curve = pool.install(|| sweep_core_patterns(&train, &test, &ks, a.mode, a.seed))?;
    let mut csv = String::from("k,accuracy\n");
    let mut text = String::new();
    for p in &curve {
        csv.push_str(&format!("{},{}\n", p.k, format_scalar(p.accuracy)));
        text.push_str(&format!(
            "k={} accuracy={}\n",
            p.k,
            format_scalar(p.accuracy)
        ));
        let _ = writeln!(
            err,
            "k={:<4} mean per-class accuracy {:.4}",
            p.k, p.accuracy
        );
    }
    if let Some(path) = &a.out {
        std::fs::write(path, csv).map_err(|e| io_failure(path, e))?;
    }
    out.write_all(text.as_bytes())
        .map_err(|e| io_failure(Path::new("<stdout>"), e))
}

fn recall_cmd(a: &RecallArgs, out: &mut dyn Write) -> CmdResult {
    if !(0.0..=1.0).contains(&a.noise) {
        return Err(usage("--noise must lie in [0, 1]"));
    }
    if a.max_sweeps == 0 {
        return Err(usage("--max-sweeps must be at least 1"));
    }
    let bank = load_bank(&a.bank)?;
    if bank.mode() != Mode::Bipolar {
        return Err(
            Error::contract("recall needs a bipolar bank (train with --mode bipolar)").into(),
        );
    }
    let stored: Vec<Pattern> = bank
        .core_patterns()
        .iter()
        .map(|c| c.values.clone())
        .collect();
    let original = bank
        .get(CoreId(a.probe))
        .ok_or_else(|| Error::contract(format!("bank has no core pattern {}", a.probe)))?
        .values
        .clone();
    let w = hebbian_store(&stored)?;

    let n = original.dim();
    let flips = (a.noise * n as f64).round() as usize;
    let mut rng = SplitMix64::new(a.seed);
    let mut probe = original.clone();
    for i in rng.permutation(n).into_iter().take(flips) {
        probe = probe.flipped(i);
    }
    let result = recall(&w, &probe, a.max_sweeps, SplitMix64::substream(a.seed, 1))?;
    let trace: Vec<String> = result
        .energy_trace
        .iter()
        .map(|&e| format_scalar(e))
        .collect();
    let text = format!(
        "probe={}\nn={}\nstored_patterns={}\nflipped={}\nsweeps_used={}\nconverged={}\nenergy_trace={}\nrecovered={}\n",
        a.probe,
        n,
        stored.len(),
        flips,
        result.sweeps_used,
        result.converged,
        trace.join(";"),
        result.final_state == original
    );
    out.write_all(text.as_bytes())
        .map_err(|e| io_failure(Path::new("<stdout>"), e))
}
