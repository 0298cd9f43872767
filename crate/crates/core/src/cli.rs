//! The `orient8` command line.
//!
//! Exit codes: 0 success, 1 usage or other error, 2 missing file,
//! 3 malformed file, 4 training divergence.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::Serialize;

use crate::d4::{self, format_matrix, OrientationLabel, TransformTables, REFERENCE_COMPOSE, REFERENCE_INVERSE_ACTION};
use crate::dataio::{
    expand_orientations, generate_phantoms, load_volumes, read_image, split_by_patient, write_image, write_volumes,
    Dataset, PhantomSpec, Split, Volume, MANIFEST_NAME,
};
use crate::error::{Error, Result};
use crate::imgops::Modality;
use crate::nn::{load_checkpoint, save_checkpoint, Network, NetworkConfig};
use crate::pipeline::{
    evaluate, evaluate_both, evaluate_probability_sum, reorient, sensitivity_sweep, train_with_progress, transfer_with_progress,
    write_train_log, EvalReport, Method, TrainConfig, TrainOutcome, DEFAULT_FRACTIONS,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_MISSING_FILE: i32 = 2;
pub const EXIT_FORMAT: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "ORIENT8_THREADS";

#[derive(Debug, Parser)]
#[command(name = "orient8", version, about = "Orientation recognition and correction for 2D slices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the derived composition and inverse-action tables.
    #[command(args_override_self = true)]
    Tables(TablesArgs),
    /// Generate synthetic phantom volumes and a manifest.
    #[command(args_override_self = true)]
    Gen(GenArgs),
    /// Train a network from scratch.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Fine-tune a trained network on another modality.
    #[command(args_override_self = true)]
    Transfer(TransferArgs),
    /// Score a checkpoint on held-out patients.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Retrain and score at several training fractions.
    #[command(args_override_self = true)]
    Sweep(SweepArgs),
    /// Predict the orientation of one image and write the corrected image.
    #[command(args_override_self = true)]
    Reorient(ReorientArgs),
}

#[derive(Debug, Args, Serialize)]
struct TablesArgs {
    /// key=value file; explicit flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct GenArgs {
    #[arg(long, default_value_t = 45)]
    patients: usize,
    #[arg(long, default_value_t = 8)]
    slices: usize,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Only this modality (default: all three).
    #[arg(long)]
    modality: Option<Modality>,
    /// Noise multiplier; 0 gives noiseless phantoms.
    #[arg(long, default_value_t = 1.0)]
    noise: f32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to write; the epoch log goes next to it as CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "C0")]
    modality: Modality,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f32,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 64)]
    input_size: usize,
    /// Share of patients used for training; the rest is split 3:2 into
    /// validation and test.
    #[arg(long, default_value_t = 0.5)]
    fraction: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct TransferArgs {
    #[arg(long)]
    data: PathBuf,
    /// Pretrained checkpoint.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "LGE")]
    modality: Modality,
    /// Default: a quarter of the scratch default.
    #[arg(long)]
    epochs: Option<usize>,
    /// Default: a tenth of the scratch default.
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Must match the checkpoint when given.
    #[arg(long)]
    input_size: Option<usize>,
    #[arg(long)]
    freeze_conv: bool,
    #[arg(long, default_value_t = 0.5)]
    fraction: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "voting")]
    method: Method,
    #[arg(long, default_value = "C0")]
    modality: Modality,
    /// Training share used to reproduce the held-out split.
    #[arg(long, default_value_t = 0.5)]
    fraction: f64,
    /// Score every patient instead of the held-out test split.
    #[arg(long)]
    all: bool,
    /// With voting, sum softmax outputs over views instead of counting labels.
    #[arg(long)]
    prob_sum: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Report CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    /// Grid CSV; a JSON-lines file with confusion matrices goes next to it.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated training fractions.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_FRACTIONS)]
    fraction: Vec<f64>,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f32,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 64)]
    input_size: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ReorientArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Tables(_) => "tables",
            Command::Gen(_) => "gen",
            Command::Train(_) => "train",
            Command::Transfer(_) => "transfer",
            Command::Eval(_) => "eval",
            Command::Sweep(_) => "sweep",
            Command::Reorient(_) => "reorient",
        }
    }

    fn config_path(&self) -> Option<&Path> {
        match self {
            Command::Tables(a) => a.config.as_deref(),
            Command::Gen(a) => a.config.as_deref(),
            Command::Train(a) => a.config.as_deref(),
            Command::Transfer(a) => a.config.as_deref(),
            Command::Eval(a) => a.config.as_deref(),
            Command::Sweep(a) => a.config.as_deref(),
            Command::Reorient(a) => a.config.as_deref(),
        }
    }

    fn resolved(&self) -> (String, Option<u64>) {
        let (json, seed) = match self {
            Command::Tables(a) => (serde_json::to_string(a), None),
            Command::Gen(a) => (serde_json::to_string(a), Some(a.seed)),
            Command::Train(a) => (serde_json::to_string(a), Some(a.seed)),
            Command::Transfer(a) => (serde_json::to_string(a), Some(a.seed)),
            Command::Eval(a) => (serde_json::to_string(a), Some(a.seed)),
            Command::Sweep(a) => (serde_json::to_string(a), Some(a.seed)),
            Command::Reorient(a) => (serde_json::to_string(a), None),
        };
        (json.expect("plain config serializes"), seed)
    }
}

/// Maps an error onto the documented exit codes.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => EXIT_MISSING_FILE,
        Error::Format { .. } => EXIT_FORMAT,
        Error::Divergence { .. } | Error::NonFiniteGradient { .. } => EXIT_DIVERGENCE,
        _ => EXIT_USAGE,
    }
}

/// Runs the command line with the process's stdout and stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = io::stdout();
    let stderr = io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

/// Results go to `out`, diagnostics to `err`.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let command = match parse(&argv) {
        Ok(Some(c)) => c,
        Ok(None) => return EXIT_OK,
        Err(ParseFailure::Clap(e)) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return EXIT_USAGE;
            }
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
        Err(ParseFailure::Config(e)) => {
            let _ = writeln!(err, "error: {e}");
            return exit_code(&e);
        }
    };
    if let Err(e) = configure_threads() {
        let _ = writeln!(err, "error: {e}");
        return exit_code(&e);
    }

    let (json, seed) = command.resolved();
    let _ = writeln!(err, "{} config: {json}", command.name());
    let _ = writeln!(err, "seed: {}", seed.map_or("none".to_string(), |s| s.to_string()));

    let result = match &command {
        Command::Tables(_) => {
            return print_tables(d4::tables(), &REFERENCE_COMPOSE, &REFERENCE_INVERSE_ACTION, out, err);
        }
        Command::Gen(a) => cmd_gen(a, out),
        Command::Train(a) => cmd_train(a, out, err),
        Command::Transfer(a) => cmd_transfer(a, out, err),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Sweep(a) => cmd_sweep(a, out, err),
        Command::Reorient(a) => cmd_reorient(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

enum ParseFailure {
    Clap(clap::Error),
    Config(Error),
}

/// Parses `argv`, then re-parses with the config file's entries placed
/// before the explicit arguments so that explicit flags win.
fn parse(argv: &[OsString]) -> std::result::Result<Option<Command>, ParseFailure> {
    let first = Cli::try_parse_from(argv).map_err(ParseFailure::Clap)?;
    let Some(path) = first.command.config_path() else {
        return Ok(Some(first.command));
    };
    let name = first.command.name();
    let text = fs::read_to_string(path).map_err(|e| ParseFailure::Config(Error::io(path, e)))?;
    let injected = config_tokens(&text, name).map_err(ParseFailure::Config)?;

    let pos = argv.iter().position(|a| a == name).expect("subcommand present after parse");
    let mut merged: Vec<OsString> = argv[..=pos].to_vec();
    merged.extend(injected.into_iter().map(OsString::from));
    merged.extend(argv[pos + 1..].iter().cloned());
    Cli::try_parse_from(&merged)
        .map(|c| Some(c.command))
        .map_err(ParseFailure::Clap)
}

/// Turns `key = value` lines into flags for `subcommand`. Keys belonging
/// only to other subcommands are skipped; keys no subcommand knows are
/// rejected.
fn config_tokens(text: &str, subcommand: &str) -> Result<Vec<String>> {
    let cmd = Cli::command();
    let mut known = BTreeSet::new();
    let mut here = Vec::new();
    for sub in cmd.get_subcommands() {
        for arg in sub.get_arguments() {
            if let Some(long) = arg.get_long() {
                known.insert(long.to_string());
                if sub.get_name() == subcommand {
                    here.push((long.to_string(), arg.get_action().takes_values()));
                }
            }
        }
    }

    let mut tokens = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len() as u64;
        let body = line.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return Err(Error::format(start, format!("expected key=value, got `{body}`")));
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key == "config" || !known.contains(&key) {
            return Err(Error::Argument(format!("unknown config key `{key}`")));
        }
        let Some(&(_, takes_value)) = here.iter().find(|(k, _)| *k == key) else {
            continue;
        };
        if takes_value {
            tokens.push(format!("--{key}={value}"));
        } else {
            match value {
                "true" | "1" | "yes" => tokens.push(format!("--{key}")),
                "false" | "0" | "no" => {}
                other => return Err(Error::Argument(format!("config key `{key}` expects a boolean, got `{other}`"))),
            }
        }
    }
    Ok(tokens)
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Argument(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    // a pool built earlier in this process stays in place
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn print_tables(
    tables: &TransformTables,
    compose: &[[u8; 8]; 8],
    inverse_action: &[[u8; 8]; 8],
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let inverse = tables.inverse_vector().map(|v| v.to_string()).join(" ");
    let text = format!(
        "compose\n{}\ninverse_action\n{}\ninverse: {inverse}\n",
        format_matrix(&tables.compose_matrix()),
        format_matrix(&tables.inverse_action_matrix()),
    );
    let _ = out.write_all(text.as_bytes());
    let diff = tables.diff_against(compose, inverse_action);
    if diff.is_empty() {
        return EXIT_OK;
    }
    for m in &diff {
        let _ = writeln!(err, "mismatch {m}");
    }
    let _ = writeln!(err, "error: {} table entries differ from the reference", diff.len());
    EXIT_USAGE
}

fn split_ratios(fraction: f64) -> [f64; 3] {
    TrainConfig { train_fraction: fraction, ..Default::default() }.split_ratios()
}

fn load_modality(dir: &Path, modality: Modality) -> Result<Vec<Volume>> {
    let vols = load_volumes(dir, Some(modality))?;
    if vols.is_empty() {
        return Err(Error::Argument(format!("no {} volumes under {}", modality.as_str(), dir.display())));
    }
    Ok(vols)
}

fn cmd_gen(a: &GenArgs, out: &mut dyn Write) -> Result<()> {
    let modalities: Vec<Modality> = match a.modality {
        Some(m) => vec![m],
        None => Modality::ALL.to_vec(),
    };
    let mut volumes = Vec::new();
    for m in modalities {
        let spec = PhantomSpec { noise_scale: a.noise, ..PhantomSpec::new(a.patients, a.slices, a.size, m, a.seed) };
        volumes.extend(generate_phantoms(&spec)?);
    }
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let manifest = a.out.join(MANIFEST_NAME);
    match fs::remove_file(&manifest) {
        Err(e) if e.kind() != io::ErrorKind::NotFound => return Err(Error::io(&manifest, e)),
        _ => {}
    }
    let entries = write_volumes(&a.out, &volumes)?;
    writeln!(out, "volumes={} slices={} manifest={}", volumes.len(), entries.len(), manifest.display())
        .map_err(|e| Error::io("<stdout>", e))
}

fn epoch_printer(err: &mut dyn Write) -> impl FnMut(&crate::pipeline::EpochLog) + '_ {
    move |e| {
        let acc = e.val_accuracy.map_or("-".to_string(), |a| format!("{a:.4}"));
        let _ = writeln!(err, "epoch {:>3} loss {:.6} val_accuracy {acc}", e.epoch, e.loss);
    }
}

fn finish_training(
    outcome: &TrainOutcome,
    test: &Dataset,
    ckpt: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    save_checkpoint(&outcome.network, ckpt)?;
    let log_path = ckpt.with_extension("csv");
    write_train_log(&log_path, &outcome.log)?;
    let mut text = format!("checkpoint={}\nlog={}\nbest_epoch={}\n", ckpt.display(), log_path.display(), outcome.best_epoch);
    if !test.is_empty() {
        let (direct, voting) = evaluate_both(&outcome.network, test)?;
        writeln!(text, "test_direct_accuracy={:.6}\ntest_voting_accuracy={:.6}", direct.accuracy, voting.accuracy).unwrap();
    }
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        lr: a.lr,
        seed: a.seed,
        train_fraction: a.fraction,
        network: NetworkConfig { input_size: a.input_size, seed: a.seed as u32, ..Default::default() },
        checkpoint: Some(a.out.clone()),
        ..Default::default()
    };
    cfg.validate()?;
    let vols = load_modality(&a.data, a.modality)?;
    let (train, val, test) = split_by_patient(&vols, cfg.split_ratios(), a.seed)?;
    let (train, val, test) = (expand_orientations(&train)?, expand_orientations(&val)?, expand_orientations(&test)?);
    let outcome = train_with_progress(&train, Some(&val), &cfg, &mut epoch_printer(err))?;
    finish_training(&outcome, &test, &a.out, out)
}

fn cmd_transfer(a: &TransferArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let pretrained = load_checkpoint(&a.ckpt)?;
    let network = *pretrained.config();
    if let Some(side) = a.input_size.filter(|&s| s != network.input_size) {
        return Err(Error::shape("input size", network.input_size, side));
    }
    let defaults = TrainConfig::default().for_transfer();
    let cfg = TrainConfig {
        epochs: a.epochs.unwrap_or(defaults.epochs),
        batch_size: a.batch,
        lr: a.lr.unwrap_or(defaults.lr),
        seed: a.seed,
        train_fraction: a.fraction,
        freeze_conv: a.freeze_conv,
        network,
        checkpoint: Some(a.out.clone()),
        ..defaults
    };
    let vols = load_modality(&a.data, a.modality)?;
    let (train, val, test) = split_by_patient(&vols, split_ratios(a.fraction), a.seed)?;
    let (train, val, test) = (expand_orientations(&train)?, expand_orientations(&val)?, expand_orientations(&test)?);
    let outcome = transfer_with_progress(&pretrained, &train, Some(&val), &cfg, &mut epoch_printer(err))?;
    finish_training(&outcome, &test, &a.out, out)
}

fn report_csv(report: &EvalReport, modality: Modality) -> String {
    let mut text = String::from("method,modality,total,accuracy,true_label");
    for p in 0..8 {
        write!(text, ",pred_{p}").unwrap();
    }
    text.push_str(",recall\n");
    for (t, row) in report.confusion.iter().enumerate() {
        write!(text, "{},{},{},{:.6},{t}", report.method, modality.as_str(), report.total, report.accuracy).unwrap();
        for c in row {
            write!(text, ",{c}").unwrap();
        }
        writeln!(text, ",{:.6}", report.per_class_accuracy[t]).unwrap();
    }
    text
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let net: Network<f32> = load_checkpoint(&a.ckpt)?;
    let vols = load_modality(&a.data, a.modality)?;
    let ds = if a.all {
        Dataset::from_volumes(&vols, Split::Test)
    } else {
        split_by_patient(&vols, split_ratios(a.fraction), a.seed)?.2
    };
    let ds = expand_orientations(&ds)?;
    let report = match a.method {
        Method::Voting if a.prob_sum => evaluate_probability_sum(&net, &ds)?,
        Method::Direct if a.prob_sum => return Err(Error::Argument("--prob-sum needs --method voting".into())),
        method => evaluate(&net, &ds, method)?,
    };
    let mut text = format!("method={}\nsamples={}\naccuracy={:.6}\n", report.method, report.total, report.accuracy);
    if let Some(path) = &a.out {
        write_file(path, &report_csv(&report, a.modality))?;
        writeln!(text, "report={}", path.display()).unwrap();
    }
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        lr: a.lr,
        seed: a.seed,
        network: NetworkConfig { input_size: a.input_size, seed: a.seed as u32, ..Default::default() },
        ..Default::default()
    };
    cfg.validate()?;
    let vols = load_volumes(&a.data, None)?;
    let table = sensitivity_sweep(&vols, &a.fraction, &cfg, &mut |f, cell| {
        let _ = writeln!(
            err,
            "fraction {f:.2} {:<3} direct {:.4} voting {:.4}",
            cell.modality.as_str(),
            cell.direct.accuracy,
            cell.voting.accuracy
        );
    })?;
    let csv = table.to_csv();
    write_file(&a.out, &csv)?;
    write_file(&a.out.with_extension("jsonl"), &table.to_jsonl())?;
    out.write_all(csv.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn cmd_reorient(a: &ReorientArgs, out: &mut dyn Write) -> Result<()> {
    let net = load_checkpoint(&a.ckpt)?;
    let slice = read_image(&a.input)?;
    let (mut fixed, label) = reorient(&net, &slice, d4::tables())?;
    fixed.true_orientation = Some(OrientationLabel::IDENTITY);
    write_image(&fixed, &a.out)?;
    writeln!(out, "label={label}\nout={}", a.out.display()).map_err(|e| Error::io("<stdout>", e))
}
