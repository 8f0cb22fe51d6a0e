//! The `srupp` command line: gradient checks, training, evaluation,
//! profiling and attention dumps.
//!
//! Exit codes: 0 success, 1 a check or computation failed, 2 usage or I/O
//! error.

pub mod checkpoint;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Parser, Subcommand, ValueEnum};

use crate::encoder::profile::flops_estimate;
use crate::error::{Error, Result};
use crate::harness::gradcheck::{gradcheck_config, ModelKind, GRADCHECK_TOLERANCE};
use crate::harness::train::{eval_length_generalization, history_csv, train_model, Model};
use crate::srupp::{matrix_csv, parse_matrix_csv};
use crate::tensor::{Ctx, ExecMode, SeededRng};
use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const CHECKPOINT_FILE: &str = "checkpoint.srpp";
pub const HISTORY_FILE: &str = "history.csv";
pub const CONFIG_FILE: &str = "run.cfg";

/// Frames per layer-level gradcheck instance.
const GRADCHECK_STEPS: usize = 5;
/// Input frames of the encoder-level gradcheck.
const GRADCHECK_INPUT_LEN: usize = 12;

#[derive(Parser, Debug)]
#[command(name = "srupp", version, about = "SRU++ speech encoder toolkit")]
pub struct Cli {
    /// Fixed reduction order for bitwise-reproducible results.
    #[arg(long, global = true, default_value_t = true, action = ArgAction::Set)]
    pub deterministic: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Sru,
    Srupp,
    Encoder,
}

impl From<Target> for ModelKind {
    fn from(t: Target) -> Self {
        match t {
            Target::Sru => ModelKind::Sru,
            Target::Srupp => ModelKind::Srupp,
            Target::Encoder => ModelKind::Encoder,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProfileFormat {
    Text,
    Csv,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Compare analytic gradients against central finite differences.
    Gradcheck {
        /// Run configuration; the shipped tiny.cfg when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Model to check; all three when omitted.
        #[arg(long, value_enum)]
        target: Option<Target>,
    },
    /// Train on the configured synthetic task.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Receives checkpoint.srpp, history.csv and run.cfg.
        #[arg(long)]
        out: PathBuf,
    },
    /// Held-out frame accuracy of a checkpoint at several sequence lengths.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated sequence lengths.
        #[arg(long)]
        lengths: String,
        /// Defaults to run.cfg next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Parameter and forward-FLOP breakdown.
    Profile {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        seq_len: usize,
        #[arg(long, value_enum, default_value_t = ProfileFormat::Text)]
        format: ProfileFormat,
        /// Also run an instrumented forward pass and require equal counts.
        #[arg(long)]
        verify: bool,
    },
    /// Write one layer's attention weights as CSV.
    AttnDump {
        #[arg(long)]
        checkpoint: PathBuf,
        /// CSV feature matrix, one frame per row.
        #[arg(long)]
        input: PathBuf,
        /// Layer index; negative counts from the last layer.
        #[arg(long, default_value_t = -1, allow_hyphen_values = true)]
        layer: i64,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to run.cfg next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Maps an error to its exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Training { .. } | Error::Numeric { .. } => EXIT_FAILURE,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    let mode = if cli.deterministic {
        ExecMode::Deterministic
    } else {
        ExecMode::Performance
    };
    match &cli.command {
        Command::Gradcheck {
            config,
            seed,
            target,
        } => cmd_gradcheck(config.as_deref(), *seed, *target, out),
        Command::Train { config, out: dir } => cmd_train(config, dir, mode, out),
        Command::Eval {
            checkpoint,
            lengths,
            config,
        } => cmd_eval(checkpoint, lengths, config.as_deref(), mode, out),
        Command::Profile {
            config,
            seq_len,
            format,
            verify,
        } => cmd_profile(config.as_deref(), *seq_len, *format, *verify, mode, out),
        Command::AttnDump {
            checkpoint,
            input,
            layer,
            out: path,
            config,
        } => cmd_attn_dump(
            checkpoint,
            input,
            *layer,
            path,
            config.as_deref(),
            mode,
            out,
        ),
    }
}

/// The shipped `tiny.cfg`, used by `gradcheck` when no config is given.
pub const TINY_CONFIG: &str = include_str!("../../configs/tiny.cfg");

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn cmd_gradcheck(
    config: Option<&Path>,
    seed: u64,
    target: Option<Target>,
    out: &mut dyn Write,
) -> Result<i32> {
    let cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::parse(TINY_CONFIG)?,
    };
    let kinds: Vec<ModelKind> = match target {
        Some(t) => vec![t.into()],
        None => vec![ModelKind::Sru, ModelKind::Srupp, ModelKind::Encoder],
    };
    let mut ok = true;
    for kind in kinds {
        let r = gradcheck_config(
            kind,
            &cfg.encoder,
            seed,
            GRADCHECK_STEPS,
            GRADCHECK_INPUT_LEN,
        )?;
        let verdict = if r.passed() { "ok" } else { "FAILED" };
        writeln!(
            out,
            "{:<8} max_rel_err {:.3e}  worst {}[{}]  checked {}  raw {:.3e}  resolution {:.1e}  {verdict}",
            kind.name(),
            r.max_rel_err,
            r.worst_param,
            r.worst_index,
            r.checked,
            r.raw_max_rel_err,
            r.resolution
        )?;
        ok &= r.passed();
    }
    writeln!(out, "tolerance {GRADCHECK_TOLERANCE:e}")?;
    Ok(if ok { EXIT_OK } else { EXIT_FAILURE })
}

fn cmd_train(config: &Path, dir: &Path, mode: ExecMode, out: &mut dyn Write) -> Result<i32> {
    let cfg = RunConfig::load(config)?;
    std::fs::create_dir_all(dir)?;
    let train = cfg.train_config(mode);
    let model = Model::new(
        cfg.encoder.clone(),
        cfg.task.vocab_size,
        &mut SeededRng::new(train.seed),
    )?;
    let report_every = (train.steps / 10).max(1);
    let mut lines = Vec::new();
    let outcome = train_model(model, &cfg.task, &train, &mut |r| {
        if r.step % report_every == 0 || r.step == train.steps {
            lines.push(format!(
                "step {:>6}  loss {:.6}  accuracy {:.4}",
                r.step, r.loss, r.accuracy
            ));
        }
    })?;
    for l in lines {
        writeln!(out, "{l}")?;
    }
    checkpoint::save(&dir.join(CHECKPOINT_FILE), &outcome.model)?;
    checkpoint::write_atomic(
        &dir.join(HISTORY_FILE),
        history_csv(&outcome.history).as_bytes(),
    )?;
    checkpoint::write_atomic(&dir.join(CONFIG_FILE), cfg.render().as_bytes())?;
    writeln!(out, "wrote {}", dir.display())?;
    Ok(EXIT_OK)
}

/// Configuration for a checkpoint: the explicit path, else its sibling run.cfg.
fn checkpoint_config(checkpoint: &Path, config: Option<&Path>) -> Result<RunConfig> {
    match config {
        Some(p) => RunConfig::load(p),
        None => {
            let sibling = checkpoint
                .parent()
                .unwrap_or(Path::new("."))
                .join(CONFIG_FILE);
            if !sibling.exists() {
                return Err(Error::Config(format!(
                    "no {CONFIG_FILE} next to {}; pass --config",
                    checkpoint.display()
                )));
            }
            RunConfig::load(&sibling)
        }
    }
}

/// Model described by `cfg` holding the checkpoint's weights.
pub fn load_model(checkpoint: &Path, cfg: &RunConfig) -> Result<Model> {
    let entries = checkpoint::load(checkpoint)?;
    let mut model = Model::new(
        cfg.encoder.clone(),
        cfg.task.vocab_size,
        &mut SeededRng::new(0),
    )?;
    checkpoint::load_into(&mut model, entries)?;
    Ok(model)
}

fn parse_lengths(s: &str) -> Result<Vec<usize>> {
    let lengths: Vec<usize> = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse()
                .map_err(|_| Error::Config(format!("invalid length {p:?}")))
        })
        .collect::<Result<_>>()?;
    if lengths.is_empty() {
        return Err(Error::Config("--lengths needs at least one length".into()));
    }
    Ok(lengths)
}

fn cmd_eval(
    checkpoint: &Path,
    lengths: &str,
    config: Option<&Path>,
    mode: ExecMode,
    out: &mut dyn Write,
) -> Result<i32> {
    let lengths = parse_lengths(lengths)?;
    let cfg = checkpoint_config(checkpoint, config)?;
    let model = load_model(checkpoint, &cfg)?;
    let results = eval_length_generalization(&model, &cfg.task, &lengths, mode)?;
    writeln!(out, "{:>8}  {:>8}  {:>8}", "length", "frames", "accuracy")?;
    for r in results {
        writeln!(
            out,
            "{:>8}  {:>8}  {:>8.4}",
            r.length,
            r.frames,
            r.accuracy()
        )?;
    }
    Ok(EXIT_OK)
}

fn cmd_profile(
    config: Option<&Path>,
    seq_len: usize,
    format: ProfileFormat,
    verify: bool,
    mode: ExecMode,
    out: &mut dyn Write,
) -> Result<i32> {
    let cfg = load_config(config)?;
    let report = flops_estimate(&cfg.encoder, seq_len)?;
    match format {
        ProfileFormat::Text => write!(out, "{}", report.render_text())?,
        ProfileFormat::Csv => write!(out, "{}", report.render_csv())?,
    }
    if verify {
        let enc = crate::encoder::Encoder::new(cfg.encoder.clone(), &mut SeededRng::new(0))?;
        let ctx = Ctx::new(mode);
        let x = crate::tensor::Tensor::uniform(
            &[seq_len, cfg.encoder.feat_dim],
            -1.0,
            1.0,
            &mut SeededRng::new(1),
        );
        enc.forward(&ctx, &x)?;
        let same = ctx.flops() == report.total_flops();
        writeln!(
            out,
            "instrumented flops: {} ({})",
            ctx.flops(),
            if same { "matches" } else { "MISMATCH" }
        )?;
        if !same {
            return Ok(EXIT_FAILURE);
        }
    }
    Ok(EXIT_OK)
}

fn cmd_attn_dump(
    checkpoint: &Path,
    input: &Path,
    layer: i64,
    path: &Path,
    config: Option<&Path>,
    mode: ExecMode,
    out: &mut dyn Write,
) -> Result<i32> {
    let cfg = checkpoint_config(checkpoint, config)?;
    let n = cfg.encoder.num_layers as i64;
    let index = if layer < 0 { n + layer } else { layer };
    if !(0..n).contains(&index) {
        return Err(Error::Config(format!(
            "layer {layer} is out of range for {n} layers"
        )));
    }
    let model = load_model(checkpoint, &cfg)?;
    let feats = parse_matrix_csv(&std::fs::read_to_string(input)?)?;
    let ctx = Ctx::new(mode);
    let (_, tape) = model.encoder.forward(&ctx, &feats)?;
    let weights = model.encoder.attention_maps(&tape)[index as usize];
    checkpoint::write_atomic(path, matrix_csv(weights).as_bytes())?;
    writeln!(
        out,
        "layer {index}: {}x{} attention weights written to {}",
        weights.rows(),
        weights.cols(),
        path.display()
    )?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("srupp").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run_args(&[]).0, EXIT_USAGE);
        assert_eq!(run_args(&["frobnicate"]).0, EXIT_USAGE);
        assert_eq!(
            run_args(&["gradcheck", "--config", "/nonexistent/x.cfg"]).0,
            EXIT_USAGE
        );
        assert_eq!(run_args(&["profile", "--seq-len", "6"]).0, EXIT_USAGE);
    }

    #[test]
    fn help_exits_zero() {
        let (code, out, _) = run_args(&["--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("gradcheck") && out.contains("attn-dump"));
    }

    #[test]
    fn lengths_parsing() {
        assert_eq!(parse_lengths("40, 120,").unwrap(), vec![40, 120]);
        assert!(parse_lengths("").is_err());
        assert!(parse_lengths(" , ").is_err());
        assert!(parse_lengths("4x").is_err());
    }
}
