//! The `etd` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error. Results go to
//! stdout as JSON (or a text table where `--format table` applies); logs go
//! to stderr.

mod commands;
mod config;
mod selftest;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::{EvalConfig, HeavyConfig, LightConfig, OutputFormat, PathsConfig, RunConfig, ServerConfig};
pub use selftest::{run_selftest, CheckResult};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub(crate) fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

const AFTER_HELP: &str = "Any config field can be set with a dotted flag, e.g. --cascade.debounce_steps 3";

#[derive(Debug, Parser)]
#[command(name = "etd", version, about = "Speculative end-turn detection", after_help = AFTER_HELP)]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a labeled corpus.
    Datagen(DatagenArgs),
    /// Label diarized two-party recordings and write a corpus.
    ImportReal(ImportArgs),
    /// Train the light or heavy model on a corpus's train split.
    Train(TrainArgs),
    /// Serve heavy-model verdicts over TCP.
    Serve(ServeArgs),
    /// Run the cascade over one WAV file.
    Cascade(CascadeArgs),
    /// Gap-vs-Pause accuracy on each sample's final silence.
    EvalBinary(EvalArgs),
    /// Streaming segmentation metrics and FLOPs for one mode.
    EvalStream(EvalArgs),
    /// All three streaming modes side by side.
    Bench(BenchArgs),
    /// Gradient check, metric oracles and wire golden vectors.
    Selftest,
}

#[derive(Debug, Args)]
struct DatagenArgs {
    /// base, with_pause, with_filler, or mix for all three.
    #[arg(long)]
    variant: Option<String>,
    /// Samples per variant.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Args)]
struct ImportArgs {
    /// Alternating diarization and WAV paths: DIAR WAV [DIAR WAV ...].
    #[arg(required = true, num_args = 2..)]
    files: Vec<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// light or heavy.
    #[arg(long)]
    model: String,
    #[arg(long)]
    manifest: Option<String>,
    /// Output weights path.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    heavy: Option<String>,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    latency_ms: Option<u64>,
}

#[derive(Debug, Args)]
struct CascadeArgs {
    /// 16-bit PCM WAV input.
    #[arg(long)]
    wav: PathBuf,
    #[arg(long)]
    light: Option<String>,
    #[arg(long)]
    heavy: Option<String>,
    /// Verdict server address; without it the heavy model runs in process.
    #[arg(long)]
    server: Option<String>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: Option<String>,
    #[arg(long)]
    light: Option<String>,
    #[arg(long)]
    heavy: Option<String>,
    /// light_only, heavy_everywhere or speculative (eval-stream only).
    #[arg(long)]
    mode: Option<String>,
    /// train, dev, test, or all.
    #[arg(long)]
    split: Option<String>,
    /// json or table.
    #[arg(long)]
    format: Option<String>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Write a FLOPs/IoU bar chart here.
    #[arg(long)]
    svg: Option<String>,
}

/// Splits `--a.b value` and `--a.b=value` pairs out of `args`.
fn extract_dotted(args: Vec<OsString>) -> Result<(Vec<OsString>, Vec<(String, String)>), CliError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let text = arg.to_string_lossy().into_owned();
        let Some(flag) = text.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (key, inline) = match flag.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (flag, None),
        };
        if !key.contains('.') {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .map(|v| v.to_string_lossy().into_owned())
                .ok_or_else(|| CliError::Usage(format!("--{key} needs a value")))?,
        };
        overrides.push((key.to_string(), value));
    }
    Ok((rest, overrides))
}

fn push(overrides: &mut Vec<(String, String)>, key: &str, value: Option<impl ToString>) {
    if let Some(v) = value {
        overrides.push((key.to_string(), v.to_string()));
    }
}

fn eval_overrides(args: &EvalArgs, out: &mut Vec<(String, String)>) {
    push(out, "paths.manifest", args.manifest.as_ref());
    push(out, "paths.light_params", args.light.as_ref());
    push(out, "paths.heavy_params", args.heavy.as_ref());
    push(out, "eval.mode", args.mode.as_ref());
    push(out, "eval.format", args.format.as_ref());
    if let Some(split) = &args.split {
        let value = if split == "all" { "null".to_string() } else { split.clone() };
        out.push(("eval.split".into(), value));
    }
}

/// Shorthand flags of each subcommand as dotted overrides.
fn shorthand(command: &Command) -> Vec<(String, String)> {
    let mut out = Vec::new();
    match command {
        Command::Datagen(a) => {
            push(&mut out, "datagen.variant", a.variant.as_ref().filter(|v| *v != "mix"));
            push(&mut out, "datagen.n_samples", a.n);
            push(&mut out, "datagen.seed", a.seed);
            push(&mut out, "datagen.out_dir", a.out.as_ref());
        }
        Command::ImportReal(a) => {
            push(&mut out, "import.seed", a.seed);
            push(&mut out, "import.out_dir", a.out.as_ref());
        }
        Command::Train(a) => {
            push(&mut out, "paths.manifest", a.manifest.as_ref());
            let model = if a.model == "heavy" { "heavy" } else { "light" };
            push(&mut out, &format!("paths.{model}_params"), a.out.as_ref());
            push(&mut out, &format!("{model}.train.epochs"), a.epochs);
        }
        Command::Serve(a) => {
            push(&mut out, "paths.heavy_params", a.heavy.as_ref());
            push(&mut out, "server.listen", a.listen.as_ref());
            push(&mut out, "server.latency_ms", a.latency_ms);
        }
        Command::Cascade(a) => {
            push(&mut out, "paths.light_params", a.light.as_ref());
            push(&mut out, "paths.heavy_params", a.heavy.as_ref());
            push(&mut out, "server.address", a.server.as_ref());
        }
        Command::EvalBinary(a) | Command::EvalStream(a) => eval_overrides(a, &mut out),
        Command::Bench(a) => {
            eval_overrides(&a.eval, &mut out);
            push(&mut out, "eval.svg", a.svg.as_ref());
        }
        Command::Selftest => {}
    }
    out
}

/// Parses `args` (program name first), runs the subcommand and writes its
/// result to `stdout`. Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    match try_run(args, stdout) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn try_run(args: Vec<OsString>, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let (rest, dotted) = extract_dotted(args)?;
    let cli = match Cli::try_parse_from(rest) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            if code == 0 {
                let _ = write!(stdout, "{e}");
            } else {
                eprint!("{e}");
            }
            return Ok(code);
        }
    };
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    cfg.set_all(&shorthand(&cli.command))?;
    cfg.set_all(&dotted)?;
    cfg.validate()?;
    commands::dispatch(cli.command, &cfg, stdout)
}
