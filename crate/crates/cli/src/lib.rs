// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line driver for `cfedit-core`: artifact formats, run
//! configuration, and one command per pipeline stage.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod run;
pub mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::Pool;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::run::Run;

pub use crate::error::CliError as Error;

pub const OUT_ENV: &str = "CFEDIT_OUT";
pub const DEFAULT_OUT: &str = "cfedit-out";

#[derive(Debug, Parser)]
#[command(
    name = "cfedit",
    version,
    about = "Counterfactual activation editing pipeline"
)]
struct Cli {
    /// key = value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root (default: $CFEDIT_OUT, then ./cfedit-out)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    group: Group,
}

/// Remaining `--key value` pairs override configuration keys.
#[derive(Debug, Args, Default)]
struct Overrides {
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "--KEY VALUE"
    )]
    rest: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Group {
    /// Synthetic corpus
    Corpus {
        #[command(subcommand)]
        action: CorpusCmd,
    },
    /// Toy encoder
    Model {
        #[command(subcommand)]
        action: ModelCmd,
    },
    /// Linear probes and correlation analyses
    Probe {
        #[command(subcommand)]
        action: ProbeCmd,
    },
    /// Latent codec over final-layer activations
    Codec {
        #[command(subcommand)]
        action: TrainCmd,
    },
    /// Prototype codebook over codec latents
    Codebook {
        #[command(subcommand)]
        action: TrainCmd,
    },
    /// Activation edits on test sequences
    Edit {
        #[command(subcommand)]
        action: EditCmd,
    },
    /// Evaluations over the test split
    Eval {
        #[command(subcommand)]
        action: EvalCmd,
    },
}

#[derive(Debug, Subcommand)]
enum CorpusCmd {
    Gen(Overrides),
}

#[derive(Debug, Subcommand)]
enum ModelCmd {
    Train(Overrides),
}

#[derive(Debug, Subcommand)]
enum TrainCmd {
    Train(Overrides),
}

#[derive(Debug, Subcommand)]
enum ProbeCmd {
    Train(Overrides),
    AnalyzeLayers(Overrides),
    AnalyzeNeurons(Overrides),
}

#[derive(Debug, Subcommand)]
enum EditCmd {
    Prosody(Overrides),
    Pronounce(Overrides),
}

#[derive(Debug, Subcommand)]
enum EvalCmd {
    Ratios(Overrides),
    Per(Overrides),
    Entangle(Overrides),
    Correction(Overrides),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    CorpusGen,
    ModelTrain,
    ProbeTrain,
    AnalyzeLayers,
    AnalyzeNeurons,
    CodecTrain,
    CodebookTrain,
    EditProsody,
    EditPronounce,
    EvalRatios,
    EvalPer,
    EvalEntangle,
    EvalCorrection,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::CorpusGen => "corpus gen",
            Command::ModelTrain => "model train",
            Command::ProbeTrain => "probe train",
            Command::AnalyzeLayers => "probe analyze-layers",
            Command::AnalyzeNeurons => "probe analyze-neurons",
            Command::CodecTrain => "codec train",
            Command::CodebookTrain => "codebook train",
            Command::EditProsody => "edit prosody",
            Command::EditPronounce => "edit pronounce",
            Command::EvalRatios => "eval ratios",
            Command::EvalPer => "eval per",
            Command::EvalEntangle => "eval entangle",
            Command::EvalCorrection => "eval correction",
        }
    }

    fn execute(self, run: &mut Run, pool: &Pool) -> CliResult<String> {
        use crate::commands::*;
        match self {
            Command::CorpusGen => corpus_gen(run),
            Command::ModelTrain => model_train(run),
            Command::ProbeTrain => probe_train(run, pool),
            Command::AnalyzeLayers => analyze_layers(run, pool),
            Command::AnalyzeNeurons => analyze_neurons(run, pool),
            Command::CodecTrain => codec_train(run),
            Command::CodebookTrain => codebook_train(run),
            Command::EditProsody => edit_prosody(run, pool),
            Command::EditPronounce => edit_pronounce(run, pool),
            Command::EvalRatios => eval_ratios(run, pool),
            Command::EvalPer => eval_per(run, pool),
            Command::EvalEntangle => eval_entangle(run, pool),
            Command::EvalCorrection => eval_correction(run, pool),
        }
    }
}

fn split(group: Group) -> (Command, Overrides) {
    match group {
        Group::Corpus {
            action: CorpusCmd::Gen(o),
        } => (Command::CorpusGen, o),
        Group::Model {
            action: ModelCmd::Train(o),
        } => (Command::ModelTrain, o),
        Group::Probe { action } => match action {
            ProbeCmd::Train(o) => (Command::ProbeTrain, o),
            ProbeCmd::AnalyzeLayers(o) => (Command::AnalyzeLayers, o),
            ProbeCmd::AnalyzeNeurons(o) => (Command::AnalyzeNeurons, o),
        },
        Group::Codec {
            action: TrainCmd::Train(o),
        } => (Command::CodecTrain, o),
        Group::Codebook {
            action: TrainCmd::Train(o),
        } => (Command::CodebookTrain, o),
        Group::Edit { action } => match action {
            EditCmd::Prosody(o) => (Command::EditProsody, o),
            EditCmd::Pronounce(o) => (Command::EditPronounce, o),
        },
        Group::Eval { action } => match action {
            EvalCmd::Ratios(o) => (Command::EvalRatios, o),
            EvalCmd::Per(o) => (Command::EvalPer, o),
            EvalCmd::Entangle(o) => (Command::EvalEntangle, o),
            EvalCmd::Correction(o) => (Command::EvalCorrection, o),
        },
    }
}

/// Fully resolved invocation.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub command: Command,
    pub config: RunConfig,
    pub out: PathBuf,
    pub threads: usize,
}

/// `--key value` / `--key=value` pairs; the global flags are honoured here too
/// because they may appear after the first override.
fn parse_overrides(
    rest: &[String],
    config_file: &mut Option<PathBuf>,
    out: &mut Option<PathBuf>,
    threads: &mut usize,
) -> CliResult<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    let mut it = rest.iter();
    while let Some(arg) = it.next() {
        let key = arg
            .strip_prefix("--")
            .ok_or_else(|| CliError::Config(format!("unexpected argument `{arg}`")))?;
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| CliError::Config(format!("`--{key}` needs a value")))?;
                (key.to_string(), v.clone())
            }
        };
        match key.as_str() {
            "config" => *config_file = Some(PathBuf::from(value)),
            "out" => *out = Some(PathBuf::from(value)),
            "threads" => {
                *threads = value
                    .parse()
                    .map_err(|_| CliError::Config(format!("bad thread count `{value}`")))?
            }
            _ => pairs.push((key, value)),
        }
    }
    Ok(pairs)
}

/// Parse arguments (without running anything).
pub fn parse_args<I, T>(args: I) -> Result<Invocation, ParseOutcome>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(ParseOutcome::Clap)?;
    let (command, overrides) = split(cli.group);
    let (mut config_file, mut out, mut threads) = (cli.config, cli.out, cli.threads);
    let mut resolve = || -> CliResult<Invocation> {
        let pairs = parse_overrides(&overrides.rest, &mut config_file, &mut out, &mut threads)?;
        let mut config = RunConfig::default();
        if let Some(path) = &config_file {
            config.apply_file(path)?;
        }
        for (k, v) in &pairs {
            config.set(k, v)?;
        }
        if threads == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        let out = out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        Ok(Invocation {
            command,
            config,
            out,
            threads,
        })
    };
    resolve().map_err(ParseOutcome::Cli)
}

#[derive(Debug)]
pub enum ParseOutcome {
    Clap(clap::Error),
    Cli(CliError),
}

/// Run one resolved command; on failure outputs are renamed `*.partial`.
pub fn execute(inv: Invocation) -> CliResult<String> {
    let pool = Pool::new(inv.threads)?;
    let mut run = Run::new(inv.out, inv.command.name(), inv.config);
    match inv.command.execute(&mut run, &pool) {
        Ok(summary) => {
            run.finish()?;
            Ok(summary)
        }
        Err(e) => {
            run.fail(&e);
            Err(e)
        }
    }
}

/// Entry point shared by the binary and tests; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let inv = match parse_args(args) {
        Ok(inv) => inv,
        Err(ParseOutcome::Clap(e)) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
        Err(ParseOutcome::Cli(e)) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let name = inv.command.name();
    match execute(inv) {
        Ok(summary) => {
            println!("{name}: {summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {name}: {e}");
            e.exit_code()
        }
    }
}
