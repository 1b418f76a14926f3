mod args;
mod commands;
mod manifest;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use blade_core::{Error, LossKind, Result};
use clap::{CommandFactory, Parser};

use args::{Cli, Command};
use commands::{unique_paths, Globals, Touched};
use manifest::{digest, RunManifest};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// Expands `--config <file>` into flags placed right after the subcommand,
/// so that flags given on the command line take precedence.
fn resolve_argv(raw: &[String]) -> std::result::Result<Vec<String>, String> {
    let mut argv = Vec::with_capacity(raw.len());
    let mut config: Option<PathBuf> = None;
    let mut it = raw.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            let v = it.next().ok_or("--config needs a file")?;
            config = Some(PathBuf::from(v));
        } else if let Some(v) = a.strip_prefix("--config=") {
            config = Some(PathBuf::from(v));
        } else {
            argv.push(a.clone());
        }
    }
    let Some(path) = config else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let mut injected = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{}:{}: expected key = value", path.display(), i + 1))?;
        let flag = format!("--{}", key.trim().trim_start_matches("--"));
        match value.trim() {
            "true" => injected.push(flag),
            "false" => {}
            v => {
                injected.push(flag);
                injected.push(v.to_owned());
            }
        }
    }
    let names: Vec<String> = Cli::command().get_subcommands().map(|c| c.get_name().to_owned()).collect();
    let at = argv
        .iter()
        .position(|a| names.contains(a))
        .map_or(argv.len(), |i| i + 1);
    argv.splice(at..at, injected);
    Ok(argv)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Train(_) => "train",
        Command::FinetuneTokens(_) => "finetune-tokens",
        Command::FinetuneMinmax(_) => "finetune-minmax",
        Command::Predict(_) => "predict",
        Command::TuneOffset(_) => "tune-offset",
        Command::BuildDb(_) => "build-db",
        Command::AugmentDb(_) => "augment-db",
        Command::EditDb(_) => "edit-db",
        Command::Audit(_) => "audit",
        Command::ExtractFeatures(_) => "extract-features",
        Command::Rerank(_) => "rerank",
        Command::Eval(_) => "eval",
        Command::Synth(_) => "synth",
        Command::StubEmbed(_) => "stub-embed",
        Command::Replay(_) => "replay",
    }
}

fn execute(cli: &Cli, argv: &[String]) -> Result<()> {
    let g = Globals {
        seed: cli.seed,
        log_timing: cli.log_timing,
    };
    let mut t = Touched::default();
    match &cli.command {
        Command::Train(a) => commands::train_cmd(a, &g, &mut t)?,
        Command::FinetuneTokens(a) => commands::finetune_cmd(a, LossKind::TokenBce, &g, &mut t)?,
        Command::FinetuneMinmax(a) => commands::finetune_cmd(a, LossKind::Minmax, &g, &mut t)?,
        Command::Predict(a) => commands::predict_cmd(a, &mut t)?,
        Command::TuneOffset(a) => commands::tune_offset_cmd(a, &mut t)?,
        Command::BuildDb(a) => commands::build_db_cmd(a, &mut t)?,
        Command::AugmentDb(a) => commands::augment_db_cmd(a, &mut t)?,
        Command::EditDb(a) => commands::edit_db_cmd(a, &mut t)?,
        Command::Audit(a) => commands::audit_cmd(a, &mut t)?,
        Command::ExtractFeatures(a) => commands::features_cmd(a, &mut t)?,
        Command::Rerank(a) => commands::rerank_cmd(a, &g, &mut t)?,
        Command::Eval(a) => commands::eval_cmd(a, &g, &mut t)?,
        Command::Synth(a) => commands::synth_cmd(a, &g, &mut t)?,
        Command::StubEmbed(a) => commands::stub_embed_cmd(a, &mut t)?,
        Command::Replay(a) => {
            let m = RunManifest::load(&a.manifest)?;
            for d in &m.inputs {
                if digest(&d.path)?.sha256 != d.sha256 {
                    eprintln!("warning: input {} changed since the recorded run", d.path.display());
                }
            }
            return run(&m.argv);
        }
    }
    if t.outputs.is_empty() {
        return Ok(());
    }
    let manifest = RunManifest {
        tool: "blade".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command_name(&cli.command).into(),
        argv: argv.to_vec(),
        config: serde_json::to_value(cli).map_err(|e| Error::Format(e.to_string()))?,
        seed: cli.seed,
        inputs: unique_paths(&t.inputs).iter().map(|p| digest(p)).collect::<Result<_>>()?,
        outputs: unique_paths(&t.outputs),
        fingerprints: unique_paths(&t.models).iter().map(|p| digest(p)).collect::<Result<_>>()?,
    };
    manifest.write_all()
}

fn run(argv: &[String]) -> Result<()> {
    let mut full = vec!["blade".to_owned()];
    full.extend_from_slice(argv);
    let cli = Cli::try_parse_from(&full).map_err(|e| Error::Config(e.to_string()))?;
    execute(&cli, argv)
}

fn main() -> ExitCode {
    let raw: Vec<String> = std::env::args().skip(1).collect();
    let argv = match resolve_argv(&raw) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let mut full = vec!["blade".to_owned()];
    full.extend(argv.iter().cloned());
    let cli = match Cli::try_parse_from(&full) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match execute(&cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
