mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use biflag::Error;
use clap::{Args, Parser, Subcommand};

use config::RunConfig;

/// Nested named-entity recognition with a bipartite flat-graph network.
#[derive(Debug, Parser)]
#[command(name = "biflag", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on a corpus and write the best checkpoint plus a metrics log.
    Train(Flags),
    /// Score a checkpoint on an annotated corpus.
    Eval(Flags),
    /// Write predicted mentions in the corpus format.
    Predict(Flags),
    /// Measure decoding throughput in tokens per second.
    Bench(Flags),
    /// Generate a synthetic nested corpus.
    Synth(Flags),
}

#[derive(Debug, Args)]
struct Flags {
    /// Settings file with one `key = value` per line; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Corpus file, one JSON sentence record per line.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Development corpus for model selection (train).
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Word vectors, `token v1 ... vd` per line. Written by `synth`.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    report_dir: Option<PathBuf>,
    /// Output file for `predict` and `synth` (default: stdout).
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    lr_flat: Option<f64>,
    #[arg(long)]
    lr_graph: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Width of the BiLSTM and graph features.
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Number of sentences for `synth`.
    #[arg(long)]
    sentences: Option<usize>,
    /// Timed passes for `bench`.
    #[arg(long)]
    passes: Option<usize>,
    /// Any other setting, e.g. `--set word_dim=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Flags {
    fn resolve(&self) -> biflag::Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let overrides: [(&str, Option<String>); 17] = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("checkpoint", path(&self.checkpoint)),
            ("corpus", path(&self.corpus)),
            ("dev", path(&self.dev)),
            ("embeddings", path(&self.embeddings)),
            ("report_dir", path(&self.report_dir)),
            ("output", path(&self.output)),
            ("lr_flat", self.lr_flat.map(|v| v.to_string())),
            ("lr_graph", self.lr_graph.map(|v| v.to_string())),
            ("lambda1", self.lambda1.map(|v| v.to_string())),
            ("lambda2", self.lambda2.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("hidden", self.hidden.map(|v| v.to_string())),
            ("dropout", self.dropout.map(|v| v.to_string())),
            ("sentences", self.sentences.map(|v| v.to_string())),
            ("passes", self.passes.map(|v| v.to_string())),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config {
                field: "set".into(),
                message: format!("expected KEY=VALUE, found {kv:?}"),
            })?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}

/// 1 for problems with the inputs or settings, 2 for failures while running.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. }
        | Error::Parse { .. }
        | Error::Validation { .. }
        | Error::Annotation { .. }
        | Error::Encoding { .. }
        | Error::Dimension { .. }
        | Error::Index { .. }
        | Error::LabelMismatch { .. }
        | Error::Alignment { .. }
        | Error::Empty(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (name, flags, run): (&str, &Flags, fn(&RunConfig) -> biflag::Result<()>) = match &cli.command {
        Command::Train(f) => ("train", f, commands::train),
        Command::Eval(f) => ("eval", f, commands::eval),
        Command::Predict(f) => ("predict", f, commands::predict),
        Command::Bench(f) => ("bench", f, commands::bench),
        Command::Synth(f) => ("synth", f, commands::synth),
    };
    let result = flags.resolve().and_then(|cfg| {
        log::info!("{name} with configuration:\n{cfg}");
        run(&cfg)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
