use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wig_core::corpus::write_jsonl;
use wig_core::pipeline::{run_pipeline, run_stage, RunConfig, Stage};
use wig_core::synth::{headline_corpus, HeadlineConfig};
use wig_core::Error;

/// Wasserstein index generation: topics from dated headlines, collapsed into
/// a monthly index.
#[derive(Parser, Debug)]
#[command(name = "wig", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Overrides,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tokenize the corpus, build the vocabulary and document distributions.
    Prep,
    /// Train word embeddings and the cost matrix.
    Embed,
    /// Fit topics and weights.
    Train,
    /// Build the scaled monthly index and topic report.
    Index,
    /// Compare the index against a reference series.
    Eval,
    /// Grid search over hyperparameters on a held-out split.
    Tune,
    /// All stages from corpus to index (and eval when a reference is set).
    Run,
    /// Write a synthetic dated headline corpus as JSON lines.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output file.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    docs: usize,
    #[arg(long, default_value_t = 24)]
    months: usize,
    /// Size of the pseudo-word pool.
    #[arg(long, default_value_t = 400)]
    words: usize,
    #[arg(long, default_value_t = 1)]
    synth_seed: u64,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// Config file of `section.key=value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Extra `key=value` setting, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    reference: Option<PathBuf>,
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    #[arg(long, global = true)]
    topics: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    #[arg(long, global = true)]
    embed_depth: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Negate the index orientation.
    #[arg(long, global = true)]
    flip_index: bool,
    /// Average document scores per month instead of summing them.
    #[arg(long, global = true)]
    monthly_mean: bool,
    #[arg(long, global = true)]
    hp_lambda: Option<f64>,
    /// Reconstruction loss: kl or l2.
    #[arg(long, global = true)]
    loss: Option<String>,
    /// Training precision: f32 or f64.
    #[arg(long, global = true)]
    precision: Option<String>,
    /// Write an SVG plot with the evaluation.
    #[arg(long, global = true)]
    plot: bool,
}

impl Overrides {
    fn settings(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        put("paths.corpus", path(&self.corpus));
        put("paths.output", path(&self.output));
        put("paths.reference", path(&self.reference));
        put("sinkhorn.epsilon", self.epsilon.map(|x| x.to_string()));
        put("train.topics", self.topics.map(|x| x.to_string()));
        put("train.batch_size", self.batch_size.map(|x| x.to_string()));
        put("train.learning_rate", self.learning_rate.map(|x| x.to_string()));
        put("embed.depth", self.embed_depth.map(|x| x.to_string()));
        put("train.epochs", self.epochs.map(|x| x.to_string()));
        put("seed", self.seed.map(|x| x.to_string()));
        put("index.flip", self.flip_index.then(|| "true".to_string()));
        put("index.aggregation", self.monthly_mean.then(|| "mean".to_string()));
        put("eval.hp_lambda", self.hp_lambda.map(|x| x.to_string()));
        put("train.loss", self.loss.clone());
        put("train.precision", self.precision.clone());
        put("eval.plot", self.plot.then(|| "true".to_string()));
        out
    }

    fn config(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::InvalidConfig(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k, v)?;
        }
        for (k, v) in self.settings() {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }
}

fn synth(args: &SynthArgs) -> Result<(), Error> {
    let cfg = HeadlineConfig { n_docs: args.docs, months: args.months, n_words: args.words, seed: args.synth_seed, ..HeadlineConfig::default() };
    let docs = headline_corpus(&cfg)?;
    let mut w = BufWriter::new(File::create(&args.out)?);
    write_jsonl(&docs, &mut w)?;
    std::io::Write::flush(&mut w)?;
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), Error> {
    let stage = match &cli.command {
        Command::Synth(a) => return synth(a),
        Command::Run => {
            let summary = run_pipeline(&cli.opts.config()?)?;
            println!("index: {} months", summary.index.len());
            if let Some(r) = summary.report {
                println!("pearson raw {:.4} trend {:.4} cycle {:.4}", r.pearson.raw, r.pearson.trend, r.pearson.cycle);
                println!("spearman raw {:.4} trend {:.4} cycle {:.4}", r.spearman.raw, r.spearman.trend, r.spearman.cycle);
            }
            return Ok(());
        }
        Command::Prep => Stage::Prep,
        Command::Embed => Stage::Embed,
        Command::Train => Stage::Train,
        Command::Index => Stage::Index,
        Command::Eval => Stage::Eval,
        Command::Tune => Stage::Tune,
    };
    run_stage(&cli.opts.config()?, stage)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
