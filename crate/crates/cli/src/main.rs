//! Command-line driver for the backdoor experiment pipeline.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use codeback::backdoor::{TargetKind, TriggerKind};
use codeback::detector::ScoreMode;
use codeback::model::RepresentationKind;
use codeback::pipeline::{self, ExperimentConfig};

#[derive(Parser, Debug)]
#[command(name = "codeback", version, about = "Dead-code backdoors and spectral detection for code summarizers")]
struct Cli {
    /// JSON experiment configuration; defaults are used for missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory for all artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Poisoning rate; 0 disables poisoning and detection.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Number of singular directions used for scoring.
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true, value_enum)]
    repr: Option<Repr>,
    #[arg(long, global = true, value_enum)]
    trigger: Option<Trigger>,
    #[arg(long, global = true, value_enum)]
    target: Option<Target>,
    #[arg(long, global = true, value_enum)]
    score: Option<Score>,
    /// Training epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Synthetic corpus sizes as TRAIN,TEST.
    #[arg(long, global = true, value_parser = parse_sizes)]
    synthetic: Option<(usize, usize)>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the training and test corpora.
    GenCorpus,
    /// Append poisoned copies to the training set.
    Poison,
    /// Train on the poisoned training set.
    Train,
    /// Extract representations of every training sample.
    Extract,
    /// Score representations and remove the top outliers.
    Detect,
    /// Retrain on the cleaned training set.
    Retrain,
    /// Evaluate F1 and backdoor success before and after removal.
    Eval,
    /// Export outlier scores with labels.
    Hist,
    /// Recall of removal for each k in the configured sweep.
    KSweep {
        /// Comma-separated k values, e.g. 1,2,5,10,20.
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
    },
    /// Run every stage in order.
    RunAll,
    /// Print the effective configuration as JSON.
    ShowConfig,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Repr {
    EncoderOutput,
    ContextVectors,
    MeanContext,
    DecoderStates,
    MeanDecoderState,
    MeanInputEmbedding,
}

impl From<Repr> for RepresentationKind {
    fn from(r: Repr) -> Self {
        match r {
            Repr::EncoderOutput => RepresentationKind::EncoderOutput,
            Repr::ContextVectors => RepresentationKind::ContextVectors,
            Repr::MeanContext => RepresentationKind::MeanContext,
            Repr::DecoderStates => RepresentationKind::DecoderStates,
            Repr::MeanDecoderState => RepresentationKind::MeanDecoderState,
            Repr::MeanInputEmbedding => RepresentationKind::MeanInputEmbedding,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Trigger {
    Fixed,
    Grammatical,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Target {
    Static,
    Dynamic,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Score {
    Alg1,
    Topk,
}

fn parse_sizes(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected TRAIN,TEST")?;
    let parse = |x: &str| x.trim().parse::<usize>().map_err(|e| e.to_string());
    Ok((parse(a)?, parse(b)?))
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(e) = cli.epsilon {
        cfg.backdoor.epsilon = e;
    }
    if let Some(k) = cli.k {
        cfg.detector.k = k;
    }
    if let Some(r) = cli.repr {
        cfg.detector.representation = r.into();
    }
    if let Some(t) = cli.trigger {
        cfg.backdoor.trigger_kind = match t {
            Trigger::Fixed => TriggerKind::Fixed,
            Trigger::Grammatical => TriggerKind::Grammatical,
        };
    }
    if let Some(t) = cli.target {
        cfg.backdoor.target_kind = match t {
            Target::Static => TargetKind::Static,
            Target::Dynamic => TargetKind::Dynamic,
        };
    }
    if let Some(s) = cli.score {
        cfg.detector.score = match s {
            Score::Alg1 => ScoreMode::Alg1,
            Score::Topk => ScoreMode::TopK,
        };
    }
    if let Some(e) = cli.epochs {
        cfg.model.epochs = e;
    }
    if let Some((train, test)) = cli.synthetic {
        cfg.corpus.source = pipeline::CorpusSource::Synthetic { train, test };
    }
    if let Command::KSweep { ks: Some(ks) } = &cli.command {
        cfg.detector.k_sweep = ks.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    let kind = cfg.detector.representation;
    match cli.command {
        Command::GenCorpus => pipeline::cmd_gen_corpus(&cfg)?,
        Command::Poison => {
            let s = pipeline::cmd_poison(&cfg)?;
            println!("{} poisoned copies, realized epsilon {:.4}", s.copies, s.realized_epsilon);
        }
        Command::Train => {
            let log = pipeline::cmd_train(&cfg)?;
            println!("loss {:.4} -> {:.4}", log.initial_loss, log.final_loss());
        }
        Command::Extract => {
            let set = pipeline::cmd_extract(&cfg, kind)?;
            println!("{} vectors of dimension {}", set.vector_count(), set.dim);
        }
        Command::Detect => {
            let report = pipeline::cmd_detect(&cfg)?;
            let recall = report
                .summary
                .recall
                .map_or_else(|| "n/a".to_string(), |r| format!("{r:.3}"));
            println!("removed {}, recall {recall}", report.summary.removed);
        }
        Command::Retrain => {
            let log = pipeline::cmd_retrain(&cfg)?;
            println!("loss {:.4} -> {:.4}", log.initial_loss, log.final_loss());
        }
        Command::Eval | Command::RunAll => {
            let report = if matches!(cli.command, Command::RunAll) {
                pipeline::cmd_run_all(&cfg)?
            } else {
                pipeline::cmd_eval(&cfg)?
            };
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Hist => {
            let path = pipeline::cmd_hist(&cfg)?;
            println!("{}", path.display());
        }
        Command::KSweep { .. } => {
            for (k, r) in pipeline::cmd_k_sweep(&cfg, kind)? {
                let r = r.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"));
                println!("k={k} recall={r}");
            }
        }
        Command::ShowConfig => println!("{}", serde_json::to_string_pretty(&cfg)?),
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
