//! Command-line definition and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands;
use crate::config::RunConfig;
use crate::error::{validation, CliResult};

#[derive(Parser)]
#[command(
    name = "tatumscribe",
    about = "Tatum-level drum transcription: synthetic corpora, language models, regularized training, and evaluation",
    version
)]
pub struct Cli {
    /// Declarative JSON configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed for all randomness of the invoked command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic paired corpus with a train/val/test manifest.
    Synth(SynthArgs),
    /// Pretrain a language model on symbolic scores.
    TrainLm(TrainLmArgs),
    /// Report per-score and mean perplexity of a language model.
    EvalLm(EvalLmArgs),
    /// Train the frame-to-tatum transcriber, optionally LM-regularized.
    Train(TrainArgs),
    /// Transcribe audio (WAV + beat times) into tatum-level scores.
    Transcribe(TranscribeArgs),
    /// Train the frame-level comparison model.
    BaselineTrain(BaselineTrainArgs),
    /// Transcribe with the frame-level model plus peak picking.
    BaselineTranscribe(TranscribeArgs),
    /// Quantize a frame-level onset annotation onto a tatum grid.
    Quantize(QuantizeArgs),
    /// Score estimated tatum scores (or beat lists) against references.
    Evaluate(EvaluateArgs),
    /// Tabulate metric CSVs from the system variants side by side.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory for songs and the manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of songs to generate.
    #[arg(long)]
    pub n_songs: Option<usize>,
    /// Bars per song.
    #[arg(long)]
    pub bars: Option<usize>,
}

#[derive(Args)]
pub struct TrainLmArgs {
    /// Model kind: bigram or gru.
    #[arg(long)]
    pub kind: String,
    /// Corpus: a directory of score JSONs or a manifest path.
    #[arg(long)]
    pub scores: PathBuf,
    /// Manifest split to use (when --scores is a manifest).
    #[arg(long)]
    pub split: Option<String>,
    /// Training epochs for the GRU model.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalLmArgs {
    /// Model file: bigram JSON or GRU checkpoint (sniffed by magic).
    #[arg(long)]
    pub model: PathBuf,
    /// Corpus: a directory of score JSONs or a manifest path.
    #[arg(long)]
    pub scores: PathBuf,
    /// Manifest split to use (when --scores is a manifest).
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Pretrained language model file enabling regularization.
    #[arg(long)]
    pub lm: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Regularizer weight (defaults to the published value per LM kind).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Onset-class weight (defaults to the published value per LM kind).
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct BaselineTrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Onset-frame weight in the frame cross entropy.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TranscribeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Single-song mode: input WAV (requires --beats).
    #[arg(long, requires = "beats", conflicts_with_all = ["manifest", "split"])]
    pub wav: Option<PathBuf>,
    /// Single-song mode: beat times, one per line.
    #[arg(long)]
    pub beats: Option<PathBuf>,
    /// Batch mode: manifest path (requires --split).
    #[arg(long, requires = "split")]
    pub manifest: Option<PathBuf>,
    /// Batch mode: which manifest split to transcribe.
    #[arg(long)]
    pub split: Option<String>,
    /// Binarization threshold override.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct QuantizeArgs {
    /// Onset annotation: "<time>\t<instrument>" lines.
    #[arg(long)]
    pub annotation: PathBuf,
    /// Beat times, one per line.
    #[arg(long)]
    pub beats: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Estimated score JSON, or a directory of <id>.score.json files.
    #[arg(long)]
    pub est: Option<PathBuf>,
    /// Reference score JSON (single-file mode).
    #[arg(long, conflicts_with_all = ["manifest", "split"])]
    pub reference: Option<PathBuf>,
    /// Manifest naming the references (directory mode; requires --split).
    #[arg(long, requires = "split")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    /// Estimated beat list (beat evaluation mode; requires --ref-beats).
    #[arg(long, requires = "ref_beats", conflicts_with_all = ["est", "reference", "manifest", "split"])]
    pub est_beats: Option<PathBuf>,
    /// Reference beat list.
    #[arg(long)]
    pub ref_beats: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Metrics CSV of the frame-level baseline.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Metrics CSV of the unregularized transcriber.
    #[arg(long)]
    pub plain: Option<PathBuf>,
    /// Metrics CSV of the bi-gram-regularized transcriber.
    #[arg(long)]
    pub bigram: Option<PathBuf>,
    /// Metrics CSV of the GRU-regularized transcriber.
    #[arg(long)]
    pub gru: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Runs the parsed command; flag overrides are folded into the config so
/// the effective dump reflects what actually ran.
pub fn dispatch(cli: Cli) -> CliResult<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    let seed = cfg.train.seed;

    match cli.command {
        Command::Synth(args) => {
            if let Some(n) = args.n_songs {
                cfg.synth.n_songs = n;
            }
            if let Some(b) = args.bars {
                cfg.synth.bars = b;
            }
            commands::synth::run(&cfg, seed, &args.out)
        }
        Command::TrainLm(args) => {
            if let Some(e) = args.epochs {
                cfg.lm.epochs = e;
            }
            commands::lm::train(
                &cfg,
                &args.kind,
                &args.scores,
                args.split.as_deref(),
                seed,
                &args.out,
            )
        }
        Command::EvalLm(args) => commands::lm::eval(&args.model, &args.scores, args.split.as_deref()),
        Command::Train(args) => {
            if let Some(e) = args.epochs {
                cfg.train.epochs = e;
            }
            if let Some(a) = args.alpha {
                cfg.train.alpha = Some(a);
            }
            if let Some(g) = args.gamma {
                cfg.train.gamma = Some(g);
            }
            commands::train::run(&mut cfg, &args.manifest, args.lm.as_deref(), &args.out)
        }
        Command::BaselineTrain(args) => {
            if let Some(e) = args.epochs {
                cfg.train.epochs = e;
            }
            if let Some(b) = args.beta {
                cfg.baseline.beta = b;
            }
            commands::train::run_baseline(&mut cfg, &args.manifest, &args.out)
        }
        Command::Transcribe(args) => {
            if let Some(t) = args.threshold {
                cfg.train.threshold = t;
            }
            let inputs = transcribe_inputs(&args)?;
            commands::transcribe::run(&cfg, &args.checkpoint, inputs, &args.out)
        }
        Command::BaselineTranscribe(args) => {
            if let Some(t) = args.threshold {
                cfg.train.threshold = t;
            }
            let inputs = transcribe_inputs(&args)?;
            commands::transcribe::run_baseline(&cfg, &args.checkpoint, inputs, &args.out)
        }
        Command::Quantize(args) => {
            commands::quantize::run(&cfg, &args.annotation, &args.beats, &args.out)
        }
        Command::Evaluate(args) => {
            if let (Some(est_beats), Some(ref_beats)) = (&args.est_beats, &args.ref_beats) {
                return commands::evaluate::run_beats(est_beats, ref_beats);
            }
            let est = args.est.as_deref().ok_or_else(|| {
                validation(anyhow::anyhow!("pass --est (or --est-beats/--ref-beats)"))
            })?;
            let inputs = if est.is_dir() {
                let manifest = args.manifest.as_deref().ok_or_else(|| {
                    validation(anyhow::anyhow!(
                        "--est is a directory, so --manifest and --split are required"
                    ))
                })?;
                commands::evaluate::Inputs::Dir {
                    est_dir: est,
                    manifest,
                    split: args.split.as_deref().expect("clap enforces"),
                }
            } else {
                let reference = args.reference.as_deref().ok_or_else(|| {
                    validation(anyhow::anyhow!("single-file mode needs --reference"))
                })?;
                commands::evaluate::Inputs::Files { est, reference }
            };
            commands::evaluate::run(&cfg, inputs, args.out.as_deref())
        }
        Command::Report(args) => commands::report::run(
            commands::report::ReportInputs {
                baseline: args.baseline.as_deref(),
                plain: args.plain.as_deref(),
                bigram: args.bigram.as_deref(),
                gru: args.gru.as_deref(),
            },
            args.out.as_deref(),
        ),
    }
}

fn transcribe_inputs(args: &TranscribeArgs) -> CliResult<commands::transcribe::Inputs<'_>> {
    match (&args.wav, &args.manifest) {
        (Some(wav), None) => Ok(commands::transcribe::Inputs::Single {
            wav,
            beats: args.beats.as_deref().expect("clap enforces --beats"),
        }),
        (None, Some(manifest)) => Ok(commands::transcribe::Inputs::Split {
            manifest,
            split: args.split.as_deref().expect("clap enforces --split"),
        }),
        _ => Err(validation(anyhow::anyhow!(
            "pass either --wav/--beats or --manifest/--split"
        ))),
    }
}
