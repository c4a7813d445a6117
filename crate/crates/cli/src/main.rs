//! `babble`: the imitation pipeline as subcommands over manifests and
//! files. Failures print `error<TAB>code<TAB>message` on stderr and exit 1
//! (runtime) or 2 (usage or configuration).

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use babble_core::dsp::FeatureKind;
use clap::{Parser, Subcommand, ValueEnum};

use commands::{AbxArgs, ProbeArgs, ProbeTarget, Repr};
use config::RunConfig;

#[derive(Debug)]
pub struct CliError {
    pub code: String,
    pub message: String,
    pub exit: u8,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: "usage".into(),
            message: message.into(),
            exit: 2,
        }
    }

    pub fn runtime(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
            exit: 1,
        }
    }
}

impl From<babble_core::Error> for CliError {
    fn from(e: babble_core::Error) -> Self {
        let exit = match e {
            babble_core::Error::Config(_) => 2,
            _ => 1,
        };
        Self {
            code: e.code().into(),
            message: e.to_string(),
            exit,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Mfcc39,
    Logmel80,
}

#[derive(Parser)]
#[command(name = "babble", version, about = "Articulatory imitation pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute a feature file from a 16 kHz mono WAV.
    ExtractFeatures {
        /// Input WAV.
        #[arg(long = "in")]
        input: PathBuf,
        /// Feature type.
        #[arg(long, value_enum)]
        kind: Kind,
        /// Output feature file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the pitch period and harmonicity track of a WAV as a
    /// two-column feature file.
    ExtractSource {
        /// Input WAV.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output feature file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit guided PCA on the EMA recordings (`ema=` key) of a manifest.
    FitGpca {
        /// Corpus manifest.
        #[arg(long)]
        manifest: PathBuf,
        /// Stage specification; the built-in six-stage layout when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output checkpoint.
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode an EMA recording with a fitted guided-PCA model.
    ApplyGpca {
        /// Guided-PCA checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        /// EMA TSV file.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output trajectory file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic VCV corpus with features, trajectories,
    /// sources, alignments and a split-tagged manifest.
    GenSynthetic {
        /// Run configuration (speakers, items_per_speaker, speaker_scale, splits).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Generation seed; overrides `seed` from the configuration.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        outdir: PathBuf,
    },
    /// Train the neural synthesizer on (trajectory, source, log-mel) frames.
    TrainSynth {
        /// Corpus manifest with trajectory, source and logmel80 features.
        #[arg(long)]
        manifest: PathBuf,
        /// Run configuration (synth_* keys and seed).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output checkpoint.
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Train the inverse model by imitation through a frozen synthesizer.
    TrainImitation {
        /// Corpus manifest with features and source tracks.
        #[arg(long)]
        manifest: PathBuf,
        /// Run configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output checkpoint.
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss CSV.
        #[arg(long)]
        log: PathBuf,
    },
    /// Predict trajectories for manifest utterances. Writes `<id>.traj`
    /// and `<id>.csv` per utterance.
    Infer {
        /// Inverse-model checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        /// Corpus manifest.
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory.
        #[arg(long)]
        outdir: PathBuf,
        /// Only utterances tagged with this split.
        #[arg(long)]
        split: Option<String>,
    },
    /// Pearson correlation per parameter between predicted and reference
    /// trajectories, pairing `<id>.traj` files by name.
    EvalCorr {
        /// Directory of predicted trajectories.
        #[arg(long)]
        pred: PathBuf,
        /// Directory of reference trajectories.
        #[arg(long)]
        truth: PathBuf,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Machine ABX consonant discrimination over VCV items.
    EvalAbx {
        /// Corpus manifest with alignments.
        #[arg(long)]
        manifest: PathBuf,
        /// Representation to score.
        #[arg(long, value_enum)]
        repr: Repr,
        /// Directory of predicted trajectories, for `--repr pred`.
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Only utterances tagged with this split.
        #[arg(long)]
        split: Option<String>,
        /// Phone inventory TSV; the synthetic inventory when omitted.
        #[arg(long)]
        inventory: Option<PathBuf>,
        /// Use within-speaker triplets regardless of `abx_mode`.
        #[arg(long)]
        within_speaker: bool,
        /// Run configuration (abx_mode, abx_cap, seed).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Frame-level linear probe for phone or speaker identity.
    Probe {
        /// Corpus manifest.
        #[arg(long)]
        manifest: PathBuf,
        /// Label to predict.
        #[arg(long, value_enum)]
        target: ProbeTarget,
        /// Representation to probe.
        #[arg(long, value_enum, default_value = "features")]
        repr: Repr,
        /// Directory of predicted trajectories, for `--repr pred`.
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Run configuration (probe_* keys and seed).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Word error rate of a hypothesis transcript against a reference.
    Wer {
        /// Reference transcript.
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Hypothesis transcript.
        #[arg(long)]
        hyp: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => RunConfig::load(p).map_err(|e| CliError {
            code: "config".into(),
            message: if e.line > 0 {
                format!("{} line {}: {}", p.display(), e.line, e.message)
            } else {
                e.message
            },
            exit: 2,
        }),
    }
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::ExtractFeatures { input, kind, out } => {
            let kind = match kind {
                Kind::Mfcc39 => FeatureKind::Mfcc39,
                Kind::Logmel80 => FeatureKind::LogMel80,
            };
            commands::extract_features(&input, kind, &out)
        }
        Cmd::ExtractSource { input, out } => commands::extract_source_cmd(&input, &out),
        Cmd::FitGpca { manifest, spec, out } => commands::fit_gpca(&manifest, spec.as_deref(), &out),
        Cmd::ApplyGpca { ckpt, input, out } => commands::apply_gpca(&ckpt, &input, &out),
        Cmd::GenSynthetic { config, seed, outdir } => {
            let cfg = load_config(config.as_deref())?;
            commands::gen_synthetic(&cfg, seed.unwrap_or(cfg.seed), &outdir)
        }
        Cmd::TrainSynth {
            manifest,
            config,
            out,
            log,
        } => {
            let cfg = load_config(config.as_deref())?;
            commands::train_synth(&cfg, &manifest, &out, log.as_deref())
        }
        Cmd::TrainImitation {
            manifest,
            config,
            out,
            log,
        } => {
            let cfg = load_config(config.as_deref())?;
            commands::train_imitation(&cfg, &manifest, &out, &log)
        }
        Cmd::Infer {
            ckpt,
            manifest,
            outdir,
            split,
        } => commands::infer(&ckpt, &manifest, &outdir, split.as_deref()),
        Cmd::EvalCorr { pred, truth, out } => commands::eval_corr(&pred, &truth, out.as_deref()),
        Cmd::EvalAbx {
            manifest,
            repr,
            pred,
            split,
            inventory,
            within_speaker,
            config,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            commands::eval_abx(
                &cfg,
                &AbxArgs {
                    manifest: &manifest,
                    repr,
                    pred: pred.as_deref(),
                    split: split.as_deref(),
                    inventory: inventory.as_deref(),
                    within_speaker,
                    out: out.as_deref(),
                },
            )
        }
        Cmd::Probe {
            manifest,
            target,
            repr,
            pred,
            config,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            commands::probe(
                &cfg,
                &ProbeArgs {
                    manifest: &manifest,
                    target,
                    repr,
                    pred: pred.as_deref(),
                    out: out.as_deref(),
                },
            )
        }
        Cmd::Wer { reference, hyp } => commands::wer_cmd(&reference, &hyp),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error\tusage\t{}", one_line(first));
            return ExitCode::from(2);
        }
        Err(e) => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error\t{}\t{}", e.code, one_line(&e.message));
            ExitCode::from(e.exit)
        }
    }
}
