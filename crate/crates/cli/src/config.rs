//! `key=value` run configuration. Every key has a default here; a file
//! only overrides. Unknown keys and bad values are rejected on load.

use std::path::{Path, PathBuf};

use babble_core::eval::{AbxMode, ProbeConfig};
use babble_core::imitation::TrainConfig;
use babble_core::synth::{CorpusConfig, SpeakerScales, SynthTrainConfig, SYNTH_HIDDEN, SYNTH_LAYERS};

#[derive(Clone, Debug, PartialEq)]
pub enum LossSpaceChoice {
    LogMel,
    Mfcc,
    Encoder(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub enum SynthChoice {
    Analytic,
    Net(PathBuf),
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: usize,
    pub layers: usize,
    pub convergence_tol: f64,
    pub loss_space: LossSpaceChoice,
    /// Feed the inverse model the stored features even when the loss space
    /// differs from them.
    pub decouple_input: bool,
    pub synth: SynthChoice,
    /// Train, validation and test fractions.
    pub splits: (f64, f64, f64),
    pub speakers: usize,
    pub items_per_speaker: usize,
    pub speaker_scale: SpeakerScales,
    pub abx_cap: Option<usize>,
    pub abx_mode: AbxMode,
    pub probe_epochs: usize,
    pub probe_lr: f64,
    pub probe_weight_decay: f64,
    pub synth_epochs: usize,
    pub synth_batch_frames: usize,
    pub synth_lr: f64,
    pub synth_hidden: usize,
    pub synth_layers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let s = SynthTrainConfig::default();
        let p = ProbeConfig::default();
        let c = CorpusConfig::default();
        Self {
            seed: 0,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            hidden: t.hidden,
            layers: t.layers,
            convergence_tol: t.convergence_tol,
            loss_space: LossSpaceChoice::LogMel,
            decouple_input: false,
            synth: SynthChoice::Analytic,
            splits: (0.8, 0.1, 0.1),
            speakers: c.speakers,
            items_per_speaker: c.items_per_speaker,
            speaker_scale: c.speaker_scales,
            abx_cap: None,
            abx_mode: AbxMode::WithinSpeaker,
            probe_epochs: p.epochs,
            probe_lr: p.lr,
            probe_weight_decay: p.weight_decay,
            synth_epochs: s.epochs,
            synth_batch_frames: s.batch_frames,
            synth_lr: s.lr,
            synth_hidden: SYNTH_HIDDEN,
            synth_layers: SYNTH_LAYERS,
        }
    }
}

pub const KEYS: [&str; 24] = [
    "seed",
    "epochs",
    "batch_size",
    "lr",
    "hidden",
    "layers",
    "convergence_tol",
    "loss_space",
    "decouple_input",
    "synth",
    "splits",
    "speakers",
    "items_per_speaker",
    "speaker_scale",
    "abx_cap",
    "abx_mode",
    "probe_epochs",
    "probe_lr",
    "probe_weight_decay",
    "synth_epochs",
    "synth_batch_frames",
    "synth_lr",
    "synth_hidden",
    "synth_layers",
];

#[derive(Debug, PartialEq)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

fn positive(v: usize, key: &str) -> Result<usize, String> {
    if v == 0 {
        Err(format!("{key} must be positive"))
    } else {
        Ok(v)
    }
}

fn parse_usize(v: &str, key: &str) -> Result<usize, String> {
    v.parse::<usize>().map_err(|_| format!("{key}: {v:?} is not a non-negative integer"))
}

fn parse_f64(v: &str, key: &str) -> Result<f64, String> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(format!("{key}: {v:?} is not a finite number")),
    }
}

fn positive_f64(v: &str, key: &str) -> Result<f64, String> {
    let x = parse_f64(v, key)?;
    if x > 0.0 {
        Ok(x)
    } else {
        Err(format!("{key} must be positive"))
    }
}

impl RunConfig {
    /// Relative paths in values resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ConfigError { line: i + 1, message };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got {line:?}")))?;
            cfg.set(k.trim(), v.trim(), base).map_err(err)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: 0,
            message: format!("{}: {e}", path.display()),
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn set(&mut self, key: &str, v: &str, base: &Path) -> Result<(), String> {
        match key {
            "seed" => self.seed = v.parse().map_err(|_| format!("seed: {v:?} is not an unsigned integer"))?,
            "epochs" => self.epochs = positive(parse_usize(v, key)?, key)?,
            "batch_size" => self.batch_size = positive(parse_usize(v, key)?, key)?,
            "lr" => self.lr = positive_f64(v, key)?,
            "hidden" => self.hidden = positive(parse_usize(v, key)?, key)?,
            "layers" => self.layers = positive(parse_usize(v, key)?, key)?,
            "convergence_tol" => self.convergence_tol = positive_f64(v, key)?,
            "loss_space" => {
                self.loss_space = match v {
                    "logmel" | "logmel80" => LossSpaceChoice::LogMel,
                    "mfcc" | "mfcc39" => LossSpaceChoice::Mfcc,
                    _ => match v.strip_prefix("encoder:") {
                        Some(p) if !p.is_empty() => LossSpaceChoice::Encoder(base.join(p)),
                        _ => return Err(format!("loss_space: {v:?} is not logmel, mfcc or encoder:PATH")),
                    },
                }
            }
            "decouple_input" => {
                self.decouple_input = match v {
                    "true" => true,
                    "false" => false,
                    _ => return Err(format!("decouple_input: {v:?} is not true or false")),
                }
            }
            "synth" => {
                self.synth = match v {
                    "analytic" => SynthChoice::Analytic,
                    _ => match v.strip_prefix("net:") {
                        Some(p) if !p.is_empty() => SynthChoice::Net(base.join(p)),
                        _ => return Err(format!("synth: {v:?} is not analytic or net:PATH")),
                    },
                }
            }
            "splits" => {
                let parts: Vec<f64> = v
                    .split(',')
                    .map(|p| parse_f64(p.trim(), key))
                    .collect::<Result<_, _>>()?;
                let [tr, va, te] = parts[..] else {
                    return Err(format!("splits: expected three fractions, got {v:?}"));
                };
                if tr <= 0.0 || va < 0.0 || te < 0.0 || (tr + va + te - 1.0).abs() > 1e-9 {
                    return Err(format!("splits: {v:?} must be non-negative, sum to 1 and train > 0"));
                }
                self.splits = (tr, va, te);
            }
            "speakers" => self.speakers = positive(parse_usize(v, key)?, key)?,
            "items_per_speaker" => self.items_per_speaker = positive(parse_usize(v, key)?, key)?,
            "speaker_scale" => {
                self.speaker_scale = match v.split_once(':') {
                    Some((lo, hi)) => {
                        let (lo, hi) = (positive_f64(lo, key)?, positive_f64(hi, key)?);
                        if lo > hi {
                            return Err(format!("speaker_scale: range {v:?} is reversed"));
                        }
                        SpeakerScales::Uniform(lo, hi)
                    }
                    None => SpeakerScales::Fixed(positive_f64(v, key)?),
                }
            }
            "abx_cap" => {
                self.abx_cap = match v {
                    "none" => None,
                    _ => Some(positive(parse_usize(v, key)?, key)?),
                }
            }
            "abx_mode" => {
                self.abx_mode = AbxMode::parse(v).ok_or_else(|| {
                    format!("abx_mode: {v:?} is not within_speaker, across_speaker or across_context")
                })?
            }
            "probe_epochs" => self.probe_epochs = positive(parse_usize(v, key)?, key)?,
            "probe_lr" => self.probe_lr = positive_f64(v, key)?,
            "probe_weight_decay" => {
                let x = parse_f64(v, key)?;
                if x < 0.0 {
                    return Err("probe_weight_decay must be non-negative".into());
                }
                self.probe_weight_decay = x;
            }
            "synth_epochs" => self.synth_epochs = positive(parse_usize(v, key)?, key)?,
            "synth_batch_frames" => self.synth_batch_frames = positive(parse_usize(v, key)?, key)?,
            "synth_lr" => self.synth_lr = positive_f64(v, key)?,
            "synth_hidden" => self.synth_hidden = positive(parse_usize(v, key)?, key)?,
            "synth_layers" => self.synth_layers = positive(parse_usize(v, key)?, key)?,
            _ => return Err(format!("unknown key {key:?}; known keys: {}", KEYS.join(", "))),
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed,
            hidden: self.hidden,
            layers: self.layers,
            convergence_tol: self.convergence_tol,
        }
    }

    pub fn synth_train_config(&self) -> SynthTrainConfig {
        SynthTrainConfig {
            epochs: self.synth_epochs,
            batch_frames: self.synth_batch_frames,
            lr: self.synth_lr,
            hidden: self.synth_hidden,
            layers: self.synth_layers,
            seed: self.seed,
        }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            epochs: self.probe_epochs,
            lr: self.probe_lr,
            weight_decay: self.probe_weight_decay,
            seed: self.seed,
        }
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig {
            speakers: self.speakers,
            items_per_speaker: self.items_per_speaker,
            speaker_scales: self.speaker_scale.clone(),
            ..CorpusConfig::default()
        }
    }
}
