//! Inverse model and self-supervised imitation training: features are
//! mapped to articulatory parameters, synthesized through a frozen
//! synthesizer, re-rendered in a frozen loss space, and compared to the
//! input by cosine distance. Only the inverse model is updated.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::artic::{ArticulatoryTrajectory, N_PARAMS};
use crate::dsp::{mfcc_from_logmel, mfcc_from_logmel_on_tape, CepstralStats, FeatureKind, FeatureSequence, SourceTrack, N_MELS};
use crate::graph::{
    adam_step, bilstm_forward, dense_forward, init_bilstm, Activation, Gradients, OptimizerState, ParameterSet,
    RealMatrix, Tape, Var, COSINE_EPS,
};
use crate::synth::{Fnv, Synthesizer};
use crate::{Error, Result};

pub const INVERSE_HIDDEN: usize = 64;
pub const INVERSE_LAYERS: usize = 2;
const HEAD: &str = "head";

/// One layer of a frozen encoder: `act(window(x) W + b)` with `W` of shape
/// `(window * in_dim) x out_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub window: usize,
    pub nonlinearity: Activation,
    pub weight: RealMatrix,
    pub bias: RealMatrix,
}

/// Nonlinearity codes of the encoder file format.
pub fn nonlinearity_code(a: Activation) -> Option<u8> {
    match a {
        Activation::Identity => Some(0),
        Activation::Tanh => Some(1),
        Activation::Gelu => Some(2),
        _ => None,
    }
}

pub fn nonlinearity_from_code(code: u8) -> Option<Activation> {
    match code {
        0 => Some(Activation::Identity),
        1 => Some(Activation::Tanh),
        2 => Some(Activation::Gelu),
        _ => None,
    }
}

/// Fixed stack of windowed affine layers over log-mel frames.
#[derive(Clone, Debug)]
pub struct FrozenEncoder {
    layers: Vec<EncoderLayer>,
    params: ParameterSet,
}

fn layer_prefix(i: usize) -> String {
    format!("enc{i}")
}

impl FrozenEncoder {
    /// Validate the shape chain: the first layer reads 80 log-mel bands and
    /// each layer's input matches the previous output.
    pub fn new(layers: Vec<EncoderLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Schema("frozen encoder has no layers".into()));
        }
        let mut params = ParameterSet::new();
        let mut expected_in = N_MELS;
        for (i, l) in layers.iter().enumerate() {
            let bad = |m: String| Error::Schema(format!("encoder layer {i}: {m}"));
            if l.in_dim != expected_in {
                return Err(bad(format!("input dim {} but previous output is {expected_in}", l.in_dim)));
            }
            if l.window % 2 == 0 {
                return Err(bad(format!("window {} is not odd", l.window)));
            }
            if nonlinearity_code(l.nonlinearity).is_none() {
                return Err(bad(format!("unsupported nonlinearity {:?}", l.nonlinearity)));
            }
            if l.weight.shape() != (l.window * l.in_dim, l.out_dim) {
                return Err(bad(format!(
                    "weight is {:?}, expected {:?}",
                    l.weight.shape(),
                    (l.window * l.in_dim, l.out_dim)
                )));
            }
            if l.bias.shape() != (1, l.out_dim) {
                return Err(bad(format!("bias is {:?}, expected (1, {})", l.bias.shape(), l.out_dim)));
            }
            params.insert(format!("{}.weight", layer_prefix(i)), l.weight.clone())?;
            params.insert(format!("{}.bias", layer_prefix(i)), l.bias.clone())?;
            expected_in = l.out_dim;
        }
        Ok(Self { layers, params })
    }

    /// Single affine identity layer with window 1.
    pub fn identity() -> Self {
        Self::new(vec![EncoderLayer {
            in_dim: N_MELS,
            out_dim: N_MELS,
            window: 1,
            nonlinearity: Activation::Identity,
            weight: RealMatrix::identity(N_MELS),
            bias: RealMatrix::zeros(1, N_MELS),
        }])
        .expect("valid identity encoder")
    }

    pub fn layers(&self) -> &[EncoderLayer] {
        &self.layers
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(N_MELS, |l| l.out_dim)
    }

    /// Total context in frames seen by one output frame.
    pub fn receptive_field(&self) -> usize {
        1 + self.layers.iter().map(|l| l.window - 1).sum::<usize>()
    }

    pub fn forward_on_tape<'a>(&'a self, tape: &mut Tape<'a>, logmel: Var) -> Result<Var> {
        let mut h = logmel;
        for (i, l) in self.layers.iter().enumerate() {
            let x = tape.window(h, l.window)?;
            h = dense_forward(tape, x, &self.params, &layer_prefix(i), l.nonlinearity, false)?;
        }
        Ok(h)
    }

    pub fn forward(&self, logmel: &RealMatrix) -> Result<RealMatrix> {
        let mut tape = Tape::new();
        let x = tape.constant(logmel.clone())?;
        let y = self.forward_on_tape(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }
}

/// Representation in which imitated and input speech are compared.
#[derive(Clone, Debug)]
pub enum LossSpace {
    LogMel,
    /// MFCCs computed from the synthesized log-mel with fixed statistics.
    Mfcc(CepstralStats),
    Encoder(FrozenEncoder),
}

impl LossSpace {
    pub fn name(&self) -> &'static str {
        match self {
            LossSpace::LogMel => "logmel80",
            LossSpace::Mfcc(_) => "mfcc39_from_mel",
            LossSpace::Encoder(_) => "frozen_encoder",
        }
    }

    pub fn render_on_tape<'a>(&'a self, tape: &mut Tape<'a>, logmel: Var) -> Result<Var> {
        match self {
            LossSpace::LogMel => Ok(logmel),
            LossSpace::Mfcc(stats) => mfcc_from_logmel_on_tape(tape, logmel, stats),
            LossSpace::Encoder(enc) => enc.forward_on_tape(tape, logmel),
        }
    }

    pub fn render_logmel(&self, logmel: &RealMatrix) -> Result<RealMatrix> {
        match self {
            LossSpace::LogMel => Ok(logmel.clone()),
            LossSpace::Mfcc(stats) => Ok(mfcc_from_logmel(logmel, stats)?.into_frames()),
            LossSpace::Encoder(enc) => enc.forward(logmel),
        }
    }

    /// The input expressed in this space. Log-mel input can be rendered
    /// into any space; MFCC input only compares against the MFCC space and
    /// external features only against an encoder of matching width.
    pub fn render_input(&self, z: &FeatureSequence) -> Result<RealMatrix> {
        match (z.kind(), self) {
            (FeatureKind::LogMel80, _) => self.render_logmel(z.frames()),
            (FeatureKind::Mfcc39, LossSpace::Mfcc(_)) => Ok(z.frames().clone()),
            (FeatureKind::External, LossSpace::Encoder(enc)) if enc.output_dim() == z.dim() => Ok(z.frames().clone()),
            (kind, space) => Err(Error::Contract(format!(
                "{} input ({} dims) cannot be compared in the {} space",
                kind.name(),
                z.dim(),
                space.name()
            ))),
        }
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::default();
        match self {
            LossSpace::LogMel => h.write(1),
            LossSpace::Mfcc(s) => {
                h.write(2);
                for v in s.mean.iter().chain(&s.std) {
                    h.write(v.to_bits());
                }
            }
            LossSpace::Encoder(e) => {
                h.write(3);
                h.write(e.params.fingerprint());
                for l in &e.layers {
                    h.write(l.window as u64);
                    h.write(nonlinearity_code(l.nonlinearity).unwrap_or(255) as u64);
                }
            }
        }
        h.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InverseModelConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl InverseModelConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: INVERSE_HIDDEN,
            layers: INVERSE_LAYERS,
        }
    }
}

/// Stacked BiLSTM over z-scored input features with a linear head to the
/// six articulatory parameters. The head starts at zero.
#[derive(Clone, Debug)]
pub struct InverseModel {
    params: ParameterSet,
    input_mean: Vec<f64>,
    input_std: Vec<f64>,
    hidden: usize,
    layers: usize,
}

impl InverseModel {
    pub fn new(cfg: &InverseModelConfig, seed: u64) -> Result<Self> {
        if cfg.input_dim == 0 || cfg.hidden == 0 || cfg.layers == 0 {
            return Err(Error::Config("inverse model dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        init_bilstm(&mut params, cfg.input_dim, cfg.layers, cfg.hidden, &mut rng)?;
        params.insert(format!("{HEAD}.weight"), RealMatrix::zeros(2 * cfg.hidden, N_PARAMS))?;
        params.insert(format!("{HEAD}.bias"), RealMatrix::zeros(1, N_PARAMS))?;
        Ok(Self {
            params,
            input_mean: vec![0.0; cfg.input_dim],
            input_std: vec![1.0; cfg.input_dim],
            hidden: cfg.hidden,
            layers: cfg.layers,
        })
    }

    /// Rebuild from stored parts; architecture is read off tensor shapes.
    pub fn from_parts(params: ParameterSet, input_mean: Vec<f64>, input_std: Vec<f64>) -> Result<Self> {
        let wx = params.get("lstm0.fwd.wx")?;
        let input_dim = wx.rows();
        let hidden = wx.cols() / 4;
        let layers = (0..)
            .take_while(|l| params.contains(&format!("lstm{l}.fwd.wx")))
            .count();
        if input_mean.len() != input_dim || input_std.len() != input_dim {
            return Err(Error::Schema(format!("input statistics must have {input_dim} entries")));
        }
        if input_std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Schema("input std must be positive".into()));
        }
        let reference = Self::new(&InverseModelConfig { input_dim, hidden, layers }, 0)?;
        for (name, p) in reference.params.iter() {
            let got = params.get(name)?;
            if got.shape() != p.value.shape() {
                return Err(Error::Schema(format!(
                    "{name} is {:?}, expected {:?}",
                    got.shape(),
                    p.value.shape()
                )));
            }
        }
        if params.len() != reference.params.len() {
            return Err(Error::Schema("unexpected tensors in inverse model".into()));
        }
        Ok(Self {
            params,
            input_mean,
            input_std,
            hidden,
            layers,
        })
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn input_dim(&self) -> usize {
        self.input_mean.len()
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn input_mean(&self) -> &[f64] {
        &self.input_mean
    }

    pub fn input_std(&self) -> &[f64] {
        &self.input_std
    }

    /// Per-dimension z-score from pooled training frames; constant
    /// dimensions get unit scale.
    pub fn fit_input_stats<'a>(&mut self, inputs: impl IntoIterator<Item = &'a RealMatrix>) -> Result<()> {
        let d = self.input_dim();
        let mut n = 0usize;
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        for x in inputs {
            if x.cols() != d {
                return Err(Error::Schema(format!("input has {} dims, model expects {d}", x.cols())));
            }
            for r in 0..x.rows() {
                for (j, v) in x.row(r).iter().enumerate() {
                    sum[j] += v;
                    sq[j] += v * v;
                }
            }
            n += x.rows();
        }
        if n == 0 {
            return Err(Error::EmptySequence("no frames to fit input statistics".into()));
        }
        let nf = n as f64;
        self.input_mean = sum.iter().map(|s| s / nf).collect();
        self.input_std = sq
            .iter()
            .zip(&self.input_mean)
            .map(|(q, m)| {
                let v = (q / nf - m * m).max(0.0).sqrt();
                if v > 1e-12 {
                    v
                } else {
                    1.0
                }
            })
            .collect();
        Ok(())
    }

    pub fn forward_on_tape<'a>(&'a self, tape: &mut Tape<'a>, x: Var) -> Result<Var> {
        let d = tape.value(x).cols();
        if d != self.input_dim() {
            return Err(Error::Schema(format!(
                "features have {d} dims, inverse model was built for {}",
                self.input_dim()
            )));
        }
        let scale: Vec<f64> = self.input_std.iter().map(|s| 1.0 / s).collect();
        let shift: Vec<f64> = self.input_mean.iter().zip(&scale).map(|(m, s)| -m * s).collect();
        let xn = tape.affine_cols(x, &scale, &shift)?;
        let h = bilstm_forward(tape, xn, &self.params, self.layers)?;
        dense_forward(tape, h, &self.params, HEAD, Activation::Identity, true)
    }

    pub fn infer(&self, z: &FeatureSequence) -> Result<ArticulatoryTrajectory> {
        let mut tape = Tape::new();
        let x = tape.constant_ref(z.frames())?;
        let y = self.forward_on_tape(&mut tape, x)?;
        ArticulatoryTrajectory::new(tape.value(y).clone())
    }
}

/// `inverse_forward` under its descriptive name.
pub fn inverse_forward(model: &InverseModel, z: &FeatureSequence) -> Result<ArticulatoryTrajectory> {
    model.infer(z)
}

fn check_frames(z: usize, s: &SourceTrack) -> Result<()> {
    if z != s.len() {
        return Err(Error::Dimension(format!("{z} feature frames vs {} source frames", s.len())));
    }
    Ok(())
}

/// Cosine loss between `target` (the input already rendered in `space`)
/// and the rendering of `synth(a, source)`.
pub fn loss_on_tape<'a>(
    tape: &mut Tape<'a>,
    target: &'a RealMatrix,
    a: Var,
    source: &'a RealMatrix,
    synth: &'a Synthesizer,
    space: &'a LossSpace,
) -> Result<Var> {
    let mel = synth.logmel_on_tape(tape, a, source)?;
    let z_hat = space.render_on_tape(tape, mel)?;
    let z = tape.constant_ref(target)?;
    tape.cosine_distance(z, z_hat, COSINE_EPS)
}

/// Imitation loss of a given articulatory trajectory.
pub fn imitation_loss(
    z_in: &FeatureSequence,
    a_hat: &ArticulatoryTrajectory,
    source: &SourceTrack,
    synth: &Synthesizer,
    space: &LossSpace,
) -> Result<f64> {
    check_frames(z_in.len(), source)?;
    if a_hat.len() != z_in.len() {
        return Err(Error::Dimension(format!(
            "{} trajectory frames vs {} feature frames",
            a_hat.len(),
            z_in.len()
        )));
    }
    let target = space.render_input(z_in)?;
    let mut tape = Tape::new();
    let a = tape.constant_ref(a_hat.frames())?;
    let l = loss_on_tape(&mut tape, &target, a, source.frames(), synth, space)?;
    tape.value(l).item()
}

/// Loss and inverse-model gradients for one utterance.
pub fn utterance_loss_and_grads(
    model: &InverseModel,
    features: &RealMatrix,
    target: &RealMatrix,
    source: &RealMatrix,
    synth: &Synthesizer,
    space: &LossSpace,
) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new();
    let x = tape.constant_ref(features)?;
    let a = model.forward_on_tape(&mut tape, x)?;
    let l = loss_on_tape(&mut tape, target, a, source, synth, space)?;
    let loss = tape.value(l).item()?;
    Ok((loss, tape.backward(l)?.into_param_grads()))
}

/// One training or evaluation utterance. `truth` is carried for reporting
/// and is never read by training.
#[derive(Clone, Debug)]
pub struct ImitationItem {
    pub id: String,
    pub speaker: String,
    pub features: FeatureSequence,
    pub source: SourceTrack,
    pub truth: Option<ArticulatoryTrajectory>,
}

/// What the loss is allowed to see of an item.
struct LossItem<'a> {
    features: &'a RealMatrix,
    source: &'a RealMatrix,
    target: RealMatrix,
}

impl<'a> LossItem<'a> {
    fn new(item: &'a ImitationItem, space: &LossSpace) -> Result<Self> {
        check_frames(item.features.len(), &item.source)
            .map_err(|e| Error::Dimension(format!("{}: {e}", item.id)))?;
        Ok(Self {
            features: item.features.frames(),
            source: item.source.frames(),
            target: space.render_input(&item.features)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub hidden: usize,
    pub layers: usize,
    /// Final validation loss above this is reported as non-converged.
    pub convergence_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            lr: 1.7e-3,
            seed: 0,
            hidden: INVERSE_HIDDEN,
            layers: INVERSE_LAYERS,
            convergence_tol: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ImitationRun {
    pub model: InverseModel,
    pub log: Vec<EpochLog>,
    pub converged: bool,
}

/// Fingerprints of everything that must stay fixed during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrozenGuard {
    pub synth: u64,
    pub space: u64,
}

impl FrozenGuard {
    pub fn capture(synth: &Synthesizer, space: &LossSpace) -> Self {
        Self {
            synth: synth.fingerprint(),
            space: space.fingerprint(),
        }
    }

    pub fn verify(&self, synth: &Synthesizer, space: &LossSpace) -> Result<()> {
        let now = Self::capture(synth, space);
        if now.synth != self.synth {
            return Err(Error::Contract("synthesizer parameters changed during training".into()));
        }
        if now.space != self.space {
            return Err(Error::Contract("loss-space parameters changed during training".into()));
        }
        Ok(())
    }
}

/// Mean imitation loss of `model` over items.
pub fn mean_loss(model: &InverseModel, items: &[ImitationItem], synth: &Synthesizer, space: &LossSpace) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::EmptySequence("no items to evaluate".into()));
    }
    let mut total = 0.0;
    for item in items {
        let li = LossItem::new(item, space)?;
        let mut tape = Tape::new();
        let x = tape.constant_ref(li.features)?;
        let a = model.forward_on_tape(&mut tape, x)?;
        let l = loss_on_tape(&mut tape, &li.target, a, li.source, synth, space)?;
        total += tape.value(l).item()?;
    }
    Ok(total / items.len() as f64)
}

/// Minibatch Adam on the imitation loss. Batches hold utterances of
/// similar length (sorted by frame count); batch order is reshuffled every
/// epoch. The synthesizer and loss space are fingerprinted before and
/// after and must be unchanged.
pub fn train_inverse(
    train: &[ImitationItem],
    valid: &[ImitationItem],
    synth: &Synthesizer,
    space: &LossSpace,
    cfg: &TrainConfig,
) -> Result<ImitationRun> {
    if train.is_empty() {
        return Err(Error::EmptySequence("no training utterances".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let dim = train[0].features.dim();
    if let Some(bad) = train.iter().chain(valid).find(|i| i.features.dim() != dim) {
        return Err(Error::Schema(format!(
            "{} has {} feature dims, expected {dim}",
            bad.id,
            bad.features.dim()
        )));
    }
    let guard = FrozenGuard::capture(synth, space);

    let items = train
        .iter()
        .map(|i| LossItem::new(i, space))
        .collect::<Result<Vec<_>>>()?;
    let mut model = InverseModel::new(
        &InverseModelConfig {
            input_dim: dim,
            hidden: cfg.hidden,
            layers: cfg.layers,
        },
        cfg.seed,
    )?;
    model.fit_input_stats(items.iter().map(|i| i.features))?;
    let mut opt = OptimizerState::adam(cfg.lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba7c);

    let mut by_len: Vec<usize> = (0..items.len()).collect();
    by_len.sort_by_key(|i| (items[*i].features.rows(), *i));
    let mut batches: Vec<Vec<usize>> = by_len.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect();

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        batches.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in &batches {
            let mut grads = Gradients::new();
            for &i in batch {
                let it = &items[i];
                let (loss, g) = utterance_loss_and_grads(&model, it.features, &it.target, it.source, synth, space)
                    .map_err(|e| match e {
                        Error::Numeric(_) => Error::Divergence { step, loss: f64::NAN },
                        other => other,
                    })?;
                if !loss.is_finite() {
                    return Err(Error::Divergence { step, loss });
                }
                total += loss;
                grads.merge(g);
            }
            grads.scale(1.0 / batch.len() as f64);
            model.params.accumulate(&grads)?;
            model.params.fill_missing_grads();
            adam_step(&mut model.params, &mut opt)?;
            step += 1;
        }
        let val_loss = if valid.is_empty() {
            None
        } else {
            Some(mean_loss(&model, valid, synth, space)?)
        };
        log.push(EpochLog {
            epoch,
            train_loss: total / items.len() as f64,
            val_loss,
        });
    }
    guard.verify(synth, space)?;
    let last = log
        .last()
        .map(|e| e.val_loss.unwrap_or(e.train_loss))
        .unwrap_or(f64::INFINITY);
    Ok(ImitationRun {
        model,
        log,
        converged: last <= cfg.convergence_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_corpus, AnalyticTractConfig, CorpusConfig};

    fn items(n: usize) -> Vec<ImitationItem> {
        let cfg = CorpusConfig {
            items_per_speaker: n,
            ..CorpusConfig::default()
        };
        generate_corpus(&cfg, 4)
            .unwrap()
            .utterances
            .into_iter()
            .map(|u| ImitationItem {
                id: u.id,
                speaker: u.speaker,
                features: u.mel.log(),
                source: u.source,
                truth: Some(u.trajectory),
            })
            .collect()
    }

    #[test]
    fn zero_head_gives_zero_trajectory() {
        let m = InverseModel::new(&InverseModelConfig::new(80), 1).unwrap();
        let it = &items(1)[0];
        let a = m.infer(&it.features).unwrap();
        assert_eq!(a.len(), it.features.len());
        assert!(a.frames().as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn input_dim_mismatch_is_schema_error() {
        let m = InverseModel::new(&InverseModelConfig::new(39), 1).unwrap();
        let it = &items(1)[0];
        assert!(matches!(m.infer(&it.features), Err(Error::Schema(_))));
    }

    #[test]
    fn ground_truth_is_a_fixed_point() {
        let synth = Synthesizer::Analytic(AnalyticTractConfig::default());
        for it in items(3) {
            let truth = it.truth.as_ref().unwrap();
            let l = imitation_loss(&it.features, truth, &it.source, &synth, &LossSpace::LogMel).unwrap();
            assert!(l < 1e-6, "{l}");
        }
    }

    #[test]
    fn mfcc_input_rejected_in_logmel_space() {
        let it = &items(1)[0];
        let z = FeatureSequence::new(RealMatrix::zeros(it.features.len(), 39), 50.0, FeatureKind::Mfcc39).unwrap();
        assert!(matches!(LossSpace::LogMel.render_input(&z), Err(Error::Contract(_))));
    }

    #[test]
    fn identity_encoder_matches_logmel_space() {
        let it = &items(1)[0];
        let enc = LossSpace::Encoder(FrozenEncoder::identity());
        assert_eq!(
            enc.render_input(&it.features).unwrap(),
            LossSpace::LogMel.render_input(&it.features).unwrap()
        );
    }

    #[test]
    fn guard_detects_mutation() {
        let synth = Synthesizer::Analytic(AnalyticTractConfig::default());
        let guard = FrozenGuard::capture(&synth, &LossSpace::LogMel);
        assert!(guard.verify(&synth, &LossSpace::LogMel).is_ok());
        let moved = Synthesizer::Analytic(AnalyticTractConfig::with_scale(1.1));
        assert!(matches!(guard.verify(&moved, &LossSpace::LogMel), Err(Error::Contract(_))));
    }
}
