//! Articulatory synthesizers mapping (artic + source) frames to log-mel
//! frames: an analytic formant tract with exact gradients, a 4x512
//! feedforward net trained to imitate it, and a VCV corpus generator.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::artic::{ArticulatoryTrajectory, JH, LH, LP, N_PARAMS, TB, TD, TT};
use crate::dsp::{check_source, MelFilterbank, MelSpectrogram, SourceTrack, LOG_FLOOR, MAX_PERIOD, MIN_PERIOD, N_MELS};
use crate::graph::{
    adam_step, dense_forward, init_dense, Activation, CustomOp, OptimizerState, ParameterSet, RealMatrix, Tape, Var,
};
use crate::phone::{Manner, Phone, PhoneInventory, Place};
use crate::{Error, Result};

/// Input width of a synthesizer: six articulatory plus two source values.
pub const SYNTH_INPUT_DIM: usize = N_PARAMS + 2;

/// Parameter driving each formant (F1..F4).
const FORMANT_PARAMS: [usize; 4] = [JH, TD, TT, LP];
const F_MIN: f64 = 100.0;
const F_MAX: f64 = 7500.0;

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticTractConfig {
    /// Formant frequency at zero parameter value (Hz).
    pub formant_base: [f64; 4],
    /// Hz per unit of the driving parameter.
    pub formant_gain: [f64; 4],
    pub formant_amplitude: [f64; 4],
    /// Peak standard deviation in mel bins at TB = 0.
    pub peak_width: f64,
    pub width_modulation: f64,
    pub ripple_depth: f64,
    /// Multiplies every formant frequency.
    pub speaker_scale: f64,
}

impl Default for AnalyticTractConfig {
    fn default() -> Self {
        Self {
            formant_base: [500.0, 1500.0, 2500.0, 3500.0],
            formant_gain: [200.0, 350.0, 250.0, 250.0],
            formant_amplitude: [1.0, 0.7, 0.5, 0.3],
            peak_width: 3.0,
            width_modulation: 0.3,
            ripple_depth: 0.3,
            speaker_scale: 1.0,
        }
    }
}

impl AnalyticTractConfig {
    pub fn with_scale(scale: f64) -> Self {
        Self {
            speaker_scale: scale,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.8..=1.25).contains(&self.speaker_scale) {
            return Err(Error::Config(format!(
                "speaker scale {} outside [0.8, 1.25]",
                self.speaker_scale
            )));
        }
        if !(self.peak_width > 0.0 && self.width_modulation.abs() < 1.0) {
            return Err(Error::Config("peak width must stay positive".into()));
        }
        if !(0.0..1.0).contains(&self.ripple_depth) {
            return Err(Error::Config("ripple depth must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Clamped formant frequencies and their derivatives w.r.t. the driving
    /// parameter (zero where clamped).
    pub fn formants(&self, a: &[f64]) -> ([f64; 4], [f64; 4]) {
        let mut f = [0.0; 4];
        let mut df = [0.0; 4];
        for k in 0..4 {
            let raw = self.speaker_scale * (self.formant_base[k] + self.formant_gain[k] * a[FORMANT_PARAMS[k]]);
            f[k] = raw.clamp(F_MIN, F_MAX);
            if raw > F_MIN && raw < F_MAX {
                df[k] = self.speaker_scale * self.formant_gain[k];
            }
        }
        (f, df)
    }
}

/// Per-band energies `A * E(m) * R(m)` of one frame, and optionally the
/// Jacobian of `ln(1e-10 + energy)` w.r.t. the six parameters (`80 x 6`,
/// row-major).
fn tract_frame(cfg: &AnalyticTractConfig, a: &[f64], pp: f64, pc: f64, energy: &mut [f64], jac: Option<&mut [f64]>) {
    let fb = MelFilterbank::standard();
    let (f, df) = cfg.formants(a);
    let mut c = [0.0; 4];
    let mut dc = [0.0; 4];
    for k in 0..4 {
        c[k] = fb.bin_coordinate(f[k]);
        dc[k] = fb.bin_coordinate_slope(f[k]) * df[k];
    }
    let th = a[TB].tanh();
    let sigma = cfg.peak_width * (1.0 + cfg.width_modulation * th);
    let dsigma = cfg.peak_width * cfg.width_modulation * (1.0 - th * th);
    let amp = crate::graph::sigmoid(2.0 * a[LH]);
    let damp = 2.0 * amp * (1.0 - amp);
    let s2 = sigma * sigma;

    let mut jac = jac;
    for m in 0..N_MELS {
        let mf = m as f64;
        let mut e = 0.0;
        let mut de_dsigma = 0.0;
        let mut de_dc = [0.0; 4];
        for k in 0..4 {
            let d = c[k] - mf;
            let g = cfg.formant_amplitude[k] * (-d * d / (2.0 * s2)).exp();
            e += g;
            de_dc[k] = -g * d / s2;
            de_dsigma += g * d * d / (s2 * sigma);
        }
        let r = if pp > 0.0 {
            1.0 + cfg.ripple_depth * pc * (2.0 * PI * mf * pp / MAX_PERIOD as f64).cos()
        } else {
            1.0
        };
        let en = amp * e * r;
        energy[m] = en;
        if let Some(j) = jac.as_deref_mut() {
            let inv = r / (LOG_FLOOR + en);
            let row = &mut j[m * N_PARAMS..(m + 1) * N_PARAMS];
            row.fill(0.0);
            row[LH] = inv * damp * e;
            row[TB] = inv * amp * de_dsigma * dsigma;
            for k in 0..4 {
                row[FORMANT_PARAMS[k]] += inv * amp * de_dc[k] * dc[k];
            }
        }
    }
}

fn check_frame(a: &[f64], pp: f64, pc: f64) -> Result<()> {
    if let Some(v) = a.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("articulatory value {v}")));
    }
    check_source(pp, pc).map_err(Error::Domain)
}

/// Log-mel frame of the analytic tract for one parameter vector.
pub fn tract_forward(a: &[f64], pp: f64, pc: f64, cfg: &AnalyticTractConfig) -> Result<Vec<f64>> {
    if a.len() != N_PARAMS {
        return Err(Error::Dimension(format!("expected {N_PARAMS} parameters, got {}", a.len())));
    }
    check_frame(a, pp, pc)?;
    let mut e = vec![0.0; N_MELS];
    tract_frame(cfg, a, pp, pc, &mut e, None);
    Ok(e.into_iter().map(|v| (LOG_FLOOR + v).ln()).collect())
}

fn check_sequence(a: &RealMatrix, source: &RealMatrix) -> Result<()> {
    if a.cols() != N_PARAMS || source.cols() != 2 {
        return Err(Error::Dimension(format!(
            "tract needs T x {N_PARAMS} parameters and T x 2 source, got {:?} and {:?}",
            a.shape(),
            source.shape()
        )));
    }
    if a.rows() != source.rows() {
        return Err(Error::Dimension(format!(
            "{} articulatory frames vs {} source frames",
            a.rows(),
            source.rows()
        )));
    }
    for t in 0..a.rows() {
        check_frame(a.row(t), source.get(t, 0), source.get(t, 1))?;
    }
    Ok(())
}

/// Mel energies (before the log) for a whole sequence.
pub fn tract_energies(a: &RealMatrix, source: &RealMatrix, cfg: &AnalyticTractConfig) -> Result<RealMatrix> {
    check_sequence(a, source)?;
    let mut out = RealMatrix::zeros(a.rows(), N_MELS);
    for t in 0..a.rows() {
        let (pp, pc) = (source.get(t, 0), source.get(t, 1));
        tract_frame(cfg, a.row(t), pp, pc, out.row_mut(t), None);
    }
    Ok(out)
}

pub fn tract_logmel(a: &RealMatrix, source: &RealMatrix, cfg: &AnalyticTractConfig) -> Result<RealMatrix> {
    Ok(tract_energies(a, source, cfg)?.map(|v| (LOG_FLOOR + v).ln()))
}

struct TractOp {
    cfg: AnalyticTractConfig,
    source: RealMatrix,
}

impl CustomOp for TractOp {
    fn name(&self) -> &str {
        "analytic_tract"
    }

    fn backward(&self, inputs: &[&RealMatrix], _output: &RealMatrix, grad: &RealMatrix) -> Vec<Option<RealMatrix>> {
        let a = inputs[0];
        let mut ga = RealMatrix::zeros(a.rows(), N_PARAMS);
        let mut energy = vec![0.0; N_MELS];
        let mut jac = vec![0.0; N_MELS * N_PARAMS];
        for t in 0..a.rows() {
            let (pp, pc) = (self.source.get(t, 0), self.source.get(t, 1));
            tract_frame(&self.cfg, a.row(t), pp, pc, &mut energy, Some(&mut jac));
            let g = grad.row(t);
            let out = ga.row_mut(t);
            for m in 0..N_MELS {
                for j in 0..N_PARAMS {
                    out[j] += g[m] * jac[m * N_PARAMS + j];
                }
            }
        }
        vec![Some(ga)]
    }
}

/// Differentiable analytic tract over a `T x 6` node; `source` is `T x 2`.
pub fn tract_on_tape(tape: &mut Tape<'_>, a: Var, source: &RealMatrix, cfg: &AnalyticTractConfig) -> Result<Var> {
    let out = tract_logmel(tape.value(a), source, cfg)?;
    let op = TractOp {
        cfg: cfg.clone(),
        source: source.clone(),
    };
    tape.custom(&[a], out, Box::new(op))
}

pub const SYNTH_HIDDEN: usize = 512;
pub const SYNTH_LAYERS: usize = 4;

fn hidden_name(l: usize) -> String {
    format!("synth.h{l}")
}

const OUT_NAME: &str = "synth.out";

/// Feedforward synthesizer: z-scored (artic, source) input, `layers` tanh
/// layers of `hidden` units, linear output of 80 log-mel values.
#[derive(Clone, Debug)]
pub struct SynthesizerNet {
    params: ParameterSet,
    input_mean: Vec<f64>,
    input_std: Vec<f64>,
    layers: usize,
}

impl SynthesizerNet {
    pub fn new(hidden: usize, layers: usize, seed: u64) -> Result<Self> {
        if hidden == 0 || layers == 0 {
            return Err(Error::Config("synthesizer needs at least one hidden unit and layer".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        for l in 0..layers {
            let din = if l == 0 { SYNTH_INPUT_DIM } else { hidden };
            init_dense(&mut params, &hidden_name(l), din, hidden, &mut rng)?;
        }
        init_dense(&mut params, OUT_NAME, hidden, N_MELS, &mut rng)?;
        Ok(Self {
            params,
            input_mean: vec![0.0; SYNTH_INPUT_DIM],
            input_std: vec![1.0; SYNTH_INPUT_DIM],
            layers,
        })
    }

    /// Rebuild from stored parts; the layer count is read off the names.
    pub fn from_parts(params: ParameterSet, input_mean: Vec<f64>, input_std: Vec<f64>) -> Result<Self> {
        if input_mean.len() != SYNTH_INPUT_DIM || input_std.len() != SYNTH_INPUT_DIM {
            return Err(Error::Schema(format!("synthesizer input stats must have {SYNTH_INPUT_DIM} entries")));
        }
        if input_std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Schema("synthesizer input std must be positive".into()));
        }
        let layers = (0..).take_while(|l| params.contains(&format!("{}.weight", hidden_name(*l)))).count();
        if layers == 0 || !params.contains(&format!("{OUT_NAME}.weight")) {
            return Err(Error::Schema("synthesizer parameters incomplete".into()));
        }
        let net = Self {
            params,
            input_mean,
            input_std,
            layers,
        };
        // Shape chain check via a one-frame forward.
        net.logmel(&RealMatrix::zeros(1, N_PARAMS), &RealMatrix::zeros(1, 2))?;
        Ok(net)
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn input_mean(&self) -> &[f64] {
        &self.input_mean
    }

    pub fn input_std(&self) -> &[f64] {
        &self.input_std
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    /// Set the input z-score from training inputs (`N x 8`); constant
    /// columns get unit scale.
    pub fn fit_input_stats(&mut self, inputs: &RealMatrix) -> Result<()> {
        if inputs.cols() != SYNTH_INPUT_DIM || inputs.rows() == 0 {
            return Err(Error::Dimension(format!("expected N x {SYNTH_INPUT_DIM} inputs")));
        }
        let (mean, std) = column_stats(inputs);
        self.input_mean = mean;
        self.input_std = std.into_iter().map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
        Ok(())
    }

    fn forward<'a>(&'a self, tape: &mut Tape<'a>, x: Var, trainable: bool) -> Result<Var> {
        let scale: Vec<f64> = self.input_std.iter().map(|s| 1.0 / s).collect();
        let shift: Vec<f64> = self.input_mean.iter().zip(&scale).map(|(m, s)| -m * s).collect();
        let mut h = tape.affine_cols(x, &scale, &shift)?;
        for l in 0..self.layers {
            h = dense_forward(tape, h, &self.params, &hidden_name(l), Activation::Tanh, trainable)?;
        }
        dense_forward(tape, h, &self.params, OUT_NAME, Activation::Identity, trainable)
    }

    /// Frozen forward over an articulatory node and constant source frames.
    pub fn logmel_on_tape<'a>(&'a self, tape: &mut Tape<'a>, a: Var, source: &RealMatrix) -> Result<Var> {
        let s = tape.constant(source.clone())?;
        let x = tape.concat_cols(&[a, s])?;
        self.forward(tape, x, false)
    }

    pub fn logmel(&self, a: &RealMatrix, source: &RealMatrix) -> Result<RealMatrix> {
        let mut tape = Tape::new();
        let av = tape.constant(a.clone())?;
        let y = self.logmel_on_tape(&mut tape, av, source)?;
        Ok(tape.value(y).clone())
    }
}

fn column_stats(x: &RealMatrix) -> (Vec<f64>, Vec<f64>) {
    let mean = x.column_means();
    let n = x.rows() as f64;
    let mut var = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for ((v, xv), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            *v += (xv - m) * (xv - m);
        }
    }
    (mean, var.into_iter().map(|v| (v / n).sqrt()).collect())
}

/// Pooled synthesizer training frames: inputs `N x 8`, targets `N x 80`.
#[derive(Clone, Debug)]
pub struct SynthFrames {
    pub inputs: RealMatrix,
    pub targets: RealMatrix,
}

impl SynthFrames {
    pub fn new(inputs: RealMatrix, targets: RealMatrix) -> Result<Self> {
        if inputs.cols() != SYNTH_INPUT_DIM || targets.cols() != N_MELS || inputs.rows() != targets.rows() {
            return Err(Error::Dimension(format!(
                "synth frames need aligned N x {SYNTH_INPUT_DIM} inputs and N x {N_MELS} targets, got {:?} and {:?}",
                inputs.shape(),
                targets.shape()
            )));
        }
        Ok(Self { inputs, targets })
    }

    /// Stack `(trajectory, source, log-mel)` triples.
    pub fn from_sequences<'a>(
        seqs: impl IntoIterator<Item = (&'a RealMatrix, &'a RealMatrix, &'a RealMatrix)>,
    ) -> Result<Self> {
        let mut ins = Vec::new();
        let mut outs = Vec::new();
        for (a, s, m) in seqs {
            if a.rows() != s.rows() || a.rows() != m.rows() {
                return Err(Error::Dimension("trajectory, source and log-mel frame counts differ".into()));
            }
            ins.push(RealMatrix::hcat(&[a, s])?);
            outs.push(m.clone());
        }
        let ins: Vec<&RealMatrix> = ins.iter().collect();
        let outs: Vec<&RealMatrix> = outs.iter().collect();
        Self::new(RealMatrix::vcat(&ins)?, RealMatrix::vcat(&outs)?)
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    fn rows(&self, idx: &[usize]) -> (RealMatrix, RealMatrix) {
        let pick = |m: &RealMatrix| RealMatrix::from_fn(idx.len(), m.cols(), |r, c| m.get(idx[r], c));
        (pick(&self.inputs), pick(&self.targets))
    }
}

#[derive(Clone, Debug)]
pub struct SynthTrainConfig {
    pub epochs: usize,
    pub batch_frames: usize,
    pub lr: f64,
    pub hidden: usize,
    pub layers: usize,
    pub seed: u64,
}

impl Default for SynthTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_frames: 256,
            lr: 5e-4,
            hidden: SYNTH_HIDDEN,
            layers: SYNTH_LAYERS,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct SynthTrainResult {
    pub net: SynthesizerNet,
    /// Entry 0 is the untrained baseline.
    pub log: Vec<SynthEpoch>,
}

impl SynthTrainResult {
    pub fn final_train_loss(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |e| e.train_loss)
    }

    pub fn final_val_loss(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |e| e.val_loss)
    }
}

/// Frame MSE of `net` over `frames`.
pub fn synth_mse(net: &SynthesizerNet, frames: &SynthFrames) -> Result<f64> {
    if frames.is_empty() {
        return Ok(f64::NAN);
    }
    let mut tape = Tape::new();
    let x = tape.constant_ref(&frames.inputs)?;
    let y = net.forward(&mut tape, x, false)?;
    let t = tape.constant_ref(&frames.targets)?;
    let l = tape.mse(y, t)?;
    tape.value(l).item()
}

/// Fit a [`SynthesizerNet`] to log-mel targets by minibatch Adam on MSE.
pub fn train_synthesizer(train: &SynthFrames, valid: &SynthFrames, cfg: &SynthTrainConfig) -> Result<SynthTrainResult> {
    if train.is_empty() {
        return Err(Error::EmptySequence("no synthesizer training frames".into()));
    }
    if cfg.batch_frames == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut net = SynthesizerNet::new(cfg.hidden, cfg.layers, cfg.seed)?;
    net.fit_input_stats(&train.inputs)?;
    let mut opt = OptimizerState::adam(cfg.lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut log = vec![SynthEpoch {
        epoch: 0,
        train_loss: synth_mse(&net, train)?,
        val_loss: synth_mse(&net, valid)?,
    }];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_frames) {
            let (xb, yb) = train.rows(batch);
            let (loss, grads) = {
                let mut tape = Tape::new();
                let x = tape.constant(xb)?;
                let y = net.forward(&mut tape, x, true)?;
                let t = tape.constant(yb)?;
                let l = tape.mse(y, t)?;
                let loss = tape.value(l).item()?;
                if !loss.is_finite() {
                    return Err(Error::Divergence { step, loss });
                }
                (loss, tape.backward(l)?.into_param_grads())
            };
            net.params.accumulate(&grads)?;
            adam_step(&mut net.params, &mut opt)?;
            total += loss * batch.len() as f64;
            step += 1;
        }
        log.push(SynthEpoch {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss: synth_mse(&net, valid)?,
        });
    }
    Ok(SynthTrainResult { net, log })
}

/// The frozen forward model used by imitation learning.
#[derive(Clone, Debug)]
pub enum Synthesizer {
    Analytic(AnalyticTractConfig),
    Net(SynthesizerNet),
}

impl Synthesizer {
    pub fn logmel_on_tape<'a>(&'a self, tape: &mut Tape<'a>, a: Var, source: &RealMatrix) -> Result<Var> {
        match self {
            Synthesizer::Analytic(cfg) => tract_on_tape(tape, a, source, cfg),
            Synthesizer::Net(net) => net.logmel_on_tape(tape, a, source),
        }
    }

    pub fn logmel(&self, a: &RealMatrix, source: &RealMatrix) -> Result<RealMatrix> {
        match self {
            Synthesizer::Analytic(cfg) => tract_logmel(a, source, cfg),
            Synthesizer::Net(net) => net.logmel(a, source),
        }
    }

    /// Hash of every fixed quantity the forward pass depends on.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::default();
        match self {
            Synthesizer::Analytic(c) => {
                for v in c
                    .formant_base
                    .iter()
                    .chain(&c.formant_gain)
                    .chain(&c.formant_amplitude)
                    .chain([&c.peak_width, &c.width_modulation, &c.ripple_depth, &c.speaker_scale])
                {
                    h.write(v.to_bits());
                }
            }
            Synthesizer::Net(n) => {
                h.write(n.params.fingerprint());
                for v in n.input_mean.iter().chain(&n.input_std) {
                    h.write(v.to_bits());
                }
            }
        }
        h.0
    }
}

/// FNV-1a over 64-bit words.
pub(crate) struct Fnv(pub u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    pub(crate) fn write(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
}

/// Articulatory target of a consonant. Parameters left `None` take the
/// midpoint of the flanking vowels.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsonantTarget {
    pub phone: Phone,
    pub target: [Option<f64>; N_PARAMS],
}

#[derive(Clone, Debug, PartialEq)]
pub struct VowelTarget {
    pub phone: Phone,
    pub target: [f64; N_PARAMS],
}

#[derive(Clone, Debug, PartialEq)]
pub enum SpeakerScales {
    /// Every speaker uses this scale.
    Fixed(f64),
    /// Drawn uniformly per speaker.
    Uniform(f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub speakers: usize,
    pub items_per_speaker: usize,
    pub vowels: Vec<VowelTarget>,
    pub consonants: Vec<ConsonantTarget>,
    pub transition_s: f64,
    pub steady_s: (f64, f64),
    pub jitter: f64,
    pub pitch_period: (f64, f64),
    /// Relative depth of the slow pitch-period drift.
    pub pitch_drift: f64,
    pub pc_vowel: f64,
    pub pc_stop: f64,
    pub pc_fricative: f64,
    pub speaker_scales: SpeakerScales,
}

impl Default for CorpusConfig {
    /// One speaker, 300 items, scale 1. Vowels share open lips and differ
    /// mildly; consonants set their place parameters and hold the rest at 0.
    fn default() -> Self {
        use Manner::*;
        use Place::*;
        let v = |l: &str, t: [f64; 6]| VowelTarget {
            phone: Phone::new(l, Place::None, Vowel),
            target: t,
        };
        let c = |l: &str, place: Place, manner: Manner, set: &[(usize, f64)]| {
            let mut target = [Some(0.0); N_PARAMS];
            for (i, x) in set {
                target[*i] = Some(*x);
            }
            ConsonantTarget {
                phone: Phone::new(l, place, manner),
                target,
            }
        };
        Self {
            speakers: 1,
            items_per_speaker: 300,
            vowels: vec![
                v("a", [0.5, 0.0, -0.25, 0.0, 0.0, 1.0]),
                v("i", [-0.4, 0.25, 0.5, 0.15, -0.25, 1.0]),
                v("u", [-0.3, -0.25, -0.5, -0.15, 0.5, 1.0]),
            ],
            consonants: vec![
                c("p", Labial, Stop, &[(LH, -2.0), (LP, 1.0)]),
                c("f", Labial, Fricative, &[(LH, -1.2), (LP, 0.6)]),
                c("t", Coronal, Stop, &[(TT, 2.0), (JH, 0.3)]),
                c("s", Coronal, Fricative, &[(TT, 1.4), (JH, 0.3)]),
                c("k", Dorsal, Stop, &[(TD, 2.2), (TB, 0.8)]),
                c("x", Dorsal, Fricative, &[(TD, 1.4), (TB, 0.8)]),
            ],
            transition_s: 0.03,
            steady_s: (0.08, 0.14),
            jitter: 0.05,
            pitch_period: (120.0, 240.0),
            pitch_drift: 0.05,
            pc_vowel: 0.9,
            pc_stop: 0.7,
            pc_fricative: 0.3,
            speaker_scales: SpeakerScales::Fixed(1.0),
        }
    }
}

impl CorpusConfig {
    /// `speakers` speakers with scales drawn from `[0.85, 1.2]`.
    pub fn multi_speaker(speakers: usize, items_per_speaker: usize) -> Self {
        Self {
            speakers,
            items_per_speaker,
            speaker_scales: SpeakerScales::Uniform(0.85, 1.2),
            ..Self::default()
        }
    }

    pub fn inventory(&self) -> PhoneInventory {
        let phones = self
            .vowels
            .iter()
            .map(|v| v.phone.clone())
            .chain(self.consonants.iter().map(|c| c.phone.clone()))
            .collect();
        PhoneInventory::new(phones).expect("validated")
    }

    pub fn validate(&self) -> Result<()> {
        if self.vowels.is_empty() || self.consonants.is_empty() {
            return Err(Error::Config("phone inventory needs at least one vowel and one consonant".into()));
        }
        PhoneInventory::new(
            self.vowels
                .iter()
                .map(|v| v.phone.clone())
                .chain(self.consonants.iter().map(|c| c.phone.clone()))
                .collect(),
        )?;
        if self.speakers == 0 || self.items_per_speaker == 0 {
            return Err(Error::Config("corpus needs at least one speaker and one item".into()));
        }
        let (lo, hi) = self.steady_s;
        if !(lo > 0.0 && hi >= lo && self.transition_s >= 0.0) {
            return Err(Error::Config("invalid segment durations".into()));
        }
        let (plo, phi) = self.pitch_period;
        if !(plo >= MIN_PERIOD as f64 && phi <= MAX_PERIOD as f64 && plo <= phi) {
            return Err(Error::Config(format!(
                "pitch period range must lie in [{MIN_PERIOD}, {MAX_PERIOD}]"
            )));
        }
        for pc in [self.pc_vowel, self.pc_stop, self.pc_fricative] {
            if !(0.0..=1.0).contains(&pc) {
                return Err(Error::Config(format!("pitch coefficient {pc} outside [0, 1]")));
            }
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::Config("jitter must be nonnegative".into()));
        }
        match self.speaker_scales {
            SpeakerScales::Fixed(s) => AnalyticTractConfig::with_scale(s).validate()?,
            SpeakerScales::Uniform(a, b) => {
                if !(a <= b) {
                    return Err(Error::Config("speaker scale range reversed".into()));
                }
                AnalyticTractConfig::with_scale(a).validate()?;
                AnalyticTractConfig::with_scale(b).validate()?;
            }
        }
        Ok(())
    }
}

/// Frame span `[start, end)` with its phone label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledSpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

#[derive(Clone, Debug)]
pub struct SyntheticUtterance {
    pub id: String,
    pub speaker: String,
    pub speaker_scale: f64,
    pub trajectory: ArticulatoryTrajectory,
    pub source: SourceTrack,
    pub mel: MelSpectrogram,
    pub segments: Vec<LabeledSpan>,
}

impl SyntheticUtterance {
    pub fn len(&self) -> usize {
        self.trajectory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectory.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub utterances: Vec<SyntheticUtterance>,
    pub inventory: PhoneInventory,
}

/// Index lists of an utterance-level split.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl SyntheticCorpus {
    /// 80/10/10 by utterance, shuffled within each speaker.
    pub fn split(&self, seed: u64) -> Split {
        self.split_fractions(seed, 0.1, 0.1).expect("valid default fractions")
    }

    /// Per speaker, `floor(n * test)` utterances go to test, `floor(n *
    /// valid)` to validation and the rest to training.
    pub fn split_fractions(&self, seed: u64, valid: f64, test: f64) -> Result<Split> {
        if !(valid >= 0.0 && test >= 0.0 && valid + test < 1.0) {
            return Err(Error::Config(format!(
                "validation and test fractions {valid} and {test} must be non-negative and leave training data"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut speakers: Vec<&str> = Vec::new();
        for u in &self.utterances {
            if !speakers.contains(&u.speaker.as_str()) {
                speakers.push(&u.speaker);
            }
        }
        let mut split = Split::default();
        for s in speakers {
            let mut idx: Vec<usize> = (0..self.utterances.len())
                .filter(|i| self.utterances[*i].speaker == s)
                .collect();
            idx.shuffle(&mut rng);
            let n = idx.len();
            let n_test = (n as f64 * test).floor() as usize;
            let n_valid = (n as f64 * valid).floor() as usize;
            split.test.extend(&idx[..n_test]);
            split.valid.extend(&idx[n_test..n_test + n_valid]);
            split.train.extend(&idx[n_test + n_valid..]);
        }
        split.train.sort_unstable();
        split.valid.sort_unstable();
        split.test.sort_unstable();
        Ok(split)
    }
}

const FRAME_S: f64 = 0.02;

fn blend(from: &[f64; N_PARAMS], to: &[f64; N_PARAMS], u: f64) -> [f64; N_PARAMS] {
    let w = 0.5 * (1.0 - (PI * u).cos());
    let mut out = [0.0; N_PARAMS];
    for j in 0..N_PARAMS {
        out[j] = from[j] + (to[j] - from[j]) * w;
    }
    out
}

/// Deterministic VCV corpus. Consonants cycle through the inventory per
/// speaker; vowels are drawn uniformly.
pub fn generate_corpus(cfg: &CorpusConfig, seed: u64) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, cfg.jitter).map_err(|e| Error::Config(e.to_string()))?;
    let mut utterances = Vec::with_capacity(cfg.speakers * cfg.items_per_speaker);
    for spk in 0..cfg.speakers {
        let scale = match cfg.speaker_scales {
            SpeakerScales::Fixed(s) => s,
            SpeakerScales::Uniform(a, b) => rng.gen_range(a..=b),
        };
        let tract = AnalyticTractConfig::with_scale(scale);
        for item in 0..cfg.items_per_speaker {
            let cons = &cfg.consonants[item % cfg.consonants.len()];
            let v1 = &cfg.vowels[rng.gen_range(0..cfg.vowels.len())];
            let v2 = &cfg.vowels[rng.gen_range(0..cfg.vowels.len())];
            let mut ct = [0.0; N_PARAMS];
            for j in 0..N_PARAMS {
                ct[j] = cons.target[j].unwrap_or(0.5 * (v1.target[j] + v2.target[j]));
            }
            let targets = [v1.target, ct, v2.target];
            let phones = [&v1.phone, &cons.phone, &v2.phone];
            let steady: Vec<f64> = (0..3).map(|_| rng.gen_range(cfg.steady_s.0..=cfg.steady_s.1)).collect();
            let tr = cfg.transition_s;
            // Segment start times: steady_i begins at starts[i].
            let starts = [0.0, steady[0] + tr, steady[0] + steady[1] + 2.0 * tr];
            let total = starts[2] + steady[2];
            let n = ((total / FRAME_S).round() as usize).max(3);
            let b1 = ((starts[1] - tr / 2.0) / FRAME_S).round() as usize;
            let b2 = ((starts[2] - tr / 2.0) / FRAME_S).round() as usize;
            let b1 = b1.clamp(1, n - 2);
            let b2 = b2.clamp(b1 + 1, n - 1);
            let bounds = [0, b1, b2, n];

            let pp0 = rng.gen_range(cfg.pitch_period.0..=cfg.pitch_period.1);
            let drift_hz = rng.gen_range(0.5..1.5);
            let phase = rng.gen_range(0.0..2.0 * PI);

            let mut traj = RealMatrix::zeros(n, N_PARAMS);
            let mut source = RealMatrix::zeros(n, 2);
            for t in 0..n {
                let time = (t as f64 + 0.5) * FRAME_S;
                let seg = (0..3).rev().find(|i| time >= starts[*i]).unwrap_or(0);
                let steady_end = starts[seg] + steady[seg];
                let target = if seg < 2 && time >= steady_end && tr > 0.0 {
                    blend(&targets[seg], &targets[seg + 1], ((time - steady_end) / tr).min(1.0))
                } else {
                    targets[seg]
                };
                for (j, v) in target.iter().enumerate() {
                    traj.set(t, j, v + jitter.sample(&mut rng));
                }
                let label_seg = (0..3).rev().find(|i| t >= bounds[*i]).unwrap_or(0);
                let pc = match phones[label_seg].manner {
                    Manner::Vowel => cfg.pc_vowel,
                    Manner::Stop => cfg.pc_stop,
                    Manner::Fricative => cfg.pc_fricative,
                    Manner::Other => cfg.pc_vowel,
                };
                let pp = (pp0 * (1.0 + cfg.pitch_drift * (2.0 * PI * drift_hz * time + phase).sin()))
                    .clamp(MIN_PERIOD as f64, MAX_PERIOD as f64);
                source.set(t, 0, pp);
                source.set(t, 1, pc);
            }
            let energies = tract_energies(&traj, &source, &tract)?;
            let segments = (0..3)
                .map(|i| LabeledSpan {
                    start: bounds[i],
                    end: bounds[i + 1],
                    label: phones[i].label.clone(),
                })
                .collect();
            utterances.push(SyntheticUtterance {
                id: format!("s{spk:02}_{item:04}"),
                speaker: format!("spk{spk:02}"),
                speaker_scale: scale,
                trajectory: ArticulatoryTrajectory::new(traj)?,
                source: SourceTrack::new(source)?,
                mel: MelSpectrogram::new(energies)?,
                segments,
            });
        }
    }
    Ok(SyntheticCorpus {
        utterances,
        inventory: cfg.inventory(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn local_maxima(v: &[f64]) -> Vec<usize> {
        (1..v.len() - 1).filter(|m| v[*m] > v[m - 1] && v[*m] > v[m + 1]).collect()
    }

    #[test]
    fn neutral_tract_peaks_at_base_formants() {
        let out = tract_forward(&[0.0; 6], 160.0, 0.0, &AnalyticTractConfig::default()).unwrap();
        let fb = MelFilterbank::standard();
        let peaks = local_maxima(&out);
        assert_eq!(peaks.len(), 4);
        // Neighbouring formant skirts can pull a sampled peak off the nearest
        // band, but never past the adjacent one.
        for (p, f) in peaks.iter().zip([500.0, 1500.0, 2500.0, 3500.0]) {
            assert!((*p as f64 - fb.bin_coordinate(f)).abs() < 1.0, "{f} Hz peak at {p}");
        }
    }

    #[test]
    fn closed_lips_reach_log_floor() {
        let mut a = [0.0; 6];
        a[LH] = -400.0;
        let out = tract_forward(&a, 0.0, 0.0, &AnalyticTractConfig::default()).unwrap();
        for v in out {
            assert!((v - LOG_FLOOR.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn source_domain_checked() {
        let cfg = AnalyticTractConfig::default();
        assert!(matches!(tract_forward(&[0.0; 6], 50.0, 0.5, &cfg), Err(Error::Domain(_))));
        assert!(matches!(tract_forward(&[0.0; 6], 100.0, 1.5, &cfg), Err(Error::Domain(_))));
    }

    #[test]
    fn lip_height_is_monotone() {
        let cfg = AnalyticTractConfig::default();
        let mut prev = vec![f64::NEG_INFINITY; N_MELS];
        for lh in [-3.0, -1.0, 0.0, 0.5, 2.0] {
            let mut a = [0.3, -0.2, 0.1, 0.4, -0.5, 0.0];
            a[LH] = lh;
            let out = tract_forward(&a, 200.0, 0.9, &cfg).unwrap();
            assert!(out.iter().zip(&prev).all(|(o, p)| o >= p));
            prev = out;
        }
    }

    #[test]
    fn scale_shifts_peaks_upward() {
        let peaks = |s: f64| {
            let out = tract_forward(&[0.0; 6], 0.0, 0.0, &AnalyticTractConfig::with_scale(s)).unwrap();
            local_maxima(&out)
        };
        let (lo, mid, hi) = (peaks(0.85), peaks(1.0), peaks(1.2));
        for k in 0..4 {
            assert!(lo[k] <= mid[k] && mid[k] <= hi[k]);
        }
        assert_ne!(lo, hi);
    }

    #[test]
    fn corpus_is_deterministic_and_tiled() {
        let cfg = CorpusConfig {
            items_per_speaker: 12,
            ..CorpusConfig::multi_speaker(2, 12)
        };
        let a = generate_corpus(&cfg, 5).unwrap();
        let b = generate_corpus(&cfg, 5).unwrap();
        assert_eq!(a.utterances.len(), 24);
        for (u, v) in a.utterances.iter().zip(&b.utterances) {
            assert_eq!(u.trajectory, v.trajectory);
            assert_eq!(u.mel, v.mel);
            assert_eq!(u.segments, v.segments);
            assert_eq!(u.segments[0].start, 0);
            assert_eq!(u.segments.last().unwrap().end, u.len());
            for w in u.segments.windows(2) {
                assert_eq!(w[0].end, w[1].start);
                assert!(w[0].start < w[0].end);
            }
            assert_eq!(u.mel.len(), u.len());
            assert_eq!(u.source.len(), u.len());
        }
    }

    #[test]
    fn empty_inventory_rejected() {
        let cfg = CorpusConfig {
            consonants: vec![],
            ..CorpusConfig::default()
        };
        assert!(matches!(generate_corpus(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn split_is_eighty_ten_ten() {
        let cfg = CorpusConfig {
            items_per_speaker: 50,
            ..CorpusConfig::default()
        };
        let c = generate_corpus(&cfg, 1).unwrap();
        let s = c.split(3);
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (40, 5, 5));
        let mut all: Vec<usize> = s.train.iter().chain(&s.valid).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn zero_epoch_training_returns_baseline() {
        let cfg = CorpusConfig {
            items_per_speaker: 6,
            ..CorpusConfig::default()
        };
        let c = generate_corpus(&cfg, 2).unwrap();
        let logmels: Vec<RealMatrix> = c.utterances.iter().map(|u| u.mel.log().into_frames()).collect();
        let frames = SynthFrames::from_sequences(
            c.utterances
                .iter()
                .zip(&logmels)
                .map(|(u, m)| (u.trajectory.frames(), u.source.frames(), m)),
        )
        .unwrap();
        let tc = SynthTrainConfig {
            epochs: 0,
            hidden: 8,
            layers: 2,
            ..Default::default()
        };
        let r = train_synthesizer(&frames, &frames, &tc).unwrap();
        assert_eq!(r.log.len(), 1);
        let fresh = {
            let mut n = SynthesizerNet::new(8, 2, 0).unwrap();
            n.fit_input_stats(&frames.inputs).unwrap();
            n
        };
        assert_eq!(r.net.params().fingerprint(), fresh.params().fingerprint());
        assert_eq!(r.final_train_loss(), synth_mse(&fresh, &frames).unwrap());
    }
}
