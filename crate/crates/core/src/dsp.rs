//! Speech front end at 16 kHz: 640-sample Hann frames with a 320-sample
//! hop (50 frames per second), 80-band HTK mel projection over 0-8 kHz,
//! 39-dimensional MFCCs, and autocorrelation pitch features.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::graph::{delta_matrix, RealMatrix, Tape, Var};
use crate::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const FRAME_LEN: usize = 640;
pub const HOP: usize = 320;
pub const N_BINS: usize = FRAME_LEN / 2 + 1;
pub const N_MELS: usize = 80;
pub const N_CEPS: usize = 13;
pub const MFCC_DIM: usize = 3 * N_CEPS;
pub const FRAME_RATE: f64 = SAMPLE_RATE as f64 / HOP as f64;
pub const F_MAX: f64 = 8_000.0;
/// Floor added to mel energies before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;
pub const DELTA_WINDOW: usize = 2;

/// Pitch search range in samples (50-200 Hz at 16 kHz).
pub const MIN_PERIOD: usize = 80;
pub const MAX_PERIOD: usize = 320;
pub const VOICING_THRESHOLD: f64 = 0.3;
pub const ENERGY_THRESHOLD: f64 = 1e-6;

/// Mono 16 kHz audio.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::UnsupportedRate(format!(
                "{sample_rate} Hz; audio must already be {SAMPLE_RATE} Hz"
            )));
        }
        if samples.is_empty() {
            return Err(Error::EmptySequence("waveform has no samples".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!("sample {i} is {}", samples[i])));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn frame_count(&self) -> usize {
        frame_count(self.samples.len())
    }
}

/// `1 + floor((len - 640) / 320)`, or 0 when shorter than one frame.
pub fn frame_count(len: usize) -> usize {
    if len < FRAME_LEN {
        0
    } else {
        1 + (len - FRAME_LEN) / HOP
    }
}

fn frames(w: &Waveform) -> Result<impl Iterator<Item = &[f64]>> {
    if w.len() < FRAME_LEN {
        return Err(Error::InputTooShort {
            len: w.len(),
            need: FRAME_LEN,
        });
    }
    Ok((0..w.frame_count()).map(move |t| &w.samples[t * HOP..t * HOP + FRAME_LEN]))
}

/// Periodic Hann window of length [`FRAME_LEN`].
pub fn hann_window() -> &'static [f64] {
    static WINDOW: OnceLock<Vec<f64>> = OnceLock::new();
    WINDOW.get_or_init(|| {
        (0..FRAME_LEN)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / FRAME_LEN as f64).cos())
            .collect()
    })
}

fn fft_plan() -> Arc<dyn Fft<f64>> {
    static PLAN: OnceLock<Arc<dyn Fft<f64>>> = OnceLock::new();
    PLAN.get_or_init(|| FftPlanner::new().plan_fft_forward(FRAME_LEN))
        .clone()
}

/// Magnitudes of the one-sided 640-point DFT of each Hann-windowed frame:
/// `T x 321`.
pub fn stft_magnitude(w: &Waveform) -> Result<RealMatrix> {
    let window = hann_window();
    let fft = fft_plan();
    let mut out = Vec::with_capacity(w.frame_count() * N_BINS);
    let mut buf = vec![Complex::new(0.0, 0.0); FRAME_LEN];
    for frame in frames(w)? {
        for ((b, x), win) in buf.iter_mut().zip(frame).zip(window) {
            *b = Complex::new(x * win, 0.0);
        }
        fft.process(&mut buf);
        out.extend(buf[..N_BINS].iter().map(|c| c.norm()));
    }
    Ok(RealMatrix::from_vec_unchecked(out.len() / N_BINS, N_BINS, out))
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK mel filterbank: 80 filters whose edges are 82 points
/// equally spaced in mel over `[0, 8000]` Hz, unit peak height.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    /// `321 x 80`.
    weights: RealMatrix,
    mel_step: f64,
}

impl MelFilterbank {
    /// The shared default filterbank.
    pub fn standard() -> &'static MelFilterbank {
        static FB: OnceLock<MelFilterbank> = OnceLock::new();
        FB.get_or_init(MelFilterbank::build)
    }

    fn build() -> Self {
        let mel_step = hz_to_mel(F_MAX) / (N_MELS + 1) as f64;
        let edges: Vec<f64> = (0..N_MELS + 2).map(|i| mel_to_hz(i as f64 * mel_step)).collect();
        let bin_hz = SAMPLE_RATE as f64 / FRAME_LEN as f64;
        let weights = RealMatrix::from_fn(N_BINS, N_MELS, |j, m| {
            let f = j as f64 * bin_hz;
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            if f <= lo || f >= hi {
                0.0
            } else if f <= mid {
                (f - lo) / (mid - lo)
            } else {
                (hi - f) / (hi - mid)
            }
        });
        Self { weights, mel_step }
    }

    pub fn weights(&self) -> &RealMatrix {
        &self.weights
    }

    /// Spacing of filter centers in mel.
    pub fn mel_step(&self) -> f64 {
        self.mel_step
    }

    /// Center frequency (Hz) of filter `m`.
    pub fn center_hz(&self, m: usize) -> f64 {
        mel_to_hz((m + 1) as f64 * self.mel_step)
    }

    /// Continuous filter-index coordinate of a frequency: filter `m`'s center
    /// maps to exactly `m`.
    pub fn bin_coordinate(&self, hz: f64) -> f64 {
        hz_to_mel(hz) / self.mel_step - 1.0
    }

    /// Derivative of [`Self::bin_coordinate`] w.r.t. frequency.
    pub fn bin_coordinate_slope(&self, hz: f64) -> f64 {
        2595.0 / (std::f64::consts::LN_10 * (700.0 + hz)) / self.mel_step
    }
}

/// Mel-filterbank energies at 50 frames per second: `T x 80`, nonnegative.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    frames: RealMatrix,
}

impl MelSpectrogram {
    pub fn new(frames: RealMatrix) -> Result<Self> {
        if frames.cols() != N_MELS {
            return Err(Error::Dimension(format!(
                "mel spectrogram needs {N_MELS} bands, got {}",
                frames.cols()
            )));
        }
        if frames.as_slice().iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::Domain("mel energies must be finite and nonnegative".into()));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &RealMatrix {
        &self.frames
    }

    pub fn frame_rate(&self) -> f64 {
        FRAME_RATE
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    /// `ln(mel + 1e-10)` as a logmel80 feature sequence.
    pub fn log(&self) -> FeatureSequence {
        FeatureSequence {
            frames: self.frames.map(|v| (v + LOG_FLOOR).ln()),
            frame_rate: FRAME_RATE,
            kind: FeatureKind::LogMel80,
        }
    }
}

/// Sum of squared magnitudes weighted by each triangular filter.
pub fn mel_project(spec: &RealMatrix) -> Result<MelSpectrogram> {
    if spec.cols() != N_BINS {
        return Err(Error::Dimension(format!(
            "expected {N_BINS} frequency bins, got {}",
            spec.cols()
        )));
    }
    let power = spec.map(|v| v * v);
    MelSpectrogram::new(power.matmul(MelFilterbank::standard().weights())?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Mfcc39,
    LogMel80,
    External,
}

impl FeatureKind {
    pub fn code(self) -> u32 {
        match self {
            FeatureKind::Mfcc39 => 0,
            FeatureKind::LogMel80 => 1,
            FeatureKind::External => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(FeatureKind::Mfcc39),
            1 => Some(FeatureKind::LogMel80),
            2 => Some(FeatureKind::External),
            _ => None,
        }
    }

    /// Required dimension, if the kind fixes one.
    pub fn fixed_dim(self) -> Option<usize> {
        match self {
            FeatureKind::Mfcc39 => Some(MFCC_DIM),
            FeatureKind::LogMel80 => Some(N_MELS),
            FeatureKind::External => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Mfcc39 => "mfcc39",
            FeatureKind::LogMel80 => "logmel80",
            FeatureKind::External => "external",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mfcc39" => Some(FeatureKind::Mfcc39),
            "logmel80" => Some(FeatureKind::LogMel80),
            "external" => Some(FeatureKind::External),
            _ => None,
        }
    }
}

/// Time-major representation vectors at a fixed frame rate.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    frames: RealMatrix,
    frame_rate: f64,
    kind: FeatureKind,
}

impl FeatureSequence {
    pub fn new(frames: RealMatrix, frame_rate: f64, kind: FeatureKind) -> Result<Self> {
        if !(frame_rate > 0.0 && frame_rate.is_finite()) {
            return Err(Error::Schema(format!("frame rate must be positive, got {frame_rate}")));
        }
        if let Some(d) = kind.fixed_dim() {
            if frames.cols() != d {
                return Err(Error::Schema(format!(
                    "{} features must have {d} dimensions, got {}",
                    kind.name(),
                    frames.cols()
                )));
            }
            if frame_rate != FRAME_RATE {
                return Err(Error::Schema(format!(
                    "{} features must be at {FRAME_RATE} Hz, got {frame_rate}",
                    kind.name()
                )));
            }
        }
        Ok(Self {
            frames,
            frame_rate,
            kind,
        })
    }

    pub fn frames(&self) -> &RealMatrix {
        &self.frames
    }

    pub fn into_frames(self) -> RealMatrix {
        self.frames
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }
}

/// Orthonormal DCT-II basis restricted to the first 13 coefficients:
/// `80 x 13`, so that `ceps = logmel . basis`.
pub fn dct_basis() -> &'static RealMatrix {
    static BASIS: OnceLock<RealMatrix> = OnceLock::new();
    BASIS.get_or_init(|| {
        let n = N_MELS as f64;
        RealMatrix::from_fn(N_MELS, N_CEPS, |m, k| {
            let norm = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            norm * (PI * k as f64 * (m as f64 + 0.5) / n).cos()
        })
    })
}

/// Per-coefficient mean and standard deviation of the static cepstra.
#[derive(Clone, Debug, PartialEq)]
pub struct CepstralStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl CepstralStats {
    /// Population statistics over all frames of all inputs.
    pub fn fit<'a>(cepstra: impl IntoIterator<Item = &'a RealMatrix>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = [0.0; N_CEPS];
        let mut all = Vec::new();
        for c in cepstra {
            if c.cols() != N_CEPS {
                return Err(Error::Dimension(format!("cepstra must have {N_CEPS} columns")));
            }
            for r in 0..c.rows() {
                for (s, v) in sum.iter_mut().zip(c.row(r)) {
                    *s += v;
                }
            }
            n += c.rows();
            all.push(c);
        }
        if n == 0 {
            return Err(Error::EmptySequence("no frames to fit cepstral statistics".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut var = [0.0; N_CEPS];
        for c in all {
            for r in 0..c.rows() {
                for ((acc, v), m) in var.iter_mut().zip(c.row(r)).zip(&mean) {
                    *acc += (v - m) * (v - m);
                }
            }
        }
        let std = var.iter().map(|v| (v / n as f64).sqrt()).collect();
        let stats = Self { mean, std };
        stats.validate()?;
        Ok(stats)
    }

    /// Statistics that leave coefficients unchanged.
    pub fn identity() -> Self {
        Self {
            mean: vec![0.0; N_CEPS],
            std: vec![1.0; N_CEPS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != N_CEPS || self.std.len() != N_CEPS {
            return Err(Error::Dimension(format!("cepstral stats must have {N_CEPS} entries")));
        }
        if let Some(k) = self.std.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Normalization { coefficient: k });
        }
        Ok(())
    }

    fn scale_shift(&self) -> (Vec<f64>, Vec<f64>) {
        let scale: Vec<f64> = self.std.iter().map(|s| 1.0 / s).collect();
        let shift = self.mean.iter().zip(&scale).map(|(m, s)| -m * s).collect();
        (scale, shift)
    }
}

/// Static cepstra (first 13 DCT-II coefficients of the log-mel frames).
pub fn cepstra_from_logmel(logmel: &RealMatrix) -> Result<RealMatrix> {
    if logmel.cols() != N_MELS {
        return Err(Error::Dimension(format!("log-mel needs {N_MELS} columns, got {}", logmel.cols())));
    }
    logmel.matmul(dct_basis())
}

/// Static cepstra of a waveform.
pub fn cepstra(w: &Waveform) -> Result<RealMatrix> {
    let mel = mel_project(&stft_magnitude(w)?)?;
    cepstra_from_logmel(mel.log().frames())
}

/// `[c, delta(c), delta(delta(c))]` for z-scored static cepstra.
fn stack_deltas(c: RealMatrix) -> RealMatrix {
    let d1 = delta_features(&c, DELTA_WINDOW);
    let d2 = delta_features(&d1, DELTA_WINDOW);
    RealMatrix::hcat(&[&c, &d1, &d2]).expect("equal row counts")
}

fn zscore(c: &RealMatrix, stats: &CepstralStats) -> RealMatrix {
    let mut out = c.clone();
    for r in 0..out.rows() {
        for ((v, m), s) in out.row_mut(r).iter_mut().zip(&stats.mean).zip(&stats.std) {
            *v = (*v - m) / s;
        }
    }
    out
}

/// 39-dimensional MFCCs: log mel, DCT-II, 13 coefficients, z-score, then
/// first and second deltas. Without `stats`, statistics come from `w`.
pub fn mfcc39(w: &Waveform, stats: Option<&CepstralStats>) -> Result<FeatureSequence> {
    let c = cepstra(w)?;
    let fitted;
    let stats = match stats {
        Some(s) => {
            s.validate()?;
            s
        }
        None => {
            fitted = CepstralStats::fit([&c])?;
            &fitted
        }
    };
    FeatureSequence::new(stack_deltas(zscore(&c, stats)), FRAME_RATE, FeatureKind::Mfcc39)
}

/// Same math as [`mfcc39`] from the mel stage onward.
pub fn mfcc_from_mel(m: &MelSpectrogram, stats: &CepstralStats) -> Result<FeatureSequence> {
    mfcc_from_logmel(m.log().frames(), stats)
}

/// MFCCs from log-mel frames (`ln(mel + 1e-10)`).
pub fn mfcc_from_logmel(logmel: &RealMatrix, stats: &CepstralStats) -> Result<FeatureSequence> {
    stats.validate()?;
    let c = cepstra_from_logmel(logmel)?;
    FeatureSequence::new(stack_deltas(zscore(&c, stats)), FRAME_RATE, FeatureKind::Mfcc39)
}

/// Differentiable MFCCs from a `T x 80` log-mel node.
pub fn mfcc_from_logmel_on_tape(tape: &mut Tape<'_>, logmel: Var, stats: &CepstralStats) -> Result<Var> {
    stats.validate()?;
    let basis = tape.constant_ref(dct_basis())?;
    let c = tape.matmul(logmel, basis)?;
    let (scale, shift) = stats.scale_shift();
    let z = tape.affine_cols(c, &scale, &shift)?;
    let d1 = tape.delta(z, DELTA_WINDOW)?;
    let d2 = tape.delta(d1, DELTA_WINDOW)?;
    tape.concat_cols(&[z, d1, d2])
}

/// Differentiable MFCCs from a `T x 80` node of mel energies.
pub fn mfcc_from_mel_on_tape(tape: &mut Tape<'_>, mel: Var, stats: &CepstralStats) -> Result<Var> {
    let logmel = tape.log(mel, LOG_FLOOR)?;
    mfcc_from_logmel_on_tape(tape, logmel, stats)
}

/// Regression deltas with edge replication.
pub fn delta_features(x: &RealMatrix, window: usize) -> RealMatrix {
    delta_matrix(x, window)
}

/// Pitch period (samples) and harmonicity per frame: `T x 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceTrack {
    frames: RealMatrix,
}

impl SourceTrack {
    pub fn new(frames: RealMatrix) -> Result<Self> {
        if frames.cols() != 2 {
            return Err(Error::Schema(format!("source track needs 2 columns, got {}", frames.cols())));
        }
        for t in 0..frames.rows() {
            let (pp, pc) = (frames.get(t, 0), frames.get(t, 1));
            check_source(pp, pc).map_err(|e| Error::Domain(format!("frame {t}: {e}")))?;
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &RealMatrix {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn period(&self, t: usize) -> f64 {
        self.frames.get(t, 0)
    }

    pub fn harmonicity(&self, t: usize) -> f64 {
        self.frames.get(t, 1)
    }
}

/// `PP in {0} U [80, 320]`, `PC in [0, 1]`.
pub fn check_source(pp: f64, pc: f64) -> std::result::Result<(), String> {
    if !(pp == 0.0 || (MIN_PERIOD as f64..=MAX_PERIOD as f64).contains(&pp)) {
        return Err(format!("pitch period {pp} outside {{0}} U [{MIN_PERIOD}, {MAX_PERIOD}]"));
    }
    if !(0.0..=1.0).contains(&pc) {
        return Err(format!("pitch coefficient {pc} outside [0, 1]"));
    }
    Ok(())
}

/// Normalized autocorrelation pitch tracker over lags 80..=320.
///
/// Ties within `1e-9` resolve to the shorter lag so exact multiples of the
/// period do not win.
pub fn extract_source(w: &Waveform) -> Result<SourceTrack> {
    let mut out = Vec::with_capacity(w.frame_count() * 2);
    for frame in frames(w)? {
        let energy = frame.iter().map(|v| v * v).sum::<f64>() / FRAME_LEN as f64;
        if energy < ENERGY_THRESHOLD {
            out.extend([0.0, 0.0]);
            continue;
        }
        let mut best = (0usize, f64::NEG_INFINITY);
        for lag in MIN_PERIOD..=MAX_PERIOD {
            let n = FRAME_LEN - lag;
            let (a, b) = (&frame[..n], &frame[lag..]);
            let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let aa: f64 = a.iter().map(|x| x * x).sum();
            let bb: f64 = b.iter().map(|x| x * x).sum();
            let denom = (aa * bb).sqrt();
            let r = if denom > 0.0 { ab / denom } else { 0.0 };
            if r > best.1 + 1e-9 {
                best = (lag, r);
            }
        }
        if best.1 < VOICING_THRESHOLD {
            out.extend([0.0, 0.0]);
        } else {
            out.extend([best.0 as f64, best.1.clamp(0.0, 1.0)]);
        }
    }
    SourceTrack::new(RealMatrix::from_vec_unchecked(out.len() / 2, 2, out))
}

/// Resample log-mel frames along frequency so a spectrum produced by a
/// vocal tract whose formants are scaled by `factor` lines up with the
/// unscaled tract: output band `m` reads the input at frequency
/// `factor * center_hz(m)`, linearly interpolated in band coordinates and
/// clamped at the edges.
pub fn warp_logmel(logmel: &RealMatrix, factor: f64) -> Result<RealMatrix> {
    if logmel.cols() != N_MELS {
        return Err(Error::Dimension(format!("log-mel needs {N_MELS} columns")));
    }
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::Domain(format!("warp factor must be positive, got {factor}")));
    }
    if factor == 1.0 {
        return Ok(logmel.clone());
    }
    let fb = MelFilterbank::standard();
    let taps: Vec<(usize, usize, f64)> = (0..N_MELS)
        .map(|m| {
            let pos = fb.bin_coordinate(factor * fb.center_hz(m)).clamp(0.0, (N_MELS - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(N_MELS - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect();
    Ok(RealMatrix::from_fn(logmel.rows(), N_MELS, |t, m| {
        let (lo, hi, frac) = taps[m];
        logmel.get(t, lo) * (1.0 - frac) + logmel.get(t, hi) * frac
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, len: usize) -> Waveform {
        let s = (0..len)
            .map(|n| (2.0 * PI * freq * n as f64 / SAMPLE_RATE as f64).sin())
            .collect();
        Waveform::new(s, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn frame_rate_is_twenty_ms() {
        assert_eq!(FRAME_RATE, 50.0);
        assert_eq!(1000.0 / FRAME_RATE, 20.0);
    }

    #[test]
    fn waveform_rejects_other_rates() {
        assert!(matches!(
            Waveform::new(vec![0.0; 10], 44_100),
            Err(Error::UnsupportedRate(_))
        ));
    }

    #[test]
    fn silence_gives_zero_stft() {
        let w = Waveform::new(vec![0.0; 1600], SAMPLE_RATE).unwrap();
        let s = stft_magnitude(&w).unwrap();
        assert_eq!(s.shape(), (4, N_BINS));
        assert!(s.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn short_input_rejected() {
        let w = Waveform::new(vec![0.0; 639], SAMPLE_RATE).unwrap();
        assert!(matches!(
            stft_magnitude(&w),
            Err(Error::InputTooShort { len: 639, need: 640 })
        ));
    }

    #[test]
    fn thousand_hz_peaks_at_bin_forty() {
        let s = stft_magnitude(&tone(1000.0, 4000)).unwrap();
        for t in 0..s.rows() {
            let row = s.row(t);
            let argmax = (0..N_BINS).max_by(|a, b| row[*a].total_cmp(&row[*b])).unwrap();
            assert_eq!(argmax, 40);
        }
    }

    #[test]
    fn mel_has_eighty_bands_and_zero_maps_to_zero() {
        let m = mel_project(&RealMatrix::zeros(3, N_BINS)).unwrap();
        assert_eq!(m.frames().shape(), (3, N_MELS));
        assert!(m.frames().as_slice().iter().all(|v| *v == 0.0));
        assert!(matches!(
            mel_project(&RealMatrix::zeros(3, 320)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn filter_rows_are_contiguous_and_nonnegative() {
        let w = MelFilterbank::standard().weights();
        for m in 0..N_MELS {
            let col = w.column(m);
            assert!(col.iter().all(|v| *v >= 0.0));
            let nz: Vec<usize> = (0..N_BINS).filter(|j| col[*j] > 0.0).collect();
            assert!(!nz.is_empty(), "filter {m} covers no bins");
            assert_eq!(nz.last().unwrap() - nz[0] + 1, nz.len());
        }
    }

    #[test]
    fn bin_coordinate_hits_filter_centers() {
        let fb = MelFilterbank::standard();
        for m in [0, 17, 79] {
            assert!((fb.bin_coordinate(fb.center_hz(m)) - m as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn doubling_gain_quadruples_mel_energy() {
        let w = tone(440.0, 3200);
        let w2 = Waveform::new(w.samples().iter().map(|v| 0.5 * v).collect(), SAMPLE_RATE).unwrap();
        let m1 = mel_project(&stft_magnitude(&w).unwrap()).unwrap();
        let m2 = mel_project(&stft_magnitude(&w2).unwrap()).unwrap();
        for (a, b) in m1.frames().as_slice().iter().zip(m2.frames().as_slice()) {
            assert_eq!(*a, 4.0 * b);
        }
    }

    #[test]
    fn delta_of_constant_and_ramp() {
        let c = RealMatrix::filled(6, 2, 3.5);
        assert!(delta_features(&c, 2).as_slice().iter().all(|v| *v == 0.0));
        let ramp = RealMatrix::from_fn(9, 1, |t, _| t as f64);
        let d = delta_features(&ramp, 2);
        for t in 2..7 {
            assert!((d.get(t, 0) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_std_names_coefficient() {
        let mut stats = CepstralStats::identity();
        stats.std[4] = 0.0;
        let w = tone(300.0, 2000);
        assert!(matches!(
            mfcc39(&w, Some(&stats)),
            Err(Error::Normalization { coefficient: 4 })
        ));
    }

    #[test]
    fn silence_is_unvoiced() {
        let w = Waveform::new(vec![0.0; 3200], SAMPLE_RATE).unwrap();
        let s = extract_source(&w).unwrap();
        assert!(s.frames().as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unit_warp_is_identity() {
        let m = RealMatrix::from_fn(3, N_MELS, |t, m| (t * m) as f64 * 0.01 - 1.0);
        assert_eq!(warp_logmel(&m, 1.0).unwrap(), m);
    }

    #[test]
    fn warp_undoes_formant_scaling() {
        // A peak at band coordinate of 1200 Hz in the scaled spectrum moves
        // back to the coordinate of 1000 Hz when warped by 1.2.
        let fb = MelFilterbank::standard();
        let peak = |hz: f64| {
            let c = fb.bin_coordinate(hz);
            RealMatrix::from_fn(1, N_MELS, |_, m| -((m as f64 - c).powi(2)) / 8.0)
        };
        let warped = warp_logmel(&peak(1200.0), 1.2).unwrap();
        let argmax = (0..N_MELS)
            .max_by(|a, b| warped.get(0, *a).total_cmp(&warped.get(0, *b)))
            .unwrap();
        assert_eq!(argmax, fb.bin_coordinate(1000.0).round() as usize);
    }
}
