//! Articulatory parameters: EMA recordings, resampling to the acoustic
//! frame rate, and guided PCA between coil coordinates and the six
//! parameters (JH, TB, TD, TT, LP, LH).

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::dsp::FRAME_RATE;
use crate::graph::RealMatrix;
use crate::{Error, Result};

pub const N_PARAMS: usize = 6;
pub const PARAM_NAMES: [&str; N_PARAMS] = ["JH", "TB", "TD", "TT", "LP", "LH"];
pub const JH: usize = 0;
pub const TB: usize = 1;
pub const TD: usize = 2;
pub const TT: usize = 3;
pub const LP: usize = 4;
pub const LH: usize = 5;

/// Coil channels assumed by [`GuidedPcaSpec::default`].
pub const DEFAULT_CHANNELS: [&str; 12] = [
    "jaw_x",
    "jaw_y",
    "tongue_tip_x",
    "tongue_tip_y",
    "tongue_mid_x",
    "tongue_mid_y",
    "tongue_back_x",
    "tongue_back_y",
    "upper_lip_x",
    "upper_lip_y",
    "lower_lip_x",
    "lower_lip_y",
];

/// Named 2-D coil coordinates, time-major: `N samples x C channels`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmaRecording {
    channels: Vec<String>,
    data: RealMatrix,
    rate: f64,
}

impl EmaRecording {
    pub fn new(channels: Vec<String>, data: RealMatrix, rate: f64) -> Result<Self> {
        if channels.len() != data.cols() {
            return Err(Error::Schema(format!(
                "{} channel names for {} columns",
                channels.len(),
                data.cols()
            )));
        }
        for (i, c) in channels.iter().enumerate() {
            if channels[..i].contains(c) {
                return Err(Error::Schema(format!("duplicate channel {c}")));
            }
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::Schema(format!("sample rate must be positive, got {rate}")));
        }
        Ok(Self { channels, data, rate })
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn data(&self) -> &RealMatrix {
        &self.data
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    pub fn channel_index(&self, name: &str) -> Result<usize> {
        self.channels
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Schema(format!("missing channel {name}")))
    }

    /// Columns reordered (and restricted) to `names`.
    pub fn select(&self, names: &[String]) -> Result<RealMatrix> {
        let idx = names
            .iter()
            .map(|n| self.channel_index(n))
            .collect::<Result<Vec<_>>>()?;
        Ok(RealMatrix::from_fn(self.len(), idx.len(), |r, c| self.data.get(r, idx[c])))
    }

    /// Stack recordings with identical channels and rate.
    pub fn concat(parts: &[EmaRecording]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::EmptySequence("no recordings to concatenate".into()))?;
        let mut blocks = Vec::with_capacity(parts.len());
        for p in parts {
            if p.rate != first.rate {
                return Err(Error::Schema("recordings differ in sample rate".into()));
            }
            blocks.push(p.select(&first.channels)?);
        }
        let refs: Vec<&RealMatrix> = blocks.iter().collect();
        Self::new(first.channels.clone(), RealMatrix::vcat(&refs)?, first.rate)
    }
}

/// Per-frame parameters at 50 Hz, columns ordered as [`PARAM_NAMES`].
#[derive(Clone, Debug, PartialEq)]
pub struct ArticulatoryTrajectory {
    frames: RealMatrix,
}

impl ArticulatoryTrajectory {
    pub fn new(frames: RealMatrix) -> Result<Self> {
        if frames.cols() != N_PARAMS {
            return Err(Error::Schema(format!(
                "trajectory needs {N_PARAMS} columns, got {}",
                frames.cols()
            )));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &RealMatrix {
        &self.frames
    }

    pub fn into_frames(self) -> RealMatrix {
        self.frames
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
}

pub const RESAMPLE_ORDER: usize = 64;
pub const RESAMPLE_CUTOFF_HZ: f64 = 22.0;

/// Hamming-windowed sinc low-pass with `order + 1` taps, unit DC gain.
pub fn lowpass_taps(rate: f64, cutoff: f64, order: usize) -> Vec<f64> {
    let fc = cutoff / rate;
    let mid = order as f64 / 2.0;
    let mut taps: Vec<f64> = (0..=order)
        .map(|n| {
            let x = n as f64 - mid;
            let sinc = if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * x).sin() / (PI * x)
            };
            let w = 0.54 - 0.46 * (2.0 * PI * n as f64 / order as f64).cos();
            sinc * w
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Zero-phase low-pass (22 Hz, 65 taps, mirrored edges) then keep every
/// `rate / 50`-th sample starting at the first.
pub fn resample_to_50hz(e: &EmaRecording) -> Result<EmaRecording> {
    let ratio = e.rate / FRAME_RATE;
    let factor = ratio.round();
    if (ratio - factor).abs() > 1e-9 || factor < 1.0 {
        return Err(Error::UnsupportedRate(format!(
            "{} Hz is not an integer multiple of {FRAME_RATE} Hz",
            e.rate
        )));
    }
    let factor = factor as usize;
    if factor == 1 {
        return Ok(e.clone());
    }
    let n = e.len();
    if n == 0 {
        return Err(Error::EmptySequence("EMA recording has no samples".into()));
    }
    let taps = lowpass_taps(e.rate, RESAMPLE_CUTOFF_HZ, RESAMPLE_ORDER);
    let half = (RESAMPLE_ORDER / 2) as isize;
    let reflect = |i: isize| -> usize {
        if n == 1 {
            return 0;
        }
        let period = 2 * (n as isize - 1);
        let m = i.rem_euclid(period);
        (if m < n as isize { m } else { period - m }) as usize
    };
    let out_len = n.div_ceil(factor);
    let c = e.data.cols();
    let out = RealMatrix::from_fn(out_len, c, |r, ch| {
        let center = (r * factor) as isize;
        taps.iter()
            .enumerate()
            .map(|(k, h)| h * e.data.get(reflect(center + k as isize - half), ch))
            .sum()
    });
    EmaRecording::new(e.channels.clone(), out, FRAME_RATE)
}

/// How a stage derives its parameter from the residual channels.
#[derive(Clone, Debug, PartialEq)]
pub enum ExtractionRule {
    /// A single coordinate, taken as is.
    Coordinate(String),
    /// First principal component of the listed channels.
    FirstPc(Vec<String>),
    /// First channel minus second (e.g. inter-lip distance).
    Difference(String, String),
}

impl ExtractionRule {
    pub fn channels(&self) -> Vec<&str> {
        match self {
            ExtractionRule::Coordinate(c) => vec![c],
            ExtractionRule::FirstPc(cs) => cs.iter().map(String::as_str).collect(),
            ExtractionRule::Difference(a, b) => vec![a, b],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GpcaStage {
    pub parameter: String,
    pub rule: ExtractionRule,
}

/// Ordered extraction stages, one per articulatory parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidedPcaSpec {
    pub stages: Vec<GpcaStage>,
}

impl Default for GuidedPcaSpec {
    fn default() -> Self {
        let pc = |p: &str, a: &str, b: &str| GpcaStage {
            parameter: p.into(),
            rule: ExtractionRule::FirstPc(vec![a.into(), b.into()]),
        };
        Self {
            stages: vec![
                GpcaStage {
                    parameter: "JH".into(),
                    rule: ExtractionRule::Coordinate("jaw_y".into()),
                },
                pc("TB", "tongue_mid_x", "tongue_mid_y"),
                pc("TD", "tongue_back_x", "tongue_back_y"),
                pc("TT", "tongue_tip_x", "tongue_tip_y"),
                pc("LP", "upper_lip_x", "lower_lip_x"),
                GpcaStage {
                    parameter: "LH".into(),
                    rule: ExtractionRule::Difference("upper_lip_y".into(), "lower_lip_y".into()),
                },
            ],
        }
    }
}

impl GuidedPcaSpec {
    /// Parse lines `PARAM<TAB>rule<TAB>ch[,ch...]` with rule one of
    /// `coordinate`, `pc`, `difference`. `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut stages = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: String| Error::Parse {
                line: line_no,
                message: m,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(err(format!("expected 3 tab-separated fields, got {}", fields.len())));
            }
            let chans: Vec<String> = fields[2].split(',').map(|s| s.trim().to_string()).collect();
            let rule = match (fields[1], chans.as_slice()) {
                ("coordinate", [c]) => ExtractionRule::Coordinate(c.clone()),
                ("pc", cs) if !cs.is_empty() => ExtractionRule::FirstPc(cs.to_vec()),
                ("difference", [a, b]) => ExtractionRule::Difference(a.clone(), b.clone()),
                (r, _) => return Err(err(format!("bad rule {r:?} for channels {}", fields[2]))),
            };
            stages.push(GpcaStage {
                parameter: fields[0].to_string(),
                rule,
            });
        }
        let spec = Self { stages };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.stages {
            let (rule, chans) = match &s.rule {
                ExtractionRule::Coordinate(c) => ("coordinate", c.clone()),
                ExtractionRule::FirstPc(cs) => ("pc", cs.join(",")),
                ExtractionRule::Difference(a, b) => ("difference", format!("{a},{b}")),
            };
            out.push_str(&format!("{}\t{rule}\t{chans}\n", s.parameter));
        }
        out
    }

    /// Six stages naming each canonical parameter exactly once.
    pub fn validate(&self) -> Result<()> {
        if self.stages.len() != N_PARAMS {
            return Err(Error::Config(format!(
                "guided PCA needs {N_PARAMS} stages, got {}",
                self.stages.len()
            )));
        }
        for name in PARAM_NAMES {
            let n = self.stages.iter().filter(|s| s.parameter == name).count();
            if n != 1 {
                return Err(Error::Config(format!("parameter {name} appears {n} times")));
            }
        }
        Ok(())
    }
}

/// One fitted stage: `p = (x - means) . extraction` after earlier stages
/// are subtracted; `regression` is each channel's slope on `p`. `p` is
/// centered by construction, so the standardized parameter is `p / std`.
#[derive(Clone, Debug, PartialEq)]
pub struct FittedStage {
    pub parameter: String,
    pub extraction: Vec<f64>,
    pub regression: Vec<f64>,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuidedPcaModel {
    pub channels: Vec<String>,
    pub means: Vec<f64>,
    /// In extraction order.
    pub stages: Vec<FittedStage>,
}

fn column_dot(x: &RealMatrix, v: &[f64]) -> Vec<f64> {
    (0..x.rows())
        .map(|r| x.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn subtract_outer(x: &mut RealMatrix, p: &[f64], b: &[f64]) {
    for (r, pr) in p.iter().enumerate() {
        for (v, bc) in x.row_mut(r).iter_mut().zip(b) {
            *v -= pr * bc;
        }
    }
}

/// Top eigenvector of the covariance of `cols` within `x`; ties resolve
/// to the earlier eigenvector in channel order.
fn first_pc(x: &RealMatrix, cols: &[usize]) -> Vec<f64> {
    let k = cols.len();
    let n = x.rows() as f64;
    let mut cov = DMatrix::<f64>::zeros(k, k);
    for r in 0..x.rows() {
        let row = x.row(r);
        for i in 0..k {
            for j in 0..k {
                cov[(i, j)] += row[cols[i]] * row[cols[j]] / n;
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let top = order[0];
    let tol = 1e-12 * eig.eigenvalues[top].abs().max(1e-300);
    // Among numerically tied eigenvalues prefer the vector that loads on the
    // lexicographically first channel.
    let best = order
        .iter()
        .copied()
        .filter(|i| (eig.eigenvalues[*i] - eig.eigenvalues[top]).abs() <= tol)
        .max_by(|a, b| {
            let la = eig.eigenvectors.column(*a).iter().position(|v| v.abs() > 1e-12);
            let lb = eig.eigenvectors.column(*b).iter().position(|v| v.abs() > 1e-12);
            lb.cmp(&la)
        })
        .unwrap_or(top);
    let mut v = vec![0.0; x.cols()];
    for (i, c) in cols.iter().enumerate() {
        v[*c] = eig.eigenvectors[(i, best)];
    }
    v
}

/// Sequential extraction, regression, and subtraction over the channels.
pub fn gpca_fit(data: &EmaRecording, spec: &GuidedPcaSpec) -> Result<GuidedPcaModel> {
    spec.validate()?;
    let c = data.channels().len();
    if data.len() < 10 * c {
        return Err(Error::Config(format!(
            "guided PCA needs at least {} samples for {c} channels, got {}",
            10 * c,
            data.len()
        )));
    }
    let means = data.data().column_means();
    let mut resid = data.data().clone();
    for r in 0..resid.rows() {
        for (v, m) in resid.row_mut(r).iter_mut().zip(&means) {
            *v -= m;
        }
    }
    let n = data.len() as f64;
    let mut stages = Vec::with_capacity(N_PARAMS);
    for stage in &spec.stages {
        let idx = stage
            .rule
            .channels()
            .iter()
            .map(|ch| data.channel_index(ch))
            .collect::<Result<Vec<_>>>()?;
        let mut v = vec![0.0; c];
        match &stage.rule {
            ExtractionRule::Coordinate(_) => v[idx[0]] = 1.0,
            ExtractionRule::Difference(..) => {
                v[idx[0]] += 1.0;
                v[idx[1]] -= 1.0;
            }
            ExtractionRule::FirstPc(_) => v = first_pc(&resid, &idx),
        }
        let mut p = column_dot(&resid, &v);
        let primary: f64 = p.iter().enumerate().map(|(r, pr)| pr * resid.get(r, idx[0])).sum();
        if primary < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
            p.iter_mut().for_each(|x| *x = -*x);
        }
        let pp: f64 = p.iter().map(|x| x * x).sum();
        let var = pp / n;
        let scale = resid.as_slice().iter().map(|x| x * x).sum::<f64>() / n + 1e-300;
        if !(var > 1e-12 * scale) {
            return Err(Error::DegenerateStage {
                stage: stages.len(),
                parameter: stage.parameter.clone(),
                reason: "extracted parameter has zero variance".into(),
            });
        }
        let regression: Vec<f64> = (0..c)
            .map(|ch| (0..resid.rows()).map(|r| resid.get(r, ch) * p[r]).sum::<f64>() / pp)
            .collect();
        subtract_outer(&mut resid, &p, &regression);
        stages.push(FittedStage {
            parameter: stage.parameter.clone(),
            extraction: v,
            regression,
            std: var.sqrt(),
        });
    }
    Ok(GuidedPcaModel {
        channels: data.channels().to_vec(),
        means,
        stages,
    })
}

impl GuidedPcaModel {
    fn param_column(&self, k: usize) -> usize {
        PARAM_NAMES
            .iter()
            .position(|n| *n == self.stages[k].parameter)
            .expect("validated parameter name")
    }

    /// Standardized parameters for every sample of `e`.
    pub fn encode(&self, e: &EmaRecording) -> Result<ArticulatoryTrajectory> {
        let mut resid = e.select(&self.channels)?;
        for r in 0..resid.rows() {
            for (v, m) in resid.row_mut(r).iter_mut().zip(&self.means) {
                *v -= m;
            }
        }
        let mut out = RealMatrix::zeros(e.len(), N_PARAMS);
        for (k, s) in self.stages.iter().enumerate() {
            let p = column_dot(&resid, &s.extraction);
            subtract_outer(&mut resid, &p, &s.regression);
            let col = self.param_column(k);
            for (r, pr) in p.iter().enumerate() {
                out.set(r, col, pr / s.std);
            }
        }
        ArticulatoryTrajectory::new(out)
    }

    /// Channel coordinates using the first `n_stages` stages only.
    pub fn decode_partial(&self, a: &ArticulatoryTrajectory, n_stages: usize) -> Result<EmaRecording> {
        let mut out = RealMatrix::from_fn(a.len(), self.channels.len(), |_, c| self.means[c]);
        for (k, s) in self.stages.iter().enumerate().take(n_stages) {
            let col = self.param_column(k);
            for r in 0..a.len() {
                let p = a.frames().get(r, col) * s.std;
                for (v, b) in out.row_mut(r).iter_mut().zip(&s.regression) {
                    *v += p * b;
                }
            }
        }
        EmaRecording::new(self.channels.clone(), out, FRAME_RATE)
    }

    pub fn decode(&self, a: &ArticulatoryTrajectory) -> Result<EmaRecording> {
        self.decode_partial(a, self.stages.len())
    }
}

pub fn gpca_encode(e: &EmaRecording, model: &GuidedPcaModel) -> Result<ArticulatoryTrajectory> {
    model.encode(e)
}

pub fn gpca_decode(a: &ArticulatoryTrajectory, model: &GuidedPcaModel) -> Result<EmaRecording> {
    model.decode(a)
}
