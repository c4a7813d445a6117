//! File formats: WAV ingestion, FTR1 feature files, CKP1 checkpoints
//! (including the frozen-encoder layer layout), corpus manifests and the
//! alignment, EMA and transcript text formats. Writers go through a
//! temporary file in the target directory and an atomic rename.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::artic::{ArticulatoryTrajectory, EmaRecording, FittedStage, GuidedPcaModel, N_PARAMS};
use crate::dsp::{FeatureKind, FeatureSequence, SourceTrack, Waveform, FRAME_RATE, SAMPLE_RATE};
use crate::eval::ProbeModel;
use crate::graph::{ParameterSet, RealMatrix};
use crate::imitation::{nonlinearity_code, nonlinearity_from_code, EncoderLayer, FrozenEncoder, InverseModel};
use crate::phone::PhoneInventory;
use crate::synth::{LabeledSpan, SynthesizerNet};
use crate::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"FTR1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CKP1";
const FEATURE_HEADER: usize = 20;

/// Write `bytes` to `path` via a sibling temporary file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- audio

/// 16-bit PCM mono 16 kHz WAV, scaled by 1/32768.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::UnsupportedFormat(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {} channels, expected mono",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {}-bit {:?} samples, expected 16-bit PCM",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {} Hz, expected {SAMPLE_RATE} Hz",
            path.display(),
            spec.sample_rate
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::UnsupportedFormat(format!("{}: {e}", path.display())))?;
    Waveform::new(samples, SAMPLE_RATE)
}

/// Inverse of [`read_wav`]; samples are clamped to the 16-bit range.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = std::io::Cursor::new(Vec::new());
    {
        let mut writer =
            hound::WavWriter::new(&mut cursor, spec).map_err(|e| Error::UnsupportedFormat(e.to_string()))?;
        for s in w.samples() {
            let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            writer.write_sample(v).map_err(|e| Error::UnsupportedFormat(e.to_string()))?;
        }
        writer.finalize().map_err(|e| Error::UnsupportedFormat(e.to_string()))?;
    }
    write_atomic(path, &cursor.into_inner())
}

// ---------------------------------------------------------- feature files

/// Contents of an FTR1 file before any semantic interpretation.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFile {
    pub kind: FeatureKind,
    pub frame_rate: f64,
    pub frames: RealMatrix,
}

impl FeatureFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (n, d) = self.frames.shape();
        if let Some(fd) = self.kind.fixed_dim() {
            if fd != d {
                return Err(Error::Schema(format!("{} requires {fd} dims, got {d}", self.kind.name())));
            }
        }
        if !(self.frame_rate > 0.0) {
            return Err(Error::Schema(format!("frame rate must be positive, got {}", self.frame_rate)));
        }
        let mut out = Vec::with_capacity(FEATURE_HEADER + 4 * n * d);
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&u32_len(n)?.to_le_bytes());
        out.extend_from_slice(&u32_len(d)?.to_le_bytes());
        out.extend_from_slice(&(self.frame_rate as f32).to_le_bytes());
        out.extend_from_slice(&self.kind.code().to_le_bytes());
        for v in self.frames.as_slice() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4)?;
        if magic != FEATURE_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {magic:?}, expected FTR1"),
            });
        }
        let n = r.u32()? as usize;
        let d = r.u32()? as usize;
        let rate_at = r.pos;
        let rate = f64::from(r.f32()?);
        let kind_at = r.pos;
        let code = r.u32()?;
        let kind = FeatureKind::from_code(code).ok_or_else(|| Error::Format {
            offset: kind_at as u64,
            message: format!("unknown kind code {code}"),
        })?;
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::Format {
                offset: rate_at as u64,
                message: format!("frame rate must be positive, got {rate}"),
            });
        }
        if let Some(fd) = kind.fixed_dim() {
            if fd != d {
                return Err(Error::Format {
                    offset: 8,
                    message: format!("kind {} requires dim {fd}, header says {d}", kind.name()),
                });
            }
        }
        if d == 0 {
            return Err(Error::Format {
                offset: 8,
                message: "dim is zero".into(),
            });
        }
        let body = n.checked_mul(d).and_then(|v| v.checked_mul(4)).ok_or_else(|| Error::Format {
            offset: 4,
            message: "frame count times dim overflows".into(),
        })?;
        let have = bytes.len() - FEATURE_HEADER;
        if have != body {
            return Err(Error::Format {
                offset: (FEATURE_HEADER + have.min(body)) as u64,
                message: format!("body has {have} bytes, header implies {body}"),
            });
        }
        let data = r.f32s(n * d)?;
        Ok(Self {
            kind,
            frame_rate: rate,
            frames: RealMatrix::new(n, d, data)?,
        })
    }
}

fn u32_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Schema(format!("{n} does not fit a u32 field")))
}

pub fn write_feature_file(path: &Path, f: &FeatureFile) -> Result<()> {
    write_atomic(path, &f.to_bytes()?)
}

pub fn read_feature_file(path: &Path) -> Result<FeatureFile> {
    FeatureFile::from_bytes(&read_bytes(path)?).map_err(|e| at_path(path, e))
}

fn at_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    }
}

pub fn write_features(path: &Path, z: &FeatureSequence) -> Result<()> {
    write_feature_file(
        path,
        &FeatureFile {
            kind: z.kind(),
            frame_rate: z.frame_rate(),
            frames: z.frames().clone(),
        },
    )
}

pub fn read_features(path: &Path) -> Result<FeatureSequence> {
    let f = read_feature_file(path)?;
    FeatureSequence::new(f.frames, f.frame_rate, f.kind)
}

/// Trajectories are stored as 6-dim external feature files at 50 Hz.
pub fn write_trajectory(path: &Path, a: &ArticulatoryTrajectory) -> Result<()> {
    write_feature_file(
        path,
        &FeatureFile {
            kind: FeatureKind::External,
            frame_rate: FRAME_RATE,
            frames: a.frames().clone(),
        },
    )
}

pub fn read_trajectory(path: &Path) -> Result<ArticulatoryTrajectory> {
    let f = read_feature_file(path)?;
    if f.frames.cols() != N_PARAMS || f.frame_rate != FRAME_RATE {
        return Err(Error::Schema(format!(
            "{}: trajectory needs {N_PARAMS} dims at {FRAME_RATE} Hz, got {} at {}",
            path.display(),
            f.frames.cols(),
            f.frame_rate
        )));
    }
    ArticulatoryTrajectory::new(f.frames)
}

/// Source tracks are stored as 2-dim (PP, PC) external feature files.
pub fn write_source(path: &Path, s: &SourceTrack) -> Result<()> {
    write_feature_file(
        path,
        &FeatureFile {
            kind: FeatureKind::External,
            frame_rate: FRAME_RATE,
            frames: s.frames().clone(),
        },
    )
}

pub fn read_source(path: &Path) -> Result<SourceTrack> {
    let f = read_feature_file(path)?;
    if f.frames.cols() != 2 || f.frame_rate != FRAME_RATE {
        return Err(Error::Schema(format!(
            "{}: source track needs 2 dims at {FRAME_RATE} Hz",
            path.display()
        )));
    }
    // f32 storage can nudge PC just past its bounds.
    let mut frames = f.frames;
    for r in 0..frames.rows() {
        let pc = frames.get(r, 1).clamp(0.0, 1.0);
        frames.set(r, 1, pc);
    }
    SourceTrack::new(frames)
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.bytes.len() as u64,
                message: format!("truncated: needed {n} bytes at offset {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Format {
            offset: self.pos as u64,
            message: "length overflow".into(),
        })?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect())
    }
}

// ------------------------------------------------------------ checkpoints

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointSchema {
    InverseModel,
    SynthesizerNet,
    GpcaModel,
    FrozenEncoder,
    Probe,
}

impl CheckpointSchema {
    pub fn name(self) -> &'static str {
        match self {
            CheckpointSchema::InverseModel => "inverse_model",
            CheckpointSchema::SynthesizerNet => "synthesizer_net",
            CheckpointSchema::GpcaModel => "gpca_model",
            CheckpointSchema::FrozenEncoder => "frozen_encoder",
            CheckpointSchema::Probe => "probe",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        use CheckpointSchema::*;
        [InverseModel, SynthesizerNet, GpcaModel, FrozenEncoder, Probe]
            .into_iter()
            .find(|c| c.name() == s)
    }
}

/// Named f32 tensors with a schema tag and free-form metadata.
///
/// Layout: `CKP1`, u32 metadata length, UTF-8 metadata, body. Metadata
/// lines are tab-separated: `schema NAME`, `meta KEY VALUE`, and
/// `tensor NAME ROWS COLS OFFSET` with OFFSET in bytes from the body start.
/// For most schemas the body is the tensors back to back. A frozen encoder
/// body is a sequence of layer records (u32 in_dim, u32 out_dim, u32
/// window, u8 nonlinearity, weight, bias) and its manifest points into them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub schema: CheckpointSchema,
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, RealMatrix)>,
}

impl Checkpoint {
    pub fn new(schema: CheckpointSchema) -> Self {
        Self {
            schema,
            meta: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.meta.push((key.to_string(), value.into()));
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require_meta(&self, key: &str) -> Result<&str> {
        self.meta(key)
            .ok_or_else(|| Error::Schema(format!("{} checkpoint lacks metadata {key:?}", self.schema.name())))
    }

    pub fn push(&mut self, name: impl Into<String>, m: RealMatrix) {
        self.tensors.push((name.into(), m));
    }

    pub fn tensor(&self, name: &str) -> Result<&RealMatrix> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Schema(format!("{} checkpoint lacks tensor {name:?}", self.schema.name())))
    }

    fn check_schema(&self, want: CheckpointSchema) -> Result<()> {
        if self.schema != want {
            return Err(Error::Schema(format!(
                "checkpoint holds {}, expected {}",
                self.schema.name(),
                want.name()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut body = Vec::new();
        let mut offsets = Vec::with_capacity(self.tensors.len());
        if self.schema == CheckpointSchema::FrozenEncoder {
            let n_layers: usize = self
                .require_meta("layers")?
                .parse()
                .map_err(|_| Error::Schema("layers metadata is not an integer".into()))?;
            if self.tensors.len() != 2 * n_layers {
                return Err(Error::Schema("encoder tensors must be weight/bias per layer".into()));
            }
            for l in 0..n_layers {
                let w = self.tensor(&format!("layer{l}.weight"))?;
                let b = self.tensor(&format!("layer{l}.bias"))?;
                let window: u32 = self
                    .require_meta(&format!("layer{l}.window"))?
                    .parse()
                    .map_err(|_| Error::Schema(format!("layer {l}: window is not an integer")))?;
                let code: u8 = self
                    .require_meta(&format!("layer{l}.nonlinearity"))?
                    .parse()
                    .map_err(|_| Error::Schema(format!("layer {l}: nonlinearity is not a code")))?;
                let in_dim = w.rows() / window.max(1) as usize;
                body.extend_from_slice(&u32_len(in_dim)?.to_le_bytes());
                body.extend_from_slice(&u32_len(w.cols())?.to_le_bytes());
                body.extend_from_slice(&window.to_le_bytes());
                body.push(code);
                offsets.push(body.len());
                push_f32s(&mut body, w);
                offsets.push(body.len());
                push_f32s(&mut body, b);
            }
            // Manifest order must follow tensor order.
            let order: Vec<String> = (0..n_layers)
                .flat_map(|l| [format!("layer{l}.weight"), format!("layer{l}.bias")])
                .collect();
            if self.tensors.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>() != order {
                return Err(Error::Schema("encoder tensors out of layer order".into()));
            }
        } else {
            for (_, m) in &self.tensors {
                offsets.push(body.len());
                push_f32s(&mut body, m);
            }
        }
        let mut meta = format!("schema\t{}\n", self.schema.name());
        for (k, v) in &self.meta {
            if k.contains(['\t', '\n']) || v.contains(['\t', '\n']) {
                return Err(Error::Schema(format!("metadata {k:?} contains a tab or newline")));
            }
            let _ = writeln!(meta, "meta\t{k}\t{v}");
        }
        for ((name, m), off) in self.tensors.iter().zip(&offsets) {
            let _ = writeln!(meta, "tensor\t{name}\t{}\t{}\t{off}", m.rows(), m.cols());
        }
        let mut out = Vec::with_capacity(8 + meta.len() + body.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&u32_len(meta.len())?.to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {magic:?}, expected CKP1"),
            });
        }
        let meta_len = r.u32()? as usize;
        let meta_bytes = r.take(meta_len)?;
        let body_start = r.pos;
        let body = &bytes[body_start..];
        let text = std::str::from_utf8(meta_bytes).map_err(|e| Error::Format {
            offset: (8 + e.valid_up_to()) as u64,
            message: "metadata is not UTF-8".into(),
        })?;
        let mut schema = None;
        let mut meta = Vec::new();
        let mut manifest: Vec<(String, usize, usize, usize)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let err = |m: String| Error::Parse {
                line: i + 1,
                message: format!("checkpoint metadata: {m}"),
            };
            let f: Vec<&str> = line.split('\t').collect();
            match f.as_slice() {
                ["schema", s] => {
                    schema = Some(CheckpointSchema::parse(s).ok_or_else(|| err(format!("unknown schema {s:?}")))?);
                }
                ["meta", k, v] => meta.push((k.to_string(), v.to_string())),
                ["tensor", name, rows, cols, off] => {
                    let num = |s: &str| s.parse::<usize>().map_err(|_| err(format!("bad number {s:?}")));
                    manifest.push((name.to_string(), num(rows)?, num(cols)?, num(off)?));
                }
                _ => return Err(err(format!("unrecognized line {line:?}"))),
            }
        }
        let schema = schema.ok_or_else(|| Error::Format {
            offset: 8,
            message: "metadata lacks a schema line".into(),
        })?;
        let mut spans: Vec<(usize, usize, &str)> = Vec::new();
        let mut tensors = Vec::with_capacity(manifest.len());
        for (name, rows, cols, off) in &manifest {
            let len = rows
                .checked_mul(*cols)
                .and_then(|v| v.checked_mul(4))
                .ok_or_else(|| Error::Format {
                    offset: body_start as u64,
                    message: format!("tensor {name}: size overflows"),
                })?;
            let end = off.checked_add(len).filter(|e| *e <= body.len()).ok_or_else(|| Error::Format {
                offset: (body_start + off) as u64,
                message: format!("tensor {name} runs past the end of the file"),
            })?;
            spans.push((*off, end, name));
            let data = ByteReader::new(&body[*off..end]).f32s(rows * cols)?;
            tensors.push((name.clone(), RealMatrix::new(*rows, *cols, data)?));
        }
        spans.sort();
        for w in spans.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Error::Format {
                    offset: (body_start + w[1].0) as u64,
                    message: format!("tensors {} and {} overlap", w[0].2, w[1].2),
                });
            }
        }
        let ck = Self { schema, meta, tensors };
        if schema == CheckpointSchema::FrozenEncoder {
            verify_encoder_records(&ck, body, body_start)?;
        }
        Ok(ck)
    }
}

fn push_f32s(out: &mut Vec<u8>, m: &RealMatrix) {
    for v in m.as_slice() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

/// Walk the layer records and check each against the manifest and metadata.
fn verify_encoder_records(ck: &Checkpoint, body: &[u8], body_start: usize) -> Result<()> {
    let n_layers: usize = ck
        .require_meta("layers")?
        .parse()
        .map_err(|_| Error::Schema("layers metadata is not an integer".into()))?;
    let mut r = ByteReader::new(body);
    for l in 0..n_layers {
        let at = (body_start + r.pos) as u64;
        let bad = |m: String| Error::Format {
            offset: at,
            message: format!("encoder layer {l}: {m}"),
        };
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let window = r.u32()? as usize;
        let code = r.u8()?;
        let w = ck.tensor(&format!("layer{l}.weight")).map_err(|e| bad(e.to_string()))?;
        let b = ck.tensor(&format!("layer{l}.bias")).map_err(|e| bad(e.to_string()))?;
        if w.shape() != (window * in_dim, out_dim) {
            return Err(bad(format!(
                "record declares {}x{} weights, manifest has {:?}",
                window * in_dim,
                out_dim,
                w.shape()
            )));
        }
        if b.shape() != (1, out_dim) {
            return Err(bad(format!("record declares 1x{out_dim} bias, manifest has {:?}", b.shape())));
        }
        if ck.meta(&format!("layer{l}.window")) != Some(window.to_string().as_str())
            || ck.meta(&format!("layer{l}.nonlinearity")) != Some(code.to_string().as_str())
        {
            return Err(bad("record disagrees with metadata".into()));
        }
        r.take(4 * (w.len() + b.len())).map_err(|_| bad("truncated tensors".into()))?;
    }
    if r.pos != body.len() {
        return Err(Error::Format {
            offset: (body_start + r.pos) as u64,
            message: "trailing bytes after the last encoder layer".into(),
        });
    }
    Ok(())
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_atomic(path, &ck.to_bytes()?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&read_bytes(path)?).map_err(|e| at_path(path, e))
}

fn params_into(ck: &mut Checkpoint, params: &ParameterSet) {
    for (name, p) in params.iter() {
        ck.push(name.to_string(), p.value.clone());
    }
}

fn params_from(ck: &Checkpoint, skip: &[&str]) -> Result<ParameterSet> {
    let mut ps = ParameterSet::new();
    for (name, m) in &ck.tensors {
        if !skip.contains(&name.as_str()) {
            ps.insert(name.clone(), m.clone())?;
        }
    }
    Ok(ps)
}

fn row(v: &[f64]) -> Result<RealMatrix> {
    RealMatrix::row_vector(v)
}

const INPUT_MEAN: &str = "input.mean";
const INPUT_STD: &str = "input.std";

/// Inverse model with its input statistics and free-form metadata.
pub fn inverse_model_checkpoint(m: &InverseModel) -> Result<Checkpoint> {
    let mut ck = Checkpoint::new(CheckpointSchema::InverseModel)
        .with_meta("hidden", m.hidden().to_string())
        .with_meta("layers", m.layers().to_string());
    params_into(&mut ck, m.params());
    ck.push(INPUT_MEAN, row(m.input_mean())?);
    ck.push(INPUT_STD, row(m.input_std())?);
    Ok(ck)
}

pub fn inverse_model_from_checkpoint(ck: &Checkpoint) -> Result<InverseModel> {
    ck.check_schema(CheckpointSchema::InverseModel)?;
    let params = params_from(ck, &[INPUT_MEAN, INPUT_STD])?;
    InverseModel::from_parts(
        params,
        ck.tensor(INPUT_MEAN)?.as_slice().to_vec(),
        ck.tensor(INPUT_STD)?.as_slice().to_vec(),
    )
}

pub fn synthesizer_checkpoint(net: &SynthesizerNet) -> Result<Checkpoint> {
    let mut ck = Checkpoint::new(CheckpointSchema::SynthesizerNet).with_meta("layers", net.layers().to_string());
    params_into(&mut ck, net.params());
    ck.push(INPUT_MEAN, row(net.input_mean())?);
    ck.push(INPUT_STD, row(net.input_std())?);
    Ok(ck)
}

pub fn synthesizer_from_checkpoint(ck: &Checkpoint) -> Result<SynthesizerNet> {
    ck.check_schema(CheckpointSchema::SynthesizerNet)?;
    let params = params_from(ck, &[INPUT_MEAN, INPUT_STD])?;
    SynthesizerNet::from_parts(
        params,
        ck.tensor(INPUT_MEAN)?.as_slice().to_vec(),
        ck.tensor(INPUT_STD)?.as_slice().to_vec(),
    )
}

pub fn gpca_checkpoint(m: &GuidedPcaModel) -> Result<Checkpoint> {
    let params: Vec<&str> = m.stages.iter().map(|s| s.parameter.as_str()).collect();
    let mut ck = Checkpoint::new(CheckpointSchema::GpcaModel)
        .with_meta("channels", m.channels.join(","))
        .with_meta("parameters", params.join(","));
    ck.push("means", row(&m.means)?);
    for (k, s) in m.stages.iter().enumerate() {
        ck.push(format!("stage{k}.extraction"), row(&s.extraction)?);
        ck.push(format!("stage{k}.regression"), row(&s.regression)?);
        ck.push(format!("stage{k}.std"), RealMatrix::scalar(s.std));
    }
    Ok(ck)
}

pub fn gpca_from_checkpoint(ck: &Checkpoint) -> Result<GuidedPcaModel> {
    ck.check_schema(CheckpointSchema::GpcaModel)?;
    let channels: Vec<String> = ck.require_meta("channels")?.split(',').map(str::to_string).collect();
    let c = channels.len();
    let means = ck.tensor("means")?.as_slice().to_vec();
    let vec_c = |name: &str| -> Result<Vec<f64>> {
        let t = ck.tensor(name)?;
        if t.len() != c {
            return Err(Error::Schema(format!("{name} has {} entries, expected {c}", t.len())));
        }
        Ok(t.as_slice().to_vec())
    };
    if means.len() != c {
        return Err(Error::Schema(format!("means has {} entries, expected {c}", means.len())));
    }
    let stages = ck
        .require_meta("parameters")?
        .split(',')
        .enumerate()
        .map(|(k, p)| {
            Ok(FittedStage {
                parameter: p.to_string(),
                extraction: vec_c(&format!("stage{k}.extraction"))?,
                regression: vec_c(&format!("stage{k}.regression"))?,
                std: ck.tensor(&format!("stage{k}.std"))?.item()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GuidedPcaModel {
        channels,
        means,
        stages,
    })
}

pub fn encoder_checkpoint(enc: &FrozenEncoder) -> Result<Checkpoint> {
    let mut ck = Checkpoint::new(CheckpointSchema::FrozenEncoder).with_meta("layers", enc.layers().len().to_string());
    for (l, layer) in enc.layers().iter().enumerate() {
        let code = nonlinearity_code(layer.nonlinearity)
            .ok_or_else(|| Error::Schema(format!("layer {l}: nonlinearity has no file code")))?;
        ck = ck
            .with_meta(&format!("layer{l}.window"), layer.window.to_string())
            .with_meta(&format!("layer{l}.nonlinearity"), code.to_string());
        ck.push(format!("layer{l}.weight"), layer.weight.clone());
        ck.push(format!("layer{l}.bias"), layer.bias.clone());
    }
    Ok(ck)
}

pub fn encoder_from_checkpoint(ck: &Checkpoint) -> Result<FrozenEncoder> {
    ck.check_schema(CheckpointSchema::FrozenEncoder)?;
    let n: usize = ck
        .require_meta("layers")?
        .parse()
        .map_err(|_| Error::Schema("layers metadata is not an integer".into()))?;
    let layers = (0..n)
        .map(|l| {
            let window: usize = ck
                .require_meta(&format!("layer{l}.window"))?
                .parse()
                .map_err(|_| Error::Schema(format!("layer {l}: bad window")))?;
            let code: u8 = ck
                .require_meta(&format!("layer{l}.nonlinearity"))?
                .parse()
                .map_err(|_| Error::Schema(format!("layer {l}: bad nonlinearity")))?;
            let nonlinearity = nonlinearity_from_code(code)
                .ok_or_else(|| Error::Schema(format!("encoder layer {l}: unknown nonlinearity code {code}")))?;
            let weight = ck.tensor(&format!("layer{l}.weight"))?.clone();
            let bias = ck.tensor(&format!("layer{l}.bias"))?.clone();
            if window == 0 || weight.rows() % window != 0 {
                return Err(Error::Schema(format!(
                    "encoder layer {l}: {} weight rows not divisible by window {window}",
                    weight.rows()
                )));
            }
            Ok(EncoderLayer {
                in_dim: weight.rows() / window,
                out_dim: weight.cols(),
                window,
                nonlinearity,
                weight,
                bias,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    FrozenEncoder::new(layers)
}

/// Read a frozen encoder checkpoint and validate its layer chain.
pub fn load_frozen_encoder(path: &Path) -> Result<FrozenEncoder> {
    let ck = read_checkpoint(path)?;
    encoder_from_checkpoint(&ck).map_err(|e| match e {
        Error::Schema(m) => Error::Format {
            offset: 0,
            message: format!("{}: {m}", path.display()),
        },
        other => other,
    })
}

pub fn probe_checkpoint(p: &ProbeModel, classes: &[String]) -> Result<Checkpoint> {
    if classes.len() != p.n_classes() {
        return Err(Error::Schema(format!(
            "{} class names for {} classes",
            classes.len(),
            p.n_classes()
        )));
    }
    let mut ck = Checkpoint::new(CheckpointSchema::Probe).with_meta("classes", classes.join(","));
    ck.push("weight", p.weight.clone());
    ck.push("bias", row(&p.bias)?);
    Ok(ck)
}

pub fn probe_from_checkpoint(ck: &Checkpoint) -> Result<(ProbeModel, Vec<String>)> {
    ck.check_schema(CheckpointSchema::Probe)?;
    let classes: Vec<String> = ck.require_meta("classes")?.split(',').map(str::to_string).collect();
    let weight = ck.tensor("weight")?.clone();
    let bias = ck.tensor("bias")?.as_slice().to_vec();
    if weight.cols() != bias.len() || bias.len() != classes.len() {
        return Err(Error::Schema("probe weight, bias and class list disagree".into()));
    }
    Ok((
        ProbeModel {
            weight,
            bias,
            log: Vec::new(),
        },
        classes,
    ))
}

// ------------------------------------------------------------ text formats

/// One aligned phone, in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentSegment {
    pub start_s: f64,
    pub end_s: f64,
    pub label: String,
}

impl AlignmentSegment {
    /// Nearest 50 Hz frame boundaries.
    pub fn to_frames(&self) -> LabeledSpan {
        LabeledSpan {
            start: (self.start_s * FRAME_RATE).round() as usize,
            end: (self.end_s * FRAME_RATE).round() as usize,
            label: self.label.clone(),
        }
    }

    pub fn from_frames(s: &LabeledSpan) -> Self {
        Self {
            start_s: s.start as f64 / FRAME_RATE,
            end_s: s.end as f64 / FRAME_RATE,
            label: s.label.clone(),
        }
    }
}

/// `start_s<TAB>end_s<TAB>label` lines; segments must be ordered and
/// non-overlapping. Blank lines and `#` comments are skipped.
pub fn parse_alignments(text: &str, inventory: Option<&PhoneInventory>) -> Result<Vec<AlignmentSegment>> {
    let mut out: Vec<AlignmentSegment> = Vec::new();
    let mut prev_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |m: String| Error::Parse { line: line_no, message: m };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(err(format!("expected start, end, label; got {} fields", f.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| err(format!("bad time {s:?}")))
        };
        let (start_s, end_s) = (num(f[0])?, num(f[1])?);
        if start_s >= end_s {
            return Err(err(format!("start {start_s} is not before end {end_s}")));
        }
        let label = f[2].trim().to_string();
        if label.is_empty() {
            return Err(err("empty label".into()));
        }
        if let Some(inv) = inventory {
            if inv.get(&label).is_none() {
                return Err(err(format!("unknown phone {label:?}")));
            }
        }
        if let Some(p) = out.last() {
            if start_s < p.end_s {
                return Err(err(format!(
                    "segment starting at {start_s} overlaps or precedes the segment on line {prev_line}"
                )));
            }
        }
        out.push(AlignmentSegment { start_s, end_s, label });
        prev_line = line_no;
    }
    Ok(out)
}

pub fn read_alignments(path: &Path, inventory: Option<&PhoneInventory>) -> Result<Vec<AlignmentSegment>> {
    parse_alignments(&read_text(path)?, inventory).map_err(|e| at_path(path, e))
}

pub fn alignments_to_text(segments: &[AlignmentSegment]) -> String {
    let mut s = String::new();
    for seg in segments {
        let _ = writeln!(s, "{}\t{}\t{}", seg.start_s, seg.end_s, seg.label);
    }
    s
}

pub fn write_alignments(path: &Path, segments: &[AlignmentSegment]) -> Result<()> {
    write_atomic(path, alignments_to_text(segments).as_bytes())
}

/// `#rate=R` pragma, a header of channel names, then one row of numbers
/// per sample, all tab-separated. Other `#` lines are comments.
pub fn parse_ema(text: &str) -> Result<EmaRecording> {
    let mut rate = None;
    let mut channels: Option<Vec<String>> = None;
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        let err = |m: String| Error::Parse { line: line_no, message: m };
        if let Some(v) = line.strip_prefix("#rate=") {
            rate = Some(
                v.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|r| *r > 0.0 && r.is_finite())
                    .ok_or_else(|| err(format!("bad rate {v:?}")))?,
            );
            continue;
        }
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        match &channels {
            None => channels = Some(line.split('\t').map(|s| s.trim().to_string()).collect()),
            Some(ch) => {
                let vals: Vec<&str> = line.split('\t').collect();
                if vals.len() != ch.len() {
                    return Err(err(format!("{} values for {} channels", vals.len(), ch.len())));
                }
                for v in vals {
                    data.push(
                        v.trim()
                            .parse::<f64>()
                            .ok()
                            .filter(|x| x.is_finite())
                            .ok_or_else(|| err(format!("bad value {v:?}")))?,
                    );
                }
                rows += 1;
            }
        }
    }
    let rate = rate.ok_or_else(|| Error::Parse {
        line: 1,
        message: "missing #rate= pragma".into(),
    })?;
    let channels = channels.ok_or_else(|| Error::Parse {
        line: 1,
        message: "missing channel header".into(),
    })?;
    let c = channels.len();
    EmaRecording::new(channels, RealMatrix::new(rows, c, data)?, rate)
}

pub fn read_ema(path: &Path) -> Result<EmaRecording> {
    parse_ema(&read_text(path)?).map_err(|e| at_path(path, e))
}

pub fn ema_to_text(e: &EmaRecording) -> String {
    let mut s = format!("#rate={}\n{}\n", e.rate(), e.channels().join("\t"));
    for r in 0..e.len() {
        let row: Vec<String> = e.data().row(r).iter().map(f64::to_string).collect();
        s.push_str(&row.join("\t"));
        s.push('\n');
    }
    s
}

pub fn write_ema(path: &Path, e: &EmaRecording) -> Result<()> {
    write_atomic(path, ema_to_text(e).as_bytes())
}

/// Whitespace-delimited words of a UTF-8 transcript.
pub fn read_transcript(path: &Path) -> Result<Vec<String>> {
    Ok(read_text(path)?.split_whitespace().map(str::to_string).collect())
}

// --------------------------------------------------------------- manifests

/// Per-utterance files a manifest line may reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ManifestField {
    Wav,
    Features,
    Trajectory,
    Source,
    Alignment,
    Transcript,
    /// Raw EMA recording, for fitting or applying guided PCA.
    Ema,
}

impl ManifestField {
    pub const ALL: [ManifestField; 7] = [
        ManifestField::Wav,
        ManifestField::Features,
        ManifestField::Trajectory,
        ManifestField::Source,
        ManifestField::Alignment,
        ManifestField::Transcript,
        ManifestField::Ema,
    ];

    pub fn key(self) -> &'static str {
        match self {
            ManifestField::Wav => "wav",
            ManifestField::Features => "features",
            ManifestField::Trajectory => "trajectory",
            ManifestField::Source => "source",
            ManifestField::Alignment => "alignment",
            ManifestField::Transcript => "transcript",
            ManifestField::Ema => "ema",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.key() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub speaker: String,
    /// `train`, `valid` or `test` when the corpus carries a split.
    pub split: Option<String>,
    pub paths: Vec<(ManifestField, PathBuf)>,
}

impl ManifestEntry {
    pub fn path(&self, f: ManifestField) -> Option<&Path> {
        self.paths.iter().find(|(k, _)| *k == f).map(|(_, p)| p.as_path())
    }

    pub fn require(&self, f: ManifestField) -> Result<&Path> {
        self.path(f)
            .ok_or_else(|| Error::MissingItem(format!("{} has no {} file", self.id, f.key())))
    }
}

/// Lines `id<TAB>speaker<TAB>key=path...`; keys are `wav`, `features`,
/// `trajectory`, `source`, `alignment`, `transcript`, `ema` and `split`. Relative
/// paths resolve against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries: Vec<ManifestEntry> = Vec::new();
        let mut ids = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: String| Error::Parse { line: i + 1, message: m };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() < 2 || f[0].is_empty() || f[1].is_empty() {
                return Err(err("expected id and speaker".into()));
            }
            if !ids.insert(f[0].to_string()) {
                return Err(err(format!("duplicate utterance id {:?}", f[0])));
            }
            let mut entry = ManifestEntry {
                id: f[0].to_string(),
                speaker: f[1].to_string(),
                split: None,
                paths: Vec::new(),
            };
            for kv in &f[2..] {
                let (k, v) = kv.split_once('=').ok_or_else(|| err(format!("expected key=value, got {kv:?}")))?;
                if k == "split" {
                    if !matches!(v, "train" | "valid" | "test") {
                        return Err(err(format!("unknown split {v:?}")));
                    }
                    entry.split = Some(v.to_string());
                    continue;
                }
                let field = ManifestField::parse(k).ok_or_else(|| err(format!("unknown key {k:?}")))?;
                if entry.path(field).is_some() {
                    return Err(err(format!("key {k:?} given twice")));
                }
                entry.paths.push((field, base.join(v)));
            }
            entries.push(entry);
        }
        Ok(Self { entries })
    }

    /// Parse and check that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let m = Self::parse(&text, base).map_err(|e| at_path(path, e))?;
        for e in &m.entries {
            for (k, p) in &e.paths {
                if !p.is_file() {
                    return Err(Error::MissingItem(format!(
                        "{}: {} file {} does not exist",
                        e.id,
                        k.key(),
                        p.display()
                    )));
                }
            }
        }
        Ok(m)
    }

    /// Paths are written relative to `base` when they lie under it.
    pub fn to_text(&self, base: &Path) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&e.id);
            s.push('\t');
            s.push_str(&e.speaker);
            if let Some(sp) = &e.split {
                let _ = write!(s, "\tsplit={sp}");
            }
            for (k, p) in &e.paths {
                let rel = p.strip_prefix(base).unwrap_or(p);
                let _ = write!(s, "\t{}={}", k.key(), rel.display());
            }
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        write_atomic(path, self.to_text(base).as_bytes())
    }

    pub fn get(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn in_split<'a>(&'a self, split: &'a str) -> impl Iterator<Item = &'a ManifestEntry> + 'a {
        self.entries.iter().filter(move |e| e.split.as_deref() == Some(split))
    }
}

/// Write rows as comma-separated values after a header line.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_atomic(path, csv_text(header, rows).as_bytes())
}

pub fn csv_text(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}
