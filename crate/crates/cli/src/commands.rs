use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use babble_core::artic::{gpca_fit, resample_to_50hz, ArticulatoryTrajectory, EmaRecording, GuidedPcaSpec, PARAM_NAMES};
use babble_core::dsp::{
    cepstra_from_logmel, extract_source, mfcc39, mfcc_from_logmel, CepstralStats, FeatureKind, FeatureSequence,
    FRAME_RATE,
};
use babble_core::eval::{
    abx_score, build_abx_triplets, extract_vcv, pearson_per_param, probe_accuracy, tokens, train_probe, wer,
    TripletOptions, VcvItem,
};
use babble_core::graph::RealMatrix;
use babble_core::imitation::{train_inverse, FrozenEncoder, ImitationItem, LossSpace};
use babble_core::phone::PhoneInventory;
use babble_core::store::{
    csv_text, gpca_checkpoint, gpca_from_checkpoint, inverse_model_checkpoint, inverse_model_from_checkpoint,
    load_frozen_encoder, read_alignments, read_checkpoint, read_ema, read_features, read_source, read_trajectory,
    read_wav, synthesizer_checkpoint, synthesizer_from_checkpoint, write_alignments, write_atomic, write_checkpoint,
    write_features, write_source, write_trajectory, AlignmentSegment, CorpusManifest,
    ManifestEntry, ManifestField,
};
use babble_core::synth::{
    generate_corpus, train_synthesizer, AnalyticTractConfig, CorpusConfig, SynthFrames, Synthesizer,
};
use babble_core::Error;

use crate::config::{LossSpaceChoice, RunConfig, SynthChoice};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Write CSV to `out` or print it.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => Ok(write_atomic(p, text.as_bytes())?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn create_dir(d: &Path) -> Result<()> {
    std::fs::create_dir_all(d)
        .map_err(|e| CliError::runtime("io", format!("{}: {e}", d.display())))
}

pub fn extract_features(input: &Path, kind: FeatureKind, out: &Path) -> Result<()> {
    let w = read_wav(input)?;
    let z = match kind {
        FeatureKind::Mfcc39 => mfcc39(&w, None)?,
        FeatureKind::LogMel80 => {
            let spec = babble_core::dsp::stft_magnitude(&w)?;
            babble_core::dsp::mel_project(&spec)?.log()
        }
        FeatureKind::External => {
            return Err(CliError::usage("external features come from an outside encoder, not from audio"))
        }
    };
    write_features(out, &z)?;
    Ok(())
}

pub fn extract_source_cmd(input: &Path, out: &Path) -> Result<()> {
    let w = read_wav(input)?;
    write_source(out, &extract_source(&w)?)?;
    Ok(())
}

fn to_50hz(e: EmaRecording) -> babble_core::Result<EmaRecording> {
    if e.rate() == FRAME_RATE {
        Ok(e)
    } else {
        resample_to_50hz(&e)
    }
}

pub fn fit_gpca(manifest: &Path, spec: Option<&Path>, out: &Path) -> Result<()> {
    let spec = match spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::runtime("io", format!("{}: {e}", p.display())))?;
            GuidedPcaSpec::parse(&text)?
        }
        None => GuidedPcaSpec::default(),
    };
    let m = CorpusManifest::load(manifest)?;
    let parts = m
        .entries
        .iter()
        .map(|e| to_50hz(read_ema(e.require(ManifestField::Ema)?)?))
        .collect::<babble_core::Result<Vec<_>>>()?;
    let data = EmaRecording::concat(&parts)?;
    write_checkpoint(out, &gpca_checkpoint(&gpca_fit(&data, &spec)?)?)?;
    Ok(())
}

pub fn apply_gpca(ckpt: &Path, input: &Path, out: &Path) -> Result<()> {
    let model = gpca_from_checkpoint(&read_checkpoint(ckpt)?)?;
    let e = to_50hz(read_ema(input)?)?;
    write_trajectory(out, &model.encode(&e)?)?;
    Ok(())
}

pub fn gen_synthetic(cfg: &RunConfig, seed: u64, outdir: &Path) -> Result<()> {
    let corpus_cfg: CorpusConfig = cfg.corpus_config();
    let corpus = generate_corpus(&corpus_cfg, seed)?;
    let (_, valid, test) = cfg.splits;
    let split = corpus.split_fractions(seed, valid, test)?;
    let mut tag = vec![""; corpus.utterances.len()];
    for (name, idx) in [("train", &split.train), ("valid", &split.valid), ("test", &split.test)] {
        for &i in idx.iter() {
            tag[i] = name;
        }
    }
    for sub in ["features", "trajectory", "source", "alignment"] {
        create_dir(&outdir.join(sub))?;
    }
    let mut manifest = CorpusManifest::default();
    for (u, split) in corpus.utterances.iter().zip(tag) {
        let f = outdir.join("features").join(format!("{}.ftr", u.id));
        let t = outdir.join("trajectory").join(format!("{}.traj", u.id));
        let s = outdir.join("source").join(format!("{}.src", u.id));
        let a = outdir.join("alignment").join(format!("{}.tsv", u.id));
        write_features(&f, &u.mel.log())?;
        write_trajectory(&t, &u.trajectory)?;
        write_source(&s, &u.source)?;
        let segs: Vec<AlignmentSegment> = u.segments.iter().map(AlignmentSegment::from_frames).collect();
        write_alignments(&a, &segs)?;
        manifest.entries.push(ManifestEntry {
            id: u.id.clone(),
            speaker: u.speaker.clone(),
            split: Some(split.to_string()),
            paths: vec![
                (ManifestField::Features, f),
                (ManifestField::Trajectory, t),
                (ManifestField::Source, s),
                (ManifestField::Alignment, a),
            ],
        });
    }
    manifest.write(&outdir.join("manifest.tsv"))?;
    write_atomic(&outdir.join("inventory.tsv"), inventory_text(&corpus.inventory).as_bytes())?;
    Ok(())
}

fn inventory_text(inv: &PhoneInventory) -> String {
    let mut s = String::new();
    for p in inv.phones() {
        let _ = writeln!(s, "{}\t{}\t{}", p.label, p.place, p.manner);
    }
    s
}

/// Training and validation entries: the manifest's split tags when it has
/// them, otherwise everything trains and nothing validates.
fn train_valid(m: &CorpusManifest) -> (Vec<&ManifestEntry>, Vec<&ManifestEntry>) {
    if m.entries.iter().any(|e| e.split.is_some()) {
        (m.in_split("train").collect(), m.in_split("valid").collect())
    } else {
        (m.entries.iter().collect(), Vec::new())
    }
}

fn select<'a>(m: &'a CorpusManifest, split: Option<&str>) -> Vec<&'a ManifestEntry> {
    match split {
        Some(s) => m.entries.iter().filter(|e| e.split.as_deref() == Some(s)).collect(),
        None => m.entries.iter().collect(),
    }
}

pub fn train_synth(cfg: &RunConfig, manifest: &Path, out: &Path, log: Option<&Path>) -> Result<()> {
    let m = CorpusManifest::load(manifest)?;
    let (train, valid) = train_valid(&m);
    let frames = |entries: &[&ManifestEntry]| -> babble_core::Result<SynthFrames> {
        let mut seqs = Vec::new();
        for e in entries {
            let a = read_trajectory(e.require(ManifestField::Trajectory)?)?;
            let s = read_source(e.require(ManifestField::Source)?)?;
            let z = read_features(e.require(ManifestField::Features)?)?;
            if z.kind() != FeatureKind::LogMel80 {
                return Err(Error::Contract(format!("{}: synthesizer targets must be logmel80 features", e.id)));
            }
            seqs.push((a.into_frames(), s.frames().clone(), z.into_frames()));
        }
        SynthFrames::from_sequences(seqs.iter().map(|(a, s, z)| (a, s, z)))
    };
    let train_frames = frames(&train)?;
    let valid_frames = if valid.is_empty() { frames(&train)? } else { frames(&valid)? };
    let run = train_synthesizer(&train_frames, &valid_frames, &cfg.synth_train_config())?;
    write_checkpoint(out, &synthesizer_checkpoint(&run.net)?)?;
    let rows: Vec<Vec<String>> = run
        .log
        .iter()
        .map(|l| vec![l.epoch.to_string(), l.train_loss.to_string(), l.val_loss.to_string()])
        .collect();
    if let Some(p) = log {
        write_atomic(p, csv_text(&["epoch", "train_loss", "val_loss"], &rows).as_bytes())?;
    }
    Ok(())
}

fn load_synth(cfg: &RunConfig) -> Result<Synthesizer> {
    Ok(match &cfg.synth {
        SynthChoice::Analytic => Synthesizer::Analytic(AnalyticTractConfig::default()),
        SynthChoice::Net(p) => Synthesizer::Net(synthesizer_from_checkpoint(&read_checkpoint(p)?)?),
    })
}

/// How stored features become inverse-model input. Recorded in the model
/// checkpoint so that inference repeats it.
enum InputTransform {
    Identity,
    Mfcc(CepstralStats),
    Encoder(PathBuf, FrozenEncoder),
}

impl InputTransform {
    fn apply(&self, z: FeatureSequence) -> babble_core::Result<FeatureSequence> {
        match (self, z.kind()) {
            (InputTransform::Identity, _) => Ok(z),
            (InputTransform::Mfcc(stats), FeatureKind::LogMel80) => mfcc_from_logmel(z.frames(), stats),
            (InputTransform::Encoder(_, enc), FeatureKind::LogMel80) => {
                FeatureSequence::new(enc.forward(z.frames())?, z.frame_rate(), FeatureKind::External)
            }
            (_, kind) => Err(Error::Contract(format!(
                "input transform expects logmel80 features, got {}",
                kind.name()
            ))),
        }
    }

    fn record(&self, ck: babble_core::store::Checkpoint) -> babble_core::store::Checkpoint {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        match self {
            InputTransform::Identity => ck.with_meta("input_transform", "identity"),
            InputTransform::Mfcc(s) => ck
                .with_meta("input_transform", "mfcc")
                .with_meta("cepstral_mean", join(&s.mean))
                .with_meta("cepstral_std", join(&s.std)),
            InputTransform::Encoder(p, _) => ck
                .with_meta("input_transform", "encoder")
                .with_meta("encoder", p.display().to_string()),
        }
    }

    fn restore(ck: &babble_core::store::Checkpoint) -> babble_core::Result<Self> {
        let floats = |key: &str| -> babble_core::Result<Vec<f64>> {
            ck.require_meta(key)?
                .split(',')
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::Schema(format!("metadata {key}: {v:?} is not a number")))
                })
                .collect()
        };
        match ck.meta("input_transform").unwrap_or("identity") {
            "identity" => Ok(InputTransform::Identity),
            "mfcc" => {
                let s = CepstralStats {
                    mean: floats("cepstral_mean")?,
                    std: floats("cepstral_std")?,
                };
                s.validate()?;
                Ok(InputTransform::Mfcc(s))
            }
            "encoder" => {
                let p = PathBuf::from(ck.require_meta("encoder")?);
                let enc = load_frozen_encoder(&p)?;
                Ok(InputTransform::Encoder(p, enc))
            }
            other => Err(Error::Schema(format!("unknown input transform {other:?}"))),
        }
    }
}

fn load_items(entries: &[&ManifestEntry]) -> babble_core::Result<Vec<ImitationItem>> {
    entries
        .iter()
        .map(|e| {
            Ok(ImitationItem {
                id: e.id.clone(),
                speaker: e.speaker.clone(),
                features: read_features(e.require(ManifestField::Features)?)?,
                source: read_source(e.require(ManifestField::Source)?)?,
                truth: None,
            })
        })
        .collect()
}

pub fn train_imitation(cfg: &RunConfig, manifest: &Path, out: &Path, log: &Path) -> Result<()> {
    let synth = load_synth(cfg)?;
    let encoder = match &cfg.loss_space {
        LossSpaceChoice::Encoder(p) => Some((p.clone(), load_frozen_encoder(p)?)),
        _ => None,
    };
    let m = CorpusManifest::load(manifest)?;
    let (train_e, valid_e) = train_valid(&m);
    let mut train = load_items(&train_e)?;
    let mut valid = load_items(&valid_e)?;
    let logmel_input = train.iter().all(|i| i.features.kind() == FeatureKind::LogMel80);
    let space = match (&cfg.loss_space, &encoder) {
        (LossSpaceChoice::Mfcc, _) => {
            if !logmel_input {
                return Err(Error::Contract("the mfcc loss space fits its statistics on logmel80 features".into()).into());
            }
            let cep = train
                .iter()
                .map(|i| cepstra_from_logmel(i.features.frames()))
                .collect::<babble_core::Result<Vec<_>>>()?;
            LossSpace::Mfcc(CepstralStats::fit(&cep)?)
        }
        (LossSpaceChoice::Encoder(_), Some((_, enc))) => LossSpace::Encoder(enc.clone()),
        _ => LossSpace::LogMel,
    };
    let transform = match (&space, cfg.decouple_input || !logmel_input) {
        (LossSpace::Mfcc(s), false) => InputTransform::Mfcc(s.clone()),
        (LossSpace::Encoder(e), false) => {
            let p = encoder.as_ref().map(|(p, _)| p.clone()).unwrap_or_default();
            InputTransform::Encoder(p, e.clone())
        }
        _ => InputTransform::Identity,
    };
    for item in train.iter_mut().chain(valid.iter_mut()) {
        let z = std::mem::replace(&mut item.features, FeatureSequence::new(RealMatrix::zeros(1, 1), FRAME_RATE, FeatureKind::External)?);
        item.features = transform.apply(z)?;
    }
    let run = train_inverse(&train, &valid, &synth, &space, &cfg.train_config())?;
    let ck = transform
        .record(inverse_model_checkpoint(&run.model)?)
        .with_meta("loss_space", space.name())
        .with_meta("converged", run.converged.to_string());
    write_checkpoint(out, &ck)?;
    let rows: Vec<Vec<String>> = run
        .log
        .iter()
        .map(|l| {
            vec![
                l.epoch.to_string(),
                l.train_loss.to_string(),
                l.val_loss.map(|v| v.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    write_atomic(log, csv_text(&["epoch", "train_loss", "val_loss"], &rows).as_bytes())?;
    let last = run.log.last();
    let summary = vec![vec![
        run.log.len().to_string(),
        last.map(|l| l.train_loss.to_string()).unwrap_or_default(),
        last.and_then(|l| l.val_loss).map(|v| v.to_string()).unwrap_or_default(),
        run.converged.to_string(),
    ]];
    print!("{}", csv_text(&["epochs", "train_loss", "val_loss", "converged"], &summary));
    Ok(())
}

fn trajectory_csv(a: &ArticulatoryTrajectory) -> String {
    let mut header = vec!["frame", "time_s"];
    header.extend(PARAM_NAMES);
    let f = a.frames();
    let rows: Vec<Vec<String>> = (0..f.rows())
        .map(|t| {
            let mut r = vec![t.to_string(), (t as f64 / FRAME_RATE).to_string()];
            r.extend(f.row(t).iter().map(|v| v.to_string()));
            r
        })
        .collect();
    csv_text(&header, &rows)
}

pub fn infer(ckpt: &Path, manifest: &Path, outdir: &Path, split: Option<&str>) -> Result<()> {
    let ck = read_checkpoint(ckpt)?;
    let model = inverse_model_from_checkpoint(&ck)?;
    let transform = InputTransform::restore(&ck)?;
    let m = CorpusManifest::load(manifest)?;
    create_dir(outdir)?;
    for e in select(&m, split) {
        let z = transform.apply(read_features(e.require(ManifestField::Features)?)?)?;
        let a = model.infer(&z)?;
        write_trajectory(&outdir.join(format!("{}.traj", e.id)), &a)?;
        write_atomic(&outdir.join(format!("{}.csv", e.id)), trajectory_csv(&a).as_bytes())?;
    }
    Ok(())
}

fn list_trajectories(dir: &Path) -> Result<Vec<String>> {
    let rd = std::fs::read_dir(dir).map_err(|e| CliError::runtime("io", format!("{}: {e}", dir.display())))?;
    let mut names = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| CliError::runtime("io", format!("{}: {e}", dir.display())))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".traj") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

pub fn eval_corr(pred: &Path, truth: &Path, out: Option<&Path>) -> Result<()> {
    let names = list_trajectories(pred)?;
    if names.is_empty() {
        return Err(Error::EmptySequence(format!("no .traj files in {}", pred.display())).into());
    }
    let mut p = Vec::new();
    let mut t = Vec::new();
    for n in &names {
        let tp = truth.join(n);
        if !tp.is_file() {
            return Err(Error::MissingItem(format!("{} has no reference trajectory in {}", n, truth.display())).into());
        }
        p.push(read_trajectory(&pred.join(n))?);
        t.push(read_trajectory(&tp)?);
    }
    let r = pearson_per_param(&p, &t)?;
    let mut rows: Vec<Vec<String>> = PARAM_NAMES
        .iter()
        .zip(r.per_param)
        .map(|(n, v)| vec![n.to_string(), v.to_string()])
        .collect();
    rows.push(vec!["mean".into(), r.mean.to_string()]);
    emit(out, &csv_text(&["parameter", "r"], &rows))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Repr {
    /// Stored acoustic features.
    Features,
    /// Trajectories written by `infer`.
    Pred,
    /// Reference trajectories listed in the manifest.
    Truth,
}

fn load_repr(e: &ManifestEntry, repr: Repr, pred: Option<&Path>) -> Result<RealMatrix> {
    Ok(match repr {
        Repr::Features => read_features(e.require(ManifestField::Features)?)?.into_frames(),
        Repr::Truth => read_trajectory(e.require(ManifestField::Trajectory)?)?.into_frames(),
        Repr::Pred => {
            let dir = pred.ok_or_else(|| CliError::usage("--repr pred needs --pred DIR"))?;
            let p = dir.join(format!("{}.traj", e.id));
            if !p.is_file() {
                return Err(Error::MissingItem(format!("{}: no predicted trajectory {}", e.id, p.display())).into());
            }
            read_trajectory(&p)?.into_frames()
        }
    })
}

fn load_inventory(path: Option<&Path>) -> Result<PhoneInventory> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::runtime("io", format!("{}: {e}", p.display())))?;
            Ok(PhoneInventory::parse(&text)?)
        }
        None => Ok(CorpusConfig::default().inventory()),
    }
}

pub struct AbxArgs<'a> {
    pub manifest: &'a Path,
    pub repr: Repr,
    pub pred: Option<&'a Path>,
    pub split: Option<&'a str>,
    pub inventory: Option<&'a Path>,
    pub within_speaker: bool,
    pub out: Option<&'a Path>,
}

pub fn eval_abx(cfg: &RunConfig, a: &AbxArgs) -> Result<()> {
    let inv = load_inventory(a.inventory)?;
    let m = CorpusManifest::load(a.manifest)?;
    let mut items: Vec<VcvItem> = Vec::new();
    let mut repr = Vec::new();
    for e in select(&m, a.split) {
        let segs: Vec<_> = read_alignments(e.require(ManifestField::Alignment)?, Some(&inv))?
            .iter()
            .map(AlignmentSegment::to_frames)
            .collect();
        let found = extract_vcv(&e.id, &e.speaker, &segs, &inv)?;
        if found.is_empty() {
            continue;
        }
        let full = load_repr(e, a.repr, a.pred)?;
        for it in found {
            repr.push(Some(it.slice(&full)?));
            items.push(it);
        }
    }
    let mode = if a.within_speaker {
        babble_core::eval::AbxMode::WithinSpeaker
    } else {
        cfg.abx_mode
    };
    let opts = TripletOptions {
        cap_per_contrast: cfg.abx_cap,
        seed: cfg.seed,
    };
    let set = build_abx_triplets(&items, mode, &opts);
    let report = abx_score(&items, &set.triplets, &repr)?;
    let mut rows: Vec<Vec<String>> = report
        .per_contrast
        .iter()
        .map(|c| {
            vec![
                mode.name().to_string(),
                format!("{}:{}", c.contrast.0, c.contrast.1),
                c.n.to_string(),
                c.ties.to_string(),
                c.score.to_string(),
            ]
        })
        .collect();
    rows.push(vec![
        mode.name().to_string(),
        "all".into(),
        report.n.to_string(),
        report.ties.to_string(),
        report.score.to_string(),
    ]);
    emit(a.out, &csv_text(&["mode", "contrast", "n", "ties", "score"], &rows))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ProbeTarget {
    Phone,
    Speaker,
}

pub struct ProbeArgs<'a> {
    pub manifest: &'a Path,
    pub target: ProbeTarget,
    pub repr: Repr,
    pub pred: Option<&'a Path>,
    pub out: Option<&'a Path>,
}

/// Frame-level probe. Trains on the manifest's training split and scores
/// on the test split (validation when there is no test split). Without
/// split tags every fifth utterance of each speaker is held out.
pub fn probe(cfg: &RunConfig, a: &ProbeArgs) -> Result<()> {
    let m = CorpusManifest::load(a.manifest)?;
    let tagged = m.entries.iter().any(|e| e.split.is_some());
    let test_tag = if m.in_split("test").next().is_some() { "test" } else { "valid" };
    let mut seen: std::collections::HashMap<String, usize> = Default::default();
    let mut held_out = |e: &ManifestEntry| -> bool {
        if tagged {
            e.split.as_deref() == Some(test_tag)
        } else {
            let k = seen.entry(e.speaker.clone()).or_default();
            *k += 1;
            (*k).is_multiple_of(5)
        }
    };
    let mut classes: Vec<String> = Vec::new();
    let mut sets: [(Vec<Vec<f64>>, Vec<usize>); 2] = Default::default();
    for e in &m.entries {
        let test = held_out(e);
        if tagged && !test && e.split.as_deref() != Some("train") {
            continue;
        }
        let x = load_repr(e, a.repr, a.pred)?;
        let labels: Vec<Option<String>> = match a.target {
            ProbeTarget::Speaker => vec![Some(e.speaker.clone()); x.rows()],
            ProbeTarget::Phone => {
                let mut l = vec![None; x.rows()];
                for s in read_alignments(e.require(ManifestField::Alignment)?, None)? {
                    let f = s.to_frames();
                    for slot in l.iter_mut().take(f.end).skip(f.start) {
                        *slot = Some(s.label.clone());
                    }
                }
                l
            }
        };
        push_frames(&mut sets[usize::from(test)], &mut classes, &x, &labels);
    }
    let [(train_x, train_y), (test_x, test_y)] = sets;
    if train_x.is_empty() || test_x.is_empty() {
        return Err(Error::EmptySequence("probe needs frames in both the training and held-out sets".into()).into());
    }
    let train_x = RealMatrix::from_rows(&train_x)?;
    let test_x = RealMatrix::from_rows(&test_x)?;
    let model = train_probe(&train_x, &train_y, classes.len(), &cfg.probe_config())?;
    let acc = probe_accuracy(&model, &test_x, &test_y)?;
    let target = match a.target {
        ProbeTarget::Phone => "phone",
        ProbeTarget::Speaker => "speaker",
    };
    let repr = match a.repr {
        Repr::Features => "features",
        Repr::Pred => "pred",
        Repr::Truth => "truth",
    };
    let rows = vec![vec![
        target.to_string(),
        repr.to_string(),
        classes.len().to_string(),
        train_y.len().to_string(),
        test_y.len().to_string(),
        acc.to_string(),
    ]];
    emit(
        a.out,
        &csv_text(&["target", "repr", "classes", "train_frames", "test_frames", "accuracy"], &rows),
    )
}

fn push_frames(
    set: &mut (Vec<Vec<f64>>, Vec<usize>),
    classes: &mut Vec<String>,
    x: &RealMatrix,
    labels: &[Option<String>],
) {
    for (t, l) in labels.iter().enumerate() {
        let Some(l) = l else { continue };
        let k = match classes.iter().position(|c| c == l) {
            Some(k) => k,
            None => {
                classes.push(l.clone());
                classes.len() - 1
            }
        };
        set.0.push(x.row(t).to_vec());
        set.1.push(k);
    }
}

pub fn wer_cmd(reference: &Path, hypothesis: &Path) -> Result<()> {
    let read = |p: &Path| {
        std::fs::read_to_string(p).map_err(|e| CliError::runtime("io", format!("{}: {e}", p.display())))
    };
    let r = read(reference)?;
    let h = read(hypothesis)?;
    println!("{:?}", wer(&tokens(&r), &tokens(&h))?);
    Ok(())
}
