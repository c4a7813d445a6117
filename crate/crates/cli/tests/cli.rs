use std::path::Path;
use std::process::{Command, Output};

use babble_core::artic::{gpca_fit, EmaRecording, GuidedPcaSpec, ArticulatoryTrajectory, DEFAULT_CHANNELS, N_PARAMS};
use babble_core::dsp::{extract_source, mel_project, mfcc39, stft_magnitude, FeatureKind, FeatureSequence, Waveform, N_MELS, SAMPLE_RATE};
use babble_core::graph::{Activation, RealMatrix};
use babble_core::imitation::{EncoderLayer, FrozenEncoder};
use babble_core::store::*;

fn babble(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_babble")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = babble(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Parse a two-column `name,value` CSV into pairs.
fn csv_pairs(text: &str) -> Vec<(String, f64)> {
    text.lines()
        .skip(1)
        .map(|l| {
            let (k, v) = l.split_once(',').unwrap();
            (k.to_string(), v.parse().unwrap())
        })
        .collect()
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[test]
fn wer_of_identical_files_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    std::fs::write(&a, "the cat sat on the mat\n").unwrap();
    assert_eq!(ok(&["wer", "--ref", s(&a), "--hyp", s(&a)]), "0.0\n");
    let b = dir.path().join("b.txt");
    std::fs::write(&b, "the cat sat on mat\n").unwrap();
    let w: f64 = ok(&["wer", "--ref", s(&a), "--hyp", s(&b)]).trim().parse().unwrap();
    assert_eq!(w, 1.0 / 6.0);
}

#[test]
fn unknown_config_key_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "seed=1\n# fine\nlearning_rate=0.1\n").unwrap();
    let out = babble(&["gen-synthetic", "--config", s(&cfg), "--outdir", s(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    let fields: Vec<&str> = err.trim_end().split('\t').collect();
    assert_eq!(fields[0], "error");
    assert_eq!(fields[1], "config");
    assert!(fields[2].contains("learning_rate"), "{err}");
    // Validation happens before any work.
    assert!(!dir.path().join("d").exists());
}

#[test]
fn usage_and_runtime_errors_map_to_exit_codes() {
    let out = babble(&["wer", "--ref", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error\tusage\t"));
    let out = babble(&["wer", "--ref", "/nonexistent/a", "--hyp", "/nonexistent/b"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error\tio\t"));
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, "\n").unwrap();
    let out = babble(&["wer", "--ref", s(&empty), "--hyp", s(&empty)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error\tundefined_wer\t"));
}

#[test]
fn help_documents_every_flag() {
    let subs: [(&str, &[&str]); 12] = [
        ("extract-features", &["--in", "--kind", "--out"]),
        ("extract-source", &["--in", "--out"]),
        ("fit-gpca", &["--manifest", "--spec", "--out"]),
        ("apply-gpca", &["--ckpt", "--in", "--out"]),
        ("gen-synthetic", &["--config", "--seed", "--outdir"]),
        ("train-synth", &["--manifest", "--config", "--out", "--log"]),
        ("train-imitation", &["--manifest", "--config", "--out", "--log"]),
        ("infer", &["--ckpt", "--manifest", "--outdir", "--split"]),
        ("eval-corr", &["--pred", "--truth", "--out"]),
        (
            "eval-abx",
            &["--manifest", "--repr", "--pred", "--split", "--inventory", "--within-speaker", "--config", "--out"],
        ),
        ("probe", &["--manifest", "--target", "--repr", "--pred", "--config", "--out"]),
        ("wer", &["--ref", "--hyp"]),
    ];
    for (sub, flags) in subs {
        let out = ok(&[sub, "--help"]);
        for f in flags {
            assert!(out.contains(f), "{sub} --help lacks {f}:\n{out}");
        }
    }
}

fn tone(n: usize) -> Waveform {
    let v = (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            0.3 * (2.0 * std::f64::consts::PI * 150.0 * t).sin() + 0.1 * (2.0 * std::f64::consts::PI * 1210.0 * t).sin()
        })
        .map(|x| (x * 32768.0).round() / 32768.0)
        .collect();
    Waveform::new(v, SAMPLE_RATE).unwrap()
}

#[test]
fn extraction_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("a.wav");
    write_wav(&wav, &tone(8000)).unwrap();
    let w = read_wav(&wav).unwrap();
    for (kind, want) in [
        ("mfcc39", mfcc39(&w, None).unwrap()),
        ("logmel80", mel_project(&stft_magnitude(&w).unwrap()).unwrap().log()),
    ] {
        let out = dir.path().join(format!("{kind}.ftr"));
        ok(&["extract-features", "--in", s(&wav), "--kind", kind, "--out", s(&out)]);
        let got = read_features(&out).unwrap();
        assert_eq!(got.kind(), want.kind());
        assert!(got.frames().max_abs_diff(want.frames()) < 1e-5);
    }
    let out = dir.path().join("src.ftr");
    ok(&["extract-source", "--in", s(&wav), "--out", s(&out)]);
    let file = read_feature_file(&out).unwrap();
    assert_eq!(file.kind, FeatureKind::External);
    assert_eq!(file.frames.cols(), 2);
    let want = extract_source(&w).unwrap();
    assert!(read_source(&out).unwrap().frames().max_abs_diff(want.frames()) < 1e-4);
}

fn smooth_ema(len: usize, phase: f64) -> EmaRecording {
    let chans: Vec<String> = DEFAULT_CHANNELS.iter().map(|c| c.to_string()).collect();
    let data = RealMatrix::from_fn(len, chans.len(), |t, c| {
        let t = t as f64 / 200.0;
        let k = c as f64;
        (1.3 * t * (k + 1.0) + phase + k).sin() + 0.5 * (0.7 * t * (12.0 - k) + 2.0 * k).cos()
    });
    EmaRecording::new(chans, data, 200.0).unwrap()
}

#[test]
fn gpca_commands_match_library_fit() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = String::new();
    let mut parts = Vec::new();
    for u in 0..3 {
        let e = smooth_ema(800, u as f64);
        let p = dir.path().join(format!("u{u}.ema"));
        write_ema(&p, &e).unwrap();
        manifest.push_str(&format!("u{u}\tspk\tema=u{u}.ema\n"));
        parts.push(babble_core::artic::resample_to_50hz(&read_ema(&p).unwrap()).unwrap());
    }
    let m = dir.path().join("m.tsv");
    std::fs::write(&m, manifest).unwrap();
    let ck = dir.path().join("gpca.ckp");
    ok(&["fit-gpca", "--manifest", s(&m), "--out", s(&ck)]);
    let want = gpca_fit(&EmaRecording::concat(&parts).unwrap(), &GuidedPcaSpec::default()).unwrap();
    let traj = dir.path().join("u0.traj");
    ok(&["apply-gpca", "--ckpt", s(&ck), "--in", s(&dir.path().join("u0.ema")), "--out", s(&traj)]);
    let got = read_trajectory(&traj).unwrap();
    let expect = want.encode(&parts[0]).unwrap();
    assert_eq!(got.len(), expect.len());
    assert!(got.frames().max_abs_diff(expect.frames()) < 1e-5);
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn synthetic_pipeline_reports_mean_correlation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.cfg");
    std::fs::write(&cfg, "speakers=1\nitems_per_speaker=40\nepochs=12\nseed=2\n").unwrap();
    let data = d.join("data");
    ok(&["gen-synthetic", "--config", s(&cfg), "--seed", "5", "--outdir", s(&data)]);
    let manifest = data.join("manifest.tsv");
    let ckpt = d.join("inv.ckp");
    let log = d.join("log.csv");
    let summary = ok(&[
        "train-imitation",
        "--manifest",
        s(&manifest),
        "--config",
        s(&cfg),
        "--out",
        s(&ckpt),
        "--log",
        s(&log),
    ]);
    assert!(summary.starts_with("epochs,train_loss,val_loss,converged\n12,"), "{summary}");
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 13);
    let pred = d.join("pred");
    ok(&["infer", "--ckpt", s(&ckpt), "--manifest", s(&manifest), "--outdir", s(&pred), "--split", "test"]);
    let truth = data.join("trajectory");
    let report = csv_pairs(&ok(&["eval-corr", "--pred", s(&pred), "--truth", s(&truth)]));
    assert_eq!(report.len(), N_PARAMS + 1);
    assert_eq!(report[N_PARAMS].0, "mean");

    // Pooled Pearson recomputed from the written files.
    let man = CorpusManifest::load(&manifest).unwrap();
    let test: Vec<_> = man.in_split("test").collect();
    assert!(!test.is_empty());
    let mut r = Vec::new();
    for k in 0..N_PARAMS {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for e in &test {
            let p = read_trajectory(&pred.join(format!("{}.traj", e.id))).unwrap();
            let t = read_trajectory(e.require(ManifestField::Trajectory).unwrap()).unwrap();
            for f in 0..t.len() {
                x.push(p.frames().get(f, k));
                y.push(t.frames().get(f, k));
            }
        }
        r.push(pearson(&x, &y));
        assert!((report[k].1 - r[k]).abs() < 1e-9, "{} {} vs {}", report[k].0, report[k].1, r[k]);
    }
    let mean = r.iter().sum::<f64>() / N_PARAMS as f64;
    assert!((report[N_PARAMS].1 - mean).abs() < 1e-9);
    assert!(mean > 0.5, "mean r {mean}");

    // The plotting dump mirrors the trajectory file.
    let e = &test[0];
    let csv = std::fs::read_to_string(pred.join(format!("{}.csv", e.id))).unwrap();
    let traj = read_trajectory(&pred.join(format!("{}.traj", e.id))).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "frame,time_s,JH,TB,TD,TT,LP,LH");
    assert_eq!(csv.lines().count(), traj.len() + 1);

    // Same inputs and seed give byte-identical artifacts.
    let data2 = d.join("data2");
    ok(&["gen-synthetic", "--config", s(&cfg), "--seed", "5", "--outdir", s(&data2)]);
    assert_eq!(read(&manifest), read(&data2.join("manifest.tsv")));
    let id = &test[0].id;
    for (sub, ext) in [("features", "ftr"), ("trajectory", "traj"), ("source", "src"), ("alignment", "tsv")] {
        let name = format!("{sub}/{id}.{ext}");
        assert_eq!(read(&data.join(&name)), read(&data2.join(&name)), "{name}");
    }
    let ckpt2 = d.join("inv2.ckp");
    ok(&[
        "train-imitation",
        "--manifest",
        s(&manifest),
        "--config",
        s(&cfg),
        "--out",
        s(&ckpt2),
        "--log",
        s(&d.join("log2.csv")),
    ]);
    assert_eq!(read(&ckpt), read(&ckpt2));
    assert_eq!(read(&log), read(&d.join("log2.csv")));

    // ABX and probes over the same corpus.
    let abx = ok(&["eval-abx", "--manifest", s(&manifest), "--repr", "truth", "--within-speaker"]);
    let last = abx.lines().last().unwrap();
    assert!(last.starts_with("within_speaker,all,"), "{last}");
    let score: f64 = last.rsplit(',').next().unwrap().parse().unwrap();
    assert!(score > 0.9, "{score}");
    let probe = ok(&["probe", "--manifest", s(&manifest), "--target", "phone"]);
    let acc: f64 = probe.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!(acc > 0.8, "{probe}");
}

fn wave_matrix(r: usize, c: usize, scale: f64, phase: f64) -> RealMatrix {
    RealMatrix::from_fn(r, c, |i, j| scale * ((i * 7 + j * 13) as f64 * 0.37 + phase).sin())
}

#[test]
fn loss_spaces_round_trip_through_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    let cfg = d.join("gen.cfg");
    std::fs::write(&cfg, "speakers=1\nitems_per_speaker=10\n").unwrap();
    ok(&["gen-synthetic", "--config", s(&cfg), "--outdir", s(&data)]);

    // A 768-wide frozen encoder and external features it produced.
    let enc = FrozenEncoder::new(vec![
        EncoderLayer {
            in_dim: N_MELS,
            out_dim: 32,
            window: 3,
            nonlinearity: Activation::Gelu,
            weight: wave_matrix(3 * N_MELS, 32, 0.02, 0.0),
            bias: wave_matrix(1, 32, 0.1, 1.0),
        },
        EncoderLayer {
            in_dim: 32,
            out_dim: 768,
            window: 1,
            nonlinearity: Activation::Identity,
            weight: wave_matrix(32, 768, 0.1, 2.0),
            bias: wave_matrix(1, 768, 0.1, 3.0),
        },
    ])
    .unwrap();
    let enc_path = d.join("enc.ckp");
    write_checkpoint(&enc_path, &encoder_checkpoint(&enc).unwrap()).unwrap();
    let enc = load_frozen_encoder(&enc_path).unwrap();
    let man = CorpusManifest::load(&data.join("manifest.tsv")).unwrap();
    let mut ext = CorpusManifest::default();
    for e in &man.entries {
        let z = read_features(e.require(ManifestField::Features).unwrap()).unwrap();
        let h = FeatureSequence::new(enc.forward(z.frames()).unwrap(), z.frame_rate(), FeatureKind::External).unwrap();
        let p = d.join(format!("{}.ext", e.id));
        write_features(&p, &h).unwrap();
        let mut paths = e.paths.clone();
        paths.retain(|(k, _)| *k != ManifestField::Features);
        paths.push((ManifestField::Features, p));
        ext.entries.push(ManifestEntry { paths, ..e.clone() });
    }
    let ext_manifest = d.join("ext.tsv");
    ext.write(&ext_manifest).unwrap();
    assert_eq!(read_feature_file(&d.join(format!("{}.ext", man.entries[0].id))).unwrap().frames.cols(), 768);

    let manifest = data.join("manifest.tsv");
    let cases = [
        ("mfcc", "loss_space=mfcc\n", &manifest, "mfcc", 39),
        ("enc", "loss_space=encoder:enc.ckp\n", &manifest, "encoder", 768),
        ("ext", "loss_space=encoder:enc.ckp\n", &ext_manifest, "identity", 768),
        ("dec", "loss_space=mfcc\ndecouple_input=true\n", &manifest, "identity", 80),
    ];
    for (name, text, m, transform, dim) in cases {
        let cfg = d.join(format!("{name}.cfg"));
        std::fs::write(&cfg, format!("epochs=1\nhidden=8\n{text}")).unwrap();
        let ck = d.join(format!("{name}.model"));
        let log = d.join(format!("{name}.csv"));
        ok(&["train-imitation", "--manifest", s(m), "--config", s(&cfg), "--out", s(&ck), "--log", s(&log)]);
        let c = read_checkpoint(&ck).unwrap();
        assert_eq!(c.meta("input_transform"), Some(transform), "{name}");
        assert_eq!(inverse_model_from_checkpoint(&c).unwrap().input_dim(), dim, "{name}");
        let out = d.join(format!("{name}_pred"));
        ok(&["infer", "--ckpt", s(&ck), "--manifest", s(m), "--outdir", s(&out)]);
        let a: ArticulatoryTrajectory = read_trajectory(&out.join(format!("{}.traj", man.entries[0].id))).unwrap();
        let z = read_features(man.entries[0].require(ManifestField::Features).unwrap()).unwrap();
        assert_eq!(a.len(), z.len());
    }

    // MFCC input features cannot be compared in the log-mel space.
    let wav = d.join("a.wav");
    write_wav(&wav, &tone(8000)).unwrap();
    let feat = d.join("a.ftr");
    ok(&["extract-features", "--in", s(&wav), "--kind", "mfcc39", "--out", s(&feat)]);
    let src = d.join("a.src");
    ok(&["extract-source", "--in", s(&wav), "--out", s(&src)]);
    let m = d.join("mfcc.tsv");
    std::fs::write(&m, "a\tspk\tfeatures=a.ftr\tsource=a.src\n").unwrap();
    let cfg = d.join("one.cfg");
    std::fs::write(&cfg, "epochs=1\nhidden=4\n").unwrap();
    let out = babble(&["train-imitation", "--manifest", s(&m), "--config", s(&cfg), "--out", s(&d.join("x.ckp")), "--log", s(&d.join("x.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error\tcontract\t"));
}

#[test]
fn trained_synthesizer_drives_imitation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    let cfg = d.join("run.cfg");
    std::fs::write(
        &cfg,
        "speakers=1\nitems_per_speaker=10\nsynth_epochs=3\nsynth_hidden=16\nsynth_layers=2\nepochs=1\nhidden=8\nsynth=net:synth.ckp\n",
    )
    .unwrap();
    ok(&["gen-synthetic", "--config", s(&cfg), "--outdir", s(&data)]);
    let manifest = data.join("manifest.tsv");
    let synth = d.join("synth.ckp");
    let log = d.join("synth.csv");
    ok(&["train-synth", "--manifest", s(&manifest), "--config", s(&cfg), "--out", s(&synth), "--log", s(&log)]);
    let lines: Vec<String> = std::fs::read_to_string(&log).unwrap().lines().map(String::from).collect();
    // Header, the untrained baseline at epoch 0, then one row per epoch.
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("0,"));
    let loss = |l: &str| -> f64 { l.split(',').nth(2).unwrap().parse().unwrap() };
    assert!(loss(&lines[4]) < loss(&lines[1]), "{lines:?}");
    let net = synthesizer_from_checkpoint(&read_checkpoint(&synth).unwrap()).unwrap();
    assert_eq!(net.layers(), 2);
    ok(&[
        "train-imitation",
        "--manifest",
        s(&manifest),
        "--config",
        s(&cfg),
        "--out",
        s(&d.join("inv.ckp")),
        "--log",
        s(&d.join("inv.csv")),
    ]);
    // A missing synthesizer checkpoint is a runtime failure.
    std::fs::remove_file(&synth).unwrap();
    let out = babble(&["train-imitation", "--manifest", s(&manifest), "--config", s(&cfg), "--out", s(&d.join("x")), "--log", s(&d.join("y"))]);
    assert_eq!(out.status.code(), Some(1));
}
