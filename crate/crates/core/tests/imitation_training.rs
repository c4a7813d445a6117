mod common;

use babble_core::artic::{ArticulatoryTrajectory, N_PARAMS};
use babble_core::dsp::{cepstra_from_logmel, CepstralStats, FeatureKind, FeatureSequence, SourceTrack, MFCC_DIM, N_MELS};
use babble_core::graph::{grad_check, GradCheckConfig, Gradients, ParameterSet, RealMatrix, Tape};
use babble_core::imitation::{
    imitation_loss, mean_loss, train_inverse, utterance_loss_and_grads, FrozenGuard,
    ImitationItem, InverseModel, InverseModelConfig, LossSpace, TrainConfig,
};
use babble_core::synth::{generate_corpus, tract_on_tape, AnalyticTractConfig, CorpusConfig, Synthesizer};
use babble_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use common::{uniform, random_source, small_encoder};

fn items(n: usize, seed: u64) -> Vec<ImitationItem> {
    let cfg = CorpusConfig {
        items_per_speaker: n,
        ..CorpusConfig::default()
    };
    generate_corpus(&cfg, seed)
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
fn tract_gradients_on_twenty_seeds() {
    let cfg = GradCheckConfig::default();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = rng.gen_range(1..=4);
        let tract = AnalyticTractConfig::with_scale(rng.gen_range(0.85..1.2));
        let mut p = ParameterSet::new();
        p.insert("a", uniform(&mut rng, t, N_PARAMS, -1.0, 1.0)).unwrap();
        let source = random_source(&mut rng, t);
        let w = uniform(&mut rng, t, N_MELS, -1.0, 1.0);
        let f = |p: &ParameterSet| -> Result<(f64, Gradients)> {
            let mut tape = Tape::new();
            let a = tape.param(p, "a")?;
            let y = tract_on_tape(&mut tape, a, &source, &tract)?;
            let wv = tape.constant(w.clone())?;
            let l = tape.cosine_distance(wv, y, 1e-8)?;
            Ok((tape.value(l).item()?, tape.backward(l)?.into_param_grads()))
        };
        let report = grad_check(f, &p, &cfg).unwrap();
        assert!(report.passed, "seed {seed}: {}", report.max_rel_error);
    }
}

/// Inverse model -> analytic tract -> loss space -> cosine, checked against
/// central differences in every inverse-model tensor.
#[test]
fn full_imitation_loss_gradients_on_twenty_seeds() {
    let cfg = GradCheckConfig {
        tol: 1e-4,
        max_coords_per_entry: Some(12),
        ..GradCheckConfig::default()
    };
    let synth = Synthesizer::Analytic(AnalyticTractConfig::default());
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let t = rng.gen_range(2..=5);
        let space = match seed % 3 {
            0 => LossSpace::LogMel,
            1 => LossSpace::Mfcc(CepstralStats {
                mean: (0..MFCC_DIM / 3).map(|_| rng.gen_range(-5.0..5.0)).collect(),
                std: (0..MFCC_DIM / 3).map(|_| rng.gen_range(0.5..3.0)).collect(),
            }),
            _ => LossSpace::Encoder(small_encoder(&mut rng)),
        };
        let input_dim = rng.gen_range(3..=6);
        let mut model = InverseModel::new(
            &InverseModelConfig {
                input_dim,
                hidden: 3,
                layers: 2,
            },
            seed,
        )
        .unwrap();
        let features = uniform(&mut rng, t, input_dim, -1.0, 1.0);
        model.fit_input_stats([&features]).unwrap();
        let mut params = model.params().clone();
        // A zero head gives a constant trajectory; randomize it.
        for name in ["head.weight", "head.bias"] {
            let m = params.get_mut(name).unwrap();
            let (r, c) = m.shape();
            *m = uniform(&mut rng, r, c, -0.5, 0.5);
        }
        let source = random_source(&mut rng, t);
        let target_mel = uniform(&mut rng, t, N_MELS, -20.0, 0.0);
        let target = space.render_logmel(&target_mel).unwrap();
        let (mean, std) = (model.input_mean().to_vec(), model.input_std().to_vec());
        let f = |p: &ParameterSet| -> Result<(f64, Gradients)> {
            let m = InverseModel::from_parts(p.clone(), mean.clone(), std.clone())?;
            utterance_loss_and_grads(&m, &features, &target, &source, &synth, &space)
        };
        let report = grad_check(f, &params, &cfg).unwrap();
        assert!(report.passed, "seed {seed} ({}): {}", space.name(), report.max_rel_error);
    }
}

#[test]
fn loss_is_invariant_to_target_scale_and_sensitive_to_parameters() {
    let synth = Synthesizer::Analytic(AnalyticTractConfig::default());
    for it in items(6, 2) {
        let truth = it.truth.clone().unwrap();
        let base = imitation_loss(&it.features, &truth, &it.source, &synth, &LossSpace::LogMel).unwrap();
        let off = ArticulatoryTrajectory::new(truth.frames().map(|v| v + 0.3)).unwrap();
        let l0 = imitation_loss(&it.features, &off, &it.source, &synth, &LossSpace::LogMel).unwrap();
        let scaled = FeatureSequence::new(it.features.frames().map(|v| 3.0 * v), 50.0, FeatureKind::LogMel80).unwrap();
        let l = imitation_loss(&scaled, &off, &it.source, &synth, &LossSpace::LogMel).unwrap();
        assert!((l - l0).abs() <= 1e-9 * l0, "{l} vs {l0}");
        for k in 0..N_PARAMS {
            let mut f = truth.frames().clone();
            for r in 0..f.rows() {
                f.set(r, k, -f.get(r, k) + 1.5);
            }
            let moved = ArticulatoryTrajectory::new(f).unwrap();
            let l = imitation_loss(&it.features, &moved, &it.source, &synth, &LossSpace::LogMel).unwrap();
            assert!(l > base, "{} param {k}", it.id);
        }
    }
}

#[test]
fn frame_count_mismatch_rejected() {
    let it = &items(1, 3)[0];
    let short = SourceTrack::new(it.source.frames().slice_rows(0, it.source.len() - 1)).unwrap();
    let truth = it.truth.as_ref().unwrap();
    let synth = Synthesizer::Analytic(AnalyticTractConfig::default());
    assert!(matches!(
        imitation_loss(&it.features, truth, &short, &synth, &LossSpace::LogMel),
        Err(Error::Dimension(_))
    ));
}

fn split(v: Vec<ImitationItem>, n_train: usize) -> (Vec<ImitationItem>, Vec<ImitationItem>) {
    let mut v = v;
    let valid = v.split_off(n_train);
    (v, valid)
}

#[test]
fn validation_loss_halves_and_trajectories_stay_smooth() {
    let all = items(300, 5);
    let (train, rest) = split(all, 240);
    let (valid, test) = split(rest, 30);
    let synth = Synthesizer::Analytic(AnalyticTractConfig::default());
    let cfg = TrainConfig {
        epochs: 10,
        seed: 3,
        ..TrainConfig::default()
    };
    let untrained = InverseModel::new(&InverseModelConfig::new(N_MELS), cfg.seed).unwrap();
    let initial = mean_loss(&untrained, &valid, &synth, &LossSpace::LogMel).unwrap();
    let run = train_inverse(&train, &valid, &synth, &LossSpace::LogMel, &cfg).unwrap();
    let last = run.log.last().unwrap().val_loss.unwrap();
    assert!(last <= 0.5 * initial, "{initial} -> {last}");
    assert!(run.converged);

    let mean_delta = |m: &RealMatrix| {
        let mut s = 0.0;
        for r in 1..m.rows() {
            for c in 0..m.cols() {
                s += (m.get(r, c) - m.get(r - 1, c)).abs();
            }
        }
        s / ((m.rows() - 1) * m.cols()) as f64
    };
    let (mut pred, mut truth) = (0.0, 0.0);
    for it in &test {
        pred += mean_delta(run.model.infer(&it.features).unwrap().frames());
        truth += mean_delta(it.truth.as_ref().unwrap().frames());
    }
    assert!(pred <= 3.0 * truth, "{pred} vs {truth}");
}

#[test]
fn training_is_deterministic_and_ignores_truth() {
    let (train, valid) = split(items(20, 6), 16);
    let synth = Synthesizer::Analytic(AnalyticTractConfig::default());
    let cfg = TrainConfig {
        epochs: 2,
        hidden: 8,
        seed: 9,
        ..TrainConfig::default()
    };
    let a = train_inverse(&train, &valid, &synth, &LossSpace::LogMel, &cfg).unwrap();
    let b = train_inverse(&train, &valid, &synth, &LossSpace::LogMel, &cfg).unwrap();
    assert_eq!(a.log, b.log);
    let strip = |v: &[ImitationItem]| -> Vec<ImitationItem> {
        v.iter()
            .cloned()
            .map(|mut i| {
                i.truth = None;
                i
            })
            .collect()
    };
    let c = train_inverse(&strip(&train), &strip(&valid), &synth, &LossSpace::LogMel, &cfg).unwrap();
    assert_eq!(a.log, c.log);
    assert_eq!(a.model.params().fingerprint(), c.model.params().fingerprint());
    let other = TrainConfig { seed: 10, ..cfg };
    assert_ne!(train_inverse(&train, &valid, &synth, &LossSpace::LogMel, &other).unwrap().log, a.log);
}

#[test]
fn frozen_parts_unchanged_by_training() {
    let (train, valid) = split(items(12, 7), 10);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let synth = Synthesizer::Analytic(AnalyticTractConfig::default());
    let space = LossSpace::Encoder(small_encoder(&mut rng));
    let before = FrozenGuard::capture(&synth, &space);
    let enc_params = match &space {
        LossSpace::Encoder(e) => e.params().clone(),
        _ => unreachable!(),
    };
    let cfg = TrainConfig {
        epochs: 2,
        hidden: 8,
        ..TrainConfig::default()
    };
    train_inverse(&train, &valid, &synth, &space, &cfg).unwrap();
    assert_eq!(before, FrozenGuard::capture(&synth, &space));
    match &space {
        LossSpace::Encoder(e) => assert_eq!(e.params().fingerprint(), enc_params.fingerprint()),
        _ => unreachable!(),
    }
}

#[test]
fn non_finite_features_report_divergence() {
    let (mut train, _) = split(items(4, 8), 4);
    let mut f = train[0].features.frames().clone();
    f.set(0, 0, f64::NAN);
    train[0].features = FeatureSequence::new(f, 50.0, FeatureKind::LogMel80).unwrap();
    let synth = Synthesizer::Analytic(AnalyticTractConfig::default());
    let cfg = TrainConfig {
        epochs: 1,
        hidden: 4,
        ..TrainConfig::default()
    };
    match train_inverse(&train, &[], &synth, &LossSpace::LogMel, &cfg) {
        Err(Error::Divergence { step, .. }) => assert_eq!(step, 0),
        other => panic!("{other:?}"),
    }
}

#[test]
fn mfcc_inputs_train_in_mfcc_space() {
    let raw = items(10, 9);
    let ceps: Vec<RealMatrix> = raw.iter().map(|i| cepstra_from_logmel(i.features.frames()).unwrap()).collect();
    let stats = CepstralStats::fit(&ceps).unwrap();
    let space = LossSpace::Mfcc(stats);
    let conv: Vec<ImitationItem> = raw
        .iter()
        .map(|i| {
            let mut j = i.clone();
            j.features = FeatureSequence::new(space.render_logmel(i.features.frames()).unwrap(), 50.0, FeatureKind::Mfcc39)
                .unwrap();
            j
        })
        .collect();
    let synth = Synthesizer::Analytic(AnalyticTractConfig::default());
    let cfg = TrainConfig {
        epochs: 1,
        hidden: 4,
        ..TrainConfig::default()
    };
    let run = train_inverse(&conv[..8], &conv[8..], &synth, &space, &cfg).unwrap();
    assert_eq!(run.model.input_dim(), MFCC_DIM);
    assert!(matches!(
        train_inverse(&conv[..8], &[], &synth, &LossSpace::LogMel, &cfg),
        Err(Error::Contract(_))
    ));
}
