mod common;

use std::f64::consts::PI;

use babble_core::artic::{
    gpca_decode, gpca_encode, gpca_fit, resample_to_50hz, ArticulatoryTrajectory, EmaRecording, ExtractionRule,
    GpcaStage, GuidedPcaModel, GuidedPcaSpec, DEFAULT_CHANNELS, PARAM_NAMES,
};
use babble_core::graph::RealMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use common::{pearson, mixed};

fn sine_recording(freq: f64, n: usize) -> EmaRecording {
    let data = RealMatrix::from_fn(n, 1, |t, _| (2.0 * PI * freq * t as f64 / 200.0).sin());
    EmaRecording::new(vec!["x".into()], data, 200.0).unwrap()
}

fn amplitude_interior(e: &EmaRecording, freq: f64) -> f64 {
    // Least-squares amplitude of a sinusoid at `freq`, ignoring 20 edge samples.
    let (mut s, mut c) = (0.0, 0.0);
    let range = 20..e.len() - 20;
    let n = range.len() as f64;
    for t in range {
        let ph = 2.0 * PI * freq * t as f64 / e.rate();
        s += e.data().get(t, 0) * ph.sin();
        c += e.data().get(t, 0) * ph.cos();
    }
    2.0 * (s * s + c * c).sqrt() / n
}

#[test]
fn passband_sinusoid_keeps_amplitude() {
    let r = resample_to_50hz(&sine_recording(5.0, 2000)).unwrap();
    assert_eq!(r.len(), 500);
    let amp = amplitude_interior(&r, 5.0);
    assert!((amp - 1.0).abs() < 0.01, "amplitude {amp}");
    for t in 20..480 {
        let expected = (2.0 * PI * 5.0 * t as f64 / 50.0).sin();
        assert!((r.data().get(t, 0) - expected).abs() < 0.01);
    }
}

#[test]
fn stopband_sinusoid_attenuated_40db() {
    let r = resample_to_50hz(&sine_recording(40.0, 2000)).unwrap();
    let peak = (20..480).map(|t| r.data().get(t, 0).abs()).fold(0.0, f64::max);
    assert!(peak < 0.01, "peak {peak}");
}

fn two_channel(seed: u64) -> EmaRecording {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = RealMatrix::from_fn(500, 2, |_, _| 0.0);
    let mut data = data;
    for t in 0..500 {
        let a: f64 = rng.sample(StandardNormal);
        let n: f64 = rng.sample(StandardNormal);
        data.set(t, 0, a);
        data.set(t, 1, 0.5 * a + 0.3 * n);
    }
    EmaRecording::new(vec!["ch1".into(), "ch2".into()], data, 50.0).unwrap()
}

fn stage(param: &str, rule: ExtractionRule) -> GpcaStage {
    GpcaStage {
        parameter: param.into(),
        rule,
    }
}

#[test]
fn first_stage_residual_uncorrelated() {
    let e = two_channel(1);
    let spec = GuidedPcaSpec {
        stages: PARAM_NAMES
            .iter()
            .map(|p| stage(p, ExtractionRule::Coordinate("ch1".into())))
            .collect(),
    };
    // Only the first stage is meaningful with two channels; fit it by hand.
    let model = fit_stages(&e, &spec, 1);
    let p1: Vec<f64> = (0..e.len()).map(|t| e.data().get(t, 0) - model.means[0]).collect();
    let resid: Vec<f64> = (0..e.len())
        .map(|t| e.data().get(t, 1) - model.means[1] - p1[t] * model.stages[0].regression[1])
        .collect();
    assert!(pearson(&p1, &resid).abs() < 1e-10);
    assert!((model.stages[0].regression[1] - 0.5).abs() < 0.1);
}

/// Fit only the first `k` stages of `spec` using a padded copy of the
/// channels so the full fit has enough independent directions.
fn fit_stages(e: &EmaRecording, spec: &GuidedPcaSpec, k: usize) -> GuidedPcaModel {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let extra = 6;
    let mut names = e.channels().to_vec();
    let mut cols = vec![e.data().clone()];
    let pad = RealMatrix::from_fn(e.len(), extra, |_, _| rng.sample(StandardNormal));
    cols.push(pad);
    for i in 0..extra {
        names.push(format!("pad{i}"));
    }
    let data = RealMatrix::hcat(&cols.iter().collect::<Vec<_>>()).unwrap();
    let padded = EmaRecording::new(names, data, e.rate()).unwrap();
    let mut stages = spec.stages[..k].to_vec();
    for (i, p) in PARAM_NAMES.iter().enumerate().skip(k) {
        stages.push(stage(p, ExtractionRule::Coordinate(format!("pad{i}"))));
    }
    let mut model = gpca_fit(&padded, &GuidedPcaSpec { stages }).unwrap();
    model.stages.truncate(k);
    model
}

#[test]
fn uncorrelated_channels_give_zero_regression() {
    // Exactly orthogonal, zero-mean channels built from cosines.
    let n = 240;
    let names: Vec<String> = DEFAULT_CHANNELS.iter().map(|s| s.to_string()).collect();
    let data = RealMatrix::from_fn(n, 12, |t, c| (2.0 * PI * (c + 1) as f64 * t as f64 / n as f64).cos());
    let e = EmaRecording::new(names, data, 50.0).unwrap();
    let model = gpca_fit(&e, &GuidedPcaSpec::default()).unwrap();
    let jh = &model.stages[0];
    for (c, b) in jh.regression.iter().enumerate() {
        let expected = if DEFAULT_CHANNELS[c] == "jaw_y" { 1.0 } else { 0.0 };
        assert!((b - expected).abs() < 1e-10, "channel {c}: {b}");
    }
    // The tongue-body PC of two equal-variance uncorrelated channels loads
    // on one of them only.
    let tb = &model.stages[1].extraction;
    let nonzero = tb.iter().filter(|v| v.abs() > 1e-8).count();
    assert_eq!(nonzero, 1);
}

#[test]
fn linear_mix_reconstructs() {
    let (e, _) = mixed(3, 600, 0.01);
    let model = gpca_fit(&e, &GuidedPcaSpec::default()).unwrap();
    let rec = gpca_decode(&gpca_encode(&e, &model).unwrap(), &model).unwrap();
    for c in 0..12 {
        let x = e.data().column(c);
        let y = rec.data().column(c);
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let ss_tot: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
        let ss_res: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(1.0 - ss_res / ss_tot > 0.99, "channel {c}: {}", 1.0 - ss_res / ss_tot);
    }
}

#[test]
fn encoded_training_data_is_standardized() {
    let (e, _) = mixed(4, 500, 0.2);
    let model = gpca_fit(&e, &GuidedPcaSpec::default()).unwrap();
    let a = gpca_encode(&e, &model).unwrap();
    for k in 0..6 {
        let col = a.frames().column(k);
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
        assert!(mean.abs() < 1e-8 && (std - 1.0).abs() < 1e-6, "{k}: {mean} {std}");
    }
}

#[test]
fn stage_orthogonality_and_monotone_error() {
    let (e, _) = mixed(5, 500, 0.3);
    let model = gpca_fit(&e, &GuidedPcaSpec::default()).unwrap();
    let a = gpca_encode(&e, &model).unwrap();
    let mut prev = f64::INFINITY;
    for k in 0..=6 {
        let rec = model.decode_partial(&a, k).unwrap();
        let mse = e.data().as_slice().iter().zip(rec.data().as_slice()).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
            / e.data().len() as f64;
        assert!(mse <= prev + 1e-12, "stage {k}: {mse} > {prev}");
        prev = mse;
        if k > 0 {
            let col = PARAM_NAMES.iter().position(|n| *n == model.stages[k - 1].parameter).unwrap();
            let p = a.frames().column(col);
            for c in 0..12 {
                let resid: Vec<f64> = (0..e.len()).map(|t| e.data().get(t, c) - rec.data().get(t, c)).collect();
                let var: f64 = resid.iter().map(|v| v * v).sum();
                if var > 1e-20 {
                    assert!(pearson(&p, &resid).abs() < 1e-8, "stage {k} channel {c}");
                }
            }
        }
    }
}

#[test]
fn zero_parameters_decode_to_means() {
    let (e, _) = mixed(6, 300, 0.1);
    let model = gpca_fit(&e, &GuidedPcaSpec::default()).unwrap();
    let zeros = ArticulatoryTrajectory::new(RealMatrix::zeros(3, 6)).unwrap();
    let rec = gpca_decode(&zeros, &model).unwrap();
    for r in 0..3 {
        for c in 0..12 {
            assert_eq!(rec.data().get(r, c), model.means[c]);
        }
    }
}

#[test]
fn encode_is_affine() {
    let (e, _) = mixed(7, 400, 0.2);
    let model = gpca_fit(&e, &GuidedPcaSpec::default()).unwrap();
    let (x, _) = mixed(8, 20, 0.5);
    let (y, _) = mixed(9, 20, 0.5);
    let alpha = 0.3;
    let mix = RealMatrix::from_fn(20, 12, |r, c| alpha * x.data().get(r, c) + (1.0 - alpha) * y.data().get(r, c));
    let z = EmaRecording::new(x.channels().to_vec(), mix, 50.0).unwrap();
    let (ex, ey, ez) = (
        gpca_encode(&x, &model).unwrap(),
        gpca_encode(&y, &model).unwrap(),
        gpca_encode(&z, &model).unwrap(),
    );
    for r in 0..20 {
        for k in 0..6 {
            let expected = alpha * ex.frames().get(r, k) + (1.0 - alpha) * ey.frames().get(r, k);
            assert!((ez.frames().get(r, k) - expected).abs() < 1e-9);
        }
    }
}

#[test]
fn missing_channel_is_schema_error() {
    let (e, _) = mixed(10, 300, 0.1);
    let model = gpca_fit(&e, &GuidedPcaSpec::default()).unwrap();
    let short = EmaRecording::new(
        e.channels()[..11].to_vec(),
        e.data().slice_cols(0, 11),
        50.0,
    )
    .unwrap();
    assert!(matches!(gpca_encode(&short, &model), Err(babble_core::Error::Schema(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn decode_then_encode_round_trips(seed in 0u64..1000, values in prop::collection::vec(-3.0f64..3.0, 6 * 4)) {
        let (e, _) = mixed(seed, 300, 0.2);
        let model = gpca_fit(&e, &GuidedPcaSpec::default()).unwrap();
        let a = ArticulatoryTrajectory::new(RealMatrix::new(4, 6, values).unwrap()).unwrap();
        let back = gpca_encode(&gpca_decode(&a, &model).unwrap(), &model).unwrap();
        prop_assert!(back.frames().max_abs_diff(a.frames()) < 1e-8);
    }
}
