//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use babble_core::artic::{EmaRecording, ExtractionRule, GuidedPcaSpec, DEFAULT_CHANNELS};
use babble_core::dsp::{Waveform, N_MELS, SAMPLE_RATE};
use babble_core::eval::{cosine_cost, extract_vcv, VcvItem};
use babble_core::graph::{Activation, RealMatrix};
use babble_core::imitation::{EncoderLayer, FrozenEncoder};
use babble_core::synth::{generate_corpus, CorpusConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn noise(seed: u64, len: usize, amp: f64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Waveform::new((0..len).map(|_| rng.gen_range(-amp..amp)).collect(), SAMPLE_RATE).unwrap()
}

pub fn oracle_spectrum(x: &[f64]) -> Vec<Vec<f64>> {
    let n_frames = 1 + (x.len() - 640) / 320;
    (0..n_frames)
        .map(|t| {
            let frame: Vec<f64> = (0..640)
                .map(|n| x[t * 320 + n] * (0.5 - 0.5 * (2.0 * PI * n as f64 / 640.0).cos()))
                .collect();
            (0..=320)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (n, v) in frame.iter().enumerate() {
                        let ang = -2.0 * PI * (k * n % 640) as f64 / 640.0;
                        re += v * ang.cos();
                        im += v * ang.sin();
                    }
                    (re * re + im * im).sqrt()
                })
                .collect()
        })
        .collect()
}

/// Filter `m` evaluated at frequency `f` by locating `f` between the mel
/// edges of that filter.
pub fn oracle_filter(m: usize, f: f64) -> f64 {
    let mel = |hz: f64| 2595.0 * (1.0 + hz / 700.0).log10();
    let top = mel(8000.0);
    let edge = |i: usize| {
        let mm = top * i as f64 / 81.0;
        700.0 * (10f64.powf(mm / 2595.0) - 1.0)
    };
    let (a, b, c) = (edge(m), edge(m + 1), edge(m + 2));
    if f > a && f < b {
        (f - a) / (b - a)
    } else if f >= b && f < c {
        (c - f) / (c - b)
    } else {
        0.0
    }
}

pub fn oracle_logmel(x: &[f64]) -> Vec<Vec<f64>> {
    oracle_spectrum(x)
        .iter()
        .map(|spec| {
            (0..80)
                .map(|m| {
                    let e: f64 = spec
                        .iter()
                        .enumerate()
                        .map(|(k, s)| s * s * oracle_filter(m, k as f64 * 25.0))
                        .sum();
                    (e + 1e-10).ln()
                })
                .collect()
        })
        .collect()
}

pub fn oracle_mfcc(x: &[f64]) -> Vec<Vec<f64>> {
    let logmel = oracle_logmel(x);
    let ceps: Vec<Vec<f64>> = logmel
        .iter()
        .map(|row| {
            (0..13)
                .map(|k| {
                    let mut s = 0.0;
                    for (m, v) in row.iter().enumerate() {
                        s += v * (PI * k as f64 * (2 * m + 1) as f64 / 160.0).cos();
                    }
                    s * if k == 0 { (1.0 / 80.0f64).sqrt() } else { (2.0 / 80.0f64).sqrt() }
                })
                .collect()
        })
        .collect();
    let t = ceps.len();
    let mut z = ceps.clone();
    for k in 0..13 {
        let mean = ceps.iter().map(|r| r[k]).sum::<f64>() / t as f64;
        let var = ceps.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / t as f64;
        for r in z.iter_mut() {
            r[k] = (r[k] - mean) / var.sqrt();
        }
    }
    let d1 = oracle_delta(&z);
    let d2 = oracle_delta(&d1);
    (0..t)
        .map(|i| [z[i].clone(), d1[i].clone(), d2[i].clone()].concat())
        .collect()
}

pub fn oracle_delta(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let t = x.len() as isize;
    let at = |i: isize| &x[i.clamp(0, t - 1) as usize];
    (0..t)
        .map(|i| {
            (0..x[0].len())
                .map(|d| (1..=2).map(|n| n as f64 * (at(i + n)[d] - at(i - n)[d])).sum::<f64>() / 10.0)
                .collect()
        })
        .collect()
}

pub fn sawtooth(freq: f64, len: usize) -> Waveform {
    let s = (0..len)
        .map(|n| {
            let phase = (n as f64 * freq / SAMPLE_RATE as f64).fract();
            2.0 * phase - 1.0
        })
        .collect();
    Waveform::new(s, SAMPLE_RATE).unwrap()
}

pub fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> RealMatrix {
    RealMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Every monotone path from (0,0) to (n-1,m-1), summing costs in path order.
pub fn brute_dtw(x: &RealMatrix, y: &RealMatrix) -> f64 {
    fn walk(x: &RealMatrix, y: &RealMatrix, i: usize, j: usize, sum: f64, len: usize, best: &mut (f64, usize)) {
        let sum = sum + cosine_cost(x.row(i), y.row(j));
        let len = len + 1;
        if i + 1 == x.rows() && j + 1 == y.rows() {
            if sum < best.0 || (sum == best.0 && len < best.1) {
                *best = (sum, len);
            }
            return;
        }
        if i + 1 < x.rows() {
            walk(x, y, i + 1, j, sum, len, best);
        }
        if j + 1 < y.rows() {
            walk(x, y, i, j + 1, sum, len, best);
        }
        if i + 1 < x.rows() && j + 1 < y.rows() {
            walk(x, y, i + 1, j + 1, sum, len, best);
        }
    }
    let mut best = (f64::INFINITY, 0);
    walk(x, y, 0, 0, 0.0, 0, &mut best);
    best.0 / best.1 as f64
}

/// Minimum edit cost by exhaustive recursion over match/sub, deletion and
/// insertion choices.
pub fn brute_edit(a: &[u8], b: &[u8]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = brute_edit(ra, rb) + usize::from(x != y);
            let del = brute_edit(ra, b) + 1;
            let ins = brute_edit(a, rb) + 1;
            sub.min(del).min(ins)
        }
    }
}

pub fn all_sequences(max_len: usize, alphabet: &[u8]) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for &t in alphabet {
                let mut s2: Vec<u8> = s.clone();
                s2.push(t);
                next.push(s2);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

pub fn corpus_items(cfg: &CorpusConfig, seed: u64) -> (Vec<VcvItem>, Vec<Option<RealMatrix>>) {
    let corpus = generate_corpus(cfg, seed).unwrap();
    let mut items = Vec::new();
    let mut truth = Vec::new();
    for u in &corpus.utterances {
        for v in extract_vcv(&u.id, &u.speaker, &u.segments, &corpus.inventory).unwrap() {
            truth.push(Some(v.slice(u.trajectory.frames()).unwrap()));
            items.push(v);
        }
    }
    (items, truth)
}

pub fn two_class_data(rng: &mut ChaCha8Rng, n: usize) -> (RealMatrix, Vec<usize>) {
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let x = RealMatrix::from_fn(n, 5, |r, c| {
        let noise: f64 = rng.sample(StandardNormal);
        if c == 0 {
            if labels[r] == 0 {
                2.0 + 0.3 * noise
            } else {
                -2.0 + 0.3 * noise
            }
        } else {
            noise
        }
    });
    (x, labels)
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Latent-mix data on the default coil inventory: latent k drives the
/// channels of stage k, plus weaker random cross-loadings.
pub fn mixed(seed: u64, n: usize, noise: f64) -> (EmaRecording, RealMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mix = RealMatrix::from_fn(6, 12, |_, _| rng.gen_range(-0.3..0.3));
    for (k, s) in GuidedPcaSpec::default().stages.iter().enumerate() {
        for (i, ch) in s.rule.channels().iter().enumerate() {
            let c = DEFAULT_CHANNELS.iter().position(|d| d == ch).unwrap();
            let sign = if matches!(s.rule, ExtractionRule::Difference(..)) && i == 1 { -1.0 } else { 1.0 };
            mix.set(k, c, mix.get(k, c) + sign);
        }
    }
    let latents = RealMatrix::from_fn(n, 6, |_, _| rng.sample(StandardNormal));
    let mut x = latents.matmul(&mix).unwrap();
    for v in x.as_mut_slice() {
        let e: f64 = rng.sample(StandardNormal);
        *v += noise * e + 3.0;
    }
    let names = DEFAULT_CHANNELS.iter().map(|s| s.to_string()).collect();
    (EmaRecording::new(names, x, 50.0).unwrap(), mix)
}

pub fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> RealMatrix {
    RealMatrix::from_fn(r, c, |_, _| rng.gen_range(lo..hi))
}

pub fn random_source(rng: &mut ChaCha8Rng, t: usize) -> RealMatrix {
    RealMatrix::from_fn(t, 2, |_, c| if c == 0 { rng.gen_range(90.0..300.0) } else { rng.gen_range(0.0..1.0) })
}

pub fn small_encoder(rng: &mut ChaCha8Rng) -> FrozenEncoder {
    FrozenEncoder::new(vec![
        EncoderLayer {
            in_dim: N_MELS,
            out_dim: 6,
            window: 3,
            nonlinearity: Activation::Gelu,
            weight: uniform(rng, 3 * N_MELS, 6, -0.05, 0.05),
            bias: uniform(rng, 1, 6, -0.5, 0.5),
        },
        EncoderLayer {
            in_dim: 6,
            out_dim: 5,
            window: 1,
            nonlinearity: Activation::Tanh,
            weight: uniform(rng, 6, 5, -0.5, 0.5),
            bias: uniform(rng, 1, 5, -0.5, 0.5),
        },
    ])
    .unwrap()
}
