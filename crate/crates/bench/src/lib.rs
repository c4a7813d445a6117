//! Fixtures shared by the kernel benchmarks.

use babble_core::dsp::{Waveform, SAMPLE_RATE};
use babble_core::synth::{generate_corpus, CorpusConfig, SyntheticUtterance};

/// One second of a two-partial tone at 16 kHz.
pub fn tone() -> Waveform {
    let n = SAMPLE_RATE as usize;
    let v = (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            0.3 * (2.0 * std::f64::consts::PI * 140.0 * t).sin() + 0.1 * (2.0 * std::f64::consts::PI * 1900.0 * t).sin()
        })
        .collect();
    Waveform::new(v, SAMPLE_RATE).expect("valid tone")
}

/// Synthetic VCV utterances from the default corpus.
pub fn utterances(n: usize) -> Vec<SyntheticUtterance> {
    let cfg = CorpusConfig {
        items_per_speaker: n,
        ..CorpusConfig::default()
    };
    generate_corpus(&cfg, 11).expect("default corpus").utterances
}
