//! Evaluation metrics: pooled Pearson correlation of trajectories,
//! DTW-based place-of-articulation ABX, frame-level linear probes and word
//! error rate.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::artic::{ArticulatoryTrajectory, N_PARAMS, PARAM_NAMES};
use crate::graph::{adam_step, uniform_matrix, Gradients, OptimizerState, ParameterSet, RealMatrix};
use crate::phone::{Manner, PhoneInventory, Place};
use crate::synth::LabeledSpan;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationReport {
    pub per_param: [f64; N_PARAMS],
    pub mean: f64,
}

/// Pearson r per parameter over all frames of all pairs pooled together.
pub fn pearson_per_param(pred: &[ArticulatoryTrajectory], truth: &[ArticulatoryTrajectory]) -> Result<CorrelationReport> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predicted vs {} reference trajectories",
            pred.len(),
            truth.len()
        )));
    }
    for (i, (p, t)) in pred.iter().zip(truth).enumerate() {
        if p.len() != t.len() {
            return Err(Error::Dimension(format!(
                "pair {i}: {} predicted vs {} reference frames",
                p.len(),
                t.len()
            )));
        }
    }
    let n: usize = truth.iter().map(ArticulatoryTrajectory::len).sum();
    if n < 2 {
        return Err(Error::EmptySequence("need at least two frames to correlate".into()));
    }
    let mut per_param = [0.0; N_PARAMS];
    for (k, r) in per_param.iter_mut().enumerate() {
        let xs = || pred.iter().flat_map(move |p| p.frames().column(k));
        let ys = || truth.iter().flat_map(move |t| t.frames().column(k));
        *r = pearson(xs(), ys(), n).ok_or_else(|| Error::UndefinedCorrelation {
            parameter: PARAM_NAMES[k].to_string(),
        })?;
    }
    let mean = per_param.iter().sum::<f64>() / N_PARAMS as f64;
    Ok(CorrelationReport { per_param, mean })
}

fn pearson(x: impl Iterator<Item = f64> + Clone, y: impl Iterator<Item = f64> + Clone, n: usize) -> Option<f64> {
    let nf = n as f64;
    let mx = x.clone().sum::<f64>() / nf;
    let my = y.clone().sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// `1 - cos(a, b)`, clamped at zero. A zero frame is at cost 0 from
/// another zero frame and cost 1 from anything else.
pub fn cosine_cost(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return if aa == bb { 0.0 } else { 1.0 };
    }
    (1.0 - ab / (aa * bb).sqrt()).max(0.0)
}

/// Mean frame cosine cost along the minimum-cost monotone alignment path
/// with steps (1,0), (0,1), (1,1). Among equal-cost paths the shorter one
/// is taken.
pub fn dtw_distance(x: &RealMatrix, y: &RealMatrix) -> Result<f64> {
    if x.rows() == 0 || y.rows() == 0 {
        return Err(Error::EmptySequence("dtw over an empty sequence".into()));
    }
    if x.cols() != y.cols() {
        return Err(Error::Dimension(format!(
            "dtw between {}-dim and {}-dim frames",
            x.cols(),
            y.cols()
        )));
    }
    let (n, m) = (x.rows(), y.rows());
    // (cost, length) per cell, compared lexicographically.
    let mut prev = vec![(f64::INFINITY, 0usize); m];
    let mut cur = vec![(f64::INFINITY, 0usize); m];
    for i in 0..n {
        for j in 0..m {
            let c = cosine_cost(x.row(i), y.row(j));
            let best = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut b = (f64::INFINITY, usize::MAX);
                if i > 0 {
                    b = better(b, prev[j]);
                }
                if j > 0 {
                    b = better(b, cur[j - 1]);
                }
                if i > 0 && j > 0 {
                    b = better(b, prev[j - 1]);
                }
                b
            };
            cur[j] = (best.0 + c, best.1 + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (cost, len) = prev[m - 1];
    Ok(cost / len as f64)
}

fn better(a: (f64, usize), b: (f64, usize)) -> (f64, usize) {
    if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
        b
    } else {
        a
    }
}

/// A vowel-consonant-vowel stretch of an utterance, in frames.
#[derive(Clone, Debug, PartialEq)]
pub struct VcvItem {
    pub utterance: String,
    pub speaker: String,
    pub consonant: String,
    pub place: Place,
    pub manner: Manner,
    /// Labels of the flanking vowels.
    pub context: (String, String),
    pub start: usize,
    pub end: usize,
}

impl VcvItem {
    pub fn key(&self) -> String {
        format!("{}:{}-{}", self.utterance, self.start, self.end)
    }

    /// The item's frames cut from a full-utterance matrix.
    pub fn slice(&self, full: &RealMatrix) -> Result<RealMatrix> {
        if self.end > full.rows() {
            return Err(Error::MissingItem(format!(
                "{} ends at frame {} but the representation has {} frames",
                self.key(),
                self.end,
                full.rows()
            )));
        }
        Ok(full.slice_rows(self.start, self.end))
    }
}

/// Find every vowel-consonant-vowel run in an aligned utterance. Labels
/// missing from the inventory are a parse-level error.
pub fn extract_vcv(
    utterance: &str,
    speaker: &str,
    segments: &[LabeledSpan],
    inventory: &PhoneInventory,
) -> Result<Vec<VcvItem>> {
    let phones = segments
        .iter()
        .map(|s| {
            inventory
                .get(&s.label)
                .ok_or_else(|| Error::MissingItem(format!("{utterance}: phone {:?} not in inventory", s.label)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for i in 1..segments.len().saturating_sub(1) {
        let (v1, c, v2) = (phones[i - 1], phones[i], phones[i + 1]);
        if v1.is_vowel() && !c.is_vowel() && v2.is_vowel() {
            out.push(VcvItem {
                utterance: utterance.to_string(),
                speaker: speaker.to_string(),
                consonant: c.label.clone(),
                place: c.place,
                manner: c.manner,
                context: (v1.label.clone(), v2.label.clone()),
                start: segments[i - 1].start,
                end: segments[i + 1].end,
            });
        }
    }
    Ok(out)
}

/// Which items may be combined in a triplet beyond the place/manner rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbxMode {
    /// A, B and X come from one speaker.
    WithinSpeaker,
    /// A and B share a speaker; X comes from another speaker.
    AcrossSpeaker,
    /// Any speakers, but A and X differ in vocalic context.
    AcrossContext,
}

impl AbxMode {
    pub fn name(self) -> &'static str {
        match self {
            AbxMode::WithinSpeaker => "within_speaker",
            AbxMode::AcrossSpeaker => "across_speaker",
            AbxMode::AcrossContext => "across_context",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [AbxMode::WithinSpeaker, AbxMode::AcrossSpeaker, AbxMode::AcrossContext]
            .into_iter()
            .find(|m| m.name() == s)
    }

    fn admits(self, a: &VcvItem, b: &VcvItem, x: &VcvItem) -> bool {
        match self {
            AbxMode::WithinSpeaker => a.speaker == b.speaker && a.speaker == x.speaker,
            AbxMode::AcrossSpeaker => a.speaker == b.speaker && a.speaker != x.speaker,
            AbxMode::AcrossContext => a.context != x.context,
        }
    }
}

/// Indices into the item list the triplets were built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AbxTriplet {
    pub a: usize,
    pub b: usize,
    pub x: usize,
}

/// `(consonant of A/X, consonant of B)`; both share a manner.
pub type Contrast = (String, String);

#[derive(Clone, Debug, Default)]
pub struct TripletSet {
    pub triplets: Vec<AbxTriplet>,
    /// Contrasts without enough items on one side.
    pub skipped: Vec<Contrast>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TripletOptions {
    /// Keep at most this many triplets per contrast, sampled with `seed`.
    pub cap_per_contrast: Option<usize>,
    pub seed: u64,
}

/// All triplets (A, B, X) where A and X are distinct tokens of one
/// consonant and B is a consonant of the same manner and another place,
/// filtered by `mode`. Ordered by contrast then index.
pub fn build_abx_triplets(items: &[VcvItem], mode: AbxMode, opts: &TripletOptions) -> TripletSet {
    let mut by_consonant: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        by_consonant.entry(&it.consonant).or_default().push(i);
    }
    let mut set = TripletSet::default();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for (ca, ia) in &by_consonant {
        for (cb, ib) in &by_consonant {
            let (pa, pb) = (&items[ia[0]], &items[ib[0]]);
            if pa.manner != pb.manner || pa.place == pb.place {
                continue;
            }
            if ia.len() < 2 || ib.is_empty() {
                set.skipped.push((ca.to_string(), cb.to_string()));
                continue;
            }
            let mut found = Vec::new();
            for &a in ia {
                for &x in ia {
                    if a == x {
                        continue;
                    }
                    for &b in ib {
                        if mode.admits(&items[a], &items[b], &items[x]) {
                            found.push(AbxTriplet { a, b, x });
                        }
                    }
                }
            }
            if found.is_empty() {
                set.skipped.push((ca.to_string(), cb.to_string()));
                continue;
            }
            if let Some(cap) = opts.cap_per_contrast {
                if found.len() > cap {
                    found.shuffle(&mut rng);
                    found.truncate(cap);
                    found.sort();
                }
            }
            set.triplets.extend(found);
        }
    }
    set
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastScore {
    pub contrast: Contrast,
    pub n: usize,
    pub ties: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AbxReport {
    pub score: f64,
    pub n: usize,
    pub ties: usize,
    pub per_contrast: Vec<ContrastScore>,
}

/// Fraction of triplets with `d(A,X) < d(B,X)`, ties counting one half.
/// `repr[i]` is item `i` in the representation under test; `None` marks an
/// item that could not be rendered.
pub fn abx_score(items: &[VcvItem], triplets: &[AbxTriplet], repr: &[Option<RealMatrix>]) -> Result<AbxReport> {
    if triplets.is_empty() {
        return Err(Error::EmptySequence("no ABX triplets".into()));
    }
    if repr.len() != items.len() {
        return Err(Error::Dimension(format!(
            "{} representations for {} items",
            repr.len(),
            items.len()
        )));
    }
    let get = |i: usize| {
        repr[i]
            .as_ref()
            .ok_or_else(|| Error::MissingItem(format!("no representation for {}", items[i].key())))
    };
    let mut cache: HashMap<(usize, usize), f64> = HashMap::new();
    let mut dist = |i: usize, j: usize| -> Result<f64> {
        if let Some(d) = cache.get(&(i, j)) {
            return Ok(*d);
        }
        let d = dtw_distance(get(i)?, get(j)?)?;
        cache.insert((i, j), d);
        Ok(d)
    };
    let mut acc: BTreeMap<Contrast, (usize, usize, f64)> = BTreeMap::new();
    for t in triplets {
        let dax = dist(t.a, t.x)?;
        let dbx = dist(t.b, t.x)?;
        let credit = if dax < dbx {
            1.0
        } else if dax == dbx {
            0.5
        } else {
            0.0
        };
        let e = acc
            .entry((items[t.a].consonant.clone(), items[t.b].consonant.clone()))
            .or_insert((0, 0, 0.0));
        e.0 += 1;
        e.1 += usize::from(dax == dbx);
        e.2 += credit;
    }
    let per_contrast: Vec<ContrastScore> = acc
        .into_iter()
        .map(|(contrast, (n, ties, credit))| ContrastScore {
            contrast,
            n,
            ties,
            score: credit / n as f64,
        })
        .collect();
    let n = triplets.len();
    let ties = per_contrast.iter().map(|c| c.ties).sum();
    let score = per_contrast.iter().map(|c| c.score * c.n as f64).sum::<f64>() / n as f64;
    Ok(AbxReport {
        score,
        n,
        ties,
        per_contrast,
    })
}

#[derive(Clone, Debug)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.05,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

/// Linear classifier `argmax(x W + b)`.
#[derive(Clone, Debug)]
pub struct ProbeModel {
    pub weight: RealMatrix,
    pub bias: Vec<f64>,
    /// Training cross-entropy per epoch.
    pub log: Vec<f64>,
}

impl ProbeModel {
    pub fn n_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let scores = self.scores(x);
        let mut best = 0;
        for (k, s) in scores.iter().enumerate() {
            if *s > scores[best] {
                best = k;
            }
        }
        best
    }

    fn scores(&self, x: &[f64]) -> Vec<f64> {
        (0..self.bias.len())
            .map(|k| self.bias[k] + x.iter().enumerate().map(|(d, v)| v * self.weight.get(d, k)).sum::<f64>())
            .collect()
    }
}

fn softmax_in_place(s: &mut [f64]) {
    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in s.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in s.iter_mut() {
        *v /= z;
    }
}

/// Multinomial logistic regression trained full-batch with Adam on
/// cross-entropy plus L2 weight decay. Inputs are standardized internally
/// and the scaling is folded back into the returned weights.
pub fn train_probe(features: &RealMatrix, labels: &[usize], n_classes: usize, cfg: &ProbeConfig) -> Result<ProbeModel> {
    let (n, d) = features.shape();
    if labels.len() != n {
        return Err(Error::Dimension(format!("{n} frames vs {} labels", labels.len())));
    }
    if n_classes < 2 {
        return Err(Error::LabelCoverage(format!("need at least two classes, got {n_classes}")));
    }
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        if l >= n_classes {
            return Err(Error::LabelCoverage(format!("label {l} outside 0..{n_classes}")));
        }
        counts[l] += 1;
    }
    if let Some(k) = counts.iter().position(|c| *c == 0) {
        return Err(Error::LabelCoverage(format!("class {k} has no training frames")));
    }
    features.ensure_finite("probe features")?;

    let mean = features.column_means();
    let std: Vec<f64> = (0..d)
        .map(|j| {
            let v = (0..n).map(|r| (features.get(r, j) - mean[j]).powi(2)).sum::<f64>() / n as f64;
            if v > 1e-24 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let xs = RealMatrix::from_fn(n, d, |r, j| (features.get(r, j) - mean[j]) / std[j]);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ParameterSet::new();
    params.insert("w", uniform_matrix(&mut rng, d, n_classes, 0.01))?;
    params.insert("b", RealMatrix::zeros(1, n_classes))?;
    let mut opt = OptimizerState::adam(cfg.lr)?;
    let mut log = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let w = params.get("w")?.clone();
        let b = params.get("b")?.clone();
        let mut p = xs.matmul(&w)?;
        let mut loss = 0.0;
        for r in 0..n {
            let row = p.row_mut(r);
            for (k, v) in row.iter_mut().enumerate() {
                *v += b.get(0, k);
            }
            softmax_in_place(row);
            loss -= row[labels[r]].max(1e-300).ln();
            row[labels[r]] -= 1.0;
        }
        p.scale_in_place(1.0 / n as f64);
        let mut gw = xs.transpose().matmul(&p)?;
        let mut wd = w.clone();
        wd.scale_in_place(cfg.weight_decay);
        gw.add_assign(&wd);
        let gb = RealMatrix::row_vector(&p.column_means().iter().map(|v| v * n as f64).collect::<Vec<_>>())?;
        let mut g = Gradients::new();
        g.add("w", gw);
        g.add("b", gb);
        params.clear_grads();
        params.accumulate(&g)?;
        adam_step(&mut params, &mut opt)?;
        let l = loss / n as f64;
        if !l.is_finite() {
            return Err(Error::Divergence { step: log.len(), loss: l });
        }
        log.push(l);
    }
    let w = params.get("w")?;
    let b = params.get("b")?;
    let weight = RealMatrix::from_fn(d, n_classes, |j, k| w.get(j, k) / std[j]);
    let bias = (0..n_classes)
        .map(|k| b.get(0, k) - (0..d).map(|j| mean[j] * w.get(j, k) / std[j]).sum::<f64>())
        .collect();
    Ok(ProbeModel { weight, bias, log })
}

/// Fraction of held-out frames classified correctly.
pub fn probe_accuracy(model: &ProbeModel, features: &RealMatrix, labels: &[usize]) -> Result<f64> {
    if features.rows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} frames vs {} labels",
            features.rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptySequence("no held-out frames".into()));
    }
    if features.cols() != model.weight.rows() {
        return Err(Error::Dimension(format!(
            "probe expects {} dims, got {}",
            model.weight.rows(),
            features.cols()
        )));
    }
    let correct = (0..labels.len())
        .filter(|&r| model.predict(features.row(r)) == labels[r])
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Unit-cost Levenshtein distance between token sequences.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `(S + D + I) / len(reference)`.
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::UndefinedWer);
    }
    Ok(edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}

/// Whitespace tokenization of transcript text.
pub fn tokens(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}
