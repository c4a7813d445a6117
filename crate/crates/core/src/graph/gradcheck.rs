use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Gradients, ParameterSet};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Pass iff every checked coordinate has relative error below this.
    pub tol: f64,
    /// Denominator floor: `|a - n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    /// Check at most this many coordinates per entry (seeded sample).
    pub max_coords_per_entry: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-5,
            floor: 1e-6,
            max_coords_per_entry: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EntryReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Flat indices whose relative error reached `tol`.
    pub flagged: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub entries: Vec<EntryReport>,
    pub max_rel_error: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn entry(&self, name: &str) -> Option<&EntryReport> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// `(entry, flat index)` for every flagged coordinate.
    pub fn flagged(&self) -> Vec<(String, usize)> {
        self.entries
            .iter()
            .flat_map(|e| e.flagged.iter().map(move |i| (e.name.clone(), *i)))
            .collect()
    }
}

/// Compare analytic gradients from `f` against central differences.
///
/// `f` returns the loss and its gradients for the given parameters. It is
/// evaluated twice up front; differing losses mean `f` is not deterministic
/// and the check is refused.
pub fn grad_check<F>(f: F, params: &ParameterSet, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&ParameterSet) -> Result<(f64, Gradients)>,
{
    if !(1e-6..=1e-3).contains(&cfg.step) {
        return Err(Error::Config(format!(
            "finite-difference step {} outside [1e-6, 1e-3]",
            cfg.step
        )));
    }
    let (loss_a, analytic) = f(params)?;
    let (loss_b, _) = f(params)?;
    if loss_a.to_bits() != loss_b.to_bits() {
        return Err(Error::Contract(format!(
            "function is not deterministic: {loss_a} vs {loss_b}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut probe = params.clone();
    let mut entries = Vec::new();
    for name in params.names() {
        let n = params.get(name)?.len();
        let coords: Vec<usize> = match cfg.max_coords_per_entry {
            Some(k) if k < n => {
                let mut v = sample(&mut rng, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        let grad = analytic.get(name);
        let mut report = EntryReport {
            name: name.to_string(),
            checked: coords.len(),
            max_rel_error: 0.0,
            flagged: Vec::new(),
        };
        for i in coords {
            let orig = params.get(name)?.as_slice()[i];
            probe.get_mut(name)?.as_mut_slice()[i] = orig + cfg.step;
            let up = f(&probe)?.0;
            probe.get_mut(name)?.as_mut_slice()[i] = orig - cfg.step;
            let down = f(&probe)?.0;
            probe.get_mut(name)?.as_mut_slice()[i] = orig;

            let numeric = (up - down) / (2.0 * cfg.step);
            let a = grad.map_or(0.0, |g| g.as_slice()[i]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
            }
            if !(rel < cfg.tol) {
                report.flagged.push(i);
            }
        }
        entries.push(report);
    }
    let max_rel_error = entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
    let passed = entries.iter().all(|e| e.flagged.is_empty());
    Ok(GradCheckReport {
        entries,
        max_rel_error,
        passed,
    })
}
