use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::RealMatrix;
use crate::{Error, Result};

/// A trainable tensor and its gradient slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub value: RealMatrix,
    /// `None` until a backward pass populates it; cleared after each step.
    pub grad: Option<RealMatrix>,
}

/// Named, ordered collection of parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    entries: IndexMap<String, Parameter>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: RealMatrix) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        self.entries.insert(name, Parameter { value, grad: None });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&RealMatrix> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Schema(format!("no parameter named {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut RealMatrix> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::Schema(format!("no parameter named {name}")))
    }

    pub fn parameter(&self, name: &str) -> Option<&Parameter> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total scalar count.
    pub fn num_values(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    /// Add `grads` into the gradient slots. Names absent from `grads` keep
    /// their slot untouched; unknown names are an error.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (name, g) in grads.iter() {
            let p = self
                .entries
                .get_mut(name)
                .ok_or_else(|| Error::Schema(format!("gradient for unknown parameter {name}")))?;
            if g.shape() != p.value.shape() {
                return Err(Error::Dimension(format!(
                    "gradient for {name} is {:?}, parameter is {:?}",
                    g.shape(),
                    p.value.shape()
                )));
            }
            match &mut p.grad {
                Some(slot) => slot.add_assign(g),
                None => p.grad = Some(g.clone()),
            }
        }
        Ok(())
    }

    /// Populate every gradient slot with zeros where no gradient flowed.
    pub fn fill_missing_grads(&mut self) {
        for p in self.entries.values_mut() {
            if p.grad.is_none() {
                let (r, c) = p.value.shape();
                p.grad = Some(RealMatrix::zeros(r, c));
            }
        }
    }

    pub fn clear_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad = None;
        }
    }

    /// Order-sensitive 64-bit FNV-1a digest over names, shapes and value bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        for (name, p) in &self.entries {
            h.write(name.as_bytes());
            h.write(&(p.value.rows() as u64).to_le_bytes());
            h.write(&(p.value.cols() as u64).to_le_bytes());
            for v in p.value.as_slice() {
                h.write(&v.to_bits().to_le_bytes());
            }
        }
        h.finish()
    }
}

/// Gradients keyed by parameter name, in first-touched order.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    entries: IndexMap<String, RealMatrix>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&RealMatrix> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut RealMatrix> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &RealMatrix)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub(crate) fn add(&mut self, name: &str, g: RealMatrix) {
        match self.entries.get_mut(name) {
            Some(slot) => slot.add_assign(&g),
            None => {
                self.entries.insert(name.to_string(), g);
            }
        }
    }

    /// Element-wise sum, preserving `self`'s order then new names.
    pub fn merge(&mut self, other: Gradients) {
        for (name, g) in other.entries {
            self.add(&name, g);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.entries.values_mut() {
            g.scale_in_place(k);
        }
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

/// Uniform samples in `[-bound, bound]`.
pub fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> RealMatrix {
    RealMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..=bound))
}
