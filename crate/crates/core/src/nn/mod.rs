//! Small dense networks with hand-written backward passes, in `f64`.
//!
//! Parameters of a model live in one flat buffer ([`Params`]) described by a
//! named layout, so optimizers, checkpoints and gradient checks all work on
//! plain slices.

pub mod nlu;
pub mod ops;
pub mod policy;
pub mod train;

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("token id {id} is outside the vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("sequence of {len} tokens exceeds the context length {max}")]
    TooLong { len: usize, max: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("invalid model configuration: {0}")]
    BadConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat parameter buffer plus its named layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    pub data: Vec<f64>,
    pub specs: Vec<ParamSpec>,
}

impl Params {
    /// Reserves a named block and returns its range.
    pub fn add(&mut self, name: &str, shape: &[usize]) -> Range<usize> {
        let spec = ParamSpec { name: name.to_string(), shape: shape.to_vec(), offset: self.data.len() };
        let r = spec.range();
        self.data.resize(r.end, 0.0);
        self.specs.push(spec);
        r
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn spec(&self, name: &str) -> Option<&ParamSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    /// Named arrays as `(name, shape, values)`, in layout order.
    pub fn named(&self) -> impl Iterator<Item = (&str, &[usize], &[f64])> {
        self.specs.iter().map(|s| (s.name.as_str(), s.shape.as_slice(), &self.data[s.range()]))
    }

    /// Overwrites values from named arrays, checking every name and shape against the layout.
    pub fn load_named<'a, I>(&mut self, arrays: I) -> Result<(), ModelError>
    where
        I: IntoIterator<Item = (&'a str, &'a [usize], &'a [f64])>,
    {
        let mut seen = alloc::vec![false; self.specs.len()];
        for (name, shape, values) in arrays {
            let k = self.specs.iter().position(|s| s.name == name).ok_or_else(|| ModelError::MissingParam(name.to_string()))?;
            let spec = &self.specs[k];
            if spec.shape != shape || values.len() != spec.len() {
                return Err(ModelError::ShapeMismatch { name: name.to_string(), expected: spec.shape.clone(), found: shape.to_vec() });
            }
            let r = spec.range();
            self.data[r].copy_from_slice(values);
            seen[k] = true;
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(ModelError::MissingParam(self.specs[k].name.clone()));
        }
        Ok(())
    }
}

/// Standard normal draw via Box-Muller.
pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

pub fn init_normal<R: Rng + ?Sized>(slice: &mut [f64], std: f64, rng: &mut R) {
    for x in slice {
        *x = normal(rng) * std;
    }
}

/// Linear decay from `base` at step 0 to 0 at `total` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSchedule {
    pub base: f64,
    pub total: usize,
}

impl LinearSchedule {
    pub fn at(&self, step: usize) -> f64 {
        if self.total == 0 {
            return self.base;
        }
        self.base * (1.0 - (step as f64 / self.total as f64)).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: Some(1.0) }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    lr_scale: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        Adam { config, m: alloc::vec![0.0; n], v: alloc::vec![0.0; n], t: 0, lr_scale: alloc::vec![1.0; n] }
    }

    /// Multiplies the learning rate of the parameters in `range` by `factor`.
    pub fn scale_lr(&mut self, range: core::ops::Range<usize>, factor: f64) {
        self.lr_scale[range].fill(factor);
    }

    /// One update; returns the pre-clip gradient norm.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> f64 {
        let norm = libm::sqrt(grads.iter().map(|g| g * g).sum::<f64>());
        let scale = match self.config.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.t += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let bc1 = 1.0 - libm::pow(beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(beta2, self.t as f64);
        for i in 0..params.len() {
            let g = grads[i] * scale;
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * self.lr_scale[i] * mh / (libm::sqrt(vh) + eps);
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_decays_to_zero() {
        let s = LinearSchedule { base: 1e-3, total: 10 };
        assert_eq!(s.at(0), 1e-3);
        assert!((s.at(5) - 5e-4).abs() < 1e-18);
        assert_eq!(s.at(10), 0.0);
        assert_eq!(s.at(12), 0.0);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = [3.0, -2.0];
        let mut opt = Adam::new(2, AdamConfig { clip_norm: None, ..Default::default() });
        for _ in 0..2000 {
            let g = [2.0 * p[0], 2.0 * p[1]];
            opt.step(&mut p, &g, 0.05);
        }
        assert!(p[0].abs() < 1e-3 && p[1].abs() < 1e-3, "{p:?}");
    }

    #[test]
    fn load_named_checks_shapes() {
        let mut a = Params::default();
        a.add("w", &[2, 3]);
        a.add("b", &[3]);
        a.data.iter_mut().enumerate().for_each(|(i, x)| *x = i as f64);
        let mut b = Params::default();
        b.add("w", &[2, 3]);
        b.add("b", &[3]);
        let arrays: alloc::vec::Vec<_> = a.named().collect();
        b.load_named(arrays.iter().copied()).unwrap();
        assert_eq!(a, b);
        let bad = [("w", &[3usize, 2][..], &a.data[0..6])];
        assert!(matches!(b.load_named(bad), Err(ModelError::ShapeMismatch { .. })));
        let partial = [("w", &[2usize, 3][..], &a.data[0..6])];
        assert!(matches!(b.load_named(partial), Err(ModelError::MissingParam(_))));
    }
}
