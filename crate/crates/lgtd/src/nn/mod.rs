//! Minimal CPU neural-network toolkit with explicit backward passes.
//!
//! All tensors are `f64` ndarrays. Parameters live in a flat [`ParamStore`]
//! arena; layers hold [`ParamId`] handles into it. Gradients accumulate in a
//! [`Grads`] buffer that mirrors the store index-for-index, which keeps the
//! model immutable during forward/backward and pins the accumulation order
//! (parameters are always visited in registration order).
//!
//! Every forward returns the output plus a context struct holding whatever
//! the matching backward needs. There is no graph or tape; the composition
//! order is written out by hand in each module.

pub mod attention;
pub mod conv;
pub mod deform;
pub mod ops;
pub mod resblock;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Flat arena of named parameter tensors.
#[derive(Debug, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    vals: Vec<ArrayD<f64>>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<f64>) -> ParamId {
        let name = name.into();
        debug_assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.vals.push(value);
        ParamId(self.vals.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<f64> {
        &self.vals[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.vals[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.vals.iter().map(|v| v.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.vals.iter())
    }

    pub fn values(&self) -> &[ArrayD<f64>] {
        &self.vals
    }

    pub fn values_mut(&mut self) -> &mut [ArrayD<f64>] {
        &mut self.vals
    }
}

/// Gradient buffer mirroring a [`ParamStore`] index-for-index.
#[derive(Debug, Clone)]
pub struct Grads {
    vals: Vec<ArrayD<f64>>,
}

impl Grads {
    /// Zero gradients with the same shapes as `store`.
    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads {
            vals: store
                .vals
                .iter()
                .map(|v| ArrayD::zeros(v.raw_dim()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<f64> {
        &self.vals[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.vals[id.0]
    }

    pub fn values(&self) -> &[ArrayD<f64>] {
        &self.vals
    }

    pub fn values_mut(&mut self) -> &mut [ArrayD<f64>] {
        &mut self.vals
    }

    pub fn reset(&mut self) {
        for g in &mut self.vals {
            g.fill(0.0);
        }
    }

    /// `self += other`, entry by entry.
    pub fn accumulate(&mut self, other: &Grads) {
        assert_eq!(self.vals.len(), other.vals.len());
        for (a, b) in self.vals.iter_mut().zip(other.vals.iter()) {
            *a += b;
        }
    }

    /// Scale every gradient by `s`.
    pub fn scale(&mut self, s: f64) {
        for g in &mut self.vals {
            *g *= s;
        }
    }

    /// Euclidean norm over all entries; used in abort diagnostics.
    pub fn global_norm(&self) -> f64 {
        self.vals
            .iter()
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// Standard normal sample via Box-Muller. Kept in-crate so initialization is
/// reproducible independent of any distribution crate's internals.
pub fn sample_normal(rng: &mut ChaCha12Rng) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        if u1 <= f64::MIN_POSITIVE {
            continue;
        }
        let u2: f64 = rng.gen();
        return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    }
}

/// He-normal initialization: N(0, sqrt(2 / fan_in)).
pub fn he_normal(rng: &mut ChaCha12Rng, shape: &[usize], fan_in: usize) -> ArrayD<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| sample_normal(rng) * std).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape/product mismatch")
}

/// Xavier-uniform initialization: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
pub fn xavier_uniform(
    rng: &mut ChaCha12Rng,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> ArrayD<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * a).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape/product mismatch")
}

pub fn zeros(shape: &[usize]) -> ArrayD<f64> {
    ArrayD::zeros(IxDyn(shape))
}

pub fn ones(shape: &[usize]) -> ArrayD<f64> {
    ArrayD::from_elem(IxDyn(shape), 1.0)
}
