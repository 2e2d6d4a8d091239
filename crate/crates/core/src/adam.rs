//! Adam with bias correction, plus the small amount of vector arithmetic the
//! trainers need over parameter sets.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A fixed collection of flat `f64` tensors (weights, biases, attention…).
///
/// Gradients are represented by a value of the same type, so shapes line up
/// tensor by tensor.
pub trait ParamTensors {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn tensor_lens(&self) -> Vec<usize> {
        self.tensors().iter().map(|t| t.len()).collect()
    }

    fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    /// Overwrites every entry from a flat buffer of matching total length.
    fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        debug_assert_eq!(offset, flat.len());
    }

    fn dot(&self, other: &Self) -> f64 {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .flat_map(|(a, b)| a.iter().zip(b.iter()))
            .map(|(x, y)| x * y)
            .sum()
    }

    fn l2_norm(&self) -> f64 {
        libm::sqrt(self.dot(self))
    }

    /// `self += scale · other`.
    fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zeroed moment buffers mirroring `params`, with the usual defaults
    /// `β₁ = 0.9`, `β₂ = 0.999`, `ε = 1e-8`.
    pub fn new<P: ParamTensors + ?Sized>(params: &P, lr: f64) -> Self {
        let lens = params.tensor_lens();
        Self {
            m: lens.iter().map(|&l| alloc::vec![0.0; l]).collect(),
            v: lens.iter().map(|&l| alloc::vec![0.0; l]).collect(),
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn step<P: ParamTensors + ?Sized>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grads = grads.tensors();
        let params = params.tensors_mut();
        let shapes_ok = params.len() == self.m.len()
            && grads.len() == self.m.len()
            && params
                .iter()
                .zip(&grads)
                .zip(&self.m)
                .all(|((p, g), m)| p.len() == m.len() && g.len() == m.len());
        if !shapes_ok {
            return Err(Error::ParamShapeMismatch);
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - libm::pow(self.beta1, t);
        let bc2 = 1.0 - libm::pow(self.beta2, t);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (libm::sqrt(v_hat) + self.eps);
            }
        }
        Ok(())
    }
}
