//! Label propagation schemes.
//!
//! Plain power iteration `Y⁽ᵏ⁺¹⁾ = T Y⁽ᵏ⁾`, the personalized PageRank
//! recurrence, and the adaptive propagator that mixes the propagation depths
//! of each node with learned attention weights
//! `γ_ik = softmax_k(aᵀ ReLU(W Y_i⁽ᵏ⁾))`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::adam::ParamTensors;
use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, DenseMatrix};
use crate::LabelMatrix;

/// Rows whose combined mass falls below this are treated as unreachable.
pub const MASS_THRESHOLD: f64 = 1e-8;

/// The propagated label matrices `Y⁽⁰⁾ … Y⁽ᴷ⁾`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationTrace {
    steps: Vec<LabelMatrix>,
}

impl PropagationTrace {
    /// Wraps precomputed steps; all must share one shape and at least one is required.
    pub fn from_steps(steps: Vec<LabelMatrix>) -> Result<Self> {
        let first = steps
            .first()
            .ok_or_else(|| Error::InvalidConfig("trace needs at least one step".into()))?
            .shape();
        for s in &steps {
            if s.shape() != first {
                return Err(Error::ShapeMismatch {
                    context: "trace steps",
                    left_rows: first.0,
                    left_cols: first.1,
                    right_rows: s.n_rows(),
                    right_cols: s.n_cols(),
                });
            }
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[LabelMatrix] {
        &self.steps
    }

    /// Number of propagation steps `K` (the trace holds `K + 1` matrices).
    pub fn k_max(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.steps[0].n_rows()
    }

    pub fn n_classes(&self) -> usize {
        self.steps[0].n_cols()
    }

    pub fn last(&self) -> &LabelMatrix {
        &self.steps[self.steps.len() - 1]
    }

    /// Nodes that hold label mass at some depth.
    pub fn reachable_mask(&self) -> Vec<bool> {
        (0..self.n_nodes())
            .map(|i| {
                self.steps
                    .iter()
                    .any(|s| s.row(i).iter().sum::<f64>() >= MASS_THRESHOLD)
            })
            .collect()
    }
}

/// Meta-learner parameters: attention vector `a ∈ Rᶜ` and weight `W ∈ Rᶜˣᶜ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatorParams {
    pub attn: Vec<f64>,
    pub weight: DenseMatrix,
}

impl PropagatorParams {
    pub fn zeros(classes: usize) -> Self {
        Self {
            attn: vec![0.0; classes],
            weight: DenseMatrix::zeros(classes, classes),
        }
    }

    /// Near-uniform attention: `a ~ U[-0.01, 0.01]`, `W = I + U[-0.01, 0.01]`.
    pub fn init<R: Rng + ?Sized>(classes: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(classes);
        for a in &mut p.attn {
            *a = rng.random_range(-0.01..=0.01);
        }
        for i in 0..classes {
            for j in 0..classes {
                let base = if i == j { 1.0 } else { 0.0 };
                p.weight.set(i, j, base + rng.random_range(-0.01..=0.01));
            }
        }
        p
    }

    pub fn classes(&self) -> usize {
        self.attn.len()
    }
}

impl ParamTensors for PropagatorParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.attn, self.weight.data()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.attn, self.weight.data_mut()]
    }
}

/// Personalized PageRank settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PprConfig {
    /// Teleport probability α.
    pub alpha: f64,
    pub k_max: usize,
}

/// One-hot rows for the given `(node, class)` pairs; every other row is zero.
pub fn seed_labels(train_labels: &[(usize, usize)], n: usize, classes: usize) -> Result<LabelMatrix> {
    let mut y = DenseMatrix::zeros(n, classes);
    for &(node, class) in train_labels {
        if node >= n {
            return Err(Error::NodeOutOfRange { node, n });
        }
        if class >= classes {
            return Err(Error::ClassOutOfRange {
                node,
                class,
                classes,
            });
        }
        y.row_mut(node).fill(0.0);
        y.set(node, class, 1.0);
    }
    Ok(y)
}

pub fn power_iterate(t: &CsrMatrix, y0: &LabelMatrix, k_max: usize) -> Result<PropagationTrace> {
    check_square_compatible(t, y0)?;
    let mut steps = Vec::with_capacity(k_max + 1);
    steps.push(y0.clone());
    for k in 0..k_max {
        let next = t.spmm(&steps[k])?;
        steps.push(next);
    }
    Ok(PropagationTrace { steps })
}

/// `K` iterations of `Y⁽ᵏ⁺¹⁾ = (1 − α) T Y⁽ᵏ⁾ + α Y⁽⁰⁾`.
pub fn ppr_iterate(t: &CsrMatrix, y0: &LabelMatrix, cfg: PprConfig) -> Result<LabelMatrix> {
    if !(0.0..=1.0).contains(&cfg.alpha) {
        return Err(Error::InvalidAlpha(cfg.alpha));
    }
    check_square_compatible(t, y0)?;
    let mut y = y0.clone();
    for _ in 0..cfg.k_max {
        let mut next = t.spmm(&y)?;
        if cfg.alpha != 0.0 {
            for (n, s) in next.data_mut().iter_mut().zip(y0.data()) {
                *n = (1.0 - cfg.alpha) * *n + cfg.alpha * s;
            }
        }
        y = next;
    }
    Ok(y)
}

fn check_square_compatible(t: &CsrMatrix, y: &LabelMatrix) -> Result<()> {
    if t.n_rows() != t.n_cols() || t.n_cols() != y.n_rows() {
        return Err(Error::ShapeMismatch {
            context: "propagation",
            left_rows: t.n_rows(),
            left_cols: t.n_cols(),
            right_rows: y.n_rows(),
            right_cols: y.n_cols(),
        });
    }
    Ok(())
}

fn check_params(params: &PropagatorParams, trace: &PropagationTrace) -> Result<()> {
    let c = trace.n_classes();
    if params.attn.len() != c || params.weight.shape() != (c, c) {
        return Err(Error::ShapeMismatch {
            context: "propagator params",
            left_rows: params.weight.n_rows(),
            left_cols: params.attn.len(),
            right_rows: c,
            right_cols: c,
        });
    }
    Ok(())
}

fn check_node(trace: &PropagationTrace, node: usize) -> Result<()> {
    if node >= trace.n_nodes() {
        return Err(Error::NodeOutOfRange {
            node,
            n: trace.n_nodes(),
        });
    }
    Ok(())
}

/// Per-depth hidden activations `z = W y` for one node, flattened `(K+1) × c`.
fn pre_activations(params: &PropagatorParams, trace: &PropagationTrace, node: usize) -> Vec<f64> {
    let c = params.classes();
    let mut z = vec![0.0; trace.steps.len() * c];
    for (k, step) in trace.steps.iter().enumerate() {
        let y = step.row(node);
        for j in 0..c {
            z[k * c + j] = params
                .weight
                .row(j)
                .iter()
                .zip(y)
                .map(|(w, v)| w * v)
                .sum();
        }
    }
    z
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = libm::exp(*x - max);
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn gamma_from_pre(params: &PropagatorParams, z: &[f64]) -> Vec<f64> {
    let c = params.classes();
    let mut gamma: Vec<f64> = z
        .chunks_exact(c)
        .map(|zk| {
            zk.iter()
                .zip(&params.attn)
                .map(|(&zj, a)| a * zj.max(0.0))
                .sum()
        })
        .collect();
    softmax_in_place(&mut gamma);
    gamma
}

/// Attention weights `γ_i·` over the `K + 1` depths of one node.
pub fn attention_weights(
    params: &PropagatorParams,
    trace: &PropagationTrace,
    node: usize,
) -> Result<Vec<f64>> {
    check_params(params, trace)?;
    check_node(trace, node)?;
    Ok(gamma_from_pre(params, &pre_activations(params, trace, node)))
}

/// Renormalized pseudo-labels for a list of nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    /// One row per requested node; rows of unreachable nodes are zero.
    pub labels: LabelMatrix,
    /// Combined row mass before renormalization.
    pub mass: Vec<f64>,
    pub unreachable: Vec<bool>,
}

impl PseudoLabels {
    /// Indices (into the requested node list) of usable rows.
    pub fn reachable_positions(&self) -> Vec<usize> {
        (0..self.unreachable.len())
            .filter(|&p| !self.unreachable[p])
            .collect()
    }
}

/// `Ŷ_i = Σ_k γ_ik Y_i⁽ᵏ⁾`, rescaled so each row sums to one.
pub fn adaptive_propagate(
    params: &PropagatorParams,
    trace: &PropagationTrace,
    nodes: &[usize],
) -> Result<PseudoLabels> {
    check_params(params, trace)?;
    let c = trace.n_classes();
    let mut labels = DenseMatrix::zeros(nodes.len(), c);
    let mut mass = Vec::with_capacity(nodes.len());
    let mut unreachable = Vec::with_capacity(nodes.len());
    for (p, &node) in nodes.iter().enumerate() {
        check_node(trace, node)?;
        let gamma = gamma_from_pre(params, &pre_activations(params, trace, node));
        let row = labels.row_mut(p);
        for (g, step) in gamma.iter().zip(&trace.steps) {
            for (o, y) in row.iter_mut().zip(step.row(node)) {
                *o += g * y;
            }
        }
        let s: f64 = row.iter().sum();
        mass.push(s);
        if s < MASS_THRESHOLD {
            row.fill(0.0);
            unreachable.push(true);
        } else {
            row.iter_mut().for_each(|v| *v /= s);
            unreachable.push(false);
        }
    }
    Ok(PseudoLabels {
        labels,
        mass,
        unreachable,
    })
}

/// Gradient of `J(adaptive_propagate(φ, trace, nodes))` with respect to φ,
/// given the cotangent `∂J/∂Ŷ` (one row per node).
///
/// Unreachable rows contribute nothing. The ReLU derivative at zero is zero.
pub fn propagator_grad(
    params: &PropagatorParams,
    trace: &PropagationTrace,
    nodes: &[usize],
    cotangent: &DenseMatrix,
) -> Result<PropagatorParams> {
    check_params(params, trace)?;
    let c = trace.n_classes();
    if cotangent.shape() != (nodes.len(), c) {
        return Err(Error::ShapeMismatch {
            context: "propagator cotangent",
            left_rows: nodes.len(),
            left_cols: c,
            right_rows: cotangent.n_rows(),
            right_cols: cotangent.n_cols(),
        });
    }
    let depth = trace.steps.len();
    let mut grad = PropagatorParams::zeros(c);
    let mut raw = vec![0.0; c];
    let mut d_raw = vec![0.0; c];
    let mut d_gamma = vec![0.0; depth];
    for (p, &node) in nodes.iter().enumerate() {
        check_node(trace, node)?;
        let g = cotangent.row(p);
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        let z = pre_activations(params, trace, node);
        let gamma = gamma_from_pre(params, &z);

        raw.fill(0.0);
        for (gk, step) in gamma.iter().zip(&trace.steps) {
            for (r, y) in raw.iter_mut().zip(step.row(node)) {
                *r += gk * y;
            }
        }
        let s: f64 = raw.iter().sum();
        if s < MASS_THRESHOLD {
            continue;
        }
        // out = raw / s  ⇒  ∂J/∂raw = (g − ⟨g, out⟩) / s
        let g_dot_out: f64 = g.iter().zip(&raw).map(|(gj, r)| gj * r / s).sum();
        for (d, gj) in d_raw.iter_mut().zip(g) {
            *d = (gj - g_dot_out) / s;
        }
        for (k, step) in trace.steps.iter().enumerate() {
            d_gamma[k] = d_raw.iter().zip(step.row(node)).map(|(d, y)| d * y).sum();
        }
        let mean: f64 = gamma.iter().zip(&d_gamma).map(|(a, b)| a * b).sum();
        for (k, step) in trace.steps.iter().enumerate() {
            let d_score = gamma[k] * (d_gamma[k] - mean);
            if d_score == 0.0 {
                continue;
            }
            let y = step.row(node);
            for j in 0..c {
                let zj = z[k * c + j];
                if zj <= 0.0 {
                    continue;
                }
                grad.attn[j] += d_score * zj;
                let dz = d_score * params.attn[j];
                for (w, yl) in grad.weight.row_mut(j).iter_mut().zip(y) {
                    *w += dz * yl;
                }
            }
        }
    }
    Ok(grad)
}
