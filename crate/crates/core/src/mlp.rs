//! The feature-label transformer: an MLP with ReLU hidden layers, inverted
//! dropout on every layer input, and a softmax output. Backprop is written out
//! by hand for soft-target cross-entropy plus an L2 penalty on the first
//! layer's weights.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::adam::ParamTensors;
use crate::error::{Error, Result};
use crate::sparse::DenseMatrix;
use crate::LabelMatrix;

/// Probabilities are clamped to this before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

/// Fully connected layer computing `x W + b`; `weight` is `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.n_rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.n_cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub dropout_rate: f64,
}

impl MlpParams {
    /// All-zero parameters for layer widths `sizes = [in, hidden.., classes]`.
    pub fn zeros(sizes: &[usize], dropout_rate: f64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "mlp needs at least two non-zero layer widths, got {sizes:?}"
            )));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidConfig(alloc::format!(
                "dropout rate {dropout_rate} outside [0, 1)"
            )));
        }
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weight: DenseMatrix::zeros(w[0], w[1]),
                bias: vec![0.0; w[1]],
            })
            .collect();
        Ok(Self {
            layers,
            dropout_rate,
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], dropout_rate: f64, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(sizes, dropout_rate)?;
        for layer in &mut p.layers {
            let limit = libm::sqrt(6.0 / (layer.in_dim() + layer.out_dim()) as f64);
            for w in layer.weight.data_mut() {
                *w = rng.random_range(-limit..=limit);
            }
        }
        Ok(p)
    }

    /// Standard two-layer transformer `in → hidden → classes`.
    pub fn two_layer<R: Rng + ?Sized>(
        in_dim: usize,
        hidden_dim: usize,
        classes: usize,
        dropout_rate: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Self::init(&[in_dim, hidden_dim, classes], dropout_rate, rng)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].out_dim()
    }

    pub fn classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// A zero-valued parameter set of the same shape (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.scale(0.0);
        z
    }

    /// Order-sensitive hash of every parameter bit, used to detect stale caches.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |x: u64| {
            h ^= x;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for layer in &self.layers {
            mix(layer.in_dim() as u64);
            mix(layer.out_dim() as u64);
        }
        for t in self.tensors() {
            for v in t {
                mix(v.to_bits());
            }
        }
        h
    }
}

impl ParamTensors for MlpParams {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data_mut(), l.bias.as_mut_slice()])
            .collect()
    }
}

/// Inverted-dropout masks for the input of every layer, for a fixed batch.
///
/// Entries are `0` or `1 / (1 − rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub seed: u64,
    pub keep_masks: Vec<DenseMatrix>,
}

impl DropoutMask {
    pub fn sample(params: &MlpParams, rows: usize, seed: u64) -> Self {
        let mut rng = crate::seeded_rng(seed);
        let rate = params.dropout_rate;
        let keep = 1.0 / (1.0 - rate);
        let keep_masks = params
            .layers
            .iter()
            .map(|layer| {
                let mut m = DenseMatrix::zeros(rows, layer.in_dim());
                for v in m.data_mut() {
                    *v = if rate > 0.0 && rng.random::<f64>() < rate {
                        0.0
                    } else {
                        keep
                    };
                }
                m
            })
            .collect();
        Self { seed, keep_masks }
    }

    pub fn rows(&self) -> usize {
        self.keep_masks.first().map_or(0, DenseMatrix::n_rows)
    }
}

/// Activations recorded by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input fed to each layer's matmul (after ReLU and dropout).
    inputs: Vec<DenseMatrix>,
    /// Pre-activation of each layer.
    pre: Vec<DenseMatrix>,
    probs: DenseMatrix,
    mask: Option<DropoutMask>,
    fingerprint: u64,
}

impl ForwardCache {
    pub fn probs(&self) -> &DenseMatrix {
        &self.probs
    }

    /// Pre-activation of each layer, before ReLU or softmax.
    pub fn pre_activations(&self) -> &[DenseMatrix] {
        &self.pre
    }
}

fn shape_err(context: &'static str, l: (usize, usize), r: (usize, usize)) -> Error {
    Error::ShapeMismatch {
        context,
        left_rows: l.0,
        left_cols: l.1,
        right_rows: r.0,
        right_cols: r.1,
    }
}

/// `x · w + bias` (bias broadcast across rows).
fn affine(x: &DenseMatrix, w: &DenseMatrix, bias: &[f64]) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(x.n_rows(), w.n_cols());
    for r in 0..x.n_rows() {
        let o = out.row_mut(r);
        o.copy_from_slice(bias);
        for (k, &xv) in x.row(r).iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (ov, wv) in o.iter_mut().zip(w.row(k)) {
                *ov += xv * wv;
            }
        }
    }
    out
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &DenseMatrix) -> DenseMatrix {
    let mut out = logits.clone();
    for r in 0..out.n_rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Class probabilities for each input row. `mask = None` is evaluation mode.
pub fn forward(
    params: &MlpParams,
    x_rows: &DenseMatrix,
    mask: Option<&DropoutMask>,
) -> Result<(DenseMatrix, ForwardCache)> {
    if x_rows.n_cols() != params.in_dim() {
        return Err(shape_err(
            "mlp forward input",
            x_rows.shape(),
            params.layers[0].weight.shape(),
        ));
    }
    if let Some(m) = mask {
        let ok = m.keep_masks.len() == params.layers.len()
            && m
                .keep_masks
                .iter()
                .zip(&params.layers)
                .all(|(km, l)| km.shape() == (x_rows.n_rows(), l.in_dim()));
        if !ok {
            return Err(shape_err(
                "dropout mask",
                (m.rows(), m.keep_masks.len()),
                (x_rows.n_rows(), params.layers.len()),
            ));
        }
    }
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut current = x_rows.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        if l > 0 {
            current.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        }
        if let Some(m) = mask {
            for (v, k) in current.data_mut().iter_mut().zip(m.keep_masks[l].data()) {
                *v *= k;
            }
        }
        let z = affine(&current, &layer.weight, &layer.bias);
        inputs.push(core::mem::replace(&mut current, z.clone()));
        pre.push(z);
    }
    let probs = softmax_rows(&current);
    let cache = ForwardCache {
        inputs,
        pre,
        probs: probs.clone(),
        mask: mask.cloned(),
        fingerprint: params.fingerprint(),
    };
    Ok((probs, cache))
}

/// Mean over rows of `−Σ_k target_k · ln(max(prob_k, 1e-12))`.
pub fn soft_cross_entropy(probs: &DenseMatrix, targets: &LabelMatrix) -> Result<f64> {
    if probs.shape() != targets.shape() {
        return Err(shape_err("cross-entropy", probs.shape(), targets.shape()));
    }
    if probs.n_rows() == 0 {
        return Ok(0.0);
    }
    let total: f64 = probs
        .data()
        .iter()
        .zip(targets.data())
        .filter(|(_, &t)| t != 0.0)
        .map(|(&p, &t)| -t * libm::log(p.max(LOG_CLAMP)))
        .sum();
    Ok(total / probs.n_rows() as f64)
}

/// `∂ soft_cross_entropy / ∂ targets`, i.e. `−ln(max(p, 1e-12)) / rows`.
pub fn cross_entropy_target_grad(probs: &DenseMatrix) -> DenseMatrix {
    let scale = 1.0 / probs.n_rows().max(1) as f64;
    let mut out = probs.clone();
    out.data_mut()
        .iter_mut()
        .for_each(|p| *p = -libm::log(p.max(LOG_CLAMP)) * scale);
    out
}

/// `(λ / 2) · ‖W_first‖²_F`.
pub fn l2_penalty(params: &MlpParams, l2_lambda: f64) -> f64 {
    let w = params.layers[0].weight.data();
    0.5 * l2_lambda * w.iter().map(|v| v * v).sum::<f64>()
}

/// Gradient of `soft_cross_entropy + (λ/2)‖W_first‖²` for the batch in `cache`.
///
/// Targets need not be normalized: the logit gradient is `p · Σ_k y_k − y`.
pub fn backward(
    params: &MlpParams,
    cache: &ForwardCache,
    targets: &LabelMatrix,
    l2_lambda: f64,
) -> Result<MlpParams> {
    if cache.fingerprint != params.fingerprint() || cache.pre.len() != params.layers.len() {
        return Err(Error::StaleCache);
    }
    let probs = &cache.probs;
    if probs.shape() != targets.shape() {
        return Err(shape_err("backward targets", probs.shape(), targets.shape()));
    }
    let rows = probs.n_rows();
    let inv_n = if rows == 0 { 0.0 } else { 1.0 / rows as f64 };

    let mut delta = DenseMatrix::zeros(rows, probs.n_cols());
    for r in 0..rows {
        let y = targets.row(r);
        let mass: f64 = y.iter().sum();
        for (d, (p, t)) in delta.row_mut(r).iter_mut().zip(probs.row(r).iter().zip(y)) {
            *d = (p * mass - t) * inv_n;
        }
    }

    let mut grad = params.zeros_like();
    for l in (0..params.layers.len()).rev() {
        let input = &cache.inputs[l];
        let g = &mut grad.layers[l];
        for r in 0..rows {
            let d = delta.row(r);
            for (gb, dv) in g.bias.iter_mut().zip(d) {
                *gb += dv;
            }
            for (k, &xv) in input.row(r).iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                for (gw, dv) in g.weight.row_mut(k).iter_mut().zip(d) {
                    *gw += xv * dv;
                }
            }
        }
        if l == 0 {
            break;
        }
        // back through matmul, dropout, then ReLU of the previous layer
        let w = &params.layers[l].weight;
        let prev_pre = &cache.pre[l - 1];
        let mut next = DenseMatrix::zeros(rows, w.n_rows());
        for r in 0..rows {
            let d = delta.row(r);
            for k in 0..w.n_rows() {
                if prev_pre.get(r, k) <= 0.0 {
                    continue;
                }
                let mut s: f64 = w.row(k).iter().zip(d).map(|(a, b)| a * b).sum();
                if let Some(m) = &cache.mask {
                    s *= m.keep_masks[l].get(r, k);
                }
                next.set(r, k, s);
            }
        }
        delta = next;
    }

    if l2_lambda != 0.0 {
        let w = params.layers[0].weight.data();
        for (g, v) in grad.layers[0].weight.data_mut().iter_mut().zip(w) {
            *g += l2_lambda * v;
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn dense(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn zero_params_give_uniform() {
        let p = MlpParams::zeros(&[3, 4, 5], 0.3).unwrap();
        let x = dense(&[&[1.0, -2.0, 0.5], &[0.0, 3.0, 1.0]]);
        let (probs, _) = forward(&p, &x, None).unwrap();
        assert!(probs.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn hand_softmax_output() {
        // single layer mapping x = 1 to logits (0, ln 3)
        let mut p = MlpParams::zeros(&[1, 2], 0.0).unwrap();
        p.layers[0].weight.set(0, 1, 3f64.ln());
        let (probs, _) = forward(&p, &dense(&[&[1.0]]), None).unwrap();
        assert!((probs.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((probs.get(0, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let p = MlpParams::init(&[3, 8, 2], 0.3, &mut seeded_rng(4)).unwrap();
        let x = dense(&[&[1.0, -2.0, 0.5], &[0.0, 3.0, 1.0]]);
        let (a, _) = forward(&p, &x, None).unwrap();
        let (b, _) = forward(&p, &x, None).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn forward_shape_mismatch() {
        let p = MlpParams::zeros(&[3, 4, 2], 0.0).unwrap();
        assert!(matches!(
            forward(&p, &DenseMatrix::zeros(1, 2), None),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn cross_entropy_examples() {
        let ln2 = 2f64.ln();
        let half = dense(&[&[0.5, 0.5]]);
        assert!((soft_cross_entropy(&half, &dense(&[&[1.0, 0.0]])).unwrap() - ln2).abs() < 1e-15);
        assert!((soft_cross_entropy(&half, &half).unwrap() - ln2).abs() < 1e-15);
        let sure = dense(&[&[1.0, 0.0]]);
        assert!(soft_cross_entropy(&sure, &sure).unwrap().abs() < 1e-15);
        let wrong = soft_cross_entropy(&sure, &dense(&[&[0.0, 1.0]])).unwrap();
        assert!((wrong + LOG_CLAMP.ln()).abs() < 1e-12);
        assert!(soft_cross_entropy(&sure, &DenseMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn backward_targets_equal_probs_leaves_only_l2() {
        let p = MlpParams::init(&[3, 4, 2], 0.0, &mut seeded_rng(9)).unwrap();
        let x = dense(&[&[1.0, -2.0, 0.5], &[0.3, 3.0, 1.0]]);
        let (probs, cache) = forward(&p, &x, None).unwrap();
        let lambda = 0.1;
        let g = backward(&p, &cache, &probs, lambda).unwrap();
        for (gw, w) in g.layers[0].weight.data().iter().zip(p.layers[0].weight.data()) {
            assert!((gw - lambda * w).abs() < 1e-15);
        }
        assert!(g.layers[0].bias.iter().all(|v| v.abs() < 1e-15));
        assert!(g.layers[1].weight.data().iter().all(|v| v.abs() < 1e-15));
        assert!(g.layers[1].bias.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn backward_zero_input_kills_first_weight_grad() {
        let mut p = MlpParams::init(&[3, 4, 2], 0.0, &mut seeded_rng(10)).unwrap();
        p.layers[0].bias = vec![0.5, 0.2, 0.3, 0.1];
        let x = DenseMatrix::zeros(2, 3);
        let (_, cache) = forward(&p, &x, None).unwrap();
        let g = backward(&p, &cache, &dense(&[&[1.0, 0.0], &[0.0, 1.0]]), 0.0).unwrap();
        assert!(g.layers[0].weight.data().iter().all(|&v| v == 0.0));
        assert!(g.layers[1].bias.iter().any(|&v| v != 0.0));
        assert!(g.layers[0].bias.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn backward_rejects_stale_cache() {
        let mut p = MlpParams::init(&[3, 4, 2], 0.0, &mut seeded_rng(11)).unwrap();
        let x = dense(&[&[1.0, 0.0, 0.5]]);
        let (_, cache) = forward(&p, &x, None).unwrap();
        p.layers[1].bias[0] += 1e-3;
        assert_eq!(
            backward(&p, &cache, &dense(&[&[1.0, 0.0]]), 0.0).unwrap_err(),
            Error::StaleCache
        );
    }

    #[test]
    fn dropout_mask_entries_and_determinism() {
        let p = MlpParams::zeros(&[5, 6, 2], 0.3).unwrap();
        let m = DropoutMask::sample(&p, 7, 42);
        assert_eq!(m, DropoutMask::sample(&p, 7, 42));
        let keep = 1.0 / 0.7;
        for km in &m.keep_masks {
            assert!(km.data().iter().all(|&v| v == 0.0 || v == keep));
        }
        assert_eq!(m.keep_masks[1].shape(), (7, 6));
    }

    #[test]
    fn dropout_preserves_mean_activation() {
        let p = MlpParams::init(&[4, 3], 0.3, &mut seeded_rng(2)).unwrap();
        let x = [0.7, -1.2, 0.4, 2.0];
        let samples = 10_000;
        let xs = DenseMatrix::from_rows(&vec![x; samples]).unwrap();
        let (_, eval) = forward(&p, &DenseMatrix::from_rows(&[x]).unwrap(), None).unwrap();
        let mask = DropoutMask::sample(&p, samples, 0);
        let (_, train) = forward(&p, &xs, Some(&mask)).unwrap();
        // one scalar statistic: the summed pre-activation of the output layer
        let vals: Vec<f64> = (0..samples).map(|r| train.pre[0].row(r).iter().sum()).collect();
        let mean = vals.iter().sum::<f64>() / samples as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (samples - 1) as f64;
        let se = (var / samples as f64).sqrt();
        let expected: f64 = eval.pre[0].row(0).iter().sum();
        assert!((mean - expected).abs() <= 2.0 * se, "{mean} vs {expected} (se {se})");
    }

    #[test]
    fn fixed_mask_forward_is_deterministic() {
        let p = MlpParams::init(&[3, 8, 2], 0.5, &mut seeded_rng(1)).unwrap();
        let x = dense(&[&[1.0, -2.0, 0.5], &[0.0, 3.0, 1.0]]);
        let m = DropoutMask::sample(&p, 2, 3);
        let (a, _) = forward(&p, &x, Some(&m)).unwrap();
        let (b, _) = forward(&p, &x, Some(&m)).unwrap();
        assert_eq!(a, b);
    }
}
