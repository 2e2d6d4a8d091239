//! One round of bi-level meta-training.
//!
//! The inner step fits the target model `θ` to pseudo-labels produced by the
//! adaptive propagator `φ`; the outer step moves `φ` along an approximate
//! hypergradient of the gold-label loss after a virtual SGD step on `θ`:
//!
//! ```text
//! θ'  = θ − η_θ ∇_θ J_pseudo(θ, φ)
//! v   = ∇_θ' J_gold(θ')
//! θ±  = θ ± ε v
//! ∇_φ J_gold(θ'(φ)) ≈ −η_θ / (2ε) · [∇_φ J_pseudo(θ⁺, φ) − ∇_φ J_pseudo(θ⁻, φ)]
//! ```

use alloc::vec::Vec;

use rand::Rng;

use crate::adam::{AdamState, ParamTensors};
use crate::error::{Error, Result};
use crate::mlp::{self, DropoutMask, MlpParams};
use crate::propagation::{self, PropagationTrace, PropagatorParams};
use crate::sparse::DenseMatrix;
use crate::split::SplitSpec;
use crate::LabelMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Inner (target model) learning rate η_θ.
    pub eta_theta: f64,
    /// Outer (propagator) learning rate η_φ.
    pub eta_phi: f64,
    /// Finite-difference step is `epsilon_scale / ‖∇_θ' J_gold‖`.
    pub epsilon_scale: f64,
    pub batch_size: usize,
    pub k_max: usize,
    pub l2_lambda: f64,
    pub dropout: f64,
    pub hidden_dim: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub finetune_epochs: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta_theta: 0.01,
            eta_phi: 0.01,
            epsilon_scale: 0.01,
            batch_size: 1024,
            k_max: 10,
            l2_lambda: 0.005,
            dropout: 0.3,
            hidden_dim: 64,
            patience: 100,
            max_epochs: 10_000,
            finetune_epochs: 100,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.eta_theta > 0.0 && self.eta_phi > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.epsilon_scale > 0.0) {
            return bad("epsilon_scale must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.l2_lambda >= 0.0) {
            return bad("l2_lambda must be non-negative");
        }
        Ok(())
    }
}

/// Parameters and optimizer state of both networks.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaState {
    pub theta: MlpParams,
    pub phi: PropagatorParams,
    pub adam_theta: AdamState,
    pub adam_phi: AdamState,
    pub best_val_metric: f64,
    pub epochs_since_improve: usize,
}

impl MetaState {
    pub fn new(theta: MlpParams, phi: PropagatorParams, cfg: &TrainConfig) -> Self {
        Self {
            adam_theta: AdamState::new(&theta, cfg.eta_theta),
            adam_phi: AdamState::new(&phi, cfg.eta_phi),
            theta,
            phi,
            best_val_metric: f64::NEG_INFINITY,
            epochs_since_improve: 0,
        }
    }

    /// Fresh two-layer `θ` followed by `φ`, both drawn from `rng`.
    pub fn init<R: Rng + ?Sized>(
        in_dim: usize,
        classes: usize,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let theta = MlpParams::two_layer(in_dim, cfg.hidden_dim, classes, cfg.dropout, rng)?;
        let phi = PropagatorParams::init(classes, rng);
        Ok(Self::new(theta, phi, cfg))
    }
}

/// A batch of unlabeled nodes with their features and the dropout mask
/// shared by every loss evaluated on it.
#[derive(Debug, Clone)]
pub struct Batch {
    pub nodes: Vec<usize>,
    pub features: DenseMatrix,
    pub mask: Option<DropoutMask>,
}

impl Batch {
    pub fn new(nodes: Vec<usize>, all_features: &DenseMatrix, mask: Option<DropoutMask>) -> Self {
        let features = all_features.select_rows(&nodes);
        Self {
            nodes,
            features,
            mask,
        }
    }
}

/// Features and one-hot targets of the gold-labeled nodes.
#[derive(Debug, Clone)]
pub struct GoldSet {
    pub features: DenseMatrix,
    pub targets: LabelMatrix,
}

impl GoldSet {
    pub fn new(
        nodes: &[usize],
        labels: &[usize],
        classes: usize,
        all_features: &DenseMatrix,
    ) -> Result<Self> {
        let pairs: Vec<(usize, usize)> = nodes
            .iter()
            .enumerate()
            .map(|(pos, &node)| (pos, labels[node]))
            .collect();
        Ok(Self {
            features: all_features.select_rows(nodes),
            targets: propagation::seed_labels(&pairs, nodes.len(), classes)?,
        })
    }
}

/// Uniform sample without replacement of `min(b, |pool|)` nodes from the
/// reachable non-training nodes. The result is sorted.
pub fn sample_unlabeled_batch<R: Rng + ?Sized>(
    split: &SplitSpec,
    reachable: &[bool],
    b: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let train = split.train_mask(reachable.len());
    let pool: Vec<usize> = (0..reachable.len())
        .filter(|&i| reachable[i] && !train[i])
        .collect();
    if pool.is_empty() {
        return Err(Error::EmptyUnlabeledPool);
    }
    let amount = b.min(pool.len());
    let mut picked: Vec<usize> = rand::seq::index::sample(rng, pool.len(), amount)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Pseudo-labels from the adaptive propagator; fails on unreachable nodes.
pub fn pseudo_labels(
    phi: &PropagatorParams,
    trace: &PropagationTrace,
    nodes: &[usize],
) -> Result<LabelMatrix> {
    let out = propagation::adaptive_propagate(phi, trace, nodes)?;
    if let Some(pos) = out.unreachable.iter().position(|&u| u) {
        return Err(Error::UnreachableNode(nodes[pos]));
    }
    Ok(out.labels)
}

/// `J_pseudo(θ) = CE(f_θ(X_B), targets) + (λ/2)‖W₁‖²` and its gradient.
pub fn pseudo_loss_and_grad(
    theta: &MlpParams,
    batch: &Batch,
    targets: &LabelMatrix,
    l2_lambda: f64,
) -> Result<(f64, MlpParams)> {
    let (probs, cache) = mlp::forward(theta, &batch.features, batch.mask.as_ref())?;
    let loss = mlp::soft_cross_entropy(&probs, targets)? + mlp::l2_penalty(theta, l2_lambda);
    let grad = mlp::backward(theta, &cache, targets, l2_lambda)?;
    Ok((loss, grad))
}

/// Gold loss `J_gold(θ)`: plain cross-entropy, no dropout, no L2.
pub fn gold_loss_and_grad(theta: &MlpParams, gold: &GoldSet) -> Result<(f64, MlpParams)> {
    let (probs, cache) = mlp::forward(theta, &gold.features, None)?;
    let loss = mlp::soft_cross_entropy(&probs, &gold.targets)?;
    let grad = mlp::backward(theta, &cache, &gold.targets, 0.0)?;
    Ok((loss, grad))
}

/// Result of one inner step.
#[derive(Debug, Clone)]
pub struct InnerStep {
    /// `J_pseudo` before the update.
    pub j_pseudo: f64,
    pub targets: LabelMatrix,
}

/// Adam step on `θ` against fixed soft targets (shared by the meta and the
/// static-propagation trainers).
pub fn fit_targets_step(
    state: &mut MetaState,
    batch: &Batch,
    targets: &LabelMatrix,
    cfg: &TrainConfig,
) -> Result<f64> {
    if batch.nodes.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (loss, grad) = pseudo_loss_and_grad(&state.theta, batch, targets, cfg.l2_lambda)?;
    state.adam_theta.step(&mut state.theta, &grad)?;
    Ok(loss)
}

/// Pseudo-label the batch with `φ` and take one Adam step on `θ`.
pub fn inner_update(
    state: &mut MetaState,
    batch: &Batch,
    trace: &PropagationTrace,
    cfg: &TrainConfig,
) -> Result<InnerStep> {
    if batch.nodes.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let targets = pseudo_labels(&state.phi, trace, &batch.nodes)?;
    let j_pseudo = fit_targets_step(state, batch, &targets, cfg)?;
    Ok(InnerStep { j_pseudo, targets })
}

/// `∇_φ J_pseudo(θ, φ)` for a fixed `θ`: only the targets depend on `φ`.
pub fn pseudo_loss_grad_phi(
    theta: &MlpParams,
    phi: &PropagatorParams,
    batch: &Batch,
    trace: &PropagationTrace,
) -> Result<PropagatorParams> {
    let (probs, _) = mlp::forward(theta, &batch.features, batch.mask.as_ref())?;
    let cotangent = mlp::cross_entropy_target_grad(&probs);
    propagation::propagator_grad(phi, trace, &batch.nodes, &cotangent)
}

#[derive(Debug, Clone)]
pub struct Hypergradient {
    pub grad: PropagatorParams,
    /// `J_gold(θ')` after the virtual SGD step.
    pub j_gold: f64,
    /// Finite-difference step actually used (zero when `∇_θ' J_gold = 0`).
    pub epsilon: f64,
}

/// Finite-difference approximation of `∇_φ J_gold(θ'(φ))` around `state.theta`.
///
/// The virtual step uses plain SGD with `η_θ = state.adam_theta.lr`, so the
/// bracket is scaled by `η_θ / (2ε)`.
pub fn hypergradient(
    state: &MetaState,
    batch: &Batch,
    trace: &PropagationTrace,
    gold: &GoldSet,
    cfg: &TrainConfig,
) -> Result<Hypergradient> {
    if batch.nodes.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let eta = state.adam_theta.lr;
    let targets = pseudo_labels(&state.phi, trace, &batch.nodes)?;
    let (_, inner_grad) = pseudo_loss_and_grad(&state.theta, batch, &targets, cfg.l2_lambda)?;

    let mut theta_virtual = state.theta.clone();
    theta_virtual.add_scaled(&inner_grad, -eta);
    let (j_gold, gold_grad) = gold_loss_and_grad(&theta_virtual, gold)?;

    let norm = gold_grad.l2_norm();
    if norm == 0.0 {
        return Ok(Hypergradient {
            grad: PropagatorParams::zeros(state.phi.classes()),
            j_gold,
            epsilon: 0.0,
        });
    }
    let epsilon = cfg.epsilon_scale / (norm + 1e-12);

    let mut theta_plus = state.theta.clone();
    theta_plus.add_scaled(&gold_grad, epsilon);
    let mut theta_minus = state.theta.clone();
    theta_minus.add_scaled(&gold_grad, -epsilon);

    let mut grad = pseudo_loss_grad_phi(&theta_plus, &state.phi, batch, trace)?;
    let minus = pseudo_loss_grad_phi(&theta_minus, &state.phi, batch, trace)?;
    grad.add_scaled(&minus, -1.0);
    grad.scale(-eta / (2.0 * epsilon));
    Ok(Hypergradient {
        grad,
        j_gold,
        epsilon,
    })
}

/// Adam step on `φ` along the hypergradient.
pub fn outer_update(state: &mut MetaState, hypergrad: &PropagatorParams) -> Result<()> {
    state.adam_phi.step(&mut state.phi, hypergrad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagation::{power_iterate, seed_labels};
    use crate::sparse::CsrMatrix;
    use crate::{seeded_rng, split::SplitSpec};
    use alloc::vec;

    fn split_with_train(train: Vec<usize>) -> SplitSpec {
        SplitSpec {
            train,
            val: vec![],
            test: vec![],
            shots: 1,
        }
    }

    #[test]
    fn batch_exhausts_small_pool() {
        let split = split_with_train(vec![0]);
        let reachable = vec![true, true, true, true, false];
        let b = sample_unlabeled_batch(&split, &reachable, 10, &mut seeded_rng(0)).unwrap();
        assert_eq!(b, vec![1, 2, 3]);
    }

    #[test]
    fn batch_is_deterministic_and_excludes_labeled() {
        let split = split_with_train(vec![3, 17, 40]);
        let reachable = vec![true; 60];
        let a = sample_unlabeled_batch(&split, &reachable, 20, &mut seeded_rng(5)).unwrap();
        let b = sample_unlabeled_batch(&split, &reachable, 20, &mut seeded_rng(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        assert!(a.iter().all(|i| ![3, 17, 40].contains(i)));
    }

    #[test]
    fn batch_empty_pool_errors() {
        let split = split_with_train(vec![0]);
        let reachable = vec![true, false];
        assert_eq!(
            sample_unlabeled_batch(&split, &reachable, 4, &mut seeded_rng(0)),
            Err(Error::EmptyUnlabeledPool)
        );
    }

    /// Two triangles joined by one edge, one labeled node each side.
    fn tiny_problem(seed: u64) -> (PropagationTrace, DenseMatrix, MetaState, GoldSet, TrainConfig) {
        let edges = [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)];
        let t = CsrMatrix::from_edge_list(6, &edges)
            .unwrap()
            .sym_normalize_with_self_loops()
            .unwrap();
        let labels = [0, 0, 0, 1, 1, 1];
        let trace = power_iterate(&t, &seed_labels(&[(0, 0), (5, 1)], 6, 2).unwrap(), 3).unwrap();
        let mut rng = seeded_rng(seed);
        let mut x = DenseMatrix::zeros(6, 3);
        for v in x.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let cfg = TrainConfig {
            hidden_dim: 4,
            dropout: 0.0,
            eta_theta: 1e-3,
            ..TrainConfig::default()
        };
        let state = MetaState::init(3, 2, &cfg, &mut rng).unwrap();
        let gold = GoldSet::new(&[0, 5], &labels, 2, &x).unwrap();
        (trace, x, state, gold, cfg)
    }

    #[test]
    fn inner_update_descends() {
        let (trace, x, mut state, _, cfg) = tiny_problem(1);
        let batch = Batch::new(vec![1, 2, 3, 4], &x, None);
        let step = inner_update(&mut state, &batch, &trace, &cfg).unwrap();
        let (after, _) =
            pseudo_loss_and_grad(&state.theta, &batch, &step.targets, cfg.l2_lambda).unwrap();
        assert!(after < step.j_pseudo, "{after} !< {}", step.j_pseudo);
    }

    #[test]
    fn inner_update_zero_lr_keeps_theta() {
        let (trace, x, mut state, _, cfg) = tiny_problem(2);
        state.adam_theta.lr = 0.0;
        let before = state.theta.clone();
        let batch = Batch::new(vec![1, 2, 3], &x, None);
        let step = inner_update(&mut state, &batch, &trace, &cfg).unwrap();
        assert_eq!(state.theta, before);
        assert!(step.j_pseudo.is_finite());
    }

    #[test]
    fn inner_update_zero_gradient_keeps_theta() {
        // zero θ predicts uniform; with uniform targets and λ = 0 the gradient vanishes
        let v = DenseMatrix::from_rows(&[[0.5, 0.5], [0.5, 0.5]]).unwrap();
        let trace = PropagationTrace::from_steps(vec![v.clone(), v]).unwrap();
        let x = DenseMatrix::from_rows(&[[1.0, 2.0], [-1.0, 0.5]]).unwrap();
        let cfg = TrainConfig {
            l2_lambda: 0.0,
            hidden_dim: 3,
            ..TrainConfig::default()
        };
        let theta = MlpParams::zeros(&[2, 3, 2], 0.0).unwrap();
        let mut state = MetaState::new(theta.clone(), PropagatorParams::zeros(2), &cfg);
        inner_update(&mut state, &Batch::new(vec![0, 1], &x, None), &trace, &cfg).unwrap();
        assert_eq!(state.theta, theta);
    }

    #[test]
    fn inner_update_rejects_unreachable() {
        let t = CsrMatrix::from_edge_list(3, &[(0, 1)])
            .unwrap()
            .sym_normalize_with_self_loops()
            .unwrap();
        let trace = power_iterate(&t, &seed_labels(&[(0, 0)], 3, 2).unwrap(), 2).unwrap();
        let x = DenseMatrix::zeros(3, 2);
        let cfg = TrainConfig {
            hidden_dim: 2,
            ..TrainConfig::default()
        };
        let mut state = MetaState::init(2, 2, &cfg, &mut seeded_rng(0)).unwrap();
        assert_eq!(
            inner_update(&mut state, &Batch::new(vec![1, 2], &x, None), &trace, &cfg).unwrap_err(),
            Error::UnreachableNode(2)
        );
    }

    #[test]
    fn hypergradient_zero_when_eta_zero() {
        let (trace, x, mut state, gold, cfg) = tiny_problem(3);
        state.adam_theta.lr = 0.0;
        let batch = Batch::new(vec![1, 2, 3, 4], &x, None);
        let h = hypergradient(&state, &batch, &trace, &gold, &cfg).unwrap();
        assert!(h.epsilon > 0.0);
        assert_eq!(h.grad.l2_norm(), 0.0);
    }

    #[test]
    fn hypergradient_zero_when_gold_gradient_vanishes() {
        // zero θ with uniform pseudo-labels makes the virtual step a no-op, and
        // two gold nodes of opposite class with identical features cancel
        let v = DenseMatrix::from_rows(&[[0.5, 0.5]; 6]).unwrap();
        let trace = PropagationTrace::from_steps(vec![v.clone(), v.clone(), v]).unwrap();
        let x = DenseMatrix::from_rows(&[[1.0, 1.0, 1.0]; 6]).unwrap();
        let cfg = TrainConfig {
            l2_lambda: 0.0,
            hidden_dim: 4,
            ..TrainConfig::default()
        };
        let theta = MlpParams::zeros(&[3, 4, 2], 0.0).unwrap();
        let state = MetaState::new(theta, PropagatorParams::init(2, &mut seeded_rng(1)), &cfg);
        let gold = GoldSet::new(&[0, 5], &[0, 0, 0, 1, 1, 1], 2, &x).unwrap();
        let batch = Batch::new(vec![1, 2, 3, 4], &x, None);
        let h = hypergradient(&state, &batch, &trace, &gold, &cfg).unwrap();
        assert_eq!(h.epsilon, 0.0);
        assert_eq!(h.grad, PropagatorParams::zeros(2));
    }

    #[test]
    fn outer_update_zero_grad_and_determinism() {
        let (_, _, state, _, _) = tiny_problem(5);
        let mut a = state.clone();
        outer_update(&mut a, &PropagatorParams::zeros(2)).unwrap();
        assert_eq!(a.phi, state.phi);

        let mut g = PropagatorParams::zeros(2);
        g.attn = vec![0.3, -0.1];
        g.weight.set(0, 1, 2.0);
        let mut b = state.clone();
        let mut c = state.clone();
        outer_update(&mut b, &g).unwrap();
        outer_update(&mut c, &g).unwrap();
        assert_eq!(b.phi, c.phi);
    }

    #[test]
    fn outer_update_moves_monotonically() {
        let (_, _, mut state, _, _) = tiny_problem(6);
        let mut g = PropagatorParams::zeros(2);
        g.attn = vec![1.0, -0.5];
        g.weight.set(1, 0, 0.25);
        let start = state.phi.clone();
        let mut prev = start.clone();
        for _ in 0..10 {
            outer_update(&mut state, &g).unwrap();
            for ((now, before), dir) in state
                .phi
                .flatten()
                .iter()
                .zip(prev.flatten())
                .zip(g.flatten())
            {
                if dir == 0.0 {
                    assert_eq!(*now, before);
                } else {
                    assert!((now - before) * dir < 0.0);
                }
            }
            prev = state.phi.clone();
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            eta_phi: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
