//! Full training runs: the meta-learning loop with early stopping and
//! fine-tuning, plus the non-meta loops used by the baselines (fixed
//! personalized-PageRank pseudo-labels, and supervised training on the
//! labeled nodes only).

use alloc::vec::Vec;

use rand::Rng;

use crate::adam::{AdamState, ParamTensors};
use crate::error::{Error, Result};
use crate::meta::{self, Batch, GoldSet, MetaState, TrainConfig};
use crate::metrics;
use crate::mlp::{self, DropoutMask, MlpParams};
use crate::propagation::{self, PprConfig, PropagationTrace, MASS_THRESHOLD};
use crate::sparse::{CsrMatrix, DenseMatrix};
use crate::split::SplitSpec;
use crate::{LabelMatrix, SeededRng};

/// Graph, features, labels and split of one training run.
///
/// Labels of validation and test nodes are only read for metrics.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    /// Binary symmetric adjacency without self-loops.
    pub adjacency: &'a CsrMatrix,
    pub features: &'a DenseMatrix,
    pub labels: &'a [usize],
    pub classes: usize,
    pub split: &'a SplitSpec,
}

impl Problem<'_> {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.adjacency.n_rows() != n || self.adjacency.n_cols() != n {
            return Err(Error::ShapeMismatch {
                context: "adjacency vs labels",
                left_rows: self.adjacency.n_rows(),
                left_cols: self.adjacency.n_cols(),
                right_rows: n,
                right_cols: n,
            });
        }
        if self.features.n_rows() != n {
            return Err(Error::ShapeMismatch {
                context: "features vs labels",
                left_rows: self.features.n_rows(),
                left_cols: self.features.n_cols(),
                right_rows: n,
                right_cols: 1,
            });
        }
        if let Some(node) = self.labels.iter().position(|&c| c >= self.classes) {
            return Err(Error::ClassOutOfRange {
                node,
                class: self.labels[node],
                classes: self.classes,
            });
        }
        self.split.validate(n)?;
        for class in 0..self.classes {
            if !self.split.train.iter().any(|&i| self.labels[i] == class) {
                return Err(Error::EmptyClass { class });
            }
        }
        Ok(())
    }

    fn transition(&self) -> Result<CsrMatrix> {
        self.adjacency.sym_normalize_with_self_loops()
    }

    fn seed(&self) -> Result<LabelMatrix> {
        propagation::seed_labels(&self.split.train_labels(self.labels), self.n(), self.classes)
    }

    fn gold(&self) -> Result<GoldSet> {
        GoldSet::new(&self.split.train, self.labels, self.classes, self.features)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub j_pseudo: f64,
    pub j_gold: f64,
    pub val_acc: f64,
    pub val_loss: f64,
    pub phi_grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation checkpoint, after fine-tuning when the method has one.
    pub state: MetaState,
    pub log: Vec<EpochLog>,
    /// Epoch (1-based) of the checkpoint selected before fine-tuning.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub finetune_epochs_run: usize,
}

/// Patience counter reset by a rise in validation accuracy or a drop in
/// validation loss; the checkpoint follows accuracy alone.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best_acc: f64,
    best_loss: f64,
    since_improve: usize,
    best_epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    /// Strictly better accuracy than every earlier epoch.
    pub new_best: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_acc: f64::NEG_INFINITY,
            best_loss: f64::INFINITY,
            since_improve: 0,
            best_epoch: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_acc: f64, val_loss: f64) -> Observation {
        let new_best = val_acc > self.best_acc;
        let lower_loss = val_loss < self.best_loss;
        if new_best {
            self.best_acc = val_acc;
            self.best_epoch = epoch;
        }
        if lower_loss {
            self.best_loss = val_loss;
        }
        if new_best || lower_loss {
            self.since_improve = 0;
        } else {
            self.since_improve += 1;
        }
        Observation {
            new_best,
            stop: self.since_improve >= self.patience,
        }
    }

    pub fn best_acc(&self) -> f64 {
        self.best_acc
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn since_improve(&self) -> usize {
        self.since_improve
    }
}

/// Class predictions of `θ` in evaluation mode for the given nodes.
pub fn predict(theta: &MlpParams, features: &DenseMatrix, nodes: &[usize]) -> Result<Vec<usize>> {
    let (probs, _) = mlp::forward(theta, &features.select_rows(nodes), None)?;
    Ok(metrics::argmax_rows(&probs))
}

/// `(accuracy, cross-entropy)` of `θ` on labeled nodes; `(0, 0)` when empty.
pub fn evaluate(
    theta: &MlpParams,
    features: &DenseMatrix,
    labels: &[usize],
    classes: usize,
    nodes: &[usize],
) -> Result<(f64, f64)> {
    if nodes.is_empty() {
        return Ok((0.0, 0.0));
    }
    let gold = GoldSet::new(nodes, labels, classes, features)?;
    let (probs, _) = mlp::forward(theta, &gold.features, None)?;
    let loss = mlp::soft_cross_entropy(&probs, &gold.targets)?;
    let truth: Vec<usize> = nodes.iter().map(|&i| labels[i]).collect();
    Ok((metrics::accuracy(&metrics::argmax_rows(&probs), &truth), loss))
}

fn validation(theta: &MlpParams, problem: &Problem<'_>) -> Result<(f64, f64)> {
    evaluate(
        theta,
        problem.features,
        problem.labels,
        problem.classes,
        &problem.split.val,
    )
}

enum PseudoSource<'a> {
    Adaptive(&'a PropagationTrace),
    Fixed(&'a LabelMatrix),
}

/// Epoch loop shared by the meta and static trainers. Returns the best
/// checkpoint (by validation accuracy), the log and the best epoch.
fn pseudo_label_phase(
    problem: &Problem<'_>,
    cfg: &TrainConfig,
    source: PseudoSource<'_>,
    reachable: &[bool],
    mut state: MetaState,
    rng: &mut SeededRng,
) -> Result<(MetaState, Vec<EpochLog>, usize)> {
    let gold = problem.gold()?;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = state.clone();
    let mut log = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let mut nodes = meta::sample_unlabeled_batch(problem.split, reachable, cfg.batch_size, rng)?;
        if let PseudoSource::Adaptive(trace) = source {
            let out = propagation::adaptive_propagate(&state.phi, trace, &nodes)?;
            nodes = out.reachable_positions().into_iter().map(|p| nodes[p]).collect();
        }
        let mask_seed: u64 = rng.random();
        let mut entry = EpochLog {
            epoch,
            j_pseudo: 0.0,
            j_gold: 0.0,
            val_acc: 0.0,
            val_loss: 0.0,
            phi_grad_norm: 0.0,
        };
        if !nodes.is_empty() {
            let mask = (cfg.dropout > 0.0)
                .then(|| DropoutMask::sample(&state.theta, nodes.len(), mask_seed));
            let batch = Batch::new(nodes, problem.features, mask);
            match source {
                PseudoSource::Adaptive(trace) => {
                    let hyper = meta::hypergradient(&state, &batch, trace, &gold, cfg)?;
                    let inner = meta::inner_update(&mut state, &batch, trace, cfg)?;
                    meta::outer_update(&mut state, &hyper.grad)?;
                    entry.j_pseudo = inner.j_pseudo;
                    entry.j_gold = hyper.j_gold;
                    entry.phi_grad_norm = hyper.grad.l2_norm();
                }
                PseudoSource::Fixed(all) => {
                    let targets = all.select_rows(&batch.nodes);
                    entry.j_pseudo = meta::fit_targets_step(&mut state, &batch, &targets, cfg)?;
                    entry.j_gold = meta::gold_loss_and_grad(&state.theta, &gold)?.0;
                }
            }
        }
        let (val_acc, val_loss) = validation(&state.theta, problem)?;
        entry.val_acc = val_acc;
        entry.val_loss = val_loss;
        log.push(entry);

        let obs = stopper.observe(epoch, val_acc, val_loss);
        state.best_val_metric = stopper.best_acc();
        state.epochs_since_improve = stopper.since_improve();
        if obs.new_best {
            best = state.clone();
        }
        if obs.stop {
            break;
        }
    }
    best.best_val_metric = stopper.best_acc();
    best.epochs_since_improve = stopper.since_improve();
    Ok((best, log, stopper.best_epoch()))
}

/// Supervised fit of `θ` on the labeled nodes with hard targets. The
/// starting point counts as epoch 0, so the result is never worse on
/// validation than the input.
fn supervised_phase(
    theta: MlpParams,
    problem: &Problem<'_>,
    cfg: &TrainConfig,
    max_epochs: usize,
    rng: &mut SeededRng,
) -> Result<(MlpParams, Vec<EpochLog>, usize)> {
    let gold = problem.gold()?;
    let all_train = Batch::new(problem.split.train.clone(), problem.features, None);
    let mut theta = theta;
    let mut adam = AdamState::new(&theta, cfg.eta_theta);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let (acc0, loss0) = validation(&theta, problem)?;
    stopper.observe(0, acc0, loss0);
    let mut best = theta.clone();
    let mut log = Vec::new();
    let mut epochs = 0;
    for epoch in 1..=max_epochs {
        epochs = epoch;
        let mask_seed: u64 = rng.random();
        let batch = Batch {
            mask: (cfg.dropout > 0.0)
                .then(|| DropoutMask::sample(&theta, all_train.nodes.len(), mask_seed)),
            ..all_train.clone()
        };
        let (loss, grad) = meta::pseudo_loss_and_grad(&theta, &batch, &gold.targets, cfg.l2_lambda)?;
        adam.step(&mut theta, &grad)?;
        let (val_acc, val_loss) = validation(&theta, problem)?;
        log.push(EpochLog {
            epoch,
            j_pseudo: loss,
            j_gold: meta::gold_loss_and_grad(&theta, &gold)?.0,
            val_acc,
            val_loss,
            phi_grad_norm: 0.0,
        });
        let obs = stopper.observe(epoch, val_acc, val_loss);
        if obs.new_best {
            best = theta.clone();
        }
        if obs.stop {
            break;
        }
    }
    Ok((best, log, epochs))
}

/// Fine-tunes `θ` on the labeled nodes with a fresh Adam state, keeping the
/// best-validation parameters. Returns the parameters and epochs run.
pub fn finetune(
    theta: MlpParams,
    problem: &Problem<'_>,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<(MlpParams, usize)> {
    let (theta, _, epochs) = supervised_phase(theta, problem, cfg, cfg.finetune_epochs, rng)?;
    Ok((theta, epochs))
}

fn start(problem: &Problem<'_>, cfg: &TrainConfig) -> Result<(SeededRng, MetaState)> {
    cfg.validate()?;
    problem.validate()?;
    let mut rng = crate::seeded_rng(cfg.rng_seed);
    let state = MetaState::init(problem.features.n_cols(), problem.classes, cfg, &mut rng)?;
    Ok((rng, state))
}

/// Meta-learned propagation: alternate inner and outer updates until early
/// stopping, restore the best checkpoint, then fine-tune on labeled nodes.
pub fn train(problem: &Problem<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let (mut rng, state) = start(problem, cfg)?;
    let trace = propagation::power_iterate(&problem.transition()?, &problem.seed()?, cfg.k_max)?;
    let reachable = trace.reachable_mask();
    let (mut best, log, best_epoch) = pseudo_label_phase(
        problem,
        cfg,
        PseudoSource::Adaptive(&trace),
        &reachable,
        state,
        &mut rng,
    )?;
    let epochs_run = log.len();
    let (theta, finetune_epochs_run) = finetune(best.theta.clone(), problem, cfg, &mut rng)?;
    best.theta = theta;
    Ok(TrainOutcome {
        state: best,
        log,
        best_epoch,
        epochs_run,
        finetune_epochs_run,
    })
}

/// Row-normalized PPR pseudo-labels for every node, with the reachability
/// mask (rows with mass below the threshold are zeroed and unreachable).
pub fn static_pseudo_labels(problem: &Problem<'_>, ppr: PprConfig) -> Result<(LabelMatrix, Vec<bool>)> {
    let mut labels = propagation::ppr_iterate(&problem.transition()?, &problem.seed()?, ppr)?;
    let mut reachable = Vec::with_capacity(labels.n_rows());
    for r in 0..labels.n_rows() {
        let row = labels.row_mut(r);
        let mass: f64 = row.iter().sum();
        if mass < MASS_THRESHOLD {
            row.fill(0.0);
            reachable.push(false);
        } else {
            row.iter_mut().for_each(|v| *v /= mass);
            reachable.push(true);
        }
    }
    Ok((labels, reachable))
}

/// Fixed-propagation ablation: the target model is trained on PPR
/// pseudo-labels with no meta updates, then fine-tuned. When no unlabeled
/// node receives label mass it reduces to [`train_supervised`].
pub fn train_static(problem: &Problem<'_>, cfg: &TrainConfig, alpha: f64) -> Result<TrainOutcome> {
    let (mut rng, state) = start(problem, cfg)?;
    let ppr = PprConfig {
        alpha,
        k_max: cfg.k_max,
    };
    let (labels, reachable) = static_pseudo_labels(problem, ppr)?;
    let train_mask = problem.split.train_mask(problem.n());
    if !(0..problem.n()).any(|i| reachable[i] && !train_mask[i]) {
        return train_supervised(problem, cfg);
    }
    let (mut best, log, best_epoch) = pseudo_label_phase(
        problem,
        cfg,
        PseudoSource::Fixed(&labels),
        &reachable,
        state,
        &mut rng,
    )?;
    let epochs_run = log.len();
    let (theta, finetune_epochs_run) = finetune(best.theta.clone(), problem, cfg, &mut rng)?;
    best.theta = theta;
    Ok(TrainOutcome {
        state: best,
        log,
        best_epoch,
        epochs_run,
        finetune_epochs_run,
    })
}

/// MLP baseline: the target model trained on labeled nodes only.
pub fn train_supervised(problem: &Problem<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let (mut rng, mut state) = start(problem, cfg)?;
    let theta = state.theta.clone();
    let (theta, log, epochs_run) = supervised_phase(theta, problem, cfg, cfg.max_epochs, &mut rng)?;
    state.theta = theta;
    let best_epoch = log
        .iter()
        .fold((0, f64::NEG_INFINITY), |(be, ba), e| {
            if e.val_acc > ba {
                (e.epoch, e.val_acc)
            } else {
                (be, ba)
            }
        })
        .0;
    Ok(TrainOutcome {
        state,
        log,
        best_epoch,
        epochs_run,
        finetune_epochs_run: 0,
    })
}
