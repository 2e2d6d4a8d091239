//! Degenerate settings that must collapse onto simpler procedures.

use metapn_core::meta::TrainConfig;
use metapn_core::propagation::{self, PprConfig};
use metapn_core::split::sample_kshot_split;
use metapn_core::trainer::{self, Problem};
use metapn_core::{CsrMatrix, DenseMatrix};

fn ring_of_cliques() -> (CsrMatrix, DenseMatrix, Vec<usize>) {
    let mut edges = Vec::new();
    for base in [0, 6, 12] {
        for u in 0..6 {
            for v in u + 1..6 {
                edges.push((base + u, base + v));
            }
        }
    }
    edges.extend([(5, 6), (11, 12), (17, 0)]);
    let labels: Vec<usize> = (0..18).map(|i| i / 6).collect();
    let rows: Vec<Vec<f64>> = (0..18)
        .map(|i| {
            let mut r = vec![0.1 * (i % 4) as f64; 3];
            r[labels[i]] += 1.0;
            r
        })
        .collect();
    (
        CsrMatrix::from_edge_list(18, &edges).unwrap(),
        DenseMatrix::from_rows(&rows).unwrap(),
        labels,
    )
}

fn cfg() -> TrainConfig {
    TrainConfig {
        hidden_dim: 6,
        k_max: 4,
        max_epochs: 40,
        patience: 10,
        finetune_epochs: 10,
        ..TrainConfig::default()
    }
}

#[test]
fn full_teleport_degenerates_to_supervised_training() {
    let (adj, x, labels) = ring_of_cliques();
    let split = sample_kshot_split(&labels, 3, 1, 2, 4).unwrap();
    let problem = Problem {
        adjacency: &adj,
        features: &x,
        labels: &labels,
        classes: 3,
        split: &split,
    };
    let (pseudo, reachable) = trainer::static_pseudo_labels(
        &problem,
        PprConfig {
            alpha: 1.0,
            k_max: 4,
        },
    )
    .unwrap();
    let seeds = propagation::seed_labels(&split.train_labels(&labels), 18, 3).unwrap();
    assert_eq!(pseudo, seeds);
    assert_eq!(reachable, split.train_mask(18));

    let static_run = trainer::train_static(&problem, &cfg(), 1.0).unwrap();
    let mlp_run = trainer::train_supervised(&problem, &cfg()).unwrap();
    assert_eq!(static_run.state.theta, mlp_run.state.theta);
}

#[test]
fn zero_teleport_matches_power_iteration() {
    let (adj, _, labels) = ring_of_cliques();
    let t = adj.sym_normalize_with_self_loops().unwrap();
    let y0 = propagation::seed_labels(&[(0, labels[0]), (7, labels[7])], 18, 3).unwrap();
    let ppr = propagation::ppr_iterate(&t, &y0, PprConfig { alpha: 0.0, k_max: 6 }).unwrap();
    let power = propagation::power_iterate(&t, &y0, 6).unwrap();
    assert_eq!(&ppr, power.last());
}

#[test]
fn every_trainer_is_deterministic() {
    let (adj, x, labels) = ring_of_cliques();
    let split = sample_kshot_split(&labels, 3, 1, 2, 8).unwrap();
    let problem = Problem {
        adjacency: &adj,
        features: &x,
        labels: &labels,
        classes: 3,
        split: &split,
    };
    let runs = || {
        [
            trainer::train(&problem, &cfg()).unwrap(),
            trainer::train_static(&problem, &cfg(), 0.1).unwrap(),
            trainer::train_supervised(&problem, &cfg()).unwrap(),
        ]
    };
    for (a, b) in runs().iter().zip(runs().iter()) {
        assert_eq!(a.state, b.state);
        assert_eq!(a.log, b.log);
    }
}
