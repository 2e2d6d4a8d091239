//! Planted-partition (stochastic block model) graphs with noisy one-hot
//! features, used as hermetic fixtures.

use metapn_core::DenseMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bundle::{BundleMeta, GraphBundle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmSpec {
    pub n: usize,
    pub blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_noise_sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SbmError {
    #[error("need 0 <= p_out <= p_in <= 1, got p_in = {p_in}, p_out = {p_out}")]
    Probabilities { p_in: f64, p_out: f64 },

    #[error("need 1 <= blocks <= n, got blocks = {blocks}, n = {n}")]
    Blocks { blocks: usize, n: usize },

    #[error("noise sigma must be finite and non-negative, got {0}")]
    Sigma(f64),
}

impl SbmSpec {
    pub fn validate(&self) -> Result<(), SbmError> {
        let ok = (0.0..=1.0).contains(&self.p_in)
            && (0.0..=1.0).contains(&self.p_out)
            && self.p_out <= self.p_in;
        if !ok {
            return Err(SbmError::Probabilities {
                p_in: self.p_in,
                p_out: self.p_out,
            });
        }
        if self.blocks == 0 || self.blocks > self.n {
            return Err(SbmError::Blocks {
                blocks: self.blocks,
                n: self.n,
            });
        }
        if !(self.feature_noise_sigma.is_finite() && self.feature_noise_sigma >= 0.0) {
            return Err(SbmError::Sigma(self.feature_noise_sigma));
        }
        Ok(())
    }

    /// Block of node `i`; blocks are contiguous and as equal as possible.
    pub fn block_of(&self, i: usize) -> usize {
        i * self.blocks / self.n
    }
}

/// Samples the graph. Labels are block ids and features have one column per
/// block: the block indicator plus i.i.d. `N(0, σ²)` noise.
pub fn generate_sbm(spec: &SbmSpec) -> Result<GraphBundle, SbmError> {
    spec.validate()?;
    let mut rng = metapn_core::seeded_rng(spec.seed);
    let labels: Vec<usize> = (0..spec.n).map(|i| spec.block_of(i)).collect();

    let mut edges = Vec::new();
    for u in 0..spec.n {
        for v in u + 1..spec.n {
            let p = if labels[u] == labels[v] {
                spec.p_in
            } else {
                spec.p_out
            };
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }

    let noise = Normal::new(0.0, spec.feature_noise_sigma)
        .map_err(|_| SbmError::Sigma(spec.feature_noise_sigma))?;
    let mut features = DenseMatrix::zeros(spec.n, spec.blocks);
    for (i, &block) in labels.iter().enumerate() {
        for (j, x) in features.row_mut(i).iter_mut().enumerate() {
            *x = f64::from(u8::from(j == block)) + noise.sample(&mut rng);
        }
    }

    Ok(GraphBundle {
        meta: BundleMeta {
            n: spec.n,
            f: spec.blocks,
            c: spec.blocks,
            name: "sbm".into(),
            extra: Default::default(),
        },
        edges,
        features,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, p_in: f64, p_out: f64, seed: u64) -> SbmSpec {
        SbmSpec {
            n,
            blocks: 2,
            p_in,
            p_out,
            feature_noise_sigma: 0.5,
            seed,
        }
    }

    #[test]
    fn complete_blocks_give_two_triangles() {
        let g = generate_sbm(&spec(6, 1.0, 0.0, 0)).unwrap();
        assert_eq!(
            g.edges,
            vec![(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)]
        );
        assert_eq!(g.labels, vec![0, 0, 0, 1, 1, 1]);
        g.validate().unwrap();
    }

    #[test]
    fn zero_probabilities_give_no_edges() {
        assert!(generate_sbm(&spec(50, 0.0, 0.0, 3)).unwrap().edges.is_empty());
    }

    #[test]
    fn within_block_density_concentrates() {
        for seed in 0..10 {
            let s = spec(200, 0.2, 0.01, seed);
            let g = generate_sbm(&s).unwrap();
            let within = g
                .edges
                .iter()
                .filter(|&&(u, v)| g.labels[u] == g.labels[v])
                .count();
            let pairs = 2 * (100 * 99 / 2);
            let density = within as f64 / pairs as f64;
            assert!((0.17..=0.23).contains(&density), "seed {seed}: {density}");
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate_sbm(&spec(40, 0.3, 0.05, 9)).unwrap();
        assert_eq!(a, generate_sbm(&spec(40, 0.3, 0.05, 9)).unwrap());
        assert_ne!(a, generate_sbm(&spec(40, 0.3, 0.05, 10)).unwrap());
    }

    #[test]
    fn features_are_noisy_indicators() {
        let mut s = spec(10, 0.5, 0.1, 1);
        s.feature_noise_sigma = 0.0;
        let g = generate_sbm(&s).unwrap();
        assert_eq!(g.features.row(0), &[1.0, 0.0]);
        assert_eq!(g.features.row(9), &[0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate_sbm(&spec(10, 0.1, 0.2, 0)).is_err());
        assert!(generate_sbm(&spec(10, 1.5, 0.2, 0)).is_err());
        let mut s = spec(10, 0.5, 0.1, 0);
        s.blocks = 0;
        assert_eq!(generate_sbm(&s), Err(SbmError::Blocks { blocks: 0, n: 10 }));
    }
}
