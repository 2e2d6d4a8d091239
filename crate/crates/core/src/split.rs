//! K-shot train/validation/test splits.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};

/// Disjoint node sets. Nodes outside `train` form the unlabeled pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub shots: usize,
}

impl SplitSpec {
    /// Checks pairwise disjointness and index bounds.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &node in self.train.iter().chain(&self.val).chain(&self.test) {
            if node >= n {
                return Err(Error::NodeOutOfRange { node, n });
            }
            if seen[node] {
                return Err(Error::OverlappingSplit(node));
            }
            seen[node] = true;
        }
        Ok(())
    }

    pub fn train_mask(&self, n: usize) -> Vec<bool> {
        let mut mask = vec![false; n];
        for &i in &self.train {
            mask[i] = true;
        }
        mask
    }

    /// Every node that is not a training node (validation and test included).
    pub fn unlabeled(&self, n: usize) -> Vec<usize> {
        let mask = self.train_mask(n);
        (0..n).filter(|&i| !mask[i]).collect()
    }

    /// `(node, class)` pairs for the training nodes only.
    pub fn train_labels(&self, labels: &[usize]) -> Vec<(usize, usize)> {
        self.train.iter().map(|&i| (i, labels[i])).collect()
    }
}

/// Stratified sampling of `shots` training and `val_per_class` validation
/// nodes per class; every other node goes to the test set.
pub fn sample_kshot_split(
    labels: &[usize],
    classes: usize,
    shots: usize,
    val_per_class: usize,
    seed: u64,
) -> Result<SplitSpec> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (node, &class) in labels.iter().enumerate() {
        if class >= classes {
            return Err(Error::ClassOutOfRange {
                node,
                class,
                classes,
            });
        }
        by_class[class].push(node);
    }
    let required = shots + val_per_class;
    let mut rng = crate::seeded_rng(seed);
    let mut train = Vec::with_capacity(shots * classes);
    let mut val = Vec::with_capacity(val_per_class * classes);
    let mut picked = vec![false; labels.len()];
    for (class, nodes) in by_class.iter_mut().enumerate() {
        if nodes.len() < required {
            return Err(Error::ClassTooSmall {
                class,
                available: nodes.len(),
                required,
            });
        }
        let (chosen, _) = nodes.partial_shuffle(&mut rng, required);
        train.extend_from_slice(&chosen[..shots]);
        val.extend_from_slice(&chosen[shots..]);
        for &i in chosen.iter() {
            picked[i] = true;
        }
    }
    train.sort_unstable();
    val.sort_unstable();
    let test = (0..labels.len()).filter(|&i| !picked[i]).collect();
    Ok(SplitSpec {
        train,
        val,
        test,
        shots,
    })
}
