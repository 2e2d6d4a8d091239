//! Prediction and accuracy helpers shared by the trainers and the benchmark.

use alloc::vec::Vec;

use crate::sparse::DenseMatrix;

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn argmax_rows(scores: &DenseMatrix) -> Vec<usize> {
    (0..scores.n_rows()).map(|r| argmax(scores.row(r))).collect()
}

/// Fraction of positions where `predicted[i] == truth[i]`; zero for empty input.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / predicted.len() as f64
}
