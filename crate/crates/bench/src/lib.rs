//! Shared inputs for the criterion benches under `benches/`.

use rand::Rng;

use metaloss::harness::Targets;
use metaloss::rng::derive_rng;
use metaloss::Tensor;

/// `batch` rows of `classes` logits in `[-3, 3)` with uniform targets.
pub fn logit_batch(seed: u64, batch: usize, classes: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = derive_rng(seed, &[classes as u64]);
    let logits = (0..batch)
        .map(|_| (0..classes).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let targets = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    (logits, targets)
}

/// Standard-uniform features with a smooth scalar target.
pub fn regression_batch(seed: u64, rows: usize, features: usize) -> (Tensor, Targets) {
    let mut rng = derive_rng(seed, &[0]);
    let x: Vec<f64> = (0..rows * features)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let y = x
        .chunks(features)
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(i, v)| (v * (i + 1) as f64).sin())
                .sum()
        })
        .collect();
    (Tensor::from_rows(rows, features, x), Targets::Values(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_have_requested_shapes() {
        let (z, t) = logit_batch(1, 4, 7);
        assert_eq!(z.len(), 4);
        assert!(z.iter().all(|r| r.len() == 7));
        assert!(t.iter().all(|&c| c < 7));
        let (x, y) = regression_batch(1, 5, 3);
        assert_eq!((x.rows(), x.cols()), (5, 3));
        assert_eq!(y.len(), 5);
    }
}
