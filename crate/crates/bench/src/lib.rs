//! Inputs shared by the benchmarks.

use ibl_core::dataset::{balanced_sample, generate_moons, SplitSpec};
use ibl_core::Dataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scores on a coarse grid so the ranking sees ties, plus both classes.
pub fn scored_labels(n: usize, seed: u64) -> (Vec<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores = (0..n).map(|_| f64::from(rng.random_range(0..1000u32)) / 1000.0).collect();
    let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    labels[0] = 0;
    labels[n - 1] = 1;
    (scores, labels)
}

/// A balanced moons split with `n_train` training rows.
pub fn moons_split(n: usize, n_train: usize, seed: u64) -> (Dataset, Dataset) {
    let ds = generate_moons(n, 0.2, seed).expect("moons");
    balanced_sample(&ds, SplitSpec::balanced(seed, n_train)).expect("split")
}

pub const CLAMP_MODEL: &str = "\
# score along the first feature, damped by the second
let z = 0.5 + 0.3 * row['Feature_1'] - 0.2 * row['Feature_2'];
if z > 0.9 then clamp(z) else sigmoid(4 * (z - 0.5))";
