//! Fixtures shared by the benchmarks.

use painnet_core::features::{synth_matrices, SynthSpec};
use painnet_core::{Dataset, FrameMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` uniform values in `[-1, 1)` from a fixed seed.
pub fn uniform(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// A small in-memory synthetic dataset.
pub fn small_dataset(videos_per_class: usize) -> Dataset {
    let spec = SynthSpec {
        videos_per_class,
        ..SynthSpec::default()
    };
    let (records, matrices) = synth_matrices(&spec).expect("valid synthetic spec");
    Dataset::from_matrices(records, matrices).expect("consistent synthetic dataset")
}

/// A random video of `frames` frames over the 20 default AUs.
pub fn video(frames: usize, seed: u64) -> FrameMatrix {
    let names = painnet_core::features::default_au_names();
    let values = uniform(frames * names.len(), seed);
    FrameMatrix::new(values, names).expect("well-formed matrix")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_seeded() {
        assert_eq!(uniform(8, 1), uniform(8, 1));
        assert_ne!(uniform(8, 1), uniform(8, 2));
        assert!(uniform(100, 3).iter().all(|v| (-1.0..1.0).contains(v)));
    }
}
