//! Seeded random streams.
//!
//! Every trial of an ensemble owns a ChaCha stream keyed by `(seed, trial)`.
//! ChaCha is counter based, so the draw used at a given iteration is fixed by
//! the key and the position in the stream, independent of thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type TrialRng = ChaCha8Rng;

const START_SALT: u64 = 0x5157_4c41_4253_5452;

/// Stream used for the stochastic estimator draws of one trial.
pub fn trial_rng(seed: u64, trial: u64) -> TrialRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Stream used to draw the starting point of one trial. Separate from the
/// estimator stream so paired runs of different methods share starts.
pub fn start_rng(seed: u64, trial: u64) -> TrialRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ START_SALT);
    rng.set_stream(trial);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_key_same_stream() {
        let a: Vec<u64> = (0..8)
            .map(|_| 0)
            .scan(trial_rng(7, 3), |r, _: u64| Some(r.gen()))
            .collect();
        let b: Vec<u64> = (0..8)
            .map(|_| 0)
            .scan(trial_rng(7, 3), |r, _: u64| Some(r.gen()))
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn trials_and_starts_differ() {
        let x: u64 = trial_rng(7, 0).gen();
        let y: u64 = trial_rng(7, 1).gen();
        let z: u64 = start_rng(7, 0).gen();
        assert_ne!(x, y);
        assert_ne!(x, z);
    }
}
