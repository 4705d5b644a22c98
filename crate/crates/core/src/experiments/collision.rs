use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::css::ChirpConfig;
use crate::error::Result;
use crate::mac::{choir_fraction_probability, collision_probability, collision_probability_approx};

use super::record::{ConfigSnapshot, ExperimentRecord};

/// Monte-Carlo rate at which `n` uniformly random LoRa symbols share a value,
/// next to the closed forms.
pub fn run_collision(n: usize, sf: u32, trials: usize, seed: u64) -> Result<ExperimentRecord> {
    let exact = collision_probability(n, sf)?;
    let cfg = ChirpConfig::new(sf, 500e3)?;
    let slots = 1usize << sf;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = vec![0usize; slots];
    let mut hits = 0usize;
    for t in 1..=trials {
        // stamping with the trial number avoids clearing the table
        let collided = (0..n).any(|_| {
            let s = rng.random_range(0..slots);
            std::mem::replace(&mut seen[s], t) == t
        });
        hits += usize::from(collided);
    }
    Ok(
        ExperimentRecord::new("collision", ConfigSnapshot::new(&cfg, 1, n, f64::INFINITY, seed, "lora"))
            .param("trials", trials as f64)
            .metric("collision_rate", if trials == 0 { 0.0 } else { hits as f64 / trials as f64 })
            .metric("collision_probability", exact)
            .metric("collision_probability_approx", collision_probability_approx(n, sf))
            .metric("choir_fraction", choir_fraction_probability(n)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_space_matches_closed_form() {
        let r = run_collision(3, 4, 20_000, 9).unwrap();
        let want = 1.0 - (15.0 / 16.0) * (14.0 / 16.0);
        assert!((r.metrics["collision_probability"] - want).abs() < 1e-12);
        assert!((r.metrics["collision_rate"] - want).abs() < 0.015);
    }

    #[test]
    fn single_device_never_collides() {
        assert_eq!(run_collision(1, 9, 100, 1).unwrap().metrics["collision_rate"], 0.0);
    }
}
