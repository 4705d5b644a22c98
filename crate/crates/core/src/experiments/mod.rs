//! Simulation-scale reproductions of the evaluation.
//!
//! Every experiment returns a list of [`ExperimentRecord`]s. Trials draw their
//! randomness from [`trial_seed`], so a record depends only on the
//! configuration and the master seed, never on thread scheduling.

mod bersnr;
mod collision;
mod fftvar;
mod nearfar;
mod network;
mod record;
mod sim;

pub use bersnr::{run_ber_snr, BerSnrConfig};
pub use collision::run_collision;
pub use fftvar::{run_fft_variation, FftVarConfig};
pub use nearfar::{run_dynamic_range_sweep, run_near_far, DynRangeConfig, NearFarConfig};
pub use network::{
    default_rate_table, run_network, uniform_snr_map, NetworkConfig, RateEntry, Scheme,
};
pub use record::{sort_records, to_csv_string, write_csv, ConfigSnapshot, ExperimentRecord};
pub use sim::{simulate_round, DeviceOutcome, SimDevice, Tally};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seed of trial `index` under `master`: the first word of ChaCha stream
/// `index` keyed by `master`.
pub fn trial_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}
