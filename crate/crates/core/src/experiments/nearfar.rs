use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::channel::{DeviceImpairments, JitterModel};
use crate::css::ChirpConfig;
use crate::error::{Error, Result};
use crate::mac::AssignmentTable;
use crate::phy::{DetectorParams, Receiver, PAYLOAD_BITS};

use super::bersnr::jitter_bounds;
use super::record::{ConfigSnapshot, ExperimentRecord};
use super::sim::{simulate_round, SimDevice, Tally};
use super::trial_seed;

/// Two devices, one held at `weak_snr_db` and one stronger by each entry of
/// `power_diff_db`.
#[derive(Debug, Clone, PartialEq)]
pub struct NearFarConfig {
    pub chirp: ChirpConfig,
    pub skip: usize,
    pub bin_weak: usize,
    pub bin_strong: usize,
    pub power_diff_db: Vec<f64>,
    pub freq_sigma_hz: f64,
    pub jitter: JitterModel,
    pub n_symbols: usize,
    pub weak_snr_db: f64,
}

impl Default for NearFarConfig {
    fn default() -> Self {
        Self {
            chirp: ChirpConfig::new(9, 500e3).expect("valid default"),
            skip: 2,
            bin_weak: 2,
            bin_strong: 258,
            power_diff_db: vec![0.0, 10.0, 20.0, 30.0, 40.0],
            freq_sigma_hz: 300.0,
            jitter: JitterModel::None,
            n_symbols: 10_000,
            weak_snr_db: 0.0,
        }
    }
}

struct Pair {
    table: AssignmentTable,
    params: DetectorParams,
}

fn pair(chirp: &ChirpConfig, skip: usize, weak: usize, strong: usize) -> Result<Pair> {
    chirp.validate()?;
    if weak == strong {
        return Err(Error::InvalidConfig(format!("both devices on bin {weak}")));
    }
    let table = AssignmentTable::manual(skip, chirp.symbol_len(), BTreeMap::from([(0, weak), (1, strong)]))?;
    let params = DetectorParams {
        skip,
        ..DetectorParams::default()
    };
    Receiver::new(chirp, params)?;
    Ok(Pair { table, params })
}

/// Tallies of (weak, strong) over `packets` rounds at one power difference.
/// The receiver is told the packet start.
#[allow(clippy::too_many_arguments)]
fn measure(
    chirp: &ChirpConfig,
    p: &Pair,
    weak: usize,
    strong: usize,
    diff_db: f64,
    weak_snr_db: f64,
    freq_sigma_hz: f64,
    jitter: JitterModel,
    packets: usize,
    seed: u64,
) -> Result<(Tally, Tally)> {
    if !(diff_db >= 0.0 && diff_db.is_finite()) {
        return Err(Error::InvalidConfig(format!("power difference {diff_db} dB")));
    }
    let dev = |shift, gain| SimDevice {
        shift,
        impairments: DeviceImpairments {
            power_gain_db: gain,
            timing_jitter: jitter,
            ..DeviceImpairments::ideal()
        },
        freq_sigma_hz,
    };
    let devices = [dev(weak, -diff_db), dev(strong, 0.0)];
    let snr = weak_snr_db + diff_db;
    let rounds: Vec<Result<(Tally, Tally)>> = (0..packets)
        .into_par_iter()
        .map_init(
            || Receiver::new(chirp, p.params).expect("validated"),
            |rx, r| {
                let out = simulate_round(rx, &p.table, &devices, snr, true, trial_seed(seed, r as u64))?;
                let (mut w, mut s) = (Tally::default(), Tally::default());
                w.add(&out[0]);
                s.add(&out[1]);
                Ok((w, s))
            },
        )
        .collect();
    let (mut w, mut s) = (Tally::default(), Tally::default());
    for r in rounds {
        let (a, b) = r?;
        w.merge(&a);
        s.merge(&b);
    }
    Ok((w, s))
}

/// Weak-device BER against the power advantage of the other device.
pub fn run_near_far(cfg: &NearFarConfig, seed: u64) -> Result<Vec<ExperimentRecord>> {
    let p = pair(&cfg.chirp, cfg.skip, cfg.bin_weak, cfg.bin_strong)?;
    let packets = cfg.n_symbols.div_ceil(PAYLOAD_BITS).max(1);
    cfg.power_diff_db
        .iter()
        .enumerate()
        .map(|(i, &diff)| {
            let (w, s) = measure(
                &cfg.chirp,
                &p,
                cfg.bin_weak,
                cfg.bin_strong,
                diff,
                cfg.weak_snr_db,
                cfg.freq_sigma_hz,
                cfg.jitter,
                packets,
                trial_seed(seed, i as u64),
            )?;
            Ok(
                ExperimentRecord::new("nearfar", ConfigSnapshot::new(&cfg.chirp, cfg.skip, 2, cfg.weak_snr_db, seed, "netscatter"))
                    .param("alpha", cfg.chirp.pad_factor as f64)
                    .param("bin_weak", cfg.bin_weak as f64)
                    .param("bin_strong", cfg.bin_strong as f64)
                    .param("power_diff_db", diff)
                    .param("freq_sigma_hz", cfg.freq_sigma_hz)
                    .param("jitter_min_s", jitter_bounds(&cfg.jitter).0)
                    .param("jitter_max_s", jitter_bounds(&cfg.jitter).1)
                    .param("n_symbols", (packets * PAYLOAD_BITS) as f64)
                    .metric("ber", w.ber())
                    .metric("per", w.per())
                    .metric("ber_strong", s.ber())
                    .metric("per_strong", s.per()),
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynRangeConfig {
    pub chirp: ChirpConfig,
    pub skip: usize,
    /// Bins tried for the weaker device.
    pub candidate_bins: Vec<usize>,
    pub max_diff_db: f64,
    /// Resolution of the search.
    pub resolution_db: f64,
    pub packets: usize,
    pub per_limit: f64,
    pub weak_snr_db: f64,
    pub freq_sigma_hz: f64,
    /// Hardware delay spread; it puts tones between native bins, where
    /// their sidelobes reach the neighbours. The default spans half a bin
    /// at 500 kHz.
    pub jitter: JitterModel,
}

impl Default for DynRangeConfig {
    fn default() -> Self {
        Self {
            chirp: ChirpConfig::new(9, 500e3).expect("valid default"),
            skip: 2,
            candidate_bins: vec![2, 4, 8, 16, 32, 64, 128, 256, 384, 448, 480, 496, 504, 508, 510],
            max_diff_db: 60.0,
            resolution_db: 1.0,
            packets: 100,
            per_limit: 0.01,
            weak_snr_db: 10.0,
            freq_sigma_hz: 0.0,
            jitter: JitterModel::Uniform { min_s: 0.0, max_s: 1e-6 },
        }
    }
}

/// For each candidate bin of the weak device, the largest power deficit
/// against a device on `fixed_bin` at which the weak packet error rate stays
/// below the limit. The deficit is bisected on the assumption that errors only
/// grow with the deficit; a bin that fails even at equal power gets no value.
pub fn run_dynamic_range_sweep(fixed_bin: usize, cfg: &DynRangeConfig, seed: u64) -> Result<Vec<ExperimentRecord>> {
    if !(cfg.resolution_db > 0.0 && cfg.max_diff_db >= 0.0) {
        return Err(Error::InvalidConfig("dynamic range search bounds".into()));
    }
    let n = cfg.chirp.symbol_len();
    let mut records = Vec::with_capacity(cfg.candidate_bins.len());
    for (ci, &bin) in cfg.candidate_bins.iter().enumerate() {
        let p = pair(&cfg.chirp, cfg.skip, bin, fixed_bin)?;
        let bin_seed = trial_seed(seed, ci as u64);
        let mut probe = 0u64;
        let mut passes = |diff: f64| -> Result<bool> {
            probe += 1;
            let (w, _) = measure(
                &cfg.chirp,
                &p,
                bin,
                fixed_bin,
                diff,
                cfg.weak_snr_db,
                cfg.freq_sigma_hz,
                cfg.jitter,
                cfg.packets,
                trial_seed(bin_seed, probe),
            )?;
            Ok(w.per() < cfg.per_limit)
        };
        let tolerated = if !passes(0.0)? {
            None
        } else if passes(cfg.max_diff_db)? {
            Some(cfg.max_diff_db)
        } else {
            let (mut lo, mut hi) = (0.0, cfg.max_diff_db);
            while hi - lo > cfg.resolution_db {
                let mid = 0.5 * (lo + hi);
                if passes(mid)? {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Some(lo)
        };
        let sep = (bin + n - fixed_bin) % n;
        let mut r = ExperimentRecord::new("dynrange", ConfigSnapshot::new(&cfg.chirp, cfg.skip, 2, cfg.weak_snr_db, seed, "netscatter"))
            .param("alpha", cfg.chirp.pad_factor as f64)
            .param("fixed_bin", fixed_bin as f64)
            .param("bin", bin as f64)
            .param("separation", sep as f64)
            .param("packets", cfg.packets as f64)
            .param("freq_sigma_hz", cfg.freq_sigma_hz)
            .param("jitter_min_s", jitter_bounds(&cfg.jitter).0)
            .param("jitter_max_s", jitter_bounds(&cfg.jitter).1);
        if let Some(t) = tolerated {
            r = r.metric("max_power_diff_db", t);
        }
        records.push(r);
    }
    Ok(records)
}
