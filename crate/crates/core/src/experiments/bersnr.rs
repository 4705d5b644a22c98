use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::channel::{DeviceImpairments, JitterModel};
use crate::css::ChirpConfig;
use crate::error::{Error, Result};
use crate::mac::AssignmentTable;
use crate::phy::{DetectorParams, Receiver, PAYLOAD_BITS};

use super::record::{ConfigSnapshot, ExperimentRecord};
use super::sim::{simulate_round, SimDevice, Tally};
use super::trial_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct BerSnrConfig {
    pub chirp: ChirpConfig,
    pub skip: usize,
    pub jitter: JitterModel,
    /// Payload symbols per device; rounded up to whole packets.
    pub n_symbols: usize,
    /// Give the receiver the true packet start instead of searching for it.
    pub known_start: bool,
}

impl Default for BerSnrConfig {
    fn default() -> Self {
        Self {
            chirp: ChirpConfig::new(9, 500e3).expect("valid default"),
            skip: 2,
            jitter: JitterModel::default(),
            n_symbols: 10_000,
            known_start: false,
        }
    }
}

/// Shifts for `n` devices spread evenly over the SKIP-aligned slots.
pub(crate) fn spread_shifts(n: usize, skip: usize, shifts: usize) -> Result<Vec<usize>> {
    let slots = shifts / skip.max(1);
    if n == 0 || n > slots || skip == 0 {
        return Err(Error::Capacity {
            requested: n * skip,
            available: shifts,
        });
    }
    let step = slots / n;
    Ok((0..n).map(|i| i * step * skip).collect())
}

/// Per-device BER of `n_devices` equal-power devices at each SNR. One OOK bit
/// per symbol, so the symbol error rate equals the bit error rate.
pub fn run_ber_snr(cfg: &BerSnrConfig, snr_list: &[f64], n_devices: usize, seed: u64) -> Result<Vec<ExperimentRecord>> {
    cfg.chirp.validate()?;
    cfg.jitter.validate()?;
    let shifts = spread_shifts(n_devices, cfg.skip, cfg.chirp.symbol_len())?;
    let table = AssignmentTable::manual(
        cfg.skip,
        cfg.chirp.symbol_len(),
        shifts.iter().enumerate().map(|(i, &s)| (i as u32, s)).collect::<BTreeMap<_, _>>(),
    )?;
    let impairments = DeviceImpairments {
        timing_jitter: cfg.jitter,
        ..DeviceImpairments::ideal()
    };
    let devices: Vec<SimDevice> = shifts.iter().map(|&s| SimDevice::new(s, impairments)).collect();
    let rounds = cfg.n_symbols.div_ceil(PAYLOAD_BITS).max(1);
    let params = DetectorParams {
        skip: cfg.skip,
        ..DetectorParams::default()
    };
    Receiver::new(&cfg.chirp, params)?;

    let mut records = Vec::with_capacity(snr_list.len());
    for (si, &snr) in snr_list.iter().enumerate() {
        let point_seed = trial_seed(seed, si as u64);
        let per_round: Vec<Result<Vec<Tally>>> = (0..rounds)
            .into_par_iter()
            .map_init(
                || Receiver::new(&cfg.chirp, params).expect("validated above"),
                |rx, r| {
                    let out = simulate_round(rx, &table, &devices, snr, cfg.known_start, trial_seed(point_seed, r as u64))?;
                    Ok(out
                        .iter()
                        .map(|o| {
                            let mut t = Tally::default();
                            t.add(o);
                            t
                        })
                        .collect())
                },
            )
            .collect();
        let mut per_device = vec![Tally::default(); n_devices];
        for round in per_round {
            for (acc, t) in per_device.iter_mut().zip(round?) {
                acc.merge(&t);
            }
        }
        let mut total = Tally::default();
        per_device.iter().for_each(|t| total.merge(t));
        let worst = per_device.iter().map(Tally::ber).fold(0.0, f64::max);
        let payload_time = (rounds * PAYLOAD_BITS) as f64 * cfg.chirp.symbol_duration();
        let (jitter_lo, jitter_hi) = jitter_bounds(&cfg.jitter);
        records.push(
            ExperimentRecord::new("bersnr", ConfigSnapshot::new(&cfg.chirp, cfg.skip, n_devices, snr, seed, "netscatter"))
                .param("alpha", cfg.chirp.pad_factor as f64)
                .param("n_symbols", (rounds * PAYLOAD_BITS) as f64)
                .param("known_start", f64::from(u8::from(cfg.known_start)))
                .param("jitter_min_s", jitter_lo)
                .param("jitter_max_s", jitter_hi)
                .metric("ber", total.ber())
                .metric("ser", total.ber())
                .metric("per", total.per())
                .metric("max_device_ber", worst)
                .metric("phy_rate_bps", total.correct_bits() as f64 / payload_time),
        );
    }
    Ok(records)
}

/// Range of a jitter model for the CSV, with a Gaussian reported as ±σ.
pub(crate) fn jitter_bounds(j: &JitterModel) -> (f64, f64) {
    match *j {
        JitterModel::None => (0.0, 0.0),
        JitterModel::Uniform { min_s, max_s } => (min_s, max_s),
        JitterModel::Gaussian { sigma_s } => (-sigma_s, sigma_s),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_shifts_cover_slots() {
        assert_eq!(spread_shifts(1, 2, 512).unwrap(), vec![0]);
        assert_eq!(spread_shifts(4, 2, 512).unwrap(), vec![0, 128, 256, 384]);
        assert_eq!(spread_shifts(256, 2, 512).unwrap().len(), 256);
        assert!(spread_shifts(257, 2, 512).is_err());
        assert!(spread_shifts(0, 2, 512).is_err());
    }

    #[test]
    fn high_snr_single_device_is_error_free() {
        let cfg = BerSnrConfig {
            n_symbols: 400,
            ..BerSnrConfig::default()
        };
        let r = run_ber_snr(&cfg, &[20.0], 1, 3).unwrap();
        assert_eq!(r[0].metrics["ber"], 0.0);
        assert!((r[0].metrics["phy_rate_bps"] - 976.5625).abs() < 1e-9);
    }
}
