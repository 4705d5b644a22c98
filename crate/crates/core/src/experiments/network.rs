//! Network PHY rate, link-layer rate and latency of a full query round.
//!
//! The concurrent scheme is simulated at waveform level. The sequential LoRa
//! baselines are accounted analytically: a device is heard if its SNR clears
//! the demodulation floor of the rate it uses.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{DeviceImpairments, JitterModel};
use crate::css::ChirpConfig;
use crate::error::{Error, Result};
use crate::mac::{assign_cyclic_shift, rate_model};
use crate::phy::{DetectorParams, PacketLayout, Receiver};

use super::bersnr::jitter_bounds;
use super::record::{ConfigSnapshot, ExperimentRecord};
use super::sim::{simulate_round, SimDevice, Tally};
use super::trial_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Concurrent uplink after a minimal query.
    NetscatterCfg1,
    /// Concurrent uplink after a query carrying a full reassignment.
    NetscatterCfg2,
    /// One device at a time at the fixed single-user CSS rate.
    LoraFixed,
    /// One device at a time at the best rate its SNR allows.
    LoraIdealRate,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::NetscatterCfg1,
        Scheme::NetscatterCfg2,
        Scheme::LoraFixed,
        Scheme::LoraIdealRate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::NetscatterCfg1 => "netscatter_cfg1",
            Scheme::NetscatterCfg2 => "netscatter_cfg2",
            Scheme::LoraFixed => "lora_fixed",
            Scheme::LoraIdealRate => "lora_ideal_rate",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scheme {s:?}")))
    }
}

/// One row of the SNR-to-rate table: usable at or above `min_snr_db`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEntry {
    pub min_snr_db: f64,
    pub bitrate_bps: f64,
    /// Sets the preamble symbol length, `sf / bitrate`.
    pub sf: u32,
}

/// 32 kbps at 0 dB and above, halving every 3 dB down to 976.5625 bps.
pub fn default_rate_table() -> Vec<RateEntry> {
    let rates = [32000.0, 16000.0, 8000.0, 4000.0, 2000.0, 976.5625];
    rates
        .iter()
        .enumerate()
        .map(|(i, &bitrate_bps)| RateEntry {
            min_snr_db: -3.0 * i as f64,
            bitrate_bps,
            sf: 6 + i as u32,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub chirp: ChirpConfig,
    pub skip: usize,
    pub layout: PacketLayout,
    pub query_bits_cfg1: usize,
    pub query_bits_cfg2: usize,
    pub lora_query_bits: usize,
    pub downlink_bps: f64,
    /// Demodulation floor of the fixed-rate baseline.
    pub lora_fixed_min_snr_db: f64,
    pub rate_table: Vec<RateEntry>,
    pub jitter: JitterModel,
    /// Simulated query rounds per device count.
    pub rounds: usize,
    pub known_start: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            chirp: ChirpConfig::new(9, 500e3).expect("valid default"),
            skip: 2,
            layout: PacketLayout::default(),
            query_bits_cfg1: 32,
            query_bits_cfg2: 1760,
            lora_query_bits: 28,
            downlink_bps: 160e3,
            lora_fixed_min_snr_db: -12.5,
            rate_table: default_rate_table(),
            jitter: JitterModel::default(),
            rounds: 2,
            known_start: false,
        }
    }
}

/// `n` SNRs drawn uniformly from `[lo_db, hi_db]`.
pub fn uniform_snr_map(n: usize, lo_db: f64, hi_db: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| if hi_db > lo_db { rng.random_range(lo_db..=hi_db) } else { lo_db })
        .collect()
}

struct Outcome {
    tally: Tally,
    payload_time: f64,
    latency: f64,
    /// Useful bits delivered per round.
    useful_bits: f64,
    query_bits: usize,
}

/// Runs `scheme` for every device count, device `i` having SNR `snr_db[i]`.
pub fn run_network(
    n_devices_list: &[usize],
    scheme: Scheme,
    cfg: &NetworkConfig,
    snr_db: &[f64],
    seed: u64,
) -> Result<Vec<ExperimentRecord>> {
    cfg.chirp.validate()?;
    cfg.jitter.validate()?;
    if !(cfg.downlink_bps > 0.0) || cfg.rounds == 0 {
        return Err(Error::InvalidConfig("downlink rate and rounds must be positive".into()));
    }
    let mut records = Vec::with_capacity(n_devices_list.len());
    for (i, &n) in n_devices_list.iter().enumerate() {
        if n == 0 || n > snr_db.len() {
            return Err(Error::InvalidConfig(format!(
                "{n} devices need between 1 and {} SNR entries",
                snr_db.len()
            )));
        }
        let snrs = &snr_db[..n];
        if snrs.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig("non-finite SNR".into()));
        }
        let o = match scheme {
            Scheme::NetscatterCfg1 | Scheme::NetscatterCfg2 => {
                netscatter(scheme, cfg, snrs, trial_seed(seed, i as u64))?
            }
            Scheme::LoraFixed | Scheme::LoraIdealRate => lora(scheme, cfg, snrs)?,
        };
        let mean_snr = snrs.iter().sum::<f64>() / n as f64;
        let (jitter_lo, jitter_hi) = jitter_bounds(&cfg.jitter);
        let mut r = ExperimentRecord::new("network", ConfigSnapshot::new(&cfg.chirp, cfg.skip, n, mean_snr, seed, scheme.as_str()))
            .param("alpha", cfg.chirp.pad_factor as f64)
            .param("payload_bits", cfg.layout.payload_len as f64)
            .param("preamble_symbols", cfg.layout.preamble_symbols() as f64)
            .param("query_bits", o.query_bits as f64)
            .param("downlink_bps", cfg.downlink_bps)
            .param("rounds", cfg.rounds as f64)
            .param("jitter_min_s", jitter_lo)
            .param("jitter_max_s", jitter_hi)
            .param("snr_min_db", snrs.iter().cloned().fold(f64::INFINITY, f64::min))
            .param("snr_max_db", snrs.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .metric("ber", o.tally.ber())
            .metric("per", o.tally.per())
            .metric("phy_rate_bps", o.tally.correct_bits() as f64 / o.payload_time)
            .metric("link_rate_bps", o.useful_bits / o.latency)
            .metric("latency_s", o.latency)
            .metric("useful_bits", o.useful_bits);
        if matches!(scheme, Scheme::LoraFixed | Scheme::LoraIdealRate) {
            r = r.param("lora_fixed_min_snr_db", cfg.lora_fixed_min_snr_db);
        }
        records.push(r);
    }
    Ok(records)
}

/// All devices answer one query together; the round lasts one query plus
/// one packet.
fn netscatter(scheme: Scheme, cfg: &NetworkConfig, snrs: &[f64], seed: u64) -> Result<Outcome> {
    let strengths: BTreeMap<u32, f64> = snrs.iter().enumerate().map(|(i, &s)| (i as u32, s)).collect();
    let table = assign_cyclic_shift(&strengths, cfg.skip, cfg.chirp.sf, 0)?;
    let top = snrs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let devices: Vec<SimDevice> = table
        .shift_of_device
        .iter()
        .map(|(id, &shift)| {
            SimDevice::new(
                shift,
                DeviceImpairments {
                    power_gain_db: snrs[*id as usize] - top,
                    timing_jitter: cfg.jitter,
                    ..DeviceImpairments::ideal()
                },
            )
        })
        .collect();
    let params = DetectorParams {
        skip: cfg.skip,
        ..DetectorParams::default()
    };
    Receiver::with_layout(&cfg.chirp, params, cfg.layout)?;
    let rounds: Vec<Result<Tally>> = (0..cfg.rounds)
        .into_par_iter()
        .map_init(
            || Receiver::with_layout(&cfg.chirp, params, cfg.layout).expect("validated"),
            |rx, r| {
                let out = simulate_round(rx, &table, &devices, top, cfg.known_start, trial_seed(seed, r as u64))?;
                let mut t = Tally::default();
                out.iter().for_each(|o| t.add(o));
                Ok(t)
            },
        )
        .collect();
    let mut tally = Tally::default();
    for r in rounds {
        tally.merge(&r?);
    }
    let query_bits = if scheme == Scheme::NetscatterCfg1 {
        cfg.query_bits_cfg1
    } else {
        cfg.query_bits_cfg2
    };
    let ts = cfg.chirp.symbol_duration();
    let payload = cfg.layout.payload_len as f64;
    Ok(Outcome {
        tally,
        payload_time: cfg.rounds as f64 * payload * ts,
        latency: query_bits as f64 / cfg.downlink_bps + cfg.layout.total_symbols() as f64 * ts,
        useful_bits: tally.correct_packets() as f64 * payload / cfg.rounds as f64,
        query_bits,
    })
}

/// Devices are queried one after another, each paying for its own query and
/// preamble.
fn lora(scheme: Scheme, cfg: &NetworkConfig, snrs: &[f64]) -> Result<Outcome> {
    let payload = cfg.layout.payload_len;
    let preamble = cfg.layout.preamble_symbols() as f64;
    let fixed = RateEntry {
        min_snr_db: cfg.lora_fixed_min_snr_db,
        bitrate_bps: rate_model(&cfg.chirp).lora_bitrate,
        sf: cfg.chirp.sf,
    };
    let mut table = cfg.rate_table.clone();
    table.sort_by(|a, b| b.bitrate_bps.total_cmp(&a.bitrate_bps));
    if scheme == Scheme::LoraIdealRate && table.is_empty() {
        return Err(Error::InvalidConfig("empty rate table".into()));
    }
    if table.iter().any(|e| !(e.bitrate_bps > 0.0) || e.sf == 0) {
        return Err(Error::InvalidConfig("rate table entries need positive rate and sf".into()));
    }
    let mut tally = Tally::default();
    let (mut payload_time, mut latency) = (0.0, 0.0);
    for &snr in snrs {
        let entry = match scheme {
            Scheme::LoraFixed => fixed,
            _ => *table
                .iter()
                .find(|e| snr >= e.min_snr_db)
                .unwrap_or_else(|| table.last().expect("non-empty")),
        };
        let ok = snr >= entry.min_snr_db;
        tally.bits += payload;
        tally.packets += 1;
        if !ok {
            tally.bit_errors += payload;
            tally.packet_errors += 1;
        }
        let air = payload as f64 / entry.bitrate_bps;
        payload_time += air;
        latency += cfg.lora_query_bits as f64 / cfg.downlink_bps + preamble * entry.sf as f64 / entry.bitrate_bps + air;
    }
    Ok(Outcome {
        tally,
        payload_time,
        latency,
        useful_bits: tally.correct_packets() as f64 * payload as f64,
        query_bits: cfg.lora_query_bits,
    })
}
