//! Closed-form rate, capacity and collision models.

use serde::{Deserialize, Serialize};

use crate::css::ChirpConfig;
use crate::error::{Error, Result};

/// Probability that at least two of `n` devices pick the same of `2^sf`
/// cyclic shifts: `1 − ∏(1 − (i−1)/2^sf)`.
pub fn collision_probability(n: usize, sf: u32) -> Result<f64> {
    let slots = 1usize << sf;
    if n == 0 || n > slots {
        return Err(Error::InvalidConfig(format!(
            "collision model needs 1 <= n <= {slots}, got {n}"
        )));
    }
    let none: f64 = (1..=n).map(|i| 1.0 - (i - 1) as f64 / slots as f64).product();
    Ok(1.0 - none)
}

/// `N(N−1)/2^(sf+1)`.
pub fn collision_probability_approx(n: usize, sf: u32) -> f64 {
    (n * n.saturating_sub(1)) as f64 / (1u64 << (sf + 1)) as f64
}

/// Chance that `n` devices all land on different tenth-of-a-bin fractional
/// peak positions: `10!/((10−n)!·10^n)`, zero beyond ten devices.
pub fn choir_fraction_probability(n: usize) -> f64 {
    if n > 10 {
        return 0.0;
    }
    (0..n).map(|i| (10 - i) as f64 / 10.0).product()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateModel {
    /// Single-user CSS bitrate `sf·bw/2^sf`.
    pub lora_bitrate: f64,
    /// One OOK bit per symbol.
    pub device_bitrate: f64,
    /// Every shift of the (aggregate) band busy.
    pub aggregate_rate: f64,
    /// `2^sf/sf`.
    pub gain: f64,
}

pub fn rate_model(cfg: &ChirpConfig) -> RateModel {
    let chips = cfg.chips() as f64;
    let device_bitrate = cfg.bw / chips;
    RateModel {
        lora_bitrate: cfg.sf as f64 * device_bitrate,
        device_bitrate,
        aggregate_rate: device_bitrate * cfg.symbol_len() as f64,
        gain: chips / cfg.sf as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capacity {
    /// `bw·log2(1 + n·snr)`.
    pub exact: f64,
    /// `bw·n·snr/ln 2`.
    pub low_snr_approx: f64,
}

pub fn multiuser_capacity(n: usize, snr_linear: f64, bw: f64) -> Result<Capacity> {
    if !(snr_linear > 0.0 && snr_linear.is_finite()) {
        return Err(Error::InvalidConfig(format!("snr {snr_linear} must be positive")));
    }
    let x = n as f64 * snr_linear;
    Ok(Capacity {
        exact: bw * (1.0 + x).log2(),
        low_snr_approx: bw * x / std::f64::consts::LN_2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collision_numbers() {
        let p10 = collision_probability(10, 9).unwrap();
        assert!((p10 - 0.09).abs() < 0.01, "{p10}");
        assert!((collision_probability_approx(10, 9) - 0.087890625).abs() < 1e-12);
        assert_eq!(collision_probability(1, 9).unwrap(), 0.0);
        let p20 = collision_probability(20, 9).unwrap();
        assert!((p20 - 0.32).abs() < 0.015, "{p20}");
        assert!(collision_probability(513, 9).is_err());
        assert!(collision_probability(0, 9).is_err());
    }

    #[test]
    fn choir_numbers() {
        assert!((choir_fraction_probability(5) - 0.3024).abs() < 1e-12);
        assert_eq!(choir_fraction_probability(1), 1.0);
        assert!((choir_fraction_probability(2) - 0.9).abs() < 1e-12);
        assert_eq!(choir_fraction_probability(11), 0.0);
    }

    #[test]
    fn rates_sf9_500k() {
        let r = rate_model(&ChirpConfig::new(9, 500e3).unwrap());
        assert!((r.device_bitrate - 976.5625).abs() < 1e-9);
        assert!((r.lora_bitrate - 8789.0625).abs() < 1e-9);
        assert!((r.gain - 56.888).abs() < 1e-3);
        assert!((r.aggregate_rate - 500e3).abs() < 1e-6);
        // SKIP = 2 halves the usable shifts
        assert!((256.0 * r.device_bitrate - 250e3).abs() < 1e-6);
    }

    #[test]
    fn aggregate_band_doubles_devices() {
        let r = rate_model(&ChirpConfig::with_factors(9, 500e3, 1, 2).unwrap());
        assert!((r.aggregate_rate - 1e6).abs() < 1e-6);
    }

    #[test]
    fn capacity_numbers() {
        let c = multiuser_capacity(1, 0.01, 500e3).unwrap();
        assert!((c.exact - 7177.7).abs() < 0.5, "{}", c.exact);
        assert!((c.low_snr_approx - 7213.5).abs() < 0.5);
        let a = multiuser_capacity(1, 1e-3, 500e3).unwrap().low_snr_approx;
        let b = multiuser_capacity(2, 1e-3, 500e3).unwrap().low_snr_approx;
        assert!((b / a - 2.0).abs() < 1e-12);
        let tiny = multiuser_capacity(1, 1e-9, 500e3).unwrap();
        assert!((tiny.low_snr_approx / tiny.exact - 1.0).abs() < 1e-6);
        assert!(multiuser_capacity(1, 0.0, 1.0).is_err());
    }
}
