use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Backscatter gain levels, strongest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PowerLevel {
    Max,
    Mid,
    Low,
}

impl PowerLevel {
    pub const ALL: [PowerLevel; 3] = [PowerLevel::Max, PowerLevel::Mid, PowerLevel::Low];

    pub fn gain_db(self) -> f64 {
        match self {
            PowerLevel::Max => 0.0,
            PowerLevel::Mid => -4.0,
            PowerLevel::Low => -10.0,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerAdaptConfig {
    /// Query RSSI below which a joining device starts at full gain.
    pub association_threshold_db: f64,
    pub hysteresis_db: f64,
    /// Consecutive failures tolerated before re-association.
    pub max_failures: u32,
}

impl Default for PowerAdaptConfig {
    fn default() -> Self {
        Self {
            association_threshold_db: 0.0,
            hysteresis_db: 2.5,
            max_failures: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DevicePowerState {
    pub level: PowerLevel,
    /// Query RSSI recorded at association, with the level chosen then.
    pub baseline: Option<(f64, PowerLevel)>,
    pub consecutive_failures: u32,
    /// Sit out this round's concurrent transmission.
    pub skip_transmission: bool,
    pub reassociate: bool,
}

impl Default for DevicePowerState {
    fn default() -> Self {
        Self {
            level: PowerLevel::Max,
            baseline: None,
            consecutive_failures: 0,
            skip_transmission: false,
            reassociate: false,
        }
    }
}

/// Association: weak query → full gain, otherwise the middle level, and the
/// RSSI becomes the baseline. Afterwards the device steps at most one level
/// away from its baseline level to cancel RSSI changes beyond the hysteresis
/// band; if that cannot bring the change back within the band it skips the
/// round. Re-association is requested once failures exceed `max_failures`.
pub fn device_power_adapt(
    state: &DevicePowerState,
    query_rssi: f64,
    at_association: bool,
    cfg: &PowerAdaptConfig,
) -> DevicePowerState {
    if at_association || state.baseline.is_none() {
        let level = if query_rssi < cfg.association_threshold_db {
            PowerLevel::Max
        } else {
            PowerLevel::Mid
        };
        return DevicePowerState {
            level,
            baseline: Some((query_rssi, level)),
            ..DevicePowerState::default()
        };
    }
    let (base_rssi, base_level) = state.baseline.expect("checked above");
    let delta = query_rssi - base_rssi;
    let mut next = *state;
    next.reassociate = false;

    let (level, residual) = if delta.abs() <= cfg.hysteresis_db {
        (base_level, delta)
    } else {
        let b = base_level.index();
        let candidates = [b.checked_sub(1), Some(b), Some(b + 1)];
        candidates
            .into_iter()
            .flatten()
            .filter_map(|i| PowerLevel::ALL.get(i).copied())
            .map(|l| (l, delta + l.gain_db() - base_level.gain_db()))
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .expect("baseline level is always a candidate")
    };
    next.level = level;
    if residual.abs() > cfg.hysteresis_db {
        next.skip_transmission = true;
        next.consecutive_failures += 1;
        if next.consecutive_failures > cfg.max_failures {
            next.reassociate = true;
        }
    } else {
        next.skip_transmission = false;
        next.consecutive_failures = 0;
    }
    next
}

/// `10·log10(|Γ₀ − Γ₁|² / 4)`.
pub fn backscatter_power_gain(gamma0: Complex64, gamma1: Complex64) -> Result<f64> {
    if gamma0.norm() > 1.0 + 1e-12 || gamma1.norm() > 1.0 + 1e-12 {
        return Err(Error::InvalidConfig(
            "reflection coefficients must satisfy |Γ| <= 1".into(),
        ));
    }
    Ok(10.0 * ((gamma0 - gamma1).norm_sqr() / 4.0).log10())
}
