//! Per-device impairments, superposition and AWGN.
//!
//! Timing offsets follow the receiver's point of view: a positive `dt` means
//! the receiver's symbol grid lags the signal by `dt`, which moves a
//! dechirped peak up by `dt·bw` bins. Hardware and propagation delays are
//! therefore applied with a negative sign.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::css::{ChirpConfig, IqBuffer};
use crate::error::{Error, Result};

/// Propagation speed used for time-of-flight and Doppler arithmetic.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;
pub const DEFAULT_CARRIER_HZ: f64 = 900e6;
/// Upper bound of indoor delay spread.
pub const MAX_MULTIPATH_DELAY_S: f64 = 300e-9;

/// Distribution of the per-packet hardware delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JitterModel {
    None,
    /// Uniform on `[min_s, max_s]`.
    Uniform { min_s: f64, max_s: f64 },
    /// Zero-mean Gaussian with standard deviation `sigma_s`.
    Gaussian { sigma_s: f64 },
}

impl Default for JitterModel {
    fn default() -> Self {
        JitterModel::Uniform {
            min_s: 0.0,
            max_s: 2e-6,
        }
    }
}

impl JitterModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            JitterModel::None => true,
            JitterModel::Uniform { min_s, max_s } => {
                min_s.is_finite() && max_s.is_finite() && min_s >= 0.0 && max_s >= min_s
            }
            JitterModel::Gaussian { sigma_s } => sigma_s.is_finite() && sigma_s >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("jitter model {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            JitterModel::None => 0.0,
            JitterModel::Uniform { min_s, max_s } => {
                if max_s > min_s {
                    rng.random_range(min_s..=max_s)
                } else {
                    min_s
                }
            }
            JitterModel::Gaussian { sigma_s } => {
                let z: f64 = StandardNormal.sample(rng);
                z * sigma_s
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceImpairments {
    /// Received power relative to the unit-power reference device.
    pub power_gain_db: f64,
    pub timing_jitter: JitterModel,
    pub freq_offset_hz: f64,
    pub distance_m: f64,
    pub velocity_mps: f64,
    /// Extra bounded delay standing in for indoor multipath.
    pub multipath_delay_s: f64,
}

impl Default for DeviceImpairments {
    fn default() -> Self {
        Self::ideal()
    }
}

impl DeviceImpairments {
    pub fn ideal() -> Self {
        Self {
            power_gain_db: 0.0,
            timing_jitter: JitterModel::None,
            freq_offset_hz: 0.0,
            distance_m: 0.0,
            velocity_mps: 0.0,
            multipath_delay_s: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.timing_jitter.validate()?;
        if !(self.power_gain_db <= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "power gain {} dB above the reference",
                self.power_gain_db
            )));
        }
        if !(self.distance_m.is_finite() && self.distance_m >= 0.0) {
            return Err(Error::InvalidConfig(format!("distance {}", self.distance_m)));
        }
        if !(0.0..=MAX_MULTIPATH_DELAY_S).contains(&self.multipath_delay_s) {
            return Err(Error::InvalidConfig(format!(
                "multipath delay {} s",
                self.multipath_delay_s
            )));
        }
        if !(self.freq_offset_hz.is_finite() && self.velocity_mps.is_finite()) {
            return Err(Error::InvalidConfig("non-finite offset".into()));
        }
        Ok(())
    }

    /// Draws the per-packet values. Delay is returned as a positive lag.
    pub fn realize<R: Rng + ?Sized>(&self, carrier_hz: f64, rng: &mut R) -> Realized {
        let delay_s = self.timing_jitter.sample(rng) + tof_delay(self.distance_m) + self.multipath_delay_s;
        Realized {
            delay_s,
            freq_offset_hz: self.freq_offset_hz + doppler_shift(self.velocity_mps, carrier_hz),
            power_gain_db: self.power_gain_db,
            phase_rad: rng.random_range(0.0..std::f64::consts::TAU),
        }
    }
}

/// Impairment values drawn for one packet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Realized {
    pub delay_s: f64,
    pub freq_offset_hz: f64,
    pub power_gain_db: f64,
    /// Carrier phase of the device's path, unknown to the receiver.
    pub phase_rad: f64,
}

impl Realized {
    pub fn apply(&self, sig: &IqBuffer, cfg: &ChirpConfig) -> Result<IqBuffer> {
        let delayed = apply_timing_offset(sig, -self.delay_s, cfg)?;
        let shifted = apply_freq_offset(&delayed, self.freq_offset_hz)?;
        let rot = Complex64::from_polar(1.0, self.phase_rad);
        let turned = shifted.samples().iter().map(|x| x * rot).collect();
        Ok(apply_power_gain(&IqBuffer::from_finite(turned, shifted.sample_rate()), self.power_gain_db))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// SNR of a 0 dB-gain device over the in-band noise.
    pub snr_db: f64,
    pub seed: u64,
    pub carrier_hz: f64,
}

impl ChannelConfig {
    pub fn new(snr_db: f64, seed: u64) -> Self {
        Self {
            snr_db,
            seed,
            carrier_hz: DEFAULT_CARRIER_HZ,
        }
    }

    /// Complex noise power per sample relative to the unit signal.
    pub fn noise_power(&self) -> f64 {
        10f64.powf(-self.snr_db / 10.0)
    }
}

/// Shifts `sig` in time by `dt` seconds using a linear phase ramp across the
/// DFT of the buffer (exact, circular fractional delay). Positive `dt` makes
/// the content appear `dt` earlier, i.e. the receiver grid lags by `dt`.
pub fn apply_timing_offset(sig: &IqBuffer, dt: f64, cfg: &ChirpConfig) -> Result<IqBuffer> {
    if !dt.is_finite() || dt.abs() >= cfg.symbol_duration() {
        return Err(Error::OffsetOutOfRange(format!(
            "timing offset {dt} s not below one symbol ({} s)",
            cfg.symbol_duration()
        )));
    }
    if dt == 0.0 || sig.is_empty() {
        return Ok(sig.clone());
    }
    let len = sig.len();
    let fs = sig.sample_rate();
    let mut bins = sig.samples().to_vec();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut bins);
    let shift_samples = dt * fs;
    for (b, v) in bins.iter_mut().enumerate() {
        // signed frequency index; the Nyquist bin maps to −len/2
        let f = if 2 * b < len { b as f64 } else { b as f64 - len as f64 };
        let cycles = (f * shift_samples / len as f64).rem_euclid(1.0);
        *v *= Complex64::from_polar(1.0 / len as f64, 2.0 * PI * cycles);
    }
    planner.plan_fft_inverse(len).process(&mut bins);
    IqBuffer::new(bins, fs)
}

/// Multiplies by `exp(j2π·df·n/fs)`.
pub fn apply_freq_offset(sig: &IqBuffer, df: f64) -> Result<IqBuffer> {
    let fs = sig.sample_rate();
    if !df.is_finite() || df.abs() >= fs / 2.0 {
        return Err(Error::OffsetOutOfRange(format!(
            "frequency offset {df} Hz outside ±{} Hz",
            fs / 2.0
        )));
    }
    if df == 0.0 {
        return Ok(sig.clone());
    }
    let step = df / fs;
    let samples = sig
        .samples()
        .iter()
        .enumerate()
        .map(|(n, x)| x * Complex64::from_polar(1.0, 2.0 * PI * (step * n as f64).rem_euclid(1.0)))
        .collect();
    Ok(IqBuffer::from_finite(samples, fs))
}

pub fn apply_power_gain(sig: &IqBuffer, gain_db: f64) -> IqBuffer {
    if gain_db == 0.0 {
        return sig.clone();
    }
    let a = 10f64.powf(gain_db / 20.0);
    IqBuffer::from_finite(sig.samples().iter().map(|x| x * a).collect(), sig.sample_rate())
}

/// Round-trip time of flight `2d/c`.
pub fn tof_delay(distance_m: f64) -> f64 {
    2.0 * distance_m / SPEED_OF_LIGHT
}

/// One-way Doppler shift `fc·v/c`.
pub fn doppler_shift(velocity_mps: f64, carrier_hz: f64) -> f64 {
    carrier_hz * velocity_mps / SPEED_OF_LIGHT
}

/// Sample-wise sum of `(signal, start)` parts; the output spans their union
/// starting at sample 0.
pub fn superpose(parts: &[(IqBuffer, usize)]) -> Result<IqBuffer> {
    let first = parts.first().ok_or(Error::EmptyBuffer)?;
    let fs = first.0.sample_rate();
    if parts.iter().any(|(b, _)| b.sample_rate() != fs) {
        return Err(Error::InvalidConfig("parts have different sample rates".into()));
    }
    let len = parts.iter().map(|(b, s)| b.len() + s).max().unwrap_or(0);
    let mut out = vec![Complex64::new(0.0, 0.0); len];
    for (buf, start) in parts {
        for (o, x) in out[*start..].iter_mut().zip(buf.samples()) {
            *o += x;
        }
    }
    IqBuffer::new(out, fs)
}

/// Adds circularly-symmetric complex Gaussian noise of power `10^(−snr/10)`
/// per sample (the signal reference is unit power).
pub fn add_awgn(sig: &IqBuffer, snr_db: f64, seed: u64) -> IqBuffer {
    add_awgn_with(sig, snr_db, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn add_awgn_with<R: Rng + ?Sized>(sig: &IqBuffer, snr_db: f64, rng: &mut R) -> IqBuffer {
    let sigma = (10f64.powf(-snr_db / 10.0) / 2.0).sqrt();
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let samples = sig
        .samples()
        .iter()
        .map(|x| x + Complex64::new(normal.sample(rng), normal.sample(rng)))
        .collect();
    IqBuffer::from_finite(samples, sig.sample_rate())
}

/// One device's contribution before impairments.
#[derive(Debug, Clone)]
pub struct Transmission {
    pub signal: IqBuffer,
    pub start: usize,
    pub impairments: DeviceImpairments,
}

/// Applies each device's impairments, superposes everything onto a buffer of
/// `len` samples and adds noise. Randomness comes only from `chan.seed`.
pub fn propagate(
    parts: &[Transmission],
    len: usize,
    cfg: &ChirpConfig,
    chan: &ChannelConfig,
) -> Result<(IqBuffer, Vec<Realized>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(chan.seed);
    let mut acc = vec![Complex64::new(0.0, 0.0); len];
    let mut realized = Vec::with_capacity(parts.len());
    for t in parts {
        t.impairments.validate()?;
        let r = t.impairments.realize(chan.carrier_hz, &mut rng);
        let out = r.apply(&t.signal, cfg)?;
        if t.start + out.len() > len {
            return Err(Error::Truncated {
                needed: t.start + out.len(),
                available: len,
            });
        }
        for (a, x) in acc[t.start..].iter_mut().zip(out.samples()) {
            *a += x;
        }
        realized.push(r);
    }
    let clean = IqBuffer::from_finite(acc, cfg.sample_rate());
    Ok((add_awgn_with(&clean, chan.snr_db, &mut rng), realized))
}
