//! Chirp synthesis and FFT demodulation.
//!
//! The baseline upchirp at critical sampling is
//! `s[n] = exp(j2π(n²/(2N) − n/2))` with `N = 2^sf`. Rotating it left by `k`
//! samples and dechirping with `conj(s)` leaves a pure tone on FFT bin `k`.
//! Aggregated bands (`agg_factor = m > 1`) sample at `m·bw` and keep the chirp
//! slope of a single `bw` sweep, so one `m·N`-point FFT resolves `m·N` slots.

use std::cell::Cell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_SF: u32 = 4;
pub const MAX_SF: u32 = 12;
pub const DEFAULT_PAD_FACTOR: usize = 10;

/// Parameters shared by every symbol of a network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChirpConfig {
    pub sf: u32,
    /// Chirp bandwidth in Hz.
    pub bw: f64,
    /// Zero-padding multiple applied before the FFT.
    pub pad_factor: usize,
    /// Number of chirp bandwidths covered by the receiver's sample rate.
    pub agg_factor: usize,
}

impl ChirpConfig {
    pub fn new(sf: u32, bw: f64) -> Result<Self> {
        Self::with_factors(sf, bw, DEFAULT_PAD_FACTOR, 1)
    }

    pub fn with_factors(sf: u32, bw: f64, pad_factor: usize, agg_factor: usize) -> Result<Self> {
        let cfg = Self {
            sf,
            bw,
            pad_factor,
            agg_factor,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_pad_factor(mut self, pad_factor: usize) -> Result<Self> {
        self.pad_factor = pad_factor;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(MIN_SF..=MAX_SF).contains(&self.sf) {
            return Err(Error::InvalidSpreadingFactor(self.sf));
        }
        if !(self.bw.is_finite() && self.bw > 0.0) {
            return Err(Error::InvalidConfig(format!("bandwidth {} Hz", self.bw)));
        }
        if self.pad_factor < 1 {
            return Err(Error::InvalidConfig("pad factor must be >= 1".into()));
        }
        if self.agg_factor < 1 {
            return Err(Error::InvalidConfig("aggregation factor must be >= 1".into()));
        }
        Ok(())
    }

    /// Chips per symbol, `2^sf`.
    pub fn chips(&self) -> usize {
        1 << self.sf
    }

    /// Samples per symbol at the receiver rate, `m·2^sf`.
    pub fn symbol_len(&self) -> usize {
        self.agg_factor * self.chips()
    }

    pub fn sample_rate(&self) -> f64 {
        self.agg_factor as f64 * self.bw
    }

    pub fn symbol_duration(&self) -> f64 {
        self.chips() as f64 / self.bw
    }

    pub fn fft_size(&self) -> usize {
        self.pad_factor * self.symbol_len()
    }

    /// Spacing of native (unpadded) FFT bins in Hz.
    pub fn bin_spacing_hz(&self) -> f64 {
        self.bw / self.chips() as f64
    }

    /// Spacing of zero-padded FFT bins in Hz.
    pub fn bin_resolution(&self) -> f64 {
        self.bw / (self.pad_factor * self.chips()) as f64
    }
}

/// Complex baseband samples. Always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct IqBuffer {
    samples: Vec<Complex64>,
    sample_rate: f64,
}

impl IqBuffer {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::InvalidConfig(format!("sample rate {sample_rate}")));
        }
        if samples.iter().any(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: f64) -> Self {
        Self {
            samples: vec![Complex64::new(0.0, 0.0); len],
            sample_rate,
        }
    }

    /// Callers guarantee finiteness (values produced by unit-modulus or
    /// linear operations on finite input).
    pub(crate) fn from_finite(samples: Vec<Complex64>, sample_rate: f64) -> Self {
        debug_assert!(samples.iter().all(|s| s.re.is_finite() && s.im.is_finite()));
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.energy() / self.samples.len() as f64
        }
    }

    pub fn slice(&self, start: usize, len: usize) -> Result<IqBuffer> {
        let end = start.checked_add(len).filter(|&e| e <= self.len()).ok_or(Error::Truncated {
            needed: start.saturating_add(len),
            available: self.len(),
        })?;
        Ok(Self::from_finite(self.samples[start..end].to_vec(), self.sample_rate))
    }
}

/// Zero-padded FFT of one dechirped symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolSpectrum {
    pub bins: Vec<Complex64>,
    /// Hz per padded bin.
    pub bin_resolution: f64,
    pub pad_factor: usize,
    /// Number of native bins (the unpadded symbol length).
    pub native_len: usize,
}

impl SymbolSpectrum {
    pub fn powers(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.norm_sqr()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    /// Index in the padded grid.
    pub bin_index: usize,
    /// Position in native bins, in `[0, native_len)`.
    pub fractional_bin: f64,
    pub power: f64,
}

/// Unit-modulus chirp sample `exp(j2π(i²/period − i/2))`, evaluated with
/// exact integer reduction of the quadratic term.
fn chirp_sample(i: u64, period: u64) -> Complex64 {
    let q = ((i as u128 * i as u128) % period as u128) as f64 / period as f64;
    let half = if i % 2 == 1 { 0.5 } else { 0.0 };
    Complex64::from_polar(1.0, 2.0 * PI * (q - half))
}

/// Baseline upchirp of `2^sf` samples sweeping `−bw/2 .. +bw/2`.
pub fn make_upchirp(cfg: &ChirpConfig) -> Result<IqBuffer> {
    cfg.validate()?;
    let n = cfg.chips() as u64;
    let samples = (0..n).map(|i| chirp_sample(i, 2 * n)).collect();
    Ok(IqBuffer::from_finite(samples, cfg.bw))
}

pub fn make_downchirp(cfg: &ChirpConfig) -> Result<IqBuffer> {
    let up = make_upchirp(cfg)?;
    let rate = up.sample_rate();
    Ok(IqBuffer::from_finite(
        up.into_samples().into_iter().map(|s| s.conj()).collect(),
        rate,
    ))
}

/// Rotates `symbol` left by `k` samples: `out[n] = symbol[(n + k) mod len]`.
pub fn cyclic_shift(symbol: &IqBuffer, k: usize) -> Result<IqBuffer> {
    if k >= symbol.len() {
        return Err(Error::ShiftOutOfRange {
            shift: k,
            len: symbol.len(),
        });
    }
    let mut samples = symbol.samples().to_vec();
    samples.rotate_left(k);
    Ok(IqBuffer::from_finite(samples, symbol.sample_rate()))
}

/// One symbol for slot `k` in an aggregate band of `m·bw`. The chirp keeps the
/// single-band slope and wraps around the aggregate band edges.
pub fn make_aggregate_upchirp(cfg: &ChirpConfig, k: usize) -> Result<IqBuffer> {
    cfg.validate()?;
    let slots = cfg.symbol_len();
    if k >= slots {
        return Err(Error::ShiftOutOfRange {
            shift: k,
            len: slots,
        });
    }
    let m = cfg.agg_factor as u64;
    let period = 2 * m * slots as u64;
    let offset = m * k as u64;
    let samples = (0..slots as u64)
        .map(|n| chirp_sample(n + offset, period))
        .collect();
    Ok(IqBuffer::from_finite(samples, cfg.sample_rate()))
}

/// Receiver reference: the conjugate of the slot-0 aggregate upchirp. For
/// `agg_factor = 1` this is exactly [`make_downchirp`].
fn reference_downchirp(cfg: &ChirpConfig) -> Vec<Complex64> {
    let m = cfg.agg_factor as u64;
    let len = cfg.symbol_len() as u64;
    (0..len).map(|n| chirp_sample(n, 2 * m * len).conj()).collect()
}

/// Multiplies one received symbol by the reference downchirp.
pub fn dechirp(rx: &IqBuffer, cfg: &ChirpConfig) -> Result<IqBuffer> {
    cfg.validate()?;
    if rx.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let expected = cfg.symbol_len();
    if rx.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: rx.len(),
        });
    }
    let reference = reference_downchirp(cfg);
    let samples = rx
        .samples()
        .iter()
        .zip(&reference)
        .map(|(x, d)| x * d)
        .collect();
    Ok(IqBuffer::from_finite(samples, rx.sample_rate()))
}

/// Appends `(α−1)·len` zeros and takes an `α·len`-point FFT.
pub fn zero_pad_fft(dechirped: &IqBuffer, cfg: &ChirpConfig) -> Result<SymbolSpectrum> {
    if cfg.pad_factor < 1 {
        return Err(Error::InvalidConfig("pad factor must be >= 1".into()));
    }
    if dechirped.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let native_len = dechirped.len();
    let size = native_len * cfg.pad_factor;
    let mut bins = vec![Complex64::new(0.0, 0.0); size];
    bins[..native_len].copy_from_slice(dechirped.samples());
    FftPlanner::new().plan_fft_forward(size).process(&mut bins);
    Ok(SymbolSpectrum {
        bins,
        bin_resolution: dechirped.sample_rate() / size as f64,
        pad_factor: cfg.pad_factor,
        native_len,
    })
}

/// Strongest bin; ties go to the lowest index.
pub fn peak_search(spec: &SymbolSpectrum) -> Peak {
    let (bin_index, power) = argmax_power(spec.bins.iter().map(|b| b.norm_sqr()));
    let pad = spec.pad_factor.max(1) as f64;
    let native = spec.native_len as f64;
    Peak {
        bin_index,
        fractional_bin: (bin_index as f64 / pad).rem_euclid(native),
        power,
    }
}

pub(crate) fn argmax_power(powers: impl IntoIterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, p) in powers.into_iter().enumerate() {
        if p > best.1 {
            best = (i, p);
        }
    }
    best
}

/// FFT-bin displacement caused by a timing offset `dt` (seconds).
pub fn bin_from_timing_offset(dt: f64, cfg: &ChirpConfig) -> f64 {
    dt * cfg.bw
}

/// FFT-bin displacement caused by a carrier offset `df` (Hz).
pub fn bin_from_freq_offset(df: f64, cfg: &ChirpConfig) -> f64 {
    df * cfg.chips() as f64 / cfg.bw
}

/// Signed circular distance `to − from` folded into `[−len/2, len/2)`.
pub fn circular_displacement(from: f64, to: f64, len: f64) -> f64 {
    (to - from + len / 2.0).rem_euclid(len) - len / 2.0
}

/// Dechirp + zero-padded FFT with the plan and reference chirp cached.
///
/// Counts multiply passes and FFTs so callers can check that receiver work
/// does not grow with the number of transmitters.
pub struct Demodulator {
    cfg: ChirpConfig,
    reference: Vec<Complex64>,
    fft: Arc<dyn Fft<f64>>,
    dechirps: Cell<u64>,
    ffts: Cell<u64>,
}

impl Demodulator {
    pub fn new(cfg: &ChirpConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: *cfg,
            reference: reference_downchirp(cfg),
            fft: FftPlanner::new().plan_fft_forward(cfg.fft_size()),
            dechirps: Cell::new(0),
            ffts: Cell::new(0),
        })
    }

    pub fn config(&self) -> &ChirpConfig {
        &self.cfg
    }

    fn check_len(&self, symbol: &[Complex64]) -> Result<()> {
        if symbol.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        if symbol.len() != self.reference.len() {
            return Err(Error::LengthMismatch {
                expected: self.reference.len(),
                actual: symbol.len(),
            });
        }
        Ok(())
    }

    fn transform(&self, symbol: &[Complex64]) -> Vec<Complex64> {
        let mut bins = vec![Complex64::new(0.0, 0.0); self.cfg.fft_size()];
        for ((b, x), d) in bins.iter_mut().zip(symbol).zip(&self.reference) {
            *b = x * d;
        }
        self.dechirps.set(self.dechirps.get() + 1);
        self.fft.process(&mut bins);
        self.ffts.set(self.ffts.get() + 1);
        bins
    }

    pub fn spectrum(&self, symbol: &[Complex64]) -> Result<SymbolSpectrum> {
        self.check_len(symbol)?;
        Ok(SymbolSpectrum {
            bins: self.transform(symbol),
            bin_resolution: self.cfg.bin_resolution(),
            pad_factor: self.cfg.pad_factor,
            native_len: self.cfg.symbol_len(),
        })
    }

    /// `|X|²` over the padded grid.
    pub fn power_spectrum(&self, symbol: &[Complex64]) -> Result<Vec<f64>> {
        self.check_len(symbol)?;
        Ok(self.transform(symbol).iter().map(|b| b.norm_sqr()).collect())
    }

    pub fn dechirp_count(&self) -> u64 {
        self.dechirps.get()
    }

    pub fn fft_count(&self) -> u64 {
        self.ffts.get()
    }
}
