use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{apply_timing_offset, JitterModel};
use crate::css::{circular_displacement, make_upchirp, peak_search, ChirpConfig, Demodulator, DEFAULT_PAD_FACTOR};
use crate::error::{Error, Result};

use super::bersnr::jitter_bounds;
use super::record::{ConfigSnapshot, ExperimentRecord};
use super::trial_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct FftVarConfig {
    pub bw_list: Vec<f64>,
    /// Spreading factor used at each bandwidth, keeping the device bitrate
    /// near 1 kbps.
    pub sf_for_bw: Vec<(f64, u32)>,
    pub jitter: JitterModel,
    pub n_packets: usize,
    pub pad_factor: usize,
}

impl Default for FftVarConfig {
    fn default() -> Self {
        Self {
            bw_list: vec![500e3, 250e3, 125e3],
            sf_for_bw: vec![(500e3, 9), (250e3, 8), (125e3, 7)],
            jitter: JitterModel::default(),
            n_packets: 1000,
            pad_factor: DEFAULT_PAD_FACTOR,
        }
    }
}

/// Bin displacement caused by per-packet hardware delay, for each bandwidth.
/// The baseline chirp is used because its frequency wrap sits on the symbol
/// edge, where a delay maps onto exactly `delay·bw` bins.
pub fn run_fft_variation(cfg: &FftVarConfig, seed: u64) -> Result<Vec<ExperimentRecord>> {
    cfg.jitter.validate()?;
    if cfg.n_packets == 0 {
        return Err(Error::InvalidConfig("n_packets must be positive".into()));
    }
    let (jitter_lo, jitter_hi) = jitter_bounds(&cfg.jitter);
    let mut records = Vec::with_capacity(cfg.bw_list.len());
    for (bi, &bw) in cfg.bw_list.iter().enumerate() {
        let sf = cfg
            .sf_for_bw
            .iter()
            .find(|(b, _)| *b == bw)
            .map(|&(_, sf)| sf)
            .ok_or_else(|| Error::InvalidConfig(format!("no spreading factor for bandwidth {bw} Hz")))?;
        let chirp = ChirpConfig::with_factors(sf, bw, cfg.pad_factor, 1)?;
        let demod = Demodulator::new(&chirp)?;
        let up = make_upchirp(&chirp)?;
        let n = chirp.chips() as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, bi as u64));
        let mut shifts = Vec::with_capacity(cfg.n_packets);
        for _ in 0..cfg.n_packets {
            let delay = cfg.jitter.sample(&mut rng);
            let rx = apply_timing_offset(&up, -delay, &chirp)?;
            let peak = peak_search(&demod.spectrum(rx.samples())?);
            // a delay pulls the peak down; report it as a positive shift
            shifts.push(-circular_displacement(0.0, peak.fractional_bin, n));
        }
        let count = shifts.len() as f64;
        let mean = shifts.iter().sum::<f64>() / count;
        let var = shifts.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / count;
        records.push(
            ExperimentRecord::new("fftvar", ConfigSnapshot::new(&chirp, 1, 1, f64::INFINITY, seed, "netscatter"))
                .param("alpha", cfg.pad_factor as f64)
                .param("n_packets", cfg.n_packets as f64)
                .param("jitter_min_s", jitter_lo)
                .param("jitter_max_s", jitter_hi)
                .metric("fft_bin_shift", mean)
                .metric("fft_bin_shift_std", var.sqrt())
                .metric("fft_bin_shift_min", shifts.iter().cloned().fold(f64::INFINITY, f64::min))
                .metric("fft_bin_shift_max", shifts.iter().cloned().fold(f64::NEG_INFINITY, f64::max)),
        );
    }
    Ok(records)
}
