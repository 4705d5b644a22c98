//! Packet framing and the concurrent receiver: packet-start search, active
//! device detection from the preamble and OOK payload decoding.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::css::{make_aggregate_upchirp, ChirpConfig, Demodulator, IqBuffer};
use crate::error::{Error, Result};
use crate::mac::AssignmentTable;

pub const N_PREAMBLE_UP: usize = 6;
pub const N_PREAMBLE_DOWN: usize = 2;
pub const DATA_BITS: usize = 32;
pub const CRC_BITS: usize = 8;
pub const PAYLOAD_BITS: usize = DATA_BITS + CRC_BITS;
pub const CRC_POLY: u8 = 0x07;
/// Common-offset search range, native bins either side of zero.
pub const OFFSET_SEARCH_BINS: usize = 20;
/// Offsets scoring within this fraction of the best are ties, resolved
/// toward zero (a full table looks the same shifted by SKIP).
const OFFSET_TIE_RATIO: f64 = 0.9;
/// Native bins either side of a fractional position used to interpolate it.
const INTERP_TAPS: usize = 16;
/// Packet power over the quietest symbol's that counts as a visible onset.
const EDGE_RATIO: f64 = 100.0;

/// CRC-8, polynomial 0x07, zero init, bits taken in order.
pub fn crc8(bits: &[bool]) -> u8 {
    bits.iter().fold(0u8, |crc, &b| {
        let top = (crc >> 7) & 1 == 1;
        let crc = crc << 1;
        if top != b {
            crc ^ CRC_POLY
        } else {
            crc
        }
    })
}

/// 32 data bits (MSB first) followed by their CRC-8.
pub fn payload_with_crc(data: u32) -> Vec<bool> {
    let mut bits: Vec<bool> = (0..DATA_BITS).rev().map(|i| (data >> i) & 1 == 1).collect();
    let crc = crc8(&bits);
    bits.extend((0..CRC_BITS).rev().map(|i| (crc >> i) & 1 == 1));
    bits
}

/// The data word if the CRC matches.
pub fn check_crc(bits: &[bool]) -> Option<u32> {
    if bits.len() != PAYLOAD_BITS {
        return None;
    }
    let (data, crc) = bits.split_at(DATA_BITS);
    let got = crc.iter().fold(0u8, |a, &b| (a << 1) | b as u8);
    (crc8(data) == got).then(|| data.iter().fold(0u32, |a, &b| (a << 1) | b as u32))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketLayout {
    pub n_up: usize,
    pub n_down: usize,
    pub payload_len: usize,
}

impl Default for PacketLayout {
    fn default() -> Self {
        Self {
            n_up: N_PREAMBLE_UP,
            n_down: N_PREAMBLE_DOWN,
            payload_len: PAYLOAD_BITS,
        }
    }
}

impl PacketLayout {
    pub fn total_symbols(&self) -> usize {
        self.n_up + self.n_down + self.payload_len
    }

    pub fn preamble_symbols(&self) -> usize {
        self.n_up + self.n_down
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketFrame {
    pub n_preamble_up: usize,
    pub n_preamble_down: usize,
    pub payload_bits: Vec<bool>,
    pub cyclic_shift: usize,
}

impl PacketFrame {
    pub fn new(cyclic_shift: usize, payload_bits: Vec<bool>) -> Self {
        Self {
            n_preamble_up: N_PREAMBLE_UP,
            n_preamble_down: N_PREAMBLE_DOWN,
            payload_bits,
            cyclic_shift,
        }
    }

    /// Frame carrying `data` plus CRC.
    pub fn with_data(cyclic_shift: usize, data: u32) -> Self {
        Self::new(cyclic_shift, payload_with_crc(data))
    }

    pub fn layout(&self) -> PacketLayout {
        PacketLayout {
            n_up: self.n_preamble_up,
            n_down: self.n_preamble_down,
            payload_len: self.payload_bits.len(),
        }
    }

    pub fn total_symbols(&self) -> usize {
        self.layout().total_symbols()
    }
}

/// Upchirps, downchirps, then one shifted upchirp per 1 bit and silence per
/// 0 bit, all on the frame's shift.
pub fn build_packet(frame: &PacketFrame, cfg: &ChirpConfig) -> Result<IqBuffer> {
    let up = make_aggregate_upchirp(cfg, frame.cyclic_shift)?;
    let up = up.samples();
    let m = up.len();
    let zero = Complex64::new(0.0, 0.0);
    let mut out = Vec::with_capacity(frame.total_symbols() * m);
    for _ in 0..frame.n_preamble_up {
        out.extend_from_slice(up);
    }
    for _ in 0..frame.n_preamble_down {
        out.extend(up.iter().map(|x| x.conj()));
    }
    for &bit in &frame.payload_bits {
        if bit {
            out.extend_from_slice(up);
        } else {
            out.resize(out.len() + m, zero);
        }
    }
    IqBuffer::new(out, cfg.sample_rate())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub skip: usize,
    /// Minimum preamble peak over the per-bin noise power.
    pub kappa_db: f64,
    /// Required margin over the worst-case leakage from other devices.
    pub leakage_margin: f64,
    /// Minimum ratio of the weakest to the strongest of the six peaks.
    pub consistency_ratio: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            skip: 2,
            kappa_db: 10.0,
            leakage_margin: 2.0,
            consistency_ratio: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub packet_start: usize,
    pub active_shifts: BTreeSet<usize>,
    /// Mean preamble cell energy per active shift.
    pub thresholds: BTreeMap<usize, f64>,
    /// Offset common to all devices, in native bins.
    pub offset_bins: f64,
    /// Own offsets of shifts with no other assigned shift within two cells.
    pub own_offsets: BTreeMap<usize, f64>,
    /// Native bins in each device's cell.
    pub cell_width: usize,
    pub layout: PacketLayout,
}

impl DetectionResult {
    /// First native bin of a shift's cell, the `cell_width` bins centred on
    /// the shift plus its own offset, or the common one.
    pub fn cell_start(&self, shift: usize, cfg: &ChirpConfig) -> usize {
        let n = cfg.symbol_len() as f64;
        let offset = self.own_offsets.get(&shift).copied().unwrap_or(self.offset_bins);
        let first = (shift as f64 + offset - self.cell_width as f64 / 2.0).ceil();
        first.rem_euclid(n) as usize
    }
}

/// Energy of native bins `start .. start + width` (circular) read off a
/// spectrum padded by `alpha`.
fn cell_energy(padded: &[f64], alpha: usize, start: usize, width: usize) -> f64 {
    let n = padded.len() / alpha;
    (0..width).map(|i| padded[alpha * ((start + i) % n)]).sum()
}

/// Max of `powers` over the circular window `center ± half`, with position.
fn window_max(powers: &[f64], center: usize, half: usize) -> (usize, f64) {
    let n = powers.len();
    let mut best = (center, f64::NEG_INFINITY);
    for i in 0..=2 * half {
        let idx = (center + n - half + i) % n;
        if powers[idx] > best.1 {
            best = (idx, powers[idx]);
        }
    }
    best
}

/// Normalized power of an M-point Dirichlet kernel at `x` native bins.
fn dirichlet(x: f64, m: usize) -> f64 {
    let s = (std::f64::consts::PI * x / m as f64).sin();
    if s.abs() < 1e-12 {
        return 1.0;
    }
    let v = (std::f64::consts::PI * x).sin() / (m as f64 * s);
    v * v
}

/// `q = Σ|X|⁴ / (Σ|X|²)²`, large for a few strong tones.
fn peakiness(p: &[f64]) -> f64 {
    let (s2, s4) = p.iter().fold((0.0, 0.0), |(a, b), &x| (a + x, b + x * x));
    if s2 > 0.0 {
        s4 / (s2 * s2)
    } else {
        0.0
    }
}

/// Spectrum of the first `len` of `m` samples of a unit native bin, seen
/// `x` bins away: `(1/m)·Σ_{n<len} e^{j2πxn/m}`.
fn head_kernel(x: f64, len: usize, m: usize) -> Complex64 {
    let one = Complex64::new(1.0, 0.0);
    let tau = 2.0 * std::f64::consts::PI;
    let den = one - Complex64::from_polar(1.0, tau * x / m as f64);
    if den.norm() < 1e-12 {
        return Complex64::new(len as f64 / m as f64, 0.0);
    }
    (one - Complex64::from_polar(1.0, tau * x * len as f64 / m as f64)) / (den * m as f64)
}

pub struct Receiver {
    cfg: ChirpConfig,
    layout: PacketLayout,
    params: DetectorParams,
    demod: Demodulator,
    coarse: Demodulator,
    /// Worst-case leakage at each native separation.
    leakage: Vec<f64>,
}

impl Receiver {
    pub fn new(cfg: &ChirpConfig, params: DetectorParams) -> Result<Self> {
        Self::with_layout(cfg, params, PacketLayout::default())
    }

    pub fn with_layout(cfg: &ChirpConfig, params: DetectorParams, layout: PacketLayout) -> Result<Self> {
        cfg.validate()?;
        if params.skip == 0 {
            return Err(Error::InvalidConfig("skip must be >= 1".into()));
        }
        if layout.n_up < 2 || layout.n_down < 1 {
            return Err(Error::InvalidConfig("preamble needs >= 2 upchirps and >= 1 downchirp".into()));
        }
        // Worst share of a device's energy that lands in a cell `d` bins
        // away, for a device up to a quarter cell off its own centre.
        let m = cfg.symbol_len();
        let w = params.skip as f64;
        let leakage = (0..m)
            .map(|d| {
                let d = d.min(m - d) as f64;
                let steps = 40;
                (0..=steps)
                    .map(|j| {
                        let u = w / 4.0 * (2.0 * j as f64 / steps as f64 - 1.0);
                        (0..params.skip)
                            .map(|i| dirichlet(d + u - (i as f64 - (w - 1.0) / 2.0), m))
                            .sum::<f64>()
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        Ok(Self {
            cfg: *cfg,
            layout,
            params,
            demod: Demodulator::new(cfg)?,
            coarse: Demodulator::new(&cfg.with_pad_factor(1)?)?,
            leakage,
        })
    }

    pub fn config(&self) -> &ChirpConfig {
        &self.cfg
    }

    pub fn demodulator(&self) -> &Demodulator {
        &self.demod
    }

    fn symbol<'a>(&self, rx: &'a IqBuffer, start: usize, index: usize) -> Result<&'a [Complex64]> {
        let m = self.cfg.symbol_len();
        let from = start + index * m;
        if from + m > rx.len() {
            return Err(Error::Truncated {
                needed: from + m,
                available: rx.len(),
            });
        }
        Ok(&rx.samples()[from..from + m])
    }

    /// Start of the first upchirp: the leading edge when it clears the noise
    /// by a wide margin, otherwise the upchirp/downchirp boundary.
    ///
    /// A candidate boundary scores high when the stretch before it repeats
    /// every symbol and looks like upchirps, and the stretch after it repeats
    /// and looks like downchirps. The best coarse candidate is refined to one
    /// sample by where the symbol-to-symbol repetition breaks.
    pub fn detect_packet_start(&self, rx: &IqBuffer) -> Result<usize> {
        let m = self.cfg.symbol_len();
        let n_up = self.layout.n_up;
        let two_down = self.layout.n_down >= 2;
        let w = m / 2;
        let lo = n_up * m;
        let need_after = if two_down { 2 * m } else { m + w };
        if rx.len() < lo + need_after {
            return Err(Error::NoPacket);
        }
        let hi = rx.len() - need_after;
        let x = rx.samples();
        if let Some(start) = self.onset(x) {
            if start + lo + need_after <= rx.len() {
                return Ok(start);
            }
        }

        // prefix sums of x[n]·x*[n−m] and |x[n]|²
        let mut lag = vec![Complex64::new(0.0, 0.0); x.len() + 1];
        let mut energy = vec![0.0; x.len() + 1];
        for n in 0..x.len() {
            let r = if n >= m { x[n] * x[n - m].conj() } else { Complex64::new(0.0, 0.0) };
            lag[n + 1] = lag[n] + r;
            energy[n + 1] = energy[n] + x[n].norm_sqr();
        }
        let coherence = |from: usize, to: usize| -> f64 {
            let e = (energy[to] - energy[from]) * (energy[to - m] - energy[from - m]);
            if e > 0.0 {
                (lag[to] - lag[from]).norm() / e.sqrt()
            } else {
                0.0
            }
        };
        // share of tone-like energy concentration owed to an upchirp
        let upness = |win: &[Complex64]| -> f64 {
            let up = peakiness(&self.coarse.power_spectrum(win).expect("symbol length"));
            let conj: Vec<Complex64> = win.iter().map(|v| v.conj()).collect();
            let dn = peakiness(&self.coarse.power_spectrum(&conj).expect("symbol length"));
            if up + dn > 0.0 {
                up / (up + dn)
            } else {
                0.5
            }
        };
        let periods = n_up.saturating_sub(2).max(1);
        let score = |b: usize| -> f64 {
            let c_up = coherence(b - periods * m, b);
            let c_dn = if two_down { coherence(b + m, b + 2 * m) } else { 1.0 };
            let u = upness(&x[b - m..b]);
            let d = 1.0 - upness(&x[b..b + m]);
            c_up * c_dn * u * d
        };
        let sweep = |from: usize, to: usize, step: usize, best: &mut (usize, f64)| {
            let mut b = from;
            while b <= to {
                let s = score(b);
                if s > best.1 {
                    *best = (b, s);
                }
                b += step;
            }
        };
        let mut best = (lo, f64::NEG_INFINITY);
        sweep(lo, hi, 64, &mut best);
        let c = best.0;
        sweep(c.saturating_sub(64).max(lo), (c + 64).min(hi), 8, &mut best);
        let coarse = best.0;

        // Present if the upchirps repeat clearly or one spectrum stands out.
        let up_spec = self.coarse.power_spectrum(&x[coarse - m..coarse]).expect("symbol length");
        let mean = up_spec.iter().sum::<f64>() / m as f64;
        let ptm = if mean > 0.0 { up_spec.iter().cloned().fold(0.0, f64::max) / mean } else { 0.0 };
        let guard = 32.min(m / 8);
        let up_from = (coarse + m / 2).saturating_sub((n_up - 1) * m).max(m);
        if coherence(up_from, coarse - guard) < 0.15 && ptm < 25.0 {
            return Err(Error::NoPacket);
        }

        // Least-squares symbol-to-symbol rotation on each side of the boundary.
        let rho = |from: usize, to: usize, ahead: bool| -> Complex64 {
            let mut num = Complex64::new(0.0, 0.0);
            let mut den = 0.0;
            for n in from..to {
                let other = if ahead { x[n + m] } else { x[n - m] };
                num += x[n] * other.conj();
                den += other.norm_sqr();
            }
            if den > 0.0 {
                num / den
            } else {
                Complex64::new(0.0, 0.0)
            }
        };
        let rho_up = rho(up_from, coarse - guard, false);
        let rho_dn = if two_down { rho(coarse + guard, coarse + m - guard, true) } else { Complex64::new(0.0, 0.0) };
        let residual = |b: usize| -> f64 {
            let mut f = 0.0;
            for n in b - w..b {
                f += (x[n] - rho_up * x[n - m]).norm_sqr();
            }
            if two_down {
                for n in b..b + w {
                    f += (x[n] - rho_dn * x[n + m]).norm_sqr();
                }
            }
            f
        };
        let span = 16;
        let from = coarse.saturating_sub(span).max(lo);
        let to = (coarse + span).min(hi);
        let fine = (from..=to)
            .map(|b| (b, residual(b)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(b, _)| b)
            .unwrap_or(coarse);
        Ok(fine - n_up * m)
    }

    /// First sample of a packet whose onset stands far above the noise of
    /// the quietest symbol. Superposed devices on a full table cancel into
    /// short pulses that blur the up/down boundary but not the edge.
    fn onset(&self, x: &[Complex64]) -> Option<usize> {
        let m = self.cfg.symbol_len();
        if x.len() < 2 * m {
            return None;
        }
        let power: Vec<f64> = x.iter().map(|v| v.norm_sqr()).collect();
        let floor = power
            .chunks_exact(m)
            .map(|c| c.iter().sum::<f64>() / m as f64)
            .fold(f64::INFINITY, f64::min);
        let first = power.iter().position(|&p| p > EDGE_RATIO / 4.0 * floor)?;
        let end = (first + m).min(x.len());
        let after = power[first..end].iter().sum::<f64>() / (end - first) as f64;
        (end - first == m && after >= EDGE_RATIO * floor).then_some(first)
    }

    /// Active devices among the table's shifts, judged on the upchirp preamble.
    pub fn detect_active_devices(
        &self,
        rx: &IqBuffer,
        start: usize,
        table: &AssignmentTable,
    ) -> Result<DetectionResult> {
        let candidates: Vec<usize> = table.all_shifts().into_iter().collect();
        if candidates.is_empty() {
            return Err(Error::InvalidConfig("assignment table is empty".into()));
        }
        let m = self.cfg.symbol_len();
        if let Some(&s) = candidates.iter().find(|&&s| s >= m) {
            return Err(Error::ShiftOutOfRange { shift: s, len: m });
        }
        let alpha = self.cfg.pad_factor;
        let fft = self.cfg.fft_size();
        let n_up = self.layout.n_up;
        let complex = (0..n_up)
            .map(|i| self.demod.spectrum(self.symbol(rx, start, i)?).map(|s| s.bins))
            .collect::<Result<Vec<_>>>()?;
        let spectra: Vec<Vec<f64>> = complex
            .iter()
            .map(|s| s.iter().map(|b| b.norm_sqr()).collect())
            .collect();

        // Per-bin noise power, from the quiet stretch before the packet.
        let strongest = spectra.iter().flatten().cloned().fold(0.0, f64::max);
        let noise = if start >= m {
            let g = &rx.samples()[start - m..start];
            m as f64 * g.iter().map(|v| v.norm_sqr()).sum::<f64>() / m as f64
        } else {
            // lower quartile of the native-grid bins, where empty shifts hold
            // only noise; exponential statistics give the mean
            let mut native: Vec<f64> = spectra[0].iter().step_by(alpha).copied().collect();
            native.sort_by(f64::total_cmp);
            native[native.len() / 4] / (4.0f64 / 3.0).ln()
        };
        let noise = noise.max(strongest * 1e-12);
        let kappa = 10f64.powf(self.params.kappa_db / 10.0);

        // Common offset (timing error, mean jitter, shared frequency error).
        // Sweep it against the table's pattern, then place the cells.
        let summed: Vec<f64> = (0..fft).map(|i| spectra.iter().map(|s| s[i]).sum()).collect();
        let local_max: Vec<f64> = (0..fft)
            .map(|j| window_max(&summed, j, alpha / 2).1)
            .collect();
        let reach = (OFFSET_SEARCH_BINS * alpha) as isize;
        let scores: Vec<(isize, f64)> = (-reach..=reach)
            .map(|c| {
                let s = candidates
                    .iter()
                    .map(|&k| local_max[((alpha * k) as isize + c).rem_euclid(fft as isize) as usize])
                    .sum::<f64>();
                (c, s)
            })
            .collect();
        let top = scores.iter().map(|x| x.1).fold(0.0, f64::max);
        let coarse = scores
            .iter()
            .filter(|x| x.1 >= OFFSET_TIE_RATIO * top)
            .min_by_key(|x| x.0.abs())
            .map(|x| x.0)
            .unwrap_or(0);

        // Fine offset: the one common shift of all the table's tones that
        // captures the most matched-filter power, searched within half a
        // cell of the coarse value. Tones sharing an offset sit a whole
        // number of bins apart and barely overlap, so crowded tables and
        // near-far pairs both resolve.
        let width = self.params.skip;
        let floor = kappa * noise * width as f64;
        let half = (width * alpha / 2) as isize;
        let best = |k_set: &[usize], from: isize, to: isize, prefer: isize| {
            (from..=to)
                .map(|g| (g, k_set.iter().map(|&k| self.matched_power(&complex, k, g)).sum::<f64>()))
                .fold((prefer, f64::NEG_INFINITY), |best, (g, v)| {
                    let closer = (g - prefer).abs() < (best.0 - prefer).abs();
                    if v > best.1 * (1.0 + 1e-9) || (v >= best.1 && closer) {
                        (g, v)
                    } else {
                        best
                    }
                })
                .0
        };
        let common = best(&candidates, coarse - half, coarse + half, coarse);
        let offset_bins = common as f64 / alpha as f64;

        // A shift with nothing assigned within two cells may slide anywhere
        // in its guard, which absorbs frequency errors between devices.
        let own_offsets = candidates
            .iter()
            .filter(|&&k| {
                candidates.iter().all(|&o| {
                    let d = (o + m - k) % m;
                    o == k || d.min(m - d) >= 2 * width
                })
            })
            .map(|&k| {
                let g = best(&[k], common - 2 * half, common + 2 * half, common);
                (k, g as f64 / alpha as f64)
            })
            .collect();

        let mut det = DetectionResult {
            packet_start: start,
            active_shifts: BTreeSet::new(),
            thresholds: BTreeMap::new(),
            offset_bins,
            own_offsets,
            cell_width: width,
            layout: self.layout,
        };

        // energy[c][i]: cell energy of candidate c in preamble symbol i
        let energy: Vec<Vec<f64>> = candidates
            .iter()
            .map(|&k| {
                let first = det.cell_start(k, &self.cfg);
                spectra.iter().map(|s| cell_energy(s, alpha, first, width)).collect()
            })
            .collect();

        for (ci, &k) in candidates.iter().enumerate() {
            let mine = &energy[ci];
            let max_e = mine.iter().cloned().fold(0.0, f64::max);
            let ok = max_e > 0.0
                && mine.iter().enumerate().all(|(i, &e)| {
                    let leak = candidates
                        .iter()
                        .enumerate()
                        .filter(|&(cj, _)| cj != ci)
                        .map(|(cj, &kj)| energy[cj][i] * self.leakage[(kj + m - k) % m])
                        .fold(0.0, f64::max);
                    e >= floor
                        && e >= self.params.leakage_margin * leak
                        && e >= self.params.consistency_ratio * max_e
                });
            if ok {
                det.active_shifts.insert(k);
                det.thresholds.insert(k, mine.iter().sum::<f64>() / n_up as f64);
            }
        }
        Ok(det)
    }

    /// Preamble power a tone of shift `k` at `g` padded steps from it would
    /// put through a matched filter.
    ///
    /// A delay or a frequency error each leave an unknown phase step where
    /// the chirp of shift `k` wraps, so the two sides are matched separately
    /// and their magnitudes added: `(|head| + |tail|)^2`.
    fn matched_power(&self, complex: &[Vec<Complex64>], k: usize, g: isize) -> f64 {
        let alpha = self.cfg.pad_factor;
        let m = self.cfg.symbol_len();
        let wrap = if self.cfg.agg_factor == 1 { m - k } else { m };
        let pos = (alpha * k) as isize + g;
        let first = pos.div_euclid(alpha as isize) - INTERP_TAPS as isize;
        let f = pos as f64 / alpha as f64;
        let kernel: Vec<Complex64> = (first..first + 2 * INTERP_TAPS as isize + 2)
            .map(|j| head_kernel(j as f64 - f, wrap, m))
            .collect();
        complex
            .iter()
            .map(|bins| {
                let whole = bins[pos.rem_euclid(bins.len() as isize) as usize];
                let head: Complex64 = kernel
                    .iter()
                    .zip(first..)
                    .map(|(h, j)| bins[j.rem_euclid(m as isize) as usize * alpha] * h)
                    .sum();
                (head.norm() + (whole - head).norm()).powi(2)
            })
            .sum()
    }

    /// OOK decisions for every active shift: 1 iff the cell energy exceeds
    /// half the preamble average.
    pub fn decode_payloads(
        &self,
        rx: &IqBuffer,
        det: &DetectionResult,
    ) -> Result<BTreeMap<usize, Vec<bool>>> {
        let first = det.packet_start;
        let pre = det.layout.preamble_symbols();
        let mut out: BTreeMap<usize, Vec<bool>> = det
            .active_shifts
            .iter()
            .map(|&k| (k, Vec::with_capacity(det.layout.payload_len)))
            .collect();
        if out.is_empty() {
            // still enforce the length contract
            self.symbol(rx, first, pre + det.layout.payload_len.saturating_sub(1))?;
            return Ok(out);
        }
        let alpha = self.cfg.pad_factor;
        let cells: Vec<(usize, usize, f64)> = det
            .active_shifts
            .iter()
            .map(|&k| (k, det.cell_start(k, &self.cfg), det.thresholds[&k]))
            .collect();
        for j in 0..det.layout.payload_len {
            let spec = self.demod.power_spectrum(self.symbol(rx, first, pre + j)?)?;
            for &(k, c, thr) in &cells {
                let e = cell_energy(&spec, alpha, c, det.cell_width);
                out.get_mut(&k).expect("initialized").push(e > thr / 2.0);
            }
        }
        Ok(out)
    }

    /// Max padded-bin power in `[α·j − α/2, α·j + α/2)` for each native bin j,
    /// from one dechirp and one FFT.
    pub fn demod_symbol_multi(&self, symbol: &IqBuffer) -> Result<Vec<f64>> {
        let p = self.demod.power_spectrum(symbol.samples())?;
        let alpha = self.cfg.pad_factor;
        let n = p.len();
        Ok((0..self.cfg.symbol_len())
            .map(|j| {
                (0..alpha)
                    .map(|i| p[(alpha * j + n + i - alpha / 2) % n])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect())
    }

    /// Packet-start search, detection and decoding in one call.
    pub fn receive(
        &self,
        rx: &IqBuffer,
        table: &AssignmentTable,
    ) -> Result<(DetectionResult, BTreeMap<usize, Vec<bool>>)> {
        let start = self.detect_packet_start(rx)?;
        self.receive_at(rx, start, table)
    }

    /// Detection and decoding with a known packet start.
    pub fn receive_at(
        &self,
        rx: &IqBuffer,
        start: usize,
        table: &AssignmentTable,
    ) -> Result<(DetectionResult, BTreeMap<usize, Vec<bool>>)> {
        let det = self.detect_active_devices(rx, start, table)?;
        let bits = self.decode_payloads(rx, &det)?;
        Ok((det, bits))
    }
}

pub fn detect_packet_start(rx: &IqBuffer, cfg: &ChirpConfig) -> Result<usize> {
    Receiver::new(cfg, DetectorParams::default())?.detect_packet_start(rx)
}

pub fn detect_active_devices(
    rx: &IqBuffer,
    start: usize,
    table: &AssignmentTable,
    cfg: &ChirpConfig,
) -> Result<DetectionResult> {
    let params = DetectorParams {
        skip: table.skip,
        ..DetectorParams::default()
    };
    Receiver::new(cfg, params)?.detect_active_devices(rx, start, table)
}

pub fn decode_payloads(
    rx: &IqBuffer,
    det: &DetectionResult,
    cfg: &ChirpConfig,
) -> Result<BTreeMap<usize, Vec<bool>>> {
    Receiver::with_layout(cfg, DetectorParams::default(), det.layout)?.decode_payloads(rx, det)
}

pub fn demod_symbol_multi(rx_symbol: &IqBuffer, cfg: &ChirpConfig) -> Result<Vec<f64>> {
    Receiver::new(cfg, DetectorParams::default())?.demod_symbol_multi(rx_symbol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{add_awgn, apply_freq_offset, apply_power_gain, superpose, Realized};
    use crate::css::oracle;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn cfg() -> ChirpConfig {
        ChirpConfig::new(9, 500e3).unwrap()
    }

    fn table(shifts: &[usize]) -> AssignmentTable {
        AssignmentTable::manual(2, 512, shifts.iter().enumerate().map(|(i, &s)| (i as u32, s)).collect()).unwrap()
    }

    /// Reference bitwise CRC-8 over bytes.
    fn crc8_bytes(data: &[u8]) -> u8 {
        let mut crc = 0u8;
        for &byte in data {
            crc ^= byte;
            for _ in 0..8 {
                crc = if crc & 0x80 != 0 { (crc << 1) ^ 0x07 } else { crc << 1 };
            }
        }
        crc
    }

    fn bits_of(bytes: &[u8]) -> Vec<bool> {
        bytes.iter().flat_map(|b| (0..8).rev().map(move |i| (b >> i) & 1 == 1)).collect()
    }

    #[test]
    fn crc_matches_reference() {
        assert_eq!(crc8(&bits_of(b"123456789")), 0xF4);
        for data in [0u32, 1, 0xDEADBEEF, u32::MAX] {
            let bits = payload_with_crc(data);
            assert_eq!(bits.len(), 40);
            let crc = bits[32..].iter().fold(0u8, |a, &b| (a << 1) | b as u8);
            assert_eq!(crc, crc8_bytes(&data.to_be_bytes()));
            assert_eq!(check_crc(&bits), Some(data));
        }
        let mut bad = payload_with_crc(7);
        bad[3] ^= true;
        assert_eq!(check_crc(&bad), None);
    }

    #[test]
    fn packet_length_and_silence() {
        let c = cfg();
        let p = build_packet(&PacketFrame::new(10, vec![false; 40]), &c).unwrap();
        assert_eq!(p.len(), 24576);
        assert!((p.duration() - 49.152e-3).abs() < 1e-12);
        assert!(p.samples()[8 * 512..].iter().all(|x| x.norm() == 0.0));
    }

    #[test]
    fn one_bits_land_on_the_device_bin() {
        let c = cfg();
        let p = build_packet(&PacketFrame::new(77, vec![true, false]), &c).unwrap();
        let sym = &p.samples()[8 * 512..9 * 512];
        let d: Vec<Complex64> = sym
            .iter()
            .zip(oracle::integrated_upchirp(512))
            .map(|(x, u)| x * u.conj())
            .collect();
        assert_eq!(oracle::argmax(&oracle::dft(&d)), 77);
    }

    fn with_lead(sig: &IqBuffer, lead: usize, tail: usize) -> IqBuffer {
        let total = IqBuffer::zeros(lead + sig.len() + tail, sig.sample_rate());
        superpose(&[(total, 0), (sig.clone(), lead)]).unwrap()
    }

    #[test]
    fn start_of_clean_packet_at_zero() {
        let c = cfg();
        let p = build_packet(&PacketFrame::with_data(40, 0xA5A5A5A5), &c).unwrap();
        assert_eq!(detect_packet_start(&p, &c).unwrap(), 0);
    }

    #[test]
    fn start_at_1000_with_noise() {
        let c = cfg();
        let parts: Vec<_> = [40usize, 130, 222, 310, 404, 470]
            .iter()
            .map(|&k| (build_packet(&PacketFrame::with_data(k, k as u32 * 7919), &c).unwrap(), 0))
            .collect();
        let rx = add_awgn(&with_lead(&superpose(&parts).unwrap(), 1000, 600), 10.0, 5);
        assert_eq!(detect_packet_start(&rx, &c).unwrap(), 1000);
    }

    // At the up/down boundary the two chirps can be nearly equal (shifts
    // near 0 or N/2 meet at the same frequency), so a lone device's start is
    // only coarse; the detector's common-offset search absorbs the error.
    #[test]
    fn single_device_decodes_despite_soft_boundary() {
        let c = cfg();
        for (k, seed) in [(40usize, 5u64), (0, 6), (256, 8), (302, 7)] {
            let f = PacketFrame::with_data(k, 0x12345678);
            let rx = add_awgn(&with_lead(&build_packet(&f, &c).unwrap(), 1000, 600), 10.0, seed);
            let r = Receiver::new(&c, DetectorParams::default()).unwrap();
            let (det, bits) = r.receive(&rx, &table(&[k])).unwrap();
            assert!(det.packet_start.abs_diff(1000) <= 16, "k={k}: {}", det.packet_start);
            assert_eq!(bits[&k], f.payload_bits, "k={k}");
        }
    }

    #[test]
    fn start_unchanged_by_common_freq_offset() {
        let c = cfg();
        let p = build_packet(&PacketFrame::with_data(300, 0x0F0F0F0F), &c).unwrap();
        let rx = with_lead(&p, 1000, 600);
        let shifted = apply_freq_offset(&rx, 700.0).unwrap();
        assert_eq!(detect_packet_start(&rx, &c).unwrap(), detect_packet_start(&shifted, &c).unwrap());
    }

    #[test]
    fn head_kernel_matches_direct_sum() {
        let m = 512;
        for &(x, len) in &[(0.0, 512usize), (0.0, 100), (1.3, 300), (-7.45, 12), (255.5, 511)] {
            let direct: Complex64 = (0..len)
                .map(|n| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * x * n as f64 / m as f64))
                .sum::<Complex64>()
                / m as f64;
            assert!((head_kernel(x, len, m) - direct).norm() < 1e-12, "x={x} len={len}");
        }
    }

    #[test]
    fn onset_finds_full_table_start() {
        let c = cfg();
        let parts: Vec<_> = (0..256)
            .map(|i| (build_packet(&PacketFrame::with_data(2 * i, i as u32 * 7919), &c).unwrap(), 0))
            .collect();
        let rx = add_awgn(&with_lead(&superpose(&parts).unwrap(), 1000, 600), 10.0, 4);
        assert_eq!(detect_packet_start(&rx, &c).unwrap(), 1000);
    }

    #[test]
    fn onset_ignores_packets_near_the_noise() {
        let c = cfg();
        let p = build_packet(&PacketFrame::with_data(40, 1), &c).unwrap();
        let rx = add_awgn(&with_lead(&p, 1000, 600), -5.0, 2);
        let r = Receiver::new(&c, DetectorParams::default()).unwrap();
        assert_eq!(r.onset(rx.samples()), None);
    }

    fn device(k: usize, data: u32, gain_db: f64, delay_s: f64, df: f64, phase: f64) -> (IqBuffer, PacketFrame) {
        let c = cfg();
        let f = PacketFrame::with_data(k, data);
        let r = Realized { delay_s, freq_offset_hz: df, power_gain_db: gain_db, phase_rad: phase };
        (r.apply(&build_packet(&f, &c).unwrap(), &c).unwrap(), f)
    }

    // The strong device's frequency error pulls the common offset more
    // than a bin away from the weak one; isolated shifts place their own cells.
    #[test]
    fn isolated_shifts_follow_their_own_frequency() {
        let c = cfg();
        let bin = c.bw / 512.0;
        let (weak, fw) = device(2, 0x1234_5678, -30.0, 0.0, -0.9 * bin, 1.5);
        let (strong, fs) = device(258, 0x9ABC_DEF0, 0.0, 0.0, 0.4 * bin, 0.25);
        let rx = add_awgn(&superpose(&[(weak, 0), (strong, 0)]).unwrap(), 30.0, 1);
        let r = Receiver::new(&c, DetectorParams::default()).unwrap();
        let (det, bits) = r.receive_at(&rx, 0, &table(&[2, 258])).unwrap();
        assert!((det.own_offsets[&2] + 0.9).abs() <= 0.15, "{:?}", det.own_offsets);
        assert!((det.own_offsets[&258] - 0.4).abs() <= 0.15, "{:?}", det.own_offsets);
        assert_eq!(bits[&2], fw.payload_bits);
        assert_eq!(bits[&258], fs.payload_bits);

        let det = detect_active_devices(&rx, 0, &table(&[2, 4, 258]), &c).unwrap();
        assert!(!det.own_offsets.contains_key(&2) && !det.own_offsets.contains_key(&4));
        assert!(det.own_offsets.contains_key(&258));
    }

    // Every device half a bin late: the table's cells must straddle both
    // halves of each split peak, not merge neighbouring devices.
    #[test]
    fn full_table_half_bin_late() {
        let c = cfg();
        let delay = 0.5 / c.bw;
        let devices: Vec<_> = (0..256)
            .map(|i| device(2 * i, i as u32 * 40503, 0.0, delay, 0.0, (i as f64 * 2.399) % 6.283))
            .collect();
        let parts: Vec<_> = devices.iter().map(|(s, _)| (s.clone(), 0)).collect();
        let rx = add_awgn(&with_lead(&superpose(&parts).unwrap(), 1024, 512), 10.0, 9);
        let r = Receiver::new(&c, DetectorParams::default()).unwrap();
        let shifts: Vec<usize> = (0..256).map(|i| 2 * i).collect();
        let (det, bits) = r.receive(&rx, &table(&shifts)).unwrap();
        assert_eq!(det.packet_start, 1024);
        assert!((det.offset_bins + 0.5).abs() <= 0.15, "{}", det.offset_bins);
        assert!(det.own_offsets.is_empty());
        let errors: usize = devices
            .iter()
            .map(|(_, f)| bits[&f.cyclic_shift].iter().zip(&f.payload_bits).filter(|(a, b)| a != b).count())
            .sum();
        assert!(errors <= 10, "{errors} of {}", 256 * 40);
    }

    #[test]
    fn noise_only_reports_no_packet() {
        let c = cfg();
        let rx = add_awgn(&IqBuffer::zeros(30000, c.bw), 0.0, 3);
        assert_eq!(detect_packet_start(&rx, &c), Err(Error::NoPacket));
        assert_eq!(detect_packet_start(&IqBuffer::zeros(100, c.bw), &c), Err(Error::NoPacket));
    }

    #[test]
    fn no_devices_no_detections() {
        let c = cfg();
        let rx = add_awgn(&IqBuffer::zeros(26000, c.bw), 20.0, 1);
        let det = detect_active_devices(&rx, 512, &table(&[2, 258]), &c).unwrap();
        assert!(det.active_shifts.is_empty());
    }

    #[test]
    fn two_devices_detected() {
        let c = cfg();
        let a = build_packet(&PacketFrame::with_data(2, 1), &c).unwrap();
        let b = build_packet(&PacketFrame::with_data(258, 2), &c).unwrap();
        let rx = superpose(&[(a, 0), (b, 0)]).unwrap();
        let det = detect_active_devices(&rx, 0, &table(&[2, 100, 258]), &c).unwrap();
        assert_eq!(det.active_shifts, BTreeSet::from([2, 258]));
        assert_eq!(det.thresholds.len(), 2);
        assert!(det.thresholds.values().all(|&t| t > 0.0));
    }

    #[test]
    fn partial_preamble_rejected() {
        let c = cfg();
        let p = build_packet(&PacketFrame::with_data(50, 9), &c).unwrap();
        let mut s = p.into_samples();
        for x in &mut s[3 * 512..6 * 512] {
            *x = Complex64::new(0.0, 0.0);
        }
        let rx = IqBuffer::new(s, c.bw).unwrap();
        let det = detect_active_devices(&rx, 0, &table(&[50]), &c).unwrap();
        assert!(det.active_shifts.is_empty());
    }

    #[test]
    fn empty_table_rejected() {
        let c = cfg();
        let t = AssignmentTable::manual(2, 512, BTreeMap::new()).unwrap();
        assert!(detect_active_devices(&IqBuffer::zeros(30000, c.bw), 0, &t, &c).is_err());
    }

    #[test]
    fn noise_free_decode_and_all_zero_payload() {
        let c = cfg();
        let f = PacketFrame::with_data(120, 0xCAFEBABE);
        let z = PacketFrame::new(200, vec![false; 40]);
        let rx = superpose(&[(build_packet(&f, &c).unwrap(), 0), (build_packet(&z, &c).unwrap(), 0)]).unwrap();
        let det = detect_active_devices(&rx, 0, &table(&[120, 200]), &c).unwrap();
        let bits = decode_payloads(&rx, &det, &c).unwrap();
        assert_eq!(bits[&120], f.payload_bits);
        assert_eq!(bits[&200], vec![false; 40]);
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let c = cfg();
        let rx = build_packet(&PacketFrame::with_data(4, 3), &c).unwrap();
        let det = detect_active_devices(&rx, 0, &table(&[4]), &c).unwrap();
        let short = rx.slice(0, 30 * 512).unwrap();
        assert!(matches!(decode_payloads(&short, &det, &c), Err(Error::Truncated { .. })));
    }

    #[test]
    fn threshold_matches_peak_power() {
        let c = cfg();
        let rx = apply_power_gain(&build_packet(&PacketFrame::with_data(60, 5), &c).unwrap(), -4.0);
        let det = detect_active_devices(&rx, 0, &table(&[60]), &c).unwrap();
        let expect = 512.0f64.powi(2) * 10f64.powf(-0.4);
        assert!((10.0 * (det.thresholds[&60] / expect).log10()).abs() < 0.5);
    }

    fn chirp_at(k: usize) -> IqBuffer {
        make_aggregate_upchirp(&cfg(), k).unwrap()
    }

    #[test]
    fn multi_demod_windows() {
        let c = cfg();
        let parts: Vec<_> = [5, 100, 300].iter().map(|&k| (chirp_at(k), 0)).collect();
        let p = demod_symbol_multi(&superpose(&parts).unwrap(), &c).unwrap();
        let mut order: Vec<usize> = (0..512).collect();
        order.sort_by(|&a, &b| p[b].total_cmp(&p[a]));
        let mut top: Vec<usize> = order[..3].to_vec();
        top.sort();
        assert_eq!(top, vec![5, 100, 300]);
        // neighbours only see the main lobe's edge, sinc²(1/2) ≈ 0.41
        assert!(p[order[3]] < 0.45 * p[order[2]]);
        let silent = demod_symbol_multi(&IqBuffer::zeros(512, c.bw), &c).unwrap();
        assert!(silent.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn weak_device_survives_strong_distant_one() {
        let c = cfg();
        let weak = apply_power_gain(&chirp_at(2), -40.0);
        let strong = chirp_at(258);
        let alone = demod_symbol_multi(&weak, &c).unwrap()[2];
        let mixed = demod_symbol_multi(&superpose(&[(weak, 0), (strong, 0)]).unwrap(), &c).unwrap()[2];
        assert!((10.0 * (mixed / alone).log10()).abs() < 1.0);
    }

    #[test]
    fn work_per_symbol_independent_of_devices() {
        let c = cfg();
        let rx_one = build_packet(&PacketFrame::with_data(0, 1), &c).unwrap();
        let parts: Vec<_> = (0..256)
            .map(|i| (build_packet(&PacketFrame::with_data(2 * i, i as u32), &c).unwrap(), 0))
            .collect();
        let rx_all = superpose(&parts).unwrap();
        let counts = |rx: &IqBuffer, shifts: &[usize]| {
            let r = Receiver::new(&c, DetectorParams::default()).unwrap();
            r.receive_at(rx, 0, &table(shifts)).unwrap();
            (r.demodulator().dechirp_count(), r.demodulator().fft_count())
        };
        let all: Vec<usize> = (0..256).map(|i| 2 * i).collect();
        assert_eq!(counts(&rx_one, &[0]), (46, 46));
        assert_eq!(counts(&rx_all, &all), (46, 46));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn lossless_without_impairments(
            slots in prop::collection::btree_set(0usize..256, 1..24),
            data in prop::collection::vec(any::<u32>(), 24),
        ) {
            let c = cfg();
            let shifts: Vec<usize> = slots.iter().map(|s| 2 * s).collect();
            let frames: Vec<PacketFrame> = shifts.iter().zip(&data).map(|(&k, &d)| PacketFrame::with_data(k, d)).collect();
            let parts: Vec<_> = frames.iter().map(|f| (build_packet(f, &c).unwrap(), 0)).collect();
            let rx = superpose(&parts).unwrap();
            let r = Receiver::new(&c, DetectorParams::default()).unwrap();
            let (det, bits) = r.receive(&rx, &table(&shifts)).unwrap();
            prop_assert_eq!(det.packet_start, 0);
            for f in &frames {
                prop_assert_eq!(&bits[&f.cyclic_shift], &f.payload_bits);
            }
        }
    }
}
