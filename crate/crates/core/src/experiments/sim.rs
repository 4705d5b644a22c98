//! One concurrent packet round through the channel and the receiver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::channel::{propagate, ChannelConfig, DeviceImpairments, Transmission};
use crate::error::{Error, Result};
use crate::mac::AssignmentTable;
use crate::phy::{build_packet, PacketFrame, Receiver};

/// Symbols of silence before and after the packet.
const LEAD_SYMBOLS: usize = 1;
const TAIL_SYMBOLS: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimDevice {
    pub shift: usize,
    pub impairments: DeviceImpairments,
    /// Standard deviation of a per-packet Gaussian frequency error, added to
    /// the fixed offset.
    pub freq_sigma_hz: f64,
}

impl SimDevice {
    pub fn new(shift: usize, impairments: DeviceImpairments) -> Self {
        Self {
            shift,
            impairments,
            freq_sigma_hz: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DeviceOutcome {
    pub bits: usize,
    pub bit_errors: usize,
    pub packet_ok: bool,
}

/// Running error counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Tally {
    pub bits: usize,
    pub bit_errors: usize,
    pub packets: usize,
    pub packet_errors: usize,
}

impl Tally {
    pub fn add(&mut self, o: &DeviceOutcome) {
        self.bits += o.bits;
        self.bit_errors += o.bit_errors;
        self.packets += 1;
        self.packet_errors += usize::from(!o.packet_ok);
    }

    pub fn merge(&mut self, other: &Tally) {
        self.bits += other.bits;
        self.bit_errors += other.bit_errors;
        self.packets += other.packets;
        self.packet_errors += other.packet_errors;
    }

    pub fn ber(&self) -> f64 {
        ratio(self.bit_errors, self.bits)
    }

    pub fn per(&self) -> f64 {
        ratio(self.packet_errors, self.packets)
    }

    pub fn correct_bits(&self) -> usize {
        self.bits - self.bit_errors
    }

    pub fn correct_packets(&self) -> usize {
        self.packets - self.packet_errors
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Sends one packet with random data from every device and decodes them.
///
/// `snr_db` is the SNR of a 0 dB-gain device. With `known_start` the receiver
/// is told where the packet begins; otherwise it searches. A device the
/// receiver does not report, or a round where no packet is found, counts
/// every payload bit of that device as wrong.
pub fn simulate_round(
    rx: &Receiver,
    table: &AssignmentTable,
    devices: &[SimDevice],
    snr_db: f64,
    known_start: bool,
    seed: u64,
) -> Result<Vec<DeviceOutcome>> {
    let cfg = rx.config();
    let m = cfg.symbol_len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sent = Vec::with_capacity(devices.len());
    let mut parts = Vec::with_capacity(devices.len());
    let lead = LEAD_SYMBOLS * m;
    let mut total = 0;
    for d in devices {
        let frame = PacketFrame::with_data(d.shift, rng.random());
        let signal = build_packet(&frame, cfg)?;
        total = total.max(signal.len());
        let mut impairments = d.impairments;
        if d.freq_sigma_hz > 0.0 {
            let normal = Normal::new(0.0, d.freq_sigma_hz)
                .map_err(|e| Error::InvalidConfig(format!("frequency sigma: {e}")))?;
            impairments.freq_offset_hz += normal.sample(&mut rng);
        }
        parts.push(Transmission {
            signal,
            start: lead,
            impairments,
        });
        sent.push(frame.payload_bits);
    }
    let len = lead + total + TAIL_SYMBOLS * m;
    let chan = ChannelConfig::new(snr_db, rng.random());
    let (buf, _) = propagate(&parts, len, cfg, &chan)?;

    let received = if known_start {
        rx.receive_at(&buf, lead, table)
    } else {
        rx.receive(&buf, table)
    };
    let decoded = match received {
        Ok((_, bits)) => bits,
        Err(Error::NoPacket | Error::Truncated { .. }) => Default::default(),
        Err(e) => return Err(e),
    };
    Ok(devices
        .iter()
        .zip(&sent)
        .map(|(d, tx)| match decoded.get(&d.shift) {
            Some(got) => {
                let bit_errors = tx.iter().zip(got).filter(|(a, b)| a != b).count();
                DeviceOutcome {
                    bits: tx.len(),
                    bit_errors,
                    packet_ok: bit_errors == 0,
                }
            }
            None => DeviceOutcome {
                bits: tx.len(),
                bit_errors: tx.len(),
                packet_ok: false,
            },
        })
        .collect())
}
