//! Command-line runner: reads an optional TOML config, lets flags override
//! it, runs one experiment and writes its records as CSV.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime error.

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use netscatter::channel::JitterModel;
use netscatter::css::ChirpConfig;
use netscatter::experiments::{
    run_ber_snr, run_dynamic_range_sweep, run_fft_variation, run_near_far, run_network, sort_records,
    uniform_snr_map, write_csv, BerSnrConfig, DynRangeConfig, ExperimentRecord, FftVarConfig, NearFarConfig,
    NetworkConfig, Scheme,
};
use netscatter::mac::analytic::{
    choir_fraction_probability, collision_probability, collision_probability_approx, multiuser_capacity, rate_model,
};
use netscatter::Error;

const SEED_ENV: &str = "NETSCATTER_SEED";

#[derive(Parser)]
#[command(name = "netscatter", version, about = "Concurrent chirp backscatter simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Weak-device BER against the power advantage of a second device.
    Nearfar(Run<NearFarOpts>),
    /// Largest tolerable power deficit against bin separation.
    Dynrange(Run<DynRangeOpts>),
    /// Peak displacement caused by hardware delay, per bandwidth.
    Fftvar(Run<FftVarOpts>),
    /// PHY rate, link rate and latency of whole query rounds.
    Network(Run<NetworkOpts>),
    /// Per-device BER against SNR.
    Bersnr(Run<BerSnrOpts>),
    /// Closed-form collision, rate and capacity tables.
    Analytic(AnalyticOpts),
}

#[derive(Args)]
struct Run<T: Args> {
    /// TOML file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    opts: T,
}

/// Settings shared by every experiment. Top-level keys in the config file.
#[derive(Args, Default, Clone)]
struct Common {
    /// Master seed [default: 1]; NETSCATTER_SEED overrides the file.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV destination [default: stdout].
    #[arg(long)]
    output: Option<PathBuf>,
    /// Spreading factor [default: 9].
    #[arg(long)]
    sf: Option<u32>,
    /// Chirp bandwidth in Hz [default: 500000].
    #[arg(long)]
    bw: Option<f64>,
    /// Spacing between assigned shifts [default: 2].
    #[arg(long)]
    skip: Option<usize>,
    /// FFT zero-padding factor [default: 10].
    #[arg(long)]
    alpha: Option<usize>,
    /// Lower end of the uniform hardware delay, seconds.
    #[arg(long)]
    jitter_min_s: Option<f64>,
    /// Upper end of the uniform hardware delay, seconds [default: 2e-6,
    /// 1e-6 for dynrange].
    #[arg(long)]
    jitter_max_s: Option<f64>,
}

#[derive(Args, Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
struct NearFarOpts {
    /// Shift of the weaker device [default: 2].
    #[arg(long)]
    bin_weak: Option<usize>,
    /// Shift of the stronger device [default: 258].
    #[arg(long)]
    bin_strong: Option<usize>,
    /// Power advantages of the strong device, dB [default: 0,5,..,40].
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    power_diff_db: Option<Vec<f64>>,
    /// Standard deviation of each device's carrier offset, Hz [default: 300].
    #[arg(long)]
    freq_sigma_hz: Option<f64>,
    /// Weak-device payload symbols per point [default: 10000].
    #[arg(long)]
    n_symbols: Option<usize>,
    /// SNR of the weak device, dB [default: 0].
    #[arg(long, allow_negative_numbers = true)]
    weak_snr_db: Option<f64>,
}

#[derive(Args, Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
struct DynRangeOpts {
    /// Shift of the strong device [default: 2].
    #[arg(long)]
    fixed_bin: Option<usize>,
    /// Shifts tried for the weak device.
    #[arg(long, value_delimiter = ',')]
    candidate_bins: Option<Vec<usize>>,
    /// Upper end of the searched deficit, dB [default: 60].
    #[arg(long)]
    max_diff_db: Option<f64>,
    /// Search resolution, dB [default: 1].
    #[arg(long)]
    resolution_db: Option<f64>,
    /// Packets per probe [default: 100].
    #[arg(long)]
    packets: Option<usize>,
    /// Packet error rate a probe must stay below [default: 0.01].
    #[arg(long)]
    per_limit: Option<f64>,
    /// SNR of the weak device, dB [default: 10].
    #[arg(long, allow_negative_numbers = true)]
    weak_snr_db: Option<f64>,
    /// Standard deviation of each device's carrier offset, Hz [default: 0].
    #[arg(long)]
    freq_sigma_hz: Option<f64>,
}

#[derive(Args, Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
struct FftVarOpts {
    /// Bandwidths, Hz [default: 500000,250000,125000].
    #[arg(long, value_delimiter = ',')]
    bw_list: Option<Vec<f64>>,
    /// Spreading factor per bandwidth, in the same order [default: 9,8,7].
    #[arg(long, value_delimiter = ',')]
    sf_list: Option<Vec<u32>>,
    /// Packets per bandwidth [default: 1000].
    #[arg(long)]
    n_packets: Option<usize>,
}

#[derive(Args, Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
struct NetworkOpts {
    /// Device counts [default: 256].
    #[arg(long, value_delimiter = ',')]
    n_devices: Option<Vec<usize>>,
    /// Schemes to run [default: all of netscatter_cfg1, netscatter_cfg2,
    /// lora_fixed, lora_ideal_rate].
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<String>>,
    /// Per-device SNRs, dB; overrides the uniform draw.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr_db: Option<Vec<f64>>,
    /// Uniform SNR draw lower end, dB [default: 0].
    #[arg(long, allow_negative_numbers = true)]
    snr_min_db: Option<f64>,
    /// Uniform SNR draw upper end, dB [default: 30].
    #[arg(long, allow_negative_numbers = true)]
    snr_max_db: Option<f64>,
    /// Simulated rounds per device count [default: 2].
    #[arg(long)]
    rounds: Option<usize>,
    /// Query length of the minimal query, bits [default: 32].
    #[arg(long)]
    query_bits_cfg1: Option<usize>,
    /// Query length with a full reassignment, bits [default: 1760].
    #[arg(long)]
    query_bits_cfg2: Option<usize>,
    /// Per-device query of the LoRa baselines, bits [default: 28].
    #[arg(long)]
    lora_query_bits: Option<usize>,
    /// Downlink rate, bps [default: 160000].
    #[arg(long)]
    downlink_bps: Option<f64>,
    /// Demodulation floor of the fixed-rate baseline, dB [default: -12.5].
    #[arg(long, allow_negative_numbers = true)]
    lora_fixed_min_snr_db: Option<f64>,
    /// Give the receiver the true packet start [default: false].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    known_start: Option<bool>,
}

#[derive(Args, Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
struct BerSnrOpts {
    /// SNRs, dB [default: -15,-10,-5,0,5,10].
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr: Option<Vec<f64>>,
    /// Concurrent devices [default: 1].
    #[arg(long)]
    devices: Option<usize>,
    /// Payload symbols per device and SNR [default: 10000].
    #[arg(long)]
    n_symbols: Option<usize>,
    /// Give the receiver the true packet start [default: false].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    known_start: Option<bool>,
}

#[derive(Args)]
struct AnalyticOpts {
    /// Same-shift collision probability of `n` random LoRa symbols.
    #[arg(long)]
    collision: bool,
    /// Chance that `n` devices get distinct tenth-of-a-bin offsets.
    #[arg(long)]
    choir: bool,
    /// Single-user, per-device and aggregate bitrates.
    #[arg(long)]
    rates: bool,
    /// Shannon capacity of `n` devices at `snr-db` each.
    #[arg(long)]
    capacity: bool,
    #[arg(long, default_value_t = 9)]
    sf: u32,
    #[arg(long, default_value_t = 500e3)]
    bw: f64,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = -20.0, allow_negative_numbers = true)]
    snr_db: f64,
}

/// Config file layout: the shared keys at top level, one table per
/// experiment.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    experiment: Option<String>,
    seed: Option<u64>,
    output: Option<PathBuf>,
    sf: Option<u32>,
    bw: Option<f64>,
    skip: Option<usize>,
    alpha: Option<usize>,
    jitter_min_s: Option<f64>,
    jitter_max_s: Option<f64>,
    #[serde(default)]
    nearfar: NearFarOpts,
    #[serde(default)]
    dynrange: DynRangeOpts,
    #[serde(default)]
    fftvar: FftVarOpts,
    #[serde(default)]
    network: NetworkOpts,
    #[serde(default)]
    bersnr: BerSnrOpts,
}

impl FileConfig {
    fn common(&self) -> Common {
        Common {
            seed: self.seed,
            output: self.output.clone(),
            sf: self.sf,
            bw: self.bw,
            skip: self.skip,
            alpha: self.alpha,
            jitter_min_s: self.jitter_min_s,
            jitter_max_s: self.jitter_max_s,
        }
    }
}

/// Field-by-field `flags.or(file)`.
macro_rules! overlay {
    ($ty:ident { $($field:ident),+ $(,)? }) => {
        impl $ty {
            fn over(self, file: Self) -> Self {
                Self { $($field: self.$field.or(file.$field)),+ }
            }
        }
    };
}

overlay!(Common { seed, output, sf, bw, skip, alpha, jitter_min_s, jitter_max_s });
overlay!(NearFarOpts { bin_weak, bin_strong, power_diff_db, freq_sigma_hz, n_symbols, weak_snr_db });
overlay!(DynRangeOpts { fixed_bin, candidate_bins, max_diff_db, resolution_db, packets, per_limit, weak_snr_db, freq_sigma_hz });
overlay!(FftVarOpts { bw_list, sf_list, n_packets });
overlay!(NetworkOpts {
    n_devices, schemes, snr_db, snr_min_db, snr_max_db, rounds, query_bits_cfg1, query_bits_cfg2,
    lora_query_bits, downlink_bps, lora_fixed_min_snr_db, known_start,
});
overlay!(BerSnrOpts { snr, devices, n_symbols, known_start });

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidSpreadingFactor(_)
            | Error::InvalidConfig(_)
            | Error::ShiftOutOfRange { .. }
            | Error::OffsetOutOfRange(_) => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

/// The loaded file, kept for pointing diagnostics at lines.
struct Source {
    path: PathBuf,
    text: String,
}

impl Source {
    /// 1-based line of `key` inside `[table]` (or at top level).
    fn line_of(&self, table: Option<&str>, key: &str) -> Option<usize> {
        let mut current: Option<String> = None;
        for (i, line) in self.text.lines().enumerate() {
            let t = line.trim();
            if let Some(name) = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                current = Some(name.trim().to_string());
            } else if current.as_deref() == table
                && t.split('=').next().map(str::trim) == Some(key)
                && t.contains('=')
            {
                return Some(i + 1);
            }
        }
        None
    }

    fn at(&self, table: Option<&str>, key: &str, msg: &str) -> Failure {
        match self.line_of(table, key) {
            Some(line) => Failure::Config(format!("{}:{line}: {key}: {msg}", self.path.display())),
            None => Failure::Config(format!("{key}: {msg}")),
        }
    }
}

fn load(path: &Option<PathBuf>) -> Result<(FileConfig, Option<Source>), Failure> {
    let Some(path) = path else {
        return Ok((FileConfig::default(), None));
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let file: FileConfig = toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    Ok((file, Some(Source { path: path.clone(), text })))
}

/// Resolved shared settings.
struct Shared {
    seed: u64,
    output: Option<PathBuf>,
    chirp: ChirpConfig,
    skip: usize,
    jitter: Option<JitterModel>,
}

fn resolve(flags: Common, file: Common, src: &Option<Source>) -> Result<Shared, Failure> {
    let given = flags.clone();
    let c = flags.over(file.clone());
    let blame = |key: &str, on_flag: bool, msg: String| -> Failure {
        match src {
            Some(s) if !on_flag => s.at(None, key, &msg),
            _ => Failure::Config(format!("--{}: {msg}", key.replace('_', "-"))),
        }
    };
    let env_seed = match std::env::var(SEED_ENV) {
        Ok(v) => Some(v.trim().parse::<u64>().map_err(|e| Failure::Config(format!("{SEED_ENV}={v:?}: {e}")))?),
        Err(_) => None,
    };
    // flag, then environment, then file
    let seed = given.seed.or(env_seed).or(file.seed).unwrap_or(1);

    let sf = c.sf.unwrap_or(9);
    let bw = c.bw.unwrap_or(500e3);
    let alpha = c.alpha.unwrap_or(10);
    let chirp = ChirpConfig::with_factors(sf, bw, alpha, 1).map_err(|e| {
        let key = match e {
            Error::InvalidSpreadingFactor(_) => "sf",
            _ if !(bw.is_finite() && bw > 0.0) => "bw",
            _ => "alpha",
        };
        let on_flag = match key {
            "sf" => given.sf.is_some() || file.sf.is_none(),
            "bw" => given.bw.is_some() || file.bw.is_none(),
            _ => given.alpha.is_some() || file.alpha.is_none(),
        };
        blame(key, on_flag, e.to_string())
    })?;
    let skip = c.skip.unwrap_or(2);
    if skip == 0 {
        return Err(blame("skip", given.skip.is_some() || file.skip.is_none(), "must be at least 1".into()));
    }
    let jitter = match (c.jitter_min_s, c.jitter_max_s) {
        (None, None) => None,
        (lo, hi) => {
            let j = JitterModel::Uniform {
                min_s: lo.unwrap_or(0.0),
                max_s: hi.unwrap_or(lo.unwrap_or(0.0)),
            };
            if j.validate().is_err() {
                let on_flag = given.jitter_max_s.is_some() || file.jitter_max_s.is_none();
                return Err(blame("jitter_max_s", on_flag, "need 0 <= jitter_min_s <= jitter_max_s".into()));
            }
            Some(j)
        }
    };
    Ok(Shared {
        seed,
        output: c.output,
        chirp,
        skip,
        jitter,
    })
}

fn check_experiment(file: &FileConfig, name: &str, src: &Option<Source>) -> Result<(), Failure> {
    match (&file.experiment, src) {
        (Some(e), Some(s)) if e != name => Err(s.at(None, "experiment", &format!("file is for {e:?}, not {name:?}"))),
        _ => Ok(()),
    }
}

fn emit(mut records: Vec<ExperimentRecord>, output: &Option<PathBuf>) -> Result<(), Failure> {
    sort_records(&mut records);
    let runtime = |e: Error| Failure::Runtime(e.to_string());
    match output {
        Some(path) => {
            let f = fs::File::create(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
            write_csv(&records, io::BufWriter::new(f)).map_err(runtime)
        }
        None => write_csv(&records, io::stdout().lock()).map_err(runtime),
    }
}

fn nearfar(run: Run<NearFarOpts>) -> Result<(), Failure> {
    let (file, src) = load(&run.config)?;
    check_experiment(&file, "nearfar", &src)?;
    let s = resolve(run.common, file.common(), &src)?;
    let o = run.opts.over(file.nearfar);
    let d = NearFarConfig::default();
    let cfg = NearFarConfig {
        chirp: s.chirp,
        skip: s.skip,
        bin_weak: o.bin_weak.unwrap_or(d.bin_weak),
        bin_strong: o.bin_strong.unwrap_or(d.bin_strong),
        power_diff_db: o.power_diff_db.unwrap_or(d.power_diff_db),
        freq_sigma_hz: o.freq_sigma_hz.unwrap_or(d.freq_sigma_hz),
        jitter: s.jitter.unwrap_or(d.jitter),
        n_symbols: o.n_symbols.unwrap_or(d.n_symbols),
        weak_snr_db: o.weak_snr_db.unwrap_or(d.weak_snr_db),
    };
    emit(run_near_far(&cfg, s.seed)?, &s.output)
}

fn dynrange(run: Run<DynRangeOpts>) -> Result<(), Failure> {
    let (file, src) = load(&run.config)?;
    check_experiment(&file, "dynrange", &src)?;
    let s = resolve(run.common, file.common(), &src)?;
    let o = run.opts.over(file.dynrange);
    let d = DynRangeConfig::default();
    let cfg = DynRangeConfig {
        chirp: s.chirp,
        skip: s.skip,
        candidate_bins: o.candidate_bins.unwrap_or(d.candidate_bins),
        max_diff_db: o.max_diff_db.unwrap_or(d.max_diff_db),
        resolution_db: o.resolution_db.unwrap_or(d.resolution_db),
        packets: o.packets.unwrap_or(d.packets),
        per_limit: o.per_limit.unwrap_or(d.per_limit),
        weak_snr_db: o.weak_snr_db.unwrap_or(d.weak_snr_db),
        freq_sigma_hz: o.freq_sigma_hz.unwrap_or(d.freq_sigma_hz),
        jitter: s.jitter.unwrap_or(d.jitter),
    };
    emit(run_dynamic_range_sweep(o.fixed_bin.unwrap_or(2), &cfg, s.seed)?, &s.output)
}

fn fftvar(run: Run<FftVarOpts>) -> Result<(), Failure> {
    let (file, src) = load(&run.config)?;
    check_experiment(&file, "fftvar", &src)?;
    let s = resolve(run.common, file.common(), &src)?;
    let o = run.opts.over(file.fftvar);
    let d = FftVarConfig::default();
    let sf_for_bw = match (&o.bw_list, o.sf_list) {
        (Some(bws), Some(sfs)) if bws.len() == sfs.len() => bws.iter().copied().zip(sfs).collect(),
        (_, Some(_)) => return Err(Failure::Config("sf_list needs one entry per bw_list entry".into())),
        (_, None) => d.sf_for_bw,
    };
    let cfg = FftVarConfig {
        bw_list: o.bw_list.unwrap_or(d.bw_list),
        sf_for_bw,
        jitter: s.jitter.unwrap_or(d.jitter),
        n_packets: o.n_packets.unwrap_or(d.n_packets),
        pad_factor: s.chirp.pad_factor,
    };
    emit(run_fft_variation(&cfg, s.seed)?, &s.output)
}

fn network(run: Run<NetworkOpts>) -> Result<(), Failure> {
    let (file, src) = load(&run.config)?;
    check_experiment(&file, "network", &src)?;
    let s = resolve(run.common, file.common(), &src)?;
    let o = run.opts.over(file.network);
    let d = NetworkConfig::default();
    let cfg = NetworkConfig {
        chirp: s.chirp,
        skip: s.skip,
        query_bits_cfg1: o.query_bits_cfg1.unwrap_or(d.query_bits_cfg1),
        query_bits_cfg2: o.query_bits_cfg2.unwrap_or(d.query_bits_cfg2),
        lora_query_bits: o.lora_query_bits.unwrap_or(d.lora_query_bits),
        downlink_bps: o.downlink_bps.unwrap_or(d.downlink_bps),
        lora_fixed_min_snr_db: o.lora_fixed_min_snr_db.unwrap_or(d.lora_fixed_min_snr_db),
        jitter: s.jitter.unwrap_or(d.jitter),
        rounds: o.rounds.unwrap_or(d.rounds),
        known_start: o.known_start.unwrap_or(d.known_start),
        ..d
    };
    let schemes = match o.schemes {
        Some(names) => names.iter().map(|n| n.parse::<Scheme>()).collect::<Result<Vec<_>, _>>()?,
        None => Scheme::ALL.to_vec(),
    };
    let counts = o.n_devices.unwrap_or_else(|| vec![256]);
    let largest = counts.iter().copied().max().unwrap_or(0);
    let snr = match o.snr_db {
        Some(list) => list,
        None => {
            let (lo, hi) = (o.snr_min_db.unwrap_or(0.0), o.snr_max_db.unwrap_or(30.0));
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                return Err(Failure::Config(format!("SNR range [{lo}, {hi}] is empty")));
            }
            uniform_snr_map(largest, lo, hi, s.seed)
        }
    };
    let mut records = Vec::new();
    for scheme in schemes {
        records.extend(run_network(&counts, scheme, &cfg, &snr, s.seed)?);
    }
    emit(records, &s.output)
}

fn bersnr(run: Run<BerSnrOpts>) -> Result<(), Failure> {
    let (file, src) = load(&run.config)?;
    check_experiment(&file, "bersnr", &src)?;
    let s = resolve(run.common, file.common(), &src)?;
    let o = run.opts.over(file.bersnr);
    let d = BerSnrConfig::default();
    let cfg = BerSnrConfig {
        chirp: s.chirp,
        skip: s.skip,
        jitter: s.jitter.unwrap_or(d.jitter),
        n_symbols: o.n_symbols.unwrap_or(d.n_symbols),
        known_start: o.known_start.unwrap_or(d.known_start),
    };
    let snrs = o.snr.unwrap_or_else(|| vec![-15.0, -10.0, -5.0, 0.0, 5.0, 10.0]);
    emit(run_ber_snr(&cfg, &snrs, o.devices.unwrap_or(1), s.seed)?, &s.output)
}

fn analytic(a: AnalyticOpts) -> Result<(), Failure> {
    let all = !(a.collision || a.choir || a.rates || a.capacity);
    let mut out = io::stdout().lock();
    let mut line = |text: String| writeln!(out, "{text}").map_err(|e| Failure::Runtime(e.to_string()));
    if a.collision || all {
        let exact = collision_probability(a.n, a.sf)?;
        line(format!("collision_probability_approx {:.3}", collision_probability_approx(a.n, a.sf)))?;
        line(format!("collision_probability {exact:.3}"))?;
    }
    if a.choir || all {
        line(format!("choir_fraction {:.4}", choir_fraction_probability(a.n)))?;
    }
    if a.rates || all {
        let r = rate_model(&ChirpConfig::new(a.sf, a.bw)?);
        line(format!("lora_bitrate_bps {:.4}", r.lora_bitrate))?;
        line(format!("device_bitrate_bps {:.4}", r.device_bitrate))?;
        line(format!("aggregate_rate_bps {:.4}", r.aggregate_rate))?;
        line(format!("gain {:.4}", r.gain))?;
    }
    if a.capacity || all {
        let c = multiuser_capacity(a.n, 10f64.powf(a.snr_db / 10.0), a.bw)?;
        line(format!("capacity_bps {:.1}", c.exact))?;
        line(format!("capacity_low_snr_bps {:.1}", c.low_snr_approx))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Nearfar(r) => nearfar(r),
        Command::Dynrange(r) => dynrange(r),
        Command::Fftvar(r) => fftvar(r),
        Command::Network(r) => network(r),
        Command::Bersnr(r) => bersnr(r),
        Command::Analytic(a) => analytic(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
