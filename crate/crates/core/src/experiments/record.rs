use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::css::ChirpConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub sf: u32,
    pub bw: f64,
    pub skip: usize,
    pub n_devices: usize,
    pub snr_db: f64,
    pub seed: u64,
    pub scheme: String,
}

impl ConfigSnapshot {
    pub fn new(cfg: &ChirpConfig, skip: usize, n_devices: usize, snr_db: f64, seed: u64, scheme: &str) -> Self {
        Self {
            sf: cfg.sf,
            bw: cfg.bw,
            skip,
            n_devices,
            snr_db,
            seed,
            scheme: scheme.to_string(),
        }
    }
}

/// One measured point. `params` holds the sweep coordinates and any setting
/// not covered by the snapshot; `metrics` holds the measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment: String,
    pub config: ConfigSnapshot,
    pub params: BTreeMap<String, f64>,
    pub metrics: BTreeMap<String, f64>,
}

impl ExperimentRecord {
    pub fn new(experiment: &str, config: ConfigSnapshot) -> Self {
        Self {
            experiment: experiment.to_string(),
            config,
            params: BTreeMap::new(),
            metrics: BTreeMap::new(),
        }
    }

    pub fn param(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    pub fn metric(mut self, name: &str, value: f64) -> Self {
        self.metrics.insert(name.to_string(), value);
        self
    }

    fn cmp_key(&self, other: &Self) -> Ordering {
        self.experiment
            .cmp(&other.experiment)
            .then_with(|| self.config.scheme.cmp(&other.config.scheme))
            .then_with(|| cmp_maps(&self.params, &other.params))
            .then_with(|| self.config.n_devices.cmp(&other.config.n_devices))
            .then_with(|| self.config.snr_db.total_cmp(&other.config.snr_db))
    }
}

fn cmp_maps(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> Ordering {
    for ((ka, va), (kb, vb)) in a.iter().zip(b) {
        let o = ka.cmp(kb).then_with(|| va.total_cmp(vb));
        if o != Ordering::Equal {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

/// Stable sort by experiment, scheme, sweep parameters, device count and SNR.
pub fn sort_records(records: &mut [ExperimentRecord]) {
    records.sort_by(|a, b| a.cmp_key(b));
}

const FIXED_COLUMNS: [&str; 8] = ["experiment", "sf", "bw", "skip", "n_devices", "snr_db", "seed", "scheme"];

/// Header: the snapshot fields, then every parameter name, then every metric
/// name, each group sorted. Absent values are empty cells.
pub fn write_csv<W: Write>(records: &[ExperimentRecord], out: W) -> Result<()> {
    let params: BTreeSet<&str> = records.iter().flat_map(|r| r.params.keys().map(String::as_str)).collect();
    let metrics: BTreeSet<&str> = records.iter().flat_map(|r| r.metrics.keys().map(String::as_str)).collect();
    if let Some(dup) = params.iter().find(|p| metrics.contains(*p) || FIXED_COLUMNS.contains(*p)) {
        return Err(Error::Output(format!("column {dup} appears twice")));
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let header = FIXED_COLUMNS.iter().copied().chain(params.iter().copied()).chain(metrics.iter().copied());
    w.write_record(header).map_err(out_err)?;
    for r in records {
        let c = &r.config;
        let mut row = vec![
            r.experiment.clone(),
            c.sf.to_string(),
            c.bw.to_string(),
            c.skip.to_string(),
            c.n_devices.to_string(),
            c.snr_db.to_string(),
            c.seed.to_string(),
            c.scheme.clone(),
        ];
        row.extend(params.iter().map(|p| r.params.get(*p).map(f64::to_string).unwrap_or_default()));
        row.extend(metrics.iter().map(|m| r.metrics.get(*m).map(f64::to_string).unwrap_or_default()));
        w.write_record(&row).map_err(out_err)?;
    }
    w.flush().map_err(|e| Error::Output(e.to_string()))
}

pub fn to_csv_string(records: &[ExperimentRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(records, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Output(e.to_string()))
}

fn out_err(e: csv::Error) -> Error {
    Error::Output(e.to_string())
}
