//! Append-only JSON-lines metric records.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::samplers::SamplerEvent;

/// Sampler activity accumulated between two records.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplerEventSummary {
    pub draws: u64,
    pub clamp_events: u64,
    pub clamped_fields: u64,
    pub clamped_couplings: u64,
    /// Last hidden temperature reported by the backend, if it has one.
    pub hidden_beta: Option<f64>,
}

impl SamplerEventSummary {
    pub fn absorb(&mut self, events: &[SamplerEvent]) {
        self.draws += 1;
        for e in events {
            match *e {
                SamplerEvent::Clamp { fields, couplings, .. } => {
                    self.clamp_events += 1;
                    self.clamped_fields += fields as u64;
                    self.clamped_couplings += couplings as u64;
                }
                SamplerEvent::Drift { beta } => self.hidden_beta = Some(beta),
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub epoch: usize,
    pub elbo: Option<f64>,
    pub iw_ll: Option<f64>,
    pub active_units: Option<usize>,
    pub w_l1: f64,
    pub beta_eff: f64,
    pub sampler_events: SamplerEventSummary,
    /// Mean training objective over the last epoch, without `log Z`.
    pub train_objective: Option<f64>,
    pub kl_weight: f64,
    pub lr: f64,
    pub log_z: Option<f64>,
    pub log_z_se: Option<f64>,
}

pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    /// Truncates `path` unless `append` is set.
    pub fn create(path: &Path, append: bool) -> Result<Self> {
        let file = OpenOptions::new().create(true).write(true).append(append).truncate(!append).open(path)?;
        Ok(MetricsWriter { out: BufWriter::new(file) })
    }

    /// Writes one line and flushes it.
    pub fn write(&mut self, rec: &MetricRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, rec)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
