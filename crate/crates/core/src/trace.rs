//! Training traces and their JSON / CSV forms.
//!
//! CSV columns, in order:
//! `update,epoch,mean_loss,min_point_margin,normalized_margin,smoothed_margin,`
//! `cluster_radius,cluster_ratio,max_angle_w,max_angle_u,nonlinear_fraction,`
//! `nar_flag,par_flag,par_w_ratio,par_u_ratio,n_diff_w,n_diff_u`.
//! Undefined values (margins of a zero network, the ratio of coincident
//! centroids) are written as empty fields.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::training::{BoundTerms, TrainConfig};

pub const CSV_COLUMNS: [&str; 17] = [
    "update",
    "epoch",
    "mean_loss",
    "min_point_margin",
    "normalized_margin",
    "smoothed_margin",
    "cluster_radius",
    "cluster_ratio",
    "max_angle_w",
    "max_angle_u",
    "nonlinear_fraction",
    "nar_flag",
    "par_flag",
    "par_w_ratio",
    "par_u_ratio",
    "n_diff_w",
    "n_diff_u",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub update: u64,
    /// Completed passes over the data.
    pub epoch: u64,
    pub mean_loss: f64,
    pub min_point_margin: f64,
    pub normalized_margin: Option<f64>,
    pub smoothed_margin: Option<f64>,
    pub cluster_radius: f64,
    pub cluster_ratio: Option<f64>,
    pub max_angle_w: f64,
    pub max_angle_u: f64,
    pub nonlinear_fraction: f64,
    pub nar_flag: bool,
    pub par_flag: bool,
    pub par_w_ratio: f64,
    pub par_u_ratio: f64,
    pub n_diff_w: usize,
    pub n_diff_u: usize,
}

impl Checkpoint {
    fn csv_fields(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            self.update.to_string(),
            self.epoch.to_string(),
            self.mean_loss.to_string(),
            self.min_point_margin.to_string(),
            opt(self.normalized_margin),
            opt(self.smoothed_margin),
            self.cluster_radius.to_string(),
            opt(self.cluster_ratio),
            self.max_angle_w.to_string(),
            self.max_angle_u.to_string(),
            self.nonlinear_fraction.to_string(),
            self.nar_flag.to_string(),
            self.par_flag.to_string(),
            self.par_w_ratio.to_string(),
            self.par_u_ratio.to_string(),
            self.n_diff_w.to_string(),
            self.n_diff_u.to_string(),
        ]
    }
}

/// End-of-epoch loss check for SGD runs: after an epoch in which every
/// sampled point had loss at most `l`, every point ends the epoch with loss at
/// most `l * (1 + 2 v^2 R_x^2 eta k n)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochBoundSummary {
    pub epochs_checked: u64,
    pub violations: u64,
    /// Largest observed `end_max_loss / bound`.
    pub max_ratio: f64,
}

impl EpochBoundSummary {
    pub fn record(&mut self, end_max_loss: f64, bound: f64) {
        self.epochs_checked += 1;
        if end_max_loss > bound {
            self.violations += 1;
        }
        if bound > 0.0 {
            self.max_ratio = self.max_ratio.max(end_max_loss / bound);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub config: TrainConfig,
    pub r0: f64,
    pub r_x: f64,
    pub w_star_norm: f64,
    pub beta: f64,
    pub updates_run: u64,
    pub final_loss: f64,
    /// First update after which the mean loss was below epsilon.
    pub converged_at: Option<u64>,
    pub bound_m: f64,
    pub bound: BoundTerms,
    pub epoch_bound: Option<EpochBoundSummary>,
    pub checkpoints: Vec<Checkpoint>,
}

impl TrainTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_COLUMNS)?;
        for c in &self.checkpoints {
            w.write_record(c.csv_fields())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is ascii"))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }
}
