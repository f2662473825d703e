//! Report documents the CLI emits: per-case metric reports, training logs,
//! and the aggregate curve. Each has a JSON form (the structured record) and,
//! where plotting matters, a CSV form with a fixed, documented column order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::LocalisationScore;
use crate::model::{Plane, TrainConfig};

/// CSV column order of per-case reports; fixed so downstream plotting stays
/// stable.
pub const REPORT_CSV_COLUMNS: [&str; 5] = ["case_id", "slice", "metric", "value", "threshold"];

/// Note carried in every report header: the AUC convention is a choice, and
/// consumers should not assume pooling.
pub const AUC_NOTE: &str =
    "AUC is computed per slice; each metric's key slice is selected independently across slices";

/// One case scored at one threshold: all per-slice scores plus, per metric,
/// the best slice for that metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub note: String,
    pub case_id: String,
    pub plane: Plane,
    pub category: String,
    pub threshold: f64,
    pub slices: Vec<LocalisationScore>,
    /// Keyed by metric name (`la`, `fpp`, `pla`, `iou`, `dice`, `auc`).
    pub key: BTreeMap<String, KeyEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyEntry {
    pub slice_index: usize,
    pub value: f64,
}

impl CaseReport {
    /// Long-format CSV: one row per slice per metric, then one `key_<metric>`
    /// row per metric carrying the chosen slice and its value.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(REPORT_CSV_COLUMNS)?;
        for s in &self.slices {
            for metric in crate::metrics::MetricKind::ALL {
                w.write_record([
                    self.case_id.as_str(),
                    &s.slice_index.to_string(),
                    metric.as_str(),
                    &s.get(metric).to_string(),
                    &self.threshold.to_string(),
                ])?;
            }
        }
        for (name, entry) in &self.key {
            w.write_record([
                self.case_id.as_str(),
                &entry.slice_index.to_string(),
                &format!("key_{name}"),
                &entry.value.to_string(),
                &self.threshold.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Sidecar written by `gradcam` so `metrics` can cross-check that saliency
/// maps and annotations describe the same case and plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcamMeta {
    pub case_id: String,
    pub plane: Plane,
    pub n_slices: usize,
    /// Explicit convolution stage, or none for the last spatial layer.
    pub layer: Option<usize>,
}

/// Per-case prediction on the holdout split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasePrediction {
    pub case_id: String,
    pub label: bool,
    pub prob: f64,
}

/// Training log written next to the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub strategy: String,
    pub plane: String,
    pub config: TrainConfig,
    pub n_train: usize,
    pub epochs: Vec<crate::model::EpochLog>,
    /// Sorted by case id; empty when `--holdout 0`.
    pub holdout: Vec<CasePrediction>,
    /// Missing when the holdout is empty or single-class.
    pub holdout_auc: Option<f64>,
}

/// Aggregate output: accuracy-vs-k curve plus the feature-detection table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub metric: String,
    /// LA cutoff of the feature table.
    pub cutoff: f64,
    /// Per-case key-slice scores, sorted by case id.
    pub cases: Vec<CurveCase>,
    pub curve: Vec<CurvePoint>,
    pub features: Vec<FeatureRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveCase {
    pub case_id: String,
    pub plane: Plane,
    pub key: BTreeMap<String, KeyEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: f64,
    pub accuracy: f64,
}

/// One feature-table row: category, cases detected (key-slice LA above the
/// cutoff), detection rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub feature: String,
    pub count: usize,
    pub rate: f64,
}

impl CurveReport {
    pub fn write_curve_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["k", "accuracy"])?;
        for p in &self.curve {
            w.write_record([p.k.to_string(), p.accuracy.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_features_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["feature", "count", "rate"])?;
        for f in &self.features {
            w.write_record([f.feature.clone(), f.count.to_string(), f.rate.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Serialise any report as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(value)?;
    json.push(b'\n');
    std::fs::write(path, json)?;
    Ok(())
}
