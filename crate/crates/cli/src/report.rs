//! Run reports written next to trained bundles.

use std::fs;
use std::path::Path;

use edgectx_core::data::Dataset;
use edgectx_core::learners::{CvSummary, SweepCell};
use edgectx_core::metrics::Metrics;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct DatasetFingerprint {
    pub name: String,
    pub source: String,
    pub rows: usize,
    /// CRC-32 of the parsed rows, eight lowercase hex digits.
    pub crc32: String,
    pub features: usize,
    pub classes: Vec<String>,
}

impl DatasetFingerprint {
    pub fn of(name: &str, source: &str, data: &Dataset) -> Self {
        let (rows, crc) = data.fingerprint();
        Self {
            name: name.into(),
            source: source.into(),
            rows,
            crc32: format!("{crc:08x}"),
            features: data.feature_count(),
            classes: data.class_names().to_vec(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TimingRow {
    pub phase: String,
    pub millis: f64,
}

/// Everything needed to trace the reported numbers back to their inputs.
/// Timings are kept out of `report.json` so identical invocations produce
/// identical report files; they go to `timing.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: Vec<String>,
    pub config: serde_json::Value,
    pub dataset: DatasetFingerprint,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_validation: Option<CvSummary>,
    /// Resubstitution metrics of the final model on the full dataset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_model: Option<Metrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_sweep_cell: Option<SweepCell>,
    pub loss_curve: Vec<f64>,
    #[serde(skip)]
    pub timing: Vec<TimingRow>,
}

impl RunReport {
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        fs::write(dir.join("report.json"), json + "\n")?;

        let mut w = csv::Writer::from_path(dir.join("report.csv"))?;
        w.write_record(["fold", "accuracy"])?;
        if let Some(cv) = &self.cross_validation {
            for (i, a) in cv.fold_accuracies.iter().enumerate() {
                w.write_record([(i + 1).to_string(), a.to_string()])?;
            }
            w.write_record(["mean".to_string(), cv.mean.to_string()])?;
            w.write_record(["std_dev".to_string(), cv.std_dev.to_string()])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("loss.csv"))?;
        w.write_record(["epoch", "mean_loss"])?;
        for (i, l) in self.loss_curve.iter().enumerate() {
            w.write_record([(i + 1).to_string(), l.to_string()])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("timing.csv"))?;
        for t in &self.timing {
            w.serialize(t)?;
        }
        w.flush()?;
        Ok(())
    }
}
