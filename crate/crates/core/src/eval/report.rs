use serde::{Deserialize, Serialize};

use super::inference::{Calibration, Prediction};
use super::metrics::{classification_metrics, regression_metrics, ClassificationMetrics, MetricScheme, RegressionMetrics};
use crate::config::RunConfig;
use crate::error::Result;

/// Per-modality means, in text, visual, audio, fused order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalityMeans {
    pub text: f64,
    pub visual: f64,
    pub audio: f64,
    pub fused: f64,
}

impl ModalityMeans {
    pub fn from_array(a: [f64; 4]) -> Self {
        ModalityMeans { text: a[0], visual: a[1], audio: a[2], fused: a[3] }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.text, self.visual, self.audio, self.fused]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub n: usize,
    pub regression: RegressionMetrics,
    pub classification: Vec<ClassificationMetrics>,
    /// Mean uncertainty scalars in `[0, 1]`.
    pub uncertainty: ModalityMeans,
    /// Mean harmonic means of the deviations before normalisation.
    pub harmonic: ModalityMeans,
    /// Range used for normalisation, shared by all modalities in the run.
    pub calibration: Calibration,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<RunConfig>,
}

/// Calibration over every harmonic mean in `preds`, all modalities together.
pub fn run_calibration(preds: &[Prediction]) -> Result<Calibration> {
    Calibration::from_values(preds.iter().flat_map(|p| p.h))
}

pub fn mean_columns(rows: impl Iterator<Item = [f64; 4]>) -> [f64; 4] {
    let mut sum = [0.0; 4];
    let mut n = 0usize;
    for r in rows {
        for k in 0..4 {
            sum[k] += r[k];
        }
        n += 1;
    }
    sum.map(|s| s / n.max(1) as f64)
}

/// Metrics of one set of predictions; uncertainty is normalised with `calibration`.
pub fn summarize(preds: &[Prediction], schemes: &[MetricScheme], calibration: Calibration) -> Result<Report> {
    let y_hat: Vec<f64> = preds.iter().map(|p| p.y_hat).collect();
    let y: Vec<f64> = preds.iter().map(|p| p.y).collect();
    let regression = regression_metrics(&y_hat, &y)?;
    let classification = schemes
        .iter()
        .map(|&s| classification_metrics(&y_hat, &y, s))
        .collect::<Result<Vec<_>>>()?;
    let harmonic = mean_columns(preds.iter().map(|p| p.h));
    let uncertainty = mean_columns(preds.iter().map(|p| p.h.map(|h| calibration.normalize(h))));
    Ok(Report {
        n: preds.len(),
        regression,
        classification,
        uncertainty: ModalityMeans::from_array(uncertainty),
        harmonic: ModalityMeans::from_array(harmonic),
        calibration,
        config: None,
    })
}

/// Report of a single evaluation run, normalised over that run.
pub fn evaluate(preds: &[Prediction], schemes: &[MetricScheme]) -> Result<Report> {
    summarize(preds, schemes, run_calibration(preds)?)
}
