use serde::{Deserialize, Serialize};

use crate::data::{batch, Dataset};
use crate::diffcore::Tape;
use crate::error::{Error, Result};
use crate::model::TmsonModel;
use crate::nn::Mode;
use crate::uncertainty::GaussianEmbedding;

/// Harmonic mean `D / sum_d (1 / sigma_d)` of a deviation vector.
pub fn harmonic_mean(sigma: &[f64]) -> f64 {
    sigma.len() as f64 / sigma.iter().map(|s| 1.0 / s).sum::<f64>()
}

/// Min-max range of harmonic means over one evaluation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub min: f64,
    pub max: f64,
}

impl Calibration {
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        if min > max {
            return Err(Error::Empty("calibration"));
        }
        Ok(Calibration { min, max })
    }

    /// Maps a harmonic mean into `[0, 1]`; a run with a single value maps to 0.
    pub fn normalize(&self, h: f64) -> f64 {
        if self.max > self.min {
            ((h - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

/// Uncertainty scalar of one deviation vector under a run's calibration.
pub fn uncertainty_scalar(sigma: &[f64], calibration: &Calibration) -> f64 {
    calibration.normalize(harmonic_mean(sigma))
}

/// Eval-mode outputs for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub y: f64,
    pub y_hat: f64,
    /// Unimodal scores in text, visual, audio order.
    pub y_hat_m: [f64; 3],
    /// Harmonic means of the text, visual, audio and fused deviations.
    pub h: [f64; 4],
}

fn check_dims(model: &TmsonModel, ds: &Dataset) -> Result<()> {
    let want = [model.config.d_t, model.config.d_v, model.config.d_a];
    if ds.header.dims() != want {
        return Err(Error::Config(format!(
            "dataset dims {:?} do not match the model's {want:?}",
            ds.header.dims()
        )));
    }
    Ok(())
}

/// Runs the model in eval mode over the whole dataset, in dataset order.
pub fn predict_dataset(model: &TmsonModel, ds: &Dataset, batch_size: usize) -> Result<Vec<Prediction>> {
    check_dims(model, ds)?;
    let mut out = Vec::with_capacity(ds.len());
    for b in batch(ds, batch_size, None)? {
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape, false);
        let fw = model.forward(&mut tape, &bound, &b, &mut Mode::Eval)?;
        let y_hat = tape.value(fw.prediction).data();
        let uni = fw.unimodal.map(|u| tape.value(u).data().to_vec());
        let sig = [fw.embeddings[0].sigma, fw.embeddings[1].sigma, fw.embeddings[2].sigma, fw.fused.sigma]
            .map(|s| tape.value(s).clone());
        for (i, &idx) in b.indices.iter().enumerate() {
            let s = &ds.samples[idx];
            out.push(Prediction {
                id: s.id.clone(),
                y: s.y,
                y_hat: y_hat[i],
                y_hat_m: [uni[0][i], uni[1][i], uni[2][i]],
                h: [0, 1, 2, 3].map(|m| harmonic_mean(sig[m].row_slice(i))),
            });
        }
    }
    Ok(out)
}

/// Eval-mode fused distributions, in dataset order.
pub fn fused_embeddings(model: &TmsonModel, ds: &Dataset, batch_size: usize) -> Result<Vec<GaussianEmbedding>> {
    check_dims(model, ds)?;
    let mut out = Vec::with_capacity(ds.len());
    for b in batch(ds, batch_size, None)? {
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape, false);
        let fw = model.forward(&mut tape, &bound, &b, &mut Mode::Eval)?;
        out.extend(fw.fused.rows(&tape));
    }
    Ok(out)
}
