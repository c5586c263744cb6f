use serde::{Deserialize, Serialize};

use super::inference::{predict_dataset, Calibration, Prediction};
use super::metrics::{ClassificationMetrics, MetricScheme, RegressionMetrics};
use super::report::{summarize, Report};
use crate::data::{drop_modality, perturb_noise, Dataset, Modality};
use crate::error::{Error, Result};
use crate::model::TmsonModel;
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Gaussian noise of intensity `level` added to the selected modalities.
    Noise,
    /// Text marked missing with probability `level`.
    Missing,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Noise => "noise",
            Protocol::Missing => "missing",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub noise: Vec<f64>,
    pub missing: Vec<f64>,
    pub seeds: Vec<u64>,
    pub noise_modalities: Vec<Modality>,
    pub schemes: Vec<MetricScheme>,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub protocol: Protocol,
    pub level: f64,
    pub seeds: usize,
    pub regression: RegressionMetrics,
    pub classification: Vec<ClassificationMetrics>,
    /// Mean uncertainty scalars (text, visual, audio, fused). All rows of one
    /// seed share a calibration, so rows are comparable.
    pub uncertainty: [f64; 4],
    /// Mean harmonic means before normalisation.
    pub harmonic: [f64; 4],
}

/// Conditions of one sweep: each perturbed dataset paired with its row label.
fn conditions(ds: &Dataset, spec: &SweepSpec, seed: u64) -> Result<Vec<(Protocol, f64, Dataset)>> {
    let mut out = Vec::new();
    for &eta in &spec.noise {
        // the same draws are reused at every intensity, scaled by eta
        out.push((Protocol::Noise, eta, perturb_noise(ds, eta, &spec.noise_modalities, derive_seed(seed, 11))?));
    }
    for &rate in &spec.missing {
        out.push((Protocol::Missing, rate, drop_modality(ds, Modality::Text, rate, derive_seed(seed, 12))?));
    }
    Ok(out)
}

fn seed_reports(model: &TmsonModel, ds: &Dataset, spec: &SweepSpec, seed: u64) -> Result<Vec<(Protocol, f64, Report)>> {
    let conds = conditions(ds, spec, seed)?;
    let preds: Vec<Vec<Prediction>> =
        conds.iter().map(|(_, _, d)| predict_dataset(model, d, spec.batch_size)).collect::<Result<_>>()?;
    let calibration = Calibration::from_values(preds.iter().flatten().flat_map(|p| p.h))?;
    conds
        .into_iter()
        .zip(&preds)
        .map(|((proto, level, _), p)| Ok((proto, level, summarize(p, &spec.schemes, calibration)?)))
        .collect()
}

/// Evaluates the model under each noise intensity and text-missing rate and
/// averages every row over the seeds (taken in sorted order).
pub fn robustness_sweep(model: &TmsonModel, ds: &Dataset, spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    if spec.noise.is_empty() && spec.missing.is_empty() {
        return Err(Error::Config("sweep needs at least one noise level or missing rate".into()));
    }
    if spec.seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    let mut seeds = spec.seeds.clone();
    seeds.sort_unstable();
    let per_seed: Vec<Vec<(Protocol, f64, Report)>> =
        seeds.iter().map(|&s| seed_reports(model, ds, spec, s)).collect::<Result<_>>()?;
    let n = seeds.len() as f64;
    let rows = per_seed[0].len();
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let (protocol, level, first) = &per_seed[0][r];
        let reports: Vec<&Report> = per_seed.iter().map(|s| &s[r].2).collect();
        let avg = |f: &dyn Fn(&Report) -> f64| reports.iter().map(|x| f(x)).sum::<f64>() / n;
        let regression = RegressionMetrics {
            mae: avg(&|x| x.regression.mae),
            corr: avg(&|x| x.regression.corr),
            corr_degenerate: reports.iter().any(|x| x.regression.corr_degenerate),
        };
        let classification = (0..first.classification.len())
            .map(|k| ClassificationMetrics {
                scheme: first.classification[k].scheme,
                accuracy: avg(&|x| x.classification[k].accuracy),
                f1: first.classification[k].f1.map(|_| avg(&|x| x.classification[k].f1.unwrap_or(0.0))),
                count: first.classification[k].count,
            })
            .collect();
        let col = |f: &dyn Fn(&Report) -> [f64; 4]| [0, 1, 2, 3].map(|k| avg(&|x| f(x)[k]));
        out.push(SweepRow {
            protocol: *protocol,
            level: *level,
            seeds: seeds.len(),
            regression,
            classification,
            uncertainty: col(&|x| x.uncertainty.to_array()),
            harmonic: col(&|x| x.harmonic.to_array()),
        });
    }
    Ok(out)
}

/// CSV with one line per sweep row.
pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["protocol", "level", "seeds", "mae", "corr"].map(String::from).to_vec();
    if let Some(first) = rows.first() {
        for c in &first.classification {
            header.push(format!("{}_acc", c.scheme.name()));
            if c.f1.is_some() {
                header.push(format!("{}_f1", c.scheme.name()));
            }
        }
    }
    for prefix in ["u", "h"] {
        for m in ["t", "v", "a", "f"] {
            header.push(format!("{prefix}_{m}"));
        }
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.protocol.as_str().to_string(),
            r.level.to_string(),
            r.seeds.to_string(),
            r.regression.mae.to_string(),
            r.regression.corr.to_string(),
        ];
        for c in &r.classification {
            rec.push(c.accuracy.to_string());
            if let Some(f1) = c.f1 {
                rec.push(f1.to_string());
            }
        }
        rec.extend(r.uncertainty.iter().chain(&r.harmonic).map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::eval::{evaluate, predict_dataset};
    use crate::model::tests::toy_dataset;

    fn spec(seeds: Vec<u64>) -> SweepSpec {
        SweepSpec {
            noise: vec![0.0, 1.0, 2.0, 3.0],
            missing: vec![0.0, 0.5],
            seeds,
            noise_modalities: Modality::ALL.to_vec(),
            schemes: vec![MetricScheme::MosiAcc7],
            batch_size: 4,
        }
    }

    #[test]
    fn zero_intensity_row_matches_plain_eval() {
        let model = TmsonModel::new(&ModelConfig::tiny(3, 2, 2), 1).unwrap();
        let ds = toy_dataset(10);
        let rows = robustness_sweep(&model, &ds, &spec(vec![3])).unwrap();
        assert_eq!(rows.len(), 6);
        let plain = evaluate(&predict_dataset(&model, &ds, 64).unwrap(), &[MetricScheme::MosiAcc7]).unwrap();
        for r in [&rows[0], &rows[4]] {
            assert_eq!(r.regression, plain.regression);
            assert_eq!(r.harmonic, plain.harmonic.to_array());
            assert_eq!(r.classification, plain.classification);
        }
        // more noise moves the predictions
        assert_ne!(rows[3].regression.mae, rows[0].regression.mae);
    }

    #[test]
    fn seed_order_does_not_matter() {
        let model = TmsonModel::new(&ModelConfig::tiny(3, 2, 2), 1).unwrap();
        let ds = toy_dataset(10);
        let a = robustness_sweep(&model, &ds, &spec(vec![1, 2, 3])).unwrap();
        let b = robustness_sweep(&model, &ds, &spec(vec![3, 1, 2])).unwrap();
        assert_eq!(a, b);
        assert_eq!(sweep_csv(&a).unwrap(), sweep_csv(&b).unwrap());
        let csv = sweep_csv(&a).unwrap();
        assert!(csv.starts_with("protocol,level,seeds,mae,corr,mosi-acc7_acc,u_t,u_v,u_a,u_f,h_t,h_v,h_a,h_f\n"));
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn grids_and_seeds_required() {
        let model = TmsonModel::new(&ModelConfig::tiny(3, 2, 2), 1).unwrap();
        let ds = toy_dataset(5);
        let mut s = spec(vec![]);
        assert!(robustness_sweep(&model, &ds, &s).is_err());
        s.seeds = vec![0];
        s.noise.clear();
        s.missing.clear();
        assert!(robustness_sweep(&model, &ds, &s).is_err());
    }
}
