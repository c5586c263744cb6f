use serde::{Deserialize, Serialize};

use super::trainer::{train, TrainOutcome, EVAL_BATCH};
use crate::config::{LossWeights, RunConfig};
use crate::data::Dataset;
use crate::error::Result;
use crate::eval::{predict_dataset, regression_metrics};

/// The seven objective subsets, from the multimodal term alone to the full objective.
pub fn ablation_configs(base: &LossWeights) -> Vec<(&'static str, LossWeights)> {
    let only_f = LossWeights::fused_only();
    let reg = LossWeights { beta_t: base.beta_t, beta_v: base.beta_v, beta_a: base.beta_a, ..only_f };
    let with = |l1: bool, l2: bool, l3: bool| LossWeights {
        lambda1: if l1 { base.lambda1 } else { 0.0 },
        lambda2: if l2 { base.lambda2 } else { 0.0 },
        lambda3: if l3 { base.lambda3 } else { 0.0 },
        delta: base.delta,
        xi: base.xi,
        ..reg
    };
    vec![
        ("L_f", LossWeights { delta: base.delta, xi: base.xi, ..only_f }),
        ("L_reg", with(false, false, false)),
        ("L_reg+rec", with(true, false, false)),
        ("L_reg+ord", with(false, false, true)),
        ("L_reg+rec+kl", with(true, true, false)),
        ("L_reg+rec+ord", with(true, false, true)),
        ("all", with(true, true, true)),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub name: String,
    pub seed: u64,
    pub val_mae: f64,
    pub best_epoch: usize,
    pub test_mae: Option<f64>,
    pub test_corr: Option<f64>,
}

/// Trains every configuration for every seed.
pub fn run_ablation(
    train_set: &Dataset,
    val_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &RunConfig,
    seeds: &[u64],
) -> Result<Vec<AblationResult>> {
    run_ablation_with(train_set, val_set, test_set, cfg, seeds, |_, _, _| Ok(()))
}

/// Like [`run_ablation`], handing each trained model to `on_run` together
/// with its configuration name and seed.
pub fn run_ablation_with<F>(
    train_set: &Dataset,
    val_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &RunConfig,
    seeds: &[u64],
    mut on_run: F,
) -> Result<Vec<AblationResult>>
where
    F: FnMut(&str, u64, &TrainOutcome) -> Result<()>,
{
    let mut out = Vec::new();
    for (name, weights) in ablation_configs(&cfg.loss) {
        for &seed in seeds {
            let mut run = cfg.clone();
            run.loss = weights;
            run.train.seed = seed;
            let outcome = train(train_set, val_set, &run)?;
            let (test_mae, test_corr) = match test_set {
                Some(t) => {
                    let preds: Vec<f64> = predict_dataset(&outcome.model, t, EVAL_BATCH)?.iter().map(|p| p.y_hat).collect();
                    let r = regression_metrics(&preds, &t.labels())?;
                    (Some(r.mae), Some(r.corr))
                }
                None => (None, None),
            };
            on_run(name, seed, &outcome)?;
            log::info!("ablation {name} seed {seed}: val MAE {:.4}", outcome.history.best_val_mae);
            out.push(AblationResult {
                name: name.to_string(),
                seed,
                val_mae: outcome.history.best_val_mae,
                best_epoch: outcome.history.best_epoch,
                test_mae,
                test_corr,
            });
        }
    }
    Ok(out)
}

/// One CSV line per configuration with seed-averaged metrics.
pub fn ablation_table(results: &[AblationResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["config", "seeds", "val_mae", "test_mae", "test_corr"])?;
    let mut names: Vec<&str> = Vec::new();
    for r in results {
        if !names.contains(&r.name.as_str()) {
            names.push(&r.name);
        }
    }
    for name in names {
        let rows: Vec<&AblationResult> = results.iter().filter(|r| r.name == name).collect();
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&AblationResult) -> Option<f64>| {
            let vals: Option<Vec<f64>> = rows.iter().map(|r| f(r)).collect();
            vals.map_or(String::new(), |v| format!("{:.6}", v.iter().sum::<f64>() / n))
        };
        w.write_record([
            name.to_string(),
            rows.len().to_string(),
            mean(&|r| Some(r.val_mae)),
            mean(&|r| r.test_mae),
            mean(&|r| r.test_corr),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| crate::Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
