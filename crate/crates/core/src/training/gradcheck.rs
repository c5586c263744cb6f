use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::loss::{mae_loss, total_loss};
use crate::config::{LossWeights, ModelConfig};
use crate::data::{make_batch, Batch, Dataset, DatasetHeader, Sample};
use crate::diffcore::{grad_check, Tape, Var};
use crate::error::Result;
use crate::model::{ForwardOutput, TmsonModel};
use crate::nn::{Mlp2, Mode};
use crate::ordinal::{mine_triplets, ordinal_loss_var};
use crate::rng::{derive_seed, seeded};
use crate::uncertainty::{kl_loss, reconstruction_loss};

/// Finite-difference step used by the suite.
pub const GRADCHECK_STEP: f64 = 1e-6;
/// Largest relative error the suite accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct ComponentCheck {
    pub component: &'static str,
    pub max_rel_error: f64,
}

impl ComponentCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= GRADCHECK_TOLERANCE
    }
}

/// Eight random samples with widths 3, 2 and 2 and ragged sequence lengths.
fn tiny_batch(seed: u64) -> Result<Batch> {
    let mut rng = seeded(seed);
    let mut normal = |n: usize| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect::<Vec<f64>>();
    let samples = (0..8)
        .map(|i| Sample {
            id: format!("g{i}"),
            y: -3.0 + 6.0 * i as f64 / 7.0,
            y_t: None,
            y_v: None,
            y_a: None,
            text: normal(3),
            visual: (0..1 + i % 3).map(|_| normal(2)).collect(),
            audio: (0..1 + (i + 1) % 2).map(|_| normal(2)).collect(),
            missing: vec![],
        })
        .collect();
    let ds = Dataset {
        header: DatasetHeader { d_t: 3, d_v: 2, d_a: 2, label_range: [-3.0, 3.0], bayes_mae: None },
        samples,
    };
    make_batch(&ds, &(0..8).collect::<Vec<_>>())
}

/// Checks the gradient of every objective component, and of the weighted
/// total, on a tiny randomly initialised model.
pub fn gradient_suite(seed: u64) -> Result<Vec<ComponentCheck>> {
    let model = TmsonModel::new(&ModelConfig::tiny(3, 2, 2), derive_seed(seed, 1))?;
    let batch = tiny_batch(derive_seed(seed, 2))?;
    // a wide gap tolerance guarantees triplets on eight labels
    let w = LossWeights { xi: 2.0, ..LossWeights::default() };
    let triplets = mine_triplets(&batch.y, w.xi, &mut seeded(derive_seed(seed, 3)))?;
    let noise_seed = derive_seed(seed, 4);

    let forward = |t: &mut Tape, p: &[Var]| -> Result<ForwardOutput> {
        let mut rng = seeded(noise_seed);
        model.forward(t, p, &batch, &mut Mode::Train(&mut rng))
    };
    type Component<'a> = Box<dyn Fn(&mut Tape, &[Var], &ForwardOutput) -> Result<Var> + 'a>;
    let components: Vec<(&'static str, Component)> = vec![
        ("fused", Box::new(|t, _, o| mae_loss(t, o.prediction, &batch.y))),
        (
            "unimodal",
            Box::new(|t, _, o| {
                let mut sum = mae_loss(t, o.unimodal[0], &batch.y)?;
                for m in 1..3 {
                    let l = mae_loss(t, o.unimodal[m], &batch.y)?;
                    sum = t.add(sum, l)?;
                }
                Ok(sum)
            }),
        ),
        (
            "reconstruction",
            Box::new(|t, p, o| {
                let decoders: Vec<&Mlp2> = model.uncertainty.iter().map(|u| &u.decoder).collect();
                reconstruction_loss(t, p, &decoders, &o.latents, &o.projected, &mut Mode::Eval)
            }),
        ),
        ("kl", Box::new(|t, _, o| kl_loss(t, &o.embeddings))),
        (
            "ordinal",
            Box::new(|t, _, o| Ok(ordinal_loss_var(t, &triplets, o.fused, w.delta)?.expect("triplets were mined"))),
        ),
        (
            "total",
            Box::new(|t, p, o| Ok(total_loss(t, p, &model, o, &batch.y, &w, &mut seeded(derive_seed(seed, 3)))?.0)),
        ),
    ];
    let params = model.store.values();
    components
        .into_iter()
        .map(|(component, loss)| {
            let check = grad_check(
                |t, p| {
                    let out = forward(t, p)?;
                    loss(t, p, &out)
                },
                &params,
                GRADCHECK_STEP,
            )?;
            Ok(ComponentCheck { component, max_rel_error: check.max_rel_error })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_fixed_seeds() {
        for seed in [0, 7] {
            let checks = gradient_suite(seed).unwrap();
            assert_eq!(checks.len(), 6);
            assert!(checks.iter().all(ComponentCheck::passed), "{checks:?}");
        }
    }
}
