use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::LossWeights;
use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{ForwardOutput, TmsonModel};
use crate::nn::{Mlp2, Mode};
use crate::ordinal::{mine_triplets, ordinal_loss_var};
use crate::uncertainty::{kl_loss, reconstruction_loss};

/// Values of every objective term for one batch. Terms whose weight is zero
/// are not computed and stay `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub fused: f64,
    pub text: Option<f64>,
    pub visual: Option<f64>,
    pub audio: Option<f64>,
    pub reconstruction: Option<f64>,
    pub kl: Option<f64>,
    pub ordinal: Option<f64>,
    pub triplets: usize,
    pub total: f64,
}

impl LossBreakdown {
    /// Recombines the components with `w`; equals `total` up to rounding.
    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        let term = |v: Option<f64>, k: f64| v.map_or(0.0, |v| k * v);
        self.fused
            + term(self.text, w.beta_t)
            + term(self.visual, w.beta_v)
            + term(self.audio, w.beta_a)
            + term(self.reconstruction, w.lambda1)
            + term(self.kl, w.lambda2)
            + term(self.ordinal, w.lambda3)
    }

    /// Component-wise running sum, used to average over batches.
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        let add = |a: &mut Option<f64>, b: Option<f64>| {
            if let Some(b) = b {
                *a = Some(a.unwrap_or(0.0) + b);
            }
        };
        self.fused += other.fused;
        add(&mut self.text, other.text);
        add(&mut self.visual, other.visual);
        add(&mut self.audio, other.audio);
        add(&mut self.reconstruction, other.reconstruction);
        add(&mut self.kl, other.kl);
        add(&mut self.ordinal, other.ordinal);
        self.triplets += other.triplets;
        self.total += other.total;
    }

    pub fn scaled(&self, k: f64) -> LossBreakdown {
        let s = |v: Option<f64>| v.map(|v| v * k);
        LossBreakdown {
            fused: self.fused * k,
            text: s(self.text),
            visual: s(self.visual),
            audio: s(self.audio),
            reconstruction: s(self.reconstruction),
            kl: s(self.kl),
            ordinal: s(self.ordinal),
            triplets: self.triplets,
            total: self.total * k,
        }
    }
}

/// Batch-mean absolute error between a `[B, 1]` prediction and the labels.
pub fn mae_loss(tape: &mut Tape, pred: Var, labels: &[f64]) -> Result<Var> {
    let y = tape.constant(Tensor::new(vec![labels.len(), 1], labels.to_vec())?);
    let d = tape.sub(pred, y)?;
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

fn finite(tape: &Tape, v: Var, name: &'static str) -> Result<f64> {
    let x = tape.value(v).item();
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFiniteLoss(name))
    }
}

/// `L_f + sum_m beta_m L_m + lambda1 L_rec + lambda2 L_kl + lambda3 L_ord`.
///
/// Unimodal targets equal the multimodal label. Triplets are mined from the
/// batch labels with `mining_rng`; batches smaller than three contribute no
/// ordinal term.
#[allow(clippy::too_many_arguments)]
pub fn total_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    bound: &[Var],
    model: &TmsonModel,
    out: &ForwardOutput,
    labels: &[f64],
    w: &LossWeights,
    mining_rng: &mut R,
) -> Result<(Var, LossBreakdown)> {
    let mut parts: Vec<Var> = Vec::new();
    let mut bd = LossBreakdown::default();

    let l_f = mae_loss(tape, out.prediction, labels)?;
    bd.fused = finite(tape, l_f, "fused")?;
    parts.push(l_f);

    let names = ["text", "visual", "audio"];
    for (m, beta) in w.betas().into_iter().enumerate() {
        if beta > 0.0 {
            let l = mae_loss(tape, out.unimodal[m], labels)?;
            let v = finite(tape, l, names[m])?;
            match m {
                0 => bd.text = Some(v),
                1 => bd.visual = Some(v),
                _ => bd.audio = Some(v),
            }
            parts.push(tape.scalar_mul(l, beta));
        }
    }
    if w.lambda1 > 0.0 {
        let decoders: Vec<&Mlp2> = model.uncertainty.iter().map(|u| &u.decoder).collect();
        let l = reconstruction_loss(tape, bound, &decoders, &out.latents, &out.projected, &mut Mode::Eval)?;
        bd.reconstruction = Some(finite(tape, l, "reconstruction")?);
        parts.push(tape.scalar_mul(l, w.lambda1));
    }
    if w.lambda2 > 0.0 {
        let l = kl_loss(tape, &out.embeddings)?;
        bd.kl = Some(finite(tape, l, "kl")?);
        parts.push(tape.scalar_mul(l, w.lambda2));
    }
    if w.lambda3 > 0.0 {
        let mut value = 0.0;
        if labels.len() >= 3 {
            let triplets = mine_triplets(labels, w.xi, mining_rng)?;
            bd.triplets = triplets.len();
            if let Some(l) = ordinal_loss_var(tape, &triplets, out.fused, w.delta)? {
                value = finite(tape, l, "ordinal")?;
                parts.push(tape.scalar_mul(l, w.lambda3));
            }
        }
        bd.ordinal = Some(value);
    }

    let mut total = parts[0];
    for &p in &parts[1..] {
        total = tape.add(total, p)?;
    }
    bd.total = finite(tape, total, "total")?;
    Ok((total, bd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::data::make_batch;
    use crate::diffcore::grad_check;
    use crate::model::tests::toy_dataset;
    use crate::rng::seeded;

    fn setup() -> (TmsonModel, crate::data::Batch) {
        let model = TmsonModel::new(&ModelConfig::tiny(3, 2, 2), 3).unwrap();
        let ds = toy_dataset(8);
        let batch = make_batch(&ds, &(0..8).collect::<Vec<_>>()).unwrap();
        (model, batch)
    }

    #[test]
    fn breakdown_sums_to_total() {
        let (model, batch) = setup();
        let w = LossWeights { xi: 2.0, ..LossWeights::default() };
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape, true);
        let mut rng = seeded(1);
        let out = model.forward(&mut tape, &bound, &batch, &mut Mode::Train(&mut rng)).unwrap();
        let (l, bd) = total_loss(&mut tape, &bound, &model, &out, &batch.y, &w, &mut seeded(2)).unwrap();
        assert!((bd.weighted_sum(&w) - bd.total).abs() <= 1e-12);
        assert_eq!(tape.value(l).item(), bd.total);
        assert!(bd.triplets > 0 && bd.kl.is_some() && bd.reconstruction.is_some());
    }

    #[test]
    fn zero_weights_leave_only_fused_term() {
        let (model, batch) = setup();
        let w = LossWeights::fused_only();
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape, true);
        let out = model.forward(&mut tape, &bound, &batch, &mut Mode::Eval).unwrap();
        let before = tape.len();
        let (l, bd) = total_loss(&mut tape, &bound, &model, &out, &batch.y, &w, &mut seeded(2)).unwrap();
        assert_eq!(bd.total, bd.fused);
        assert_eq!((bd.text, bd.reconstruction, bd.kl, bd.ordinal), (None, None, None, None));
        // only the label constant, difference, abs and mean are recorded
        assert_eq!(tape.len() - before, 4);
        // decoders are unreachable, so their gradients are zero
        let g = tape.backward(l).unwrap();
        let dec = model.uncertainty[0].decoder.first.weight.var(&bound);
        assert!(g.get_data(dec).is_none());
    }

    #[test]
    fn perfect_predictions_leave_kl() {
        let (model, batch) = setup();
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape, false);
        let out = model.forward(&mut tape, &bound, &batch, &mut Mode::Eval).unwrap();
        let preds = tape.value(out.prediction).data().to_vec();
        let w = LossWeights { beta_t: 0.0, beta_v: 0.0, beta_a: 0.0, lambda1: 0.0, lambda3: 0.0, ..LossWeights::default() };
        let (_, bd) = total_loss(&mut tape, &bound, &model, &out, &preds, &w, &mut seeded(2)).unwrap();
        assert_eq!(bd.fused, 0.0);
        assert!(bd.kl.unwrap() > 0.0);
        assert!((bd.total - w.lambda2 * bd.kl.unwrap()).abs() < 1e-15);
    }

    #[test]
    fn non_finite_component_is_named() {
        let (model, batch) = setup();
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape, false);
        let out = model.forward(&mut tape, &bound, &batch, &mut Mode::Eval).unwrap();
        let mut labels = batch.y.clone();
        labels[0] = f64::NAN;
        let r = total_loss(&mut tape, &bound, &model, &out, &labels, &LossWeights::fused_only(), &mut seeded(2));
        assert!(matches!(r, Err(Error::NonFiniteLoss("fused"))));
    }

    #[test]
    fn total_loss_gradcheck() {
        let (model, batch) = setup();
        let w = LossWeights { xi: 2.0, ..LossWeights::default() };
        let check = grad_check(
            |t, p| {
                let mut rng = seeded(9);
                let mut mode = Mode::Train(&mut rng);
                let out = model.forward(t, p, &batch, &mut mode)?;
                Ok(total_loss(t, p, &model, &out, &batch.y, &w, &mut seeded(2))?.0)
            },
            &model.store.values(),
            1e-6,
        )
        .unwrap();
        assert!(check.max_rel_error <= 1e-4, "{check:?}");
    }
}
