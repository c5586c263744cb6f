//! The full network: extractors, unimodal heads, Gaussian embeddings,
//! fusion and the multimodal head.

use crate::config::ModelConfig;
use crate::data::Batch;
use crate::diffcore::{Tape, Tensor, Var};
use crate::encoders::{Lstm, LstmSpec, Projection, TextEncoder, UnimodalHead};
use crate::error::Result;
use crate::fusion::{fuse_masked, predict_multimodal, FusionHead, MissingMode};
use crate::nn::Mode;
use crate::params::{ParamGroup, ParamStore};
use crate::rng::seeded;
use crate::uncertainty::{estimate_distribution, sample, GaussianVar, UncertaintyHeads};

#[derive(Debug, Clone, PartialEq)]
pub struct TmsonModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub text: TextEncoder,
    pub visual: Lstm,
    pub audio: Lstm,
    pub projections: [Projection; 3],
    pub unimodal: [UnimodalHead; 3],
    pub uncertainty: [UncertaintyHeads; 3],
    pub fusion: FusionHead,
}

/// Every intermediate the objective needs, in text, visual, audio order.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// Extractor outputs `f_m`.
    pub features: [Var; 3],
    /// Shared-space features `f_m*`.
    pub projected: [Var; 3],
    pub embeddings: [GaussianVar; 3],
    /// Sampled unimodal latents `z_m`.
    pub latents: [Var; 3],
    pub fused: GaussianVar,
    pub fused_latent: Var,
    /// Unimodal scores, each `[B, 1]`.
    pub unimodal: [Var; 3],
    /// Multimodal score `[B, 1]`.
    pub prediction: Var,
}

impl TmsonModel {
    /// Initialises all parameters from `seed`. Parameter order is fixed by construction.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config;
        let mut rng = seeded(seed);
        let mut store = ParamStore::new();
        let text = TextEncoder::new(&mut store, c.d_t, c.text_hidden, c.d_t_out, c.text_dropout, &mut rng);
        let visual = Lstm::new(
            &mut store,
            "visual_lstm",
            ParamGroup::Visual,
            LstmSpec { input_dim: c.d_v, hidden_dim: c.d_v_out },
            &mut rng,
        );
        let audio = Lstm::new(
            &mut store,
            "audio_lstm",
            ParamGroup::Audio,
            LstmSpec { input_dim: c.d_a, hidden_dim: c.d_a_out },
            &mut rng,
        );
        let outs = [c.d_t_out, c.d_v_out, c.d_a_out];
        let names = ["text", "visual", "audio"];
        let projections = [0, 1, 2].map(|m| Projection::new(&mut store, &format!("{}_proj", names[m]), outs[m], c.d_star, &mut rng));
        let rates = [c.fc_t_dropout, c.fc_v_dropout, c.fc_a_dropout];
        let unimodal = [0, 1, 2].map(|m| {
            let rate = if c.unimodal_dropout { rates[m] } else { 0.0 };
            UnimodalHead::new(&mut store, &format!("{}_head", names[m]), outs[m], rate, &mut rng)
        });
        let uncertainty = [0, 1, 2].map(|m| {
            UncertaintyHeads::new(&mut store, &format!("{}_dist", names[m]), c.d_star, c.dist_hidden, c.dist_dim, &mut rng)
        });
        let fusion = FusionHead::new(
            &mut store,
            [c.d_t_out, c.d_v_out, c.d_a_out, c.dist_dim],
            c.fusion_hidden,
            c.fc_f_dropout,
            &mut rng,
        );
        Ok(TmsonModel {
            config: config.clone(),
            store,
            text,
            visual,
            audio,
            projections,
            unimodal,
            uncertainty,
            fusion,
        })
    }

    pub fn forward(&self, tape: &mut Tape, bound: &[Var], batch: &Batch, mode: &mut Mode) -> Result<ForwardOutput> {
        let b = batch.len();
        let text_in = tape.constant(batch.text.clone());
        let f_t = self.text.forward(tape, bound, text_in, mode)?;
        let v_steps: Vec<Var> = batch.visual.iter().map(|s| tape.constant(s.clone())).collect();
        let f_v = self.visual.forward(tape, bound, &v_steps, &batch.visual_len)?;
        let a_steps: Vec<Var> = batch.audio.iter().map(|s| tape.constant(s.clone())).collect();
        let f_a = self.audio.forward(tape, bound, &a_steps, &batch.audio_len)?;
        let mut features = [f_t, f_v, f_a];

        let all_present = batch.all_present();
        if !all_present && self.config.missing_mode == MissingMode::Zero {
            for (m, f) in features.iter_mut().enumerate() {
                let width = tape.shape(*f)[1];
                let mut mask = Tensor::zeros(&[b, width]);
                for (row, &p) in mask.data_mut().chunks_mut(width).zip(&batch.present[m]) {
                    if p {
                        row.fill(1.0);
                    }
                }
                let mask = tape.constant(mask);
                *f = tape.mul(*f, mask)?;
            }
        }

        let mut unimodal = [f_t; 3];
        let mut projected = [f_t; 3];
        let mut latents = [f_t; 3];
        let mut embeddings = [GaussianVar { mu: f_t, sigma: f_t }; 3];
        for m in 0..3 {
            unimodal[m] = self.unimodal[m].forward(tape, bound, features[m], mode)?;
            projected[m] = self.projections[m].forward(tape, bound, features[m])?;
            embeddings[m] = estimate_distribution(tape, bound, &self.uncertainty[m], projected[m], mode)?;
            let eps = mode.noise(&[b, self.config.dist_dim]);
            latents[m] = sample(tape, embeddings[m], eps)?;
        }
        let fused = fuse_masked(tape, &embeddings, &batch.present)?;
        let eps = mode.noise(&[b, self.config.dist_dim]);
        let fused_latent = sample(tape, fused, eps)?;
        let [f_t, f_v, f_a] = features;
        let prediction = predict_multimodal(tape, bound, &self.fusion, f_t, f_v, f_a, fused_latent, mode)?;
        Ok(ForwardOutput {
            features,
            projected,
            embeddings,
            latents,
            fused,
            fused_latent,
            unimodal,
            prediction,
        })
    }
}
