//! Run configuration: model sizes, loss weights, optimiser groups and the
//! training schedule, with MOSI-style defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::fusion::MissingMode;
use crate::params::ParamGroup;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Input feature widths; replaced by the dataset header at training time.
    pub d_t: usize,
    pub d_v: usize,
    pub d_a: usize,
    /// Hidden width of the text projector.
    pub text_hidden: usize,
    /// Extractor output widths `d_t'`, `d_v'`, `d_a'` (the LSTM hidden sizes for visual and audio).
    pub d_t_out: usize,
    pub d_v_out: usize,
    pub d_a_out: usize,
    /// Shared projection width `d*`.
    pub d_star: usize,
    /// Gaussian embedding width `D`.
    pub dist_dim: usize,
    /// Hidden width of the mean, deviation and decoder networks.
    pub dist_hidden: usize,
    pub fusion_hidden: usize,
    pub text_dropout: f64,
    pub fc_t_dropout: f64,
    pub fc_v_dropout: f64,
    pub fc_a_dropout: f64,
    pub fc_f_dropout: f64,
    /// Apply dropout to the extractor output before each unimodal head.
    pub unimodal_dropout: bool,
    pub missing_mode: MissingMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_t: 768,
            d_v: 20,
            d_a: 5,
            text_hidden: 128,
            d_t_out: 32,
            d_v_out: 32,
            d_a_out: 16,
            d_star: 128,
            dist_dim: 64,
            dist_hidden: 128,
            fusion_hidden: 128,
            text_dropout: 0.1,
            fc_t_dropout: 0.1,
            fc_v_dropout: 0.0,
            fc_a_dropout: 0.1,
            fc_f_dropout: 0.0,
            unimodal_dropout: true,
            missing_mode: MissingMode::Zero,
        }
    }
}

impl ModelConfig {
    /// A very small model for gradient checks and smoke tests.
    pub fn tiny(d_t: usize, d_v: usize, d_a: usize) -> Self {
        ModelConfig {
            d_t,
            d_v,
            d_a,
            text_hidden: 5,
            d_t_out: 4,
            d_v_out: 3,
            d_a_out: 2,
            d_star: 8,
            dist_dim: 4,
            dist_hidden: 6,
            fusion_hidden: 5,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.d_t,
            self.d_v,
            self.d_a,
            self.text_hidden,
            self.d_t_out,
            self.d_v_out,
            self.d_a_out,
            self.d_star,
            self.dist_dim,
            self.dist_hidden,
            self.fusion_hidden,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        let rates = [self.text_dropout, self.fc_t_dropout, self.fc_v_dropout, self.fc_a_dropout, self.fc_f_dropout];
        if rates.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::Config("dropout rates must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Weights of the objective terms and the ordinal hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub beta_t: f64,
    pub beta_v: f64,
    pub beta_a: f64,
    /// Reconstruction.
    pub lambda1: f64,
    /// KL divergence.
    pub lambda2: f64,
    /// Ordinal hinge.
    pub lambda3: f64,
    pub delta: f64,
    pub xi: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta_t: 0.8,
            beta_v: 0.1,
            beta_a: 0.1,
            lambda1: 0.1,
            lambda2: 0.01,
            lambda3: 0.5,
            delta: 1.0,
            xi: 0.5,
        }
    }
}

impl LossWeights {
    /// Only the multimodal regression term.
    pub fn fused_only() -> Self {
        LossWeights {
            beta_t: 0.0,
            beta_v: 0.0,
            beta_a: 0.0,
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            ..LossWeights::default()
        }
    }

    pub fn betas(&self) -> [f64; 3] {
        [self.beta_t, self.beta_v, self.beta_a]
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.beta_t,
            self.beta_v,
            self.beta_a,
            self.lambda1,
            self.lambda2,
            self.lambda3,
            self.delta,
        ];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("loss weights and margin must be finite and non-negative".into()));
        }
        if !(self.xi > 0.0) {
            return Err(Error::Config("xi must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupHyper {
    pub lr: f64,
    pub weight_decay: f64,
}

/// Learning rate and weight decay for each parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerGroups {
    pub visual: GroupHyper,
    pub audio: GroupHyper,
    pub other: GroupHyper,
}

impl Default for OptimizerGroups {
    fn default() -> Self {
        OptimizerGroups {
            visual: GroupHyper { lr: 5e-3, weight_decay: 1e-3 },
            audio: GroupHyper { lr: 5e-3, weight_decay: 1e-3 },
            other: GroupHyper { lr: 1e-3, weight_decay: 1e-3 },
        }
    }
}

impl OptimizerGroups {
    pub fn get(&self, group: ParamGroup) -> GroupHyper {
        match group {
            ParamGroup::Visual => self.visual,
            ParamGroup::Audio => self.audio,
            ParamGroup::Other => self.other,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for g in [self.visual, self.audio, self.other] {
            if !(g.lr > 0.0) || !(g.weight_decay >= 0.0) {
                return Err(Error::Config("learning rates must be positive and weight decay non-negative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Global gradient-norm limit; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            max_epochs: 50,
            patience: 8,
            clip_norm: Some(5.0),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// Everything a run needs, resolved from defaults, an optional JSON file and flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub optimizer: OptimizerGroups,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.optimizer.validate()?;
        self.train.validate()?;
        self.synth.validate()
    }

    /// Reads a (possibly partial) JSON configuration; absent fields keep their defaults.
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!((c.model.d_t, c.model.d_v, c.model.d_a), (768, 20, 5));
        assert_eq!((c.model.d_v_out, c.model.d_a_out, c.model.dist_dim), (32, 16, 64));
        assert_eq!(c.loss.betas(), [0.8, 0.1, 0.1]);
        assert_eq!((c.loss.lambda1, c.loss.lambda2, c.loss.lambda3, c.loss.delta), (0.1, 0.01, 0.5, 1.0));
        assert_eq!(
            [c.optimizer.visual.lr, c.optimizer.audio.lr, c.optimizer.other.lr],
            [5e-3, 5e-3, 1e-3]
        );
        assert_eq!(c.train.batch_size, 16);
    }

    #[test]
    fn partial_json_keeps_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"loss":{"lambda3":0.0},"train":{"max_epochs":3}}"#).unwrap();
        assert_eq!(c.loss.lambda3, 0.0);
        assert_eq!(c.loss.beta_t, 0.8);
        assert_eq!(c.train.max_epochs, 3);
        assert_eq!(c.train.patience, 8);
        assert!(serde_json::from_str::<RunConfig>(r#"{"loss":{"lamda3":0.0}}"#).is_err());
    }

    #[test]
    fn validation() {
        let mut c = RunConfig::default();
        c.loss.beta_v = -0.1;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.model.fc_f_dropout = 1.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.train.clip_norm = Some(0.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = RunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
    }
}
