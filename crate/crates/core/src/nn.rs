//! Dense layers and the train/eval switch shared by all model parts.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::Result;
use crate::params::{ParamGroup, ParamId, ParamStore};

/// Forward-pass mode. Training carries the RNG for dropout masks and latent noise.
pub enum Mode<'r> {
    Train(&'r mut ChaCha8Rng),
    Eval,
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }

    pub fn dropout(&mut self, tape: &mut Tape, x: Var, rate: f64) -> Result<Var> {
        match self {
            Mode::Train(rng) => tape.dropout(x, rate, true, &mut **rng),
            Mode::Eval => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(crate::Error::Domain {
                        op: "dropout",
                        detail: format!("rate {rate} not in [0, 1)"),
                    });
                }
                Ok(x)
            }
        }
    }

    /// Standard-normal draws for the reparameterised sample; `None` in eval mode.
    pub fn noise(&mut self, shape: &[usize]) -> Option<Tensor> {
        match self {
            Mode::Train(rng) => {
                let mut t = Tensor::zeros(shape);
                for v in t.data_mut() {
                    *v = rng.sample(StandardNormal);
                }
                Some(t)
            }
            Mode::Eval => None,
        }
    }
}

/// Affine map `x W + b` with `W` stored input-major (`d_in x d_out`).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Uniform(±1/sqrt(d_in)) initialisation for weight and bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        let weight = store.add_uniform(format!("{name}.weight"), group, &[d_in, d_out], bound, rng);
        let bias = bias.then(|| store.add_uniform(format!("{name}.bias"), group, &[1, d_out], bound, rng));
        Linear {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &[Var], x: Var) -> Result<Var> {
        let y = tape.matmul(x, self.weight.var(bound))?;
        match self.bias {
            Some(b) => tape.add(y, b.var(bound)),
            None => Ok(y),
        }
    }
}

/// `d_in -> hidden -> d_out` with ReLU and dropout between the two layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp2 {
    pub first: Linear,
    pub second: Linear,
    pub dropout: f64,
}

impl Mlp2 {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        d_in: usize,
        hidden: usize,
        d_out: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        Mlp2 {
            first: Linear::new(store, &format!("{name}.0"), group, d_in, hidden, true, rng),
            second: Linear::new(store, &format!("{name}.1"), group, hidden, d_out, true, rng),
            dropout,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &[Var], x: Var, mode: &mut Mode) -> Result<Var> {
        let h = self.first.forward(tape, bound, x)?;
        let h = tape.relu(h);
        let h = mode.dropout(tape, h, self.dropout)?;
        self.second.forward(tape, bound, h)
    }
}
