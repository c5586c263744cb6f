//! Unimodal feature extractors, the shared-space projection and the
//! per-modality regression heads.

use rand::Rng;

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Linear, Mlp2, Mode};
use crate::params::{ParamGroup, ParamId, ParamStore};

/// Text projector: a two-layer MLP over a precomputed sentence vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder {
    pub mlp: Mlp2,
}

impl TextEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        d_in: usize,
        hidden: usize,
        d_out: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        TextEncoder {
            mlp: Mlp2::new(store, "text_encoder", ParamGroup::Other, d_in, hidden, d_out, dropout, rng),
        }
    }

    pub fn d_in(&self) -> usize {
        self.mlp.first.d_in
    }

    pub fn d_out(&self) -> usize {
        self.mlp.second.d_out
    }

    /// Batched `[B, d_t] -> [B, d_t']`.
    pub fn forward(&self, tape: &mut Tape, bound: &[Var], text: Var, mode: &mut Mode) -> Result<Var> {
        let d = tape.shape(text)[1];
        if d != self.d_in() {
            return Err(Error::Dimension {
                what: "text vector".into(),
                expected: self.d_in(),
                got: d,
            });
        }
        self.mlp.forward(tape, bound, text, mode)
    }
}

/// Encodes one text vector.
pub fn encode_text(
    tape: &mut Tape,
    bound: &[Var],
    encoder: &TextEncoder,
    text_vec: &[f64],
    mode: &mut Mode,
) -> Result<Var> {
    let x = tape.constant(Tensor::row(text_vec));
    encoder.forward(tape, bound, x, mode)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
}

/// Single-layer LSTM with gate order (input, forget, candidate, output).
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub spec: LstmSpec,
    /// `[d_in, 4H]`
    pub w_input: ParamId,
    /// `[H, 4H]`
    pub w_hidden: ParamId,
    /// `[1, 4H]`
    pub bias: ParamId,
}

impl Lstm {
    /// Weights uniform in ±1/sqrt(H); biases zero except the forget gate at 1.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        spec: LstmSpec,
        rng: &mut R,
    ) -> Self {
        let h = spec.hidden_dim;
        let bound = 1.0 / (h as f64).sqrt();
        let w_input = store.add_uniform(format!("{name}.w_input"), group, &[spec.input_dim, 4 * h], bound, rng);
        let w_hidden = store.add_uniform(format!("{name}.w_hidden"), group, &[h, 4 * h], bound, rng);
        let mut b = Tensor::zeros(&[1, 4 * h]);
        b.data_mut()[h..2 * h].fill(1.0);
        let bias = store.add(format!("{name}.bias"), group, b);
        Lstm {
            spec,
            w_input,
            w_hidden,
            bias,
        }
    }

    /// Runs the recurrence over `steps` (each `[B, d_in]`) and returns the
    /// hidden state of every sample at its own length. Steps past a sample's
    /// length leave its state untouched, so padding is never read.
    pub fn forward(&self, tape: &mut Tape, bound: &[Var], steps: &[Var], lengths: &[usize]) -> Result<Var> {
        let h = self.spec.hidden_dim;
        let batch = lengths.len();
        if steps.is_empty() {
            return Err(Error::Empty("lstm steps"));
        }
        if let Some(&bad) = lengths.iter().find(|&&l| l == 0 || l > steps.len()) {
            return Err(Error::Dimension {
                what: "sequence length".into(),
                expected: steps.len(),
                got: bad,
            });
        }
        for &s in steps {
            let shape = tape.shape(s);
            if shape != [batch, self.spec.input_dim] {
                return Err(Error::shape("lstm step", &[shape, &[batch, self.spec.input_dim]]));
            }
        }
        let (wi, wh, b) = (self.w_input.var(bound), self.w_hidden.var(bound), self.bias.var(bound));
        let max_len = *lengths.iter().max().unwrap();
        let mut hidden = tape.constant(Tensor::zeros(&[batch, h]));
        let mut cell = tape.constant(Tensor::zeros(&[batch, h]));
        for (t, &x) in steps.iter().enumerate().take(max_len) {
            let gx = tape.matmul(x, wi)?;
            let gh = tape.matmul(hidden, wh)?;
            let gates = tape.add(gx, gh)?;
            let gates = tape.add(gates, b)?;
            let i = tape.slice(gates, 1, 0..h)?;
            let i = tape.sigmoid(i);
            let f = tape.slice(gates, 1, h..2 * h)?;
            let f = tape.sigmoid(f);
            let g = tape.slice(gates, 1, 2 * h..3 * h)?;
            let g = tape.tanh(g);
            let o = tape.slice(gates, 1, 3 * h..4 * h)?;
            let o = tape.sigmoid(o);
            let fc = tape.mul(f, cell)?;
            let ig = tape.mul(i, g)?;
            let c_new = tape.add(fc, ig)?;
            let tc = tape.tanh(c_new);
            let h_new = tape.mul(o, tc)?;

            if lengths.iter().all(|&l| l > t) {
                hidden = h_new;
                cell = c_new;
            } else {
                let mut keep_new = Tensor::zeros(&[batch, h]);
                let mut keep_old = Tensor::zeros(&[batch, h]);
                for (bi, &l) in lengths.iter().enumerate() {
                    let active = if l > t { 1.0 } else { 0.0 };
                    keep_new.data_mut()[bi * h..(bi + 1) * h].fill(active);
                    keep_old.data_mut()[bi * h..(bi + 1) * h].fill(1.0 - active);
                }
                let kn = tape.constant(keep_new);
                let ko = tape.constant(keep_old);
                hidden = blend(tape, h_new, hidden, kn, ko)?;
                cell = blend(tape, c_new, cell, kn, ko)?;
            }
        }
        Ok(hidden)
    }
}

fn blend(tape: &mut Tape, new: Var, old: Var, keep_new: Var, keep_old: Var) -> Result<Var> {
    let a = tape.mul(new, keep_new)?;
    let b = tape.mul(old, keep_old)?;
    tape.add(a, b)
}

/// Encodes one `T x d_m` sequence, reading the final state at `length`.
pub fn encode_sequence(
    tape: &mut Tape,
    bound: &[Var],
    lstm: &Lstm,
    seq: &[Vec<f64>],
    length: usize,
) -> Result<Var> {
    if length == 0 {
        return Err(Error::ZeroLength("<single>".into()));
    }
    if length > seq.len() {
        return Err(Error::Dimension {
            what: "sequence length".into(),
            expected: seq.len(),
            got: length,
        });
    }
    let mut steps = Vec::with_capacity(seq.len());
    for row in seq {
        if row.len() != lstm.spec.input_dim {
            return Err(Error::Dimension {
                what: "sequence feature".into(),
                expected: lstm.spec.input_dim,
                got: row.len(),
            });
        }
        steps.push(tape.constant(Tensor::row(row)));
    }
    lstm.forward(tape, bound, &steps, &[length])
}

/// Bias-free projection into the shared space followed by ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// `[d_m', d*]`
    pub weight: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Projection {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        let weight = store.add_uniform(format!("{name}.weight"), ParamGroup::Other, &[d_in, d_out], bound, rng);
        Projection { weight, d_in, d_out }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &[Var], features: Var) -> Result<Var> {
        project(tape, features, self.weight.var(bound))
    }
}

/// `relu(f W)` for `f: [B, d_m']`, `W: [d_m', d*]`.
pub fn project(tape: &mut Tape, features: Var, weight: Var) -> Result<Var> {
    let y = tape.matmul(features, weight)?;
    Ok(tape.relu(y))
}

/// Per-modality regression head, applied to the raw extractor output.
#[derive(Debug, Clone, PartialEq)]
pub struct UnimodalHead {
    pub linear: Linear,
    pub dropout: f64,
}

impl UnimodalHead {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_in: usize, dropout: f64, rng: &mut R) -> Self {
        UnimodalHead {
            linear: Linear::new(store, name, ParamGroup::Other, d_in, 1, true, rng),
            dropout,
        }
    }

    /// `[B, d_m'] -> [B, 1]`
    pub fn forward(&self, tape: &mut Tape, bound: &[Var], features: Var, mode: &mut Mode) -> Result<Var> {
        let d = tape.shape(features)[1];
        if d != self.linear.d_in {
            return Err(Error::Dimension {
                what: "unimodal head input".into(),
                expected: self.linear.d_in,
                got: d,
            });
        }
        let x = mode.dropout(tape, features, self.dropout)?;
        self.linear.forward(tape, bound, x)
    }
}

pub fn unimodal_predict(
    tape: &mut Tape,
    bound: &[Var],
    head: &UnimodalHead,
    features: Var,
    mode: &mut Mode,
) -> Result<Var> {
    head.forward(tape, bound, features, mode)
}
