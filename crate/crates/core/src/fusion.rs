//! Product-of-Gaussians fusion and the multimodal prediction head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Mlp2, Mode};
use crate::params::{ParamGroup, ParamStore};
use crate::uncertainty::{GaussianEmbedding, GaussianVar};

/// How a missing modality is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingMode {
    /// Zero the raw feature and leave the modality out of fusion.
    #[default]
    Zero,
    /// Only leave the modality out of fusion.
    Exclude,
}

impl std::str::FromStr for MissingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(MissingMode::Zero),
            "exclude" => Ok(MissingMode::Exclude),
            other => Err(Error::Config(format!("unknown missing mode '{other}' (expected zero or exclude)"))),
        }
    }
}

/// Fuses two diagonal Gaussians as the normalised product of their densities.
pub fn fuse_pair(a: &GaussianEmbedding, b: &GaussianEmbedding) -> Result<GaussianEmbedding> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            what: "fused embedding".into(),
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let mut mu = Vec::with_capacity(a.dim());
    let mut sigma = Vec::with_capacity(a.dim());
    for d in 0..a.dim() {
        let (va, vb) = (a.sigma[d] * a.sigma[d], b.sigma[d] * b.sigma[d]);
        let s = va + vb;
        mu.push((a.mu[d] * vb + b.mu[d] * va) / s);
        sigma.push((va * vb / s).sqrt());
    }
    Ok(GaussianEmbedding { mu, sigma })
}

/// Left fold of [`fuse_pair`]; a singleton is returned unchanged.
pub fn fuse_all(embs: &[GaussianEmbedding]) -> Result<GaussianEmbedding> {
    let (first, rest) = embs.split_first().ok_or(Error::EmptyFusion)?;
    rest.iter().try_fold(first.clone(), |acc, e| fuse_pair(&acc, e))
}

/// Mean and variance of a batch of Gaussians on the tape.
#[derive(Clone, Copy)]
struct MeanVar {
    mu: Var,
    var: Var,
}

fn fuse_mean_var(tape: &mut Tape, a: MeanVar, b: MeanVar) -> Result<MeanVar> {
    let s = tape.add(a.var, b.var)?;
    let num_a = tape.mul(a.mu, b.var)?;
    let num_b = tape.mul(b.mu, a.var)?;
    let num = tape.add(num_a, num_b)?;
    let mu = tape.div(num, s)?;
    let prod = tape.mul(a.var, b.var)?;
    let var = tape.div(prod, s)?;
    Ok(MeanVar { mu, var })
}

fn check_dims(tape: &Tape, embs: &[GaussianVar]) -> Result<()> {
    let shape = tape.shape(embs[0].mu).to_vec();
    for e in embs {
        for v in [e.mu, e.sigma] {
            if tape.shape(v) != shape.as_slice() {
                return Err(Error::shape("fuse", &[shape.as_slice(), tape.shape(v)]));
            }
        }
    }
    Ok(())
}

/// Differentiable [`fuse_pair`] over a batch.
pub fn fuse_pair_var(tape: &mut Tape, a: GaussianVar, b: GaussianVar) -> Result<GaussianVar> {
    fuse_all_var(tape, &[a, b])
}

/// Differentiable left fold over a batch of embeddings.
pub fn fuse_all_var(tape: &mut Tape, embs: &[GaussianVar]) -> Result<GaussianVar> {
    if embs.is_empty() {
        return Err(Error::EmptyFusion);
    }
    check_dims(tape, embs)?;
    if embs.len() == 1 {
        return Ok(embs[0]);
    }
    let mut acc = to_mean_var(tape, embs[0]);
    for &e in &embs[1..] {
        let next = to_mean_var(tape, e);
        acc = fuse_mean_var(tape, acc, next)?;
    }
    let sigma = tape.sqrt(acc.var)?;
    Ok(GaussianVar { mu: acc.mu, sigma })
}

fn to_mean_var(tape: &mut Tape, e: GaussianVar) -> MeanVar {
    MeanVar {
        mu: e.mu,
        var: tape.square(e.sigma),
    }
}

/// Per-sample left fold that skips absent modalities.
///
/// `present[m][b]` says whether modality `m` is available for sample `b`.
/// Every sample needs at least one present modality. Rows are fused in the
/// same order as [`fuse_all`] over the present subset.
pub fn fuse_masked(tape: &mut Tape, embs: &[GaussianVar], present: &[Vec<bool>]) -> Result<GaussianVar> {
    if embs.is_empty() {
        return Err(Error::EmptyFusion);
    }
    if present.len() != embs.len() {
        return Err(Error::LengthMismatch {
            left: embs.len(),
            right: present.len(),
        });
    }
    check_dims(tape, embs)?;
    let (b, d) = (embs[0].batch_size(tape), embs[0].dim(tape));
    for p in present {
        if p.len() != b {
            return Err(Error::LengthMismatch { left: b, right: p.len() });
        }
    }
    if let Some(row) = (0..b).find(|&i| present.iter().all(|p| !p[i])) {
        return Err(Error::AllMissing(format!("batch row {row}")));
    }
    if present.iter().all(|p| p.iter().all(|&x| x)) {
        return fuse_all_var(tape, embs);
    }

    let mask = |flags: &dyn Fn(usize) -> bool| {
        let mut t = Tensor::zeros(&[b, d]);
        for (i, row) in t.data_mut().chunks_mut(d).enumerate() {
            if flags(i) {
                row.fill(1.0);
            }
        }
        t
    };
    let mut has_acc: Vec<bool> = present[0].clone();
    let mut acc = to_mean_var(tape, embs[0]);
    for (m, &e) in embs.iter().enumerate().skip(1) {
        let next = to_mean_var(tape, e);
        let fused = fuse_mean_var(tape, acc, next)?;
        let p = &present[m];
        let w_fuse = tape.constant(mask(&|i| p[i] && has_acc[i]));
        let w_take = tape.constant(mask(&|i| p[i] && !has_acc[i]));
        let w_keep = tape.constant(mask(&|i| !p[i]));
        let blend = |tape: &mut Tape, f: Var, n: Var, a: Var| -> Result<Var> {
            let x = tape.mul(w_fuse, f)?;
            let y = tape.mul(w_take, n)?;
            let z = tape.mul(w_keep, a)?;
            let xy = tape.add(x, y)?;
            tape.add(xy, z)
        };
        acc = MeanVar {
            mu: blend(tape, fused.mu, next.mu, acc.mu)?,
            var: blend(tape, fused.var, next.var, acc.var)?,
        };
        for (h, &pi) in has_acc.iter_mut().zip(p) {
            *h |= pi;
        }
    }
    let sigma = tape.sqrt(acc.var)?;
    Ok(GaussianVar { mu: acc.mu, sigma })
}

/// `FC_f` over `[f_t; f_v; f_a; z_f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionHead {
    pub mlp: Mlp2,
    pub widths: [usize; 4],
}

impl FusionHead {
    /// `widths` are the text, visual, audio feature widths and the latent dim.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        widths: [usize; 4],
        hidden: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let d_in = widths.iter().sum();
        FusionHead {
            mlp: Mlp2::new(store, "fusion_head", ParamGroup::Other, d_in, hidden, 1, dropout, rng),
            widths,
        }
    }
}

/// Multimodal score `FC_f([f_t; f_v; f_a; z_f])`, shape `[B, 1]`.
#[allow(clippy::too_many_arguments)]
pub fn predict_multimodal(
    tape: &mut Tape,
    bound: &[Var],
    head: &FusionHead,
    f_t: Var,
    f_v: Var,
    f_a: Var,
    z_f: Var,
    mode: &mut Mode,
) -> Result<Var> {
    let parts = [f_t, f_v, f_a, z_f];
    for (i, (&p, &w)) in parts.iter().zip(&head.widths).enumerate() {
        let got = tape.shape(p)[1];
        if got != w {
            return Err(Error::Dimension {
                what: ["text feature", "visual feature", "audio feature", "fused latent"][i].into(),
                expected: w,
                got,
            });
        }
    }
    let x = tape.concat(&parts, 1)?;
    head.mlp.forward(tape, bound, x, mode)
}
