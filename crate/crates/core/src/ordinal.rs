//! Hard-triplet mining by label geometry and the Wasserstein ordinal hinge.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::uncertainty::{GaussianEmbedding, GaussianVar};

/// Anchor, reference and hard sample indices into one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub reference: usize,
    pub hard: usize,
    /// `|y_a - y_r|`
    pub gap_ref: f64,
    /// `|y_a - y_h|`
    pub gap_hard: f64,
}

/// Closed-form squared 2-Wasserstein distance between diagonal Gaussians.
pub fn wasserstein2_sq(a: &GaussianEmbedding, b: &GaussianEmbedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            what: "wasserstein operand".into(),
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok((0..a.dim())
        .map(|j| {
            let dm = a.mu[j] - b.mu[j];
            let ds = a.sigma[j] - b.sigma[j];
            dm * dm + ds * ds
        })
        .sum())
}

/// One triplet per anchor at most: a uniformly drawn reference `r != a`, and
/// the closest-in-gap sample `h` with `g_h > g_r` and `g_h - g_r < xi`.
pub fn mine_triplets<R: Rng + ?Sized>(labels: &[f64], xi: f64, rng: &mut R) -> Result<Vec<Triplet>> {
    let n = labels.len();
    if n < 3 {
        return Err(Error::BatchTooSmall(n));
    }
    if !(xi > 0.0) {
        return Err(Error::Domain {
            op: "mine_triplets",
            detail: format!("xi {xi} must be positive"),
        });
    }
    let mut out = Vec::new();
    for a in 0..n {
        let r = draw_reference(a, n, rng);
        let gap_ref = (labels[a] - labels[r]).abs();
        let mut best: Option<(usize, f64)> = None;
        for (h, &yh) in labels.iter().enumerate() {
            if h == a || h == r {
                continue;
            }
            let gap_hard = (labels[a] - yh).abs();
            let diff = gap_hard - gap_ref;
            if gap_hard > gap_ref && diff < xi && best.is_none_or(|(_, d)| diff < d) {
                best = Some((h, diff));
            }
        }
        if let Some((hard, _)) = best {
            out.push(Triplet {
                anchor: a,
                reference: r,
                hard,
                gap_ref,
                gap_hard: (labels[a] - labels[hard]).abs(),
            });
        }
    }
    Ok(out)
}

fn draw_reference<R: Rng + ?Sized>(anchor: usize, n: usize, rng: &mut R) -> usize {
    let r = rng.random_range(0..n - 1);
    if r >= anchor {
        r + 1
    } else {
        r
    }
}

fn check_indices(triplets: &[Triplet], len: usize) -> Result<()> {
    for t in triplets {
        for index in [t.anchor, t.reference, t.hard] {
            if index >= len {
                return Err(Error::TripletIndex { index, len });
            }
        }
    }
    Ok(())
}

/// Mean hinge `max(0, d(a, r) + delta - d(a, h))` over triplets; 0 if there are none.
pub fn ordinal_loss(triplets: &[Triplet], fused: &[GaussianEmbedding], delta: f64) -> Result<f64> {
    check_indices(triplets, fused.len())?;
    if triplets.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for t in triplets {
        let dr = wasserstein2_sq(&fused[t.anchor], &fused[t.reference])?;
        let dh = wasserstein2_sq(&fused[t.anchor], &fused[t.hard])?;
        total += (dr + delta - dh).max(0.0);
    }
    Ok(total / triplets.len() as f64)
}

/// Differentiable [`ordinal_loss`] over the rows of a fused batch.
/// Returns `None` when there are no triplets, so the term can be left off the graph.
pub fn ordinal_loss_var(tape: &mut Tape, triplets: &[Triplet], fused: GaussianVar, delta: f64) -> Result<Option<Var>> {
    check_indices(triplets, fused.batch_size(tape))?;
    if triplets.is_empty() {
        return Ok(None);
    }
    let pick = |f: fn(&Triplet) -> usize| triplets.iter().map(f).collect::<Vec<_>>();
    let (ia, ir, ih) = (pick(|t| t.anchor), pick(|t| t.reference), pick(|t| t.hard));
    let dist = |tape: &mut Tape, i: &[usize], j: &[usize]| -> Result<Var> {
        let mut parts = Vec::with_capacity(2);
        for v in [fused.mu, fused.sigma] {
            let x = tape.gather_rows(v, i)?;
            let y = tape.gather_rows(v, j)?;
            let d = tape.sub(x, y)?;
            let sq = tape.square(d);
            parts.push(tape.sum_axis(sq, 1)?);
        }
        tape.add(parts[0], parts[1])
    };
    let dr = dist(tape, &ia, &ir)?;
    let dh = dist(tape, &ia, &ih)?;
    let margin = tape.constant(Tensor::scalar(delta));
    let gap = tape.sub(dr, dh)?;
    let gap = tape.add(gap, margin)?;
    let hinge = tape.relu(gap);
    Ok(Some(tape.mean(hinge)))
}
