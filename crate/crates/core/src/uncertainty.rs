//! Per-modality Gaussian embeddings: estimation, reparameterised sampling
//! and the reconstruction / KL regularisers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Mlp2, Mode};
use crate::params::{ParamGroup, ParamStore};

/// Added to every softplus output so that `sigma` stays strictly positive.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Diagonal Gaussian `N(mu, diag(sigma^2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianEmbedding {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GaussianEmbedding {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(Error::LengthMismatch {
                left: mu.len(),
                right: sigma.len(),
            });
        }
        if mu.is_empty() {
            return Err(Error::Empty("gaussian embedding"));
        }
        if let Some(s) = sigma.iter().find(|s| !(**s > 0.0)) {
            return Err(Error::Domain {
                op: "gaussian embedding",
                detail: format!("sigma {s} must be positive"),
            });
        }
        Ok(GaussianEmbedding { mu, sigma })
    }

    pub fn standard(dim: usize) -> Self {
        GaussianEmbedding {
            mu: vec![0.0; dim],
            sigma: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Places this embedding on `tape` as a one-row batch of constants.
    pub fn constant(&self, tape: &mut Tape) -> GaussianVar {
        GaussianVar {
            mu: tape.constant(Tensor::row(&self.mu)),
            sigma: tape.constant(Tensor::row(&self.sigma)),
        }
    }
}

/// A batch of diagonal Gaussians on a tape: `mu` and `sigma` are `[B, D]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GaussianVar {
    pub mu: Var,
    pub sigma: Var,
}

impl GaussianVar {
    pub fn batch_size(&self, tape: &Tape) -> usize {
        tape.shape(self.mu)[0]
    }

    pub fn dim(&self, tape: &Tape) -> usize {
        tape.shape(self.mu)[1]
    }

    /// Reads row `i` back as a value.
    pub fn row(&self, tape: &Tape, i: usize) -> GaussianEmbedding {
        GaussianEmbedding {
            mu: tape.value(self.mu).row_slice(i).to_vec(),
            sigma: tape.value(self.sigma).row_slice(i).to_vec(),
        }
    }

    pub fn rows(&self, tape: &Tape) -> Vec<GaussianEmbedding> {
        (0..self.batch_size(tape)).map(|i| self.row(tape, i)).collect()
    }
}

/// Mean branch, deviation branch and decoder for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyHeads {
    pub mu: Mlp2,
    pub sigma: Mlp2,
    pub decoder: Mlp2,
}

impl UncertaintyHeads {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        proj_dim: usize,
        hidden: usize,
        dist_dim: usize,
        rng: &mut R,
    ) -> Self {
        let g = ParamGroup::Other;
        UncertaintyHeads {
            mu: Mlp2::new(store, &format!("{name}.mu"), g, proj_dim, hidden, dist_dim, 0.0, rng),
            sigma: Mlp2::new(store, &format!("{name}.sigma"), g, proj_dim, hidden, dist_dim, 0.0, rng),
            decoder: Mlp2::new(store, &format!("{name}.decoder"), g, dist_dim, hidden, proj_dim, 0.0, rng),
        }
    }
}

/// `mu = MLP_mu(f*)`, `sigma = softplus(MLP_sigma(f*)) + SIGMA_FLOOR`.
pub fn estimate_distribution(
    tape: &mut Tape,
    bound: &[Var],
    heads: &UncertaintyHeads,
    f_star: Var,
    mode: &mut Mode,
) -> Result<GaussianVar> {
    let d = tape.shape(f_star)[1];
    if d != heads.mu.first.d_in {
        return Err(Error::Dimension {
            what: "projected feature".into(),
            expected: heads.mu.first.d_in,
            got: d,
        });
    }
    let mu = heads.mu.forward(tape, bound, f_star, mode)?;
    let raw = heads.sigma.forward(tape, bound, f_star, mode)?;
    let sp = tape.softplus(raw);
    let floor = tape.constant(Tensor::scalar(SIGMA_FLOOR));
    let sigma = tape.add(sp, floor)?;
    Ok(GaussianVar { mu, sigma })
}

/// `z = mu + eps * sigma`; with `eps = None` (eval) the mean is returned.
pub fn sample(tape: &mut Tape, emb: GaussianVar, eps: Option<Tensor>) -> Result<Var> {
    match eps {
        None => Ok(emb.mu),
        Some(eps) => {
            let e = tape.constant(eps);
            let scaled = tape.mul(e, emb.sigma)?;
            tape.add(emb.mu, scaled)
        }
    }
}

/// Mean over modalities of `||decoder(z) - f*||^2 / d*`, averaged over the batch.
pub fn reconstruction_loss(
    tape: &mut Tape,
    bound: &[Var],
    decoders: &[&Mlp2],
    z: &[Var],
    f_star: &[Var],
    mode: &mut Mode,
) -> Result<Var> {
    if decoders.len() != z.len() || z.len() != f_star.len() {
        return Err(Error::LengthMismatch {
            left: z.len(),
            right: f_star.len(),
        });
    }
    if z.is_empty() {
        return Err(Error::Empty("reconstruction_loss"));
    }
    let mut terms = Vec::with_capacity(z.len());
    for ((dec, &zm), &fm) in decoders.iter().zip(z).zip(f_star) {
        let rec = dec.forward(tape, bound, zm, mode)?;
        let diff = tape.sub(rec, fm)?;
        let sq = tape.square(diff);
        terms.push(tape.mean(sq));
    }
    average(tape, &terms)
}

/// Mean over modalities of `KL(N(mu, sigma^2) || N(0, I))`, summed over
/// latent dimensions and averaged over the batch.
pub fn kl_loss(tape: &mut Tape, embeddings: &[GaussianVar]) -> Result<Var> {
    if embeddings.is_empty() {
        return Err(Error::Empty("kl_loss"));
    }
    let mut terms = Vec::with_capacity(embeddings.len());
    for emb in embeddings {
        let (b, d) = (emb.batch_size(tape), emb.dim(tape));
        let mu2 = tape.square(emb.mu);
        let s2 = tape.square(emb.sigma);
        let log_s = tape.log(emb.sigma)?;
        let log_s2 = tape.scalar_mul(log_s, 2.0);
        let t = tape.add(mu2, s2)?;
        let t = tape.sub(t, log_s2)?;
        let total = tape.sum(t);
        let shift = tape.constant(Tensor::scalar(-((b * d) as f64)));
        let total = tape.add(total, shift)?;
        terms.push(tape.scalar_mul(total, 0.5 / b as f64));
    }
    average(tape, &terms)
}

pub(crate) fn average(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(tape.scalar_mul(acc, 1.0 / terms.len() as f64))
}

/// Closed-form KL of one embedding against the standard normal.
pub fn kl_to_standard(emb: &GaussianEmbedding) -> Result<f64> {
    let mut tape = Tape::new();
    let v = emb.constant(&mut tape);
    let l = kl_loss(&mut tape, &[v])?;
    Ok(tape.value(l).item())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use super::*;
    use crate::diffcore::grad_check;

    fn heads(seed: u64, proj: usize, dist: usize) -> (ParamStore, UncertaintyHeads) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let h = UncertaintyHeads::new(&mut store, "t", proj, 16, dist, &mut rng);
        (store, h)
    }

    #[test]
    fn zero_weight_heads_collapse_to_bias() {
        let (mut store, h) = heads(1, 8, 64);
        for (i, e) in store.values_mut().enumerate() {
            let is_bias = e.rows() == 1;
            for (j, v) in e.data_mut().iter_mut().enumerate() {
                *v = if is_bias { (i as f64 - 3.0) * 0.3 + j as f64 * 0.01 } else { 0.0 };
            }
        }
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let f = tape.constant(Tensor::row(&[0.7; 8]));
        let g = estimate_distribution(&mut tape, &bound, &h, f, &mut Mode::Eval).unwrap();
        let mu_bias = store.get(h.mu.second.bias.unwrap()).data();
        let sg_bias = store.get(h.sigma.second.bias.unwrap()).data();
        assert_eq!(tape.value(g.mu).data(), mu_bias);
        for (s, b) in tape.value(g.sigma).data().iter().zip(sg_bias) {
            assert_eq!(*s, crate::diffcore::softplus(*b) + SIGMA_FLOOR);
            assert!(*s > 0.0);
        }
        assert_eq!(tape.shape(g.mu), &[1, 64]);
    }

    #[test]
    fn sigma_positive_over_many_draws() {
        let (store, h) = heads(2, 6, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..10_000)
            .map(|_| (0..6).map(|_| rng.random_range(-50.0..50.0)).collect())
            .collect();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let f = tape.constant(Tensor::from_rows(&rows).unwrap());
        let g = estimate_distribution(&mut tape, &bound, &h, f, &mut Mode::Eval).unwrap();
        assert!(tape.value(g.sigma).data().iter().all(|&s| s > 0.0 && s.is_finite()));
    }

    #[test]
    fn sample_cases() {
        let mut tape = Tape::new();
        let e = GaussianEmbedding::new(vec![1.0, -2.0], vec![0.5, 2.0]).unwrap().constant(&mut tape);
        let z = sample(&mut tape, e, None).unwrap();
        assert_eq!(tape.value(z).data(), &[1.0, -2.0]);
        let z = sample(&mut tape, e, Some(Tensor::row(&[0.0, 0.0]))).unwrap();
        assert_eq!(tape.value(z).data(), &[1.0, -2.0]);
        let tiny = GaussianEmbedding::new(vec![3.0], vec![1e-300]).unwrap().constant(&mut tape);
        let z = sample(&mut tape, tiny, Some(Tensor::row(&[5.0]))).unwrap();
        assert_eq!(tape.value(z).item(), 3.0);
    }

    #[test]
    fn sample_mean_converges_to_mu() {
        let mu = [0.3, -1.2, 2.0];
        let sigma = [0.5, 1.5, 0.1];
        let emb = GaussianEmbedding::new(mu.to_vec(), sigma.to_vec()).unwrap();
        let n = 1_000_000;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut tape = Tape::new();
        let rows: Vec<Vec<f64>> = (0..n).map(|_| mu.to_vec()).collect();
        let srows: Vec<Vec<f64>> = (0..n).map(|_| sigma.to_vec()).collect();
        let g = GaussianVar {
            mu: tape.constant(Tensor::from_rows(&rows).unwrap()),
            sigma: tape.constant(Tensor::from_rows(&srows).unwrap()),
        };
        let mut eps = Tensor::zeros(&[n, 3]);
        eps.data_mut().iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let z = sample(&mut tape, g, Some(eps)).unwrap();
        let zs = tape.value(z);
        for d in 0..3 {
            let mean = (0..n).map(|i| zs.data()[i * 3 + d]).sum::<f64>() / n as f64;
            assert!((mean - emb.mu[d]).abs() <= 3.0 * emb.sigma[d] / 1e3, "dim {d}: {mean}");
        }
    }

    #[test]
    fn sample_gradient_is_identity_and_eps() {
        let eps = Tensor::row(&[0.3, -1.1, 2.0]);
        let check = grad_check(
            |t, p| {
                let z = sample(t, GaussianVar { mu: p[0], sigma: p[1] }, Some(eps.clone()))?;
                Ok(t.sum(z))
            },
            &[Tensor::row(&[1.0, 2.0, 3.0]), Tensor::row(&[0.5, 0.5, 1.0])],
            1e-5,
        )
        .unwrap();
        assert!(check.max_rel_error <= 1e-9);

        let mut tape = Tape::new();
        let mu = tape.param(Tensor::row(&[1.0, 2.0, 3.0]));
        let sigma = tape.param(Tensor::row(&[0.5, 0.5, 1.0]));
        let z = sample(&mut tape, GaussianVar { mu, sigma }, Some(eps.clone())).unwrap();
        let l = tape.sum(z);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(mu).data(), &[1.0, 1.0, 1.0]);
        assert_eq!(g.get(sigma).data(), eps.data());
    }

    #[test]
    fn reconstruction_cases() {
        let (mut store, h) = heads(5, 128, 4);
        // decoder outputs exactly its last bias when weights are zero
        for e in [h.decoder.first.weight, h.decoder.second.weight] {
            store.get_mut(e).data_mut().fill(0.0);
        }
        let target = store.get(h.decoder.second.bias.unwrap()).clone();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let z = tape.constant(Tensor::row(&[0.1, 0.2, 0.3, 0.4]));
        let f = tape.constant(target.clone());
        let decs = [&h.decoder, &h.decoder, &h.decoder];
        let l = reconstruction_loss(&mut tape, &bound, &decs, &[z, z, z], &[f, f, f], &mut Mode::Eval).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);

        // residual of all ones over d* = 128 gives 1 per modality
        let shifted: Vec<f64> = target.data().iter().map(|v| v - 1.0).collect();
        let f = tape.constant(Tensor::row(&shifted));
        let l = reconstruction_loss(&mut tape, &bound, &decs, &[z, z, z], &[f, f, f], &mut Mode::Eval).unwrap();
        assert!((tape.value(l).item() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_is_symmetric_in_modality_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let hs: Vec<UncertaintyHeads> =
            (0..3).map(|i| UncertaintyHeads::new(&mut store, &format!("m{i}"), 5, 4, 3, &mut rng)).collect();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let zs: Vec<Var> = (0..3)
            .map(|_| tape.constant(Tensor::row(&(0..3).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>())))
            .collect();
        let fs: Vec<Var> = (0..3)
            .map(|_| tape.constant(Tensor::row(&(0..5).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<_>>())))
            .collect();
        let decs: Vec<&Mlp2> = hs.iter().map(|h| &h.decoder).collect();
        let a = reconstruction_loss(&mut tape, &bound, &decs, &zs, &fs, &mut Mode::Eval).unwrap();
        let rev = |v: &[Var]| vec![v[2], v[0], v[1]];
        let decs_p = vec![decs[2], decs[0], decs[1]];
        let b = reconstruction_loss(&mut tape, &bound, &decs_p, &rev(&zs), &rev(&fs), &mut Mode::Eval).unwrap();
        assert!((tape.value(a).item() - tape.value(b).item()).abs() < 1e-14);
    }

    #[test]
    fn kl_cases() {
        let std = GaussianEmbedding::standard(4);
        let mut tape = Tape::new();
        let e = std.constant(&mut tape);
        let l = kl_loss(&mut tape, &[e, e, e]).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);

        let one = GaussianEmbedding::new(vec![1.0], vec![1.0]).unwrap().constant(&mut tape);
        let zero = GaussianEmbedding::standard(1).constant(&mut tape);
        let l = kl_loss(&mut tape, &[one, zero, zero]).unwrap();
        assert!((tape.value(l).item() - 0.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..3 {
            let d = 3;
            let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let sigma: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..2.0)).collect();
            let emb = GaussianEmbedding::new(mu.clone(), sigma.clone()).unwrap();
            let closed = kl_to_standard(&emb).unwrap();
            // E_q[log q(z) - log p(z)]
            let n = 1_000_000;
            let mut acc = 0.0;
            for _ in 0..n {
                let mut lr = 0.0;
                for j in 0..d {
                    let e: f64 = rng.sample(StandardNormal);
                    let z = mu[j] + sigma[j] * e;
                    lr += -sigma[j].ln() - 0.5 * e * e + 0.5 * z * z;
                }
                acc += lr;
            }
            let mc = acc / n as f64;
            assert!((closed - mc).abs() <= 5e-3, "closed {closed} vs mc {mc}");
        }
    }

    #[test]
    fn kl_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let mu: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let sigma: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..5.0)).collect();
            let emb = GaussianEmbedding::new(mu, sigma).unwrap();
            assert!(kl_to_standard(&emb).unwrap() >= 0.0);
        }
    }

    #[test]
    fn heads_gradcheck() {
        let (store, h) = heads(9, 5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let f: Vec<Vec<f64>> = (0..2).map(|_| (0..5).map(|_| rng.random_range(0.1..1.0)).collect()).collect();
        let eps = Tensor::from_rows(&[[0.3, -0.7, 1.2], [-1.0, 0.4, 0.1]]).unwrap();
        let check = grad_check(
            |t, p| {
                let fv = t.constant(Tensor::from_rows(&f)?);
                let g = estimate_distribution(t, p, &h, fv, &mut Mode::Eval)?;
                let z = sample(t, g, Some(eps.clone()))?;
                let rec = reconstruction_loss(t, p, &[&h.decoder], &[z], &[fv], &mut Mode::Eval)?;
                let kl = kl_loss(t, &[g])?;
                t.add(rec, kl)
            },
            &store.values(),
            1e-5,
        )
        .unwrap();
        assert!(check.max_rel_error <= 1e-4, "{check:?}");
    }
}
