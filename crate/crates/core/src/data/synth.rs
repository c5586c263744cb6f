use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{write_jsonl, Dataset, DatasetHeader, Sample};
use crate::error::{Error, Result};
use crate::rng::stream;

/// How latent sentiment values are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelGrid {
    /// Uniform on `[-3, 3]`.
    #[default]
    Continuous,
    /// Uniform over the seven integers `-3..=3`.
    Levels7,
}

/// Parameters of the synthetic generator.
///
/// Each sample has a latent score `s` and three noisy views of
/// `basis(s) = [1, s, s^2, sin s, cos s]`: text sees the whole basis, visual
/// sees `{1, s, sin s}`, audio sees `{1, s^2, cos s}`. The noise standard
/// deviation of modality `m` on one sample is `noise_m * u` with
/// `u ~ U(1 - noise_spread, 1 + noise_spread)`, so samples differ in how
/// reliable each modality is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub d_t: usize,
    pub d_v: usize,
    pub d_a: usize,
    /// Maximum sequence lengths; each sample's length is uniform in `[ceil(T/2), T]`.
    pub t_v: usize,
    pub t_a: usize,
    pub noise_t: f64,
    pub noise_v: f64,
    pub noise_a: f64,
    pub noise_spread: f64,
    /// Fraction of each modality's dimensions that carry only noise.
    pub irrelevant_frac: f64,
    pub label_grid: LabelGrid,
    /// Monte Carlo draws used to estimate the Bayes-optimal MAE.
    pub bayes_draws: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 2000,
            n_val: 400,
            n_test: 400,
            d_t: 32,
            d_v: 20,
            d_a: 5,
            t_v: 12,
            t_a: 12,
            noise_t: 4.0,
            noise_v: 5.0,
            noise_a: 4.0,
            noise_spread: 0.7,
            irrelevant_frac: 0.25,
            label_grid: LabelGrid::Continuous,
            bayes_draws: 20_000,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("synthetic config: {msg}")));
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return bad("sample counts must be positive");
        }
        if [self.d_t, self.d_v, self.d_a, self.t_v, self.t_a].contains(&0) {
            return bad("dimensions and sequence lengths must be positive");
        }
        let noise = [self.noise_t, self.noise_v, self.noise_a];
        if noise.iter().any(|n| !(*n >= 0.0) || !n.is_finite()) {
            return bad("noise levels must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.noise_spread) {
            return bad("noise_spread must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.irrelevant_frac) {
            return bad("irrelevant_frac must be in [0, 1)");
        }
        if self.bayes_draws == 0 {
            return bad("bayes_draws must be positive");
        }
        Ok(())
    }
}

const LABEL_RANGE: [f64; 2] = [-3.0, 3.0];
const BASIS: usize = 5;
const VIEWS: [&[usize]; 3] = [&[0, 1, 2, 3, 4], &[0, 1, 3], &[0, 2, 4]];

/// `basis(s)` with every non-constant term standardised under `s ~ U(-3, 3)`.
fn basis(s: f64) -> [f64; BASIS] {
    let sin6 = 6f64.sin();
    let mean_cos = 3f64.sin() / 3.0;
    let sd = [
        1.0,
        3f64.sqrt(),
        (81.0 / 5.0 - 9.0f64).sqrt(),
        (0.5 - sin6 / 12.0f64).sqrt(),
        (0.5 + sin6 / 12.0 - mean_cos * mean_cos).sqrt(),
    ];
    [
        1.0,
        s / sd[1],
        (s * s - 3.0) / sd[2],
        s.sin() / sd[3],
        (s.cos() - mean_cos) / sd[4],
    ]
}

/// Fixed linear map from a modality's basis view to its relevant dimensions.
#[derive(Debug, Clone)]
struct ModalityMap {
    dim: usize,
    relevant: usize,
    view: &'static [usize],
    /// `relevant x view.len()`, row-major.
    weights: Vec<f64>,
}

impl ModalityMap {
    fn new(dim: usize, irrelevant_frac: f64, view: &'static [usize], rng: &mut ChaCha8Rng) -> Self {
        let irrelevant = ((dim as f64) * irrelevant_frac).round() as usize;
        let relevant = dim.saturating_sub(irrelevant).max(1);
        let k = view.len();
        let scale = 1.0 / ((k - 1) as f64).sqrt();
        let weights = (0..relevant * k).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect();
        ModalityMap { dim, relevant, view, weights }
    }

    fn signal(&self, phi: &[f64; BASIS]) -> Vec<f64> {
        let k = self.view.len();
        (0..self.relevant)
            .map(|i| self.view.iter().enumerate().map(|(j, &b)| self.weights[i * k + j] * phi[b]).sum())
            .collect()
    }
}

/// One generated sample together with the latent quantities behind it.
#[derive(Debug, Clone)]
pub(crate) struct Draw {
    pub s: f64,
    /// Per-modality noise standard deviation.
    pub noise: [f64; 3],
    pub sample: Sample,
}

#[derive(Debug, Clone)]
pub(crate) struct Generator {
    cfg: SynthConfig,
    maps: [ModalityMap; 3],
}

impl Generator {
    pub(crate) fn new(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream(cfg.seed, 0);
        let dims = [cfg.d_t, cfg.d_v, cfg.d_a];
        let maps = [0, 1, 2].map(|m| ModalityMap::new(dims[m], cfg.irrelevant_frac, VIEWS[m], &mut rng));
        Ok(Generator { cfg: cfg.clone(), maps })
    }

    fn latent(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self.cfg.label_grid {
            LabelGrid::Continuous => rng.random_range(LABEL_RANGE[0]..=LABEL_RANGE[1]),
            LabelGrid::Levels7 => rng.random_range(-3i32..=3) as f64,
        }
    }

    fn noisy_row(&self, m: usize, signal: &[f64], std: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.maps[m].dim)
            .map(|i| signal.get(i).copied().unwrap_or(0.0) + std * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    pub(crate) fn draw(&self, id: String, rng: &mut ChaCha8Rng) -> Draw {
        let cfg = &self.cfg;
        let s = self.latent(rng);
        let phi = basis(s);
        let levels = [cfg.noise_t, cfg.noise_v, cfg.noise_a];
        let spread = cfg.noise_spread;
        let noise = levels.map(|l| {
            let u = if spread > 0.0 { rng.random_range(1.0 - spread..1.0 + spread) } else { 1.0 };
            l * u
        });
        let lengths = [cfg.t_v, cfg.t_a].map(|t| rng.random_range(t.div_ceil(2)..=t));
        let signals = [0, 1, 2].map(|m| self.maps[m].signal(&phi));
        let text = self.noisy_row(0, &signals[0], noise[0], rng);
        let visual = (0..lengths[0]).map(|_| self.noisy_row(1, &signals[1], noise[1], rng)).collect();
        let audio = (0..lengths[1]).map(|_| self.noisy_row(2, &signals[2], noise[2], rng)).collect();
        Draw {
            s,
            noise,
            sample: Sample {
                id,
                y: s,
                y_t: None,
                y_v: None,
                y_a: None,
                text,
                visual,
                audio,
                missing: Vec::new(),
            },
        }
    }

    /// Latent grid and its prior weights.
    pub(crate) fn grid(&self, points: usize) -> Vec<f64> {
        match self.cfg.label_grid {
            LabelGrid::Continuous => {
                let [lo, hi] = LABEL_RANGE;
                (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
            }
            LabelGrid::Levels7 => (-3..=3).map(f64::from).collect(),
        }
    }

    pub(crate) fn signals_on(&self, grid: &[f64]) -> Vec<[Vec<f64>; 3]> {
        grid.iter()
            .map(|&g| {
                let phi = basis(g);
                [0, 1, 2].map(|m| self.maps[m].signal(&phi))
            })
            .collect()
    }

    pub(crate) fn relevant(&self, m: usize) -> usize {
        self.maps[m].relevant
    }
}

/// Posterior median of `s` from per-modality sufficient statistics (the mean
/// of the relevant dimensions over time steps), with the noise scales known.
fn posterior_median(gen: &Generator, grid: &[f64], signals: &[[Vec<f64>; 3]], d: &Draw) -> f64 {
    let seqs: [Vec<Vec<f64>>; 3] = [vec![d.sample.text.clone()], d.sample.visual.clone(), d.sample.audio.clone()];
    let mut loglik = vec![0.0; grid.len()];
    for m in 0..3 {
        let r = gen.relevant(m);
        let len = seqs[m].len() as f64;
        let mean: Vec<f64> = (0..r).map(|i| seqs[m].iter().map(|row| row[i]).sum::<f64>() / len).collect();
        let var = d.noise[m] * d.noise[m] / len;
        for (g, ll) in loglik.iter_mut().enumerate() {
            let sq: f64 = mean.iter().zip(&signals[g][m]).map(|(x, mu)| (x - mu) * (x - mu)).sum();
            *ll -= sq / (2.0 * var);
        }
    }
    let max = loglik.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = loglik.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut acc = 0.0;
    for (g, wi) in w.iter().enumerate() {
        acc += wi;
        if acc >= 0.5 * total {
            return grid[g];
        }
    }
    grid[grid.len() - 1]
}

/// Monte Carlo estimate of the smallest achievable MAE under `cfg`, assuming
/// the generator's maps and each sample's noise scales are known.
pub fn bayes_floor_mae(cfg: &SynthConfig) -> Result<f64> {
    let gen = Generator::new(cfg)?;
    if cfg.noise_t == 0.0 || cfg.noise_v == 0.0 || cfg.noise_a == 0.0 {
        // one noiseless view identifies s exactly
        return Ok(0.0);
    }
    let grid = gen.grid(601);
    let signals = gen.signals_on(&grid);
    let mut rng = stream(cfg.seed, 99);
    let mut total = 0.0;
    for i in 0..cfg.bayes_draws {
        let d = gen.draw(i.to_string(), &mut rng);
        total += (d.s - posterior_median(&gen, &grid, &signals, &d)).abs();
    }
    Ok(total / cfg.bayes_draws as f64)
}

/// Train/validation/test datasets from one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub bayes_mae: f64,
}

/// Generates the three splits; identical configurations give identical data.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthSplits> {
    let gen = Generator::new(cfg)?;
    let bayes = bayes_floor_mae(cfg)?;
    let header = DatasetHeader {
        d_t: cfg.d_t,
        d_v: cfg.d_v,
        d_a: cfg.d_a,
        label_range: LABEL_RANGE,
        bayes_mae: Some(bayes),
    };
    let split = |name: &str, n: usize, stream_id: u64| {
        let mut rng = stream(cfg.seed, stream_id);
        Dataset {
            header: header.clone(),
            samples: (0..n).map(|i| gen.draw(format!("{name}-{i:05}"), &mut rng).sample).collect(),
        }
    };
    Ok(SynthSplits {
        train: split("train", cfg.n_train, 1),
        val: split("val", cfg.n_val, 2),
        test: split("test", cfg.n_test, 3),
        bayes_mae: bayes,
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a SynthConfig,
    bayes_mae: f64,
    label_range: [f64; 2],
    files: [(&'a str, usize); 3],
}

/// Writes `train.jsonl`, `val.jsonl`, `test.jsonl` and `manifest.json` into `dir`.
pub fn write_splits(cfg: &SynthConfig, splits: &SynthSplits, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_jsonl(&splits.train, dir.join("train.jsonl"))?;
    write_jsonl(&splits.val, dir.join("val.jsonl"))?;
    write_jsonl(&splits.test, dir.join("test.jsonl"))?;
    let manifest = Manifest {
        config: cfg,
        bayes_mae: splits.bayes_mae,
        label_range: LABEL_RANGE,
        files: [
            ("train.jsonl", splits.train.len()),
            ("val.jsonl", splits.val.len()),
            ("test.jsonl", splits.test.len()),
        ],
    };
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::to_jsonl_string;

    fn small() -> SynthConfig {
        SynthConfig { n_train: 30, n_val: 10, n_test: 10, bayes_draws: 500, ..SynthConfig::default() }
    }

    #[test]
    fn standardised_basis_moments() {
        let n = 200_000;
        let mut mean = [0.0; BASIS];
        let mut sq = [0.0; BASIS];
        for i in 0..n {
            let s = -3.0 + 6.0 * (i as f64 + 0.5) / n as f64;
            for (j, v) in basis(s).iter().enumerate() {
                mean[j] += v / n as f64;
                sq[j] += v * v / n as f64;
            }
        }
        for j in 1..BASIS {
            assert!(mean[j].abs() < 1e-6 && (sq[j] - 1.0).abs() < 1e-6, "term {j}: {} {}", mean[j], sq[j]);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(to_jsonl_string(&a.train).unwrap(), to_jsonl_string(&b.train).unwrap());
        assert_eq!(to_jsonl_string(&a.test).unwrap(), to_jsonl_string(&b.test).unwrap());
        let c = generate_synthetic(&SynthConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn shapes_and_labels() {
        let cfg = small();
        let s = generate_synthetic(&cfg).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (30, 10, 10));
        s.train.validate().unwrap();
        for smp in &s.train.samples {
            assert!((6..=12).contains(&smp.visual.len()) && (6..=12).contains(&smp.audio.len()));
        }
        let levels = generate_synthetic(&SynthConfig { label_grid: LabelGrid::Levels7, ..small() }).unwrap();
        assert!(levels.train.samples.iter().all(|x| x.y.fract() == 0.0 && x.y.abs() <= 3.0));
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SynthConfig { n_val: 0, ..small() },
            SynthConfig { d_a: 0, ..small() },
            SynthConfig { noise_v: -1.0, ..small() },
            SynthConfig { irrelevant_frac: 1.0, ..small() },
        ] {
            assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn noiseless_text_is_linearly_invertible() {
        let cfg = SynthConfig { noise_t: 0.0, noise_v: 0.0, noise_a: 0.0, n_train: 200, ..small() };
        let s = generate_synthetic(&cfg).unwrap();
        assert_eq!(s.bayes_mae, 0.0);
        // least squares of y on the relevant text dims recovers y exactly
        let r = Generator::new(&cfg).unwrap().relevant(0);
        let xs: Vec<Vec<f64>> = s.train.samples.iter().map(|x| x.text[..r].to_vec()).collect();
        let ys = s.train.labels();
        let mut ata = vec![vec![0.0; r]; r];
        let mut aty = vec![0.0; r];
        for (x, y) in xs.iter().zip(&ys) {
            for i in 0..r {
                aty[i] += x[i] * y;
                for j in 0..r {
                    ata[i][j] += x[i] * x[j];
                }
            }
        }
        for (i, row) in ata.iter_mut().enumerate() {
            row[i] += 1e-9;
        }
        let w = solve(ata, aty);
        let test_x: Vec<Vec<f64>> = s.test.samples.iter().map(|x| x.text[..r].to_vec()).collect();
        let mae = test_x
            .iter()
            .zip(s.test.labels())
            .map(|(x, y)| (x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() - y).abs())
            .sum::<f64>()
            / test_x.len() as f64;
        assert!(mae < 1e-4, "{mae}");
    }

    fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, p);
            b.swap(c, p);
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for c in (0..n).rev() {
            x[c] = (b[c] - (c + 1..n).map(|k| a[c][k] * x[k]).sum::<f64>()) / a[c][c];
        }
        x
    }

    /// Posterior mean from the full per-step likelihood, written independently
    /// of the sufficient-statistic path used by `bayes_floor_mae`.
    fn oracle_posterior_mean(gen: &Generator, grid: &[f64], signals: &[[Vec<f64>; 3]], d: &Draw) -> f64 {
        let mut loglik = vec![0.0; grid.len()];
        let rows: [Vec<&Vec<f64>>; 3] = [
            vec![&d.sample.text],
            d.sample.visual.iter().collect(),
            d.sample.audio.iter().collect(),
        ];
        for (g, ll) in loglik.iter_mut().enumerate() {
            for m in 0..3 {
                let r = gen.relevant(m);
                let inv = 1.0 / (2.0 * d.noise[m] * d.noise[m]);
                for row in &rows[m] {
                    for i in 0..r {
                        let e = row[i] - signals[g][m][i];
                        *ll -= e * e * inv;
                    }
                }
            }
        }
        let max = loglik.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut num, mut den) = (0.0, 0.0);
        for (g, l) in loglik.iter().enumerate() {
            let w = (l - max).exp();
            num += w * grid[g];
            den += w;
        }
        num / den
    }

    #[test]
    fn stored_floor_matches_monte_carlo_oracle() {
        let cfg = SynthConfig::default();
        let stored = bayes_floor_mae(&cfg).unwrap();
        let gen = Generator::new(&cfg).unwrap();
        let grid = gen.grid(241);
        let signals = gen.signals_on(&grid);
        let mut rng = stream(12345, 7);
        let n = 100_000;
        let mut total = 0.0;
        for i in 0..n {
            let d = gen.draw(i.to_string(), &mut rng);
            total += (d.s - oracle_posterior_mean(&gen, &grid, &signals, &d)).abs();
        }
        let oracle = total / n as f64;
        assert!((stored - oracle).abs() / oracle <= 0.05, "stored {stored} oracle {oracle}");
    }
}
