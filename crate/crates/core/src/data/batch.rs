use rand::seq::SliceRandom;

use super::{Dataset, Modality};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Model-ready view of a group of samples. Sequences are padded with zeros to
/// the longest sample in the batch and stored step-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Positions of the samples in the source dataset.
    pub indices: Vec<usize>,
    pub y: Vec<f64>,
    /// `[B, d_t]`
    pub text: Tensor,
    /// One `[B, d_v]` tensor per padded step.
    pub visual: Vec<Tensor>,
    pub visual_len: Vec<usize>,
    /// One `[B, d_a]` tensor per padded step.
    pub audio: Vec<Tensor>,
    pub audio_len: Vec<usize>,
    /// `present[m][b]`: modality `m` (text, visual, audio order) available for sample `b`.
    pub present: [Vec<bool>; 3],
}

impl Batch {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn all_present(&self) -> bool {
        self.present.iter().all(|p| p.iter().all(|&x| x))
    }
}

fn pad_steps(seqs: &[&Vec<Vec<f64>>], dim: usize) -> Vec<Tensor> {
    let b = seqs.len();
    let t_max = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
    (0..t_max)
        .map(|t| {
            let mut step = Tensor::zeros(&[b, dim]);
            for (i, seq) in seqs.iter().enumerate() {
                if let Some(row) = seq.get(t) {
                    step.data_mut()[i * dim..(i + 1) * dim].copy_from_slice(row);
                }
            }
            step
        })
        .collect()
}

/// Builds one batch from the given dataset positions.
pub fn make_batch(ds: &Dataset, indices: &[usize]) -> Result<Batch> {
    if indices.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let samples: Vec<_> = indices.iter().map(|&i| &ds.samples[i]).collect();
    let [d_t, d_v, d_a] = ds.header.dims();
    let mut text = Tensor::zeros(&[samples.len(), d_t]);
    for (i, s) in samples.iter().enumerate() {
        if s.text.len() != d_t {
            return Err(Error::Dimension { what: format!("text of sample {}", s.id), expected: d_t, got: s.text.len() });
        }
        text.data_mut()[i * d_t..(i + 1) * d_t].copy_from_slice(&s.text);
    }
    let visual: Vec<_> = samples.iter().map(|s| &s.visual).collect();
    let audio: Vec<_> = samples.iter().map(|s| &s.audio).collect();
    if let Some(s) = samples.iter().find(|s| s.visual.is_empty() || s.audio.is_empty()) {
        return Err(Error::ZeroLength(s.id.clone()));
    }
    Ok(Batch {
        indices: indices.to_vec(),
        y: samples.iter().map(|s| s.y).collect(),
        text,
        visual: pad_steps(&visual, d_v),
        visual_len: samples.iter().map(|s| s.visual.len()).collect(),
        audio: pad_steps(&audio, d_a),
        audio_len: samples.iter().map(|s| s.audio.len()).collect(),
        present: Modality::ALL.map(|m| samples.iter().map(|s| s.is_present(m)).collect()),
    })
}

/// Splits the dataset into batches of `batch_size`, keeping the final partial
/// batch. With a seed the order is shuffled first.
pub fn batch(ds: &Dataset, batch_size: usize, shuffle_seed: Option<u64>) -> Result<Vec<Batch>> {
    if batch_size < 1 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut seeded(seed));
    }
    order.chunks(batch_size).map(|c| make_batch(ds, c)).collect()
}
