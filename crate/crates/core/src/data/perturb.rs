use rand::Rng;
use rand_distr::StandardNormal;

use super::{Dataset, Modality};
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Adds `eta * tau` with `tau ~ N(0, 1)` drawn fresh for every feature element
/// of the selected modalities.
pub fn perturb_noise(ds: &Dataset, eta: f64, modalities: &[Modality], seed: u64) -> Result<Dataset> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::Domain {
            op: "perturb_noise",
            detail: format!("intensity {eta} must be finite and non-negative"),
        });
    }
    let mut out = ds.clone();
    if eta == 0.0 || modalities.is_empty() {
        return Ok(out);
    }
    let mut rng = seeded(seed);
    let mut add = |v: &mut f64| *v += eta * rng.sample::<f64, _>(StandardNormal);
    for s in &mut out.samples {
        for m in Modality::ALL {
            if !modalities.contains(&m) {
                continue;
            }
            match m {
                Modality::Text => s.text.iter_mut().for_each(&mut add),
                Modality::Visual => s.visual.iter_mut().flatten().for_each(&mut add),
                Modality::Audio => s.audio.iter_mut().flatten().for_each(&mut add),
            }
        }
    }
    Ok(out)
}

/// Marks `modality` missing on each sample independently with probability `rate`.
/// How a missing modality is handled is decided by the model's missing mode.
pub fn drop_modality(ds: &Dataset, modality: Modality, rate: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Domain {
            op: "drop_modality",
            detail: format!("rate {rate} not in [0, 1]"),
        });
    }
    let mut out = ds.clone();
    if rate == 0.0 {
        return Ok(out);
    }
    let mut rng = seeded(seed);
    for s in &mut out.samples {
        if rng.random_bool(rate) && !s.missing.contains(&modality) {
            s.missing.push(modality);
            s.missing.sort();
        }
    }
    Ok(out)
}
