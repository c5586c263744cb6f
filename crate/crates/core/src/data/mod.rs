//! Dataset types, the JSONL format, synthetic generation, perturbations and batching.

mod batch;
mod jsonl;
mod perturb;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use batch::{batch, make_batch, Batch};
pub use jsonl::{load_jsonl, parse_jsonl, to_jsonl_string, write_jsonl};
pub use perturb::{drop_modality, perturb_noise};
pub use synth::{bayes_floor_mae, generate_synthetic, write_splits, LabelGrid, SynthConfig, SynthSplits};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Visual,
    Audio,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Visual, Modality::Audio];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Visual => "visual",
            Modality::Audio => "audio",
        }
    }

    /// Parses a compact set such as `"tva"` or a comma list such as `"text,audio"`.
    pub fn parse_set(s: &str) -> Result<Vec<Modality>> {
        let mut out = Vec::new();
        let parts: Vec<&str> = if s.contains(',') { s.split(',').collect() } else { vec![s] };
        for part in parts {
            let part = part.trim();
            let single = match part {
                "text" => Some(Modality::Text),
                "visual" => Some(Modality::Visual),
                "audio" => Some(Modality::Audio),
                _ => None,
            };
            match single {
                Some(m) => out.push(m),
                None => {
                    for c in part.chars() {
                        out.push(match c {
                            't' => Modality::Text,
                            'v' => Modality::Visual,
                            'a' => Modality::Audio,
                            _ => return Err(Error::Config(format!("unknown modality set '{s}'"))),
                        });
                    }
                }
            }
        }
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err(Error::Config("empty modality set".into()));
        }
        Ok(out)
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" | "t" => Ok(Modality::Text),
            "visual" | "v" => Ok(Modality::Visual),
            "audio" | "a" => Ok(Modality::Audio),
            other => Err(Error::Config(format!("unknown modality '{other}'"))),
        }
    }
}

/// First line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub d_t: usize,
    pub d_v: usize,
    pub d_a: usize,
    pub label_range: [f64; 2],
    /// Bayes-optimal test MAE, present on generated data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bayes_mae: Option<f64>,
}

impl DatasetHeader {
    pub fn dims(&self) -> [usize; 3] {
        [self.d_t, self.d_v, self.d_a]
    }
}

/// One utterance. Sequences are stored unpadded, one row per time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub id: String,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_a: Option<f64>,
    pub text: Vec<f64>,
    pub visual: Vec<Vec<f64>>,
    pub audio: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing: Vec<Modality>,
}

impl Sample {
    pub fn is_present(&self, m: Modality) -> bool {
        !self.missing.contains(&m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.y).collect()
    }

    /// Checks one sample against the header; `line` is used for error reporting.
    pub fn validate_sample(header: &DatasetHeader, s: &Sample, line: usize) -> Result<()> {
        let field = |field: &str, message: String| Error::Field {
            line,
            field: field.to_string(),
            message,
        };
        if s.text.len() != header.d_t {
            return Err(field("text", format!("expected {} values, got {}", header.d_t, s.text.len())));
        }
        for (name, seq, d) in [("visual", &s.visual, header.d_v), ("audio", &s.audio, header.d_a)] {
            if seq.is_empty() {
                return Err(field(name, "sequence needs at least one step".into()));
            }
            if let Some((t, row)) = seq.iter().enumerate().find(|(_, r)| r.len() != d) {
                return Err(field(name, format!("step {t}: expected {d} values, got {}", row.len())));
            }
        }
        let all = [Some(s.y), s.y_t, s.y_v, s.y_a];
        let vectors = s.text.iter().chain(s.visual.iter().flatten()).chain(s.audio.iter().flatten());
        if let Some(v) = all.iter().flatten().chain(vectors).find(|v| !v.is_finite()) {
            return Err(field("value", format!("non-finite value {v}")));
        }
        let [lo, hi] = header.label_range;
        for v in all.into_iter().flatten() {
            if v < lo || v > hi {
                return Err(Error::LabelOutOfRange { value: v, lo, hi });
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            Self::validate_sample(&self.header, s, i + 2)?;
        }
        Ok(())
    }
}
