use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_lengths(preds: &[f64], labels: &[f64]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::LengthMismatch { left: preds.len(), right: labels.len() });
    }
    if preds.is_empty() {
        return Err(Error::Empty("metrics"));
    }
    Ok(())
}

pub fn mae(preds: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(preds, labels)?;
    Ok(preds.iter().zip(labels).map(|(p, y)| (p - y).abs()).sum::<f64>() / preds.len() as f64)
}

/// Pearson correlation. Returns `(0.0, true)` when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<(f64, bool)> {
    check_lengths(a, b)?;
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok((0.0, true));
    }
    Ok(((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0), false))
}

/// Ranks starting at 1, with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    Ok(pearson(&average_ranks(a), &average_ranks(b))?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mae: f64,
    pub corr: f64,
    /// Set when the correlation was undefined because of constant inputs.
    pub corr_degenerate: bool,
}

pub fn regression_metrics(preds: &[f64], labels: &[f64]) -> Result<RegressionMetrics> {
    let (corr, corr_degenerate) = pearson(preds, labels)?;
    Ok(RegressionMetrics { mae: mae(preds, labels)?, corr, corr_degenerate })
}

/// Interval schemes for turning scores into classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetricScheme {
    #[serde(rename = "mosi-acc7")]
    MosiAcc7,
    #[serde(rename = "mosi-acc2-nonneg")]
    MosiAcc2NonNeg,
    #[serde(rename = "mosi-acc2-pos")]
    MosiAcc2Pos,
    #[serde(rename = "sims-acc2")]
    SimsAcc2,
    #[serde(rename = "sims-acc3")]
    SimsAcc3,
    #[serde(rename = "sims-acc5")]
    SimsAcc5,
}

const SIMS2: &[f64] = &[-1.01, 0.0, 1.01];
const SIMS3: &[f64] = &[-1.01, -0.1, 0.1, 1.01];
const SIMS5: &[f64] = &[-1.01, -0.7, -0.1, 0.1, 0.7, 1.01];

impl MetricScheme {
    pub const ALL: [MetricScheme; 6] = [
        MetricScheme::MosiAcc7,
        MetricScheme::MosiAcc2NonNeg,
        MetricScheme::MosiAcc2Pos,
        MetricScheme::SimsAcc2,
        MetricScheme::SimsAcc3,
        MetricScheme::SimsAcc5,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricScheme::MosiAcc7 => "mosi-acc7",
            MetricScheme::MosiAcc2NonNeg => "mosi-acc2-nonneg",
            MetricScheme::MosiAcc2Pos => "mosi-acc2-pos",
            MetricScheme::SimsAcc2 => "sims-acc2",
            MetricScheme::SimsAcc3 => "sims-acc3",
            MetricScheme::SimsAcc5 => "sims-acc5",
        }
    }

    /// Label range the scheme is defined on.
    pub fn range(self) -> (f64, f64) {
        match self {
            MetricScheme::MosiAcc7 | MetricScheme::MosiAcc2NonNeg | MetricScheme::MosiAcc2Pos => (-3.0, 3.0),
            _ => (-1.0, 1.0),
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            MetricScheme::MosiAcc7 => 7,
            MetricScheme::SimsAcc3 => 3,
            MetricScheme::SimsAcc5 => 5,
            _ => 2,
        }
    }

    pub fn is_binary(self) -> bool {
        self.num_classes() == 2
    }

    /// Schemes reported by default for data with the given label range.
    pub fn defaults_for(label_range: [f64; 2]) -> Vec<MetricScheme> {
        if label_range[1] <= 1.0 {
            vec![MetricScheme::SimsAcc2, MetricScheme::SimsAcc3, MetricScheme::SimsAcc5]
        } else {
            vec![MetricScheme::MosiAcc2NonNeg, MetricScheme::MosiAcc2Pos, MetricScheme::MosiAcc7]
        }
    }

    fn interval(x: f64, edges: &[f64]) -> usize {
        // (lo, hi] intervals; values are clamped into the outer edges first
        let x = x.clamp(edges[0] + f64::EPSILON, edges[edges.len() - 1]);
        edges[1..].iter().position(|&hi| x <= hi).unwrap_or(edges.len() - 2)
    }

    /// Class of a score, or `None` when the scheme leaves the value out
    /// (zero under `mosi-acc2-pos`).
    pub fn class_of(self, x: f64) -> Option<usize> {
        match self {
            MetricScheme::MosiAcc7 => Some(((x + 0.5).floor().clamp(-3.0, 3.0) as i64 + 3) as usize),
            MetricScheme::MosiAcc2NonNeg => Some(usize::from(x >= 0.0)),
            MetricScheme::MosiAcc2Pos => (x != 0.0).then_some(usize::from(x > 0.0)),
            MetricScheme::SimsAcc2 => Some(Self::interval(x, SIMS2)),
            MetricScheme::SimsAcc3 => Some(Self::interval(x, SIMS3)),
            MetricScheme::SimsAcc5 => Some(Self::interval(x, SIMS5)),
        }
    }
}

impl std::str::FromStr for MetricScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricScheme::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown metric scheme '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub scheme: MetricScheme,
    pub accuracy: f64,
    /// F1 of the positive class, for two-class schemes.
    pub f1: Option<f64>,
    /// Samples that took part after exclusions.
    pub count: usize,
}

pub fn classification_metrics(preds: &[f64], labels: &[f64], scheme: MetricScheme) -> Result<ClassificationMetrics> {
    check_lengths(preds, labels)?;
    let (lo, hi) = scheme.range();
    if let Some(&y) = labels.iter().find(|&&y| !(lo..=hi).contains(&y)) {
        return Err(Error::LabelOutOfRange { value: y, lo, hi });
    }
    let (mut correct, mut count) = (0usize, 0usize);
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &y) in preds.iter().zip(labels) {
        let Some(cy) = scheme.class_of(y) else { continue };
        // a prediction that the scheme would exclude counts as the negative class
        let cp = scheme.class_of(p).unwrap_or(0);
        count += 1;
        correct += usize::from(cp == cy);
        match (cp == 1, cy == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    if count == 0 {
        return Err(Error::Empty("classification_metrics after exclusions"));
    }
    let f1 = scheme.is_binary().then(|| {
        let denom = 2 * tp + fp + fneg;
        if denom == 0 {
            1.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    });
    Ok(ClassificationMetrics { scheme, accuracy: correct as f64 / count as f64, f1, count })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regression_examples() {
        let y = [0.5, -1.0, 2.0];
        let r = regression_metrics(&y, &y).unwrap();
        assert_eq!(r.mae, 0.0);
        assert!((r.corr - 1.0).abs() < 1e-15);
        let r = regression_metrics(&[0.0, 1.0], &[1.0, 0.0]).unwrap();
        assert_eq!(r.mae, 1.0);
        assert!((r.corr + 1.0).abs() < 1e-15);
        let r = regression_metrics(&[2.0; 3], &y).unwrap();
        assert_eq!((r.corr, r.corr_degenerate), (0.0, true));
        assert!(regression_metrics(&[], &[]).is_err());
        assert!(regression_metrics(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn acc7_edge_table() {
        let table = [
            (-3.4, 0),
            (-3.0, 0),
            (-2.5, 1),
            (-2.51, 0),
            (-0.5, 3),
            (-0.51, 2),
            (0.0, 3),
            (0.49, 3),
            (0.5, 4),
            (1.5, 5),
            (2.49, 5),
            (2.5, 6),
            (3.0, 6),
            (7.0, 6),
        ];
        for (x, c) in table {
            assert_eq!(MetricScheme::MosiAcc7.class_of(x), Some(c), "{x}");
        }
    }

    #[test]
    fn sims_edges() {
        let five = MetricScheme::SimsAcc5;
        let cases = [(-1.0, 0), (-0.7, 0), (-0.69, 1), (-0.1, 1), (0.0, 2), (0.1, 2), (0.11, 3), (0.7, 3), (0.71, 4), (1.0, 4)];
        for (x, c) in cases {
            assert_eq!(five.class_of(x), Some(c), "{x}");
        }
        assert_eq!(MetricScheme::SimsAcc3.class_of(-0.1), Some(0));
        assert_eq!(MetricScheme::SimsAcc3.class_of(0.1), Some(1));
        assert_eq!(MetricScheme::SimsAcc2.class_of(0.0), Some(0));
        assert_eq!(MetricScheme::SimsAcc2.class_of(-5.0), Some(0));
        assert_eq!(MetricScheme::SimsAcc2.class_of(5.0), Some(1));
    }

    #[test]
    fn exact_predictions_score_one_everywhere() {
        let mosi = [-3.0, -2.2, -0.4, 0.0, 0.3, 1.7, 3.0];
        let sims = [-1.0, -0.5, -0.1, 0.0, 0.05, 0.4, 0.9];
        for s in MetricScheme::ALL {
            let y: &[f64] = if s.range().1 > 1.0 { &mosi } else { &sims };
            let m = classification_metrics(y, y, s).unwrap();
            assert_eq!(m.accuracy, 1.0, "{}", s.name());
            if s.is_binary() {
                assert_eq!(m.f1, Some(1.0));
            }
        }
    }

    #[test]
    fn binary_conventions() {
        let labels = [-1.0, 0.0, 1.0, 2.0];
        let preds = [0.5, -0.5, 1.0, -1.0];
        let nonneg = classification_metrics(&preds, &labels, MetricScheme::MosiAcc2NonNeg).unwrap();
        // classes: labels [0,1,1,1], preds [1,0,1,0]
        assert_eq!((nonneg.accuracy, nonneg.count), (0.25, 4));
        assert!((nonneg.f1.unwrap() - 2.0 / (2.0 + 1.0 + 2.0)).abs() < 1e-15);
        let pos = classification_metrics(&preds, &labels, MetricScheme::MosiAcc2Pos).unwrap();
        // zero label dropped: labels [0,1,1], preds [1,1,0]
        assert_eq!(pos.count, 3);
        assert!((pos.accuracy - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(pos.f1, Some(0.5));
        let none_positive = classification_metrics(&[-1.0, -2.0], &[-1.0, -2.0], MetricScheme::MosiAcc2Pos).unwrap();
        assert_eq!(none_positive.f1, Some(1.0));
        assert!(classification_metrics(&[0.0], &[0.0], MetricScheme::MosiAcc2Pos).is_err());
    }

    #[test]
    fn labels_outside_range_are_errors() {
        assert!(matches!(
            classification_metrics(&[0.0], &[2.0], MetricScheme::SimsAcc3),
            Err(Error::LabelOutOfRange { .. })
        ));
        assert!(classification_metrics(&[9.0], &[1.0], MetricScheme::SimsAcc3).is_ok());
    }

    #[test]
    fn spearman_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 4.0, 9.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        // scipy.stats.spearmanr([1, 2, 2, 3], [1, 3, 2, 4]) = 0.9486832980505139
        assert!((spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.9486832980505138).abs() < 1e-12);
    }
}
