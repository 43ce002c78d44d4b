//! Binary classification metrics: support-weighted precision/recall/F1,
//! ROC-AUC, misclassification rates, multi-seed aggregation and the
//! cross-domain recovery ratio.

use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn from_predictions(labels: &[usize], predictions: &[usize]) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(Error::Shape {
                op: "confusion_matrix",
                message: alloc::format!("{} labels vs {} predictions", labels.len(), predictions.len()),
            });
        }
        let mut cm = Self::default();
        for (&y, &p) in labels.iter().zip(predictions) {
            if y > 1 || p > 1 {
                return Err(Error::Config(alloc::format!(
                    "class ids must be 0 or 1, got ({y}, {p})"
                )));
            }
            cm.counts[y][p] += 1;
        }
        Ok(cm)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn errors(&self) -> u64 {
        self.counts[0][1] + self.counts[1][0]
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedPrf {
    pub precision: f64,
    pub recall: f64,
    pub weighted_f1: f64,
    pub per_class_f1: [f64; 2],
    pub confusion: ConfusionMatrix,
}

/// Per-class precision, recall and F1 (0/0 := 0), averaged with weights equal
/// to each class's share of the true labels.
pub fn weighted_prf(labels: &[usize], predictions: &[usize]) -> Result<WeightedPrf> {
    if labels.is_empty() {
        return Err(Error::Empty("weighted_prf"));
    }
    let cm = ConfusionMatrix::from_predictions(labels, predictions)?;
    let n = cm.total() as f64;
    let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
    let mut per_class_f1 = [0.0; 2];
    for (c, slot) in per_class_f1.iter_mut().enumerate() {
        let tp = cm.counts[c][c];
        let predicted = cm.counts[0][c] + cm.counts[1][c];
        let support = cm.support(c);
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        *slot = f1;
        let w = support as f64 / n;
        p += w * precision;
        r += w * recall;
        f += w * f1;
    }
    Ok(WeightedPrf {
        precision: p,
        recall: r,
        weighted_f1: f,
        per_class_f1,
        confusion: cm,
    })
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn roc_auc(labels: &[usize], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::Shape {
            op: "roc_auc",
            message: alloc::format!("{} labels vs {} scores", labels.len(), scores.len()),
        });
    }
    let mut pairs: Vec<(f64, usize)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedAuc);
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Rank-sum form of the Mann–Whitney statistic with midranks for ties.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j + 1 < pairs.len() && pairs[j + 1].0 == pairs[i].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * pairs[i..=j].iter().filter(|p| p.1 == 1).count() as f64;
        i = j + 1;
    }
    let (pos, neg) = (positives as f64, negatives as f64);
    Ok((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MisclassificationRates {
    /// `None` when the class has no samples.
    pub class0: Option<f64>,
    pub class1: Option<f64>,
    pub combined: f64,
}

pub fn misclassification_rates(cm: &ConfusionMatrix) -> MisclassificationRates {
    let rate = |c: usize| {
        let support = cm.support(c);
        (support > 0).then(|| cm.counts[c][1 - c] as f64 / support as f64)
    };
    MisclassificationRates {
        class0: rate(0),
        class1: rate(1),
        combined: ratio(cm.errors(), cm.total()),
    }
}

/// Metrics of one evaluation, or means over seeds after [`aggregate_seeds`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub weighted_f1: f64,
    pub auc: Option<f64>,
    pub mr_class0: Option<f64>,
    pub mr_class1: Option<f64>,
    pub mr_combined: f64,
    /// Per-seed reports behind an aggregate.
    pub seeds: Vec<EvalReport>,
    /// Population standard deviation per metric, for aggregates.
    pub std: Option<MetricStd>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricStd {
    pub precision: f64,
    pub recall: f64,
    pub weighted_f1: f64,
    pub auc: Option<f64>,
    pub mr_class0: Option<f64>,
    pub mr_class1: Option<f64>,
    pub mr_combined: f64,
}

impl EvalReport {
    /// Report for one set of predictions. AUC is `None` when only one class
    /// is present.
    pub fn from_predictions(labels: &[usize], predicted: &[usize], scores: &[f64]) -> Result<Self> {
        let prf = weighted_prf(labels, predicted)?;
        let auc = match roc_auc(labels, scores) {
            Ok(a) => Some(a),
            Err(Error::UndefinedAuc) => None,
            Err(e) => return Err(e),
        };
        let mr = misclassification_rates(&prf.confusion);
        Ok(Self {
            precision: prf.precision,
            recall: prf.recall,
            weighted_f1: prf.weighted_f1,
            auc,
            mr_class0: mr.class0,
            mr_class1: mr.class1,
            mr_combined: mr.combined,
            seeds: Vec::new(),
            std: None,
        })
    }

    pub fn accuracy(&self) -> f64 {
        1.0 - self.mr_combined
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, Float::sqrt(var))
}

/// Mean and population standard deviation of every metric across seeds.
pub fn aggregate_seeds(reports: &[EvalReport]) -> Result<EvalReport> {
    if reports.len() < 2 {
        return Err(Error::SchemaMismatch(alloc::format!(
            "aggregation needs at least 2 reports, got {}",
            reports.len()
        )));
    }
    let optional = |name: &str, f: fn(&EvalReport) -> Option<f64>| -> Result<Option<(f64, f64)>> {
        let present = reports.iter().filter(|r| f(r).is_some()).count();
        match present {
            0 => Ok(None),
            p if p == reports.len() => Ok(Some(mean_std(reports.iter().map(move |r| f(r).unwrap())))),
            _ => Err(Error::SchemaMismatch(alloc::format!(
                "`{name}` missing from some reports"
            ))),
        }
    };
    let required = |f: fn(&EvalReport) -> f64| mean_std(reports.iter().map(f));
    let precision = required(|r| r.precision);
    let recall = required(|r| r.recall);
    let wf = required(|r| r.weighted_f1);
    let mr = required(|r| r.mr_combined);
    let auc = optional("auc", |r| r.auc)?;
    let mr0 = optional("mr_class0", |r| r.mr_class0)?;
    let mr1 = optional("mr_class1", |r| r.mr_class1)?;
    Ok(EvalReport {
        precision: precision.0,
        recall: recall.0,
        weighted_f1: wf.0,
        auc: auc.map(|a| a.0),
        mr_class0: mr0.map(|a| a.0),
        mr_class1: mr1.map(|a| a.0),
        mr_combined: mr.0,
        seeds: reports
            .iter()
            .map(|r| EvalReport {
                seeds: Vec::new(),
                std: None,
                ..r.clone()
            })
            .collect(),
        std: Some(MetricStd {
            precision: precision.1,
            recall: recall.1,
            weighted_f1: wf.1,
            auc: auc.map(|a| a.1),
            mr_class0: mr0.map(|a| a.1),
            mr_class1: mr1.map(|a| a.1),
            mr_combined: mr.1,
        }),
    })
}

/// Weighted-F1 scores of models trained on a source and evaluated on a
/// target. `in_domain` holds `F(T,T)` per target; `transfers` holds
/// `(source, target, F(S,T))`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransferScores {
    pub in_domain: Vec<(String, f64)>,
    pub transfers: Vec<(String, String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryCell {
    pub source: String,
    pub target: String,
    pub f1: f64,
    /// `F(S,T) / F(T,T)`.
    pub ratio: f64,
    /// `ratio` as a percentage rounded to one decimal.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecoveryReport {
    /// In-domain cells (ratio exactly 1) followed by the transfer cells.
    pub cells: Vec<RecoveryCell>,
}

impl RecoveryReport {
    pub fn get(&self, source: &str, target: &str) -> Option<&RecoveryCell> {
        self.cells.iter().find(|c| c.source == source && c.target == target)
    }
}

fn round1(x: f64) -> f64 {
    Float::round(x * 10.0) / 10.0
}

pub fn recovery_ratio(scores: &TransferScores) -> Result<RecoveryReport> {
    let baseline = |target: &str| -> Result<f64> {
        let f = scores
            .in_domain
            .iter()
            .find(|(t, _)| t == target)
            .map(|(_, f)| *f)
            .ok_or_else(|| Error::ZeroDiagonal(target.into()))?;
        if f > 0.0 {
            Ok(f)
        } else {
            Err(Error::ZeroDiagonal(target.into()))
        }
    };
    let mut cells = Vec::new();
    for (t, f) in &scores.in_domain {
        baseline(t)?;
        cells.push(RecoveryCell {
            source: t.clone(),
            target: t.clone(),
            f1: *f,
            ratio: 1.0,
            percent: 100.0,
        });
    }
    for (s, t, f) in &scores.transfers {
        let ratio = if s == t { 1.0 } else { f / baseline(t)? };
        cells.push(RecoveryCell {
            source: s.clone(),
            target: t.clone(),
            f1: *f,
            ratio,
            percent: round1(100.0 * ratio),
        });
    }
    Ok(RecoveryReport { cells })
}
