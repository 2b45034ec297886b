use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{EptError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Map,
    Top1,
}

impl FromStr for Metric {
    type Err = EptError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "map" => Ok(Metric::Map),
            "top1" => Ok(Metric::Top1),
            other => Err(EptError::Config(format!("unknown metric `{other}`"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Map => "map",
            Metric::Top1 => "top1",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: Metric,
    /// Per-class AP (mAP) or per-class recall (top-1); `None` when excluded.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
    /// Classes left out of the mean because they have no positives.
    pub excluded: Vec<usize>,
    /// `confusion[truth][predicted]`; empty for mAP.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    /// Line-oriented `key=value` rendering.
    pub fn to_key_values(&self) -> String {
        let mut out = format!("metric={}\nmean={}\n", self.metric, self.mean);
        for (c, v) in self.per_class.iter().enumerate() {
            match v {
                Some(v) => out.push_str(&format!("class.{c}={v}\n")),
                None => out.push_str(&format!("class.{c}=excluded\n")),
            }
        }
        let excluded: Vec<String> = self.excluded.iter().map(ToString::to_string).collect();
        out.push_str(&format!("excluded={}\n", excluded.join(",")));
        for (t, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(ToString::to_string).collect();
            out.push_str(&format!("confusion.{t}={}\n", cells.join(",")));
        }
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.metric {
            Metric::Map => "mean average precision",
            Metric::Top1 => "top-1 accuracy",
        };
        writeln!(f, "{name}: {:.4}", self.mean)?;
        for (c, v) in self.per_class.iter().enumerate() {
            match v {
                Some(v) => writeln!(f, "  class {c:>3}: {v:.4}")?,
                None => writeln!(f, "  class {c:>3}: excluded (no positives)")?,
            }
        }
        Ok(())
    }
}

/// AP of one ranking: mean precision at the rank of each positive.
/// Ties keep the original order.
pub fn average_precision(scores: &[f64], positives: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut hits, mut acc) = (0usize, 0.0);
    for (rank, &i) in order.iter().enumerate() {
        if positives[i] {
            hits += 1;
            acc += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| acc / hits as f64)
}

/// `scores[c][v]` and `positives[c][v]` for class c and video v.
pub fn mean_average_precision(scores: &[Vec<f64>], positives: &[Vec<bool>]) -> Result<EvalReport> {
    if scores.len() != positives.len() {
        return Err(EptError::SizeMismatch {
            expected: scores.len(),
            found: positives.len(),
        });
    }
    let mut per_class = Vec::with_capacity(scores.len());
    let mut excluded = Vec::new();
    for (c, (s, p)) in scores.iter().zip(positives).enumerate() {
        if s.len() != p.len() {
            return Err(EptError::SizeMismatch {
                expected: s.len(),
                found: p.len(),
            });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(EptError::validation(format!("class {c} has non-finite scores")));
        }
        let ap = average_precision(s, p);
        if ap.is_none() {
            log::warn!("class {c} has no positives; excluded from mAP");
            excluded.push(c);
        }
        per_class.push(ap);
    }
    let kept: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = if kept.is_empty() { 0.0 } else { kept.iter().sum::<f64>() / kept.len() as f64 };
    Ok(EvalReport {
        metric: Metric::Map,
        per_class,
        mean,
        excluded,
        confusion: Vec::new(),
    })
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(0, |best, (i, x)| if *x > v[best] { i } else { best })
}

/// `predictions[v]` holds per-class scores or probabilities for video v.
pub fn top1_accuracy(predictions: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<EvalReport> {
    if predictions.len() != labels.len() {
        return Err(EptError::SizeMismatch {
            expected: predictions.len(),
            found: labels.len(),
        });
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    let mut correct = 0usize;
    for (p, &l) in predictions.iter().zip(labels) {
        if p.len() != num_classes {
            return Err(EptError::DimensionMismatch {
                expected: num_classes,
                found: p.len(),
            });
        }
        if l >= num_classes {
            return Err(EptError::Range(format!("label {l} outside 0..{num_classes}")));
        }
        let guess = argmax(p);
        confusion[l][guess] += 1;
        correct += usize::from(guess == l);
    }
    let per_class = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let total: usize = row.iter().sum();
            (total > 0).then(|| row[c] as f64 / total as f64)
        })
        .collect::<Vec<_>>();
    let excluded = per_class
        .iter()
        .enumerate()
        .filter_map(|(c, v)| v.is_none().then_some(c))
        .collect();
    let mean = if labels.is_empty() { 0.0 } else { correct as f64 / labels.len() as f64 };
    Ok(EvalReport {
        metric: Metric::Top1,
        per_class,
        mean,
        excluded,
        confusion,
    })
}
