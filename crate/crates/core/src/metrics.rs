//! Binary classification metrics: confusion counts, best-F1 threshold sweep, ROC-AUC, AUPR.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores paired with binary labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Metric(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::Metric(format!("non-finite score {s}")));
        }
        Ok(ScoredSet { scores, labels })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, bool)>) -> Result<Self> {
        let (scores, labels) = pairs.into_iter().unzip();
        Self::new(scores, labels)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn n_pos(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn n_neg(&self) -> usize {
        self.len() - self.n_pos()
    }

    /// Pairs sorted by descending score.
    fn sorted_desc(&self) -> Vec<(f64, bool)> {
        let mut v: Vec<_> = self.scores.iter().copied().zip(self.labels.iter().copied()).collect();
        v.sort_by(|a, b| b.0.total_cmp(&a.0));
        v
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn precision(&self) -> Option<f64> {
        let d = self.tp + self.fp;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    /// Harmonic mean of precision and recall, `2tp / (2tp + fp + fn)`; 0 when `tp = 0`.
    pub fn f1(&self) -> f64 {
        if self.tp == 0 {
            return 0.0;
        }
        (2 * self.tp) as f64 / (2 * self.tp + self.fp + self.fn_) as f64
    }
}

/// A sample is predicted positive iff its score is strictly greater than `threshold`.
pub fn confusion(set: &ScoredSet, threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for (&s, &l) in set.scores.iter().zip(&set.labels) {
        match (s > threshold, l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

pub const SWEEP_STEPS: usize = 20;

/// The sweep grid `0.00, 0.05, …, 0.95`.
pub fn sweep_thresholds() -> [f64; SWEEP_STEPS] {
    std::array::from_fn(|k| k as f64 / SWEEP_STEPS as f64)
}

/// Best F1 over the 20-point threshold grid, with the smallest threshold winning ties.
pub fn best_f1_sweep(set: &ScoredSet) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(Error::Metric("F1 sweep on an empty set".into()));
    }
    // ascending scores; counts above a threshold come from one partition point per step
    let mut pos: Vec<f64> = Vec::new();
    let mut neg: Vec<f64> = Vec::new();
    for (&s, &l) in set.scores.iter().zip(&set.labels) {
        if l {
            pos.push(s);
        } else {
            neg.push(s);
        }
    }
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let above = |v: &[f64], t: f64| v.len() - v.partition_point(|&s| s <= t);

    let mut best = (f64::NEG_INFINITY, 0.0);
    for t in sweep_thresholds() {
        let tp = above(&pos, t);
        let fp = above(&neg, t);
        let c = Confusion {
            tp,
            fp,
            tn: neg.len() - fp,
            fn_: pos.len() - tp,
        };
        let f1 = c.f1();
        if f1 > best.0 {
            best = (f1, t);
        }
    }
    Ok(best)
}

/// Area under the ROC curve, equal to the probability that a random positive outscores a
/// random negative (ties count one half).
pub fn roc_auc(set: &ScoredSet) -> Result<f64> {
    let (p, n) = (set.n_pos() as u128, set.n_neg() as u128);
    if p == 0 || n == 0 {
        return Err(Error::Metric("ROC-AUC needs both classes".into()));
    }
    let mut v: Vec<_> = set.scores.iter().copied().zip(set.labels.iter().copied()).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    // twice the concordance count, so ties stay integral
    let mut twice_concordant: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        let (mut gp, mut gn) = (0u128, 0u128);
        while j < v.len() && v[j].0 == v[i].0 {
            if v[j].1 {
                gp += 1;
            } else {
                gn += 1;
            }
            j += 1;
        }
        twice_concordant += 2 * gp * neg_below + gp * gn;
        neg_below += gn;
        i = j;
    }
    Ok(twice_concordant as f64 / (2 * p * n) as f64)
}

/// Average precision: Σ (Rₖ − Rₖ₋₁)·Pₖ over the distinct score levels in descending order.
pub fn aupr(set: &ScoredSet) -> Result<f64> {
    let total_pos = set.n_pos();
    if total_pos == 0 {
        return Err(Error::Metric("AUPR needs at least one positive".into()));
    }
    let v = set.sorted_desc();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j < v.len() && v[j].0 == v[i].0 {
            tp += v[j].1 as usize;
            seen += 1;
            j += 1;
        }
        let recall = tp as f64 / total_pos as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(ap)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub f1: f64,
    pub threshold: f64,
    pub auc: Option<f64>,
    pub aupr: Option<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// All metrics at once; AUC / AUPR are `None` when the class mix leaves them undefined.
pub fn evaluate(set: &ScoredSet) -> Result<MetricReport> {
    let (f1, threshold) = best_f1_sweep(set)?;
    Ok(MetricReport {
        f1,
        threshold,
        auc: roc_auc(set).ok(),
        aupr: aupr(set).ok(),
        n_pos: set.n_pos(),
        n_neg: set.n_neg(),
    })
}
