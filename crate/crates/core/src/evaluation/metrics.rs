//! ROC summaries, DeLong inference and paired classification comparisons.

use serde::Serialize;
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal};

use crate::error::{Error, Result};

fn class_counts(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            actual: scores.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite { row: i, col: 0 });
    }
    let m = labels.iter().filter(|&&l| l).count();
    Ok((m, labels.len() - m))
}

/// Placement values: for each positive, the fraction of negatives it
/// outscores; for each negative, the fraction of positives outscoring it.
/// Ties count one half.
fn placements(scores: &[f64], labels: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let mut pos: Vec<f64> = scores.iter().zip(labels).filter(|p| *p.1).map(|p| *p.0).collect();
    let mut neg: Vec<f64> = scores.iter().zip(labels).filter(|p| !*p.1).map(|p| *p.0).collect();
    let (m, n) = (pos.len() as f64, neg.len() as f64);
    let order: Vec<f64> = pos.clone();
    let neg_order: Vec<f64> = neg.clone();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    // Twice the number of sorted values below `x`, ties counting once.
    let twice_below = |sorted: &[f64], x: f64| {
        let lt = sorted.partition_point(|&v| v < x);
        let le = sorted.partition_point(|&v| v <= x);
        2 * lt + (le - lt)
    };
    let v10 = order.iter().map(|&x| twice_below(&neg, x) as f64 / (2.0 * n)).collect();
    let v01 = neg_order
        .iter()
        .map(|&y| (2 * pos.len() - twice_below(&pos, y)) as f64 / (2.0 * m))
        .collect();
    (v10, v01)
}

/// Mann-Whitney AUROC with ties counted one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (m, n) = class_counts(scores, labels)?;
    if m == 0 || n == 0 {
        return Err(Error::SingleClass);
    }
    let (v10, _) = placements(scores, labels);
    Ok(v10.iter().sum::<f64>() / m as f64)
}

/// Empirical ROC curve as `(false positive rate, true positive rate)` points,
/// from `(0, 0)` through one point per distinct score, highest first.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (m, n) = class_counts(scores, labels)?;
    if m == 0 || n == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_tie = order.get(k + 1).map_or(true, |&j| scores[j] != scores[i]);
        if last_of_tie {
            points.push((fp as f64 / n as f64, tp as f64 / m as f64));
        }
    }
    Ok(points)
}

/// Trapezoid-rule area under a piecewise-linear curve.
pub fn trapezoid_area(curve: &[(f64, f64)]) -> f64 {
    curve
        .windows(2)
        .map(|p| (p[1].0 - p[0].0) * (p[0].1 + p[1].1) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub auroc: f64,
    pub lower: f64,
    pub upper: f64,
    pub variance: f64,
}

struct Components {
    auc: f64,
    v10: Vec<f64>,
    v01: Vec<f64>,
}

fn components(scores: &[f64], labels: &[bool]) -> Result<Components> {
    let (m, n) = class_counts(scores, labels)?;
    if m < 2 || n < 2 {
        return Err(Error::TooFewExamples {
            needed: 2,
            positives: m,
            negatives: n,
        });
    }
    let (v10, v01) = placements(scores, labels);
    let auc = v10.iter().sum::<f64>() / m as f64;
    Ok(Components { auc, v10, v01 })
}

fn covariance(a: &Components, b: &Components) -> f64 {
    let (m, n) = (a.v10.len() as f64, a.v01.len() as f64);
    let s10: f64 = a
        .v10
        .iter()
        .zip(&b.v10)
        .map(|(x, y)| (x - a.auc) * (y - b.auc))
        .sum::<f64>()
        / (m - 1.0);
    let s01: f64 = a
        .v01
        .iter()
        .zip(&b.v01)
        .map(|(x, y)| (x - a.auc) * (y - b.auc))
        .sum::<f64>()
        / (n - 1.0);
    s10 / m + s01 / n
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal is valid")
}

/// AUROC with a DeLong confidence interval at `level`, clipped to [0, 1].
pub fn delong_ci(scores: &[f64], labels: &[bool], level: f64) -> Result<ConfidenceInterval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!("confidence level {level} outside (0, 1)")));
    }
    let c = components(scores, labels)?;
    let variance = covariance(&c, &c).max(0.0);
    let z = standard_normal().inverse_cdf(0.5 + level / 2.0);
    let half = z * variance.sqrt();
    Ok(ConfidenceInterval {
        auroc: c.auc,
        lower: (c.auc - half).max(0.0),
        upper: (c.auc + half).min(1.0),
        variance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZTest {
    pub auroc_a: f64,
    pub auroc_b: f64,
    pub z: f64,
    pub p: f64,
}

/// Two-sided z-test for the difference of two correlated AUROCs measured on
/// the same instances.
pub fn delong_ztest(scores_a: &[f64], scores_b: &[f64], labels: &[bool]) -> Result<ZTest> {
    let a = components(scores_a, labels)?;
    let b = components(scores_b, labels)?;
    let var = covariance(&a, &a) + covariance(&b, &b) - 2.0 * covariance(&a, &b);
    let diff = a.auc - b.auc;
    let (z, p) = if var <= 1e-15 {
        if diff == 0.0 {
            (0.0, 1.0)
        } else {
            let z = f64::INFINITY.copysign(diff);
            (z, 0.0)
        }
    } else {
        let z = diff / var.sqrt();
        (z, 2.0 * standard_normal().cdf(-z.abs()))
    };
    Ok(ZTest {
        auroc_a: a.auc,
        auroc_b: b.auc,
        z,
        p,
    })
}

/// Agreement of two classifiers at a probability cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Contingency {
    pub both_correct: usize,
    pub a_only: usize,
    pub b_only: usize,
    pub both_wrong: usize,
    /// Positive instances classified correctly by `a` only.
    pub positives_a_only: usize,
    pub positives_b_only: usize,
}

impl Contingency {
    pub fn total(&self) -> usize {
        self.both_correct + self.a_only + self.b_only + self.both_wrong
    }

    /// Exact two-sided McNemar p-value on the discordant cells.
    pub fn mcnemar_p(&self) -> f64 {
        let discordant = (self.a_only + self.b_only) as u64;
        if discordant == 0 {
            return 1.0;
        }
        let binom = Binomial::new(0.5, discordant).expect("valid binomial");
        let k = self.a_only.min(self.b_only) as u64;
        (2.0 * binom.cdf(k)).min(1.0)
    }
}

/// Predictions at or above `cutoff` are positive.
pub fn contingency(scores_a: &[f64], scores_b: &[f64], labels: &[bool], cutoff: f64) -> Result<Contingency> {
    class_counts(scores_a, labels)?;
    class_counts(scores_b, labels)?;
    let mut t = Contingency {
        both_correct: 0,
        a_only: 0,
        b_only: 0,
        both_wrong: 0,
        positives_a_only: 0,
        positives_b_only: 0,
    };
    for ((&a, &b), &l) in scores_a.iter().zip(scores_b).zip(labels) {
        let ok_a = (a >= cutoff) == l;
        let ok_b = (b >= cutoff) == l;
        match (ok_a, ok_b) {
            (true, true) => t.both_correct += 1,
            (true, false) => {
                t.a_only += 1;
                t.positives_a_only += usize::from(l);
            }
            (false, true) => {
                t.b_only += 1;
                t.positives_b_only += usize::from(l);
            }
            (false, false) => t.both_wrong += 1,
        }
    }
    Ok(t)
}

/// Indices ranked by `|a - b|` descending; equal gaps keep input order.
/// Returns at most `k` entries.
pub fn top_differences(probs_a: &[f64], probs_b: &[f64], k: usize) -> Result<Vec<usize>> {
    if probs_a.len() != probs_b.len() {
        return Err(Error::LengthMismatch {
            expected: probs_a.len(),
            actual: probs_b.len(),
        });
    }
    let gap = |i: usize| (probs_a[i] - probs_b[i]).abs();
    let mut order: Vec<usize> = (0..probs_a.len()).collect();
    order.sort_by(|&i, &j| gap(j).total_cmp(&gap(i)));
    order.truncate(k);
    Ok(order)
}
