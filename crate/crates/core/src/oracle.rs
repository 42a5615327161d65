//! Slow reference implementations used to check the production code paths.
//!
//! Everything here is written directly from the defining formulas with no
//! shared helpers from the rest of the crate, so agreement between the two is
//! meaningful.

use crate::alignment::Variant;
use crate::series::Series;

fn local_cost(q: &Series, r: &Series, i: usize, j: usize) -> f64 {
    q.row(i)
        .iter()
        .zip(r.row(j))
        .map(|(x, y)| (x - y).powi(2))
        .sum()
}

/// Minimum path cost over every monotone warping path satisfying the
/// variant's endpoint constraints, by exhaustive depth-first enumeration.
pub fn brute_force_distance(a: &Series, b: &Series, variant: Variant) -> f64 {
    let (free_start, free_end) = match variant {
        Variant::Global => (false, false),
        Variant::Prefix => (false, true),
        Variant::Suffix => (true, false),
        Variant::Subsequence => (true, true),
    };
    let oriented = |q: &Series, r: &Series| {
        let mut best = f64::INFINITY;
        let starts = if free_start { r.len() } else { 1 };
        for s in 0..starts {
            enumerate(q, r, 0, s, local_cost(q, r, 0, s), free_end, &mut best);
        }
        best
    };
    use std::cmp::Ordering::*;
    match a.len().cmp(&b.len()) {
        Less => oriented(a, b),
        Greater => oriented(b, a),
        Equal if variant == Variant::Global => oriented(a, b),
        Equal => oriented(a, b).min(oriented(b, a)),
    }
}

fn enumerate(
    q: &Series,
    r: &Series,
    i: usize,
    j: usize,
    acc: f64,
    free_end: bool,
    best: &mut f64,
) {
    if i == q.len() - 1 && (free_end || j == r.len() - 1) && acc < *best {
        *best = acc;
    }
    for (di, dj) in [(1, 0), (0, 1), (1, 1)] {
        let (ni, nj) = (i + di, j + dj);
        if ni < q.len() && nj < r.len() {
            enumerate(q, r, ni, nj, acc + local_cost(q, r, ni, nj), free_end, best);
        }
    }
}

/// Area under the empirical ROC curve by the trapezoid rule over the
/// distinct score thresholds.
pub fn trapezoid_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut points = vec![(0.0, 0.0)];
    for t in thresholds {
        let tp = scores
            .iter()
            .zip(labels)
            .filter(|(&s, &l)| l && s >= t)
            .count() as f64;
        let fp = scores
            .iter()
            .zip(labels)
            .filter(|(&s, &l)| !l && s >= t)
            .count() as f64;
        points.push((fp / neg, tp / pos));
    }
    points
        .windows(2)
        .map(|p| (p[1].0 - p[0].0) * (p[1].1 + p[0].1) / 2.0)
        .sum()
}

/// AUROCs and their covariance matrix from the structural components,
/// computed with the O(m n) pairwise kernel.
pub fn delong_covariance(scores: &[Vec<f64>], labels: &[bool]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let psi = |x: f64, y: f64| {
        if x > y {
            1.0
        } else if x == y {
            0.5
        } else {
            0.0
        }
    };
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    let (m, n) = (pos.len() as f64, neg.len() as f64);
    let k = scores.len();
    let mut v10 = vec![vec![0.0; pos.len()]; k];
    let mut v01 = vec![vec![0.0; neg.len()]; k];
    let mut auc = vec![0.0; k];
    for r in 0..k {
        for (a, &i) in pos.iter().enumerate() {
            for (b, &j) in neg.iter().enumerate() {
                let p = psi(scores[r][i], scores[r][j]);
                v10[r][a] += p / n;
                v01[r][b] += p / m;
                auc[r] += p / (m * n);
            }
        }
    }
    let mut cov = vec![vec![0.0; k]; k];
    for r in 0..k {
        for s in 0..k {
            let s10: f64 = (0..pos.len())
                .map(|a| (v10[r][a] - auc[r]) * (v10[s][a] - auc[s]))
                .sum::<f64>()
                / (m - 1.0);
            let s01: f64 = (0..neg.len())
                .map(|b| (v01[r][b] - auc[r]) * (v01[s][b] - auc[s]))
                .sum::<f64>()
                / (n - 1.0);
            cov[r][s] = s10 / m + s01 / n;
        }
    }
    (auc, cov)
}

/// Regularised logistic objective `0.5 |w|^2 + c * sum log(1 + exp(-y m))`,
/// plus `0.5 b^2` when the bias is penalised.
pub fn logistic_objective(x: &[Vec<f64>], y: &[bool], c: f64, penalize_bias: bool, w: &[f64], b: f64) -> f64 {
    let mut reg: f64 = w.iter().map(|v| v * v).sum::<f64>() / 2.0;
    if penalize_bias {
        reg += b * b / 2.0;
    }
    let loss: f64 = x
        .iter()
        .zip(y)
        .map(|(row, &label)| {
            let margin: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
            let z = if label { margin } else { -margin };
            if z > 0.0 {
                (-z).exp().ln_1p()
            } else {
                -z + z.exp().ln_1p()
            }
        })
        .sum();
    reg + c * loss
}

/// Plain gradient descent with step `1/L` until the gradient norm drops
/// below `tol`. Returns `(weights, bias, objective)`.
pub fn logistic_gradient_descent(
    x: &[Vec<f64>],
    y: &[bool],
    c: f64,
    penalize_bias: bool,
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, f64, f64) {
    let d = x[0].len();
    // Lipschitz bound from the Frobenius norm of the bias-augmented design.
    let frob: f64 = x
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>() + 1.0)
        .sum();
    let step = 1.0 / (1.0 + c * frob / 4.0);
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    for _ in 0..max_iter {
        let mut gw = w.clone();
        let mut gb = if penalize_bias { b } else { 0.0 };
        for (row, &label) in x.iter().zip(y) {
            let margin: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            let t = if label { 1.0 } else { -1.0 };
            // d/dm log(1 + exp(-t m)) = -t / (1 + exp(t m))
            let g = -t / (1.0 + (t * margin).exp());
            for k in 0..d {
                gw[k] += c * g * row[k];
            }
            gb += c * g;
        }
        let norm = (gw.iter().map(|v| v * v).sum::<f64>() + gb * gb).sqrt();
        if norm <= tol {
            break;
        }
        for k in 0..d {
            w[k] -= step * gw[k];
        }
        b -= step * gb;
    }
    let obj = logistic_objective(x, y, c, penalize_bias, &w, b);
    (w, b, obj)
}
