//! L2-regularised logistic regression.
//!
//! The solver minimises `0.5 |w|^2 + C * sum_i log(1 + exp(-y_i (w.x_i + b)))`
//! plus `0.5 b^2` when `penalize_bias` is set, using truncated Newton steps
//! (conjugate gradient on Hessian-vector products) and a backtracking line
//! search, so the objective never increases from one iteration to the next.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Dense row-major design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: (rows, cols),
                actual: (data.len(), 1),
            });
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::LengthMismatch {
                expected: cols,
                actual: bad.len(),
            });
        }
        FeatureMatrix::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(k) => Err(Error::NonFinite {
                row: k / self.cols,
                col: k % self.cols,
            }),
            None => Ok(()),
        }
    }

    /// `X v + b` for every row.
    fn margins(&self, w: &[f64], b: f64, out: &mut [f64]) {
        for (i, m) in out.iter_mut().enumerate() {
            *m = dot(self.row(i), w) + b;
        }
    }

    /// `X^T r` into `out`.
    fn transpose_mul(&self, r: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (i, &ri) in r.iter().enumerate() {
            if ri != 0.0 {
                for (o, x) in out.iter_mut().zip(self.row(i)) {
                    *o += ri * x;
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sign(label: bool) -> f64 {
    if label {
        1.0
    } else {
        -1.0
    }
}

/// `log(1 + exp(-z))` without overflow.
fn log_loss(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Inverse regularisation strength.
    pub c: f64,
    /// Stop once the gradient norm falls to this value.
    pub tolerance: f64,
    pub max_iter: usize,
    /// Include the intercept in the L2 penalty, as when the intercept is
    /// modelled as a constant feature.
    pub penalize_bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            c: 1.0,
            tolerance: 1e-6,
            max_iter: 100,
            penalize_bias: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    /// Column identity of each weight, so test vectors can be assembled in
    /// training order.
    pub feature_ids: Vec<String>,
}

/// Solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    /// Objective at the starting point and after every Newton iteration.
    pub objectives: Vec<f64>,
    pub gradient_norm: f64,
    pub converged: bool,
}

/// Regularised objective at `(w, b)` under `config.c` and
/// `config.penalize_bias`.
pub fn objective(x: &FeatureMatrix, labels: &[bool], w: &[f64], b: f64, config: &TrainConfig) -> f64 {
    let loss: f64 = (0..x.rows())
        .map(|i| log_loss(sign(labels[i]) * (dot(x.row(i), w) + b)))
        .sum();
    let bias_penalty = if config.penalize_bias { 0.5 * b * b } else { 0.0 };
    0.5 * dot(w, w) + bias_penalty + config.c * loss
}

/// Gradient of [`objective`]; the last entry is the bias component.
pub fn gradient(x: &FeatureMatrix, labels: &[bool], w: &[f64], b: f64, config: &TrainConfig) -> Vec<f64> {
    let c = config.c;
    let mut margins = vec![0.0; x.rows()];
    x.margins(w, b, &mut margins);
    let residual: Vec<f64> = margins
        .iter()
        .zip(labels)
        .map(|(&m, &l)| {
            let y = sign(l);
            -c * y * sigmoid(-y * m)
        })
        .collect();
    let mut g = vec![0.0; w.len() + 1];
    x.transpose_mul(&residual, &mut g[..w.len()]);
    for (gk, wk) in g.iter_mut().zip(w) {
        *gk += wk;
    }
    g[w.len()] = residual.iter().sum::<f64>() + if config.penalize_bias { b } else { 0.0 };
    g
}

fn validate(x: &FeatureMatrix, labels: &[bool]) -> Result<()> {
    if labels.len() != x.rows() {
        return Err(Error::LengthMismatch {
            expected: x.rows(),
            actual: labels.len(),
        });
    }
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(Error::SingleClass);
    }
    x.check_finite()
}

pub fn train(x: &FeatureMatrix, labels: &[bool], config: &TrainConfig) -> Result<LogisticModel> {
    train_from(x, labels, config, None).map(|(model, _)| model)
}

/// Trains starting from `init` (weights and bias of a previous fit on the same
/// columns), which speeds up sweeps over an increasing `C` grid.
pub fn train_from(
    x: &FeatureMatrix,
    labels: &[bool],
    config: &TrainConfig,
    init: Option<(&[f64], f64)>,
) -> Result<(LogisticModel, TrainTrace)> {
    validate(x, labels)?;
    if !(config.c > 0.0 && config.c.is_finite()) {
        return Err(Error::InvalidConfig(format!("C must be positive, got {}", config.c)));
    }
    let d = x.cols();
    let n = x.rows();
    let c = config.c;
    let (mut w, mut b) = match init {
        Some((w0, b0)) if w0.len() == d => (w0.to_vec(), b0),
        Some((w0, _)) => {
            return Err(Error::LengthMismatch {
                expected: d,
                actual: w0.len(),
            })
        }
        None => (vec![0.0; d], 0.0),
    };

    let mut margins = vec![0.0; n];
    let mut curvature = vec![0.0; n];
    let mut xv = vec![0.0; n];
    let mut hv = vec![0.0; d + 1];
    let mut f = objective(x, labels, &w, b, config);
    let mut trace = TrainTrace {
        objectives: vec![f],
        gradient_norm: f64::INFINITY,
        converged: false,
    };

    for _ in 0..config.max_iter {
        let g = gradient(x, labels, &w, b, config);
        let gnorm = dot(&g, &g).sqrt();
        trace.gradient_norm = gnorm;
        if gnorm <= config.tolerance {
            trace.converged = true;
            break;
        }
        x.margins(&w, b, &mut margins);
        for i in 0..n {
            let p = sigmoid(margins[i]);
            curvature[i] = c * p * (1.0 - p);
        }

        let bias_curvature = if config.penalize_bias { 1.0 } else { 1e-10 };
        // Hessian-vector product on the bias-augmented parameter vector.
        let mut hess = |v: &[f64], out: &mut [f64]| {
            x.margins(&v[..d], v[d], &mut xv);
            for i in 0..n {
                xv[i] *= curvature[i];
            }
            x.transpose_mul(&xv, &mut out[..d]);
            for k in 0..d {
                out[k] += v[k];
            }
            out[d] = xv.iter().sum::<f64>() + bias_curvature * v[d];
        };

        // Conjugate gradient on H s = -g, truncated at a forcing tolerance.
        let forcing = gnorm.sqrt().min(0.5) * gnorm;
        let mut s = vec![0.0; d + 1];
        let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut p = r.clone();
        let mut rr = dot(&r, &r);
        for _ in 0..(2 * (d + 1)).min(250) {
            if rr.sqrt() <= forcing {
                break;
            }
            hess(&p, &mut hv);
            let php = dot(&p, &hv);
            if php <= 1e-300 {
                break;
            }
            let alpha = rr / php;
            for k in 0..=d {
                s[k] += alpha * p[k];
                r[k] -= alpha * hv[k];
            }
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            for k in 0..=d {
                p[k] = r[k] + beta * p[k];
            }
        }
        let mut slope = dot(&g, &s);
        if !(slope < 0.0) {
            s = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }

        // Armijo backtracking.
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-20 {
            let w_try: Vec<f64> = w.iter().zip(&s).map(|(a, b)| a + step * b).collect();
            let b_try = b + step * s[d];
            let f_try = objective(x, labels, &w_try, b_try, config);
            if f_try <= f + 1e-4 * step * slope {
                accepted = Some((w_try, b_try, f_try));
                break;
            }
            step *= 0.5;
        }
        let Some((w_new, b_new, f_new)) = accepted else {
            break;
        };
        w = w_new;
        b = b_new;
        f = f_new;
        trace.objectives.push(f);
    }
    if !trace.converged {
        let g = gradient(x, labels, &w, b, config);
        trace.gradient_norm = dot(&g, &g).sqrt();
        trace.converged = trace.gradient_norm <= config.tolerance;
    }
    let model = LogisticModel {
        weights: w,
        bias: b,
        c,
        feature_ids: (0..d).map(|k| format!("f{k}")).collect(),
    };
    Ok((model, trace))
}

const HEADER: &str = "#trajsim-logistic v1";

impl LogisticModel {
    pub fn with_feature_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.weights.len() {
            return Err(Error::LengthMismatch {
                expected: self.weights.len(),
                actual: ids.len(),
            });
        }
        self.feature_ids = ids;
        Ok(self)
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::LengthMismatch {
                expected: self.weights.len(),
                actual: x.len(),
            });
        }
        Ok(dot(&self.weights, x) + self.bias)
    }

    /// Probability of the positive class.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        self.decision(x).map(sigmoid)
    }

    /// Line-oriented text form: header, `c`, `bias`, then one
    /// `feature <id> <weight>` line per weight.
    pub fn to_text(&self) -> String {
        let mut out = format!("{HEADER}\nc\t{:?}\nbias\t{:?}\n", self.c, self.bias);
        for (id, w) in self.feature_ids.iter().zip(&self.weights) {
            let _ = writeln!(out, "feature\t{id}\t{w:?}");
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, HEADER)) => {}
            _ => return Err(Error::parse(1, "missing model header")),
        }
        let number = |line: usize, s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(line, format!("bad number {s:?}")))
        };
        let mut field = |name: &str| -> Result<f64> {
            let (line, text) = lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("missing {name} line")))?;
            match text.split_once('\t') {
                Some((key, value)) if key == name => number(line, value),
                _ => Err(Error::parse(line, format!("expected {name}"))),
            }
        };
        let c = field("c")?;
        if c <= 0.0 {
            return Err(Error::parse(2, "C must be positive"));
        }
        let bias = field("bias")?;
        let mut weights = Vec::new();
        let mut feature_ids = Vec::new();
        for (line, text) in lines {
            if text.is_empty() {
                continue;
            }
            let mut parts = text.split('\t');
            match (parts.next(), parts.next(), parts.next(), parts.next()) {
                (Some("feature"), Some(id), Some(w), None) if !id.is_empty() => {
                    feature_ids.push(id.to_string());
                    weights.push(number(line, w)?);
                }
                _ => return Err(Error::parse(line, "expected feature line")),
            }
        }
        Ok(LogisticModel {
            weights,
            bias,
            c,
            feature_ids,
        })
    }
}
