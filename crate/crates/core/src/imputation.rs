//! Low-rank completion of partially observed matrices.
//!
//! The model minimises
//!
//! ```text
//! sum over observed (i, j) of (m_ij - u_i . w_j)^2  +  lambda (|U|^2 + |W|^2)
//! ```
//!
//! by alternating exact ridge solves for the row factors `U` and the column
//! factors `W`. Rows (or columns) sharing the same observation pattern share
//! one normal matrix, which is factored once per sweep. Block-missing data
//! produces only a handful of distinct patterns, so a sweep costs little more
//! than two passes over the observed entries.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::similarity::DistanceMatrix;

/// A dense matrix with an observed/missing flag per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    observed: Vec<bool>,
    row_ids: Vec<String>,
    col_ids: Vec<String>,
}

impl MaskedMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<Option<f64>>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: (rows, cols),
                actual: (entries.len(), 1),
            });
        }
        Ok(MaskedMatrix {
            rows,
            cols,
            observed: entries.iter().map(Option::is_some).collect(),
            values: entries.into_iter().map(|e| e.unwrap_or(0.0)).collect(),
            row_ids: (0..rows).map(|i| i.to_string()).collect(),
            col_ids: (0..cols).map(|j| j.to_string()).collect(),
        })
    }

    pub fn with_ids(mut self, row_ids: Vec<String>, col_ids: Vec<String>) -> Result<Self> {
        if row_ids.len() != self.rows || col_ids.len() != self.cols {
            return Err(Error::ShapeMismatch {
                expected: (self.rows, self.cols),
                actual: (row_ids.len(), col_ids.len()),
            });
        }
        self.row_ids = row_ids;
        self.col_ids = col_ids;
        Ok(self)
    }

    pub fn from_rows(rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidConfig("ragged rows".into()));
        }
        MaskedMatrix::new(rows.len(), cols, rows.iter().flatten().copied().collect())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let k = i * self.cols + j;
        self.observed[k].then_some(self.values[k])
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[i * self.cols + j]
    }

    pub fn has_missing(&self) -> bool {
        self.observed.iter().any(|&o| !o)
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    fn mask(&mut self, i: usize, j: usize) {
        self.observed[i * self.cols + j] = false;
    }
}

impl From<&DistanceMatrix> for MaskedMatrix {
    fn from(d: &DistanceMatrix) -> Self {
        let (rows, cols) = d.shape();
        let entries = (0..rows).flat_map(|i| d.row(i).collect::<Vec<_>>()).collect();
        MaskedMatrix::new(rows, cols, entries)
            .and_then(|m| {
                m.with_ids(
                    d.row_ids().iter().map(ToString::to_string).collect(),
                    d.col_ids().iter().map(ToString::to_string).collect(),
                )
            })
            .expect("distance matrix shape is consistent")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorConfig {
    pub rank: usize,
    pub lambda: f64,
    pub max_sweeps: usize,
    /// Stop once a sweep lowers the objective by less than this fraction.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for FactorConfig {
    fn default() -> Self {
        FactorConfig {
            rank: 5,
            lambda: 0.1,
            max_sweeps: 200,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub rank: usize,
    pub lambda: f64,
    rows: usize,
    cols: usize,
    row_factors: Vec<f64>,
    col_factors: Vec<f64>,
    /// Regularised objective after initialisation and after every sweep.
    pub loss_trace: Vec<f64>,
}

/// Indices sharing one observation pattern, with their observed entries
/// gathered into a dense `members x pattern` block.
struct Group {
    pattern: Vec<usize>,
    members: Vec<usize>,
    block: DMatrix<f64>,
}

/// Groups indices by identical observation pattern, in order of first
/// appearance. `value(i, j)` reads the entry between index `i` and partner
/// index `j`.
fn pattern_groups(
    n: usize,
    observed: impl Fn(usize) -> Vec<usize>,
    value: impl Fn(usize, usize) -> f64,
) -> Vec<Group> {
    let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut groups: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for i in 0..n {
        let pattern = observed(i);
        match index.get(&pattern) {
            Some(&g) => groups[g].1.push(i),
            None => {
                index.insert(pattern.clone(), groups.len());
                groups.push((pattern, vec![i]));
            }
        }
    }
    groups
        .into_iter()
        .map(|(pattern, members)| {
            let block = DMatrix::from_fn(members.len(), pattern.len(), |r, c| value(members[r], pattern[c]));
            Group { pattern, members, block }
        })
        .collect()
}

/// Factors of `indices` as a `len x rank` matrix, from row-major storage.
fn gather(factors: &[f64], indices: &[usize], rank: usize) -> DMatrix<f64> {
    DMatrix::from_fn(indices.len(), rank, |r, c| factors[indices[r] * rank + c])
}

/// Ridge update of every factor on one side against the partner factors.
fn update_side(groups: &[Group], partner: &[f64], target: &mut [f64], rank: usize, lambda: f64) {
    for g in groups {
        let w = gather(partner, &g.pattern, rank);
        let gram = w.tr_mul(&w) + DMatrix::<f64>::identity(rank, rank) * lambda;
        let chol = gram
            .cholesky()
            .expect("ridge normal matrix is positive definite");
        // Column k of the solution is the new factor of member k.
        let solved = chol.solve(&(&g.block * &w).transpose());
        for (k, &i) in g.members.iter().enumerate() {
            for a in 0..rank {
                target[i * rank + a] = solved[(a, k)];
            }
        }
    }
}

/// Squared error over the observed entries, one pattern group at a time.
fn observed_loss(groups: &[Group], own: &[f64], partner: &[f64], rank: usize) -> f64 {
    groups
        .iter()
        .map(|g| {
            let fit = gather(own, &g.members, rank) * gather(partner, &g.pattern, rank).transpose();
            (&g.block - fit).norm_squared()
        })
        .sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fits row and column factors to the observed entries of `matrix`.
pub fn fit_factorization(matrix: &MaskedMatrix, config: &FactorConfig) -> Result<FactorModel> {
    let (rows, cols) = matrix.shape();
    let rank = config.rank;
    let size = rows.min(cols);
    if rank == 0 || rank >= size {
        return Err(Error::RankTooLarge { rank, size });
    }
    if !(config.lambda > 0.0 && config.lambda.is_finite()) {
        return Err(Error::InvalidConfig("lambda must be positive".into()));
    }
    let value = |i: usize, j: usize| matrix.values[i * cols + j];
    let row_groups = pattern_groups(rows, |i| (0..cols).filter(|&j| matrix.is_observed(i, j)).collect(), value);
    let col_groups = pattern_groups(
        cols,
        |j| (0..rows).filter(|&i| matrix.is_observed(i, j)).collect(),
        |j, i| value(i, j),
    );
    for g in &row_groups {
        if g.pattern.is_empty() {
            return Err(Error::FullyMasked {
                axis: "row",
                id: matrix.row_ids[g.members[0]].clone(),
            });
        }
    }
    for g in &col_groups {
        if g.pattern.is_empty() {
            return Err(Error::FullyMasked {
                axis: "column",
                id: matrix.col_ids[g.members[0]].clone(),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut u: Vec<f64> = (0..rows * rank).map(|_| rng.gen_range(0.0..0.1)).collect();
    let mut w: Vec<f64> = (0..cols * rank).map(|_| rng.gen_range(0.0..0.1)).collect();
    let objective =
        |u: &[f64], w: &[f64]| observed_loss(&row_groups, u, w, rank) + config.lambda * (dot(u, u) + dot(w, w));

    let mut trace = vec![objective(&u, &w)];
    for _ in 0..config.max_sweeps {
        update_side(&row_groups, &w, &mut u, rank, config.lambda);
        update_side(&col_groups, &u, &mut w, rank, config.lambda);
        let loss = objective(&u, &w);
        let prev = *trace.last().expect("trace starts non-empty");
        trace.push(loss);
        if prev - loss <= config.tolerance * prev.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(FactorModel {
        rank,
        lambda: config.lambda,
        rows,
        cols,
        row_factors: u,
        col_factors: w,
        loss_trace: trace,
    })
}

impl FactorModel {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row_factor(&self, i: usize) -> &[f64] {
        &self.row_factors[i * self.rank..(i + 1) * self.rank]
    }

    pub fn col_factor(&self, j: usize) -> &[f64] {
        &self.col_factors[j * self.rank..(j + 1) * self.rank]
    }

    /// `u_i . w_j` clamped at zero.
    pub fn reconstruct(&self, i: usize, j: usize) -> f64 {
        dot(self.row_factor(i), self.col_factor(j)).max(0.0)
    }

    /// Observed entries verbatim, missing ones reconstructed. Row-major.
    pub fn complete(&self, matrix: &MaskedMatrix) -> Result<Vec<f64>> {
        if matrix.shape() != self.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                actual: matrix.shape(),
            });
        }
        let (rows, cols) = self.shape();
        Ok((0..rows)
            .flat_map(|i| (0..cols).map(move |j| (i, j)))
            .map(|(i, j)| matrix.get(i, j).unwrap_or_else(|| self.reconstruct(i, j)))
            .collect())
    }

    /// Completes a row that was not part of the fit: its factor is the ridge
    /// solution against the fitted column factors over its observed entries.
    pub fn project_row(&self, entries: &[Option<f64>]) -> Result<Vec<f64>> {
        if entries.len() != self.cols {
            return Err(Error::LengthMismatch {
                expected: self.cols,
                actual: entries.len(),
            });
        }
        let r = self.rank;
        let mut gram = DMatrix::<f64>::identity(r, r) * self.lambda;
        let mut rhs = DVector::zeros(r);
        for (j, e) in entries.iter().enumerate() {
            if let Some(m) = e {
                let w = self.col_factor(j);
                for a in 0..r {
                    rhs[a] += m * w[a];
                    for b in 0..r {
                        gram[(a, b)] += w[a] * w[b];
                    }
                }
            }
        }
        let u = gram
            .cholesky()
            .expect("ridge normal matrix is positive definite")
            .solve(&rhs);
        Ok(entries
            .iter()
            .enumerate()
            .map(|(j, e)| e.unwrap_or_else(|| dot(u.as_slice(), self.col_factor(j)).max(0.0)))
            .collect())
    }
}

/// Replaces masked entries of a distance matrix with reconstructions. Square
/// matrices with matching row and column ids are symmetrised by averaging the
/// two reconstructions of each masked pair.
pub fn impute(matrix: &DistanceMatrix, model: &FactorModel) -> Result<DistanceMatrix> {
    if matrix.shape() != model.shape() {
        return Err(Error::ShapeMismatch {
            expected: model.shape(),
            actual: matrix.shape(),
        });
    }
    let (rows, cols) = matrix.shape();
    let symmetric = rows == cols && matrix.row_ids() == matrix.col_ids();
    let mut out = matrix.clone();
    for i in 0..rows {
        for j in 0..cols {
            if matrix.get(i, j).is_some() {
                continue;
            }
            let value = if symmetric && matrix.get(j, i).is_none() {
                (model.reconstruct(i, j) + model.reconstruct(j, i)) / 2.0
            } else {
                model.reconstruct(i, j)
            };
            out.set(i, j, value);
        }
    }
    Ok(out)
}

/// Chooses `(rank, lambda)` by held-out reconstruction error. Some complete
/// rows are masked with the missingness pattern of a randomly drawn
/// incomplete row, every grid point is fitted to the remainder, and the grid
/// point with the smallest error on the hidden entries wins (first on ties).
/// Without both complete and incomplete rows, the first valid grid point is
/// returned.
pub fn select_factorization(
    matrix: &MaskedMatrix,
    ranks: &[usize],
    lambdas: &[f64],
    base: &FactorConfig,
) -> Result<(usize, f64)> {
    let (rows, cols) = matrix.shape();
    let size = rows.min(cols);
    let grid: Vec<(usize, f64)> = ranks
        .iter()
        .filter(|&&r| r >= 1 && r < size)
        .flat_map(|&r| lambdas.iter().map(move |&l| (r, l)))
        .collect();
    let first = *grid.first().ok_or_else(|| {
        Error::InvalidConfig(format!("no factorization rank below matrix size {size}"))
    })?;
    let complete: Vec<usize> = (0..rows)
        .filter(|&i| (0..cols).all(|j| matrix.is_observed(i, j)))
        .collect();
    let incomplete: Vec<usize> = (0..rows)
        .filter(|&i| (0..cols).any(|j| !matrix.is_observed(i, j)))
        .collect();
    if grid.len() == 1 || complete.is_empty() || incomplete.is_empty() {
        return Ok(first);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(base.seed ^ 0x5eed_f00d);
    let mut chosen = complete.clone();
    chosen.shuffle(&mut rng);
    chosen.truncate((complete.len() / 5).max(1));
    chosen.sort_unstable();
    let mut train = matrix.clone();
    let mut held_out = Vec::new();
    for &i in &chosen {
        let donor = incomplete[rng.gen_range(0..incomplete.len())];
        for j in 0..cols {
            if !matrix.is_observed(donor, j) {
                train.mask(i, j);
                held_out.push((i, j, matrix.values[i * cols + j]));
            }
        }
    }

    let mut best = first;
    let mut best_err = f64::INFINITY;
    for &(rank, lambda) in &grid {
        let config = FactorConfig {
            rank,
            lambda,
            ..*base
        };
        let Ok(model) = fit_factorization(&train, &config) else {
            continue;
        };
        let err: f64 = held_out
            .iter()
            .map(|&(i, j, m)| (model.reconstruct(i, j) - m).powi(2))
            .sum();
        if err < best_err {
            best_err = err;
            best = (rank, lambda);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Uniform};

    fn cfg(rank: usize, lambda: f64) -> FactorConfig {
        FactorConfig {
            rank,
            lambda,
            max_sweeps: 2000,
            tolerance: 1e-15,
            seed: 7,
        }
    }

    #[test]
    fn recovers_full_rank_one_matrix() {
        let m = MaskedMatrix::from_rows(&[
            vec![Some(1.0), Some(2.0), Some(3.0)],
            vec![Some(2.0), Some(4.0), Some(6.0)],
            vec![Some(3.0), Some(6.0), Some(9.0)],
        ])
        .unwrap();
        let model = fit_factorization(&m, &cfg(1, 1e-9)).unwrap();
        // Direct SVD gives the best rank-1 approximation, here exact.
        let dense = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 3.0, 6.0, 9.0]);
        let svd = dense.clone().svd(true, true);
        let s0 = svd.singular_values[0];
        let (u0, v0) = (svd.u.unwrap().column(0).clone_owned(), svd.v_t.unwrap().row(0).clone_owned());
        for i in 0..3 {
            for j in 0..3 {
                let oracle: f64 = s0 * u0[i] * v0[j];
                assert!((oracle - dense[(i, j)]).abs() < 1e-9);
                assert!((model.reconstruct(i, j) - oracle).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn two_by_two_example() {
        // [[1,2],[2,4]] needs rank < 2, so embed in a larger rank-1 matrix.
        let m = MaskedMatrix::from_rows(&[
            vec![Some(1.0), Some(2.0), Some(3.0)],
            vec![Some(2.0), None, Some(6.0)],
            vec![Some(3.0), Some(6.0), Some(9.0)],
        ])
        .unwrap();
        let model = fit_factorization(&m, &cfg(1, 1e-6)).unwrap();
        // Rank-1 completion: m22 = m21 * m12 / m11 = 4.
        let oracle = 2.0 * 2.0 / 1.0;
        assert!((model.reconstruct(1, 1) - oracle).abs() < 0.05 * oracle);
        let filled = model.complete(&m).unwrap();
        assert_eq!(filled[0], 1.0);
        assert!((filled[4] - oracle).abs() < 0.05 * oracle);
    }

    #[test]
    fn rank_and_mask_errors() {
        let m = MaskedMatrix::from_rows(&[vec![Some(1.0), Some(2.0)], vec![Some(2.0), None]]).unwrap();
        assert!(matches!(
            fit_factorization(&m, &cfg(2, 0.1)),
            Err(Error::RankTooLarge { rank: 2, size: 2 })
        ));
        let m = MaskedMatrix::from_rows(&[
            vec![Some(1.0), Some(2.0), Some(1.0)],
            vec![None, None, None],
            vec![Some(1.0), Some(2.0), Some(1.0)],
        ])
        .unwrap()
        .with_ids(vec!["a".into(), "b".into(), "c".into()], vec!["x".into(), "y".into(), "z".into()])
        .unwrap();
        match fit_factorization(&m, &cfg(1, 0.1)) {
            Err(Error::FullyMasked { axis: "row", id }) => assert_eq!(id, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn heavy_regularisation_shrinks_to_zero() {
        let m = MaskedMatrix::from_rows(&[
            vec![Some(1.0), Some(2.0), Some(3.0)],
            vec![Some(2.0), None, Some(6.0)],
            vec![Some(3.0), Some(6.0), Some(9.0)],
        ])
        .unwrap();
        let model = fit_factorization(&m, &cfg(1, 1e6)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!(model.reconstruct(i, j) < 1e-6);
            }
        }
    }

    #[test]
    fn loss_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let unif = Uniform::new(0.0, 1.0);
        let rows: Vec<Vec<Option<f64>>> = (0..20)
            .map(|_| {
                (0..15)
                    .map(|_| {
                        let v: f64 = unif.sample(&mut rng);
                        (unif.sample(&mut rng) > 0.3).then_some(v * 3.0)
                    })
                    .collect()
            })
            .collect();
        let m = MaskedMatrix::from_rows(&rows).unwrap();
        let model = fit_factorization(&m, &FactorConfig { max_sweeps: 50, ..cfg(4, 0.05) }).unwrap();
        for pair in model.loss_trace.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-12), "{pair:?}");
        }
    }

    #[test]
    fn projected_row_matches_in_sample_fit_for_low_rank_data() {
        let a = [1.0, 2.0, 0.5, 1.5, 3.0, 2.5];
        let rows: Vec<Vec<Option<f64>>> = (0..6)
            .map(|i| (0..6).map(|j| Some(a[i] * a[j])).collect())
            .collect();
        let m = MaskedMatrix::from_rows(&rows).unwrap();
        let model = fit_factorization(&m, &cfg(1, 1e-9)).unwrap();
        let probe: Vec<Option<f64>> = (0..6).map(|j| (j < 3).then_some(2.0 * a[j])).collect();
        let filled = model.project_row(&probe).unwrap();
        for j in 3..6 {
            assert!((filled[j] - 2.0 * a[j]).abs() < 1e-4, "{j}: {}", filled[j]);
        }
        assert!(model.project_row(&[Some(1.0)]).is_err());
    }

    #[test]
    fn impute_keeps_observed_and_symmetrises() {
        use crate::cohort::{InstanceId, Modality};
        use crate::similarity::Method;
        let ids: Vec<InstanceId> = ["a", "b", "c", "d"].iter().map(|s| InstanceId::new(*s)).collect();
        let a = [1.0, 2.0, 3.0, 1.5];
        let mut entries = Vec::new();
        for i in 0..4 {
            for j in 0..4 {
                let masked = (i, j) == (1, 3) || (i, j) == (3, 1);
                entries.push((!masked).then_some(a[i] * a[j]));
            }
        }
        let d = DistanceMatrix::from_parts(Modality::pet(), Method::Global, ids.clone(), ids, entries).unwrap();
        let model = fit_factorization(&MaskedMatrix::from(&d), &cfg(1, 1e-6)).unwrap();
        let out = impute(&d, &model).unwrap();
        assert!(out.is_fully_observed());
        assert_eq!(out.get(1, 3), out.get(3, 1));
        assert!((out.get(1, 3).unwrap() - 3.0).abs() < 0.05);
        for i in 0..4 {
            for j in 0..4 {
                if let Some(v) = d.get(i, j) {
                    assert_eq!(out.get(i, j), Some(v));
                }
            }
        }
        // Nothing to impute: unchanged.
        let full = out.clone();
        assert_eq!(impute(&full, &model).unwrap(), full);
    }

    #[test]
    fn selection_prefers_true_rank() {
        // Rank-2 matrix with a missing block in some rows.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let unif = Uniform::new(0.0, 1.0);
        let n = 30;
        let f: Vec<[f64; 2]> = (0..n).map(|_| [unif.sample(&mut rng), unif.sample(&mut rng)]).collect();
        let rows: Vec<Vec<Option<f64>>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let v = f[i][0] * f[j][0] + f[i][1] * f[j][1];
                        (!(i % 3 == 0 && j >= 20)).then_some(v)
                    })
                    .collect()
            })
            .collect();
        let m = MaskedMatrix::from_rows(&rows).unwrap();
        let base = FactorConfig {
            max_sweeps: 300,
            tolerance: 1e-10,
            ..FactorConfig::default()
        };
        let (rank, lambda) = select_factorization(&m, &[1, 2, 5], &[1e-4, 1.0], &base).unwrap();
        assert!(rank >= 2, "rank {rank}");
        assert_eq!(lambda, 1e-4);
        assert!(select_factorization(&m, &[40], &[0.1], &base).is_err());
    }
}
