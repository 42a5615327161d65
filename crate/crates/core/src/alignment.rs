//! Dynamic time warping with anchored or free endpoints.
//!
//! All four variants share one accumulated cost recursion over a cost matrix
//! padded with an extra leading row and column:
//!
//! ```text
//! D(v, w) = C(v-1, w-1) + min(D(v-1, w), D(v, w-1), D(v-1, w-1))
//! ```
//!
//! The shorter series is always the query (rows) and is matched in full. The
//! variants differ only in how the padding row is initialised and which cells
//! of the last row may terminate a path:
//!
//! | variant       | start on reference | end on reference |
//! |---------------|--------------------|------------------|
//! | global        | first element      | last element     |
//! | prefix        | first element      | anywhere         |
//! | suffix        | anywhere           | last element     |
//! | subsequence   | anywhere           | anywhere         |
//!
//! Suffix matching is computed as prefix matching on both series reversed.
//! When the two series have equal length, the free-endpoint variants evaluate
//! both orientations and keep the cheaper one so every distance is symmetric.

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{squared_euclidean, Series};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Global,
    Prefix,
    Suffix,
    Subsequence,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Global,
        Variant::Prefix,
        Variant::Suffix,
        Variant::Subsequence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Global => "global",
            Variant::Prefix => "prefix",
            Variant::Suffix => "suffix",
            Variant::Subsequence => "subsequence",
        }
    }

    fn free_start(self) -> bool {
        matches!(self, Variant::Subsequence | Variant::Suffix)
    }

    fn free_end(self) -> bool {
        matches!(self, Variant::Subsequence | Variant::Prefix)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown alignment variant {s:?}")))
    }
}

/// Squared Euclidean distances between every pair of time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, v: usize, w: usize) -> f64 {
        self.data[v * self.cols + w]
    }

    pub fn transposed(&self) -> CostMatrix {
        let mut data = Vec::with_capacity(self.data.len());
        for w in 0..self.cols {
            for v in 0..self.rows {
                data.push(self.get(v, w));
            }
        }
        CostMatrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }
}

pub fn cost_matrix(a: &Series, b: &Series) -> Result<CostMatrix> {
    check_inputs(a, b)?;
    let data = a
        .rows()
        .flat_map(|x| b.rows().map(move |y| squared_euclidean(x, y)))
        .collect();
    Ok(CostMatrix {
        rows: a.len(),
        cols: b.len(),
        data,
    })
}

fn check_inputs(a: &Series, b: &Series) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySeries);
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

#[inline]
fn accumulate(cost: f64, up: f64, left: f64, diag: f64) -> f64 {
    cost + up.min(left).min(diag)
}

/// The `(rows + 1) x (cols + 1)` dynamic-programming table.
#[derive(Debug, Clone, PartialEq)]
pub struct AccumulatedCostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    free_start: bool,
}

impl AccumulatedCostMatrix {
    /// Fills the table. With `free_start` the padding row is zero everywhere
    /// (the corner included) so a path may begin at any reference column;
    /// otherwise only the corner is zero.
    pub fn build(cost: &CostMatrix, free_start: bool) -> Self {
        let rows = cost.rows + 1;
        let cols = cost.cols + 1;
        let mut data = vec![f64::INFINITY; rows * cols];
        if free_start {
            data[..cols].fill(0.0);
        } else {
            data[0] = 0.0;
        }
        for v in 1..rows {
            for w in 1..cols {
                data[v * cols + w] = accumulate(
                    cost.get(v - 1, w - 1),
                    data[(v - 1) * cols + w],
                    data[v * cols + w - 1],
                    data[(v - 1) * cols + w - 1],
                );
            }
        }
        AccumulatedCostMatrix {
            rows,
            cols,
            data,
            free_start,
        }
    }

    /// Entry in padded coordinates; `(0, 0)` is the corner.
    pub fn get(&self, v: usize, w: usize) -> f64 {
        self.data[v * self.cols + w]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Padded column of the last-row minimum, smallest column on ties.
    fn best_end(&self) -> usize {
        let last = self.rows - 1;
        let mut best = 1;
        for w in 2..self.cols {
            if self.get(last, w) < self.get(last, best) {
                best = w;
            }
        }
        best
    }

    /// Recovers an optimal path ending at padded cell `(rows - 1, end)`,
    /// returned in 0-based series coordinates from start to end.
    fn backtrack(&self, end: usize) -> Vec<(usize, usize)> {
        let (mut v, mut w) = (self.rows - 1, end);
        let mut path = Vec::with_capacity(self.rows + self.cols);
        loop {
            path.push((v - 1, w - 1));
            if v == 1 && (self.free_start || w == 1) {
                break;
            }
            // Diagonal first, then vertical, then horizontal.
            let candidates = [(v - 1, w - 1), (v - 1, w), (v, w - 1)];
            let (nv, nw) = candidates
                .into_iter()
                .filter(|&(a, b)| (a >= 1 && b >= 1) || (a == 0 && self.get(a, b) == 0.0))
                .fold(None, |best: Option<(usize, usize)>, c| match best {
                    Some(b) if self.get(b.0, b.1) <= self.get(c.0, c.1) => Some(b),
                    _ => Some(c),
                })
                .expect("a finite predecessor always exists");
            if nv == 0 {
                break;
            }
            v = nv;
            w = nw;
        }
        path.reverse();
        path
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    pub variant: Variant,
    pub distance: f64,
    /// Index pairs `(index into a, index into b)` from start to end.
    pub path: Vec<(usize, usize)>,
    /// Which input acted as the reference (the longer one, or the chosen
    /// orientation when lengths are equal).
    pub reference: Side,
    /// Inclusive range of reference indices covered by the path.
    pub matched_span: RangeInclusive<usize>,
}

impl AlignmentResult {
    /// Sum of local costs along the recovered path.
    pub fn path_cost(&self, a: &Series, b: &Series) -> f64 {
        self.path
            .iter()
            .map(|&(i, j)| squared_euclidean(a.row(i), b.row(j)))
            .sum()
    }
}

struct Oriented {
    distance: f64,
    path: Vec<(usize, usize)>,
}

fn align_oriented(cost: &CostMatrix, variant: Variant) -> Oriented {
    debug_assert!(variant != Variant::Suffix);
    let table = AccumulatedCostMatrix::build(cost, variant.free_start());
    let end = if variant.free_end() {
        table.best_end()
    } else {
        table.cols - 1
    };
    Oriented {
        distance: table.get(table.rows - 1, end),
        path: table.backtrack(end),
    }
}

/// Aligns `a` against `b` and recovers the optimal warping path.
pub fn align(a: &Series, b: &Series, variant: Variant) -> Result<AlignmentResult> {
    check_inputs(a, b)?;
    if variant == Variant::Suffix {
        let (la, lb) = (a.len(), b.len());
        let mut result = align(&a.reversed(), &b.reversed(), Variant::Prefix)?;
        result.path = result
            .path
            .iter()
            .rev()
            .map(|&(i, j)| (la - 1 - i, lb - 1 - j))
            .collect();
        result.variant = Variant::Suffix;
        result.matched_span = span(&result.path, result.reference);
        return Ok(result);
    }

    let cost = cost_matrix(a, b)?;
    let a_as_query = || {
        let o = align_oriented(&cost, variant);
        (o.distance, o.path, Side::B)
    };
    let b_as_query = || {
        let o = align_oriented(&cost.transposed(), variant);
        let path = o.path.into_iter().map(|(q, r)| (r, q)).collect();
        (o.distance, path, Side::A)
    };
    let (distance, path, reference) = if a.len() < b.len() {
        a_as_query()
    } else if a.len() > b.len() {
        b_as_query()
    } else if variant == Variant::Global {
        a_as_query()
    } else {
        let first = a_as_query();
        let second = b_as_query();
        if second.0 < first.0 {
            second
        } else {
            first
        }
    };
    Ok(AlignmentResult {
        variant,
        distance,
        matched_span: span(&path, reference),
        path,
        reference,
    })
}

fn span(path: &[(usize, usize)], reference: Side) -> RangeInclusive<usize> {
    let pick = |&(i, j): &(usize, usize)| match reference {
        Side::A => i,
        Side::B => j,
    };
    let lo = path.iter().map(pick).min().unwrap_or(0);
    let hi = path.iter().map(pick).max().unwrap_or(0);
    lo..=hi
}

pub fn subsequence_distance(a: &Series, b: &Series) -> Result<AlignmentResult> {
    align(a, b, Variant::Subsequence)
}

pub fn global_dtw_distance(a: &Series, b: &Series) -> Result<AlignmentResult> {
    align(a, b, Variant::Global)
}

pub fn prefix_distance(a: &Series, b: &Series) -> Result<AlignmentResult> {
    align(a, b, Variant::Prefix)
}

pub fn suffix_distance(a: &Series, b: &Series) -> Result<AlignmentResult> {
    align(a, b, Variant::Suffix)
}

/// Distance only, using two rolling rows. Bit-identical to
/// [`align`]`(..).distance`.
pub fn distance(a: &Series, b: &Series, variant: Variant) -> Result<f64> {
    check_inputs(a, b)?;
    if variant == Variant::Suffix {
        return distance(&a.reversed(), &b.reversed(), Variant::Prefix);
    }
    let d = if a.len() < b.len() || (a.len() == b.len() && variant == Variant::Global) {
        rolling(a, b, variant)
    } else if a.len() > b.len() {
        rolling(b, a, variant)
    } else {
        let first = rolling(a, b, variant);
        let second = rolling(b, a, variant);
        if second < first {
            second
        } else {
            first
        }
    };
    Ok(d)
}

fn rolling(query: &Series, reference: &Series, variant: Variant) -> f64 {
    let cols = reference.len() + 1;
    let mut prev = vec![f64::INFINITY; cols];
    let mut cur = vec![f64::INFINITY; cols];
    if variant.free_start() {
        prev.fill(0.0);
    } else {
        prev[0] = 0.0;
    }
    for x in query.rows() {
        cur[0] = f64::INFINITY;
        for (w, y) in reference.rows().enumerate() {
            cur[w + 1] = accumulate(squared_euclidean(x, y), prev[w + 1], cur[w], prev[w]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    if variant.free_end() {
        let mut best = prev[1];
        for &value in &prev[2..] {
            if value < best {
                best = value;
            }
        }
        best
    } else {
        prev[cols - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use proptest::prelude::*;

    fn s(values: &[f64]) -> Series {
        Series::univariate(values).unwrap()
    }

    const A: [f64; 3] = [0.0, 1.0, 2.0];
    const B: [f64; 5] = [5.0, 0.0, 1.0, 2.0, 7.0];

    #[test]
    fn cost_matrix_examples() {
        assert_eq!(cost_matrix(&s(&[0.0]), &s(&[3.0])).unwrap().get(0, 0), 9.0);
        let a = Series::from_rows(&[[1.0, 0.0]]).unwrap();
        let b = Series::from_rows(&[[0.0, 1.0]]).unwrap();
        assert_eq!(cost_matrix(&a, &b).unwrap().get(0, 0), 2.0);
        let c = cost_matrix(&s(&B), &s(&B)).unwrap();
        assert!((0..5).all(|i| c.get(i, i) == 0.0));
        let two_d = Series::from_rows(&[[1.0, 0.0]]).unwrap();
        assert!(matches!(
            cost_matrix(&s(&[1.0]), &two_d),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn containment_example() {
        let r = subsequence_distance(&s(&A), &s(&B)).unwrap();
        assert_eq!(r.distance, 0.0);
        assert_eq!(r.reference, Side::B);
        assert_eq!(r.matched_span, 1..=3);
        assert_eq!(r.path, vec![(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn worked_examples() {
        assert_eq!(global_dtw_distance(&s(&A), &s(&B)).unwrap().distance, 50.0);
        assert_eq!(prefix_distance(&s(&A), &s(&B)).unwrap().distance, 25.0);
        assert_eq!(suffix_distance(&s(&A), &s(&B)).unwrap().distance, 25.0);
        assert_eq!(global_dtw_distance(&s(&[1.0]), &s(&[4.0])).unwrap().distance, 9.0);
        assert_eq!(prefix_distance(&s(&[0.0]), &s(&[0.0, 9.0, 9.0])).unwrap().distance, 0.0);
        assert_eq!(suffix_distance(&s(&[2.0]), &s(&[9.0, 9.0, 2.0])).unwrap().distance, 0.0);
        for v in Variant::ALL {
            assert_eq!(align(&s(&B), &s(&B), v).unwrap().distance, 0.0);
        }
    }

    #[test]
    fn brute_force_small_example() {
        let (a, b) = (s(&[0.0, 2.0]), s(&[5.0, 1.0, 7.0]));
        for v in Variant::ALL {
            assert_eq!(
                distance(&a, &b, v).unwrap(),
                oracle::brute_force_distance(&a, &b, v),
                "{v}"
            );
        }
    }

    #[test]
    fn global_path_endpoints() {
        let r = global_dtw_distance(&s(&B), &s(&A)).unwrap();
        assert_eq!(r.path.first(), Some(&(0, 0)));
        assert_eq!(r.path.last(), Some(&(4, 2)));
        assert_eq!(r.reference, Side::A);
    }

    #[test]
    fn subsequence_first_row_is_zero_padded() {
        let cost = cost_matrix(&s(&A), &s(&B)).unwrap();
        let table = AccumulatedCostMatrix::build(&cost, true);
        assert_eq!(table.shape(), (4, 6));
        assert!((0..6).all(|w| table.get(0, w) == 0.0));
        assert!((1..4).all(|v| table.get(v, 0).is_infinite()));
    }

    #[test]
    fn empty_series_rejected() {
        // Series cannot be constructed empty, so this is enforced at the type level.
        assert!(Series::univariate(&[]).is_err());
    }

    fn series_strategy(max_len: usize, dim: usize) -> impl Strategy<Value = Series> {
        proptest::collection::vec(-3.0f64..3.0, dim..=dim * max_len)
            .prop_map(move |mut v| {
                v.truncate(v.len() / dim * dim);
                Series::new(dim, v).unwrap()
            })
    }

    fn check_path(r: &AlignmentResult, a: &Series, b: &Series) {
        for pair in r.path.windows(2) {
            let step = (pair[1].0 - pair[0].0, pair[1].1 - pair[0].1);
            assert!(matches!(step, (1, 0) | (0, 1) | (1, 1)), "bad step {step:?}");
        }
        let (first, last) = (r.path[0], *r.path.last().unwrap());
        let (q_first, q_last, r_first, r_last, q_len, r_len) = match r.reference {
            Side::B => (first.0, last.0, first.1, last.1, a.len(), b.len()),
            Side::A => (first.1, last.1, first.0, last.0, b.len(), a.len()),
        };
        assert_eq!(q_first, 0);
        assert_eq!(q_last, q_len - 1);
        if !r.variant.free_start() {
            assert_eq!(r_first, 0);
        }
        if !r.variant.free_end() {
            assert_eq!(r_last, r_len - 1);
        }
        let cost = r.path_cost(a, b);
        assert!((cost - r.distance).abs() <= 1e-9 * r.distance.max(1.0));
    }

    proptest! {
        #[test]
        fn constraint_nesting(a in series_strategy(7, 2), b in series_strategy(7, 2)) {
            let d = |v| distance(&a, &b, v).unwrap();
            let (g, p, x, q) = (d(Variant::Global), d(Variant::Prefix), d(Variant::Suffix), d(Variant::Subsequence));
            // Suffix sums run over reversed series, so equal optimal paths
            // may differ from the forward sums in the last bit.
            let le = |lo: f64, hi: f64| lo <= hi + 1e-12 * hi.abs();
            prop_assert!(q <= p && p <= g);
            prop_assert!(le(q, x) && le(x, g), "q={q} x={x} g={g}");
            prop_assert!(q >= 0.0);
        }

        #[test]
        fn symmetric(a in series_strategy(6, 1), b in series_strategy(6, 1)) {
            for v in Variant::ALL {
                prop_assert_eq!(distance(&a, &b, v).unwrap(), distance(&b, &a, v).unwrap());
            }
        }

        #[test]
        fn rolling_matches_full_table(a in series_strategy(6, 3), b in series_strategy(6, 3)) {
            for v in Variant::ALL {
                let full = align(&a, &b, v).unwrap();
                prop_assert_eq!(full.distance.to_bits(), distance(&a, &b, v).unwrap().to_bits());
                check_path(&full, &a, &b);
            }
        }

        #[test]
        fn suffix_is_reversed_prefix(a in series_strategy(6, 2), b in series_strategy(6, 2)) {
            prop_assert_eq!(
                suffix_distance(&a, &b).unwrap().distance,
                prefix_distance(&a.reversed(), &b.reversed()).unwrap().distance
            );
        }

        #[test]
        fn matches_exhaustive_enumeration(
            a in proptest::collection::vec(prop_oneof![Just(0.0), Just(1.0), Just(2.0), Just(5.0), Just(9.0)], 1..=5),
            b in proptest::collection::vec(prop_oneof![Just(0.0), Just(1.0), Just(2.0), Just(5.0), Just(9.0)], 1..=5),
        ) {
            let (a, b) = (s(&a), s(&b));
            for v in Variant::ALL {
                let expected = oracle::brute_force_distance(&a, &b, v);
                prop_assert!((distance(&a, &b, v).unwrap() - expected).abs() <= 1e-9);
            }
        }
    }
}
