//! Pairwise instance distances per modality, with block-missing masks.

use std::borrow::Borrow;
use std::collections::HashMap;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{self, Variant};
use crate::cohort::{Instance, InstanceId, Modality};
use crate::error::{Error, Result};
use crate::series::{squared_euclidean, Series};

/// How two instances are compared: final visit only, or one of the
/// alignment variants over the whole prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Snapshot,
    Prefix,
    Suffix,
    Global,
    Subsequence,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Snapshot,
        Method::Prefix,
        Method::Suffix,
        Method::Global,
        Method::Subsequence,
    ];

    pub fn variant(self) -> Option<Variant> {
        match self {
            Method::Snapshot => None,
            Method::Prefix => Some(Variant::Prefix),
            Method::Suffix => Some(Variant::Suffix),
            Method::Global => Some(Variant::Global),
            Method::Subsequence => Some(Variant::Subsequence),
        }
    }

    pub fn name(self) -> &'static str {
        match self.variant() {
            None => "snapshot",
            Some(v) => v.name(),
        }
    }
}

impl From<Variant> for Method {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Global => Method::Global,
            Variant::Prefix => Method::Prefix,
            Variant::Suffix => Method::Suffix,
            Variant::Subsequence => Method::Subsequence,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

/// Distances between two ordered sets of instances for one modality.
/// Square matrices built by [`pairwise_distances`] are symmetric with a zero
/// diagonal wherever observed.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub modality: Modality,
    pub method: Method,
    row_ids: Vec<InstanceId>,
    col_ids: Vec<InstanceId>,
    values: Vec<f64>,
    observed: Vec<bool>,
}

impl DistanceMatrix {
    pub fn from_parts(
        modality: Modality,
        method: Method,
        row_ids: Vec<InstanceId>,
        col_ids: Vec<InstanceId>,
        entries: Vec<Option<f64>>,
    ) -> Result<Self> {
        let expected = (row_ids.len(), col_ids.len());
        if entries.len() != expected.0 * expected.1 {
            return Err(Error::ShapeMismatch {
                expected,
                actual: (entries.len(), 1),
            });
        }
        let observed = entries.iter().map(Option::is_some).collect();
        let values = entries.into_iter().map(|e| e.unwrap_or(0.0)).collect();
        Ok(DistanceMatrix {
            modality,
            method,
            row_ids,
            col_ids,
            values,
            observed,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.row_ids.len(), self.col_ids.len())
    }

    pub fn row_ids(&self) -> &[InstanceId] {
        &self.row_ids
    }

    pub fn col_ids(&self) -> &[InstanceId] {
        &self.col_ids
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let k = i * self.col_ids.len() + j;
        self.observed[k].then_some(self.values[k])
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = Option<f64>> + '_ {
        (0..self.col_ids.len()).map(move |j| self.get(i, j))
    }

    pub fn row_index(&self, id: &InstanceId) -> Option<usize> {
        self.row_ids.iter().position(|r| r == id)
    }

    pub fn observed_fraction(&self) -> f64 {
        if self.observed.is_empty() {
            return 1.0;
        }
        self.observed.iter().filter(|&&o| o).count() as f64 / self.observed.len() as f64
    }

    pub fn is_fully_observed(&self) -> bool {
        self.observed.iter().all(|&o| o)
    }

    pub(crate) fn set(&mut self, i: usize, j: usize, value: f64) {
        let k = i * self.col_ids.len() + j;
        self.values[k] = value;
        self.observed[k] = true;
    }
}

/// The representation of one instance that a method compares.
fn prepare(instance: &Instance, modality: &Modality, method: Method) -> Option<Series> {
    match method {
        Method::Snapshot => instance
            .last_visit()
            .features(modality)
            .and_then(|v| Series::new(v.len(), v.to_vec()).ok()),
        _ => instance.series(modality),
    }
}

fn compare(a: &Series, b: &Series, method: Method) -> Result<f64> {
    match method.variant() {
        None => {
            if a.dim() != b.dim() {
                return Err(Error::DimensionMismatch {
                    left: a.dim(),
                    right: b.dim(),
                });
            }
            Ok(squared_euclidean(a.last(), b.last()))
        }
        Some(v) => alignment::distance(a, b, v),
    }
}

fn entry(a: &Option<Series>, b: &Option<Series>, method: Method) -> Result<Option<f64>> {
    match (a, b) {
        (Some(a), Some(b)) => compare(a, b, method).map(Some),
        _ => Ok(None),
    }
}

fn check_known<I: Borrow<Instance>>(instances: &[I], modality: &Modality) -> Result<()> {
    let known = instances.iter().any(|i| {
        i.borrow()
            .visits
            .iter()
            .any(|v| v.features.contains_key(modality))
    });
    if known || instances.is_empty() {
        Ok(())
    } else {
        Err(Error::UnknownModality(modality.to_string()))
    }
}

/// Symmetric distance matrix over `instances`. An entry is masked when either
/// instance lacks the modality at any of its visits.
pub fn pairwise_distances<I: Borrow<Instance> + Sync>(
    instances: &[I],
    modality: &Modality,
    method: Method,
) -> Result<DistanceMatrix> {
    pairwise_distances_with(instances, modality, method, true)
}

/// As [`pairwise_distances`], optionally without fanning out over threads.
pub fn pairwise_distances_with<I: Borrow<Instance> + Sync>(
    instances: &[I],
    modality: &Modality,
    method: Method,
    parallel: bool,
) -> Result<DistanceMatrix> {
    check_known(instances, modality)?;
    let prepared: Vec<Option<Series>> = instances
        .iter()
        .map(|i| prepare(i.borrow(), modality, method))
        .collect();
    let n = prepared.len();
    let upper_row = |i: usize| -> Result<Vec<Option<f64>>> {
        (i..n)
            .map(|j| entry(&prepared[i], &prepared[j], method))
            .collect()
    };
    let upper: Vec<Vec<Option<f64>>> = if parallel {
        (0..n).into_par_iter().map(upper_row).collect::<Result<_>>()?
    } else {
        (0..n).map(upper_row).collect::<Result<_>>()?
    };
    let mut entries = vec![None; n * n];
    for (i, row) in upper.iter().enumerate() {
        for (offset, &value) in row.iter().enumerate() {
            let j = i + offset;
            entries[i * n + j] = value;
            entries[j * n + i] = value;
        }
    }
    let ids: Vec<InstanceId> = instances.iter().map(|i| i.borrow().id.clone()).collect();
    DistanceMatrix::from_parts(modality.clone(), method, ids.clone(), ids, entries)
}

/// Rectangular distances from every `rows` instance to every `cols` instance.
pub fn cross_distances<I: Borrow<Instance> + Sync, J: Borrow<Instance> + Sync>(
    rows: &[I],
    cols: &[J],
    modality: &Modality,
    method: Method,
) -> Result<DistanceMatrix> {
    check_known(cols, modality).or_else(|_| check_known(rows, modality))?;
    let prep = |set: &[&Instance]| -> Vec<Option<Series>> {
        set.iter().map(|i| prepare(i, modality, method)).collect()
    };
    let row_refs: Vec<&Instance> = rows.iter().map(Borrow::borrow).collect();
    let col_refs: Vec<&Instance> = cols.iter().map(Borrow::borrow).collect();
    let (pr, pc) = (prep(&row_refs), prep(&col_refs));
    let entries: Vec<Vec<Option<f64>>> = pr
        .par_iter()
        .map(|a| pc.iter().map(|b| entry(a, b, method)).collect())
        .collect::<Result<_>>()?;
    DistanceMatrix::from_parts(
        modality.clone(),
        method,
        row_refs.iter().map(|i| i.id.clone()).collect(),
        col_refs.iter().map(|i| i.id.clone()).collect(),
        entries.into_iter().flatten().collect(),
    )
}

/// Concatenates the test instance's row from each modality block, in block
/// order. `None` marks a distance left for imputation.
pub fn feature_rows(test: &InstanceId, blocks: &[DistanceMatrix]) -> Result<Vec<Option<f64>>> {
    let mut out = Vec::new();
    for block in blocks {
        if block.col_ids.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        let i = block
            .row_index(test)
            .ok_or_else(|| Error::MissingInstance(test.to_string()))?;
        out.extend(block.row(i));
    }
    if out.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    Ok(out)
}

const MAGIC: &str = "#trajsim-distances v1";

impl DistanceMatrix {
    /// Tab-separated text: a header, the column ids, then one row per
    /// instance with `NA` for masked entries.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "modality\t{}", self.modality);
        let _ = writeln!(out, "method\t{}", self.method);
        out.push_str("columns");
        for id in &self.col_ids {
            let _ = write!(out, "\t{id}");
        }
        out.push('\n');
        for (i, id) in self.row_ids.iter().enumerate() {
            out.push_str(id.as_str());
            for value in self.row(i) {
                match value {
                    Some(v) => {
                        let _ = write!(out, "\t{v:?}");
                    }
                    None => out.push_str("\tNA"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<DistanceMatrix> {
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("missing {what}")))
        };
        let (_, magic) = next("header")?;
        if magic != MAGIC {
            return Err(Error::parse(1, "not a distance matrix file"));
        }
        let field = |(n, line): (usize, &str), key: &str| -> Result<String> {
            let (k, v) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(n + 1, format!("expected {key}")))?;
            if k != key || v.is_empty() || v.contains('\t') {
                return Err(Error::parse(n + 1, format!("expected {key}")));
            }
            Ok(v.to_string())
        };
        let modality = Modality::new(field(next("modality")?, "modality")?);
        let method_line = next("method")?;
        let method: Method = field(method_line, "method")?
            .parse()
            .map_err(|_| Error::parse(method_line.0 + 1, "unknown method"))?;
        let (n, columns) = next("columns")?;
        let mut fields = columns.split('\t');
        if fields.next() != Some("columns") {
            return Err(Error::parse(n + 1, "expected columns"));
        }
        let col_ids: Vec<InstanceId> = fields.map(InstanceId::new).collect();
        check_unique(&col_ids, n + 1)?;
        let mut row_ids = Vec::new();
        let mut entries = Vec::new();
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            row_ids.push(InstanceId::new(fields.next().unwrap_or_default()));
            let before = entries.len();
            for f in fields {
                entries.push(match f {
                    "NA" => None,
                    f => {
                        let v: f64 = f
                            .parse()
                            .map_err(|_| Error::parse(n + 1, format!("invalid number {f:?}")))?;
                        if !v.is_finite() || v < 0.0 {
                            return Err(Error::parse(n + 1, "distance must be finite and non-negative"));
                        }
                        Some(v)
                    }
                });
            }
            if entries.len() - before != col_ids.len() {
                return Err(Error::parse(
                    n + 1,
                    format!("expected {} entries", col_ids.len()),
                ));
            }
        }
        check_unique(&row_ids, 0)?;
        DistanceMatrix::from_parts(modality, method, row_ids, col_ids, entries)
    }
}

fn check_unique(ids: &[InstanceId], line: usize) -> Result<()> {
    let mut seen = HashMap::with_capacity(ids.len());
    for id in ids {
        if seen.insert(id, ()).is_some() || id.as_str().is_empty() {
            return Err(Error::parse(line, format!("duplicate or empty id {id:?}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{expand_instances, Diagnosis, PatientId, PatientRecord, Visit};

    fn instance(id: &str, mri: &[f64], pet: Option<&[f64]>) -> Instance {
        let visits = mri
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let mut v = Visit::new(6 * k as u32, Diagnosis::Mci).with(Modality::mri(), vec![x]);
                if let Some(p) = pet {
                    v = v.with(Modality::pet(), vec![p[k]]);
                }
                v
            })
            .collect();
        let p = PatientRecord::new(PatientId::new(id), visits).unwrap();
        expand_instances(&p, 36).pop().unwrap()
    }

    #[test]
    fn containment_triplet() {
        let set = vec![
            instance("a", &[0.0, 1.0, 2.0], None),
            instance("b", &[5.0, 0.0, 1.0, 2.0, 7.0], None),
            instance("c", &[0.0, 1.0, 2.0], None),
        ];
        let m = pairwise_distances(&set, &Modality::mri(), Method::Subsequence).unwrap();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            assert_eq!(m.get(i, j), Some(0.0));
        }
        let g = pairwise_distances(&set, &Modality::mri(), Method::Global).unwrap();
        assert_eq!(g.get(0, 1), Some(50.0));
        assert_eq!(g.get(1, 0), Some(50.0));
    }

    #[test]
    fn missing_pet_is_masked() {
        let set = vec![
            instance("a", &[0.0, 1.0, 2.0], Some(&[1.0, 1.0, 1.0])),
            instance("b", &[0.0, 1.0, 2.0], None),
            instance("c", &[0.0, 1.0, 3.0], Some(&[1.0, 1.0, 1.0])),
        ];
        let m = pairwise_distances(&set, &Modality::pet(), Method::Global).unwrap();
        assert_eq!(m.get(0, 2), Some(0.0));
        assert_eq!(m.get(0, 1), None);
        assert_eq!(m.get(1, 0), None);
        assert_eq!(m.get(1, 1), None);
        assert_eq!(m.get(0, 0), Some(0.0));
        assert!(matches!(
            pairwise_distances(&set, &Modality::new("CSF"), Method::Global),
            Err(Error::UnknownModality(_))
        ));
    }

    #[test]
    fn snapshot_uses_final_visit() {
        let set = vec![
            instance("a", &[9.0, 9.0, 1.0], None),
            instance("b", &[0.0, 0.0, 3.0], None),
        ];
        let m = pairwise_distances(&set, &Modality::mri(), Method::Snapshot).unwrap();
        assert_eq!(m.get(0, 1), Some(4.0));
    }

    #[test]
    fn feature_row_concatenates_blocks() {
        let train: Vec<_> = (0..4)
            .map(|k| instance(&format!("t{k}"), &[k as f64, 1.0, 2.0], Some(&[0.0, 0.0, k as f64])))
            .collect();
        let test = instance("x", &[0.0, 1.0, 2.0], Some(&[0.0, 0.0, 0.0]));
        let lonely = instance("y", &[0.0, 1.0, 2.0], None);
        let tests = [test.clone(), lonely.clone()];
        let blocks: Vec<_> = [Modality::mri(), Modality::pet()]
            .iter()
            .map(|m| cross_distances(&tests, &train, m, Method::Subsequence).unwrap())
            .collect();
        let row = feature_rows(&test.id, &blocks).unwrap();
        assert_eq!(row.len(), 8);
        assert_eq!(row[..4], blocks[0].row(0).collect::<Vec<_>>()[..]);
        assert!(row.iter().all(Option::is_some));
        let row = feature_rows(&lonely.id, &blocks).unwrap();
        assert!(row[4..].iter().all(Option::is_none));
        assert!(row[..4].iter().all(Option::is_some));

        let empty: Vec<Instance> = vec![];
        let block = cross_distances(&tests, &empty, &Modality::mri(), Method::Global).unwrap();
        assert!(matches!(
            feature_rows(&test.id, &[block]),
            Err(Error::EmptyTrainingSet)
        ));
    }

    #[test]
    fn parallel_and_serial_are_identical() {
        let set: Vec<_> = (0..12)
            .map(|k| {
                let xs: Vec<f64> = (0..3 + k % 4).map(|t| ((t * 7 + k) % 5) as f64 * 0.3).collect();
                instance(&format!("p{k:02}"), &xs, (k % 3 != 0).then_some(&xs[..]))
            })
            .collect();
        for method in Method::ALL {
            for modality in [Modality::mri(), Modality::pet()] {
                let a = pairwise_distances_with(&set, &modality, method, true).unwrap();
                let b = pairwise_distances_with(&set, &modality, method, false).unwrap();
                assert_eq!(a, b);
                let (n, _) = a.shape();
                for i in 0..n {
                    if let Some(d) = a.get(i, i) {
                        assert_eq!(d, 0.0);
                    }
                    for j in 0..n {
                        assert_eq!(a.get(i, j), a.get(j, i));
                        if let (Some(v), Some(var)) = (a.get(i, j), method.variant()) {
                            let x = set[i].series(&modality).unwrap();
                            let y = set[j].series(&modality).unwrap();
                            assert_eq!(v, alignment::align(&x, &y, var).unwrap().distance);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn text_round_trip_and_rejects() {
        let set = vec![
            instance("a", &[0.1, 1.0, 2.0], Some(&[1.0, 1.0, 1.0])),
            instance("b", &[0.0, 1.0 / 3.0, 2.0], None),
        ];
        let m = pairwise_distances(&set, &Modality::pet(), Method::Prefix).unwrap();
        let text = m.to_text();
        assert!(text.contains("\tNA"));
        assert_eq!(DistanceMatrix::parse_text(&text).unwrap(), m);
        let m = pairwise_distances(&set, &Modality::mri(), Method::Suffix).unwrap();
        assert_eq!(DistanceMatrix::parse_text(&m.to_text()).unwrap(), m);

        for bad in [
            "",
            "hello\n",
            "#trajsim-distances v1\nmodality\tMRI\nmethod\tnope\ncolumns\ta\n",
            "#trajsim-distances v1\nmodality\tMRI\nmethod\tglobal\ncolumns\ta\na\t1\t2\n",
            "#trajsim-distances v1\nmodality\tMRI\nmethod\tglobal\ncolumns\ta\na\t-1\n",
            "#trajsim-distances v1\nmodality\tMRI\nmethod\tglobal\ncolumns\ta\ta\n",
        ] {
            assert!(DistanceMatrix::parse_text(bad).is_err(), "{bad:?}");
        }
    }
}
