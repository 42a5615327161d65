//! Patient-grouped cross-validation: outer leave-one-patient-out folds and the
//! inner folds used to choose the regularisation strength.

use std::collections::{BTreeMap, BTreeSet};

use crate::cohort::{Cohort, InstanceId, PatientId};
use crate::error::{Error, Result};
use crate::model::{train_from, FeatureMatrix, TrainConfig};

use super::metrics::auroc;

#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub test_patient: PatientId,
    pub train: Vec<InstanceId>,
    pub test: Vec<InstanceId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

/// One fold per patient with at least one labelled instance, ordered by
/// patient id. Censored instances take part in no fold.
pub fn make_folds(cohort: &Cohort) -> Result<FoldPlan> {
    let mut by_patient: BTreeMap<&PatientId, Vec<InstanceId>> = BTreeMap::new();
    for inst in cohort.labeled_instances() {
        by_patient.entry(&inst.patient_id).or_default().push(inst.id.clone());
    }
    if by_patient.len() < 2 {
        return Err(Error::DegenerateCohort(format!(
            "{} patient(s) with labelled instances, need at least 2",
            by_patient.len()
        )));
    }
    let folds = by_patient
        .iter()
        .map(|(&patient, test)| Fold {
            test_patient: patient.clone(),
            test: test.clone(),
            train: by_patient
                .iter()
                .filter(|(&p, _)| p != patient)
                .flat_map(|(_, ids)| ids.iter().cloned())
                .collect(),
        })
        .collect();
    Ok(FoldPlan { folds })
}

/// Splits patients into at most `k` groups, dealing the sorted ids round-robin.
pub fn patient_groups(patients: &[PatientId], k: usize) -> Vec<Vec<PatientId>> {
    let unique: BTreeSet<&PatientId> = patients.iter().collect();
    let k = k.min(unique.len()).max(1);
    let mut groups = vec![Vec::new(); k];
    for (i, p) in unique.into_iter().enumerate() {
        groups[i % k].push(p.clone());
    }
    groups
}

/// Column-wise z-scoring with statistics from a subset of rows. Non-finite
/// entries are ignored when fitting and mapped to 0 (the training mean).
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &FeatureMatrix, rows: &[usize], cols: &[usize]) -> Self {
        let mut mean = Vec::with_capacity(cols.len());
        let mut scale = Vec::with_capacity(cols.len());
        for &j in cols {
            let values: Vec<f64> = rows.iter().map(|&i| x.row(i)[j]).filter(|v| v.is_finite()).collect();
            let n = values.len() as f64;
            let mu = if values.is_empty() { 0.0 } else { values.iter().sum::<f64>() / n };
            let var = if values.is_empty() {
                0.0
            } else {
                values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n
            };
            mean.push(mu);
            scale.push(if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 });
        }
        Standardizer { mean, scale }
    }

    pub fn transform(&self, x: &FeatureMatrix, rows: &[usize], cols: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for &i in rows {
            let row = x.row(i);
            for (k, &j) in cols.iter().enumerate() {
                let v = row[j];
                data.push(if v.is_finite() { (v - self.mean[k]) / self.scale[k] } else { 0.0 });
            }
        }
        FeatureMatrix::new(rows.len(), cols.len(), data).expect("shape follows from indices")
    }
}

/// Training data for one outer fold.
#[derive(Debug, Clone, Copy)]
pub struct TrainingSet<'a> {
    pub x: &'a FeatureMatrix,
    pub labels: &'a [bool],
    pub row_patients: &'a [PatientId],
    /// Patient owning each column when features are distances to training
    /// instances; such columns are dropped while their patient is held out.
    pub col_patients: Option<&'a [PatientId]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub c: f64,
    /// Mean inner AUROC per ascending grid point; `None` when every inner
    /// fold was skipped.
    pub mean_auroc: Vec<Option<f64>>,
    pub inner_folds: Vec<Vec<PatientId>>,
}

/// Picks the `C` with the best mean inner-fold AUROC; ties go to the smaller
/// `C`. Inner folds whose training or validation part holds a single class
/// are skipped.
pub fn nested_select(set: &TrainingSet<'_>, grid: &[f64], inner_k: usize, train: &TrainConfig) -> Result<Selection> {
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    match grid.len() {
        0 => return Err(Error::InvalidConfig("empty C grid".into())),
        1 => {
            return Ok(Selection {
                c: grid[0],
                mean_auroc: vec![None],
                inner_folds: Vec::new(),
            })
        }
        _ => {}
    }
    let groups = patient_groups(set.row_patients, inner_k);
    let mut sums = vec![0.0; grid.len()];
    let mut used = 0usize;
    for held in &groups {
        let held: BTreeSet<&PatientId> = held.iter().collect();
        let (val, tr): (Vec<usize>, Vec<usize>) =
            (0..set.x.rows()).partition(|&i| held.contains(&set.row_patients[i]));
        let classes = |rows: &[usize]| {
            let pos = rows.iter().filter(|&&i| set.labels[i]).count();
            pos > 0 && pos < rows.len()
        };
        if !classes(&tr) || !classes(&val) {
            continue;
        }
        let cols: Vec<usize> = match set.col_patients {
            Some(owners) => (0..set.x.cols()).filter(|&j| !held.contains(&owners[j])).collect(),
            None => (0..set.x.cols()).collect(),
        };
        let scaler = Standardizer::fit(set.x, &tr, &cols);
        let xt = scaler.transform(set.x, &tr, &cols);
        let xv = scaler.transform(set.x, &val, &cols);
        let yt: Vec<bool> = tr.iter().map(|&i| set.labels[i]).collect();
        let yv: Vec<bool> = val.iter().map(|&i| set.labels[i]).collect();
        let mut warm: Option<(Vec<f64>, f64)> = None;
        for (g, &c) in grid.iter().enumerate() {
            let cfg = TrainConfig { c, ..*train };
            let (model, _) = train_from(&xt, &yt, &cfg, warm.as_ref().map(|(w, b)| (w.as_slice(), *b)))?;
            let scores: Vec<f64> = (0..xv.rows())
                .map(|i| model.decision(xv.row(i)))
                .collect::<Result<_>>()?;
            sums[g] += auroc(&scores, &yv)?;
            warm = Some((model.weights, model.bias));
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::AllInnerFoldsSkipped);
    }
    let means: Vec<f64> = sums.iter().map(|s| s / used as f64).collect();
    let mut best = 0;
    for g in 1..grid.len() {
        if means[g] > means[best] {
            best = g;
        }
    }
    Ok(Selection {
        c: grid[best],
        mean_auroc: means.into_iter().map(Some).collect(),
        inner_folds: groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{Diagnosis, Modality, PatientRecord, Visit};

    fn patient(id: &str, n_labeled: usize) -> PatientRecord {
        // Visits every 6 months, MCI until an AD conversion well after the
        // last instance, so every instance is labelled.
        let mut visits: Vec<Visit> = (0..n_labeled + 2)
            .map(|k| Visit::new(6 * k as u32, Diagnosis::Mci).with(Modality::mri(), vec![k as f64]))
            .collect();
        let last = visits.last().unwrap().month;
        visits.push(Visit::new(last + 12, Diagnosis::Ad).with(Modality::mri(), vec![0.0]));
        PatientRecord::new(PatientId::new(id), visits).unwrap()
    }

    #[test]
    fn folds_partition_labelled_instances() {
        let cohort = Cohort::new(vec![patient("c", 3), patient("a", 1), patient("b", 2)], 36).unwrap();
        let plan = make_folds(&cohort).unwrap();
        let names: Vec<&str> = plan.folds.iter().map(|f| f.test_patient.as_str()).collect();
        assert_eq!(names, ["a", "b", "c"]);
        let total = cohort.labeled_instances().len();
        assert_eq!(plan.folds.iter().map(|f| f.test.len()).sum::<usize>(), total);
        for f in &plan.folds {
            assert_eq!(f.train.len() + f.test.len(), total);
            assert!(f.test.iter().all(|id| !f.train.contains(id)));
        }
        let one = Cohort::new(vec![patient("a", 2)], 36).unwrap();
        assert!(matches!(make_folds(&one), Err(Error::DegenerateCohort(_))));
    }

    #[test]
    fn groups_are_round_robin() {
        let ids: Vec<PatientId> = ["e", "a", "c", "b", "d", "a"].iter().map(|s| PatientId::new(*s)).collect();
        let g = patient_groups(&ids, 2);
        let names: Vec<Vec<&str>> = g.iter().map(|v| v.iter().map(PatientId::as_str).collect()).collect();
        assert_eq!(names, vec![vec!["a", "c", "e"], vec!["b", "d"]]);
        assert_eq!(patient_groups(&ids, 10).len(), 5);
    }

    fn separable_set() -> (FeatureMatrix, Vec<bool>, Vec<PatientId>) {
        let n = 40;
        let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| vec![if labels[i] { 1.0 } else { -1.0 } + (i as f64) * 1e-3, (i % 7) as f64])
            .collect();
        let patients = (0..n).map(|i| PatientId::new(format!("p{:02}", i / 2))).collect();
        (FeatureMatrix::from_rows(&rows).unwrap(), labels, patients)
    }

    #[test]
    fn single_point_grid() {
        let (x, y, p) = separable_set();
        let set = TrainingSet {
            x: &x,
            labels: &y,
            row_patients: &p,
            col_patients: None,
        };
        let s = nested_select(&set, &[3.0], 5, &TrainConfig::default()).unwrap();
        assert_eq!(s.c, 3.0);
        assert!(s.inner_folds.is_empty());
    }

    #[test]
    fn ties_go_to_smallest_c() {
        let (x, y, p) = separable_set();
        let set = TrainingSet {
            x: &x,
            labels: &y,
            row_patients: &p,
            col_patients: None,
        };
        // Separable data: every C ranks perfectly, so all tie at 1.0.
        let s = nested_select(&set, &[10.0, 0.01, 1.0], 5, &TrainConfig::default()).unwrap();
        assert!(s.mean_auroc.iter().all(|m| *m == Some(1.0)));
        assert_eq!(s.c, 0.01);
        assert_eq!(s.inner_folds.len(), 5);
    }

    #[test]
    fn dominant_grid_point_wins() {
        // x1 = signal + noise, x2 = noise. A heavily regularised fit follows
        // the label correlation (mostly x1, noisy ranking); a weakly
        // regularised one finds x1 - x2 and ranks perfectly.
        let n = 60;
        let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let noise = ((i as f64 * 0.618_033_988_7).fract() - 0.5) * 4.0;
                let signal = if labels[i] { 0.1 } else { -0.1 };
                vec![signal + noise, noise]
            })
            .collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let p: Vec<PatientId> = (0..n).map(|i| PatientId::new(format!("p{:02}", i / 2))).collect();
        let set = TrainingSet {
            x: &x,
            labels: &labels,
            row_patients: &p,
            col_patients: None,
        };
        let s = nested_select(&set, &[1e-4, 100.0], 5, &TrainConfig::default()).unwrap();
        assert_eq!(s.mean_auroc[1], Some(1.0));
        assert!(s.mean_auroc[0].unwrap() < 1.0);
        assert_eq!(s.c, 100.0);
    }

    #[test]
    fn all_folds_single_class_is_an_error() {
        let x = FeatureMatrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let y = [true, true, false, false];
        let p: Vec<PatientId> = ["a", "a", "b", "b"].iter().map(|s| PatientId::new(*s)).collect();
        let set = TrainingSet {
            x: &x,
            labels: &y,
            row_patients: &p,
            col_patients: None,
        };
        assert!(matches!(
            nested_select(&set, &[0.1, 1.0], 2, &TrainConfig::default()),
            Err(Error::AllInnerFoldsSkipped)
        ));
    }

    #[test]
    fn standardizer_maps_missing_to_zero() {
        let x = FeatureMatrix::from_rows(&[vec![1.0, f64::NAN], vec![3.0, 2.0], vec![5.0, 4.0]]).unwrap();
        let s = Standardizer::fit(&x, &[0, 1], &[0, 1]);
        assert_eq!(s.mean, vec![2.0, 2.0]);
        assert_eq!(s.scale, vec![1.0, 1.0]);
        let t = s.transform(&x, &[0, 2], &[1, 0]);
        assert_eq!(t.row(0), &[0.0, -1.0]);
        assert_eq!(t.row(1), &[2.0, 3.0]);
    }
}
