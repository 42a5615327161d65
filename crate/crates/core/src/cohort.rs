//! Patients, visits, prediction instances and outcome labels.
//!
//! A patient with `V` visits yields one instance per visit index `v >= 3`,
//! each holding the first `v` visits. The instance is positive when an AD
//! diagnosis is recorded after the instance's last visit and no later than
//! `horizon` months past it, negative when the patient is seen still MCI at or
//! beyond the horizon, and censored otherwise.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::Series;

/// Default outcome horizon in months.
pub const DEFAULT_HORIZON: u32 = 36;

/// Minimum number of visits an instance covers.
pub const MIN_INSTANCE_VISITS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Diagnosis {
    #[serde(rename = "MCI")]
    Mci,
    #[serde(rename = "AD")]
    Ad,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Modality(String);

impl Modality {
    pub fn new(name: impl Into<String>) -> Self {
        Modality(name.into())
    }

    pub fn mri() -> Self {
        Modality::new("MRI")
    }

    pub fn pet() -> Self {
        Modality::new("PET")
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatientId(String);

impl PatientId {
    pub fn new(id: impl Into<String>) -> Self {
        PatientId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PatientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstanceId(String);

impl InstanceId {
    /// Identifier of the instance ending at the 1-based visit `end_visit`.
    pub fn for_visit(patient: &PatientId, end_visit: usize) -> Self {
        InstanceId(format!("{patient}@{end_visit}"))
    }

    pub fn new(id: impl Into<String>) -> Self {
        InstanceId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Visit {
    /// Months since enrollment.
    pub month: u32,
    pub diagnosis: Diagnosis,
    pub features: BTreeMap<Modality, Vec<f64>>,
}

impl Visit {
    pub fn new(month: u32, diagnosis: Diagnosis) -> Self {
        Visit {
            month,
            diagnosis,
            features: BTreeMap::new(),
        }
    }

    pub fn with(mut self, modality: Modality, values: Vec<f64>) -> Self {
        self.features.insert(modality, values);
        self
    }

    pub fn features(&self, modality: &Modality) -> Option<&[f64]> {
        self.features.get(modality).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub id: PatientId,
    pub visits: Vec<Visit>,
}

impl PatientRecord {
    /// Validates visit ordering and per-modality dimensions.
    pub fn new(id: PatientId, visits: Vec<Visit>) -> Result<Self> {
        let invalid = |reason: String| Error::InvalidPatient {
            patient: id.to_string(),
            reason,
        };
        if visits.is_empty() {
            return Err(invalid("no visits".into()));
        }
        for pair in visits.windows(2) {
            if pair[1].month <= pair[0].month {
                return Err(invalid(format!(
                    "visit months not strictly increasing ({} then {})",
                    pair[0].month, pair[1].month
                )));
            }
        }
        let mut dims: BTreeMap<&Modality, usize> = BTreeMap::new();
        for visit in &visits {
            for (modality, values) in &visit.features {
                if values.is_empty() {
                    return Err(invalid(format!("empty {modality} vector")));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(invalid(format!("non-finite {modality} value")));
                }
                let d = *dims.entry(modality).or_insert(values.len());
                if d != values.len() {
                    return Err(invalid(format!(
                        "{modality} dimension changes from {d} to {}",
                        values.len()
                    )));
                }
            }
        }
        Ok(PatientRecord { id, visits })
    }

    pub fn len(&self) -> usize {
        self.visits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visits.is_empty()
    }
}

/// The first `end_visit` visits of a patient together with the outcome label.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: InstanceId,
    pub patient_id: PatientId,
    /// Number of visits covered, `v` in `1..=V_p`.
    pub end_visit: usize,
    pub visits: Vec<Visit>,
    /// `None` when the outcome cannot be decided from the observed follow-up.
    pub label: Option<bool>,
}

impl Instance {
    /// The modality as a time series, present only if every visit of the
    /// prefix carries it.
    pub fn series(&self, modality: &Modality) -> Option<Series> {
        let rows: Option<Vec<&[f64]>> = self.visits.iter().map(|v| v.features(modality)).collect();
        Series::from_rows(&rows?).ok()
    }

    pub fn has_modality(&self, modality: &Modality) -> bool {
        self.visits.iter().all(|v| v.features.contains_key(modality))
    }

    pub fn last_visit(&self) -> &Visit {
        self.visits.last().expect("instances are never empty")
    }
}

/// Feature vector of the instance's final visit; `None` marks a missing
/// modality for downstream imputation.
pub fn snapshot_features<'a>(instance: &'a Instance, modality: &Modality) -> Option<&'a [f64]> {
    instance.last_visit().features(modality)
}

/// Outcome of the instance ending at `visits[end]` (0-based).
pub fn progression_label(visits: &[Visit], end: usize, horizon: u32) -> Option<bool> {
    let start = visits[end].month;
    let limit = start.saturating_add(horizon);
    let later = &visits[end + 1..];
    if later
        .iter()
        .any(|w| w.month <= limit && w.diagnosis == Diagnosis::Ad)
    {
        Some(true)
    } else if later
        .iter()
        .any(|w| w.month >= limit && w.diagnosis == Diagnosis::Mci)
    {
        Some(false)
    } else {
        None
    }
}

/// One instance per visit index `v` in `3..=V_p`; patients with fewer than
/// three visits contribute nothing.
pub fn expand_instances(patient: &PatientRecord, horizon: u32) -> Vec<Instance> {
    (MIN_INSTANCE_VISITS..=patient.visits.len())
        .map(|v| Instance {
            id: InstanceId::for_visit(&patient.id, v),
            patient_id: patient.id.clone(),
            end_visit: v,
            visits: patient.visits[..v].to_vec(),
            label: progression_label(&patient.visits, v - 1, horizon),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub patients: Vec<PatientRecord>,
    pub instances: Vec<Instance>,
    pub horizon: u32,
}

impl Cohort {
    /// Sorts patients by id, checks that ids are unique and that each
    /// modality has one dimension across the cohort, then expands instances.
    pub fn new(mut patients: Vec<PatientRecord>, horizon: u32) -> Result<Self> {
        patients.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in patients.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::InvalidCohort(format!(
                    "duplicate patient id {}",
                    pair[0].id
                )));
            }
        }
        let mut dims: BTreeMap<&Modality, usize> = BTreeMap::new();
        for patient in &patients {
            for visit in &patient.visits {
                for (modality, values) in &visit.features {
                    let d = *dims.entry(modality).or_insert(values.len());
                    if d != values.len() {
                        return Err(Error::InvalidCohort(format!(
                            "{modality} has dimension {d} and {} (patient {})",
                            values.len(),
                            patient.id
                        )));
                    }
                }
            }
        }
        let instances = patients
            .iter()
            .flat_map(|p| expand_instances(p, horizon))
            .collect();
        Ok(Cohort {
            patients,
            instances,
            horizon,
        })
    }

    pub fn modalities(&self) -> BTreeSet<Modality> {
        self.patients
            .iter()
            .flat_map(|p| p.visits.iter())
            .flat_map(|v| v.features.keys().cloned())
            .collect()
    }

    pub fn labeled_instances(&self) -> Vec<&Instance> {
        self.instances.iter().filter(|i| i.label.is_some()).collect()
    }

    pub fn patient(&self, id: &PatientId) -> Option<&PatientRecord> {
        self.patients
            .binary_search_by(|p| p.id.cmp(id))
            .ok()
            .map(|i| &self.patients[i])
    }
}

/// One line of the cohort file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VisitRecord {
    patient_id: String,
    month: u32,
    diagnosis: Diagnosis,
    #[serde(default)]
    features: BTreeMap<String, Vec<f64>>,
}

/// Reads line-delimited JSON visit records, one visit per line.
pub fn read_cohort<R: BufRead>(reader: R, horizon: u32) -> Result<Cohort> {
    let mut by_patient: BTreeMap<String, Vec<Visit>> = BTreeMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: VisitRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(lineno + 1, e.to_string()))?;
        let visit = Visit {
            month: record.month,
            diagnosis: record.diagnosis,
            features: record
                .features
                .into_iter()
                .map(|(k, v)| (Modality::new(k), v))
                .collect(),
        };
        by_patient.entry(record.patient_id).or_default().push(visit);
    }
    let patients = by_patient
        .into_iter()
        .map(|(id, mut visits)| {
            visits.sort_by_key(|v| v.month);
            PatientRecord::new(PatientId::new(id), visits)
        })
        .collect::<Result<Vec<_>>>()?;
    Cohort::new(patients, horizon)
}

pub fn parse_cohort(text: &str, horizon: u32) -> Result<Cohort> {
    read_cohort(text.as_bytes(), horizon)
}

/// Writes patients in the line-delimited format read by [`read_cohort`].
pub fn write_cohort<W: Write>(mut writer: W, patients: &[PatientRecord]) -> Result<()> {
    for patient in patients {
        for visit in &patient.visits {
            let record = VisitRecord {
                patient_id: patient.id.to_string(),
                month: visit.month,
                diagnosis: visit.diagnosis,
                features: visit
                    .features
                    .iter()
                    .map(|(k, v)| (k.to_string(), v.clone()))
                    .collect(),
            };
            serde_json::to_writer(&mut writer, &record).map_err(std::io::Error::from)?;
            writer.write_all(b"\n")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patient(id: &str, schedule: &[(u32, Diagnosis)]) -> PatientRecord {
        let visits = schedule
            .iter()
            .map(|&(m, d)| Visit::new(m, d).with(Modality::mri(), vec![m as f64]))
            .collect();
        PatientRecord::new(PatientId::new(id), visits).unwrap()
    }

    use Diagnosis::{Ad, Mci};

    #[test]
    fn five_visits_give_three_instances() {
        let p = patient("p", &[(0, Mci), (6, Mci), (12, Mci), (24, Mci), (36, Mci)]);
        let inst = expand_instances(&p, 36);
        assert_eq!(inst.len(), 3);
        assert_eq!(
            inst.iter().map(|i| i.end_visit).collect::<Vec<_>>(),
            vec![3, 4, 5]
        );
        assert_eq!(inst[1].visits, p.visits[..4].to_vec());
    }

    #[test]
    fn fewer_than_three_visits_give_nothing() {
        let p = patient("p", &[(0, Mci), (6, Mci)]);
        assert!(expand_instances(&p, 36).is_empty());
    }

    #[test]
    fn stable_beyond_horizon_is_negative() {
        let p = patient("p", &[(0, Mci), (6, Mci), (12, Mci), (60, Mci)]);
        assert_eq!(expand_instances(&p, 36)[0].label, Some(false));
    }

    #[test]
    fn progression_inside_horizon_is_positive() {
        let visits = vec![
            Visit::new(0, Mci),
            Visit::new(12, Mci),
            Visit::new(24, Ad),
        ];
        assert_eq!(progression_label(&visits, 0, 36), Some(true));
    }

    #[test]
    fn horizon_boundary_is_inclusive() {
        let visits = vec![Visit::new(0, Mci), Visit::new(36, Ad)];
        assert_eq!(progression_label(&visits, 0, 36), Some(true));
        let visits = vec![Visit::new(0, Mci), Visit::new(36, Mci)];
        assert_eq!(progression_label(&visits, 0, 36), Some(false));
        let visits = vec![Visit::new(0, Mci), Visit::new(35, Mci)];
        assert_eq!(progression_label(&visits, 0, 36), None);
        let visits = vec![Visit::new(0, Mci), Visit::new(37, Ad)];
        assert_eq!(progression_label(&visits, 0, 36), None);
    }

    #[test]
    fn one_patient_contributes_both_labels() {
        // Progression at month 48.
        let p = patient(
            "p",
            &[(0, Mci), (3, Mci), (6, Mci), (42, Mci), (48, Ad), (60, Ad)],
        );
        let labels: Vec<_> = expand_instances(&p, 36).iter().map(|i| i.label).collect();
        assert_eq!(labels, vec![Some(false), Some(true), Some(true), None]);

        let p = patient(
            "q",
            &[(0, Mci), (6, Mci), (12, Mci), (18, Mci), (60, Mci), (72, Ad)],
        );
        let labels: Vec<_> = expand_instances(&p, 36).iter().map(|i| i.label).collect();
        assert_eq!(labels, vec![Some(false), Some(false), Some(true), None]);
    }

    #[test]
    fn snapshot_is_the_final_visit() {
        let visits = vec![
            Visit::new(0, Mci).with(Modality::mri(), vec![9.0, 9.0]),
            Visit::new(6, Mci).with(Modality::mri(), vec![8.0, 8.0]),
            Visit::new(12, Mci)
                .with(Modality::mri(), vec![2.1, 3.0])
                .with(Modality::new("X"), vec![1.0]),
        ];
        let p = PatientRecord::new(PatientId::new("p"), visits).unwrap();
        let inst = &expand_instances(&p, 36)[0];
        assert_eq!(snapshot_features(inst, &Modality::mri()), Some(&[2.1, 3.0][..]));
        assert_eq!(snapshot_features(inst, &Modality::pet()), None);
        // Partially present modalities have no series.
        assert!(inst.series(&Modality::new("X")).is_none());
        assert_eq!(inst.series(&Modality::mri()).unwrap().len(), 3);
    }

    #[test]
    fn record_validation() {
        let bad = PatientRecord::new(
            PatientId::new("p"),
            vec![Visit::new(6, Mci), Visit::new(6, Mci)],
        );
        assert!(bad.is_err());
        let bad = PatientRecord::new(
            PatientId::new("p"),
            vec![
                Visit::new(0, Mci).with(Modality::mri(), vec![1.0]),
                Visit::new(6, Mci).with(Modality::mri(), vec![1.0, 2.0]),
            ],
        );
        assert!(bad.is_err());
        assert!(PatientRecord::new(PatientId::new("p"), vec![]).is_err());
    }

    #[test]
    fn cohort_file_round_trip() {
        let text = r#"{"patient_id":"b","month":0,"diagnosis":"MCI","features":{"MRI":[1.0,2.0]}}
{"patient_id":"a","month":12,"diagnosis":"AD","features":{"MRI":[0.5,0.25],"PET":[3.0]}}
{"patient_id":"a","month":0,"diagnosis":"MCI","features":{"MRI":[1.5,2.5]}}

{"patient_id":"b","month":6,"diagnosis":"MCI"}
"#;
        let cohort = parse_cohort(text, 36).unwrap();
        assert_eq!(cohort.patients.len(), 2);
        assert_eq!(cohort.patients[0].id.as_str(), "a");
        assert_eq!(cohort.patients[0].visits[0].month, 0);
        assert!(cohort.patients[1].visits[1].features.is_empty());
        let mut out = Vec::new();
        write_cohort(&mut out, &cohort.patients).unwrap();
        let again = parse_cohort(std::str::from_utf8(&out).unwrap(), 36).unwrap();
        assert_eq!(again, cohort);
    }

    #[test]
    fn cohort_file_errors() {
        assert!(matches!(
            parse_cohort("{\"patient_id\":\"a\"}\n", 36),
            Err(Error::Parse { line: 1, .. })
        ));
        let dup = "{\"patient_id\":\"a\",\"month\":0,\"diagnosis\":\"MCI\"}\n\
                   {\"patient_id\":\"a\",\"month\":0,\"diagnosis\":\"AD\"}\n";
        assert!(parse_cohort(dup, 36).is_err());
        let bad_dx = "{\"patient_id\":\"a\",\"month\":0,\"diagnosis\":\"CN\"}\n";
        assert!(parse_cohort(bad_dx, 36).is_err());
        let dims = "{\"patient_id\":\"a\",\"month\":0,\"diagnosis\":\"MCI\",\"features\":{\"MRI\":[1]}}\n\
                    {\"patient_id\":\"b\",\"month\":0,\"diagnosis\":\"MCI\",\"features\":{\"MRI\":[1,2]}}\n";
        assert!(matches!(
            parse_cohort(dims, 36),
            Err(Error::InvalidCohort(_))
        ));
    }

    proptest::proptest! {
        #[test]
        fn expansion_count_and_label_monotonicity(
            gaps in proptest::collection::vec(1u32..30, 0..10),
            convert in 0usize..12,
            horizon in 1u32..60,
        ) {
            // Months strictly increase; AD from visit `convert` on.
            let mut month = 0;
            let mut schedule = vec![];
            for (k, g) in std::iter::once(0).chain(gaps).enumerate() {
                month += g;
                schedule.push((month, if k >= convert { Ad } else { Mci }));
            }
            let p = patient("p", &schedule);
            let inst = expand_instances(&p, horizon);
            proptest::prop_assert_eq!(inst.len(), p.len().saturating_sub(2));
            let labels: Vec<_> = inst.iter().filter_map(|i| i.label).collect();
            if let Some(first) = labels.iter().position(|&l| l) {
                proptest::prop_assert!(labels[first..].iter().all(|&l| l));
            }
        }
    }
}
