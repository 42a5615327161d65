//! Leave-one-patient-out evaluation of the similarity methods.
//!
//! Distance methods use, for each instance, its distances to every training
//! instance as features (one block per modality). Distances involving an
//! instance that lacks a modality are missing; they are completed by a
//! low-rank factorization fitted on the training rows of the fold, and test
//! rows are projected onto the fitted column factors. The snapshot method
//! uses the final visit's raw features with missing modalities set to the
//! training mean.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::Serialize;

use crate::cohort::{Cohort, Instance, InstanceId, Modality, PatientId};
use crate::error::{Error, Result};
use crate::imputation::{fit_factorization, select_factorization, FactorConfig, MaskedMatrix};
use crate::model::{train, FeatureMatrix, TrainConfig};
use crate::similarity::{pairwise_distances, DistanceMatrix, Method};

use super::cv::{make_folds, nested_select, Standardizer, TrainingSet};
use super::metrics::{contingency, delong_ci, delong_ztest, top_differences, ConfidenceInterval, Contingency, ZTest};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
    /// `None` uses every modality present in the cohort.
    pub modalities: Option<Vec<Modality>>,
    pub grid_c: Vec<f64>,
    pub grid_rank: Vec<usize>,
    pub grid_lambda: Vec<f64>,
    pub inner_folds: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub max_iter: usize,
    pub penalize_bias: bool,
    pub factor_sweeps: usize,
    pub factor_tolerance: f64,
    pub top_k: usize,
    pub cutoff: f64,
    /// Evaluate folds on the rayon pool. Results do not depend on it.
    #[serde(skip)]
    pub parallel: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            methods: Method::ALL.to_vec(),
            modalities: None,
            grid_c: vec![0.01, 0.1, 1.0, 10.0, 100.0],
            grid_rank: vec![2, 5, 10],
            grid_lambda: vec![0.01, 0.1, 1.0],
            inner_folds: 5,
            seed: 0,
            tolerance: 1e-6,
            max_iter: 100,
            penalize_bias: true,
            factor_sweeps: 100,
            factor_tolerance: 1e-5,
            top_k: 10,
            cutoff: 0.5,
            parallel: true,
        }
    }
}

impl EvalConfig {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            c: 1.0,
            tolerance: self.tolerance,
            max_iter: self.max_iter,
            penalize_bias: self.penalize_bias,
        }
    }

    fn factor_config(&self) -> FactorConfig {
        FactorConfig {
            max_sweeps: self.factor_sweeps,
            tolerance: self.factor_tolerance,
            seed: self.seed,
            ..FactorConfig::default()
        }
    }

    pub fn resolve_modalities(&self, cohort: &Cohort) -> Result<Vec<Modality>> {
        let present = cohort.modalities();
        match &self.modalities {
            Some(list) => {
                for m in list {
                    if !present.contains(m) {
                        return Err(Error::UnknownModality(m.to_string()));
                    }
                }
                Ok(list.clone())
            }
            None if present.is_empty() => Err(Error::InvalidCohort("cohort has no features".into())),
            None => Ok(present.into_iter().collect()),
        }
    }
}

/// What one outer fold saw, for auditing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldTrace {
    pub test_patient: PatientId,
    pub test_ids: Vec<InstanceId>,
    pub train_ids: Vec<InstanceId>,
    /// Instance behind each distance column, in model feature order.
    pub column_ids: Vec<InstanceId>,
    /// Rows the factorization was fitted on; empty when nothing was missing.
    pub imputation_ids: Vec<InstanceId>,
    /// Instances of each inner validation group.
    pub inner_folds: Vec<Vec<InstanceId>>,
    pub c: f64,
    pub factorization: Option<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodResult {
    pub method: Method,
    /// Out-of-fold probabilities, aligned with [`EvalReport::instances`].
    pub probabilities: Vec<f64>,
    pub ci: ConfidenceInterval,
    pub folds: Vec<FoldTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub a: Method,
    pub b: Method,
    pub ztest: ZTest,
    pub contingency: Contingency,
    pub mcnemar_p: f64,
    /// Indices into [`EvalReport::instances`], largest probability gap first.
    pub top: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub horizon: u32,
    pub modalities: Vec<Modality>,
    pub instances: Vec<Instance>,
    pub labels: Vec<bool>,
    pub methods: Vec<MethodResult>,
    pub comparisons: Vec<Comparison>,
}

impl EvalReport {
    pub fn method(&self, method: Method) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.method == method)
    }

    pub fn comparison(&self, a: Method, b: Method) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.a == a && c.b == b)
    }
}

/// Pairwise distances over the labelled instances, one matrix per modality.
pub fn method_distances(cohort: &Cohort, method: Method, modalities: &[Modality]) -> Result<Vec<DistanceMatrix>> {
    let labeled = cohort.labeled_instances();
    modalities
        .iter()
        .map(|m| pairwise_distances(&labeled, m, method))
        .collect()
}

/// Runs every configured method, computing distances on the fly.
pub fn evaluate(cohort: &Cohort, config: &EvalConfig) -> Result<EvalReport> {
    evaluate_with(cohort, config, |method, modalities| method_distances(cohort, method, modalities))
}

/// As [`evaluate`], with distance matrices supplied by `distances` (for
/// example from a cache). Each matrix must cover the labelled instances in
/// cohort order.
pub fn evaluate_with<F>(cohort: &Cohort, config: &EvalConfig, mut distances: F) -> Result<EvalReport>
where
    F: FnMut(Method, &[Modality]) -> Result<Vec<DistanceMatrix>>,
{
    if config.methods.is_empty() {
        return Err(Error::InvalidConfig("no methods requested".into()));
    }
    let modalities = config.resolve_modalities(cohort)?;
    let labeled: Vec<&Instance> = cohort.labeled_instances();
    let labels: Vec<bool> = labeled.iter().map(|i| i.label == Some(true)).collect();
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::SingleClass);
    }
    let plan = make_folds(cohort)?;
    let index: std::collections::HashMap<&InstanceId, usize> =
        labeled.iter().enumerate().map(|(k, i)| (&i.id, k)).collect();
    let folds: Vec<(Vec<usize>, Vec<usize>, PatientId)> = plan
        .folds
        .iter()
        .map(|f| {
            (
                f.train.iter().map(|id| index[id]).collect(),
                f.test.iter().map(|id| index[id]).collect(),
                f.test_patient.clone(),
            )
        })
        .collect();

    let mut methods = Vec::new();
    for &method in &config.methods {
        let features = match method {
            Method::Snapshot => Features::Snapshot(snapshot_matrix(&labeled, &modalities)?),
            _ => {
                let blocks = distances(method, &modalities)?;
                for block in &blocks {
                    let ids: Vec<&InstanceId> = labeled.iter().map(|i| &i.id).collect();
                    if block.row_ids().iter().collect::<Vec<_>>() != ids
                        || block.col_ids().iter().collect::<Vec<_>>() != ids
                    {
                        return Err(Error::InvalidConfig(format!(
                            "{} distances for {} do not cover the labelled instances",
                            method, block.modality
                        )));
                    }
                }
                Features::Distances(blocks)
            }
        };
        let ctx = FoldContext {
            config,
            labeled: &labeled,
            labels: &labels,
            features: &features,
        };
        let run = |fold: &(Vec<usize>, Vec<usize>, PatientId)| ctx.run(&fold.0, &fold.1, &fold.2);
        let outcomes: Vec<(Vec<f64>, FoldTrace)> = if config.parallel {
            folds.par_iter().map(run).collect::<Result<_>>()?
        } else {
            folds.iter().map(run).collect::<Result<_>>()?
        };
        let mut probabilities = vec![f64::NAN; labeled.len()];
        let mut traces = Vec::with_capacity(outcomes.len());
        for ((_, test, _), (probs, trace)) in folds.iter().zip(outcomes) {
            for (&i, p) in test.iter().zip(probs) {
                probabilities[i] = p;
            }
            traces.push(trace);
        }
        let ci = delong_ci(&probabilities, &labels, 0.95)?;
        methods.push(MethodResult {
            method,
            probabilities,
            ci,
            folds: traces,
        });
    }

    let mut comparisons = Vec::new();
    for i in 0..methods.len() {
        for j in i + 1..methods.len() {
            let (a, b) = (&methods[i], &methods[j]);
            let table = contingency(&a.probabilities, &b.probabilities, &labels, config.cutoff)?;
            comparisons.push(Comparison {
                a: a.method,
                b: b.method,
                ztest: delong_ztest(&a.probabilities, &b.probabilities, &labels)?,
                mcnemar_p: table.mcnemar_p(),
                contingency: table,
                top: top_differences(&a.probabilities, &b.probabilities, config.top_k)?,
            });
        }
    }
    Ok(EvalReport {
        config: config.clone(),
        horizon: cohort.horizon,
        modalities,
        instances: labeled.into_iter().cloned().collect(),
        labels,
        methods,
        comparisons,
    })
}

enum Features {
    Snapshot(FeatureMatrix),
    Distances(Vec<DistanceMatrix>),
}

/// Final-visit features per modality, NaN where the modality is absent.
fn snapshot_matrix(labeled: &[&Instance], modalities: &[Modality]) -> Result<FeatureMatrix> {
    let dims: Vec<usize> = modalities
        .iter()
        .map(|m| {
            labeled
                .iter()
                .flat_map(|i| i.visits.iter())
                .find_map(|v| v.features(m).map(<[f64]>::len))
                .unwrap_or(0)
        })
        .collect();
    let rows: Vec<Vec<f64>> = labeled
        .iter()
        .map(|inst| {
            modalities
                .iter()
                .zip(&dims)
                .flat_map(|(m, &d)| match inst.last_visit().features(m) {
                    Some(v) => v.to_vec(),
                    None => vec![f64::NAN; d],
                })
                .collect()
        })
        .collect();
    FeatureMatrix::from_rows(&rows)
}

struct FoldContext<'a> {
    config: &'a EvalConfig,
    labeled: &'a [&'a Instance],
    labels: &'a [bool],
    features: &'a Features,
}

impl FoldContext<'_> {
    fn run(&self, train_rows: &[usize], test_rows: &[usize], patient: &PatientId) -> Result<(Vec<f64>, FoldTrace)> {
        let ids = |rows: &[usize]| -> Vec<InstanceId> { rows.iter().map(|&i| self.labeled[i].id.clone()).collect() };
        let mut trace = FoldTrace {
            test_patient: patient.clone(),
            test_ids: ids(test_rows),
            train_ids: ids(train_rows),
            column_ids: Vec::new(),
            imputation_ids: Vec::new(),
            inner_folds: Vec::new(),
            c: f64::NAN,
            factorization: None,
        };
        // Rows: training rows first, then test rows.
        let (x, col_owners) = match self.features {
            Features::Snapshot(all) => {
                let data = train_rows.iter().chain(test_rows).flat_map(|&i| all.row(i).to_vec()).collect();
                (FeatureMatrix::new(train_rows.len() + test_rows.len(), all.cols(), data)?, None)
            }
            Features::Distances(blocks) => {
                let (x, columns) = self.distance_features(blocks, train_rows, test_rows, &mut trace)?;
                trace.column_ids = columns.iter().map(|&j| self.labeled[j].id.clone()).collect();
                let owners: Vec<PatientId> = columns.iter().map(|&j| self.labeled[j].patient_id.clone()).collect();
                (x, Some(owners))
            }
        };
        let n_train = train_rows.len();
        let all_cols: Vec<usize> = (0..x.cols()).collect();
        let train_idx: Vec<usize> = (0..n_train).collect();
        let x_train = FeatureMatrix::new(
            n_train,
            x.cols(),
            train_idx.iter().flat_map(|&i| x.row(i).to_vec()).collect(),
        )?;
        let y_train: Vec<bool> = train_rows.iter().map(|&i| self.labels[i]).collect();
        let row_patients: Vec<PatientId> = train_rows.iter().map(|&i| self.labeled[i].patient_id.clone()).collect();

        let set = TrainingSet {
            x: &x_train,
            labels: &y_train,
            row_patients: &row_patients,
            col_patients: col_owners.as_deref(),
        };
        let selection = nested_select(&set, &self.config.grid_c, self.config.inner_folds, &self.config.train_config())?;
        trace.c = selection.c;
        trace.inner_folds = selection
            .inner_folds
            .iter()
            .map(|group| {
                let group: BTreeSet<&PatientId> = group.iter().collect();
                train_rows
                    .iter()
                    .filter(|&&i| group.contains(&self.labeled[i].patient_id))
                    .map(|&i| self.labeled[i].id.clone())
                    .collect()
            })
            .collect();

        let scaler = Standardizer::fit(&x_train, &train_idx, &all_cols);
        let xs = scaler.transform(&x_train, &train_idx, &all_cols);
        let model = train(&xs, &y_train, &TrainConfig { c: selection.c, ..self.config.train_config() })?;
        let test_idx: Vec<usize> = (n_train..x.rows()).collect();
        let xt = scaler.transform(&x, &test_idx, &all_cols);
        let probs = (0..xt.rows())
            .map(|i| model.predict_proba(xt.row(i)))
            .collect::<Result<Vec<f64>>>()?;
        Ok((probs, trace))
    }

    /// Builds the completed distance features for training then test rows and
    /// returns them with the instance index behind each column.
    fn distance_features(
        &self,
        blocks: &[DistanceMatrix],
        train_rows: &[usize],
        test_rows: &[usize],
        trace: &mut FoldTrace,
    ) -> Result<(FeatureMatrix, Vec<usize>)> {
        // A column is kept only if its training instance has the modality.
        let mut layout: Vec<(usize, usize)> = Vec::new();
        for (b, block) in blocks.iter().enumerate() {
            for &j in train_rows {
                if block.get(j, j).is_some() {
                    layout.push((b, j));
                }
            }
        }
        if layout.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        let row_entries = |i: usize| -> Vec<Option<f64>> { layout.iter().map(|&(b, j)| blocks[b].get(i, j)).collect() };
        let train_entries: Vec<Vec<Option<f64>>> = train_rows.iter().map(|&i| row_entries(i)).collect();
        let test_entries: Vec<Vec<Option<f64>>> = test_rows.iter().map(|&i| row_entries(i)).collect();
        let missing = train_entries.iter().chain(&test_entries).flatten().any(Option::is_none);
        let cols = layout.len();
        let mut data = Vec::with_capacity((train_rows.len() + test_rows.len()) * cols);
        if missing {
            let col_names: Vec<String> = layout
                .iter()
                .map(|&(b, j)| format!("{}:{}", blocks[b].modality, self.labeled[j].id))
                .collect();
            let masked = MaskedMatrix::from_rows(&train_entries)?
                .with_ids(trace.train_ids.iter().map(ToString::to_string).collect(), col_names)?;
            let base = self.config.factor_config();
            let (rank, lambda) = select_factorization(&masked, &self.config.grid_rank, &self.config.grid_lambda, &base)?;
            let model = fit_factorization(&masked, &FactorConfig { rank, lambda, ..base })?;
            data.extend(model.complete(&masked)?);
            for row in &test_entries {
                data.extend(model.project_row(row)?);
            }
            trace.imputation_ids = trace.train_ids.clone();
            trace.factorization = Some((rank, lambda));
        } else {
            data.extend(train_entries.iter().chain(&test_entries).flatten().map(|v| v.expect("no missing entries")));
        }
        let x = FeatureMatrix::new(train_rows.len() + test_rows.len(), cols, data)?;
        Ok((x, layout.into_iter().map(|(_, j)| j).collect()))
    }
}

/// Ensures no test instance was visible to its fold through training columns,
/// imputation fitting or inner validation groups.
pub fn audit_leakage(trace: &FoldTrace) -> std::result::Result<(), Vec<InstanceId>> {
    let test: BTreeSet<&InstanceId> = trace.test_ids.iter().collect();
    let seen: BTreeSet<&InstanceId> = trace
        .column_ids
        .iter()
        .chain(&trace.imputation_ids)
        .chain(trace.inner_folds.iter().flatten())
        .chain(&trace.train_ids)
        .collect();
    let leaked: Vec<InstanceId> = test.intersection(&seen).map(|&id| id.clone()).collect();
    if leaked.is_empty() {
        Ok(())
    } else {
        Err(leaked)
    }
}
