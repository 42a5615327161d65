//! Seeded synthetic cohorts.
//!
//! Each patient carries a latent disease stage that grows linearly in time
//! from a random enrollment stage; the diagnosis is AD once the stage reaches
//! 1. Progressors convert within follow-up and their final visit is the first
//! scheduled one at or after conversion. The others drift too slowly to
//! convert and are last seen at least one horizon after their earlier
//! visits. Biomarkers are a patient-specific baseline minus
//! `slope_separation` times a per-feature loading times the stage, plus
//! Gaussian noise. Because baselines vary between patients, the level of a
//! biomarker at one visit says little on its own, while its decline across
//! visits tracks the progression rate.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, WeightedIndex};
use serde::Serialize;

use crate::cohort::{Cohort, Diagnosis, Modality, PatientId, PatientRecord, Visit, DEFAULT_HORIZON};
use crate::error::{Error, Result};

/// How PET availability is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PetMode {
    /// One draw per patient; a patient has PET at every visit or at none.
    PerPatient,
    /// One draw per visit.
    PerVisit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    pub seed: u64,
    pub horizon: u32,
    /// `visit_count_weights[k]` is the relative frequency of `k` visits.
    pub visit_count_weights: Vec<f64>,
    /// Follow-up months after the month-0 enrollment visit.
    pub visit_months: Vec<u32>,
    pub pet_mode: PetMode,
    pub pet_probability: f64,
    pub progressor_fraction: f64,
    /// Months from enrollment to conversion for progressors.
    pub progression_months: (f64, f64),
    /// Upper bound on the stage change per month of non-progressors.
    pub stable_rate_max: f64,
    /// Range of the stage at enrollment, below the AD threshold of 1.
    pub enrollment_stage: (f64, f64),
    pub mri_dim: usize,
    pub pet_dim: usize,
    /// Biomarker drop per unit of stage; 0 decouples features from disease.
    pub slope_separation: f64,
    /// Spread of patient baselines.
    pub baseline_sd: f64,
    /// Per-visit measurement noise.
    pub noise_sd: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_patients: 500,
            seed: 0,
            horizon: DEFAULT_HORIZON,
            // Median 3, 32% with four or more.
            visit_count_weights: vec![0.0, 0.0, 0.22, 0.46, 0.12, 0.07, 0.05, 0.04, 0.02, 0.02],
            visit_months: vec![6, 12, 18, 24, 36, 48, 60, 72, 84, 96, 108],
            pet_mode: PetMode::PerPatient,
            pet_probability: 0.35,
            progressor_fraction: 0.5,
            progression_months: (36.0, 96.0),
            stable_rate_max: 0.0008,
            enrollment_stage: (0.0, 0.9),
            mri_dim: 3,
            pet_dim: 2,
            slope_separation: 2.0,
            baseline_sd: 1.0,
            noise_sd: 0.1,
        }
    }
}

impl GeneratorConfig {
    /// The default cohort with a chosen signal strength.
    pub fn planted(n_patients: usize, seed: u64, slope_separation: f64) -> Self {
        GeneratorConfig {
            n_patients,
            seed,
            slope_separation,
            ..GeneratorConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.visit_count_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("visit count weights must be non-negative");
        }
        if self.visit_count_weights.iter().take(2).any(|&w| w > 0.0) {
            return bad("patients need at least two visits");
        }
        if self.visit_count_weights.iter().sum::<f64>() <= 0.0 {
            return bad("visit count weights sum to zero");
        }
        let mut months = self.visit_months.clone();
        months.sort_unstable();
        months.dedup();
        if months != self.visit_months || months.first() == Some(&0) {
            return bad("visit months must be increasing and positive");
        }
        if self.visit_count_weights.len() > self.visit_months.len() + 2 {
            return bad("more visits than available months");
        }
        if !prob(self.pet_probability) || !prob(self.progressor_fraction) {
            return bad("probabilities must lie in [0, 1]");
        }
        let (lo, hi) = self.progression_months;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad("progression months must be a positive range");
        }
        let (lo, hi) = self.enrollment_stage;
        if !(0.0 <= lo && lo <= hi && hi < 1.0) {
            return bad("enrollment stage must lie in [0, 1)");
        }
        if !(self.stable_rate_max >= 0.0 && self.stable_rate_max.is_finite()) {
            return bad("stable rate must be non-negative");
        }
        if self.mri_dim == 0 {
            return bad("MRI needs at least one feature");
        }
        for v in [self.slope_separation, self.baseline_sd, self.noise_sd] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad("signal and noise scales must be non-negative");
            }
        }
        Ok(())
    }
}

/// Redraws of the enrollment stage before a schedule is accepted short of
/// its visit count.
const MAX_ATTEMPTS: usize = 64;

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Generates patient records in id order.
pub fn generate_patients(config: &GeneratorConfig) -> Result<Vec<PatientRecord>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let counts = WeightedIndex::new(&config.visit_count_weights)
        .map_err(|e| Error::InvalidConfig(format!("visit count weights: {e}")))?;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let width = config.n_patients.max(1).to_string().len();
    // Loadings are shared by all patients: some biomarkers react more.
    let mri_load: Vec<f64> = (0..config.mri_dim).map(|k| 1.0 - 0.2 * k as f64 / config.mri_dim as f64).collect();
    let pet_load: Vec<f64> = (0..config.pet_dim).map(|k| 0.8 - 0.2 * k as f64 / config.pet_dim.max(1) as f64).collect();

    let mut patients = Vec::with_capacity(config.n_patients);
    for p in 0..config.n_patients {
        let n_visits = counts.sample(&mut rng);
        let progressor = rng.gen_bool(config.progressor_fraction);
        // Progressors cross the whole stage range in `progression_months`, so
        // the enrollment stage decides how much of that is left. Follow-up
        // ends at a final visit: the first slot at or after conversion for
        // progressors, and one horizon past an equally distributed draw for
        // the others. Progressors are seen within one horizon of converting
        // and the others at least one horizon before their final visit, so
        // every instance but the last carries the patient's outcome and the
        // number of visits says nothing about the label. Enrollment is
        // redrawn while the schedule cannot hold the visit count.
        let horizon = config.horizon as f64;
        let grid = &config.visit_months;
        let wanted = n_visits - 2;
        let mut attempt = 0;
        let (stage0, rate, end, near, far) = loop {
            attempt += 1;
            let stage0 = uniform(&mut rng, config.enrollment_stage);
            let span = uniform(&mut rng, config.progression_months);
            let (rate, target) = if progressor {
                (1.0 / span, (1.0 - stage0) * span)
            } else {
                let rate = uniform(&mut rng, (0.0, config.stable_rate_max));
                let other = uniform(&mut rng, config.enrollment_stage);
                (rate, (1.0 - other) * span + horizon)
            };
            let end = grid.partition_point(|&m| (m as f64) < target).min(grid.len() - 1);
            let edge = grid[end] as f64 - horizon;
            let split = grid[..end].partition_point(|&m| (m as f64) < edge);
            let (near, far) = if progressor { (split..end, 0..split) } else { (0..split, split..end) };
            // A progressor's second visit may fall outside the window: no
            // instance ends there.
            let spare = far.len().min(usize::from(progressor));
            if near.len() + spare >= wanted || attempt == MAX_ATTEMPTS {
                break (stage0, rate, end, near, far);
            }
        };
        let first = wanted.min(near.len());
        let second = (wanted - first).min(far.len());
        let mut months: Vec<u32> = sample(&mut rng, near.len(), first)
            .into_iter()
            .map(|k| grid[near.start + k])
            .chain(sample(&mut rng, far.len(), second).into_iter().map(|k| grid[far.start + k]))
            .collect();
        months.sort_unstable();
        months.insert(0, 0);
        months.push(grid[end]);

        let mri_base: Vec<f64> = (0..config.mri_dim)
            .map(|_| config.baseline_sd * std_normal.sample(&mut rng))
            .collect();
        let pet_base: Vec<f64> = (0..config.pet_dim)
            .map(|_| config.baseline_sd * std_normal.sample(&mut rng))
            .collect();
        let patient_pet = rng.gen_bool(config.pet_probability);

        let mut visits = Vec::with_capacity(n_visits);
        for &month in &months {
            let stage = stage0 + rate * month as f64;
            let diagnosis = if stage >= 1.0 { Diagnosis::Ad } else { Diagnosis::Mci };
            let draw = |rng: &mut ChaCha8Rng, base: &[f64], load: &[f64]| -> Vec<f64> {
                base.iter()
                    .zip(load)
                    .map(|(b, l)| b - config.slope_separation * l * stage + config.noise_sd * std_normal.sample(rng))
                    .collect()
            };
            let mut visit = Visit::new(month, diagnosis).with(Modality::mri(), draw(&mut rng, &mri_base, &mri_load));
            let has_pet = match config.pet_mode {
                PetMode::PerPatient => patient_pet,
                PetMode::PerVisit => rng.gen_bool(config.pet_probability),
            };
            if config.pet_dim > 0 {
                let values = draw(&mut rng, &pet_base, &pet_load);
                if has_pet {
                    visit = visit.with(Modality::pet(), values);
                }
            }
            visits.push(visit);
        }
        let id = PatientId::new(format!("S{:0width$}", p + 1));
        patients.push(PatientRecord::new(id, visits)?);
    }
    Ok(patients)
}

pub fn generate(config: &GeneratorConfig) -> Result<Cohort> {
    Cohort::new(generate_patients(config)?, config.horizon)
}

/// Default cohort whose label signal is carried by biomarker decline.
pub fn planted_signal_cohort(n_patients: usize, seed: u64, slope_separation: f64) -> Result<Cohort> {
    generate(&GeneratorConfig::planted(n_patients, seed, slope_separation))
}

/// Summary statistics of a generated cohort.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortSummary {
    pub patients: usize,
    pub visits: usize,
    pub visit_histogram: BTreeMap<usize, usize>,
    pub median_visits: f64,
    pub fraction_four_or_more: f64,
    pub pet_fraction: f64,
    pub instances: usize,
    pub labeled: usize,
    pub positives: usize,
}

pub fn summarize(cohort: &Cohort) -> CohortSummary {
    let mut visit_histogram = BTreeMap::new();
    let mut counts: Vec<usize> = Vec::new();
    let (mut visits, mut pet) = (0usize, 0usize);
    for p in &cohort.patients {
        *visit_histogram.entry(p.visits.len()).or_insert(0) += 1;
        counts.push(p.visits.len());
        visits += p.visits.len();
        pet += p.visits.iter().filter(|v| v.features.contains_key(&Modality::pet())).count();
    }
    counts.sort_unstable();
    let median_visits = match counts.len() {
        0 => 0.0,
        n if n % 2 == 1 => counts[n / 2] as f64,
        n => (counts[n / 2 - 1] + counts[n / 2]) as f64 / 2.0,
    };
    let n = cohort.patients.len().max(1) as f64;
    let labeled = cohort.labeled_instances();
    CohortSummary {
        patients: cohort.patients.len(),
        visits,
        visit_histogram,
        median_visits,
        fraction_four_or_more: counts.iter().filter(|&&c| c >= 4).count() as f64 / n,
        pet_fraction: pet as f64 / visits.max(1) as f64,
        instances: cohort.instances.len(),
        labeled: labeled.len(),
        positives: labeled.iter().filter(|i| i.label == Some(true)).count(),
    }
}
