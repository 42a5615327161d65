//! Patient similarity from longitudinal records via subsequence alignment.
//!
//! The crate turns each patient's visit history into prediction instances,
//! compares instances with dynamic time warping under four endpoint
//! constraints, imputes block-missing distances with a low-rank factorization,
//! feeds the pairwise distances to an L2-regularised logistic regression and
//! evaluates everything under leave-one-patient-out cross-validation with
//! DeLong confidence intervals and paired tests.

pub mod alignment;
pub mod datagen;
pub mod cohort;
pub mod error;
pub mod evaluation;
pub mod imputation;
pub mod model;
pub mod series;
pub mod similarity;

#[cfg(any(test, feature = "oracle"))]
pub mod oracle;

pub use alignment::{align, AlignmentResult, Variant};
pub use cohort::{Cohort, Diagnosis, Instance, InstanceId, Modality, PatientId, PatientRecord, Visit};
pub use error::{Error, Result};
pub use series::Series;
pub use similarity::{DistanceMatrix, Method};
