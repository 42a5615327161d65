//! On-disk cache of distance matrices, keyed by cohort content.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};
use trajsim::{DistanceMatrix, InstanceId, Method, Modality};

/// Hex digest of the cohort bytes and the label horizon. Instances and labels
/// are a function of both, so equal keys mean equal labelled instance sets.
pub fn cohort_key(cohort: &[u8], horizon: u32) -> String {
    let mut hasher = Sha256::new();
    hasher.update(cohort);
    hasher.update(b"\0horizon=");
    hasher.update(horizon.to_string().as_bytes());
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub struct DistanceCache {
    dir: PathBuf,
    key: String,
}

impl DistanceCache {
    pub fn open(dir: &Path, key: String) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating cache directory {}", dir.display()))?;
        Ok(DistanceCache { dir: dir.to_path_buf(), key })
    }

    fn path(&self, method: Method, modality: &Modality) -> PathBuf {
        self.dir.join(format!("{}-{}-{}.tsv", self.key, method, modality))
    }

    /// A cached matrix, if one exists and covers exactly `ids`. Unreadable
    /// or stale entries count as misses.
    pub fn load(&self, method: Method, modality: &Modality, ids: &[InstanceId]) -> Option<DistanceMatrix> {
        let text = fs::read_to_string(self.path(method, modality)).ok()?;
        let matrix = DistanceMatrix::parse_text(&text).ok()?;
        let fits = matrix.method == method
            && &matrix.modality == modality
            && matrix.row_ids() == ids
            && matrix.col_ids() == ids;
        fits.then_some(matrix)
    }

    pub fn store(&self, matrix: &DistanceMatrix) -> Result<()> {
        let path = self.path(matrix.method, &matrix.modality);
        // Write then rename so a concurrent reader never sees half a file.
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        fs::write(&tmp, matrix.to_text()).with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, &path).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
