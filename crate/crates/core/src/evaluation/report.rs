//! Text and line-delimited JSON renderings of an [`EvalReport`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;
use serde_json::{json, Value};

use crate::cohort::{Diagnosis, Instance, Modality};
use crate::error::Result;

use super::pipeline::EvalReport;

#[derive(Serialize)]
struct TrajectoryPoint<'a> {
    month: u32,
    diagnosis: Diagnosis,
    features: &'a BTreeMap<Modality, Vec<f64>>,
}

fn trajectory(instance: &Instance) -> Vec<TrajectoryPoint<'_>> {
    instance
        .visits
        .iter()
        .map(|v| TrajectoryPoint {
            month: v.month,
            diagnosis: v.diagnosis,
            features: &v.features,
        })
        .collect()
}

impl EvalReport {
    /// Human-readable summary: one row per method, then pairwise tests and
    /// contingency tables.
    pub fn to_text(&self) -> String {
        let positives = self.labels.iter().filter(|&&l| l).count();
        let mut out = String::new();
        let _ = writeln!(out, "trajsim evaluation");
        let _ = writeln!(out, "horizon: {} months", self.horizon);
        let names: Vec<&str> = self.modalities.iter().map(Modality::as_str).collect();
        let _ = writeln!(out, "modalities: {}", names.join(", "));
        let _ = writeln!(
            out,
            "instances: {} ({} positive, {} negative)",
            self.labels.len(),
            positives,
            self.labels.len() - positives
        );
        let _ = writeln!(out, "seed: {}", self.config.seed);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<12} {:>7}  95% CI", "method", "AUROC");
        for m in &self.methods {
            let _ = writeln!(
                out,
                "{:<12} {:>7.3}  {:.3} - {:.3}",
                m.method.name(),
                m.ci.auroc,
                m.ci.lower,
                m.ci.upper
            );
        }
        if !self.comparisons.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(out, "paired DeLong tests (two-sided)");
            for c in &self.comparisons {
                let _ = writeln!(
                    out,
                    "  {} vs {}: dAUROC {:+.3}, z = {:.3}, p = {:.4}",
                    c.a.name(),
                    c.b.name(),
                    c.ztest.auroc_a - c.ztest.auroc_b,
                    c.ztest.z,
                    c.ztest.p
                );
            }
            let _ = writeln!(out);
            let _ = writeln!(out, "contingency at cutoff {}", self.config.cutoff);
            for c in &self.comparisons {
                let t = &c.contingency;
                let _ = writeln!(out, "  {} vs {}", c.a.name(), c.b.name());
                let _ = writeln!(
                    out,
                    "    both correct {}, {} only {}, {} only {}, both wrong {}",
                    t.both_correct,
                    c.a.name(),
                    t.a_only,
                    c.b.name(),
                    t.b_only,
                    t.both_wrong
                );
                let _ = writeln!(
                    out,
                    "    positives correct only under {}: {}; only under {}: {}; McNemar p = {:.4}",
                    c.a.name(),
                    t.positives_a_only,
                    c.b.name(),
                    t.positives_b_only,
                    c.mcnemar_p
                );
            }
        }
        out
    }

    /// Machine-readable records, one JSON object per line, each tagged with
    /// a `record` field.
    pub fn records(&self) -> Vec<Value> {
        let mut out = vec![json!({
            "record": "config",
            "config": self.config,
            "horizon": self.horizon,
            "modalities": self.modalities,
            "instances": self.labels.len(),
        })];
        for m in &self.methods {
            out.push(json!({
                "record": "method",
                "method": m.method,
                "auroc": m.ci.auroc,
                "lower": m.ci.lower,
                "upper": m.ci.upper,
                "variance": m.ci.variance,
            }));
        }
        for c in &self.comparisons {
            out.push(json!({
                "record": "ztest",
                "a": c.a,
                "b": c.b,
                "auroc_a": c.ztest.auroc_a,
                "auroc_b": c.ztest.auroc_b,
                "z": c.ztest.z,
                "p": c.ztest.p,
            }));
            out.push(json!({
                "record": "contingency",
                "a": c.a,
                "b": c.b,
                "cutoff": self.config.cutoff,
                "table": c.contingency,
                "mcnemar_p": c.mcnemar_p,
            }));
        }
        for m in &self.methods {
            for (fold, trace) in m.folds.iter().enumerate() {
                for id in &trace.test_ids {
                    let k = self
                        .instances
                        .iter()
                        .position(|i| &i.id == id)
                        .expect("fold ids come from the instance list");
                    out.push(json!({
                        "record": "prediction",
                        "method": m.method,
                        "instance": id,
                        "patient": self.instances[k].patient_id,
                        "label": self.labels[k],
                        "probability": m.probabilities[k],
                        "fold": fold,
                        "c": trace.c,
                        "factorization": trace.factorization,
                    }));
                }
            }
        }
        for c in &self.comparisons {
            let (pa, pb) = (
                &self.method(c.a).expect("compared methods exist").probabilities,
                &self.method(c.b).expect("compared methods exist").probabilities,
            );
            for (rank, &k) in c.top.iter().enumerate() {
                let inst = &self.instances[k];
                out.push(json!({
                    "record": "top_difference",
                    "a": c.a,
                    "b": c.b,
                    "rank": rank + 1,
                    "instance": inst.id,
                    "label": self.labels[k],
                    "probability_a": pa[k],
                    "probability_b": pb[k],
                    "difference": pa[k] - pb[k],
                    "trajectory": trajectory(inst),
                }));
            }
        }
        out
    }

    pub fn write_records<W: Write>(&self, mut writer: W) -> Result<()> {
        for record in self.records() {
            serde_json::to_writer(&mut writer, &record).map_err(std::io::Error::from)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }
}
