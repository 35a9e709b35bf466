use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::plan::{ExperimentPlan, Setting};
use crate::error::Result;
use crate::labels::FillPolicy;
use crate::util::{atomic_write, mean, sample_std};

/// Score of one setting at one stage in one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub setting: Setting,
    pub repetition: usize,
    pub fold: usize,
    pub stage: usize,
    /// Absent when no test row had a known label at this stage.
    pub f1: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub setting: Setting,
    pub repetition: usize,
    pub fold: usize,
    pub message: String,
}

/// Row ids each run trained on (every training step) and tested on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAudit {
    pub repetition: usize,
    pub fold: usize,
    pub train_row_ids: Vec<usize>,
    pub test_row_ids: Vec<usize>,
}

impl RunAudit {
    pub fn is_clean(&self) -> bool {
        let train: BTreeSet<usize> = self.train_row_ids.iter().copied().collect();
        self.test_row_ids.iter().all(|id| !train.contains(id))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSeed {
    pub repetition: usize,
    pub fold: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub plan: ExperimentPlan,
    pub dataset_digest: String,
    pub fill_policy: FillPolicy,
    pub evaluation: String,
    pub runs: Vec<RunSeed>,
    pub errors: Vec<CellError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub setting: Setting,
    pub stage: usize,
    /// `None` when every run failed or had nothing to score.
    pub mean_f1: Option<f64>,
    pub std_f1: Option<f64>,
    /// Rows scored per repetition.
    pub n: usize,
    pub runs: usize,
}

#[derive(Debug, Clone)]
pub struct StageReport {
    pub rows: Vec<ReportRow>,
    pub runs: Vec<RunRecord>,
    pub errors: Vec<CellError>,
    pub audits: Vec<RunAudit>,
    pub manifest: Manifest,
}

impl StageReport {
    pub(crate) fn assemble(
        plan: &ExperimentPlan,
        runs: Vec<RunRecord>,
        errors: Vec<CellError>,
        audits: Vec<RunAudit>,
        manifest: Manifest,
    ) -> Self {
        let num_stages = runs.iter().map(|r| r.stage).max().unwrap_or(0);
        let mut grouped: BTreeMap<(Setting, usize), (Vec<f64>, usize)> = BTreeMap::new();
        for r in &runs {
            let e = grouped.entry((r.setting, r.stage)).or_default();
            e.0.extend(r.f1);
            e.1 += r.n;
        }
        let mut rows = Vec::new();
        for &setting in &plan.settings {
            for stage in 1..=num_stages {
                let (scores, n) = grouped.remove(&(setting, stage)).unwrap_or_default();
                let some = !scores.is_empty();
                rows.push(ReportRow {
                    setting,
                    stage,
                    mean_f1: some.then(|| mean(&scores)),
                    std_f1: some.then(|| sample_std(&scores)),
                    n: n / plan.repetitions,
                    runs: scores.len(),
                });
            }
        }
        Self {
            rows,
            runs,
            errors,
            audits,
            manifest,
        }
    }

    pub fn row(&self, setting: Setting, stage: usize) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.setting == setting && r.stage == stage)
    }

    pub fn mean_f1(&self, setting: Setting, stage: usize) -> Option<f64> {
        self.row(setting, stage).and_then(|r| r.mean_f1)
    }

    pub fn write_report_csv(&self, w: &mut dyn std::io::Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["setting", "stage", "mean_f1", "std_f1", "n"])?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.rows {
            out.write_record([
                r.setting.name().to_string(),
                r.stage.to_string(),
                fmt(r.mean_f1),
                fmt(r.std_f1),
                r.n.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_runs_csv(&self, w: &mut dyn std::io::Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["setting", "repetition", "fold", "stage", "f1", "n"])?;
        for r in &self.runs {
            out.write_record([
                r.setting.name().to_string(),
                r.repetition.to_string(),
                r.fold.to_string(),
                r.stage.to_string(),
                r.f1.map(|x| format!("{x:.6}")).unwrap_or_default(),
                r.n.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Write `report.csv`, `runs.csv` and `manifest.json` into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        atomic_write(dir.join("report.csv"), |w| self.write_report_csv(w))?;
        atomic_write(dir.join("runs.csv"), |w| self.write_runs_csv(w))?;
        atomic_write(dir.join("manifest.json"), |w| {
            serde_json::to_writer_pretty(w, &self.manifest)?;
            Ok(())
        })
    }
}
