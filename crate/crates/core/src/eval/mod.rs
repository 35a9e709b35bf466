//! Experiment harness: splits, per-stage F1 on the positive class and
//! setting-by-setting reports.

mod metrics;
mod plan;
mod report;

use std::collections::{BTreeMap, BTreeSet};

use log::info;
use rayon::prelude::*;

use crate::aemtd::{complete, train_aemtd, AemtdModel, CompletedDataset};
use crate::baselines::{train_bank_completed, train_bank_raw, train_imc, LinearConfig};
use crate::dataset::{FeatureEncoder, FunnelDataset, RawTable};
use crate::error::{Result, StageError};
use crate::labels::{LabelMatrix, MISSING};
use crate::mlssl::{train_mlssl, MlsslClassifier};
use crate::nn::SgdConfig;
use crate::schema::SchemaFile;
use crate::synth::synth_funnel;
use crate::util::derive_seed;

pub use metrics::{f1_positive, fold_keys, stratified_kfold};
pub use plan::{DataSource, ExperimentPlan, Setting, SplitSpec};
pub use report::{CellError, Manifest, ReportRow, RunAudit, RunRecord, RunSeed, StageReport};

/// How stage scores treat rows, recorded in every manifest.
pub const EVALUATION_RULE: &str =
    "stage s is scored on test rows whose label at s is known under the plan's fill policy";

/// Loaded data for a plan: either generated rows or a raw table that is
/// re-encoded per split.
enum Loaded {
    Synth(FunnelDataset),
    Raw {
        table: RawTable,
        standardize: bool,
        groups: Option<Vec<String>>,
    },
}

impl Loaded {
    fn load(plan: &ExperimentPlan) -> Result<Self> {
        match &plan.source {
            DataSource::Synth(cfg) => Ok(Loaded::Synth(synth_funnel(cfg)?.0)),
            DataSource::Csv { data, schema, onehot, standardize } => {
                let schema = SchemaFile::read(schema)?;
                let mut table = RawTable::read_csv(data, &schema)?;
                table.mark_categorical(onehot)?;
                let groups = match &plan.split {
                    SplitSpec::Longitudinal { group_column, .. } => Some(read_groups(data, group_column)?),
                    SplitSpec::Kfold { .. } => None,
                };
                Ok(Loaded::Raw { table, standardize: *standardize, groups })
            }
        }
    }

    fn len(&self) -> usize {
        match self {
            Loaded::Synth(ds) => ds.len(),
            Loaded::Raw { table, .. } => table.len(),
        }
    }

    fn keys(&self) -> Vec<usize> {
        match self {
            Loaded::Synth(ds) => fold_keys(ds.rows()),
            Loaded::Raw { table, .. } => fold_keys(table.rows()),
        }
    }

    fn digest(&self) -> Result<String> {
        match self {
            Loaded::Synth(ds) => {
                use sha2::{Digest, Sha256};
                let mut buf = Vec::new();
                ds.write_csv_to(&mut buf)?;
                Ok(hex::encode(Sha256::digest(&buf)))
            }
            Loaded::Raw { table, .. } => Ok(table.digest()),
        }
    }

    /// Train and test datasets; any fitted encoding sees training rows only.
    fn datasets(&self, train: &[usize], test: &[usize]) -> Result<(FunnelDataset, FunnelDataset)> {
        match self {
            Loaded::Synth(ds) => Ok((ds.select(train)?, ds.select(test)?)),
            Loaded::Raw { table, standardize, .. } => {
                let enc = FeatureEncoder::fit(table, train, *standardize)?;
                Ok((enc.encode(table, train)?, enc.encode(table, test)?))
            }
        }
    }
}

/// Values of `column` in file order.
fn read_groups(path: &std::path::Path, column: &str) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let idx = rdr
        .headers()?
        .iter()
        .position(|h| h.trim() == column)
        .ok_or_else(|| StageError::validation(format!("group column `{column}` missing")))?;
    rdr.records()
        .map(|r| Ok(r?.get(idx).unwrap_or("").trim().to_string()))
        .collect()
}

/// One (repetition, fold) unit of work: the rows to train and test on.
#[derive(Debug, Clone)]
struct Job {
    repetition: usize,
    fold: usize,
    seed: u64,
    train: Vec<usize>,
    test: Vec<usize>,
}

fn make_jobs(plan: &ExperimentPlan, data: &Loaded) -> Result<Vec<Job>> {
    let n = data.len();
    let mut jobs = Vec::new();
    for rep in 0..plan.repetitions {
        match &plan.split {
            SplitSpec::Kfold { k, seed } => {
                let folds = stratified_kfold(&data.keys(), *k, derive_seed(*seed, rep as u64))?;
                for f in 0..*k {
                    let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| folds[i] == f);
                    jobs.push(Job {
                        repetition: rep,
                        fold: f,
                        seed: derive_seed(plan.seed, (rep * 1_000 + f) as u64),
                        train,
                        test,
                    });
                }
            }
            SplitSpec::Longitudinal { train_groups, validation_group, .. } => {
                let groups = match data {
                    Loaded::Raw { groups: Some(g), .. } => g,
                    _ => return Err(StageError::validation("longitudinal split without group values")),
                };
                let train: Vec<usize> = (0..n).filter(|&i| train_groups.contains(&groups[i])).collect();
                let test: Vec<usize> = (0..n).filter(|&i| groups[i] == *validation_group).collect();
                if train.is_empty() || test.is_empty() {
                    return Err(StageError::validation(format!(
                        "longitudinal split has {} training and {} validation rows",
                        train.len(),
                        test.len()
                    )));
                }
                jobs.push(Job {
                    repetition: rep,
                    fold: 0,
                    seed: derive_seed(plan.seed, (rep * 1_000) as u64),
                    train,
                    test,
                });
            }
        }
    }
    Ok(jobs)
}

struct JobOutput {
    records: Vec<RunRecord>,
    errors: Vec<CellError>,
    audit: Option<RunAudit>,
}

struct Completed {
    train: CompletedDataset,
    test: CompletedDataset,
}

fn run_completion(plan: &ExperimentPlan, train: &FunnelDataset, test: &FunnelDataset, seed: u64) -> Result<Completed> {
    let model = AemtdModel::new(train.schema().clone(), plan.aemtd.clone(), derive_seed(seed, 1))?;
    let sgd = SgdConfig { seed: derive_seed(seed, 2), ..plan.aemtd_sgd.clone() };
    let fit = train_aemtd(train, &sgd, model)?;
    Ok(Completed {
        train: complete(&fit.model, train, plan.splice_policy)?,
        test: complete(&fit.model, test, plan.splice_policy)?,
    })
}

fn predict_setting(
    plan: &ExperimentPlan,
    setting: Setting,
    train: &FunnelDataset,
    test: &FunnelDataset,
    labels: &LabelMatrix,
    completed: Option<&Completed>,
    seed: u64,
) -> Result<ndarray::Array2<i8>> {
    let linear = LinearConfig { seed: derive_seed(seed, 3), ..plan.linear.clone() };
    let completed = || completed.ok_or_else(|| StageError::validation("completion unavailable"));
    match setting {
        Setting::NMbt => train_bank_raw(train, labels, &linear)?.predict(test.features().view()),
        Setting::AemtdMbt => {
            let c = completed()?;
            train_bank_completed(&c.train, labels, &linear)?.predict(c.test.features.view())
        }
        Setting::AemtdImc => {
            let c = completed()?;
            train_imc(&c.train, labels, &linear)?.predict(c.test.features.view())
        }
        Setting::AemtdImlSsl => {
            let c = completed()?;
            let clf = MlsslClassifier::new(
                c.train.column_names.clone(),
                c.train.num_stages,
                plan.mlssl.clone(),
                derive_seed(seed, 4),
            )?;
            let sgd = SgdConfig { seed: derive_seed(seed, 5), ..plan.mlssl_sgd.clone() };
            let fit = train_mlssl(&c.train, labels, clf, &sgd)?;
            Ok(fit.classifier.predict(&c.test)?.signs)
        }
    }
}

fn run_job(plan: &ExperimentPlan, data: &Loaded, job: &Job) -> JobOutput {
    let mut out = JobOutput { records: Vec::new(), errors: Vec::new(), audit: None };
    let fail_all = |out: &mut JobOutput, settings: &[Setting], message: String| {
        for s in settings {
            out.errors.push(CellError {
                setting: *s,
                repetition: job.repetition,
                fold: job.fold,
                message: message.clone(),
            });
        }
    };
    let (train, test) = match data.datasets(&job.train, &job.test) {
        Ok(d) => d,
        Err(e) => {
            fail_all(&mut out, &plan.settings, e.to_string());
            return out;
        }
    };
    let train_labels = train.label_matrix(plan.fill_policy);
    let test_labels = test.label_matrix(plan.fill_policy);

    let mut seen: BTreeSet<usize> = train.row_ids().iter().copied().collect();
    let completion_settings: Vec<Setting> =
        plan.settings.iter().copied().filter(|s| s.needs_completion()).collect();
    let completed = if completion_settings.is_empty() {
        None
    } else {
        match run_completion(plan, &train, &test, job.seed) {
            Ok(c) => {
                seen.extend(c.train.rows.row_ids.iter().copied());
                Some(c)
            }
            Err(e) => {
                fail_all(&mut out, &completion_settings, format!("completion: {e}"));
                None
            }
        }
    };
    out.audit = Some(RunAudit {
        repetition: job.repetition,
        fold: job.fold,
        train_row_ids: seen.into_iter().collect(),
        test_row_ids: test.row_ids().to_vec(),
    });

    for &setting in &plan.settings {
        if setting.needs_completion() && completed.is_none() {
            continue;
        }
        let pred = predict_setting(plan, setting, &train, &test, &train_labels, completed.as_ref(), job.seed);
        match pred.and_then(|p| score_stages(&p, &test_labels)) {
            Ok(scores) => {
                for (s, (f1, n)) in scores.into_iter().enumerate() {
                    out.records.push(RunRecord {
                        setting,
                        repetition: job.repetition,
                        fold: job.fold,
                        stage: s + 1,
                        f1,
                        n,
                    });
                }
            }
            Err(e) => out.errors.push(CellError {
                setting,
                repetition: job.repetition,
                fold: job.fold,
                message: e.to_string(),
            }),
        }
    }
    out
}

/// Per-stage (F1, rows scored); F1 is absent when no row has known truth.
fn score_stages(pred: &ndarray::Array2<i8>, truth: &LabelMatrix) -> Result<Vec<(Option<f64>, usize)>> {
    if pred.dim() != truth.values().dim() {
        return Err(StageError::shape("predictions and truth differ in shape"));
    }
    (0..truth.num_stages())
        .map(|s| {
            let t = truth.values().column(s);
            let rows: Vec<usize> = (0..t.len()).filter(|&i| t[i] != MISSING).collect();
            if rows.is_empty() {
                return Ok((None, 0));
            }
            let p: Vec<i8> = rows.iter().map(|&i| pred[(i, s)]).collect();
            let tt: Vec<i8> = rows.iter().map(|&i| t[i]).collect();
            Ok((Some(f1_positive(&p, &tt)?), rows.len()))
        })
        .collect()
}

/// Execute every (setting, split, repetition) cell. `jobs` bounds the worker
/// threads (0 picks the default). Training failures are recorded per cell.
pub fn run_plan(plan: &ExperimentPlan, jobs: usize) -> Result<StageReport> {
    plan.validate()?;
    let data = Loaded::load(plan)?;
    let work = make_jobs(plan, &data)?;
    info!("running {} splits x {} settings", work.len(), plan.settings.len());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| StageError::validation(format!("thread pool: {e}")))?;
    let outputs: Vec<JobOutput> = pool.install(|| work.par_iter().map(|j| run_job(plan, &data, j)).collect());

    let mut records = Vec::new();
    let mut errors = Vec::new();
    let mut audits = Vec::new();
    for o in outputs {
        records.extend(o.records);
        errors.extend(o.errors);
        audits.extend(o.audit);
    }
    for a in &audits {
        if !a.is_clean() {
            return Err(StageError::validation(format!(
                "repetition {} fold {}: a test row was used in training",
                a.repetition, a.fold
            )));
        }
    }
    let manifest = Manifest {
        format_version: crate::nn::FORMAT_VERSION,
        plan: plan.clone(),
        dataset_digest: data.digest()?,
        fill_policy: plan.fill_policy,
        evaluation: EVALUATION_RULE.to_string(),
        runs: work
            .iter()
            .map(|j| RunSeed { repetition: j.repetition, fold: j.fold, seed: j.seed })
            .collect(),
        errors: errors.clone(),
    };
    Ok(StageReport::assemble(plan, records, errors, audits, manifest))
}

/// Mean F1 per (setting, stage) from raw run records.
pub fn stage_means(records: &[RunRecord]) -> BTreeMap<(Setting, usize), f64> {
    let mut acc: BTreeMap<(Setting, usize), Vec<f64>> = BTreeMap::new();
    for r in records {
        if let Some(f) = r.f1 {
            acc.entry((r.setting, r.stage)).or_default().push(f);
        }
    }
    acc.into_iter().map(|(k, v)| (k, crate::util::mean(&v))).collect()
}

#[cfg(test)]
mod tests;
