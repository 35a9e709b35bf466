use std::collections::HashMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use ndarray::Array2;
use stage_core::aemtd::{complete, train_aemtd, AemtdConfig, AemtdModel, CompletedDataset};
use stage_core::baselines::{train_bank_completed, train_bank_raw, train_imc, BaselineModel, LinearConfig};
use stage_core::dataset::ROW_ID_COLUMN;
use stage_core::eval::{run_plan, ExperimentPlan, Setting};
use stage_core::mlssl::{train_mlssl, GraphMode, MlsslClassifier, MlsslConfig};
use stage_core::synth::synth_funnel_with_truth;
use stage_core::util::atomic_write;
use stage_core::{
    ingest_csv_with_encoder, FeatureEncoder, FunnelDataset, IngestOptions, LabelMatrix, RawTable, Result,
    SchemaFile, SgdConfig, StageError, SynthFunnelConfig,
};

use crate::args::*;

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Synth(a) => synth(a, seed),
        Command::TrainAemtd(a) => train_aemtd_cmd(a, seed),
        Command::Complete(a) => complete_cmd(a),
        Command::TrainMlssl(a) => train_mlssl_cmd(a, seed),
        Command::Baseline(a) => baseline(a, seed),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a, seed),
    }
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}{suffix}"))
}

fn read_schema(enc: &EncodingArgs) -> Result<SchemaFile> {
    let path = enc
        .schema
        .as_ref()
        .ok_or_else(|| StageError::Validation("--schema is required for raw data".into()))?;
    SchemaFile::read(path)
}

fn ingest_options(enc: &EncodingArgs) -> IngestOptions {
    IngestOptions {
        onehot_columns: enc.onehot.clone(),
        standardize: enc.standardize,
    }
}

fn ingest(a: IngestArgs) -> Result<()> {
    let schema = read_schema(&a.encoding)?;
    let (ds, _) = ingest_csv_with_encoder(&a.data, &schema, &ingest_options(&a.encoding))?;
    let schema_out = a.schema_out.unwrap_or_else(|| sibling(&a.out, ".schema.json"));
    ds.schema().to_file().write(&schema_out)?;
    ds.write_csv(&a.out)?;
    info!("{} rows, populations {:?}", ds.len(), ds.populations());
    Ok(())
}

fn synth(a: SynthArgs, seed: u64) -> Result<()> {
    let cfg = SynthFunnelConfig {
        dependency_noise_sigma: a.noise_sigma,
        label_noise: a.label_noise,
        final_pass_rate: a.final_pass_rate,
        ..SynthFunnelConfig::with_stages(a.stages, a.n0, seed)
    };
    let f = synth_funnel_with_truth(&cfg)?;
    let schema_out = a.schema_out.unwrap_or_else(|| sibling(&a.out, ".schema.json"));
    f.dataset.schema().to_file().write(&schema_out)?;
    if let Some(path) = &a.truth_out {
        let names = f.dataset.schema().column_names();
        atomic_write(path, |w| {
            let mut out = csv::Writer::from_writer(w);
            let mut header: Vec<String> = names.to_vec();
            header.push(ROW_ID_COLUMN.into());
            out.write_record(&header)?;
            for (i, row) in f.full_features.rows().into_iter().enumerate() {
                let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                rec.push(f.dataset.row_ids()[i].to_string());
                out.write_record(&rec)?;
            }
            out.flush()?;
            Ok(())
        })?;
    }
    f.dataset.write_csv(&a.out)?;
    info!("populations {:?}", f.dataset.populations());
    Ok(())
}

fn sgd_config(s: &SgdArgs, lr: f64, seed: u64) -> SgdConfig {
    SgdConfig {
        learning_rate: lr,
        minibatch_size: s.batch,
        max_epochs: s.epochs,
        patience: s.patience,
        seed,
    }
}

fn train_aemtd_cmd(a: TrainAemtdArgs, seed: u64) -> Result<()> {
    let config = AemtdConfig {
        embedding_dim: a.embedding_dim,
        rec_weight: a.rec_weight,
        fn_weight: a.fn_weight,
        gan_weight: a.gan_weight,
        discriminator_steps: a.discriminator_steps,
        discriminator_lr_scale: a.discriminator_lr_scale,
        validation_fraction: a.validation_fraction,
        ..AemtdConfig::default()
    };
    config.validate()?;
    let sgd = sgd_config(&a.sgd, a.lr, seed);
    sgd.validate()?;
    let schema = read_schema(&a.encoding)?;
    let (ds, encoder) = ingest_csv_with_encoder(&a.data, &schema, &ingest_options(&a.encoding))?;
    let model = AemtdModel::new(ds.schema().clone(), config, seed)?;
    let fit = train_aemtd(&ds, &sgd, model)?;
    info!(
        "best epoch {} (validation objective {:.5})",
        fit.best_epoch,
        fit.best().validation_objective
    );
    if let Some(path) = &a.history {
        atomic_write(path, |w| {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(["epoch", "train_objective", "validation_objective", "discriminator_loss"])?;
            for r in &fit.history {
                out.write_record([
                    r.epoch.to_string(),
                    r.train_objective.to_string(),
                    r.validation_objective.to_string(),
                    r.discriminator_loss.to_string(),
                ])?;
            }
            out.flush()?;
            Ok(())
        })?;
    }
    fit.model.save(&a.out, Some(&encoder))
}

fn encode_with(encoder: &FeatureEncoder, data: &Path) -> Result<FunnelDataset> {
    let raw = RawTable::read_csv(data, encoder.source_schema())?;
    let all: Vec<usize> = (0..raw.len()).collect();
    encoder.encode(&raw, &all)
}

fn complete_cmd(a: CompleteArgs) -> Result<()> {
    let (model, encoder) = AemtdModel::load(&a.model)?;
    let encoder = encoder.ok_or_else(|| StageError::Validation("model file carries no feature encoder".into()))?;
    let ds = encode_with(&encoder, &a.data)?;
    let completed = complete(&model, &ds, a.splice)?;
    if let Some(path) = &a.labels_out {
        write_labels(path, &completed.rows.row_ids, &completed.label_matrix(a.fill_policy))?;
    }
    completed.write_csv(&a.out)
}

fn stage_column(s: usize) -> String {
    format!("stage_{s}")
}

fn write_labels(path: &Path, ids: &[usize], labels: &LabelMatrix) -> Result<()> {
    atomic_write(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec![ROW_ID_COLUMN.to_string()];
        header.extend((1..=labels.num_stages()).map(stage_column));
        out.write_record(&header)?;
        for (i, row) in labels.values().rows().into_iter().enumerate() {
            let mut rec = vec![ids[i].to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    })
}

/// Labels keyed by `__row_id`, reordered to match `ids`.
fn read_labels(path: &Path, ids: &[usize]) -> Result<LabelMatrix> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let id_idx = header
        .iter()
        .position(|h| h == ROW_ID_COLUMN)
        .ok_or_else(|| StageError::Validation(format!("label file lacks `{ROW_ID_COLUMN}`")))?;
    let mut stage_idx = Vec::new();
    while let Some(i) = header.iter().position(|h| *h == stage_column(stage_idx.len() + 1)) {
        stage_idx.push(i);
    }
    if stage_idx.is_empty() {
        return Err(StageError::Validation("label file has no stage_1 column".into()));
    }
    let mut by_id: HashMap<usize, Vec<i8>> = HashMap::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |i: usize, col: &str| {
            rec[i].trim().parse::<i64>().map_err(|_| StageError::Parse {
                row: r + 1,
                column: col.to_string(),
                message: format!("`{}` is not an integer", &rec[i]),
            })
        };
        let id = parse(id_idx, ROW_ID_COLUMN)? as usize;
        let mut row = Vec::with_capacity(stage_idx.len());
        for (s, &i) in stage_idx.iter().enumerate() {
            let v = parse(i, &stage_column(s + 1))?;
            row.push(i8::try_from(v).unwrap_or(i8::MAX));
        }
        by_id.insert(id, row);
    }
    let mut values = Array2::<i8>::zeros((ids.len(), stage_idx.len()));
    for (i, id) in ids.iter().enumerate() {
        let row = by_id
            .get(id)
            .ok_or_else(|| StageError::Validation(format!("no labels for row {id}")))?;
        for (s, v) in row.iter().enumerate() {
            values[(i, s)] = *v;
        }
    }
    LabelMatrix::new(values)
}

fn train_mlssl_cmd(a: TrainMlsslArgs, seed: u64) -> Result<()> {
    let config = MlsslConfig {
        lambda: a.lambda,
        k_nn: a.knn,
        h_nn: a.hnn,
        w_lc: a.w_lc,
        w_sls: a.w_sls,
        w_tc: a.w_tc,
        mask_missing: a.mask_missing,
        graph_mode: match a.graph_mode {
            GraphModeArg::PerBatch => GraphMode::PerBatch,
            GraphModeArg::Global => GraphMode::Global,
        },
        validation_fraction: a.validation_fraction,
        ..MlsslConfig::default()
    };
    config.validate()?;
    let sgd = sgd_config(&a.sgd, a.lr, seed);
    sgd.validate()?;
    let x = CompletedDataset::read_csv(&a.data)?;
    let labels = match &a.labels {
        Some(p) => read_labels(p, &x.rows.row_ids)?,
        None => x.label_matrix(a.fill_policy),
    };
    let clf = MlsslClassifier::new(x.column_names.clone(), labels.num_stages(), config, seed)?;
    let fit = train_mlssl(&x, &labels, clf, &sgd)?;
    for (w, count) in &fit.warnings {
        warn!("{w} (x{count})");
    }
    info!("best epoch {}", fit.best_epoch);
    fit.classifier.save(&a.out)
}

fn baseline(a: BaselineArgs, seed: u64) -> Result<()> {
    let cfg = LinearConfig {
        l2: a.l2,
        learning_rate: a.lr,
        epochs: a.epochs,
        minibatch_size: a.batch,
        seed,
    };
    cfg.validate()?;
    let (model, encoder) = match a.setting {
        Setting::NMbt => {
            let schema = read_schema(&a.encoding)?;
            let (ds, encoder) = ingest_csv_with_encoder(&a.data, &schema, &ingest_options(&a.encoding))?;
            let labels = match &a.labels {
                Some(p) => read_labels(p, ds.row_ids())?,
                None => ds.label_matrix(a.fill_policy),
            };
            (BaselineModel::Bank(train_bank_raw(&ds, &labels, &cfg)?), Some(encoder))
        }
        Setting::AemtdMbt | Setting::AemtdImc => {
            let x = CompletedDataset::read_csv(&a.data)?;
            let labels = match &a.labels {
                Some(p) => read_labels(p, &x.rows.row_ids)?,
                None => x.label_matrix(a.fill_policy),
            };
            let m = if a.setting == Setting::AemtdMbt {
                BaselineModel::Bank(train_bank_completed(&x, &labels, &cfg)?)
            } else {
                BaselineModel::Multiclass(train_imc(&x, &labels, &cfg)?)
            };
            (m, None)
        }
        Setting::AemtdImlSsl => {
            return Err(StageError::Validation(
                "aemtd-iml-ssl is trained with train-mlssl, not baseline".into(),
            ))
        }
    };
    if let BaselineModel::Bank(b) = &model {
        for w in b.warnings() {
            warn!("{w}");
        }
    }
    model.save(&cfg, encoder.as_ref(), &a.out)
}

fn write_predictions(path: &Path, ids: &[usize], signs: &Array2<i8>, scores: Option<&Array2<f64>>) -> Result<()> {
    atomic_write(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        let s = signs.ncols();
        let mut header = vec![ROW_ID_COLUMN.to_string()];
        header.extend((1..=s).map(|k| format!("pred_{k}")));
        if scores.is_some() {
            header.extend((1..=s).map(|k| format!("score_{k}")));
        }
        out.write_record(&header)?;
        for (i, row) in signs.rows().into_iter().enumerate() {
            let mut rec = vec![ids[i].to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            if let Some(sc) = scores {
                rec.extend(sc.row(i).iter().map(|v| v.to_string()));
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    })
}

fn check_names(expected: &[String], found: &[String]) -> Result<()> {
    if expected != found {
        return Err(StageError::Validation(format!(
            "model expects columns {expected:?}, data has {found:?}"
        )));
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&a.clf)?)?;
    if doc.get("kind").and_then(|k| k.as_str()) == Some("mlssl") {
        let clf = MlsslClassifier::load(&a.clf)?;
        let x = CompletedDataset::read_csv(&a.data)?;
        let pred = clf.predict(&x)?;
        return write_predictions(&a.out, &x.rows.row_ids, &pred.signs, Some(&pred.scores));
    }
    let (model, encoder) = BaselineModel::load(&a.clf)?;
    let (ids, signs) = match encoder {
        Some(enc) => {
            let ds = encode_with(&enc, &a.data)?;
            check_names(model.column_names(), ds.schema().column_names())?;
            (ds.row_ids().to_vec(), model.predict(ds.features().view())?)
        }
        None => {
            let x = CompletedDataset::read_csv(&a.data)?;
            check_names(model.column_names(), &x.column_names)?;
            (x.rows.row_ids.clone(), model.predict(x.features.view())?)
        }
    };
    write_predictions(&a.out, &ids, &signs, None)
}

fn evaluate(a: EvaluateArgs, seed: u64) -> Result<()> {
    let mut plan = ExperimentPlan::read(&a.plan)?;
    // a seed written in the plan wins over the global flag
    let raw: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&a.plan)?)?;
    if raw.get("seed").is_none() {
        plan.seed = seed;
    }
    let report = run_plan(&plan, a.jobs)?;
    for e in &report.errors {
        warn!("{} repetition {} fold {}: {}", e.setting, e.repetition, e.fold, e.message);
    }
    report.write_dir(&a.out)?;
    for r in &report.rows {
        info!(
            "{:<14} stage {} F1 {}",
            r.setting.name(),
            r.stage,
            r.mean_f1.map(|m| format!("{m:.4}")).unwrap_or_else(|| "-".into())
        );
    }
    Ok(())
}
