use log::debug;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

use super::model::{AemtdModel, StageBatch};
use crate::dataset::FunnelDataset;
use crate::error::{Result, StageError};
use crate::nn::{sgd_step, SgdConfig};
use crate::util::{derive_seed, rng_from_seed, standard_normal, stratified_holdout, StageRng};

/// Rows per batch when evaluating objectives.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 0 is the untrained model.
    pub epoch: usize,
    pub train_objective: f64,
    pub validation_objective: f64,
    /// Mean discriminator loss over the epoch's steps; `NaN` for epoch 0.
    pub discriminator_loss: f64,
}

#[derive(Debug, Clone)]
pub struct AemtdFit {
    /// Model of the best validation epoch.
    pub model: AemtdModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub train_rows: Vec<usize>,
    pub validation_rows: Vec<usize>,
}

impl AemtdFit {
    pub fn best(&self) -> &EpochRecord {
        &self.history[self.best_epoch]
    }
}

fn training_error(epoch: usize, stage: usize, e: StageError) -> StageError {
    match e {
        StageError::Divergence { layer } => StageError::Training {
            epoch,
            stage,
            message: format!("non-finite gradient in layer {layer}"),
        },
        StageError::Numeric(message) => StageError::Training { epoch, stage, message },
        other => other,
    }
}

/// Mean per-presentation objective over every stage `s` and every row of
/// `rows` that reached `s`. Noise is drawn from a fixed seed so successive
/// epochs are compared on the same draws.
pub fn mean_objective(model: &AemtdModel, ds: &FunnelDataset, rows: &[usize], seed: u64) -> Result<f64> {
    let mut rng = rng_from_seed(seed);
    let de = model.embedding_dim();
    let mut sum = 0.0;
    let mut count = 0usize;
    for s in 0..=ds.num_stages() {
        let reach: Vec<usize> = rows.iter().copied().filter(|&i| ds.observed_depth()[i] >= s).collect();
        for chunk in reach.chunks(EVAL_CHUNK) {
            let batch = StageBatch::new(ds, chunk, s);
            let noise = standard_normal(chunk.len(), de, &mut rng);
            let parts = model.objective(&batch, noise.view())?;
            sum += parts.total * chunk.len() as f64;
            count += chunk.len();
        }
    }
    if count == 0 {
        return Err(StageError::validation("no rows to evaluate"));
    }
    Ok(sum / count as f64)
}

fn run_epoch(
    model: &mut AemtdModel,
    ds: &FunnelDataset,
    train: &[usize],
    sgd: &SgdConfig,
    epoch: usize,
    rng: &mut StageRng,
) -> Result<f64> {
    let de = model.embedding_dim();
    let mut d_sum = 0.0;
    let mut steps = 0usize;
    for s in (0..=ds.num_stages()).rev() {
        let mut reach: Vec<usize> = train.iter().copied().filter(|&i| ds.observed_depth()[i] >= s).collect();
        reach.shuffle(rng);
        for chunk in reach.chunks(sgd.minibatch_size) {
            let batch = StageBatch::new(ds, chunk, s);
            let b = chunk.len();

            // discriminator phase: only gamma moves
            let d_sgd = SgdConfig {
                learning_rate: sgd.learning_rate * model.config().discriminator_lr_scale,
                ..sgd.clone()
            };
            let mut d_loss = 0.0;
            for _ in 0..model.config().discriminator_steps {
                let noise = standard_normal(b, de, rng);
                let prior = standard_normal(b, de, rng);
                let (loss, d_grads) = model
                    .discriminator_objective(&batch, noise.view(), prior.view())
                    .map_err(|e| training_error(epoch, s, e))?;
                if !loss.is_finite() {
                    return Err(StageError::Training {
                        epoch,
                        stage: s,
                        message: "discriminator loss is not finite".into(),
                    });
                }
                sgd_step(model.discriminator_mut(), &d_grads, &d_sgd)
                    .map_err(|e| training_error(epoch, s, e))?;
                d_loss = loss;
            }

            // reconstruction phase: only theta and phi move
            let noise = standard_normal(b, de, rng);
            let (parts, grads) = model
                .reconstruction_objective(&batch, noise.view())
                .map_err(|e| training_error(epoch, s, e))?;
            if !parts.total.is_finite() {
                return Err(StageError::Training {
                    epoch,
                    stage: s,
                    message: "objective is not finite".into(),
                });
            }
            model
                .apply_autoencoder_step(&grads, sgd)
                .map_err(|e| training_error(epoch, s, e))?;
            d_sum += d_loss;
            steps += 1;
        }
    }
    Ok(if steps == 0 { f64::NAN } else { d_sum / steps as f64 })
}

/// Train with the backward stage sweep: every epoch visits `s = S, ..., 0`
/// and, per stage, alternates a discriminator step and an encoder/decoder
/// step on each minibatch of rows that reached `s`. Returns the model with
/// the best validation objective.
pub fn train_aemtd(ds: &FunnelDataset, sgd: &SgdConfig, model: AemtdModel) -> Result<AemtdFit> {
    sgd.validate()?;
    if ds.is_empty() {
        return Err(StageError::validation("cannot train on an empty dataset"));
    }
    if model.schema() != ds.schema() {
        return Err(StageError::validation("model schema differs from the dataset schema"));
    }
    let mut split_rng = rng_from_seed(derive_seed(sgd.seed, 0xae01));
    let (train, val) = stratified_holdout(
        ds.observed_depth(),
        model.config().validation_fraction,
        &mut split_rng,
    );
    let select_rows = if val.is_empty() { &train } else { &val };
    let eval_seed = derive_seed(sgd.seed, 0xae02);
    let mut rng = rng_from_seed(derive_seed(sgd.seed, 0xae03));

    let mut model = model;
    let start = EpochRecord {
        epoch: 0,
        train_objective: mean_objective(&model, ds, &train, eval_seed)?,
        validation_objective: mean_objective(&model, ds, select_rows, eval_seed)?,
        discriminator_loss: f64::NAN,
    };
    let mut history = vec![start];
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_value = start.validation_objective;
    let mut since_best = 0;

    for epoch in 1..=sgd.max_epochs {
        let d_loss = run_epoch(&mut model, ds, &train, sgd, epoch, &mut rng)?;
        let rec = EpochRecord {
            epoch,
            train_objective: mean_objective(&model, ds, &train, eval_seed)?,
            validation_objective: mean_objective(&model, ds, select_rows, eval_seed)?,
            discriminator_loss: d_loss,
        };
        if !rec.validation_objective.is_finite() {
            return Err(StageError::Training {
                epoch,
                stage: 0,
                message: "validation objective is not finite".into(),
            });
        }
        debug!(
            "aemtd epoch {epoch}: train {:.5} val {:.5} disc {:.4}",
            rec.train_objective, rec.validation_objective, rec.discriminator_loss
        );
        history.push(rec);
        if rec.validation_objective < best_value {
            best_value = rec.validation_objective;
            best = model.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if sgd.patience > 0 && since_best >= sgd.patience {
                break;
            }
        }
    }
    Ok(AemtdFit {
        model: best,
        history,
        best_epoch,
        train_rows: train,
        validation_rows: val,
    })
}

/// Per-dimension mean and variance of sampled embeddings over every
/// (row, stage) presentation the trainer makes: each row encoded from its
/// stage-`s` prefix for every `s` up to its depth.
pub fn embedding_statistics(model: &AemtdModel, ds: &FunnelDataset, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if ds.len() < 2 {
        return Err(StageError::validation("embedding statistics need at least two rows"));
    }
    let de = model.embedding_dim();
    let mut rng = rng_from_seed(seed);
    let mut all = Array2::<f64>::zeros((0, de));
    for s in 0..=ds.num_stages() {
        let rows: Vec<usize> = ds.rows_reaching(s).collect();
        if rows.is_empty() {
            continue;
        }
        let batch = StageBatch::new(ds, &rows, s);
        let noise = standard_normal(rows.len(), de, &mut rng);
        let e = model.sample_embedding(batch.input.view(), noise.view())?;
        all.append(Axis(0), e.view()).expect("equal widths");
    }
    let mean = all.mean_axis(Axis(0)).expect("non-empty");
    let var = all.var_axis(Axis(0), 1.0);
    Ok((mean.to_vec(), var.to_vec()))
}
