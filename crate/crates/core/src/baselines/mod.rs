//! Reference classifiers: one linear hinge model per stage on raw or
//! completed features, and a single softmax over the last stage reached.

mod linear;

use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::aemtd::CompletedDataset;
use crate::dataset::{FeatureEncoder, FunnelDataset};
use crate::error::{Result, StageError};
use crate::labels::{class_of_row, thermometer_from_class, LabelMatrix, MISSING};
use crate::nn::FORMAT_VERSION;
use crate::util::derive_seed;

pub use linear::{
    train_softmax, train_stage_binary, LinearConfig, LinearModel, SoftmaxModel, IMBALANCE_THRESHOLD,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankMode {
    /// Stage `s` sees only the columns observed by stage `s`.
    Raw,
    /// Every stage sees the full completed width.
    Completed,
}

/// One binary classifier per decision stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageBinaryBank {
    pub mode: BankMode,
    pub column_names: Vec<String>,
    /// Classifier for stage `s` sits at index `s - 1`.
    pub classifiers: Vec<LinearModel>,
}

impl StageBinaryBank {
    pub fn num_stages(&self) -> usize {
        self.classifiers.len()
    }

    /// Feature width consumed by stage `stage` (1-based).
    pub fn width(&self, stage: usize) -> usize {
        self.classifiers[stage - 1].width()
    }

    pub fn warnings(&self) -> Vec<String> {
        self.classifiers
            .iter()
            .filter_map(|c| c.imbalance_warning.clone())
            .collect()
    }

    /// `n x S` signs. `x` holds the full column layout; in raw mode each stage
    /// reads its prefix, where unobserved cells hold the 0 sentinel.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<i8>> {
        if x.ncols() != self.column_names.len() {
            return Err(StageError::shape(format!(
                "bank expects {} columns, data has {}",
                self.column_names.len(),
                x.ncols()
            )));
        }
        let mut out = Array2::<i8>::zeros((x.nrows(), self.num_stages()));
        for (s, clf) in self.classifiers.iter().enumerate() {
            let signs = clf.predict(x.slice(s![.., ..clf.width()]));
            out.column_mut(s).assign(&ndarray::Array1::from(signs));
        }
        Ok(out)
    }
}

fn check_labels(rows: usize, labels: &LabelMatrix, stages: usize) -> Result<()> {
    if labels.num_rows() != rows || labels.num_stages() != stages {
        return Err(StageError::shape(format!(
            "labels are {}x{}, data needs {rows}x{stages}",
            labels.num_rows(),
            labels.num_stages()
        )));
    }
    Ok(())
}

fn train_bank(
    x: ArrayView2<f64>,
    labels: &LabelMatrix,
    eligible: impl Fn(usize, usize) -> bool,
    width: impl Fn(usize) -> usize,
    cfg: &LinearConfig,
) -> Result<Vec<LinearModel>> {
    (1..=labels.num_stages())
        .map(|stage| {
            let col = labels.values().column(stage - 1);
            let rows: Vec<usize> = (0..x.nrows())
                .filter(|&i| col[i] != MISSING && eligible(i, stage))
                .collect();
            let xs = x.select(Axis(0), &rows);
            let y: Vec<i8> = rows.iter().map(|&i| col[i]).collect();
            let stage_cfg = LinearConfig {
                seed: derive_seed(cfg.seed, stage as u64),
                ..cfg.clone()
            };
            train_stage_binary(xs.slice(s![.., ..width(stage)]), &y, stage, &stage_cfg)
        })
        .collect()
}

/// Per-stage classifiers on raw data: stage `s` trains on rows that reached
/// it, using only the columns observed there.
pub fn train_bank_raw(ds: &FunnelDataset, labels: &LabelMatrix, cfg: &LinearConfig) -> Result<StageBinaryBank> {
    check_labels(ds.len(), labels, ds.num_stages())?;
    let depth = ds.observed_depth();
    let schema = ds.schema();
    let classifiers = train_bank(
        ds.features().view(),
        labels,
        |i, stage| depth[i] >= stage,
        |stage| schema.width(stage),
        cfg,
    )?;
    Ok(StageBinaryBank {
        mode: BankMode::Raw,
        column_names: schema.column_names().to_vec(),
        classifiers,
    })
}

/// Per-stage classifiers on completed data: every row with a known label
/// at `s` trains stage `s` on the full width.
pub fn train_bank_completed(x: &CompletedDataset, labels: &LabelMatrix, cfg: &LinearConfig) -> Result<StageBinaryBank> {
    check_labels(x.len(), labels, x.num_stages)?;
    let width = x.width();
    let classifiers = train_bank(x.features.view(), labels, |_, _| true, |_| width, cfg)?;
    Ok(StageBinaryBank {
        mode: BankMode::Completed,
        column_names: x.column_names.clone(),
        classifiers,
    })
}

/// Softmax over classes `0..=S`, class `c` meaning the first `c` stages
/// passed and stage `c + 1` (if any) rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassModel {
    pub column_names: Vec<String>,
    pub num_stages: usize,
    pub softmax: SoftmaxModel,
}

impl MulticlassModel {
    pub fn predict_classes(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        if x.ncols() != self.column_names.len() {
            return Err(StageError::shape(format!(
                "model expects {} columns, data has {}",
                self.column_names.len(),
                x.ncols()
            )));
        }
        Ok(self.softmax.predict(x))
    }

    /// Thermometer expansion of the predicted classes.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<i8>> {
        let classes = self.predict_classes(x)?;
        let mut out = Array2::<i8>::zeros((classes.len(), self.num_stages));
        for (i, c) in classes.into_iter().enumerate() {
            out.row_mut(i)
                .assign(&ndarray::Array1::from(thermometer_from_class(c, self.num_stages)));
        }
        Ok(out)
    }
}

/// Train the multiclass model on rows whose label row determines a class.
pub fn train_imc(x: &CompletedDataset, labels: &LabelMatrix, cfg: &LinearConfig) -> Result<MulticlassModel> {
    check_labels(x.len(), labels, x.num_stages)?;
    let (rows, classes): (Vec<usize>, Vec<usize>) = labels
        .values()
        .rows()
        .into_iter()
        .enumerate()
        .filter_map(|(i, r)| class_of_row(r).map(|c| (i, c)))
        .unzip();
    let xs = x.features.select(Axis(0), &rows);
    let softmax = train_softmax(xs.view(), &classes, x.num_stages + 1, cfg)?;
    Ok(MulticlassModel {
        column_names: x.column_names.clone(),
        num_stages: x.num_stages,
        softmax,
    })
}

/// Either baseline, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineModel {
    Bank(StageBinaryBank),
    Multiclass(MulticlassModel),
}

#[derive(Serialize, Deserialize)]
struct BaselineDocument {
    format_version: u32,
    config: LinearConfig,
    model: BaselineModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature_encoder: Option<FeatureEncoder>,
}

impl BaselineModel {
    pub fn column_names(&self) -> &[String] {
        match self {
            BaselineModel::Bank(b) => &b.column_names,
            BaselineModel::Multiclass(m) => &m.column_names,
        }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<i8>> {
        match self {
            BaselineModel::Bank(b) => b.predict(x),
            BaselineModel::Multiclass(m) => m.predict(x),
        }
    }

    /// Save with the encoder that maps raw tables onto the model's columns.
    pub fn save(&self, config: &LinearConfig, encoder: Option<&FeatureEncoder>, path: impl AsRef<Path>) -> Result<()> {
        let doc = BaselineDocument {
            format_version: FORMAT_VERSION,
            config: config.clone(),
            model: self.clone(),
            feature_encoder: encoder.cloned(),
        };
        crate::util::atomic_write(path, |w| {
            serde_json::to_writer(w, &doc)?;
            Ok(())
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Option<FeatureEncoder>)> {
        let doc: BaselineDocument = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if doc.format_version != FORMAT_VERSION {
            return Err(StageError::validation(format!(
                "baseline format {} is not supported (expected {FORMAT_VERSION})",
                doc.format_version
            )));
        }
        Ok((doc.model, doc.feature_encoder))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::{is_thermometer, FillPolicy};
    use crate::synth::{synth_funnel, SynthFunnelConfig};
    use ndarray::Array1;

    #[test]
    fn class_zero_rejects_everywhere() {
        let m = MulticlassModel {
            column_names: vec!["a".into()],
            num_stages: 3,
            softmax: SoftmaxModel {
                weights: Array2::zeros((1, 4)),
                bias: Array1::from(vec![1.0, 0.0, 0.0, 0.0]),
            },
        };
        let p = m.predict(Array2::zeros((2, 1)).view()).unwrap();
        assert!(p.iter().all(|v| *v == -1));
    }

    #[test]
    fn raw_bank_uses_stage_prefixes() {
        let (ds, labels) = synth_funnel(&SynthFunnelConfig::default()).unwrap();
        let bank = train_bank_raw(&ds, &labels, &LinearConfig { epochs: 20, ..Default::default() }).unwrap();
        for s in 1..=ds.num_stages() {
            assert_eq!(bank.width(s), ds.schema().width(s));
        }
        let p = bank.predict(ds.features().view()).unwrap();
        assert_eq!(p.dim(), (ds.len(), ds.num_stages()));
    }

    #[test]
    fn completed_bank_and_multiclass_run_on_completed_data() {
        let (ds, _) = synth_funnel(&SynthFunnelConfig::default()).unwrap();
        let x = CompletedDataset::from_observed(&ds);
        let labels = x.label_matrix(FillPolicy::PropagateReject);
        let cfg = LinearConfig { epochs: 20, ..Default::default() };
        let bank = train_bank_completed(&x, &labels, &cfg).unwrap();
        assert!((1..=3).all(|s| bank.width(s) == x.width()));
        let imc = train_imc(&x, &labels, &cfg).unwrap();
        let p = imc.predict(x.features.view()).unwrap();
        for row in p.rows() {
            assert!(is_thermometer(&row.to_vec()));
        }
    }

    #[test]
    fn baseline_file_round_trip() {
        let (ds, labels) = synth_funnel(&SynthFunnelConfig::default()).unwrap();
        let cfg = LinearConfig { epochs: 5, ..Default::default() };
        let model = BaselineModel::Bank(train_bank_raw(&ds, &labels, &cfg).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.json");
        model.save(&cfg, None, &path).unwrap();
        assert_eq!(BaselineModel::load(&path).unwrap(), (model, None));
    }
}
