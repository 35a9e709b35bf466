use std::collections::BTreeMap;
use std::path::Path;

use log::{debug, warn};
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::graph::{build_graph, sls_grad, sls_loss, SimilarityGraph};
use super::losses::{lc_grad, lc_loss, tc_grad, tc_loss};
use crate::aemtd::CompletedDataset;
use crate::error::{Result, StageError};
use crate::labels::{repair_thermometer, LabelMatrix, APPROVE, REJECT};
use crate::nn::{sgd_step, Activation, DenseNet, NetDocument, NetGrads, SgdConfig, FORMAT_VERSION};
use crate::util::{derive_seed, rng_from_seed, stratified_holdout};

/// Largest row count for which a single graph over all rows is built.
pub const GLOBAL_GRAPH_LIMIT: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    /// A fresh graph over each minibatch.
    #[default]
    PerBatch,
    /// One graph over all training rows; batches use its restriction.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlsslConfig {
    pub hidden: Vec<usize>,
    pub hidden_activation: Activation,
    /// Weight penalty `lambda ||omega||_F^2`.
    pub lambda: f64,
    pub k_nn: usize,
    pub h_nn: usize,
    pub w_lc: f64,
    pub w_sls: f64,
    pub w_tc: f64,
    /// Skip cells with unknown labels in the label-consistency term.
    pub mask_missing: bool,
    pub graph_mode: GraphMode,
    pub validation_fraction: f64,
}

impl Default for MlsslConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32],
            hidden_activation: Activation::Tanh,
            lambda: 0.5,
            k_nn: 20,
            h_nn: 5,
            w_lc: 1.0,
            w_sls: 1.0,
            w_tc: 1.0,
            mask_missing: true,
            graph_mode: GraphMode::PerBatch,
            validation_fraction: 0.1,
        }
    }
}

impl MlsslConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_nn == 0 || self.h_nn == 0 {
            return Err(StageError::validation("k_nn and h_nn must be positive"));
        }
        if self.h_nn > self.k_nn {
            return Err(StageError::validation(format!(
                "h_nn = {} exceeds k_nn = {}",
                self.h_nn, self.k_nn
            )));
        }
        for w in [self.lambda, self.w_lc, self.w_sls, self.w_tc] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(StageError::validation("lambda and term weights must be finite and non-negative"));
            }
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return Err(StageError::validation("validation fraction must lie in [0, 0.5)"));
        }
        Ok(())
    }
}

/// Terms of the classifier objective for one batch (unweighted).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MlsslTerms {
    pub lc: f64,
    pub sls: f64,
    pub tc: f64,
    pub penalty: f64,
    pub total: f64,
}

/// Signed per-stage decisions and the raw scores behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub signs: Array2<i8>,
    pub scores: Array2<f64>,
}

/// `C_omega`: a dense net from completed features to `S` tanh scores.
#[derive(Debug, Clone, PartialEq)]
pub struct MlsslClassifier {
    pub(crate) config: MlsslConfig,
    pub(crate) net: DenseNet,
    pub(crate) column_names: Vec<String>,
    pub(crate) num_stages: usize,
}

impl MlsslClassifier {
    pub fn new(column_names: Vec<String>, num_stages: usize, config: MlsslConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if num_stages == 0 || column_names.is_empty() {
            return Err(StageError::validation("classifier needs features and at least one stage"));
        }
        let mut widths = vec![column_names.len()];
        widths.extend_from_slice(&config.hidden);
        widths.push(num_stages);
        let net = DenseNet::new(&widths, config.hidden_activation, Activation::Tanh, &mut rng_from_seed(seed))?;
        Ok(Self {
            config,
            net,
            column_names,
            num_stages,
        })
    }

    pub fn config(&self) -> &MlsslConfig {
        &self.config
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    pub fn num_stages(&self) -> usize {
        self.num_stages
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn scores(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.net.forward(x)
    }

    /// Objective on one batch and its gradient. `graph` is the batch's
    /// similarity graph (`None` skips the smoothness term); `penalty_scale`
    /// multiplies `lambda ||omega||^2`.
    pub fn batch_objective(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        graph: Option<&SimilarityGraph>,
        penalty_scale: f64,
    ) -> Result<(MlsslTerms, NetGrads)> {
        if y.nrows() != x.nrows() || y.ncols() != self.num_stages {
            return Err(StageError::shape(format!(
                "labels {:?} for {} rows and {} stages",
                y.dim(),
                x.nrows(),
                self.num_stages
            )));
        }
        let cfg = &self.config;
        let trace = self.net.forward_trace(x)?;
        let yhat = trace.output().view();
        let lc = lc_loss(yhat, y, cfg.mask_missing)?;
        let tc = tc_loss(yhat);
        let mut grad = lc_grad(yhat, y, cfg.mask_missing) * cfg.w_lc;
        grad.scaled_add(cfg.w_tc, &tc_grad(yhat));
        let sls = match graph {
            Some(g) => {
                grad.scaled_add(cfg.w_sls, &sls_grad(yhat, g));
                sls_loss(yhat, g)?
            }
            None => 0.0,
        };
        let k = cfg.lambda * penalty_scale;
        let penalty = self.net.weight_sq_norm();
        let (mut grads, _) = self.net.backward(&trace, &grad);
        grads.add_assign(&self.net.weight_penalty_grads(k));
        let terms = MlsslTerms {
            lc,
            sls,
            tc,
            penalty,
            total: cfg.w_lc * lc + cfg.w_sls * sls + cfg.w_tc * tc + k * penalty,
        };
        Ok((terms, grads))
    }

    /// Signs with ties rejected, repaired to the longest valid prefix.
    pub fn predict(&self, x: &CompletedDataset) -> Result<Prediction> {
        self.check_columns(&x.column_names)?;
        self.predict_features(x.features.view())
    }

    pub fn predict_features(&self, x: ArrayView2<f64>) -> Result<Prediction> {
        let scores = self.scores(x)?;
        Ok(Prediction {
            signs: signs_from_scores(scores.view()),
            scores,
        })
    }

    pub fn check_columns(&self, names: &[String]) -> Result<()> {
        if names != self.column_names.as_slice() {
            return Err(StageError::validation(format!(
                "classifier expects columns {:?}, data has {:?}",
                self.column_names, names
            )));
        }
        Ok(())
    }

    pub fn to_document(&self) -> MlsslDocument {
        MlsslDocument {
            format_version: FORMAT_VERSION,
            kind: "mlssl".into(),
            config: self.config.clone(),
            column_names: self.column_names.clone(),
            num_stages: self.num_stages,
            net: self.net.to_document(),
        }
    }

    pub fn from_document(doc: &MlsslDocument) -> Result<Self> {
        if doc.format_version != FORMAT_VERSION || doc.kind != "mlssl" {
            return Err(StageError::validation(format!(
                "not an mlssl classifier of format {FORMAT_VERSION}"
            )));
        }
        let net = DenseNet::from_document(&doc.net)?;
        if net.input_width() != doc.column_names.len() || net.output_width() != doc.num_stages {
            return Err(StageError::shape("classifier network does not fit its columns and stages"));
        }
        Ok(Self {
            config: doc.config.clone(),
            net,
            column_names: doc.column_names.clone(),
            num_stages: doc.num_stages,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let doc = self.to_document();
        crate::util::atomic_write(path, |w| {
            serde_json::to_writer(w, &doc)?;
            Ok(())
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let doc: MlsslDocument = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_document(&doc)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlsslDocument {
    pub format_version: u32,
    pub kind: String,
    pub config: MlsslConfig,
    pub column_names: Vec<String>,
    pub num_stages: usize,
    pub net: NetDocument,
}

/// `sign` with `sign(0) = -1`, then thermometer repair per row.
pub fn signs_from_scores(scores: ArrayView2<f64>) -> Array2<i8> {
    let mut signs = scores.mapv(|v| if v > 0.0 { APPROVE } else { REJECT });
    for mut row in signs.rows_mut() {
        let mut v = row.to_vec();
        repair_thermometer(&mut v);
        row.assign(&ndarray::ArrayView1::from(&v[..]));
    }
    signs
}

#[derive(Debug, Clone)]
pub struct MlsslFit {
    pub classifier: MlsslClassifier,
    /// `(epoch, train objective per row, validation objective per row)`;
    /// epoch 0 is the untrained classifier.
    pub history: Vec<(usize, f64, f64)>,
    pub best_epoch: usize,
    /// Distinct warnings with the number of times each was raised.
    pub warnings: BTreeMap<String, usize>,
    pub train_rows: Vec<usize>,
    pub validation_rows: Vec<usize>,
}

struct GraphSource<'a> {
    features: ArrayView2<'a, f64>,
    global: Option<(Vec<usize>, SimilarityGraph)>,
    k_nn: usize,
    h_nn: usize,
}

impl GraphSource<'_> {
    /// Graph over `rows`, or `None` when the batch is too small.
    fn for_rows(&self, rows: &[usize], warnings: &mut BTreeMap<String, usize>) -> Result<Option<SimilarityGraph>> {
        if rows.len() < 2 {
            *warnings
                .entry("batch of one row: smoothness term skipped".to_string())
                .or_default() += 1;
            return Ok(None);
        }
        if let Some((index, g)) = &self.global {
            let local: Vec<usize> = rows
                .iter()
                .map(|r| index.binary_search(r).expect("batch rows come from the graph rows"))
                .collect();
            return Ok(Some(g.restrict(&local)));
        }
        let k = self.k_nn.min(rows.len() - 1);
        let h = self.h_nn.min(k);
        let x = self.features.select(Axis(0), rows);
        build_graph(x.view(), k, h).map(Some)
    }
}

fn objective_over(
    clf: &MlsslClassifier,
    x: &CompletedDataset,
    y: &Array2<f64>,
    rows: &[usize],
    chunk: usize,
    source: &GraphSource<'_>,
    penalty_scale: f64,
) -> Result<f64> {
    let mut warnings = BTreeMap::new();
    let mut total = 0.0;
    for part in rows.chunks(chunk) {
        let g = source.for_rows(part, &mut warnings)?;
        let (terms, _) = clf.batch_objective(
            x.features.select(Axis(0), part).view(),
            y.select(Axis(0), part).view(),
            g.as_ref(),
            0.0,
        )?;
        total += terms.total;
    }
    let penalty = clf.config.lambda * penalty_scale * clf.net.weight_sq_norm();
    Ok(total / rows.len().max(1) as f64 + penalty)
}

fn divergence(epoch: usize, stage: usize, e: StageError) -> StageError {
    match e {
        StageError::Divergence { layer } => StageError::Training {
            epoch,
            stage,
            message: format!("non-finite gradient in layer {layer}"),
        },
        other => other,
    }
}

/// Train with the backward stage sweep: each epoch visits `s = S, ..., 0`
/// and takes one step per minibatch of rows whose depth is at least `s`.
/// Returns the classifier with the best validation objective.
pub fn train_mlssl(
    x: &CompletedDataset,
    labels: &LabelMatrix,
    clf: MlsslClassifier,
    sgd: &SgdConfig,
) -> Result<MlsslFit> {
    sgd.validate()?;
    clf.config.validate()?;
    clf.check_columns(&x.column_names)?;
    if labels.num_rows() != x.len() {
        return Err(StageError::shape(format!(
            "{} label rows for {} data rows",
            labels.num_rows(),
            x.len()
        )));
    }
    if labels.num_stages() != clf.num_stages {
        return Err(StageError::shape(format!(
            "labels cover {} stages, classifier {}",
            labels.num_stages(),
            clf.num_stages
        )));
    }
    if x.is_empty() {
        return Err(StageError::validation("cannot train on an empty dataset"));
    }
    if x.provenance.nrows() != x.len() {
        return Err(StageError::validation("completed data lacks provenance"));
    }
    let y = labels.as_f64();
    let depth = &x.rows.depth;
    let (train, val) = stratified_holdout(
        depth,
        clf.config.validation_fraction,
        &mut rng_from_seed(derive_seed(sgd.seed, 0x5501)),
    );
    let select_rows = if val.is_empty() { train.clone() } else { val.clone() };
    let n_train = train.len() as f64;

    let global = if clf.config.graph_mode == GraphMode::Global {
        if train.len() > GLOBAL_GRAPH_LIMIT {
            return Err(StageError::validation(format!(
                "global graph mode supports at most {GLOBAL_GRAPH_LIMIT} rows"
            )));
        }
        let mut index = train.clone();
        index.extend_from_slice(&val);
        index.sort_unstable();
        let k = clf.config.k_nn.min(index.len().saturating_sub(1)).max(1);
        let g = build_graph(x.features.select(Axis(0), &index).view(), k, clf.config.h_nn.min(k))?;
        Some((index, g))
    } else {
        None
    };
    let source = GraphSource {
        features: x.features.view(),
        global,
        k_nn: clf.config.k_nn,
        h_nn: clf.config.h_nn,
    };

    let mut warnings = BTreeMap::new();
    let mut rng = rng_from_seed(derive_seed(sgd.seed, 0x5502));
    let eval = |c: &MlsslClassifier, rows: &[usize]| {
        objective_over(c, x, &y, rows, sgd.minibatch_size, &source, 1.0 / n_train)
    };
    let mut clf = clf;
    let mut history = vec![(0, eval(&clf, &train)?, eval(&clf, &select_rows)?)];
    let mut best = clf.clone();
    let mut best_epoch = 0;
    let mut best_value = history[0].2;
    let mut since_best = 0;

    for epoch in 1..=sgd.max_epochs {
        for s in (0..=clf.num_stages).rev() {
            let mut reach: Vec<usize> = train.iter().copied().filter(|&i| depth[i] >= s).collect();
            reach.shuffle(&mut rng);
            for batch in reach.chunks(sgd.minibatch_size) {
                let g = source.for_rows(batch, &mut warnings)?;
                let (terms, grads) = clf
                    .batch_objective(
                        x.features.select(Axis(0), batch).view(),
                        y.select(Axis(0), batch).view(),
                        g.as_ref(),
                        batch.len() as f64 / n_train,
                    )
                    .map_err(|e| divergence(epoch, s, e))?;
                if !terms.total.is_finite() {
                    return Err(StageError::Training {
                        epoch,
                        stage: s,
                        message: "objective is not finite".into(),
                    });
                }
                sgd_step(&mut clf.net, &grads, sgd).map_err(|e| divergence(epoch, s, e))?;
            }
        }
        let rec = (epoch, eval(&clf, &train)?, eval(&clf, &select_rows)?);
        if !rec.2.is_finite() {
            return Err(StageError::Training {
                epoch,
                stage: 0,
                message: "validation objective is not finite".into(),
            });
        }
        debug!("mlssl epoch {epoch}: train {:.5} val {:.5}", rec.1, rec.2);
        history.push(rec);
        if rec.2 < best_value {
            best_value = rec.2;
            best = clf.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if sgd.patience > 0 && since_best >= sgd.patience {
                break;
            }
        }
    }
    for (w, count) in &warnings {
        warn!("{w} ({count} times)");
    }
    Ok(MlsslFit {
        classifier: best,
        history,
        best_epoch,
        warnings,
        train_rows: train,
        validation_rows: val,
    })
}
