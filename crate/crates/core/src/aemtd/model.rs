use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::losses::{
    discriminator_loss_from_outputs, generator_loss_from_outputs, masked_feature_grad,
    masked_feature_loss, LOG_FLOOR,
};
use crate::dataset::{FeatureEncoder, FunnelDataset};
use crate::error::{Result, StageError};
use crate::nn::{Activation, DenseNet, NetDocument, NetGrads, FORMAT_VERSION};
use crate::schema::{ColumnKind, StageSchema};
use crate::util::rng_from_seed;

/// Log-variances are clamped to this magnitude before exponentiation.
pub const LOGVAR_BOUND: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AemtdConfig {
    pub embedding_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub rec_weight: f64,
    pub fn_weight: f64,
    pub gan_weight: f64,
    /// Share of rows held out for model selection.
    pub validation_fraction: f64,
    /// Discriminator updates per minibatch.
    pub discriminator_steps: usize,
    /// Discriminator learning rate relative to the shared one.
    pub discriminator_lr_scale: f64,
}

impl Default for AemtdConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 16,
            encoder_hidden: vec![64, 32],
            decoder_hidden: vec![32, 64],
            discriminator_hidden: vec![32],
            hidden_activation: Activation::Tanh,
            rec_weight: 1.0,
            fn_weight: 1.0,
            gan_weight: 1.0,
            validation_fraction: 0.1,
            discriminator_steps: 3,
            discriminator_lr_scale: 10.0,
        }
    }
}

impl AemtdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(StageError::validation("embedding dimension must be at least 1"));
        }
        if self.encoder_hidden.is_empty() || self.decoder_hidden.is_empty() {
            return Err(StageError::validation("encoder and decoder need a hidden layer"));
        }
        for w in [self.rec_weight, self.fn_weight, self.gan_weight] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(StageError::validation("loss weights must be finite and non-negative"));
            }
        }
        if self.discriminator_steps == 0 {
            return Err(StageError::validation("at least one discriminator step per batch"));
        }
        if !(self.discriminator_lr_scale > 0.0 && self.discriminator_lr_scale.is_finite()) {
            return Err(StageError::validation("discriminator learning-rate scale must be positive"));
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return Err(StageError::validation("validation fraction must lie in [0, 0.5)"));
        }
        Ok(())
    }
}

/// Encoder `P_theta` (trunk plus mean and log-variance heads), decoder
/// `Q_phi` (trunk plus reconstruction and future-feature heads) and
/// discriminator `D_gamma` over the embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct AemtdModel {
    pub(crate) schema: StageSchema,
    pub(crate) config: AemtdConfig,
    pub(crate) encoder_trunk: DenseNet,
    pub(crate) mu_head: DenseNet,
    pub(crate) logvar_head: DenseNet,
    pub(crate) decoder_trunk: DenseNet,
    pub(crate) rec_head: DenseNet,
    pub(crate) future_head: DenseNet,
    pub(crate) discriminator: DenseNet,
}

/// Rows of a dataset presented at one stage.
#[derive(Debug, Clone)]
pub struct StageBatch {
    /// Stage prefix of each row, zero-padded to `d^S`.
    pub input: Array2<f64>,
    pub target: Array2<f64>,
    pub rec_mask: Array2<bool>,
    pub fn_mask: Array2<bool>,
}

impl StageBatch {
    pub fn new(ds: &FunnelDataset, rows: &[usize], stage: usize) -> Self {
        let w = ds.schema().width(stage);
        let target = ds.features().select(Axis(0), rows);
        let mut input = target.clone();
        input.slice_mut(s![.., w..]).fill(0.0);
        Self {
            input,
            target,
            rec_mask: super::losses::reconstruction_mask(ds, rows, stage),
            fn_mask: super::losses::future_mask(ds, rows, stage),
        }
    }

    pub fn len(&self) -> usize {
        self.input.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.input.nrows() == 0
    }
}

/// Terms of the encoder/decoder objective for one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveParts {
    pub rec: f64,
    pub feature_nets: f64,
    pub generator: f64,
    /// Weighted total: `(w_rec rec + w_fn fn) / batch + w_gan generator`.
    pub total: f64,
}

/// Gradients for every encoder and decoder network.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderGrads {
    pub encoder_trunk: NetGrads,
    pub mu_head: NetGrads,
    pub logvar_head: NetGrads,
    pub decoder_trunk: NetGrads,
    pub rec_head: NetGrads,
    pub future_head: NetGrads,
}

impl AutoencoderGrads {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.encoder_trunk.flat();
        for g in [
            &self.mu_head,
            &self.logvar_head,
            &self.decoder_trunk,
            &self.rec_head,
            &self.future_head,
        ] {
            out.extend(g.flat());
        }
        out
    }
}

fn apply_binary_sigmoid(z: &mut Array2<f64>, kinds: &[ColumnKind]) {
    for (j, kind) in kinds.iter().enumerate() {
        if *kind == ColumnKind::Binary {
            z.column_mut(j).mapv_inplace(crate::nn::sigmoid);
        }
    }
}

impl AemtdModel {
    pub fn new(schema: StageSchema, config: AemtdConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(seed);
        let d = schema.total_width();
        let de = config.embedding_dim;
        let act = config.hidden_activation;
        let chain = |first: usize, hidden: &[usize]| {
            let mut w = vec![first];
            w.extend_from_slice(hidden);
            w
        };
        let enc_widths = chain(d, &config.encoder_hidden);
        let enc_out = *enc_widths.last().expect("non-empty");
        let encoder_trunk = DenseNet::new(&enc_widths, act, act, &mut rng)?;
        let mu_head = DenseNet::new(&[enc_out, de], act, Activation::Identity, &mut rng)?;
        let logvar_head = DenseNet::new(&[enc_out, de], act, Activation::Identity, &mut rng)?;
        let dec_widths = chain(de, &config.decoder_hidden);
        let dec_out = *dec_widths.last().expect("non-empty");
        let decoder_trunk = DenseNet::new(&dec_widths, act, act, &mut rng)?;
        let rec_head = DenseNet::new(&[dec_out, d], act, Activation::Identity, &mut rng)?;
        let future_head = DenseNet::new(&[dec_out, d], act, Activation::Identity, &mut rng)?;
        let mut disc_widths = chain(de, &config.discriminator_hidden);
        disc_widths.push(1);
        let discriminator = DenseNet::new(&disc_widths, act, Activation::Sigmoid, &mut rng)?;
        Ok(Self {
            schema,
            config,
            encoder_trunk,
            mu_head,
            logvar_head,
            decoder_trunk,
            rec_head,
            future_head,
            discriminator,
        })
    }

    pub fn schema(&self) -> &StageSchema {
        &self.schema
    }

    pub fn config(&self) -> &AemtdConfig {
        &self.config
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    pub fn discriminator(&self) -> &DenseNet {
        &self.discriminator
    }

    /// Mean and log-variance of the embedding for zero-padded inputs.
    pub fn encode(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let h = self.encoder_trunk.forward(input)?;
        Ok((self.mu_head.forward(h.view())?, self.logvar_head.forward(h.view())?))
    }

    /// Embedding sampled as `mu + exp(logvar / 2) * noise`.
    pub fn sample_embedding(&self, input: ArrayView2<f64>, noise: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (mu, lv) = self.encode(input)?;
        let mut e = mu;
        Zip::from(&mut e).and(&lv).and(noise).for_each(|e, &lv, &eps| {
            *e += (0.5 * lv.clamp(-LOGVAR_BOUND, LOGVAR_BOUND)).exp() * eps;
        });
        Ok(e)
    }

    /// Reconstruction and future-feature outputs; binary columns are
    /// probabilities.
    pub fn decode(&self, embedding: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let g = self.decoder_trunk.forward(embedding)?;
        let mut rec = self.rec_head.forward(g.view())?;
        let mut fut = self.future_head.forward(g.view())?;
        apply_binary_sigmoid(&mut rec, self.schema.column_kinds());
        apply_binary_sigmoid(&mut fut, self.schema.column_kinds());
        Ok((rec, fut))
    }

    fn check_noise(&self, batch: &StageBatch, noise: &ArrayView2<f64>) -> Result<()> {
        if noise.dim() != (batch.len(), self.embedding_dim()) {
            return Err(StageError::shape(format!(
                "noise {:?} does not match batch of {} x {}",
                noise.dim(),
                batch.len(),
                self.embedding_dim()
            )));
        }
        if batch.is_empty() {
            return Err(StageError::validation("empty batch"));
        }
        Ok(())
    }

    /// Encoder/decoder objective without gradients.
    pub fn objective(&self, batch: &StageBatch, noise: ArrayView2<f64>) -> Result<ObjectiveParts> {
        self.check_noise(batch, &noise)?;
        let cfg = &self.config;
        let kinds = self.schema.column_kinds();
        let e = self.sample_embedding(batch.input.view(), noise)?;
        let (rec, fut) = self.decode(e.view())?;
        let rec_value =
            masked_feature_loss(batch.target.view(), rec.view(), kinds, batch.rec_mask.view())?;
        let fn_value =
            masked_feature_loss(batch.target.view(), fut.view(), kinds, batch.fn_mask.view())?;
        let gen_value = generator_loss_from_outputs(self.discriminator.forward(e.view())?.view());
        Ok(ObjectiveParts {
            rec: rec_value,
            feature_nets: fn_value,
            generator: gen_value,
            total: (cfg.rec_weight * rec_value + cfg.fn_weight * fn_value) / batch.len() as f64
                + cfg.gan_weight * gen_value,
        })
    }

    /// Encoder/decoder objective and its gradients for the encoder and
    /// decoder networks. The discriminator is read but not differentiated.
    pub fn reconstruction_objective(
        &self,
        batch: &StageBatch,
        noise: ArrayView2<f64>,
    ) -> Result<(ObjectiveParts, AutoencoderGrads)> {
        self.check_noise(batch, &noise)?;
        let b = batch.len() as f64;
        let kinds = self.schema.column_kinds();
        let cfg = &self.config;

        let enc = self.encoder_trunk.forward_trace(batch.input.view())?;
        let mu = self.mu_head.forward_trace(enc.output().view())?;
        let lv = self.logvar_head.forward_trace(enc.output().view())?;
        let sd = lv
            .output()
            .mapv(|v| (0.5 * v.clamp(-LOGVAR_BOUND, LOGVAR_BOUND)).exp());
        let e = mu.output() + &(&sd * &noise);

        let dec = self.decoder_trunk.forward_trace(e.view())?;
        let rec = self.rec_head.forward_trace(dec.output().view())?;
        let fut = self.future_head.forward_trace(dec.output().view())?;
        let mut rec_out = rec.output().clone();
        let mut fut_out = fut.output().clone();
        apply_binary_sigmoid(&mut rec_out, kinds);
        apply_binary_sigmoid(&mut fut_out, kinds);

        let rec_value =
            masked_feature_loss(batch.target.view(), rec_out.view(), kinds, batch.rec_mask.view())?;
        let fn_value =
            masked_feature_loss(batch.target.view(), fut_out.view(), kinds, batch.fn_mask.view())?;
        let disc = self.discriminator.forward_trace(e.view())?;
        let gen_value = generator_loss_from_outputs(disc.output().view());
        let total = (cfg.rec_weight * rec_value + cfg.fn_weight * fn_value) / b
            + cfg.gan_weight * gen_value;

        let g_rec = masked_feature_grad(
            batch.target.view(),
            rec_out.view(),
            kinds,
            batch.rec_mask.view(),
            cfg.rec_weight / b,
        );
        let g_fut = masked_feature_grad(
            batch.target.view(),
            fut_out.view(),
            kinds,
            batch.fn_mask.view(),
            cfg.fn_weight / b,
        );
        let (rec_grads, d_trunk_a) = self.rec_head.backward(&rec, &g_rec);
        let (fut_grads, d_trunk_b) = self.future_head.backward(&fut, &g_fut);
        let (dec_grads, mut d_e) = self.decoder_trunk.backward(&dec, &(d_trunk_a + d_trunk_b));

        let m = disc.output().len() as f64;
        let g_disc_out = disc.output().mapv(|p| {
            if p < LOG_FLOOR {
                0.0
            } else {
                -cfg.gan_weight / (m * p)
            }
        });
        let (_, d_e_gan) = self.discriminator.backward(&disc, &g_disc_out);
        d_e += &d_e_gan;

        let mut d_lv = Array2::<f64>::zeros(d_e.raw_dim());
        Zip::from(&mut d_lv)
            .and(&d_e)
            .and(&sd)
            .and(lv.output())
            .and(noise)
            .for_each(|g, &de, &sd, &lv, &eps| {
                if lv.abs() < LOGVAR_BOUND {
                    *g = de * 0.5 * sd * eps;
                }
            });
        let (mu_grads, d_h_a) = self.mu_head.backward(&mu, &d_e);
        let (lv_grads, d_h_b) = self.logvar_head.backward(&lv, &d_lv);
        let (enc_grads, _) = self.encoder_trunk.backward(&enc, &(d_h_a + d_h_b));

        Ok((
            ObjectiveParts {
                rec: rec_value,
                feature_nets: fn_value,
                generator: gen_value,
                total,
            },
            AutoencoderGrads {
                encoder_trunk: enc_grads,
                mu_head: mu_grads,
                logvar_head: lv_grads,
                decoder_trunk: dec_grads,
                rec_head: rec_grads,
                future_head: fut_grads,
            },
        ))
    }

    /// Discriminator loss on prior samples versus encoded samples of the
    /// batch, with its gradient for the discriminator parameters.
    pub fn discriminator_objective(
        &self,
        batch: &StageBatch,
        noise: ArrayView2<f64>,
        prior: ArrayView2<f64>,
    ) -> Result<(f64, NetGrads)> {
        self.check_noise(batch, &noise)?;
        if prior.nrows() == 0 || prior.ncols() != self.embedding_dim() {
            return Err(StageError::shape("prior samples must be a non-empty d_e-wide batch"));
        }
        let e = self.sample_embedding(batch.input.view(), noise)?;
        let tp = self.discriminator.forward_trace(prior)?;
        let te = self.discriminator.forward_trace(e.view())?;
        let loss = discriminator_loss_from_outputs(tp.output().view(), te.output().view());
        let (mp, me) = (tp.output().len() as f64, te.output().len() as f64);
        let gp = tp
            .output()
            .mapv(|p| if p < LOG_FLOOR { 0.0 } else { -1.0 / (mp * p) });
        let ge = te.output().mapv(|p| {
            let q = 1.0 - p;
            if q < LOG_FLOOR {
                0.0
            } else {
                1.0 / (me * q)
            }
        });
        let (mut grads, _) = self.discriminator.backward(&tp, &gp);
        let (ge_grads, _) = self.discriminator.backward(&te, &ge);
        grads.add_assign(&ge_grads);
        Ok((loss, grads))
    }

    /// Flat encoder and decoder parameters, in [`AutoencoderGrads::flat`] order.
    pub fn autoencoder_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for net in self.autoencoder_nets() {
            out.extend(net.params_flat());
        }
        out
    }

    pub fn set_autoencoder_params(&mut self, params: &[f64]) {
        let mut k = 0;
        for net in self.autoencoder_nets_mut() {
            k += net.set_params_flat(&params[k..]);
        }
    }

    fn autoencoder_nets(&self) -> [&DenseNet; 6] {
        [
            &self.encoder_trunk,
            &self.mu_head,
            &self.logvar_head,
            &self.decoder_trunk,
            &self.rec_head,
            &self.future_head,
        ]
    }

    fn autoencoder_nets_mut(&mut self) -> [&mut DenseNet; 6] {
        [
            &mut self.encoder_trunk,
            &mut self.mu_head,
            &mut self.logvar_head,
            &mut self.decoder_trunk,
            &mut self.rec_head,
            &mut self.future_head,
        ]
    }

    pub fn discriminator_mut(&mut self) -> &mut DenseNet {
        &mut self.discriminator
    }

    pub(crate) fn apply_autoencoder_step(
        &mut self,
        grads: &AutoencoderGrads,
        sgd: &crate::nn::SgdConfig,
    ) -> Result<()> {
        let all = [
            &grads.encoder_trunk,
            &grads.mu_head,
            &grads.logvar_head,
            &grads.decoder_trunk,
            &grads.rec_head,
            &grads.future_head,
        ];
        // check everything first so a failing step leaves the model intact
        let mut offset = 0;
        for (net, g) in self.autoencoder_nets().iter().zip(all) {
            if let Some(layer) = g.first_non_finite_layer() {
                return Err(StageError::Divergence { layer: offset + layer });
            }
            offset += net.layers().len();
        }
        for (net, g) in self.autoencoder_nets_mut().into_iter().zip(all) {
            crate::nn::sgd_step(net, g, sgd)?;
        }
        Ok(())
    }

    pub fn to_document(&self, encoder: Option<&FeatureEncoder>) -> AemtdDocument {
        AemtdDocument {
            format_version: FORMAT_VERSION,
            kind: "aemtd".into(),
            schema: self.schema.clone(),
            config: self.config.clone(),
            feature_encoder: encoder.cloned(),
            encoder_trunk: self.encoder_trunk.to_document(),
            mu_head: self.mu_head.to_document(),
            logvar_head: self.logvar_head.to_document(),
            decoder_trunk: self.decoder_trunk.to_document(),
            rec_head: self.rec_head.to_document(),
            future_head: self.future_head.to_document(),
            discriminator: self.discriminator.to_document(),
        }
    }

    pub fn from_document(doc: &AemtdDocument) -> Result<Self> {
        if doc.format_version != FORMAT_VERSION || doc.kind != "aemtd" {
            return Err(StageError::validation(format!(
                "not an aemtd model of format {FORMAT_VERSION}"
            )));
        }
        let model = Self {
            schema: doc.schema.clone(),
            config: doc.config.clone(),
            encoder_trunk: DenseNet::from_document(&doc.encoder_trunk)?,
            mu_head: DenseNet::from_document(&doc.mu_head)?,
            logvar_head: DenseNet::from_document(&doc.logvar_head)?,
            decoder_trunk: DenseNet::from_document(&doc.decoder_trunk)?,
            rec_head: DenseNet::from_document(&doc.rec_head)?,
            future_head: DenseNet::from_document(&doc.future_head)?,
            discriminator: DenseNet::from_document(&doc.discriminator)?,
        };
        let d = model.schema.total_width();
        let de = model.config.embedding_dim;
        if model.encoder_trunk.input_width() != d
            || model.rec_head.output_width() != d
            || model.future_head.output_width() != d
            || model.mu_head.output_width() != de
            || model.decoder_trunk.input_width() != de
            || model.discriminator.input_width() != de
        {
            return Err(StageError::shape("aemtd document networks do not fit its schema"));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>, encoder: Option<&FeatureEncoder>) -> Result<()> {
        let doc = self.to_document(encoder);
        crate::util::atomic_write(path, |w| {
            serde_json::to_writer(w, &doc)?;
            Ok(())
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Option<FeatureEncoder>)> {
        let text = std::fs::read_to_string(path)?;
        let doc: AemtdDocument = serde_json::from_str(&text)?;
        Ok((Self::from_document(&doc)?, doc.feature_encoder))
    }
}

/// Persisted AEMTD model; carries the feature encoder used at training time
/// so new files are encoded identically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AemtdDocument {
    pub format_version: u32,
    pub kind: String,
    pub schema: StageSchema,
    pub config: AemtdConfig,
    pub feature_encoder: Option<FeatureEncoder>,
    pub encoder_trunk: NetDocument,
    pub mu_head: NetDocument,
    pub logvar_head: NetDocument,
    pub decoder_trunk: NetDocument,
    pub rec_head: NetDocument,
    pub future_head: NetDocument,
    pub discriminator: NetDocument,
}
