//! Adversarial encoder with a multi-task decoder.
//!
//! The encoder maps a row's observed prefix (zero-padded to `d^S`) to a
//! Gaussian embedding pushed towards `N(0, I)` by a discriminator. The
//! decoder reconstructs the prefix and, through a second head, predicts the
//! columns of later stages. [`complete`] uses both heads to fill every row.

mod complete;
mod losses;
mod model;
mod train;

pub use complete::{complete, CompletedDataset, SplicePolicy, GENERATED_COLUMN};
pub use losses::{fn_loss, future_mask, gan_losses, masked_feature_loss, rec_loss, reconstruction_mask, LOG_FLOOR};
pub use model::{
    AemtdConfig, AemtdDocument, AemtdModel, AutoencoderGrads, ObjectiveParts, StageBatch, LOGVAR_BOUND,
};
pub use train::{embedding_statistics, mean_objective, train_aemtd, AemtdFit, EpochRecord};

#[cfg(test)]
mod tests;
