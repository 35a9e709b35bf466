use serde::{Deserialize, Serialize};

use super::{DenseNet, NetGrads};
use crate::error::{Result, StageError};

/// Plain minibatch SGD settings shared by every trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub minibatch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            minibatch_size: 32,
            max_epochs: 200,
            patience: 20,
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(StageError::validation(format!(
                "learning rate {} outside (0, 1]",
                self.learning_rate
            )));
        }
        if self.minibatch_size == 0 {
            return Err(StageError::validation("minibatch size must be at least 1"));
        }
        Ok(())
    }
}

/// `params <- params - learning_rate * grads`. A non-finite gradient leaves
/// the network untouched.
pub fn sgd_step(net: &mut DenseNet, grads: &NetGrads, cfg: &SgdConfig) -> Result<()> {
    if grads.layers.len() != net.layers.len() {
        return Err(StageError::shape("gradient layer count differs from the network"));
    }
    for (l, (layer, g)) in net.layers.iter().zip(&grads.layers).enumerate() {
        if layer.weights.raw_dim() != g.weights.raw_dim() || layer.bias.len() != g.bias.len() {
            return Err(StageError::shape(format!("gradient shape mismatch in layer {l}")));
        }
    }
    if let Some(layer) = grads.first_non_finite_layer() {
        return Err(StageError::Divergence { layer });
    }
    let lr = cfg.learning_rate;
    for (layer, g) in net.layers.iter_mut().zip(&grads.layers) {
        layer.weights.scaled_add(-lr, &g.weights);
        layer.bias.scaled_add(-lr, &g.bias);
    }
    Ok(())
}
