//! Variational trajectory model with a context posterior.
//!
//! Two encoders read observed displacements: one yields the latent posterior
//! given the observation, the other a context posterior in the same space.
//! Their product is the fused posterior that the future decoder and the past
//! reconstructor sample from.

mod batch;
mod loss;
mod network;

use serde::{Deserialize, Serialize};

use crate::data::{DEFAULT_OBS_LEN, DEFAULT_PRED_LEN};
use crate::error::{Error, Result};

pub use batch::{pooling_matrix, TrajectoryBatch};
pub use loss::{LossEval, LossParts, PriorInputs, SYM_KL_CAP};
pub use network::{fuse_posteriors, EncoderKind, Encoding, TrajectoryModel, LOG_STD_MAX, LOG_STD_MIN};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub obs_len: usize,
    pub pred_len: usize,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub lambda_pred: f64,
    pub lambda_rec: f64,
    pub lambda_kl: f64,
    pub lambda_sym: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            obs_len: DEFAULT_OBS_LEN,
            pred_len: DEFAULT_PRED_LEN,
            latent_dim: 16,
            hidden_dim: 32,
            lambda_pred: 1.0,
            lambda_rec: 1.0,
            lambda_kl: 1.0,
            lambda_sym: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.obs_len < 2 {
            return Err(Error::Config(format!("obs_len must be >= 2, got {}", self.obs_len)));
        }
        if self.pred_len < 1 {
            return Err(Error::Config("pred_len must be >= 1".into()));
        }
        if self.latent_dim < 1 || self.hidden_dim < 1 {
            return Err(Error::Config("latent_dim and hidden_dim must be >= 1".into()));
        }
        for (name, v) in [
            ("lambda_pred", self.lambda_pred),
            ("lambda_rec", self.lambda_rec),
            ("lambda_kl", self.lambda_kl),
            ("lambda_sym", self.lambda_sym),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Width of a flattened observed-displacement row.
    pub fn obs_width(&self) -> usize {
        2 * (self.obs_len - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = ModelConfig {
            obs_len: 1,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            lambda_sym: -0.1,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
