//! Learned RRS: StatNet predicts local radiance statistics, RRSNet predicts
//! factors. Both are trained online from the renderer's own samples.

pub mod adam;
mod checkpoint;
pub mod filter;
pub mod hashgrid;
pub mod loss;
pub mod mlp;
pub mod network;
mod trainer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{Adam, AdamConfig, Ema};
pub use filter::{update_error_signal, AtrousFilter};
pub use hashgrid::{HashGrid, HashGridConfig};
pub use loss::{LossWeights, StatLossForm, PixelErrors, RrsLoss, RrsTerm};
pub use mlp::{Mlp, MlpConfig};
pub use network::Network;
pub use trainer::{CurveRow, NeuralRrs, TrainSummary};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// RRSNet reads StatNet's statistics.
    #[default]
    Nrrs,
    /// RRSNet reads position and direction through its own grid.
    Aid,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Nrrs => "nrrs",
            Variant::Aid => "aid",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nrrs" => Ok(Variant::Nrrs),
            "aid" | "aid-nrrs" => Ok(Variant::Aid),
            other => Err(Error::InvalidArgument(format!("unknown network variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// StatNet fits its targets while RRSNet is pulled toward 1.
    Warmup,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeuralConfig {
    pub variant: Variant,
    pub grid: HashGridConfig,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub leaky_slope: f32,
    pub statnet_lr: f32,
    pub rrsnet_lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub adam_epsilon: f32,
    pub ema_decay: f32,
    pub batch_size: usize,
    pub steps_per_frame: usize,
    pub loss_weights: LossWeights,
    /// Guard in the relative losses and the pixel error.
    pub epsilon: f32,
    pub statnet_loss: StatLossForm,
    /// Fraction of the training frames spent in warmup.
    pub warmup_fraction: f32,
    /// Final fraction of the training frames with the error filter off.
    pub filter_off_fraction: f32,
    pub filter: AtrousFilter,
    /// Lower bound on the factor in the variance derivative.
    pub q_floor: f32,
    pub seed: u64,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Nrrs,
            grid: HashGridConfig::default(),
            hidden: 32,
            hidden_layers: 3,
            leaky_slope: 0.01,
            statnet_lr: 0.005,
            rrsnet_lr: 0.0003,
            beta1: 0.9,
            beta2: 0.99,
            adam_epsilon: 1e-8,
            ema_decay: 0.99,
            batch_size: 1 << 16,
            steps_per_frame: 1,
            loss_weights: LossWeights::default(),
            epsilon: loss::LOSS_EPSILON,
            statnet_loss: StatLossForm::default(),
            warmup_fraction: 0.3,
            filter_off_fraction: 0.1,
            filter: AtrousFilter::default(),
            q_floor: 0.05,
            seed: 0,
        }
    }
}

impl NeuralConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.batch_size == 0 || self.steps_per_frame == 0 {
            return bad("batch size and steps per frame must be positive");
        }
        if self.hidden == 0 || self.hidden_layers == 0 {
            return bad("network needs at least one hidden layer");
        }
        if self.grid.levels == 0 || self.grid.features == 0 || self.grid.log2_table_size > 24 {
            return bad("hash grid needs levels, features and a table of at most 2^24 entries");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) || !(0.0..=1.0).contains(&self.filter_off_fraction) {
            return bad("schedule fractions must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad("EMA decay must lie in [0, 1)");
        }
        if !(self.statnet_lr > 0.0 && self.rrsnet_lr > 0.0 && self.epsilon > 0.0 && self.q_floor > 0.0) {
            return bad("learning rates, epsilon and q floor must be positive");
        }
        Ok(())
    }
}
