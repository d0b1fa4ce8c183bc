//! Trajectory similarity: GRU encoder-decoder forecaster, DTW alignment,
//! DTW-based training objectives and the similarity score used by the
//! protocol thresholds.

mod checkpoint;
mod dtw;
mod gru;
mod model;
mod soft_dtw;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use dtw::{cost_matrix, dtw, WarpingPath};
pub use gru::GruCell;
pub use model::{raw_features, ModelGrad, Normalizer, SrpModel, FEATURES};
pub use soft_dtw::{loss_and_grad, soft_dtw, soft_dtw_grad, soft_dtw_loss, LossKind};
pub use train::{batch_loss, train, windows, Example, TrainConfig};

use std::path::PathBuf;
use std::sync::Arc;

use ndarray::{s, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, SrpError};
use crate::types::Trajectory;

/// Where the similarity score comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SrpMode {
    /// DTW over recorded feature histories, no model.
    #[default]
    History,
    /// Train a model on a mobility-only pre-run before the simulation.
    Train,
    /// Load a trained model from `checkpoint`.
    Checkpoint,
}

/// Which sequences the model-based score aligns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compare {
    /// Forecast of each vehicle against the other's forecast.
    #[default]
    Predicted,
    /// Forecast of the ordinary vehicle against the core's recent record.
    Recorded,
}

fn d_hidden() -> usize {
    16
}
fn d_seq() -> usize {
    8
}
fn d_horizon() -> usize {
    4
}
fn d_epochs() -> usize {
    50
}
fn d_lr() -> f64 {
    1e-2
}
fn d_gamma() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SrpConfig {
    #[serde(default)]
    pub mode: SrpMode,
    #[serde(default = "d_hidden")]
    pub hidden: usize,
    #[serde(default = "d_seq")]
    pub seq_len: usize,
    #[serde(default = "d_horizon")]
    pub horizon: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default)]
    pub compare: Compare,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

impl Default for SrpConfig {
    fn default() -> Self {
        Self {
            mode: SrpMode::History,
            hidden: d_hidden(),
            seq_len: d_seq(),
            horizon: d_horizon(),
            epochs: d_epochs(),
            lr: d_lr(),
            gamma: d_gamma(),
            loss: LossKind::SoftDtw,
            compare: Compare::Predicted,
            checkpoint: None,
        }
    }
}

impl SrpConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.hidden == 0 {
            return Err(ConfigError::new("srp.hidden", "must be >= 1"));
        }
        if self.seq_len < 2 {
            return Err(ConfigError::new("srp.seq_len", "must be >= 2"));
        }
        if self.horizon == 0 {
            return Err(ConfigError::new("srp.horizon", "must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ConfigError::new("srp.lr", "must be > 0"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(ConfigError::new("srp.gamma", "must be > 0"));
        }
        if self.mode == SrpMode::Checkpoint && self.checkpoint.is_none() {
            return Err(ConfigError::new(
                "srp.checkpoint",
                "required when mode = \"checkpoint\"",
            ));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.lr,
            gamma: self.gamma,
            loss: self.loss,
        }
    }
}

/// Similarity scorer in `(0, 1]`: `exp(-dtw)` between feature sequences.
#[derive(Debug, Clone)]
pub struct Similarity {
    normalizer: Normalizer,
    model: Option<Arc<SrpModel>>,
    compare: Compare,
    window: usize,
}

impl Similarity {
    /// Scores recorded histories, using at most the last `window` samples.
    pub fn history(normalizer: Normalizer, window: usize) -> Self {
        Self {
            normalizer,
            model: None,
            compare: Compare::Predicted,
            window: window.max(2),
        }
    }

    pub fn with_model(model: Arc<SrpModel>, compare: Compare) -> Self {
        Self {
            normalizer: model.normalizer.clone(),
            window: model.seq_len,
            model: Some(model),
            compare,
        }
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn score(&self, core: &Trajectory, ordinary: &Trajectory) -> Result<f64, SrpError> {
        let a = self.normalizer.sequence(core.samples());
        let b = self.normalizer.sequence(ordinary.samples());
        self.score_features(a.view(), b.view())
    }

    /// Same as [`Similarity::score`] on already normalised rows.
    pub fn score_features(
        &self,
        core: ArrayView2<f64>,
        ordinary: ArrayView2<f64>,
    ) -> Result<f64, SrpError> {
        for t in [&core, &ordinary] {
            if t.nrows() < 2 {
                return Err(SrpError::InsufficientHistory {
                    needed: 2,
                    got: t.nrows(),
                });
            }
        }
        let (core, ordinary) = (tail(core, self.window), tail(ordinary, self.window));
        let distance = match &self.model {
            None => dtw(core, ordinary)?.0,
            Some(m) => {
                let po = m.forecast(ordinary)?;
                match self.compare {
                    Compare::Predicted => dtw(m.forecast(core)?.view(), po.view())?.0,
                    Compare::Recorded => {
                        let n = core.nrows();
                        let recent = core.slice(s![n.saturating_sub(m.horizon).., ..]);
                        dtw(recent, po.view())?.0
                    }
                }
            }
        };
        Ok((-distance).exp())
    }
}

fn tail(t: ArrayView2<'_, f64>, window: usize) -> ArrayView2<'_, f64> {
    let n = t.nrows();
    t.slice_move(s![n.saturating_sub(window).., ..])
}
