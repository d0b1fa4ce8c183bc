use ndarray::{s, Array2, ArrayView2};

use super::model::SrpModel;
use super::soft_dtw::LossKind;
use crate::error::SrpError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 1e-2,
            gamma: 0.1,
            loss: LossKind::SoftDtw,
        }
    }
}

/// One training example: `seq_len` observed rows and `horizon` target rows.
pub type Example = (Array2<f64>, Array2<f64>);

/// Sliding windows over a normalised feature sequence, stride one.
pub fn windows(features: ArrayView2<f64>, seq_len: usize, horizon: usize) -> Vec<Example> {
    let n = features.nrows();
    if n < seq_len + horizon {
        return Vec::new();
    }
    (0..=(n - seq_len - horizon))
        .map(|start| {
            let mid = start + seq_len;
            (
                features.slice(s![start..mid, ..]).to_owned(),
                features.slice(s![mid..mid + horizon, ..]).to_owned(),
            )
        })
        .collect()
}

/// Mean loss over the dataset and its gradient.
pub fn batch_loss(
    model: &SrpModel,
    data: &[Example],
    cfg: &TrainConfig,
) -> Result<(f64, super::model::ModelGrad), SrpError> {
    if data.is_empty() {
        return Err(SrpError::EmptyDataset);
    }
    let mut total = 0.0;
    let mut grad = model.zero_grad();
    let k = 1.0 / data.len() as f64;
    for (x, y) in data {
        if x.nrows() != model.seq_len || y.nrows() != model.horizon {
            return Err(SrpError::ShapeMismatch(format!(
                "example windows are {}/{}, model expects {}/{}",
                x.nrows(),
                y.nrows(),
                model.seq_len,
                model.horizon
            )));
        }
        let (l, g) = model.loss_and_grad(x.view(), y.view(), cfg.loss, cfg.gamma)?;
        total += l;
        grad.add_scaled(&g, k);
    }
    Ok((total * k, grad))
}

/// Full-batch gradient descent. The returned history has `epochs + 1`
/// entries: the loss before training and after every epoch.
pub fn train(model: &mut SrpModel, data: &[Example], cfg: &TrainConfig) -> Result<Vec<f64>, SrpError> {
    model.check_shapes()?;
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let (mut loss, mut grad) = batch_loss(model, data, cfg)?;
    for epoch in 0..cfg.epochs {
        if !loss.is_finite() {
            return Err(SrpError::NonFiniteLoss { epoch });
        }
        history.push(loss);
        model.apply_grad(&grad, cfg.learning_rate);
        (loss, grad) = batch_loss(model, data, cfg)?;
    }
    if !loss.is_finite() {
        return Err(SrpError::NonFiniteLoss { epoch: cfg.epochs });
    }
    history.push(loss);
    Ok(history)
}
