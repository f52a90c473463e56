//! Multinomial logistic regression on frozen features.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::metrics::{videowise_accuracy_f1, VideoSequence, VideowiseReport};
use super::zero_shot::argmax_first;
use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Penalty `l2 / 2 * |W|^2` on the weights; the bias is not penalized.
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            lr: 0.5,
            epochs: 200,
            l2: 1e-4,
        }
    }
}

/// `D x C` weights and a per-class bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

fn softmax_rows(mut logits: DMatrix<f64>) -> DMatrix<f64> {
    for mut row in logits.row_iter_mut() {
        let m = row.max();
        row.apply(|x| *x = (*x - m).exp());
        let s = row.sum();
        row /= s;
    }
    logits
}

impl LinearProbe {
    pub fn zeros(dim: usize, n_classes: usize) -> Self {
        LinearProbe {
            weights: DMatrix::zeros(dim, n_classes),
            bias: DVector::zeros(n_classes),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn logits(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut l = x * &self.weights;
        for mut row in l.row_iter_mut() {
            row += self.bias.transpose();
        }
        l
    }

    pub fn probabilities(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        softmax_rows(self.logits(x))
    }

    /// Argmax class per row, earliest class on ties.
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<usize> {
        let p = self.probabilities(x);
        p.row_iter()
            .map(|r| argmax_first(&r.iter().copied().collect::<Vec<_>>()))
            .collect()
    }

    /// Mean cross-entropy plus the weight penalty, and its gradients.
    pub fn loss_and_grad(&self, x: &DMatrix<f64>, y: &[usize], l2: f64) -> (f64, DMatrix<f64>, DVector<f64>) {
        let n = x.nrows() as f64;
        let logits = self.logits(x);
        let mut ce = 0.0;
        for (i, row) in logits.row_iter().enumerate() {
            let m = row.max();
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            ce += lse - row[y[i]];
        }
        let loss = ce / n + 0.5 * l2 * self.weights.norm_squared();
        let mut d = softmax_rows(logits);
        for (i, &c) in y.iter().enumerate() {
            d[(i, c)] -= 1.0;
        }
        d /= n;
        let d_w = x.transpose() * &d + l2 * &self.weights;
        let d_b = d.row_sum().transpose();
        (loss, d_w, d_b)
    }
}

fn check_inputs(x: &DMatrix<f64>, y: &[usize], n_classes: usize) -> Result<(), EvalError> {
    if x.nrows() != y.len() {
        return Err(EvalError::LengthMismatch(format!(
            "{} feature rows for {} labels",
            x.nrows(),
            y.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite("features"));
    }
    if let Some(&label) = y.iter().find(|&&c| c >= n_classes) {
        return Err(EvalError::LabelOutOfRange { label, n_classes });
    }
    Ok(())
}

/// Full-batch gradient descent from zero weights. The trajectory depends
/// only on the inputs, so runs are reproducible.
pub fn train_probe(
    x: &DMatrix<f64>,
    y: &[usize],
    n_classes: usize,
    cfg: &ProbeConfig,
) -> Result<LinearProbe, EvalError> {
    check_inputs(x, y, n_classes)?;
    let distinct = y.iter().collect::<std::collections::BTreeSet<_>>().len();
    if n_classes < 2 || distinct < 2 {
        return Err(EvalError::TooFewClasses(distinct));
    }
    if !(cfg.lr.is_finite() && cfg.lr >= 0.0 && cfg.l2.is_finite() && cfg.l2 >= 0.0) {
        return Err(EvalError::InvalidConfig(format!("lr {} l2 {}", cfg.lr, cfg.l2)));
    }
    let mut probe = LinearProbe::zeros(x.ncols(), n_classes);
    for epoch in 0..cfg.epochs {
        let (loss, d_w, d_b) = probe.loss_and_grad(x, y, cfg.l2);
        if !loss.is_finite() {
            return Err(EvalError::Divergence { epoch });
        }
        probe.weights -= cfg.lr * d_w;
        probe.bias -= cfg.lr * d_b;
    }
    if probe.weights.iter().chain(probe.bias.iter()).any(|v| !v.is_finite()) {
        return Err(EvalError::Divergence { epoch: cfg.epochs });
    }
    Ok(probe)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOutcome {
    pub probe: LinearProbe,
    pub predictions: Vec<usize>,
    pub metrics: VideowiseReport,
}

/// Trains on `(train_x, train_y)` and scores `test_x` video by video;
/// `test_videos[i]` names the video of test row `i`, and rows of one video
/// must be contiguous and in frame order.
pub fn linear_probe(
    train_x: &DMatrix<f64>,
    train_y: &[usize],
    test_x: &DMatrix<f64>,
    test_y: &[usize],
    test_videos: &[String],
    n_classes: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeOutcome, EvalError> {
    let probe = train_probe(train_x, train_y, n_classes, cfg)?;
    check_inputs(test_x, test_y, n_classes)?;
    if test_x.ncols() != train_x.ncols() {
        return Err(EvalError::DimensionMismatch(format!(
            "train features have {} columns, test {}",
            train_x.ncols(),
            test_x.ncols()
        )));
    }
    if test_videos.len() != test_y.len() {
        return Err(EvalError::LengthMismatch(format!(
            "{} video ids for {} test rows",
            test_videos.len(),
            test_y.len()
        )));
    }
    let predictions = probe.predict(test_x);
    let mut videos: Vec<VideoSequence> = Vec::new();
    for (i, vid) in test_videos.iter().enumerate() {
        match videos.last_mut() {
            Some(v) if &v.video_id == vid => {
                v.predicted.push(predictions[i]);
                v.truth.push(test_y[i]);
            }
            _ => videos.push(VideoSequence {
                video_id: vid.clone(),
                predicted: vec![predictions[i]],
                truth: vec![test_y[i]],
            }),
        }
    }
    let metrics = videowise_accuracy_f1(&videos)?;
    Ok(ProbeOutcome {
        probe,
        predictions,
        metrics,
    })
}
