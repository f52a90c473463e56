//! Symmetric InfoNCE over paired video and text embeddings, its analytic
//! gradients, mixed-level batch sampling and a toy trainer.

pub mod sampling;
pub mod toy;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filtering::{plan_frame_samples, FilterError};
use crate::hierarchy::GranularityLevel;
use crate::transcript::Millis;

pub use sampling::{sample_batch, sample_mixed_batch, sample_stratified_batch, BatchSampling};
pub use toy::{
    recall_at_1, synthetic_split, train_toy, PairedData, SyntheticConfig, ToyEncoders, ToyRun, ToyTrainConfig,
    TracePoint,
};

pub const DEFAULT_TAU: f64 = 0.07;
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContrastiveError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("row {row} of {which} has norm {norm}")]
    NotUnitNorm { which: &'static str, row: usize, norm: f64 },
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("requested {requested} pairs but only {available} are available")]
    InsufficientPairs { requested: usize, available: usize },
    #[error("loss became non-finite at step {step}")]
    Divergence { step: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Softmax temperature, stored as `log_tau` so any finite value is valid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Temperature {
    log_tau: f64,
}

impl Temperature {
    pub fn from_tau(tau: f64) -> Result<Self, ContrastiveError> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(ContrastiveError::InvalidTemperature(tau));
        }
        Ok(Temperature { log_tau: tau.ln() })
    }

    pub fn from_log_tau(log_tau: f64) -> Result<Self, ContrastiveError> {
        if !log_tau.is_finite() {
            return Err(ContrastiveError::InvalidTemperature(log_tau.exp()));
        }
        Ok(Temperature { log_tau })
    }

    pub fn tau(self) -> f64 {
        self.log_tau.exp()
    }

    pub fn log_tau(self) -> f64 {
        self.log_tau
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Temperature::from_tau(DEFAULT_TAU).expect("default tau is valid")
    }
}

fn check_finite(m: &DMatrix<f64>, what: &'static str) -> Result<(), ContrastiveError> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(ContrastiveError::NonFinite(what))
    }
}

/// Paired, unit-normalized embeddings with one level tag per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    zv: DMatrix<f64>,
    zt: DMatrix<f64>,
    levels: Vec<GranularityLevel>,
}

impl EmbeddingBatch {
    pub fn new(zv: DMatrix<f64>, zt: DMatrix<f64>, levels: Vec<GranularityLevel>) -> Result<Self, ContrastiveError> {
        check_pair(&zv, &zt)?;
        if levels.len() != zv.nrows() {
            return Err(ContrastiveError::DimensionMismatch(format!(
                "{} level tags for {} pairs",
                levels.len(),
                zv.nrows()
            )));
        }
        for (m, which) in [(&zv, "video"), (&zt, "text")] {
            for (row, r) in m.row_iter().enumerate() {
                let norm = r.norm();
                if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                    return Err(ContrastiveError::NotUnitNorm { which, row, norm });
                }
            }
        }
        Ok(EmbeddingBatch { zv, zt, levels })
    }

    pub fn len(&self) -> usize {
        self.zv.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn video(&self) -> &DMatrix<f64> {
        &self.zv
    }

    pub fn text(&self) -> &DMatrix<f64> {
        &self.zt
    }

    pub fn levels(&self) -> &[GranularityLevel] {
        &self.levels
    }

    pub fn similarity(&self) -> DMatrix<f64> {
        &self.zv * self.zt.transpose()
    }

    pub fn loss(&self, tau: Temperature) -> Result<f64, ContrastiveError> {
        info_nce(&self.zv, &self.zt, tau)
    }

    pub fn grad(&self, tau: Temperature) -> Result<InfoNceGrad, ContrastiveError> {
        info_nce_grad(&self.zv, &self.zt, tau)
    }
}

fn check_pair(zv: &DMatrix<f64>, zt: &DMatrix<f64>) -> Result<(), ContrastiveError> {
    if zv.nrows() == 0 {
        return Err(ContrastiveError::EmptyBatch);
    }
    if zv.shape() != zt.shape() {
        return Err(ContrastiveError::DimensionMismatch(format!(
            "video {:?} vs text {:?}",
            zv.shape(),
            zt.shape()
        )));
    }
    check_finite(zv, "video embeddings")?;
    check_finite(zt, "text embeddings")
}

/// Entry `(i, j)` is `zv_i . zt_j`, the cosine similarity for unit rows.
pub fn similarity_matrix(zv: &DMatrix<f64>, zt: &DMatrix<f64>) -> Result<DMatrix<f64>, ContrastiveError> {
    if zv.ncols() != zt.ncols() {
        return Err(ContrastiveError::DimensionMismatch(format!(
            "embedding widths {} and {}",
            zv.ncols(),
            zt.ncols()
        )));
    }
    Ok(zv * zt.transpose())
}

/// Row-wise softmax and log-sum-exp, with the row max subtracted first.
fn row_softmax(l: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let mut p = l.clone();
    let mut lse = Vec::with_capacity(l.nrows());
    for mut row in p.row_iter_mut() {
        let m = row.max();
        row.apply(|x| *x = (*x - m).exp());
        let s = row.sum();
        row /= s;
        lse.push(m + s.ln());
    }
    (p, lse)
}

/// Cross-entropy of each row against the diagonal, averaged over rows.
fn directional_loss(l: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let (p, lse) = row_softmax(l);
    let b = l.nrows() as f64;
    let loss = lse.iter().enumerate().map(|(i, s)| s - l[(i, i)]).sum::<f64>() / b;
    (loss, p)
}

/// Both directional losses and their average.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfoNceParts {
    pub video_to_text: f64,
    pub text_to_video: f64,
    pub loss: f64,
}

pub fn info_nce_parts(
    zv: &DMatrix<f64>,
    zt: &DMatrix<f64>,
    tau: Temperature,
) -> Result<InfoNceParts, ContrastiveError> {
    check_pair(zv, zt)?;
    let l = (zv * zt.transpose()) / tau.tau();
    check_finite(&l, "logits")?;
    let (v2t, _) = directional_loss(&l);
    let (t2v, _) = directional_loss(&l.transpose());
    Ok(InfoNceParts {
        video_to_text: v2t,
        text_to_video: t2v,
        loss: 0.5 * (v2t + t2v),
    })
}

/// Symmetric InfoNCE: the mean of the video-to-text and text-to-video
/// cross-entropies over logits `zv zt^T / tau`.
pub fn info_nce(zv: &DMatrix<f64>, zt: &DMatrix<f64>, tau: Temperature) -> Result<f64, ContrastiveError> {
    info_nce_parts(zv, zt, tau).map(|p| p.loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfoNceGrad {
    pub loss: f64,
    pub d_zv: DMatrix<f64>,
    pub d_zt: DMatrix<f64>,
    pub d_log_tau: f64,
}

/// Loss and closed-form gradients. With `P` and `Q` the row softmaxes of
/// `L` and `L^T`, the gradient with respect to the logits is
/// `G = ((P - I) + (Q - I)^T) / 2B`; it flows to the embeddings through
/// `S = zv zt^T` scaled by `1/tau`, and to `log_tau` as `-sum(G * L)`.
pub fn info_nce_grad(zv: &DMatrix<f64>, zt: &DMatrix<f64>, tau: Temperature) -> Result<InfoNceGrad, ContrastiveError> {
    check_pair(zv, zt)?;
    let t = tau.tau();
    let b = zv.nrows();
    let l = (zv * zt.transpose()) / t;
    check_finite(&l, "logits")?;
    let (v2t, p) = directional_loss(&l);
    let (t2v, q) = directional_loss(&l.transpose());
    let eye = DMatrix::<f64>::identity(b, b);
    let g = ((p - &eye) + (q - &eye).transpose()) / (2.0 * b as f64);
    let gs = &g / t;
    Ok(InfoNceGrad {
        loss: 0.5 * (v2t + t2v),
        d_zv: &gs * zt,
        d_zt: gs.transpose() * zv,
        d_log_tau: -g.component_mul(&l).sum(),
    })
}

/// A fixed number of frames per clip, spread over the clip's whole span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSchedule {
    pub duration_ms: Millis,
    pub n_frames: usize,
    pub timestamps: Vec<Millis>,
}

impl FrameSchedule {
    pub fn stride_ms(&self) -> f64 {
        self.duration_ms as f64 / self.n_frames as f64
    }
}

/// Uses the same center-of-bin rule as frame filtering, so longer clips get
/// a proportionally longer stride.
pub fn dynamic_frame_schedule(t_start: Millis, t_end: Millis, n_frames: usize) -> Result<FrameSchedule, FilterError> {
    let plan = plan_frame_samples(t_start, t_end, n_frames)?;
    Ok(FrameSchedule {
        duration_ms: t_end - t_start,
        n_frames: plan.n_frames,
        timestamps: plan.timestamps,
    })
}
