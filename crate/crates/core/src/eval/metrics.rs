//! Video-wise accuracy and macro-F1, all-points average precision and mAP.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;

/// Aligned per-frame class indices for one video.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoSequence {
    pub video_id: String,
    pub predicted: Vec<usize>,
    pub truth: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMetrics {
    pub video_id: String,
    pub frames: usize,
    pub accuracy: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideowiseReport {
    pub per_video: Vec<VideoMetrics>,
    /// Unweighted means over videos.
    pub mean_accuracy: f64,
    pub mean_f1: f64,
}

/// Accuracy is the fraction of correct frames. F1 is the unweighted mean,
/// over classes present in the video's ground truth, of
/// `2 tp / (2 tp + fp + fn)` counted on that video's frames.
fn score_video(v: &VideoSequence) -> Result<VideoMetrics, EvalError> {
    if v.predicted.len() != v.truth.len() {
        return Err(EvalError::LengthMismatch(format!(
            "video {}: {} predictions for {} ground-truth frames",
            v.video_id,
            v.predicted.len(),
            v.truth.len()
        )));
    }
    if v.truth.is_empty() {
        return Err(EvalError::LengthMismatch(format!("video {} has no frames", v.video_id)));
    }
    let n = v.truth.len();
    let pairs = || v.predicted.iter().zip(&v.truth);
    let correct = pairs().filter(|(p, g)| p == g).count();
    let present: BTreeSet<usize> = v.truth.iter().copied().collect();
    let f1_sum: f64 = present
        .iter()
        .map(|&c| {
            let tp = pairs().filter(|&(&p, &g)| p == c && g == c).count();
            let fp = pairs().filter(|&(&p, &g)| p == c && g != c).count();
            let fn_ = pairs().filter(|&(&p, &g)| p != c && g == c).count();
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        })
        .sum();
    Ok(VideoMetrics {
        video_id: v.video_id.clone(),
        frames: n,
        accuracy: correct as f64 / n as f64,
        f1: f1_sum / present.len() as f64,
    })
}

pub fn videowise_accuracy_f1(videos: &[VideoSequence]) -> Result<VideowiseReport, EvalError> {
    if videos.is_empty() {
        return Err(EvalError::NoVideos);
    }
    let per_video = videos.par_iter().map(score_video).collect::<Result<Vec<_>, _>>()?;
    let n = per_video.len() as f64;
    Ok(VideowiseReport {
        mean_accuracy: per_video.iter().map(|m| m.accuracy).sum::<f64>() / n,
        mean_f1: per_video.iter().map(|m| m.f1).sum::<f64>() / n,
        per_video,
    })
}

/// All-points average precision: rank by descending score (ties keep input
/// order) and average the precision at the rank of every positive.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(EvalError::NonFinite("scores"));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    /// `None` for classes without a positive label.
    pub per_class: Vec<Option<f64>>,
    pub map: f64,
}

/// Per-class AP over rows of `scores` and multi-hot `labels`, and their mean
/// over classes that have at least one positive.
pub fn map_over_classes(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<MapReport, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(format!(
            "{} score rows for {} label rows",
            scores.len(),
            labels.len()
        )));
    }
    let n_classes = scores.first().map_or(0, Vec::len);
    if let Some(i) = (0..scores.len()).find(|&i| scores[i].len() != n_classes || labels[i].len() != n_classes) {
        return Err(EvalError::LengthMismatch(format!(
            "row {i} does not have {n_classes} classes"
        )));
    }
    let per_class = (0..n_classes)
        .map(|c| {
            let s: Vec<f64> = scores.iter().map(|r| r[c]).collect();
            let l: Vec<bool> = labels.iter().map(|r| r[c]).collect();
            match average_precision(&s, &l) {
                Ok(ap) => Ok(Some(ap)),
                Err(EvalError::NoPositives) => {
                    log::info!("class {c} has no positives; skipped in mAP");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let included: Vec<f64> = per_class.iter().flatten().copied().collect();
    if included.is_empty() {
        return Err(EvalError::NoPositives);
    }
    Ok(MapReport {
        map: included.iter().sum::<f64>() / included.len() as f64,
        per_class,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub videowise: Option<VideowiseReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<MapReport>,
}
