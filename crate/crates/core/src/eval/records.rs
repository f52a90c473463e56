//! Line-delimited prediction and ground-truth records and their joint
//! evaluation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{map_over_classes, videowise_accuracy_f1, MetricsReport, VideoSequence};
use super::zero_shot::argmax_first;
use super::EvalError;

/// Class scores for one frame. `predicted` defaults to the first-index
/// argmax of `scores`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub video_id: String,
    pub frame: usize,
    pub scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<usize>,
}

impl PredictionRecord {
    pub fn predicted_class(&self) -> usize {
        self.predicted.unwrap_or_else(|| argmax_first(&self.scores))
    }
}

/// Either a single class (`label`) for phase-style tasks or a multi-hot
/// vector (`labels`) for multi-label tasks, or both.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthRecord {
    pub video_id: String,
    pub frame: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<bool>>,
}

/// Joins records on `(video_id, frame)`. Video-wise accuracy and F1 use the
/// single-label ground truth; mAP uses raw scores against multi-hot labels.
/// Either part is computed only when every ground-truth record carries it.
pub fn evaluate_records(preds: &[PredictionRecord], gts: &[GroundTruthRecord]) -> Result<MetricsReport, EvalError> {
    if gts.is_empty() {
        return Err(EvalError::NoVideos);
    }
    let by_key: BTreeMap<(&str, usize), &PredictionRecord> =
        preds.iter().map(|p| ((p.video_id.as_str(), p.frame), p)).collect();
    if by_key.len() != preds.len() {
        return Err(EvalError::LengthMismatch("duplicate prediction frames".into()));
    }
    let mut joined: BTreeMap<(&str, usize), (&PredictionRecord, &GroundTruthRecord)> = BTreeMap::new();
    for g in gts {
        let key = (g.video_id.as_str(), g.frame);
        let p = by_key
            .get(&key)
            .ok_or_else(|| EvalError::LengthMismatch(format!("no prediction for {} frame {}", g.video_id, g.frame)))?;
        if joined.insert(key, (p, g)).is_some() {
            return Err(EvalError::LengthMismatch(format!(
                "duplicate ground truth for {} frame {}",
                g.video_id, g.frame
            )));
        }
    }

    let videowise = if gts.iter().all(|g| g.label.is_some()) {
        let mut videos: Vec<VideoSequence> = Vec::new();
        for ((vid, _), (p, g)) in &joined {
            if videos.last().is_none_or(|v| v.video_id != *vid) {
                videos.push(VideoSequence {
                    video_id: vid.to_string(),
                    predicted: Vec::new(),
                    truth: Vec::new(),
                });
            }
            let v = videos.last_mut().expect("pushed above");
            v.predicted.push(p.predicted_class());
            v.truth.push(g.label.expect("checked above"));
        }
        Some(videowise_accuracy_f1(&videos)?)
    } else {
        None
    };

    let map = if gts.iter().all(|g| g.labels.is_some()) {
        let (scores, labels): (Vec<Vec<f64>>, Vec<Vec<bool>>) = joined
            .values()
            .map(|(p, g)| (p.scores.clone(), g.labels.clone().expect("checked above")))
            .unzip();
        Some(map_over_classes(&scores, &labels)?)
    } else {
        None
    };
    Ok(MetricsReport { videowise, map })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(v: &str, frame: usize, scores: &[f64]) -> PredictionRecord {
        PredictionRecord {
            video_id: v.into(),
            frame,
            scores: scores.to_vec(),
            predicted: None,
        }
    }

    fn gt(v: &str, frame: usize, label: usize, labels: &[bool]) -> GroundTruthRecord {
        GroundTruthRecord {
            video_id: v.into(),
            frame,
            label: Some(label),
            labels: Some(labels.to_vec()),
        }
    }

    #[test]
    fn joins_records_out_of_order() {
        let preds = vec![
            pred("a", 1, &[0.2, 0.8]),
            pred("a", 0, &[0.9, 0.1]),
            pred("b", 0, &[0.4, 0.6]),
        ];
        let gts = vec![
            gt("b", 0, 1, &[false, true]),
            gt("a", 0, 0, &[true, false]),
            gt("a", 1, 1, &[false, true]),
        ];
        let r = evaluate_records(&preds, &gts).unwrap();
        let vw = r.videowise.unwrap();
        assert_eq!((vw.mean_accuracy, vw.mean_f1), (1.0, 1.0));
        assert_eq!(r.map.unwrap().map, 1.0);
    }

    #[test]
    fn missing_prediction_is_an_error() {
        let gts = vec![gt("a", 0, 0, &[true])];
        assert!(matches!(evaluate_records(&[], &gts), Err(EvalError::LengthMismatch(_))));
    }

    #[test]
    fn record_lines_parse() {
        let p: PredictionRecord = serde_json::from_str(r#"{"video_id":"a","frame":3,"scores":[0.1,0.1]}"#).unwrap();
        assert_eq!(p.predicted_class(), 0);
        let g: GroundTruthRecord = serde_json::from_str(r#"{"video_id":"a","frame":3,"label":2}"#).unwrap();
        assert_eq!(g.labels, None);
    }
}
