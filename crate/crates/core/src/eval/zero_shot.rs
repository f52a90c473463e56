//! Window pooling of frame features and nearest-class prediction.

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::filtering::{cosine, ClassEmbedding};
use crate::transcript::Millis;

pub const DEFAULT_WINDOW: usize = 16;

/// Per-frame embeddings of one video, in frame order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFeatureTrack {
    pub video_id: String,
    pub frames: Vec<Vec<f64>>,
    pub times: Vec<Millis>,
}

impl FrameFeatureTrack {
    pub fn new(video_id: &str, frames: Vec<Vec<f64>>, times: Vec<Millis>) -> Result<Self, EvalError> {
        let Some(first) = frames.first() else {
            return Err(EvalError::EmptyTrack);
        };
        let dim = first.len();
        if let Some((frame, f)) = frames.iter().enumerate().find(|(_, f)| f.len() != dim) {
            return Err(EvalError::RaggedTrack {
                frame,
                expected: dim,
                got: f.len(),
            });
        }
        if times.len() != frames.len() {
            return Err(EvalError::LengthMismatch(format!(
                "{} frame times for {} frames",
                times.len(),
                frames.len()
            )));
        }
        Ok(FrameFeatureTrack {
            video_id: video_id.to_string(),
            frames,
            times,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }
}

/// Mean of the frames at `center - window/2 .. center + ceil(window/2) - 1`,
/// indices clamped to the track so edge frames are replicated, then
/// normalized to unit length.
pub fn window_embedding(track: &FrameFeatureTrack, center: usize, window: usize) -> Result<Vec<f64>, EvalError> {
    if track.is_empty() {
        return Err(EvalError::EmptyTrack);
    }
    if window == 0 {
        return Err(EvalError::ZeroWindow);
    }
    let t = track.len();
    if center >= t {
        return Err(EvalError::CenterOutOfRange { center, len: t });
    }
    let lo = center as i64 - (window / 2) as i64;
    let mut acc = vec![0.0; track.dim()];
    for k in 0..window as i64 {
        let idx = (lo + k).clamp(0, t as i64 - 1) as usize;
        acc.iter_mut().zip(&track.frames[idx]).for_each(|(a, x)| *a += x);
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(EvalError::NonFinite("frame features"));
    }
    if norm < 1e-12 {
        return Err(EvalError::ZeroVector);
    }
    acc.iter_mut().for_each(|a| *a /= norm);
    Ok(acc)
}

/// Index of the largest score; the earliest index wins ties.
pub fn argmax_first(scores: &[f64]) -> usize {
    (0..scores.len()).fold(0, |b, j| if scores[j] > scores[b] { j } else { b })
}

/// Cosine score per class and the predicted class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShot {
    pub scores: Vec<f64>,
    pub predicted: usize,
}

pub fn zero_shot_classify(v: &[f64], classes: &[ClassEmbedding]) -> Result<ZeroShot, EvalError> {
    if classes.len() < 2 {
        return Err(EvalError::TooFewClasses(classes.len()));
    }
    if let Some(c) = classes.iter().find(|c| c.vector.len() != v.len()) {
        return Err(EvalError::DimensionMismatch(format!(
            "class {:?} has dimension {}, input has {}",
            c.name,
            c.vector.len(),
            v.len()
        )));
    }
    let scores: Vec<f64> = classes.iter().map(|c| cosine(v, &c.vector)).collect();
    Ok(ZeroShot {
        predicted: argmax_first(&scores),
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn track(frames: Vec<Vec<f64>>) -> FrameFeatureTrack {
        let times = (0..frames.len() as u64).map(|i| i * 40).collect();
        FrameFeatureTrack::new("v", frames, times).unwrap()
    }

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    #[test]
    fn constant_track_and_unit_window() {
        let t = track(vec![vec![0.6, 0.8]; 5]);
        let w = window_embedding(&t, 2, 16).unwrap();
        assert!((w[0] - 0.6).abs() < 1e-12 && (w[1] - 0.8).abs() < 1e-12);
        let t = track(vec![vec![1.0, 0.0], vec![0.0, 3.0], vec![1.0, 1.0]]);
        assert_eq!(window_embedding(&t, 1, 1).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn clamped_window_at_track_start() {
        // center 0, window 16 covers -8..=7: index 0 nine times, then 1, 2
        // and 3 (clamped) with 1, 1 and 5 copies
        let frames = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 1.0, 1.0],
        ];
        let t = track(frames);
        let got = window_embedding(&t, 0, 16).unwrap();
        let oracle = unit(&[9.0 + 5.0, 1.0 + 5.0, 1.0 + 5.0]);
        for (g, o) in got.iter().zip(&oracle) {
            assert!((g - o).abs() < 1e-12);
        }
    }

    #[test]
    fn track_errors() {
        assert_eq!(FrameFeatureTrack::new("v", vec![], vec![]), Err(EvalError::EmptyTrack));
        assert!(matches!(
            FrameFeatureTrack::new("v", vec![vec![1.0], vec![1.0, 2.0]], vec![0, 1]),
            Err(EvalError::RaggedTrack { frame: 1, .. })
        ));
        let t = track(vec![vec![1.0]]);
        assert_eq!(window_embedding(&t, 0, 0), Err(EvalError::ZeroWindow));
        assert!(window_embedding(&t, 1, 4).is_err());
    }

    fn classes(vectors: Vec<Vec<f64>>) -> Vec<ClassEmbedding> {
        vectors
            .into_iter()
            .enumerate()
            .map(|(i, vector)| ClassEmbedding {
                name: format!("c{i}"),
                vector,
            })
            .collect()
    }

    #[test]
    fn exact_match_and_tie_break() {
        let cs = classes(
            (0..5)
                .map(|i| (0..5).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        );
        assert_eq!(zero_shot_classify(&cs[3].vector, &cs).unwrap().predicted, 3);
        assert_eq!(argmax_first(&[0.1, 0.1]), 0);
        let tied = classes(vec![vec![1.0, 0.0], vec![1.0, 0.0]]);
        assert_eq!(zero_shot_classify(&[1.0, 0.0], &tied).unwrap().predicted, 0);
        assert_eq!(
            zero_shot_classify(&[1.0], &classes(vec![vec![1.0]])),
            Err(EvalError::TooFewClasses(1))
        );
        assert!(zero_shot_classify(&[1.0], &tied).is_err());
    }

    #[test]
    fn random_six_classes_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let cs = classes(
                (0..6)
                    .map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect(),
            );
            let v: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let z = zero_shot_classify(&v, &cs).unwrap();
            let mut best = 0;
            for i in 1..6 {
                if cosine(&v, &cs[i].vector) > cosine(&v, &cs[best].vector) {
                    best = i;
                }
            }
            assert_eq!(z.predicted, best);
        }
    }

    proptest! {
        #[test]
        fn full_window_is_global_mean(
            frames in prop::collection::vec(prop::collection::vec(0.1f64..1.0, 3), 1..12),
        ) {
            let n = frames.len();
            let t = track(frames.clone());
            let w = window_embedding(&t, n / 2, n).unwrap();
            let sum: Vec<f64> = (0..3).map(|k| frames.iter().map(|f| f[k]).sum()).collect();
            let oracle = unit(&sum);
            for (g, o) in w.iter().zip(&oracle) {
                prop_assert!((g - o).abs() < 1e-12);
            }
        }

        #[test]
        fn argmax_survives_monotone_transforms(
            ticks in prop::collection::vec(-64i32..=64, 2..10),
            a in prop::sample::select(vec![0.5f64, 2.0, 4.0]),
            b in -64i32..=64,
        ) {
            // multiples of 1/64 keep every transform below exact
            let scores: Vec<f64> = ticks.iter().map(|&k| k as f64 / 64.0).collect();
            let affine: Vec<f64> = scores.iter().map(|s| a * s + b as f64 / 64.0).collect();
            let cubed: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
            prop_assert_eq!(argmax_first(&scores), argmax_first(&affine));
            prop_assert_eq!(argmax_first(&scores), argmax_first(&cubed));
        }
    }
}
