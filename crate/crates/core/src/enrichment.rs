//! Contextual caption enrichment for retained pairs.

use serde::{Deserialize, Serialize};

use crate::backend::protocol::{EnrichRequest, RequestPayload, ResponseResult};
use crate::backend::BackendClient;
use crate::hierarchy::{ClipCaptionPair, GranularityLevel};

pub const DEFAULT_CONTEXT_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VideoSource {
    Public,
    Private,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub procedure_type: String,
    pub fps: f64,
    pub source: VideoSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub level: GranularityLevel,
    /// Oldest first.
    pub captions: Vec<String>,
}

/// The up-to-`n` raw captions preceding `pairs[j]` that share its video and
/// level, oldest first.
pub fn build_context(pairs: &[ClipCaptionPair], j: usize, n: usize) -> ContextWindow {
    let anchor = &pairs[j];
    let mut captions: Vec<String> = pairs[..j]
        .iter()
        .rev()
        .filter(|p| p.video_id == anchor.video_id && p.level == anchor.level)
        .take(n)
        .map(|p| p.caption.clone())
        .collect();
    captions.reverse();
    ContextWindow {
        level: anchor.level,
        captions,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Enrichment {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_enriched: Option<String>,
    #[serde(default)]
    pub failed: bool,
}

/// Calls the enrichment backend. Failures leave the raw caption as the only
/// caption and set `failed`.
pub fn enrich_caption(
    pair: &ClipCaptionPair,
    ctx: &ContextWindow,
    meta: &VideoMeta,
    client: &BackendClient,
    prompt: &str,
) -> Enrichment {
    let req = EnrichRequest {
        caption: pair.caption.clone(),
        context: ctx.captions.clone(),
        title: meta.title.clone(),
        procedure_type: meta.procedure_type.clone(),
        level: pair.level.as_str().to_string(),
        prompt: prompt.to_string(),
    };
    match client.request(RequestPayload::TextEnrich(req)) {
        Ok(ResponseResult::Enrich(r)) => Enrichment {
            caption_enriched: Some(r.caption),
            failed: false,
        },
        Ok(_) => unreachable!("validated result kind"),
        Err(e) => {
            log::warn!(
                "enrichment failed for {} {} #{}: {e}",
                pair.video_id,
                pair.level,
                pair.clip_index
            );
            Enrichment {
                caption_enriched: None,
                failed: true,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::transport::{Transport, TransportError};
    use crate::backend::{mock_client, BackendKind, Endpoint, MockBackend, RetryPolicy};
    use std::sync::Arc;
    use std::time::Duration;

    fn pair(video: &str, level: GranularityLevel, i: usize) -> ClipCaptionPair {
        ClipCaptionPair {
            video_id: video.into(),
            level,
            clip_index: i,
            t_start: i as u64 * 1000,
            t_end: i as u64 * 1000 + 500,
            caption: format!("{video}-{level}-{i}"),
            parent_step: None,
            parent_phase: None,
        }
    }

    fn run(n: usize) -> Vec<ClipCaptionPair> {
        (0..n).map(|i| pair("v", GranularityLevel::Task, i)).collect()
    }

    #[test]
    fn window_sizes() {
        let pairs = run(10);
        assert_eq!(build_context(&pairs, 2, 5).captions.len(), 2);
        let w = build_context(&pairs, 7, 5);
        let expected: Vec<String> = (2..7).map(|i| format!("v-task-{i}")).collect();
        assert_eq!(w.captions, expected);
        assert!(build_context(&pairs, 0, 5).captions.is_empty());
        assert!(build_context(&pairs, 4, 0).captions.is_empty());
    }

    #[test]
    fn window_respects_video_and_level_boundaries() {
        let mut pairs = run(3);
        pairs.push(pair("w", GranularityLevel::Task, 0));
        pairs.push(pair("v", GranularityLevel::Step, 0));
        pairs.push(pair("v", GranularityLevel::Task, 3));
        let w = build_context(&pairs, 5, 5);
        assert_eq!(w.captions, vec!["v-task-0", "v-task-1", "v-task-2"]);
        assert!(build_context(&pairs, 3, 5).captions.is_empty());
        assert!(build_context(&pairs, 4, 5).captions.is_empty());
    }

    fn meta(title: &str, procedure: &str) -> VideoMeta {
        VideoMeta {
            video_id: "v".into(),
            title: title.into(),
            procedure_type: procedure.into(),
            fps: 25.0,
            source: VideoSource::Public,
        }
    }

    #[test]
    fn mock_enrichment_is_deterministic_and_non_destructive() {
        let client = mock_client(MockBackend::default(), RetryPolicy::default());
        let pairs = run(4);
        let ctx = build_context(&pairs, 3, 5);
        let m = meta("Lap chole", "cholecystectomy");
        let a = enrich_caption(&pairs[3], &ctx, &m, &client, "");
        let b = enrich_caption(&pairs[3], &ctx, &m, &client, "");
        assert_eq!(a, b);
        assert_eq!(
            a.caption_enriched.as_deref(),
            Some("In this cholecystectomy: v-task-3 (3 prior captions)")
        );
        assert_eq!(pairs[3].caption, "v-task-3");
    }

    #[test]
    fn empty_context_and_title() {
        let client = mock_client(MockBackend::default(), RetryPolicy::default());
        let pairs = run(1);
        let e = enrich_caption(
            &pairs[0],
            &build_context(&pairs, 0, 5),
            &meta("", "hernia repair"),
            &client,
            "",
        );
        assert_eq!(
            e.caption_enriched.as_deref(),
            Some("In this hernia repair: v-task-0 (0 prior captions)")
        );
    }

    #[test]
    fn timeout_keeps_raw_caption_and_flags() {
        struct Never;
        impl Transport for Never {
            fn exchange(&self, _: &str) -> Result<String, TransportError> {
                Err(TransportError::Timeout)
            }
        }
        let policy = RetryPolicy {
            max_attempts: 2,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(1),
        };
        let client = crate::backend::BackendClient::new(policy).with_endpoint(
            BackendKind::TextEnrich,
            Arc::new(Endpoint::new("never", Box::new(Never), 1)),
        );
        let pairs = run(1);
        let e = enrich_caption(&pairs[0], &build_context(&pairs, 0, 5), &meta("", "x"), &client, "");
        assert_eq!(
            e,
            Enrichment {
                caption_enriched: None,
                failed: true
            }
        );
    }
}
