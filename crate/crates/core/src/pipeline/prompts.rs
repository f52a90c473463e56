//! Prompt texts sent to the backends. Defaults are bundled; any of them can
//! be replaced by a file named in the configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;

const SEGMENTATION: &str = include_str!("../../prompts/segmentation.txt");
const JUDGE: &str = include_str!("../../prompts/judge.txt");
const ENRICH: &str = include_str!("../../prompts/enrich.txt");
const TAXONOMY: &str = include_str!("../../prompts/taxonomy.txt");
const SURGICAL_CLASSES: &str = include_str!("../../prompts/surgical_classes.txt");
const NON_SURGICAL_CLASSES: &str = include_str!("../../prompts/non_surgical_classes.txt");

/// Optional replacement files, one per prompt.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptPaths {
    pub segmentation: Option<String>,
    pub judge: Option<String>,
    pub enrich: Option<String>,
    pub taxonomy: Option<String>,
    pub surgical_classes: Option<String>,
    pub non_surgical_classes: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub segmentation: String,
    pub judge: String,
    pub enrich: String,
    pub taxonomy: String,
    /// Prompt ensemble for the surgical class, one prompt per line.
    pub surgical: Vec<String>,
    pub non_surgical: Vec<String>,
}

fn lines(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect()
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            segmentation: SEGMENTATION.trim().to_string(),
            judge: JUDGE.trim().to_string(),
            enrich: ENRICH.trim().to_string(),
            taxonomy: TAXONOMY.trim().to_string(),
            surgical: lines(SURGICAL_CLASSES),
            non_surgical: lines(NON_SURGICAL_CLASSES),
        }
    }
}

impl PromptSet {
    /// Bundled prompts with overrides read relative to `base`.
    pub fn load(paths: &PromptPaths, base: &Path) -> Result<Self, PipelineError> {
        let read = |p: &Option<String>| -> Result<Option<String>, PipelineError> {
            let Some(p) = p else { return Ok(None) };
            let path = base.join(p);
            std::fs::read_to_string(&path)
                .map(Some)
                .map_err(|e| PipelineError::Config(format!("prompt file {}: {e}", path.display())))
        };
        let mut set = PromptSet::default();
        if let Some(t) = read(&paths.segmentation)? {
            set.segmentation = t.trim().to_string();
        }
        if let Some(t) = read(&paths.judge)? {
            set.judge = t.trim().to_string();
        }
        if let Some(t) = read(&paths.enrich)? {
            set.enrich = t.trim().to_string();
        }
        if let Some(t) = read(&paths.taxonomy)? {
            set.taxonomy = t.trim().to_string();
        }
        if let Some(t) = read(&paths.surgical_classes)? {
            set.surgical = lines(&t);
        }
        if let Some(t) = read(&paths.non_surgical_classes)? {
            set.non_surgical = lines(&t);
        }
        if set.surgical.is_empty() || set.non_surgical.is_empty() {
            return Err(PipelineError::Config("class prompt lists must not be empty".into()));
        }
        Ok(set)
    }
}
