//! Specialty / subject / procedure taxonomy and weakly supervised
//! classification of videos into it.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::backend::protocol::{RequestPayload, ResponseResult, TaxonomyRequest};
use crate::backend::{BackendClient, BackendError};

pub const UNKNOWN: &str = "unknown";

/// The tree bundled with the crate; replace it with a file via
/// [`TaxonomyTree::load`].
pub const DEFAULT_TREE_JSON: &str = include_str!("../../data/taxonomy_tree.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectNode {
    pub name: String,
    pub procedures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecialtyNode {
    pub name: String,
    pub subjects: Vec<SubjectNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxonomyTree {
    pub specialties: Vec<SpecialtyNode>,
}

impl TaxonomyTree {
    pub fn from_json(text: &str) -> Result<Self, DatasetError> {
        let tree: TaxonomyTree =
            serde_json::from_str(text).map_err(|e| DatasetError::InvalidTaxonomy(e.to_string()))?;
        tree.validate()?;
        Ok(tree)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|e| DatasetError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn default_tree() -> Self {
        Self::from_json(DEFAULT_TREE_JSON).expect("bundled taxonomy is valid")
    }

    /// Every procedure must be non-empty and appear exactly once, so that it
    /// has a unique root path.
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.specialties.is_empty() {
            return Err(DatasetError::InvalidTaxonomy("tree is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for sp in &self.specialties {
            for sj in &sp.subjects {
                for p in &sj.procedures {
                    if p.trim().is_empty() || p == UNKNOWN {
                        return Err(DatasetError::InvalidTaxonomy(format!("invalid procedure name {p:?}")));
                    }
                    if !seen.insert(p.as_str()) {
                        return Err(DatasetError::InvalidTaxonomy(format!(
                            "procedure {p:?} appears more than once"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn path_of(&self, procedure: &str) -> Option<(&str, &str)> {
        self.specialties.iter().find_map(|sp| {
            sp.subjects.iter().find_map(|sj| {
                sj.procedures
                    .iter()
                    .any(|p| p == procedure)
                    .then_some((sp.name.as_str(), sj.name.as_str()))
            })
        })
    }

    pub fn is_path(&self, specialty: &str, subject: &str, procedure: &str) -> bool {
        self.path_of(procedure) == Some((specialty, subject))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxonomyLabel {
    pub specialty: String,
    pub subject: String,
    pub procedure: String,
    /// The classifier's answer was not a path in the tree.
    pub unresolved: bool,
}

impl TaxonomyLabel {
    pub fn unknown() -> Self {
        TaxonomyLabel {
            specialty: UNKNOWN.into(),
            subject: UNKNOWN.into(),
            procedure: UNKNOWN.into(),
            unresolved: true,
        }
    }
}

/// Space-joined phase captions, cut at a character boundary to at most
/// `budget_chars` characters.
pub fn transcript_summary<'a>(phase_captions: impl IntoIterator<Item = &'a str>, budget_chars: usize) -> String {
    let joined = phase_captions.into_iter().collect::<Vec<_>>().join(" ");
    joined.chars().take(budget_chars).collect()
}

/// Classifies a video summary. Answers that are not a root-to-leaf path of
/// `tree` (and empty summaries) become the flagged unknown triple.
pub fn classify_taxonomy(
    summary: &str,
    tree: &TaxonomyTree,
    client: &BackendClient,
    prompt: &str,
) -> Result<TaxonomyLabel, DatasetError> {
    if summary.trim().is_empty() {
        return Ok(TaxonomyLabel::unknown());
    }
    let req = TaxonomyRequest {
        summary: summary.to_string(),
        tree: serde_json::to_value(tree).expect("tree serializes"),
        prompt: prompt.to_string(),
    };
    let answer = match client.request(RequestPayload::TextTaxonomy(req)) {
        Ok(ResponseResult::Taxonomy(t)) => t,
        Ok(_) => unreachable!("validated result kind"),
        Err(BackendError::SchemaViolation(msg)) => {
            log::warn!("taxonomy answer rejected: {msg}");
            return Ok(TaxonomyLabel::unknown());
        }
        Err(e) => return Err(DatasetError::BackendFailure(e)),
    };
    if tree.is_path(&answer.specialty, &answer.subject, &answer.procedure) {
        Ok(TaxonomyLabel {
            specialty: answer.specialty,
            subject: answer.subject,
            procedure: answer.procedure,
            unresolved: false,
        })
    } else {
        Ok(TaxonomyLabel::unknown())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::protocol::BackendRequest;
    use crate::backend::transport::{Transport, TransportError};
    use crate::backend::{mock_client, BackendKind, Endpoint, MockBackend, RetryPolicy};
    use std::sync::Arc;

    #[test]
    fn bundled_tree_is_valid() {
        let t = TaxonomyTree::default_tree();
        assert_eq!(
            t.path_of("Laparoscopic cholecystectomy"),
            Some(("General Surgery", "Hepatobiliary"))
        );
        assert!(t.is_path("Urology", "Prostate", "Robotic radical prostatectomy"));
        assert!(!t.is_path("Urology", "Kidney", "Robotic radical prostatectomy"));
    }

    #[test]
    fn duplicate_procedures_are_rejected() {
        let json = r#"{"specialties":[{"name":"A","subjects":[{"name":"x","procedures":["p"]},{"name":"y","procedures":["p"]}]}]}"#;
        assert!(matches!(
            TaxonomyTree::from_json(json),
            Err(DatasetError::InvalidTaxonomy(_))
        ));
        assert!(TaxonomyTree::from_json(r#"{"specialties":[]}"#).is_err());
    }

    #[test]
    fn mock_classifies_gallbladder_summary() {
        let client = mock_client(MockBackend::default(), RetryPolicy::default());
        let tree = TaxonomyTree::default_tree();
        let label = classify_taxonomy(
            "we retract the gallbladder and expose the cystic duct",
            &tree,
            &client,
            "",
        )
        .unwrap();
        assert_eq!(
            label,
            TaxonomyLabel {
                specialty: "General Surgery".into(),
                subject: "Hepatobiliary".into(),
                procedure: "Laparoscopic cholecystectomy".into(),
                unresolved: false,
            }
        );
    }

    #[test]
    fn empty_summary_is_unknown() {
        let client = mock_client(MockBackend::default(), RetryPolicy::default());
        let label = classify_taxonomy("  ", &TaxonomyTree::default_tree(), &client, "").unwrap();
        assert_eq!(label, TaxonomyLabel::unknown());
    }

    #[test]
    fn procedure_outside_tree_is_unknown() {
        struct Liar;
        impl Transport for Liar {
            fn exchange(&self, line: &str) -> Result<String, TransportError> {
                let req = BackendRequest::from_line(line).unwrap();
                Ok(format!(
                    r#"{{"version":"1","request_id":"{}","status":"ok","result":{{"specialty":"General Surgery","subject":"Hepatobiliary","procedure":"Liver transplant"}}}}"#,
                    req.request_id
                ))
            }
        }
        let client = BackendClient::new(RetryPolicy::default()).with_endpoint(
            BackendKind::TextTaxonomy,
            Arc::new(Endpoint::new("liar", Box::new(Liar), 1)),
        );
        let label = classify_taxonomy("liver", &TaxonomyTree::default_tree(), &client, "").unwrap();
        assert_eq!(label, TaxonomyLabel::unknown());
    }

    #[test]
    fn summary_respects_budget_on_char_boundaries() {
        assert_eq!(transcript_summary(["abc", "déf"], 6), "abc dé");
        assert_eq!(transcript_summary(["abc"], 100), "abc");
        assert_eq!(transcript_summary(Vec::<&str>::new(), 10), "");
    }
}
