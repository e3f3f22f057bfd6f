//! Context-driven relabeling of textual and multimodal detections.
//!
//! Textual objects are corrected by cue rules that look at the spatially
//! closest neighbour of a cue-bearing object. Multimodal objects are corrected
//! by reading their text through an [`OcrPort`] and classifying it through a
//! [`ClassifierPort`]. Both ports are traits so trained models can be plugged
//! in; [`KeywordClassifier`] and [`RecordedOcr`] are deterministic stand-ins.

mod capc;
mod classifier;
mod rules;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use capc::{Capc, CapcOutcome, DEFAULT_ACCEPTANCE_THRESHOLD};
pub use classifier::KeywordClassifier;
pub use rules::{apply_textual_rules, plan_textual_rules, Relabel, Rule};

use crate::error::{Error, Result};
use crate::image::PixelBuffer;
use crate::metadata::ingest::OcrLine;
use crate::metadata::BBox;

/// A recognized piece of text with its current predicted label.
#[derive(Debug, Clone, PartialEq)]
pub struct TextObject {
    pub text: String,
    pub bbox: BBox,
    pub predicted_label: String,
    pub confidence: f64,
}

impl TextObject {
    pub fn new(text: impl Into<String>, bbox: BBox, label: impl Into<String>, confidence: f64) -> Self {
        Self {
            text: text.into(),
            bbox,
            predicted_label: label.into(),
            confidence,
        }
    }
}

/// Lowercases, splits on whitespace and trims punctuation from token ends.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
}

/// Cue vocabularies that trigger the textual rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CueTable {
    pub temporal: BTreeSet<String>,
    pub identity: BTreeSet<String>,
    pub location: BTreeSet<String>,
}

impl CueTable {
    pub fn validate(&self) -> Result<()> {
        for (name, set) in [
            ("temporal", &self.temporal),
            ("identity", &self.identity),
            ("location", &self.location),
        ] {
            if set.is_empty() {
                return Err(Error::Config(format!("{name} cue list is empty")));
            }
            if let Some(bad) = set.iter().find(|c| c.to_lowercase() != **c || c.is_empty()) {
                return Err(Error::Config(format!("{name} cue {bad:?} must be non-empty lowercase")));
            }
        }
        Ok(())
    }

    pub fn cues(&self, rule: Rule) -> &BTreeSet<String> {
        match rule {
            Rule::TemporalIdentity => &self.temporal,
            Rule::PersonalIdentity => &self.identity,
            Rule::Location => &self.location,
        }
    }
}

impl Default for CueTable {
    fn default() -> Self {
        let set = |items: &[&str]| items.iter().map(|s| s.to_string()).collect();
        Self {
            temporal: set(&["dob", "born", "birthday"]),
            identity: set(&["name", "surname", "alias"]),
            location: set(&["office", "city"]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub label: String,
    pub confidence: f64,
}

pub trait ClassifierPort {
    fn classify(&self, text: &str) -> Result<Classification>;
}

pub trait OcrPort {
    /// Text lines found inside `bbox`.
    fn read_region(&self, image: &PixelBuffer, bbox: BBox) -> Result<Vec<OcrLine>>;
}

/// OCR backed by lines recorded ahead of time (e.g. shipped with the annotations).
#[derive(Debug, Clone, Default)]
pub struct RecordedOcr {
    lines: Vec<OcrLine>,
}

impl RecordedOcr {
    pub fn new(lines: Vec<OcrLine>) -> Self {
        Self { lines }
    }
}

impl OcrPort for RecordedOcr {
    fn read_region(&self, _image: &PixelBuffer, bbox: BBox) -> Result<Vec<OcrLine>> {
        Ok(self.lines.iter().filter(|l| bbox.contains(&l.bbox)).cloned().collect())
    }
}

/// Post-correction settings as stored in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostCorrectionConfig {
    pub cues: CueTable,
    /// Keyword table of the reference classifier: label -> keywords.
    pub keywords: BTreeMap<String, BTreeSet<String>>,
    pub capc_threshold: f64,
}

impl Default for PostCorrectionConfig {
    fn default() -> Self {
        Self {
            cues: CueTable::default(),
            keywords: KeywordClassifier::default().table().clone(),
            capc_threshold: DEFAULT_ACCEPTANCE_THRESHOLD,
        }
    }
}

impl PostCorrectionConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: Self =
            serde_json::from_slice(bytes).map_err(|e| Error::Config(format!("post-correction config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.cues.validate()?;
        KeywordClassifier::new(self.keywords.clone())?;
        if !(0.0..=1.0).contains(&self.capc_threshold) {
            return Err(Error::Config(format!(
                "capc_threshold {} outside [0, 1]",
                self.capc_threshold
            )));
        }
        Ok(())
    }

    pub fn classifier(&self) -> Result<KeywordClassifier> {
        KeywordClassifier::new(self.keywords.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_strip_punctuation_and_case() {
        let t: Vec<String> = tokens("  DOB: 12/04/1990, (Born)").collect();
        assert_eq!(t, vec!["dob", "12/04/1990", "born"]);
    }

    #[test]
    fn default_cues_are_valid() {
        CueTable::default().validate().unwrap();
        PostCorrectionConfig::default().validate().unwrap();
    }

    #[test]
    fn config_json_round_trip_and_validation() {
        let cfg = PostCorrectionConfig::default();
        let json = serde_json::to_vec(&cfg).unwrap();
        assert_eq!(PostCorrectionConfig::from_json(&json).unwrap(), cfg);

        let bad = br#"{"cues":{"temporal":["DOB"],"identity":["name"],"location":["city"]}}"#;
        assert!(PostCorrectionConfig::from_json(bad).is_err());
        let partial = br#"{"capc_threshold":0.7}"#;
        assert_eq!(PostCorrectionConfig::from_json(partial).unwrap().capc_threshold, 0.7);
    }

    #[test]
    fn recorded_ocr_only_returns_contained_lines() {
        let img = PixelBuffer::filled(20, 20, 1, 0).unwrap();
        let ocr = RecordedOcr::new(vec![
            OcrLine {
                text: "in".into(),
                bbox: BBox::new(2, 2, 3, 3),
            },
            OcrLine {
                text: "out".into(),
                bbox: BBox::new(9, 9, 3, 3),
            },
        ]);
        let lines = ocr.read_region(&img, BBox::new(0, 0, 10, 10)).unwrap();
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0].text, "in");
    }
}
