use std::collections::{BTreeMap, BTreeSet};

use super::{tokens, Classification, ClassifierPort};
use crate::error::{Error, Result};
use crate::metadata::SAFE_LABEL;

/// Keyword-table text classifier.
///
/// A label scores the fraction of its keywords present among the text's
/// tokens. The best label wins, ties going to the lexicographically smallest;
/// text matching no keyword is `safe` with confidence 0.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordClassifier {
    table: BTreeMap<String, BTreeSet<String>>,
}

impl KeywordClassifier {
    pub fn new(table: BTreeMap<String, BTreeSet<String>>) -> Result<Self> {
        for (label, words) in &table {
            if words.is_empty() {
                return Err(Error::Config(format!("classifier label {label:?} has no keywords")));
            }
            if let Some(w) = words.iter().find(|w| w.is_empty() || w.to_lowercase() != **w) {
                return Err(Error::Config(format!(
                    "classifier keyword {w:?} for {label:?} must be non-empty lowercase"
                )));
            }
        }
        Ok(Self { table })
    }

    pub fn table(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.table
    }

    pub fn classify_text(&self, text: &str) -> Classification {
        let present: BTreeSet<String> = tokens(text).collect();
        let mut best: Option<(&str, f64)> = None;
        for (label, words) in &self.table {
            let hits = words.iter().filter(|w| present.contains(*w)).count();
            let score = hits as f64 / words.len() as f64;
            if score > 0.0 && best.is_none_or(|(_, s)| score > s) {
                best = Some((label, score));
            }
        }
        match best {
            Some((label, confidence)) => Classification {
                label: label.to_string(),
                confidence,
            },
            None => Classification {
                label: SAFE_LABEL.to_string(),
                confidence: 0.0,
            },
        }
    }
}

impl ClassifierPort for KeywordClassifier {
    fn classify(&self, text: &str) -> Result<Classification> {
        Ok(self.classify_text(text))
    }
}

impl Default for KeywordClassifier {
    fn default() -> Self {
        let entries: [(&str, &[&str]); 6] = [
            ("credit_card", &["credit", "debit", "card", "valid", "thru"]),
            ("driver_license", &["driver", "license", "licence", "class", "dl"]),
            ("passport", &["passport", "visa", "expiry", "nationality"]),
            ("receipt", &["receipt", "total", "subtotal", "tax", "cash"]),
            ("student_id", &["student", "university", "college", "school"]),
            ("ticket", &["boarding", "pass", "gate", "seat", "flight"]),
        ];
        let table = entries
            .iter()
            .map(|(l, ws)| (l.to_string(), ws.iter().map(|w| w.to_string()).collect()))
            .collect();
        Self::new(table).expect("static table is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_keyword_hit() {
        let c = KeywordClassifier::default().classify_text("passport republic of");
        assert_eq!(c.label, "passport");
        assert!(c.confidence > 0.0);
    }

    #[test]
    fn empty_text_is_safe() {
        let c = KeywordClassifier::default().classify_text("");
        assert_eq!(
            c,
            Classification {
                label: "safe".into(),
                confidence: 0.0
            }
        );
    }

    #[test]
    fn fraction_of_keywords() {
        let table = BTreeMap::from([(
            "passport".to_string(),
            ["passport", "visa", "expiry", "nationality"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        )]);
        let c = KeywordClassifier::new(table)
            .unwrap()
            .classify_text("visa expiry passport no");
        assert_eq!(c.label, "passport");
        assert_eq!(c.confidence, 0.75);
    }

    #[test]
    fn ties_go_to_smallest_label() {
        let table = BTreeMap::from([
            ("zeta".to_string(), BTreeSet::from(["shared".to_string()])),
            ("alpha".to_string(), BTreeSet::from(["shared".to_string()])),
        ]);
        let c = KeywordClassifier::new(table).unwrap().classify_text("shared");
        assert_eq!(c.label, "alpha");
    }

    #[test]
    fn rejects_bad_tables() {
        let empty = BTreeMap::from([("x".to_string(), BTreeSet::new())]);
        assert!(KeywordClassifier::new(empty).is_err());
        let upper = BTreeMap::from([("x".to_string(), BTreeSet::from(["Card".to_string()]))]);
        assert!(KeywordClassifier::new(upper).is_err());
    }
}
