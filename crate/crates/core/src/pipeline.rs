//! Detections to metadata: cue rules, scoring, multimodal correction, ids.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::image::PixelBuffer;
use crate::metadata::ingest::{Detection, DetectionSet};
use crate::metadata::{
    ClassScores, Decimal4, ImageMetadata, Modality, PsoAnnotation, RegionGeometry, SensitivityGroupTable, SAFE_LABEL,
};
use crate::postcorrect::{
    apply_textual_rules, plan_textual_rules, Capc, ClassifierPort, OcrPort, PostCorrectionConfig, RecordedOcr,
    TextObject,
};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSettings {
    pub table: SensitivityGroupTable,
    pub scores: ClassScores,
    /// Labels scored as another class, e.g. `place` as `location`.
    pub score_aliases: BTreeMap<String, String>,
    pub postcorrect: PostCorrectionConfig,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            table: SensitivityGroupTable::default(),
            scores: ClassScores::default(),
            score_aliases: BTreeMap::from([("place".to_string(), "location".to_string())]),
            postcorrect: PostCorrectionConfig::default(),
        }
    }
}

impl PipelineSettings {
    pub fn validate(&self) -> Result<()> {
        self.scores.check_against(&self.table)?;
        self.postcorrect.validate()?;
        for (alias, target) in &self.score_aliases {
            if self.scores.get(target).is_none() {
                return Err(Error::Config(format!(
                    "score alias {alias:?} points at unscored class {target:?}"
                )));
            }
        }
        Ok(())
    }

    /// Scores with every alias resolved to its target's score.
    pub fn effective_scores(&self) -> Result<ClassScores> {
        let mut all: Vec<(String, f64)> = self.scores.iter().map(|(l, s)| (l.to_string(), s.to_f64())).collect();
        for (alias, target) in &self.score_aliases {
            if self.scores.get(alias).is_none() {
                let s = self.scores.get(target).ok_or_else(|| {
                    Error::Config(format!("score alias {alias:?} points at unscored class {target:?}"))
                })?;
                all.push((alias.clone(), s.to_f64()));
            }
        }
        ClassScores::new(all)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub metadata: ImageMetadata,
    /// One line per decision: relabels, drops, warnings.
    pub log: Vec<String>,
}

fn text_object(d: &Detection) -> Option<TextObject> {
    match (&d.modality, &d.geometry) {
        (Modality::Textual, RegionGeometry::BBox(b)) => Some(TextObject::new(
            d.text.clone().unwrap_or_default(),
            *b,
            d.label.clone(),
            d.confidence,
        )),
        _ => None,
    }
}

/// Runs the post-correction stages and scores every remaining detection.
///
/// Multimodal objects read their text from the OCR lines recorded with the
/// detection when present, otherwise from `ocr`. Objects whose final label
/// is `safe` are dropped. A label without a score is an error.
pub fn build_metadata(
    set: &DetectionSet,
    image: &PixelBuffer,
    settings: &PipelineSettings,
    ocr: Option<&dyn OcrPort>,
    classifier: &dyn ClassifierPort,
) -> Result<PipelineOutcome> {
    if (set.width, set.height) != (image.width(), image.height()) {
        return Err(Error::validation(format!(
            "annotations describe a {}x{} image but the image is {}x{}",
            set.width,
            set.height,
            image.width(),
            image.height()
        )));
    }
    let scores = settings.effective_scores()?;
    let mut log = set.notes.clone();

    // textual cue rules over the textual objects, in input order
    let textual: Vec<usize> = (0..set.detections.len())
        .filter(|&i| text_object(&set.detections[i]).is_some())
        .collect();
    let objects: Vec<TextObject> = textual
        .iter()
        .filter_map(|&i| text_object(&set.detections[i]))
        .collect();
    let mut labels: Vec<String> = set.detections.iter().map(|d| d.label.clone()).collect();
    let corrected = apply_textual_rules(&objects, &settings.postcorrect.cues);
    for r in plan_textual_rules(&objects, &settings.postcorrect.cues) {
        log.push(format!(
            "objects[{}]: {:?} -> {:?} ({:?} cue in objects[{}])",
            textual[r.target_index],
            objects[r.target_index].predicted_label,
            r.rule.new_label(),
            r.rule,
            textual[r.cue_index]
        ));
    }
    for (k, &i) in textual.iter().enumerate() {
        labels[i] = corrected[k].predicted_label.clone();
    }

    let capc = Capc {
        ocr: &RecordedOcr::default(),
        classifier,
        acceptance_threshold: settings.postcorrect.capc_threshold,
        scores: &scores,
        table: &settings.table,
    };
    let mut annotations = Vec::new();
    for (i, (d, label)) in set.detections.iter().zip(&labels).enumerate() {
        if label == SAFE_LABEL {
            log.push(format!("objects[{i}]: dropped ({SAFE_LABEL})"));
            continue;
        }
        let score = scores
            .get(label)
            .ok_or_else(|| Error::validation(format!("objects[{i}]: label {label:?} has no sensitivity score")))?;
        let id = annotations.len() as u32;
        let annotation = PsoAnnotation {
            id,
            label: label.clone(),
            modality: d.modality,
            geometry: d.geometry.clone(),
            confidence: Decimal4::from_f64(d.confidence)?,
            sensitivity_score: score,
            group: settings.table.assign_group_decimal(score)?,
        };
        if d.modality != Modality::Multimodal {
            annotations.push(annotation);
            continue;
        }
        let recorded = RecordedOcr::new(d.ocr.clone());
        let port: &dyn OcrPort = match ocr {
            Some(external) if d.ocr.is_empty() => external,
            _ => &recorded,
        };
        let outcome = Capc { ocr: port, ..capc }.correct(&annotation, image)?;
        if let Some(w) = &outcome.warning {
            log.push(format!("objects[{i}]: {w}"));
        }
        if outcome.rewritten {
            log.push(format!(
                "objects[{i}]: {:?} -> {:?} (text {:?})",
                annotation.label, outcome.annotation.label, outcome.text
            ));
        }
        annotations.push(outcome.annotation);
    }

    let metadata = ImageMetadata::new(
        set.image_id.clone(),
        image.width(),
        image.height(),
        image.channels(),
        settings.table.clone(),
        annotations,
    )?;
    Ok(PipelineOutcome { metadata, log })
}
