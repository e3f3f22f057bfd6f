use super::{ClassifierPort, OcrPort};
use crate::error::{Error, Result};
use crate::image::PixelBuffer;
use crate::metadata::{ClassScores, Modality, PsoAnnotation, RegionGeometry, SensitivityGroupTable, SAFE_LABEL};

pub const DEFAULT_ACCEPTANCE_THRESHOLD: f64 = 0.5;

/// Context-aware post-correction of multimodal detections.
pub struct Capc<'a> {
    pub ocr: &'a dyn OcrPort,
    pub classifier: &'a dyn ClassifierPort,
    /// Minimum classifier confidence for a rewrite.
    pub acceptance_threshold: f64,
    pub scores: &'a ClassScores,
    pub table: &'a SensitivityGroupTable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapcOutcome {
    pub annotation: PsoAnnotation,
    pub rewritten: bool,
    /// OCR text fed to the classifier, in reading order.
    pub text: String,
    pub warning: Option<String>,
}

impl Capc<'_> {
    pub fn correct(&self, detection: &PsoAnnotation, image: &PixelBuffer) -> Result<CapcOutcome> {
        if detection.modality != Modality::Multimodal {
            return Err(Error::validation(format!(
                "annotation id {}: context-aware correction needs a multimodal object, got {}",
                detection.id, detection.modality
            )));
        }
        let RegionGeometry::BBox(bbox) = detection.geometry else {
            return Err(Error::validation(format!(
                "annotation id {}: multimodal object must carry a bbox",
                detection.id
            )));
        };
        let unchanged = |text: String, warning: Option<String>| CapcOutcome {
            annotation: detection.clone(),
            rewritten: false,
            text,
            warning,
        };

        let mut lines = match self.ocr.read_region(image, bbox) {
            Ok(lines) => lines,
            Err(e) => return Ok(unchanged(String::new(), Some(format!("OCR failed: {e}")))),
        };
        let outside = lines.iter().filter(|l| !bbox.contains(&l.bbox)).count();
        lines.retain(|l| bbox.contains(&l.bbox));
        let mut warning = (outside > 0).then(|| format!("ignored {outside} OCR line(s) outside the detection box"));

        lines.sort_by_key(|l| (l.bbox.y, l.bbox.x));
        let text = lines
            .iter()
            .map(|l| l.text.trim())
            .filter(|t| !t.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        if text.is_empty() {
            return Ok(unchanged(text, warning));
        }

        let verdict = match self.classifier.classify(&text) {
            Ok(v) => v,
            Err(e) => return Ok(unchanged(text, Some(format!("classifier failed: {e}")))),
        };
        if verdict.confidence < self.acceptance_threshold
            || verdict.label == SAFE_LABEL
            || verdict.label == detection.label
        {
            return Ok(unchanged(text, warning));
        }
        let Some(score) = self.scores.get(&verdict.label) else {
            warning = Some(format!(
                "classifier label {:?} has no sensitivity score; kept {:?}",
                verdict.label, detection.label
            ));
            return Ok(unchanged(text, warning));
        };

        let mut annotation = detection.clone();
        annotation.label = verdict.label;
        annotation.sensitivity_score = score;
        annotation.group = self.table.assign_group_decimal(score)?;
        Ok(CapcOutcome {
            annotation,
            rewritten: true,
            text,
            warning,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metadata::ingest::OcrLine;
    use crate::metadata::BBox;
    use crate::postcorrect::{Classification, KeywordClassifier, RecordedOcr};

    struct FailingOcr;
    impl OcrPort for FailingOcr {
        fn read_region(&self, _: &PixelBuffer, _: BBox) -> Result<Vec<OcrLine>> {
            Err(Error::Port("engine crashed".into()))
        }
    }

    struct Silent;
    impl ClassifierPort for Silent {
        fn classify(&self, _: &str) -> Result<Classification> {
            Ok(Classification {
                label: "passport".into(),
                confidence: 0.0,
            })
        }
    }

    fn scores() -> ClassScores {
        ClassScores::new(
            [
                ("driver_license", 0.25),
                ("student_id", 0.45),
                ("receipt", 0.2),
                ("ticket", 0.3),
            ]
            .into_iter()
            .map(|(l, s)| (l.to_string(), s)),
        )
        .unwrap()
    }

    fn detection(label: &str, score: f64, table: &SensitivityGroupTable) -> PsoAnnotation {
        PsoAnnotation::new(
            0,
            label,
            Modality::Multimodal,
            RegionGeometry::BBox(BBox::new(10, 10, 100, 60)),
            0.8,
            score,
            table,
        )
        .unwrap()
    }

    fn line(text: &str, x: u32, y: u32) -> OcrLine {
        OcrLine {
            text: text.into(),
            bbox: BBox::new(x, y, 20, 8),
        }
    }

    fn run(ocr: &dyn OcrPort, classifier: &dyn ClassifierPort, det: &PsoAnnotation) -> CapcOutcome {
        let table = SensitivityGroupTable::with_thresholds(&[0.25, 0.5, 0.75, 1.0]).unwrap();
        let scores = scores();
        let capc = Capc {
            ocr,
            classifier,
            acceptance_threshold: DEFAULT_ACCEPTANCE_THRESHOLD,
            scores: &scores,
            table: &table,
        };
        let image = PixelBuffer::filled(200, 100, 3, 0).unwrap();
        capc.correct(det, &image).unwrap()
    }

    #[test]
    fn student_card_text_relabels_license() {
        let table = SensitivityGroupTable::with_thresholds(&[0.25, 0.5, 0.75, 1.0]).unwrap();
        let det = detection("driver_license", 0.25, &table);
        let ocr = RecordedOcr::new(vec![line("student", 20, 40), line("STATE UNIVERSITY", 20, 20)]);
        let out = run(&ocr, &KeywordClassifier::default(), &det);
        assert!(out.rewritten);
        assert_eq!(out.text, "STATE UNIVERSITY student");
        assert_eq!(out.annotation.label, "student_id");
        assert_eq!(out.annotation.group, 2);
        assert_eq!(out.annotation.geometry, det.geometry);
    }

    #[test]
    fn boarding_pass_text_relabels_receipt() {
        let table = SensitivityGroupTable::with_thresholds(&[0.25, 0.5, 0.75, 1.0]).unwrap();
        let det = detection("receipt", 0.2, &table);
        let ocr = RecordedOcr::new(vec![line("boarding pass gate 12", 20, 20)]);
        let out = run(&ocr, &KeywordClassifier::default(), &det);
        // ticket keywords {boarding, pass, gate, seat, flight}: 3 of 5 present
        assert_eq!(out.annotation.label, "ticket");
        assert_eq!(out.annotation.group, 2);
    }

    #[test]
    fn empty_text_leaves_label() {
        let table = SensitivityGroupTable::with_thresholds(&[0.25, 0.5, 0.75, 1.0]).unwrap();
        let det = detection("driver_license", 0.25, &table);
        let out = run(&RecordedOcr::default(), &KeywordClassifier::default(), &det);
        assert!(!out.rewritten);
        assert_eq!(out.annotation, det);
    }

    #[test]
    fn ocr_failure_keeps_label_with_warning() {
        let table = SensitivityGroupTable::with_thresholds(&[0.25, 0.5, 0.75, 1.0]).unwrap();
        let det = detection("driver_license", 0.25, &table);
        let out = run(&FailingOcr, &KeywordClassifier::default(), &det);
        assert_eq!(out.annotation, det);
        assert!(out.warning.unwrap().contains("OCR failed"));
    }

    #[test]
    fn zero_confidence_classifier_is_identity() {
        let table = SensitivityGroupTable::with_thresholds(&[0.25, 0.5, 0.75, 1.0]).unwrap();
        let det = detection("driver_license", 0.25, &table);
        let ocr = RecordedOcr::new(vec![line("passport", 20, 20)]);
        assert_eq!(run(&ocr, &Silent, &det).annotation, det);
    }

    #[test]
    fn unscored_label_is_not_applied() {
        let table = SensitivityGroupTable::with_thresholds(&[0.25, 0.5, 0.75, 1.0]).unwrap();
        let det = detection("driver_license", 0.25, &table);
        let ocr = RecordedOcr::new(vec![line("passport visa", 20, 20)]);
        let out = run(&ocr, &KeywordClassifier::default(), &det);
        assert!(!out.rewritten);
        assert!(out.warning.unwrap().contains("no sensitivity score"));
    }

    #[test]
    fn rejects_non_multimodal() {
        let table = SensitivityGroupTable::with_thresholds(&[0.25, 0.5, 0.75, 1.0]).unwrap();
        let mut det = detection("driver_license", 0.25, &table);
        det.modality = Modality::Textual;
        let scores = scores();
        let capc = Capc {
            ocr: &RecordedOcr::default(),
            classifier: &Silent,
            acceptance_threshold: 0.5,
            scores: &scores,
            table: &table,
        };
        let image = PixelBuffer::filled(200, 100, 3, 0).unwrap();
        assert!(capc.correct(&det, &image).is_err());
    }
}
