//! Adapter for detector output in a VISPR-Redactions-like JSON shape.
//!
//! ```json
//! {
//!   "image_id": "img_0001",
//!   "width": 640, "height": 480,
//!   "objects": [
//!     {"class": "face", "modality": "visual", "polygons": [[[10,10],[60,10],[60,70]]]},
//!     {"class": "date", "modality": "textual", "bbox": [100,40,80,12], "text": "12/04/1990"},
//!     {"class": "driver_license", "modality": "multimodal", "bbox": [300,200,200,120],
//!      "confidence": 0.81,
//!      "ocr": [{"text": "STATE UNIVERSITY", "bbox": [310,210,120,14]}]}
//!   ]
//! }
//! ```
//!
//! Visual objects end up as masks; a visual object given as a bbox is
//! converted to the equivalent mask. Textual and multimodal objects end up as
//! bboxes; polygons are replaced by their bounding box. Each conversion is
//! reported in [`DetectionSet::notes`].

use serde::Deserialize;

use super::{BBox, MaskRle, Modality, RegionGeometry};
use crate::error::{Error, Result};

/// Confidence assumed when the input omits one.
pub const DEFAULT_CONFIDENCE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub label: String,
    pub modality: Modality,
    pub geometry: RegionGeometry,
    pub confidence: f64,
    /// Recognized text for textual objects.
    pub text: Option<String>,
    /// Pre-recorded OCR lines inside a multimodal object.
    pub ocr: Vec<OcrLine>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct OcrLine {
    pub text: String,
    #[serde(deserialize_with = "de_bbox")]
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSet {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub detections: Vec<Detection>,
    pub notes: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    image_id: String,
    width: u32,
    height: u32,
    #[serde(default)]
    objects: Vec<RawObject>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObject {
    class: String,
    modality: String,
    #[serde(default)]
    bbox: Option<[u32; 4]>,
    #[serde(default)]
    polygons: Option<Vec<Vec<[f64; 2]>>>,
    #[serde(default)]
    confidence: Option<f64>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    ocr: Vec<OcrLine>,
}

fn de_bbox<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<BBox, D::Error> {
    let [x, y, w, h] = <[u32; 4]>::deserialize(d)?;
    Ok(BBox::new(x, y, w, h))
}

/// Parses an annotation file and normalizes every object's geometry.
pub fn read_detections(document: &[u8]) -> Result<DetectionSet> {
    let raw: RawFile =
        serde_json::from_slice(document).map_err(|e| Error::validation(format!("annotation file: {e}")))?;
    if raw.width == 0 || raw.height == 0 {
        return Err(Error::validation("annotation file: zero image dimensions"));
    }
    let (w, h) = (raw.width, raw.height);
    let mut notes = Vec::new();
    let mut detections = Vec::with_capacity(raw.objects.len());

    for (i, obj) in raw.objects.into_iter().enumerate() {
        let ctx = format!("objects[{i}] ({})", obj.class);
        let modality = Modality::parse(&obj.modality).map_err(|e| Error::validation(format!("{ctx}: {e}")))?;
        let confidence = obj.confidence.unwrap_or(DEFAULT_CONFIDENCE);
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::validation(format!(
                "{ctx}: confidence {confidence} outside [0, 1]"
            )));
        }

        let raster = match (&obj.bbox, &obj.polygons) {
            (Some(_), Some(_)) => return Err(Error::validation(format!("{ctx}: give either bbox or polygons"))),
            (None, None) => return Err(Error::validation(format!("{ctx}: missing bbox or polygons"))),
            (Some([x, y, bw, bh]), None) => {
                let b = BBox::new(*x, *y, *bw, *bh);
                b.check_within(w, h)
                    .map_err(|e| Error::validation(format!("{ctx}: {e}")))?;
                Shape::Rect(b)
            }
            (None, Some(polys)) => Shape::Mask(rasterize_polygons(polys, w, h)),
        };

        let geometry = match (modality, raster) {
            (Modality::Visual, Shape::Mask(m)) => {
                if m.set_count() == 0 {
                    notes.push(format!("{ctx}: polygon covers no pixel centre, dropped"));
                    continue;
                }
                RegionGeometry::Mask(m)
            }
            (Modality::Visual, Shape::Rect(b)) => {
                notes.push(format!("{ctx}: visual bbox converted to mask"));
                RegionGeometry::Mask(bbox_mask(b, w, h))
            }
            (_, Shape::Rect(b)) => RegionGeometry::BBox(b),
            (_, Shape::Mask(m)) => {
                let tight = RegionGeometry::Mask(m).bounding_box(w);
                match tight {
                    Some(b) => {
                        notes.push(format!("{ctx}: polygon replaced by its bounding box"));
                        RegionGeometry::BBox(b)
                    }
                    None => {
                        notes.push(format!("{ctx}: polygon covers no pixel centre, dropped"));
                        continue;
                    }
                }
            }
        };

        detections.push(Detection {
            label: obj.class,
            modality,
            geometry,
            confidence,
            text: obj.text,
            ocr: obj.ocr,
        });
    }

    Ok(DetectionSet {
        image_id: raw.image_id,
        width: w,
        height: h,
        detections,
        notes,
    })
}

enum Shape {
    Rect(BBox),
    Mask(MaskRle),
}

fn bbox_mask(b: BBox, width: u32, height: u32) -> MaskRle {
    let len = width * height;
    let idx = (b.y..b.y + b.height).flat_map(move |y| (b.x..b.x + b.width).map(move |x| y * width + x));
    MaskRle::from_indices(len, idx)
}

/// Even-odd fill of the union of `polygons`, sampled at pixel centres.
pub fn rasterize_polygons(polygons: &[Vec<[f64; 2]>], width: u32, height: u32) -> MaskRle {
    let mut raster = vec![false; width as usize * height as usize];
    for poly in polygons.iter().filter(|p| p.len() >= 3) {
        for y in 0..height {
            let cy = y as f64 + 0.5;
            let mut crossings: Vec<f64> = Vec::new();
            for k in 0..poly.len() {
                let [x0, y0] = poly[k];
                let [x1, y1] = poly[(k + 1) % poly.len()];
                if (y0 <= cy) != (y1 <= cy) {
                    crossings.push(x0 + (cy - y0) / (y1 - y0) * (x1 - x0));
                }
            }
            crossings.sort_by(f64::total_cmp);
            for pair in crossings.chunks_exact(2) {
                for x in 0..width {
                    let cx = x as f64 + 0.5;
                    if cx >= pair[0] && cx < pair[1] {
                        raster[(y * width + x) as usize] = true;
                    }
                }
            }
        }
    }
    MaskRle::encode(&raster)
}
