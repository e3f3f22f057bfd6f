//! A fixed eight-object layout used by tests, golden files and demos.
//!
//! A driver's license card holds a face, a name, a birth date and a
//! signature; a person, a location line and a date line sit around it.

use crate::image::PixelBuffer;
use crate::metadata::{BBox, ImageMetadata, MaskRle, Modality, PsoAnnotation, RegionGeometry, SensitivityGroupTable};

pub const WIDTH: u32 = 240;
pub const HEIGHT: u32 = 160;
pub const CHANNELS: u8 = 3;

/// Thresholds of the worked example.
pub fn case_study_table() -> SensitivityGroupTable {
    SensitivityGroupTable::with_thresholds(&[0.25, 0.5, 0.75, 1.0]).expect("valid thresholds")
}

/// Deterministic textured RGB image.
pub fn case_study_image() -> PixelBuffer {
    let mut data = Vec::with_capacity((WIDTH * HEIGHT * CHANNELS as u32) as usize);
    for y in 0..HEIGHT {
        for x in 0..WIDTH {
            for c in 0..CHANNELS as u32 {
                let v = (x * 7 + y * 13 + c * 31) ^ (x * y).wrapping_mul(2654435761) >> 24;
                data.push(v as u8);
            }
        }
    }
    PixelBuffer::new(WIDTH, HEIGHT, CHANNELS, data).expect("dimensions match")
}

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64) -> MaskRle {
    let idx = (0..WIDTH * HEIGHT).filter(|i| {
        let (x, y) = ((i % WIDTH) as f64 + 0.5, (i / WIDTH) as f64 + 0.5);
        ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2) <= 1.0
    });
    MaskRle::from_indices(WIDTH * HEIGHT, idx)
}

fn stroke() -> MaskRle {
    // a sine-shaped pen stroke, 3 pixels thick
    let idx = (0..WIDTH * HEIGHT).filter(|i| {
        let (x, y) = ((i % WIDTH) as f64, (i / WIDTH) as f64);
        (75.0..125.0).contains(&x) && (y - (86.0 + 4.0 * (x / 5.0).sin())).abs() <= 1.5
    });
    MaskRle::from_indices(WIDTH * HEIGHT, idx)
}

/// The eight objects with scores .25 .30 .40 .60 .70 .80 .85 .90.
pub fn case_study_metadata() -> ImageMetadata {
    let table = case_study_table();
    let b = |x, y, w, h| RegionGeometry::BBox(BBox::new(x, y, w, h));
    let objects = [
        ("driver_license", Modality::Multimodal, b(20, 20, 120, 80), 0.93, 0.25),
        (
            "person",
            Modality::Visual,
            RegionGeometry::Mask(ellipse(190.0, 80.0, 30.0, 70.0)),
            0.88,
            0.30,
        ),
        ("location", Modality::Textual, b(10, 135, 100, 15), 0.81, 0.40),
        ("date", Modality::Textual, b(120, 135, 60, 15), 0.90, 0.60),
        (
            "face",
            Modality::Visual,
            RegionGeometry::Mask(ellipse(47.0, 58.0, 17.0, 23.0)),
            0.97,
            0.70,
        ),
        ("birthdate", Modality::Textual, b(75, 60, 55, 10), 0.86, 0.80),
        ("name", Modality::Textual, b(75, 40, 55, 10), 0.91, 0.85),
        (
            "signature",
            Modality::Visual,
            RegionGeometry::Mask(stroke()),
            0.77,
            0.90,
        ),
    ];
    let annotations = objects
        .into_iter()
        .enumerate()
        .map(|(id, (label, modality, geometry, conf, score))| {
            PsoAnnotation::new(id as u32, label, modality, geometry, conf, score, &table).expect("valid annotation")
        })
        .collect();
    ImageMetadata::new("case-study", WIDTH, HEIGHT, CHANNELS, table, annotations).expect("valid metadata")
}
