use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::image::PixelBuffer;
use crate::metadata::{
    BBox, Decimal4, ImageMetadata, MaskRle, Modality, PsoAnnotation, RegionGeometry, SensitivityGroupTable,
};

/// Parameters of a synthetic benchmark corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub images: usize,
    pub min_side: u32,
    pub max_side: u32,
    pub channels: u8,
    /// Poisson mean of objects per image.
    pub mean_objects: f64,
    /// Smallest region, in pixels.
    pub min_region: u32,
    /// Largest region as a fraction of the image area.
    pub max_region_fraction: f64,
    pub seed: u64,
    pub table: SensitivityGroupTable,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            images: 10,
            min_side: 256,
            max_side: 768,
            channels: 3,
            mean_objects: 5.6,
            min_region: 64,
            max_region_fraction: 0.2,
            seed: 0,
            table: SensitivityGroupTable::default(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.min_side < 16 || self.min_side > self.max_side {
            return Err(Error::validation("image sides must satisfy 16 <= min_side <= max_side"));
        }
        if !matches!(self.channels, 1 | 3 | 4) {
            return Err(Error::validation("channels must be 1, 3 or 4"));
        }
        if !(self.mean_objects > 0.0 && self.mean_objects.is_finite()) {
            return Err(Error::validation("mean object count must be positive"));
        }
        if !(self.max_region_fraction > 0.0 && self.max_region_fraction <= 1.0) || self.min_region == 0 {
            return Err(Error::validation("region size bounds are invalid"));
        }
        Ok(())
    }

    /// Lazily generated `(image, metadata)` pairs.
    pub fn generate(&self) -> Result<impl Iterator<Item = (PixelBuffer, ImageMetadata)> + '_> {
        self.validate()?;
        let mut rng = StdRng::seed_from_u64(self.seed);
        let poisson = Poisson::new(self.mean_objects).map_err(|e| Error::validation(e.to_string()))?;
        Ok((0..self.images).map(move |i| self.one(i, &mut rng, &poisson)))
    }

    fn one(&self, index: usize, rng: &mut StdRng, poisson: &Poisson<f64>) -> (PixelBuffer, ImageMetadata) {
        let w = rng.gen_range(self.min_side..=self.max_side);
        let h = rng.gen_range(self.min_side..=self.max_side);
        let c = self.channels as u32;

        // smooth gradient with mild noise, so every image compresses alike
        let mut data = Vec::with_capacity((w * h * c) as usize);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let base = (x * 255 / w + y * 127 / h + ch * 40) as u8;
                    data.push(base.wrapping_add(rng.gen_range(0..8)));
                }
            }
        }
        let image = PixelBuffer::new(w, h, self.channels, data).expect("dimensions match");

        let count = poisson.sample(rng) as u32;
        let area_hi = (self.max_region_fraction * (w * h) as f64).max(self.min_region as f64 + 1.0);
        let area_lo = (self.min_region as f64).min(area_hi - 1.0);
        let annotations = (0..count)
            .map(|id| {
                let area = (rng.gen_range(area_lo.ln()..area_hi.ln())).exp();
                let aspect: f64 = rng.gen_range(0.5..2.0);
                let bw = ((area * aspect).sqrt().round() as u32).clamp(1, w);
                let bh = ((area / aspect).sqrt().round() as u32).clamp(1, h);
                let x = rng.gen_range(0..=w - bw);
                let y = rng.gen_range(0..=h - bh);
                let score = self.score_in_random_group(rng);
                let (modality, geometry) = if rng.gen_bool(0.5) {
                    (Modality::Textual, RegionGeometry::BBox(BBox::new(x, y, bw, bh)))
                } else {
                    (
                        Modality::Visual,
                        RegionGeometry::Mask(ellipse(w, h, BBox::new(x, y, bw, bh))),
                    )
                };
                PsoAnnotation::new(id, "synthetic", modality, geometry, 1.0, score, &self.table)
                    .expect("synthetic annotation is valid")
            })
            .collect();
        let meta = ImageMetadata::new(
            format!("synthetic-{index:04}"),
            w,
            h,
            self.channels,
            self.table.clone(),
            annotations,
        )
        .expect("synthetic metadata is valid");
        (image, meta)
    }

    /// Picks a group uniformly, then a score uniformly inside it, so every
    /// key level has work to do however unevenly the thresholds are spaced.
    fn score_in_random_group(&self, rng: &mut StdRng) -> f64 {
        let t = self.table.thresholds();
        let g = rng.gen_range(0..t.len());
        let hi = t[g].units();
        let lo = if g == 0 {
            self.table.alpha().units()
        } else {
            t[g - 1].units() + 1
        };
        rng.gen_range(lo..=hi) as f64 / Decimal4::SCALE as f64
    }
}

/// Ellipse inscribed in `b`; falls back to the centre pixel for slivers.
fn ellipse(w: u32, h: u32, b: BBox) -> MaskRle {
    let (cx, cy) = b.centroid();
    let (rx, ry) = (b.width as f64 / 2.0, b.height as f64 / 2.0);
    let mut idx = Vec::new();
    for y in b.y..b.y + b.height {
        for x in b.x..b.x + b.width {
            let (dx, dy) = ((x as f64 + 0.5 - cx) / rx, (y as f64 + 0.5 - cy) / ry);
            if dx * dx + dy * dy <= 1.0 {
                idx.push(y * w + x);
            }
        }
    }
    if idx.is_empty() {
        idx.push((cy as u32).min(h - 1) * w + (cx as u32).min(w - 1));
    }
    MaskRle::from_indices(w * h, idx)
}
