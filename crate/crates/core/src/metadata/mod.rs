//! PSO annotation model, sensitivity scoring and the canonical metadata document.
//!
//! A sensitivity score lives on the scale `[alpha, beta]` (by default
//! `[0.1, 1.0]`). The scale is split into `L` groups by ascending thresholds;
//! group `l` covers `(thresholds[l-2], thresholds[l-1]]`, and group 1 also
//! includes `alpha` itself.

mod decimal;
pub mod ingest;
mod json;
mod rle;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

pub use decimal::Decimal4;
pub use json::{parse_metadata, serialize_metadata};
pub use rle::MaskRle;

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Lowest and highest raw user ratings accepted by [`normalize_score`].
pub const RATING_MIN: f64 = 1.0;
pub const RATING_MAX: f64 = 5.0;

/// Maps a mean comfort rating on the 1..=5 scale linearly onto `[0.1, 1.0]`.
pub fn normalize_score(mean_rating: f64) -> Result<f64> {
    if !(RATING_MIN..=RATING_MAX).contains(&mean_rating) {
        return Err(Error::validation(format!(
            "mean rating {mean_rating} outside [{RATING_MIN}, {RATING_MAX}]"
        )));
    }
    Ok(0.1 + 0.9 * (mean_rating - RATING_MIN) / (RATING_MAX - RATING_MIN))
}

/// Thresholds partitioning `[alpha, beta]` into `L` sensitivity groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensitivityGroupTable {
    alpha: Decimal4,
    beta: Decimal4,
    thresholds: Vec<Decimal4>,
}

impl SensitivityGroupTable {
    pub fn new(alpha: f64, beta: f64, thresholds: &[f64]) -> Result<Self> {
        let thresholds = thresholds
            .iter()
            .map(|&t| Decimal4::from_f64_exact(t))
            .collect::<Result<Vec<_>>>()?;
        Self::from_decimals(
            Decimal4::from_f64_exact(alpha)?,
            Decimal4::from_f64_exact(beta)?,
            thresholds,
        )
    }

    /// Thresholds over the default `[0.1, 1.0]` scale.
    pub fn with_thresholds(thresholds: &[f64]) -> Result<Self> {
        Self::new(0.1, 1.0, thresholds)
    }

    pub fn from_decimals(alpha: Decimal4, beta: Decimal4, thresholds: Vec<Decimal4>) -> Result<Self> {
        if alpha >= beta {
            return Err(Error::validation(format!(
                "group_table: alpha {alpha} must be below beta {beta}"
            )));
        }
        let Some(&last) = thresholds.last() else {
            return Err(Error::validation("group_table: at least one threshold is required"));
        };
        if thresholds.len() > u16::MAX as usize {
            return Err(Error::validation("group_table: too many groups"));
        }
        if thresholds[0] <= alpha {
            return Err(Error::validation(format!(
                "group_table: first threshold {} must exceed alpha {alpha}",
                thresholds[0]
            )));
        }
        if let Some(w) = thresholds.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::validation(format!(
                "group_table: thresholds not strictly ascending at {} >= {}",
                w[0], w[1]
            )));
        }
        if last != beta {
            return Err(Error::validation(format!(
                "group_table: final threshold {last} must equal beta {beta}"
            )));
        }
        Ok(Self {
            alpha,
            beta,
            thresholds,
        })
    }

    pub fn alpha(&self) -> Decimal4 {
        self.alpha
    }

    pub fn beta(&self) -> Decimal4 {
        self.beta
    }

    pub fn thresholds(&self) -> &[Decimal4] {
        &self.thresholds
    }

    /// Number of groups `L`.
    pub fn group_count(&self) -> u16 {
        self.thresholds.len() as u16
    }

    /// Smallest group whose upper threshold is at or above `score`.
    pub fn assign_group(&self, score: f64) -> Result<u16> {
        if !score.is_finite() || score < self.alpha.to_f64() || score > self.beta.to_f64() {
            return Err(Error::validation(format!(
                "score {score} outside [{}, {}]",
                self.alpha, self.beta
            )));
        }
        let idx = self
            .thresholds
            .iter()
            .position(|t| score <= t.to_f64())
            .expect("last threshold equals beta");
        Ok(idx as u16 + 1)
    }

    /// Exact variant of [`Self::assign_group`] for already-quantized scores.
    pub fn assign_group_decimal(&self, score: Decimal4) -> Result<u16> {
        if score < self.alpha || score > self.beta {
            return Err(Error::validation(format!(
                "score {score} outside [{}, {}]",
                self.alpha, self.beta
            )));
        }
        let idx = self
            .thresholds
            .iter()
            .position(|&t| score <= t)
            .expect("last threshold equals beta");
        Ok(idx as u16 + 1)
    }
}

impl Default for SensitivityGroupTable {
    /// Four groups with thresholds 0.35 / 0.70 / 0.90 / 1.00.
    fn default() -> Self {
        Self::with_thresholds(&[0.35, 0.7, 0.9, 1.0]).expect("static table is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Visual,
    Textual,
    Multimodal,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Textual => "textual",
            Modality::Multimodal => "multimodal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "visual" => Ok(Modality::Visual),
            "textual" => Ok(Modality::Textual),
            "multimodal" => Ok(Modality::Multimodal),
            other => Err(Error::validation(format!("unknown modality {other:?}"))),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Axis-aligned rectangle in integer pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl BBox {
    pub const fn new(x: u32, y: u32, width: u32, height: u32) -> Self {
        Self { x, y, width, height }
    }

    pub fn check_within(&self, width: u32, height: u32) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::validation(format!("bbox {self:?} has zero extent")));
        }
        let right = self.x as u64 + self.width as u64;
        let bottom = self.y as u64 + self.height as u64;
        if right > width as u64 || bottom > height as u64 {
            return Err(Error::validation(format!(
                "bbox {self:?} exceeds image bounds {width}x{height}"
            )));
        }
        Ok(())
    }

    pub fn contains(&self, other: &BBox) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.x as u64 + other.width as u64 <= self.x as u64 + self.width as u64
            && other.y as u64 + other.height as u64 <= self.y as u64 + self.height as u64
    }

    pub fn centroid(&self) -> (f64, f64) {
        (
            self.x as f64 + self.width as f64 / 2.0,
            self.y as f64 + self.height as f64 / 2.0,
        )
    }

    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RegionGeometry {
    BBox(BBox),
    /// Mask over the full image plane.
    Mask(MaskRle),
}

impl RegionGeometry {
    pub fn kind(&self) -> &'static str {
        match self {
            RegionGeometry::BBox(_) => "bbox",
            RegionGeometry::Mask(_) => "mask",
        }
    }

    pub fn check_within(&self, width: u32, height: u32) -> Result<()> {
        match self {
            RegionGeometry::BBox(b) => b.check_within(width, height),
            RegionGeometry::Mask(m) => {
                let plane = width as u64 * height as u64;
                if m.total_len() != plane {
                    return Err(Error::validation(format!(
                        "mask covers {} pixels but the image has {plane}",
                        m.total_len()
                    )));
                }
                if m.set_count() == 0 {
                    return Err(Error::validation("mask has no set pixel"));
                }
                Ok(())
            }
        }
    }

    /// Tight bounding box of the region. `width` is the image width.
    pub fn bounding_box(&self, width: u32) -> Option<BBox> {
        match self {
            RegionGeometry::BBox(b) => Some(*b),
            RegionGeometry::Mask(m) => {
                let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
                let mut any = false;
                for i in m.set_indices() {
                    let (x, y) = (i % width, i / width);
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                    any = true;
                }
                any.then(|| BBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
            }
        }
    }
}

/// One detected privacy-sensitive object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PsoAnnotation {
    pub id: u32,
    pub label: String,
    pub modality: Modality,
    pub geometry: RegionGeometry,
    pub confidence: Decimal4,
    pub sensitivity_score: Decimal4,
    pub group: u16,
}

impl PsoAnnotation {
    /// Builds an annotation, deriving its group from `table`.
    pub fn new(
        id: u32,
        label: impl Into<String>,
        modality: Modality,
        geometry: RegionGeometry,
        confidence: f64,
        sensitivity_score: f64,
        table: &SensitivityGroupTable,
    ) -> Result<Self> {
        let confidence = Decimal4::from_f64(confidence)?;
        let sensitivity_score = Decimal4::from_f64(sensitivity_score)?;
        let group = table.assign_group_decimal(sensitivity_score)?;
        Ok(Self {
            id,
            label: label.into(),
            modality,
            geometry,
            confidence,
            sensitivity_score,
            group,
        })
    }

    fn validate(&self, width: u32, height: u32, table: &SensitivityGroupTable) -> Result<()> {
        let id = self.id;
        let fail = |msg: String| Err(Error::validation(format!("annotation id {id}: {msg}")));
        if self.label.is_empty() {
            return fail("label is empty".into());
        }
        match (self.modality, &self.geometry) {
            (Modality::Visual, RegionGeometry::Mask(_)) => {}
            (Modality::Textual | Modality::Multimodal, RegionGeometry::BBox(_)) => {}
            (m, g) => return fail(format!("{m} annotation cannot carry {} geometry", g.kind())),
        }
        if let Err(e) = self.geometry.check_within(width, height) {
            return fail(format!("geometry: {e}"));
        }
        if self.confidence < Decimal4::ZERO || self.confidence > Decimal4::ONE {
            return fail(format!("confidence {} outside [0, 1]", self.confidence));
        }
        let expected = match table.assign_group_decimal(self.sensitivity_score) {
            Ok(g) => g,
            Err(e) => return fail(format!("sensitivity_score: {e}")),
        };
        if self.group != expected {
            return fail(format!(
                "group is {} but sensitivity_score {} maps to group {expected}",
                self.group, self.sensitivity_score
            ));
        }
        Ok(())
    }
}

/// Everything encryption and decryption need to know about one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageMetadata {
    pub schema_version: u32,
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub group_table: SensitivityGroupTable,
    pub annotations: Vec<PsoAnnotation>,
}

impl ImageMetadata {
    pub fn new(
        image_id: impl Into<String>,
        width: u32,
        height: u32,
        channels: u8,
        group_table: SensitivityGroupTable,
        annotations: Vec<PsoAnnotation>,
    ) -> Result<Self> {
        let meta = Self {
            schema_version: SCHEMA_VERSION,
            image_id: image_id.into(),
            width,
            height,
            channels,
            group_table,
            annotations,
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::validation(format!(
                "schema_version {} is not supported",
                self.schema_version
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::validation("width and height must be non-zero"));
        }
        if !matches!(self.channels, 1 | 3 | 4) {
            return Err(Error::validation(format!(
                "channels must be 1, 3 or 4, got {}",
                self.channels
            )));
        }
        for (i, a) in self.annotations.iter().enumerate() {
            if a.id as usize != i {
                return Err(Error::validation(format!(
                    "annotation ids must be dense from 0: position {i} holds id {}",
                    a.id
                )));
            }
            a.validate(self.width, self.height, &self.group_table)?;
        }
        Ok(())
    }

    pub fn group_count(&self) -> u16 {
        self.group_table.group_count()
    }
}

/// Per-class sensitivity scores used to score detections.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassScores {
    scores: BTreeMap<String, Decimal4>,
}

/// Label carried by text that is not privacy-sensitive.
pub const SAFE_LABEL: &str = "safe";

impl ClassScores {
    pub fn new(scores: impl IntoIterator<Item = (String, f64)>) -> Result<Self> {
        let scores = scores
            .into_iter()
            .map(|(label, s)| Ok((label, Decimal4::from_f64_exact(s)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Self { scores })
    }

    pub fn get(&self, label: &str) -> Option<Decimal4> {
        self.scores.get(label).copied()
    }

    pub fn labels(&self) -> BTreeSet<&str> {
        self.scores.keys().map(String::as_str).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Decimal4)> {
        self.scores.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Checks every score lies on the table's scale.
    pub fn check_against(&self, table: &SensitivityGroupTable) -> Result<()> {
        for (label, &s) in &self.scores {
            table
                .assign_group_decimal(s)
                .map_err(|e| Error::Config(format!("class {label:?}: {e}")))?;
        }
        Ok(())
    }
}

impl Default for ClassScores {
    /// The eight classes of the progressive-decryption walkthrough.
    fn default() -> Self {
        Self::new(
            [
                ("driver_license", 0.25),
                ("person", 0.30),
                ("location", 0.40),
                ("date", 0.60),
                ("face", 0.70),
                ("birthdate", 0.80),
                ("name", 0.85),
                ("signature", 0.90),
            ]
            .into_iter()
            .map(|(l, s)| (l.to_string(), s)),
        )
        .expect("static scores are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quarter_table() -> SensitivityGroupTable {
        SensitivityGroupTable::with_thresholds(&[0.25, 0.5, 0.75, 1.0]).unwrap()
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        assert_eq!(normalize_score(5.0).unwrap(), 1.0);
        assert_eq!(normalize_score(1.0).unwrap(), 0.1);
        // 0.1 + 0.9 * 2/4 evaluated independently
        let oracle = 0.1 + 0.9 * 0.5;
        assert!((normalize_score(3.0).unwrap() - oracle).abs() < 1e-12);
        assert!((normalize_score(3.0).unwrap() - 0.55).abs() < 1e-12);
    }

    #[test]
    fn normalize_rejects_out_of_range() {
        assert!(normalize_score(0.99).is_err());
        assert!(normalize_score(5.01).is_err());
        assert!(normalize_score(f64::NAN).is_err());
    }

    #[test]
    fn assign_group_walkthrough_boundaries() {
        let t = quarter_table();
        assert_eq!(t.assign_group(0.25).unwrap(), 1);
        assert_eq!(t.assign_group(0.80).unwrap(), 4);
        assert_eq!(t.assign_group(0.10).unwrap(), 1);
        assert_eq!(t.assign_group(0.2501).unwrap(), 2);
        assert_eq!(t.assign_group(1.0).unwrap(), 4);
        assert!(t.assign_group(0.09).is_err());
        assert!(t.assign_group(1.01).is_err());
    }

    #[test]
    fn assign_group_default_thresholds() {
        let t = SensitivityGroupTable::default();
        assert_eq!(t.group_count(), 4);
        assert_eq!(t.assign_group(0.70).unwrap(), 2);
        assert_eq!(t.assign_group(0.35).unwrap(), 1);
        assert_eq!(t.assign_group(0.36).unwrap(), 2);
        assert_eq!(t.assign_group(0.95).unwrap(), 4);
    }

    #[test]
    fn group_table_invariants() {
        assert!(SensitivityGroupTable::with_thresholds(&[]).is_err());
        assert!(SensitivityGroupTable::with_thresholds(&[0.5, 0.5, 1.0]).is_err());
        assert!(SensitivityGroupTable::with_thresholds(&[0.5, 0.9]).is_err());
        assert!(SensitivityGroupTable::with_thresholds(&[0.1, 1.0]).is_err());
        assert!(SensitivityGroupTable::with_thresholds(&[1.0]).is_ok());
        assert!(SensitivityGroupTable::new(1.0, 0.1, &[1.0]).is_err());
    }

    #[test]
    fn walkthrough_scores_map_to_expected_groups() {
        let t = quarter_table();
        let scores = ClassScores::default();
        let groups: Vec<(&str, u16)> = scores
            .iter()
            .map(|(l, s)| (l, t.assign_group_decimal(s).unwrap()))
            .collect();
        let lookup = |l: &str| groups.iter().find(|(k, _)| *k == l).unwrap().1;
        assert_eq!(lookup("driver_license"), 1);
        assert_eq!(lookup("person"), 2);
        assert_eq!(lookup("location"), 2);
        assert_eq!(lookup("date"), 3);
        assert_eq!(lookup("face"), 3);
        assert_eq!(lookup("birthdate"), 4);
        assert_eq!(lookup("name"), 4);
        assert_eq!(lookup("signature"), 4);
    }

    #[test]
    fn annotation_modality_geometry_pairing() {
        let t = quarter_table();
        let bbox = RegionGeometry::BBox(BBox::new(0, 0, 2, 2));
        let a = PsoAnnotation::new(0, "face", Modality::Visual, bbox, 0.9, 0.7, &t).unwrap();
        let meta = ImageMetadata::new("img", 4, 4, 3, t.clone(), vec![a]);
        assert!(meta.unwrap_err().to_string().contains("annotation id 0"));
    }

    #[test]
    fn metadata_rejects_sparse_ids_and_bad_channels() {
        let t = quarter_table();
        let bbox = RegionGeometry::BBox(BBox::new(0, 0, 2, 2));
        let a = PsoAnnotation::new(1, "name", Modality::Textual, bbox.clone(), 0.9, 0.85, &t).unwrap();
        assert!(ImageMetadata::new("img", 4, 4, 3, t.clone(), vec![a]).is_err());
        assert!(ImageMetadata::new("img", 4, 4, 2, t.clone(), vec![]).is_err());
        let out = PsoAnnotation::new(
            0,
            "name",
            Modality::Textual,
            RegionGeometry::BBox(BBox::new(3, 3, 2, 1)),
            0.9,
            0.85,
            &t,
        )
        .unwrap();
        assert!(ImageMetadata::new("img", 4, 4, 3, t, vec![out]).is_err());
    }

    #[test]
    fn mask_bounding_box() {
        let m = MaskRle::from_indices(16, [5, 6, 10]);
        let g = RegionGeometry::Mask(m);
        assert_eq!(g.bounding_box(4), Some(BBox::new(1, 1, 2, 2)));
    }

    proptest! {
        #[test]
        fn assigned_group_brackets_score(units in 1000i64..=10_000) {
            let t = SensitivityGroupTable::default();
            let s = Decimal4::from_units(units).to_f64();
            let g = t.assign_group(s).unwrap() as usize;
            let th = t.thresholds();
            prop_assert!(s <= th[g - 1].to_f64());
            if g > 1 {
                prop_assert!(s > th[g - 2].to_f64());
            } else {
                prop_assert!(s >= t.alpha().to_f64());
            }
        }

        #[test]
        fn normalize_is_affine(a in 1.0f64..=5.0, b in 1.0f64..=5.0) {
            let lhs = normalize_score(a).unwrap() + normalize_score(b).unwrap();
            let rhs = 2.0 * normalize_score((a + b) / 2.0).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn normalize_is_monotone(a in 1.0f64..=5.0, b in 1.0f64..=5.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(normalize_score(lo).unwrap() <= normalize_score(hi).unwrap());
        }
    }
}
