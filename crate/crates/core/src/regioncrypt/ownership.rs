use std::cmp::Reverse;

use crate::error::Result;
use crate::metadata::{PsoAnnotation, RegionGeometry};

/// Row-major linear indices (`y * width + x`) covered by an annotation, ascending.
pub fn rasterize_region(a: &PsoAnnotation, width: u32, height: u32) -> Result<Vec<u32>> {
    a.geometry.check_within(width, height)?;
    Ok(match &a.geometry {
        RegionGeometry::BBox(b) => {
            let mut out = Vec::with_capacity(b.area() as usize);
            for y in b.y..b.y + b.height {
                let row = y * width;
                out.extend(row + b.x..row + b.x + b.width);
            }
            out
        }
        RegionGeometry::Mask(m) => m.set_indices().collect(),
    })
}

/// Order in which annotations claim pixels: group desc, score desc, id asc.
pub fn claim_order(annotations: &[PsoAnnotation]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..annotations.len()).collect();
    order.sort_by_key(|&i| {
        let a = &annotations[i];
        (Reverse(a.group), Reverse(a.sensitivity_score), a.id)
    });
    order
}

/// Exclusive pixel sets, one per annotation (indexed by annotation id).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelOwnership {
    width: u32,
    height: u32,
    sets: Vec<Vec<u32>>,
}

impl PixelOwnership {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Sorted pixels owned by annotation `id`; empty for unknown ids.
    pub fn pixels(&self, id: u32) -> &[u32] {
        self.sets.get(id as usize).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn owned_total(&self) -> u64 {
        self.sets.iter().map(|s| s.len() as u64).sum()
    }

    /// Owner of the pixel at linear index `pixel`.
    pub fn owner(&self, pixel: u32) -> Option<u32> {
        self.sets
            .iter()
            .position(|s| s.binary_search(&pixel).is_ok())
            .map(|i| i as u32)
    }

    /// Dense owner map over the whole image plane.
    pub fn owner_map(&self) -> Vec<Option<u32>> {
        let mut map = vec![None; self.width as usize * self.height as usize];
        for (id, set) in self.sets.iter().enumerate() {
            for &p in set {
                map[p as usize] = Some(id as u32);
            }
        }
        map
    }
}

/// Gives each pixel to the most sensitive annotation covering it.
///
/// Annotation ids must equal their positions, as in validated metadata.
pub fn resolve_ownership(annotations: &[PsoAnnotation], width: u32, height: u32) -> Result<PixelOwnership> {
    let plane = width as usize * height as usize;
    let mut claimed = vec![0u64; plane.div_ceil(64)];
    let mut sets = vec![Vec::new(); annotations.len()];
    for i in claim_order(annotations) {
        let raster = rasterize_region(&annotations[i], width, height)?;
        let mut owned = Vec::with_capacity(raster.len());
        for p in raster {
            let (word, bit) = (p as usize / 64, 1u64 << (p % 64));
            if claimed[word] & bit == 0 {
                claimed[word] |= bit;
                owned.push(p);
            }
        }
        sets[i] = owned;
    }
    Ok(PixelOwnership { width, height, sets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metadata::{BBox, MaskRle, Modality, SensitivityGroupTable};
    use proptest::prelude::*;

    fn table() -> SensitivityGroupTable {
        SensitivityGroupTable::with_thresholds(&[0.25, 0.5, 0.75, 1.0]).unwrap()
    }

    fn boxed(id: u32, b: BBox, score: f64) -> PsoAnnotation {
        PsoAnnotation::new(
            id,
            "x",
            Modality::Textual,
            RegionGeometry::BBox(b),
            1.0,
            score,
            &table(),
        )
        .unwrap()
    }

    fn masked(id: u32, len: u32, idx: &[u32], score: f64) -> PsoAnnotation {
        let m = MaskRle::from_indices(len, idx.iter().copied());
        PsoAnnotation::new(id, "x", Modality::Visual, RegionGeometry::Mask(m), 1.0, score, &table()).unwrap()
    }

    /// Per-pixel oracle: the covering annotation with the highest
    /// (group, score, -id) owns the pixel.
    fn oracle(annotations: &[PsoAnnotation], width: u32, height: u32) -> Vec<Option<u32>> {
        let covers = |a: &PsoAnnotation, x: u32, y: u32| match &a.geometry {
            RegionGeometry::BBox(b) => x >= b.x && x < b.x + b.width && y >= b.y && y < b.y + b.height,
            RegionGeometry::Mask(m) => m.decode()[(y * width + x) as usize],
        };
        let mut out = Vec::new();
        for y in 0..height {
            for x in 0..width {
                let best = annotations
                    .iter()
                    .filter(|a| covers(a, x, y))
                    .max_by_key(|a| (a.group, a.sensitivity_score, Reverse(a.id)));
                out.push(best.map(|a| a.id));
            }
        }
        out
    }

    #[test]
    fn bbox_raster() {
        let a = boxed(0, BBox::new(0, 0, 2, 2), 0.5);
        assert_eq!(rasterize_region(&a, 4, 4).unwrap(), vec![0, 1, 4, 5]);
        let m = masked(0, 16, &[9], 0.5);
        assert_eq!(rasterize_region(&m, 4, 4).unwrap(), vec![9]);
        assert!(rasterize_region(&a, 1, 1).is_err());
    }

    #[test]
    fn disjoint_regions_keep_everything() {
        let a = vec![
            boxed(0, BBox::new(0, 0, 2, 2), 0.3),
            boxed(1, BBox::new(4, 4, 2, 2), 0.9),
        ];
        let o = resolve_ownership(&a, 8, 8).unwrap();
        assert_eq!(o.pixels(0).len(), 4);
        assert_eq!(o.pixels(1).len(), 4);
    }

    #[test]
    fn covered_low_group_region_ends_empty() {
        let a = vec![
            boxed(0, BBox::new(2, 2, 2, 2), 0.2),
            boxed(1, BBox::new(0, 0, 8, 8), 0.95),
        ];
        let o = resolve_ownership(&a, 8, 8).unwrap();
        assert!(o.pixels(0).is_empty());
        assert_eq!(o.pixels(1).len(), 64);
        assert_eq!(o.owner(18), Some(1));
    }

    #[test]
    fn three_way_overlap_matches_oracle() {
        let a = vec![
            boxed(0, BBox::new(0, 0, 6, 6), 0.6),
            boxed(1, BBox::new(3, 3, 6, 6), 0.6),
            masked(2, 100, &[0, 11, 33, 44, 45, 55, 99], 0.7),
        ];
        let o = resolve_ownership(&a, 10, 10).unwrap();
        assert_eq!(o.owner_map(), oracle(&a, 10, 10));
        // equal group and score: the lower id wins the overlap
        assert_eq!(o.owner(3 * 10 + 5), Some(0));
    }

    fn arb_layout() -> impl Strategy<Value = (u32, u32, Vec<PsoAnnotation>)> {
        (1u32..24, 1u32..24).prop_flat_map(|(w, h)| {
            let item = (
                0u32..w,
                0u32..h,
                1u32..=w,
                1u32..=h,
                2u32..=20,
                any::<bool>(),
                any::<u64>(),
            );
            (Just(w), Just(h), proptest::collection::vec(item, 0..7)).prop_map(|(w, h, items)| {
                let t = table();
                let annotations = items
                    .into_iter()
                    .enumerate()
                    .map(|(id, (x, y, bw, bh, s, as_mask, bits))| {
                        let bw = bw.min(w - x);
                        let bh = bh.min(h - y);
                        let score = s as f64 * 0.05;
                        let geometry = if as_mask {
                            let mut idx: Vec<u32> = (0..w * h).filter(|i| bits.rotate_left(*i % 64) & 1 == 1).collect();
                            if idx.is_empty() {
                                idx.push(0);
                            }
                            RegionGeometry::Mask(MaskRle::from_indices(w * h, idx))
                        } else {
                            RegionGeometry::BBox(BBox::new(x, y, bw, bh))
                        };
                        let modality = if as_mask { Modality::Visual } else { Modality::Textual };
                        PsoAnnotation::new(id as u32, "x", modality, geometry, 1.0, score, &t).unwrap()
                    })
                    .collect();
                (w, h, annotations)
            })
        })
    }

    proptest! {
        #[test]
        fn ownership_matches_oracle((w, h, a) in arb_layout()) {
            let o = resolve_ownership(&a, w, h).unwrap();
            prop_assert_eq!(o.owner_map(), oracle(&a, w, h));
            let covered = oracle(&a, w, h).iter().filter(|x| x.is_some()).count() as u64;
            prop_assert_eq!(o.owned_total(), covered);
            for id in 0..a.len() as u32 {
                prop_assert!(o.pixels(id).windows(2).all(|p| p[0] < p[1]));
            }
        }
    }
}
