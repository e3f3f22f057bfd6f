//! Row-major run-length encoding of boolean rasters.
//!
//! Runs alternate between unset and set pixels, starting with an unset run.
//! The first run may be empty (raster starts with a set pixel); every other
//! run is non-empty, which makes the encoding canonical.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskRle {
    runs: Vec<u32>,
}

impl MaskRle {
    /// Wraps pre-computed runs, checking canonical form.
    pub fn from_runs(runs: Vec<u32>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::validation("mask_rle must contain at least one run"));
        }
        if let Some(pos) = runs.iter().skip(1).position(|&r| r == 0) {
            return Err(Error::validation(format!(
                "mask_rle run {} is empty; only the leading run may be zero",
                pos + 1
            )));
        }
        runs.iter()
            .try_fold(0u64, |acc, &r| acc.checked_add(r as u64))
            .filter(|&total| total <= u32::MAX as u64)
            .ok_or_else(|| Error::validation("mask_rle total length overflows"))?;
        Ok(Self { runs })
    }

    pub fn encode(raster: &[bool]) -> Self {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &bit in raster {
            if bit == current {
                len += 1;
            } else {
                runs.push(len);
                current = bit;
                len = 1;
            }
        }
        if len > 0 || runs.is_empty() {
            runs.push(len);
        }
        Self { runs }
    }

    /// Builds a mask of `len` pixels with the given row-major indices set.
    pub fn from_indices(len: u32, indices: impl IntoIterator<Item = u32>) -> Self {
        let mut raster = vec![false; len as usize];
        for i in indices {
            raster[i as usize] = true;
        }
        Self::encode(&raster)
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    /// Number of pixels covered by the encoding, set or not.
    pub fn total_len(&self) -> u64 {
        self.runs.iter().map(|&r| r as u64).sum()
    }

    pub fn set_count(&self) -> u64 {
        self.runs.iter().skip(1).step_by(2).map(|&r| r as u64).sum()
    }

    pub fn decode(&self) -> Vec<bool> {
        let mut raster = Vec::with_capacity(self.total_len() as usize);
        for (i, &r) in self.runs.iter().enumerate() {
            raster.extend(std::iter::repeat_n(i % 2 == 1, r as usize));
        }
        raster
    }

    /// Ascending row-major indices of set pixels.
    pub fn set_indices(&self) -> impl Iterator<Item = u32> + '_ {
        let mut offset = 0u32;
        self.runs.iter().enumerate().flat_map(move |(i, &r)| {
            let start = offset;
            offset += r;

            if i % 2 == 1 {
                start..start + r
            } else {
                0..0
            }
        })
    }
}
