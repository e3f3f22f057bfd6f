use std::fmt;

use crate::error::{Error, Result};

/// Fixed-point decimal with exactly four fractional digits.
///
/// Scores, thresholds and confidences are held in this form so that the
/// canonical metadata document is byte-stable across round trips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Decimal4(i64);

impl Decimal4 {
    pub const SCALE: i64 = 10_000;
    pub const ZERO: Decimal4 = Decimal4(0);
    pub const ONE: Decimal4 = Decimal4(Self::SCALE);

    pub const fn from_units(units: i64) -> Self {
        Decimal4(units)
    }

    /// Rounds to the nearest ten-thousandth.
    pub fn from_f64(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::validation(format!("{value} is not a finite number")));
        }
        let scaled = (value * Self::SCALE as f64).round();
        if scaled.abs() > i64::MAX as f64 / 2.0 {
            return Err(Error::validation(format!("{value} is out of range")));
        }
        Ok(Decimal4(scaled as i64))
    }

    /// Like [`Decimal4::from_f64`] but refuses values carrying more than four
    /// fractional digits.
    pub fn from_f64_exact(value: f64) -> Result<Self> {
        let d = Self::from_f64(value)?;
        let residue = (value * Self::SCALE as f64 - d.0 as f64).abs();
        if residue > 1e-6 {
            return Err(Error::validation(format!(
                "{value} has more than four fractional digits"
            )));
        }
        Ok(d)
    }

    pub const fn units(self) -> i64 {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / Self::SCALE as f64
    }
}

impl fmt::Display for Decimal4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let scale = Self::SCALE as u64;
        write!(f, "{sign}{}.{:04}", abs / scale, abs % scale)
    }
}
