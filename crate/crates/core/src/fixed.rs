//! Signed Q7.24 fixed-point arithmetic.
//!
//! One sign bit, 7 integer bits, 24 fractional bits; representable range
//! `[-128.0, 128.0 - 2^-24]`. All conversions and arithmetic saturate at the
//! range ends — values never wrap. Rounding is half-away-from-zero.

pub const FRAC_BITS: u32 = 24;
pub const ONE_RAW: i32 = 1 << FRAC_BITS;

/// A 32-bit fixed-point number with 24 fractional bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Fixed32 {
    raw: i32,
}

impl Fixed32 {
    pub const ZERO: Fixed32 = Fixed32 { raw: 0 };
    pub const ONE: Fixed32 = Fixed32 { raw: ONE_RAW };
    pub const MAX: Fixed32 = Fixed32 { raw: i32::MAX };
    pub const MIN: Fixed32 = Fixed32 { raw: i32::MIN };

    pub const fn from_raw(raw: i32) -> Fixed32 {
        Fixed32 { raw }
    }

    pub const fn raw(self) -> i32 {
        self.raw
    }

    /// Converts a real number, rounding half-away-from-zero and saturating.
    pub fn from_real(x: f64) -> Fixed32 {
        debug_assert!(x.is_finite(), "fixed-point conversion of non-finite value");
        let scaled = (x * ONE_RAW as f64).round();
        if scaled >= i32::MAX as f64 {
            Fixed32::MAX
        } else if scaled <= i32::MIN as f64 {
            Fixed32::MIN
        } else {
            Fixed32 { raw: scaled as i32 }
        }
    }

    pub fn to_real(self) -> f64 {
        self.raw as f64 / ONE_RAW as f64
    }

    /// Saturating fixed-point product.
    ///
    /// Computed as `(a.raw * b.raw + 2^23) >> 24` in 64-bit arithmetic, then
    /// saturated back to 32 bits. Deterministic on all platforms.
    pub fn mul(self, rhs: Fixed32) -> Fixed32 {
        let wide = self.raw as i64 * rhs.raw as i64;
        let rounded = (wide + (1i64 << (FRAC_BITS - 1))) >> FRAC_BITS;
        Fixed32 {
            raw: saturate_i64(rounded),
        }
    }

    pub fn add(self, rhs: Fixed32) -> Fixed32 {
        Fixed32 {
            raw: self.raw.saturating_add(rhs.raw),
        }
    }

    pub fn sub(self, rhs: Fixed32) -> Fixed32 {
        Fixed32 {
            raw: self.raw.saturating_sub(rhs.raw),
        }
    }

    pub fn neg(self) -> Fixed32 {
        Fixed32 {
            raw: self.raw.saturating_neg(),
        }
    }
}

fn saturate_i64(v: i64) -> i32 {
    if v > i32::MAX as i64 {
        i32::MAX
    } else if v < i32::MIN as i64 {
        i32::MIN
    } else {
        v as i32
    }
}
