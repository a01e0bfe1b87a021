//! Dense feature-map tensors in the canonical stream order.
//!
//! Element `(y, x, c)` lives at flat index `(y*width + x)*channels + c`, i.e.
//! row-major with the channel index fastest. This matches the depth-first
//! order in which the streaming engine consumes and produces pixels, so a
//! tensor's backing buffer doubles as its pixel stream.

/// Flat index for coordinate `(y, x, c)` in a `width`-wide, `channels`-deep map.
#[inline]
pub fn flat_index(y: usize, x: usize, c: usize, width: usize, channels: usize) -> usize {
    debug_assert!(x < width && c < channels);
    (y * width + x) * channels + c
}

/// H×W×C map of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct RealTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl RealTensor {
    pub fn zeros(height: usize, width: usize, channels: usize) -> RealTensor {
        assert!(height >= 1 && width >= 1 && channels >= 1);
        RealTensor {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> RealTensor {
        assert_eq!(data.len(), height * width * channels);
        RealTensor {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[flat_index(y, x, c, self.width, self.channels)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[flat_index(y, x, c, self.width, self.channels)] = v;
    }

    pub fn same_shape(&self, other: &RealTensor) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }
}

/// Affine quantization parameters for a UINT8 activation boundary.
///
/// The scale is stored as `f32` so that in-memory models and models round-
/// tripped through the weight file carry bit-identical parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActQuant {
    pub scale: f32,
    pub zero_point: u8,
}

impl ActQuant {
    pub fn new(scale: f32, zero_point: u8) -> ActQuant {
        assert!(scale > 0.0, "activation scale must be positive");
        ActQuant { scale, zero_point }
    }
}

/// UINT8 activation tensor carrying its quantization parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<u8>,
    pub params: ActQuant,
}

impl QuantTensor {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<u8>,
        params: ActQuant,
    ) -> QuantTensor {
        assert_eq!(data.len(), height * width * channels);
        QuantTensor {
            height,
            width,
            channels,
            data,
            params,
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.data[flat_index(y, x, c, self.width, self.channels)]
    }

    /// Dequantizes back to reals: `(q - zero_point) * scale`.
    pub fn dequantize(&self) -> RealTensor {
        let zp = self.params.zero_point as f64;
        let scale = self.params.scale as f64;
        RealTensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self
                .data
                .iter()
                .map(|&q| (q as f64 - zp) * scale)
                .collect(),
        }
    }
}

/// A complex value as two 64-bit reals.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ComplexValue {
    pub re: f64,
    pub im: f64,
}

impl ComplexValue {
    pub fn new(re: f64, im: f64) -> ComplexValue {
        ComplexValue { re, im }
    }

    pub fn mul(self, rhs: ComplexValue) -> ComplexValue {
        ComplexValue {
            re: self.re * rhs.re - self.im * rhs.im,
            im: self.re * rhs.im + self.im * rhs.re,
        }
    }

    pub fn add(self, rhs: ComplexValue) -> ComplexValue {
        ComplexValue {
            re: self.re + rhs.re,
            im: self.im + rhs.im,
        }
    }

    pub fn conj(self) -> ComplexValue {
        ComplexValue {
            re: self.re,
            im: -self.im,
        }
    }

    pub fn norm_sq(self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    pub fn scale(self, s: f64) -> ComplexValue {
        ComplexValue {
            re: self.re * s,
            im: self.im * s,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn flat_index_examples() {
        assert_eq!(flat_index(0, 0, 0, 32, 2), 0);
        assert_eq!(flat_index(0, 1, 0, 32, 2), 2);
        assert_eq!(flat_index(1, 0, 0, 32, 2), 64);
    }

    proptest! {
        #[test]
        fn flat_index_bijective(h in 1usize..6, w in 1usize..6, c in 1usize..6) {
            let mut seen = vec![false; h * w * c];
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        let i = flat_index(y, x, ch, w, c);
                        prop_assert!(!seen[i]);
                        seen[i] = true;
                    }
                }
            }
            prop_assert!(seen.iter().all(|&s| s));
        }
    }
}
