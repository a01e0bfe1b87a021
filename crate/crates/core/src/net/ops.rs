//! Elementary network operations on real tensors.

use thiserror::Error;

use crate::tensor::RealTensor;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("channel mismatch: input has {input}, layer expects {expected}")]
    ChannelMismatch { input: usize, expected: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("pixel shuffle: {channels} channels not equal to {c_out} x {r}^2")]
    ShuffleChannels {
        channels: usize,
        c_out: usize,
        r: usize,
    },
}

/// A convolution layer: `k` is 1 or 3, weights ordered `(f_out, f_in, ky, kx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub k: usize,
    pub f_in: usize,
    pub f_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvSpec {
    pub fn zeros(k: usize, f_in: usize, f_out: usize) -> ConvSpec {
        assert!(k == 1 || k == 3);
        ConvSpec {
            k,
            f_in,
            f_out,
            weights: vec![0.0; f_out * f_in * k * k],
            bias: vec![0.0; f_out],
        }
    }

    #[inline]
    pub fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((o * self.f_in + i) * self.k + ky) * self.k + kx]
    }

    #[inline]
    pub fn w_mut(&mut self, o: usize, i: usize, ky: usize, kx: usize) -> &mut f64 {
        &mut self.weights[((o * self.f_in + i) * self.k + ky) * self.k + kx]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Multiply-accumulates per output pixel (bias adds not counted).
    pub fn macs_per_pixel(&self) -> usize {
        self.f_in * self.k * self.k * self.f_out
    }
}

/// Same-padding convolution: zero padding at borders for k=3, plain pointwise
/// for k=1. Output has the input's spatial dims and `f_out` channels.
pub fn conv2d_same(x: &RealTensor, spec: &ConvSpec) -> Result<RealTensor, NetError> {
    if x.channels != spec.f_in {
        return Err(NetError::ChannelMismatch {
            input: x.channels,
            expected: spec.f_in,
        });
    }
    let pad = spec.k / 2;
    let mut out = RealTensor::zeros(x.height, x.width, spec.f_out);
    for y in 0..x.height {
        for xx in 0..x.width {
            for o in 0..spec.f_out {
                let mut acc = spec.bias[o];
                for ky in 0..spec.k {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= x.height as isize {
                        continue;
                    }
                    for kx in 0..spec.k {
                        let sx = xx as isize + kx as isize - pad as isize;
                        if sx < 0 || sx >= x.width as isize {
                            continue;
                        }
                        for i in 0..spec.f_in {
                            acc += x.get(sy as usize, sx as usize, i) * spec.w(o, i, ky, kx);
                        }
                    }
                }
                out.set(y, xx, o, acc);
            }
        }
    }
    Ok(out)
}

pub fn relu(x: &RealTensor) -> RealTensor {
    RealTensor {
        height: x.height,
        width: x.width,
        channels: x.channels,
        data: x.data.iter().map(|v| v.max(0.0)).collect(),
    }
}

/// The origin-symmetric attention activation, `sigmoid(x) - 0.5`.
#[inline]
pub fn sigma_a(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp()) - 0.5
}

/// Its derivative, `sigmoid(x) * (1 - sigmoid(x))`.
#[inline]
pub fn sigma_a_prime(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 - s)
}

/// Attention combine: `sigma_a(h) * (h + o_prev)` with the residual enabled,
/// `sigma_a(h) * h` without.
pub fn attention_block_forward(
    h: &RealTensor,
    o_prev: &RealTensor,
    residual: bool,
) -> Result<RealTensor, NetError> {
    if residual && !h.same_shape(o_prev) {
        return Err(NetError::ShapeMismatch(
            "attention residual shape differs from feature map".into(),
        ));
    }
    let mut out = h.clone();
    for (i, v) in out.data.iter_mut().enumerate() {
        let hv = h.data[i];
        let sum = if residual { hv + o_prev.data[i] } else { hv };
        *v = sigma_a(hv) * sum;
    }
    Ok(out)
}

/// Depth-to-space: `out[y*r+dy][x*r+dx][co] = in[y][x][co*r^2 + dy*r + dx]`.
pub fn pixel_shuffle(x: &RealTensor, r: usize, c_out: usize) -> Result<RealTensor, NetError> {
    if x.channels != c_out * r * r {
        return Err(NetError::ShuffleChannels {
            channels: x.channels,
            c_out,
            r,
        });
    }
    let mut out = RealTensor::zeros(x.height * r, x.width * r, c_out);
    for y in 0..x.height {
        for xx in 0..x.width {
            for co in 0..c_out {
                for dy in 0..r {
                    for dx in 0..r {
                        out.set(
                            y * r + dy,
                            xx * r + dx,
                            co,
                            x.get(y, xx, co * r * r + dy * r + dx),
                        );
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitRng;

    fn random_tensor(h: usize, w: usize, c: usize, rng: &mut SplitRng) -> RealTensor {
        RealTensor::from_vec(
            h,
            w,
            c,
            (0..h * w * c).map(|_| rng.uniform(-2.0, 2.0)).collect(),
        )
    }

    #[test]
    fn conv_identity_1x1() {
        let mut spec = ConvSpec::zeros(1, 3, 3);
        for i in 0..3 {
            *spec.w_mut(i, i, 0, 0) = 1.0;
        }
        let mut rng = SplitRng::new(1);
        let x = random_tensor(4, 5, 3, &mut rng);
        assert_eq!(conv2d_same(&x, &spec).unwrap(), x);
    }

    #[test]
    fn conv_all_ones_3x3_on_ones() {
        let mut spec = ConvSpec::zeros(3, 1, 1);
        for w in spec.weights.iter_mut() {
            *w = 1.0;
        }
        let x = RealTensor::from_vec(4, 4, 1, vec![1.0; 16]);
        let out = conv2d_same(&x, &spec).unwrap();
        assert_eq!(out.get(1, 1, 0), 9.0);
        assert_eq!(out.get(0, 0, 0), 4.0);
        assert_eq!(out.get(0, 1, 0), 6.0);
    }

    #[test]
    fn conv_bias_only() {
        let mut spec = ConvSpec::zeros(3, 2, 2);
        spec.bias = vec![0.5, -1.5];
        let mut rng = SplitRng::new(2);
        let x = random_tensor(3, 3, 2, &mut rng);
        let out = conv2d_same(&x, &spec).unwrap();
        for y in 0..3 {
            for xx in 0..3 {
                assert_eq!(out.get(y, xx, 0), 0.5);
                assert_eq!(out.get(y, xx, 1), -1.5);
            }
        }
    }

    #[test]
    fn conv_channel_mismatch() {
        let spec = ConvSpec::zeros(3, 4, 2);
        let x = RealTensor::zeros(2, 2, 3);
        assert!(matches!(
            conv2d_same(&x, &spec),
            Err(NetError::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn sigma_a_values() {
        assert_eq!(sigma_a(0.0), 0.0);
        assert!((sigma_a(3.0) - 0.452_574_136).abs() < 1e-6);
        for x in [-5.0, -1.3, 0.2, 2.7] {
            assert!((sigma_a(-x) + sigma_a(x)).abs() < 1e-15);
        }
    }

    #[test]
    fn attention_matches_scalar_oracle() {
        let mut rng = SplitRng::new(3);
        let h = random_tensor(2, 2, 1, &mut rng);
        let o = random_tensor(2, 2, 1, &mut rng);
        let out = attention_block_forward(&h, &o, true).unwrap();
        for i in 0..4 {
            let expect = (1.0 / (1.0 + (-h.data[i]).exp()) - 0.5) * (h.data[i] + o.data[i]);
            assert!((out.data[i] - expect).abs() < 1e-15);
        }
        let no_res = attention_block_forward(&h, &o, false).unwrap();
        for i in 0..4 {
            let expect = (1.0 / (1.0 + (-h.data[i]).exp()) - 0.5) * h.data[i];
            assert!((no_res.data[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn attention_zero_input_is_zero() {
        let h = RealTensor::zeros(3, 3, 2);
        let mut o = RealTensor::zeros(3, 3, 2);
        o.data.iter_mut().for_each(|v| *v = 7.0);
        let out = attention_block_forward(&h, &o, true).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pixel_shuffle_r1_is_identity() {
        let mut rng = SplitRng::new(4);
        let x = random_tensor(3, 4, 2, &mut rng);
        assert_eq!(pixel_shuffle(&x, 1, 2).unwrap(), x);
    }

    #[test]
    fn pixel_shuffle_single_pixel_matches_remap() {
        let r = 4;
        let c_out = 2;
        let x = RealTensor::from_vec(1, 1, 32, (0..32).map(|v| v as f64).collect());
        let out = pixel_shuffle(&x, r, c_out).unwrap();
        assert_eq!((out.height, out.width, out.channels), (4, 4, 2));
        // brute-force index remap oracle
        for dy in 0..r {
            for dx in 0..r {
                for co in 0..c_out {
                    assert_eq!(out.get(dy, dx, co), (co * 16 + dy * 4 + dx) as f64);
                }
            }
        }
    }

    #[test]
    fn pixel_shuffle_full_shape() {
        let x = RealTensor::zeros(108, 32, 32);
        let out = pixel_shuffle(&x, 4, 2).unwrap();
        assert_eq!((out.height, out.width, out.channels), (432, 128, 2));
    }

    #[test]
    fn pixel_shuffle_is_bijective() {
        let mut rng = SplitRng::new(5);
        let x = random_tensor(3, 5, 18, &mut rng);
        let out = pixel_shuffle(&x, 3, 2).unwrap();
        // invert the index map and recover the input exactly
        let mut back = RealTensor::zeros(3, 5, 18);
        for y in 0..out.height {
            for xx in 0..out.width {
                for co in 0..out.channels {
                    back.set(
                        y / 3,
                        xx / 3,
                        co * 9 + (y % 3) * 3 + (xx % 3),
                        out.get(y, xx, co),
                    );
                }
            }
        }
        assert_eq!(back, x);
    }
}
