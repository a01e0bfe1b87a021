//! Re-parameterization: collapsing a training-time composite block
//! (1x1 expand -> 3x3 -> 1x1 project, plus a parallel 1x1 skip) into a single
//! equivalent 3x3 convolution for inference.
//!
//! The composite applies the expand conv to the zero-padded input, so the 3x3
//! sees the expand bias in its padding ring; this is what makes the algebraic
//! fusion exact at the borders as well as in the interior.

use crate::tensor::RealTensor;

use super::ops::{conv2d_same, ConvSpec, NetError};

/// Training-time composite block. `pre`, `post`, `skip` are 1x1; `mid` is 3x3.
#[derive(Debug, Clone)]
pub struct RepBlock {
    pub skip: ConvSpec,
    pub pre: ConvSpec,
    pub mid: ConvSpec,
    pub post: ConvSpec,
}

impl RepBlock {
    pub fn validate(&self) -> Result<(), NetError> {
        let ok = self.skip.k == 1
            && self.pre.k == 1
            && self.post.k == 1
            && self.mid.k == 3
            && self.pre.f_in == self.skip.f_in
            && self.mid.f_in == self.pre.f_out
            && self.post.f_in == self.mid.f_out
            && self.post.f_out == self.skip.f_out;
        if ok {
            Ok(())
        } else {
            Err(NetError::ShapeMismatch(
                "rep block channel chain inconsistent".into(),
            ))
        }
    }
}

/// Runs the composite path: `skip(x) + post(mid(pre(pad(x))))`.
pub fn rep_block_forward(b: &RepBlock, x: &RealTensor) -> Result<RealTensor, NetError> {
    b.validate()?;
    if x.channels != b.pre.f_in {
        return Err(NetError::ChannelMismatch {
            input: x.channels,
            expected: b.pre.f_in,
        });
    }
    // Zero-pad first, then expand: the padding ring carries pre's bias into
    // the 3x3 window exactly like the fused kernel's bias term does.
    let padded = zero_pad_1(x);
    let expanded = conv2d_same(&padded, &b.pre)?;
    let mid_out = conv3_valid(&expanded, &b.mid)?;
    let projected = conv2d_same(&mid_out, &b.post)?;
    let skipped = conv2d_same(x, &b.skip)?;
    let mut out = projected;
    for (o, s) in out.data.iter_mut().zip(skipped.data.iter()) {
        *o += s;
    }
    Ok(out)
}

/// Folds the composite into one 3x3 conv with identical output for every
/// input.
pub fn fuse_rep_block(b: &RepBlock) -> Result<ConvSpec, NetError> {
    b.validate()?;
    let f_in = b.pre.f_in;
    let f_out = b.post.f_out;
    let d = b.pre.f_out;
    let e = b.mid.f_out;

    // mid o pre: contract over the inner channel.
    let mut w1 = ConvSpec::zeros(3, f_in, e);
    for eo in 0..e {
        let mut bias = b.mid.bias[eo];
        for di in 0..d {
            let mut mid_sum = 0.0;
            for ky in 0..3 {
                for kx in 0..3 {
                    mid_sum += b.mid.w(eo, di, ky, kx);
                    for i in 0..f_in {
                        *w1.w_mut(eo, i, ky, kx) +=
                            b.mid.w(eo, di, ky, kx) * b.pre.w(di, i, 0, 0);
                    }
                }
            }
            bias += mid_sum * b.pre.bias[di];
        }
        w1.bias[eo] = bias;
    }

    // post o (mid o pre): contract over the outer channel, then add the skip
    // at the center tap.
    let mut fused = ConvSpec::zeros(3, f_in, f_out);
    for o in 0..f_out {
        let mut bias = b.post.bias[o];
        for eo in 0..e {
            let p = b.post.w(o, eo, 0, 0);
            bias += p * w1.bias[eo];
            for i in 0..f_in {
                for ky in 0..3 {
                    for kx in 0..3 {
                        *fused.w_mut(o, i, ky, kx) += p * w1.w(eo, i, ky, kx);
                    }
                }
            }
        }
        for i in 0..f_in {
            *fused.w_mut(o, i, 1, 1) += b.skip.w(o, i, 0, 0);
        }
        fused.bias[o] = bias + b.skip.bias[o];
    }
    Ok(fused)
}

fn zero_pad_1(x: &RealTensor) -> RealTensor {
    let mut out = RealTensor::zeros(x.height + 2, x.width + 2, x.channels);
    for y in 0..x.height {
        for xx in 0..x.width {
            for c in 0..x.channels {
                out.set(y + 1, xx + 1, c, x.get(y, xx, c));
            }
        }
    }
    out
}

fn conv3_valid(x: &RealTensor, spec: &ConvSpec) -> Result<RealTensor, NetError> {
    if x.channels != spec.f_in {
        return Err(NetError::ChannelMismatch {
            input: x.channels,
            expected: spec.f_in,
        });
    }
    let mut out = RealTensor::zeros(x.height - 2, x.width - 2, spec.f_out);
    for y in 0..out.height {
        for xx in 0..out.width {
            for o in 0..spec.f_out {
                let mut acc = spec.bias[o];
                for ky in 0..3 {
                    for kx in 0..3 {
                        for i in 0..spec.f_in {
                            acc += x.get(y + ky, xx + kx, i) * spec.w(o, i, ky, kx);
                        }
                    }
                }
                out.set(y, xx, o, acc);
            }
        }
    }
    Ok(out)
}
