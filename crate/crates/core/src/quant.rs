//! Post-training quantization: activation calibration, per-channel symmetric
//! weight quantization, integer requantization, and a direct (non-streaming)
//! quantized convolution oracle.
//!
//! Rounding conventions, fixed for bit-exactness: quantization rounds
//! half-away-from-zero; the requantization shift rounds half-up. The
//! requantization multiplier is a u32 mantissa normalized into
//! `[2^30, 2^31)` with an accompanying right-shift count.

use thiserror::Error;

use crate::net::{forward_all, LayerGraph, NodeOp, Src};
use crate::tensor::{ActQuant, QuantTensor, RealTensor};

#[derive(Debug, Error)]
pub enum QuantError {
    #[error("empty calibration set")]
    EmptyCalibration,
    #[error("non-positive scale")]
    NonPositiveScale,
    #[error("quantization parameter mismatch: {0}")]
    ParamMismatch(String),
    #[error("model structure: {0}")]
    Structure(String),
    #[error(transparent)]
    Net(#[from] crate::net::NetError),
}

/// Per-output-channel weight quantization parameters. Zero points are carried
/// for the general affine form but stay 0 under the symmetric scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightQuant {
    pub scales: Vec<f32>,
    pub zero_points: Vec<i8>,
}

/// A fully quantized convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct QConvLayer {
    pub name: String,
    pub k: usize,
    pub f_in: usize,
    pub f_out: usize,
    /// INT8 weights in `(f_out, f_in, ky, kx)` order.
    pub q_weights: Vec<i8>,
    pub q_bias: Vec<i32>,
    pub in_q: ActQuant,
    pub w_q: WeightQuant,
    pub out_q: ActQuant,
    /// Per-channel `(mantissa, shift)` requantization parameters.
    pub requant: Vec<(u32, u32)>,
}

impl QConvLayer {
    #[inline]
    pub fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> i8 {
        self.q_weights[((o * self.f_in + i) * self.k + ky) * self.k + kx]
    }
}

/// One quantized student attention block: two convs plus the block's output
/// boundary (the attention result feeding the next layer).
#[derive(Debug, Clone, PartialEq)]
pub struct QSpab {
    pub conv1: QConvLayer,
    pub conv2: QConvLayer,
    pub out_q: ActQuant,
}

/// The quantized student pipeline in execution order.
#[derive(Debug, Clone, PartialEq)]
pub struct QStudentModel {
    pub input_q: ActQuant,
    pub head: QConvLayer,
    pub spabs: Vec<QSpab>,
    pub tail3: QConvLayer,
    pub tail1: QConvLayer,
}

impl QStudentModel {
    pub fn layers(&self) -> Vec<&QConvLayer> {
        let mut v = vec![&self.head];
        for s in &self.spabs {
            v.push(&s.conv1);
            v.push(&s.conv2);
        }
        v.push(&self.tail3);
        v.push(&self.tail1);
        v
    }

    /// Quant parameters of the final (pre-dequantization) output stream.
    pub fn output_q(&self) -> ActQuant {
        self.tail1.out_q
    }
}

/// Quantizes one real value: `clamp(round(x / scale) + zero_point, 0, 255)`.
#[inline]
pub fn quantize_scalar(x: f64, q: &ActQuant) -> u8 {
    let v = (x / q.scale as f64).round() + q.zero_point as f64;
    v.clamp(0.0, 255.0) as u8
}

pub fn quantize_tensor(x: &RealTensor, q: ActQuant) -> QuantTensor {
    QuantTensor {
        height: x.height,
        width: x.width,
        channels: x.channels,
        data: x.data.iter().map(|&v| quantize_scalar(v, &q)).collect(),
        params: q,
    }
}

fn act_quant_from_range(min: f64, max: f64) -> ActQuant {
    let span = max - min;
    let scale = if span > 0.0 {
        ((span / 255.0) as f32).max(1e-6)
    } else {
        1e-6
    };
    let zp = (-min / scale as f64).round().clamp(0.0, 255.0) as u8;
    ActQuant {
        scale,
        zero_point: zp,
    }
}

/// Min/max observed per activation boundary of a graph.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub input: ActQuant,
    /// Indexed by node; relu boundaries reuse their producer's parameters.
    pub node: Vec<ActQuant>,
}

/// Runs the float model over the calibration inputs and derives per-boundary
/// activation parameters from the observed ranges.
pub fn calibrate(g: &LayerGraph, calib_inputs: &[RealTensor]) -> Result<Calibration, QuantError> {
    if calib_inputs.is_empty() {
        return Err(QuantError::EmptyCalibration);
    }
    let n = g.nodes.len();
    let mut mins = vec![f64::INFINITY; n + 1];
    let mut maxs = vec![f64::NEG_INFINITY; n + 1];
    for x in calib_inputs {
        for &v in &x.data {
            mins[n] = mins[n].min(v);
            maxs[n] = maxs[n].max(v);
        }
        let outs = forward_all(g, x)?;
        for (i, t) in outs.iter().enumerate() {
            for &v in &t.data {
                mins[i] = mins[i].min(v);
                maxs[i] = maxs[i].max(v);
            }
        }
    }
    let mut node: Vec<ActQuant> = (0..n)
        .map(|i| act_quant_from_range(mins[i], maxs[i]))
        .collect();
    // Non-linear elementwise nodes are not independent quantization
    // boundaries; they carry their producer's parameters.
    for i in 0..n {
        if matches!(g.nodes[i].op, NodeOp::Relu) {
            if let Src::Node(src) = g.nodes[i].src {
                node[i] = node[src];
            }
        }
    }
    Ok(Calibration {
        input: act_quant_from_range(mins[n], maxs[n]),
        node,
    })
}

/// Normalizes `M = in_scale * w_scale / out_scale` into a u32 mantissa in
/// `[2^30, 2^31)` and a right-shift count.
pub fn derive_requant(
    in_scale: f64,
    w_scale: f64,
    out_scale: f64,
) -> Result<(u32, u32), QuantError> {
    if in_scale <= 0.0 || w_scale <= 0.0 || out_scale <= 0.0 {
        return Err(QuantError::NonPositiveScale);
    }
    let big_m = in_scale * w_scale / out_scale;
    if !(big_m.is_finite() && big_m > 0.0) {
        return Err(QuantError::NonPositiveScale);
    }
    let mut shift = 0u32;
    let mut m = big_m;
    while m < (1u64 << 30) as f64 {
        m *= 2.0;
        shift += 1;
    }
    while m >= (1u64 << 31) as f64 {
        m /= 2.0;
        shift = shift.checked_sub(1).ok_or(QuantError::NonPositiveScale)?;
    }
    let mut mantissa = (m + 0.5).floor() as u64;
    if mantissa == 1u64 << 31 {
        mantissa = 1 << 30;
        shift -= 1;
    }
    Ok((mantissa as u32, shift))
}

/// Integer-only requantization of a 32-bit accumulator back to UINT8:
/// `clamp(((acc * mantissa + 2^(shift-1)) >> shift) + zp, 0, 255)`.
#[inline]
pub fn requantize(acc: i32, rq: (u32, u32), zp_out: u8) -> u8 {
    let (mantissa, shift) = rq;
    let t = acc as i64 * mantissa as i64;
    let rounded = if shift == 0 {
        t
    } else {
        (t + (1i64 << (shift - 1))) >> shift
    };
    (rounded + zp_out as i64).clamp(0, 255) as u8
}

/// Property check used by self-tests and acceptance: over `n` seeded random
/// `(acc, M)` pairs with `|acc| <= 2^23`, the integer requantization lands
/// within one output step of the real-valued product `acc * M + zp`.
pub fn requantize_tracks_real(n: usize, seed: u64) -> bool {
    let mut rng = crate::rng::SplitRng::new(seed);
    for _ in 0..n {
        let acc = (rng.uniform(-1.0, 1.0) * (1 << 23) as f64) as i32;
        let m = rng.uniform(1e-6, 1.5);
        let Ok(rq) = derive_requant(m, 1.0, 1.0) else {
            return false;
        };
        let zp = (rng.next_u64() & 0xff) as u8;
        let got = requantize(acc, rq, zp) as f64;
        let want = (acc as f64 * m + zp as f64).round().clamp(0.0, 255.0);
        if (got - want).abs() > 1.0 {
            return false;
        }
    }
    true
}

fn quantize_conv(
    name: &str,
    spec: &crate::net::ConvSpec,
    in_q: ActQuant,
    out_q: ActQuant,
) -> Result<QConvLayer, QuantError> {
    let f_out = spec.f_out;
    let per_ch = spec.f_in * spec.k * spec.k;
    let mut scales = Vec::with_capacity(f_out);
    let mut q_weights = vec![0i8; spec.weights.len()];
    let mut q_bias = Vec::with_capacity(f_out);
    let mut requant = Vec::with_capacity(f_out);
    for o in 0..f_out {
        let chunk = &spec.weights[o * per_ch..(o + 1) * per_ch];
        let max_abs = chunk.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        let scale = if max_abs > 0.0 {
            ((max_abs / 127.0) as f32).max(1e-6)
        } else {
            1e-6
        };
        scales.push(scale);
        for (j, &w) in chunk.iter().enumerate() {
            let q = (w / scale as f64).round().clamp(-127.0, 127.0) as i8;
            q_weights[o * per_ch + j] = q;
        }
        q_bias.push(
            (spec.bias[o] / (in_q.scale as f64 * scale as f64))
                .round()
                .clamp(i32::MIN as f64, i32::MAX as f64) as i32,
        );
        requant.push(derive_requant(
            in_q.scale as f64,
            scale as f64,
            out_q.scale as f64,
        )?);
    }
    Ok(QConvLayer {
        name: name.to_string(),
        k: spec.k,
        f_in: spec.f_in,
        f_out,
        q_weights,
        q_bias,
        in_q,
        w_q: WeightQuant {
            scales,
            zero_points: vec![0; f_out],
        },
        out_q,
        requant,
    })
}

/// Quantizes a calibrated student graph into the integer pipeline model.
pub fn quantize_model(g: &LayerGraph, calib: &Calibration) -> Result<QStudentModel, QuantError> {
    if calib.node.len() != g.nodes.len() {
        return Err(QuantError::Structure(
            "calibration does not match graph".into(),
        ));
    }
    // Boundary feeding a node: its source's ActQuant (graph input for Input).
    let boundary = |src: Src| -> ActQuant {
        match src {
            Src::Input => calib.input,
            Src::Node(i) => calib.node[i],
        }
    };
    let mut convs: Vec<QConvLayer> = Vec::new();
    let mut att_out: Vec<ActQuant> = Vec::new();
    for (i, node) in g.nodes.iter().enumerate() {
        match &node.op {
            NodeOp::Conv(spec) => {
                let name = node.name.clone().unwrap_or_default();
                convs.push(quantize_conv(
                    &name,
                    spec,
                    boundary(node.src),
                    calib.node[i],
                )?);
            }
            NodeOp::Attention { .. } => att_out.push(calib.node[i]),
            _ => {}
        }
    }
    let n_spabs = att_out.len();
    if convs.len() != 2 * n_spabs + 3 {
        return Err(QuantError::Structure(format!(
            "expected a student layout, found {} convs and {} attention blocks",
            convs.len(),
            n_spabs
        )));
    }
    let mut it = convs.into_iter();
    let head = it.next().unwrap();
    let mut spabs = Vec::with_capacity(n_spabs);
    for out_q in att_out {
        let conv1 = it.next().unwrap();
        let conv2 = it.next().unwrap();
        spabs.push(QSpab {
            conv1,
            conv2,
            out_q,
        });
    }
    let tail3 = it.next().unwrap();
    let tail1 = it.next().unwrap();
    Ok(QStudentModel {
        input_q: calib.input,
        head,
        spabs,
        tail3,
        tail1,
    })
}

/// Naive nested-loop integer convolution with zero padding realized as
/// `x_s = 0` outside bounds. The bit-exact reference for the streaming
/// engine's Filter3D.
pub fn qconv_direct_oracle(
    x: &QuantTensor,
    layer: &QConvLayer,
) -> Result<QuantTensor, QuantError> {
    if x.params != layer.in_q {
        return Err(QuantError::ParamMismatch(format!(
            "input carries {:?}, layer expects {:?}",
            x.params, layer.in_q
        )));
    }
    if x.channels != layer.f_in {
        return Err(QuantError::ParamMismatch(format!(
            "input has {} channels, layer expects {}",
            x.channels, layer.f_in
        )));
    }
    let pad = layer.k / 2;
    let zp_in = layer.in_q.zero_point as i32;
    let mut data = Vec::with_capacity(x.height * x.width * layer.f_out);
    for y in 0..x.height {
        for xx in 0..x.width {
            for o in 0..layer.f_out {
                let mut acc = layer.q_bias[o];
                for ky in 0..layer.k {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= x.height as isize {
                        continue;
                    }
                    for kx in 0..layer.k {
                        let sx = xx as isize + kx as isize - pad as isize;
                        if sx < 0 || sx >= x.width as isize {
                            continue;
                        }
                        for i in 0..layer.f_in {
                            let xs = x.get(sy as usize, sx as usize, i) as i32 - zp_in;
                            let ws = layer.w(o, i, ky, kx) as i32;
                            acc += xs * ws;
                        }
                    }
                }
                data.push(requantize(acc, layer.requant[o], layer.out_q.zero_point));
            }
        }
    }
    Ok(QuantTensor {
        height: x.height,
        width: x.width,
        channels: layer.f_out,
        data,
        params: layer.out_q,
    })
}
