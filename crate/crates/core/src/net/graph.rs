//! Model graphs for the teacher and student networks.
//!
//! A graph is an ordered node list; each node consumes the output of one
//! earlier node (or the graph input). Attention nodes additionally reference
//! a bypass source, concat nodes a list of earlier outputs. Tap annotations
//! mark the attention-block outputs used for feature-alignment losses.

use crate::rng::SplitRng;
use crate::tensor::RealTensor;

use super::ops::{
    attention_block_forward, conv2d_same, pixel_shuffle, relu, ConvSpec, NetError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Src {
    Input,
    Node(usize),
}

#[derive(Debug, Clone)]
pub enum NodeOp {
    Conv(ConvSpec),
    Relu,
    /// `sigma_a(h) * (h + bypass)`; `h` is this node's primary source.
    Attention { bypass: Src, residual: bool },
    /// Channel concatenation of earlier node outputs, in listed order.
    Concat(Vec<usize>),
    PixelShuffle { r: usize, c_out: usize },
}

#[derive(Debug, Clone)]
pub struct Node {
    pub name: Option<String>,
    pub op: NodeOp,
    pub src: Src,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Teacher,
    Student,
}

#[derive(Debug, Clone)]
pub struct LayerGraph {
    pub kind: ModelKind,
    pub nodes: Vec<Node>,
    /// Attention-block outputs, in block order.
    pub taps: Vec<usize>,
}

impl LayerGraph {
    pub fn param_count(&self) -> usize {
        self.convs().map(|(_, c)| c.param_count()).sum()
    }

    /// Total multiply-accumulates for one forward pass at `h x w` input.
    /// All convolutions run at input resolution; the pixel shuffle and the
    /// elementwise nodes contribute none.
    pub fn mac_count(&self, h: usize, w: usize) -> usize {
        self.convs().map(|(_, c)| c.macs_per_pixel() * h * w).sum()
    }

    pub fn convs(&self) -> impl Iterator<Item = (&str, &ConvSpec)> {
        self.nodes.iter().filter_map(|n| match &n.op {
            NodeOp::Conv(c) => Some((n.name.as_deref().unwrap_or(""), c)),
            _ => None,
        })
    }

    pub fn conv_mut(&mut self, name: &str) -> Option<&mut ConvSpec> {
        self.nodes.iter_mut().find_map(|n| match &mut n.op {
            NodeOp::Conv(c) if n.name.as_deref() == Some(name) => Some(c),
            _ => None,
        })
    }
}

fn init_conv(k: usize, f_in: usize, f_out: usize, rng: &mut SplitRng) -> ConvSpec {
    let bound = 1.0 / ((f_in * k * k) as f64).sqrt();
    let mut spec = ConvSpec::zeros(k, f_in, f_out);
    for w in spec.weights.iter_mut() {
        *w = rng.uniform(-bound, bound);
    }
    for b in spec.bias.iter_mut() {
        *b = rng.uniform(-bound, bound);
    }
    spec
}

/// Builds the teacher or student graph with seeded uniform weight init.
pub fn build_model(kind: ModelKind, rng_seed: u64) -> LayerGraph {
    let mut rng = SplitRng::new(rng_seed);
    let mut nodes: Vec<Node> = Vec::new();
    let mut taps = Vec::new();

    let push = |nodes: &mut Vec<Node>, name: Option<String>, op: NodeOp, src: Src| -> usize {
        nodes.push(Node { name, op, src });
        nodes.len() - 1
    };

    match kind {
        ModelKind::Teacher => {
            let head = push(
                &mut nodes,
                Some("head".into()),
                NodeOp::Conv(init_conv(3, 2, 24, &mut rng)),
                Src::Input,
            );
            let mut block_in = head;
            let mut pab_outs = Vec::new();
            for i in 1..=6 {
                let c1 = push(
                    &mut nodes,
                    Some(format!("pab{i}.conv1")),
                    NodeOp::Conv(init_conv(3, 24, 24, &mut rng)),
                    Src::Node(block_in),
                );
                let r1 = push(&mut nodes, None, NodeOp::Relu, Src::Node(c1));
                let c2 = push(
                    &mut nodes,
                    Some(format!("pab{i}.conv2")),
                    NodeOp::Conv(init_conv(3, 24, 24, &mut rng)),
                    Src::Node(r1),
                );
                let r2 = push(&mut nodes, None, NodeOp::Relu, Src::Node(c2));
                let c3 = push(
                    &mut nodes,
                    Some(format!("pab{i}.conv3")),
                    NodeOp::Conv(init_conv(3, 24, 24, &mut rng)),
                    Src::Node(r2),
                );
                let att = push(
                    &mut nodes,
                    None,
                    NodeOp::Attention {
                        bypass: Src::Node(block_in),
                        residual: true,
                    },
                    Src::Node(c3),
                );
                taps.push(att);
                pab_outs.push(att);
                block_in = att;
            }
            // Concat of the initial features with PABs 2, 4, 6 -> 96 channels.
            let cat = push(
                &mut nodes,
                None,
                NodeOp::Concat(vec![head, pab_outs[1], pab_outs[3], pab_outs[5]]),
                Src::Node(block_in),
            );
            let reduce = push(
                &mut nodes,
                Some("reduce".into()),
                NodeOp::Conv(init_conv(3, 96, 24, &mut rng)),
                Src::Node(cat),
            );
            let up = push(
                &mut nodes,
                Some("up".into()),
                NodeOp::Conv(init_conv(3, 24, 32, &mut rng)),
                Src::Node(reduce),
            );
            push(
                &mut nodes,
                None,
                NodeOp::PixelShuffle { r: 4, c_out: 2 },
                Src::Node(up),
            );
        }
        ModelKind::Student => {
            let head = push(
                &mut nodes,
                Some("head".into()),
                NodeOp::Conv(init_conv(3, 2, 12, &mut rng)),
                Src::Input,
            );
            let mut block_in = head;
            for i in 1..=4 {
                let c1 = push(
                    &mut nodes,
                    Some(format!("spab{i}.conv1")),
                    NodeOp::Conv(init_conv(3, 12, 8, &mut rng)),
                    Src::Node(block_in),
                );
                let r1 = push(&mut nodes, None, NodeOp::Relu, Src::Node(c1));
                let c2 = push(
                    &mut nodes,
                    Some(format!("spab{i}.conv2")),
                    NodeOp::Conv(init_conv(3, 8, 12, &mut rng)),
                    Src::Node(r1),
                );
                let att = push(
                    &mut nodes,
                    None,
                    NodeOp::Attention {
                        bypass: Src::Node(block_in),
                        residual: true,
                    },
                    Src::Node(c2),
                );
                taps.push(att);
                block_in = att;
            }
            let tail3 = push(
                &mut nodes,
                Some("tail3".into()),
                NodeOp::Conv(init_conv(3, 12, 4, &mut rng)),
                Src::Node(block_in),
            );
            let tail1 = push(
                &mut nodes,
                Some("tail1".into()),
                NodeOp::Conv(init_conv(1, 4, 32, &mut rng)),
                Src::Node(tail3),
            );
            push(
                &mut nodes,
                None,
                NodeOp::PixelShuffle { r: 4, c_out: 2 },
                Src::Node(tail1),
            );
        }
    }
    LayerGraph { kind, nodes, taps }
}

/// Runs every node and returns all intermediate outputs, in node order.
pub fn forward_all(g: &LayerGraph, x: &RealTensor) -> Result<Vec<RealTensor>, NetError> {
    let mut outs: Vec<RealTensor> = Vec::with_capacity(g.nodes.len());
    let fetch = |outs: &Vec<RealTensor>, src: Src, x: &RealTensor| -> RealTensor {
        match src {
            Src::Input => x.clone(),
            Src::Node(i) => outs[i].clone(),
        }
    };
    for node in &g.nodes {
        let input = fetch(&outs, node.src, x);
        let out = match &node.op {
            NodeOp::Conv(spec) => conv2d_same(&input, spec)?,
            NodeOp::Relu => relu(&input),
            NodeOp::Attention { bypass, residual } => {
                let o_prev = fetch(&outs, *bypass, x);
                attention_block_forward(&input, &o_prev, *residual)?
            }
            NodeOp::Concat(srcs) => {
                let parts: Vec<&RealTensor> = srcs.iter().map(|&i| &outs[i]).collect();
                concat_channels(&parts)?
            }
            NodeOp::PixelShuffle { r, c_out } => pixel_shuffle(&input, *r, *c_out)?,
        };
        outs.push(out);
    }
    Ok(outs)
}

/// Returns the final output plus the tap-point feature maps.
pub fn forward(g: &LayerGraph, x: &RealTensor) -> Result<(RealTensor, Vec<RealTensor>), NetError> {
    let outs = forward_all(g, x)?;
    let taps = g.taps.iter().map(|&i| outs[i].clone()).collect();
    Ok((outs.last().expect("non-empty graph").clone(), taps))
}

fn concat_channels(parts: &[&RealTensor]) -> Result<RealTensor, NetError> {
    let (h, w) = (parts[0].height, parts[0].width);
    if parts.iter().any(|p| p.height != h || p.width != w) {
        return Err(NetError::ShapeMismatch(
            "concat inputs differ spatially".into(),
        ));
    }
    let c_total: usize = parts.iter().map(|p| p.channels).sum();
    let mut out = RealTensor::zeros(h, w, c_total);
    for y in 0..h {
        for x in 0..w {
            let mut c0 = 0;
            for p in parts {
                for c in 0..p.channels {
                    out.set(y, x, c0 + c, p.get(y, x, c));
                }
                c0 += p.channels;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitRng;

    #[test]
    fn student_parameter_count() {
        let g = build_model(ModelKind::Student, 0);
        assert_eq!(g.param_count(), 7816);
    }

    #[test]
    fn teacher_parameter_count() {
        let g = build_model(ModelKind::Teacher, 0);
        assert_eq!(g.param_count(), 121_904);
    }

    #[test]
    fn mac_counts_at_full_resolution() {
        let s = build_model(ModelKind::Student, 0);
        assert_eq!(s.mac_count(108, 32), 26_569_728);
        let t = build_model(ModelKind::Teacher, 0);
        assert_eq!(t.mac_count(108, 32), 419_530_752);
    }

    #[test]
    fn zero_weights_zero_output() {
        let mut g = build_model(ModelKind::Student, 0);
        for node in g.nodes.iter_mut() {
            if let NodeOp::Conv(c) = &mut node.op {
                c.weights.iter_mut().for_each(|w| *w = 0.0);
                c.bias.iter_mut().for_each(|b| *b = 0.0);
            }
        }
        let x = RealTensor::zeros(4, 4, 2);
        let (out, _) = forward(&g, &x).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn student_output_shape() {
        let g = build_model(ModelKind::Student, 7);
        let mut rng = SplitRng::new(1);
        let x = RealTensor::from_vec(4, 4, 2, (0..32).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let (out, taps) = forward(&g, &x).unwrap();
        assert_eq!((out.height, out.width, out.channels), (16, 16, 2));
        assert_eq!(taps.len(), 4);
        assert_eq!(taps[0].channels, 12);
    }

    #[test]
    fn teacher_forward_shapes() {
        let g = build_model(ModelKind::Teacher, 7);
        let x = RealTensor::zeros(4, 4, 2);
        let (out, taps) = forward(&g, &x).unwrap();
        assert_eq!((out.height, out.width, out.channels), (16, 16, 2));
        assert_eq!(taps.len(), 6);
        assert_eq!(taps[0].channels, 24);
    }

    /// Composes the individual operation oracles node by node and checks the
    /// graph executor agrees everywhere.
    #[test]
    fn forward_matches_node_by_node_composition() {
        use super::super::ops::{attention_block_forward, conv2d_same, relu};
        let g = build_model(ModelKind::Student, 13);
        let mut rng = SplitRng::new(99);
        let x = RealTensor::from_vec(
            5,
            6,
            2,
            (0..60).map(|_| rng.uniform(-1.5, 1.5)).collect(),
        );
        let outs = forward_all(&g, &x).unwrap();

        // Manual re-execution following the node list.
        let mut manual: Vec<RealTensor> = Vec::new();
        for node in &g.nodes {
            let input = match node.src {
                Src::Input => x.clone(),
                Src::Node(i) => manual[i].clone(),
            };
            let out = match &node.op {
                NodeOp::Conv(spec) => conv2d_same(&input, spec).unwrap(),
                NodeOp::Relu => relu(&input),
                NodeOp::Attention { bypass, residual } => {
                    let o_prev = match bypass {
                        Src::Input => x.clone(),
                        Src::Node(i) => manual[*i].clone(),
                    };
                    attention_block_forward(&input, &o_prev, *residual).unwrap()
                }
                NodeOp::Concat(srcs) => {
                    let parts: Vec<&RealTensor> = srcs.iter().map(|&i| &manual[i]).collect();
                    concat_channels(&parts).unwrap()
                }
                NodeOp::PixelShuffle { r, c_out } => {
                    super::super::ops::pixel_shuffle(&input, *r, *c_out).unwrap()
                }
            };
            manual.push(out);
        }
        for (a, b) in outs.iter().zip(manual.iter()) {
            assert_eq!(a, b);
        }
    }
}
