//! Command implementations: each returns `Ok(())` or a `CliError` whose
//! variant determines the process exit code.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use swiftchannel::channel::{dataset_read, dataset_write, generate_sample, DatasetSample};
use swiftchannel::ls::{build_srs_cache, ls_estimate, LsMode};
use swiftchannel::net::{
    build_model, forward, fuse_rep_block, rep_block_forward, ConvSpec, LayerGraph, ModelKind,
    NodeOp, RepBlock,
};
use swiftchannel::quant::{
    calibrate, quantize_model, requantize_tracks_real, Calibration, QStudentModel,
};
use swiftchannel::rng::SplitRng;
use swiftchannel::stream::{
    conv_stage, direct_forward, estimate_cycles_graph, pe_count, pixel_shuffle_q,
    pixel_shuffle_stream, run_pipeline, stream_forward, window3d, EngineConfig, SigmaLut,
};
use swiftchannel::tensor::ComplexValue;
use swiftchannel::weights::{
    apply_float_layers, decode_layers, decode_quant_model, encode_layers, encode_quant_model,
    read_bytes, write_bytes, StoredLayer,
};
use swiftchannel::{ActQuant, QuantTensor, RealTensor};

use crate::config::{ModelKindCfg, RunConfig};
use crate::estimates::{estimate_file_name, read_estimate, write_estimate};
use crate::CliError;

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

/// Generates `sample_count` samples per SNR point; the sample index runs
/// globally so every sample draws an independent seeded stream.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let mut samples = Vec::new();
    let mut index = 0u64;
    for snr in cfg.snr_db.points() {
        let scenario = cfg.scenario_at(snr);
        for _ in 0..cfg.sample_count {
            samples.push(generate_sample(&scenario, index).map_err(runtime)?);
            index += 1;
        }
    }
    dataset_write(out, &samples).map_err(runtime)?;
    println!("wrote {} samples to {}", samples.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// init-model / fuse
// ---------------------------------------------------------------------------

fn random_conv(k: usize, f_in: usize, f_out: usize, rng: &mut SplitRng) -> ConvSpec {
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

/// Writes seeded float weights. With `rep`, the student block convolutions
/// are emitted in composite (skip / pre / mid / post) form for later fusion.
pub fn cmd_init_model(cfg: &RunConfig, out: &Path, rep: bool) -> Result<(), CliError> {
    let kind: ModelKind = cfg.model_kind.into();
    let g = build_model(kind, cfg.seed);
    let bytes = if !rep {
        swiftchannel::weights::encode_float_model(&g)
    } else {
        if cfg.model_kind != ModelKindCfg::Student {
            return Err(CliError::Config(
                "composite (rep) initialization applies to the student model".into(),
            ));
        }
        let mut rng = SplitRng::new(cfg.seed ^ 0x7265_7042); // distinct stream per purpose
        let mut layers: Vec<(String, StoredLayer)> = Vec::new();
        for node in &g.nodes {
            let (name, spec) = match (&node.name, &node.op) {
                (Some(n), NodeOp::Conv(c)) => (n.clone(), c),
                _ => continue,
            };
            if name.contains(".conv") {
                // Composite branch widths mirror the target conv's channels.
                let (fi, fo) = (spec.f_in, spec.f_out);
                let block = RepBlock {
                    skip: random_conv(1, fi, fo, &mut rng),
                    pre: random_conv(1, fi, fi, &mut rng),
                    mid: random_conv(3, fi, fo, &mut rng),
                    post: random_conv(1, fo, fo, &mut rng),
                };
                for (suffix, part) in [
                    (".skip", &block.skip),
                    (".pre", &block.pre),
                    (".mid", &block.mid),
                    (".post", &block.post),
                ] {
                    layers.push((format!("{name}{suffix}"), StoredLayer::Float(part.clone())));
                }
            } else {
                layers.push((name, StoredLayer::Float(spec.clone())));
            }
        }
        encode_layers(&layers)
    };
    write_bytes(out, &bytes).map_err(runtime)?;
    println!("wrote weights to {}", out.display());
    Ok(())
}

/// Collapses composite groups (`<name>.skip/.pre/.mid/.post`) into single
/// 3x3 convolutions; plain layers pass through unchanged.
pub fn cmd_fuse(input: &Path, out: &Path) -> Result<(), CliError> {
    let layers = decode_layers(&read_bytes(input).map_err(runtime)?).map_err(runtime)?;
    const PARTS: [&str; 4] = [".skip", ".pre", ".mid", ".post"];
    let group_of = |name: &str| -> Option<(String, usize)> {
        PARTS
            .iter()
            .position(|s| name.ends_with(s))
            .map(|i| (name[..name.len() - PARTS[i].len()].to_string(), i))
    };

    let mut fused: Vec<(String, StoredLayer)> = Vec::new();
    let mut pending: BTreeMap<String, [Option<ConvSpec>; 4]> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new(); // group emission order: first part seen
    for (name, layer) in &layers {
        let spec = match layer {
            StoredLayer::Float(s) => s,
            StoredLayer::Quant { .. } => {
                return Err(CliError::Runtime(format!(
                    "layer {name} is quantized; fuse expects float weights"
                )))
            }
        };
        match group_of(name) {
            None => fused.push((name.clone(), layer.clone())),
            Some((group, part)) => {
                let slot = pending.entry(group.clone()).or_insert_with(|| {
                    order.push(group.clone());
                    Default::default()
                });
                slot[part] = Some(spec.clone());
            }
        }
    }
    for group in order {
        let parts = pending.remove(&group).unwrap();
        let [skip, pre, mid, post] = parts;
        let (Some(skip), Some(pre), Some(mid), Some(post)) = (skip, pre, mid, post) else {
            return Err(CliError::Runtime(format!(
                "composite group {group} is missing a branch"
            )));
        };
        let block = RepBlock {
            skip,
            pre,
            mid,
            post,
        };
        let merged = fuse_rep_block(&block).map_err(runtime)?;
        fused.push((group, StoredLayer::Float(merged)));
    }
    write_bytes(out, &encode_layers(&fused)).map_err(runtime)?;
    println!("wrote fused weights to {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// calibrate / quantize
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ActQuantJson {
    scale: f32,
    zero_point: u8,
}

impl From<ActQuant> for ActQuantJson {
    fn from(q: ActQuant) -> ActQuantJson {
        ActQuantJson {
            scale: q.scale,
            zero_point: q.zero_point,
        }
    }
}

impl From<ActQuantJson> for ActQuant {
    fn from(j: ActQuantJson) -> ActQuant {
        ActQuant::new(j.scale, j.zero_point)
    }
}

#[derive(Serialize, Deserialize)]
struct CalibrationJson {
    input: ActQuantJson,
    node: Vec<ActQuantJson>,
}

fn load_float_graph(cfg: &RunConfig, weights: &Path) -> Result<LayerGraph, CliError> {
    let layers = decode_layers(&read_bytes(weights).map_err(runtime)?).map_err(runtime)?;
    let mut g = build_model(cfg.model_kind.into(), 0);
    apply_float_layers(&mut g, &layers).map_err(runtime)?;
    Ok(g)
}

/// Per-sample network input: the LS estimate of the stored observation.
fn ls_input(sample: &DatasetSample, mode: LsMode) -> Result<RealTensor, CliError> {
    let obs = sample.observation();
    let cache = build_srs_cache(&obs.srs, obs.n_k, obs.n_ue).map_err(runtime)?;
    Ok(ls_estimate(&obs, &cache, mode).map_err(runtime)?.tensor)
}

/// Observes activation ranges of the float model over the dataset's
/// fixed-point LS inputs (what the integer pipeline will actually see).
pub fn cmd_calibrate(
    cfg: &RunConfig,
    dataset: &Path,
    weights: &Path,
    out: &Path,
) -> Result<(), CliError> {
    let samples = dataset_read(dataset).map_err(runtime)?;
    let g = load_float_graph(cfg, weights)?;
    let inputs = samples
        .iter()
        .map(|s| ls_input(s, LsMode::Fixed))
        .collect::<Result<Vec<_>, _>>()?;
    let calib = calibrate(&g, &inputs).map_err(runtime)?;
    let json = CalibrationJson {
        input: calib.input.into(),
        node: calib.node.into_iter().map(Into::into).collect(),
    };
    let text = serde_json::to_string_pretty(&json).map_err(runtime)?;
    std::fs::write(out, text).map_err(runtime)?;
    println!("wrote calibration to {}", out.display());
    Ok(())
}

pub fn cmd_quantize(
    cfg: &RunConfig,
    weights: &Path,
    calibration: &Path,
    out: &Path,
) -> Result<(), CliError> {
    if cfg.model_kind != ModelKindCfg::Student {
        return Err(CliError::Config(
            "quantization targets the student model".into(),
        ));
    }
    let g = load_float_graph(cfg, weights)?;
    let text = std::fs::read_to_string(calibration).map_err(runtime)?;
    let json: CalibrationJson = serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", calibration.display())))?;
    let calib = Calibration {
        input: json.input.into(),
        node: json.node.into_iter().map(Into::into).collect(),
    };
    let model = quantize_model(&g, &calib).map_err(runtime)?;
    write_bytes(out, &encode_quant_model(&model)).map_err(runtime)?;
    println!("wrote quantized weights to {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// infer / eval
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Engine {
    Float,
    Direct,
    Stream,
}

fn load_quant_model(weights: &Path) -> Result<QStudentModel, CliError> {
    decode_quant_model(&read_bytes(weights).map_err(runtime)?).map_err(runtime)
}

pub fn cmd_infer(
    cfg: &RunConfig,
    engine: Engine,
    dataset: &Path,
    weights: &Path,
    out_dir: &Path,
) -> Result<(), CliError> {
    let samples = dataset_read(dataset).map_err(runtime)?;
    std::fs::create_dir_all(out_dir).map_err(runtime)?;
    let engine_cfg = cfg.engine();

    enum Loaded {
        Float(LayerGraph),
        Quant(QStudentModel),
    }
    let model = match engine {
        Engine::Float => Loaded::Float(load_float_graph(cfg, weights)?),
        Engine::Direct | Engine::Stream => Loaded::Quant(load_quant_model(weights)?),
    };

    for (i, sample) in samples.iter().enumerate() {
        let est = match &model {
            Loaded::Float(g) => {
                let input = ls_input(sample, LsMode::Float)?;
                let (out, _) = forward(g, &input).map_err(runtime)?;
                out
            }
            Loaded::Quant(m) => {
                let input = ls_input(sample, LsMode::Fixed)?;
                match engine {
                    Engine::Stream => run_pipeline(m, &input, &engine_cfg).map_err(runtime)?,
                    _ => {
                        let lut = SigmaLut::new();
                        let q_in =
                            swiftchannel::quant::quantize_tensor(&input, m.input_q);
                        direct_forward(m, &q_in, &lut).map_err(runtime)?.dequantize()
                    }
                }
            }
        };
        write_estimate(&out_dir.join(estimate_file_name(i)), &est)?;
    }
    println!("wrote {} estimates to {}", samples.len(), out_dir.display());
    Ok(())
}

/// Ground truth as a real tensor, `n_c x (n_bs * n_ue) x 2` with the antenna
/// index outer and the port inner — the layout the upsampled output uses.
fn truth_tensor(sample: &DatasetSample) -> RealTensor {
    let h = sample.truth();
    let mut t = RealTensor::zeros(h.n_c, h.n_bs * h.n_ue, 2);
    for k in 0..h.n_c {
        for b in 0..h.n_bs {
            for u in 0..h.n_ue {
                let v: ComplexValue = h.get(k, b, u);
                t.set(k, b * h.n_ue + u, 0, v.re);
                t.set(k, b * h.n_ue + u, 1, v.im);
            }
        }
    }
    t
}

pub fn cmd_eval(_cfg: &RunConfig, dataset: &Path, est_dir: &Path) -> Result<(), CliError> {
    let samples = dataset_read(dataset).map_err(runtime)?;
    // Group linear NMSE per SNR point, keyed by the stored f32 bits so equal
    // points collapse exactly.
    let mut groups: BTreeMap<u32, (f32, Vec<f64>)> = BTreeMap::new();
    for (i, sample) in samples.iter().enumerate() {
        let est = read_estimate(&est_dir.join(estimate_file_name(i)))?;
        let truth = truth_tensor(sample);
        if !est.same_shape(&truth) {
            return Err(CliError::Runtime(format!(
                "estimate {i} is {}x{}x{}, truth is {}x{}x{}",
                est.height, est.width, est.channels, truth.height, truth.width, truth.channels
            )));
        }
        let n = swiftchannel::net::nmse(&est, &truth).map_err(runtime)?;
        groups
            .entry(sample.snr_db.to_bits())
            .or_insert((sample.snr_db, Vec::new()))
            .1
            .push(n);
    }
    for (_, (snr, nmses)) in groups {
        let mean = nmses.iter().sum::<f64>() / nmses.len() as f64;
        let db = if mean == 0.0 {
            "inf".to_string()
        } else {
            format!("{:.6}", 10.0 * mean.log10())
        };
        let snr_str = if snr.is_infinite() {
            "inf".to_string()
        } else {
            format!("{snr}")
        };
        println!("snr_db={snr_str} nmse_db={db} samples={}", nmses.len());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// cycles
// ---------------------------------------------------------------------------

pub fn cmd_cycles(cfg: &RunConfig, json: bool) -> Result<(), CliError> {
    let g = build_model(cfg.model_kind.into(), cfg.seed);
    let scenario = cfg.scenario();
    let (h, w) = (scenario.n_k(), scenario.n_r() * scenario.n_ue);
    let report = estimate_cycles_graph(&g, h, w, &cfg.engine());
    if json {
        let blocks: Vec<serde_json::Value> = report
            .blocks
            .iter()
            .map(|b| serde_json::json!({ "name": b.name, "cycles": b.cycles }))
            .collect();
        let doc = serde_json::json!({
            "blocks": blocks,
            "critical_path": report.critical_path,
        });
        println!("{}", serde_json::to_string_pretty(&doc).map_err(runtime)?);
    } else {
        print!("{}", report.render_text());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// selftest
// ---------------------------------------------------------------------------

fn check(name: &str, ok: bool, failures: &mut usize) {
    if ok {
        println!("ok {name}");
    } else {
        println!("FAIL {name}");
        *failures += 1;
    }
}

fn random_real(h: usize, w: usize, c: usize, rng: &mut SplitRng) -> RealTensor {
    RealTensor::from_vec(
        h,
        w,
        c,
        (0..h * w * c).map(|_| rng.uniform(-1.0, 1.0)).collect(),
    )
}

fn small_quant_model(seed: u64) -> QStudentModel {
    let g = build_model(ModelKind::Student, seed);
    let mut rng = SplitRng::new(seed ^ 0x51);
    let inputs: Vec<RealTensor> = (0..3).map(|_| random_real(6, 8, 2, &mut rng)).collect();
    let calib = calibrate(&g, &inputs).expect("calibration");
    quantize_model(&g, &calib).expect("quantization")
}

/// Runs every oracle-equivalence check and reports one line per check.
pub fn cmd_selftest() -> Result<(), CliError> {
    let mut failures = 0usize;
    let engine = EngineConfig::default();
    let lut = SigmaLut::new();

    // Streaming engine vs direct integer oracle, bit-exact.
    let mut rng = SplitRng::new(0xC0FFEE);
    let mut stream_ok = true;
    for seed in 0..3u64 {
        let m = small_quant_model(seed * 101 + 7);
        let input = QuantTensor::new(
            6,
            8,
            2,
            (0..96).map(|_| (rng.next_u64() & 0xff) as u8).collect(),
            m.input_q,
        );
        let a = stream_forward(&m, &input, &engine, &lut).map_err(runtime)?;
        let b = direct_forward(&m, &input, &lut).map_err(runtime)?;
        stream_ok &= a == b;
    }
    check("stream-vs-direct-oracle", stream_ok, &mut failures);

    // Tiling invariance of the filter stage.
    let m = small_quant_model(33);
    let layer = &m.spabs[0].conv1;
    let x = QuantTensor::new(
        5,
        6,
        12,
        (0..360).map(|_| (rng.next_u64() & 0xff) as u8).collect(),
        layer.in_q,
    );
    let frames = window3d(&x, layer.k);
    let base = swiftchannel::stream::filter3d(&frames, 5, 6, layer, &engine).map_err(runtime)?;
    let mut tiling_ok = true;
    for (t_m, t_n) in [(1, 1), (2, 2), (layer.f_out, layer.f_in)] {
        let alt = EngineConfig {
            t_m,
            t_n,
            pipeline_depth: engine.pipeline_depth,
        };
        tiling_ok &=
            swiftchannel::stream::filter3d(&frames, 5, 6, layer, &alt).map_err(runtime)? == base;
    }
    check("tiling-invariance", tiling_ok, &mut failures);

    // Re-parameterization fusion.
    let mut fuse_ok = true;
    for _ in 0..5 {
        let block = RepBlock {
            skip: random_conv(1, 4, 4, &mut rng),
            pre: random_conv(1, 4, 6, &mut rng),
            mid: random_conv(3, 6, 5, &mut rng),
            post: random_conv(1, 5, 4, &mut rng),
        };
        let merged = fuse_rep_block(&block).map_err(runtime)?;
        let x = random_real(5, 7, 4, &mut rng);
        let a = rep_block_forward(&block, &x).map_err(runtime)?;
        let b = swiftchannel::net::conv2d_same(&x, &merged).map_err(runtime)?;
        fuse_ok &= a
            .data
            .iter()
            .zip(b.data.iter())
            .all(|(p, q)| (p - q).abs() <= 1e-10);
    }
    check("rep-fusion", fuse_ok, &mut failures);

    // Streaming pixel shuffle vs reference, full-size case.
    let big = QuantTensor::new(
        108,
        32,
        32,
        (0..108 * 32 * 32).map(|_| (rng.next_u64() & 0xff) as u8).collect(),
        ActQuant::new(1.0, 0),
    );
    let shuffle_ok = pixel_shuffle_stream(&big, 4, 2).map_err(runtime)?
        == pixel_shuffle_q(&big, 4, 2).map_err(runtime)?;
    check("pixel-shuffle-stream", shuffle_ok, &mut failures);

    // PE law at the selected tiles.
    check(
        "pe-law",
        pe_count(12, 8, 4, 4) == 6 && pe_count(8, 12, 4, 4) == 6,
        &mut failures,
    );

    // Requantization against the real-valued product.
    check("requantize-law", requantize_tracks_real(10_000, 0xAC), &mut failures);

    // Fixed-point LS against the float reference.
    let scenario = swiftchannel::channel::ScenarioConfig {
        seed: 77,
        ..Default::default()
    };
    let hchan = swiftchannel::channel::synthesize_channel(&scenario).map_err(runtime)?;
    let obs = swiftchannel::channel::observe_pilot(&hchan, &scenario).map_err(runtime)?;
    let cache = build_srs_cache(&obs.srs, obs.n_k, obs.n_ue).map_err(runtime)?;
    let f = ls_estimate(&obs, &cache, LsMode::Float).map_err(runtime)?;
    let q = ls_estimate(&obs, &cache, LsMode::Fixed).map_err(runtime)?;
    let tol = 1.0 / (1u64 << 20) as f64;
    let ls_ok = f
        .tensor
        .data
        .iter()
        .zip(q.tensor.data.iter())
        .all(|(a, b)| (a - b).abs() / a.abs().max(1.0) < tol);
    check("ls-fixed-vs-float", ls_ok, &mut failures);

    // Conv stage (window + filter) vs the naive oracle.
    let m2 = small_quant_model(5);
    let x2 = QuantTensor::new(
        4,
        9,
        2,
        (0..72).map(|_| (rng.next_u64() & 0xff) as u8).collect(),
        m2.head.in_q,
    );
    let conv_ok = conv_stage(&x2, &m2.head, &engine).map_err(runtime)?
        == swiftchannel::quant::qconv_direct_oracle(&x2, &m2.head).map_err(runtime)?;
    check("conv-stage-vs-oracle", conv_ok, &mut failures);

    if failures == 0 {
        println!("selftest: all checks passed");
        Ok(())
    } else {
        Err(CliError::Runtime(format!("{failures} selftest check(s) failed")))
    }
}
