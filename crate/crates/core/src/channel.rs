//! Synthetic channel and pilot generation, plus the dataset file format.
//!
//! The channel model is a simplified clustered multipath model over a uniform
//! linear array: a handful of paths with complex Gaussian gains under an
//! exponentially decaying power-delay profile, random delays inside the
//! unambiguous comb window, and random arrival angles. It stands in for the
//! CDL profiles of a full 5G toolbox while still producing frequency-selective,
//! spatially correlated structure.

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::rng::SplitRng;
use crate::tensor::ComplexValue;

/// System geometry and generation knobs. Defaults match a 28 GHz, 64-antenna,
/// 2-port uplink with 432 subcarriers and 4x comb sampling in both domains.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub carrier_hz: f64,
    pub n_bs: usize,
    pub n_ue: usize,
    pub n_c: usize,
    pub subcarrier_spacing_hz: f64,
    pub spatial_scale: usize,
    pub freq_scale: usize,
    pub snr_db: f64,
    pub velocity_kmh: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            carrier_hz: 28e9,
            n_bs: 64,
            n_ue: 2,
            n_c: 432,
            subcarrier_spacing_hz: 120e3,
            spatial_scale: 4,
            freq_scale: 4,
            snr_db: 20.0,
            velocity_kmh: 5.0,
            n_paths: 8,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn n_r(&self) -> usize {
        self.n_bs / self.spatial_scale
    }

    pub fn n_k(&self) -> usize {
        self.n_c / self.freq_scale
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.n_bs % self.spatial_scale != 0 {
            return Err(ChannelError::Geometry(format!(
                "n_bs = {} not divisible by spatial_scale = {}",
                self.n_bs, self.spatial_scale
            )));
        }
        if self.n_c % self.freq_scale != 0 {
            return Err(ChannelError::Geometry(format!(
                "n_c = {} not divisible by freq_scale = {}",
                self.n_c, self.freq_scale
            )));
        }
        if self.n_paths == 0 {
            return Err(ChannelError::Geometry("n_paths must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("dataset i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic (not a dataset file)")]
    BadMagic,
    #[error("version mismatch: found {0}")]
    VersionMismatch(u16),
    #[error("truncated payload")]
    Truncated,
    #[error("empty sample list")]
    EmptySamples,
}

/// Full-resolution complex channel grid, shape `n_c x n_bs x n_ue`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub n_c: usize,
    pub n_bs: usize,
    pub n_ue: usize,
    pub h_full: Vec<ComplexValue>,
}

impl ChannelRealization {
    #[inline]
    pub fn get(&self, k: usize, b: usize, u: usize) -> ComplexValue {
        self.h_full[(k * self.n_bs + b) * self.n_ue + u]
    }
}

/// Uniform comb masks over antennas and subcarriers.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMasks {
    pub antenna_idx: Vec<usize>,
    pub subcarrier_idx: Vec<usize>,
}

impl SamplingMasks {
    pub fn combs(cfg: &ScenarioConfig) -> SamplingMasks {
        SamplingMasks {
            antenna_idx: (0..cfg.n_r()).map(|r| r * cfg.spatial_scale).collect(),
            subcarrier_idx: (0..cfg.n_k()).map(|k| k * cfg.freq_scale).collect(),
        }
    }
}

/// Received pilots `y` (n_k x n_r x n_ue), the transmitted SRS entries
/// (n_k x n_ue), and the comb masks that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotObservation {
    pub n_k: usize,
    pub n_r: usize,
    pub n_ue: usize,
    pub y: Vec<ComplexValue>,
    pub srs: Vec<ComplexValue>,
    pub masks: SamplingMasks,
}

impl PilotObservation {
    #[inline]
    pub fn y_at(&self, k: usize, r: usize, u: usize) -> ComplexValue {
        self.y[(k * self.n_r + r) * self.n_ue + u]
    }

    #[inline]
    pub fn srs_at(&self, k: usize, u: usize) -> ComplexValue {
        self.srs[k * self.n_ue + u]
    }
}

/// One multipath component shared by all ports; gains are per port.
#[derive(Debug, Clone)]
pub struct PathSet {
    /// `gains[p * n_ue + u]`
    pub gains: Vec<ComplexValue>,
    pub delays_s: Vec<f64>,
    pub sin_angles: Vec<f64>,
}

/// Evaluates the multipath sum for an explicit path set:
/// `H[k][b][u] = sum_p g_{p,u} * exp(-j 2π f_k τ_p) * exp(j π b sinθ_p)`.
pub fn channel_from_paths(cfg: &ScenarioConfig, paths: &PathSet) -> ChannelRealization {
    let n_paths = paths.delays_s.len();
    let mut h_full = vec![ComplexValue::default(); cfg.n_c * cfg.n_bs * cfg.n_ue];
    for k in 0..cfg.n_c {
        let f_k = k as f64 * cfg.subcarrier_spacing_hz;
        for p in 0..n_paths {
            let phase_f = -2.0 * std::f64::consts::PI * f_k * paths.delays_s[p];
            let freq = ComplexValue::new(phase_f.cos(), phase_f.sin());
            for b in 0..cfg.n_bs {
                let phase_s = std::f64::consts::PI * b as f64 * paths.sin_angles[p];
                let steer = ComplexValue::new(phase_s.cos(), phase_s.sin());
                let geom = freq.mul(steer);
                for u in 0..cfg.n_ue {
                    let idx = (k * cfg.n_bs + b) * cfg.n_ue + u;
                    h_full[idx] = h_full[idx].add(paths.gains[p * cfg.n_ue + u].mul(geom));
                }
            }
        }
    }
    ChannelRealization {
        n_c: cfg.n_c,
        n_bs: cfg.n_bs,
        n_ue: cfg.n_ue,
        h_full,
    }
}

/// Draws a random path set and evaluates it. Deterministic for a fixed seed.
pub fn synthesize_channel(cfg: &ScenarioConfig) -> Result<ChannelRealization, ChannelError> {
    cfg.validate()?;
    let mut rng = SplitRng::new(cfg.seed);
    let paths = draw_paths(cfg, &mut rng);
    Ok(channel_from_paths(cfg, &paths))
}

fn draw_paths(cfg: &ScenarioConfig, rng: &mut SplitRng) -> PathSet {
    let n = cfg.n_paths;
    // Exponential power-delay profile, normalized to unit total power per port.
    let decay = (n as f64 / 3.0).max(1.0);
    let powers: Vec<f64> = (0..n).map(|p| (-(p as f64) / decay).exp()).collect();
    let total: f64 = powers.iter().sum();

    // Delays stay inside the window the subcarrier comb can resolve without
    // aliasing: sample spacing is freq_scale * scs, half window = 1/(2*spacing).
    let tau_max = 1.0 / (2.0 * cfg.subcarrier_spacing_hz * cfg.freq_scale as f64);
    // Velocity perturbs each path phase for the single SRS snapshot.
    let doppler_rad = 2.0 * std::f64::consts::PI * (cfg.velocity_kmh / 100.0);

    let mut gains = Vec::with_capacity(n * cfg.n_ue);
    let mut delays = Vec::with_capacity(n);
    let mut sines = Vec::with_capacity(n);
    for p in 0..n {
        delays.push(rng.uniform(0.0, tau_max));
        sines.push(rng.uniform(-1.0, 1.0));
        let amp = (powers[p] / total / 2.0).sqrt();
        for _ in 0..cfg.n_ue {
            let g = ComplexValue::new(amp * rng.gaussian(), amp * rng.gaussian());
            let phi = doppler_rad * rng.uniform(-1.0, 1.0);
            gains.push(g.mul(ComplexValue::new(phi.cos(), phi.sin())));
        }
    }
    PathSet {
        gains,
        delays_s: delays,
        sin_angles: sines,
    }
}

/// Samples the channel at the comb positions and applies pilots plus AWGN.
///
/// With `cfg.snr_db` infinite the noise term is skipped entirely, so a
/// unit-pilot observation equals the sampled channel exactly.
pub fn observe_pilot(
    h: &ChannelRealization,
    cfg: &ScenarioConfig,
) -> Result<PilotObservation, ChannelError> {
    cfg.validate()?;
    if h.n_c != cfg.n_c || h.n_bs != cfg.n_bs || h.n_ue != cfg.n_ue {
        return Err(ChannelError::Geometry(
            "channel shape inconsistent with config".into(),
        ));
    }
    let masks = SamplingMasks::combs(cfg);
    let (n_k, n_r, n_ue) = (cfg.n_k(), cfg.n_r(), cfg.n_ue);

    // Pilot stream is drawn from a sub-seed so channel and pilots decorrelate.
    let mut rng = SplitRng::new(cfg.seed.wrapping_add(0x5157_5253));
    let mut srs = Vec::with_capacity(n_k * n_ue);
    for _ in 0..n_k * n_ue {
        let (re, im) = rng.qpsk();
        srs.push(ComplexValue::new(re, im));
    }

    // Noiseless received pilots first, to measure signal power.
    let mut y = vec![ComplexValue::default(); n_k * n_r * n_ue];
    let mut p_sig = 0.0;
    for k in 0..n_k {
        for r in 0..n_r {
            for u in 0..n_ue {
                let hv = h.get(masks.subcarrier_idx[k], masks.antenna_idx[r], u);
                let v = hv.mul(srs[k * n_ue + u]);
                p_sig += v.norm_sq();
                y[(k * n_r + r) * n_ue + u] = v;
            }
        }
    }
    p_sig /= (n_k * n_r * n_ue) as f64;

    if cfg.snr_db.is_finite() {
        let sigma_sq = p_sig / 10f64.powf(cfg.snr_db / 10.0);
        let s = (sigma_sq / 2.0).sqrt();
        for v in y.iter_mut() {
            *v = v.add(ComplexValue::new(s * rng.gaussian(), s * rng.gaussian()));
        }
    }

    Ok(PilotObservation {
        n_k,
        n_r,
        n_ue,
        y,
        srs,
        masks,
    })
}

// ---------------------------------------------------------------------------
// Dataset file format ("SWDS")
// ---------------------------------------------------------------------------

pub const DATASET_MAGIC: &[u8; 4] = b"SWDS";
pub const DATASET_VERSION: u16 = 1;

/// One stored sample. Grids are kept as f32 pairs so that write/read
/// round-trips are bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    pub n_c: u16,
    pub n_bs: u16,
    pub n_ue: u16,
    pub n_k: u16,
    pub n_r: u16,
    pub snr_db: f32,
    pub seed: u64,
    /// re/im interleaved, flat order (k, b, u)
    pub h_full: Vec<f32>,
    /// re/im interleaved, flat order (k, r, u)
    pub y: Vec<f32>,
    /// re/im interleaved, flat order (k, u)
    pub srs: Vec<f32>,
}

impl DatasetSample {
    pub fn from_realization(
        cfg: &ScenarioConfig,
        h: &ChannelRealization,
        obs: &PilotObservation,
    ) -> DatasetSample {
        let pack = |v: &[ComplexValue]| -> Vec<f32> {
            v.iter()
                .flat_map(|c| [c.re as f32, c.im as f32])
                .collect()
        };
        DatasetSample {
            n_c: cfg.n_c as u16,
            n_bs: cfg.n_bs as u16,
            n_ue: cfg.n_ue as u16,
            n_k: cfg.n_k() as u16,
            n_r: cfg.n_r() as u16,
            snr_db: cfg.snr_db as f32,
            seed: cfg.seed,
            h_full: pack(&h.h_full),
            y: pack(&obs.y),
            srs: pack(&obs.srs),
        }
    }

    /// Unpacks the stored observation back into complex grids.
    pub fn observation(&self) -> PilotObservation {
        let unpack = |v: &[f32]| -> Vec<ComplexValue> {
            v.chunks_exact(2)
                .map(|p| ComplexValue::new(p[0] as f64, p[1] as f64))
                .collect()
        };
        let cfg = self.scenario_geometry();
        PilotObservation {
            n_k: self.n_k as usize,
            n_r: self.n_r as usize,
            n_ue: self.n_ue as usize,
            y: unpack(&self.y),
            srs: unpack(&self.srs),
            masks: SamplingMasks::combs(&cfg),
        }
    }

    pub fn truth(&self) -> ChannelRealization {
        ChannelRealization {
            n_c: self.n_c as usize,
            n_bs: self.n_bs as usize,
            n_ue: self.n_ue as usize,
            h_full: self
                .h_full
                .chunks_exact(2)
                .map(|p| ComplexValue::new(p[0] as f64, p[1] as f64))
                .collect(),
        }
    }

    fn scenario_geometry(&self) -> ScenarioConfig {
        ScenarioConfig {
            n_bs: self.n_bs as usize,
            n_ue: self.n_ue as usize,
            n_c: self.n_c as usize,
            spatial_scale: self.n_bs as usize / self.n_r as usize,
            freq_scale: self.n_c as usize / self.n_k as usize,
            snr_db: self.snr_db as f64,
            seed: self.seed,
            ..ScenarioConfig::default()
        }
    }
}

/// Generates one dataset sample; per-sample seed is `base_seed + index` via
/// the split-stream derivation, keeping generation embarrassingly parallel.
pub fn generate_sample(
    base: &ScenarioConfig,
    index: u64,
) -> Result<DatasetSample, ChannelError> {
    let mut cfg = base.clone();
    cfg.seed = base.seed.wrapping_add(index);
    let h = synthesize_channel(&cfg)?;
    let obs = observe_pilot(&h, &cfg)?;
    Ok(DatasetSample::from_realization(&cfg, &h, &obs))
}

pub fn dataset_write(path: &Path, samples: &[DatasetSample]) -> Result<(), ChannelError> {
    if samples.is_empty() {
        return Err(ChannelError::EmptySamples);
    }
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&(samples.len() as u32).to_le_bytes());
    for s in samples {
        for v in [s.n_c, s.n_bs, s.n_ue, s.n_k, s.n_r] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&s.snr_db.to_le_bytes());
        buf.extend_from_slice(&s.seed.to_le_bytes());
        for arr in [&s.h_full, &s.y, &s.srs] {
            for f in arr.iter() {
                buf.extend_from_slice(&f.to_le_bytes());
            }
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn dataset_read(path: &Path) -> Result<Vec<DatasetSample>, ChannelError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };

    // A file too short to even hold the magic is "not a dataset file".
    let magic = cur.take(4).map_err(|_| ChannelError::BadMagic)?;
    if magic != DATASET_MAGIC {
        return Err(ChannelError::BadMagic);
    }
    let version = u16::from_le_bytes(cur.take(2)?.try_into().unwrap());
    if version != DATASET_VERSION {
        return Err(ChannelError::VersionMismatch(version));
    }
    let count = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());

    let mut samples = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut dims = [0u16; 5];
        for d in dims.iter_mut() {
            *d = u16::from_le_bytes(cur.take(2)?.try_into().unwrap());
        }
        let [n_c, n_bs, n_ue, n_k, n_r] = dims;
        let snr_db = f32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        let seed = u64::from_le_bytes(cur.take(8)?.try_into().unwrap());
        let mut grids = Vec::with_capacity(3);
        for len in [
            2 * n_c as usize * n_bs as usize * n_ue as usize,
            2 * n_k as usize * n_r as usize * n_ue as usize,
            2 * n_k as usize * n_ue as usize,
        ] {
            let mut g = Vec::with_capacity(len);
            for _ in 0..len {
                g.push(f32::from_le_bytes(cur.take(4)?.try_into().unwrap()));
            }
            grids.push(g);
        }
        let srs = grids.pop().unwrap();
        let y = grids.pop().unwrap();
        let h_full = grids.pop().unwrap();
        samples.push(DatasetSample {
            n_c,
            n_bs,
            n_ue,
            n_k,
            n_r,
            snr_db,
            seed,
            h_full,
            y,
            srs,
        });
    }
    Ok(samples)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ChannelError> {
        if self.pos + n > self.bytes.len() {
            return Err(ChannelError::Truncated);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}
