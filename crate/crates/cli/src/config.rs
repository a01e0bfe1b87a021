//! JSON run configuration: Table-style scenario defaults, engine tiling, and
//! experiment knobs. Unknown keys are rejected with the offending key named.

use serde::Deserialize;

use swiftchannel::channel::ScenarioConfig;
use swiftchannel::net::ModelKind;
use swiftchannel::stream::EngineConfig;

use crate::CliError;

#[derive(Debug, Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ModelKindCfg {
    Teacher,
    Student,
}

impl From<ModelKindCfg> for ModelKind {
    fn from(k: ModelKindCfg) -> ModelKind {
        match k {
            ModelKindCfg::Teacher => ModelKind::Teacher,
            ModelKindCfg::Student => ModelKind::Student,
        }
    }
}

/// One SNR point; JSON numbers or the strings "inf" / "-inf" (JSON itself has
/// no infinity literal).
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(try_from = "RawSnr")]
pub struct SnrValue(pub f64);

#[derive(Deserialize)]
#[serde(untagged)]
enum RawSnr {
    Num(f64),
    Str(String),
}

impl TryFrom<RawSnr> for SnrValue {
    type Error = String;
    fn try_from(raw: RawSnr) -> Result<SnrValue, String> {
        match raw {
            RawSnr::Num(v) => Ok(SnrValue(v)),
            RawSnr::Str(s) => match s.trim().to_ascii_lowercase().as_str() {
                "inf" | "+inf" | "infinity" => Ok(SnrValue(f64::INFINITY)),
                "-inf" | "-infinity" => Ok(SnrValue(f64::NEG_INFINITY)),
                other => Err(format!("snr_db string must be \"inf\"-like, got {other:?}")),
            },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SnrSpec {
    One(SnrValue),
    Many(Vec<SnrValue>),
}

impl SnrSpec {
    pub fn points(&self) -> Vec<f64> {
        match self {
            SnrSpec::One(v) => vec![v.0],
            SnrSpec::Many(vs) => vs.iter().map(|v| v.0).collect(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub carrier_hz: f64,
    pub n_bs: usize,
    pub n_ue: usize,
    pub n_c: usize,
    pub subcarrier_spacing_hz: f64,
    pub spatial_scale: usize,
    pub freq_scale: usize,
    pub snr_db: SnrSpec,
    pub velocity_kmh: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub sample_count: usize,
    pub model_kind: ModelKindCfg,
    pub t_m: usize,
    pub t_n: usize,
    pub pipeline_depth: u64,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        let s = ScenarioConfig::default();
        let e = EngineConfig::default();
        RunConfig {
            carrier_hz: s.carrier_hz,
            n_bs: s.n_bs,
            n_ue: s.n_ue,
            n_c: s.n_c,
            subcarrier_spacing_hz: s.subcarrier_spacing_hz,
            spatial_scale: s.spatial_scale,
            freq_scale: s.freq_scale,
            snr_db: SnrSpec::One(SnrValue(s.snr_db)),
            velocity_kmh: s.velocity_kmh,
            n_paths: s.n_paths,
            seed: s.seed,
            sample_count: 16,
            model_kind: ModelKindCfg::Student,
            t_m: e.t_m,
            t_n: e.t_n,
            pipeline_depth: e.pipeline_depth,
        }
    }
}

impl RunConfig {
    /// Scenario for a single SNR point (the first by default).
    pub fn scenario(&self) -> ScenarioConfig {
        self.scenario_at(self.snr_db.points()[0])
    }

    pub fn scenario_at(&self, snr_db: f64) -> ScenarioConfig {
        ScenarioConfig {
            carrier_hz: self.carrier_hz,
            n_bs: self.n_bs,
            n_ue: self.n_ue,
            n_c: self.n_c,
            subcarrier_spacing_hz: self.subcarrier_spacing_hz,
            spatial_scale: self.spatial_scale,
            freq_scale: self.freq_scale,
            snr_db,
            velocity_kmh: self.velocity_kmh,
            n_paths: self.n_paths,
            seed: self.seed,
        }
    }

    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            t_m: self.t_m,
            t_n: self.t_n,
            pipeline_depth: self.pipeline_depth,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.scenario()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.sample_count < 1 {
            return Err(CliError::Config("sample_count must be >= 1".into()));
        }
        if self.t_m < 1 || self.t_n < 1 {
            return Err(CliError::Config("tile sizes must be >= 1".into()));
        }
        Ok(())
    }
}

/// Loads and validates a config file; `None` means full defaults.
pub fn parse_config(path: Option<&std::path::Path>) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = match path {
        None => RunConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
    };
    cfg.validate()?;
    Ok(cfg)
}
