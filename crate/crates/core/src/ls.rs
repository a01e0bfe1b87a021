//! Least-squares channel estimation as element-wise complex division.
//!
//! The division is realized as multiplication by a cached normalized
//! conjugate, `conj(s) / |s|^2`, which the hardware pre-stores per pilot. The
//! fixed-point variant is the canonical pipeline front-end; the float variant
//! exists as the reference oracle.

use thiserror::Error;

use crate::channel::PilotObservation;
use crate::fixed::Fixed32;
use crate::tensor::{ComplexValue, RealTensor};

#[derive(Debug, Error)]
pub enum LsError {
    #[error("degenerate pilot (zero magnitude) at k={0}, u={1}")]
    DegeneratePilot(usize, usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsMode {
    Float,
    Fixed,
}

/// Pre-normalized conjugate pilots, stored both as reals and as Fixed32 pairs.
#[derive(Debug, Clone)]
pub struct SrsCache {
    pub n_k: usize,
    pub n_ue: usize,
    pub inv: Vec<ComplexValue>,
    pub inv_fx: Vec<(Fixed32, Fixed32)>,
}

impl SrsCache {
    #[inline]
    pub fn inv_at(&self, k: usize, u: usize) -> ComplexValue {
        self.inv[k * self.n_ue + u]
    }
}

/// LS estimate as a real-valued tensor, shape n_k x (n_r * n_ue) x 2 with the
/// antenna index outer and the UE port inner along the width axis; channel 0
/// holds real parts, channel 1 imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct LsEstimate {
    pub tensor: RealTensor,
}

pub fn build_srs_cache(
    srs: &[ComplexValue],
    n_k: usize,
    n_ue: usize,
) -> Result<SrsCache, LsError> {
    assert_eq!(srs.len(), n_k * n_ue);
    let mut inv = Vec::with_capacity(srs.len());
    let mut inv_fx = Vec::with_capacity(srs.len());
    for (i, s) in srs.iter().enumerate() {
        let mag_sq = s.norm_sq();
        if mag_sq == 0.0 {
            return Err(LsError::DegeneratePilot(i / n_ue, i % n_ue));
        }
        let v = s.conj().scale(1.0 / mag_sq);
        inv.push(v);
        inv_fx.push((Fixed32::from_real(v.re), Fixed32::from_real(v.im)));
    }
    Ok(SrsCache {
        n_k,
        n_ue,
        inv,
        inv_fx,
    })
}

pub fn ls_estimate(
    obs: &PilotObservation,
    cache: &SrsCache,
    mode: LsMode,
) -> Result<LsEstimate, LsError> {
    let raw = ls_estimate_fixed_raw_or_float(obs, cache, mode)?;
    Ok(LsEstimate { tensor: raw })
}

/// Fixed-point LS keeping the Fixed32 lattice values (as raw i32), in the
/// same flat order as the estimate tensor. This is what the streaming
/// pipeline quantizes to UINT8.
pub fn ls_estimate_fixed_raw(
    obs: &PilotObservation,
    cache: &SrsCache,
) -> Result<Vec<Fixed32>, LsError> {
    check_shapes(obs, cache)?;
    let mut out = Vec::with_capacity(obs.n_k * obs.n_r * obs.n_ue * 2);
    for k in 0..obs.n_k {
        for r in 0..obs.n_r {
            for u in 0..obs.n_ue {
                let y = obs.y_at(k, r, u);
                let (i_re, i_im) = cache.inv_fx[k * cache.n_ue + u];
                let y_re = Fixed32::from_real(y.re);
                let y_im = Fixed32::from_real(y.im);
                let re = y_re.mul(i_re).sub(y_im.mul(i_im));
                let im = y_re.mul(i_im).add(y_im.mul(i_re));
                out.push(re);
                out.push(im);
            }
        }
    }
    Ok(out)
}

fn ls_estimate_fixed_raw_or_float(
    obs: &PilotObservation,
    cache: &SrsCache,
    mode: LsMode,
) -> Result<RealTensor, LsError> {
    check_shapes(obs, cache)?;
    let width = obs.n_r * obs.n_ue;
    let mut t = RealTensor::zeros(obs.n_k, width, 2);
    match mode {
        LsMode::Float => {
            for k in 0..obs.n_k {
                for r in 0..obs.n_r {
                    for u in 0..obs.n_ue {
                        let v = obs.y_at(k, r, u).mul(cache.inv_at(k, u));
                        t.set(k, r * obs.n_ue + u, 0, v.re);
                        t.set(k, r * obs.n_ue + u, 1, v.im);
                    }
                }
            }
        }
        LsMode::Fixed => {
            let raw = ls_estimate_fixed_raw(obs, cache)?;
            for (i, v) in raw.iter().enumerate() {
                t.data[i] = v.to_real();
            }
        }
    }
    Ok(t)
}

fn check_shapes(obs: &PilotObservation, cache: &SrsCache) -> Result<(), LsError> {
    if cache.n_k != obs.n_k || cache.n_ue != obs.n_ue {
        return Err(LsError::ShapeMismatch(format!(
            "cache {}x{} vs observation {}x{}",
            cache.n_k, cache.n_ue, obs.n_k, obs.n_ue
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{observe_pilot, synthesize_channel, ScenarioConfig};

    fn unit_cache(n_k: usize, n_ue: usize) -> SrsCache {
        let srs = vec![ComplexValue::new(1.0, 0.0); n_k * n_ue];
        build_srs_cache(&srs, n_k, n_ue).unwrap()
    }

    #[test]
    fn cache_unit_and_imaginary_pilots() {
        let c = build_srs_cache(
            &[ComplexValue::new(1.0, 0.0), ComplexValue::new(0.0, 1.0)],
            2,
            1,
        )
        .unwrap();
        assert_eq!(c.inv[0], ComplexValue::new(1.0, -0.0));
        // conj(j)/1 = -j
        assert!((c.inv[1].re).abs() < 1e-15 && (c.inv[1].im + 1.0).abs() < 1e-15);
    }

    #[test]
    fn cache_rejects_zero_pilot() {
        let r = build_srs_cache(&[ComplexValue::new(0.0, 0.0)], 1, 1);
        assert!(matches!(r, Err(LsError::DegeneratePilot(0, 0))));
    }

    #[test]
    fn hand_division_oracle() {
        // (3+4j)/(1+2j) = (3+4j)(1-2j)/5 = 2.2 - 0.4j
        let obs = PilotObservation {
            n_k: 1,
            n_r: 1,
            n_ue: 1,
            y: vec![ComplexValue::new(3.0, 4.0)],
            srs: vec![ComplexValue::new(1.0, 2.0)],
            masks: crate::channel::SamplingMasks {
                antenna_idx: vec![0],
                subcarrier_idx: vec![0],
            },
        };
        let cache = build_srs_cache(&obs.srs, 1, 1).unwrap();
        let est = ls_estimate(&obs, &cache, LsMode::Float).unwrap();
        assert!((est.tensor.get(0, 0, 0) - 2.2).abs() < 1e-12);
        assert!((est.tensor.get(0, 0, 1) + 0.4).abs() < 1e-12);
    }

    #[test]
    fn noiseless_unit_pilots_recover_channel() {
        let cfg = ScenarioConfig {
            snr_db: f64::INFINITY,
            seed: 5,
            ..ScenarioConfig::default()
        };
        let h = synthesize_channel(&cfg).unwrap();
        let mut obs = observe_pilot(&h, &cfg).unwrap();
        // Replace pilots with the identity so y is exactly the sampled channel.
        for k in 0..obs.n_k {
            for r in 0..obs.n_r {
                for u in 0..obs.n_ue {
                    let hv = h.get(obs.masks.subcarrier_idx[k], obs.masks.antenna_idx[r], u);
                    obs.y[(k * obs.n_r + r) * obs.n_ue + u] = hv;
                }
            }
        }
        obs.srs = vec![ComplexValue::new(1.0, 0.0); obs.n_k * obs.n_ue];
        let cache = unit_cache(obs.n_k, obs.n_ue);
        let est = ls_estimate(&obs, &cache, LsMode::Float).unwrap();
        assert_eq!(
            (est.tensor.height, est.tensor.width, est.tensor.channels),
            (108, 32, 2)
        );
        for k in 0..obs.n_k {
            for r in 0..obs.n_r {
                for u in 0..obs.n_ue {
                    let hv = h.get(obs.masks.subcarrier_idx[k], obs.masks.antenna_idx[r], u);
                    let rel = ((est.tensor.get(k, r * 2 + u, 0) - hv.re).abs()
                        + (est.tensor.get(k, r * 2 + u, 1) - hv.im).abs())
                        / (hv.norm_sq().sqrt() + 1e-30);
                    assert!(rel < 1e-12);
                }
            }
        }
    }

    #[test]
    fn fixed_mode_tracks_float_mode() {
        let cfg = ScenarioConfig {
            seed: 8,
            snr_db: 15.0,
            ..ScenarioConfig::default()
        };
        let h = synthesize_channel(&cfg).unwrap();
        let obs = observe_pilot(&h, &cfg).unwrap();
        let cache = build_srs_cache(&obs.srs, obs.n_k, obs.n_ue).unwrap();
        let f = ls_estimate(&obs, &cache, LsMode::Float).unwrap();
        let q = ls_estimate(&obs, &cache, LsMode::Fixed).unwrap();
        let tol = 1.0 / (1u64 << 20) as f64;
        for (a, b) in f.tensor.data.iter().zip(q.tensor.data.iter()) {
            let denom = a.abs().max(1.0);
            assert!((a - b).abs() / denom < tol, "{a} vs {b}");
        }
    }

    #[test]
    fn float_mode_is_linear() {
        let cfg = ScenarioConfig {
            n_c: 16,
            n_bs: 8,
            seed: 1,
            ..ScenarioConfig::default()
        };
        let h = synthesize_channel(&cfg).unwrap();
        let obs = observe_pilot(&h, &cfg).unwrap();
        let cache = build_srs_cache(&obs.srs, obs.n_k, obs.n_ue).unwrap();
        let base = ls_estimate(&obs, &cache, LsMode::Float).unwrap();
        let mut scaled = obs.clone();
        for v in scaled.y.iter_mut() {
            *v = v.scale(2.5);
        }
        let est2 = ls_estimate(&scaled, &cache, LsMode::Float).unwrap();
        for (a, b) in base.tensor.data.iter().zip(est2.tensor.data.iter()) {
            assert!((2.5 * a - b).abs() < 1e-10);
        }
    }
}
