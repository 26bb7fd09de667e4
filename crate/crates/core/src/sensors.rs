//! Encoders, velocity sensors and the camera, with noise, lens distortion and
//! scripted faults.

use nalgebra::Vector2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{CartesianPoint, JointState};

/// One tick of observations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorBundle {
    pub y_q: Vector2<f64>,
    pub y_qdot: Vector2<f64>,
    pub y_v: Vector2<f64>,
}

impl SensorBundle {
    pub fn is_finite(&self) -> bool {
        self.y_q.iter().chain(self.y_qdot.iter()).chain(self.y_v.iter()).all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub sigma_q: f64,
    pub sigma_qdot: f64,
    pub sigma_v: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { sigma_q: 1e-3, sigma_qdot: 1e-3, sigma_v: 1e-2 }
    }
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self { sigma_q: 0.0, sigma_qdot: 0.0, sigma_v: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.sigma_q, self.sigma_qdot, self.sigma_v].iter().all(|s| s.is_finite() && *s >= 0.0) {
            Ok(())
        } else {
            Err(Error::Config("noise standard deviations must be finite and >= 0".into()))
        }
    }
}

/// Radial lens distortion coefficients, applied in coordinates normalized by
/// the distortion scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistortionSpec {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
}

impl Default for DistortionSpec {
    fn default() -> Self {
        Self { k1: -1.5e-3, k2: 5e-6, k3: 0.0 }
    }
}

impl DistortionSpec {
    pub fn none() -> Self {
        Self { k1: 0.0, k2: 0.0, k3: 0.0 }
    }

    /// Multiplicative radial factor at normalized radius `r`.
    pub fn radial_factor(&self, r: f64) -> f64 {
        let r2 = r * r;
        1.0 + self.k1 * r2 + self.k2 * r2 * r2 + self.k3 * r2 * r2 * r2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultKind {
    /// The encoder keeps emitting the reading it produced at activation.
    EncoderFreeze,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub channel: usize,
    pub k_f: usize,
}

impl FaultSpec {
    pub fn encoder_freeze(channel: usize, k_f: usize) -> Self {
        Self { kind: FaultKind::EncoderFreeze, channel, k_f }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            FaultKind::EncoderFreeze if self.channel >= 2 => Err(Error::Config(format!(
                "encoder-freeze fault on channel {} (joints are 0 and 1)",
                self.channel
            ))),
            _ => Ok(()),
        }
    }

    pub fn is_active(&self, k: usize) -> bool {
        k >= self.k_f
    }
}

pub fn barrel_distort(
    p: CartesianPoint,
    spec: &DistortionSpec,
    center: CartesianPoint,
    scale: f64,
) -> CartesianPoint {
    debug_assert!(scale > 0.0);
    let dx = p.x - center.x;
    let dy = p.y - center.y;
    let r = dx.hypot(dy) / scale;
    let f = spec.radial_factor(r);
    CartesianPoint::new(center.x + dx * f, center.y + dy * f)
}

/// Noise and distortion settings shared by every read.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorModel {
    pub noise: NoiseSpec,
    pub distortion: DistortionSpec,
    pub center: CartesianPoint,
    pub scale: f64,
}

impl SensorModel {
    pub fn camera_truth(&self, ee: CartesianPoint) -> CartesianPoint {
        barrel_distort(ee, &self.distortion, self.center, self.scale)
    }
}

/// Held readings of active freeze faults, one slot per fault.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrozenCache {
    held: Vec<Option<f64>>,
}

impl FrozenCache {
    pub fn new(n_faults: usize) -> Self {
        Self { held: vec![None; n_faults] }
    }

    pub fn held(&self, fault: usize) -> Option<f64> {
        self.held.get(fault).copied().flatten()
    }
}

/// Produces one observation bundle.
///
/// Noise is drawn in the fixed order q1, q2, qd1, qd2, vx, vy, always six
/// draws per call, so the stream does not depend on which sigmas are zero.
pub fn read_sensors<R: Rng>(
    model: &SensorModel,
    truth: &JointState,
    ee: CartesianPoint,
    faults: &[FaultSpec],
    k: usize,
    cache: &mut FrozenCache,
    rng: &mut R,
) -> Result<SensorBundle> {
    if cache.held.len() < faults.len() {
        cache.held.resize(faults.len(), None);
    }
    let mut draw = || -> f64 { rng.sample(StandardNormal) };
    let n = [draw(), draw(), draw(), draw(), draw(), draw()];
    let s = &model.noise;
    let cam = model.camera_truth(ee);

    let mut y_q = truth.q + Vector2::new(n[0], n[1]) * s.sigma_q;
    let y_qdot = truth.qdot + Vector2::new(n[2], n[3]) * s.sigma_qdot;
    let y_v = cam.to_vector() + Vector2::new(n[4], n[5]) * s.sigma_v;

    for (i, fault) in faults.iter().enumerate() {
        fault.validate()?;
        if !fault.is_active(k) {
            continue;
        }
        match fault.kind {
            FaultKind::EncoderFreeze => {
                let held = *cache.held[i].get_or_insert(y_q[fault.channel]);
                y_q[fault.channel] = held;
            }
        }
    }
    Ok(SensorBundle { y_q, y_qdot, y_v })
}

/// Sensor rig owned by a single scenario run: model, fault script, seeded
/// noise stream and held fault values.
#[derive(Clone, Debug)]
pub struct SensorSuite {
    model: SensorModel,
    faults: Vec<FaultSpec>,
    cache: FrozenCache,
    rng: ChaCha8Rng,
}

impl SensorSuite {
    pub fn new(model: SensorModel, faults: Vec<FaultSpec>, seed: u64) -> Result<Self> {
        model.noise.validate()?;
        for f in &faults {
            f.validate()?;
        }
        let cache = FrozenCache::new(faults.len());
        Ok(Self { model, faults, cache, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn read(&mut self, truth: &JointState, ee: CartesianPoint, k: usize) -> Result<SensorBundle> {
        read_sensors(&self.model, truth, ee, &self.faults, k, &mut self.cache, &mut self.rng)
    }

    pub fn model(&self) -> &SensorModel {
        &self.model
    }

    pub fn faults(&self) -> &[FaultSpec] {
        &self.faults
    }
}
