//! Scenario configuration, read from TOML.

use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::controller::{ControllerGains, PrecisionConfig};
use crate::error::{Error, Result};
use crate::fdi::FdiParams;
use crate::gpr::GprHyperparams;
use crate::plant::PlantParams;
use crate::precision::{LearningParams, PrecisionMode};
use crate::sensors::{DistortionSpec, FaultSpec, NoiseSpec};

/// Fault-handling strategy of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// No fault tolerance.
    Fixed,
    PlAlways,
    PlOnDetect,
    Bayesian,
    /// Threshold detection followed by zeroing the faulty group.
    Deterministic,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Fixed, Mode::PlAlways, Mode::PlOnDetect, Mode::Bayesian, Mode::Deterministic];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Fixed => "fixed",
            Mode::PlAlways => "pl-always",
            Mode::PlOnDetect => "pl-on-detect",
            Mode::Bayesian => "bayesian",
            Mode::Deterministic => "deterministic",
        }
    }

    /// How sensor precisions evolve in this mode.
    pub fn precision_mode(&self) -> PrecisionMode {
        match self {
            Mode::Fixed | Mode::Deterministic => PrecisionMode::Fixed,
            Mode::PlAlways => PrecisionMode::PlAlways,
            Mode::PlOnDetect => PrecisionMode::PlOnDetect,
            Mode::Bayesian => PrecisionMode::Bayesian,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A joint-space target that becomes active at time `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t: f64,
    pub q: [f64; 2],
}

/// Training set of the camera model: a grid over the joint region spanned by
/// the start and the waypoints, padded by `margin`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub hyperparams: GprHyperparams,
    pub grid: usize,
    pub margin: f64,
    pub training_seed: u64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self { hyperparams: GprHyperparams::default(), grid: 20, margin: 0.3, training_seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub plant: PlantParams,
    pub noise: NoiseSpec,
    pub distortion: DistortionSpec,
    pub faults: Vec<FaultSpec>,
    /// Initial configuration x0, at rest.
    pub start: [f64; 2],
    pub waypoints: Vec<Waypoint>,
    pub duration: f64,
    pub gains: ControllerGains,
    pub precisions: PrecisionConfig,
    pub mode: Mode,
    pub learning: LearningParams,
    /// Shape a0 of the per-channel Gamma prior in bayesian mode.
    pub gamma_prior_shape: f64,
    pub fdi: FdiParams,
    pub camera: CameraConfig,
    /// MSE scoring window [start, end] in seconds.
    pub scoring_window: [f64; 2],
    pub seed: u64,
    pub output: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            plant: PlantParams::default(),
            noise: NoiseSpec::default(),
            distortion: DistortionSpec::default(),
            faults: vec![FaultSpec::encoder_freeze(0, 8000)],
            start: [0.0, 0.0],
            waypoints: vec![Waypoint { t: 0.0, q: [0.6, -0.4] }, Waypoint { t: 8.0, q: [-0.4, 0.6] }],
            duration: 15.0,
            gains: ControllerGains::default(),
            precisions: PrecisionConfig::default(),
            mode: Mode::Fixed,
            learning: LearningParams::default(),
            gamma_prior_shape: 1e6,
            fdi: FdiParams::default(),
            camera: CameraConfig::default(),
            scoring_window: [1.0, 15.0],
            seed: 0,
            output: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.noise.validate()?;
        self.gains.validate()?;
        self.precisions.validate()?;
        self.learning.validate()?;
        self.fdi.validate()?;
        for f in &self.faults {
            f.validate()?;
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::Config("duration must be > 0".into()));
        }
        if self.plant.dt != self.gains.dt {
            return Err(Error::Config("plant and controller dt must match".into()));
        }
        let mut last = None;
        for w in &self.waypoints {
            let ordered = match last {
                None => w.t >= 0.0,
                Some(prev) => w.t > prev,
            };
            last = Some(w.t);
            if !ordered || w.t >= self.duration {
                return Err(Error::Config(
                    "waypoint switch times must be increasing and below the duration".into(),
                ));
            }
        }
        if self.gamma_prior_shape.is_nan() || self.gamma_prior_shape <= 0.0 {
            return Err(Error::Config("gamma_prior_shape must be > 0".into()));
        }
        if self.camera.grid < 2 {
            return Err(Error::Config("camera grid needs at least 2 points per axis".into()));
        }
        let [a, b] = self.scoring_window;
        if !(0.0 <= a && a < b) {
            return Err(Error::Config("scoring window must satisfy 0 <= start < end".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.plant.dt).round() as usize
    }

    /// Target active at time `t`.
    pub fn target_at(&self, t: f64) -> Vector2<f64> {
        let q = self.waypoints.iter().rev().find(|w| w.t <= t).map(|w| w.q).unwrap_or(self.start);
        Vector2::new(q[0], q[1])
    }

    /// Joint-space box covering the start and every waypoint, padded.
    pub fn joint_region(&self) -> ((f64, f64), (f64, f64)) {
        let pts = std::iter::once(self.start).chain(self.waypoints.iter().map(|w| w.q));
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in pts {
            for i in 0..2 {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        let m = self.camera.margin;
        ((lo[0] - m, hi[0] + m), (lo[1] - m, hi[1] + m))
    }

    /// Stable hash of the serialized configuration, used to label failures.
    pub fn config_hash(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.to_toml_string().unwrap_or_default().hash(&mut h);
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ScenarioConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(ScenarioConfig::from_toml_str("duration = 3.0\nbogus = 1\n").is_err());
        assert!(ScenarioConfig::from_toml_str("[gains]\nkp = 3.0\nki = 1.0\n").is_err());
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = ScenarioConfig::from_toml_str("mode = \"pl-always\"\nseed = 7\n[gains]\nkp = 30.0\n").unwrap();
        assert_eq!(cfg.mode, Mode::PlAlways);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.gains.kp, 30.0);
        assert_eq!(cfg.gains.kd, ControllerGains::default().kd);
    }

    #[test]
    fn waypoint_order_enforced() {
        let mut cfg = ScenarioConfig::default();
        cfg.waypoints.swap(0, 1);
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::default();
        cfg.waypoints[1].t = 20.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn targets_follow_the_schedule() {
        let cfg = ScenarioConfig::default();
        assert_eq!(cfg.target_at(0.0), Vector2::new(0.6, -0.4));
        assert_eq!(cfg.target_at(7.999), Vector2::new(0.6, -0.4));
        assert_eq!(cfg.target_at(8.0), Vector2::new(-0.4, 0.6));
    }

    #[test]
    fn mode_names() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        assert!("nope".parse::<Mode>().is_err());
    }
}
