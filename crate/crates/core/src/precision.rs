//! Online learning of sensor precisions.
//!
//! Two learners are provided: gradient descent on the free energy in
//! log-precision space, and a conjugate Gamma posterior per channel whose
//! mean is plugged back into the controller.

use serde::{Deserialize, Serialize};

use crate::controller::{PrecisionSet, SENSOR_CHANNELS};
use crate::error::{Error, Result};

pub const ZETA_MIN: f64 = -20.0;
pub const ZETA_MAX: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrecisionMode {
    /// Precisions never change.
    Fixed,
    /// Log-precision gradient descent on every tick.
    PlAlways,
    /// Log-precision gradient descent once a fault has been detected.
    PlOnDetect,
    /// Gamma posterior mean used as plug-in precision.
    Bayesian,
}

impl PrecisionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PrecisionMode::Fixed => "fixed",
            PrecisionMode::PlAlways => "pl-always",
            PrecisionMode::PlOnDetect => "pl-on-detect",
            PrecisionMode::Bayesian => "bayesian",
        }
    }
}

/// dF/dzeta for one channel, where F holds 1/2 (omega eps^2 - ln omega)
/// and omega = exp(zeta).
pub fn log_precision_gradient(eps: f64, zeta: f64) -> f64 {
    0.5 * (zeta.exp() * eps * eps - 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningParams {
    pub kappa_zeta: f64,
    pub zeta_min: f64,
    pub zeta_max: f64,
}

impl Default for LearningParams {
    fn default() -> Self {
        Self { kappa_zeta: 3e-3, zeta_min: ZETA_MIN, zeta_max: ZETA_MAX }
    }
}

impl LearningParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_zeta.is_finite() && self.kappa_zeta > 0.0) {
            return Err(Error::Config("kappa_zeta must be > 0".into()));
        }
        if self.zeta_min.is_nan() || self.zeta_max.is_nan() || self.zeta_min >= self.zeta_max {
            return Err(Error::Config("zeta_min must be below zeta_max".into()));
        }
        Ok(())
    }
}

/// One Euler step of log-precision descent on the six sensor channels.
///
/// The state and action prior precisions are never learned. In
/// `PlOnDetect` mode nothing happens until `detected` is true; `Fixed` and
/// `Bayesian` leave the set unchanged.
pub fn step_log_precisions(
    precisions: &PrecisionSet,
    errors: &[f64; SENSOR_CHANNELS],
    params: &LearningParams,
    dt: f64,
    mode: PrecisionMode,
    detected: bool,
) -> PrecisionSet {
    let active = match mode {
        PrecisionMode::PlAlways => true,
        PrecisionMode::PlOnDetect => detected,
        PrecisionMode::Fixed | PrecisionMode::Bayesian => false,
    };
    let mut out = *precisions;
    if !active {
        return out;
    }
    for (ch, &eps) in errors.iter().enumerate() {
        let zeta = out.sensor_zeta(ch);
        let next = zeta - params.kappa_zeta * log_precision_gradient(eps, zeta) * dt;
        out.set_sensor_zeta(ch, next.clamp(params.zeta_min, params.zeta_max));
    }
    out
}

/// Gamma(shape a, rate b) belief over one scalar precision.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaBelief {
    pub a: f64,
    pub b: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaEstimates {
    pub mean: f64,
    pub mode: Option<f64>,
    pub variance: f64,
}

impl GammaBelief {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() {
            Ok(Self { a, b })
        } else {
            Err(Error::Config(format!("Gamma prior needs a, b > 0 (got {a}, {b})")))
        }
    }

    /// Prior whose mean is `1 / sigma^2` with shape `a`.
    pub fn with_mean_precision(a: f64, sigma: f64) -> Result<Self> {
        Self::new(a, a * sigma * sigma)
    }

    pub fn mean(&self) -> f64 {
        self.a / self.b
    }

    pub fn variance(&self) -> f64 {
        self.a / (self.b * self.b)
    }

    pub fn mode(&self) -> Result<f64> {
        if self.a > 1.0 {
            Ok((self.a - 1.0) / self.b)
        } else {
            Err(Error::UndefinedMode { shape: self.a, rate: self.b })
        }
    }
}

/// Conjugate update with one Gaussian observation `y` whose mean is `c`.
pub fn gamma_update(belief: &GammaBelief, y: f64, c: f64) -> GammaBelief {
    let e = y - c;
    GammaBelief { a: belief.a + 0.5, b: belief.b + 0.5 * e * e }
}

/// Batch form of [`gamma_update`] for prediction errors `e_i = y_i - c_i`.
pub fn gamma_update_batch(belief: &GammaBelief, errors: &[f64]) -> GammaBelief {
    GammaBelief {
        a: belief.a + 0.5 * errors.len() as f64,
        b: belief.b + 0.5 * errors.iter().map(|e| e * e).sum::<f64>(),
    }
}

pub fn gamma_estimates(belief: &GammaBelief) -> GammaEstimates {
    GammaEstimates { mean: belief.mean(), mode: belief.mode().ok(), variance: belief.variance() }
}

/// Per-channel Gamma beliefs for the six sensor channels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaBank {
    pub channels: [GammaBelief; SENSOR_CHANNELS],
}

impl GammaBank {
    /// Prior Gamma(a0, a0 sigma^2) on each channel, i.e. prior mean 1/sigma^2.
    pub fn from_sigmas(a0: f64, sigmas: [f64; SENSOR_CHANNELS]) -> Result<Self> {
        let mut channels = [GammaBelief { a: 1.0, b: 1.0 }; SENSOR_CHANNELS];
        for (c, s) in channels.iter_mut().zip(sigmas) {
            *c = GammaBelief::with_mean_precision(a0, s)?;
        }
        Ok(Self { channels })
    }

    pub fn update(&mut self, errors: &[f64; SENSOR_CHANNELS]) {
        for (c, &e) in self.channels.iter_mut().zip(errors) {
            *c = gamma_update(c, e, 0.0);
        }
    }

    /// Writes each posterior mean into the controller's precision set.
    pub fn apply(&self, precisions: &mut PrecisionSet, params: &LearningParams) {
        for (ch, c) in self.channels.iter().enumerate() {
            precisions.set_sensor_zeta(ch, c.mean().ln().clamp(params.zeta_min, params.zeta_max));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::PrecisionConfig;
    use approx::assert_relative_eq;

    #[test]
    fn gradient_examples() {
        let eps = 0.3f64;
        let zeta = -(eps * eps).ln();
        assert!(log_precision_gradient(eps, zeta).abs() < 1e-15);
        assert_eq!(log_precision_gradient(0.0, 3.0), -0.5);
    }

    #[test]
    fn gamma_examples() {
        let prior = GammaBelief::new(1.0, 1.0).unwrap();
        assert_eq!(gamma_update(&prior, 0.7, 0.7), GammaBelief { a: 1.5, b: 1.0 });
        assert_eq!(gamma_update(&prior, 2.5, 0.5), GammaBelief { a: 1.5, b: 3.0 });

        let g = gamma_estimates(&GammaBelief::new(3.0, 2.0).unwrap());
        assert_relative_eq!(g.mean, 1.5);
        assert_relative_eq!(g.mode.unwrap(), 1.0);
        assert_relative_eq!(g.variance, 0.75);

        let g = gamma_estimates(&prior);
        assert_eq!((g.mean, g.variance), (1.0, 1.0));
        assert!(g.mode.is_none());
        assert!(matches!(prior.mode(), Err(Error::UndefinedMode { .. })));
    }

    #[test]
    fn invalid_prior_rejected() {
        assert!(GammaBelief::new(0.0, 1.0).is_err());
        assert!(GammaBelief::new(1.0, -1.0).is_err());
    }

    #[test]
    fn persistent_error_lowers_precision_every_step() {
        let mut p = PrecisionSet::from_precisions(&PrecisionConfig::default());
        let params = LearningParams::default();
        let mut errors = [0.0; SENSOR_CHANNELS];
        errors[0] = 0.01;
        let mut last = p.omega_q()[0];
        for _ in 0..1000 {
            p = step_log_precisions(&p, &errors, &params, 1e-3, PrecisionMode::PlAlways, false);
            let now = p.omega_q()[0];
            assert!(now < last);
            last = now;
        }
        // channels with zero error grow
        assert!(p.omega_q()[1] > 1e6);
    }

    #[test]
    fn on_detect_waits_for_detection() {
        let p = PrecisionSet::from_precisions(&PrecisionConfig::default());
        let errors = [1.0; SENSOR_CHANNELS];
        let params = LearningParams::default();
        assert_eq!(step_log_precisions(&p, &errors, &params, 1e-3, PrecisionMode::PlOnDetect, false), p);
        assert_ne!(step_log_precisions(&p, &errors, &params, 1e-3, PrecisionMode::PlOnDetect, true), p);
        assert_eq!(step_log_precisions(&p, &errors, &params, 1e-3, PrecisionMode::Fixed, true), p);
    }

    #[test]
    fn clamp_bounds_hold() {
        let mut p = PrecisionSet::from_precisions(&PrecisionConfig::default());
        let params = LearningParams { kappa_zeta: 1e4, ..Default::default() };
        let mut errors = [0.0; SENSOR_CHANNELS];
        errors[4] = 1e3;
        for _ in 0..1000 {
            p = step_log_precisions(&p, &errors, &params, 1e-3, PrecisionMode::PlAlways, false);
        }
        assert_eq!(p.zeta_v[0], ZETA_MIN);
        assert_eq!(p.zeta_q[0], ZETA_MAX);
    }
}
