//! Unbiased active inference controller.
//!
//! Perception and action both descend one free-energy functional built from
//! five Gaussian factors: joint encoders, velocity sensors, camera, a state
//! prediction prior, and an action prior centred on a PD attractor.

use nalgebra::{Matrix2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpr::GprModel;
use crate::sensors::SensorBundle;

/// Number of scalar sensor channels: two encoders, two velocity sensors and
/// the two camera coordinates, in that order.
pub const SENSOR_CHANNELS: usize = 6;

/// Anything that can act as the camera generative model g_v.
pub trait CameraModel {
    /// Expected camera reading and its Jacobian w.r.t. the joint belief.
    fn predict_with_gradient(&self, mu: &Vector2<f64>) -> (Vector2<f64>, Matrix2<f64>);
}

impl CameraModel for GprModel {
    fn predict_with_gradient(&self, mu: &Vector2<f64>) -> (Vector2<f64>, Matrix2<f64>) {
        GprModel::predict_with_gradient(self, mu)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BeliefState {
    pub mu: Vector2<f64>,
    pub mu_prime: Vector2<f64>,
    pub mu_u: Vector2<f64>,
}

impl BeliefState {
    pub fn at(mu: Vector2<f64>) -> Self {
        Self { mu, ..Self::default() }
    }

    pub fn is_finite(&self) -> bool {
        self.mu.iter().chain(self.mu_prime.iter()).chain(self.mu_u.iter()).all(|v| v.is_finite())
    }

    pub fn state(&self) -> Vector4<f64> {
        Vector4::new(self.mu[0], self.mu[1], self.mu_prime[0], self.mu_prime[1])
    }
}

/// The five factor groups of the free energy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Factor {
    Encoders,
    Velocity,
    Camera,
    StatePrior,
    ActionPrior,
}

/// Diagonal precisions stored as log-precisions, so every active precision
/// is `exp(zeta) > 0`. A factor can additionally be switched off entirely,
/// which means a literal zero precision and no log term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrecisionSet {
    pub zeta_q: Vector2<f64>,
    pub zeta_qdot: Vector2<f64>,
    pub zeta_v: Vector2<f64>,
    pub zeta_x: Vector4<f64>,
    pub zeta_u: Vector2<f64>,
    off: [bool; 5],
}

fn factor_index(f: Factor) -> usize {
    match f {
        Factor::Encoders => 0,
        Factor::Velocity => 1,
        Factor::Camera => 2,
        Factor::StatePrior => 3,
        Factor::ActionPrior => 4,
    }
}

impl PrecisionSet {
    pub fn from_precisions(config: &PrecisionConfig) -> Self {
        let ln2 = |v: [f64; 2]| Vector2::new(v[0].ln(), v[1].ln());
        Self {
            zeta_q: ln2(config.omega_q),
            zeta_qdot: ln2(config.omega_qdot),
            zeta_v: ln2(config.omega_v),
            zeta_x: Vector4::from_iterator(config.omega_x.iter().map(|w| w.ln())),
            zeta_u: ln2(config.omega_u),
            off: [false; 5],
        }
    }

    pub fn is_off(&self, f: Factor) -> bool {
        self.off[factor_index(f)]
    }

    /// Drops a factor: zero precision, no log-determinant contribution.
    pub fn switch_off(&mut self, f: Factor) {
        self.off[factor_index(f)] = true;
    }

    fn gate2(&self, f: Factor, zeta: &Vector2<f64>) -> Vector2<f64> {
        if self.is_off(f) {
            Vector2::zeros()
        } else {
            zeta.map(f64::exp)
        }
    }

    pub fn omega_q(&self) -> Vector2<f64> {
        self.gate2(Factor::Encoders, &self.zeta_q)
    }

    pub fn omega_qdot(&self) -> Vector2<f64> {
        self.gate2(Factor::Velocity, &self.zeta_qdot)
    }

    pub fn omega_v(&self) -> Vector2<f64> {
        self.gate2(Factor::Camera, &self.zeta_v)
    }

    pub fn omega_x(&self) -> Vector4<f64> {
        if self.is_off(Factor::StatePrior) {
            Vector4::zeros()
        } else {
            self.zeta_x.map(f64::exp)
        }
    }

    pub fn omega_u(&self) -> Vector2<f64> {
        self.gate2(Factor::ActionPrior, &self.zeta_u)
    }

    /// Sensor precisions in channel order (q1, q2, qd1, qd2, v1, v2).
    pub fn sensor_omegas(&self) -> [f64; SENSOR_CHANNELS] {
        let (q, qd, v) = (self.omega_q(), self.omega_qdot(), self.omega_v());
        [q[0], q[1], qd[0], qd[1], v[0], v[1]]
    }

    pub fn sensor_zeta(&self, channel: usize) -> f64 {
        match channel {
            0 | 1 => self.zeta_q[channel],
            2 | 3 => self.zeta_qdot[channel - 2],
            4 | 5 => self.zeta_v[channel - 4],
            _ => panic!("sensor channel {channel} out of range"),
        }
    }

    pub fn set_sensor_zeta(&mut self, channel: usize, zeta: f64) {
        match channel {
            0 | 1 => self.zeta_q[channel] = zeta,
            2 | 3 => self.zeta_qdot[channel - 2] = zeta,
            4 | 5 => self.zeta_v[channel - 4] = zeta,
            _ => panic!("sensor channel {channel} out of range"),
        }
    }

    pub fn sensor_factor(channel: usize) -> Factor {
        match channel {
            0 | 1 => Factor::Encoders,
            2 | 3 => Factor::Velocity,
            _ => Factor::Camera,
        }
    }
}

/// Precisions as plain (not log) values, the way they appear in config files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrecisionConfig {
    pub omega_q: [f64; 2],
    pub omega_qdot: [f64; 2],
    pub omega_v: [f64; 2],
    pub omega_x: [f64; 4],
    pub omega_u: [f64; 2],
}

impl Default for PrecisionConfig {
    fn default() -> Self {
        Self {
            omega_q: [1e6; 2],
            omega_qdot: [1e6; 2],
            omega_v: [1e4; 2],
            omega_x: [2e9, 2e9, 1.0, 1.0],
            omega_u: [1e-2; 2],
        }
    }
}

impl PrecisionConfig {
    pub fn validate(&self) -> Result<()> {
        let all = self
            .omega_q
            .iter()
            .chain(&self.omega_qdot)
            .chain(&self.omega_v)
            .chain(&self.omega_x)
            .chain(&self.omega_u);
        for &w in all {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Config(format!("precision {w} must be finite and > 0")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerGains {
    /// Gradient step size for the joint-angle belief.
    pub kappa_mu: f64,
    /// Gradient step size for the joint-velocity belief.
    pub kappa_mu_prime: f64,
    pub kappa_u: f64,
    pub dt: f64,
    pub kp: f64,
    pub kd: f64,
    pub tau_max: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            kappa_mu: 5e-7,
            kappa_mu_prime: 1e-3,
            kappa_u: 5e4,
            dt: 1e-3,
            kp: 25.0,
            kd: 10.0,
            tau_max: 50.0,
        }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> Result<()> {
        let v = [self.kappa_mu, self.kappa_mu_prime, self.kappa_u, self.dt, self.kp, self.kd, self.tau_max];
        if v.iter().all(|x| x.is_finite() && *x > 0.0) {
            Ok(())
        } else {
            Err(Error::Config("controller gains must all be finite and > 0".into()))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Target {
    pub mu_d: Vector2<f64>,
}

/// One-step Euler prediction of the state from the current belief.
pub fn predict_state(belief: &BeliefState, dt: f64) -> Vector4<f64> {
    let q = belief.mu + belief.mu_prime * dt;
    Vector4::new(q[0], q[1], belief.mu_prime[0], belief.mu_prime[1])
}

/// PD attractor f*(mu_x, mu_d).
pub fn attractor(belief: &BeliefState, target: &Target, gains: &ControllerGains) -> Vector2<f64> {
    (target.mu_d - belief.mu) * gains.kp - belief.mu_prime * gains.kd
}

/// All prediction errors entering the free energy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictionErrors {
    pub eps_q: Vector2<f64>,
    pub eps_qdot: Vector2<f64>,
    pub eps_v: Vector2<f64>,
    pub eps_x: Vector4<f64>,
    pub eps_u: Vector2<f64>,
}

impl PredictionErrors {
    pub fn sensor_channels(&self) -> [f64; SENSOR_CHANNELS] {
        [self.eps_q[0], self.eps_q[1], self.eps_qdot[0], self.eps_qdot[1], self.eps_v[0], self.eps_v[1]]
    }
}

/// Sensory prediction errors only; shared with residual generation.
pub fn sensory_errors(
    belief: &BeliefState,
    obs: &SensorBundle,
    g_v: &Vector2<f64>,
) -> (Vector2<f64>, Vector2<f64>, Vector2<f64>) {
    (obs.y_q - belief.mu, obs.y_qdot - belief.mu_prime, obs.y_v - g_v)
}

/// Prediction errors plus the camera Jacobian at the current belief.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub errors: PredictionErrors,
    pub camera_jacobian: Matrix2<f64>,
}

pub fn evaluate<C: CameraModel + ?Sized>(
    belief: &BeliefState,
    obs: &SensorBundle,
    x_hat: &Vector4<f64>,
    target: &Target,
    gains: &ControllerGains,
    camera: &C,
) -> Evaluation {
    let (g_v, jac) = camera.predict_with_gradient(&belief.mu);
    let (eps_q, eps_qdot, eps_v) = sensory_errors(belief, obs, &g_v);
    let eps_x = belief.state() - x_hat;
    let eps_u = belief.mu_u - attractor(belief, target, gains);
    Evaluation { errors: PredictionErrors { eps_q, eps_qdot, eps_v, eps_x, eps_u }, camera_jacobian: jac }
}

fn weighted_sq<const D: usize>(
    omega: &nalgebra::SVector<f64, D>,
    eps: &nalgebra::SVector<f64, D>,
    off: bool,
) -> f64 {
    if off {
        return 0.0;
    }
    omega.iter().zip(eps.iter()).map(|(w, e)| w * e * e - w.ln()).sum()
}

/// Free energy of already-evaluated prediction errors (additive constant 0).
pub fn free_energy_of(errors: &PredictionErrors, precisions: &PrecisionSet) -> f64 {
    let p = precisions;
    0.5 * (weighted_sq(&p.omega_q(), &errors.eps_q, p.is_off(Factor::Encoders))
        + weighted_sq(&p.omega_qdot(), &errors.eps_qdot, p.is_off(Factor::Velocity))
        + weighted_sq(&p.omega_v(), &errors.eps_v, p.is_off(Factor::Camera))
        + weighted_sq(&p.omega_x(), &errors.eps_x, p.is_off(Factor::StatePrior))
        + weighted_sq(&p.omega_u(), &errors.eps_u, p.is_off(Factor::ActionPrior)))
}

pub fn free_energy<C: CameraModel + ?Sized>(
    belief: &BeliefState,
    obs: &SensorBundle,
    x_hat: &Vector4<f64>,
    target: &Target,
    precisions: &PrecisionSet,
    gains: &ControllerGains,
    camera: &C,
) -> f64 {
    free_energy_of(&evaluate(belief, obs, x_hat, target, gains, camera).errors, precisions)
}

/// Partial derivatives of the free energy w.r.t. the belief and action.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeliefGradient {
    pub d_mu: Vector2<f64>,
    pub d_mu_prime: Vector2<f64>,
    pub d_mu_u: Vector2<f64>,
}

impl BeliefGradient {
    pub fn norm(&self) -> f64 {
        (self.d_mu.norm_squared() + self.d_mu_prime.norm_squared() + self.d_mu_u.norm_squared()).sqrt()
    }
}

/// Analytic gradient; `x_hat` is held fixed.
pub fn gradient_of(eval: &Evaluation, precisions: &PrecisionSet, gains: &ControllerGains) -> BeliefGradient {
    let e = &eval.errors;
    let wx = precisions.omega_x();
    let wu_eu = precisions.omega_u().component_mul(&e.eps_u);
    let d_mu = -precisions.omega_q().component_mul(&e.eps_q)
        - eval.camera_jacobian.transpose() * precisions.omega_v().component_mul(&e.eps_v)
        + Vector2::new(wx[0] * e.eps_x[0], wx[1] * e.eps_x[1])
        + wu_eu * gains.kp;
    let d_mu_prime = -precisions.omega_qdot().component_mul(&e.eps_qdot)
        + Vector2::new(wx[2] * e.eps_x[2], wx[3] * e.eps_x[3])
        + wu_eu * gains.kd;
    BeliefGradient { d_mu, d_mu_prime, d_mu_u: wu_eu }
}

pub fn free_energy_gradient<C: CameraModel + ?Sized>(
    belief: &BeliefState,
    obs: &SensorBundle,
    x_hat: &Vector4<f64>,
    target: &Target,
    precisions: &PrecisionSet,
    gains: &ControllerGains,
    camera: &C,
) -> BeliefGradient {
    gradient_of(&evaluate(belief, obs, x_hat, target, gains, camera), precisions, gains)
}

/// Applies one Euler step of the gradient flow given a precomputed gradient.
pub fn descend(belief: &BeliefState, grad: &BeliefGradient, gains: &ControllerGains) -> BeliefState {
    BeliefState {
        mu: belief.mu - grad.d_mu * (gains.kappa_mu * gains.dt),
        mu_prime: belief.mu_prime - grad.d_mu_prime * (gains.kappa_mu_prime * gains.dt),
        mu_u: belief.mu_u - grad.d_mu_u * (gains.kappa_u * gains.dt),
    }
}

/// One control tick of belief and action updates, with the state prediction
/// taken from the incoming belief.
pub fn update_beliefs<C: CameraModel + ?Sized>(
    belief: &BeliefState,
    obs: &SensorBundle,
    target: &Target,
    precisions: &PrecisionSet,
    gains: &ControllerGains,
    camera: &C,
    step: usize,
) -> Result<BeliefState> {
    let x_hat = predict_state(belief, gains.dt);
    let grad = free_energy_gradient(belief, obs, &x_hat, target, precisions, gains, camera);
    let next = descend(belief, &grad, gains);
    if !next.is_finite() {
        return Err(Error::Diverged { step, what: "non-finite belief" });
    }
    Ok(next)
}

/// Torque command: the action belief clamped to +-tau_max.
pub fn control_output(belief: &BeliefState, tau_max: f64) -> Vector2<f64> {
    belief.mu_u.map(|u| u.clamp(-tau_max, tau_max))
}
