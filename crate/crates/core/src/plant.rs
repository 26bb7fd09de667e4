//! Ground-truth two-link planar arm.
//!
//! Point masses sit at the link tips. The controller never sees this model; it
//! only receives sensor readings produced from it.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

const GRAVITY: f64 = 9.81;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointState {
    pub q: Vector2<f64>,
    pub qdot: Vector2<f64>,
}

impl JointState {
    pub fn new(q: Vector2<f64>, qdot: Vector2<f64>) -> Self {
        Self { q, qdot }
    }

    pub fn at_rest(q: Vector2<f64>) -> Self {
        Self { q, qdot: Vector2::zeros() }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qdot.iter()).all(|v| v.is_finite())
    }

    /// Copy with joint angles wrapped to (-pi, pi]. Integration always runs on
    /// unwrapped angles; this is only for publishing.
    pub fn wrapped(&self) -> Self {
        Self { q: self.q.map(wrap_angle), qdot: self.qdot }
    }
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    pub link_lengths: [f64; 2],
    pub link_masses: [f64; 2],
    pub friction: [f64; 2],
    pub gravity: bool,
    pub dt: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            link_lengths: [1.0, 1.0],
            link_masses: [1.0, 1.0],
            friction: [0.1, 0.1],
            gravity: false,
            dt: 1e-3,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !self.link_lengths.iter().all(|&l| positive(l)) {
            return Err(Error::Config("link lengths must be > 0".into()));
        }
        if !self.link_masses.iter().all(|&m| positive(m)) {
            return Err(Error::Config("link masses must be > 0".into()));
        }
        if !self.friction.iter().all(|&b| b.is_finite() && b >= 0.0) {
            return Err(Error::Config("friction must be >= 0".into()));
        }
        if !positive(self.dt) {
            return Err(Error::Config("plant dt must be > 0".into()));
        }
        Ok(())
    }

    /// Maximum reach of the end effector.
    pub fn reach(&self) -> f64 {
        self.link_lengths[0] + self.link_lengths[1]
    }

    pub fn mass_matrix(&self, q: &Vector2<f64>) -> Matrix2<f64> {
        let [l1, l2] = self.link_lengths;
        let [m1, m2] = self.link_masses;
        let c2 = q[1].cos();
        let m11 = (m1 + m2) * l1 * l1 + m2 * l2 * l2 + 2.0 * m2 * l1 * l2 * c2;
        let m12 = m2 * l2 * l2 + m2 * l1 * l2 * c2;
        let m22 = m2 * l2 * l2;
        Matrix2::new(m11, m12, m12, m22)
    }

    /// Velocity-product (Coriolis and centrifugal) torques.
    pub fn coriolis(&self, state: &JointState) -> Vector2<f64> {
        let [l1, l2] = self.link_lengths;
        let m2 = self.link_masses[1];
        let h = m2 * l1 * l2 * state.q[1].sin();
        let (w1, w2) = (state.qdot[0], state.qdot[1]);
        Vector2::new(-h * (2.0 * w1 * w2 + w2 * w2), h * w1 * w1)
    }

    pub fn gravity_torque(&self, q: &Vector2<f64>) -> Vector2<f64> {
        if !self.gravity {
            return Vector2::zeros();
        }
        let [l1, l2] = self.link_lengths;
        let [m1, m2] = self.link_masses;
        let c1 = q[0].cos();
        let c12 = (q[0] + q[1]).cos();
        Vector2::new(
            (m1 + m2) * GRAVITY * l1 * c1 + m2 * GRAVITY * l2 * c12,
            m2 * GRAVITY * l2 * c12,
        )
    }

    /// Joint accelerations for the given state and applied torque.
    pub fn acceleration(&self, state: &JointState, torque: &Vector2<f64>) -> Option<Vector2<f64>> {
        let friction = Vector2::new(self.friction[0], self.friction[1]).component_mul(&state.qdot);
        let rhs = torque - self.coriolis(state) - self.gravity_torque(&state.q) - friction;
        self.mass_matrix(&state.q).cholesky().map(|c| c.solve(&rhs))
    }

    /// Total mechanical energy (kinetic plus potential when gravity is on).
    pub fn energy(&self, state: &JointState) -> f64 {
        let kinetic = 0.5 * state.qdot.dot(&(self.mass_matrix(&state.q) * state.qdot));
        if !self.gravity {
            return kinetic;
        }
        let [l1, l2] = self.link_lengths;
        let [m1, m2] = self.link_masses;
        let y1 = l1 * state.q[0].sin();
        let y2 = y1 + l2 * (state.q[0] + state.q[1]).sin();
        kinetic + GRAVITY * (m1 * y1 + m2 * y2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CartesianPoint {
    pub x: f64,
    pub y: f64,
}

impl CartesianPoint {
    pub const ORIGIN: CartesianPoint = CartesianPoint { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn from_vector(v: Vector2<f64>) -> Self {
        Self { x: v[0], y: v[1] }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Advances the arm by one semi-implicit Euler step of length `params.dt`.
///
/// `step` is only used to label a divergence error.
pub fn step_dynamics(
    state: &JointState,
    torque: &Vector2<f64>,
    params: &PlantParams,
    step: usize,
) -> Result<JointState> {
    if !torque.iter().all(|t| t.is_finite()) {
        return Err(Error::Diverged { step, what: "non-finite torque" });
    }
    let qddot = params
        .acceleration(state, torque)
        .ok_or(Error::Diverged { step, what: "singular mass matrix" })?;
    let qdot = state.qdot + qddot * params.dt;
    let q = state.q + qdot * params.dt;
    let next = JointState { q, qdot };
    if !next.is_finite() {
        return Err(Error::Diverged { step, what: "non-finite plant state" });
    }
    Ok(next)
}

pub fn forward_kinematics(q: &Vector2<f64>, params: &PlantParams) -> CartesianPoint {
    let [l1, l2] = params.link_lengths;
    let q12 = q[0] + q[1];
    CartesianPoint {
        x: l1 * q[0].cos() + l2 * q12.cos(),
        y: l1 * q[0].sin() + l2 * q12.sin(),
    }
}
