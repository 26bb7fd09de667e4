#![allow(dead_code)]

use ftaic::controller::{BeliefState, PrecisionConfig, PrecisionSet, Target};
use ftaic::gpr::GprModel;
use ftaic::harness::fit_camera;
use ftaic::sensors::SensorBundle;
use ftaic::ScenarioConfig;
use nalgebra::{Vector2, Vector4};
use rand::Rng;

pub fn camera() -> GprModel {
    fit_camera(&ScenarioConfig::default()).unwrap()
}

fn v2<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> Vector2<f64> {
    Vector2::new(rng.random_range(lo..hi), rng.random_range(lo..hi))
}

/// Belief inside the camera training region.
pub fn random_belief<R: Rng>(rng: &mut R) -> BeliefState {
    BeliefState { mu: v2(rng, -0.6, 0.8), mu_prime: v2(rng, -1.0, 1.0), mu_u: v2(rng, -5.0, 5.0) }
}

pub fn random_obs<R: Rng>(rng: &mut R) -> SensorBundle {
    SensorBundle { y_q: v2(rng, -0.6, 0.8), y_qdot: v2(rng, -1.0, 1.0), y_v: v2(rng, 0.5, 1.8) }
}

pub fn random_x_hat<R: Rng>(rng: &mut R) -> Vector4<f64> {
    let a = v2(rng, -0.6, 0.8);
    let b = v2(rng, -1.0, 1.0);
    Vector4::new(a[0], a[1], b[0], b[1])
}

pub fn random_target<R: Rng>(rng: &mut R) -> Target {
    Target { mu_d: v2(rng, -0.6, 0.8) }
}

/// Log-precisions drawn uniformly in [-3, 3].
pub fn random_precisions<R: Rng>(rng: &mut R) -> PrecisionSet {
    let mut p = PrecisionSet::from_precisions(&PrecisionConfig::default());
    let mut z = || rng.random_range(-3.0..3.0);
    p.zeta_q = Vector2::new(z(), z());
    p.zeta_qdot = Vector2::new(z(), z());
    p.zeta_v = Vector2::new(z(), z());
    p.zeta_x = Vector4::new(z(), z(), z(), z());
    p.zeta_u = Vector2::new(z(), z());
    p
}
