use ftaic::gpr::{joint_grid, GprHyperparams, GprModel};
use ftaic::plant::{forward_kinematics, CartesianPoint, PlantParams};
use ftaic::sensors::{barrel_distort, DistortionSpec};
use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const Q1: (f64, f64) = (-0.7, 0.9);
const Q2: (f64, f64) = (-0.7, 0.9);

fn camera_truth(q: &Vector2<f64>) -> Vector2<f64> {
    let p = PlantParams::default();
    barrel_distort(forward_kinematics(q, &p), &DistortionSpec::default(), CartesianPoint::ORIGIN, p.reach()).to_vector()
}

fn fitted() -> GprModel {
    let xs = joint_grid(Q1, Q2, 20);
    let ys: Vec<_> = xs.iter().map(camera_truth).collect();
    GprModel::fit(&xs, &ys, GprHyperparams::default()).unwrap()
}

#[test]
fn held_out_error_on_noiseless_camera_data() {
    let model = fitted();
    // cell centres of the training grid
    let step = (Q1.1 - Q1.0) / 19.0;
    let held = joint_grid((Q1.0 + step / 2.0, Q1.1 - step / 2.0), (Q2.0 + step / 2.0, Q2.1 - step / 2.0), 19);
    let mean_err = held.iter().map(|q| (model.predict(q) - camera_truth(q)).norm()).sum::<f64>() / held.len() as f64;
    assert!(mean_err < 1e-3, "mean held-out error {mean_err}");
}

#[test]
fn training_fit_within_three_noise_sigmas() {
    let model = fitted();
    let sigma_n = model.hyperparams().noise_variance.sqrt();
    for (x, y) in model.inputs().iter().zip(model.targets()) {
        let e = (model.predict(x) - y).amax();
        assert!(e < 3.0 * sigma_n, "{e}");
    }
}

#[test]
fn jacobian_matches_finite_differences_at_random_points() {
    let model = fitted();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h = 1e-5;
    for _ in 0..100 {
        let mu = Vector2::new(rng.random_range(Q1.0..Q1.1), rng.random_range(Q2.0..Q2.1));
        let jac = model.gradient(&mu);
        for j in 0..2 {
            let mut e = Vector2::zeros();
            e[j] = h;
            let fd = (model.predict(&(mu + e)) - model.predict(&(mu - e))) / (2.0 * h);
            for i in 0..2 {
                let scale = jac[(i, j)].abs().max(fd[i].abs()).max(1e-8);
                assert!((jac[(i, j)] - fd[i]).abs() / scale < 1e-4, "({i},{j}) at {mu:?}: {} vs {}", jac[(i, j)], fd[i]);
            }
        }
    }
}

#[test]
fn linear_data_gives_identity_jacobian() {
    let xs = joint_grid((-1.0, 1.0), (-1.0, 1.0), 15);
    let hyper = GprHyperparams { length_scale: 3.0, signal_variance: 10.0, noise_variance: 1e-6 };
    let model = GprModel::fit(&xs, &xs, hyper).unwrap();
    let jac = model.gradient(&Vector2::new(0.1, -0.2));
    for i in 0..2 {
        for j in 0..2 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((jac[(i, j)] - want).abs() < 0.1, "{jac}");
        }
    }
}

#[test]
fn prediction_is_lipschitz() {
    let model = fitted();
    let hp = model.hyperparams();
    let max_w = model.weights().iter().map(|w| w.amax()).fold(0.0, f64::max);
    let bound = hp.signal_variance * max_w * model.len() as f64 / hp.length_scale;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let a = Vector2::new(rng.random_range(Q1.0..Q1.1), rng.random_range(Q2.0..Q2.1));
        let d = Vector2::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
        assert!((model.predict(&(a + d)) - model.predict(&a)).norm() <= bound * d.norm());
    }
}
