use ftaic::controller::{PrecisionConfig, PrecisionSet, SENSOR_CHANNELS};
use ftaic::precision::{
    gamma_estimates, gamma_update, gamma_update_batch, step_log_precisions, GammaBank, GammaBelief, LearningParams,
    PrecisionMode,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn learned_precision_settles_at_inverse_noise_power() {
    // constant error sigma on every channel, from the healthy defaults
    let sigma = 0.05;
    let params = LearningParams { kappa_zeta: 1.0, ..LearningParams::default() };
    let mut p = PrecisionSet::from_precisions(&PrecisionConfig::default());
    let errors = [sigma; SENSOR_CHANNELS];
    for _ in 0..10_000 {
        p = step_log_precisions(&p, &errors, &params, 1e-3, PrecisionMode::PlAlways, false);
    }
    let want = 1.0 / (sigma * sigma);
    for (ch, w) in p.sensor_omegas().iter().enumerate() {
        assert!((w - want).abs() < 0.2 * want, "channel {ch}: {w}");
    }
}

#[test]
fn only_sensor_channels_are_learned() {
    let p0 = PrecisionSet::from_precisions(&PrecisionConfig::default());
    let mut p = p0;
    for _ in 0..100 {
        p = step_log_precisions(&p, &[0.3; SENSOR_CHANNELS], &LearningParams::default(), 1e-3, PrecisionMode::PlAlways, false);
    }
    assert_eq!(p.zeta_x, p0.zeta_x);
    assert_eq!(p.zeta_u, p0.zeta_u);
    assert_ne!(p.zeta_q, p0.zeta_q);
}

#[test]
fn posterior_mean_recovers_true_precision() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let draws: Vec<f64> = (0..10_000).map(|_| noise.sample(&mut rng)).collect();
    let prior = GammaBelief::new(1e-3, 1e-3).unwrap();
    let post = draws.iter().fold(prior, |b, &y| gamma_update(&b, y, 0.0));
    let mean = gamma_estimates(&post).mean;
    assert!((mean - 100.0).abs() < 5.0, "{mean}");
}

#[test]
fn batch_equals_sequential_on_exact_arithmetic() {
    // multiples of 1/64 keep every square and partial sum exact
    let errors: Vec<f64> = (0..500).map(|i| ((i * 37 % 129) as f64 - 64.0) / 64.0).collect();
    let prior = GammaBelief::new(2.0, 0.5).unwrap();
    let seq = errors.iter().fold(prior, |b, &e| gamma_update(&b, e, 0.0));
    assert_eq!(gamma_update_batch(&prior, &errors), seq);

    let mut reversed = errors.clone();
    reversed.reverse();
    assert_eq!(gamma_update_batch(&prior, &reversed), seq);
}

#[test]
fn bank_plugs_posterior_mean_into_precisions() {
    let sigmas = [1e-3, 1e-3, 1e-3, 1e-3, 1e-2, 1e-2];
    let mut bank = GammaBank::from_sigmas(2.0, sigmas).unwrap();
    let mut p = PrecisionSet::from_precisions(&PrecisionConfig::default());
    bank.apply(&mut p, &LearningParams::default());
    for (w, s) in p.sensor_omegas().iter().zip(sigmas) {
        assert!((w * s * s - 1.0).abs() < 1e-9);
    }
    let mut errors = [0.0; SENSOR_CHANNELS];
    errors[0] = 0.5;
    bank.update(&errors);
    bank.apply(&mut p, &LearningParams::default());
    assert!(p.sensor_omegas()[0] < 1e6 / 100.0);
    assert!(p.sensor_omegas()[1] > 1e6);
}
