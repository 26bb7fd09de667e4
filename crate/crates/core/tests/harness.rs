use ftaic::harness::{run_comparison_with, run_with, write_csv, Artifacts};
use ftaic::sensors::{FaultSpec, NoiseSpec};
use ftaic::{Error, Mode, ScenarioConfig, Waypoint};

fn healthy() -> ScenarioConfig {
    ScenarioConfig { faults: vec![], ..ScenarioConfig::default() }
}

fn short() -> ScenarioConfig {
    ScenarioConfig {
        duration: 4.0,
        waypoints: vec![Waypoint { t: 0.0, q: [0.6, -0.4] }],
        faults: vec![FaultSpec::encoder_freeze(0, 2000)],
        scoring_window: [1.0, 4.0],
        ..ScenarioConfig::default()
    }
}

fn csv_bytes(cfg: &ScenarioConfig, artifacts: &Artifacts) -> Vec<u8> {
    let mut buf = Vec::new();
    write_csv(&run_with(cfg, artifacts).unwrap().records, &mut buf).unwrap();
    buf
}

#[test]
fn noiseless_healthy_run_tracks_closely() {
    let cfg = ScenarioConfig { noise: NoiseSpec::noiseless(), ..healthy() };
    let r = ftaic::run_scenario(&cfg).unwrap();
    let mse = r.mse.healthy.unwrap();
    assert!(mse < 1e-4, "{mse}");
    assert_eq!(r.mse.faulty, None);
}

#[test]
fn arm_reaches_each_waypoint_before_the_next() {
    let cfg = healthy();
    let artifacts = Artifacts::prepare(&cfg).unwrap();
    for mode in [Mode::Fixed, Mode::PlAlways] {
        let r = run_with(&ScenarioConfig { mode, ..cfg.clone() }, &artifacts).unwrap();
        let mut ends: Vec<f64> = cfg.waypoints.iter().skip(1).map(|w| w.t).collect();
        ends.push(cfg.duration);
        for (w, end) in cfg.waypoints.iter().zip(ends) {
            let k = (end / cfg.plant.dt).round() as usize - 1;
            let q = r.records[k].truth.q;
            for j in 0..2 {
                assert!((q[j] - w.q[j]).abs() < 0.05, "{mode}: joint {j} at {} is {}", r.records[k].t, q[j]);
            }
        }
    }
}

#[test]
fn healthy_learned_precisions_stay_within_an_order_of_magnitude() {
    let cfg = ScenarioConfig { mode: Mode::PlAlways, ..healthy() };
    let r = ftaic::run_scenario(&cfg).unwrap();
    let n = cfg.noise;
    let nominal = [n.sigma_q, n.sigma_q, n.sigma_qdot, n.sigma_qdot, n.sigma_v, n.sigma_v].map(|s| 1.0 / (s * s));
    for rec in &r.records {
        for (ch, (w, w0)) in rec.omegas.iter().zip(nominal).enumerate() {
            assert!(*w > w0 / 10.0 && *w < w0 * 10.0, "channel {ch} at t={}: {w}", rec.t);
        }
    }
}

#[test]
fn frozen_encoder_without_tolerance_ruins_the_faulty_joint() {
    let r = ftaic::run_scenario(&ScenarioConfig::default()).unwrap();
    assert!(r.mse.faulty.unwrap() > 100.0 * r.mse.healthy.unwrap());
}

#[test]
fn runs_are_deterministic() {
    let cfg = ScenarioConfig { mode: Mode::PlAlways, ..short() };
    let artifacts = Artifacts::prepare(&cfg).unwrap();
    let a = run_with(&cfg, &artifacts).unwrap();
    let b = run_with(&cfg, &artifacts).unwrap();
    assert_eq!(a, b);
    assert_eq!(csv_bytes(&cfg, &artifacts), csv_bytes(&cfg, &artifacts));
    assert_eq!(Artifacts::prepare(&cfg).unwrap(), artifacts);

    let other = run_with(&ScenarioConfig { seed: 1, ..cfg.clone() }, &artifacts).unwrap();
    assert_ne!(a.records, other.records);
}

#[test]
fn csv_has_one_row_per_step() {
    let cfg = short();
    let artifacts = Artifacts::prepare(&cfg).unwrap();
    let text = String::from_utf8(csv_bytes(&cfg, &artifacts)).unwrap();
    assert_eq!(text.lines().count(), cfg.steps() + 1);
    assert_eq!(cfg.steps(), 4000);
}

#[test]
fn saved_artifacts_reproduce_the_run() {
    let cfg = ScenarioConfig { mode: Mode::Deterministic, ..short() };
    let artifacts = Artifacts::prepare(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    artifacts.save(dir.path()).unwrap();
    let loaded = Artifacts::load(dir.path()).unwrap();
    assert_eq!(loaded, artifacts);
    assert_eq!(run_with(&cfg, &loaded).unwrap(), run_with(&cfg, &artifacts).unwrap());
}

#[test]
fn divergence_reports_seed_and_config() {
    let base = short();
    let artifacts = Artifacts::prepare(&base).unwrap();
    let mut cfg = ScenarioConfig { seed: 77, ..base };
    cfg.gains.kappa_u = 1e9;
    match run_with(&cfg, &artifacts) {
        Err(Error::Run { seed, config_hash, source }) => {
            assert_eq!(seed, 77);
            assert_eq!(config_hash, cfg.config_hash());
            assert!(matches!(*source, Error::Diverged { .. }));
        }
        other => panic!("expected a run error, got {:?}", other.map(|r| r.mse)),
    }
}

#[test]
fn every_mode_completes() {
    let cfg = short();
    let artifacts = Artifacts::prepare(&cfg).unwrap();
    for mode in Mode::ALL {
        let r = run_with(&ScenarioConfig { mode, ..cfg.clone() }, &artifacts).unwrap();
        assert_eq!(r.records.len(), cfg.steps());
        assert!(r.mse.faulty.unwrap().is_finite() && r.mse.healthy.unwrap() >= 0.0);
    }
}

#[test]
fn comparison_table_is_reproducible() {
    let cfg = short();
    let artifacts = Artifacts::prepare(&cfg).unwrap();
    let seeds = [0, 1, 2, 3, 4];
    let a = run_comparison_with(&cfg, &[Mode::Fixed], &seeds, &artifacts).unwrap();
    assert_eq!(a.len(), 1);
    assert_eq!(a[0].seeds, 5);
    assert_eq!(a, run_comparison_with(&cfg, &[Mode::Fixed], &seeds, &artifacts).unwrap());

    let two = run_comparison_with(&cfg, &[Mode::PlAlways, Mode::Fixed], &seeds, &artifacts).unwrap();
    assert_eq!(two[1], a[0]);
}

#[test]
fn shipped_config_matches_defaults() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/frozen_encoder.toml");
    assert_eq!(ScenarioConfig::load(&path).unwrap(), ScenarioConfig::default());
}
