//! Closed-loop scenario runs, scoring and multi-seed comparisons.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::config::{Mode, ScenarioConfig};
use crate::controller::{
    control_output, descend, evaluate, gradient_of, predict_state, BeliefState, PrecisionSet, Target,
    SENSOR_CHANNELS,
};
use crate::error::{Error, Result};
use crate::fdi::{recover, FaultVerdict, IsolatedSource, Isolator, MonitorPair, Residuals, SplitEstimators};
use crate::gpr::{joint_grid, GprModel};
use crate::plant::{forward_kinematics, step_dynamics, CartesianPoint, JointState};
use crate::precision::{step_log_precisions, GammaBank};
use crate::sensors::{FaultKind, FaultSpec, SensorBundle, SensorModel, SensorSuite};

/// Offset between a run's seed and the seed of its healthy calibration run.
const CALIBRATION_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

pub const CSV_HEADER: [&str; 25] = [
    "t", "q1", "q2", "qd1", "qd2", "mu1", "mu2", "mup1", "mup2", "yq1", "yq2", "yv1", "yv2", "tau1", "tau2", "wq1",
    "wq2", "wqd1", "wqd2", "wv1", "wv2", "dMp", "dMv", "detected", "isolated",
];

pub const COMPARISON_HEADER: [&str; 4] = ["mode", "faulty_joint_mse", "healthy_joint_mse", "seeds"];

/// Everything recorded for one control tick.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    /// True state when the observation was taken.
    pub truth: JointState,
    /// Belief after this tick's update.
    pub belief: BeliefState,
    pub obs: SensorBundle,
    pub torque: Vector2<f64>,
    /// Sensor precisions in use after this tick, channel order q1, q2, qd1,
    /// qd2, v1, v2.
    pub omegas: [f64; SENSOR_CHANNELS],
    pub d_m_p: f64,
    pub d_m_v: f64,
    pub verdict: FaultVerdict,
}

/// Mean squared position belief error per joint group. A group is `None`
/// when it has no joints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MseSplit {
    pub faulty: Option<f64>,
    pub healthy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub records: Vec<StepRecord>,
    pub mse: MseSplit,
    pub verdict: FaultVerdict,
}

/// Camera model and FDI monitors shared by the runs of one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifacts {
    pub camera: GprModel,
    pub monitors: MonitorPair,
}

pub const CAMERA_FILE: &str = "camera.gpr";
pub const MONITOR_FILE: &str = "monitors.fdi";

impl Artifacts {
    /// Fits the camera model, then calibrates the monitors on a healthy run.
    pub fn prepare(cfg: &ScenarioConfig) -> Result<Self> {
        let camera = fit_camera(cfg)?;
        let monitors = calibrate_monitors(cfg, &camera)?;
        Ok(Self { camera, monitors })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.camera.save(&dir.join(CAMERA_FILE))?;
        self.monitors.save(&dir.join(MONITOR_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self { camera: GprModel::load(&dir.join(CAMERA_FILE))?, monitors: MonitorPair::load(&dir.join(MONITOR_FILE))? })
    }
}

fn sensor_model(cfg: &ScenarioConfig) -> SensorModel {
    SensorModel { noise: cfg.noise, distortion: cfg.distortion, center: CartesianPoint::ORIGIN, scale: cfg.plant.reach() }
}

/// Fits the camera model on a grid over the region the scenario visits, with
/// noisy distorted camera readings as targets.
pub fn fit_camera(cfg: &ScenarioConfig) -> Result<GprModel> {
    let (r1, r2) = cfg.joint_region();
    let inputs = joint_grid(r1, r2, cfg.camera.grid);
    let model = sensor_model(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.camera.training_seed);
    let targets: Vec<Vector2<f64>> = inputs
        .iter()
        .map(|q| {
            let clean = model.camera_truth(forward_kinematics(q, &cfg.plant)).to_vector();
            let nx: f64 = StandardNormal.sample(&mut rng);
            let ny: f64 = StandardNormal.sample(&mut rng);
            clean + Vector2::new(nx, ny) * cfg.noise.sigma_v
        })
        .collect();
    GprModel::fit(&inputs, &targets, cfg.camera.hyperparams)
}

/// Collects split-estimator residuals over the first `calibration_duration`
/// seconds of a fault-free run and calibrates both monitors.
pub fn calibrate_monitors(cfg: &ScenarioConfig, camera: &GprModel) -> Result<MonitorPair> {
    let samples = calibration_residuals(cfg, camera)?;
    MonitorPair::calibrate(&samples, cfg.fdi.alpha)
}

pub fn calibration_residuals(cfg: &ScenarioConfig, camera: &GprModel) -> Result<Vec<Residuals>> {
    let mut healthy = cfg.clone();
    healthy.faults.clear();
    healthy.mode = Mode::Fixed;
    healthy.seed = cfg.seed.wrapping_add(CALIBRATION_SEED_OFFSET);
    healthy.duration = cfg.fdi.calibration_duration;
    let mut samples = Vec::with_capacity(healthy.steps());
    simulate(&healthy, camera, None, |_, r| samples.push(*r)).map_err(|e| wrap(&healthy, e))?;
    Ok(samples)
}

fn wrap(cfg: &ScenarioConfig, e: Error) -> Error {
    Error::Run { config_hash: cfg.config_hash(), seed: cfg.seed, source: Box::new(e) }
}

/// Runs one scenario, fitting and calibrating what it needs first.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunResult> {
    cfg.validate()?;
    let artifacts = Artifacts::prepare(cfg)?;
    run_with(cfg, &artifacts)
}

/// Runs one scenario with a given camera model and monitors.
pub fn run_with(cfg: &ScenarioConfig, artifacts: &Artifacts) -> Result<RunResult> {
    cfg.validate()?;
    let records = simulate(cfg, &artifacts.camera, Some(&artifacts.monitors), |_, _| {}).map_err(|e| wrap(cfg, e))?;
    let mse = compute_mse(&records, &cfg.faults, cfg.scoring_window)?;
    let verdict = records.last().map(|r| r.verdict).unwrap_or_default();
    Ok(RunResult { records, mse, verdict })
}

/// The closed loop: sensors, FDI, precision step, belief update, torque,
/// plant. `on_residual` sees every split-estimator residual.
fn simulate(
    cfg: &ScenarioConfig,
    camera: &GprModel,
    monitors: Option<&MonitorPair>,
    mut on_residual: impl FnMut(usize, &Residuals),
) -> Result<Vec<StepRecord>> {
    let dt = cfg.plant.dt;
    let gains = &cfg.gains;
    let start = Vector2::new(cfg.start[0], cfg.start[1]);
    let mut truth = JointState::at_rest(start);
    let mut belief = BeliefState::at(start);
    let mut sensors = SensorSuite::new(sensor_model(cfg), cfg.faults.clone(), cfg.seed)?;
    let mut precisions = PrecisionSet::from_precisions(&cfg.precisions);
    let mut split = SplitEstimators::new(start, &cfg.precisions, &cfg.fdi, gains);
    let mut isolator = Isolator::new(cfg.fdi.persistence);
    let precision_mode = cfg.mode.precision_mode();
    let mut bank = match cfg.mode {
        Mode::Bayesian => {
            let n = cfg.noise;
            let sigmas = [n.sigma_q, n.sigma_q, n.sigma_qdot, n.sigma_qdot, n.sigma_v, n.sigma_v];
            Some(GammaBank::from_sigmas(cfg.gamma_prior_shape, sigmas)?)
        }
        _ => None,
    };
    let mut recovered = false;

    let steps = cfg.steps();
    let mut records = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = k as f64 * dt;
        let target = Target { mu_d: cfg.target_at(t) };
        let ee = forward_kinematics(&truth.q, &cfg.plant);
        let obs = sensors.read(&truth, ee, k)?;

        let residuals = split.step(&obs, camera, k)?;
        on_residual(k, &residuals);
        let (d_m_p, d_m_v, verdict) = match monitors {
            Some(m) => {
                let (dp, dv) = m.distances(&residuals);
                (dp, dv, isolator.update(dp, dv, m, k))
            }
            None => (f64::NAN, f64::NAN, FaultVerdict::default()),
        };

        if cfg.mode == Mode::Deterministic
            && verdict.detected
            && verdict.isolated_source != IsolatedSource::None
            && !recovered
        {
            precisions = recover(&precisions, &verdict)?;
            recovered = true;
        }

        let x_hat = predict_state(&belief, dt);
        let eval = evaluate(&belief, &obs, &x_hat, &target, gains, camera);
        let channel_errors = eval.errors.sensor_channels();
        match &mut bank {
            Some(bank) => {
                bank.update(&channel_errors);
                bank.apply(&mut precisions, &cfg.learning);
            }
            None => {
                precisions =
                    step_log_precisions(&precisions, &channel_errors, &cfg.learning, dt, precision_mode, verdict.detected);
            }
        }
        belief = descend(&belief, &gradient_of(&eval, &precisions, gains), gains);
        if !belief.is_finite() {
            return Err(Error::Diverged { step: k, what: "non-finite belief" });
        }

        let torque = control_output(&belief, gains.tau_max);
        records.push(StepRecord {
            t,
            truth,
            belief,
            obs,
            torque,
            omegas: precisions.sensor_omegas(),
            d_m_p,
            d_m_v,
            verdict,
        });
        truth = step_dynamics(&truth, &torque, &cfg.plant, k)?;
    }
    Ok(records)
}

/// Joints whose encoder carries a fault.
pub fn faulty_joints(faults: &[FaultSpec]) -> [bool; 2] {
    let mut out = [false; 2];
    for f in faults {
        match f.kind {
            FaultKind::EncoderFreeze if f.channel < 2 => out[f.channel] = true,
            FaultKind::EncoderFreeze => {}
        }
    }
    out
}

/// Mean over the window (inclusive) of the squared position belief error,
/// averaged over the joints of each group.
pub fn compute_mse(records: &[StepRecord], faults: &[FaultSpec], window: [f64; 2]) -> Result<MseSplit> {
    let faulty = faulty_joints(faults);
    let mut sums = [0.0; 2];
    let mut count = 0usize;
    for r in records.iter().filter(|r| r.t >= window[0] && r.t <= window[1]) {
        for (j, s) in sums.iter_mut().enumerate() {
            let e = r.belief.mu[j] - r.truth.q[j];
            *s += e * e;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyWindow);
    }
    let group = |want: bool| {
        let joints: Vec<f64> = (0..2).filter(|&j| faulty[j] == want).map(|j| sums[j] / count as f64).collect();
        (!joints.is_empty()).then(|| joints.iter().sum::<f64>() / joints.len() as f64)
    };
    Ok(MseSplit { faulty: group(true), healthy: group(false) })
}

pub fn write_csv<W: Write>(records: &[StepRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        let mut row: Vec<String> = [
            r.t,
            r.truth.q[0],
            r.truth.q[1],
            r.truth.qdot[0],
            r.truth.qdot[1],
            r.belief.mu[0],
            r.belief.mu[1],
            r.belief.mu_prime[0],
            r.belief.mu_prime[1],
            r.obs.y_q[0],
            r.obs.y_q[1],
            r.obs.y_v[0],
            r.obs.y_v[1],
            r.torque[0],
            r.torque[1],
        ]
        .iter()
        .chain(&r.omegas)
        .chain(&[r.d_m_p, r.d_m_v])
        .map(|v| v.to_string())
        .collect();
        row.push(u8::from(r.verdict.detected).to_string());
        row.push(r.verdict.isolated_source.as_str().to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(records: &[StepRecord], path: &Path) -> Result<()> {
    write_csv(records, std::io::BufWriter::new(std::fs::File::create(path)?))
}

/// One row of the comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub mode: Mode,
    pub faulty_joint_mse: Option<f64>,
    pub healthy_joint_mse: Option<f64>,
    pub seeds: usize,
}

/// Runs every (mode, seed) pair in parallel with shared artifacts and
/// averages the MSE over seeds.
pub fn run_comparison(base: &ScenarioConfig, modes: &[Mode], seeds: &[u64]) -> Result<Vec<ComparisonRow>> {
    if seeds.len() < 5 {
        return Err(Error::Config(format!("comparison needs at least 5 seeds, got {}", seeds.len())));
    }
    base.validate()?;
    let artifacts = Artifacts::prepare(base)?;
    run_comparison_with(base, modes, seeds, &artifacts)
}

pub fn run_comparison_with(
    base: &ScenarioConfig,
    modes: &[Mode],
    seeds: &[u64],
    artifacts: &Artifacts,
) -> Result<Vec<ComparisonRow>> {
    let jobs: Vec<(Mode, u64)> = modes.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
    let results: Vec<MseSplit> = jobs
        .par_iter()
        .map(|&(mode, seed)| {
            let cfg = ScenarioConfig { mode, seed, ..base.clone() };
            run_with(&cfg, artifacts).map(|r| r.mse)
        })
        .collect::<Result<_>>()?;
    let mean = |xs: Vec<Option<f64>>| -> Option<f64> {
        let v: Option<Vec<f64>> = xs.into_iter().collect();
        v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    Ok(modes
        .iter()
        .zip(results.chunks(seeds.len()))
        .map(|(&mode, chunk)| ComparisonRow {
            mode,
            faulty_joint_mse: mean(chunk.iter().map(|m| m.faulty).collect()),
            healthy_joint_mse: mean(chunk.iter().map(|m| m.healthy).collect()),
            seeds: seeds.len(),
        })
        .collect())
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COMPARISON_HEADER)?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.mode.as_str().to_string(),
            fmt(r.faulty_joint_mse),
            fmt(r.healthy_joint_mse),
            r.seeds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
