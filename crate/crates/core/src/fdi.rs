//! Deterministic fault detection, isolation and recovery.
//!
//! Residuals are sensory prediction errors. Two split estimators track the
//! arm from proprioception only and from the camera only, so that an
//! inconsistent sensor group shows up in its own residual. Each residual
//! group is scored by a Mahalanobis distance against moments sampled in
//! healthy conditions and compared with the threshold n / alpha.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::controller::{
    sensory_errors, update_beliefs, BeliefState, CameraModel, ControllerGains, Factor, PrecisionConfig,
    PrecisionSet, Target,
};
use crate::error::{Error, Result};
use crate::gpr::{read_array, read_f64};
use crate::sensors::SensorBundle;

const MAGIC: &[u8; 4] = b"FTRM";
const VERSION: u32 = 1;

/// Proprioceptive (position then velocity) and camera residuals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Residuals {
    pub r_p: Vector4<f64>,
    pub r_v: Vector2<f64>,
}

/// r_p = [y_q - mu, y_qdot - mu'], r_v = y_v - g_v(mu).
pub fn compute_residual<C: CameraModel + ?Sized>(obs: &SensorBundle, belief: &BeliefState, camera: &C) -> Residuals {
    let (g_v, _) = camera.predict_with_gradient(&belief.mu);
    let (eq, eqd, ev) = sensory_errors(belief, obs, &g_v);
    Residuals { r_p: Vector4::new(eq[0], eq[1], eqd[0], eqd[1]), r_v: ev }
}

/// Healthy residual moments for one residual group.
#[derive(Clone, Debug)]
pub struct ResidualMonitor {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    cov_inv: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: f64,
}

impl PartialEq for ResidualMonitor {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.cov == other.cov && self.alpha == other.alpha
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha must lie in (0, 1], got {alpha}")))
    }
}

impl ResidualMonitor {
    /// Sample mean and covariance of healthy residuals.
    ///
    /// A ridge of 1e-12 times the trace is added when the sample covariance
    /// is not positive definite on its own.
    pub fn calibrate<S: AsRef<[f64]>>(samples: &[S], alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let n = samples.first().map(|s| s.as_ref().len()).unwrap_or(0);
        if n == 0 {
            return Err(Error::Calibration("no residual samples".into()));
        }
        if samples.len() < 10 * n {
            return Err(Error::Calibration(format!(
                "need at least {} samples for dimension {n}, got {}",
                10 * n,
                samples.len()
            )));
        }
        if samples.iter().any(|s| s.as_ref().len() != n) {
            return Err(Error::Calibration("residual samples differ in dimension".into()));
        }
        let m = samples.len() as f64;
        let mut mean = DVector::zeros(n);
        for s in samples {
            mean += DVector::from_column_slice(s.as_ref());
        }
        mean /= m;
        let mut cov = DMatrix::zeros(n, n);
        for s in samples {
            let d = DVector::from_column_slice(s.as_ref()) - &mean;
            cov.ger(1.0, &d, &d, 1.0);
        }
        cov /= m - 1.0;
        if cov.clone().cholesky().is_none() {
            let ridge = 1e-12 * cov.trace();
            for i in 0..n {
                cov[(i, i)] += ridge;
            }
        }
        Self::from_moments(mean, cov, alpha)
    }

    /// Builds a monitor from given moments; the covariance must be positive
    /// definite.
    pub fn from_moments(mean: DVector<f64>, cov: DMatrix<f64>, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::Calibration("covariance shape does not match mean".into()));
        }
        if !cov.iter().all(|v| v.is_finite()) {
            return Err(Error::Calibration("non-finite residual covariance".into()));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Calibration("residual covariance is not positive definite".into()))?;
        let cov_inv = chol.inverse();
        Ok(Self { mean, cov, cov_inv, chol, alpha })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn inverse_covariance(&self) -> &DMatrix<f64> {
        &self.cov_inv
    }

    /// n / alpha.
    pub fn threshold(&self) -> f64 {
        self.dim() as f64 / self.alpha
    }

    /// Same moments with a different robustness level.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::from_moments(self.mean.clone(), self.cov.clone(), alpha)
    }

    pub fn mahalanobis(&self, r: &[f64]) -> f64 {
        assert_eq!(r.len(), self.dim(), "residual dimension mismatch");
        let d = DVector::from_column_slice(r) - &self.mean;
        let z = self.chol.l().solve_lower_triangular(&d).expect("cholesky factor is invertible");
        z.norm()
    }

    /// True iff the distance exceeds the threshold; the boundary is healthy.
    pub fn detect(&self, d_m: f64) -> bool {
        d_m > self.threshold()
    }

    fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        w.write_all(&self.alpha.to_le_bytes())?;
        for v in self.mean.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                w.write_all(&self.cov[(i, j)].to_le_bytes())?;
            }
        }
        Ok(())
    }

    fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let n = u64::from_le_bytes(read_array(r)?) as usize;
        if n == 0 || n > 64 {
            return Err(Error::Format(format!("implausible residual dimension {n}")));
        }
        let alpha = read_f64(r)?;
        let mean = (0..n).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
        let cov = (0..n * n).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
        Self::from_moments(DVector::from_vec(mean), DMatrix::from_row_slice(n, n, &cov), alpha)
    }
}

/// The proprioceptive and camera monitors used together for isolation.
#[derive(Clone, Debug, PartialEq)]
pub struct MonitorPair {
    pub proprioceptive: ResidualMonitor,
    pub visual: ResidualMonitor,
}

impl MonitorPair {
    pub fn calibrate(samples: &[Residuals], alpha: f64) -> Result<Self> {
        let p: Vec<[f64; 4]> = samples.iter().map(|r| r.r_p.into()).collect();
        let v: Vec<[f64; 2]> = samples.iter().map(|r| r.r_v.into()).collect();
        Ok(Self {
            proprioceptive: ResidualMonitor::calibrate(&p, alpha)?,
            visual: ResidualMonitor::calibrate(&v, alpha)?,
        })
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Ok(Self {
            proprioceptive: self.proprioceptive.with_alpha(alpha)?,
            visual: self.visual.with_alpha(alpha)?,
        })
    }

    /// (d_M proprioceptive, d_M camera).
    pub fn distances(&self, r: &Residuals) -> (f64, f64) {
        (self.proprioceptive.mahalanobis(r.r_p.as_slice()), self.visual.mahalanobis(r.r_v.as_slice()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }

    /// Layout (little endian): magic, u32 version, then per monitor u64 n,
    /// alpha, mean and row-major covariance as f64.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        self.proprioceptive.write_to(w)?;
        self.visual.write_to(w)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let magic: [u8; 4] = read_array(r)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a residual monitor file".into()));
        }
        let version = u32::from_le_bytes(read_array(r)?);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported monitor version {version}")));
        }
        Ok(Self { proprioceptive: ResidualMonitor::read_from(r)?, visual: ResidualMonitor::read_from(r)? })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IsolatedSource {
    #[default]
    None,
    Encoders,
    Camera,
}

impl IsolatedSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            IsolatedSource::None => "none",
            IsolatedSource::Encoders => "encoders",
            IsolatedSource::Camera => "camera",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FaultVerdict {
    pub detected: bool,
    pub isolated_source: IsolatedSource,
    /// Step at which the fault was declared.
    pub step: Option<usize>,
}

/// Persistence filter over per-step detections. The verdict latches once a
/// source has been isolated.
#[derive(Clone, Debug, PartialEq)]
pub struct Isolator {
    persistence: usize,
    run_p: usize,
    run_v: usize,
    verdict: FaultVerdict,
}

impl Isolator {
    pub fn new(persistence: usize) -> Self {
        Self { persistence: persistence.max(1), run_p: 0, run_v: 0, verdict: FaultVerdict::default() }
    }

    pub fn verdict(&self) -> FaultVerdict {
        self.verdict
    }

    /// Feeds one step of distances. When both groups have persisted, the
    /// larger distance relative to its own threshold wins.
    pub fn update(&mut self, d_p: f64, d_v: f64, monitors: &MonitorPair, step: usize) -> FaultVerdict {
        if self.verdict.detected {
            return self.verdict;
        }
        let over_p = monitors.proprioceptive.detect(d_p);
        let over_v = monitors.visual.detect(d_v);
        self.run_p = if over_p { self.run_p + 1 } else { 0 };
        self.run_v = if over_v { self.run_v + 1 } else { 0 };
        let p_ok = self.run_p >= self.persistence;
        let v_ok = self.run_v >= self.persistence;
        let source = match (p_ok, v_ok) {
            (false, false) => return self.verdict,
            (true, false) => IsolatedSource::Encoders,
            (false, true) => IsolatedSource::Camera,
            (true, true) => {
                if d_p / monitors.proprioceptive.threshold() >= d_v / monitors.visual.threshold() {
                    IsolatedSource::Encoders
                } else {
                    IsolatedSource::Camera
                }
            }
        };
        self.verdict = FaultVerdict { detected: true, isolated_source: source, step: Some(step) };
        self.verdict
    }
}

/// Zeroes the precision of the isolated sensor group (and drops its log
/// term). Applying it twice changes nothing.
pub fn recover(precisions: &PrecisionSet, verdict: &FaultVerdict) -> Result<PrecisionSet> {
    if !verdict.detected {
        return Err(Error::NotDetected);
    }
    let mut out = *precisions;
    match verdict.isolated_source {
        IsolatedSource::Encoders => out.switch_off(Factor::Encoders),
        IsolatedSource::Camera => out.switch_off(Factor::Camera),
        IsolatedSource::None => {}
    }
    Ok(out)
}

/// Update settings of one split estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorParams {
    pub kappa_mu: f64,
    pub kappa_mu_prime: f64,
    pub omega_x: [f64; 4],
}

impl EstimatorParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.kappa_mu, self.kappa_mu_prime].into_iter().chain(self.omega_x);
        for v in all {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config("estimator gains and precisions must be > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdiParams {
    pub alpha: f64,
    pub persistence: usize,
    /// Seconds of healthy data used to calibrate the monitors.
    pub calibration_duration: f64,
    /// Estimator driven by encoders and velocity sensors only.
    pub proprioceptive: EstimatorParams,
    /// Estimator driven by the camera only.
    pub visual: EstimatorParams,
}

impl Default for FdiParams {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            persistence: 10,
            calibration_duration: 5.0,
            proprioceptive: EstimatorParams { kappa_mu: 1e-6, kappa_mu_prime: 1e-3, omega_x: [1e9, 1e9, 1.0, 1.0] },
            visual: EstimatorParams { kappa_mu: 3e-2, kappa_mu_prime: 1e-3, omega_x: [1.0; 4] },
        }
    }
}

impl FdiParams {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.persistence == 0 {
            return Err(Error::Config("persistence must be >= 1".into()));
        }
        if self.calibration_duration.is_nan() || self.calibration_duration <= 0.0 {
            return Err(Error::Config("calibration_duration must be > 0".into()));
        }
        self.proprioceptive.validate()?;
        self.visual.validate()
    }
}

/// Stand-in camera for the proprioceptive estimator, whose camera factor is
/// switched off anyway.
struct Blind;

impl CameraModel for Blind {
    fn predict_with_gradient(&self, _mu: &Vector2<f64>) -> (Vector2<f64>, Matrix2<f64>) {
        (Vector2::zeros(), Matrix2::zeros())
    }
}

/// The two split estimators. They never influence control.
#[derive(Clone, Debug)]
pub struct SplitEstimators {
    pub proprioceptive: BeliefState,
    pub visual: BeliefState,
    prec_p: PrecisionSet,
    prec_v: PrecisionSet,
    gains_p: ControllerGains,
    gains_v: ControllerGains,
}

impl SplitEstimators {
    pub fn new(
        start: Vector2<f64>,
        sensors: &PrecisionConfig,
        params: &FdiParams,
        gains: &ControllerGains,
    ) -> Self {
        let with = |e: &EstimatorParams| {
            let prec = PrecisionSet::from_precisions(&PrecisionConfig { omega_x: e.omega_x, ..*sensors });
            let g = ControllerGains { kappa_mu: e.kappa_mu, kappa_mu_prime: e.kappa_mu_prime, ..*gains };
            (prec, g)
        };
        let (mut prec_p, gains_p) = with(&params.proprioceptive);
        prec_p.switch_off(Factor::Camera);
        prec_p.switch_off(Factor::ActionPrior);
        let (mut prec_v, gains_v) = with(&params.visual);
        prec_v.switch_off(Factor::Encoders);
        prec_v.switch_off(Factor::Velocity);
        prec_v.switch_off(Factor::ActionPrior);
        Self {
            proprioceptive: BeliefState::at(start),
            visual: BeliefState::at(start),
            prec_p,
            prec_v,
            gains_p,
            gains_v,
        }
    }

    /// Residuals of the incoming beliefs against `obs`, then one update of
    /// each estimator.
    pub fn step<C: CameraModel + ?Sized>(&mut self, obs: &SensorBundle, camera: &C, step: usize) -> Result<Residuals> {
        let r_p = compute_residual(obs, &self.proprioceptive, &Blind).r_p;
        let r_v = compute_residual(obs, &self.visual, camera).r_v;
        let target = Target { mu_d: Vector2::zeros() };
        self.proprioceptive =
            update_beliefs(&self.proprioceptive, obs, &target, &self.prec_p, &self.gains_p, &Blind, step)?;
        self.visual = update_beliefs(&self.visual, obs, &target, &self.prec_v, &self.gains_v, camera, step)?;
        Ok(Residuals { r_p, r_v })
    }
}
