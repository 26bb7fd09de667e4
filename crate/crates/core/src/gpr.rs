//! Gaussian process model of the camera: maps believed joint angles to the
//! expected (distorted) end-effector reading, with a closed-form Jacobian.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FTGP";
const VERSION: u32 = 1;

/// Squared-exponential kernel hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GprHyperparams {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl Default for GprHyperparams {
    fn default() -> Self {
        Self { length_scale: 0.5, signal_variance: 1.0, noise_variance: 1e-4 }
    }
}

impl GprHyperparams {
    fn validate(&self) -> Result<()> {
        if !(self.length_scale > 0.0 && self.signal_variance > 0.0 && self.noise_variance >= 0.0) {
            return Err(Error::Config(
                "GPR needs length_scale > 0, signal_variance > 0, noise_variance >= 0".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    fn kernel(&self, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
        let l2 = self.length_scale * self.length_scale;
        self.signal_variance * (-(a - b).norm_squared() / (2.0 * l2)).exp()
    }
}

/// A fitted model. Immutable after [`GprModel::fit`].
#[derive(Clone, Debug, PartialEq)]
pub struct GprModel {
    hyper: GprHyperparams,
    inputs: Vec<Vector2<f64>>,
    targets: Vec<Vector2<f64>>,
    /// (K + noise I)^-1 Y, one row per training point.
    weights: Vec<Vector2<f64>>,
}

impl GprModel {
    /// Fits both output dimensions with shared hyperparameters.
    pub fn fit(inputs: &[Vector2<f64>], targets: &[Vector2<f64>], hyper: GprHyperparams) -> Result<Self> {
        hyper.validate()?;
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::Config(format!(
                "GPR fit needs matching non-empty inputs/targets (got {} and {})",
                inputs.len(),
                targets.len()
            )));
        }
        let n = inputs.len();
        let gram = DMatrix::from_fn(n, n, |i, j| {
            let k = hyper.kernel(&inputs[i], &inputs[j]);
            if i == j {
                k + hyper.noise_variance
            } else {
                k
            }
        });
        let chol = gram
            .cholesky()
            .ok_or(Error::IllConditionedKernel { noise_variance: hyper.noise_variance })?;
        let y = DMatrix::from_fn(n, 2, |i, d| targets[i][d]);
        let a = chol.solve(&y);
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::IllConditionedKernel { noise_variance: hyper.noise_variance });
        }
        let weights = (0..n).map(|i| Vector2::new(a[(i, 0)], a[(i, 1)])).collect();
        Ok(Self { hyper, inputs: inputs.to_vec(), targets: targets.to_vec(), weights })
    }

    pub fn hyperparams(&self) -> &GprHyperparams {
        &self.hyper
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[Vector2<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[Vector2<f64>] {
        &self.targets
    }

    pub fn weights(&self) -> &[Vector2<f64>] {
        &self.weights
    }

    /// Posterior mean g_v(mu).
    pub fn predict(&self, mu: &Vector2<f64>) -> Vector2<f64> {
        self.inputs
            .iter()
            .zip(&self.weights)
            .fold(Vector2::zeros(), |acc, (x, w)| acc + w * self.hyper.kernel(mu, x))
    }

    /// Jacobian of the posterior mean; row i is the gradient of output i.
    pub fn gradient(&self, mu: &Vector2<f64>) -> Matrix2<f64> {
        self.predict_with_gradient(mu).1
    }

    /// Mean and Jacobian in a single pass over the training set.
    pub fn predict_with_gradient(&self, mu: &Vector2<f64>) -> (Vector2<f64>, Matrix2<f64>) {
        let inv_l2 = 1.0 / (self.hyper.length_scale * self.hyper.length_scale);
        let mut mean = Vector2::zeros();
        let mut jac = Matrix2::zeros();
        for (x, w) in self.inputs.iter().zip(&self.weights) {
            let k = self.hyper.kernel(mu, x);
            mean += w * k;
            // d k / d mu = -k (mu - x) / l^2
            let dk = (mu - x) * (-k * inv_l2);
            jac += w * dk.transpose();
        }
        (mean, jac)
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

    /// Layout (little endian): magic, u32 version, u64 n, length scale,
    /// signal variance, noise variance, then inputs, targets and weights as
    /// row-major n x 2 blocks of f64.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.inputs.len() as u64).to_le_bytes())?;
        for v in [self.hyper.length_scale, self.hyper.signal_variance, self.hyper.noise_variance] {
            w.write_all(&v.to_le_bytes())?;
        }
        for block in [&self.inputs, &self.targets, &self.weights] {
            for row in block.iter() {
                w.write_all(&row[0].to_le_bytes())?;
                w.write_all(&row[1].to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a GPR model file".into()));
        }
        let version = u32::from_le_bytes(read_array(r)?);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported GPR model version {version}")));
        }
        let n = u64::from_le_bytes(read_array(r)?) as usize;
        let hyper = GprHyperparams {
            length_scale: read_f64(r)?,
            signal_variance: read_f64(r)?,
            noise_variance: read_f64(r)?,
        };
        let mut block = || -> Result<Vec<Vector2<f64>>> {
            (0..n).map(|_| Ok(Vector2::new(read_f64(r)?, read_f64(r)?))).collect()
        };
        let inputs = block()?;
        let targets = block()?;
        let weights = block()?;
        Ok(Self { hyper, inputs, targets, weights })
    }
}

pub(crate) fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

/// Uniform `n x n` grid over a rectangle in joint space.
pub fn joint_grid(q1: (f64, f64), q2: (f64, f64), n: usize) -> Vec<Vector2<f64>> {
    let lin = |(lo, hi): (f64, f64), i: usize| {
        if n <= 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    };
    (0..n)
        .flat_map(|i| (0..n).map(move |j| Vector2::new(lin(q1, i), lin(q2, j))))
        .collect()
}
