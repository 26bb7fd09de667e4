use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("simulation diverged at step {step}: {what}")]
    Diverged { step: usize, what: &'static str },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("kernel matrix is not positive definite (try a larger noise variance, got {noise_variance})")]
    IllConditionedKernel { noise_variance: f64 },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("mode of Gamma({shape}, {rate}) is undefined for shape <= 1")]
    UndefinedMode { shape: f64, rate: f64 },

    #[error("recovery requested without a detected fault")]
    NotDetected,

    #[error("empty scoring window")]
    EmptyWindow,

    #[error("run failed (config hash {config_hash:016x}, seed {seed}): {source}")]
    Run {
        config_hash: u64,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("artifact format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
