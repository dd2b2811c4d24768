use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("model parameter `{name}` must be positive, got {value}")]
    NotPositive { name: &'static str, value: f64 },
    #[error("model parameter `{name}` must be non-negative, got {value}")]
    Negative { name: &'static str, value: f64 },
    #[error("center of mass of link {link} lies beyond the link length")]
    ComOutsideLink { link: u8 },
    #[error("integration step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("robot must be `acrobot` or `pendubot`")]
    UnknownRobot,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OcpError {
    #[error("horizon needs at least one shooting interval, got {0}")]
    NoIntervals(usize),
    #[error("prediction horizon must be positive, got {0}")]
    NonPositiveHorizon(f64),
    #[error("cost weight `{name}` must be non-negative and finite")]
    InvalidWeight { name: &'static str },
    #[error("node scaling has {got} entries, expected {expected}")]
    ScalingLength { got: usize, expected: usize },
    #[error("node scaling entries must be positive")]
    NonPositiveScaling,
    #[error("lower bound exceeds upper bound for `{name}`")]
    InvertedBounds { name: &'static str },
    #[error("integrator step must be positive, got {0}")]
    NonPositiveIntegratorStep(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("invalid controller option `{name}`: {reason}")]
    InvalidOption { name: &'static str, reason: &'static str },
    #[error("measurement is not finite")]
    NonFiniteMeasurement,
    #[error(transparent)]
    Ocp(#[from] OcpError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid episode setting `{name}`: {reason}")]
    InvalidSetting { name: &'static str, reason: &'static str },
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Model(#[from] ModelError),
}
