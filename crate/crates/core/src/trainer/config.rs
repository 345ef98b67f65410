use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.0,
            beta2: 0.999,
            eps: 3e-6,
        }
    }
}

/// How per-step validation changes are turned into per-image deltas.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValuationMode {
    /// Change across the image's own training step.
    #[default]
    StepDelta,
    /// Change since the image's previous appearance.
    RevisitDelta,
    /// Change from a frozen snapshot, reverted after every step of the
    /// designated epoch.
    FixedState,
}

impl std::str::FromStr for ValuationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "step_delta" => Ok(Self::StepDelta),
            "revisit_delta" => Ok(Self::RevisitDelta),
            "fixed_state" => Ok(Self::FixedState),
            other => Err(Error::invalid(format!("unknown valuation mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for ValuationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::StepDelta => "step_delta",
            Self::RevisitDelta => "revisit_delta",
            Self::FixedState => "fixed_state",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: u32,
    pub rays_per_step: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub n_samples_per_ray: usize,
    pub seed: u64,
    pub eval_every_step: bool,
    pub valuation_mode: ValuationMode,
    /// Validation renders use this fraction of the native resolution.
    pub valuation_resolution_scale: f64,
    pub grid_dims: [usize; 3],
    /// Initial raw parameters of every cell: density, then rgb.
    pub init_raw: [f64; 4],
    /// Stratified jitter of sample positions, drawn from the ray stream.
    pub jitter: bool,
    /// Epoch measured from a frozen snapshot in `fixed_state` mode; `None`
    /// means the last epoch.
    pub fixed_state_epoch: Option<u32>,
    pub metric: MetricConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            rays_per_step: 500,
            learning_rate: 0.1,
            optimizer: OptimizerKind::default(),
            n_samples_per_ray: 64,
            seed: 0,
            eval_every_step: true,
            valuation_mode: ValuationMode::StepDelta,
            valuation_resolution_scale: 0.25,
            grid_dims: [32, 32, 32],
            init_raw: [1.0, 0.0, 0.0, 0.0],
            jitter: false,
            fixed_state_epoch: None,
            metric: MetricConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eval_every_step && self.epochs < 2 {
            return Err(Error::invalid(
                "valuation needs >= 2 epochs (epoch 1 is excluded from scores)",
            ));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.rays_per_step == 0 {
            return Err(Error::invalid("rays_per_step must be >= 1"));
        }
        if self.n_samples_per_ray == 0 {
            return Err(Error::invalid("n_samples_per_ray must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(self.valuation_resolution_scale > 0.0 && self.valuation_resolution_scale <= 1.0) {
            return Err(Error::invalid("valuation_resolution_scale must be in (0,1]"));
        }
        if self.valuation_mode == ValuationMode::FixedState {
            if !self.eval_every_step {
                return Err(Error::invalid("fixed_state mode needs eval_every_step"));
            }
            let e = self.measured_epoch();
            if e < 2 || e > self.epochs {
                return Err(Error::invalid(format!(
                    "fixed_state epoch must be in 2..={}, got {e}",
                    self.epochs
                )));
            }
        }
        self.metric.validate()
    }

    /// Epoch whose steps are reverted in `fixed_state` mode.
    pub fn measured_epoch(&self) -> u32 {
        self.fixed_state_epoch.unwrap_or(self.epochs)
    }

    pub fn reverted_epoch(&self) -> Option<u32> {
        (self.valuation_mode == ValuationMode::FixedState).then(|| self.measured_epoch())
    }
}
