//! Training loops: plain ERM, InterpoLL, and the mixup/LISA interpolation baselines.

mod batch;
mod loops;
mod metrics;
mod policy;

use serde::{Deserialize, Serialize};

use crate::autodiff::{OptimizerKind, OptimizerState};
use crate::error::{Error, Result};

pub use batch::{
    erm_batch, interpoll_batch, lisa_batch, mixup_batch, InterpolationStats, InterpollContext,
    LisaContext, PartnerPools, TraceEntry,
};
pub use loops::{train_erm, train_interpoll, train_interpoll_traced, train_lisa, train_mixup};
pub use metrics::{
    read_metrics_csv, write_metrics_csv, EpochMetrics, FinalMetrics, MetricsRecord, METRICS_COLUMNS,
};
pub use policy::{sample_lambda, ClassConstraint, Direction, InterpolationPolicy, LambdaDist};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Erm,
    Interpoll,
    Mixup,
    Lisa,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::Interpoll => "interpoll",
            Method::Mixup => "mixup",
            Method::Lisa => "lisa",
        }
    }

    pub fn default_policy(self) -> Option<InterpolationPolicy> {
        match self {
            Method::Erm => None,
            Method::Interpoll => Some(InterpolationPolicy::interpoll()),
            Method::Mixup => Some(InterpolationPolicy::mixup()),
            Method::Lisa => Some(InterpolationPolicy::lisa()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn build(&self) -> Result<OptimizerState> {
        OptimizerState::new(self.kind, self.lr, self.weight_decay)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Seeds the epoch shuffles and, separately, partner and ratio draws.
    pub seed: u64,
    /// Present exactly for the interpolation methods.
    #[serde(default)]
    pub policy: Option<InterpolationPolicy>,
    #[serde(default)]
    pub record_dynamics: bool,
}

impl TrainConfig {
    /// ERM with Adam at learning rate `lr`.
    pub fn erm(epochs: usize, batch_size: usize, lr: f64, seed: u64) -> Self {
        Self {
            method: Method::Erm,
            epochs,
            batch_size,
            optimizer: OptimizerConfig {
                kind: OptimizerKind::adam(),
                lr,
                weight_decay: 0.0,
            },
            seed,
            policy: None,
            record_dynamics: false,
        }
    }

    /// Same schedule, switched to `method` with its default policy.
    pub fn with_method(self, method: Method) -> Self {
        Self {
            method,
            policy: method.default_policy(),
            ..self
        }
    }

    pub fn with_policy(self, policy: InterpolationPolicy) -> Self {
        Self {
            policy: Some(policy),
            ..self
        }
    }

    pub fn into_erm(self) -> Self {
        Self {
            method: Method::Erm,
            policy: None,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        match (self.method, &self.policy) {
            (Method::Erm, None) => {}
            (Method::Erm, Some(_)) => {
                return Err(Error::Config("erm takes no interpolation policy".into()))
            }
            (m, None) => {
                return Err(Error::Config(format!(
                    "{} requires an interpolation policy",
                    m.as_str()
                )))
            }
            (_, Some(p)) => p.validate()?,
        }
        self.optimizer.build().map(|_| ())
    }

    pub(crate) fn expect_method(&self, method: Method) -> Result<()> {
        self.validate()?;
        if self.method != method {
            return Err(Error::Config(format!(
                "config is for {}, not {}",
                self.method.as_str(),
                method.as_str()
            )));
        }
        Ok(())
    }
}
