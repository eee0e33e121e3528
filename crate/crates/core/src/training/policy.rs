use rand::Rng as _;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;

/// Which example of a pair keeps its label and has its representation moved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Majority examples absorb features of minority partners.
    #[default]
    Standard,
    /// Minority examples absorb features of majority partners.
    Inverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassConstraint {
    /// Partners share the anchor's label.
    #[default]
    Intra,
    /// Partners come from any other class; the anchor keeps its own label.
    Inter,
}

/// Distribution of the weight placed on the partner's representation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaDist {
    Uniform { low: f64, high: f64 },
    Beta { alpha: f64, beta: f64 },
    /// Point mass; used to pin an interpolation method to a fixed ratio.
    Fixed { value: f64 },
}

impl LambdaDist {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LambdaDist::Uniform { low, high } => 0.0 <= low && low < high && high <= 1.0,
            LambdaDist::Beta { alpha, beta } => {
                alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()
            }
            LambdaDist::Fixed { value } => (0.0..=1.0).contains(&value),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid interpolation ratio distribution {self:?}")))
        }
    }

    /// Whether `lambda` lies in the distribution's support.
    pub fn supports(&self, lambda: f64) -> bool {
        match *self {
            LambdaDist::Uniform { low, high } => low <= lambda && lambda < high,
            LambdaDist::Beta { .. } => (0.0..=1.0).contains(&lambda),
            LambdaDist::Fixed { value } => lambda == value,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            LambdaDist::Uniform { low, high } => format!("U({low},{high})"),
            LambdaDist::Beta { alpha, beta } => format!("B({alpha},{beta})"),
            LambdaDist::Fixed { value } => format!("Fixed({value})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpolationPolicy {
    #[serde(default)]
    pub direction: Direction,
    #[serde(default)]
    pub class_constraint: ClassConstraint,
    pub lambda: LambdaDist,
    /// Encoder layer at which representations are mixed; `None` is the final layer.
    #[serde(default)]
    pub layer: Option<usize>,
    #[serde(default)]
    pub stop_partner_gradient: bool,
}

impl InterpolationPolicy {
    /// Majority-to-minority, same-class mixing with `lambda ~ U(0, 0.5)` at the final layer.
    pub const fn interpoll() -> Self {
        Self {
            direction: Direction::Standard,
            class_constraint: ClassConstraint::Intra,
            lambda: LambdaDist::Uniform { low: 0.0, high: 0.5 },
            layer: None,
            stop_partner_gradient: false,
        }
    }

    pub const fn mixup() -> Self {
        Self {
            lambda: LambdaDist::Beta { alpha: 0.2, beta: 0.2 },
            ..Self::interpoll()
        }
    }

    pub const fn lisa() -> Self {
        Self {
            lambda: LambdaDist::Uniform { low: 0.0, high: 1.0 },
            ..Self::interpoll()
        }
    }

    pub fn with_lambda(self, lambda: LambdaDist) -> Self {
        Self { lambda, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        self.lambda.validate()
    }
}

/// One draw from the policy's ratio distribution.
pub fn sample_lambda(policy: &InterpolationPolicy, rng: &mut Rng) -> f64 {
    match policy.lambda {
        LambdaDist::Uniform { low, high } => {
            let v = low + (high - low) * rng.random::<f64>();
            // guard the open upper end against rounding
            if v >= high {
                low.max(high - f64::EPSILON * high)
            } else {
                v
            }
        }
        LambdaDist::Beta { alpha, beta } => Beta::new(alpha, beta)
            .expect("validated parameters")
            .sample(rng)
            .clamp(0.0, 1.0),
        LambdaDist::Fixed { value } => value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn default_policy_draws_stay_in_half_interval() {
        let policy = InterpolationPolicy::interpoll();
        let mut rng = seed::rng(1);
        for _ in 0..10_000 {
            let l = sample_lambda(&policy, &mut rng);
            assert!((0.0..0.5).contains(&l));
        }
    }

    #[test]
    fn beta_two_two_has_mean_one_half() {
        let policy = InterpolationPolicy::interpoll().with_lambda(LambdaDist::Beta { alpha: 2.0, beta: 2.0 });
        let mut rng = seed::rng(2);
        let n = 100_000;
        let mean = (0..n).map(|_| sample_lambda(&policy, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn same_seed_same_draws() {
        let policy = InterpolationPolicy::mixup();
        let draw = |s| {
            let mut rng = seed::rng(s);
            (0..50).map(|_| sample_lambda(&policy, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn validation() {
        assert!(LambdaDist::Uniform { low: 0.5, high: 0.5 }.validate().is_err());
        assert!(LambdaDist::Uniform { low: 0.0, high: 1.5 }.validate().is_err());
        assert!(LambdaDist::Beta { alpha: 0.0, beta: 1.0 }.validate().is_err());
        assert!(LambdaDist::Fixed { value: 0.0 }.validate().is_ok());
        assert!(LambdaDist::Fixed { value: -0.1 }.validate().is_err());
    }
}
