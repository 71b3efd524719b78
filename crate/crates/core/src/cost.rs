//! Local cost of a parameter value against a rule.
//!
//! Numeric rules use the normalized ratio forms: `(border+1)/(x+1)` when the
//! value must be at least `border`, `(x+1)/(border+1)` when it must be at most
//! `border`. Values that violate the rule are not candidates and get
//! [`Cost::Infeasible`]; equality rules cost 0 when satisfied.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Cost, Offer, Rule, RuleKind, Value};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error("negative input: value {value}, border {border}")]
    NegativeInput { value: f64, border: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostPolicy {
    /// Divide finite costs by the provider's metric.
    pub metric_scaling: bool,
    /// Providers with a metric strictly below this are excluded. Metric 0 is
    /// always excluded.
    pub metric_floor: f64,
}

impl Default for CostPolicy {
    fn default() -> Self {
        CostPolicy { metric_scaling: true, metric_floor: 0.0 }
    }
}

impl CostPolicy {
    pub fn excludes(&self, metric: f64) -> bool {
        metric <= 0.0 || metric < self.metric_floor
    }
}

fn check(x: f64, border: f64) -> Result<(), CostError> {
    if x < 0.0 || border < 0.0 || x.is_nan() || border.is_nan() {
        Err(CostError::NegativeInput { value: x, border })
    } else {
        Ok(())
    }
}

/// Cost of `x` against "at least `border`".
pub fn cost_at_least(x: f64, border: f64) -> Result<Cost, CostError> {
    check(x, border)?;
    if x >= border {
        Ok(Cost::Finite((border + 1.0) / (x + 1.0)))
    } else {
        Ok(Cost::Infeasible)
    }
}

/// Cost of `x` against "at most `border`".
pub fn cost_at_most(x: f64, border: f64) -> Result<Cost, CostError> {
    check(x, border)?;
    if x <= border {
        Ok(Cost::Finite((x + 1.0) / (border + 1.0)))
    } else {
        Ok(Cost::Infeasible)
    }
}

/// Boolean rule: 0 when the literal matches exactly, otherwise infeasible.
pub fn cost_equals(x: &Value, target: &Value) -> Cost {
    let equal = match (x, target) {
        (Value::Literal(a), Value::Literal(b)) => a == b,
        (Value::Number(a), Value::Number(b)) => a == b,
        _ => false,
    };
    if equal {
        Cost::ZERO
    } else {
        Cost::Infeasible
    }
}

/// Cost of a raw value under a rule, before availability scaling.
pub fn rule_cost(rule: &Rule, value: Option<&Value>) -> Result<Cost, CostError> {
    let Some(value) = value else {
        return Ok(Cost::Infeasible);
    };
    match rule.kind {
        RuleKind::Equals => Ok(cost_equals(value, &rule.border)),
        RuleKind::AtMost | RuleKind::AtLeast => {
            // Literal on either side of a numeric rule cannot satisfy it.
            let (Some(x), Some(border)) = (value.as_number(), rule.border.as_number()) else {
                return Ok(Cost::Infeasible);
            };
            if rule.kind == RuleKind::AtMost {
                cost_at_most(x, border)
            } else {
                cost_at_least(x, border)
            }
        }
    }
}

/// Applies provider availability to a rule cost.
pub fn apply_metric(cost: Cost, metric: f64, policy: &CostPolicy) -> Cost {
    if policy.excludes(metric) {
        return Cost::Infeasible;
    }
    match cost {
        Cost::Finite(c) if policy.metric_scaling => Cost::Finite(c / metric),
        other => other,
    }
}

/// Local cost of one board node: the rule's cost for the offer's value,
/// scaled by the provider's metric.
pub fn node_cost(rule: &Rule, offer: &Offer, metric: f64, policy: &CostPolicy) -> Result<Cost, CostError> {
    let base = rule_cost(rule, offer.value(&rule.parameter))?;
    Ok(apply_metric(base, metric, policy))
}
