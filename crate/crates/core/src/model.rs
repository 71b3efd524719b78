//! Domain types shared by the board, the search and the control layer.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::ops::Add;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a workflow subtask (the descriptor's `TASK_ID`).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub String);

impl TaskId {
    pub fn new(id: impl Into<String>) -> Self {
        TaskId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TaskId {
    fn from(s: &str) -> Self {
        TaskId(s.to_string())
    }
}

/// Identifier of a service provider (the descriptor's `PRO_ID`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProviderId(pub u64);

impl fmt::Display for ProviderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleId(pub u64);

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Parameter name. Keeps the spelling it was written with but compares
/// ASCII-case-insensitively, so `PRICE` in a descriptor matches `price` in a rule.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamName(String);

impl ParamName {
    pub fn new(name: impl Into<String>) -> Self {
        ParamName(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn folded(&self) -> impl Iterator<Item = u8> + '_ {
        self.0.bytes().map(|b| b.to_ascii_lowercase())
    }
}

impl PartialEq for ParamName {
    fn eq(&self, other: &Self) -> bool {
        self.0.eq_ignore_ascii_case(&other.0)
    }
}

impl Eq for ParamName {}

impl PartialOrd for ParamName {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ParamName {
    fn cmp(&self, other: &Self) -> Ordering {
        self.folded().cmp(other.folded())
    }
}

impl Hash for ParamName {
    fn hash<H: Hasher>(&self, state: &mut H) {
        for b in self.folded() {
            state.write_u8(b);
        }
    }
}

impl fmt::Display for ParamName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ParamName {
    fn from(s: &str) -> Self {
        ParamName(s.to_string())
    }
}

/// A parameter value as published in an offer or written as a rule border.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Literal(String),
}

impl Value {
    /// Parses a bare token: decimal numbers become [`Value::Number`], anything
    /// else is kept as a literal. `inf`/`nan` spellings stay literals.
    pub fn parse(token: &str) -> Value {
        let t = token.trim();
        let numeric_chars = !t.is_empty()
            && t.bytes().any(|b| b.is_ascii_digit())
            && t.bytes().all(|b| b.is_ascii_digit() || matches!(b, b'+' | b'-' | b'.' | b'e' | b'E'));
        if numeric_chars {
            if let Ok(x) = t.parse::<f64>() {
                if x.is_finite() {
                    return Value::Number(x);
                }
            }
        }
        Value::Literal(t.to_string())
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(x) => Some(*x),
            Value::Literal(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(x) => write!(f, "{x}"),
            Value::Literal(s) => f.write_str(s),
        }
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Number(x)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::parse(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RuleKind {
    #[serde(alias = "at_most")]
    AtMost,
    #[serde(alias = "at_least")]
    AtLeast,
    #[serde(alias = "equals")]
    Equals,
}

impl RuleKind {
    pub fn keyword(self) -> &'static str {
        match self {
            RuleKind::AtMost => "AT_MOST",
            RuleKind::AtLeast => "AT_LEAST",
            RuleKind::Equals => "EQUALS",
        }
    }

    pub fn from_keyword(s: &str) -> Option<RuleKind> {
        match s.trim().to_ascii_uppercase().as_str() {
            "AT_MOST" => Some(RuleKind::AtMost),
            "AT_LEAST" => Some(RuleKind::AtLeast),
            "EQUALS" => Some(RuleKind::Equals),
            _ => None,
        }
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// A user constraint on one parameter of one subtask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub rule_id: RuleId,
    pub subtask: TaskId,
    pub parameter: ParamName,
    pub kind: RuleKind,
    pub border: Value,
    /// Declaration order; defines region order on the board.
    pub seq: u64,
}

impl Rule {
    pub fn new(
        rule_id: RuleId,
        subtask: TaskId,
        parameter: impl Into<ParamName>,
        kind: RuleKind,
        border: Value,
        seq: u64,
    ) -> Result<Rule, ModelError> {
        let rule = Rule { rule_id, subtask, parameter: parameter.into(), kind, border, seq };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match (self.kind, &self.border) {
            (RuleKind::Equals, _) => Ok(()),
            (_, Value::Number(b)) if *b >= 0.0 && b.is_finite() => Ok(()),
            (_, Value::Number(b)) => Err(ModelError::NegativeBorder { rule: self.rule_id, border: *b }),
            (_, Value::Literal(s)) => Err(ModelError::NonNumericBorder { rule: self.rule_id, border: s.clone() }),
        }
    }
}

impl From<String> for ParamName {
    fn from(s: String) -> Self {
        ParamName(s)
    }
}

/// One option bundle published by a provider for a subtask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Offer {
    pub provider: ProviderId,
    pub task: TaskId,
    pub index: u32,
    pub values: BTreeMap<ParamName, Value>,
}

impl Offer {
    pub fn new(provider: ProviderId, task: TaskId, index: u32) -> Self {
        Offer { provider, task, index, values: BTreeMap::new() }
    }

    pub fn with(mut self, param: &str, value: impl Into<Value>) -> Self {
        self.values.insert(ParamName::from(param), value.into());
        self
    }

    pub fn value(&self, param: &ParamName) -> Option<&Value> {
        self.values.get(param)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceDescriptor {
    pub address: String,
    pub port: u16,
    pub task: TaskId,
    /// Availability in [0,1]; 0 means unavailable.
    pub metric: f64,
    pub par_list: Vec<ParamName>,
    pub provider: ProviderId,
    pub offers: Vec<Offer>,
}

/// Local or cumulative cost. `Infeasible` absorbs addition and loses every
/// minimum comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Cost {
    Finite(f64),
    Infeasible,
}

impl Cost {
    pub const ZERO: Cost = Cost::Finite(0.0);

    pub fn is_finite(self) -> bool {
        matches!(self, Cost::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Cost::Finite(x) => Some(x),
            Cost::Infeasible => None,
        }
    }

    pub fn min(self, other: Cost) -> Cost {
        if other < self {
            other
        } else {
            self
        }
    }
}

impl Add for Cost {
    type Output = Cost;

    fn add(self, rhs: Cost) -> Cost {
        match (self, rhs) {
            (Cost::Finite(a), Cost::Finite(b)) => Cost::Finite(a + b),
            _ => Cost::Infeasible,
        }
    }
}

impl Eq for Cost {}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Cost::Finite(a), Cost::Finite(b)) => a.total_cmp(b),
            (Cost::Finite(_), Cost::Infeasible) => Ordering::Less,
            (Cost::Infeasible, Cost::Finite(_)) => Ordering::Greater,
            (Cost::Infeasible, Cost::Infeasible) => Ordering::Equal,
        }
    }
}

impl fmt::Display for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cost::Finite(x) => write!(f, "{x:.9}"),
            Cost::Infeasible => f.write_str("infeasible"),
        }
    }
}

/// One (offer, region) vertex of a board.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterNode {
    pub id: NodeId,
    pub region: usize,
    pub provider: ProviderId,
    pub offer_index: u32,
    pub parameter: ParamName,
    pub raw_value: Option<Value>,
    pub cost: Cost,
    pub version: u64,
}

/// The best provider found for one subtask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub subtask: TaskId,
    pub provider: ProviderId,
    pub offer_index: u32,
    pub total_cost: Cost,
    /// Node ids from the first region to the last.
    pub path: Vec<NodeId>,
    pub solved_at: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChangeKind {
    RuleAdded { rule: Rule },
    RuleModified { rule: Rule },
    RuleDeleted { rule_id: RuleId, subtask: TaskId },
    ParameterChanged { task: TaskId, provider: ProviderId, offer_index: u32, parameter: ParamName, value: Value },
    MetricChanged { provider: ProviderId, metric: f64 },
}

impl ChangeKind {
    pub fn name(&self) -> &'static str {
        match self {
            ChangeKind::RuleAdded { .. } => "RuleAdded",
            ChangeKind::RuleModified { .. } => "RuleModified",
            ChangeKind::RuleDeleted { .. } => "RuleDeleted",
            ChangeKind::ParameterChanged { .. } => "ParameterChanged",
            ChangeKind::MetricChanged { .. } => "MetricChanged",
        }
    }
}

/// A typed mutation with its position in the global event order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangeEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub kind: ChangeKind,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("rule {rule}: border {border} is negative")]
    NegativeBorder { rule: RuleId, border: f64 },
    #[error("rule {rule}: border {border:?} is not a number")]
    NonNumericBorder { rule: RuleId, border: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    DuplicateOffer,
    NegativeValue,
    MetricOutOfRange,
    ParameterNotInParList,
}

/// One failed catalog invariant, naming the descriptor (by position and
/// provider) and the offending field.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("descriptor #{descriptor} (provider {provider}, task {task}): {kind:?} in {field}")]
pub struct Violation {
    pub descriptor: usize,
    pub provider: ProviderId,
    pub task: TaskId,
    pub field: String,
    pub kind: ViolationKind,
}

/// A set of descriptors that passed [`validate_catalog`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    descriptors: Vec<ServiceDescriptor>,
}

impl Catalog {
    pub fn descriptors(&self) -> &[ServiceDescriptor] {
        &self.descriptors
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn descriptor(&self, provider: ProviderId, task: &TaskId) -> Option<&ServiceDescriptor> {
        self.descriptors.iter().find(|d| d.provider == provider && &d.task == task)
    }

    pub fn providers(&self) -> BTreeSet<ProviderId> {
        self.descriptors.iter().map(|d| d.provider).collect()
    }

    pub fn tasks(&self) -> BTreeSet<TaskId> {
        self.descriptors.iter().map(|d| d.task.clone()).collect()
    }

    /// Updates one offer value. Returns `false` if the offer does not exist
    /// or the parameter is not in the descriptor's `PAR_LIST`.
    pub fn set_value(&mut self, task: &TaskId, provider: ProviderId, offer_index: u32, param: &ParamName, value: Value) -> bool {
        if matches!(value, Value::Number(x) if x < 0.0) {
            return false;
        }
        let Some(d) = self.descriptors.iter_mut().find(|d| d.provider == provider && &d.task == task) else {
            return false;
        };
        if !d.par_list.contains(param) {
            return false;
        }
        match d.offers.iter_mut().find(|o| o.index == offer_index) {
            Some(offer) => {
                offer.values.insert(param.clone(), value);
                true
            }
            None => false,
        }
    }

    /// Sets the metric of every descriptor of `provider`. Returns the number
    /// of descriptors touched.
    pub fn set_metric(&mut self, provider: ProviderId, metric: f64) -> usize {
        let mut n = 0;
        for d in self.descriptors.iter_mut().filter(|d| d.provider == provider) {
            d.metric = metric;
            n += 1;
        }
        n
    }
}

/// Checks every catalog invariant and returns either the catalog or the full
/// list of violations.
pub fn validate_catalog(descriptors: Vec<ServiceDescriptor>) -> Result<Catalog, Vec<Violation>> {
    let mut violations = Vec::new();
    let mut seen: BTreeSet<(ProviderId, TaskId, u32)> = BTreeSet::new();

    for (i, d) in descriptors.iter().enumerate() {
        let violation = |field: String, kind| Violation { descriptor: i, provider: d.provider, task: d.task.clone(), field, kind };
        if !(0.0..=1.0).contains(&d.metric) {
            violations.push(violation("METRIC".into(), ViolationKind::MetricOutOfRange));
        }
        for offer in &d.offers {
            if !seen.insert((offer.provider, offer.task.clone(), offer.index)) {
                violations.push(violation(format!("OFFERS[{}]", offer.index), ViolationKind::DuplicateOffer));
            }
            for (param, value) in &offer.values {
                if matches!(value, Value::Number(x) if *x < 0.0) {
                    violations.push(violation(format!("OFFERS[{}].{param}", offer.index), ViolationKind::NegativeValue));
                }
                if !d.par_list.contains(param) {
                    violations.push(violation(format!("OFFERS[{}].{param}", offer.index), ViolationKind::ParameterNotInParList));
                }
            }
        }
    }

    if violations.is_empty() {
        Ok(Catalog { descriptors })
    } else {
        Err(violations)
    }
}
