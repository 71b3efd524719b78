//! Scenario runs: load rules and services, replay a timeline of changes on
//! a logical clock and write a deterministic text report.
//!
//! Scenario files are TOML:
//!
//! ```toml
//! seed = 7                       # optional, --seed wins
//!
//! [update]                       # optional simulated update controller
//! mode = "poll"                  # or "push"
//! interval_ms = 5000
//! staleness_ms = 15000
//!
//! [[drift]]                      # seeded random drift of one provider
//! provider = 20
//! task = "convert"
//! count = 3
//! horizon_ms = 20000
//!
//! [[event]]
//! at_ms = 1000
//! kind = "parameter_changed"
//! task = "convert"
//! provider = 20
//! offer_index = 0
//! parameter = "runtime"
//! value = 10
//!
//! [[golden]]
//! subtask = "convert"
//! provider = 20
//! offer = 0
//! total = 0.971868043
//! ```
//!
//! Other event kinds: `rule_added` (subtask, parameter, rule_kind, border),
//! `rule_modified` (rule_id, border, optional rule_kind), `rule_deleted`
//! (rule_id) and `metric_changed` (provider, metric). A golden entry with
//! `infeasible = true` expects no feasible provider.

use std::fmt::Write as _;
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use super::rules_file::{parse_rules, RulesFileError};
use super::{Applied, Engine, EngineError, RuleMutation, SubtaskResult};
use crate::cost::CostPolicy;
use crate::model::{validate_catalog, ChangeKind, Cost, ParamName, ProviderId, RuleId, RuleKind, TaskId, Value};
use crate::oracle::enumerate_best;
use crate::registry::{attach_offers, parse_descriptor_file, DescriptorError, SimulatedProvider, TimedChange, UpdateController, UpdateMode, UpdatePolicy};

/// Tolerance for golden and oracle comparisons.
pub const TOLERANCE: f64 = 1e-9;

pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("rules: {0}")]
    Rules(#[from] RulesFileError),
    #[error("services: {0}")]
    Services(#[from] DescriptorError),
    #[error("services: {0}")]
    Catalog(String),
    #[error("scenario: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("scenario: {0}")]
    Timeline(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioAction {
    RuleAdded { subtask: TaskId, parameter: ParamName, rule_kind: RuleKind, border: Value },
    RuleModified { rule_id: RuleId, rule_kind: Option<RuleKind>, border: Value },
    RuleDeleted { rule_id: RuleId },
    ParameterChanged { task: TaskId, provider: ProviderId, offer_index: u32, parameter: ParamName, value: Value },
    MetricChanged { provider: ProviderId, metric: f64 },
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct ScenarioEvent {
    pub at_ms: u64,
    #[serde(flatten)]
    pub action: ScenarioAction,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdateSection {
    pub mode: UpdateMode,
    pub interval_ms: u64,
    pub staleness_ms: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSection {
    pub provider: ProviderId,
    pub task: TaskId,
    pub count: usize,
    pub horizon_ms: u64,
    /// Push mode only: broadcast period.
    pub heartbeat_ms: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Golden {
    pub subtask: TaskId,
    pub provider: Option<ProviderId>,
    pub offer: Option<u32>,
    pub total: Option<f64>,
    #[serde(default)]
    pub infeasible: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: Option<u64>,
    pub policy: Option<CostPolicy>,
    pub update: Option<UpdateSection>,
    #[serde(default)]
    pub drift: Vec<DriftSection>,
    #[serde(default)]
    pub event: Vec<ScenarioEvent>,
    #[serde(default)]
    pub golden: Vec<Golden>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        if let Some(w) = s.event.windows(2).find(|w| w[1].at_ms < w[0].at_ms) {
            return Err(ScenarioError::Timeline(format!("events out of order: {} ms after {} ms", w[1].at_ms, w[0].at_ms)));
        }
        if let Some(u) = &s.update {
            if u.interval_ms == 0 || u.staleness_ms == Some(0) {
                return Err(ScenarioError::Timeline("update interval and staleness must be positive".into()));
            }
        }
        for g in &s.golden {
            if !g.infeasible && (g.provider.is_none() || g.offer.is_none() || g.total.is_none()) {
                return Err(ScenarioError::Timeline(format!("golden entry for {} needs provider, offer and total, or infeasible = true", g.subtask)));
            }
        }
        Ok(s)
    }
}

/// Everything a run needs, as text so the CLI and tests share one path.
#[derive(Clone, Debug, Default)]
pub struct ScenarioInput {
    pub rules: String,
    pub services: String,
    /// Optional separate offers file for the services.
    pub offers: Option<String>,
    pub scenario: Option<String>,
    pub oracle: bool,
    pub seed: Option<u64>,
}

pub struct ScenarioRun {
    pub report: String,
    pub exit_code: i32,
    pub engine: Option<Engine>,
}

/// Builds an engine from rules and services text.
pub fn load_engine(rules: &str, services: &str, offers: Option<&str>, policy: CostPolicy) -> Result<Engine, ScenarioError> {
    let rules = parse_rules(rules)?;
    let mut descriptors = parse_descriptor_file(services)?;
    if let Some(o) = offers {
        attach_offers(&mut descriptors, o)?;
    }
    let catalog = validate_catalog(descriptors).map_err(|v| ScenarioError::Catalog(v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")))?;
    Ok(Engine::new(rules, catalog, policy)?)
}

fn fmt_result(out: &mut String, r: &SubtaskResult) {
    match &r.solution {
        Some(s) => writeln!(
            out,
            "  {}: provider {} offer {} total {} epoch {} solved_at {} expansions {}",
            r.subtask, s.provider, s.offer_index, s.total_cost, r.epoch, s.solved_at, r.expansions
        ),
        None => writeln!(out, "  {}: none ({}) epoch {} expansions {}", r.subtask, r.error.as_deref().unwrap_or("no result"), r.epoch, r.expansions),
    }
    .unwrap();
}

fn fmt_change(kind: &ChangeKind) -> String {
    match kind {
        ChangeKind::RuleAdded { rule } | ChangeKind::RuleModified { rule } => {
            format!("{} rule={} subtask={} {} {} {}", kind.name(), rule.rule_id, rule.subtask, rule.parameter, rule.kind, rule.border)
        }
        ChangeKind::RuleDeleted { rule_id, subtask } => format!("RuleDeleted rule={rule_id} subtask={subtask}"),
        ChangeKind::ParameterChanged { task, provider, offer_index, parameter, value } => {
            format!("ParameterChanged task={task} provider={provider} offer={offer_index} {parameter}={value}")
        }
        ChangeKind::MetricChanged { provider, metric } => format!("MetricChanged provider={provider} metric={metric}"),
    }
}

fn fmt_applied(out: &mut String, at: Duration, source: &str, a: &Applied) {
    writeln!(out, "event seq={} at_ms={} source={} {}", a.event.seq, at.as_millis(), source, fmt_change(&a.event.kind)).unwrap();
    for o in &a.outcomes {
        match &o.outcome {
            Some(c) => {
                let reopened: Vec<String> = c.reopened.iter().map(|n| n.0.to_string()).collect();
                writeln!(out, "  {}: {:?} reopened=[{}] invalidated={}", o.subtask, c.kind, reopened.join(","), c.invalidated_solution).unwrap();
            }
            None if o.rebuilt => writeln!(out, "  {}: board built", o.subtask).unwrap(),
            None => writeln!(out, "  {}: not applied", o.subtask).unwrap(),
        }
        fmt_result(out, &o.result);
    }
}

/// Compares every subtask with the brute-force enumeration. Returns the
/// number of mismatches.
fn oracle_check(out: &mut String, engine: &Engine) -> usize {
    let mut bad = 0;
    for t in engine.subtasks().cloned().collect::<Vec<_>>() {
        let Some(board) = engine.board(&t) else { continue };
        let expected = enumerate_best(board);
        let got = engine.result(&t).and_then(|r| r.solution.as_ref()).map(|s| (s.provider, s.offer_index, s.total_cost.finite().unwrap_or(f64::NAN)));
        let ok = match (expected, got) {
            (None, None) => true,
            (Some((p, o, x)), Some((q, k, y))) => p == q && o == k && (x - y).abs() <= TOLERANCE,
            _ => false,
        };
        let show = |v: Option<(ProviderId, u32, f64)>| match v {
            Some((p, o, x)) => format!("{p}/{o} {}", Cost::Finite(x)),
            None => "none".to_string(),
        };
        writeln!(out, "  oracle {t}: engine {} oracle {} {}", show(got), show(expected), if ok { "match" } else { "MISMATCH" }).unwrap();
        if !ok {
            bad += 1;
        }
    }
    bad
}

fn to_mutation(action: &ScenarioAction) -> Result<RuleMutation, ChangeKind> {
    match action.clone() {
        ScenarioAction::RuleAdded { subtask, parameter, rule_kind, border } => Ok(RuleMutation::Add { subtask, parameter, kind: rule_kind, border }),
        ScenarioAction::RuleModified { rule_id, rule_kind, border } => Ok(RuleMutation::Modify { rule_id, kind: rule_kind, border }),
        ScenarioAction::RuleDeleted { rule_id } => Ok(RuleMutation::Delete { rule_id }),
        ScenarioAction::ParameterChanged { task, provider, offer_index, parameter, value } => {
            Err(ChangeKind::ParameterChanged { task, provider, offer_index, parameter, value })
        }
        ScenarioAction::MetricChanged { provider, metric } => Err(ChangeKind::MetricChanged { provider, metric }),
    }
}

enum Step {
    Scripted(ScenarioAction),
    Observed(ChangeKind),
}

fn parse_error(e: ScenarioError) -> ScenarioRun {
    ScenarioRun { report: format!("error: {e}\n"), exit_code: 2, engine: None }
}

pub fn run_scenario(input: &ScenarioInput) -> ScenarioRun {
    let scenario = match input.scenario.as_deref().map(Scenario::parse).transpose() {
        Ok(s) => s.unwrap_or_default(),
        Err(e) => return parse_error(e),
    };
    let policy = scenario.policy.unwrap_or_default();
    let mut engine = match load_engine(&input.rules, &input.services, input.offers.as_deref(), policy) {
        Ok(e) => e,
        Err(e) => return parse_error(e),
    };
    let seed = input.seed.or(scenario.seed).unwrap_or(DEFAULT_SEED);

    // timeline: scripted events, then whatever the update controller observes
    let mut timeline: Vec<(Duration, usize, Step)> =
        scenario.event.iter().enumerate().map(|(i, e)| (Duration::from_millis(e.at_ms), i, Step::Scripted(e.action.clone()))).collect();
    if let Some(u) = &scenario.update {
        let mut providers = Vec::new();
        for d in engine.repository().catalog().descriptors() {
            let mut p = SimulatedProvider::new(d.clone(), seed ^ d.provider.0);
            for drift in scenario.drift.iter().filter(|x| x.provider == d.provider && x.task == d.task) {
                let script = p.random_drift(drift.count, Duration::from_millis(drift.horizon_ms));
                p = p.with_script(script);
                if let Some(h) = drift.heartbeat_ms {
                    p = p.with_heartbeat(Duration::from_millis(h));
                }
            }
            providers.push(p);
        }
        let defaults = UpdatePolicy::default();
        let policy = UpdatePolicy {
            mode: u.mode,
            interval: Duration::from_millis(u.interval_ms),
            staleness_timeout: u.staleness_ms.map(Duration::from_millis).unwrap_or(defaults.staleness_timeout),
            weights: defaults.weights,
        };
        let horizon = scenario.drift.iter().map(|d| d.horizon_ms).chain(scenario.event.iter().map(|e| e.at_ms)).max().unwrap_or(0);
        let mut controller = UpdateController::new(policy, providers).expect("validated above");
        let mut observed: Vec<TimedChange> = Vec::new();
        controller.advance_to(Duration::from_millis(horizon), &mut |c| observed.push(c));
        let base = timeline.len();
        timeline.extend(observed.into_iter().enumerate().map(|(i, c)| (c.at, base + i, Step::Observed(c.change))));
    }
    timeline.sort_by_key(|(at, i, _)| (*at, *i));

    let mut out = String::new();
    writeln!(out, "# scenario report").unwrap();
    writeln!(out, "seed {seed}").unwrap();
    if let Some(u) = &scenario.update {
        writeln!(out, "update mode={:?} interval_ms={}", u.mode, u.interval_ms).unwrap();
    }
    writeln!(out, "rules").unwrap();
    for r in engine.repository().rules() {
        writeln!(out, "  rule={} seq={} subtask={} {} {} {}", r.rule_id, r.seq, r.subtask, r.parameter, r.kind, r.border).unwrap();
    }
    writeln!(out, "initial").unwrap();
    for r in engine.results() {
        fmt_result(&mut out, &r);
    }
    let mut mismatches = 0;
    if input.oracle {
        mismatches += oracle_check(&mut out, &engine);
    }

    for (at, _, step) in timeline {
        let (source, applied) = match step {
            Step::Scripted(action) => match to_mutation(&action) {
                Ok(m) => ("script", engine.apply_rule_mutation(m)),
                Err(kind) => ("script", engine.inject(kind)),
            },
            Step::Observed(kind) => ("controller", engine.inject(kind)),
        };
        match applied {
            Ok(a) => fmt_applied(&mut out, at, source, &a),
            Err(e) => writeln!(out, "event rejected at_ms={} source={source}: {e}", at.as_millis()).unwrap(),
        }
        if input.oracle {
            mismatches += oracle_check(&mut out, &engine);
        }
    }

    writeln!(out, "final").unwrap();
    for r in engine.results() {
        fmt_result(&mut out, &r);
    }

    let mut golden_failures = 0;
    if !scenario.golden.is_empty() {
        writeln!(out, "golden").unwrap();
        for g in &scenario.golden {
            let got = engine.result(&g.subtask).and_then(|r| r.solution.clone());
            let ok = match (&got, g.infeasible) {
                (None, true) => engine.result(&g.subtask).is_some(),
                (Some(s), false) => {
                    Some(s.provider) == g.provider
                        && Some(s.offer_index) == g.offer
                        && s.total_cost.finite().zip(g.total).is_some_and(|(x, y)| (x - y).abs() <= TOLERANCE)
                }
                _ => false,
            };
            let expected = if g.infeasible {
                "infeasible".to_string()
            } else {
                format!("{}/{} {}", g.provider.unwrap(), g.offer.unwrap(), Cost::Finite(g.total.unwrap()))
            };
            let actual = got.map_or("infeasible".to_string(), |s| format!("{}/{} {}", s.provider, s.offer_index, s.total_cost));
            writeln!(out, "  {}: expected {expected} got {actual} {}", g.subtask, if ok { "ok" } else { "FAIL" }).unwrap();
            if !ok {
                golden_failures += 1;
            }
        }
    }
    let exit_code = if mismatches + golden_failures > 0 { 1 } else { 0 };
    writeln!(out, "exit {exit_code}").unwrap();
    ScenarioRun { report: out, exit_code, engine: Some(engine) }
}
