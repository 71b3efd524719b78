//! Control layer: the shared repository (active rules, catalog, latest
//! solutions and the event log), the rules controller that turns user edits
//! into seq-stamped events, and the engine that keeps one board and search
//! state per subtask up to date as events arrive.
//!
//! Every mutation goes through [`Engine::commit`], which assigns the next
//! seq, appends to the log and then recomputes the affected subtasks. The
//! engine's state is therefore a function of the initial rules, the initial
//! catalog and the log, and [`Engine::replay`] rebuilds it from those.

pub mod rules_file;
pub mod scenario;

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::board::{Board, BoardError};
use crate::cost::CostPolicy;
use crate::dynamics::{apply_change, ChangeOutcome};
use crate::executor::{self, Confirm, ExecutionReport, ExecutorError, Mode, ProviderInvoker, Selector, Workflow};
use crate::model::{Catalog, ChangeEvent, ChangeKind, ParamName, ProviderId, Rule, RuleId, RuleKind, ServiceDescriptor, Solution, TaskId, Value};
use crate::search::{SearchError, SearchState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("an active rule for {parameter} ({kind}) on subtask {subtask} already exists: rule {existing}")]
    DuplicateActiveRule { subtask: TaskId, parameter: ParamName, kind: RuleKind, existing: RuleId },
    #[error("rule {0} is not active")]
    UnknownRuleForDelete(RuleId),
    #[error("rule {0} is not active")]
    UnknownRule(RuleId),
    #[error("invalid rule: {0}")]
    InvalidRule(String),
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("rule events must go through the rules controller")]
    RuleEventInjected,
    #[error("no board for subtask {0}")]
    UnknownSubtask(TaskId),
    #[error("log replay diverged at seq {0}")]
    ReplayDiverged(u64),
}

/// A user edit to the rule set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum RuleMutation {
    Add { subtask: TaskId, parameter: ParamName, kind: RuleKind, border: Value },
    Modify { rule_id: RuleId, kind: Option<RuleKind>, border: Value },
    Delete { rule_id: RuleId },
}

/// Rules, catalog, solutions and the append-only event log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SharedRepository {
    rules: BTreeMap<RuleId, Rule>,
    catalog: Catalog,
    external: BTreeMap<TaskId, BTreeSet<usize>>,
    solutions: BTreeMap<TaskId, Solution>,
    log: Vec<ChangeEvent>,
    next_seq: u64,
}

impl SharedRepository {
    fn new(rules: &[Rule], catalog: Catalog) -> SharedRepository {
        let next_seq = rules.iter().map(|r| r.seq).max().unwrap_or(0) + 1;
        SharedRepository {
            rules: rules.iter().map(|r| (r.rule_id, r.clone())).collect(),
            catalog,
            external: BTreeMap::new(),
            solutions: BTreeMap::new(),
            log: Vec::new(),
            next_seq,
        }
    }

    /// Active rules in declaration order.
    pub fn rules(&self) -> Vec<&Rule> {
        let mut r: Vec<&Rule> = self.rules.values().collect();
        r.sort_by_key(|r| (r.seq, r.rule_id));
        r
    }

    pub fn rule(&self, id: RuleId) -> Option<&Rule> {
        self.rules.get(&id)
    }

    pub fn rules_for(&self, subtask: &TaskId) -> Vec<Rule> {
        self.rules().into_iter().filter(|r| &r.subtask == subtask).cloned().collect()
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn solutions(&self) -> &BTreeMap<TaskId, Solution> {
        &self.solutions
    }

    pub fn external_regions(&self, subtask: &TaskId) -> Option<&BTreeSet<usize>> {
        self.external.get(subtask)
    }

    pub fn log(&self) -> &[ChangeEvent] {
        &self.log
    }

    /// Seq the next event will get.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    fn next_rule_id(&self) -> RuleId {
        RuleId(self.rules.keys().map(|r| r.0).max().unwrap_or(0).max(self.log.iter().filter_map(logged_rule_id).max().unwrap_or(0)) + 1)
    }

    /// Folds one event into the rule set and catalog and appends it.
    fn fold(&mut self, event: ChangeEvent) {
        match &event.kind {
            ChangeKind::RuleAdded { rule } | ChangeKind::RuleModified { rule } => {
                self.rules.insert(rule.rule_id, rule.clone());
            }
            ChangeKind::RuleDeleted { rule_id, .. } => {
                self.rules.remove(rule_id);
            }
            ChangeKind::ParameterChanged { task, provider, offer_index, parameter, value } => {
                self.catalog.set_value(task, *provider, *offer_index, parameter, value.clone());
            }
            ChangeKind::MetricChanged { provider, metric } => {
                self.catalog.set_metric(*provider, *metric);
            }
        }
        self.next_seq = event.seq + 1;
        self.log.push(event);
    }
}

fn logged_rule_id(e: &ChangeEvent) -> Option<u64> {
    match &e.kind {
        ChangeKind::RuleAdded { rule } | ChangeKind::RuleModified { rule } => Some(rule.rule_id.0),
        ChangeKind::RuleDeleted { rule_id, .. } => Some(rule_id.0),
        _ => None,
    }
}

/// Current answer for one subtask, tagged with the board epoch and the last
/// event seq it reflects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubtaskResult {
    pub subtask: TaskId,
    pub epoch: u64,
    pub seq: u64,
    pub solution: Option<Solution>,
    pub error: Option<String>,
    pub expansions: u64,
}

/// What one subtask's board did with an event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubtaskOutcome {
    pub subtask: TaskId,
    pub outcome: Option<ChangeOutcome>,
    /// Set when the board was (re)built instead of patched.
    pub rebuilt: bool,
    pub result: SubtaskResult,
}

/// Response to a committed event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Applied {
    pub event: ChangeEvent,
    pub outcomes: Vec<SubtaskOutcome>,
}

struct Slot {
    board: Option<(Board, SearchState)>,
    result: SubtaskResult,
}

/// Owns the repository and one incrementally maintained search per subtask.
pub struct Engine {
    policy: CostPolicy,
    initial_rules: Vec<Rule>,
    initial_catalog: Catalog,
    repo: SharedRepository,
    slots: BTreeMap<TaskId, Slot>,
}

impl Engine {
    /// Builds boards for every subtask that has rules and solves them.
    pub fn new(rules: Vec<Rule>, catalog: Catalog, policy: CostPolicy) -> Result<Engine, EngineError> {
        let mut seen: BTreeMap<RuleId, ()> = BTreeMap::new();
        for (i, r) in rules.iter().enumerate() {
            r.validate().map_err(|e| EngineError::InvalidRule(e.to_string()))?;
            if seen.insert(r.rule_id, ()).is_some() {
                return Err(EngineError::InvalidRule(format!("rule id {} used twice", r.rule_id)));
            }
            if let Some(d) = rules[..i].iter().find(|o| o.subtask == r.subtask && o.parameter == r.parameter && o.kind == r.kind) {
                return Err(EngineError::DuplicateActiveRule { subtask: r.subtask.clone(), parameter: r.parameter.clone(), kind: r.kind, existing: d.rule_id });
            }
        }
        let repo = SharedRepository::new(&rules, catalog.clone());
        let mut engine = Engine { policy, initial_rules: rules, initial_catalog: catalog, repo, slots: BTreeMap::new() };
        let subtasks: BTreeSet<TaskId> = engine.initial_rules.iter().map(|r| r.subtask.clone()).collect();
        for t in subtasks {
            engine.rebuild(&t, 0);
        }
        Ok(engine)
    }

    pub fn policy(&self) -> &CostPolicy {
        &self.policy
    }

    pub fn repository(&self) -> &SharedRepository {
        &self.repo
    }

    pub fn initial_rules(&self) -> &[Rule] {
        &self.initial_rules
    }

    pub fn initial_catalog(&self) -> &Catalog {
        &self.initial_catalog
    }

    pub fn subtasks(&self) -> impl Iterator<Item = &TaskId> {
        self.slots.keys()
    }

    pub fn board(&self, subtask: &TaskId) -> Option<&Board> {
        self.slots.get(subtask).and_then(|s| s.board.as_ref()).map(|(b, _)| b)
    }

    pub fn state(&self, subtask: &TaskId) -> Option<&SearchState> {
        self.slots.get(subtask).and_then(|s| s.board.as_ref()).map(|(_, s)| s)
    }

    pub fn result(&self, subtask: &TaskId) -> Option<&SubtaskResult> {
        self.slots.get(subtask).map(|s| &s.result)
    }

    pub fn results(&self) -> Vec<SubtaskResult> {
        self.slots.values().map(|s| s.result.clone()).collect()
    }

    pub fn descriptor(&self, subtask: &TaskId, provider: ProviderId) -> Option<&ServiceDescriptor> {
        self.repo.catalog.descriptor(provider, subtask)
    }

    /// Flags regions of a subtask's board for external optimization.
    pub fn mark_external(&mut self, subtask: &TaskId, regions: Range<usize>) -> Result<(), EngineError> {
        let slot = self.slots.get_mut(subtask).ok_or_else(|| EngineError::UnknownSubtask(subtask.clone()))?;
        let (board, _) = slot.board.as_mut().ok_or_else(|| EngineError::UnknownSubtask(subtask.clone()))?;
        board.mark_external(regions.clone()).map_err(|e| EngineError::InvalidEvent(e.to_string()))?;
        self.repo.external.entry(subtask.clone()).or_default().extend(regions);
        Ok(())
    }

    /// Gives direct access to one subtask's board and search state, e.g. to
    /// merge external partial solutions. The result is refreshed afterwards.
    pub fn with_search<R>(&mut self, subtask: &TaskId, f: impl FnOnce(&mut SearchState, &Board) -> R) -> Result<R, EngineError> {
        let seq = self.repo.next_seq - 1;
        let slot = self.slots.get_mut(subtask).ok_or_else(|| EngineError::UnknownSubtask(subtask.clone()))?;
        let (board, state) = slot.board.as_mut().ok_or_else(|| EngineError::UnknownSubtask(subtask.clone()))?;
        let r = f(state, board);
        slot.result = solve(subtask, board, state, seq);
        self.sync_solution(subtask);
        Ok(r)
    }

    /// Rules controller: validates a rule edit and commits the matching event.
    pub fn apply_rule_mutation(&mut self, mutation: RuleMutation) -> Result<Applied, EngineError> {
        let seq = self.repo.next_seq;
        let kind = match mutation {
            RuleMutation::Add { subtask, parameter, kind, border } => {
                if let Some(existing) = self.repo.rules.values().find(|r| r.subtask == subtask && r.parameter == parameter && r.kind == kind) {
                    return Err(EngineError::DuplicateActiveRule { subtask, parameter, kind, existing: existing.rule_id });
                }
                let rule = Rule::new(self.repo.next_rule_id(), subtask, parameter, kind, border, seq).map_err(|e| EngineError::InvalidRule(e.to_string()))?;
                ChangeKind::RuleAdded { rule }
            }
            RuleMutation::Modify { rule_id, kind, border } => {
                let old = self.repo.rules.get(&rule_id).ok_or(EngineError::UnknownRule(rule_id))?;
                let kind = kind.unwrap_or(old.kind);
                if let Some(existing) = self.repo.rules.values().find(|r| r.rule_id != rule_id && r.subtask == old.subtask && r.parameter == old.parameter && r.kind == kind) {
                    return Err(EngineError::DuplicateActiveRule { subtask: old.subtask.clone(), parameter: old.parameter.clone(), kind, existing: existing.rule_id });
                }
                let rule = Rule::new(rule_id, old.subtask.clone(), old.parameter.clone(), kind, border, seq).map_err(|e| EngineError::InvalidRule(e.to_string()))?;
                ChangeKind::RuleModified { rule }
            }
            RuleMutation::Delete { rule_id } => {
                let old = self.repo.rules.get(&rule_id).ok_or(EngineError::UnknownRuleForDelete(rule_id))?;
                ChangeKind::RuleDeleted { rule_id, subtask: old.subtask.clone() }
            }
        };
        Ok(self.commit(ChangeEvent { seq, kind }))
    }

    /// Validates and commits a service-side change (value or metric).
    pub fn inject(&mut self, kind: ChangeKind) -> Result<Applied, EngineError> {
        match &kind {
            ChangeKind::ParameterChanged { task, provider, offer_index, parameter, value } => {
                let mut probe = self.repo.catalog.clone();
                if !probe.set_value(task, *provider, *offer_index, parameter, value.clone()) {
                    return Err(EngineError::InvalidEvent(format!(
                        "no offer {provider}/{offer_index} with parameter {parameter} for task {task}, or negative value"
                    )));
                }
            }
            ChangeKind::MetricChanged { provider, metric } => {
                if !(0.0..=1.0).contains(metric) {
                    return Err(EngineError::InvalidEvent(format!("metric {metric} is outside [0,1]")));
                }
                if !self.repo.catalog.providers().contains(provider) {
                    return Err(EngineError::InvalidEvent(format!("unknown provider {provider}")));
                }
            }
            _ => return Err(EngineError::RuleEventInjected),
        }
        let seq = self.repo.next_seq;
        Ok(self.commit(ChangeEvent { seq, kind }))
    }

    /// Appends a validated event and brings every affected subtask up to date.
    fn commit(&mut self, event: ChangeEvent) -> Applied {
        self.repo.fold(event.clone());
        let seq = event.seq;
        let affected: Vec<TaskId> = match &event.kind {
            ChangeKind::RuleAdded { rule } | ChangeKind::RuleModified { rule } => vec![rule.subtask.clone()],
            ChangeKind::RuleDeleted { subtask, .. } => vec![subtask.clone()],
            ChangeKind::ParameterChanged { task, .. } => vec![task.clone()],
            ChangeKind::MetricChanged { .. } => self.slots.keys().cloned().collect(),
        };
        let mut outcomes = Vec::new();
        for t in affected {
            let has_board = self.slots.get(&t).is_some_and(|s| s.board.is_some());
            if !has_board {
                if matches!(event.kind, ChangeKind::RuleAdded { .. } | ChangeKind::RuleModified { .. }) {
                    self.rebuild(&t, seq);
                    outcomes.push(SubtaskOutcome { subtask: t.clone(), outcome: None, rebuilt: true, result: self.slots[&t].result.clone() });
                }
                continue;
            }
            let slot = self.slots.get_mut(&t).expect("checked");
            let (board, state) = slot.board.as_mut().expect("checked");
            state.set_clock(seq);
            let outcome = match apply_change(state, board, &event.kind) {
                Ok(o) => Some(o),
                Err(e) => {
                    slot.result.error = Some(e.to_string());
                    None
                }
            };
            slot.result = solve(&t, board, state, seq);
            outcomes.push(SubtaskOutcome { subtask: t.clone(), outcome, rebuilt: false, result: slot.result.clone() });
            self.sync_solution(&t);
        }
        Applied { event, outcomes }
    }

    fn rebuild(&mut self, subtask: &TaskId, seq: u64) {
        let rules = self.repo.rules_for(subtask);
        let slot = match Board::build(subtask, &rules, &self.repo.catalog, self.policy) {
            Ok(board) => {
                let mut state = SearchState::new(&board, None);
                state.set_clock(seq);
                let result = solve(subtask, &board, &mut state, seq);
                Slot { board: Some((board, state)), result }
            }
            Err(e) => Slot { board: None, result: unavailable(subtask, &e, seq) },
        };
        self.slots.insert(subtask.clone(), slot);
        self.sync_solution(subtask);
    }

    fn sync_solution(&mut self, subtask: &TaskId) {
        match self.slots.get(subtask).and_then(|s| s.result.solution.clone()) {
            Some(s) => self.repo.solutions.insert(subtask.clone(), s),
            None => self.repo.solutions.remove(subtask),
        };
    }

    /// Rebuilds an engine from the initial rules and catalog by re-applying
    /// the log, and checks that every event was accepted in the same shape.
    pub fn replay(&self) -> Result<Engine, EngineError> {
        Engine::replay_log(self.initial_rules.clone(), self.initial_catalog.clone(), self.policy, self.repo.log())
    }

    pub fn replay_log(rules: Vec<Rule>, catalog: Catalog, policy: CostPolicy, log: &[ChangeEvent]) -> Result<Engine, EngineError> {
        let mut engine = Engine::new(rules, catalog, policy)?;
        for event in log {
            if event.seq < engine.repo.next_seq {
                return Err(EngineError::ReplayDiverged(event.seq));
            }
            engine.commit(event.clone());
        }
        Ok(engine)
    }
}

fn solve(subtask: &TaskId, board: &Board, state: &mut SearchState, seq: u64) -> SubtaskResult {
    let (solution, error) = match state.resume(board) {
        Ok(s) => (Some(s), None),
        Err(e @ SearchError::NoFeasiblePath(_)) => (None, Some(e.to_string())),
        Err(e) => (None, Some(e.to_string())),
    };
    SubtaskResult { subtask: subtask.clone(), epoch: board.epoch(), seq, solution, error, expansions: state.expansions() }
}

fn unavailable(subtask: &TaskId, e: &BoardError, seq: u64) -> SubtaskResult {
    SubtaskResult { subtask: subtask.clone(), epoch: 0, seq, solution: None, error: Some(e.to_string()), expansions: 0 }
}

/// Reads the engine's current answers for the executor. Locks per call, so
/// changes committed between steps reach the later steps.
pub struct EngineSelector<'a>(pub &'a Mutex<Engine>);

impl Selector for EngineSelector<'_> {
    fn select(&self, subtask: &TaskId) -> Result<Solution, ExecutorError> {
        let engine = self.0.lock().expect("engine lock");
        let result = engine.result(subtask).ok_or_else(|| ExecutorError::Selection { subtask: subtask.clone(), reason: "no rules for subtask".into() })?;
        match (&result.solution, &result.error) {
            (Some(s), _) => Ok(s.clone()),
            (None, Some(e)) if e.starts_with("no feasible path") => Err(ExecutorError::NoFeasiblePath { subtask: subtask.clone(), report: None }),
            (None, e) => Err(ExecutorError::Selection { subtask: subtask.clone(), reason: e.clone().unwrap_or_default() }),
        }
    }

    fn descriptor(&self, subtask: &TaskId, provider: ProviderId) -> Option<ServiceDescriptor> {
        self.0.lock().expect("engine lock").descriptor(subtask, provider).cloned()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    DryRun,
    Confirm,
    Auto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RunProgress {
    Selected { subtask: TaskId, solution: Solution },
    Invoked { step: usize, subtask: TaskId, provider: ProviderId, output_len: usize },
    Failed { subtask: Option<TaskId>, step: Option<usize>, message: String },
    Finished { final_len: Option<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: u64,
    pub subtasks: Vec<TaskId>,
    pub mode: RunMode,
    pub progress: Vec<RunProgress>,
    pub report: Option<ExecutionReport>,
}

impl RunRecord {
    pub fn succeeded(&self) -> bool {
        matches!(self.progress.last(), Some(RunProgress::Finished { .. }))
    }
}

/// Algorithm controller: selects providers for every subtask, drives the
/// executor in the requested mode and records what happened.
pub fn algorithm_controller_run(
    engine: &Mutex<Engine>,
    id: u64,
    workflow: &Workflow,
    mode: RunMode,
    invoker: &dyn ProviderInvoker,
    confirm: Option<&Confirm<'_>>,
) -> RunRecord {
    let selector = EngineSelector(engine);
    let mut record = RunRecord { id, subtasks: workflow.subtasks().to_vec(), mode, progress: Vec::new(), report: None };
    let deny = |_: &[Solution]| false;
    let exec_mode = match mode {
        RunMode::DryRun => Mode::DryRun,
        RunMode::Auto => Mode::Auto,
        RunMode::Confirm => Mode::Confirm(confirm.unwrap_or(&deny)),
    };
    let outcome = executor::execute_workflow(workflow, &selector, invoker, exec_mode);
    let report = match outcome {
        Ok(r) => r,
        Err(e) => {
            let (subtask, step, report) = match &e {
                ExecutorError::NoFeasiblePath { subtask, report } => (Some(subtask.clone()), None, report.as_deref().cloned()),
                ExecutorError::Selection { subtask, .. } => (Some(subtask.clone()), None, None),
                ExecutorError::InvocationFailed { step, report, .. } => (workflow.subtasks().get(step - 1).cloned(), Some(*step), Some((**report).clone())),
                _ => (None, None, None),
            };
            if let Some(r) = &report {
                push_steps(&mut record, r);
            }
            record.report = report;
            record.progress.push(RunProgress::Failed { subtask, step, message: e.to_string() });
            return record;
        }
    };
    push_steps(&mut record, &report);
    record.progress.push(RunProgress::Finished { final_len: report.final_payload.as_ref().map(|a| a.bytes.len()) });
    record.report = Some(report);
    record
}

fn push_steps(record: &mut RunRecord, report: &ExecutionReport) {
    for s in &report.steps {
        record.progress.push(RunProgress::Selected { subtask: s.subtask.clone(), solution: s.solution.clone() });
        if let Some(out) = &s.output {
            record.progress.push(RunProgress::Invoked { step: s.step, subtask: s.subtask.clone(), provider: s.solution.provider, output_len: out.len() });
        }
    }
}
