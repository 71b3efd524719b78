//! Runs a linear workflow: pick the best provider for every subtask, then
//! call them in order, feeding each output into the next call.

use std::collections::BTreeSet;
use std::net::ToSocketAddrs;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::board::Board;
use crate::cost::CostPolicy;
use crate::model::{Catalog, ProviderId, Rule, ServiceDescriptor, Solution, TaskId};
use crate::registry::{call, Behavior, SimulatedProvider};
use crate::search::{find_best_provider, SearchError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub media_type: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn new(media_type: impl Into<String>, bytes: impl Into<Vec<u8>>) -> Self {
        Artifact { media_type: media_type.into(), bytes: bytes.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workflow {
    subtasks: Vec<TaskId>,
    pub artifact: Artifact,
}

impl Workflow {
    pub fn new(subtasks: Vec<TaskId>, artifact: Artifact) -> Result<Workflow, ExecutorError> {
        if subtasks.is_empty() {
            return Err(ExecutorError::EmptyWorkflow);
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = subtasks.iter().find(|t| !seen.insert(*t)) {
            return Err(ExecutorError::DuplicateSubtask(dup.clone()));
        }
        Ok(Workflow { subtasks, artifact })
    }

    pub fn subtasks(&self) -> &[TaskId] {
        &self.subtasks
    }
}

/// Calls a provider with a payload.
pub trait ProviderInvoker: Send + Sync {
    fn invoke(&self, descriptor: &ServiceDescriptor, input: &[u8]) -> Result<Vec<u8>, String>;
}

/// Calls an in-process [`SimulatedProvider`] built from the descriptor.
#[derive(Clone, Copy, Debug, Default)]
pub struct SimulatedInvoker {
    pub seed: u64,
    pub behavior: Behavior,
}

impl ProviderInvoker for SimulatedInvoker {
    fn invoke(&self, descriptor: &ServiceDescriptor, input: &[u8]) -> Result<Vec<u8>, String> {
        Ok(SimulatedProvider::new(descriptor.clone(), self.seed).with_behavior(self.behavior).invoke(input))
    }
}

/// Calls the provider at its descriptor address over the line protocol.
#[derive(Clone, Copy, Debug)]
pub struct NetworkInvoker {
    pub timeout: Duration,
}

impl ProviderInvoker for NetworkInvoker {
    fn invoke(&self, descriptor: &ServiceDescriptor, input: &[u8]) -> Result<Vec<u8>, String> {
        let addr = (descriptor.address.as_str(), descriptor.port)
            .to_socket_addrs()
            .map_err(|e| e.to_string())?
            .next()
            .ok_or_else(|| format!("{} does not resolve", descriptor.address))?;
        call(addr, &descriptor.task, input, self.timeout).map_err(|e| e.to_string())
    }
}

/// Source of the current best provider per subtask.
pub trait Selector: Sync {
    fn select(&self, subtask: &TaskId) -> Result<Solution, ExecutorError>;
    fn descriptor(&self, subtask: &TaskId, provider: ProviderId) -> Option<ServiceDescriptor>;
}

/// Builds a fresh board per request from a fixed catalog and rule set.
pub struct CatalogSelector<'a> {
    pub catalog: &'a Catalog,
    pub rules: &'a [Rule],
    pub policy: CostPolicy,
}

impl Selector for CatalogSelector<'_> {
    fn select(&self, subtask: &TaskId) -> Result<Solution, ExecutorError> {
        let rules: Vec<Rule> = self.rules.iter().filter(|r| &r.subtask == subtask).cloned().collect();
        let board = Board::build(subtask, &rules, self.catalog, self.policy).map_err(|e| ExecutorError::Selection { subtask: subtask.clone(), reason: e.to_string() })?;
        find_best_provider(&board, None).map_err(|e| from_search(subtask, e))
    }

    fn descriptor(&self, subtask: &TaskId, provider: ProviderId) -> Option<ServiceDescriptor> {
        self.catalog.descriptor(provider, subtask).cloned()
    }
}

pub fn from_search(subtask: &TaskId, e: SearchError) -> ExecutorError {
    match e {
        SearchError::NoFeasiblePath(_) => ExecutorError::NoFeasiblePath { subtask: subtask.clone(), report: None },
        other => ExecutorError::Selection { subtask: subtask.clone(), reason: other.to_string() },
    }
}

/// Asked with the selected solutions before any provider is called.
pub type Confirm<'a> = dyn Fn(&[Solution]) -> bool + Sync + 'a;

/// How far to go after selection.
#[derive(Clone, Copy)]
pub enum Mode<'a> {
    DryRun,
    /// Asks the callback to approve the selected providers before calling any.
    Confirm(&'a Confirm<'a>),
    Auto,
}

impl Mode<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::DryRun => "dry_run",
            Mode::Confirm(_) => "confirm",
            Mode::Auto => "auto",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// 1-based.
    pub step: usize,
    pub subtask: TaskId,
    pub solution: Solution,
    /// The provider differs from the one picked before execution started.
    pub reselected: bool,
    pub output: Option<Vec<u8>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub steps: Vec<StepReport>,
    pub final_payload: Option<Artifact>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecutorError {
    #[error("workflow has no subtasks")]
    EmptyWorkflow,
    #[error("subtask {0} appears twice in the workflow")]
    DuplicateSubtask(TaskId),
    #[error("no feasible provider for subtask {subtask}")]
    NoFeasiblePath { subtask: TaskId, report: Option<Box<ExecutionReport>> },
    #[error("selection for subtask {subtask} failed: {reason}")]
    Selection { subtask: TaskId, reason: String },
    #[error("step {step} failed: {reason}")]
    InvocationFailed { step: usize, reason: String, report: Box<ExecutionReport> },
    #[error("selection was not confirmed")]
    ConfirmationDenied,
}

/// Selects providers for all subtasks, in parallel or one after another.
/// The result is in workflow order either way.
pub fn select_all(selector: &dyn Selector, subtasks: &[TaskId], parallel: bool) -> Vec<Result<Solution, ExecutorError>> {
    if !parallel {
        return subtasks.iter().map(|t| selector.select(t)).collect();
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = subtasks.iter().map(|t| s.spawn(move || selector.select(t))).collect();
        handles.into_iter().map(|h| h.join().expect("selection thread panicked")).collect()
    })
}

pub fn execute_workflow(workflow: &Workflow, selector: &dyn Selector, invoker: &dyn ProviderInvoker, mode: Mode<'_>) -> Result<ExecutionReport, ExecutorError> {
    let initial: Vec<Solution> = select_all(selector, &workflow.subtasks, true).into_iter().collect::<Result<_, _>>()?;

    let mut report = ExecutionReport::default();
    if let Mode::DryRun = mode {
        report.steps = workflow
            .subtasks
            .iter()
            .zip(initial)
            .enumerate()
            .map(|(i, (subtask, solution))| StepReport { step: i + 1, subtask: subtask.clone(), solution, reselected: false, output: None })
            .collect();
        return Ok(report);
    }
    if let Mode::Confirm(approve) = mode {
        if !approve(&initial) {
            return Err(ExecutorError::ConfirmationDenied);
        }
    }

    let mut input = workflow.artifact.bytes.clone();
    for (i, (subtask, first)) in workflow.subtasks.iter().zip(&initial).enumerate() {
        let step = i + 1;
        // later steps pick up whatever changed while earlier ones ran
        let solution = if i == 0 {
            first.clone()
        } else {
            match selector.select(subtask) {
                Ok(s) => s,
                Err(ExecutorError::NoFeasiblePath { subtask, .. }) => {
                    return Err(ExecutorError::NoFeasiblePath { subtask, report: Some(Box::new(report)) });
                }
                Err(e) => return Err(e),
            }
        };
        let reselected = (solution.provider, solution.offer_index) != (first.provider, first.offer_index);
        let Some(descriptor) = selector.descriptor(subtask, solution.provider) else {
            let reason = format!("no descriptor for provider {} on {subtask}", solution.provider);
            return Err(ExecutorError::InvocationFailed { step, reason, report: Box::new(report) });
        };
        match invoker.invoke(&descriptor, &input) {
            Ok(output) => {
                report.steps.push(StepReport { step, subtask: subtask.clone(), solution, reselected, output: Some(output.clone()) });
                input = output;
            }
            Err(reason) => return Err(ExecutorError::InvocationFailed { step, reason, report: Box::new(report) }),
        }
    }
    report.final_payload = Some(Artifact { media_type: workflow.artifact.media_type.clone(), bytes: input });
    Ok(report)
}
