//! Applies live changes to a board and its search state so that a later
//! [`SearchState::resume`] reaches the same optimum as a fresh search.
//!
//! Rule additions and modifications append a region at the end of the graph.
//! Rule deletions zero the rule's region and, once nodes at or beyond that
//! region were closed, backtrack: everything from that region on is thrown
//! away and the region is reseeded from its closed predecessors. Value and
//! metric changes patch individual nodes; a closed node whose cost changed
//! moves back to the openlist and its closed descendants are evicted.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::board::{Board, BoardError, CostChange};
use crate::model::{ChangeKind, Cost, NodeId, ParamName, ProviderId, Rule, RuleId, Value};
use crate::search::SearchState;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("unknown offer {provider}/{offer_index} or parameter {parameter}")]
    UnknownProviderOrParameter { provider: ProviderId, offer_index: u32, parameter: ParamName },
    #[error("metric {0} is outside [0,1]")]
    MetricOutOfRange(f64),
    #[error(transparent)]
    Board(#[from] BoardError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeKind {
    NoOp,
    ListsPatched,
    RegionAppended,
    BacktraceRestarted,
    ProviderExcluded,
}

/// Audit record of how one change was handled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangeOutcome {
    pub kind: OutcomeKind,
    /// Nodes moved (back) onto the openlist.
    pub reopened: Vec<NodeId>,
    /// A previously returned solution is no longer valid.
    pub invalidated_solution: bool,
}

impl ChangeOutcome {
    fn noop() -> Self {
        ChangeOutcome { kind: OutcomeKind::NoOp, reopened: Vec::new(), invalidated_solution: false }
    }
}

/// Cumulative cost available to `node` from its predecessor: 0 for the first
/// region, the predecessor's closed cost otherwise.
fn prefix(state: &SearchState, board: &Board, node: NodeId) -> (Option<f64>, Option<NodeId>) {
    match board.predecessor(node) {
        Ok(Some(pred)) => (state.closed_cumulative(pred), Some(pred)),
        Ok(None) if board.node(node).is_some_and(|n| n.region == 0) => (Some(0.0), None),
        _ => (None, None),
    }
}

pub(crate) fn evict_descendants(state: &mut SearchState, board: &Board, node: NodeId) {
    let mut next = board.successors(node).unwrap_or_default();
    while let Some(s) = next.pop() {
        state.remove_open(s);
        state.remove_closed(s);
        next.extend(board.successors(s).unwrap_or_default());
    }
}

/// Drops the stored solution if any node of its path is no longer closed or
/// the path no longer spans the board.
pub(crate) fn check_best(state: &mut SearchState, board: &Board) -> bool {
    let broken = state
        .best()
        .is_some_and(|b| b.path.len() != board.region_count() || b.path.iter().any(|n| !state.is_closed(*n)));
    broken && state.invalidate_best()
}

/// Reconciles the lists with one node whose local cost changed. Returns
/// whether the lists were touched; pushes closed→open transfers to `reopened`.
fn patch_node(state: &mut SearchState, board: &Board, change: CostChange, reopened: &mut Vec<NodeId>) -> bool {
    let id = change.node;
    let (pre, pred) = prefix(state, board, id);
    let reinsert = |state: &mut SearchState| match (pre, change.new) {
        (Some(p), Cost::Finite(c)) => {
            state.push_open(board, id, p + c, pred);
            true
        }
        _ => false,
    };

    if state.is_open(id) {
        state.remove_open(id);
        reinsert(state);
        true
    } else if state.is_closed(id) {
        state.remove_closed(id);
        evict_descendants(state, board, id);
        if reinsert(state) {
            reopened.push(id);
        }
        true
    } else {
        // Not yet known, unless it was skipped as infeasible below a closed
        // predecessor; then it would never be reached again.
        reinsert(state)
    }
}

fn patch_all(state: &mut SearchState, board: &Board, changes: Vec<CostChange>) -> (bool, Vec<NodeId>) {
    let mut reopened = Vec::new();
    let mut touched = false;
    for c in changes {
        touched |= patch_node(state, board, c, &mut reopened);
    }
    (touched, reopened)
}

/// A provider changed one value of one offer.
pub fn apply_parameter_change(
    state: &mut SearchState,
    board: &mut Board,
    provider: ProviderId,
    offer_index: u32,
    parameter: &ParamName,
    value: Value,
) -> Result<ChangeOutcome, DynamicsError> {
    let changes = board.set_value(provider, offer_index, parameter, value).map_err(|e| match e {
        BoardError::UnknownOffer { provider, offer_index } => {
            DynamicsError::UnknownProviderOrParameter { provider, offer_index, parameter: parameter.clone() }
        }
        other => other.into(),
    })?;
    let (touched, reopened) = patch_all(state, board, changes);
    let invalidated = check_best(state, board);
    if !touched {
        return Ok(ChangeOutcome { invalidated_solution: invalidated, ..ChangeOutcome::noop() });
    }
    Ok(ChangeOutcome { kind: OutcomeKind::ListsPatched, reopened, invalidated_solution: invalidated })
}

/// A rule was added or modified: append a region re-checking it and extend
/// every closed path that ended in the previous last region.
pub fn apply_rule_event(state: &mut SearchState, board: &mut Board, rule: Rule) -> Result<ChangeOutcome, DynamicsError> {
    let region = board.append_region(rule)?;
    state.sync_epoch(board);
    let frontier: Vec<(NodeId, f64)> = board
        .region_nodes(region - 1)
        .filter_map(|n| state.closed_cumulative(n.id).map(|c| (n.id, c)))
        .collect();
    for (node, cum) in frontier {
        for next in board.successors(node)? {
            if let Some(Cost::Finite(c)) = board.node(next).map(|n| n.cost) {
                state.push_open(board, next, cum + c, Some(node));
            }
        }
    }
    let invalidated = check_best(state, board);
    Ok(ChangeOutcome { kind: OutcomeKind::RegionAppended, reopened: Vec::new(), invalidated_solution: invalidated })
}

/// A rule was deleted: its region's costs become zero.
pub fn apply_rule_deletion(state: &mut SearchState, board: &mut Board, rule_id: RuleId) -> Result<ChangeOutcome, DynamicsError> {
    let had_solution = state.best().is_some();
    let zeroed = board.zero_region(rule_id)?;
    state.sync_epoch(board);
    let first = zeroed[0];

    let closed_beyond = state.closed_entries().any(|(n, _)| board.node(n).is_some_and(|n| n.region >= first));
    let backtrace = had_solution || closed_beyond;

    if backtrace {
        let doomed: Vec<NodeId> = board.nodes().filter(|n| n.region >= first).map(|n| n.id).collect();
        for n in doomed {
            state.remove_open(n);
            state.remove_closed(n);
        }
    }

    let mut reseeded = Vec::new();
    let region_nodes: Vec<NodeId> = board.region_nodes(first).map(|n| n.id).collect();
    for id in region_nodes {
        let (pre, pred) = prefix(state, board, id);
        let Some(Cost::Finite(c)) = board.node(id).map(|n| n.cost) else {
            state.remove_open(id);
            continue;
        };
        if let Some(p) = pre {
            state.push_open(board, id, p + c, pred);
            reseeded.push(id);
        }
    }

    let invalidated = check_best(state, board);
    let kind = if backtrace { OutcomeKind::BacktraceRestarted } else { OutcomeKind::ListsPatched };
    Ok(ChangeOutcome { kind, reopened: reseeded, invalidated_solution: invalidated })
}

/// A provider's availability changed.
pub fn apply_metric_change(state: &mut SearchState, board: &mut Board, provider: ProviderId, metric: f64) -> Result<ChangeOutcome, DynamicsError> {
    if !(0.0..=1.0).contains(&metric) {
        return Err(DynamicsError::MetricOutOfRange(metric));
    }
    if board.metric(provider).is_none() {
        return Ok(ChangeOutcome::noop());
    }
    let excluded = board.policy().excludes(metric);
    let changes = board.set_metric(provider, metric)?;
    let (touched, reopened) = patch_all(state, board, changes);
    let invalidated = check_best(state, board);
    let kind = if excluded {
        OutcomeKind::ProviderExcluded
    } else if touched {
        OutcomeKind::ListsPatched
    } else {
        OutcomeKind::NoOp
    };
    Ok(ChangeOutcome { kind, reopened, invalidated_solution: invalidated })
}

/// Dispatches one change to the matching protocol. Changes addressed to
/// another subtask are no-ops.
pub fn apply_change(state: &mut SearchState, board: &mut Board, change: &ChangeKind) -> Result<ChangeOutcome, DynamicsError> {
    match change {
        ChangeKind::RuleAdded { rule } | ChangeKind::RuleModified { rule } => {
            if &rule.subtask != board.subtask() {
                return Ok(ChangeOutcome::noop());
            }
            apply_rule_event(state, board, rule.clone())
        }
        ChangeKind::RuleDeleted { rule_id, subtask } => {
            if subtask != board.subtask() {
                return Ok(ChangeOutcome::noop());
            }
            apply_rule_deletion(state, board, *rule_id)
        }
        ChangeKind::ParameterChanged { task, provider, offer_index, parameter, value } => {
            if task != board.subtask() {
                return Ok(ChangeOutcome::noop());
            }
            apply_parameter_change(state, board, *provider, *offer_index, parameter, value.clone())
        }
        ChangeKind::MetricChanged { provider, metric } => apply_metric_change(state, board, *provider, *metric),
    }
}
