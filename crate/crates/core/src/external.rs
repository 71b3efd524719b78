//! External optimization: hand a branch of a board (some providers over a
//! contiguous region range) to another solver while the local search keeps
//! running, then merge whatever comes back into the openlist.
//!
//! A branch never crosses offers, so an answer names one offer and the local
//! costs of its nodes inside the range. The merge adds the locally known
//! prefix and inserts the branch's last node like any other open entry; if
//! it is not competitive the search simply never picks it.
//!
//! Any engine can answer such requests through [`LocalSolver`], optionally
//! delegating further to another solver.

use std::collections::BTreeSet;
use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::board::{Board, BoardError, BoardOffer};
use crate::cost::CostPolicy;
use crate::dynamics::{check_best, evict_descendants, ChangeOutcome, OutcomeKind};
use crate::model::{Cost, NodeId, ProviderId, Rule, RuleId, TaskId};
use crate::search::{SearchError, SearchState};

/// Allowed gap between a claimed branch cost and the sum of its node costs.
pub const VERIFY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExternalError {
    #[error("invalid branch: {0}")]
    InvalidBranchSpec(String),
    #[error("partial solution failed verification: {0}")]
    VerificationFailed(String),
    #[error("delegation was made at board epoch {delegated}, board is at {board}")]
    StaleEpoch { delegated: u64, board: u64 },
    #[error("delegation {0} is not pending")]
    NotPending(u64),
    #[error("partial solution belongs to delegation {found}, expected {expected}")]
    WrongDelegation { expected: u64, found: u64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("bad fragment: {0}")]
    BadFragment(String),
    #[error("solver unreachable: {0}")]
    Transport(String),
    #[error(transparent)]
    Search(#[from] SearchError),
}

impl From<BoardError> for SolverError {
    fn from(e: BoardError) -> Self {
        SolverError::BadFragment(e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub providers: BTreeSet<ProviderId>,
    pub regions: Range<usize>,
}

impl BranchSpec {
    /// Every provider over every region.
    pub fn whole(board: &Board) -> BranchSpec {
        BranchSpec { providers: board.offers().iter().map(|o| o.provider).collect(), regions: 0..board.region_count() }
    }

    fn validate(&self, board: &Board) -> Result<(), ExternalError> {
        let invalid = |m: String| Err(ExternalError::InvalidBranchSpec(m));
        if self.providers.is_empty() {
            return invalid("empty provider subset".into());
        }
        if let Some(p) = self.providers.iter().find(|p| !board.offers().iter().any(|o| o.provider == **p)) {
            return invalid(format!("provider {p} has no offers on the board"));
        }
        if self.regions.is_empty() || self.regions.end > board.region_count() {
            return invalid(format!("region range {:?} outside 0..{}", self.regions, board.region_count()));
        }
        if let Some(r) = self.regions.clone().find(|r| !board.regions()[*r].external) {
            return invalid(format!("region {r} is not marked for external optimization"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DelegationStatus {
    Pending,
    Returned,
    Ignored,
    TimedOut,
}

/// One region of a fragment: its rule and whether the rule is still active.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FragmentRegion {
    pub rule: Rule,
    pub active: bool,
}

/// Self-contained slice of a board sent to a solver. Regions are numbered
/// from 0 inside the fragment and carry no prefix cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fragment {
    pub subtask: TaskId,
    pub policy: CostPolicy,
    pub regions: Vec<FragmentRegion>,
    pub offers: Vec<BoardOffer>,
}

impl Fragment {
    pub fn from_board(board: &Board, spec: &BranchSpec) -> Fragment {
        let regions = board.regions()[spec.regions.clone()]
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut rule = r.rule.clone();
                rule.rule_id = RuleId(i as u64);
                rule.seq = i as u64;
                FragmentRegion { rule, active: r.active }
            })
            .collect();
        let offers = board.offers().iter().filter(|o| spec.providers.contains(&o.provider)).cloned().collect();
        Fragment { subtask: board.subtask().clone(), policy: *board.policy(), regions, offers }
    }

    pub fn to_board(&self) -> Result<Board, SolverError> {
        let rules: Vec<Rule> = self.regions.iter().map(|r| r.rule.clone()).collect();
        let mut board = Board::from_offers(&self.subtask, &rules, self.offers.clone(), self.policy)?;
        for r in self.regions.iter().filter(|r| !r.active) {
            board.zero_region(r.rule.rule_id)?;
        }
        Ok(board)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveRequest {
    pub delegation_id: u64,
    /// Board region the fragment's region 0 corresponds to.
    pub region_offset: usize,
    pub fragment: Fragment,
}

impl SolveRequest {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }

    pub fn from_json(text: &str) -> Result<SolveRequest, SolverError> {
        serde_json::from_str(text).map_err(|e| SolverError::BadFragment(e.to_string()))
    }
}

/// A solver's answer for one branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialSolution {
    pub delegation_id: u64,
    /// Board region where the branch starts.
    pub entry_region: usize,
    pub provider: ProviderId,
    pub offer_index: u32,
    /// Claimed cost of the branch.
    pub claimed: f64,
    /// Local cost of each node of the branch, in region order.
    pub node_costs: Vec<f64>,
}

impl PartialSolution {
    fn verify(&self) -> Result<(), ExternalError> {
        if let Some(c) = self.node_costs.iter().find(|c| !c.is_finite() || **c < 0.0) {
            return Err(ExternalError::VerificationFailed(format!("node cost {c} is not a finite non-negative number")));
        }
        let sum: f64 = self.node_costs.iter().sum();
        if !self.claimed.is_finite() || (sum - self.claimed).abs() > VERIFY_TOLERANCE {
            return Err(ExternalError::VerificationFailed(format!("claimed {} but node costs sum to {sum}", self.claimed)));
        }
        Ok(())
    }
}

/// Anything that can solve a fragment: an in-process engine, a remote one.
/// `Ok(None)` means the fragment has no feasible path.
pub trait ExternalSolver: Send + Sync {
    fn solve(&self, request: &SolveRequest) -> Result<Option<PartialSolution>, SolverError>;
}

/// Runs the minimum-cost path search on the fragment, optionally delegating
/// the whole fragment one level further and racing that against itself.
#[derive(Clone, Default)]
pub struct LocalSolver {
    pub nested: Option<Arc<dyn ExternalSolver>>,
    pub nested_deadline: Option<Duration>,
}

impl LocalSolver {
    pub fn new() -> Self {
        LocalSolver::default()
    }

    pub fn delegating_to(solver: Arc<dyn ExternalSolver>, deadline: Duration) -> Self {
        LocalSolver { nested: Some(solver), nested_deadline: Some(deadline) }
    }
}

impl ExternalSolver for LocalSolver {
    fn solve(&self, request: &SolveRequest) -> Result<Option<PartialSolution>, SolverError> {
        serve_as_solver(request, self.nested.as_ref().map(|s| (s.clone(), self.nested_deadline.unwrap_or(Duration::from_secs(10)))))
    }
}

/// Answers a solve request by searching the fragment. The returned node
/// costs are the fragment's own, so the answer always verifies.
pub fn serve_as_solver(request: &SolveRequest, nested: Option<(Arc<dyn ExternalSolver>, Duration)>) -> Result<Option<PartialSolution>, SolverError> {
    let mut board = request.fragment.to_board()?;
    let mut state = SearchState::new(&board, None);
    if let Some((solver, deadline)) = nested {
        board.mark_external(0..board.region_count())?;
        state.sync_epoch(&board);
        let spec = BranchSpec::whole(&board);
        let mut delegation = delegate_branch(&state, &board, spec, solver, deadline).map_err(|e| SolverError::BadFragment(e.to_string()))?;
        if let Some(partial) = delegation.wait() {
            // a bad nested answer is dropped, the local search still stands
            let _ = merge_partial_solution(&mut state, &board, &mut delegation, &partial);
        }
    }
    let solution = match state.resume(&board) {
        Ok(s) => s,
        Err(SearchError::NoFeasiblePath(_)) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let node_costs: Vec<f64> = solution.path.iter().map(|id| board.node(*id).and_then(|n| n.cost.finite()).unwrap_or(f64::INFINITY)).collect();
    Ok(Some(PartialSolution {
        delegation_id: request.delegation_id,
        entry_region: request.region_offset,
        provider: solution.provider,
        offer_index: solution.offer_index,
        claimed: node_costs.iter().sum(),
        node_costs,
    }))
}

static NEXT_DELEGATION: AtomicU64 = AtomicU64::new(1);

/// A branch handed to an external solver. The solver runs on its own thread;
/// the answer is collected with [`poll`](Self::poll) or [`wait`](Self::wait).
#[derive(Debug)]
pub struct BranchDelegation {
    pub id: u64,
    pub subtask: TaskId,
    pub spec: BranchSpec,
    pub epoch: u64,
    pub deadline: Duration,
    pub status: DelegationStatus,
    pub error: Option<String>,
    started: Instant,
    rx: Option<Receiver<Result<Option<PartialSolution>, SolverError>>>,
}

impl BranchDelegation {
    fn receive(&mut self, answer: Result<Option<PartialSolution>, SolverError>) -> Option<PartialSolution> {
        self.rx = None;
        match answer {
            Ok(Some(p)) => Some(p),
            Ok(None) => {
                self.status = DelegationStatus::Returned;
                None
            }
            Err(e) => {
                self.status = DelegationStatus::Ignored;
                self.error = Some(e.to_string());
                None
            }
        }
    }

    fn expire(&mut self) {
        self.rx = None;
        self.status = DelegationStatus::TimedOut;
    }

    /// Non-blocking check for an answer.
    pub fn poll(&mut self) -> Option<PartialSolution> {
        let rx = self.rx.as_ref()?;
        match rx.try_recv() {
            Ok(answer) => self.receive(answer),
            Err(_) if self.started.elapsed() >= self.deadline => {
                self.expire();
                None
            }
            Err(_) => None,
        }
    }

    /// Blocks until the solver answers or the deadline passes.
    pub fn wait(&mut self) -> Option<PartialSolution> {
        let rx = self.rx.as_ref()?;
        let left = self.deadline.saturating_sub(self.started.elapsed());
        match rx.recv_timeout(left) {
            Ok(answer) => self.receive(answer),
            Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => {
                self.expire();
                None
            }
        }
    }
}

/// Sends a branch to `solver` on a background thread and returns at once.
pub fn delegate_branch(
    state: &SearchState,
    board: &Board,
    spec: BranchSpec,
    solver: Arc<dyn ExternalSolver>,
    deadline: Duration,
) -> Result<BranchDelegation, ExternalError> {
    spec.validate(board)?;
    if state.board_epoch() != board.epoch() {
        return Err(ExternalError::StaleEpoch { delegated: state.board_epoch(), board: board.epoch() });
    }
    let id = NEXT_DELEGATION.fetch_add(1, Ordering::Relaxed);
    let request = SolveRequest { delegation_id: id, region_offset: spec.regions.start, fragment: Fragment::from_board(board, &spec) };
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let _ = tx.send(solver.solve(&request));
    });
    Ok(BranchDelegation {
        id,
        subtask: board.subtask().clone(),
        spec,
        epoch: board.epoch(),
        deadline,
        status: DelegationStatus::Pending,
        error: None,
        started: Instant::now(),
        rx: Some(rx),
    })
}

/// Verifies `partial` and inserts its branch's last node into the openlist
/// at prefix + claimed cost, unless the lists already hold it cheaper.
pub fn merge_partial_solution(
    state: &mut SearchState,
    board: &Board,
    delegation: &mut BranchDelegation,
    partial: &PartialSolution,
) -> Result<ChangeOutcome, ExternalError> {
    if delegation.status != DelegationStatus::Pending {
        return Err(ExternalError::NotPending(delegation.id));
    }
    if partial.delegation_id != delegation.id {
        return Err(ExternalError::WrongDelegation { expected: delegation.id, found: partial.delegation_id });
    }
    if delegation.epoch != board.epoch() || state.board_epoch() != board.epoch() {
        delegation.status = DelegationStatus::Ignored;
        return Err(ExternalError::StaleEpoch { delegated: delegation.epoch, board: board.epoch() });
    }
    let checked = partial.verify().and_then(|_| branch_nodes(board, delegation, partial));
    let nodes = match checked {
        Ok(nodes) => nodes,
        Err(e) => {
            delegation.status = DelegationStatus::Ignored;
            delegation.error = Some(e.to_string());
            return Err(e);
        }
    };
    delegation.status = DelegationStatus::Returned;
    let inert = ChangeOutcome { kind: OutcomeKind::NoOp, reopened: Vec::new(), invalidated_solution: false };

    let chain = board.chain(partial.provider, partial.offer_index);
    let prefix = chain[..partial.entry_region].iter().fold(Cost::ZERO, |acc, id| acc + board.node(*id).map_or(Cost::Infeasible, |n| n.cost));
    let Cost::Finite(prefix) = prefix else {
        return Ok(inert);
    };
    let cumulative = prefix + partial.claimed;
    let terminal = *nodes.last().expect("branch is nonempty");

    let known = state.open_cumulative(terminal).or(state.closed_cumulative(terminal));
    if known.is_some_and(|k| k <= cumulative) {
        return Ok(inert);
    }
    for pair in chain[..=chain.iter().position(|n| *n == terminal).expect("terminal on chain")].windows(2) {
        state.set_ancestor(pair[1], pair[0]);
    }
    let mut reopened = Vec::new();
    if state.remove_closed(terminal).is_some() {
        evict_descendants(state, board, terminal);
        reopened.push(terminal);
    }
    state.remove_open(terminal);
    let ancestor = board.predecessor(terminal).ok().flatten();
    state.push_open(board, terminal, cumulative, ancestor);
    let invalidated_solution = check_best(state, board);
    Ok(ChangeOutcome { kind: OutcomeKind::ListsPatched, reopened, invalidated_solution })
}

/// Board nodes covered by the partial solution, in region order.
fn branch_nodes(board: &Board, delegation: &BranchDelegation, partial: &PartialSolution) -> Result<Vec<NodeId>, ExternalError> {
    let spec = &delegation.spec;
    let fail = |m: String| Err(ExternalError::VerificationFailed(m));
    if partial.entry_region != spec.regions.start {
        return fail(format!("entry region {} but branch starts at {}", partial.entry_region, spec.regions.start));
    }
    if !spec.providers.contains(&partial.provider) {
        return fail(format!("provider {} is outside the branch", partial.provider));
    }
    if partial.node_costs.len() != spec.regions.len() {
        return fail(format!("{} node costs for {} regions", partial.node_costs.len(), spec.regions.len()));
    }
    spec.regions
        .clone()
        .map(|r| {
            board
                .node_at(r, partial.provider, partial.offer_index)
                .ok_or_else(|| ExternalError::VerificationFailed(format!("no node for {}/{} in region {r}", partial.provider, partial.offer_index)))
        })
        .collect()
}
