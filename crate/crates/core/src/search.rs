//! Minimum-cost path over a board.
//!
//! The openlist is a binary heap with lazy deletion: every entry carries the
//! version it was pushed with, and an entry is live only while the open map
//! still holds that version for its node. Cost rewrites (including increases)
//! push a fresh entry instead of decreasing a key.
//!
//! The state survives between calls so that [`crate::dynamics`] can patch the
//! lists after a change and [`SearchState::resume`] continues from there.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::board::Board;
use crate::model::{Cost, NodeId, ParameterNode, ProviderId, Solution, TaskId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchError {
    #[error("no feasible path for subtask {0}")]
    NoFeasiblePath(TaskId),
    #[error("search state is at board epoch {state}, board is at {board}")]
    EpochMismatch { state: u64, board: u64 },
    #[error("ancestor chain broken at node {0}")]
    BrokenAncestorChain(NodeId),
}

/// Cost-to-go estimate; must not overestimate.
pub type Heuristic = Arc<dyn Fn(&ParameterNode) -> f64 + Send + Sync>;

#[derive(Clone, Debug)]
struct Entry {
    key: f64,
    provider: ProviderId,
    offer_index: u32,
    region: usize,
    node: NodeId,
    version: u64,
}

impl Entry {
    fn rank(&self) -> (ProviderId, u32, Reverse<usize>, NodeId) {
        (self.provider, self.offer_index, Reverse(self.region), self.node)
    }
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key
            .total_cmp(&other.key)
            .then_with(|| self.rank().cmp(&other.rank()))
            .then_with(|| self.version.cmp(&other.version))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OpenRecord {
    pub cumulative: f64,
    pub version: u64,
}

/// Result of a bounded run.
#[derive(Clone, Debug, PartialEq)]
pub enum Progress {
    Done(Solution),
    /// The expansion budget ran out before a solution was certain.
    Pending,
}

#[derive(Clone)]
pub struct SearchState {
    subtask: TaskId,
    board_epoch: u64,
    heap: BinaryHeap<Reverse<Entry>>,
    open: BTreeMap<NodeId, OpenRecord>,
    closed: BTreeMap<NodeId, f64>,
    ancestors: BTreeMap<NodeId, NodeId>,
    best: Option<Solution>,
    heuristic: Option<Heuristic>,
    next_version: u64,
    clock: u64,
    expansions: u64,
}

impl fmt::Debug for SearchState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SearchState")
            .field("subtask", &self.subtask)
            .field("board_epoch", &self.board_epoch)
            .field("open", &self.open)
            .field("closed", &self.closed)
            .field("ancestors", &self.ancestors)
            .field("best", &self.best)
            .field("heuristic", &self.heuristic.is_some())
            .finish()
    }
}

impl SearchState {
    /// Fresh state with every feasible first-region node on the openlist.
    pub fn new(board: &Board, heuristic: Option<Heuristic>) -> SearchState {
        let mut state = SearchState {
            subtask: board.subtask().clone(),
            board_epoch: board.epoch(),
            heap: BinaryHeap::new(),
            open: BTreeMap::new(),
            closed: BTreeMap::new(),
            ancestors: BTreeMap::new(),
            best: None,
            heuristic,
            next_version: 0,
            clock: 0,
            expansions: 0,
        };
        let seeds: Vec<(NodeId, f64)> = board.region_nodes(0).filter_map(|n| n.cost.finite().map(|c| (n.id, c))).collect();
        for (id, c) in seeds {
            state.push_open(board, id, c, None);
        }
        state
    }

    pub fn subtask(&self) -> &TaskId {
        &self.subtask
    }

    pub fn board_epoch(&self) -> u64 {
        self.board_epoch
    }

    /// Acknowledges a structural board change made by the caller.
    pub fn sync_epoch(&mut self, board: &Board) {
        self.board_epoch = board.epoch();
    }

    pub fn set_clock(&mut self, t: u64) {
        self.clock = t;
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn expansions(&self) -> u64 {
        self.expansions
    }

    pub fn best(&self) -> Option<&Solution> {
        self.best.as_ref()
    }

    /// Drops the stored solution. Returns whether there was one.
    pub fn invalidate_best(&mut self) -> bool {
        self.best.take().is_some()
    }

    pub fn is_open(&self, node: NodeId) -> bool {
        self.open.contains_key(&node)
    }

    pub fn is_closed(&self, node: NodeId) -> bool {
        self.closed.contains_key(&node)
    }

    pub fn open_cumulative(&self, node: NodeId) -> Option<f64> {
        self.open.get(&node).map(|r| r.cumulative)
    }

    pub fn closed_cumulative(&self, node: NodeId) -> Option<f64> {
        self.closed.get(&node).copied()
    }

    /// Current (live) openlist entries as `(node, cumulative)`.
    pub fn open_entries(&self) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.open.iter().map(|(n, r)| (*n, r.cumulative))
    }

    pub fn closed_entries(&self) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.closed.iter().map(|(n, c)| (*n, *c))
    }

    pub fn ancestor(&self, node: NodeId) -> Option<NodeId> {
        self.ancestors.get(&node).copied()
    }

    fn key(&self, node: &ParameterNode, cumulative: f64) -> f64 {
        match &self.heuristic {
            Some(h) => cumulative + h(node),
            None => cumulative,
        }
    }

    /// Puts `node` on the openlist with the given cumulative cost, replacing
    /// any previous open entry. The node must not be closed.
    pub fn push_open(&mut self, board: &Board, node: NodeId, cumulative: f64, ancestor: Option<NodeId>) {
        let Some(n) = board.node(node) else { return };
        debug_assert!(!self.closed.contains_key(&node));
        let version = self.next_version;
        self.next_version += 1;
        self.heap.push(Reverse(Entry {
            key: self.key(n, cumulative),
            provider: n.provider,
            offer_index: n.offer_index,
            region: n.region,
            node,
            version,
        }));
        self.open.insert(node, OpenRecord { cumulative, version });
        match ancestor {
            Some(a) => self.ancestors.insert(node, a),
            None => self.ancestors.remove(&node),
        };
    }

    /// Removes `node` from the openlist; its heap entry goes stale.
    pub fn remove_open(&mut self, node: NodeId) -> Option<OpenRecord> {
        self.open.remove(&node)
    }

    pub fn remove_closed(&mut self, node: NodeId) -> Option<f64> {
        self.closed.remove(&node)
    }

    /// Records the ancestor link of a node without touching the lists.
    pub fn set_ancestor(&mut self, node: NodeId, ancestor: NodeId) {
        self.ancestors.insert(node, ancestor);
    }

    /// Discards stale heap entries and returns the live minimum.
    fn peek_live(&mut self) -> Option<Entry> {
        while let Some(Reverse(top)) = self.heap.peek() {
            match self.open.get(&top.node) {
                Some(r) if r.version == top.version => return Some(top.clone()),
                _ => {
                    self.heap.pop();
                }
            }
        }
        None
    }

    /// Best closed node of the last region, as `(key, provider, offer, node, cumulative)`.
    fn incumbent(&self, board: &Board) -> Option<(Entry, f64)> {
        let last = board.last_region();
        board
            .region_nodes(last)
            .filter_map(|n| {
                self.closed.get(&n.id).map(|&c| {
                    (
                        Entry { key: self.key(n, c), provider: n.provider, offer_index: n.offer_index, region: last, node: n.id, version: 0 },
                        c,
                    )
                })
            })
            .min_by(|a, b| a.0.key.total_cmp(&b.0.key).then_with(|| a.0.rank().cmp(&b.0.rank())))
    }

    fn beats(incumbent: &Entry, top: &Entry) -> bool {
        incumbent.key.total_cmp(&top.key).then_with(|| (incumbent.provider, incumbent.offer_index).cmp(&(top.provider, top.offer_index))) != Ordering::Greater
    }

    /// Continues the search until the cheapest complete path is certain.
    pub fn resume(&mut self, board: &Board) -> Result<Solution, SearchError> {
        match self.resume_bounded(board, u64::MAX)? {
            Progress::Done(s) => Ok(s),
            Progress::Pending => unreachable!("unbounded run cannot be pending"),
        }
    }

    /// Like [`resume`](Self::resume) but stops after `max_expansions` pops.
    pub fn resume_bounded(&mut self, board: &Board, max_expansions: u64) -> Result<Progress, SearchError> {
        if self.board_epoch != board.epoch() {
            return Err(SearchError::EpochMismatch { state: self.board_epoch, board: board.epoch() });
        }
        let last = board.last_region();
        let incumbent = self.incumbent(board);
        let mut budget = max_expansions;
        loop {
            let top = self.peek_live();
            match (&incumbent, &top) {
                (Some((inc, cum)), None) => return self.finish(board, inc.node, *cum).map(Progress::Done),
                (Some((inc, cum)), Some(t)) if Self::beats(inc, t) => return self.finish(board, inc.node, *cum).map(Progress::Done),
                (None, None) => {
                    self.best = None;
                    return Err(SearchError::NoFeasiblePath(self.subtask.clone()));
                }
                _ => {}
            }
            if budget == 0 {
                return Ok(Progress::Pending);
            }
            budget -= 1;

            let current = top.expect("checked above");
            self.heap.pop();
            let cum = self.open.remove(&current.node).expect("live entry is open").cumulative;
            self.closed.insert(current.node, cum);
            self.expansions += 1;

            if current.region == last {
                return self.finish(board, current.node, cum).map(Progress::Done);
            }
            for next in board.successors(current.node).unwrap_or_default() {
                if self.open.contains_key(&next) || self.closed.contains_key(&next) {
                    continue;
                }
                if let Some(Cost::Finite(c)) = board.node(next).map(|n| n.cost) {
                    self.push_open(board, next, cum + c, Some(current.node));
                }
            }
        }
    }

    fn finish(&mut self, board: &Board, node: NodeId, cumulative: f64) -> Result<Solution, SearchError> {
        let path = self.retrace(board, node)?;
        let n = board.node(node).ok_or(SearchError::BrokenAncestorChain(node))?;
        if let Some(best) = &self.best {
            if best.path == path && best.total_cost == Cost::Finite(cumulative) {
                return Ok(best.clone());
            }
        }
        let solution = Solution {
            subtask: self.subtask.clone(),
            provider: n.provider,
            offer_index: n.offer_index,
            total_cost: Cost::Finite(cumulative),
            path,
            solved_at: self.clock,
        };
        self.best = Some(solution.clone());
        Ok(solution)
    }

    /// Follows ancestor links from `node` back to the first region and
    /// returns the path in region order.
    pub fn retrace(&self, board: &Board, node: NodeId) -> Result<Vec<NodeId>, SearchError> {
        let mut path = vec![node];
        let mut current = board.node(node).ok_or(SearchError::BrokenAncestorChain(node))?;
        while current.region > 0 {
            let ancestor = self.ancestors.get(&current.id).copied().ok_or(SearchError::BrokenAncestorChain(current.id))?;
            let a = board.node(ancestor).ok_or(SearchError::BrokenAncestorChain(ancestor))?;
            if a.region + 1 != current.region {
                return Err(SearchError::BrokenAncestorChain(current.id));
            }
            path.push(ancestor);
            current = a;
        }
        path.reverse();
        Ok(path)
    }
}

/// Runs a fresh search over `board`.
pub fn find_best_provider(board: &Board, heuristic: Option<Heuristic>) -> Result<Solution, SearchError> {
    SearchState::new(board, heuristic).resume(board)
}
