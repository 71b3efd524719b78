//! The blackboard for one subtask: one region per rule, one node per
//! (offer, region). Edges are implicit and never cross offer boundaries: a node
//! in region `i` leads to the node of the same (provider, offer) in region `i+1`.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{apply_metric, rule_cost, CostError, CostPolicy};
use crate::model::{Catalog, Cost, NodeId, ParamName, ParameterNode, ProviderId, Rule, RuleId, TaskId, Value};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoardError {
    #[error("no rules for subtask {0}")]
    NoRules(TaskId),
    #[error("no services for subtask {0}")]
    NoServicesForTask(TaskId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("rule {0} is not active on this board")]
    UnknownRule(RuleId),
    #[error("rule {rule} belongs to subtask {found}, board is for {expected}")]
    ForeignRule { rule: RuleId, expected: TaskId, found: TaskId },
    #[error("unknown offer {provider}/{offer_index}")]
    UnknownOffer { provider: ProviderId, offer_index: u32 },
    #[error("region range {0:?} is outside the board")]
    BadRegionRange(Range<usize>),
    #[error(transparent)]
    Cost(#[from] CostError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub index: usize,
    pub rule: Rule,
    /// Added by a rule change after the board was built.
    pub appended: bool,
    /// False once the rule was deleted; the region stays with all costs 0.
    pub active: bool,
    /// Marked as delegable to an external solver.
    pub external: bool,
}

impl Region {
    pub fn rule_id(&self) -> RuleId {
        self.rule.rule_id
    }

    pub fn parameter(&self) -> &ParamName {
        &self.rule.parameter
    }
}

/// The board's private copy of one offer and its provider's metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoardOffer {
    pub provider: ProviderId,
    pub index: u32,
    pub values: BTreeMap<ParamName, Value>,
    pub metric: f64,
}

/// A node whose local cost changed, with the costs before and after.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostChange {
    pub node: NodeId,
    pub old: Cost,
    pub new: Cost,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Board {
    subtask: TaskId,
    policy: CostPolicy,
    regions: Vec<Region>,
    offers: Vec<BoardOffer>,
    nodes: Vec<Option<ParameterNode>>,
    #[serde(skip)]
    index: BTreeMap<(usize, ProviderId, u32), NodeId>,
    epoch: u64,
}

impl Board {
    /// Builds the board for `subtask` from its active rules (ordered by
    /// declaration) and every matching offer in the catalog.
    pub fn build(subtask: &TaskId, rules: &[Rule], catalog: &Catalog, policy: CostPolicy) -> Result<Board, BoardError> {
        let mut offers: Vec<BoardOffer> = catalog
            .descriptors()
            .iter()
            .filter(|d| &d.task == subtask)
            .flat_map(|d| {
                d.offers.iter().map(move |o| BoardOffer {
                    provider: d.provider,
                    index: o.index,
                    values: o.values.clone(),
                    metric: d.metric,
                })
            })
            .collect();
        offers.sort_by_key(|o| (o.provider, o.index));
        Board::from_offers(subtask, rules, offers, policy)
    }

    /// Builds a board from explicit offers, bypassing the catalog.
    pub fn from_offers(subtask: &TaskId, rules: &[Rule], mut offers: Vec<BoardOffer>, policy: CostPolicy) -> Result<Board, BoardError> {
        let mut rules: Vec<&Rule> = rules.iter().collect();
        if rules.is_empty() {
            return Err(BoardError::NoRules(subtask.clone()));
        }
        if let Some(r) = rules.iter().find(|r| &r.subtask != subtask) {
            return Err(BoardError::ForeignRule { rule: r.rule_id, expected: subtask.clone(), found: r.subtask.clone() });
        }
        if offers.is_empty() {
            return Err(BoardError::NoServicesForTask(subtask.clone()));
        }
        rules.sort_by_key(|r| r.seq);
        offers.sort_by_key(|o| (o.provider, o.index));

        let mut board = Board {
            subtask: subtask.clone(),
            policy,
            regions: rules
                .iter()
                .enumerate()
                .map(|(index, rule)| Region { index, rule: (*rule).clone(), appended: false, active: true, external: false })
                .collect(),
            offers,
            nodes: Vec::new(),
            index: BTreeMap::new(),
            epoch: 0,
        };
        for o in 0..board.offers.len() {
            for r in 0..board.regions.len() {
                board.create_node(r, o)?;
            }
        }
        Ok(board)
    }

    fn create_node(&mut self, region: usize, offer_pos: usize) -> Result<NodeId, BoardError> {
        let id = NodeId(self.nodes.len() as u32);
        let offer = &self.offers[offer_pos];
        let reg = &self.regions[region];
        let cost = self.local_cost(reg, offer)?;
        let node = ParameterNode {
            id,
            region,
            provider: offer.provider,
            offer_index: offer.index,
            parameter: reg.parameter().clone(),
            raw_value: offer.values.get(reg.parameter()).cloned(),
            cost,
            version: 0,
        };
        self.index.insert((region, offer.provider, offer.index), id);
        self.nodes.push(Some(node));
        Ok(id)
    }

    fn local_cost(&self, region: &Region, offer: &BoardOffer) -> Result<Cost, BoardError> {
        let base = if region.active {
            rule_cost(&region.rule, offer.values.get(region.parameter()))?
        } else {
            Cost::ZERO
        };
        Ok(apply_metric(base, offer.metric, &self.policy))
    }

    pub fn subtask(&self) -> &TaskId {
        &self.subtask
    }

    pub fn policy(&self) -> &CostPolicy {
        &self.policy
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region_count(&self) -> usize {
        self.regions.len()
    }

    pub fn last_region(&self) -> usize {
        self.regions.len() - 1
    }

    pub fn offers(&self) -> &[BoardOffer] {
        &self.offers
    }

    pub fn offer(&self, provider: ProviderId, offer_index: u32) -> Option<&BoardOffer> {
        self.offers.iter().find(|o| o.provider == provider && o.index == offer_index)
    }

    pub fn node(&self, id: NodeId) -> Option<&ParameterNode> {
        self.nodes.get(id.index()).and_then(Option::as_ref)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &ParameterNode> {
        self.nodes.iter().flatten()
    }

    pub fn node_at(&self, region: usize, provider: ProviderId, offer_index: u32) -> Option<NodeId> {
        self.index.get(&(region, provider, offer_index)).copied()
    }

    pub fn region_nodes(&self, region: usize) -> impl Iterator<Item = &ParameterNode> {
        self.index.range((region, ProviderId(0), 0)..=(region, ProviderId(u64::MAX), u32::MAX)).filter_map(|(_, id)| self.node(*id))
    }

    /// The node chain of one offer, region 0 first, stopping at the first gap.
    pub fn chain(&self, provider: ProviderId, offer_index: u32) -> Vec<NodeId> {
        (0..self.regions.len()).map_while(|r| self.node_at(r, provider, offer_index)).collect()
    }

    pub fn successors(&self, id: NodeId) -> Result<Vec<NodeId>, BoardError> {
        let node = self.node(id).ok_or(BoardError::UnknownNode(id))?;
        Ok(self.node_at(node.region + 1, node.provider, node.offer_index).into_iter().collect())
    }

    pub fn predecessor(&self, id: NodeId) -> Result<Option<NodeId>, BoardError> {
        let node = self.node(id).ok_or(BoardError::UnknownNode(id))?;
        Ok(match node.region {
            0 => None,
            r => self.node_at(r - 1, node.provider, node.offer_index),
        })
    }

    /// Appends a region checking `rule`; an existing rule with the same id
    /// keeps its old region in place. Returns the new region index.
    pub fn append_region(&mut self, rule: Rule) -> Result<usize, BoardError> {
        if rule.subtask != self.subtask {
            return Err(BoardError::ForeignRule { rule: rule.rule_id, expected: self.subtask.clone(), found: rule.subtask });
        }
        let index = self.regions.len();
        self.regions.push(Region { index, rule, appended: true, active: true, external: false });
        for o in 0..self.offers.len() {
            self.create_node(index, o)?;
        }
        self.epoch += 1;
        Ok(index)
    }

    /// Deactivates every active region of `rule_id` and sets all its node
    /// costs to zero (providers excluded by metric stay infeasible).
    /// Returns the affected region indices in ascending order.
    pub fn zero_region(&mut self, rule_id: RuleId) -> Result<Vec<usize>, BoardError> {
        let affected: Vec<usize> = self.regions.iter().filter(|r| r.active && r.rule_id() == rule_id).map(|r| r.index).collect();
        if affected.is_empty() {
            return Err(BoardError::UnknownRule(rule_id));
        }
        for &r in &affected {
            self.regions[r].active = false;
            self.recompute_region(r)?;
        }
        self.epoch += 1;
        Ok(affected)
    }

    fn recompute_region(&mut self, region: usize) -> Result<Vec<CostChange>, BoardError> {
        let mut changes = Vec::new();
        for o in 0..self.offers.len() {
            let offer = &self.offers[o];
            if let Some(id) = self.node_at(region, offer.provider, offer.index) {
                if let Some(c) = self.recompute_node(id, o)? {
                    changes.push(c);
                }
            }
        }
        Ok(changes)
    }

    fn recompute_node(&mut self, id: NodeId, offer_pos: usize) -> Result<Option<CostChange>, BoardError> {
        let offer = &self.offers[offer_pos];
        let region = self.node(id).ok_or(BoardError::UnknownNode(id))?.region;
        let new = self.local_cost(&self.regions[region], offer)?;
        let raw = offer.values.get(self.regions[region].parameter()).cloned();
        let node = self.nodes[id.index()].as_mut().ok_or(BoardError::UnknownNode(id))?;
        let old = node.cost;
        node.raw_value = raw;
        if old == new {
            return Ok(None);
        }
        node.cost = new;
        node.version += 1;
        Ok(Some(CostChange { node: id, old, new }))
    }

    fn offer_pos(&self, provider: ProviderId, offer_index: u32) -> Result<usize, BoardError> {
        self.offers
            .iter()
            .position(|o| o.provider == provider && o.index == offer_index)
            .ok_or(BoardError::UnknownOffer { provider, offer_index })
    }

    /// Updates one offer value and recomputes the nodes that check it.
    /// Returns the cost changes in region order.
    pub fn set_value(&mut self, provider: ProviderId, offer_index: u32, param: &ParamName, value: Value) -> Result<Vec<CostChange>, BoardError> {
        let pos = self.offer_pos(provider, offer_index)?;
        self.offers[pos].values.insert(param.clone(), value);
        let mut changes = Vec::new();
        for r in 0..self.regions.len() {
            if self.regions[r].parameter() != param {
                continue;
            }
            if let Some(id) = self.node_at(r, provider, offer_index) {
                changes.extend(self.recompute_node(id, pos)?);
            }
        }
        Ok(changes)
    }

    /// Updates a provider's metric on all of its offers. Returns the cost
    /// changes ordered by region, then offer.
    pub fn set_metric(&mut self, provider: ProviderId, metric: f64) -> Result<Vec<CostChange>, BoardError> {
        let positions: Vec<usize> = (0..self.offers.len()).filter(|&p| self.offers[p].provider == provider).collect();
        for &p in &positions {
            self.offers[p].metric = metric;
        }
        let mut changes = Vec::new();
        for r in 0..self.regions.len() {
            for &p in &positions {
                if let Some(id) = self.node_at(r, provider, self.offers[p].index) {
                    changes.extend(self.recompute_node(id, p)?);
                }
            }
        }
        Ok(changes)
    }

    pub fn metric(&self, provider: ProviderId) -> Option<f64> {
        self.offers.iter().find(|o| o.provider == provider).map(|o| o.metric)
    }

    /// Removes all nodes of one offer (withdrawn by its provider). Node ids of
    /// other offers are unaffected.
    pub fn prune_offer(&mut self, provider: ProviderId, offer_index: u32) -> Result<Vec<NodeId>, BoardError> {
        let pos = self.offer_pos(provider, offer_index)?;
        self.offers.remove(pos);
        let removed = self.remove_nodes(|n| n.provider == provider && n.offer_index == offer_index);
        self.epoch += 1;
        Ok(removed)
    }

    /// Removes a single node, leaving a gap in its offer's chain.
    pub fn prune_node(&mut self, id: NodeId) -> Result<(), BoardError> {
        self.node(id).ok_or(BoardError::UnknownNode(id))?;
        self.remove_nodes(|n| n.id == id);
        self.epoch += 1;
        Ok(())
    }

    fn remove_nodes(&mut self, pred: impl Fn(&ParameterNode) -> bool) -> Vec<NodeId> {
        let mut removed = Vec::new();
        for slot in self.nodes.iter_mut() {
            if slot.as_ref().is_some_and(&pred) {
                let n = slot.take().unwrap();
                self.index.remove(&(n.region, n.provider, n.offer_index));
                removed.push(n.id);
            }
        }
        removed
    }

    /// Flags a contiguous region range as delegable to external solvers.
    pub fn mark_external(&mut self, regions: Range<usize>) -> Result<(), BoardError> {
        if regions.is_empty() || regions.end > self.regions.len() {
            return Err(BoardError::BadRegionRange(regions));
        }
        for r in regions {
            self.regions[r].external = true;
        }
        Ok(())
    }

    /// Restores the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.nodes.iter().flatten().map(|n| ((n.region, n.provider, n.offer_index), n.id)).collect();
    }
}
