//! Shared by the core integration tests and the acceptance target: a seeded
//! instance generator, an oracle that recomputes costs straight from the
//! formulas, and criterion checks that report a reason on failure.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use bboard_core::board::BoardOffer;
use bboard_core::cost::{apply_metric, cost_at_least, cost_at_most, cost_equals, CostPolicy};
use bboard_core::external::{delegate_branch, merge_partial_solution, BranchSpec, DelegationStatus, ExternalError, ExternalSolver, LocalSolver, PartialSolution, SolveRequest, SolverError};
use bboard_core::registry::{emit_descriptor, parse_descriptor};
use bboard_core::search::Progress;
use bboard_core::{find_best_provider, Board, ChangeKind, Cost, Offer, ParamName, ProviderId, Rule, RuleId, RuleKind, SearchError, SearchState, ServiceDescriptor, TaskId, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOLERANCE: f64 = 1e-9;
pub const TASK: &str = "t";

const NUMERIC_PARAMS: [&str; 4] = ["price", "runtime", "disk", "bandwidth"];
const LITERALS: [&str; 3] = ["AVI", "FLV", "MP4"];
const METRICS: [f64; 6] = [1.0, 1.0, 1.0, 0.5, 0.25, 0.0];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Best chain as `(provider, offer, total)`; `None` when nothing is feasible.
pub type Answer = Option<(ProviderId, u32, f64)>;

/// Independent bookkeeping of what the board should contain: every region
/// ever appended with its rule and whether it is still active, plus the
/// current offer values and metrics.
#[derive(Clone, Debug)]
pub struct Model {
    pub task: TaskId,
    pub regions: Vec<(Rule, bool)>,
    pub offers: BTreeMap<(u64, u32), BTreeMap<String, Value>>,
    pub metrics: BTreeMap<u64, f64>,
    next_rule: u64,
    next_seq: u64,
}

impl Model {
    /// Rules the user currently has: the latest version of each live rule id.
    pub fn live_rules(&self) -> Vec<Rule> {
        let mut latest: BTreeMap<RuleId, Rule> = BTreeMap::new();
        for (r, active) in &self.regions {
            if *active {
                latest.insert(r.rule_id, r.clone());
            }
        }
        latest.into_values().collect()
    }

    pub fn active_region_rules(&self) -> Vec<Rule> {
        self.regions.iter().filter(|(_, a)| *a).map(|(r, _)| r.clone()).collect()
    }

    pub fn initial_rules(&self) -> Vec<Rule> {
        self.regions.iter().map(|(r, _)| r.clone()).collect()
    }

    pub fn board_offers(&self) -> Vec<BoardOffer> {
        self.offers
            .iter()
            .map(|(&(p, i), values)| BoardOffer {
                provider: ProviderId(p),
                index: i,
                values: values.iter().map(|(k, v)| (ParamName::new(k.clone()), v.clone())).collect(),
                metric: self.metrics[&p],
            })
            .collect()
    }

    pub fn descriptors(&self) -> Vec<ServiceDescriptor> {
        let task = self.task.clone();
        self.metrics
            .iter()
            .map(|(&p, &metric)| ServiceDescriptor {
                address: format!("10.0.{}.{}", p / 256, p % 256),
                port: 60000 + p as u16,
                task: task.clone(),
                metric,
                par_list: NUMERIC_PARAMS.iter().map(|s| ParamName::new(*s)).chain([ParamName::new("format")]).collect(),
                provider: ProviderId(p),
                offers: self
                    .offers
                    .range((p, 0)..=(p, u32::MAX))
                    .map(|(&(_, i), values)| values.iter().fold(Offer::new(ProviderId(p), task.clone(), i), |o, (k, v)| o.with(k, v.clone())))
                    .collect(),
            })
            .collect()
    }

    pub fn board(&self, policy: CostPolicy) -> Board {
        Board::from_offers(&self.task, &self.initial_rules(), self.board_offers(), policy).expect("generated board builds")
    }

    /// Applies a change to the model, mirroring what the board is expected
    /// to do with it.
    pub fn apply(&mut self, change: &ChangeKind) {
        match change {
            ChangeKind::RuleAdded { rule } | ChangeKind::RuleModified { rule } => {
                self.regions.push((rule.clone(), true));
                self.next_rule = self.next_rule.max(rule.rule_id.0 + 1);
                self.next_seq = self.next_seq.max(rule.seq + 1);
            }
            ChangeKind::RuleDeleted { rule_id, .. } => {
                for (r, a) in &mut self.regions {
                    if r.rule_id == *rule_id {
                        *a = false;
                    }
                }
            }
            ChangeKind::ParameterChanged { provider, offer_index, parameter, value, .. } => {
                self.offers.get_mut(&(provider.0, *offer_index)).expect("known offer").insert(parameter.as_str().to_string(), value.clone());
            }
            ChangeKind::MetricChanged { provider, metric } => {
                self.metrics.insert(provider.0, *metric);
            }
        }
    }
}

/// Local cost written out from the formulas, independent of the engine's
/// cost module. Metric scaling divides, metric 0 excludes.
pub fn formula_cost(kind: RuleKind, border: &Value, value: Option<&Value>, metric: f64, scaling: bool) -> Option<f64> {
    if metric <= 0.0 {
        return None;
    }
    let base = match (kind, value?, border) {
        (RuleKind::Equals, Value::Literal(a), Value::Literal(b)) if a == b => 0.0,
        (RuleKind::Equals, Value::Number(a), Value::Number(b)) if a == b => 0.0,
        (RuleKind::Equals, _, _) => return None,
        (RuleKind::AtMost, Value::Number(x), Value::Number(b)) if x <= b => (x + 1.0) / (b + 1.0),
        (RuleKind::AtLeast, Value::Number(x), Value::Number(b)) if x >= b => (b + 1.0) / (x + 1.0),
        _ => return None,
    };
    Some(if scaling { base / metric } else { base })
}

/// Brute force over every offer: sums formula costs over the active regions
/// in region order, ties to the lowest `(provider, offer)`.
pub fn oracle(model: &Model) -> Answer {
    let mut best: Answer = None;
    for (&(p, i), values) in &model.offers {
        let metric = model.metrics[&p];
        if metric <= 0.0 {
            continue;
        }
        let mut total = 0.0;
        let mut feasible = true;
        for (rule, active) in &model.regions {
            if !*active {
                continue;
            }
            let value = values.iter().find(|(k, _)| k.eq_ignore_ascii_case(rule.parameter.as_str())).map(|(_, v)| v);
            match formula_cost(rule.kind, &rule.border, value, metric, true) {
                Some(c) => total += c,
                None => {
                    feasible = false;
                    break;
                }
            }
        }
        if !feasible {
            continue;
        }
        // offers iterate in (provider, offer) order, so strict < keeps the lowest on ties
        if best.is_none_or(|(_, _, t)| total < t) {
            best = Some((ProviderId(p), i, total));
        }
    }
    best
}

fn random_border(rng: &mut ChaCha8Rng, kind: RuleKind, param: &str) -> Value {
    if param == "format" {
        return Value::from(LITERALS[rng.random_range(0..LITERALS.len())]);
    }
    match kind {
        RuleKind::Equals => Value::Number(rng.random_range(0..=2) as f64),
        RuleKind::AtMost => Value::Number(rng.random_range(4..=12) as f64),
        RuleKind::AtLeast => Value::Number(rng.random_range(0..=5) as f64),
    }
}

fn random_value(rng: &mut ChaCha8Rng, param: &str) -> Value {
    if param == "format" {
        return Value::from(LITERALS[rng.random_range(0..LITERALS.len())]);
    }
    if rng.random_bool(0.25) {
        return Value::Number(rng.random_range(0..=2) as f64);
    }
    Value::Number(rng.random_range(0..=12) as f64)
}

fn random_pair(rng: &mut ChaCha8Rng) -> (&'static str, RuleKind) {
    if rng.random_bool(0.2) {
        return ("format", RuleKind::Equals);
    }
    let param = NUMERIC_PARAMS[rng.random_range(0..NUMERIC_PARAMS.len())];
    let kind = match rng.random_range(0..9) {
        0 => RuleKind::Equals,
        1..=4 => RuleKind::AtMost,
        _ => RuleKind::AtLeast,
    };
    (param, kind)
}

/// Up to 8 providers with up to 3 offers each and up to 5 rules with
/// distinct `(parameter, kind)` pairs.
pub fn random_model(rng: &mut ChaCha8Rng) -> Model {
    let task = TaskId::from(TASK);
    let mut regions: Vec<(Rule, bool)> = Vec::new();
    let n_rules = rng.random_range(1..=5);
    let mut attempts = 0;
    while regions.len() < n_rules && attempts < 50 {
        attempts += 1;
        let (param, kind) = random_pair(rng);
        if regions.iter().any(|(r, _)| r.parameter.as_str() == param && r.kind == kind) {
            continue;
        }
        let id = regions.len() as u64 + 1;
        let rule = Rule::new(RuleId(id), task.clone(), param, kind, random_border(rng, kind, param), id).unwrap();
        regions.push((rule, true));
    }
    let mut offers = BTreeMap::new();
    let mut metrics = BTreeMap::new();
    let n_providers = rng.random_range(1..=8);
    let mut provider = 0;
    for _ in 0..n_providers {
        provider += rng.random_range(1..=7);
        metrics.insert(provider, METRICS[rng.random_range(0..METRICS.len())]);
        for i in 0..rng.random_range(1..=3) {
            let mut values = BTreeMap::new();
            for param in NUMERIC_PARAMS.iter().copied().chain(["format"]) {
                // occasionally leave a parameter out
                if rng.random_bool(0.96) {
                    values.insert(param.to_string(), random_value(rng, param));
                }
            }
            offers.insert((provider, i), values);
        }
    }
    let next = regions.len() as u64 + 1;
    Model { task, regions, offers, metrics, next_rule: next, next_seq: next }
}

/// One random change valid for the model's current state. Never deletes
/// the last live rule and never adds a second live rule with the same
/// `(parameter, kind)`.
pub fn random_change(rng: &mut ChaCha8Rng, model: &Model) -> ChangeKind {
    let live = model.live_rules();
    loop {
        match rng.random_range(0..10) {
            0 | 1 => {
                let (param, kind) = random_pair(rng);
                if live.iter().any(|r| r.parameter.as_str() == param && r.kind == kind) {
                    continue;
                }
                let rule = Rule::new(RuleId(model.next_rule), model.task.clone(), param, kind, random_border(rng, kind, param), model.next_seq).unwrap();
                return ChangeKind::RuleAdded { rule };
            }
            2 | 3 => {
                let old = &live[rng.random_range(0..live.len())];
                let border = random_border(rng, old.kind, old.parameter.as_str());
                let rule = Rule::new(old.rule_id, model.task.clone(), old.parameter.clone(), old.kind, border, model.next_seq).unwrap();
                return ChangeKind::RuleModified { rule };
            }
            4 => {
                if live.len() < 2 {
                    continue;
                }
                let old = &live[rng.random_range(0..live.len())];
                return ChangeKind::RuleDeleted { rule_id: old.rule_id, subtask: model.task.clone() };
            }
            5..=7 => {
                let keys: Vec<&(u64, u32)> = model.offers.keys().collect();
                let &(p, i) = keys[rng.random_range(0..keys.len())];
                let param = if rng.random_bool(0.2) { "format" } else { NUMERIC_PARAMS[rng.random_range(0..NUMERIC_PARAMS.len())] };
                return ChangeKind::ParameterChanged {
                    task: model.task.clone(),
                    provider: ProviderId(p),
                    offer_index: i,
                    parameter: ParamName::new(param),
                    value: random_value(rng, param),
                };
            }
            _ => {
                let providers: Vec<&u64> = model.metrics.keys().collect();
                let p = *providers[rng.random_range(0..providers.len())];
                return ChangeKind::MetricChanged { provider: ProviderId(p), metric: METRICS[rng.random_range(0..METRICS.len())] };
            }
        }
    }
}

fn answer_of(result: Result<bboard_core::Solution, SearchError>) -> Result<Answer, String> {
    match result {
        Ok(s) => match s.total_cost {
            Cost::Finite(t) => Ok(Some((s.provider, s.offer_index, t))),
            Cost::Infeasible => Err("solution with infeasible total".into()),
        },
        Err(SearchError::NoFeasiblePath(_)) => Ok(None),
        Err(e) => Err(e.to_string()),
    }
}

/// Same provider and offer, totals within tolerance.
pub fn same(a: &Answer, b: &Answer) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some((p1, o1, t1)), Some((p2, o2, t2))) => p1 == p2 && o1 == o2 && (t1 - t2).abs() <= TOLERANCE,
        _ => false,
    }
}

/// One equivalence trial: build, run a partial search, then apply up to 10
/// random changes with a random expansion budget between them, and finally
/// resume. The resumed answer must equal a fresh search over the same
/// regions and the formula oracle.
pub fn equivalence_trial(seed: u64) -> Result<(), String> {
    let mut rng = rng(seed);
    let mut model = random_model(&mut rng);
    let policy = CostPolicy::default();
    let mut board = model.board(policy);
    let mut state = SearchState::new(&board, None);
    let mut applied = Vec::new();
    let n_events = rng.random_range(0..=10);
    for _ in 0..n_events {
        let budget = rng.random_range(0..8u64);
        match state.resume_bounded(&board, budget) {
            Ok(Progress::Done(_)) | Ok(Progress::Pending) | Err(SearchError::NoFeasiblePath(_)) => {}
            Err(e) => return Err(format!("seed {seed}: partial search failed: {e}")),
        }
        let change = random_change(&mut rng, &model);
        bboard_core::dynamics::apply_change(&mut state, &mut board, &change).map_err(|e| format!("seed {seed}: {} failed: {e}", change.name()))?;
        model.apply(&change);
        applied.push(change.name());
    }
    let resumed = answer_of(state.resume(&board)).map_err(|e| format!("seed {seed}: resume: {e}"))?;
    let fresh_board = Board::from_offers(&model.task, &model.active_region_rules(), board.offers().to_vec(), policy).map_err(|e| format!("seed {seed}: rebuild: {e}"))?;
    let fresh = answer_of(find_best_provider(&fresh_board, None)).map_err(|e| format!("seed {seed}: fresh: {e}"))?;
    let expected = oracle(&model);
    if !same(&resumed, &fresh) || !same(&resumed, &expected) {
        return Err(format!("seed {seed} after {applied:?}: resumed {resumed:?}, fresh {fresh:?}, oracle {expected:?}"));
    }
    Ok(())
}

/// Grid of borders and values used by the cost checks: 100 points each.
pub fn grid() -> Vec<f64> {
    (0..100).map(|i| i as f64 * 0.75).collect()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Every feasible numeric cost lies in (0,1], border = value costs 1, and
/// costs move the right way as the value grows.
pub fn check_cost_grid() -> Result<(), String> {
    let g = grid();
    for &b in &g {
        let mut prev_least: Option<f64> = None;
        let mut prev_most: Option<f64> = None;
        for &x in &g {
            let least = cost_at_least(x, b).map_err(|e| e.to_string())?;
            let most = cost_at_most(x, b).map_err(|e| e.to_string())?;
            let want_least = formula_cost(RuleKind::AtLeast, &Value::Number(b), Some(&Value::Number(x)), 1.0, false);
            let want_most = formula_cost(RuleKind::AtMost, &Value::Number(b), Some(&Value::Number(x)), 1.0, false);
            ensure(least.finite() == want_least, || format!("at_least({x},{b}) = {least:?}, formula {want_least:?}"))?;
            ensure(most.finite() == want_most, || format!("at_most({x},{b}) = {most:?}, formula {want_most:?}"))?;
            for c in [least, most].into_iter().filter_map(Cost::finite) {
                ensure(c > 0.0 && c <= 1.0, || format!("cost {c} at ({x},{b}) outside (0,1]"))?;
            }
            if x == b {
                ensure(least == Cost::Finite(1.0) && most == Cost::Finite(1.0), || format!("x = border = {b} does not cost 1"))?;
            }
            if let (Some(p), Some(c)) = (prev_least, least.finite()) {
                ensure(c <= p, || format!("at_least not non-increasing at ({x},{b})"))?;
            }
            if let (Some(p), Some(c)) = (prev_most, most.finite()) {
                ensure(c >= p, || format!("at_most not non-decreasing at ({x},{b})"))?;
            }
            prev_least = least.finite().or(prev_least);
            prev_most = most.finite().or(prev_most);
        }
    }
    Ok(())
}

/// Equality rules cost 0 on a match and are infeasible otherwise.
pub fn check_boolean_grid() -> Result<(), String> {
    let g = grid();
    for &b in &g {
        for &x in &g {
            let c = cost_equals(&Value::Number(x), &Value::Number(b));
            let want = if x == b { Cost::ZERO } else { Cost::Infeasible };
            ensure(c == want, || format!("equals({x},{b}) = {c:?}"))?;
        }
    }
    for a in LITERALS {
        for b in LITERALS {
            let c = cost_equals(&Value::from(a), &Value::from(b));
            ensure(c == if a == b { Cost::ZERO } else { Cost::Infeasible }, || format!("equals({a},{b}) = {c:?}"))?;
        }
        ensure(cost_equals(&Value::from(a), &Value::Number(1.0)) == Cost::Infeasible, || "literal matched a number".into())?;
    }
    Ok(())
}

/// Metric 0 excludes every value; other metrics divide the cost.
pub fn check_metric_grid() -> Result<(), String> {
    let policy = CostPolicy::default();
    let g = grid();
    let metrics = [0.1, 0.25, 0.5, 0.8, 1.0];
    for &b in &g {
        for &x in &g {
            for base in [cost_at_least(x, b).unwrap(), cost_at_most(x, b).unwrap()] {
                ensure(apply_metric(base, 0.0, &policy) == Cost::Infeasible, || format!("metric 0 kept ({x},{b})"))?;
                let Cost::Finite(c) = base else { continue };
                for m in metrics {
                    let Cost::Finite(scaled) = apply_metric(base, m, &policy) else {
                        return Err(format!("metric {m} excluded ({x},{b})"));
                    };
                    ensure((scaled - c / m).abs() <= TOLERANCE && (scaled * m - c).abs() <= TOLERANCE, || {
                        format!("metric {m} scaled {c} to {scaled}")
                    })?;
                }
                // linear: halving the metric doubles the cost
                let (Cost::Finite(full), Cost::Finite(half)) = (apply_metric(base, 1.0, &policy), apply_metric(base, 0.5, &policy)) else {
                    return Err("metric scaling excluded a finite cost".into());
                };
                ensure((half - 2.0 * full).abs() <= TOLERANCE, || format!("metric 0.5 gave {half}, expected {}", 2.0 * full))?;
            }
        }
    }
    Ok(())
}

/// A solver that answers with a fabricated claim whose node costs do not
/// add up.
pub struct LyingSolver;

impl ExternalSolver for LyingSolver {
    fn solve(&self, request: &SolveRequest) -> Result<Option<PartialSolution>, SolverError> {
        let mut answer = LocalSolver::new().solve(request)?;
        if let Some(a) = &mut answer {
            a.claimed = (a.claimed - 0.5).max(0.0) * 0.5;
            a.node_costs.iter_mut().for_each(|c| *c += 0.25);
        }
        Ok(answer)
    }
}

const DEADLINE: Duration = Duration::from_secs(10);

/// One external-optimization trial on a random instance. Delegates a random
/// branch (sometimes the whole board, sometimes through a second level) and
/// checks the final answer is never worse than local-only; then checks that a
/// fabricated claim is rejected and leaves the local answer intact.
pub fn external_trial(seed: u64) -> Result<(), String> {
    let mut rng = rng(seed);
    let model = random_model(&mut rng);
    let mut board = model.board(CostPolicy::default());
    let local = answer_of(find_best_provider(&board, None)).map_err(|e| format!("seed {seed}: {e}"))?;

    let n = board.region_count();
    let regions = if rng.random_bool(0.3) {
        0..n
    } else {
        let start = rng.random_range(0..n);
        start..rng.random_range(start + 1..=n)
    };
    board.mark_external(regions.clone()).map_err(|e| e.to_string())?;
    let spec = if regions == (0..n) && rng.random_bool(0.5) {
        BranchSpec::whole(&board)
    } else {
        let all: Vec<ProviderId> = board.offers().iter().map(|o| o.provider).collect();
        let mut providers: std::collections::BTreeSet<ProviderId> = all.iter().copied().filter(|_| rng.random_bool(0.6)).collect();
        providers.insert(all[rng.random_range(0..all.len())]);
        BranchSpec { providers, regions }
    };
    let nested = rng.random_bool(0.3);
    let solver: Arc<dyn ExternalSolver> =
        if nested { Arc::new(LocalSolver::delegating_to(Arc::new(LocalSolver::new()), DEADLINE)) } else { Arc::new(LocalSolver::new()) };

    let mut state = SearchState::new(&board, None);
    let budget = rng.random_range(0..6u64);
    let _ = state.resume_bounded(&board, budget);
    let mut delegation = delegate_branch(&state, &board, spec.clone(), solver, DEADLINE).map_err(|e| format!("seed {seed}: {e}"))?;
    if let Some(partial) = delegation.wait() {
        merge_partial_solution(&mut state, &board, &mut delegation, &partial).map_err(|e| format!("seed {seed}: honest merge: {e}"))?;
    }
    let merged = answer_of(state.resume(&board)).map_err(|e| format!("seed {seed}: {e}"))?;
    match (&local, &merged) {
        (None, None) => {}
        (Some((_, _, l)), Some((_, _, m))) if *m <= l + TOLERANCE => {}
        _ => return Err(format!("seed {seed} nested={nested}: local {local:?}, with delegation {merged:?}")),
    }
    if !same(&local, &merged) {
        return Err(format!("seed {seed}: honest delegation changed the answer: {local:?} vs {merged:?}"));
    }

    let mut state = SearchState::new(&board, None);
    let mut delegation = delegate_branch(&state, &board, spec, Arc::new(LyingSolver), DEADLINE).map_err(|e| format!("seed {seed}: {e}"))?;
    if let Some(partial) = delegation.wait() {
        match merge_partial_solution(&mut state, &board, &mut delegation, &partial) {
            Err(ExternalError::VerificationFailed(_)) => {}
            other => return Err(format!("seed {seed}: fabricated claim accepted: {other:?}")),
        }
        if delegation.status != DelegationStatus::Ignored {
            return Err(format!("seed {seed}: rejected delegation is {:?}", delegation.status));
        }
    }
    let after = answer_of(state.resume(&board)).map_err(|e| format!("seed {seed}: {e}"))?;
    if !same(&local, &after) {
        return Err(format!("seed {seed}: rejected claim changed the answer: {local:?} vs {after:?}"));
    }
    Ok(())
}

const IDENT: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz_";

fn ident(rng: &mut ChaCha8Rng, len: std::ops::RangeInclusive<usize>) -> String {
    let n = rng.random_range(len);
    (0..n).map(|_| IDENT[rng.random_range(0..IDENT.len())] as char).collect()
}

/// A random valid descriptor. Parameter names avoid the reserved `IDX` key
/// and clash with each other only up to case.
pub fn random_descriptor(rng: &mut ChaCha8Rng) -> ServiceDescriptor {
    let provider = ProviderId(rng.random_range(0..u64::MAX / 2));
    let task = if rng.random_bool(0.5) { TaskId::new(rng.random_range(0..100_000u32).to_string()) } else { TaskId::new(ident(rng, 1..=10)) };
    let address = if rng.random_bool(0.7) {
        let octets: [u8; 4] = rng.random();
        format!("{}.{}.{}.{}", octets[0], octets[1], octets[2], octets[3])
    } else {
        format!("{}.example", ident(rng, 1..=8))
    };
    let metric = match rng.random_range(0..4) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random_range(0.0..=1.0),
    };
    let mut names: Vec<String> = Vec::new();
    let wanted = rng.random_range(0..6);
    while names.len() < wanted {
        let n = format!("P{}", ident(rng, 1..=8)).to_ascii_uppercase();
        if !names.contains(&n) {
            names.push(n);
        }
    }
    let mut offers = Vec::new();
    for i in 0..rng.random_range(0..4u32) {
        let mut offer = Offer::new(provider, task.clone(), i);
        for n in &names {
            if !rng.random_bool(0.8) {
                continue;
            }
            let v = match rng.random_range(0..3) {
                0 => Value::Number(rng.random_range(0..10_000) as f64),
                1 => Value::Number(rng.random_range(0.0..1e6)),
                _ => Value::Literal(format!("L{}", ident(rng, 0..=6))),
            };
            offer = offer.with(n, v);
        }
        offers.push(offer);
    }
    ServiceDescriptor {
        address,
        port: rng.random_range(0..=u16::MAX),
        task,
        metric,
        par_list: names.into_iter().map(ParamName::new).collect(),
        provider,
        offers,
    }
}

/// The record from the registry description parses to its stated fields and
/// re-emits to an equivalent record.
pub fn check_registry_record() -> Result<(), String> {
    let text = r"[IP=131.12.10.1, PORT=63150, TASK\_ID=25376, METRIC =0, PAR\_LIST = [PRICE, BANDWITH, DISKSIZE], PRO\_ID=10]";
    let d = parse_descriptor(text).map_err(|e| e.to_string())?;
    let want = ServiceDescriptor {
        address: "131.12.10.1".into(),
        port: 63150,
        task: TaskId::from("25376"),
        metric: 0.0,
        par_list: vec!["PRICE".into(), "BANDWITH".into(), "DISKSIZE".into()],
        provider: ProviderId(10),
        offers: Vec::new(),
    };
    ensure(d == want, || format!("parsed {d:?}"))?;
    let again = parse_descriptor(&emit_descriptor(&d)).map_err(|e| e.to_string())?;
    ensure(again == d, || format!("re-emitted record parsed to {again:?}"))
}

pub fn check_descriptor_fuzz(count: u64) -> Result<(), String> {
    for seed in 0..count {
        let d = random_descriptor(&mut rng(seed));
        let text = emit_descriptor(&d);
        let back = parse_descriptor(&text).map_err(|e| format!("seed {seed}: {text}: {e}"))?;
        ensure(back == d, || format!("seed {seed}: {text} parsed to {back:?}"))?;
        ensure(emit_descriptor(&back) == text, || format!("seed {seed}: emission not stable"))?;
    }
    Ok(())
}
