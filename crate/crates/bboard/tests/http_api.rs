//! The JSON API over a live server on an ephemeral port.

use std::sync::Arc;
use std::time::Duration;

use bboard::http::{spawn, AppState, HttpSolver, MutationResponse, RulesResponse, RunResults, RunStarted, ServicesResponse};
use bboard_core::cost::CostPolicy;
use bboard_core::external::{delegate_branch, merge_partial_solution, BranchSpec, SolveRequest, Fragment};
use bboard_core::fixtures::{example_board, example_catalog, example_rules};
use bboard_core::frontdoor::Engine;
use bboard_core::{Cost, OutcomeKind, ProviderId, SearchState};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

const TOL: f64 = 1e-9;

struct Server {
    base: String,
    client: Client,
}

impl Server {
    fn start() -> Server {
        let engine = Engine::new(example_rules(), example_catalog(), CostPolicy::default()).unwrap();
        let addr = spawn("127.0.0.1:0".parse().unwrap(), AppState::new(engine, 3)).unwrap();
        Server { base: format!("http://{addr}"), client: Client::builder().timeout(Duration::from_secs(10)).build().unwrap() }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn get(&self, path: &str) -> reqwest::blocking::Response {
        self.client.get(self.url(path)).send().unwrap()
    }

    fn send(&self, method: reqwest::Method, path: &str, body: Option<Value>) -> reqwest::blocking::Response {
        let req = self.client.request(method, self.url(path));
        match body {
            Some(b) => req.json(&b),
            None => req,
        }
        .send()
        .unwrap()
    }
}

fn total(m: &MutationResponse) -> Option<f64> {
    m.applied.outcomes[0].result.solution.as_ref().and_then(|s| s.total_cost.finite())
}

#[test]
fn health_services_rules() {
    let s = Server::start();
    let h: Value = s.get("/health").json().unwrap();
    assert_eq!(h["status"], "ok");
    assert_eq!(h["seq"], 3);
    let services: ServicesResponse = s.get("/services").json().unwrap();
    assert_eq!(services.services.len(), 2);
    let rules: RulesResponse = s.get("/rules").json().unwrap();
    assert_eq!(rules.rules.len(), 3);
    assert!(rules.text.contains("SUBTASK=convert; PARAM=price; KIND=AT_MOST; BORDER=60"));
}

#[test]
fn rule_edits_carry_seq_and_results() {
    let s = Server::start();
    let r = s.send(reqwest::Method::POST, "/rules", Some(json!({"subtask": "convert", "parameter": "price", "kind": "AT_LEAST", "border": "5"})));
    assert_eq!(r.status(), StatusCode::CREATED);
    let added: MutationResponse = r.json().unwrap();
    assert_eq!(added.seq, 4);
    assert_eq!(added.applied.outcomes[0].outcome.as_ref().unwrap().kind, OutcomeKind::RegionAppended);

    let dup = s.send(reqwest::Method::POST, "/rules", Some(json!({"subtask": "convert", "parameter": "PRICE", "kind": "at_least", "border": 9})));
    assert_eq!(dup.status(), StatusCode::CONFLICT);
    assert!(dup.json::<Value>().unwrap()["error"].is_string());

    let deleted: MutationResponse = s.send(reqwest::Method::DELETE, "/rules/2", None).json().unwrap();
    assert_eq!(deleted.seq, 5);
    assert_eq!(deleted.applied.outcomes[0].outcome.as_ref().unwrap().kind, OutcomeKind::BacktraceRestarted);
    let expected = 21.0 / 61.0 + 6.0 / 21.0;
    assert!((total(&deleted).unwrap() - expected).abs() <= TOL);

    assert_eq!(s.send(reqwest::Method::DELETE, "/rules/2", None).status(), StatusCode::NOT_FOUND);
    assert_eq!(s.send(reqwest::Method::PUT, "/rules/99", Some(json!({"border": 1}))).status(), StatusCode::NOT_FOUND);

    let tightened: MutationResponse = s.send(reqwest::Method::PUT, "/rules/3", Some(json!({"border": 10}))).json().unwrap();
    assert_eq!(tightened.seq, 6);
    assert!(total(&tightened).is_none());
    assert_eq!(s.get("/health").json::<Value>().unwrap()["seq"], 6);
}

#[test]
fn injected_events() {
    let s = Server::start();
    let body = json!({"kind": "parameter_changed", "task": "convert", "provider": 20, "offer_index": 0, "parameter": "runtime", "value": 10});
    let m: MutationResponse = s.send(reqwest::Method::POST, "/events", Some(body)).json().unwrap();
    assert!((total(&m).unwrap() - (11.0 / 81.0 + 51.0 / 61.0)).abs() <= TOL);
    assert!(!m.applied.outcomes[0].outcome.as_ref().unwrap().reopened.is_empty());

    let bad = s.send(reqwest::Method::POST, "/events", Some(json!({"kind": "metric_changed", "provider": 20, "metric": 3.0})));
    assert_eq!(bad.status(), StatusCode::BAD_REQUEST);
    let rule = s.send(reqwest::Method::POST, "/events", Some(json!({"kind": "rule_deleted", "rule_id": 1, "subtask": "convert"})));
    assert_eq!(rule.status(), StatusCode::BAD_REQUEST);
}

#[test]
fn runs_and_results() {
    let s = Server::start();
    let r = s.send(reqwest::Method::POST, "/run", Some(json!({"subtasks": ["convert"], "mode": "dry_run"})));
    assert_eq!(r.status(), StatusCode::CREATED);
    let started: RunStarted = r.json().unwrap();
    assert!(started.succeeded);
    let results: RunResults = s.get(&format!("/runs/{}/results", started.run_id)).json().unwrap();
    let sol = results.results[0].solution.as_ref().unwrap();
    assert_eq!((sol.provider, sol.offer_index), (ProviderId(20), 0));
    assert_eq!(results.results[0].epoch, 0);

    let auto: RunStarted = s
        .send(reqwest::Method::POST, "/run", Some(json!({"subtasks": ["convert"], "mode": "auto", "artifact": {"media_type": "text/plain", "data": "aGVsbG8="}})))
        .json()
        .unwrap();
    assert!(auto.succeeded);
    assert_ne!(auto.run_id, started.run_id);
    let results: RunResults = s.get(&format!("/runs/{}/results", auto.run_id)).json().unwrap();
    assert!(results.run.report.is_some());

    assert_eq!(s.send(reqwest::Method::POST, "/run", Some(json!({"subtasks": ["convert"], "mode": "confirm"}))).status(), StatusCode::BAD_REQUEST);
    assert_eq!(s.send(reqwest::Method::POST, "/run", Some(json!({"subtasks": [], "mode": "auto"}))).status(), StatusCode::BAD_REQUEST);
    assert_eq!(s.get("/runs/999/results").status(), StatusCode::NOT_FOUND);
}

#[test]
fn solve_endpoint_serves_as_external_solver() {
    let s = Server::start();
    let mut board = example_board();
    board.mark_external(0..3).unwrap();
    let spec = BranchSpec::whole(&board);

    let req = SolveRequest { delegation_id: 1, region_offset: 0, fragment: Fragment::from_board(&board, &spec) };
    let answer: Value = s.send(reqwest::Method::POST, "/solve", Some(serde_json::to_value(&req).unwrap())).json().unwrap();
    assert_eq!(answer["provider"], 20);

    let state = SearchState::new(&board, None);
    let solver = Arc::new(HttpSolver { base_url: s.base.clone(), timeout: Duration::from_secs(10) });
    let mut delegation = delegate_branch(&state, &board, spec, solver, Duration::from_secs(10)).unwrap();
    let partial = delegation.wait().expect("remote answer");
    let mut state = state;
    merge_partial_solution(&mut state, &board, &mut delegation, &partial).unwrap();
    let sol = state.resume(&board).unwrap();
    assert_eq!(sol.total_cost, Cost::Finite(51.0 / 81.0 + 51.0 / 61.0));
}
