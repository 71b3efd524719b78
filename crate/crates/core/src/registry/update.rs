//! Update controller: turns provider drift into change events, either by
//! polling every provider each interval or by accepting provider broadcasts
//! and zeroing the metric of providers that stay silent too long.
//!
//! Time is logical (`Duration` since registration) so runs are reproducible;
//! [`UpdateController::spawn_live`] drives the same logic from the wall clock.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::provider::{apply, ScriptedChange, SimulatedProvider};
use crate::model::{ChangeKind, ServiceDescriptor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    Push,
    Poll,
}

/// Factors that should drive the update frequency. Carried as configuration
/// only; the controller does not read them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateWeights {
    pub elapsed_time: f64,
    pub volatility: f64,
    pub absence_cost: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdatePolicy {
    pub mode: UpdateMode,
    pub interval: Duration,
    pub staleness_timeout: Duration,
    pub weights: UpdateWeights,
}

impl Default for UpdatePolicy {
    fn default() -> Self {
        UpdatePolicy {
            mode: UpdateMode::Poll,
            interval: Duration::from_secs(5),
            staleness_timeout: Duration::from_secs(15),
            weights: UpdateWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UpdateError {
    #[error("update interval must be positive")]
    ZeroInterval,
    #[error("staleness timeout must be positive")]
    ZeroStaleness,
}

impl UpdatePolicy {
    pub fn validate(&self) -> Result<(), UpdateError> {
        if self.interval.is_zero() {
            return Err(UpdateError::ZeroInterval);
        }
        if self.staleness_timeout.is_zero() {
            return Err(UpdateError::ZeroStaleness);
        }
        Ok(())
    }
}

/// A change observed at logical time `at`. Sequence numbers are assigned
/// later by the repository.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedChange {
    pub at: Duration,
    pub change: ChangeKind,
}

/// Events between two descriptor states of the same provider and task.
pub fn diff(old: &ServiceDescriptor, new: &ServiceDescriptor) -> Vec<ChangeKind> {
    let mut out = Vec::new();
    for offer in &new.offers {
        let before = old.offers.iter().find(|o| o.index == offer.index);
        for (param, value) in &offer.values {
            if before.and_then(|o| o.values.get(param)) != Some(value) {
                out.push(ChangeKind::ParameterChanged {
                    task: new.task.clone(),
                    provider: new.provider,
                    offer_index: offer.index,
                    parameter: param.clone(),
                    value: value.clone(),
                });
            }
        }
    }
    if old.metric != new.metric {
        out.push(ChangeKind::MetricChanged { provider: new.provider, metric: new.metric });
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Occurrence {
    // declaration order is the processing order at equal timestamps
    Script { provider: usize, entry: usize },
    Heartbeat { provider: usize },
    Tick,
}

pub struct UpdateController {
    policy: UpdatePolicy,
    providers: Vec<SimulatedProvider>,
    known: Vec<ServiceDescriptor>,
    last_contact: Vec<Duration>,
    stale: Vec<bool>,
    now: Duration,
}

impl UpdateController {
    pub fn new(policy: UpdatePolicy, providers: Vec<SimulatedProvider>) -> Result<Self, UpdateError> {
        policy.validate()?;
        let known = providers.iter().map(|p| p.descriptor.clone()).collect();
        let n = providers.len();
        Ok(UpdateController { policy, providers, known, last_contact: vec![Duration::ZERO; n], stale: vec![false; n], now: Duration::ZERO })
    }

    pub fn now(&self) -> Duration {
        self.now
    }

    pub fn policy(&self) -> &UpdatePolicy {
        &self.policy
    }

    /// The controller's current view of each provider.
    pub fn known(&self) -> &[ServiceDescriptor] {
        &self.known
    }

    fn ticks_in(&self, from: Duration, to: Duration, period: Duration) -> impl Iterator<Item = Duration> {
        let first = from.as_nanos() / period.as_nanos() + 1;
        let last = to.as_nanos() / period.as_nanos();
        (first..=last).map(move |k| Duration::from_nanos((k * period.as_nanos()) as u64))
    }

    /// Advances logical time to `t`, emitting every change observed in
    /// `(now, t]` in time order.
    pub fn advance_to(&mut self, t: Duration, sink: &mut dyn FnMut(TimedChange)) {
        if t <= self.now {
            return;
        }
        let mut timeline: Vec<(Duration, Occurrence)> = self.ticks_in(self.now, t, self.policy.interval).map(|at| (at, Occurrence::Tick)).collect();
        if self.policy.mode == UpdateMode::Push {
            for (i, p) in self.providers.iter().enumerate() {
                for (j, e) in p.script.iter().enumerate() {
                    if e.at > self.now && e.at <= t {
                        timeline.push((e.at, Occurrence::Script { provider: i, entry: j }));
                    }
                }
                if let Some(h) = p.heartbeat.filter(|h| !h.is_zero()) {
                    timeline.extend(self.ticks_in(self.now, t, h).map(|at| (at, Occurrence::Heartbeat { provider: i })));
                }
            }
        }
        timeline.sort();

        for (at, occ) in timeline {
            match (self.policy.mode, occ) {
                (UpdateMode::Poll, Occurrence::Tick) => self.poll(at, sink),
                (UpdateMode::Push, Occurrence::Tick) => self.check_staleness(at, sink),
                (_, Occurrence::Script { provider, entry }) => self.broadcast(at, provider, entry, sink),
                (_, Occurrence::Heartbeat { provider }) => self.contact(at, provider, sink),
            }
        }
        self.now = t;
    }

    fn poll(&mut self, at: Duration, sink: &mut dyn FnMut(TimedChange)) {
        for (i, p) in self.providers.iter().enumerate() {
            let current = p.state_at(at);
            for change in diff(&self.known[i], &current) {
                sink(TimedChange { at, change });
            }
            self.known[i] = current;
            self.last_contact[i] = at;
        }
    }

    fn contact(&mut self, at: Duration, i: usize, sink: &mut dyn FnMut(TimedChange)) {
        self.last_contact[i] = at;
        if self.stale[i] {
            self.stale[i] = false;
            let d = &self.known[i];
            sink(TimedChange { at, change: ChangeKind::MetricChanged { provider: d.provider, metric: d.metric } });
        }
    }

    fn broadcast(&mut self, at: Duration, i: usize, entry: usize, sink: &mut dyn FnMut(TimedChange)) {
        let change = self.providers[i].script[entry].change.clone();
        if matches!(change, ScriptedChange::Metric(_)) {
            self.stale[i] = false;
        }
        self.contact(at, i, sink);
        let before = self.known[i].clone();
        apply(&mut self.known[i], &change);
        for change in diff(&before, &self.known[i]) {
            sink(TimedChange { at, change });
        }
    }

    fn check_staleness(&mut self, at: Duration, sink: &mut dyn FnMut(TimedChange)) {
        for i in 0..self.providers.len() {
            if !self.stale[i] && at.saturating_sub(self.last_contact[i]) >= self.policy.staleness_timeout {
                self.stale[i] = true;
                sink(TimedChange { at, change: ChangeKind::MetricChanged { provider: self.known[i].provider, metric: 0.0 } });
            }
        }
    }

    /// Runs the controller against the wall clock on a background thread.
    pub fn spawn_live<F>(mut self, mut sink: F) -> LiveController
    where
        F: FnMut(TimedChange) + Send + 'static,
    {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let step = self.policy.interval.min(Duration::from_millis(100));
        let handle = std::thread::spawn(move || {
            let start = Instant::now();
            while !flag.load(Ordering::Relaxed) {
                std::thread::sleep(step);
                self.advance_to(start.elapsed(), &mut sink);
            }
            self
        });
        LiveController { stop, handle: Some(handle) }
    }
}

/// Handle to a wall-clock controller thread.
pub struct LiveController {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<UpdateController>>,
}

impl LiveController {
    /// Stops the thread and hands the controller back.
    pub fn stop(mut self) -> UpdateController {
        self.stop.store(true, Ordering::Relaxed);
        self.handle.take().expect("joined once").join().expect("controller thread panicked")
    }
}

impl Drop for LiveController {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
