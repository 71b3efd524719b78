//! Service registry: descriptor files, simulated providers, the update
//! controller and the TCP line protocol.

pub mod descriptor;
pub mod provider;
pub mod update;
pub mod wire;

use std::time::Duration;

use crate::model::{Catalog, ServiceDescriptor, TaskId};

pub use descriptor::{attach_offers, emit_descriptor, emit_descriptor_file, parse_descriptor, parse_descriptor_file, DescriptorError};
pub use provider::{Behavior, ScriptEntry, ScriptedChange, SimulatedProvider};
pub use update::{diff, LiveController, TimedChange, UpdateController, UpdateError, UpdateMode, UpdatePolicy, UpdateWeights};
pub use wire::{call, fetch_offer, ProviderServer, WireError};

/// Metric from a measured round trip: 1 for an instant answer, falling
/// linearly to 0 at `window`.
pub fn rtt_metric(rtt: Duration, window: Duration) -> f64 {
    if window.is_zero() {
        return 0.0;
    }
    (1.0 - rtt.as_secs_f64() / window.as_secs_f64()).clamp(0.0, 1.0)
}

/// Descriptors able to perform `task`, reachable providers (metric > 0)
/// first, then by provider id.
pub fn find_services<'a>(catalog: &'a Catalog, task: &TaskId) -> Vec<&'a ServiceDescriptor> {
    let mut out: Vec<_> = catalog.descriptors().iter().filter(|d| &d.task == task).collect();
    out.sort_by_key(|d| (d.metric <= 0.0, d.provider));
    out
}
