//! In-process stand-ins for remote services.

use std::time::Duration;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{ParamName, ServiceDescriptor, Value};

/// What a simulated provider does to the payload it is called with.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    /// Returns the input unchanged.
    Echo,
    /// Prefixes the input with `<task>@<provider>:`.
    #[default]
    Tag,
    /// XORs the input with a keystream derived from the seed.
    Scramble,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ScriptedChange {
    Value { offer_index: u32, parameter: ParamName, value: Value },
    Metric(f64),
}

/// One drift step, applied at logical time `at`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub at: Duration,
    pub change: ScriptedChange,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatedProvider {
    pub descriptor: ServiceDescriptor,
    pub seed: u64,
    pub behavior: Behavior,
    /// Sorted by `at`.
    pub script: Vec<ScriptEntry>,
    /// Broadcast period in push mode; `None` for a provider that never
    /// reports in on its own.
    pub heartbeat: Option<Duration>,
}

impl SimulatedProvider {
    pub fn new(descriptor: ServiceDescriptor, seed: u64) -> Self {
        SimulatedProvider { descriptor, seed, behavior: Behavior::default(), script: Vec::new(), heartbeat: None }
    }

    pub fn with_behavior(mut self, behavior: Behavior) -> Self {
        self.behavior = behavior;
        self
    }

    pub fn with_heartbeat(mut self, every: Duration) -> Self {
        self.heartbeat = Some(every);
        self
    }

    pub fn with_script(mut self, mut script: Vec<ScriptEntry>) -> Self {
        script.sort_by_key(|e| e.at);
        self.script = script;
        self
    }

    /// The descriptor as published at logical time `t` (all script entries
    /// with `at <= t` applied).
    pub fn state_at(&self, t: Duration) -> ServiceDescriptor {
        let mut d = self.descriptor.clone();
        for entry in self.script.iter().take_while(|e| e.at <= t) {
            apply(&mut d, &entry.change);
        }
        d
    }

    /// Deterministic transform of one call's payload.
    pub fn invoke(&self, input: &[u8]) -> Vec<u8> {
        match self.behavior {
            Behavior::Echo => input.to_vec(),
            Behavior::Tag => {
                let mut out = format!("{}@{}:", self.descriptor.task, self.descriptor.provider).into_bytes();
                out.extend_from_slice(input);
                out
            }
            Behavior::Scramble => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ self.descriptor.provider.0.rotate_left(32));
                let mut key = vec![0u8; input.len()];
                rng.fill_bytes(&mut key);
                input.iter().zip(key).map(|(a, b)| a ^ b).collect()
            }
        }
    }

    /// Seeded random drift: `count` value changes spread over `horizon`,
    /// each moving a numeric offer value by up to ±50%.
    pub fn random_drift(&self, count: usize, horizon: Duration) -> Vec<ScriptEntry> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let numeric: Vec<(u32, ParamName, f64)> = self
            .descriptor
            .offers
            .iter()
            .flat_map(|o| o.values.iter().filter_map(move |(k, v)| v.as_number().map(|x| (o.index, k.clone(), x))))
            .collect();
        if numeric.is_empty() || horizon.is_zero() {
            return Vec::new();
        }
        let mut script: Vec<ScriptEntry> = (0..count)
            .map(|_| {
                let (offer_index, parameter, x) = numeric[rng.random_range(0..numeric.len())].clone();
                let factor: f64 = rng.random_range(0.5..1.5);
                let at = Duration::from_millis(rng.random_range(1..=horizon.as_millis() as u64));
                ScriptEntry { at, change: ScriptedChange::Value { offer_index, parameter, value: Value::Number((x * factor).round()) } }
            })
            .collect();
        script.sort_by_key(|e| e.at);
        script
    }
}

pub(crate) fn apply(d: &mut ServiceDescriptor, change: &ScriptedChange) {
    match change {
        ScriptedChange::Metric(m) => d.metric = *m,
        ScriptedChange::Value { offer_index, parameter, value } => {
            if let Some(o) = d.offers.iter_mut().find(|o| o.index == *offer_index) {
                o.values.insert(parameter.clone(), value.clone());
            }
        }
    }
}
