//! Blackboard engine for selecting the cheapest chain of service providers
//! under QoS rules, with an incremental minimum-cost-path search that
//! survives live rule and service changes.

pub mod board;
pub mod cost;
pub mod dynamics;
pub mod executor;
pub mod external;
pub mod fixtures;
pub mod frontdoor;
pub mod model;
pub mod oracle;
pub mod registry;
pub mod search;

pub use board::{Board, Region};
pub use cost::CostPolicy;
pub use dynamics::{ChangeOutcome, OutcomeKind};
pub use model::{Catalog, ChangeEvent, ChangeKind, Cost, NodeId, Offer, ParamName, ProviderId, Rule, RuleId, RuleKind, ServiceDescriptor, Solution, TaskId, Value};
pub use search::{find_best_provider, SearchError, SearchState};
