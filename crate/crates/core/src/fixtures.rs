//! The video-conversion example: one `convert` subtask, rules
//! `format == FLV`, `runtime <= 80`, `price <= 60`, provider 10 offering AVI
//! and provider 20 offering two FLV bundles (fast/expensive, slow/cheap).

use std::collections::BTreeSet;

use crate::board::Board;
use crate::cost::CostPolicy;
use crate::model::{validate_catalog, Catalog, Offer, ParamName, ProviderId, Rule, RuleId, RuleKind, ServiceDescriptor, TaskId, Value};

pub const CONVERT: &str = "convert";

pub fn example_rules() -> Vec<Rule> {
    let t = TaskId::from(CONVERT);
    vec![
        Rule::new(RuleId(1), t.clone(), "format", RuleKind::Equals, Value::from("FLV"), 1).unwrap(),
        Rule::new(RuleId(2), t.clone(), "runtime", RuleKind::AtMost, Value::Number(80.0), 2).unwrap(),
        Rule::new(RuleId(3), t, "price", RuleKind::AtMost, Value::Number(60.0), 3).unwrap(),
    ]
}

pub fn example_descriptors() -> Vec<ServiceDescriptor> {
    let t = TaskId::from(CONVERT);
    let par_list: Vec<ParamName> = vec!["format".into(), "runtime".into(), "price".into()];
    vec![
        ServiceDescriptor {
            address: "10.0.0.10".into(),
            port: 63110,
            task: t.clone(),
            metric: 1.0,
            par_list: par_list.clone(),
            provider: ProviderId(10),
            offers: vec![Offer::new(ProviderId(10), t.clone(), 0).with("format", "AVI").with("runtime", 50.0).with("price", 20.0)],
        },
        ServiceDescriptor {
            address: "10.0.0.20".into(),
            port: 63120,
            task: t.clone(),
            metric: 1.0,
            par_list,
            provider: ProviderId(20),
            offers: vec![
                Offer::new(ProviderId(20), t.clone(), 0).with("format", "FLV").with("runtime", 50.0).with("price", 50.0),
                Offer::new(ProviderId(20), t, 1).with("format", "FLV").with("runtime", 100.0).with("price", 20.0),
            ],
        },
    ]
}

pub fn example_catalog() -> Catalog {
    validate_catalog(example_descriptors()).expect("fixture catalog is valid")
}

pub fn example_board() -> Board {
    Board::build(&TaskId::from(CONVERT), &example_rules(), &example_catalog(), CostPolicy::default()).expect("fixture board builds")
}

pub type OfferValues<'a> = Vec<(&'a str, Value)>;

/// Builds a catalog for one task from `(provider, offers)` pairs, each offer
/// a list of `(parameter, value)`. Metrics are 1.
pub fn catalog_of(providers: Vec<(u64, Vec<OfferValues>)>, task: &str) -> Catalog {
    let t = TaskId::from(task);
    let descriptors = providers
        .into_iter()
        .map(|(p, offers)| {
            let offers: Vec<Offer> = offers
                .into_iter()
                .enumerate()
                .map(|(i, values)| values.into_iter().fold(Offer::new(ProviderId(p), t.clone(), i as u32), |o, (k, v)| o.with(k, v)))
                .collect();
            let par_list: BTreeSet<ParamName> = offers.iter().flat_map(|o| o.values.keys().cloned()).collect();
            ServiceDescriptor {
                address: "127.0.0.1".into(),
                port: 0,
                task: t.clone(),
                metric: 1.0,
                par_list: par_list.into_iter().collect(),
                provider: ProviderId(p),
                offers,
            }
        })
        .collect();
    validate_catalog(descriptors).expect("catalog_of input is valid")
}
