//! Exhaustive enumeration of every offer chain on a board. Used to
//! cross-check the search in scenario runs.

use crate::board::Board;
use crate::model::{Cost, ProviderId};

/// Cheapest complete chain as `(provider, offer, total)`, ties going to the
/// lowest `(provider, offer)`. `None` when every chain is infeasible.
pub fn enumerate_best(board: &Board) -> Option<(ProviderId, u32, f64)> {
    let mut best: Option<(ProviderId, u32, f64)> = None;
    for offer in board.offers() {
        let chain = board.chain(offer.provider, offer.index);
        if chain.len() != board.region_count() {
            continue;
        }
        let total = chain.iter().fold(Cost::ZERO, |acc, id| acc + board.node(*id).map_or(Cost::Infeasible, |n| n.cost));
        let Cost::Finite(total) = total else { continue };
        let better = match best {
            None => true,
            Some((p, o, t)) => total.total_cmp(&t).then((offer.provider, offer.index).cmp(&(p, o))).is_lt(),
        };
        if better {
            best = Some((offer.provider, offer.index, total));
        }
    }
    best
}
