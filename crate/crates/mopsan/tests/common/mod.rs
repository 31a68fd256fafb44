//! Shared helpers for integration tests: an exhaustive joint planner over
//! the cooking grid used as a ground-truth oracle for throughput.

#![allow(dead_code)]

use std::collections::HashMap;

use mopsan::env::{Action, CookGrid, GridState, Item, ACTIONS};

/// Packs the planner-relevant part of a state into one word. Counters are
/// excluded because the planner never lets a counter become occupied.
fn pack_key(s: &GridState) -> u64 {
    debug_assert!(s.players.iter().all(|p| p.pos.0 < 16 && p.pos.1 < 16));
    let held_code = |h: Option<Item>| match h {
        None => 0u64,
        Some(Item::Onion) => 1,
        Some(Item::Dish) => 2,
        Some(Item::Soup) => 3,
    };
    let mut k = 0u64;
    for p in &s.players {
        k = (k << 4) | p.pos.0 as u64;
        k = (k << 4) | p.pos.1 as u64;
        k = (k << 2) | p.dir.index() as u64;
        k = (k << 2) | held_code(p.held);
    }
    k = (k << 2) | s.pot.onions as u64;
    k = (k << 5) | s.pot.timer as u64;
    k = (k << 1) | s.pot.ready as u64;
    k
}

/// Maximum number of soups a fully coordinated pair can serve within
/// `horizon` steps, by breadth-first search over joint actions.
///
/// The search is restricted to play that never parks items on counters,
/// which keeps the reachable state space small. Dominance pruning keeps,
/// per packed state, only the best serve count seen so far; breadth-first
/// order guarantees any later visit has no more remaining time, so a visit
/// with no more soups can never beat the kept one.
pub fn planner_best_soups(g: &CookGrid, horizon: u32) -> u32 {
    let joint: Vec<[Action; 2]> = ACTIONS
        .iter()
        .flat_map(|&a| ACTIONS.iter().map(move |&b| [a, b]))
        .collect();
    let start = g.reset();
    let mut best: HashMap<u64, u32> = HashMap::new();
    let mut frontier: Vec<(GridState, u32)> = vec![(start.clone(), 0)];
    best.insert(pack_key(&start), 0);
    let mut overall = 0u32;
    for _ in 0..horizon {
        let mut next: Vec<(GridState, u32)> = Vec::new();
        for (s, soups) in &frontier {
            for acts in &joint {
                let (ns, _, _, ev) = g.step(s, *acts);
                if ns.counters.iter().any(|c| c.is_some()) {
                    continue;
                }
                let nsoups = soups + ev.total_served() as u32;
                let key = pack_key(&ns);
                match best.get(&key) {
                    Some(&b) if b >= nsoups => continue,
                    _ => {
                        best.insert(key, nsoups);
                        if nsoups > overall {
                            overall = nsoups;
                        }
                        next.push((ns, nsoups));
                    }
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    overall
}
