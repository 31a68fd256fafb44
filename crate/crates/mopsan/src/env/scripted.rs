//! Deterministic scripted cooks, used as evaluation partners and as the
//! reference pair for the planner comparison.
//!
//! Two complementary roles. The loader shuttles onions into the pot, then
//! pre-holds the next onion on the staging cell behind the pot approach so
//! it can step in and pot the instant the soup is scooped. The runner tops
//! up the pot when a third onion is needed, fetches a dish during the cook,
//! scoops on the exact step the timer completes, and serves. Neither role
//! uses counters.

use std::collections::VecDeque;

use super::{Action, CookGrid, Direction, GridState, Item, Tile, COOK_TIME, POT_CAPACITY};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Role {
    Loader,
    Runner,
}

#[derive(Clone, Copy, Debug)]
pub struct ScriptedPolicy {
    pub role: Role,
}

/// The conventional pairing: player 0 loads, player 1 runs dishes.
pub fn scripted_pair() -> [ScriptedPolicy; 2] {
    [
        ScriptedPolicy { role: Role::Loader },
        ScriptedPolicy { role: Role::Runner },
    ]
}

const DIRS: [Direction; 4] = [
    Direction::North,
    Direction::South,
    Direction::West,
    Direction::East,
];

fn move_action(dir: Direction) -> Action {
    match dir {
        Direction::North => Action::Up,
        Direction::South => Action::Down,
        Direction::West => Action::Left,
        Direction::East => Action::Right,
    }
}

fn opposite(dir: Direction) -> Direction {
    match dir {
        Direction::North => Direction::South,
        Direction::South => Direction::North,
        Direction::West => Direction::East,
        Direction::East => Direction::West,
    }
}

enum Approach {
    /// Take this action to get closer (or to turn toward the tile).
    Go(Action),
    /// Standing on an adjacent cell, facing the tile.
    InPosition,
}

/// Floor cells adjacent to `tile_cell`, with the direction that faces it.
fn approach_cells(g: &CookGrid, tile_cell: (usize, usize)) -> Vec<((usize, usize), Direction)> {
    let mut out = Vec::new();
    for d in DIRS {
        if let Some(cell) = g.layout.neighbor(tile_cell, d) {
            if g.layout.tile(cell) == Some(Tile::Floor) {
                out.push((cell, opposite(d)));
            }
        }
    }
    out
}

/// Breadth-first distance-and-first-step to the nearest of `goals`, treating
/// `avoid` cells as walls. Deterministic: directions are explored in a fixed
/// order, so ties always resolve the same way.
fn shortest_step(
    g: &CookGrid,
    from: (usize, usize),
    goals: &[(usize, usize)],
    avoid: &[(usize, usize)],
) -> Option<(Action, usize, (usize, usize))> {
    if goals.contains(&from) {
        return Some((Action::Stay, 0, from));
    }
    let cols = g.layout.cols();
    let idx = |c: (usize, usize)| c.0 * cols + c.1;
    let mut seen = vec![false; g.layout.rows() * cols];
    let mut queue: VecDeque<((usize, usize), Action)> = VecDeque::new();
    let mut dist = vec![0usize; g.layout.rows() * cols];
    seen[idx(from)] = true;
    for &a in avoid {
        if a != from {
            seen[idx(a)] = true;
        }
    }
    for d in DIRS {
        if let Some(next) = g.layout.neighbor(from, d) {
            if g.layout.tile(next) == Some(Tile::Floor) && !seen[idx(next)] {
                seen[idx(next)] = true;
                dist[idx(next)] = 1;
                queue.push_back((next, move_action(d)));
            }
        }
    }
    while let Some((cell, first)) = queue.pop_front() {
        if goals.contains(&cell) {
            return Some((first, dist[idx(cell)], cell));
        }
        for d in DIRS {
            if let Some(next) = g.layout.neighbor(cell, d) {
                if g.layout.tile(next) == Some(Tile::Floor) && !seen[idx(next)] {
                    seen[idx(next)] = true;
                    dist[idx(next)] = dist[idx(cell)] + 1;
                    queue.push_back((next, first));
                }
            }
        }
    }
    None
}

/// Routing that prefers paths around the partner and any reserved cells.
/// If every such route is blocked it retries without the partner, pushing
/// toward the partner's cell; the conflict rules turn that into a wait
/// unless the partner vacates that same step, in which case both slide
/// through in a chain.
fn route_step(
    g: &CookGrid,
    s: &GridState,
    me: usize,
    goals: &[(usize, usize)],
    reserved: &[(usize, usize)],
) -> Action {
    let from = s.players[me].pos;
    let partner = s.players[1 - me].pos;
    let mut avoid: Vec<(usize, usize)> = reserved.to_vec();
    avoid.retain(|c| !goals.contains(c));
    let mut with_partner = avoid.clone();
    with_partner.push(partner);
    match shortest_step(g, from, goals, &with_partner) {
        Some((a, _, _)) => a,
        None => match shortest_step(g, from, goals, &avoid) {
            Some((a, _, _)) => a,
            None => Action::Stay,
        },
    }
}

/// Walk to some tile in `tile_cells` and face it.
fn approach(
    g: &CookGrid,
    s: &GridState,
    me: usize,
    tile_cells: &[(usize, usize)],
    reserved: &[(usize, usize)],
) -> Approach {
    let my = &s.players[me];
    let mut candidates = Vec::new();
    for &tc in tile_cells {
        candidates.extend(approach_cells(g, tc));
    }
    if let Some(&(_, facing)) = candidates.iter().find(|(c, _)| *c == my.pos) {
        if my.dir == facing {
            return Approach::InPosition;
        }
        return Approach::Go(move_action(facing));
    }
    let goal_cells: Vec<_> = candidates.iter().map(|(c, _)| *c).collect();
    Approach::Go(route_step(g, s, me, &goal_cells, reserved))
}

/// Target cell of a movement action, if it is a movement.
fn move_target(g: &CookGrid, pos: (usize, usize), a: Action) -> Option<(usize, usize)> {
    match a {
        Action::Up => g.layout.neighbor(pos, Direction::North),
        Action::Down => g.layout.neighbor(pos, Direction::South),
        Action::Left => g.layout.neighbor(pos, Direction::West),
        Action::Right => g.layout.neighbor(pos, Direction::East),
        _ => None,
    }
}

fn pot_accepts(s: &GridState) -> bool {
    s.pot.onions < POT_CAPACITY && !s.pot.ready
}

/// True when an interact aimed at the pot this step will scoop: either the
/// soup is ready, or the cook completes during this step's pot tick.
fn scoop_window(s: &GridState) -> bool {
    s.pot.ready || (s.pot.onions == POT_CAPACITY && s.pot.timer == COOK_TIME - 1)
}

/// Staging cell behind the pot approach: a floor cell from which a single
/// move lands on the approach cell already facing the pot. Pre-holding the
/// next onion here lets the loader pot it two steps after a scoop.
fn loader_park_cell(g: &CookGrid) -> Option<(usize, usize)> {
    for (cell, facing) in approach_cells(g, g.layout.pot_cell) {
        if let Some(back) = g.layout.neighbor(cell, opposite(facing)) {
            if g.layout.tile(back) == Some(Tile::Floor) {
                return Some(back);
            }
        }
    }
    None
}

impl ScriptedPolicy {
    /// Chooses this role's action for player `me` in `state`. Pure function
    /// of the visible state; no randomness, no memory between calls.
    pub fn act(&self, g: &CookGrid, s: &GridState, me: usize) -> Action {
        let my = s.players[me];
        let partner = s.players[1 - me];
        // While the loader carries the next batch's onion during a cook it
        // heads for the staging cell; the runner routes around that cell so
        // the two never contest it.
        let partner_staging = partner.held == Some(Item::Onion) && !pot_accepts(s);
        let reserved: Vec<(usize, usize)> = if self.role == Role::Runner && partner_staging {
            loader_park_cell(g).into_iter().collect()
        } else {
            Vec::new()
        };
        match my.held {
            Some(Item::Soup) => match approach(g, s, me, &[g.layout.serving_cell], &reserved) {
                Approach::InPosition => Action::Interact,
                Approach::Go(a) => a,
            },
            Some(Item::Dish) => {
                if s.pot.onions == POT_CAPACITY {
                    match approach(g, s, me, &[g.layout.pot_cell], &reserved) {
                        Approach::InPosition => {
                            if scoop_window(s) {
                                Action::Interact
                            } else {
                                Action::Stay
                            }
                        }
                        Approach::Go(a) => a,
                    }
                } else {
                    // Early dish: park next to the dish dispenser, out of
                    // the loading lane.
                    match approach(g, s, me, &g.layout.dish_dispensers, &reserved) {
                        Approach::InPosition => Action::Stay,
                        Approach::Go(a) => a,
                    }
                }
            }
            Some(Item::Onion) => {
                if pot_accepts(s) {
                    match approach(g, s, me, &[g.layout.pot_cell], &reserved) {
                        Approach::InPosition => Action::Interact,
                        Approach::Go(a) => {
                            if self.yields_pot_entry(g, s, me, a) {
                                Action::Stay
                            } else {
                                a
                            }
                        }
                    }
                } else {
                    self.stage_next_onion(g, s, me)
                }
            }
            None => match self.role {
                Role::Loader => match approach(g, s, me, &g.layout.onion_dispensers, &[]) {
                    Approach::InPosition => Action::Interact,
                    Approach::Go(a) => a,
                },
                Role::Runner => {
                    // Count onions already committed to the current batch:
                    // in the pot plus one in the partner's hand.
                    let partner_onion = (partner.held == Some(Item::Onion)) as u8;
                    if s.pot.onions + partner_onion < POT_CAPACITY && !s.pot.ready {
                        match approach(g, s, me, &g.layout.onion_dispensers, &reserved) {
                            Approach::InPosition => Action::Interact,
                            Approach::Go(a) => a,
                        }
                    } else {
                        match approach(g, s, me, &g.layout.dish_dispensers, &reserved) {
                            Approach::InPosition => Action::Interact,
                            Approach::Go(a) => a,
                        }
                    }
                }
            },
        }
    }

    /// Holding an onion while the pot cannot take it: wait somewhere useful.
    /// The loader waits on the staging cell, routing around the pot approach
    /// so the scooper is never displaced; the runner idles by a dispenser.
    fn stage_next_onion(&self, g: &CookGrid, s: &GridState, me: usize) -> Action {
        if self.role == Role::Loader {
            if let Some(park) = loader_park_cell(g) {
                if s.players[me].pos == park {
                    return Action::Stay;
                }
                let approach_lane: Vec<(usize, usize)> = approach_cells(g, g.layout.pot_cell)
                    .into_iter()
                    .map(|(c, _)| c)
                    .collect();
                return route_step(g, s, me, &[park], &approach_lane);
            }
        }
        match approach(g, s, me, &g.layout.onion_dispensers, &[]) {
            Approach::InPosition => Action::Stay,
            Approach::Go(a) => a,
        }
    }

    /// The runner gives way at the pot-approach cell when the loader also
    /// carries an onion and is at least as close; without this, the two
    /// carriers can block each other in front of the pot indefinitely.
    fn yields_pot_entry(&self, g: &CookGrid, s: &GridState, me: usize, a: Action) -> bool {
        if self.role != Role::Runner {
            return false;
        }
        let Some(target) = move_target(g, s.players[me].pos, a) else {
            return false;
        };
        let pot_adjacent: Vec<_> = approach_cells(g, g.layout.pot_cell)
            .into_iter()
            .map(|(c, _)| c)
            .collect();
        if !pot_adjacent.contains(&target) {
            return false;
        }
        let partner = &s.players[1 - me];
        if partner.held != Some(Item::Onion) {
            return false;
        }
        let partner_dist = if pot_adjacent.contains(&partner.pos) {
            0
        } else {
            match shortest_step(g, partner.pos, &pot_adjacent, &[s.players[me].pos]) {
                Some((_, d, _)) => d,
                None => return false,
            }
        };
        partner_dist <= 1
    }
}

/// Plays one full episode with the scripted pair and returns the number of
/// soups served plus the final state.
pub fn run_scripted_episode(g: &CookGrid) -> (u32, GridState) {
    let pair = scripted_pair();
    let mut s = g.reset();
    let mut served = 0u32;
    loop {
        let actions = [pair[0].act(g, &s, 0), pair[1].act(g, &s, 1)];
        let (ns, _, done, ev) = g.step(&s, actions);
        served += ev.total_served() as u32;
        s = ns;
        if done {
            return (served, s);
        }
    }
}
