//! A deterministic two-cook cooking gridworld.
//!
//! Two players move on a small grid, fetch onions and dishes from
//! dispensers, load a single pot, wait out the cook, and carry finished
//! soup to the serving tile for a shared reward. `step` is a pure function
//! of state and the joint action; all randomness lives in the caller.

pub mod scripted;

use thiserror::Error;

/// Steps a full pot needs before the soup is ready.
pub const COOK_TIME: u8 = 20;
/// Onions needed to start a cook.
pub const POT_CAPACITY: u8 = 3;
/// Team reward for delivering one soup.
pub const SERVE_REWARD: f64 = 20.0;
/// Number of discrete per-player actions.
pub const ACTION_COUNT: usize = 6;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Tile {
    Floor,
    Counter,
    Pot,
    OnionDispenser,
    DishDispenser,
    Serving,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Item {
    Onion,
    Dish,
    Soup,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Direction {
    North,
    South,
    West,
    East,
}

impl Direction {
    pub fn delta(self) -> (isize, isize) {
        match self {
            Direction::North => (-1, 0),
            Direction::South => (1, 0),
            Direction::West => (0, -1),
            Direction::East => (0, 1),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Direction::North => 0,
            Direction::South => 1,
            Direction::West => 2,
            Direction::East => 3,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
    Interact,
}

/// All actions in index order; the policy head emits logits in this order.
pub const ACTIONS: [Action; ACTION_COUNT] = [
    Action::Up,
    Action::Down,
    Action::Left,
    Action::Right,
    Action::Stay,
    Action::Interact,
];

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::Up => 0,
            Action::Down => 1,
            Action::Left => 2,
            Action::Right => 3,
            Action::Stay => 4,
            Action::Interact => 5,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        ACTIONS.get(i).copied()
    }

    fn move_dir(self) -> Option<Direction> {
        match self {
            Action::Up => Some(Direction::North),
            Action::Down => Some(Direction::South),
            Action::Left => Some(Direction::West),
            Action::Right => Some(Direction::East),
            Action::Stay | Action::Interact => None,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct PlayerState {
    pub pos: (usize, usize),
    pub dir: Direction,
    pub held: Option<Item>,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Default)]
pub struct PotState {
    /// Onions loaded so far, up to [`POT_CAPACITY`].
    pub onions: u8,
    /// Cook progress; only advances while the pot is full and not ready.
    pub timer: u8,
    pub ready: bool,
}

/// Complete environment state. `counters` is indexed by the layout's
/// counter-cell order so states hash and compare deterministically.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct GridState {
    pub players: [PlayerState; 2],
    pub pot: PotState,
    pub counters: Vec<Option<Item>>,
    pub step: u32,
}

/// Per-step event counts, indexed by player. These drive reward shaping and
/// bookkeeping; the environment reward itself comes only from serving.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepEvents {
    pub onions_taken: [u8; 2],
    pub onions_potted: [u8; 2],
    pub dishes_taken: [u8; 2],
    pub soups_scooped: [u8; 2],
    pub served: [u8; 2],
}

impl StepEvents {
    pub fn total_served(&self) -> u8 {
        self.served[0] + self.served[1]
    }
}

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("layout is missing the `horizon=<steps>` header line")]
    MissingHeader,
    #[error("bad header line {line:?}, expected `horizon=<steps>`")]
    BadHeader { line: String },
    #[error("horizon must be at least 1")]
    BadHorizon,
    #[error("layout has no grid rows")]
    EmptyGrid,
    #[error("row {row} is empty inside the grid")]
    EmptyRow { row: usize },
    #[error("row {row} has {got} tiles, expected {expected}")]
    NonRectangular {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("unknown tile character {ch:?} at row {row}, column {col}")]
    UnknownTile { ch: char, row: usize, col: usize },
    #[error("player {player} has more than one start marker")]
    DuplicateStart { player: usize },
    #[error("layout needs exactly one pot tile, found {found}")]
    PotCount { found: usize },
    #[error("layout needs exactly one serving tile, found {found}")]
    ServingCount { found: usize },
    #[error("layout has no onion dispenser")]
    NoOnionDispenser,
    #[error("layout has no dish dispenser")]
    NoDishDispenser,
    #[error("layout needs at least two floor cells for the players")]
    NotEnoughFloor,
}

/// The default five-by-four kitchen: pot on the top wall, onion dispensers
/// on both sides, dish dispenser and serving window on the bottom wall.
pub const DEFAULT_KITCHEN: &str = "\
horizon=400
CCPCC
N..-N
C...C
CDCSC
";

/// Static grid data parsed from a layout file.
#[derive(Clone, Debug)]
pub struct Layout {
    rows: usize,
    cols: usize,
    tiles: Vec<Tile>,
    pub horizon: u32,
    pub starts: [(usize, usize); 2],
    pub floor_cells: Vec<(usize, usize)>,
    floor_index: Vec<Option<u16>>,
    pub counter_cells: Vec<(usize, usize)>,
    counter_index: Vec<Option<u16>>,
    pub pot_cell: (usize, usize),
    pub serving_cell: (usize, usize),
    pub onion_dispensers: Vec<(usize, usize)>,
    pub dish_dispensers: Vec<(usize, usize)>,
}

impl Layout {
    /// Parses the text format: a `horizon=<steps>` header line followed by
    /// the grid. Tiles: `C` counter, `P` pot, `N` onion dispenser, `D` dish
    /// dispenser, `S` serving window, `.` floor. Start markers on floor
    /// cells: `1` and `2` (or `-` for player 2); missing starts fall back to
    /// the first free floor cells in row-major order.
    pub fn parse(text: &str) -> Result<Layout, LayoutError> {
        let mut lines = text.lines();
        let header = loop {
            match lines.next() {
                None => return Err(LayoutError::MissingHeader),
                Some(l) if l.trim().is_empty() => continue,
                Some(l) => break l.trim(),
            }
        };
        let horizon: u32 = header
            .strip_prefix("horizon=")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| LayoutError::BadHeader {
                line: header.to_string(),
            })?;
        if horizon == 0 {
            return Err(LayoutError::BadHorizon);
        }

        let mut grid_lines: Vec<&str> = lines.map(str::trim_end).collect();
        while grid_lines.last().is_some_and(|l| l.is_empty()) {
            grid_lines.pop();
        }
        if grid_lines.is_empty() {
            return Err(LayoutError::EmptyGrid);
        }

        let cols = grid_lines[0].chars().count();
        let rows = grid_lines.len();
        let mut tiles = Vec::with_capacity(rows * cols);
        let mut start1: Option<(usize, usize)> = None;
        let mut start2: Option<(usize, usize)> = None;
        for (r, line) in grid_lines.iter().enumerate() {
            if line.is_empty() {
                return Err(LayoutError::EmptyRow { row: r });
            }
            let row_tiles: Vec<char> = line.chars().collect();
            if row_tiles.len() != cols {
                return Err(LayoutError::NonRectangular {
                    row: r,
                    got: row_tiles.len(),
                    expected: cols,
                });
            }
            for (c, ch) in row_tiles.into_iter().enumerate() {
                let tile = match ch {
                    '.' => Tile::Floor,
                    'C' => Tile::Counter,
                    'P' => Tile::Pot,
                    'N' => Tile::OnionDispenser,
                    'D' => Tile::DishDispenser,
                    'S' => Tile::Serving,
                    '1' => {
                        if start1.replace((r, c)).is_some() {
                            return Err(LayoutError::DuplicateStart { player: 1 });
                        }
                        Tile::Floor
                    }
                    '2' | '-' => {
                        if start2.replace((r, c)).is_some() {
                            return Err(LayoutError::DuplicateStart { player: 2 });
                        }
                        Tile::Floor
                    }
                    _ => {
                        return Err(LayoutError::UnknownTile { ch, row: r, col: c });
                    }
                };
                tiles.push(tile);
            }
        }

        let mut floor_cells = Vec::new();
        let mut counter_cells = Vec::new();
        let mut pots = Vec::new();
        let mut servings = Vec::new();
        let mut onion_dispensers = Vec::new();
        let mut dish_dispensers = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                match tiles[r * cols + c] {
                    Tile::Floor => floor_cells.push((r, c)),
                    Tile::Counter => counter_cells.push((r, c)),
                    Tile::Pot => pots.push((r, c)),
                    Tile::Serving => servings.push((r, c)),
                    Tile::OnionDispenser => onion_dispensers.push((r, c)),
                    Tile::DishDispenser => dish_dispensers.push((r, c)),
                }
            }
        }
        if pots.len() != 1 {
            return Err(LayoutError::PotCount { found: pots.len() });
        }
        if servings.len() != 1 {
            return Err(LayoutError::ServingCount {
                found: servings.len(),
            });
        }
        if onion_dispensers.is_empty() {
            return Err(LayoutError::NoOnionDispenser);
        }
        if dish_dispensers.is_empty() {
            return Err(LayoutError::NoDishDispenser);
        }
        if floor_cells.len() < 2 {
            return Err(LayoutError::NotEnoughFloor);
        }

        let take_free_floor = |used: &[Option<(usize, usize)>]| {
            floor_cells
                .iter()
                .copied()
                .find(|cell| !used.iter().any(|u| *u == Some(*cell)))
        };
        let s1 = match start1 {
            Some(s) => s,
            None => take_free_floor(&[start2]).ok_or(LayoutError::NotEnoughFloor)?,
        };
        let s2 = match start2 {
            Some(s) => s,
            None => take_free_floor(&[Some(s1)]).ok_or(LayoutError::NotEnoughFloor)?,
        };

        let mut floor_index = vec![None; rows * cols];
        for (i, &(r, c)) in floor_cells.iter().enumerate() {
            floor_index[r * cols + c] = Some(i as u16);
        }
        let mut counter_index = vec![None; rows * cols];
        for (i, &(r, c)) in counter_cells.iter().enumerate() {
            counter_index[r * cols + c] = Some(i as u16);
        }

        Ok(Layout {
            rows,
            cols,
            tiles,
            horizon,
            starts: [s1, s2],
            floor_cells,
            floor_index,
            counter_cells,
            counter_index,
            pot_cell: pots[0],
            serving_cell: servings[0],
            onion_dispensers,
            dish_dispensers,
        })
    }

    pub fn default_kitchen() -> Layout {
        Layout::parse(DEFAULT_KITCHEN).expect("built-in layout parses")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn tile(&self, cell: (usize, usize)) -> Option<Tile> {
        if cell.0 < self.rows && cell.1 < self.cols {
            Some(self.tiles[cell.0 * self.cols + cell.1])
        } else {
            None
        }
    }

    pub fn floor_slot(&self, cell: (usize, usize)) -> Option<usize> {
        self.floor_index
            .get(cell.0 * self.cols + cell.1)
            .copied()
            .flatten()
            .map(|i| i as usize)
    }

    pub fn counter_slot(&self, cell: (usize, usize)) -> Option<usize> {
        self.counter_index
            .get(cell.0 * self.cols + cell.1)
            .copied()
            .flatten()
            .map(|i| i as usize)
    }

    /// Cell one step from `pos` in direction `dir`, if it stays on the grid.
    pub fn neighbor(&self, pos: (usize, usize), dir: Direction) -> Option<(usize, usize)> {
        let (dr, dc) = dir.delta();
        let r = pos.0 as isize + dr;
        let c = pos.1 as isize + dc;
        if r < 0 || c < 0 || r as usize >= self.rows || c as usize >= self.cols {
            None
        } else {
            Some((r as usize, c as usize))
        }
    }

    /// Observation width produced by [`CookGrid::featurize`].
    pub fn obs_dim(&self) -> usize {
        2 * (self.floor_cells.len() + 4 + 4) + 4 + 3 + 4 * self.counter_cells.len()
    }
}

/// The environment: a parsed layout plus the transition rules.
#[derive(Clone)]
pub struct CookGrid {
    pub layout: Layout,
}

impl CookGrid {
    pub fn new(layout: Layout) -> Self {
        CookGrid { layout }
    }

    pub fn default_kitchen() -> Self {
        CookGrid::new(Layout::default_kitchen())
    }

    pub fn obs_dim(&self) -> usize {
        self.layout.obs_dim()
    }

    pub fn horizon(&self) -> u32 {
        self.layout.horizon
    }

    /// Fresh episode state: players at their start cells, facing north,
    /// empty hands, empty pot, bare counters.
    pub fn reset(&self) -> GridState {
        GridState {
            players: [
                PlayerState {
                    pos: self.layout.starts[0],
                    dir: Direction::North,
                    held: None,
                },
                PlayerState {
                    pos: self.layout.starts[1],
                    dir: Direction::North,
                    held: None,
                },
            ],
            pot: PotState::default(),
            counters: vec![None; self.layout.counter_cells.len()],
            step: 0,
        }
    }

    /// Advances one step. Order inside a step: the pot ticks, then both
    /// movements resolve jointly, then interacts resolve (player 0 first).
    /// Movement conflicts: two players targeting the same cell both stay, a
    /// position swap is blocked, and following a vacating player is allowed.
    /// Blocked movement still turns the player. Reward is team reward and
    /// comes only from serving.
    pub fn step(
        &self,
        state: &GridState,
        actions: [Action; 2],
    ) -> (GridState, f64, bool, StepEvents) {
        debug_assert_eq!(state.counters.len(), self.layout.counter_cells.len());
        let mut next = state.clone();
        let mut events = StepEvents::default();
        let mut reward = 0.0;

        if next.pot.onions == POT_CAPACITY && !next.pot.ready {
            next.pot.timer += 1;
            if next.pot.timer >= COOK_TIME {
                next.pot.ready = true;
            }
        }

        let before = [next.players[0].pos, next.players[1].pos];
        let mut targets = before;
        for i in 0..2 {
            if let Some(dir) = actions[i].move_dir() {
                next.players[i].dir = dir;
                if let Some(cell) = self.layout.neighbor(before[i], dir) {
                    if self.layout.tile(cell) == Some(Tile::Floor) {
                        targets[i] = cell;
                    }
                }
            }
        }
        let swap = targets[0] == before[1] && targets[1] == before[0];
        let finals = if targets[0] == targets[1] || swap {
            before
        } else {
            targets
        };
        next.players[0].pos = finals[0];
        next.players[1].pos = finals[1];

        for i in 0..2 {
            if actions[i] != Action::Interact {
                continue;
            }
            let player = next.players[i];
            let Some(cell) = self.layout.neighbor(player.pos, player.dir) else {
                continue;
            };
            match self.layout.tile(cell) {
                Some(Tile::OnionDispenser) => {
                    if player.held.is_none() {
                        next.players[i].held = Some(Item::Onion);
                        events.onions_taken[i] += 1;
                    }
                }
                Some(Tile::DishDispenser) => {
                    if player.held.is_none() {
                        next.players[i].held = Some(Item::Dish);
                        events.dishes_taken[i] += 1;
                    }
                }
                Some(Tile::Pot) => {
                    if player.held == Some(Item::Onion)
                        && next.pot.onions < POT_CAPACITY
                        && !next.pot.ready
                    {
                        next.players[i].held = None;
                        next.pot.onions += 1;
                        events.onions_potted[i] += 1;
                    } else if player.held == Some(Item::Dish) && next.pot.ready {
                        next.players[i].held = Some(Item::Soup);
                        next.pot = PotState::default();
                        events.soups_scooped[i] += 1;
                    }
                }
                Some(Tile::Serving) => {
                    if player.held == Some(Item::Soup) {
                        next.players[i].held = None;
                        reward += SERVE_REWARD;
                        events.served[i] += 1;
                    }
                }
                Some(Tile::Counter) => {
                    let slot = self
                        .layout
                        .counter_slot(cell)
                        .expect("counter cells are indexed");
                    match (player.held, next.counters[slot]) {
                        (Some(item), None) => {
                            next.players[i].held = None;
                            next.counters[slot] = Some(item);
                        }
                        (None, Some(item)) => {
                            next.players[i].held = Some(item);
                            next.counters[slot] = None;
                        }
                        _ => {}
                    }
                }
                Some(Tile::Floor) | None => {}
            }
        }

        next.step += 1;
        let done = next.step >= self.layout.horizon;
        (next, reward, done, events)
    }

    /// Dense observation for one player, every entry in [0, 1]:
    /// own position/orientation/held item as one-hots, the partner's same
    /// blocks, pot fill and cook progress, normalized episode time, and a
    /// four-way one-hot per plain counter cell.
    pub fn featurize(&self, state: &GridState, player: usize) -> Vec<f64> {
        assert!(player < 2, "player index is 0 or 1");
        let mut v = Vec::with_capacity(self.obs_dim());
        let me = &state.players[player];
        let other = &state.players[1 - player];
        for p in [me, other] {
            let slot = self
                .layout
                .floor_slot(p.pos)
                .expect("players stand on floor cells");
            for i in 0..self.layout.floor_cells.len() {
                v.push(if i == slot { 1.0 } else { 0.0 });
            }
            let d = p.dir.index();
            for i in 0..4 {
                v.push(if i == d { 1.0 } else { 0.0 });
            }
            let h = match p.held {
                None => 0,
                Some(Item::Onion) => 1,
                Some(Item::Dish) => 2,
                Some(Item::Soup) => 3,
            };
            for i in 0..4 {
                v.push(if i == h { 1.0 } else { 0.0 });
            }
        }
        for i in 0..4 {
            v.push(if i == state.pot.onions as usize { 1.0 } else { 0.0 });
        }
        v.push(state.pot.timer as f64 / COOK_TIME as f64);
        v.push(if state.pot.ready { 1.0 } else { 0.0 });
        v.push(state.step as f64 / self.layout.horizon as f64);
        for slot in &state.counters {
            let h = match slot {
                None => 0,
                Some(Item::Onion) => 1,
                Some(Item::Dish) => 2,
                Some(Item::Soup) => 3,
            };
            for i in 0..4 {
                v.push(if i == h { 1.0 } else { 0.0 });
            }
        }
        debug_assert_eq!(v.len(), self.obs_dim());
        v
    }

    /// Multi-line ASCII picture of a state, for logs and examples.
    pub fn render(&self, state: &GridState) -> String {
        let mut out = String::new();
        for r in 0..self.layout.rows {
            for c in 0..self.layout.cols {
                let ch = if state.players[0].pos == (r, c) {
                    '0'
                } else if state.players[1].pos == (r, c) {
                    '1'
                } else {
                    match self.layout.tiles[r * self.layout.cols + c] {
                        Tile::Floor => '.',
                        Tile::Counter => match self
                            .layout
                            .counter_slot((r, c))
                            .and_then(|s| state.counters[s])
                        {
                            None => 'C',
                            Some(Item::Onion) => 'o',
                            Some(Item::Dish) => 'd',
                            Some(Item::Soup) => 's',
                        },
                        Tile::Pot => 'P',
                        Tile::OnionDispenser => 'N',
                        Tile::DishDispenser => 'D',
                        Tile::Serving => 'S',
                    }
                };
                out.push(ch);
            }
            out.push('\n');
        }
        let held = |p: &PlayerState| match p.held {
            None => "nothing",
            Some(Item::Onion) => "onion",
            Some(Item::Dish) => "dish",
            Some(Item::Soup) => "soup",
        };
        out.push_str(&format!(
            "step {:3}  pot {}/{} timer {:2} ready {}  p0 holds {}  p1 holds {}\n",
            state.step,
            state.pot.onions,
            POT_CAPACITY,
            state.pot.timer,
            state.pot.ready,
            held(&state.players[0]),
            held(&state.players[1]),
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kitchen() -> CookGrid {
        CookGrid::default_kitchen()
    }

    #[test]
    fn default_kitchen_parses_with_expected_geometry() {
        let g = kitchen();
        assert_eq!(g.layout.rows(), 4);
        assert_eq!(g.layout.cols(), 5);
        assert_eq!(g.layout.horizon, 400);
        assert_eq!(g.layout.starts, [(1, 1), (1, 3)]);
        assert_eq!(g.layout.pot_cell, (0, 2));
        assert_eq!(g.layout.serving_cell, (3, 3));
        assert_eq!(g.layout.floor_cells.len(), 6);
        assert_eq!(g.layout.counter_cells.len(), 9);
        assert_eq!(g.obs_dim(), 71);
    }

    #[test]
    fn layout_errors_are_specific() {
        assert!(matches!(
            Layout::parse("CCPCC\nN..-N"),
            Err(LayoutError::BadHeader { .. })
        ));
        assert!(matches!(
            Layout::parse("horizon=400\nCC?CC\nN..-N\nCDCSC"),
            Err(LayoutError::UnknownTile { ch: '?', row: 0, col: 2 })
        ));
        assert!(matches!(
            Layout::parse("horizon=400\nCCCC\nN.-N\nCDSC"),
            Err(LayoutError::PotCount { found: 0 })
        ));
        assert!(matches!(
            Layout::parse("horizon=400\nCCPCC\nN.-N\nCDCSC"),
            Err(LayoutError::NonRectangular { row: 1, got: 4, expected: 5 })
        ));
        assert!(matches!(
            Layout::parse("horizon=0\nCCPCC\nN..-N\nCDCSC"),
            Err(LayoutError::BadHorizon)
        ));
    }

    #[test]
    fn blocked_moves_still_turn_the_player() {
        let g = kitchen();
        let s0 = g.reset();
        // Player 0 at (1,1) pushing west into the onion dispenser.
        let (s1, r, done, _) = g.step(&s0, [Action::Left, Action::Stay]);
        assert_eq!(s1.players[0].pos, (1, 1));
        assert_eq!(s1.players[0].dir, Direction::West);
        assert_eq!(r, 0.0);
        assert!(!done);
    }

    #[test]
    fn same_target_conflict_blocks_both() {
        let g = kitchen();
        let s0 = g.reset();
        // (1,1) moving east and (1,3) moving west both target (1,2).
        let (s1, _, _, _) = g.step(&s0, [Action::Right, Action::Left]);
        assert_eq!(s1.players[0].pos, (1, 1));
        assert_eq!(s1.players[1].pos, (1, 3));
        assert_eq!(s1.players[0].dir, Direction::East);
        assert_eq!(s1.players[1].dir, Direction::West);
    }

    #[test]
    fn position_swap_is_blocked() {
        let g = kitchen();
        let mut s = g.reset();
        s.players[0].pos = (1, 1);
        s.players[1].pos = (1, 2);
        let (s1, _, _, _) = g.step(&s, [Action::Right, Action::Left]);
        assert_eq!(s1.players[0].pos, (1, 1));
        assert_eq!(s1.players[1].pos, (1, 2));
    }

    #[test]
    fn following_a_vacating_player_is_allowed() {
        let g = kitchen();
        let mut s = g.reset();
        s.players[0].pos = (1, 1);
        s.players[1].pos = (1, 2);
        let (s1, _, _, _) = g.step(&s, [Action::Right, Action::Right]);
        assert_eq!(s1.players[0].pos, (1, 2));
        assert_eq!(s1.players[1].pos, (1, 3));
    }

    #[test]
    fn cook_completes_exactly_twenty_steps_after_third_onion() {
        let g = kitchen();
        let mut s = g.reset();
        // Hand-place: player 0 at pot-adjacent cell facing the pot with an
        // onion; load three onions by teleporting the hand each time.
        s.players[0].pos = (1, 2);
        s.players[0].dir = Direction::North;
        for _ in 0..2 {
            s.players[0].held = Some(Item::Onion);
            let (ns, _, _, ev) = g.step(&s, [Action::Interact, Action::Stay]);
            assert_eq!(ev.onions_potted[0], 1);
            s = ns;
        }
        s.players[0].held = Some(Item::Onion);
        let (ns, _, _, _) = g.step(&s, [Action::Interact, Action::Stay]);
        s = ns;
        assert_eq!(s.pot.onions, 3);
        let loaded_at = s.step;
        // Not ready for 19 further steps, ready on the 20th.
        for _ in 0..COOK_TIME - 1 {
            let (ns, _, _, _) = g.step(&s, [Action::Stay, Action::Stay]);
            s = ns;
            assert!(!s.pot.ready, "not ready at step {}", s.step);
        }
        let (ns, _, _, _) = g.step(&s, [Action::Stay, Action::Stay]);
        s = ns;
        assert!(s.pot.ready);
        assert_eq!(s.step - loaded_at, COOK_TIME as u32);
        // A fourth onion bounces off a full pot.
        s.players[0].held = Some(Item::Onion);
        let (ns, _, _, ev) = g.step(&s, [Action::Interact, Action::Stay]);
        assert_eq!(ev.onions_potted[0], 0);
        assert_eq!(ns.players[0].held, Some(Item::Onion));
    }

    #[test]
    fn scoop_and_serve_pay_exactly_once() {
        let g = kitchen();
        let mut s = g.reset();
        s.pot = PotState {
            onions: 3,
            timer: COOK_TIME,
            ready: true,
        };
        s.players[0].pos = (1, 2);
        s.players[0].dir = Direction::North;
        s.players[0].held = Some(Item::Dish);
        let (ns, r, _, ev) = g.step(&s, [Action::Interact, Action::Stay]);
        assert_eq!(r, 0.0);
        assert_eq!(ev.soups_scooped[0], 1);
        assert_eq!(ns.players[0].held, Some(Item::Soup));
        assert_eq!(ns.pot, PotState::default());
        s = ns;
        s.players[0].pos = (2, 3);
        s.players[0].dir = Direction::South;
        let (ns, r, _, ev) = g.step(&s, [Action::Interact, Action::Stay]);
        assert_eq!(r, SERVE_REWARD);
        assert_eq!(ev.served[0], 1);
        assert_eq!(ns.players[0].held, None);
        // Serving empty-handed pays nothing.
        let (_, r2, _, ev2) = g.step(&ns, [Action::Interact, Action::Stay]);
        assert_eq!(r2, 0.0);
        assert_eq!(ev2.served[0], 0);
    }

    #[test]
    fn counters_hold_one_item() {
        let g = kitchen();
        let mut s = g.reset();
        // Player 0 at (2,1) facing the west counter (2,0).
        s.players[0].pos = (2, 1);
        s.players[0].dir = Direction::West;
        s.players[0].held = Some(Item::Onion);
        let (s1, _, _, _) = g.step(&s, [Action::Interact, Action::Stay]);
        assert_eq!(s1.players[0].held, None);
        let slot = g.layout.counter_slot((2, 0)).unwrap();
        assert_eq!(s1.counters[slot], Some(Item::Onion));
        // Placing onto an occupied counter is a no-op.
        let mut s2 = s1.clone();
        s2.players[0].held = Some(Item::Dish);
        let (s3, _, _, _) = g.step(&s2, [Action::Interact, Action::Stay]);
        assert_eq!(s3.players[0].held, Some(Item::Dish));
        assert_eq!(s3.counters[slot], Some(Item::Onion));
        // Empty-handed pickup returns the item.
        let mut s4 = s3.clone();
        s4.players[0].held = None;
        let (s5, _, _, _) = g.step(&s4, [Action::Interact, Action::Stay]);
        assert_eq!(s5.players[0].held, Some(Item::Onion));
        assert_eq!(s5.counters[slot], None);
    }

    #[test]
    fn episode_ends_exactly_at_horizon() {
        let g = CookGrid::new(Layout::parse("horizon=3\nCCPCC\nN..-N\nC...C\nCDCSC").unwrap());
        let mut s = g.reset();
        let mut dones = Vec::new();
        for _ in 0..3 {
            let (ns, _, done, _) = g.step(&s, [Action::Stay, Action::Stay]);
            s = ns;
            dones.push(done);
        }
        assert_eq!(dones, vec![false, false, true]);
        assert_eq!(s.step, 3);
    }

    #[test]
    fn featurize_is_unit_interval_and_position_indexed() {
        let g = kitchen();
        let s = g.reset();
        let v0 = g.featurize(&s, 0);
        let v1 = g.featurize(&s, 1);
        assert_eq!(v0.len(), 71);
        assert_eq!(v1.len(), 71);
        assert!(v0.iter().all(|x| (0.0..=1.0).contains(x) && x.is_finite()));
        // Each player sees itself first: the blocks swap between the views.
        let f = g.layout.floor_cells.len();
        assert_eq!(v0[..f + 8], v1[f + 8..2 * (f + 8)]);
        assert_eq!(v1[..f + 8], v0[f + 8..2 * (f + 8)]);
    }

    #[test]
    fn determinism_and_invariants_under_random_play() {
        let g = kitchen();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut s = g.reset();
        let mut served_total = 0u32;
        for _ in 0..20_000 {
            let actions = [
                ACTIONS[rng.gen_range(0..ACTION_COUNT)],
                ACTIONS[rng.gen_range(0..ACTION_COUNT)],
            ];
            let (a, ra, da, ea) = g.step(&s, actions);
            let (b, rb, db, eb) = g.step(&s, actions);
            assert_eq!(a, b, "transition must be deterministic");
            assert_eq!(ra, rb);
            assert_eq!(da, db);
            assert_eq!(ea, eb);

            // Players stay on distinct floor cells.
            assert_ne!(a.players[0].pos, a.players[1].pos);
            for p in &a.players {
                assert_eq!(g.layout.tile(p.pos), Some(Tile::Floor));
            }
            // Pot stays within bounds and its flags stay consistent.
            assert!(a.pot.onions <= POT_CAPACITY);
            assert!(a.pot.timer <= COOK_TIME);
            if a.pot.timer > 0 {
                assert_eq!(a.pot.onions, POT_CAPACITY);
            }
            if a.pot.ready {
                assert_eq!(a.pot.timer, COOK_TIME);
            }
            // Reward comes only from serving.
            assert_eq!(ra, SERVE_REWARD * ea.total_served() as f64);

            // Item ledgers balance against the step's events.
            let census = |st: &GridState, item: Item| -> i64 {
                let held = st
                    .players
                    .iter()
                    .filter(|p| p.held == Some(item))
                    .count() as i64;
                let on_counters =
                    st.counters.iter().filter(|c| **c == Some(item)).count() as i64;
                held + on_counters
            };
            let d_onion = census(&a, Item::Onion) - census(&s, Item::Onion);
            let potted = (ea.onions_potted[0] + ea.onions_potted[1]) as i64;
            let taken = (ea.onions_taken[0] + ea.onions_taken[1]) as i64;
            assert_eq!(d_onion, taken - potted);
            let d_pot = a.pot.onions as i64 - s.pot.onions as i64;
            let scooped = (ea.soups_scooped[0] + ea.soups_scooped[1]) as i64;
            assert_eq!(d_pot, potted - 3 * scooped);
            let d_dish = census(&a, Item::Dish) - census(&s, Item::Dish);
            let dishes = (ea.dishes_taken[0] + ea.dishes_taken[1]) as i64;
            assert_eq!(d_dish, dishes - scooped);
            let d_soup = census(&a, Item::Soup) - census(&s, Item::Soup);
            assert_eq!(d_soup, scooped - ea.total_served() as i64);

            served_total += ea.total_served() as u32;
            s = if da { g.reset() } else { a };
        }
        // Random play occasionally serves nothing; the point of the counter
        // is that the loop exercised real episodes.
        let _ = served_total;
    }
}
