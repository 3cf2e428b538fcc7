//! Grid world: map generation, the matching schema and rules, and the
//! ground-truth movement model.
//!
//! Coordinates are (x, y) with the origin top-left: `up` decreases y,
//! `down` increases y, `left` decreases x, `right` increases x. Cells
//! outside the grid count as impassable, so the wall rules also fence the
//! border. The robot starts at (0, 0) and the goal is the opposite corner;
//! generated maps are always solvable because generation rejects layouts
//! where the goal is unreachable.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::engine::{Command, WorldState};
use crate::schema::{Schema, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

pub const DIRECTIONS: [Direction; 4] = [
    Direction::Up,
    Direction::Down,
    Direction::Left,
    Direction::Right,
];

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }

    pub fn from_str(s: &str) -> Option<Self> {
        Some(match s {
            "up" => Direction::Up,
            "down" => Direction::Down,
            "left" => Direction::Left,
            "right" => Direction::Right,
            _ => return None,
        })
    }

    pub fn delta(self) -> (i64, i64) {
        match self {
            Direction::Up => (0, -1),
            Direction::Down => (0, 1),
            Direction::Left => (-1, 0),
            Direction::Right => (1, 0),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A rectangular maze with one start and one goal cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMap {
    width: i64,
    height: i64,
    /// Row-major; true = open floor.
    passable: Vec<bool>,
    start: (i64, i64),
    goal: (i64, i64),
}

impl GridMap {
    /// Generates a solvable map: corner-to-corner with random walls at the
    /// given density. Layouts that cut the goal off are rejected and
    /// redrawn, so the result depends only on the RNG state.
    pub fn generate(width: i64, height: i64, wall_density: f64, rng: &mut ChaCha8Rng) -> GridMap {
        assert!(width >= 2 && height >= 2, "grid must be at least 2x2");
        let start = (0, 0);
        let goal = (width - 1, height - 1);
        loop {
            let mut passable = vec![true; (width * height) as usize];
            for y in 0..height {
                for x in 0..width {
                    if (x, y) != start && (x, y) != goal && rng.gen_bool(wall_density) {
                        passable[(y * width + x) as usize] = false;
                    }
                }
            }
            let map = GridMap {
                width,
                height,
                passable,
                start,
                goal,
            };
            if map.distances_to_goal()[map.index(start)].is_some() {
                return map;
            }
        }
    }

    /// A map with no interior walls; only the border fences the robot.
    pub fn open(width: i64, height: i64) -> GridMap {
        GridMap {
            width,
            height,
            passable: vec![true; (width * height) as usize],
            start: (0, 0),
            goal: (width - 1, height - 1),
        }
    }

    pub fn width(&self) -> i64 {
        self.width
    }

    pub fn height(&self) -> i64 {
        self.height
    }

    pub fn start(&self) -> (i64, i64) {
        self.start
    }

    pub fn goal(&self) -> (i64, i64) {
        self.goal
    }

    fn index(&self, (x, y): (i64, i64)) -> usize {
        (y * self.width + x) as usize
    }

    /// Out-of-grid coordinates are impassable.
    pub fn passable(&self, (x, y): (i64, i64)) -> bool {
        x >= 0 && x < self.width && y >= 0 && y < self.height && self.passable[self.index((x, y))]
    }

    pub fn neighbor(&self, pos: (i64, i64), dir: Direction) -> (i64, i64) {
        let (dx, dy) = dir.delta();
        (pos.0 + dx, pos.1 + dy)
    }

    /// BFS distance field toward the goal, the pathfinding oracle for the
    /// optimal planner and for map solvability.
    pub fn distances_to_goal(&self) -> Vec<Option<u32>> {
        let mut dist = vec![None; (self.width * self.height) as usize];
        if !self.passable(self.goal) {
            return dist;
        }
        let mut queue = VecDeque::new();
        dist[self.index(self.goal)] = Some(0);
        queue.push_back(self.goal);
        while let Some(pos) = queue.pop_front() {
            let here = dist[self.index(pos)].expect("queued cells have distances");
            for dir in DIRECTIONS {
                let next = self.neighbor(pos, dir);
                if self.passable(next) && dist[self.index(next)].is_none() {
                    dist[self.index(next)] = Some(here + 1);
                    queue.push_back(next);
                }
            }
        }
        dist
    }
}

impl fmt::Display for GridMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for y in 0..self.height {
            for x in 0..self.width {
                let c = if (x, y) == self.start {
                    'S'
                } else if (x, y) == self.goal {
                    'G'
                } else if self.passable((x, y)) {
                    '.'
                } else {
                    '#'
                };
                write!(f, "{c}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// schema and rules

/// Schema text for a width x height grid robot. The state exposes the
/// robot's position and the passability of the four neighboring cells;
/// the only command kind is MOVE with a direction.
pub fn grid_schema_text(width: i64, height: i64) -> String {
    format!(
        concat!(
            "[state]\n",
            "cell_down_passable = bool\n",
            "cell_left_passable = bool\n",
            "cell_right_passable = bool\n",
            "cell_up_passable = bool\n",
            "pos_x = int 0..{max_x}\n",
            "pos_y = int 0..{max_y}\n",
            "\n",
            "[command MOVE]\n",
            "direction = enum up|down|left|right\n",
            "\n",
            "[command NOP]\n",
        ),
        max_x = width - 1,
        max_y = height - 1,
    )
}

pub fn grid_schema(width: i64, height: i64) -> Schema {
    Schema::parse(&grid_schema_text(width, height)).expect("grid schema is well formed")
}

/// The wall rules: one deny per direction, everything else allowed. The
/// rules never mention the map, only the sensor bits, so one rule set
/// serves every grid size.
pub const GRID_RULES: &str = concat!(
    "# Deny any move into a cell the sensors report as blocked.\n",
    "DEFAULT ALLOW\n",
    "WHEN command = MOVE AND direction = up AND cell_up_passable = false THEN DENY \"blocked: up\"\n",
    "WHEN command = MOVE AND direction = down AND cell_down_passable = false THEN DENY \"blocked: down\"\n",
    "WHEN command = MOVE AND direction = left AND cell_left_passable = false THEN DENY \"blocked: left\"\n",
    "WHEN command = MOVE AND direction = right AND cell_right_passable = false THEN DENY \"blocked: right\"\n",
);

/// The world state the robot's sensors report at `pos`.
pub fn grid_state(schema: &Schema, map: &GridMap, pos: (i64, i64)) -> WorldState {
    let mut fields = BTreeMap::new();
    fields.insert("pos_x".to_string(), Value::Int(pos.0));
    fields.insert("pos_y".to_string(), Value::Int(pos.1));
    for dir in DIRECTIONS {
        fields.insert(
            format!("cell_{dir}_passable"),
            Value::Bool(map.passable(map.neighbor(pos, dir))),
        );
    }
    WorldState::new(schema, fields).expect("grid state matches grid schema")
}

pub fn move_command(schema: &Schema, dir: Direction) -> Command {
    let mut args = BTreeMap::new();
    args.insert(
        "direction".to_string(),
        Value::Enum(dir.as_str().to_string()),
    );
    Command::new(schema, "MOVE", args).expect("MOVE command matches grid schema")
}

/// Extracts the direction from a MOVE command.
pub fn command_direction(command: &Command) -> Option<Direction> {
    if command.kind() != "MOVE" {
        return None;
    }
    match command.get("direction") {
        Some(Value::Enum(s)) => Direction::from_str(s),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn generated_maps_are_solvable_and_deterministic() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let map = GridMap::generate(7, 7, 0.25, &mut rng);
            assert!(map.distances_to_goal()[map.index(map.start())].is_some());

            let mut rng2 = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(map, GridMap::generate(7, 7, 0.25, &mut rng2));
        }
    }

    #[test]
    fn border_is_impassable() {
        let map = GridMap::open(3, 3);
        assert!(!map.passable((-1, 0)));
        assert!(!map.passable((0, -1)));
        assert!(!map.passable((3, 0)));
        assert!(!map.passable((0, 3)));
        assert!(map.passable((1, 1)));
    }

    /// Independent check of the distance field on a hand-drawn map:
    ///
    /// ```text
    /// S . #
    /// # . #
    /// # . G
    /// ```
    #[test]
    fn bfs_distances_match_hand_computation() {
        let mut map = GridMap::open(3, 3);
        for &(x, y) in &[(2, 0), (0, 1), (2, 1), (0, 2)] {
            let i = map.index((x, y));
            map.passable[i] = false;
        }
        let dist = map.distances_to_goal();
        let at = |x: i64, y: i64| dist[map.index((x, y))];
        assert_eq!(at(2, 2), Some(0));
        assert_eq!(at(1, 2), Some(1));
        assert_eq!(at(1, 1), Some(2));
        assert_eq!(at(1, 0), Some(3));
        assert_eq!(at(0, 0), Some(4));
        assert_eq!(at(2, 0), None);
    }

    #[test]
    fn schema_counts_for_seven_by_seven() {
        let schema = grid_schema(7, 7);
        // 7 * 7 positions, 4 passability bits.
        assert_eq!(schema.state_space_size(), 49 * 16);
        // NOP plus MOVE in four directions.
        assert_eq!(schema.command_space_size(), 5);
    }

    #[test]
    fn rules_compile_against_every_size() {
        for size in 2..=9 {
            let schema = grid_schema(size, size);
            crate::dsl::parse(GRID_RULES, &schema).expect("grid rules are clean");
        }
    }

    #[test]
    fn state_reports_neighbor_passability() {
        let mut map = GridMap::open(3, 3);
        let i = map.index((1, 0));
        map.passable[i] = false;
        let schema = grid_schema(3, 3);
        let state = grid_state(&schema, &map, (1, 1));
        assert_eq!(state.get("cell_up_passable"), Some(&Value::Bool(false)));
        assert_eq!(state.get("cell_down_passable"), Some(&Value::Bool(true)));
        // At the corner, the border reads as blocked.
        let corner = grid_state(&schema, &map, (0, 0));
        assert_eq!(corner.get("cell_up_passable"), Some(&Value::Bool(false)));
        assert_eq!(corner.get("cell_left_passable"), Some(&Value::Bool(false)));
    }

    #[test]
    fn command_direction_round_trip() {
        let schema = grid_schema(3, 3);
        for dir in DIRECTIONS {
            let cmd = move_command(&schema, dir);
            assert_eq!(command_direction(&cmd), Some(dir));
        }
        assert_eq!(command_direction(&Command::nop()), None);
    }
}
