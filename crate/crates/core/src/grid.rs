//! Four-connected grid world: cells, moves and MAPF instances.
//!
//! Coordinates are `(x, y)` with the origin in the bottom-left corner; `x`
//! grows rightward and `y` grows upward. File formats that store rows top
//! down are converted in [`crate::bench_io`] and nowhere else.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coord {
    pub x: i32,
    pub y: i32,
}

impl Coord {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn manhattan(self, other: Coord) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }

    /// True when `other` is this cell or one of its four neighbours.
    pub fn is_adjacent_or_same(self, other: Coord) -> bool {
        self.manhattan(other) <= 1
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

impl From<(i32, i32)> for Coord {
    fn from((x, y): (i32, i32)) -> Self {
        Coord::new(x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Stay,
    Left,
    Right,
    Up,
    Down,
}

impl Action {
    /// Canonical order used for observation listings.
    pub const ALL: [Action; 5] = [
        Action::Stay,
        Action::Left,
        Action::Right,
        Action::Up,
        Action::Down,
    ];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Action::Stay => (0, 0),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
            Action::Up => (0, 1),
            Action::Down => (0, -1),
        }
    }

    pub fn opposite(self) -> Action {
        match self {
            Action::Stay => Action::Stay,
            Action::Left => Action::Right,
            Action::Right => Action::Left,
            Action::Up => Action::Down,
            Action::Down => Action::Up,
        }
    }

    /// Lower-case word used in observation lines ("left", "up", ...).
    pub fn word(self) -> &'static str {
        match self {
            Action::Stay => "stay",
            Action::Left => "left",
            Action::Right => "right",
            Action::Up => "up",
            Action::Down => "down",
        }
    }
}

/// Moves `c` one cell in the direction of `a`. No bounds check.
pub fn apply_action(c: Coord, a: Action) -> Coord {
    let (dx, dy) = a.delta();
    Coord::new(c.x + dx, c.y + dy)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("map dimensions must be at least 1x1, got {width}x{height}")]
    EmptyMap { width: usize, height: usize },
    #[error("obstacle {0} lies outside the map")]
    ObstacleOutOfBounds(Coord),
    #[error("cell {0} is blocked or outside the map")]
    BlockedCell(Coord),
    #[error("instance needs at least one agent")]
    NoAgents,
    #[error("{starts} starts but {goals} goals")]
    CountMismatch { starts: usize, goals: usize },
    #[error("agent {agent}: {what} {cell} is blocked or outside the map")]
    AgentOnBlockedCell {
        agent: usize,
        what: &'static str,
        cell: Coord,
    },
    #[error("agents {first} and {second} share the {what} cell {cell}")]
    SharedCell {
        first: usize,
        second: usize,
        what: &'static str,
        cell: Coord,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridMap {
    name: String,
    width: usize,
    height: usize,
    // Row-major from the bottom row, `true` = obstacle.
    blocked: Vec<bool>,
}

impl GridMap {
    pub fn new(
        name: impl Into<String>,
        width: usize,
        height: usize,
        obstacles: impl IntoIterator<Item = Coord>,
    ) -> Result<Self, GridError> {
        if width == 0 || height == 0 {
            return Err(GridError::EmptyMap { width, height });
        }
        let mut map = GridMap {
            name: name.into(),
            width,
            height,
            blocked: vec![false; width * height],
        };
        for c in obstacles {
            let idx = map.index(c).ok_or(GridError::ObstacleOutOfBounds(c))?;
            map.blocked[idx] = true;
        }
        Ok(map)
    }

    pub fn empty(name: impl Into<String>, width: usize, height: usize) -> Result<Self, GridError> {
        Self::new(name, width, height, std::iter::empty())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    pub fn in_bounds(&self, c: Coord) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as usize) < self.width && (c.y as usize) < self.height
    }

    /// Dense index of an in-bounds cell.
    pub fn index(&self, c: Coord) -> Option<usize> {
        self.in_bounds(c)
            .then(|| c.y as usize * self.width + c.x as usize)
    }

    pub fn coord_of(&self, idx: usize) -> Coord {
        Coord::new((idx % self.width) as i32, (idx / self.width) as i32)
    }

    pub fn is_obstacle(&self, c: Coord) -> bool {
        self.index(c).is_some_and(|i| self.blocked[i])
    }

    pub fn is_free(&self, c: Coord) -> bool {
        self.index(c).is_some_and(|i| !self.blocked[i])
    }

    /// Obstacles sorted by ascending `y`, then `x`.
    pub fn obstacles(&self) -> Vec<Coord> {
        self.blocked
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| self.coord_of(i))
            .collect()
    }

    pub fn obstacle_count(&self) -> usize {
        self.blocked.iter().filter(|&&b| b).count()
    }

    pub fn free_cells(&self) -> impl Iterator<Item = Coord> + '_ {
        (0..self.cell_count())
            .filter(|&i| !self.blocked[i])
            .map(|i| self.coord_of(i))
    }

    /// Actions whose target cell is free, in canonical order. Other agents
    /// are not considered.
    pub fn valid_actions(&self, c: Coord) -> Result<Vec<(Action, Coord)>, GridError> {
        if !self.is_free(c) {
            return Err(GridError::BlockedCell(c));
        }
        Ok(Action::ALL
            .iter()
            .map(|&a| (a, apply_action(c, a)))
            .filter(|&(_, t)| self.is_free(t))
            .collect())
    }

    /// Free 4-neighbours of `c` (excluding `c`).
    pub fn neighbors(&self, c: Coord) -> impl Iterator<Item = Coord> + '_ {
        Action::ALL[1..]
            .iter()
            .map(move |&a| apply_action(c, a))
            .filter(|&t| self.is_free(t))
    }
}

pub fn is_free(m: &GridMap, c: Coord) -> bool {
    m.is_free(c)
}

pub fn valid_actions(m: &GridMap, c: Coord) -> Result<Vec<(Action, Coord)>, GridError> {
    m.valid_actions(c)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    map: GridMap,
    starts: Vec<Coord>,
    goals: Vec<Coord>,
}

impl Instance {
    pub fn new(map: GridMap, starts: Vec<Coord>, goals: Vec<Coord>) -> Result<Self, GridError> {
        if starts.len() != goals.len() {
            return Err(GridError::CountMismatch {
                starts: starts.len(),
                goals: goals.len(),
            });
        }
        if starts.is_empty() {
            return Err(GridError::NoAgents);
        }
        for (what, cells) in [("start", &starts), ("goal", &goals)] {
            for (i, &c) in cells.iter().enumerate() {
                if !map.is_free(c) {
                    return Err(GridError::AgentOnBlockedCell {
                        agent: i + 1,
                        what,
                        cell: c,
                    });
                }
            }
            let mut seen = std::collections::HashMap::new();
            for (i, &c) in cells.iter().enumerate() {
                if let Some(prev) = seen.insert(c, i + 1) {
                    return Err(GridError::SharedCell {
                        first: prev,
                        second: i + 1,
                        what,
                        cell: c,
                    });
                }
            }
        }
        Ok(Instance { map, starts, goals })
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn starts(&self) -> &[Coord] {
        &self.starts
    }

    pub fn goals(&self) -> &[Coord] {
        &self.goals
    }

    pub fn num_agents(&self) -> usize {
        self.starts.len()
    }

    /// Same map and goals, agents relocated to `starts`.
    pub fn with_starts(&self, starts: Vec<Coord>) -> Result<Instance, GridError> {
        Instance::new(self.map.clone(), starts, self.goals.clone())
    }

    /// Keeps only the agents whose (1-based) ids are listed.
    pub fn subset(&self, agent_ids: &[usize]) -> Result<Instance, GridError> {
        let starts = agent_ids.iter().map(|&i| self.starts[i - 1]).collect();
        let goals = agent_ids.iter().map(|&i| self.goals[i - 1]).collect();
        Instance::new(self.map.clone(), starts, goals)
    }

    pub fn at_goals(&self, positions: &[Coord]) -> bool {
        positions == self.goals.as_slice()
    }
}

/// Distinct cells among a set of positions; handy for conflict checks.
pub fn distinct_cells(positions: &[Coord]) -> BTreeSet<Coord> {
    positions.iter().copied().collect()
}
