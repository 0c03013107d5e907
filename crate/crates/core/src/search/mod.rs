//! Classic-search oracles: distance fields, the makespan lower bound,
//! prioritized space-time A* and exact joint-state search for tiny instances.

mod joint;
mod plan_io;
mod prioritized;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Coord, GridMap, Instance};
use crate::validator::JointConfig;

pub use joint::{joint_optimal, JOINT_MAX_AGENTS, JOINT_MAX_CELLS};
pub use plan_io::{parse_plan, render_plan, PlanFormatError};
pub use prioritized::{prioritized_plan, prioritized_plan_with_restarts};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SearchError {
    #[error("source cell {0} is blocked")]
    BlockedSource(Coord),
    #[error("agent {agent} cannot reach its goal")]
    Unreachable { agent: usize },
    #[error("goal configuration is not reachable jointly")]
    JointlyUnreachable,
    #[error("no path for agent {agent} within horizon {horizon}")]
    NoPath { agent: usize, horizon: usize },
    #[error("instance too large for exact search ({agents} agents, {cells} cells)")]
    TooLarge { agents: usize, cells: usize },
    #[error("priority order must be a permutation of 1..={0}")]
    BadOrder(usize),
}

/// Shortest 4-connected distances from a source set.
#[derive(Debug, Clone)]
pub struct DistanceField {
    width: usize,
    height: usize,
    dist: Vec<u32>,
}

impl DistanceField {
    pub const UNREACHABLE: u32 = u32::MAX;

    pub fn get(&self, c: Coord) -> u32 {
        if c.x < 0 || c.y < 0 || c.x as usize >= self.width || c.y as usize >= self.height {
            return Self::UNREACHABLE;
        }
        self.dist[c.y as usize * self.width + c.x as usize]
    }

    pub fn reachable(&self, c: Coord) -> bool {
        self.get(c) != Self::UNREACHABLE
    }

    pub(crate) fn by_index(&self, idx: usize) -> u32 {
        self.dist[idx]
    }
}

pub fn bfs_distances(map: &GridMap, source: Coord) -> Result<DistanceField, SearchError> {
    bfs_from_sources(map, &[source])
}

pub fn bfs_from_sources(map: &GridMap, sources: &[Coord]) -> Result<DistanceField, SearchError> {
    let mut dist = vec![DistanceField::UNREACHABLE; map.cell_count()];
    let mut queue = VecDeque::new();
    for &s in sources {
        let idx = map
            .index(s)
            .filter(|_| map.is_free(s))
            .ok_or(SearchError::BlockedSource(s))?;
        dist[idx] = 0;
        queue.push_back(s);
    }
    while let Some(c) = queue.pop_front() {
        let d = dist[map.index(c).unwrap()];
        for nb in map.neighbors(c) {
            let i = map.index(nb).unwrap();
            if dist[i] == DistanceField::UNREACHABLE {
                dist[i] = d + 1;
                queue.push_back(nb);
            }
        }
    }
    Ok(DistanceField {
        width: map.width(),
        height: map.height(),
        dist,
    })
}

/// Per-agent shortest-path lengths.
pub fn single_agent_distances(inst: &Instance) -> Result<Vec<usize>, SearchError> {
    inst.goals()
        .iter()
        .zip(inst.starts())
        .enumerate()
        .map(|(i, (&g, &s))| {
            let field = bfs_distances(inst.map(), g)?;
            field
                .reachable(s)
                .then(|| field.get(s) as usize)
                .ok_or(SearchError::Unreachable { agent: i + 1 })
        })
        .collect()
}

/// Maximum over agents of the single-agent shortest-path length.
pub fn makespan_lower_bound(inst: &Instance) -> Result<usize, SearchError> {
    Ok(single_agent_distances(inst)?.into_iter().max().unwrap_or(0))
}

/// Sequence of joint configurations, step 0 being the starts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub steps: Vec<JointConfig>,
}

impl Plan {
    pub fn makespan(&self) -> usize {
        self.steps.len().saturating_sub(1)
    }

    /// Trajectory of one agent (1-based id).
    pub fn trajectory(&self, agent: usize) -> Vec<Coord> {
        self.steps.iter().map(|c| c.agent(agent)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSource {
    JointOptimal,
    LowerBound,
}

/// Makespan used as "the optimal plan" by the failure criteria.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimalReference {
    pub makespan: usize,
    pub source: ReferenceSource,
}

/// Exact joint optimum when the instance passes the size guard, else the
/// single-agent lower bound.
pub fn optimal_reference(inst: &Instance) -> Result<OptimalReference, SearchError> {
    match joint_optimal(inst) {
        Ok(makespan) => Ok(OptimalReference {
            makespan,
            source: ReferenceSource::JointOptimal,
        }),
        Err(SearchError::TooLarge { .. }) => Ok(OptimalReference {
            makespan: makespan_lower_bound(inst)?,
            source: ReferenceSource::LowerBound,
        }),
        Err(e) => Err(e),
    }
}
