//! Rule-based step and plan checker.
//!
//! Only vertex conflicts count as agent-agent collisions: two agents may
//! swap cells in one step. Obstacle hits, out-of-map cells and
//! non-adjacent jumps are reported separately.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Coord, GridMap, Instance};

/// Positions of all agents at one timestep; index `i` is agent `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointConfig(pub Vec<Coord>);

impl JointConfig {
    pub fn new(positions: Vec<Coord>) -> Self {
        Self(positions)
    }

    pub fn positions(&self) -> &[Coord] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn agent(&self, id: usize) -> Coord {
        self.0[id - 1]
    }
}

impl From<Vec<Coord>> for JointConfig {
    fn from(v: Vec<Coord>) -> Self {
        Self(v)
    }
}

impl From<&[Coord]> for JointConfig {
    fn from(v: &[Coord]) -> Self {
        Self(v.to_vec())
    }
}

/// Agent ids are 1-based throughout.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Violation {
    OutOfBounds { agent: usize, cell: Coord },
    IllegalMove { agent: usize, from: Coord, to: Coord },
    ObstacleCollision { agents: Vec<usize> },
    VertexConflict { agents: Vec<usize>, cell: Coord },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OutOfBounds { agent, cell } => {
                write!(f, "agent {agent} leaves the map at {cell}")
            }
            Violation::IllegalMove { agent, from, to } => {
                write!(f, "agent {agent} jumps from {from} to {to}")
            }
            Violation::ObstacleCollision { agents } => {
                write!(f, "agents {} hit obstacles", join_ids(agents))
            }
            Violation::VertexConflict { agents, cell } => {
                write!(f, "agents {} collide at {cell}", join_ids(agents))
            }
        }
    }
}

pub(crate) fn join_ids(ids: &[usize]) -> String {
    ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn vertex_conflicts(&self) -> impl Iterator<Item = (&[usize], Coord)> {
        self.violations.iter().filter_map(|v| match v {
            Violation::VertexConflict { agents, cell } => Some((agents.as_slice(), *cell)),
            _ => None,
        })
    }

    pub fn obstacle_agents(&self) -> Vec<usize> {
        self.violations
            .iter()
            .filter_map(|v| match v {
                Violation::ObstacleCollision { agents } => Some(agents.clone()),
                _ => None,
            })
            .flatten()
            .collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ValidateError {
    #[error("configuration has {got} agents, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("plan is empty")]
    EmptyPlan,
    #[error("plan does not start at the instance start positions")]
    StartMismatch,
}

/// Checks one joint move `current -> proposed`.
pub fn check_step(
    map: &GridMap,
    current: &JointConfig,
    proposed: &JointConfig,
) -> Result<ValidationReport, ValidateError> {
    if current.len() != proposed.len() {
        return Err(ValidateError::LengthMismatch {
            expected: current.len(),
            got: proposed.len(),
        });
    }
    let mut out_of_bounds = Vec::new();
    let mut illegal = Vec::new();
    let mut on_obstacle = Vec::new();
    let mut by_cell: BTreeMap<Coord, Vec<usize>> = BTreeMap::new();

    for (i, (&from, &to)) in current.0.iter().zip(&proposed.0).enumerate() {
        let agent = i + 1;
        if !map.in_bounds(to) {
            out_of_bounds.push(Violation::OutOfBounds { agent, cell: to });
        }
        if !from.is_adjacent_or_same(to) {
            illegal.push(Violation::IllegalMove { agent, from, to });
        }
        if map.is_obstacle(to) {
            on_obstacle.push(agent);
        }
        by_cell.entry(to).or_default().push(agent);
    }

    let mut conflicts: Vec<Violation> = by_cell
        .into_iter()
        .filter(|(_, agents)| agents.len() >= 2)
        .map(|(cell, agents)| Violation::VertexConflict { agents, cell })
        .collect();
    conflicts.sort_by_key(|v| match v {
        Violation::VertexConflict { agents, .. } => agents[0],
        _ => unreachable!(),
    });

    let mut violations = out_of_bounds;
    violations.extend(illegal);
    if !on_obstacle.is_empty() {
        violations.push(Violation::ObstacleCollision {
            agents: on_obstacle,
        });
    }
    violations.extend(conflicts);
    Ok(ValidationReport { violations })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepReport {
    /// Index of the proposed configuration in the plan (1-based timestep).
    pub step: usize,
    pub report: ValidationReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanReport {
    /// Only the steps that have violations.
    pub failing_steps: Vec<StepReport>,
    pub reaches_goals: bool,
    /// Earliest timestep from which every agent stays on its goal.
    pub makespan: Option<usize>,
}

impl PlanReport {
    /// No violations anywhere in the plan.
    pub fn valid(&self) -> bool {
        self.failing_steps.is_empty()
    }

    /// Valid and ends with every agent on its goal.
    pub fn solved(&self) -> bool {
        self.valid() && self.reaches_goals
    }

    pub fn first_failure(&self) -> Option<&StepReport> {
        self.failing_steps.first()
    }

    pub fn summary(&self) -> ValidationReport {
        ValidationReport {
            violations: self
                .failing_steps
                .iter()
                .flat_map(|s| s.report.violations.iter().cloned())
                .collect(),
        }
    }
}

/// Checks every consecutive pair of a plan whose step 0 is the start configuration.
pub fn check_plan(inst: &Instance, plan: &[JointConfig]) -> Result<PlanReport, ValidateError> {
    let first = plan.first().ok_or(ValidateError::EmptyPlan)?;
    let n = inst.num_agents();
    if let Some(bad) = plan.iter().find(|c| c.len() != n) {
        return Err(ValidateError::LengthMismatch {
            expected: n,
            got: bad.len(),
        });
    }
    if first.positions() != inst.starts() {
        return Err(ValidateError::StartMismatch);
    }
    let mut failing_steps = Vec::new();
    for (t, pair) in plan.windows(2).enumerate() {
        let report = check_step(inst.map(), &pair[0], &pair[1])?;
        if !report.valid() {
            failing_steps.push(StepReport { step: t + 1, report });
        }
    }
    let reaches_goals = inst.at_goals(plan.last().unwrap().positions());
    let makespan = reaches_goals.then(|| {
        plan.iter()
            .rposition(|c| !inst.at_goals(c.positions()))
            .map_or(0, |p| p + 1)
    });
    Ok(PlanReport {
        failing_steps,
        reaches_goals,
        makespan,
    })
}
