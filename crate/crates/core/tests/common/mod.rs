//! A deliberately naive step checker and a random step generator, shared by
//! the checker equivalence tests.

use std::collections::HashSet;

use mapf_llm::validator::{JointConfig, Violation};
use mapf_llm::{Coord, GridMap};
use rand::Rng;

pub struct StepCase {
    pub map: GridMap,
    /// `blocked[x][y]`
    pub blocked: Vec<Vec<bool>>,
    pub current: JointConfig,
    pub proposed: JointConfig,
}

/// Maps up to 8x8, obstacle density up to 30%, 1-4 agents; proposals are
/// mostly unit moves, sometimes jumps, off-map cells or copies of another
/// agent's proposal (to force collisions).
pub fn random_case(rng: &mut impl Rng) -> StepCase {
    let (w, h) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
    let density = rng.gen_range(0.0..=0.3);
    let blocked: Vec<Vec<bool>> = (0..w).map(|_| (0..h).map(|_| rng.gen_bool(density)).collect()).collect();
    let obstacles = (0..w)
        .flat_map(|x| (0..h).map(move |y| (x, y)))
        .filter(|&(x, y)| blocked[x][y])
        .map(|(x, y)| Coord::new(x as i32, y as i32));
    let map = GridMap::new("rand", w, h, obstacles).unwrap();
    let n = rng.gen_range(1..=4);
    let current: Vec<Coord> = (0..n)
        .map(|_| Coord::new(rng.gen_range(0..w as i32), rng.gen_range(0..h as i32)))
        .collect();
    let mut proposed: Vec<Coord> = Vec::with_capacity(n);
    for (i, c) in current.iter().enumerate() {
        let p = match rng.gen_range(0..10) {
            0 => Coord::new(rng.gen_range(-2..w as i32 + 2), rng.gen_range(-2..h as i32 + 2)),
            1 | 2 if i > 0 => proposed[rng.gen_range(0..i)],
            _ => {
                let (dx, dy) = [(0, 0), (-1, 0), (1, 0), (0, 1), (0, -1)][rng.gen_range(0..5)];
                Coord::new(c.x + dx, c.y + dy)
            }
        };
        proposed.push(p);
    }
    StepCase { map, blocked, current: JointConfig(current), proposed: JointConfig(proposed) }
}

pub fn brute_check(case: &StepCase) -> Vec<Violation> {
    let w = case.blocked.len() as i32;
    let h = case.blocked[0].len() as i32;
    let cur = case.current.positions();
    let prop = case.proposed.positions();
    let inside = |c: Coord| c.x >= 0 && c.y >= 0 && c.x < w && c.y < h;
    let mut out = Vec::new();
    for i in 0..prop.len() {
        let (from, to) = (cur[i], prop[i]);
        if !inside(to) {
            out.push(Violation::OutOfBounds { agent: i + 1, cell: to });
        }
        if (to.x - from.x).abs() + (to.y - from.y).abs() > 1 {
            out.push(Violation::IllegalMove { agent: i + 1, from, to });
        }
    }
    let on_obstacle: Vec<usize> = (0..prop.len())
        .filter(|&i| inside(prop[i]) && case.blocked[prop[i].x as usize][prop[i].y as usize])
        .map(|i| i + 1)
        .collect();
    if !on_obstacle.is_empty() {
        out.push(Violation::ObstacleCollision { agents: on_obstacle });
    }
    for i in 0..prop.len() {
        let group: Vec<usize> = (0..prop.len()).filter(|&j| prop[j] == prop[i]).map(|j| j + 1).collect();
        if group.len() >= 2 && group[0] == i + 1 {
            out.push(Violation::VertexConflict { agents: group, cell: prop[i] });
        }
    }
    out
}

pub fn as_set(v: &[Violation]) -> HashSet<Violation> {
    v.iter().cloned().collect()
}
