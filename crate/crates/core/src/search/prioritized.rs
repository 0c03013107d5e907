use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::grid::{Coord, GridMap, Instance};
use crate::validator::JointConfig;

use super::{bfs_distances, makespan_lower_bound, DistanceField, Plan, SearchError};

/// Vertex reservations left by already planned agents.
#[derive(Default)]
struct Reservations {
    timed: HashSet<(usize, usize)>,
    // cell -> time from which the cell is held forever (a parked agent)
    parked_from: HashMap<usize, usize>,
    // cell -> last time a moving agent occupies it
    last_use: HashMap<usize, usize>,
}

impl Reservations {
    fn occupied(&self, cell: usize, t: usize) -> bool {
        self.timed.contains(&(cell, t)) || self.parked_from.get(&cell).is_some_and(|&t0| t >= t0)
    }

    /// Parking on `cell` from `t` onward never blocks an earlier agent.
    fn can_park(&self, cell: usize, t: usize) -> bool {
        !self.parked_from.contains_key(&cell) && self.last_use.get(&cell).is_none_or(|&u| u < t)
    }

    fn add_path(&mut self, path: &[usize]) {
        let last = path.len() - 1;
        for (t, &cell) in path.iter().enumerate().take(last) {
            self.timed.insert((cell, t));
            let e = self.last_use.entry(cell).or_insert(t);
            *e = (*e).max(t);
        }
        self.parked_from.insert(path[last], last);
    }
}

/// Space-time A* for one agent. Returns cell indices for t = 0..=arrival.
fn space_time_astar(
    map: &GridMap,
    start: Coord,
    goal: Coord,
    h: &DistanceField,
    res: &Reservations,
    horizon: usize,
) -> Option<Vec<usize>> {
    let start_idx = map.index(start)?;
    let goal_idx = map.index(goal)?;
    if res.occupied(start_idx, 0) {
        return None;
    }
    // (f, Reverse(g)) min-heap; prefer deeper nodes on ties
    let mut open = BinaryHeap::new();
    let mut parent: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
    let mut closed: HashSet<(usize, usize)> = HashSet::new();
    open.push(Reverse((h.by_index(start_idx) as usize, Reverse(0usize), start_idx)));

    while let Some(Reverse((_, Reverse(t), cell))) = open.pop() {
        if !closed.insert((cell, t)) {
            continue;
        }
        if cell == goal_idx && res.can_park(cell, t) {
            let mut path = vec![cell];
            let mut cur = (cell, t);
            while let Some(&p) = parent.get(&cur) {
                path.push(p.0);
                cur = p;
            }
            path.reverse();
            return Some(path);
        }
        if t >= horizon {
            continue;
        }
        let c = map.coord_of(cell);
        let next = std::iter::once(c).chain(map.neighbors(c));
        for nb in next {
            let ni = map.index(nb).unwrap();
            let nt = t + 1;
            if res.occupied(ni, nt) || closed.contains(&(ni, nt)) {
                continue;
            }
            let hv = h.by_index(ni);
            if hv == DistanceField::UNREACHABLE {
                continue;
            }
            parent.entry((ni, nt)).or_insert((cell, t));
            open.push(Reverse((nt + hv as usize, Reverse(nt), ni)));
        }
    }
    None
}

/// Plans agents one at a time in `order` (1-based ids); earlier agents'
/// trajectories become vertex reservations and parked agents hold their goal.
pub fn prioritized_plan(inst: &Instance, order: &[usize]) -> Result<Plan, SearchError> {
    let n = inst.num_agents();
    let mut seen = vec![false; n];
    if order.len() != n || order.iter().any(|&a| a == 0 || a > n || std::mem::replace(&mut seen[a - 1], true)) {
        return Err(SearchError::BadOrder(n));
    }
    let map = inst.map();
    let lb = makespan_lower_bound(inst)?;
    let horizon = lb + map.cell_count();

    let mut res = Reservations::default();
    let mut paths: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &agent in order {
        let start = inst.starts()[agent - 1];
        let goal = inst.goals()[agent - 1];
        let h = bfs_distances(map, goal)?;
        let path = space_time_astar(map, start, goal, &h, &res, horizon)
            .ok_or(SearchError::NoPath { agent, horizon })?;
        res.add_path(&path);
        paths[agent - 1] = path;
    }

    let makespan = paths.iter().map(|p| p.len() - 1).max().unwrap_or(0);
    let steps = (0..=makespan)
        .map(|t| {
            JointConfig(
                paths
                    .iter()
                    .map(|p| map.coord_of(p[t.min(p.len() - 1)]))
                    .collect(),
            )
        })
        .collect();
    Ok(Plan { steps })
}

/// Agent-index order first, then up to `restarts` shuffled orders.
pub fn prioritized_plan_with_restarts(
    inst: &Instance,
    restarts: usize,
    seed: u64,
) -> Result<Plan, SearchError> {
    let mut order: Vec<usize> = (1..=inst.num_agents()).collect();
    let mut last_err = match prioritized_plan(inst, &order) {
        Ok(p) => return Ok(p),
        Err(e @ SearchError::NoPath { .. }) => e,
        Err(e) => return Err(e),
    };
    let mut rng = StdRng::seed_from_u64(seed);
    for _ in 0..restarts {
        order.shuffle(&mut rng);
        match prioritized_plan(inst, &order) {
            Ok(p) => return Ok(p),
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench_io::{parse_map, symmetry_instance};
    use crate::search::{joint_optimal, makespan_lower_bound};
    use crate::validator::check_plan;

    #[test]
    fn symmetry_instance_waits_once() {
        let inst = symmetry_instance();
        let plan = prioritized_plan(&inst, &[1, 2]).unwrap();
        assert_eq!(plan.makespan(), 5);
        assert_eq!(joint_optimal(&inst).unwrap(), 5);
        assert!(check_plan(&inst, &plan.steps).unwrap().solved());
    }

    #[test]
    fn single_agent_follows_shortest_path() {
        let m = parse_map("type octile\nheight 3\nwidth 4\nmap\n....\n.@@.\n....\n").unwrap();
        let inst = Instance::new(m, vec![Coord::new(0, 0)], vec![Coord::new(3, 2)]).unwrap();
        let plan = prioritized_plan(&inst, &[1]).unwrap();
        assert_eq!(plan.makespan(), makespan_lower_bound(&inst).unwrap());
    }

    #[test]
    fn disjoint_corridors_meet_lower_bound() {
        // two 6-long rows, one agent per row
        let m = GridMap::empty("c", 6, 2).unwrap();
        let c = Coord::new;
        let inst = Instance::new(m, vec![c(0, 0), c(5, 1)], vec![c(5, 0), c(0, 1)]).unwrap();
        let plan = prioritized_plan(&inst, &[1, 2]).unwrap();
        assert_eq!(plan.makespan(), 5);
        assert_eq!(joint_optimal(&inst).unwrap(), 5);
    }

    #[test]
    fn later_agent_leaves_earlier_agents_goal() {
        // agent 2 starts on agent 1's goal in a corridor with a side pocket
        let m = parse_map("type octile\nheight 2\nwidth 4\nmap\n..@@\n....\n").unwrap();
        let c = Coord::new;
        let inst = Instance::new(m, vec![c(0, 0), c(2, 0)], vec![c(2, 0), c(1, 1)]).unwrap();
        let plan = prioritized_plan(&inst, &[1, 2]).unwrap();
        assert!(check_plan(&inst, &plan.steps).unwrap().solved());
    }

    #[test]
    fn bad_order_rejected() {
        let inst = symmetry_instance();
        assert_eq!(prioritized_plan(&inst, &[1, 1]), Err(SearchError::BadOrder(2)));
        assert_eq!(prioritized_plan(&inst, &[1]), Err(SearchError::BadOrder(2)));
    }

    #[test]
    fn parked_agent_blocks_corridor_until_reordered() {
        // agent 1 parks mid-corridor before agent 2 can cross
        let m = GridMap::empty("c", 3, 1).unwrap();
        let c = Coord::new;
        let inst = Instance::new(m, vec![c(0, 0), c(2, 0)], vec![c(1, 0), c(0, 0)]).unwrap();
        assert!(matches!(
            prioritized_plan(&inst, &[1, 2]),
            Err(SearchError::NoPath { agent: 2, .. })
        ));
        let plan = prioritized_plan(&inst, &[2, 1]).unwrap();
        assert!(check_plan(&inst, &plan.steps).unwrap().solved());
        let plan = prioritized_plan_with_restarts(&inst, 8, 7).unwrap();
        assert!(check_plan(&inst, &plan.steps).unwrap().solved());
    }
}
