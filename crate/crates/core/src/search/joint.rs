use std::collections::VecDeque;

use crate::grid::Instance;

use super::{makespan_lower_bound, SearchError};

pub const JOINT_MAX_AGENTS: usize = 3;
pub const JOINT_MAX_CELLS: usize = 64;

/// Exact minimum makespan by breadth-first search over joint
/// configurations (vertex conflicts only, swaps allowed).
pub fn joint_optimal(inst: &Instance) -> Result<usize, SearchError> {
    let map = inst.map();
    let n = inst.num_agents();
    let cells = map.cell_count();
    if n > JOINT_MAX_AGENTS || cells > JOINT_MAX_CELLS {
        return Err(SearchError::TooLarge { agents: n, cells });
    }
    // fails fast on unreachable goals
    makespan_lower_bound(inst)?;

    let encode = |state: &[usize]| state.iter().rev().fold(0usize, |acc, &c| acc * cells + c);
    let start: Vec<usize> = inst.starts().iter().map(|&c| map.index(c).unwrap()).collect();
    let goal: Vec<usize> = inst.goals().iter().map(|&c| map.index(c).unwrap()).collect();
    if start == goal {
        return Ok(0);
    }
    // stay + free neighbours per cell
    let moves: Vec<Vec<usize>> = (0..cells)
        .map(|i| {
            let c = map.coord_of(i);
            if !map.is_free(c) {
                return Vec::new();
            }
            std::iter::once(i)
                .chain(map.neighbors(c).map(|nb| map.index(nb).unwrap()))
                .collect()
        })
        .collect();

    let mut depth = vec![u32::MAX; cells.pow(n as u32)];
    depth[encode(&start)] = 0;
    let goal_code = encode(&goal);
    let mut queue = VecDeque::from([start]);
    let mut next = vec![0usize; n];
    while let Some(state) = queue.pop_front() {
        let d = depth[encode(&state)];
        // odometer over the product of per-agent moves
        let mut choice = vec![0usize; n];
        'product: loop {
            for a in 0..n {
                next[a] = moves[state[a]][choice[a]];
            }
            let distinct = (0..n).all(|a| (a + 1..n).all(|b| next[a] != next[b]));
            if distinct {
                let code = encode(&next);
                if depth[code] == u32::MAX {
                    depth[code] = d + 1;
                    if code == goal_code {
                        return Ok(d as usize + 1);
                    }
                    queue.push_back(next.clone());
                }
            }
            let mut a = 0;
            loop {
                if a == n {
                    break 'product;
                }
                choice[a] += 1;
                if choice[a] < moves[state[a]].len() {
                    break;
                }
                choice[a] = 0;
                a += 1;
            }
        }
    }
    Err(SearchError::JointlyUnreachable)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench_io::symmetry_instance;
    use crate::grid::{Coord, GridMap};

    #[test]
    fn symmetry_instance_needs_five() {
        assert_eq!(joint_optimal(&symmetry_instance()).unwrap(), 5);
    }

    #[test]
    fn without_agent_two_equals_bfs() {
        let inst = symmetry_instance().subset(&[1]).unwrap();
        assert_eq!(joint_optimal(&inst).unwrap(), 4);
    }

    #[test]
    fn already_at_goals() {
        let m = GridMap::empty("e", 3, 3).unwrap();
        let c = Coord::new;
        let inst = Instance::new(m, vec![c(0, 0), c(1, 1)], vec![c(0, 0), c(1, 1)]).unwrap();
        assert_eq!(joint_optimal(&inst).unwrap(), 0);
    }

    #[test]
    fn size_guard() {
        let m = GridMap::empty("e", 9, 8).unwrap();
        let inst = Instance::new(m, vec![Coord::new(0, 0)], vec![Coord::new(1, 0)]).unwrap();
        assert_eq!(
            joint_optimal(&inst),
            Err(SearchError::TooLarge { agents: 1, cells: 72 })
        );
        let m = GridMap::empty("e", 4, 4).unwrap();
        let c = Coord::new;
        let inst = Instance::new(
            m,
            vec![c(0, 0), c(1, 0), c(2, 0), c(3, 0)],
            vec![c(0, 1), c(1, 1), c(2, 1), c(3, 1)],
        )
        .unwrap();
        assert!(matches!(joint_optimal(&inst), Err(SearchError::TooLarge { agents: 4, .. })));
    }

    #[test]
    fn swap_in_two_cell_corridor() {
        let m = GridMap::empty("e", 2, 1).unwrap();
        let c = Coord::new;
        let inst = Instance::new(m, vec![c(0, 0), c(1, 0)], vec![c(1, 0), c(0, 0)]).unwrap();
        assert_eq!(joint_optimal(&inst).unwrap(), 1);
    }
}
