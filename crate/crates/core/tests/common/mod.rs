//! Independent reference implementations used by the integration tests.
//! Nothing here calls the solver or the reach predicates under test.
#![allow(dead_code)]

use std::collections::HashMap;

use lemma_core::alloc::{AllocationProblem, UtilityTerms, COST_PER_SECOND, QUALITY};
use lemma_core::scene::RobotSpec;
use rand::Rng;

/// Best assignment by plain enumeration of `{robot0, robot1, skip}^M`.
/// Ordering: larger utility, then shorter time, then the lexicographically
/// smallest assignment with skip sorting last.
pub fn enumerate_best(problem: &AllocationProblem, t_max: f64) -> (f64, f64, Vec<Option<usize>>) {
    let m = problem.ids.len();
    let mut best: Option<(f64, f64, Vec<Option<usize>>)> = None;
    let total = 3usize.pow(m as u32);
    for code in 0..total {
        let mut a = vec![None; m];
        let mut c = code;
        // most significant digit = sub-task 0 so codes ascend lexicographically
        for slot in a.iter_mut().rev() {
            *slot = match c % 3 {
                0 => Some(0),
                1 => Some(1),
                _ => None,
            };
            c /= 3;
        }
        let ok = (0..m).all(|k| match a[k] {
            None => true,
            Some(i) => problem.terms[k][i].u.is_finite() && problem.preds[k].iter().all(|&p| a[p].is_some()),
        });
        if !ok {
            continue;
        }
        let (mut u, mut t) = (0.0, 0.0);
        for (k, slot) in a.iter().enumerate() {
            if let Some(i) = slot {
                u += problem.terms[k][*i].u;
                t += problem.terms[k][*i].tau;
            }
        }
        if t > t_max {
            continue;
        }
        let better = match &best {
            None => true,
            // codes ascend, so on a full tie the earlier one stays
            Some((bu, bt, _)) => u > *bu || (u == *bu && t < *bt),
        };
        if better {
            best = Some((u, t, a));
        }
    }
    best.expect("the empty assignment is always admissible")
}

pub fn terms(tau: f64) -> UtilityTerms {
    let c = COST_PER_SECOND * tau;
    UtilityTerms { q: QUALITY, c, tau, u: QUALITY - c }
}

pub fn blocked(tau: f64) -> UtilityTerms {
    UtilityTerms { u: f64::NEG_INFINITY, ..terms(tau) }
}

/// Random DAG over `m` sub-tasks (edges only from lower to higher index),
/// random durations and a few infeasible cells.
pub fn random_problem(rng: &mut impl Rng, m: usize) -> AllocationProblem {
    let mut preds = vec![Vec::new(); m];
    for (k, p) in preds.iter_mut().enumerate() {
        for j in 0..k {
            if rng.gen_bool(0.3) {
                p.push(j);
            }
        }
    }
    let cell = |rng: &mut dyn rand::RngCore| {
        let tau = (rng.gen_range(400..4000) as f64) / 100.0;
        if rng.gen_bool(0.2) {
            blocked(tau)
        } else {
            terms(tau)
        }
    };
    let terms = (0..m).map(|_| [cell(rng), cell(rng)]).collect();
    AllocationProblem { ids: (1..=m as u32).collect(), preds, terms }
}

/// Problems where taking the locally best sub-task first starves the rest.
pub fn adversarial_suite() -> Vec<AllocationProblem> {
    vec![
        // one long task in front of two short independent ones
        AllocationProblem {
            ids: vec![1, 2, 3],
            preds: vec![vec![], vec![], vec![]],
            terms: vec![[terms(90.0), blocked(90.0)], [terms(40.0), blocked(40.0)], [blocked(40.0), terms(45.0)]],
        },
        // the cheap first step unlocks nothing; the long chain is worth more
        AllocationProblem {
            ids: vec![1, 2, 3, 4],
            preds: vec![vec![], vec![], vec![1], vec![2]],
            terms: vec![
                [terms(70.0), terms(75.0)],
                [terms(20.0), blocked(20.0)],
                [terms(20.0), terms(25.0)],
                [blocked(30.0), terms(30.0)],
            ],
        },
        // budget fits exactly the three shortest, greedy grabs the head first
        AllocationProblem {
            ids: vec![1, 2, 3, 4],
            preds: vec![vec![], vec![], vec![], vec![]],
            terms: vec![
                [terms(55.0), terms(60.0)],
                [terms(30.0), terms(35.0)],
                [terms(30.0), terms(32.0)],
                [terms(35.0), terms(30.0)],
            ],
        },
    ]
}

/// Reachability decided by scanning a sampled occupancy grid of the reach
/// disk instead of evaluating the disk inequality at the query point.
pub struct ReachScan {
    cell: f64,
    grids: HashMap<(u64, u64, u64), Grid>,
}

struct Grid {
    x0: f64,
    y0: f64,
    n: usize,
    bits: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    In,
    Out,
    /// Too close to the boundary for the grid resolution.
    Edge,
}

impl ReachScan {
    pub fn new(cell: f64) -> ReachScan {
        ReachScan { cell, grids: HashMap::new() }
    }

    fn grid(&mut self, robot: &RobotSpec) -> &Grid {
        let key = (robot.base.x.to_bits(), robot.base.y.to_bits(), robot.reach_radius.to_bits());
        let cell = self.cell;
        self.grids.entry(key).or_insert_with(|| {
            let r = robot.reach_radius;
            let n = (2.0 * r / cell).ceil() as usize + 2;
            let (x0, y0) = (robot.base.x - r - cell, robot.base.y - r - cell);
            let mut bits = vec![false; n * n];
            for j in 0..n {
                for i in 0..n {
                    let x = x0 + (i as f64 + 0.5) * cell - robot.base.x;
                    let y = y0 + (j as f64 + 0.5) * cell - robot.base.y;
                    bits[j * n + i] = x * x + y * y <= r * r;
                }
            }
            Grid { x0, y0, n, bits }
        })
    }

    fn lookup(&mut self, robot: &RobotSpec, x: f64, y: f64) -> bool {
        let cell = self.cell;
        let g = self.grid(robot);
        let i = ((x - g.x0) / cell).floor();
        let j = ((y - g.y0) / cell).floor();
        if i < 0.0 || j < 0.0 || i as usize >= g.n || j as usize >= g.n {
            return false;
        }
        g.bits[j as usize * g.n + i as usize]
    }

    /// Is the cell holding `(x, y)` inside the robot's sampled disk?
    pub fn reach(&mut self, robot: &RobotSpec, x: f64, y: f64) -> Verdict {
        let hit = self.lookup(robot, x, y);
        // a cell straddling the rim can go either way
        let rim = self.cell * std::f64::consts::SQRT_2;
        let inside_neighbours = [(-rim, 0.0), (rim, 0.0), (0.0, -rim), (0.0, rim)]
            .iter()
            .filter(|(dx, dy)| self.lookup(robot, x + dx, y + dy))
            .count();
        match (hit, inside_neighbours) {
            (true, 4) => Verdict::In,
            (false, 0) => Verdict::Out,
            _ => Verdict::Edge,
        }
    }

    /// Can some sampled grip pose put the tip of a tool with arm `arm` on
    /// `(x, y)`? Sweeps the approach direction in half-degree steps.
    pub fn tool_reach(&mut self, robot: &RobotSpec, arm: f64, x: f64, y: f64) -> Verdict {
        let mut hits = 0;
        let mut strict = 0;
        for k in 0..720 {
            let a = (k as f64) * std::f64::consts::PI / 360.0;
            let (gx, gy) = (x - arm * a.cos(), y - arm * a.sin());
            match self.reach(robot, gx, gy) {
                Verdict::In => {
                    hits += 1;
                    strict += 1;
                }
                Verdict::Edge => hits += 1,
                Verdict::Out => {}
            }
        }
        if strict > 0 {
            Verdict::In
        } else if hits == 0 {
            Verdict::Out
        } else {
            Verdict::Edge
        }
    }
}
