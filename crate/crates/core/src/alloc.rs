//! Sub-task allocation under a summed time budget.
//!
//! Each robot/sub-task pair gets a utility `u = q - c` when the robot can
//! execute the sub-task and `-inf` otherwise. An allocation picks at most one
//! robot per sub-task, keeps the summed durations within `t_max`, and may
//! leave sub-tasks unassigned as long as every assigned sub-task has all of
//! its predecessors assigned. `solve_exact` maximizes the summed utility by
//! branch and bound; `solve_greedy` is a single topological pass.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entity::{action_feasible, resolve_action, EntityRef, ResolveError};
use crate::scene::{RobotId, RobotSpec, SceneState};
use crate::sim::{self, Primitive, PrimitiveAction};
use crate::world::World;

/// Quality of completing any sub-task.
pub const QUALITY: f64 = 1.0;
/// Cost per second of execution time.
pub const COST_PER_SECOND: f64 = 0.001;
/// Largest DAG `solve_exact` accepts.
pub const MAX_EXACT_SUBTASKS: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubTask {
    pub id: u32,
    pub primitive: Primitive,
    pub pick: EntityRef,
    pub place: EntityRef,
    pub depends_on: BTreeSet<u32>,
}

impl SubTask {
    pub fn new(id: u32, primitive: Primitive, pick: EntityRef, place: EntityRef, deps: &[u32]) -> SubTask {
        SubTask {
            id,
            primitive,
            pick,
            place,
            depends_on: deps.iter().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AllocError {
    #[error("sub-task graph has a cycle")]
    Cycle,
    #[error("sub-task {0} depends on unknown sub-task {1}")]
    DanglingEdge(u32, u32),
    #[error("duplicate sub-task id {0}")]
    DuplicateId(u32),
    #[error("expected exactly two robots, found {0}")]
    RobotCount(usize),
    #[error("{0} sub-tasks exceed the exact solver limit of {MAX_EXACT_SUBTASKS}")]
    TooLarge(usize),
    #[error(transparent)]
    Resolve(#[from] ResolveError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubTaskDag {
    pub tasks: Vec<SubTask>,
    /// `(before, after)` pairs, derived from `depends_on`.
    pub edges: Vec<(u32, u32)>,
}

impl SubTaskDag {
    pub fn new(tasks: Vec<SubTask>) -> Result<SubTaskDag, AllocError> {
        let mut seen = BTreeSet::new();
        for t in &tasks {
            if !seen.insert(t.id) {
                return Err(AllocError::DuplicateId(t.id));
            }
        }
        let mut edges = Vec::new();
        for t in &tasks {
            for &d in &t.depends_on {
                if !seen.contains(&d) {
                    return Err(AllocError::DanglingEdge(t.id, d));
                }
                edges.push((d, t.id));
            }
        }
        let dag = SubTaskDag { tasks, edges };
        dag.topological_order()?;
        Ok(dag)
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.tasks.iter().position(|t| t.id == id)
    }

    /// Predecessor indices for each task index.
    pub fn predecessors(&self) -> Vec<Vec<usize>> {
        self.tasks
            .iter()
            .map(|t| t.depends_on.iter().filter_map(|d| self.index_of(*d)).collect())
            .collect()
    }

    /// Kahn's algorithm, smallest id first among ready tasks.
    pub fn topological_order(&self) -> Result<Vec<usize>, AllocError> {
        topo_order(&self.predecessors(), &self.tasks.iter().map(|t| t.id).collect::<Vec<_>>(), |_| true)
            .ok_or(AllocError::Cycle)
    }
}

/// Kahn order over the tasks accepted by `keep`, smallest id first. `None`
/// on a cycle among kept tasks.
fn topo_order(preds: &[Vec<usize>], ids: &[u32], keep: impl Fn(usize) -> bool) -> Option<Vec<usize>> {
    let n = preds.len();
    let kept: Vec<usize> = (0..n).filter(|&i| keep(i)).collect();
    let mut done = vec![false; n];
    let mut order = Vec::with_capacity(kept.len());
    while order.len() < kept.len() {
        let next = kept
            .iter()
            .copied()
            .filter(|&i| !done[i] && preds[i].iter().all(|&p| done[p] || !keep(p)))
            .min_by_key(|&i| ids[i])?;
        done[next] = true;
        order.push(next);
    }
    Some(order)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityTerms {
    pub q: f64,
    pub c: f64,
    pub tau: f64,
    pub u: f64,
}

impl UtilityTerms {
    pub fn infeasible(tau: f64) -> UtilityTerms {
        UtilityTerms {
            q: QUALITY,
            c: COST_PER_SECOND * tau,
            tau,
            u: f64::NEG_INFINITY,
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.u.is_finite()
    }
}

fn terms_for(world: &World, scene: &SceneState, action: &PrimitiveAction) -> UtilityTerms {
    let tau = match scene.robot(action.robot) {
        Some(r) if action.primitive != Primitive::Stop => sim::duration(world, r, &action.t_pick, &action.t_place),
        _ => 0.0,
    };
    if !action_feasible(world, scene, action) {
        return UtilityTerms::infeasible(tau);
    }
    let c = COST_PER_SECOND * tau;
    UtilityTerms {
        q: QUALITY,
        c,
        tau,
        u: QUALITY - c,
    }
}

/// Whether `robot` can execute `sub` on `scene` as it stands.
pub fn feasible(world: &World, robot: &RobotSpec, sub: &SubTask, scene: &SceneState) -> Result<bool, AllocError> {
    let action = resolve_action(world, scene, robot.id, sub.primitive, &sub.pick, &sub.place)?;
    Ok(action_feasible(world, scene, &action))
}

pub fn utility(world: &World, robot: &RobotSpec, sub: &SubTask, scene: &SceneState) -> Result<UtilityTerms, AllocError> {
    let action = resolve_action(world, scene, robot.id, sub.primitive, &sub.pick, &sub.place)?;
    Ok(terms_for(world, scene, &action))
}

/// The numeric allocation problem: per-sub-task utility terms for both
/// robots plus precedence.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationProblem {
    pub ids: Vec<u32>,
    pub preds: Vec<Vec<usize>>,
    /// `terms[m][i]` for sub-task index `m` and robot index `i`.
    pub terms: Vec<[UtilityTerms; 2]>,
}

impl AllocationProblem {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Multiplies every quality, cost and utility by `k > 0`.
    pub fn scaled(&self, k: f64) -> AllocationProblem {
        let mut out = self.clone();
        for row in &mut out.terms {
            for t in row.iter_mut() {
                t.q *= k;
                t.c *= k;
                t.u *= k;
            }
        }
        out
    }
}

/// Builds the problem for `dag` on `scene`. Sub-tasks are visited in
/// topological order on a predicted scene: each one is evaluated for both
/// robots, then executed by its best feasible robot so that successors see
/// the predecessor's declared effect (a passed cube sits at the hand-off
/// slot, an aligned tool sits at its alignment pose).
pub fn build_problem(world: &World, dag: &SubTaskDag, scene: &SceneState) -> Result<AllocationProblem, AllocError> {
    if scene.robots.len() != 2 {
        return Err(AllocError::RobotCount(scene.robots.len()));
    }
    let order = dag.topological_order()?;
    let mut predicted = scene.clone();
    let mut terms = vec![[UtilityTerms::infeasible(0.0); 2]; dag.len()];
    for m in order {
        let sub = &dag.tasks[m];
        let mut actions = Vec::with_capacity(2);
        for rid in RobotId::ALL {
            let action = resolve_action(world, &predicted, rid, sub.primitive, &sub.pick, &sub.place)?;
            terms[m][rid.index()] = terms_for(world, &predicted, &action);
            actions.push(action);
        }
        let mut ranked: Vec<usize> = (0..2).filter(|&i| terms[m][i].is_feasible()).collect();
        ranked.sort_by(|&a, &b| terms[m][b].u.total_cmp(&terms[m][a].u).then(a.cmp(&b)));
        for i in ranked {
            if let Ok((next, _)) = sim::apply(world, &predicted, &actions[i]) {
                predicted = next;
                break;
            }
        }
    }
    Ok(AllocationProblem {
        ids: dag.tasks.iter().map(|t| t.id).collect(),
        preds: dag.predecessors(),
        terms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// Sub-task id to robot, assigned sub-tasks only.
    pub gamma: BTreeMap<u32, RobotId>,
    /// `v[i][m]` for robot index `i` and sub-task index `m`.
    pub v: Vec<Vec<u8>>,
    /// Execution sequence of assigned sub-task ids.
    pub order: Vec<u32>,
    pub total_utility: f64,
    pub total_time: f64,
}

impl Allocation {
    pub fn assigned_count(&self) -> usize {
        self.gamma.len()
    }
}

/// Utility and time summed in sub-task index order.
pub fn score(problem: &AllocationProblem, assignment: &[Option<usize>]) -> (f64, f64) {
    let mut u = 0.0;
    let mut t = 0.0;
    for (m, a) in assignment.iter().enumerate() {
        if let Some(i) = a {
            u += problem.terms[m][*i].u;
            t += problem.terms[m][*i].tau;
        }
    }
    (u, t)
}

fn gamma_key(assignment: &[Option<usize>]) -> Vec<usize> {
    assignment.iter().map(|a| a.unwrap_or(2)).collect()
}

/// Larger utility first, then shorter time, then lexicographically smallest
/// assignment (robot 0 < robot 1 < unassigned).
fn better(a: &(f64, f64, Vec<Option<usize>>), b: &(f64, f64, Vec<Option<usize>>)) -> bool {
    match a.0.total_cmp(&b.0) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => match a.1.total_cmp(&b.1) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => gamma_key(&a.2) < gamma_key(&b.2),
        },
    }
}

fn to_allocation(problem: &AllocationProblem, assignment: &[Option<usize>]) -> Allocation {
    let (total_utility, total_time) = score(problem, assignment);
    let mut gamma = BTreeMap::new();
    let mut v = vec![vec![0u8; problem.len()]; 2];
    for (m, a) in assignment.iter().enumerate() {
        if let Some(i) = a {
            gamma.insert(problem.ids[m], RobotId::ALL[*i]);
            v[*i][m] = 1;
        }
    }
    let order = topo_order(&problem.preds, &problem.ids, |m| assignment[m].is_some())
        .expect("problem graph is acyclic")
        .into_iter()
        .map(|m| problem.ids[m])
        .collect();
    Allocation {
        gamma,
        v,
        order,
        total_utility,
        total_time,
    }
}

struct Search<'a> {
    problem: &'a AllocationProblem,
    order: Vec<usize>,
    t_max: f64,
    /// Best achievable utility from position `k` of `order` onward.
    suffix_bound: Vec<f64>,
    assignment: Vec<Option<usize>>,
    best: (f64, f64, Vec<Option<usize>>),
}

impl Search<'_> {
    fn descend(&mut self, k: usize, utility: f64, time: f64) {
        // ties must still be explored for the time/gamma tie-breaks
        if utility + self.suffix_bound[k] < self.best.0 - 1e-9 {
            return;
        }
        if k == self.order.len() {
            let (u, t) = score(self.problem, &self.assignment);
            let cand = (u, t, self.assignment.clone());
            if better(&cand, &self.best) {
                self.best = cand;
            }
            return;
        }
        let m = self.order[k];
        let ready = self.problem.preds[m].iter().all(|&p| self.assignment[p].is_some());
        if ready {
            for i in 0..2 {
                let term = self.problem.terms[m][i];
                if term.is_feasible() && time + term.tau <= self.t_max {
                    self.assignment[m] = Some(i);
                    self.descend(k + 1, utility + term.u, time + term.tau);
                    self.assignment[m] = None;
                }
            }
        }
        self.descend(k + 1, utility, time);
    }
}

pub fn solve_exact_problem(problem: &AllocationProblem, t_max: f64) -> Result<Allocation, AllocError> {
    if problem.len() > MAX_EXACT_SUBTASKS {
        return Err(AllocError::TooLarge(problem.len()));
    }
    let order = topo_order(&problem.preds, &problem.ids, |_| true).ok_or(AllocError::Cycle)?;
    let mut suffix_bound = vec![0.0; order.len() + 1];
    for k in (0..order.len()).rev() {
        let best_here = problem.terms[order[k]]
            .iter()
            .filter(|t| t.is_feasible())
            .map(|t| t.u)
            .fold(0.0f64, f64::max);
        suffix_bound[k] = suffix_bound[k + 1] + best_here;
    }
    let empty = vec![None; problem.len()];
    let mut search = Search {
        problem,
        order,
        t_max,
        suffix_bound,
        assignment: empty.clone(),
        best: (0.0, 0.0, empty),
    };
    search.descend(0, 0.0, 0.0);
    let best = search.best.2;
    Ok(to_allocation(problem, &best))
}

pub fn solve_greedy_problem(problem: &AllocationProblem, t_max: f64) -> Result<Allocation, AllocError> {
    let order = topo_order(&problem.preds, &problem.ids, |_| true).ok_or(AllocError::Cycle)?;
    let mut assignment: Vec<Option<usize>> = vec![None; problem.len()];
    let mut time = 0.0;
    for m in order {
        if !problem.preds[m].iter().all(|&p| assignment[p].is_some()) {
            continue;
        }
        let mut ranked: Vec<usize> = (0..2).filter(|&i| problem.terms[m][i].is_feasible()).collect();
        ranked.sort_by(|&a, &b| problem.terms[m][b].u.total_cmp(&problem.terms[m][a].u).then(a.cmp(&b)));
        if let Some(&i) = ranked.first() {
            if time + problem.terms[m][i].tau <= t_max {
                assignment[m] = Some(i);
                time += problem.terms[m][i].tau;
            }
        }
    }
    Ok(to_allocation(problem, &assignment))
}

pub fn solve_exact(world: &World, dag: &SubTaskDag, scene: &SceneState, t_max: f64) -> Result<Allocation, AllocError> {
    if dag.len() > MAX_EXACT_SUBTASKS {
        return Err(AllocError::TooLarge(dag.len()));
    }
    solve_exact_problem(&build_problem(world, dag, scene)?, t_max)
}

pub fn solve_greedy(world: &World, dag: &SubTaskDag, scene: &SceneState, t_max: f64) -> Result<Allocation, AllocError> {
    solve_greedy_problem(&build_problem(world, dag, scene)?, t_max)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("indicator matrix has the wrong shape")]
    Shape,
    #[error("v[{0}][{1}] is not binary")]
    NonBinary(usize, usize),
    #[error("sub-task {0} is assigned to more than one robot")]
    MultiAssigned(u32),
    #[error("gamma and v disagree on sub-task {0}")]
    GammaMismatch(u32),
    #[error("sub-task {0} assigned to a robot that cannot execute it")]
    Infeasible(u32),
    #[error("total time {0} exceeds the budget {1}")]
    OverBudget(f64, f64),
    #[error("sub-task {0} is assigned but predecessor {1} is not")]
    Precedence(u32, u32),
    #[error("execution order is not a topological order of the assigned sub-tasks")]
    Order,
    #[error("reported totals do not match the assignment")]
    Totals,
}

/// Checks every constraint of the allocation problem on a solver output.
pub fn validate_allocation(problem: &AllocationProblem, alloc: &Allocation, t_max: f64) -> Result<(), Violation> {
    let m_count = problem.len();
    if alloc.v.len() != 2 || alloc.v.iter().any(|row| row.len() != m_count) {
        return Err(Violation::Shape);
    }
    let mut assignment = vec![None; m_count];
    for m in 0..m_count {
        let id = problem.ids[m];
        let mut count = 0;
        for i in 0..2 {
            match alloc.v[i][m] {
                0 => {}
                1 => {
                    count += 1;
                    assignment[m] = Some(i);
                }
                _ => return Err(Violation::NonBinary(i, m)),
            }
        }
        if count > 1 {
            return Err(Violation::MultiAssigned(id));
        }
        if alloc.gamma.get(&id).map(|r| r.index()) != assignment[m] {
            return Err(Violation::GammaMismatch(id));
        }
        if let Some(i) = assignment[m] {
            if !problem.terms[m][i].is_feasible() {
                return Err(Violation::Infeasible(id));
            }
        }
    }
    if alloc.gamma.len() != assignment.iter().filter(|a| a.is_some()).count() {
        return Err(Violation::Shape);
    }
    let (u, t) = score(problem, &assignment);
    if t > t_max {
        return Err(Violation::OverBudget(t, t_max));
    }
    for m in 0..m_count {
        if assignment[m].is_some() {
            if let Some(&p) = problem.preds[m].iter().find(|&&p| assignment[p].is_none()) {
                return Err(Violation::Precedence(problem.ids[m], problem.ids[p]));
            }
        }
    }
    let mut position = BTreeMap::new();
    for (k, id) in alloc.order.iter().enumerate() {
        if position.insert(*id, k).is_some() {
            return Err(Violation::Order);
        }
    }
    for m in 0..m_count {
        let id = problem.ids[m];
        match (assignment[m].is_some(), position.get(&id)) {
            (true, Some(&k)) => {
                if problem.preds[m].iter().any(|&p| position.get(&problem.ids[p]).is_none_or(|&kp| kp > k)) {
                    return Err(Violation::Order);
                }
            }
            (false, None) => {}
            _ => return Err(Violation::Order),
        }
    }
    if position.len() != alloc.gamma.len() {
        return Err(Violation::Order);
    }
    if u != alloc.total_utility || t != alloc.total_time {
        return Err(Violation::Totals);
    }
    Ok(())
}
