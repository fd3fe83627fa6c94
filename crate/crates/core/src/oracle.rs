//! Canonical decomposition of each task type and the privileged expert that
//! executes the exact allocation in the simulator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alloc::{solve_exact, AllocError, Allocation, SubTask, SubTaskDag};
use crate::dataset::{EpisodeRecord, EpisodeStep, SCHEMA_VERSION};
use crate::entity::{resolve_action, EntityRef, ResolveError, Site};
use crate::lang::{encode_sub_instruction, lexicalize_high, lexicalize_human, template_count, SubInstruction};
use crate::scene::{GoalAtom, ObjectRef, SceneState};
use crate::sim::{self, Primitive, PrimitiveAction, SimError, TransitionReceipt};
use crate::taskgen::{mix_seed, TaskInstance, TaskType};
use crate::world::World;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("decomposition failed: {0}")]
    Decomposition(#[from] AllocError),
    #[error("allocation leaves {unassigned} of {total} sub-tasks unassigned")]
    IncompleteAllocation { unassigned: usize, total: usize },
    #[error("sub-task {id}: {source}")]
    Resolve { id: u32, source: ResolveError },
    #[error("sub-task {id}: {source}")]
    Sim { id: u32, source: SimError },
    #[error("goal not satisfied after the last sub-task")]
    GoalNotMet,
    #[error("clock {0:.3} s exceeds the budget")]
    OverBudget(f64),
    #[error("instruction: {0}")]
    Lang(String),
}

fn obj(o: ObjectRef) -> EntityRef {
    EntityRef::Object(o)
}

fn site(s: Site) -> EntityRef {
    EntityRef::Site(s)
}

fn pass_chain(first: u32, atom: &GoalAtom) -> Vec<SubTask> {
    vec![
        SubTask::new(first, Primitive::Move, obj(atom.top), site(Site::SharedPoint), &[]),
        SubTask::new(first + 1, Primitive::Move, obj(atom.top), site(Site::PadOf(atom.bottom.color)), &[first]),
    ]
}

/// Both ways of meeting in the middle: pass the bottom cube and stack onto
/// it there, or pass the top cube and stack it onto the bottom in place.
fn stack_chain(first: u32, atom: &GoalAtom, pass_bottom: bool) -> Vec<SubTask> {
    let passed = if pass_bottom { atom.bottom } else { atom.top };
    vec![
        SubTask::new(first, Primitive::Move, obj(passed), site(Site::SharedPoint), &[]),
        SubTask::new(first + 1, Primitive::Move, obj(atom.top), site(Site::StackOn(atom.bottom.color)), &[first]),
    ]
}

/// Picks the stack variant with the shorter fully assigned exact allocation
/// on the initial scene; ties and double failures pass the bottom cube.
fn choose_stack_variant(world: &World, scene: &SceneState, atom: &GoalAtom, t_max: f64) -> bool {
    let time = |pass_bottom: bool| -> Option<f64> {
        let dag = SubTaskDag::new(stack_chain(1, atom, pass_bottom)).ok()?;
        let a = solve_exact(world, &dag, scene, t_max).ok()?;
        (a.assigned_count() == dag.len()).then_some(a.total_time)
    };
    match (time(true), time(false)) {
        (Some(b), Some(t)) => b <= t,
        (None, Some(_)) => false,
        _ => true,
    }
}

/// The canonical sub-task DAG of an instance.
pub fn decompose(world: &World, instance: &TaskInstance) -> Result<SubTaskDag, OracleError> {
    let goal = &instance.goal;
    let atom = |k: usize| -> Result<&GoalAtom, OracleError> {
        goal.atoms
            .get(k)
            .ok_or(OracleError::Decomposition(AllocError::Resolve(ResolveError::UnresolvableEntity(format!(
                "goal atom {k}"
            )))))
    };
    let tool = obj(ObjectRef::tool());
    let scene = &instance.scene0;
    let tasks = match instance.task_type {
        TaskType::Pass => pass_chain(1, atom(0)?),
        TaskType::Pass2 => {
            let mut t = pass_chain(1, atom(0)?);
            t.extend(pass_chain(3, atom(1)?));
            t
        }
        TaskType::Stack => {
            let a = atom(0)?;
            stack_chain(1, a, choose_stack_variant(world, scene, a, world.t_max))
        }
        TaskType::Stack2 => {
            let (a, b) = (atom(0)?, atom(1)?);
            let mut t = stack_chain(1, a, choose_stack_variant(world, scene, a, world.t_max));
            t.extend(stack_chain(3, b, choose_stack_variant(world, scene, b, world.t_max)));
            t
        }
        TaskType::Poke => {
            let a = atom(0)?;
            vec![
                SubTask::new(1, Primitive::PrePoke, tool, site(Site::AlignWith(a.top.color)), &[]),
                SubTask::new(2, Primitive::Poke, obj(a.top), site(Site::OtherWorkspace), &[1]),
                SubTask::new(3, Primitive::Move, obj(a.top), site(Site::PadOf(a.bottom.color)), &[2]),
            ]
        }
        TaskType::PokeStack => {
            let a = atom(0)?;
            vec![
                SubTask::new(1, Primitive::PrePoke, tool, site(Site::AlignWith(a.bottom.color)), &[]),
                SubTask::new(2, Primitive::Poke, obj(a.bottom), site(Site::OtherWorkspace), &[1]),
                SubTask::new(3, Primitive::PrePoke, tool, site(Site::AlignWith(a.top.color)), &[2]),
                SubTask::new(4, Primitive::Poke, obj(a.top), site(Site::OtherWorkspace), &[3]),
                SubTask::new(5, Primitive::Move, obj(a.top), site(Site::StackOn(a.bottom.color)), &[4]),
            ]
        }
        TaskType::Hook => {
            let a = atom(0)?;
            vec![
                SubTask::new(1, Primitive::PreHook, tool, site(Site::AlignWith(a.top.color)), &[]),
                SubTask::new(2, Primitive::Hook, obj(a.top), site(Site::OwnWorkspace), &[1]),
                SubTask::new(3, Primitive::Move, obj(a.top), site(Site::SharedPoint), &[2]),
                SubTask::new(4, Primitive::Move, obj(a.top), site(Site::PadOf(a.bottom.color)), &[3]),
            ]
        }
        TaskType::HookStack => {
            // the holder hooks the top cube and parks the tool at the shared
            // point; the allocation decides who hooks the bottom cube
            let a = atom(0)?;
            vec![
                SubTask::new(1, Primitive::PreHook, tool, site(Site::AlignWith(a.top.color)), &[]),
                SubTask::new(2, Primitive::Hook, obj(a.top), site(Site::OwnWorkspace), &[1]),
                SubTask::new(3, Primitive::Move, tool, site(Site::SharedPoint), &[2]),
                SubTask::new(4, Primitive::PreHook, tool, site(Site::AlignWith(a.bottom.color)), &[3]),
                SubTask::new(5, Primitive::Hook, obj(a.bottom), site(Site::OwnWorkspace), &[4]),
                SubTask::new(6, Primitive::Move, obj(a.top), site(Site::SharedPoint), &[2]),
                SubTask::new(7, Primitive::Move, obj(a.top), site(Site::StackOn(a.bottom.color)), &[5, 6]),
            ]
        }
    };
    Ok(SubTaskDag::new(tasks)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleStep {
    pub sub_instruction: SubInstruction,
    pub action: PrimitiveAction,
    pub receipt: TransitionReceipt,
    /// Clock after the step completes.
    pub clock: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRun {
    pub dag: SubTaskDag,
    pub allocation: Allocation,
    pub steps: Vec<OracleStep>,
    /// Scene before each step, plus the final scene last.
    pub states: Vec<SceneState>,
}

impl OracleRun {
    pub fn final_state(&self) -> &SceneState {
        self.states.last().expect("initial state is always recorded")
    }
}

/// Executes `allocation` on `scene0`, resolving every sub-task against the
/// live state.
pub fn execute_allocation(
    world: &World,
    dag: &SubTaskDag,
    allocation: &Allocation,
    scene0: &SceneState,
) -> Result<(Vec<OracleStep>, Vec<SceneState>), OracleError> {
    let mut state = scene0.clone();
    let mut steps = Vec::with_capacity(allocation.order.len());
    let mut states = vec![state.clone()];
    for &id in &allocation.order {
        let m = dag.index_of(id).ok_or(AllocError::DanglingEdge(id, id))?;
        let sub = &dag.tasks[m];
        let robot = allocation.gamma[&id];
        let action = resolve_action(world, &state, robot, sub.primitive, &sub.pick, &sub.place)
            .map_err(|source| OracleError::Resolve { id, source })?;
        let (next, receipt) = sim::apply(world, &state, &action).map_err(|source| OracleError::Sim { id, source })?;
        state = next;
        steps.push(OracleStep {
            sub_instruction: SubInstruction {
                robot,
                primitive: sub.primitive,
                pick: sub.pick,
                place: sub.place,
            },
            action,
            receipt,
            clock: state.clock,
        });
        states.push(state.clone());
    }
    Ok((steps, states))
}

/// decompose → exact allocation → execution → goal and budget check.
pub fn run_oracle(world: &World, instance: &TaskInstance) -> Result<OracleRun, OracleError> {
    let dag = decompose(world, instance)?;
    let allocation = solve_exact(world, &dag, &instance.scene0, world.t_max)?;
    if allocation.assigned_count() != dag.len() {
        return Err(OracleError::IncompleteAllocation {
            unassigned: dag.len() - allocation.assigned_count(),
            total: dag.len(),
        });
    }
    let (steps, states) = execute_allocation(world, &dag, &allocation, &instance.scene0)?;
    let last = states.last().expect("initial state is always recorded");
    if !sim::within_budget(last, world.t_max) {
        return Err(OracleError::OverBudget(last.clock));
    }
    if !sim::check_goal(world, last, &instance.goal).unwrap_or(false) {
        return Err(OracleError::GoalNotMet);
    }
    Ok(OracleRun {
        dag,
        allocation,
        steps,
        states,
    })
}

/// Template drawn for an instance's human instruction.
pub fn human_template_id(instance: &TaskInstance) -> u32 {
    let n = template_count(instance.task_type).max(1) as u64;
    (mix_seed(instance.seed, 0x7E, 0) % n) as u32
}

/// An expert episode. Observation references are left empty; the dataset
/// writer fills them when it renders rasters.
pub fn generate_demonstration(
    world: &World,
    instance: &TaskInstance,
    episode_id: &str,
) -> Result<EpisodeRecord, OracleError> {
    let run = run_oracle(world, instance)?;
    let high = lexicalize_high(&instance.goal, instance.task_type);
    let human = lexicalize_human(&instance.goal, instance.task_type, human_template_id(instance), instance.seed)
        .map_err(|e| OracleError::Lang(e.to_string()))?;
    let mut steps = Vec::with_capacity(run.steps.len());
    for s in &run.steps {
        steps.push(EpisodeStep {
            clock: s.clock,
            sub_instruction: encode_sub_instruction(&s.sub_instruction).map_err(|e| OracleError::Lang(e.to_string()))?,
            action: s.action,
            receipt: s.receipt.clone(),
            observation_ref: None,
        });
    }
    let final_state = run.final_state().clone();
    Ok(EpisodeRecord {
        schema_version: SCHEMA_VERSION,
        episode_id: episode_id.to_string(),
        instance: instance.clone(),
        high,
        human,
        steps,
        final_observation_ref: None,
        final_clock: final_state.clock,
        success: true,
        final_state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskgen::sample_task;

    #[test]
    fn counts_match_the_task_table() {
        let w = World::default();
        for t in TaskType::ALL {
            let inst = sample_task(&w, t, 5).unwrap();
            let dag = decompose(&w, &inst).unwrap();
            assert_eq!(dag.len(), t.subtask_count(), "{t}");
        }
    }

    #[test]
    fn hook_stack_parks_the_tool_at_the_shared_point() {
        let w = World::default();
        let inst = sample_task(&w, TaskType::HookStack, 2).unwrap();
        let run = run_oracle(&w, &inst).unwrap();
        let third = &run.steps[2];
        assert_eq!(third.sub_instruction.pick, obj(ObjectRef::tool()));
        assert_eq!(third.sub_instruction.place, site(Site::SharedPoint));
        let hooks = run.steps.iter().filter(|s| s.sub_instruction.primitive == Primitive::Hook).count();
        assert_eq!(hooks, 2);
    }

    #[test]
    fn demonstration_replays_bit_exactly() {
        let w = World::default();
        for t in TaskType::ALL {
            let inst = sample_task(&w, t, 13).unwrap();
            let rec = generate_demonstration(&w, &inst, "e").unwrap();
            assert!(rec.final_clock <= w.t_max);
            let mut s = inst.scene0.clone();
            for step in &rec.steps {
                s = sim::apply(&w, &s, &step.action).unwrap().0;
            }
            assert_eq!(s, rec.final_state, "{t}");
        }
    }

    #[test]
    fn swapped_pass_fails_out_of_reach() {
        let w = World::default();
        let inst = sample_task(&w, TaskType::Pass, 4).unwrap();
        let run = run_oracle(&w, &inst).unwrap();
        let second = &run.dag.tasks[1];
        let robot = run.allocation.gamma[&second.id];
        let a = resolve_action(&w, &inst.scene0, robot, second.primitive, &second.pick, &second.place).unwrap();
        assert_eq!(sim::apply(&w, &inst.scene0, &a).unwrap_err(), SimError::OutOfReach);
    }
}
