//! Policy interface, baseline policies, the episode loop and success-rate
//! evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alloc::solve_greedy;
use crate::dataset::{render_raster, EpisodeRecord, Observation};
use crate::entity::{resolve_action, EntityRef, Site};
use crate::lang::{parse_high, Instruction, InstructionKind, SubInstruction};
use crate::oracle::{decompose, execute_allocation, run_oracle};
use crate::scene::{ObjectKind, RobotId, SceneState};
use crate::sim::{self, Primitive, PrimitiveAction, SimError, TransitionReceipt};
use crate::taskgen::{mix_seed, TaskInstance, TaskType};
use crate::world::World;

/// Hard cap on decisions per episode.
pub const MAX_DECISIONS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObservationMode {
    Symbolic,
    RasterOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub t_max: f64,
    pub runs: usize,
    pub instruction_kind: InstructionKind,
    pub observation_mode: ObservationMode,
    /// Re-seeds policy randomness per run.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            t_max: 100.0,
            runs: 10,
            instruction_kind: InstructionKind::HighLevel,
            observation_mode: ObservationMode::Symbolic,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("policy fault: {0}")]
pub struct PolicyFault(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolicyDecision {
    Act {
        sub: SubInstruction,
        t_pick: crate::scene::Pose2,
        t_place: crate::scene::Pose2,
    },
    Stop,
}

impl PolicyDecision {
    pub fn from_action(sub: SubInstruction, action: &PrimitiveAction) -> PolicyDecision {
        PolicyDecision::Act {
            sub,
            t_pick: action.t_pick,
            t_place: action.t_place,
        }
    }
}

pub enum PolicyObservation {
    Symbolic(SceneState),
    Raster(Observation),
}

pub struct DecisionInput<'a> {
    pub world: &'a World,
    pub instruction: &'a Instruction,
    pub observation: &'a PolicyObservation,
    pub history: &'a [TraceEntry],
}

/// Everything a policy may look at when an episode starts. `instance` is
/// privileged: only the oracle reads it.
pub struct EpisodeStart<'a> {
    pub world: &'a World,
    pub instance: &'a TaskInstance,
    pub seed: u64,
}

/// Per-episode decision maker.
pub trait Agent {
    fn decide(&mut self, input: &DecisionInput) -> Result<PolicyDecision, PolicyFault>;
}

/// Factory of agents; shared across worker threads.
pub trait Policy: Sync {
    fn name(&self) -> &str;
    fn begin(&self, start: &EpisodeStart) -> Box<dyn Agent>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub decision: PolicyDecision,
    pub result: Result<TransitionReceipt, SimError>,
    pub clock: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub success: bool,
    pub elapsed: f64,
    pub trace: Vec<TraceEntry>,
    pub fault: Option<PolicyFault>,
    pub final_state: SceneState,
}

fn observe(world: &World, state: &SceneState, mode: ObservationMode) -> Result<PolicyObservation, PolicyFault> {
    Ok(match mode {
        ObservationMode::Symbolic => PolicyObservation::Symbolic(state.clone()),
        ObservationMode::RasterOnly => {
            PolicyObservation::Raster(render_raster(world, state).map_err(|e| PolicyFault(e.to_string()))?)
        }
    })
}

/// Runs one episode. Failed actions leave the state unchanged and are
/// recorded; an action that ends past the budget still executes and then
/// ends the episode.
pub fn run_episode(
    world: &World,
    policy: &dyn Policy,
    instance: &TaskInstance,
    instruction: &Instruction,
    config: &EvalConfig,
    seed: u64,
) -> EpisodeOutcome {
    let mut agent = policy.begin(&EpisodeStart { world, instance, seed });
    let mut state = instance.scene0.clone();
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut fault = None;
    for _ in 0..MAX_DECISIONS {
        if state.clock >= config.t_max {
            break;
        }
        let observation = match observe(world, &state, config.observation_mode) {
            Ok(o) => o,
            Err(f) => {
                fault = Some(f);
                break;
            }
        };
        let decision = agent.decide(&DecisionInput {
            world,
            instruction,
            observation: &observation,
            history: &trace,
        });
        let (sub, t_pick, t_place) = match decision {
            Err(f) => {
                fault = Some(f);
                break;
            }
            Ok(PolicyDecision::Stop) => break,
            Ok(PolicyDecision::Act { sub, t_pick, t_place }) => (sub, t_pick, t_place),
        };
        if sub.primitive != Primitive::Stop
            && !(t_pick.is_finite()
                && t_place.is_finite()
                && world.on_table(t_pick.x, t_pick.y)
                && world.on_table(t_place.x, t_place.y))
        {
            fault = Some(PolicyFault(format!("malformed decision {sub}")));
            break;
        }
        let action = PrimitiveAction {
            robot: sub.robot,
            primitive: sub.primitive,
            t_pick,
            t_place,
        };
        let result = sim::apply(world, &state, &action).map(|(next, receipt)| {
            state = next;
            receipt
        });
        trace.push(TraceEntry {
            decision: PolicyDecision::Act { sub, t_pick, t_place },
            result,
            clock: state.clock,
        });
        if sub.primitive == Primitive::Stop {
            break;
        }
    }
    if let Some(f) = &fault {
        log::debug!("{} on seed {}: {f}", policy.name(), instance.seed);
    }
    let success = fault.is_none()
        && sim::within_budget(&state, config.t_max)
        && sim::check_goal(world, &state, &instance.goal).unwrap_or(false);
    EpisodeOutcome {
        success,
        elapsed: state.clock,
        trace,
        fault,
        final_state: state,
    }
}

/// Replays the privileged decompose + exact allocation pipeline.
pub struct OraclePolicy;

struct Replay {
    plan: std::vec::IntoIter<PolicyDecision>,
}

impl Agent for Replay {
    fn decide(&mut self, _input: &DecisionInput) -> Result<PolicyDecision, PolicyFault> {
        Ok(self.plan.next().unwrap_or(PolicyDecision::Stop))
    }
}

struct Faulty(String);

impl Agent for Faulty {
    fn decide(&mut self, _input: &DecisionInput) -> Result<PolicyDecision, PolicyFault> {
        Err(PolicyFault(self.0.clone()))
    }
}

impl Policy for OraclePolicy {
    fn name(&self) -> &str {
        "oracle"
    }

    fn begin(&self, start: &EpisodeStart) -> Box<dyn Agent> {
        match run_oracle(start.world, start.instance) {
            Ok(run) => Box::new(Replay {
                plan: run
                    .steps
                    .iter()
                    .map(|s| PolicyDecision::from_action(s.sub_instruction, &s.action))
                    .collect::<Vec<_>>()
                    .into_iter(),
            }),
            Err(e) => Box::new(Faulty(e.to_string())),
        }
    }
}

/// Parses the high-level instruction, re-derives the canonical DAG for each
/// matching task type from the observed scene, keeps the first whose greedy
/// allocation reaches the goal in a dry run, and executes it sub-task by
/// sub-task against the live observation.
pub struct ScriptedPolicy;

struct Scripted {
    plan: Option<Vec<SubInstruction>>,
    next: usize,
}

fn plan_for(world: &World, scene: &SceneState, instruction: &Instruction) -> Option<Vec<SubInstruction>> {
    let (goal, candidates) = parse_high(&instruction.text).ok()?;
    if scene.robots.len() != 2 {
        return None;
    }
    for task_type in candidates {
        let probe = TaskInstance {
            task_type,
            scene0: scene.clone(),
            goal: goal.clone(),
            seed: 0,
            robot_pair: (scene.robots[0].clone(), scene.robots[1].clone()),
        };
        let Ok(dag) = decompose(world, &probe) else { continue };
        let Ok(alloc) = solve_greedy(world, &dag, scene, world.t_max - scene.clock) else { continue };
        if alloc.assigned_count() != dag.len() {
            continue;
        }
        let Ok((steps, states)) = execute_allocation(world, &dag, &alloc, scene) else { continue };
        let last = states.last().expect("initial state is always recorded");
        if sim::check_goal(world, last, &goal).unwrap_or(false) {
            return Some(steps.into_iter().map(|s| s.sub_instruction).collect());
        }
    }
    None
}

impl Agent for Scripted {
    fn decide(&mut self, input: &DecisionInput) -> Result<PolicyDecision, PolicyFault> {
        let PolicyObservation::Symbolic(scene) = input.observation else {
            return Ok(PolicyDecision::Stop);
        };
        if input.instruction.kind != InstructionKind::HighLevel {
            return Ok(PolicyDecision::Stop);
        }
        if self.plan.is_none() {
            self.plan = Some(plan_for(input.world, scene, input.instruction).unwrap_or_default());
        }
        let plan = self.plan.as_ref().expect("set above");
        let Some(sub) = plan.get(self.next) else {
            return Ok(PolicyDecision::Stop);
        };
        self.next += 1;
        match resolve_action(input.world, scene, sub.robot, sub.primitive, &sub.pick, &sub.place) {
            Ok(action) => Ok(PolicyDecision::from_action(*sub, &action)),
            Err(_) => Ok(PolicyDecision::Stop),
        }
    }
}

impl Policy for ScriptedPolicy {
    fn name(&self) -> &str {
        "scripted"
    }

    fn begin(&self, _start: &EpisodeStart) -> Box<dyn Agent> {
        Box::new(Scripted { plan: None, next: 0 })
    }
}

/// Samples sub-instructions uniformly over robots, primitives, visible
/// objects and sites, resolved against the observed scene.
pub struct RandomPolicy;

struct Random {
    rng: ChaCha8Rng,
}

const RESAMPLE_TRIES: usize = 16;

impl Agent for Random {
    fn decide(&mut self, input: &DecisionInput) -> Result<PolicyDecision, PolicyFault> {
        let PolicyObservation::Symbolic(scene) = input.observation else {
            return Ok(PolicyDecision::Stop);
        };
        let prims = [
            Primitive::Move,
            Primitive::PreHook,
            Primitive::Hook,
            Primitive::PrePoke,
            Primitive::Poke,
        ];
        let mut sites = vec![
            Site::SharedPoint,
            Site::OwnWorkspace,
            Site::OtherWorkspace,
            Site::ReturnSpot,
        ];
        for o in &scene.objects {
            match o.spec.kind {
                ObjectKind::Pad => sites.push(Site::PadOf(o.spec.color)),
                ObjectKind::Cube => {
                    sites.push(Site::StackOn(o.spec.color));
                    sites.push(Site::AlignWith(o.spec.color));
                }
                ObjectKind::Tool => {}
            }
        }
        let objects: Vec<EntityRef> = scene.objects.iter().map(|o| EntityRef::Object(o.spec.appearance())).collect();
        if objects.is_empty() {
            return Ok(PolicyDecision::Stop);
        }
        for _ in 0..RESAMPLE_TRIES {
            let robot = RobotId::ALL[self.rng.gen_range(0..2)];
            let primitive = *prims.choose(&mut self.rng).expect("nonempty");
            let pick = *objects.choose(&mut self.rng).expect("nonempty");
            let place = EntityRef::Site(*sites.choose(&mut self.rng).expect("nonempty"));
            if let Ok(action) = resolve_action(input.world, scene, robot, primitive, &pick, &place) {
                let sub = SubInstruction {
                    robot,
                    primitive,
                    pick,
                    place,
                };
                return Ok(PolicyDecision::from_action(sub, &action));
            }
        }
        Ok(PolicyDecision::Stop)
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn begin(&self, start: &EpisodeStart) -> Box<dyn Agent> {
        Box::new(Random {
            rng: ChaCha8Rng::seed_from_u64(mix_seed(start.seed, start.instance.seed, 0x4A)),
        })
    }
}

pub fn policy_by_name(name: &str) -> Option<Box<dyn Policy>> {
    match name {
        "oracle" => Some(Box::new(OraclePolicy)),
        "scripted" => Some(Box::new(ScriptedPolicy)),
        "random" => Some(Box::new(RandomPolicy)),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub task_type: TaskType,
    pub episode_id: String,
    pub run: usize,
    pub success: bool,
    pub elapsed: f64,
    pub fault: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateStats {
    /// Percent.
    pub mean: f64,
    /// Population standard deviation over runs, percent.
    pub std: f64,
}

fn stats(rates: &[f64]) -> RateStats {
    if rates.is_empty() {
        return RateStats { mean: 0.0, std: 0.0 };
    }
    let n = rates.len() as f64;
    let mean = rates.iter().sum::<f64>() / n;
    let var = rates.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    RateStats { mean, std: var.sqrt() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub config: EvalConfig,
    pub per_type: BTreeMap<TaskType, RateStats>,
    /// Mean of the per-type means; std of the per-run averages.
    pub average: RateStats,
    pub episodes: Vec<EpisodeResult>,
}

impl EvalReport {
    /// One header row and one result row, columns per task type plus Avg.
    pub fn table(&self) -> String {
        let mut head = format!("{:<10}", "Method");
        let mut row = format!("{:<10}", self.policy);
        for t in TaskType::ALL {
            if let Some(s) = self.per_type.get(&t) {
                let _ = write!(head, " | {:>15}", t.label());
                let _ = write!(row, " | {:>6.2} ± {:>6.2}", s.mean, s.std);
            }
        }
        let _ = write!(head, " | {:>15}", "Avg");
        let _ = write!(row, " | {:>6.2} ± {:>6.2}", self.average.mean, self.average.std);
        format!("{head}\n{row}\n")
    }
}

/// Runs every episode `config.runs` times in parallel and aggregates
/// success rates per task type.
pub fn evaluate(
    world: &World,
    policy: &dyn Policy,
    episodes: &BTreeMap<TaskType, Vec<EpisodeRecord>>,
    config: &EvalConfig,
) -> EvalReport {
    let jobs: Vec<(TaskType, usize, &EpisodeRecord)> = episodes
        .iter()
        .flat_map(|(t, recs)| (0..config.runs).flat_map(move |run| recs.iter().map(move |r| (*t, run, r))))
        .collect();
    let results: Vec<EpisodeResult> = jobs
        .par_iter()
        .map(|&(task_type, run, rec)| {
            let instruction = match config.instruction_kind {
                InstructionKind::HighLevel => &rec.high,
                InstructionKind::Human => &rec.human,
            };
            let seed = mix_seed(config.seed, run as u64, 0);
            let out = run_episode(world, policy, &rec.instance, instruction, config, seed);
            EpisodeResult {
                task_type,
                episode_id: rec.episode_id.clone(),
                run,
                success: out.success,
                elapsed: out.elapsed,
                fault: out.fault.map(|f| f.0),
            }
        })
        .collect();

    let mut per_run: BTreeMap<TaskType, Vec<(usize, usize)>> = BTreeMap::new();
    for t in episodes.keys() {
        per_run.insert(*t, vec![(0, 0); config.runs]);
    }
    for r in &results {
        let slot = &mut per_run.get_mut(&r.task_type).expect("known type")[r.run];
        slot.0 += usize::from(r.success);
        slot.1 += 1;
    }
    let rate = |(ok, n): (usize, usize)| if n == 0 { 0.0 } else { 100.0 * ok as f64 / n as f64 };
    let per_type: BTreeMap<TaskType, RateStats> = per_run
        .iter()
        .map(|(t, runs)| (*t, stats(&runs.iter().map(|&x| rate(x)).collect::<Vec<_>>())))
        .collect();
    let run_avgs: Vec<f64> = (0..config.runs)
        .map(|k| per_run.values().map(|runs| rate(runs[k])).sum::<f64>() / per_run.len().max(1) as f64)
        .collect();
    let average = RateStats {
        mean: per_type.values().map(|s| s.mean).sum::<f64>() / per_type.len().max(1) as f64,
        std: stats(&run_avgs).std,
    };
    EvalReport {
        policy: policy.name().to_string(),
        config: config.clone(),
        per_type,
        average,
        episodes: results,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::lexicalize_high;
    use crate::oracle::generate_demonstration;
    use crate::taskgen::sample_task;

    struct StopAtOnce;

    impl Agent for StopAtOnce {
        fn decide(&mut self, _input: &DecisionInput) -> Result<PolicyDecision, PolicyFault> {
            Ok(PolicyDecision::Stop)
        }
    }

    impl Policy for StopAtOnce {
        fn name(&self) -> &str {
            "stop"
        }

        fn begin(&self, _start: &EpisodeStart) -> Box<dyn Agent> {
            Box::new(StopAtOnce)
        }
    }

    struct OffTable;

    impl Policy for OffTable {
        fn name(&self) -> &str {
            "off"
        }

        fn begin(&self, _start: &EpisodeStart) -> Box<dyn Agent> {
            Box::new(OffTable)
        }
    }

    impl Agent for OffTable {
        fn decide(&mut self, _input: &DecisionInput) -> Result<PolicyDecision, PolicyFault> {
            Ok(PolicyDecision::Act {
                sub: SubInstruction {
                    robot: RobotId::R0,
                    primitive: Primitive::Move,
                    pick: EntityRef::None,
                    place: EntityRef::None,
                },
                t_pick: crate::scene::Pose2::at(5.0, 0.0),
                t_place: crate::scene::Pose2::at(0.0, 0.0),
            })
        }
    }

    #[test]
    fn stop_immediately_fails_with_zero_time() {
        let w = World::default();
        let inst = sample_task(&w, TaskType::Pass, 1).unwrap();
        let ins = lexicalize_high(&inst.goal, inst.task_type);
        let out = run_episode(&w, &StopAtOnce, &inst, &ins, &EvalConfig::default(), 0);
        assert!(!out.success);
        assert_eq!(out.elapsed, 0.0);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn malformed_decisions_fault() {
        let w = World::default();
        let inst = sample_task(&w, TaskType::Pass, 1).unwrap();
        let ins = lexicalize_high(&inst.goal, inst.task_type);
        let out = run_episode(&w, &OffTable, &inst, &ins, &EvalConfig::default(), 0);
        assert!(!out.success);
        assert!(out.fault.is_some());
    }

    #[test]
    fn oracle_matches_the_demonstration() {
        let w = World::default();
        for t in TaskType::ALL {
            let inst = sample_task(&w, t, 17).unwrap();
            let rec = generate_demonstration(&w, &inst, "x").unwrap();
            let out = run_episode(&w, &OraclePolicy, &inst, &rec.high, &EvalConfig::default(), 0);
            assert!(out.success, "{t}");
            assert_eq!(out.final_state, rec.final_state, "{t}");
            let subs: Vec<String> = out
                .trace
                .iter()
                .map(|e| match &e.decision {
                    PolicyDecision::Act { sub, .. } => sub.to_string(),
                    PolicyDecision::Stop => "stop".into(),
                })
                .collect();
            let recorded: Vec<String> = rec.steps.iter().map(|s| s.sub_instruction.clone()).collect();
            assert_eq!(subs, recorded, "{t}");
        }
    }

    #[test]
    fn budget_cuts_the_episode_after_the_overrunning_action() {
        let w = World::default();
        let inst = sample_task(&w, TaskType::Hook, 3).unwrap();
        let rec = generate_demonstration(&w, &inst, "x").unwrap();
        let tight = EvalConfig {
            t_max: rec.steps[0].clock + 0.5,
            ..EvalConfig::default()
        };
        let out = run_episode(&w, &OraclePolicy, &inst, &rec.high, &tight, 0);
        assert_eq!(out.trace.len(), 2);
        assert!(out.elapsed > tight.t_max);
        assert!(!out.success);
    }

    #[test]
    fn scripted_stops_on_human_text_and_rasters() {
        let w = World::default();
        let inst = sample_task(&w, TaskType::Pass, 2).unwrap();
        let rec = generate_demonstration(&w, &inst, "x").unwrap();
        let out = run_episode(&w, &ScriptedPolicy, &inst, &rec.human, &EvalConfig::default(), 0);
        assert!(out.trace.is_empty() && !out.success);
        let raster = EvalConfig {
            observation_mode: ObservationMode::RasterOnly,
            ..EvalConfig::default()
        };
        let out = run_episode(&w, &ScriptedPolicy, &inst, &rec.high, &raster, 0);
        assert!(out.trace.is_empty());
        let out = run_episode(&w, &ScriptedPolicy, &inst, &rec.high, &EvalConfig::default(), 0);
        assert!(out.success);
    }

    #[test]
    fn random_policy_is_seed_deterministic() {
        let w = World::default();
        let inst = sample_task(&w, TaskType::Stack, 2).unwrap();
        let ins = lexicalize_high(&inst.goal, inst.task_type);
        let a = run_episode(&w, &RandomPolicy, &inst, &ins, &EvalConfig::default(), 5);
        let b = run_episode(&w, &RandomPolicy, &inst, &ins, &EvalConfig::default(), 5);
        assert_eq!(a, b);
        assert!(!a.trace.is_empty());
    }

    #[test]
    fn report_average_is_the_mean_of_type_means() {
        let w = World::default();
        let mut eps = BTreeMap::new();
        for t in [TaskType::Pass, TaskType::Stack] {
            let recs: Vec<EpisodeRecord> = (0..3)
                .map(|i| generate_demonstration(&w, &sample_task(&w, t, i).unwrap(), &format!("{i}")).unwrap())
                .collect();
            eps.insert(t, recs);
        }
        let cfg = EvalConfig {
            runs: 3,
            ..EvalConfig::default()
        };
        let rep = evaluate(&w, &RandomPolicy, &eps, &cfg);
        let mean = rep.per_type.values().map(|s| s.mean).sum::<f64>() / 2.0;
        assert!((rep.average.mean - mean).abs() < 1e-12);
        let oracle = evaluate(&w, &OraclePolicy, &eps, &cfg);
        assert_eq!(oracle.average, RateStats { mean: 100.0, std: 0.0 });
        let table = oracle.table();
        assert!(table.contains("Avg") && table.contains("100.00 ±   0.00"));
    }
}
