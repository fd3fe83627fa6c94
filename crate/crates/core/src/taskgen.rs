//! Procedural task generation by rejection sampling.
//!
//! An attempt draws robot models and colors, a goal, target placements and
//! distractors from one seeded stream. Attempts that fail
//! [`validate_instance`] are discarded whole and redrawn from the same
//! stream, up to [`MAX_ATTEMPTS`].

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entity::{alignment_pose, poke_destination};
use crate::scene::{
    reachable, reachable_pose, shared_slots, tool_extended_reach, tool_tip, BodyColor, Color, GoalAtom,
    GoalCondition, ObjectId, ObjectKind, ObjectRef, ObjectSpec, PlacedObject, Pose2, RobotId, RobotModel,
    RobotSpec, SceneState, Support,
};
use crate::sim::Primitive;
use crate::world::World;

pub const MAX_ATTEMPTS: usize = 10_000;
const PLACEMENT_TRIES: usize = 200;
const FOOTPRINT_GAP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskType {
    Pass,
    Pass2,
    Stack,
    Stack2,
    Poke,
    PokeStack,
    Hook,
    HookStack,
}

impl TaskType {
    pub const ALL: [TaskType; 8] = [
        TaskType::Pass,
        TaskType::Pass2,
        TaskType::Stack,
        TaskType::Stack2,
        TaskType::Poke,
        TaskType::PokeStack,
        TaskType::Hook,
        TaskType::HookStack,
    ];

    /// Lowercase identifier used for directories, CLI flags and templates.
    pub fn slug(self) -> &'static str {
        match self {
            TaskType::Pass => "pass",
            TaskType::Pass2 => "pass2",
            TaskType::Stack => "stack",
            TaskType::Stack2 => "stack2",
            TaskType::Poke => "poke",
            TaskType::PokeStack => "poke_stack",
            TaskType::Hook => "hook",
            TaskType::HookStack => "hook_stack",
        }
    }

    /// Column label in result tables.
    pub fn label(self) -> &'static str {
        match self {
            TaskType::Pass => "Pass",
            TaskType::Pass2 => "Pass2",
            TaskType::Stack => "Stack",
            TaskType::Stack2 => "Stack2",
            TaskType::Poke => "Poke",
            TaskType::PokeStack => "Poke&Stack",
            TaskType::Hook => "Hook",
            TaskType::HookStack => "Hook&Stack",
        }
    }

    pub fn index(self) -> usize {
        TaskType::ALL.iter().position(|t| *t == self).expect("listed")
    }

    /// Inclusive object-count range.
    pub fn object_range(self) -> (usize, usize) {
        match self {
            TaskType::Pass => (3, 6),
            TaskType::Pass2 => (6, 8),
            TaskType::Stack => (2, 5),
            TaskType::Stack2 => (4, 6),
            TaskType::Poke => (4, 6),
            TaskType::PokeStack => (3, 5),
            TaskType::Hook => (3, 5),
            TaskType::HookStack => (3, 6),
        }
    }

    pub fn subtask_count(self) -> usize {
        match self {
            TaskType::Pass => 2,
            TaskType::Pass2 => 4,
            TaskType::Stack => 2,
            TaskType::Stack2 => 4,
            TaskType::Poke => 3,
            TaskType::PokeStack => 5,
            TaskType::Hook => 4,
            TaskType::HookStack => 7,
        }
    }

    pub fn atom_count(self) -> usize {
        match self {
            TaskType::Pass2 | TaskType::Stack2 => 2,
            _ => 1,
        }
    }

    /// Whether goals put cubes on pads (else on cubes).
    pub fn goal_on_pad(self) -> bool {
        matches!(self, TaskType::Pass | TaskType::Pass2 | TaskType::Poke | TaskType::Hook)
    }

    pub fn uses_tool(self) -> bool {
        matches!(self, TaskType::Poke | TaskType::PokeStack | TaskType::Hook | TaskType::HookStack)
    }

    /// Whether pads appear in the scene at all.
    pub fn has_pads(self) -> bool {
        self.goal_on_pad()
    }

    /// Goal objects plus the tool.
    pub fn essential_count(self) -> usize {
        2 * self.atom_count() + usize::from(self.uses_tool())
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown task type '{0}'")]
pub struct UnknownTaskType(pub String);

impl FromStr for TaskType {
    type Err = UnknownTaskType;

    fn from_str(s: &str) -> Result<TaskType, UnknownTaskType> {
        let norm = s.to_ascii_lowercase().replace(['&', '-'], "_");
        TaskType::ALL
            .into_iter()
            .find(|t| t.slug() == norm || t.slug().replace('_', "") == norm)
            .ok_or_else(|| UnknownTaskType(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub task_type: TaskType,
    pub scene0: SceneState,
    pub goal: GoalCondition,
    pub seed: u64,
    pub robot_pair: (RobotSpec, RobotSpec),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenError {
    #[error("no valid {task_type} instance after {attempts} attempts (seed {seed})")]
    GenerationExhausted {
        task_type: TaskType,
        seed: u64,
        attempts: usize,
    },
}

/// Stateless 64-bit mixer used to derive per-instance seeds.
pub fn mix_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut z = master
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of instance `index` of `task_type` under a master seed.
pub fn instance_seed(master: u64, task_type: TaskType, index: u64) -> u64 {
    mix_seed(master, task_type.index() as u64 + 1, index)
}

pub fn sample_task(world: &World, task_type: TaskType, seed: u64) -> Result<TaskInstance, GenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        if let Some(instance) = draw(world, task_type, seed, &mut rng) {
            if validate_instance(world, &instance) {
                return Ok(instance);
            }
        }
    }
    Err(GenError::GenerationExhausted {
        task_type,
        seed,
        attempts: MAX_ATTEMPTS,
    })
}

/// Bounding shape used for overlap tests at generation time.
fn clearance(world: &World, a: &PlacedObject, b: &PlacedObject) -> f64 {
    fn radius(world: &World, kind: ObjectKind) -> f64 {
        match kind {
            ObjectKind::Cube => world.cube_side * std::f64::consts::FRAC_1_SQRT_2,
            ObjectKind::Pad => world.pad_radius,
            ObjectKind::Tool => world.tool_short_arm / 2.0,
        }
    }
    let gap = footprint_distance(world, a, b.pose.x, b.pose.y);
    let gap = if b.spec.kind == ObjectKind::Tool {
        footprint_distance(world, b, a.pose.x, a.pose.y).min(gap)
    } else {
        gap
    };
    gap - radius(world, a.spec.kind) - radius(world, b.spec.kind)
}

/// Distance from `(x, y)` to the object's center, or to the tool's long arm.
fn footprint_distance(world: &World, o: &PlacedObject, x: f64, y: f64) -> f64 {
    if o.spec.kind != ObjectKind::Tool {
        return (o.pose.x - x).hypot(o.pose.y - y);
    }
    let tip = tool_tip(world, &o.pose);
    let (ax, ay) = (o.pose.x, o.pose.y);
    let (dx, dy) = (tip.0 - ax, tip.1 - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((x - ax) * dx + (y - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    (ax + t * dx - x).hypot(ay + t * dy - y)
}

fn inside_table(world: &World, o: &PlacedObject) -> bool {
    let m = world.placement_margin;
    let ok = |x: f64, y: f64| {
        x >= world.table_x_min + m && x <= world.table_x_max - m && y >= world.table_y_min + m && y <= world.table_y_max - m
    };
    ok(o.pose.x, o.pose.y)
        && (o.spec.kind != ObjectKind::Tool || {
            let tip = tool_tip(world, &o.pose);
            ok(tip.0, tip.1)
        })
}

/// Where an object of a given role may be placed.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Role {
    Anywhere,
    /// Inside this robot's disk only.
    OwnedBy(RobotId),
    /// Outside both disks; the holder can line up a poke that lands in the
    /// partner's disk.
    PokeTarget(RobotId),
    /// Outside both disks, nearer to the hooker, who can line up a hook.
    HookTarget(RobotId),
}

fn role_allows(world: &World, r: [&RobotSpec; 2], role: Role, p: &Pose2) -> bool {
    let robot = |id: RobotId| r[id.index()];
    let nobody = || !r.iter().any(|x| reachable(x, p.x, p.y));
    match role {
        Role::Anywhere => true,
        Role::OwnedBy(id) => reachable(robot(id), p.x, p.y) && !reachable(robot(id.other()), p.x, p.y),
        Role::PokeTarget(h) => {
            nobody()
                && can_align(world, robot(h), p, Primitive::PrePoke)
                && can_poke_across(world, robot(h), robot(h.other()), p)
        }
        Role::HookTarget(h) => {
            nobody()
                && robot(h).base.distance(p) < robot(h.other()).base.distance(p)
                && can_align(world, robot(h), p, Primitive::PreHook)
        }
    }
}

fn draw(world: &World, task_type: TaskType, seed: u64, rng: &mut ChaCha8Rng) -> Option<TaskInstance> {
    let models = [RobotModel::UR5, RobotModel::UR10];
    let bodies = [BodyColor::Red, BodyColor::White];
    let r0 = RobotSpec::new(world, RobotId::R0, models[rng.gen_range(0..2)], bodies[rng.gen_range(0..2)]);
    let r1 = RobotSpec::new(world, RobotId::R1, models[rng.gen_range(0..2)], bodies[rng.gen_range(0..2)]);
    let side = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.5) { RobotId::R0 } else { RobotId::R1 };

    let atoms_n = task_type.atom_count();
    let mut cube_colors = Color::BLOCK.to_vec();
    cube_colors.shuffle(rng);
    let mut pad_colors = Color::BLOCK.to_vec();
    pad_colors.shuffle(rng);
    let mut atoms = Vec::with_capacity(atoms_n);
    for k in 0..atoms_n {
        if task_type.goal_on_pad() {
            atoms.push(GoalAtom::on_pad(cube_colors[k], pad_colors[k]));
        } else {
            atoms.push(GoalAtom::on_cube(cube_colors[2 * k], cube_colors[2 * k + 1]));
        }
    }
    let goal = GoalCondition { atoms };

    let mut roles: Vec<(ObjectRef, Role)> = Vec::new();
    if task_type.uses_tool() {
        let holder = side(rng);
        let other = holder.other();
        let a = goal.atoms[0];
        roles.push((ObjectRef::tool(), Role::OwnedBy(holder)));
        match task_type {
            TaskType::Poke => {
                roles.push((a.top, Role::PokeTarget(holder)));
                roles.push((a.bottom, Role::OwnedBy(other)));
            }
            TaskType::PokeStack => {
                roles.push((a.top, Role::PokeTarget(holder)));
                roles.push((a.bottom, Role::PokeTarget(holder)));
            }
            TaskType::Hook => {
                roles.push((a.top, Role::HookTarget(holder)));
                roles.push((a.bottom, Role::OwnedBy(other)));
            }
            _ => {
                roles.push((a.top, Role::HookTarget(holder)));
                roles.push((a.bottom, Role::HookTarget(other)));
            }
        }
    } else {
        for a in &goal.atoms {
            let s = side(rng);
            roles.push((a.top, Role::OwnedBy(s)));
            roles.push((a.bottom, Role::OwnedBy(s.other())));
        }
    }

    let (lo, hi) = task_type.object_range();
    let total = rng.gen_range(lo..=hi);
    let goal_refs = goal.referenced();
    for _ in roles.len()..total {
        let kind = if task_type.has_pads() && rng.gen_bool(0.5) {
            ObjectKind::Pad
        } else {
            ObjectKind::Cube
        };
        let free: Vec<Color> = Color::BLOCK
            .into_iter()
            .filter(|c| !goal_refs.contains(&ObjectRef { color: *c, kind }))
            .collect();
        roles.push((
            ObjectRef {
                color: *free.choose(rng)?,
                kind,
            },
            Role::Anywhere,
        ));
    }

    let slots = shared_slots(world, &r0, &r1);
    let m = world.placement_margin;
    let mut objects: Vec<PlacedObject> = Vec::with_capacity(roles.len());
    for (i, (what, role)) in roles.into_iter().enumerate() {
        let mut placed = None;
        for _ in 0..PLACEMENT_TRIES {
            let x = rng.gen_range(world.table_x_min + m..=world.table_x_max - m);
            let y = rng.gen_range(world.table_y_min + m..=world.table_y_max - m);
            let theta = if what.kind == ObjectKind::Tool {
                rng.gen_range(-PI..PI)
            } else {
                0.0
            };
            let candidate = PlacedObject {
                spec: ObjectSpec {
                    id: ObjectId(i as u32),
                    kind: what.kind,
                    color: what.color,
                },
                pose: Pose2::new(x, y, theta),
                support: Support::Table,
            };
            let clear = role_allows(world, [&r0, &r1], role, &candidate.pose)
                && inside_table(world, &candidate)
                && objects.iter().all(|o| clearance(world, &candidate, o) >= FOOTPRINT_GAP)
                && slots
                    .iter()
                    .all(|s| footprint_distance(world, &candidate, s.x, s.y) >= world.shared_keepout);
            if clear {
                placed = Some(candidate);
                break;
            }
        }
        objects.push(placed?);
    }
    // ids follow the goal-first order above; keep them dense and sorted
    objects.sort_by_key(|o| o.spec.id);

    let scene0 = SceneState::new(vec![r0.clone(), r1.clone()], objects);
    Some(TaskInstance {
        task_type,
        scene0,
        goal,
        seed,
        robot_pair: (r0, r1),
    })
}

/// Robots whose plain reach covers `(x, y)`.
fn owners(scene: &SceneState, x: f64, y: f64) -> Vec<RobotId> {
    scene.robots.iter().filter(|r| reachable(r, x, y)).map(|r| r.id).collect()
}

fn sole_owner(scene: &SceneState, o: &PlacedObject) -> Option<RobotId> {
    match owners(scene, o.pose.x, o.pose.y).as_slice() {
        [only] => Some(*only),
        _ => None,
    }
}

/// The tool user can line the tool up with `cube` along its ray.
fn can_align(world: &World, robot: &RobotSpec, cube: &Pose2, primitive: Primitive) -> bool {
    robot.base.distance(cube) <= tool_extended_reach(world, robot)
        && reachable_pose(robot, &alignment_pose(world, robot, cube, primitive))
}

fn can_poke_across(world: &World, robot: &RobotSpec, other: &RobotSpec, cube: &Pose2) -> bool {
    let (dest, push) = poke_destination(world, robot, other, cube);
    push <= world.max_push && reachable_pose(other, &dest) && world.on_table(dest.x, dest.y)
}

/// Type-specific and structural validity, including a full oracle dry run.
pub fn validate_instance(world: &World, instance: &TaskInstance) -> bool {
    static_checks(world, instance).is_ok() && crate::oracle::run_oracle(world, instance).is_ok()
}

/// Predicates that do not need the simulator. `Err` names the first failure.
pub fn static_checks(world: &World, instance: &TaskInstance) -> Result<(), String> {
    let t = instance.task_type;
    let scene = &instance.scene0;
    let (lo, hi) = t.object_range();
    if scene.objects.len() < lo || scene.objects.len() > hi {
        return Err(format!("{} objects outside {lo}-{hi}", scene.objects.len()));
    }
    if scene.robots.len() != 2
        || scene.robots[0].id != RobotId::R0
        || scene.robots[1].id != RobotId::R1
        || scene.robots[0] != instance.robot_pair.0
        || scene.robots[1] != instance.robot_pair.1
    {
        return Err("robot pair mismatch".into());
    }
    for r in &scene.robots {
        let expected = RobotSpec::new(world, r.id, r.model, r.body_color);
        if *r != expected {
            return Err(format!("robot {:?} off its fixed base or nominal reach", r.id));
        }
    }
    let tools: Vec<&PlacedObject> = scene.objects.iter().filter(|o| o.spec.kind == ObjectKind::Tool).collect();
    if tools.len() != usize::from(t.uses_tool()) {
        return Err("wrong tool count".into());
    }
    for o in &scene.objects {
        let yellow = o.spec.color == Color::Yellow;
        if yellow != (o.spec.kind == ObjectKind::Tool) {
            return Err(format!("{} has the wrong color", o.spec.id));
        }
        if o.spec.kind == ObjectKind::Pad && !t.has_pads() {
            return Err("pad in a cube-only task".into());
        }
        if o.support != Support::Table {
            return Err("initial stacks are not allowed".into());
        }
        if !inside_table(world, o) {
            return Err(format!("{} is off the table", o.spec.id));
        }
    }
    for (i, a) in scene.objects.iter().enumerate() {
        for b in &scene.objects[i + 1..] {
            if clearance(world, a, b) < FOOTPRINT_GAP - 1e-9 {
                return Err(format!("{} overlaps {}", a.spec.id, b.spec.id));
            }
        }
    }
    let goal = &instance.goal;
    if !goal.is_well_formed() || goal.atoms.len() != t.atom_count() {
        return Err("malformed goal".into());
    }
    let bottom_kind = if t.goal_on_pad() { ObjectKind::Pad } else { ObjectKind::Cube };
    if goal.atoms.iter().any(|a| a.bottom.kind != bottom_kind) {
        return Err("goal bottom kind does not match the task".into());
    }
    for r in goal.referenced() {
        if scene.find_all(r).len() != 1 {
            return Err(format!("goal object {r} is not unique"));
        }
    }
    let get = |r: ObjectRef| scene.find(r).expect("checked unique");
    let robot = |id: RobotId| scene.robot(id).expect("two robots");

    match t {
        TaskType::Pass | TaskType::Pass2 | TaskType::Stack | TaskType::Stack2 => {
            for a in &goal.atoms {
                let top = sole_owner(scene, get(a.top)).ok_or("top object not owned by exactly one robot")?;
                let bottom = sole_owner(scene, get(a.bottom)).ok_or("bottom object not owned by exactly one robot")?;
                if top == bottom {
                    return Err("atom objects on the same side".into());
                }
            }
        }
        TaskType::Poke | TaskType::PokeStack | TaskType::Hook | TaskType::HookStack => {
            let tool = tools[0];
            let holder = sole_owner(scene, tool).ok_or("tool not owned by exactly one robot")?;
            let other = holder.other();
            let targets: Vec<&PlacedObject> = match t {
                TaskType::Poke | TaskType::Hook => vec![get(goal.atoms[0].top)],
                _ => vec![get(goal.atoms[0].top), get(goal.atoms[0].bottom)],
            };
            for c in &targets {
                if !owners(scene, c.pose.x, c.pose.y).is_empty() {
                    return Err("tool target reachable without the tool".into());
                }
            }
            match t {
                TaskType::Poke | TaskType::PokeStack => {
                    for c in &targets {
                        if !can_align(world, robot(holder), &c.pose, Primitive::PrePoke) {
                            return Err("poke target outside tool reach".into());
                        }
                        if !can_poke_across(world, robot(holder), robot(other), &c.pose) {
                            return Err("no push destination".into());
                        }
                    }
                }
                TaskType::Hook => {
                    if !can_align(world, robot(holder), &targets[0].pose, Primitive::PreHook) {
                        return Err("hook target outside tool reach".into());
                    }
                }
                _ => {
                    // each cube is hooked by the robot it is nearer to, so the
                    // tool has to change hands
                    let (top, bottom) = (targets[0], targets[1]);
                    let hookable = |id: RobotId, c: &PlacedObject| {
                        can_align(world, robot(id), &c.pose, Primitive::PreHook)
                            && robot(id).base.distance(&c.pose) < robot(id.other()).base.distance(&c.pose)
                    };
                    if !hookable(holder, top) {
                        return Err("top cube must be hookable by the tool holder".into());
                    }
                    if !hookable(other, bottom) {
                        return Err("bottom cube must be hookable by the partner".into());
                    }
                }
            }
            if t.goal_on_pad() {
                let pad = get(goal.atoms[0].bottom);
                if sole_owner(scene, pad) != Some(other) {
                    return Err("pad must be owned by the receiving robot only".into());
                }
            }
        }
    }
    Ok(())
}
