//! Quasi-static execution of the action primitives.
//!
//! `apply` is a pure function of `(state, action)`. Every primitive except
//! `Stop` picks the object snapped under `t_pick` and costs
//! `(|base -> pick| + |pick -> place|) / ee_speed + grasp + release` seconds.
//! A rejected action returns an error and the caller keeps its old state.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{
    reachable, same_kind_clearance, tool_extended_reach, tool_tip, GoalCondition, ObjectId, ObjectKind,
    PlacedObject, Pose2, RobotId, RobotSpec, SceneError, SceneState, Support,
};
use crate::world::World;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Primitive {
    Move,
    PreHook,
    Hook,
    PrePoke,
    Poke,
    Stop,
}

impl Primitive {
    pub const ALL: [Primitive; 6] = [
        Primitive::Move,
        Primitive::PreHook,
        Primitive::Hook,
        Primitive::PrePoke,
        Primitive::Poke,
        Primitive::Stop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Move => "move",
            Primitive::PreHook => "prehook",
            Primitive::Hook => "hook",
            Primitive::PrePoke => "prepoke",
            Primitive::Poke => "poke",
            Primitive::Stop => "stop",
        }
    }

    pub fn from_name(name: &str) -> Option<Primitive> {
        Primitive::ALL.into_iter().find(|p| p.name() == name)
    }

    /// Hook and poke carry the tool low enough to touch cubes.
    pub fn uses_tool_contact(self) -> bool {
        matches!(self, Primitive::Hook | Primitive::Poke)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveAction {
    pub robot: RobotId,
    pub primitive: Primitive,
    pub t_pick: Pose2,
    pub t_place: Pose2,
}

impl PrimitiveAction {
    pub fn stop(robot: RobotId) -> PrimitiveAction {
        PrimitiveAction {
            robot,
            primitive: Primitive::Stop,
            t_pick: Pose2::at(0.0, 0.0),
            t_place: Pose2::at(0.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Displacement {
    pub object: ObjectId,
    pub from: Pose2,
    pub to: Pose2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionReceipt {
    pub duration: f64,
    pub picked: Option<ObjectId>,
    pub displaced: Vec<Displacement>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum SimError {
    #[error("robot is not in the scene")]
    UnknownRobot,
    #[error("target is out of reach")]
    OutOfReach,
    #[error("hand is not empty")]
    HandNotEmpty,
    #[error("tool primitive without the tool")]
    HandEmpty,
    #[error("object is not on top of its stack")]
    NotTopOfStack,
    #[error("tool is not aligned with a cube")]
    ToolNotAligned,
    #[error("pose is off the table")]
    OffTable,
    #[error("nothing to pick at the given pose")]
    NothingToPick,
    #[error("placement overlaps another object")]
    Collision,
}

pub fn duration(world: &World, robot: &RobotSpec, t_pick: &Pose2, t_place: &Pose2) -> f64 {
    (robot.base.distance(t_pick) + t_pick.distance(t_place)) / world.ee_speed + world.grasp_time + world.release_time
}

/// Object snapped under `p`: the topmost free object whose center lies
/// within the snap radius (lowest id on ties).
pub fn object_at(world: &World, state: &SceneState, p: &Pose2) -> Option<ObjectId> {
    let mut best: Option<(&PlacedObject, f64)> = None;
    for o in &state.objects {
        if state.is_held(o.spec.id) || o.pose.distance(p) > world.snap_radius {
            continue;
        }
        let h = state.base_elevation(world, o.spec.id);
        best = match best {
            Some((b, bh)) if bh > h || (bh == h && b.spec.id < o.spec.id) => Some((b, bh)),
            _ => Some((o, h)),
        };
    }
    best.map(|(o, _)| o.spec.id)
}

fn unit(from: (f64, f64), to: (f64, f64)) -> (f64, f64) {
    let (dx, dy) = (to.0 - from.0, to.1 - from.1);
    let n = dx.hypot(dy);
    if n == 0.0 {
        (1.0, 0.0)
    } else {
        (dx / n, dy / n)
    }
}

fn angle_gap(a: f64, b: f64) -> f64 {
    crate::scene::normalize_angle(a - b).abs()
}

fn check_free_spot(
    world: &World,
    state: &SceneState,
    moving: ObjectId,
    kind: ObjectKind,
    x: f64,
    y: f64,
) -> Result<(), SimError> {
    let gap = same_kind_clearance(world, kind);
    let blocked = state.objects.iter().any(|o| {
        o.spec.id != moving
            && o.spec.kind == kind
            && o.support == Support::Table
            && !state.is_held(o.spec.id)
            && (o.pose.x - x).hypot(o.pose.y - y) < gap - 1e-9
    });
    if blocked {
        Err(SimError::Collision)
    } else {
        Ok(())
    }
}

pub fn apply(
    world: &World,
    state: &SceneState,
    action: &PrimitiveAction,
) -> Result<(SceneState, TransitionReceipt), SimError> {
    let robot = state.robot(action.robot).ok_or(SimError::UnknownRobot)?.clone();
    if action.primitive == Primitive::Stop {
        return Ok((
            state.clone(),
            TransitionReceipt {
                duration: 0.0,
                picked: None,
                displaced: Vec::new(),
            },
        ));
    }
    for p in [&action.t_pick, &action.t_place] {
        if !(p.is_finite() && world.on_table(p.x, p.y)) {
            return Err(SimError::OffTable);
        }
    }

    let picked_id = object_at(world, state, &action.t_pick).ok_or(SimError::NothingToPick)?;
    if state.holding[action.robot.index()].is_some() {
        return Err(SimError::HandNotEmpty);
    }
    let picked = state.object(picked_id).map_err(|_| SimError::NothingToPick)?.clone();
    let wants_tool = action.primitive != Primitive::Move;
    if wants_tool && picked.spec.kind != ObjectKind::Tool {
        return Err(SimError::HandEmpty);
    }
    if !reachable(&robot, picked.pose.x, picked.pose.y) {
        return Err(SimError::OutOfReach);
    }
    if !state.top_of_stack(picked_id).unwrap_or(false) {
        return Err(SimError::NotTopOfStack);
    }

    let mut next = state.clone();
    let mut displaced = Vec::new();
    match action.primitive {
        Primitive::Move => {
            if !reachable(&robot, action.t_place.x, action.t_place.y) {
                return Err(SimError::OutOfReach);
            }
            let support = if picked.spec.kind == ObjectKind::Cube {
                landing_support(world, state, picked_id, &action.t_place)
            } else {
                Support::Table
            };
            if support == Support::Table && picked.spec.kind != ObjectKind::Tool {
                check_free_spot(world, state, picked_id, picked.spec.kind, action.t_place.x, action.t_place.y)?;
            }
            let o = next.object_mut(picked_id).expect("picked object exists");
            o.pose = action.t_place;
            o.support = support;
            displaced.push(Displacement {
                object: picked_id,
                from: picked.pose,
                to: action.t_place,
            });
        }
        Primitive::PrePoke | Primitive::PreHook => {
            if !reachable(&robot, action.t_place.x, action.t_place.y) {
                return Err(SimError::OutOfReach);
            }
            let o = next.object_mut(picked_id).expect("picked object exists");
            o.pose = action.t_place;
            o.support = Support::Table;
            displaced.push(Displacement {
                object: picked_id,
                from: picked.pose,
                to: action.t_place,
            });
        }
        Primitive::Poke | Primitive::Hook => {
            let tip = tool_tip(world, &picked.pose);
            let target = state
                .objects
                .iter()
                .filter(|o| o.spec.kind == ObjectKind::Cube && !state.is_held(o.spec.id))
                .map(|o| (o, (o.pose.x - tip.0).hypot(o.pose.y - tip.1)))
                .filter(|(_, d)| *d <= world.align_tolerance)
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.spec.id.cmp(&b.0.spec.id)))
                .map(|(o, _)| o.clone())
                .ok_or(SimError::ToolNotAligned)?;
            let base = (robot.base.x, robot.base.y);
            let cube = (target.pose.x, target.pose.y);
            let away = unit(base, cube);
            if angle_gap(picked.pose.theta, away.1.atan2(away.0)) > world.align_angle_tolerance {
                return Err(SimError::ToolNotAligned);
            }
            if target.support != Support::Table || !state.top_of_stack(target.spec.id).unwrap_or(false) {
                return Err(SimError::NotTopOfStack);
            }
            let dist = (cube.0 - base.0).hypot(cube.1 - base.1);
            if dist > tool_extended_reach(world, &robot) {
                return Err(SimError::OutOfReach);
            }
            let mut push = action.t_place.distance(&target.pose).min(world.max_push);
            let (new_cube, new_tip) = if action.primitive == Primitive::Poke {
                let c = (cube.0 + push * away.0, cube.1 + push * away.1);
                (c, cube)
            } else {
                push = push.min(dist);
                let c = (cube.0 - push * away.0, cube.1 - push * away.1);
                if !reachable(&robot, c.0, c.1) {
                    return Err(SimError::OutOfReach);
                }
                (c, (c.0 + world.tool_standoff * away.0, c.1 + world.tool_standoff * away.1))
            };
            if !world.on_table(new_cube.0, new_cube.1) {
                return Err(SimError::OffTable);
            }
            check_free_spot(world, state, target.spec.id, ObjectKind::Cube, new_cube.0, new_cube.1)?;
            let cube_to = Pose2::new(new_cube.0, new_cube.1, target.pose.theta);
            let tool_to = Pose2::new(
                new_tip.0 - world.tool_long_arm * away.0,
                new_tip.1 - world.tool_long_arm * away.1,
                away.1.atan2(away.0),
            );
            next.object_mut(target.spec.id).expect("target exists").pose = cube_to;
            let tool = next.object_mut(picked_id).expect("tool exists");
            tool.pose = tool_to;
            tool.support = Support::Table;
            displaced.push(Displacement {
                object: target.spec.id,
                from: target.pose,
                to: cube_to,
            });
            displaced.push(Displacement {
                object: picked_id,
                from: picked.pose,
                to: tool_to,
            });
        }
        Primitive::Stop => unreachable!("handled above"),
    }

    let dt = duration(world, &robot, &action.t_pick, &action.t_place);
    next.clock += dt;
    Ok((
        next,
        TransitionReceipt {
            duration: dt,
            picked: Some(picked_id),
            displaced,
        },
    ))
}

/// Support for a cube released at `at`: the topmost cube or pad whose center
/// is within the snap radius, else the table.
fn landing_support(world: &World, state: &SceneState, moving: ObjectId, at: &Pose2) -> Support {
    state
        .objects
        .iter()
        .filter(|o| {
            o.spec.id != moving
                && o.spec.kind != ObjectKind::Tool
                && !state.is_held(o.spec.id)
                && o.pose.distance(at) <= world.snap_radius
                && !state
                    .objects
                    .iter()
                    .any(|x| x.spec.id != moving && x.support == Support::On(o.spec.id))
        })
        .max_by(|a, b| {
            state
                .base_elevation(world, a.spec.id)
                .total_cmp(&state.base_elevation(world, b.spec.id))
                .then(b.spec.id.cmp(&a.spec.id))
        })
        .map(|o| Support::On(o.spec.id))
        .unwrap_or(Support::Table)
}

/// Every atom holds: the top object rests directly on the bottom object with
/// centers within the snap radius.
pub fn check_goal(world: &World, state: &SceneState, goal: &GoalCondition) -> Result<bool, SceneError> {
    let mut all = true;
    for atom in &goal.atoms {
        let tops = state.find_all(atom.top);
        let bottoms = state.find_all(atom.bottom);
        if tops.is_empty() {
            return Err(SceneError::UnknownColorKind(atom.top));
        }
        if bottoms.is_empty() {
            return Err(SceneError::UnknownColorKind(atom.bottom));
        }
        let holds = tops.iter().any(|t| {
            !state.is_held(t.spec.id)
                && bottoms.iter().any(|b| {
                    t.support == Support::On(b.spec.id) && t.pose.distance(&b.pose) <= world.snap_radius
                })
        });
        all &= holds;
    }
    Ok(all)
}

pub fn within_budget(state: &SceneState, t_max: f64) -> bool {
    state.clock <= t_max
}
