//! Entity references `(p, q)` of a sub-task and their resolution against a
//! live scene into a concrete `PrimitiveAction`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{
    reachable, shared_slots, tool_extended_reach, tool_tip, Color, ObjectKind, ObjectRef, Pose2, RobotId,
    RobotSpec, SceneState,
};
use crate::sim::{Primitive, PrimitiveAction};
use crate::world::World;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Site {
    /// First free hand-off slot reachable by both robots.
    SharedPoint,
    PadOf(Color),
    StackOn(Color),
    /// Tool grip pose that lines the tool up with a cube along the acting
    /// robot's base ray.
    AlignWith(Color),
    /// Nearest point on the acting robot's ray inside its own disk.
    OwnWorkspace,
    /// Nearest point on the acting robot's ray inside the other robot's disk.
    OtherWorkspace,
    /// Parking spot in front of the acting robot.
    ReturnSpot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityRef {
    Object(ObjectRef),
    Site(Site),
    None,
}

impl fmt::Display for EntityRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntityRef::Object(o) => write!(f, "{o}"),
            EntityRef::Site(s) => write!(f, "{s:?}"),
            EntityRef::None => write!(f, "none"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResolveError {
    #[error("cannot resolve {0}")]
    UnresolvableEntity(String),
    #[error("{primitive:?} cannot take {pick} -> {place}")]
    Unsupported {
        primitive: Primitive,
        pick: EntityRef,
        place: EntityRef,
    },
}

fn unresolvable(what: impl fmt::Display) -> ResolveError {
    ResolveError::UnresolvableEntity(what.to_string())
}

fn unit(from: &Pose2, to: &Pose2) -> (f64, f64) {
    let (dx, dy) = (to.x - from.x, to.y - from.y);
    let n = dx.hypot(dy);
    if n == 0.0 {
        (1.0, 0.0)
    } else {
        (dx / n, dy / n)
    }
}

/// Shortest push `s >= 0` so that `cube + s * dir` lies within `radius` of
/// `center`. `None` when the ray misses the disk.
pub fn push_into_disk(cube: &Pose2, dir: (f64, f64), center: &Pose2, radius: f64) -> Option<f64> {
    let (wx, wy) = (cube.x - center.x, cube.y - center.y);
    let w2 = wx * wx + wy * wy;
    if w2 <= radius * radius {
        return Some(0.0);
    }
    let b = wx * dir.0 + wy * dir.1;
    let disc = b * b - (w2 - radius * radius);
    if disc < 0.0 {
        return None;
    }
    let s = -b - disc.sqrt();
    (s >= 0.0).then_some(s)
}

/// Grip pose that puts the tool tip `standoff` short of (poke) or beyond
/// (hook) the cube on the robot's base ray.
pub fn alignment_pose(world: &World, robot: &RobotSpec, cube: &Pose2, primitive: Primitive) -> Pose2 {
    let u = unit(&robot.base, cube);
    let sign = if primitive == Primitive::PreHook { 1.0 } else { -1.0 };
    let tip = (cube.x + sign * world.tool_standoff * u.0, cube.y + sign * world.tool_standoff * u.1);
    Pose2::new(
        tip.0 - world.tool_long_arm * u.0,
        tip.1 - world.tool_long_arm * u.1,
        u.1.atan2(u.0),
    )
}

/// Where a poke by `robot` should leave `cube`: just inside the other
/// robot's disk. Returns the destination and push length; when the ray misses
/// the disk the push is the maximum and the destination falls short.
pub fn poke_destination(world: &World, robot: &RobotSpec, other: &RobotSpec, cube: &Pose2) -> (Pose2, f64) {
    let u = unit(&robot.base, cube);
    let s = push_into_disk(cube, u, &other.base, other.reach_radius - world.inside_margin).unwrap_or(world.max_push);
    (Pose2::at(cube.x + s * u.0, cube.y + s * u.1), s)
}

/// Where a hook by `robot` should leave `cube`: just inside its own disk.
pub fn hook_destination(world: &World, robot: &RobotSpec, cube: &Pose2) -> (Pose2, f64) {
    let u = unit(&robot.base, cube);
    let d = robot.base.distance(cube);
    let s = (d - (robot.reach_radius - world.inside_margin)).max(0.0);
    (Pose2::at(cube.x - s * u.0, cube.y - s * u.1), s)
}

/// First shared slot with no object (other than `moving`) within the
/// keep-out radius.
pub fn free_shared_slot(world: &World, state: &SceneState, moving: Option<&ObjectRef>) -> Option<Pose2> {
    let (r0, r1) = (state.robot(RobotId::R0)?, state.robot(RobotId::R1)?);
    let mover = moving.and_then(|m| state.find(*m).ok()).map(|o| o.spec.id);
    shared_slots(world, r0, r1).into_iter().find(|slot| {
        state.objects.iter().all(|o| {
            Some(o.spec.id) == mover || state.is_held(o.spec.id) || o.pose.distance(slot) >= world.shared_keepout
        })
    })
}

pub fn return_spot(robot: &RobotSpec) -> Pose2 {
    let toward_center = if robot.base.x <= 0.0 { 1.0 } else { -1.0 };
    Pose2::at(robot.base.x + 0.35 * toward_center, robot.base.y - 0.45)
}

/// Concrete action for `(robot, primitive, pick, place)` on the live scene.
pub fn resolve_action(
    world: &World,
    state: &SceneState,
    robot_id: RobotId,
    primitive: Primitive,
    pick: &EntityRef,
    place: &EntityRef,
) -> Result<PrimitiveAction, ResolveError> {
    if primitive == Primitive::Stop {
        return Ok(PrimitiveAction::stop(robot_id));
    }
    let robot = state.robot(robot_id).ok_or_else(|| unresolvable(format!("{robot_id:?}")))?;
    let unsupported = || ResolveError::Unsupported {
        primitive,
        pick: *pick,
        place: *place,
    };
    let EntityRef::Object(pick_ref) = pick else {
        return Err(unsupported());
    };
    let EntityRef::Site(site) = place else {
        return Err(unsupported());
    };
    let object = state.find(*pick_ref).map_err(|_| unresolvable(pick))?;
    match (primitive, site) {
        (Primitive::Move, _) => {
            let at = match site {
                Site::SharedPoint => {
                    free_shared_slot(world, state, Some(pick_ref)).ok_or_else(|| unresolvable(place))?
                }
                Site::PadOf(c) => state.find(ObjectRef::pad(*c)).map_err(|_| unresolvable(place))?.pose,
                Site::StackOn(c) => {
                    let bottom = state.find(ObjectRef::cube(*c)).map_err(|_| unresolvable(place))?;
                    if bottom.spec.id == object.spec.id {
                        return Err(unresolvable(place));
                    }
                    bottom.pose
                }
                Site::ReturnSpot => return_spot(robot),
                _ => return Err(unsupported()),
            };
            Ok(PrimitiveAction {
                robot: robot_id,
                primitive,
                t_pick: object.pose,
                t_place: Pose2::new(at.x, at.y, object.pose.theta),
            })
        }
        (Primitive::PrePoke | Primitive::PreHook, Site::AlignWith(c)) => {
            if pick_ref.kind != ObjectKind::Tool {
                return Err(unsupported());
            }
            let cube = state.find(ObjectRef::cube(*c)).map_err(|_| unresolvable(place))?;
            Ok(PrimitiveAction {
                robot: robot_id,
                primitive,
                t_pick: object.pose,
                t_place: alignment_pose(world, robot, &cube.pose, primitive),
            })
        }
        (Primitive::Poke, Site::OtherWorkspace) | (Primitive::Hook, Site::OwnWorkspace) => {
            if pick_ref.kind != ObjectKind::Cube {
                return Err(unsupported());
            }
            let tool = state.tool().ok_or_else(|| unresolvable("tool"))?;
            let dest = if primitive == Primitive::Poke {
                let other = state.robot(robot_id.other()).ok_or_else(|| unresolvable(place))?;
                poke_destination(world, robot, other, &object.pose).0
            } else {
                hook_destination(world, robot, &object.pose).0
            };
            Ok(PrimitiveAction {
                robot: robot_id,
                primitive,
                t_pick: tool.pose,
                t_place: dest,
            })
        }
        _ => Err(unsupported()),
    }
}

/// Static feasibility of `(robot, primitive, pick, place)` on `state`:
/// plain reach for grasp and release points, tool-extended reach for the
/// cube of a hook or poke together with an aligned tool and an attainable
/// destination.
pub fn action_feasible(world: &World, state: &SceneState, action: &PrimitiveAction) -> bool {
    let Some(robot) = state.robot(action.robot) else {
        return false;
    };
    let pick_ok = reachable(robot, action.t_pick.x, action.t_pick.y);
    match action.primitive {
        Primitive::Stop => true,
        Primitive::Move | Primitive::PrePoke | Primitive::PreHook => {
            pick_ok && reachable(robot, action.t_place.x, action.t_place.y) && world.on_table(action.t_place.x, action.t_place.y)
        }
        Primitive::Poke | Primitive::Hook => {
            if !pick_ok {
                return false;
            }
            let tip = tool_tip(world, &action.t_pick);
            let Some(cube) = state
                .objects
                .iter()
                .filter(|o| o.spec.kind == ObjectKind::Cube)
                .min_by(|a, b| {
                    let da = (a.pose.x - tip.0).hypot(a.pose.y - tip.1);
                    let db = (b.pose.x - tip.0).hypot(b.pose.y - tip.1);
                    da.total_cmp(&db)
                })
            else {
                return false;
            };
            let aligned = (cube.pose.x - tip.0).hypot(cube.pose.y - tip.1) <= world.align_tolerance;
            let u = unit(&robot.base, &cube.pose);
            let angle_ok =
                crate::scene::normalize_angle(action.t_pick.theta - u.1.atan2(u.0)).abs() <= world.align_angle_tolerance;
            let in_tool_reach = robot.base.distance(&cube.pose) <= tool_extended_reach(world, robot);
            let push = action.t_place.distance(&cube.pose);
            let dest_ok = world.on_table(action.t_place.x, action.t_place.y) && push <= world.max_push + 1e-9;
            let lands_ok = if action.primitive == Primitive::Poke {
                state
                    .robot(action.robot.other())
                    .is_some_and(|o| reachable(o, action.t_place.x, action.t_place.y))
            } else {
                reachable(robot, action.t_place.x, action.t_place.y)
            };
            aligned && angle_ok && in_tool_reach && dest_ok && lands_ok
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{BodyColor, ObjectId, ObjectSpec, PlacedObject, RobotModel, Support};

    fn two_ur5(objects: Vec<PlacedObject>) -> SceneState {
        let w = World::default();
        SceneState::new(
            vec![
                RobotSpec::new(&w, RobotId::R0, RobotModel::UR5, BodyColor::Red),
                RobotSpec::new(&w, RobotId::R1, RobotModel::UR5, BodyColor::White),
            ],
            objects,
        )
    }

    fn placed(id: u32, kind: ObjectKind, color: Color, x: f64, y: f64) -> PlacedObject {
        PlacedObject {
            spec: ObjectSpec {
                id: ObjectId(id),
                kind,
                color,
            },
            pose: Pose2::at(x, y),
            support: Support::Table,
        }
    }

    #[test]
    fn push_into_disk_hits_the_boundary() {
        let center = Pose2::at(0.75, 0.0);
        let cube = Pose2::at(0.0, 0.45);
        let n = (0.75f64 * 0.75 + 0.45 * 0.45).sqrt();
        let dir = (0.75 / n, 0.45 / n);
        let s = push_into_disk(&cube, dir, &center, 0.8).unwrap();
        let end = Pose2::at(cube.x + s * dir.0, cube.y + s * dir.1);
        assert!((end.distance(&center) - 0.8).abs() < 1e-12);
        assert_eq!(push_into_disk(&Pose2::at(0.5, 0.0), dir, &center, 0.8), Some(0.0));
        // pointing away from the disk
        assert_eq!(push_into_disk(&cube, (-dir.0, -dir.1), &center, 0.8), None);
    }

    #[test]
    fn shared_point_skips_occupied_slots() {
        let w = World::default();
        let s = two_ur5(vec![
            placed(1, ObjectKind::Cube, Color::Red, -0.5, 0.1),
            placed(2, ObjectKind::Cube, Color::Blue, 0.0, 0.0),
        ]);
        let a = resolve_action(
            &w,
            &s,
            RobotId::R0,
            Primitive::Move,
            &EntityRef::Object(ObjectRef::cube(Color::Red)),
            &EntityRef::Site(Site::SharedPoint),
        )
        .unwrap();
        assert_eq!((a.t_place.x, a.t_place.y), (0.0, w.shared_slot_spacing));
    }

    #[test]
    fn mismatched_refs_are_rejected() {
        let w = World::default();
        let s = two_ur5(vec![placed(1, ObjectKind::Cube, Color::Red, -0.5, 0.1)]);
        let red = EntityRef::Object(ObjectRef::cube(Color::Red));
        assert!(matches!(
            resolve_action(&w, &s, RobotId::R0, Primitive::Move, &red, &EntityRef::Site(Site::AlignWith(Color::Red))),
            Err(ResolveError::Unsupported { .. })
        ));
        assert!(matches!(
            resolve_action(&w, &s, RobotId::R0, Primitive::Move, &red, &EntityRef::Site(Site::PadOf(Color::Blue))),
            Err(ResolveError::UnresolvableEntity(_))
        ));
        let a = resolve_action(&w, &s, RobotId::R0, Primitive::Stop, &EntityRef::None, &EntityRef::None).unwrap();
        assert_eq!(a.primitive, Primitive::Stop);
    }

    #[test]
    fn poke_plan_is_feasible_only_for_the_aligned_robot() {
        let w = World::default();
        let s = two_ur5(vec![
            placed(1, ObjectKind::Cube, Color::Red, 0.0, 0.45),
            placed(2, ObjectKind::Tool, Color::Yellow, -0.7, -0.4),
        ]);
        let tool = EntityRef::Object(ObjectRef::tool());
        let red = EntityRef::Object(ObjectRef::cube(Color::Red));
        let pre = resolve_action(&w, &s, RobotId::R0, Primitive::PrePoke, &tool, &EntityRef::Site(Site::AlignWith(Color::Red)))
            .unwrap();
        assert!(action_feasible(&w, &s, &pre));
        let (aligned, _) = crate::sim::apply(&w, &s, &pre).unwrap();
        let poke0 =
            resolve_action(&w, &aligned, RobotId::R0, Primitive::Poke, &red, &EntityRef::Site(Site::OtherWorkspace)).unwrap();
        assert!(action_feasible(&w, &aligned, &poke0));
        let poke1 =
            resolve_action(&w, &aligned, RobotId::R1, Primitive::Poke, &red, &EntityRef::Site(Site::OtherWorkspace)).unwrap();
        assert!(!action_feasible(&w, &aligned, &poke1));
        let (after, _) = crate::sim::apply(&w, &aligned, &poke0).unwrap();
        let cube = after.find(ObjectRef::cube(Color::Red)).unwrap();
        let d = cube.pose.distance(&after.robots[1].base);
        assert!((d - (0.85 - w.inside_margin)).abs() < 1e-9);
    }
}
