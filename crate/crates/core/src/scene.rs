//! Geometric ground truth shared by every other module: planar poses, robot
//! and object specifications, the support forest and reachability tests.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::World;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SceneError {
    #[error("unknown object {0}")]
    UnknownObject(ObjectId),
    #[error("no {0} in the scene")]
    UnknownColorKind(ObjectRef),
    #[error("robot disks do not intersect")]
    EmptyRegion,
}

/// Wraps an angle into `[-pi, pi)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2*pi for tiny negative inputs
    if t >= PI {
        t - 2.0 * PI
    } else {
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Pose2 {
        Pose2 {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn at(x: f64, y: f64) -> Pose2 {
        Pose2::new(x, y, 0.0)
    }

    pub fn distance(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RobotId {
    R0,
    R1,
}

impl RobotId {
    pub const ALL: [RobotId; 2] = [RobotId::R0, RobotId::R1];

    pub fn index(self) -> usize {
        match self {
            RobotId::R0 => 0,
            RobotId::R1 => 1,
        }
    }

    pub fn other(self) -> RobotId {
        match self {
            RobotId::R0 => RobotId::R1,
            RobotId::R1 => RobotId::R0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RobotModel {
    UR5,
    UR10,
}

impl RobotModel {
    pub fn reach(self, world: &World) -> f64 {
        match self {
            RobotModel::UR5 => world.ur5_reach,
            RobotModel::UR10 => world.ur10_reach,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BodyColor {
    Red,
    White,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotSpec {
    pub id: RobotId,
    pub model: RobotModel,
    pub body_color: BodyColor,
    pub base: Pose2,
    pub reach_radius: f64,
}

impl RobotSpec {
    /// Robot at its fixed base for `id`, with the nominal reach of `model`.
    pub fn new(world: &World, id: RobotId, model: RobotModel, body_color: BodyColor) -> RobotSpec {
        let base = match id {
            RobotId::R0 => Pose2::at(world.base0_x, world.base0_y),
            RobotId::R1 => Pose2::new(world.base1_x, world.base1_y, PI),
        };
        RobotSpec {
            id,
            model,
            body_color,
            base,
            reach_radius: model.reach(world),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ObjectKind {
    Cube,
    Pad,
    Tool,
}

impl ObjectKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjectKind::Cube => "cube",
            ObjectKind::Pad => "pad",
            ObjectKind::Tool => "tool",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Color {
    Pink,
    Red,
    White,
    Blue,
    Green,
    Yellow,
}

impl Color {
    /// Colors available for cubes and pads. The tool is always yellow.
    pub const BLOCK: [Color; 5] = [Color::Pink, Color::Red, Color::White, Color::Blue, Color::Green];

    pub fn name(self) -> &'static str {
        match self {
            Color::Pink => "pink",
            Color::Red => "red",
            Color::White => "white",
            Color::Blue => "blue",
            Color::Green => "green",
            Color::Yellow => "yellow",
        }
    }

    pub fn from_name(name: &str) -> Option<Color> {
        [Color::Pink, Color::Red, Color::White, Color::Blue, Color::Green, Color::Yellow]
            .into_iter()
            .find(|c| c.name() == name)
    }

    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Pink => [255, 105, 180],
            Color::Red => [220, 30, 30],
            Color::White => [245, 245, 245],
            Color::Blue => [30, 80, 220],
            Color::Green => [30, 170, 60],
            Color::Yellow => [240, 210, 20],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(pub u32);

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// An object named by appearance, as instructions and goals refer to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectRef {
    pub color: Color,
    pub kind: ObjectKind,
}

impl ObjectRef {
    pub fn cube(color: Color) -> ObjectRef {
        ObjectRef { color, kind: ObjectKind::Cube }
    }

    pub fn pad(color: Color) -> ObjectRef {
        ObjectRef { color, kind: ObjectKind::Pad }
    }

    pub fn tool() -> ObjectRef {
        ObjectRef {
            color: Color::Yellow,
            kind: ObjectKind::Tool,
        }
    }
}

impl fmt::Display for ObjectRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.color.name(), self.kind.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: ObjectId,
    pub kind: ObjectKind,
    pub color: Color,
}

impl ObjectSpec {
    pub fn appearance(&self) -> ObjectRef {
        ObjectRef {
            color: self.color,
            kind: self.kind,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Support {
    Table,
    On(ObjectId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedObject {
    pub spec: ObjectSpec,
    /// Center for cubes and pads; grip point of the long arm for the tool.
    pub pose: Pose2,
    pub support: Support,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub objects: Vec<PlacedObject>,
    pub robots: Vec<RobotSpec>,
    /// Indexed by `RobotId::index`.
    pub holding: [Option<ObjectId>; 2],
    pub clock: f64,
}

impl SceneState {
    pub fn new(robots: Vec<RobotSpec>, objects: Vec<PlacedObject>) -> SceneState {
        SceneState {
            objects,
            robots,
            holding: [None, None],
            clock: 0.0,
        }
    }

    pub fn robot(&self, id: RobotId) -> Option<&RobotSpec> {
        self.robots.iter().find(|r| r.id == id)
    }

    pub fn object(&self, id: ObjectId) -> Result<&PlacedObject, SceneError> {
        self.objects
            .iter()
            .find(|o| o.spec.id == id)
            .ok_or(SceneError::UnknownObject(id))
    }

    pub fn object_mut(&mut self, id: ObjectId) -> Result<&mut PlacedObject, SceneError> {
        self.objects
            .iter_mut()
            .find(|o| o.spec.id == id)
            .ok_or(SceneError::UnknownObject(id))
    }

    pub fn is_held(&self, id: ObjectId) -> bool {
        self.holding.contains(&Some(id))
    }

    /// All objects matching an appearance, in id order.
    pub fn find_all(&self, what: ObjectRef) -> Vec<&PlacedObject> {
        let mut found: Vec<&PlacedObject> =
            self.objects.iter().filter(|o| o.spec.appearance() == what).collect();
        found.sort_by_key(|o| o.spec.id);
        found
    }

    /// Lowest-id object matching an appearance.
    pub fn find(&self, what: ObjectRef) -> Result<&PlacedObject, SceneError> {
        self.find_all(what)
            .into_iter()
            .next()
            .ok_or(SceneError::UnknownColorKind(what))
    }

    pub fn tool(&self) -> Option<&PlacedObject> {
        self.objects.iter().find(|o| o.spec.kind == ObjectKind::Tool)
    }

    /// True iff no other object rests on `id`.
    pub fn top_of_stack(&self, id: ObjectId) -> Result<bool, SceneError> {
        self.object(id)?;
        Ok(!self
            .objects
            .iter()
            .any(|o| o.spec.id != id && !self.is_held(o.spec.id) && o.support == Support::On(id)))
    }

    /// Height of the surface `id` rests on. Stops if the chain is cyclic.
    pub fn base_elevation(&self, world: &World, id: ObjectId) -> f64 {
        let mut h = 0.0;
        let mut cur = id;
        for _ in 0..=self.objects.len() {
            let Ok(o) = self.object(cur) else { break };
            match o.support {
                Support::Table => break,
                Support::On(below) => {
                    h += self.object(below).map(|b| object_height(world, b.spec.kind)).unwrap_or(0.0);
                    cur = below;
                }
            }
        }
        h
    }

    pub fn top_elevation(&self, world: &World, id: ObjectId) -> f64 {
        let kind = self.object(id).map(|o| o.spec.kind).unwrap_or(ObjectKind::Cube);
        self.base_elevation(world, id) + object_height(world, kind)
    }

    /// Checks the structural invariants: unique ids, acyclic support forest
    /// rooted at the table, held objects outside every support chain, no
    /// overlapping table-supported objects of the same kind, clock >= 0.
    pub fn check_invariants(&self, world: &World) -> Result<(), String> {
        let mut ids: Vec<ObjectId> = self.objects.iter().map(|o| o.spec.id).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err("duplicate object id".into());
        }
        if self.clock.is_nan() || self.clock < 0.0 {
            return Err(format!("negative clock {}", self.clock));
        }
        for o in &self.objects {
            if !o.pose.is_finite() {
                return Err(format!("non-finite pose for {}", o.spec.id));
            }
            let mut cur = o;
            let mut steps = 0;
            while let Support::On(below) = cur.support {
                if self.is_held(below) {
                    return Err(format!("{} rests on held object {below}", cur.spec.id));
                }
                cur = self.object(below).map_err(|e| e.to_string())?;
                steps += 1;
                if steps > self.objects.len() {
                    return Err(format!("support cycle through {}", o.spec.id));
                }
            }
        }
        let on_table: Vec<&PlacedObject> = self
            .objects
            .iter()
            .filter(|o| o.support == Support::Table && !self.is_held(o.spec.id))
            .collect();
        for (i, a) in on_table.iter().enumerate() {
            for b in &on_table[i + 1..] {
                if a.spec.kind == b.spec.kind && a.spec.kind != ObjectKind::Tool {
                    let min_gap = same_kind_clearance(world, a.spec.kind);
                    if a.pose.distance(&b.pose) < min_gap - 1e-9 {
                        return Err(format!("{} overlaps {}", a.spec.id, b.spec.id));
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn object_height(world: &World, kind: ObjectKind) -> f64 {
    match kind {
        ObjectKind::Cube => world.cube_side,
        ObjectKind::Pad => world.pad_height,
        ObjectKind::Tool => world.tool_height,
    }
}

/// Minimum center distance between two table-supported objects of one kind.
pub fn same_kind_clearance(world: &World, kind: ObjectKind) -> f64 {
    match kind {
        ObjectKind::Cube => world.cube_side,
        ObjectKind::Pad => 2.0 * world.pad_radius,
        ObjectKind::Tool => 0.0,
    }
}

/// Working point at the far end of the tool's long arm.
pub fn tool_tip(world: &World, grip: &Pose2) -> (f64, f64) {
    (
        grip.x + world.tool_long_arm * grip.theta.cos(),
        grip.y + world.tool_long_arm * grip.theta.sin(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AtomBottom {
    Pad,
    Cube,
}

/// `On(top, bottom)`: the top object is always a cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalAtom {
    pub top: ObjectRef,
    pub bottom: ObjectRef,
}

impl GoalAtom {
    pub fn on_pad(top: Color, pad: Color) -> GoalAtom {
        GoalAtom {
            top: ObjectRef::cube(top),
            bottom: ObjectRef::pad(pad),
        }
    }

    pub fn on_cube(top: Color, bottom: Color) -> GoalAtom {
        GoalAtom {
            top: ObjectRef::cube(top),
            bottom: ObjectRef::cube(bottom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalCondition {
    pub atoms: Vec<GoalAtom>,
}

impl GoalCondition {
    /// Structural validity: one or two atoms, cube tops, pad or cube bottoms,
    /// and distinct colors among the referenced objects of each kind.
    pub fn is_well_formed(&self) -> bool {
        if self.atoms.is_empty() || self.atoms.len() > 2 {
            return false;
        }
        let mut refs = Vec::new();
        for a in &self.atoms {
            if a.top.kind != ObjectKind::Cube || a.bottom.kind == ObjectKind::Tool {
                return false;
            }
            if a.top.color == Color::Yellow || a.bottom.color == Color::Yellow {
                return false;
            }
            refs.push(a.top);
            refs.push(a.bottom);
        }
        let n = refs.len();
        refs.sort();
        refs.dedup();
        refs.len() == n
    }

    pub fn referenced(&self) -> Vec<ObjectRef> {
        self.atoms.iter().flat_map(|a| [a.top, a.bottom]).collect()
    }
}

pub fn reachable(robot: &RobotSpec, x: f64, y: f64) -> bool {
    (robot.base.x - x).hypot(robot.base.y - y) <= robot.reach_radius
}

pub fn reachable_pose(robot: &RobotSpec, p: &Pose2) -> bool {
    reachable(robot, p.x, p.y)
}

/// Reach radius plus the long arm of the L-tool.
pub fn tool_extended_reach(world: &World, robot: &RobotSpec) -> f64 {
    robot.reach_radius + world.tool_long_arm
}

/// Intersection of the two reach disks, clipped to the table.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub centers: [(f64, f64); 2],
    pub radii: [f64; 2],
    pub table: [f64; 4],
    /// Midpoint of the base segment.
    pub representative: Pose2,
}

impl Region {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let [x0, x1, y0, y1] = self.table;
        x >= x0
            && x <= x1
            && y >= y0
            && y <= y1
            && self
                .centers
                .iter()
                .zip(self.radii)
                .all(|(c, r)| (x - c.0).hypot(y - c.1) <= r)
    }

    /// Whether `other` is a subset of this region, tested on a grid.
    pub fn contains_region(&self, other: &Region, step: f64) -> bool {
        let [x0, x1, y0, y1] = other.table;
        let nx = ((x1 - x0) / step).ceil() as usize;
        let ny = ((y1 - y0) / step).ceil() as usize;
        (0..=nx).all(|i| {
            (0..=ny).all(|j| {
                let (x, y) = (x0 + i as f64 * step, y0 + j as f64 * step);
                !other.contains(x, y) || self.contains(x, y)
            })
        })
    }
}

pub fn shared_workspace(world: &World, r0: &RobotSpec, r1: &RobotSpec) -> Result<Region, SceneError> {
    let sep = r0.base.distance(&r1.base);
    if sep > r0.reach_radius + r1.reach_radius {
        return Err(SceneError::EmptyRegion);
    }
    let representative = Pose2::at((r0.base.x + r1.base.x) / 2.0, (r0.base.y + r1.base.y) / 2.0);
    let region = Region {
        centers: [(r0.base.x, r0.base.y), (r1.base.x, r1.base.y)],
        radii: [r0.reach_radius, r1.reach_radius],
        table: [world.table_x_min, world.table_x_max, world.table_y_min, world.table_y_max],
        representative,
    };
    if !region.contains(representative.x, representative.y) {
        return Err(SceneError::EmptyRegion);
    }
    Ok(region)
}

/// Hand-off points on the perpendicular bisector of the base segment that
/// both robots reach with `inside_margin` to spare, nearest to the midpoint
/// first.
pub fn shared_slots(world: &World, r0: &RobotSpec, r1: &RobotSpec) -> Vec<Pose2> {
    let (mx, my) = ((r0.base.x + r1.base.x) / 2.0, (r0.base.y + r1.base.y) / 2.0);
    let (dx, dy) = (r1.base.x - r0.base.x, r1.base.y - r0.base.y);
    let len = dx.hypot(dy).max(f64::EPSILON);
    let (px, py) = (-dy / len, dx / len);
    let mut slots = Vec::new();
    for k in [0i32, 1, -1, 2, -2] {
        let s = k as f64 * world.shared_slot_spacing;
        let (x, y) = (mx + s * px, my + s * py);
        let inside = [r0, r1]
            .iter()
            .all(|r| (x - r.base.x).hypot(y - r.base.y) <= r.reach_radius - world.inside_margin);
        if inside && world.on_table(x, y) {
            slots.push(Pose2::at(x, y));
        }
    }
    slots
}
