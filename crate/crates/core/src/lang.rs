//! Instruction text: the canonical high-level templates and their parser,
//! the human-style template pool, and the sub-instruction codec.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entity::{EntityRef, Site};
use crate::scene::{Color, GoalAtom, GoalCondition, ObjectKind, ObjectRef, RobotId};
use crate::sim::Primitive;
use crate::taskgen::TaskType;

const TEMPLATES_TSV: &str = include_str!("../assets/templates.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InstructionKind {
    HighLevel,
    Human,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub text: String,
    pub kind: InstructionKind,
    pub template_id: u32,
}

impl Instruction {
    pub fn tokens(&self) -> Vec<&str> {
        self.text.split_whitespace().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LangError {
    #[error("instruction does not match any template: {0:?}")]
    Parse(String),
    #[error("no template {template_id} for {task_type}")]
    UnknownTemplate { task_type: TaskType, template_id: u32 },
    #[error("goal has {got} atoms, {task_type} needs {want}")]
    GoalShape { task_type: TaskType, got: usize, want: usize },
}

fn clause(atom: &GoalAtom) -> String {
    format!(
        "place the {} cube on top of the {} {}",
        atom.top.color.name(),
        atom.bottom.color.name(),
        atom.bottom.kind.name()
    )
}

/// One canonical template per task type. Types that differ only in how the
/// robots get the job done share their text, which is the point.
pub fn lexicalize_high(goal: &GoalCondition, _task_type: TaskType) -> Instruction {
    let text = goal.atoms.iter().map(clause).collect::<Vec<_>>().join(" and ");
    Instruction {
        text,
        kind: InstructionKind::HighLevel,
        template_id: 0,
    }
}

fn normalize(text: &str) -> String {
    let t = text.trim().trim_end_matches('.').to_lowercase();
    t.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn parse_clause(words: &[&str]) -> Option<GoalAtom> {
    match words {
        ["place", "the", top, "cube", "on", "top", "of", "the", bottom, kind] => {
            let top = Color::from_name(top)?;
            let bottom = Color::from_name(bottom)?;
            match *kind {
                "pad" => Some(GoalAtom::on_pad(top, bottom)),
                "cube" => Some(GoalAtom::on_cube(top, bottom)),
                _ => None,
            }
        }
        _ => None,
    }
}

/// Inverse of [`lexicalize_high`]. Returns the goal and every task type
/// whose template produces the same text.
pub fn parse_high(text: &str) -> Result<(GoalCondition, BTreeSet<TaskType>), LangError> {
    let norm = normalize(text);
    let words: Vec<&str> = norm.split(' ').collect();
    let fail = || LangError::Parse(text.to_string());
    let atoms = if words.len() == 10 {
        vec![parse_clause(&words).ok_or_else(fail)?]
    } else if words.len() == 21 && words[10] == "and" {
        vec![
            parse_clause(&words[..10]).ok_or_else(fail)?,
            parse_clause(&words[11..]).ok_or_else(fail)?,
        ]
    } else {
        return Err(fail());
    };
    let goal = GoalCondition { atoms };
    if !goal.is_well_formed() {
        return Err(fail());
    }
    let on_pad = goal.atoms[0].bottom.kind == ObjectKind::Pad;
    if goal.atoms.iter().any(|a| (a.bottom.kind == ObjectKind::Pad) != on_pad) {
        return Err(fail());
    }
    let types = TaskType::ALL
        .into_iter()
        .filter(|t| t.atom_count() == goal.atoms.len() && t.goal_on_pad() == on_pad)
        .collect();
    Ok((goal, types))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub task_type: TaskType,
    pub template_id: u32,
    pub pattern: String,
}

/// The authored human-style pool, parsed once.
pub fn templates() -> &'static [Template] {
    static POOL: OnceLock<Vec<Template>> = OnceLock::new();
    POOL.get_or_init(|| {
        TEMPLATES_TSV
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|l| {
                let mut cols = l.splitn(3, '\t');
                let (t, id, p) = (cols.next(), cols.next(), cols.next());
                let task_type = t.and_then(|t| t.parse().ok()).expect("bad task type in template pool");
                let template_id = id.and_then(|i| i.parse().ok()).expect("bad template id in template pool");
                Template {
                    task_type,
                    template_id,
                    pattern: p.expect("missing pattern in template pool").to_string(),
                }
            })
            .collect()
    })
}

pub fn template_count(task_type: TaskType) -> u32 {
    templates().iter().filter(|t| t.task_type == task_type).count() as u32
}

pub fn slot_names(atoms: usize) -> Vec<&'static str> {
    if atoms == 1 {
        vec!["{pick-color}", "{place-color}"]
    } else {
        vec!["{pick-color1}", "{place-color1}", "{pick-color2}", "{place-color2}"]
    }
}

/// Fills a pool template. For two-atom goals the seed decides which atom
/// fills the first pair of slots, so mention order varies between episodes.
pub fn lexicalize_human(
    goal: &GoalCondition,
    task_type: TaskType,
    template_id: u32,
    rng_seed: u64,
) -> Result<Instruction, LangError> {
    let want = task_type.atom_count();
    if goal.atoms.len() != want {
        return Err(LangError::GoalShape {
            task_type,
            got: goal.atoms.len(),
            want,
        });
    }
    let template = templates()
        .iter()
        .find(|t| t.task_type == task_type && t.template_id == template_id)
        .ok_or(LangError::UnknownTemplate { task_type, template_id })?;
    let mut text = template.pattern.clone();
    if want == 1 {
        let a = goal.atoms[0];
        text = text
            .replace("{pick-color}", a.top.color.name())
            .replace("{place-color}", a.bottom.color.name());
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let (a, b) = if rng.gen_bool(0.5) {
            (goal.atoms[1], goal.atoms[0])
        } else {
            (goal.atoms[0], goal.atoms[1])
        };
        text = text
            .replace("{pick-color1}", a.top.color.name())
            .replace("{place-color1}", a.bottom.color.name())
            .replace("{pick-color2}", b.top.color.name())
            .replace("{place-color2}", b.bottom.color.name());
    }
    Ok(Instruction {
        text,
        kind: InstructionKind::Human,
        template_id,
    })
}

/// `(γ, e, p, q)`: one allocated sub-task in symbolic form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubInstruction {
    pub robot: RobotId,
    pub primitive: Primitive,
    pub pick: EntityRef,
    pub place: EntityRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("expected 4 tokens, got {0}")]
    TokenCount(usize),
    #[error("bad {field} token {token:?}")]
    BadToken { field: &'static str, token: String },
    #[error("{0} cannot be written as a {1} token")]
    Unencodable(EntityRef, &'static str),
}

fn object_token(o: &ObjectRef) -> String {
    format!("{}_{}", o.color.name(), o.kind.name())
}

fn pick_token(e: &EntityRef) -> Result<String, CodecError> {
    match e {
        EntityRef::Object(o) => Ok(object_token(o)),
        EntityRef::None => Ok("none".into()),
        EntityRef::Site(_) => Err(CodecError::Unencodable(*e, "pick")),
    }
}

fn place_token(e: &EntityRef) -> Result<String, CodecError> {
    Ok(match e {
        EntityRef::None => "none".into(),
        EntityRef::Object(_) => return Err(CodecError::Unencodable(*e, "place")),
        EntityRef::Site(s) => match s {
            Site::SharedPoint => "shared_space".into(),
            Site::PadOf(c) => format!("{}_pad", c.name()),
            Site::StackOn(c) => format!("{}_cube", c.name()),
            Site::AlignWith(c) => format!("align_{}_cube", c.name()),
            Site::OwnWorkspace => "own_workspace".into(),
            Site::OtherWorkspace => "other_workspace".into(),
            Site::ReturnSpot => "return_spot".into(),
        },
    })
}

fn bad(field: &'static str, token: &str) -> CodecError {
    CodecError::BadToken {
        field,
        token: token.to_string(),
    }
}

fn decode_pick(t: &str) -> Result<EntityRef, CodecError> {
    if t == "none" {
        return Ok(EntityRef::None);
    }
    let (c, k) = t.split_once('_').ok_or_else(|| bad("pick", t))?;
    let color = Color::from_name(c).ok_or_else(|| bad("pick", t))?;
    let kind = match k {
        "cube" => ObjectKind::Cube,
        "pad" => ObjectKind::Pad,
        "tool" => ObjectKind::Tool,
        _ => return Err(bad("pick", t)),
    };
    Ok(EntityRef::Object(ObjectRef { color, kind }))
}

fn decode_place(t: &str) -> Result<EntityRef, CodecError> {
    let site = match t {
        "none" => return Ok(EntityRef::None),
        "shared_space" => Site::SharedPoint,
        "own_workspace" => Site::OwnWorkspace,
        "other_workspace" => Site::OtherWorkspace,
        "return_spot" => Site::ReturnSpot,
        _ => {
            let color = |c: &str| Color::from_name(c).ok_or_else(|| bad("place", t));
            if let Some(c) = t.strip_prefix("align_").and_then(|r| r.strip_suffix("_cube")) {
                Site::AlignWith(color(c)?)
            } else if let Some(c) = t.strip_suffix("_pad") {
                Site::PadOf(color(c)?)
            } else if let Some(c) = t.strip_suffix("_cube") {
                Site::StackOn(color(c)?)
            } else {
                return Err(bad("place", t));
            }
        }
    };
    Ok(EntityRef::Site(site))
}

pub fn encode_sub_instruction(s: &SubInstruction) -> Result<String, CodecError> {
    Ok(format!(
        "robot{} {} {} {}",
        s.robot.index(),
        s.primitive.name(),
        pick_token(&s.pick)?,
        place_token(&s.place)?
    ))
}

pub fn decode_sub_instruction(text: &str) -> Result<SubInstruction, CodecError> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    if toks.len() != 4 {
        return Err(CodecError::TokenCount(toks.len()));
    }
    let robot = match toks[0] {
        "robot0" => RobotId::R0,
        "robot1" => RobotId::R1,
        t => return Err(bad("robot", t)),
    };
    let primitive = Primitive::from_name(toks[1]).ok_or_else(|| bad("primitive", toks[1]))?;
    Ok(SubInstruction {
        robot,
        primitive,
        pick: decode_pick(toks[2])?,
        place: decode_place(toks[3])?,
    })
}

impl fmt::Display for SubInstruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match encode_sub_instruction(self) {
            Ok(s) => f.write_str(&s),
            Err(_) => write!(f, "robot{} {} {} {}", self.robot.index(), self.primitive.name(), self.pick, self.place),
        }
    }
}
