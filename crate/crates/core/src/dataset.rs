//! Episode records, observation rasters and on-disk dataset layout.
//!
//! ```text
//! <out>/<task_type>/episodes.jsonl
//! <out>/<task_type>/obs/<episode>_<step>.{ppm,pgm}
//! <out>/splits.json
//! <out>/dataset.meta
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::Instruction;
use crate::oracle::{generate_demonstration, OracleError};
use crate::scene::{Color, ObjectKind, PlacedObject, Pose2, RobotId, SceneState};
use crate::sim::{self, PrimitiveAction, TransitionReceipt};
use crate::taskgen::{instance_seed, mix_seed, sample_task, GenError, TaskInstance, TaskType};
use crate::world::World;

pub const SCHEMA_VERSION: u32 = 1;
pub const TABLE_GRAY: [u8; 3] = [128, 128, 128];
pub const SPLIT_SIZES: (usize, usize, usize) = (700, 40, 60);

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("schema version {found:?} (expected {SCHEMA_VERSION})")]
    SchemaVersionMismatch { found: Option<u64> },
    #[error("{task_type}: expected {expected} episodes, found {found}")]
    BadCount {
        task_type: String,
        expected: usize,
        found: usize,
    },
    #[error("split {0} not found")]
    MissingSplit(String),
    #[error("{0} lies outside the table")]
    OutOfBounds(String),
    #[error(transparent)]
    Generation(#[from] GenError),
    #[error("episode {episode}: {source}")]
    Demonstration { episode: String, source: OracleError },
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotConfig {
    pub id: RobotId,
    pub base: Pose2,
    pub holding: bool,
}

/// Top-down orthographic RGB + height raster of the table.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub width: usize,
    pub height: usize,
    pub pixels_per_meter: f64,
    /// `(x_min, x_max, y_min, y_max)`
    pub bounds: (f64, f64, f64, f64),
    /// Row-major, three bytes per pixel.
    pub rgb: Vec<u8>,
    /// Row-major top-surface height in millimeters.
    pub depth: Vec<u16>,
    pub robot_configs: Vec<RobotConfig>,
}

impl Observation {
    pub fn pixel(&self, col: usize, row: usize) -> ([u8; 3], u16) {
        let i = row * self.width + col;
        ([self.rgb[3 * i], self.rgb[3 * i + 1], self.rgb[3 * i + 2]], self.depth[i])
    }

    /// Pixel containing world point `(x, y)`.
    pub fn project(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.bounds.0) * self.pixels_per_meter, (self.bounds.3 - y) * self.pixels_per_meter)
    }

    fn center_of(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.bounds.0 + (col as f64 + 0.5) / self.pixels_per_meter,
            self.bounds.3 - (row as f64 + 0.5) / self.pixels_per_meter,
        )
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }

    /// 16-bit big-endian height map.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n65535\n", self.width, self.height).into_bytes();
        for d in &self.depth {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out
    }
}

/// Does the object's footprint cover world point `(x, y)`?
fn covers(world: &World, o: &PlacedObject, x: f64, y: f64) -> bool {
    let (dx, dy) = (x - o.pose.x, y - o.pose.y);
    let (c, s) = (o.pose.theta.cos(), o.pose.theta.sin());
    // coordinates in the object frame
    let (lx, ly) = (c * dx + s * dy, -s * dx + c * dy);
    match o.spec.kind {
        ObjectKind::Cube => {
            let h = world.cube_side / 2.0;
            lx.abs() <= h && ly.abs() <= h
        }
        ObjectKind::Pad => dx.hypot(dy) <= world.pad_radius,
        ObjectKind::Tool => {
            let w = world.tool_height / 2.0;
            let long = lx >= -w && lx <= world.tool_long_arm + w && ly.abs() <= w;
            let short = (lx - world.tool_long_arm).abs() <= w && ly >= -w && ly <= world.tool_short_arm;
            long || short
        }
    }
}

fn bounding_radius(world: &World, kind: ObjectKind) -> f64 {
    match kind {
        ObjectKind::Cube => world.cube_side,
        ObjectKind::Pad => world.pad_radius,
        ObjectKind::Tool => world.tool_long_arm + world.tool_short_arm,
    }
}

/// Renders the scene without anti-aliasing. Objects are painted bottom-up,
/// so the color of a pixel is that of the highest object covering it.
pub fn render_raster(world: &World, state: &SceneState) -> Result<Observation, DatasetError> {
    let (width, height) = world.raster_size();
    let mut obs = Observation {
        width,
        height,
        pixels_per_meter: world.pixels_per_meter,
        bounds: (world.table_x_min, world.table_x_max, world.table_y_min, world.table_y_max),
        rgb: TABLE_GRAY.repeat(width * height),
        depth: vec![0; width * height],
        robot_configs: state
            .robots
            .iter()
            .map(|r| RobotConfig {
                id: r.id,
                base: r.base,
                holding: state.holding[r.id.index()].is_some(),
            })
            .collect(),
    };
    let mut drawn: Vec<(&PlacedObject, f64, f64)> = Vec::new();
    for o in &state.objects {
        if state.is_held(o.spec.id) {
            continue;
        }
        if !world.on_table(o.pose.x, o.pose.y) {
            return Err(DatasetError::OutOfBounds(o.spec.id.to_string()));
        }
        drawn.push((o, state.base_elevation(world, o.spec.id), state.top_elevation(world, o.spec.id)));
    }
    drawn.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.2.total_cmp(&b.2)).then(a.0.spec.id.cmp(&b.0.spec.id)));
    for (o, _, top) in drawn {
        let mm = (top * 1000.0).round() as u16;
        let color = o.spec.color.rgb();
        let r = bounding_radius(world, o.spec.kind);
        let (c0, r0) = obs.project(o.pose.x - r, o.pose.y + r);
        let (c1, r1) = obs.project(o.pose.x + r, o.pose.y - r);
        let clamp = |v: f64, n: usize| (v.floor().max(0.0) as usize).min(n - 1);
        for row in clamp(r0, height)..=clamp(r1, height) {
            for col in clamp(c0, width)..=clamp(c1, width) {
                let (x, y) = obs.center_of(col, row);
                if covers(world, o, x, y) {
                    let i = row * width + col;
                    obs.rgb[3 * i..3 * i + 3].copy_from_slice(&color);
                    obs.depth[i] = obs.depth[i].max(mm);
                }
            }
        }
    }
    Ok(obs)
}

/// Vector drawing of a scene for inspection.
pub fn render_svg(world: &World, state: &SceneState) -> String {
    let k = world.pixels_per_meter;
    let (w, h) = world.raster_size();
    let px = |x: f64| (x - world.table_x_min) * k;
    let py = |y: f64| (world.table_y_max - y) * k;
    let rgb = |c: Color| {
        let [r, g, b] = c.rgb();
        format!("rgb({r},{g},{b})")
    };
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"rgb(128,128,128)\"/>\n"
    );
    for r in &state.robots {
        s += &format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{:.2}\" fill=\"none\" stroke=\"black\" stroke-dasharray=\"4 4\"/>\n\
             <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"6\" fill=\"black\"><title>robot{}</title></circle>\n",
            px(r.base.x),
            py(r.base.y),
            r.reach_radius * k,
            px(r.base.x),
            py(r.base.y),
            r.id.index()
        );
    }
    let mut objs: Vec<&PlacedObject> = state.objects.iter().filter(|o| !state.is_held(o.spec.id)).collect();
    objs.sort_by(|a, b| {
        state
            .base_elevation(world, a.spec.id)
            .total_cmp(&state.base_elevation(world, b.spec.id))
            .then(a.spec.id.cmp(&b.spec.id))
    });
    for o in objs {
        let (x, y) = (px(o.pose.x), py(o.pose.y));
        let deg = -o.pose.theta.to_degrees();
        let fill = rgb(o.spec.color);
        let title = format!("<title>{} {}</title>", o.spec.appearance(), o.spec.id);
        s += &match o.spec.kind {
            ObjectKind::Pad => format!(
                "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{:.2}\" fill=\"{fill}\" opacity=\"0.7\">{title}</circle>\n",
                world.pad_radius * k
            ),
            ObjectKind::Cube => {
                let a = world.cube_side * k;
                format!(
                    "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{a:.2}\" height=\"{a:.2}\" fill=\"{fill}\" stroke=\"black\" \
                     transform=\"rotate({deg:.2} {x:.2} {y:.2})\">{title}</rect>\n",
                    x - a / 2.0,
                    y - a / 2.0
                )
            }
            ObjectKind::Tool => {
                let (l, sh, t) = (world.tool_long_arm * k, world.tool_short_arm * k, world.tool_height * k);
                format!(
                    "<g transform=\"translate({x:.2} {y:.2}) rotate({deg:.2})\" fill=\"{fill}\" stroke=\"black\">{title}\
                     <rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{t:.2}\"/>\
                     <rect x=\"{:.2}\" y=\"{:.2}\" width=\"{t:.2}\" height=\"{:.2}\"/></g>\n",
                    -t / 2.0,
                    -t / 2.0,
                    l + t,
                    l - t / 2.0,
                    -sh,
                    sh + t / 2.0
                )
            }
        };
    }
    s + "</svg>\n"
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStep {
    /// Clock after the step completes.
    pub clock: f64,
    /// Encoded sub-instruction, e.g. `robot0 move red_cube shared_space`.
    pub sub_instruction: String,
    pub action: PrimitiveAction,
    pub receipt: TransitionReceipt,
    /// Raster stem (relative to the task directory) of the scene the step
    /// started from.
    pub observation_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub schema_version: u32,
    pub episode_id: String,
    pub instance: TaskInstance,
    pub high: Instruction,
    pub human: Instruction,
    pub steps: Vec<EpisodeStep>,
    pub final_observation_ref: Option<String>,
    pub final_clock: f64,
    pub final_state: SceneState,
    pub success: bool,
}

impl EpisodeRecord {
    /// Scene before each step followed by the final scene, replayed from the
    /// recorded actions.
    pub fn replay_states(&self, world: &World) -> Result<Vec<SceneState>, sim::SimError> {
        let mut s = self.instance.scene0.clone();
        let mut out = vec![s.clone()];
        for step in &self.steps {
            s = sim::apply(world, &s, &step.action)?.0;
            out.push(s.clone());
        }
        Ok(out)
    }
}

pub fn episode_id(task_type: TaskType, index: usize) -> String {
    format!("{}_{index:04}", task_type.slug())
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DatasetError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_episodes(path: &Path, records: &[EpisodeRecord]) -> Result<(), DatasetError> {
    write_jsonl(path, records)
}

/// Reads every record or fails; a truncated or foreign file never yields a
/// partial list.
pub fn read_episodes(path: &Path) -> Result<Vec<EpisodeRecord>, DatasetError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| invalid(format!("line {}: {e}", n + 1)))?;
        let found = value.get("schema_version").and_then(|v| v.as_u64());
        if found != Some(SCHEMA_VERSION as u64) {
            return Err(DatasetError::SchemaVersionMismatch { found });
        }
        out.push(serde_json::from_value(value).map_err(|e| invalid(format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

pub fn write_instances(path: &Path, instances: &[TaskInstance]) -> Result<(), DatasetError> {
    write_jsonl(path, instances)
}

pub fn read_instances(path: &Path) -> Result<Vec<TaskInstance>, DatasetError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(|e| invalid(format!("line {}: {e}", n + 1)))?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitIds {
    pub fn get(&self, split: &str) -> Option<&[String]> {
        match split {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    /// Keyed by task type slug.
    pub types: BTreeMap<String, SplitIds>,
}

/// Split sizes for `n` episodes: 700/40/60 at 800, the same proportions
/// (rounded down for val and test) otherwise.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    if n == 800 {
        return SPLIT_SIZES;
    }
    let val = n * SPLIT_SIZES.1 / 800;
    let test = n * SPLIT_SIZES.2 / 800;
    (n - val - test, val, test)
}

fn shuffle_split(index: usize, ids: &[String], seed: u64, sizes: (usize, usize, usize)) -> SplitIds {
    let mut ids = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5911 + index as u64, 0));
    ids.shuffle(&mut rng);
    let mut test = ids.split_off(sizes.0 + sizes.1);
    let mut val = ids.split_off(sizes.0);
    let mut train = ids;
    train.sort();
    val.sort();
    test.sort();
    SplitIds { train, val, test }
}

/// Seeded 700/40/60 partition; every task type must have exactly 800 ids.
pub fn make_splits(ids: &BTreeMap<TaskType, Vec<String>>, seed: u64) -> Result<SplitManifest, DatasetError> {
    let mut m = SplitManifest::default();
    for (t, list) in ids {
        if list.len() != 800 {
            return Err(DatasetError::BadCount {
                task_type: t.slug().into(),
                expected: 800,
                found: list.len(),
            });
        }
        m.types
            .insert(t.slug().into(), shuffle_split(t.index(), list, seed, SPLIT_SIZES));
    }
    Ok(m)
}

/// Like [`make_splits`] but accepts any count, scaling the proportions.
pub fn make_splits_scaled(ids: &BTreeMap<TaskType, Vec<String>>, seed: u64) -> SplitManifest {
    let mut m = SplitManifest::default();
    for (t, list) in ids {
        m.types.insert(
            t.slug().into(),
            shuffle_split(t.index(), list, seed, split_sizes(list.len())),
        );
    }
    m
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub schema_version: u32,
    pub master_seed: u64,
    pub world_config_hash: String,
    pub episodes_per_type: BTreeMap<String, usize>,
    pub rasters: bool,
}

/// Instances `0..count` of one type, generated in parallel; the result only
/// depends on `(master, task_type, count)`.
pub fn generate_instances(
    world: &World,
    master: u64,
    task_type: TaskType,
    count: usize,
) -> Result<Vec<TaskInstance>, GenError> {
    (0..count)
        .into_par_iter()
        .map(|i| sample_task(world, task_type, instance_seed(master, task_type, i as u64)))
        .collect()
}

fn write_observation(dir: &Path, stem: &str, obs: &Observation) -> Result<(), DatasetError> {
    fs::write(dir.join(format!("{stem}.ppm")), obs.to_ppm())?;
    fs::write(dir.join(format!("{stem}.pgm")), obs.to_pgm())?;
    Ok(())
}

/// Demonstrates every instance of one type and writes
/// `<out>/<slug>/episodes.jsonl` (plus rasters when asked). Episodes run in
/// parallel; each worker writes only its own raster files.
pub fn write_type_demonstrations(
    world: &World,
    task_type: TaskType,
    instances: &[TaskInstance],
    out: &Path,
    rasters: bool,
) -> Result<Vec<String>, DatasetError> {
    let dir = out.join(task_type.slug());
    let obs_dir = dir.join("obs");
    fs::create_dir_all(if rasters { &obs_dir } else { &dir })?;
    let records: Vec<EpisodeRecord> = instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let id = episode_id(task_type, i);
            let mut rec = generate_demonstration(world, inst, &id).map_err(|source| DatasetError::Demonstration {
                episode: id.clone(),
                source,
            })?;
            if rasters {
                let states = rec
                    .replay_states(world)
                    .map_err(|e| invalid(format!("{id}: replay failed: {e}")))?;
                for (k, s) in states.iter().enumerate() {
                    let stem = format!("{id}_{k}");
                    write_observation(&obs_dir, &stem, &render_raster(world, s)?)?;
                    let rel = format!("obs/{stem}");
                    match rec.steps.get_mut(k) {
                        Some(step) => step.observation_ref = Some(rel),
                        None => rec.final_observation_ref = Some(rel),
                    }
                }
            }
            Ok(rec)
        })
        .collect::<Result<_, DatasetError>>()?;
    write_episodes(&dir.join("episodes.jsonl"), &records)?;
    Ok(records.into_iter().map(|r| r.episode_id).collect())
}

/// Writes splits and metadata once all episode files exist. Exactly 800
/// episodes per type give the standard 700/40/60 split.
pub fn write_manifest(
    world: &World,
    out: &Path,
    master: u64,
    ids: &BTreeMap<TaskType, Vec<String>>,
    rasters: bool,
) -> Result<SplitManifest, DatasetError> {
    let splits = if ids.values().all(|v| v.len() == 800) {
        make_splits(ids, master)?
    } else {
        make_splits_scaled(ids, master)
    };
    fs::write(
        out.join("splits.json"),
        serde_json::to_string_pretty(&splits).map_err(io::Error::from)? + "\n",
    )?;
    let meta = DatasetMeta {
        schema_version: SCHEMA_VERSION,
        master_seed: master,
        world_config_hash: world.config_hash(),
        episodes_per_type: ids.iter().map(|(t, v)| (t.slug().to_string(), v.len())).collect(),
        rasters,
    };
    fs::write(
        out.join("dataset.meta"),
        serde_json::to_string_pretty(&meta).map_err(io::Error::from)? + "\n",
    )?;
    Ok(splits)
}

/// Generates and demonstrates `count` instances of each requested type.
pub fn build_dataset(
    world: &World,
    master: u64,
    types: &[TaskType],
    count: usize,
    out: &Path,
    rasters: bool,
) -> Result<SplitManifest, DatasetError> {
    fs::create_dir_all(out)?;
    let mut ids = BTreeMap::new();
    for &t in types {
        let instances = generate_instances(world, master, t, count)?;
        ids.insert(t, write_type_demonstrations(world, t, &instances, out, rasters)?);
    }
    write_manifest(world, out, master, &ids, rasters)
}

pub fn read_splits(dir: &Path) -> Result<SplitManifest, DatasetError> {
    let text = fs::read_to_string(dir.join("splits.json"))?;
    serde_json::from_str(&text).map_err(|e| invalid(e.to_string()).into())
}

pub fn read_meta(dir: &Path) -> Result<DatasetMeta, DatasetError> {
    let text = fs::read_to_string(dir.join("dataset.meta"))?;
    serde_json::from_str(&text).map_err(|e| invalid(e.to_string()).into())
}

pub fn episodes_path(dir: &Path, task_type: TaskType) -> PathBuf {
    dir.join(task_type.slug()).join("episodes.jsonl")
}

/// Episodes of `split` for every task type present in the manifest.
pub fn load_split(dir: &Path, split: &str) -> Result<BTreeMap<TaskType, Vec<EpisodeRecord>>, DatasetError> {
    let manifest = read_splits(dir)?;
    let mut out = BTreeMap::new();
    for (slug, ids) in &manifest.types {
        let t: TaskType = slug.parse().map_err(|_| DatasetError::MissingSplit(slug.clone()))?;
        let wanted = ids.get(split).ok_or_else(|| DatasetError::MissingSplit(split.to_string()))?;
        let all = read_episodes(&episodes_path(dir, t))?;
        let by_id: BTreeMap<&str, &EpisodeRecord> = all.iter().map(|r| (r.episode_id.as_str(), r)).collect();
        let mut picked = Vec::with_capacity(wanted.len());
        for id in wanted {
            let rec = by_id.get(id.as_str()).ok_or_else(|| DatasetError::MissingSplit(format!("{split}/{id}")))?;
            picked.push((*rec).clone());
        }
        out.insert(t, picked);
    }
    if out.is_empty() {
        return Err(DatasetError::MissingSplit(split.to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{BodyColor, ObjectId, ObjectSpec, RobotModel, RobotSpec, Support};

    fn scene(objects: Vec<PlacedObject>) -> SceneState {
        let w = World::default();
        SceneState::new(
            vec![
                RobotSpec::new(&w, RobotId::R0, RobotModel::UR5, BodyColor::Red),
                RobotSpec::new(&w, RobotId::R1, RobotModel::UR5, BodyColor::White),
            ],
            objects,
        )
    }

    fn cube(id: u32, color: Color, x: f64, y: f64, support: Support) -> PlacedObject {
        PlacedObject {
            spec: ObjectSpec {
                id: ObjectId(id),
                kind: ObjectKind::Cube,
                color,
            },
            pose: Pose2::at(x, y),
            support,
        }
    }

    #[test]
    fn empty_table_is_gray_and_flat() {
        let w = World::default();
        let o = render_raster(&w, &scene(vec![])).unwrap();
        assert_eq!((o.width, o.height), (400, 224));
        assert!(o.rgb.chunks(3).all(|p| p == TABLE_GRAY));
        assert!(o.depth.iter().all(|&d| d == 0));
    }

    #[test]
    fn cube_at_origin_spans_eight_pixels() {
        let w = World::default();
        let o = render_raster(&w, &scene(vec![cube(1, Color::Red, 0.0, 0.0, Support::Table)])).unwrap();
        let covered: Vec<usize> = (0..o.depth.len()).filter(|&i| o.depth[i] > 0).collect();
        assert_eq!(covered.len(), 64);
        assert!(covered.iter().all(|&i| o.depth[i] == 50));
        assert_eq!(o.pixel(200, 112), (Color::Red.rgb(), 50));
        assert_eq!(o.pixel(196, 108).1, 50);
        assert_eq!(o.pixel(195, 108).1, 0);
    }

    #[test]
    fn stack_reports_summed_height() {
        let w = World::default();
        let o = render_raster(
            &w,
            &scene(vec![
                cube(1, Color::Red, 0.3, 0.2, Support::Table),
                cube(2, Color::Blue, 0.3, 0.2, Support::On(ObjectId(1))),
            ]),
        )
        .unwrap();
        let (c, r) = o.project(0.3, 0.2);
        assert_eq!(o.pixel(c as usize, r as usize), (Color::Blue.rgb(), 100));
    }

    #[test]
    fn off_table_objects_are_rejected() {
        let w = World::default();
        let s = scene(vec![cube(1, Color::Red, 2.0, 0.0, Support::Table)]);
        assert!(matches!(render_raster(&w, &s), Err(DatasetError::OutOfBounds(_))));
    }

    #[test]
    fn netpbm_headers() {
        let w = World::default();
        let o = render_raster(&w, &scene(vec![])).unwrap();
        let ppm = o.to_ppm();
        assert!(ppm.starts_with(b"P6\n400 224\n255\n"));
        assert_eq!(ppm.len(), 15 + 400 * 224 * 3);
        let pgm = o.to_pgm();
        assert!(pgm.starts_with(b"P5\n400 224\n65535\n"));
        assert_eq!(pgm.len(), 17 + 400 * 224 * 2);
    }

    #[test]
    fn splits_are_exact_disjoint_and_seeded() {
        let ids: BTreeMap<TaskType, Vec<String>> = TaskType::ALL
            .iter()
            .map(|&t| (t, (0..800).map(|i| episode_id(t, i)).collect()))
            .collect();
        let a = make_splits(&ids, 3).unwrap();
        assert_eq!(a, make_splits(&ids, 3).unwrap());
        assert_ne!(a, make_splits(&ids, 4).unwrap());
        let mut total = 0;
        for (slug, s) in &a.types {
            assert_eq!((s.train.len(), s.val.len(), s.test.len()), (700, 40, 60), "{slug}");
            let mut all: Vec<&String> = s.train.iter().chain(&s.val).chain(&s.test).collect();
            all.sort();
            all.dedup();
            assert_eq!(all.len(), 800);
            total += all.len();
        }
        assert_eq!(total, 6400);
        let mut short = ids.clone();
        short.get_mut(&TaskType::Pass).unwrap().pop();
        assert!(matches!(make_splits(&short, 3), Err(DatasetError::BadCount { found: 799, .. })));
        assert_eq!(split_sizes(80), (70, 4, 6));
    }

    #[test]
    fn episodes_round_trip_and_reject_damage() {
        let w = World::default();
        let dir = tempfile::tempdir().unwrap();
        let inst = sample_task(&w, TaskType::Stack, 3).unwrap();
        let rec = generate_demonstration(&w, &inst, "stack_0000").unwrap();
        let path = dir.path().join("e.jsonl");
        write_episodes(&path, std::slice::from_ref(&rec)).unwrap();
        assert_eq!(read_episodes(&path).unwrap(), vec![rec]);

        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(read_episodes(&path), Err(DatasetError::Io(_))));
        fs::write(&path, text.replace("\"schema_version\":1", "\"schema_version\":9")).unwrap();
        assert!(matches!(
            read_episodes(&path),
            Err(DatasetError::SchemaVersionMismatch { found: Some(9) })
        ));
    }
}
