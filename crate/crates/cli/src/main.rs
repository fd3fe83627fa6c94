use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lemma_core::alloc::{self, build_problem, validate_allocation};
use lemma_core::dataset::{
    generate_instances, load_split, read_episodes, read_instances, render_svg, write_instances, write_manifest,
    write_type_demonstrations, DatasetError,
};
use lemma_core::harness::{evaluate, policy_by_name, EvalConfig, ObservationMode};
use lemma_core::lang::InstructionKind;
use lemma_core::oracle::decompose;
use lemma_core::taskgen::{TaskInstance, TaskType};
use lemma_core::world::{ConfigError, World};
use serde_json::json;

#[derive(Parser)]
#[command(name = "lemma", version, about = "Two-arm tabletop benchmark: generation, demonstrations, allocation and evaluation")]
struct Cli {
    /// World constants file; built-in defaults when omitted.
    #[arg(long, global = true)]
    world: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample task instances and write them as JSON Lines.
    Gen {
        /// Task type slug, or `all`.
        #[arg(long, default_value = "all")]
        task: String,
        #[arg(long, default_value_t = 800)]
        count: usize,
        #[arg(long, env = "LEMMA_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the oracle on every instance and write the episode dataset.
    Demo {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Master seed recorded in the metadata and used for the splits.
        #[arg(long, env = "LEMMA_SEED", default_value_t = 0)]
        seed: u64,
        /// Skip observation rasters (records keep empty references).
        #[arg(long)]
        no_rasters: bool,
    },
    /// Solve the allocation of one instance and print it as JSON.
    Alloc {
        #[arg(long)]
        instance: PathBuf,
        /// Line of the instance file to use.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, value_enum, default_value_t = Solver::Exact)]
        solver: Solver,
    },
    /// Evaluate a baseline policy on a dataset split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "oracle")]
        policy: String,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, value_enum, default_value_t = Instructions::High)]
        instructions: Instructions,
        #[arg(long, value_enum, default_value_t = Observe::Symbolic)]
        observation: Observe,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, env = "LEMMA_SEED", default_value_t = 0)]
        seed: u64,
        /// Restrict to one task type.
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw the scene before step K of an episode as SVG.
    Render {
        #[arg(long)]
        episode: PathBuf,
        /// Episode id, or the first episode of the file when omitted.
        #[arg(long)]
        id: Option<String>,
        #[arg(long, default_value_t = 0)]
        step: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    Exact,
    Greedy,
}

#[derive(Clone, Copy, ValueEnum)]
enum Instructions {
    High,
    Human,
}

#[derive(Clone, Copy, ValueEnum)]
enum Observe {
    Symbolic,
    Raster,
}

enum Failure {
    Invalid(String),
    Io(String),
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        match e {
            // malformed records surface as InvalidData; that is bad input, not I/O
            DatasetError::Io(ref io) if io.kind() != io::ErrorKind::InvalidData => Failure::Io(e.to_string()),
            other => Failure::Invalid(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(_) => Failure::Io(e.to_string()),
            other => Failure::Invalid(other.to_string()),
        }
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Invalid(msg.into())
}

fn parse_types(arg: &str) -> Result<Vec<TaskType>, Failure> {
    if arg == "all" {
        return Ok(TaskType::ALL.to_vec());
    }
    arg.split(',')
        .map(|t| t.trim().parse::<TaskType>().map_err(|e| invalid(e.to_string())))
        .collect()
}

fn group_by_type(instances: Vec<TaskInstance>) -> BTreeMap<TaskType, Vec<TaskInstance>> {
    let mut out: BTreeMap<TaskType, Vec<TaskInstance>> = BTreeMap::new();
    for inst in instances {
        out.entry(inst.task_type).or_default().push(inst);
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

/// Print to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<(), Failure> {
    use std::io::Write;
    match io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let world = match &cli.world {
        Some(p) => World::load(p)?,
        None => World::default(),
    };
    match cli.command {
        Command::Gen { task, count, seed, out } => {
            let types = parse_types(&task)?;
            let mut all = Vec::with_capacity(types.len() * count);
            for t in types {
                let batch = generate_instances(&world, seed, t, count).map_err(|e| invalid(e.to_string()))?;
                log::info!("generated {} {t} instances", batch.len());
                all.extend(batch);
            }
            let path = out.join("instances.jsonl");
            write_instances(&path, &all)?;
            emit(&format!("{} instances -> {}\n", all.len(), path.display()))?;
        }
        Command::Demo {
            instances,
            out,
            seed,
            no_rasters,
        } => {
            let by_type = group_by_type(read_instances(&instances)?);
            if by_type.is_empty() {
                return Err(invalid("no instances"));
            }
            fs::create_dir_all(&out)?;
            let mut ids = BTreeMap::new();
            for (t, list) in &by_type {
                ids.insert(*t, write_type_demonstrations(&world, *t, list, &out, !no_rasters)?);
                log::info!("demonstrated {} {t} episodes", list.len());
            }
            let splits = write_manifest(&world, &out, seed, &ids, !no_rasters)?;
            for (slug, s) in &splits.types {
                emit(&format!("{slug}: train {} val {} test {}\n", s.train.len(), s.val.len(), s.test.len()))?;
            }
        }
        Command::Alloc {
            instance,
            index,
            solver,
        } => {
            let list = read_instances(&instance)?;
            let inst = list
                .get(index)
                .ok_or_else(|| invalid(format!("no instance at line {index}")))?;
            let dag = decompose(&world, inst).map_err(|e| invalid(e.to_string()))?;
            let problem = build_problem(&world, &dag, &inst.scene0).map_err(|e| invalid(e.to_string()))?;
            let allocation = match solver {
                Solver::Exact => alloc::solve_exact_problem(&problem, world.t_max),
                Solver::Greedy => alloc::solve_greedy_problem(&problem, world.t_max),
            }
            .map_err(|e| invalid(e.to_string()))?;
            validate_allocation(&problem, &allocation, world.t_max).map_err(|v| invalid(format!("{v:?}")))?;
            let gamma: BTreeMap<String, String> = allocation
                .gamma
                .iter()
                .map(|(id, r)| (id.to_string(), format!("robot{}", r.index())))
                .collect();
            let subtasks: Vec<_> = dag
                .tasks
                .iter()
                .map(|t| {
                    json!({
                        "id": t.id,
                        "primitive": t.primitive.name(),
                        "pick": t.pick.to_string(),
                        "place": t.place.to_string(),
                        "depends_on": t.depends_on,
                    })
                })
                .collect();
            let report = json!({
                "task_type": inst.task_type.slug(),
                "subtasks": subtasks,
                "gamma": gamma,
                "order": allocation.order,
                "utility": allocation.total_utility,
                "time": allocation.total_time,
            });
            let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::Io(e.to_string()))?;
            emit(&(text + "\n"))?;
        }
        Command::Eval {
            data,
            policy,
            split,
            instructions,
            observation,
            runs,
            seed,
            task,
            out,
        } => {
            let policy = policy_by_name(&policy).ok_or_else(|| invalid(format!("unknown policy '{policy}'")))?;
            let mut episodes = load_split(&data, &split)?;
            if let Some(filter) = task {
                let keep = parse_types(&filter)?;
                episodes.retain(|t, _| keep.contains(t));
            }
            let config = EvalConfig {
                t_max: world.t_max,
                runs,
                instruction_kind: match instructions {
                    Instructions::High => InstructionKind::HighLevel,
                    Instructions::Human => InstructionKind::Human,
                },
                observation_mode: match observation {
                    Observe::Symbolic => ObservationMode::Symbolic,
                    Observe::Raster => ObservationMode::RasterOnly,
                },
                seed,
            };
            let report = evaluate(&world, policy.as_ref(), &episodes, &config);
            emit(&report.table())?;
            if let Some(path) = out {
                let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::Io(e.to_string()))?;
                write_text(&path, &(text + "\n"))?;
            }
        }
        Command::Render { episode, id, step, out } => {
            let records = read_episodes(&episode)?;
            let rec = match &id {
                Some(id) => records.iter().find(|r| &r.episode_id == id),
                None => records.first(),
            }
            .ok_or_else(|| invalid("episode not found"))?;
            let states = rec.replay_states(&world).map_err(|e| invalid(e.to_string()))?;
            let state = states
                .get(step)
                .ok_or_else(|| invalid(format!("step {step} outside 0..={}", rec.steps.len())))?;
            write_text(&out, &render_svg(&world, state))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

