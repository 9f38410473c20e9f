//! `agent`: run tasks against simulated apps, annotate and evolve the
//! memory graph, and benchmark basic vs evolved action spaces.
//!
//! Exit codes: 0 success, 1 task failure, 2 usage or validation error,
//! 3 internal error.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use agent_core::action_space::ActionSpace;
use agent_core::clock::Clock;
use agent_core::evolution::{evolve, EvolveConfig};
use agent_core::executor::{run_task, RunConfig, TaskReport};
use agent_core::harness::{
    compare_runs, load_suite, render_comparison, render_summary, run_suite, MetricsSummary,
    SpaceVariant, SuiteOptions,
};
use agent_core::memory_graph::{GraphConfig, GraphStore};
use agent_core::reasoner::remote::{RemoteConfig, RemoteReasoner, ReplayReasoner};
use agent_core::reasoner::scripted::ScriptedReasoner;
use agent_core::reasoner::Reasoner;
use agent_core::sim_env::{load_app, load_fault_plan, SimDevice};
use agent_core::trajectory::{
    annotate, load as load_trajectory, next_trajectory_id, persist, TaskStatus, Trajectory,
    TrajectoryId,
};

const EXIT_TASK_FAILURE: i32 = 1;
const EXIT_VALIDATION: i32 = 2;
const EXIT_INTERNAL: i32 = 3;

/// An error already classified with the exit code it should produce.
struct CodedError {
    code: i32,
    source: anyhow::Error,
}

fn validation<E: Into<anyhow::Error>>(e: E) -> CodedError {
    CodedError { code: EXIT_VALIDATION, source: e.into() }
}

fn internal<E: Into<anyhow::Error>>(e: E) -> CodedError {
    CodedError { code: EXIT_INTERNAL, source: e.into() }
}

type CliResult = Result<i32, CodedError>;

#[derive(Parser)]
#[command(
    name = "agent",
    about = "GUI agent that learns shortcut actions from its own runs",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one task on a simulated app.
    Run(RunArgs),
    /// Describe the pages and elements a recorded trajectory touched.
    Annotate(AnnotateArgs),
    /// Mine a trajectory for repeated patterns and synthesize shortcuts.
    Evolve(EvolveArgs),
    /// Run a benchmark suite and write a metrics summary.
    Bench(BenchArgs),
    /// Compare two benchmark output directories.
    Compare(CompareArgs),
    /// Export or import the memory graph dump.
    Graph(GraphArgs),
}

#[derive(Args)]
struct ReasonerArg {
    /// Reasoner backend: scripted:FIXTURE_FILE, remote, or replay:TRANSCRIPT_FILE.
    #[arg(long, value_name = "SPEC")]
    reasoner: String,
    /// With --reasoner remote: record the exchange to this transcript file.
    #[arg(long, value_name = "FILE")]
    transcript: Option<PathBuf>,
}

impl ReasonerArg {
    fn build(&self) -> Result<Box<dyn Reasoner>, CodedError> {
        if let Some(fixture) = self.reasoner.strip_prefix("scripted:") {
            let r = ScriptedReasoner::from_path(Path::new(fixture)).map_err(validation)?;
            return Ok(Box::new(r));
        }
        if let Some(transcript) = self.reasoner.strip_prefix("replay:") {
            let r = ReplayReasoner::from_path(Path::new(transcript)).map_err(validation)?;
            return Ok(Box::new(r));
        }
        if self.reasoner == "remote" {
            let config = RemoteConfig::from_env().map_err(validation)?;
            let mut r = RemoteReasoner::new(config);
            if let Some(path) = &self.transcript {
                r = r.with_transcript(path).map_err(internal)?;
            }
            return Ok(Box::new(r));
        }
        Err(validation(anyhow!(
            "unrecognized --reasoner {:?}; expected scripted:FILE, remote, or replay:FILE",
            self.reasoner
        )))
    }
}

#[derive(Args)]
struct RunArgs {
    /// App model file (.app.json).
    #[arg(long, value_name = "FILE")]
    app: PathBuf,
    /// Task text handed to the reasoner.
    #[arg(long)]
    task: String,
    /// Store directory; created when absent.
    #[arg(long, value_name = "DIR")]
    store: PathBuf,
    /// Action space to run with.
    #[arg(long, value_enum, default_value = "basic")]
    space: SpaceArg,
    #[command(flatten)]
    reasoner: ReasonerArg,
    /// Step cap for the run.
    #[arg(long, default_value_t = 25)]
    max_steps: usize,
    /// Seed for the deterministic simulated clock.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fault-injection plan file.
    #[arg(long, value_name = "FILE")]
    faults: Option<PathBuf>,
    /// Write the task report as JSON to this file.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum SpaceArg {
    Basic,
    Evolved,
}

#[derive(Args)]
struct AnnotateArgs {
    #[arg(long, value_name = "DIR")]
    store: PathBuf,
    /// Trajectory id to annotate.
    #[arg(long)]
    trajectory: u64,
    #[command(flatten)]
    reasoner: ReasonerArg,
}

#[derive(Args)]
struct EvolveArgs {
    #[arg(long, value_name = "DIR")]
    store: PathBuf,
    /// Trajectory id to mine.
    #[arg(long)]
    trajectory: u64,
    #[command(flatten)]
    reasoner: ReasonerArg,
    #[arg(long, default_value_t = 2)]
    min_len: usize,
    #[arg(long, default_value_t = 1)]
    min_support: usize,
    #[arg(long, default_value_t = 1)]
    max_new: usize,
    /// Mine across stored successful trajectories for the same task
    /// instead of gating on a single judged trajectory.
    #[arg(long)]
    cross_trajectory: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// App model file; overrides the app named inside the suite.
    #[arg(long, value_name = "FILE")]
    app: Option<PathBuf>,
    /// Suite file (.suite.json).
    #[arg(long, value_name = "FILE")]
    suite: PathBuf,
    /// Overrides the suite's repeat count.
    #[arg(long)]
    repeats: Option<usize>,
    /// Output directory for summary, reports, and trajectories.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "basic")]
    space: SpaceArg,
    #[command(flatten)]
    reasoner: ReasonerArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CompareArgs {
    /// First bench output directory.
    #[arg(long, value_name = "DIR")]
    a: PathBuf,
    /// Second bench output directory.
    #[arg(long, value_name = "DIR")]
    b: PathBuf,
}

#[derive(Args)]
struct GraphArgs {
    #[command(subcommand)]
    direction: GraphDirection,
}

#[derive(Subcommand)]
enum GraphDirection {
    /// Write the store's graph dump to a file.
    Export {
        #[arg(long, value_name = "DIR")]
        store: PathBuf,
        #[arg(long, value_name = "FILE")]
        file: PathBuf,
    },
    /// Replace the store's graph with the contents of a dump file.
    Import {
        #[arg(long, value_name = "DIR")]
        store: PathBuf,
        #[arg(long, value_name = "FILE")]
        file: PathBuf,
    },
}

fn store_file(dir: &Path) -> PathBuf {
    dir.join("store.graph.jsonl")
}

fn trajectories_dir(dir: &Path) -> PathBuf {
    dir.join("trajectories")
}

fn load_store(dir: &Path) -> Result<GraphStore, CodedError> {
    let path = store_file(dir);
    if path.exists() {
        GraphStore::load(&path, GraphConfig::default(), Clock::counter()).map_err(validation)
    } else {
        Ok(GraphStore::new())
    }
}

fn save_store(store: &GraphStore, dir: &Path) -> Result<(), CodedError> {
    fs::create_dir_all(dir).map_err(internal)?;
    store.save(&store_file(dir)).map_err(internal)
}

fn canonical_json(value: &TaskReport) -> String {
    let v = serde_json::to_value(value).expect("serializable");
    let mut s = serde_json::to_string_pretty(&v).expect("serializable");
    s.push('\n');
    s
}

fn run_command(args: &RunArgs) -> CliResult {
    let model = load_app(&args.app).map_err(validation)?;
    let mut device = SimDevice::new(model).map_err(validation)?;
    if let Some(faults) = &args.faults {
        let plan = load_fault_plan(faults).map_err(validation)?;
        device = device.with_faults(plan);
    }
    let mut store = load_store(&args.store)?;
    let space = match args.space {
        SpaceArg::Basic => ActionSpace::basic(),
        SpaceArg::Evolved => store.action_space(),
    };
    let mut reasoner = args.reasoner.build()?;
    let config = RunConfig {
        max_steps: args.max_steps,
        clock: Clock::counter_from(args.seed, 1),
        ..RunConfig::default()
    };
    let traj_dir = trajectories_dir(&args.store);
    let id = next_trajectory_id(&traj_dir).map_err(internal)?;
    let (report, traj) = run_task(
        &args.task,
        &mut device,
        reasoner.as_mut(),
        &mut store,
        &space,
        &config,
        id,
    )
    .map_err(internal)?;
    persist(&traj, &traj_dir).map_err(internal)?;
    save_store(&store, &args.store)?;
    if let Some(path) = &args.report {
        fs::write(path, canonical_json(&report)).map_err(internal)?;
    }
    print_report(&report, id);
    Ok(if report.status == TaskStatus::Success { 0 } else { EXIT_TASK_FAILURE })
}

fn print_report(report: &TaskReport, id: TrajectoryId) {
    let calls: Vec<String> = report
        .reasoner_calls_by_kind
        .iter()
        .map(|(k, n)| format!("{k}={n}"))
        .collect();
    println!(
        "task {:?}: {:?}, {} steps, trajectory {}, shortcut_invocations={}, fallbacks={}, calls [{}], tokens {} ({} prompt, {} completion)",
        report.task,
        report.status,
        report.steps_executed,
        id.0,
        report.shortcut_invocations,
        report.fallback_events.len(),
        calls.join(", "),
        report.usage_total.total(),
        report.usage_total.prompt_tokens,
        report.usage_total.completion_tokens,
    );
    for event in &report.fallback_events {
        println!("  fallback at step {}: {}", event.step_index, event.reason);
    }
    if !report.outcome_detail.is_empty() {
        println!("  outcome: {}", report.outcome_detail);
    }
}

fn annotate_command(args: &AnnotateArgs) -> CliResult {
    let mut store = load_store(&args.store)?;
    let traj = load_trajectory(&trajectories_dir(&args.store), TrajectoryId(args.trajectory))
        .map_err(validation)?;
    let mut reasoner = args.reasoner.build()?;
    let report = annotate(&traj, reasoner.as_mut(), &mut store).map_err(internal)?;
    save_store(&store, &args.store)?;
    println!(
        "annotated trajectory {}: {} describe calls, {} merges, {} pages, {} elements, tokens {}",
        args.trajectory,
        report.describe_calls,
        report.merge_calls,
        report.pages.len(),
        report.elements.len(),
        report.usage_total.total(),
    );
    Ok(0)
}

fn load_prior_trajectories(
    dir: &Path,
    exclude: TrajectoryId,
) -> Result<Vec<Trajectory>, CodedError> {
    let mut prior = Vec::new();
    if !dir.exists() {
        return Ok(prior);
    }
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).map_err(internal)? {
        let entry = entry.map_err(internal)?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".traj.jsonl") {
            if let Ok(id) = stem.parse::<u64>() {
                if id != exclude.0 {
                    ids.push(id);
                }
            }
        }
    }
    ids.sort_unstable();
    for id in ids {
        prior.push(load_trajectory(dir, TrajectoryId(id)).map_err(validation)?);
    }
    Ok(prior)
}

fn evolve_command(args: &EvolveArgs) -> CliResult {
    let mut store = load_store(&args.store)?;
    let traj_dir = trajectories_dir(&args.store);
    let id = TrajectoryId(args.trajectory);
    let traj = load_trajectory(&traj_dir, id).map_err(validation)?;
    let prior = if args.cross_trajectory {
        load_prior_trajectories(&traj_dir, id)?
    } else {
        Vec::new()
    };
    let mut reasoner = args.reasoner.build()?;
    let space = store.action_space();
    let config = EvolveConfig {
        min_len: args.min_len,
        min_support: args.min_support,
        max_new_shortcuts: args.max_new,
        cross_trajectory: args.cross_trajectory,
        ..EvolveConfig::default()
    };
    let report = evolve(&traj, &prior, reasoner.as_mut(), &mut store, &space, &config)
        .map_err(internal)?;
    save_store(&store, &args.store)?;
    if report.gated {
        println!("gated: {}", report.gate_reason.as_deref().unwrap_or("no reason recorded"));
    }
    for created in &report.created {
        println!("created shortcut {} ({})", created.id.0, created.name);
    }
    for skipped in &report.skipped {
        println!("skipped {:?}: {}", skipped.pattern, skipped.reason);
    }
    println!(
        "evolve: {} candidates, {} created, {} skipped, tokens {}",
        report.candidates_considered,
        report.created.len(),
        report.skipped.len(),
        report.usage_total.total(),
    );
    Ok(0)
}

fn bench_command(args: &BenchArgs) -> CliResult {
    let mut suite = load_suite(&args.suite).map_err(validation)?;
    if let Some(repeats) = args.repeats {
        suite.repeats = repeats;
        suite.validate().map_err(validation)?;
    }
    let app_path = match &args.app {
        Some(path) => path.clone(),
        None => {
            let named = PathBuf::from(&suite.app);
            if named.is_absolute() {
                named
            } else {
                args.suite.parent().unwrap_or(Path::new(".")).join(named)
            }
        }
    };
    let model = load_app(&app_path).map_err(validation)?;
    let mut reasoner = args.reasoner.build()?;
    let variant = match args.space {
        SpaceArg::Basic => SpaceVariant::Basic,
        SpaceArg::Evolved => SpaceVariant::Evolved,
    };
    let mut opts = SuiteOptions::for_variant(variant);
    opts.run.clock = Clock::counter_from(args.seed, 1);
    opts.out_dir = Some(args.out.clone());
    let summary = run_suite(&suite, &model, reasoner.as_mut(), &opts).map_err(internal)?;
    print!("{}", render_summary(&summary));
    Ok(0)
}

fn read_summary(dir: &Path) -> Result<MetricsSummary, CodedError> {
    let path = dir.join("summary.json");
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(validation)?;
    serde_json::from_str(&text).map_err(validation)
}

fn compare_command(args: &CompareArgs) -> CliResult {
    let a = read_summary(&args.a)?;
    let b = read_summary(&args.b)?;
    let report = compare_runs(&a, &b).map_err(validation)?;
    print!("{}", render_comparison(&report));
    Ok(0)
}

fn graph_command(args: &GraphArgs) -> CliResult {
    match &args.direction {
        GraphDirection::Export { store, file } => {
            let store = load_store(store)?;
            fs::write(file, store.export_to_string()).map_err(internal)?;
            println!(
                "exported {} pages, {} elements, {} shortcuts to {}",
                store.pages().count(),
                store.elements().count(),
                store.shortcuts().count(),
                file.display()
            );
            Ok(0)
        }
        GraphDirection::Import { store: dir, file } => {
            let reader = BufReader::new(fs::File::open(file).map_err(validation)?);
            let store =
                GraphStore::import_graph(reader, GraphConfig::default(), Clock::counter())
                    .map_err(validation)?;
            save_store(&store, dir)?;
            println!(
                "imported {} pages, {} elements, {} shortcuts into {}",
                store.pages().count(),
                store.elements().count(),
                store.shortcuts().count(),
                dir.display()
            );
            Ok(0)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run_command(args),
        Command::Annotate(args) => annotate_command(args),
        Command::Evolve(args) => evolve_command(args),
        Command::Bench(args) => bench_command(args),
        Command::Compare(args) => compare_command(args),
        Command::Graph(args) => graph_command(args),
    };
    match result {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {:#}", e.source);
            std::process::exit(e.code);
        }
    }
}
