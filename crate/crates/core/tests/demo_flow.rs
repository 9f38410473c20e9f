//! End-to-end flow on the bundled demo-search app: basic run, annotation,
//! evolution into a search shortcut, shortcut-first rerun, and fault
//! recovery.

use std::path::{Path, PathBuf};

use agent_core::action_space::ActionSpace;
use agent_core::evolution::{evolve, EvolveConfig};
use agent_core::executor::{run_task, RunConfig};
use agent_core::memory_graph::GraphStore;
use agent_core::reasoner::scripted::ScriptedReasoner;
use agent_core::reasoner::InstrumentedReasoner;
use agent_core::sim_env::{load_app, load_fault_plan, SimDevice};
use agent_core::trajectory::{annotate, decompose, StepOrigin, TaskStatus, Trajectory, TrajectoryId};

const TASK: &str = "search for the weather";

fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn make_reasoner() -> InstrumentedReasoner<ScriptedReasoner> {
    InstrumentedReasoner::new(
        ScriptedReasoner::from_path(&fixture_path("demo_search.fixtures.json")).unwrap(),
    )
}

fn make_device() -> SimDevice {
    SimDevice::new(load_app(&fixture_path("demo_search.app.json")).unwrap()).unwrap()
}

fn calls_of_kind(calls: &[(&'static str, agent_core::ReasonerUsage)], kind: &str) -> usize {
    calls.iter().filter(|(k, _)| *k == kind).count()
}

/// Basic run, then evolve, then rerun with the shortcut. Checks the call
/// counts and token totals the efficiency claim rests on.
#[test]
fn basic_run_then_evolved_run() {
    let mut device = make_device();
    let mut store = GraphStore::new();
    let mut reasoner = make_reasoner();
    let space = ActionSpace::basic();
    let config = RunConfig::default();

    let (basic_report, traj) = run_task(
        TASK,
        &mut device,
        &mut reasoner,
        &mut store,
        &space,
        &config,
        TrajectoryId(1),
    )
    .unwrap();

    assert_eq!(basic_report.status, TaskStatus::Success);
    assert_eq!(basic_report.steps_executed, 3);
    assert_eq!(basic_report.reasoner_calls_by_kind.get("plan_next"), Some(&3));
    assert_eq!(basic_report.reasoner_calls_by_kind.len(), 1);
    assert_eq!(basic_report.shortcut_invocations, 0);
    assert!(basic_report.fallback_events.is_empty());
    assert!(traj.steps.iter().all(|s| s.origin == StepOrigin::BasicReasoning));

    // Trajectory chains and decomposes into one triple per step.
    let triples = decompose(&traj).unwrap();
    assert_eq!(triples.len(), 3);

    let annotation = annotate(&traj, &mut reasoner, &mut store).unwrap();
    assert_eq!(calls_of_kind(&reasoner.calls, "describe_triple"), 3);
    // Three distinct pages appear in the triples: home, search, results.
    assert_eq!(calls_of_kind(&reasoner.calls, "merge_descriptions"), 3);
    assert!(annotation.pages.iter().all(|p| !p.after.is_empty()));
    assert!(annotation.elements.iter().all(|e| !e.after.is_empty()));

    let evolved = evolve(
        &traj,
        &[],
        &mut reasoner,
        &mut store,
        &space,
        &EvolveConfig::default(),
    )
    .unwrap();
    assert_eq!(evolved.judged_repetitive, Some(true));
    assert!(!evolved.gated);
    assert_eq!(evolved.created.len(), 1);
    assert_eq!(evolved.created[0].name, "search");
    assert_eq!(evolved.space.high_level_count(), 1);

    // The created shortcut's element sequence is a contiguous slice of
    // the source trajectory.
    let hla = evolved.space.high_level().next().unwrap();
    let traj_elements: Vec<u64> =
        traj.steps.iter().filter_map(|s| s.acted_element).map(|e| e.0).collect();
    let shortcut_elements: Vec<u64> = hla.steps.iter().map(|s| s.element.0).collect();
    assert_eq!(traj_elements, shortcut_elements);

    // Rerun with the evolved space: no planning, one applicability check,
    // same three device actions.
    let mut evolved_reasoner = make_reasoner();
    let (evolved_report, evolved_traj) = run_task(
        TASK,
        &mut device,
        &mut evolved_reasoner,
        &mut store,
        &evolved.space,
        &config,
        TrajectoryId(2),
    )
    .unwrap();

    assert_eq!(evolved_report.status, TaskStatus::Success);
    assert_eq!(evolved_report.steps_executed, 3);
    assert_eq!(evolved_report.reasoner_calls_by_kind.get("plan_next"), None);
    assert_eq!(evolved_report.reasoner_calls_by_kind.get("check_applicable"), Some(&1));
    assert_eq!(evolved_report.shortcut_invocations, 1);
    assert!(evolved_report.fallback_events.is_empty());
    assert!(evolved_traj
        .steps
        .iter()
        .all(|s| matches!(s.origin, StepOrigin::Shortcut { .. })));
    let orders: Vec<u32> = evolved_traj
        .steps
        .iter()
        .map(|s| match s.origin {
            StepOrigin::Shortcut { order, .. } => order,
            StepOrigin::BasicReasoning => 0,
        })
        .collect();
    assert_eq!(orders, vec![1, 2, 3]);

    assert!(
        evolved_report.usage_total.total() < basic_report.usage_total.total(),
        "evolved token proxy {} must be below basic {}",
        evolved_report.usage_total.total(),
        basic_report.usage_total.total()
    );

    // Report totals are exact sums over the instrumented call log.
    assert_eq!(evolved_report.usage_total, evolved_reasoner.usage_sum());
    assert_eq!(
        evolved_report.usage_total,
        evolved_traj
            .steps
            .iter()
            .fold(agent_core::ReasonerUsage::default(), |acc, s| acc + s.usage)
    );
}

/// Builds the evolved store/space pair the fault scenarios start from.
fn evolved_setup() -> (GraphStore, ActionSpace) {
    let mut device = make_device();
    let mut store = GraphStore::new();
    let mut reasoner = make_reasoner();
    let space = ActionSpace::basic();
    let (_, traj) = run_task(
        TASK,
        &mut device,
        &mut reasoner,
        &mut store,
        &space,
        &RunConfig::default(),
        TrajectoryId(1),
    )
    .unwrap();
    let evolved =
        evolve(&traj, &[], &mut reasoner, &mut store, &space, &EvolveConfig::default())
            .unwrap();
    (store, evolved.space)
}

fn run_with_faults(fault_file: &str) -> (agent_core::executor::TaskReport, Trajectory) {
    let (mut store, space) = evolved_setup();
    let model = load_app(&fixture_path("demo_search.app.json")).unwrap();
    let plan = load_fault_plan(&fixture_path(fault_file)).unwrap();
    let mut device = SimDevice::new(model).unwrap().with_faults(plan);
    let mut reasoner = make_reasoner();
    run_task(
        TASK,
        &mut device,
        &mut reasoner,
        &mut store,
        &space,
        &RunConfig::default(),
        TrajectoryId(2),
    )
    .unwrap()
}

#[test]
fn removed_element_falls_back_and_still_succeeds() {
    let (report, _) = run_with_faults("faults_remove.json");
    assert_eq!(report.status, TaskStatus::Success);
    assert_eq!(report.fallback_events.len(), 1, "events: {:?}", report.fallback_events);
    assert!(report.fallback_events[0].reason.contains("element unresolved"));
    assert_eq!(report.shortcut_invocations, 1);
}

#[test]
fn relocated_element_falls_back_and_still_succeeds() {
    let (report, _) = run_with_faults("faults_relocate.json");
    assert_eq!(report.status, TaskStatus::Success);
    assert_eq!(report.fallback_events.len(), 1, "events: {:?}", report.fallback_events);
    assert!(report.fallback_events[0].reason.contains("element unresolved"));
}

#[test]
fn deadend_transition_falls_back_and_still_succeeds() {
    let (report, traj) = run_with_faults("faults_deadend.json");
    assert_eq!(report.status, TaskStatus::Success);
    assert_eq!(report.fallback_events.len(), 1, "events: {:?}", report.fallback_events);
    assert!(report.fallback_events[0].reason.contains("unexpected page"));
    // The suppressed transition costs one extra device action.
    assert_eq!(traj.steps.len(), 4);
}

/// A fault run still produces a chained trajectory: the page observed
/// after the abort finalizes the unverified step.
#[test]
fn fault_runs_keep_the_trajectory_chained() {
    for fault_file in ["faults_remove.json", "faults_relocate.json", "faults_deadend.json"] {
        let (_, traj) = run_with_faults(fault_file);
        assert!(decompose(&traj).is_ok(), "broken chain under {fault_file}");
        assert_eq!(traj.status, TaskStatus::Success);
    }
}

#[test]
fn step_cap_aborts_long_runs() {
    let mut device = make_device();
    let mut store = GraphStore::new();
    let mut reasoner = make_reasoner();
    let config = RunConfig { max_steps: 1, ..RunConfig::default() };
    let (report, traj) = run_task(
        TASK,
        &mut device,
        &mut reasoner,
        &mut store,
        &ActionSpace::basic(),
        &config,
        TrajectoryId(1),
    )
    .unwrap();
    assert_eq!(report.status, TaskStatus::Aborted);
    assert_eq!(traj.status, TaskStatus::Aborted);
    assert_eq!(report.steps_executed, 1);
    assert!(report.outcome_detail.contains("step cap"));
}

/// Missing plan fixture surfaces as a reasoner error, not a hang.
#[test]
fn unknown_task_reports_missing_fixture() {
    let mut device = make_device();
    let mut store = GraphStore::new();
    let mut reasoner = make_reasoner();
    let err = run_task(
        "dance a jig",
        &mut device,
        &mut reasoner,
        &mut store,
        &ActionSpace::basic(),
        &RunConfig::default(),
        TrajectoryId(1),
    )
    .unwrap_err();
    assert!(err.to_string().contains("no fixture"), "got: {err}");
}
