//! Benchmark suites, metric aggregation, and the paired t-test used to
//! compare basic-space and evolved-space runs.
//!
//! Simulated wall times are counter-clock artifacts; reasoner call counts
//! and token totals are the efficiency signals that matter. Token totals
//! are exact integer sums over every reasoner call a suite makes.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action_space::ActionSpace;
use crate::evolution::{evolve, EvolveConfig, EvolveError};
use crate::executor::{run_task, ExecutorError, RunConfig, TaskReport};
use crate::memory_graph::{GraphError, GraphStore};
use crate::reasoner::{Reasoner, ReasonerUsage};
use crate::sim_env::{AppModel, SimDevice, SimError};
use crate::trajectory::{persist, TaskStatus, Trajectory, TrajectoryError, TrajectoryId};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid suite: {0:?}")]
    InvalidSuite(Vec<String>),
    #[error("success rate of an empty outcome list is undefined")]
    EmptyOutcomes,
    #[error("sample length mismatch: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("need at least 2 paired samples, got {n}")]
    SampleTooSmall { n: usize },
    #[error("differences have zero variance")]
    ZeroVariance,
    #[error("summaries come from different suites: {0}")]
    SuiteMismatch(String),
    #[error(transparent)]
    Executor(#[from] ExecutorError),
    #[error(transparent)]
    Evolve(#[from] EvolveError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed suite file: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteTask {
    pub task: String,
    pub expected_status: TaskStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_steps: Option<usize>,
}

fn default_repeats() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSuite {
    /// App-model file the suite runs against, relative to the suite file.
    pub app: String,
    pub tasks: Vec<SuiteTask>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

impl BenchmarkSuite {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut failures = Vec::new();
        if self.repeats < 1 {
            failures.push("repeats must be at least 1".to_string());
        }
        if self.tasks.is_empty() {
            failures.push("suite has no tasks".to_string());
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if t.task.trim().is_empty() {
                failures.push(format!("task {i} has empty text"));
            }
        }
        if failures.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::InvalidSuite(failures))
        }
    }
}

pub fn load_suite(path: &Path) -> Result<BenchmarkSuite, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let suite: BenchmarkSuite = serde_json::from_str(&text)?;
    suite.validate()?;
    Ok(suite)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceVariant {
    Basic,
    Evolved,
}

impl SpaceVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            SpaceVariant::Basic => "basic",
            SpaceVariant::Evolved => "evolved",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub variant: SpaceVariant,
    /// Evolved only: run each task once in the basic space, then evolve,
    /// before the measured runs. Prep usage is accounted separately.
    pub auto_evolve: bool,
    pub run: RunConfig,
    pub evolve: EvolveConfig,
    pub out_dir: Option<PathBuf>,
}

impl SuiteOptions {
    pub fn for_variant(variant: SpaceVariant) -> Self {
        SuiteOptions {
            variant,
            auto_evolve: variant == SpaceVariant::Evolved,
            run: RunConfig::default(),
            evolve: EvolveConfig::default(),
            out_dir: None,
        }
    }
}

/// Usage spent getting the store evolved before the measured runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepReport {
    pub runs: usize,
    pub shortcuts_created: usize,
    pub usage: ReasonerUsage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: String,
    pub expected_status: TaskStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_steps: Option<usize>,
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Averages are over successful runs only; 0 when none succeeded.
    pub avg_steps: f64,
    pub avg_task_time_ms: f64,
    pub avg_step_time_ms: f64,
    pub avg_tokens: f64,
    /// Exact sums over all runs of this task, success or not.
    pub total_prompt_tokens: u64,
    pub total_completion_tokens: u64,
    pub reasoner_calls_by_kind: BTreeMap<String, usize>,
    pub statuses: Vec<TaskStatus>,
    pub task_times_ms: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub app: String,
    pub variant: SpaceVariant,
    pub repeats: usize,
    pub success_rate: f64,
    pub avg_steps: f64,
    pub avg_task_time_ms: f64,
    pub avg_step_time_ms: f64,
    pub avg_tokens: f64,
    pub total_prompt_tokens: u64,
    pub total_completion_tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prep: Option<PrepReport>,
    pub tasks: Vec<TaskMetrics>,
}

impl MetricsSummary {
    /// Every token the suite spent, measured runs plus evolve prep.
    pub fn grand_total_usage(&self) -> ReasonerUsage {
        let mut u = ReasonerUsage {
            prompt_tokens: self.total_prompt_tokens,
            completion_tokens: self.total_completion_tokens,
        };
        if let Some(prep) = &self.prep {
            u += prep.usage;
        }
        u
    }
}

pub fn success_rate(outcomes: &[TaskStatus]) -> Result<f64, HarnessError> {
    if outcomes.is_empty() {
        return Err(HarnessError::EmptyOutcomes);
    }
    let ok = outcomes.iter().filter(|s| **s == TaskStatus::Success).count();
    Ok(ok as f64 / outcomes.len() as f64)
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn canonical_string<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("serializable");
    let mut s = serde_json::to_string_pretty(&v).expect("serializable");
    s.push('\n');
    s
}

fn summarize_task(
    spec: &SuiteTask,
    reports: &[TaskReport],
) -> TaskMetrics {
    let statuses: Vec<TaskStatus> = reports.iter().map(|r| r.status).collect();
    let successes = statuses.iter().filter(|s| **s == TaskStatus::Success).count();
    let ok: Vec<&TaskReport> =
        reports.iter().filter(|r| r.status == TaskStatus::Success).collect();
    let avg_steps = mean(&ok.iter().map(|r| r.steps_executed as f64).collect::<Vec<_>>());
    let avg_task_time_ms =
        mean(&ok.iter().map(|r| r.wall_time_ms as f64).collect::<Vec<_>>());
    let avg_step_time_ms = mean(
        &ok.iter()
            .filter(|r| r.steps_executed > 0)
            .map(|r| r.wall_time_ms as f64 / r.steps_executed as f64)
            .collect::<Vec<_>>(),
    );
    let avg_tokens =
        mean(&ok.iter().map(|r| r.usage_total.total() as f64).collect::<Vec<_>>());
    let mut calls: BTreeMap<String, usize> = BTreeMap::new();
    let mut prompt = 0u64;
    let mut completion = 0u64;
    for r in reports {
        prompt += r.usage_total.prompt_tokens;
        completion += r.usage_total.completion_tokens;
        for (kind, n) in &r.reasoner_calls_by_kind {
            *calls.entry(kind.clone()).or_insert(0) += n;
        }
    }
    TaskMetrics {
        task: spec.task.clone(),
        expected_status: spec.expected_status,
        ground_truth_steps: spec.ground_truth_steps,
        runs: reports.len(),
        successes,
        success_rate: successes as f64 / reports.len().max(1) as f64,
        avg_steps,
        avg_task_time_ms,
        avg_step_time_ms,
        avg_tokens,
        total_prompt_tokens: prompt,
        total_completion_tokens: completion,
        reasoner_calls_by_kind: calls,
        statuses,
        task_times_ms: reports.iter().map(|r| r.wall_time_ms).collect(),
    }
}

/// Runs every suite task `repeats` times against a fresh store and
/// returns the aggregated metrics. With `out_dir` set, writes
/// `summary.json`, per-run reports, trajectories, and the final store;
/// all output is canonical, so reruns are byte-identical.
pub fn run_suite(
    suite: &BenchmarkSuite,
    model: &AppModel,
    reasoner: &mut dyn Reasoner,
    opts: &SuiteOptions,
) -> Result<MetricsSummary, HarnessError> {
    suite.validate()?;
    let mut device = SimDevice::new(model.clone())?;
    let mut store = GraphStore::new();
    let mut space = ActionSpace::basic();
    let mut next_id = 1u64;
    let mut all_trajectories: Vec<Trajectory> = Vec::new();
    let mut prep = None;

    if opts.variant == SpaceVariant::Evolved && opts.auto_evolve {
        let mut usage = ReasonerUsage::default();
        let mut shortcuts_created = 0usize;
        let mut runs = 0usize;
        for spec in &suite.tasks {
            let id = TrajectoryId(next_id);
            next_id += 1;
            let (report, traj) = run_task(
                &spec.task,
                &mut device,
                reasoner,
                &mut store,
                &space,
                &opts.run,
                id,
            )?;
            runs += 1;
            usage += report.usage_total;
            let evolved = evolve(&traj, &[], reasoner, &mut store, &space, &opts.evolve)?;
            usage += evolved.usage_total;
            shortcuts_created += evolved.created.len();
            space = evolved.space;
            all_trajectories.push(traj);
        }
        prep = Some(PrepReport { runs, shortcuts_created, usage });
    }

    let mut task_metrics = Vec::new();
    let mut run_reports: Vec<(usize, usize, TaskReport)> = Vec::new();
    for (ti, spec) in suite.tasks.iter().enumerate() {
        let mut reports = Vec::new();
        for ri in 0..suite.repeats {
            let id = TrajectoryId(next_id);
            next_id += 1;
            let (report, traj) = run_task(
                &spec.task,
                &mut device,
                reasoner,
                &mut store,
                &space,
                &opts.run,
                id,
            )?;
            all_trajectories.push(traj);
            run_reports.push((ti, ri, report.clone()));
            reports.push(report);
        }
        task_metrics.push(summarize_task(spec, &reports));
    }

    let all_statuses: Vec<TaskStatus> =
        task_metrics.iter().flat_map(|t| t.statuses.iter().copied()).collect();
    let ok_reports: Vec<&TaskReport> = run_reports
        .iter()
        .map(|(_, _, r)| r)
        .filter(|r| r.status == TaskStatus::Success)
        .collect();
    let summary = MetricsSummary {
        app: suite.app.clone(),
        variant: opts.variant,
        repeats: suite.repeats,
        success_rate: success_rate(&all_statuses)?,
        avg_steps: mean(
            &ok_reports.iter().map(|r| r.steps_executed as f64).collect::<Vec<_>>(),
        ),
        avg_task_time_ms: mean(
            &ok_reports.iter().map(|r| r.wall_time_ms as f64).collect::<Vec<_>>(),
        ),
        avg_step_time_ms: mean(
            &ok_reports
                .iter()
                .filter(|r| r.steps_executed > 0)
                .map(|r| r.wall_time_ms as f64 / r.steps_executed as f64)
                .collect::<Vec<_>>(),
        ),
        avg_tokens: mean(
            &ok_reports.iter().map(|r| r.usage_total.total() as f64).collect::<Vec<_>>(),
        ),
        total_prompt_tokens: task_metrics.iter().map(|t| t.total_prompt_tokens).sum(),
        total_completion_tokens: task_metrics
            .iter()
            .map(|t| t.total_completion_tokens)
            .sum(),
        prep,
        tasks: task_metrics,
    };

    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("summary.json"), canonical_string(&summary))?;
        let reports_dir = dir.join("reports");
        std::fs::create_dir_all(&reports_dir)?;
        for (ti, ri, report) in &run_reports {
            let name = format!("task{ti:02}_run{ri:02}.report.json");
            std::fs::write(reports_dir.join(name), canonical_string(report))?;
        }
        let traj_dir = dir.join("trajectories");
        for traj in &all_trajectories {
            persist(traj, &traj_dir)?;
        }
        store.save(&dir.join("store.graph.jsonl"))?;
    }
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub mean_diff: f64,
    pub t: f64,
    pub df: f64,
    pub one_tailed_p: f64,
}

/// One-tailed paired t-test of mean(a - b) < 0. Sample standard
/// deviation uses the n-1 denominator; the p-value is the Student-t
/// lower tail at df = n-1.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult, HarnessError> {
    if a.len() != b.len() {
        return Err(HarnessError::LengthMismatch { a: a.len(), b: b.len() });
    }
    let n = a.len();
    if n < 2 {
        return Err(HarnessError::SampleTooSmall { n });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean_diff = mean(&d);
    let var = d.iter().map(|x| (x - mean_diff).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    if var == 0.0 {
        return Err(HarnessError::ZeroVariance);
    }
    let sd = var.sqrt();
    let t = mean_diff / (sd / (n as f64).sqrt());
    let df = n as f64 - 1.0;
    Ok(TTestResult { mean_diff, t, df, one_tailed_p: student_t_cdf(t, df) })
}

/// Lower-tail CDF of Student's t via the regularized incomplete beta
/// function.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    let half = 0.5 * regularized_incomplete_beta(0.5 * df, 0.5, x);
    if t <= 0.0 {
        half
    } else {
        1.0 - half
    }
}

/// I_x(a, b), evaluated by the continued fraction on whichever side of
/// the mean converges fast, per the usual symmetry.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
        + a * x.ln()
        + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const FPMIN: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let numerator = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + numerator * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + numerator / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let numerator = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + numerator * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + numerator / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Lanczos approximation (g = 7, 9 terms).
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection keeps the series in its convergent range.
        let pi = std::f64::consts::PI;
        pi.ln() - (pi * x).sin().abs().ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut acc = 0.999_999_999_999_809_9;
        for (i, &c) in COEFFS.iter().enumerate() {
            acc += c / (x + i as f64 + 1.0);
        }
        let t = x + 7.5;
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthClass {
    Short,
    Medium,
    Long,
    Unknown,
}

impl LengthClass {
    pub fn from_ground_truth(steps: Option<usize>) -> Self {
        match steps {
            Some(n) if n <= 5 => LengthClass::Short,
            Some(n) if n <= 10 => LengthClass::Medium,
            Some(_) => LengthClass::Long,
            None => LengthClass::Unknown,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LengthClass::Short => "short",
            LengthClass::Medium => "medium",
            LengthClass::Long => "long",
            LengthClass::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDelta {
    pub task: String,
    pub length_class: LengthClass,
    pub jointly_successful: bool,
    pub avg_steps_a: f64,
    pub avg_steps_b: f64,
    pub delta_steps: f64,
    pub avg_tokens_a: f64,
    pub avg_tokens_b: f64,
    pub delta_tokens: f64,
    pub avg_time_ms_a: f64,
    pub avg_time_ms_b: f64,
    pub delta_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: LengthClass,
    pub tasks: usize,
    pub success_rate_a: f64,
    pub success_rate_b: f64,
    pub avg_steps_a: f64,
    pub avg_steps_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub variant_a: SpaceVariant,
    pub variant_b: SpaceVariant,
    pub success_rate_a: f64,
    pub success_rate_b: f64,
    pub tasks: Vec<TaskDelta>,
    pub by_length_class: Vec<ClassSummary>,
    /// Paired test over per-task mean times on jointly successful tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_t_test: Option<TTestResult>,
    pub t_test_note: String,
}

/// Side-by-side comparison of two summaries from the same suite. Time
/// comparisons only consider tasks successful under both variants.
pub fn compare_runs(
    a: &MetricsSummary,
    b: &MetricsSummary,
) -> Result<ComparisonReport, HarnessError> {
    if a.tasks.len() != b.tasks.len() {
        return Err(HarnessError::SuiteMismatch(format!(
            "{} tasks vs {}",
            a.tasks.len(),
            b.tasks.len()
        )));
    }
    for (ta, tb) in a.tasks.iter().zip(&b.tasks) {
        if ta.task != tb.task {
            return Err(HarnessError::SuiteMismatch(format!(
                "task {:?} vs {:?}",
                ta.task, tb.task
            )));
        }
    }

    let mut deltas = Vec::new();
    let mut times_a = Vec::new();
    let mut times_b = Vec::new();
    for (ta, tb) in a.tasks.iter().zip(&b.tasks) {
        let jointly = ta.successes > 0 && tb.successes > 0;
        if jointly {
            times_a.push(ta.avg_task_time_ms);
            times_b.push(tb.avg_task_time_ms);
        }
        deltas.push(TaskDelta {
            task: ta.task.clone(),
            length_class: LengthClass::from_ground_truth(ta.ground_truth_steps),
            jointly_successful: jointly,
            avg_steps_a: ta.avg_steps,
            avg_steps_b: tb.avg_steps,
            delta_steps: ta.avg_steps - tb.avg_steps,
            avg_tokens_a: ta.avg_tokens,
            avg_tokens_b: tb.avg_tokens,
            delta_tokens: ta.avg_tokens - tb.avg_tokens,
            avg_time_ms_a: ta.avg_task_time_ms,
            avg_time_ms_b: tb.avg_task_time_ms,
            delta_time_ms: ta.avg_task_time_ms - tb.avg_task_time_ms,
        });
    }

    let mut classes: BTreeMap<LengthClass, Vec<(&TaskMetrics, &TaskMetrics)>> =
        BTreeMap::new();
    for (ta, tb) in a.tasks.iter().zip(&b.tasks) {
        classes
            .entry(LengthClass::from_ground_truth(ta.ground_truth_steps))
            .or_default()
            .push((ta, tb));
    }
    let by_length_class = classes
        .into_iter()
        .map(|(class, pairs)| ClassSummary {
            class,
            tasks: pairs.len(),
            success_rate_a: mean(&pairs.iter().map(|(x, _)| x.success_rate).collect::<Vec<_>>()),
            success_rate_b: mean(&pairs.iter().map(|(_, y)| y.success_rate).collect::<Vec<_>>()),
            avg_steps_a: mean(&pairs.iter().map(|(x, _)| x.avg_steps).collect::<Vec<_>>()),
            avg_steps_b: mean(&pairs.iter().map(|(_, y)| y.avg_steps).collect::<Vec<_>>()),
        })
        .collect();

    let (time_t_test, t_test_note) = match paired_t_test(&times_a, &times_b) {
        Ok(result) => (Some(result), String::new()),
        Err(HarnessError::ZeroVariance) => (None, "no difference".to_string()),
        Err(HarnessError::SampleTooSmall { n }) => {
            (None, format!("only {n} jointly successful tasks; need 2"))
        }
        Err(e) => return Err(e),
    };

    Ok(ComparisonReport {
        variant_a: a.variant,
        variant_b: b.variant,
        success_rate_a: a.success_rate,
        success_rate_b: b.success_rate,
        tasks: deltas,
        by_length_class,
        time_t_test,
        t_test_note,
    })
}

/// Plain-text table for one summary. Times are counter-clock ticks in
/// simulated mode, flagged as such.
pub fn render_summary(s: &MetricsSummary) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "suite: app={} space={} repeats={}\n",
        s.app,
        s.variant.as_str(),
        s.repeats
    ));
    out.push_str(&format!(
        "overall: success_rate={:.2} avg_steps={:.2} avg_tokens={:.1} tokens(prompt={}, completion={})\n",
        s.success_rate, s.avg_steps, s.avg_tokens, s.total_prompt_tokens, s.total_completion_tokens
    ));
    if let Some(prep) = &s.prep {
        out.push_str(&format!(
            "prep: runs={} shortcuts_created={} tokens={}\n",
            prep.runs,
            prep.shortcuts_created,
            prep.usage.total()
        ));
    }
    out.push_str(&format!(
        "{:<40} {:>4} {:>4} {:>9} {:>10} {:>12}\n",
        "task", "runs", "ok", "avg_steps", "avg_tokens", "time_ms(sim)"
    ));
    for t in &s.tasks {
        out.push_str(&format!(
            "{:<40} {:>4} {:>4} {:>9.2} {:>10.1} {:>12.1}\n",
            truncate(&t.task, 40),
            t.runs,
            t.successes,
            t.avg_steps,
            t.avg_tokens,
            t.avg_task_time_ms
        ));
    }
    out
}

pub fn render_comparison(c: &ComparisonReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "comparison: a={} b={} success_rate {:.2} vs {:.2}\n",
        c.variant_a.as_str(),
        c.variant_b.as_str(),
        c.success_rate_a,
        c.success_rate_b
    ));
    out.push_str(&format!(
        "{:<40} {:>6} {:>9} {:>9} {:>11} {:>11}\n",
        "task", "class", "steps_a", "steps_b", "tokens_a", "tokens_b"
    ));
    for t in &c.tasks {
        out.push_str(&format!(
            "{:<40} {:>6} {:>9.2} {:>9.2} {:>11.1} {:>11.1}\n",
            truncate(&t.task, 40),
            t.length_class.as_str(),
            t.avg_steps_a,
            t.avg_steps_b,
            t.avg_tokens_a,
            t.avg_tokens_b
        ));
    }
    for cls in &c.by_length_class {
        out.push_str(&format!(
            "class {:<8} tasks={} sr {:.2} vs {:.2}, steps {:.2} vs {:.2}\n",
            cls.class.as_str(),
            cls.tasks,
            cls.success_rate_a,
            cls.success_rate_b,
            cls.avg_steps_a,
            cls.avg_steps_b
        ));
    }
    match &c.time_t_test {
        Some(t) => out.push_str(&format!(
            "paired t-test on task times: mean_diff={:.4} t={:.4} df={} p(one-tailed)={:.6}\n",
            t.mean_diff, t.t, t.df, t.one_tailed_p
        )),
        None => out.push_str(&format!("paired t-test: {}\n", c.t_test_note)),
    }
    out
}

fn truncate(s: &str, max: usize) -> String {
    if s.chars().count() <= max {
        s.to_string()
    } else {
        let cut: String = s.chars().take(max.saturating_sub(3)).collect();
        format!("{cut}...")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn status_list(spec: &str) -> Vec<TaskStatus> {
        spec.chars()
            .map(|c| match c {
                'S' => TaskStatus::Success,
                'F' => TaskStatus::Fail,
                _ => TaskStatus::Aborted,
            })
            .collect()
    }

    #[test]
    fn success_rate_counts_successes() {
        assert_eq!(success_rate(&status_list("SSSFF")).unwrap(), 0.6);
        assert_eq!(success_rate(&status_list("SS")).unwrap(), 1.0);
        assert_eq!(success_rate(&status_list("A")).unwrap(), 0.0);
    }

    #[test]
    fn success_rate_of_empty_errors() {
        assert!(matches!(success_rate(&[]), Err(HarnessError::EmptyOutcomes)));
    }

    #[test]
    fn worked_t_test_example() {
        let r = paired_t_test(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert_eq!(r.mean_diff, -2.0);
        assert_eq!(r.df, 2.0);
        assert!((r.t - (-3.464_101_6)).abs() < 1e-6, "t = {}", r.t);
        assert!((r.one_tailed_p - 0.037_089_9).abs() < 1e-6, "p = {}", r.one_tailed_p);
    }

    #[test]
    fn t_test_length_mismatch() {
        assert!(matches!(
            paired_t_test(&[1.0, 2.0], &[1.0]),
            Err(HarnessError::LengthMismatch { a: 2, b: 1 })
        ));
    }

    #[test]
    fn t_test_too_few_samples() {
        assert!(matches!(
            paired_t_test(&[1.0], &[2.0]),
            Err(HarnessError::SampleTooSmall { n: 1 })
        ));
    }

    #[test]
    fn t_test_zero_variance() {
        assert!(matches!(
            paired_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]),
            Err(HarnessError::ZeroVariance)
        ));
        // Constant nonzero difference is still zero variance.
        assert!(matches!(
            paired_t_test(&[2.0, 3.0], &[1.0, 2.0]),
            Err(HarnessError::ZeroVariance)
        ));
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, b) = 1 - (1-x)^b.
        for &(b, x) in &[(0.5, 0.25), (2.0, 0.7), (1.0, 0.5)] {
            let got = regularized_incomplete_beta(1.0, b, x);
            let want = 1.0 - (1.0 - x as f64).powf(b);
            assert!((got - want).abs() < 1e-12, "I_{x}(1,{b}): {got} vs {want}");
        }
        // Symmetry I_x(a,b) = 1 - I_(1-x)(b,a).
        let lhs = regularized_incomplete_beta(2.5, 1.5, 0.3);
        let rhs = 1.0 - regularized_incomplete_beta(1.5, 2.5, 0.7);
        assert!((lhs - rhs).abs() < 1e-12);
        assert_eq!(regularized_incomplete_beta(3.0, 4.0, 0.0), 0.0);
        assert_eq!(regularized_incomplete_beta(3.0, 4.0, 1.0), 1.0);
    }

    #[test]
    fn t_cdf_symmetry() {
        for &df in &[1.0, 2.0, 5.0, 19.0] {
            assert!((student_t_cdf(0.0, df) - 0.5).abs() < 1e-12);
            for &t in &[0.3, 1.0, 2.7] {
                let s = student_t_cdf(t, df) + student_t_cdf(-t, df);
                assert!((s - 1.0).abs() < 1e-12, "df={df} t={t}: {s}");
            }
        }
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-12);
        assert!((ln_gamma(2.0)).abs() < 1e-12);
        // Gamma(5) = 24.
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-11);
        // Gamma(1/2) = sqrt(pi).
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-11);
    }

    #[test]
    fn suite_validation_failures() {
        let suite = BenchmarkSuite { app: "a.app.json".into(), tasks: vec![], repeats: 0 };
        let Err(HarnessError::InvalidSuite(failures)) = suite.validate() else {
            panic!("expected invalid");
        };
        assert_eq!(failures.len(), 2);
        assert!(failures.iter().any(|f| f.contains("repeats")));
        assert!(failures.iter().any(|f| f.contains("no tasks")));
    }

    #[test]
    fn suite_parses_with_default_repeats() {
        let suite: BenchmarkSuite = serde_json::from_str(
            r#"{"app": "x.app.json", "tasks": [{"task": "do it", "expected_status": "success"}]}"#,
        )
        .unwrap();
        assert_eq!(suite.repeats, 5);
        assert!(suite.validate().is_ok());
        assert_eq!(suite.tasks[0].ground_truth_steps, None);
    }

    #[test]
    fn length_classes_split_at_5_and_10() {
        use LengthClass::*;
        assert_eq!(LengthClass::from_ground_truth(Some(1)), Short);
        assert_eq!(LengthClass::from_ground_truth(Some(5)), Short);
        assert_eq!(LengthClass::from_ground_truth(Some(6)), Medium);
        assert_eq!(LengthClass::from_ground_truth(Some(10)), Medium);
        assert_eq!(LengthClass::from_ground_truth(Some(11)), Long);
        assert_eq!(LengthClass::from_ground_truth(None), Unknown);
    }

    fn metrics(task: &str, gts: Option<usize>, successes: usize, runs: usize) -> TaskMetrics {
        TaskMetrics {
            task: task.to_string(),
            expected_status: TaskStatus::Success,
            ground_truth_steps: gts,
            runs,
            successes,
            success_rate: successes as f64 / runs as f64,
            avg_steps: 3.0,
            avg_task_time_ms: 10.0,
            avg_step_time_ms: 3.3,
            avg_tokens: 100.0,
            total_prompt_tokens: 80,
            total_completion_tokens: 20,
            reasoner_calls_by_kind: BTreeMap::new(),
            statuses: vec![TaskStatus::Success; runs],
            task_times_ms: vec![10; runs],
        }
    }

    fn summary_of(tasks: Vec<TaskMetrics>) -> MetricsSummary {
        MetricsSummary {
            app: "demo.app.json".into(),
            variant: SpaceVariant::Basic,
            repeats: 1,
            success_rate: 1.0,
            avg_steps: 3.0,
            avg_task_time_ms: 10.0,
            avg_step_time_ms: 3.3,
            avg_tokens: 100.0,
            total_prompt_tokens: tasks.iter().map(|t| t.total_prompt_tokens).sum(),
            total_completion_tokens: tasks.iter().map(|t| t.total_completion_tokens).sum(),
            prep: None,
            tasks,
        }
    }

    #[test]
    fn compare_rejects_different_task_lists() {
        let a = summary_of(vec![metrics("one", Some(3), 1, 1)]);
        let b = summary_of(vec![metrics("two", Some(3), 1, 1)]);
        assert!(matches!(compare_runs(&a, &b), Err(HarnessError::SuiteMismatch(_))));
    }

    #[test]
    fn compare_of_identical_summaries_reports_no_difference() {
        let a = summary_of(vec![
            metrics("one", Some(3), 1, 1),
            metrics("two", Some(7), 1, 1),
        ]);
        let report = compare_runs(&a, &a.clone()).unwrap();
        assert!(report.time_t_test.is_none());
        assert_eq!(report.t_test_note, "no difference");
        assert!(report.tasks.iter().all(|t| t.delta_steps == 0.0));
        assert_eq!(report.by_length_class.len(), 2);
        assert_eq!(report.by_length_class[0].class, LengthClass::Short);
        assert_eq!(report.by_length_class[1].class, LengthClass::Medium);
    }

    #[test]
    fn compare_excludes_not_jointly_successful_tasks_from_pairing() {
        let mut ta = metrics("one", Some(3), 1, 1);
        ta.avg_task_time_ms = 30.0;
        let a = summary_of(vec![ta, metrics("two", Some(3), 0, 1)]);
        let b = summary_of(vec![metrics("one", Some(3), 1, 1), metrics("two", Some(3), 1, 1)]);
        let report = compare_runs(&a, &b).unwrap();
        assert!(report.tasks[0].jointly_successful);
        assert!(!report.tasks[1].jointly_successful);
        // Only one joint pair, not enough for a t-test.
        assert!(report.time_t_test.is_none());
        assert!(report.t_test_note.contains("only 1"));
    }

    #[test]
    fn grand_total_includes_prep() {
        let mut s = summary_of(vec![metrics("one", Some(3), 1, 1)]);
        assert_eq!(s.grand_total_usage().total(), 100);
        s.prep = Some(PrepReport {
            runs: 1,
            shortcuts_created: 1,
            usage: ReasonerUsage { prompt_tokens: 7, completion_tokens: 5 },
        });
        assert_eq!(s.grand_total_usage().total(), 112);
    }

    #[test]
    fn render_does_not_panic_and_mentions_key_numbers() {
        let s = summary_of(vec![
            metrics("a task with quite a long name indeed over forty chars", Some(3), 1, 1),
            metrics("short task", Some(7), 1, 1),
        ]);
        let text = render_summary(&s);
        assert!(text.contains("success_rate=1.00"));
        assert!(text.contains("..."));
        let report = compare_runs(&s, &s.clone()).unwrap();
        let text = render_comparison(&report);
        assert!(text.contains("no difference"));
    }
}
