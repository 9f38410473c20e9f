//! Task runner: shortcut-first execution with per-step verification and
//! fallback to the basic observe-reason-act loop.
//!
//! Each loop iteration observes the screen, records the page, and tries
//! the highest-priority applicable shortcut whose first step matches an
//! on-screen element. Template steps verify after every action; any abort
//! leaves the device as-is and hands control back to basic planning.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action_space::{
    instantiate, ActionInvocation, ActionSpace, ActionSpaceError, BasicActionKind, ElementRef,
    HighLevelAction,
};
use crate::clock::Clock;
use crate::memory_graph::{
    ActionParams, ElementNodeId, GraphError, GraphStore, Interaction, PageNodeId, ShortcutNodeId,
};
use crate::perception::{
    fingerprint_similarity, match_elements, page_fingerprint, MatchResult, PageFingerprint,
    ScreenObservation,
};
use crate::reasoner::{
    Applicability, PlanDecision, Reasoner, ReasonerError, ReasonerKind, ReasonerUsage,
    ShortcutContext, ShortcutStepView,
};
use crate::trajectory::{Step, StepOrigin, TaskStatus, Trajectory, TrajectoryId};

#[derive(Debug, Error)]
#[error("device action error: {0}")]
pub struct DeviceError(pub String);

/// The executor's view of a phone: capture the screen, do one thing,
/// start over.
pub trait Device {
    fn observe(&mut self) -> ScreenObservation;
    fn perform(&mut self, inv: &ActionInvocation) -> Result<(), DeviceError>;
    fn reset(&mut self);
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub max_steps: usize,
    /// Consecutive basic-step device failures tolerated before the run fails.
    pub max_action_retries: usize,
    /// Cosine floor for element matching.
    pub match_threshold: f64,
    /// Fingerprint floor for page identity and template target checks.
    pub page_sim_threshold: f64,
    /// Recent action strings handed to the planner.
    pub history_window: usize,
    /// Injectable time source; counter mode keeps reports byte-stable.
    pub clock: Clock,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            max_steps: 25,
            max_action_retries: 1,
            match_threshold: 0.9,
            page_sim_threshold: 0.8,
            history_window: 8,
            clock: Clock::counter(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallbackEvent {
    /// Device-level steps completed when the event fired.
    pub step_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: String,
    pub status: TaskStatus,
    pub steps_executed: usize,
    pub reasoner_calls_by_kind: BTreeMap<String, usize>,
    pub usage_total: ReasonerUsage,
    pub wall_time_ms: u64,
    pub per_step_ms: Vec<u64>,
    pub shortcut_invocations: usize,
    pub fallback_events: Vec<FallbackEvent>,
    pub outcome_detail: String,
}

#[derive(Debug, Error)]
pub enum ExecutorError {
    #[error("bad run config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
}

/// A shortcut compiled against concrete bindings, ready to drive the
/// device. `expected_targets[i]` holds the page fingerprint step i should
/// land on, when the element's LEADS_TO edges pin down exactly one page.
#[derive(Debug, Clone)]
pub struct ExecutionTemplate {
    pub shortcut_id: ShortcutNodeId,
    pub elements: Vec<ElementNodeId>,
    pub invocations: Vec<ActionInvocation>,
    pub expected_targets: Vec<Option<PageFingerprint>>,
}

pub fn build_template(
    store: &GraphStore,
    hla: &HighLevelAction,
    bindings: &std::collections::BTreeMap<String, String>,
) -> Result<ExecutionTemplate, ActionSpaceError> {
    let invocations = instantiate(hla, bindings)?;
    let elements: Vec<ElementNodeId> = hla.steps.iter().map(|s| s.element).collect();
    let expected_targets = elements
        .iter()
        .map(|el| {
            let targets = store.leads_to_targets(*el);
            match targets.as_slice() {
                [only] => store.page(*only).map(|p| p.fingerprint.clone()),
                _ => None,
            }
        })
        .collect();
    Ok(ExecutionTemplate {
        shortcut_id: ShortcutNodeId(hla.id),
        elements,
        invocations,
        expected_targets,
    })
}

/// Orders candidate shortcuts: matched at an earlier step first, then
/// longer, then newer. `candidates` pairs each shortcut with the lowest
/// COMPOSED_OF order at which a matched element appears.
pub fn prioritize(
    candidates: &mut Vec<(ShortcutNodeId, u32)>,
    space: &ActionSpace,
) {
    let len_of = |id: ShortcutNodeId| space.get(id.0).map_or(0, |h| h.steps.len());
    candidates.sort_by(|a, b| {
        a.1.cmp(&b.1)
            .then(len_of(b.0).cmp(&len_of(a.0)))
            .then(b.0.cmp(&a.0))
    });
}

/// One verified template step: performed, re-observed, and checked.
#[derive(Debug)]
pub struct TemplateStepOutcome {
    pub order: u32,
    pub element: ElementNodeId,
    pub invocation: ActionInvocation,
    pub descriptor: String,
    pub post_page: PageNodeId,
    pub wall_ms: u64,
}

/// A step that was performed but whose verification failed; the caller's
/// next clean observation supplies its post page.
#[derive(Debug)]
pub struct UnverifiedStep {
    pub order: u32,
    pub element: ElementNodeId,
    pub invocation: ActionInvocation,
    pub descriptor: String,
    pub started_ms: u64,
}

#[derive(Debug)]
pub struct TemplateRun {
    pub verified: Vec<TemplateStepOutcome>,
    pub unverified: Option<UnverifiedStep>,
    /// (actions performed, reason); None when every step verified.
    pub abort: Option<(usize, String)>,
}

/// Drives one instantiated shortcut. After each action the new screen
/// must (a) show the next step's element and (b) look like the acted
/// element's expected LEADS_TO page, when one is pinned down. Verifying
/// observations are recorded as pages; the observation that fails a check
/// is discarded so a transient fault cannot enter the store.
pub fn execute_template(
    tmpl: &ExecutionTemplate,
    device: &mut dyn Device,
    store: &mut GraphStore,
    obs: &ScreenObservation,
    matches: &[MatchResult],
    config: &RunConfig,
    clock: &mut Clock,
    performed_before: usize,
) -> Result<TemplateRun, ExecutorError> {
    let k = tmpl.invocations.len();
    let mut verified = Vec::new();
    let mut current_index = matches
        .iter()
        .find(|m| m.element_node_id == tmpl.elements[0])
        .map(|m| m.detected_index)
        .ok_or_else(|| {
            ExecutorError::BadConfig("template started without a step-1 match".into())
        })?;
    let mut descriptor_of_current = obs.elements[current_index].visual_descriptor.clone();

    for i in 0..k {
        if performed_before + verified.len() >= config.max_steps {
            return Ok(TemplateRun {
                verified,
                unverified: None,
                abort: Some((i, "step cap reached".into())),
            });
        }
        let started_ms = clock.now_ms();
        let mut invocation = tmpl.invocations[i].clone();
        if invocation.target.is_some() {
            invocation.target = Some(ElementRef::Index(current_index));
        }
        if let Err(e) = device.perform(&invocation) {
            return Ok(TemplateRun { verified, unverified: None, abort: Some((i, e.to_string())) });
        }

        let vobs = device.observe();
        let descriptor = descriptor_of_current.clone();
        let make_unverified = |descriptor: String| UnverifiedStep {
            order: (i + 1) as u32,
            element: tmpl.elements[i],
            invocation: invocation.clone(),
            descriptor,
            started_ms,
        };

        let next_index = if i + 1 < k {
            let vmatches = match_elements(&vobs, store, config.match_threshold);
            match vmatches.iter().find(|m| m.element_node_id == tmpl.elements[i + 1]) {
                Some(m) => Some((m.detected_index, vobs.elements[m.detected_index].visual_descriptor.clone())),
                None => {
                    return Ok(TemplateRun {
                        verified,
                        unverified: Some(make_unverified(descriptor)),
                        abort: Some((i + 1, "element unresolved".into())),
                    });
                }
            }
        } else {
            None
        };
        if let Some(expected) = &tmpl.expected_targets[i] {
            let sim = fingerprint_similarity(&page_fingerprint(&vobs), expected);
            if sim < config.page_sim_threshold {
                return Ok(TemplateRun {
                    verified,
                    unverified: Some(make_unverified(descriptor)),
                    abort: Some((i + 1, "unexpected page".into())),
                });
            }
        }

        let post_page = store.upsert_page(&vobs, config.page_sim_threshold);
        verified.push(TemplateStepOutcome {
            order: (i + 1) as u32,
            element: tmpl.elements[i],
            invocation,
            descriptor,
            post_page,
            wall_ms: clock.now_ms().saturating_sub(started_ms),
        });
        if let Some((idx, desc)) = next_index {
            current_index = idx;
            descriptor_of_current = desc;
        }
    }
    Ok(TemplateRun { verified, unverified: None, abort: None })
}

fn action_label(invocation: &ActionInvocation, descriptor: &str) -> String {
    match invocation.kind {
        BasicActionKind::Back => "back".to_string(),
        BasicActionKind::Swipe if descriptor.is_empty() => "swipe".to_string(),
        kind => format!("{} {descriptor}", kind.as_str()),
    }
}

fn observed_template(invocation: &ActionInvocation) -> String {
    match invocation.kind {
        BasicActionKind::Text => invocation.text_payload.clone().unwrap_or_default(),
        BasicActionKind::Swipe => invocation
            .swipe_params
            .as_ref()
            .map(|p| format!("{}:{}", p.direction.as_str(), p.magnitude))
            .unwrap_or_default(),
        _ => String::new(),
    }
}

/// A performed action waiting for the next observation to supply its post
/// page; finalizing it is what keeps the trajectory chained.
struct PendingStep {
    pre_page: PageNodeId,
    invocation: ActionInvocation,
    acted_element: Option<ElementNodeId>,
    descriptor: String,
    usage: ReasonerUsage,
    origin: StepOrigin,
    started_ms: u64,
}

struct RunState {
    steps: Vec<Step>,
    pending: Option<PendingStep>,
    history: Vec<String>,
}

impl RunState {
    fn performed(&self) -> usize {
        self.steps.len() + usize::from(self.pending.is_some())
    }

    fn finalize(
        &mut self,
        post_page: PageNodeId,
        store: &mut GraphStore,
        now_ms: u64,
    ) -> Result<(), GraphError> {
        let Some(p) = self.pending.take() else { return Ok(()) };
        if let Some(element) = p.acted_element {
            if post_page != p.pre_page {
                store.link_leads_to(element, post_page)?;
            }
        }
        self.history.push(action_label(&p.invocation, &p.descriptor));
        self.steps.push(Step {
            pre_page: p.pre_page,
            invocation: p.invocation,
            acted_element: p.acted_element,
            post_page,
            wall_time_ms: now_ms.saturating_sub(p.started_ms),
            usage: p.usage,
            origin: p.origin,
        });
        Ok(())
    }
}

/// Runs one task end to end. See the module docs for the loop shape; the
/// trajectory records every device-level action and the report's totals
/// are exact sums over the reasoner calls made.
pub fn run_task(
    task: &str,
    device: &mut dyn Device,
    reasoner: &mut dyn Reasoner,
    store: &mut GraphStore,
    space: &ActionSpace,
    config: &RunConfig,
    trajectory_id: TrajectoryId,
) -> Result<(TaskReport, Trajectory), ExecutorError> {
    if config.max_steps == 0 {
        return Err(ExecutorError::BadConfig("max_steps must be at least 1".into()));
    }
    let mut clock = config.clock.clone();
    let started_at = clock.now_ms();

    device.reset();
    let mut state = RunState { steps: Vec::new(), pending: None, history: Vec::new() };
    let mut calls: BTreeMap<String, usize> = BTreeMap::new();
    let mut usage_total = ReasonerUsage::default();
    let mut pending_usage = ReasonerUsage::default();
    let mut fallback_events: Vec<FallbackEvent> = Vec::new();
    let mut shortcut_invocations = 0usize;
    let mut consecutive_failures = 0usize;
    let status;
    let outcome_detail;

    let record_call = |kind: ReasonerKind,
                           usage: ReasonerUsage,
                           calls: &mut BTreeMap<String, usize>,
                           usage_total: &mut ReasonerUsage,
                           pending_usage: &mut ReasonerUsage| {
        *calls.entry(kind.as_str().to_string()).or_insert(0) += 1;
        *usage_total += usage;
        *pending_usage += usage;
    };

    'run: loop {
        let obs = device.observe();
        let page = store.upsert_page(&obs, config.page_sim_threshold);
        state.finalize(page, store, clock.now_ms())?;

        if state.steps.len() >= config.max_steps {
            status = TaskStatus::Aborted;
            outcome_detail = format!("step cap of {} reached", config.max_steps);
            break 'run;
        }

        let matches = match_elements(&obs, store, config.match_threshold);

        // Candidate shortcuts: every shortcut containing a matched element,
        // keyed by the lowest matched order, restricted to the action space.
        let mut matched_orders: BTreeMap<ShortcutNodeId, u32> = BTreeMap::new();
        for m in &matches {
            for (shortcut, order) in store.shortcuts_for_element(m.element_node_id)? {
                if !space.contains(shortcut.0) {
                    continue;
                }
                matched_orders
                    .entry(shortcut)
                    .and_modify(|o| *o = (*o).min(order))
                    .or_insert(order);
            }
        }
        let mut candidates: Vec<(ShortcutNodeId, u32)> = matched_orders.into_iter().collect();
        prioritize(&mut candidates, space);

        // Only a shortcut matched at its first step can start here; a
        // mid-sequence match waits for a screen showing its step 1.
        if let Some(&(shortcut_id, _)) = candidates.first().filter(|(_, order)| *order == 1) {
            let hla = space.get(shortcut_id.0).expect("candidates are drawn from the space");
            let ctx = shortcut_context(store, hla)?;
            let (verdict, usage) = reasoner.check_applicable(task, &ctx, &obs)?;
            record_call(
                ReasonerKind::CheckApplicable,
                usage,
                &mut calls,
                &mut usage_total,
                &mut pending_usage,
            );

            if let Applicability::Applicable { bindings, completes_task } = verdict {
                match build_template(store, hla, &bindings) {
                    Ok(tmpl) => {
                        shortcut_invocations += 1;
                        let run = execute_template(
                            &tmpl,
                            device,
                            store,
                            &obs,
                            &matches,
                            config,
                            &mut clock,
                            state.performed(),
                        )?;
                        let mut pre = page;
                        for outcome in run.verified {
                            let usage = std::mem::take(&mut pending_usage);
                            state.history.push(action_label(&outcome.invocation, &outcome.descriptor));
                            if outcome.post_page != pre {
                                store.link_leads_to(outcome.element, outcome.post_page)?;
                            }
                            state.steps.push(Step {
                                pre_page: pre,
                                invocation: outcome.invocation,
                                acted_element: Some(outcome.element),
                                post_page: outcome.post_page,
                                wall_time_ms: outcome.wall_ms,
                                usage,
                                origin: StepOrigin::Shortcut {
                                    shortcut: shortcut_id,
                                    order: outcome.order,
                                },
                            });
                            pre = outcome.post_page;
                        }
                        match run.abort {
                            None => {
                                if completes_task {
                                    status = TaskStatus::Success;
                                    outcome_detail =
                                        format!("completed by shortcut {}", hla.name);
                                    break 'run;
                                }
                            }
                            Some((performed, reason)) => {
                                if let Some(u) = run.unverified {
                                    state.pending = Some(PendingStep {
                                        pre_page: pre,
                                        invocation: u.invocation,
                                        acted_element: Some(u.element),
                                        descriptor: u.descriptor,
                                        usage: std::mem::take(&mut pending_usage),
                                        origin: StepOrigin::Shortcut {
                                            shortcut: shortcut_id,
                                            order: u.order,
                                        },
                                        started_ms: u.started_ms,
                                    });
                                }
                                fallback_events.push(FallbackEvent {
                                    step_index: state.performed(),
                                    reason: format!(
                                        "shortcut {} aborted after {} actions: {}",
                                        hla.name, performed, reason
                                    ),
                                });
                            }
                        }
                        continue 'run;
                    }
                    Err(e) => {
                        fallback_events.push(FallbackEvent {
                            step_index: state.performed(),
                            reason: format!("shortcut {} failed to instantiate: {e}", hla.name),
                        });
                        // Fall through to a basic step on this same screen.
                    }
                }
            }
            // Not applicable: fall through to a basic step.
        }

        // Basic observe-reason-act step.
        let window_start = state.history.len().saturating_sub(config.history_window);
        let history: Vec<String> = state.history[window_start..].to_vec();
        let (decision, usage) = reasoner.plan_next(task, &obs, &history)?;
        record_call(
            ReasonerKind::PlanNext,
            usage,
            &mut calls,
            &mut usage_total,
            &mut pending_usage,
        );
        match decision {
            PlanDecision::Finish { summary } => {
                status = TaskStatus::Success;
                outcome_detail = summary;
                break 'run;
            }
            PlanDecision::Fail { reason } => {
                status = TaskStatus::Fail;
                outcome_detail = reason;
                break 'run;
            }
            PlanDecision::Act { invocation, completes_task } => {
                let started_ms = clock.now_ms();
                let (acted_element, descriptor) = match &invocation.target {
                    Some(ElementRef::Index(i)) => {
                        let detected = &obs.elements[*i];
                        let el = store.add_element(
                            page,
                            detected,
                            Interaction {
                                kind: invocation.kind,
                                default_params: ActionParams {
                                    template: observed_template(&invocation),
                                },
                            },
                        )?;
                        (Some(el), detected.visual_descriptor.clone())
                    }
                    _ => (None, String::new()),
                };
                if let Err(e) = device.perform(&invocation) {
                    consecutive_failures += 1;
                    fallback_events.push(FallbackEvent {
                        step_index: state.performed(),
                        reason: e.to_string(),
                    });
                    if consecutive_failures > config.max_action_retries {
                        status = TaskStatus::Fail;
                        outcome_detail = format!(
                            "device failed {consecutive_failures} consecutive actions: {e}"
                        );
                        break 'run;
                    }
                    continue 'run;
                }
                consecutive_failures = 0;
                state.pending = Some(PendingStep {
                    pre_page: page,
                    invocation,
                    acted_element,
                    descriptor,
                    usage: std::mem::take(&mut pending_usage),
                    origin: StepOrigin::BasicReasoning,
                    started_ms,
                });
                if completes_task {
                    let final_obs = device.observe();
                    let post = store.upsert_page(&final_obs, config.page_sim_threshold);
                    state.finalize(post, store, clock.now_ms())?;
                    status = TaskStatus::Success;
                    outcome_detail = "completed by planner".to_string();
                    break 'run;
                }
            }
        }
    }

    // Trailing usage (calls after the last performed action) folds into
    // the last step so report totals equal the step sum.
    if pending_usage != ReasonerUsage::default() {
        if let Some(last) = state.steps.last_mut() {
            last.usage += pending_usage;
        }
    }

    let trajectory = Trajectory {
        id: trajectory_id,
        task: task.to_string(),
        steps: state.steps,
        status,
        started_at,
    };
    let report = TaskReport {
        task: task.to_string(),
        status,
        steps_executed: trajectory.steps.len(),
        reasoner_calls_by_kind: calls,
        usage_total,
        wall_time_ms: clock.now_ms().saturating_sub(started_at),
        per_step_ms: trajectory.steps.iter().map(|s| s.wall_time_ms).collect(),
        shortcut_invocations,
        fallback_events,
        outcome_detail,
    };
    Ok((report, trajectory))
}

fn shortcut_context(
    store: &GraphStore,
    hla: &HighLevelAction,
) -> Result<ShortcutContext, ExecutorError> {
    let steps = hla
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let node = store.element(s.element).ok_or(GraphError::UnknownElement(s.element))?;
            Ok(ShortcutStepView {
                order: (i + 1) as u32,
                element_id: s.element.0,
                element_description: node.description.clone(),
                ocr_text: node.ocr_text.clone(),
                kind: s.kind,
                param_template: s.param_template.clone(),
            })
        })
        .collect::<Result<Vec<_>, ExecutorError>>()?;
    let placeholders = hla
        .placeholders()
        .map_err(|e| ExecutorError::BadConfig(format!("stored shortcut is malformed: {e}")))?
        .into_iter()
        .collect();
    Ok(ShortcutContext {
        shortcut_id: hla.id,
        name: hla.name.clone(),
        description: hla.description.clone(),
        applicability: hla.applicability.clone(),
        steps,
        placeholders,
    })
}
