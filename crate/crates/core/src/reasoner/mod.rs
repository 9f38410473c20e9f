//! The single interface through which all model judgment flows.
//!
//! Six operations cover planning, description, merging, repetition
//! judgment, shortcut synthesis, and applicability checks. A scripted
//! implementation answers from fixture files for offline tests; a remote
//! implementation speaks a chat-completion wire format with transcript
//! record/replay.

pub mod remote;
pub mod scripted;

use std::collections::BTreeMap;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::action_space::{ActionInvocation, ActionStep, BasicActionKind, ElementRef};
use crate::hashing::digest_hex;
use crate::memory_graph::{ElementNodeId, ShortcutSpec};
use crate::perception::ScreenObservation;
use crate::trajectory::TrajectoryId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReasonerKind {
    PlanNext,
    DescribeTriple,
    MergeDescriptions,
    JudgeRepetitive,
    SynthesizeShortcut,
    CheckApplicable,
}

impl ReasonerKind {
    pub const ALL: [ReasonerKind; 6] = [
        ReasonerKind::PlanNext,
        ReasonerKind::DescribeTriple,
        ReasonerKind::MergeDescriptions,
        ReasonerKind::JudgeRepetitive,
        ReasonerKind::SynthesizeShortcut,
        ReasonerKind::CheckApplicable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReasonerKind::PlanNext => "plan_next",
            ReasonerKind::DescribeTriple => "describe_triple",
            ReasonerKind::MergeDescriptions => "merge_descriptions",
            ReasonerKind::JudgeRepetitive => "judge_repetitive",
            ReasonerKind::SynthesizeShortcut => "synthesize_shortcut",
            ReasonerKind::CheckApplicable => "check_applicable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReasonerUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl ReasonerUsage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl Add for ReasonerUsage {
    type Output = ReasonerUsage;
    fn add(self, rhs: ReasonerUsage) -> ReasonerUsage {
        ReasonerUsage {
            prompt_tokens: self.prompt_tokens + rhs.prompt_tokens,
            completion_tokens: self.completion_tokens + rhs.completion_tokens,
        }
    }
}

impl AddAssign for ReasonerUsage {
    fn add_assign(&mut self, rhs: ReasonerUsage) {
        *self = *self + rhs;
    }
}

#[derive(Debug, Error)]
pub enum ReasonerError {
    #[error("no fixture matches {kind} request (digest {digest}); payload starts: {payload}")]
    MissingFixture { kind: &'static str, digest: String, payload: String },
    #[error("merge_page_descriptions requires a non-empty input list")]
    EmptyMergeInput,
    #[error("trajectory slice too short for synthesis: {len} steps (need at least 2)")]
    SliceTooShort { len: usize },
    #[error("bad {kind} response: {reason}")]
    BadResponse { kind: &'static str, reason: String },
    #[error("transport failure after retry: {0}")]
    Transport(String),
    #[error("environment variable {0} is not set")]
    MissingEnv(&'static str),
    #[error("transcript entry {index}: {reason}")]
    TranscriptMismatch { index: usize, reason: String },
    #[error("transcript exhausted: live run issued more requests than were recorded")]
    TranscriptExhausted,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Planner output. `completes_task` marks an action whose successful
/// execution finishes the task without another planning round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum PlanDecision {
    Act {
        invocation: ActionInvocation,
        #[serde(default)]
        completes_task: bool,
    },
    Finish { summary: String },
    Fail { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleDescriptions {
    pub source_page: String,
    pub element: String,
    pub target_page: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum Applicability {
    Applicable {
        #[serde(default)]
        bindings: BTreeMap<String, String>,
        #[serde(default)]
        completes_task: bool,
    },
    NotApplicable { reason: String },
}

/// A page as the reasoner sees it: stored description plus the raw
/// descriptors captured when the page was first observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageSummary {
    pub page_id: u64,
    pub description: String,
    pub descriptors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleAction {
    pub element_id: u64,
    pub descriptor: String,
    pub ocr_text: String,
    pub kind: BasicActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_payload: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleContext {
    pub source: PageSummary,
    pub action: TripleAction,
    pub target: PageSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStep {
    pub element_id: u64,
    pub kind: BasicActionKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub trajectory_id: TrajectoryId,
    pub task: String,
    pub steps: Vec<SummaryStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceStep {
    pub element_id: u64,
    pub element_description: String,
    pub ocr_text: String,
    pub kind: BasicActionKind,
    /// Parameters as observed in the trajectory: the typed text for text
    /// steps, "direction:magnitude" for swipes, empty otherwise.
    pub observed_params: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySlice {
    pub trajectory_id: TrajectoryId,
    pub task: String,
    pub steps: Vec<SliceStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortcutStepView {
    pub order: u32,
    pub element_id: u64,
    pub element_description: String,
    pub ocr_text: String,
    pub kind: BasicActionKind,
    pub param_template: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortcutContext {
    pub shortcut_id: u64,
    pub name: String,
    pub description: String,
    pub applicability: String,
    pub steps: Vec<ShortcutStepView>,
    pub placeholders: Vec<String>,
}

pub trait Reasoner {
    fn plan_next(
        &mut self,
        task: &str,
        obs: &ScreenObservation,
        history: &[String],
    ) -> Result<(PlanDecision, ReasonerUsage), ReasonerError>;

    fn describe_triple(
        &mut self,
        task: &str,
        ctx: &TripleContext,
    ) -> Result<(TripleDescriptions, ReasonerUsage), ReasonerError>;

    fn merge_page_descriptions(
        &mut self,
        task: &str,
        texts: &[String],
    ) -> Result<(String, ReasonerUsage), ReasonerError>;

    fn judge_repetitive(
        &mut self,
        task: &str,
        summary: &TrajectorySummary,
    ) -> Result<(bool, ReasonerUsage), ReasonerError>;

    fn synthesize_shortcut(
        &mut self,
        task: &str,
        slice: &TrajectorySlice,
    ) -> Result<(ShortcutSpec, ReasonerUsage), ReasonerError>;

    fn check_applicable(
        &mut self,
        task: &str,
        ctx: &ShortcutContext,
        obs: &ScreenObservation,
    ) -> Result<(Applicability, ReasonerUsage), ReasonerError>;
}

impl Reasoner for Box<dyn Reasoner> {
    fn plan_next(
        &mut self,
        task: &str,
        obs: &ScreenObservation,
        history: &[String],
    ) -> Result<(PlanDecision, ReasonerUsage), ReasonerError> {
        (**self).plan_next(task, obs, history)
    }

    fn describe_triple(
        &mut self,
        task: &str,
        ctx: &TripleContext,
    ) -> Result<(TripleDescriptions, ReasonerUsage), ReasonerError> {
        (**self).describe_triple(task, ctx)
    }

    fn merge_page_descriptions(
        &mut self,
        task: &str,
        texts: &[String],
    ) -> Result<(String, ReasonerUsage), ReasonerError> {
        (**self).merge_page_descriptions(task, texts)
    }

    fn judge_repetitive(
        &mut self,
        task: &str,
        summary: &TrajectorySummary,
    ) -> Result<(bool, ReasonerUsage), ReasonerError> {
        (**self).judge_repetitive(task, summary)
    }

    fn synthesize_shortcut(
        &mut self,
        task: &str,
        slice: &TrajectorySlice,
    ) -> Result<(ShortcutSpec, ReasonerUsage), ReasonerError> {
        (**self).synthesize_shortcut(task, slice)
    }

    fn check_applicable(
        &mut self,
        task: &str,
        ctx: &ShortcutContext,
        obs: &ScreenObservation,
    ) -> Result<(Applicability, ReasonerUsage), ReasonerError> {
        (**self).check_applicable(task, ctx, obs)
    }
}

/// Records (kind, usage) for every successful call so tests can check
/// that reported token totals equal the sum over actual calls.
pub struct InstrumentedReasoner<R> {
    pub inner: R,
    pub calls: Vec<(&'static str, ReasonerUsage)>,
}

impl<R> InstrumentedReasoner<R> {
    pub fn new(inner: R) -> Self {
        InstrumentedReasoner { inner, calls: Vec::new() }
    }

    pub fn usage_sum(&self) -> ReasonerUsage {
        self.calls.iter().fold(ReasonerUsage::default(), |acc, (_, u)| acc + *u)
    }
}

impl<R: Reasoner> Reasoner for InstrumentedReasoner<R> {
    fn plan_next(
        &mut self,
        task: &str,
        obs: &ScreenObservation,
        history: &[String],
    ) -> Result<(PlanDecision, ReasonerUsage), ReasonerError> {
        let out = self.inner.plan_next(task, obs, history)?;
        self.calls.push((ReasonerKind::PlanNext.as_str(), out.1));
        Ok(out)
    }

    fn describe_triple(
        &mut self,
        task: &str,
        ctx: &TripleContext,
    ) -> Result<(TripleDescriptions, ReasonerUsage), ReasonerError> {
        let out = self.inner.describe_triple(task, ctx)?;
        self.calls.push((ReasonerKind::DescribeTriple.as_str(), out.1));
        Ok(out)
    }

    fn merge_page_descriptions(
        &mut self,
        task: &str,
        texts: &[String],
    ) -> Result<(String, ReasonerUsage), ReasonerError> {
        let out = self.inner.merge_page_descriptions(task, texts)?;
        self.calls.push((ReasonerKind::MergeDescriptions.as_str(), out.1));
        Ok(out)
    }

    fn judge_repetitive(
        &mut self,
        task: &str,
        summary: &TrajectorySummary,
    ) -> Result<(bool, ReasonerUsage), ReasonerError> {
        let out = self.inner.judge_repetitive(task, summary)?;
        self.calls.push((ReasonerKind::JudgeRepetitive.as_str(), out.1));
        Ok(out)
    }

    fn synthesize_shortcut(
        &mut self,
        task: &str,
        slice: &TrajectorySlice,
    ) -> Result<(ShortcutSpec, ReasonerUsage), ReasonerError> {
        let out = self.inner.synthesize_shortcut(task, slice)?;
        self.calls.push((ReasonerKind::SynthesizeShortcut.as_str(), out.1));
        Ok(out)
    }

    fn check_applicable(
        &mut self,
        task: &str,
        ctx: &ShortcutContext,
        obs: &ScreenObservation,
    ) -> Result<(Applicability, ReasonerUsage), ReasonerError> {
        let out = self.inner.check_applicable(task, ctx, obs)?;
        self.calls.push((ReasonerKind::CheckApplicable.as_str(), out.1));
        Ok(out)
    }
}

// ---- Canonical payloads -------------------------------------------------
//
// serde_json's default map is ordered, so serializing a Value built from
// these records yields one canonical string per logical request. Digests,
// fixture matching, and transcript comparison all key off that string.

pub fn canonical_json(value: &Value) -> String {
    serde_json::to_string(value).expect("JSON value serialization cannot fail")
}

fn screen_value(obs: &ScreenObservation) -> Value {
    Value::Array(
        obs.elements
            .iter()
            .map(|e| {
                serde_json::json!({
                    "index": e.index,
                    "role_hint": e.role_hint,
                    "ocr_text": e.ocr_text,
                    "descriptor": e.visual_descriptor,
                })
            })
            .collect(),
    )
}

fn descriptor_list(obs: &ScreenObservation) -> Value {
    Value::Array(
        obs.elements.iter().map(|e| Value::String(e.visual_descriptor.clone())).collect(),
    )
}

pub fn plan_payload(obs: &ScreenObservation, history: &[String]) -> Value {
    serde_json::json!({
        "screen": screen_value(obs),
        "descriptors": descriptor_list(obs),
        "last_action": history.last().cloned().unwrap_or_default(),
        "history": history,
    })
}

pub fn triple_payload(ctx: &TripleContext) -> Value {
    serde_json::to_value(ctx).expect("triple context serializes")
}

pub fn merge_payload(texts: &[String]) -> Value {
    serde_json::json!({ "texts": texts })
}

pub fn judge_payload(summary: &TrajectorySummary) -> Value {
    serde_json::to_value(summary).expect("trajectory summary serializes")
}

pub fn synth_payload(slice: &TrajectorySlice) -> Value {
    serde_json::to_value(slice).expect("trajectory slice serializes")
}

pub fn applicable_payload(ctx: &ShortcutContext, obs: &ScreenObservation) -> Value {
    serde_json::json!({
        "shortcut": serde_json::to_value(ctx).expect("shortcut context serializes"),
        "screen": screen_value(obs),
        "descriptors": descriptor_list(obs),
    })
}

/// Canonical request string: kind and task wrap the payload.
pub fn canonical_request(kind: ReasonerKind, task: &str, payload: &Value) -> String {
    canonical_json(&serde_json::json!({
        "kind": kind.as_str(),
        "task": task,
        "payload": payload,
    }))
}

pub fn request_digest(kind: ReasonerKind, task: &str, payload: &Value) -> String {
    digest_hex(canonical_request(kind, task, payload).as_bytes())
}

/// Stated proxy for scripted-mode token accounting: one token per four
/// bytes of canonical payload (prompt) or response (completion), rounded
/// up.
pub fn proxy_usage(payload: &Value, response: &Value) -> ReasonerUsage {
    let prompt = canonical_json(payload).len() as u64;
    let completion = canonical_json(response).len() as u64;
    ReasonerUsage {
        prompt_tokens: prompt.div_ceil(4),
        completion_tokens: completion.div_ceil(4),
    }
}

// ---- Response interpretation --------------------------------------------
//
// Shared by the scripted reasoner, the remote client, and transcript
// replay so every mode enforces the same postconditions.

fn bad(kind: ReasonerKind, reason: impl Into<String>) -> ReasonerError {
    ReasonerError::BadResponse { kind: kind.as_str(), reason: reason.into() }
}

pub fn parse_plan(value: &Value, obs: &ScreenObservation) -> Result<PlanDecision, ReasonerError> {
    let kind = ReasonerKind::PlanNext;
    let decision: PlanDecision =
        serde_json::from_value(value.clone()).map_err(|e| bad(kind, e.to_string()))?;
    if let PlanDecision::Act { invocation, .. } = &decision {
        if let Err(violations) = crate::action_space::validate_invocation(invocation) {
            return Err(bad(kind, format!("invalid invocation: {}", violations.join("; "))));
        }
        if let Some(ElementRef::Index(i)) = &invocation.target {
            if *i >= obs.elements.len() {
                return Err(bad(
                    kind,
                    format!("element index {i} out of range ({} on screen)", obs.elements.len()),
                ));
            }
        }
        if let Some(ElementRef::Node(_)) = &invocation.target {
            return Err(bad(kind, "planner must reference on-screen indices, not node ids"));
        }
    }
    Ok(decision)
}

pub fn parse_triple_descriptions(value: &Value) -> Result<TripleDescriptions, ReasonerError> {
    let kind = ReasonerKind::DescribeTriple;
    let d: TripleDescriptions =
        serde_json::from_value(value.clone()).map_err(|e| bad(kind, e.to_string()))?;
    if d.source_page.is_empty() || d.element.is_empty() || d.target_page.is_empty() {
        return Err(bad(kind, "all three descriptions must be non-empty"));
    }
    Ok(d)
}

pub fn parse_merged(value: &Value) -> Result<String, ReasonerError> {
    let kind = ReasonerKind::MergeDescriptions;
    match value {
        Value::String(s) if !s.is_empty() => Ok(s.clone()),
        Value::String(_) => Err(bad(kind, "merged description must be non-empty")),
        other => Err(bad(kind, format!("expected a JSON string, got {other}"))),
    }
}

pub fn parse_judgement(value: &Value) -> Result<bool, ReasonerError> {
    match value {
        Value::Bool(b) => Ok(*b),
        other => Err(bad(
            ReasonerKind::JudgeRepetitive,
            format!("expected a JSON boolean, got {other}"),
        )),
    }
}

#[derive(Debug, Clone, Deserialize)]
struct SynthesisResponse {
    name: String,
    description: String,
    applicability: String,
    /// Per-step parameter templates; omitted templates freeze the
    /// observed parameters.
    #[serde(default)]
    templates: Option<Vec<String>>,
}

pub fn ensure_slice(slice: &TrajectorySlice) -> Result<(), ReasonerError> {
    if slice.steps.len() < 2 {
        return Err(ReasonerError::SliceTooShort { len: slice.steps.len() });
    }
    Ok(())
}

/// Zips a synthesis response with the slice it was asked about. The
/// response cannot reference node ids directly, so step identity always
/// comes from the slice; the response only names the shortcut and chooses
/// which parameters stay free.
pub fn parse_synthesis(value: &Value, slice: &TrajectorySlice) -> Result<ShortcutSpec, ReasonerError> {
    let kind = ReasonerKind::SynthesizeShortcut;
    ensure_slice(slice)?;
    let resp: SynthesisResponse =
        serde_json::from_value(value.clone()).map_err(|e| bad(kind, e.to_string()))?;
    if resp.name.is_empty() {
        return Err(bad(kind, "shortcut name must be non-empty"));
    }
    if let Some(templates) = &resp.templates {
        if templates.len() != slice.steps.len() {
            return Err(bad(
                kind,
                format!(
                    "template count {} does not match slice length {}",
                    templates.len(),
                    slice.steps.len()
                ),
            ));
        }
    }
    let steps = slice
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| ActionStep {
            element: ElementNodeId(s.element_id),
            kind: s.kind,
            param_template: match &resp.templates {
                Some(t) => t[i].clone(),
                None => s.observed_params.clone(),
            },
        })
        .collect();
    Ok(ShortcutSpec {
        name: resp.name,
        description: resp.description,
        applicability: resp.applicability,
        steps,
        source_trajectory_ids: vec![slice.trajectory_id],
    })
}

/// Forces the postcondition that bindings cover every placeholder:
/// an applicable verdict with missing bindings downgrades to
/// not-applicable rather than failing later at instantiation.
pub fn parse_applicability(
    value: &Value,
    ctx: &ShortcutContext,
) -> Result<Applicability, ReasonerError> {
    let kind = ReasonerKind::CheckApplicable;
    let app: Applicability =
        serde_json::from_value(value.clone()).map_err(|e| bad(kind, e.to_string()))?;
    if let Applicability::Applicable { bindings, .. } = &app {
        let missing: Vec<&String> =
            ctx.placeholders.iter().filter(|p| !bindings.contains_key(*p)).collect();
        if !missing.is_empty() {
            return Ok(Applicability::NotApplicable { reason: "incomplete bindings".into() });
        }
    }
    Ok(app)
}

/// Deterministic merge used when no fixture matches: order-preserving
/// dedupe then "; " join. A singleton list merges to itself.
pub fn merge_fallback(texts: &[String]) -> Result<String, ReasonerError> {
    if texts.is_empty() {
        return Err(ReasonerError::EmptyMergeInput);
    }
    let mut seen = Vec::new();
    for t in texts {
        if !seen.contains(t) {
            seen.push(t.clone());
        }
    }
    Ok(seen.join("; "))
}
