//! Chat-completion client and transcript record/replay.
//!
//! Requests carry the canonical request string as the user message, so a
//! transcript fully determines the run: replaying compares each rebuilt
//! request against the recording and returns the recorded response.

use std::io::{BufRead, Write};
use std::path::Path;

use serde_json::Value;

use super::{
    applicable_payload, canonical_json, canonical_request, judge_payload, merge_payload,
    parse_applicability, parse_judgement, parse_merged, parse_plan, parse_synthesis,
    parse_triple_descriptions, plan_payload, synth_payload, triple_payload, Applicability,
    PlanDecision, Reasoner, ReasonerError, ReasonerKind, ReasonerUsage, ShortcutContext,
    TrajectorySlice, TrajectorySummary, TripleContext, TripleDescriptions,
};
use crate::memory_graph::ShortcutSpec;
use crate::perception::ScreenObservation;

pub const ENDPOINT_VAR: &str = "REASONER_ENDPOINT";
pub const API_KEY_VAR: &str = "REASONER_API_KEY";
pub const MODEL_VAR: &str = "REASONER_MODEL";

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub api_key: String,
    pub model: String,
}

impl RemoteConfig {
    pub fn from_env() -> Result<Self, ReasonerError> {
        let get = |name: &'static str| {
            std::env::var(name).map_err(|_| ReasonerError::MissingEnv(name))
        };
        Ok(RemoteConfig {
            endpoint: get(ENDPOINT_VAR)?,
            api_key: get(API_KEY_VAR)?,
            model: get(MODEL_VAR)?,
        })
    }
}

fn system_prompt(kind: ReasonerKind) -> &'static str {
    match kind {
        ReasonerKind::PlanNext => {
            "You control a mobile UI agent. Reply with JSON only: \
             {\"decision\":\"act\",\"invocation\":{...},\"completes_task\":bool} \
             or {\"decision\":\"finish\",\"summary\":\"...\"} \
             or {\"decision\":\"fail\",\"reason\":\"...\"}. \
             Invocation targets use on-screen indices."
        }
        ReasonerKind::DescribeTriple => {
            "Describe the interaction. Reply with JSON only: \
             {\"source_page\":\"...\",\"element\":\"...\",\"target_page\":\"...\"}."
        }
        ReasonerKind::MergeDescriptions => {
            "Merge the given page descriptions into one. Reply with a single JSON string."
        }
        ReasonerKind::JudgeRepetitive => {
            "Judge whether the trajectory contains a repeatable interaction pattern \
             worth compressing. Reply with JSON true or false."
        }
        ReasonerKind::SynthesizeShortcut => {
            "Name and parameterize the repeated interaction sequence. Reply with JSON only: \
             {\"name\":\"...\",\"description\":\"...\",\"applicability\":\"...\",\
             \"templates\":[one per step, \"{placeholder}\" marks a free argument]}."
        }
        ReasonerKind::CheckApplicable => {
            "Decide whether the shortcut applies on this screen for this task. Reply with \
             JSON only: {\"result\":\"applicable\",\"bindings\":{...},\"completes_task\":bool} \
             or {\"result\":\"not_applicable\",\"reason\":\"...\"}."
        }
    }
}

/// Wire request body shared by live and replay modes.
pub fn request_body(model: &str, kind: ReasonerKind, task: &str, payload: &Value) -> Value {
    serde_json::json!({
        "model": model,
        "messages": [
            {"role": "system", "content": system_prompt(kind)},
            {"role": "user", "content": canonical_request(kind, task, payload)},
        ],
        "temperature": 0,
    })
}

/// Pulls the assistant content (parsed as JSON) and token usage out of a
/// chat-completion response body.
fn extract(kind: ReasonerKind, resp: &Value) -> Result<(Value, ReasonerUsage), ReasonerError> {
    let content = resp
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ReasonerError::BadResponse {
            kind: kind.as_str(),
            reason: "response has no choices[0].message.content string".into(),
        })?;
    let value: Value = serde_json::from_str(content).map_err(|e| ReasonerError::BadResponse {
        kind: kind.as_str(),
        reason: format!("assistant content is not JSON: {e}"),
    })?;
    let usage = match resp.get("usage") {
        Some(u) => serde_json::from_value(u.clone()).map_err(|e| ReasonerError::BadResponse {
            kind: kind.as_str(),
            reason: format!("malformed usage: {e}"),
        })?,
        None => ReasonerUsage::default(),
    };
    Ok((value, usage))
}

pub struct RemoteReasoner {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    transcript: Option<std::fs::File>,
}

impl RemoteReasoner {
    pub fn new(config: RemoteConfig) -> Self {
        RemoteReasoner { config, client: reqwest::blocking::Client::new(), transcript: None }
    }

    /// Records every request/response pair as one JSON line.
    pub fn with_transcript(mut self, path: &Path) -> Result<Self, ReasonerError> {
        self.transcript = Some(std::fs::File::create(path)?);
        Ok(self)
    }

    fn attempt(&self, body: &Value) -> Result<Value, String> {
        let resp = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(&self.config.api_key)
            .json(body)
            .send()
            .map_err(|e| e.to_string())?;
        let resp = resp.error_for_status().map_err(|e| e.to_string())?;
        resp.json::<Value>().map_err(|e| e.to_string())
    }

    fn exchange(
        &mut self,
        kind: ReasonerKind,
        task: &str,
        payload: &Value,
    ) -> Result<(Value, ReasonerUsage), ReasonerError> {
        let body = request_body(&self.config.model, kind, task, payload);
        // One retry on any failed attempt, then surface both errors.
        let resp = match self.attempt(&body) {
            Ok(v) => v,
            Err(first) => self
                .attempt(&body)
                .map_err(|second| ReasonerError::Transport(format!("{first}; retry: {second}")))?,
        };
        if let Some(file) = &mut self.transcript {
            let line = canonical_json(&serde_json::json!({"request": body, "response": resp}));
            writeln!(file, "{line}")?;
            file.flush()?;
        }
        extract(kind, &resp)
    }
}

/// Replays a recorded transcript without touching the network. Each call
/// must rebuild exactly the recorded request; any divergence fails fast.
pub struct ReplayReasoner {
    entries: Vec<(Value, Value)>,
    cursor: usize,
}

impl ReplayReasoner {
    pub fn from_path(path: &Path) -> Result<Self, ReasonerError> {
        let file = std::fs::File::open(path)?;
        let mut entries = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let v: Value =
                serde_json::from_str(&line).map_err(|e| ReasonerError::TranscriptMismatch {
                    index: i,
                    reason: format!("unparseable transcript line: {e}"),
                })?;
            let request = v.get("request").cloned().ok_or_else(|| {
                ReasonerError::TranscriptMismatch { index: i, reason: "missing request".into() }
            })?;
            let response = v.get("response").cloned().ok_or_else(|| {
                ReasonerError::TranscriptMismatch { index: i, reason: "missing response".into() }
            })?;
            entries.push((request, response));
        }
        Ok(ReplayReasoner { entries, cursor: 0 })
    }

    fn exchange(
        &mut self,
        kind: ReasonerKind,
        task: &str,
        payload: &Value,
    ) -> Result<(Value, ReasonerUsage), ReasonerError> {
        let index = self.cursor;
        let (request, response) = self
            .entries
            .get(index)
            .ok_or(ReasonerError::TranscriptExhausted)?
            .clone();
        self.cursor += 1;
        let recorded = request
            .pointer("/messages/1/content")
            .and_then(Value::as_str)
            .ok_or_else(|| ReasonerError::TranscriptMismatch {
                index,
                reason: "recorded request has no user message".into(),
            })?;
        let expected = canonical_request(kind, task, payload);
        if recorded != expected {
            return Err(ReasonerError::TranscriptMismatch {
                index,
                reason: format!(
                    "request diverged from recording (recorded {} bytes, rebuilt {} bytes)",
                    recorded.len(),
                    expected.len()
                ),
            });
        }
        extract(kind, &response)
    }
}

macro_rules! impl_reasoner_via_exchange {
    ($ty:ty) => {
        impl Reasoner for $ty {
            fn plan_next(
                &mut self,
                task: &str,
                obs: &ScreenObservation,
                history: &[String],
            ) -> Result<(PlanDecision, ReasonerUsage), ReasonerError> {
                let payload = plan_payload(obs, history);
                let (v, u) = self.exchange(ReasonerKind::PlanNext, task, &payload)?;
                Ok((parse_plan(&v, obs)?, u))
            }

            fn describe_triple(
                &mut self,
                task: &str,
                ctx: &TripleContext,
            ) -> Result<(TripleDescriptions, ReasonerUsage), ReasonerError> {
                let payload = triple_payload(ctx);
                let (v, u) = self.exchange(ReasonerKind::DescribeTriple, task, &payload)?;
                Ok((parse_triple_descriptions(&v)?, u))
            }

            fn merge_page_descriptions(
                &mut self,
                task: &str,
                texts: &[String],
            ) -> Result<(String, ReasonerUsage), ReasonerError> {
                if texts.is_empty() {
                    return Err(ReasonerError::EmptyMergeInput);
                }
                let payload = merge_payload(texts);
                let (v, u) = self.exchange(ReasonerKind::MergeDescriptions, task, &payload)?;
                Ok((parse_merged(&v)?, u))
            }

            fn judge_repetitive(
                &mut self,
                task: &str,
                summary: &TrajectorySummary,
            ) -> Result<(bool, ReasonerUsage), ReasonerError> {
                let payload = judge_payload(summary);
                let (v, u) = self.exchange(ReasonerKind::JudgeRepetitive, task, &payload)?;
                Ok((parse_judgement(&v)?, u))
            }

            fn synthesize_shortcut(
                &mut self,
                task: &str,
                slice: &TrajectorySlice,
            ) -> Result<(ShortcutSpec, ReasonerUsage), ReasonerError> {
                super::ensure_slice(slice)?;
                let payload = synth_payload(slice);
                let (v, u) = self.exchange(ReasonerKind::SynthesizeShortcut, task, &payload)?;
                Ok((parse_synthesis(&v, slice)?, u))
            }

            fn check_applicable(
                &mut self,
                task: &str,
                ctx: &ShortcutContext,
                obs: &ScreenObservation,
            ) -> Result<(Applicability, ReasonerUsage), ReasonerError> {
                let payload = applicable_payload(ctx, obs);
                let (v, u) = self.exchange(ReasonerKind::CheckApplicable, task, &payload)?;
                Ok((parse_applicability(&v, ctx)?, u))
            }
        }
    };
}

impl_reasoner_via_exchange!(RemoteReasoner);
impl_reasoner_via_exchange!(ReplayReasoner);
