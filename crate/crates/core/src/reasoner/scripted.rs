//! Fixture-driven reasoner. A fixture file is a JSON array of records;
//! each call serializes its payload canonically, then the first record
//! whose kind and matcher fields all hold supplies the response. Replies
//! are pure functions of the request, so repeated calls are identical.

use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use super::{
    applicable_payload, canonical_json, judge_payload, merge_fallback, merge_payload,
    parse_applicability, parse_judgement, parse_merged, parse_plan, parse_synthesis,
    parse_triple_descriptions, plan_payload, proxy_usage, request_digest, synth_payload,
    triple_payload, Applicability, PlanDecision, Reasoner, ReasonerError, ReasonerKind,
    ReasonerUsage, ShortcutContext, TrajectorySlice, TrajectorySummary, TripleContext,
    TripleDescriptions,
};
use crate::memory_graph::ShortcutSpec;
use crate::perception::ScreenObservation;

/// Conditions a request must satisfy; absent fields match anything.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct FixtureMatch {
    /// Exact canonical request digest, as printed by missing-fixture errors.
    #[serde(default)]
    pub digest: Option<String>,
    /// Exact task string.
    #[serde(default)]
    pub task: Option<String>,
    /// Structural subset of the payload: objects may list a subset of
    /// keys (matched recursively), arrays and scalars must be equal.
    #[serde(default)]
    pub payload_subset: Option<Value>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct FixtureRecord {
    pub kind: String,
    #[serde(default, rename = "match")]
    pub matcher: FixtureMatch,
    pub response: Value,
    /// Overrides the length-proxy usage when present.
    #[serde(default)]
    pub usage: Option<ReasonerUsage>,
}

pub struct ScriptedReasoner {
    fixtures: Vec<FixtureRecord>,
}

fn subset_matches(pattern: &Value, target: &Value) -> bool {
    match (pattern, target) {
        (Value::Object(p), Value::Object(t)) => {
            p.iter().all(|(k, pv)| t.get(k).is_some_and(|tv| subset_matches(pv, tv)))
        }
        _ => pattern == target,
    }
}

impl ScriptedReasoner {
    pub fn new(fixtures: Vec<FixtureRecord>) -> Self {
        ScriptedReasoner { fixtures }
    }

    pub fn from_json(text: &str) -> Result<Self, ReasonerError> {
        Ok(ScriptedReasoner::new(serde_json::from_str(text)?))
    }

    pub fn from_path(path: &Path) -> Result<Self, ReasonerError> {
        ScriptedReasoner::from_json(&std::fs::read_to_string(path)?)
    }

    /// First-match-wins lookup; returns the matched response with its
    /// usage, or the proxy usage when the record has no override.
    fn answer(
        &self,
        kind: ReasonerKind,
        task: &str,
        payload: &Value,
    ) -> Result<(Value, ReasonerUsage), ReasonerError> {
        let digest = request_digest(kind, task, payload);
        let hit = self.fixtures.iter().find(|rec| {
            rec.kind == kind.as_str()
                && rec.matcher.digest.as_deref().map_or(true, |d| d == digest)
                && rec.matcher.task.as_deref().map_or(true, |t| t == task)
                && rec
                    .matcher
                    .payload_subset
                    .as_ref()
                    .map_or(true, |p| subset_matches(p, payload))
        });
        match hit {
            Some(rec) => {
                let usage = rec.usage.unwrap_or_else(|| proxy_usage(payload, &rec.response));
                Ok((rec.response.clone(), usage))
            }
            None => {
                let mut preview = canonical_json(payload);
                preview.truncate(200);
                Err(ReasonerError::MissingFixture { kind: kind.as_str(), digest, payload: preview })
            }
        }
    }
}

impl Reasoner for ScriptedReasoner {
    fn plan_next(
        &mut self,
        task: &str,
        obs: &ScreenObservation,
        history: &[String],
    ) -> Result<(PlanDecision, ReasonerUsage), ReasonerError> {
        let payload = plan_payload(obs, history);
        let (response, usage) = self.answer(ReasonerKind::PlanNext, task, &payload)?;
        Ok((parse_plan(&response, obs)?, usage))
    }

    fn describe_triple(
        &mut self,
        task: &str,
        ctx: &TripleContext,
    ) -> Result<(TripleDescriptions, ReasonerUsage), ReasonerError> {
        let payload = triple_payload(ctx);
        let (response, usage) = self.answer(ReasonerKind::DescribeTriple, task, &payload)?;
        Ok((parse_triple_descriptions(&response)?, usage))
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
        match self.answer(ReasonerKind::MergeDescriptions, task, &payload) {
            Ok((response, usage)) => Ok((parse_merged(&response)?, usage)),
            Err(ReasonerError::MissingFixture { .. }) => {
                let merged = merge_fallback(texts)?;
                let usage = proxy_usage(&payload, &Value::String(merged.clone()));
                Ok((merged, usage))
            }
            Err(other) => Err(other),
        }
    }

    fn judge_repetitive(
        &mut self,
        task: &str,
        summary: &TrajectorySummary,
    ) -> Result<(bool, ReasonerUsage), ReasonerError> {
        let payload = judge_payload(summary);
        let (response, usage) = self.answer(ReasonerKind::JudgeRepetitive, task, &payload)?;
        Ok((parse_judgement(&response)?, usage))
    }

    fn synthesize_shortcut(
        &mut self,
        task: &str,
        slice: &TrajectorySlice,
    ) -> Result<(ShortcutSpec, ReasonerUsage), ReasonerError> {
        super::ensure_slice(slice)?;
        let payload = synth_payload(slice);
        let (response, usage) = self.answer(ReasonerKind::SynthesizeShortcut, task, &payload)?;
        Ok((parse_synthesis(&response, slice)?, usage))
    }

    fn check_applicable(
        &mut self,
        task: &str,
        ctx: &ShortcutContext,
        obs: &ScreenObservation,
    ) -> Result<(Applicability, ReasonerUsage), ReasonerError> {
        let payload = applicable_payload(ctx, obs);
        let (response, usage) = self.answer(ReasonerKind::CheckApplicable, task, &payload)?;
        Ok((parse_applicability(&response, ctx)?, usage))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::{DetectedElement, Rect};

    fn obs(descriptors: &[&str]) -> ScreenObservation {
        ScreenObservation::new(
            descriptors
                .iter()
                .map(|d| DetectedElement {
                    index: 0,
                    bbox: Rect { x0: 0.1, y0: 0.1, x1: 0.2, y1: 0.2 },
                    role_hint: "button".into(),
                    ocr_text: String::new(),
                    visual_descriptor: (*d).to_string(),
                })
                .collect(),
            "sim://app".into(),
            0,
        )
    }

    fn fixtures(text: &str) -> ScriptedReasoner {
        ScriptedReasoner::from_json(text).unwrap()
    }

    #[test]
    fn subset_matching_rules() {
        let target = serde_json::json!({
            "a": 1,
            "nested": {"x": [1, 2], "y": "s"},
        });
        assert!(subset_matches(&serde_json::json!({}), &target));
        assert!(subset_matches(&serde_json::json!({"a": 1}), &target));
        assert!(subset_matches(&serde_json::json!({"nested": {"y": "s"}}), &target));
        assert!(subset_matches(&serde_json::json!({"nested": {"x": [1, 2]}}), &target));
        assert!(!subset_matches(&serde_json::json!({"nested": {"x": [1]}}), &target));
        assert!(!subset_matches(&serde_json::json!({"a": 2}), &target));
        assert!(!subset_matches(&serde_json::json!({"missing": 0}), &target));
    }

    #[test]
    fn plan_fixture_matched_by_task_and_subset() {
        let mut r = fixtures(
            r#"[{
                "kind": "plan_next",
                "match": {"task": "t", "payload_subset": {"descriptors": ["a", "b"]}},
                "response": {"decision": "act", "invocation": {"kind": "tap", "target": {"index": 1}}}
            }]"#,
        );
        let o = obs(&["a", "b"]);
        let (decision, usage) = r.plan_next("t", &o, &[]).unwrap();
        assert!(matches!(decision, PlanDecision::Act { .. }));
        assert!(usage.prompt_tokens > 0 && usage.completion_tokens > 0);
    }

    #[test]
    fn first_match_wins() {
        let mut r = fixtures(
            r#"[
                {"kind": "judge_repetitive", "match": {"task": "t"}, "response": true},
                {"kind": "judge_repetitive", "match": {}, "response": false}
            ]"#,
        );
        let summary = TrajectorySummary {
            trajectory_id: crate::trajectory::TrajectoryId(1),
            task: "t".into(),
            steps: vec![],
        };
        assert!(r.judge_repetitive("t", &summary).unwrap().0);
        assert!(!r.judge_repetitive("other", &summary).unwrap().0);
    }

    #[test]
    fn missing_fixture_reports_kind_and_digest() {
        let mut r = fixtures("[]");
        let o = obs(&["a"]);
        match r.plan_next("t", &o, &[]).unwrap_err() {
            ReasonerError::MissingFixture { kind, digest, .. } => {
                assert_eq!(kind, "plan_next");
                assert_eq!(digest.len(), 16);
            }
            other => panic!("expected MissingFixture, got {other:?}"),
        }
    }

    #[test]
    fn digest_matcher_pins_exact_request() {
        let o = obs(&["a"]);
        let digest = request_digest(ReasonerKind::PlanNext, "t", &plan_payload(&o, &[]));
        let text = format!(
            r#"[{{
                "kind": "plan_next",
                "match": {{"digest": "{digest}"}},
                "response": {{"decision": "finish", "summary": "done"}}
            }}]"#
        );
        let mut r = fixtures(&text);
        assert!(matches!(r.plan_next("t", &o, &[]).unwrap().0, PlanDecision::Finish { .. }));
        // Different history changes the digest, so the fixture no longer hits.
        assert!(r.plan_next("t", &o, &["tap x".into()]).is_err());
    }

    #[test]
    fn merge_without_fixture_falls_back_deterministically() {
        let mut r = fixtures("[]");
        let texts = vec!["a".to_string(), "b".to_string(), "a".to_string()];
        let (m1, u1) = r.merge_page_descriptions("t", &texts).unwrap();
        let (m2, u2) = r.merge_page_descriptions("t", &texts).unwrap();
        assert_eq!(m1, "a; b");
        assert_eq!((m1, u1), (m2, u2));
    }

    #[test]
    fn merge_empty_list_errors_before_lookup() {
        let mut r = fixtures("[]");
        assert!(matches!(
            r.merge_page_descriptions("t", &[]),
            Err(ReasonerError::EmptyMergeInput)
        ));
    }

    #[test]
    fn merge_fixture_overrides_fallback() {
        let mut r = fixtures(
            r#"[{
                "kind": "merge_descriptions",
                "match": {"payload_subset": {"texts": ["x", "y"]}},
                "response": "combined view"
            }]"#,
        );
        let (m, _) = r
            .merge_page_descriptions("t", &["x".to_string(), "y".to_string()])
            .unwrap();
        assert_eq!(m, "combined view");
    }

    #[test]
    fn usage_override_replaces_proxy() {
        let mut r = fixtures(
            r#"[{
                "kind": "judge_repetitive",
                "match": {},
                "response": true,
                "usage": {"prompt_tokens": 100, "completion_tokens": 5}
            }]"#,
        );
        let summary = TrajectorySummary {
            trajectory_id: crate::trajectory::TrajectoryId(1),
            task: "t".into(),
            steps: vec![],
        };
        let (_, usage) = r.judge_repetitive("t", &summary).unwrap();
        assert_eq!(usage, ReasonerUsage { prompt_tokens: 100, completion_tokens: 5 });
    }

    #[test]
    fn proxy_usage_matches_hand_computed_lengths() {
        let mut r = fixtures(r#"[{"kind": "judge_repetitive", "match": {}, "response": true}]"#);
        let summary = TrajectorySummary {
            trajectory_id: crate::trajectory::TrajectoryId(1),
            task: "t".into(),
            steps: vec![],
        };
        let payload = judge_payload(&summary);
        let expected_prompt = (canonical_json(&payload).len() as u64).div_ceil(4);
        let (_, usage) = r.judge_repetitive("t", &summary).unwrap();
        assert_eq!(usage.prompt_tokens, expected_prompt);
        assert_eq!(usage.completion_tokens, 1, "\"true\" is 4 bytes");
    }

    #[test]
    fn repeated_calls_are_identical() {
        let mut r = fixtures(
            r#"[{
                "kind": "describe_triple",
                "match": {},
                "response": {"source_page": "s", "element": "e", "target_page": "t"}
            }]"#,
        );
        let ctx = TripleContext {
            source: super::super::PageSummary {
                page_id: 1,
                description: String::new(),
                descriptors: vec!["a".into()],
            },
            action: super::super::TripleAction {
                element_id: 2,
                descriptor: "a".into(),
                ocr_text: String::new(),
                kind: crate::action_space::BasicActionKind::Tap,
                text_payload: None,
            },
            target: super::super::PageSummary {
                page_id: 3,
                description: String::new(),
                descriptors: vec!["b".into()],
            },
        };
        let first = r.describe_triple("t", &ctx).unwrap();
        let second = r.describe_triple("t", &ctx).unwrap();
        assert_eq!(first, second);
    }
}
