//! Action model: the closed set of five basic device actions, invocation
//! validation, and high-level actions (shortcuts) with parameter templates.
//!
//! The basic set is fixed; growth happens only by adding high-level
//! actions, each of which compiles down to a sequence of basic invocations
//! via [`instantiate`]. Template parameters use `{name}` placeholders;
//! instantiation substitutes bound values verbatim.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory_graph::ElementNodeId;
use crate::trajectory::TrajectoryId;

/// The five atomic device actions. This enum is the whole basic space;
/// nothing else ever touches the device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasicActionKind {
    Tap,
    LongPress,
    Swipe,
    Text,
    Back,
}

impl BasicActionKind {
    pub const ALL: [BasicActionKind; 5] = [
        BasicActionKind::Tap,
        BasicActionKind::LongPress,
        BasicActionKind::Swipe,
        BasicActionKind::Text,
        BasicActionKind::Back,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BasicActionKind::Tap => "tap",
            BasicActionKind::LongPress => "long_press",
            BasicActionKind::Swipe => "swipe",
            BasicActionKind::Text => "text",
            BasicActionKind::Back => "back",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwipeDirection {
    Up,
    Down,
    Left,
    Right,
}

impl SwipeDirection {
    pub fn as_str(&self) -> &'static str {
        match self {
            SwipeDirection::Up => "up",
            SwipeDirection::Down => "down",
            SwipeDirection::Left => "left",
            SwipeDirection::Right => "right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwipeParams {
    pub direction: SwipeDirection,
    /// Fraction of the screen to cover, in (0, 1].
    pub magnitude: f64,
}

/// Target of an invocation: either an index into the current observation's
/// element list, or a stored element node still to be resolved on screen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementRef {
    Index(usize),
    Node(ElementNodeId),
}

/// One concrete device action. Field presence is constrained per kind;
/// [`validate_invocation`] spells out the rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionInvocation {
    pub kind: BasicActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<ElementRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_payload: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub swipe_params: Option<SwipeParams>,
}

impl ActionInvocation {
    pub fn tap(target: ElementRef) -> Self {
        ActionInvocation {
            kind: BasicActionKind::Tap,
            target: Some(target),
            text_payload: None,
            swipe_params: None,
        }
    }

    pub fn long_press(target: ElementRef) -> Self {
        ActionInvocation { kind: BasicActionKind::LongPress, ..Self::tap(target) }
    }

    pub fn text(target: ElementRef, payload: impl Into<String>) -> Self {
        ActionInvocation {
            kind: BasicActionKind::Text,
            target: Some(target),
            text_payload: Some(payload.into()),
            swipe_params: None,
        }
    }

    pub fn swipe(direction: SwipeDirection, magnitude: f64) -> Self {
        ActionInvocation {
            kind: BasicActionKind::Swipe,
            target: None,
            text_payload: None,
            swipe_params: Some(SwipeParams { direction, magnitude }),
        }
    }

    pub fn back() -> Self {
        ActionInvocation {
            kind: BasicActionKind::Back,
            target: None,
            text_payload: None,
            swipe_params: None,
        }
    }
}

/// Checks every per-kind field rule and reports all violations, not just
/// the first one.
pub fn validate_invocation(inv: &ActionInvocation) -> Result<(), Vec<String>> {
    let mut violations = Vec::new();
    let kind = inv.kind.as_str();
    match inv.kind {
        BasicActionKind::Tap | BasicActionKind::LongPress => {
            if inv.target.is_none() {
                violations.push(format!("{kind} requires a target"));
            }
            if inv.text_payload.is_some() {
                violations.push(format!("{kind} must not carry a text payload"));
            }
            if inv.swipe_params.is_some() {
                violations.push(format!("{kind} must not carry swipe params"));
            }
        }
        BasicActionKind::Text => {
            if inv.target.is_none() {
                violations.push("text requires a target".into());
            }
            if inv.text_payload.is_none() {
                violations.push("text requires a text payload".into());
            }
            if inv.swipe_params.is_some() {
                violations.push("text must not carry swipe params".into());
            }
        }
        BasicActionKind::Swipe => {
            match &inv.swipe_params {
                None => violations.push("swipe requires swipe params".into()),
                Some(p) if !(p.magnitude > 0.0 && p.magnitude <= 1.0) => {
                    violations.push(format!(
                        "swipe magnitude {} must be in (0, 1]",
                        p.magnitude
                    ));
                }
                Some(_) => {}
            }
            if inv.text_payload.is_some() {
                violations.push("swipe must not carry a text payload".into());
            }
        }
        BasicActionKind::Back => {
            if inv.target.is_some() {
                violations.push("back must not carry a target".into());
            }
            if inv.text_payload.is_some() {
                violations.push("back must not carry a text payload".into());
            }
            if inv.swipe_params.is_some() {
                violations.push("back must not carry swipe params".into());
            }
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

#[derive(Debug, Error)]
pub enum ActionSpaceError {
    #[error("high-level action id {0} already present")]
    DuplicateId(u64),
    #[error("high-level action has no steps")]
    EmptySteps,
    #[error("bad parameter template {template:?}: {reason}")]
    BadTemplate { template: String, reason: String },
    #[error("no binding for placeholder {{{0}}}")]
    MissingBinding(String),
    #[error("step {index} ({kind}) produced an invalid invocation: {violations:?}")]
    InvalidStep { index: usize, kind: &'static str, violations: Vec<String> },
    #[error("step {index}: swipe template {filled:?} must fill to \"direction:magnitude\"")]
    BadSwipeTemplate { index: usize, filled: String },
}

/// One step of a high-level action. The parameter template meaning depends
/// on the kind: empty for tap/long_press, the text payload (with optional
/// placeholders) for text, and "direction:magnitude" for swipe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionStep {
    pub element: ElementNodeId,
    pub kind: BasicActionKind,
    #[serde(default)]
    pub param_template: String,
}

/// A learned shortcut: a named, parameterized sequence of basic steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighLevelAction {
    pub id: u64,
    pub name: String,
    pub description: String,
    /// Natural-language statement of when this action applies; consumed by
    /// the reasoner's applicability check.
    pub applicability: String,
    pub steps: Vec<ActionStep>,
    pub source_trajectory_ids: Vec<TrajectoryId>,
}

impl HighLevelAction {
    /// Placeholder names appearing in any step template, deduplicated and
    /// sorted. This is the action's declared parameter list.
    pub fn placeholders(&self) -> Result<BTreeSet<String>, ActionSpaceError> {
        let mut names = BTreeSet::new();
        for step in &self.steps {
            for name in template_placeholders(&step.param_template)? {
                names.insert(name);
            }
        }
        Ok(names)
    }

    /// Validates structure: at least one step, every template well-formed.
    pub fn validate(&self) -> Result<(), ActionSpaceError> {
        if self.steps.is_empty() {
            return Err(ActionSpaceError::EmptySteps);
        }
        self.placeholders()?;
        Ok(())
    }
}

/// Extracts `{name}` placeholders from a template. Placeholder names are
/// non-empty runs of `[A-Za-z0-9_]`; unbalanced or empty braces are
/// malformed.
pub fn template_placeholders(template: &str) -> Result<Vec<String>, ActionSpaceError> {
    let bad = |reason: &str| ActionSpaceError::BadTemplate {
        template: template.to_string(),
        reason: reason.to_string(),
    };
    let mut names = Vec::new();
    let mut chars = template.chars();
    while let Some(c) = chars.next() {
        match c {
            '{' => {
                let mut name = String::new();
                loop {
                    match chars.next() {
                        Some('}') => break,
                        Some(c) if c.is_ascii_alphanumeric() || c == '_' => name.push(c),
                        Some(c) => {
                            return Err(bad(&format!("invalid character {c:?} in placeholder")))
                        }
                        None => return Err(bad("unterminated placeholder")),
                    }
                }
                if name.is_empty() {
                    return Err(bad("empty placeholder name"));
                }
                names.push(name);
            }
            '}' => return Err(bad("unmatched closing brace")),
            _ => {}
        }
    }
    Ok(names)
}

/// Substitutes every placeholder with its bound value. Errors name the
/// first missing placeholder.
fn fill_template(
    template: &str,
    bindings: &BTreeMap<String, String>,
) -> Result<String, ActionSpaceError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}').ok_or_else(|| ActionSpaceError::BadTemplate {
            template: template.to_string(),
            reason: "unterminated placeholder".to_string(),
        })?;
        let name = &after[..close];
        let value = bindings
            .get(name)
            .ok_or_else(|| ActionSpaceError::MissingBinding(name.to_string()))?;
        out.push_str(value);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// The agent's available actions: the fixed basic set plus accumulated
/// high-level actions keyed by id. Values are immutable; [`ActionSpace::expand`]
/// returns a grown copy.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionSpace {
    high_level: BTreeMap<u64, HighLevelAction>,
}

impl ActionSpace {
    pub fn basic() -> Self {
        ActionSpace::default()
    }

    pub fn basic_kinds(&self) -> &'static [BasicActionKind; 5] {
        &BasicActionKind::ALL
    }

    pub fn high_level(&self) -> impl Iterator<Item = &HighLevelAction> {
        self.high_level.values()
    }

    pub fn high_level_count(&self) -> usize {
        self.high_level.len()
    }

    pub fn get(&self, id: u64) -> Option<&HighLevelAction> {
        self.high_level.get(&id)
    }

    pub fn contains(&self, id: u64) -> bool {
        self.high_level.contains_key(&id)
    }

    /// Returns a new space with `hla` added. The basic set is untouched
    /// and the receiver is unchanged; duplicate ids are rejected.
    pub fn expand(&self, hla: HighLevelAction) -> Result<ActionSpace, ActionSpaceError> {
        if self.high_level.contains_key(&hla.id) {
            return Err(ActionSpaceError::DuplicateId(hla.id));
        }
        hla.validate()?;
        let mut next = self.clone();
        next.high_level.insert(hla.id, hla);
        Ok(next)
    }
}

/// Compiles a high-level action into basic invocations by filling every
/// step template from `bindings`. Every produced invocation passes
/// [`validate_invocation`]; targets are node references resolved to screen
/// indices at execution time.
pub fn instantiate(
    hla: &HighLevelAction,
    bindings: &BTreeMap<String, String>,
) -> Result<Vec<ActionInvocation>, ActionSpaceError> {
    hla.validate()?;
    let mut out = Vec::with_capacity(hla.steps.len());
    for (index, step) in hla.steps.iter().enumerate() {
        let filled = fill_template(&step.param_template, bindings)?;
        let target = ElementRef::Node(step.element);
        let inv = match step.kind {
            BasicActionKind::Tap | BasicActionKind::LongPress => {
                if !filled.is_empty() {
                    return Err(ActionSpaceError::InvalidStep {
                        index,
                        kind: step.kind.as_str(),
                        violations: vec![format!(
                            "{} step template must be empty, got {filled:?}",
                            step.kind.as_str()
                        )],
                    });
                }
                ActionInvocation {
                    kind: step.kind,
                    target: Some(target),
                    text_payload: None,
                    swipe_params: None,
                }
            }
            BasicActionKind::Text => ActionInvocation::text(target, filled),
            BasicActionKind::Swipe => {
                let params = parse_swipe_template(&filled)
                    .ok_or(ActionSpaceError::BadSwipeTemplate { index, filled: filled.clone() })?;
                ActionInvocation {
                    kind: BasicActionKind::Swipe,
                    target: Some(target),
                    text_payload: None,
                    swipe_params: Some(params),
                }
            }
            BasicActionKind::Back => {
                // Shortcut steps always carry an element, and back takes
                // none, so a back step can never validate.
                return Err(ActionSpaceError::InvalidStep {
                    index,
                    kind: "back",
                    violations: vec!["back cannot target an element".into()],
                });
            }
        };
        if let Err(violations) = validate_invocation(&inv) {
            return Err(ActionSpaceError::InvalidStep { index, kind: step.kind.as_str(), violations });
        }
        out.push(inv);
    }
    Ok(out)
}

fn parse_swipe_template(filled: &str) -> Option<SwipeParams> {
    let (dir, mag) = filled.split_once(':')?;
    let direction = match dir {
        "up" => SwipeDirection::Up,
        "down" => SwipeDirection::Down,
        "left" => SwipeDirection::Left,
        "right" => SwipeDirection::Right,
        _ => return None,
    };
    let magnitude: f64 = mag.parse().ok()?;
    if magnitude > 0.0 && magnitude <= 1.0 {
        Some(SwipeParams { direction, magnitude })
    } else {
        None
    }
}
