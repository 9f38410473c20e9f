//! Deterministic finite-state-machine GUI simulator behind the Device
//! interface. App models load from declarative `.app.json` files; fault
//! plans inject one-shot perception and transition failures for fallback
//! testing.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action_space::{ActionInvocation, BasicActionKind, ElementRef, SwipeDirection};
use crate::executor::{Device, DeviceError};
use crate::perception::{DetectedElement, Rect, ScreenObservation};

pub const DEFAULT_VIEWPORT: usize = 10;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("app model parse error: {0}")]
    Parse(String),
    #[error("app model failed validation:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementDef {
    pub local_id: String,
    pub role_hint: String,
    #[serde(default)]
    pub ocr_text: String,
    pub visual_descriptor: String,
    pub bbox: Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageDef {
    pub elements: Vec<ElementDef>,
}

/// The only guard form: the named field on the same page holds text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Guard {
    #[serde(rename = "field_nonempty")]
    FieldNonempty(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionDef {
    pub page: String,
    pub element: String,
    pub kind: BasicActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard: Option<Guard>,
    pub target_page: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppModel {
    pub app_name: String,
    pub initial_page: String,
    #[serde(default = "default_viewport")]
    pub viewport: usize,
    pub pages: BTreeMap<String, PageDef>,
    #[serde(default)]
    pub transitions: Vec<TransitionDef>,
    /// (page, element) pairs that accept text input.
    #[serde(default)]
    pub text_fields: BTreeSet<(String, String)>,
}

fn default_viewport() -> usize {
    DEFAULT_VIEWPORT
}

impl AppModel {
    /// Collects every validation failure rather than stopping at the first.
    pub fn validate(&self) -> Result<(), SimError> {
        let mut problems = Vec::new();
        if self.pages.is_empty() {
            problems.push("no initial page: the pages map is empty".to_string());
        } else if !self.pages.contains_key(&self.initial_page) {
            problems.push(format!("initial page {:?} does not exist", self.initial_page));
        }
        if self.viewport == 0 {
            problems.push("viewport must be at least 1".to_string());
        }
        for (page_id, page) in &self.pages {
            let mut seen = BTreeSet::new();
            for el in &page.elements {
                if !seen.insert(&el.local_id) {
                    problems.push(format!("page {page_id:?} repeats element {:?}", el.local_id));
                }
                if !el.bbox.is_valid() {
                    problems.push(format!(
                        "page {page_id:?} element {:?} has an invalid bbox",
                        el.local_id
                    ));
                }
                if el.visual_descriptor.is_empty() {
                    problems.push(format!(
                        "page {page_id:?} element {:?} has an empty visual descriptor",
                        el.local_id
                    ));
                }
            }
        }
        let has_element = |page: &str, element: &str| {
            self.pages
                .get(page)
                .is_some_and(|p| p.elements.iter().any(|e| e.local_id == element))
        };
        let mut transition_keys = BTreeSet::new();
        for t in &self.transitions {
            let label = format!("transition {:?}.{:?} ({})", t.page, t.element, t.kind.as_str());
            if !self.pages.contains_key(&t.page) {
                problems.push(format!("{label} references missing page {:?}", t.page));
            } else if !has_element(&t.page, &t.element) {
                problems.push(format!("{label} references missing element {:?}", t.element));
            }
            if !self.pages.contains_key(&t.target_page) {
                problems.push(format!("{label} targets missing page {:?}", t.target_page));
            }
            if let Some(Guard::FieldNonempty(field)) = &t.guard {
                if !has_element(&t.page, field) {
                    problems.push(format!("{label} guards on missing field {field:?}"));
                }
            }
            // One guarded and one unguarded transition may coexist; two of
            // the same guard-outcome are ambiguous.
            let key = (t.page.clone(), t.element.clone(), t.kind, t.guard.is_some());
            if !transition_keys.insert(key) {
                problems.push(format!("{label} duplicates another transition"));
            }
        }
        for (page, element) in &self.text_fields {
            if !has_element(page, element) {
                problems.push(format!("text field {page:?}.{element:?} does not exist"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SimError::Invalid(problems))
        }
    }
}

pub fn load_app(path: &Path) -> Result<AppModel, SimError> {
    let text = std::fs::read_to_string(path)?;
    let model: AppModel = serde_json::from_str(&text)
        .map_err(|e| SimError::Parse(format!("{}: {e}", path.display())))?;
    model.validate()?;
    Ok(model)
}

/// One-shot fault effects. Remove and relocate are consumed by the next
/// observation of the affected page; a dead-end swallows the next matching
/// transition attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultEffect {
    RemoveElement { page: String, element: String },
    RelocateElement { page: String, element: String },
    DeadendTransition { page: String, element: String, kind: BasicActionKind },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultInjection {
    /// The fault arms once this many actions have been performed.
    pub trigger_step: u64,
    pub effect: FaultEffect,
}

pub fn load_fault_plan(path: &Path) -> Result<Vec<FaultInjection>, SimError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| SimError::Parse(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone)]
struct FaultSlot {
    def: FaultInjection,
    consumed: bool,
}

#[derive(Debug)]
pub struct SimDevice {
    model: AppModel,
    current_page: String,
    field_values: BTreeMap<(String, String), String>,
    focused: Option<(String, String)>,
    history: Vec<String>,
    scroll_offsets: BTreeMap<String, usize>,
    faults: Vec<FaultSlot>,
    actions_performed: u64,
    observations_taken: u64,
    /// local_ids shown by the last observation, in index order; perform
    /// resolves index targets against this.
    last_visible: Vec<String>,
}

impl SimDevice {
    pub fn new(model: AppModel) -> Result<Self, SimError> {
        model.validate()?;
        let current_page = model.initial_page.clone();
        Ok(SimDevice {
            model,
            current_page,
            field_values: BTreeMap::new(),
            focused: None,
            history: Vec::new(),
            scroll_offsets: BTreeMap::new(),
            faults: Vec::new(),
            actions_performed: 0,
            observations_taken: 0,
            last_visible: Vec::new(),
        })
    }

    pub fn with_faults(mut self, plan: Vec<FaultInjection>) -> Self {
        self.faults = plan.into_iter().map(|def| FaultSlot { def, consumed: false }).collect();
        self
    }

    pub fn current_page(&self) -> &str {
        &self.current_page
    }

    pub fn field_value(&self, page: &str, element: &str) -> &str {
        self.field_values
            .get(&(page.to_string(), element.to_string()))
            .map(String::as_str)
            .unwrap_or("")
    }

    pub fn actions_performed(&self) -> u64 {
        self.actions_performed
    }

    fn guard_satisfied(&self, page: &str, guard: &Guard) -> bool {
        match guard {
            Guard::FieldNonempty(field) => !self.field_value(page, field).is_empty(),
        }
    }

    /// Transition lookup with guard precedence: a satisfied guarded
    /// transition wins, otherwise the unguarded one (if any) fires.
    fn pick_transition(&self, element: &str, kind: BasicActionKind) -> Option<&TransitionDef> {
        let matching = || {
            self.model
                .transitions
                .iter()
                .filter(|t| t.page == self.current_page && t.element == element && t.kind == kind)
        };
        let guarded = matching().find(|t| {
            t.guard.as_ref().is_some_and(|g| self.guard_satisfied(&self.current_page, g))
        });
        guarded.or_else(|| matching().find(|t| t.guard.is_none()))
    }

    fn is_text_field(&self, page: &str, element: &str) -> bool {
        self.model.text_fields.contains(&(page.to_string(), element.to_string()))
    }

    fn enter_page(&mut self, target: String, push_history: bool) {
        // Self-loop transitions leave no history entry, keeping the top of
        // the stack distinct from the current page.
        if push_history && target != self.current_page {
            self.history.push(self.current_page.clone());
        }
        self.current_page = target;
        self.focused = None;
    }

    /// Resolves an index target against the last emitted observation.
    fn resolve_target(&self, target: &Option<ElementRef>) -> Result<Option<String>, DeviceError> {
        match target {
            None => Ok(None),
            Some(ElementRef::Index(i)) => self
                .last_visible
                .get(*i)
                .cloned()
                .map(Some)
                .ok_or_else(|| {
                    DeviceError(format!(
                        "target index {i} not on current observation ({} visible)",
                        self.last_visible.len()
                    ))
                }),
            Some(ElementRef::Node(id)) => Err(DeviceError(format!(
                "node target {id:?} must be resolved to a screen index before perform"
            ))),
        }
    }
}

impl Device for SimDevice {
    fn observe(&mut self) -> ScreenObservation {
        // Apply armed remove/relocate faults for this page, consuming them.
        let mut removed: BTreeSet<String> = BTreeSet::new();
        let mut relocated: BTreeSet<String> = BTreeSet::new();
        let page = self.current_page.clone();
        let performed = self.actions_performed;
        for slot in &mut self.faults {
            if slot.consumed || performed < slot.def.trigger_step {
                continue;
            }
            match &slot.def.effect {
                FaultEffect::RemoveElement { page: p, element } if *p == page => {
                    removed.insert(element.clone());
                    slot.consumed = true;
                }
                FaultEffect::RelocateElement { page: p, element } if *p == page => {
                    relocated.insert(element.clone());
                    slot.consumed = true;
                }
                _ => {}
            }
        }

        let offset = *self.scroll_offsets.get(&page).unwrap_or(&0);
        let defs = &self.model.pages[&page].elements;
        let mut visible = Vec::new();
        let mut detected = Vec::new();
        for def in defs.iter().filter(|d| !removed.contains(&d.local_id)) {
            if visible.len() >= offset + self.model.viewport {
                break;
            }
            visible.push(def.local_id.clone());
            if visible.len() <= offset {
                continue;
            }
            let moved = relocated.contains(&def.local_id);
            detected.push(DetectedElement {
                index: 0,
                bbox: if moved {
                    Rect {
                        x0: (def.bbox.x0 + 0.3).min(1.0),
                        y0: (def.bbox.y0 + 0.3).min(1.0),
                        x1: (def.bbox.x1 + 0.3).min(1.0),
                        y1: (def.bbox.y1 + 0.3).min(1.0),
                    }
                } else {
                    def.bbox
                },
                role_hint: def.role_hint.clone(),
                ocr_text: def.ocr_text.clone(),
                visual_descriptor: if moved {
                    format!("{}#moved", def.visual_descriptor)
                } else {
                    def.visual_descriptor.clone()
                },
            });
        }
        self.last_visible = visible.split_off(offset.min(visible.len()));
        let captured_at = self.observations_taken;
        self.observations_taken += 1;
        ScreenObservation::new(
            detected,
            format!("sim://{}/{}/{}", self.model.app_name, page, offset),
            captured_at,
        )
    }

    fn perform(&mut self, inv: &ActionInvocation) -> Result<(), DeviceError> {
        if let Err(violations) = crate::action_space::validate_invocation(inv) {
            return Err(DeviceError(format!("invalid invocation: {}", violations.join("; "))));
        }
        let local = self.resolve_target(&inv.target)?;
        match inv.kind {
            BasicActionKind::Tap | BasicActionKind::LongPress => {
                let element = local.expect("validated tap always has a target");
                if let Some(t) = self.pick_transition(&element, inv.kind) {
                    let target = t.target_page.clone();
                    let page = self.current_page.clone();
                    let performed = self.actions_performed;
                    let dead = self.faults.iter_mut().find(|slot| {
                        !slot.consumed
                            && performed >= slot.def.trigger_step
                            && matches!(
                                &slot.def.effect,
                                FaultEffect::DeadendTransition { page: p, element: e, kind }
                                    if *p == page && *e == element && *kind == inv.kind
                            )
                    });
                    match dead {
                        Some(slot) => slot.consumed = true,
                        None => self.enter_page(target, true),
                    }
                } else if self.is_text_field(&self.current_page, &element) {
                    self.focused = Some((self.current_page.clone(), element));
                }
                // Anything else is a dead tap: silently absorbed.
            }
            BasicActionKind::Text => {
                let element = match local {
                    Some(el) => el,
                    None => match &self.focused {
                        Some((page, el)) if *page == self.current_page => el.clone(),
                        _ => return Err(DeviceError("no focused field for text input".into())),
                    },
                };
                if !self.is_text_field(&self.current_page, &element) {
                    return Err(DeviceError(format!(
                        "element {element:?} does not accept text input"
                    )));
                }
                let payload = inv.text_payload.clone().expect("validated text carries a payload");
                self.field_values.insert((self.current_page.clone(), element), payload);
            }
            BasicActionKind::Swipe => {
                let params = inv.swipe_params.as_ref().expect("validated swipe carries params");
                let count = self.model.pages[&self.current_page].elements.len();
                let offset = self.scroll_offsets.entry(self.current_page.clone()).or_insert(0);
                match params.direction {
                    SwipeDirection::Down => {
                        if *offset + self.model.viewport < count {
                            *offset += self.model.viewport;
                        }
                    }
                    SwipeDirection::Up => {
                        *offset = offset.saturating_sub(self.model.viewport);
                    }
                    SwipeDirection::Left | SwipeDirection::Right => {}
                }
            }
            BasicActionKind::Back => {
                if let Some(previous) = self.history.pop() {
                    self.current_page = previous;
                    self.focused = None;
                }
            }
        }
        self.actions_performed += 1;
        Ok(())
    }

    fn reset(&mut self) {
        self.current_page = self.model.initial_page.clone();
        self.field_values.clear();
        self.focused = None;
        self.history.clear();
        self.scroll_offsets.clear();
        self.actions_performed = 0;
        self.observations_taken = 0;
        self.last_visible.clear();
        for slot in &mut self.faults {
            slot.consumed = false;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_core::{RngCore, SeedableRng};

    fn demo_model_path() -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../fixtures/demo_search.app.json")
    }

    fn demo() -> AppModel {
        load_app(&demo_model_path()).unwrap()
    }

    fn tap(i: usize) -> ActionInvocation {
        ActionInvocation::tap(ElementRef::Index(i))
    }

    /// Index of `local_id` on the device's current observation.
    fn index_of(device: &mut SimDevice, local_id: &str) -> usize {
        device.observe();
        device
            .last_visible
            .iter()
            .position(|l| l == local_id)
            .unwrap_or_else(|| panic!("{local_id} not visible on {}", device.current_page()))
    }

    #[test]
    fn demo_app_loads_with_four_pages() {
        let model = demo();
        assert_eq!(model.pages.len(), 4);
        assert_eq!(model.initial_page, "home");
        assert_eq!(model.viewport, DEFAULT_VIEWPORT);
    }

    #[test]
    fn validation_collects_every_failure() {
        let mut model = demo();
        model.transitions.push(TransitionDef {
            page: "home".into(),
            element: "search_box".into(),
            kind: BasicActionKind::Tap,
            guard: None,
            target_page: "nowhere".into(),
        });
        model.text_fields.insert(("home".into(), "ghost".into()));
        match model.validate().unwrap_err() {
            SimError::Invalid(problems) => {
                assert!(problems.iter().any(|p| p.contains("nowhere")), "{problems:?}");
                assert!(problems.iter().any(|p| p.contains("duplicates")), "{problems:?}");
                assert!(problems.iter().any(|p| p.contains("ghost")), "{problems:?}");
            }
            other => panic!("expected Invalid, got {other:?}"),
        }
    }

    #[test]
    fn empty_pages_map_is_a_named_failure() {
        let model = AppModel {
            app_name: "x".into(),
            initial_page: "home".into(),
            viewport: DEFAULT_VIEWPORT,
            pages: BTreeMap::new(),
            transitions: vec![],
            text_fields: BTreeSet::new(),
        };
        match model.validate().unwrap_err() {
            SimError::Invalid(problems) => {
                assert!(problems.iter().any(|p| p.contains("no initial page")));
            }
            other => panic!("expected Invalid, got {other:?}"),
        }
    }

    #[test]
    fn observe_is_deterministic() {
        let mut device = SimDevice::new(demo()).unwrap();
        let a = device.observe();
        let b = device.observe();
        assert_eq!(a.elements, b.elements);
        assert_eq!(a.raster_ref, b.raster_ref);
    }

    #[test]
    fn home_page_shows_expected_elements() {
        let mut device = SimDevice::new(demo()).unwrap();
        let obs = device.observe();
        let descriptors: Vec<&str> =
            obs.elements.iter().map(|e| e.visual_descriptor.as_str()).collect();
        assert_eq!(descriptors, vec!["icon:search_entry", "icon:mic", "icon:gear"]);
    }

    #[test]
    fn search_flow_reaches_results_only_with_guard_satisfied() {
        let mut device = SimDevice::new(demo()).unwrap();
        let i = index_of(&mut device, "search_box");
        device.perform(&tap(i)).unwrap();
        assert_eq!(device.current_page(), "search");

        // Guard unsatisfied: submit is a dead tap.
        let i = index_of(&mut device, "submit");
        device.perform(&tap(i)).unwrap();
        assert_eq!(device.current_page(), "search");

        let i = index_of(&mut device, "search_input");
        device
            .perform(&ActionInvocation::text(ElementRef::Index(i), "weather"))
            .unwrap();
        assert_eq!(device.field_value("search", "search_input"), "weather");

        let i = index_of(&mut device, "submit");
        device.perform(&tap(i)).unwrap();
        assert_eq!(device.current_page(), "results");
    }

    #[test]
    fn back_pops_the_page_that_pushed() {
        let mut device = SimDevice::new(demo()).unwrap();
        let i = index_of(&mut device, "settings_btn");
        device.perform(&tap(i)).unwrap();
        assert_eq!(device.current_page(), "settings");
        device.perform(&ActionInvocation::back()).unwrap();
        assert_eq!(device.current_page(), "home");
        // Back at the root is an ok no-op.
        device.perform(&ActionInvocation::back()).unwrap();
        assert_eq!(device.current_page(), "home");
    }

    #[test]
    fn text_into_non_field_is_an_action_error() {
        let mut device = SimDevice::new(demo()).unwrap();
        let i = index_of(&mut device, "mic");
        let err = device
            .perform(&ActionInvocation::text(ElementRef::Index(i), "hello"))
            .unwrap_err();
        assert!(err.0.contains("does not accept text"), "{err}");
    }

    #[test]
    fn out_of_range_index_is_an_action_error() {
        let mut device = SimDevice::new(demo()).unwrap();
        device.observe();
        let err = device.perform(&tap(99)).unwrap_err();
        assert!(err.0.contains("not on current observation"), "{err}");
    }

    fn tall_model() -> AppModel {
        let elements = (0..15)
            .map(|i| ElementDef {
                local_id: format!("row{i}"),
                role_hint: "row".into(),
                ocr_text: format!("Row {i}"),
                visual_descriptor: format!("row:item_{i}"),
                bbox: Rect { x0: 0.1, y0: 0.05, x1: 0.9, y1: 0.1 },
            })
            .collect();
        AppModel {
            app_name: "tall".into(),
            initial_page: "list".into(),
            viewport: DEFAULT_VIEWPORT,
            pages: BTreeMap::from([("list".into(), PageDef { elements })]),
            transitions: vec![],
            text_fields: BTreeSet::new(),
        }
    }

    #[test]
    fn swipe_down_pages_by_viewport_and_clamps() {
        let mut device = SimDevice::new(tall_model()).unwrap();
        let obs = device.observe();
        assert_eq!(obs.elements.len(), 10);
        assert_eq!(obs.elements[0].visual_descriptor, "row:item_0");

        device
            .perform(&ActionInvocation::swipe(SwipeDirection::Down, 0.5))
            .unwrap();
        let obs = device.observe();
        assert_eq!(obs.elements.len(), 5, "elements 10..14 are visible");
        assert_eq!(obs.elements[0].visual_descriptor, "row:item_10");
        assert_eq!(obs.elements[4].visual_descriptor, "row:item_14");

        // Nothing beyond the window: another swipe down stays put.
        device
            .perform(&ActionInvocation::swipe(SwipeDirection::Down, 0.5))
            .unwrap();
        assert_eq!(device.observe().elements[0].visual_descriptor, "row:item_10");

        device
            .perform(&ActionInvocation::swipe(SwipeDirection::Up, 0.5))
            .unwrap();
        assert_eq!(device.observe().elements[0].visual_descriptor, "row:item_0");
    }

    #[test]
    fn remove_fault_hides_element_once() {
        let plan = vec![FaultInjection {
            trigger_step: 1,
            effect: FaultEffect::RemoveElement { page: "search".into(), element: "search_input".into() },
        }];
        let mut device = SimDevice::new(demo()).unwrap().with_faults(plan);
        let i = index_of(&mut device, "search_box");
        device.perform(&tap(i)).unwrap();

        let obs = device.observe();
        let descriptors: Vec<&str> =
            obs.elements.iter().map(|e| e.visual_descriptor.as_str()).collect();
        assert_eq!(descriptors, vec!["widget:submit_search"], "input removed once");

        let obs = device.observe();
        assert_eq!(obs.elements.len(), 2, "fault consumed; second look is clean");
    }

    #[test]
    fn relocate_fault_rewrites_descriptor_and_bbox_once() {
        let plan = vec![FaultInjection {
            trigger_step: 1,
            effect: FaultEffect::RelocateElement {
                page: "search".into(),
                element: "search_input".into(),
            },
        }];
        let mut device = SimDevice::new(demo()).unwrap().with_faults(plan);
        let i = index_of(&mut device, "search_box");
        device.perform(&tap(i)).unwrap();

        let obs = device.observe();
        let moved = &obs.elements[0];
        assert_eq!(moved.visual_descriptor, "widget:search_input#moved");
        let clean = device.observe();
        assert_eq!(clean.elements[0].visual_descriptor, "widget:search_input");
        assert_ne!(moved.bbox, clean.elements[0].bbox);
    }

    #[test]
    fn deadend_fault_swallows_one_matching_transition() {
        let plan = vec![FaultInjection {
            trigger_step: 0,
            effect: FaultEffect::DeadendTransition {
                page: "home".into(),
                element: "search_box".into(),
                kind: BasicActionKind::Tap,
            },
        }];
        let mut device = SimDevice::new(demo()).unwrap().with_faults(plan);
        let i = index_of(&mut device, "search_box");
        device.perform(&tap(i)).unwrap();
        assert_eq!(device.current_page(), "home", "transition swallowed");
        let i = index_of(&mut device, "search_box");
        device.perform(&tap(i)).unwrap();
        assert_eq!(device.current_page(), "search", "fault was one-shot");
    }

    #[test]
    fn reset_restores_initial_state_and_rearms_faults() {
        let plan = vec![FaultInjection {
            trigger_step: 0,
            effect: FaultEffect::DeadendTransition {
                page: "home".into(),
                element: "search_box".into(),
                kind: BasicActionKind::Tap,
            },
        }];
        let mut device = SimDevice::new(demo()).unwrap().with_faults(plan);
        let i = index_of(&mut device, "search_box");
        device.perform(&tap(i)).unwrap();
        let i = index_of(&mut device, "search_box");
        device.perform(&tap(i)).unwrap();
        let i = index_of(&mut device, "search_input");
        device
            .perform(&ActionInvocation::text(ElementRef::Index(i), "weather"))
            .unwrap();
        assert_eq!(device.current_page(), "search");

        device.reset();
        assert_eq!(device.current_page(), "home");
        assert_eq!(device.field_value("search", "search_input"), "");
        assert_eq!(device.actions_performed(), 0);

        // The dead-end fires again after reset.
        let i = index_of(&mut device, "search_box");
        device.perform(&tap(i)).unwrap();
        assert_eq!(device.current_page(), "home");

        device.reset();
        device.reset();
        assert_eq!(device.current_page(), "home", "reset is idempotent");
    }

    #[test]
    fn random_walk_fuzz_keeps_invariants() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut device = SimDevice::new(demo()).unwrap();
        for step in 0..1000 {
            let obs = device.observe();
            let n = obs.elements.len();
            let inv = match rng.next_u32() % 5 {
                0 | 1 => tap((rng.next_u32() as usize) % n.max(1)),
                2 => ActionInvocation::text(
                    ElementRef::Index((rng.next_u32() as usize) % n.max(1)),
                    "fuzz",
                ),
                3 => ActionInvocation::swipe(
                    match rng.next_u32() % 4 {
                        0 => SwipeDirection::Up,
                        1 => SwipeDirection::Down,
                        2 => SwipeDirection::Left,
                        _ => SwipeDirection::Right,
                    },
                    0.5,
                ),
                _ => ActionInvocation::back(),
            };
            // Errors (text into buttons) are legal outcomes; state must stay valid.
            let _ = device.perform(&inv);
            assert!(
                device.model.pages.contains_key(device.current_page()),
                "step {step}: device left the page set"
            );
            for (page, offset) in &device.scroll_offsets {
                assert!(
                    *offset < device.model.pages[page].elements.len().max(1),
                    "step {step}: offset {offset} out of range on {page}"
                );
            }
        }
    }
}
