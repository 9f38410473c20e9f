//! Execution trajectories: recorded steps, decomposition into overlapping
//! (page, element action, page) triples, and the describe/merge annotation
//! pass that fills node descriptions in the store.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action_space::{ActionInvocation, BasicActionKind};
use crate::memory_graph::{ElementNodeId, GraphError, GraphStore, PageNodeId, ShortcutNodeId};
use crate::reasoner::{
    PageSummary, Reasoner, ReasonerError, ReasonerUsage, TripleAction, TripleContext,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrajectoryId(pub u64);

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("broken chain at step {index}: post page {post} != next pre page {pre}")]
    BrokenChain { index: usize, post: u64, pre: u64 },
    #[error("unknown trajectory id {0}")]
    UnknownId(u64),
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("trajectory log has no header record")]
    MissingHeader,
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

/// Where a recorded step came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOrigin {
    BasicReasoning,
    Shortcut { shortcut: ShortcutNodeId, order: u32 },
}

/// One device-level action with the pages observed around it and the
/// reasoner usage attributed to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub pre_page: PageNodeId,
    pub invocation: ActionInvocation,
    /// Absent for back and for swipes without an element target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acted_element: Option<ElementNodeId>,
    pub post_page: PageNodeId,
    pub wall_time_ms: u64,
    pub usage: ReasonerUsage,
    pub origin: StepOrigin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Success,
    Fail,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: TrajectoryId,
    pub task: String,
    pub steps: Vec<Step>,
    pub status: TaskStatus,
    pub started_at: u64,
}

/// One element-acting step seen as a graph fragment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub source_page: PageNodeId,
    pub element: ElementNodeId,
    pub action_kind: BasicActionKind,
    pub target_page: PageNodeId,
}

/// Splits a trajectory into one triple per element-acting step, in step
/// order. Adjacent element-acting steps overlap: the first's target page
/// is the second's source page, which is what lets page descriptions
/// accumulate from both sides.
pub fn decompose(traj: &Trajectory) -> Result<Vec<Triple>, TrajectoryError> {
    for (i, pair) in traj.steps.windows(2).enumerate() {
        if pair[0].post_page != pair[1].pre_page {
            return Err(TrajectoryError::BrokenChain {
                index: i,
                post: pair[0].post_page.0,
                pre: pair[1].pre_page.0,
            });
        }
    }
    Ok(traj
        .steps
        .iter()
        .filter_map(|step| {
            step.acted_element.map(|element| Triple {
                source_page: step.pre_page,
                element,
                action_kind: step.invocation.kind,
                target_page: step.post_page,
            })
        })
        .collect())
}

/// Per-node before/after text from one annotation pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeAnnotation {
    pub node_id: u64,
    pub before: String,
    pub after: String,
    /// True when a pre-existing description (from an earlier trajectory)
    /// was folded into the merge inputs.
    pub included_existing: bool,
    /// Number of texts handed to the merge for this node (pages only).
    pub merge_inputs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationReport {
    pub trajectory_id: TrajectoryId,
    pub pages: Vec<NodeAnnotation>,
    pub elements: Vec<NodeAnnotation>,
    pub describe_calls: usize,
    pub merge_calls: usize,
    pub usage_total: ReasonerUsage,
}

fn page_summary(store: &GraphStore, id: PageNodeId) -> Result<PageSummary, GraphError> {
    let page = store.page(id).ok_or(GraphError::UnknownPage(id))?;
    Ok(PageSummary {
        page_id: id.0,
        description: page.description.clone(),
        descriptors: page
            .element_records
            .iter()
            .map(|e| e.visual_descriptor.clone())
            .collect(),
    })
}

/// Runs the describe/merge pipeline for one trajectory.
///
/// Calls describe_triple once per triple (writing element descriptions as
/// it goes; a later triple's text overwrites an earlier one for the same
/// element), then merges the collected page descriptions once per distinct
/// page. A non-empty description already on a page counts as one more
/// merge input, so knowledge accumulates across trajectories.
pub fn annotate(
    traj: &Trajectory,
    reasoner: &mut dyn Reasoner,
    store: &mut GraphStore,
) -> Result<AnnotationReport, TrajectoryError> {
    let triples = decompose(traj)?;
    let mut usage_total = ReasonerUsage::default();
    let mut elements_before: BTreeMap<ElementNodeId, String> = BTreeMap::new();
    // Page id -> descriptions collected in triple order (source text before
    // target text within one triple).
    let mut collected: BTreeMap<PageNodeId, Vec<String>> = BTreeMap::new();
    let mut describe_calls = 0;

    for triple in &triples {
        let element = store
            .element(triple.element)
            .ok_or(GraphError::UnknownElement(triple.element))?;
        let detected_descriptor = store
            .page(triple.source_page)
            .and_then(|p| {
                p.element_records
                    .iter()
                    .find(|r| r.ocr_text == element.ocr_text)
                    .map(|r| r.visual_descriptor.clone())
            })
            .unwrap_or_default();
        let ctx = TripleContext {
            source: page_summary(store, triple.source_page)?,
            action: TripleAction {
                element_id: triple.element.0,
                descriptor: if detected_descriptor.is_empty() {
                    element.ocr_text.clone()
                } else {
                    detected_descriptor
                },
                ocr_text: element.ocr_text.clone(),
                kind: triple.action_kind,
                text_payload: None,
            },
            target: page_summary(store, triple.target_page)?,
        };
        let (descriptions, usage) = reasoner.describe_triple(&traj.task, &ctx)?;
        describe_calls += 1;
        usage_total += usage;
        elements_before
            .entry(triple.element)
            .or_insert_with(|| store.element(triple.element).unwrap().description.clone());
        store.set_element_description(triple.element, &descriptions.element)?;
        collected.entry(triple.source_page).or_default().push(descriptions.source_page);
        collected.entry(triple.target_page).or_default().push(descriptions.target_page);
    }

    let mut pages = Vec::new();
    let mut merge_calls = 0;
    for (page_id, texts) in &collected {
        let before = store
            .page(*page_id)
            .ok_or(GraphError::UnknownPage(*page_id))?
            .description
            .clone();
        let mut inputs = Vec::with_capacity(texts.len() + 1);
        let included_existing = !before.is_empty();
        if included_existing {
            inputs.push(before.clone());
        }
        inputs.extend(texts.iter().cloned());
        let (merged, usage) = reasoner.merge_page_descriptions(&traj.task, &inputs)?;
        merge_calls += 1;
        usage_total += usage;
        store.set_page_description(*page_id, &merged)?;
        pages.push(NodeAnnotation {
            node_id: page_id.0,
            before,
            after: merged,
            included_existing,
            merge_inputs: inputs.len(),
        });
    }

    let elements = elements_before
        .into_iter()
        .map(|(id, before)| NodeAnnotation {
            node_id: id.0,
            before,
            after: store.element(id).map(|e| e.description.clone()).unwrap_or_default(),
            included_existing: false,
            merge_inputs: 0,
        })
        .collect();

    Ok(AnnotationReport {
        trajectory_id: traj.id,
        pages,
        elements,
        describe_calls,
        merge_calls,
        usage_total,
    })
}

const TRAJ_EXT: &str = ".traj.jsonl";

#[derive(Serialize, Deserialize)]
#[serde(tag = "rec", rename_all = "snake_case")]
enum TrajRec {
    Header { id: TrajectoryId, task: String, status: TaskStatus, started_at: u64 },
    Step(Step),
}

pub fn trajectory_path(dir: &Path, id: TrajectoryId) -> PathBuf {
    dir.join(format!("{}{TRAJ_EXT}", id.0))
}

/// Smallest id strictly greater than every `.traj.jsonl` file in `dir`.
pub fn next_trajectory_id(dir: &Path) -> Result<TrajectoryId, TrajectoryError> {
    let mut max = 0u64;
    if dir.exists() {
        for entry in std::fs::read_dir(dir)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(stem) = name.strip_suffix(TRAJ_EXT) {
                if let Ok(n) = stem.parse::<u64>() {
                    max = max.max(n);
                }
            }
        }
    }
    Ok(TrajectoryId(max + 1))
}

/// Writes the trajectory as a header record plus one step per line.
pub fn persist(traj: &Trajectory, dir: &Path) -> Result<PathBuf, TrajectoryError> {
    std::fs::create_dir_all(dir)?;
    let path = trajectory_path(dir, traj.id);
    let mut file = std::fs::File::create(&path)?;
    let header = TrajRec::Header {
        id: traj.id,
        task: traj.task.clone(),
        status: traj.status,
        started_at: traj.started_at,
    };
    writeln!(file, "{}", serde_json::to_string(&header)?)?;
    for step in &traj.steps {
        writeln!(file, "{}", serde_json::to_string(&TrajRec::Step(step.clone()))?)?;
    }
    Ok(path)
}

pub fn load(dir: &Path, id: TrajectoryId) -> Result<Trajectory, TrajectoryError> {
    let path = trajectory_path(dir, id);
    if !path.exists() {
        return Err(TrajectoryError::UnknownId(id.0));
    }
    let file = std::fs::File::open(&path)?;
    let mut header: Option<(TrajectoryId, String, TaskStatus, u64)> = None;
    let mut steps = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrajRec = serde_json::from_str(&line)
            .map_err(|e| TrajectoryError::Malformed { line: line_no, reason: e.to_string() })?;
        match rec {
            TrajRec::Header { id, task, status, started_at } => {
                if header.is_some() {
                    return Err(TrajectoryError::Malformed {
                        line: line_no,
                        reason: "duplicate header record".into(),
                    });
                }
                header = Some((id, task, status, started_at));
            }
            TrajRec::Step(step) => {
                if header.is_none() {
                    return Err(TrajectoryError::Malformed {
                        line: line_no,
                        reason: "step record before header".into(),
                    });
                }
                steps.push(step);
            }
        }
    }
    let (id, task, status, started_at) = header.ok_or(TrajectoryError::MissingHeader)?;
    Ok(Trajectory { id, task, steps, status, started_at })
}
