//! Turns repeated interaction sequences into shortcuts.
//!
//! Mining works over symbol runs, where a symbol is (element node, action
//! kind). A trajectory contributes one run per maximal stretch of
//! element-acting steps; back presses and targetless swipes split runs
//! because they leave no element to anchor a shortcut step on.

use serde::Serialize;
use thiserror::Error;

use crate::action_space::{ActionSpace, ActionSpaceError, BasicActionKind};
use crate::memory_graph::{GraphError, GraphStore, ShortcutNodeId};
use crate::reasoner::{
    Reasoner, ReasonerError, ReasonerUsage, SliceStep, SummaryStep, TrajectorySlice,
    TrajectorySummary,
};
use crate::trajectory::{Step, TaskStatus, Trajectory, TrajectoryId};

pub type Symbol = (u64, BasicActionKind);

/// A maximal stretch of element-acting steps from one trajectory.
/// `base_index` maps run positions back to trajectory step indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolRun {
    pub trajectory: TrajectoryId,
    pub base_index: usize,
    pub symbols: Vec<Symbol>,
}

pub fn symbol_runs(traj: &Trajectory) -> Vec<SymbolRun> {
    let mut runs = Vec::new();
    let mut current: Option<SymbolRun> = None;
    for (i, step) in traj.steps.iter().enumerate() {
        match step.acted_element {
            Some(element) => {
                let symbol = (element.0, step.invocation.kind);
                match &mut current {
                    Some(run) => run.symbols.push(symbol),
                    None => {
                        current = Some(SymbolRun {
                            trajectory: traj.id,
                            base_index: i,
                            symbols: vec![symbol],
                        });
                    }
                }
            }
            None => {
                if let Some(run) = current.take() {
                    runs.push(run);
                }
            }
        }
    }
    if let Some(run) = current.take() {
        runs.push(run);
    }
    runs
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternCandidate {
    pub symbols: Vec<Symbol>,
    /// Greedy non-overlapping occurrence count across all runs.
    pub support: usize,
    /// (trajectory, step index of the occurrence start), in scan order.
    pub occurrences: Vec<(TrajectoryId, usize)>,
    /// (run ordinal, step index) of the first occurrence; ordering key.
    pub first_occurrence: (usize, usize),
}

#[derive(Debug, Clone, Copy)]
pub struct MinerConfig {
    pub min_len: usize,
    pub min_support: usize,
}

impl Default for MinerConfig {
    fn default() -> Self {
        MinerConfig { min_len: 2, min_support: 1 }
    }
}

/// Counts greedy left-to-right non-overlapping occurrences of `pattern`.
fn scan_occurrences(
    runs: &[SymbolRun],
    pattern: &[Symbol],
) -> (usize, Vec<(TrajectoryId, usize)>, Option<(usize, usize)>) {
    let mut support = 0;
    let mut occurrences = Vec::new();
    let mut first = None;
    for (ordinal, run) in runs.iter().enumerate() {
        let mut i = 0;
        while i + pattern.len() <= run.symbols.len() {
            if run.symbols[i..i + pattern.len()] == *pattern {
                let step_index = run.base_index + i;
                support += 1;
                occurrences.push((run.trajectory, step_index));
                if first.is_none() {
                    first = Some((ordinal, step_index));
                }
                i += pattern.len();
            } else {
                i += 1;
            }
        }
    }
    (support, occurrences, first)
}

/// Enumerates every contiguous subsequence meeting `min_len`/`min_support`,
/// then drops any pattern some observed one-symbol extension matches in
/// support: the longer pattern explains every one of its occurrences, so
/// the shorter adds nothing.
pub fn mine_patterns(runs: &[SymbolRun], config: &MinerConfig) -> Vec<PatternCandidate> {
    let mut patterns: Vec<Vec<Symbol>> = Vec::new();
    for run in runs {
        let n = run.symbols.len();
        for start in 0..n {
            for end in (start + config.min_len)..=n {
                let p = run.symbols[start..end].to_vec();
                if !patterns.contains(&p) {
                    patterns.push(p);
                }
            }
        }
    }

    let mut counted: Vec<PatternCandidate> = patterns
        .into_iter()
        .filter_map(|symbols| {
            let (support, occurrences, first) = scan_occurrences(runs, &symbols);
            let first_occurrence = first?;
            (support >= config.min_support).then_some(PatternCandidate {
                symbols,
                support,
                occurrences,
                first_occurrence,
            })
        })
        .collect();

    let all: Vec<(Vec<Symbol>, usize)> =
        counted.iter().map(|c| (c.symbols.clone(), c.support)).collect();
    counted.retain(|c| {
        let absorbed = all.iter().any(|(ext, ext_support)| {
            ext.len() == c.symbols.len() + 1
                && *ext_support == c.support
                && (ext[..c.symbols.len()] == c.symbols[..] || ext[1..] == c.symbols[..])
        });
        !absorbed
    });

    counted.sort_by(|a, b| {
        b.support
            .cmp(&a.support)
            .then(b.symbols.len().cmp(&a.symbols.len()))
            .then(a.first_occurrence.cmp(&b.first_occurrence))
            .then(a.symbols.cmp(&b.symbols))
    });
    counted
}

#[derive(Debug, Clone)]
pub struct EvolveConfig {
    pub min_len: usize,
    /// Support floor when mining one judged trajectory.
    pub min_support: usize,
    /// Support floor when mining across trajectories with the gate off.
    pub cross_min_support: usize,
    pub max_new_shortcuts: usize,
    pub cross_trajectory: bool,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig {
            min_len: 2,
            min_support: 1,
            cross_min_support: 2,
            max_new_shortcuts: 1,
            cross_trajectory: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CreatedShortcut {
    pub id: ShortcutNodeId,
    pub name: String,
    /// False when the store already held an identical step sequence and
    /// only the action space grew.
    pub created_node: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedCandidate {
    pub pattern: String,
    pub reason: String,
}

#[derive(Debug)]
pub struct EvolveReport {
    /// None when the gate was not consulted (cross-trajectory mode) or the
    /// trajectory never reached it.
    pub judged_repetitive: Option<bool>,
    pub gated: bool,
    pub gate_reason: Option<String>,
    pub candidates_considered: usize,
    pub created: Vec<CreatedShortcut>,
    pub skipped: Vec<SkippedCandidate>,
    pub space: ActionSpace,
    pub usage_total: ReasonerUsage,
}

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("first occurrence references unknown trajectory {0:?}")]
    UnknownTrajectory(TrajectoryId),
}

fn observed_params(step: &Step) -> String {
    match step.invocation.kind {
        BasicActionKind::Text => step.invocation.text_payload.clone().unwrap_or_default(),
        BasicActionKind::Swipe => step
            .invocation
            .swipe_params
            .as_ref()
            .map(|p| format!("{}:{}", p.direction.as_str(), p.magnitude))
            .unwrap_or_default(),
        _ => String::new(),
    }
}

fn pattern_label(symbols: &[Symbol]) -> String {
    symbols
        .iter()
        .map(|(id, kind)| format!("{}@e{id}", kind.as_str()))
        .collect::<Vec<_>>()
        .join(" -> ")
}

fn slice_for(
    store: &GraphStore,
    traj: &Trajectory,
    start: usize,
    len: usize,
) -> Result<TrajectorySlice, EvolveError> {
    let steps = traj.steps[start..start + len]
        .iter()
        .map(|step| {
            let element = step.acted_element.expect("sliced steps act on elements");
            let node = store.element(element).ok_or(GraphError::UnknownElement(element))?;
            Ok(SliceStep {
                element_id: element.0,
                element_description: node.description.clone(),
                ocr_text: node.ocr_text.clone(),
                kind: step.invocation.kind,
                observed_params: observed_params(step),
            })
        })
        .collect::<Result<Vec<_>, EvolveError>>()?;
    Ok(TrajectorySlice { trajectory_id: traj.id, task: traj.task.clone(), steps })
}

fn gate(report_space: &ActionSpace, reason: &str, judged: Option<bool>) -> EvolveReport {
    EvolveReport {
        judged_repetitive: judged,
        gated: true,
        gate_reason: Some(reason.to_string()),
        candidates_considered: 0,
        created: Vec::new(),
        skipped: Vec::new(),
        space: report_space.clone(),
        usage_total: ReasonerUsage::default(),
    }
}

/// One evolution pass over `traj`.
///
/// Single-trajectory mode asks judge_repetitive first and mines only when
/// it says yes. Cross-trajectory mode skips the judge, raises the support
/// floor, and also mines prior successful trajectories for the same task
/// text. Candidates are tried best-first; the pass stops once the action
/// space has grown by `max_new_shortcuts`.
pub fn evolve(
    traj: &Trajectory,
    prior: &[Trajectory],
    reasoner: &mut dyn Reasoner,
    store: &mut GraphStore,
    space: &ActionSpace,
    config: &EvolveConfig,
) -> Result<EvolveReport, EvolveError> {
    if traj.status != TaskStatus::Success {
        return Ok(gate(space, "trajectory did not succeed", None));
    }

    let mut usage_total = ReasonerUsage::default();
    let judged = if config.cross_trajectory {
        None
    } else {
        let summary = TrajectorySummary {
            trajectory_id: traj.id,
            task: traj.task.clone(),
            steps: traj
                .steps
                .iter()
                .filter_map(|s| {
                    s.acted_element
                        .map(|e| SummaryStep { element_id: e.0, kind: s.invocation.kind })
                })
                .collect(),
        };
        let (verdict, usage) = reasoner.judge_repetitive(&traj.task, &summary)?;
        usage_total += usage;
        if !verdict {
            let mut report = gate(space, "judge found no repetitive pattern", Some(false));
            report.usage_total = usage_total;
            return Ok(report);
        }
        Some(true)
    };

    let mut sources: Vec<&Trajectory> = vec![traj];
    if config.cross_trajectory {
        sources.extend(
            prior
                .iter()
                .filter(|t| t.id != traj.id && t.task == traj.task && t.status == TaskStatus::Success),
        );
    }
    let runs: Vec<SymbolRun> = sources.iter().flat_map(|t| symbol_runs(t)).collect();
    let miner = MinerConfig {
        min_len: config.min_len,
        min_support: if config.cross_trajectory {
            config.cross_min_support
        } else {
            config.min_support
        },
    };
    let candidates = mine_patterns(&runs, &miner);
    let candidates_considered = candidates.len();

    let mut created = Vec::new();
    let mut skipped = Vec::new();
    let mut space = space.clone();
    for candidate in &candidates {
        if created.len() >= config.max_new_shortcuts {
            break;
        }
        let label = pattern_label(&candidate.symbols);
        let (source_id, start) = candidate.occurrences[0];
        let source = sources
            .iter()
            .find(|t| t.id == source_id)
            .ok_or(EvolveError::UnknownTrajectory(source_id))?;
        let slice = slice_for(store, source, start, candidate.symbols.len())?;

        let spec = match reasoner.synthesize_shortcut(&traj.task, &slice) {
            Ok((spec, usage)) => {
                usage_total += usage;
                spec
            }
            Err(e @ (ReasonerError::MissingFixture { .. } | ReasonerError::BadResponse { .. })) => {
                skipped.push(SkippedCandidate { pattern: label, reason: e.to_string() });
                continue;
            }
            Err(other) => return Err(other.into()),
        };

        let outcome = match store.create_shortcut(&spec) {
            Ok(outcome) => outcome,
            Err(e) => {
                skipped.push(SkippedCandidate { pattern: label, reason: e.to_string() });
                continue;
            }
        };
        if space.contains(outcome.id.0) {
            skipped.push(SkippedCandidate {
                pattern: label,
                reason: format!("duplicate of shortcut {} already in space", outcome.id.0),
            });
            continue;
        }
        let hla = store
            .high_level_actions()
            .into_iter()
            .find(|h| h.id == outcome.id.0)
            .ok_or(GraphError::UnknownShortcut(outcome.id))?;
        match space.expand(hla) {
            Ok(next) => {
                space = next;
                created.push(CreatedShortcut {
                    id: outcome.id,
                    name: spec.name.clone(),
                    created_node: outcome.created,
                });
            }
            Err(e @ ActionSpaceError::DuplicateId(_)) => {
                skipped.push(SkippedCandidate { pattern: label, reason: e.to_string() });
            }
            Err(e) => {
                skipped.push(SkippedCandidate {
                    pattern: label,
                    reason: format!("synthesized action failed validation: {e}"),
                });
            }
        }
    }

    Ok(EvolveReport {
        judged_repetitive: judged,
        gated: false,
        gate_reason: None,
        candidates_considered,
        created,
        skipped,
        space,
        usage_total,
    })
}
