//! Screen perception: detected elements, reference embeddings, page
//! fingerprints, and matching against stored element nodes.
//!
//! The embedder is a stand-in for a vision encoder. It must be cheap and
//! bitwise deterministic, so it seeds a ChaCha8 stream with a stable hash
//! of the visual descriptor, draws standard normals via Box-Muller, and
//! normalizes. Equal descriptors therefore always produce the same vector,
//! and distinct descriptors are near-orthogonal with high probability,
//! which is all the matching layer relies on.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::fnv1a64;
use crate::memory_graph::{ElementNodeId, GraphStore};

/// Dimension of every embedding produced by [`embed`].
pub const EMBEDDING_DIM: usize = 64;

/// Tolerance on the unit-norm invariant.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("empty visual descriptor")]
    EmptyDescriptor,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("embedding has {0} values, expected {expected}", expected = EMBEDDING_DIM)]
    BadDimension(usize),
    #[error("embedding norm {0} is not within {tol} of 1", tol = NORM_TOLERANCE)]
    NotNormalized(f64),
}

/// Screen-relative bounding box; coordinates are fractions of the screen
/// with `x0 <= x1` and `y0 <= y1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn is_valid(&self) -> bool {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        in_unit(self.x0)
            && in_unit(self.y0)
            && in_unit(self.x1)
            && in_unit(self.y1)
            && self.x0 <= self.x1
            && self.y0 <= self.y1
    }
}

/// One UI element as reported by the (simulated) screen parser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedElement {
    /// Position in the observation's element list.
    pub index: usize,
    pub bbox: Rect,
    /// Coarse widget class, e.g. "button" or "text_field".
    pub role_hint: String,
    pub ocr_text: String,
    /// Opaque appearance token; the sole input to [`embed`].
    pub visual_descriptor: String,
}

/// A full parse of one screen. Element indices always run 0..n-1 in list
/// order; [`ScreenObservation::new`] re-assigns them to keep that true.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenObservation {
    pub elements: Vec<DetectedElement>,
    /// Opaque reference to the captured raster (a path or URI).
    pub raster_ref: String,
    pub captured_at: u64,
}

impl ScreenObservation {
    pub fn new(mut elements: Vec<DetectedElement>, raster_ref: String, captured_at: u64) -> Self {
        for (i, el) in elements.iter_mut().enumerate() {
            el.index = i;
        }
        ScreenObservation { elements, raster_ref, captured_at }
    }
}

/// Unit-norm vector of [`EMBEDDING_DIM`] values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    /// Wraps raw values, enforcing dimension and unit norm.
    pub fn from_values(values: Vec<f64>) -> Result<Self, PerceptionError> {
        if values.len() != EMBEDDING_DIM {
            return Err(PerceptionError::BadDimension(values.len()));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(PerceptionError::NotNormalized(norm));
        }
        Ok(Embedding { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Uniform draw in (0, 1]; the low bias of 2^-53 keeps ln() finite.
fn uniform_open01(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Deterministic reference embedder.
///
/// Seeds ChaCha8 with the FNV-1a hash of the descriptor, draws
/// [`EMBEDDING_DIM`] standard normals (Box-Muller), and scales to unit
/// norm. Equal descriptors yield bitwise-equal embeddings.
pub fn embed(descriptor: &str) -> Result<Embedding, PerceptionError> {
    if descriptor.is_empty() {
        return Err(PerceptionError::EmptyDescriptor);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(descriptor.as_bytes()));
    let mut values = Vec::with_capacity(EMBEDDING_DIM);
    while values.len() < EMBEDDING_DIM {
        let u1 = uniform_open01(&mut rng);
        let u2 = uniform_open01(&mut rng);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        values.push(r * theta.cos());
        if values.len() < EMBEDDING_DIM {
            values.push(r * theta.sin());
        }
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    // 64 independent normals are never all zero in practice, but guard anyway.
    if norm == 0.0 {
        values[0] = 1.0;
    } else {
        for v in &mut values {
            *v /= norm;
        }
    }
    Ok(Embedding { values })
}

/// Cosine similarity. Both inputs are unit-norm by construction, so this
/// is a plain dot product; the division keeps the function correct for
/// callers that slipped past the constructor.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, PerceptionError> {
    if a.values.len() != b.values.len() {
        return Err(PerceptionError::DimensionMismatch(a.values.len(), b.values.len()));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok(dot)
}

/// Sorted multiset of the visual descriptors on a page. Pure function of
/// the element list; detection order does not matter.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageFingerprint(Vec<String>);

impl PageFingerprint {
    pub fn descriptors(&self) -> &[String] {
        &self.0
    }
}

pub fn page_fingerprint(obs: &ScreenObservation) -> PageFingerprint {
    let mut descriptors: Vec<String> =
        obs.elements.iter().map(|e| e.visual_descriptor.clone()).collect();
    descriptors.sort();
    PageFingerprint(descriptors)
}

/// Multiset Jaccard similarity of two fingerprints: shared descriptor
/// count (with multiplicity) over total distinct-slot count. Two empty
/// fingerprints are identical, hence 1.0.
pub fn fingerprint_similarity(a: &PageFingerprint, b: &PageFingerprint) -> f64 {
    let mut i = 0;
    let mut j = 0;
    let mut inter = 0usize;
    // Both sides are sorted, so a single merge pass counts the multiset
    // intersection.
    while i < a.0.len() && j < b.0.len() {
        match a.0[i].cmp(&b.0[j]) {
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
        }
    }
    let union = a.0.len() + b.0.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// One detected element resolved to a stored element node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub detected_index: usize,
    pub element_node_id: ElementNodeId,
    pub similarity: f64,
}

/// Matches every detected element against the store's element embeddings.
///
/// Each detected element yields at most one result: the most similar
/// stored element with similarity >= `threshold` (ties broken by ascending
/// node id). Results are ordered by detected index. `threshold` is
/// expected in (0, 1].
pub fn match_elements(
    obs: &ScreenObservation,
    store: &GraphStore,
    threshold: f64,
) -> Vec<MatchResult> {
    let mut out = Vec::new();
    for el in &obs.elements {
        let Ok(query) = embed(&el.visual_descriptor) else { continue };
        let hits = store
            .nearest_elements(&query, 1, threshold)
            .expect("query embedding is unit-norm by construction");
        if let Some(&(element_node_id, similarity)) = hits.first() {
            out.push(MatchResult { detected_index: el.index, element_node_id, similarity });
        }
    }
    out
}
