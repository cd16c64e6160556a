//! Cross-frame correspondence: cosine similarity between shadow anchors of one
//! frame and the cells of another, and the best match of every anchor over the
//! full target grid, its shadow set and its non-shadow set.

use crate::error::{invalid, shape, Result};
use crate::guidance::{nonshadow_index_set, shadow_index_set, IndexSet};
use crate::tensor::{check_same_grid, BinaryMask, FeatureMap, Rows};

/// Norm floor used in place of a vector's length when it is shorter.
pub const NORM_EPS: f64 = 1e-8;

pub(crate) fn floored_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_EPS)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity of two vectors with floored norms.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (floored_norm(a) * floored_norm(b))
}

/// `rows x cols` matrix of cosine similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMap {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl SimilarityMap {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, n: usize, m: usize) -> f64 {
        self.values[n * self.cols + m]
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.values[n * self.cols..(n + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for m in 0..self.cols {
            for n in 0..self.rows {
                values.push(self.get(n, m));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            values,
        }
    }
}

/// Pairwise cosine similarity between the rows of `a` and the rows of `b`.
pub fn cosine_similarity_map(a: Rows<'_>, b: Rows<'_>) -> Result<SimilarityMap> {
    if a.dim() != b.dim() {
        return Err(shape(format!("feature dims differ: {} vs {}", a.dim(), b.dim())));
    }
    let b_norms: Vec<f64> = b.iter().map(floored_norm).collect();
    let mut values = Vec::with_capacity(a.len() * b.len());
    for ra in a.iter() {
        let na = floored_norm(ra);
        for (rb, nb) in b.iter().zip(&b_norms) {
            values.push(dot(ra, rb) / (na * nb));
        }
    }
    Ok(SimilarityMap {
        rows: a.len(),
        cols: b.len(),
        values,
    })
}

/// A selected target cell and its similarity to the anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub index: usize,
    pub value: f64,
}

fn argmax(row: impl IntoIterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in row.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best
}

/// Column of row `n` with the largest similarity; ties go to the smallest
/// column.
pub fn best_match(sim: &SimilarityMap, n: usize) -> Result<Match> {
    if n >= sim.rows {
        return Err(invalid(format!("row {n} out of range ({} rows)", sim.rows)));
    }
    argmax(sim.row(n).iter().copied())
        .map(|(index, value)| Match { index, value })
        .ok_or_else(|| invalid("no candidates to match against"))
}

/// Matches of one anchor. `p` is the best match over the whole target grid,
/// `q` over the target shadow set and `qhat` over the target non-shadow set.
/// All indices are linear target-grid indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorMatch {
    pub anchor: usize,
    pub p: Match,
    pub q: Option<Match>,
    pub qhat: Option<Match>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceResult {
    anchors: IndexSet,
    matches: Vec<AnchorMatch>,
    target_shadow: IndexSet,
    target_nonshadow: IndexSet,
}

impl CorrespondenceResult {
    pub fn anchor_indices(&self) -> &IndexSet {
        &self.anchors
    }

    pub fn matches(&self) -> &[AnchorMatch] {
        &self.matches
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    pub fn target_shadow(&self) -> &IndexSet {
        &self.target_shadow
    }

    pub fn target_nonshadow(&self) -> &IndexSet {
        &self.target_nonshadow
    }

    /// Every selected index in order, anchor by anchor. Two results with the
    /// same signature differentiate identically.
    pub fn selection_signature(&self) -> Vec<usize> {
        let mut sig = Vec::with_capacity(self.matches.len() * 3);
        for m in &self.matches {
            sig.push(m.p.index);
            sig.push(m.q.map_or(usize::MAX, |q| q.index));
            sig.push(m.qhat.map_or(usize::MAX, |q| q.index));
        }
        sig
    }
}

fn best_within(row: &[f64], set: &IndexSet) -> Option<Match> {
    argmax(set.indices().iter().map(|&i| row[i])).map(|(k, value)| Match {
        index: set.indices()[k],
        value,
    })
}

/// Matches every shadow anchor of the source frame against the target frame.
pub fn find_correspondences(
    f_src: &FeatureMap,
    f_tgt: &FeatureMap,
    y_src: &BinaryMask,
    y_tgt: &BinaryMask,
) -> Result<CorrespondenceResult> {
    if f_src.dim() != f_tgt.dim() {
        return Err(shape(format!(
            "feature dims differ: {} vs {}",
            f_src.dim(),
            f_tgt.dim()
        )));
    }
    check_same_grid(f_src, y_src, "source mask vs features")?;
    check_same_grid(f_tgt, y_tgt, "target mask vs features")?;

    let anchors = shadow_index_set(y_src);
    let target_shadow = shadow_index_set(y_tgt);
    let target_nonshadow = nonshadow_index_set(y_tgt);

    let tgt_rows = f_tgt.rows();
    let tgt_norms: Vec<f64> = tgt_rows.iter().map(floored_norm).collect();
    let mut row = vec![0.0; f_tgt.cells()];
    let mut matches = Vec::with_capacity(anchors.cardinality());
    for &a in anchors.indices() {
        let va = f_src.cell(a);
        let na = floored_norm(va);
        for ((slot, vb), nb) in row.iter_mut().zip(tgt_rows.iter()).zip(&tgt_norms) {
            *slot = dot(va, vb) / (na * nb);
        }
        let (index, value) = argmax(row.iter().copied()).expect("target grid is nonempty");
        matches.push(AnchorMatch {
            anchor: a,
            p: Match { index, value },
            q: best_within(&row, &target_shadow),
            qhat: best_within(&row, &target_nonshadow),
        });
    }
    Ok(CorrespondenceResult {
        anchors,
        matches,
        target_shadow,
        target_nonshadow,
    })
}

/// Fraction of anchors whose full-grid match lands in the target shadow
/// region. 1.0 when there are no anchors.
pub fn correspondence_ratio(corr: &CorrespondenceResult, y_tgt: &BinaryMask) -> f64 {
    let (hits, total) = ratio_counts(corr, y_tgt);
    if total == 0 {
        1.0
    } else {
        hits as f64 / total as f64
    }
}

/// `(anchors matched into shadow, anchors)`, for pooling across frame pairs.
pub fn ratio_counts(corr: &CorrespondenceResult, y_tgt: &BinaryMask) -> (usize, usize) {
    let hits = corr
        .matches
        .iter()
        .filter(|m| y_tgt.data().get(m.p.index) == Some(&1))
        .count();
    (hits, corr.matches.len())
}
