//! Cross-event face-set clustering. A face-set is the collection of face
//! embeddings of one tracked person within one sequence; grouping face-sets
//! across sequences identifies recurring people over the whole observation
//! period.
//!
//! The dissimilarity between a reference set R and a target set T is the
//! absolute difference between the median cosine similarity of all distinct
//! pairs inside R and the median cosine similarity of all R×T pairs. The
//! raw measure is asymmetric in R, so clustering runs on its symmetrized
//! average. Merging is average-linkage agglomeration up to a cutoff that is
//! calibrated as the median same-person dissimilarity on a labeled set.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Category, SequenceLabels};
use crate::linalg;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("face-set {0} has no embeddings")]
    EmptyFaceSet(FaceSetId),
    #[error("embedding dimension {got} does not match {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding norm {norm} of {id} is not unit within 1e-6")]
    NotUnitNorm { id: FaceSetId, norm: f64 },
    #[error("no pair of face-sets shares a person label")]
    NoSamePersonPairs,
    #[error("no face-sets given")]
    EmptyInput,
    #[error("cluster member references unknown sequence {0}")]
    UnknownSequence(String),
}

/// `(sequence, track)` pair identifying one face-set.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FaceSetId {
    pub sequence_id: String,
    pub track_id: u32,
}

impl fmt::Display for FaceSetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.sequence_id, self.track_id)
    }
}

/// The face examples of one person in one event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceSet {
    pub id: FaceSetId,
    /// Unit-norm embeddings, one per face example.
    pub embeddings: Vec<Vec<f64>>,
    /// Ground-truth person label, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub person: Option<String>,
}

impl FaceSet {
    pub fn new(
        id: FaceSetId,
        embeddings: Vec<Vec<f64>>,
        person: Option<String>,
    ) -> Result<Self, ClusterError> {
        let first = embeddings.first().ok_or_else(|| ClusterError::EmptyFaceSet(id.clone()))?;
        let dim = first.len();
        for e in &embeddings {
            if e.len() != dim {
                return Err(ClusterError::DimensionMismatch { expected: dim, got: e.len() });
            }
            let norm = linalg::l2_norm(e);
            if (norm - 1.0).abs() > 1e-6 {
                return Err(ClusterError::NotUnitNorm { id: id.clone(), norm });
            }
        }
        Ok(FaceSet { id, embeddings, person })
    }

    pub fn dim(&self) -> usize {
        self.embeddings[0].len()
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    linalg::dot(a, b) / (linalg::l2_norm(a) * linalg::l2_norm(b))
}

/// Exact median: mean of the two middle elements for even counts.
fn median(values: &mut [f64]) -> f64 {
    debug_assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// δ(R, T): absolute difference between the median within-R similarity
/// (distinct pairs only; a singleton R uses μ = 1, a face being maximally
/// similar to itself) and the median R×T similarity.
pub fn faceset_dissimilarity(reference: &FaceSet, target: &FaceSet) -> Result<f64, ClusterError> {
    if reference.dim() != target.dim() {
        return Err(ClusterError::DimensionMismatch {
            expected: reference.dim(),
            got: target.dim(),
        });
    }
    let mu_ref = if reference.embeddings.len() < 2 {
        1.0
    } else {
        let mut sims = Vec::new();
        for i in 0..reference.embeddings.len() {
            for j in (i + 1)..reference.embeddings.len() {
                sims.push(cosine(&reference.embeddings[i], &reference.embeddings[j]));
            }
        }
        median(&mut sims)
    };
    let mut cross = Vec::with_capacity(reference.embeddings.len() * target.embeddings.len());
    for r in &reference.embeddings {
        for t in &target.embeddings {
            cross.push(cosine(r, t));
        }
    }
    let mu_cross = median(&mut cross);
    Ok((mu_ref - mu_cross).abs())
}

/// Symmetric variant used as the clustering distance:
/// `(δ(R,T) + δ(T,R)) / 2`.
pub fn symmetrized_dissimilarity(a: &FaceSet, b: &FaceSet) -> Result<f64, ClusterError> {
    Ok(0.5 * (faceset_dissimilarity(a, b)? + faceset_dissimilarity(b, a)?))
}

/// Median symmetrized dissimilarity over every pair of face-sets sharing a
/// person label.
pub fn calibrate_cutoff(face_sets: &[FaceSet]) -> Result<f64, ClusterError> {
    let mut same_person = Vec::new();
    for i in 0..face_sets.len() {
        for j in (i + 1)..face_sets.len() {
            let (Some(a), Some(b)) = (&face_sets[i].person, &face_sets[j].person) else {
                continue;
            };
            if a == b {
                same_person.push(symmetrized_dissimilarity(&face_sets[i], &face_sets[j])?);
            }
        }
    }
    if same_person.is_empty() {
        return Err(ClusterError::NoSamePersonPairs);
    }
    Ok(median(&mut same_person))
}

/// One agglomeration step in the leaves-first numbering: leaves are
/// `0..n-1` in canonical id order, the cluster born from merge `k` gets id
/// `n + k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    /// Member ids per cluster; members sorted, clusters sorted by first
    /// member, so the partition is independent of the input order.
    pub clusters: Vec<Vec<FaceSetId>>,
    pub cutoff: f64,
    pub linkage: String,
    /// The full merge history up to a single cluster.
    pub dendrogram: Vec<Merge>,
}

impl ClusterResult {
    pub fn assignments(&self) -> BTreeMap<FaceSetId, usize> {
        let mut out = BTreeMap::new();
        for (idx, members) in self.clusters.iter().enumerate() {
            for m in members {
                out.insert(m.clone(), idx);
            }
        }
        out
    }
}

/// Full symmetrized dissimilarity matrix over the given order, computed in
/// parallel pair blocks.
fn dissimilarity_matrix(sets: &[&FaceSet]) -> Result<Vec<Vec<f64>>, ClusterError> {
    let n = sets.len();
    let pairs: Vec<(usize, usize)> =
        (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
    let values: Vec<Result<f64, ClusterError>> = pairs
        .par_iter()
        .map(|&(i, j)| symmetrized_dissimilarity(sets[i], sets[j]))
        .collect();
    let mut matrix = vec![vec![0.0; n]; n];
    for (&(i, j), value) in pairs.iter().zip(values) {
        let v = value?;
        matrix[i][j] = v;
        matrix[j][i] = v;
    }
    Ok(matrix)
}

/// Average-linkage agglomerative clustering over the symmetrized
/// dissimilarity. The full dendrogram is always built; the reported
/// partition applies merges while the linkage distance stays within the
/// cutoff. Ties break toward the lexicographically smallest active pair,
/// and face-sets are processed in canonical id order, so the result is
/// deterministic and input-order independent.
pub fn agglomerate(face_sets: &[FaceSet], cutoff: f64) -> Result<ClusterResult, ClusterError> {
    if face_sets.is_empty() {
        return Err(ClusterError::EmptyInput);
    }
    let mut order: Vec<&FaceSet> = face_sets.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let n = order.len();
    let base = dissimilarity_matrix(&order)?;

    // Active clusters keep their slot order; merging placces the new
    // cluster at the left slot and removes the right one.
    struct Active {
        node_id: usize,
        size: usize,
        leaves: Vec<usize>,
    }
    let mut active: Vec<Active> =
        (0..n).map(|i| Active { node_id: i, size: 1, leaves: vec![i] }).collect();
    let mut dist: Vec<Vec<f64>> = base.clone();
    let mut dendrogram = Vec::with_capacity(n.saturating_sub(1));

    for step in 0..n.saturating_sub(1) {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..active.len() {
            for j in (i + 1)..active.len() {
                let d = dist[i][j];
                if best.is_none_or(|(_, _, bd)| d < bd) {
                    best = Some((i, j, d));
                }
            }
        }
        let (i, j, height) = best.expect("at least two active clusters");
        dendrogram.push(Merge {
            left: active[i].node_id,
            right: active[j].node_id,
            height,
            size: active[i].size + active[j].size,
        });

        let (size_i, size_j) = (active[i].size as f64, active[j].size as f64);
        let total = size_i + size_j;
        for k in 0..active.len() {
            if k == i || k == j {
                continue;
            }
            let merged = (size_i * dist[i][k] + size_j * dist[j][k]) / total;
            dist[i][k] = merged;
            dist[k][i] = merged;
        }
        let removed = active.remove(j);
        active[i].node_id = n + step;
        active[i].size += removed.size;
        let mut extra = removed.leaves;
        active[i].leaves.append(&mut extra);
        for row in &mut dist {
            row.remove(j);
        }
        dist.remove(j);
    }

    // Cut: replay merges while the linkage distance stays within cutoff.
    let mut parent: Vec<usize> = (0..n + dendrogram.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (step, merge) in dendrogram.iter().enumerate() {
        if merge.height > cutoff {
            break;
        }
        let node = n + step;
        let a = find(&mut parent, merge.left);
        let b = find(&mut parent, merge.right);
        parent[a] = node;
        parent[b] = node;
    }
    let mut groups: BTreeMap<usize, Vec<FaceSetId>> = BTreeMap::new();
    for (leaf, set) in order.iter().enumerate() {
        let root = find(&mut parent, leaf);
        groups.entry(root).or_default().push(set.id.clone());
    }
    let mut clusters: Vec<Vec<FaceSetId>> = groups.into_values().collect();
    for members in &mut clusters {
        members.sort();
    }
    clusters.sort_by(|a, b| a[0].cmp(&b[0]));

    Ok(ClusterResult { clusters, cutoff, linkage: "average".to_string(), dendrogram })
}

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster_index: usize,
    pub members: Vec<FaceSetId>,
    /// Number of social events (face-sets) in the cluster.
    pub event_count: usize,
    pub sequence_count: usize,
    /// Total face examples across member face-sets.
    pub face_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interacting_events: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formal_events: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub informal_events: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub clusters: Vec<ClusterSummary>,
}

/// Joins the partition with per-sequence labels: every member sequence must
/// be present in `labels`; category and interaction counters appear only
/// when at least one member sequence carries them.
pub fn cluster_report(
    result: &ClusterResult,
    face_sets: &[FaceSet],
    labels: &BTreeMap<String, SequenceLabels>,
) -> Result<ClusterReport, ClusterError> {
    let sizes: BTreeMap<&FaceSetId, usize> =
        face_sets.iter().map(|f| (&f.id, f.embeddings.len())).collect();
    let mut clusters = Vec::with_capacity(result.clusters.len());
    for (cluster_index, members) in result.clusters.iter().enumerate() {
        let mut face_count = 0usize;
        let mut sequences = BTreeSet::new();
        let mut interacting = None;
        let mut formal = None;
        let mut informal = None;
        for member in members {
            face_count += sizes.get(member).copied().unwrap_or(0);
            sequences.insert(member.sequence_id.clone());
            let info = labels
                .get(&member.sequence_id)
                .ok_or_else(|| ClusterError::UnknownSequence(member.sequence_id.clone()))?;
            if let Some(&state) = info.interacting.get(&member.track_id) {
                *interacting.get_or_insert(0) += usize::from(state);
            }
            match info.category {
                Some(Category::Formal) => {
                    *formal.get_or_insert(0) += 1;
                    informal.get_or_insert(0);
                }
                Some(Category::Informal) => {
                    *informal.get_or_insert(0) += 1;
                    formal.get_or_insert(0);
                }
                None => {}
            }
        }
        clusters.push(ClusterSummary {
            cluster_index,
            members: members.clone(),
            event_count: members.len(),
            sequence_count: sequences.len(),
            face_count,
            interacting_events: interacting,
            formal_events: formal,
            informal_events: informal,
        });
    }
    Ok(ClusterReport { clusters })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Pairwise clustering quality against ground-truth person labels: a pair
/// of face-sets counts as positive when both the clustering and the truth
/// place them together.
pub fn pairwise_f_score(
    result: &ClusterResult,
    truth: &BTreeMap<FaceSetId, String>,
) -> PairwiseScore {
    let assignment = result.assignments();
    let ids: Vec<&FaceSetId> = truth.keys().collect();
    let (mut tp, mut fp, mut fn_count) = (0usize, 0usize, 0usize)
        ;
    for i in 0..ids.len() {
        for j in (i + 1)..ids.len() {
            let same_truth = truth[ids[i]] == truth[ids[j]];
            let same_pred = match (assignment.get(ids[i]), assignment.get(ids[j])) {
                (Some(a), Some(b)) => a == b,
                _ => false,
            };
            match (same_pred, same_truth) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_count += 1,
                (false, false) => {}
            }
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_count == 0 { 0.0 } else { tp as f64 / (tp + fn_count) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    PairwiseScore { precision, recall, f1 }
}
