//! Test-set construction: single-linkage agglomerative clustering of image
//! feature vectors under cosine distance, one medoid per cluster held out.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ImageId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub image_id: ImageId,
    pub vector: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("feature set is empty")]
    Empty,
    #[error("image {image_id}: vector has {actual} dimensions, expected {expected}")]
    Dimension { image_id: ImageId, expected: usize, actual: usize },
    #[error("image {0}: vector has zero norm")]
    ZeroNorm(ImageId),
    #[error("image {0}: vector contains a non-finite value")]
    NonFinite(ImageId),
    #[error("image {0} appears more than once in the feature set")]
    DuplicateId(ImageId),
    #[error("cluster count {k} is outside 1..={n}")]
    ClusterCount { k: usize, n: usize },
    #[error("split ratio {0} is outside (0, 1)")]
    Ratio(f64),
    #[error("features line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// `1 - cos(u, v)`, in [0, 2]. Callers guarantee equal length and nonzero norms.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    (1.0 - dot / (nu * nv)).clamp(0.0, 2.0)
}

pub fn validate_features(features: &[FeatureVector]) -> Result<(), SplitError> {
    let first = features.first().ok_or(SplitError::Empty)?;
    let dim = first.vector.len();
    let mut seen = BTreeSet::new();
    for f in features {
        if !seen.insert(f.image_id) {
            return Err(SplitError::DuplicateId(f.image_id));
        }
        if f.vector.len() != dim {
            return Err(SplitError::Dimension { image_id: f.image_id, expected: dim, actual: f.vector.len() });
        }
        if f.vector.iter().any(|v| !v.is_finite()) {
            return Err(SplitError::NonFinite(f.image_id));
        }
        if f.vector.iter().all(|v| *v == 0.0) {
            return Err(SplitError::ZeroNorm(f.image_id));
        }
    }
    Ok(())
}

/// Reads a JSON Lines feature file (`{"image_id": .., "vector": [..]}` per line).
pub fn parse_features(text: &str) -> Result<Vec<FeatureVector>, SplitError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: FeatureVector =
            serde_json::from_str(line).map_err(|e| SplitError::Parse { line: i + 1, message: e.to_string() })?;
        out.push(f);
    }
    validate_features(&out)?;
    Ok(out)
}

pub fn load_features(path: &Path) -> Result<Vec<FeatureVector>, SplitError> {
    let text =
        fs::read_to_string(path).map_err(|source| SplitError::Io { path: path.display().to_string(), source })?;
    parse_features(&text)
}

pub fn features_to_jsonl(features: &[FeatureVector]) -> String {
    let mut out = String::new();
    for f in features {
        out.push_str(&serde_json::to_string(f).expect("feature vectors serialize"));
        out.push('\n');
    }
    out
}

/// One agglomeration step. Clusters are named by their smallest image id;
/// `witness` is the member pair whose distance defined the linkage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeStep {
    pub left: ImageId,
    pub right: ImageId,
    pub distance: f64,
    pub witness: (ImageId, ImageId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Cluster index per image, numbered by each cluster's smallest id.
    pub assignment: BTreeMap<ImageId, usize>,
    pub merges: Vec<MergeStep>,
}

/// Symmetric pairwise distances over features sorted by image id. Each
/// unordered pair is computed once so that `d[i][j] == d[j][i]` bit for bit.
fn distance_matrix(sorted: &[&FeatureVector]) -> Vec<Vec<f64>> {
    let n = sorted.len();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| ((i + 1)..n).map(|j| cosine_distance(&sorted[i].vector, &sorted[j].vector)).collect())
        .collect();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for (off, &v) in upper[i].iter().enumerate() {
            let j = i + 1 + off;
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

fn sorted_by_id(features: &[FeatureVector]) -> Vec<&FeatureVector> {
    let mut sorted: Vec<&FeatureVector> = features.iter().collect();
    sorted.sort_by_key(|f| f.image_id);
    sorted
}

/// Merges the closest pair of clusters until `k` remain. Ties go to the pair
/// whose first cluster has the smaller minimum id, then the second.
pub fn single_linkage_cluster(features: &[FeatureVector], k: usize) -> Result<Clustering, SplitError> {
    validate_features(features)?;
    let n = features.len();
    if k < 1 || k > n {
        return Err(SplitError::ClusterCount { k, n });
    }
    let sorted = sorted_by_id(features);
    let ids: Vec<ImageId> = sorted.iter().map(|f| f.image_id).collect();
    let mut link = distance_matrix(&sorted);
    let mut witness: Vec<Vec<(usize, usize)>> = (0..n).map(|i| (0..n).map(|j| (i, j)).collect()).collect();

    // slot i holds the cluster whose smallest member is ids[i]; ascending slot
    // order is ascending minimum-id order
    let mut owner: Vec<usize> = (0..n).collect();
    let mut active: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n - k);
    while active.len() > k {
        let mut best: Option<(f64, usize, usize)> = None;
        for (ai, &a) in active.iter().enumerate() {
            for &b in &active[ai + 1..] {
                if best.is_none_or(|(bd, _, _)| link[a][b] < bd) {
                    best = Some((link[a][b], a, b));
                }
            }
        }
        let (distance, a, b) = best.expect("at least two active clusters");
        let (wa, wb) = witness[a][b];
        merges.push(MergeStep { left: ids[a], right: ids[b], distance, witness: (ids[wa], ids[wb]) });
        for &x in &active {
            if x == a || x == b {
                continue;
            }
            if link[b][x] < link[a][x] {
                link[a][x] = link[b][x];
                link[x][a] = link[b][x];
                witness[a][x] = witness[b][x];
                witness[x][a] = witness[x][b];
            }
        }
        for o in owner.iter_mut() {
            if *o == b {
                *o = a;
            }
        }
        active.retain(|&s| s != b);
    }
    let index: BTreeMap<usize, usize> = active.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let assignment = ids.iter().zip(&owner).map(|(&id, s)| (id, index[s])).collect();
    Ok(Clustering { assignment, merges })
}

/// Per cluster, the member with the smallest summed distance to all members
/// (smallest id on ties). Returned in cluster-index order.
pub fn select_medoids(
    features: &[FeatureVector],
    assignment: &BTreeMap<ImageId, usize>,
) -> Result<Vec<ImageId>, SplitError> {
    validate_features(features)?;
    let sorted = sorted_by_id(features);
    let d = distance_matrix(&sorted);
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (pos, f) in sorted.iter().enumerate() {
        if let Some(&c) = assignment.get(&f.image_id) {
            members.entry(c).or_default().push(pos);
        }
    }
    Ok(members
        .values()
        .map(|m| {
            let mut best = (f64::INFINITY, m[0]);
            for &i in m {
                let sum: f64 = m.iter().map(|&j| d[i][j]).sum();
                if sum < best.0 {
                    best = (sum, i);
                }
            }
            sorted[best.1].image_id
        })
        .collect())
}

/// `round(ratio * n)`, halves rounded up.
pub fn cluster_count(ratio: f64, n: usize) -> usize {
    (ratio * n as f64 + 0.5).floor() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub test_ids: Vec<ImageId>,
    pub train_ids: Vec<ImageId>,
    pub cluster_assignment: BTreeMap<ImageId, usize>,
    pub merge_log: Vec<MergeStep>,
}

impl SplitResult {
    pub fn is_test(&self, id: ImageId) -> bool {
        self.test_ids.binary_search(&id).is_ok()
    }

    pub fn from_json_str(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("split results serialize");
        s.push('\n');
        s
    }
}

pub fn make_split(features: &[FeatureVector], ratio: f64) -> Result<SplitResult, SplitError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(SplitError::Ratio(ratio));
    }
    let k = cluster_count(ratio, features.len());
    let clustering = single_linkage_cluster(features, k)?;
    let mut test_ids = select_medoids(features, &clustering.assignment)?;
    test_ids.sort_unstable();
    let test: BTreeSet<ImageId> = test_ids.iter().copied().collect();
    let train_ids = clustering.assignment.keys().copied().filter(|id| !test.contains(id)).collect();
    Ok(SplitResult { test_ids, train_ids, cluster_assignment: clustering.assignment, merge_log: clustering.merges })
}
