//! Agglomerative clustering of a tool's embedded invocations.
//!
//! Average linkage over a precomputed distance matrix, cut at a merge
//! threshold. The same routine groups raw strings by edit distance during
//! regex drafting (see [`crate::induce::draft_regexes`]).

use serde::{Deserialize, Serialize};

use crate::embed::{Block, FeatureVector};
use crate::error::{Error, Result};
use crate::induce::{draft_regexes, Aggregator, ClusterDraft, TextualPredicate, Warning};

/// Per-block multipliers applied before the cosine distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockWeights {
    pub numeric: f64,
    pub thoughts: f64,
    pub tool_type: f64,
    pub tool_input: f64,
    pub task_result: f64,
}

impl Default for BlockWeights {
    fn default() -> Self {
        BlockWeights {
            numeric: 1.0,
            thoughts: 1.0,
            tool_type: 1.0,
            tool_input: 1.0,
            task_result: 1.0,
        }
    }
}

impl BlockWeights {
    fn weight(&self, block: Block) -> f64 {
        match block {
            Block::Thoughts => self.thoughts,
            Block::ToolType => self.tool_type,
            Block::ToolInput => self.tool_input,
            Block::TaskResult => self.task_result,
            _ => self.numeric,
        }
    }

    fn is_uniform(&self) -> bool {
        *self == BlockWeights::default()
    }

    fn apply(&self, v: &FeatureVector) -> Vec<f64> {
        let mut out = v.as_slice().to_vec();
        if self.is_uniform() {
            return out;
        }
        for block in Block::ALL {
            let w = self.weight(block);
            for x in &mut out[block.range()] {
                *x *= w;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterParams {
    /// Average-linkage merge threshold on cosine distance, in `(0, 2)`.
    pub merge_threshold: f64,
    pub min_cluster_size_for_rule: usize,
    #[serde(default)]
    pub block_weights: BlockWeights,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            merge_threshold: 0.35,
            min_cluster_size_for_rule: 1,
            block_weights: BlockWeights::default(),
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.merge_threshold > 0.0 && self.merge_threshold < 2.0) {
            return Err(Error::Config(format!(
                "merge threshold {} outside (0, 2)",
                self.merge_threshold
            )));
        }
        if self.min_cluster_size_for_rule == 0 {
            return Err(Error::Config("min cluster size must be positive".into()));
        }
        Ok(())
    }
}

/// A partition of one tool's invocation indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub tool_name: String,
    /// Sorted member lists, ordered by smallest member.
    pub clusters: Vec<Vec<usize>>,
    pub params: ClusterParams,
}

impl ClusterSet {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Indices of clusters below `min_cluster_size_for_rule`, kept for review.
    pub fn flagged(&self) -> Vec<usize> {
        self.clusters
            .iter()
            .enumerate()
            .filter(|(_, c)| c.len() < self.params.min_cluster_size_for_rule.max(2))
            .map(|(i, _)| i)
            .collect()
    }

    /// Whether the clusters partition `0..n`.
    pub fn is_partition_of(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for c in &self.clusters {
            if c.is_empty() {
                return false;
            }
            for &i in c {
                if i >= n || seen[i] {
                    return false;
                }
                seen[i] = true;
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Cosine distance clamped to `[0, 2]`. Identical vectors are at distance 0;
/// a zero vector is at distance 0 from another zero vector and 1 from
/// anything else.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 && nb == 0.0 {
        return 0.0;
    }
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

/// Symmetric distance matrix, row-major.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = f(i, j);
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        DistanceMatrix { n, d }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }
}

/// Average-linkage agglomeration. Repeatedly merges the closest pair of
/// clusters while their average distance is `<= threshold`. Ties on distance
/// go to the pair with the smallest `(min member, min member)` key.
pub fn agglomerate(dist: &DistanceMatrix, threshold: f64) -> Vec<Vec<usize>> {
    let mut clusters: Vec<Vec<usize>> = (0..dist.len()).map(|i| vec![i]).collect();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                let d = average_linkage(dist, &clusters[a], &clusters[b]);
                let better = match best {
                    None => true,
                    Some((bd, ba, bb)) => {
                        d < bd || (d == bd && key(&clusters, a, b) < key(&clusters, ba, bb))
                    }
                };
                if better {
                    best = Some((d, a, b));
                }
            }
        }
        match best {
            Some((d, a, b)) if d <= threshold => {
                let absorbed = clusters.remove(b);
                clusters[a].extend(absorbed);
                clusters[a].sort_unstable();
            }
            _ => break,
        }
    }
    clusters.sort_by_key(|c| c[0]);
    clusters
}

fn key(clusters: &[Vec<usize>], a: usize, b: usize) -> (usize, usize) {
    let (x, y) = (clusters[a][0], clusters[b][0]);
    (x.min(y), x.max(y))
}

fn average_linkage(dist: &DistanceMatrix, a: &[usize], b: &[usize]) -> f64 {
    let mut sum = 0.0;
    for &i in a {
        for &j in b {
            sum += dist.get(i, j);
        }
    }
    sum / (a.len() * b.len()) as f64
}

pub fn cluster_embeddings(
    tool_name: &str,
    vectors: &[FeatureVector],
    params: &ClusterParams,
) -> Result<ClusterSet> {
    if vectors.is_empty() {
        return Err(Error::EmptyClusterInput);
    }
    let weighted: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| params.block_weights.apply(v))
        .collect();
    let dist = DistanceMatrix::from_fn(weighted.len(), |i, j| {
        cosine_distance(&weighted[i], &weighted[j])
    });
    Ok(ClusterSet {
        tool_name: tool_name.to_string(),
        clusters: agglomerate(&dist, params.merge_threshold),
        params: params.clone(),
    })
}

/// Lets the aggregator union clusters whose raw inputs share a category.
/// On aggregator failure or an invalid proposal the input set is returned
/// unchanged together with a warning.
pub fn merge_semantic(
    set: &ClusterSet,
    raw_inputs: &[String],
    aggregator: &dyn Aggregator,
) -> (ClusterSet, Vec<Warning>) {
    if set.clusters.len() < 2 {
        return (set.clone(), Vec::new());
    }
    let drafts: Vec<ClusterDraft> = set
        .clusters
        .iter()
        .map(|members| {
            let samples: Vec<String> = members.iter().map(|&i| raw_inputs[i].clone()).collect();
            ClusterDraft {
                drafts: draft_regexes(&samples),
                samples,
            }
        })
        .collect();

    let warn = |message: String| Warning {
        scope: format!("merge:{}", set.tool_name),
        message,
    };
    let proposal = match aggregator.propose_merges(&drafts) {
        Ok(p) => p,
        Err(e) => return (set.clone(), vec![warn(format!("aggregator failed: {e}"))]),
    };

    let k = set.clusters.len();
    let mut parent: Vec<usize> = (0..k).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while parent[r] != r {
            r = parent[r];
        }
        let mut c = x;
        while parent[c] != r {
            let next = parent[c];
            parent[c] = r;
            c = next;
        }
        r
    }
    for group in &proposal {
        if let Some(&bad) = group.iter().find(|&&i| i >= k) {
            return (
                set.clone(),
                vec![warn(format!("aggregator proposed unknown cluster {bad}"))],
            );
        }
        for w in group.windows(2) {
            let (ra, rb) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut merged: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, members) in set.clusters.iter().enumerate() {
        let root = find(&mut parent, i);
        merged[root].extend(members.iter().copied());
    }
    let mut clusters: Vec<Vec<usize>> = merged.into_iter().filter(|c| !c.is_empty()).collect();
    for c in &mut clusters {
        c.sort_unstable();
    }
    clusters.sort_by_key(|c| c[0]);
    (
        ClusterSet {
            tool_name: set.tool_name.clone(),
            clusters,
            params: set.params.clone(),
        },
        Vec::new(),
    )
}

/// Whether every sample of `inner` full-matches one of `outer`'s drafts.
pub fn drafts_subsume(outer: &ClusterDraft, inner: &ClusterDraft) -> bool {
    match TextualPredicate::new(outer.drafts.clone()).and_then(|p| p.compile()) {
        Ok(compiled) => inner.samples.iter().all(|s| compiled.matches(s)),
        Err(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::induce::{AggregatorError, DeterministicAggregator};

    fn fv(values: &[(usize, f64)]) -> FeatureVector {
        let mut v = FeatureVector::zeros();
        let mut raw = vec![0.0; crate::embed::FEATURE_DIMS];
        for &(i, x) in values {
            raw[i] = x;
        }
        for b in Block::ALL {
            v.set_block(b, &raw[b.range()]);
        }
        v
    }

    #[test]
    fn single_vector_single_cluster() {
        let set = cluster_embeddings("t", &[fv(&[(10, 1.0)])], &ClusterParams::default()).unwrap();
        assert_eq!(set.clusters, vec![vec![0]]);
    }

    #[test]
    fn empty_input_is_error() {
        assert!(matches!(
            cluster_embeddings("t", &[], &ClusterParams::default()),
            Err(Error::EmptyClusterInput)
        ));
    }

    #[test]
    fn identical_pair_plus_orthogonal() {
        let a = fv(&[(10, 1.0)]);
        let o = fv(&[(60, 1.0)]);
        let set = cluster_embeddings("t", &[a.clone(), o, a], &ClusterParams::default()).unwrap();
        assert_eq!(set.clusters, vec![vec![0, 2], vec![1]]);
        assert!(set.is_partition_of(3));
    }

    #[test]
    fn threshold_extremes() {
        let vs = vec![fv(&[(10, 1.0)]), fv(&[(10, 1.0), (11, 0.1)]), fv(&[(60, 1.0)])];
        let tight = ClusterParams {
            merge_threshold: 1e-12,
            ..Default::default()
        };
        assert_eq!(cluster_embeddings("t", &vs, &tight).unwrap().len(), 3);
        let loose = ClusterParams {
            merge_threshold: 2.0,
            ..Default::default()
        };
        assert_eq!(cluster_embeddings("t", &vs, &loose).unwrap().len(), 1);
    }

    #[test]
    fn zero_vectors_group_together() {
        let z = FeatureVector::zeros();
        let set =
            cluster_embeddings("t", &[z.clone(), fv(&[(10, 1.0)]), z], &ClusterParams::default())
                .unwrap();
        assert_eq!(set.clusters, vec![vec![0, 2], vec![1]]);
    }

    #[test]
    fn tie_break_prefers_smallest_indices() {
        // Four points where (0,1) and (2,3) are equally close.
        let d = DistanceMatrix::from_fn(4, |i, j| match (i, j) {
            (0, 1) | (2, 3) => 0.1,
            _ => 0.9,
        });
        let c = agglomerate(&d, 0.1);
        assert_eq!(c, vec![vec![0, 1], vec![2, 3]]);
        // With a threshold between linkage levels only exact ties matter.
        let d = DistanceMatrix::from_fn(3, |_, _| 0.2);
        assert_eq!(agglomerate(&d, 0.2), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn block_weights_can_silence_a_block() {
        let a = fv(&[(10, 1.0), (60, 1.0)]);
        let b = fv(&[(10, 1.0), (61, 1.0)]);
        let plain = cluster_embeddings("t", &[a.clone(), b.clone()], &ClusterParams::default())
            .unwrap();
        assert_eq!(plain.len(), 2);
        let params = ClusterParams {
            block_weights: BlockWeights {
                tool_input: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        assert_eq!(cluster_embeddings("t", &[a, b], &params).unwrap().len(), 1);
    }

    struct Nothing;
    impl Aggregator for Nothing {
        fn name(&self) -> &str {
            "nothing"
        }
        fn aggregate(
            &self,
            drafts: &[String],
            _samples: &[String],
        ) -> std::result::Result<Vec<String>, AggregatorError> {
            Ok(drafts.to_vec())
        }
        fn propose_merges(
            &self,
            _clusters: &[ClusterDraft],
        ) -> std::result::Result<Vec<Vec<usize>>, AggregatorError> {
            Ok(Vec::new())
        }
    }

    struct Broken;
    impl Aggregator for Broken {
        fn name(&self) -> &str {
            "broken"
        }
        fn aggregate(
            &self,
            _: &[String],
            _: &[String],
        ) -> std::result::Result<Vec<String>, AggregatorError> {
            Err(AggregatorError::Transport("down".into()))
        }
        fn propose_merges(
            &self,
            _: &[ClusterDraft],
        ) -> std::result::Result<Vec<Vec<usize>>, AggregatorError> {
            Err(AggregatorError::Transport("down".into()))
        }
    }

    fn three_city_set() -> (ClusterSet, Vec<String>) {
        let inputs = vec!["New York".to_string(), "Washington".into(), "Chicago".into()];
        let set = ClusterSet {
            tool_name: "search".into(),
            clusters: vec![vec![0], vec![1], vec![2]],
            params: ClusterParams::default(),
        };
        (set, inputs)
    }

    #[test]
    fn silent_aggregator_is_identity() {
        let (set, inputs) = three_city_set();
        let (out, warnings) = merge_semantic(&set, &inputs, &Nothing);
        assert_eq!(out, set);
        assert!(warnings.is_empty());
    }

    #[test]
    fn failing_aggregator_returns_input_with_warning() {
        let (set, inputs) = three_city_set();
        let (out, warnings) = merge_semantic(&set, &inputs, &Broken);
        assert_eq!(out, set);
        assert_eq!(warnings.len(), 1);
    }

    struct Category;
    impl Aggregator for Category {
        fn name(&self) -> &str {
            "category"
        }
        fn aggregate(
            &self,
            drafts: &[String],
            _: &[String],
        ) -> std::result::Result<Vec<String>, AggregatorError> {
            Ok(drafts.to_vec())
        }
        fn propose_merges(
            &self,
            clusters: &[ClusterDraft],
        ) -> std::result::Result<Vec<Vec<usize>>, AggregatorError> {
            Ok(vec![(0..clusters.len()).collect()])
        }
    }

    #[test]
    fn category_aggregator_can_merge_cities() {
        let (set, inputs) = three_city_set();
        let (out, _) = merge_semantic(&set, &inputs, &Category);
        assert_eq!(out.clusters, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn default_aggregator_merges_subsumed_drafts() {
        // Cluster 1 drafts to a letters pattern that also accepts cluster 0.
        let inputs = vec![
            "Newarp".to_string(),
            "Newark".into(),
            "Newars".into(),
            "Boston".into(),
        ];
        let set = ClusterSet {
            tool_name: "search".into(),
            clusters: vec![vec![0], vec![1, 2], vec![3]],
            params: ClusterParams::default(),
        };
        let (out, warnings) = merge_semantic(&set, &inputs, &DeterministicAggregator);
        assert!(warnings.is_empty());
        assert_eq!(out.clusters, vec![vec![0, 1, 2], vec![3]]);
    }
}
