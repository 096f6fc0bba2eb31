//! Agent DAGs and feature assignments.
//!
//! Nodes are `0..n`; a node's parents deliver their predictions to it.
//! Roots have depth 1 and the depth of the DAG is the largest node depth.
//! `subtree_size` counts the node itself plus everything with a directed
//! path into it, which for bottom-up trees is exactly the subtree feeding
//! a learner.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("node {node} lists parent {parent} outside 0..{n}")]
    ParentOutOfRange { node: usize, parent: usize, n: usize },
    #[error("node {node} lists itself as a parent")]
    SelfLoop { node: usize },
    #[error("parent lists contain a cycle")]
    Cyclic,
    #[error("feature probability must lie in (0, 1], got {0}")]
    ProbabilityOutOfRange(f64),
    #[error("feature index {index} out of range for d = {d}")]
    FeatureOutOfRange { index: usize, d: usize },
    #[error("window {window} exceeds path length {path_len}")]
    WindowTooLong { window: usize, path_len: usize },
    #[error("window must be at least 1")]
    EmptyWindow,
}

/// Direction of information flow in a random tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeDirection {
    /// Edges run from the tree root toward the leaves.
    TopDown,
    /// Edges reversed: leaves are DAG roots, the tree root aggregates last.
    BottomUp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dag {
    node_count: usize,
    parents: Vec<Vec<usize>>,
    topo_order: Vec<usize>,
    depth: Vec<usize>,
    subtree_size: Vec<usize>,
}

impl Dag {
    /// Validates parent lists, certifies acyclicity by constructing a
    /// topological order (ties broken by ascending node id), and computes
    /// depth and subtree size.
    pub fn from_parents(parents: Vec<Vec<usize>>) -> Result<Self, GraphError> {
        let n = parents.len();
        if n == 0 {
            return Err(GraphError::Empty);
        }
        for (node, ps) in parents.iter().enumerate() {
            for &p in ps {
                if p >= n {
                    return Err(GraphError::ParentOutOfRange { node, parent: p, n });
                }
                if p == node {
                    return Err(GraphError::SelfLoop { node });
                }
            }
        }
        // Kahn's algorithm; a BinaryHeap would do, but n is small and a scan
        // keeps the smallest-id tie-break obvious.
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut pending: Vec<usize> = parents.iter().map(Vec::len).collect();
        for (node, ps) in parents.iter().enumerate() {
            for &p in ps {
                children[p].push(node);
            }
        }
        let mut ready: Vec<bool> = pending.iter().map(|&c| c == 0).collect();
        let mut topo_order = Vec::with_capacity(n);
        while let Some(next) = ready.iter().position(|&r| r) {
            ready[next] = false;
            topo_order.push(next);
            for &c in &children[next] {
                pending[c] -= 1;
                if pending[c] == 0 {
                    ready[c] = true;
                }
            }
        }
        if topo_order.len() != n {
            return Err(GraphError::Cyclic);
        }
        let mut depth = vec![1usize; n];
        for &v in &topo_order {
            for &p in &parents[v] {
                depth[v] = depth[v].max(depth[p] + 1);
            }
        }
        // ancestor sets as bitsets, accumulated along the topological order
        let words = n.div_ceil(64);
        let mut ancestors = vec![0u64; n * words];
        let mut buf = vec![0u64; words];
        for &v in &topo_order {
            for &p in &parents[v] {
                buf.copy_from_slice(&ancestors[p * words..(p + 1) * words]);
                for (t, s) in ancestors[v * words..(v + 1) * words].iter_mut().zip(&buf) {
                    *t |= s;
                }
                ancestors[v * words + p / 64] |= 1 << (p % 64);
            }
        }
        let subtree_size = (0..n)
            .map(|v| {
                1 + ancestors[v * words..(v + 1) * words]
                    .iter()
                    .map(|w| w.count_ones() as usize)
                    .sum::<usize>()
            })
            .collect();
        Ok(Self { node_count: n, parents, topo_order, depth, subtree_size })
    }

    /// Left-to-right chain: node `i` has parent `i - 1`.
    pub fn chain(n: usize) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let parents = (0..n).map(|i| if i == 0 { vec![] } else { vec![i - 1] }).collect();
        Self::from_parents(parents)
    }

    /// Uniform random recursive tree: node `i` attaches to a uniformly
    /// chosen node `< i`. Top-down keeps edges parent-to-child; bottom-up
    /// reverses every edge.
    pub fn random_tree(n: usize, direction: TreeDirection, seed: u64) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut attach = vec![0usize; n];
        for (i, a) in attach.iter_mut().enumerate().skip(1) {
            *a = rng.random_range(0..i);
        }
        let mut parents: Vec<Vec<usize>> = vec![Vec::new(); n];
        match direction {
            TreeDirection::TopDown => {
                for i in 1..n {
                    parents[i].push(attach[i]);
                }
            }
            TreeDirection::BottomUp => {
                for i in 1..n {
                    parents[attach[i]].push(i);
                }
            }
        }
        Self::from_parents(parents)
    }

    /// `spokes` root nodes all feeding one hub; the hub is node `spokes`.
    pub fn hub_and_spokes(spokes: usize) -> Result<Self, GraphError> {
        if spokes == 0 {
            return Err(GraphError::Empty);
        }
        let mut parents: Vec<Vec<usize>> = vec![Vec::new(); spokes + 1];
        parents[spokes] = (0..spokes).collect();
        Self::from_parents(parents)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn parents(&self, node: usize) -> &[usize] {
        &self.parents[node]
    }

    pub fn topo_order(&self) -> &[usize] {
        &self.topo_order
    }

    pub fn depth(&self, node: usize) -> usize {
        self.depth[node]
    }

    /// Depth of the DAG: the maximum node depth.
    pub fn dag_depth(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    pub fn subtree_size(&self, node: usize) -> usize {
        self.subtree_size[node]
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parents
            .iter()
            .enumerate()
            .flat_map(|(v, ps)| ps.iter().map(move |&p| (p, v)))
    }

    /// A maximum-length directed path, by dynamic programming over the
    /// topological order. Ties break toward the smallest node id, both for
    /// the predecessor choice and the endpoint.
    pub fn longest_path(&self) -> Vec<usize> {
        let n = self.node_count;
        let mut best_len = vec![1usize; n];
        let mut best_pred: Vec<Option<usize>> = vec![None; n];
        for &v in &self.topo_order {
            for &p in &self.parents[v] {
                let cand = best_len[p] + 1;
                let better = cand > best_len[v]
                    || (cand == best_len[v] && best_pred[v].is_some_and(|q| p < q));
                if better {
                    best_len[v] = cand;
                    best_pred[v] = Some(p);
                }
            }
        }
        let mut end = 0usize;
        for v in 0..n {
            if best_len[v] > best_len[end] {
                end = v;
            }
        }
        let mut path = vec![end];
        while let Some(p) = best_pred[*path.last().unwrap()] {
            path.push(p);
        }
        path.reverse();
        path
    }
}

/// Per-agent feature subsets over a global index set `0..d`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureAssignment {
    d: usize,
    sets: Vec<Vec<usize>>,
}

impl FeatureAssignment {
    pub fn new(d: usize, sets: Vec<Vec<usize>>) -> Result<Self, GraphError> {
        let mut sets = sets;
        for set in &mut sets {
            set.sort_unstable();
            set.dedup();
            if let Some(&bad) = set.iter().find(|&&f| f >= d) {
                return Err(GraphError::FeatureOutOfRange { index: bad, d });
            }
        }
        Ok(Self { d, sets })
    }

    /// Each (agent, feature) pair included independently with probability `p`.
    pub fn random(dag: &Dag, d: usize, p: f64, seed: u64) -> Result<Self, GraphError> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(GraphError::ProbabilityOutOfRange(p));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sets = (0..dag.node_count())
            .map(|_| (0..d).filter(|_| rng.random::<f64>() < p).collect())
            .collect();
        Ok(Self { d, sets })
    }

    /// Agent `j` sees the single feature `j mod k`; `d = k`.
    pub fn cyclic(path_length: usize, k: usize) -> Self {
        let sets = (0..path_length).map(|j| vec![j % k]).collect();
        Self { d: k, sets }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn agent_count(&self) -> usize {
        self.sets.len()
    }

    pub fn set(&self, agent: usize) -> &[usize] {
        &self.sets[agent]
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }
}

/// Result of auditing contiguous windows of a path for full feature
/// coverage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageReport {
    pub covered: bool,
    /// Start offset (into the path) of the first window missing a feature.
    pub first_failing_window: Option<usize>,
    /// Features missed by that window.
    pub missing_features: Vec<usize>,
}

/// Checks that every contiguous window of `window` agents along `path`
/// jointly sees all `d` features.
pub fn coverage_window_check(
    assignment: &FeatureAssignment,
    path: &[usize],
    window: usize,
) -> Result<CoverageReport, GraphError> {
    if window == 0 {
        return Err(GraphError::EmptyWindow);
    }
    if window > path.len() {
        return Err(GraphError::WindowTooLong { window, path_len: path.len() });
    }
    let d = assignment.d();
    let mut counts = vec![0usize; d];
    let mut missing = d;
    let add = |counts: &mut Vec<usize>, missing: &mut usize, agent: usize, sign: i64| {
        for &f in assignment.set(agent) {
            if sign > 0 {
                if counts[f] == 0 {
                    *missing -= 1;
                }
                counts[f] += 1;
            } else {
                counts[f] -= 1;
                if counts[f] == 0 {
                    *missing += 1;
                }
            }
        }
    };
    for i in 0..window {
        add(&mut counts, &mut missing, path[i], 1);
    }
    for start in 0..=(path.len() - window) {
        if missing > 0 {
            let missing_features =
                (0..d).filter(|&f| counts[f] == 0).collect::<Vec<_>>();
            return Ok(CoverageReport {
                covered: false,
                first_failing_window: Some(start),
                missing_features,
            });
        }
        if start + window < path.len() {
            add(&mut counts, &mut missing, path[start], -1);
            add(&mut counts, &mut missing, path[start + window], 1);
        }
    }
    Ok(CoverageReport { covered: true, first_failing_window: None, missing_features: vec![] })
}

/// Smallest window length `M <= n_path` for which every contiguous
/// length-`M` window of a path covers all `d` features with failure
/// probability at most `delta`, under independent per-feature inclusion
/// with probability `p`. Solves the union bound
/// `(n_path - M + 1) * d * (1-p)^M <= delta`, taken over every contiguous
/// window so the guarantee matches what [`coverage_window_check`] audits.
/// Returns `None` when no such length fits on the path.
pub fn coverage_window_length(n_path: usize, d: usize, p: f64, delta: f64) -> Option<usize> {
    if !(p > 0.0 && p < 1.0) || !(delta > 0.0 && delta < 1.0) {
        return if p >= 1.0 { Some(1) } else { None };
    }
    let denom = -(1.0 - p).ln();
    (1..=n_path).find(|&m| {
        let windows = (n_path - m + 1) as f64;
        m as f64 >= ((windows * d as f64).ln() + (1.0 / delta).ln()) / denom
    })
}

/// Reproducibility document for a generated topology and assignment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyManifest {
    pub generator: String,
    pub seed: Option<u64>,
    pub dag: Dag,
    pub assignment: Option<FeatureAssignment>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn chain_shapes() {
        let d1 = Dag::chain(1).unwrap();
        assert_eq!(d1.node_count(), 1);
        assert_eq!(d1.depth(0), 1);

        let d3 = Dag::chain(3).unwrap();
        assert_eq!((0..3).map(|v| d3.depth(v)).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(d3.topo_order(), &[0, 1, 2]);

        let d50 = Dag::chain(50).unwrap();
        assert_eq!(d50.dag_depth(), 50);
    }

    #[test]
    fn random_tree_structure() {
        let t = Dag::random_tree(1, TreeDirection::TopDown, 7).unwrap();
        assert_eq!(t.node_count(), 1);
        let t = Dag::random_tree(2, TreeDirection::TopDown, 7).unwrap();
        assert_eq!(t.parents(1), &[0]);

        for seed in 0..20 {
            let td = Dag::random_tree(50, TreeDirection::TopDown, seed).unwrap();
            let rootless = (0..50).filter(|&v| td.parents(v).is_empty()).count();
            assert_eq!(rootless, 1, "top-down tree has exactly one root");

            let bu = Dag::random_tree(50, TreeDirection::BottomUp, seed).unwrap();
            // leaves of the underlying tree = nodes that nothing attaches to
            let mut has_child = [false; 50];
            for v in 0..50 {
                for &p in td.parents(v) {
                    has_child[p] = true;
                }
            }
            let leaves = (0..50).filter(|&v| !has_child[v]).count();
            let dag_roots = (0..50).filter(|&v| bu.parents(v).is_empty()).count();
            assert_eq!(dag_roots, leaves);
        }
    }

    #[test]
    fn bottom_up_tree_root_aggregates_everything() {
        let bu = Dag::random_tree(50, TreeDirection::BottomUp, 3).unwrap();
        assert_eq!(bu.subtree_size(0), 50);
    }

    #[test]
    fn hub_and_spokes_shape() {
        let h1 = Dag::hub_and_spokes(1).unwrap();
        assert_eq!(h1.node_count(), 2);
        assert_eq!(h1.dag_depth(), 2);

        let h3 = Dag::hub_and_spokes(3).unwrap();
        assert_eq!(h3.depth(3), 2);
        assert_eq!(h3.parents(3).len(), 3);
        for k in 1..10 {
            assert_eq!(Dag::hub_and_spokes(k).unwrap().dag_depth(), 2);
        }
    }

    #[test]
    fn longest_path_cases() {
        assert_eq!(Dag::chain(5).unwrap().longest_path(), vec![0, 1, 2, 3, 4]);
        assert_eq!(Dag::chain(1).unwrap().longest_path(), vec![0]);
        assert_eq!(Dag::hub_and_spokes(3).unwrap().longest_path(), vec![0, 3]);
    }

    #[test]
    fn cycles_rejected() {
        let err = Dag::from_parents(vec![vec![1], vec![0]]).unwrap_err();
        assert!(matches!(err, GraphError::Cyclic));
        let err = Dag::from_parents(vec![vec![0]]).unwrap_err();
        assert!(matches!(err, GraphError::SelfLoop { .. }));
    }

    #[test]
    fn cyclic_assignment_values() {
        let a = FeatureAssignment::cyclic(7, 3);
        let sets: Vec<usize> = (0..7).map(|j| a.set(j)[0]).collect();
        assert_eq!(sets, vec![0, 1, 2, 0, 1, 2, 0]);
        assert_eq!(a.d(), 3);

        let a = FeatureAssignment::cyclic(5, 1);
        assert!((0..5).all(|j| a.set(j) == [0]));

        // agent at the end of pass p sees the last feature
        let k = 4;
        let p = 3;
        let a = FeatureAssignment::cyclic(p * k, k);
        assert_eq!(a.set(p * k - 1), &[k - 1]);
    }

    #[test]
    fn random_assignment_probability_validated() {
        let dag = Dag::chain(3).unwrap();
        assert!(FeatureAssignment::random(&dag, 4, 0.0, 1).is_err());
        assert!(FeatureAssignment::random(&dag, 4, 1.2, 1).is_err());
        let full = FeatureAssignment::random(&dag, 4, 1.0, 1).unwrap();
        assert!((0..3).all(|i| full.set(i) == [0, 1, 2, 3]));
    }

    #[test]
    fn random_assignment_set_sizes_concentrate() {
        let dag = Dag::chain(50).unwrap();
        for seed in 0..100 {
            let a = FeatureAssignment::random(&dag, 11, 0.5, seed).unwrap();
            let mean =
                (0..50).map(|i| a.set(i).len() as f64).sum::<f64>() / 50.0;
            assert!((4.0..=7.0).contains(&mean), "seed {seed}: mean {mean}");
        }
    }

    #[test]
    fn random_assignment_inclusion_frequency() {
        let dag = Dag::chain(50).unwrap();
        let d = 26;
        let mut included = 0usize;
        let mut total = 0usize;
        for seed in 0..100 {
            let a = FeatureAssignment::random(&dag, d, 0.1, seed).unwrap();
            for i in 0..50 {
                included += a.set(i).len();
                total += d;
            }
        }
        let freq = included as f64 / total as f64;
        assert!((freq - 0.1).abs() < 0.02, "frequency {freq}");
    }

    #[test]
    fn coverage_of_cyclic_assignment() {
        let k = 5;
        let a = FeatureAssignment::cyclic(20, k);
        let path: Vec<usize> = (0..20).collect();
        let full = coverage_window_check(&a, &path, k).unwrap();
        assert!(full.covered);
        let short = coverage_window_check(&a, &path, k - 1).unwrap();
        assert!(!short.covered);
        assert!(!short.missing_features.is_empty());
        assert_eq!(short.first_failing_window, Some(0));
    }

    #[test]
    fn coverage_window_errors() {
        let a = FeatureAssignment::cyclic(4, 2);
        let path: Vec<usize> = (0..4).collect();
        assert!(coverage_window_check(&a, &path, 5).is_err());
        assert!(coverage_window_check(&a, &path, 0).is_err());
    }

    #[test]
    fn proposition_window_covers_most_seeds() {
        let dag = Dag::chain(50).unwrap();
        let path: Vec<usize> = (0..50).collect();
        let m = coverage_window_length(50, 11, 0.5, 0.1).expect("window fits");
        let mut covered = 0;
        for seed in 0..200 {
            let a = FeatureAssignment::random(&dag, 11, 0.5, seed).unwrap();
            if coverage_window_check(&a, &path, m).unwrap().covered {
                covered += 1;
            }
        }
        assert!(covered >= 180, "covered {covered}/200 with window {m}");
    }

    #[test]
    fn seeded_regeneration_is_identical() {
        let dag = Dag::random_tree(40, TreeDirection::BottomUp, 99).unwrap();
        let again = Dag::random_tree(40, TreeDirection::BottomUp, 99).unwrap();
        assert_eq!(
            serde_json::to_vec(&dag).unwrap(),
            serde_json::to_vec(&again).unwrap()
        );
        let a = FeatureAssignment::random(&dag, 9, 0.3, 5).unwrap();
        let b = FeatureAssignment::random(&dag, 9, 0.3, 5).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    }

    /// Longest path into `v` by memoized DFS over parents.
    fn depth_by_dfs(dag: &Dag, v: usize, memo: &mut [Option<usize>]) -> usize {
        if let Some(d) = memo[v] {
            return d;
        }
        let d = 1 + dag
            .parents(v)
            .iter()
            .map(|&p| depth_by_dfs(dag, p, memo))
            .max()
            .unwrap_or(0);
        memo[v] = Some(d);
        d
    }

    proptest! {
        #[test]
        fn topo_order_is_valid(n in 1usize..=100, raw_seed in 0u64..1000) {
            let dag = random_dag(n, raw_seed);
            let position: Vec<usize> = {
                let mut pos = vec![0; n];
                for (idx, &v) in dag.topo_order().iter().enumerate() { pos[v] = idx; }
                pos
            };
            for (p, v) in dag.edges() {
                prop_assert!(position[p] < position[v]);
            }
        }

        #[test]
        fn depth_matches_brute_force(n in 1usize..=100, raw_seed in 0u64..1000) {
            let dag = random_dag(n, raw_seed);
            let mut memo = vec![None; n];
            for v in 0..n {
                prop_assert_eq!(dag.depth(v), depth_by_dfs(&dag, v, &mut memo));
            }
            let lp = dag.longest_path();
            prop_assert_eq!(lp.len(), dag.dag_depth());
        }
    }

    fn random_dag(n: usize, seed: u64) -> Dag {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parents: Vec<Vec<usize>> = (0..n)
            .map(|i| (0..i).filter(|_| rng.random::<f64>() < 0.15).collect())
            .collect();
        Dag::from_parents(parents).unwrap()
    }
}
