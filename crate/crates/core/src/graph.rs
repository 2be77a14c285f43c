//! Sparse directed graphs in compressed sparse row form, dense node
//! features, and the labeled dataset that bundles them with splits.
//!
//! Row `i` of a [`Graph`] lists the aggregation set of node `i`: the nodes
//! whose messages flow into `i`. Edge `k` therefore has target
//! `row_of(k)` and source `col_indices[k]`, and the per-edge target ids are
//! sorted non-decreasing, which is exactly the segment layout the attention
//! softmax expects.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    has_self_loops: bool,
}

impl Graph {
    /// Builds a graph from raw CSR arrays, validating every invariant.
    ///
    /// Column indices within a row are sorted; duplicate entries are kept
    /// as given.
    pub fn from_csr(
        num_nodes: usize,
        row_offsets: Vec<usize>,
        mut col_indices: Vec<usize>,
    ) -> Result<Self> {
        if row_offsets.len() != num_nodes + 1 {
            return Err(Error::InvalidGraph(format!(
                "row_offsets has length {}, expected {}",
                row_offsets.len(),
                num_nodes + 1
            )));
        }
        if row_offsets[0] != 0 {
            return Err(Error::InvalidGraph("row_offsets[0] must be 0".into()));
        }
        if row_offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidGraph("row_offsets must be non-decreasing".into()));
        }
        if row_offsets[num_nodes] != col_indices.len() {
            return Err(Error::InvalidGraph(format!(
                "row_offsets[n]={} but {} column indices",
                row_offsets[num_nodes],
                col_indices.len()
            )));
        }
        if let Some(&bad) = col_indices.iter().find(|&&c| c >= num_nodes) {
            return Err(Error::InvalidGraph(format!(
                "column index {bad} out of range for {num_nodes} nodes"
            )));
        }
        for i in 0..num_nodes {
            col_indices[row_offsets[i]..row_offsets[i + 1]].sort_unstable();
        }
        let has_self_loops = detect_self_loops(num_nodes, &row_offsets, &col_indices);
        Ok(Self {
            num_nodes,
            row_offsets,
            col_indices,
            has_self_loops,
        })
    }

    /// Builds a graph from `(target, source)` pairs. Duplicate pairs are
    /// merged. With `symmetrize`, every pair is inserted in both directions.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)], symmetrize: bool) -> Result<Self> {
        let mut pairs = Vec::with_capacity(edges.len() * if symmetrize { 2 } else { 1 });
        for &(dst, src) in edges {
            if dst >= num_nodes || src >= num_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge ({dst}, {src}) out of range for {num_nodes} nodes"
                )));
            }
            pairs.push((dst, src));
            if symmetrize && dst != src {
                pairs.push((src, dst));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();

        let mut row_offsets = vec![0usize; num_nodes + 1];
        for &(dst, _) in &pairs {
            row_offsets[dst + 1] += 1;
        }
        for i in 0..num_nodes {
            row_offsets[i + 1] += row_offsets[i];
        }
        let col_indices = pairs.into_iter().map(|(_, src)| src).collect();
        Self::from_csr(num_nodes, row_offsets, col_indices)
    }

    /// A graph with `num_nodes` nodes and no edges.
    pub fn empty(num_nodes: usize) -> Self {
        Self {
            num_nodes,
            row_offsets: vec![0; num_nodes + 1],
            col_indices: Vec::new(),
            has_self_loops: num_nodes == 0,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.col_indices.len()
    }

    pub fn has_self_loops(&self) -> bool {
        self.has_self_loops
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    /// Aggregation set of node `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    /// Target node of every edge, in edge order. Non-decreasing.
    pub fn edge_targets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.num_edges());
        for i in 0..self.num_nodes {
            out.extend(std::iter::repeat_n(i, self.degree(i)));
        }
        out
    }

    /// Iterates `(target, source)` over all directed edges.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes).flat_map(move |i| self.neighbors(i).iter().map(move |&j| (i, j)))
    }

    /// Returns a copy in which every node carries exactly one self-edge.
    /// Idempotent; all other edges are preserved.
    pub fn add_self_loops(&self) -> Graph {
        let mut row_offsets = Vec::with_capacity(self.num_nodes + 1);
        let mut col_indices = Vec::with_capacity(self.num_edges() + self.num_nodes);
        row_offsets.push(0);
        for i in 0..self.num_nodes {
            let mut seen_self = false;
            for &j in self.neighbors(i) {
                if j == i {
                    if seen_self {
                        continue;
                    }
                    seen_self = true;
                }
                col_indices.push(j);
            }
            if !seen_self {
                col_indices.push(i);
            }
            let start = *row_offsets.last().unwrap();
            col_indices[start..].sort_unstable();
            row_offsets.push(col_indices.len());
        }
        Graph {
            num_nodes: self.num_nodes,
            row_offsets,
            col_indices,
            has_self_loops: true,
        }
    }

    /// Returns a copy with every self-edge removed.
    pub fn remove_self_loops(&self) -> Graph {
        let mut row_offsets = Vec::with_capacity(self.num_nodes + 1);
        let mut col_indices = Vec::with_capacity(self.num_edges());
        row_offsets.push(0);
        for i in 0..self.num_nodes {
            col_indices.extend(self.neighbors(i).iter().copied().filter(|&j| j != i));
            row_offsets.push(col_indices.len());
        }
        Graph {
            num_nodes: self.num_nodes,
            row_offsets,
            col_indices,
            has_self_loops: self.num_nodes == 0,
        }
    }
}

fn detect_self_loops(num_nodes: usize, row_offsets: &[usize], col_indices: &[usize]) -> bool {
    (0..num_nodes).all(|i| {
        col_indices[row_offsets[i]..row_offsets[i + 1]]
            .iter()
            .filter(|&&j| j == i)
            .count()
            == 1
    })
}

/// Dense row-major node feature matrix with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "FeatureMatrix::new",
                detail: format!("{} values for a {rows}x{cols} matrix", values.len()),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "feature entry ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    /// Scales every row to unit ℓ1 norm; all-zero rows stay zero.
    pub fn row_normalized(&self) -> FeatureMatrix {
        let mut values = self.values.clone();
        for row in values.chunks_mut(self.cols.max(1)) {
            let s: f64 = row.iter().map(|v| v.abs()).sum();
            if s > 0.0 {
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
        FeatureMatrix {
            rows: self.rows,
            cols: self.cols,
            values,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
    None,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::None => "none",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "none" => Ok(Split::None),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}

/// A graph with features, class labels and disjoint train/val/test masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub graph: Graph,
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub train_mask: Vec<bool>,
    pub val_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
}

impl LabeledDataset {
    /// Assembles a dataset from a per-node split assignment and validates it.
    pub fn new(
        graph: Graph,
        features: FeatureMatrix,
        labels: Vec<usize>,
        num_classes: usize,
        splits: &[Split],
    ) -> Result<Self> {
        let ds = Self {
            train_mask: splits.iter().map(|&s| s == Split::Train).collect(),
            val_mask: splits.iter().map(|&s| s == Split::Val).collect(),
            test_mask: splits.iter().map(|&s| s == Split::Test).collect(),
            graph,
            features,
            labels,
            num_classes,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn split_of(&self, i: usize) -> Split {
        if self.train_mask[i] {
            Split::Train
        } else if self.val_mask[i] {
            Split::Val
        } else if self.test_mask[i] {
            Split::Test
        } else {
            Split::None
        }
    }

    /// Labels in the ±1 coding used by the two-class theory (class 0 is −1).
    pub fn signed_labels(&self) -> Vec<f64> {
        self.labels
            .iter()
            .map(|&c| if c == 0 { -1.0 } else { 1.0 })
            .collect()
    }

    /// Reassigns splits by a seeded shuffle: the first `train_fraction` of
    /// nodes (at least one) train, the next `val_fraction` validate, the
    /// rest test.
    pub fn with_random_split(&self, train_fraction: f64, val_fraction: f64, seed: u64) -> Result<Self> {
        use rand::seq::SliceRandom;
        if !(train_fraction > 0.0 && val_fraction >= 0.0 && train_fraction + val_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "need train_fraction > 0, val_fraction >= 0, sum <= 1; got {train_fraction}, {val_fraction}"
            )));
        }
        let n = self.num_nodes();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut crate::rng::stream_rng(seed, 0));
        let n_train = ((n as f64 * train_fraction).round() as usize).max(1);
        let n_val = (n as f64 * val_fraction).round() as usize;
        let mut splits = vec![Split::Test; n];
        for (k, &i) in order.iter().enumerate() {
            if k < n_train {
                splits[i] = Split::Train;
            } else if k < n_train + n_val {
                splits[i] = Split::Val;
            }
        }
        Self::new(self.graph.clone(), self.features.clone(), self.labels.clone(), self.num_classes, &splits)
    }

    pub fn with_features(&self, features: FeatureMatrix) -> Result<Self> {
        let mut out = self.clone();
        out.features = features;
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.graph.num_nodes();
        if self.features.rows() != n {
            return Err(Error::InconsistentCounts(format!(
                "{} feature rows for {n} nodes",
                self.features.rows()
            )));
        }
        for (name, len) in [
            ("labels", self.labels.len()),
            ("train_mask", self.train_mask.len()),
            ("val_mask", self.val_mask.len()),
            ("test_mask", self.test_mask.len()),
        ] {
            if len != n {
                return Err(Error::InconsistentCounts(format!("{name} has {len} entries for {n} nodes")));
            }
        }
        for i in 0..n {
            let memberships = [self.train_mask[i], self.val_mask[i], self.test_mask[i]]
                .iter()
                .filter(|&&b| b)
                .count();
            if memberships > 1 {
                return Err(Error::InvalidParameter(format!("node {i} belongs to more than one split")));
            }
            if memberships == 1 && self.labels[i] >= self.num_classes {
                return Err(Error::LabelOutOfRange {
                    node: i,
                    label: self.labels[i],
                    num_classes: self.num_classes,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> Graph {
        Graph::from_edges(3, &[(0, 1), (1, 2), (2, 0)], true).unwrap()
    }

    fn assert_csr_invariants(g: &Graph) {
        let offs = g.row_offsets();
        assert_eq!(offs[0], 0);
        assert_eq!(offs[g.num_nodes()], g.num_edges());
        assert!(offs.windows(2).all(|w| w[0] <= w[1]));
        assert!(g.col_indices().iter().all(|&c| c < g.num_nodes()));
        if g.has_self_loops() {
            for i in 0..g.num_nodes() {
                assert_eq!(g.neighbors(i).iter().filter(|&&j| j == i).count(), 1);
            }
        }
    }

    #[test]
    fn triangle_is_symmetrized() {
        let g = triangle();
        assert_eq!(g.num_edges(), 6);
        assert_eq!(g.neighbors(0), &[1, 2]);
        assert!(!g.has_self_loops());
        assert_csr_invariants(&g);
    }

    #[test]
    fn self_loops_on_empty_graph() {
        let g = Graph::empty(4).add_self_loops();
        assert_eq!(g.num_edges(), 4);
        assert!(g.has_self_loops());
        for i in 0..4 {
            assert_eq!(g.neighbors(i), &[i]);
        }
        assert_csr_invariants(&g);
    }

    #[test]
    fn self_loops_on_triangle_and_idempotence() {
        let g = triangle().add_self_loops();
        assert_eq!(g.num_edges(), 9);
        assert_csr_invariants(&g);
        let again = g.add_self_loops();
        assert_eq!(again, g);
    }

    #[test]
    fn duplicate_self_loops_collapse() {
        let g = Graph::from_csr(2, vec![0, 3, 3], vec![0, 0, 1]).unwrap();
        assert!(!g.has_self_loops());
        let h = g.add_self_loops();
        assert_eq!(h.neighbors(0), &[0, 1]);
        assert_eq!(h.neighbors(1), &[1]);
        assert!(h.has_self_loops());
    }

    #[test]
    fn remove_self_loops_round_trip() {
        let g = triangle();
        assert_eq!(g.add_self_loops().remove_self_loops(), g);
    }

    #[test]
    fn csr_validation_errors() {
        assert!(Graph::from_csr(2, vec![0, 1], vec![0]).is_err());
        assert!(Graph::from_csr(2, vec![1, 1, 1], vec![0]).is_err());
        assert!(Graph::from_csr(2, vec![0, 2, 1], vec![0]).is_err());
        assert!(Graph::from_csr(2, vec![0, 1, 1], vec![5]).is_err());
    }

    #[test]
    fn edge_targets_are_sorted_segments() {
        let g = triangle().add_self_loops();
        let t = g.edge_targets();
        assert_eq!(t, vec![0, 0, 0, 1, 1, 1, 2, 2, 2]);
    }

    #[test]
    fn dataset_rejects_overlapping_or_bad_labels() {
        let g = triangle();
        let f = FeatureMatrix::zeros(3, 1);
        let splits = [Split::Train, Split::Val, Split::Test];
        let ds = LabeledDataset::new(g.clone(), f.clone(), vec![0, 1, 1], 2, &splits).unwrap();
        assert_eq!(ds.split_of(1), Split::Val);
        assert!(matches!(
            LabeledDataset::new(g.clone(), f.clone(), vec![0, 2, 1], 2, &splits),
            Err(Error::LabelOutOfRange { node: 1, .. })
        ));
        let mut bad = ds.clone();
        bad.val_mask[0] = true;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn feature_matrix_rejects_non_finite() {
        assert!(FeatureMatrix::new(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(FeatureMatrix::new(1, 2, vec![0.0]).is_err());
    }

    #[test]
    fn row_normalization() {
        let f = FeatureMatrix::new(2, 3, vec![1.0, 0.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
        let g = f.row_normalized();
        assert_eq!(g.row(0), &[0.25, 0.0, 0.75]);
        assert_eq!(g.row(1), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn random_split_sizes() {
        let g = Graph::empty(10);
        let ds = LabeledDataset::new(g, FeatureMatrix::zeros(10, 1), vec![0; 10], 1, &[Split::None; 10]).unwrap();
        let s = ds.with_random_split(0.6, 0.2, 3).unwrap();
        let count = |m: &[bool]| m.iter().filter(|&&b| b).count();
        assert_eq!((count(&s.train_mask), count(&s.val_mask), count(&s.test_mask)), (6, 2, 2));
        assert_eq!(s, ds.with_random_split(0.6, 0.2, 3).unwrap());
        assert!(ds.with_random_split(0.9, 0.2, 3).is_err());
    }
}
