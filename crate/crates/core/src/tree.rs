//! Binary CART classifier over concatenated group feature vectors.
//!
//! Trees are grown best-first (largest Gini gain expands next) so a
//! `max_leaves` budget spends itself on the most useful splits, with exact
//! threshold search over every feature. Growth, prediction and
//! serialization are fully deterministic: split ties resolve to the lowest
//! feature index, then the lowest threshold.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{NormalizationConfig, FEATURE_COUNT};

/// Flat training set: `n` rows of `n_features` columns with integer class
/// labels in `[0, n_classes)` and per-row weights.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub y: Vec<usize>,
    pub w: Vec<f64>,
    pub n_features: usize,
    pub n_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_features == 0 || self.n_classes < 2 {
            return Err(Error::Fit(
                "dataset needs >= 1 feature and >= 2 classes".into(),
            ));
        }
        if self.x.len() != self.y.len() * self.n_features || self.w.len() != self.y.len() {
            return Err(Error::Fit("dataset dimension mismatch".into()));
        }
        if self.y.iter().any(|&c| c >= self.n_classes) {
            return Err(Error::Fit("label out of range".into()));
        }
        if self.w.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::Fit("weights must be positive and finite".into()));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Fit("non-finite feature value".into()));
        }
        Ok(())
    }
}

/// Growth limits. `max_depth` counts edges from the root; a single leaf is
/// depth 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CartParams {
    pub max_depth: usize,
    pub max_leaves: usize,
    pub min_leaf: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split {
        feat: usize,
        thr: f64,
        lo: usize,
        hi: usize,
    },
    Leaf {
        leaf: usize,
        counts: Vec<f64>,
    },
}

/// Model metadata: group size, growth budget and the normalization the
/// training features were expressed in, so inference always matches it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeMeta {
    pub g: usize,
    pub max_depth: usize,
    pub max_leaves: usize,
    pub min_leaf: usize,
    pub seed: u64,
    pub normalization: NormalizationConfig,
    pub trace_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTreeModel {
    pub meta: TreeMeta,
    pub nodes: Vec<TreeNode>,
}

/// Printable name of a concatenated feature column: slot index plus F1..F10.
pub fn feature_name(index: usize) -> String {
    format!("s{}.f{}", index / FEATURE_COUNT, index % FEATURE_COUNT + 1)
}

impl DecisionTreeModel {
    pub fn feature_count(&self) -> usize {
        self.meta.g * FEATURE_COUNT
    }

    /// Predicted winner slot for a concatenated group vector.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        self.predict_leaf(x).map(|(slot, _)| slot)
    }

    /// Predicted slot plus the index of the leaf node reached.
    pub fn predict_leaf(&self, x: &[f64]) -> Result<(usize, usize)> {
        if x.len() != self.feature_count() {
            return Err(Error::validation(format!(
                "feature dimension mismatch: model expects {}, got {}",
                self.feature_count(),
                x.len()
            )));
        }
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                TreeNode::Split { feat, thr, lo, hi } => {
                    idx = if x[*feat] <= *thr { *lo } else { *hi };
                }
                TreeNode::Leaf { leaf, .. } => return Ok((*leaf, idx)),
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }

    /// Node indices of all leaves, ascending. A leaf's rank in this list is
    /// its path id in reports.
    pub fn leaves(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| matches!(n, TreeNode::Leaf { .. }).then_some(i))
            .collect()
    }

    /// Max edges from root to any leaf.
    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], idx: usize) -> usize {
            match &nodes[idx] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { lo, hi, .. } => 1 + go(nodes, *lo).max(go(nodes, *hi)),
            }
        }
        go(&self.nodes, 0)
    }

    /// The conjunction of predicates leading to a leaf,
    /// e.g. `s0.f7<=0.35 & s1.f7>0.35`. The root-as-leaf chain is `always`.
    pub fn predicate_chain(&self, leaf_node: usize) -> Result<String> {
        // parent links; children always follow parents in the array
        let mut parent: Vec<Option<(usize, bool)>> = vec![None; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            if let TreeNode::Split { lo, hi, .. } = n {
                parent[*lo] = Some((i, false));
                parent[*hi] = Some((i, true));
            }
        }
        if leaf_node >= self.nodes.len() {
            return Err(Error::validation(format!("no node {leaf_node}")));
        }
        let mut steps = Vec::new();
        let mut cur = leaf_node;
        while let Some((p, went_hi)) = parent[cur] {
            if let TreeNode::Split { feat, thr, .. } = &self.nodes[p] {
                let op = if went_hi { ">" } else { "<=" };
                steps.push(format!("{}{}{}", feature_name(*feat), op, thr));
            }
            cur = p;
        }
        if steps.is_empty() {
            return Ok("always".to_string());
        }
        steps.reverse();
        Ok(steps.join(" & "))
    }

    /// Structural checks: a well-formed tree within its declared budgets.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::validation("empty tree"));
        }
        if self.meta.g < 2 {
            return Err(Error::validation("group size must be >= 2"));
        }
        let mut referenced = vec![false; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            match n {
                TreeNode::Split { feat, thr, lo, hi } => {
                    if *feat >= self.feature_count() {
                        return Err(Error::validation(format!(
                            "node {i}: feature {feat} out of range"
                        )));
                    }
                    if !thr.is_finite() {
                        return Err(Error::validation(format!("node {i}: non-finite threshold")));
                    }
                    for &c in [lo, hi] {
                        if c <= i || c >= self.nodes.len() {
                            return Err(Error::validation(format!(
                                "node {i}: child {c} out of order"
                            )));
                        }
                        if referenced[c] {
                            return Err(Error::validation(format!(
                                "node {c} referenced twice"
                            )));
                        }
                        referenced[c] = true;
                    }
                }
                TreeNode::Leaf { leaf, counts } => {
                    if *leaf >= self.meta.g {
                        return Err(Error::validation(format!(
                            "node {i}: slot {leaf} out of range"
                        )));
                    }
                    if counts.len() != self.meta.g {
                        return Err(Error::validation(format!(
                            "node {i}: expected {} class counts",
                            self.meta.g
                        )));
                    }
                }
            }
        }
        for (i, r) in referenced.iter().enumerate().skip(1) {
            if !r {
                return Err(Error::validation(format!("node {i} unreachable")));
            }
        }
        if self.depth() > self.meta.max_depth {
            return Err(Error::validation(format!(
                "depth {} exceeds budget {}",
                self.depth(),
                self.meta.max_depth
            )));
        }
        if self.leaf_count() > self.meta.max_leaves {
            return Err(Error::validation(format!(
                "{} leaves exceed budget {}",
                self.leaf_count(),
                self.meta.max_leaves
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let model: DecisionTreeModel = serde_json::from_reader(BufReader::new(file))?;
        model.validate()?;
        Ok(model)
    }
}

// ---------------------------------------------------------------------------
// Growth
// ---------------------------------------------------------------------------

struct SplitChoice {
    gain: f64,
    feat: usize,
    thr: f64,
}

/// Heap entry: largest gain first, insertion order as the tie-break.
struct Expand {
    gain: f64,
    seq: u64,
    node: usize,
    feat: usize,
    thr: f64,
}

impl PartialEq for Expand {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}
impl Eq for Expand {}
impl PartialOrd for Expand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Expand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .total_cmp(&other.gain)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

fn gini(class_w: &[f64], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    let mut acc = 1.0;
    for &w in class_w {
        let p = w / total;
        acc -= p * p;
    }
    acc
}

fn leaf_from(data: &Dataset, rows: &[u32]) -> TreeNode {
    let mut counts = vec![0.0; data.n_classes];
    for &r in rows {
        counts[data.y[r as usize]] += data.w[r as usize];
    }
    let mut best = 0;
    for (c, &w) in counts.iter().enumerate() {
        if w > counts[best] {
            best = c;
        }
    }
    TreeNode::Leaf { leaf: best, counts }
}

fn best_split(data: &Dataset, rows: &[u32], min_leaf: usize) -> Option<SplitChoice> {
    let n = rows.len();
    if n < 2 * min_leaf.max(1) {
        return None;
    }
    let mut class_w = vec![0.0; data.n_classes];
    let mut total = 0.0;
    for &r in rows {
        class_w[data.y[r as usize]] += data.w[r as usize];
        total += data.w[r as usize];
    }
    let parent = gini(&class_w, total);
    if parent <= 0.0 {
        return None;
    }

    let mut best: Option<SplitChoice> = None;
    let mut col: Vec<(f64, usize, f64)> = Vec::with_capacity(n);
    let mut left = vec![0.0; data.n_classes];
    for feat in 0..data.n_features {
        col.clear();
        for &r in rows {
            let r = r as usize;
            col.push((data.x[r * data.n_features + feat], data.y[r], data.w[r]));
        }
        col.sort_by(|a, b| a.0.total_cmp(&b.0));
        if col[0].0 == col[n - 1].0 {
            continue; // constant feature
        }
        left.iter_mut().for_each(|v| *v = 0.0);
        let mut left_w = 0.0;
        for i in 0..n - 1 {
            left[col[i].1] += col[i].2;
            left_w += col[i].2;
            if col[i + 1].0 <= col[i].0 {
                continue; // not a value boundary
            }
            let left_n = i + 1;
            let right_n = n - left_n;
            if left_n < min_leaf || right_n < min_leaf {
                continue;
            }
            let right_w = total - left_w;
            let mut right = class_w.clone();
            for (rv, lv) in right.iter_mut().zip(left.iter()) {
                *rv -= lv;
            }
            let child =
                (left_w * gini(&left, left_w) + right_w * gini(&right, right_w)) / total;
            let gain = parent - child;
            if gain > 1e-12 && best.as_ref().map(|b| gain > b.gain).unwrap_or(true) {
                best = Some(SplitChoice {
                    gain,
                    feat,
                    thr: 0.5 * (col[i].0 + col[i + 1].0),
                });
            }
        }
    }
    best
}

/// Grow a CART on the dataset under the given budgets. Best-first: the
/// frontier leaf with the largest impurity decrease splits next until the
/// leaf budget, depth budget or purity stops growth.
pub fn grow(data: &Dataset, params: &CartParams) -> Result<Vec<TreeNode>> {
    data.validate()?;
    if data.is_empty() {
        return Err(Error::Fit("cannot fit a tree on zero samples".into()));
    }
    if params.max_leaves == 0 {
        return Err(Error::Fit("max_leaves must be >= 1".into()));
    }

    let mut nodes: Vec<TreeNode> = Vec::new();
    let mut rows_of: Vec<Option<Vec<u32>>> = Vec::new();
    let mut depth_of: Vec<usize> = Vec::new();
    let mut heap: BinaryHeap<Expand> = BinaryHeap::new();
    let mut seq = 0u64;

    let all_rows: Vec<u32> = (0..data.len() as u32).collect();
    nodes.push(leaf_from(data, &all_rows));
    depth_of.push(0);
    if params.max_depth > 0 && params.max_leaves > 1 {
        if let Some(s) = best_split(data, &all_rows, params.min_leaf) {
            heap.push(Expand {
                gain: s.gain,
                seq,
                node: 0,
                feat: s.feat,
                thr: s.thr,
            });
            seq += 1;
        }
    }
    rows_of.push(Some(all_rows));

    let mut leaves = 1usize;
    while leaves < params.max_leaves {
        let Some(e) = heap.pop() else { break };
        let rows = rows_of[e.node].take().expect("pending rows");
        let (lo_rows, hi_rows): (Vec<u32>, Vec<u32>) = rows
            .iter()
            .partition(|&&r| data.x[r as usize * data.n_features + e.feat] <= e.thr);
        debug_assert!(!lo_rows.is_empty() && !hi_rows.is_empty());

        let child_depth = depth_of[e.node] + 1;
        let lo_idx = nodes.len();
        let hi_idx = nodes.len() + 1;
        nodes.push(leaf_from(data, &lo_rows));
        nodes.push(leaf_from(data, &hi_rows));
        depth_of.push(child_depth);
        depth_of.push(child_depth);
        nodes[e.node] = TreeNode::Split {
            feat: e.feat,
            thr: e.thr,
            lo: lo_idx,
            hi: hi_idx,
        };
        leaves += 1;

        for (idx, child_rows) in [(lo_idx, lo_rows), (hi_idx, hi_rows)] {
            if child_depth < params.max_depth {
                if let Some(s) = best_split(data, &child_rows, params.min_leaf) {
                    heap.push(Expand {
                        gain: s.gain,
                        seq,
                        node: idx,
                        feat: s.feat,
                        thr: s.thr,
                    });
                    seq += 1;
                    rows_of.push(Some(child_rows));
                    continue;
                }
            }
            rows_of.push(None);
        }
    }
    Ok(nodes)
}

/// Fraction of rows the tree labels correctly, weighted by sample weight.
pub fn accuracy(model: &DecisionTreeModel, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::validation("empty dataset"));
    }
    let mut hit = 0.0;
    let mut total = 0.0;
    for i in 0..data.len() {
        let pred = model.predict(data.row(i))?;
        if pred == data.y[i] {
            hit += data.w[i];
        }
        total += data.w[i];
    }
    Ok(hit / total)
}
