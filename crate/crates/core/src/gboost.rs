//! Gradient-boosted decision trees with logistic loss.
//!
//! Trees are grown level by level with exact greedy split search on
//! second-order gradients. A sample goes left when `x < threshold`.
//! Thresholds are midpoints between consecutive distinct feature values,
//! rounded to the nearest `f32` that still separates the pair, so the stored
//! model reproduces training-time partitions exactly.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Logits are clamped to this magnitude so probabilities never reach 0 or 1.
pub const MARGIN_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoostParams {
    pub max_depth: usize,
    pub n_trees: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub min_child_weight: f64,
}

impl BoostParams {
    pub fn with_depth(max_depth: usize) -> Self {
        Self {
            max_depth,
            ..Self::default()
        }
    }
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            max_depth: 1,
            n_trees: 100,
            learning_rate: 0.3,
            lambda: 1.0,
            min_child_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeNode {
    Split {
        feature: u32,
        threshold: f32,
        left: u32,
        right: u32,
    },
    Leaf {
        value: f32,
    },
}

/// Flat tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub(crate) nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn eval(&self, x: &[f64]) -> f32 {
        let mut idx = 0;
        loop {
            match self.nodes[idx] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if x[feature as usize] < threshold as f64 {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }

    pub fn n_splits(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Split { .. }))
            .count()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.len() - self.n_splits()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + walk(nodes, left as usize).max(walk(nodes, right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Binary classifier: `sigmoid(base_score + learning_rate * sum(tree outputs))`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostedClassifier {
    pub(crate) n_features: usize,
    pub(crate) max_depth: usize,
    pub(crate) base_score: f32,
    pub(crate) learning_rate: f32,
    pub(crate) trees: Vec<Tree>,
}

/// Parameter counts: two per split node, one per leaf.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    /// Counted over the trees as grown.
    pub actual: usize,
    /// Every tree counted as a full binary tree of `max_depth`.
    pub full_shape: usize,
}

/// Parameters of a full binary tree of the given depth.
pub fn full_tree_parameters(depth: usize) -> usize {
    let leaves = 1usize << depth;
    2 * (leaves - 1) + leaves
}

impl BoostedClassifier {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn base_score(&self) -> f32 {
        self.base_score
    }

    pub fn learning_rate(&self) -> f32 {
        self.learning_rate
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Copy keeping only the first `n` trees.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            trees: self.trees[..n.min(self.trees.len())].to_vec(),
            ..self.clone()
        }
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        let lr = self.learning_rate as f64;
        let sum: f64 = self.trees.iter().map(|t| t.eval(x) as f64).sum();
        self.base_score as f64 + lr * sum
    }

    pub fn predict_one(&self, x: &[f64]) -> f64 {
        sigmoid(self.margin(x))
    }

    /// Probabilities for row-major samples of width `n_features`.
    pub fn predict_proba(&self, features: &[f64]) -> Result<Vec<f64>> {
        let d = self.n_features;
        if d == 0 || !features.len().is_multiple_of(d) {
            return Err(Error::Dimension(format!(
                "{} values are not rows of width {d}",
                features.len()
            )));
        }
        Ok(features.chunks_exact(d).map(|x| self.predict_one(x)).collect())
    }

    pub fn count_parameters(&self) -> ParamCount {
        let actual = self
            .trees
            .iter()
            .map(|t| 2 * t.n_splits() + t.n_leaves())
            .sum();
        ParamCount {
            actual,
            full_shape: self.trees.len() * full_tree_parameters(self.max_depth),
        }
    }
}

pub fn sigmoid(margin: f64) -> f64 {
    let m = margin.clamp(-MARGIN_CLAMP, MARGIN_CLAMP);
    1.0 / (1.0 + (-m).exp())
}

/// Mean negative log-likelihood.
pub fn log_loss(probs: &[f64], labels: &[bool]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| if y { -p.ln() } else { -(1.0 - p).ln() })
        .sum();
    total / probs.len() as f64
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f32,
}

/// Smallest `f32` strictly above `lo` and at most `hi`, starting from the
/// rounded midpoint.
fn separating_threshold(lo: f64, hi: f64) -> Option<f32> {
    let mut t = (lo + (hi - lo) * 0.5) as f32;
    if t as f64 <= lo {
        t = t.next_up();
    }
    if (t as f64) > lo && (t as f64) <= hi && t.is_finite() {
        Some(t)
    } else {
        None
    }
}

/// Gains within this relative distance count as tied, so ties are broken by
/// position rather than by summation-order rounding.
pub const GAIN_TIE_RTOL: f64 = 1e-10;

/// Boosting stops once a tree's predicted loss reduction falls below this
/// fraction of the current total loss. Past that point each tree moves the
/// loss by less than the rounding of the margins themselves.
pub const CONVERGED_RTOL: f64 = 1e-12;

fn beats(gain: f64, current: Option<Candidate>) -> bool {
    current.is_none_or(|c| gain > c.gain + GAIN_TIE_RTOL * c.gain.abs())
}

#[inline]
fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

struct Columns {
    /// Per feature: sample indices sorted by value, ties by index.
    order: Vec<Vec<u32>>,
    /// Per feature: values aligned with `order`.
    sorted: Vec<Vec<f64>>,
}

impl Columns {
    fn new(features: &[f64], n: usize, d: usize) -> Self {
        let (order, sorted) = (0..d)
            .into_par_iter()
            .map(|f| {
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| {
                    features[a as usize * d + f]
                        .total_cmp(&features[b as usize * d + f])
                        .then(a.cmp(&b))
                });
                let vals = idx.iter().map(|&i| features[i as usize * d + f]).collect();
                (idx, vals)
            })
            .unzip();
        Self { order, sorted }
    }
}

#[derive(Clone, Copy)]
struct ScanState {
    gl: f64,
    hl: f64,
    last: f64,
    seen: bool,
}

/// Best split per active node for one feature.
fn scan_feature(
    f: usize,
    cols: &Columns,
    slot_of: &[Option<u32>],
    node_of: &[u32],
    grad: &[f64],
    hess: &[f64],
    totals: &[(f64, f64)],
    params: &BoostParams,
) -> Vec<Option<Candidate>> {
    let mut state = vec![
        ScanState {
            gl: 0.0,
            hl: 0.0,
            last: 0.0,
            seen: false,
        };
        totals.len()
    ];
    let mut best: Vec<Option<Candidate>> = vec![None; totals.len()];
    let lambda = params.lambda;
    for (&i, &v) in cols.order[f].iter().zip(&cols.sorted[f]) {
        let i = i as usize;
        let Some(slot) = slot_of[node_of[i] as usize] else {
            continue;
        };
        let slot = slot as usize;
        let s = &mut state[slot];
        if s.seen && v > s.last {
            let (g, h) = totals[slot];
            let (gr, hr) = (g - s.gl, h - s.hl);
            if s.hl >= params.min_child_weight && hr >= params.min_child_weight {
                let gain = 0.5
                    * (score(s.gl, s.hl, lambda) + score(gr, hr, lambda) - score(g, h, lambda));
                if gain > 0.0 && beats(gain, best[slot]) {
                    if let Some(threshold) = separating_threshold(s.last, v) {
                        best[slot] = Some(Candidate {
                            gain,
                            feature: f,
                            threshold,
                        });
                    }
                }
            }
        }
        s.gl += grad[i];
        s.hl += hess[i];
        s.last = v;
        s.seen = true;
    }
    best
}

/// Grows one tree on the given gradients. Returns the tree and the leaf
/// index reached by every sample.
fn grow_tree(
    features: &[f64],
    d: usize,
    cols: &Columns,
    grad: &[f64],
    hess: &[f64],
    params: &BoostParams,
) -> (Tree, Vec<u32>) {
    let n = grad.len();
    let mut nodes: Vec<TreeNode> = vec![TreeNode::Leaf { value: 0.0 }];
    let mut node_of = vec![0u32; n];
    let mut active: Vec<u32> = vec![0];
    let mut stats: Vec<(f64, f64)> = vec![(grad.iter().sum(), hess.iter().sum())];

    for _depth in 0..params.max_depth {
        if active.is_empty() {
            break;
        }
        let mut slot_of = vec![None; nodes.len()];
        for (s, &node) in active.iter().enumerate() {
            slot_of[node as usize] = Some(s as u32);
        }
        let totals: Vec<(f64, f64)> = active.iter().map(|&a| stats[a as usize]).collect();

        let per_feature: Vec<Vec<Option<Candidate>>> = (0..d)
            .into_par_iter()
            .map(|f| scan_feature(f, cols, &slot_of, &node_of, grad, hess, &totals, params))
            .collect();
        // Lowest feature index wins ties.
        let mut best: Vec<Option<Candidate>> = vec![None; active.len()];
        for feature_best in &per_feature {
            for (b, c) in best.iter_mut().zip(feature_best) {
                if let Some(c) = c {
                    if beats(c.gain, *b) {
                        *b = Some(*c);
                    }
                }
            }
        }

        let mut next_active = Vec::new();
        let mut child_of: Vec<Option<(u32, u32, usize, f32)>> = vec![None; nodes.len()];
        for (&node, cand) in active.iter().zip(&best) {
            if let Some(c) = cand {
                let left = nodes.len() as u32;
                let right = left + 1;
                nodes.push(TreeNode::Leaf { value: 0.0 });
                nodes.push(TreeNode::Leaf { value: 0.0 });
                stats.push((0.0, 0.0));
                stats.push((0.0, 0.0));
                nodes[node as usize] = TreeNode::Split {
                    feature: c.feature as u32,
                    threshold: c.threshold,
                    left,
                    right,
                };
                child_of[node as usize] = Some((left, right, c.feature, c.threshold));
                next_active.push(left);
                next_active.push(right);
            }
        }
        if next_active.is_empty() {
            break;
        }
        for i in 0..n {
            if let Some((left, right, f, t)) = child_of[node_of[i] as usize] {
                let child = if features[i * d + f] < t as f64 { left } else { right };
                node_of[i] = child;
                let s = &mut stats[child as usize];
                s.0 += grad[i];
                s.1 += hess[i];
            }
        }
        active = next_active;
    }

    for (node, &(g, h)) in nodes.iter_mut().zip(&stats) {
        if let TreeNode::Leaf { value } = node {
            *value = (-g / (h + params.lambda)) as f32;
        }
    }
    (Tree { nodes }, node_of)
}

/// Fits a boosted classifier on row-major `features` (`n x n_features`).
pub fn fit_boosted(
    features: &[f64],
    n_features: usize,
    labels: &[bool],
    params: &BoostParams,
) -> Result<BoostedClassifier> {
    let n = labels.len();
    if n_features == 0 || features.is_empty() {
        return Err(Error::InsufficientData("empty feature matrix".into()));
    }
    if features.len() != n * n_features {
        return Err(Error::Dimension(format!(
            "{} feature values for {n} labels of width {n_features}",
            features.len()
        )));
    }
    if n < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 samples, got {n}")));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 || positives == n {
        return Err(Error::SingleClass);
    }
    if !(params.lambda >= 0.0 && params.learning_rate > 0.0) {
        return Err(Error::Config("boosting needs lambda >= 0 and learning_rate > 0".into()));
    }

    let rate = positives as f64 / n as f64;
    let base_score = (rate / (1.0 - rate)).ln() as f32;
    let learning_rate = params.learning_rate as f32;
    let cols = Columns::new(features, n, n_features);

    let mut margin = vec![base_score as f64; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        for i in 0..n {
            let p = sigmoid(margin[i]);
            grad[i] = p - if labels[i] { 1.0 } else { 0.0 };
            hess[i] = p * (1.0 - p);
        }
        let (tree, leaf_of) = grow_tree(features, n_features, &cols, &grad, &hess, params);
        if predicted_reduction(&tree, &leaf_of, &grad, &hess, learning_rate as f64)
            <= CONVERGED_RTOL * total_loss(&margin, labels)
        {
            break;
        }
        for (m, &leaf) in margin.iter_mut().zip(&leaf_of) {
            if let TreeNode::Leaf { value } = tree.nodes[leaf as usize] {
                *m += learning_rate as f64 * value as f64;
            }
        }
        trees.push(tree);
    }

    Ok(BoostedClassifier {
        n_features,
        max_depth: params.max_depth,
        base_score,
        learning_rate,
        trees,
    })
}

/// Second-order estimate of how much a tree lowers the total loss.
fn predicted_reduction(tree: &Tree, leaf_of: &[u32], grad: &[f64], hess: &[f64], lr: f64) -> f64 {
    let mut sums = vec![(0.0, 0.0); tree.nodes.len()];
    for ((&leaf, g), h) in leaf_of.iter().zip(grad).zip(hess) {
        sums[leaf as usize].0 += g;
        sums[leaf as usize].1 += h;
    }
    let mut change = 0.0;
    for (node, (g, h)) in tree.nodes.iter().zip(sums) {
        if let TreeNode::Leaf { value } = *node {
            let step = lr * value as f64;
            change += step * g + 0.5 * step * step * h;
        }
    }
    -change
}

fn total_loss(margin: &[f64], labels: &[bool]) -> f64 {
    let softplus = |z: f64| z.max(0.0) + (-z.abs()).exp().ln_1p();
    margin.iter().zip(labels).map(|(&m, &y)| softplus(if y { -m } else { m })).sum()
}
