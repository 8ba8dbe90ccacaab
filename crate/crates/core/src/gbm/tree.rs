//! Regression trees and the two growth strategies.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::bins::{BinMapper, BinnedData};
use super::histogram::{best_split, Histogram, QuantizedGrads, Split, SplitParams};
use super::loss::leaf_weight;
use super::{GrowthVariant, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NodeKind {
    /// Output already multiplied by the learning rate.
    Leaf { value: f64 },
    Split {
        feature: usize,
        bin: usize,
        /// Values `<= threshold` go left.
        threshold: f64,
        default_left: bool,
        left: usize,
        right: usize,
        gain: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    /// Sum of hessians of the training rows that reached the node.
    pub cover: f64,
    pub count: u32,
    pub kind: NodeKind,
}

/// Flat node array; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Leaf { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], id: usize) -> usize {
            match nodes[id].kind {
                NodeKind::Leaf { .. } => 0,
                NodeKind::Split { left, right, .. } => {
                    1 + walk(nodes, left).max(walk(nodes, right))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    /// Leaf output for a row given by a feature accessor.
    pub fn predict_with(&self, value: impl Fn(usize) -> Option<f64>) -> f64 {
        let mut id = 0;
        loop {
            match &self.nodes[id].kind {
                NodeKind::Leaf { value } => return *value,
                NodeKind::Split {
                    feature,
                    threshold,
                    default_left,
                    left,
                    right,
                    ..
                } => {
                    let go_left = match value(*feature) {
                        Some(v) => v <= *threshold,
                        None => *default_left,
                    };
                    id = if go_left { *left } else { *right };
                }
            }
        }
    }

    /// Leaf output for a training row, routed through its bins.
    pub fn predict_binned(&self, data: &BinnedData, row: usize) -> f64 {
        let mut id = 0;
        loop {
            match &self.nodes[id].kind {
                NodeKind::Leaf { value } => return *value,
                NodeKind::Split {
                    feature,
                    bin,
                    default_left,
                    left,
                    right,
                    ..
                } => {
                    id = if goes_left(data, row, *feature, *bin, *default_left) {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

fn goes_left(
    data: &BinnedData,
    row: usize,
    feature: usize,
    bin: usize,
    default_left: bool,
) -> bool {
    let b = data.bin(row, feature);
    if b == data.missing_bin(feature) {
        default_left
    } else {
        b <= bin
    }
}

struct Frontier {
    node: usize,
    rows: Vec<u32>,
    hist: Histogram,
    depth: usize,
    split: Option<Split>,
}

struct Grower<'a> {
    data: &'a BinnedData,
    mapper: &'a BinMapper,
    grads: &'a QuantizedGrads,
    allowed: &'a [bool],
    config: &'a TrainConfig,
    params: SplitParams,
}

impl Grower<'_> {
    fn find_split(&self, hist: &Histogram, depth: usize) -> Option<Split> {
        if depth >= self.config.max_depth {
            return None;
        }
        best_split(self.data, hist, self.grads, self.allowed, &self.params)
    }

    fn frontier(&self, node: usize, rows: Vec<u32>, hist: Histogram, depth: usize) -> Frontier {
        let split = self.find_split(&hist, depth);
        Frontier {
            node,
            rows,
            hist,
            depth,
            split,
        }
    }

    /// Partitions a node's rows; the smaller child's histogram is built
    /// directly and the larger one is obtained by subtraction.
    fn children(&self, f: &Frontier) -> ((Vec<u32>, Histogram), (Vec<u32>, Histogram)) {
        let split = f.split.expect("only split nodes have children");
        let (left, right): (Vec<u32>, Vec<u32>) = f.rows.iter().partition(|&&r| {
            goes_left(
                self.data,
                r as usize,
                split.feature,
                split.bin,
                split.default_left,
            )
        });
        if left.len() <= right.len() {
            let lh = Histogram::build(self.data, &left, self.grads);
            let rh = f.hist.subtract(&lh);
            ((left, lh), (right, rh))
        } else {
            let rh = Histogram::build(self.data, &right, self.grads);
            let lh = f.hist.subtract(&rh);
            ((left, lh), (right, rh))
        }
    }

    fn leaf(&self, hist: &Histogram) -> Result<TreeNode> {
        let g = self.grads.grad_value(hist.total.grad);
        let h = self.grads.hess_value(hist.total.hess);
        let value = self.config.learning_rate * leaf_weight(g, h, self.config.lambda)?;
        Ok(TreeNode {
            cover: h,
            count: hist.total.count,
            kind: NodeKind::Leaf { value },
        })
    }

    fn split_node(&self, f: &Frontier, left: usize, right: usize) -> TreeNode {
        let split = f.split.expect("split present");
        TreeNode {
            cover: self.grads.hess_value(f.hist.total.hess),
            count: f.hist.total.count,
            kind: NodeKind::Split {
                feature: split.feature,
                bin: split.bin,
                threshold: self.mapper.threshold(split.feature, split.bin),
                default_left: split.default_left,
                left,
                right,
                gain: split.gain,
            },
        }
    }
}

/// Grows one tree on `rows`.
///
/// Depth-wise growth expands every splittable node of a level before moving
/// down; leaf-wise growth repeatedly splits the leaf with the largest gain
/// (ties to the lower node id) until `max_leaves` is reached. Both stop at
/// `max_depth`.
pub fn grow_tree(
    data: &BinnedData,
    mapper: &BinMapper,
    rows: &[u32],
    grads: &QuantizedGrads,
    config: &TrainConfig,
    allowed: &[bool],
) -> Result<Tree> {
    let grower = Grower {
        data,
        mapper,
        grads,
        allowed,
        config,
        params: SplitParams {
            lambda: config.lambda,
            gamma: config.gamma,
            min_child_hess: config.min_child_hess,
        },
    };
    let root_hist = Histogram::build(data, rows, grads);
    let root = grower.frontier(0, rows.to_vec(), root_hist, 0);
    let mut nodes: Vec<Option<TreeNode>> = vec![None];

    match config.variant {
        GrowthVariant::Depthwise => {
            let mut level = vec![root];
            while !level.is_empty() {
                let (splitting, leaves): (Vec<Frontier>, Vec<Frontier>) =
                    level.into_iter().partition(|f| f.split.is_some());
                for f in &leaves {
                    nodes[f.node] = Some(grower.leaf(&f.hist)?);
                }
                let expanded: Vec<_> = splitting
                    .par_iter()
                    .map(|f| {
                        let ((lr, lh), (rr, rh)) = grower.children(f);
                        let ls = grower.find_split(&lh, f.depth + 1);
                        let rs = grower.find_split(&rh, f.depth + 1);
                        ((lr, lh, ls), (rr, rh, rs))
                    })
                    .collect();
                let mut next = Vec::with_capacity(expanded.len() * 2);
                for (f, ((lr, lh, ls), (rr, rh, rs))) in splitting.iter().zip(expanded) {
                    let (l, r) = (nodes.len(), nodes.len() + 1);
                    nodes.push(None);
                    nodes.push(None);
                    nodes[f.node] = Some(grower.split_node(f, l, r));
                    let depth = f.depth + 1;
                    next.push(Frontier {
                        node: l,
                        rows: lr,
                        hist: lh,
                        depth,
                        split: ls,
                    });
                    next.push(Frontier {
                        node: r,
                        rows: rr,
                        hist: rh,
                        depth,
                        split: rs,
                    });
                }
                level = next;
            }
        }
        GrowthVariant::Leafwise => {
            let mut leaves = vec![root];
            while leaves.len() < config.max_leaves {
                let pick = leaves
                    .iter()
                    .enumerate()
                    .filter_map(|(i, f)| f.split.map(|s| (i, s.gain, f.node)))
                    .fold(None, |best: Option<(usize, f64, usize)>, c| match best {
                        Some(b) if b.1 > c.1 || (b.1 == c.1 && b.2 < c.2) => Some(b),
                        _ => Some(c),
                    });
                let Some((i, _, _)) = pick else { break };
                let f = leaves.swap_remove(i);
                let ((lr, lh), (rr, rh)) = grower.children(&f);
                let (l, r) = (nodes.len(), nodes.len() + 1);
                nodes.push(None);
                nodes.push(None);
                nodes[f.node] = Some(grower.split_node(&f, l, r));
                leaves.push(grower.frontier(l, lr, lh, f.depth + 1));
                leaves.push(grower.frontier(r, rr, rh, f.depth + 1));
            }
            for f in &leaves {
                nodes[f.node] = Some(grower.leaf(&f.hist)?);
            }
        }
    }
    Ok(Tree {
        nodes: nodes
            .into_iter()
            .map(|n| n.expect("every node finalized"))
            .collect(),
    })
}
