//! Weighted CART classification trees with gini impurity.
//!
//! Every feature is presorted once per training matrix. A tree keeps, for
//! each feature, its active samples in sorted order; nodes are contiguous
//! ranges of these lists and a split stably partitions every list, so the
//! sorted order is never recomputed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;

const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    #[serde(rename = "f")]
    pub feature: u32,
    #[serde(rename = "t")]
    pub threshold: f64,
    #[serde(rename = "l")]
    pub left: u32,
    #[serde(rename = "r")]
    pub right: u32,
    /// Weighted positive fraction of the training samples in the node.
    #[serde(rename = "v")]
    pub value: f64,
    #[serde(rename = "w")]
    pub weight: f64,
    #[serde(rename = "g")]
    pub impurity: f64,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.feature == LEAF
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn leaf_value(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            if n.is_leaf() {
                return n.value;
            }
            i = if x[n.feature as usize] <= n.threshold { n.left } else { n.right } as usize;
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn depth(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((i, d)) = stack.pop() {
            best = best.max(d);
            let n = &self.nodes[i];
            if !n.is_leaf() {
                stack.push((n.left as usize, d + 1));
                stack.push((n.right as usize, d + 1));
            }
        }
        best
    }

    /// Weighted gini decrease per feature, normalised to sum to one (all
    /// zeros for a single-leaf tree).
    pub fn importances(&self, n_features: usize) -> Vec<f64> {
        let mut imp = vec![0.0; n_features];
        for n in self.nodes.iter().filter(|n| !n.is_leaf()) {
            let (l, r) = (&self.nodes[n.left as usize], &self.nodes[n.right as usize]);
            let dec = n.weight * n.impurity - l.weight * l.impurity - r.weight * r.impurity;
            imp[n.feature as usize] += dec.max(0.0);
        }
        let total: f64 = imp.iter().sum();
        if total > 0.0 {
            imp.iter_mut().for_each(|v| *v /= total);
        }
        imp
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TreeParams {
    pub max_features: usize,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
}

/// Column-major copy of a training matrix with every column presorted.
pub(crate) struct Presorted {
    pub cols: Vec<Vec<f64>>,
    pub order: Vec<Vec<u32>>,
}

impl Presorted {
    pub fn new(x: &Matrix) -> Self {
        let cols: Vec<Vec<f64>> = (0..x.n_cols()).map(|j| x.column(j)).collect();
        let order = cols
            .iter()
            .map(|c| {
                let mut idx: Vec<u32> = (0..c.len() as u32).collect();
                idx.sort_by(|&a, &b| c[a as usize].total_cmp(&c[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Self { cols, order }
    }

    pub fn n_features(&self) -> usize {
        self.cols.len()
    }
}

struct Split {
    feature: usize,
    threshold: f64,
    /// Last position (inclusive) of the left child in the feature's order.
    last_left: usize,
    score: f64,
}

struct Stats {
    weight: f64,
    positive: f64,
    count: u64,
}

/// Grows one tree on samples with `counts[i] > 0`, each carrying weight
/// `weights[i]`. `min_samples_leaf` is measured in `counts`.
pub(crate) fn grow<R: Rng>(
    data: &Presorted,
    y: &[u8],
    counts: &[u32],
    weights: &[f64],
    params: TreeParams,
    rng: &mut R,
) -> DecisionTree {
    let p = data.n_features();
    let m = counts.iter().filter(|&&c| c > 0).count();
    let mut orders = Vec::with_capacity(p * m);
    for f in 0..p {
        orders.extend(data.order[f].iter().copied().filter(|&i| counts[i as usize] > 0));
    }
    let mut goes_left = vec![false; y.len()];
    let mut tmp = vec![0u32; m];
    let mut features: Vec<usize> = (0..p).collect();
    let min_leaf = params.min_samples_leaf.max(1) as u64;

    let stats = |range: &[u32]| {
        let mut s = Stats { weight: 0.0, positive: 0.0, count: 0 };
        for &i in range {
            let i = i as usize;
            s.weight += weights[i];
            s.positive += weights[i] * y[i] as f64;
            s.count += counts[i] as u64;
        }
        s
    };
    let make_node = |s: &Stats| {
        let value = if s.weight > 0.0 { s.positive / s.weight } else { 0.0 };
        Node {
            feature: LEAF,
            threshold: 0.0,
            left: LEAF,
            right: LEAF,
            value,
            weight: s.weight,
            impurity: 1.0 - value * value - (1.0 - value) * (1.0 - value),
        }
    };

    let root = stats(&orders[..m]);
    let mut nodes = vec![make_node(&root)];
    let mut stack = vec![(0usize, 0usize, m, 0usize, root)];
    while let Some((id, start, end, depth, st)) = stack.pop() {
        let pure = st.positive <= 0.0 || st.positive >= st.weight;
        if pure || st.count < 2 * min_leaf || params.max_depth.is_some_and(|d| depth >= d) || m == 0 {
            continue;
        }
        let mut best: Option<Split> = None;
        let mut visited = 0;
        for drawn in 0..p {
            let j = rng.gen_range(drawn..p);
            features.swap(drawn, j);
            let f = features[drawn];
            let col = &data.cols[f];
            let ord = &orders[f * m + start..f * m + end];
            if col[ord[0] as usize] == col[ord[ord.len() - 1] as usize] {
                continue;
            }
            visited += 1;
            let (mut wl, mut pl, mut cl) = (0.0, 0.0, 0u64);
            for k in 0..ord.len() - 1 {
                let i = ord[k] as usize;
                wl += weights[i];
                pl += weights[i] * y[i] as f64;
                cl += counts[i] as u64;
                let (a, b) = (col[i], col[ord[k + 1] as usize]);
                if a == b || cl < min_leaf || st.count - cl < min_leaf {
                    continue;
                }
                let (wr, pr) = (st.weight - wl, st.positive - pl);
                if wl <= 0.0 || wr <= 0.0 {
                    continue;
                }
                let nl = wl - pl;
                let nr = wr - pr;
                let score = (pl * pl + nl * nl) / wl + (pr * pr + nr * nr) / wr;
                if best.as_ref().map_or(true, |s| score > s.score) {
                    let mut threshold = a / 2.0 + b / 2.0;
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(Split { feature: f, threshold, last_left: start + k, score });
                }
            }
            if visited == params.max_features {
                break;
            }
        }
        let Some(split) = best else { continue };

        let split_ord = &orders[split.feature * m..(split.feature + 1) * m];
        for (k, &i) in split_ord.iter().enumerate().take(end).skip(start) {
            goes_left[i as usize] = k <= split.last_left;
        }
        let n_left = split.last_left + 1 - start;
        for f in 0..p {
            let range = &mut orders[f * m + start..f * m + end];
            let (mut l, mut r) = (0, n_left);
            for &i in range.iter() {
                if goes_left[i as usize] {
                    tmp[l] = i;
                    l += 1;
                } else {
                    tmp[r] = i;
                    r += 1;
                }
            }
            range.copy_from_slice(&tmp[..end - start]);
        }
        let mid = start + n_left;
        let ls = stats(&orders[start..mid]);
        let rs = stats(&orders[mid..end]);
        let (li, ri) = (nodes.len() as u32, nodes.len() as u32 + 1);
        nodes.push(make_node(&ls));
        nodes.push(make_node(&rs));
        let parent = &mut nodes[id];
        parent.feature = split.feature as u32;
        parent.threshold = split.threshold;
        parent.left = li;
        parent.right = ri;
        stack.push((ri as usize, mid, end, depth + 1, rs));
        stack.push((li as usize, start, mid, depth + 1, ls));
    }
    DecisionTree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::testdata;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn full_tree(x: &Matrix, y: &[u8], params: TreeParams) -> DecisionTree {
        let data = Presorted::new(x);
        let n = y.len();
        grow(&data, y, &vec![1; n], &vec![1.0; n], params, &mut ChaCha8Rng::seed_from_u64(0))
    }

    const FULL: TreeParams = TreeParams { max_features: usize::MAX, min_samples_leaf: 1, max_depth: None };

    #[test]
    fn unlimited_tree_fits_consistent_data() {
        let (x, y) = testdata::xor(500, 1);
        let t = full_tree(&x, &y, FULL);
        let scores: Vec<f64> = (0..500).map(|i| t.leaf_value(x.row(i))).collect();
        assert_eq!(testdata::accuracy(&scores, &y), 1.0);
    }

    #[test]
    fn stump_has_two_leaves_at_most() {
        let (x, y) = testdata::separable(200, 2);
        let t = full_tree(&x, &y, TreeParams { max_depth: Some(1), ..FULL });
        assert!(t.n_leaves() <= 2);
        assert_eq!(t.depth(), 1);
    }

    #[test]
    fn hand_checked_threshold_is_midpoint() {
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![4.0], vec![8.0]]).unwrap();
        let t = full_tree(&x, &[0, 0, 1, 1], FULL);
        assert_eq!(t.nodes[0].threshold, 3.0);
        assert_eq!(t.n_leaves(), 2);
        assert_eq!(t.importances(1), vec![1.0]);
    }

    #[test]
    fn min_samples_leaf_is_respected() {
        let (x, y) = testdata::xor(300, 3);
        let t = full_tree(&x, &y, TreeParams { min_samples_leaf: 20, ..FULL });
        let data = Presorted::new(&x);
        let mut leaf_counts = vec![0usize; t.nodes.len()];
        for i in 0..300 {
            let mut k = 0;
            while !t.nodes[k].is_leaf() {
                let n = &t.nodes[k];
                k = if data.cols[n.feature as usize][i] <= n.threshold { n.left } else { n.right } as usize;
            }
            leaf_counts[k] += 1;
        }
        for (k, n) in t.nodes.iter().enumerate() {
            if n.is_leaf() {
                assert!(leaf_counts[k] >= 20);
            }
        }
    }

    #[test]
    fn weights_shift_leaf_values() {
        let x = Matrix::from_rows(&[vec![0.0], vec![0.0], vec![0.0]]).unwrap();
        let data = Presorted::new(&x);
        let t = grow(&data, &[1, 0, 0], &[1, 1, 1], &[2.0, 1.0, 1.0], FULL, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.nodes[0].value, 0.5);
    }
}
