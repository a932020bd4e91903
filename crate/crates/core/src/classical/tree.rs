//! CART classification trees with Gini impurity.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, derive_seed};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: u32,
        threshold: f32,
        left: u32,
        right: u32,
    },
    Leaf { probs: Vec<f32> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub num_classes: usize,
    pub num_features: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    /// Candidate features per split; `None` means `ceil(sqrt(F))`.
    pub features_per_split: Option<usize>,
}

/// Feature matrix view: `rows x cols`, row-major.
#[derive(Clone, Copy)]
pub(crate) struct Features<'a> {
    pub data: &'a [f32],
    pub cols: usize,
}

impl Features<'_> {
    fn at(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.cols + col]
    }
}

pub(crate) fn check_xy(x: &Tensor, y: &[u8], num_classes: usize) -> Result<()> {
    if x.ndim() != 2 {
        return Err(Error::Shape(alloc::format!(
            "features must be N x F, got {:?}",
            x.shape()
        )));
    }
    if y.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if x.rows() != y.len() {
        return Err(Error::Shape(alloc::format!(
            "{} feature rows for {} labels",
            x.rows(),
            y.len()
        )));
    }
    if let Some(&l) = y.iter().find(|&&l| l as usize >= num_classes) {
        return Err(Error::LabelOutOfRange {
            label: l as usize,
            classes: num_classes,
        });
    }
    Ok(())
}

struct Best {
    score: f64,
    feature: usize,
    threshold: f32,
}

/// Best Gini split of `samples` on one feature. Maximises
/// `sum(cL^2)/nL + sum(cR^2)/nR`, which minimises weighted child impurity.
fn best_split_on(
    x: Features<'_>,
    y: &[u8],
    samples: &[usize],
    feature: usize,
    k: usize,
    pairs: &mut Vec<(f32, u8)>,
) -> Option<(f64, f32)> {
    let first = x.at(samples[0], feature);
    if samples.iter().all(|&s| x.at(s, feature) == first) {
        return None;
    }
    pairs.clear();
    pairs.extend(samples.iter().map(|&s| (x.at(s, feature), y[s])));
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    let n = pairs.len();
    let mut right = vec![0u64; k];
    for &(_, c) in pairs.iter() {
        right[c as usize] += 1;
    }
    let mut left = vec![0u64; k];
    let mut sq_left = 0u64;
    let mut sq_right: u64 = right.iter().map(|c| c * c).sum();
    let mut best: Option<(f64, f32)> = None;
    for i in 0..n - 1 {
        let c = pairs[i].1 as usize;
        sq_left += 2 * left[c] + 1;
        left[c] += 1;
        sq_right -= 2 * right[c] - 1;
        right[c] -= 1;
        let (lo, hi) = (pairs[i].0, pairs[i + 1].0);
        if lo == hi {
            continue;
        }
        let n_left = (i + 1) as f64;
        let n_right = (n - i - 1) as f64;
        let score = sq_left as f64 / n_left + sq_right as f64 / n_right;
        if best.is_none_or(|(s, _)| score > s) {
            let mut threshold = lo + (hi - lo) / 2.0;
            if threshold >= hi {
                threshold = lo;
            }
            best = Some((score, threshold));
        }
    }
    best
}

fn leaf(y: &[u8], samples: &[usize], k: usize) -> Node {
    let mut counts = vec![0usize; k];
    for &s in samples {
        counts[y[s] as usize] += 1;
    }
    let n = samples.len() as f32;
    Node::Leaf {
        probs: counts.iter().map(|&c| c as f32 / n).collect(),
    }
}

impl DecisionTree {
    /// Fits a tree on the given sample indices (repeats allowed, as in a bootstrap).
    ///
    /// Each node draws its feature order from a seed derived from its path, so
    /// a shallower tree is always a truncation of a deeper one.
    pub(crate) fn fit_indices(
        x: Features<'_>,
        y: &[u8],
        samples: Vec<usize>,
        num_classes: usize,
        config: TreeConfig,
        seed: u64,
    ) -> Self {
        let f = x.cols;
        let mtry = config
            .features_per_split
            .unwrap_or_else(|| libm::ceil(libm::sqrt(f as f64)) as usize)
            .clamp(1, f.max(1));
        let mut nodes: Vec<Node> = vec![Node::Leaf { probs: Vec::new() }];
        // (slot, samples, depth, node seed)
        let mut stack = vec![(0usize, samples, 0usize, seed)];
        let mut pairs = Vec::new();
        let mut features: Vec<usize> = (0..f).collect();
        while let Some((slot, samples, depth, node_seed)) = stack.pop() {
            let first = y[samples[0]];
            let pure = samples.iter().all(|&s| y[s] == first);
            let depth_capped = config.max_depth.is_some_and(|d| depth >= d);
            if pure || depth_capped || samples.len() < 2 {
                nodes[slot] = leaf(y, &samples, num_classes);
                continue;
            }
            // lazily shuffled feature order; keep looking past mtry until a split exists
            let mut rng = rng::seeded(node_seed);
            for (i, slot) in features.iter_mut().enumerate() {
                *slot = i;
            }
            let mut best: Option<Best> = None;
            for tried in 0..f {
                let j = rng.random_range(tried..f);
                features.swap(tried, j);
                let feat = features[tried];
                if tried >= mtry && best.is_some() {
                    break;
                }
                if let Some((score, threshold)) =
                    best_split_on(x, y, &samples, feat, num_classes, &mut pairs)
                {
                    if best.as_ref().is_none_or(|b| score > b.score) {
                        best = Some(Best {
                            score,
                            feature: feat,
                            threshold,
                        });
                    }
                }
            }
            let Some(best) = best else {
                nodes[slot] = leaf(y, &samples, num_classes);
                continue;
            };
            let (left, right): (Vec<usize>, Vec<usize>) = samples
                .iter()
                .partition(|&&s| x.at(s, best.feature) <= best.threshold);
            let l = nodes.len();
            nodes.push(Node::Leaf { probs: Vec::new() });
            nodes.push(Node::Leaf { probs: Vec::new() });
            nodes[slot] = Node::Split {
                feature: best.feature as u32,
                threshold: best.threshold,
                left: l as u32,
                right: (l + 1) as u32,
            };
            stack.push((l + 1, right, depth + 1, derive_seed(node_seed, 2)));
            stack.push((l, left, depth + 1, derive_seed(node_seed, 1)));
        }
        Self {
            nodes,
            num_classes,
            num_features: f,
        }
    }

    /// Fits on every row of `x`.
    pub fn fit(x: &Tensor, y: &[u8], num_classes: usize, config: TreeConfig, seed: u64) -> Result<Self> {
        check_xy(x, y, num_classes)?;
        let feats = Features {
            data: x.data(),
            cols: x.row_len(),
        };
        Ok(Self::fit_indices(feats, y, (0..y.len()).collect(), num_classes, config, seed))
    }

    /// Leaf distribution reached by one feature row.
    pub fn leaf_probs(&self, row: &[f32]) -> &[f32] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { probs } => return probs,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        if x.ndim() != 2 || x.row_len() != self.num_features {
            return Err(Error::Shape(alloc::format!(
                "tree expects N x {}, got {:?}",
                self.num_features,
                x.shape()
            )));
        }
        let mut out = Vec::with_capacity(x.rows() * self.num_classes);
        for i in 0..x.rows() {
            out.extend_from_slice(self.leaf_probs(x.row(i)));
        }
        Tensor::from_vec(&[x.rows(), self.num_classes], out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exhaustive oracle: best threshold by enumerating every midpoint and
    /// counting misclassifications of the majority-vote children.
    fn exhaustive_stump(xs: &[f32], ys: &[u8]) -> f32 {
        let mut vals: Vec<f32> = xs.to_vec();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup();
        let mut best = (usize::MAX, 0.0);
        for w in vals.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let mut errors = 0;
            for side in [true, false] {
                let members: Vec<u8> = xs
                    .iter()
                    .zip(ys)
                    .filter(|(x, _)| (**x <= t) == side)
                    .map(|(_, y)| *y)
                    .collect();
                let ones = members.iter().filter(|&&y| y == 1).count();
                errors += ones.min(members.len() - ones);
            }
            if errors < best.0 {
                best = (errors, t);
            }
        }
        best.1
    }

    #[test]
    fn depth_one_finds_exact_threshold() {
        let xs = [0.1f32, 0.2, 0.35, 0.4, 0.6, 0.7, 0.8, 0.95];
        let ys = [0u8, 0, 0, 0, 1, 1, 1, 1];
        let x = Tensor::from_vec(&[8, 1], xs.to_vec()).unwrap();
        let cfg = TreeConfig { max_depth: Some(1), features_per_split: None };
        let tree = DecisionTree::fit(&x, &ys, 2, cfg, 0).unwrap();
        let Node::Split { threshold, .. } = tree.nodes[0] else { panic!("root should split") };
        assert_eq!(threshold, exhaustive_stump(&xs, &ys));
        assert!((threshold - 0.5).abs() < 1e-6);
        assert_eq!(tree.depth(), 1);
    }

    #[test]
    fn single_class_gives_constant_leaf() {
        let x = Tensor::from_vec(&[4, 2], (0..8).map(|v| v as f32).collect()).unwrap();
        let tree = DecisionTree::fit(&x, &[2, 2, 2, 2], 3, TreeConfig::default(), 1).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.leaf_probs(&[100.0, -3.0]), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn unlimited_depth_fits_consistent_data() {
        let mut rng = rng::seeded(4);
        let n = 200;
        let data: Vec<f32> = (0..n * 6).map(|_| rng.random_range(0..8) as f32 / 8.0).collect();
        let x = Tensor::from_vec(&[n, 6], data).unwrap();
        let y: Vec<u8> = (0..n)
            .map(|i| ((x.row(i)[0] * 8.0) as u8 + (x.row(i)[3] * 8.0) as u8) % 3)
            .collect();
        let tree = DecisionTree::fit(&x, &y, 3, TreeConfig::default(), 9).unwrap();
        let p = tree.predict_proba(&x).unwrap();
        for i in 0..n {
            assert_eq!(p.row(i)[y[i] as usize], 1.0);
        }
    }

    #[test]
    fn midpoint_never_reaches_upper_value() {
        let lo = 1.0f32;
        let hi = f32::from_bits(lo.to_bits() + 1);
        let x = Tensor::from_vec(&[2, 1], alloc::vec![lo, hi]).unwrap();
        let tree = DecisionTree::fit(&x, &[0, 1], 2, TreeConfig::default(), 0).unwrap();
        assert_eq!(tree.leaf_probs(&[lo]), &[1.0, 0.0]);
        assert_eq!(tree.leaf_probs(&[hi]), &[0.0, 1.0]);
    }
}
