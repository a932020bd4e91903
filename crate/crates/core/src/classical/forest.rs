use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tree::{check_xy, DecisionTree, Features, TreeConfig};
use crate::error::{Error, Result};
use crate::rng::{self, derive_seed};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub features_per_split: Option<usize>,
    /// Fit each tree on a bootstrap resample (otherwise on the full set).
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
    pub max_depth: Option<usize>,
    pub features_per_split: Option<usize>,
    pub num_classes: usize,
}

impl RandomForest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

/// Bagged Gini trees with `sqrt(F)` candidate features per split.
pub fn train_random_forest(
    x: &Tensor,
    y: &[u8],
    num_classes: usize,
    config: &ForestConfig,
) -> Result<RandomForest> {
    check_xy(x, y, num_classes)?;
    if config.n_trees == 0 {
        return Err(Error::InvalidArgument("n_trees must be at least 1".into()));
    }
    let feats = Features {
        data: x.data(),
        cols: x.row_len(),
    };
    let n = y.len();
    let tree_cfg = TreeConfig {
        max_depth: config.max_depth,
        features_per_split: config.features_per_split,
    };
    let trees = (0..config.n_trees)
        .map(|t| {
            let tree_seed = derive_seed(config.seed, t as u64);
            let samples: Vec<usize> = if config.bootstrap {
                let mut r = rng::seeded(derive_seed(tree_seed, 0xB007));
                (0..n).map(|_| r.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            DecisionTree::fit_indices(feats, y, samples, num_classes, tree_cfg, tree_seed)
        })
        .collect();
    Ok(RandomForest {
        trees,
        max_depth: config.max_depth,
        features_per_split: config.features_per_split,
        num_classes,
    })
}

/// Mean of the trees' leaf distributions.
pub fn rf_predict_proba(forest: &RandomForest, x: &Tensor) -> Result<Tensor> {
    let k = forest.num_classes;
    let Some(first) = forest.trees.first() else {
        return Err(Error::InvalidArgument("forest has no trees".into()));
    };
    if x.ndim() != 2 || x.row_len() != first.num_features {
        return Err(Error::Shape(alloc::format!(
            "forest expects N x {}, got {:?}",
            first.num_features,
            x.shape()
        )));
    }
    let inv = 1.0 / forest.trees.len() as f64;
    let mut out = Vec::with_capacity(x.rows() * k);
    let mut acc = alloc::vec![0.0f64; k];
    for i in 0..x.rows() {
        acc.fill(0.0);
        for tree in &forest.trees {
            for (a, p) in acc.iter_mut().zip(tree.leaf_probs(x.row(i))) {
                *a += *p as f64;
            }
        }
        out.extend(acc.iter().map(|a| (a * inv) as f32));
    }
    Tensor::from_vec(&[x.rows(), k], out)
}
