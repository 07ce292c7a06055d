//! CART regression trees and bagged random forests.
//!
//! Trees split greedily on the largest reduction of squared error, trying the
//! midpoints between consecutive distinct values of `mtry` randomly drawn
//! features per node. Features that are constant within a node are skipped and
//! do not count towards `mtry`. Leaves predict the mean target of their samples.

use std::io::{Read, Write};

use ndarray::ArrayView2;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub mod imputer;

pub use imputer::{rf_impute, RfImputation, RfImputer, RfManifest};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    /// Candidate features per node; `None` means `ceil(features / 3)`.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            mtry: None,
            min_leaf: 5,
            max_depth: None,
        }
    }
}

impl TreeParams {
    pub fn resolved_mtry(&self, n_features: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| n_features.div_ceil(3))
            .clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    /// Draw a same-size bootstrap sample per tree. Disabling it trains every
    /// tree on the full data, which is only useful in tests.
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            mtry: None,
            min_leaf: 5,
            max_depth: None,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    pub fn tree(&self) -> TreeParams {
        TreeParams {
            mtry: self.mtry,
            min_leaf: self.min_leaf,
            max_depth: self.max_depth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TreeNode<F> {
    Internal {
        feature: usize,
        threshold: F,
        left: usize,
        right: usize,
    },
    Leaf {
        prediction: F,
        count: usize,
    },
}

/// A regression tree stored as a node arena; node 0 is the root. Inputs with
/// `x[feature] <= threshold` descend left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree<F> {
    pub nodes: Vec<TreeNode<F>>,
    pub n_features: usize,
}

impl<F: Real> Tree<F> {
    pub fn predict(&self, x: &[F]) -> Result<F> {
        check_dim(x.len(), self.n_features)?;
        Ok(self.predict_with(|f| x[f]))
    }

    /// Prediction with features supplied by a lookup closure.
    #[inline]
    pub fn predict_with(&self, feature: impl Fn(usize) -> F) -> F {
        let mut id = 0;
        loop {
            match self.nodes[id] {
                TreeNode::Leaf { prediction, .. } => return prediction,
                TreeNode::Internal {
                    feature: f,
                    threshold,
                    left,
                    right,
                } => id = if feature(f) <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk<F>(nodes: &[TreeNode<F>], id: usize) -> usize {
            match nodes[id] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Internal { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }
}

fn check_dim(got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Argument(format!("expected {want} features, got {got}")));
    }
    Ok(())
}

/// Column-major feature table: `cols[f][row]`.
#[derive(Debug, Clone)]
pub struct Columns<'a, F> {
    cols: Vec<&'a [F]>,
    n_rows: usize,
}

impl<'a, F: Real> Columns<'a, F> {
    pub fn new(cols: Vec<&'a [F]>) -> Result<Self> {
        let n_rows = cols.first().map_or(0, |c| c.len());
        if cols.iter().any(|c| c.len() != n_rows) {
            return Err(Error::Argument("feature columns differ in length".into()));
        }
        Ok(Columns { cols, n_rows })
    }

    pub fn n_features(&self) -> usize {
        self.cols.len()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn get(&self, row: usize, feature: usize) -> F {
        self.cols[feature][row]
    }
}

/// Copies a row-major matrix into column vectors.
pub fn to_columns<F: Real>(x: ArrayView2<'_, F>) -> Vec<Vec<F>> {
    x.columns().into_iter().map(|c| c.to_vec()).collect()
}

struct Grower<'a, F> {
    data: &'a Columns<'a, F>,
    y: &'a [F],
    mtry: usize,
    min_leaf: usize,
    max_depth: usize,
    features: Vec<usize>,
    buf: Vec<(F, F)>,
    nodes: Vec<TreeNode<F>>,
}

struct Split<F> {
    feature: usize,
    threshold: F,
    score: F,
}

impl<F: Real> Grower<'_, F> {
    fn leaf(&mut self, samples: &[usize]) -> usize {
        let sum: F = samples.iter().map(|&s| self.y[s]).sum();
        self.nodes.push(TreeNode::Leaf {
            prediction: sum / F::of_usize(samples.len()),
            count: samples.len(),
        });
        self.nodes.len() - 1
    }

    fn grow(&mut self, samples: &mut [usize], depth: usize, rng: &mut Rng) -> usize {
        let n = samples.len();
        let first = self.y[samples[0]];
        let constant = samples.iter().all(|&s| self.y[s] == first);
        if constant || n < 2 * self.min_leaf || depth >= self.max_depth {
            return self.leaf(samples);
        }
        let Some(split) = self.best_split(samples, rng) else {
            return self.leaf(samples);
        };
        let (feature, threshold) = (split.feature, split.threshold);
        let mut lo = 0;
        for i in 0..n {
            if self.data.get(samples[i], feature) <= threshold {
                samples.swap(lo, i);
                lo += 1;
            }
        }
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            prediction: F::zero(),
            count: 0,
        });
        let (l, r) = samples.split_at_mut(lo);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = TreeNode::Internal {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    fn best_split(&mut self, samples: &[usize], rng: &mut Rng) -> Option<Split<F>> {
        let n = samples.len();
        let total: F = samples.iter().map(|&s| self.y[s]).sum();
        let parent = total * total / F::of_usize(n);
        let mut best: Option<Split<F>> = None;
        let mut tried = 0;
        let n_features = self.features.len();
        for k in 0..n_features {
            if tried == self.mtry {
                break;
            }
            let j = rng.random_range(k..n_features);
            self.features.swap(k, j);
            let f = self.features[k];

            self.buf.clear();
            let (mut lo, mut hi) = (F::infinity(), F::neg_infinity());
            for &s in samples {
                let x = self.data.get(s, f);
                lo = lo.min(x);
                hi = hi.max(x);
                self.buf.push((x, self.y[s]));
            }
            if !(lo < hi) {
                continue;
            }
            tried += 1;
            self.buf.sort_unstable_by(|a, b| a.0.total_cmp_real(&b.0));

            let mut left_sum = F::zero();
            for i in 0..n - 1 {
                left_sum += self.buf[i].1;
                let nl = i + 1;
                if nl < self.min_leaf {
                    continue;
                }
                if n - nl < self.min_leaf {
                    break;
                }
                let (xl, xr) = (self.buf[i].0, self.buf[i + 1].0);
                if !(xl < xr) {
                    continue;
                }
                let right_sum = total - left_sum;
                let score =
                    left_sum * left_sum / F::of_usize(nl) + right_sum * right_sum / F::of_usize(n - nl);
                if best.as_ref().is_none_or(|b| score > b.score) {
                    let mut threshold = (xl + xr) / F::of(2.0);
                    if !(threshold < xr) {
                        threshold = xl;
                    }
                    best = Some(Split {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        best.filter(|b| b.score > parent)
    }
}

fn grow_tree<F: Real>(data: &Columns<'_, F>, y: &[F], samples: &mut [usize], params: &TreeParams, rng: &mut Rng) -> Tree<F> {
    let n_features = data.n_features();
    let mut g = Grower {
        data,
        y,
        mtry: params.resolved_mtry(n_features),
        min_leaf: params.min_leaf.max(1),
        max_depth: params.max_depth.unwrap_or(usize::MAX),
        features: (0..n_features).collect(),
        buf: Vec::with_capacity(samples.len()),
        nodes: Vec::new(),
    };
    g.grow(samples, 0, rng);
    Tree {
        nodes: g.nodes,
        n_features,
    }
}

fn check_inputs<F: Real>(data: &Columns<'_, F>, y: &[F]) -> Result<()> {
    if y.is_empty() || data.n_rows() == 0 {
        return Err(Error::Argument("cannot fit on an empty dataset".into()));
    }
    if data.n_rows() != y.len() {
        return Err(Error::Argument(format!("{} feature rows but {} targets", data.n_rows(), y.len())));
    }
    if data.n_features() == 0 {
        return Err(Error::Argument("no features".into()));
    }
    if y.iter().any(|v| !v.is_finite()) || data.cols.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
        return Err(Error::Argument("training data contains missing or non-finite values".into()));
    }
    Ok(())
}

/// Fits one tree on all rows of `x` (rows x features).
pub fn fit_tree<F: Real>(x: ArrayView2<'_, F>, y: &[F], params: &TreeParams, seed: u64) -> Result<Tree<F>> {
    let cols = to_columns(x);
    let data = Columns::new(cols.iter().map(|c| c.as_slice()).collect())?;
    fit_tree_columns(&data, y, params, seed)
}

pub fn fit_tree_columns<F: Real>(data: &Columns<'_, F>, y: &[F], params: &TreeParams, seed: u64) -> Result<Tree<F>> {
    check_inputs(data, y)?;
    let mut samples: Vec<usize> = (0..y.len()).collect();
    Ok(grow_tree(data, y, &mut samples, params, &mut seed::rng(seed)))
}

/// Bagged ensemble of regression trees; predicts the mean of its trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest<F> {
    pub trees: Vec<Tree<F>>,
    pub per_tree_seed: Vec<u64>,
    pub n_features: usize,
    pub mtry: usize,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
}

impl<F: Real> Forest<F> {
    pub fn fit(x: ArrayView2<'_, F>, y: &[F], params: &ForestParams, seed: u64) -> Result<Self> {
        let cols = to_columns(x);
        let data = Columns::new(cols.iter().map(|c| c.as_slice()).collect())?;
        Self::fit_columns(&data, y, params, seed)
    }

    /// Tree `t` is grown from the stream `derive_seed(seed, t)`, so the result
    /// does not depend on the order in which trees are trained.
    pub fn fit_columns(data: &Columns<'_, F>, y: &[F], params: &ForestParams, seed: u64) -> Result<Self> {
        if params.n_trees == 0 {
            return Err(Error::Argument("forest needs at least one tree".into()));
        }
        check_inputs(data, y)?;
        let rows: Vec<usize> = (0..y.len()).collect();
        Self::fit_subset(data, y, &rows, params, seed)
    }

    /// Fits on the rows listed in `rows` only; `y` is indexed by row id like
    /// the feature columns. Inputs are assumed finite on those rows.
    pub fn fit_subset(data: &Columns<'_, F>, y: &[F], rows: &[usize], params: &ForestParams, seed: u64) -> Result<Self> {
        if params.n_trees == 0 {
            return Err(Error::Argument("forest needs at least one tree".into()));
        }
        if rows.is_empty() || data.n_features() == 0 || data.n_rows() != y.len() {
            return Err(Error::Argument("empty or inconsistent training subset".into()));
        }
        let n = rows.len();
        let tree_params = params.tree();
        let per_tree_seed: Vec<u64> = (0..params.n_trees).map(|t| seed::derive_seed(seed, t as u64)).collect();
        let trees = per_tree_seed
            .par_iter()
            .map(|&s| {
                let mut rng = seed::rng(s);
                let mut samples: Vec<usize> = if params.bootstrap {
                    (0..n).map(|_| rows[rng.random_range(0..n)]).collect()
                } else {
                    rows.to_vec()
                };
                grow_tree(data, y, &mut samples, &tree_params, &mut rng)
            })
            .collect();
        Ok(Forest {
            trees,
            per_tree_seed,
            n_features: data.n_features(),
            mtry: tree_params.resolved_mtry(data.n_features()),
            min_leaf: params.min_leaf,
            max_depth: params.max_depth,
        })
    }

    pub fn predict(&self, x: &[F]) -> Result<F> {
        check_dim(x.len(), self.n_features)?;
        Ok(self.predict_with(|f| x[f]))
    }

    #[inline]
    pub fn predict_with(&self, feature: impl Fn(usize) -> F + Copy) -> F {
        let sum: F = self.trees.iter().map(|t| t.predict_with(feature)).sum();
        sum / F::of_usize(self.trees.len())
    }

    pub fn node_count(&self) -> usize {
        self.trees.iter().map(|t| t.nodes.len()).sum()
    }
}

pub fn fit_forest<F: Real>(x: ArrayView2<'_, F>, y: &[F], params: &ForestParams, seed: u64) -> Result<Forest<F>> {
    Forest::fit(x, y, params, seed)
}

pub fn predict<F: Real>(forest: &Forest<F>, x: &[F]) -> Result<F> {
    forest.predict(x)
}

// ---------------------------------------------------------------------------
// Compact little-endian encoding used by model checkpoints.

const LEAF_TAG: u32 = u32::MAX;

pub(crate) fn put_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_real<F: Real>(w: &mut impl Write, v: F) -> std::io::Result<()> {
    w.write_all(&v.as_f64().to_bits().to_le_bytes())
}

pub(crate) fn get_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn get_real<F: Real>(r: &mut impl Read) -> std::io::Result<F> {
    Ok(F::of(f64::from_bits(get_u64(r)?)))
}

fn get_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn bad_data(msg: &str) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string())
}

impl<F: Real> Forest<F> {
    pub fn write_binary(&self, w: &mut impl Write) -> std::io::Result<()> {
        put_u64(w, self.n_features as u64)?;
        put_u64(w, self.mtry as u64)?;
        put_u64(w, self.min_leaf as u64)?;
        put_u64(w, self.max_depth.map_or(u64::MAX, |d| d as u64))?;
        put_u64(w, self.trees.len() as u64)?;
        for (tree, s) in self.trees.iter().zip(&self.per_tree_seed) {
            put_u64(w, *s)?;
            put_u64(w, tree.nodes.len() as u64)?;
            for node in &tree.nodes {
                match *node {
                    TreeNode::Internal {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        w.write_all(&(feature as u32).to_le_bytes())?;
                        put_real(w, threshold)?;
                        w.write_all(&(left as u32).to_le_bytes())?;
                        w.write_all(&(right as u32).to_le_bytes())?;
                    }
                    TreeNode::Leaf { prediction, count } => {
                        w.write_all(&LEAF_TAG.to_le_bytes())?;
                        put_real(w, prediction)?;
                        w.write_all(&(count as u64).to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_binary(r: &mut impl Read) -> std::io::Result<Self> {
        let n_features = get_u64(r)? as usize;
        let mtry = get_u64(r)? as usize;
        let min_leaf = get_u64(r)? as usize;
        let max_depth = match get_u64(r)? {
            u64::MAX => None,
            d => Some(d as usize),
        };
        let n_trees = get_u64(r)? as usize;
        let mut trees = Vec::with_capacity(n_trees);
        let mut per_tree_seed = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            per_tree_seed.push(get_u64(r)?);
            let n_nodes = get_u64(r)? as usize;
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let tag = get_u32(r)?;
                let value = get_real(r)?;
                if tag == LEAF_TAG {
                    nodes.push(TreeNode::Leaf {
                        prediction: value,
                        count: get_u64(r)? as usize,
                    });
                } else {
                    let left = get_u32(r)? as usize;
                    let right = get_u32(r)? as usize;
                    if left >= n_nodes || right >= n_nodes || tag as usize >= n_features {
                        return Err(bad_data("tree node index out of range"));
                    }
                    nodes.push(TreeNode::Internal {
                        feature: tag as usize,
                        threshold: value,
                        left,
                        right,
                    });
                }
            }
            if nodes.is_empty() {
                return Err(bad_data("empty tree"));
            }
            trees.push(Tree { nodes, n_features });
        }
        Ok(Forest {
            trees,
            per_tree_seed,
            n_features,
            mtry,
            min_leaf,
            max_depth,
        })
    }
}
