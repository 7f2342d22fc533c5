//! Random Forest classifier built from scratch: bootstrap-resampled
//! decision trees grown to full depth with Gini-impurity splits over random
//! feature subsets, soft-voting posteriors, Gini-based feature importances,
//! and a versioned binary file format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{io_err, Error, Result};
use crate::features::{FeatureVector, NUM_FEATURES};
use crate::rng::{derive_seed, seeded};

/// The five diagnostic categories.
pub const NUM_CLASSES: usize = 5;

pub const FOREST_MAGIC: &[u8; 8] = b"CSEGFRST";
pub const FOREST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
        /// Impurity decrease weighted by the fraction of bootstrap samples
        /// reaching this node; feeds the feature importances.
        weighted_gain: f64,
    },
    Leaf {
        counts: [u32; NUM_CLASSES],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    /// Node arena; index 0 is the root.
    pub nodes: Vec<TreeNode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<DecisionTree>,
    pub n_features: usize,
    pub seed: u64,
}

/// Trains a forest of `n_trees` trees.
///
/// Each tree fits a bootstrap resample (n draws with replacement). At every
/// node the best Gini split among `floor(sqrt(n_features))` randomly chosen
/// features is taken; growth stops only when a node is pure or no split
/// improves impurity. Per-tree seeds derive from the master seed, so
/// training is deterministic and parallel over trees.
pub fn rf_train(
    samples: &[FeatureVector],
    labels: &[usize],
    n_trees: usize,
    seed: u64,
) -> Result<Forest> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    if samples.len() != labels.len() {
        return Err(Error::Invalid("feature/label counts differ".into()));
    }
    if labels.iter().any(|&l| l >= NUM_CLASSES) {
        return Err(Error::Invalid(format!("class label out of range 0..{NUM_CLASSES}")));
    }
    if n_trees == 0 {
        return Err(Error::Invalid("forest needs at least one tree".into()));
    }
    let mtry = (NUM_FEATURES as f64).sqrt().floor() as usize;
    let trees: Vec<DecisionTree> = (0..n_trees)
        .into_par_iter()
        .map(|i| grow_tree(samples, labels, mtry, derive_seed(seed, i as u64)))
        .collect();
    Ok(Forest { trees, n_features: NUM_FEATURES, seed })
}

fn gini(counts: &[u32; NUM_CLASSES], total: f64) -> f64 {
    let mut g = 1.0;
    for &c in counts {
        let p = c as f64 / total;
        g -= p * p;
    }
    g
}

fn class_counts(indices: &[usize], labels: &[usize]) -> [u32; NUM_CLASSES] {
    let mut counts = [0u32; NUM_CLASSES];
    for &i in indices {
        counts[labels[i]] += 1;
    }
    counts
}

struct TreeBuilder<'a> {
    samples: &'a [FeatureVector],
    labels: &'a [usize],
    mtry: usize,
    n_root: f64,
    nodes: Vec<TreeNode>,
    rng: crate::rng::Prng,
    candidates: Vec<usize>,
}

fn grow_tree(
    samples: &[FeatureVector],
    labels: &[usize],
    mtry: usize,
    seed: u64,
) -> DecisionTree {
    let mut rng = seeded(seed);
    let n = samples.len();
    let bootstrap: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
    let mut builder = TreeBuilder {
        samples,
        labels,
        mtry,
        n_root: n as f64,
        nodes: Vec::new(),
        rng,
        candidates: (0..NUM_FEATURES).collect(),
    };
    builder.build(bootstrap);
    DecisionTree { nodes: builder.nodes }
}

impl TreeBuilder<'_> {
    /// Appends the subtree for `indices` and returns its root index.
    fn build(&mut self, indices: Vec<usize>) -> u32 {
        let counts = class_counts(&indices, self.labels);
        let total = indices.len() as f64;
        let parent_gini = gini(&counts, total);

        let mut best: Option<(usize, f64, f64)> = None; // (feature, threshold, gain)
        if parent_gini > 0.0 {
            // Partial Fisher-Yates: the first `mtry` entries become the
            // candidate features for this node.
            for i in 0..self.mtry {
                let j = self.rng.gen_range(i..self.candidates.len());
                self.candidates.swap(i, j);
            }
            for slot in 0..self.mtry {
                let feature = self.candidates[slot];
                if let Some((threshold, gain)) =
                    best_split(&indices, self.samples, self.labels, feature, parent_gini)
                {
                    let better = match best {
                        None => gain > 0.0,
                        // First-encountered wins ties.
                        Some((_, _, best_gain)) => gain > best_gain,
                    };
                    if better {
                        best = Some((feature, threshold, gain));
                    }
                }
            }
        }

        match best {
            None => {
                self.nodes.push(TreeNode::Leaf { counts });
                (self.nodes.len() - 1) as u32
            }
            Some((feature, threshold, gain)) => {
                let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
                    .iter()
                    .partition(|&&i| self.samples[i].values()[feature] <= threshold);
                let node_slot = self.nodes.len();
                self.nodes.push(TreeNode::Leaf { counts }); // placeholder
                let left = self.build(left_idx);
                let right = self.build(right_idx);
                self.nodes[node_slot] = TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    weighted_gain: total / self.n_root * gain,
                };
                node_slot as u32
            }
        }
    }
}

/// Best threshold for one feature: scans split points between consecutive
/// distinct sorted values. Returns `(threshold, gain)` when some split has
/// positive gain.
fn best_split(
    indices: &[usize],
    samples: &[FeatureVector],
    labels: &[usize],
    feature: usize,
    parent_gini: f64,
) -> Option<(f64, f64)> {
    let mut pairs: Vec<(f64, usize)> = indices
        .iter()
        .map(|&i| (samples[i].values()[feature], labels[i]))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let total = pairs.len() as f64;
    let mut right = [0u32; NUM_CLASSES];
    for &(_, l) in &pairs {
        right[l] += 1;
    }
    let mut left = [0u32; NUM_CLASSES];
    let mut best: Option<(f64, f64)> = None;
    for w in 0..pairs.len() - 1 {
        let (v, l) = pairs[w];
        left[l] += 1;
        right[l] -= 1;
        let v_next = pairs[w + 1].0;
        if v == v_next {
            continue;
        }
        let nl = (w + 1) as f64;
        let nr = total - nl;
        let child =
            nl / total * gini(&left, nl) + nr / total * gini(&right, nr);
        let gain = parent_gini - child;
        if gain > 0.0 && best.map_or(true, |(_, g)| gain > g) {
            best = Some(((v + v_next) / 2.0, gain));
        }
    }
    best
}

impl DecisionTree {
    /// Class-count distribution of the leaf reached by `x`, normalized.
    pub fn leaf_distribution(&self, x: &FeatureVector) -> [f64; NUM_CLASSES] {
        let mut idx = 0usize;
        loop {
            match &self.nodes[idx] {
                TreeNode::Leaf { counts } => {
                    let total: u32 = counts.iter().sum();
                    let mut dist = [0.0; NUM_CLASSES];
                    for (d, &c) in dist.iter_mut().zip(counts) {
                        *d = c as f64 / total as f64;
                    }
                    return dist;
                }
                TreeNode::Split { feature, threshold, left, right, .. } => {
                    idx = if x.values()[*feature] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }
}

impl Forest {
    /// Soft-voting posterior: mean of per-tree leaf distributions.
    pub fn posterior(&self, x: &FeatureVector) -> [f64; NUM_CLASSES] {
        let mut acc = [0.0f64; NUM_CLASSES];
        for tree in &self.trees {
            let dist = tree.leaf_distribution(x);
            for (a, d) in acc.iter_mut().zip(&dist) {
                *a += d;
            }
        }
        for a in acc.iter_mut() {
            *a /= self.trees.len() as f64;
        }
        acc
    }

    /// Which features are used by at least one split.
    pub fn used_features(&self) -> Vec<bool> {
        let mut used = vec![false; self.n_features];
        for tree in &self.trees {
            for node in &tree.nodes {
                if let TreeNode::Split { feature, .. } = node {
                    used[*feature] = true;
                }
            }
        }
        used
    }
}

/// Mean decrease in Gini impurity per feature, normalized to sum 1.
/// A forest with no splits at all returns all zeros.
pub fn feature_importance(forest: &Forest) -> Vec<f64> {
    let mut imp = vec![0.0f64; forest.n_features];
    for tree in &forest.trees {
        for node in &tree.nodes {
            if let TreeNode::Split { feature, weighted_gain, .. } = node {
                imp[*feature] += weighted_gain;
            }
        }
    }
    let total: f64 = imp.iter().sum();
    if total > 0.0 {
        for v in imp.iter_mut() {
            *v /= total;
        }
    }
    imp
}

pub fn save_forest(forest: &Forest, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let werr = |e| Error::Io { path: path.to_path_buf(), source: e };
    w.write_all(FOREST_MAGIC).map_err(werr)?;
    w.write_u32::<LittleEndian>(FOREST_VERSION).map_err(werr)?;
    w.write_u32::<LittleEndian>(forest.n_features as u32).map_err(werr)?;
    w.write_u32::<LittleEndian>(NUM_CLASSES as u32).map_err(werr)?;
    w.write_u64::<LittleEndian>(forest.seed).map_err(werr)?;
    w.write_u32::<LittleEndian>(forest.trees.len() as u32).map_err(werr)?;
    for tree in &forest.trees {
        w.write_u32::<LittleEndian>(tree.nodes.len() as u32).map_err(werr)?;
        for node in &tree.nodes {
            match node {
                TreeNode::Split { feature, threshold, left, right, weighted_gain } => {
                    w.write_u8(0).map_err(werr)?;
                    w.write_u32::<LittleEndian>(*feature as u32).map_err(werr)?;
                    w.write_f64::<LittleEndian>(*threshold).map_err(werr)?;
                    w.write_u32::<LittleEndian>(*left).map_err(werr)?;
                    w.write_u32::<LittleEndian>(*right).map_err(werr)?;
                    w.write_f64::<LittleEndian>(*weighted_gain).map_err(werr)?;
                }
                TreeNode::Leaf { counts } => {
                    w.write_u8(1).map_err(werr)?;
                    for &c in counts {
                        w.write_u32::<LittleEndian>(c).map_err(werr)?;
                    }
                }
            }
        }
    }
    w.flush().map_err(io_err(path))
}

pub fn load_forest(path: &Path) -> Result<Forest> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let rerr =
        |_: std::io::Error| Error::Format(format!("forest file {} is truncated", path.display()));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(rerr)?;
    if &magic != FOREST_MAGIC {
        return Err(Error::Format(format!(
            "{} is not a forest file (bad magic bytes)",
            path.display()
        )));
    }
    let version = r.read_u32::<LittleEndian>().map_err(rerr)?;
    if version != FOREST_VERSION {
        return Err(Error::Format(format!(
            "forest file {} has version {version}, expected {FOREST_VERSION}",
            path.display()
        )));
    }
    let n_features = r.read_u32::<LittleEndian>().map_err(rerr)? as usize;
    let n_classes = r.read_u32::<LittleEndian>().map_err(rerr)? as usize;
    if n_classes != NUM_CLASSES {
        return Err(Error::Format(format!(
            "forest file {} declares {n_classes} classes, expected {NUM_CLASSES}",
            path.display()
        )));
    }
    let seed = r.read_u64::<LittleEndian>().map_err(rerr)?;
    let n_trees = r.read_u32::<LittleEndian>().map_err(rerr)? as usize;
    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let n_nodes = r.read_u32::<LittleEndian>().map_err(rerr)? as usize;
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let tag = r.read_u8().map_err(rerr)?;
            match tag {
                0 => {
                    let feature = r.read_u32::<LittleEndian>().map_err(rerr)? as usize;
                    let threshold = r.read_f64::<LittleEndian>().map_err(rerr)?;
                    let left = r.read_u32::<LittleEndian>().map_err(rerr)?;
                    let right = r.read_u32::<LittleEndian>().map_err(rerr)?;
                    let weighted_gain = r.read_f64::<LittleEndian>().map_err(rerr)?;
                    nodes.push(TreeNode::Split { feature, threshold, left, right, weighted_gain });
                }
                1 => {
                    let mut counts = [0u32; NUM_CLASSES];
                    for c in counts.iter_mut() {
                        *c = r.read_u32::<LittleEndian>().map_err(rerr)?;
                    }
                    nodes.push(TreeNode::Leaf { counts });
                }
                other => {
                    return Err(Error::Format(format!(
                        "forest file {}: unknown node tag {other}",
                        path.display()
                    )))
                }
            }
        }
        trees.push(DecisionTree { nodes });
    }
    Ok(Forest { trees, n_features, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(values: [f64; 3]) -> FeatureVector {
        let mut all = [0.0; NUM_FEATURES];
        all[..3].copy_from_slice(&values);
        FeatureVector::new(all).unwrap()
    }

    /// Five well-separated blobs along feature 0.
    fn blobs(per_class: usize, seed: u64) -> (Vec<FeatureVector>, Vec<usize>) {
        let mut rng = seeded(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for class in 0..NUM_CLASSES {
            for _ in 0..per_class {
                let center = class as f64 * 10.0;
                xs.push(fv([
                    center + rng.gen::<f64>(),
                    rng.gen::<f64>() * 5.0,
                    rng.gen::<f64>() * 5.0,
                ]));
                ys.push(class);
            }
        }
        (xs, ys)
    }

    #[test]
    fn single_class_training_predicts_that_class() {
        let xs: Vec<FeatureVector> = (0..6).map(|i| fv([i as f64, 0.0, 0.0])).collect();
        let ys = vec![3usize; 6];
        let forest = rf_train(&xs, &ys, 20, 1).unwrap();
        let p = forest.posterior(&fv([2.5, 0.0, 0.0]));
        assert_eq!(p[3], 1.0);
        assert_eq!(p.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn separable_blobs_reach_perfect_training_accuracy() {
        let (xs, ys) = blobs(20, 7);
        let forest = rf_train(&xs, &ys, 100, 42).unwrap();
        let correct = xs
            .iter()
            .zip(&ys)
            .filter(|(x, &y)| {
                let p = forest.posterior(x);
                let arg = p
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0;
                arg == y
            })
            .count();
        assert!(correct as f64 / xs.len() as f64 >= 0.99);
    }

    #[test]
    fn same_seed_gives_identical_forests() {
        let (xs, ys) = blobs(10, 3);
        let a = rf_train(&xs, &ys, 30, 9).unwrap();
        let b = rf_train(&xs, &ys, 30, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn importance_concentrates_on_the_informative_feature() {
        let (xs, ys) = blobs(20, 5);
        let forest = rf_train(&xs, &ys, 100, 11).unwrap();
        let imp = feature_importance(&forest);
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(imp[0] > 0.5, "feature 0 importance {}", imp[0]);
    }

    #[test]
    fn stump_forest_importance_only_on_used_features() {
        // Two classes split perfectly by feature 1: every tree is a stump
        // on feature 1 (the only informative one among candidates often,
        // but any split on an uninformative feature has zero gain).
        let xs: Vec<FeatureVector> =
            (0..20).map(|i| fv([0.0, if i < 10 { 0.0 } else { 1.0 }, 0.0])).collect();
        let ys: Vec<usize> = (0..20).map(|i| usize::from(i >= 10)).collect();
        let forest = rf_train(&xs, &ys, 50, 2).unwrap();
        let imp = feature_importance(&forest);
        let used = forest.used_features();
        for (f, (&i, &u)) in imp.iter().zip(&used).enumerate() {
            if !u {
                assert_eq!(i, 0.0, "unused feature {f} has importance");
            }
        }
        assert!(imp[1] > 0.99);
    }

    #[test]
    fn constant_feature_is_never_split_on() {
        // Feature 2 is constant; it can never produce an improving split,
        // so predictions do not depend on its value at query time.
        let (xs, ys) = blobs(15, 13);
        let forest = rf_train(&xs, &ys, 60, 21).unwrap();
        assert!(!forest.used_features()[5]); // features 3.. are all-zero
        let mut probe = *xs[7].values();
        let base = forest.posterior(&FeatureVector::new(probe).unwrap());
        probe[5] = 123.0;
        let poked = forest.posterior(&FeatureVector::new(probe).unwrap());
        assert_eq!(base, poked);
    }

    #[test]
    fn forest_file_round_trip() {
        let (xs, ys) = blobs(8, 17);
        let forest = rf_train(&xs, &ys, 15, 5).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("model.forest");
        save_forest(&forest, &path).unwrap();
        let loaded = load_forest(&path).unwrap();
        assert_eq!(loaded, forest);
    }

    #[test]
    fn forest_file_rejects_bad_magic_and_truncation() {
        let (xs, ys) = blobs(4, 1);
        let forest = rf_train(&xs, &ys, 3, 5).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("model.forest");
        save_forest(&forest, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_forest(&path), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_forest(&path), Err(Error::Format(_))));
    }
}
