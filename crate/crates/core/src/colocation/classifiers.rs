//! Baseline classifiers over hand-crafted feature vectors.

use rand::seq::index;
use rand::Rng;
use samc_tensor::{init, rng, Adam, Tape, Tensor, Var};

use crate::error::{contract, invalid, Result};
use crate::model::argmax;

fn check_training(x: &[Vec<f64>], y: &[usize], classes: usize) -> Result<usize> {
    if x.is_empty() || x.len() != y.len() {
        return contract(format!("{} rows with {} labels", x.len(), y.len()));
    }
    let f = x[0].len();
    if f == 0 || x.iter().any(|r| r.len() != f) {
        return contract("feature rows must share a positive width");
    }
    if y.iter().any(|&c| c >= classes) {
        return contract("label outside the class range");
    }
    if y.iter().all(|&c| c == y[0]) {
        return invalid("training labels contain a single class");
    }
    Ok(f)
}

fn gini(counts: &[f64]) -> f64 {
    let n: f64 = counts.iter().sum();
    if n == 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / n) * (c / n)).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq)]
pub enum TreeNode {
    Leaf {
        /// Class distribution, sums to 1.
        distribution: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        /// Rows with `x[feature] <= threshold`.
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecisionTree {
    pub root: TreeNode,
    pub classes: usize,
}

fn leaf(counts: Vec<f64>) -> TreeNode {
    let n: f64 = counts.iter().sum();
    TreeNode::Leaf {
        distribution: counts.into_iter().map(|c| c / n).collect(),
    }
}

fn grow<R: Rng>(
    x: &[Vec<f64>],
    y: &[usize],
    rows: &[usize],
    classes: usize,
    depth: usize,
    max_features: Option<usize>,
    rng: &mut R,
) -> TreeNode {
    let mut counts = vec![0.0; classes];
    for &r in rows {
        counts[y[r]] += 1.0;
    }
    let parent = gini(&counts);
    if depth == 0 || parent == 0.0 {
        return leaf(counts);
    }
    let f = x[0].len();
    let candidates: Vec<usize> = match max_features {
        Some(m) if m < f => {
            let mut c = index::sample(rng, f, m).into_vec();
            c.sort_unstable();
            c
        }
        _ => (0..f).collect(),
    };
    let n = rows.len() as f64;
    let mut best: Option<(f64, usize, f64)> = None;
    let mut sorted: Vec<usize> = rows.to_vec();
    for &feat in &candidates {
        sorted.sort_by(|&a, &b| x[a][feat].total_cmp(&x[b][feat]).then(a.cmp(&b)));
        let mut left = vec![0.0; classes];
        let mut right = counts.clone();
        for w in 0..sorted.len() - 1 {
            let r = sorted[w];
            left[y[r]] += 1.0;
            right[y[r]] -= 1.0;
            let (v, next) = (x[r][feat], x[sorted[w + 1]][feat]);
            if v == next {
                continue;
            }
            let nl = (w + 1) as f64;
            let imp = (nl * gini(&left) + (n - nl) * gini(&right)) / n;
            let decrease = parent - imp;
            if decrease > 1e-12 && best.is_none_or(|(d, _, _)| decrease > d + 1e-12) {
                best = Some((decrease, feat, v + (next - v) / 2.0));
            }
        }
    }
    let Some((_, feature, threshold)) = best else {
        return leaf(counts);
    };
    let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][feature] <= threshold);
    TreeNode::Split {
        feature,
        threshold,
        left: Box::new(grow(x, y, &l, classes, depth - 1, max_features, rng)),
        right: Box::new(grow(x, y, &r, classes, depth - 1, max_features, rng)),
    }
}

impl DecisionTree {
    pub fn distribution(&self, row: &[f64]) -> &[f64] {
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf { distribution } => return distribution,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if row[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        argmax(self.distribution(row))
    }

    pub fn depth(&self) -> usize {
        fn d(n: &TreeNode) -> usize {
            match n {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + d(left).max(d(right)),
            }
        }
        d(&self.root)
    }
}

/// Gini tree of depth at most `max_depth`; a split is taken only when it
/// strictly lowers impurity.
pub fn fit_tree(x: &[Vec<f64>], y: &[usize], classes: usize, max_depth: usize) -> Result<DecisionTree> {
    check_training(x, y, classes)?;
    let rows: Vec<usize> = (0..x.len()).collect();
    let mut unused = rng::stream(0, "tree");
    Ok(DecisionTree {
        root: grow(x, y, &rows, classes, max_depth, None, &mut unused),
        classes,
    })
}

pub const FOREST_TREES: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            trees: FOREST_TREES,
            max_depth: 2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forest {
    pub trees: Vec<DecisionTree>,
    pub classes: usize,
}

impl Forest {
    /// Majority vote; ties go to the lower class id.
    pub fn predict(&self, row: &[f64]) -> usize {
        let mut votes = vec![0.0; self.classes];
        for t in &self.trees {
            votes[t.predict(row)] += 1.0;
        }
        argmax(&votes)
    }
}

/// Bootstrapped trees with `⌊√F⌋` candidate features per node.
pub fn fit_forest(x: &[Vec<f64>], y: &[usize], classes: usize, cfg: &ForestConfig) -> Result<Forest> {
    let f = check_training(x, y, classes)?;
    let m = ((f as f64).sqrt().floor() as usize).max(1);
    let n = x.len();
    let trees = (0..cfg.trees)
        .map(|t| {
            let mut r = rng::indexed_stream(cfg.seed, "forest", t as u64);
            let rows: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
            DecisionTree {
                root: grow(x, y, &rows, classes, cfg.max_depth, Some(m), &mut r),
                classes,
            }
        })
        .collect();
    Ok(Forest { trees, classes })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpConfig {
    pub hidden: usize,
    pub layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: 2048,
            layers: 4,
            epochs: 200,
            batch_size: 200,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Fully connected ReLU network over standardized inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Alternating weight and bias tensors.
    pub params: Vec<Tensor>,
    pub classes: usize,
}

fn standardize(rows: &[Vec<f64>], mean: &[f64], std: &[f64]) -> Vec<f64> {
    rows.iter()
        .flat_map(|r| r.iter().zip(mean).zip(std).map(|((v, m), s)| (v - m) / s))
        .collect()
}

fn mlp_forward(tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
    let mut h = x;
    let last = vars.len() / 2 - 1;
    for (l, wb) in vars.chunks(2).enumerate() {
        let y = tape.matmul(h, wb[0])?;
        let y = tape.add_row(y, wb[1])?;
        h = if l == last { y } else { tape.leaky_relu(y, 0.0)? };
    }
    Ok(h)
}

impl Mlp {
    pub fn logits(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let f = self.mean.len();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(rows.len(), f, standardize(rows, &self.mean, &self.std))?);
        let vars: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        let out = mlp_forward(&mut tape, &vars, x)?;
        Ok(tape.data(out).chunks(self.classes).map(<[f64]>::to_vec).collect())
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<usize>> {
        Ok(self.logits(rows)?.iter().map(|l| argmax(l)).collect())
    }
}

pub fn fit_mlp(x: &[Vec<f64>], y: &[usize], classes: usize, cfg: &MlpConfig) -> Result<Mlp> {
    let f = check_training(x, y, classes)?;
    if cfg.hidden == 0 || cfg.epochs == 0 || cfg.batch_size == 0 {
        return invalid("MLP hidden width, epochs and batch size must be positive");
    }
    let n = x.len() as f64;
    let mean: Vec<f64> = (0..f).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..f)
        .map(|j| {
            let v = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if v > 1e-24 { v.sqrt() } else { 1.0 }
        })
        .collect();
    let mut r = rng::stream(cfg.seed, "mlp/init");
    let mut widths = vec![f];
    widths.extend(std::iter::repeat_n(cfg.hidden, cfg.layers));
    widths.push(classes);
    let mut params = Vec::new();
    for w in widths.windows(2) {
        params.push(init::uniform_weight(w[0], w[1], &mut r));
        params.push(Tensor::zeros(&[w[1]]).with_grad());
    }
    let xs = standardize(x, &mean, &std);
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..x.len()).collect();
    for epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng::indexed_stream(cfg.seed, "mlp/shuffle", epoch as u64));
        for chunk in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let data: Vec<f64> = chunk.iter().flat_map(|&i| xs[i * f..(i + 1) * f].iter().copied()).collect();
            let xb = tape.constant(Tensor::matrix(chunk.len(), f, data)?);
            let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
            let out = mlp_forward(&mut tape, &vars, xb)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let loss = tape.cross_entropy(out, &labels)?;
            tape.backward(loss)?;
            for (p, v) in params.iter_mut().zip(&vars) {
                p.set_grad(tape.grad(*v).map_or_else(|| vec![0.0; p.numel()], <[f64]>::to_vec))?;
            }
            let mut refs: Vec<&mut Tensor> = params.iter_mut().collect();
            adam.step(&mut refs)?;
        }
    }
    Ok(Mlp {
        mean,
        std,
        params,
        classes,
    })
}

/// Any fitted baseline.
#[derive(Clone, Debug, PartialEq)]
pub enum Classifier {
    Tree(DecisionTree),
    Forest(Forest),
    Mlp(Mlp),
}

impl Classifier {
    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<usize>> {
        match self {
            Self::Tree(t) => Ok(rows.iter().map(|r| t.predict(r)).collect()),
            Self::Forest(f) => Ok(rows.iter().map(|r| f.predict(r)).collect()),
            Self::Mlp(m) => m.predict(rows),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_feature_is_learned() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<usize> = (0..20).map(|i| usize::from(i >= 10)).collect();
        let t = fit_tree(&x, &y, 2, 2).unwrap();
        assert!(x.iter().zip(&y).all(|(r, &l)| t.predict(r) == l));
        assert_eq!(t.depth(), 1);
        assert!(fit_tree(&x, &[0; 20], 2, 2).is_err());
    }

    #[test]
    fn leaves_are_distributions() {
        let x: Vec<Vec<f64>> = (0..9).map(|i| vec![(i % 3) as f64, (i / 3) as f64]).collect();
        let y: Vec<usize> = (0..9).map(|i| i % 2).collect();
        let t = fit_tree(&x, &y, 2, 2).unwrap();
        fn walk(n: &TreeNode) {
            match n {
                TreeNode::Leaf { distribution } => assert!((distribution.iter().sum::<f64>() - 1.0).abs() < 1e-12),
                TreeNode::Split { left, right, .. } => {
                    walk(left);
                    walk(right);
                }
            }
        }
        walk(&t.root);
    }
}
