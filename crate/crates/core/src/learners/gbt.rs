//! Gradient-boosted regression trees.
//!
//! Regression boosts squared error with mean-valued leaves. Classification
//! boosts the logistic log-loss: each tree is grown on the gradient residuals
//! `y - p` and its leaves take one Newton step `Σr / Σp(1-p)`.

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::seq::index::sample;

use super::{GbtParams, MaxFeatures};
use crate::rng;

#[derive(Debug, Clone)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict_row(&self, x: ArrayView1<'_, f64>) -> f64 {
        let mut idx = 0;
        loop {
            match self.nodes[idx] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => idx = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GbtModel {
    init: f64,
    learning_rate: f64,
    trees: Vec<Tree>,
    classifier: bool,
    n_features: usize,
    loss_path: Vec<f64>,
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn log_loss(y: &[f64], f: &[f64]) -> f64 {
    let total: f64 = y
        .iter()
        .zip(f)
        .map(|(&y, &t)| {
            let sp = if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
            sp - y * t
        })
        .sum();
    total / y.len() as f64
}

fn squared_loss(y: &[f64], f: &[f64]) -> f64 {
    y.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

struct Grower<'a> {
    params: &'a GbtParams,
    x: ArrayView2<'a, f64>,
    /// Row indices sorted by each feature, computed once per fit.
    order: &'a [Vec<usize>],
    n_try: usize,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Grower<'_> {
    fn grow(
        &self,
        residual: &[f64],
        rng: &mut rng::Rng,
        leaf_value: &dyn Fn(&[usize]) -> f64,
    ) -> (Tree, Vec<usize>) {
        let m = self.x.nrows();
        let mut nodes = Vec::new();
        let mut leaf_of_row = vec![0usize; m];
        let mut node_of_row = vec![0usize; m];
        let all: Vec<usize> = (0..m).collect();
        self.grow_node(&mut nodes, &all, 0, residual, rng, leaf_value, &mut node_of_row, &mut leaf_of_row);
        (Tree { nodes }, leaf_of_row)
    }

    #[allow(clippy::too_many_arguments)]
    fn grow_node(
        &self,
        nodes: &mut Vec<Node>,
        rows: &[usize],
        depth: usize,
        residual: &[f64],
        rng: &mut rng::Rng,
        leaf_value: &dyn Fn(&[usize]) -> f64,
        node_of_row: &mut [usize],
        leaf_of_row: &mut [usize],
    ) -> usize {
        let id = nodes.len();
        nodes.push(Node::Leaf(0.0));
        let split = if depth < self.params.max_depth && rows.len() >= self.params.min_samples_split {
            self.best_split(id, rows, residual, rng, node_of_row)
        } else {
            None
        };
        match split {
            Some(best) => {
                let (l, r): (Vec<usize>, Vec<usize>) = rows
                    .iter()
                    .partition(|&&i| self.x[[i, best.feature]] <= best.threshold);
                let left = self.grow_node(nodes, &l, depth + 1, residual, rng, leaf_value, node_of_row, leaf_of_row);
                let right = self.grow_node(nodes, &r, depth + 1, residual, rng, leaf_value, node_of_row, leaf_of_row);
                nodes[id] = Node::Split {
                    feature: best.feature,
                    threshold: best.threshold,
                    left,
                    right,
                };
            }
            None => {
                nodes[id] = Node::Leaf(leaf_value(rows));
                for &i in rows {
                    leaf_of_row[i] = id;
                }
            }
        }
        id
    }

    fn best_split(
        &self,
        id: usize,
        rows: &[usize],
        residual: &[f64],
        rng: &mut rng::Rng,
        node_of_row: &mut [usize],
    ) -> Option<BestSplit> {
        let d = self.x.ncols();
        let mut features: Vec<usize> = if self.n_try < d {
            sample(rng, d, self.n_try).into_vec()
        } else {
            (0..d).collect()
        };
        features.sort_unstable();
        for &i in rows {
            node_of_row[i] = id;
        }
        let n = rows.len();
        let total: f64 = rows.iter().map(|&i| residual[i]).sum();
        let parent = total * total / n as f64;
        let min_leaf = self.params.min_samples_leaf;
        let mut best: Option<BestSplit> = None;
        for &f in &features {
            let mut left_sum = 0.0;
            let mut left_n = 0usize;
            let mut prev: Option<f64> = None;
            for &i in &self.order[f] {
                if node_of_row[i] != id {
                    continue;
                }
                let v = self.x[[i, f]];
                if let Some(pv) = prev {
                    if v > pv && left_n >= min_leaf && n - left_n >= min_leaf {
                        let right_sum = total - left_sum;
                        let gain = left_sum * left_sum / left_n as f64
                            + right_sum * right_sum / (n - left_n) as f64
                            - parent;
                        if best.as_ref().is_none_or(|b| gain > b.gain) {
                            best = Some(BestSplit {
                                feature: f,
                                threshold: pv + (v - pv) / 2.0,
                                gain,
                            });
                        }
                    }
                }
                left_sum += residual[i];
                left_n += 1;
                prev = Some(v);
            }
        }
        best.filter(|b| b.gain > 0.0)
    }
}

impl GbtModel {
    pub fn fit(params: &GbtParams, x: ArrayView2<'_, f64>, y: &[f64], classifier: bool, seed: u64) -> Self {
        let (m, d) = x.dim();
        let mean = y.iter().sum::<f64>() / m as f64;
        let init = if classifier {
            let p = mean.clamp(1e-12, 1.0 - 1e-12);
            (p / (1.0 - p)).ln()
        } else {
            mean
        };
        let mut model = Self {
            init,
            learning_rate: params.learning_rate,
            trees: Vec::with_capacity(params.n_estimators),
            classifier,
            n_features: d,
            loss_path: Vec::with_capacity(params.n_estimators + 1),
        };
        let mut f = vec![init; m];
        let loss = |f: &[f64]| if classifier { log_loss(y, f) } else { squared_loss(y, f) };
        model.loss_path.push(loss(&f));
        if d == 0 || (classifier && (mean == 0.0 || mean == 1.0)) {
            return model;
        }

        let order: Vec<Vec<usize>> = (0..d)
            .map(|j| {
                let mut idx: Vec<usize> = (0..m).collect();
                idx.sort_by(|&a, &b| x[[a, j]].total_cmp(&x[[b, j]]).then(a.cmp(&b)));
                idx
            })
            .collect();
        let n_try = match params.max_features {
            MaxFeatures::All => d,
            MaxFeatures::Sqrt => ((d as f64).sqrt() as usize).max(1),
        };
        let grower = Grower { params, x, order: &order, n_try };
        let mut rng = rng::from_path(seed, &[]);
        let mut residual = vec![0.0; m];
        let mut prob = vec![0.0; m];

        for _ in 0..params.n_estimators {
            for i in 0..m {
                if classifier {
                    prob[i] = sigmoid(f[i]);
                    residual[i] = y[i] - prob[i];
                } else {
                    residual[i] = y[i] - f[i];
                }
            }
            let leaf_value = |rows: &[usize]| -> f64 {
                let num: f64 = rows.iter().map(|&i| residual[i]).sum();
                if classifier {
                    let den: f64 = rows.iter().map(|&i| prob[i] * (1.0 - prob[i])).sum();
                    if den.abs() < 1e-150 { 0.0 } else { num / den }
                } else {
                    num / rows.len() as f64
                }
            };
            let (tree, leaf_of_row) = grower.grow(&residual, &mut rng, &leaf_value);
            for i in 0..m {
                if let Node::Leaf(v) = tree.nodes[leaf_of_row[i]] {
                    f[i] += params.learning_rate * v;
                }
            }
            model.loss_path.push(loss(&f));
            model.trees.push(tree);
        }
        model
    }

    pub fn is_classifier(&self) -> bool {
        self.classifier
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Training loss before boosting and after each tree.
    pub fn training_loss_path(&self) -> &[f64] {
        &self.loss_path
    }

    pub fn decision_function(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        Array1::from_iter(x.outer_iter().map(|row| {
            self.init
                + self.learning_rate * self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
        }))
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        let raw = self.decision_function(x);
        if self.classifier {
            raw.mapv(sigmoid)
        } else {
            raw
        }
    }
}
