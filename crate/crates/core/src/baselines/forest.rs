//! Random forest of Gini-split classification trees grown on bootstrap
//! resamples with `floor(sqrt(F))` candidate features per node.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{check_samples, BaselineError, FlatSample};
use crate::model::argmax;
use crate::numerics::Vector;

#[derive(Debug, Clone, PartialEq)]
pub struct ForestConfig {
    pub num_trees: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            num_trees: 400,
            max_depth: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Class counts of the training samples that reached the leaf.
    Leaf { histogram: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    fn leaf_for(&self, x: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { histogram } => return histogram,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &DecisionTree, at: usize) -> usize {
            match &t.nodes[at] {
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(self, 0)
    }

    /// Majority class of the leaf reached by `x`.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(self.leaf_for(x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<DecisionTree>,
    pub num_trees: usize,
    pub max_depth: usize,
    pub seed: u64,
    pub num_classes: usize,
    pub num_features: usize,
    /// Set when training saw a single class; the forest is then constant.
    pub single_class: bool,
}

fn gini(counts: &[f64], n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / n) * (c / n)).sum::<f64>()
}

struct Grower<'a> {
    samples: &'a [FlatSample],
    num_classes: usize,
    num_features: usize,
    max_depth: usize,
    try_features: usize,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl Grower<'_> {
    fn histogram(&self, idx: &[usize]) -> Vec<f64> {
        let mut h = vec![0.0; self.num_classes];
        for &i in idx {
            h[self.samples[i].label] += 1.0;
        }
        h
    }

    fn best_split_on(&self, idx: &[usize], feature: usize, total: &[f64]) -> Option<BestSplit> {
        let mut pairs: Vec<(f64, usize)> = idx
            .iter()
            .map(|&i| (self.samples[i].features[feature], self.samples[i].label))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = pairs.len() as f64;
        let mut left = vec![0.0; self.num_classes];
        let mut right = total.to_vec();
        let mut best: Option<BestSplit> = None;
        for k in 0..pairs.len() - 1 {
            let (v, label) = pairs[k];
            left[label] += 1.0;
            right[label] -= 1.0;
            let next = pairs[k + 1].0;
            if next <= v {
                continue;
            }
            let nl = (k + 1) as f64;
            let nr = n - nl;
            let impurity = (nl * gini(&left, nl) + nr * gini(&right, nr)) / n;
            if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                best = Some(BestSplit {
                    feature,
                    threshold: v + (next - v) / 2.0,
                    impurity,
                });
            }
        }
        best
    }

    fn grow(&self, idx: Vec<usize>, rng: &mut ChaCha8Rng) -> DecisionTree {
        let mut nodes = Vec::new();
        let mut features: Vec<usize> = (0..self.num_features).collect();
        // (node slot, samples, depth)
        let mut stack = vec![(0usize, idx, 0usize)];
        nodes.push(Node::Leaf {
            histogram: Vec::new(),
        });
        while let Some((slot, idx, depth)) = stack.pop() {
            let hist = self.histogram(&idx);
            let pure = hist.iter().filter(|&&c| c > 0.0).count() <= 1;
            let split = if pure || depth >= self.max_depth || idx.len() < 2 {
                None
            } else {
                features.shuffle(rng);
                let mut best: Option<BestSplit> = None;
                // Keep drawing past the budget only while no feature has
                // produced a valid split.
                for (tried, &f) in features.iter().enumerate() {
                    if tried >= self.try_features && best.is_some() {
                        break;
                    }
                    if let Some(s) = self.best_split_on(&idx, f, &hist) {
                        if best.as_ref().is_none_or(|b| s.impurity < b.impurity) {
                            best = Some(s);
                        }
                    }
                }
                best
            };
            match split {
                None => nodes[slot] = Node::Leaf { histogram: hist },
                Some(s) => {
                    let (l, r): (Vec<usize>, Vec<usize>) = idx
                        .iter()
                        .partition(|&&i| self.samples[i].features[s.feature] <= s.threshold);
                    let left = nodes.len();
                    let right = left + 1;
                    nodes.push(Node::Leaf {
                        histogram: Vec::new(),
                    });
                    nodes.push(Node::Leaf {
                        histogram: Vec::new(),
                    });
                    nodes[slot] = Node::Split {
                        feature: s.feature,
                        threshold: s.threshold,
                        left,
                        right,
                    };
                    stack.push((right, r, depth + 1));
                    stack.push((left, l, depth + 1));
                }
            }
        }
        DecisionTree { nodes }
    }
}

/// Grows `num_trees` trees; tree `i` draws from its own ChaCha stream so
/// parallel and serial runs agree exactly.
pub fn rf_fit(
    samples: &[FlatSample],
    num_classes: usize,
    cfg: &ForestConfig,
) -> Result<ForestModel, BaselineError> {
    if cfg.num_trees == 0 {
        return Err(BaselineError::Config("num_trees must be >= 1".into()));
    }
    if num_classes < 2 {
        return Err(BaselineError::TooFewClasses(num_classes));
    }
    let num_features = check_samples(samples, num_classes)?;
    let present = {
        let mut seen = vec![false; num_classes];
        samples.iter().for_each(|s| seen[s.label] = true);
        seen.iter().filter(|&&b| b).count()
    };
    let grower = Grower {
        samples,
        num_classes,
        num_features,
        max_depth: cfg.max_depth,
        try_features: ((num_features as f64).sqrt().floor() as usize).max(1),
    };
    let n = samples.len();
    let trees = (0..cfg.num_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(t as u64 + 1);
            let boot: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            grower.grow(boot, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        trees,
        num_trees: cfg.num_trees,
        max_depth: cfg.max_depth,
        seed: cfg.seed,
        num_classes,
        num_features,
        single_class: present == 1,
    })
}

/// Averages normalized leaf histograms over trees; the class is the argmax
/// with ties going to the lowest index.
pub fn rf_predict(m: &ForestModel, x: &Vector) -> Result<(usize, Vec<f64>), BaselineError> {
    if x.len() != m.num_features {
        return Err(BaselineError::Length {
            expected: m.num_features,
            found: x.len(),
        });
    }
    let mut votes = vec![0.0; m.num_classes];
    for tree in &m.trees {
        let leaf = tree.leaf_for(x.as_slice());
        let total: f64 = leaf.iter().sum();
        for (v, c) in votes.iter_mut().zip(leaf) {
            *v += c / total;
        }
    }
    let n = m.trees.len() as f64;
    votes.iter_mut().for_each(|v| *v /= n);
    Ok((argmax(&votes), votes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn flat(x: &[f64], label: usize) -> FlatSample {
        FlatSample {
            features: Vector::new(x.to_vec()).unwrap(),
            label,
        }
    }

    fn xor(seed: u64) -> Vec<FlatSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let mut out = Vec::new();
        for (cx, cy) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
            let label = usize::from((cx > 0.5) != (cy > 0.5));
            for _ in 0..50 {
                out.push(flat(
                    &[cx + noise.sample(&mut rng), cy + noise.sample(&mut rng)],
                    label,
                ));
            }
        }
        out
    }

    fn accuracy(m: &ForestModel, data: &[FlatSample]) -> f64 {
        let ok = data
            .iter()
            .filter(|s| rf_predict(m, &s.features).unwrap().0 == s.label)
            .count();
        ok as f64 / data.len() as f64
    }

    #[test]
    fn learns_xor() {
        let data = xor(1);
        let cfg = ForestConfig {
            num_trees: 50,
            max_depth: 2,
            seed: 3,
        };
        let m = rf_fit(&data, 2, &cfg).unwrap();
        assert!(accuracy(&m, &data) >= 0.95);
        assert!(m.trees.iter().all(|t| t.depth() <= 2));
    }

    #[test]
    fn constant_labels_give_constant_predictions() {
        let data: Vec<_> = (0..10).map(|i| flat(&[i as f64, -(i as f64)], 1)).collect();
        let m = rf_fit(&data, 3, &ForestConfig { num_trees: 5, ..Default::default() }).unwrap();
        assert!(m.single_class);
        for i in 0..10 {
            assert_eq!(rf_predict(&m, &data[i].features).unwrap().0, 1);
        }
        assert_eq!(rf_predict(&m, &Vector::new(vec![100.0, 3.0]).unwrap()).unwrap().0, 1);
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let data = xor(2);
        let cfg = ForestConfig {
            num_trees: 20,
            max_depth: 4,
            seed: 9,
        };
        let a = rf_fit(&data, 2, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| rf_fit(&data, 2, &cfg)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn votes_are_normalized_and_order_free() {
        let data = xor(3);
        let cfg = ForestConfig {
            num_trees: 15,
            max_depth: 3,
            seed: 1,
        };
        let m = rf_fit(&data, 2, &cfg).unwrap();
        let mut reversed = m.clone();
        reversed.trees.reverse();
        for s in &data {
            let (c, votes) = rf_predict(&m, &s.features).unwrap();
            assert!((votes.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(rf_predict(&reversed, &s.features).unwrap().0, c);
        }
    }

    #[test]
    fn single_tree_matches_leaf_majority() {
        let data = xor(4);
        let m = rf_fit(&data, 2, &ForestConfig { num_trees: 1, max_depth: 3, seed: 5 }).unwrap();
        for s in &data {
            assert_eq!(rf_predict(&m, &s.features).unwrap().0, m.trees[0].predict(s.features.as_slice()));
        }
    }

    #[test]
    fn leaves_are_nonempty_and_depth_bounded() {
        let data = xor(5);
        let m = rf_fit(&data, 2, &ForestConfig { num_trees: 10, max_depth: 10, seed: 2 }).unwrap();
        for t in &m.trees {
            assert!(t.depth() <= 10);
            for node in &t.nodes {
                if let Node::Leaf { histogram } = node {
                    assert!(histogram.iter().sum::<f64>() > 0.0);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(rf_fit(&[], 2, &ForestConfig::default()), Err(BaselineError::Empty));
        let data = vec![flat(&[1.0], 0), flat(&[1.0, 2.0], 1)];
        assert!(matches!(
            rf_fit(&data, 2, &ForestConfig::default()),
            Err(BaselineError::Length { .. })
        ));
        let m = rf_fit(&xor(1), 2, &ForestConfig { num_trees: 2, ..Default::default() }).unwrap();
        assert!(rf_predict(&m, &Vector::new(vec![1.0]).unwrap()).is_err());
    }

    #[test]
    fn split_thresholds_are_midpoints() {
        let data = vec![flat(&[1.0], 0), flat(&[1.0], 0), flat(&[3.0], 1), flat(&[3.0], 1)];
        let grower = Grower {
            samples: &data,
            num_classes: 2,
            num_features: 1,
            max_depth: 3,
            try_features: 1,
        };
        let s = grower.best_split_on(&[0, 1, 2, 3], 0, &[2.0, 2.0]).unwrap();
        assert_eq!(s.threshold, 2.0);
        assert_eq!(s.impurity, 0.0);
    }
}
