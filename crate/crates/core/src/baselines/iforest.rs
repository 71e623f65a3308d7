use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthgen::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsoForestConfig {
    pub n_trees: usize,
    /// Subsample size; clamped to the number of rows.
    pub psi: usize,
    pub seed: u64,
}

impl Default for IsoForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            psi: 256,
            seed: 0,
        }
    }
}

/// `c(n) = 2 H(n-1) - 2 (n-1) / n`, the mean unsuccessful-search path length
/// of a binary search tree over `n` points; 0 for `n <= 1`.
pub fn average_path_length(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let harmonic: f64 = (1..n).map(|i| 1.0 / i as f64).sum();
    2.0 * harmonic - 2.0 * (n - 1) as f64 / n as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf { size: usize },
    Split { dim: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn build<R: Rng>(data: &[Vec<f64>], rows: Vec<usize>, limit: usize, rng: &mut R) -> Self {
        let mut t = Tree { nodes: Vec::new() };
        t.grow(data, rows, 0, limit, rng);
        t
    }

    fn grow<R: Rng>(&mut self, data: &[Vec<f64>], rows: Vec<usize>, depth: usize, limit: usize, rng: &mut R) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { size: rows.len() });
        if depth >= limit || rows.len() <= 1 {
            return id;
        }
        let d = data[0].len();
        // Dimensions with zero range cannot separate anything.
        let ranges: Vec<(usize, f64, f64)> = (0..d)
            .filter_map(|j| {
                let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                    (lo.min(data[r][j]), hi.max(data[r][j]))
                });
                (hi > lo).then_some((j, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return id;
        }
        let (dim, lo, hi) = ranges[rng.gen_range(0..ranges.len())];
        let threshold = rng.gen_range(lo..hi);
        let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| data[i][dim] < threshold);
        let left = self.grow(data, l, depth + 1, limit, rng);
        let right = self.grow(data, r, depth + 1, limit, rng);
        self.nodes[id] = Node::Split {
            dim,
            threshold,
            left,
            right,
        };
        id
    }

    fn path_length(&self, x: &[f64]) -> f64 {
        let mut id = 0;
        let mut depth = 0.0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { size } => return depth + average_path_length(*size),
                Node::Split {
                    dim,
                    threshold,
                    left,
                    right,
                } => {
                    id = if x[*dim] < *threshold { *left } else { *right };
                    depth += 1.0;
                }
            }
        }
    }

    fn max_depth(&self) -> usize {
        fn go(t: &Tree, id: usize) -> usize {
            match &t.nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsoForest {
    pub psi: usize,
    pub dim: usize,
    pub height_limit: usize,
    trees: Vec<Tree>,
}

impl IsoForest {
    pub fn fit(data: &[Vec<f64>], cfg: &IsoForestConfig) -> Result<Self> {
        let n = data.len();
        let psi = cfg.psi.min(n);
        if psi < 2 || cfg.n_trees == 0 {
            return Err(Error::Invalid(format!(
                "isolation forest needs at least 2 rows and 1 tree (rows {n}, psi {}, trees {})",
                cfg.psi, cfg.n_trees
            )));
        }
        let dim = data[0].len();
        if dim == 0 || data.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape {
                op: "iforest",
                detail: "rows of unequal or zero width".into(),
            });
        }
        let height_limit = (psi as f64).log2().ceil() as usize;
        let trees = (0..cfg.n_trees)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0x1f, t as u64]));
                let rows = sample(&mut rng, n, psi).into_vec();
                Tree::build(data, rows, height_limit, &mut rng)
            })
            .collect();
        Ok(Self {
            psi,
            dim,
            height_limit,
            trees,
        })
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn mean_path_length(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::Shape {
                op: "iforest",
                detail: format!("query width {}, forest width {}", x.len(), self.dim),
            });
        }
        Ok(self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64)
    }

    /// `2^(-E[h(x)] / c(psi))`, in (0, 1].
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        Ok(score_from_path(self.mean_path_length(x)?, self.psi))
    }

    pub fn max_depth(&self) -> usize {
        self.trees.iter().map(Tree::max_depth).max().unwrap_or(0)
    }
}

pub(crate) fn score_from_path(mean_path: f64, psi: usize) -> f64 {
    2f64.powf(-mean_path / average_path_length(psi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn cluster(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nd = Normal::new(0.0, 0.3).unwrap();
        (0..n).map(|_| vec![nd.sample(&mut rng), nd.sample(&mut rng)]).collect()
    }

    #[test]
    fn c_values() {
        assert_eq!(average_path_length(1), 0.0);
        assert_eq!(average_path_length(2), 1.0);
        // c(3) = 2(1 + 1/2) - 4/3.
        assert!((average_path_length(3) - (3.0 - 4.0 / 3.0)).abs() < 1e-15);
        let h255: f64 = (1..=255).map(|i| 1.0 / i as f64).sum();
        assert!((average_path_length(256) - (2.0 * h255 - 2.0 * 255.0 / 256.0)).abs() < 1e-12);
    }

    #[test]
    fn path_equal_to_c_scores_half() {
        for psi in [2, 10, 256] {
            assert!((score_from_path(average_path_length(psi), psi) - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn outlier_beats_cluster_median() {
        let mut data = cluster(300, 4);
        data.push(vec![6.0, -6.0]);
        let f = IsoForest::fit(&data, &IsoForestConfig::default()).unwrap();
        let mut s: Vec<f64> = data[..300].iter().map(|x| f.score(x).unwrap()).collect();
        s.sort_by(f64::total_cmp);
        assert!(f.score(&data[300]).unwrap() > s[150]);
        assert!(s.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn seeded_and_height_limited() {
        let data = cluster(500, 1);
        let cfg = IsoForestConfig {
            n_trees: 20,
            ..IsoForestConfig::default()
        };
        let a = IsoForest::fit(&data, &cfg).unwrap();
        let b = IsoForest::fit(&data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.height_limit, 8);
        assert!(a.max_depth() <= 8);
        let c = IsoForest::fit(&data, &IsoForestConfig { seed: 9, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn constant_feature_is_skipped() {
        let data: Vec<Vec<f64>> = (0..50).map(|i| vec![3.0, i as f64]).collect();
        let f = IsoForest::fit(&data, &IsoForestConfig::default()).unwrap();
        assert!(f.score(&[3.0, 25.0]).unwrap().is_finite());
        let all_const: Vec<Vec<f64>> = vec![vec![1.0, 1.0]; 10];
        let g = IsoForest::fit(&all_const, &IsoForestConfig::default()).unwrap();
        // Root is a leaf of size psi, so E[h] = c(psi) and the score is 0.5.
        assert!((g.score(&[1.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn more_trees_less_rerun_variance() {
        let mut data = cluster(200, 2);
        data.push(vec![1.0, 1.0]);
        let q = [0.8, 0.9];
        let spread = |trees: usize| {
            let s: Vec<f64> = (0..20)
                .map(|seed| {
                    IsoForest::fit(&data, &IsoForestConfig { n_trees: trees, psi: 64, seed })
                        .unwrap()
                        .score(&q)
                        .unwrap()
                })
                .collect();
            let m = s.iter().sum::<f64>() / s.len() as f64;
            s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / s.len() as f64
        };
        assert!(spread(200) < spread(5));
    }

    #[test]
    fn too_few_rows_rejected() {
        assert!(IsoForest::fit(&[vec![1.0]], &IsoForestConfig::default()).is_err());
    }
}
