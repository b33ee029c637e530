//! Bagged CART regression trees with impurity-based importances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: Box<Node>, right: Box<Node> },
}

impl Node {
    fn predict(&self, row: &[f64]) -> f64 {
        match self {
            Node::Leaf(v) => *v,
            Node::Split { feature, threshold, left, right } => {
                if row[*feature] <= *threshold {
                    left.predict(row)
                } else {
                    right.predict(row)
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Forest {
    trees: Vec<Node>,
    d: usize,
    /// Mean over trees of each tree's normalized impurity decrease.
    pub importance: Vec<f64>,
}

struct Builder<'a> {
    x: &'a [f64],
    y: &'a [f64],
    d: usize,
    max_depth: usize,
    gain: Vec<f64>,
}

impl Builder<'_> {
    fn build(&mut self, rows: &mut [usize], depth: usize) -> Node {
        let n = rows.len() as f64;
        let sum: f64 = rows.iter().map(|&i| self.y[i]).sum();
        let mean = sum / n;
        if depth >= self.max_depth || rows.len() < 2 {
            return Node::Leaf(mean);
        }
        let sse = rows.iter().map(|&i| (self.y[i] - mean).powi(2)).sum::<f64>();
        if sse <= 1e-12 {
            return Node::Leaf(mean);
        }
        // best split: maximize the between-group sum of squares
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order: Vec<usize> = rows.to_vec();
        for f in 0..self.d {
            order.sort_by(|&a, &b| self.x[a * self.d + f].total_cmp(&self.x[b * self.d + f]));
            let mut left_sum = 0.0;
            for (cut, pair) in order.windows(2).enumerate() {
                left_sum += self.y[pair[0]];
                let (lo, hi) = (self.x[pair[0] * self.d + f], self.x[pair[1] * self.d + f]);
                if lo == hi {
                    continue;
                }
                let nl = (cut + 1) as f64;
                let nr = n - nl;
                let right_sum = sum - left_sum;
                let score = left_sum * left_sum / nl + right_sum * right_sum / nr - sum * sum / n;
                if best.is_none_or(|(_, _, s)| score > s) {
                    best = Some((f, 0.5 * (lo + hi), score));
                }
            }
        }
        let Some((feature, threshold, score)) = best else {
            return Node::Leaf(mean);
        };
        if score <= 0.0 {
            return Node::Leaf(mean);
        }
        self.gain[feature] += score;
        let split = partition(rows, |i| self.x[i * self.d + feature] <= threshold);
        let (l, r) = rows.split_at_mut(split);
        let left = Box::new(self.build(l, depth + 1));
        let right = Box::new(self.build(r, depth + 1));
        Node::Split { feature, threshold, left, right }
    }
}

/// Moves rows satisfying `pred` to the front; returns how many did.
fn partition(rows: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let mut k = 0;
    for i in 0..rows.len() {
        if pred(rows[i]) {
            rows.swap(i, k);
            k += 1;
        }
    }
    k
}

impl Forest {
    /// Fits `trees` trees of depth at most `max_depth`, each on a bootstrap
    /// resample of the rows of `x` (`n × d`, row-major).
    pub(crate) fn fit(x: &[f64], y: &[f64], d: usize, trees: usize, max_depth: usize, seed: u64) -> Self {
        let n = y.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut importance = vec![0.0; d];
        let mut out = Vec::with_capacity(trees);
        for _ in 0..trees {
            let mut rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut b = Builder { x, y, d, max_depth, gain: vec![0.0; d] };
            out.push(b.build(&mut rows, 0));
            let total: f64 = b.gain.iter().sum();
            if total > 0.0 {
                for (imp, g) in importance.iter_mut().zip(&b.gain) {
                    *imp += g / total;
                }
            }
        }
        for v in &mut importance {
            *v /= trees.max(1) as f64;
        }
        Self { trees: out, d, importance }
    }

    pub(crate) fn predict(&self, x: &[f64]) -> Vec<f64> {
        x.chunks(self.d)
            .map(|row| self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64)
            .collect()
    }
}
