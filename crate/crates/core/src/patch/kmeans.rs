//! Scalar k-means over sorted data.
//!
//! In one dimension every Lloyd partition is a set of contiguous runs of the
//! sorted values, so an iteration is a handful of binary searches plus
//! prefix-sum lookups per cluster rather than a pass over all points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Upper bound on points used for k-means++ seeding.
const SEED_SAMPLE: usize = 8192;
/// Independent seedings; the lowest-distortion result wins.
const RESTARTS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans1d {
    /// Centroids, ascending.
    pub centroids: Vec<f64>,
    /// Cluster of each input value.
    pub assignments: Vec<usize>,
}

impl KMeans1d {
    /// Sum of squared distances to the assigned centroids.
    pub fn distortion(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .zip(&self.assignments)
            .map(|(v, &a)| (v - self.centroids[a]).powi(2))
            .sum()
    }
}

struct Sorted {
    v: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl Sorted {
    fn new(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let mut s1 = Vec::with_capacity(v.len() + 1);
        let mut s2 = Vec::with_capacity(v.len() + 1);
        s1.push(0.0);
        s2.push(0.0);
        for &x in &v {
            s1.push(s1.last().unwrap() + x);
            s2.push(s2.last().unwrap() + x * x);
        }
        Self { v, s1, s2 }
    }

    /// Run boundaries `[start_c, start_{c+1})` for ascending centroids.
    fn boundaries(&self, c: &[f64]) -> Vec<usize> {
        let mut b = Vec::with_capacity(c.len() + 1);
        b.push(0);
        for w in c.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            // Ties at the midpoint go to the lower centroid.
            b.push(self.v.partition_point(|&x| x <= mid));
        }
        b.push(self.v.len());
        b
    }

    fn total_cost(&self, c: &[f64]) -> f64 {
        let b = self.boundaries(c);
        (0..c.len()).map(|j| self.cost(b[j], b[j + 1], c[j])).sum()
    }

    fn cost(&self, lo: usize, hi: usize, c: f64) -> f64 {
        let n = (hi - lo) as f64;
        let s1 = self.s1[hi] - self.s1[lo];
        let s2 = self.s2[hi] - self.s2[lo];
        (s2 - 2.0 * c * s1 + n * c * c).max(0.0)
    }
}

/// Nearest entry of an ascending table; ties go to the lower index.
pub fn nearest_index(table: &[f64], x: f64) -> usize {
    let i = table.partition_point(|&c| c < x);
    if i == 0 {
        return 0;
    }
    if i == table.len() {
        return table.len() - 1;
    }
    if x - table[i - 1] <= table[i] - x {
        i - 1
    } else {
        i
    }
}

fn seed_centroids(sorted: &Sorted, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = sorted.v.len();
    let pool: Vec<f64> = if n <= SEED_SAMPLE {
        sorted.v.clone()
    } else {
        (0..SEED_SAMPLE).map(|_| sorted.v[rng.random_range(0..n)]).collect()
    };
    let mut centers = vec![pool[rng.random_range(0..pool.len())]];
    let mut d2: Vec<f64> = pool.iter().map(|&x| (x - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = pool.len() - 1;
        for (i, &d) in d2.iter().enumerate() {
            if target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        let c = pool[pick];
        centers.push(c);
        for (d, &x) in d2.iter_mut().zip(&pool) {
            *d = d.min((x - c).powi(2));
        }
    }
    centers.sort_by(f64::total_cmp);
    centers.dedup();
    centers
}

/// Seeded k-means++ initialization followed by Lloyd iterations, best of
/// several restarts. When the
/// data has at most `k` distinct values each one becomes a centroid.
pub fn kmeans_1d(values: &[f64], k: usize, iters: usize, seed: u64) -> KMeans1d {
    assert!(!values.is_empty(), "kmeans_1d needs at least one value");
    let k = k.max(1);
    let sorted = Sorted::new(values);

    let mut distinct = sorted.v.clone();
    distinct.dedup();
    let centroids = if distinct.len() <= k {
        distinct
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..RESTARTS {
            let c = lloyd(&sorted, initial_centroids(&sorted, &distinct, k, &mut rng), iters);
            let cost = sorted.total_cost(&c);
            if best.as_ref().is_none_or(|(b, _)| cost < *b) {
                best = Some((cost, c));
            }
        }
        best.unwrap().1
    };

    let assignments = values.iter().map(|&x| nearest_index(&centroids, x)).collect();
    KMeans1d { centroids, assignments }
}

fn initial_centroids(sorted: &Sorted, distinct: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut c = seed_centroids(sorted, k, rng);
    // Fill up to k when seeding ran out of distinct positions.
    let mut j = 0;
    while c.len() < k && j < distinct.len() {
        let x = distinct[(j * 7919) % distinct.len()];
        if c.binary_search_by(|p| p.total_cmp(&x)).is_err() {
            let at = c.partition_point(|&p| p < x);
            c.insert(at, x);
        }
        j += 1;
    }
    c
}

fn lloyd(sorted: &Sorted, mut c: Vec<f64>, iters: usize) -> Vec<f64> {
    let mut bounds = sorted.boundaries(&c);
    for _ in 0..iters {
        let mut next = c.clone();
        let mut empty = Vec::new();
        for j in 0..c.len() {
            let (lo, hi) = (bounds[j], bounds[j + 1]);
            if hi > lo {
                next[j] = (sorted.s1[hi] - sorted.s1[lo]) / (hi - lo) as f64;
            } else {
                empty.push(j);
            }
        }
        for j in empty {
            // Reseed at the point farthest from its own centroid; within a run
            // that is always one of the run's two ends.
            let b = sorted.boundaries(&next);
            let mut far = (0.0, None);
            for m in 0..next.len() {
                let (lo, hi) = (b[m], b[m + 1]);
                if hi == lo {
                    continue;
                }
                for x in [sorted.v[lo], sorted.v[hi - 1]] {
                    let d = (x - next[m]).abs();
                    if d > far.0 {
                        far = (d, Some(x));
                    }
                }
            }
            if let Some(x) = far.1 {
                next[j] = x;
            }
        }
        next.sort_by(f64::total_cmp);
        let nb = sorted.boundaries(&next);
        let converged = nb == bounds && next == c;
        c = next;
        bounds = nb;
        if converged {
            break;
        }
    }
    c.dedup();
    c
}

/// Total squared error of a set of centroids over sorted data.
pub fn sorted_distortion(values: &[f64], centroids: &[f64]) -> f64 {
    Sorted::new(values).total_cost(centroids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn exact_cover() {
        let values: Vec<f64> = (0..1000).map(|i| (i % 200) as f64 * 0.37 - 5.0).collect();
        let km = kmeans_1d(&values, 256, 25, 0);
        assert_eq!(km.centroids.len(), 200);
        assert_eq!(km.distortion(&values), 0.0);
    }

    #[test]
    fn single_cluster_is_mean() {
        let values = [1.0, 2.0, 4.0, 9.0];
        let km = kmeans_1d(&values, 1, 25, 3);
        assert_eq!(km.centroids, vec![4.0]);
        assert!(km.assignments.iter().all(|&a| a == 0));
    }

    fn brute_force_optimum(values: &[f64], k: usize) -> f64 {
        let n = values.len();
        let mut best = f64::INFINITY;
        let mut labels = vec![0usize; n];
        loop {
            let mut sum = vec![0.0; k];
            let mut cnt = vec![0usize; k];
            for (v, &l) in values.iter().zip(&labels) {
                sum[l] += v;
                cnt[l] += 1;
            }
            let cost: f64 = values
                .iter()
                .zip(&labels)
                .map(|(v, &l)| (v - sum[l] / cnt[l] as f64).powi(2))
                .sum();
            best = best.min(cost);
            // Next labeling in base k.
            let mut i = 0;
            while i < n {
                labels[i] += 1;
                if labels[i] < k {
                    break;
                }
                labels[i] = 0;
                i += 1;
            }
            if i == n {
                return best;
            }
        }
    }

    #[test]
    fn near_optimal_on_small_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..40 {
            let n = rng.random_range(4..=10);
            let k = rng.random_range(1..=3);
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let km = kmeans_1d(&values, k, 50, trial);
            let got = km.distortion(&values);
            let opt = brute_force_optimum(&values, k);
            assert!(got <= 1.05 * opt + 1e-9, "trial {trial}: {got} vs {opt}");
        }
    }

    #[test]
    fn deterministic_and_sorted() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let values: Vec<f64> = (0..20000).map(|_| noise.sample(&mut rng)).collect();
        let a = kmeans_1d(&values, 256, 25, 7);
        let b = kmeans_1d(&values, 256, 25, 7);
        assert_eq!(a, b);
        assert!(a.centroids.windows(2).all(|w| w[0] < w[1]));
        assert!(a.centroids.len() <= 256);
        let d = a.distortion(&values);
        assert!((d - sorted_distortion(&values, &a.centroids)).abs() < 1e-6 * d.max(1.0));
    }

    #[test]
    fn nearest_ties_go_low() {
        let t = [0.0, 1.0, 2.0];
        assert_eq!(nearest_index(&t, 0.5), 0);
        assert_eq!(nearest_index(&t, 0.51), 1);
        assert_eq!(nearest_index(&t, -4.0), 0);
        assert_eq!(nearest_index(&t, 9.0), 2);
    }
}
