//! Lloyd's algorithm on scalars with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LossError;

/// Independent k-means++ initialisations tried per call; the lowest-cost
/// result wins.
pub const KMEANS_RESTARTS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Cluster index per input value; clusters are numbered by ascending centroid.
    pub assignments: Vec<usize>,
    /// Ascending centroids.
    pub centroids: Vec<f64>,
    /// Sum of squared distances to assigned centroids.
    pub cost: f64,
}

fn nearest(v: f64, centroids: &[f64]) -> usize {
    let mut best = 0;
    for (j, c) in centroids.iter().enumerate() {
        if (v - c).abs() < (v - centroids[best]).abs() {
            best = j;
        }
    }
    best
}

fn plus_plus_seed(values: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut centroids = vec![values[rng.random_range(0..values.len())]];
    while centroids.len() < k {
        let d2: Vec<f64> = values
            .iter()
            .map(|&v| centroids.iter().map(|c| (v - c).powi(2)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            // every value already coincides with a centroid
            centroids.push(values[rng.random_range(0..values.len())]);
            continue;
        }
        let mut r = rng.random::<f64>() * total;
        let mut pick = values.len() - 1;
        for (i, d) in d2.iter().enumerate() {
            if r < *d {
                pick = i;
                break;
            }
            r -= d;
        }
        centroids.push(values[pick]);
    }
    centroids
}

fn lloyd(values: &[f64], mut centroids: Vec<f64>, max_iters: usize) -> KMeansResult {
    let k = centroids.len();
    let mut assignments: Vec<usize> = values.iter().map(|&v| nearest(v, &centroids)).collect();
    for _ in 0..max_iters {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (v, &a) in values.iter().zip(&assignments) {
            sums[a] += v;
            counts[a] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j] / counts[j] as f64;
            }
        }
        let next: Vec<usize> = values.iter().map(|&v| nearest(v, &centroids)).collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }
    hartigan_refine(values, &mut assignments, &mut centroids);
    // renumber clusters by ascending centroid
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| centroids[a].total_cmp(&centroids[b]));
    let mut rank = vec![0; k];
    for (r, &j) in order.iter().enumerate() {
        rank[j] = r;
    }
    let cost = values
        .iter()
        .zip(&assignments)
        .map(|(v, &a)| (v - centroids[a]).powi(2))
        .sum();
    KMeansResult {
        assignments: assignments.iter().map(|&a| rank[a]).collect(),
        centroids: order.iter().map(|&j| centroids[j]).collect(),
        cost,
    }
}

/// Single-point transfers that strictly lower the cost, applied until none
/// remain. Escapes Lloyd fixed points where moving one value across a
/// boundary pays off once both centroids are updated.
fn hartigan_refine(values: &[f64], assignments: &mut [usize], centroids: &mut [f64]) {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    let mut sums = vec![0.0; k];
    for (v, &a) in values.iter().zip(assignments.iter()) {
        counts[a] += 1;
        sums[a] += v;
    }
    for j in 0..k {
        if counts[j] > 0 {
            centroids[j] = sums[j] / counts[j] as f64;
        }
    }
    let mut improved = true;
    while improved {
        improved = false;
        for (i, &v) in values.iter().enumerate() {
            let a = assignments[i];
            if counts[a] < 2 {
                continue;
            }
            let na = counts[a] as f64;
            let removal_gain = na / (na - 1.0) * (v - centroids[a]).powi(2);
            let mut best: Option<(usize, f64)> = None;
            for b in (0..k).filter(|&b| b != a) {
                let nb = counts[b] as f64;
                let cost = nb / (nb + 1.0) * (v - centroids[b]).powi(2);
                if cost < removal_gain * (1.0 - 1e-12) && best.is_none_or(|(_, c)| cost < c) {
                    best = Some((b, cost));
                }
            }
            if let Some((b, _)) = best {
                counts[a] -= 1;
                sums[a] -= v;
                counts[b] += 1;
                sums[b] += v;
                centroids[a] = sums[a] / counts[a] as f64;
                centroids[b] = sums[b] / counts[b] as f64;
                assignments[i] = b;
                improved = true;
            }
        }
    }
}

/// Clusters `values` into `k` groups. Deterministic for a given seed.
pub fn kmeans_1d(values: &[f64], k: usize, max_iters: usize, seed: u64) -> Result<KMeansResult, LossError> {
    if k == 0 || k > values.len() {
        return Err(LossError::InvalidK { k, n: values.len() });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(LossError::NonFinite(f64::NAN));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..KMEANS_RESTARTS {
        let init = plus_plus_seed(values, k, &mut rng);
        let r = lloyd(values, init, max_iters);
        if best.as_ref().is_none_or(|b| r.cost < b.cost) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one restart"))
}
