//! Seeded k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// `k x dim`, row-major.
    pub centroids: Vec<f32>,
    pub k: usize,
    pub dim: usize,
    pub iterations: usize,
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (*x - *y) as f64;
            d * d
        })
        .sum()
}

impl KMeans {
    pub fn centroid(&self, i: usize) -> &[f32] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    /// Index of the nearest centroid; ties go to the lowest index.
    pub fn assign(&self, point: &[f32]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for c in 0..self.k {
            let d = sq_dist(point, self.centroid(c));
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        best
    }
}

/// Clusters `points` (`n x dim`, row-major) into `k` groups.
pub fn kmeans(points: &[f32], dim: usize, k: usize, max_iter: usize, seed: u64) -> Result<KMeans> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(Error::Dim(format!("{} values do not form {dim}-dim points", points.len())));
    }
    let n = points.len() / dim;
    if k == 0 {
        return Err(Error::Config("k-means needs k >= 1".into()));
    }
    if n < k {
        return Err(Error::TooShort(format!("{n} points cannot fill {k} clusters")));
    }
    let pt = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(pt(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(pt(i), &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            idx
        } else {
            // Every point already coincides with a center.
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(pt(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(pt(i), &centroids[start..start + dim]));
        }
    }

    let mut model = KMeans { centroids, k, dim, iterations: 0 };
    let mut labels = vec![usize::MAX; n];
    for it in 0..max_iter {
        let mut changed = false;
        for (i, l) in labels.iter_mut().enumerate() {
            let a = model.assign(pt(i));
            if a != *l {
                *l = a;
                changed = true;
            }
        }
        model.iterations = it + 1;
        if !changed {
            break;
        }
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(pt(i)) {
                *s += *v as f64;
            }
        }
        for c in 0..k {
            // Empty clusters keep their previous centroid.
            if counts[c] > 0 {
                for j in 0..dim {
                    model.centroids[c * dim + j] = (sums[c * dim + j] / counts[c] as f64) as f32;
                }
            }
        }
    }
    Ok(model)
}
