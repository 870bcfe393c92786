//! Bipartite spectral co-clustering of a nonnegative matrix.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITERS: usize = 300;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoclusterOrdering {
    /// `row_perm[i]` is the source row shown at position `i`.
    pub row_perm: Vec<usize>,
    pub col_perm: Vec<usize>,
    pub k: usize,
    /// Cluster per source row; `None` for all-zero rows.
    pub row_clusters: Vec<Option<usize>>,
    pub col_clusters: Vec<Option<usize>>,
}

/// Lloyd's algorithm with k-means++ seeding; best inertia over restarts wins.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let (inertia, labels) = kmeans_once(points, k, &mut rng);
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, labels));
        }
    }
    best.map(|(_, l)| l).unwrap_or_default()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_once(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> (f64, Vec<usize>) {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let idx = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            nearest
                .iter()
                .position(|&d| {
                    r -= d;
                    r < 0.0
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[idx].clone());
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(dist2(p, &centers[centers.len() - 1]));
        }
    }

    let dim = points[0].len();
    let mut labels = vec![0usize; n];
    for iter in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (l, p) in labels.iter_mut().zip(points) {
            let mut arg = 0;
            let mut best = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = dist2(p, center);
                if d < best {
                    best = d;
                    arg = c;
                }
            }
            if *l != arg {
                *l = arg;
                changed = true;
            }
        }
        if !changed && iter > 0 {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&l, p) in labels.iter().zip(points) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let inertia = labels.iter().zip(points).map(|(&l, p)| dist2(p, &centers[l])).sum();
    (inertia, labels)
}

/// Clusters rows and columns jointly into `k` groups and returns orderings
/// that make the groups contiguous.
///
/// All-zero rows and columns are left out of the embedding and placed last.
/// Clusters are numbered by first appearance scanning rows then columns, so an
/// already block-ordered matrix keeps its order.
pub fn spectral_cocluster(matrix: &Tensor<f64>, k: usize, seed: u64) -> Result<CoclusterOrdering> {
    let (p, v) = matrix.dims2();
    if k < 2 {
        return Err(Error::config("co-clustering needs k >= 2"));
    }
    if k > p.min(v) {
        return Err(Error::config(format!("k = {k} exceeds min({p}, {v})")));
    }
    if matrix.data().iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::Data("co-clustering input must be finite and nonnegative".into()));
    }

    let row_sum: Vec<f64> = (0..p).map(|i| matrix.row(i).iter().sum()).collect();
    let col_sum: Vec<f64> = (0..v).map(|j| (0..p).map(|i| matrix.get2(i, j)).sum()).collect();
    let rows: Vec<usize> = (0..p).filter(|&i| row_sum[i] > 0.0).collect();
    let cols: Vec<usize> = (0..v).filter(|&j| col_sum[j] > 0.0).collect();
    if k > rows.len().min(cols.len()) {
        return Err(Error::config(format!(
            "k = {k} exceeds the {}×{} nonzero part of the matrix",
            rows.len(),
            cols.len()
        )));
    }

    let an = DMatrix::from_fn(rows.len(), cols.len(), |a, b| {
        let (i, j) = (rows[a], cols[b]);
        matrix.get2(i, j) / (row_sum[i] * col_sum[j]).sqrt()
    });
    let svd = an.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let l = (k as f64).log2().ceil() as usize;
    let picked: Vec<usize> = order.iter().skip(1).take(l).copied().collect();

    let mut points = Vec::with_capacity(rows.len() + cols.len());
    for (a, &i) in rows.iter().enumerate() {
        let s = row_sum[i].sqrt();
        points.push(picked.iter().map(|&q| u[(a, q)] / s).collect::<Vec<f64>>());
    }
    for (b, &j) in cols.iter().enumerate() {
        let s = col_sum[j].sqrt();
        points.push(picked.iter().map(|&q| vt[(q, b)] / s).collect::<Vec<f64>>());
    }
    let raw = kmeans(&points, k, seed);

    let mut relabel = vec![usize::MAX; k];
    let mut next = 0;
    for &c in &raw {
        if relabel[c] == usize::MAX {
            relabel[c] = next;
            next += 1;
        }
    }
    let mut row_clusters = vec![None; p];
    let mut col_clusters = vec![None; v];
    for (a, &i) in rows.iter().enumerate() {
        row_clusters[i] = Some(relabel[raw[a]]);
    }
    for (b, &j) in cols.iter().enumerate() {
        col_clusters[j] = Some(relabel[raw[rows.len() + b]]);
    }

    let sorted = |cl: &[Option<usize>]| {
        let mut idx: Vec<usize> = (0..cl.len()).collect();
        idx.sort_by_key(|&i| cl[i].unwrap_or(usize::MAX));
        idx
    };
    Ok(CoclusterOrdering {
        row_perm: sorted(&row_clusters),
        col_perm: sorted(&col_clusters),
        k,
        row_clusters,
        col_clusters,
    })
}
