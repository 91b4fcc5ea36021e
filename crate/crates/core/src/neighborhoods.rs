//! Spatio-temporal neighborhoods and per-point local covariance estimation.
//!
//! Every point gets a neighborhood that is the union of a temporal window
//! (indices within `tau` samples) and its `k` nearest spatial neighbors; the
//! empirical covariance of that neighborhood, centered at the point itself,
//! defines the adaptive ellipsoid used by the filtration.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::signal::TimeSeriesPointCloud;

/// Point count above which k-NN queries go through a kd-tree instead of an
/// exhaustive scan. Both backends return identical sets (ties broken by
/// smaller index).
const EXHAUSTIVE_LIMIT: usize = 2000;

/// Default relative ridge added to each covariance so eigenvalues stay
/// strictly positive on degenerate neighborhoods.
pub const DEFAULT_COVARIANCE_FLOOR: f64 = 1e-9;

/// Temporal half-width `tau` (samples) and spatial neighbor count `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeighborhoodSpec {
    pub tau: usize,
    pub k: usize,
}

impl NeighborhoodSpec {
    pub fn new(tau: usize, k: usize) -> Self {
        Self { tau, k }
    }
}

/// Indices `j` with `|j - i| <= tau`, clipped to `[0, n)`. Includes `i`.
pub fn temporal_neighborhood(i: usize, tau: usize, n: usize) -> Vec<usize> {
    assert!(i < n, "index {i} out of bounds for length {n}");
    let lo = i.saturating_sub(tau);
    let hi = (i + tau).min(n - 1);
    (lo..=hi).collect()
}

/// The `k` indices `j != i` closest to point `i` in Euclidean distance,
/// ties broken by smaller index. Returned sorted by index.
pub fn spatial_neighborhood(cloud: &TimeSeriesPointCloud, i: usize, k: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if k >= n {
        return Err(Error::InvalidParameter(format!(
            "k must be smaller than the cloud size, got k={k} for n={n}"
        )));
    }
    if n > EXHAUSTIVE_LIMIT {
        let tree = KdTree::build(cloud);
        Ok(knn_tree(&tree, cloud, i, k))
    } else {
        Ok(knn_exhaustive(cloud, i, k))
    }
}

/// Union of the temporal and spatial neighborhoods of `i`, sorted by index.
pub fn combined_neighborhood(
    cloud: &TimeSeriesPointCloud,
    i: usize,
    spec: &NeighborhoodSpec,
) -> Result<Vec<usize>> {
    let spatial = spatial_neighborhood(cloud, i, spec.k)?;
    Ok(merge_neighborhoods(temporal_neighborhood(i, spec.tau, cloud.len()), spatial))
}

fn merge_neighborhoods(temporal: Vec<usize>, spatial: Vec<usize>) -> Vec<usize> {
    let mut all = temporal;
    all.extend(spatial);
    all.sort_unstable();
    all.dedup();
    all
}

/// One point's regularized covariance with its cached eigendecomposition.
#[derive(Debug, Clone)]
pub struct LocalCovariance {
    sigma: DMatrix<f64>,
    eigvecs: DMatrix<f64>,
    eigvals: DVector<f64>,
}

impl LocalCovariance {
    /// The regularized covariance matrix.
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Orthonormal eigenvectors as columns, ordered to match `eigvals`.
    pub fn eigvecs(&self) -> &DMatrix<f64> {
        &self.eigvecs
    }

    /// Eigenvalues sorted descending; all strictly positive.
    pub fn eigvals(&self) -> &DVector<f64> {
        &self.eigvals
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigvals[0]
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigvals[self.eigvals.len() - 1]
    }
}

/// Empirical covariance of `neighborhood` centered at point `i` (not at the
/// neighborhood mean), plus a relative ridge `floor * max(trace/d, tiny)`.
pub fn local_covariance(
    cloud: &TimeSeriesPointCloud,
    i: usize,
    neighborhood: &[usize],
    floor: f64,
) -> Result<LocalCovariance> {
    if neighborhood.is_empty() {
        return Err(Error::InvalidParameter("neighborhood must be nonempty".into()));
    }
    if !(floor >= 0.0) {
        return Err(Error::InvalidParameter(format!("covariance floor must be >= 0, got {floor}")));
    }
    let d = cloud.dim();
    let center = cloud.point(i);
    let mut sigma = DMatrix::zeros(d, d);
    for &j in neighborhood {
        let diff = cloud.point(j) - center;
        // sigma += diff * diff^T
        sigma.ger(1.0, &diff, &diff, 1.0);
    }
    sigma /= neighborhood.len() as f64;
    let ridge = floor * (sigma.trace() / d as f64).max(f64::MIN_POSITIVE);
    for a in 0..d {
        sigma[(a, a)] += ridge;
    }
    // Symmetrize away accumulation noise before decomposing.
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    let eig = sigma.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut eigvecs = DMatrix::zeros(d, d);
    let mut eigvals = DVector::zeros(d);
    for (col, &src) in order.iter().enumerate() {
        eigvecs.set_column(col, &eig.eigenvectors.column(src));
        // Mathematically lambda >= ridge; clamp solver round-off to keep the
        // strict-positivity invariant.
        eigvals[col] = eig.eigenvalues[src].max(ridge.max(f64::MIN_POSITIVE));
    }
    Ok(LocalCovariance { sigma, eigvecs, eigvals })
}

/// Per-point covariances for a whole cloud.
#[derive(Debug, Clone)]
pub struct CovarianceField {
    per_point: Vec<LocalCovariance>,
    dim: usize,
    floor: f64,
}

impl CovarianceField {
    /// Builds the field by applying [`combined_neighborhood`] and
    /// [`local_covariance`] at every index. Per-point work runs in parallel.
    pub fn build(
        cloud: &TimeSeriesPointCloud,
        spec: &NeighborhoodSpec,
        floor: f64,
    ) -> Result<Self> {
        let n = cloud.len();
        let d = cloud.dim();
        if spec.tau + spec.k < d {
            return Err(Error::InvalidParameter(format!(
                "tau + k must be at least the dimension d={d}, got tau={} k={}",
                spec.tau, spec.k
            )));
        }
        if spec.k >= n {
            return Err(Error::InvalidParameter(format!(
                "k must be smaller than the cloud size, got k={} for n={n}",
                spec.k
            )));
        }
        let tree = (n > EXHAUSTIVE_LIMIT).then(|| KdTree::build(cloud));
        let per_point: Vec<LocalCovariance> = (0..n)
            .into_par_iter()
            .map(|i| {
                let spatial = match &tree {
                    Some(tree) => knn_tree(tree, cloud, i, spec.k),
                    None => knn_exhaustive(cloud, i, spec.k),
                };
                let neighborhood =
                    merge_neighborhoods(temporal_neighborhood(i, spec.tau, n), spatial);
                local_covariance(cloud, i, &neighborhood, floor)
            })
            .collect::<Result<_>>()?;
        Ok(Self { per_point, dim: d, floor })
    }

    /// A field of identity covariances: every ellipsoid is a ball.
    pub fn isotropic(n: usize, d: usize) -> Self {
        let unit = LocalCovariance {
            sigma: DMatrix::identity(d, d),
            eigvecs: DMatrix::identity(d, d),
            eigvals: DVector::from_element(d, 1.0),
        };
        Self { per_point: vec![unit; n], dim: d, floor: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.per_point.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_point.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Relative regularization floor used to build the field.
    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn at(&self, i: usize) -> &LocalCovariance {
        &self.per_point[i]
    }

    pub fn sigma(&self, i: usize) -> &DMatrix<f64> {
        &self.per_point[i].sigma
    }

    /// Checks that the field was built for `cloud`.
    pub fn check_aligned(&self, cloud: &TimeSeriesPointCloud) -> Result<()> {
        if self.len() != cloud.len() || self.dim != cloud.dim() {
            return Err(Error::ShapeMismatch(format!(
                "covariance field ({} points, d={}) does not match cloud ({} points, d={})",
                self.len(),
                self.dim,
                cloud.len(),
                cloud.dim()
            )));
        }
        Ok(())
    }
}

fn knn_exhaustive(cloud: &TimeSeriesPointCloud, i: usize, k: usize) -> Vec<usize> {
    let mut best = KnnHeap::new(k);
    let center = cloud.point(i);
    for (j, p) in cloud.points().iter().enumerate() {
        if j != i {
            best.offer((p - center).norm_squared(), j);
        }
    }
    best.into_sorted_indices()
}

/// Bounded candidate set ordered by `(distance^2, index)`; the max-root heap
/// keeps the k lexicographically smallest candidates.
struct KnnHeap {
    k: usize,
    // (dist2, index), max at the root
    heap: std::collections::BinaryHeap<Candidate>,
}

#[derive(PartialEq)]
struct Candidate(f64, usize);

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl KnnHeap {
    fn new(k: usize) -> Self {
        Self { k, heap: std::collections::BinaryHeap::with_capacity(k + 1) }
    }

    fn offer(&mut self, dist2: f64, index: usize) {
        if self.k == 0 {
            return;
        }
        if self.heap.len() < self.k {
            self.heap.push(Candidate(dist2, index));
        } else if let Some(worst) = self.heap.peek() {
            if Candidate(dist2, index) < *worst {
                self.heap.pop();
                self.heap.push(Candidate(dist2, index));
            }
        }
    }

    /// Worst distance currently kept, or infinity while the heap is not full.
    fn bound(&self) -> f64 {
        if self.heap.len() < self.k {
            f64::INFINITY
        } else {
            self.heap.peek().map_or(f64::INFINITY, |c| c.0)
        }
    }

    fn into_sorted_indices(self) -> Vec<usize> {
        let mut out: Vec<usize> = self.heap.into_iter().map(|c| c.1).collect();
        out.sort_unstable();
        out
    }
}

/// Static kd-tree over a cloud; median splits, cycling axes.
struct KdTree {
    // perm[lo..hi] holds the indices of a subtree; the median sits at the
    // pivot position, smaller coordinates left, larger right.
    perm: Vec<u32>,
}

impl KdTree {
    fn build(cloud: &TimeSeriesPointCloud) -> Self {
        let mut perm: Vec<u32> = (0..cloud.len() as u32).collect();
        let d = cloud.dim();
        build_recursive(cloud, &mut perm, 0, d);
        Self { perm }
    }
}

fn build_recursive(cloud: &TimeSeriesPointCloud, slice: &mut [u32], depth: usize, d: usize) {
    if slice.len() <= 1 {
        return;
    }
    let axis = depth % d;
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        cloud.point(a as usize)[axis]
            .total_cmp(&cloud.point(b as usize)[axis])
            .then(a.cmp(&b))
    });
    let (left, rest) = slice.split_at_mut(mid);
    build_recursive(cloud, left, depth + 1, d);
    build_recursive(cloud, &mut rest[1..], depth + 1, d);
}

fn knn_tree(tree: &KdTree, cloud: &TimeSeriesPointCloud, i: usize, k: usize) -> Vec<usize> {
    let mut best = KnnHeap::new(k);
    query_recursive(cloud, &tree.perm, 0, cloud.dim(), cloud.point(i), i, &mut best);
    best.into_sorted_indices()
}

fn query_recursive(
    cloud: &TimeSeriesPointCloud,
    slice: &[u32],
    depth: usize,
    d: usize,
    query: &DVector<f64>,
    skip: usize,
    best: &mut KnnHeap,
) {
    if slice.is_empty() {
        return;
    }
    let axis = depth % d;
    let mid = slice.len() / 2;
    let pivot = slice[mid] as usize;
    if pivot != skip {
        best.offer((cloud.point(pivot) - query).norm_squared(), pivot);
    }
    let delta = query[axis] - cloud.point(pivot)[axis];
    let (near, far) = if delta < 0.0 {
        (&slice[..mid], &slice[mid + 1..])
    } else {
        (&slice[mid + 1..], &slice[..mid])
    };
    query_recursive(cloud, near, depth + 1, d, query, skip, best);
    // Equal split distances may still hide a smaller-index tie, so only a
    // strictly larger gap prunes the far side.
    if delta * delta <= best.bound() {
        query_recursive(cloud, far, depth + 1, d, query, skip, best);
    }
}
