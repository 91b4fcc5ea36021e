//! Adaptive ellipsoids, membership tests, pairwise intersection via a convex
//! scalar criterion, and per-pair birth-scale solving.
//!
//! Scale convention used throughout the crate: the ellipsoid of a point with
//! covariance `sigma` at scale `eps` is
//!
//! ```text
//! E(eps) = { x : (x - c)^T sigma^{-1} (x - c) <= eps^2 }
//! ```
//!
//! with semi-axis lengths `eps * sqrt(lambda_j)` along the eigenvectors of
//! `sigma`. Growing `eps` therefore grows the ellipsoid, and `sigma = I`
//! reduces membership to a Euclidean ball of radius `eps`. The pairwise test
//! combines shape matrices as `eps^2 * (sigma_i / s + sigma_j / (1 - s))`,
//! which is the unique choice consistent with that reduction; a
//! boundary-sampling oracle in the test suite pins the convention down.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Bracket tolerance for the golden-section search over `s in (0, 1)`.
pub const GOLDEN_SECTION_TOL: f64 = 1e-6;
/// Iteration cap for the golden-section search.
pub const GOLDEN_SECTION_MAX_ITER: usize = 100;
/// `|min K| <= TANGENCY_TOL` counts as intersecting, absorbing round-off at
/// tangency; birth-scale bisection resolves the residual boundary fuzz.
pub const TANGENCY_TOL: f64 = 1e-9;
/// Default relative tolerance for birth-scale bisection.
pub const BIRTH_SCALE_REL_TOL: f64 = 1e-6;

/// An ellipsoid `{ x : (x - center)^T shape^{-1} (x - center) <= scale^2 }`.
#[derive(Debug, Clone)]
pub struct Ellipsoid {
    pub center: DVector<f64>,
    pub shape: DMatrix<f64>,
    pub scale: f64,
}

impl Ellipsoid {
    pub fn new(center: DVector<f64>, shape: DMatrix<f64>, scale: f64) -> Result<Self> {
        if shape.nrows() != center.len() || shape.ncols() != center.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape is {}x{} for a {}-dimensional center",
                shape.nrows(),
                shape.ncols(),
                center.len()
            )));
        }
        if !(scale > 0.0) {
            return Err(Error::InvalidParameter(format!("scale must be positive, got {scale}")));
        }
        Ok(Self { center, shape, scale })
    }

    /// Closed membership test: true iff the quadratic form is `<= scale^2`.
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        let diff = x - &self.center;
        mahalanobis_sq(&self.shape, &diff) <= self.scale * self.scale
    }
}

/// The quadratic form `diff^T sigma^{-1} diff`, computed by a symmetric
/// factorization rather than an explicit inverse.
pub fn mahalanobis_sq(sigma: &DMatrix<f64>, diff: &DVector<f64>) -> f64 {
    match Cholesky::new(sigma.clone()) {
        Some(ch) => {
            let w = ch.solve(diff);
            diff.dot(&w)
        }
        None => {
            let w = eigen_floor_solve(sigma, diff);
            diff.dot(&w)
        }
    }
}

/// Solve `sigma * w = rhs` through an eigendecomposition with the spectrum
/// floored at a tiny positive value. Fallback path for matrices that defeat
/// Cholesky; never panics.
fn eigen_floor_solve(sigma: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let eig = sigma.clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let floor = scale * 1e-300;
    let mut coeffs = eig.eigenvectors.transpose() * rhs;
    for (i, c) in coeffs.iter_mut().enumerate() {
        *c /= eig.eigenvalues[i].max(floor);
    }
    &eig.eigenvectors * coeffs
}

/// Outcome of a pairwise intersection test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntersectionResult {
    pub intersects: bool,
    /// Smallest criterion value seen during the search.
    pub k_min: f64,
    /// Location of that minimum in `(0, 1)`.
    pub s_at_min: f64,
    /// Golden-section iterations performed.
    pub iterations: usize,
}

/// Evaluates the intersection criterion
/// `K(s) = 1 - v^T (eps^2 (sigma_i / s + sigma_j / (1 - s)))^{-1} v`.
fn eval_criterion(
    sigma_i: &DMatrix<f64>,
    sigma_j: &DMatrix<f64>,
    v: &DVector<f64>,
    eps: f64,
    s: f64,
    shift: f64,
) -> f64 {
    let combined = |s: f64| -> DMatrix<f64> {
        let e2 = eps * eps;
        sigma_i * (e2 / s) + sigma_j * (e2 / (1.0 - s))
    };
    match Cholesky::new(combined(s)) {
        Some(ch) => 1.0 - v.dot(&ch.solve(v)),
        None => {
            // Singular sample: retry at s shifted toward the interior.
            let s2 = if s < 0.5 { (s + shift).min(0.5) } else { (s - shift).max(0.5) };
            match Cholesky::new(combined(s2)) {
                Some(ch) => 1.0 - v.dot(&ch.solve(v)),
                None => {
                    let m = combined(s2);
                    let w = eigen_floor_solve(&m, v);
                    1.0 - v.dot(&w)
                }
            }
        }
    }
}

/// Decides whether the ellipsoids of two points intersect at scale `eps` by
/// minimizing the convex criterion `K(s)` over `(0, 1)` with a golden-section
/// search. The search exits early as soon as a clearly negative value is
/// seen, declaring the pair non-intersecting.
pub fn intersection_test(
    sigma_i: &DMatrix<f64>,
    sigma_j: &DMatrix<f64>,
    x_i: &DVector<f64>,
    x_j: &DVector<f64>,
    eps: f64,
    tol: f64,
    max_iter: usize,
) -> IntersectionResult {
    debug_assert!(eps > 0.0 && tol > 0.0);
    let v = x_i - x_j;
    if v.norm_squared() == 0.0 {
        // Coincident centers: K(s) = 1 everywhere.
        return IntersectionResult { intersects: true, k_min: 1.0, s_at_min: 0.5, iterations: 0 };
    }

    const INV_PHI: f64 = 0.618_033_988_749_894_9; // 1 / golden ratio
    let eval = |s: f64| eval_criterion(sigma_i, sigma_j, &v, eps, s, tol);

    let (mut a, mut b) = (0.0f64, 1.0f64);
    let mut s1 = b - INV_PHI * (b - a);
    let mut s2 = a + INV_PHI * (b - a);
    let mut k1 = eval(s1);
    let mut k2 = eval(s2);
    let mut iterations = 0;
    let (mut k_min, mut s_at_min) = if k1 <= k2 { (k1, s1) } else { (k2, s2) };

    loop {
        if k_min < -TANGENCY_TOL {
            // Early termination: a negative sample certifies non-intersection.
            return IntersectionResult { intersects: false, k_min, s_at_min, iterations };
        }
        if b - a <= tol || iterations >= max_iter {
            break;
        }
        if k1 <= k2 {
            b = s2;
            s2 = s1;
            k2 = k1;
            s1 = b - INV_PHI * (b - a);
            k1 = eval(s1);
        } else {
            a = s1;
            s1 = s2;
            k1 = k2;
            s2 = a + INV_PHI * (b - a);
            k2 = eval(s2);
        }
        iterations += 1;
        let (k, s) = if k1 <= k2 { (k1, s1) } else { (k2, s2) };
        if k < k_min {
            k_min = k;
            s_at_min = s;
        }
    }

    IntersectionResult { intersects: k_min >= -TANGENCY_TOL, k_min, s_at_min, iterations }
}

/// Convenience wrapper with the default search tolerances.
pub fn intersects_at(
    sigma_i: &DMatrix<f64>,
    sigma_j: &DMatrix<f64>,
    x_i: &DVector<f64>,
    x_j: &DVector<f64>,
    eps: f64,
) -> bool {
    intersection_test(sigma_i, sigma_j, x_i, x_j, eps, GOLDEN_SECTION_TOL, GOLDEN_SECTION_MAX_ITER)
        .intersects
}

/// The smallest scale at which the two ellipsoids intersect, found by
/// bisection on `[0, eps_max]`; intersection is monotone nondecreasing in the
/// scale. Returns `None` when the pair does not intersect at `eps_max`.
pub fn edge_birth_scale(
    sigma_i: &DMatrix<f64>,
    sigma_j: &DMatrix<f64>,
    x_i: &DVector<f64>,
    x_j: &DVector<f64>,
    eps_max: f64,
    rel_tol: f64,
) -> Result<Option<f64>> {
    if !(eps_max > 0.0) {
        return Err(Error::InvalidParameter(format!("eps_max must be positive, got {eps_max}")));
    }
    if !(rel_tol > 0.0) {
        return Err(Error::InvalidParameter(format!("rel_tol must be positive, got {rel_tol}")));
    }
    if (x_i - x_j).norm_squared() == 0.0 {
        return Ok(Some(0.0));
    }
    if !intersects_at(sigma_i, sigma_j, x_i, x_j, eps_max) {
        return Ok(None);
    }
    Ok(Some(birth_scale_in_bracket(sigma_i, sigma_j, x_i, x_j, 0.0, eps_max, rel_tol)?))
}

/// Bisection on `[lo, hi]` assuming an intersection at `hi` and none below
/// the true birth scale; returns the converged upper end (an intersecting
/// scale within `rel_tol`).
pub(crate) fn birth_scale_in_bracket(
    sigma_i: &DMatrix<f64>,
    sigma_j: &DMatrix<f64>,
    x_i: &DVector<f64>,
    x_j: &DVector<f64>,
    mut lo: f64,
    mut hi: f64,
    rel_tol: f64,
) -> Result<f64> {
    if lo > hi {
        return Err(Error::InconsistentBracket { lo, hi });
    }
    while hi - lo > rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break; // bracket exhausted in floating point
        }
        if intersects_at(sigma_i, sigma_j, x_i, x_j, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Cheap two-sided bracket for a pair's birth scale from eigenvalue bounds:
/// each ellipsoid contains the ball of its smallest semi-axis and sits inside
/// the ball of its largest one, so the birth scale lies in
/// `[ |v| / (sqrt(l1_i) + sqrt(l1_j)), |v| / (sqrt(ld_i) + sqrt(ld_j)) ]`.
pub(crate) fn birth_scale_bounds(
    lambda_max_i: f64,
    lambda_min_i: f64,
    lambda_max_j: f64,
    lambda_min_j: f64,
    dist: f64,
) -> (f64, f64) {
    let lo = dist / (lambda_max_i.sqrt() + lambda_max_j.sqrt());
    let hi = dist / (lambda_min_i.sqrt() + lambda_min_j.sqrt());
    (lo, hi)
}

/// Cached Cholesky factor of a covariance for repeated membership tests
/// against one center's ellipsoid.
pub struct MembershipTester {
    factor: Option<Cholesky<f64, Dyn>>,
    sigma: DMatrix<f64>,
}

impl MembershipTester {
    pub fn new(sigma: &DMatrix<f64>) -> Self {
        Self { factor: Cholesky::new(sigma.clone()), sigma: sigma.clone() }
    }

    /// `diff^T sigma^{-1} diff <= eps^2`?
    pub fn contains(&self, diff: &DVector<f64>, eps: f64) -> bool {
        let q = match &self.factor {
            Some(ch) => diff.dot(&ch.solve(diff)),
            None => diff.dot(&eigen_floor_solve(&self.sigma, diff)),
        };
        q <= eps * eps
    }
}
