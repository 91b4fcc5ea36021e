//! Filtered flag complexes (dimension <= 2) from three proximity rules:
//! pairwise ellipsoid intersection, Euclidean distance (Vietoris-Rips, in the
//! diameter convention of "edge at the pairwise distance"), and the Fermat
//! path metric.

use std::collections::HashMap;
use std::io::{self, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::ellipsoid::{
    birth_scale_bounds, birth_scale_in_bracket, intersects_at, BIRTH_SCALE_REL_TOL,
};
use crate::error::{Error, Result};
use crate::neighborhoods::CovarianceField;
use crate::signal::TimeSeriesPointCloud;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilteredEdge {
    pub i: u32,
    pub j: u32,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilteredTriangle {
    pub i: u32,
    pub j: u32,
    pub k: u32,
    pub value: f64,
}

/// A filtered flag complex: all vertices at value 0, edges at their birth
/// value, triangles at the maximum of their edge values. Edges and triangles
/// are kept sorted by `(value, vertex order)`.
#[derive(Debug, Clone)]
pub struct FilteredComplex {
    n_vertices: usize,
    edges: Vec<FilteredEdge>,
    triangles: Vec<FilteredTriangle>,
    scale_cap: f64,
}

impl FilteredComplex {
    /// Builds the flag complex determined by an edge list: triangles are
    /// exactly the triples whose three edges are present.
    pub fn from_edges(
        n_vertices: usize,
        raw_edges: Vec<(usize, usize, f64)>,
        scale_cap: f64,
    ) -> Result<Self> {
        if n_vertices == 0 {
            return Err(Error::InvalidParameter("complex needs at least one vertex".into()));
        }
        let mut edges = Vec::with_capacity(raw_edges.len());
        for (a, b, value) in raw_edges {
            if a == b || a >= n_vertices || b >= n_vertices {
                return Err(Error::InvalidParameter(format!(
                    "edge ({a}, {b}) is not a pair of distinct vertices below {n_vertices}"
                )));
            }
            if !value.is_finite() || value < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "edge ({a}, {b}) has invalid filtration value {value}"
                )));
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            edges.push(FilteredEdge { i: i as u32, j: j as u32, value });
        }
        edges.sort_by(|a, b| {
            a.value.total_cmp(&b.value).then(a.i.cmp(&b.i)).then(a.j.cmp(&b.j))
        });
        if let Some(w) = edges.windows(2).find(|w| w[0].i == w[1].i && w[0].j == w[1].j) {
            return Err(Error::InvalidParameter(format!(
                "duplicate edge ({}, {})",
                w[0].i, w[0].j
            )));
        }

        let value_of: HashMap<(u32, u32), f64> =
            edges.iter().map(|e| ((e.i, e.j), e.value)).collect();
        let mut adjacency: Vec<Vec<u32>> = vec![Vec::new(); n_vertices];
        for e in &edges {
            adjacency[e.i as usize].push(e.j);
            adjacency[e.j as usize].push(e.i);
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
        }

        let mut triangles = Vec::new();
        for e in &edges {
            // common neighbors k > j close the triangle i < j < k
            let (ni, nj) = (&adjacency[e.i as usize], &adjacency[e.j as usize]);
            let (mut a, mut b) = (ni.partition_point(|&v| v <= e.j), nj.partition_point(|&v| v <= e.j));
            while a < ni.len() && b < nj.len() {
                match ni[a].cmp(&nj[b]) {
                    std::cmp::Ordering::Less => a += 1,
                    std::cmp::Ordering::Greater => b += 1,
                    std::cmp::Ordering::Equal => {
                        let k = ni[a];
                        let v_ik = value_of[&(e.i, k)];
                        let v_jk = value_of[&(e.j, k)];
                        triangles.push(FilteredTriangle {
                            i: e.i,
                            j: e.j,
                            k,
                            value: e.value.max(v_ik).max(v_jk),
                        });
                        a += 1;
                        b += 1;
                    }
                }
            }
        }
        triangles.sort_by(|a, b| {
            a.value
                .total_cmp(&b.value)
                .then(a.i.cmp(&b.i))
                .then(a.j.cmp(&b.j))
                .then(a.k.cmp(&b.k))
        });

        Ok(Self { n_vertices, edges, triangles, scale_cap })
    }

    /// Assembles a complex from parts without deriving triangles; the caller
    /// is trusted, `validate` checks the result.
    pub fn from_parts(
        n_vertices: usize,
        mut edges: Vec<FilteredEdge>,
        mut triangles: Vec<FilteredTriangle>,
        scale_cap: f64,
    ) -> Self {
        edges.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.i.cmp(&b.i)).then(a.j.cmp(&b.j)));
        triangles.sort_by(|a, b| {
            a.value.total_cmp(&b.value).then(a.i.cmp(&b.i)).then(a.j.cmp(&b.j)).then(a.k.cmp(&b.k))
        });
        Self { n_vertices, edges, triangles, scale_cap }
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn edges(&self) -> &[FilteredEdge] {
        &self.edges
    }

    pub fn triangles(&self) -> &[FilteredTriangle] {
        &self.triangles
    }

    /// Largest scale the construction was allowed to reach; features alive
    /// beyond it are reported against this cap.
    pub fn scale_cap(&self) -> f64 {
        self.scale_cap
    }

    /// Edge set of the snapshot at scale `eps` (edges with value <= `eps`).
    pub fn edges_at(&self, eps: f64) -> Vec<(u32, u32)> {
        let cut = self.edges.partition_point(|e| e.value <= eps);
        let mut out: Vec<(u32, u32)> = self.edges[..cut].iter().map(|e| (e.i, e.j)).collect();
        out.sort_unstable();
        out
    }

    /// Checks the filtration invariant: every face of every simplex is
    /// present with a value no larger than the simplex's own.
    pub fn validate(&self) -> Result<()> {
        let mut value_of: HashMap<(u32, u32), f64> = HashMap::with_capacity(self.edges.len());
        for e in &self.edges {
            if e.i >= e.j || e.j as usize >= self.n_vertices {
                return Err(Error::InvalidFiltration(format!(
                    "edge ({}, {}) is not an ordered pair of vertices",
                    e.i, e.j
                )));
            }
            if !e.value.is_finite() || e.value < 0.0 {
                return Err(Error::InvalidFiltration(format!(
                    "edge ({}, {}) has invalid value {}",
                    e.i, e.j, e.value
                )));
            }
            if value_of.insert((e.i, e.j), e.value).is_some() {
                return Err(Error::InvalidFiltration(format!("duplicate edge ({}, {})", e.i, e.j)));
            }
        }
        if let Some(w) = self.edges.windows(2).find(|w| w[0].value > w[1].value) {
            return Err(Error::InvalidFiltration(format!(
                "edges ({}, {}) and ({}, {}) are out of filtration order",
                w[0].i, w[0].j, w[1].i, w[1].j
            )));
        }
        for t in &self.triangles {
            if !(t.i < t.j && t.j < t.k) || t.k as usize >= self.n_vertices {
                return Err(Error::InvalidFiltration(format!(
                    "triangle ({}, {}, {}) is not an ordered vertex triple",
                    t.i, t.j, t.k
                )));
            }
            for face in [(t.i, t.j), (t.i, t.k), (t.j, t.k)] {
                match value_of.get(&face) {
                    Some(&v) if v <= t.value => {}
                    Some(&v) => {
                        return Err(Error::InvalidFiltration(format!(
                            "triangle ({}, {}, {}) at {} has face ({}, {}) at larger value {v}",
                            t.i, t.j, t.k, t.value, face.0, face.1
                        )))
                    }
                    None => {
                        return Err(Error::InvalidFiltration(format!(
                            "triangle ({}, {}, {}) is missing face ({}, {})",
                            t.i, t.j, t.k, face.0, face.1
                        )))
                    }
                }
            }
        }
        if let Some(w) = self.triangles.windows(2).find(|w| w[0].value > w[1].value) {
            return Err(Error::InvalidFiltration(format!(
                "triangles ({}, {}, {}) and ({}, {}, {}) are out of filtration order",
                w[0].i, w[0].j, w[0].k, w[1].i, w[1].j, w[1].k
            )));
        }
        Ok(())
    }

    /// Writes the edge list as CSV rows `i,j,value`, sorted by value.
    pub fn write_edge_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "i,j,value")?;
        for e in &self.edges {
            writeln!(w, "{},{},{}", e.i, e.j, e.value)?;
        }
        Ok(())
    }
}

/// Vietoris-Rips filtration under the diameter convention: an edge appears at
/// the Euclidean distance of its endpoints, and is omitted above `r_max`.
pub fn vietoris_rips_filtration(
    cloud: &TimeSeriesPointCloud,
    r_max: f64,
) -> Result<FilteredComplex> {
    if !(r_max > 0.0) {
        return Err(Error::InvalidParameter(format!("r_max must be positive, got {r_max}")));
    }
    let n = cloud.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let d = cloud.distance(i, j);
            if d <= r_max {
                edges.push((i, j, d));
            }
        }
    }
    FilteredComplex::from_edges(n, edges, r_max)
}

/// Path exponent of the Fermat distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FermatParams {
    pub p: f64,
}

impl FermatParams {
    pub fn new(p: f64) -> Result<Self> {
        if !(p >= 1.0) {
            return Err(Error::InvalidParameter(format!("fermat exponent p must be >= 1, got {p}")));
        }
        Ok(Self { p })
    }
}

/// All-pairs Fermat distance: the cheapest discrete path through the sample
/// where each hop of length `l` costs `l^p`. Computed exactly on the complete
/// graph (Floyd-Warshall).
pub fn fermat_distance_matrix(
    cloud: &TimeSeriesPointCloud,
    params: &FermatParams,
) -> Result<DMatrix<f64>> {
    if !(params.p >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "fermat exponent p must be >= 1, got {}",
            params.p
        )));
    }
    let n = cloud.len();
    let p = params.p;
    let hop = |d: f64| -> f64 {
        if p == 1.0 {
            d
        } else if p == 2.0 {
            d * d
        } else {
            d.powf(p)
        }
    };
    let mut w = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let c = hop(cloud.distance(i, j));
            w[i * n + j] = c;
            w[j * n + i] = c;
        }
    }
    for k in 0..n {
        for i in 0..n {
            let wik = w[i * n + k];
            if !(wik < f64::INFINITY) {
                continue;
            }
            for j in 0..n {
                let cand = wik + w[k * n + j];
                if cand < w[i * n + j] {
                    w[i * n + j] = cand;
                }
            }
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| w[i * n + j]))
}

/// Vietoris-Rips construction over the Fermat distance matrix.
pub fn fermat_filtration(
    cloud: &TimeSeriesPointCloud,
    params: &FermatParams,
    r_max: f64,
) -> Result<FilteredComplex> {
    if !(r_max > 0.0) {
        return Err(Error::InvalidParameter(format!("r_max must be positive, got {r_max}")));
    }
    let dist = fermat_distance_matrix(cloud, params)?;
    let n = cloud.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let d = dist[(i, j)];
            if d <= r_max {
                edges.push((i, j, d));
            }
        }
    }
    FilteredComplex::from_edges(n, edges, r_max)
}

/// Enumerates pairs in parallel, mapping each to an optional edge.
fn pairwise_edges<F>(n: usize, f: F) -> Vec<(usize, usize, f64)>
where
    F: Fn(usize, usize) -> Option<f64> + Sync,
{
    (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            // rayon keeps the index order, so the edge list is deterministic
            let f = &f;
            (i + 1..n).filter_map(move |j| f(i, j).map(|v| (i, j, v)))
        })
        .collect()
}

/// The ellipsoid complex at a single scale: an edge wherever the two adaptive
/// ellipsoids intersect at `eps`, triangles by the flag rule. All simplices
/// carry the value `eps`.
pub fn ellipsoid_complex_at_scale(
    cloud: &TimeSeriesPointCloud,
    field: &CovarianceField,
    eps: f64,
) -> Result<FilteredComplex> {
    field.check_aligned(cloud)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let edges = pairwise_edges(cloud.len(), |i, j| {
        let (ci, cj) = (field.at(i), field.at(j));
        let dist = cloud.distance(i, j);
        let (lo, hi) = birth_scale_bounds(
            ci.lambda_max(),
            ci.lambda_min(),
            cj.lambda_max(),
            cj.lambda_min(),
            dist,
        );
        // ball bounds decide clear cases without running the search
        if lo > eps {
            return None;
        }
        if hi <= eps
            || intersects_at(field.sigma(i), field.sigma(j), cloud.point(i), cloud.point(j), eps)
        {
            Some(eps)
        } else {
            None
        }
    });
    FilteredComplex::from_edges(cloud.len(), edges, eps)
}

/// The full ellipsoidal filtration: every pair that intersects by `eps_max`
/// gets an edge at its birth scale (the smallest intersecting scale, resolved
/// by bisection to `rel_tol`); triangles fill by the flag rule at the maximum
/// of their edge values.
pub fn ellipsoid_filtration(
    cloud: &TimeSeriesPointCloud,
    field: &CovarianceField,
    eps_max: f64,
    rel_tol: f64,
) -> Result<FilteredComplex> {
    field.check_aligned(cloud)?;
    if !(eps_max > 0.0) {
        return Err(Error::InvalidParameter(format!("eps_max must be positive, got {eps_max}")));
    }
    if !(rel_tol > 0.0) {
        return Err(Error::InvalidParameter(format!("rel_tol must be positive, got {rel_tol}")));
    }
    let n = cloud.len();
    let results: Vec<Result<Option<(usize, usize, f64)>>> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            (i + 1..n).map(move |j| -> Result<Option<(usize, usize, f64)>> {
                let (ci, cj) = (field.at(i), field.at(j));
                let dist = cloud.distance(i, j);
                let (lo, hi) = birth_scale_bounds(
                    ci.lambda_max(),
                    ci.lambda_min(),
                    cj.lambda_max(),
                    cj.lambda_min(),
                    dist,
                );
                if lo > eps_max {
                    return Ok(None);
                }
                let hi_bracket = if hi <= eps_max {
                    hi
                } else if intersects_at(
                    field.sigma(i),
                    field.sigma(j),
                    cloud.point(i),
                    cloud.point(j),
                    eps_max,
                ) {
                    eps_max
                } else {
                    return Ok(None);
                };
                let birth = birth_scale_in_bracket(
                    field.sigma(i),
                    field.sigma(j),
                    cloud.point(i),
                    cloud.point(j),
                    lo,
                    hi_bracket,
                    rel_tol,
                )?;
                Ok(Some((i, j, birth)))
            })
        })
        .collect();
    let mut edges = Vec::new();
    for r in results {
        if let Some(edge) = r? {
            edges.push(edge);
        }
    }
    FilteredComplex::from_edges(n, edges, eps_max)
}

/// Default bisection tolerance re-exported for callers of `ellipsoid_filtration`.
pub const DEFAULT_BIRTH_REL_TOL: f64 = BIRTH_SCALE_REL_TOL;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::TimeSeriesPointCloud;

    fn square_cloud() -> TimeSeriesPointCloud {
        TimeSeriesPointCloud::from_rows(
            &[vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0]],
            1.0,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn rips_on_unit_square() {
        let complex = vietoris_rips_filtration(&square_cloud(), 2.0).unwrap();
        assert_eq!(complex.edges().len(), 6);
        assert_eq!(complex.triangles().len(), 4);
        // four sides at 1, two diagonals at sqrt(2)
        let sq2 = 2f64.sqrt();
        assert_eq!(complex.edges().iter().filter(|e| e.value == 1.0).count(), 4);
        assert_eq!(complex.edges().iter().filter(|e| e.value == sq2).count(), 2);
        for t in complex.triangles() {
            assert_eq!(t.value, sq2);
        }
        complex.validate().unwrap();
    }

    #[test]
    fn rips_omits_edges_beyond_cutoff() {
        let cloud =
            TimeSeriesPointCloud::from_rows(&[vec![0.0], vec![3.0]], 1.0, 0.0).unwrap();
        let complex = vietoris_rips_filtration(&cloud, 2.0).unwrap();
        assert!(complex.edges().is_empty());
    }

    #[test]
    fn equilateral_triangle_fills_at_its_side_length() {
        let s = 2.0f64;
        let cloud = TimeSeriesPointCloud::from_rows(
            &[vec![0.0, 0.0], vec![s, 0.0], vec![s / 2.0, s * 3f64.sqrt() / 2.0]],
            1.0,
            0.0,
        )
        .unwrap();
        let complex = vietoris_rips_filtration(&cloud, 3.0).unwrap();
        assert_eq!(complex.edges().len(), 3);
        assert_eq!(complex.triangles().len(), 1);
        let t = complex.triangles()[0];
        for e in complex.edges() {
            assert!((e.value - s).abs() < 1e-12);
        }
        assert!((t.value - s).abs() < 1e-12);
    }

    #[test]
    fn fermat_p1_is_euclidean() {
        let (cloud, _) = crate::signal::generate_chirp(&crate::signal::ChirpParams {
            n: 40,
            ..Default::default()
        })
        .unwrap();
        let fermat = fermat_distance_matrix(&cloud, &FermatParams::new(1.0).unwrap()).unwrap();
        for i in 0..cloud.len() {
            for j in 0..cloud.len() {
                assert!((fermat[(i, j)] - cloud.distance(i, j)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn fermat_p2_prefers_intermediate_hops() {
        let cloud =
            TimeSeriesPointCloud::from_rows(&[vec![0.0], vec![1.0], vec![2.0]], 1.0, 0.0).unwrap();
        let fermat = fermat_distance_matrix(&cloud, &FermatParams::new(2.0).unwrap()).unwrap();
        assert_eq!(fermat[(0, 2)], 2.0); // 1^2 + 1^2, not 2^2
        assert_eq!(fermat[(2, 0)], 2.0);
        assert_eq!(fermat[(0, 0)], 0.0);
        let filtration = fermat_filtration(&cloud, &FermatParams::new(2.0).unwrap(), 10.0).unwrap();
        let e02 = filtration.edges().iter().find(|e| e.i == 0 && e.j == 2).unwrap();
        assert_eq!(e02.value, 2.0);
    }

    #[test]
    fn fermat_p1_filtration_equals_rips() {
        let (cloud, _) = crate::signal::generate_chirp(&crate::signal::ChirpParams {
            n: 30,
            ..Default::default()
        })
        .unwrap();
        let a = vietoris_rips_filtration(&cloud, 5.0).unwrap();
        let b = fermat_filtration(&cloud, &FermatParams::new(1.0).unwrap(), 5.0).unwrap();
        assert_eq!(a.edges().len(), b.edges().len());
        for (x, y) in a.edges().iter().zip(b.edges()) {
            assert_eq!((x.i, x.j), (y.i, y.j));
            assert!((x.value - y.value).abs() <= 1e-12);
        }
    }

    #[test]
    fn two_point_fermat_keeps_single_edge() {
        let cloud =
            TimeSeriesPointCloud::from_rows(&[vec![0.0], vec![1.5]], 1.0, 0.0).unwrap();
        let filtration = fermat_filtration(&cloud, &FermatParams::new(2.0).unwrap(), 10.0).unwrap();
        assert_eq!(filtration.edges().len(), 1);
        assert!((filtration.edges()[0].value - 2.25).abs() < 1e-12);
    }

    #[test]
    fn ellipsoid_identity_field_reduces_to_half_distances() {
        let cloud = square_cloud();
        let field = crate::neighborhoods::CovarianceField::isotropic(4, 2);
        let filtration = ellipsoid_filtration(&cloud, &field, 2.0, 1e-8).unwrap();
        assert_eq!(filtration.edges().len(), 6);
        for e in filtration.edges() {
            let expected = cloud.distance(e.i as usize, e.j as usize) / 2.0;
            assert!(
                (e.value - expected).abs() < 1e-6,
                "edge ({}, {}) birth {} vs {expected}",
                e.i,
                e.j,
                e.value
            );
        }
        filtration.validate().unwrap();
    }

    #[test]
    fn single_vertex_complex_is_trivial() {
        let cloud = TimeSeriesPointCloud::from_rows(&[vec![0.0, 0.0]], 1.0, 0.0).unwrap();
        let field = crate::neighborhoods::CovarianceField::isotropic(1, 2);
        let filtration = ellipsoid_filtration(&cloud, &field, 1.0, 1e-6).unwrap();
        assert_eq!(filtration.n_vertices(), 1);
        assert!(filtration.edges().is_empty());
        assert!(filtration.triangles().is_empty());
    }

    #[test]
    fn snapshot_matches_filtration_prefix_on_identity_field() {
        let cloud = square_cloud();
        let field = crate::neighborhoods::CovarianceField::isotropic(4, 2);
        let filtration = ellipsoid_filtration(&cloud, &field, 2.0, 1e-8).unwrap();
        for eps in [0.3, 0.5001, 0.62, 0.7072, 1.9] {
            let snapshot = ellipsoid_complex_at_scale(&cloud, &field, eps).unwrap();
            let expect = filtration.edges_at(eps);
            let got = snapshot.edges_at(eps);
            assert_eq!(expect, got, "eps {eps}");
        }
    }

    #[test]
    fn three_mutually_intersecting_ellipsoids_form_a_triangle() {
        let cloud = TimeSeriesPointCloud::from_rows(
            &[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, 0.8]],
            1.0,
            0.0,
        )
        .unwrap();
        let field = crate::neighborhoods::CovarianceField::isotropic(3, 2);
        let complex = ellipsoid_complex_at_scale(&cloud, &field, 0.6).unwrap();
        assert_eq!(complex.edges().len(), 3);
        assert_eq!(complex.triangles().len(), 1);
    }

    #[test]
    fn validate_rejects_missing_faces_and_bad_order() {
        let edges = vec![FilteredEdge { i: 0, j: 1, value: 1.0 }];
        let triangles = vec![FilteredTriangle { i: 0, j: 1, k: 2, value: 2.0 }];
        let complex = FilteredComplex::from_parts(3, edges, triangles, 2.0);
        assert!(matches!(complex.validate(), Err(Error::InvalidFiltration(_))));

        let edges = vec![
            FilteredEdge { i: 0, j: 1, value: 1.0 },
            FilteredEdge { i: 0, j: 2, value: 1.0 },
            FilteredEdge { i: 1, j: 2, value: 1.0 },
        ];
        let triangles = vec![FilteredTriangle { i: 0, j: 1, k: 2, value: 0.5 }];
        let complex = FilteredComplex::from_parts(3, edges, triangles, 2.0);
        assert!(matches!(complex.validate(), Err(Error::InvalidFiltration(_))));
    }
}
