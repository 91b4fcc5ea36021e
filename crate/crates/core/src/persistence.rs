//! Persistence diagrams of filtered flag complexes over Z/2, by boundary
//! matrix reduction, plus the dominant-class scale schedule.
//!
//! Simplices enter in `(value, dimension, vertex order)` order. Degree-0
//! pairings come from merge bookkeeping (the elder rule, which matches plain
//! column reduction exactly); degree-1 pairings come from reducing triangle
//! columns with the clearing optimization. Pairs with zero lifetime are
//! dropped at construction.

use std::collections::HashMap;
use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::filtration::FilteredComplex;

/// A single birth-death pair; `death = None` for a class still alive at the
/// complex's scale cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PersistencePair {
    pub dim: usize,
    pub birth: f64,
    pub death: Option<f64>,
}

impl PersistencePair {
    /// A degree-1 class that never died within the cap; its reported death is
    /// the cap rather than a real death scale.
    pub fn unresolved(&self) -> bool {
        self.dim == 1 && self.death.is_none()
    }
}

/// All H0/H1 pairs of one filtration, with the scale cap used for reporting
/// unresolved classes.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceDiagram {
    pairs: Vec<PersistencePair>,
    scale_cap: f64,
}

impl PersistenceDiagram {
    pub fn pairs(&self) -> &[PersistencePair] {
        &self.pairs
    }

    pub fn scale_cap(&self) -> f64 {
        self.scale_cap
    }

    pub fn pairs_in_dim(&self, dim: usize) -> impl Iterator<Item = &PersistencePair> {
        self.pairs.iter().filter(move |p| p.dim == dim)
    }

    /// Betti number at scale `v` under the half-open `[birth, death)`
    /// convention.
    pub fn betti_at(&self, dim: usize, v: f64) -> usize {
        self.pairs_in_dim(dim)
            .filter(|p| p.birth <= v && p.death.map_or(true, |d| v < d))
            .count()
    }

    /// CSV rows `dim,birth,death,unresolved`. With `cap_unresolved`, degree-1
    /// classes alive at the cap are written with `death = scale_cap`;
    /// otherwise their death cell is left empty. Essential H0 classes always
    /// have an empty death cell.
    pub fn write_csv<W: Write>(&self, mut w: W, cap_unresolved: bool) -> io::Result<()> {
        writeln!(w, "dim,birth,death,unresolved")?;
        for p in &self.pairs {
            let unresolved = p.unresolved() as u8;
            match (p.death, p.unresolved() && cap_unresolved) {
                (Some(d), _) => writeln!(w, "{},{},{},{}", p.dim, p.birth, d, unresolved)?,
                (None, true) => {
                    writeln!(w, "{},{},{},{}", p.dim, p.birth, self.scale_cap, unresolved)?
                }
                (None, false) => writeln!(w, "{},{},,{}", p.dim, p.birth, unresolved)?,
            }
        }
        Ok(())
    }
}

/// Union-find over vertices; the representative of a component is always its
/// smallest vertex index, i.e. the first-born vertex (the elder).
struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n as u32).collect() }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }
}

/// Computes the H0/H1 persistence diagram of a valid filtration.
pub fn compute_persistence(complex: &FilteredComplex) -> Result<PersistenceDiagram> {
    let n = complex.n_vertices();
    let edges = complex.edges();
    let triangles = complex.triangles();

    // Edge ordinals stand in for global column indices: all edges share the
    // sorted (value, lex) order and only edges appear in triangle boundaries.
    let mut edge_ordinal: HashMap<(u32, u32), u32> = HashMap::with_capacity(edges.len());
    for (ord, e) in edges.iter().enumerate() {
        if e.i >= e.j || e.j as usize >= n {
            return Err(Error::InvalidFiltration(format!(
                "edge ({}, {}) is not an ordered pair of vertices below {n}",
                e.i, e.j
            )));
        }
        if edge_ordinal.insert((e.i, e.j), ord as u32).is_some() {
            return Err(Error::InvalidFiltration(format!("duplicate edge ({}, {})", e.i, e.j)));
        }
    }
    if let Some(w) = edges.windows(2).find(|w| w[0].value > w[1].value) {
        return Err(Error::InvalidFiltration(format!(
            "edges ({}, {}) and ({}, {}) are out of filtration order",
            w[0].i, w[0].j, w[1].i, w[1].j
        )));
    }
    if let Some(w) = triangles.windows(2).find(|w| w[0].value > w[1].value) {
        return Err(Error::InvalidFiltration(format!(
            "triangles ({}, {}, {}) and ({}, {}, {}) are out of filtration order",
            w[0].i, w[0].j, w[0].k, w[1].i, w[1].j, w[1].k
        )));
    }

    // Reduce triangle columns (entries are edge ordinals, largest = pivot).
    // A pivot edge is cleared: it created the cycle this triangle kills.
    let mut pivot_column: HashMap<u32, usize> = HashMap::new();
    let mut stored_columns: Vec<Vec<u32>> = Vec::new();
    let mut death_of_edge: HashMap<u32, f64> = HashMap::new();
    let mut column = Vec::with_capacity(8);
    for t in triangles {
        column.clear();
        for face in [(t.i, t.j), (t.i, t.k), (t.j, t.k)] {
            match edge_ordinal.get(&face) {
                Some(&ord) => {
                    if edges[ord as usize].value > t.value {
                        return Err(Error::InvalidFiltration(format!(
                            "triangle ({}, {}, {}) at {} has face ({}, {}) at larger value {}",
                            t.i, t.j, t.k, t.value, face.0, face.1, edges[ord as usize].value
                        )));
                    }
                    column.push(ord);
                }
                None => {
                    return Err(Error::InvalidFiltration(format!(
                        "triangle ({}, {}, {}) is missing face ({}, {})",
                        t.i, t.j, t.k, face.0, face.1
                    )))
                }
            }
        }
        column.sort_unstable();
        while let Some(&low) = column.last() {
            match pivot_column.get(&low) {
                Some(&owner) => symmetric_difference(&mut column, &stored_columns[owner]),
                None => break,
            }
        }
        if let Some(&low) = column.last() {
            death_of_edge.insert(low, t.value);
            pivot_column.insert(low, stored_columns.len());
            stored_columns.push(column.clone());
        }
        // an empty column would create an H2 class, which is out of range
    }

    // Sweep edges: merges pair vertices (H0 deaths), cycle edges create H1
    // classes that die at their paired triangle, if any.
    let mut uf = UnionFind::new(n);
    let mut pairs = Vec::new();
    for (ord, e) in edges.iter().enumerate() {
        let (ri, rj) = (uf.find(e.i), uf.find(e.j));
        if ri != rj {
            let (elder, younger) = if ri < rj { (ri, rj) } else { (rj, ri) };
            uf.parent[younger as usize] = elder;
            if e.value > 0.0 {
                pairs.push(PersistencePair { dim: 0, birth: 0.0, death: Some(e.value) });
            }
        } else {
            match death_of_edge.get(&(ord as u32)) {
                Some(&d) => {
                    if d > e.value {
                        pairs.push(PersistencePair { dim: 1, birth: e.value, death: Some(d) });
                    }
                }
                None => pairs.push(PersistencePair { dim: 1, birth: e.value, death: None }),
            }
        }
    }
    // one essential H0 class per component of the final complex
    for v in 0..n as u32 {
        if uf.find(v) == v {
            pairs.push(PersistencePair { dim: 0, birth: 0.0, death: None });
        }
    }

    pairs.sort_by(|a, b| {
        a.dim
            .cmp(&b.dim)
            .then(a.birth.total_cmp(&b.birth))
            .then_with(|| match (a.death, b.death) {
                (Some(x), Some(y)) => x.total_cmp(&y),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => std::cmp::Ordering::Equal,
            })
    });

    Ok(PersistenceDiagram { pairs, scale_cap: complex.scale_cap() })
}

/// Z/2 column addition: `target ^= other`, both sorted ascending.
fn symmetric_difference(target: &mut Vec<u32>, other: &[u32]) {
    let mut merged = Vec::with_capacity(target.len() + other.len());
    let (mut a, mut b) = (0, 0);
    while a < target.len() && b < other.len() {
        match target[a].cmp(&other[b]) {
            std::cmp::Ordering::Less => {
                merged.push(target[a]);
                a += 1;
            }
            std::cmp::Ordering::Greater => {
                merged.push(other[b]);
                b += 1;
            }
            std::cmp::Ordering::Equal => {
                a += 1;
                b += 1;
            }
        }
    }
    merged.extend_from_slice(&target[a..]);
    merged.extend_from_slice(&other[b..]);
    *target = merged;
}

/// The dominant class of a diagram in one dimension: the pair with the
/// largest lifetime, ties broken by earlier birth, then by diagram order.
/// Unresolved degree-1 classes participate only when `include_capped` is set,
/// with their death taken as the scale cap.
pub fn dominant_class(
    diagram: &PersistenceDiagram,
    dim: usize,
    include_capped: bool,
) -> Result<DominantClass> {
    let mut best: Option<DominantClass> = None;
    for p in diagram.pairs_in_dim(dim) {
        let death = match p.death {
            Some(d) => d,
            None if include_capped && dim == 1 => diagram.scale_cap(),
            None => continue,
        };
        let cand = DominantClass { birth: p.birth, death, lifetime: death - p.birth };
        let better = match &best {
            None => true,
            Some(cur) => {
                cand.lifetime > cur.lifetime
                    || (cand.lifetime == cur.lifetime && cand.birth < cur.birth)
            }
        };
        if better {
            best = Some(cand);
        }
    }
    best.ok_or(Error::NoFinitePair { dim })
}

/// Birth, death and lifetime of a dominant class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DominantClass {
    pub birth: f64,
    pub death: f64,
    pub lifetime: f64,
}

/// The four evaluation scales derived from a dominant class:
/// `B`, `B + L/2`, `D`, `D + L/2` with `L = D - B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleSchedule {
    pub birth: f64,
    pub death: f64,
    pub lifetime: f64,
    pub scales: [f64; 4],
}

pub fn scale_schedule(birth: f64, death: f64) -> ScaleSchedule {
    let lifetime = death - birth;
    debug_assert!(lifetime >= 0.0, "lifetime must be nonnegative");
    ScaleSchedule {
        birth,
        death,
        lifetime,
        scales: [birth, birth + 0.5 * lifetime, death, death + 0.5 * lifetime],
    }
}

impl ScaleSchedule {
    pub fn from_class(class: &DominantClass) -> Self {
        scale_schedule(class.birth, class.death)
    }
}
