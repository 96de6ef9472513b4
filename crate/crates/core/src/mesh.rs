//! Structured triangulations of the unit square and of a disk.
//!
//! The square mesh is the domain of every reconstruction; the disk mesh
//! exists for analytic checks, since on a disk centred at the gauge centre
//! the rotational field is tangential to the boundary and the electric field
//! is known in closed form.
//!
//! Per-triangle geometry (area, basis gradients, diameter) and the lumped
//! mass of every vertex are computed once at construction.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::sparse::Pattern;

pub type Point = [f64; 2];

/// Orientation of the diagonal splitting each square cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Diagonal {
    /// Diagonal from the lower-left to the upper-right corner.
    #[default]
    Forward,
    /// Diagonal from the lower-right to the upper-left corner.
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DomainKind {
    UnitSquare { n: usize, diagonal: Diagonal },
    Disk { center: Point, radius: f64, level: usize },
}

/// A boundary edge, oriented counter-clockwise with respect to its triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub triangle: usize,
    /// Local index `k` of the edge running from local vertex `k` to `k + 1`.
    pub local_edge: usize,
    /// Outward unit normal.
    pub normal: Point,
    pub length: f64,
}

impl BoundaryEdge {
    pub fn midpoint(&self, mesh: &Mesh) -> Point {
        let a = mesh.vertices[self.vertices[0]];
        let b = mesh.vertices[self.vertices[1]];
        [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
    }
}

#[derive(Debug)]
pub struct Mesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    on_boundary: Vec<bool>,
    areas: Vec<f64>,
    gradients: Vec<[Point; 3]>,
    diameters: Vec<f64>,
    lumped_mass: Vec<f64>,
    h: f64,
    kind: DomainKind,
    pattern: OnceLock<Arc<Pattern>>,
}

/// Uniform triangulation of `[0,1]²` with `n` cells per direction, each cell
/// split along a forward diagonal.
pub fn build_unit_square_mesh(n: usize) -> Result<Mesh> {
    build_unit_square_mesh_with(n, Diagonal::Forward)
}

pub fn build_unit_square_mesh_with(n: usize, diagonal: Diagonal) -> Result<Mesh> {
    if n < 2 {
        return Err(Error::InvalidMesh(format!(
            "unit square needs at least 2 cells per direction, got {n}"
        )));
    }
    let np = n + 1;
    let inv = 1.0 / n as f64;
    let mut vertices = Vec::with_capacity(np * np);
    for j in 0..np {
        for i in 0..np {
            vertices.push([i as f64 * inv, j as f64 * inv]);
        }
    }
    let idx = |i: usize, j: usize| i + j * np;
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let a = idx(i, j);
            let b = idx(i + 1, j);
            let c = idx(i + 1, j + 1);
            let d = idx(i, j + 1);
            match diagonal {
                Diagonal::Forward => {
                    triangles.push([a, b, c]);
                    triangles.push([a, c, d]);
                }
                Diagonal::Backward => {
                    triangles.push([a, b, d]);
                    triangles.push([b, c, d]);
                }
            }
        }
    }
    Mesh::from_parts(vertices, triangles, DomainKind::UnitSquare { n, diagonal })
}

/// Quasi-uniform disk mesh: a hexagon fan refined `level` times by edge
/// bisection, with new boundary vertices projected onto the circle.
pub fn build_disk_mesh(center: Point, radius: f64, level: usize) -> Result<Mesh> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidMesh(format!(
            "disk radius must be positive, got {radius}"
        )));
    }
    let mut vertices = vec![center];
    for k in 0..6 {
        let t = k as f64 * PI / 3.0;
        vertices.push([center[0] + radius * t.cos(), center[1] + radius * t.sin()]);
    }
    let mut triangles: Vec<[usize; 3]> = (0..6).map(|k| [0, 1 + k, 1 + (k + 1) % 6]).collect();

    for _ in 0..level {
        let boundary: std::collections::HashSet<(usize, usize)> = edge_owners(&triangles)
            .into_iter()
            .filter(|(_, owners)| owners.len() == 1)
            .map(|(e, _)| e)
            .collect();
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut refined = Vec::with_capacity(4 * triangles.len());
        for tri in &triangles {
            let mut mid = [0usize; 3];
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mid[k] = *midpoints.entry(key).or_insert_with(|| {
                    let pa = vertices[a];
                    let pb = vertices[b];
                    let mut m = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
                    if boundary.contains(&key) {
                        let dx = m[0] - center[0];
                        let dy = m[1] - center[1];
                        let r = dx.hypot(dy);
                        m = [center[0] + radius * dx / r, center[1] + radius * dy / r];
                    }
                    vertices.push(m);
                    vertices.len() - 1
                });
            }
            refined.push([tri[0], mid[0], mid[2]]);
            refined.push([mid[0], tri[1], mid[1]]);
            refined.push([mid[2], mid[1], tri[2]]);
            refined.push([mid[0], mid[1], mid[2]]);
        }
        triangles = refined;
    }
    Mesh::from_parts(
        vertices,
        triangles,
        DomainKind::Disk {
            center,
            radius,
            level,
        },
    )
}

fn edge_owners(triangles: &[[usize; 3]]) -> HashMap<(usize, usize), Vec<(usize, usize)>> {
    let mut owners: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
    for (t, tri) in triangles.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            owners.entry((a.min(b), a.max(b))).or_default().push((t, k));
        }
    }
    owners
}

impl Mesh {
    fn from_parts(vertices: Vec<Point>, triangles: Vec<[usize; 3]>, kind: DomainKind) -> Result<Mesh> {
        let nt = triangles.len();
        let mut areas = Vec::with_capacity(nt);
        let mut gradients = Vec::with_capacity(nt);
        let mut diameters = Vec::with_capacity(nt);
        let mut lumped_mass = vec![0.0; vertices.len()];
        for (t, tri) in triangles.iter().enumerate() {
            let [p0, p1, p2] = tri.map(|v| vertices[v]);
            let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
            if !(det > 0.0) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} has non-positive signed area"
                )));
            }
            areas.push(0.5 * det);
            gradients.push([
                [(p1[1] - p2[1]) / det, (p2[0] - p1[0]) / det],
                [(p2[1] - p0[1]) / det, (p0[0] - p2[0]) / det],
                [(p0[1] - p1[1]) / det, (p1[0] - p0[0]) / det],
            ]);
            let d = [dist(p0, p1), dist(p1, p2), dist(p2, p0)];
            diameters.push(d[0].max(d[1]).max(d[2]));
            for &v in tri {
                lumped_mass[v] += det / 6.0;
            }
        }

        let mut boundary_edges = Vec::new();
        let mut on_boundary = vec![false; vertices.len()];
        let mut owners: Vec<_> = edge_owners(&triangles).into_iter().collect();
        owners.sort_unstable_by_key(|(e, _)| *e);
        for (_, owned) in owners {
            match owned.as_slice() {
                [(t, k)] => {
                    let tri = triangles[*t];
                    let (a, b) = (tri[*k], tri[(*k + 1) % 3]);
                    let (pa, pb) = (vertices[a], vertices[b]);
                    let length = dist(pa, pb);
                    let normal = [(pb[1] - pa[1]) / length, -(pb[0] - pa[0]) / length];
                    on_boundary[a] = true;
                    on_boundary[b] = true;
                    boundary_edges.push(BoundaryEdge {
                        vertices: [a, b],
                        triangle: *t,
                        local_edge: *k,
                        normal,
                        length,
                    });
                }
                [_, _] => {}
                _ => {
                    return Err(Error::InvalidMesh(
                        "an edge is shared by more than two triangles".into(),
                    ))
                }
            }
        }
        let h = diameters.iter().cloned().fold(0.0, f64::max);
        Ok(Mesh {
            vertices,
            triangles,
            boundary_edges,
            on_boundary,
            areas,
            gradients,
            diameters,
            lumped_mass,
            h,
            kind,
            pattern: OnceLock::new(),
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Number of distinct edges.
    pub fn n_edges(&self) -> usize {
        (3 * self.triangles.len() + self.boundary_edges.len()) / 2
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.on_boundary[v]
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.on_boundary
    }

    pub fn area(&self, t: usize) -> f64 {
        self.areas[t]
    }

    /// Constant gradients of the three barycentric basis functions of `t`.
    pub fn basis_gradients(&self, t: usize) -> &[Point; 3] {
        &self.gradients[t]
    }

    pub fn diameter(&self, t: usize) -> f64 {
        self.diameters[t]
    }

    /// Row sums of the P1 mass matrix.
    pub fn lumped_mass(&self) -> &[f64] {
        &self.lumped_mass
    }

    /// Largest edge length.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Physical point at barycentric coordinates `bary` in triangle `t`.
    pub fn point_at(&self, t: usize, bary: [f64; 3]) -> Point {
        let tri = self.triangles[t];
        let mut p = [0.0; 2];
        for k in 0..3 {
            let v = self.vertices[tri[k]];
            p[0] += bary[k] * v[0];
            p[1] += bary[k] * v[1];
        }
        p
    }

    /// Vertex-adjacency sparsity pattern, built on first use.
    pub fn pattern(&self) -> &Arc<Pattern> {
        self.pattern.get_or_init(|| Arc::new(Pattern::from_mesh(self)))
    }
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
