//! Discrete fields on a [`Mesh`] and the discrete vector calculus used by
//! every other module.
//!
//! Scalars (σ, data, increments) are continuous piecewise-linear nodal
//! fields. Vector fields come in three flavours: elementwise constant (the
//! gradient of a scalar), nodal, and elementwise affine. The electric field
//! is elementwise affine: the rotational gauge part is exactly linear and the
//! potential part is a piecewise-constant gradient.
//!
//! All volume integrals use the three-point edge-midpoint rule, exact for
//! quadratics. Divergence-form quantities are returned as nodal fields by
//! testing against the hat functions and dividing by the lumped mass.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};

/// Barycentric coordinates of the edge-midpoint quadrature points; each has
/// weight `area / 3`.
pub const QUAD_POINTS: [[f64; 3]; 3] = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]];

/// Two-point Gauss rule on the reference segment `[0, 1]` (weights ½).
pub(crate) const EDGE_GAUSS: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

pub(crate) fn same_mesh(a: &Arc<Mesh>, b: &Arc<Mesh>) -> bool {
    Arc::ptr_eq(a, b)
        || (a.kind() == b.kind()
            && a.n_vertices() == b.n_vertices()
            && a.n_triangles() == b.n_triangles())
}

pub(crate) fn ensure_same(a: &Arc<Mesh>, b: &Arc<Mesh>) -> Result<()> {
    if same_mesh(a, b) {
        Ok(())
    } else {
        Err(Error::MeshMismatch)
    }
}

/// Barycentric coordinates of the point at parameter `s` along local edge
/// `k` (from local vertex `k` to `k + 1`).
pub(crate) fn edge_bary(k: usize, s: f64) -> [f64; 3] {
    let mut b = [0.0; 3];
    b[k] = 1.0 - s;
    b[(k + 1) % 3] = s;
    b
}

/// Continuous piecewise-linear scalar field.
#[derive(Debug, Clone)]
pub struct ScalarField {
    mesh: Arc<Mesh>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(mesh: Arc<Mesh>, values: Vec<f64>) -> Result<ScalarField> {
        if values.len() != mesh.n_vertices() {
            return Err(Error::LengthMismatch {
                expected: mesh.n_vertices(),
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(ScalarField { mesh, values })
    }

    pub(crate) fn from_vec_unchecked(mesh: Arc<Mesh>, values: Vec<f64>) -> ScalarField {
        debug_assert_eq!(values.len(), mesh.n_vertices());
        ScalarField { mesh, values }
    }

    pub fn zeros(mesh: Arc<Mesh>) -> ScalarField {
        Self::constant(mesh, 0.0)
    }

    pub fn constant(mesh: Arc<Mesh>, c: f64) -> ScalarField {
        let values = vec![c; mesh.n_vertices()];
        ScalarField { mesh, values }
    }

    /// Nodal interpolant of `f`.
    pub fn from_fn(mesh: Arc<Mesh>, f: impl Fn(Point) -> f64) -> ScalarField {
        let values = mesh.vertices().iter().map(|&p| f(p)).collect();
        ScalarField { mesh, values }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, t: usize, bary: [f64; 3]) -> f64 {
        let tri = self.mesh.triangles()[t];
        bary[0] * self.values[tri[0]] + bary[1] * self.values[tri[1]] + bary[2] * self.values[tri[2]]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            mesh: self.mesh.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, alpha: f64) -> ScalarField {
        self.map(|v| alpha * v)
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &ScalarField) -> Result<ScalarField> {
        ensure_same(&self.mesh, &other.mesh)?;
        Ok(ScalarField {
            mesh: self.mesh.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + alpha * b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &ScalarField) -> Result<ScalarField> {
        self.axpy(-1.0, other)
    }

    pub fn add(&self, other: &ScalarField) -> Result<ScalarField> {
        self.axpy(1.0, other)
    }

    /// Copy with every boundary nodal value set to zero.
    pub fn interior(&self) -> ScalarField {
        let mask = self.mesh.boundary_mask();
        ScalarField {
            mesh: self.mesh.clone(),
            values: self
                .values
                .iter()
                .zip(mask)
                .map(|(&v, &b)| if b { 0.0 } else { v })
                .collect(),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        l2_inner(self, self).map(f64::sqrt).unwrap_or(0.0)
    }

    /// L² norm of the interior part (boundary nodal values dropped).
    pub fn interior_l2_norm(&self) -> f64 {
        self.interior().l2_norm()
    }

    pub fn lumped_norm(&self) -> f64 {
        lumped_inner(self, self).map(f64::sqrt).unwrap_or(0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Arithmetic mean of the nodal values.
    pub fn nodal_mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Symmetric 2×2 block of a diffusion tensor; the out-of-plane entry is 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sym2 {
    pub d11: f64,
    pub d12: f64,
    pub d22: f64,
}

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2 {
        d11: 1.0,
        d12: 0.0,
        d22: 1.0,
    };

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [self.d11 * v[0] + self.d12 * v[1], self.d12 * v[0] + self.d22 * v[1]]
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let m = 0.5 * (self.d11 + self.d22);
        let r = (0.5 * (self.d11 - self.d22)).hypot(self.d12);
        [m - r, m + r]
    }

    pub fn det(&self) -> f64 {
        self.d11 * self.d22 - self.d12 * self.d12
    }

    pub fn trace(&self) -> f64 {
        self.d11 + self.d22
    }

    /// Spectral-norm distance `‖D − I‖₂`.
    pub fn distance_to_identity(&self) -> f64 {
        let [lo, hi] = self.eigenvalues();
        (1.0 - lo).abs().max((hi - 1.0).abs())
    }

    pub fn lerp(a: Sym2, b: Sym2, t: f64) -> Sym2 {
        Sym2 {
            d11: a.d11 + t * (b.d11 - a.d11),
            d12: a.d12 + t * (b.d12 - a.d12),
            d22: a.d22 + t * (b.d22 - a.d22),
        }
    }
}

/// Nodal field of symmetric tensors.
#[derive(Debug, Clone)]
pub struct TensorField {
    mesh: Arc<Mesh>,
    entries: Vec<Sym2>,
}

impl TensorField {
    pub fn new(mesh: Arc<Mesh>, entries: Vec<Sym2>) -> Result<TensorField> {
        if entries.len() != mesh.n_vertices() {
            return Err(Error::LengthMismatch {
                expected: mesh.n_vertices(),
                got: entries.len(),
            });
        }
        if let Some(index) = entries
            .iter()
            .position(|e| !(e.d11.is_finite() && e.d12.is_finite() && e.d22.is_finite()))
        {
            return Err(Error::NonFinite { index });
        }
        Ok(TensorField { mesh, entries })
    }

    pub fn identity(mesh: Arc<Mesh>) -> TensorField {
        let entries = vec![Sym2::IDENTITY; mesh.n_vertices()];
        TensorField { mesh, entries }
    }

    pub fn from_fn(mesh: Arc<Mesh>, f: impl Fn(Point) -> Sym2) -> TensorField {
        let entries = mesh.vertices().iter().map(|&p| f(p)).collect();
        TensorField { mesh, entries }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn entries(&self) -> &[Sym2] {
        &self.entries
    }

    pub fn at(&self, t: usize, bary: [f64; 3]) -> Sym2 {
        let tri = self.mesh.triangles()[t];
        let mut d = Sym2 {
            d11: 0.0,
            d12: 0.0,
            d22: 0.0,
        };
        for k in 0..3 {
            let e = self.entries[tri[k]];
            d.d11 += bary[k] * e.d11;
            d.d12 += bary[k] * e.d12;
            d.d22 += bary[k] * e.d22;
        }
        d
    }

    /// Constant gradients of `(d11, d12, d22)` on triangle `t`, each as
    /// `[∂x, ∂y]`.
    pub fn gradients(&self, t: usize) -> [[f64; 2]; 3] {
        let tri = self.mesh.triangles()[t];
        let g = self.mesh.basis_gradients(t);
        let mut out = [[0.0; 2]; 3];
        for k in 0..3 {
            let e = self.entries[tri[k]];
            for (c, val) in [e.d11, e.d12, e.d22].into_iter().enumerate() {
                out[c][0] += val * g[k][0];
                out[c][1] += val * g[k][1];
            }
        }
        out
    }

    /// Smallest and largest nodal eigenvalue.
    pub fn eigenvalue_range(&self) -> (f64, f64) {
        self.entries.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
            let [a, b] = e.eigenvalues();
            (lo.min(a), hi.max(b))
        })
    }

    /// Largest nodal `‖D − I‖₂`.
    pub fn max_distance_to_identity(&self) -> f64 {
        self.entries
            .iter()
            .map(Sym2::distance_to_identity)
            .fold(0.0, f64::max)
    }

    /// Checks `λ‖ξ‖² ≤ ξ'Dξ ≤ ‖ξ‖²` at every node.
    pub fn check_ellipticity(&self, lambda: f64) -> Result<()> {
        for (node, e) in self.entries.iter().enumerate() {
            let [lo, hi] = e.eigenvalues();
            if lo < lambda - 1e-12 || hi > 1.0 + 1e-12 {
                return Err(Error::CoefficientBound {
                    node,
                    detail: format!("tensor eigenvalues [{lo:.6}, {hi:.6}] outside [{lambda}, 1]"),
                });
            }
        }
        Ok(())
    }
}

/// A vector field that can be evaluated anywhere inside a triangle.
pub trait ElementVector {
    fn eval(&self, t: usize, bary: [f64; 3]) -> [f64; 2];
    /// Divergence taken inside triangle `t` (jumps across edges ignored).
    fn divergence(&self, t: usize, bary: [f64; 3]) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub enum VectorRepr {
    /// One constant vector per triangle.
    Element(Vec<[f64; 2]>),
    /// One vector per vertex, interpolated linearly.
    Nodal(Vec<[f64; 2]>),
    /// Vertex values per triangle, discontinuous across edges.
    ElementAffine(Vec<[[f64; 2]; 3]>),
}

#[derive(Debug, Clone)]
pub struct VectorField {
    mesh: Arc<Mesh>,
    repr: VectorRepr,
}

impl VectorField {
    pub fn new(mesh: Arc<Mesh>, repr: VectorRepr) -> Result<VectorField> {
        let (expected, got, finite) = match &repr {
            VectorRepr::Element(v) => (mesh.n_triangles(), v.len(), v.iter().flatten().all(|x| x.is_finite())),
            VectorRepr::Nodal(v) => (mesh.n_vertices(), v.len(), v.iter().flatten().all(|x| x.is_finite())),
            VectorRepr::ElementAffine(v) => (
                mesh.n_triangles(),
                v.len(),
                v.iter().flatten().flatten().all(|x| x.is_finite()),
            ),
        };
        if expected != got {
            return Err(Error::LengthMismatch { expected, got });
        }
        if !finite {
            return Err(Error::NonFinite { index: 0 });
        }
        Ok(VectorField { mesh, repr })
    }

    pub fn nodal_from_fn(mesh: Arc<Mesh>, f: impl Fn(Point) -> [f64; 2]) -> VectorField {
        let v = mesh.vertices().iter().map(|&p| f(p)).collect();
        VectorField {
            mesh,
            repr: VectorRepr::Nodal(v),
        }
    }

    /// Elementwise-affine interpolant of `f` (exact for affine `f`).
    pub fn affine_from_fn(mesh: Arc<Mesh>, f: impl Fn(Point) -> [f64; 2]) -> VectorField {
        let verts = mesh.vertices();
        let v = mesh
            .triangles()
            .iter()
            .map(|tri| tri.map(|i| f(verts[i])))
            .collect();
        VectorField {
            mesh,
            repr: VectorRepr::ElementAffine(v),
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn repr(&self) -> &VectorRepr {
        &self.repr
    }

    /// Elementwise scalar curl `∂x w₂ − ∂y w₁`.
    pub fn curl(&self, t: usize) -> f64 {
        let g = self.mesh.basis_gradients(t);
        let verts = match &self.repr {
            VectorRepr::Element(_) => return 0.0,
            VectorRepr::Nodal(v) => self.mesh.triangles()[t].map(|i| v[i]),
            VectorRepr::ElementAffine(v) => v[t],
        };
        (0..3).map(|k| g[k][0] * verts[k][1] - g[k][1] * verts[k][0]).sum()
    }

    /// Sum of two fields; the result is elementwise affine unless both are
    /// elementwise constant.
    pub fn add(&self, other: &VectorField) -> Result<VectorField> {
        ensure_same(&self.mesh, &other.mesh)?;
        if let (VectorRepr::Element(a), VectorRepr::Element(b)) = (&self.repr, &other.repr) {
            let v = a.iter().zip(b).map(|(x, y)| [x[0] + y[0], x[1] + y[1]]).collect();
            return VectorField::new(self.mesh.clone(), VectorRepr::Element(v));
        }
        let v = (0..self.mesh.n_triangles())
            .map(|t| {
                let a = self.vertex_values(t);
                let b = other.vertex_values(t);
                [0, 1, 2].map(|k| [a[k][0] + b[k][0], a[k][1] + b[k][1]])
            })
            .collect();
        VectorField::new(self.mesh.clone(), VectorRepr::ElementAffine(v))
    }

    fn vertex_values(&self, t: usize) -> [[f64; 2]; 3] {
        match &self.repr {
            VectorRepr::Element(v) => [v[t]; 3],
            VectorRepr::Nodal(v) => self.mesh.triangles()[t].map(|i| v[i]),
            VectorRepr::ElementAffine(v) => v[t],
        }
    }

    /// Lumped L² projection onto nodal values.
    pub fn to_nodal(&self) -> VectorField {
        let mesh = &self.mesh;
        let mut acc = vec![[0.0; 2]; mesh.n_vertices()];
        for t in 0..mesh.n_triangles() {
            let tri = mesh.triangles()[t];
            let w = mesh.area(t) / 3.0;
            for q in QUAD_POINTS {
                let val = self.eval(t, q);
                for k in 0..3 {
                    acc[tri[k]][0] += w * q[k] * val[0];
                    acc[tri[k]][1] += w * q[k] * val[1];
                }
            }
        }
        for (a, m) in acc.iter_mut().zip(mesh.lumped_mass()) {
            a[0] /= m;
            a[1] /= m;
        }
        VectorField {
            mesh: mesh.clone(),
            repr: VectorRepr::Nodal(acc),
        }
    }

    /// L² norm by edge-midpoint quadrature (exact for affine fields).
    pub fn l2_norm(&self) -> f64 {
        quad_norm(&self.mesh, self)
    }
}

impl ElementVector for VectorField {
    fn eval(&self, t: usize, bary: [f64; 3]) -> [f64; 2] {
        match &self.repr {
            VectorRepr::Element(v) => v[t],
            _ => {
                let v = self.vertex_values(t);
                [
                    bary[0] * v[0][0] + bary[1] * v[1][0] + bary[2] * v[2][0],
                    bary[0] * v[0][1] + bary[1] * v[1][1] + bary[2] * v[2][1],
                ]
            }
        }
    }

    fn divergence(&self, t: usize, _bary: [f64; 3]) -> f64 {
        match &self.repr {
            VectorRepr::Element(_) => 0.0,
            _ => {
                let g = self.mesh.basis_gradients(t);
                let v = self.vertex_values(t);
                (0..3).map(|k| g[k][0] * v[k][0] + g[k][1] * v[k][1]).sum()
            }
        }
    }
}

/// L² norm of an element-evaluable vector field by edge-midpoint quadrature.
pub fn quad_norm(mesh: &Mesh, w: &impl ElementVector) -> f64 {
    let mut s = 0.0;
    for t in 0..mesh.n_triangles() {
        let a = mesh.area(t) / 3.0;
        for q in QUAD_POINTS {
            let v = w.eval(t, q);
            s += a * (v[0] * v[0] + v[1] * v[1]);
        }
    }
    s.sqrt()
}

/// Rotational gauge field `Ẽ(x) = ½(−(x₂ − c₂), x₁ − c₁)`, whose curl is 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gauge {
    pub center: Point,
}

impl Default for Gauge {
    fn default() -> Self {
        Gauge { center: [0.5, 0.5] }
    }
}

impl Gauge {
    pub fn new(center: Point) -> Gauge {
        Gauge { center }
    }

    pub fn eval(&self, p: Point) -> [f64; 2] {
        [-0.5 * (p[1] - self.center[1]), 0.5 * (p[0] - self.center[0])]
    }

    pub fn field(&self, mesh: Arc<Mesh>) -> VectorField {
        let g = *self;
        VectorField::affine_from_fn(mesh, move |p| g.eval(p))
    }
}

/// `a × B₀` for in-plane `a` and `B₀ = (0, 0, 1)`.
#[inline]
pub fn cross_b0(a: [f64; 2]) -> [f64; 2] {
    [a[1], -a[0]]
}

/// `B₀ × a` for in-plane `a` and `B₀ = (0, 0, 1)`.
#[inline]
pub fn b0_cross(a: [f64; 2]) -> [f64; 2] {
    [-a[1], a[0]]
}

/// Elementwise gradient of the P1 interpolant.
pub fn p1_gradient(f: &ScalarField) -> VectorField {
    let mesh = f.mesh.clone();
    let v = (0..mesh.n_triangles()).map(|t| element_gradient(f, t)).collect();
    VectorField {
        mesh,
        repr: VectorRepr::Element(v),
    }
}

pub(crate) fn element_gradient(f: &ScalarField, t: usize) -> [f64; 2] {
    let tri = f.mesh.triangles()[t];
    let g = f.mesh.basis_gradients(t);
    let mut d = [0.0; 2];
    for k in 0..3 {
        d[0] += f.values[tri[k]] * g[k][0];
        d[1] += f.values[tri[k]] * g[k][1];
    }
    d
}

/// Weak divergence of a vector field, as a nodal field: node `i` carries
/// `(∮ (w·ν)φᵢ − ∫ w·∇φᵢ) / mᵢ` with `mᵢ` the lumped mass.
pub fn weak_divergence(w: &VectorField) -> ScalarField {
    weak_divergence_of(w.mesh(), w)
}

pub fn weak_divergence_of(mesh: &Arc<Mesh>, w: &impl ElementVector) -> ScalarField {
    weak_divergence_with(mesh, |t, q| w.eval(t, q))
}

/// Weak divergence of a field given by its values `w(t, bary)` inside each
/// triangle.
pub fn weak_divergence_with(mesh: &Arc<Mesh>, w: impl Fn(usize, [f64; 3]) -> [f64; 2]) -> ScalarField {
    let mut acc = vec![0.0; mesh.n_vertices()];
    for t in 0..mesh.n_triangles() {
        let tri = mesh.triangles()[t];
        let g = mesh.basis_gradients(t);
        let a = mesh.area(t) / 3.0;
        let mut sum = [0.0; 2];
        for q in QUAD_POINTS {
            let v = w(t, q);
            sum[0] += v[0];
            sum[1] += v[1];
        }
        for k in 0..3 {
            acc[tri[k]] -= a * (sum[0] * g[k][0] + sum[1] * g[k][1]);
        }
    }
    for e in mesh.boundary_edges() {
        let k = e.local_edge;
        for s in EDGE_GAUSS {
            let v = w(e.triangle, edge_bary(k, s));
            let flux = 0.5 * e.length * (v[0] * e.normal[0] + v[1] * e.normal[1]);
            acc[e.vertices[0]] += flux * (1.0 - s);
            acc[e.vertices[1]] += flux * s;
        }
    }
    for (a, m) in acc.iter_mut().zip(mesh.lumped_mass()) {
        *a /= m;
    }
    ScalarField::from_vec_unchecked(mesh.clone(), acc)
}

/// Nodal field `(∫ f φᵢ) / mᵢ` for an integrand given at the quadrature
/// points of each triangle as `f(t, bary)`.
pub fn lump_to_nodes(mesh: &Arc<Mesh>, f: impl Fn(usize, [f64; 3]) -> f64) -> ScalarField {
    let mut acc = vec![0.0; mesh.n_vertices()];
    for t in 0..mesh.n_triangles() {
        let tri = mesh.triangles()[t];
        let a = mesh.area(t) / 3.0;
        for q in QUAD_POINTS {
            let val = a * f(t, q);
            for k in 0..3 {
                acc[tri[k]] += q[k] * val;
            }
        }
    }
    for (a, m) in acc.iter_mut().zip(mesh.lumped_mass()) {
        *a /= m;
    }
    ScalarField::from_vec_unchecked(mesh.clone(), acc)
}

/// `∫ f g` with the consistent P1 mass matrix.
pub fn l2_inner(f: &ScalarField, g: &ScalarField) -> Result<f64> {
    ensure_same(&f.mesh, &g.mesh)?;
    let mesh = &f.mesh;
    let mut s = 0.0;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let fv = tri.map(|i| f.values[i]);
        let gv = tri.map(|i| g.values[i]);
        let diag: f64 = (0..3).map(|k| fv[k] * gv[k]).sum();
        let all = (fv[0] + fv[1] + fv[2]) * (gv[0] + gv[1] + gv[2]);
        s += mesh.area(t) / 12.0 * (diag + all);
    }
    Ok(s)
}

/// `Σ mᵢ fᵢ gᵢ` with the lumped mass; the pairing in which the discrete
/// derivative and its adjoint are exact transposes.
pub fn lumped_inner(f: &ScalarField, g: &ScalarField) -> Result<f64> {
    ensure_same(&f.mesh, &g.mesh)?;
    Ok(f.values
        .iter()
        .zip(&g.values)
        .zip(f.mesh.lumped_mass())
        .map(|((a, b), m)| a * b * m)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_unit_square_mesh, build_unit_square_mesh_with, Diagonal};
    use proptest::prelude::*;

    fn square(n: usize) -> Arc<Mesh> {
        Arc::new(build_unit_square_mesh(n).unwrap())
    }

    #[test]
    fn gradient_exact_for_affine() {
        let mesh = square(6);
        let f = ScalarField::from_fn(mesh.clone(), |p| 3.0 * p[0] + 2.0 * p[1] - 1.0);
        if let VectorRepr::Element(v) = p1_gradient(&f).repr() {
            for g in v {
                assert!((g[0] - 3.0).abs() < 1e-12 && (g[1] - 2.0).abs() < 1e-12);
            }
        } else {
            panic!("gradient must be elementwise constant");
        }
        let x = ScalarField::from_fn(mesh.clone(), |p| p[0]);
        let VectorRepr::Element(v) = p1_gradient(&x).repr().clone() else { unreachable!() };
        assert!(v.iter().all(|g| (g[0] - 1.0).abs() < 1e-12 && g[1].abs() < 1e-12));
        let c = ScalarField::constant(mesh, 4.2);
        let VectorRepr::Element(v) = p1_gradient(&c).repr().clone() else { unreachable!() };
        assert!(v.iter().all(|g| g[0].abs() < 1e-12 && g[1].abs() < 1e-12));
    }

    #[test]
    fn weak_divergence_of_linear_fields() {
        let mesh = square(16);
        let radial = VectorField::nodal_from_fn(mesh.clone(), |p| [p[0], p[1]]);
        let d = weak_divergence(&radial);
        for (i, v) in d.values().iter().enumerate() {
            assert!((v - 2.0).abs() < 1e-12, "node {i}: {v}");
        }
        let constant = VectorField::nodal_from_fn(mesh.clone(), |_| [0.3, -1.7]);
        let d = weak_divergence(&constant);
        assert!(d.max_abs() < 1e-12);
        let gauge = Gauge::default();
        let w = VectorField::affine_from_fn(mesh.clone(), |p| cross_b0(gauge.eval(p)));
        let d = weak_divergence(&w);
        for v in d.interior().values().iter().zip(mesh.boundary_mask()).filter(|(_, b)| !**b) {
            assert!((v.0 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gauge_curl_is_one_for_any_center() {
        let mesh = square(5);
        for c in [[0.5, 0.5], [0.0, 0.0], [2.0, -1.0]] {
            let e = Gauge::new(c).field(mesh.clone());
            for t in 0..mesh.n_triangles() {
                assert!((e.curl(t) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inner_products() {
        let mesh = square(8);
        let one = ScalarField::constant(mesh.clone(), 1.0);
        let x = ScalarField::from_fn(mesh.clone(), |p| p[0]);
        assert!((l2_inner(&one, &one).unwrap() - 1.0).abs() < 1e-12);
        assert!((l2_inner(&one, &x).unwrap() - 0.5).abs() < 1e-12);
        let fine = square(64);
        let x = ScalarField::from_fn(fine, |p| p[0]);
        assert!((l2_inner(&x, &x).unwrap() - 1.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn mesh_mismatch_is_rejected() {
        let a = ScalarField::constant(square(4), 1.0);
        let b = ScalarField::constant(square(5), 1.0);
        assert!(matches!(l2_inner(&a, &b), Err(Error::MeshMismatch)));
        let c = ScalarField::constant(Arc::new(build_unit_square_mesh_with(4, Diagonal::Backward).unwrap()), 1.0);
        assert!(l2_inner(&a, &c).is_err());
    }

    #[test]
    fn constructors_validate() {
        let mesh = square(3);
        assert!(ScalarField::new(mesh.clone(), vec![0.0; 3]).is_err());
        let mut v = vec![0.0; mesh.n_vertices()];
        v[5] = f64::NAN;
        assert!(matches!(ScalarField::new(mesh.clone(), v), Err(Error::NonFinite { index: 5 })));
        assert!(VectorField::new(mesh.clone(), VectorRepr::Element(vec![[0.0; 2]; 2])).is_err());
    }

    #[test]
    fn tensor_eigen_and_ellipticity() {
        let d = Sym2 { d11: 0.7, d12: 0.2, d22: 0.8 };
        let [lo, hi] = d.eigenvalues();
        assert!((lo + hi - d.trace()).abs() < 1e-14);
        assert!((lo * hi - d.det()).abs() < 1e-14);
        let mesh = square(3);
        let t = TensorField::from_fn(mesh.clone(), |_| d);
        assert!(t.check_ellipticity(0.5).is_ok());
        assert!(t.check_ellipticity(0.6).is_err());
        let big = TensorField::from_fn(mesh, |_| Sym2 { d11: 1.2, d12: 0.0, d22: 1.0 });
        assert!(matches!(big.check_ellipticity(0.1), Err(Error::CoefficientBound { node: 0, .. })));
    }

    fn field_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, len)
    }

    proptest! {
        #[test]
        fn mass_is_positive_definite(v in field_strategy(36)) {
            let mesh = square(5);
            let f = ScalarField::new(mesh, v.clone()).unwrap();
            let q = l2_inner(&f, &f).unwrap();
            prop_assert!(q >= 0.0);
            if v.iter().any(|x| x.abs() > 1e-6) {
                prop_assert!(q > 0.0);
            }
        }

        #[test]
        fn gradient_is_linear_and_curl_free(a in field_strategy(36), b in field_strategy(36), s in -3.0f64..3.0, r in -3.0f64..3.0) {
            let mesh = square(5);
            let f = ScalarField::new(mesh.clone(), a).unwrap();
            let g = ScalarField::new(mesh.clone(), b).unwrap();
            let combo = f.scaled(s).axpy(r, &g).unwrap();
            let (VectorRepr::Element(gf), VectorRepr::Element(gg), VectorRepr::Element(gc)) =
                (p1_gradient(&f).repr().clone(), p1_gradient(&g).repr().clone(), p1_gradient(&combo).repr().clone())
            else { unreachable!() };
            for t in 0..mesh.n_triangles() {
                for c in 0..2 {
                    let expect = s * gf[t][c] + r * gg[t][c];
                    prop_assert!((gc[t][c] - expect).abs() <= 1e-10 * (1.0 + expect.abs()));
                }
                prop_assert!(p1_gradient(&combo).curl(t) == 0.0);
            }
        }
    }
}
