//! Electric field `E = Ẽ + ∇u` and internal data `F(σ) = ∇·(σDE × B₀)`
//! for the planar reduction with `B₀ = B₁ = (0, 0, 1)`.
//!
//! `u` solves the Neumann problem with flux `σDẼ`, so the normal component
//! of `σDE` vanishes weakly on the boundary. The computed `E` is stored as
//! an elementwise-affine field whose elementwise curl is exactly 1.

use std::sync::Arc;

use crate::elliptic::{CoefficientBounds, NeumannOperator, SolverOptions};
use crate::error::Result;
use crate::fields::{
    cross_b0, ensure_same, weak_divergence_with, ElementVector, Gauge, ScalarField, TensorField, VectorField,
    VectorRepr,
};
use crate::mesh::Mesh;

#[derive(Debug, Clone)]
pub struct ForwardProblem {
    tensor: TensorField,
    gauge: Gauge,
    bounds: CoefficientBounds,
    solver: SolverOptions,
}

impl ForwardProblem {
    pub fn new(tensor: TensorField, gauge: Gauge, solver: SolverOptions) -> Result<ForwardProblem> {
        Self::with_bounds(tensor, gauge, CoefficientBounds::default(), solver)
    }

    pub fn with_bounds(
        tensor: TensorField,
        gauge: Gauge,
        bounds: CoefficientBounds,
        solver: SolverOptions,
    ) -> Result<ForwardProblem> {
        tensor.check_ellipticity(bounds.lambda)?;
        Ok(ForwardProblem {
            tensor,
            gauge,
            bounds,
            solver,
        })
    }

    /// Isotropic problem `D = I` with the default gauge.
    pub fn isotropic(mesh: Arc<Mesh>, solver: SolverOptions) -> ForwardProblem {
        ForwardProblem {
            tensor: TensorField::identity(mesh),
            gauge: Gauge::default(),
            bounds: CoefficientBounds::default(),
            solver,
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        self.tensor.mesh()
    }

    pub fn tensor(&self) -> &TensorField {
        &self.tensor
    }

    pub fn gauge(&self) -> Gauge {
        self.gauge
    }

    pub fn bounds(&self) -> CoefficientBounds {
        self.bounds
    }

    pub fn solver(&self) -> SolverOptions {
        self.solver
    }

    pub fn with_solver(&self, solver: SolverOptions) -> ForwardProblem {
        ForwardProblem {
            solver,
            ..self.clone()
        }
    }

    pub fn solve(&self, sigma: &ScalarField) -> Result<ForwardState> {
        self.solve_from(sigma, None)
    }

    /// Like [`solve`](Self::solve), seeding the potential solve with `guess`.
    pub fn solve_from(&self, sigma: &ScalarField, guess: Option<&ScalarField>) -> Result<ForwardState> {
        ensure_same(sigma.mesh(), self.mesh())?;
        let operator = Arc::new(NeumannOperator::assemble(sigma, &self.tensor, &self.bounds, self.solver)?);
        let gauge = self.gauge.field(self.mesh().clone());
        let load = operator.load_with(|t, q| {
            let s = sigma.at(t, q);
            let e = self.tensor.at(t, q).apply(gauge.eval(t, q));
            [s * e[0], s * e[1]]
        });
        let (potential, _) = operator.solve_load(&load, guess.map(|g| g.values()))?;
        let field = electric_field(&gauge, &potential)?;
        Ok(ForwardState {
            sigma: sigma.clone(),
            tensor: self.tensor.clone(),
            operator,
            potential,
            field,
        })
    }

    pub fn compute_e(&self, sigma: &ScalarField) -> Result<VectorField> {
        Ok(self.solve(sigma)?.field)
    }

    pub fn internal_data(&self, sigma: &ScalarField) -> Result<ScalarField> {
        Ok(self.solve(sigma)?.data())
    }
}

fn electric_field(gauge: &VectorField, potential: &ScalarField) -> Result<VectorField> {
    let mesh = potential.mesh();
    let VectorRepr::ElementAffine(base) = gauge.repr() else {
        unreachable!("gauge fields are elementwise affine")
    };
    let values = base
        .iter()
        .enumerate()
        .map(|(t, verts)| {
            let g = crate::fields::element_gradient(potential, t);
            verts.map(|v| [v[0] + g[0], v[1] + g[1]])
        })
        .collect();
    VectorField::new(mesh.clone(), VectorRepr::ElementAffine(values))
}

/// Solution of the forward problem at one σ.
#[derive(Debug, Clone)]
pub struct ForwardState {
    sigma: ScalarField,
    tensor: TensorField,
    operator: Arc<NeumannOperator>,
    potential: ScalarField,
    field: VectorField,
}

impl ForwardState {
    pub fn sigma(&self) -> &ScalarField {
        &self.sigma
    }

    pub fn tensor(&self) -> &TensorField {
        &self.tensor
    }

    pub fn operator(&self) -> &Arc<NeumannOperator> {
        &self.operator
    }

    /// Mean-zero potential `u`.
    pub fn potential(&self) -> &ScalarField {
        &self.potential
    }

    pub fn field(&self) -> &VectorField {
        &self.field
    }

    /// Advection field `DE × B₀`.
    pub fn velocity(&self) -> Drift<'_> {
        Drift {
            tensor: &self.tensor,
            field: &self.field,
        }
    }

    /// Internal data `F(σ)` as a lumped weak divergence.
    pub fn data(&self) -> ScalarField {
        let v = self.velocity();
        weak_divergence_with(self.sigma.mesh(), |t, q| {
            let s = self.sigma.at(t, q);
            let w = v.eval(t, q);
            [s * w[0], s * w[1]]
        })
    }
}

/// The field `DE × B₀` for a nodal tensor `D` and an elementwise-affine `E`.
#[derive(Debug, Clone, Copy)]
pub struct Drift<'a> {
    pub tensor: &'a TensorField,
    pub field: &'a VectorField,
}

impl Drift<'_> {
    /// `DE` at a point of triangle `t`.
    pub fn flux(&self, t: usize, bary: [f64; 3]) -> [f64; 2] {
        self.tensor.at(t, bary).apply(self.field.eval(t, bary))
    }

    /// Largest `|DE × B₀|` over vertices and quadrature points.
    pub fn max_norm(&self) -> f64 {
        let mut m: f64 = 0.0;
        let pts = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
            .into_iter()
            .chain(crate::fields::QUAD_POINTS);
        let pts: Vec<[f64; 3]> = pts.collect();
        for t in 0..self.tensor.mesh().n_triangles() {
            for &b in &pts {
                let v = self.eval(t, b);
                m = m.max(v[0].hypot(v[1]));
            }
        }
        m
    }
}

impl ElementVector for Drift<'_> {
    fn eval(&self, t: usize, bary: [f64; 3]) -> [f64; 2] {
        cross_b0(self.flux(t, bary))
    }

    /// `∇·(a × B₀)` equals the planar curl of `a = DE`.
    fn divergence(&self, t: usize, bary: [f64; 3]) -> f64 {
        let mesh = self.tensor.mesh();
        let d = self.tensor.at(t, bary);
        let [g11, g12, g22] = self.tensor.gradients(t);
        let e = self.field.eval(t, bary);
        let g = mesh.basis_gradients(t);
        let verts = match self.field.repr() {
            VectorRepr::ElementAffine(v) => v[t],
            VectorRepr::Nodal(v) => mesh.triangles()[t].map(|i| v[i]),
            VectorRepr::Element(v) => [v[t]; 3],
        };
        // de[c][j] = ∂ⱼ E_c
        let mut de = [[0.0; 2]; 2];
        for k in 0..3 {
            for c in 0..2 {
                for j in 0..2 {
                    de[c][j] += verts[k][c] * g[k][j];
                }
            }
        }
        let dx_second = g12[0] * e[0] + d.d12 * de[0][0] + g22[0] * e[1] + d.d22 * de[1][0];
        let dy_first = g11[1] * e[0] + d.d11 * de[0][1] + g12[1] * e[1] + d.d12 * de[1][1];
        dx_second - dy_first
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Sym2;
    use crate::mesh::{build_disk_mesh, build_unit_square_mesh};

    fn square(n: usize) -> Arc<Mesh> {
        Arc::new(build_unit_square_mesh(n).unwrap())
    }

    fn smooth_sigma(mesh: Arc<Mesh>) -> ScalarField {
        ScalarField::from_fn(mesh, |p| 0.5 + 0.3 * (3.0 * p[0]).sin() * p[1])
    }

    fn smooth_tensor(mesh: Arc<Mesh>) -> TensorField {
        TensorField::from_fn(mesh, |p| Sym2 {
            d11: 0.9 - 0.2 * p[0] * p[1],
            d12: 0.1 * (p[0] - p[1]),
            d22: 0.8 + 0.1 * p[1],
        })
    }

    fn max_vertex_diff(x: &VectorField, y: &VectorField) -> f64 {
        let (VectorRepr::ElementAffine(p), VectorRepr::ElementAffine(q)) = (x.repr(), y.repr()) else {
            unreachable!()
        };
        p.iter()
            .flatten()
            .zip(q.iter().flatten())
            .map(|(u, v)| (u[0] - v[0]).abs().max((u[1] - v[1]).abs()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn field_curl_is_one() {
        let mesh = square(16);
        let fp = ForwardProblem::new(smooth_tensor(mesh.clone()), Gauge::default(), SolverOptions::default()).unwrap();
        let e = fp.compute_e(&smooth_sigma(mesh.clone())).unwrap();
        for t in 0..mesh.n_triangles() {
            assert!((e.curl(t) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn field_is_gauge_and_scale_invariant() {
        let mesh = square(32);
        let sigma = smooth_sigma(mesh.clone());
        let d = smooth_tensor(mesh.clone());
        let a = ForwardProblem::new(d.clone(), Gauge::new([0.5, 0.5]), SolverOptions::default()).unwrap();
        let b = ForwardProblem::new(d, Gauge::new([0.0, 0.0]), SolverOptions::default()).unwrap();
        let ea = a.compute_e(&sigma).unwrap();
        let eb = b.compute_e(&sigma).unwrap();
        let scale = ea.l2_norm();
        assert!(max_vertex_diff(&ea, &eb) < 1e-8 * scale.max(1.0));
        let e2 = a.compute_e(&sigma.scaled(2.0)).unwrap();
        assert!(max_vertex_diff(&ea, &e2) < 1e-8 * scale.max(1.0));
    }

    #[test]
    fn disk_oracle_with_constant_sigma() {
        let mesh = Arc::new(build_disk_mesh([0.5, 0.5], 0.5, 4).unwrap());
        let fp = ForwardProblem::isotropic(mesh.clone(), SolverOptions::default());
        let state = fp.solve(&ScalarField::constant(mesh.clone(), 0.7)).unwrap();
        assert!(state.potential().max_abs() < 1e-9);
        let f = state.data();
        for (i, v) in f.values().iter().enumerate() {
            if !mesh.is_boundary(i) {
                assert!((v - 0.7).abs() < 1e-9, "node {i}: {v}");
            }
        }
    }

    #[test]
    fn isotropic_drift_has_unit_divergence() {
        let mesh = square(24);
        let sigma = smooth_sigma(mesh.clone());
        let state = ForwardProblem::isotropic(mesh.clone(), SolverOptions::default())
            .solve(&sigma)
            .unwrap();
        let v = state.velocity();
        for t in 0..mesh.n_triangles() {
            for q in crate::fields::QUAD_POINTS {
                assert!((v.divergence(t, q) - 1.0).abs() < 1e-12);
            }
        }
        // The tangential trace of E is continuous, so the weak divergence of
        // E × B₀ sees no jumps at interior nodes.
        let weak = weak_divergence_with(&mesh, |t, q| v.eval(t, q));
        for i in 0..mesh.n_vertices() {
            if !mesh.is_boundary(i) {
                assert!((weak.values()[i] - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn drift_divergence_matches_element_flux() {
        let mesh = square(12);
        let state = ForwardProblem::new(smooth_tensor(mesh.clone()), Gauge::default(), SolverOptions::default())
            .unwrap()
            .solve(&smooth_sigma(mesh.clone()))
            .unwrap();
        let v = state.velocity();
        let gauss = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
        for t in 0..mesh.n_triangles() {
            let area = mesh.area(t);
            let inside: f64 = crate::fields::QUAD_POINTS.iter().map(|&q| v.divergence(t, q) * area / 3.0).sum();
            let tri = mesh.triangles()[t];
            let mut flux = 0.0;
            for k in 0..3 {
                let (a, b) = (mesh.vertices()[tri[k]], mesh.vertices()[tri[(k + 1) % 3]]);
                let normal = [b[1] - a[1], a[0] - b[0]];
                for s in gauss {
                    let mut bary = [0.0; 3];
                    bary[k] = 1.0 - s;
                    bary[(k + 1) % 3] = s;
                    let w = v.eval(t, bary);
                    flux += 0.5 * (w[0] * normal[0] + w[1] * normal[1]);
                }
            }
            assert!((inside - flux).abs() < 1e-13, "triangle {t}: {inside} vs {flux}");
        }
    }

    #[test]
    fn anisotropy_changes_the_data() {
        let mesh = square(64);
        let sigma = crate::experiments::ring_sigma(mesh.clone());
        let tensor = crate::experiments::bump_tensor(mesh.clone()).tensor;
        let aniso = ForwardProblem::new(tensor, Gauge::default(), SolverOptions::default())
            .unwrap()
            .internal_data(&sigma)
            .unwrap();
        let iso = ForwardProblem::isotropic(mesh, SolverOptions::default())
            .internal_data(&sigma)
            .unwrap();
        let diff = aniso.sub(&iso).unwrap().l2_norm() / iso.l2_norm();
        assert!(diff > 0.05, "{diff}");
    }

    fn field_distance(mesh: &Mesh, a: &VectorField, b: &VectorField) -> f64 {
        let mut sum = 0.0;
        for t in 0..mesh.n_triangles() {
            for q in crate::fields::QUAD_POINTS {
                let (x, y) = (a.eval(t, q), b.eval(t, q));
                sum += ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)) * mesh.area(t) / 3.0;
            }
        }
        sum.sqrt()
    }

    #[test]
    fn field_is_lipschitz_in_sigma() {
        use rand::SeedableRng;
        let mesh = square(16);
        let fp = ForwardProblem::new(smooth_tensor(mesh.clone()), Gauge::default(), SolverOptions::default()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let mut ratios = Vec::new();
        for _ in 0..100 {
            let s1 = crate::experiments::random_sine_series(mesh.clone(), 3, 0.3, &mut rng).map(|v| v + 0.5);
            let s2 = crate::experiments::random_sine_series(mesh.clone(), 3, 0.3, &mut rng).map(|v| v + 0.5);
            let (e1, e2) = (fp.compute_e(&s1).unwrap(), fp.compute_e(&s2).unwrap());
            ratios.push(field_distance(&mesh, &e1, &e2) / s1.sub(&s2).unwrap().l2_norm());
        }
        // A constant fitted on the first half, with a safety factor of two,
        // must hold on the second half.
        let fitted = 2.0 * ratios[..50].iter().cloned().fold(0.0, f64::max);
        assert!(fitted.is_finite() && fitted > 0.0);
        assert!(ratios[50..].iter().all(|&r| r <= fitted), "{ratios:?}");
    }

    #[test]
    fn stability_decomposition_principal_term() {
        // With D = I the principal term <α, ∇·(α E₁ × B₀)> equals ½‖α‖² for
        // α vanishing on the boundary, because ∇·(E₁ × B₀) = 1.
        use crate::fields::l2_inner;
        use rand::SeedableRng;
        let mesh = square(32);
        let fp = ForwardProblem::isotropic(mesh.clone(), SolverOptions::default());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let s1 = crate::experiments::random_sine_series(mesh.clone(), 2, 0.05, &mut rng).map(|v| v + 0.5);
            let s2 = crate::experiments::random_sine_series(mesh.clone(), 2, 0.05, &mut rng).map(|v| v + 0.5);
            let alpha = s1.sub(&s2).unwrap();
            let st1 = fp.solve(&s1).unwrap();
            let field = st1.field();
            let principal = weak_divergence_with(&mesh, |t, q| {
                let e = field.eval(t, q);
                let a = alpha.at(t, q);
                cross_b0([a * e[0], a * e[1]])
            });
            let norm2 = alpha.l2_norm().powi(2);
            let i1 = l2_inner(&alpha, &principal).unwrap();
            assert!((i1 / norm2 - 0.5).abs() < 0.05, "{}", i1 / norm2);
            let df = fp.internal_data(&s2).map(|f2| st1.data().sub(&f2).unwrap()).unwrap();
            let full = l2_inner(&alpha, &df).unwrap();
            assert!(full > 0.0, "{full}");
        }
    }
}
