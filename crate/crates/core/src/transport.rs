//! Stationary transport `∇·(σv) = g` with boundary data, the update step of
//! the quasi-Newton iteration.
//!
//! The Galerkin part mirrors the weak divergence used for the data, so with
//! the lumped right-hand side `M_L g` a field whose data is `g` solves the
//! unstabilised system exactly. Pure advection is ill-posed when the
//! velocity has no inflow boundary (the radially outward drift of the
//! standard setup), so an isotropic artificial diffusion and a streamline
//! (SUPG) term are added.
//!
//! With an *anchor* `σ_k` both stabilising terms act on `σ − σ_k` instead of
//! `σ`. They then vanish at a fixed point of the outer iteration, which makes
//! the iteration's limit independent of the diffusion strength.

use crate::error::{Error, Result};
use crate::fields::{ensure_same, ElementVector, ScalarField, EDGE_GAUSS, QUAD_POINTS};
use crate::mesh::Mesh;
use crate::sparse::{bicgstab, CsrMatrix, Preconditioner, PreconditionerKind};

/// Flux threshold below which a boundary edge is not inflow.
pub const FLUX_TOL: f64 = 1e-12;

/// Strength of the artificial diffusion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Diffusion {
    /// `ε = c_ε · h · max|v|`.
    Relative(f64),
    /// Fixed `ε`.
    Absolute(f64),
}

impl Default for Diffusion {
    fn default() -> Self {
        Diffusion::Relative(0.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportOptions {
    pub diffusion: Diffusion,
    pub supg: bool,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub preconditioner: PreconditionerKind,
}

impl Default for TransportOptions {
    fn default() -> Self {
        TransportOptions {
            diffusion: Diffusion::default(),
            supg: true,
            rel_tol: 1e-10,
            max_iter: 10_000,
            preconditioner: PreconditionerKind::Ilu0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TransportProblem<'a, V> {
    pub velocity: &'a V,
    pub source: &'a ScalarField,
    /// Boundary values; only the nodes that receive Dirichlet data are read.
    pub boundary: &'a ScalarField,
    /// Reference field the stabilisation is measured against.
    pub anchor: Option<&'a ScalarField>,
    /// Initial iterate for the linear solver.
    pub guess: Option<&'a ScalarField>,
    pub options: TransportOptions,
}

impl<'a, V: ElementVector> TransportProblem<'a, V> {
    pub fn new(velocity: &'a V, source: &'a ScalarField, boundary: &'a ScalarField) -> Self {
        TransportProblem {
            velocity,
            source,
            boundary,
            anchor: None,
            guess: None,
            options: TransportOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransportSolution {
    pub sigma: ScalarField,
    pub epsilon: f64,
    pub inflow_edges: Vec<usize>,
    pub iterations: usize,
}

/// Indices (into `mesh.boundary_edges()`) of edges with `v·ν < −FLUX_TOL`
/// at the midpoint.
pub fn classify_inflow(velocity: &impl ElementVector, mesh: &Mesh) -> Vec<usize> {
    mesh.boundary_edges()
        .iter()
        .enumerate()
        .filter(|(_, e)| {
            let mut bary = [0.0; 3];
            bary[e.local_edge] = 0.5;
            bary[(e.local_edge + 1) % 3] = 0.5;
            let v = velocity.eval(e.triangle, bary);
            v[0] * e.normal[0] + v[1] * e.normal[1] < -FLUX_TOL
        })
        .map(|(i, _)| i)
        .collect()
}

/// Largest `|v|` over the vertices and quadrature points.
pub fn max_speed(velocity: &impl ElementVector, mesh: &Mesh) -> f64 {
    let corners = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut m: f64 = 0.0;
    for t in 0..mesh.n_triangles() {
        for b in corners.iter().chain(QUAD_POINTS.iter()) {
            let v = velocity.eval(t, *b);
            m = m.max(v[0].hypot(v[1]));
        }
    }
    m
}

pub fn solve_transport<V: ElementVector>(tp: &TransportProblem<'_, V>) -> Result<ScalarField> {
    solve_transport_detailed(tp).map(|s| s.sigma)
}

pub fn solve_transport_detailed<V: ElementVector>(tp: &TransportProblem<'_, V>) -> Result<TransportSolution> {
    let mesh = tp.source.mesh().clone();
    ensure_same(&mesh, tp.boundary.mesh())?;
    if let Some(a) = tp.anchor {
        ensure_same(&mesh, a.mesh())?;
    }
    let opts = tp.options;
    let v = tp.velocity;
    let vmax = max_speed(v, &mesh);
    let epsilon = match opts.diffusion {
        Diffusion::Relative(c) => c * mesh.h() * vmax,
        Diffusion::Absolute(e) => e,
    };
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!("artificial diffusion must be finite and >= 0, got {epsilon}")));
    }
    let inflow_edges = classify_inflow(v, &mesh);
    if epsilon == 0.0 {
        if vmax == 0.0 {
            return Err(Error::DegenerateTransport("velocity vanishes and there is no diffusion".into()));
        }
        if inflow_edges.is_empty() {
            return Err(Error::DegenerateTransport(
                "no inflow boundary and no diffusion; the problem is not well posed".into(),
            ));
        }
    }

    let pattern = mesh.pattern().clone();
    let mut galerkin = CsrMatrix::zeros(pattern.clone());
    let mut stab = CsrMatrix::zeros(pattern);
    let mut rhs: Vec<f64> = tp
        .source
        .values()
        .iter()
        .zip(mesh.lumped_mass())
        .map(|(g, m)| g * m)
        .collect();
    let cutoff = 1e-12 * vmax;

    for (t, tri) in mesh.triangles().iter().enumerate() {
        let g = mesh.basis_gradients(t);
        let area = mesh.area(t);
        let w = area / 3.0;
        let vq = QUAD_POINTS.map(|q| v.eval(t, q));
        let mut adv = [[0.0; 3]; 3];
        for (qi, q) in QUAD_POINTS.iter().enumerate() {
            for a in 0..3 {
                let vg = vq[qi][0] * g[a][0] + vq[qi][1] * g[a][1];
                for b in 0..3 {
                    adv[a][b] -= w * q[b] * vg;
                }
            }
        }
        galerkin.add_local(t, &adv);

        let mut s = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                s[a][b] = epsilon * area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
            }
        }
        let speed = vq.iter().fold(0.0f64, |m, x| m.max(x[0].hypot(x[1])));
        if opts.supg && speed > cutoff {
            let ht = mesh.diameter(t);
            let tau = ht / (2.0 * speed + epsilon / ht);
            for (qi, q) in QUAD_POINTS.iter().enumerate() {
                let div = v.divergence(t, *q);
                let gq = tp.source.at(t, *q);
                for a in 0..3 {
                    let test = tau * w * (vq[qi][0] * g[a][0] + vq[qi][1] * g[a][1]);
                    for b in 0..3 {
                        let vgb = vq[qi][0] * g[b][0] + vq[qi][1] * g[b][1];
                        s[a][b] += test * (vgb + div * q[b]);
                    }
                    if tp.anchor.is_none() {
                        rhs[tri[a]] += test * gq;
                    }
                }
            }
        }
        stab.add_local(t, &s);
    }

    for e in mesh.boundary_edges() {
        let k = e.local_edge;
        let mut local = [[0.0; 3]; 3];
        for s in EDGE_GAUSS {
            let mut bary = [0.0; 3];
            bary[k] = 1.0 - s;
            bary[(k + 1) % 3] = s;
            let vv = v.eval(e.triangle, bary);
            let flux = 0.5 * e.length * (vv[0] * e.normal[0] + vv[1] * e.normal[1]);
            for a in 0..3 {
                for b in 0..3 {
                    local[a][b] += flux * bary[a] * bary[b];
                }
            }
        }
        galerkin.add_local(e.triangle, &local);
    }

    if let Some(anchor) = tp.anchor {
        let sa = stab.mul(anchor.values());
        for (r, x) in rhs.iter_mut().zip(sa) {
            *r += x;
        }
    }
    let mut system = galerkin;
    system.add_scaled(1.0, &stab);

    let mut fixed = vec![false; mesh.n_vertices()];
    if epsilon > 0.0 {
        fixed.copy_from_slice(mesh.boundary_mask());
    } else {
        for &i in &inflow_edges {
            for &n in &mesh.boundary_edges()[i].vertices {
                fixed[n] = true;
            }
        }
    }
    let bvals = tp.boundary.values();
    for (i, &f) in fixed.iter().enumerate() {
        if f {
            system.set_identity_row(i);
            rhs[i] = bvals[i];
        }
    }

    let mut x = match tp.guess {
        Some(g) => {
            ensure_same(&mesh, g.mesh())?;
            g.values().to_vec()
        }
        None => vec![0.0; mesh.n_vertices()],
    };
    for (i, &f) in fixed.iter().enumerate() {
        if f {
            x[i] = bvals[i];
        }
    }
    let precond = Preconditioner::build(opts.preconditioner, &system);
    let stats = bicgstab(&system, &rhs, &mut x, &precond, opts.rel_tol, opts.max_iter)?;
    if let Some(index) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(TransportSolution {
        sigma: ScalarField::from_vec_unchecked(mesh, x),
        epsilon,
        inflow_edges,
        iterations: stats.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{weak_divergence_with, Gauge, VectorField};
    use crate::mesh::build_unit_square_mesh;
    use std::sync::Arc;

    fn square(n: usize) -> Arc<Mesh> {
        Arc::new(build_unit_square_mesh(n).unwrap())
    }

    #[test]
    fn inflow_classification() {
        let mesh = square(8);
        let right = VectorField::nodal_from_fn(mesh.clone(), |_| [1.0, 0.0]);
        let inflow = classify_inflow(&right, &mesh);
        assert_eq!(inflow.len(), 8);
        for i in inflow {
            let m = mesh.boundary_edges()[i].midpoint(&mesh);
            assert!(m[0].abs() < 1e-14);
        }
        let c = Gauge::default().center;
        let outward = VectorField::nodal_from_fn(mesh.clone(), |p| [0.5 * (p[0] - c[0]), 0.5 * (p[1] - c[1])]);
        assert!(classify_inflow(&outward, &mesh).is_empty());
        let inward = VectorField::nodal_from_fn(mesh.clone(), |p| [-0.5 * (p[0] - c[0]), -0.5 * (p[1] - c[1])]);
        assert_eq!(classify_inflow(&inward, &mesh).len(), mesh.boundary_edges().len());
    }

    #[test]
    fn constant_is_transported_exactly() {
        let mesh = square(16);
        let v = VectorField::nodal_from_fn(mesh.clone(), |_| [1.0, 0.0]);
        let g = ScalarField::zeros(mesh.clone());
        let b = ScalarField::constant(mesh.clone(), 0.7);
        for diffusion in [Diffusion::Relative(0.5), Diffusion::Absolute(0.0)] {
            let mut tp = TransportProblem::new(&v, &g, &b);
            tp.options.diffusion = diffusion;
            tp.options.rel_tol = 1e-13;
            let s = solve_transport(&tp).unwrap();
            let worst = s.values().iter().fold(0.0f64, |m, x| m.max((x - 0.7).abs()));
            assert!(worst < 1e-8, "{diffusion:?}: {worst}");
        }
    }

    #[test]
    fn source_scaling_is_linear() {
        let mesh = square(16);
        let v = VectorField::affine_from_fn(mesh.clone(), |p| {
            let e = Gauge::default().eval(p);
            [e[1], -e[0]]
        });
        let g = ScalarField::from_fn(mesh.clone(), |p| (3.0 * p[0]).sin() + p[1]);
        let g3 = g.scaled(3.0);
        let zero = ScalarField::zeros(mesh.clone());
        let mut tp = TransportProblem::new(&v, &g, &zero);
        tp.options.rel_tol = 1e-13;
        let a = solve_transport(&tp).unwrap();
        tp.source = &g3;
        let b = solve_transport(&tp).unwrap();
        assert!(b.axpy(-3.0, &a).unwrap().max_abs() <= 1e-9 * b.max_abs());
    }

    #[test]
    fn degenerate_problems_are_reported() {
        let mesh = square(6);
        let zero_v = VectorField::nodal_from_fn(mesh.clone(), |_| [0.0, 0.0]);
        let g = ScalarField::zeros(mesh.clone());
        let mut tp = TransportProblem::new(&zero_v, &g, &g);
        tp.options.diffusion = Diffusion::Absolute(0.0);
        assert!(matches!(solve_transport(&tp), Err(Error::DegenerateTransport(_))));
        let outward = VectorField::nodal_from_fn(mesh.clone(), |p| [p[0] - 0.5, p[1] - 0.5]);
        let mut tp = TransportProblem::new(&outward, &g, &g);
        tp.options.diffusion = Diffusion::Absolute(0.0);
        assert!(matches!(solve_transport(&tp), Err(Error::DegenerateTransport(_))));
    }

    fn manufactured_error(n: usize) -> f64 {
        let mesh = square(n);
        let v = VectorField::affine_from_fn(mesh.clone(), |p| [0.5 * (p[0] - 0.5), 0.5 * (p[1] - 0.5)]);
        let exact = ScalarField::from_fn(mesh.clone(), |p| 0.4 + 0.2 * (2.0 * p[0]).sin() * (3.0 * p[1]).cos());
        let g = weak_divergence_with(&mesh, |t, q| {
            let s = exact.at(t, q);
            let w = v.eval(t, q);
            [s * w[0], s * w[1]]
        });
        let got = solve_transport(&TransportProblem::new(&v, &g, &exact)).unwrap();
        got.sub(&exact).unwrap().l2_norm() / exact.l2_norm()
    }

    #[test]
    fn manufactured_solution_converges() {
        let e32 = manufactured_error(32);
        let e64 = manufactured_error(64);
        assert!(e64 < 5e-2, "{e64}");
        assert!(e32 / e64 >= 1.7, "{e32} / {e64}");
    }
}
