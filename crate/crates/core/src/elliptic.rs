//! Pure-Neumann problem `∇·(σD∇u) = −∇·E_in`, `(σD∇u + E_in)·ν = 0`,
//! in the weak form `∫ σD∇u·∇φ = −∫ E_in·∇φ`.
//!
//! The stiffness matrix depends only on `(σ, D)`, so it is assembled and
//! preconditioned once and shared by every load built on top of it.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fields::{ensure_same, ElementVector, ScalarField, Sym2, TensorField, QUAD_POINTS};
use crate::mesh::Mesh;
use crate::sparse::{pcg, CsrMatrix, Preconditioner, PreconditionerKind, SolveStats};

/// Tolerance used when synthesising data.
pub const SYNTHESIS_TOL: f64 = 1e-10;
/// Tolerance used inside reconstruction iterations.
pub const ITERATION_TOL: f64 = 1e-8;

/// Pointwise bounds required of the coefficient `σD`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientBounds {
    /// Lower bound on σ.
    pub c1: f64,
    /// Upper bound on σ.
    pub c2: f64,
    /// Lower bound on the eigenvalues of D (the upper bound is 1).
    pub lambda: f64,
}

impl Default for CoefficientBounds {
    fn default() -> Self {
        CoefficientBounds {
            c1: 1e-6,
            c2: 1e6,
            lambda: 1e-6,
        }
    }
}

impl CoefficientBounds {
    pub fn check(&self, sigma: &ScalarField, tensor: &TensorField) -> Result<()> {
        for (node, &s) in sigma.values().iter().enumerate() {
            if !(s >= self.c1 - 1e-12 && s <= self.c2 + 1e-12) {
                return Err(Error::CoefficientBound {
                    node,
                    detail: format!("sigma = {s} outside [{}, {}]", self.c1, self.c2),
                });
            }
        }
        tensor.check_ellipticity(self.lambda)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
    pub preconditioner: PreconditionerKind,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            rel_tol: SYNTHESIS_TOL,
            max_iter: 20_000,
            preconditioner: PreconditionerKind::Jacobi,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(self, rel_tol: f64) -> SolverOptions {
        SolverOptions { rel_tol, ..self }
    }
}

/// Stiffness matrix of `σD` with its preconditioner.
#[derive(Debug)]
pub struct NeumannOperator {
    mesh: Arc<Mesh>,
    stiffness: CsrMatrix,
    precond: Preconditioner,
    options: SolverOptions,
}

impl NeumannOperator {
    /// Assembles the stiffness of `σD` after checking the coefficient bounds.
    pub fn assemble(
        sigma: &ScalarField,
        tensor: &TensorField,
        bounds: &CoefficientBounds,
        options: SolverOptions,
    ) -> Result<NeumannOperator> {
        ensure_same(sigma.mesh(), tensor.mesh())?;
        bounds.check(sigma, tensor)?;
        let mesh = sigma.mesh().clone();
        let mut stiffness = CsrMatrix::zeros(mesh.pattern().clone());
        for t in 0..mesh.n_triangles() {
            let g = mesh.basis_gradients(t);
            let w = mesh.area(t) / 3.0;
            let mut k = Sym2 {
                d11: 0.0,
                d12: 0.0,
                d22: 0.0,
            };
            for q in QUAD_POINTS {
                let s = sigma.at(t, q);
                let d = tensor.at(t, q);
                k.d11 += w * s * d.d11;
                k.d12 += w * s * d.d12;
                k.d22 += w * s * d.d22;
            }
            let mut local = [[0.0; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    let kb = k.apply(g[b]);
                    local[a][b] = g[a][0] * kb[0] + g[a][1] * kb[1];
                }
            }
            stiffness.add_local(t, &local);
        }
        let precond = Preconditioner::build(options.preconditioner, &stiffness);
        Ok(NeumannOperator {
            mesh,
            stiffness,
            precond,
            options,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    pub fn options(&self) -> SolverOptions {
        self.options
    }

    /// Load vector `bᵢ = −∫ E_in·∇φᵢ`, with `E_in` sampled at the quadrature
    /// points as `flux(t, bary)`.
    pub fn load_with(&self, flux: impl Fn(usize, [f64; 3]) -> [f64; 2]) -> Vec<f64> {
        let mesh = &self.mesh;
        let mut b = vec![0.0; mesh.n_vertices()];
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let g = mesh.basis_gradients(t);
            let w = mesh.area(t) / 3.0;
            let mut sum = [0.0; 2];
            for q in QUAD_POINTS {
                let e = flux(t, q);
                sum[0] += e[0];
                sum[1] += e[1];
            }
            for k in 0..3 {
                b[tri[k]] -= w * (sum[0] * g[k][0] + sum[1] * g[k][1]);
            }
        }
        b
    }

    pub fn load(&self, e_in: &impl ElementVector) -> Vec<f64> {
        self.load_with(|t, q| e_in.eval(t, q))
    }

    /// Mean-zero solution for the given load; `guess` seeds the iteration.
    pub fn solve_load(&self, load: &[f64], guess: Option<&[f64]>) -> Result<(ScalarField, SolveStats)> {
        if load.len() != self.mesh.n_vertices() {
            return Err(Error::LengthMismatch {
                expected: self.mesh.n_vertices(),
                got: load.len(),
            });
        }
        let mut x = match guess {
            Some(g) => g.to_vec(),
            None => vec![0.0; load.len()],
        };
        let stats = pcg(
            &self.stiffness,
            load,
            &mut x,
            &self.precond,
            self.options.rel_tol,
            self.options.max_iter,
            true,
        )?;
        Ok((ScalarField::from_vec_unchecked(self.mesh.clone(), x), stats))
    }
}

/// A Neumann operator together with one right-hand side.
#[derive(Debug, Clone)]
pub struct NeumannSystem {
    operator: Arc<NeumannOperator>,
    load: Vec<f64>,
}

impl NeumannSystem {
    pub fn assemble(
        sigma: &ScalarField,
        tensor: &TensorField,
        e_in: &impl ElementVector,
        bounds: &CoefficientBounds,
        options: SolverOptions,
    ) -> Result<NeumannSystem> {
        let operator = Arc::new(NeumannOperator::assemble(sigma, tensor, bounds, options)?);
        Ok(NeumannSystem::with_operator(operator, e_in))
    }

    pub fn with_operator(operator: Arc<NeumannOperator>, e_in: &impl ElementVector) -> NeumannSystem {
        let load = operator.load(e_in);
        NeumannSystem { operator, load }
    }

    pub fn operator(&self) -> &Arc<NeumannOperator> {
        &self.operator
    }

    pub fn load(&self) -> &[f64] {
        &self.load
    }

    pub fn solve(&self) -> Result<ScalarField> {
        self.operator.solve_load(&self.load, None).map(|(u, _)| u)
    }

    pub fn solve_from(&self, guess: &ScalarField) -> Result<(ScalarField, SolveStats)> {
        self.operator.solve_load(&self.load, Some(guess.values()))
    }
}
