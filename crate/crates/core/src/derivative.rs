//! Fréchet derivative of the data map and its adjoint.
//!
//! Both need one extra Neumann solve on the stiffness of the base point,
//! which [`LinearizedState`] keeps assembled. The derivative is the exact
//! derivative of the discrete map because the same quadrature drives the
//! stiffness, the loads and the weak divergence. The adjoint is the exact
//! transpose in the lumped-mass pairing [`lumped_inner`] for data that
//! vanish on the boundary, which is the only kind the inversion feeds it.
//!
//! [`lumped_inner`]: crate::fields::lumped_inner

use crate::error::Result;
use crate::fields::{b0_cross, cross_b0, element_gradient, ensure_same, lump_to_nodes, weak_divergence_with, ScalarField};
use crate::forward::{ForwardProblem, ForwardState};

#[derive(Debug, Clone)]
pub struct LinearizedState {
    state: ForwardState,
}

impl LinearizedState {
    pub fn new(fp: &ForwardProblem, sigma: &ScalarField) -> Result<LinearizedState> {
        Ok(LinearizedState { state: fp.solve(sigma)? })
    }

    pub fn from_state(state: ForwardState) -> LinearizedState {
        LinearizedState { state }
    }

    pub fn state(&self) -> &ForwardState {
        &self.state
    }

    pub fn into_state(self) -> ForwardState {
        self.state
    }

    /// `DF[σ](h) = ∇·((σD∇φ_h + hDE) × B₀)`, with `φ_h` the Neumann
    /// potential of the flux `hDE`.
    pub fn df_apply(&self, h: &ScalarField) -> Result<ScalarField> {
        let st = &self.state;
        let sigma = st.sigma();
        ensure_same(h.mesh(), sigma.mesh())?;
        let drift = st.velocity();
        let op = st.operator();
        let load = op.load_with(|t, q| {
            let f = drift.flux(t, q);
            let hv = h.at(t, q);
            [hv * f[0], hv * f[1]]
        });
        let (phi, _) = op.solve_load(&load, None)?;
        let mesh = sigma.mesh();
        let grads: Vec<[f64; 2]> = (0..mesh.n_triangles()).map(|t| element_gradient(&phi, t)).collect();
        Ok(weak_divergence_with(mesh, |t, q| {
            let d = st.tensor().at(t, q);
            let dphi = d.apply(grads[t]);
            let s = sigma.at(t, q);
            let f = drift.flux(t, q);
            let hv = h.at(t, q);
            cross_b0([s * dphi[0] + hv * f[0], s * dphi[1] + hv * f[1]])
        }))
    }

    /// `DF[σ]*(g) = −DE·∇Φ_g − ∇g·(DE × B₀)`, with `Φ_g` the Neumann
    /// potential of the flux `σD(B₀ × ∇g)`; products are formed at the
    /// quadrature points and lumped to the nodes.
    pub fn df_adjoint(&self, g: &ScalarField) -> Result<ScalarField> {
        self.df_adjoint_from(g, None).map(|(r, _)| r)
    }

    /// [`df_adjoint`](Self::df_adjoint) with the potential solve seeded by
    /// `guess`; also returns the potential `Φ_g` for reuse as the next seed.
    pub fn df_adjoint_from(&self, g: &ScalarField, guess: Option<&ScalarField>) -> Result<(ScalarField, ScalarField)> {
        let st = &self.state;
        let sigma = st.sigma();
        ensure_same(g.mesh(), sigma.mesh())?;
        let mesh = sigma.mesh();
        let dg: Vec<[f64; 2]> = (0..mesh.n_triangles()).map(|t| element_gradient(g, t)).collect();
        let op = st.operator();
        let load = op.load_with(|t, q| {
            let r = st.tensor().at(t, q).apply(b0_cross(dg[t]));
            let s = sigma.at(t, q);
            [s * r[0], s * r[1]]
        });
        let (big_phi, _) = op.solve_load(&load, guess.map(|g| g.values()))?;
        let dphi: Vec<[f64; 2]> = (0..mesh.n_triangles()).map(|t| element_gradient(&big_phi, t)).collect();
        let drift = st.velocity();
        let out = lump_to_nodes(mesh, |t, q| {
            let f = drift.flux(t, q);
            let v = cross_b0(f);
            -(f[0] * dphi[t][0] + f[1] * dphi[t][1]) - (dg[t][0] * v[0] + dg[t][1] * v[1])
        });
        Ok((out, big_phi))
    }

    /// Power-method estimate of the largest eigenvalue of `DF*DF` acting on
    /// fields that vanish on the boundary, in the lumped pairing.
    pub fn normal_operator_norm(&self, iterations: usize, seed: &ScalarField) -> Result<f64> {
        let mut x = seed.interior();
        let mut norm = x.lumped_norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        x = x.scaled(1.0 / norm);
        let mut estimate = 0.0;
        for _ in 0..iterations {
            let y = self.df_adjoint(&self.df_apply(&x)?.interior())?.interior();
            norm = y.lumped_norm();
            if norm == 0.0 {
                return Ok(0.0);
            }
            estimate = norm;
            x = y.scaled(1.0 / norm);
        }
        Ok(estimate)
    }
}
