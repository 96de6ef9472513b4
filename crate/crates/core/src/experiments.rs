//! Synthetic phantoms, diffusion tensors, noise and error metrics.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fields::{ensure_same, ScalarField, Sym2, TensorField};
use crate::mesh::{DomainKind, Mesh, Point};

/// Centre of the radial phantom.
pub const PHANTOM_CENTER: Point = [0.5, 0.5];
pub const PHANTOM_INNER_RADIUS: f64 = 0.12;
pub const PHANTOM_OUTER_RADIUS: f64 = 0.46;
pub const PHANTOM_PEAK: f64 = 0.6;
pub const PHANTOM_BACKGROUND: f64 = 0.2;

/// Quintic smoothstep `s³(6s² − 15s + 10)`.
pub fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (s * (6.0 * s - 15.0) + 10.0)
}

/// Radial profile of the reference factor: 0.6 inside `r ≤ 0.12`, 0.2
/// outside `r ≥ 0.46`, and a smoothstep blend in between.
pub fn phantom_profile(r: f64) -> f64 {
    if r <= PHANTOM_INNER_RADIUS {
        PHANTOM_PEAK
    } else if r < PHANTOM_OUTER_RADIUS {
        let s = (PHANTOM_OUTER_RADIUS - r) / (PHANTOM_OUTER_RADIUS - PHANTOM_INNER_RADIUS);
        (PHANTOM_PEAK - PHANTOM_BACKGROUND) * smoothstep(s) + PHANTOM_BACKGROUND
    } else {
        PHANTOM_BACKGROUND
    }
}

pub fn ring_sigma(mesh: Arc<Mesh>) -> ScalarField {
    ScalarField::from_fn(mesh, |p| {
        phantom_profile((p[0] - PHANTOM_CENTER[0]).hypot(p[1] - PHANTOM_CENTER[1]))
    })
}

/// Gaussian bump truncated at three widths and shifted so it reaches zero
/// continuously there; peak value 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub center: Point,
    pub width: f64,
}

impl Bump {
    pub fn eval(&self, p: Point) -> f64 {
        let r2 = (p[0] - self.center[0]).powi(2) + (p[1] - self.center[1]).powi(2);
        let cut = (-4.5f64).exp();
        if r2 >= 9.0 * self.width * self.width {
            0.0
        } else {
            ((-r2 / (2.0 * self.width * self.width)).exp() - cut) / (1.0 - cut)
        }
    }
}

/// Perturbation of `d11`.
pub const TENSOR_BUMP_11: Bump = Bump {
    center: [0.40, 0.44],
    width: 0.12,
};
/// Perturbation of `d22`.
pub const TENSOR_BUMP_22: Bump = Bump {
    center: [0.56, 0.52],
    width: 0.12,
};
/// Perturbation of `d12`.
pub const TENSOR_BUMP_12: Bump = Bump {
    center: [0.48, 0.48],
    width: 0.06,
};
pub const TENSOR_AMPLITUDE_11: f64 = 0.3;
pub const TENSOR_AMPLITUDE_22: f64 = 0.3;
pub const TENSOR_AMPLITUDE_12: f64 = 0.2;
/// Eigenvalue floor of the synthetic tensor.
pub const TENSOR_LAMBDA: f64 = 0.4;

/// Synthetic tensor and the number of nodes whose eigenvalues had to be
/// clipped into `[TENSOR_LAMBDA, 1]`.
#[derive(Debug, Clone)]
pub struct SyntheticTensor {
    pub tensor: TensorField,
    pub clipped_nodes: usize,
}

/// `d11 = 1 − 0.3φ₁`, `d22 = 1 − 0.3φ₂`, `d12 = 0.2φ₃` with truncated
/// Gaussian bumps φᵢ; identity away from the bumps.
pub fn bump_tensor(mesh: Arc<Mesh>) -> SyntheticTensor {
    let mut clipped_nodes = 0;
    let entries = mesh
        .vertices()
        .iter()
        .map(|&p| {
            let d = Sym2 {
                d11: 1.0 - TENSOR_AMPLITUDE_11 * TENSOR_BUMP_11.eval(p),
                d12: TENSOR_AMPLITUDE_12 * TENSOR_BUMP_12.eval(p),
                d22: 1.0 - TENSOR_AMPLITUDE_22 * TENSOR_BUMP_22.eval(p),
            };
            let [lo, hi] = d.eigenvalues();
            if lo < TENSOR_LAMBDA || hi > 1.0 {
                clipped_nodes += 1;
                clip_eigenvalues(d, TENSOR_LAMBDA, 1.0)
            } else {
                d
            }
        })
        .collect();
    SyntheticTensor {
        tensor: TensorField::new(mesh, entries).expect("finite tensor entries"),
        clipped_nodes,
    }
}

fn clip_eigenvalues(d: Sym2, lo: f64, hi: f64) -> Sym2 {
    let [l1, l2] = d.eigenvalues();
    // Unit eigenvector of the larger eigenvalue.
    let (vx, vy) = if d.d12.abs() > 1e-300 {
        let (x, y) = (d.d12, l2 - d.d11);
        let n = x.hypot(y);
        (x / n, y / n)
    } else if d.d11 >= d.d22 {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let (a, b) = (l1.clamp(lo, hi), l2.clamp(lo, hi));
    // D = b v vᵀ + a w wᵀ with w ⟂ v.
    Sym2 {
        d11: b * vx * vx + a * vy * vy,
        d12: (b - a) * vx * vy,
        d22: b * vy * vy + a * vx * vx,
    }
}

/// `g + δ‖g‖ w/‖w‖` with `w` uniform in `[−1, 1]` per node.
pub fn add_noise(g: &ScalarField, delta: f64, seed: u64) -> Result<ScalarField> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::Config(format!("noise level must be >= 0, got {delta}")));
    }
    if delta == 0.0 {
        return Ok(g.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..g.values().len()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let w = ScalarField::new(g.mesh().clone(), w)?;
    let wn = w.l2_norm();
    if wn == 0.0 {
        return Ok(g.clone());
    }
    g.axpy(delta * g.l2_norm() / wn, &w)
}

/// `‖σ − σ*‖ / ‖σ*‖` in L² over the interior nodes.
pub fn relative_l2_error(sigma: &ScalarField, truth: &ScalarField) -> Result<f64> {
    ensure_same(sigma.mesh(), truth.mesh())?;
    let denom = truth.interior_l2_norm();
    if denom == 0.0 {
        return Err(Error::Config("reference field vanishes on the interior".into()));
    }
    Ok(sigma.sub(truth)?.interior_l2_norm() / denom)
}

/// Named test configuration.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub name: String,
    pub sigma: ScalarField,
    pub tensor: TensorField,
    /// Background factor, equal to `sigma` on the boundary.
    pub background: f64,
}

/// Names accepted by [`phantom`].
pub const PHANTOM_NAMES: [&str; 3] = ["ring", "ring-isotropic", "blob"];

/// Looks up a phantom by name:
/// * `ring`: radial factor with the bump tensor;
/// * `ring-isotropic`: the same factor with `D = I`;
/// * `blob`: a low-contrast Gaussian factor with `D = I`.
pub fn phantom(name: &str, mesh: Arc<Mesh>) -> Result<Phantom> {
    let (sigma, tensor, background) = match name {
        "ring" => (
            ring_sigma(mesh.clone()),
            bump_tensor(mesh.clone()).tensor,
            PHANTOM_BACKGROUND,
        ),
        "ring-isotropic" => (
            ring_sigma(mesh.clone()),
            TensorField::identity(mesh.clone()),
            PHANTOM_BACKGROUND,
        ),
        "blob" => {
            let bump = Bump {
                center: [0.45, 0.55],
                width: 0.1,
            };
            (
                ScalarField::from_fn(mesh.clone(), |p| 0.4 + 0.1 * bump.eval(p)),
                TensorField::identity(mesh.clone()),
                0.4,
            )
        }
        other => return Err(Error::UnknownPhantom(other.to_string())),
    };
    Ok(Phantom {
        name: name.to_string(),
        sigma,
        tensor,
        background,
    })
}

/// P1 interpolation of a field on a unit-square mesh onto the vertices of
/// another mesh covering (part of) the unit square.
pub fn interpolate_from_square(field: &ScalarField, target: Arc<Mesh>) -> Result<ScalarField> {
    let src = field.mesh();
    let DomainKind::UnitSquare { n, .. } = src.kind() else {
        return Err(Error::InvalidMesh("interpolation source must be a unit-square mesh".into()));
    };
    let verts = src.vertices();
    let mut values = Vec::with_capacity(target.n_vertices());
    for (idx, &p) in target.vertices().iter().enumerate() {
        if !(-1e-12..=1.0 + 1e-12).contains(&p[0]) || !(-1e-12..=1.0 + 1e-12).contains(&p[1]) {
            return Err(Error::InvalidMesh(format!("target vertex {idx} lies outside the unit square")));
        }
        let i = ((p[0] * n as f64).floor() as usize).min(n - 1);
        let j = ((p[1] * n as f64).floor() as usize).min(n - 1);
        let cell = i + j * n;
        let mut best = (f64::NEG_INFINITY, 0.0);
        for t in [2 * cell, 2 * cell + 1] {
            let tri = src.triangles()[t];
            let bary = barycentric(p, tri.map(|v| verts[v]));
            let worst = bary.iter().cloned().fold(f64::INFINITY, f64::min);
            if worst > best.0 {
                best = (worst, field.at(t, bary));
            }
        }
        values.push(best.1);
    }
    ScalarField::new(target, values)
}

fn barycentric(p: Point, v: [Point; 3]) -> [f64; 3] {
    let det = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]);
    let l1 = ((p[0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (p[1] - v[0][1])) / det;
    let l2 = ((v[1][0] - v[0][0]) * (p[1] - v[0][1]) - (p[0] - v[0][0]) * (v[1][1] - v[0][1])) / det;
    [1.0 - l1 - l2, l1, l2]
}

/// Random smooth increment that vanishes on the boundary of the unit
/// square: a short sine series with `modes` frequencies per direction and
/// sup-norm at most `amplitude`.
pub fn random_sine_series(mesh: Arc<Mesh>, modes: usize, amplitude: f64, rng: &mut impl Rng) -> ScalarField {
    let mut coeffs = Vec::with_capacity(modes * modes);
    for k in 1..=modes {
        for l in 1..=modes {
            coeffs.push((k, l, rng.gen_range(-1.0f64..1.0)));
        }
    }
    let total: f64 = coeffs.iter().map(|c| c.2.abs()).sum();
    let scale = if total > 0.0 { amplitude / total } else { 0.0 };
    let pi = std::f64::consts::PI;
    let f = ScalarField::from_fn(mesh, |p| {
        coeffs
            .iter()
            .map(|&(k, l, c)| c * (k as f64 * pi * p[0]).sin() * (l as f64 * pi * p[1]).sin())
            .sum::<f64>()
            * scale
    });
    f.interior()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_unit_square_mesh;

    fn square(n: usize) -> Arc<Mesh> {
        Arc::new(build_unit_square_mesh(n).unwrap())
    }

    #[test]
    fn profile_values() {
        assert_eq!(phantom_profile(0.0), 0.6);
        assert_eq!(phantom_profile(0.8), 0.2);
        assert!((phantom_profile(0.29) - 0.4).abs() < 1e-15);
        // Continuous at both ends of the blend.
        assert!((phantom_profile(0.12 + 1e-12) - 0.6).abs() < 1e-9);
        assert!((phantom_profile(0.46 - 1e-12) - 0.2).abs() < 1e-9);
        let mesh = square(8);
        let s = ring_sigma(mesh.clone());
        let centre = mesh.vertices().iter().position(|p| p == &[0.5, 0.5]).unwrap();
        assert_eq!(s.values()[centre], 0.6);
        assert_eq!(s.values()[0], 0.2);
    }

    #[test]
    fn profile_is_radial_and_bounded() {
        let mesh = square(32);
        let s = ring_sigma(mesh.clone());
        assert!(s.min() >= 0.2 && s.max() <= 0.6);
        let v = mesh.vertices();
        for i in 0..v.len() {
            // Mirror images through the centre lines share the radius.
            let mirror = [1.0 - v[i][0], v[i][1]];
            let j = v.iter().position(|p| (p[0] - mirror[0]).abs() < 1e-12 && (p[1] - mirror[1]).abs() < 1e-12);
            assert_eq!(s.values()[i], s.values()[j.unwrap()]);
        }
    }

    #[test]
    fn tensor_is_admissible() {
        let mesh = square(64);
        let t = bump_tensor(mesh.clone());
        assert_eq!(t.clipped_nodes, 0);
        let (lo, hi) = t.tensor.eigenvalue_range();
        assert!(lo >= TENSOR_LAMBDA && hi <= 1.0 + 1e-12, "{lo} {hi}");
        assert!(t.tensor.max_distance_to_identity() <= 0.5);
        for e in t.tensor.entries() {
            assert!(e.det() > 0.0 && e.trace() < 2.0 + 1e-12);
        }
        let corner = t.tensor.entries()[0];
        assert_eq!(corner, Sym2::IDENTITY);
    }

    #[test]
    fn clipping_lands_in_range() {
        let d = Sym2 { d11: 1.0, d12: 0.3, d22: 0.9 };
        let c = clip_eigenvalues(d, 0.4, 1.0);
        let [lo, hi] = c.eigenvalues();
        assert!(lo >= 0.4 - 1e-12 && hi <= 1.0 + 1e-12);
        let inside = Sym2 { d11: 0.8, d12: 0.1, d22: 0.7 };
        let same = clip_eigenvalues(inside, 0.4, 1.0);
        assert!((same.d11 - inside.d11).abs() < 1e-12 && (same.d12 - inside.d12).abs() < 1e-12);
    }

    #[test]
    fn noise_has_prescribed_norm() {
        let mesh = square(16);
        let g = ScalarField::from_fn(mesh, |p| (p[0] * 5.0).sin() + p[1]);
        assert_eq!(add_noise(&g, 0.0, 1).unwrap().values(), g.values());
        let a = add_noise(&g, 0.24, 1).unwrap();
        let b = add_noise(&g, 0.24, 2).unwrap();
        let ra = a.sub(&g).unwrap().l2_norm() / g.l2_norm();
        let rb = b.sub(&g).unwrap().l2_norm() / g.l2_norm();
        assert!((ra - 0.24).abs() < 1e-12 && (rb - 0.24).abs() < 1e-12);
        assert_ne!(a.values(), b.values());
        assert_eq!(add_noise(&g, 0.24, 1).unwrap().values(), a.values());
        assert!(add_noise(&g, -0.1, 1).is_err());
    }

    #[test]
    fn relative_error_metric() {
        let mesh = square(16);
        let s = ring_sigma(mesh);
        assert_eq!(relative_l2_error(&s, &s).unwrap(), 0.0);
        assert!((relative_l2_error(&s.scaled(1.01), &s).unwrap() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn initial_guess_baseline_is_pinned() {
        let mesh = square(128);
        let s = ring_sigma(mesh.clone());
        let e = relative_l2_error(&ScalarField::constant(mesh, 0.2), &s).unwrap();
        assert!((e - INITIAL_GUESS_BASELINE_128).abs() < 1e-9, "{e:.12}");
    }

    /// Relative error of the constant 0.2 guess against the phantom at n = 128.
    const INITIAL_GUESS_BASELINE_128: f64 = 0.535_665_268_295;

    #[test]
    fn registry() {
        let mesh = square(8);
        for name in PHANTOM_NAMES {
            let p = phantom(name, mesh.clone()).unwrap();
            for (i, v) in p.sigma.values().iter().enumerate() {
                if mesh.is_boundary(i) {
                    assert!((v - p.background).abs() < 1e-12);
                }
            }
        }
        assert!(matches!(phantom("nope", mesh), Err(Error::UnknownPhantom(_))));
    }

    #[test]
    fn interpolation_reproduces_affine_fields() {
        let fine = square(12);
        let f = ScalarField::from_fn(fine, |p| 2.0 * p[0] - 0.5 * p[1] + 0.25);
        for target in [square(5), square(7), Arc::new(crate::mesh::build_disk_mesh([0.5, 0.5], 0.5, 2).unwrap())] {
            let g = interpolate_from_square(&f, target.clone()).unwrap();
            for (v, p) in g.values().iter().zip(target.vertices()) {
                assert!((v - (2.0 * p[0] - 0.5 * p[1] + 0.25)).abs() < 1e-12);
            }
        }
        let coarse = square(4);
        let nested = interpolate_from_square(&ScalarField::from_fn(square(8), |p| p[0] * p[1]), coarse.clone()).unwrap();
        for (v, p) in nested.values().iter().zip(coarse.vertices()) {
            assert!((v - p[0] * p[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn sine_series_vanishes_on_boundary() {
        let mesh = square(16);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = random_sine_series(mesh.clone(), 3, 0.1, &mut rng);
        assert!(f.max_abs() <= 0.1 + 1e-12);
        for (i, v) in f.values().iter().enumerate() {
            if mesh.is_boundary(i) {
                assert_eq!(*v, 0.0);
            }
        }
    }
}
