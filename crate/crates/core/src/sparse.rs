//! Compressed-row matrices on the P1 vertex graph and the Krylov solvers
//! behind the elliptic and transport modules.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Sparsity pattern of a P1 operator plus, for every triangle, the storage
/// slot of each of its nine local entries.
#[derive(Debug)]
pub struct Pattern {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    diag: Vec<usize>,
    local: Vec<[[usize; 3]; 3]>,
}

impl Pattern {
    pub(crate) fn from_mesh(mesh: &Mesh) -> Pattern {
        let n = mesh.n_vertices();
        let mut adj: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for tri in mesh.triangles() {
            for &a in tri {
                for &b in tri {
                    adj[a].push(b);
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for row in &mut adj {
            row.sort_unstable();
            row.dedup();
            cols.extend_from_slice(row);
            row_ptr.push(cols.len());
        }
        let find = |i: usize, j: usize| -> usize {
            let r = &cols[row_ptr[i]..row_ptr[i + 1]];
            row_ptr[i] + r.binary_search(&j).expect("entry in pattern")
        };
        let diag = (0..n).map(|i| find(i, i)).collect();
        let local = mesh
            .triangles()
            .iter()
            .map(|tri| {
                let mut slots = [[0; 3]; 3];
                for a in 0..3 {
                    for b in 0..3 {
                        slots[a][b] = find(tri[a], tri[b]);
                    }
                }
                slots
            })
            .collect();
        Pattern {
            row_ptr,
            cols,
            diag,
            local,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    fn row(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }
}

#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pattern: Arc<Pattern>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(pattern: Arc<Pattern>) -> CsrMatrix {
        let values = vec![0.0; pattern.nnz()];
        CsrMatrix { pattern, values }
    }

    pub fn n_rows(&self) -> usize {
        self.pattern.n_rows()
    }

    /// Scatter a 3×3 element matrix of triangle `t`; `local[a][b]` couples
    /// test function `a` with trial function `b`.
    pub fn add_local(&mut self, t: usize, local: &[[f64; 3]; 3]) {
        let slots = &self.pattern.local[t];
        for a in 0..3 {
            for b in 0..3 {
                self.values[slots[a][b]] += local[a][b];
            }
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.pattern.row(i);
        match self.pattern.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.pattern.diag.iter().map(|&k| self.values[k]).collect()
    }

    /// Replace row `i` with the identity row.
    pub fn set_identity_row(&mut self, i: usize) {
        for k in self.pattern.row(i) {
            self.values[k] = 0.0;
        }
        self.values[self.pattern.diag[i]] = 1.0;
    }

    /// `self += alpha * other`, both on the same pattern.
    pub fn add_scaled(&mut self, alpha: f64, other: &CsrMatrix) {
        debug_assert!(Arc::ptr_eq(&self.pattern, &other.pattern));
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let p = &*self.pattern;
        for (i, yi) in y.iter_mut().enumerate() {
            let r = p.row(i);
            *yi = self.values[r.clone()].iter().zip(&p.cols[r]).map(|(v, &c)| v * x[c]).sum();
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows()];
        self.matvec(x, &mut y);
        y
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let p = &*self.pattern;
        let mut worst: f64 = 0.0;
        for i in 0..self.n_rows() {
            for k in p.row(i) {
                worst = worst.max((self.values[k] - self.get(p.cols[k], i)).abs());
            }
        }
        worst
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows())
            .map(|i| self.pattern.row(i).map(|k| self.values[k]).sum())
            .collect()
    }
}

/// Which preconditioner the Krylov solvers build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PreconditionerKind {
    Identity,
    #[default]
    Jacobi,
    /// Zero fill-in incomplete LU (incomplete Cholesky for symmetric input).
    Ilu0,
}

#[derive(Debug, Clone)]
pub enum Preconditioner {
    Identity,
    Jacobi(Vec<f64>),
    Ilu0(Ilu0),
}

impl Preconditioner {
    pub fn build(kind: PreconditionerKind, a: &CsrMatrix) -> Preconditioner {
        match kind {
            PreconditionerKind::Identity => Preconditioner::Identity,
            PreconditionerKind::Jacobi => Preconditioner::Jacobi(
                a.diagonal()
                    .into_iter()
                    .map(|d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
                    .collect(),
            ),
            PreconditionerKind::Ilu0 => Preconditioner::Ilu0(Ilu0::factor(a)),
        }
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self {
            Preconditioner::Identity => z.copy_from_slice(r),
            Preconditioner::Jacobi(inv) => {
                for ((zi, ri), di) in z.iter_mut().zip(r).zip(inv) {
                    *zi = ri * di;
                }
            }
            Preconditioner::Ilu0(f) => f.solve(r, z),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ilu0 {
    pattern: Arc<Pattern>,
    lu: Vec<f64>,
    inv_diag: Vec<f64>,
}

impl Ilu0 {
    pub fn factor(a: &CsrMatrix) -> Ilu0 {
        let p = &*a.pattern;
        let n = p.n_rows();
        let mut lu = a.values.clone();
        let scale: Vec<f64> = a.diagonal().iter().map(|d| d.abs().max(f64::MIN_POSITIVE)).collect();
        let mut slot = vec![usize::MAX; n];
        for i in 0..n {
            let row = p.row(i);
            for k in row.clone() {
                slot[p.cols[k]] = k;
            }
            for kk in row.clone() {
                let k = p.cols[kk];
                if k >= i {
                    break;
                }
                let l = lu[kk] / lu[p.diag[k]];
                lu[kk] = l;
                for jj in p.diag[k] + 1..p.row_ptr[k + 1] {
                    let s = slot[p.cols[jj]];
                    if s != usize::MAX {
                        lu[s] -= l * lu[jj];
                    }
                }
            }
            // Singular (pure Neumann) or indefinite pivots are replaced by the
            // original diagonal; the result is only used as a preconditioner.
            let d = p.diag[i];
            if !(lu[d].abs() > 1e-10 * scale[i]) {
                lu[d] = scale[i];
            }
            for k in row {
                slot[p.cols[k]] = usize::MAX;
            }
        }
        let inv_diag = p.diag.iter().map(|&d| 1.0 / lu[d]).collect();
        Ilu0 {
            pattern: a.pattern.clone(),
            lu,
            inv_diag,
        }
    }

    pub fn solve(&self, r: &[f64], z: &mut [f64]) {
        let p = &*self.pattern;
        let n = p.n_rows();
        for i in 0..n {
            let (lo, d) = (p.row_ptr[i], p.diag[i]);
            let s: f64 = self.lu[lo..d].iter().zip(&p.cols[lo..d]).map(|(l, &c)| l * z[c]).sum();
            z[i] = r[i] - s;
        }
        for i in (0..n).rev() {
            let (d, hi) = (p.diag[i] + 1, p.row_ptr[i + 1]);
            let s: f64 = self.lu[d..hi].iter().zip(&p.cols[d..hi]).map(|(u, &c)| u * z[c]).sum();
            z[i] = (z[i] - s) * self.inv_diag[i];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn remove_mean(x: &mut [f64]) {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= mean);
}

/// Preconditioned conjugate gradients. With `deflate_constants` the
/// iteration is confined to the mean-zero subspace, which makes it well
/// defined for singular pure-Neumann operators with compatible data.
pub fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    precond: &Preconditioner,
    rel_tol: f64,
    max_iter: usize,
    deflate_constants: bool,
) -> Result<SolveStats> {
    let n = b.len();
    let mut rhs = b.to_vec();
    if deflate_constants {
        remove_mean(&mut rhs);
        remove_mean(x);
    }
    let bnorm = norm(&rhs);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = vec![0.0; n];
    a.matvec(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(&rhs) {
        *ri = bi - *ri;
    }
    if deflate_constants {
        remove_mean(&mut r);
    }
    let mut z = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut history = Vec::new();
    let mut res = norm(&r) / bnorm;
    history.push(res);
    if res <= rel_tol {
        return Ok(SolveStats {
            iterations: 0,
            relative_residual: res,
        });
    }
    precond.apply(&r, &mut z);
    if deflate_constants {
        remove_mean(&mut z);
    }
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        a.matvec(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return Err(Error::Breakdown(format!(
                "non-positive curvature {pq:.3e} at CG iteration {it}"
            )));
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        res = norm(&r) / bnorm;
        history.push(res);
        if res <= rel_tol {
            if deflate_constants {
                remove_mean(x);
            }
            return Ok(SolveStats {
                iterations: it,
                relative_residual: res,
            });
        }
        precond.apply(&r, &mut z);
        if deflate_constants {
            remove_mean(&mut z);
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        residual: res,
        history,
    })
}

/// Right-preconditioned BiCGSTAB for non-symmetric systems.
pub fn bicgstab(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    precond: &Preconditioner,
    rel_tol: f64,
    max_iter: usize,
) -> Result<SolveStats> {
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = a.mul(x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut res = norm(&r) / bnorm;
    let mut history = vec![res];
    if res <= rel_tol {
        return Ok(SolveStats {
            iterations: 0,
            relative_residual: res,
        });
    }
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 || omega == 0.0 {
            return Err(Error::Breakdown(format!("BiCGSTAB breakdown at iteration {it}")));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        precond.apply(&p, &mut phat);
        a.matvec(&phat, &mut v);
        let r0v = dot(&r0, &v);
        if r0v == 0.0 {
            return Err(Error::Breakdown(format!("BiCGSTAB breakdown at iteration {it}")));
        }
        alpha = rho / r0v;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        let snorm = norm(&s) / bnorm;
        if snorm <= rel_tol {
            for i in 0..n {
                x[i] += alpha * phat[i];
            }
            return Ok(SolveStats {
                iterations: it,
                relative_residual: snorm,
            });
        }
        precond.apply(&s, &mut shat);
        a.matvec(&shat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] = s[i] - omega * t[i];
        }
        res = norm(&r) / bnorm;
        history.push(res);
        if !res.is_finite() {
            return Err(Error::Breakdown(format!("BiCGSTAB produced a non-finite residual at iteration {it}")));
        }
        if res <= rel_tol {
            return Ok(SolveStats {
                iterations: it,
                relative_residual: res,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        residual: res,
        history,
    })
}
