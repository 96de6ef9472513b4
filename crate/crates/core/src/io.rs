//! On-disk formats: binary field files with CSV twins, flat `key = value`
//! manifests, and iteration-log tables.
//!
//! A field file is a small little-endian header followed by the raw `f64`
//! payload:
//!
//! ```text
//! magic "MATMIFLD" | version u32 | domain descriptor | kind u8 | layout u8 | rows u64 | payload
//! ```
//!
//! The domain descriptor is a tag byte followed by either `n u64, diagonal u8`
//! (unit square) or `cx f64, cy f64, radius f64, level u64` (disk). Every
//! error message starts with the path of the offending file.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::elliptic::{SolverOptions, ITERATION_TOL, SYNTHESIS_TOL};
use crate::error::{Error, Result};
use crate::fields::{ScalarField, Sym2, TensorField, VectorField, VectorRepr};
use crate::mesh::{build_disk_mesh, build_unit_square_mesh_with, Diagonal, DomainKind, Mesh};
use crate::reconstruct::{Algorithm, IterationLog, IterationRecord, ReconstructionConfig, StopReason};
use crate::sparse::PreconditionerKind;
use crate::transport::{Diffusion, TransportOptions};

pub const MAGIC: &[u8; 8] = b"MATMIFLD";
pub const FORMAT_VERSION: u32 = 1;

fn format_err(path: &str, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_string(),
        detail: detail.into(),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| io_err(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Scalar,
    Vector,
    /// Symmetric 2×2 tensor stored as `(d11, d12, d22)`.
    Tensor,
}

impl FieldKind {
    pub fn components(self) -> usize {
        match self {
            FieldKind::Scalar => 1,
            FieldKind::Vector => 2,
            FieldKind::Tensor => 3,
        }
    }

    fn tag(self) -> u8 {
        self as u8
    }

    fn from_tag(t: u8) -> Option<FieldKind> {
        [FieldKind::Scalar, FieldKind::Vector, FieldKind::Tensor].get(t as usize).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// One row per mesh vertex.
    Nodal,
    /// One row per triangle.
    Element,
}

/// A field detached from its mesh, together with the descriptor needed to
/// rebuild that mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldFile {
    pub domain: DomainKind,
    pub kind: FieldKind,
    pub layout: Layout,
    /// Row-major values, `components()` per row.
    pub values: Vec<f64>,
}

impl FieldFile {
    pub fn from_scalar(f: &ScalarField) -> FieldFile {
        FieldFile {
            domain: f.mesh().kind(),
            kind: FieldKind::Scalar,
            layout: Layout::Nodal,
            values: f.values().to_vec(),
        }
    }

    pub fn from_tensor(d: &TensorField) -> FieldFile {
        FieldFile {
            domain: d.mesh().kind(),
            kind: FieldKind::Tensor,
            layout: Layout::Nodal,
            values: d.entries().iter().flat_map(|e| [e.d11, e.d12, e.d22]).collect(),
        }
    }

    /// Elementwise fields are stored per triangle; affine fields are
    /// averaged to the nodes first.
    pub fn from_vector(v: &VectorField) -> FieldFile {
        let (layout, rows) = match v.repr() {
            VectorRepr::Element(rows) => (Layout::Element, rows.clone()),
            VectorRepr::Nodal(rows) => (Layout::Nodal, rows.clone()),
            VectorRepr::ElementAffine(_) => match v.to_nodal().repr() {
                VectorRepr::Nodal(rows) => (Layout::Nodal, rows.clone()),
                _ => unreachable!("to_nodal returns nodal vectors"),
            },
        };
        FieldFile {
            domain: v.mesh().kind(),
            kind: FieldKind::Vector,
            layout,
            values: rows.into_iter().flatten().collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.values.len() / self.kind.components()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(64 + 8 * self.values.len());
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        match self.domain {
            DomainKind::UnitSquare { n, diagonal } => {
                b.push(0);
                b.extend_from_slice(&(n as u64).to_le_bytes());
                b.push(match diagonal {
                    Diagonal::Forward => 0,
                    Diagonal::Backward => 1,
                });
            }
            DomainKind::Disk { center, radius, level } => {
                b.push(1);
                for x in [center[0], center[1], radius] {
                    b.extend_from_slice(&x.to_le_bytes());
                }
                b.extend_from_slice(&(level as u64).to_le_bytes());
            }
        }
        b.push(self.kind.tag());
        b.push(match self.layout {
            Layout::Nodal => 0,
            Layout::Element => 1,
        });
        b.extend_from_slice(&(self.rows() as u64).to_le_bytes());
        for v in &self.values {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    /// Parses a field file; `source` names the file in error messages.
    pub fn from_bytes(bytes: &[u8], source: &str) -> Result<FieldFile> {
        let mut r = Reader { bytes, pos: 0, source };
        if r.take(8)? != MAGIC {
            return Err(format_err(source, "not a field file (bad magic)"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(format_err(source, format!("unsupported format version {version}")));
        }
        let domain = match r.u8()? {
            0 => {
                let n = r.u64()? as usize;
                let diagonal = match r.u8()? {
                    0 => Diagonal::Forward,
                    1 => Diagonal::Backward,
                    d => return Err(format_err(source, format!("unknown diagonal tag {d}"))),
                };
                DomainKind::UnitSquare { n, diagonal }
            }
            1 => {
                let center = [r.f64()?, r.f64()?];
                let radius = r.f64()?;
                let level = r.u64()? as usize;
                DomainKind::Disk { center, radius, level }
            }
            d => return Err(format_err(source, format!("unknown domain tag {d}"))),
        };
        let kind = FieldKind::from_tag(r.u8()?).ok_or_else(|| format_err(source, "unknown field kind"))?;
        let layout = match r.u8()? {
            0 => Layout::Nodal,
            1 => Layout::Element,
            l => return Err(format_err(source, format!("unknown layout tag {l}"))),
        };
        let rows = r.u64()? as usize;
        let count = rows
            .checked_mul(kind.components())
            .filter(|c| c.checked_mul(8) == Some(bytes.len() - r.pos))
            .ok_or_else(|| {
                format_err(
                    source,
                    format!("payload has {} bytes but the header declares {rows} rows", bytes.len() - r.pos),
                )
            })?;
        let values = (0..count).map(|_| r.f64()).collect::<Result<Vec<f64>>>()?;
        Ok(FieldFile {
            domain,
            kind,
            layout,
            values,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<FieldFile> {
        FieldFile::from_bytes(&read_bytes(path)?, &path.display().to_string())
    }

    /// Rebuilds the mesh named by the descriptor.
    pub fn mesh(&self) -> Result<Mesh> {
        build_mesh(self.domain)
    }

    fn check(&self, mesh: &Mesh, kind: FieldKind, layout: Layout, source: &str) -> Result<()> {
        if mesh.kind() != self.domain {
            return Err(format_err(source, "field belongs to a different mesh"));
        }
        if self.kind != kind || self.layout != layout {
            return Err(format_err(
                source,
                format!("expected a {kind:?} {layout:?} field, found {:?} {:?}", self.kind, self.layout),
            ));
        }
        let expected = match layout {
            Layout::Nodal => mesh.n_vertices(),
            Layout::Element => mesh.n_triangles(),
        };
        if self.rows() != expected {
            return Err(format_err(source, format!("{} rows for a mesh with {expected}", self.rows())));
        }
        Ok(())
    }

    pub fn to_scalar(&self, mesh: Arc<Mesh>, source: &str) -> Result<ScalarField> {
        self.check(&mesh, FieldKind::Scalar, Layout::Nodal, source)?;
        ScalarField::new(mesh, self.values.clone()).map_err(|e| format_err(source, e.to_string()))
    }

    pub fn to_tensor(&self, mesh: Arc<Mesh>, source: &str) -> Result<TensorField> {
        self.check(&mesh, FieldKind::Tensor, Layout::Nodal, source)?;
        let entries = self
            .values
            .chunks_exact(3)
            .map(|c| Sym2 {
                d11: c[0],
                d12: c[1],
                d22: c[2],
            })
            .collect();
        TensorField::new(mesh, entries).map_err(|e| format_err(source, e.to_string()))
    }

    /// CSV twin: coordinates of the node (or triangle centroid) followed by
    /// the components, all with 17 significant digits.
    pub fn to_csv(&self, mesh: &Mesh) -> Result<String> {
        self.check(mesh, self.kind, self.layout, "csv export")?;
        let names: &[&str] = match self.kind {
            FieldKind::Scalar => &["value"],
            FieldKind::Vector => &["v1", "v2"],
            FieldKind::Tensor => &["d11", "d12", "d22"],
        };
        let mut out = format!("x1,x2,{}\n", names.join(","));
        for (i, row) in self.values.chunks_exact(self.kind.components()).enumerate() {
            let p = match self.layout {
                Layout::Nodal => mesh.vertices()[i],
                Layout::Element => mesh.centroid(i),
            };
            let _ = write!(out, "{:.16e},{:.16e}", p[0], p[1]);
            for v in row {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
        }
        Ok(out)
    }
}

/// Builds the mesh described by `kind`.
pub fn build_mesh(kind: DomainKind) -> Result<Mesh> {
    match kind {
        DomainKind::UnitSquare { n, diagonal } => build_unit_square_mesh_with(n, diagonal),
        DomainKind::Disk { center, radius, level } => build_disk_mesh(center, radius, level),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    source: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| format_err(self.source, "truncated header"))?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Ordered `key = value` pairs with `#` comments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    pub entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn parse(text: &str, source: &str) -> Result<KeyValues> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format_err(source, format!("line {}: expected `key = value`", i + 1)))?;
            let k = k.trim().to_string();
            if k.is_empty() {
                return Err(format_err(source, format!("line {}: empty key", i + 1)));
            }
            if entries.iter().any(|(e, _)| *e == k) {
                return Err(format_err(source, format!("line {}: duplicate key `{k}`", i + 1)));
            }
            entries.push((k, v.trim().to_string()));
        }
        Ok(KeyValues { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Everything needed to repeat a synthesis or reconstruction run.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub phantom: String,
    pub n: usize,
    /// Data synthesized on a finer mesh and interpolated down.
    pub oracle_mesh: Option<usize>,
    pub delta: f64,
    pub seed: u64,
    /// Constant initial factor; the phantom background when absent.
    pub initial_guess: Option<f64>,
    pub algorithm: Algorithm,
    pub step_size: Option<f64>,
    pub step_scale: f64,
    pub power_iterations: usize,
    pub max_iter: usize,
    pub residual_tol: f64,
    /// Stop by the discrepancy principle when the data are noisy.
    pub discrepancy: bool,
    pub discrepancy_factor: f64,
    pub anchored: bool,
    pub c_eps: f64,
    /// Absolute diffusion; overrides `c_eps` when set.
    pub epsilon: Option<f64>,
    pub supg: bool,
    pub transport_tol: f64,
    pub synthesis_tol: f64,
    pub iteration_tol: f64,
    pub preconditioner: PreconditionerKind,
    pub version: String,
    /// Seconds since the Unix epoch; informational only.
    pub created: Option<u64>,
}

impl Default for Manifest {
    fn default() -> Self {
        let cfg = ReconstructionConfig::default();
        Manifest {
            phantom: "ring".into(),
            n: 128,
            oracle_mesh: None,
            delta: 0.0,
            seed: 0,
            initial_guess: None,
            algorithm: cfg.algorithm,
            step_size: None,
            step_scale: cfg.step_scale,
            power_iterations: cfg.power_iterations,
            max_iter: cfg.max_iter,
            residual_tol: cfg.residual_tol,
            discrepancy: true,
            discrepancy_factor: cfg.discrepancy_factor,
            anchored: cfg.anchored,
            c_eps: 0.5,
            epsilon: None,
            supg: cfg.transport.supg,
            transport_tol: cfg.transport.rel_tol,
            synthesis_tol: SYNTHESIS_TOL,
            iteration_tol: ITERATION_TOL,
            preconditioner: PreconditionerKind::Ilu0,
            version: env!("CARGO_PKG_VERSION").into(),
            created: None,
        }
    }
}

fn preconditioner_name(p: PreconditionerKind) -> &'static str {
    match p {
        PreconditionerKind::Identity => "none",
        PreconditionerKind::Jacobi => "jacobi",
        PreconditionerKind::Ilu0 => "ilu0",
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_string(), |v| v.to_string())
}

impl Manifest {
    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("phantom", &self.phantom);
        kv.set("n", self.n);
        kv.set("oracle_mesh", opt(self.oracle_mesh));
        kv.set("delta", self.delta);
        kv.set("seed", self.seed);
        kv.set("initial_guess", opt(self.initial_guess));
        kv.set("algorithm", self.algorithm);
        kv.set("step_size", opt(self.step_size));
        kv.set("step_scale", self.step_scale);
        kv.set("power_iterations", self.power_iterations);
        kv.set("max_iter", self.max_iter);
        kv.set("residual_tol", self.residual_tol);
        kv.set("discrepancy", self.discrepancy);
        kv.set("discrepancy_factor", self.discrepancy_factor);
        kv.set("anchored", self.anchored);
        kv.set("c_eps", self.c_eps);
        kv.set("epsilon", opt(self.epsilon));
        kv.set("supg", self.supg);
        kv.set("transport_tol", self.transport_tol);
        kv.set("synthesis_tol", self.synthesis_tol);
        kv.set("iteration_tol", self.iteration_tol);
        kv.set("preconditioner", preconditioner_name(self.preconditioner));
        kv.set("version", &self.version);
        kv.set("created", opt(self.created));
        kv
    }

    /// Overrides fields from `kv`; unknown keys are rejected.
    pub fn apply(&mut self, kv: &KeyValues, source: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str, source: &str) -> Result<T> {
            v.parse()
                .map_err(|_| format_err(source, format!("`{key}`: cannot parse `{v}`")))
        }
        fn maybe<T: std::str::FromStr>(key: &str, v: &str, source: &str) -> Result<Option<T>> {
            if v == "none" {
                Ok(None)
            } else {
                num(key, v, source).map(Some)
            }
        }
        for (k, v) in &kv.entries {
            let (k, v) = (k.as_str(), v.as_str());
            match k {
                "phantom" => self.phantom = v.to_string(),
                "n" => self.n = num(k, v, source)?,
                "oracle_mesh" => self.oracle_mesh = maybe(k, v, source)?,
                "delta" => self.delta = num(k, v, source)?,
                "seed" => self.seed = num(k, v, source)?,
                "initial_guess" => self.initial_guess = maybe(k, v, source)?,
                "algorithm" => {
                    self.algorithm = v.parse().map_err(|e: Error| format_err(source, e.to_string()))?
                }
                "step_size" => self.step_size = maybe(k, v, source)?,
                "step_scale" => self.step_scale = num(k, v, source)?,
                "power_iterations" => self.power_iterations = num(k, v, source)?,
                "max_iter" => self.max_iter = num(k, v, source)?,
                "residual_tol" => self.residual_tol = num(k, v, source)?,
                "discrepancy" => self.discrepancy = num(k, v, source)?,
                "discrepancy_factor" => self.discrepancy_factor = num(k, v, source)?,
                "anchored" => self.anchored = num(k, v, source)?,
                "c_eps" => self.c_eps = num(k, v, source)?,
                "epsilon" => self.epsilon = maybe(k, v, source)?,
                "supg" => self.supg = num(k, v, source)?,
                "transport_tol" => self.transport_tol = num(k, v, source)?,
                "synthesis_tol" => self.synthesis_tol = num(k, v, source)?,
                "iteration_tol" => self.iteration_tol = num(k, v, source)?,
                "preconditioner" => {
                    self.preconditioner = match v {
                        "none" => PreconditionerKind::Identity,
                        "jacobi" => PreconditionerKind::Jacobi,
                        "ilu0" => PreconditionerKind::Ilu0,
                        _ => return Err(format_err(source, format!("unknown preconditioner `{v}`"))),
                    }
                }
                "version" => self.version = v.to_string(),
                "created" => self.created = maybe(k, v, source)?,
                _ => return Err(format_err(source, format!("unknown key `{k}`"))),
            }
        }
        Ok(())
    }

    pub fn parse(text: &str, source: &str) -> Result<Manifest> {
        let mut m = Manifest::default();
        m.apply(&KeyValues::parse(text, source)?, source)?;
        Ok(m)
    }

    pub fn render(&self) -> String {
        format!("# matmi run manifest\n{}", self.to_key_values().render())
    }

    pub fn read(path: &Path) -> Result<Manifest> {
        Manifest::parse(&read_text(path)?, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.render().as_bytes())
    }

    pub fn synthesis_solver(&self) -> SolverOptions {
        SolverOptions {
            preconditioner: self.preconditioner,
            ..SolverOptions::default().with_tol(self.synthesis_tol)
        }
    }

    pub fn reconstruction_config(&self) -> ReconstructionConfig {
        ReconstructionConfig {
            algorithm: self.algorithm,
            step_size: self.step_size,
            step_scale: self.step_scale,
            power_iterations: self.power_iterations,
            max_iter: self.max_iter,
            residual_tol: self.residual_tol,
            noise_level: (self.discrepancy && self.delta > 0.0).then_some(self.delta),
            discrepancy_factor: self.discrepancy_factor,
            anchored: self.anchored,
            transport: TransportOptions {
                diffusion: match self.epsilon {
                    Some(e) => Diffusion::Absolute(e),
                    None => Diffusion::Relative(self.c_eps),
                },
                supg: self.supg,
                rel_tol: self.transport_tol,
                ..TransportOptions::default()
            },
            solver: SolverOptions {
                preconditioner: self.preconditioner,
                ..SolverOptions::default().with_tol(self.iteration_tol)
            },
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.16e}"))
}

/// Iteration log as CSV with columns `k,error,residual,ratio`; empty cells
/// stand for unknown values. Step size and stop reason ride along as
/// `# key = value` comment lines. Wall-clock times are left out so that
/// reruns write identical bytes; they read back as zero.
pub fn log_to_csv(log: &IterationLog) -> String {
    let mut out = String::new();
    if let Some(mu) = log.step_size {
        let _ = writeln!(out, "# step_size = {mu:.16e}");
    }
    let _ = writeln!(out, "# stop = {}", log.stop);
    out.push_str("k,error,residual,ratio\n");
    for r in &log.records {
        let _ = writeln!(out, "{},{},{:.16e},{}", r.k, fmt_opt(r.error), r.residual, fmt_opt(r.ratio));
    }
    out
}

fn parse_stop(s: &str) -> Option<StopReason> {
    [
        StopReason::MaxIterations,
        StopReason::ResidualTolerance,
        StopReason::Discrepancy,
        StopReason::Stalled,
    ]
    .into_iter()
    .find(|r| r.to_string() == s)
}

pub fn log_from_csv(text: &str, source: &str) -> Result<IterationLog> {
    let mut log = IterationLog {
        records: Vec::new(),
        step_size: None,
        stop: StopReason::MaxIterations,
        warnings: Vec::new(),
    };
    let mut header = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        let bad = |what: &str| format_err(source, format!("line {}: {what}", i + 1));
        if line.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            if let Some((k, v)) = c.split_once('=') {
                match k.trim() {
                    "step_size" => log.step_size = Some(v.trim().parse().map_err(|_| bad("bad step size"))?),
                    "stop" => log.stop = parse_stop(v.trim()).ok_or_else(|| bad("unknown stop reason"))?,
                    _ => {}
                }
            }
            continue;
        }
        if !header {
            if line != "k,error,residual,ratio" {
                return Err(bad("expected header `k,error,residual,ratio`"));
            }
            header = true;
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 4 {
            return Err(bad("expected 4 columns"));
        }
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad("bad number"))
            }
        };
        log.records.push(IterationRecord {
            k: cells[0].parse().map_err(|_| bad("bad iteration index"))?,
            error: opt(cells[1])?,
            residual: cells[2].parse().map_err(|_| bad("bad residual"))?,
            ratio: opt(cells[3])?,
            seconds: 0.0,
        });
    }
    if !header {
        return Err(format_err(source, "missing header"));
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{ring_sigma, bump_tensor};
    use crate::fields::{p1_gradient, Gauge};
    use crate::mesh::build_unit_square_mesh;
    use proptest::prelude::*;

    fn square(n: usize) -> Arc<Mesh> {
        Arc::new(build_unit_square_mesh(n).unwrap())
    }

    #[test]
    fn scalar_round_trip_is_bitwise() {
        let mesh = square(8);
        let f = ring_sigma(mesh.clone());
        let bytes = FieldFile::from_scalar(&f).to_bytes();
        let back = FieldFile::from_bytes(&bytes, "f.bin").unwrap();
        let g = back.to_scalar(Arc::new(back.mesh().unwrap()), "f.bin").unwrap();
        let same = f.values().iter().zip(g.values()).all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn tensor_and_vector_round_trip() {
        let mesh = square(6);
        let d = bump_tensor(mesh.clone()).tensor;
        let file = FieldFile::from_tensor(&d);
        let back = FieldFile::from_bytes(&file.to_bytes(), "d.bin").unwrap();
        assert_eq!(back.to_tensor(mesh.clone(), "d.bin").unwrap().entries(), d.entries());

        let g = p1_gradient(&ring_sigma(mesh.clone()));
        let file = FieldFile::from_vector(&g);
        assert_eq!(file.layout, Layout::Element);
        assert_eq!(file.rows(), mesh.n_triangles());
        let nodal = FieldFile::from_vector(&Gauge::default().field(mesh.clone()));
        assert_eq!(nodal.layout, Layout::Nodal);
        assert_eq!(FieldFile::from_bytes(&nodal.to_bytes(), "v").unwrap(), nodal);
    }

    #[test]
    fn disk_descriptor_round_trips() {
        let mesh = build_disk_mesh([0.5, 0.5], 0.4, 2).unwrap();
        let f = ScalarField::constant(Arc::new(mesh), 1.5);
        let file = FieldFile::from_scalar(&f);
        let back = FieldFile::from_bytes(&file.to_bytes(), "disk").unwrap();
        assert_eq!(back.mesh().unwrap().n_vertices(), f.mesh().n_vertices());
        assert_eq!(back, file);
    }

    #[test]
    fn corrupted_headers_name_the_file() {
        let f = ScalarField::constant(square(4), 0.3);
        let bytes = FieldFile::from_scalar(&f).to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        let err = FieldFile::from_bytes(&bad, "data/g.bin").unwrap_err().to_string();
        assert!(err.starts_with("data/g.bin"), "{err}");
        assert!(FieldFile::from_bytes(&bytes[..bytes.len() - 3], "t").is_err());
        assert!(FieldFile::from_bytes(&bytes[..10], "t").is_err());
        let mut ver = bytes.clone();
        ver[8] = 9;
        assert!(FieldFile::from_bytes(&ver, "t").is_err());
    }

    #[test]
    fn wrong_mesh_or_kind_is_rejected() {
        let f = FieldFile::from_scalar(&ScalarField::constant(square(4), 0.3));
        assert!(f.to_scalar(square(5), "x").is_err());
        assert!(f.to_tensor(square(4), "x").is_err());
    }

    #[test]
    fn csv_twin_reproduces_values() {
        let mesh = square(5);
        let f = ring_sigma(mesh.clone()).map(|v| v / 3.0);
        let csv = FieldFile::from_scalar(&f).to_csv(&mesh).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("x1,x2,value"));
        for (line, v) in lines.zip(f.values()) {
            let last: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
            assert_eq!(last.to_bits(), v.to_bits());
        }
    }

    proptest! {
        #[test]
        fn arbitrary_payloads_round_trip(values in prop::collection::vec(prop::num::f64::ANY, 25)) {
            let file = FieldFile {
                domain: DomainKind::UnitSquare { n: 4, diagonal: Diagonal::Backward },
                kind: FieldKind::Scalar,
                layout: Layout::Nodal,
                values,
            };
            let back = FieldFile::from_bytes(&file.to_bytes(), "p").unwrap();
            let same = back.values.iter().zip(&file.values).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }

    #[test]
    fn manifest_round_trips_and_rejects_unknown_keys() {
        let m = Manifest {
            phantom: "blob".into(),
            n: 64,
            oracle_mesh: Some(128),
            delta: 0.06,
            seed: 42,
            step_size: Some(0.003),
            epsilon: Some(1e-3),
            preconditioner: PreconditionerKind::Jacobi,
            created: Some(1_700_000_000),
            ..Manifest::default()
        };
        assert_eq!(Manifest::parse(&m.render(), "m").unwrap(), m);
        let err = Manifest::parse("bogus = 1\n", "run.cfg").unwrap_err().to_string();
        assert!(err.contains("run.cfg") && err.contains("bogus"), "{err}");
        assert!(Manifest::parse("n = many", "c").is_err());
        assert!(Manifest::parse("n 4", "c").is_err());
    }

    #[test]
    fn config_comments_and_overrides() {
        let text = "# quick run\nn = 32   # coarse\nalgorithm = landweber\n\nc_eps = 0.25\n";
        let m = Manifest::parse(text, "c").unwrap();
        assert_eq!((m.n, m.algorithm, m.c_eps), (32, Algorithm::Landweber, 0.25));
        let cfg = m.reconstruction_config();
        assert_eq!(cfg.transport.diffusion, Diffusion::Relative(0.25));
        assert_eq!(cfg.noise_level, None);
    }

    #[test]
    fn log_csv_round_trip() {
        let log = IterationLog {
            records: vec![
                IterationRecord { k: 1, error: Some(0.5), residual: 0.1, ratio: None, seconds: 0.0 },
                IterationRecord { k: 2, error: None, residual: 0.01, ratio: Some(0.2), seconds: 0.0 },
            ],
            step_size: Some(0.0025),
            stop: StopReason::Discrepancy,
            warnings: Vec::new(),
        };
        let back = log_from_csv(&log_to_csv(&log), "log.csv").unwrap();
        assert_eq!(back, log);
        assert!(log_from_csv("k,error\n", "log.csv").is_err());
        assert!(log_from_csv("k,error,residual,ratio\n1,x,0,\n", "log.csv").is_err());
    }
}
