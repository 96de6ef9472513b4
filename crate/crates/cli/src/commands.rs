use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use matmi::experiments::{add_noise, interpolate_from_square, phantom, Phantom};
use matmi::fields::{Gauge, ScalarField, TensorField};
use matmi::forward::ForwardProblem;
use matmi::io::{log_from_csv, log_to_csv, read_text, write_bytes, FieldFile, KeyValues, Manifest};
use matmi::mesh::{build_unit_square_mesh, Mesh};
use matmi::reconstruct::{reconstruct as run_reconstruction, Algorithm, AdmissibleSet, Reconstruction};
use matmi::verify::{self, Level};
use matmi::{Error, Result};

use crate::RunArgs;

pub const MANIFEST: &str = "manifest.txt";
pub const TRUE_SIGMA: &str = "sigma_true.bin";
pub const TENSOR: &str = "tensor.bin";
pub const DATA: &str = "data.bin";
pub const NOISY_DATA: &str = "data_noisy.bin";
pub const SIGMA: &str = "sigma.bin";
pub const LOG: &str = "log.csv";
pub const SUMMARY: &str = "summary.csv";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn now() -> Option<u64> {
    SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs())
}

/// Applies the config file and then the explicit flags.
fn configure(base: Manifest, run: &RunArgs) -> Result<Manifest> {
    let mut m = base;
    if let Some(cfg) = &run.config {
        let source = path_str(cfg);
        m.apply(&KeyValues::parse(&read_text(cfg)?, &source)?, &source)?;
    }
    if let Some(p) = &run.phantom {
        m.phantom = p.clone();
    }
    if let Some(n) = run.n {
        m.n = n;
    }
    if let Some(s) = run.seed {
        m.seed = s;
    }
    if let Some(k) = run.max_iter {
        m.max_iter = k;
    }
    m.version = env!("CARGO_PKG_VERSION").to_string();
    m.created = if run.timestamp { now() } else { None };
    Ok(m)
}

fn write_field(dir: &Path, name: &str, file: &FieldFile, mesh: &Mesh, csv: bool) -> Result<()> {
    let path = dir.join(name);
    file.write(&path)?;
    if csv {
        write_bytes(&path.with_extension("csv"), file.to_csv(mesh)?.as_bytes())?;
    }
    Ok(())
}

struct Synthesis {
    phantom: Phantom,
    data: ScalarField,
    noisy: Option<ScalarField>,
}

fn synthesize(m: &Manifest) -> Result<Synthesis> {
    let mesh = Arc::new(build_unit_square_mesh(m.n)?);
    let ph = phantom(&m.phantom, mesh.clone())?;
    let solver = m.synthesis_solver();
    let data = match m.oracle_mesh {
        Some(fine) => {
            let fine_mesh = Arc::new(build_unit_square_mesh(fine)?);
            let fph = phantom(&m.phantom, fine_mesh)?;
            let ffp = ForwardProblem::new(fph.tensor, Gauge::default(), solver)?;
            interpolate_from_square(&ffp.internal_data(&fph.sigma)?, mesh)?
        }
        None => ForwardProblem::new(ph.tensor.clone(), Gauge::default(), solver)?.internal_data(&ph.sigma)?,
    };
    let noisy = if m.delta > 0.0 {
        Some(add_noise(&data, m.delta, m.seed)?)
    } else {
        None
    };
    Ok(Synthesis {
        phantom: ph,
        data,
        noisy,
    })
}

pub fn synth(run: &RunArgs, delta: Option<f64>, oracle_mesh: Option<usize>, out: &Path) -> Result<ExitCode> {
    let mut m = configure(Manifest::default(), run)?;
    if let Some(d) = delta {
        m.delta = d;
    }
    if oracle_mesh.is_some() {
        m.oracle_mesh = oracle_mesh;
    }
    if m.delta < 0.0 {
        return Err(Error::Config(format!("noise level must be >= 0, got {}", m.delta)));
    }
    let s = synthesize(&m)?;
    create_dir(out)?;
    let mesh = s.phantom.sigma.mesh().clone();
    write_field(out, TRUE_SIGMA, &FieldFile::from_scalar(&s.phantom.sigma), &mesh, run.csv)?;
    write_field(out, TENSOR, &FieldFile::from_tensor(&s.phantom.tensor), &mesh, run.csv)?;
    write_field(out, DATA, &FieldFile::from_scalar(&s.data), &mesh, run.csv)?;
    if let Some(noisy) = &s.noisy {
        write_field(out, NOISY_DATA, &FieldFile::from_scalar(noisy), &mesh, run.csv)?;
    }
    m.write(&out.join(MANIFEST))?;
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

struct Loaded {
    tensor: TensorField,
    data: ScalarField,
    truth: Option<ScalarField>,
}

/// Reads every input before anything is written, so a bad file leaves no
/// partial outputs behind.
fn load_inputs(dir: &Path, m: &Manifest) -> Result<Loaded> {
    let tensor_path = dir.join(TENSOR);
    let tensor_file = FieldFile::read(&tensor_path)?;
    let mesh = Arc::new(tensor_file.mesh().map_err(|e| Error::Format {
        path: path_str(&tensor_path),
        detail: e.to_string(),
    })?);
    let tensor = tensor_file.to_tensor(mesh.clone(), &path_str(&tensor_path))?;
    let scalar = |name: &str| -> Result<ScalarField> {
        let p = dir.join(name);
        FieldFile::read(&p)?.to_scalar(mesh.clone(), &path_str(&p))
    };
    let data = if m.delta > 0.0 && dir.join(NOISY_DATA).exists() {
        scalar(NOISY_DATA)?
    } else {
        scalar(DATA)?
    };
    let truth = if dir.join(TRUE_SIGMA).exists() {
        Some(scalar(TRUE_SIGMA)?)
    } else {
        None
    };
    Ok(Loaded { tensor, data, truth })
}

fn background(m: &Manifest, mesh: &Arc<Mesh>, truth: Option<&ScalarField>) -> Result<f64> {
    if let Some(t) = truth {
        if let Some(b) = mesh.boundary_mask().iter().position(|&b| b) {
            return Ok(t.values()[b]);
        }
    }
    Ok(phantom(&m.phantom, mesh.clone())?.background)
}

fn run_one(m: &Manifest, tensor: TensorField, data: &ScalarField, truth: Option<&ScalarField>) -> Result<Reconstruction> {
    let mesh = data.mesh().clone();
    let cfg = m.reconstruction_config();
    let fp = ForwardProblem::new(tensor, Gauge::default(), cfg.solver)?;
    let sigma0 = background(m, &mesh, truth)?;
    let set = AdmissibleSet::new(ScalarField::constant(mesh.clone(), sigma0))?;
    let initial = ScalarField::constant(mesh, m.initial_guess.unwrap_or(sigma0));
    run_reconstruction(&fp, data, &set, &initial, truth, &cfg)
}

fn write_run(out: &Path, m: &Manifest, r: &Reconstruction, csv: bool) -> Result<()> {
    create_dir(out)?;
    write_field(out, SIGMA, &FieldFile::from_scalar(&r.sigma), r.sigma.mesh(), csv)?;
    write_bytes(&out.join(LOG), log_to_csv(&r.log).as_bytes())?;
    m.write(&out.join(MANIFEST))
}

fn describe(r: &Reconstruction) -> String {
    let last = r.log.last();
    let mut s = format!(
        "{} iterations, stop: {}, residual {:.3e}",
        r.log.records.len(),
        r.log.stop,
        last.map_or(f64::NAN, |x| x.residual)
    );
    if let Some(e) = r.log.final_error() {
        let _ = write!(s, ", relative error {e:.3e}");
    }
    s
}

pub fn reconstruct(data_dir: &Path, algorithm: Option<Algorithm>, run: &RunArgs, out: &Path) -> Result<ExitCode> {
    let mut m = configure(Manifest::read(&data_dir.join(MANIFEST))?, run)?;
    if let Some(a) = algorithm {
        m.algorithm = a;
    }
    let loaded = load_inputs(data_dir, &m)?;
    if loaded.data.mesh().n_vertices() != (m.n + 1).pow(2) {
        return Err(Error::Format {
            path: path_str(&data_dir.join(MANIFEST)),
            detail: format!("manifest says n = {} but the data files disagree", m.n),
        });
    }
    let r = run_one(&m, loaded.tensor, &loaded.data, loaded.truth.as_ref())?;
    for w in &r.log.warnings {
        eprintln!("warning: {w}");
    }
    write_run(out, &m, &r, run.csv)?;
    println!("{}", describe(&r));
    Ok(ExitCode::SUCCESS)
}

pub fn verify(level: Level, out: Option<&Path>) -> Result<ExitCode> {
    let report = verify::run(level)?;
    let table = report.to_csv();
    print!("{table}");
    if let Some(p) = out {
        write_bytes(p, table.as_bytes())?;
    }
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => write_bytes(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_log(path: &Path) -> Result<matmi::reconstruct::IterationLog> {
    let log = log_from_csv(&read_text(path)?, &path_str(path))?;
    if log.records.is_empty() {
        return Err(Error::Format {
            path: path_str(path),
            detail: "log has no iterations".into(),
        });
    }
    Ok(log)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6e}"))
}

/// A log file becomes a `k,error,residual` table; a sweep directory becomes
/// one summary row per noise level.
pub fn report(input: &Path, out: Option<&Path>) -> Result<ExitCode> {
    if input.is_dir() {
        let rows = collect_sweep(input)?;
        emit(&summary_table(&rows), out)?;
    } else {
        let log = read_log(input)?;
        let mut t = String::from("k,error,residual\n");
        for r in &log.records {
            let _ = writeln!(t, "{},{},{:.6e}", r.k, opt(r.error), r.residual);
        }
        emit(&t, out)?;
    }
    Ok(ExitCode::SUCCESS)
}

struct SweepRow {
    delta: f64,
    log: matmi::reconstruct::IterationLog,
}

fn summary_table(rows: &[SweepRow]) -> String {
    let mut t = String::from("delta,iterations,stop,final_error,final_residual\n");
    for r in rows {
        let last = r.log.last();
        let _ = writeln!(
            t,
            "{},{},{},{},{:.6e}",
            r.delta,
            r.log.records.len(),
            r.log.stop,
            opt(r.log.final_error()),
            last.map_or(f64::NAN, |x| x.residual)
        );
    }
    t
}

fn collect_sweep(dir: &Path) -> Result<Vec<SweepRow>> {
    let entries = std::fs::read_dir(dir).map_err(|source| Error::Io {
        path: path_str(dir),
        source,
    })?;
    let mut subdirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(LOG).is_file())
        .collect();
    subdirs.sort();
    let mut rows = Vec::with_capacity(subdirs.len());
    for d in subdirs {
        let m = Manifest::read(&d.join(MANIFEST))?;
        rows.push(SweepRow {
            delta: m.delta,
            log: read_log(&d.join(LOG))?,
        });
    }
    if rows.is_empty() {
        return Err(Error::Format {
            path: path_str(dir),
            detail: "no run directories with a log".into(),
        });
    }
    rows.sort_by(|a, b| a.delta.total_cmp(&b.delta));
    Ok(rows)
}

/// Synthesizes once per noise level and reconstructs each level on its own
/// thread; every run gets its own directory `delta_<δ>`.
pub fn sweep(run: &RunArgs, deltas: &[f64], algorithm: Option<Algorithm>, out: &Path) -> Result<ExitCode> {
    let mut base = configure(Manifest::default(), run)?;
    if let Some(a) = algorithm {
        base.algorithm = a;
    }
    if deltas.is_empty() || deltas.iter().any(|d| !(*d >= 0.0)) {
        return Err(Error::Config("noise levels must be a non-empty list of values >= 0".into()));
    }
    let clean = synthesize(&Manifest { delta: 0.0, ..base.clone() })?;
    let results: Vec<Result<(Manifest, Reconstruction)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = deltas
            .iter()
            .map(|&delta| {
                let m = Manifest { delta, ..base.clone() };
                let clean = &clean;
                scope.spawn(move || {
                    let data = if delta > 0.0 {
                        add_noise(&clean.data, delta, m.seed)?
                    } else {
                        clean.data.clone()
                    };
                    let r = run_one(&m, clean.phantom.tensor.clone(), &data, Some(&clean.phantom.sigma))?;
                    Ok((m, r))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Config("sweep worker panicked".into()))))
            .collect()
    });
    let mut rows = Vec::with_capacity(results.len());
    create_dir(out)?;
    for res in results {
        let (m, r) = res?;
        write_run(&out.join(format!("delta_{}", m.delta)), &m, &r, run.csv)?;
        rows.push(SweepRow { delta: m.delta, log: r.log });
    }
    let table = summary_table(&rows);
    write_bytes(&out.join(SUMMARY), table.as_bytes())?;
    print!("{table}");
    Ok(ExitCode::SUCCESS)
}
