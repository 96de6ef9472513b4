use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;
use std::time::Instant;

use matmi::io::{log_from_csv, FieldFile};
use matmi::mesh::build_unit_square_mesh;

fn matmi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_matmi"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = matmi(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_scalar(path: &Path) -> Vec<f64> {
    FieldFile::read(path).unwrap().values
}

#[test]
fn synth_writes_four_files_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    ok(&["synth", "--n", "16", "--out", s(&a)]);
    let mut names: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["data.bin", "manifest.txt", "sigma_true.bin", "tensor.bin"]);

    let (c, d) = (dir.path().join("c"), dir.path().join("d"));
    for out in [&c, &d] {
        ok(&["synth", "--n", "16", "--delta", "0.24", "--seed", "9", "--out", s(out)]);
    }
    for name in ["data.bin", "data_noisy.bin", "tensor.bin", "sigma_true.bin", "manifest.txt"] {
        assert_eq!(std::fs::read(c.join(name)).unwrap(), std::fs::read(d.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn noisy_data_has_requested_level() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--n", "16", "--delta", "0.24", "--out", s(dir.path())]);
    let mesh = Arc::new(build_unit_square_mesh(16).unwrap());
    let g = FieldFile::read(&dir.path().join("data.bin"))
        .unwrap()
        .to_scalar(mesh.clone(), "g")
        .unwrap();
    let gd = FieldFile::read(&dir.path().join("data_noisy.bin"))
        .unwrap()
        .to_scalar(mesh, "gd")
        .unwrap();
    let level = gd.sub(&g).unwrap().l2_norm() / g.l2_norm();
    assert!((level - 0.24).abs() < 1e-12, "{level}");
}

#[test]
fn synth_data_show_the_ring() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--n", "256", "--out", s(dir.path())]);
    let g = read_scalar(&dir.path().join("data.bin"));
    let mesh = build_unit_square_mesh(256).unwrap();
    let mut annulus_max = f64::MIN;
    let mut background = Vec::new();
    for (i, (p, v)) in mesh.vertices().iter().zip(&g).enumerate() {
        let r = (p[0] - 0.5).hypot(p[1] - 0.5);
        if (0.12..0.46).contains(&r) {
            annulus_max = annulus_max.max(*v);
        } else if r > 0.46 && !mesh.is_boundary(i) {
            background.push(*v);
        }
    }
    background.sort_by(f64::total_cmp);
    let median = background[background.len() / 2];
    assert!(annulus_max > 1.5 * median, "{annulus_max} vs {median}");
}

#[test]
fn corrupted_header_names_file_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--n", "8", "--out", s(&data)]);
    let target = data.join("tensor.bin");
    let mut bytes = std::fs::read(&target).unwrap();
    bytes[3] ^= 0xff;
    std::fs::write(&target, bytes).unwrap();
    let out_dir = dir.path().join("out");
    let out = matmi(&["reconstruct", "--data", s(&data), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("tensor.bin"), "{err}");
    assert!(!out_dir.exists());
}

#[test]
fn mismatched_meshes_are_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["synth", "--n", "8", "--out", s(&a)]);
    ok(&["synth", "--n", "10", "--out", s(&b)]);
    std::fs::copy(b.join("data.bin"), a.join("data.bin")).unwrap();
    let out = matmi(&["reconstruct", "--data", s(&a), "--out", s(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data.bin"));
}

#[test]
fn quasi_newton_reconstructs_noise_free_data() {
    let dir = tempfile::tempdir().unwrap();
    let (data, out) = (dir.path().join("d"), dir.path().join("r"));
    ok(&["synth", "--n", "64", "--out", s(&data)]);
    ok(&["reconstruct", "--data", s(&data), "--algorithm", "quasi-newton", "--out", s(&out)]);
    let log = log_from_csv(&std::fs::read_to_string(out.join("log.csv")).unwrap(), "log").unwrap();
    assert!(log.final_error().unwrap() < 2e-3, "{:?}", log.final_error());
    assert!(out.join("sigma.bin").exists() && out.join("manifest.txt").exists());
}

#[test]
fn landweber_residuals_decrease() {
    let dir = tempfile::tempdir().unwrap();
    let (data, out) = (dir.path().join("d"), dir.path().join("r"));
    ok(&["synth", "--n", "64", "--out", s(&data)]);
    ok(&[
        "reconstruct", "--data", s(&data), "--algorithm", "landweber", "--max-iter", "25", "--out", s(&out),
    ]);
    let log = log_from_csv(&std::fs::read_to_string(out.join("log.csv")).unwrap(), "log").unwrap();
    assert!(log.records.len() >= 20);
    assert!(log.step_size.unwrap() > 0.0);
    for w in log.records.windows(2) {
        assert!(w[1].residual <= w[0].residual, "{w:?}");
    }
}

#[test]
fn config_file_sets_manifest_fields() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# coarse blob run\nphantom = blob\nn = 12\nseed = 5  # fixed\n").unwrap();
    let out = dir.path().join("d");
    ok(&["synth", "--config", s(&cfg), "--out", s(&out)]);
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("phantom = blob") && manifest.contains("n = 12"));

    std::fs::write(&cfg, "nonsense = 1\n").unwrap();
    let bad = matmi(&["synth", "--config", s(&cfg), "--out", s(&dir.path().join("x"))]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("run.cfg"));
}

#[test]
fn unknown_phantom_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = matmi(&["synth", "--phantom", "teapot", "--n", "8", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn report_tabulates_logs_and_rejects_empty_ones() {
    let dir = tempfile::tempdir().unwrap();
    let (data, out) = (dir.path().join("d"), dir.path().join("r"));
    ok(&["synth", "--n", "16", "--out", s(&data)]);
    ok(&["reconstruct", "--data", s(&data), "--max-iter", "5", "--out", s(&out)]);
    let table = ok(&["report", s(&out.join("log.csv"))]);
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("k,error,residual"));
    assert_eq!(lines.count(), 5);

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "# stop = max-iterations\nk,error,residual,ratio\n").unwrap();
    let res = matmi(&["report", s(&empty)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("no iterations"));
}

#[test]
fn sweep_summarizes_four_noise_levels() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    ok(&["sweep", "--n", "16", "--out", s(&out)]);
    let table = ok(&["report", s(&out), "--out", s(&dir.path().join("summary.csv"))]);
    assert!(table.is_empty());
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    let deltas: Vec<&str> = rows.iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(deltas, ["0", "0.06", "0.12", "0.24"]);
    assert_eq!(summary, std::fs::read_to_string(out.join("summary.csv")).unwrap());
}

#[test]
fn quick_verification_passes_fast() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("verify.csv");
    let out = ok(&["verify", "quick", "--out", s(&report)]);
    assert!(start.elapsed().as_secs() < 60);
    assert!(out.lines().skip(1).all(|l| l.ends_with(",PASS")), "{out}");
    assert!(out.contains("stability_constant,"));
    assert_eq!(out, std::fs::read_to_string(report).unwrap());
}

#[test]
fn solver_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    ok(&["synth", "--n", "8", "--out", s(&data)]);
    let cfg = dir.path().join("strict.cfg");
    std::fs::write(&cfg, "iteration_tol = 1e-300\n").unwrap();
    let out = matmi(&["reconstruct", "--data", s(&data), "--config", s(&cfg), "--out", s(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("iteration 1"));
}
