//! End-to-end tests of the `rq1` binary: exit codes, file formats and
//! output determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rq1(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rq1"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

#[test]
fn verify_element_passes_and_negative_control_fails() {
    let dir = tempfile::tempdir().unwrap();
    let ok = rq1(&["verify-element"], dir.path());
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stdout));
    let text = String::from_utf8_lossy(&ok.stdout);
    assert!(text.contains("overall=PASS"));

    let json = rq1(&["verify-element", "--json"], dir.path());
    assert!(json.status.success());
    let text = String::from_utf8_lossy(&json.stdout);
    assert!(text.starts_with("{\"checks\":["));
    assert!(text.trim_end().ends_with("\"pass\":true}"));

    let bad = rq1(&["verify-element", "--inject-bad-constant"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn convergence_rejects_too_few_levels() {
    let dir = tempfile::tempdir().unwrap();
    let out = rq1(&["convergence", "--levels", "2"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solve_reports_input_errors_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let mesh_path = dir.path().join("broken.rq1");
    fs::write(&mesh_path, "rq1mesh 1\nvertices 2\n0 0 0\nnot a vertex\ncells 0\n").unwrap();
    let out = rq1(
        &["solve", "--mesh", mesh_path.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4"), "stderr: {err}");

    let missing = rq1(&["solve", "--mesh", "nope.rq1"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn solve_zero_case_returns_zero_solution() {
    let dir = tempfile::tempdir().unwrap();
    let mesh_path = dir.path().join("box.rq1");
    let gen = rq1(
        &[
            "mesh",
            "--domain",
            "box",
            "--subdivisions",
            "2,2,2",
            "--out",
            mesh_path.to_str().unwrap(),
            "--check",
        ],
        dir.path(),
    );
    assert!(gen.status.success());
    let text = String::from_utf8_lossy(&gen.stdout);
    assert!(text.contains("internal_edge_assumption=pass"));

    let out = rq1(
        &[
            "solve",
            "--mesh",
            mesh_path.to_str().unwrap(),
            "--case",
            "zero",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    for line in stdout.lines().take(3) {
        let value: f64 = line.split('=').nth(1).unwrap().parse().unwrap();
        assert!(value.abs() < 1e-12, "{line}");
    }

    let unknown = rq1(
        &[
            "solve",
            "--mesh",
            mesh_path.to_str().unwrap(),
            "--case",
            "nonsense",
        ],
        dir.path(),
    );
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn infsup_csv_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = rq1(
            &[
                "infsup",
                "--levels",
                "2",
                "--coarsest",
                "2",
                "--form",
                "btilde",
                "--out",
                name,
            ],
            dir.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(dir.path().join(name)).unwrap()
    };
    let a = run("a.csv");
    let b = run("b.csv");
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("h,beta\n"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn infsup_reports_assumption_violations() {
    let dir = tempfile::tempdir().unwrap();
    let out = rq1(
        &["infsup", "--levels", "1", "--coarsest", "1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("internal-edge"), "stderr: {err}");
}

#[test]
fn poiseuille_outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    // identical output must also be independent of the assembly thread cap
    let run = |base: &str, threads: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_rq1"))
            .args(["poiseuille", "--operator", "strain", "--out", base])
            .env("RQ1_THREADS", threads)
            .current_dir(dir.path())
            .output()
            .expect("binary runs");
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (
            fs::read(dir.path().join(format!("{base}.vtk"))).unwrap(),
            fs::read(dir.path().join(format!("{base}_midpoints.vtk"))).unwrap(),
            out.stdout,
        )
    };
    let (mesh_a, cloud_a, stdout_a) = run("a", "1");
    let (mesh_b, cloud_b, stdout_b) = run("b", "3");
    assert_eq!(mesh_a, mesh_b);
    assert_eq!(cloud_a, cloud_b);
    assert_eq!(stdout_a, stdout_b);

    let text = String::from_utf8(mesh_a).unwrap();
    assert!(text.starts_with("# vtk DataFile Version 3.0\n"));
    assert!(text.contains("SCALARS pressure double 1"));
    assert!(text.contains("VECTORS velocity_cell_mean double"));
    let cloud = String::from_utf8(cloud_a).unwrap();
    assert!(cloud.contains("VECTORS velocity double"));
}

#[test]
fn convergence_csv_matches_schema_and_is_deterministic_modulo_timing() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = rq1(
            &["convergence", "--levels", "3", "--form", "b", "--out", name],
            dir.path(),
        );
        assert!(
            out.status.success(),
            "stdout: {} stderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
        fs::read_to_string(dir.path().join(name)).unwrap()
    };
    let a = run("a.csv");
    let b = run("b.csv");
    let strip_seconds = |text: &str| -> Vec<String> {
        text.lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    // all value columns are bitwise identical; the trailing wall-time
    // column is the one nondeterministic field
    assert_eq!(strip_seconds(&a), strip_seconds(&b));
    assert_eq!(
        a.lines().next().unwrap(),
        "h,ndof_u,ndof_p,eL2u,eH1u,eL2p,slope_eL2u,slope_eH1u,slope_eL2p,seconds"
    );
    assert_eq!(a.lines().count(), 4);
}

#[test]
fn mesh_round_trips_through_solve() {
    let dir = tempfile::tempdir().unwrap();
    let gen = rq1(
        &[
            "mesh",
            "--domain",
            "ball",
            "--radius",
            "1.0",
            "--refine",
            "1",
            "--out",
            "ball.rq1",
            "--check",
        ],
        dir.path(),
    );
    assert!(gen.status.success());
    let out = rq1(
        &[
            "solve",
            "--mesh",
            "ball.rq1",
            "--case",
            "affine",
            "--form",
            "b",
            "--out",
            "sol",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    // the affine case is reproduced exactly on any mesh
    let first: f64 = stdout
        .lines()
        .next()
        .unwrap()
        .split('=')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!(first < 1e-9, "affine case not reproduced: {stdout}");
    assert!(dir.path().join("sol.vtk").exists());
    assert!(dir.path().join("sol_midpoints.vtk").exists());
}
