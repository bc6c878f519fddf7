//! Library backing the `rq1` command-line interface.
//!
//! Every subcommand is implemented as a plain function returning a report
//! struct, so the integration and acceptance tests can drive the same code
//! paths in-process; `main` is a thin argument-parsing shell.

#![allow(clippy::needless_range_loop)]

pub mod vtk;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rq1_core::analysis::{
    boundary_pressure_l2_error, error_norms, estimate_infsup, solve_manufactured, study_mesh,
    verify_candidate_constants, verify_face_jacobian_identity, ConvergenceRow, ConvergenceTable,
    ManufacturedCase, StudyDomain,
};
use rq1_core::assembly::{
    assemble_divergence_operator, assemble_rhs, assemble_velocity_operator, DivergenceForm,
    OperatorKind,
};
use rq1_core::element::{
    edge_midpoint_quadrature, eval_basis, eval_basis_grad, REF_NODES, REF_VERTICES, REF_VOLUME,
};
use rq1_core::geometry::{dot, Mat3, Point3};
use rq1_core::mesh::{
    build_topology, check_internal_edge_assumption, generate_ball_mesh, generate_box_mesh,
    read_rq1mesh, write_rq1mesh, Mesh,
};
use rq1_core::spaces::{PressureDofMap, VelocityDofMap};
use rq1_core::system::{build_saddle_system, BoundarySpec, StokesSolution};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

/// CLI-level failures, carrying the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad input (mesh files, arguments): exit code 2.
    Input(String),
    /// Solver failure: exit code 3.
    Solve(String),
    /// A verification gate did not pass: exit code 1.
    Gate(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Gate(_) => 1,
            CliError::Input(_) => 2,
            CliError::Solve(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Gate(m) | CliError::Input(m) | CliError::Solve(m) => m,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.message())
    }
}

impl std::error::Error for CliError {}

// ---------------------------------------------------------------------------
// verify-element
// ---------------------------------------------------------------------------

/// Pass condition of a single check value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub bound: Bound,
}

impl CheckResult {
    pub fn pass(&self) -> bool {
        match self.bound {
            Bound::AtMost => self.value <= self.threshold,
            Bound::AtLeast => self.value >= self.threshold,
        }
    }

    fn at_most(name: &'static str, value: f64, threshold: f64) -> Self {
        CheckResult {
            name,
            value,
            threshold,
            bound: Bound::AtMost,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ElementVerification {
    pub checks: Vec<CheckResult>,
}

impl ElementVerification {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(CheckResult::pass)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let rel = match c.bound {
                Bound::AtMost => "<=",
                Bound::AtLeast => ">=",
            };
            let _ = writeln!(
                out,
                "check={} value={:.3e} required {rel} {:.3e} status={}",
                c.name,
                c.value,
                c.threshold,
                if c.pass() { "PASS" } else { "FAIL" }
            );
        }
        let _ = writeln!(out, "overall={}", if self.pass() { "PASS" } else { "FAIL" });
        out
    }

    pub fn render_json(&self) -> String {
        let mut out = String::from("{\"checks\":[");
        for (i, c) in self.checks.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(
                out,
                "{{\"name\":\"{}\",\"value\":{:.16e},\"threshold\":{:.16e},\"bound\":\"{}\",\"pass\":{}}}",
                c.name,
                c.value,
                c.threshold,
                match c.bound {
                    Bound::AtMost => "at_most",
                    Bound::AtLeast => "at_least",
                },
                c.pass()
            );
        }
        let _ = write!(out, "],\"pass\":{}}}", self.pass());
        out
    }
}

fn random_unit_cube_point(rng: &mut StdRng) -> Point3 {
    [
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    ]
}

/// Eigenvalues of a symmetric 3x3 matrix (ascending), by the trigonometric
/// closed form.
fn sym3_eigenvalues(m: [[f64; 3]; 3]) -> [f64; 3] {
    let p1 = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
    if p1 == 0.0 {
        let mut d = [m[0][0], m[1][1], m[2][2]];
        d.sort_by(f64::total_cmp);
        return d;
    }
    let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let b = |i: usize, j: usize| (m[i][j] - if i == j { q } else { 0.0 }) / p;
    let detb = b(0, 0) * (b(1, 1) * b(2, 2) - b(1, 2) * b(2, 1))
        - b(0, 1) * (b(1, 0) * b(2, 2) - b(1, 2) * b(2, 0))
        + b(0, 2) * (b(1, 0) * b(2, 1) - b(1, 1) * b(2, 0));
    let r = (detb / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let e2 = 3.0 * q - e1 - e3;
    let mut d = [e1, e2, e3];
    d.sort_by(f64::total_cmp);
    d
}

fn condition_number(a: &Mat3) -> f64 {
    let mut ata = [[0.0; 3]; 3];
    for (i, row) in ata.iter_mut().enumerate() {
        for (j, entry) in row.iter_mut().enumerate() {
            *entry = (0..3).map(|k| a.0[k][i] * a.0[k][j]).sum();
        }
    }
    let eigs = sym3_eigenvalues(ata);
    if eigs[0] <= 0.0 {
        f64::INFINITY
    } else {
        (eigs[2] / eigs[0]).sqrt()
    }
}

/// Runs the element and reference-identity suite.
///
/// `inject_bad_constant` swaps the expected net constant `8/45` for `1/6`, a
/// negative control that must make the suite fail.
pub fn verify_element(inject_bad_constant: bool) -> ElementVerification {
    let mut report = ElementVerification::default();
    let tol = 1e-12;

    // Lagrange property at the six nodes
    let mut dev = 0.0f64;
    for (i, &node) in REF_NODES.iter().enumerate() {
        let phi = eval_basis(node);
        for (j, &v) in phi.iter().enumerate() {
            let expected = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((v - expected).abs());
        }
    }
    report
        .checks
        .push(CheckResult::at_most("lagrange_property", dev, tol));

    // partition of unity and gradient sum at random points
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let mut pu_dev = 0.0f64;
    let mut grad_dev = 0.0f64;
    for _ in 0..100 {
        let p = random_unit_cube_point(&mut rng);
        let phi = eval_basis(p);
        pu_dev = pu_dev.max((phi.iter().sum::<f64>() - 1.0).abs());
        let grads = eval_basis_grad(p);
        for a in 0..3 {
            grad_dev = grad_dev.max(grads.iter().map(|g| g[a]).sum::<f64>().abs());
        }
    }
    report
        .checks
        .push(CheckResult::at_most("partition_of_unity", pu_dev, tol));
    report
        .checks
        .push(CheckResult::at_most("gradient_sum_zero", grad_dev, tol));

    // invertibility of the nodal map on the shape space
    let span: [fn(Point3) -> f64; 6] = [
        |_| 1.0,
        |p| p[0],
        |p| p[1],
        |p| p[2],
        |p| p[0] * p[0] - p[1] * p[1],
        |p| p[1] * p[1] - p[2] * p[2],
    ];
    let mut eval = [[0.0f64; 6]; 6];
    for (i, &node) in REF_NODES.iter().enumerate() {
        for (j, f) in span.iter().enumerate() {
            eval[i][j] = f(node);
        }
    }
    let det = dense6_determinant(eval);
    report.checks.push(CheckResult {
        name: "nodal_map_determinant",
        value: det.abs(),
        threshold: 1e-8,
        bound: Bound::AtLeast,
    });

    // nodal values of the coordinate square sum equal those of 1
    let mut ss_dev = 0.0f64;
    for &node in &REF_NODES {
        ss_dev = ss_dev.max((dot(node, node) - 1.0).abs());
    }
    report
        .checks
        .push(CheckResult::at_most("sum_of_squares_nodal_values", ss_dev, tol));

    // edge-midpoint quadrature exact on the shape space
    let rule = edge_midpoint_quadrature();
    let exact = [REF_VOLUME, 0.0, 0.0, 0.0, 0.0, 0.0];
    let mut quad_dev = 0.0f64;
    for (f, &target) in span.iter().zip(exact.iter()) {
        quad_dev = quad_dev.max((rule.integrate(f) - target).abs());
    }
    for i in 0..6 {
        quad_dev = quad_dev.max((rule.integrate(|p| eval_basis(p)[i]) - 4.0 / 9.0).abs());
    }
    report
        .checks
        .push(CheckResult::at_most("midpoint_quadrature_on_shape_space", quad_dev, tol));

    // reference-element constants of the inconsistent-form computation
    let expected_total = if inject_bad_constant {
        1.0 / 6.0
    } else {
        8.0 / 45.0
    };
    let mut bulk_dev = 0.0f64;
    let mut boundary_dev = 0.0f64;
    let mut total_dev = 0.0f64;
    let mut bs: Vec<Point3> = vec![[1.0, 0.0, 0.0], [0.0; 3]];
    for _ in 0..50 {
        bs.push([
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        ]);
    }
    for b in bs {
        let rep = verify_candidate_constants(b);
        bulk_dev = bulk_dev.max(rep.max_bulk_deviation);
        boundary_dev = boundary_dev.max(rep.max_boundary_deviation);
        for k in 0..6 {
            total_dev =
                total_dev.max((rep.total[k] - rep.tangent_dot_b_sq[k] * expected_total).abs());
        }
    }
    report
        .checks
        .push(CheckResult::at_most("reference_bulk_constant_4_9", bulk_dev, tol));
    report.checks.push(CheckResult::at_most(
        "reference_boundary_constant_4_15",
        boundary_dev,
        tol,
    ));
    report
        .checks
        .push(CheckResult::at_most("reference_net_constant_8_45", total_dev, tol));

    // face-Jacobian identity over random affine images of the reference cell
    let mut jac_dev = 0.0f64;
    let mut accepted = 0;
    while accepted < 100 {
        let mut a = [[0.0; 3]; 3];
        for row in a.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let m = Mat3(a);
        if m.det().abs() < 0.05 || condition_number(&m) > 10.0 {
            continue;
        }
        let verts: Vec<Point3> = REF_VERTICES.iter().map(|&v| m.mul_vec(v)).collect();
        let Ok(mesh) = build_topology(verts, vec![[0, 1, 2, 3]]) else {
            continue;
        };
        accepted += 1;
        for edge in 0..6 {
            for face in 0..4 {
                let diff = verify_face_jacobian_identity(&mesh, 0, edge, face)
                    .expect("valid incidence");
                jac_dev = jac_dev.max(diff);
            }
        }
    }
    report
        .checks
        .push(CheckResult::at_most("face_jacobian_identity", jac_dev, tol));

    report
}

fn dense6_determinant(mut m: [[f64; 6]; 6]) -> f64 {
    let mut det = 1.0;
    for col in 0..6 {
        let pivot = (col..6)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        if m[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            m.swap(pivot, col);
            det = -det;
        }
        det *= m[col][col];
        for row in col + 1..6 {
            let factor = m[row][col] / m[col][col];
            for k in col..6 {
                m[row][k] -= factor * m[col][k];
            }
        }
    }
    det
}

// ---------------------------------------------------------------------------
// convergence
// ---------------------------------------------------------------------------

/// Acceptance thresholds on the finest-pair slopes: velocity L2 in 2 +- 0.25,
/// broken H1 in 1 +- 0.2, pressure L2 at least 1.3.
pub fn slopes_within_thresholds(slopes: [f64; 3]) -> bool {
    (1.75..=2.25).contains(&slopes[0]) && (0.8..=1.2).contains(&slopes[1]) && slopes[2] >= 1.3
}

#[derive(Debug, Clone)]
pub struct ConvergenceOutcome {
    pub table: ConvergenceTable,
    /// Boundary-restricted pressure L2 error per level (the quantitative
    /// stand-in for the boundary pressure surface plots).
    pub boundary_pressure: Vec<f64>,
    pub error: Option<String>,
}

impl ConvergenceOutcome {
    pub fn gate(&self) -> Result<[f64; 3], CliError> {
        if let Some(e) = &self.error {
            return Err(CliError::Solve(format!("convergence study aborted: {e}")));
        }
        let slopes = self
            .table
            .finest_slopes()
            .ok_or_else(|| CliError::Gate("not enough levels for slopes".into()))?;
        if slopes_within_thresholds(slopes) {
            Ok(slopes)
        } else {
            Err(CliError::Gate(format!(
                "finest-pair slopes {slopes:?} outside thresholds (2+-0.25, 1+-0.2, >=1.3)"
            )))
        }
    }
}

/// Runs the manufactured-solution convergence study, including the
/// boundary-pressure error column.
pub fn run_convergence(
    levels: usize,
    form: DivergenceForm,
    operator: OperatorKind,
    domain: StudyDomain,
) -> Result<ConvergenceOutcome, CliError> {
    if levels < 3 {
        return Err(CliError::Input(format!(
            "convergence needs at least 3 levels, got {levels}"
        )));
    }
    let case = ManufacturedCase::stokes_cubic();
    case.validate().map_err(CliError::Input)?;
    let mut table = ConvergenceTable::default();
    let mut boundary_pressure = Vec::new();
    let mut error = None;
    for level in 0..levels {
        let start = Instant::now();
        let mesh = match study_mesh(domain, level) {
            Ok(m) => m,
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        };
        let (vmap, pmap, solution) = match solve_manufactured(&mesh, &case, form, operator) {
            Ok(out) => out,
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        };
        let errors = error_norms(
            &mesh,
            &vmap,
            &pmap,
            &solution.velocity,
            &solution.pressure,
            &case,
        );
        boundary_pressure.push(boundary_pressure_l2_error(
            &mesh,
            &pmap,
            &solution.pressure,
            &case,
        ));
        table.rows.push(ConvergenceRow {
            h: mesh.h(),
            ndof_u: vmap.n_dofs(),
            ndof_p: pmap.n_dofs(),
            e_l2_u: errors.velocity_l2,
            e_h1_u: errors.velocity_h1_broken,
            e_l2_p: errors.pressure_l2,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(ConvergenceOutcome {
        table,
        boundary_pressure,
        error,
    })
}

// ---------------------------------------------------------------------------
// infsup
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct InfsupStudy {
    /// `(h, beta)` per level.
    pub rows: Vec<(f64, f64)>,
    pub error: Option<String>,
}

impl InfsupStudy {
    pub fn csv(&self) -> String {
        let mut out = String::from("h,beta\n");
        for (h, beta) in &self.rows {
            let _ = writeln!(out, "{h:.16e},{beta:.16e}");
        }
        out
    }

    pub fn gate(&self) -> Result<(), CliError> {
        if let Some(e) = &self.error {
            return Err(CliError::Gate(format!("inf-sup estimation failed: {e}")));
        }
        let betas: Vec<f64> = self.rows.iter().map(|&(_, b)| b).collect();
        if betas.iter().any(|&b| b.is_nan() || b <= 0.0) {
            return Err(CliError::Gate(format!("nonpositive inf-sup constant: {betas:?}")));
        }
        let max = betas.iter().cloned().fold(f64::MIN, f64::max);
        let min = betas.iter().cloned().fold(f64::MAX, f64::min);
        if max / min > 2.0 {
            return Err(CliError::Gate(format!(
                "inf-sup constants vary by more than a factor 2: {betas:?}"
            )));
        }
        Ok(())
    }
}

/// Estimates the inf-sup constant on box meshes with subdivisions
/// `coarsest, coarsest + 2, ...` (`levels` of them).
pub fn run_infsup(levels: usize, coarsest: usize, form: DivergenceForm) -> InfsupStudy {
    let mut study = InfsupStudy::default();
    for level in 0..levels {
        let n = coarsest + 2 * level;
        let mesh = match generate_box_mesh([1.0, 1.0, 1.0], [n, n, n]) {
            Ok(m) => m,
            Err(e) => {
                study.error = Some(e.to_string());
                return study;
            }
        };
        match estimate_infsup(&mesh, form) {
            Ok(beta) => study.rows.push((mesh.h(), beta)),
            Err(e) => {
                study.error = Some(e.to_string());
                return study;
            }
        }
    }
    study
}

// ---------------------------------------------------------------------------
// poiseuille
// ---------------------------------------------------------------------------

pub const POISEUILLE_EXTENT: [f64; 3] = [3.0, 1.0, 0.1];
pub const POISEUILLE_SUBDIVISIONS: [usize; 3] = [30, 10, 1];

#[derive(Debug, Clone)]
pub struct PoiseuilleReport {
    pub flux_in: f64,
    pub flux_out: f64,
    /// `| |in| - |out| | / |in|`
    pub flux_balance: f64,
    /// Relative midplane mirror defect of the streamwise velocity.
    pub symmetry_defect: f64,
    /// Streamwise strip averages of the pressure.
    pub strip_means: Vec<f64>,
    pub strips_monotone: bool,
    /// Integral of the (unnormalized) pressure, reported since no mean
    /// constraint is active with the natural outflow.
    pub pressure_integral: f64,
    pub residual_rel: f64,
}

impl PoiseuilleReport {
    pub fn gate(&self) -> Result<(), CliError> {
        if self.flux_balance > 0.02 {
            return Err(CliError::Gate(format!(
                "inflow/outflow flux imbalance {:.4} exceeds 2%",
                self.flux_balance
            )));
        }
        if self.symmetry_defect > 0.02 {
            return Err(CliError::Gate(format!(
                "midplane symmetry defect {:.4} exceeds 2%",
                self.symmetry_defect
            )));
        }
        Ok(())
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "flux_in={:.16e}", self.flux_in);
        let _ = writeln!(out, "flux_out={:.16e}", self.flux_out);
        let _ = writeln!(out, "flux_balance={:.16e}", self.flux_balance);
        let _ = writeln!(out, "symmetry_defect={:.16e}", self.symmetry_defect);
        let _ = writeln!(out, "strips_monotone={}", self.strips_monotone);
        let _ = writeln!(out, "pressure_integral={:.16e}", self.pressure_integral);
        let _ = writeln!(out, "residual_rel={:.16e}", self.residual_rel);
        out
    }
}

/// The channel-flow demo: parabolic inflow, no-slip side walls, symmetry
/// conditions on the thin direction, natural outflow. Solved with the
/// inconsistent divergence form and no pressure mean constraint.
pub fn run_poiseuille(
    operator: OperatorKind,
    out: Option<&Path>,
) -> Result<PoiseuilleReport, CliError> {
    let mesh = generate_box_mesh(POISEUILLE_EXTENT, POISEUILLE_SUBDIVISIONS)
        .map_err(|e| CliError::Input(e.to_string()))?;
    let vmap = VelocityDofMap::new(&mesh);
    let pmap = PressureDofMap::new(&mesh);
    let form = DivergenceForm::Tilde;

    let a = assemble_velocity_operator(&mesh, &vmap, operator);
    let b = assemble_divergence_operator(&mesh, &vmap, &pmap, form);
    let rhs = assemble_rhs(&mesh, &vmap, |_| [0.0; 3]);
    let mut system = build_saddle_system(&mesh, a, b, form, rhs, false)
        .map_err(|e| CliError::Solve(e.to_string()))?;

    let eps = 1e-9;
    let lz = POISEUILLE_EXTENT[2];
    let inflow_profile = |x: Point3| [x[1] * (1.0 - x[1]), 0.0, 0.0];
    let spec = BoundarySpec::new()
        .region(move |x| x[0] < eps, [true; 3], inflow_profile)
        .region(
            move |x| x[1] < eps || x[1] > 1.0 - eps,
            [true; 3],
            inflow_profile,
        )
        .region(
            move |x| x[2] < eps || x[2] > lz - eps,
            [false, false, true],
            |_| [0.0; 3],
        );
    system
        .apply_dirichlet(&mesh, &vmap, &spec)
        .map_err(|e| CliError::Input(e.to_string()))?;
    let solution = system.solve().map_err(|e| CliError::Solve(e.to_string()))?;

    let flux_in = boundary_flux(&mesh, &vmap, &solution, |x| x[0] < eps);
    let flux_out = boundary_flux(&mesh, &vmap, &solution, |x| x[0] > POISEUILLE_EXTENT[0] - eps);
    let flux_balance = (flux_in.abs() - flux_out.abs()).abs() / flux_in.abs().max(1e-300);

    let symmetry_defect = midplane_symmetry_defect(&mesh, &vmap, &solution);

    let (strip_means, strips_monotone) = pressure_strip_means(&mesh, &pmap, &solution);
    let m = rq1_core::assembly::pressure_integral_vector(&mesh);
    let pressure_integral = m
        .iter()
        .zip(solution.pressure.coeffs.iter())
        .map(|(a, b)| a * b)
        .sum();

    if let Some(base) = out {
        write_solution_vtk(base, &mesh, &vmap, &solution)
            .map_err(|e| CliError::Input(format!("writing VTK output: {e}")))?;
    }

    Ok(PoiseuilleReport {
        flux_in,
        flux_out,
        flux_balance,
        symmetry_defect,
        strip_means,
        strips_monotone,
        pressure_integral,
        residual_rel: solution.diagnostics.residual_rel,
    })
}

/// Net flux of `n . u_h` over the boundary faces selected by a predicate on
/// the face centroid, integrated with the face edge-midpoint rule (exact for
/// the trace space).
fn boundary_flux(
    mesh: &Mesh,
    vmap: &VelocityDofMap,
    solution: &StokesSolution,
    select: impl Fn(Point3) -> bool,
) -> f64 {
    let mut flux = 0.0;
    for f in mesh.boundary_faces().collect::<Vec<_>>() {
        let [a, b, c] = mesh.face_vertices(f);
        let centroid = [
            (a[0] + b[0] + c[0]) / 3.0,
            (a[1] + b[1] + c[1]) / 3.0,
            (a[2] + b[2] + c[2]) / 3.0,
        ];
        if !select(centroid) {
            continue;
        }
        let (cell, _) = mesh.face_cells(f);
        let n = mesh.outward_face_normal(f, cell);
        let area = rq1_core::geometry::triangle_area(a, b, c);
        // the three quadrature nodes are the midpoints of the face edges,
        // where the trace values are the edge DOFs themselves
        for &e in &mesh.face_edges(f) {
            let u = [
                solution.velocity.coeffs[vmap.dof(e, 0)],
                solution.velocity.coeffs[vmap.dof(e, 1)],
                solution.velocity.coeffs[vmap.dof(e, 2)],
            ];
            flux += area / 3.0 * dot(n, u);
        }
    }
    flux
}

fn midplane_symmetry_defect(
    mesh: &Mesh,
    vmap: &VelocityDofMap,
    solution: &StokesSolution,
) -> f64 {
    let z = POISEUILLE_EXTENT[2] / 2.0;
    let mut max_defect = 0.0f64;
    let mut max_value = 0.0f64;
    for i in 0..10 {
        let x1 = 0.15 + 2.7 * (i as f64) / 9.0;
        for j in 0..5 {
            let x2 = 0.05 + 0.4 * (j as f64) / 4.0;
            let p = [x1, x2, z];
            let q = [x1, 1.0 - x2, z];
            let (cp, xp) = match mesh.locate_point(p) {
                Some(hit) => hit,
                None => continue,
            };
            let (cq, xq) = match mesh.locate_point(q) {
                Some(hit) => hit,
                None => continue,
            };
            let up = vmap.eval_on_cell_ref(mesh, &solution.velocity, cp, xp)[0];
            let uq = vmap.eval_on_cell_ref(mesh, &solution.velocity, cq, xq)[0];
            max_defect = max_defect.max((up - uq).abs());
            max_value = max_value.max(up.abs()).max(uq.abs());
        }
    }
    max_defect / max_value.max(1e-300)
}

fn pressure_strip_means(
    mesh: &Mesh,
    _pmap: &PressureDofMap,
    solution: &StokesSolution,
) -> (Vec<f64>, bool) {
    let n_strips = POISEUILLE_SUBDIVISIONS[0];
    let width = POISEUILLE_EXTENT[0] / n_strips as f64;
    let mut sums = vec![0.0f64; n_strips];
    let mut volumes = vec![0.0f64; n_strips];
    for c in 0..mesh.n_cells() {
        let centroid = mesh.cell_centroid(c);
        let strip = ((centroid[0] / width) as usize).min(n_strips - 1);
        let vol = mesh.cell_volume(c);
        // the mean of a linear function over a cell is its centroid value
        let verts = mesh.cell(c);
        let p_mean = verts
            .iter()
            .map(|&v| solution.pressure.coeffs[v])
            .sum::<f64>()
            / 4.0;
        sums[strip] += vol * p_mean;
        volumes[strip] += vol;
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(volumes.iter())
        .map(|(s, v)| s / v.max(1e-300))
        .collect();
    let range = means.iter().cloned().fold(f64::MIN, f64::max)
        - means.iter().cloned().fold(f64::MAX, f64::min);
    let monotone = means
        .windows(2)
        .all(|w| w[1] <= w[0] + 1e-9 * range.abs().max(1e-300));
    (means, monotone)
}

fn write_solution_vtk(
    base: &Path,
    mesh: &Mesh,
    vmap: &VelocityDofMap,
    solution: &StokesSolution,
) -> std::io::Result<()> {
    let main_path = base.with_extension("vtk");
    let mut w = BufWriter::new(File::create(&main_path)?);
    vtk::write_mesh_fields(&mut w, mesh, vmap, &solution.velocity, &solution.pressure)?;
    w.flush()?;

    let stem = base
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "solution".into());
    let cloud_path = base.with_file_name(format!("{stem}_midpoints.vtk"));
    let mut w = BufWriter::new(File::create(&cloud_path)?);
    vtk::write_midpoint_cloud(&mut w, mesh, vmap, &solution.velocity)?;
    w.flush()
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub errors: rq1_core::analysis::ErrorNorms,
    pub diagnostics_report: String,
}

/// Loads a mesh file, solves the named manufactured case on it with exact
/// Dirichlet data and the mean constraint, and reports error norms and
/// solver diagnostics.
pub fn run_solve(
    mesh_path: &Path,
    case_name: &str,
    form: DivergenceForm,
    operator: OperatorKind,
    out: Option<&Path>,
) -> Result<SolveReport, CliError> {
    let file = File::open(mesh_path)
        .map_err(|e| CliError::Input(format!("{}: {e}", mesh_path.display())))?;
    let mesh = read_rq1mesh(BufReader::new(file))
        .map_err(|e| CliError::Input(format!("{}: {e}", mesh_path.display())))?;
    let case = ManufacturedCase::by_name(case_name)
        .ok_or_else(|| CliError::Input(format!("unknown case '{case_name}'")))?;
    let (vmap, pmap, solution) = solve_manufactured(&mesh, &case, form, operator)
        .map_err(|e| CliError::Solve(e.to_string()))?;
    let errors = error_norms(
        &mesh,
        &vmap,
        &pmap,
        &solution.velocity,
        &solution.pressure,
        &case,
    );
    if let Some(base) = out {
        write_solution_vtk(base, &mesh, &vmap, &solution)
            .map_err(|e| CliError::Input(format!("writing VTK output: {e}")))?;
    }
    Ok(SolveReport {
        errors,
        diagnostics_report: solution.diagnostics.to_key_value(),
    })
}

// ---------------------------------------------------------------------------
// mesh
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum MeshRequest {
    Box {
        extent: [f64; 3],
        subdivisions: [usize; 3],
    },
    Ball {
        radius: f64,
        refinement: usize,
    },
}

#[derive(Debug, Clone)]
pub struct MeshReport {
    pub n_vertices: usize,
    pub n_cells: usize,
    pub n_edges: usize,
    pub n_faces: usize,
    pub h: f64,
    pub internal_edge_pass: Option<bool>,
}

/// Generates a mesh, optionally checks its invariants and the internal-edge
/// assumption, and optionally exports it.
pub fn run_mesh(
    request: &MeshRequest,
    out: Option<&Path>,
    check: bool,
) -> Result<MeshReport, CliError> {
    let mesh = match *request {
        MeshRequest::Box {
            extent,
            subdivisions,
        } => generate_box_mesh(extent, subdivisions),
        MeshRequest::Ball { radius, refinement } => generate_ball_mesh(radius, refinement),
    }
    .map_err(|e| CliError::Input(e.to_string()))?;

    let internal_edge_pass = if check {
        mesh.validate()
            .map_err(|e| CliError::Gate(format!("mesh invariant violated: {e}")))?;
        Some(check_internal_edge_assumption(&mesh).pass())
    } else {
        None
    };

    if let Some(path) = out {
        let mut w = BufWriter::new(
            File::create(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?,
        );
        write_rq1mesh(&mesh, &mut w).map_err(|e| CliError::Input(e.to_string()))?;
        w.flush().map_err(|e| CliError::Input(e.to_string()))?;
    }

    Ok(MeshReport {
        n_vertices: mesh.n_vertices(),
        n_cells: mesh.n_cells(),
        n_edges: mesh.n_edges(),
        n_faces: mesh.n_faces(),
        h: mesh.h(),
        internal_edge_pass,
    })
}
