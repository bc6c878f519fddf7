//! Norms and error measures, manufactured solutions, convergence studies,
//! numerical inf-sup and Korn constant estimation, and the element-level
//! identity verifiers.
//!
//! The eigenvalue estimators use dense self-adjoint eigendecompositions,
//! independent of the sparse direct solver used for the Stokes systems.

use crate::assembly::{
    assemble_divergence_operator, assemble_pressure_gram, assemble_rhs,
    assemble_velocity_operator, DivergenceForm, OperatorKind, PressureGram, SparseMatrix,
};
use crate::element::{
    error_norm_quadrature, ref_edge_tangent, triangle_quadrature, volume_quadrature,
    ElementError, EDGE_BASIS, REF_FACES, REF_VERTICES,
};
use crate::geometry::{add, cross, dot, norm, normalize, scale, sub, Point3};
use crate::mesh::{check_internal_edge_assumption, Mesh, MeshError};
use crate::spaces::{DiscreteField, PressureDofMap, VelocityDofMap};
use crate::system::{build_saddle_system, BoundarySpec, StokesSolution, SystemError};
use faer::linalg::solvers::Solve;
use faer::linalg::triangular_solve::{
    solve_lower_triangular_in_place, solve_upper_triangular_in_place,
};
use faer::{Mat, Par, Side};
use std::io::{self, Write};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(
        "mesh violates the internal-edge assumption: {deficient} cells with fewer than three \
         internal edges, {dependent} cells without three independent tangents"
    )]
    AssumptionViolated { deficient: usize, dependent: usize },
    #[error("eigenvalue computation failed: {0}")]
    Eigen(String),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Element(#[from] ElementError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// An analytic Stokes solution used for convergence verification: velocity,
/// its gradient, pressure, and the matching body force.
#[derive(Clone, Copy)]
pub struct ManufacturedCase {
    pub name: &'static str,
    pub velocity: fn(Point3) -> [f64; 3],
    /// `gradient[i][j] = d u_i / d x_j`
    pub velocity_gradient: fn(Point3) -> [[f64; 3]; 3],
    pub pressure: fn(Point3) -> f64,
    pub force: fn(Point3) -> [f64; 3],
}

impl ManufacturedCase {
    /// The cubic solution used for the convergence study:
    /// `u = (x2^3 - x3^3, x1^3 - x3^3, -x1^3 - x2^3)`,
    /// `p = 6 (x1 x2 - x1 x3 - x2 x3)`, `f = 0`.
    pub fn stokes_cubic() -> Self {
        ManufacturedCase {
            name: "cubic",
            velocity: |x| {
                [
                    x[1].powi(3) - x[2].powi(3),
                    x[0].powi(3) - x[2].powi(3),
                    -x[0].powi(3) - x[1].powi(3),
                ]
            },
            velocity_gradient: |x| {
                [
                    [0.0, 3.0 * x[1] * x[1], -3.0 * x[2] * x[2]],
                    [3.0 * x[0] * x[0], 0.0, -3.0 * x[2] * x[2]],
                    [-3.0 * x[0] * x[0], -3.0 * x[1] * x[1], 0.0],
                ]
            },
            pressure: |x| 6.0 * (x[0] * x[1] - x[0] * x[2] - x[1] * x[2]),
            force: |_| [0.0; 3],
        }
    }

    /// A divergence-free affine solution, reproduced exactly by the space.
    pub fn affine_patch() -> Self {
        ManufacturedCase {
            name: "affine",
            velocity: |x| [x[1], 0.0, 0.0],
            velocity_gradient: |_| [[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
            pressure: |_| 0.0,
            force: |_| [0.0; 3],
        }
    }

    /// Zero data, zero solution.
    pub fn zero() -> Self {
        ManufacturedCase {
            name: "zero",
            velocity: |_| [0.0; 3],
            velocity_gradient: |_| [[0.0; 3]; 3],
            pressure: |_| 0.0,
            force: |_| [0.0; 3],
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "cubic" => Some(Self::stokes_cubic()),
            "affine" => Some(Self::affine_patch()),
            "zero" => Some(Self::zero()),
            _ => None,
        }
    }

    /// Checks `-lap u + grad p = f`, `div u = 0` and the stated gradient by
    /// finite differences at 100 deterministic sample points. Richardson
    /// extrapolation removes the leading truncation term, which is exact for
    /// the polynomial cases here.
    pub fn validate(&self) -> Result<(), String> {
        let mut state = 0x853c49e6748fea9bu64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        const TOL: f64 = 1e-10;
        for _ in 0..100 {
            let x = [next(), next(), next()];
            let grad = (self.velocity_gradient)(x);
            // gradient against Richardson central differences
            for j in 0..3 {
                let d = richardson_derivative(|y| (self.velocity)(y), x, j);
                for i in 0..3 {
                    if (grad[i][j] - d[i]).abs() > TOL {
                        return Err(format!(
                            "{}: gradient component ({i},{j}) mismatch at {x:?}",
                            self.name
                        ));
                    }
                }
            }
            // incompressibility from the analytic gradient
            let div = grad[0][0] + grad[1][1] + grad[2][2];
            if div.abs() > TOL {
                return Err(format!("{}: velocity is not divergence-free at {x:?}", self.name));
            }
            // momentum residual: -lap u + grad p - f
            let f = (self.force)(x);
            let lap = fd_laplacian(|y| (self.velocity)(y), x);
            for i in 0..3 {
                let dp = richardson_derivative(|y| [(self.pressure)(y), 0.0, 0.0], x, i)[0];
                let res = -lap[i] + dp - f[i];
                if res.abs() > TOL {
                    return Err(format!(
                        "{}: momentum residual {res:.3e} in component {i} at {x:?}",
                        self.name
                    ));
                }
            }
        }
        Ok(())
    }
}

fn richardson_derivative(f: impl Fn(Point3) -> [f64; 3], x: Point3, j: usize) -> [f64; 3] {
    let central = |h: f64| {
        let mut xp = x;
        let mut xm = x;
        xp[j] += h;
        xm[j] -= h;
        let fp = f(xp);
        let fm = f(xm);
        [
            (fp[0] - fm[0]) / (2.0 * h),
            (fp[1] - fm[1]) / (2.0 * h),
            (fp[2] - fm[2]) / (2.0 * h),
        ]
    };
    let h = 1e-3;
    let d1 = central(h);
    let d2 = central(h / 2.0);
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = (4.0 * d2[i] - d1[i]) / 3.0;
    }
    out
}

fn fd_laplacian(f: impl Fn(Point3) -> [f64; 3], x: Point3) -> [f64; 3] {
    // second differences are exact for cubics; h is chosen large enough to
    // keep the rounding error below 1e-11
    let h = 1e-2;
    let f0 = f(x);
    let mut out = [0.0; 3];
    for j in 0..3 {
        let mut xp = x;
        let mut xm = x;
        xp[j] += h;
        xm[j] -= h;
        let fp = f(xp);
        let fm = f(xm);
        for i in 0..3 {
            out[i] += (fp[i] - 2.0 * f0[i] + fm[i]) / (h * h);
        }
    }
    out
}

/// Error norms of a discrete Stokes solution against an analytic case.
#[derive(Debug, Clone, Copy)]
pub struct ErrorNorms {
    pub velocity_l2: f64,
    pub velocity_h1_broken: f64,
    pub pressure_l2: f64,
}

/// Computes the velocity L2 error, the broken H1 seminorm error and the
/// pressure L2 error with a composite cell quadrature.
///
/// Pressures are compared mean-free: the quadrature mean over the mesh is
/// subtracted from both the exact and the discrete pressure, matching the
/// zero-mean normalization of the solver.
pub fn error_norms(
    mesh: &Mesh,
    vmap: &VelocityDofMap,
    pmap: &PressureDofMap,
    velocity: &DiscreteField,
    pressure: &DiscreteField,
    case: &ManufacturedCase,
) -> ErrorNorms {
    let rule = error_norm_quadrature();
    let volume = mesh.total_volume();

    let mut exact_mean = 0.0;
    let mut discrete_mean = 0.0;
    for c in 0..mesh.n_cells() {
        let map = mesh.affine_map(c).expect("built meshes are nondegenerate");
        let det = map.det().abs();
        for (&p, &w) in rule.points.iter().zip(rule.weights.iter()) {
            exact_mean += w * det * (case.pressure)(map.apply(p));
            discrete_mean += w * det * pmap.eval_on_cell_ref(mesh, pressure, c, p);
        }
    }
    exact_mean /= volume;
    discrete_mean /= volume;

    let mut e_l2 = 0.0;
    let mut e_h1 = 0.0;
    let mut e_p = 0.0;
    for c in 0..mesh.n_cells() {
        let map = mesh.affine_map(c).expect("built meshes are nondegenerate");
        let det = map.det().abs();
        for (&p, &w) in rule.points.iter().zip(rule.weights.iter()) {
            let x = map.apply(p);
            let uh = vmap.eval_on_cell_ref(mesh, velocity, c, p);
            let u = (case.velocity)(x);
            for i in 0..3 {
                e_l2 += w * det * (uh[i] - u[i]) * (uh[i] - u[i]);
            }
            let gh = vmap.eval_gradient_on_cell_ref(mesh, velocity, c, p);
            let g = (case.velocity_gradient)(x);
            for i in 0..3 {
                for j in 0..3 {
                    e_h1 += w * det * (gh[i][j] - g[i][j]) * (gh[i][j] - g[i][j]);
                }
            }
            let ph = pmap.eval_on_cell_ref(mesh, pressure, c, p) - discrete_mean;
            let pe = (case.pressure)(x) - exact_mean;
            e_p += w * det * (ph - pe) * (ph - pe);
        }
    }
    // the composite rule carries negative weights, so exact-zero errors can
    // accumulate to tiny negative sums
    ErrorNorms {
        velocity_l2: e_l2.max(0.0).sqrt(),
        velocity_h1_broken: e_h1.max(0.0).sqrt(),
        pressure_l2: e_p.max(0.0).sqrt(),
    }
}

/// L2 error of the (mean-adjusted) pressure restricted to the boundary
/// surface; the quantitative stand-in for the boundary pressure plots.
pub fn boundary_pressure_l2_error(
    mesh: &Mesh,
    pmap: &PressureDofMap,
    pressure: &DiscreteField,
    case: &ManufacturedCase,
) -> f64 {
    let rule = error_norm_quadrature();
    let volume = mesh.total_volume();
    let mut exact_mean = 0.0;
    let mut discrete_mean = 0.0;
    for c in 0..mesh.n_cells() {
        let map = mesh.affine_map(c).expect("built meshes are nondegenerate");
        let det = map.det().abs();
        for (&p, &w) in rule.points.iter().zip(rule.weights.iter()) {
            exact_mean += w * det * (case.pressure)(map.apply(p));
            discrete_mean += w * det * pmap.eval_on_cell_ref(mesh, pressure, c, p);
        }
    }
    exact_mean /= volume;
    discrete_mean /= volume;

    let mut err = 0.0;
    for f in mesh.boundary_faces().collect::<Vec<_>>() {
        let [a, b, c] = mesh.face_vertices(f);
        let (cell, _) = mesh.face_cells(f);
        let map = mesh.affine_map(cell).expect("built meshes are nondegenerate");
        let rule = triangle_quadrature(a, b, c, 4).expect("degree 4 is supported");
        for (&p, &w) in rule.points.iter().zip(rule.weights.iter()) {
            let ph = pmap.eval_on_cell_ref(mesh, pressure, cell, map.pull_back(p)) - discrete_mean;
            let pe = (case.pressure)(p) - exact_mean;
            err += w * (ph - pe) * (ph - pe);
        }
    }
    err.max(0.0).sqrt()
}

/// Precomputed Gram matrices for the mesh-dependent triple norm
/// `(|v|_a^2 + |q|^2 + h^2 |grad q|^2)^(1/2)`.
pub struct TripleNorm {
    laplacian: SparseMatrix,
    mass: SparseMatrix,
    stiffness: SparseMatrix,
    h: f64,
}

impl TripleNorm {
    pub fn new(mesh: &Mesh, vmap: &VelocityDofMap, pmap: &PressureDofMap) -> Self {
        TripleNorm {
            laplacian: assemble_velocity_operator(mesh, vmap, OperatorKind::Laplacian),
            mass: assemble_pressure_gram(mesh, pmap, PressureGram::Mass),
            stiffness: assemble_pressure_gram(mesh, pmap, PressureGram::Stiffness),
            h: mesh.h(),
        }
    }

    pub fn eval(&self, velocity: &DiscreteField, pressure: &DiscreteField) -> f64 {
        let quad = |m: &SparseMatrix, x: &[f64]| -> f64 {
            m.matvec(x).iter().zip(x.iter()).map(|(a, b)| a * b).sum()
        };
        let v2 = quad(&self.laplacian, &velocity.coeffs);
        let q2 = quad(&self.mass, &pressure.coeffs);
        let gq2 = quad(&self.stiffness, &pressure.coeffs);
        (v2 + q2 + self.h * self.h * gq2).max(0.0).sqrt()
    }
}

/// One solved level of a convergence study.
#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub h: f64,
    pub ndof_u: usize,
    pub ndof_p: usize,
    pub e_l2_u: f64,
    pub e_h1_u: f64,
    pub e_l2_p: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    /// Convergence slopes between consecutive rows:
    /// `log(e_coarse / e_fine) / log(h_coarse / h_fine)`, one triple
    /// (velocity L2, broken H1, pressure L2) per refinement step.
    pub fn slopes(&self) -> Vec<[f64; 3]> {
        self.rows
            .windows(2)
            .map(|w| {
                let ratio = (w[0].h / w[1].h).ln();
                [
                    (w[0].e_l2_u / w[1].e_l2_u).ln() / ratio,
                    (w[0].e_h1_u / w[1].e_h1_u).ln() / ratio,
                    (w[0].e_l2_p / w[1].e_l2_p).ln() / ratio,
                ]
            })
            .collect()
    }

    /// Slopes of the finest refinement step, if at least two rows exist.
    pub fn finest_slopes(&self) -> Option<[f64; 3]> {
        self.slopes().last().copied()
    }

    /// CSV serialization; slope cells are empty on the first row.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(
            w,
            "h,ndof_u,ndof_p,eL2u,eH1u,eL2p,slope_eL2u,slope_eH1u,slope_eL2p,seconds"
        )?;
        let slopes = self.slopes();
        for (i, row) in self.rows.iter().enumerate() {
            let slope_cols = if i == 0 {
                ",,".to_string()
            } else {
                let s = slopes[i - 1];
                format!("{:.16e},{:.16e},{:.16e}", s[0], s[1], s[2])
            };
            writeln!(
                w,
                "{:.16e},{},{},{:.16e},{:.16e},{:.16e},{},{:.16e}",
                row.h,
                row.ndof_u,
                row.ndof_p,
                row.e_l2_u,
                row.e_h1_u,
                row.e_l2_p,
                slope_cols,
                row.seconds
            )?;
        }
        Ok(())
    }
}

/// Domain of a convergence study level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyDomain {
    /// Unit box with `2^(level+1)` subdivisions per side.
    Box,
    /// Ball of radius 1 with `level` refinements.
    Ball,
}

pub fn study_mesh(domain: StudyDomain, level: usize) -> Result<Mesh, MeshError> {
    match domain {
        StudyDomain::Box => {
            let n = 2usize << level;
            crate::mesh::generate_box_mesh([1.0, 1.0, 1.0], [n, n, n])
        }
        StudyDomain::Ball => crate::mesh::generate_ball_mesh(1.0, level),
    }
}

/// Solves a manufactured case on a mesh with Dirichlet data taken from the
/// exact solution and the zero-mean pressure multiplier active.
pub fn solve_manufactured(
    mesh: &Mesh,
    case: &ManufacturedCase,
    form: DivergenceForm,
    operator: OperatorKind,
) -> Result<(VelocityDofMap, PressureDofMap, StokesSolution), SystemError> {
    let vmap = VelocityDofMap::new(mesh);
    let pmap = PressureDofMap::new(mesh);
    let a = assemble_velocity_operator(mesh, &vmap, operator);
    let b = assemble_divergence_operator(mesh, &vmap, &pmap, form);
    let rhs = assemble_rhs(mesh, &vmap, case.force);
    let mut system = build_saddle_system(mesh, a, b, form, rhs, true)?;
    let exact = case.velocity;
    system.apply_dirichlet(mesh, &vmap, &BoundarySpec::new().all_boundary(exact))?;
    let solution = system.solve()?;
    Ok((vmap, pmap, solution))
}

/// Runs a convergence study over `levels` refinement levels. On solver
/// failure the partial table is returned together with the error.
pub fn run_convergence_study(
    case: &ManufacturedCase,
    domain: StudyDomain,
    levels: usize,
    form: DivergenceForm,
    operator: OperatorKind,
) -> (ConvergenceTable, Option<AnalysisError>) {
    let mut table = ConvergenceTable::default();
    for level in 0..levels {
        let start = Instant::now();
        let mesh = match study_mesh(domain, level) {
            Ok(m) => m,
            Err(e) => return (table, Some(e.into())),
        };
        let (vmap, pmap, solution) = match solve_manufactured(&mesh, case, form, operator) {
            Ok(out) => out,
            Err(e) => return (table, Some(e.into())),
        };
        let errors = error_norms(
            &mesh,
            &vmap,
            &pmap,
            &solution.velocity,
            &solution.pressure,
            case,
        );
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
    (table, None)
}

fn free_velocity_dofs(mesh: &Mesh, vmap: &VelocityDofMap) -> Vec<usize> {
    (0..vmap.n_dofs())
        .filter(|&d| !mesh.is_boundary_edge(vmap.edge_of(d)))
        .collect()
}

fn dense_from_sparse(m: &SparseMatrix) -> Mat<f64> {
    let mut out = Mat::zeros(m.nrows(), m.ncols());
    for (r, c, v) in m.iter_triplets() {
        out[(r, c)] = v;
    }
    out
}

/// Smallest eigenvalue of the pencil `(s, g)` with `g` positive definite,
/// via the Cholesky reduction to a standard self-adjoint problem.
fn generalized_eigmin(s: &Mat<f64>, g: &Mat<f64>) -> Result<f64, AnalysisError> {
    let llt = g
        .llt(Side::Lower)
        .map_err(|e| AnalysisError::Eigen(format!("Gram matrix not positive definite: {e:?}")))?;
    let l = llt.L().to_owned();
    let mut work = s.clone();
    solve_lower_triangular_in_place(l.as_ref(), work.as_mut(), Par::Seq);
    let mut reduced = work.transpose().to_owned();
    solve_lower_triangular_in_place(l.as_ref(), reduced.as_mut(), Par::Seq);
    let eigs = reduced
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| AnalysisError::Eigen(format!("eigendecomposition failed: {e:?}")))?;
    eigs.first()
        .copied()
        .ok_or_else(|| AnalysisError::Eigen("empty spectrum".into()))
}

/// Like [`generalized_eigmin`] but also returns the eigenvector of the
/// smallest eigenvalue (in the original, unreduced coordinates).
fn generalized_eig_smallest(
    s: &Mat<f64>,
    g: &Mat<f64>,
) -> Result<(f64, Vec<f64>), AnalysisError> {
    let llt = g
        .llt(Side::Lower)
        .map_err(|e| AnalysisError::Eigen(format!("Gram matrix not positive definite: {e:?}")))?;
    let l = llt.L().to_owned();
    let mut work = s.clone();
    solve_lower_triangular_in_place(l.as_ref(), work.as_mut(), Par::Seq);
    let mut reduced = work.transpose().to_owned();
    solve_lower_triangular_in_place(l.as_ref(), reduced.as_mut(), Par::Seq);
    let evd = reduced
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| AnalysisError::Eigen(format!("eigendecomposition failed: {e:?}")))?;
    let n = s.nrows();
    let mut y = Mat::zeros(n, 1);
    for i in 0..n {
        y[(i, 0)] = evd.U()[(i, 0)];
    }
    // back-substitute the Cholesky change of variables
    solve_upper_triangular_in_place(l.transpose(), y.as_mut(), Par::Seq);
    let value = evd.S()[0];
    Ok((value, (0..n).map(|i| y[(i, 0)]).collect()))
}

/// Numerical inf-sup constant: the square root of the smallest eigenvalue of
/// `B A^-1 B^T q = mu (M + h^2 K) q` over zero-mean pressures, with
/// homogeneous Dirichlet conditions applied to `A`.
pub fn estimate_infsup(mesh: &Mesh, form: DivergenceForm) -> Result<f64, AnalysisError> {
    let report = check_internal_edge_assumption(mesh);
    if !report.pass() {
        return Err(AnalysisError::AssumptionViolated {
            deficient: report.deficient_cells.len(),
            dependent: report.dependent_cells.len(),
        });
    }
    let vmap = VelocityDofMap::new(mesh);
    let pmap = PressureDofMap::new(mesh);
    let n_p = pmap.n_dofs();

    let a = assemble_velocity_operator(mesh, &vmap, OperatorKind::Laplacian);
    let b = assemble_divergence_operator(mesh, &vmap, &pmap, form);
    let free = free_velocity_dofs(mesh, &vmap);
    if free.is_empty() {
        return Err(AnalysisError::Eigen("no interior velocity DOFs".into()));
    }
    let a_ff = a.restricted(&free, &free);
    let all_p: Vec<usize> = (0..n_p).collect();
    let b_f = b.restricted(&all_p, &free);

    // X = A^-1 B^T via a sparse Cholesky factorization of A
    let a_faer = crate::system::sparse_to_faer(&a_ff);
    let chol = a_faer
        .sp_cholesky(Side::Lower)
        .map_err(|e| AnalysisError::Eigen(format!("velocity operator factorization: {e:?}")))?;
    let mut bt = Mat::<f64>::zeros(free.len(), n_p);
    for (q, j, v) in b_f.iter_triplets() {
        bt[(j, q)] = v;
    }
    let x = chol.solve(&bt);

    // S = B_f X, dense in the pressure space
    let mut s = Mat::<f64>::zeros(n_p, n_p);
    for (q, j, v) in b_f.iter_triplets() {
        for col in 0..n_p {
            s[(q, col)] += v * x[(j, col)];
        }
    }

    let h = mesh.h();
    let mass = assemble_pressure_gram(mesh, &pmap, PressureGram::Mass);
    let stiff = assemble_pressure_gram(mesh, &pmap, PressureGram::Stiffness);
    let mut g = dense_from_sparse(&mass);
    for (r, c, v) in stiff.iter_triplets() {
        g[(r, c)] += h * h * v;
    }

    // restrict both forms to the zero-mean subspace
    let m = crate::assembly::pressure_integral_vector(mesh);
    let z = zero_mean_basis(&m);
    let s_z = z.transpose() * &s * &z;
    let g_z = z.transpose() * &g * &z;

    let min = generalized_eigmin(&s_z, &g_z)?;
    Ok(min.max(0.0).sqrt())
}

/// Basis of the zero-mean pressure subspace: `e_i - (m_i / m_0) e_0`.
fn zero_mean_basis(m: &[f64]) -> Mat<f64> {
    let n = m.len();
    let mut z = Mat::<f64>::zeros(n, n - 1);
    for i in 1..n {
        z[(i, i - 1)] = 1.0;
        z[(0, i - 1)] = -m[i] / m[0];
    }
    z
}

/// Discrete Korn constant: smallest eigenvalue of the strain form against
/// the Laplacian on the homogeneous-Dirichlet subspace.
pub fn estimate_korn(mesh: &Mesh) -> Result<f64, AnalysisError> {
    let vmap = VelocityDofMap::new(mesh);
    let lap = assemble_velocity_operator(mesh, &vmap, OperatorKind::Laplacian);
    let strain = assemble_velocity_operator(mesh, &vmap, OperatorKind::Strain);
    let free = free_velocity_dofs(mesh, &vmap);
    if free.is_empty() {
        return Err(AnalysisError::Eigen("no interior velocity DOFs".into()));
    }
    let s = dense_from_sparse(&strain.restricted(&free, &free));
    let g = dense_from_sparse(&lap.restricted(&free, &free));
    generalized_eigmin(&s, &g)
}

/// Korn quotient on a completely unconstrained mesh: rigid rotations are
/// strain-free but not gradient-free, so the smallest eigenvalue is zero and
/// its eigenvector is a rigid motion. Constant fields (the common kernel)
/// are penalized out of both forms.
pub fn estimate_korn_free(mesh: &Mesh) -> Result<(f64, DiscreteField), AnalysisError> {
    let vmap = VelocityDofMap::new(mesh);
    let lap = assemble_velocity_operator(mesh, &vmap, OperatorKind::Laplacian);
    let strain = assemble_velocity_operator(mesh, &vmap, OperatorKind::Strain);
    let n = vmap.n_dofs();
    let mut s = dense_from_sparse(&strain);
    let mut g = dense_from_sparse(&lap);
    let tau = lap.max_abs().max(1.0);
    for comp in 0..3 {
        let mut c = vec![0.0; n];
        for e in 0..vmap.n_edges() {
            c[vmap.dof(e, comp)] = 1.0;
        }
        let norm2: f64 = c.iter().map(|v| v * v).sum();
        for i in 0..n {
            for j in 0..n {
                let p = tau * c[i] * c[j] / norm2;
                s[(i, j)] += p;
                g[(i, j)] += p;
            }
        }
    }
    let (value, vector) = generalized_eig_smallest(&s, &g)?;
    Ok((value, DiscreteField::from_coeffs(vector)))
}

/// The discrete candidate field used in the inf-sup argument: for each
/// interior edge the DOF vector is `-h^2 (t_E . grad q(x_E)) t_E`, with the
/// elementwise-constant gradient averaged over the incident cells (only its
/// tangential part enters, and that part is single-valued along the edge).
/// Boundary-edge DOFs are zero.
pub fn verfurth_candidate(
    mesh: &Mesh,
    vmap: &VelocityDofMap,
    pmap: &PressureDofMap,
    q: &DiscreteField,
) -> DiscreteField {
    let h2 = mesh.h() * mesh.h();
    let mut out = vmap.zero_field();
    for e in 0..mesh.n_edges() {
        if mesh.is_boundary_edge(e) {
            continue;
        }
        let t = mesh.edge_tangent(e);
        let cells = mesh.edge_cells(e);
        let mut grad = [0.0; 3];
        for &c in cells {
            grad = add(grad, pmap.cell_gradient(mesh, q, c));
        }
        grad = scale(grad, 1.0 / cells.len() as f64);
        let coeff = -h2 * dot(t, grad);
        for comp in 0..3 {
            out.coeffs[vmap.dof(e, comp)] = coeff * t[comp];
        }
    }
    out
}

/// Per-edge contributions of the reference-element identity behind the
/// inf-sup computation for the inconsistent form.
#[derive(Debug, Clone)]
pub struct CandidateConstantsReport {
    /// `(t_E . b)^2` per local edge.
    pub tangent_dot_b_sq: [f64; 6],
    /// bulk term per edge; equals `(t_E . b)^2 * 4/9`
    pub bulk: [f64; 6],
    /// boundary term magnitude per edge; equals `(t_E . b)^2 * 4/15`
    pub boundary: [f64; 6],
    /// net contribution per edge; equals `(t_E . b)^2 * 8/45`
    pub total: [f64; 6],
    pub max_bulk_deviation: f64,
    pub max_boundary_deviation: f64,
    pub max_total_deviation: f64,
}

impl CandidateConstantsReport {
    pub fn max_deviation(&self) -> f64 {
        self.max_bulk_deviation
            .max(self.max_boundary_deviation)
            .max(self.max_total_deviation)
    }

    pub fn grand_total(&self) -> f64 {
        self.total.iter().sum()
    }
}

fn ref_face_outward_normal(face: usize) -> Point3 {
    let [a, b, c] = REF_FACES[face].map(|v| REF_VERTICES[v]);
    let n = normalize(cross(sub(b, a), sub(c, a))).expect("reference faces are nondegenerate");
    let centroid = scale(add(add(a, b), c), 1.0 / 3.0);
    let opposite = REF_VERTICES[face];
    if dot(n, sub(centroid, opposite)) >= 0.0 {
        n
    } else {
        scale(n, -1.0)
    }
}

/// Evaluates, on the reference element with the linear pressure `q = b . x`,
/// the bulk, boundary and net per-edge contributions of the inconsistent
/// divergence form applied to the tangent candidate field, and compares them
/// against the closed-form constants `4/9`, `4/15` and `8/45`.
pub fn verify_candidate_constants(b: Point3) -> CandidateConstantsReport {
    let volume_rule = volume_quadrature(4).expect("degree 4 is supported");
    let mut report = CandidateConstantsReport {
        tangent_dot_b_sq: [0.0; 6],
        bulk: [0.0; 6],
        boundary: [0.0; 6],
        total: [0.0; 6],
        max_bulk_deviation: 0.0,
        max_boundary_deviation: 0.0,
        max_total_deviation: 0.0,
    };
    for k in 0..6 {
        let t = ref_edge_tangent(k);
        let tb = dot(t, b);
        let tb2 = tb * tb;
        report.tangent_dot_b_sq[k] = tb2;

        // bulk: (t.b phi_E, t.b)_T = (t.b)^2 int_T phi_E
        let basis_index = EDGE_BASIS[k];
        let phi_integral =
            volume_rule.integrate(|p| crate::element::eval_basis(p)[basis_index]);
        let bulk = tb2 * phi_integral;

        // boundary: -t.b int_{dT} (n . t_E) phi_E (b . x); faces containing
        // the edge contribute nothing since the tangent lies in the face
        let mut g = 0.0;
        for face in 0..4 {
            let [fa, fb, fc] = REF_FACES[face].map(|v| REF_VERTICES[v]);
            let n = ref_face_outward_normal(face);
            let n_dot_t = dot(n, t);
            if REF_FACES[face].contains(&crate::element::REF_EDGES[k].0)
                && REF_FACES[face].contains(&crate::element::REF_EDGES[k].1)
            {
                debug_assert!(n_dot_t.abs() < 1e-14);
                continue;
            }
            let rule = triangle_quadrature(fa, fb, fc, 4).expect("degree 4 is supported");
            g -= tb
                * n_dot_t
                * rule.integrate(|p| crate::element::eval_basis(p)[basis_index] * dot(b, p));
        }
        let boundary_magnitude = -g;
        let total = bulk + g;

        report.bulk[k] = bulk;
        report.boundary[k] = boundary_magnitude;
        report.total[k] = total;
        report.max_bulk_deviation = report
            .max_bulk_deviation
            .max((bulk - tb2 * 4.0 / 9.0).abs());
        report.max_boundary_deviation = report
            .max_boundary_deviation
            .max((boundary_magnitude - tb2 * 4.0 / 15.0).abs());
        report.max_total_deviation = report
            .max_total_deviation
            .max((total - tb2 * 8.0 / 45.0).abs());
    }
    report
}

/// Verifies the face-Jacobian identity relating the physical and reference
/// normal-tangent pairings: both sides are computed independently and the
/// relative difference is returned.
pub fn verify_face_jacobian_identity(
    mesh: &Mesh,
    cell: usize,
    local_edge: usize,
    local_face: usize,
) -> Result<f64, AnalysisError> {
    assert!(local_edge < 6 && local_face < 4);
    let map = mesh.affine_map(cell)?;
    let a = map.matrix();

    let t_hat = ref_edge_tangent(local_edge);
    let a_t = a.mul_vec(t_hat);
    let stretch = norm(a_t);
    let t_phys = scale(a_t, 1.0 / stretch);

    let ref_verts = REF_FACES[local_face].map(|v| REF_VERTICES[v]);
    let ref_area = crate::geometry::triangle_area(ref_verts[0], ref_verts[1], ref_verts[2]);
    let n_hat = ref_face_outward_normal(local_face);

    let phys_verts = ref_verts.map(|v| map.apply(v));
    let phys_area =
        crate::geometry::triangle_area(phys_verts[0], phys_verts[1], phys_verts[2]);
    let n_phys = {
        let n = normalize(cross(
            sub(phys_verts[1], phys_verts[0]),
            sub(phys_verts[2], phys_verts[0]),
        ))
        .expect("mapped faces are nondegenerate");
        let centroid = scale(add(add(phys_verts[0], phys_verts[1]), phys_verts[2]), 1.0 / 3.0);
        let opposite = map.apply(REF_VERTICES[local_face]);
        if dot(n, sub(centroid, opposite)) >= 0.0 {
            n
        } else {
            scale(n, -1.0)
        }
    };

    // left side from physical geometry, right side from the reference
    // element and the map; |T| / |T_ref| = |det A|
    let lhs = dot(n_phys, t_phys) * (phys_area / ref_area);
    let rhs = map.det().abs() * dot(n_hat, t_hat) / stretch;
    // normalize by the natural magnitude of the two sides (the normal-tangent
    // factor replaced by one), so edge-in-face cases compare as zero
    let scale = (phys_area / ref_area) + map.det().abs() / stretch;
    Ok((lhs - rhs).abs() / scale.max(1e-300))
}
