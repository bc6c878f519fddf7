//! Element-level and global assembly of the bilinear forms and load vectors.
//!
//! Element matrices are computed independently per cell (in parallel) and
//! merged into triplet storage in cell-index order, so assembled operators
//! are bitwise reproducible for a fixed input regardless of thread count.
//!
//! Sign convention, fixed here once: the divergence coupling `B` is
//! assembled so that the saddle-point system reads
//!
//! ```text
//! [ A  B^T ] [u]   [f]
//! [ B   0  ] [p] = [g]
//! ```
//!
//! with the momentum row `A u + B^T p = f` matching the weak form
//! `a(u,v) - b(v,p) = (f,v)`. Concretely `B[q, v] = sum_T (v, grad q)_T` for
//! the pressure-consistent form and `B[q, v] = -sum_T (div v, q)_T` for the
//! inconsistent form; the two agree on conforming fields that vanish on the
//! boundary.

use crate::element::{
    eval_basis, eval_basis_grad, eval_p1_basis, eval_p1_grad, volume_quadrature, QuadratureRule,
    EDGE_BASIS,
};
use crate::geometry::{dot, Point3};
use crate::mesh::Mesh;
use crate::spaces::{PressureDofMap, VelocityDofMap};
use rayon::prelude::*;
use std::io::{self, Write};

/// Velocity-velocity operator: componentwise Laplacian or the strain form
/// `2 (eps(u), eps(v))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Laplacian,
    Strain,
}

/// Divergence coupling: pressure-consistent `b` or the plain elementwise
/// (pressure-inconsistent) variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergenceForm {
    Consistent,
    Tilde,
}

/// Pressure Gram matrices realizing the two pressure pieces of the triple
/// norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PressureGram {
    Mass,
    Stiffness,
}

/// Compressed sparse row matrix with deterministic construction.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    symmetric: bool,
}

impl SparseMatrix {
    /// Builds a CSR matrix from triplets. Duplicates are merged after a
    /// stable sort, so values accumulate in insertion (cell) order.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
        symmetric: bool,
    ) -> SparseMatrix {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_counts = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut i = 0;
        while i < triplets.len() {
            let (r, c, mut v) = triplets[i];
            debug_assert!(r < nrows && c < ncols);
            let mut j = i + 1;
            while j < triplets.len() && triplets[j].0 == r && triplets[j].1 == c {
                v += triplets[j].2;
                j += 1;
            }
            row_counts[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
            i = j;
        }
        for r in 0..nrows {
            row_counts[r + 1] += row_counts[r];
        }
        SparseMatrix {
            nrows,
            ncols,
            row_ptr: row_counts,
            col_idx,
            values,
            symmetric,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_symmetric_flagged(&self) -> bool {
        self.symmetric
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum()
            })
            .collect()
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                y[c] += v * x[r];
            }
        }
        y
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                triplets.push((c, r, v));
            }
        }
        SparseMatrix::from_triplets(self.ncols, self.nrows, triplets, self.symmetric)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest absolute entry of `A - A^T`.
    pub fn symmetry_max_diff(&self) -> f64 {
        assert_eq!(self.nrows, self.ncols);
        let t = self.transpose();
        let mut max = 0.0f64;
        for r in 0..self.nrows {
            let (ca, va) = self.row(r);
            let (cb, vb) = t.row(r);
            let mut ia = 0;
            let mut ib = 0;
            while ia < ca.len() || ib < cb.len() {
                let next_a = ca.get(ia).copied();
                let next_b = cb.get(ib).copied();
                match (next_a, next_b) {
                    (Some(c1), Some(c2)) if c1 == c2 => {
                        max = max.max((va[ia] - vb[ib]).abs());
                        ia += 1;
                        ib += 1;
                    }
                    (Some(c1), Some(c2)) if c1 < c2 => {
                        max = max.max(va[ia].abs());
                        ia += 1;
                    }
                    (Some(_), Some(_)) => {
                        max = max.max(vb[ib].abs());
                        ib += 1;
                    }
                    (Some(_), None) => {
                        max = max.max(va[ia].abs());
                        ia += 1;
                    }
                    (None, Some(_)) => {
                        max = max.max(vb[ib].abs());
                        ib += 1;
                    }
                    (None, None) => break,
                }
            }
        }
        max
    }

    /// Submatrix keeping the given rows and columns, renumbered in order.
    pub fn restricted(&self, rows: &[usize], cols: &[usize]) -> SparseMatrix {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (new, &old) in cols.iter().enumerate() {
            col_map[old] = new;
        }
        let mut triplets = Vec::new();
        for (new_r, &old_r) in rows.iter().enumerate() {
            let (cs, vs) = self.row(old_r);
            for (&c, &v) in cs.iter().zip(vs) {
                if col_map[c] != usize::MAX {
                    triplets.push((new_r, col_map[c], v));
                }
            }
        }
        SparseMatrix::from_triplets(rows.len(), cols.len(), triplets, self.symmetric)
    }

    pub fn iter_triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            let span = self.row_ptr[r]..self.row_ptr[r + 1];
            span.map(move |k| (r, self.col_idx[k], self.values[k]))
        })
    }

    /// Writes the matrix in MatrixMarket coordinate format (1-based).
    pub fn write_matrix_market<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (r, c, v) in self.iter_triplets() {
            writeln!(w, "{} {} {:.16e}", r + 1, c + 1, v)?;
        }
        Ok(())
    }
}

/// Basis data tabulated at the points of a quadrature rule, in local edge
/// order (so scatter code indexes cell edges directly).
struct RuleData {
    points: Vec<Point3>,
    weights: Vec<f64>,
    phi: Vec<[f64; 6]>,
    grad_phi: Vec<[Point3; 6]>,
    lambda: Vec<[f64; 4]>,
}

impl RuleData {
    fn new(rule: &QuadratureRule) -> RuleData {
        let phi = rule
            .points
            .iter()
            .map(|&p| {
                let b = eval_basis(p);
                let mut out = [0.0; 6];
                for (k, slot) in out.iter_mut().enumerate() {
                    *slot = b[EDGE_BASIS[k]];
                }
                out
            })
            .collect();
        let grad_phi = rule
            .points
            .iter()
            .map(|&p| {
                let g = eval_basis_grad(p);
                let mut out = [[0.0; 3]; 6];
                for (k, slot) in out.iter_mut().enumerate() {
                    *slot = g[EDGE_BASIS[k]];
                }
                out
            })
            .collect();
        let lambda = rule.points.iter().map(|&p| eval_p1_basis(p)).collect();
        RuleData {
            points: rule.points.clone(),
            weights: rule.weights.clone(),
            phi,
            grad_phi,
            lambda,
        }
    }
}

fn default_rule() -> QuadratureRule {
    // operator integrands have degree <= 2; degree 4 adds safety margin at
    // negligible cost, and the load integrand degree is unknown
    volume_quadrature(4).expect("degree 4 is supported")
}

/// Assembles the velocity-velocity operator (`3 |edges|` square, symmetric)
/// with the default degree-4 rule.
pub fn assemble_velocity_operator(
    mesh: &Mesh,
    vmap: &VelocityDofMap,
    kind: OperatorKind,
) -> SparseMatrix {
    assemble_velocity_operator_with_rule(mesh, vmap, kind, &default_rule())
}

pub fn assemble_velocity_operator_with_rule(
    mesh: &Mesh,
    vmap: &VelocityDofMap,
    kind: OperatorKind,
    rule: &QuadratureRule,
) -> SparseMatrix {
    let data = RuleData::new(rule);
    let locals: Vec<Box<[[f64; 18]; 18]>> = (0..mesh.n_cells())
        .into_par_iter()
        .map(|c| local_velocity_operator(mesh, c, kind, &data))
        .collect();

    let mut triplets = Vec::with_capacity(locals.len() * 18 * 18);
    for (c, local) in locals.iter().enumerate() {
        let edges = mesh.cell_edges(c);
        for k in 0..6 {
            for a in 0..3 {
                let row = vmap.dof(edges[k], a);
                for l in 0..6 {
                    for b in 0..3 {
                        let v = local[3 * k + a][3 * l + b];
                        if v != 0.0 {
                            triplets.push((row, vmap.dof(edges[l], b), v));
                        }
                    }
                }
            }
        }
    }
    SparseMatrix::from_triplets(vmap.n_dofs(), vmap.n_dofs(), triplets, true)
}

fn local_velocity_operator(
    mesh: &Mesh,
    cell: usize,
    kind: OperatorKind,
    data: &RuleData,
) -> Box<[[f64; 18]; 18]> {
    let map = mesh
        .affine_map(cell)
        .expect("built meshes are nondegenerate");
    let det = map.det().abs();
    let mut out = Box::new([[0.0; 18]; 18]);
    for (q, &w) in data.weights.iter().enumerate() {
        let scale = w * det;
        let mut g = [[0.0; 3]; 6];
        for (gk, ghat) in g.iter_mut().zip(data.grad_phi[q].iter()) {
            *gk = map.push_gradient(*ghat);
        }
        match kind {
            OperatorKind::Laplacian => {
                for k in 0..6 {
                    for l in 0..6 {
                        let val = scale * dot(g[k], g[l]);
                        for a in 0..3 {
                            out[3 * k + a][3 * l + a] += val;
                        }
                    }
                }
            }
            OperatorKind::Strain => {
                // 2 eps(phi_k e_a) : eps(phi_l e_b)
                //   = delta_ab grad_k . grad_l + (grad_k)_b (grad_l)_a
                for k in 0..6 {
                    for l in 0..6 {
                        let gg = dot(g[k], g[l]);
                        for a in 0..3 {
                            for b in 0..3 {
                                let mut val = g[k][b] * g[l][a];
                                if a == b {
                                    val += gg;
                                }
                                out[3 * k + a][3 * l + b] += scale * val;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Assembles the divergence coupling `B` (rows: pressure DOFs, columns:
/// velocity DOFs) with the default degree-4 rule.
pub fn assemble_divergence_operator(
    mesh: &Mesh,
    vmap: &VelocityDofMap,
    pmap: &PressureDofMap,
    form: DivergenceForm,
) -> SparseMatrix {
    assemble_divergence_operator_with_rule(mesh, vmap, pmap, form, &default_rule())
}

pub fn assemble_divergence_operator_with_rule(
    mesh: &Mesh,
    vmap: &VelocityDofMap,
    pmap: &PressureDofMap,
    form: DivergenceForm,
    rule: &QuadratureRule,
) -> SparseMatrix {
    let data = RuleData::new(rule);
    let locals: Vec<[[f64; 18]; 4]> = (0..mesh.n_cells())
        .into_par_iter()
        .map(|c| local_divergence(mesh, c, form, &data))
        .collect();

    let mut triplets = Vec::with_capacity(locals.len() * 4 * 18);
    for (c, local) in locals.iter().enumerate() {
        let edges = mesh.cell_edges(c);
        let verts = mesh.cell(c);
        for (lv, row_block) in local.iter().enumerate() {
            let row = verts[lv];
            for k in 0..6 {
                for a in 0..3 {
                    let v = row_block[3 * k + a];
                    if v != 0.0 {
                        triplets.push((row, vmap.dof(edges[k], a), v));
                    }
                }
            }
        }
    }
    SparseMatrix::from_triplets(pmap.n_dofs(), vmap.n_dofs(), triplets, false)
}

fn local_divergence(
    mesh: &Mesh,
    cell: usize,
    form: DivergenceForm,
    data: &RuleData,
) -> [[f64; 18]; 4] {
    let map = mesh
        .affine_map(cell)
        .expect("built meshes are nondegenerate");
    let det = map.det().abs();
    let mut grad_lambda = [[0.0; 3]; 4];
    for (g, ghat) in grad_lambda.iter_mut().zip(eval_p1_grad().iter()) {
        *g = map.push_gradient(*ghat);
    }
    let mut out = [[0.0; 18]; 4];
    for (q, &w) in data.weights.iter().enumerate() {
        let scale = w * det;
        match form {
            DivergenceForm::Consistent => {
                // B[q, (k,a)] += int_T phi_k (grad lambda_q)_a
                for lv in 0..4 {
                    for k in 0..6 {
                        let phi = data.phi[q][k];
                        for a in 0..3 {
                            out[lv][3 * k + a] += scale * phi * grad_lambda[lv][a];
                        }
                    }
                }
            }
            DivergenceForm::Tilde => {
                // B[q, (k,a)] -= int_T (d_a phi_k) lambda_q
                let mut g = [[0.0; 3]; 6];
                for (gk, ghat) in g.iter_mut().zip(data.grad_phi[q].iter()) {
                    *gk = map.push_gradient(*ghat);
                }
                for lv in 0..4 {
                    let lam = data.lambda[q][lv];
                    for k in 0..6 {
                        for a in 0..3 {
                            out[lv][3 * k + a] -= scale * g[k][a] * lam;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Assembles the load vector `(f, v)` with the default degree-4 rule.
pub fn assemble_rhs(
    mesh: &Mesh,
    vmap: &VelocityDofMap,
    f: impl Fn(Point3) -> [f64; 3] + Sync,
) -> Vec<f64> {
    let rule = default_rule();
    let data = RuleData::new(&rule);
    let locals: Vec<[f64; 18]> = (0..mesh.n_cells())
        .into_par_iter()
        .map(|c| {
            let map = mesh
                .affine_map(c)
                .expect("built meshes are nondegenerate");
            let det = map.det().abs();
            let mut out = [0.0; 18];
            for (q, &w) in data.weights.iter().enumerate() {
                let x = map.apply(data.points[q]);
                let fx = f(x);
                for k in 0..6 {
                    let phi = data.phi[q][k];
                    for a in 0..3 {
                        out[3 * k + a] += w * det * phi * fx[a];
                    }
                }
            }
            out
        })
        .collect();

    let mut rhs = vec![0.0; vmap.n_dofs()];
    for (c, local) in locals.iter().enumerate() {
        let edges = mesh.cell_edges(c);
        for k in 0..6 {
            for a in 0..3 {
                rhs[vmap.dof(edges[k], a)] += local[3 * k + a];
            }
        }
    }
    rhs
}

/// `int_Omega lambda_q` per pressure DOF, computed exactly as `|T| / 4` per
/// incident cell. These are the entries of the zero-mean constraint row.
pub fn pressure_integral_vector(mesh: &Mesh) -> Vec<f64> {
    let mut m = vec![0.0; mesh.n_vertices()];
    for c in 0..mesh.n_cells() {
        let quarter = mesh.cell_volume(c) / 4.0;
        for &v in &mesh.cell(c) {
            m[v] += quarter;
        }
    }
    m
}

/// Assembles the pressure mass (`int lambda_i lambda_j`) or stiffness
/// (`int grad lambda_i . grad lambda_j`) matrix.
pub fn assemble_pressure_gram(
    mesh: &Mesh,
    pmap: &PressureDofMap,
    kind: PressureGram,
) -> SparseMatrix {
    let rule = volume_quadrature(2).expect("degree 2 is supported");
    let data = RuleData::new(&rule);
    let locals: Vec<[[f64; 4]; 4]> = (0..mesh.n_cells())
        .into_par_iter()
        .map(|c| {
            let map = mesh
                .affine_map(c)
                .expect("built meshes are nondegenerate");
            let det = map.det().abs();
            let mut out = [[0.0; 4]; 4];
            match kind {
                PressureGram::Mass => {
                    for (q, &w) in data.weights.iter().enumerate() {
                        for i in 0..4 {
                            for j in 0..4 {
                                out[i][j] += w * det * data.lambda[q][i] * data.lambda[q][j];
                            }
                        }
                    }
                }
                PressureGram::Stiffness => {
                    let mut g = [[0.0; 3]; 4];
                    for (gi, ghat) in g.iter_mut().zip(eval_p1_grad().iter()) {
                        *gi = map.push_gradient(*ghat);
                    }
                    let vol = map.cell_volume();
                    for i in 0..4 {
                        for j in 0..4 {
                            out[i][j] += vol * dot(g[i], g[j]);
                        }
                    }
                }
            }
            out
        })
        .collect();

    let mut triplets = Vec::with_capacity(locals.len() * 16);
    for (c, local) in locals.iter().enumerate() {
        let verts = mesh.cell(c);
        for (i, row_block) in local.iter().enumerate() {
            for (j, &v) in row_block.iter().enumerate() {
                triplets.push((verts[i], verts[j], v));
            }
        }
    }
    SparseMatrix::from_triplets(pmap.n_dofs(), pmap.n_dofs(), triplets, true)
}
