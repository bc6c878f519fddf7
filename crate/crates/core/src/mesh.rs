//! Tetrahedral meshes: generation, derived topology (faces, edges, midpoints,
//! boundary flags) and per-cell affine maps onto the reference tetrahedron.
//!
//! A mesh is immutable once built; all derived data is computed by
//! [`build_topology`]. Cells are reordered at build time so every signed
//! volume is positive, which makes `det > 0` a global invariant of the
//! affine maps.

use crate::element::{REF_EDGES, REF_VERTICES, REF_VOLUME};
use crate::geometry::{
    add, cross, dist, dot, midpoint, norm, normalize, scale, sub, Mat3, Point3,
};
use std::collections::HashMap;
use std::io::{self, BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("cell {cell} references vertex {index} out of range")]
    InvalidVertexIndex { cell: usize, index: usize },
    #[error("cell {cell} is degenerate (zero volume)")]
    DegenerateCell { cell: usize },
    #[error("duplicate cell {cell}")]
    DuplicateCell { cell: usize },
    #[error("non-manifold face {face:?} (more than two incident cells)")]
    NonManifoldFace { face: [usize; 3] },
    #[error("boundary is not closed at edge {edge}")]
    BoundaryNotClosed { edge: usize },
    #[error("cell {cell} has a singular affine map")]
    SingularMap { cell: usize },
    #[error("mesh file, line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Tetrahedral mesh with derived topology.
#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Point3>,
    cells: Vec<[usize; 4]>,
    faces: Vec<[usize; 3]>,
    face_cells: Vec<(usize, Option<usize>)>,
    face_edges: Vec<[usize; 3]>,
    edges: Vec<(usize, usize)>,
    edge_midpoints: Vec<Point3>,
    edge_cells: Vec<Vec<usize>>,
    cell_edges: Vec<[usize; 6]>,
    boundary_edge: Vec<bool>,
    boundary_vertex: Vec<bool>,
    h: f64,
}

impl Mesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertex(&self, v: usize) -> Point3 {
        self.vertices[v]
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn cell(&self, c: usize) -> [usize; 4] {
        self.cells[c]
    }

    pub fn cells(&self) -> &[[usize; 4]] {
        &self.cells
    }

    pub fn cell_vertices(&self, c: usize) -> [Point3; 4] {
        self.cells[c].map(|v| self.vertices[v])
    }

    pub fn face(&self, f: usize) -> [usize; 3] {
        self.faces[f]
    }

    pub fn face_vertices(&self, f: usize) -> [Point3; 3] {
        self.faces[f].map(|v| self.vertices[v])
    }

    /// Incident cells of a face; interior faces have two, boundary faces one.
    pub fn face_cells(&self, f: usize) -> (usize, Option<usize>) {
        self.face_cells[f]
    }

    /// Global edge indices of the three edges of face `f`.
    pub fn face_edges(&self, f: usize) -> [usize; 3] {
        self.face_edges[f]
    }

    pub fn edge(&self, e: usize) -> (usize, usize) {
        self.edges[e]
    }

    pub fn edge_midpoint(&self, e: usize) -> Point3 {
        self.edge_midpoints[e]
    }

    /// Unit tangent of edge `e`, oriented from the lower to the higher global
    /// vertex index. Degrees of freedom are point values, so no per-cell sign
    /// bookkeeping is needed.
    pub fn edge_tangent(&self, e: usize) -> Point3 {
        let (a, b) = self.edges[e];
        normalize(sub(self.vertices[b], self.vertices[a])).expect("edges are nondegenerate")
    }

    /// Cells incident on edge `e`.
    pub fn edge_cells(&self, e: usize) -> &[usize] {
        &self.edge_cells[e]
    }

    /// Global edge indices of cell `c`, in the local lexicographic vertex-pair
    /// order of [`REF_EDGES`].
    pub fn cell_edges(&self, c: usize) -> [usize; 6] {
        self.cell_edges[c]
    }

    pub fn is_boundary_face(&self, f: usize) -> bool {
        self.face_cells[f].1.is_none()
    }

    pub fn is_boundary_edge(&self, e: usize) -> bool {
        self.boundary_edge[e]
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }

    pub fn boundary_faces(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.faces.len()).filter(|&f| self.is_boundary_face(f))
    }

    /// Mesh parameter: the maximum cell diameter.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn cell_volume(&self, c: usize) -> f64 {
        signed_volume(&self.cell_vertices(c)).abs()
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.n_cells()).map(|c| self.cell_volume(c)).sum()
    }

    pub fn cell_centroid(&self, c: usize) -> Point3 {
        let [a, b, cc, d] = self.cell_vertices(c);
        scale(add(add(a, b), add(cc, d)), 0.25)
    }

    /// Unit normal of face `f` pointing out of cell `cell`.
    pub fn outward_face_normal(&self, f: usize, cell: usize) -> Point3 {
        let [a, b, c] = self.face_vertices(f);
        let n = normalize(cross(sub(b, a), sub(c, a))).expect("faces are nondegenerate");
        let fc = scale(add(add(a, b), c), 1.0 / 3.0);
        if dot(n, sub(fc, self.cell_centroid(cell))) >= 0.0 {
            n
        } else {
            scale(n, -1.0)
        }
    }

    /// Locates the cell containing a physical point (within a barycentric
    /// tolerance of 1e-10) and returns the reference coordinates.
    pub fn locate_point(&self, x: Point3) -> Option<(usize, Point3)> {
        const TOL: f64 = 1e-10;
        for c in 0..self.n_cells() {
            let vs = self.cell_vertices(c);
            let mut inside_box = true;
            for a in 0..3 {
                let lo = vs.iter().map(|v| v[a]).fold(f64::INFINITY, f64::min);
                let hi = vs.iter().map(|v| v[a]).fold(f64::NEG_INFINITY, f64::max);
                let pad = TOL + 1e-12 * (hi - lo).abs();
                if x[a] < lo - pad || x[a] > hi + pad {
                    inside_box = false;
                    break;
                }
            }
            if !inside_box {
                continue;
            }
            let map = self.affine_map(c).ok()?;
            let xhat = map.pull_back(x);
            let bary = crate::element::eval_p1_basis(xhat);
            if bary.iter().all(|&l| l >= -TOL) {
                return Some((c, xhat));
            }
        }
        None
    }

    /// Affine map of cell `c`: `F(xhat) = A xhat + x_T` with `x_T` the cell
    /// centroid, mapping the reference vertices onto the cell vertices.
    pub fn affine_map(&self, c: usize) -> Result<AffineMap, MeshError> {
        AffineMap::for_cell(&self.cell_vertices(c)).ok_or(MeshError::SingularMap { cell: c })
    }

    /// Full invariant check, used by tests and `mesh --check`.
    pub fn validate(&self) -> Result<(), MeshError> {
        for c in 0..self.n_cells() {
            if signed_volume(&self.cell_vertices(c)) <= 0.0 {
                return Err(MeshError::DegenerateCell { cell: c });
            }
            let map = self.affine_map(c)?;
            for (k, &(a, b)) in REF_EDGES.iter().enumerate() {
                let ref_mid = midpoint(REF_VERTICES[a], REF_VERTICES[b]);
                let mapped = map.apply(ref_mid);
                let e = self.cell_edges[c][k];
                if dist(mapped, self.edge_midpoints[e]) > 1e-12 * (1.0 + self.h) {
                    return Err(MeshError::InvalidArgument(format!(
                        "affine map of cell {c} does not reproduce midpoint of edge {e}"
                    )));
                }
            }
        }
        // boundary faces must close up: every boundary edge on exactly two
        for e in 0..self.n_edges() {
            if !self.boundary_edge[e] {
                continue;
            }
            let count = (0..self.n_faces())
                .filter(|&f| self.is_boundary_face(f) && self.face_edges[f].contains(&e))
                .count();
            if count != 2 {
                return Err(MeshError::BoundaryNotClosed { edge: e });
            }
        }
        Ok(())
    }
}

/// The affine map `F(xhat) = A xhat + x_T` from the reference tetrahedron to
/// a physical cell.
#[derive(Debug, Clone)]
pub struct AffineMap {
    matrix: Mat3,
    translation: Point3,
    det: f64,
    inverse: Mat3,
    inverse_transpose: Mat3,
}

impl AffineMap {
    fn for_cell(vertices: &[Point3; 4]) -> Option<AffineMap> {
        // A [v0-v3, v1-v3, v2-v3]_ref = [p0-p3, p1-p3, p2-p3]
        let ref_edges = Mat3::from_cols(
            sub(REF_VERTICES[0], REF_VERTICES[3]),
            sub(REF_VERTICES[1], REF_VERTICES[3]),
            sub(REF_VERTICES[2], REF_VERTICES[3]),
        );
        let phys_edges = Mat3::from_cols(
            sub(vertices[0], vertices[3]),
            sub(vertices[1], vertices[3]),
            sub(vertices[2], vertices[3]),
        );
        let a = phys_edges.mul_mat(&ref_edges.inverse()?);
        let det = a.det();
        let scale_cubed: f64 = {
            let s = (0..3).map(|j| norm(a.col(j))).fold(0.0f64, f64::max);
            (s * s * s).max(f64::MIN_POSITIVE)
        };
        if !det.is_finite() || det.abs() <= 1e-14 * scale_cubed {
            return None;
        }
        let inverse = a.inverse()?;
        let centroid = scale(
            add(add(vertices[0], vertices[1]), add(vertices[2], vertices[3])),
            0.25,
        );
        Some(AffineMap {
            matrix: a,
            translation: centroid,
            det,
            inverse_transpose: inverse.transpose(),
            inverse,
        })
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.matrix
    }

    /// The translation part; the physical cell centroid, since the reference
    /// centroid is the origin.
    pub fn translation(&self) -> Point3 {
        self.translation
    }

    pub fn det(&self) -> f64 {
        self.det
    }

    /// `|T| = |det A| |T_ref|`.
    pub fn cell_volume(&self) -> f64 {
        self.det.abs() * REF_VOLUME
    }

    pub fn apply(&self, xhat: Point3) -> Point3 {
        add(self.matrix.mul_vec(xhat), self.translation)
    }

    pub fn pull_back(&self, x: Point3) -> Point3 {
        self.inverse.mul_vec(sub(x, self.translation))
    }

    /// Transforms a reference gradient to a physical gradient via `A^{-T}`.
    pub fn push_gradient(&self, ghat: Point3) -> Point3 {
        self.inverse_transpose.mul_vec(ghat)
    }
}

fn signed_volume(v: &[Point3; 4]) -> f64 {
    dot(sub(v[1], v[0]), cross(sub(v[2], v[0]), sub(v[3], v[0]))) / 6.0
}

/// Builds the full topology from raw vertices and cells.
///
/// Cells are flipped to positive orientation where needed. Errors on invalid
/// vertex references, degenerate or duplicate cells, and non-manifold faces.
pub fn build_topology(vertices: Vec<Point3>, cells: Vec<[usize; 4]>) -> Result<Mesh, MeshError> {
    let n_vertices = vertices.len();
    let mut cells = cells;

    let mut seen = HashMap::new();
    for (c, cell) in cells.iter_mut().enumerate() {
        for &v in cell.iter() {
            if v >= n_vertices {
                return Err(MeshError::InvalidVertexIndex { cell: c, index: v });
            }
        }
        let vs = cell.map(|v| vertices[v]);
        let vol = signed_volume(&vs);
        let max_edge = REF_EDGES
            .iter()
            .map(|&(i, j)| dist(vs[i], vs[j]))
            .fold(0.0f64, f64::max);
        if vol.abs() <= 1e-14 * max_edge.powi(3) {
            return Err(MeshError::DegenerateCell { cell: c });
        }
        if vol < 0.0 {
            cell.swap(2, 3);
        }
        let mut key = *cell;
        key.sort_unstable();
        if seen.insert(key, c).is_some() {
            return Err(MeshError::DuplicateCell { cell: c });
        }
    }

    // edges, discovered in cell order / local lexicographic order
    let mut edge_index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut edge_cells: Vec<Vec<usize>> = Vec::new();
    let mut cell_edges = vec![[0usize; 6]; cells.len()];
    for (c, cell) in cells.iter().enumerate() {
        for (k, &(i, j)) in REF_EDGES.iter().enumerate() {
            let (a, b) = (cell[i].min(cell[j]), cell[i].max(cell[j]));
            let e = *edge_index.entry((a, b)).or_insert_with(|| {
                edges.push((a, b));
                edge_cells.push(Vec::new());
                edges.len() - 1
            });
            cell_edges[c][k] = e;
            edge_cells[e].push(c);
        }
    }

    // faces
    let mut face_index: HashMap<[usize; 3], usize> = HashMap::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut face_cells: Vec<(usize, Option<usize>)> = Vec::new();
    for (c, cell) in cells.iter().enumerate() {
        for omit in 0..4 {
            let mut tri = [0usize; 3];
            let mut idx = 0;
            for (i, &v) in cell.iter().enumerate() {
                if i != omit {
                    tri[idx] = v;
                    idx += 1;
                }
            }
            tri.sort_unstable();
            match face_index.get(&tri) {
                Some(&f) => {
                    if face_cells[f].1.is_some() {
                        return Err(MeshError::NonManifoldFace { face: tri });
                    }
                    face_cells[f].1 = Some(c);
                }
                None => {
                    face_index.insert(tri, faces.len());
                    faces.push(tri);
                    face_cells.push((c, None));
                }
            }
        }
    }

    let face_edges: Vec<[usize; 3]> = faces
        .iter()
        .map(|&[a, b, c]| {
            let look = |x: usize, y: usize| edge_index[&(x.min(y), x.max(y))];
            [look(a, b), look(a, c), look(b, c)]
        })
        .collect();

    let mut boundary_edge = vec![false; edges.len()];
    let mut boundary_vertex = vec![false; n_vertices];
    for (f, &(_, second)) in face_cells.iter().enumerate() {
        if second.is_none() {
            for &e in &face_edges[f] {
                boundary_edge[e] = true;
            }
            for &v in &faces[f] {
                boundary_vertex[v] = true;
            }
        }
    }

    let edge_midpoints = edges
        .iter()
        .map(|&(a, b)| midpoint(vertices[a], vertices[b]))
        .collect();

    let h = cells
        .iter()
        .map(|cell| {
            REF_EDGES
                .iter()
                .map(|&(i, j)| dist(vertices[cell[i]], vertices[cell[j]]))
                .fold(0.0f64, f64::max)
        })
        .fold(0.0f64, f64::max);

    Ok(Mesh {
        vertices,
        cells,
        faces,
        face_cells,
        face_edges,
        edges,
        edge_midpoints,
        edge_cells,
        cell_edges,
        boundary_edge,
        boundary_vertex,
        h,
    })
}

/// All six permutations of the axes, fixed order; each yields one Kuhn cell.
const KUHN_PERMS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// Kuhn cells of the sub-box at grid position `(i, j, k)`, mirrored per axis
/// by index parity. The mirroring keeps the subdivision conforming while
/// anchoring every sub-box diagonal at an even lattice corner, which is what
/// gives interior cells along the boundary their three internal edges.
fn kuhn_cells(
    pos: [usize; 3],
    vid: &impl Fn(usize, usize, usize) -> usize,
    cells: &mut Vec<[usize; 4]>,
) {
    let start = pos.map(|i| if i % 2 == 0 { i } else { i + 1 });
    let dir = pos.map(|i| if i % 2 == 0 { 1isize } else { -1 });
    for perm in KUHN_PERMS {
        let mut p = start;
        let mut cell = [vid(p[0], p[1], p[2]), 0, 0, 0];
        for (step, &axis) in perm.iter().enumerate() {
            p[axis] = (p[axis] as isize + dir[axis]) as usize;
            cell[step + 1] = vid(p[0], p[1], p[2]);
        }
        cells.push(cell);
    }
}

/// Structured mesh of the box `(0, extent[0]) x (0, extent[1]) x
/// (0, extent[2])`: each sub-box is split into six tetrahedra sharing the
/// main diagonal (Kuhn subdivision), which is conforming across sub-boxes.
pub fn generate_box_mesh(extent: [f64; 3], subdivisions: [usize; 3]) -> Result<Mesh, MeshError> {
    for &l in &extent {
        if l.is_nan() || l <= 0.0 || !l.is_finite() {
            return Err(MeshError::InvalidArgument(format!(
                "box extent must be positive, got {extent:?}"
            )));
        }
    }
    for &n in &subdivisions {
        if n == 0 {
            return Err(MeshError::InvalidArgument(format!(
                "subdivisions must be at least 1, got {subdivisions:?}"
            )));
        }
    }
    let [nx, ny, nz] = subdivisions;
    let vid = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                // i/n is exact at the endpoints, so the bounding box is exact
                vertices.push([
                    extent[0] * (i as f64 / nx as f64),
                    extent[1] * (j as f64 / ny as f64),
                    extent[2] * (k as f64 / nz as f64),
                ]);
            }
        }
    }

    let mut cells = Vec::with_capacity(6 * nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                kuhn_cells([i, j, k], &vid, &mut cells);
            }
        }
    }
    build_topology(vertices, cells)
}

/// Mesh of the ball of the given radius centred at the origin.
///
/// A Kuhn-subdivided cube `[-1,1]^3` with `2^(refinement+1)` subdivisions per
/// side is mapped radially: a vertex on the max-norm shell `m` moves to the
/// sphere of radius `radius * m`, so boundary vertices land exactly on the
/// sphere and interior vertices are blended towards the centre.
pub fn generate_ball_mesh(radius: f64, refinement: usize) -> Result<Mesh, MeshError> {
    if radius.is_nan() || radius <= 0.0 || !radius.is_finite() {
        return Err(MeshError::InvalidArgument(format!(
            "ball radius must be positive, got {radius}"
        )));
    }
    let n = 2usize << refinement;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1) * (n + 1));
    for k in 0..=n {
        for j in 0..=n {
            for i in 0..=n {
                let c = [
                    2.0 * (i as f64 / n as f64) - 1.0,
                    2.0 * (j as f64 / n as f64) - 1.0,
                    2.0 * (k as f64 / n as f64) - 1.0,
                ];
                let sup = c[0].abs().max(c[1].abs()).max(c[2].abs());
                if sup < 1e-14 {
                    vertices.push([0.0, 0.0, 0.0]);
                } else {
                    let r = norm(c);
                    vertices.push(scale(c, radius * sup / r));
                }
            }
        }
    }
    let vid = |i: usize, j: usize, k: usize| i + (n + 1) * (j + (n + 1) * k);
    let mut cells = Vec::with_capacity(6 * n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                kuhn_cells([i, j, k], &vid, &mut cells);
            }
        }
    }
    build_topology(vertices, cells)
}

/// Result of the internal-edge assumption check: every cell needs at least
/// three internal edges whose tangents span all directions.
#[derive(Debug, Clone)]
pub struct InternalEdgeReport {
    /// Cells with fewer than three internal edges.
    pub deficient_cells: Vec<usize>,
    /// Cells whose internal-edge tangents do not span three independent
    /// directions (even if there are three or more of them).
    pub dependent_cells: Vec<usize>,
}

impl InternalEdgeReport {
    pub fn pass(&self) -> bool {
        self.deficient_cells.is_empty() && self.dependent_cells.is_empty()
    }
}

/// Checks that every cell has at least three internal (non-boundary) edges
/// and that their tangents span three linearly independent directions.
pub fn check_internal_edge_assumption(mesh: &Mesh) -> InternalEdgeReport {
    let mut deficient = Vec::new();
    let mut dependent = Vec::new();
    for c in 0..mesh.n_cells() {
        let internal: Vec<usize> = mesh
            .cell_edges(c)
            .iter()
            .copied()
            .filter(|&e| !mesh.is_boundary_edge(e))
            .collect();
        if internal.len() < 3 {
            deficient.push(c);
            continue;
        }
        // rank of the tangent set via the second-moment matrix
        let mut m = Mat3::ZERO;
        for &e in &internal {
            let t = mesh.edge_tangent(e);
            for i in 0..3 {
                for j in 0..3 {
                    m.0[i][j] += t[i] * t[j];
                }
            }
        }
        let trace = m.0[0][0] + m.0[1][1] + m.0[2][2];
        if m.det() <= 1e-9 * (trace / 3.0).powi(3) {
            dependent.push(c);
        }
    }
    InternalEdgeReport {
        deficient_cells: deficient,
        dependent_cells: dependent,
    }
}

/// Writes the mesh in the line-based `rq1mesh 1` text format; values
/// round-trip bit-identically at 17 significant digits.
pub fn write_rq1mesh<W: Write>(mesh: &Mesh, w: &mut W) -> io::Result<()> {
    writeln!(w, "rq1mesh 1")?;
    writeln!(w, "vertices {}", mesh.n_vertices())?;
    for v in mesh.vertices() {
        writeln!(w, "{:.16e} {:.16e} {:.16e}", v[0], v[1], v[2])?;
    }
    writeln!(w, "cells {}", mesh.n_cells())?;
    for c in mesh.cells() {
        writeln!(w, "{} {} {} {}", c[0], c[1], c[2], c[3])?;
    }
    Ok(())
}

/// Reads a mesh in the `rq1mesh 1` format and builds its topology. Parse
/// errors name the offending line.
pub fn read_rq1mesh<R: BufRead>(reader: R) -> Result<Mesh, MeshError> {
    let mut lines = reader.lines().enumerate();
    let mut next_line = |what: &str| -> Result<(usize, String), MeshError> {
        for (idx, line) in lines.by_ref() {
            let line = line.map_err(MeshError::Io)?;
            if !line.trim().is_empty() {
                return Ok((idx + 1, line));
            }
        }
        Err(MeshError::Parse {
            line: 0,
            message: format!("unexpected end of file, expected {what}"),
        })
    };

    let (lno, header) = next_line("header")?;
    if header.trim() != "rq1mesh 1" {
        return Err(MeshError::Parse {
            line: lno,
            message: format!("expected header 'rq1mesh 1', got '{}'", header.trim()),
        });
    }

    let parse_count = |line: &str, lno: usize, keyword: &str| -> Result<usize, MeshError> {
        let mut it = line.split_whitespace();
        match (it.next(), it.next(), it.next()) {
            (Some(k), Some(n), None) if k == keyword => {
                n.parse::<usize>().map_err(|_| MeshError::Parse {
                    line: lno,
                    message: format!("invalid count '{n}'"),
                })
            }
            _ => Err(MeshError::Parse {
                line: lno,
                message: format!("expected '{keyword} N', got '{}'", line.trim()),
            }),
        }
    };

    let (lno, line) = next_line("vertex count")?;
    let n_vertices = parse_count(&line, lno, "vertices")?;
    let mut vertices = Vec::with_capacity(n_vertices);
    for _ in 0..n_vertices {
        let (lno, line) = next_line("vertex coordinates")?;
        let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
        match vals {
            Ok(v) if v.len() == 3 => vertices.push([v[0], v[1], v[2]]),
            _ => {
                return Err(MeshError::Parse {
                    line: lno,
                    message: format!("expected 3 coordinates, got '{}'", line.trim()),
                })
            }
        }
    }

    let (lno, line) = next_line("cell count")?;
    let n_cells = parse_count(&line, lno, "cells")?;
    let mut cells = Vec::with_capacity(n_cells);
    for _ in 0..n_cells {
        let (lno, line) = next_line("cell indices")?;
        let vals: Result<Vec<usize>, _> = line.split_whitespace().map(str::parse).collect();
        match vals {
            Ok(v) if v.len() == 4 => cells.push([v[0], v[1], v[2], v[3]]),
            _ => {
                return Err(MeshError::Parse {
                    line: lno,
                    message: format!("expected 4 vertex indices, got '{}'", line.trim()),
                })
            }
        }
    }

    build_topology(vertices, cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn single_tet() -> Mesh {
        build_topology(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
            ],
            vec![[0, 1, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn single_tet_topology() {
        let mesh = single_tet();
        assert_eq!(mesh.n_faces(), 4);
        assert_eq!(mesh.n_edges(), 6);
        assert!((0..4).all(|f| mesh.is_boundary_face(f)));
        assert!((0..6).all(|e| mesh.is_boundary_edge(e)));
        mesh.validate().unwrap();
    }

    #[test]
    fn two_tets_sharing_a_face() {
        let mesh = build_topology(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
                [1.0, 1.0, 1.0],
            ],
            vec![[0, 1, 2, 3], [1, 2, 3, 4]],
        )
        .unwrap();
        assert_eq!(mesh.n_faces(), 7);
        assert_eq!(mesh.boundary_faces().count(), 6);
        assert_eq!(mesh.n_edges(), 9);
        assert!((0..9).all(|e| mesh.is_boundary_edge(e)));
        mesh.validate().unwrap();
    }

    #[test]
    fn kuhn_cube_counts() {
        let mesh = generate_box_mesh([1.0, 1.0, 1.0], [1, 1, 1]).unwrap();
        assert_eq!(mesh.n_vertices(), 8);
        assert_eq!(mesh.n_cells(), 6);
        assert_eq!(mesh.n_edges(), 19);
        mesh.validate().unwrap();

        // exactly one interior edge, the main diagonal, shared by all 6 cells
        let interior: Vec<usize> = (0..mesh.n_edges())
            .filter(|&e| !mesh.is_boundary_edge(e))
            .collect();
        assert_eq!(interior.len(), 1);
        assert_eq!(mesh.edge_cells(interior[0]).len(), 6);
        let (a, b) = mesh.edge(interior[0]);
        assert_eq!(dist(mesh.vertex(a), mesh.vertex(b)), 3.0f64.sqrt());
    }

    #[test]
    fn box_mesh_volume_and_bounds() {
        let mesh = generate_box_mesh([1.0, 1.0, 1.0], [2, 2, 2]).unwrap();
        assert_relative_eq!(mesh.total_volume(), 1.0, epsilon = 1e-12);
        mesh.validate().unwrap();

        let mesh = generate_box_mesh([3.0, 1.0, 0.1], [3, 1, 1]).unwrap();
        for a in 0..3 {
            let max = mesh.vertices().iter().map(|v| v[a]).fold(f64::MIN, f64::max);
            let min = mesh.vertices().iter().map(|v| v[a]).fold(f64::MAX, f64::min);
            assert_eq!(min, 0.0);
            assert_eq!(max, [3.0, 1.0, 0.1][a]);
        }
        assert_relative_eq!(mesh.total_volume(), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn box_mesh_rejects_bad_arguments() {
        assert!(generate_box_mesh([0.0, 1.0, 1.0], [1, 1, 1]).is_err());
        assert!(generate_box_mesh([1.0, 1.0, 1.0], [0, 1, 1]).is_err());
        assert!(generate_box_mesh([-1.0, 1.0, 1.0], [1, 1, 1]).is_err());
    }

    #[test]
    fn ball_mesh_boundary_vertices_on_sphere() {
        for refinement in 0..2 {
            let mesh = generate_ball_mesh(1.0, refinement).unwrap();
            mesh.validate().unwrap();
            for v in 0..mesh.n_vertices() {
                if mesh.is_boundary_vertex(v) {
                    assert_abs_diff_eq!(norm(mesh.vertex(v)), 1.0, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn ball_mesh_h_halves_per_level() {
        // level 0 has center-to-boundary edges and is preasymptotic; the
        // halving rate is measured from level 1 on
        let h: Vec<f64> = (1..4)
            .map(|r| generate_ball_mesh(1.0, r).unwrap().h())
            .collect();
        for pair in h.windows(2) {
            let ratio = pair[0] / pair[1];
            assert!(ratio > 1.6 && ratio < 2.4, "ratio {ratio}");
        }
    }

    #[test]
    fn ball_mesh_scales_linearly_with_radius() {
        let unit = generate_ball_mesh(1.0, 0).unwrap();
        let double = generate_ball_mesh(2.0, 0).unwrap();
        for (a, b) in unit.vertices().iter().zip(double.vertices().iter()) {
            for c in 0..3 {
                assert_abs_diff_eq!(2.0 * a[c], b[c], epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn affine_map_identity_on_reference_cell() {
        let mesh = build_topology(REF_VERTICES.to_vec(), vec![[0, 1, 2, 3]]).unwrap();
        let map = mesh.affine_map(0).unwrap();
        assert_relative_eq!(map.det(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(map.cell_volume(), REF_VOLUME, epsilon = 1e-13);
        let p = [0.3, -0.1, 0.2];
        for c in 0..3 {
            assert_abs_diff_eq!(map.apply(p)[c], p[c], epsilon = 1e-14);
        }
    }

    #[test]
    fn affine_map_scaled_reference_cell() {
        let s = 2.5;
        let verts: Vec<Point3> = REF_VERTICES.iter().map(|&v| scale(v, s)).collect();
        let mesh = build_topology(verts, vec![[0, 1, 2, 3]]).unwrap();
        let map = mesh.affine_map(0).unwrap();
        assert_relative_eq!(map.det(), s * s * s, epsilon = 1e-12);
    }

    #[test]
    fn affine_map_volume_identity() {
        // |det A| |T_ref| = |T| and 6|T| = |det(E1, E2, E3)|
        let mesh = generate_box_mesh([1.3, 0.8, 2.1], [2, 1, 2]).unwrap();
        for c in 0..mesh.n_cells() {
            let map = mesh.affine_map(c).unwrap();
            let vs = mesh.cell_vertices(c);
            let e = Mat3::from_cols(sub(vs[1], vs[0]), sub(vs[2], vs[0]), sub(vs[3], vs[0]));
            assert_relative_eq!(
                map.det().abs() * REF_VOLUME,
                e.det().abs() / 6.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn orientation_is_normalized() {
        let mesh = build_topology(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
            ],
            // negatively oriented input
            vec![[1, 0, 2, 3]],
        )
        .unwrap();
        assert!(signed_volume(&mesh.cell_vertices(0)) > 0.0);
    }

    #[test]
    fn duplicate_and_degenerate_cells_rejected() {
        let verts = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ];
        let dup = build_topology(verts.clone(), vec![[0, 1, 2, 3], [1, 0, 3, 2]]);
        assert!(matches!(dup, Err(MeshError::DuplicateCell { .. })));
        let degenerate = build_topology(verts, vec![[0, 1, 2, 2]]);
        assert!(matches!(degenerate, Err(MeshError::DegenerateCell { .. })));
    }

    #[test]
    fn non_manifold_face_rejected() {
        let verts = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 1.0, 1.0],
            [0.0, 0.0, -1.0],
        ];
        let result = build_topology(verts, vec![[0, 1, 2, 3], [0, 1, 2, 4], [0, 1, 2, 5]]);
        assert!(matches!(result, Err(MeshError::NonManifoldFace { .. })));
    }

    #[test]
    fn internal_edge_assumption() {
        let report = check_internal_edge_assumption(&single_tet());
        assert!(!report.pass());
        assert_eq!(report.deficient_cells.len(), 1);

        let mesh = generate_box_mesh([1.0, 1.0, 1.0], [2, 2, 2]).unwrap();
        assert!(check_internal_edge_assumption(&mesh).pass());

        let ball = generate_ball_mesh(1.0, 1).unwrap();
        assert!(check_internal_edge_assumption(&ball).pass());
    }

    #[test]
    fn rq1mesh_round_trip() {
        let mesh = generate_box_mesh([3.0, 1.0, 0.1], [2, 2, 1]).unwrap();
        let mut buf = Vec::new();
        write_rq1mesh(&mesh, &mut buf).unwrap();
        let reread = read_rq1mesh(buf.as_slice()).unwrap();
        assert_eq!(mesh.n_vertices(), reread.n_vertices());
        assert_eq!(mesh.cells(), reread.cells());
        for (a, b) in mesh.vertices().iter().zip(reread.vertices()) {
            assert_eq!(a, b, "vertex coordinates must round-trip bit-identically");
        }
        let mut buf2 = Vec::new();
        write_rq1mesh(&reread, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn rq1mesh_parse_errors_name_the_line() {
        let text = "rq1mesh 1\nvertices 2\n0 0 0\n1 bad 0\ncells 0\n";
        match read_rq1mesh(text.as_bytes()) {
            Err(MeshError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn locate_point_finds_containing_cell() {
        let mesh = generate_box_mesh([1.0, 1.0, 1.0], [2, 2, 2]).unwrap();
        let (c, xhat) = mesh.locate_point([0.3, 0.6, 0.2]).unwrap();
        let map = mesh.affine_map(c).unwrap();
        let x = map.apply(xhat);
        assert_abs_diff_eq!(x[0], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(x[2], 0.2, epsilon = 1e-12);
        assert!(mesh.locate_point([1.5, 0.5, 0.5]).is_none());
    }
}
