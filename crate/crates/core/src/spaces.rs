//! Global degree-of-freedom management.
//!
//! Velocity: one scalar DOF per edge per component (three per edge), with the
//! value at the edge midpoint as the degree of freedom. Two cells sharing an
//! edge address the same global DOF triple, which realizes midpoint
//! continuity across interior edges. Componentwise scalar DOFs mirror the
//! componentwise construction of the vector space and let boundary
//! conditions constrain single components.
//!
//! Pressure: one DOF per vertex, continuous piecewise-linear.

use crate::element::{eval_basis, eval_basis_grad, eval_p1_basis, EDGE_BASIS};
use crate::geometry::{dot, Point3};
use crate::mesh::Mesh;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("point {point:?} is outside cell {cell}")]
    OutOfCell { cell: usize, point: Point3 },
    #[error("coefficient vector has length {got}, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },
}

/// Velocity DOF numbering: edge-major, component-minor
/// (`dof = 3 * edge + component`).
#[derive(Debug, Clone)]
pub struct VelocityDofMap {
    n_edges: usize,
    boundary: Vec<bool>,
}

impl VelocityDofMap {
    pub fn new(mesh: &Mesh) -> Self {
        let n_edges = mesh.n_edges();
        let mut boundary = vec![false; 3 * n_edges];
        for e in 0..n_edges {
            if mesh.is_boundary_edge(e) {
                for comp in 0..3 {
                    boundary[3 * e + comp] = true;
                }
            }
        }
        VelocityDofMap { n_edges, boundary }
    }

    /// Total number of DOFs: three per edge.
    pub fn n_dofs(&self) -> usize {
        3 * self.n_edges
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    #[inline]
    pub fn dof(&self, edge: usize, component: usize) -> usize {
        3 * edge + component
    }

    /// A DOF is flagged boundary iff its edge is a boundary edge.
    pub fn is_boundary(&self, dof: usize) -> bool {
        self.boundary[dof]
    }

    pub fn edge_of(&self, dof: usize) -> usize {
        dof / 3
    }

    pub fn component_of(&self, dof: usize) -> usize {
        dof % 3
    }

    /// Samples an analytic field at the edge midpoints.
    pub fn interpolate(&self, mesh: &Mesh, f: impl Fn(Point3) -> [f64; 3]) -> DiscreteField {
        let mut coeffs = vec![0.0; self.n_dofs()];
        for e in 0..self.n_edges {
            let value = f(mesh.edge_midpoint(e));
            for comp in 0..3 {
                coeffs[self.dof(e, comp)] = value[comp];
            }
        }
        DiscreteField { coeffs }
    }

    /// Evaluates a velocity field on cell `cell` at reference coordinates.
    pub fn eval_on_cell_ref(
        &self,
        mesh: &Mesh,
        field: &DiscreteField,
        cell: usize,
        xhat: Point3,
    ) -> [f64; 3] {
        let basis = eval_basis(xhat);
        let edges = mesh.cell_edges(cell);
        let mut out = [0.0; 3];
        for (k, &e) in edges.iter().enumerate() {
            let phi = basis[EDGE_BASIS[k]];
            for (comp, o) in out.iter_mut().enumerate() {
                *o += phi * field.coeffs[self.dof(e, comp)];
            }
        }
        out
    }

    /// Physical gradient of each component on cell `cell` at reference
    /// coordinates; `out[i][j] = d v_i / d x_j`.
    pub fn eval_gradient_on_cell_ref(
        &self,
        mesh: &Mesh,
        field: &DiscreteField,
        cell: usize,
        xhat: Point3,
    ) -> [[f64; 3]; 3] {
        let map = mesh
            .affine_map(cell)
            .expect("built meshes are nondegenerate");
        let grads = eval_basis_grad(xhat);
        let edges = mesh.cell_edges(cell);
        let mut out = [[0.0; 3]; 3];
        for (k, &e) in edges.iter().enumerate() {
            let g = map.push_gradient(grads[EDGE_BASIS[k]]);
            for comp in 0..3 {
                let c = field.coeffs[self.dof(e, comp)];
                for j in 0..3 {
                    out[comp][j] += c * g[j];
                }
            }
        }
        out
    }

    /// Evaluates a velocity field at a physical point inside `cell`
    /// (barycentric tolerance 1e-10).
    pub fn evaluate(
        &self,
        mesh: &Mesh,
        field: &DiscreteField,
        cell: usize,
        x: Point3,
    ) -> Result<[f64; 3], FieldError> {
        if field.coeffs.len() != self.n_dofs() {
            return Err(FieldError::LengthMismatch {
                got: field.coeffs.len(),
                expected: self.n_dofs(),
            });
        }
        let xhat = pull_back_checked(mesh, cell, x)?;
        Ok(self.eval_on_cell_ref(mesh, field, cell, xhat))
    }

    pub fn zero_field(&self) -> DiscreteField {
        DiscreteField {
            coeffs: vec![0.0; self.n_dofs()],
        }
    }
}

/// Pressure DOF numbering: the global vertex index.
#[derive(Debug, Clone)]
pub struct PressureDofMap {
    n_vertices: usize,
}

impl PressureDofMap {
    pub fn new(mesh: &Mesh) -> Self {
        PressureDofMap {
            n_vertices: mesh.n_vertices(),
        }
    }

    pub fn n_dofs(&self) -> usize {
        self.n_vertices
    }

    /// Samples an analytic function at the vertices.
    pub fn interpolate(&self, mesh: &Mesh, f: impl Fn(Point3) -> f64) -> DiscreteField {
        DiscreteField {
            coeffs: (0..self.n_vertices).map(|v| f(mesh.vertex(v))).collect(),
        }
    }

    pub fn eval_on_cell_ref(
        &self,
        mesh: &Mesh,
        field: &DiscreteField,
        cell: usize,
        xhat: Point3,
    ) -> f64 {
        let basis = eval_p1_basis(xhat);
        let cell_vertices = mesh.cell(cell);
        basis
            .iter()
            .zip(cell_vertices.iter())
            .map(|(&l, &v)| l * field.coeffs[v])
            .sum()
    }

    pub fn evaluate(
        &self,
        mesh: &Mesh,
        field: &DiscreteField,
        cell: usize,
        x: Point3,
    ) -> Result<f64, FieldError> {
        if field.coeffs.len() != self.n_dofs() {
            return Err(FieldError::LengthMismatch {
                got: field.coeffs.len(),
                expected: self.n_dofs(),
            });
        }
        let xhat = pull_back_checked(mesh, cell, x)?;
        Ok(self.eval_on_cell_ref(mesh, field, cell, xhat))
    }

    /// The (constant) physical gradient of a pressure field on a cell.
    pub fn cell_gradient(&self, mesh: &Mesh, field: &DiscreteField, cell: usize) -> Point3 {
        let map = mesh
            .affine_map(cell)
            .expect("built meshes are nondegenerate");
        let grads = crate::element::eval_p1_grad();
        let cell_vertices = mesh.cell(cell);
        let mut out = [0.0; 3];
        for (ghat, &v) in grads.iter().zip(cell_vertices.iter()) {
            let g = map.push_gradient(*ghat);
            let c = field.coeffs[v];
            for (o, gj) in out.iter_mut().zip(g.iter()) {
                *o += c * gj;
            }
        }
        out
    }

    pub fn zero_field(&self) -> DiscreteField {
        DiscreteField {
            coeffs: vec![0.0; self.n_vertices],
        }
    }
}

/// A coefficient vector over a DOF map. Evaluation goes through the owning
/// map, which knows the cell-local basis.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteField {
    pub coeffs: Vec<f64>,
}

impl DiscreteField {
    pub fn from_coeffs(coeffs: Vec<f64>) -> Self {
        DiscreteField { coeffs }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn scaled(&self, s: f64) -> DiscreteField {
        DiscreteField {
            coeffs: self.coeffs.iter().map(|&c| c * s).collect(),
        }
    }
}

fn pull_back_checked(mesh: &Mesh, cell: usize, x: Point3) -> Result<Point3, FieldError> {
    const TOL: f64 = 1e-10;
    let map = mesh
        .affine_map(cell)
        .expect("built meshes are nondegenerate");
    let xhat = map.pull_back(x);
    let bary = eval_p1_basis(xhat);
    if bary.iter().any(|&l| l < -TOL) {
        return Err(FieldError::OutOfCell { cell, point: x });
    }
    Ok(xhat)
}

/// Integral of the normal-component jump of a velocity field over face `f`,
/// computed with the face edge-midpoint rule (exact for the quadratic traces
/// of the space).
///
/// For an interior face this is the two-sided jump; for a boundary face it is
/// the one-sided trace integral.
pub fn face_jump_normal_integral(
    mesh: &Mesh,
    vmap: &VelocityDofMap,
    field: &DiscreteField,
    face: usize,
) -> f64 {
    let (c1, c2) = mesh.face_cells(face);
    let [a, b, c] = mesh.face_vertices(face);
    let rule = crate::element::triangle_midpoint_rule(a, b, c);
    let n1 = mesh.outward_face_normal(face, c1);
    let map1 = mesh.affine_map(c1).expect("built meshes are nondegenerate");
    rule.points
        .iter()
        .zip(rule.weights.iter())
        .map(|(&p, &w)| {
            let v1 = vmap.eval_on_cell_ref(mesh, field, c1, map1.pull_back(p));
            let jump = match c2 {
                Some(c2) => {
                    let map2 = mesh.affine_map(c2).expect("built meshes are nondegenerate");
                    let v2 = vmap.eval_on_cell_ref(mesh, field, c2, map2.pull_back(p));
                    // n2 = -n1 on the shared face
                    dot(n1, v1) - dot(n1, v2)
                }
                None => dot(n1, v1),
            };
            w * jump
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::dist;
    use crate::mesh::{build_topology, generate_box_mesh};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn dof_counts() {
        let single = build_topology(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
            ],
            vec![[0, 1, 2, 3]],
        )
        .unwrap();
        let vmap = VelocityDofMap::new(&single);
        assert_eq!(vmap.n_dofs(), 18);
        assert!((0..18).all(|d| vmap.is_boundary(d)));
        assert_eq!(PressureDofMap::new(&single).n_dofs(), 4);

        let two = build_topology(
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
        assert_eq!(VelocityDofMap::new(&two).n_dofs(), 27);

        let boxm = generate_box_mesh([1.0, 1.0, 1.0], [2, 2, 2]).unwrap();
        assert_eq!(VelocityDofMap::new(&boxm).n_dofs(), 3 * boxm.n_edges());
        assert_eq!(PressureDofMap::new(&boxm).n_dofs(), boxm.n_vertices());

        let kuhn = generate_box_mesh([1.0, 1.0, 1.0], [1, 1, 1]).unwrap();
        assert_eq!(PressureDofMap::new(&kuhn).n_dofs(), 8);
    }

    #[test]
    fn affine_fields_are_reproduced_exactly() {
        let mesh = generate_box_mesh([1.0, 1.0, 1.0], [2, 2, 2]).unwrap();
        let vmap = VelocityDofMap::new(&mesh);
        let f = |x: Point3| [1.0 + 2.0 * x[0] - x[2], x[1] - 3.0 * x[2], 0.5 * x[0] + x[1]];
        let field = vmap.interpolate(&mesh, f);
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..50 {
            let c = rng.gen_range(0..mesh.n_cells());
            let xhat = random_ref_point(&mut rng);
            let map = mesh.affine_map(c).unwrap();
            let x = map.apply(xhat);
            let value = vmap.eval_on_cell_ref(&mesh, &field, c, xhat);
            let exact = f(x);
            for comp in 0..3 {
                assert_abs_diff_eq!(value[comp], exact[comp], epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn quadratic_shape_space_field_reproduced_on_reference_cell() {
        let mesh = build_topology(crate::element::REF_VERTICES.to_vec(), vec![[0, 1, 2, 3]])
            .unwrap();
        let vmap = VelocityDofMap::new(&mesh);
        let f = |x: Point3| {
            let q = x[0] * x[0] - x[1] * x[1];
            [q, q, q]
        };
        let field = vmap.interpolate(&mesh, f);
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..30 {
            let xhat = random_ref_point(&mut rng);
            let value = vmap.eval_on_cell_ref(&mesh, &field, 0, xhat);
            let exact = f(xhat);
            for comp in 0..3 {
                assert_abs_diff_eq!(value[comp], exact[comp], epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn interior_midpoints_are_single_valued() {
        let mesh = generate_box_mesh([1.0, 1.0, 1.0], [2, 2, 2]).unwrap();
        let vmap = VelocityDofMap::new(&mesh);
        let field = random_field(&vmap, 3);
        for e in 0..mesh.n_edges() {
            if mesh.is_boundary_edge(e) {
                continue;
            }
            let x = mesh.edge_midpoint(e);
            let cells = mesh.edge_cells(e);
            assert!(cells.len() >= 2);
            let first = vmap.evaluate(&mesh, &field, cells[0], x).unwrap();
            for &c in &cells[1..] {
                let other = vmap.evaluate(&mesh, &field, c, x).unwrap();
                for comp in 0..3 {
                    assert_abs_diff_eq!(first[comp], other[comp], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn fields_jump_across_interior_faces_away_from_midpoints() {
        // documents nonconformity: off the midpoints the two cell traces differ
        let mesh = generate_box_mesh([1.0, 1.0, 1.0], [2, 2, 2]).unwrap();
        let vmap = VelocityDofMap::new(&mesh);
        let field = random_field(&vmap, 5);
        let mut found_jump = false;
        for f in 0..mesh.n_faces() {
            let (c1, c2) = mesh.face_cells(f);
            let Some(c2) = c2 else { continue };
            let [a, b, c] = mesh.face_vertices(f);
            // a generic interior point of the face
            let p = [
                (a[0] + 2.0 * b[0] + 4.0 * c[0]) / 7.0,
                (a[1] + 2.0 * b[1] + 4.0 * c[1]) / 7.0,
                (a[2] + 2.0 * b[2] + 4.0 * c[2]) / 7.0,
            ];
            let v1 = vmap.evaluate(&mesh, &field, c1, p).unwrap();
            let v2 = vmap.evaluate(&mesh, &field, c2, p).unwrap();
            if dist(v1, v2) > 1e-6 {
                found_jump = true;
                break;
            }
        }
        assert!(found_jump, "nonconforming fields should jump across faces");
    }

    #[test]
    fn pressure_is_continuous_at_shared_vertices() {
        let mesh = generate_box_mesh([1.0, 1.0, 1.0], [2, 2, 2]).unwrap();
        let pmap = PressureDofMap::new(&mesh);
        let field =
            DiscreteField::from_coeffs((0..pmap.n_dofs()).map(|i| (i as f64).sin()).collect());
        for v in 0..mesh.n_vertices() {
            let x = mesh.vertex(v);
            let incident: Vec<usize> = (0..mesh.n_cells())
                .filter(|&c| mesh.cell(c).contains(&v))
                .collect();
            let first = pmap.evaluate(&mesh, &field, incident[0], x).unwrap();
            for &c in &incident {
                let val = pmap.evaluate(&mesh, &field, c, x).unwrap();
                assert_abs_diff_eq!(val, first, epsilon = 1e-12);
            }
            assert_relative_eq!(first, field.coeffs[v], epsilon = 1e-12);
        }
    }

    #[test]
    fn out_of_cell_evaluation_is_rejected() {
        let mesh = generate_box_mesh([1.0, 1.0, 1.0], [1, 1, 1]).unwrap();
        let vmap = VelocityDofMap::new(&mesh);
        let field = vmap.zero_field();
        // far outside any cell
        let result = vmap.evaluate(&mesh, &field, 0, [5.0, 5.0, 5.0]);
        assert!(matches!(result, Err(FieldError::OutOfCell { .. })));

        let short = DiscreteField::from_coeffs(vec![0.0; 3]);
        let result = vmap.evaluate(&mesh, &short, 0, [0.5, 0.5, 0.5]);
        assert!(matches!(result, Err(FieldError::LengthMismatch { .. })));
    }

    #[test]
    fn zero_interpolation_gives_zero_coefficients() {
        let mesh = generate_box_mesh([1.0, 1.0, 1.0], [1, 1, 1]).unwrap();
        let vmap = VelocityDofMap::new(&mesh);
        let field = vmap.interpolate(&mesh, |_| [0.0; 3]);
        assert!(field.coeffs.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn face_jumps_have_zero_mean_for_boundary_free_fields() {
        let mesh = generate_box_mesh([1.0, 1.0, 1.0], [3, 3, 3]).unwrap();
        let vmap = VelocityDofMap::new(&mesh);
        let mut rng = StdRng::seed_from_u64(2024);
        for _ in 0..20 {
            let mut field = random_field_rng(&vmap, &mut rng);
            for d in 0..vmap.n_dofs() {
                if vmap.is_boundary(d) {
                    field.coeffs[d] = 0.0;
                }
            }
            for f in 0..mesh.n_faces() {
                let integral = face_jump_normal_integral(&mesh, &vmap, &field, f);
                assert_abs_diff_eq!(integral, 0.0, epsilon = 1e-12);
            }
        }
    }

    fn random_ref_point(rng: &mut StdRng) -> Point3 {
        // random barycentric coordinates mapped to the reference cell
        use crate::element::REF_VERTICES;
        let mut b = [
            rng.gen::<f64>(),
            rng.gen::<f64>(),
            rng.gen::<f64>(),
            rng.gen::<f64>(),
        ];
        let s: f64 = b.iter().sum();
        b.iter_mut().for_each(|x| *x /= s);
        let mut p = [0.0; 3];
        for (bi, v) in b.iter().zip(REF_VERTICES.iter()) {
            for c in 0..3 {
                p[c] += bi * v[c];
            }
        }
        p
    }

    fn random_field(vmap: &VelocityDofMap, seed: u64) -> DiscreteField {
        let mut rng = StdRng::seed_from_u64(seed);
        random_field_rng(vmap, &mut rng)
    }

    fn random_field_rng(vmap: &VelocityDofMap, rng: &mut StdRng) -> DiscreteField {
        DiscreteField::from_coeffs(
            (0..vmap.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
    }
}
