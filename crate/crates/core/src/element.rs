//! The rotated-Q1 reference tetrahedron: shape functions, gradients, nodes,
//! and quadrature rules, plus the linear (P1) pressure element.
//!
//! The reference tetrahedron has vertices
//! `(1,1,1), (1,-1,-1), (-1,-1,1), (-1,1,-1)`: its edges are face diagonals
//! of the cube `[-1,1]^3`, its edge midpoints are the six points `±e_i`, its
//! centre of gravity is the origin, all edges have length `2*sqrt(2)` and its
//! volume is `8/3`.
//!
//! The velocity shape space is `span(1, x1, x2, x3, x1^2-x2^2, x2^2-x3^2)`
//! with the values at the six edge midpoints as degrees of freedom. The
//! Lagrange basis is generated from
//!
//! ```text
//! phi(x1, x2, x3) = (1 + 3*x1 + 2*x1^2 - x2^2 - x3^2) / 6
//! ```
//!
//! by the sign/permutation pattern that places basis `i` at node `i`, with
//! the node enumeration `+e1, -e1, +e2, -e2, +e3, -e3`.

use crate::geometry::{cross, dot, midpoint, norm, normalize, scale, sub, triangle_area, Point3};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ElementError {
    #[error("unsupported quadrature degree {0} (supported: 1..=4)")]
    UnsupportedDegree(usize),
    #[error("face index {0} out of range (reference tetrahedron has 4 faces)")]
    InvalidFace(usize),
}

/// Vertices of the reference tetrahedron, enumerated with positive
/// orientation (signed volume `+8/3`).
pub const REF_VERTICES: [Point3; 4] = [
    [1.0, 1.0, 1.0],
    [1.0, -1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [-1.0, 1.0, -1.0],
];

/// Volume of the reference tetrahedron.
pub const REF_VOLUME: f64 = 8.0 / 3.0;

/// Local edges as vertex pairs, in lexicographic vertex-pair order. This is
/// the fixed local edge enumeration used for local-to-global edge matching.
pub const REF_EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// The six nodes (edge midpoints) in the enumeration `+e1, -e1, +e2, -e2,
/// +e3, -e3`, matching the basis returned by [`eval_basis`].
pub const REF_NODES: [Point3; 6] = [
    [1.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.0, 0.0, -1.0],
];

/// Basis/node index carried by each local edge: the midpoints of the edges in
/// [`REF_EDGES`] order are `+e1, +e3, +e2, -e2, -e3, -e1`.
pub const EDGE_BASIS: [usize; 6] = [0, 4, 2, 3, 5, 1];

/// Local faces as vertex triples; face `k` is opposite vertex `k`.
pub const REF_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]];

/// Coefficients of the six shape functions over the monomial basis
/// `(1, x1, x2, x3, x1^2, x2^2, x3^2)`, in node order, times 6.
///
/// Storing coefficient vectors rather than closed-form code keeps the span
/// checks and integration tests exact.
const BASIS_COEFFS_X6: [[f64; 7]; 6] = [
    [1.0, 3.0, 0.0, 0.0, 2.0, -1.0, -1.0],
    [1.0, -3.0, 0.0, 0.0, 2.0, -1.0, -1.0],
    [1.0, 0.0, 3.0, 0.0, -1.0, 2.0, -1.0],
    [1.0, 0.0, -3.0, 0.0, -1.0, 2.0, -1.0],
    [1.0, 0.0, 0.0, 3.0, -1.0, -1.0, 2.0],
    [1.0, 0.0, 0.0, -3.0, -1.0, -1.0, 2.0],
];

/// Evaluates the six rotated-Q1 shape functions at a reference point.
///
/// The polynomials are global, so evaluation outside the reference cell is
/// permitted (used by tests).
pub fn eval_basis(p: Point3) -> [f64; 6] {
    let mono = [
        1.0,
        p[0],
        p[1],
        p[2],
        p[0] * p[0],
        p[1] * p[1],
        p[2] * p[2],
    ];
    let mut out = [0.0; 6];
    for (phi, coeffs) in out.iter_mut().zip(BASIS_COEFFS_X6.iter()) {
        let mut acc = 0.0;
        for (c, m) in coeffs.iter().zip(mono.iter()) {
            acc += c * m;
        }
        *phi = acc / 6.0;
    }
    out
}

/// Gradients of the six shape functions at a reference point (affine in `p`).
pub fn eval_basis_grad(p: Point3) -> [Point3; 6] {
    let mut out = [[0.0; 3]; 6];
    for (grad, c) in out.iter_mut().zip(BASIS_COEFFS_X6.iter()) {
        *grad = [
            (c[1] + 2.0 * c[4] * p[0]) / 6.0,
            (c[2] + 2.0 * c[5] * p[1]) / 6.0,
            (c[3] + 2.0 * c[6] * p[2]) / 6.0,
        ];
    }
    out
}

/// Evaluates the four linear (barycentric) pressure shape functions.
///
/// With the reference vertices above these take the closed form
/// `lambda_i(x) = (1 + v_i . x) / 4`.
pub fn eval_p1_basis(p: Point3) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (l, v) in out.iter_mut().zip(REF_VERTICES.iter()) {
        *l = 0.25 * (1.0 + dot(*v, p));
    }
    out
}

/// Gradients of the linear pressure shape functions (constant).
pub fn eval_p1_grad() -> [Point3; 4] {
    let mut out = [[0.0; 3]; 4];
    for (g, v) in out.iter_mut().zip(REF_VERTICES.iter()) {
        *g = scale(*v, 0.25);
    }
    out
}

/// Unit tangent of local edge `k` (oriented from the lower to the higher
/// local vertex index).
pub fn ref_edge_tangent(k: usize) -> Point3 {
    let (a, b) = REF_EDGES[k];
    normalize(sub(REF_VERTICES[b], REF_VERTICES[a])).expect("reference edges are nondegenerate")
}

/// Midpoint of local edge `k`; equals `REF_NODES[EDGE_BASIS[k]]`.
pub fn ref_edge_midpoint(k: usize) -> Point3 {
    let (a, b) = REF_EDGES[k];
    midpoint(REF_VERTICES[a], REF_VERTICES[b])
}

/// A quadrature rule on the reference cell or on a (possibly embedded)
/// triangle. Weights carry the measure of the integration domain.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<Point3>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn integrate(&self, f: impl Fn(Point3) -> f64) -> f64 {
        self.points
            .iter()
            .zip(self.weights.iter())
            .map(|(&p, &w)| w * f(p))
            .sum()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// The six-point edge-midpoint rule with weight `|T|/6 = 4/9` per node,
/// exact for the rotated-Q1 shape space.
pub fn edge_midpoint_quadrature() -> QuadratureRule {
    QuadratureRule {
        points: REF_NODES.to_vec(),
        weights: vec![REF_VOLUME / 6.0; 6],
    }
}

/// A volume rule on the reference tetrahedron exact for all polynomials of
/// total degree `min_degree` (1..=4).
///
/// The rules are Grundmann-Moller simplex rules of degree `2s+1 >= min_degree`
/// mapped from the unit simplex onto the reference cell.
pub fn volume_quadrature(min_degree: usize) -> Result<QuadratureRule, ElementError> {
    if !(1..=4).contains(&min_degree) {
        return Err(ElementError::UnsupportedDegree(min_degree));
    }
    let s = min_degree / 2;
    Ok(grundmann_moller(s, &REF_VERTICES, REF_VOLUME))
}

/// Composite rule for error-norm integration: the degree-4 rule applied on
/// the eight children of a uniform refinement of the reference cell.
pub fn error_norm_quadrature() -> QuadratureRule {
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for child in refine_tet(&REF_VERTICES) {
        let vol = tet_volume(&child);
        let rule = grundmann_moller(2, &child, vol);
        points.extend(rule.points);
        weights.extend(rule.weights);
    }
    QuadratureRule { points, weights }
}

/// Three-point edge-midpoint rule on reference face `face`, weights `|F|/3`.
/// Exact for quadratic polynomials on the face.
pub fn face_midpoint_quadrature(face: usize) -> Result<QuadratureRule, ElementError> {
    if face >= 4 {
        return Err(ElementError::InvalidFace(face));
    }
    let [a, b, c] = REF_FACES[face].map(|v| REF_VERTICES[v]);
    Ok(triangle_midpoint_rule(a, b, c))
}

/// Edge-midpoint rule on an arbitrary triangle embedded in 3D.
pub fn triangle_midpoint_rule(a: Point3, b: Point3, c: Point3) -> QuadratureRule {
    let w = triangle_area(a, b, c) / 3.0;
    QuadratureRule {
        points: vec![midpoint(a, b), midpoint(b, c), midpoint(a, c)],
        weights: vec![w; 3],
    }
}

/// Rule on an arbitrary triangle exact for polynomials of total degree
/// `min_degree` (1..=4 supported, like [`volume_quadrature`]).
pub fn triangle_quadrature(
    a: Point3,
    b: Point3,
    c: Point3,
    min_degree: usize,
) -> Result<QuadratureRule, ElementError> {
    if !(1..=4).contains(&min_degree) {
        return Err(ElementError::UnsupportedDegree(min_degree));
    }
    let s = min_degree / 2;
    Ok(grundmann_moller(s, &[a, b, c], triangle_area(a, b, c)))
}

/// Grundmann-Moller rule of index `s` (degree `2s+1`) on the `n`-simplex with
/// the given vertices (`n = vertices.len() - 1`) and measure `volume`.
///
/// Points are returned in the embedding coordinates of the vertices; weights
/// sum to `volume`. Points of every orbit lie strictly inside the simplex.
fn grundmann_moller(s: usize, vertices: &[Point3], volume: f64) -> QuadratureRule {
    let n = vertices.len() - 1;
    let d = 2 * s + 1;
    let mut points = Vec::new();
    let mut weights = Vec::new();

    // The raw formula integrates over the unit simplex (measure 1/n!);
    // rescale so weights sum to the requested measure.
    let measure_scale = volume * factorial(n);

    for i in 0..=s {
        let denom = (d + n - 2 * i) as f64;
        let mut w = (denom.powi(d as i32)) / (factorial(i) * factorial(d + n - i));
        w /= (2.0f64).powi(2 * s as i32);
        if i % 2 == 1 {
            w = -w;
        }
        w *= measure_scale;

        for beta in compositions(s - i, n + 1) {
            let mut p = [0.0; 3];
            for (bj, v) in beta.iter().zip(vertices.iter()) {
                let bary = (2 * bj + 1) as f64 / denom;
                p = crate::geometry::add(p, scale(*v, bary));
            }
            points.push(p);
            weights.push(w);
        }
    }
    QuadratureRule { points, weights }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|x| x as f64).product()
}

/// All vectors in `N_0^len` summing to `total`, in lexicographic order.
fn compositions(total: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = vec![0usize; len];
    fn rec(total: usize, pos: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if pos + 1 == current.len() {
            current[pos] = total;
            out.push(current.clone());
            return;
        }
        for v in 0..=total {
            current[pos] = v;
            rec(total - v, pos + 1, current, out);
        }
    }
    rec(total, 0, &mut current, &mut out);
    out
}

fn tet_volume(v: &[Point3; 4]) -> f64 {
    let a = sub(v[1], v[0]);
    let b = sub(v[2], v[0]);
    let c = sub(v[3], v[0]);
    (dot(a, cross(b, c)) / 6.0).abs()
}

/// Uniform (red) refinement of a tetrahedron into eight children: four
/// corner cells plus four cells from the interior octahedron, split along
/// the `m03`-`m12` diagonal.
fn refine_tet(v: &[Point3; 4]) -> [[Point3; 4]; 8] {
    let m01 = midpoint(v[0], v[1]);
    let m02 = midpoint(v[0], v[2]);
    let m03 = midpoint(v[0], v[3]);
    let m12 = midpoint(v[1], v[2]);
    let m13 = midpoint(v[1], v[3]);
    let m23 = midpoint(v[2], v[3]);
    [
        [v[0], m01, m02, m03],
        [v[1], m01, m12, m13],
        [v[2], m02, m12, m23],
        [v[3], m03, m13, m23],
        [m03, m12, m01, m13],
        [m03, m12, m13, m23],
        [m03, m12, m23, m02],
        [m03, m12, m02, m01],
    ]
}

/// Length of the reference edges (all equal).
pub fn ref_edge_length() -> f64 {
    let (a, b) = REF_EDGES[0];
    norm(sub(REF_VERTICES[b], REF_VERTICES[a]))
}
