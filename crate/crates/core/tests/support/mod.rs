//! Independent integration oracles for the quadrature tests.
//!
//! Exact integrals of polynomials over the reference tetrahedron and over
//! triangles are computed by substituting the affine barycentric
//! parametrization and applying the factorial formula for monomial integrals
//! over the unit simplex. This path shares no code with the quadrature rules
//! it checks.

use rq1_core::element::REF_VERTICES;
use rq1_core::geometry::{cross, norm, sub, Point3};
use std::collections::HashMap;

/// Sparse polynomial in up to three variables.
#[derive(Debug, Clone, Default)]
pub struct Poly {
    terms: HashMap<[u16; 3], f64>,
}

impl Poly {
    pub fn constant(c: f64) -> Poly {
        let mut terms = HashMap::new();
        if c != 0.0 {
            terms.insert([0, 0, 0], c);
        }
        Poly { terms }
    }

    /// `c0 + c[0] t0 + c[1] t1 + c[2] t2`
    pub fn affine(c0: f64, c: [f64; 3]) -> Poly {
        let mut p = Poly::constant(c0);
        for (i, &ci) in c.iter().enumerate() {
            if ci != 0.0 {
                let mut exp = [0u16; 3];
                exp[i] = 1;
                *p.terms.entry(exp).or_insert(0.0) += ci;
            }
        }
        p
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::default();
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let exp = [ea[0] + eb[0], ea[1] + eb[1], ea[2] + eb[2]];
                *out.terms.entry(exp).or_insert(0.0) += ca * cb;
            }
        }
        out
    }

    pub fn pow(&self, n: usize) -> Poly {
        let mut out = Poly::constant(1.0);
        for _ in 0..n {
            out = out.mul(self);
        }
        out
    }
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// `int over the unit d-simplex of t0^a0 t1^a1 t2^a2` (unused variables get
/// exponent zero): `a0! a1! a2! / (a0 + a1 + a2 + d)!`.
fn unit_simplex_monomial(exp: [u16; 3], dim: u32) -> f64 {
    let total: u32 = exp.iter().map(|&e| e as u32).sum();
    let mut num = 1.0;
    for &e in &exp {
        num *= factorial(e as u32);
    }
    num / factorial(total + dim)
}

fn integrate_over_unit_simplex(p: &Poly, dim: u32) -> f64 {
    p.terms
        .iter()
        .map(|(&exp, &c)| c * unit_simplex_monomial(exp, dim))
        .sum()
}

/// Exact integral of `x^i y^j z^k` over the reference tetrahedron.
pub fn ref_tet_monomial_integral(i: usize, j: usize, k: usize) -> f64 {
    tet_monomial_integral(&REF_VERTICES, i, j, k)
}

/// Exact integral of `x^i y^j z^k` over an arbitrary tetrahedron.
pub fn tet_monomial_integral(vertices: &[Point3; 4], i: usize, j: usize, k: usize) -> f64 {
    let origin = vertices[3];
    let edges = [
        sub(vertices[0], origin),
        sub(vertices[1], origin),
        sub(vertices[2], origin),
    ];
    let jac = {
        let c = cross(edges[1], edges[2]);
        (edges[0][0] * c[0] + edges[0][1] * c[1] + edges[0][2] * c[2]).abs()
    };
    let coord = |axis: usize| {
        Poly::affine(
            origin[axis],
            [edges[0][axis], edges[1][axis], edges[2][axis]],
        )
    };
    let poly = coord(0).pow(i).mul(&coord(1).pow(j)).mul(&coord(2).pow(k));
    jac * integrate_over_unit_simplex(&poly, 3)
}

/// Exact integral of `x^i y^j z^k` over a triangle embedded in 3D.
pub fn triangle_monomial_integral(vertices: &[Point3; 3], i: usize, j: usize, k: usize) -> f64 {
    let origin = vertices[0];
    let edges = [sub(vertices[1], origin), sub(vertices[2], origin)];
    let jac = norm(cross(edges[0], edges[1]));
    let coord = |axis: usize| {
        Poly::affine(origin[axis], [edges[0][axis], edges[1][axis], 0.0])
    };
    let poly = coord(0).pow(i).mul(&coord(1).pow(j)).mul(&coord(2).pow(k));
    jac * integrate_over_unit_simplex(&poly, 2)
}

/// Exact integral over the reference tetrahedron of a polynomial given as
/// monomial terms `(i, j, k, coefficient)`.
pub fn ref_tet_poly_integral(terms: &[(usize, usize, usize, f64)]) -> f64 {
    terms
        .iter()
        .map(|&(i, j, k, c)| c * ref_tet_monomial_integral(i, j, k))
        .sum()
}

/// All monomial exponents with total degree at most `max_degree`.
pub fn monomials_up_to(max_degree: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for total in 0..=max_degree {
        for i in 0..=total {
            for j in 0..=(total - i) {
                out.push((i, j, total - i - j));
            }
        }
    }
    out
}
