//! Sanity bounds for the eigenvalue estimators: the reported constants must
//! be true lower bounds of the Rayleigh quotients they minimize, checked by
//! direct evaluation on random fields (a route that bypasses the Cholesky
//! reduction and the eigensolver).

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rq1_core::analysis::{estimate_infsup, estimate_korn};
use rq1_core::assembly::{
    assemble_divergence_operator, assemble_pressure_gram, assemble_velocity_operator,
    pressure_integral_vector, DivergenceForm, OperatorKind, PressureGram, SparseMatrix,
};
use rq1_core::mesh::generate_box_mesh;
use rq1_core::spaces::{PressureDofMap, VelocityDofMap};

fn quad(m: &SparseMatrix, x: &[f64]) -> f64 {
    m.matvec(x).iter().zip(x.iter()).map(|(a, b)| a * b).sum()
}

#[test]
fn infsup_estimate_is_the_minimum_of_the_ratio() {
    // beta^2 = min_q (q^T B A^-1 B^T q) / (q^T (M + h^2 K) q); for any
    // sampled zero-mean q the ratio must be at least beta^2. The supremum
    // over velocities is evaluated directly by solving A w = B^T q with the
    // saddle solver's own building blocks removed: a dense solve here.
    let mesh = generate_box_mesh([1.0, 1.0, 1.0], [2, 2, 2]).unwrap();
    let vmap = VelocityDofMap::new(&mesh);
    let pmap = PressureDofMap::new(&mesh);
    let beta = estimate_infsup(&mesh, DivergenceForm::Consistent).unwrap();

    let a = assemble_velocity_operator(&mesh, &vmap, OperatorKind::Laplacian);
    let b = assemble_divergence_operator(&mesh, &vmap, &pmap, DivergenceForm::Consistent);
    let free: Vec<usize> = (0..vmap.n_dofs())
        .filter(|&d| !vmap.is_boundary(d))
        .collect();
    let all_p: Vec<usize> = (0..pmap.n_dofs()).collect();
    let a_ff = a.restricted(&free, &free);
    let b_f = b.restricted(&all_p, &free);

    let mass = assemble_pressure_gram(&mesh, &pmap, PressureGram::Mass);
    let stiff = assemble_pressure_gram(&mesh, &pmap, PressureGram::Stiffness);
    let h2 = mesh.h() * mesh.h();

    // dense Gaussian elimination for the small SPD block
    let n = free.len();
    let mut dense = vec![vec![0.0f64; n]; n];
    for (r, c, v) in a_ff.iter_triplets() {
        dense[r][c] = v;
    }
    let solve = |dense: &mut Vec<Vec<f64>>, rhs: &mut Vec<f64>| {
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| dense[i][col].abs().total_cmp(&dense[j][col].abs()))
                .unwrap();
            dense.swap(col, pivot);
            rhs.swap(col, pivot);
            let d = dense[col][col];
            for row in col + 1..n {
                let f = dense[row][col] / d;
                if f == 0.0 {
                    continue;
                }
                for k in col..n {
                    dense[row][k] -= f * dense[col][k];
                }
                rhs[row] -= f * rhs[col];
            }
        }
        for col in (0..n).rev() {
            rhs[col] /= dense[col][col];
            for row in 0..col {
                rhs[row] -= dense[row][col] * rhs[col];
            }
        }
    };

    let m_vec = pressure_integral_vector(&mesh);
    let volume: f64 = m_vec.iter().sum();
    let mut rng = StdRng::seed_from_u64(17);
    for _ in 0..20 {
        let mut q: Vec<f64> = (0..pmap.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mean: f64 = m_vec.iter().zip(q.iter()).map(|(a, b)| a * b).sum::<f64>() / volume;
        for qi in q.iter_mut() {
            *qi -= mean;
        }
        let mut rhs = b_f.matvec_transpose(&q);
        let mut work = dense.clone();
        solve(&mut work, &mut rhs);
        let numerator: f64 = b_f
            .matvec(&rhs)
            .iter()
            .zip(q.iter())
            .map(|(a, b)| a * b)
            .sum();
        let denominator = quad(&mass, &q) + h2 * quad(&stiff, &q);
        let ratio = (numerator / denominator).max(0.0).sqrt();
        assert!(
            ratio >= beta - 1e-10,
            "sampled ratio {ratio} undercuts the estimate {beta}"
        );
    }
    let _ = &mut dense;
}

#[test]
fn korn_estimate_is_the_minimum_rayleigh_quotient() {
    let mesh = generate_box_mesh([1.0, 1.0, 1.0], [3, 3, 3]).unwrap();
    let vmap = VelocityDofMap::new(&mesh);
    let alpha = estimate_korn(&mesh).unwrap();

    let lap = assemble_velocity_operator(&mesh, &vmap, OperatorKind::Laplacian);
    let strain = assemble_velocity_operator(&mesh, &vmap, OperatorKind::Strain);
    let mut rng = StdRng::seed_from_u64(23);
    for _ in 0..50 {
        let mut v = vec![0.0; vmap.n_dofs()];
        for (d, vi) in v.iter_mut().enumerate() {
            if !vmap.is_boundary(d) {
                *vi = rng.gen_range(-1.0..1.0);
            }
        }
        let ratio = quad(&strain, &v) / quad(&lap, &v);
        assert!(
            ratio >= alpha - 1e-10,
            "sampled quotient {ratio} undercuts the estimate {alpha}"
        );
    }
    // the quotient is also bounded above by the pure-divergence value
    assert!(alpha < 3.0);
}
