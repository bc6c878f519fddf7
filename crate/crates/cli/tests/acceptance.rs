//! Acceptance suite: one test per criterion, each printing its measured
//! values and runtime (visible with `--nocapture`). Run with
//! `cargo test --test acceptance`.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rq1_cli::{run_convergence, run_infsup, run_poiseuille, slopes_within_thresholds, verify_element};
use rq1_core::analysis::{estimate_korn, solve_manufactured, ManufacturedCase, StudyDomain};
use rq1_core::assembly::{assemble_divergence_operator, DivergenceForm, OperatorKind};
use rq1_core::mesh::generate_box_mesh;
use rq1_core::spaces::{face_jump_normal_integral, PressureDofMap, VelocityDofMap};
use std::time::Instant;

fn budget(start: Instant, seconds: f64, what: &str) {
    let elapsed = start.elapsed().as_secs_f64();
    println!("{what}: runtime {elapsed:.2}s (budget {seconds}s)");
    assert!(elapsed < seconds, "{what} exceeded its runtime budget");
}

#[test]
fn criterion_1_element_identity_suite() {
    let start = Instant::now();
    let report = verify_element(false);
    let element_checks = [
        "lagrange_property",
        "partition_of_unity",
        "gradient_sum_zero",
        "nodal_map_determinant",
        "sum_of_squares_nodal_values",
        "midpoint_quadrature_on_shape_space",
    ];
    for check in &report.checks {
        if element_checks.contains(&check.name) {
            println!("  {} value={:.3e}", check.name, check.value);
            assert!(check.pass(), "{} failed: {:.3e}", check.name, check.value);
        }
    }
    budget(start, 1.0, "criterion 1 (element identities, tolerance 1e-12)");
}

#[test]
fn criterion_2_reference_constant_reproduction() {
    let start = Instant::now();
    let report = verify_element(false);
    let constant_checks = [
        "reference_bulk_constant_4_9",
        "reference_boundary_constant_4_15",
        "reference_net_constant_8_45",
        "face_jacobian_identity",
    ];
    for check in &report.checks {
        if constant_checks.contains(&check.name) {
            println!("  {} value={:.3e}", check.name, check.value);
            assert!(check.pass(), "{} failed: {:.3e}", check.name, check.value);
        }
    }
    budget(start, 5.0, "criterion 2 (reference constants and face-Jacobian identity)");
}

#[test]
fn criterion_3_affine_patch_test() {
    let start = Instant::now();
    let mesh = generate_box_mesh([1.0, 1.0, 1.0], [2, 2, 2]).unwrap();
    let case = ManufacturedCase::affine_patch();
    for form in [DivergenceForm::Consistent, DivergenceForm::Tilde] {
        let (vmap, _pmap, solution) =
            solve_manufactured(&mesh, &case, form, OperatorKind::Laplacian).unwrap();
        let interpolant = vmap.interpolate(&mesh, case.velocity);
        let scale = interpolant
            .coeffs
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let max_err = solution
            .velocity
            .coeffs
            .iter()
            .zip(interpolant.coeffs.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let pressure_err = solution
            .pressure
            .coeffs
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        println!(
            "  {form:?}: velocity error {:.3e} (relative), pressure {:.3e}",
            max_err / scale,
            pressure_err
        );
        assert!(
            max_err <= 1e-10 * scale,
            "affine field not reproduced with {form:?}: {max_err:.3e}"
        );
        assert!(pressure_err <= 1e-9, "pressure not zero: {pressure_err:.3e}");
    }
    budget(start, 5.0, "criterion 3 (affine patch test at solver tolerance)");
}

#[test]
fn criterion_4_convergence_reproduction() {
    let start = Instant::now();
    for form in [DivergenceForm::Consistent, DivergenceForm::Tilde] {
        let outcome =
            run_convergence(4, form, OperatorKind::Laplacian, StudyDomain::Box).unwrap();
        assert!(outcome.error.is_none(), "study aborted: {:?}", outcome.error);
        let slopes = outcome.table.finest_slopes().unwrap();
        println!(
            "  {form:?}: finest-pair slopes eL2u={:.3} eH1u={:.3} eL2p={:.3}",
            slopes[0], slopes[1], slopes[2]
        );
        assert!(
            slopes_within_thresholds(slopes),
            "slopes {slopes:?} outside (2±0.25, 1±0.2, ≥1.3) with {form:?}"
        );
    }
    budget(start, 600.0, "criterion 4 (convergence rates, both forms, levels h=1/2..1/16)");
}

#[test]
fn criterion_5_infsup_stability() {
    let start = Instant::now();
    for form in [DivergenceForm::Consistent, DivergenceForm::Tilde] {
        let study = run_infsup(3, 4, form);
        assert!(study.error.is_none(), "estimation failed: {:?}", study.error);
        let betas: Vec<f64> = study.rows.iter().map(|&(_, b)| b).collect();
        println!("  {form:?}: betas {betas:?}");
        assert!(betas.iter().all(|&b| b > 0.0), "nonpositive beta with {form:?}");
        let max = betas.iter().cloned().fold(f64::MIN, f64::max);
        let min = betas.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min <= 2.0, "beta ratio {} exceeds 2 with {form:?}", max / min);
    }
    budget(start, 120.0, "criterion 5 (inf-sup stability over 3 refinements, both forms)");
}

#[test]
fn criterion_6_discrete_korn() {
    let start = Instant::now();
    let mut alphas = Vec::new();
    for n in [3usize, 4, 5] {
        let mesh = generate_box_mesh([1.0, 1.0, 1.0], [n, n, n]).unwrap();
        let alpha = estimate_korn(&mesh).unwrap();
        alphas.push(alpha);
    }
    println!("  alphas {alphas:?}");
    assert!(alphas.iter().all(|&a| a > 0.0));
    let max = alphas.iter().cloned().fold(f64::MIN, f64::max);
    let min = alphas.iter().cloned().fold(f64::MAX, f64::min);
    assert!(max / min <= 2.0, "alpha ratio {} exceeds 2", max / min);
    // the constant must not degrade by more than 20% per refinement on the
    // asymptotic tail
    for pair in alphas.windows(2) {
        assert!(pair[1] >= 0.8 * pair[0], "alpha degraded: {alphas:?}");
    }
    budget(start, 120.0, "criterion 6 (discrete Korn constant over 3 refinements)");
}

#[test]
fn criterion_7_nonconformity_control() {
    let start = Instant::now();
    let mesh = generate_box_mesh([1.0, 1.0, 1.0], [3, 3, 3]).unwrap();
    let vmap = VelocityDofMap::new(&mesh);
    let mut rng = StdRng::seed_from_u64(7777);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let mut field = vmap.zero_field();
        for (d, c) in field.coeffs.iter_mut().enumerate() {
            if !vmap.is_boundary(d) {
                *c = rng.gen_range(-1.0..1.0);
            }
        }
        for f in 0..mesh.n_faces() {
            worst = worst.max(face_jump_normal_integral(&mesh, &vmap, &field, f).abs());
        }
    }
    println!("  max |int_F [n.v]| over 50 random fields: {worst:.3e}");
    assert!(worst <= 1e-12);
    budget(start, 10.0, "criterion 7 (face jump means vanish)");
}

#[test]
fn criterion_8_form_equivalence_on_conforming_fields() {
    let start = Instant::now();
    let mesh = generate_box_mesh([1.0, 1.0, 1.0], [2, 2, 2]).unwrap();
    let vmap = VelocityDofMap::new(&mesh);
    let pmap = PressureDofMap::new(&mesh);
    let bc = assemble_divergence_operator(&mesh, &vmap, &pmap, DivergenceForm::Consistent);
    let bt = assemble_divergence_operator(&mesh, &vmap, &pmap, DivergenceForm::Tilde);
    let mut rng = StdRng::seed_from_u64(4242);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        // continuous piecewise-linear field vanishing on the boundary,
        // sampled at the edge midpoints
        let mut vertex_values = vec![[0.0; 3]; mesh.n_vertices()];
        for (v, val) in vertex_values.iter_mut().enumerate() {
            if !mesh.is_boundary_vertex(v) {
                *val = [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ];
            }
        }
        let mut field = vmap.zero_field();
        for e in 0..mesh.n_edges() {
            let (a, b) = mesh.edge(e);
            for (comp, (&va, &vb)) in vertex_values[a].iter().zip(&vertex_values[b]).enumerate() {
                field.coeffs[vmap.dof(e, comp)] = 0.5 * (va + vb);
            }
        }
        let yc = bc.matvec(&field.coeffs);
        let yt = bt.matvec(&field.coeffs);
        for (a, b) in yc.iter().zip(yt.iter()) {
            worst = worst.max((a - b).abs());
        }
    }
    println!("  max |B v - B~ v| on conforming fields: {worst:.3e}");
    assert!(worst <= 1e-11);
    budget(start, 5.0, "criterion 8 (form agreement on conforming fields)");
}

#[test]
fn criterion_9_poiseuille_demo() {
    let start = Instant::now();
    for operator in [OperatorKind::Laplacian, OperatorKind::Strain] {
        let report = run_poiseuille(operator, None).unwrap();
        println!(
            "  {operator:?}: flux balance {:.3e}, symmetry defect {:.3e}, strips monotone {}",
            report.flux_balance, report.symmetry_defect, report.strips_monotone
        );
        assert!(report.flux_balance <= 0.02, "flux imbalance with {operator:?}");
        assert!(report.symmetry_defect <= 0.02, "asymmetry with {operator:?}");
        assert!(report.strips_monotone, "pressure strips not monotone with {operator:?}");
    }
    budget(start, 120.0, "criterion 9 (channel demo, both operator forms)");
}
