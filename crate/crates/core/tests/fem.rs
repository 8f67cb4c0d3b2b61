mod common;

use lram::fem::{
    assemble, manufactured_check, mass_matrix, quadrature, sample_fields, stiffness_matrix, structured_mesh,
    FieldDistribution,
};
use lram::lowrank::n_matrix;
use lram::numerics::factorize_spd;
use lram::spde::{critical_tau, least_squares_slope};
use proptest::prelude::*;

fn slope_of(pairs: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = pairs.iter().map(|&(h, e)| (h.ln(), e.ln())).collect();
    least_squares_slope(&pts)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn assembled_matrices_are_symmetric(seed in any::<u64>(), cells in 2usize..9, eps in 0.0f64..0.5) {
        let mesh = structured_mesh(1.0 / cells as f64).unwrap();
        let fields = sample_fields(mesh.num_elements(), 3, eps, FieldDistribution::StandardNormal, seed).unwrap();
        let sys = assemble(&mesh, &fields, |_, _| 1.0).unwrap();
        prop_assert!(sys.abar.is_symmetric(1e-14));
        prop_assert!(sys.phi.is_symmetric(1e-14));
        for a in &sys.atilde {
            prop_assert!(a.is_symmetric(1e-14));
        }
        prop_assert!(factorize_spd(&sys.phi).is_ok());
        prop_assert!(factorize_spd(&sys.abar).is_ok());
    }

    #[test]
    fn perturbations_scale_linearly_in_epsilon(seed in any::<u64>(), cells in 2usize..7, eps in 0.01f64..0.4) {
        let mesh = structured_mesh(1.0 / cells as f64).unwrap();
        let one = sample_fields(mesh.num_elements(), 2, eps, FieldDistribution::UniformSym, seed).unwrap();
        let two = sample_fields(mesh.num_elements(), 2, 2.0 * eps, FieldDistribution::UniformSym, seed).unwrap();
        let a = assemble(&mesh, &one, |_, _| 1.0).unwrap();
        let b = assemble(&mesh, &two, |_, _| 1.0).unwrap();
        for (x, y) in a.atilde.iter().zip(&b.atilde) {
            prop_assert!((x.to_dense() * 2.0 - y.to_dense()).amax() <= 1e-13);
        }
    }
}

#[test]
fn n_matrix_rank_is_bounded_by_interior_count() {
    let mesh = structured_mesh(0.125).unwrap();
    let fields = sample_fields(mesh.num_elements(), 40, 0.2, FieldDistribution::StandardNormal, 1).unwrap();
    let sys = assemble(&mesh, &fields, |_, _| 1.0).unwrap();
    let (k_star, _) = critical_tau(&sys.atilde).unwrap();
    assert!(k_star <= sys.num_interior());
    assert_eq!(k_star, sys.num_interior());
    let nm = n_matrix(&sys.atilde).unwrap();
    for &i in &mesh.boundary_nodes() {
        assert!(nm.row(i).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn manufactured_solution_converges_at_second_order() {
    let errs = manufactured_check(&[1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0]).unwrap();
    assert!(errs.windows(2).all(|w| w[1].1 < w[0].1));
    assert!(slope_of(&errs) >= 1.8, "{errs:?}");
}

#[test]
fn quadrature_integrates_mass_exactly() {
    let mesh = structured_mesh(0.25).unwrap();
    let phi = mass_matrix(&mesh).unwrap();
    let proj = quadrature::project_onto_basis(&mesh, |x, _| x);
    let xs = lram::fem::interpolate(&mesh, |x, _| x);
    let expect = phi.mul_vec(&xs);
    for (a, b) in proj.iter().zip(expect.iter()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn stiffness_rejects_wrong_coefficient_count() {
    let mesh = structured_mesh(0.5).unwrap();
    assert!(stiffness_matrix(&mesh, &[1.0]).is_err());
}
