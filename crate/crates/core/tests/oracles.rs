use std::f64::consts::SQRT_2;

use nalgebra::{DMatrix, DVector};

use spde_lab::lattice::{BoundaryCondition, GridSpec};
use spde_lab::noise::{
    cell_covariance, empirical_covariance, replica_rng, sample_path, Aggregator, CovarianceFactor, NoiseModel,
};
use spde_lab::operators::{axis_eigenvalue, build_laplacian, SpectralData, StepOperator};
use spde_lab::schemes::{run, Coefficient, CoefficientSet, InitialCondition, SchemeKind, SchemeRun};
use spde_lab::study::loglog_regression;

fn dense(grid: &GridSpec) -> DMatrix<f64> {
    let size = grid.lattice_size();
    DMatrix::from_row_slice(size, size, &build_laplacian(grid).dense().unwrap())
}

#[test]
fn eigenvectors_diagonalize_the_dense_operator() {
    for bc in [BoundaryCondition::Dirichlet, BoundaryCondition::Neumann] {
        let grid = GridSpec::new(1, 12, 1, 1.0, bc).unwrap();
        let spec = SpectralData::new(&grid);
        let p = grid.axis_len();
        let v = DMatrix::from_row_slice(p, p, spec.axis_vectors());
        let d = &v * dense(&grid) * v.transpose();
        for i in 0..p {
            for j in 0..p {
                let want = if i == j { spec.axis_eigenvalues()[i] } else { 0.0 };
                assert!((d[(i, j)] - want).abs() < 1e-9, "{bc:?} ({i},{j})");
            }
        }
    }
}

#[test]
fn step_operator_matches_dense_solves_in_three_dimensions() {
    let grid = GridSpec::new(3, 4, 5, 1.0, BoundaryCondition::Neumann).unwrap();
    let size = grid.lattice_size();
    let a = dense(&grid);
    let x = DVector::from_fn(size, |i, _| ((i * 37 % 11) as f64 - 5.0) / 3.0);
    let op = StepOperator::new(&grid);
    let implicit = (DMatrix::identity(size, size) - &a * grid.dt()).lu().solve(&x).unwrap();
    let explicit = (DMatrix::identity(size, size) + &a * grid.dt()) * &x;
    let gi = op.implicit(x.as_slice());
    let ge = op.explicit(x.as_slice());
    for i in 0..size {
        assert!((gi[i] - implicit[i]).abs() < 1e-10);
        assert!((ge[i] - explicit[i]).abs() < 1e-9);
    }
}

#[test]
fn covariance_factor_reproduces_its_matrix() {
    for dim in [1, 2] {
        let grid = GridSpec::new(dim, 6, 1, 1.0, BoundaryCondition::Neumann).unwrap();
        let model = NoiseModel::riesz(0.7, dim).unwrap();
        let f = CovarianceFactor::build(&model, &grid).unwrap();
        let k = f.cells();
        let l = DMatrix::from_row_slice(k, f.rank(), f.factor());
        let c = DMatrix::from_row_slice(k, k, f.covariance());
        assert!((&l * l.transpose() - &c).amax() <= 1e-9 * c.amax());
        // scaled increments: C = n^{2d} (m/T) gamma
        let scale = 6f64.powi(2 * dim as i32);
        for a in 0..k {
            for b in 0..k {
                let direct = scale * cell_covariance(&model, &grid, a, b).unwrap();
                assert!((c[(a, b)] - direct).abs() <= 1e-12 * c.amax(), "d={dim} ({a},{b})");
            }
        }
    }
}

#[test]
fn riesz_noise_sample_covariance_within_four_standard_errors() {
    let grid = GridSpec::unit(1, 16, 1).unwrap();
    let factor = CovarianceFactor::build(&NoiseModel::riesz(0.5, 1).unwrap(), &grid).unwrap();
    let check = empirical_covariance(&factor, 50_000, 11).unwrap();
    assert_eq!(check.entries.len(), 15 * 16 / 2);
    assert!(check.max_deviation() < 4.0, "{}", check.max_deviation());
}

#[test]
fn aggregation_identity_in_two_dimensions() {
    let model = NoiseModel::riesz(1.2, 2).unwrap();
    for bc in [BoundaryCondition::Dirichlet, BoundaryCondition::Neumann] {
        let fine = GridSpec::new(2, 4, 2, 1.0, bc).unwrap();
        let coarse = GridSpec::new(2, 2, 1, 1.0, bc).unwrap();
        let stacked = |g: &GridSpec| {
            let k = g.lattice_size();
            let c = DMatrix::from_row_slice(k, k, CovarianceFactor::build(&model, g).unwrap().covariance());
            let mut s = DMatrix::zeros(k * g.m(), k * g.m());
            for step in 0..g.m() {
                s.view_mut((step * k, step * k), (k, k)).copy_from(&c);
            }
            s
        };
        let (rows, cols, a) = Aggregator::new(&fine, &coarse).unwrap().matrix();
        let a = DMatrix::from_row_slice(rows, cols, &a);
        let diff = &a * stacked(&fine) * a.transpose() - stacked(&coarse);
        assert!(diff.amax() < 1e-8, "{bc:?}: {}", diff.amax());
    }
}

#[test]
fn explicit_scheme_converges_in_time_without_noise() {
    // u0 = sqrt(2) sin(pi x) decays by (1 + dt lambda_1)^m on the lattice.
    let n = 8;
    let errors: Vec<(f64, f64)> = [256usize, 512, 1024, 2048]
        .iter()
        .map(|&m| {
            let grid = GridSpec::unit(1, n, m).unwrap();
            let scheme = SchemeRun::new(
                grid,
                CoefficientSet::zero(),
                InitialCondition::SineProduct { amplitude: SQRT_2 },
                NoiseModel::riesz(0.5, 1).unwrap(),
                SchemeKind::Explicit,
            )
            .unwrap();
            let factor = CovarianceFactor::build(scheme.noise(), &grid).unwrap();
            let slabs = sample_path(&factor, &mut replica_rng(3, 0));
            let last = run(&scheme, &slabs).unwrap().last().unwrap().values().to_vec();
            let exact = axis_eigenvalue(n, 1).exp();
            // lattice point x = 1/2
            (m as f64, (last[n / 2 - 1] / SQRT_2 - exact).abs())
        })
        .collect();
    let fit = loglog_regression(&errors).unwrap();
    assert!((fit.slope - 1.0).abs() < 0.1, "{}", fit.slope);
}

#[test]
fn zero_sigma_runs_ignore_the_noise() {
    let grid = GridSpec::unit(1, 16, 32).unwrap();
    let scheme = SchemeRun::new(
        grid,
        CoefficientSet::new(Coefficient::Constant(0.0), Coefficient::Affine { a: -1.0, b: 0.5 }),
        InitialCondition::Bump,
        NoiseModel::riesz(0.5, 1).unwrap(),
        SchemeKind::Implicit,
    )
    .unwrap();
    let factor = CovarianceFactor::build(scheme.noise(), &grid).unwrap();
    let a = run(&scheme, &sample_path(&factor, &mut replica_rng(1, 0))).unwrap();
    let b = run(&scheme, &sample_path(&factor, &mut replica_rng(2, 0))).unwrap();
    assert_eq!(a.levels(), b.levels());
}
