use proptest::prelude::*;

use spde_lab::lattice::{kappa, BoundaryCondition, GridSpec};
use spde_lab::noise::{aggregate, NoiseSlab};
use spde_lab::operators::{build_laplacian, StepOperator};
use spde_lab::study::{fit_line, loglog_regression};

fn bc() -> impl Strategy<Value = BoundaryCondition> {
    prop_oneof![Just(BoundaryCondition::Dirichlet), Just(BoundaryCondition::Neumann)]
}

fn grid() -> impl Strategy<Value = GridSpec> {
    (1usize..=3, 2usize..=9, 1usize..=16, bc())
        .prop_map(|(d, n, m, bc)| GridSpec::new(d, n, m, 1.0, bc).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flatten_roundtrip(g in grid(), seed in any::<u64>()) {
        let flat = (seed as usize % g.lattice_size()) + 1;
        let ks = g.unflatten_index(flat).unwrap();
        prop_assert_eq!(g.flatten_index(&ks).unwrap(), flat);
        prop_assert!(ks.iter().all(|&k| k >= 1 && k <= g.axis_len()));
    }

    #[test]
    fn kappa_brackets_its_argument(y in 0.0f64..1.0, n in 1usize..200) {
        let k = kappa(y, n);
        prop_assert!(k <= y + 1e-15);
        prop_assert!(y < k + 1.0 / n as f64 + 1e-15);
        prop_assert!(((k * n as f64).round() - k * n as f64).abs() < 1e-9);
    }

    #[test]
    fn laplacian_is_symmetric_and_nonpositive(g in grid(), v in prop::collection::vec(-1.0f64..1.0, 729)) {
        let lap = build_laplacian(&g);
        let size = g.lattice_size();
        let x = &v[..size];
        let y: Vec<f64> = v[..size].iter().rev().copied().collect();
        let ax = lap.apply(x);
        let ay = lap.apply(&y);
        let xay: f64 = x.iter().zip(&ay).map(|(a, b)| a * b).sum();
        let yax: f64 = y.iter().zip(&ax).map(|(a, b)| a * b).sum();
        let scale = (g.n() * g.n()) as f64 * size as f64;
        prop_assert!((xay - yax).abs() <= 1e-12 * scale);
        let xax: f64 = x.iter().zip(&ax).map(|(a, b)| a * b).sum();
        prop_assert!(xax <= 1e-12 * scale);
    }

    #[test]
    fn implicit_step_is_a_sup_norm_contraction(g in grid(), v in prop::collection::vec(-1.0f64..1.0, 729)) {
        let op = StepOperator::new(&g);
        let x = &v[..g.lattice_size()];
        let y = op.implicit(x);
        let sup = |z: &[f64]| z.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        prop_assert!(sup(&y) <= sup(x) * (1.0 + 1e-12));
    }

    #[test]
    fn implicit_step_inverts_the_forward_operator(g in grid(), v in prop::collection::vec(-1.0f64..1.0, 729)) {
        let op = StepOperator::new(&g);
        let x = &v[..g.lattice_size()];
        let y = op.implicit(x);
        let lap = build_laplacian(&g).apply(&y);
        let dt = g.dt();
        for ((xi, yi), li) in x.iter().zip(&y).zip(&lap) {
            prop_assert!((yi - dt * li - xi).abs() < 1e-9);
        }
    }

    #[test]
    fn aggregation_is_linear(
        d in 1usize..=2,
        bc in bc(),
        ratio_n in 1usize..=3,
        ratio_m in 1usize..=3,
        a in -2.0f64..2.0,
        seed in any::<u64>(),
    ) {
        let coarse = GridSpec::new(d, 3, 2, 1.0, bc).unwrap();
        let fine = GridSpec::new(d, 3 * ratio_n, 2 * ratio_m, 1.0, bc).unwrap();
        let k = fine.lattice_size();
        let value = |i: usize, j: usize| (((seed >> ((i + j) % 48)) & 0xff) as f64 - 127.5) / 64.0;
        let path = |shift: usize| -> Vec<NoiseSlab> {
            (0..fine.m()).map(|level| NoiseSlab { level, values: (0..k).map(|c| value(level * k + c, shift)).collect() }).collect()
        };
        let (p, q) = (path(0), path(7));
        let combo: Vec<NoiseSlab> = p.iter().zip(&q).map(|(x, y)| NoiseSlab {
            level: x.level,
            values: x.values.iter().zip(&y.values).map(|(u, v)| a * u + v).collect(),
        }).collect();
        let ap = aggregate(&p, &fine, &coarse).unwrap();
        let aq = aggregate(&q, &fine, &coarse).unwrap();
        let ac = aggregate(&combo, &fine, &coarse).unwrap();
        for ((x, y), z) in ap.iter().zip(&aq).zip(&ac) {
            for ((u, v), w) in x.values.iter().zip(&y.values).zip(&z.values) {
                prop_assert!((a * u + v - w).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn regression_matches_normal_equations(
        points in prop::collection::vec((1.0f64..1e4, 1e-8f64..1.0), 3..12),
    ) {
        let mut seen = std::collections::BTreeSet::new();
        prop_assume!(points.iter().all(|(m, _)| seen.insert(m.to_bits())));
        prop_assume!(points.iter().any(|(m, _)| (m - points[0].0).abs() > 1e-3));
        let fit = loglog_regression(&points).unwrap();
        // Normal equations [[k, sx], [sx, sxx]] (b, a) = (sy, sxy).
        let xs: Vec<f64> = points.iter().map(|(m, _)| -m.ln()).collect();
        let ys: Vec<f64> = points.iter().map(|(_, e)| e.ln()).collect();
        let k = xs.len() as f64;
        let sx: f64 = xs.iter().sum();
        let sy: f64 = ys.iter().sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
        let det = k * sxx - sx * sx;
        let slope = (k * sxy - sx * sy) / det;
        let intercept = (sxx * sy - sx * sxy) / det;
        let scale = 1.0 + slope.abs() + intercept.abs();
        prop_assert!((fit.slope - slope).abs() <= 1e-9 * scale * (sxx / det.abs()).max(1.0));
        prop_assert!((fit.intercept - intercept).abs() <= 1e-9 * scale * (sxx / det.abs()).max(1.0));
    }

    #[test]
    fn fit_recovers_exact_lines(a in -3.0f64..3.0, b in -3.0f64..3.0, n in 2usize..10) {
        let xs: Vec<f64> = (0..n).map(|i| i as f64 * 0.7 - 1.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        let fit = fit_line(&xs, &ys).unwrap();
        prop_assert!((fit.slope - a).abs() < 1e-12);
        prop_assert!((fit.intercept - b).abs() < 1e-12);
    }
}
