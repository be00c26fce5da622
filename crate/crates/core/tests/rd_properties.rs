use approx::assert_abs_diff_eq;
use bregman_ab::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn instance() -> RdProblem {
    RdProblem::new(
        DiscreteDistribution::new(vec![0.5, 0.3, 0.2]).unwrap(),
        vec![vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 0.0], vec![3.0, 0.0, 1.0]],
        1.5,
    )
    .unwrap()
}

fn random_problem(rng: &mut ChaCha8Rng, d1: usize, d2: usize) -> RdProblem {
    loop {
        let p_x = DiscreteDistribution::normalized((0..d1).map(|_| rng.random_range(0.2..1.0)).collect()).unwrap();
        let r: Vec<Vec<f64>> = (0..d1).map(|_| (0..d2).map(|_| rng.random_range(0.0..3.0)).collect()).collect();
        if (r[d1 - 1][d2 - 1] - r[d1 - 1][d2 - 2]).abs() < 0.3 {
            continue;
        }
        let lo: f64 =
            p_x.probs().iter().zip(&r).map(|(p, row)| p * row.iter().copied().fold(f64::INFINITY, f64::min)).sum();
        let hi: f64 = p_x.probs().iter().zip(&r).map(|(p, row)| p * row.iter().sum::<f64>() / d2 as f64).sum();
        let c = lo + rng.random_range(0.3..0.8) * (hi - lo);
        if let Ok(p) = RdProblem::new(p_x, r, c) {
            return p;
        }
    }
}

fn random_channel(rng: &mut ChaCha8Rng, d1: usize, d2: usize, floor: f64) -> ConditionalDistribution {
    ConditionalDistribution::normalized(
        (0..d1).map(|_| (0..d2).map(|_| floor + rng.random_range(0.0..1.0)).collect()).collect(),
    )
    .unwrap()
}

/// Mutual information of a joint table by direct summation.
fn direct_mi(joint: &JointTable) -> f64 {
    let px = joint.row_sums();
    let py = joint.column_sums();
    let mut total = 0.0;
    for (x, qx) in px.iter().enumerate() {
        for (y, qy) in py.iter().enumerate() {
            let p = joint.get(x, y);
            if p > 0.0 {
                total += p * (p / (qx * qy)).ln();
            }
        }
    }
    total
}

fn third_instance_eta() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, 5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn affine_identities_hold_for_any_eta(eta in third_instance_eta()) {
        let problem = instance();
        let basis = build_rd_basis(&problem).unwrap();
        let joint = joint_from_eta(&problem, &basis, &eta).unwrap();
        for (a, b) in joint.row_sums().iter().zip(problem.p_x().probs()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        prop_assert!((joint.expected(problem.distortion()) - 1.5).abs() <= 1e-10);
    }

    #[test]
    fn negative_column_mass_is_bounded_by_negative_cell_mass(eta in third_instance_eta()) {
        let problem = instance();
        let basis = build_rd_basis(&problem).unwrap();
        let joint = joint_from_eta(&problem, &basis, &eta).unwrap();
        let cells: f64 = joint.values().iter().filter(|v| **v < 0.0).map(|v| v.abs()).sum();
        let columns: f64 = joint.column_sums().iter().filter(|v| **v < 0.0).map(|v| v.abs()).sum();
        prop_assert!(cells >= columns - 1e-15);
    }
}

#[test]
fn duals_match_a_direct_linear_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut problems =
        vec![RdProblem::new(DiscreteDistribution::uniform(2).unwrap(), vec![vec![0.0, 1.0], vec![1.0, 0.0]], 0.2)
            .unwrap()];
    for (d1, d2) in [(2, 3), (3, 3), (3, 4), (4, 2)] {
        problems.push(random_problem(&mut rng, d1, d2));
    }
    for problem in problems {
        let basis = build_rd_basis(&problem).unwrap();
        let (d1, d2) = basis.shape();
        let n = d1 * d2;
        let d0 = basis.free_count();
        assert_eq!(d0, d1 * (d2 - 1) - 1);
        // Rows: pairing with each free-cell indicator, with R, and with each source row.
        let mut m = DMatrix::zeros(n, n);
        for (i, &(x, y)) in basis.cells().iter().enumerate() {
            m[(i, x * d2 + y)] = 1.0;
        }
        for (x, row) in problem.distortion().iter().enumerate() {
            for (y, r) in row.iter().enumerate() {
                m[(d0, x * d2 + y)] = *r;
                m[(d0 + 1 + x, x * d2 + y)] = 1.0;
            }
        }
        let lu = m.lu();
        for (j, g) in basis.duals().iter().enumerate() {
            let mut rhs = DVector::zeros(n);
            rhs[j] = 1.0;
            let solved = lu.solve(&rhs).unwrap();
            for (a, b) in solved.iter().zip(g) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }
}

#[test]
fn objective_matches_direct_mutual_information_on_interior_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..30 {
        let problem = instance();
        let basis = build_rd_basis(&problem).unwrap();
        let w = random_channel(&mut rng, 3, 3, 0.05);
        let eta = basis.eta_of_joint(&JointTable::from_channel(problem.p_x(), &w));
        let joint = joint_from_eta(&problem, &basis, &eta).unwrap();
        if joint.min_entry() < 1e-3 {
            continue;
        }
        let value = rd_objective(&problem, &basis, 1e-4, &eta).unwrap();
        assert_abs_diff_eq!(value, direct_mi(&joint), epsilon = 1e-12);
        // Lowering ε below the smallest entry changes nothing.
        let changed = rd_objective(&problem, &basis, 1e-5, &eta).unwrap();
        assert!((changed - value).abs() < 1e-12);
    }
}

#[test]
fn omega_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let problem = instance();
    let basis = build_rd_basis(&problem).unwrap();
    let mut checked = 0;
    while checked < 20 {
        let w = random_channel(&mut rng, 3, 3, 0.1);
        let eta = basis.eta_of_joint(&JointTable::from_channel(problem.p_x(), &w));
        if joint_from_eta(&problem, &basis, &eta).unwrap().min_entry() < 1e-2 {
            continue;
        }
        let omega = rd_omega(&problem, &basis, 1e-4, &eta).unwrap();
        for j in 0..eta.len() {
            let h = 1e-6;
            let mut plus = eta.clone();
            let mut minus = eta.clone();
            plus[j] += h;
            minus[j] -= h;
            let fd = (rd_objective(&problem, &basis, 1e-4, &plus).unwrap()
                - rd_objective(&problem, &basis, 1e-4, &minus).unwrap())
                / (2.0 * h);
            assert_abs_diff_eq!(fd, omega.free[j], epsilon = 1e-4);
        }
        checked += 1;
    }
}

#[test]
fn product_joint_has_zero_objective_and_gradient() {
    // c equal to the distortion of the uniform product channel keeps it feasible.
    let p_x = DiscreteDistribution::new(vec![0.5, 0.3, 0.2]).unwrap();
    let r = vec![vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 0.0], vec![3.0, 0.0, 1.0]];
    let uniform = ConditionalDistribution::new(vec![vec![1.0 / 3.0; 3]; 3]).unwrap();
    let c = expected_distortion(&p_x, &uniform, &r);
    let problem = RdProblem::new(p_x.clone(), r, c).unwrap();
    let basis = build_rd_basis(&problem).unwrap();
    let eta = basis.eta_of_joint(&JointTable::from_channel(&p_x, &uniform));
    assert_abs_diff_eq!(rd_objective(&problem, &basis, 1e-4, &eta).unwrap(), 0.0, epsilon = 1e-12);
    let omega = rd_omega(&problem, &basis, 1e-4, &eta).unwrap();
    for v in omega.free.iter().chain(std::iter::once(&omega.last)) {
        assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-12);
    }
}

#[test]
fn coordinate_round_trip_from_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (d1, d2) in [(2, 2), (3, 3), (3, 4)] {
        let problem = random_problem(&mut rng, d1, d2);
        let basis = build_rd_basis(&problem).unwrap();
        // Any channel meeting the distortion level is reproduced exactly;
        // an em solution is one.
        let sol = em_solve(&problem, &SolverConfig::default()).unwrap();
        let joint = JointTable::from_channel(problem.p_x(), &sol.w);
        let rebuilt = joint_from_eta(&problem, &basis, &basis.eta_of_joint(&joint)).unwrap();
        for (a, b) in rebuilt.values().iter().zip(joint.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }
}

#[test]
fn em_is_monotone_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (d1, d2) in [(2, 2), (3, 3), (4, 4), (3, 5)] {
        let problem = random_problem(&mut rng, d1, d2);
        let sol = em_solve(&problem, &SolverConfig::default()).unwrap();
        for pair in sol.trace.rows.windows(2) {
            assert!(pair[1].objective <= pair[0].objective + 1e-10);
        }
        assert!((sol.distortion - problem.level()).abs() < 1e-9);
    }
}

#[test]
fn f_hat_matches_direct_evaluation() {
    let problem = instance();
    let p_y = DiscreteDistribution::uniform(3).unwrap();
    let tau = 0.5;
    let f = f_hat(problem.p_x(), &p_y, problem.distortion(), 1.5, tau);
    let mut direct = 0.0;
    for (px, row) in problem.p_x().probs().iter().zip(problem.distortion()) {
        let inner: f64 = row.iter().map(|r| (tau * (1.5 - r)).exp() / 3.0).sum();
        direct += px * inner.ln();
    }
    assert_abs_diff_eq!(f.value, direct, epsilon = 1e-14);
    let h = 1e-5;
    let plus = f_hat(problem.p_x(), &p_y, problem.distortion(), 1.5, tau + h);
    let minus = f_hat(problem.p_x(), &p_y, problem.distortion(), 1.5, tau - h);
    assert_abs_diff_eq!(f.first, (plus.value - minus.value) / (2.0 * h), epsilon = 1e-8);
    assert_abs_diff_eq!(f.second, (plus.first - minus.first) / (2.0 * h), epsilon = 1e-8);
}

#[test]
fn infeasible_level_is_rejected() {
    let p_x = DiscreteDistribution::new(vec![0.5, 0.3, 0.2]).unwrap();
    let r = vec![vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 0.0], vec![3.0, 0.0, 1.0]];
    assert!(RdProblem::new(p_x.clone(), r.clone(), 0.0).is_err());
    assert!(RdProblem::new(p_x.clone(), r.clone(), 2.2).is_err());
    assert!(RdProblem::new(p_x, r, 2.19).is_ok());
}
