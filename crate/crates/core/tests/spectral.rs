use collab_core::interval_map::PiecewiseExpandingMap;
use collab_core::lattice::{CollisionScheme, Dynamics, Lattice, Mode};
use collab_core::ulam::{
    box_escape_rate, build_operator, leading_eigen, marginal_density, operator_gap_diagnostics, BoxModel, BoxShape,
    OperatorKind,
};
use num_complex::Complex64;

fn example(delta: &str) -> Lattice {
    Lattice::new(
        CollisionScheme::worked_example(3, delta, Mode::IsolatedNeighborhood).unwrap(),
        PiecewiseExpandingMap::mod_beta(5).unwrap(),
    )
}

#[test]
fn row_sums_of_the_three_operator_kinds() {
    let lat = example("1/50");
    for dynamics in [Dynamics::Full, Dynamics::DecoupledAtFocal] {
        let m = BoxModel::lattice(&lat, BoxShape::Triple, 12, dynamics, true).unwrap();
        let closed = build_operator::<f64>(&m, OperatorKind::Closed).unwrap().row_sums();
        let open = build_operator::<f64>(&m, OperatorKind::Open).unwrap().row_sums();
        let s = 0.7;
        let twisted = build_operator::<Complex64>(&m, OperatorKind::Twisted { s }).unwrap().row_sums();
        let e = Complex64::from_polar(1.0, s);
        for i in 0..m.n_cells() {
            let f = m.hole_fraction(i);
            assert!((closed[i] - 1.0).abs() < 1e-12);
            assert!((open[i] - (1.0 - f)).abs() < 1e-12);
            assert!((twisted[i] - (1.0 + (e - 1.0) * f)).norm() < 1e-12);
        }
    }
}

#[test]
fn escape_eigenvalue_decreases_with_delta() {
    let mut last = 1.0;
    for d in ["1/200", "1/100", "1/50", "1/25"] {
        let (_, r) = box_escape_rate(&example(d), BoxShape::Triple, 24, true).unwrap();
        assert!(r.lambda < last, "delta {d}: {} !< {last}", r.lambda);
        last = r.lambda;
    }
}

#[test]
fn escape_eigenvalue_does_not_depend_on_refined_grid() {
    // the refined grid is Markov for the affine map, so the Ulam matrix is exact
    let lat = example("1/100");
    let a = box_escape_rate(&lat, BoxShape::Triple, 20, true).unwrap().1.lambda;
    let b = box_escape_rate(&lat, BoxShape::Triple, 48, true).unwrap().1.lambda;
    assert!((a - b).abs() < 1e-9, "{a} vs {b}");
}

#[test]
fn lebesgue_input_loses_exactly_the_hole_measure() {
    let lat = example("1/50");
    let d = operator_gap_diagnostics(&lat, BoxShape::Triple, 40, &[0.02, 0.01, 0.005]).unwrap();
    for row in &d.rows {
        assert!((row.mass_removed - 2.0 * row.delta * row.delta).abs() < 1e-12, "{row:?}");
    }
    assert!(d.loglog_slope >= 1.0, "slope {}", d.loglog_slope);
}

#[test]
fn closed_decoupled_marginals_are_uniform() {
    let lat = example("1/50");
    let m = BoxModel::lattice(&lat, BoxShape::Triple, 20, Dynamics::DecoupledAtFocal, true).unwrap();
    let op = build_operator::<f64>(&m, OperatorKind::Closed).unwrap();
    let r = leading_eigen(&op, &m.lebesgue(), 1e-12, 10_000).unwrap();
    assert!((r.lambda - 1.0).abs() < 1e-12);
    for axis in 0..3 {
        let rho = marginal_density(&r, &m, axis, None).unwrap();
        assert!(rho.values().iter().all(|v| (v - 1.0).abs() < 1e-9));
    }
}

#[test]
fn doubling_map_hole_at_fixed_point_has_index_one_half() {
    let two = PiecewiseExpandingMap::mod_beta(2).unwrap();
    let eta = 1.0 / 256.0;
    let m = BoxModel::interval(&two, 1 << 12, Some((0.0, eta)), false).unwrap();
    let op = build_operator::<f64>(&m, OperatorKind::Open).unwrap();
    let r = leading_eigen(&op, &m.lebesgue(), 1e-12, 100_000).unwrap();
    let ratio = (1.0 - r.lambda) / eta;
    assert!((ratio - 0.5).abs() < 0.025, "ratio {ratio}");
}
