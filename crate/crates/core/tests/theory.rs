use collab_core::interval_map::PiecewiseExpandingMap;
use collab_core::lattice::{CollisionScheme, Direction, Dynamics, Lattice, Mode};
use collab_core::rational::{q, Q};
use collab_core::theory::*;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lattice(beta: u32, a_plus: &str, a_minus: &str, mode: Mode) -> Lattice {
    Lattice::new(
        CollisionScheme::one_dimensional(5, a_plus, a_minus, "1/20", "1/100", mode).unwrap(),
        PiecewiseExpandingMap::mod_beta(beta).unwrap(),
    )
}

const PLUS: Direction = Direction { axis: 0, positive: true };
const MINUS: Direction = Direction { axis: 0, positive: false };

#[test]
fn preperiodic_centres_never_recur() {
    // 1/6 falls onto {1/3, 2/3} and 3/10 onto {1/5, 2/5, 4/5, 3/5}
    let lat = lattice(2, "1/6", "3/10", Mode::IsolatedNeighborhood);
    let r = detect_recurrence(&lat, 50).unwrap();
    assert!(r.s_rec.is_empty());
    assert!(r.s_tilde_rec.is_empty());
    assert!(r.records.is_empty());
    assert!(r.search_exhausted);
    let dens = DensityInputs::idealized(&lat).unwrap();
    let t = theta_value(&lat, &r, &dens, 1, 40).unwrap();
    assert_eq!(t.theta.exact(), Some(&q(1, 1)));
    let b = closed_form_betas(&r, &t).unwrap();
    let tt = theta_tilde_value(1.0, &b, &[0.0, 0.5, 1.0, 2.0]).unwrap();
    for (s, (th, phi)) in tt.s.iter().zip(tt.theta_tilde.iter().zip(&tt.phi_x)) {
        assert!((th - 1.0).norm() < 1e-15);
        assert!((phi - Complex64::from_polar(1.0, *s)).norm() < 1e-15);
    }
}

#[test]
fn two_cycle_recurs_with_the_cycle_length() {
    let lat = lattice(2, "1/3", "2/3", Mode::IsolatedNeighborhood);
    let r = detect_recurrence(&lat, 40).unwrap();
    assert_eq!(r.s_rec.len(), 2);
    assert!(r.s_rec.iter().all(|w| w.lag == 2 && w.target == w.source));
    assert_eq!(r.s_tilde_rec.len(), 2);
    assert!(r.s_tilde_rec.iter().all(|w| w.lag == 1 && w.target == w.source.neg()));
    for rec in &r.records {
        let expected = if rec.lag % 2 == 1 { rec.source } else { rec.source.neg() };
        assert_eq!(rec.target, expected);
    }
    // only the lag-1 return to the same channel survives; (1/4)(1/4)/2 per channel
    let dens = DensityInputs::idealized(&lat).unwrap();
    let t = theta_value(&lat, &r, &dens, 1, 40).unwrap();
    assert_eq!(t.theta.exact(), Some(&q(15, 16)));
    assert_eq!(t.terms.len(), 2);
    assert!(t.terms.iter().all(|x| x.lag == 1 && x.q.exact() == Some(&q(1, 32))));
    assert!(closed_form_betas(&r, &t).is_err());
}

#[test]
fn orbit_mismatch_gives_zero() {
    let lat = lattice(2, "1/3", "2/3", Mode::IsolatedNeighborhood);
    let r = detect_recurrence(&lat, 10).unwrap();
    let dens = DensityInputs::idealized(&lat).unwrap();
    let mut rec = r.records.iter().find(|x| x.lag == 1).unwrap().clone();
    rec.lag = 2;
    let t = q_k_value(&lat, &r, &rec, 1, &dens).unwrap();
    assert!(t.q.is_zero());
}

#[test]
fn example_terms_in_both_conventions() {
    let lat = example_lattice().unwrap();
    let r = detect_recurrence(&lat, DEFAULT_K_MAX).unwrap();
    let dens = DensityInputs::idealized(&lat).unwrap();
    let head = theta_value(&lat, &r, &dens, 1, 40).unwrap();
    let sum: Q = head.terms.iter().map(|t| t.q.exact().unwrap().clone()).sum();
    assert_eq!(sum, q(1, 625));
    assert!(head.terms.iter().all(|t| t.lag == 1));
    let k0 = theta_value(&lat, &r, &dens, 0, 40).unwrap();
    assert!(k0.terms.iter().all(|t| t.lag == 0 && t.q.exact() == Some(&q(1, 50))));
    assert_eq!(k0.theta.exact(), Some(&q(24, 25)));
    assert_eq!(head.tail_bound, 5f64.powi(-80));
}

#[test]
fn rational_results_do_not_depend_on_float_precision() {
    let lat = example_lattice().unwrap();
    let r = detect_recurrence(&lat, 60).unwrap();
    let dens = DensityInputs::idealized(&lat).unwrap();
    let a = theta_value(&lat, &r, &dens, 1, 40).unwrap();
    let r2 = detect_recurrence(&lat, 120).unwrap();
    let b = theta_value(&lat, &r2, &dens, 1, 80).unwrap();
    assert_eq!(a.theta.exact(), b.theta.exact());
}

#[test]
fn estimated_densities_reproduce_the_example() {
    let lat = example_lattice().unwrap();
    let r = detect_recurrence(&lat, 20).unwrap();
    let dens = DensityInputs::estimated(&lat, 16, 4, 7).unwrap();
    let t = theta_value(&lat, &r, &dens, 1, 20).unwrap();
    assert!((t.theta.to_f64() - 0.9984).abs() < 1e-9, "{}", t.theta.to_f64());
}

#[test]
fn bulk_swap_probability_matches_monte_carlo() {
    let lat = lattice(2, "1/3", "2/3", Mode::FullLattice);
    let r = detect_recurrence(&lat, 10).unwrap();
    let s = &lat.scheme;
    let f = s.focal();
    let q1 = s.neighbor(f, PLUS);
    let q2 = s.neighbor(q1, PLUS);
    let stay = index_probability(&lat, &r, q1, PLUS, 1, q1, &[]).unwrap();
    let moved = index_probability(&lat, &r, q1, PLUS, 1, q2, &[]).unwrap();
    assert_eq!(stay.exact(), Some(&q(19, 20)));
    assert_eq!(moved.exact(), Some(&q(1, 20)));
    // a coordinate sitting on a_{-1} next to p* only faces p* and never moves
    let fixed = index_probability(&lat, &r, q1, MINUS, 1, q1, &[]).unwrap();
    assert_eq!(fixed.exact(), Some(&q(1, 1)));

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let mut moves = 0;
    let mut buf = Vec::new();
    for _ in 0..n {
        let mut x: Vec<f64> = (0..s.n_sites()).map(|_| rng.random::<f64>()).collect();
        x[q1] = 1.0 / 3.0;
        lat.swap_stage(&mut x, Dynamics::DecoupledAtFocal, &mut buf);
        if x[q1] != 1.0 / 3.0 {
            moves += 1;
        }
    }
    let p = moves as f64 / n as f64;
    let se = (0.05f64 * 0.95 / n as f64).sqrt();
    assert!((p - 0.05).abs() < 4.0 * se, "{p}");
}

#[test]
fn synthetic_single_term() {
    let table = BetaTable {
        entries: vec![BetaEntry {
            k: 0,
            j: 0,
            beta1: 1.0 / 25.0,
            beta2: 0.0,
            stderr1: None,
            stderr2: None,
        }],
        estimated: false,
    };
    let tt = theta_tilde_value(24.0 / 25.0, &table, &[0.0, 1.0]).unwrap();
    assert!((tt.theta_tilde[0].re - 0.96).abs() < 1e-15);
    assert!(tt.consistent_at_zero);
    assert!((tt.phi_x[0] - 1.0).norm() < 1e-15);
    let bad = BetaTable {
        entries: vec![BetaEntry {
            k: 0,
            j: 0,
            beta1: 0.7,
            beta2: 0.6,
            stderr1: None,
            stderr2: None,
        }],
        estimated: false,
    };
    assert!(theta_tilde_value(0.3, &bad, &[0.0]).is_err());
}

#[test]
fn phi_is_a_characteristic_function_on_a_grid() {
    let r = example_report().unwrap();
    let tt = r.theta_tilde.unwrap();
    for p in &tt.phi_x {
        assert!(p.norm() <= 1.0 + 1e-9);
    }
    assert!(tt.warnings.is_empty());
}
