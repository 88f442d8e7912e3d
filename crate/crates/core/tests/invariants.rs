use std::collections::BTreeMap;

use collab_core::interval_map::PiecewiseExpandingMap;
use collab_core::lattice::{
    follow_swaps, CollisionScheme, Direction, Dynamics, IndexVariant, Lattice, LatticeState, Literal, Mode, SchemeSpec,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [Mode; 3] = [Mode::FullLattice, Mode::IsolatedNeighborhood, Mode::Disabled];

/// Centres `(2i+1)/(4d)`, bulk width `1/(4d)`, focal width a quarter of that.
fn lattice(dim: usize, side: usize, mode: Mode, beta: u32) -> Lattice {
    let mut centers = BTreeMap::new();
    for i in 0..2 * dim {
        let label = Direction::from_index(i).label();
        centers.insert(label, Literal::Text(format!("{}/{}", 2 * i + 1, 4 * dim)));
    }
    let scheme = CollisionScheme::new(SchemeSpec {
        dimension: dim,
        side,
        centers,
        epsilon: Literal::Text(format!("1/{}", 4 * dim)),
        delta: Literal::Text(format!("1/{}", 16 * dim)),
        focal_site: Some(vec![1; dim]),
        mode,
    })
    .unwrap();
    Lattice::new(scheme, PiecewiseExpandingMap::mod_beta(beta).unwrap())
}

/// Half the coordinates land near a centre so that swaps are common.
fn state(lat: &Lattice, seed: u64) -> Vec<f64> {
    let s = &lat.scheme;
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<Direction> = s.directions().collect();
    (0..s.n_sites())
        .map(|_| {
            if r.random::<bool>() {
                let v = dirs[r.random_range(0..dirs.len())];
                let (lo, hi) = if r.random::<bool>() { s.delta_zone(v) } else { s.epsilon_zone(v) };
                lo + (hi - lo) * r.random::<f64>()
            } else {
                r.random::<f64>()
            }
        })
        .collect()
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

/// The decoupling rule written coordinate by coordinate: apply the full
/// coupling, then restore `p*` and every neighbour `p*+v` whose coordinate
/// lies in `A_{ε,-v}`.
fn literal_decoupling(lat: &Lattice, x: &[f64]) -> Vec<f64> {
    let s = &lat.scheme;
    let mut full = x.to_vec();
    let mut buf = Vec::new();
    lat.swap_stage(&mut full, Dynamics::Full, &mut buf);
    let focal = s.focal();
    let mut out = full.clone();
    out[focal] = x[focal];
    for v in s.directions() {
        let q = s.neighbor(focal, v);
        let (lo, hi) = s.epsilon_zone(v.neg());
        if lo <= x[q] && x[q] < hi {
            out[q] = x[q];
        }
    }
    out
}

fn params() -> impl Strategy<Value = (usize, usize, usize, u32, u64)> {
    (1usize..=3, 3usize..=5, 0usize..3, prop::sample::select(vec![2u32, 3, 5]), any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coupling_permutes_coordinates((dim, side, mode, beta, seed) in params()) {
        let lat = lattice(dim, side, MODES[mode], beta);
        let x = state(&lat, seed);
        for dynamics in [Dynamics::Full, Dynamics::DecoupledAtFocal] {
            let mut y = x.clone();
            let mut buf = Vec::new();
            lat.swap_stage(&mut y, dynamics, &mut buf);
            prop_assert_eq!(sorted(&x), sorted(&y));
            let mut touched: Vec<usize> = buf.iter().flat_map(|p| [p.site, p.partner]).collect();
            let n = touched.len();
            touched.sort_unstable();
            touched.dedup();
            prop_assert_eq!(touched.len(), n, "pairs overlap");
        }
    }

    #[test]
    fn focal_coordinate_follows_tau_when_decoupled((dim, side, mode, beta, seed) in params()) {
        let lat = lattice(dim, side, MODES[mode], beta);
        let mut x = state(&lat, seed);
        let f = lat.scheme.focal();
        let mut buf = Vec::new();
        for _ in 0..30 {
            let expected = lat.map.apply(x[f]);
            lat.advance(&mut x, Dynamics::DecoupledAtFocal, &mut buf);
            prop_assert_eq!(x[f], expected);
        }
    }

    #[test]
    fn full_and_decoupled_orbits_agree_until_the_first_hit((dim, side, mode, beta, seed) in params()) {
        let lat = lattice(dim, side, MODES[mode], beta);
        let mut a = state(&lat, seed);
        let mut b = a.clone();
        let mut buf = Vec::new();
        for _ in 0..200 {
            prop_assert_eq!(&a, &b);
            if lat.in_hole(&a) {
                break;
            }
            lat.advance(&mut a, Dynamics::Full, &mut buf);
            lat.advance(&mut b, Dynamics::DecoupledAtFocal, &mut buf);
        }
        let st = LatticeState::new(state(&lat, seed)).unwrap();
        prop_assert_eq!(lat.first_hit(&st, 200, Dynamics::Full), lat.first_hit(&st, 200, Dynamics::DecoupledAtFocal));
    }

    #[test]
    fn index_map_carries_the_coordinate((dim, side, mode, beta, seed) in params(), k in 0usize..12) {
        let lat = lattice(dim, side, MODES[mode], beta);
        let st = LatticeState::new(state(&lat, seed)).unwrap();
        for p in [lat.scheme.focal(), lat.scheme.neighbor(lat.scheme.focal(), Direction::new(0, true)), 0] {
            for variant in [IndexVariant::Psi, IndexVariant::PsiTilde] {
                let (pos, end) = lat.index_map(&st, p, k, variant);
                let mut y = st.x[p];
                for _ in 0..k {
                    y = lat.map.apply(y);
                }
                prop_assert_eq!(end.x[pos], y);
            }
        }
    }

    #[test]
    fn focal_index_never_moves_when_decoupled((dim, side, mode, beta, seed) in params(), k in 0usize..12) {
        let lat = lattice(dim, side, MODES[mode], beta);
        let st = LatticeState::new(state(&lat, seed)).unwrap();
        let (pos, _) = lat.index_map(&st, lat.scheme.focal(), k, IndexVariant::Psi);
        prop_assert_eq!(pos, lat.scheme.focal());
    }

    #[test]
    fn literal_decoupling_rule_matches_pair_filter((dim, side, mode, beta, seed) in params()) {
        let lat = lattice(dim, side, MODES[mode], beta);
        let x = state(&lat, seed);
        let mut y = x.clone();
        let mut buf = Vec::new();
        lat.swap_stage(&mut y, Dynamics::DecoupledAtFocal, &mut buf);
        prop_assert_eq!(literal_decoupling(&lat, &x), y);
    }

    #[test]
    fn swap_tracking_is_an_involution((dim, side, mode, beta, seed) in params()) {
        let lat = lattice(dim, side, MODES[mode], beta);
        let x = state(&lat, seed);
        let pairs = lat.collision_pairs(&LatticeState::new(x).unwrap());
        for p in 0..lat.scheme.n_sites() {
            prop_assert_eq!(follow_swaps(follow_swaps(p, &pairs), &pairs), p);
        }
    }
}

#[test]
fn disabled_mode_reduces_to_the_product_map() {
    let lat = lattice(2, 4, Mode::Disabled, 3);
    let mut x = state(&lat, 9);
    let mut buf = Vec::new();
    for _ in 0..20 {
        let expected: Vec<f64> = x.iter().map(|&c| lat.map.apply(c)).collect();
        lat.advance(&mut x, Dynamics::Full, &mut buf);
        assert!(buf.is_empty());
        assert_eq!(x, expected);
    }
}

#[test]
fn isolated_mode_only_swaps_at_the_focal_site() {
    let lat = lattice(2, 5, Mode::IsolatedNeighborhood, 5);
    let f = lat.scheme.focal();
    let mut buf = Vec::new();
    for seed in 0..500 {
        let mut x = state(&lat, seed);
        lat.swap_stage(&mut x, Dynamics::Full, &mut buf);
        assert!(buf.iter().all(|p| p.site == f || p.partner == f));
    }
}
