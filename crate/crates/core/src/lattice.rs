//! Collision-coupled map lattice on a finite torus.
//!
//! Sites are stored as flat indices `Σ c_i L^i`. A collision pair is always
//! reported from the site whose coordinate sits in the zone of a positive
//! direction `+e_i`, its partner being `p + e_i`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval_map::PiecewiseExpandingMap;
use crate::rational::{self, Q};

pub const MAX_DIMENSION: usize = 3;
pub const MAX_SITES: usize = 1_000_000;

/// A lattice unit vector `±e_{axis+1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Direction {
    pub axis: usize,
    pub positive: bool,
}

impl Direction {
    pub fn new(axis: usize, positive: bool) -> Self {
        Self { axis, positive }
    }

    pub fn neg(self) -> Self {
        Self {
            axis: self.axis,
            positive: !self.positive,
        }
    }

    /// Slot in per-direction tables: `+e_1, -e_1, +e_2, -e_2, …`.
    pub fn index(self) -> usize {
        2 * self.axis + usize::from(!self.positive)
    }

    pub fn from_index(i: usize) -> Self {
        Self::new(i / 2, i.is_multiple_of(2))
    }

    pub fn all(dim: usize) -> impl Iterator<Item = Direction> {
        (0..2 * dim).map(Direction::from_index)
    }

    pub fn parse(label: &str) -> Result<Self> {
        let bad = || Error::InvalidScheme(format!("bad direction label {label:?}"));
        let (positive, rest) = match label.as_bytes().first() {
            Some(b'+') => (true, &label[1..]),
            Some(b'-') => (false, &label[1..]),
            _ => return Err(bad()),
        };
        let axis: usize = rest.parse().map_err(|_| bad())?;
        if axis == 0 {
            return Err(bad());
        }
        Ok(Self::new(axis - 1, positive))
    }

    pub fn label(self) -> String {
        format!("{}{}", if self.positive { '+' } else { '-' }, self.axis + 1)
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl Serialize for Direction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for Direction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Direction::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Which collision channels are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Every nearest-neighbour pair may collide.
    FullLattice,
    /// Only the `2d` pairs containing the focal site are active.
    #[default]
    IsolatedNeighborhood,
    /// No channel is active, including the focal ones.
    Disabled,
}

/// A number given either as a JSON float or as an exact literal string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Number(f64),
    Text(String),
}

impl Literal {
    pub fn to_q(&self) -> Result<Q> {
        match self {
            Literal::Number(x) => rational::from_f64_decimal(*x),
            Literal::Text(s) => rational::parse(s),
        }
    }
}

impl From<f64> for Literal {
    fn from(x: f64) -> Self {
        Literal::Number(x)
    }
}

impl From<&str> for Literal {
    fn from(s: &str) -> Self {
        Literal::Text(s.to_string())
    }
}

/// Serializable scheme block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSpec {
    pub dimension: usize,
    pub side: usize,
    pub centers: BTreeMap<String, Literal>,
    pub epsilon: Literal,
    pub delta: Literal,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focal_site: Option<Vec<i64>>,
    #[serde(default)]
    pub mode: Mode,
}

/// Validated collision geometry.
#[derive(Debug, Clone)]
pub struct CollisionScheme {
    spec: SchemeSpec,
    dim: usize,
    side: usize,
    n_sites: usize,
    centers: Vec<f64>,
    centers_q: Vec<Q>,
    epsilon: f64,
    epsilon_q: Q,
    delta: f64,
    delta_q: Q,
    focal: usize,
    mode: Mode,
    eps_zone: Vec<(f64, f64)>,
    delta_zone: Vec<(f64, f64)>,
    neighbors: Vec<usize>,
}

impl CollisionScheme {
    pub fn new(spec: SchemeSpec) -> Result<Self> {
        let dim = spec.dimension;
        let side = spec.side;
        if dim == 0 || dim > MAX_DIMENSION {
            return Err(Error::InvalidScheme(format!("dimension {dim} outside 1..=3")));
        }
        if side < 3 {
            return Err(Error::InvalidScheme(format!("torus side {side} < 3")));
        }
        let n_sites = side
            .checked_pow(dim as u32)
            .filter(|&n| n <= MAX_SITES)
            .ok_or_else(|| Error::InvalidScheme(format!("{side}^{dim} sites exceed 10^6")))?;

        let mut centers_q = vec![None; 2 * dim];
        for (label, value) in &spec.centers {
            let dir = Direction::parse(label)?;
            if dir.axis >= dim {
                return Err(Error::InvalidScheme(format!("direction {label} outside dimension {dim}")));
            }
            centers_q[dir.index()] = Some(value.to_q()?);
        }
        let centers_q: Vec<Q> = centers_q
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                c.ok_or_else(|| {
                    Error::InvalidScheme(format!("missing center for {}", Direction::from_index(i)))
                })
            })
            .collect::<Result<_>>()?;
        let epsilon_q = spec.epsilon.to_q()?;
        let delta_q = spec.delta.to_q()?;
        let zero = rational::q_int(0);
        if epsilon_q <= zero {
            return Err(Error::InvalidScheme("epsilon must be positive".into()));
        }
        if delta_q <= zero || delta_q > epsilon_q {
            return Err(Error::InvalidScheme("delta must lie in (0, epsilon]".into()));
        }

        let half = &epsilon_q / rational::q_int(2);
        let one = rational::q_int(1);
        let mut zones: Vec<(Q, Q, usize)> = Vec::new();
        for (i, a) in centers_q.iter().enumerate() {
            let lo = a - &half;
            let hi = a + &half;
            if lo <= zero || hi >= one {
                return Err(Error::InvalidScheme(format!(
                    "zone of {} not inside (0,1)",
                    Direction::from_index(i)
                )));
            }
            zones.push((lo, hi, i));
        }
        zones.sort();
        for w in zones.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Error::InvalidScheme(format!(
                    "zones of {} and {} overlap",
                    Direction::from_index(w[0].2),
                    Direction::from_index(w[1].2)
                )));
            }
        }

        let focal_coords = spec.focal_site.clone().unwrap_or_else(|| vec![0; dim]);
        if focal_coords.len() != dim {
            return Err(Error::InvalidScheme("focal_site has wrong dimension".into()));
        }
        let mut focal = 0usize;
        for (i, c) in focal_coords.iter().enumerate() {
            focal += (c.rem_euclid(side as i64) as usize) * side.pow(i as u32);
        }

        let centers: Vec<f64> = centers_q.iter().map(rational::to_f64).collect();
        let epsilon = rational::to_f64(&epsilon_q);
        let delta = rational::to_f64(&delta_q);
        let zone = |w: f64| centers.iter().map(|a| (a - w / 2.0, a + w / 2.0)).collect::<Vec<_>>();
        let eps_zone = zone(epsilon);
        let delta_zone = zone(delta);

        let mut neighbors = vec![0usize; n_sites * 2 * dim];
        for p in 0..n_sites {
            for dir in Direction::all(dim) {
                neighbors[p * 2 * dim + dir.index()] = shift(p, dir, side);
            }
        }

        Ok(Self {
            mode: spec.mode,
            spec,
            dim,
            side,
            n_sites,
            centers,
            centers_q,
            epsilon,
            epsilon_q,
            delta,
            delta_q,
            focal,
            eps_zone,
            delta_zone,
            neighbors,
        })
    }

    /// One-dimensional scheme with centers `a_{+1}`, `a_{-1}`.
    pub fn one_dimensional(side: usize, a_plus: &str, a_minus: &str, epsilon: &str, delta: &str, mode: Mode) -> Result<Self> {
        let mut centers = BTreeMap::new();
        centers.insert("+1".to_string(), Literal::from(a_plus));
        centers.insert("-1".to_string(), Literal::from(a_minus));
        Self::new(SchemeSpec {
            dimension: 1,
            side,
            centers,
            epsilon: epsilon.into(),
            delta: delta.into(),
            focal_site: None,
            mode,
        })
    }

    /// The d = 1 scheme with fixed-point centers 1/2 and 1/4 of `5x mod 1`,
    /// bulk width 1/20.
    pub fn worked_example(side: usize, delta: &str, mode: Mode) -> Result<Self> {
        Self::one_dimensional(side, "1/2", "1/4", "1/20", delta, mode)
    }

    pub fn spec(&self) -> &SchemeSpec {
        &self.spec
    }

    pub fn with_delta(&self, delta: Literal) -> Result<Self> {
        let mut spec = self.spec.clone();
        spec.delta = delta;
        Self::new(spec)
    }

    pub fn with_mode(&self, mode: Mode) -> Result<Self> {
        let mut spec = self.spec.clone();
        spec.mode = mode;
        Self::new(spec)
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn focal(&self) -> usize {
        self.focal
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn epsilon_exact(&self) -> &Q {
        &self.epsilon_q
    }

    pub fn delta_exact(&self) -> &Q {
        &self.delta_q
    }

    pub fn center(&self, v: Direction) -> f64 {
        self.centers[v.index()]
    }

    pub fn center_exact(&self, v: Direction) -> &Q {
        &self.centers_q[v.index()]
    }

    pub fn directions(&self) -> impl Iterator<Item = Direction> {
        Direction::all(self.dim)
    }

    /// `[a_v - δ/2, a_v + δ/2)`.
    pub fn delta_zone(&self, v: Direction) -> (f64, f64) {
        self.delta_zone[v.index()]
    }

    pub fn epsilon_zone(&self, v: Direction) -> (f64, f64) {
        self.eps_zone[v.index()]
    }

    #[inline]
    pub fn neighbor(&self, p: usize, v: Direction) -> usize {
        self.neighbors[p * 2 * self.dim + v.index()]
    }

    pub fn site_coords(&self, p: usize) -> Vec<usize> {
        (0..self.dim).map(|i| (p / self.side.pow(i as u32)) % self.side).collect()
    }

    /// Exact hole measure `Σ_v δ²` under product Lebesgue; zero when disabled.
    pub fn hole_lebesgue_measure(&self) -> f64 {
        if self.mode == Mode::Disabled {
            0.0
        } else {
            2.0 * self.dim as f64 * self.delta * self.delta
        }
    }

    /// Warnings for centers lying on a branch endpoint of `map`.
    pub fn branch_warnings(&self, map: &PiecewiseExpandingMap) -> Vec<String> {
        let pts = map.partition_points();
        self.directions()
            .filter(|v| pts.contains(&self.center(*v)))
            .map(|v| format!("center of {v} lies on a branch endpoint of the site map"))
            .collect()
    }

    #[inline]
    fn in_zone(zone: (f64, f64), x: f64) -> bool {
        zone.0 <= x && x < zone.1
    }

    #[inline]
    fn pair_collides(&self, x: &[f64], p: usize, q: usize, axis: usize, width_delta: bool) -> bool {
        let zones = if width_delta { &self.delta_zone } else { &self.eps_zone };
        Self::in_zone(zones[2 * axis], x[p]) && Self::in_zone(zones[2 * axis + 1], x[q])
    }
}

fn shift(p: usize, v: Direction, side: usize) -> usize {
    let stride = side.pow(v.axis as u32);
    let c = (p / stride) % side;
    let nc = if v.positive { (c + 1) % side } else { (c + side - 1) % side };
    p - c * stride + nc * stride
}

/// Which Φ variant precedes the sitewise map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dynamics {
    /// All active pairs swap.
    Full,
    /// No swaps at all.
    Product,
    /// Pairs containing the focal site are suppressed.
    DecoupledAtFocal,
    /// Pairs containing the focal site or the given site are suppressed.
    DecoupledAtFocalAnd(usize),
}

/// A collision realized at step `step` between `site` and `site + direction`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SwapEvent {
    pub step: u64,
    pub site: usize,
    pub direction: Direction,
    pub focal: bool,
}

/// A collision pair: `site` is in the `+e_axis` zone, `partner = site + e_axis`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub site: usize,
    pub partner: usize,
    pub axis: usize,
    pub focal: bool,
}

/// A point of `I^Λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeState {
    pub x: Vec<f64>,
}

impl LatticeState {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if let Some(&bad) = x.iter().find(|v| !(0.0..1.0).contains(*v)) {
            return Err(Error::Domain(bad));
        }
        Ok(Self { x })
    }

    pub fn constant(n: usize, value: f64) -> Self {
        Self { x: vec![value; n] }
    }
}

/// Scheme plus site map: everything needed to run the lattice.
#[derive(Debug, Clone)]
pub struct Lattice {
    pub scheme: CollisionScheme,
    pub map: PiecewiseExpandingMap,
}

impl Lattice {
    pub fn new(scheme: CollisionScheme, map: PiecewiseExpandingMap) -> Self {
        Self { scheme, map }
    }

    /// Pairs that collide under the full coupling, in site order.
    pub fn collision_pairs(&self, state: &LatticeState) -> Vec<Pair> {
        let mut out = Vec::new();
        self.collect_pairs(&state.x, Dynamics::Full, &mut out);
        debug_assert!(is_matching(&out));
        out
    }

    fn collect_pairs(&self, x: &[f64], dynamics: Dynamics, out: &mut Vec<Pair>) {
        out.clear();
        let s = &self.scheme;
        let focal = s.focal;
        let suppressed = |p: usize, q: usize| match dynamics {
            Dynamics::Full => false,
            Dynamics::Product => true,
            Dynamics::DecoupledAtFocal => p == focal || q == focal,
            Dynamics::DecoupledAtFocalAnd(r) => p == focal || q == focal || p == r || q == r,
        };
        if dynamics == Dynamics::Product {
            return;
        }
        match s.mode {
            Mode::Disabled => {}
            Mode::IsolatedNeighborhood => {
                for axis in 0..s.dim {
                    let minus = s.neighbor(focal, Direction::new(axis, false));
                    let plus = s.neighbor(focal, Direction::new(axis, true));
                    for (p, q) in [(minus, focal), (focal, plus)] {
                        if !suppressed(p, q) && s.pair_collides(x, p, q, axis, true) {
                            out.push(Pair { site: p, partner: q, axis, focal: true });
                        }
                    }
                }
                out.sort_by_key(|pr| (pr.site, pr.axis));
            }
            Mode::FullLattice => {
                for p in 0..s.n_sites {
                    for axis in 0..s.dim {
                        let q = s.neighbor(p, Direction::new(axis, true));
                        let focal_pair = p == focal || q == focal;
                        if !suppressed(p, q) && s.pair_collides(x, p, q, axis, focal_pair) {
                            out.push(Pair { site: p, partner: q, axis, focal: focal_pair });
                        }
                    }
                }
            }
        }
    }

    /// Swap stage followed by τ on every site; returns the executed swaps.
    pub fn step(&self, state: &mut LatticeState, dynamics: Dynamics, step_index: u64) -> Vec<SwapEvent> {
        let mut buf = Vec::new();
        self.advance(&mut state.x, dynamics, &mut buf);
        buf.iter()
            .map(|pr| SwapEvent {
                step: step_index,
                site: pr.site,
                direction: Direction::new(pr.axis, true),
                focal: pr.focal,
            })
            .collect()
    }

    /// Allocation-free step; `buf` receives the executed pairs.
    #[inline]
    pub fn advance(&self, x: &mut [f64], dynamics: Dynamics, buf: &mut Vec<Pair>) {
        self.swap_stage(x, dynamics, buf);
        for v in x.iter_mut() {
            *v = self.map.apply(*v);
        }
    }

    /// Φ only, without the sitewise map.
    pub fn swap_stage(&self, x: &mut [f64], dynamics: Dynamics, buf: &mut Vec<Pair>) {
        self.collect_pairs(x, dynamics, buf);
        for pr in buf.iter() {
            x.swap(pr.site, pr.partner);
        }
    }

    /// True iff some channel `v` has `x_{p*} ∈ A_{δ,v}` and `x_{p*+v} ∈ A_{δ,-v}`.
    #[inline]
    pub fn in_hole(&self, x: &[f64]) -> bool {
        let s = &self.scheme;
        if s.mode == Mode::Disabled {
            return false;
        }
        let xf = x[s.focal];
        for i in 0..2 * s.dim {
            let v = Direction::from_index(i);
            if CollisionScheme::in_zone(s.delta_zone[i], xf)
                && CollisionScheme::in_zone(s.delta_zone[v.neg().index()], x[s.neighbor(s.focal, v)])
            {
                return true;
            }
        }
        false
    }

    /// Least `n ≤ horizon` with `T^n x ∈ H_δ`.
    pub fn first_hit(&self, state: &LatticeState, horizon: u64, dynamics: Dynamics) -> Option<u64> {
        let mut x = state.x.clone();
        let mut buf = Vec::new();
        self.first_hit_in_place(&mut x, horizon, dynamics, &mut buf)
    }

    pub fn first_hit_in_place(&self, x: &mut [f64], horizon: u64, dynamics: Dynamics, buf: &mut Vec<Pair>) -> Option<u64> {
        for n in 0..=horizon {
            if self.in_hole(x) {
                return Some(n);
            }
            if n < horizon {
                self.advance(x, dynamics, buf);
            }
        }
        None
    }

    /// Site carrying the coordinate started at `p` after `k` steps, and the
    /// state `T^k x`. `Psi` follows the decoupled dynamics, `PsiTilde` the full one.
    pub fn index_map(&self, state: &LatticeState, p: usize, k: usize, variant: IndexVariant) -> (usize, LatticeState) {
        let dynamics = match variant {
            IndexVariant::Psi => Dynamics::DecoupledAtFocal,
            IndexVariant::PsiTilde => Dynamics::Full,
        };
        let mut x = state.x.clone();
        let mut buf = Vec::new();
        let mut pos = p;
        for _ in 0..k {
            self.swap_stage(&mut x, dynamics, &mut buf);
            pos = follow_swaps(pos, &buf);
            for v in x.iter_mut() {
                *v = self.map.apply(*v);
            }
        }
        (pos, LatticeState { x })
    }
}

/// Position of a tracked coordinate after one swap stage.
pub fn follow_swaps(pos: usize, pairs: &[Pair]) -> usize {
    for pr in pairs {
        if pr.site == pos {
            return pr.partner;
        }
        if pr.partner == pos {
            return pr.site;
        }
    }
    pos
}

fn is_matching(pairs: &[Pair]) -> bool {
    let mut seen: Vec<usize> = pairs.iter().flat_map(|p| [p.site, p.partner]).collect();
    let n = seen.len();
    seen.sort_unstable();
    seen.dedup();
    seen.len() == n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexVariant {
    Psi,
    PsiTilde,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(mode: Mode) -> Lattice {
        Lattice::new(
            CollisionScheme::worked_example(9, "1/100", mode).unwrap(),
            PiecewiseExpandingMap::mod_beta(5).unwrap(),
        )
    }

    #[test]
    fn direction_labels_round_trip() {
        for dim in 1..=3 {
            for v in Direction::all(dim) {
                assert_eq!(Direction::parse(&v.label()).unwrap(), v);
                assert_eq!(Direction::from_index(v.index()), v);
            }
        }
        assert!(Direction::parse("1").is_err());
        assert!(Direction::parse("+0").is_err());
    }

    #[test]
    fn torus_neighbors_wrap() {
        let s = CollisionScheme::worked_example(5, "0.01", Mode::FullLattice).unwrap();
        assert_eq!(s.neighbor(0, Direction::new(0, false)), 4);
        assert_eq!(s.neighbor(4, Direction::new(0, true)), 0);
    }

    #[test]
    fn scheme_validation() {
        assert!(CollisionScheme::one_dimensional(9, "1/2", "0.51", "0.05", "0.01", Mode::FullLattice).is_err());
        assert!(CollisionScheme::one_dimensional(9, "1/2", "1/4", "0.05", "0.06", Mode::FullLattice).is_err());
        assert!(CollisionScheme::one_dimensional(2, "1/2", "1/4", "0.05", "0.01", Mode::FullLattice).is_err());
        assert!(CollisionScheme::one_dimensional(9, "0.01", "1/4", "0.05", "0.01", Mode::FullLattice).is_err());
    }

    #[test]
    fn focal_pair_collides() {
        let lat = example(Mode::FullLattice);
        let mut st = LatticeState::constant(9, 0.9);
        st.x[0] = 0.5;
        st.x[1] = 0.25;
        let pairs = lat.collision_pairs(&st);
        assert_eq!(pairs, vec![Pair { site: 0, partner: 1, axis: 0, focal: true }]);
        st.x[1] = 0.5;
        assert!(lat.collision_pairs(&st).is_empty());
        assert!(lat.collision_pairs(&LatticeState::constant(9, 0.9)).is_empty());
    }

    #[test]
    fn full_step_swaps_then_maps() {
        let lat = example(Mode::FullLattice);
        let mut st = LatticeState::constant(9, 0.9);
        st.x[0] = 0.5;
        st.x[1] = 0.25;
        let mut full = st.clone();
        let ev = lat.step(&mut full, Dynamics::Full, 0);
        assert_eq!(ev.len(), 1);
        assert!(ev[0].focal);
        assert_eq!(full.x[0], lat.map.apply(0.25));
        assert_eq!(full.x[1], lat.map.apply(0.5));
        let mut dec = st.clone();
        assert!(lat.step(&mut dec, Dynamics::DecoupledAtFocal, 0).is_empty());
        assert_eq!(dec.x[0], lat.map.apply(0.5));
    }

    #[test]
    fn hole_orientation() {
        let lat = example(Mode::IsolatedNeighborhood);
        let mut st = LatticeState::constant(9, 0.9);
        assert!(!lat.in_hole(&st.x));
        st.x[0] = 0.5;
        st.x[1] = 0.25;
        assert!(lat.in_hole(&st.x));
        st.x[0] = 0.25;
        st.x[1] = 0.5;
        assert!(!lat.in_hole(&st.x));
        // channel -1: focal in A(-1), left neighbour in A(+1)
        st.x[8] = 0.5;
        assert!(lat.in_hole(&st.x));
        assert_eq!(lat.first_hit(&st, 0, Dynamics::Full), Some(0));
    }

    #[test]
    fn disabled_mode_never_hits() {
        let lat = example(Mode::Disabled);
        let mut st = LatticeState::constant(9, 0.9);
        st.x[0] = 0.5;
        st.x[1] = 0.25;
        assert_eq!(lat.first_hit(&st, 1000, Dynamics::Full), None);
        assert_eq!(lat.scheme.hole_lebesgue_measure(), 0.0);
    }

    #[test]
    fn bulk_swap_moves_index() {
        let lat = example(Mode::FullLattice);
        let mut st = LatticeState::constant(9, 0.9);
        st.x[3] = 0.5;
        st.x[4] = 0.25;
        let (pos, _) = lat.index_map(&st, 3, 1, IndexVariant::Psi);
        assert_eq!(pos, 4);
        let (pos, _) = lat.index_map(&st, 5, 1, IndexVariant::Psi);
        assert_eq!(pos, 5);
    }

    #[test]
    fn focal_swap_moves_only_psi_tilde() {
        let lat = example(Mode::FullLattice);
        let mut st = LatticeState::constant(9, 0.9);
        st.x[0] = 0.5;
        st.x[1] = 0.25;
        assert_eq!(lat.index_map(&st, 1, 1, IndexVariant::Psi).0, 1);
        assert_eq!(lat.index_map(&st, 1, 1, IndexVariant::PsiTilde).0, 0);
    }

    #[test]
    fn branch_endpoint_center_warns() {
        let s = CollisionScheme::worked_example(9, "0.01", Mode::FullLattice).unwrap();
        let m2 = PiecewiseExpandingMap::mod_beta(2).unwrap();
        assert_eq!(s.branch_warnings(&m2).len(), 1);
        let m5 = PiecewiseExpandingMap::mod_beta(5).unwrap();
        assert!(s.branch_warnings(&m5).is_empty());
    }
}
