//! Closed-form side: recurrence of the collision centres, the `q_k` terms,
//! the extremal index θ, the twisted index θ̃(s) and the cluster-size
//! characteristic function φ_X(s).

use std::collections::{BTreeMap, HashMap};

use num_complex::Complex64;
use num_traits::{One, Zero};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::interval_map::{invariant_density, DensityEstimate, PiecewiseExpandingMap};
use crate::lattice::{CollisionScheme, Direction, Dynamics, Lattice, Mode};
use crate::rational::{self, Q};
use crate::ulam::{self, BoxModel, BoxShape, IndexEvent, OperatorKind, SpectralResult};

pub const DEFAULT_K_MAX: usize = 200;
pub const MAX_ORBIT_LENGTH: usize = 10_000;
pub const FLOAT_ORBIT_TOLERANCE: f64 = 1e-9;
pub const CLOSED_FORM_TOLERANCE: f64 = 1e-9;

/// A value that is exact whenever every input was.
#[derive(Debug, Clone, PartialEq)]
pub enum Num {
    Exact(Q),
    Float(f64),
}

impl Num {
    pub fn one(exact: bool) -> Self {
        if exact {
            Num::Exact(Q::one())
        } else {
            Num::Float(1.0)
        }
    }

    pub fn zero(exact: bool) -> Self {
        if exact {
            Num::Exact(Q::zero())
        } else {
            Num::Float(0.0)
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Num::Exact(q) => rational::to_f64(q),
            Num::Float(x) => *x,
        }
    }

    pub fn exact(&self) -> Option<&Q> {
        match self {
            Num::Exact(q) => Some(q),
            Num::Float(_) => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Num::Exact(q) => q.is_zero(),
            Num::Float(x) => *x == 0.0,
        }
    }

    fn zip(&self, o: &Num, fq: impl Fn(&Q, &Q) -> Q, ff: impl Fn(f64, f64) -> f64) -> Num {
        match (self, o) {
            (Num::Exact(a), Num::Exact(b)) => Num::Exact(fq(a, b)),
            _ => Num::Float(ff(self.to_f64(), o.to_f64())),
        }
    }

    pub fn add(&self, o: &Num) -> Num {
        self.zip(o, |a, b| a + b, |a, b| a + b)
    }

    pub fn sub(&self, o: &Num) -> Num {
        self.zip(o, |a, b| a - b, |a, b| a - b)
    }

    pub fn mul(&self, o: &Num) -> Num {
        self.zip(o, |a, b| a * b, |a, b| a * b)
    }

    pub fn div(&self, o: &Num) -> Num {
        self.zip(o, |a, b| a / b, |a, b| a / b)
    }
}

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            value: f64,
            exact: Option<String>,
        }
        Repr {
            value: self.to_f64(),
            exact: self.exact().map(|q| q.to_string()),
        }
        .serialize(s)
    }
}

/// `τ^j(point)` for `j = 0..=k_max` in exact arithmetic.
pub fn exact_orbit(map: &PiecewiseExpandingMap, point: &Q, k_max: usize) -> Result<Vec<Q>> {
    if k_max > MAX_ORBIT_LENGTH {
        return Err(Error::InvalidArgument(format!("k_max {k_max} exceeds {MAX_ORBIT_LENGTH}")));
    }
    if !map.is_rational_affine() {
        return Err(Error::NonRational("exact orbits need rational affine branches".into()));
    }
    let mut orbit = vec![point.clone()];
    let mut seen: HashMap<Q, usize> = HashMap::from([(point.clone(), 0)]);
    while orbit.len() <= k_max {
        let next = map.eval_exact(orbit.last().expect("non-empty"))?;
        if let Some(&start) = seen.get(&next) {
            let period = orbit.len() - start;
            while orbit.len() <= k_max {
                let i = orbit.len();
                orbit.push(orbit[start + (i - start) % period].clone());
            }
            break;
        }
        seen.insert(next.clone(), orbit.len());
        orbit.push(next);
    }
    Ok(orbit)
}

/// Float orbit, used when the map has no exact representation.
pub fn float_orbit(map: &PiecewiseExpandingMap, point: f64, k_max: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(k_max + 1);
    let mut x = point;
    out.push(x);
    for _ in 0..k_max {
        x = map.apply(x);
        out.push(x);
    }
    out
}

/// Orbits of every collision centre.
#[derive(Debug, Clone)]
struct CenterOrbits {
    exact: Option<Vec<Vec<Q>>>,
    float: Vec<Vec<f64>>,
    /// `|(τ^m)'(a_v)|` for `m = 0..=k_max`, by direction index.
    derivatives: Vec<Vec<Num>>,
    /// Exact ε-zones by direction index.
    zones: Vec<(Q, Q)>,
}

impl CenterOrbits {
    fn build(lat: &Lattice, k_max: usize) -> Result<Self> {
        let s = &lat.scheme;
        let dirs: Vec<Direction> = s.directions().collect();
        if lat.map.is_rational_affine() {
            let exact = dirs
                .iter()
                .map(|&v| exact_orbit(&lat.map, s.center_exact(v), k_max))
                .collect::<Result<Vec<_>>>()?;
            let float = exact.iter().map(|o| o.iter().map(rational::to_f64).collect()).collect();
            let mut derivatives = Vec::new();
            for o in &exact {
                let mut d = vec![Num::one(true)];
                let mut acc = Q::one();
                for y in &o[..k_max] {
                    acc *= rational::abs(&lat.map.deriv_exact(y)?);
                    d.push(Num::Exact(acc.clone()));
                }
                derivatives.push(d);
            }
            let h = s.epsilon_exact() / rational::q_int(2);
            let zones = dirs.iter().map(|&w| (s.center_exact(w) - &h, s.center_exact(w) + &h)).collect();
            Ok(Self { exact: Some(exact), float, derivatives, zones })
        } else {
            let float: Vec<Vec<f64>> = dirs.iter().map(|&v| float_orbit(&lat.map, s.center(v), k_max)).collect();
            let mut derivatives = Vec::new();
            for o in &float {
                let mut d = vec![Num::one(false)];
                let mut acc = 1.0;
                for &y in &o[..k_max] {
                    acc *= lat.map.deriv(y)?.abs();
                    d.push(Num::Float(acc));
                }
                derivatives.push(d);
            }
            Ok(Self { exact: None, float, derivatives, zones: Vec::new() })
        }
    }

    fn is_exact(&self) -> bool {
        self.exact.is_some()
    }

    /// `τ^j a_from == a_to`.
    fn hits(&self, s: &CollisionScheme, from: Direction, j: usize, to: Direction) -> bool {
        match &self.exact {
            Some(e) => &e[from.index()][j] == s.center_exact(to),
            None => (self.float[from.index()][j] - s.center(to)).abs() < FLOAT_ORBIT_TOLERANCE,
        }
    }

    /// The channel `w` with `τ^j (a_v, a_{-v}) = (a_w, a_{-w})`, if any.
    fn pair_hit(&self, s: &CollisionScheme, v: Direction, j: usize) -> Option<Direction> {
        s.directions()
            .find(|&w| self.hits(s, v, j, w) && self.hits(s, v.neg(), j, w.neg()))
    }

    fn in_epsilon_zone(&self, s: &CollisionScheme, from: Direction, j: usize, w: Direction) -> bool {
        match &self.exact {
            Some(e) => {
                let y = &e[from.index()][j];
                let (lo, hi) = &self.zones[w.index()];
                lo <= y && y < hi
            }
            None => {
                let (lo, hi) = s.epsilon_zone(w);
                let y = self.float[from.index()][j];
                lo <= y && y < hi
            }
        }
    }

    /// `|(τ^m)'(a_from)|`.
    fn derivative(&self, from: Direction, m: usize) -> Result<Num> {
        self.derivatives[from.index()]
            .get(m)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("lag {m} beyond the computed orbit")))
    }
}

/// Which recurrence set a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RecurrenceKind {
    SRec,
    STildeRec,
}

/// Membership witness: `τ^lag (a_v, a_{-v}) = (a_{v'}, a_{-v'})` with the
/// index map able to carry the neighbour coordinate to the right site.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub source: Direction,
    pub target: Direction,
    pub lag: usize,
    pub pair: (String, String),
}

/// A lag `k` with `τ^{k+1} (a_v, a_{-v}) = (a_{v'}, a_{-v'})`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecurrenceRecord {
    pub kind: RecurrenceKind,
    pub source: Direction,
    pub target: Direction,
    pub lag: usize,
    /// Earlier lags of the same source with their channels, `j < lag`.
    pub recurrence_times: Vec<(usize, Direction)>,
    pub exact: bool,
}

impl RecurrenceRecord {
    /// `J_k` when lags are counted from `k_min`.
    pub fn j_set(&self, k_min: usize) -> Vec<(usize, Direction)> {
        self.recurrence_times.iter().copied().filter(|(j, _)| *j >= k_min).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RecurrenceReport {
    pub s_rec: Vec<Witness>,
    pub s_tilde_rec: Vec<Witness>,
    pub records: Vec<RecurrenceRecord>,
    pub k_max: usize,
    /// Float orbits with tolerance were used.
    pub approximate: bool,
    /// Some centre pair showed no recurrence below `k_max`; this is not a proof of absence.
    pub search_exhausted: bool,
    /// Lags in `K(v, -v)`, the labels written in the worked example. They are
    /// empty there, so the example's terms are read as the `K(v, v)` lags.
    pub opposite_label_lags: usize,
    #[serde(skip)]
    orbits: Option<CenterOrbits>,
    #[serde(skip)]
    rho: Option<DensityEstimate>,
}

impl RecurrenceReport {
    pub fn in_s_rec(&self, v: Direction) -> bool {
        self.s_rec.iter().any(|w| w.source == v)
    }

    pub fn in_s_tilde_rec(&self, v: Direction) -> bool {
        self.s_tilde_rec.iter().any(|w| w.source == v)
    }

    fn orbits(&self) -> &CenterOrbits {
        self.orbits.as_ref().expect("orbits present")
    }
}

/// Probability that a neighbour coordinate started at `start` sits at
/// `target` after `k` decoupled steps while avoiding `avoid[i].1` at time
/// `avoid[i].0`. The coordinate follows the orbit of centre `value`. In
/// full-lattice mode a bulk swap needs the partner in the opposite ε-zone,
/// which happens with the ρ_τ-mass of that zone, independently per step.
fn psi_probability(
    lat: &Lattice,
    orbits: &CenterOrbits,
    start: usize,
    value: Direction,
    k: usize,
    target: usize,
    avoid: &[(usize, usize)],
    rho: Option<&DensityEstimate>,
) -> Num {
    let s = &lat.scheme;
    let exact = orbits.is_exact();
    let focal = s.focal();
    if s.mode() != Mode::FullLattice {
        // only focal pairs swap, and those are suppressed
        let stays = target == start && !avoid.iter().any(|&(step, site)| step <= k && site == start);
        return if stays { Num::one(exact) } else { Num::zero(exact) };
    }
    let mut dist: BTreeMap<usize, Num> = BTreeMap::from([(start, Num::one(exact))]);
    for &(step, site) in avoid {
        if step == 0 {
            dist.remove(&site);
        }
    }
    for j in 0..k {
        let mut next: BTreeMap<usize, Num> = BTreeMap::new();
        let mut put = |site: usize, p: Num| {
            let e = next.entry(site).or_insert_with(|| Num::zero(exact));
            *e = e.add(&p);
        };
        for (&pos, p) in &dist {
            let zone = s.directions().find(|&w| orbits.in_epsilon_zone(s, value, j, w));
            match zone {
                Some(w) if s.mode() == Mode::FullLattice && pos != focal && s.neighbor(pos, w) != focal => {
                    let move_p = if exact {
                        Num::Exact(s.epsilon_exact().clone())
                    } else {
                        Num::Float(s.epsilon() * rho.map_or(1.0, |r| r.value_at(s.center(w.neg()))))
                    };
                    put(s.neighbor(pos, w), p.mul(&move_p));
                    put(pos, p.mul(&Num::one(exact).sub(&move_p)));
                }
                _ => put(pos, p.clone()),
            }
        }
        for &(step, site) in avoid {
            if step == j + 1 {
                next.remove(&site);
            }
        }
        dist = next;
    }
    dist.remove(&target).unwrap_or_else(|| Num::zero(exact))
}

/// Probability that the coordinate started at `start`, whose value follows
/// the orbit of centre `value`, sits at `target` after `k` decoupled steps
/// while avoiding each `(step, site)` in `avoid`.
pub fn index_probability(
    lat: &Lattice,
    report: &RecurrenceReport,
    start: usize,
    value: Direction,
    k: usize,
    target: usize,
    avoid: &[(usize, usize)],
) -> Result<Num> {
    if k > report.k_max {
        return Err(Error::InvalidArgument(format!("k = {k} beyond k_max = {}", report.k_max)));
    }
    Ok(psi_probability(lat, report.orbits(), start, value, k, target, avoid, report.rho.as_ref()))
}

fn lattice_density(lat: &Lattice) -> Result<DensityEstimate> {
    Ok(invariant_density(&lat.map, 4096)?.density)
}

/// Recurrence sets and `K` lags up to `k_max`.
pub fn detect_recurrence(lat: &Lattice, k_max: usize) -> Result<RecurrenceReport> {
    let s = &lat.scheme;
    let orbits = CenterOrbits::build(lat, k_max)?;
    let rho = if orbits.is_exact() { None } else { Some(lattice_density(lat)?) };
    let focal = s.focal();
    let mut s_rec = Vec::new();
    let mut s_tilde_rec = Vec::new();
    let show = |v: Direction, j: usize| match &orbits.exact {
        Some(e) => (e[v.index()][j].to_string(), e[v.neg().index()][j].to_string()),
        None => (
            format!("{}", orbits.float[v.index()][j]),
            format!("{}", orbits.float[v.neg().index()][j]),
        ),
    };
    if s.mode() != Mode::Disabled {
        for v in s.directions() {
            let q = s.neighbor(focal, v);
            for k in 1..=k_max {
                let Some(w) = orbits.pair_hit(s, v, k) else { continue };
                if !psi_probability(lat, &orbits, q, v.neg(), k, s.neighbor(focal, w), &[], rho.as_ref()).is_zero() {
                    s_rec.push(Witness {
                        source: v,
                        target: w,
                        lag: k,
                        pair: show(v, 0),
                    });
                    break;
                }
            }
            for k in 1..=k_max {
                let Some(w) = orbits.pair_hit(s, v, k) else { continue };
                if !psi_probability(lat, &orbits, q, v, k, s.neighbor(focal, w.neg()), &[], rho.as_ref()).is_zero() {
                    s_tilde_rec.push(Witness {
                        source: v,
                        target: w,
                        lag: k,
                        pair: show(v, 0),
                    });
                    break;
                }
            }
        }
    }
    let mut report = RecurrenceReport {
        s_rec,
        s_tilde_rec,
        records: Vec::new(),
        k_max,
        approximate: !orbits.is_exact(),
        search_exhausted: false,
        opposite_label_lags: 0,
        orbits: None,
        rho: None,
    };
    let mut records = Vec::new();
    let mut opposite = 0;
    let mut exhausted = false;
    for v in s.directions() {
        let kind = if report.in_s_rec(v) {
            RecurrenceKind::SRec
        } else if report.in_s_tilde_rec(v) {
            RecurrenceKind::STildeRec
        } else {
            exhausted |= s.mode() != Mode::Disabled;
            continue;
        };
        let mut earlier: Vec<(usize, Direction)> = Vec::new();
        for k in 0..k_max {
            if let Some(w) = orbits.pair_hit(s, v, k + 1) {
                if w == v.neg() {
                    opposite += 1;
                }
                records.push(RecurrenceRecord {
                    kind,
                    source: v,
                    target: w,
                    lag: k,
                    recurrence_times: earlier.clone(),
                    exact: orbits.is_exact(),
                });
                earlier.push((k, w));
            }
        }
    }
    report.records = records;
    report.search_exhausted = exhausted;
    report.opposite_label_lags = opposite;
    report.orbits = Some(orbits);
    report.rho = rho;
    Ok(report)
}

/// How densities entering `q_k` are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityMode {
    /// `ρ_{ε,q} := ρ_τ`, conditioned marginals from index-map bookkeeping.
    Idealized,
    /// Marginals of the closed decoupled three-site box on an `n`-cell grid.
    Estimated { n: usize, samples_per_cell: usize, seed: u64 },
}

/// Density values at the centres.
#[derive(Debug, Serialize)]
pub struct DensityInputs {
    pub mode: DensityMode,
    /// `ρ_τ(a_v)` by direction index.
    pub rho_tau: Vec<Num>,
    /// `(ρ_{ε,p*+v}(a_{-v}^+), ρ_{ε,p*+v}(a_{-v}^-))` by direction index.
    pub rho_neighbor: Vec<(Num, Num)>,
    #[serde(skip)]
    box_result: Option<(BoxModel, SpectralResult<f64>)>,
}

impl DensityInputs {
    pub fn idealized(lat: &Lattice) -> Result<Self> {
        let s = &lat.scheme;
        if lat.map.is_rational_affine() {
            // onto affine branches preserve Lebesgue measure
            let one = Num::one(true);
            return Ok(Self {
                mode: DensityMode::Idealized,
                rho_tau: s.directions().map(|_| one.clone()).collect(),
                rho_neighbor: s.directions().map(|_| (one.clone(), one.clone())).collect(),
                box_result: None,
            });
        }
        let rho = lattice_density(lat)?;
        Ok(Self {
            mode: DensityMode::Idealized,
            rho_tau: s.directions().map(|v| Num::Float(rho.value_at(s.center(v)))).collect(),
            rho_neighbor: s
                .directions()
                .map(|v| {
                    let b = s.center(v.neg());
                    (Num::Float(rho.right_limit(b)), Num::Float(rho.left_limit(b)))
                })
                .collect(),
            box_result: None,
        })
    }

    pub fn estimated(lat: &Lattice, n: usize, samples_per_cell: usize, seed: u64) -> Result<Self> {
        let s = &lat.scheme;
        let model = BoxModel::lattice(lat, BoxShape::Triple, n, Dynamics::DecoupledAtFocal, true)?;
        let op = ulam::build_operator::<f64>(&model, OperatorKind::Closed)?;
        let res = ulam::leading_eigen(&op, &model.lebesgue(), ulam::TOLERANCE, ulam::MAX_ITERATIONS)?;
        let axis_of = |site: usize| model.sites.iter().position(|&q| q == site).expect("box site");
        let focal_marg = ulam::marginal_density(&res, &model, axis_of(s.focal()), None)?;
        let mut rho_neighbor = Vec::new();
        for v in s.directions() {
            let m = ulam::marginal_density(&res, &model, axis_of(s.neighbor(s.focal(), v)), None)?;
            let b = s.center(v.neg());
            rho_neighbor.push((Num::Float(m.right_limit(b)), Num::Float(m.left_limit(b))));
        }
        Ok(Self {
            mode: DensityMode::Estimated { n, samples_per_cell, seed },
            rho_tau: s.directions().map(|v| Num::Float(focal_marg.value_at(s.center(v)))).collect(),
            rho_neighbor,
            box_result: Some((model, res)),
        })
    }

    pub fn is_exact(&self) -> bool {
        self.rho_tau.iter().all(|r| r.exact().is_some())
    }
}

/// One `q_k(v, v')` term.
#[derive(Debug, Clone, Serialize)]
pub struct QTerm {
    pub source: Direction,
    pub target: Direction,
    pub lag: usize,
    pub q: Num,
    /// Probability of the index-map event (including the `J_k` complements).
    pub psi_probability: Num,
    pub j_set: Vec<(usize, Direction)>,
    pub derivative_source: Num,
    pub derivative_partner: Num,
}

/// `Σ_channels ρ_τ(a_v)(ρ(a_{-v}^+) + ρ(a_{-v}^-))/2`.
pub fn normalizer(dens: &DensityInputs) -> Result<Num> {
    let exact = dens.is_exact();
    let half = if exact { Num::Exact(rational::q(1, 2)) } else { Num::Float(0.5) };
    let mut acc = Num::zero(exact);
    for (r, (p, m)) in dens.rho_tau.iter().zip(&dens.rho_neighbor) {
        acc = acc.add(&r.mul(&p.add(m)).mul(&half));
    }
    if acc.is_zero() {
        return Err(Error::ZeroNormalizer);
    }
    Ok(acc)
}

/// `q_k(v, v')` for an `S^rec` record with lags counted from `k_min`.
pub fn q_k_value(
    lat: &Lattice,
    report: &RecurrenceReport,
    record: &RecurrenceRecord,
    k_min: usize,
    dens: &DensityInputs,
) -> Result<QTerm> {
    if record.kind != RecurrenceKind::SRec {
        return Err(Error::FormulaInput("q_k is defined for S^rec records only".into()));
    }
    let s = &lat.scheme;
    let orbits = report.orbits();
    let exact = orbits.is_exact() && dens.is_exact();
    let v = record.source;
    let k = record.lag;
    let focal = s.focal();
    let q_site = s.neighbor(focal, v);
    let target_site = s.neighbor(focal, record.target);
    let j_set = record.j_set(k_min);
    let avoid: Vec<(usize, usize)> = j_set.iter().map(|&(j, w)| (j, s.neighbor(focal, w))).collect();
    let zero = Num::zero(exact);
    let d_src = orbits.derivative(v, k + 1)?;
    let d_par = orbits.derivative(v.neg(), k + 1)?;
    let orbit_ok = orbits.pair_hit(s, v, k + 1) == Some(record.target);
    let psi = if orbit_ok {
        psi_probability(lat, orbits, q_site, v.neg(), k, target_site, &avoid, report.rho.as_ref())
    } else {
        zero.clone()
    };
    let norm = normalizer(dens)?;
    let (hat_plus, hat_minus) = if psi.is_zero() {
        (zero.clone(), zero.clone())
    } else {
        match (&dens.mode, &dens.box_result) {
            (DensityMode::Estimated { samples_per_cell, seed, .. }, Some((model, res))) => {
                let ev = IndexEvent {
                    tracked: q_site,
                    k,
                    target: target_site,
                    excluded: avoid.clone(),
                    samples_per_cell: *samples_per_cell,
                    seed: *seed,
                };
                let axis = model.sites.iter().position(|&p| p == q_site).expect("box site");
                let m = ulam::marginal_density(res, model, axis, Some(&ev))?;
                let b = s.center(v.neg());
                (Num::Float(m.right_limit(b)), Num::Float(m.left_limit(b)))
            }
            _ => {
                let (p, m) = &dens.rho_neighbor[v.index()];
                (p.mul(&psi), m.mul(&psi))
            }
        }
    };
    let two = if exact { Num::Exact(rational::q_int(2)) } else { Num::Float(2.0) };
    let bracket = hat_plus.add(&hat_minus).div(&two.mul(&d_par));
    let q = dens.rho_tau[v.index()].div(&d_src).mul(&bracket).div(&norm);
    Ok(QTerm {
        source: v,
        target: record.target,
        lag: k,
        q,
        psi_probability: psi,
        j_set,
        derivative_source: d_src,
        derivative_partner: d_par,
    })
}

/// θ under one lag convention.
#[derive(Debug, Clone, Serialize)]
pub struct ThetaSum {
    pub k_min: usize,
    /// Non-zero terms only.
    pub terms: Vec<QTerm>,
    pub theta: Num,
    pub truncation: usize,
    pub theta_truncated: Num,
    /// `α^{-2N}` with `α` the expansion factor.
    pub tail_bound: f64,
}

pub fn theta_value(lat: &Lattice, report: &RecurrenceReport, dens: &DensityInputs, k_min: usize, truncation: usize) -> Result<ThetaSum> {
    let exact = report.orbits().is_exact() && dens.is_exact();
    let mut total = Num::zero(exact);
    let mut truncated = Num::zero(exact);
    let mut terms = Vec::new();
    for rec in &report.records {
        if rec.kind != RecurrenceKind::SRec || rec.lag < k_min {
            continue;
        }
        let t = q_k_value(lat, report, rec, k_min, dens)?;
        if t.q.is_zero() {
            continue;
        }
        total = total.add(&t.q);
        if rec.lag <= truncation {
            truncated = truncated.add(&t.q);
        }
        terms.push(t);
    }
    let one = Num::one(exact);
    let theta = one.sub(&total);
    let tf = theta.to_f64();
    if !(tf > 0.0 && tf <= 1.0) {
        return Err(Error::FormulaInput(format!("θ = {tf} lies outside (0, 1]")));
    }
    Ok(ThetaSum {
        k_min,
        terms,
        theta,
        truncation,
        theta_truncated: one.sub(&truncated),
        tail_bound: lat.map.expansion_factor().powf(-2.0 * truncation as f64),
    })
}

/// `β_k^{(1)}(j)` and `β_k^{(2)}(j)` summed over channel pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaEntry {
    pub k: usize,
    pub j: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub stderr1: Option<f64>,
    pub stderr2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaTable {
    pub entries: Vec<BetaEntry>,
    pub estimated: bool,
}

/// β tables implied by the recurrence structure: `β^{(1)}_k(0) = q_k`,
/// `β^{(1)}_k(j ≥ 1) = 0`, and `β^{(2)} = 0` when `S̃^rec` is empty.
pub fn closed_form_betas(report: &RecurrenceReport, sum: &ThetaSum) -> Result<BetaTable> {
    if !report.s_tilde_rec.is_empty() {
        return Err(Error::FormulaInput(
            "closed-form β^(2) needs an empty S̃^rec; supply estimated tables".into(),
        ));
    }
    let mut by_k: BTreeMap<usize, f64> = BTreeMap::new();
    for t in &sum.terms {
        *by_k.entry(t.lag).or_default() += t.q.to_f64();
    }
    Ok(BetaTable {
        entries: by_k
            .into_iter()
            .map(|(k, b)| BetaEntry {
                k,
                j: 0,
                beta1: b,
                beta2: 0.0,
                stderr1: None,
                stderr2: None,
            })
            .collect(),
        estimated: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaTilde {
    pub s: Vec<f64>,
    pub theta_tilde: Vec<Complex64>,
    pub phi_x: Vec<Complex64>,
    /// `|θ̃(0) - θ|` within tolerance (1e-9 closed form, 2 stderr estimated).
    pub consistent_at_zero: bool,
    pub warnings: Vec<String>,
}

pub fn theta_tilde_value(theta: f64, betas: &BetaTable, s_grid: &[f64]) -> Result<ThetaTilde> {
    if theta <= 0.0 {
        return Err(Error::FormulaInput(format!("θ = {theta} must be positive")));
    }
    let mut per_k: BTreeMap<usize, f64> = BTreeMap::new();
    for e in &betas.entries {
        *per_k.entry(e.k).or_default() += e.beta1 + e.beta2;
    }
    if let Some((k, total)) = per_k.iter().find(|(_, t)| **t > 1.0 + 1e-12) {
        return Err(Error::FormulaInput(format!("Σ_j (β1 + β2) = {total} > 1 at k = {k}")));
    }
    let tt = |s: f64| {
        let e_s = Complex64::from_polar(1.0, s);
        let mut acc = Complex64::new(1.0, 0.0);
        for e in &betas.entries {
            acc -= Complex64::from_polar(1.0, s * e.j as f64) * (e.beta1 - e_s * e.beta2);
        }
        acc
    };
    let theta_tilde: Vec<Complex64> = s_grid.iter().map(|&s| tt(s)).collect();
    let phi_x: Vec<Complex64> = s_grid
        .iter()
        .zip(&theta_tilde)
        .map(|(&s, t)| t * (Complex64::from_polar(1.0, s) - 1.0) / theta + 1.0)
        .collect();
    let at0 = tt(0.0);
    let tol = if betas.estimated {
        let var: f64 = betas
            .entries
            .iter()
            .map(|e| e.stderr1.unwrap_or(0.0).powi(2) + e.stderr2.unwrap_or(0.0).powi(2))
            .sum();
        2.0 * var.sqrt()
    } else {
        CLOSED_FORM_TOLERANCE
    };
    let mut warnings = Vec::new();
    for (s, p) in s_grid.iter().zip(&phi_x) {
        if p.norm() > 1.0 + 1e-9 {
            warnings.push(format!("|φ_X({s})| = {} exceeds 1", p.norm()));
        }
    }
    Ok(ThetaTilde {
        s: s_grid.to_vec(),
        theta_tilde,
        phi_x,
        consistent_at_zero: (at0 - theta).norm() <= tol,
        warnings,
    })
}

/// `(1 - λ_δ) / μ̂(H_δ)` from the three-site box.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralTheta {
    pub delta: f64,
    pub n: usize,
    pub lambda: f64,
    pub hole_mass: f64,
    pub theta_spec: f64,
}

pub fn spectral_theta(lat: &Lattice, deltas: &[f64], n: usize) -> Result<Vec<SpectralTheta>> {
    deltas
        .iter()
        .map(|&delta| {
            let l = Lattice::new(lat.scheme.with_delta(delta.into())?, lat.map.clone());
            let (model, open) = ulam::box_escape_rate(&l, BoxShape::Triple, n, true)?;
            let hole_mass = closed_hole_mass(&model)?;
            Ok(SpectralTheta {
                delta,
                n: model.n(),
                lambda: open.lambda,
                hole_mass,
                theta_spec: (1.0 - open.lambda) / hole_mass,
            })
        })
        .collect()
}

/// Eigen-measure mass of the hole for the closed decoupled box.
fn closed_hole_mass(model: &BoxModel) -> Result<f64> {
    if model.map().is_rational_affine() {
        // the closed decoupled box is a product of Lebesgue-preserving maps
        return Ok(model.hole_measure());
    }
    let op = ulam::build_operator::<f64>(model, OperatorKind::Closed)?;
    let res = ulam::leading_eigen(&op, &model.lebesgue(), ulam::TOLERANCE, ulam::MAX_ITERATIONS)?;
    Ok(res.vector.iter().enumerate().map(|(i, m)| m * model.hole_fraction(i)).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct ThetaOptions {
    pub k_max: usize,
    pub truncation: usize,
    pub s_grid: Vec<f64>,
    pub spectral_deltas: Vec<f64>,
    pub spectral_n: usize,
    pub density: DensityMode,
}

impl Default for ThetaOptions {
    fn default() -> Self {
        Self {
            k_max: DEFAULT_K_MAX,
            truncation: 40,
            s_grid: vec![0.0, 0.25, 0.5, 1.0, 2.0, std::f64::consts::PI],
            spectral_deltas: vec![0.02, 0.01, 0.005],
            spectral_n: 32,
            density: DensityMode::Idealized,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ThetaReport {
    pub recurrence: RecurrenceReport,
    pub densities: DensityInputs,
    /// Lags counted from 1, with `J_k` complements.
    pub headline: ThetaSum,
    /// Lags counted from 0.
    pub with_k0: ThetaSum,
    pub theta_tilde: Option<ThetaTilde>,
    pub theta_tilde_note: Option<String>,
    pub spectral: Vec<SpectralTheta>,
    pub spectral_note: Option<String>,
    pub assertions: Vec<Assertion>,
}

impl ThetaReport {
    pub fn all_passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }
}

pub fn theta_report(lat: &Lattice, opts: &ThetaOptions) -> Result<ThetaReport> {
    let recurrence = detect_recurrence(lat, opts.k_max)?;
    let densities = match opts.density {
        DensityMode::Idealized => DensityInputs::idealized(lat)?,
        DensityMode::Estimated { n, samples_per_cell, seed } => DensityInputs::estimated(lat, n, samples_per_cell, seed)?,
    };
    let headline = theta_value(lat, &recurrence, &densities, 1, opts.truncation)?;
    let with_k0 = theta_value(lat, &recurrence, &densities, 0, opts.truncation)?;
    let (theta_tilde, theta_tilde_note) = match closed_form_betas(&recurrence, &headline) {
        Ok(b) => (Some(theta_tilde_value(headline.theta.to_f64(), &b, &opts.s_grid)?), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (spectral, spectral_note) = if lat.scheme.dimension() == 1 && lat.scheme.mode() == Mode::IsolatedNeighborhood {
        (spectral_theta(lat, &opts.spectral_deltas, opts.spectral_n)?, None)
    } else {
        (Vec::new(), Some("spectral companion needs d = 1 in isolated_neighborhood mode".into()))
    };
    Ok(ThetaReport {
        recurrence,
        densities,
        headline,
        with_k0,
        theta_tilde,
        theta_tilde_note,
        spectral,
        spectral_note,
        assertions: Vec::new(),
    })
}

/// The worked example: `τ = 5x mod 1`, centres `a_1 = 1/2`, `a_{-1} = 1/4`.
pub fn example_lattice() -> Result<Lattice> {
    Ok(Lattice::new(
        CollisionScheme::worked_example(3, "1/100", Mode::IsolatedNeighborhood)?,
        PiecewiseExpandingMap::mod_beta(5)?,
    ))
}

pub fn example_report() -> Result<ThetaReport> {
    example_report_with(&ThetaOptions::default())
}

pub fn example_report_with(opts: &ThetaOptions) -> Result<ThetaReport> {
    let lat = example_lattice()?;
    let mut r = theta_report(&lat, opts)?;
    let expected = Q::one() - rational::q(1, 625);
    let mut check = |name: &str, passed: bool, detail: String| {
        r.assertions.push(Assertion {
            name: name.into(),
            passed,
            detail,
        })
    };
    let theta = r.headline.theta.clone();
    check(
        "theta = 1 - 5^-4",
        theta.exact() == Some(&expected),
        format!("theta = {}", theta.exact().map(|q| q.to_string()).unwrap_or_else(|| theta.to_f64().to_string())),
    );
    let mut pairs: Vec<(String, String)> = r.recurrence.s_rec.iter().map(|w| w.pair.clone()).collect();
    pairs.sort();
    let want = vec![("1/2".to_string(), "1/4".to_string()), ("1/4".to_string(), "1/2".to_string())];
    check("S^rec = {(1/2,1/4),(1/4,1/2)}", pairs == want, format!("{pairs:?}"));
    check(
        "S~^rec empty",
        r.recurrence.s_tilde_rec.is_empty(),
        format!("{} members", r.recurrence.s_tilde_rec.len()),
    );
    let tf = theta.to_f64();
    match r.theta_tilde.clone() {
        Some(tt) => {
            let dev_t = tt.theta_tilde.iter().map(|z| (z - tf).norm()).fold(0.0, f64::max);
            let dev_p = tt
                .s
                .iter()
                .zip(&tt.phi_x)
                .map(|(&s, p)| (p - Complex64::from_polar(1.0, s)).norm())
                .fold(0.0, f64::max);
            check("theta~(s) = theta", dev_t <= 1e-12, format!("max deviation {dev_t:e}"));
            check("phi_X(s) = e^{is}", dev_p <= 1e-12, format!("max deviation {dev_p:e}"));
        }
        None => {
            check("theta~(s) = theta", false, "not evaluated".into());
            check("phi_X(s) = e^{is}", false, "not evaluated".into());
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orbits() {
        let five = PiecewiseExpandingMap::mod_beta(5).unwrap();
        assert!(exact_orbit(&five, &rational::q(1, 2), 20).unwrap().iter().all(|x| *x == rational::q(1, 2)));
        assert!(exact_orbit(&five, &rational::q(1, 4), 20).unwrap().iter().all(|x| *x == rational::q(1, 4)));
        let two = PiecewiseExpandingMap::mod_beta(2).unwrap();
        let o = exact_orbit(&two, &rational::q(1, 3), 5).unwrap();
        assert_eq!(o.len(), 6);
        for (i, x) in o.iter().enumerate() {
            assert_eq!(*x, if i % 2 == 0 { rational::q(1, 3) } else { rational::q(2, 3) });
        }
    }

    #[test]
    fn num_arithmetic_stays_exact() {
        let a = Num::Exact(rational::q(1, 3));
        let b = a.mul(&Num::Exact(rational::q(3, 1)));
        assert_eq!(b.exact(), Some(&Q::one()));
        assert!(matches!(a.add(&Num::Float(0.5)), Num::Float(_)));
    }

    #[test]
    fn example_passes() {
        let r = example_report().unwrap();
        for a in &r.assertions {
            assert!(a.passed, "{}: {}", a.name, a.detail);
        }
        assert_eq!(r.with_k0.theta.exact(), Some(&rational::q(24, 25)));
        assert_eq!(r.recurrence.opposite_label_lags, 0);
        assert_eq!(r.spectral.len(), 3);
    }
}
