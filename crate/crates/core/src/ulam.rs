//! Ulam discretization of the box transfer operators.
//!
//! The box dynamics is a product of identical site maps, possibly preceded by
//! a swap on the hole. The operator is therefore stored as the per-axis 1D
//! Ulam matrix (applied as a Kronecker product) plus explicit correction rows
//! for the cells that meet the hole. Vectors are cell masses and are pushed
//! forward as row vectors, `w = v A`.

use std::collections::BTreeMap;
use std::ops::{Add, AddAssign, Mul, Sub};

use num_complex::Complex64;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval_map::{DensityEstimate, Partition, PiecewiseExpandingMap, UlamMatrix1d};
use crate::lattice::{Direction, Dynamics, Lattice, Mode};
use crate::rational::{self, Q};

/// Maximum number of cut points added by hole-edge refinement.
pub const REFINEMENT_CAP: usize = 256;

/// Real or complex entries.
pub trait Scalar:
    Copy + Send + Sync + Zero + Add<Output = Self> + AddAssign + Sub<Output = Self> + Mul<Output = Self> + Mul<f64, Output = Self>
{
    fn from_complex(c: Complex64) -> Option<Self>;
    fn to_complex(self) -> Complex64;
    fn modulus(self) -> f64;
    fn conj(self) -> Self;
    fn div(self, other: Self) -> Self;
}

impl Scalar for f64 {
    fn from_complex(c: Complex64) -> Option<Self> {
        (c.im == 0.0).then_some(c.re)
    }
    fn to_complex(self) -> Complex64 {
        Complex64::new(self, 0.0)
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn conj(self) -> Self {
        self
    }
    fn div(self, other: Self) -> Self {
        self / other
    }
}

impl Scalar for Complex64 {
    fn from_complex(c: Complex64) -> Option<Self> {
        Some(c)
    }
    fn to_complex(self) -> Complex64 {
        self
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    fn div(self, other: Self) -> Self {
        self / other
    }
}

/// Which sites form the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxShape {
    /// `(p*, p* + e_1)`: one channel.
    Pair,
    /// `(p* - e_1, p*, p* + e_1)`: both channels, d = 1 only.
    #[default]
    Triple,
}

/// An axis-aligned hole component; `swap` names the two axes exchanged by
/// the full coupling when the point lies inside.
#[derive(Debug, Clone, PartialEq)]
pub struct HoleRect {
    pub intervals: Vec<(f64, f64)>,
    pub swap: Option<(usize, usize)>,
}

impl HoleRect {
    pub fn contains(&self, x: &[f64]) -> bool {
        self.intervals.iter().zip(x).all(|(&(lo, hi), &v)| lo <= v && v < hi)
    }

    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(|(lo, hi)| hi - lo).product()
    }
}

/// Finite box of sites with a common grid per axis.
#[derive(Debug, Clone)]
pub struct BoxModel {
    pub sites: Vec<usize>,
    pub dynamics: Dynamics,
    pub holes: Vec<HoleRect>,
    pub refined: bool,
    map: PiecewiseExpandingMap,
    k1: UlamMatrix1d,
}

impl BoxModel {
    pub fn map(&self) -> &PiecewiseExpandingMap {
        &self.map
    }

    /// Box around the focal site of an isolated-neighbourhood lattice.
    pub fn lattice(lattice: &Lattice, shape: BoxShape, n: usize, dynamics: Dynamics, refine: bool) -> Result<Self> {
        let s = &lattice.scheme;
        if s.mode() == Mode::FullLattice {
            return Err(Error::Mode);
        }
        if n < 2 {
            return Err(Error::InvalidArgument(format!("grid size {n} < 2")));
        }
        if shape == BoxShape::Triple && s.dimension() != 1 {
            return Err(Error::InvalidArgument("three-site boxes need d = 1".into()));
        }
        let plus = Direction::new(0, true);
        let focal = s.focal();
        let (sites, focal_axis) = match shape {
            BoxShape::Pair => (vec![focal, s.neighbor(focal, plus)], 0),
            BoxShape::Triple => (vec![s.neighbor(focal, plus.neg()), focal, s.neighbor(focal, plus)], 1),
        };
        let swapping = match dynamics {
            Dynamics::Full => true,
            Dynamics::DecoupledAtFocal | Dynamics::Product => false,
            Dynamics::DecoupledAtFocalAnd(_) => {
                return Err(Error::InvalidArgument("pair-decoupled dynamics has no box model".into()))
            }
        };
        let mut holes = Vec::new();
        if s.mode() != Mode::Disabled {
            for v in [plus, plus.neg()] {
                let partner = s.neighbor(focal, v);
                let Some(partner_axis) = sites.iter().position(|&q| q == partner) else {
                    continue;
                };
                let mut intervals = vec![(0.0, 1.0); sites.len()];
                intervals[focal_axis] = s.delta_zone(v);
                intervals[partner_axis] = s.delta_zone(v.neg());
                holes.push(HoleRect {
                    intervals,
                    swap: swapping.then_some((focal_axis, partner_axis)),
                });
            }
        }
        let partition = if refine {
            let mut seeds = Vec::new();
            for v in s.directions() {
                let a = s.center_exact(v);
                let h = s.delta_exact() / rational::q_int(2);
                seeds.push(a - &h);
                seeds.push(a + &h);
            }
            Partition::refined(n, &markov_cuts(&lattice.map, &seeds, REFINEMENT_CAP))
        } else {
            if s.mode() != Mode::Disabled && s.delta() * (n as f64) < 4.0 {
                return Err(Error::Resolution(s.delta() * n as f64));
            }
            Partition::uniform(n)
        };
        Ok(Self::from_parts(sites, dynamics, holes, refine, lattice.map.clone(), partition))
    }

    /// One-dimensional open system with hole `[lo, hi)`.
    pub fn interval(map: &PiecewiseExpandingMap, n: usize, hole: Option<(f64, f64)>, refine: bool) -> Result<Self> {
        let partition = if refine {
            let cuts: Vec<f64> = hole.map(|(a, b)| vec![a, b]).unwrap_or_default();
            Partition::refined(n, &cuts)
        } else {
            Partition::uniform(n)
        };
        let holes = hole
            .map(|h| vec![HoleRect { intervals: vec![h], swap: None }])
            .unwrap_or_default();
        Ok(Self::from_parts(vec![0], Dynamics::Product, holes, refine, map.clone(), partition))
    }

    fn from_parts(
        sites: Vec<usize>,
        dynamics: Dynamics,
        holes: Vec<HoleRect>,
        refined: bool,
        map: PiecewiseExpandingMap,
        partition: Partition,
    ) -> Self {
        let k1 = UlamMatrix1d::build(&map, partition);
        Self {
            sites,
            dynamics,
            holes,
            refined,
            map,
            k1,
        }
    }

    pub fn axes(&self) -> usize {
        self.sites.len()
    }

    pub fn partition(&self) -> &Partition {
        &self.k1.partition
    }

    /// Cells per axis.
    pub fn n(&self) -> usize {
        self.k1.partition.len()
    }

    pub fn n_cells(&self) -> usize {
        self.n().pow(self.axes() as u32)
    }

    pub fn cell_index(&self, multi: &[usize]) -> usize {
        multi.iter().rev().fold(0, |acc, &c| acc * self.n() + c)
    }

    pub fn cell_multi(&self, mut idx: usize) -> Vec<usize> {
        let n = self.n();
        (0..self.axes())
            .map(|_| {
                let c = idx % n;
                idx /= n;
                c
            })
            .collect()
    }

    pub fn cell_measure(&self, idx: usize) -> f64 {
        self.cell_multi(idx).iter().map(|&c| self.partition().width(c)).product()
    }

    /// Lebesgue masses of all cells.
    pub fn lebesgue(&self) -> Vec<f64> {
        (0..self.n_cells()).map(|i| self.cell_measure(i)).collect()
    }

    /// Fraction of cell `idx` covered by the hole.
    pub fn hole_fraction(&self, idx: usize) -> f64 {
        let multi = self.cell_multi(idx);
        self.holes
            .iter()
            .map(|h| {
                multi
                    .iter()
                    .zip(&h.intervals)
                    .map(|(&c, &(lo, hi))| self.partition().overlap_fraction(c, lo, hi))
                    .product::<f64>()
            })
            .sum()
    }

    pub fn hole_measure(&self) -> f64 {
        self.holes.iter().map(HoleRect::measure).sum()
    }

    /// One step of the box dynamics on a point; returns the swapped axes.
    pub fn step_point(&self, x: &mut [f64], dynamics: Dynamics) -> Option<(usize, usize)> {
        let mut swapped = None;
        if dynamics == Dynamics::Full {
            if let Some(h) = self.holes.iter().find(|h| h.contains(x)) {
                let (i, j) = h.swap.unwrap_or((0, 0));
                x.swap(i, j);
                swapped = h.swap;
            }
        }
        for v in x.iter_mut() {
            *v = self.map.apply(*v);
        }
        swapped
    }
}

/// Hole edges plus their forward orbits, exact for rational affine maps.
pub fn markov_cuts(map: &PiecewiseExpandingMap, seeds: &[Q], cap: usize) -> Vec<f64> {
    let zero = rational::q_int(0);
    let one = rational::q_int(1);
    let mut found: Vec<Q> = Vec::new();
    let mut queue: Vec<Q> = seeds
        .iter()
        .filter(|q| **q > zero && **q < one)
        .cloned()
        .collect();
    while let Some(x) = queue.pop() {
        if found.contains(&x) {
            continue;
        }
        if found.len() >= cap {
            break;
        }
        if map.is_rational_affine() {
            if let Ok(y) = map.eval_exact(&x) {
                if !y.is_zero() {
                    queue.push(y);
                }
            }
        }
        found.push(x);
    }
    found.iter().map(rational::to_f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorKind {
    Closed,
    Open,
    Twisted { s: f64 },
}

/// Ulam operator on the box: Kronecker part plus correction rows.
#[derive(Debug, Clone)]
pub struct SparseTransferOperator<T> {
    pub kind: OperatorKind,
    axes: usize,
    n: usize,
    k1: UlamMatrix1d,
    corrections: Vec<(usize, Vec<(usize, T)>)>,
}

/// Builds the closed, open or twisted operator of the box.
pub fn build_operator<T: Scalar>(model: &BoxModel, kind: OperatorKind) -> Result<SparseTransferOperator<T>> {
    let coef = match kind {
        OperatorKind::Closed => None,
        OperatorKind::Open => Some(Complex64::zero()),
        OperatorKind::Twisted { s } => Some(Complex64::from_polar(1.0, s)),
    };
    let convert = |c: Complex64| {
        T::from_complex(c).ok_or_else(|| Error::InvalidArgument("complex weights need a complex operator".into()))
    };
    let part = model.partition();
    let n = model.n();
    let mut acc: BTreeMap<usize, BTreeMap<usize, Complex64>> = BTreeMap::new();
    for hole in &model.holes {
        // closed decoupled dynamics has nothing to correct
        let c = match (coef, hole.swap) {
            (None, None) => continue,
            (None, Some(_)) => Some(Complex64::new(1.0, 0.0)),
            (Some(c), _) => Some(c),
        };
        let per_axis: Vec<Vec<usize>> = hole
            .intervals
            .iter()
            .map(|&(lo, hi)| (0..n).filter(|&i| part.overlap_fraction(i, lo, hi) > 0.0).collect())
            .collect();
        for multi in cartesian(&per_axis) {
            let sub: Vec<(f64, f64)> = multi
                .iter()
                .zip(&hole.intervals)
                .map(|(&ci, &(lo, hi))| {
                    let (a, b) = part.cell(ci);
                    (a.max(lo), b.min(hi))
                })
                .collect();
            let frac: f64 = multi
                .iter()
                .zip(&sub)
                .map(|(&ci, &(lo, hi))| part.overlap_fraction(ci, lo, hi))
                .product();
            let dists: Vec<Vec<(usize, f64)>> = multi
                .iter()
                .zip(&sub)
                .map(|(&ci, &(lo, hi))| {
                    if (lo, hi) == part.cell(ci) {
                        model.k1.rows[ci].clone()
                    } else {
                        model.map.image_distribution(lo, hi, part)
                    }
                })
                .collect();
            let src = model.cell_index(&multi);
            let row = acc.entry(src).or_default();
            add_tensor(row, &dists, n, Complex64::new(-frac, 0.0));
            let c = c.expect("coefficient");
            if c != Complex64::zero() {
                let mut swapped = dists.clone();
                if let (Some((i, j)), true) = (hole.swap, model.dynamics == Dynamics::Full) {
                    swapped.swap(i, j);
                }
                add_tensor(row, &swapped, n, c * frac);
            }
        }
    }
    let corrections = acc
        .into_iter()
        .map(|(src, row)| {
            let entries = row
                .into_iter()
                .filter(|(_, w)| w.norm() > 1e-18)
                .map(|(t, w)| convert(w).map(|w| (t, w)))
                .collect::<Result<Vec<_>>>()?;
            Ok((src, entries))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SparseTransferOperator {
        kind,
        axes: model.axes(),
        n,
        k1: model.k1.clone(),
        corrections,
    })
}

fn cartesian(per_axis: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for choices in per_axis {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                choices.iter().map(move |&c| {
                    let mut p = prefix.clone();
                    p.push(c);
                    p
                })
            })
            .collect();
    }
    out
}

fn add_tensor(row: &mut BTreeMap<usize, Complex64>, dists: &[Vec<(usize, f64)>], n: usize, scale: Complex64) {
    let mut terms: Vec<(usize, f64)> = vec![(0, 1.0)];
    let mut stride = 1;
    for d in dists {
        terms = terms
            .iter()
            .flat_map(|&(idx, w)| d.iter().map(move |&(c, wc)| (idx + c * stride, w * wc)))
            .collect();
        stride *= n;
    }
    for (idx, w) in terms {
        *row.entry(idx).or_insert_with(Complex64::zero) += scale * w;
    }
}

impl<T: Scalar> SparseTransferOperator<T> {
    pub fn dimension(&self) -> usize {
        self.n.pow(self.axes as u32)
    }

    pub fn correction_rows(&self) -> usize {
        self.corrections.len()
    }

    /// `out = v A`.
    pub fn apply(&self, v: &[T], out: &mut Vec<T>) {
        let total = self.dimension();
        assert_eq!(v.len(), total);
        let mut src = v.to_vec();
        let mut dst = vec![T::zero(); total];
        let n = self.n;
        let mut stride = 1;
        for _ in 0..self.axes {
            let block = stride * n;
            dst.iter_mut().for_each(|x| *x = T::zero());
            let rows = &self.k1.rows;
            dst.par_chunks_mut(block)
                .zip(src.par_chunks(block))
                .for_each(|(d, s)| {
                    for (j, row) in rows.iter().enumerate() {
                        let sj = &s[j * stride..(j + 1) * stride];
                        for &(t, w) in row {
                            let dt = &mut d[t * stride..(t + 1) * stride];
                            for (a, &b) in dt.iter_mut().zip(sj) {
                                *a += b * w;
                            }
                        }
                    }
                });
            std::mem::swap(&mut src, &mut dst);
            stride = block;
        }
        for (cell, row) in &self.corrections {
            let m = v[*cell];
            for &(t, w) in row {
                src[t] += m * w;
            }
        }
        *out = src;
    }

    /// Full row of cell `idx`, merged and sorted by target.
    pub fn row(&self, idx: usize) -> Vec<(usize, T)> {
        let mut e = vec![T::zero(); self.dimension()];
        e[idx] = T::from_complex(Complex64::new(1.0, 0.0)).expect("unit");
        let mut out = Vec::new();
        self.apply(&e, &mut out);
        out.into_iter()
            .enumerate()
            .filter(|(_, w)| w.modulus() > 1e-15)
            .collect()
    }

    /// Row sums, computed without materializing rows.
    pub fn row_sums(&self) -> Vec<T> {
        let total = self.dimension();
        let mut sums = vec![T::from_complex(Complex64::new(1.0, 0.0)).expect("unit"); total];
        for (cell, row) in &self.corrections {
            let extra = row.iter().fold(T::zero(), |acc, &(_, w)| acc + w);
            sums[*cell] += extra;
        }
        sums
    }
}

/// Dominant eigenpair from power iteration.
#[derive(Debug, Clone)]
pub struct SpectralResult<T> {
    pub lambda: T,
    pub modulus: f64,
    pub phase: f64,
    /// Left eigenvector as cell masses, `Σ |v| = 1`.
    pub vector: Vec<T>,
    pub iterations: usize,
    pub residual: f64,
    pub escape_rate: f64,
}

/// Power iteration with L¹ normalization and Rayleigh-quotient eigenvalue.
///
/// The tolerance is raised to the round-off floor `64 ε √dim` on large grids.
pub fn leading_eigen<T: Scalar>(
    op: &SparseTransferOperator<T>,
    start: &[f64],
    tolerance: f64,
    max_iterations: usize,
) -> Result<SpectralResult<T>> {
    let norm1 = |v: &[T]| v.iter().map(|x| x.modulus()).sum::<f64>();
    let mut v: Vec<T> = start.iter().map(|&m| T::from_complex(Complex64::new(m, 0.0)).expect("real")).collect();
    let s = norm1(&v);
    if s == 0.0 {
        return Err(Error::InvalidArgument("zero start vector".into()));
    }
    v.iter_mut().for_each(|x| *x = *x * (1.0 / s));
    let mut w = Vec::new();
    let mut residual = f64::INFINITY;
    // summed round-off of an L¹ residual grows like sqrt(dim)
    let floor = 64.0 * f64::EPSILON * (v.len() as f64).sqrt();
    let tolerance = tolerance.max(floor);
    for it in 1..=max_iterations {
        op.apply(&v, &mut w);
        let num = w.iter().zip(&v).fold(T::zero(), |acc, (&a, &b)| acc + a * b.conj());
        let den = v.iter().fold(T::zero(), |acc, &b| acc + b * b.conj());
        let lambda = num.div(den);
        residual = w.iter().zip(&v).map(|(&a, &b)| (a - lambda * b).modulus()).sum::<f64>();
        let nw = norm1(&w);
        if nw < 1e-300 || lambda.modulus() < 1e-300 {
            return Err(Error::VanishingEigenvalue);
        }
        if residual <= tolerance {
            let c = lambda.to_complex();
            return Ok(SpectralResult {
                lambda,
                modulus: c.norm(),
                phase: c.arg(),
                vector: v,
                iterations: it,
                residual,
                escape_rate: -c.norm().ln(),
            });
        }
        w.iter_mut().for_each(|x| *x = *x * (1.0 / nw));
        std::mem::swap(&mut v, &mut w);
    }
    Err(Error::NonConvergence {
        iterations: max_iterations,
        residual,
    })
}

/// Index-event filter for conditioned marginals: the coordinate started at
/// `tracked` sits at `target` after `k` decoupled steps and was not at
/// `excluded[i].1` at time `excluded[i].0`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexEvent {
    pub tracked: usize,
    pub k: usize,
    pub target: usize,
    pub excluded: Vec<(usize, usize)>,
    pub samples_per_cell: usize,
    pub seed: u64,
}

/// Density of the eigen-measure's marginal on box axis `axis`.
pub fn marginal_density(
    result: &SpectralResult<f64>,
    model: &BoxModel,
    axis: usize,
    conditioning: Option<&IndexEvent>,
) -> Result<DensityEstimate> {
    let n = model.n();
    let mut masses = vec![0.0; n];
    let weights: Vec<f64> = match conditioning {
        None => result.vector.clone(),
        Some(ev) => conditioned_weights(result, model, ev)?,
    };
    for (idx, &m) in weights.iter().enumerate() {
        if m != 0.0 {
            let c = (idx / n.pow(axis as u32)) % n;
            masses[c] += m;
        }
    }
    if conditioning.is_some() {
        // conditioned masses keep their absolute size relative to the eigen-measure
        let total: f64 = result.vector.iter().sum();
        let part = model.partition().clone();
        let values = masses.iter().enumerate().map(|(i, m)| m / total / part.width(i)).collect();
        return Ok(DensityEstimate::from_values(part, values));
    }
    Ok(DensityEstimate::from_masses(model.partition().clone(), &masses))
}

fn conditioned_weights(result: &SpectralResult<f64>, model: &BoxModel, ev: &IndexEvent) -> Result<Vec<f64>> {
    let axis_of = |site: usize| {
        model.sites.iter().position(|&q| q == site).ok_or_else(|| {
            Error::ConditioningUnavailable(format!("site {site} lies outside the box"))
        })
    };
    let tracked = axis_of(ev.tracked)?;
    let target = axis_of(ev.target)?;
    let excluded = ev
        .excluded
        .iter()
        .map(|&(j, q)| axis_of(q).map(|a| (j, a)))
        .collect::<Result<Vec<_>>>()?;
    let part = model.partition();
    let out = result
        .vector
        .par_iter()
        .enumerate()
        .map(|(idx, &m)| {
            if m == 0.0 {
                return 0.0;
            }
            let multi = model.cell_multi(idx);
            let mut rng = ChaCha8Rng::seed_from_u64(ev.seed);
            rng.set_stream(idx as u64);
            let mut good = 0usize;
            let mut x = vec![0.0; multi.len()];
            for _ in 0..ev.samples_per_cell {
                for (xi, &c) in x.iter_mut().zip(&multi) {
                    let (a, b) = part.cell(c);
                    *xi = a + (b - a) * rng.random::<f64>();
                }
                let mut pos = tracked;
                let mut ok = true;
                for j in 1..=ev.k {
                    if let Some((a, b)) = model.step_point(&mut x, Dynamics::DecoupledAtFocal) {
                        pos = if pos == a { b } else if pos == b { a } else { pos };
                    }
                    if excluded.iter().any(|&(jj, a)| jj == j && a == pos) {
                        ok = false;
                        break;
                    }
                }
                if ok && pos == target {
                    good += 1;
                }
            }
            m * good as f64 / ev.samples_per_cell as f64
        })
        .collect();
    Ok(out)
}

/// One row of the operator-difference table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub delta: f64,
    /// `|(L - L̂) m|` for Lebesgue input `m`.
    pub tv_difference: f64,
    /// Signed mass of the difference.
    pub mass_removed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapDiagnostics {
    pub rows: Vec<GapRow>,
    pub loglog_slope: f64,
}

/// Closed-minus-open operator applied to Lebesgue, over a geometric δ list.
pub fn operator_gap_diagnostics(lattice: &Lattice, shape: BoxShape, n: usize, deltas: &[f64]) -> Result<GapDiagnostics> {
    if deltas.len() < 3 {
        return Err(Error::InvalidArgument("need at least three values of delta".into()));
    }
    let r = deltas[1] / deltas[0];
    if deltas.windows(2).any(|w| ((w[1] / w[0]) / r - 1.0).abs() > 1e-9) || r == 1.0 {
        return Err(Error::InvalidArgument("delta list must be a geometric progression".into()));
    }
    let mut rows = Vec::new();
    for &d in deltas {
        let scheme = lattice.scheme.with_delta(d.into())?;
        let lat = Lattice::new(scheme, lattice.map.clone());
        let model = BoxModel::lattice(&lat, shape, n, Dynamics::DecoupledAtFocal, true)?;
        let closed = build_operator::<f64>(&model, OperatorKind::Closed)?;
        let open = build_operator::<f64>(&model, OperatorKind::Open)?;
        let m = model.lebesgue();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        closed.apply(&m, &mut a);
        open.apply(&m, &mut b);
        let tv = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        let mass = a.iter().zip(&b).map(|(x, y)| x - y).sum();
        rows.push(GapRow {
            delta: d,
            tv_difference: tv,
            mass_removed: mass,
        });
    }
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.delta.ln(), r.tv_difference.ln())).collect();
    Ok(GapDiagnostics {
        loglog_slope: ols_slope(&pts),
        rows,
    })
}

pub(crate) fn ols_slope(pts: &[(f64, f64)]) -> f64 {
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Default tolerance and iteration cap for the box eigenproblems.
pub const TOLERANCE: f64 = 1e-12;
pub const MAX_ITERATIONS: usize = 20_000;

/// `−ln λ` of the open box operator together with the eigen-result.
pub fn box_escape_rate(lattice: &Lattice, shape: BoxShape, n: usize, refine: bool) -> Result<(BoxModel, SpectralResult<f64>)> {
    let model = BoxModel::lattice(lattice, shape, n, Dynamics::DecoupledAtFocal, refine)?;
    let op = build_operator::<f64>(&model, OperatorKind::Open)?;
    let res = leading_eigen(&op, &model.lebesgue(), TOLERANCE, MAX_ITERATIONS)?;
    Ok((model, res))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::CollisionScheme;

    fn doubling() -> PiecewiseExpandingMap {
        PiecewiseExpandingMap::mod_beta(2).unwrap()
    }

    fn example(delta: &str, mode: Mode) -> Lattice {
        Lattice::new(
            CollisionScheme::worked_example(3, delta, mode).unwrap(),
            PiecewiseExpandingMap::mod_beta(5).unwrap(),
        )
    }

    #[test]
    fn closed_interval_eigenvalue_is_one() {
        for map in [doubling(), PiecewiseExpandingMap::mod_beta(5).unwrap()] {
            let m = BoxModel::interval(&map, 40, None, false).unwrap();
            let op = build_operator::<f64>(&m, OperatorKind::Closed).unwrap();
            let r = leading_eigen(&op, &m.lebesgue(), 1e-13, 1000).unwrap();
            assert!((r.lambda - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn golden_hole_eigenvalue() {
        let exact = (1.0 + 5f64.sqrt()) / 4.0;
        for n in [4, 64, 256] {
            let m = BoxModel::interval(&doubling(), n, Some((0.0, 0.25)), false).unwrap();
            let op = build_operator::<f64>(&m, OperatorKind::Open).unwrap();
            let r = leading_eigen(&op, &m.lebesgue(), 1e-13, 10_000).unwrap();
            assert!((r.lambda - exact).abs() < 1e-9, "n={n}: {}", r.lambda);
        }
    }

    #[test]
    fn open_row_sums_track_hole_fraction() {
        let lat = example("1/50", Mode::IsolatedNeighborhood);
        let m = BoxModel::lattice(&lat, BoxShape::Pair, 20, Dynamics::DecoupledAtFocal, true).unwrap();
        let op = build_operator::<f64>(&m, OperatorKind::Open).unwrap();
        let sums = op.row_sums();
        let mut saw_full = false;
        for (i, s) in sums.iter().enumerate() {
            let h = m.hole_fraction(i);
            assert!((s - (1.0 - h)).abs() < 1e-10);
            saw_full |= h == 1.0;
        }
        assert!(saw_full);
    }

    #[test]
    fn twisted_at_zero_equals_closed() {
        let lat = example("1/50", Mode::IsolatedNeighborhood);
        for dynamics in [Dynamics::Full, Dynamics::DecoupledAtFocal] {
            let m = BoxModel::lattice(&lat, BoxShape::Pair, 12, dynamics, true).unwrap();
            let closed = build_operator::<f64>(&m, OperatorKind::Closed).unwrap();
            let tw = build_operator::<Complex64>(&m, OperatorKind::Twisted { s: 0.0 }).unwrap();
            for idx in 0..m.n_cells() {
                let a = closed.row(idx);
                let b = tw.row(idx);
                assert_eq!(a.len(), b.len());
                for ((ia, wa), (ib, wb)) in a.iter().zip(&b) {
                    assert_eq!(ia, ib);
                    assert!((wb - Complex64::new(*wa, 0.0)).norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn real_operator_rejects_complex_weights() {
        let lat = example("1/50", Mode::IsolatedNeighborhood);
        let m = BoxModel::lattice(&lat, BoxShape::Pair, 12, Dynamics::Full, true).unwrap();
        assert!(build_operator::<f64>(&m, OperatorKind::Twisted { s: 1.0 }).is_err());
    }

    #[test]
    fn full_lattice_mode_has_no_box() {
        let lat = example("1/50", Mode::FullLattice);
        let e = BoxModel::lattice(&lat, BoxShape::Pair, 12, Dynamics::Full, true);
        assert!(matches!(e, Err(Error::Mode)));
    }

    #[test]
    fn unrefined_grid_must_resolve_hole() {
        let lat = example("1/100", Mode::IsolatedNeighborhood);
        let e = BoxModel::lattice(&lat, BoxShape::Pair, 100, Dynamics::Full, false);
        assert!(matches!(e, Err(Error::Resolution(_))));
        assert!(BoxModel::lattice(&lat, BoxShape::Pair, 400, Dynamics::Full, false).is_ok());
    }

    #[test]
    fn refined_cuts_close_under_the_map() {
        let map = PiecewiseExpandingMap::mod_beta(5).unwrap();
        let cuts = markov_cuts(&map, &[rational::q(49, 100), rational::q(51, 100)], 256);
        for c in &cuts {
            let y = map.apply(*c);
            assert!(y == 0.0 || cuts.iter().any(|d| (d - y).abs() < 1e-14), "{c} -> {y}");
        }
    }

    #[test]
    fn cell_indexing_round_trips() {
        let lat = example("1/50", Mode::IsolatedNeighborhood);
        let m = BoxModel::lattice(&lat, BoxShape::Triple, 7, Dynamics::DecoupledAtFocal, false).unwrap_err();
        assert!(matches!(m, Error::Resolution(_)));
        let m = BoxModel::lattice(&lat, BoxShape::Triple, 7, Dynamics::DecoupledAtFocal, true).unwrap();
        for idx in [0, 5, 17, m.n_cells() - 1] {
            assert_eq!(m.cell_index(&m.cell_multi(idx)), idx);
        }
    }
}
