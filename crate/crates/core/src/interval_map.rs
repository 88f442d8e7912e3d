//! Site dynamics: piecewise onto, uniformly expanding maps of `[0, 1)`.
//!
//! Every branch is monotone and maps its interval onto the unit interval
//! (after reduction mod 1). Affine branches with rational data also support
//! exact evaluation, which the recurrence detection relies on.

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::{self, Q};

const CLAMP_BAND: f64 = 1e-15;
const SMOOTH_SAMPLES_PER_CELL: usize = 10_000;

/// Serializable description of a site map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapSpec {
    /// `x -> beta * x mod 1`.
    ModBeta { beta: u32 },
    /// Affine branches `x -> slope_i * x + offset_i mod 1` on `[points_i, points_{i+1})`.
    /// Entries are rational literals (`"1/3"`, `"0.25"`, `"2"`).
    AffineBranches {
        points: Vec<String>,
        slopes: Vec<String>,
        offsets: Vec<String>,
    },
    /// `x -> beta * x + amplitude * sin(2 pi x) mod 1`, a C² full-branch map with
    /// non-uniform invariant density.
    PerturbedBeta { beta: u32, amplitude: f64 },
}

#[derive(Debug, Clone)]
struct AffineBranch {
    slope: f64,
    offset: f64,
    slope_q: Q,
    offset_q: Q,
}

#[derive(Debug, Clone)]
enum Family {
    ModBeta(u32),
    Affine(Vec<AffineBranch>),
    PerturbedBeta { beta: f64, amplitude: f64 },
}

/// The site map τ together with its branch structure.
#[derive(Debug, Clone)]
pub struct PiecewiseExpandingMap {
    spec: MapSpec,
    partition: Vec<f64>,
    partition_q: Option<Vec<Q>>,
    family: Family,
    expansion: f64,
}

impl PiecewiseExpandingMap {
    pub fn mod_beta(beta: u32) -> Result<Self> {
        Self::from_spec(&MapSpec::ModBeta { beta })
    }

    pub fn from_spec(spec: &MapSpec) -> Result<Self> {
        match spec {
            MapSpec::ModBeta { beta } => {
                if *beta < 2 {
                    return Err(Error::InvalidMap(format!("beta must be >= 2, got {beta}")));
                }
                let b = *beta as i64;
                let partition_q: Vec<Q> = (0..=b).map(|i| rational::q(i, b)).collect();
                Ok(Self {
                    spec: spec.clone(),
                    partition: partition_q.iter().map(rational::to_f64).collect(),
                    partition_q: Some(partition_q),
                    family: Family::ModBeta(*beta),
                    expansion: *beta as f64,
                })
            }
            MapSpec::AffineBranches {
                points,
                slopes,
                offsets,
            } => {
                let points: Vec<Q> = points.iter().map(|s| rational::parse(s)).collect::<Result<_>>()?;
                let slopes: Vec<Q> = slopes.iter().map(|s| rational::parse(s)).collect::<Result<_>>()?;
                let offsets: Vec<Q> = offsets.iter().map(|s| rational::parse(s)).collect::<Result<_>>()?;
                Self::affine(points, slopes, offsets).map(|mut m| {
                    m.spec = spec.clone();
                    m
                })
            }
            MapSpec::PerturbedBeta { beta, amplitude } => {
                let b = *beta as f64;
                let alpha = b - 2.0 * std::f64::consts::PI * amplitude.abs();
                if *beta < 2 || alpha <= 1.0 || !amplitude.is_finite() {
                    return Err(Error::InvalidMap(format!(
                        "perturbed_beta needs beta >= 2 and beta - 2π|a| > 1 (got {alpha})"
                    )));
                }
                let f = |x: f64| b * x + amplitude * (2.0 * std::f64::consts::PI * x).sin();
                let mut partition = vec![0.0];
                for i in 1..*beta {
                    // f is increasing from 0 to beta; invert by bisection
                    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
                    for _ in 0..200 {
                        let mid = 0.5 * (lo + hi);
                        if f(mid) < i as f64 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    partition.push(0.5 * (lo + hi));
                }
                partition.push(1.0);
                Ok(Self {
                    spec: spec.clone(),
                    partition,
                    partition_q: None,
                    family: Family::PerturbedBeta {
                        beta: b,
                        amplitude: *amplitude,
                    },
                    expansion: alpha,
                })
            }
        }
    }

    /// Builds a rational affine map, checking that every branch is onto.
    pub fn affine(points: Vec<Q>, slopes: Vec<Q>, offsets: Vec<Q>) -> Result<Self> {
        let m = slopes.len();
        if m == 0 || points.len() != m + 1 || offsets.len() != m {
            return Err(Error::InvalidMap(
                "need M+1 partition points and M slopes/offsets".into(),
            ));
        }
        if !points[0].is_zero() || points[m] != rational::q_int(1) {
            return Err(Error::InvalidMap("partition must start at 0 and end at 1".into()));
        }
        let mut branches = Vec::with_capacity(m);
        let mut expansion = f64::INFINITY;
        for i in 0..m {
            let len = &points[i + 1] - &points[i];
            if !len.is_positive() {
                return Err(Error::InvalidMap("partition points must increase".into()));
            }
            if (&slopes[i] * &len).abs() != rational::q_int(1) {
                return Err(Error::InvalidMap(format!(
                    "branch {i} is not onto: |slope| * length = {}",
                    (&slopes[i] * &len).abs()
                )));
            }
            let slope = rational::to_f64(&slopes[i]);
            expansion = expansion.min(slope.abs());
            branches.push(AffineBranch {
                slope,
                offset: rational::to_f64(&offsets[i]),
                slope_q: slopes[i].clone(),
                offset_q: offsets[i].clone(),
            });
        }
        if expansion <= 1.0 {
            return Err(Error::InvalidMap(format!("expansion factor {expansion} <= 1")));
        }
        let spec = MapSpec::AffineBranches {
            points: points.iter().map(|p| p.to_string()).collect(),
            slopes: slopes.iter().map(|p| p.to_string()).collect(),
            offsets: offsets.iter().map(|p| p.to_string()).collect(),
        };
        Ok(Self {
            spec,
            partition: points.iter().map(rational::to_f64).collect(),
            partition_q: Some(points),
            family: Family::Affine(branches),
            expansion,
        })
    }

    pub fn spec(&self) -> &MapSpec {
        &self.spec
    }

    /// Branch endpoints `0 = ξ_0 < … < ξ_M = 1`.
    pub fn partition_points(&self) -> &[f64] {
        &self.partition
    }

    pub fn branch_count(&self) -> usize {
        self.partition.len() - 1
    }

    /// Lower bound α on |τ'|.
    pub fn expansion_factor(&self) -> f64 {
        self.expansion
    }

    /// True when every branch is affine with rational data.
    pub fn is_rational_affine(&self) -> bool {
        self.partition_q.is_some()
    }

    /// Index of the branch `[ξ_{i-1}, ξ_i)` containing `x`.
    pub fn branch_of(&self, x: f64) -> usize {
        match self.family {
            Family::ModBeta(b) => ((x * b as f64) as usize).min(b as usize - 1),
            _ => {
                let idx = self.partition.partition_point(|&p| p <= x);
                idx.saturating_sub(1).min(self.branch_count() - 1)
            }
        }
    }

    /// τ(x) without the domain check; the hot path of every simulation.
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        let y = match &self.family {
            Family::ModBeta(b) => {
                let y = *b as f64 * x;
                y - y.floor()
            }
            Family::Affine(branches) => {
                let br = &branches[self.branch_of(x)];
                let y = br.slope * x + br.offset;
                y - y.floor()
            }
            Family::PerturbedBeta { beta, amplitude } => {
                let y = beta * x + amplitude * (2.0 * std::f64::consts::PI * x).sin();
                y - y.floor()
            }
        };
        if y >= 1.0 - CLAMP_BAND {
            0.0
        } else {
            y
        }
    }

    /// τ(x) reduced into `[0, 1)`.
    pub fn eval(&self, x: f64) -> Result<f64> {
        check_unit(x)?;
        Ok(self.apply(x))
    }

    /// τ'(x) on the containing branch.
    pub fn deriv(&self, x: f64) -> Result<f64> {
        check_unit(x)?;
        let interior = &self.partition[1..self.partition.len() - 1];
        if interior.contains(&x) {
            return Err(Error::Singularity(x));
        }
        Ok(self.deriv_unchecked(x))
    }

    fn deriv_unchecked(&self, x: f64) -> f64 {
        match &self.family {
            Family::ModBeta(b) => *b as f64,
            Family::Affine(branches) => branches[self.branch_of(x)].slope,
            Family::PerturbedBeta { beta, amplitude } => {
                beta + 2.0 * std::f64::consts::PI * amplitude * (2.0 * std::f64::consts::PI * x).cos()
            }
        }
    }

    /// (τ^k)'(x) by the chain rule along the float orbit.
    pub fn deriv_iterate(&self, x: f64, k: usize) -> Result<f64> {
        check_unit(x)?;
        let mut d = 1.0;
        let mut y = x;
        for _ in 0..k {
            d *= self.deriv(y)?;
            y = self.apply(y);
        }
        Ok(d)
    }

    /// Exact τ(x) for rational affine maps.
    pub fn eval_exact(&self, x: &Q) -> Result<Q> {
        let (branch, _) = self.exact_branch(x)?;
        Ok(rational::frac(&(&branch.slope_q * x + &branch.offset_q)))
    }

    /// Exact τ'(x) for rational affine maps.
    pub fn deriv_exact(&self, x: &Q) -> Result<Q> {
        let (branch, idx) = self.exact_branch(x)?;
        let pts = self.partition_q.as_ref().expect("rational map");
        if idx > 0 && &pts[idx] == x {
            return Err(Error::Singularity(rational::to_f64(x)));
        }
        Ok(branch.slope_q.clone())
    }

    fn exact_branch(&self, x: &Q) -> Result<(AffineBranch, usize)> {
        let pts = self
            .partition_q
            .as_ref()
            .ok_or_else(|| Error::NonRational("map has non-affine branches".into()))?;
        if x.is_negative() || *x >= rational::q_int(1) {
            return Err(Error::Domain(rational::to_f64(x)));
        }
        let idx = pts.partition_point(|p| p <= x).saturating_sub(1).min(pts.len() - 2);
        let branch = match &self.family {
            Family::ModBeta(b) => AffineBranch {
                slope: *b as f64,
                offset: -(idx as f64),
                slope_q: rational::q_int(*b as i64),
                offset_q: rational::q_int(-(idx as i64)),
            },
            Family::Affine(branches) => branches[idx].clone(),
            Family::PerturbedBeta { .. } => unreachable!("no rational partition"),
        };
        Ok((branch, idx))
    }

    /// Distribution of the image of the uniform measure on `[lo, hi)` over the
    /// cells of `partition`, as sparse `(cell, fraction)` pairs summing to one.
    ///
    /// Exact for affine branches; stratified sampling otherwise.
    pub fn image_distribution(&self, lo: f64, hi: f64, partition: &Partition) -> Vec<(usize, f64)> {
        let mut acc: Vec<(usize, f64)> = Vec::new();
        if hi <= lo {
            return acc;
        }
        let total = hi - lo;
        match &self.family {
            Family::PerturbedBeta { .. } => {
                let n = SMOOTH_SAMPLES_PER_CELL;
                let w = 1.0 / n as f64;
                for i in 0..n {
                    let x = lo + (i as f64 + 0.5) * total * w;
                    push_mass(&mut acc, partition.cell_of(self.apply(x)), w);
                }
            }
            _ => {
                // split at branch endpoints, then map each affine piece exactly
                let mut cuts = vec![lo];
                cuts.extend(self.partition.iter().copied().filter(|&p| p > lo && p < hi));
                cuts.push(hi);
                for win in cuts.windows(2) {
                    let (a, b) = (win[0], win[1]);
                    let (slope, offset) = self.affine_coeffs(self.branch_of(a));
                    let (mut ya, mut yb) = (slope * a + offset, slope * b + offset);
                    if ya > yb {
                        std::mem::swap(&mut ya, &mut yb);
                    }
                    let weight = (b - a) / total;
                    spread_interval(&mut acc, ya, yb, weight, partition);
                }
            }
        }
        acc.sort_unstable_by_key(|e| e.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(acc.len());
        for (c, w) in acc {
            match merged.last_mut() {
                Some(last) if last.0 == c => last.1 += w,
                _ => merged.push((c, w)),
            }
        }
        merged.retain(|e| e.1 > 0.0);
        merged
    }

    fn affine_coeffs(&self, branch: usize) -> (f64, f64) {
        match &self.family {
            Family::ModBeta(b) => (*b as f64, -(branch as f64)),
            Family::Affine(branches) => (branches[branch].slope, branches[branch].offset),
            Family::PerturbedBeta { .. } => unreachable!(),
        }
    }
}

fn push_mass(acc: &mut Vec<(usize, f64)>, cell: usize, w: f64) {
    acc.push((cell, w));
}

/// Spreads `weight` uniformly over the real interval `[ya, yb)` reduced mod 1.
fn spread_interval(acc: &mut Vec<(usize, f64)>, ya: f64, yb: f64, weight: f64, partition: &Partition) {
    let len = yb - ya;
    if len <= 0.0 {
        return;
    }
    let mut start = ya;
    while start < yb {
        let base = start.floor();
        let end = yb.min(base + 1.0);
        let (lo, hi) = (start - base, end - base);
        let first = partition.cell_of(lo);
        for c in first..partition.len() {
            let (cl, cr) = partition.cell(c);
            if cl >= hi {
                break;
            }
            let ov = cr.min(hi) - cl.max(lo);
            if ov > 0.0 {
                acc.push((c, weight * ov / len));
            }
        }
        start = end;
    }
}

fn check_unit(x: f64) -> Result<()> {
    if (0.0..1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Domain(x))
    }
}

/// An ordered partition of `[0, 1)` into half-open cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    edges: Vec<f64>,
}

impl Partition {
    pub fn uniform(n: usize) -> Self {
        Self {
            edges: (0..=n).map(|i| i as f64 / n as f64).collect(),
        }
    }

    /// Uniform grid of `n` cells refined by the extra cut points.
    pub fn refined(n: usize, cuts: &[f64]) -> Self {
        let mut edges: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        edges.extend(cuts.iter().copied().filter(|&c| c > 0.0 && c < 1.0));
        edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
        edges.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        *edges.last_mut().unwrap() = 1.0;
        Self { edges }
    }

    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges[0] != 0.0 || *edges.last().unwrap() != 1.0 {
            return Err(Error::InvalidArgument("partition must run from 0 to 1".into()));
        }
        if edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("partition edges must increase".into()));
        }
        Ok(Self { edges })
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn cell(&self, i: usize) -> (f64, f64) {
        (self.edges[i], self.edges[i + 1])
    }

    pub fn width(&self, i: usize) -> f64 {
        self.edges[i + 1] - self.edges[i]
    }

    /// Cell `[e_i, e_{i+1})` containing `x`.
    pub fn cell_of(&self, x: f64) -> usize {
        self.edges.partition_point(|&e| e <= x).saturating_sub(1).min(self.len() - 1)
    }

    /// Fraction of cell `i` covered by `[lo, hi)`.
    pub fn overlap_fraction(&self, i: usize, lo: f64, hi: f64) -> f64 {
        let (a, b) = self.cell(i);
        ((b.min(hi) - a.max(lo)).max(0.0) / (b - a)).min(1.0)
    }
}

/// A bin-averaged probability density on a partition of `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    partition: Partition,
    values: Vec<f64>,
}

impl DensityEstimate {
    /// Builds a density from per-cell masses, normalizing to total mass one.
    pub fn from_masses(partition: Partition, masses: &[f64]) -> Self {
        let total: f64 = masses.iter().sum();
        let values = masses
            .iter()
            .enumerate()
            .map(|(i, m)| if total > 0.0 { m / total / partition.width(i) } else { 0.0 })
            .collect();
        Self { partition, values }
    }

    pub fn from_values(partition: Partition, values: Vec<f64>) -> Self {
        Self { partition, values }
    }

    pub fn grid_size(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    /// Σ value · width.
    pub fn total_mass(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.partition.width(i))
            .sum()
    }

    /// ρ(a⁺): value on the bin `[e_i, e_{i+1})` containing `a`.
    pub fn right_limit(&self, a: f64) -> f64 {
        self.values[self.partition.cell_of(a)]
    }

    /// ρ(a⁻): value on the bin whose closure has `a` as an interior or right point.
    pub fn left_limit(&self, a: f64) -> f64 {
        let c = self.partition.cell_of(a);
        if c > 0 && self.partition.cell(c).0 == a {
            self.values[c - 1]
        } else {
            self.values[c]
        }
    }

    pub fn value_at(&self, x: f64) -> f64 {
        self.right_limit(x)
    }

    /// L¹ distance to a density given pointwise by bin averages of `other`.
    pub fn l1_distance(&self, other: &DensityEstimate) -> f64 {
        assert_eq!(self.partition, other.partition, "densities on different partitions");
        self.values
            .iter()
            .zip(&other.values)
            .enumerate()
            .map(|(i, (a, b))| (a - b).abs() * self.partition.width(i))
            .sum()
    }
}

/// Sparse 1D Ulam matrix: row `i` lists where the mass of cell `i` goes.
#[derive(Debug, Clone)]
pub struct UlamMatrix1d {
    pub partition: Partition,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl UlamMatrix1d {
    pub fn build(map: &PiecewiseExpandingMap, partition: Partition) -> Self {
        let rows = (0..partition.len())
            .map(|i| {
                let (a, b) = partition.cell(i);
                map.image_distribution(a, b, &partition)
            })
            .collect();
        Self { partition, rows }
    }

    /// Mass transport `out = v · K`.
    pub fn push_forward(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, row) in self.rows.iter().enumerate() {
            let m = v[i];
            if m != 0.0 {
                for &(j, w) in row {
                    out[j] += m * w;
                }
            }
        }
    }
}

/// Invariant density of τ from the 1D Ulam matrix and power iteration.
#[derive(Debug, Clone)]
pub struct InvariantDensity {
    pub density: DensityEstimate,
    pub eigenvalue: f64,
    pub iterations: usize,
}

/// Fixed density of the closed 1D Ulam matrix on `n` uniform bins.
pub fn invariant_density(map: &PiecewiseExpandingMap, n: usize) -> Result<InvariantDensity> {
    if n < 16 {
        return Err(Error::InvalidArgument(format!("grid size {n} < 16")));
    }
    const TOL: f64 = 1e-12;
    const MAX_ITER: usize = 100_000;
    let k = UlamMatrix1d::build(map, Partition::uniform(n));
    let mut v: Vec<f64> = (0..n).map(|i| k.partition.width(i)).collect();
    let mut w = vec![0.0; n];
    for it in 1..=MAX_ITER {
        k.push_forward(&v, &mut w);
        let lambda: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= lambda);
        let diff: f64 = v.iter().zip(&w).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut v, &mut w);
        if diff <= TOL {
            // eigenvalue of the converged vector
            k.push_forward(&v, &mut w);
            let eigenvalue: f64 = w.iter().sum();
            return Ok(InvariantDensity {
                density: DensityEstimate::from_masses(k.partition.clone(), &v),
                eigenvalue,
                iterations: it,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITER,
        residual: f64::NAN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::q;

    fn tent() -> PiecewiseExpandingMap {
        // [0,1/3) slope 3; [1/3,1) decreasing slope -3/2 from 1 down to 0
        PiecewiseExpandingMap::affine(
            vec![q(0, 1), q(1, 3), q(1, 1)],
            vec![q(3, 1), q(-3, 2)],
            vec![q(0, 1), q(3, 2)],
        )
        .unwrap()
    }

    #[test]
    fn eval_mod5_examples() {
        let m = PiecewiseExpandingMap::mod_beta(5).unwrap();
        assert!((m.eval(0.3).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(m.eval(0.5).unwrap(), 0.5);
        assert_eq!(m.eval(0.25).unwrap(), 0.25);
        assert!(matches!(m.eval(1.0), Err(Error::Domain(_))));
        assert!(matches!(m.eval(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn derivative_examples() {
        let m5 = PiecewiseExpandingMap::mod_beta(5).unwrap();
        let m2 = PiecewiseExpandingMap::mod_beta(2).unwrap();
        assert_eq!(m5.deriv(0.123).unwrap(), 5.0);
        assert_eq!(m2.deriv(0.7).unwrap(), 2.0);
        assert_eq!(m5.deriv_iterate(0.5, 2).unwrap(), 25.0);
        assert_eq!(m5.deriv_iterate(0.25, 2).unwrap(), 25.0);
        assert!(matches!(m5.deriv(0.4), Err(Error::Singularity(_))));
    }

    #[test]
    fn exact_evaluation() {
        let m = PiecewiseExpandingMap::mod_beta(5).unwrap();
        assert_eq!(m.eval_exact(&q(1, 2)).unwrap(), q(1, 2));
        assert_eq!(m.eval_exact(&q(1, 4)).unwrap(), q(1, 4));
        assert_eq!(m.eval_exact(&q(3, 10)).unwrap(), q(1, 2));
        assert_eq!(m.deriv_exact(&q(1, 4)).unwrap(), q(5, 1));
        let t = tent();
        assert_eq!(t.eval_exact(&q(2, 3)).unwrap(), q(1, 2));
    }

    #[test]
    fn rejects_non_onto_and_contracting_branches() {
        let e = PiecewiseExpandingMap::affine(
            vec![q(0, 1), q(1, 2), q(1, 1)],
            vec![q(3, 1), q(2, 1)],
            vec![q(0, 1), q(0, 1)],
        );
        assert!(matches!(e, Err(Error::InvalidMap(_))));
        assert!(PiecewiseExpandingMap::mod_beta(1).is_err());
        let spec = MapSpec::PerturbedBeta { beta: 2, amplitude: 0.2 };
        assert!(PiecewiseExpandingMap::from_spec(&spec).is_err());
    }

    #[test]
    fn branch_membership_is_half_open() {
        let m = PiecewiseExpandingMap::mod_beta(5).unwrap();
        assert_eq!(m.branch_of(0.2), 1);
        assert_eq!(m.branch_of(0.1999999), 0);
        assert_eq!(m.eval(0.2).unwrap(), 0.0);
    }

    #[test]
    fn clamp_near_one() {
        let m = PiecewiseExpandingMap::mod_beta(2).unwrap();
        let x = 0.5 - 1e-17; // rounds to 0.5 - ulp
        let y = m.eval(x).unwrap();
        assert!(y < 1.0 - 1e-15 || y == 0.0);
    }

    #[test]
    fn doubling_ulam_rows_at_n4() {
        let m = PiecewiseExpandingMap::mod_beta(2).unwrap();
        let k = UlamMatrix1d::build(&m, Partition::uniform(4));
        for row in &k.rows {
            assert_eq!(row.len(), 2);
            for &(_, w) in row {
                assert!((w - 0.5).abs() < 1e-15);
            }
        }
        assert_eq!(k.rows[1].iter().map(|e| e.0).collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn invariant_density_of_full_affine_maps_is_lebesgue() {
        for m in [PiecewiseExpandingMap::mod_beta(5).unwrap(), tent()] {
            let inv = invariant_density(&m, 60).unwrap();
            assert!((inv.eigenvalue - 1.0).abs() < 1e-10);
            assert!((inv.density.total_mass() - 1.0).abs() < 1e-10);
            for v in inv.density.values() {
                assert!((v - 1.0).abs() < 1e-10, "{v}");
            }
        }
    }

    #[test]
    fn invariant_density_rejects_small_grids() {
        let m = PiecewiseExpandingMap::mod_beta(3).unwrap();
        assert!(invariant_density(&m, 8).is_err());
    }

    #[test]
    fn density_limits_read_adjacent_bins() {
        let p = Partition::uniform(4);
        let d = DensityEstimate::from_values(p, vec![0.5, 1.0, 1.5, 1.0]);
        assert_eq!(d.right_limit(0.5), 1.5);
        assert_eq!(d.left_limit(0.5), 1.0);
        assert_eq!(d.left_limit(0.6), 1.5);
        assert!((d.total_mass() - 1.0).abs() < 1e-15);
    }
}
