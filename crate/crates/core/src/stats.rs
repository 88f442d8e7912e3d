//! Monte Carlo estimators for survival, hitting times, collision counts and
//! cluster statistics.
//!
//! Every trajectory draws from its own stream of the master seed and results
//! are collected in trajectory order, so outputs do not depend on the number
//! of worker threads.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval_map::{invariant_density, DensityEstimate};
use crate::lattice::{Direction, Dynamics, Lattice, Mode, Pair};
use crate::rng::RngSpec;
use crate::ulam::{self, BoxModel, BoxShape, OperatorKind};

pub const MIN_SURVIVAL_TRAJECTORIES: usize = 1_000;
pub const MIN_FIT_SURVIVORS: f64 = 1_000.0;
pub const MIN_KS_SAMPLES: usize = 100;
pub const MIN_CF_TRAJECTORIES: usize = 10_000;
pub const MIN_BETA_HITS: usize = 500;
pub const HORIZON_GUARD: u64 = 1_000_000_000;
pub const DEFAULT_BURN_IN: u64 = 1_000;
pub const DEFAULT_CLUSTER_GAP: u64 = 10;

/// How initial states are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitKind {
    /// i.i.d. uniform coordinates.
    Lebesgue,
    /// Uniform start followed by `burn_in` decoupled steps.
    Invariant { burn_in: u64 },
}

impl Default for InitKind {
    fn default() -> Self {
        InitKind::Invariant { burn_in: DEFAULT_BURN_IN }
    }
}

fn lebesgue_state(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>()).collect()
}

fn initial_state(lattice: &Lattice, init: InitKind, rng: &mut ChaCha8Rng, buf: &mut Vec<Pair>) -> Vec<f64> {
    let mut x = lebesgue_state(lattice.scheme.n_sites(), rng);
    if let InitKind::Invariant { burn_in } = init {
        for _ in 0..burn_in {
            lattice.advance(&mut x, Dynamics::DecoupledAtFocal, buf);
        }
    }
    x
}

/// Surviving fraction `m̂(t_δ > n)` for `n = 0..=horizon`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalCurve {
    pub n: Vec<u64>,
    pub fraction: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_traj: usize,
    /// Trajectories re-run under the decoupled dynamics as a cross-check.
    pub decoupled_checked: usize,
    pub decoupled_mismatches: usize,
}

impl SurvivalCurve {
    /// Curve from first-hit times (`None` = not hit within the horizon).
    pub fn from_times(times: &[Option<u64>], horizon: u64) -> Self {
        let total = times.len();
        let mut hits_at = vec![0usize; horizon as usize + 1];
        for t in times.iter().flatten() {
            hits_at[*t as usize] += 1;
        }
        let mut alive = total;
        let mut fraction = Vec::with_capacity(hits_at.len());
        let mut stderr = Vec::with_capacity(hits_at.len());
        for h in hits_at {
            alive -= h;
            let p = alive as f64 / total as f64;
            fraction.push(p);
            stderr.push((p * (1.0 - p) / total as f64).sqrt());
        }
        Self {
            n: (0..=horizon).collect(),
            fraction,
            stderr,
            n_traj: total,
            decoupled_checked: 0,
            decoupled_mismatches: 0,
        }
    }

    /// A noiseless curve, mainly for testing the fit.
    pub fn from_fractions(fraction: Vec<f64>, n_traj: usize) -> Self {
        let stderr = fraction
            .iter()
            .map(|p| (p * (1.0 - p) / n_traj as f64).sqrt())
            .collect();
        Self {
            n: (0..fraction.len() as u64).collect(),
            fraction,
            stderr,
            n_traj,
            decoupled_checked: 0,
            decoupled_mismatches: 0,
        }
    }
}

/// Survival curve under the full dynamics from product-Lebesgue starts.
pub fn estimate_survival(lattice: &Lattice, n_traj: usize, horizon: u64, rng: RngSpec) -> Result<SurvivalCurve> {
    if n_traj < MIN_SURVIVAL_TRAJECTORIES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_SURVIVAL_TRAJECTORIES} trajectories, got {n_traj}"
        )));
    }
    guard_horizon(horizon)?;
    let results: Vec<(Option<u64>, Option<bool>)> = (0..n_traj as u64)
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            let mut r = rng.stream(i);
            let x0 = lebesgue_state(lattice.scheme.n_sites(), &mut r);
            let mut x = x0.clone();
            let t = lattice.first_hit_in_place(&mut x, horizon, Dynamics::Full, buf);
            let check = (i % 100 == 0).then(|| {
                let mut y = x0;
                lattice.first_hit_in_place(&mut y, horizon, Dynamics::DecoupledAtFocal, buf) == t
            });
            (t, check)
        })
        .collect();
    let times: Vec<Option<u64>> = results.iter().map(|r| r.0).collect();
    if lattice.scheme.mode() != Mode::Disabled && times.iter().all(|t| *t == Some(0)) {
        return Err(Error::AllHitImmediately);
    }
    let mut curve = SurvivalCurve::from_times(&times, horizon);
    curve.decoupled_checked = results.iter().filter(|r| r.1.is_some()).count();
    curve.decoupled_mismatches = results.iter().filter(|r| r.1 == Some(false)).count();
    Ok(curve)
}

fn guard_horizon(h: u64) -> Result<()> {
    if h > HORIZON_GUARD {
        Err(Error::HorizonOverflow(h))
    } else {
        Ok(())
    }
}

/// Least-squares escape rate over a window of the survival curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EscapeFit {
    pub rate: f64,
    pub r_squared: f64,
    /// Standard error from the binomial hazard noise of `ln m̂`, which
    /// accumulates like a random walk along the window.
    pub stderr: f64,
    pub window: (u64, u64),
}

pub fn fit_escape_rate(curve: &SurvivalCurve, window: (u64, u64)) -> Result<EscapeFit> {
    let (n0, mut n1) = window;
    let last = *curve.n.last().unwrap_or(&0);
    n1 = n1.min(last);
    let survivors = |n: u64| curve.fraction[n as usize] * curve.n_traj as f64;
    while n1 > n0 && survivors(n1) < MIN_FIT_SURVIVORS {
        n1 -= 1;
    }
    if n1 < n0 + 2 || survivors(n1) < MIN_FIT_SURVIVORS {
        return Err(Error::InsufficientSurvivors {
            survivors: survivors(n1) as usize,
            step: n1 as usize,
            required: MIN_FIT_SURVIVORS as usize,
        });
    }
    let pts: Vec<(f64, f64)> = (n0..=n1).map(|n| (n as f64, curve.fraction[n as usize].ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    let rate = -slope;
    let mean_survivors = (n0..=n1).map(survivors).sum::<f64>() / k;
    let stderr = (6.0 * rate.max(0.0) / (5.0 * k * mean_survivors)).sqrt();
    Ok(EscapeFit {
        rate: if rate == 0.0 { 0.0 } else { rate },
        r_squared,
        stderr,
        window: (n0, n1),
    })
}

/// First hitting times under the decoupled dynamics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HittingSample {
    /// Hitting time, or the horizon when censored.
    pub times: Vec<u64>,
    pub censored: Vec<bool>,
    pub init: InitKind,
    pub horizon: u64,
    pub warnings: Vec<String>,
}

impl HittingSample {
    pub fn uncensored(&self) -> Vec<u64> {
        self.times
            .iter()
            .zip(&self.censored)
            .filter(|(_, c)| !**c)
            .map(|(t, _)| *t)
            .collect()
    }

    pub fn censored_count(&self) -> usize {
        self.censored.iter().filter(|c| **c).count()
    }

    /// Same information as a survival curve.
    pub fn survival(&self) -> SurvivalCurve {
        let times: Vec<Option<u64>> = self
            .times
            .iter()
            .zip(&self.censored)
            .map(|(t, c)| (!c).then_some(*t))
            .collect();
        SurvivalCurve::from_times(&times, self.horizon)
    }
}

pub fn sample_hitting_times(lattice: &Lattice, n_traj: usize, horizon: u64, init: InitKind, rng: RngSpec) -> Result<HittingSample> {
    guard_horizon(horizon)?;
    let hits: Vec<Option<u64>> = (0..n_traj as u64)
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            let mut r = rng.stream(i);
            let mut x = initial_state(lattice, init, &mut r, buf);
            lattice.first_hit_in_place(&mut x, horizon, Dynamics::DecoupledAtFocal, buf)
        })
        .collect();
    let censored: Vec<bool> = hits.iter().map(Option::is_none).collect();
    let times = hits.iter().map(|t| t.unwrap_or(horizon)).collect();
    let mut warnings = Vec::new();
    let cens = censored.iter().filter(|c| **c).count();
    if n_traj > 0 && cens * 2 > n_traj {
        warnings.push(format!(
            "{cens} of {n_traj} hitting times censored: horizon {horizon} is below the mean hitting time"
        ));
    }
    Ok(HittingSample {
        times,
        censored,
        init,
        horizon,
        warnings,
    })
}

/// Rescaling of hitting times before comparing with Exp(1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scaling {
    EmpiricalMean,
    Rate { lambda: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    /// Factor applied to the raw times.
    pub scale: f64,
}

/// Kolmogorov–Smirnov distance between rescaled times and Exp(1).
pub fn ks_exponential(sample: &[f64], scaling: Scaling) -> Result<KsResult> {
    let n = sample.len();
    if n < MIN_KS_SAMPLES {
        return Err(Error::InvalidArgument(format!("KS needs {MIN_KS_SAMPLES} samples, got {n}")));
    }
    let scale = match scaling {
        Scaling::EmpiricalMean => {
            let mean = sample.iter().sum::<f64>() / n as f64;
            if mean > 0.0 {
                1.0 / mean
            } else {
                1.0
            }
        }
        Scaling::Rate { lambda } => lambda,
    };
    let mut xs: Vec<f64> = sample.iter().map(|t| t * scale).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite sample"));
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = 1.0 - (-x.max(0.0)).exp();
        d = d.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
    }
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_pvalue(d, n),
        n,
        scale,
    })
}

/// Asymptotic Kolmogorov tail with the Stephens small-sample correction.
pub fn kolmogorov_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lam = (sn + 0.12 + 0.11 / sn) * d;
    if lam < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lam * lam).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Source of the densities entering the hole-mass formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensitySource {
    /// Eigen-measure of the closed decoupled three-site box.
    Ulam { n: usize },
    /// Long decoupled runs and coordinate histograms.
    Histogram { n_traj: usize, steps: u64, bins: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MassRow {
    pub delta: f64,
    pub direct: f64,
    pub formula: f64,
    pub ratio: f64,
}

/// `Σ_v ρ_τ(a_v) δ² (ρ_q(a_{-v}⁺) + ρ_q(a_{-v}⁻)) / 2`.
pub fn hole_mass_formula(lattice: &Lattice, rho_tau: &DensityEstimate, rho_neighbor: &[DensityEstimate]) -> f64 {
    let s = &lattice.scheme;
    if s.mode() == Mode::Disabled {
        return 0.0;
    }
    let d2 = s.delta() * s.delta();
    s.directions()
        .map(|v| {
            let a = s.center(v);
            let b = s.center(v.neg());
            let rq = &rho_neighbor[v.index()];
            rho_tau.value_at(a) * d2 * (rq.right_limit(b) + rq.left_limit(b)) / 2.0
        })
        .sum()
}

/// Hole mass from the formula with `ρ_q = ρ_τ` and `ρ_τ` from the 1D Ulam density.
pub fn idealized_hole_mass(lattice: &Lattice, grid: usize) -> Result<f64> {
    let rho = invariant_density(&lattice.map, grid)?.density;
    let neighbors = vec![rho.clone(); 2 * lattice.scheme.dimension()];
    Ok(hole_mass_formula(lattice, &rho, &neighbors))
}

pub fn mass_asymptotics_check(lattice: &Lattice, deltas: &[f64], source: DensitySource) -> Result<Vec<MassRow>> {
    let mut rows = Vec::new();
    for &delta in deltas {
        let lat = Lattice::new(lattice.scheme.with_delta(delta.into())?, lattice.map.clone());
        let (direct, rho_tau, neighbors) = match source {
            DensitySource::Ulam { n } => ulam_masses(&lat, n)?,
            DensitySource::Histogram { n_traj, steps, bins, seed } => histogram_masses(&lat, n_traj, steps, bins, RngSpec::new(seed))?,
        };
        let formula = hole_mass_formula(&lat, &rho_tau, &neighbors);
        let ratio = if formula == 0.0 && direct == 0.0 { 1.0 } else { direct / formula };
        rows.push(MassRow {
            delta,
            direct,
            formula,
            ratio,
        });
    }
    Ok(rows)
}

fn ulam_masses(lat: &Lattice, n: usize) -> Result<(f64, DensityEstimate, Vec<DensityEstimate>)> {
    if n < 16 {
        return Err(Error::Resolution(n as f64 * lat.scheme.delta()));
    }
    if lat.scheme.dimension() != 1 {
        return Err(Error::InvalidArgument("the box density source needs d = 1".into()));
    }
    let model = BoxModel::lattice(lat, BoxShape::Triple, n, Dynamics::DecoupledAtFocal, true)?;
    let op = ulam::build_operator::<f64>(&model, OperatorKind::Closed)?;
    let res = ulam::leading_eigen(&op, &model.lebesgue(), ulam::TOLERANCE, ulam::MAX_ITERATIONS)?;
    let direct: f64 = res
        .vector
        .iter()
        .enumerate()
        .map(|(i, m)| m * model.hole_fraction(i))
        .sum();
    let rho_tau = ulam::marginal_density(&res, &model, 1, None)?;
    // +1 channel pairs p* with the right neighbour (axis 2), -1 with the left (axis 0)
    let right = ulam::marginal_density(&res, &model, 2, None)?;
    let left = ulam::marginal_density(&res, &model, 0, None)?;
    Ok((direct, rho_tau, vec![right, left]))
}

fn histogram_masses(lat: &Lattice, n_traj: usize, steps: u64, bins: usize, rng: RngSpec) -> Result<(f64, DensityEstimate, Vec<DensityEstimate>)> {
    let s = &lat.scheme;
    let focal = s.focal();
    let watched: Vec<usize> = std::iter::once(focal)
        .chain(s.directions().map(|v| s.neighbor(focal, v)))
        .collect();
    let per: Vec<(u64, Vec<Vec<u64>>)> = (0..n_traj as u64)
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            let mut r = rng.stream(i);
            let mut x = initial_state(lat, InitKind::default(), &mut r, buf);
            let mut hits = 0u64;
            let mut hist = vec![vec![0u64; bins]; watched.len()];
            for _ in 0..steps {
                if lat.in_hole(&x) {
                    hits += 1;
                }
                for (h, &site) in hist.iter_mut().zip(&watched) {
                    h[((x[site] * bins as f64) as usize).min(bins - 1)] += 1;
                }
                lat.advance(&mut x, Dynamics::DecoupledAtFocal, buf);
            }
            (hits, hist)
        })
        .collect();
    let total = (n_traj as u64 * steps) as f64;
    let direct = per.iter().map(|p| p.0).sum::<u64>() as f64 / total;
    let mut hist = vec![vec![0.0; bins]; watched.len()];
    for (_, h) in &per {
        for (acc, row) in hist.iter_mut().zip(h) {
            for (a, c) in acc.iter_mut().zip(row) {
                *a += *c as f64;
            }
        }
    }
    let part = crate::interval_map::Partition::uniform(bins);
    let dens: Vec<DensityEstimate> = hist.iter().map(|h| DensityEstimate::from_masses(part.clone(), h)).collect();
    let neighbors = s.directions().map(|v| dens[1 + v.index()].clone()).collect();
    Ok((direct, dens[0].clone(), neighbors))
}

/// Collision counts of the full dynamics over `⌊t / μ̂(H_δ)⌋` steps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountingSample {
    pub z: Vec<u64>,
    pub clusters: Vec<Vec<u64>>,
    pub horizon: u64,
    pub t: f64,
    pub hole_mass: f64,
    pub gap: u64,
}

impl CountingSample {
    pub fn mean_z(&self) -> f64 {
        self.z.iter().sum::<u64>() as f64 / self.z.len().max(1) as f64
    }

    pub fn stderr_z(&self) -> f64 {
        let n = self.z.len() as f64;
        let m = self.mean_z();
        let var = self.z.iter().map(|&z| (z as f64 - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        (var / n).sqrt()
    }

    /// Share of clusters of size one.
    pub fn singleton_frequency(&self) -> f64 {
        let all: Vec<u64> = self.clusters.iter().flatten().copied().collect();
        if all.is_empty() {
            return 1.0;
        }
        all.iter().filter(|&&c| c == 1).count() as f64 / all.len() as f64
    }
}

pub fn count_collisions(
    lattice: &Lattice,
    t: f64,
    hole_mass: f64,
    n_traj: usize,
    gap: u64,
    init: InitKind,
    rng: RngSpec,
) -> Result<CountingSample> {
    let horizon = if hole_mass > 0.0 {
        let h = (t / hole_mass).floor();
        if !h.is_finite() || h > HORIZON_GUARD as f64 {
            return Err(Error::HorizonOverflow(if h.is_finite() { h as u64 } else { u64::MAX }));
        }
        h as u64
    } else {
        0
    };
    let per: Vec<(u64, Vec<u64>)> = (0..n_traj as u64)
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            let mut r = rng.stream(i);
            let mut x = initial_state(lattice, init, &mut r, buf);
            let mut hits: Vec<u64> = Vec::new();
            for k in 1..=horizon {
                lattice.advance(&mut x, Dynamics::Full, buf);
                if lattice.in_hole(&x) {
                    hits.push(k);
                }
            }
            (hits.len() as u64, cluster_sizes(&hits, gap))
        })
        .collect();
    let (z, clusters) = per.into_iter().unzip();
    Ok(CountingSample {
        z,
        clusters,
        horizon,
        t,
        hole_mass,
        gap,
    })
}

/// Sizes of maximal runs of hit times whose consecutive gaps are ≤ `gap`.
pub fn cluster_sizes(hits: &[u64], gap: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut current = 0u64;
    for (i, &h) in hits.iter().enumerate() {
        if i > 0 && h - hits[i - 1] > gap {
            out.push(current);
            current = 0;
        }
        current += 1;
    }
    if current > 0 {
        out.push(current);
    }
    out
}

/// Total-variation distance between the law of `z` and Poisson(`mean`).
pub fn tv_to_poisson(z: &[u64], mean: f64) -> f64 {
    let n = z.len() as f64;
    let max = *z.iter().max().unwrap_or(&0) as usize;
    let mut counts = vec![0.0; max + 1];
    for &v in z {
        counts[v as usize] += 1.0;
    }
    let mut p = (-mean).exp();
    let mut covered = 0.0;
    let mut tv = 0.0;
    for (k, c) in counts.iter().enumerate() {
        if k > 0 {
            p *= mean / k as f64;
        }
        covered += p;
        tv += (c / n - p).abs();
    }
    0.5 * (tv + (1.0 - covered).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CfPoint {
    pub s: f64,
    pub value: Complex64,
    /// 95% bootstrap intervals of the real and imaginary parts.
    pub ci_re: (f64, f64),
    pub ci_im: (f64, f64),
}

/// `Ê[e^{isZ}]` with percentile-bootstrap intervals.
pub fn empirical_cf(sample: &CountingSample, s_grid: &[f64], bootstrap: usize, rng: RngSpec) -> Result<Vec<CfPoint>> {
    let z = &sample.z;
    if z.len() < MIN_CF_TRAJECTORIES {
        return Err(Error::InvalidArgument(format!(
            "characteristic function needs {MIN_CF_TRAJECTORIES} trajectories, got {}",
            z.len()
        )));
    }
    let cf = |idx: &mut dyn Iterator<Item = u64>, s: f64| {
        let mut acc = Complex64::new(0.0, 0.0);
        let mut k = 0usize;
        for v in idx {
            acc += Complex64::from_polar(1.0, s * v as f64);
            k += 1;
        }
        acc / k as f64
    };
    let n = z.len();
    let resamples: Vec<Vec<usize>> = (0..bootstrap as u64)
        .map(|b| {
            let mut r = rng.stream(b);
            (0..n).map(|_| r.random_range(0..n)).collect()
        })
        .collect();
    Ok(s_grid
        .iter()
        .map(|&s| {
            let value = if s == 0.0 {
                Complex64::new(1.0, 0.0)
            } else {
                cf(&mut z.iter().copied(), s)
            };
            let mut re = Vec::with_capacity(bootstrap);
            let mut im = Vec::with_capacity(bootstrap);
            for idx in &resamples {
                let c = cf(&mut idx.iter().map(|&i| z[i]), s);
                re.push(c.re);
                im.push(c.im);
            }
            CfPoint {
                s,
                value,
                ci_re: percentile_interval(&mut re, value.re),
                ci_im: percentile_interval(&mut im, value.im),
            }
        })
        .collect())
}

fn percentile_interval(v: &mut [f64], fallback: f64) -> (f64, f64) {
    if v.is_empty() {
        return (fallback, fallback);
    }
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let at = |q: f64| v[((q * (v.len() - 1) as f64).round() as usize).min(v.len() - 1)];
    (at(0.025), at(0.975))
}

/// Compound-Poisson characteristic function `exp(-(1 - φ_X(s)) θ t)`.
pub fn compound_poisson_cf(theta: f64, t: f64, phi_x: Complex64) -> Complex64 {
    (-(Complex64::new(1.0, 0.0) - phi_x) * theta * t).exp()
}

/// Which of the two cluster-law probabilities to estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaVariant {
    /// Decoupled first step, then `k` full steps with `j` hits among times `0..k`.
    First,
    /// `k + 1` full steps with `j` hits among times `1..=k`.
    Second,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaEstimate {
    pub k: usize,
    pub j: usize,
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
}

fn sample_in_hole(lat: &Lattice, rho: &DensityEstimate, r: &mut ChaCha8Rng, burn_in: u64, buf: &mut Vec<Pair>) -> (Vec<f64>, Direction, f64) {
    let s = &lat.scheme;
    let mut x = initial_state(lat, InitKind::Invariant { burn_in }, r, buf);
    let dirs: Vec<Direction> = s.directions().collect();
    let v = dirs[r.random_range(0..dirs.len())];
    let (a0, a1) = s.delta_zone(v);
    let (b0, b1) = s.delta_zone(v.neg());
    let xf = a0 + (a1 - a0) * r.random::<f64>();
    let xq = b0 + (b1 - b0) * r.random::<f64>();
    x[s.focal()] = xf;
    x[s.neighbor(s.focal(), v)] = xq;
    (x, v, rho.value_at(xf) * rho.value_at(xq))
}

/// Importance-sampled estimate of a cluster-law probability conditioned on `H_δ`.
pub fn estimate_beta(
    lattice: &Lattice,
    k: usize,
    j: usize,
    n_traj: usize,
    variant: BetaVariant,
    burn_in: u64,
    rng: RngSpec,
) -> Result<BetaEstimate> {
    if lattice.scheme.mode() == Mode::Disabled {
        return Err(Error::InsufficientHits { found: 0, required: MIN_BETA_HITS });
    }
    if n_traj < MIN_BETA_HITS {
        return Err(Error::InsufficientHits {
            found: n_traj,
            required: MIN_BETA_HITS,
        });
    }
    let rho = invariant_density(&lattice.map, 1024)?.density;
    let per: Vec<(f64, bool)> = (0..n_traj as u64)
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            let mut r = rng.stream(i);
            let (mut x, _, w) = sample_in_hole(lattice, &rho, &mut r, burn_in, buf);
            let mut count = 0usize;
            let hit_end = match variant {
                BetaVariant::First => {
                    lattice.advance(&mut x, Dynamics::DecoupledAtFocal, buf);
                    for _ in 0..k {
                        count += usize::from(lattice.in_hole(&x));
                        lattice.advance(&mut x, Dynamics::Full, buf);
                    }
                    lattice.in_hole(&x)
                }
                BetaVariant::Second => {
                    for _ in 0..k {
                        lattice.advance(&mut x, Dynamics::Full, buf);
                        count += usize::from(lattice.in_hole(&x));
                    }
                    lattice.advance(&mut x, Dynamics::Full, buf);
                    lattice.in_hole(&x)
                }
            };
            (w, hit_end && count == j)
        })
        .collect();
    let sw: f64 = per.iter().map(|p| p.0).sum();
    let sw2: f64 = per.iter().map(|p| p.0 * p.0).sum();
    let hit: f64 = per.iter().filter(|p| p.1).map(|p| p.0).sum();
    let value = hit / sw;
    let n_eff = sw * sw / sw2;
    Ok(BetaEstimate {
        k,
        j,
        value,
        stderr: (value * (1.0 - value) / n_eff).sqrt().max(1.0 / n_eff),
        n: n_traj,
    })
}

/// Returns `H → T^{-k} H` under the decoupled dynamics, and how many of them
/// are carried by a neighbour coordinate other than the one predicted by
/// the centre orbit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexReturnCheck {
    pub returns: usize,
    pub moved: usize,
}

impl IndexReturnCheck {
    pub fn fraction(&self) -> f64 {
        if self.returns == 0 {
            0.0
        } else {
            self.moved as f64 / self.returns as f64
        }
    }
}

pub fn index_return_check(lattice: &Lattice, k_max: usize, n_traj: usize, burn_in: u64, rng: RngSpec) -> Result<IndexReturnCheck> {
    let rho = invariant_density(&lattice.map, 1024)?.density;
    let s = &lattice.scheme;
    let per: Vec<(usize, usize)> = (0..n_traj as u64)
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            let mut r = rng.stream(i);
            let (mut x, v, _) = sample_in_hole(lattice, &rho, &mut r, burn_in, buf);
            let mut pos = s.neighbor(s.focal(), v);
            let (mut returns, mut moved) = (0, 0);
            for _ in 1..=k_max {
                lattice.swap_stage(&mut x, Dynamics::DecoupledAtFocal, buf);
                pos = crate::lattice::follow_swaps(pos, buf);
                for c in x.iter_mut() {
                    *c = lattice.map.apply(*c);
                }
                for w in s.directions() {
                    let (lo, hi) = s.delta_zone(w);
                    let (lo2, hi2) = s.delta_zone(w.neg());
                    let q = s.neighbor(s.focal(), w);
                    let xf = x[s.focal()];
                    if lo <= xf && xf < hi && lo2 <= x[q] && x[q] < hi2 {
                        returns += 1;
                        if pos != q {
                            moved += 1;
                        }
                    }
                }
            }
            (returns, moved)
        })
        .collect();
    Ok(IndexReturnCheck {
        returns: per.iter().map(|p| p.0).sum(),
        moved: per.iter().map(|p| p.1).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval_map::PiecewiseExpandingMap;
    use crate::lattice::CollisionScheme;

    fn example(delta: &str, mode: Mode) -> Lattice {
        Lattice::new(
            CollisionScheme::worked_example(3, delta, mode).unwrap(),
            PiecewiseExpandingMap::mod_beta(5).unwrap(),
        )
    }

    #[test]
    fn geometric_curve_fit_is_exact() {
        let f: Vec<f64> = (0..200).map(|n| 0.8f64.powi(n)).collect();
        let c = SurvivalCurve::from_fractions(f, 1usize << 62);
        let fit = fit_escape_rate(&c, (0, 50)).unwrap();
        assert!((fit.rate + 0.8f64.ln()).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flat_curve_has_zero_rate() {
        let c = SurvivalCurve::from_fractions(vec![1.0; 100], 10_000);
        let fit = fit_escape_rate(&c, (0, 99)).unwrap();
        assert_eq!(fit.rate, 0.0);
    }

    #[test]
    fn fit_window_shrinks_to_survivors() {
        let f: Vec<f64> = (0..200).map(|n| 0.9f64.powi(n)).collect();
        let c = SurvivalCurve::from_fractions(f, 100_000);
        let fit = fit_escape_rate(&c, (0, 199)).unwrap();
        assert!(fit.window.1 < 199);
        assert!(100_000.0 * 0.9f64.powi(fit.window.1 as i32) >= 1000.0);
        let tiny = SurvivalCurve::from_fractions(vec![0.001; 10], 1000);
        assert!(matches!(fit_escape_rate(&tiny, (0, 9)), Err(Error::InsufficientSurvivors { .. })));
    }

    #[test]
    fn cluster_runs() {
        assert_eq!(cluster_sizes(&[], 10), Vec::<u64>::new());
        assert_eq!(cluster_sizes(&[3, 5, 40, 100, 101, 102], 10), vec![2, 1, 3]);
    }

    #[test]
    fn ks_constant_sample_is_far() {
        let r = ks_exponential(&vec![5.0; 1000], Scaling::EmpiricalMean).unwrap();
        assert!(r.statistic >= 0.5);
        assert!(ks_exponential(&[1.0; 10], Scaling::EmpiricalMean).is_err());
    }

    #[test]
    fn kolmogorov_tail_values() {
        // Q(1.36) ≈ 0.049 is the classical 5% point
        let n = 1_000_000;
        let d = 1.358 / (n as f64).sqrt();
        assert!((kolmogorov_pvalue(d, n) - 0.05).abs() < 2e-3);
    }

    #[test]
    fn poisson_tv_of_exact_frequencies_is_small() {
        let z: Vec<u64> = (0..10_000u64).map(|i| u64::from(i % 2 == 0)).collect();
        assert!(tv_to_poisson(&z, 0.5) > 0.1);
        assert!(tv_to_poisson(&[0; 100], 0.0) < 1e-15);
    }

    #[test]
    fn disabled_zones_give_flat_curve_and_no_counts() {
        let lat = example("1/100", Mode::Disabled);
        let c = estimate_survival(&lat, 1000, 50, RngSpec::new(1)).unwrap();
        assert!(c.fraction.iter().all(|&f| f == 1.0));
        let z = count_collisions(&lat, 1.0, 1e-3, 100, 10, InitKind::Lebesgue, RngSpec::new(1)).unwrap();
        assert!(z.z.iter().all(|&v| v == 0));
    }

    #[test]
    fn survival_matches_hitting_sample() {
        let lat = example("1/20", Mode::IsolatedNeighborhood);
        let rng = RngSpec::new(42);
        let c = estimate_survival(&lat, 2000, 300, rng).unwrap();
        let h = sample_hitting_times(&lat, 2000, 300, InitKind::Lebesgue, rng).unwrap();
        assert_eq!(c.fraction, h.survival().fraction);
        assert_eq!(c.decoupled_mismatches, 0);
        assert_eq!(c.decoupled_checked, 20);
    }

    #[test]
    fn horizon_guard() {
        let lat = example("1/100", Mode::IsolatedNeighborhood);
        let e = count_collisions(&lat, 1e6, 1e-6, 1, 10, InitKind::Lebesgue, RngSpec::new(0));
        assert!(matches!(e, Err(Error::HorizonOverflow(_))));
    }

    #[test]
    fn cf_of_zero_counts_is_one() {
        let sample = CountingSample {
            z: vec![0; MIN_CF_TRAJECTORIES],
            clusters: vec![vec![]; MIN_CF_TRAJECTORIES],
            horizon: 1,
            t: 1.0,
            hole_mass: 1.0,
            gap: 10,
        };
        let cf = empirical_cf(&sample, &[0.0, 0.5, 2.0], 20, RngSpec::new(3)).unwrap();
        for p in cf {
            assert!((p.value - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }
}
