//! Reference posteriors and distances used to check the samplers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::{PosteriorProblem, RegionD};

/// Most bins per axis used by [`tv_distance`].
pub const MAX_TV_BINS: usize = 50;

fn logsumexp(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Trapezoid weight of point `i` out of `n`.
fn trap_w(i: usize, n: usize) -> f64 {
    if i == 0 || i + 1 == n {
        0.5
    } else {
        1.0
    }
}

/// Normalized density on a regular grid at `d <= 2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridOracle {
    pub dim: usize,
    pub center: Vec<f64>,
    pub half_width: f64,
    pub points: usize,
    pub restricted: bool,
    /// Row-major over `(axis 0, axis 1)`; axis 0 varies slowest.
    pub density: Vec<f64>,
}

impl GridOracle {
    /// Builds from a log-density evaluated at grid points; normalizes by the
    /// trapezoid rule.
    pub fn from_log_density(
        center: Vec<f64>,
        half_width: f64,
        points: usize,
        restricted: bool,
        mut log_density: impl FnMut(&[f64]) -> Result<f64>,
    ) -> Result<Self> {
        let dim = center.len();
        if dim == 0 || dim > 2 {
            return Err(Error::invalid(
                "d",
                format!("grid oracles support d <= 2, got {dim}"),
            ));
        }
        if points < 3 {
            return Err(Error::invalid("points_per_axis", "need at least 3 points"));
        }
        if !(half_width > 0.0) {
            return Err(Error::invalid("half_width", "must be positive"));
        }
        let total = points.pow(dim as u32);
        let mut logs = Vec::with_capacity(total);
        let mut z = vec![0.0; dim];
        let step = 2.0 * half_width / (points - 1) as f64;
        for flat in 0..total {
            let mut rem = flat;
            for a in (0..dim).rev() {
                z[a] = center[a] - half_width + (rem % points) as f64 * step;
                rem /= points;
            }
            logs.push(log_density(&z)?);
        }
        let cell = step.powi(dim as i32);
        let weights: Vec<f64> = (0..total)
            .map(|flat| {
                let mut w = 1.0;
                let mut rem = flat;
                for _ in 0..dim {
                    w *= trap_w(rem % points, points);
                    rem /= points;
                }
                w
            })
            .collect();
        let log_z = logsumexp(logs.iter().zip(&weights).map(|(l, w)| l + w.ln())) + cell.ln();
        if !log_z.is_finite() {
            return Err(Error::Support(
                "oracle density vanishes on the whole grid".into(),
            ));
        }
        let density = logs.iter().map(|l| (l - log_z).exp()).collect();
        Ok(Self {
            dim,
            center,
            half_width,
            points,
            restricted,
            density,
        })
    }

    pub fn step(&self) -> f64 {
        2.0 * self.half_width / (self.points - 1) as f64
    }

    pub fn coord(&self, i: usize, axis: usize) -> f64 {
        self.center[axis] - self.half_width + i as f64 * self.step()
    }

    /// Trapezoid integral of the stored density.
    pub fn integral(&self) -> f64 {
        let n = self.points;
        let cell = self.step().powi(self.dim as i32);
        self.density
            .iter()
            .enumerate()
            .map(|(flat, p)| {
                let mut w = 1.0;
                let mut rem = flat;
                for _ in 0..self.dim {
                    w *= trap_w(rem % n, n);
                    rem /= n;
                }
                w * p
            })
            .sum::<f64>()
            * cell
    }

    /// Density at grid point `i` (d = 1).
    pub fn pdf_at(&self, i: usize) -> f64 {
        self.density[i]
    }

    /// Inverse CDF of the piecewise-linear density at d = 1.
    pub fn quantile(&self, u: f64) -> f64 {
        assert_eq!(self.dim, 1, "quantile needs d = 1");
        let step = self.step();
        let n = self.points;
        let mut acc = 0.0;
        for i in 0..n - 1 {
            let (a, b) = (self.density[i], self.density[i + 1]);
            let mass = 0.5 * (a + b) * step;
            if acc + mass >= u || i == n - 2 {
                let need = (u - acc).max(0.0);
                // Solve a t + (b - a) t^2 / (2 step) = need for t in [0, step].
                let t = if (b - a).abs() < 1e-300 {
                    if a > 0.0 {
                        need / a
                    } else {
                        0.5 * step
                    }
                } else {
                    let k = (b - a) / step;
                    let disc = (a * a + 2.0 * k * need).max(0.0);
                    (disc.sqrt() - a) / k
                };
                return self.coord(i, 0) + t.clamp(0.0, step);
            }
            acc += mass;
        }
        self.coord(n - 1, 0)
    }

    /// Cell masses over `(points - 1)^d` cells, each the average of its
    /// corner densities times the cell volume.
    fn cell_masses(&self) -> Vec<f64> {
        let n = self.points;
        let c = n - 1;
        let vol = self.step().powi(self.dim as i32);
        match self.dim {
            1 => (0..c)
                .map(|i| 0.5 * (self.density[i] + self.density[i + 1]) * vol)
                .collect(),
            _ => {
                let mut out = Vec::with_capacity(c * c);
                for i in 0..c {
                    for j in 0..c {
                        let s = self.density[i * n + j]
                            + self.density[i * n + j + 1]
                            + self.density[(i + 1) * n + j]
                            + self.density[(i + 1) * n + j + 1];
                        out.push(0.25 * s * vol);
                    }
                }
                out
            }
        }
    }
}

/// Builds `p(z | x)` on a grid centred at `zhat` with half-width
/// `max(6 beta / m, 2 rad)`; `restricted` zeroes the mass outside `D`.
pub fn build_grid_oracle(
    problem: &PosteriorProblem,
    region: &RegionD,
    points_per_axis: usize,
    restricted: bool,
) -> Result<GridOracle> {
    let d = problem.dim();
    if d > 2 {
        return Err(Error::invalid(
            "d",
            format!("grid oracles support d <= 2, got {d}"),
        ));
    }
    let half = (6.0 * problem.beta() / problem.constants().m).max(2.0 * region.radius);
    GridOracle::from_log_density(
        region.center.clone(),
        half,
        points_per_axis,
        restricted,
        |z| {
            if restricted && !region.contains(z) {
                return Ok(f64::NEG_INFINITY);
            }
            Ok(-problem.potential(z)?)
        },
    )
}

/// Bin layout shared by samples and oracle: cell ranges grouped into at most
/// [`MAX_TV_BINS`] bins per axis.
struct Bins {
    /// `edges[k]` is the first cell of bin `k`; last entry is the cell count.
    edges: Vec<usize>,
}

impl Bins {
    fn new(cells: usize) -> Self {
        let b = cells.min(MAX_TV_BINS);
        let edges = (0..=b).map(|k| k * cells / b).collect();
        Self { edges }
    }
    fn count(&self) -> usize {
        self.edges.len() - 1
    }
    fn of_cell(&self, cell: usize) -> usize {
        self.edges.partition_point(|&e| e <= cell) - 1
    }
}

fn oracle_bins(oracle: &GridOracle) -> (Bins, Vec<f64>) {
    let cells = oracle.points - 1;
    let bins = Bins::new(cells);
    let nb = bins.count();
    let masses = oracle.cell_masses();
    let mut out = vec![0.0; nb.pow(oracle.dim as u32)];
    match oracle.dim {
        1 => {
            for (c, m) in masses.iter().enumerate() {
                out[bins.of_cell(c)] += m;
            }
        }
        _ => {
            for i in 0..cells {
                for j in 0..cells {
                    out[bins.of_cell(i) * nb + bins.of_cell(j)] += masses[i * cells + j];
                }
            }
        }
    }
    (bins, out)
}

/// Bin index of a sample, or `None` outside the grid.
fn sample_bin(oracle: &GridOracle, bins: &Bins, z: &[f64]) -> Option<usize> {
    let cells = oracle.points - 1;
    let step = oracle.step();
    let mut flat = 0;
    for (za, ca) in z.iter().zip(&oracle.center).take(oracle.dim) {
        let t = (za - (ca - oracle.half_width)) / step;
        if !(t >= 0.0) || t > cells as f64 {
            return None;
        }
        let cell = (t.floor() as usize).min(cells - 1);
        flat = flat * bins.count() + bins.of_cell(cell);
    }
    Some(flat)
}

fn histogram(oracle: &GridOracle, bins: &Bins, samples: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let mut h = vec![0.0; bins.count().pow(oracle.dim as u32)];
    let mut outside = 0.0;
    let w = 1.0 / samples.len() as f64;
    for s in samples {
        match sample_bin(oracle, bins, s) {
            Some(b) => h[b] += w,
            None => outside += w,
        }
    }
    (h, outside)
}

/// Half L1 distance between the sample histogram and the oracle mass on
/// the oracle's bins (at most 50 per axis). Samples off the grid count as
/// mass the oracle does not have.
pub fn tv_distance(samples: &[Vec<f64>], oracle: &GridOracle) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InsufficientSamples(
            "no samples for the TV estimate".into(),
        ));
    }
    let (bins, mass) = oracle_bins(oracle);
    let (hist, outside) = histogram(oracle, &bins, samples);
    let total: f64 = mass.iter().sum();
    let l1: f64 = hist
        .iter()
        .zip(&mass)
        .map(|(a, b)| (a - b / total).abs())
        .sum::<f64>()
        + outside;
    Ok((0.5 * l1).min(1.0))
}

/// TV between two sample sets on the oracle's bins.
pub fn tv_between_samples(a: &[Vec<f64>], b: &[Vec<f64>], oracle: &GridOracle) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientSamples(
            "no samples for the TV estimate".into(),
        ));
    }
    let (bins, _) = oracle_bins(oracle);
    let (ha, oa) = histogram(oracle, &bins, a);
    let (hb, ob) = histogram(oracle, &bins, b);
    let l1: f64 = ha.iter().zip(&hb).map(|(p, q)| (p - q).abs()).sum::<f64>() + (oa - ob).abs();
    Ok(0.5 * l1)
}

/// `log sqrt(chi^2)`, with `-inf` standing for `chi^2 = 0`.
pub fn log_sqrt_chi2(chi2: f64) -> f64 {
    if chi2 <= 1e-12 {
        f64::NEG_INFINITY
    } else {
        0.5 * chi2.ln()
    }
}

/// `chi^2(P0, P) = sum p0^2 / p dz - 1` for densities on a common
/// one-dimensional grid of spacing `dz`.
pub fn chi2_on_grid(p0: &[f64], p: &[f64], dz: f64) -> Result<f64> {
    let n = p0.len();
    let mut s = 0.0;
    for i in 0..n {
        if p0[i] > 0.0 {
            if !(p[i] > 0.0) {
                return Err(Error::Support("P0 puts mass where P has none".into()));
            }
            s += trap_w(i, n) * p0[i] * p0[i] / p[i];
        }
    }
    Ok((s * dz - 1.0).max(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chi2Check {
    pub log_sqrt_chi2: f64,
    /// `d log 4 + (sup_D L - inf_D L) / 2` on the grid.
    pub bound: f64,
    pub sup_l: f64,
    pub inf_l: f64,
    pub ball_radius: f64,
}

/// `chi^2` between `Uniform(z_init +- ball_radius)` and the posterior
/// restricted to `D`, at `d = 1`, with `ball_radius` defaulting to `rad / 4`.
pub fn chi2_initialization(
    problem: &PosteriorProblem,
    region: &RegionD,
    z_init: &[f64],
    grid_points: usize,
    ball_radius: Option<f64>,
) -> Result<Chi2Check> {
    if problem.dim() != 1 {
        return Err(Error::invalid("d", "the chi^2 check runs at d = 1 only"));
    }
    if grid_points < 3 {
        return Err(Error::invalid("grid_points", "need at least 3 points"));
    }
    let r = region.radius;
    let w = ball_radius.unwrap_or(0.25 * r);
    let c = region.center[0];
    let z0 = z_init[0];
    if !(w > 0.0) || (z0 - c).abs() + w > r * (1.0 + 1e-12) {
        return Err(Error::Support(format!(
            "initial ball [{:.6}, {:.6}] is not inside D = [{:.6}, {:.6}]",
            z0 - w,
            z0 + w,
            c - r,
            c + r
        )));
    }
    // log Z over D and log of the integral of e^L over the ball.
    let step_d = 2.0 * r / (grid_points - 1) as f64;
    let mut ls = Vec::with_capacity(grid_points);
    for i in 0..grid_points {
        ls.push(problem.potential(&[c - r + i as f64 * step_d])?);
    }
    let log_z = logsumexp(
        ls.iter()
            .enumerate()
            .map(|(i, l)| -l + trap_w(i, grid_points).ln()),
    ) + step_d.ln();
    let sup_l = ls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let inf_l = ls.iter().cloned().fold(f64::INFINITY, f64::min);
    let step_b = 2.0 * w / (grid_points - 1) as f64;
    let mut lb = Vec::with_capacity(grid_points);
    for i in 0..grid_points {
        lb.push(problem.potential(&[z0 - w + i as f64 * step_b])?);
    }
    let log_inv = logsumexp(
        lb.iter()
            .enumerate()
            .map(|(i, l)| l + trap_w(i, grid_points).ln()),
    ) + step_b.ln();
    // chi^2 + 1 = Z / (2w)^2 * int_ball e^L.
    let log_one_plus = log_z + log_inv - 2.0 * (2.0 * w).ln();
    let log_sqrt = if log_one_plus <= 1e-12 {
        f64::NEG_INFINITY
    } else if log_one_plus > 30.0 {
        0.5 * (log_one_plus + (-(-log_one_plus).exp()).ln_1p())
    } else {
        0.5 * log_one_plus.exp_m1().ln()
    };
    Ok(Chi2Check {
        log_sqrt_chi2: log_sqrt,
        bound: 4f64.ln() + 0.5 * (sup_l - inf_l),
        sup_l,
        inf_l,
        ball_radius: w,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentTest {
    pub pass: bool,
    pub n: usize,
    pub sample_mean: Vec<f64>,
    /// Largest `|mean_i - mu_i| / (sigma_i / sqrt(n))`.
    pub worst_mean_z: f64,
    /// `|S - cov|_F / |cov|_F`.
    pub cov_rel_error: f64,
}

/// Mean within `4 sigma / sqrt(n)` per coordinate and covariance within 10%
/// relative Frobenius error.
pub fn gaussian_moment_test(samples: &[Vec<f64>], mean: &[f64], cov: &[f64]) -> Result<MomentTest> {
    let n = samples.len();
    let d = mean.len();
    if n < 100 {
        return Err(Error::InsufficientSamples(format!(
            "moment test needs at least 100 samples, got {n}"
        )));
    }
    if d > 4 {
        return Err(Error::invalid("d", "moment test supports d <= 4"));
    }
    crate::error::check_dim("covariance", d * d, cov.len())?;
    let mut m = vec![0.0; d];
    for s in samples {
        crate::error::check_dim("sample", d, s.len())?;
        for (a, b) in m.iter_mut().zip(s) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|v| *v /= n as f64);
    let mut sc = vec![0.0; d * d];
    for s in samples {
        for i in 0..d {
            for j in 0..d {
                sc[i * d + j] += (s[i] - m[i]) * (s[j] - m[j]);
            }
        }
    }
    sc.iter_mut().for_each(|v| *v /= (n - 1) as f64);
    let worst = (0..d)
        .map(|i| (m[i] - mean[i]).abs() / (cov[i * d + i].sqrt() / (n as f64).sqrt()))
        .fold(0.0, f64::max);
    let num: f64 = sc
        .iter()
        .zip(cov)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let den: f64 = cov.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rel = num / den;
    Ok(MomentTest {
        pass: worst <= 4.0 && rel <= 0.1,
        n,
        sample_mean: m,
        worst_mean_z: worst,
        cov_rel_error: rel,
    })
}

/// Exact posterior of `x | z ~ N(A z, beta^2 I)`, `z ~ N(0, I)`:
/// precision `I + A^T A / beta^2`, mean `cov A^T x / beta^2`.
pub fn linear_gaussian_posterior(
    a: &[f64],
    d: usize,
    x: &[f64],
    beta: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    crate::error::check_dim("A", x.len() * d, a.len())?;
    let am = DMatrix::from_row_slice(x.len(), d, a);
    let b2 = beta * beta;
    let prec = DMatrix::identity(d, d) + am.transpose() * &am / b2;
    let cov = prec
        .try_inverse()
        .ok_or_else(|| Error::NotInvertible("posterior precision is singular".into()))?;
    let mean = &cov * am.transpose() * DVector::from_column_slice(x) / b2;
    let cov_rows: Vec<f64> = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| cov[(i, j)])
        .collect();
    Ok((mean.iter().copied().collect(), cov_rows))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingCurve {
    pub times: Vec<f64>,
    pub steps: Vec<u64>,
    pub tv: Vec<f64>,
    /// `1 / (2 rad^2)`.
    pub rate: f64,
    /// Fitted so the envelope passes through the first point.
    pub envelope_c: f64,
    pub non_increasing: bool,
    pub below_envelope: bool,
    pub chains: usize,
}

/// TV between projected chains started at the point `start` and the
/// restricted oracle, measured at the requested times (rounded to steps of
/// size `h`).
#[allow(clippy::too_many_arguments)]
pub fn mixing_curve(
    problem: &PosteriorProblem,
    region: &RegionD,
    h: f64,
    start: &[f64],
    times: &[f64],
    chains: usize,
    oracle: &GridOracle,
    stream: &crate::rng::NoiseStream,
) -> Result<MixingCurve> {
    use crate::sampler::projected_step;
    if times.is_empty() {
        return Err(Error::invalid("times", "need at least one time"));
    }
    if !(h > 0.0) {
        return Err(Error::invalid("h", "must be positive"));
    }
    let steps: Vec<u64> = times
        .iter()
        .map(|t| (t / h).round().max(0.0) as u64)
        .collect();
    if steps.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("times", "must be increasing"));
    }
    let d = problem.dim();
    let last = *steps.last().expect("nonempty");
    let per_chain = crate::par::try_map_indices(chains, |c| {
        let mut z = start.to_vec();
        let mut noise = vec![0.0; d];
        let mut snaps = Vec::with_capacity(steps.len());
        let mut next = 0;
        for k in 0..=last {
            while next < steps.len() && steps[next] == k {
                snaps.push(z.clone());
                next += 1;
            }
            if k == last {
                break;
            }
            stream.fill_normal(k, c as u64, &mut noise);
            z = projected_step(problem, region, &z, h, &noise)?;
        }
        Ok(snaps)
    })?;
    let mut tv = Vec::with_capacity(steps.len());
    for i in 0..steps.len() {
        let col: Vec<Vec<f64>> = per_chain.iter().map(|s| s[i].clone()).collect();
        tv.push(tv_distance(&col, oracle)?);
    }
    let rate = 1.0 / (2.0 * region.radius * region.radius);
    let t: Vec<f64> = steps.iter().map(|&k| k as f64 * h).collect();
    let envelope_c = tv[0] * (rate * t[0]).exp();
    let non_increasing = tv.windows(2).all(|w| w[1] <= w[0]);
    let below_envelope = tv
        .iter()
        .zip(&t)
        .all(|(v, t)| *v <= envelope_c * (-rate * t).exp() * (1.0 + 1e-12));
    Ok(MixingCurve {
        times: t,
        steps,
        tv,
        rate,
        envelope_c,
        non_increasing,
        below_envelope,
        chains,
    })
}
