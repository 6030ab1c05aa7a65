//! The posterior potential `L(z) = (|z|^2 + |G(z) - x|^2 / beta^2) / 2` and
//! quantities derived from it.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::models::LatentGaussian;
use crate::nets::{ConstantSource, MapConstants, Network, Tape};
use crate::rng::NoiseStream;

pub const DEFAULT_EPSILON: f64 = 0.1;

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

/// A posterior `p(z | x)` together with the constants of its generator.
#[derive(Clone, Debug)]
pub struct PosteriorProblem {
    model: LatentGaussian,
    x: Vec<f64>,
    constants: MapConstants,
    source: ConstantSource,
    epsilon: f64,
    zhat: Option<Vec<f64>>,
}

impl PosteriorProblem {
    pub fn new(
        model: LatentGaussian,
        x: Vec<f64>,
        constants: MapConstants,
        source: ConstantSource,
        epsilon: f64,
    ) -> Result<Self> {
        model.generator().require_smooth()?;
        check_dim("observation", model.dim(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("x", "observation must be finite"));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::invalid(
                "epsilon",
                format!("must lie in (0, 1), got {epsilon}"),
            ));
        }
        if !(model.beta() > 0.0) {
            return Err(Error::invalid("beta", "posterior needs beta > 0"));
        }
        constants.validate()?;
        Ok(Self {
            model,
            x,
            constants,
            source,
            epsilon,
            zhat: None,
        })
    }

    pub fn model(&self) -> &LatentGaussian {
        &self.model
    }
    pub fn generator(&self) -> &Network {
        self.model.generator()
    }
    pub fn x(&self) -> &[f64] {
        &self.x
    }
    pub fn x_norm(&self) -> f64 {
        norm(&self.x)
    }
    pub fn beta(&self) -> f64 {
        self.model.beta()
    }
    pub fn dim(&self) -> usize {
        self.model.dim()
    }
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    pub fn constants(&self) -> &MapConstants {
        &self.constants
    }
    pub fn constant_source(&self) -> ConstantSource {
        self.source
    }

    pub fn zhat(&self) -> Result<&[f64]> {
        self.zhat.as_deref().ok_or_else(|| {
            Error::invalid(
                "zhat",
                "inverse point not computed; run the inversion first",
            )
        })
    }

    /// Caches the inverse point. Rejects points whose residual exceeds the
    /// inversion tolerance `m * rad / 4`.
    pub fn set_zhat(&mut self, zhat: Vec<f64>) -> Result<()> {
        check_dim("inverse point", self.dim(), zhat.len())?;
        let resid = dist(&self.generator().eval(&zhat)?, &self.x);
        let tol = self.constants.m * 0.25 * region_radius(self);
        if !(resid <= tol) {
            return Err(Error::NotInvertible(format!(
                "|G(zhat) - x| = {resid:e} exceeds the inversion tolerance {tol:e}"
            )));
        }
        self.zhat = Some(zhat);
        Ok(())
    }

    pub fn with_zhat(mut self, zhat: Vec<f64>) -> Result<Self> {
        self.set_zhat(zhat)?;
        Ok(self)
    }

    pub fn potential(&self, z: &[f64]) -> Result<f64> {
        check_dim("latent point", self.dim(), z.len())?;
        let g = self.generator().eval(z)?;
        Ok(self.potential_from(z, &g))
    }

    fn potential_from(&self, z: &[f64], g: &[f64]) -> f64 {
        let b2 = self.beta() * self.beta();
        let zz: f64 = z.iter().map(|v| v * v).sum();
        let rr: f64 = g.iter().zip(&self.x).map(|(a, b)| (a - b) * (a - b)).sum();
        0.5 * (zz + rr / b2)
    }

    pub fn grad_potential(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim("latent point", self.dim(), z.len())?;
        let mut ws = self.workspace();
        let mut out = vec![0.0; self.dim()];
        self.grad_into(&mut ws, z, &mut out);
        Ok(out)
    }

    /// Reusable buffers for [`Self::grad_into`].
    pub fn workspace(&self) -> Workspace {
        Workspace {
            tape: self.generator().tape(),
            resid: vec![0.0; self.dim()],
        }
    }

    /// Writes `grad L(z)` into `out` and returns `L(z)`.
    pub fn grad_into(&self, ws: &mut Workspace, z: &[f64], out: &mut [f64]) -> f64 {
        let inv_b2 = 1.0 / (self.beta() * self.beta());
        let g = self.generator().forward(z, &mut ws.tape);
        let mut rr = 0.0;
        for ((r, gi), xi) in ws.resid.iter_mut().zip(g).zip(&self.x) {
            *r = gi - xi;
            rr += *r * *r;
        }
        for r in ws.resid.iter_mut() {
            *r *= inv_b2;
        }
        self.generator().vjp_recorded(&mut ws.tape, &ws.resid, out);
        let mut zz = 0.0;
        for (o, zi) in out.iter_mut().zip(z) {
            *o += zi;
            zz += zi * zi;
        }
        0.5 * (zz + rr * inv_b2)
    }

    /// `I + (J^T J + sum_i H_i (G_i - x_i)) / beta^2`, row-major.
    pub fn hess_potential(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim("latent point", self.dim(), z.len())?;
        let d = self.dim();
        let net = self.generator();
        let j = net.jacobian(z)?;
        let g = net.eval(z)?;
        let h = crate::nets::hessian_tensor(net, z)?;
        let inv_b2 = 1.0 / (self.beta() * self.beta());
        let mut out = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..d {
                let mut s = 0.0;
                for i in 0..d {
                    s +=
                        j[i * d + a] * j[i * d + b] + h[i * d * d + a * d + b] * (g[i] - self.x[i]);
                }
                out[a * d + b] = s * inv_b2 + if a == b { 1.0 } else { 0.0 };
            }
        }
        Ok(out)
    }

    /// `I + J(zhat)^T J(zhat) / beta^2`.
    pub fn hess_at_zhat(&self) -> Result<Vec<f64>> {
        let zhat = self.zhat()?;
        let d = self.dim();
        let j = self.generator().jacobian(zhat)?;
        let inv_b2 = 1.0 / (self.beta() * self.beta());
        let mut out = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..d {
                let s: f64 = (0..d).map(|i| j[i * d + a] * j[i * d + b]).sum();
                out[a * d + b] = s * inv_b2 + if a == b { 1.0 } else { 0.0 };
            }
        }
        Ok(out)
    }

    /// Measured first-order Taylor remainder of `grad L` around `zhat` and
    /// its analytic bound. Uses the full gradient and Hessian at `zhat`, so a
    /// surrogate with `G(zhat) != x` is expanded correctly.
    pub fn taylor_remainder_check(&self, z: &[f64]) -> Result<(f64, f64)> {
        let zhat = self.zhat()?.to_vec();
        let d = self.dim();
        let grad = self.grad_potential(z)?;
        let g0 = self.grad_potential(&zhat)?;
        let h0 = self.hess_potential(&zhat)?;
        let dz: Vec<f64> = z.iter().zip(&zhat).map(|(a, b)| a - b).collect();
        let mut r = vec![0.0; d];
        for a in 0..d {
            let lin: f64 = (0..d).map(|b| h0[a * d + b] * dz[b]).sum();
            r[a] = grad[a] - g0[a] - lin;
        }
        let measured = norm(&r);
        let c = &self.constants;
        let rho = norm(&dz);
        let sd = (d as f64).sqrt();
        let bound = sd * c.big_m / (2.0 * self.beta() * self.beta())
            * (3.0 * sd * c.m2 + c.m3 * rho)
            * rho
            * rho;
        Ok((measured, bound))
    }
}

#[derive(Clone, Debug)]
pub struct Workspace {
    tape: Tape,
    resid: Vec<f64>,
}

/// The ball `D` around `zhat` on which `L` is strongly convex and the
/// diffusion stays with high probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionD {
    pub center: Vec<f64>,
    pub radius: f64,
    pub beta0: f64,
    pub admissible: bool,
    /// `min{m^2 / (6 d M M2), m / sqrt(2 sqrt(d) M M3)}`.
    pub radius_limit: f64,
    /// Set when `radius > radius_limit`.
    pub radius_warning: bool,
}

impl RegionD {
    pub fn contains(&self, z: &[f64]) -> bool {
        dist(z, &self.center) <= self.radius
    }

    /// Euclidean projection onto the ball.
    pub fn project(&self, z: &mut [f64]) {
        let r = dist(z, &self.center);
        if r > self.radius {
            let s = self.radius / r;
            for (v, c) in z.iter_mut().zip(&self.center) {
                *v = c + (*v - c) * s;
            }
        }
    }
}

/// `2d + |x|^2 / m^2` and the square-root factor shared by the radius and
/// `beta0`.
fn region_factor(d: usize, x_norm: f64, m: f64, epsilon: f64) -> f64 {
    let inner = 2.0 * d as f64 + x_norm * x_norm / (m * m);
    (inner * (4.0 * inner / epsilon).ln()).sqrt()
}

/// Radius of `D`; depends only on `|x|`, so it is known before `zhat`.
pub fn region_radius(p: &PosteriorProblem) -> f64 {
    let m = p.constants.m;
    4.0 * p.beta() / m * region_factor(p.dim(), p.x_norm(), m, p.epsilon)
}

/// `beta0` as a function of the problem data; `+inf` when `M2 = M3 = 0`.
pub fn beta0(d: usize, x_norm: f64, c: &MapConstants, epsilon: f64) -> f64 {
    let f = region_factor(d, x_norm, c.m, epsilon);
    let t1 = if c.m2 > 0.0 {
        c.m.powi(3) / (6.0 * c.big_m * c.m2)
    } else {
        f64::INFINITY
    };
    let t2 = if c.m3 > 0.0 {
        (d as f64).powf(0.75) * c.m * c.m / (2.0 * c.big_m * c.m3).sqrt()
    } else {
        f64::INFINITY
    };
    4.0 / (d as f64 * f) * t1.min(t2)
}

pub fn region(problem: &PosteriorProblem) -> Result<RegionD> {
    let c = problem.constants();
    if !(c.m > 0.0) {
        return Err(Error::NotInvertible("m = 0".into()));
    }
    let center = problem.zhat()?.to_vec();
    let d = problem.dim();
    let radius = region_radius(problem);
    let b0 = beta0(d, problem.x_norm(), c, problem.epsilon());
    let sd = (d as f64).sqrt();
    let l1 = if c.m2 > 0.0 {
        c.m * c.m / (6.0 * d as f64 * c.big_m * c.m2)
    } else {
        f64::INFINITY
    };
    let l2 = if c.m3 > 0.0 {
        c.m / (2.0 * sd * c.big_m * c.m3).sqrt()
    } else {
        f64::INFINITY
    };
    let radius_limit = l1.min(l2);
    Ok(RegionD {
        center,
        radius,
        beta0: b0,
        admissible: problem.beta() <= b0,
        radius_limit,
        radius_warning: radius > radius_limit,
    })
}

pub(crate) fn min_max_eigen(h: &[f64], d: usize) -> (f64, f64) {
    let m = DMatrix::from_row_slice(d, d, h);
    let e = SymmetricEigen::new(m).eigenvalues;
    (e.min(), e.max())
}

/// Per-problem diagnostic summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub region: RegionD,
    pub hessian_eig_min: f64,
    pub hessian_eig_max: f64,
    /// Largest measured/bound ratio of the Taylor remainder (0 when every
    /// bound is 0).
    pub remainder_worst_ratio: f64,
    pub points: usize,
}

/// Samples `points` uniform points of `D` and records the Hessian spectrum
/// and the worst Taylor-remainder ratio.
pub fn diagnose(problem: &PosteriorProblem, points: usize, seed: u64) -> Result<Diagnostics> {
    let region = region(problem)?;
    let d = problem.dim();
    let stream = NoiseStream::new(seed).fork(0x6469_6167);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut worst = 0.0_f64;
    for k in 0..points as u64 {
        let off = stream.ball(0, k, d, region.radius);
        let z: Vec<f64> = region.center.iter().zip(&off).map(|(c, o)| c + o).collect();
        let (a, b) = min_max_eigen(&problem.hess_potential(&z)?, d);
        lo = lo.min(a);
        hi = hi.max(b);
        let (meas, bound) = problem.taylor_remainder_check(&z)?;
        if bound > 0.0 {
            worst = worst.max(meas / bound);
        } else if meas > 0.0 {
            worst = f64::INFINITY;
        }
    }
    Ok(Diagnostics {
        region,
        hessian_eig_min: lo,
        hessian_eig_max: hi,
        remainder_worst_ratio: worst,
        points,
    })
}
