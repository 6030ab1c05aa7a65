//! Unadjusted and projected Langevin chains on `p(z | x)`, ball-noise
//! initialization, and the CIR simulator.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::par::try_map_indices;
use crate::potential::{dist, PosteriorProblem, RegionD};
use crate::rng::{NoiseStream, INIT_STAGE};

pub const DEFAULT_MAX_K: u64 = 10_000_000;
/// Auto thinning keeps about this many states per chain.
pub const THIN_TARGET: u64 = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Thinning {
    /// Every `ceil(K / 10^4)`-th state.
    Auto,
    Every(u64),
    /// Only the final state.
    FinalOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerOptions {
    pub max_k: u64,
    /// Overrides the step-size formula.
    pub h: Option<f64>,
    pub projected: bool,
    pub thinning: Thinning,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            max_k: DEFAULT_MAX_K,
            h: None,
            projected: false,
            thinning: Thinning::Auto,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerPlan {
    #[serde(rename = "T")]
    pub t: f64,
    pub h: f64,
    #[serde(rename = "K")]
    pub k: u64,
    pub init_radius: f64,
    pub projected: bool,
    pub thinning: Thinning,
}

impl SamplerPlan {
    /// Plan with an explicit step count, keeping `h`; `T = K h`.
    pub fn with_steps(mut self, k: u64) -> Self {
        self.k = k;
        self.t = k as f64 * self.h;
        self
    }

    pub fn thin_every(&self) -> u64 {
        match self.thinning {
            Thinning::Auto => self.k.div_ceil(THIN_TARGET).max(1),
            Thinning::Every(n) => n.max(1),
            Thinning::FinalOnly => u64::MAX,
        }
    }
}

/// `h = min(beta^2 / (M^2 + m^2), rad^2 eps^2 / max(d, 1))`.
pub fn default_step_size(problem: &PosteriorProblem, radius: f64) -> f64 {
    let c = problem.constants();
    let b2 = problem.beta() * problem.beta();
    let eps = problem.epsilon();
    let d = problem.dim().max(1) as f64;
    (b2 / (c.big_m * c.big_m + c.m * c.m)).min(radius * radius * eps * eps / d)
}

pub fn make_sampler_plan(
    problem: &PosteriorProblem,
    region: &RegionD,
    opts: &SamplerOptions,
) -> Result<SamplerPlan> {
    let eps = problem.epsilon();
    let t = (2.0 * region.radius).powi(2) * (1.0 / eps).ln();
    let h = match opts.h {
        Some(h) if !(h > 0.0) || !h.is_finite() => {
            return Err(Error::invalid(
                "h",
                format!("step size must be positive, got {h}"),
            ))
        }
        Some(h) => h,
        None => default_step_size(problem, region.radius),
    };
    if !(t > 0.0) || h > t {
        return Err(Error::invalid(
            "epsilon",
            format!(
                "degenerate plan: T = {t:e} is shorter than one step h = {h:e}; decrease epsilon"
            ),
        ));
    }
    let k = (t / h).ceil();
    if k > opts.max_k as f64 {
        return Err(Error::PlanTooLarge {
            what: "K",
            value: k,
            cap: opts.max_k,
            hint: format!("increase epsilon (currently {eps}) or raise the cap"),
        });
    }
    Ok(SamplerPlan {
        t,
        h,
        k: k as u64,
        init_radius: 0.25 * region.radius,
        projected: opts.projected,
        thinning: opts.thinning,
    })
}

/// `z_0 = z_init + N`, `N` uniform in the ball of radius `rad / 4`, drawn as
/// `stream.ball(INIT_STAGE, draw, d, rad / 4)`.
pub fn initialize(
    problem: &PosteriorProblem,
    region: &RegionD,
    z_init: &[f64],
    stream: &NoiseStream,
    draw: u64,
) -> Result<Vec<f64>> {
    check_dim("initial point", problem.dim(), z_init.len())?;
    let r4 = 0.25 * region.radius;
    let off = dist(z_init, &region.center);
    if off > r4 * (1.0 + 1e-12) {
        return Err(Error::Initialization(format!(
            "|z_init - zhat| = {off:e} exceeds rad / 4 = {r4:e}"
        )));
    }
    let n = stream.ball(INIT_STAGE, draw, problem.dim(), r4);
    Ok(z_init.iter().zip(&n).map(|(a, b)| a + b).collect())
}

/// `z - h grad L(z) + sqrt(2h) noise`.
pub fn langevin_step(
    problem: &PosteriorProblem,
    z: &[f64],
    h: f64,
    noise: &[f64],
) -> Result<Vec<f64>> {
    check_dim("latent point", problem.dim(), z.len())?;
    check_dim("noise", problem.dim(), noise.len())?;
    if !(h > 0.0) {
        return Err(Error::invalid("h", "step size must be positive"));
    }
    let mut ws = problem.workspace();
    let mut out = z.to_vec();
    step_in_place(
        problem,
        &mut ws,
        &mut out,
        h,
        noise,
        &mut vec![0.0; z.len()],
        0,
    )?;
    Ok(out)
}

/// Langevin step followed by projection onto `D`.
pub fn projected_step(
    problem: &PosteriorProblem,
    region: &RegionD,
    z: &[f64],
    h: f64,
    noise: &[f64],
) -> Result<Vec<f64>> {
    let mut out = langevin_step(problem, z, h, noise)?;
    region.project(&mut out);
    Ok(out)
}

fn step_in_place(
    problem: &PosteriorProblem,
    ws: &mut crate::potential::Workspace,
    z: &mut [f64],
    h: f64,
    noise: &[f64],
    grad: &mut [f64],
    step: u64,
) -> Result<()> {
    problem.grad_into(ws, z, grad);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NumericalBlowup {
            step: step as usize,
            state: z.to_vec(),
        });
    }
    let s = (2.0 * h).sqrt();
    for ((zi, gi), ni) in z.iter_mut().zip(grad.iter()).zip(noise) {
        *zi += -h * gi + s * ni;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    /// Thinned trajectory; always starts with `z_0` and ends with `z_K`.
    pub states: Vec<Vec<f64>>,
    /// Step index of each stored state.
    pub steps: Vec<u64>,
    /// Some state left `D` (unprojected chains only).
    pub exited: bool,
    pub first_exit: Option<u64>,
    pub seed: u64,
    pub chain: u64,
}

impl Chain {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("chain holds z0")
    }

    /// CSV with columns `step,z0,...`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        use std::fmt::Write as _;
        let d = self.states.first().map(|s| s.len()).unwrap_or(0);
        let mut out = String::from("step");
        for i in 0..d {
            write!(out, ",z{i}").expect("string write");
        }
        out.push('\n');
        for (k, s) in self.steps.iter().zip(&self.states) {
            write!(out, "{k}").expect("string write");
            for v in s {
                write!(out, ",{v:?}").expect("string write");
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// `K` steps from `z0`. Step `k` draws `stream.normal_vec(k, chain, d)`.
pub fn run_chain(
    problem: &PosteriorProblem,
    region: &RegionD,
    plan: &SamplerPlan,
    z0: &[f64],
    stream: &NoiseStream,
    chain: u64,
) -> Result<Chain> {
    let d = problem.dim();
    check_dim("chain start", d, z0.len())?;
    let mut z = z0.to_vec();
    let mut ws = problem.workspace();
    let mut grad = vec![0.0; d];
    let mut noise = vec![0.0; d];
    let every = plan.thin_every();
    let keep_start = plan.thinning != Thinning::FinalOnly || plan.k == 0;
    let mut out = Chain {
        states: if keep_start {
            vec![z.clone()]
        } else {
            Vec::new()
        },
        steps: if keep_start { vec![0] } else { Vec::new() },
        exited: false,
        first_exit: None,
        seed: stream.seed,
        chain,
    };
    let r2 = region.radius * region.radius;
    let outside = |z: &[f64]| -> bool {
        z.iter()
            .zip(&region.center)
            .map(|(a, c)| (a - c) * (a - c))
            .sum::<f64>()
            > r2
    };
    if outside(&z) {
        out.exited = true;
        out.first_exit = Some(0);
    }
    for k in 0..plan.k {
        stream.fill_normal(k, chain, &mut noise);
        step_in_place(problem, &mut ws, &mut z, plan.h, &noise, &mut grad, k)?;
        if plan.projected {
            region.project(&mut z);
        } else if !out.exited && outside(&z) {
            out.exited = true;
            out.first_exit = Some(k + 1);
        }
        let idx = k + 1;
        if idx == plan.k || (every != u64::MAX && idx % every == 0) {
            out.states.push(z.clone());
            out.steps.push(idx);
        }
    }
    Ok(out)
}

/// `count` independent chains, chain `c` initialized with ball draw `c` and
/// driven by draws `c` of every stage.
pub fn run_chains(
    problem: &PosteriorProblem,
    region: &RegionD,
    plan: &SamplerPlan,
    z_init: &[f64],
    stream: &NoiseStream,
    count: usize,
) -> Result<Vec<Chain>> {
    try_map_indices(count, |c| {
        let z0 = initialize(problem, region, z_init, stream, c as u64)?;
        run_chain(problem, region, plan, &z0, stream, c as u64)
    })
}

/// CIR path `X_0, ..., X_K` for `dX = -wX dt + N dt + 2 sqrt(X) dB` as a sum
/// of `N` squared OU components `V_{k+1} = (1 - hw/2) V_k + sqrt(h) xi`,
/// `V_0 = sqrt(X_0 / N)`. Step `k` of path `draw` uses `stream.normal_vec(k, draw, N)`.
pub fn simulate_cir(
    n_tilde: usize,
    w: f64,
    x0: f64,
    h: f64,
    k: u64,
    stream: &NoiseStream,
    draw: u64,
) -> Result<Vec<f64>> {
    if !(w > 0.0) {
        return Err(Error::invalid("w", format!("must be positive, got {w}")));
    }
    if !(x0 >= 0.0) {
        return Err(Error::invalid(
            "X0",
            format!("must be nonnegative, got {x0}"),
        ));
    }
    if n_tilde == 0 {
        return Err(Error::invalid("N_tilde", "needs at least one component"));
    }
    let mut v = vec![(x0 / n_tilde as f64).sqrt(); n_tilde];
    let mut xi = vec![0.0; n_tilde];
    let a = 1.0 - 0.5 * h * w;
    let s = h.sqrt();
    let mut path = Vec::with_capacity(k as usize + 1);
    path.push(v.iter().map(|c| c * c).sum());
    for step in 0..k {
        stream.fill_normal(step, draw, &mut xi);
        for (vi, n) in v.iter_mut().zip(&xi) {
            *vi = a * *vi + s * n;
        }
        path.push(v.iter().map(|c| c * c).sum());
    }
    Ok(path)
}

/// `2 X_0 + (4N / w) log(4N / eps)`.
pub fn cir_bound(x0: f64, n_tilde: usize, w: f64, epsilon: f64) -> f64 {
    let n = n_tilde as f64;
    2.0 * x0 + 4.0 * n / w * (4.0 * n / epsilon).ln()
}

/// Paired paths for the comparison experiment: `eta_k = |z_k - zhat|^2 / 2`
/// of an unprojected chain from `z0`, and an Euler path of the dominating
/// CIR `dX = -(m^2/beta^2) X dt + ceil(|zhat|^2 + d) dt + 2 sqrt(X) dB` fed
/// the chain's noise projected on `(z_k - zhat) / |z_k - zhat|`.
pub fn comparison_paths(
    problem: &PosteriorProblem,
    z0: &[f64],
    h: f64,
    k: u64,
    stream: &NoiseStream,
    draw: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = problem.dim();
    let zhat = problem.zhat()?.to_vec();
    let c = problem.constants();
    let w = c.m * c.m / (problem.beta() * problem.beta());
    let zn2: f64 = zhat.iter().map(|v| v * v).sum();
    let n_tilde = (zn2 + d as f64).ceil();
    let mut ws = problem.workspace();
    let mut grad = vec![0.0; d];
    let mut noise = vec![0.0; d];
    let mut z = z0.to_vec();
    let eta = |z: &[f64]| 0.5 * dist(z, &zhat).powi(2);
    let mut x = eta(&z);
    let mut etas = vec![x];
    let mut xs = vec![x];
    for step in 0..k {
        stream.fill_normal(step, draw, &mut noise);
        let r = dist(&z, &zhat);
        let proj = if r > 0.0 {
            z.iter()
                .zip(&zhat)
                .zip(&noise)
                .map(|((a, b), n)| (a - b) / r * n)
                .sum()
        } else {
            noise[0]
        };
        step_in_place(problem, &mut ws, &mut z, h, &noise, &mut grad, step)?;
        x = (x + h * (n_tilde - w * x) + 2.0 * (x.max(0.0) * h).sqrt() * proj).max(0.0);
        etas.push(eta(&z));
        xs.push(x);
    }
    Ok((etas, xs))
}
