//! Gradient-descent inversion of the generator: minimize
//! `f(z) = |G(z) - x|^2 / 2` from `z = 0`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::potential::{norm, region_radius, PosteriorProblem};

pub const DEFAULT_MAX_STEPS: u64 = 1_000_000;
pub const MAX_RETRIES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdPlan {
    pub eta: f64,
    /// Steps actually scheduled (the formula value, capped).
    pub steps: u64,
    /// Uncapped `ceil(Q |x|^2 / (m^4 delta^2))`.
    pub formula_steps: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    pub delta: f64,
    /// Stop as soon as `|G(z) - x| <= m delta`.
    pub early_stop: bool,
}

impl GdPlan {
    /// Same plan with `Q` doubled and `S` recomputed.
    pub fn doubled(&self, problem: &PosteriorProblem, max_steps: u64) -> GdPlan {
        plan_from_q(
            problem,
            2.0 * self.q,
            self.delta,
            max_steps,
            self.early_stop,
        )
    }

    pub fn with_steps(mut self, steps: u64) -> GdPlan {
        self.steps = steps.max(1);
        self
    }

    pub fn without_early_stop(mut self) -> GdPlan {
        self.early_stop = false;
        self
    }
}

/// `Q = M^2 + 2 sqrt(d) M M2 (M/m + 1) |x| / m`.
pub fn curvature_bound(problem: &PosteriorProblem) -> f64 {
    let c = problem.constants();
    let sd = (problem.dim() as f64).sqrt();
    c.big_m * c.big_m + 2.0 * sd * c.big_m * c.m2 * (c.big_m / c.m + 1.0) * problem.x_norm() / c.m
}

fn plan_from_q(
    problem: &PosteriorProblem,
    q: f64,
    delta: f64,
    max_steps: u64,
    early_stop: bool,
) -> GdPlan {
    let m = problem.constants().m;
    let xn = problem.x_norm();
    let formula = (q * xn * xn / (m.powi(4) * delta * delta)).ceil().max(1.0);
    let steps = if formula > max_steps as f64 {
        max_steps
    } else {
        formula as u64
    };
    GdPlan {
        eta: 1.0 / q,
        steps: steps.max(1),
        formula_steps: formula,
        q,
        delta,
        early_stop,
    }
}

/// Plan with `delta` defaulting to a quarter of the region radius.
pub fn make_gd_plan(
    problem: &PosteriorProblem,
    delta: Option<f64>,
    max_steps: u64,
) -> Result<GdPlan> {
    let delta = match delta {
        Some(v) => v,
        None => 0.25 * region_radius(problem),
    };
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::invalid(
            "delta",
            format!("must be positive, got {delta}"),
        ));
    }
    if max_steps == 0 {
        return Err(Error::invalid("max_steps", "must be at least 1"));
    }
    Ok(plan_from_q(
        problem,
        curvature_bound(problem),
        delta,
        max_steps,
        true,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdTrace {
    /// `z_0, ..., z_s`.
    pub iterates: Vec<Vec<f64>>,
    /// `f(z_0), ..., f(z_s)`.
    pub objectives: Vec<f64>,
    /// `|grad f(z_0)|, ..., |grad f(z_s)|`.
    pub grad_norms: Vec<f64>,
    pub converged: bool,
    /// The plan that produced this trace (after any `Q` doubling).
    pub plan: GdPlan,
    pub retries: usize,
}

impl GdTrace {
    pub fn final_iterate(&self) -> &[f64] {
        self.iterates.last().expect("trace holds the start point")
    }
    pub fn steps_taken(&self) -> usize {
        self.iterates.len() - 1
    }
    pub fn final_residual(&self) -> f64 {
        (2.0 * self.objectives.last().copied().unwrap_or(0.0)).sqrt()
    }

    /// CSV with columns `step,objective,grad_norm`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        use std::fmt::Write as _;
        let mut out = String::from("step,objective,grad_norm\n");
        for (k, (f, g)) in self.objectives.iter().zip(&self.grad_norms).enumerate() {
            writeln!(out, "{k},{f:?},{g:?}").expect("string write");
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Plain gradient descent under `plan`; errors on any objective increase.
pub fn gd_invert(
    problem: &PosteriorProblem,
    plan: &GdPlan,
    start: Option<&[f64]>,
) -> Result<GdTrace> {
    let d = problem.dim();
    let net = problem.generator();
    let x = problem.x();
    let mut z = match start {
        Some(s) => {
            check_dim("inversion start", d, s.len())?;
            s.to_vec()
        }
        None => vec![0.0; d],
    };
    let tol = problem.constants().m * plan.delta;
    // Objective changes below this are rounding in G(z) - x.
    let floor = 0.5 * d as f64 * (4.0 * f64::EPSILON * (1.0 + problem.x_norm())).powi(2);
    let mut tape = net.tape();
    let mut r = vec![0.0; d];
    let mut grad = vec![0.0; d];

    let eval = |z: &[f64], r: &mut [f64], grad: &mut [f64], tape: &mut crate::nets::Tape| -> f64 {
        let g = net.forward(z, tape);
        let mut f = 0.0;
        for ((ri, gi), xi) in r.iter_mut().zip(g).zip(x) {
            *ri = gi - xi;
            f += *ri * *ri;
        }
        net.vjp_recorded(tape, r, grad);
        0.5 * f
    };

    let mut f = eval(&z, &mut r, &mut grad, &mut tape);
    let mut trace = GdTrace {
        iterates: vec![z.clone()],
        objectives: vec![f],
        grad_norms: vec![norm(&grad)],
        converged: false,
        plan: *plan,
        retries: 0,
    };
    for step in 0..plan.steps {
        if plan.early_stop && (2.0 * f).sqrt() <= tol {
            break;
        }
        for (zi, gi) in z.iter_mut().zip(&grad) {
            *zi -= plan.eta * gi;
        }
        let f_new = eval(&z, &mut r, &mut grad, &mut tape);
        if !f_new.is_finite() {
            return Err(Error::NumericalBlowup {
                step: step as usize,
                state: z,
            });
        }
        if f_new > f + 1e-12 * f + floor {
            return Err(Error::DescentViolation {
                step: step as usize,
                before: f,
                after: f_new,
            });
        }
        f = f_new;
        trace.iterates.push(z.clone());
        trace.objectives.push(f);
        trace.grad_norms.push(norm(&grad));
    }
    trace.converged = (2.0 * f).sqrt() <= tol;
    Ok(trace)
}

/// [`gd_invert`] that doubles `Q` after each descent violation, at most
/// [`MAX_RETRIES`] times.
pub fn gd_invert_with_retry(
    problem: &PosteriorProblem,
    plan: &GdPlan,
    start: Option<&[f64]>,
    max_steps: u64,
) -> Result<GdTrace> {
    let mut plan = *plan;
    let mut last = None;
    for retry in 0..=MAX_RETRIES {
        match gd_invert(problem, &plan, start) {
            Ok(mut t) => {
                t.retries = retry;
                return Ok(t);
            }
            Err(e @ Error::DescentViolation { .. }) => {
                last = Some(e);
                plan = plan.doubled(problem, max_steps);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Runs the default plan and caches the final iterate as `zhat`.
pub fn invert_problem(problem: &mut PosteriorProblem, max_steps: u64) -> Result<GdTrace> {
    let plan = make_gd_plan(problem, None, max_steps)?;
    let trace = gd_invert_with_retry(problem, &plan, None, max_steps)?;
    if !trace.converged {
        return Err(Error::NotInvertible(format!(
            "gradient descent stopped after {} steps with |G(z) - x| = {:e} > m delta = {:e}",
            trace.steps_taken(),
            trace.final_residual(),
            problem.constants().m * trace.plan.delta
        )));
    }
    problem.set_zhat(trace.final_iterate().to_vec())?;
    Ok(trace)
}

/// The ball `A = {|z| <= (M/m + 1) |x| / m}` containing every iterate.
pub fn iterate_region_radius(problem: &PosteriorProblem) -> f64 {
    let c = problem.constants();
    (c.big_m / c.m + 1.0) * problem.x_norm() / c.m
}

/// `(1 / m^2) sqrt(2 Q f(z_0) / S)`.
pub fn final_error_bound(problem: &PosteriorProblem, trace: &GdTrace) -> f64 {
    let m = problem.constants().m;
    let s = trace.steps_taken().max(1) as f64;
    (2.0 * trace.plan.q * trace.objectives[0] / s).sqrt() / (m * m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LatentGaussian;
    use crate::nets::{identity, linear, tanh_residual, ConstantSource, MapConstants};
    use crate::potential::dist as distance;

    fn problem(
        net: crate::nets::Network,
        c: MapConstants,
        x: Vec<f64>,
        beta: f64,
    ) -> PosteriorProblem {
        PosteriorProblem::new(
            LatentGaussian::new(net, beta).unwrap(),
            x,
            c,
            ConstantSource::Analytic,
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn identity_plan_and_one_step() {
        let c = MapConstants {
            m: 1.0,
            big_m: 1.0,
            m2: 0.0,
            m3: 0.0,
        };
        let p = problem(identity(1), c, vec![2.0], 0.1);
        let plan = make_gd_plan(&p, Some(0.1), DEFAULT_MAX_STEPS).unwrap();
        assert_eq!((plan.q, plan.eta, plan.steps), (1.0, 1.0, 400));
        let t = gd_invert(&p, &plan, None).unwrap();
        assert_eq!(t.steps_taken(), 1);
        assert_eq!(t.final_iterate(), &[2.0]);
        assert!(t.converged);
        assert!(make_gd_plan(&p, Some(0.0), 10).is_err());
        assert!(make_gd_plan(&p, Some(-1.0), 10).is_err());
    }

    #[test]
    fn steps_capped() {
        let c = MapConstants {
            m: 1.0,
            big_m: 1.0,
            m2: 0.0,
            m3: 0.0,
        };
        let p = problem(identity(1), c, vec![2.0], 0.1);
        let plan = make_gd_plan(&p, Some(1e-6), 1000).unwrap();
        assert_eq!(plan.steps, 1000);
        assert!(plan.formula_steps > 1e12);
    }

    #[test]
    fn diagonal_linear_inverse() {
        let c = MapConstants {
            m: 1.0,
            big_m: 2.0,
            m2: 0.0,
            m3: 0.0,
        };
        let p = problem(
            linear(2, 2, vec![1.0, 0.0, 0.0, 2.0]),
            c,
            vec![1.0, 1.0],
            0.1,
        );
        let plan = make_gd_plan(&p, None, DEFAULT_MAX_STEPS).unwrap();
        assert_eq!(plan.q, 4.0);
        let t = gd_invert(&p, &plan, None).unwrap();
        assert!(t.converged);
        assert!(distance(t.final_iterate(), &[1.0, 0.5]) <= plan.delta);
    }

    #[test]
    fn scalar_residual_matches_bisection() {
        let tr = tanh_residual(1);
        let p = problem(tr.network, tr.constants, vec![1.2], 0.1);
        let plan = make_gd_plan(&p, None, DEFAULT_MAX_STEPS).unwrap();
        let t = gd_invert(&p, &plan, None).unwrap();
        assert!(t.converged && t.final_residual() <= plan.delta);
        let (mut lo, mut hi) = (0.0_f64, 1.2_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid + 0.5 * mid.tanh() < 1.2 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((t.final_iterate()[0] - lo).abs() <= plan.delta);
    }

    #[test]
    fn q_grows_affinely_in_norm() {
        let tr = tanh_residual(2);
        let p1 = problem(tr.network.clone(), tr.constants, vec![0.5, 0.5], 0.1);
        let p2 = problem(tr.network, tr.constants, vec![1.0, 1.0], 0.1);
        let (q1, q2) = (curvature_bound(&p1), curvature_bound(&p2));
        let q0 = tr.constants.big_m.powi(2);
        assert!(((q2 - q0) / (q1 - q0) - 2.0).abs() < 1e-12);
        let a = make_gd_plan(&p1, Some(0.1), u64::MAX).unwrap();
        let b = make_gd_plan(&p2, Some(0.1), u64::MAX).unwrap();
        assert!(b.formula_steps > 4.0 * a.formula_steps - 1.0);
    }

    #[test]
    fn underestimated_q_is_rescued() {
        // Claimed M = 1 for G = 3z; eta = 1 overshoots.
        let c = MapConstants {
            m: 1.0,
            big_m: 1.0,
            m2: 0.0,
            m3: 0.0,
        };
        let p = problem(linear(1, 1, vec![3.0]), c, vec![1.0], 0.1);
        let plan = make_gd_plan(&p, None, DEFAULT_MAX_STEPS).unwrap();
        assert!(matches!(
            gd_invert(&p, &plan, None),
            Err(Error::DescentViolation { .. })
        ));
        let t = gd_invert_with_retry(&p, &plan, None, DEFAULT_MAX_STEPS).unwrap();
        assert!(t.retries >= 1 && t.converged);
    }

    #[test]
    fn invert_problem_caches_zhat() {
        let tr = tanh_residual(2);
        let mut p = problem(tr.network, tr.constants, vec![0.3, -1.1], 0.05);
        let t = invert_problem(&mut p, DEFAULT_MAX_STEPS).unwrap();
        assert_eq!(p.zhat().unwrap(), t.final_iterate());
    }
}
