use std::path::Path;

use latent_langevin::compile::{compile_encoder, self_test, CompiledEncoder, EncoderManifest};
use latent_langevin::invert::{final_error_bound, GdPlan};
use latent_langevin::lowerbound::{
    hypercube_closeness_test, posterior_concentration, retry_study, Closeness, Concentration,
    RetryStudy, SignGenerator,
};
use latent_langevin::models::write_samples;
use latent_langevin::nets::{ConstantSource, MapConstants};
use latent_langevin::par::try_map_indices;
use latent_langevin::pipeline::{prepare, PipelineOptions, Prepared};
use latent_langevin::potential::{diagnose, dist, norm, Diagnostics, PosteriorProblem, RegionD};
use latent_langevin::rng::NoiseStream;
use latent_langevin::sampler::{
    cir_bound, initialize, make_sampler_plan, run_chain, simulate_cir, SamplerOptions, SamplerPlan,
    Thinning,
};
use latent_langevin::verify::{
    build_grid_oracle, chi2_initialization, mixing_curve, tv_distance, Chi2Check, MixingCurve,
};
use latent_langevin::{Error, Result};
use serde::Serialize;

use crate::config::{Experiment, RunConfig};

/// Result of a command: the report body and whether the command succeeded.
pub struct Outcome<T> {
    pub body: T,
    pub ok: bool,
}

fn options(cfg: &RunConfig) -> PipelineOptions {
    PipelineOptions {
        max_gd_steps: cfg.caps.max_s,
        sampler: SamplerOptions {
            max_k: cfg.caps.max_k,
            h: cfg.sample.h,
            projected: cfg.sample.projected,
            thinning: Thinning::Auto,
        },
    }
}

#[derive(Serialize)]
pub struct ProblemSummary {
    pub d: usize,
    pub beta: f64,
    pub epsilon: f64,
    pub x: Vec<f64>,
    pub constants: MapConstants,
    pub constant_source: ConstantSource,
}

fn summary(p: &PosteriorProblem) -> ProblemSummary {
    ProblemSummary {
        d: p.dim(),
        beta: p.beta(),
        epsilon: p.epsilon(),
        x: p.x().to_vec(),
        constants: *p.constants(),
        constant_source: p.constant_source(),
    }
}

#[derive(Serialize)]
pub struct InvertReport {
    pub problem: ProblemSummary,
    pub plan: GdPlan,
    pub converged: bool,
    pub steps_taken: usize,
    pub retries: usize,
    pub final_residual: f64,
    pub tolerance: f64,
    pub zhat: Vec<f64>,
    pub zhat_norm: f64,
    pub final_error_bound: f64,
    pub diagnostics: Diagnostics,
    pub trace_csv: String,
}

pub fn invert(cfg: &RunConfig, out: &Path) -> Result<Outcome<InvertReport>> {
    let mut p = cfg.problem()?;
    let prep = prepare(&mut p, &options(cfg))?;
    let trace = &prep.trace;
    trace.write_csv(out.join("trace.csv"))?;
    let diagnostics = diagnose(&p, cfg.verify.points, cfg.seed)?;
    Ok(Outcome {
        ok: trace.converged,
        body: InvertReport {
            problem: summary(&p),
            plan: trace.plan,
            converged: trace.converged,
            steps_taken: trace.steps_taken(),
            retries: trace.retries,
            final_residual: trace.final_residual(),
            tolerance: p.constants().m * trace.plan.delta,
            zhat: trace.final_iterate().to_vec(),
            zhat_norm: norm(trace.final_iterate()),
            final_error_bound: final_error_bound(&p, trace),
            diagnostics,
            trace_csv: "trace.csv".into(),
        },
    })
}

#[derive(Serialize)]
pub struct TvReport {
    pub tv: f64,
    pub threshold: f64,
    pub pass: bool,
    pub restricted_oracle: bool,
    pub grid_points: usize,
}

#[derive(Serialize)]
pub struct ExitReport {
    pub exit_fraction: f64,
    pub epsilon_over_4: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Serialize)]
pub struct SampleReport {
    pub problem: ProblemSummary,
    pub gd_steps: usize,
    pub region: RegionD,
    pub plan: SamplerPlan,
    pub chains: usize,
    pub exit: Option<ExitReport>,
    pub tv: Option<TvReport>,
    pub samples_csv: String,
    pub trajectory_csv: Option<String>,
}

/// Runs `n` chains and returns final states and exit flags.
fn run_all(
    p: &PosteriorProblem,
    prep: &Prepared,
    stream: &NoiseStream,
    n: usize,
) -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
    let plan = SamplerPlan {
        thinning: Thinning::FinalOnly,
        ..prep.sampler_plan
    };
    let runs = try_map_indices(n, |c| {
        let z0 = initialize(p, &prep.region, prep.z_init(), stream, c as u64)?;
        let ch = run_chain(p, &prep.region, &plan, &z0, stream, c as u64)?;
        Ok((ch.final_state().to_vec(), ch.exited))
    })?;
    Ok(runs.into_iter().unzip())
}

fn exit_report(eps: f64, exited: &[bool]) -> ExitReport {
    let n = exited.len() as f64;
    let frac = exited.iter().filter(|e| **e).count() as f64 / n;
    let threshold = eps / 4.0 + 2.0 * (eps / (4.0 * n)).sqrt();
    ExitReport {
        exit_fraction: frac,
        epsilon_over_4: eps / 4.0,
        threshold,
        pass: frac <= threshold,
    }
}

fn tv_report(
    p: &PosteriorProblem,
    region: &RegionD,
    samples: &[Vec<f64>],
    grid: usize,
    restricted: bool,
) -> Result<Option<TvReport>> {
    if p.dim() > 2 {
        return Ok(None);
    }
    let points = if p.dim() == 2 { grid.min(401) } else { grid };
    let oracle = build_grid_oracle(p, region, points, restricted)?;
    let tv = tv_distance(samples, &oracle)?;
    let threshold = p.epsilon() / 2.0 + 0.03;
    Ok(Some(TvReport {
        tv,
        threshold,
        pass: tv <= threshold,
        restricted_oracle: restricted,
        grid_points: points,
    }))
}

pub fn sample(cfg: &RunConfig, out: &Path) -> Result<Outcome<SampleReport>> {
    let mut p = cfg.problem()?;
    let prep = prepare(&mut p, &options(cfg))?;
    let stream = NoiseStream::new(cfg.seed);
    let n = cfg.sample.chains;
    let (finals, exited) = run_all(&p, &prep, &stream, n)?;
    write_samples(
        out.join("samples.csv"),
        "z",
        &finals,
        "direct",
        cfg.seed,
        Some(p.beta()),
    )?;
    let trajectory_csv = if cfg.sample.trajectory {
        let z0 = initialize(&p, &prep.region, prep.z_init(), &stream, 0)?;
        run_chain(&p, &prep.region, &prep.sampler_plan, &z0, &stream, 0)?
            .write_csv(out.join("trajectory.csv"))?;
        Some("trajectory.csv".to_string())
    } else {
        None
    };
    let exit = (!prep.sampler_plan.projected).then(|| exit_report(p.epsilon(), &exited));
    let tv = tv_report(
        &p,
        &prep.region,
        &finals,
        cfg.sample.grid_points,
        prep.sampler_plan.projected,
    )?;
    let ok = exit.as_ref().is_none_or(|e| e.pass) && tv.as_ref().is_none_or(|t| t.pass);
    Ok(Outcome {
        ok,
        body: SampleReport {
            problem: summary(&p),
            gd_steps: prep.trace.steps_taken(),
            region: prep.region.clone(),
            plan: prep.sampler_plan,
            chains: n,
            exit,
            tv,
            samples_csv: "samples.csv".into(),
            trajectory_csv,
        },
    })
}

#[derive(Serialize)]
pub struct CompileReport {
    pub problem: ProblemSummary,
    pub manifest: EncoderManifest,
    pub stage_count: usize,
    pub self_test_draws: u64,
    pub self_test_deviation: f64,
    pub reload_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub artifact_dir: String,
}

pub const SELF_TEST_TOLERANCE: f64 = 1e-6;

pub fn compile(cfg: &RunConfig, out: &Path) -> Result<Outcome<CompileReport>> {
    let mut p = cfg.problem()?;
    let prep = prepare(&mut p, &options(cfg))?;
    let s = cfg
        .compile
        .s
        .unwrap_or(prep.trace.steps_taken().max(1) as u64);
    let gd = prep.gd_plan().with_steps(s);
    let sp = match cfg.compile.k {
        Some(k) => prep.sampler_plan.with_steps(k),
        None => prep.sampler_plan,
    };
    if sp.k > cfg.caps.max_k {
        return Err(Error::PlanTooLarge {
            what: "K",
            value: sp.k as f64,
            cap: cfg.caps.max_k,
            hint: format!(
                "increase epsilon (currently {}) or lower compile.k",
                p.epsilon()
            ),
        });
    }
    let sp = SamplerPlan {
        projected: false,
        ..sp
    };
    let enc = compile_encoder(&p, &gd, &sp, cfg.caps.max_stages)?;
    let stream = NoiseStream::new(cfg.seed);
    let draws = cfg.compile.self_test_draws;
    let dev = self_test(&enc, &p, &prep.region, &gd, &sp, &stream, draws)?;
    let dir = out.join("encoder");
    enc.save(&dir)?;
    let back = CompiledEncoder::load(&dir)?;
    let reload = self_test(&back, &p, &prep.region, &gd, &sp, &stream, draws)?;
    let pass = dev <= SELF_TEST_TOLERANCE && reload == dev;
    Ok(Outcome {
        ok: pass,
        body: CompileReport {
            problem: summary(&p),
            manifest: enc.manifest.clone(),
            stage_count: enc.dlg.stages().len(),
            self_test_draws: draws,
            self_test_deviation: dev,
            reload_deviation: reload,
            tolerance: SELF_TEST_TOLERANCE,
            pass,
            artifact_dir: "encoder".into(),
        },
    })
}

#[derive(Serialize, Default)]
pub struct VerifyReport {
    pub problem: Option<ProblemSummary>,
    pub note: &'static str,
    pub gradients: Option<GradientCheck>,
    pub convexity: Option<Check>,
    pub taylor: Option<Check>,
    pub tv: Option<TvReport>,
    pub exit: Option<ExitReport>,
    pub cir: Option<CirCheck>,
    pub chi2: Option<Chi2Report>,
    pub mixing: Option<MixingReport>,
    pub skipped: Vec<String>,
    pub pass: bool,
}

#[derive(Serialize)]
pub struct GradientCheck {
    pub points: usize,
    pub worst_gradient_rel: f64,
    pub worst_hessian_rel: f64,
    pub pass: bool,
}

#[derive(Serialize)]
pub struct Check {
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Serialize)]
pub struct CirCheck {
    pub n_tilde: usize,
    pub w: f64,
    pub x0: f64,
    pub horizon: f64,
    pub h: f64,
    pub paths: usize,
    pub bound: f64,
    pub exceed_fraction: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Serialize)]
pub struct Chi2Report {
    #[serde(flatten)]
    pub check: Chi2Check,
    pub pass: bool,
}

#[derive(Serialize)]
pub struct MixingReport {
    #[serde(flatten)]
    pub curve: MixingCurve,
    pub pass: bool,
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    dist(a, b) / norm(b).max(1.0)
}

fn gradient_check(
    p: &PosteriorProblem,
    region: &RegionD,
    points: usize,
    stream: &NoiseStream,
) -> Result<GradientCheck> {
    let d = p.dim();
    let (mut wg, mut wh) = (0.0_f64, 0.0_f64);
    for k in 0..points as u64 {
        let off = stream.ball(0, k, d, region.radius);
        let z: Vec<f64> = region.center.iter().zip(&off).map(|(c, o)| c + o).collect();
        let mut fd = vec![0.0; d];
        let mut hfd = vec![0.0; d * d];
        for i in 0..d {
            let (mut a, mut b) = (z.clone(), z.clone());
            a[i] += 1e-6;
            b[i] -= 1e-6;
            fd[i] = (p.potential(&a)? - p.potential(&b)?) / 2e-6;
            a[i] = z[i] + 1e-5;
            b[i] = z[i] - 1e-5;
            let (ga, gb) = (p.grad_potential(&a)?, p.grad_potential(&b)?);
            for j in 0..d {
                hfd[j * d + i] = (ga[j] - gb[j]) / 2e-5;
            }
        }
        wg = wg.max(rel(&p.grad_potential(&z)?, &fd));
        wh = wh.max(rel(&p.hess_potential(&z)?, &hfd));
    }
    Ok(GradientCheck {
        points,
        worst_gradient_rel: wg,
        worst_hessian_rel: wh,
        pass: wg <= 1e-4 && wh <= 1e-3,
    })
}

pub fn verify(cfg: &RunConfig, out: &Path) -> Result<Outcome<VerifyReport>> {
    let _ = out;
    let mut report = VerifyReport {
        note: "thresholds are engineering choices layered on the asymptotic inequalities",
        ..VerifyReport::default()
    };
    let stream = NoiseStream::new(cfg.seed);
    let want = |e: Experiment| cfg.verify.experiments.contains(&e);
    let needs_problem = Experiment::ALL
        .iter()
        .any(|e| *e != Experiment::Cir && want(*e));
    let mut ok = true;
    if needs_problem {
        let mut p = cfg.problem()?;
        let prep = prepare(&mut p, &options(cfg))?;
        let region = &prep.region;
        report.problem = Some(summary(&p));
        if want(Experiment::Gradients) {
            let g = gradient_check(&p, region, cfg.verify.points, &stream.fork(1))?;
            ok &= g.pass;
            report.gradients = Some(g);
        }
        if want(Experiment::Convexity) || want(Experiment::Taylor) {
            let diag = diagnose(&p, cfg.verify.points, cfg.seed)?;
            if want(Experiment::Convexity) {
                let pass = !region.admissible || diag.hessian_eig_min >= 1.0 - 1e-8;
                ok &= pass;
                report.convexity = Some(Check {
                    value: diag.hessian_eig_min,
                    threshold: 1.0 - 1e-8,
                    pass,
                });
            }
            if want(Experiment::Taylor) {
                let pass = diag.remainder_worst_ratio <= 1.0;
                ok &= pass;
                report.taylor = Some(Check {
                    value: diag.remainder_worst_ratio,
                    threshold: 1.0,
                    pass,
                });
            }
        }
        if want(Experiment::Tv) || want(Experiment::Exit) {
            let unprojected = Prepared {
                sampler_plan: SamplerPlan {
                    projected: false,
                    ..prep.sampler_plan
                },
                ..prep.clone()
            };
            let (finals, exited) = run_all(&p, &unprojected, &stream.fork(2), cfg.verify.chains)?;
            if want(Experiment::Tv) {
                match tv_report(&p, region, &finals, cfg.sample.grid_points, false)? {
                    Some(t) => {
                        ok &= t.pass;
                        report.tv = Some(t);
                    }
                    None => report.skipped.push("tv: d > 2".into()),
                }
            }
            if want(Experiment::Exit) {
                let e = exit_report(p.epsilon(), &exited);
                ok &= e.pass;
                report.exit = Some(e);
            }
        }
        if want(Experiment::Chi2) {
            if p.dim() == 1 {
                let c = chi2_initialization(&p, region, prep.z_init(), 4001, None)?;
                let pass = c.log_sqrt_chi2 <= c.bound;
                ok &= pass;
                report.chi2 = Some(Chi2Report { check: c, pass });
            } else {
                report.skipped.push("chi2: d != 1".into());
            }
        }
        if want(Experiment::Mixing) {
            if p.dim() == 1 {
                let plan = make_sampler_plan(&p, region, &SamplerOptions::default())?;
                let lambda = p.hess_at_zhat()?[0];
                let times: Vec<f64> = (1..=5).map(|k| 0.5 * k as f64 / lambda).collect();
                let start = vec![region.center[0] + 0.5 * region.radius];
                let oracle = build_grid_oracle(&p, region, cfg.sample.grid_points, true)?;
                let curve = mixing_curve(
                    &p,
                    region,
                    plan.h / 10.0,
                    &start,
                    &times,
                    cfg.verify.chains,
                    &oracle,
                    &stream.fork(3),
                )?;
                let pass = curve.non_increasing && curve.below_envelope;
                ok &= pass;
                report.mixing = Some(MixingReport { curve, pass });
            } else {
                report.skipped.push("mixing: d != 1".into());
            }
        }
    }
    if want(Experiment::Cir) {
        let c = cir_check(&stream.fork(4), 10_000)?;
        ok &= c.pass;
        report.cir = Some(c);
    }
    report.pass = ok;
    Ok(Outcome { ok, body: report })
}

fn cir_check(stream: &NoiseStream, paths: usize) -> Result<CirCheck> {
    let (n, w, eps, horizon, x0, h) = (2usize, 10.0, 0.05, 5.0, 0.0, 1e-3);
    let bound = cir_bound(x0, n, w, eps);
    let k = (horizon / h) as u64;
    let hits = try_map_indices(paths, |i| {
        Ok(simulate_cir(n, w, x0, h, k, stream, i as u64)?
            .iter()
            .any(|v| *v > bound))
    })?;
    let frac = hits.iter().filter(|b| **b).count() as f64 / paths as f64;
    let threshold = eps + 3.0 * (eps / paths as f64).sqrt();
    Ok(CirCheck {
        n_tilde: n,
        w,
        x0,
        horizon,
        h,
        paths,
        bound,
        exceed_fraction: frac,
        threshold,
        pass: frac <= threshold,
    })
}

#[derive(Serialize)]
pub struct LowerboundReport {
    pub d: usize,
    pub beta: f64,
    pub rotation: u32,
    pub mask: u32,
    pub small_noise: bool,
    pub smallness_condition_violated: bool,
    pub closeness: Closeness,
    pub concentration: Concentration,
    pub retry: RetryStudy,
    pub retry_lower_bound: f64,
    pub note: &'static str,
}

pub fn lowerbound(cfg: &RunConfig, out: &Path) -> Result<Outcome<LowerboundReport>> {
    let _ = out;
    let d = cfg
        .d
        .ok_or_else(|| Error::invalid("d", "lowerbound needs d"))?;
    let lb = &cfg.lowerbound;
    let gen = SignGenerator::new(d, lb.rotation, lb.mask, cfg.beta)?;
    let stream = NoiseStream::new(cfg.seed);
    let closeness = hypercube_closeness_test(&gen, lb.closeness_samples, lb.c, &stream.fork(1))?;
    let concentration = posterior_concentration(&gen, lb.concentration_samples, &stream.fork(2))?;
    let retry = retry_study(&gen, lb.trials, lb.m, lb.m_prime, &stream.fork(3))?;
    let retry_lower_bound = 1.0 - ((-2.0 * d as f64).exp() + 0.1).powi((lb.m * lb.m_prime) as i32);
    Ok(Outcome {
        ok: true,
        body: LowerboundReport {
            d,
            beta: cfg.beta,
            rotation: lb.rotation,
            mask: lb.mask,
            small_noise: gen.small_noise(),
            smallness_condition_violated: !gen.small_noise(),
            closeness,
            concentration,
            retry,
            retry_lower_bound,
            note: "toy bit permutation (rotation composed with an XOR mask); demonstrates the reduction mechanics, not cryptographic hardness",
        },
    })
}
