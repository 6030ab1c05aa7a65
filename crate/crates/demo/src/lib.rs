//! Browser demo: one-dimensional posterior sampling, gradient-descent
//! inversion and CIR paths, each returned as a JSON string.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use latent_langevin::invert::{gd_invert, make_gd_plan};
use latent_langevin::models::LatentGaussian;
use latent_langevin::nets::{
    identity, residual_tanh, tanh_residual, ConstantSource, MapConstants, Network,
};
use latent_langevin::pipeline::{final_states, prepare, PipelineOptions};
use latent_langevin::potential::PosteriorProblem;
use latent_langevin::rng::NoiseStream;
use latent_langevin::sampler::{cir_bound, simulate_cir};
use latent_langevin::verify::{build_grid_oracle, tv_distance};
use latent_langevin::{Error, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_CHAINS: usize = 5000;
const MAX_PATHS: usize = 200;
const HIST_BINS: usize = 48;
const CURVE_POINTS: usize = 240;

fn generator(name: &str) -> Result<(Network, MapConstants, ConstantSource)> {
    match name {
        "identity" => Ok((
            identity(1),
            MapConstants {
                m: 1.0,
                big_m: 1.0,
                m2: 0.0,
                m3: 0.0,
            },
            ConstantSource::Analytic,
        )),
        "tanh-residual" => {
            let t = tanh_residual(1);
            Ok((t.network, t.constants, t.source))
        }
        "residual-tanh" => {
            let t = residual_tanh(1, 8, 0.6, 1);
            Ok((t.network, t.constants, t.source))
        }
        _ => Err(Error::invalid(
            "generator",
            format!("unknown builtin `{name}`"),
        )),
    }
}

fn problem(name: &str, x: f64, beta: f64) -> Result<PosteriorProblem> {
    let (net, c, src) = generator(name)?;
    let model = LatentGaussian::new(net, beta)?;
    PosteriorProblem::new(model, vec![x], c, src, 0.1)
}

#[derive(Serialize)]
pub struct Histogram {
    pub zhat: f64,
    pub radius: f64,
    pub admissible: bool,
    pub h: f64,
    pub k: u64,
    pub chains: usize,
    pub lo: f64,
    pub hi: f64,
    /// Empirical density per bin.
    pub counts: Vec<f64>,
    pub oracle_z: Vec<f64>,
    pub oracle_pdf: Vec<f64>,
    pub tv: f64,
}

pub fn posterior(name: &str, x: f64, beta: f64, chains: usize, seed: u64) -> Result<Histogram> {
    if chains == 0 || chains > MAX_CHAINS {
        return Err(Error::invalid(
            "chains",
            format!("must lie in 1..={MAX_CHAINS}"),
        ));
    }
    let mut p = problem(name, x, beta)?;
    let prep = prepare(&mut p, &PipelineOptions::default())?;
    let stream = NoiseStream::new(seed);
    let samples = final_states(&p, &prep, &stream, chains)?;
    let oracle = build_grid_oracle(&p, &prep.region, 801, false)?;
    let tv = tv_distance(&samples, &oracle)?;

    let lo = oracle.center[0] - oracle.half_width;
    let hi = oracle.center[0] + oracle.half_width;
    let width = (hi - lo) / HIST_BINS as f64;
    let mut counts = vec![0.0; HIST_BINS];
    for s in &samples {
        let b = ((s[0] - lo) / width).floor();
        if b >= 0.0 && (b as usize) < HIST_BINS {
            counts[b as usize] += 1.0;
        }
    }
    for c in &mut counts {
        *c /= chains as f64 * width;
    }
    let stride = (oracle.points / CURVE_POINTS).max(1);
    let idx: Vec<usize> = (0..oracle.points).step_by(stride).collect();
    Ok(Histogram {
        zhat: prep.region.center[0],
        radius: prep.region.radius,
        admissible: prep.region.admissible,
        h: prep.sampler_plan.h,
        k: prep.sampler_plan.k,
        chains,
        lo,
        hi,
        counts,
        oracle_z: idx.iter().map(|&i| oracle.coord(i, 0)).collect(),
        oracle_pdf: idx.iter().map(|&i| oracle.pdf_at(i)).collect(),
        tv,
    })
}

#[derive(Serialize)]
pub struct Descent {
    pub eta: f64,
    pub delta: f64,
    pub plan_steps: u64,
    pub iterates: Vec<f64>,
    pub objectives: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub root: f64,
    pub curve_z: Vec<f64>,
    pub curve_g: Vec<f64>,
}

/// Runs up to `steps` gradient-descent steps from the origin without early
/// stopping.
pub fn descent(name: &str, x: f64, beta: f64, steps: u64) -> Result<Descent> {
    let p = problem(name, x, beta)?;
    let plan = make_gd_plan(&p, None, 1_000_000)?;
    let run = plan.without_early_stop().with_steps(steps.clamp(1, 200));
    let trace = gd_invert(&p, &run, None)?;
    let iterates: Vec<f64> = trace.iterates.iter().map(|z| z[0]).collect();
    let root = *iterates.last().expect("start point");
    let span = (root.abs() + 1.0) * 1.5;
    let net = p.generator();
    let curve_z: Vec<f64> = (0..CURVE_POINTS)
        .map(|i| -span + 2.0 * span * i as f64 / (CURVE_POINTS - 1) as f64)
        .collect();
    let curve_g = curve_z
        .iter()
        .map(|z| Ok(net.eval(&[*z])?[0]))
        .collect::<Result<Vec<f64>>>()?;
    Ok(Descent {
        eta: plan.eta,
        delta: plan.delta,
        plan_steps: plan.steps,
        iterates,
        objectives: trace.objectives,
        grad_norms: trace.grad_norms,
        root,
        curve_z,
        curve_g,
    })
}

#[derive(Serialize)]
pub struct CirPaths {
    pub h: f64,
    pub times: Vec<f64>,
    /// Subsampled paths, one per row.
    pub paths: Vec<Vec<f64>>,
    pub bound: f64,
    pub exceed_fraction: f64,
}

pub fn cir(
    n_tilde: usize,
    w: f64,
    x0: f64,
    horizon: f64,
    paths: usize,
    epsilon: f64,
    seed: u64,
) -> Result<CirPaths> {
    if paths == 0 || paths > MAX_PATHS {
        return Err(Error::invalid(
            "paths",
            format!("must lie in 1..={MAX_PATHS}"),
        ));
    }
    if !(horizon > 0.0 && horizon <= 100.0) {
        return Err(Error::invalid("horizon", "must lie in (0, 100]"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid("epsilon", "must lie in (0, 1)"));
    }
    let h = 1e-3_f64.min(horizon / 100.0);
    let k = (horizon / h).round() as u64;
    let bound = cir_bound(x0, n_tilde, w, epsilon);
    let stream = NoiseStream::new(seed);
    let stride = (k as usize / CURVE_POINTS).max(1);
    let mut out = Vec::with_capacity(paths);
    let mut hits = 0;
    for i in 0..paths {
        let path = simulate_cir(n_tilde, w, x0, h, k, &stream, i as u64)?;
        if path.iter().any(|v| *v > bound) {
            hits += 1;
        }
        out.push(path.into_iter().step_by(stride).collect::<Vec<f64>>());
    }
    let times = (0..out[0].len()).map(|i| (i * stride) as f64 * h).collect();
    Ok(CirPaths {
        h,
        times,
        paths: out,
        bound,
        exceed_fraction: hits as f64 / paths as f64,
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = posteriorHistogram)]
pub fn posterior_histogram(
    generator: &str,
    x: f64,
    beta: f64,
    chains: u32,
    seed: u32,
) -> std::result::Result<String, JsError> {
    to_js(posterior(generator, x, beta, chains as usize, seed as u64))
}

#[wasm_bindgen(js_name = gdTrace)]
pub fn gd_trace(
    generator: &str,
    x: f64,
    beta: f64,
    steps: u32,
) -> std::result::Result<String, JsError> {
    to_js(descent(generator, x, beta, steps as u64))
}

#[wasm_bindgen(js_name = cirPaths)]
pub fn cir_paths(
    n_tilde: u32,
    w: f64,
    x0: f64,
    horizon: f64,
    paths: u32,
    epsilon: f64,
    seed: u32,
) -> std::result::Result<String, JsError> {
    to_js(cir(
        n_tilde as usize,
        w,
        x0,
        horizon,
        paths as usize,
        epsilon,
        seed as u64,
    ))
}
