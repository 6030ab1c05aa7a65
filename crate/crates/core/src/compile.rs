//! Compiles gradient-descent inversion followed by Langevin sampling into a
//! deep latent Gaussian encoder built from network gadgets.
//!
//! Encoder input is `[z_start; x; u]` (`3d` values), where `u` is the
//! uniform-ball initialization offset sampled by the caller. The stages are
//!
//! 1. `S` noise-free gradient steps `[z; x; u] -> [z - eta J^T (G(z) - x); x; u]`,
//! 2. one noise-free linear stage `[z; x; u] -> [z + u; x]`,
//! 3. `K` Langevin steps `[z; x] -> [(1 - h) z - (h / beta^2) J^T (G(z) - x); x]`
//!    with variance `2h` on the `z` block. Langevin stage `k` is keyed `k` in
//!    the noise stream, exactly like step `k` of [`run_chain`].

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::invert::{gd_invert, GdPlan};
use crate::models::{DeepLatentGaussian, DlgFile, Stage};
use crate::nets::graph::{Affine, Graph};
use crate::nets::{Activation, Network};
use crate::potential::{PosteriorProblem, RegionD};
use crate::rng::{NoiseStream, INIT_STAGE};
use crate::sampler::{run_chain, SamplerPlan, Thinning};

pub const DEFAULT_MAX_STAGES: u64 = 1_000_000;
pub const MANIFEST_FORMAT: &str = "latent-langevin/encoder-manifest/v1";

/// Key for noise-free stages; never drawn from.
const QUIET_STAGE: u64 = u64::MAX - 2;

struct Recorded {
    pre: Vec<Vec<Affine>>,
    post: Vec<Vec<Affine>>,
}

fn embed_recorded(gr: &mut Graph, net: &Network, inputs: &[Affine]) -> Recorded {
    let mut pre_all = Vec::with_capacity(net.depth());
    let mut post_all: Vec<Vec<Affine>> = Vec::with_capacity(net.depth());
    for layer in net.layers() {
        let current = post_all.last().map(|v| v.as_slice()).unwrap_or(inputs);
        let mut pre = Vec::with_capacity(layer.out_dim());
        let mut post = Vec::with_capacity(layer.out_dim());
        for j in 0..layer.out_dim() {
            let mut p = Affine::constant(layer.bias()[j]);
            for (i, a) in current.iter().enumerate() {
                p.add_scaled(a, layer.weight(j, i));
            }
            post.push(gr.unit(layer.activations()[j], p.clone()));
            pre.push(p);
        }
        pre_all.push(pre);
        post_all.push(post);
    }
    Recorded {
        pre: pre_all,
        post: post_all,
    }
}

/// `sigma'` per unit: `1 - tanh^2` via a square unit, `2 u` for square, `1`
/// for identity.
fn activation_slopes(gr: &mut Graph, net: &Network, rec: &Recorded) -> Result<Vec<Vec<Affine>>> {
    let mut out = Vec::with_capacity(net.depth());
    for (k, layer) in net.layers().iter().enumerate() {
        let mut row = Vec::with_capacity(layer.out_dim());
        for (j, act) in layer.activations().iter().enumerate() {
            row.push(match act {
                Activation::Tanh => {
                    let sq = gr.unit(Activation::Square, rec.post[k][j].clone());
                    let mut s = sq.scaled(-1.0);
                    s.bias += 1.0;
                    s
                }
                Activation::Square => rec.pre[k][j].scaled(2.0),
                Activation::Identity => Affine::constant(1.0),
                other => return Err(Error::NonSmooth(*other)),
            });
        }
        out.push(row);
    }
    Ok(out)
}

/// Product that skips the gadget when either side is a constant.
fn times(gr: &mut Graph, a: &Affine, b: &Affine) -> Affine {
    if let Some(c) = a.as_constant() {
        b.scaled(c)
    } else if let Some(c) = b.as_constant() {
        a.scaled(c)
    } else {
        gr.mul(a, b)
    }
}

/// Reverse sweep: `J^T seed` with respect to the network inputs.
fn backward(gr: &mut Graph, net: &Network, slopes: &[Vec<Affine>], seed: &[Affine]) -> Vec<Affine> {
    let layers = net.layers();
    let last = layers.len() - 1;
    let mut delta: Vec<Affine> = seed
        .iter()
        .zip(&slopes[last])
        .map(|(s, sp)| times(gr, s, sp))
        .collect();
    for k in (0..layers.len()).rev() {
        let layer = &layers[k];
        let mut adj = vec![Affine::default(); layer.in_dim()];
        for (j, dj) in delta.iter().enumerate() {
            if dj.is_zero() {
                continue;
            }
            for (u, a) in adj.iter_mut().enumerate() {
                let w = layer.weight(j, u);
                if w != 0.0 {
                    a.add_scaled(dj, w);
                }
            }
        }
        if k == 0 {
            return adj;
        }
        delta = adj
            .iter()
            .zip(&slopes[k - 1])
            .map(|(a, sp)| {
                if a.is_zero() {
                    Affine::default()
                } else {
                    times(gr, a, sp)
                }
            })
            .collect();
    }
    unreachable!("networks have at least one layer")
}

fn unit_seed(dim: usize, i: usize) -> Vec<Affine> {
    (0..dim)
        .map(|j| Affine::constant(if j == i { 1.0 } else { 0.0 }))
        .collect()
}

/// Network computing `grad_z G_i(z)` (the `i`-th Jacobian row).
pub fn derivative_network(net: &Network, output_index: usize) -> Result<Network> {
    net.require_smooth()?;
    if output_index >= net.output_dim() {
        return Err(Error::invalid(
            "output_index",
            format!(
                "{output_index} is out of range for {} outputs",
                net.output_dim()
            ),
        ));
    }
    let mut gr = Graph::new(net.input_dim());
    let inputs = gr.inputs();
    let rec = embed_recorded(&mut gr, net, &inputs);
    let slopes = activation_slopes(&mut gr, net, &rec)?;
    let grad = backward(
        &mut gr,
        net,
        &slopes,
        &unit_seed(net.output_dim(), output_index),
    );
    gr.to_network(&grad)
}

/// Network computing `w1 f + w2 g`.
pub fn add_networks(f: &Network, g: &Network, w1: f64, w2: f64) -> Result<Network> {
    check_dim("add_networks input", f.input_dim(), g.input_dim())?;
    check_dim("add_networks output", f.output_dim(), g.output_dim())?;
    let mut gr = Graph::new(f.input_dim());
    let inputs = gr.inputs();
    let fo = gr.embed(f, &inputs);
    let go = gr.embed(g, &inputs);
    let outs: Vec<Affine> = fo
        .iter()
        .zip(&go)
        .map(|(a, b)| Affine::sum(&[(a, w1), (b, w2)]))
        .collect();
    gr.to_network(&outs)
}

/// Network computing `f g` for scalar `f`, `g` via two square units.
pub fn mul_networks(f: &Network, g: &Network) -> Result<Network> {
    check_dim("mul_networks input", f.input_dim(), g.input_dim())?;
    check_dim(
        "mul_networks output of f (must be scalar)",
        1,
        f.output_dim(),
    )?;
    check_dim(
        "mul_networks output of g (must be scalar)",
        1,
        g.output_dim(),
    )?;
    let mut gr = Graph::new(f.input_dim());
    let inputs = gr.inputs();
    let fo = gr.embed(f, &inputs);
    let go = gr.embed(g, &inputs);
    let p = gr.mul(&fo[0], &go[0]);
    gr.to_network(&[p])
}

/// `c1 z + c2 J_G(z)^T (G(z) - x)` as graph values, built from one
/// derivative sweep per output and `d^2` products.
fn step_values(
    gr: &mut Graph,
    g: &Network,
    z: &[Affine],
    x: &[Affine],
    c1: f64,
    c2: f64,
) -> Result<Vec<Affine>> {
    let d = g.input_dim();
    let mut acc: Vec<Affine> = z.iter().map(|a| a.scaled(c1)).collect();
    if c2 == 0.0 {
        return Ok(acc);
    }
    let rec = embed_recorded(gr, g, z);
    let slopes = activation_slopes(gr, g, &rec)?;
    let out = rec.post.last().expect("non-empty network").clone();
    for i in 0..d {
        let r = Affine::sum(&[(&out[i], 1.0), (&x[i], -1.0)]);
        let row = backward(gr, g, &slopes, &unit_seed(d, i));
        for (a, rj) in acc.iter_mut().zip(&row) {
            let p = times(gr, &r, rj);
            a.add_scaled(&p, c2);
        }
    }
    Ok(acc)
}

fn require_square(g: &Network) -> Result<()> {
    g.require_smooth()?;
    check_dim("generator (must be square)", g.input_dim(), g.output_dim())
}

/// `[z; x] -> [c1 z + c2 J_G(z)^T (G(z) - x); x]`.
pub fn step_network(generator: &Network, c1: f64, c2: f64) -> Result<Network> {
    step_network_carrying(generator, c1, c2, 0)
}

/// As [`step_network`] with `extra` trailing inputs passed through unchanged.
pub fn step_network_carrying(
    generator: &Network,
    c1: f64,
    c2: f64,
    extra: usize,
) -> Result<Network> {
    require_square(generator)?;
    let d = generator.input_dim();
    let mut gr = Graph::new(2 * d + extra);
    let ins = gr.inputs();
    let mut outs = step_values(&mut gr, generator, &ins[..d], &ins[d..2 * d], c1, c2)?;
    outs.extend_from_slice(&ins[d..]);
    gr.to_network(&outs)
}

/// `[z; x; u] -> [z + u; x]`.
fn init_network(d: usize) -> Result<Network> {
    let gr = Graph::new(3 * d);
    let ins = gr.inputs();
    let mut outs: Vec<Affine> = (0..d)
        .map(|i| Affine::sum(&[(&ins[i], 1.0), (&ins[2 * d + i], 1.0)]))
        .collect();
    outs.extend_from_slice(&ins[d..2 * d]);
    gr.to_network(&outs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderManifest {
    pub format: String,
    pub dim: usize,
    #[serde(rename = "S")]
    pub s: u64,
    #[serde(rename = "K")]
    pub k: u64,
    pub h: f64,
    pub eta: f64,
    pub beta: f64,
    pub init_radius: f64,
    pub parameter_count: usize,
    pub amortized: bool,
}

#[derive(Clone, Debug)]
pub struct CompiledEncoder {
    pub dlg: DeepLatentGaussian,
    pub gd_stage_count: u64,
    pub langevin_stage_count: u64,
    /// `x` is an input channel threaded through every stage.
    pub amortized: bool,
    pub manifest: EncoderManifest,
}

pub fn compile_encoder(
    problem: &PosteriorProblem,
    gd_plan: &GdPlan,
    sampler_plan: &SamplerPlan,
    max_stages: u64,
) -> Result<CompiledEncoder> {
    if sampler_plan.projected {
        return Err(Error::invalid(
            "projected",
            "projection is not a Gaussian stage; compile an unprojected plan",
        ));
    }
    let s = gd_plan.steps;
    let k = sampler_plan.k;
    let total = s as f64 + k as f64 + 1.0;
    if total > max_stages as f64 {
        return Err(Error::PlanTooLarge {
            what: "stages (S + K + 1)",
            value: total,
            cap: max_stages,
            hint: format!(
                "increase epsilon (currently {}) or raise the stage cap",
                problem.epsilon()
            ),
        });
    }
    let g = problem.generator();
    let d = problem.dim();
    let beta2 = problem.beta() * problem.beta();
    let h = sampler_plan.h;

    let gd_net = Arc::new(step_network_carrying(g, 1.0, -gd_plan.eta, d)?);
    let init = Arc::new(init_network(d)?);
    let mut stages = Vec::with_capacity(total as usize);
    for _ in 0..s {
        stages.push(Stage::deterministic(gd_net.clone(), QUIET_STAGE));
    }
    stages.push(Stage::deterministic(init, QUIET_STAGE));
    if k > 0 {
        let lv = Arc::new(step_network(g, 1.0 - h, -h / beta2)?);
        for j in 0..k {
            stages.push(Stage::new(lv.clone(), 2.0 * h, j).with_noise_dim(d));
        }
    }
    let dlg = DeepLatentGaussian::new(stages)?;
    let manifest = EncoderManifest {
        format: MANIFEST_FORMAT.to_string(),
        dim: d,
        s,
        k,
        h,
        eta: gd_plan.eta,
        beta: problem.beta(),
        init_radius: sampler_plan.init_radius,
        parameter_count: dlg.param_count(),
        amortized: true,
    };
    Ok(CompiledEncoder {
        dlg,
        gd_stage_count: s,
        langevin_stage_count: k,
        amortized: true,
        manifest,
    })
}

impl CompiledEncoder {
    pub fn dim(&self) -> usize {
        self.manifest.dim
    }

    pub fn parameter_count(&self) -> usize {
        self.manifest.parameter_count
    }

    /// Runs the encoder on an explicit `[z_start; x; u]` input and keeps the
    /// `z` block of the output.
    pub fn sample_with_input(
        &self,
        input: &[f64],
        stream: &NoiseStream,
        draw: u64,
    ) -> Result<Vec<f64>> {
        let mut out = self.dlg.sample(input, stream, draw)?;
        out.truncate(self.dim());
        Ok(out)
    }

    /// One posterior draw for `x`: `z_start = 0`, `u = stream.ball(INIT_STAGE, draw, d, rad / 4)`.
    pub fn sample(&self, x: &[f64], stream: &NoiseStream, draw: u64) -> Result<Vec<f64>> {
        let d = self.dim();
        check_dim("observation", d, x.len())?;
        let mut input = vec![0.0; d];
        input.extend_from_slice(x);
        input.extend(stream.ball(INIT_STAGE, draw, d, self.manifest.init_radius));
        self.sample_with_input(&input, stream, draw)
    }

    /// Writes `encoder.json` and `manifest.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("encoder.json"),
            serde_json::to_string(&self.dlg.to_file())?,
        )?;
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&self.manifest)?,
        )?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let file: DlgFile =
            serde_json::from_str(&std::fs::read_to_string(dir.join("encoder.json"))?)?;
        let manifest: EncoderManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::Format(format!(
                "unknown manifest format `{}`",
                manifest.format
            )));
        }
        let dlg = DeepLatentGaussian::from_file(file)?;
        let expected = manifest.s + 1 + manifest.k;
        if dlg.stages().len() as u64 != expected || dlg.input_dim() != 3 * manifest.dim {
            return Err(Error::Format(format!(
                "encoder has {} stages of input {}, manifest expects {expected} stages for d = {}",
                dlg.stages().len(),
                dlg.input_dim(),
                manifest.dim
            )));
        }
        Ok(Self {
            dlg,
            gd_stage_count: manifest.s,
            langevin_stage_count: manifest.k,
            amortized: manifest.amortized,
            manifest,
        })
    }
}

/// The direct pipeline the encoder must reproduce: exactly `S` gradient
/// steps from 0, the ball offset for `draw`, then `K` Langevin steps.
pub fn direct_sample(
    problem: &PosteriorProblem,
    region: &RegionD,
    gd_plan: &GdPlan,
    sampler_plan: &SamplerPlan,
    stream: &NoiseStream,
    draw: u64,
) -> Result<Vec<f64>> {
    let trace = gd_invert(problem, &gd_plan.without_early_stop(), None)?;
    chain_from(
        problem,
        region,
        trace.final_iterate(),
        sampler_plan,
        stream,
        draw,
    )
}

fn chain_from(
    problem: &PosteriorProblem,
    region: &RegionD,
    z_init: &[f64],
    sampler_plan: &SamplerPlan,
    stream: &NoiseStream,
    draw: u64,
) -> Result<Vec<f64>> {
    let u = stream.ball(INIT_STAGE, draw, problem.dim(), sampler_plan.init_radius);
    let z0: Vec<f64> = z_init.iter().zip(&u).map(|(a, b)| a + b).collect();
    let plan = SamplerPlan {
        thinning: Thinning::FinalOnly,
        projected: false,
        ..*sampler_plan
    };
    Ok(run_chain(problem, region, &plan, &z0, stream, draw)?
        .final_state()
        .to_vec())
}

/// Equivalence self-test: the largest `max_i |a_i - b_i| / max(max_i |b_i|, 1)`
/// over `draws` shared-noise samples.
pub fn self_test(
    encoder: &CompiledEncoder,
    problem: &PosteriorProblem,
    region: &RegionD,
    gd_plan: &GdPlan,
    sampler_plan: &SamplerPlan,
    stream: &NoiseStream,
    draws: u64,
) -> Result<f64> {
    let trace = gd_invert(problem, &gd_plan.without_early_stop(), None)?;
    let mut worst = 0.0_f64;
    for draw in 0..draws {
        let b = chain_from(
            problem,
            region,
            trace.final_iterate(),
            sampler_plan,
            stream,
            draw,
        )?;
        let a = encoder.sample(problem.x(), stream, draw)?;
        let scale = b.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let dev = a
            .iter()
            .zip(&b)
            .fold(0.0_f64, |m, (p, q)| m.max((p - q).abs()));
        worst = worst.max(dev / scale);
    }
    Ok(worst)
}
