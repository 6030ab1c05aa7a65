//! End-to-end posterior sampling: invert, build `D`, plan, run chains.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::invert::{invert_problem, GdPlan, GdTrace, DEFAULT_MAX_STEPS};
use crate::par::try_map_indices;
use crate::potential::{region, PosteriorProblem, RegionD};
use crate::rng::NoiseStream;
use crate::sampler::{
    initialize, make_sampler_plan, run_chain, SamplerOptions, SamplerPlan, Thinning,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub max_gd_steps: u64,
    pub sampler: SamplerOptions,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            max_gd_steps: DEFAULT_MAX_STEPS,
            sampler: SamplerOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Prepared {
    pub trace: GdTrace,
    pub region: RegionD,
    pub sampler_plan: SamplerPlan,
}

impl Prepared {
    pub fn gd_plan(&self) -> &GdPlan {
        &self.trace.plan
    }

    /// Where chains start before the ball offset.
    pub fn z_init(&self) -> &[f64] {
        self.trace.final_iterate()
    }
}

/// Inverts `x` (caching `zhat`), builds `D` and the sampler plan.
pub fn prepare(problem: &mut PosteriorProblem, opts: &PipelineOptions) -> Result<Prepared> {
    let trace = invert_problem(problem, opts.max_gd_steps)?;
    let region = region(problem)?;
    let sampler_plan = make_sampler_plan(problem, &region, &opts.sampler)?;
    Ok(Prepared {
        trace,
        region,
        sampler_plan,
    })
}

/// Final states of `n` chains; chain `c` uses draw `c` everywhere.
pub fn final_states(
    problem: &PosteriorProblem,
    prep: &Prepared,
    stream: &NoiseStream,
    n: usize,
) -> Result<Vec<Vec<f64>>> {
    let plan = SamplerPlan {
        thinning: Thinning::FinalOnly,
        ..prep.sampler_plan
    };
    try_map_indices(n, |c| {
        let z0 = initialize(problem, &prep.region, prep.z_init(), stream, c as u64)?;
        Ok(
            run_chain(problem, &prep.region, &plan, &z0, stream, c as u64)?
                .final_state()
                .to_vec(),
        )
    })
}
