use latent_langevin::compile::compile_encoder;
use latent_langevin::models::LatentGaussian;
use latent_langevin::nets::{identity, ConstantSource, MapConstants};
use latent_langevin::par::try_map_indices;
use latent_langevin::pipeline::{final_states, prepare, PipelineOptions};
use latent_langevin::potential::PosteriorProblem;
use latent_langevin::rng::NoiseStream;
use latent_langevin::verify::{build_grid_oracle, tv_distance};

#[test]
fn direct_and_compiled_samples_match_oracle() {
    let c = MapConstants {
        m: 1.0,
        big_m: 1.0,
        m2: 0.0,
        m3: 0.0,
    };
    let model = LatentGaussian::new(identity(1), 0.1).unwrap();
    let mut p = PosteriorProblem::new(model, vec![0.4], c, ConstantSource::Analytic, 0.1).unwrap();
    let prep = prepare(&mut p, &PipelineOptions::default()).unwrap();
    let oracle = build_grid_oracle(&p, &prep.region, 2001, false).unwrap();
    let s = NoiseStream::new(51);
    let direct = final_states(&p, &prep, &s, 10_000).unwrap();
    let tv_direct = tv_distance(&direct, &oracle).unwrap();
    assert!(tv_direct <= 0.08, "direct TV {tv_direct}");

    let gd = prep
        .gd_plan()
        .with_steps(prep.trace.steps_taken().max(1) as u64);
    let enc = compile_encoder(&p, &gd, &prep.sampler_plan, 1_000_000).unwrap();
    let compiled = try_map_indices(10_000, |k| enc.sample(p.x(), &s, k as u64)).unwrap();
    let tv_comp = tv_distance(&compiled, &oracle).unwrap();
    assert!(tv_comp <= 0.08, "compiled TV {tv_comp}");
}
