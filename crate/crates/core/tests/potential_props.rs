use latent_langevin::invert::invert_problem;
use latent_langevin::models::LatentGaussian;
use latent_langevin::nets::{residual_tanh, tanh_residual};
use latent_langevin::potential::{diagnose, norm, region, PosteriorProblem};
use latent_langevin::rng::NoiseStream;
use proptest::prelude::*;

fn residual_problem(d: usize, kappa: f64, seed: u64, beta: f64, z: &[f64]) -> PosteriorProblem {
    let g = residual_tanh(d, d + 2, kappa, seed);
    let x = g.network.eval(z).unwrap();
    let model = LatentGaussian::new(g.network, beta).unwrap();
    PosteriorProblem::new(model, x, g.constants, g.source, 0.1)
        .unwrap()
        .with_zhat(z.to_vec())
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn strongly_convex_on_admissible_regions(
        d in 1usize..=3, kappa in 0.1f64..0.5, seed in any::<u64>(), beta in 0.02f64..0.2,
        z in proptest::collection::vec(-1.0f64..1.0, 3),
    ) {
        let p = residual_problem(d, kappa, seed, beta, &z[..d]);
        let r = region(&p).unwrap();
        prop_assume!(r.admissible);
        let diag = diagnose(&p, 100, seed).unwrap();
        prop_assert!(diag.hessian_eig_min >= 1.0 - 1e-8, "min eigenvalue {}", diag.hessian_eig_min);
        prop_assert!(diag.remainder_worst_ratio <= 1.0, "remainder ratio {}", diag.remainder_worst_ratio);
    }

    #[test]
    fn gradient_matches_finite_differences(
        d in 1usize..=4, seed in any::<u64>(), beta in 0.1f64..1.0,
        z in proptest::collection::vec(-1.5f64..1.5, 4), w in proptest::collection::vec(-1.5f64..1.5, 4),
    ) {
        let p = residual_problem(d, 0.4, seed, beta, &z[..d]);
        let w = &w[..d];
        let g = p.grad_potential(w).unwrap();
        for i in 0..d {
            let mut a = w.to_vec();
            let mut b = w.to_vec();
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (p.potential(&a).unwrap() - p.potential(&b).unwrap()) / 2e-6;
            prop_assert!((g[i] - fd).abs() <= 1e-4 * fd.abs().max(1.0));
        }
    }
}

#[test]
fn inverse_point_norm_bound() {
    let s = NoiseStream::new(21);
    for case in 0..20u64 {
        let d = 1 + (case % 4) as usize;
        let g = residual_tanh(d, d + 1, 0.3, case);
        let x: Vec<f64> = s.normal_vec(0, case, d).iter().map(|v| 2.0 * v).collect();
        let model = LatentGaussian::new(g.network, 0.1).unwrap();
        let mut p = PosteriorProblem::new(model, x, g.constants, g.source, 0.1).unwrap();
        let trace = invert_problem(&mut p, 1_000_000).unwrap();
        let zhat = p.zhat().unwrap();
        assert!(norm(zhat) <= p.x_norm() / g.constants.m + trace.plan.delta);
    }
}

#[test]
fn observation_norm_high_probability_bound() {
    for d in [1usize, 2, 4] {
        let t = tanh_residual(d);
        let beta = 0.5;
        let model = LatentGaussian::new(t.network, beta).unwrap();
        let bound = 12.0 * (t.constants.big_m + beta) * (d as f64).sqrt();
        let s = NoiseStream::new(22);
        let n = 10_000;
        let fails = (0..n)
            .filter(|&k| norm(&model.sample_x(&s, k).unwrap().1) > bound)
            .count();
        let p = 2.0 * (-4.0 * d as f64).exp();
        assert!((fails as f64 / n as f64) <= p + 3.0 * (p.max(1.0 / n as f64) / n as f64).sqrt());
    }
}
