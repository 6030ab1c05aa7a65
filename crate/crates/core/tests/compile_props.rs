use latent_langevin::compile::{
    add_networks, compile_encoder, derivative_network, mul_networks, self_test, step_network,
    CompiledEncoder,
};
use latent_langevin::invert::make_gd_plan;
use latent_langevin::models::LatentGaussian;
use latent_langevin::nets::{
    identity, random_smooth, tanh_residual, Activation, ConstantSource, Layer, MapConstants,
    Network,
};
use latent_langevin::potential::{region, PosteriorProblem};
use latent_langevin::rng::NoiseStream;
use latent_langevin::sampler::{make_sampler_plan, SamplerOptions};
use proptest::prelude::*;

/// Audited bound on `size(derivative) / (size(net) + depth)`.
const DERIVATIVE_SIZE_C: f64 = 12.0;
/// Audited bound on `size(encoder) / ((S + K) d^2 N)`.
const ENCODER_SIZE_C: f64 = 8.0;

fn tanh_problem(d: usize, beta: f64) -> PosteriorProblem {
    let t = tanh_residual(d);
    let z: Vec<f64> = (0..d).map(|i| 0.3 - 0.4 * i as f64).collect();
    let x = t.network.eval(&z).unwrap();
    let model = LatentGaussian::new(t.network, beta).unwrap();
    PosteriorProblem::new(model, x, t.constants, t.source, 0.1)
        .unwrap()
        .with_zhat(z)
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn add_matches_weighted_sum(seed in any::<u64>(), w1 in -3.0f64..3.0, w2 in -3.0f64..3.0,
                                z in proptest::collection::vec(-2.0f64..2.0, 3)) {
        let f = random_smooth(3, 2, 4, 2, seed);
        let g = random_smooth(3, 2, 3, 3, seed ^ 0xABCD);
        let s = add_networks(&f, &g, w1, w2).unwrap();
        let (a, b, c) = (f.eval(&z).unwrap(), g.eval(&z).unwrap(), s.eval(&z).unwrap());
        for i in 0..2 {
            let want = w1 * a[i] + w2 * b[i];
            prop_assert!((c[i] - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn step_network_matches_formula(seed in any::<u64>(), c1 in -2.0f64..2.0, c2 in -2.0f64..2.0,
                                    zx in proptest::collection::vec(-1.5f64..1.5, 4)) {
        let g = random_smooth(2, 2, 3, 2, seed);
        let net = step_network(&g, c1, c2).unwrap();
        let (z, x) = zx.split_at(2);
        let out = net.eval(&zx).unwrap();
        let gz = g.eval(z).unwrap();
        let r: Vec<f64> = gz.iter().zip(x).map(|(a, b)| a - b).collect();
        let jtr = g.vjp(z, &r).unwrap();
        for i in 0..2 {
            let want = c1 * z[i] + c2 * jtr[i];
            prop_assert!((out[i] - want).abs() <= 1e-8 * want.abs().max(1.0));
            prop_assert_eq!(out[2 + i], x[i]);
        }
    }
}

#[test]
fn multiplication_of_random_scalar_nets() {
    let s = NoiseStream::new(3);
    for seed in 0..10 {
        let f = random_smooth(2, 1, 4, 2, seed);
        let g = random_smooth(2, 1, 3, 2, seed + 100);
        let fg = mul_networks(&f, &g).unwrap();
        for k in 0..100 {
            let z = s.normal_vec(seed, k, 2);
            let want = f.eval(&z).unwrap()[0] * g.eval(&z).unwrap()[0];
            let got = fg.eval(&z).unwrap()[0];
            assert!((got - want).abs() <= 1e-10 * (1.0 + want.abs()));
        }
    }
}

#[test]
fn derivative_network_size_audit() {
    let mut worst = 0.0_f64;
    for seed in 0..40u64 {
        let d = 1 + (seed % 4) as usize;
        let depth = 1 + (seed % 3) as usize;
        let net = random_smooth(d, d, 2 + (seed % 5) as usize, depth, seed);
        for i in 0..d {
            let dn = derivative_network(&net, i).unwrap();
            let ratio = dn.param_count() as f64 / (net.param_count() + net.depth()) as f64;
            worst = worst.max(ratio);
        }
    }
    assert!(worst <= DERIVATIVE_SIZE_C, "derivative size ratio {worst}");
}

fn encoder_for(p: &PosteriorProblem, s: u64, k: u64) -> CompiledEncoder {
    let r = region(p).unwrap();
    let gd = make_gd_plan(p, None, 1_000_000).unwrap().with_steps(s);
    let sp = make_sampler_plan(p, &r, &SamplerOptions::default())
        .unwrap()
        .with_steps(k);
    compile_encoder(p, &gd, &sp, 1_000_000).unwrap()
}

#[test]
fn encoder_size_is_linear_in_stages() {
    for d in 1..=3 {
        let p = tanh_problem(d, 0.1);
        let n = p.generator().param_count() as f64;
        let base = encoder_for(&p, 2, 3).parameter_count();
        let more_gd = encoder_for(&p, 3, 3).parameter_count();
        let more_lv = encoder_for(&p, 2, 4).parameter_count();
        let both = encoder_for(&p, 7, 13).parameter_count();
        let (a, b) = (more_gd - base, more_lv - base);
        assert_eq!(both, base + 5 * a + 10 * b);
        let big = encoder_for(&p, 20, 30);
        let ratio = big.parameter_count() as f64 / (50.0 * (d * d) as f64 * n);
        assert!(ratio <= ENCODER_SIZE_C, "d = {d}: ratio {ratio}");
        assert!(big.dlg.stages()[..20].iter().all(|s| s.variance == 0.0));
        assert!(big.dlg.stages()[21..]
            .iter()
            .all(|s| (s.variance - 2.0 * big.manifest.h).abs() < 1e-15));
    }
}

#[test]
fn identity_one_step_encoder_returns_x() {
    let model = LatentGaussian::new(identity(2), 0.1).unwrap();
    let c = MapConstants {
        m: 1.0,
        big_m: 1.0,
        m2: 0.0,
        m3: 0.0,
    };
    let p = PosteriorProblem::new(model, vec![0.7, -1.2], c, ConstantSource::Analytic, 0.1)
        .unwrap()
        .with_zhat(vec![0.7, -1.2])
        .unwrap();
    let enc = encoder_for(&p, 1, 0);
    let s = NoiseStream::new(1);
    for z0 in [[0.0, 0.0], [5.0, -3.0], [-0.1, 9.0]] {
        let input = [z0[0], z0[1], 0.7, -1.2, 0.0, 0.0];
        let out = enc.sample_with_input(&input, &s, 0).unwrap();
        assert!((out[0] - 0.7).abs() < 1e-15 && (out[1] + 1.2).abs() < 1e-15);
    }
}

#[test]
fn saved_encoder_reproduces_self_test() {
    let p = tanh_problem(2, 0.1);
    let r = region(&p).unwrap();
    let gd = make_gd_plan(&p, None, 1_000_000).unwrap().with_steps(10);
    let sp = make_sampler_plan(&p, &r, &SamplerOptions::default())
        .unwrap()
        .with_steps(50);
    let enc = compile_encoder(&p, &gd, &sp, 1_000_000).unwrap();
    let s = NoiseStream::new(12);
    let dev = self_test(&enc, &p, &r, &gd, &sp, &s, 10).unwrap();
    assert!(dev <= 1e-6);
    let dir = std::env::temp_dir().join(format!("ll-encoder-{}", std::process::id()));
    enc.save(&dir).unwrap();
    let back = CompiledEncoder::load(&dir).unwrap();
    assert_eq!(self_test(&back, &p, &r, &gd, &sp, &s, 10).unwrap(), dev);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn non_smooth_generator_is_refused() {
    let layer = Layer::uniform(1, 1, vec![1.0], vec![0.0], Activation::Sign).unwrap();
    let net = Network::new(vec![layer]).unwrap();
    assert!(derivative_network(&net, 0).is_err());
    assert!(step_network(&net, 1.0, -1.0).is_err());
}
