use latent_langevin::nets::{estimate_constants, random_smooth, Network};
use proptest::prelude::*;

fn fd_jacobian(net: &Network, z: &[f64], h: f64) -> Vec<f64> {
    let d_in = net.input_dim();
    let d_out = net.output_dim();
    let mut j = vec![0.0; d_out * d_in];
    for c in 0..d_in {
        let mut zp = z.to_vec();
        let mut zm = z.to_vec();
        zp[c] += h;
        zm[c] -= h;
        let (a, b) = (net.eval(&zp).unwrap(), net.eval(&zm).unwrap());
        for r in 0..d_out {
            j[r * d_in + c] = (a[r] - b[r]) / (2.0 * h);
        }
    }
    j
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn jacobian_matches_central_differences(
        d_in in 1usize..=6,
        d_out in 1usize..=6,
        hidden in 1usize..=6,
        depth in 1usize..=3,
        seed in any::<u64>(),
        z in proptest::collection::vec(-1.5f64..1.5, 6),
    ) {
        let net = random_smooth(d_in, d_out, hidden, depth, seed);
        let z = &z[..d_in];
        let j = net.jacobian(z).unwrap();
        let fd = fd_jacobian(&net, z, 1e-5);
        for (a, b) in j.iter().zip(&fd) {
            prop_assert!((a - b).abs() <= 1e-5, "jacobian {a} vs fd {b}");
        }
    }

    #[test]
    fn eval_is_pure_and_format_round_trips(seed in any::<u64>(), z in proptest::collection::vec(-2.0f64..2.0, 3)) {
        let net = random_smooth(3, 2, 4, 2, seed);
        let a = net.eval(&z).unwrap();
        let b = net.eval(&z).unwrap();
        prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        let back = Network::from_json(&net.to_json()).unwrap();
        prop_assert_eq!(back.eval(&z).unwrap(), a);
    }
}

#[test]
fn random_smooth_d4_jacobian_example() {
    let net = random_smooth(4, 4, 5, 2, 42);
    let z = [0.3, -0.7, 1.1, 0.05];
    let j = net.jacobian(&z).unwrap();
    let fd = fd_jacobian(&net, &z, 1e-5);
    for (a, b) in j.iter().zip(&fd) {
        assert!((a - b).abs() <= 1e-5);
    }
}

#[test]
fn constant_estimates_widen_with_samples() {
    let net = random_smooth(2, 2, 4, 2, 7);
    let mut prev: Option<(f64, f64)> = None;
    for n in [10, 40, 160] {
        let e = estimate_constants(&net, n, 1.0, 3).unwrap();
        if let Some((m, big_m)) = prev {
            assert!(e.constants.m <= m && e.constants.big_m >= big_m);
        }
        prev = Some((e.constants.m, e.constants.big_m));
    }
}
