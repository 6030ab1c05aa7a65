use nalgebra::DMatrix;

use super::{Activation, ConstantSource, Layer, MapConstants, Network};
use crate::rng::NoiseStream;

/// max |tanh''(u)| = 4 / (3 sqrt 3).
pub(crate) const TANH_D2_MAX: f64 = 0.769_800_358_919_501_4;
/// max |tanh'''(u)|, attained at 0.
pub(crate) const TANH_D3_MAX: f64 = 2.0;

pub fn identity(d: usize) -> Network {
    let mut w = vec![0.0; d * d];
    for i in 0..d {
        w[i * d + i] = 1.0;
    }
    linear(d, d, w)
}

/// `z -> A z`, `A` row-major `out × in`.
pub fn linear(in_dim: usize, out_dim: usize, a: Vec<f64>) -> Network {
    Network::new(vec![Layer::uniform(
        in_dim,
        out_dim,
        a,
        vec![0.0; out_dim],
        Activation::Identity,
    )
    .expect("linear layer")])
    .expect("single layer")
}

/// `z -> tanh(w z)` on the real line.
pub fn scalar_tanh(w: f64) -> Network {
    Network::new(vec![Layer::uniform(
        1,
        1,
        vec![w],
        vec![0.0],
        Activation::Tanh,
    )
    .expect("layer")])
    .expect("single layer")
}

/// Coordinatewise `G(z)_i = z_i + 0.5 tanh(z_i)`.
///
/// `G'` ranges over `[1, 1.5]`, so `m = 1`, `M = 1.5`,
/// `M2 = 0.5 max|tanh''|`, `M3 = 0.5 max|tanh'''| = 1`.
pub fn tanh_residual(d: usize) -> ResidualTanh {
    let mut w1 = vec![0.0; 2 * d * d];
    let mut acts = Vec::with_capacity(2 * d);
    for i in 0..d {
        w1[i * d + i] = 1.0;
        acts.push(Activation::Identity);
    }
    for i in 0..d {
        w1[(d + i) * d + i] = 1.0;
        acts.push(Activation::Tanh);
    }
    let mut w2 = vec![0.0; d * 2 * d];
    for i in 0..d {
        w2[i * 2 * d + i] = 1.0;
        w2[i * 2 * d + d + i] = 0.5;
    }
    let network = Network::new(vec![
        Layer::new(d, 2 * d, w1, vec![0.0; 2 * d], acts).expect("layer"),
        Layer::uniform(2 * d, d, w2, vec![0.0; d], Activation::Identity).expect("layer"),
    ])
    .expect("chain");
    ResidualTanh {
        network,
        constants: MapConstants {
            m: 1.0,
            big_m: 1.5,
            m2: 0.5 * TANH_D2_MAX,
            m3: 0.5 * TANH_D3_MAX,
        },
        source: ConstantSource::Analytic,
    }
}

/// A generator together with constants known to bound it.
#[derive(Clone, Debug)]
pub struct ResidualTanh {
    pub network: Network,
    pub constants: MapConstants,
    pub source: ConstantSource,
}

/// Random strongly invertible generator `G(z) = z + U tanh(W z)`.
///
/// `W` (`width × d`) is rescaled to unit spectral norm and `U` to spectral
/// norm `kappa < 1`, which gives `m >= 1 - kappa`, `M <= 1 + kappa`,
/// `M2 <= kappa max|tanh''|` and `M3 <= kappa max|tanh'''|`. `G(0) = 0`.
pub fn residual_tanh(d: usize, width: usize, kappa: f64, seed: u64) -> ResidualTanh {
    assert!((0.0..1.0).contains(&kappa), "kappa must lie in [0, 1)");
    let stream = NoiseStream::new(seed).fork(0x6E65_7473);
    let mut w = DMatrix::from_fn(width, d, |r, c| stream.normal(0, r as u64, c as u64));
    let mut u = DMatrix::from_fn(d, width, |r, c| stream.normal(1, r as u64, c as u64));
    let wn = spectral_norm(&w);
    let un = spectral_norm(&u);
    w /= wn;
    u *= kappa / un;

    let mut w1 = vec![0.0; (d + width) * d];
    let mut acts = Vec::with_capacity(d + width);
    for i in 0..d {
        w1[i * d + i] = 1.0;
        acts.push(Activation::Identity);
    }
    for r in 0..width {
        for c in 0..d {
            w1[(d + r) * d + c] = w[(r, c)];
        }
        acts.push(Activation::Tanh);
    }
    let cols = d + width;
    let mut w2 = vec![0.0; d * cols];
    for i in 0..d {
        w2[i * cols + i] = 1.0;
        for r in 0..width {
            w2[i * cols + d + r] = u[(i, r)];
        }
    }
    let network = Network::new(vec![
        Layer::new(d, cols, w1, vec![0.0; cols], acts).expect("layer"),
        Layer::uniform(cols, d, w2, vec![0.0; d], Activation::Identity).expect("layer"),
    ])
    .expect("chain");
    ResidualTanh {
        network,
        constants: MapConstants {
            m: 1.0 - kappa,
            big_m: 1.0 + kappa,
            m2: kappa * TANH_D2_MAX,
            m3: kappa * TANH_D3_MAX,
        },
        source: ConstantSource::Analytic,
    }
}

/// Random smooth network with `depth` layers mixing tanh, square and identity
/// units; weights scale as `1/sqrt(fan_in)`.
pub fn random_smooth(
    in_dim: usize,
    out_dim: usize,
    hidden: usize,
    depth: usize,
    seed: u64,
) -> Network {
    assert!(depth >= 1);
    let stream = NoiseStream::new(seed).fork(0x736D_6F6F);
    let mut layers = Vec::with_capacity(depth);
    let mut fan_in = in_dim;
    for k in 0..depth {
        let out = if k + 1 == depth { out_dim } else { hidden };
        let scale = 1.0 / (fan_in as f64).sqrt();
        let weights = (0..out * fan_in)
            .map(|i| scale * stream.normal(3 * k as u64, 0, i as u64))
            .collect();
        let bias = (0..out)
            .map(|i| 0.3 * stream.normal(3 * k as u64 + 1, 0, i as u64))
            .collect();
        let acts = (0..out)
            .map(
                |i| match (stream.uniform(3 * k as u64 + 2, 0, i as u64) * 3.0) as u32 {
                    0 => Activation::Tanh,
                    1 => Activation::Square,
                    _ => Activation::Identity,
                },
            )
            .collect();
        layers.push(Layer::new(fan_in, out, weights, bias, acts).expect("layer"));
        fan_in = out;
    }
    Network::new(layers).expect("chain")
}

fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .singular_values()
        .iter()
        .fold(0.0_f64, |acc, &s| acc.max(s))
}
