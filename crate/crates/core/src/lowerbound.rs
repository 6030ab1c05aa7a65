//! Toy non-invertible generator `G(z) = C(sgn z)` and retry-based inversion.
//!
//! `C` is a bit rotation composed with an XOR mask, acting on sign patterns
//! `b in {-1, +1}^d` encoded as `d`-bit integers (bit `i` set when `b_i = +1`).
//! These permutations are trivially invertible; they stand in for one-way
//! permutations only to exercise the mechanics of the reduction. Nothing here
//! is cryptographically hard.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::LatentGaussian;
use crate::nets::{Activation, Layer, Network};
use crate::rng::NoiseStream;

pub const MAX_ENUMERATION_DIM: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignGenerator {
    d: usize,
    rotation: u32,
    mask: u32,
    beta: f64,
}

impl SignGenerator {
    pub fn new(d: usize, rotation: u32, mask: u32, beta: f64) -> Result<Self> {
        if d == 0 || d > MAX_ENUMERATION_DIM {
            return Err(Error::EnumerationCap {
                d,
                cap: MAX_ENUMERATION_DIM,
            });
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::invalid(
                "beta",
                format!("must be nonnegative, got {beta}"),
            ));
        }
        let gen = Self {
            d,
            rotation: rotation % d as u32,
            mask: mask & Self::full(d),
            beta,
        };
        gen.audit()?;
        Ok(gen)
    }

    fn full(d: usize) -> u32 {
        (1u32 << d) - 1
    }

    pub fn dim(&self) -> usize {
        self.d
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `beta sqrt(d) < 0.1`.
    pub fn small_noise(&self) -> bool {
        self.beta * (self.d as f64).sqrt() < 0.1
    }

    pub fn all_ones(&self) -> u32 {
        Self::full(self.d)
    }

    pub fn encode(&self, bits: u32) -> u32 {
        let d = self.d as u32;
        let full = Self::full(self.d);
        let b = bits & full;
        let r = self.rotation;
        let rot = if r == 0 {
            b
        } else {
            ((b << r) | (b >> (d - r))) & full
        };
        rot ^ self.mask
    }

    pub fn decode(&self, code: u32) -> u32 {
        let d = self.d as u32;
        let full = Self::full(self.d);
        let b = (code ^ self.mask) & full;
        let r = self.rotation;
        if r == 0 {
            b
        } else {
            ((b >> r) | (b << (d - r))) & full
        }
    }

    /// Checks that `encode` is a bijection with inverse `decode`.
    pub fn audit(&self) -> Result<()> {
        let n = 1usize << self.d;
        let mut seen = vec![false; n];
        for b in 0..n as u32 {
            let c = self.encode(b) as usize;
            if seen[c] || self.decode(c as u32) != b {
                return Err(Error::InvalidNetwork(format!(
                    "code is not a bijection at pattern {b}"
                )));
            }
            seen[c] = true;
        }
        Ok(())
    }

    pub fn pattern_of(&self, z: &[f64]) -> u32 {
        z.iter().take(self.d).enumerate().fold(
            0u32,
            |acc, (i, v)| if *v > 0.0 { acc | (1 << i) } else { acc },
        )
    }

    pub fn signs(&self, bits: u32) -> Vec<f64> {
        (0..self.d)
            .map(|i| if bits >> i & 1 == 1 { 1.0 } else { -1.0 })
            .collect()
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        self.signs(self.encode(self.pattern_of(z)))
    }

    /// `G` as a network: a sign layer followed by the signed permutation
    /// matrix that realizes the rotation and mask on `+-1` vectors.
    pub fn network(&self) -> Network {
        let d = self.d;
        let mut ident = vec![0.0; d * d];
        for i in 0..d {
            ident[i * d + i] = 1.0;
        }
        let mut perm = vec![0.0; d * d];
        for i in 0..d {
            let j = (i + self.rotation as usize) % d;
            let flip = if self.mask >> j & 1 == 1 { -1.0 } else { 1.0 };
            perm[j * d + i] = flip;
        }
        Network::new(vec![
            Layer::uniform(d, d, ident, vec![0.0; d], Activation::Sign).expect("layer"),
            Layer::uniform(d, d, perm, vec![0.0; d], Activation::Identity).expect("layer"),
        ])
        .expect("chain")
    }

    pub fn model(&self) -> LatentGaussian {
        if self.beta > 0.0 {
            LatentGaussian::new(self.network(), self.beta).expect("square network")
        } else {
            LatentGaussian::noiseless(self.network()).expect("square network")
        }
    }
}

fn sq_dist_to_code(x: &[f64], code: u32) -> f64 {
    x.iter()
        .enumerate()
        .map(|(i, v)| {
            let s = if code >> i & 1 == 1 { 1.0 } else { -1.0 };
            (v - s) * (v - s)
        })
        .sum()
}

/// `p(sgn z = b | x)` for every pattern `b`, indexed by its bits.
pub fn exact_orthant_posterior(gen: &SignGenerator, x: &[f64]) -> Result<Vec<f64>> {
    if gen.d > MAX_ENUMERATION_DIM {
        return Err(Error::EnumerationCap {
            d: gen.d,
            cap: MAX_ENUMERATION_DIM,
        });
    }
    crate::error::check_dim("observation", gen.d, x.len())?;
    if !(gen.beta > 0.0) {
        return Err(Error::invalid(
            "beta",
            "the orthant posterior needs beta > 0",
        ));
    }
    let n = 1usize << gen.d;
    let two_b2 = 2.0 * gen.beta * gen.beta;
    let logw: Vec<f64> = (0..n as u32)
        .map(|b| -sq_dist_to_code(x, gen.encode(b)) / two_b2)
        .collect();
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Closeness {
    pub c: f64,
    pub samples: usize,
    pub threshold: f64,
    pub exceed_fraction: f64,
    /// `exp(-c^2 d)`.
    pub bound: f64,
}

/// Fraction of samples with `|x - G(z)| > 6 c beta sqrt(d)`.
pub fn hypercube_closeness_test(
    gen: &SignGenerator,
    samples: usize,
    c: f64,
    stream: &NoiseStream,
) -> Result<Closeness> {
    if !(c > 1.0) {
        return Err(Error::invalid("c", format!("must exceed 1, got {c}")));
    }
    let model = gen.model();
    let threshold = 6.0 * c * gen.beta * (gen.d as f64).sqrt();
    let mut exceed = 0usize;
    for k in 0..samples as u64 {
        let (z, x) = model.sample_x(stream, k)?;
        let g = gen.apply(&z);
        if crate::potential::dist(&x, &g) > threshold {
            exceed += 1;
        }
    }
    Ok(Closeness {
        c,
        samples,
        threshold,
        exceed_fraction: exceed as f64 / samples.max(1) as f64,
        bound: (-c * c * gen.d as f64).exp(),
    })
}

/// An encoder `z | x` used by [`retry_invert`].
pub trait OrthantSampler {
    fn sample(&self, x: &[f64], stream: &NoiseStream, draw: u64) -> Result<Vec<f64>>;
}

/// Draws the orthant from the exact posterior, then `z = b * |N(0, I)|`.
pub struct ExactPosteriorSampler<'a>(pub &'a SignGenerator);

impl OrthantSampler for ExactPosteriorSampler<'_> {
    fn sample(&self, x: &[f64], stream: &NoiseStream, draw: u64) -> Result<Vec<f64>> {
        let gen = self.0;
        let post = exact_orthant_posterior(gen, x)?;
        let u = stream.uniform(0, draw, 0);
        let mut acc = 0.0;
        let mut pick = post.len() - 1;
        for (b, p) in post.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = b;
                break;
            }
        }
        let mag = stream.normal_vec(1, draw, gen.d);
        Ok(gen
            .signs(pick as u32)
            .into_iter()
            .zip(mag)
            .map(|(s, m)| s * m.abs())
            .collect())
    }
}

/// Ignores `x`: a uniformly random orthant.
pub struct UniformOrthantSampler(pub usize);

impl OrthantSampler for UniformOrthantSampler {
    fn sample(&self, _x: &[f64], stream: &NoiseStream, draw: u64) -> Result<Vec<f64>> {
        Ok(stream.normal_vec(0, draw, self.0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetryOutcome {
    /// Recovered pattern as `+-1` values, or all ones on failure.
    pub pattern: Vec<f64>,
    pub found: bool,
    pub attempts: usize,
}

/// Tries `M` noisy copies `x = x_tilde + beta xi`, each with `M'` encoder
/// samples, and returns the first `sgn(z)` with `C(sgn z) = x_tilde`.
///
/// Noise copy `j` uses `stream.normal_vec(0, j, d)`; encoder sample `(j, j')`
/// uses draw `j M' + j'` of `stream.fork(1)`.
pub fn retry_invert(
    gen: &SignGenerator,
    encoder: &dyn OrthantSampler,
    x_tilde: u32,
    m: usize,
    m_prime: usize,
    stream: &NoiseStream,
) -> Result<RetryOutcome> {
    let target = gen.signs(x_tilde);
    let enc_stream = stream.fork(1);
    let mut attempts = 0;
    for j in 0..m {
        let xi = stream.normal_vec(0, j as u64, gen.d);
        let x: Vec<f64> = target
            .iter()
            .zip(&xi)
            .map(|(t, n)| t + gen.beta * n)
            .collect();
        for jp in 0..m_prime {
            attempts += 1;
            let z = encoder.sample(&x, &enc_stream, (j * m_prime + jp) as u64)?;
            let b = gen.pattern_of(&z);
            if gen.encode(b) == x_tilde & gen.all_ones() {
                return Ok(RetryOutcome {
                    pattern: gen.signs(b),
                    found: true,
                    attempts,
                });
            }
        }
    }
    Ok(RetryOutcome {
        pattern: gen.signs(gen.all_ones()),
        found: false,
        attempts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Concentration {
    pub samples: usize,
    /// `1 - exp(-2d)`.
    pub threshold: f64,
    pub fraction_above: f64,
    pub min_mass: f64,
    pub mean_mass: f64,
}

/// Posterior mass on the true pre-image `sgn z` for `samples` draws of `x`.
pub fn posterior_concentration(
    gen: &SignGenerator,
    samples: usize,
    stream: &NoiseStream,
) -> Result<Concentration> {
    let model = gen.model();
    let threshold = 1.0 - (-2.0 * gen.d as f64).exp();
    let mut above = 0usize;
    let mut min_mass = f64::INFINITY;
    let mut sum = 0.0;
    for k in 0..samples as u64 {
        let (z, x) = model.sample_x(stream, k)?;
        let post = exact_orthant_posterior(gen, &x)?;
        let mass = post[gen.pattern_of(&z) as usize];
        if mass >= threshold {
            above += 1;
        }
        min_mass = min_mass.min(mass);
        sum += mass;
    }
    Ok(Concentration {
        samples,
        threshold,
        fraction_above: above as f64 / samples.max(1) as f64,
        min_mass,
        mean_mass: sum / samples.max(1) as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetryStudy {
    pub trials: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "M_prime")]
    pub m_prime: usize,
    pub exact_success_rate: f64,
    pub uniform_success_rate: f64,
    /// `1 - (1 - 2^-d)^(M M')`.
    pub uniform_closed_form: f64,
}

/// Success rates of [`retry_invert`] with the exact and uniform encoders on
/// uniformly random targets; trial `t` uses `stream.fork(t)`.
pub fn retry_study(
    gen: &SignGenerator,
    trials: usize,
    m: usize,
    m_prime: usize,
    stream: &NoiseStream,
) -> Result<RetryStudy> {
    let exact = ExactPosteriorSampler(gen);
    let uniform = UniformOrthantSampler(gen.d);
    let targets = stream.fork(0x7461_7267);
    let mut ok_exact = 0usize;
    let mut ok_uniform = 0usize;
    for t in 0..trials as u64 {
        let x_tilde = (targets.uniform(0, t, 0) * (1u64 << gen.d) as f64) as u32 & gen.all_ones();
        let s = stream.fork(2 * t);
        if retry_invert(gen, &exact, x_tilde, m, m_prime, &s)?.found {
            ok_exact += 1;
        }
        let s = stream.fork(2 * t + 1);
        if retry_invert(gen, &uniform, x_tilde, m, m_prime, &s)?.found {
            ok_uniform += 1;
        }
    }
    let n = trials.max(1) as f64;
    Ok(RetryStudy {
        trials,
        m,
        m_prime,
        exact_success_rate: ok_exact as f64 / n,
        uniform_success_rate: ok_uniform as f64 / n,
        uniform_closed_form: 1.0 - (1.0 - 0.5f64.powi(gen.d as i32)).powi((m * m_prime) as i32),
    })
}
