//! Map constants `m, M, M2, M3` and their sampled estimates.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::Network;
use crate::error::{Error, Result};
use crate::rng::NoiseStream;

/// Lower bi-Lipschitz constant `m`, Lipschitz constant `M`, and operator
/// norm bounds `M2`, `M3` on the second and third derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapConstants {
    pub m: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
    #[serde(rename = "M2")]
    pub m2: f64,
    #[serde(rename = "M3")]
    pub m3: f64,
}

impl MapConstants {
    pub fn validate(&self) -> Result<()> {
        let all = [self.m, self.big_m, self.m2, self.m3];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(
                "constants",
                "m, M, M2, M3 must be finite and nonnegative",
            ));
        }
        if self.m <= 0.0 {
            return Err(Error::NotInvertible(format!(
                "m = {} must be positive",
                self.m
            )));
        }
        if self.m > self.big_m {
            return Err(Error::invalid(
                "constants",
                format!("m = {} exceeds M = {}", self.m, self.big_m),
            ));
        }
        Ok(())
    }
}

/// Where a set of constants came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantSource {
    /// Provided by the user.
    Supplied,
    /// Proven bounds for a builtin family.
    Analytic,
    /// Sampled estimates; not guaranteed bounds.
    Estimated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimate {
    pub constants: MapConstants,
    pub source: ConstantSource,
    pub sample_count: usize,
    pub radius: f64,
    /// Set when a sampled pair or Jacobian is numerically singular.
    pub non_invertible_warning: bool,
}

const HESS_STEP: f64 = 1e-4;
const THIRD_STEP: f64 = 1e-3;
const DIRECTIONS: u64 = 8;

/// Sampled estimates of the map constants over the ball of `radius` around 0.
///
/// `m` and `M` are the extreme ratios `|G(z1) - G(z2)| / |z1 - z2|` over
/// consecutive sample pairs, widened by the extreme singular values of the
/// Jacobian at each sample. `M2` maximizes the second-derivative tensor over
/// directions by alternating eigen-decompositions; `M3` maximizes the
/// directional third derivative over random directions. Samples form a
/// prefix-stable sequence: adding samples can only lower `m` and raise the rest.
pub fn estimate_constants(
    net: &Network,
    sample_count: usize,
    radius: f64,
    seed: u64,
) -> Result<ConstantEstimate> {
    net.require_smooth()?;
    if sample_count < 2 {
        return Err(Error::invalid("sample_count", "need at least 2 samples"));
    }
    if !(radius > 0.0) {
        return Err(Error::invalid("radius", "must be positive"));
    }
    let d = net.input_dim();
    let stream = NoiseStream::new(seed).fork(0x636F_6E73);
    let points: Vec<Vec<f64>> = (0..sample_count as u64)
        .map(|k| stream.ball(0, k, d, radius))
        .collect();
    let images: Vec<Vec<f64>> = points.iter().map(|z| net.eval(z)).collect::<Result<_>>()?;

    let mut m_lo = f64::INFINITY;
    let mut m_hi = 0.0_f64;
    for k in 0..sample_count - 1 {
        let dz = dist(&points[k], &points[k + 1]);
        if dz == 0.0 {
            continue;
        }
        let ratio = dist(&images[k], &images[k + 1]) / dz;
        m_lo = m_lo.min(ratio);
        m_hi = m_hi.max(ratio);
    }

    let mut m2 = 0.0_f64;
    let mut m3 = 0.0_f64;
    for (k, z) in points.iter().enumerate() {
        let jac = net.jacobian(z)?;
        let (lo, hi) = singular_range(&jac, net.output_dim(), d);
        m_lo = m_lo.min(lo);
        m_hi = m_hi.max(hi);

        let hess = hessian_tensor(net, z)?;
        let (norm2, best_dir) = bilinear_norm(&hess, net.output_dim(), d, &stream, k as u64);
        m2 = m2.max(norm2);

        let mut dirs: Vec<Vec<f64>> = (0..DIRECTIONS)
            .map(|j| unit(stream.normal_vec(2, k as u64 * DIRECTIONS + j, d)))
            .collect();
        dirs.push(best_dir);
        for u in dirs {
            m3 = m3.max(norm(&third_directional(net, z, &u)?));
        }
    }

    let non_invertible_warning = !(m_lo > 1e-6 * m_hi.max(1.0));
    Ok(ConstantEstimate {
        constants: MapConstants {
            m: m_lo.max(0.0),
            big_m: m_hi,
            m2,
            m3,
        },
        source: ConstantSource::Estimated,
        sample_count,
        radius,
        non_invertible_warning,
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|c| *c /= n);
    }
    v
}

pub(crate) fn singular_range(jac: &[f64], rows: usize, cols: usize) -> (f64, f64) {
    let j = DMatrix::from_row_slice(rows, cols, jac);
    let s = j.singular_values();
    let lo = if rows >= cols {
        s.iter().fold(f64::INFINITY, |a, &b| a.min(b))
    } else {
        0.0
    };
    let hi = s.iter().fold(0.0_f64, |a, &b| a.max(b));
    (lo, hi)
}

/// `H[i][j][k] = d^2 G_i / dz_j dz_k` by central differences of the exact
/// Jacobian, symmetrized in `(j, k)`. Flattened as `i * d * d + j * d + k`.
pub(crate) fn hessian_tensor(net: &Network, z: &[f64]) -> Result<Vec<f64>> {
    let d = net.input_dim();
    let o = net.output_dim();
    let mut h = vec![0.0; o * d * d];
    let mut zp = z.to_vec();
    for k in 0..d {
        zp[k] = z[k] + HESS_STEP;
        let jp = net.jacobian(&zp)?;
        zp[k] = z[k] - HESS_STEP;
        let jm = net.jacobian(&zp)?;
        zp[k] = z[k];
        for i in 0..o {
            for j in 0..d {
                h[i * d * d + j * d + k] = (jp[i * d + j] - jm[i * d + j]) / (2.0 * HESS_STEP);
            }
        }
    }
    for i in 0..o {
        for j in 0..d {
            for k in j + 1..d {
                let a = h[i * d * d + j * d + k];
                let b = h[i * d * d + k * d + j];
                let s = 0.5 * (a + b);
                h[i * d * d + j * d + k] = s;
                h[i * d * d + k * d + j] = s;
            }
        }
    }
    Ok(h)
}

/// `sup_{|u| = 1} |B(u, u)|` for the symmetric vector-valued bilinear map `B`
/// with slices `H_i`; returns the value and the maximizing direction.
fn bilinear_norm(h: &[f64], o: usize, d: usize, stream: &NoiseStream, key: u64) -> (f64, Vec<f64>) {
    let slice = |i: usize| DMatrix::from_row_slice(d, d, &h[i * d * d..(i + 1) * d * d]);
    let apply = |u: &[f64]| -> Vec<f64> {
        (0..o)
            .map(|i| {
                let s = &h[i * d * d..(i + 1) * d * d];
                let mut acc = 0.0;
                for j in 0..d {
                    for k in 0..d {
                        acc += s[j * d + k] * u[j] * u[k];
                    }
                }
                acc
            })
            .collect()
    };
    if h.iter().all(|v| *v == 0.0) {
        return (0.0, unit(vec![1.0; d]));
    }
    let mut best = (0.0, unit(vec![1.0; d]));
    for restart in 0..3 {
        let mut u = unit(stream.normal_vec(1, key * 3 + restart, d));
        for _ in 0..20 {
            let v = apply(&u);
            let n = norm(&v);
            if n == 0.0 {
                break;
            }
            let mut a = DMatrix::zeros(d, d);
            for (i, vi) in v.iter().enumerate() {
                a += slice(i) * (vi / n);
            }
            let eig = SymmetricEigen::new(a);
            let (idx, _) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .fold(
                    (0, -1.0),
                    |acc, (i, &l)| if l.abs() > acc.1 { (i, l.abs()) } else { acc },
                );
            u = eig.eigenvectors.column(idx).iter().copied().collect();
        }
        let val = norm(&apply(&u));
        if val > best.0 {
            best = (val, u);
        }
    }
    best
}

/// `D^3 G(z)[u, u, u]` from second differences of `J(z + t u) u`.
fn third_directional(net: &Network, z: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    let d = net.input_dim();
    let o = net.output_dim();
    let jv = |t: f64| -> Result<Vec<f64>> {
        let p: Vec<f64> = z.iter().zip(u).map(|(a, b)| a + t * b).collect();
        let j = net.jacobian(&p)?;
        Ok((0..o)
            .map(|i| (0..d).map(|k| j[i * d + k] * u[k]).sum())
            .collect())
    };
    let (p, c, m) = (jv(THIRD_STEP)?, jv(0.0)?, jv(-THIRD_STEP)?);
    Ok((0..o)
        .map(|i| (p[i] - 2.0 * c[i] + m[i]) / (THIRD_STEP * THIRD_STEP))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{identity, linear, scalar_tanh, tanh_residual};

    #[test]
    fn linear_map_two_identity() {
        let net = linear(2, 2, vec![2.0, 0.0, 0.0, 2.0]);
        let est = estimate_constants(&net, 50, 3.0, 1).unwrap();
        let c = est.constants;
        assert!(
            (c.m - 2.0).abs() < 1e-9 && (c.big_m - 2.0).abs() < 1e-9,
            "{c:?}"
        );
        assert!(c.m2.abs() < 1e-6 && c.m3.abs() < 1e-6);
        assert_eq!(est.source, ConstantSource::Estimated);
        assert!(!est.non_invertible_warning);
    }

    #[test]
    fn scalar_tanh_residual_constants_lie_in_derivative_range() {
        let net = tanh_residual(1).network;
        let c = estimate_constants(&net, 200, 3.0, 2).unwrap().constants;
        assert!(c.m >= 1.0 - 1e-9 && c.m <= 1.5, "{c:?}");
        assert!(c.big_m >= c.m && c.big_m <= 1.5 + 1e-9, "{c:?}");
        // max |G''| = 0.5 * 4/(3 sqrt 3), max |G'''| = 1; estimates stay below.
        assert!(c.m2 <= 0.385 + 1e-4 && c.m2 > 0.3, "{c:?}");
        assert!(c.m3 <= 1.0 + 1e-3 && c.m3 > 0.5, "{c:?}");
    }

    #[test]
    fn saturated_tanh_flags_non_invertibility() {
        let est = estimate_constants(&scalar_tanh(1.0), 200, 10.0, 3).unwrap();
        assert!(est.constants.m < 0.01);
        assert!(est.non_invertible_warning);
    }

    #[test]
    fn more_samples_only_widen_the_range() {
        let net = crate::nets::residual_tanh(2, 3, 0.5, 4).network;
        let mut prev: Option<MapConstants> = None;
        for n in [2, 5, 20, 60] {
            let c = estimate_constants(&net, n, 2.0, 9).unwrap().constants;
            if let Some(p) = prev {
                assert!(c.m <= p.m && c.big_m >= p.big_m && c.m2 >= p.m2 && c.m3 >= p.m3);
            }
            prev = Some(c);
        }
    }

    #[test]
    fn identity_needs_two_samples() {
        assert!(estimate_constants(&identity(2), 1, 1.0, 0).is_err());
    }
}
