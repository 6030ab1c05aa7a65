//! Latent Gaussian generators and deep latent Gaussian chains.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::nets::{Network, NetworkFile};
use crate::rng::NoiseStream;

/// `z ~ N(0, I)`, `x | z ~ N(G(z), beta^2 I)`.
#[derive(Clone, Debug)]
pub struct LatentGaussian {
    generator: Arc<Network>,
    beta: f64,
}

/// Stream stages used by [`LatentGaussian::sample_x`].
pub const LATENT_STAGE: u64 = 0;
pub const OBSERVATION_STAGE: u64 = 1;

impl LatentGaussian {
    pub fn new(generator: impl Into<Arc<Network>>, beta: f64) -> Result<Self> {
        let generator = generator.into();
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::invalid(
                "beta",
                format!("must be positive, got {beta}"),
            ));
        }
        check_dim(
            "generator (must be square)",
            generator.input_dim(),
            generator.output_dim(),
        )?;
        Ok(Self { generator, beta })
    }

    /// Noise-free variant used for degenerate checks; `sample_x` returns `x = G(z)`.
    pub fn noiseless(generator: impl Into<Arc<Network>>) -> Result<Self> {
        let generator = generator.into();
        check_dim(
            "generator (must be square)",
            generator.input_dim(),
            generator.output_dim(),
        )?;
        Ok(Self {
            generator,
            beta: 0.0,
        })
    }

    pub fn generator(&self) -> &Network {
        &self.generator
    }
    pub fn generator_arc(&self) -> &Arc<Network> {
        &self.generator
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn dim(&self) -> usize {
        self.generator.input_dim()
    }

    /// Draw `(z, x)`; sample `draw` uses stream stages 0 (latent) and 1
    /// (observation noise).
    pub fn sample_x(&self, stream: &NoiseStream, draw: u64) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.dim();
        let z = stream.normal_vec(LATENT_STAGE, draw, d);
        let mut x = self.generator.eval(&z)?;
        if self.beta > 0.0 {
            let xi = stream.normal_vec(OBSERVATION_STAGE, draw, d);
            for (xv, n) in x.iter_mut().zip(xi) {
                *xv += self.beta * n;
            }
        }
        Ok((z, x))
    }
}

/// One stochastic pushforward: `out = G(prev) + sqrt(variance) * xi`, with
/// the noise applied to the first `noise_dim` coordinates only.
///
/// `noise_stage` is the stream key for the stage's noise, so stages can be
/// inserted or reordered without shifting anyone else's draws.
#[derive(Clone, Debug)]
pub struct Stage {
    pub network: Arc<Network>,
    pub variance: f64,
    pub noise_dim: usize,
    pub noise_stage: u64,
}

impl Stage {
    /// Noise on every output coordinate, keyed by `noise_stage`.
    pub fn new(network: impl Into<Arc<Network>>, variance: f64, noise_stage: u64) -> Self {
        let network = network.into();
        let noise_dim = network.output_dim();
        Self {
            network,
            variance,
            noise_dim,
            noise_stage,
        }
    }

    pub fn deterministic(network: impl Into<Arc<Network>>, noise_stage: u64) -> Self {
        Self::new(network, 0.0, noise_stage)
    }

    pub fn with_noise_dim(mut self, noise_dim: usize) -> Self {
        self.noise_dim = noise_dim;
        self
    }
}

#[derive(Clone, Debug)]
pub struct DeepLatentGaussian {
    stages: Vec<Stage>,
}

impl DeepLatentGaussian {
    pub fn new(stages: Vec<Stage>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::invalid(
                "stages",
                "a deep latent Gaussian needs at least one stage",
            ));
        }
        for (k, s) in stages.iter().enumerate() {
            if !(s.variance >= 0.0) || !s.variance.is_finite() {
                return Err(Error::invalid(
                    "variance",
                    format!("stage {k} has variance {}", s.variance),
                ));
            }
            if s.noise_dim > s.network.output_dim() {
                return Err(Error::invalid(
                    "noise_dim",
                    format!(
                        "stage {k} perturbs {} of {} outputs",
                        s.noise_dim,
                        s.network.output_dim()
                    ),
                ));
            }
        }
        for pair in stages.windows(2) {
            check_dim(
                "stage chain",
                pair[0].network.output_dim(),
                pair[1].network.input_dim(),
            )?;
        }
        Ok(Self { stages })
    }

    /// Stages numbered by position, keyed `0, 1, 2, ...`.
    pub fn from_pairs(pairs: Vec<(Network, f64)>) -> Result<Self> {
        Self::new(
            pairs
                .into_iter()
                .enumerate()
                .map(|(k, (n, v))| Stage::new(n, v, k as u64))
                .collect(),
        )
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }
    pub fn input_dim(&self) -> usize {
        self.stages[0].network.input_dim()
    }
    pub fn output_dim(&self) -> usize {
        self.stages.last().expect("non-empty").network.output_dim()
    }

    /// Sum of stage parameter counts.
    pub fn param_count(&self) -> usize {
        self.stages.iter().map(|s| s.network.param_count()).sum()
    }

    /// Ancestral sampling; stage `k` draws `stream.normal_vec(noise_stage_k, draw, noise_dim_k)`.
    pub fn sample(&self, input: &[f64], stream: &NoiseStream, draw: u64) -> Result<Vec<f64>> {
        check_dim("deep latent Gaussian input", self.input_dim(), input.len())?;
        let mut state = input.to_vec();
        let mut tapes: Vec<(*const Network, crate::nets::Tape)> = Vec::new();
        let mut noise = Vec::new();
        for stage in &self.stages {
            let key = Arc::as_ptr(&stage.network);
            let idx = match tapes.iter().position(|(p, _)| *p == key) {
                Some(i) => i,
                None => {
                    tapes.push((key, stage.network.tape()));
                    tapes.len() - 1
                }
            };
            let out = stage.network.forward(&state, &mut tapes[idx].1);
            state.clear();
            state.extend_from_slice(out);
            if stage.variance > 0.0 {
                noise.resize(stage.noise_dim, 0.0);
                stream.fill_normal(stage.noise_stage, draw, &mut noise);
                let s = stage.variance.sqrt();
                for (v, n) in state.iter_mut().zip(&noise) {
                    *v += s * n;
                }
            }
        }
        Ok(state)
    }

    pub fn to_file(&self) -> DlgFile {
        let mut networks: Vec<Arc<Network>> = Vec::new();
        let stages = self
            .stages
            .iter()
            .map(|s| {
                let idx = match networks.iter().position(|n| Arc::ptr_eq(n, &s.network)) {
                    Some(i) => i,
                    None => {
                        networks.push(s.network.clone());
                        networks.len() - 1
                    }
                };
                StageFile {
                    network: idx,
                    variance: s.variance,
                    noise_dim: s.noise_dim,
                    noise_stage: s.noise_stage,
                }
            })
            .collect();
        DlgFile {
            format: DLG_FORMAT.to_string(),
            networks: networks
                .iter()
                .map(|n| NetworkFile::from(n.as_ref()))
                .collect(),
            stages,
        }
    }

    pub fn from_file(file: DlgFile) -> Result<Self> {
        if file.format != DLG_FORMAT {
            return Err(Error::Format(format!(
                "unknown encoder format `{}`",
                file.format
            )));
        }
        let nets: Vec<Arc<Network>> = file
            .networks
            .into_iter()
            .map(|f| Network::try_from(f).map(Arc::new))
            .collect::<Result<_>>()?;
        let stages = file
            .stages
            .into_iter()
            .map(|s| {
                let network = nets.get(s.network).cloned().ok_or_else(|| {
                    Error::Format(format!("stage references missing network {}", s.network))
                })?;
                Ok(Stage {
                    network,
                    variance: s.variance,
                    noise_dim: s.noise_dim,
                    noise_stage: s.noise_stage,
                })
            })
            .collect::<Result<_>>()?;
        Self::new(stages)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.to_file())?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: DlgFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_file(file)
    }
}

pub const DLG_FORMAT: &str = "latent-langevin/deep-latent-gaussian/v1";

/// Serialized deep latent Gaussian: distinct networks stored once, stages
/// refer to them by index.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DlgFile {
    pub format: String,
    pub networks: Vec<NetworkFile>,
    pub stages: Vec<StageFile>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageFile {
    pub network: usize,
    pub variance: f64,
    pub noise_dim: usize,
    pub noise_stage: u64,
}

/// Metadata written next to a sample CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleSidecar {
    pub kind: String,
    pub dim: usize,
    pub count: usize,
    pub seed: u64,
    pub beta: Option<f64>,
    pub columns: Vec<String>,
}

/// Writes one row per sample, with a header line.
pub fn write_csv(path: impl AsRef<Path>, columns: &[String], rows: &[Vec<f64>]) -> Result<()> {
    use std::fmt::Write as _;
    let mut out = columns.join(",");
    out.push('\n');
    for r in rows {
        for (k, v) in r.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            write!(out, "{v:?}").expect("string write");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Writes `samples.csv`-style data plus a `.json` sidecar next to it.
pub fn write_samples(
    path: impl AsRef<Path>,
    prefix: &str,
    rows: &[Vec<f64>],
    sidecar_kind: &str,
    seed: u64,
    beta: Option<f64>,
) -> Result<()> {
    let path = path.as_ref();
    let dim = rows.first().map(|r| r.len()).unwrap_or(0);
    let columns: Vec<String> = (0..dim).map(|i| format!("{prefix}{i}")).collect();
    write_csv(path, &columns, rows)?;
    let sidecar = SampleSidecar {
        kind: sidecar_kind.to_string(),
        dim,
        count: rows.len(),
        seed,
        beta,
        columns,
    };
    std::fs::write(
        path.with_extension("json"),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{identity, linear};

    fn mean_var(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (
            m,
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0),
        )
    }

    #[test]
    fn zero_noise_identity_returns_latent() {
        let model = LatentGaussian::noiseless(identity(3)).unwrap();
        let (z, x) = model.sample_x(&NoiseStream::new(1), 4).unwrap();
        assert_eq!(z, x);
        assert!(LatentGaussian::new(identity(2), 0.0).is_err());
    }

    #[test]
    fn zero_map_with_unit_noise_is_standard_normal() {
        let d = 3;
        let model = LatentGaussian::new(linear(d, d, vec![0.0; d * d]), 1.0).unwrap();
        let s = NoiseStream::new(2);
        let n = 100_000;
        let mut sum = vec![0.0; d];
        for k in 0..n {
            let (_, x) = model.sample_x(&s, k).unwrap();
            sum.iter_mut().zip(&x).for_each(|(a, b)| *a += b);
        }
        let tol = 3.0 * 10f64.powf(-2.5) * (d as f64).sqrt();
        assert!(sum.iter().all(|v| (v / n as f64).abs() < tol), "{sum:?}");
    }

    #[test]
    fn scaled_latent_variance() {
        // x = 2z + 0.5 xi has variance 4 + 0.25.
        let model = LatentGaussian::new(linear(1, 1, vec![2.0]), 0.5).unwrap();
        let s = NoiseStream::new(3);
        let xs: Vec<f64> = (0..100_000)
            .map(|k| model.sample_x(&s, k).unwrap().1[0])
            .collect();
        let (_, var) = mean_var(&xs);
        assert!((var / 4.25 - 1.0).abs() < 0.05, "var = {var}");
    }

    #[test]
    fn deterministic_chain_composes() {
        let dlg = DeepLatentGaussian::from_pairs(vec![
            (linear(2, 2, vec![1.0, 1.0, 0.0, 1.0]), 0.0),
            (linear(2, 1, vec![3.0, -1.0]), 0.0),
        ])
        .unwrap();
        let s = NoiseStream::new(0);
        assert_eq!(
            dlg.sample(&[1.0, 2.0], &s, 0).unwrap(),
            vec![3.0 * 3.0 - 2.0]
        );
        assert_eq!(
            dlg.sample(&[1.0, 2.0], &s, 9).unwrap(),
            dlg.sample(&[1.0, 2.0], &s, 0).unwrap()
        );
    }

    #[test]
    fn single_unit_variance_stage_is_standard_normal() {
        let dlg = DeepLatentGaussian::from_pairs(vec![(identity(2), 1.0)]).unwrap();
        let s = NoiseStream::new(4);
        let xs: Vec<f64> = (0..50_000)
            .map(|k| dlg.sample(&[0.0, 0.0], &s, k).unwrap()[1])
            .collect();
        let (m, v) = mean_var(&xs);
        assert!(m.abs() < 0.02 && (v - 1.0).abs() < 0.03);
    }

    #[test]
    fn two_stage_gaussian_composition() {
        // out = 3 (2 u + e1) + e2, var = 9 * 0.1 + 0.2 = 1.1, mean = 6 u.
        let dlg = DeepLatentGaussian::from_pairs(vec![
            (linear(1, 1, vec![2.0]), 0.1),
            (linear(1, 1, vec![3.0]), 0.2),
        ])
        .unwrap();
        let s = NoiseStream::new(5);
        let xs: Vec<f64> = (0..100_000)
            .map(|k| dlg.sample(&[0.5], &s, k).unwrap()[0])
            .collect();
        let (m, v) = mean_var(&xs);
        assert!(
            (m / 3.0 - 1.0).abs() < 0.05 && (v / 1.1 - 1.0).abs() < 0.05,
            "{m} {v}"
        );
    }

    #[test]
    fn replay_is_bitwise() {
        let dlg =
            DeepLatentGaussian::from_pairs(vec![(identity(2), 0.3), (identity(2), 0.7)]).unwrap();
        let s = NoiseStream::new(6);
        let a = dlg.sample(&[0.1, 0.2], &s, 11).unwrap();
        let b = dlg.sample(&[0.1, 0.2], &s, 11).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn chain_dimension_violation() {
        let err = DeepLatentGaussian::from_pairs(vec![(identity(2), 0.0), (identity(3), 0.0)])
            .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn dlg_file_round_trip_shares_networks() {
        let net = Arc::new(identity(2));
        let dlg = DeepLatentGaussian::new(vec![
            Stage::new(net.clone(), 0.0, 0),
            Stage::new(net, 0.5, 7).with_noise_dim(1),
        ])
        .unwrap();
        let file = dlg.to_file();
        assert_eq!(file.networks.len(), 1);
        let back = DeepLatentGaussian::from_file(file).unwrap();
        let s = NoiseStream::new(1);
        assert_eq!(
            back.sample(&[1.0, 1.0], &s, 0).unwrap(),
            dlg.sample(&[1.0, 1.0], &s, 0).unwrap()
        );
        assert_eq!(back.sample(&[1.0, 1.0], &s, 0).unwrap()[1], 1.0);
    }
}
