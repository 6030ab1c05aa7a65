//! TOML run configuration. Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use latent_langevin::models::LatentGaussian;
use latent_langevin::nets::{
    estimate_constants, identity, linear, residual_tanh, tanh_residual, ConstantSource,
    MapConstants, Network,
};
use latent_langevin::potential::PosteriorProblem;
use latent_langevin::rng::NoiseStream;
use latent_langevin::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub beta: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub d: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    pub generator: Option<GeneratorSpec>,
    /// Observation. Alternatives: `z_true` (x = G(z_true)) or neither
    /// (x drawn from the model with `seed`).
    pub x: Option<Vec<f64>>,
    pub z_true: Option<Vec<f64>>,
    pub constants: Option<MapConstants>,
    #[serde(default)]
    pub caps: Caps,
    #[serde(default)]
    pub sample: SampleSection,
    #[serde(default)]
    pub compile: CompileSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub lowerbound: LowerboundSection,
}

fn default_epsilon() -> f64 {
    latent_langevin::potential::DEFAULT_EPSILON
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", tag = "builtin")]
pub enum GeneratorSpec {
    Identity,
    TanhResidual,
    ResidualTanh {
        width: usize,
        kappa: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Row-major `d x d` matrix.
    Linear {
        matrix: Vec<Vec<f64>>,
    },
    /// Network file; constants are estimated unless overridden.
    File {
        path: PathBuf,
        #[serde(default = "default_estimate_samples")]
        estimate_samples: usize,
        #[serde(default = "default_estimate_radius")]
        estimate_radius: f64,
    },
}

fn default_estimate_samples() -> usize {
    200
}
fn default_estimate_radius() -> f64 {
    3.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Caps {
    #[serde(default = "default_max_s")]
    pub max_s: u64,
    #[serde(default = "default_max_k")]
    pub max_k: u64,
    #[serde(default = "default_max_stages")]
    pub max_stages: u64,
}

fn default_max_s() -> u64 {
    latent_langevin::invert::DEFAULT_MAX_STEPS
}
fn default_max_k() -> u64 {
    latent_langevin::sampler::DEFAULT_MAX_K
}
fn default_max_stages() -> u64 {
    latent_langevin::compile::DEFAULT_MAX_STAGES
}

impl Default for Caps {
    fn default() -> Self {
        Self {
            max_s: default_max_s(),
            max_k: default_max_k(),
            max_stages: default_max_stages(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    #[serde(default = "default_chains")]
    pub chains: usize,
    pub h: Option<f64>,
    #[serde(default)]
    pub projected: bool,
    /// Write the thinned trajectory of the first chain.
    #[serde(default = "yes")]
    pub trajectory: bool,
    #[serde(default = "default_grid")]
    pub grid_points: usize,
}

fn default_chains() -> usize {
    1000
}
fn default_grid() -> usize {
    2001
}
fn yes() -> bool {
    true
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            chains: default_chains(),
            h: None,
            projected: false,
            trajectory: true,
            grid_points: default_grid(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompileSection {
    /// GD stages; defaults to the steps gradient descent actually took.
    pub s: Option<u64>,
    /// Langevin stages; defaults to the sampler plan's `K`.
    pub k: Option<u64>,
    #[serde(default = "default_self_test")]
    pub self_test_draws: u64,
}

fn default_self_test() -> u64 {
    20
}

impl Default for CompileSection {
    fn default() -> Self {
        CompileSection {
            s: None,
            k: None,
            self_test_draws: default_self_test(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default = "default_experiments")]
    pub experiments: Vec<Experiment>,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_verify_chains")]
    pub chains: usize,
}

fn default_experiments() -> Vec<Experiment> {
    Experiment::ALL.to_vec()
}
fn default_points() -> usize {
    100
}
fn default_verify_chains() -> usize {
    2000
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            experiments: default_experiments(),
            points: default_points(),
            chains: default_verify_chains(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Gradients,
    Convexity,
    Taylor,
    Tv,
    Exit,
    Cir,
    Chi2,
    Mixing,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::Gradients,
        Experiment::Convexity,
        Experiment::Taylor,
        Experiment::Tv,
        Experiment::Exit,
        Experiment::Cir,
        Experiment::Chi2,
        Experiment::Mixing,
    ];
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowerboundSection {
    #[serde(default = "default_rotation")]
    pub rotation: u32,
    #[serde(default = "default_mask")]
    pub mask: u32,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_close_samples")]
    pub closeness_samples: usize,
    #[serde(default = "default_conc_samples")]
    pub concentration_samples: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_m")]
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(default = "default_m")]
    #[serde(rename = "M_prime")]
    pub m_prime: usize,
}

fn default_rotation() -> u32 {
    3
}
fn default_mask() -> u32 {
    0xB6
}
fn default_c() -> f64 {
    1.5
}
fn default_close_samples() -> usize {
    100_000
}
fn default_conc_samples() -> usize {
    1000
}
fn default_trials() -> usize {
    1000
}
fn default_m() -> usize {
    4
}

impl Default for LowerboundSection {
    fn default() -> Self {
        Self {
            rotation: default_rotation(),
            mask: default_mask(),
            c: default_c(),
            closeness_samples: default_close_samples(),
            concentration_samples: default_conc_samples(),
            trials: default_trials(),
            m: default_m(),
            m_prime: default_m(),
        }
    }
}

/// The field named in a TOML error, if any.
fn field_of(message: &str) -> Option<String> {
    for key in ["missing field `", "unknown field `"] {
        if let Some(i) = message.find(key) {
            let rest = &message[i + key.len()..];
            return rest.find('`').map(|j| rest[..j].to_string());
        }
    }
    None
}

/// A configuration failure, carrying the offending field when known.
#[derive(Debug)]
pub struct ConfigError {
    pub field: Option<String>,
    pub message: String,
}

impl RunConfig {
    pub fn parse(text: &str) -> std::result::Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            ConfigError {
                field: field_of(&message),
                message,
            }
        })?;
        cfg.validate().map_err(|e| ConfigError {
            field: match &e {
                Error::InvalidArgument { name, .. } => Some(name.to_string()),
                _ => None,
            },
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> std::result::Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            field: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid(
                "beta",
                format!("must be finite and nonnegative, got {}", self.beta),
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid(
                "epsilon",
                format!("must lie in (0, 1), got {}", self.epsilon),
            ));
        }
        if self.caps.max_s == 0 || self.caps.max_k == 0 || self.caps.max_stages == 0 {
            return Err(Error::invalid("caps", "caps must be positive"));
        }
        if self.x.is_some() && self.z_true.is_some() {
            return Err(Error::invalid("x", "give either x or z_true, not both"));
        }
        if self.sample.chains == 0 {
            return Err(Error::invalid("chains", "need at least one chain"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("serializable");
        let digest = Sha256::digest(canon.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn dim(&self) -> Result<usize> {
        if let Some(d) = self.d {
            return Ok(d);
        }
        if let Some(v) = self.x.as_ref().or(self.z_true.as_ref()) {
            return Ok(v.len());
        }
        match &self.generator {
            Some(GeneratorSpec::Linear { matrix }) => Ok(matrix.len()),
            _ => Err(Error::invalid(
                "d",
                "dimension not given and not implied by x, z_true or the generator",
            )),
        }
    }

    /// The generator network and its constants.
    pub fn generator(&self) -> Result<(Network, MapConstants, ConstantSource)> {
        let spec = self
            .generator
            .as_ref()
            .ok_or_else(|| Error::invalid("generator", "missing [generator] section"))?;
        let d = self.dim()?;
        let (net, c, src) = match spec {
            GeneratorSpec::Identity => (
                identity(d),
                MapConstants {
                    m: 1.0,
                    big_m: 1.0,
                    m2: 0.0,
                    m3: 0.0,
                },
                ConstantSource::Analytic,
            ),
            GeneratorSpec::TanhResidual => {
                let t = tanh_residual(d);
                (t.network, t.constants, t.source)
            }
            GeneratorSpec::ResidualTanh { width, kappa, seed } => {
                if !(*kappa >= 0.0 && *kappa < 1.0) {
                    return Err(Error::invalid("kappa", "must lie in [0, 1)"));
                }
                let t = residual_tanh(d, *width, *kappa, *seed);
                (t.network, t.constants, t.source)
            }
            GeneratorSpec::Linear { matrix } => {
                if matrix.len() != d || matrix.iter().any(|r| r.len() != d) {
                    return Err(Error::invalid("matrix", format!("must be {d} x {d}")));
                }
                let a: Vec<f64> = matrix.iter().flatten().copied().collect();
                let am = nalgebra::DMatrix::from_row_slice(d, d, &a);
                let sv = am.singular_values();
                let c = MapConstants {
                    m: sv.min(),
                    big_m: sv.max(),
                    m2: 0.0,
                    m3: 0.0,
                };
                (linear(d, d, a), c, ConstantSource::Analytic)
            }
            GeneratorSpec::File {
                path,
                estimate_samples,
                estimate_radius,
            } => {
                let net = Network::load(path)?;
                let est = estimate_constants(&net, *estimate_samples, *estimate_radius, self.seed)?;
                (net, est.constants, est.source)
            }
        };
        match self.constants {
            Some(c) => Ok((net, c, ConstantSource::Supplied)),
            None => Ok((net, c, src)),
        }
    }

    /// Builds the posterior problem; `x` comes from the config, from
    /// `G(z_true)`, or from a model draw with `seed`.
    pub fn problem(&self) -> Result<PosteriorProblem> {
        let (net, c, src) = self.generator()?;
        if !(self.beta > 0.0) {
            return Err(Error::invalid("beta", "posterior sampling needs beta > 0"));
        }
        let x = match (&self.x, &self.z_true) {
            (Some(x), _) => x.clone(),
            (None, Some(z)) => net.eval(z)?,
            (None, None) => {
                let model = LatentGaussian::new(net.clone(), self.beta)?;
                model
                    .sample_x(&NoiseStream::new(self.seed).fork(0x78), 0)?
                    .1
            }
        };
        let model = LatentGaussian::new(net, self.beta)?;
        PosteriorProblem::new(model, x, c, src, self.epsilon)
    }
}
