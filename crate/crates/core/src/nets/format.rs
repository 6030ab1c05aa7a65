//! JSON network format.
//!
//! ```json
//! {
//!   "format": "latent-langevin/network/v1",
//!   "input_dim": 2,
//!   "output_dim": 2,
//!   "layers": [
//!     { "name": "layer0",
//!       "weights": [[1.0, 0.0], [0.0, 1.0]],
//!       "bias": [0.0, 0.0],
//!       "activation": "tanh" }
//!   ]
//! }
//! ```
//!
//! `weights` holds one row per output unit. `activation` is either a single
//! tag for the whole layer or a list with one tag per unit. Floats are written
//! with shortest round-trip formatting and parsed exactly, so save/load is
//! bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, Layer, Network};
use crate::error::{Error, Result};

pub const NETWORK_FORMAT: &str = "latent-langevin/network/v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub format: String,
    pub input_dim: usize,
    pub output_dim: usize,
    pub layers: Vec<LayerFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerFile {
    pub name: String,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: ActivationSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ActivationSpec {
    Uniform(Activation),
    PerUnit(Vec<Activation>),
}

impl From<&Network> for NetworkFile {
    fn from(net: &Network) -> Self {
        let layers = net
            .layers()
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let acts = l.activations();
                let activation = if acts.iter().all(|a| *a == acts[0]) {
                    ActivationSpec::Uniform(acts[0])
                } else {
                    ActivationSpec::PerUnit(acts.to_vec())
                };
                LayerFile {
                    name: format!("layer{k}"),
                    weights: l.weights().chunks(l.in_dim()).map(|r| r.to_vec()).collect(),
                    bias: l.bias().to_vec(),
                    activation,
                }
            })
            .collect();
        NetworkFile {
            format: NETWORK_FORMAT.to_string(),
            input_dim: net.input_dim(),
            output_dim: net.output_dim(),
            layers,
        }
    }
}

impl TryFrom<NetworkFile> for Network {
    type Error = Error;

    fn try_from(file: NetworkFile) -> Result<Network> {
        if file.format != NETWORK_FORMAT {
            return Err(Error::Format(format!(
                "unknown network format `{}` (expected `{NETWORK_FORMAT}`)",
                file.format
            )));
        }
        let mut layers = Vec::with_capacity(file.layers.len());
        for lf in file.layers {
            let out_dim = lf.weights.len();
            let in_dim = lf.weights.first().map(|r| r.len()).unwrap_or(0);
            if lf.weights.iter().any(|r| r.len() != in_dim) {
                return Err(Error::Format(format!(
                    "layer `{}` has ragged weight rows",
                    lf.name
                )));
            }
            let acts = match lf.activation {
                ActivationSpec::Uniform(a) => vec![a; out_dim],
                ActivationSpec::PerUnit(v) => v,
            };
            let weights = lf.weights.into_iter().flatten().collect();
            layers.push(Layer::new(in_dim, out_dim, weights, lf.bias, acts)?);
        }
        let net = Network::new(layers)?;
        if net.input_dim() != file.input_dim || net.output_dim() != file.output_dim {
            return Err(Error::Format(format!(
                "declared dimensions {}→{} do not match layers {}→{}",
                file.input_dim,
                file.output_dim,
                net.input_dim(),
                net.output_dim()
            )));
        }
        Ok(net)
    }
}

impl Network {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&NetworkFile::from(self)).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{residual_tanh, tanh_residual};
    use proptest::prelude::*;

    #[test]
    fn per_unit_tags_survive() {
        let net = tanh_residual(2).network;
        let text = net.to_json();
        assert!(text.contains("\"identity\"") && text.contains("\"tanh\""));
        assert_eq!(Network::from_json(&text).unwrap(), net);
    }

    #[test]
    fn rejects_unknown_keys_and_formats() {
        let bad = r#"{"format":"latent-langevin/network/v1","input_dim":1,"output_dim":1,
            "layers":[{"name":"l","weights":[[1.0]],"bias":[0.0],"activation":"tanh","extra":1}]}"#;
        assert!(Network::from_json(bad).is_err());
        let wrong = r#"{"format":"other","input_dim":1,"output_dim":1,
            "layers":[{"name":"l","weights":[[1.0]],"bias":[0.0],"activation":"tanh"}]}"#;
        assert!(matches!(Network::from_json(wrong), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), d in 1usize..4, width in 1usize..5, kappa in 0.0f64..0.95) {
            let net = residual_tanh(d, width, kappa, seed).network;
            let back = Network::from_json(&net.to_json()).unwrap();
            for (a, b) in net.layers().iter().zip(back.layers()) {
                prop_assert!(a.weights().iter().zip(b.weights()).all(|(x, y)| x.to_bits() == y.to_bits()));
                prop_assert!(a.bias().iter().zip(b.bias()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            prop_assert_eq!(back, net);
        }
    }
}
