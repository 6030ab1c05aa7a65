//! Feedforward networks: representation, evaluation and exact reverse-mode
//! differentiation.
//!
//! A [`Network`] is a chain of dense layers. Each unit of a layer carries its
//! own activation tag, which lets compiled gadgets carry values through a
//! layer with `identity` while neighbouring units apply `tanh` or `square`.

mod builtins;
mod constants;
mod format;
pub mod graph;

pub use builtins::{
    identity, linear, random_smooth, residual_tanh, scalar_tanh, tanh_residual, ResidualTanh,
};
pub(crate) use constants::hessian_tensor;
pub use constants::{estimate_constants, ConstantEstimate, ConstantSource, MapConstants};
pub use format::NetworkFile;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Unit activation.
///
/// `Min2` and `Max2` compare their pre-activation with zero, `min(u, 0)` and
/// `max(u, 0)`; binary minima follow from affine pre/post processing
/// (`min(a, b) = b + min(a - b, 0)`). `Sign`, `Min2` and `Max2` are
/// evaluation-only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Square,
    Identity,
    Sign,
    Min2,
    Max2,
}

impl Activation {
    pub const ALL: [Activation; 6] = [
        Activation::Tanh,
        Activation::Square,
        Activation::Identity,
        Activation::Sign,
        Activation::Min2,
        Activation::Max2,
    ];

    pub fn is_smooth(self) -> bool {
        matches!(
            self,
            Activation::Tanh | Activation::Square | Activation::Identity
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Square => "square",
            Activation::Identity => "identity",
            Activation::Sign => "sign",
            Activation::Min2 => "min2",
            Activation::Max2 => "max2",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    #[inline(always)]
    pub fn apply(self, u: f64) -> f64 {
        match self {
            Activation::Tanh => u.tanh(),
            Activation::Square => u * u,
            Activation::Identity => u,
            Activation::Sign => {
                if u > 0.0 {
                    1.0
                } else if u < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Activation::Min2 => u.min(0.0),
            Activation::Max2 => u.max(0.0),
        }
    }

    /// Derivative given the pre-activation `u` and the output `a`.
    /// tanh' is written as `1 - square(tanh u)`.
    #[inline(always)]
    fn derivative(self, u: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Square => 2.0 * u,
            Activation::Identity => 1.0,
            _ => f64::NAN,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Dense layer `a = act(W u + b)` with a compressed row view for evaluation.
#[derive(Clone, Debug)]
pub struct Layer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activations: Vec<Activation>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

// Equality on the defining data; the sparse view is derived.
impl PartialEq for Layer {
    fn eq(&self, other: &Self) -> bool {
        self.in_dim == other.in_dim
            && self.out_dim == other.out_dim
            && self.weights == other.weights
            && self.bias == other.bias
            && self.activations == other.activations
    }
}

impl Layer {
    /// `weights` is row-major, `out_dim × in_dim`.
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activations: Vec<Activation>,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidNetwork(
                "layer dimensions must be positive".into(),
            ));
        }
        check_dim("layer weights", in_dim * out_dim, weights.len())?;
        check_dim("layer bias", out_dim, bias.len())?;
        check_dim("layer activations", out_dim, activations.len())?;
        if weights.iter().chain(bias.iter()).any(|w| !w.is_finite()) {
            return Err(Error::InvalidNetwork("non-finite weight".into()));
        }
        let mut row_ptr = Vec::with_capacity(out_dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for j in 0..out_dim {
            for i in 0..in_dim {
                let w = weights[j * in_dim + i];
                if w != 0.0 {
                    cols.push(i);
                    vals.push(w);
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
            activations,
            row_ptr,
            cols,
            vals,
        })
    }

    /// Layer with one activation shared by all units.
    pub fn uniform(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        Self::new(in_dim, out_dim, weights, bias, vec![activation; out_dim])
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.in_dim + inp]
    }
    pub fn bias(&self) -> &[f64] {
        &self.bias
    }
    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn nonzero_weights(&self) -> usize {
        self.vals.len()
    }

    #[inline]
    fn forward(&self, input: &[f64], pre: &mut [f64], post: &mut [f64]) {
        for j in 0..self.out_dim {
            let mut s = self.bias[j];
            for k in self.row_ptr[j]..self.row_ptr[j + 1] {
                s += self.vals[k] * input[self.cols[k]];
            }
            pre[j] = s;
            post[j] = self.activations[j].apply(s);
        }
    }
}

/// Feedforward network `R^input_dim -> R^output_dim`. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    input_dim: usize,
    output_dim: usize,
}

/// Forward-pass buffers reused across evaluations.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    adj: Vec<f64>,
    adj_next: Vec<f64>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::InvalidNetwork("network needs at least one layer".into()))?;
        let input_dim = first.in_dim;
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::InvalidNetwork(format!(
                    "layer {k} outputs {} values but layer {} expects {}",
                    pair[0].out_dim,
                    k + 1,
                    pair[1].in_dim
                )));
            }
        }
        let output_dim = layers.last().map(|l| l.out_dim).unwrap_or(input_dim);
        Ok(Self {
            layers,
            input_dim,
            output_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn output_dim(&self) -> usize {
        self.output_dim
    }
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// True when every unit is tanh, square or identity.
    pub fn is_smooth(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.activations.iter().all(|a| a.is_smooth()))
    }

    fn first_non_smooth(&self) -> Option<Activation> {
        self.layers
            .iter()
            .flat_map(|l| l.activations.iter().copied())
            .find(|a| !a.is_smooth())
    }

    pub fn require_smooth(&self) -> Result<()> {
        match self.first_non_smooth() {
            Some(a) => Err(Error::NonSmooth(a)),
            None => Ok(()),
        }
    }

    /// Parameter count: nonzero weights plus one bias per unit.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.nonzero_weights() + l.out_dim)
            .sum()
    }

    /// Number of units over all layers.
    pub fn unit_count(&self) -> usize {
        self.layers.iter().map(|l| l.out_dim).sum()
    }

    pub fn tape(&self) -> Tape {
        Tape {
            pre: self.layers.iter().map(|l| vec![0.0; l.out_dim]).collect(),
            post: self.layers.iter().map(|l| vec![0.0; l.out_dim]).collect(),
            adj: Vec::new(),
            adj_next: Vec::new(),
        }
    }

    fn ensure_tape(&self, tape: &mut Tape) {
        if tape.pre.len() != self.layers.len()
            || tape
                .pre
                .iter()
                .zip(&self.layers)
                .any(|(p, l)| p.len() != l.out_dim)
        {
            *tape = self.tape();
        }
    }

    /// Forward pass recording pre-activations; returns the output slice.
    pub fn forward<'t>(&self, z: &[f64], tape: &'t mut Tape) -> &'t [f64] {
        debug_assert_eq!(z.len(), self.input_dim);
        self.ensure_tape(tape);
        for k in 0..self.layers.len() {
            let (done, rest) = tape.post.split_at_mut(k);
            let input: &[f64] = if k == 0 { z } else { &done[k - 1] };
            self.layers[k].forward(input, &mut tape.pre[k], &mut rest[0]);
        }
        tape.post.last().expect("non-empty network")
    }

    pub fn eval(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim("network input", self.input_dim, z.len())?;
        let mut tape = self.tape();
        Ok(self.forward(z, &mut tape).to_vec())
    }

    /// Vector-Jacobian product `J(z)^T v` for the point recorded on `tape`.
    pub fn vjp_recorded(&self, tape: &mut Tape, v: &[f64], out: &mut [f64]) {
        let Tape {
            pre,
            post,
            adj,
            adj_next,
        } = tape;
        adj.clear();
        adj.extend_from_slice(v);
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            for (j, aj) in adj.iter_mut().enumerate().take(layer.out_dim) {
                *aj *= layer.activations[j].derivative(pre[k][j], post[k][j]);
            }
            adj_next.clear();
            adj_next.resize(layer.in_dim, 0.0);
            for (j, &a) in adj.iter().enumerate().take(layer.out_dim) {
                if a == 0.0 {
                    continue;
                }
                for p in layer.row_ptr[j]..layer.row_ptr[j + 1] {
                    adj_next[layer.cols[p]] += layer.vals[p] * a;
                }
            }
            std::mem::swap(adj, adj_next);
        }
        out.copy_from_slice(&adj[..self.input_dim]);
    }

    /// `J(z)^T v`.
    pub fn vjp(&self, z: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.require_smooth()?;
        check_dim("network input", self.input_dim, z.len())?;
        check_dim("cotangent", self.output_dim, v.len())?;
        let mut tape = self.tape();
        self.forward(z, &mut tape);
        let mut out = vec![0.0; self.input_dim];
        self.vjp_recorded(&mut tape, v, &mut out);
        Ok(out)
    }

    /// Exact Jacobian, row-major `output_dim × input_dim`, one reverse sweep
    /// per output.
    pub fn jacobian(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.require_smooth()?;
        check_dim("network input", self.input_dim, z.len())?;
        let mut tape = self.tape();
        let mut jac = vec![0.0; self.output_dim * self.input_dim];
        self.forward(z, &mut tape);
        self.jacobian_recorded(&mut tape, &mut jac);
        Ok(jac)
    }

    pub(crate) fn jacobian_recorded(&self, tape: &mut Tape, jac: &mut [f64]) {
        let mut e = vec![0.0; self.output_dim];
        for i in 0..self.output_dim {
            e.iter_mut().for_each(|c| *c = 0.0);
            e[i] = 1.0;
            let row = &mut jac[i * self.input_dim..(i + 1) * self.input_dim];
            self.vjp_recorded(tape, &e, row);
        }
    }
}
