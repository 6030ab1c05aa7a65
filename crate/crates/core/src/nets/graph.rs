//! A small DAG builder that lowers to layered [`Network`]s.
//!
//! Nodes are unit activations applied to affine combinations of earlier
//! nodes. Lowering assigns each node a level (longest path from the inputs),
//! then threads every value that is consumed later through identity carry
//! units so each layer only reads the layer directly below it. Identity
//! activations never become nodes: they stay symbolic as [`Affine`] values and
//! fold into their consumers.

use std::collections::BTreeMap;

use super::{Activation, Layer, Network};
use crate::error::{Error, Result};

pub type NodeId = usize;

/// `bias + sum(weight * node)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Affine {
    terms: BTreeMap<NodeId, f64>,
    pub bias: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Self {
            terms: BTreeMap::new(),
            bias: c,
        }
    }

    pub fn node(n: NodeId) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(n, 1.0);
        Self { terms, bias: 0.0 }
    }

    pub fn terms(&self) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.terms.iter().map(|(&n, &w)| (n, w))
    }

    pub fn add_term(&mut self, n: NodeId, w: f64) {
        if w == 0.0 {
            return;
        }
        let e = self.terms.entry(n).or_insert(0.0);
        *e += w;
        if *e == 0.0 {
            self.terms.remove(&n);
        }
    }

    /// `self += w * other`.
    pub fn add_scaled(&mut self, other: &Affine, w: f64) {
        if w == 0.0 {
            return;
        }
        self.bias += w * other.bias;
        for (n, c) in other.terms() {
            self.add_term(n, w * c);
        }
    }

    pub fn scaled(&self, w: f64) -> Affine {
        let mut out = Affine::default();
        out.add_scaled(self, w);
        out
    }

    pub fn sum(parts: &[(&Affine, f64)]) -> Affine {
        let mut out = Affine::default();
        for (a, w) in parts {
            out.add_scaled(a, *w);
        }
        out
    }

    /// `Some(c)` when the value is the constant `c`.
    pub fn as_constant(&self) -> Option<f64> {
        self.terms.is_empty().then_some(self.bias)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty() && self.bias == 0.0
    }

    fn as_plain_node(&self) -> Option<NodeId> {
        if self.bias == 0.0 && self.terms.len() == 1 {
            let (&n, &w) = self.terms.iter().next()?;
            (w == 1.0).then_some(n)
        } else {
            None
        }
    }
}

#[derive(Clone, Debug)]
enum Node {
    Input(usize),
    Unit { act: Activation, input: Affine },
}

#[derive(Clone, Debug)]
pub struct Graph {
    input_dim: usize,
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            nodes: (0..input_dim).map(Node::Input).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn input(&self, j: usize) -> Affine {
        assert!(j < self.input_dim);
        Affine::node(j)
    }

    pub fn inputs(&self) -> Vec<Affine> {
        (0..self.input_dim).map(Affine::node).collect()
    }

    /// Adds `act(input)`. Identity stays symbolic.
    pub fn unit(&mut self, act: Activation, input: Affine) -> Affine {
        if act == Activation::Identity {
            return input;
        }
        self.nodes.push(Node::Unit { act, input });
        Affine::node(self.nodes.len() - 1)
    }

    /// `a * b = ((a + b)^2 - (a - b)^2) / 4` with two square units.
    pub fn mul(&mut self, a: &Affine, b: &Affine) -> Affine {
        let plus = self.unit(Activation::Square, Affine::sum(&[(a, 1.0), (b, 1.0)]));
        let minus = self.unit(Activation::Square, Affine::sum(&[(a, 1.0), (b, -1.0)]));
        Affine::sum(&[(&plus, 0.25), (&minus, -0.25)])
    }

    /// Splices `net` in, fed by `inputs`; returns its outputs.
    pub fn embed(&mut self, net: &Network, inputs: &[Affine]) -> Vec<Affine> {
        assert_eq!(inputs.len(), net.input_dim());
        let mut current = inputs.to_vec();
        for layer in net.layers() {
            let mut next = Vec::with_capacity(layer.out_dim());
            for j in 0..layer.out_dim() {
                let mut pre = Affine::constant(layer.bias()[j]);
                for (i, a) in current.iter().enumerate() {
                    pre.add_scaled(a, layer.weight(j, i));
                }
                next.push(self.unit(layer.activations()[j], pre));
            }
            current = next;
        }
        current
    }

    /// Lowers to a layered network whose outputs are `outputs` in order.
    pub fn to_network(&self, outputs: &[Affine]) -> Result<Network> {
        if outputs.is_empty() {
            return Err(Error::InvalidNetwork("graph has no outputs".into()));
        }
        let mut nodes = self.nodes.clone();
        let out_nodes: Vec<NodeId> = outputs
            .iter()
            .map(|a| match a.as_plain_node() {
                Some(n) => n,
                None => {
                    nodes.push(Node::Unit {
                        act: Activation::Identity,
                        input: a.clone(),
                    });
                    nodes.len() - 1
                }
            })
            .collect();

        let n = nodes.len();
        let mut live = vec![false; n];
        let mut stack: Vec<NodeId> = out_nodes.clone();
        while let Some(v) = stack.pop() {
            if live[v] {
                continue;
            }
            live[v] = true;
            if let Node::Unit { input, .. } = &nodes[v] {
                stack.extend(input.terms().map(|(t, _)| t));
            }
        }

        // Node ids are topologically ordered by construction.
        let mut level = vec![0usize; n];
        for v in 0..n {
            if let Node::Unit { input, .. } = &nodes[v] {
                level[v] = 1 + input.terms().map(|(t, _)| level[t]).max().unwrap_or(0);
            }
        }
        let depth = out_nodes
            .iter()
            .map(|&v| level[v])
            .max()
            .unwrap_or(0)
            .max(1);

        let mut need = vec![0usize; n];
        for v in 0..n {
            if !live[v] {
                continue;
            }
            if let Node::Unit { input, .. } = &nodes[v] {
                for (t, _) in input.terms() {
                    need[t] = need[t].max(level[v] - 1);
                }
            }
        }
        for &v in &out_nodes {
            if level[v] < depth {
                need[v] = need[v].max(depth - 1);
            }
        }

        // slot[v] = position of v in the previous layer's output.
        let mut slot: Vec<Option<usize>> = vec![None; n];
        for v in 0..n {
            if let Node::Input(j) = nodes[v] {
                slot[v] = Some(j);
            }
        }
        let mut width = self.input_dim;
        let mut layers = Vec::with_capacity(depth);

        let row_for = |input: &Affine, slot: &[Option<usize>], width: usize| -> (Vec<f64>, f64) {
            let mut row = vec![0.0; width];
            for (t, w) in input.terms() {
                row[slot[t].expect("operand available")] += w;
            }
            (row, input.bias)
        };

        for l in 1..depth {
            let mut members: Vec<NodeId> = Vec::new();
            for v in 0..n {
                if live[v] && need[v] >= l && level[v] <= l {
                    members.push(v);
                }
            }
            let mut weights = Vec::with_capacity(members.len() * width);
            let mut bias = Vec::with_capacity(members.len());
            let mut acts = Vec::with_capacity(members.len());
            for &v in &members {
                if level[v] == l {
                    let Node::Unit { act, input } = &nodes[v] else {
                        unreachable!("inputs sit at level 0")
                    };
                    let (row, b) = row_for(input, &slot, width);
                    weights.extend(row);
                    bias.push(b);
                    acts.push(*act);
                } else {
                    let mut row = vec![0.0; width];
                    row[slot[v].expect("carried value available")] = 1.0;
                    weights.extend(row);
                    bias.push(0.0);
                    acts.push(Activation::Identity);
                }
            }
            if members.is_empty() {
                return Err(Error::InvalidNetwork(format!(
                    "empty layer {l} while lowering"
                )));
            }
            layers.push(Layer::new(width, members.len(), weights, bias, acts)?);
            let mut next_slot = vec![None; n];
            for (p, &v) in members.iter().enumerate() {
                next_slot[v] = Some(p);
            }
            slot = next_slot;
            width = members.len();
        }

        let mut weights = Vec::with_capacity(out_nodes.len() * width);
        let mut bias = Vec::new();
        let mut acts = Vec::new();
        for &v in &out_nodes {
            if level[v] == depth {
                let Node::Unit { act, input } = &nodes[v] else {
                    unreachable!()
                };
                let (row, b) = row_for(input, &slot, width);
                weights.extend(row);
                bias.push(b);
                acts.push(*act);
            } else {
                let mut row = vec![0.0; width];
                row[slot[v].expect("output carried to the last layer")] = 1.0;
                weights.extend(row);
                bias.push(0.0);
                acts.push(Activation::Identity);
            }
        }
        layers.push(Layer::new(width, out_nodes.len(), weights, bias, acts)?);
        Network::new(layers)
    }
}
