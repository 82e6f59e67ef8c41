//! Fixed feed-forward/residual graph: an ordered node list where each node
//! consumes either the running chain signal or the recorded output of an
//! earlier node (skip taps and projection branches).

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::layer::{Activation, FiringStats, Layer, LayerKind, Mode, ParamKind};

/// Where a node reads its input from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeInput {
    /// Output of the previous node (the network input for node 0).
    Chain,
    /// Output of an earlier node; used by projection branches.
    Node(usize),
}

pub struct GraphNode<T: Scalar> {
    pub input: NodeInput,
    pub layer: Layer<T>,
}

/// A mutable borrow of one parameter tensor and its gradient.
pub struct ParamSlot<'a, T: Scalar> {
    pub kind: ParamKind,
    pub name: String,
    pub value: &'a mut Tensor<T>,
    pub grad: &'a Tensor<T>,
}

pub struct NetworkGraph<T: Scalar> {
    pub nodes: Vec<GraphNode<T>>,
    pub mode: Mode,
    record_firing: bool,
    /// Per-node outputs of the latest forward (kept for taps and backward).
    outputs: Vec<Option<Tensor<T>>>,
    forward_ran: bool,
}

impl<T: Scalar> NetworkGraph<T> {
    pub fn new(nodes: Vec<GraphNode<T>>) -> Result<NetworkGraph<T>> {
        for (i, node) in nodes.iter().enumerate() {
            let tap = match (node.input, &node.layer) {
                (NodeInput::Node(j), _) => Some(j),
                (_, Layer::ResidualAdd { from }) => Some(*from),
                _ => None,
            };
            if let Some(j) = tap {
                if j >= i {
                    return Err(Error::InvalidNetwork(format!(
                        "node {i} taps node {j}, which is not earlier in the graph"
                    )));
                }
            }
        }
        let n = nodes.len();
        Ok(NetworkGraph {
            nodes,
            mode: Mode::Train,
            record_firing: false,
            outputs: vec![None; n],
            forward_ran: false,
        })
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        self.forward_ran = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record spike counts at every activation during subsequent forwards.
    pub fn set_record_firing(&mut self, on: bool) {
        self.record_firing = on;
    }

    pub fn reset_firing_stats(&mut self) {
        for node in &mut self.nodes {
            if let Layer::Activation(a) = &mut node.layer {
                a.stats = FiringStats::default();
            }
        }
    }

    /// `(node index, stats)` for every activation layer, in graph order.
    pub fn firing_stats(&self) -> Vec<(usize, &FiringStats)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match &n.layer {
                Layer::Activation(a) => Some((i, &a.stats)),
                _ => None,
            })
            .collect()
    }

    /// Fraction of activation neurons that have not fired since the last
    /// stats reset, over all activation layers.
    pub fn dead_neuron_fraction(&self) -> f64 {
        let mut dead = 0usize;
        let mut total = 0usize;
        for (_, s) in self.firing_stats() {
            dead += s.ever_fired.iter().filter(|&&f| !f).count();
            total += s.ever_fired.len();
        }
        if total == 0 {
            0.0
        } else {
            dead as f64 / total as f64
        }
    }

    /// Reseed every dropout layer deterministically from one seed.
    pub fn reseed_dropout(&mut self, seed: u64) {
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if let Layer::Dropout(d) = &mut node.layer {
                d.reseed(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mode = self.mode;
        let record = self.record_firing;
        self.outputs = vec![None; self.nodes.len()];
        let mut signal = x.clone();
        for i in 0..self.nodes.len() {
            let input = match self.nodes[i].input {
                NodeInput::Chain => signal,
                NodeInput::Node(j) => self.outputs[j]
                    .clone()
                    .ok_or_else(|| Error::InvalidNetwork(format!("node {i}: tap {j} not run")))?,
            };
            let out = match &mut self.nodes[i].layer {
                Layer::ResidualAdd { from } => {
                    let tapped = self.outputs[*from].clone().ok_or_else(|| {
                        Error::InvalidNetwork(format!("node {i}: tap {from} not run"))
                    })?;
                    input.ew_add(&tapped)?
                }
                layer => layer.forward(&input, mode, record)?,
            };
            self.outputs[i] = Some(out.clone());
            signal = out;
        }
        self.forward_ran = true;
        Ok(signal)
    }

    /// Backpropagate from `d_logits` through the whole graph, filling every
    /// parameter gradient. Requires a preceding Train-mode forward.
    pub fn backward(&mut self, d_logits: &Tensor<T>) -> Result<()> {
        if self.mode != Mode::Train || !self.forward_ran {
            return Err(Error::InvalidNetwork(
                "backward requires a forward pass in train mode".into(),
            ));
        }
        self.forward_ran = false;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; n];
        if n == 0 {
            return Ok(());
        }
        grads[n - 1] = Some(d_logits.clone());

        for i in (0..n).rev() {
            let gy = grads[i]
                .take()
                .ok_or_else(|| Error::InvalidNetwork(format!("node {i} received no gradient")))?;
            let g_in = match &mut self.nodes[i].layer {
                Layer::ResidualAdd { from } => {
                    let from = *from;
                    accumulate(&mut grads[from], &gy)?;
                    gy
                }
                layer => layer.backward(&gy)?,
            };
            match self.nodes[i].input {
                NodeInput::Chain => {
                    if i > 0 {
                        accumulate(&mut grads[i - 1], &g_in)?;
                    }
                }
                NodeInput::Node(j) => accumulate(&mut grads[j], &g_in)?,
            }
        }
        Ok(())
    }

    /// All trainable parameters with their gradients, in graph order.
    pub fn params_mut(&mut self) -> Vec<ParamSlot<'_, T>> {
        let mut slots = Vec::new();
        for (i, node) in self.nodes.iter_mut().enumerate() {
            match &mut node.layer {
                Layer::Linear(l) => {
                    slots.push(ParamSlot {
                        kind: ParamKind::Weight,
                        name: format!("node{i}.w"),
                        value: &mut l.w,
                        grad: &l.gw,
                    });
                    if let (Some(b), Some(gb)) = (&mut l.b, &l.gb) {
                        slots.push(ParamSlot {
                            kind: ParamKind::Bias,
                            name: format!("node{i}.b"),
                            value: b,
                            grad: gb,
                        });
                    }
                }
                Layer::Conv2d(l) => slots.push(ParamSlot {
                    kind: ParamKind::Weight,
                    name: format!("node{i}.w"),
                    value: &mut l.w,
                    grad: &l.gw,
                }),
                Layer::BatchNorm(l) => {
                    slots.push(ParamSlot {
                        kind: ParamKind::Gamma,
                        name: format!("node{i}.gamma"),
                        value: &mut l.gamma,
                        grad: &l.ggamma,
                    });
                    slots.push(ParamSlot {
                        kind: ParamKind::Beta,
                        name: format!("node{i}.beta"),
                        value: &mut l.beta,
                        grad: &l.gbeta,
                    });
                }
                _ => {}
            }
        }
        slots
    }

    /// Clamp every batch-norm scale to at least `floor` (keeps the folding
    /// precondition `gamma > 0` true during training).
    pub fn clamp_bn_gamma(&mut self, floor: f64) {
        let floor = T::from_f64(floor);
        for node in &mut self.nodes {
            if let Layer::BatchNorm(bn) = &mut node.layer {
                for v in bn.gamma.data_mut() {
                    if *v < floor {
                        *v = floor;
                    }
                }
            }
        }
    }

    pub fn param_count(&self) -> usize {
        let mut count = 0;
        for node in &self.nodes {
            match &node.layer {
                Layer::Linear(l) => {
                    count += l.w.len() + l.b.as_ref().map_or(0, Tensor::len);
                }
                Layer::Conv2d(l) => count += l.w.len(),
                Layer::BatchNorm(l) => count += l.gamma.len() + l.beta.len(),
                _ => {}
            }
        }
        count
    }

    /// Every persistent tensor (parameters, running statistics, folded
    /// thresholds), named by node.
    pub fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.layer {
                Layer::Linear(l) => {
                    out.push((format!("node{i}.w"), l.w.clone()));
                    if let Some(b) = &l.b {
                        out.push((format!("node{i}.b"), b.clone()));
                    }
                }
                Layer::Conv2d(l) => out.push((format!("node{i}.w"), l.w.clone())),
                Layer::BatchNorm(l) => {
                    out.push((format!("node{i}.gamma"), l.gamma.clone()));
                    out.push((format!("node{i}.beta"), l.beta.clone()));
                    out.push((format!("node{i}.running_mean"), l.running_mean.clone()));
                    out.push((format!("node{i}.running_var"), l.running_var.clone()));
                }
                Layer::Activation(a) => {
                    if let Some(th) = &a.folded_u_th {
                        let t = Tensor::from_vec(
                            &[th.len()],
                            th.iter().map(|&v| T::from_f64(v)).collect(),
                        )
                        .expect("thresholds are finite");
                        out.push((format!("node{i}.u_th"), t));
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// Load tensors produced by [`named_tensors`] back into the graph.
    pub fn load_named_tensors(&mut self, tensors: &[(String, Tensor<T>)]) -> Result<()> {
        let lookup: std::collections::HashMap<&str, &Tensor<T>> = tensors
            .iter()
            .map(|(name, t)| (name.as_str(), t))
            .collect();
        let assign = |name: String, dst: &mut Tensor<T>| -> Result<()> {
            let src = lookup
                .get(name.as_str())
                .ok_or_else(|| Error::Format(format!("checkpoint missing tensor `{name}`")))?;
            if src.shape() != dst.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "checkpoint tensor `{name}`: {:?} vs expected {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = (*src).clone();
            Ok(())
        };
        for (i, node) in self.nodes.iter_mut().enumerate() {
            match &mut node.layer {
                Layer::Linear(l) => {
                    assign(format!("node{i}.w"), &mut l.w)?;
                    if let Some(b) = &mut l.b {
                        assign(format!("node{i}.b"), b)?;
                    }
                }
                Layer::Conv2d(l) => assign(format!("node{i}.w"), &mut l.w)?,
                Layer::BatchNorm(l) => {
                    assign(format!("node{i}.gamma"), &mut l.gamma)?;
                    assign(format!("node{i}.beta"), &mut l.beta)?;
                    assign(format!("node{i}.running_mean"), &mut l.running_mean)?;
                    assign(format!("node{i}.running_var"), &mut l.running_var)?;
                }
                Layer::Activation(a) => {
                    let name = format!("node{i}.u_th");
                    if let Some(t) = lookup.get(name.as_str()) {
                        a.folded_u_th = Some(t.data().iter().map(|v| v.as_f64()).collect());
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Per-node outputs of the latest forward pass, in graph order.
    pub fn node_outputs(&self) -> &[Option<Tensor<T>>] {
        &self.outputs
    }

    /// Output shape of every node for a given input shape, via a dummy
    /// forward on a single zero example.
    pub fn output_shapes(&mut self, input_shape: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut probe_shape = input_shape.to_vec();
        probe_shape[0] = 1;
        let saved_mode = self.mode;
        let saved_record = self.record_firing;
        self.mode = match saved_mode {
            Mode::FoldedEval => Mode::FoldedEval,
            _ => Mode::Eval,
        };
        self.record_firing = false;
        let result = self.forward(&Tensor::zeros(&probe_shape));
        self.mode = saved_mode;
        self.record_firing = saved_record;
        result?;
        Ok(self
            .outputs
            .iter()
            .map(|o| o.as_ref().expect("forward populated every node").shape().to_vec())
            .collect())
    }

    /// The activation layer feeding node `i`, looking through layers that
    /// pass binary maps along unchanged (dropout, flatten).
    pub fn feeding_activation(&self, i: usize) -> Option<usize> {
        let mut cur = i;
        loop {
            let producer = match self.nodes[cur].input {
                NodeInput::Chain => {
                    if cur == 0 {
                        return None;
                    }
                    cur - 1
                }
                NodeInput::Node(j) => j,
            };
            match self.nodes[producer].layer.kind() {
                LayerKind::Activation => return Some(producer),
                LayerKind::Dropout | LayerKind::Flatten => cur = producer,
                _ => return None,
            }
        }
    }

    pub fn activation_mut(&mut self, i: usize) -> Option<&mut Activation<T>> {
        match &mut self.nodes[i].layer {
            Layer::Activation(a) => Some(a),
            _ => None,
        }
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: &Tensor<T>) -> Result<()> {
    *slot = Some(match slot.take() {
        Some(existing) => existing.ew_add(g)?,
        None => g.clone(),
    });
    Ok(())
}
