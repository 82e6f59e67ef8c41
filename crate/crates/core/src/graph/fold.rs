//! Batch-norm folding for inference.
//!
//! The eval-mode batch norm is a per-channel affine `u_bar = g u + b` with
//! `g > 0`, so the step comparison `u_bar >= u_th` is the same decision as
//! `u >= (u_th - b) / g`. Each batch norm that feeds an activation is
//! deleted and its effect absorbed into a per-channel firing threshold.
//! A batch norm feeding a linear operation instead has its affine merged
//! into that operation's weights.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::layer::{Layer, Mode};
use super::network::{NetworkGraph, NodeInput};

/// Fold every batch norm out of an eval-mode graph, producing a
/// `FoldedEval` graph. Folding an already-folded graph is an error, as is a
/// non-positive effective scale on any channel (the comparison would flip).
pub fn fold_bn<T: Scalar>(mut net: NetworkGraph<T>) -> Result<NetworkGraph<T>> {
    if net.mode == Mode::FoldedEval {
        return Err(Error::InvalidNetwork(
            "graph is already folded; fold_bn is not a second transformation".into(),
        ));
    }
    if net.mode != Mode::Eval {
        return Err(Error::InvalidNetwork(
            "fold_bn requires an eval-mode graph".into(),
        ));
    }

    loop {
        let Some(bn_index) = net
            .nodes
            .iter()
            .position(|n| matches!(n.layer, Layer::BatchNorm(_)))
        else {
            break;
        };
        fold_one(&mut net, bn_index)?;
    }

    net.set_mode(Mode::FoldedEval);
    Ok(net)
}

fn fold_one<T: Scalar>(net: &mut NetworkGraph<T>, bn_index: usize) -> Result<()> {
    // The consumer must be the next node reading the chain; a tapped batch
    // norm output has no single absorption point.
    let consumer = bn_index + 1;
    if consumer >= net.nodes.len() || net.nodes[consumer].input != NodeInput::Chain {
        return Err(Error::InvalidNetwork(format!(
            "batch norm at node {bn_index} has no chain consumer to absorb it"
        )));
    }
    for (i, node) in net.nodes.iter().enumerate() {
        let taps_bn = match (node.input, &node.layer) {
            (NodeInput::Node(j), _) => j == bn_index,
            (_, Layer::ResidualAdd { from }) => *from == bn_index && i != consumer,
            _ => false,
        };
        if taps_bn {
            return Err(Error::InvalidNetwork(format!(
                "batch norm at node {bn_index} is tapped by node {i}; cannot fold"
            )));
        }
    }

    let (scale, shift) = match &net.nodes[bn_index].layer {
        Layer::BatchNorm(bn) => bn.eval_affine(),
        _ => unreachable!("selected node is a batch norm"),
    };
    if let Some(c) = scale.iter().position(|&s| s <= 0.0) {
        return Err(Error::InvalidParam(format!(
            "effective batch-norm scale is non-positive on channel {c}; folding would flip the threshold comparison"
        )));
    }

    match &mut net.nodes[consumer].layer {
        Layer::Activation(act) => {
            if act.folded_u_th.is_some() {
                return Err(Error::InvalidNetwork(
                    "activation already carries folded thresholds".into(),
                ));
            }
            let u_th = act.spec.u_th;
            act.folded_u_th = Some(
                scale
                    .iter()
                    .zip(&shift)
                    .map(|(&g, &b)| (u_th - b) / g)
                    .collect(),
            );
        }
        Layer::Linear(lin) => {
            // y = W (g x + b) + bias = (W diag(g)) x + (W b + bias).
            let (out_f, in_f) = (lin.w.shape()[0], lin.w.shape()[1]);
            if in_f != scale.len() {
                return Err(Error::ShapeMismatch(format!(
                    "batch norm over {} channels feeds linear with {in_f} inputs",
                    scale.len()
                )));
            }
            let mut bias_add = vec![0.0f64; out_f];
            for o in 0..out_f {
                for i in 0..in_f {
                    let w = lin.w.at(&[o, i]).as_f64();
                    bias_add[o] += w * shift[i];
                    lin.w.set(&[o, i], T::from_f64(w * scale[i]));
                }
            }
            let old_bias = match &lin.b {
                Some(b) => b.data().iter().map(|v| v.as_f64()).collect(),
                None => vec![0.0f64; out_f],
            };
            lin.b = Some(Tensor::from_vec(
                &[out_f],
                old_bias
                    .iter()
                    .zip(&bias_add)
                    .map(|(&b, &a)| T::from_f64(b + a))
                    .collect(),
            )?);
            lin.gb = Some(Tensor::zeros(&[out_f]));
        }
        other => {
            return Err(Error::InvalidNetwork(format!(
                "batch norm feeds a {} layer; only activations and linear ops absorb it",
                other.kind().name()
            )));
        }
    }

    // The consumer takes over the batch norm's input edge.
    let bn_input = net.nodes[bn_index].input;
    net.nodes[consumer].input = bn_input;
    net.nodes.remove(bn_index);
    for node in net.nodes.iter_mut() {
        if let NodeInput::Node(j) = &mut node.input {
            if *j > bn_index {
                *j -= 1;
            }
        }
        if let Layer::ResidualAdd { from } = &mut node.layer {
            if *from > bn_index {
                *from -= 1;
            }
        }
    }
    Ok(())
}
