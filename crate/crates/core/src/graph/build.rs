//! Architecture builders: the pre-activation residual stacks and the small
//! conv net used at desk scale, plus the direct encoder.
//!
//! Layout convention: blocks start and end at a binary map. The identity
//! skip therefore adds a binary map to the continuous output of the second
//! conv, and every batch norm sits immediately before an activation so it
//! can be folded into per-channel thresholds at inference. The first layer
//! deliberately has no batch norm: the raw image is encoded by the stem
//! conv followed by a plain threshold (direct encoding). Downsampling
//! blocks use a strided 3x3 conv and a 1x1 projection skip (convolution
//! only, no batch norm on the skip).

use crate::error::Result;
use crate::rng::Rng;
use crate::surrogate::{heaviside_forward, SurrogateSpec};
use crate::tensor::{Scalar, Tensor};

use super::layer::{
    Activation, BatchNorm, Conv2d, Dropout, Flatten, GlobalAvgPool, Layer, Linear,
};
use super::network::{GraphNode, NetworkGraph, NodeInput};

/// Residual stack shape: per-stage block counts and widths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResNetConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub blocks: Vec<usize>,
    pub widths: Vec<usize>,
}

impl ResNetConfig {
    /// 18-layer stack: 1 stem conv + 8 blocks * 2 convs + classifier.
    pub fn resnet18(in_channels: usize, num_classes: usize) -> ResNetConfig {
        ResNetConfig {
            in_channels,
            num_classes,
            blocks: vec![2, 2, 2, 2],
            widths: vec![64, 128, 256, 512],
        }
    }

    /// 106-layer stack: 1 stem conv + 52 blocks * 2 convs + classifier.
    pub fn resnet106(in_channels: usize, num_classes: usize) -> ResNetConfig {
        ResNetConfig {
            in_channels,
            num_classes,
            blocks: vec![13, 13, 13, 13],
            widths: vec![64, 128, 256, 512],
        }
    }

    pub fn conv_layer_count(&self) -> usize {
        1 + 2 * self.blocks.iter().sum::<usize>()
    }
}

fn chain<T: Scalar>(layer: Layer<T>) -> GraphNode<T> {
    GraphNode {
        input: NodeInput::Chain,
        layer,
    }
}

/// Identity-skip block on `c` channels. `block_input` is the node producing
/// the incoming binary map.
fn push_module_a<T: Scalar>(
    nodes: &mut Vec<GraphNode<T>>,
    block_input: usize,
    c: usize,
    spec: &SurrogateSpec,
    rng: &mut Rng,
) {
    nodes.push(chain(Layer::Conv2d(Conv2d::new(c, c, 3, 1, 1, rng))));
    nodes.push(chain(Layer::BatchNorm(BatchNorm::new(c))));
    nodes.push(chain(Layer::Activation(Activation::new(*spec))));
    nodes.push(chain(Layer::Conv2d(Conv2d::new(c, c, 3, 1, 1, rng))));
    nodes.push(chain(Layer::ResidualAdd { from: block_input }));
    nodes.push(chain(Layer::BatchNorm(BatchNorm::new(c))));
    nodes.push(chain(Layer::Activation(Activation::new(*spec))));
}

/// Downsampling block `c_in -> c_out` at stride 2, with a 1x1 projection
/// skip taken from the block input.
fn push_module_b<T: Scalar>(
    nodes: &mut Vec<GraphNode<T>>,
    block_input: usize,
    c_in: usize,
    c_out: usize,
    spec: &SurrogateSpec,
    rng: &mut Rng,
) {
    nodes.push(chain(Layer::Conv2d(Conv2d::new(c_in, c_out, 3, 2, 1, rng))));
    nodes.push(chain(Layer::BatchNorm(BatchNorm::new(c_out))));
    nodes.push(chain(Layer::Activation(Activation::new(*spec))));
    nodes.push(chain(Layer::Conv2d(Conv2d::new(c_out, c_out, 3, 1, 1, rng))));
    let conv2 = nodes.len() - 1;
    nodes.push(GraphNode {
        input: NodeInput::Node(block_input),
        layer: Layer::Conv2d(Conv2d::new(c_in, c_out, 1, 2, 0, rng)),
    });
    nodes.push(chain(Layer::ResidualAdd { from: conv2 }));
    nodes.push(chain(Layer::BatchNorm(BatchNorm::new(c_out))));
    nodes.push(chain(Layer::Activation(Activation::new(*spec))));
}

/// Pre-activation residual network: stem encoder, module-A/module-B stages,
/// then global average pooling, dropout 0.1 and the linear classifier head.
pub fn build_resnet<T: Scalar>(
    cfg: &ResNetConfig,
    spec: &SurrogateSpec,
    rng: &mut Rng,
) -> Result<NetworkGraph<T>> {
    assert_eq!(
        cfg.blocks.len(),
        cfg.widths.len(),
        "one width per stage required"
    );
    let mut nodes: Vec<GraphNode<T>> = Vec::new();

    // Stem: direct encoding of the image, no batch norm before the first
    // activation.
    nodes.push(chain(Layer::Conv2d(Conv2d::new(
        cfg.in_channels,
        cfg.widths[0],
        3,
        1,
        1,
        rng,
    ))));
    nodes.push(chain(Layer::Activation(Activation::new(*spec))));

    let mut c_prev = cfg.widths[0];
    for (stage, (&n_blocks, &width)) in cfg.blocks.iter().zip(&cfg.widths).enumerate() {
        for b in 0..n_blocks {
            let block_input = nodes.len() - 1;
            if stage > 0 && b == 0 {
                push_module_b(&mut nodes, block_input, c_prev, width, spec, rng);
            } else {
                push_module_a(&mut nodes, block_input, width, spec, rng);
            }
        }
        c_prev = width;
    }

    nodes.push(chain(Layer::GlobalAvgPool(GlobalAvgPool::default())));
    nodes.push(chain(Layer::Dropout(Dropout::new(0.1))));
    nodes.push(chain(Layer::Linear(Linear::new(
        c_prev,
        cfg.num_classes,
        true,
        rng,
    ))));
    NetworkGraph::new(nodes)
}

/// Two strided convolutions and a linear head; the desk-scale architecture.
/// The first conv + activation performs direct encoding (no batch norm);
/// the second conv gets the usual batch norm before its activation.
pub fn build_smallcnn<T: Scalar>(
    in_channels: usize,
    in_hw: usize,
    channels: (usize, usize),
    num_classes: usize,
    spec: &SurrogateSpec,
    rng: &mut Rng,
) -> Result<NetworkGraph<T>> {
    let (c1, c2) = channels;
    let hw1 = (in_hw + 2 * 2 - 5) / 2 + 1;
    let hw2 = (hw1 + 2 * 2 - 5) / 2 + 1;
    let nodes = vec![
        chain(Layer::Conv2d(Conv2d::new(in_channels, c1, 5, 2, 2, rng))),
        chain(Layer::Activation(Activation::new(*spec))),
        chain(Layer::Conv2d(Conv2d::new(c1, c2, 5, 2, 2, rng))),
        chain(Layer::BatchNorm(BatchNorm::new(c2))),
        chain(Layer::Activation(Activation::new(*spec))),
        chain(Layer::Flatten(Flatten::default())),
        chain(Layer::Dropout(Dropout::new(0.1))),
        chain(Layer::Linear(Linear::new(
            c2 * hw2 * hw2,
            num_classes,
            true,
            rng,
        ))),
    ];
    NetworkGraph::new(nodes)
}

/// Fully connected net for toy tasks: `dims[0] -> ... -> dims.last()`, an
/// activation after every layer but the last.
pub fn build_mlp<T: Scalar>(
    dims: &[usize],
    spec: &SurrogateSpec,
    rng: &mut Rng,
) -> Result<NetworkGraph<T>> {
    assert!(dims.len() >= 2, "mlp needs input and output dims");
    let mut nodes = Vec::new();
    for w in dims.windows(2).take(dims.len() - 2) {
        nodes.push(chain(Layer::Linear(Linear::new(w[0], w[1], true, rng))));
        nodes.push(chain(Layer::Activation(Activation::new(*spec))));
    }
    let last = dims.len() - 1;
    nodes.push(chain(Layer::Linear(Linear::new(
        dims[last - 1],
        dims[last],
        true,
        rng,
    ))));
    NetworkGraph::new(nodes)
}

/// Direct encoding of a real-valued input: threshold the first weighted
/// layer, producing an exactly binary map. `w1` is `d_1 x d_0`, `x` is
/// `batch x d_0`.
pub fn direct_encode<T: Scalar>(
    x: &Tensor<T>,
    w1: &Tensor<T>,
    spec: &SurrogateSpec,
) -> Result<Tensor<T>> {
    heaviside_forward(&x.matmul(&w1.transpose()?)?, spec)
}
