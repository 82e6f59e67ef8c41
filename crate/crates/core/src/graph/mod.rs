//! Network graphs: layers, manual backpropagation, architecture builders
//! and batch-norm folding.

mod build;
mod fold;
mod layer;
mod network;

pub use build::{build_mlp, build_resnet, build_smallcnn, direct_encode, ResNetConfig};
pub use fold::fold_bn;
pub use layer::{
    Activation, AvgPool, BatchNorm, Conv2d, Dropout, FiringStats, Flatten, GlobalAvgPool, Layer,
    LayerKind, Linear, Mode, ParamKind,
};
pub use network::{GraphNode, NetworkGraph, NodeInput, ParamSlot};

#[cfg(test)]
mod tests;
