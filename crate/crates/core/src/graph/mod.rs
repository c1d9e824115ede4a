//! Architecture construction, parameter bookkeeping and graph execution.

mod calibrate;
mod check;
mod config;
mod dot;
mod forward;
mod network;
mod spec;

pub use calibrate::{calibrate_dense, calibrate_to_target, Calibration, CALIBRATION_TOLERANCE};
pub use check::check_graph_gradients;
pub use config::{CUNetConfig, DenseUNetConfig};
pub use dot::to_dot;
pub use forward::{forward, predict, ForwardPass, ParamStore};
pub use spec::ModelSpec;
pub use network::{
    build_cu_net, build_dense_unet, Architecture, BlockPath, BlockRecord, BnSpec, DenseBlockRecord, Edge, EdgeTag,
    HeadRecord, LayerKind, LayerNode, NetworkGraph, NodeId, ParamKind, ParamSpec, SemanticBlockId, SemanticBlockSpec,
};
