//! Layer-graph descriptions of the classifier families, their cost
//! accounting, and trainable instances.

pub mod builders;
pub mod cost;
pub mod model;
pub mod spec;

pub use builders::{
    build_alexnet, build_fully_connected, build_inception_v3, build_resnet50, build_vgg, shrink, with_bottleneck,
    ArchitectureKind,
};
pub use cost::{count_costs, CostReport, LayerCost};
pub use model::{BatchNormConfig, ForwardOutput, Mode, Model};
pub use spec::{ArchitectureSpec, FeatureShape, LayerRecord, LayerSpec};
