//! Fully connected networks, their training, and the PCA label basis.

pub mod bundle;
pub mod mlp;
pub mod networks;
pub mod pca;
pub mod train;

pub use bundle::{predict_bundle, BundlePrediction, ModelBundle};
pub use mlp::{Layer, Loss, Mlp};
pub use networks::{
    build_differential_net, build_single_anchor_net, build_subspace_nets, default_fallback_slice, AnchorModel,
    AnchorNets, DifferentialNet, NetShape, SubspaceNet,
};
pub use pca::{default_component_count, pca_fit, pca_fit_threshold, PcaBasis};
pub use train::{grad_check, train, GradCheck, TrainConfig, TrainReport};
