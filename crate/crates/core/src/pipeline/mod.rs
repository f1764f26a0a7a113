//! Dataset generation, training of both network families, and full-mesh
//! prediction.

pub mod dataset;
pub mod predict;
pub mod training;

pub use dataset::{generate_dataset, Dataset, Split};
pub use predict::{
    check_hashes, final_positions, oracle_outputs, predict_from_outputs, predict_full, reconstruct_local,
    rig_transforms, FullPrediction,
};
pub use training::{train_all, ModelConfig, TrainOutcome};
