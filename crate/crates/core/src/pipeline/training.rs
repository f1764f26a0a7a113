//! Fitting both network families on a dataset and bundling the result.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::dataset::{gather_anchor_rows, Dataset};
use crate::error::{check_len, Error, Result};
use crate::mesh::Mesh;
use crate::nn::networks::rms_scale;
use crate::nn::{
    build_differential_net, build_single_anchor_net, build_subspace_nets, default_component_count,
    default_fallback_slice, pca_fit, pca_fit_threshold, AnchorModel, AnchorNets, Loss, ModelBundle, NetShape,
    TrainConfig, TrainReport,
};
use crate::reconstruction::AnchorSet;
use crate::rig::{vectorize, InfluenceMap, Normalization, RigSpec};

/// Network, PCA and optimizer settings shared by training and the baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub differential_shape: NetShape,
    pub subspace_shape: NetShape,
    /// Optimizer for the differential network; its loss defaults to L1.
    pub differential_train: TrainConfig,
    /// Optimizer for the anchor networks; its loss defaults to L2.
    pub subspace_train: TrainConfig,
    /// PCA components as a fraction of the vertex count.
    pub pc_fraction: f64,
    /// When set, the smallest PC count whose training reprojection error is
    /// at most this value, up to `pc_fraction · n`.
    pub pc_threshold: Option<f64>,
    /// One combined anchor network instead of one per anchor.
    pub single_anchor_net: bool,
}

impl ModelConfig {
    /// Full-size networks: 5×2048 differential, 3×64 per anchor, 10 000 epochs.
    pub fn full() -> Self {
        Self {
            differential_shape: NetShape::DIFFERENTIAL,
            subspace_shape: NetShape::SUBSPACE,
            differential_train: TrainConfig {
                epochs: 10_000,
                loss: Loss::L1,
                ..TrainConfig::default()
            },
            subspace_train: TrainConfig {
                epochs: 10_000,
                loss: Loss::L2,
                ..TrainConfig::default()
            },
            pc_fraction: 0.05,
            pc_threshold: None,
            single_anchor_net: false,
        }
    }

    /// Reduced widths and epochs for a desktop CPU.
    pub fn desk() -> Self {
        let mut cfg = Self::full();
        cfg.differential_shape = NetShape {
            hidden_layers: 3,
            width: 256,
        };
        // Small batches and a decay that anneals within the shorter run:
        // with a few hundred epochs the full-preset constant barely moves the rate.
        cfg.differential_train = TrainConfig {
            batch_size: 16,
            learning_rate: 0.2,
            decay: 2e-4,
            epochs: 300,
            ..cfg.differential_train
        };
        cfg.subspace_train = TrainConfig {
            batch_size: 16,
            epochs: 60,
            ..cfg.subspace_train
        };
        cfg
    }

    /// Same seed for both optimizers and network initializations.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.differential_train.seed = seed;
        self.subspace_train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.differential_train.validate()?;
        self.subspace_train.validate()?;
        if !(self.pc_fraction > 0.0 && self.pc_fraction <= 3.0) {
            return Err(Error::Config(format!("pc fraction {} out of range", self.pc_fraction)));
        }
        if self.differential_shape.width == 0 && self.differential_shape.hidden_layers > 0 {
            return Err(Error::Config("differential width must be positive".into()));
        }
        Ok(())
    }

    /// PC count for `n` vertices and `m` training samples.
    pub fn component_count(&self, n: usize, m: usize) -> usize {
        default_component_count(n, self.pc_fraction).min(m).min(3 * n)
    }
}

/// Trained bundle with its loss traces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub differential_report: TrainReport,
    pub anchor_reports: Vec<TrainReport>,
}

/// Training features of `dataset` under a normalization refitted on its
/// train split, together with that normalization.
pub fn train_features(dataset: &Dataset) -> Result<(Normalization, DMatrix<f64>)> {
    let norm = Normalization::fit(&dataset.spec, dataset.split.train.iter().map(|&i| &dataset.poses[i]));
    let f = dataset.spec.feature_dim();
    let mut x = DMatrix::zeros(f, dataset.split.train.len());
    for (col, &i) in dataset.split.train.iter().enumerate() {
        x.column_mut(col).copy_from_slice(&vectorize(&dataset.poses[i], &norm)?);
    }
    Ok((norm, x))
}

/// Scales row `3i + a` by `w[i]`.
pub fn weight_rows(m: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let mut out = m.clone();
    for (i, &w) in weights.iter().enumerate() {
        out.rows_mut(3 * i, 3).scale_mut(w);
    }
    out
}

/// Fits normalization and PCA on the train split, then trains the
/// differential network on degree-weighted differentials `D·δ` of `v_nl` and
/// the anchor networks on `v_nl` at `anchors`.
pub fn train_all(
    dataset: &Dataset,
    mesh: &Mesh,
    anchors: &AnchorSet,
    influence: &InfluenceMap,
    cfg: &ModelConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = mesh.vertex_count();
    check_len("dataset vertices", n, dataset.vertex_count())?;
    if dataset.mesh_hash != mesh.content_hash() {
        return Err(Error::HashMismatch {
            context: "dataset mesh",
            expected: mesh.content_hash(),
            found: dataset.mesh_hash.clone(),
        });
    }
    anchors.validate(n)?;
    check_len("influence map anchors", anchors.len(), influence.len())?;
    let train = &dataset.split.train;
    if train.is_empty() {
        return Err(Error::Config("train split is empty".into()));
    }
    let (normalization, features) = train_features(dataset)?;

    let weighted = weight_rows(&dataset.delta.select_columns(train), &mesh.degrees());
    let k = cfg.component_count(n, train.len());
    let pca = match cfg.pc_threshold {
        Some(t) => pca_fit_threshold(&weighted, t, k)?,
        None => pca_fit(&weighted, k)?,
    }
    .without_null_components();
    log::info!("differential labels: {} components for {} vertices", pca.k(), n);
    let mut differential = build_differential_net(
        features.nrows(),
        pca,
        cfg.differential_shape,
        cfg.differential_train.seed,
    )?;
    let coeffs = differential.pca.project(&weighted)?;
    drop(weighted);
    differential.label_scale = rms_scale(&coeffs);
    let differential_report = crate::nn::train(
        &mut differential.mlp,
        &features,
        &(coeffs / differential.label_scale),
        &cfg.differential_train,
    )?;

    let anchor_labels = gather_anchor_rows(&dataset.local.select_columns(train), anchors);
    let nets = anchor_nets(&dataset.spec, anchors, influence, cfg)?;
    let (anchor_model, anchor_reports) = AnchorModel::fit(nets, &features, &anchor_labels, &cfg.subspace_train)?;

    let training = serde_json::json!({
        "model": cfg,
        "train_samples": train.len(),
        "differential_final_loss": differential_report.final_loss(),
        "anchor_final_losses": anchor_reports.iter().map(TrainReport::final_loss).collect::<Vec<_>>(),
        "dataset_seed": dataset.seed,
        "label_space": "weighted_differential",
    });
    let bundle = ModelBundle {
        spec: dataset.spec.clone(),
        normalization,
        anchors: anchors.clone(),
        influence: influence.clone(),
        differential,
        anchor_model,
        mesh_hash: dataset.mesh_hash.clone(),
        training,
    };
    bundle.check()?;
    Ok(TrainOutcome {
        bundle,
        differential_report,
        anchor_reports,
    })
}

fn anchor_nets(spec: &RigSpec, anchors: &AnchorSet, influence: &InfluenceMap, cfg: &ModelConfig) -> Result<AnchorNets> {
    let seed = cfg.subspace_train.seed;
    Ok(if cfg.single_anchor_net {
        AnchorNets::Single(build_single_anchor_net(
            spec.feature_dim(),
            anchors.len(),
            cfg.subspace_shape,
            seed,
        )?)
    } else {
        AnchorNets::PerAnchor(build_subspace_nets(
            influence,
            spec,
            cfg.subspace_shape,
            seed,
            &default_fallback_slice(spec),
        )?)
    })
}
