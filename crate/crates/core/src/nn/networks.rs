//! The differential network and the per-anchor subspace networks.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::pca::{pca_fit, PcaBasis};
use super::train::{train, TrainConfig, TrainReport};
use crate::error::{check_len, Error, Result};
use crate::rig::{InfluenceMap, RigSpec};

/// Hidden-layer count and width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub hidden_layers: usize,
    pub width: usize,
}

impl NetShape {
    pub const DIFFERENTIAL: NetShape = NetShape {
        hidden_layers: 5,
        width: 2048,
    };
    pub const SUBSPACE: NetShape = NetShape {
        hidden_layers: 3,
        width: 64,
    };

    pub fn layer_sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend(std::iter::repeat_n(self.width, self.hidden_layers));
        s.push(output);
        s
    }
}

/// Root-mean-square of all entries, or 1 for an all-zero matrix.
pub(crate) fn rms_scale(m: &DMatrix<f64>) -> f64 {
    let rms = (m.norm_squared() / m.len().max(1) as f64).sqrt();
    if rms > 0.0 && rms.is_finite() {
        rms
    } else {
        1.0
    }
}

/// Features → PCA coefficients → full label vector.
///
/// The network is trained on the coefficients divided by `label_scale`; the
/// projection matrix is fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferentialNet {
    pub mlp: Mlp,
    pub pca: PcaBasis,
    pub label_scale: f64,
}

pub fn build_differential_net(feature_dim: usize, pca: PcaBasis, shape: NetShape, seed: u64) -> Result<DifferentialNet> {
    if pca.k() == 0 {
        return Err(Error::Config("differential network needs at least one PCA component".into()));
    }
    let mlp = Mlp::new(&shape.layer_sizes(feature_dim, pca.k()), seed)?;
    Ok(DifferentialNet {
        mlp,
        pca,
        label_scale: 1.0,
    })
}

impl DifferentialNet {
    /// Fits PCA with up to `k` components on `labels` (`d × m`), then trains
    /// the network on the scaled coefficients. Components with no variance in
    /// the labels are dropped.
    pub fn fit(
        features: &DMatrix<f64>,
        labels: &DMatrix<f64>,
        k: usize,
        shape: NetShape,
        cfg: &TrainConfig,
    ) -> Result<(Self, TrainReport)> {
        let pca = pca_fit(labels, k)?.without_null_components();
        let mut net = build_differential_net(features.nrows(), pca, shape, cfg.seed)?;
        let coeffs = net.pca.project(labels)?;
        net.label_scale = rms_scale(&coeffs);
        let report = train(&mut net.mlp, features, &(coeffs / net.label_scale), cfg)?;
        Ok((net, report))
    }

    pub fn feature_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    /// Network-space targets for `labels`.
    pub fn encode(&self, labels: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.pca.project(labels)? / self.label_scale)
    }

    /// Raw network outputs (scaled coefficients).
    pub fn forward(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.mlp.forward(features)
    }

    /// Full label vectors (`d × m`).
    pub fn predict(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.pca.reconstruct(&(self.forward(features)? * self.label_scale))
    }
}

/// Mini-network reading a slice of the feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceNet {
    pub inputs: Vec<usize>,
    pub mlp: Mlp,
}

impl SubspaceNet {
    fn gather(&self, features: &DMatrix<f64>) -> DMatrix<f64> {
        features.select_rows(&self.inputs)
    }
}

/// Feature slices used when an anchor has no influencing control: the
/// root joint's block.
pub fn default_fallback_slice(spec: &RigSpec) -> Vec<usize> {
    if spec.control_count() == 0 {
        Vec::new()
    } else {
        spec.feature_slice(0).collect()
    }
}

/// One mini-network per anchor with output dimension 3. Anchors without
/// influencing controls read `fallback` and a warning is logged.
pub fn build_subspace_nets(
    influence: &InfluenceMap,
    spec: &RigSpec,
    shape: NetShape,
    seed: u64,
    fallback: &[usize],
) -> Result<Vec<SubspaceNet>> {
    influence
        .controls
        .iter()
        .enumerate()
        .map(|(a, controls)| {
            let inputs = if controls.is_empty() {
                log::warn!("anchor {a} has no influencing control; using the fallback feature slice");
                fallback.to_vec()
            } else {
                influence.feature_indices(spec, a)
            };
            if inputs.is_empty() {
                return Err(Error::Config(format!("anchor {a} has no network inputs")));
            }
            let mlp = Mlp::new(&shape.layer_sizes(inputs.len(), 3), seed.wrapping_add(a as u64))?;
            Ok(SubspaceNet { inputs, mlp })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnchorNets {
    PerAnchor(Vec<SubspaceNet>),
    /// One network over the full feature vector with `3|P|` outputs.
    Single(SubspaceNet),
}

/// Predicts local Cartesian anchor offsets, laid out `[x₀ y₀ z₀ x₁ …]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorModel {
    pub nets: AnchorNets,
    /// One label scale per network; offsets differ in magnitude by orders
    /// between anchors.
    pub label_scales: Vec<f64>,
}

impl AnchorModel {
    pub fn anchor_count(&self) -> usize {
        match &self.nets {
            AnchorNets::PerAnchor(v) => v.len(),
            AnchorNets::Single(n) => n.mlp.output_dim() / 3,
        }
    }

    /// Trains each network with `cfg` on labels of shape `3|P| × m`, each
    /// against its own RMS-scaled targets.
    pub fn fit(nets: AnchorNets, features: &DMatrix<f64>, labels: &DMatrix<f64>, cfg: &TrainConfig) -> Result<(Self, Vec<TrainReport>)> {
        let mut reports = Vec::new();
        let mut label_scales = Vec::new();
        let nets = match nets {
            AnchorNets::PerAnchor(mut v) => {
                check_len("anchor labels", 3 * v.len(), labels.nrows())?;
                for (a, net) in v.iter_mut().enumerate() {
                    let y = labels.rows(3 * a, 3).into_owned();
                    let scale = rms_scale(&y);
                    let cfg_a = TrainConfig {
                        seed: cfg.seed.wrapping_add(a as u64),
                        ..cfg.clone()
                    };
                    let x = net.gather(features);
                    reports.push(train(&mut net.mlp, &x, &(y / scale), &cfg_a)?);
                    label_scales.push(scale);
                }
                AnchorNets::PerAnchor(v)
            }
            AnchorNets::Single(mut net) => {
                check_len("anchor labels", net.mlp.output_dim(), labels.nrows())?;
                let scale = rms_scale(labels);
                let x = net.gather(features);
                reports.push(train(&mut net.mlp, &x, &(labels / scale), cfg)?);
                label_scales.push(scale);
                AnchorNets::Single(net)
            }
        };
        Ok((Self { nets, label_scales }, reports))
    }

    pub fn predict(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let m = features.ncols();
        Ok(match &self.nets {
            AnchorNets::PerAnchor(v) => {
                let mut out = DMatrix::zeros(3 * v.len(), m);
                for ((a, net), &scale) in v.iter().enumerate().zip(&self.label_scales) {
                    out.rows_mut(3 * a, 3).copy_from(&(net.mlp.forward(&net.gather(features))? * scale));
                }
                out
            }
            AnchorNets::Single(net) => net.mlp.forward(&net.gather(features))? * self.label_scales[0],
        })
    }
}

/// Single combined network over all features for `anchors` anchors.
pub fn build_single_anchor_net(feature_dim: usize, anchors: usize, shape: NetShape, seed: u64) -> Result<SubspaceNet> {
    Ok(SubspaceNet {
        inputs: (0..feature_dim).collect(),
        mlp: Mlp::new(&shape.layer_sizes(feature_dim, 3 * anchors), seed)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::Loss;
    use crate::nn::train::{grad_check, GradCheck};
    use crate::rig::{JointSpec, NumericSpec, Range};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn spec(joints: usize, numeric: usize) -> RigSpec {
        RigSpec {
            joints: (0..joints)
                .map(|k| JointSpec {
                    name: format!("j{k}"),
                    channels: vec![],
                    rest_transform_known: true,
                })
                .collect(),
            numeric: (0..numeric)
                .map(|k| NumericSpec {
                    name: format!("c{k}"),
                    range: Range::new(-1.0, 1.0),
                    rest: 0.0,
                })
                .collect(),
            mesh_hash: String::new(),
        }
    }

    #[test]
    fn subspace_net_per_anchor_with_slice_inputs() {
        let s = spec(2, 5);
        let influence = InfluenceMap {
            controls: vec![vec![2 + 1, 2 + 4], vec![0, 2 + 1], vec![]],
        };
        let nets = build_subspace_nets(&influence, &s, NetShape::SUBSPACE, 0, &default_fallback_slice(&s)).unwrap();
        assert_eq!(nets.len(), 3);
        assert_eq!(nets[0].mlp.input_dim(), 2);
        assert_eq!(nets[1].mlp.input_dim(), 13);
        assert_eq!(nets[2].inputs, (0..12).collect::<Vec<_>>());
        assert!(nets.iter().all(|n| n.mlp.output_dim() == 3 && n.mlp.layers().len() == 4));
    }

    #[test]
    fn single_and_per_anchor_layouts_agree() {
        let features = random(7, 30, 1);
        let labels = random(6, 30, 2);
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let single = build_single_anchor_net(7, 2, NetShape::SUBSPACE, 0).unwrap();
        let (a, _) = AnchorModel::fit(AnchorNets::Single(single), &features, &labels, &cfg).unwrap();
        let influence = InfluenceMap {
            controls: vec![vec![0], vec![0]],
        };
        let per = build_subspace_nets(&influence, &spec(0, 7), NetShape::SUBSPACE, 0, &[]).unwrap();
        let (b, _) = AnchorModel::fit(AnchorNets::PerAnchor(per), &features, &labels, &cfg).unwrap();
        assert_eq!(a.anchor_count(), 2);
        assert_eq!(a.predict(&features).unwrap().shape(), b.predict(&features).unwrap().shape());
    }

    #[test]
    fn both_families_pass_gradient_checks() {
        let labels = random(30, 40, 3);
        let pca = pca_fit(&labels, 6).unwrap();
        let diff = build_differential_net(9, pca, NetShape { hidden_layers: 3, width: 24 }, 1).unwrap();
        let mini = Mlp::new(&NetShape::SUBSPACE.layer_sizes(5, 3), 2).unwrap();
        let x9 = random(9, 8, 4);
        let y6 = random(6, 8, 5) * 2.0;
        let x5 = random(5, 8, 6);
        let y3 = random(3, 8, 7) * 2.0;
        for loss in [Loss::L1, Loss::L2] {
            assert!(grad_check(&diff.mlp, &x9, &y6, loss, GradCheck::default()).unwrap() < 1e-4);
            assert!(grad_check(&mini, &x5, &y3, loss, GradCheck::default()).unwrap() < 1e-4);
        }
    }

    #[test]
    fn constant_labels_are_learned() {
        let features = random(4, 64, 8);
        let column = random(12, 1, 9);
        let labels = DMatrix::from_fn(12, 64, |i, _| column[i]);
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 16,
            loss: Loss::L1,
            ..TrainConfig::default()
        };
        let (net, _) = DifferentialNet::fit(&features, &labels, 1, NetShape { hidden_layers: 2, width: 8 }, &cfg).unwrap();
        let pred = net.predict(&features).unwrap();
        // zero-variance labels are fitted by the PCA mean alone
        assert!((pred - labels).abs().max() < 1e-8);
    }
}
