//! Trained model bundles: a JSON manifest plus a little-endian f64 blob.
//!
//! Blob layout: the differential network's parameters (layer order, weights
//! column-major then bias), the PCA mean, the PCA components row by row, then
//! each anchor network's parameters in anchor order.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mlp::Mlp;
use super::networks::{AnchorModel, AnchorNets, DifferentialNet, SubspaceNet};
use super::pca::PcaBasis;
use crate::error::{check_len, Error, Result};
use crate::mesh::{Space, Vec3, VertexField};
use crate::reconstruction::AnchorSet;
use crate::rig::{vectorize, InfluenceMap, Normalization, Pose, RigSpec};

pub const MANIFEST_FILE: &str = "bundle.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
const FORMAT: &str = "deltarig-model";
const VERSION: u32 = 1;

/// Everything needed to evaluate the learned deformer for a pose.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub spec: RigSpec,
    pub normalization: Normalization,
    pub anchors: AnchorSet,
    pub influence: InfluenceMap,
    /// Predicts degree-weighted differential coordinates of the local
    /// nonlinear offsets.
    pub differential: DifferentialNet,
    /// Predicts local nonlinear offsets at the anchors.
    pub anchor_model: AnchorModel,
    pub mesh_hash: String,
    /// Free-form training metadata (configs, loss traces).
    pub training: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct NetHeader {
    inputs: Vec<usize>,
    sizes: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    mesh_hash: String,
    spec: RigSpec,
    normalization: Normalization,
    anchors: AnchorSet,
    influence: InfluenceMap,
    differential_sizes: Vec<usize>,
    differential_label_scale: f64,
    pca_components: usize,
    pca_dim: usize,
    pca_variances: Vec<f64>,
    anchor_kind: String,
    anchor_label_scales: Vec<f64>,
    anchor_nets: Vec<NetHeader>,
    training: serde_json::Value,
    weights_len: usize,
    weights_sha256: String,
}

fn blob_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ModelBundle {
    /// Writes `bundle.json` and `weights.bin` into `dir`, creating it.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let mut weights = self.differential.mlp.flat_params();
        weights.extend(self.differential.pca.mean.iter());
        let c = &self.differential.pca.components;
        for r in 0..c.nrows() {
            weights.extend(c.row(r).iter());
        }
        let (kind, nets): (&str, Vec<&SubspaceNet>) = match &self.anchor_model.nets {
            AnchorNets::PerAnchor(v) => ("per_anchor", v.iter().collect()),
            AnchorNets::Single(n) => ("single", vec![n]),
        };
        for n in &nets {
            weights.extend(n.mlp.flat_params());
        }
        let bytes: Vec<u8> = weights.iter().flat_map(|w| w.to_le_bytes()).collect();

        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            mesh_hash: self.mesh_hash.clone(),
            spec: self.spec.clone(),
            normalization: self.normalization.clone(),
            anchors: self.anchors.clone(),
            influence: self.influence.clone(),
            differential_sizes: self.differential.mlp.sizes(),
            differential_label_scale: self.differential.label_scale,
            pca_components: self.differential.pca.k(),
            pca_dim: self.differential.pca.dim(),
            pca_variances: self.differential.pca.variances.clone(),
            anchor_kind: kind.into(),
            anchor_label_scales: self.anchor_model.label_scales.clone(),
            anchor_nets: nets
                .iter()
                .map(|n| NetHeader {
                    inputs: n.inputs.clone(),
                    sizes: n.mlp.sizes(),
                })
                .collect(),
            training: self.training.clone(),
            weights_len: weights.len(),
            weights_sha256: blob_hash(&bytes),
        };
        let wpath = dir.join(WEIGHTS_FILE);
        fs::write(&wpath, &bytes).map_err(|e| Error::io(&wpath, e))?;
        let mpath = dir.join(MANIFEST_FILE);
        fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))
    }

    /// Reads a bundle written by [`save`](Self::save), verifying the blob
    /// hash and, when given, the mesh hash.
    pub fn load(dir: impl AsRef<Path>, expected_mesh_hash: Option<&str>) -> Result<Self> {
        let dir = dir.as_ref();
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.format != FORMAT || m.version != VERSION {
            return Err(Error::Format(format!("unsupported bundle {} v{}", m.format, m.version)));
        }
        if let Some(h) = expected_mesh_hash {
            if h != m.mesh_hash {
                return Err(Error::HashMismatch {
                    context: "model bundle mesh",
                    expected: h.to_string(),
                    found: m.mesh_hash,
                });
            }
        }
        let wpath = dir.join(WEIGHTS_FILE);
        let bytes = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
        let found = blob_hash(&bytes);
        if found != m.weights_sha256 {
            return Err(Error::HashMismatch {
                context: "model weights",
                expected: m.weights_sha256,
                found,
            });
        }
        check_len("model weights", m.weights_len * 8, bytes.len())?;
        let weights: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut at = 0;
        let mut take = |n: usize| -> Result<&[f64]> {
            let s = weights
                .get(at..at + n)
                .ok_or_else(|| Error::Format("model weights are truncated".into()))?;
            at += n;
            Ok(s)
        };

        let mut mlp = Mlp::zeros(&m.differential_sizes)?;
        mlp.set_flat_params(take(mlp.param_count())?)?;
        let (k, d) = (m.pca_components, m.pca_dim);
        let mean = DVector::from_column_slice(take(d)?);
        let components = DMatrix::from_row_slice(k, d, take(k * d)?);
        check_len("pca variances", k, m.pca_variances.len())?;
        let differential = DifferentialNet {
            mlp,
            pca: PcaBasis {
                mean,
                components,
                variances: m.pca_variances,
            },
            label_scale: m.differential_label_scale,
        };

        let mut nets = Vec::with_capacity(m.anchor_nets.len());
        for h in m.anchor_nets {
            let mut mlp = Mlp::zeros(&h.sizes)?;
            mlp.set_flat_params(take(mlp.param_count())?)?;
            check_len("anchor network inputs", mlp.input_dim(), h.inputs.len())?;
            nets.push(SubspaceNet { inputs: h.inputs, mlp });
        }
        if at != weights.len() {
            return Err(Error::Format(format!("{} trailing weights", weights.len() - at)));
        }
        check_len("anchor label scales", nets.len(), m.anchor_label_scales.len())?;
        let nets = match m.anchor_kind.as_str() {
            "per_anchor" => AnchorNets::PerAnchor(nets),
            "single" if nets.len() == 1 => AnchorNets::Single(nets.pop().expect("one net")),
            other => return Err(Error::Format(format!("unknown anchor model kind {other:?}"))),
        };
        let bundle = ModelBundle {
            spec: m.spec,
            normalization: m.normalization,
            anchors: m.anchors,
            influence: m.influence,
            differential,
            anchor_model: AnchorModel {
                nets,
                label_scales: m.anchor_label_scales,
            },
            mesh_hash: m.mesh_hash,
            training: m.training,
        };
        bundle.check()?;
        Ok(bundle)
    }

    /// Internal consistency of dimensions.
    pub fn check(&self) -> Result<()> {
        self.spec.validate()?;
        let f = self.spec.feature_dim();
        check_len("differential network inputs", f, self.differential.feature_dim())?;
        check_len("anchor model anchors", self.anchors.indices.len(), self.anchor_model.anchor_count())?;
        check_len("influence map anchors", self.anchors.indices.len(), self.influence.len())?;
        if !self.differential.pca.dim().is_multiple_of(3) {
            return Err(Error::Format("differential label dimension is not a multiple of 3".into()));
        }
        let nets: Vec<&SubspaceNet> = match &self.anchor_model.nets {
            AnchorNets::PerAnchor(v) => v.iter().collect(),
            AnchorNets::Single(n) => vec![n],
        };
        for n in nets {
            if let Some(&i) = n.inputs.iter().find(|&&i| i >= f) {
                return Err(Error::IndexOutOfRange {
                    context: "feature vector",
                    index: i,
                    len: f,
                });
            }
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.differential.pca.dim() / 3
    }
}

/// Network outputs for one pose.
#[derive(Debug, Clone, PartialEq)]
pub struct BundlePrediction {
    /// Degree-weighted differential coordinates `L_s·v_nl`.
    pub weighted_delta: VertexField,
    /// Local nonlinear offsets at the anchors.
    pub anchor_offsets: Vec<Vec3>,
}

/// Runs both network families on feature columns (`F × m`).
pub fn predict_features(bundle: &ModelBundle, features: &DMatrix<f64>) -> Result<Vec<BundlePrediction>> {
    let diff = bundle.differential.predict(features)?;
    let anchors = bundle.anchor_model.predict(features)?;
    (0..features.ncols())
        .map(|j| {
            let weighted_delta = VertexField::from_flat(diff.column(j).as_slice(), Space::Differential)?;
            let a = anchors.column(j);
            let anchor_offsets = (0..a.len() / 3).map(|p| Vec3::new(a[3 * p], a[3 * p + 1], a[3 * p + 2])).collect();
            Ok(BundlePrediction {
                weighted_delta,
                anchor_offsets,
            })
        })
        .collect()
}

pub fn predict_bundle(bundle: &ModelBundle, pose: &Pose) -> Result<BundlePrediction> {
    bundle.spec.check_pose(pose)?;
    let x = vectorize(pose, &bundle.normalization)?;
    let features = DMatrix::from_column_slice(x.len(), 1, &x);
    Ok(predict_features(bundle, &features)?.pop().expect("one column"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::networks::{build_differential_net, build_single_anchor_net, build_subspace_nets, NetShape};
    use crate::nn::pca::pca_fit;
    use crate::rig::{ChannelKind, Channel, JointSpec, NumericSpec, Range};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bundle(single: bool) -> ModelBundle {
        let spec = RigSpec {
            joints: vec![JointSpec {
                name: "root".into(),
                channels: vec![Channel {
                    kind: ChannelKind::Rz,
                    range: Range::new(-1.0, 1.0),
                }],
                rest_transform_known: true,
            }],
            numeric: vec![NumericSpec {
                name: "smile".into(),
                range: Range::new(0.0, 1.0),
                rest: 0.0,
            }],
            mesh_hash: "abc".into(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let labels = DMatrix::from_fn(15, 20, |_, _| rng.random_range(-1.0..1.0));
        let differential = build_differential_net(13, pca_fit(&labels, 4).unwrap(), NetShape { hidden_layers: 2, width: 6 }, 1).unwrap();
        let anchors = AnchorSet::uniform(vec![0, 3]);
        let influence = InfluenceMap {
            controls: vec![vec![1], vec![0, 1]],
        };
        let (nets, label_scales) = if single {
            (AnchorNets::Single(build_single_anchor_net(13, 2, NetShape::SUBSPACE, 2).unwrap()), vec![0.3])
        } else {
            (AnchorNets::PerAnchor(build_subspace_nets(&influence, &spec, NetShape::SUBSPACE, 2, &[]).unwrap()), vec![0.3, 0.7])
        };
        let normalization = Normalization {
            translation_scale: 2.0,
            numeric_offset: vec![0.5],
            numeric_scale: vec![0.5],
        };
        ModelBundle {
            spec,
            normalization,
            anchors,
            influence,
            differential,
            anchor_model: AnchorModel { nets, label_scales },
            mesh_hash: "abc".into(),
            training: serde_json::json!({"epochs": 3}),
        }
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        for single in [false, true] {
            let b = bundle(single);
            let dir = tempfile::tempdir().unwrap();
            b.save(dir.path()).unwrap();
            let back = ModelBundle::load(dir.path(), Some("abc")).unwrap();
            assert_eq!(back, b);
            let pose = b.spec.rest_pose();
            assert_eq!(predict_bundle(&back, &pose).unwrap(), predict_bundle(&b, &pose).unwrap());
        }
    }

    #[test]
    fn tampering_is_detected() {
        let b = bundle(false);
        let dir = tempfile::tempdir().unwrap();
        b.save(dir.path()).unwrap();
        assert!(matches!(
            ModelBundle::load(dir.path(), Some("other")),
            Err(Error::HashMismatch { .. })
        ));
        let w = dir.path().join(WEIGHTS_FILE);
        let mut bytes = fs::read(&w).unwrap();
        bytes[10] ^= 1;
        fs::write(&w, bytes).unwrap();
        assert!(matches!(ModelBundle::load(dir.path(), None), Err(Error::HashMismatch { .. })));
    }

    #[test]
    fn prediction_shapes() {
        let b = bundle(false);
        let p = predict_bundle(&b, &b.spec.rest_pose()).unwrap();
        assert_eq!(p.weighted_delta.len(), 5);
        assert_eq!(p.anchor_offsets.len(), 2);
        assert_eq!(b.vertex_count(), 5);
    }
}
