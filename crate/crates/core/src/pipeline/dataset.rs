//! Pose/label datasets and their on-disk container.
//!
//! `dataset.bin` holds a fixed header followed by one fixed-stride record per
//! sample; `dataset.json` holds the split, normalization, seeds and hashes.
//! All numbers are little-endian.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, Matrix3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_len, Error, Result};
use crate::mesh::{Space, Vec3, VertexField};
use crate::reconstruction::AnchorSet;
use crate::rig::{extract_nonlinear, vectorize, Affine, Normalization, Pose, PoseSampler, Rig, RigSpec};

pub const DATA_FILE: &str = "dataset.bin";
pub const SIDECAR_FILE: &str = "dataset.json";
const MAGIC: &[u8; 8] = b"DRIGDATA";
const VERSION: u32 = 1;
/// Fraction of samples held out for testing.
pub const TEST_FRACTION: f64 = 0.02;
/// Consecutive singular draws tolerated for one sample before giving up.
const MAX_RESAMPLES: usize = 100;
/// Keeps the split stream distinct from the pose stream of the same seed.
const SPLIT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Disjoint train/test index lists. The train list is kept in shuffled order
/// so prefixes are random subsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// `ceil(2% · count)` test samples (at least one train sample remains
    /// when `count ≥ 2`), drawn by a seeded shuffle.
    pub fn shuffled(count: usize, seed: u64) -> Self {
        let mut order: Vec<usize> = (0..count).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT));
        let mut test_len = (TEST_FRACTION * count as f64).ceil() as usize;
        if count >= 2 {
            test_len = test_len.min(count - 1);
        }
        let train = order.split_off(test_len);
        let mut test = order;
        test.sort_unstable();
        Self { train, test }
    }

    /// First `⌈fraction · |train|⌉` train samples; the test list is kept.
    pub fn with_train_fraction(&self, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("train fraction {fraction} not in (0, 1]")));
        }
        let keep = ((fraction * self.train.len() as f64).ceil() as usize).max(1);
        Ok(Self {
            train: self.train[..keep.min(self.train.len())].to_vec(),
            test: self.test.clone(),
        })
    }

    /// SHA-256 of the test indices, used to assert that compared methods saw
    /// the same held-out poses.
    pub fn test_hash(&self) -> String {
        let mut h = Sha256::new();
        for &i in &self.test {
            h.update((i as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Disjoint, in-range and covering all `count` samples.
    pub fn validate(&self, count: usize) -> Result<()> {
        let seen = self.marked(count)?;
        if seen.iter().any(|s| !s) {
            return Err(Error::Format("split does not cover every sample".into()));
        }
        Ok(())
    }

    /// Disjoint and in range; samples may be left out.
    pub fn validate_subset(&self, count: usize) -> Result<()> {
        self.marked(count).map(|_| ())
    }

    fn marked(&self, count: usize) -> Result<Vec<bool>> {
        let mut seen = vec![false; count];
        for &i in self.train.iter().chain(&self.test) {
            if i >= count || seen[i] {
                return Err(Error::Format(format!("split index {i} repeated or out of range")));
            }
            seen[i] = true;
        }
        Ok(seen)
    }
}

/// Sampled poses with their nonlinear labels. Sample `s` is column `s` of
/// each matrix; vertex fields are flattened `[x₀ y₀ z₀ x₁ …]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: RigSpec,
    pub poses: Vec<Pose>,
    /// `F × count`, vectorized with `normalization`.
    pub features: DMatrix<f64>,
    /// Local nonlinear offsets `v_nl`, `3n × count`.
    pub local: DMatrix<f64>,
    /// Uniform-Laplacian differentials of `local`, `3n × count`.
    pub delta: DMatrix<f64>,
    /// `local` at the anchors, `3|P| × count`.
    pub anchor_targets: DMatrix<f64>,
    pub anchors: AnchorSet,
    pub split: Split,
    pub normalization: Normalization,
    pub seed: u64,
    pub mesh_hash: String,
    /// Singular draws replaced during generation.
    pub resamples: usize,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    version: u32,
    seed: u64,
    count: usize,
    mesh_hash: String,
    spec_hash: String,
    spec: RigSpec,
    normalization: Normalization,
    anchors: AnchorSet,
    split: Split,
    resamples: usize,
    data_sha256: String,
}

fn spec_hash(spec: &RigSpec) -> Result<String> {
    Ok(hex::encode(Sha256::digest(spec.to_json()?.as_bytes())))
}

fn features_of(poses: &[Pose], norm: &Normalization, dim: usize) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(dim, poses.len());
    for (s, p) in poses.iter().enumerate() {
        let x = vectorize(p, norm)?;
        check_len("feature vector", dim, x.len())?;
        out.column_mut(s).copy_from_slice(&x);
    }
    Ok(out)
}

/// Samples `count` poses, extracts their labels by probing the rig, splits
/// 98/2 and fits the normalization on the train split. Poses with a singular
/// skinning transform are redrawn.
pub fn generate_dataset(rig: &dyn Rig, count: usize, seed: u64, anchors: &AnchorSet) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::Config("dataset needs at least one pose".into()));
    }
    let spec = rig.spec().clone();
    let mesh = rig.mesh();
    let n = mesh.vertex_count();
    anchors.validate(n)?;
    let mut sampler = PoseSampler::new(&spec, seed);
    let mut poses = Vec::with_capacity(count);
    let mut local = DMatrix::zeros(3 * n, count);
    let mut delta = DMatrix::zeros(3 * n, count);
    let mut resamples = 0;
    for s in 0..count {
        let mut attempts = 0;
        let sample = loop {
            let pose = sampler.next_pose();
            match extract_nonlinear(rig, &pose, s) {
                Ok(sample) => break (pose, sample),
                Err(e @ Error::SingularTransform { .. }) => {
                    attempts += 1;
                    resamples += 1;
                    if attempts >= MAX_RESAMPLES {
                        return Err(e);
                    }
                }
                Err(e) => return Err(e),
            }
        };
        let (pose, sample) = sample;
        local.column_mut(s).copy_from_slice(&sample.local.flatten());
        delta.column_mut(s).copy_from_slice(&sample.delta.flatten());
        poses.push(pose);
    }
    if resamples > 0 {
        log::info!("resampled {resamples} poses with singular skinning transforms");
    }
    let split = Split::shuffled(count, seed);
    let normalization = Normalization::fit(&spec, split.train.iter().map(|&i| &poses[i]));
    let features = features_of(&poses, &normalization, spec.feature_dim())?;
    let anchor_targets = gather_anchor_rows(&local, anchors);
    Ok(Dataset {
        spec,
        poses,
        features,
        local,
        delta,
        anchor_targets,
        anchors: anchors.clone(),
        split,
        normalization,
        seed,
        mesh_hash: mesh.content_hash(),
        resamples,
    })
}

/// Rows `3p..3p+3` of every anchor `p`.
pub fn gather_anchor_rows(field: &DMatrix<f64>, anchors: &AnchorSet) -> DMatrix<f64> {
    let rows: Vec<usize> = anchors.indices.iter().flat_map(|&i| 3 * i..3 * i + 3).collect();
    field.select_rows(&rows)
}

/// Column `s` of a flattened field matrix.
pub fn column_field(m: &DMatrix<f64>, s: usize, space: Space) -> VertexField {
    VertexField::from_flat(m.column(s).as_slice(), space).expect("row count is a multiple of 3")
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn vertex_count(&self) -> usize {
        self.local.nrows() / 3
    }

    pub fn local_field(&self, s: usize) -> VertexField {
        column_field(&self.local, s, Space::Cartesian)
    }

    pub fn delta_field(&self, s: usize) -> VertexField {
        column_field(&self.delta, s, Space::Differential)
    }

    /// Same samples with a different split; the normalization is refitted
    /// on the new train list and the features recomputed.
    pub fn resplit(&self, split: Split) -> Result<Self> {
        split.validate_subset(self.len())?;
        let normalization = Normalization::fit(&self.spec, split.train.iter().map(|&i| &self.poses[i]));
        let features = features_of(&self.poses, &normalization, self.spec.feature_dim())?;
        Ok(Self {
            features,
            normalization,
            split,
            ..self.clone()
        })
    }

    fn record_stride(&self) -> usize {
        let j = self.spec.joint_count();
        let c = self.spec.numeric_count();
        12 * j + c + self.features.nrows() + 2 * self.local.nrows() + self.anchor_targets.nrows()
    }

    fn encode(&self) -> Vec<u8> {
        let n = self.vertex_count();
        let mut out = Vec::with_capacity(48 + 8 * self.record_stride() * self.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [
            n,
            self.spec.joint_count(),
            self.spec.numeric_count(),
            self.anchors.len(),
            self.len(),
        ] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        let mut put = |x: f64| out.extend_from_slice(&x.to_le_bytes());
        for (s, pose) in self.poses.iter().enumerate() {
            for a in &pose.joints {
                for r in 0..3 {
                    for c in 0..3 {
                        put(a.linear[(r, c)]);
                    }
                }
                a.translation.iter().for_each(|&x| put(x));
            }
            pose.numeric.iter().for_each(|&x| put(x));
            for m in [&self.features, &self.local, &self.delta, &self.anchor_targets] {
                m.column(s).iter().for_each(|&x| put(x));
            }
        }
        out
    }

    /// Writes `dataset.bin` and `dataset.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let bytes = self.encode();
        let sidecar = Sidecar {
            format: "deltarig-dataset".into(),
            version: VERSION,
            seed: self.seed,
            count: self.len(),
            mesh_hash: self.mesh_hash.clone(),
            spec_hash: spec_hash(&self.spec)?,
            spec: self.spec.clone(),
            normalization: self.normalization.clone(),
            anchors: self.anchors.clone(),
            split: self.split.clone(),
            resamples: self.resamples,
            data_sha256: hex::encode(Sha256::digest(&bytes)),
        };
        let path = dir.join(DATA_FILE);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&bytes).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))?;
        let side = dir.join(SIDECAR_FILE);
        fs::write(&side, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&side, e))
    }

    /// Reads a dataset written by [`save`](Self::save). When given, the mesh
    /// hash must match the one recorded at generation.
    pub fn load(dir: impl AsRef<Path>, expected_mesh_hash: Option<&str>) -> Result<Self> {
        let dir = dir.as_ref();
        let side = dir.join(SIDECAR_FILE);
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: Sidecar = serde_json::from_str(&text)?;
        if let Some(h) = expected_mesh_hash {
            if h != meta.mesh_hash {
                return Err(Error::HashMismatch {
                    context: "dataset mesh",
                    expected: h.into(),
                    found: meta.mesh_hash,
                });
            }
        }
        let found = spec_hash(&meta.spec)?;
        if found != meta.spec_hash {
            return Err(Error::HashMismatch {
                context: "dataset rig spec",
                expected: meta.spec_hash,
                found,
            });
        }
        let path = dir.join(DATA_FILE);
        let mut bytes = Vec::new();
        fs::File::open(&path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(&path, e))?;
        let found = hex::encode(Sha256::digest(&bytes));
        if found != meta.data_sha256 {
            return Err(Error::HashMismatch {
                context: "dataset records",
                expected: meta.data_sha256,
                found,
            });
        }
        if bytes.len() < 52 || &bytes[..8] != MAGIC {
            return Err(Error::Format(format!("{} is not a dataset container", path.display())));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let header: Vec<usize> = bytes[12..52]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
            .collect();
        let (n, j, c, p, count) = (header[0], header[1], header[2], header[3], header[4]);
        check_len("dataset joints", meta.spec.joint_count(), j)?;
        check_len("dataset numeric controls", meta.spec.numeric_count(), c)?;
        check_len("dataset anchors", meta.anchors.len(), p)?;
        check_len("dataset samples", meta.count, count)?;
        meta.anchors.validate(n)?;
        meta.split.validate(count)?;
        let f = 12 * j + c;
        let stride = 12 * j + c + f + 6 * n + 3 * p;
        let body = &bytes[52..];
        check_len("dataset record bytes", 8 * stride * count, body.len())?;

        let mut values = body.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")));
        let mut next = |len: usize| -> Vec<f64> { values.by_ref().take(len).collect() };
        let mut poses = Vec::with_capacity(count);
        let mut features = DMatrix::zeros(f, count);
        let mut local = DMatrix::zeros(3 * n, count);
        let mut delta = DMatrix::zeros(3 * n, count);
        let mut anchor_targets = DMatrix::zeros(3 * p, count);
        for s in 0..count {
            let joints = (0..j)
                .map(|_| {
                    let v = next(12);
                    Affine::new(Matrix3::from_row_slice(&v[..9]), Vec3::new(v[9], v[10], v[11]))
                })
                .collect();
            poses.push(Pose {
                joints,
                numeric: next(c),
            });
            features.column_mut(s).copy_from_slice(&next(f));
            local.column_mut(s).copy_from_slice(&next(3 * n));
            delta.column_mut(s).copy_from_slice(&next(3 * n));
            anchor_targets.column_mut(s).copy_from_slice(&next(3 * p));
        }
        Ok(Dataset {
            spec: meta.spec,
            poses,
            features,
            local,
            delta,
            anchor_targets,
            anchors: meta.anchors,
            split: meta.split,
            normalization: meta.normalization,
            seed: meta.seed,
            mesh_hash: meta.mesh_hash,
            resamples: meta.resamples,
        })
    }
}
