//! Test-split evaluation of the trained model and the comparison methods.
//!
//! Every method predicts local offsets `v_nl` for the test poses; the final
//! positions `Tᵢ(vᵢ + v̂_nl,ᵢ)` are compared against the rig's own output.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::metrics::{reconstruction_errors, ErrorReport};
use crate::error::{check_len, Error, Result};
use crate::mesh::{to_weighted_differential, Mesh, Space, VertexField};
use crate::nn::{bundle::predict_features, pca_fit, DifferentialNet, ModelBundle, PcaBasis};
use crate::pipeline::dataset::{column_field, Dataset};
use crate::pipeline::training::{train_features, ModelConfig};
use crate::pipeline::{check_hashes, final_positions, reconstruct_local, rig_transforms};
use crate::reconstruction::FactorizedSystem;
use crate::rig::{vectorize, Affine, Injection, Normalization, Rig};

/// Ridge added to the normal equations when the feature Gram matrix is
/// rank deficient.
pub const RIDGE: f64 = 1e-8;

/// Ground truth for the test split, shared by every method.
pub struct EvalContext<'a> {
    pub rig: &'a dyn Rig,
    pub dataset: &'a Dataset,
    transforms: Vec<Vec<Affine>>,
    truth: Vec<VertexField>,
}

impl<'a> EvalContext<'a> {
    pub fn new(rig: &'a dyn Rig, dataset: &'a Dataset) -> Result<Self> {
        if dataset.mesh_hash != rig.mesh().content_hash() {
            return Err(Error::HashMismatch {
                context: "dataset mesh",
                expected: rig.mesh().content_hash(),
                found: dataset.mesh_hash.clone(),
            });
        }
        let mut transforms = Vec::with_capacity(dataset.split.test.len());
        let mut truth = Vec::with_capacity(dataset.split.test.len());
        for &s in &dataset.split.test {
            let pose = &dataset.poses[s];
            transforms.push(rig_transforms(rig, pose)?);
            truth.push(rig.evaluate(pose, &Injection::None)?);
        }
        Ok(Self {
            rig,
            dataset,
            transforms,
            truth,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        self.rig.mesh()
    }

    pub fn test(&self) -> &[usize] {
        &self.dataset.split.test
    }

    /// Scores predicted local offsets, one per test pose in split order.
    pub fn score(&self, predicted_local: &[VertexField]) -> Result<ErrorReport> {
        check_len("test predictions", self.truth.len(), predicted_local.len())?;
        let mut report = ErrorReport::new();
        for ((local, t), truth) in predicted_local.iter().zip(&self.transforms).zip(&self.truth) {
            let positions = final_positions(self.mesh(), t, local)?;
            reconstruction_errors(&positions, truth, &mut report)?;
        }
        report.split_hash = Some(self.dataset.split.test_hash());
        Ok(report)
    }

    /// Test features under `norm`, one column per test pose.
    pub fn features(&self, norm: &Normalization) -> Result<DMatrix<f64>> {
        let f = self.dataset.spec.feature_dim();
        let mut x = DMatrix::zeros(f, self.test().len());
        for (col, &s) in self.test().iter().enumerate() {
            x.column_mut(col).copy_from_slice(&vectorize(&self.dataset.poses[s], norm)?);
        }
        Ok(x)
    }

    /// Ground-truth local offsets of the test split, `3n × |test|`.
    pub fn local_labels(&self) -> DMatrix<f64> {
        self.dataset.local.select_columns(self.test())
    }
}

fn mse(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm_squared() / a.len().max(1) as f64
}

fn columns_to_fields(m: &DMatrix<f64>) -> Vec<VertexField> {
    (0..m.ncols()).map(|j| column_field(m, j, Space::Cartesian)).collect()
}

/// The trained model: networks, reconstruction and skinning.
pub fn evaluate_bundle(ctx: &EvalContext<'_>, bundle: &ModelBundle, sys: &FactorizedSystem) -> Result<ErrorReport> {
    check_hashes(bundle, sys, ctx.mesh())?;
    let x = ctx.features(&bundle.normalization)?;
    let outputs = predict_features(bundle, &x)?;
    let mut local = Vec::with_capacity(outputs.len());
    let mut diff_se = 0.0;
    let mut anchor_se = 0.0;
    let mut anchor_count = 0;
    for (o, &s) in outputs.iter().zip(ctx.test()) {
        let truth_local = ctx.dataset.local_field(s);
        let truth_weighted = to_weighted_differential(ctx.mesh(), &truth_local)?;
        diff_se += o
            .weighted_delta
            .values
            .iter()
            .zip(&truth_weighted.values)
            .map(|(p, t)| (p - t).norm_squared())
            .sum::<f64>();
        for (p, &i) in o.anchor_offsets.iter().zip(&bundle.anchors.indices) {
            anchor_se += (p - truth_local.values[i]).norm_squared();
            anchor_count += 3;
        }
        local.push(reconstruct_local(o, sys)?);
    }
    let mut report = ctx.score(&local)?;
    let n = ctx.mesh().vertex_count();
    report.prediction_mse = Some(diff_se / (3 * n * outputs.len()).max(1) as f64);
    report.anchor_mse = Some(anchor_se / anchor_count.max(1) as f64);
    Ok(report)
}

/// Linear skinning alone: `v̂_nl = 0`.
pub fn baseline_lbs(ctx: &EvalContext<'_>) -> Result<ErrorReport> {
    let n = ctx.mesh().vertex_count();
    let zeros = vec![VertexField::zeros(n, Space::Cartesian); ctx.test().len()];
    let mut report = ctx.score(&zeros)?;
    report.prediction_mse = Some(ctx.local_labels().norm_squared() / (3 * n * ctx.test().len()).max(1) as f64);
    Ok(report)
}

/// Linear map from features to PCA coefficients of Cartesian `v_nl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaRegression {
    pub pca: PcaBasis,
    pub normalization: Normalization,
    /// `k × (F + 1)`; the last column is the intercept.
    pub weights: DMatrix<f64>,
    /// Whether the ridge term was needed.
    pub regularized: bool,
}

impl PcaRegression {
    pub fn fit(dataset: &Dataset, k: usize) -> Result<Self> {
        let (normalization, x) = train_features(dataset)?;
        let y = dataset.local.select_columns(&dataset.split.train);
        let pca = pca_fit(&y, k)?;
        let c = pca.project(&y)?;
        let xa = augment(&x);
        let mut gram = &xa * xa.transpose();
        let rhs = &c * xa.transpose();
        let mut regularized = false;
        let chol = match gram.clone().cholesky().filter(well_conditioned) {
            Some(ch) => ch,
            None => {
                regularized = true;
                log::info!("feature Gram matrix is rank deficient; adding a {RIDGE:e} ridge");
                for i in 0..gram.nrows() {
                    gram[(i, i)] += RIDGE;
                }
                gram.cholesky()
                    .ok_or(Error::RankDeficient { column: 0, pivot: 0.0 })?
            }
        };
        // W·G = C·Xᵀ  ⇔  G·Wᵀ = X·Cᵀ
        let weights = chol.solve(&rhs.transpose()).transpose();
        Ok(Self {
            pca,
            normalization,
            weights,
            regularized,
        })
    }

    /// Predicted local offsets, `3n × m`.
    pub fn predict(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let coeffs = &self.weights * augment(features);
        self.pca.reconstruct(&coeffs)
    }
}

fn augment(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_row(x.nrows(), 1.0)
}

fn well_conditioned(ch: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> bool {
    let d: DVector<f64> = ch.l_dirty().diagonal();
    let max = d.max();
    let min = d.min();
    // pivot ratio squared approximates the Gram condition number
    min > 0.0 && (min / max).powi(2) > 1e-12
}

pub fn baseline_pca_regression(ctx: &EvalContext<'_>, k: usize) -> Result<ErrorReport> {
    let model = PcaRegression::fit(ctx.dataset, k)?;
    let pred = model.predict(&ctx.features(&model.normalization)?)?;
    let mut report = ctx.score(&columns_to_fields(&pred))?;
    report.prediction_mse = Some(mse(&pred, &ctx.local_labels()));
    Ok(report)
}

/// Records what a [`baseline_local`] run shared with the main model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalAudit {
    pub model: ModelConfig,
    pub label_space: String,
    pub components: usize,
}

/// The differential architecture trained directly on Cartesian `v_nl`, with
/// no reconstruction step.
pub fn baseline_local(ctx: &EvalContext<'_>, cfg: &ModelConfig) -> Result<(ErrorReport, LocalAudit)> {
    let (normalization, x) = train_features(ctx.dataset)?;
    let y = ctx.dataset.local.select_columns(&ctx.dataset.split.train);
    let n = ctx.mesh().vertex_count();
    let k = cfg.component_count(n, y.ncols());
    let (net, _) = DifferentialNet::fit(&x, &y, k, cfg.differential_shape, &cfg.differential_train)?;
    let pred = net.predict(&ctx.features(&normalization)?)?;
    let mut report = ctx.score(&columns_to_fields(&pred))?;
    report.prediction_mse = Some(mse(&pred, &ctx.local_labels()));
    Ok((
        report,
        LocalAudit {
            model: cfg.clone(),
            label_space: "cartesian".into(),
            components: k,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::generate_dataset;
    use crate::reconstruction::AnchorSet;
    use crate::rig::{SyntheticConfig, SyntheticRig};

    fn rig(deformers: bool) -> SyntheticRig {
        let mut r = SyntheticRig::build(&SyntheticConfig {
            vertices: 300,
            numeric: 6,
            ..SyntheticConfig::face()
        })
        .unwrap();
        r.set_deformers_enabled(deformers);
        r
    }

    #[test]
    fn lbs_baseline_is_exact_on_a_pure_skinning_rig() {
        let r = rig(false);
        let d = generate_dataset(&r, 60, 2, &AnchorSet::uniform(vec![0])).unwrap();
        let ctx = EvalContext::new(&r, &d).unwrap();
        let report = baseline_lbs(&ctx).unwrap();
        assert_eq!(report.poses, d.split.test.len());
        assert!(report.max() < 1e-9);
    }

    #[test]
    fn lbs_baseline_error_is_the_skinned_offset() {
        let r = rig(true);
        let d = generate_dataset(&r, 60, 3, &AnchorSet::uniform(vec![0])).unwrap();
        let ctx = EvalContext::new(&r, &d).unwrap();
        let report = baseline_lbs(&ctx).unwrap();
        assert!(report.mean() > 0.0);
        for (p, &s) in d.split.test.iter().enumerate() {
            let t = rig_transforms(&r, &d.poses[s]).unwrap();
            let local = d.local_field(s);
            for (i, e) in report.pose_errors(p).iter().enumerate() {
                let expected = (t[i].linear * local.values[i]).norm();
                assert!((e - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn regression_recovers_linear_labels() {
        let r = rig(true);
        let mut d = generate_dataset(&r, 120, 4, &AnchorSet::uniform(vec![0])).unwrap();
        // labels replaced by an exact linear function of the features
        let n3 = d.local.nrows();
        let f = d.features.nrows();
        let map = DMatrix::from_fn(n3, f, |i, j| (((i * 31 + j * 17) % 13) as f64 - 6.0) * 1e-3);
        let map = &map * DMatrix::from_fn(f, 4, |i, j| ((i + 3 * j) % 5) as f64 - 2.0);
        let low = DMatrix::from_fn(4, f, |i, j| ((i * 7 + j) % 3) as f64 - 1.0);
        d.local = &map * &low * &d.features;
        let model = PcaRegression::fit(&d, 4).unwrap();
        let pred = model.predict(&d.features.select_columns(&d.split.test)).unwrap();
        let err = (pred - d.local.select_columns(&d.split.test)).abs().max();
        assert!(err < 1e-6, "{err} {}", model.regularized);
    }

    #[test]
    fn zero_components_predict_the_training_mean() {
        let r = rig(true);
        let d = generate_dataset(&r, 40, 5, &AnchorSet::uniform(vec![0])).unwrap();
        let model = PcaRegression::fit(&d, 0).unwrap();
        let pred = model.predict(&d.features.select_columns(&d.split.test)).unwrap();
        let mean = d.local.select_columns(&d.split.train).column_mean();
        for c in pred.column_iter() {
            assert!((c - &mean).abs().max() < 1e-12);
        }
    }
}
