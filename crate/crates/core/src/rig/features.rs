//! Pose sampling, normalization and feature vectorization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Pose, PoseParams, Range, RigSpec, REST_JOINT};
use crate::error::{check_len, Error, Result};

/// Normalization constants fitted on training poses.
///
/// Translations of all joints share one scale, the largest translation norm
/// seen in training. Each numeric control is mapped from its range to
/// `[−1, 1]` independently.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub translation_scale: f64,
    pub numeric_offset: Vec<f64>,
    pub numeric_scale: Vec<f64>,
}

impl Normalization {
    pub fn fit<'a>(spec: &RigSpec, poses: impl IntoIterator<Item = &'a Pose>) -> Self {
        let max_t = poses
            .into_iter()
            .flat_map(|p| p.joints.iter().map(|a| a.translation.norm()))
            .fold(0.0, f64::max);
        Self {
            translation_scale: if max_t > 0.0 { max_t } else { 1.0 },
            numeric_offset: spec.numeric.iter().map(|c| c.range.mid()).collect(),
            numeric_scale: spec.numeric.iter().map(|c| c.range.half_width()).collect(),
        }
    }

    pub fn is_fitted(&self) -> bool {
        self.translation_scale > 0.0
            && self.numeric_offset.len() == self.numeric_scale.len()
            && self.numeric_scale.iter().all(|&s| s > 0.0)
    }
}

/// Flattens a pose into `12j + c` features: per joint the 9 entries of `X`
/// row-major then the scaled translation, followed by the numeric controls.
pub fn vectorize(pose: &Pose, norm: &Normalization) -> Result<Vec<f64>> {
    if !norm.is_fitted() {
        return Err(Error::Config("normalization is not fitted".into()));
    }
    check_len("numeric controls", norm.numeric_offset.len(), pose.numeric.len())?;
    let mut out = Vec::with_capacity(12 * pose.joints.len() + pose.numeric.len());
    for a in &pose.joints {
        for r in 0..3 {
            for c in 0..3 {
                out.push(a.linear[(r, c)]);
            }
        }
        out.extend((a.translation / norm.translation_scale).iter());
    }
    out.extend(
        pose.numeric
            .iter()
            .zip(&norm.numeric_offset)
            .zip(&norm.numeric_scale)
            .map(|((v, o), s)| (v - o) / s),
    );
    Ok(out)
}

/// Draws from a Gaussian centered on the range midpoint with σ = width/4,
/// rejecting samples outside the range.
pub fn truncated_gaussian(range: Range, rng: &mut impl Rng) -> f64 {
    let sigma = (range.max - range.min) / 4.0;
    let normal = Normal::new(range.mid(), sigma).expect("sigma is finite and positive");
    for _ in 0..1000 {
        let x = normal.sample(rng);
        if x >= range.min && x <= range.max {
            return x;
        }
    }
    // unreachable in practice: each draw lands inside with probability 0.95
    range.mid()
}

pub fn sample_params(spec: &RigSpec, rng: &mut impl Rng) -> PoseParams {
    let joints = spec
        .joints
        .iter()
        .map(|j| {
            let mut p = REST_JOINT;
            for c in &j.channels {
                p[c.kind.slot()] = truncated_gaussian(c.range, rng);
            }
            p
        })
        .collect();
    let numeric = spec.numeric.iter().map(|c| truncated_gaussian(c.range, rng)).collect();
    PoseParams { joints, numeric }
}

pub fn sample_pose(spec: &RigSpec, seed: u64) -> Pose {
    PoseSampler::new(spec, seed).next_pose()
}

/// Seeded stream of random poses.
pub struct PoseSampler<'a> {
    spec: &'a RigSpec,
    rng: ChaCha8Rng,
}

impl<'a> PoseSampler<'a> {
    pub fn new(spec: &'a RigSpec, seed: u64) -> Self {
        Self {
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_params(&mut self) -> PoseParams {
        sample_params(self.spec, &mut self.rng)
    }

    pub fn next_pose(&mut self) -> Pose {
        let params = self.next_params();
        self.spec.compose(&params).expect("sampled parameters match the rig spec")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rig::{Channel, ChannelKind, JointSpec, NumericSpec};

    fn spec() -> RigSpec {
        RigSpec {
            joints: vec![JointSpec {
                name: "root".into(),
                channels: vec![
                    Channel {
                        kind: ChannelKind::Ry,
                        range: Range::new(-0.5, 0.5),
                    },
                    Channel {
                        kind: ChannelKind::Tx,
                        range: Range::new(-2.0, 3.0),
                    },
                ],
                rest_transform_known: true,
            }],
            numeric: vec![
                NumericSpec {
                    name: "open".into(),
                    range: Range::new(0.0, 1.0),
                    rest: 0.0,
                },
                NumericSpec {
                    name: "thin".into(),
                    range: Range::new(0.25, 0.25 + 1e-9),
                    rest: 0.25,
                },
            ],
            mesh_hash: String::new(),
        }
    }

    #[test]
    fn truncated_gaussian_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = Range::new(0.0, 1.0);
        let xs: Vec<f64> = (0..10_000).map(|_| truncated_gaussian(r, &mut rng)).collect();
        assert!(xs.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - 0.5).abs() < 0.02, "{mean}");
        // truncation at ±2σ shrinks the spread: std of N(0,1) cut at ±2 is 0.880
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!((var.sqrt() - 0.880 * 0.25).abs() < 0.01, "{}", var.sqrt());
    }

    #[test]
    fn collapsed_range_clusters_at_midpoint() {
        let s = spec();
        let mut sampler = PoseSampler::new(&s, 3);
        for _ in 0..100 {
            let p = sampler.next_pose();
            assert!((p.numeric[1] - 0.25).abs() <= 1e-9);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = spec();
        let a: Vec<_> = {
            let mut sm = PoseSampler::new(&s, 9);
            (0..5).map(|_| sm.next_pose()).collect()
        };
        let b: Vec<_> = {
            let mut sm = PoseSampler::new(&s, 9);
            (0..5).map(|_| sm.next_pose()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn rest_encoding() {
        let s = spec();
        let rest = s.rest_pose();
        let norm = Normalization::fit(&s, [&sample_pose(&s, 1)]);
        let f = vectorize(&rest, &norm).unwrap();
        assert_eq!(f.len(), s.feature_dim());
        assert_eq!(&f[..9], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(&f[9..12], &[0.0, 0.0, 0.0]);
        // rest 0 of a [0, 1] control maps to −1
        assert_eq!(f[12], -1.0);
        assert_eq!(vectorize(&rest, &norm).unwrap(), f);
    }

    #[test]
    fn unfitted_normalization_is_an_error() {
        let s = spec();
        assert!(vectorize(&s.rest_pose(), &Normalization::default()).is_err());
    }

    #[test]
    fn translation_scale_is_largest_norm() {
        let s = spec();
        let mut params = s.rest_params();
        params.joints[0][3] = -2.0;
        let p1 = s.compose(&params).unwrap();
        params.joints[0][3] = 1.5;
        let p2 = s.compose(&params).unwrap();
        let norm = Normalization::fit(&s, [&p1, &p2]);
        assert_eq!(norm.translation_scale, 2.0);
        let f = vectorize(&p1, &norm).unwrap();
        assert_eq!(f[9], -1.0);
    }
}
