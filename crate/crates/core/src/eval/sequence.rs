//! Smooth keyframed pose sequences, standing in for animated shots.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::{reconstruction_errors, ErrorReport};
use crate::error::{Error, Result};
use crate::nn::ModelBundle;
use crate::pipeline::predict_full;
use crate::reconstruction::FactorizedSystem;
use crate::rig::{sample_params, Injection, Pose, PoseParams, Rig, RigSpec};

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn lerp_params(a: &PoseParams, b: &PoseParams, t: f64) -> PoseParams {
    let mix = |x: f64, y: f64| x + (y - x) * t;
    PoseParams {
        joints: a
            .joints
            .iter()
            .zip(&b.joints)
            .map(|(p, q)| std::array::from_fn(|k| mix(p[k], q[k])))
            .collect(),
        numeric: a.numeric.iter().zip(&b.numeric).map(|(&x, &y)| mix(x, y)).collect(),
    }
}

/// `keys` random keyframes, starting from the rest pose, joined by
/// `frames_per_key` smoothstep-eased in-betweens each.
pub fn keyframe_sequence(spec: &RigSpec, keys: usize, frames_per_key: usize, seed: u64) -> Result<Vec<Pose>> {
    if keys == 0 || frames_per_key == 0 {
        return Err(Error::Config("sequence needs at least one key and one frame per key".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut key_params = vec![spec.rest_params()];
    key_params.extend((0..keys).map(|_| sample_params(spec, &mut rng)));
    let mut poses = Vec::with_capacity(keys * frames_per_key + 1);
    for w in key_params.windows(2) {
        for f in 0..frames_per_key {
            let t = smoothstep(f as f64 / frames_per_key as f64);
            poses.push(spec.compose(&lerp_params(&w[0], &w[1], t))?);
        }
    }
    poses.push(spec.compose(key_params.last().expect("at least one key"))?);
    Ok(poses)
}

/// Full predictions of `poses` against the rig's own output.
pub fn evaluate_poses(
    rig: &dyn Rig,
    bundle: &ModelBundle,
    sys: &FactorizedSystem,
    poses: &[Pose],
) -> Result<ErrorReport> {
    let mut report = ErrorReport::new();
    for pose in poses {
        let pred = predict_full(bundle, sys, rig, pose)?;
        let truth = rig.evaluate(pose, &Injection::None)?;
        reconstruction_errors(&pred.positions, &truth, &mut report)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rig::{SyntheticConfig, SyntheticRig};

    #[test]
    fn sequence_starts_at_rest_and_moves_smoothly() {
        let rig = SyntheticRig::build(&SyntheticConfig {
            vertices: 200,
            ..SyntheticConfig::face()
        })
        .unwrap();
        let spec = rig.spec();
        let poses = keyframe_sequence(spec, 3, 10, 1).unwrap();
        assert_eq!(poses.len(), 31);
        assert_eq!(poses[0], spec.rest_pose());
        let step = |a: &Pose, b: &Pose| {
            a.numeric
                .iter()
                .zip(&b.numeric)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        };
        let max_step = poses.windows(2).map(|w| step(&w[0], &w[1])).fold(0.0, f64::max);
        let widest = spec.numeric.iter().map(|c| c.range.max - c.range.min).fold(0.0, f64::max);
        // smoothstep peaks at 1.5× the linear rate
        assert!(max_step <= 1.5 * widest / 10.0 + 1e-12);
        assert_eq!(poses, keyframe_sequence(spec, 3, 10, 1).unwrap());
    }
}
