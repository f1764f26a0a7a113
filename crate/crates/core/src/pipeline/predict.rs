//! Full-mesh prediction: network outputs → reconstruction → skinning.

use crate::error::{check_len, Error, Result};
use crate::mesh::{to_weighted_differential, Mesh, VertexField};
use crate::nn::{predict_bundle, BundlePrediction, ModelBundle};
use crate::reconstruction::{AnchorSet, FactorizedSystem};
use crate::rig::{extract_nonlinear, recover_transforms, Affine, Pose, Rig};

/// Predicted local offsets and final deformed positions.
#[derive(Debug, Clone, PartialEq)]
pub struct FullPrediction {
    pub local: VertexField,
    pub positions: VertexField,
}

/// Skinning transforms from the rig's own linear path when it exposes one,
/// otherwise recovered by probing (five rig evaluations).
pub fn rig_transforms(rig: &dyn Rig, pose: &Pose) -> Result<Vec<Affine>> {
    match rig.linear_transforms(pose) {
        Some(t) => t,
        None => recover_transforms(rig, pose),
    }
}

/// `ṽᵢ = Tᵢ(vᵢ + v_nl,ᵢ)`.
pub fn final_positions(mesh: &Mesh, transforms: &[Affine], local: &VertexField) -> Result<VertexField> {
    check_len("skinning transforms", mesh.vertex_count(), transforms.len())?;
    check_len("local offsets", mesh.vertex_count(), local.len())?;
    Ok(VertexField::cartesian(
        mesh.vertices()
            .iter()
            .zip(&local.values)
            .zip(transforms)
            .map(|((v, d), t)| t.apply(&(v + d)))
            .collect(),
    ))
}

/// Checks that bundle, system and mesh all describe the same surface.
pub fn check_hashes(bundle: &ModelBundle, sys: &FactorizedSystem, mesh: &Mesh) -> Result<()> {
    let mesh_hash = mesh.content_hash();
    if bundle.mesh_hash != mesh_hash {
        return Err(Error::HashMismatch {
            context: "model bundle mesh",
            expected: mesh_hash,
            found: bundle.mesh_hash.clone(),
        });
    }
    match sys.mesh_hash() {
        Some(h) if h == mesh_hash => {}
        other => {
            return Err(Error::HashMismatch {
                context: "factorized system mesh",
                expected: mesh_hash,
                found: other.unwrap_or("none").to_string(),
            })
        }
    }
    if sys.anchors() != &bundle.anchors {
        return Err(Error::InvalidAnchors("factorized system and bundle use different anchors".into()));
    }
    Ok(())
}

/// Solves for `v_nl` from network (or oracle) outputs.
pub fn reconstruct_local(outputs: &BundlePrediction, sys: &FactorizedSystem) -> Result<VertexField> {
    let mut local = sys.reconstruct_weighted(&outputs.weighted_delta, &outputs.anchor_offsets)?;
    local.space = crate::mesh::Space::Cartesian;
    Ok(local)
}

/// Completes a pose prediction from given outputs.
pub fn predict_from_outputs(
    outputs: &BundlePrediction,
    sys: &FactorizedSystem,
    rig: &dyn Rig,
    pose: &Pose,
) -> Result<FullPrediction> {
    let local = reconstruct_local(outputs, sys)?;
    let transforms = rig_transforms(rig, pose)?;
    let positions = final_positions(rig.mesh(), &transforms, &local)?;
    Ok(FullPrediction { local, positions })
}

pub fn predict_full(bundle: &ModelBundle, sys: &FactorizedSystem, rig: &dyn Rig, pose: &Pose) -> Result<FullPrediction> {
    check_hashes(bundle, sys, rig.mesh())?;
    let outputs = predict_bundle(bundle, pose)?;
    predict_from_outputs(&outputs, sys, rig, pose)
}

/// Ground-truth network outputs for `pose`: `L_s·v_nl` and `v_nl` at the
/// anchors, with `v_nl` extracted by probing.
pub fn oracle_outputs(rig: &dyn Rig, pose: &Pose, anchors: &AnchorSet) -> Result<BundlePrediction> {
    let sample = extract_nonlinear(rig, pose, 0)?;
    Ok(BundlePrediction {
        weighted_delta: to_weighted_differential(rig.mesh(), &sample.local)?,
        anchor_offsets: anchors.gather(&sample.local),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rig::{sample_pose, Injection, SyntheticConfig, SyntheticRig};

    #[test]
    fn oracle_outputs_close_the_loop() {
        let rig = SyntheticRig::build(&SyntheticConfig {
            vertices: 400,
            ..SyntheticConfig::face()
        })
        .unwrap();
        let anchors = AnchorSet::uniform(vec![0, 50, 100, 150, 200, 250, 300, 350]);
        let sys = FactorizedSystem::for_mesh(rig.mesh(), &anchors).unwrap();
        for seed in 0..5 {
            let pose = sample_pose(rig.spec(), seed);
            let outputs = oracle_outputs(&rig, &pose, &anchors).unwrap();
            let a = predict_from_outputs(&outputs, &sys, &rig, &pose).unwrap();
            let b = predict_from_outputs(&outputs, &sys, &rig, &pose).unwrap();
            assert_eq!(a, b);
            let truth = rig.evaluate(&pose, &Injection::None).unwrap();
            assert!(a.positions.max_distance(&truth) < 1e-6);
        }
    }
}
