//! Recovery of per-vertex skinning transforms and nonlinear offsets from
//! black-box evaluations.
//!
//! For `ṽ = T(v + v_nl + o)` with affine `T = [X | t]`, three unit offsets
//! along the axes give the columns of `X` as differences against the
//! unperturbed output, and replacing the point with the homogeneous origin
//! returns `t`. All vertices are probed in the same five evaluations, which
//! assumes an offset injected at one vertex does not move any other vertex.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector4};

use super::{Affine, Injection, Pose, Rig};
use crate::error::{Error, Result};
use crate::mesh::{to_differential, Vec3, VertexField};

/// Magnitude of the unit offsets, in cm.
pub const PROBE_STEP: f64 = 1.0;

/// Below this `|det X|` a skinning transform is treated as singular.
pub const SINGULAR_DET: f64 = 1e-9;

fn assemble(base: &Vec3, moved: [&Vec3; 3], origin: &Vec3) -> Affine {
    let cols = moved.map(|m| (m - base) / PROBE_STEP);
    Affine::new(Matrix3::from_columns(&cols), *origin)
}

/// Transforms of every vertex from five batched evaluations.
pub fn recover_transforms(rig: &dyn Rig, pose: &Pose) -> Result<Vec<Affine>> {
    Ok(probe_all(rig, pose)?.1)
}

/// Unperturbed output and recovered transforms.
fn probe_all(rig: &dyn Rig, pose: &Pose) -> Result<(VertexField, Vec<Affine>)> {
    let base = rig.evaluate(pose, &Injection::None)?;
    let axes = [Vec3::x(), Vec3::y(), Vec3::z()];
    let mut moved = Vec::with_capacity(3);
    for axis in axes {
        moved.push(rig.evaluate(pose, &Injection::UniformOffset(axis * PROBE_STEP))?);
    }
    let origin = rig.evaluate(pose, &Injection::UniformReplace(Vector4::new(0.0, 0.0, 0.0, 1.0)))?;
    let transforms = (0..base.len())
        .map(|i| {
            assemble(
                &base.values[i],
                [&moved[0].values[i], &moved[1].values[i], &moved[2].values[i]],
                &origin.values[i],
            )
        })
        .collect();
    Ok((base, transforms))
}

/// Transform of a single vertex, probing only that vertex.
pub fn recover_t(rig: &dyn Rig, pose: &Pose, vertex: usize) -> Result<Affine> {
    let base = rig.evaluate(pose, &Injection::None)?;
    if vertex >= base.len() {
        return Err(Error::IndexOutOfRange {
            context: "probed vertex",
            index: vertex,
            len: base.len(),
        });
    }
    let mut moved = Vec::with_capacity(3);
    for axis in [Vec3::x(), Vec3::y(), Vec3::z()] {
        let offsets = BTreeMap::from([(vertex, axis * PROBE_STEP)]);
        moved.push(rig.evaluate(pose, &Injection::Offsets(&offsets))?.values[vertex]);
    }
    let replace = BTreeMap::from([(vertex, Vector4::new(0.0, 0.0, 0.0, 1.0))]);
    let origin = rig.evaluate(pose, &Injection::Replace(&replace))?.values[vertex];
    Ok(assemble(
        &base.values[vertex],
        [&moved[0], &moved[1], &moved[2]],
        &origin,
    ))
}

/// Evaluated positions, transforms and the nonlinear offsets of one pose.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearSample {
    pub deformed: VertexField,
    pub transforms: Vec<Affine>,
    /// `v_nl` in local Cartesian space.
    pub local: VertexField,
    /// Uniform-Laplacian differentials of `local`.
    pub delta: VertexField,
}

/// `v_nl,ᵢ = Tᵢ⁻¹ ṽᵢ − vᵢ` with `Tᵢ` recovered by probing. `pose_id` is only
/// used to label errors.
pub fn extract_nonlinear(rig: &dyn Rig, pose: &Pose, pose_id: usize) -> Result<NonlinearSample> {
    let (deformed, transforms) = probe_all(rig, pose)?;
    let rest = rig.mesh().vertices();
    let mut local = Vec::with_capacity(rest.len());
    for (i, (t, v)) in transforms.iter().zip(&deformed.values).enumerate() {
        let det = t.det();
        let singular = || Error::SingularTransform {
            vertex: i,
            pose: pose_id,
            det,
        };
        if !(det.abs() >= SINGULAR_DET) {
            return Err(singular());
        }
        local.push(t.solve(v).ok_or_else(singular)? - rest[i]);
    }
    let local = VertexField::cartesian(local);
    let delta = to_differential(rig.mesh(), &local)?;
    Ok(NonlinearSample {
        deformed,
        transforms,
        local,
        delta,
    })
}
