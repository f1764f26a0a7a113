//! Rig abstraction and everything derived from black-box rig evaluation.
//!
//! A rig maps a [`Pose`] (per-joint local control transforms plus numeric
//! attributes) to deformed vertex positions. Each vertex is assumed to follow
//! `ṽᵢ = Tᵢ(vᵢ + v_nl,ᵢ)` with an affine skinning transform `Tᵢ` and a local
//! nonlinear displacement `v_nl,ᵢ`. The probing routines in [`probe`] recover
//! both using only evaluations with injected local offsets.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Rotation3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::mesh::{Mesh, Vec3, VertexField};

pub mod features;
pub mod influence;
pub mod probe;
pub mod synthetic;

pub use features::{sample_params, sample_pose, vectorize, Normalization, PoseSampler};
pub use influence::{anchor_order, influence_map, select_anchors, AnchorPolicy, InfluenceMap};
pub use probe::{extract_nonlinear, recover_t, recover_transforms, NonlinearSample, PROBE_STEP};
pub use synthetic::{RigKind, SyntheticConfig, SyntheticRig};

/// Affine map `x ↦ linear·x + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub linear: Matrix3<f64>,
    pub translation: Vec3,
}

impl Affine {
    pub fn new(linear: Matrix3<f64>, translation: Vec3) -> Self {
        Self { linear, translation }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vec3::zeros())
    }

    pub fn translation(t: Vec3) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.linear * p + self.translation
    }

    /// Applies the 3×4 matrix to a homogeneous point.
    pub fn apply_homogeneous(&self, p: &Vector4<f64>) -> Vec3 {
        self.linear * p.xyz() + self.translation * p.w
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Affine) -> Affine {
        Affine::new(self.linear * other.linear, self.linear * other.translation + self.translation)
    }

    pub fn det(&self) -> f64 {
        self.linear.determinant()
    }

    pub fn inverse(&self) -> Option<Affine> {
        let inv = self.linear.try_inverse()?;
        Some(Affine::new(inv, -(inv * self.translation)))
    }

    /// Solves `self(x) = y` for `x` with an LU factorization of the linear
    /// block.
    pub fn solve(&self, y: &Vec3) -> Option<Vec3> {
        self.linear.lu().solve(&(y - self.translation))
    }

    pub fn scaled(&self, w: f64) -> Affine {
        Affine::new(self.linear * w, self.translation * w)
    }

    pub fn add(&self, other: &Affine) -> Affine {
        Affine::new(self.linear + other.linear, self.translation + other.translation)
    }

    /// `max |a − b|` over the 12 entries.
    pub fn max_abs_diff(&self, other: &Affine) -> f64 {
        (self.linear - other.linear)
            .abs()
            .max()
            .max((self.translation - other.translation).abs().max())
    }
}

/// Closed interval of a control value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.max - self.min)
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.min, self.max)
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(Error::Config(format!(
                "{what}: range [{}, {}] must be finite with min < max",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

/// One scalar degree of freedom of a joint control.
///
/// Rotations are Euler angles in radians applied as `Rz·Ry·Rx`, translations
/// are in cm and the scale is uniform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Rx,
    Ry,
    Rz,
    Tx,
    Ty,
    Tz,
    Scale,
}

impl ChannelKind {
    /// Slot in [`PoseParams::joints`].
    pub fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub kind: ChannelKind,
    pub range: Range,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    /// Animated channels; the others stay at their rest value.
    pub channels: Vec<Channel>,
    /// Whether the rest (bind) transform of the joint is known to callers.
    pub rest_transform_known: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericSpec {
    pub name: String,
    pub range: Range,
    /// Value at which the control has no effect.
    pub rest: f64,
}

/// Controls exposed by a rig.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigSpec {
    pub joints: Vec<JointSpec>,
    pub numeric: Vec<NumericSpec>,
    /// Content hash of the rest mesh the rig deforms.
    pub mesh_hash: String,
}

/// Addresses one scalar control of a rig.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlRef {
    Joint { joint: usize, channel: usize },
    Numeric(usize),
}

/// Raw parameter values from which a [`Pose`] is composed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    /// Per joint `[rx, ry, rz, tx, ty, tz, s]`.
    pub joints: Vec<[f64; 7]>,
    pub numeric: Vec<f64>,
}

pub const REST_JOINT: [f64; 7] = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];

/// Evaluated rig input: local joint control transforms and numeric values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub joints: Vec<Affine>,
    pub numeric: Vec<f64>,
}

impl RigSpec {
    pub fn validate(&self) -> Result<()> {
        for j in &self.joints {
            for c in &j.channels {
                c.range.validate(&format!("joint {} {:?}", j.name, c.kind))?;
            }
            let mut kinds: Vec<_> = j.channels.iter().map(|c| c.kind).collect();
            kinds.sort();
            kinds.dedup();
            if kinds.len() != j.channels.len() {
                return Err(Error::Config(format!("joint {} repeats a channel", j.name)));
            }
        }
        for c in &self.numeric {
            c.range.validate(&format!("control {}", c.name))?;
            if c.rest < c.range.min || c.rest > c.range.max {
                return Err(Error::Config(format!("control {}: rest outside range", c.name)));
            }
        }
        Ok(())
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn numeric_count(&self) -> usize {
        self.numeric.len()
    }

    /// `12j + c`.
    pub fn feature_dim(&self) -> usize {
        12 * self.joint_count() + self.numeric_count()
    }

    /// Number of entries in the control index space used by influence maps:
    /// one per joint followed by one per numeric control.
    pub fn control_count(&self) -> usize {
        self.joint_count() + self.numeric_count()
    }

    /// Feature-vector positions belonging to control `index` of the influence
    /// index space.
    pub fn feature_slice(&self, index: usize) -> std::ops::Range<usize> {
        let j = self.joint_count();
        if index < j {
            12 * index..12 * index + 12
        } else {
            let c = 12 * j + (index - j);
            c..c + 1
        }
    }

    /// All scalar controls in a fixed order: joint channels, then numerics.
    pub fn scalar_controls(&self) -> Vec<ControlRef> {
        let mut out = Vec::new();
        for (joint, spec) in self.joints.iter().enumerate() {
            out.extend((0..spec.channels.len()).map(|channel| ControlRef::Joint { joint, channel }));
        }
        out.extend((0..self.numeric_count()).map(ControlRef::Numeric));
        out
    }

    /// Index of `control` in the influence index space.
    pub fn control_of(&self, control: ControlRef) -> usize {
        match control {
            ControlRef::Joint { joint, .. } => joint,
            ControlRef::Numeric(i) => self.joint_count() + i,
        }
    }

    pub fn range_of(&self, control: ControlRef) -> Range {
        match control {
            ControlRef::Joint { joint, channel } => self.joints[joint].channels[channel].range,
            ControlRef::Numeric(i) => self.numeric[i].range,
        }
    }

    pub fn rest_params(&self) -> PoseParams {
        PoseParams {
            joints: vec![REST_JOINT; self.joint_count()],
            numeric: self.numeric.iter().map(|c| c.rest).collect(),
        }
    }

    pub fn rest_pose(&self) -> Pose {
        self.compose(&self.rest_params()).expect("rest parameters match the rig spec")
    }

    pub fn get(&self, params: &PoseParams, control: ControlRef) -> f64 {
        match control {
            ControlRef::Joint { joint, channel } => {
                params.joints[joint][self.joints[joint].channels[channel].kind.slot()]
            }
            ControlRef::Numeric(i) => params.numeric[i],
        }
    }

    pub fn set(&self, params: &mut PoseParams, control: ControlRef, value: f64) {
        match control {
            ControlRef::Joint { joint, channel } => {
                params.joints[joint][self.joints[joint].channels[channel].kind.slot()] = value
            }
            ControlRef::Numeric(i) => params.numeric[i] = value,
        }
    }

    /// Builds local joint transforms `X = s·Rz·Ry·Rx`, `t = (tx, ty, tz)`.
    pub fn compose(&self, params: &PoseParams) -> Result<Pose> {
        check_len("pose joints", self.joint_count(), params.joints.len())?;
        check_len("pose numeric controls", self.numeric_count(), params.numeric.len())?;
        let joints = params.joints.iter().map(joint_transform).collect();
        Ok(Pose {
            joints,
            numeric: params.numeric.clone(),
        })
    }

    pub fn check_pose(&self, pose: &Pose) -> Result<()> {
        check_len("pose joints", self.joint_count(), pose.joints.len())?;
        check_len("pose numeric controls", self.numeric_count(), pose.numeric.len())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn joint_transform(p: &[f64; 7]) -> Affine {
    let [rx, ry, rz, tx, ty, tz, s] = *p;
    let r = Rotation3::from_axis_angle(&Vector3::z_axis(), rz)
        * Rotation3::from_axis_angle(&Vector3::y_axis(), ry)
        * Rotation3::from_axis_angle(&Vector3::x_axis(), rx);
    Affine::new(r.into_inner() * s, Vec3::new(tx, ty, tz))
}

/// Local-space modifications applied during evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Injection<'a> {
    None,
    /// Adds an offset to `vᵢ + v_nl,ᵢ` before skinning.
    Offsets(&'a BTreeMap<usize, Vec3>),
    /// Adds the same offset to every vertex.
    UniformOffset(Vec3),
    /// Replaces `vᵢ + v_nl,ᵢ` by a homogeneous point, so the output is `Tᵢ·p`.
    Replace(&'a BTreeMap<usize, Vector4<f64>>),
    UniformReplace(Vector4<f64>),
}

/// A deformation system evaluated as a black box.
pub trait Rig {
    fn spec(&self) -> &RigSpec;

    fn mesh(&self) -> &Mesh;

    /// Deformed positions for `pose` with an optional injection.
    fn evaluate(&self, pose: &Pose, injection: &Injection<'_>) -> Result<VertexField>;

    /// Per-vertex skinning transforms if the rig exposes them directly.
    /// Black-box rigs return `None` and callers fall back to probing.
    fn linear_transforms(&self, _pose: &Pose) -> Option<Result<Vec<Affine>>> {
        None
    }
}

pub(crate) fn check_injection(injection: &Injection<'_>, n: usize) -> Result<()> {
    let check = |i: usize| {
        if i >= n {
            Err(Error::IndexOutOfRange {
                context: "injected vertex",
                index: i,
                len: n,
            })
        } else {
            Ok(())
        }
    };
    match injection {
        Injection::Offsets(m) => m.keys().try_for_each(|&i| check(i)),
        Injection::Replace(m) => m.keys().try_for_each(|&i| check(i)),
        _ => Ok(()),
    }
}
