//! Procedural rigs with known skinning and analytic nonlinear deformers.
//!
//! Each vertex is skinned by a hierarchy of joints with smooth radial weights
//! and displaced in local space by a stack of deformers before skinning:
//! `ṽᵢ = Σₖ ωᵢₖ Sₖ (vᵢ + bᵢ(pose))`. Every deformer vanishes at the rest pose
//! and its weight falloff `(1 − r²/R²)²` is C¹ at the support boundary.

use nalgebra::{Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_injection, Affine, Channel, ChannelKind, Injection, JointSpec, NumericSpec, Pose, Range, Rig, RigSpec};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Vec3, VertexField};
use crate::shapes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RigKind {
    /// Head-like deformed sphere with jaw, eyelid, brow and cheek joints and
    /// numeric controls driving local warps.
    Face,
    /// Elongated limb with a joint chain and no numeric controls.
    Body,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub kind: RigKind,
    pub vertices: usize,
    pub joints: usize,
    pub numeric: usize,
    pub seed: u64,
    pub deformers_enabled: bool,
}

impl SyntheticConfig {
    pub fn face() -> Self {
        Self {
            kind: RigKind::Face,
            vertices: 4000,
            joints: 8,
            numeric: 24,
            seed: 0,
            deformers_enabled: true,
        }
    }

    pub fn body() -> Self {
        Self {
            kind: RigKind::Body,
            vertices: 2000,
            joints: 4,
            numeric: 0,
            seed: 0,
            deformers_enabled: true,
        }
    }

    fn validate(&self) -> Result<()> {
        let max_joints = match self.kind {
            RigKind::Face => FACE_JOINTS.len(),
            RigKind::Body => BODY_JOINTS.len(),
        };
        if self.vertices < 50 {
            return Err(Error::Config(format!("synthetic rig needs at least 50 vertices, got {}", self.vertices)));
        }
        if self.joints == 0 || self.joints > max_joints {
            return Err(Error::Config(format!(
                "{:?} rig supports 1 to {max_joints} joints, got {}",
                self.kind, self.joints
            )));
        }
        if self.kind == RigKind::Body && self.numeric != 0 {
            return Err(Error::Config("body rig has no numeric controls".into()));
        }
        Ok(())
    }
}

/// Radial weight `(1 − r²/R²)²` inside the ball of radius `R`, zero outside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Falloff {
    pub center: Vec3,
    pub radius: f64,
}

impl Falloff {
    pub fn weight(&self, p: &Vec3) -> f64 {
        let q = (p - self.center).norm_squared() / (self.radius * self.radius);
        if q >= 1.0 {
            0.0
        } else {
            (1.0 - q) * (1.0 - q)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonJoint {
    pub name: String,
    /// Parents precede their children.
    pub parent: Option<usize>,
    pub pivot: Vec3,
    /// Skinning region; `None` for the root, which takes the remaining weight.
    pub skin: Option<Falloff>,
}

/// Scalar driving a deformer, zero at rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Drive {
    Linear { control: usize },
    SignedSquare { control: usize },
    Tanh { control: usize, gain: f64 },
    Square { control: usize },
    Product { controls: [usize; 2] },
    /// `‖X − I‖²_F + β‖t‖²` of a joint's local control transform.
    JointMotion { joint: usize, translation_weight: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    /// `a·w·g·d` along a fixed direction.
    Fixed { direction: Vec3 },
    /// `a·w·g·(v − c)/R`.
    Radial,
    /// Rotation of `v − c` about `axis` by the angle `a·w·g`.
    Twist { axis: Vec3 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deformer {
    pub drive: Drive,
    pub shape: Shape,
    pub falloff: Falloff,
    pub amplitude: f64,
}

/// Serialized form; derived caches are rebuilt from the mesh on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Description {
    spec: RigSpec,
    joints: Vec<SkeletonJoint>,
    deformers: Vec<Deformer>,
    deformers_enabled: bool,
}

#[derive(Debug, Clone)]
pub struct SyntheticRig {
    mesh: Mesh,
    desc: Description,
    /// Per vertex `(joint, ω)` with `ω > 0`.
    skin: Vec<Vec<(usize, f64)>>,
    /// Per deformer `(vertex, falloff weight)` with weight > 0.
    supports: Vec<Vec<(usize, f64)>>,
}

struct JointTemplate {
    name: &'static str,
    parent: Option<usize>,
    pivot: [f64; 3],
    skin: Option<([f64; 3], f64)>,
    channels: &'static [(ChannelKind, f64, f64)],
}

use ChannelKind::*;

const FACE_HALF_AXES: [f64; 3] = [9.0, 12.5, 10.0];

const FACE_JOINTS: [JointTemplate; 8] = [
    JointTemplate {
        name: "head",
        parent: None,
        pivot: [0.0, -12.0, 0.0],
        skin: None,
        channels: &[
            (Rx, -0.35, 0.35),
            (Ry, -0.6, 0.6),
            (Rz, -0.25, 0.25),
            (Tx, -1.0, 1.0),
            (Ty, -1.0, 1.0),
            (Tz, -1.0, 1.0),
        ],
    },
    JointTemplate {
        name: "jaw",
        parent: Some(0),
        pivot: [0.0, -3.0, 2.0],
        skin: Some(([0.0, -8.5, 6.0], 7.0)),
        channels: &[(Rx, -0.05, 0.4), (Ry, -0.1, 0.1), (Tz, -0.5, 0.5)],
    },
    JointTemplate {
        name: "eyelid_l",
        parent: Some(0),
        pivot: [3.2, 3.0, 8.0],
        skin: Some(([3.2, 3.5, 8.9], 2.2)),
        channels: &[(Rx, -0.1, 0.6)],
    },
    JointTemplate {
        name: "eyelid_r",
        parent: Some(0),
        pivot: [-3.2, 3.0, 8.0],
        skin: Some(([-3.2, 3.5, 8.9], 2.2)),
        channels: &[(Rx, -0.1, 0.6)],
    },
    JointTemplate {
        name: "brow_l",
        parent: Some(0),
        pivot: [3.5, 5.5, 8.0],
        skin: Some(([3.5, 6.0, 8.5], 3.0)),
        channels: &[(Ty, -0.6, 0.8), (Rz, -0.2, 0.2)],
    },
    JointTemplate {
        name: "brow_r",
        parent: Some(0),
        pivot: [-3.5, 5.5, 8.0],
        skin: Some(([-3.5, 6.0, 8.5], 3.0)),
        channels: &[(Ty, -0.6, 0.8), (Rz, -0.2, 0.2)],
    },
    JointTemplate {
        name: "cheek_l",
        parent: Some(0),
        pivot: [5.0, -2.0, 7.0],
        skin: Some(([5.0, -2.0, 7.5], 3.5)),
        channels: &[(Tx, -0.5, 0.5), (Ty, -0.5, 0.5), (Scale, 0.85, 1.2)],
    },
    JointTemplate {
        name: "cheek_r",
        parent: Some(0),
        pivot: [-5.0, -2.0, 7.0],
        skin: Some(([-5.0, -2.0, 7.5], 3.5)),
        channels: &[(Tx, -0.5, 0.5), (Ty, -0.5, 0.5), (Scale, 0.85, 1.2)],
    },
];

const BODY_HALF_AXES: [f64; 3] = [3.5, 20.0, 3.5];

const BODY_JOINTS: [JointTemplate; 4] = [
    JointTemplate {
        name: "pelvis",
        parent: None,
        pivot: [0.0, -18.0, 0.0],
        skin: None,
        channels: &[
            (Rx, -0.4, 0.4),
            (Ry, -0.4, 0.4),
            (Rz, -0.4, 0.4),
            (Tx, -2.0, 2.0),
            (Ty, -2.0, 2.0),
            (Tz, -2.0, 2.0),
        ],
    },
    JointTemplate {
        name: "thigh",
        parent: Some(0),
        pivot: [0.0, -10.0, 0.0],
        skin: Some(([0.0, -3.0, 0.0], 9.0)),
        channels: &[(Rx, -0.2, 1.2), (Rz, -0.3, 0.3)],
    },
    JointTemplate {
        name: "shin",
        parent: Some(1),
        pivot: [0.0, 4.0, 0.0],
        skin: Some(([0.0, 10.0, 0.0], 8.0)),
        channels: &[(Rx, -1.2, 0.1), (Rz, -0.2, 0.2)],
    },
    JointTemplate {
        name: "foot",
        parent: Some(2),
        pivot: [0.0, 14.0, 0.0],
        skin: Some(([0.0, 18.0, 0.0], 5.0)),
        channels: &[(Rx, -0.5, 0.5), (Ry, -0.3, 0.3)],
    },
];

/// Point on the front of the face ellipsoid above `(x, y)`.
fn face_surface(x: f64, y: f64) -> Vec3 {
    let [a, b, c] = FACE_HALF_AXES;
    let s = 1.0 - (x / a).powi(2) - (y / b).powi(2);
    Vec3::new(x, y, c * s.max(0.0).sqrt())
}

fn face_mesh(target: usize) -> Result<Mesh> {
    let sphere = shapes::sphere_with_vertices(target, 1.0);
    let [a, b, c] = FACE_HALF_AXES;
    let verts = sphere
        .vertices()
        .iter()
        .map(|p| {
            // a smooth nose bump on the +z side
            let nose = 1.8 * (-(p.x * p.x + (p.y + 0.05).powi(2)) / 0.015).exp() * p.z.max(0.0).powi(3);
            Vec3::new(a * p.x * (1.0 - 0.12 * p.y), b * p.y, c * p.z + nose)
        })
        .collect();
    Mesh::new(verts, sphere.faces().to_vec())
}

fn body_mesh(target: usize) -> Result<Mesh> {
    let sphere = shapes::sphere_with_vertices(target, 1.0);
    let [a, b, c] = BODY_HALF_AXES;
    let verts = sphere.vertices().iter().map(|p| Vec3::new(a * p.x, b * p.y, c * p.z)).collect();
    Mesh::new(verts, sphere.faces().to_vec())
}

fn template_spec(templates: &[JointTemplate]) -> Vec<JointSpec> {
    templates
        .iter()
        .map(|t| JointSpec {
            name: t.name.into(),
            channels: t
                .channels
                .iter()
                .map(|&(kind, min, max)| Channel {
                    kind,
                    range: Range::new(min, max),
                })
                .collect(),
            rest_transform_known: true,
        })
        .collect()
}

fn template_joints(templates: &[JointTemplate]) -> Vec<SkeletonJoint> {
    templates
        .iter()
        .map(|t| SkeletonJoint {
            name: t.name.into(),
            parent: t.parent,
            pivot: Vec3::from(t.pivot),
            skin: t.skin.map(|(c, r)| Falloff {
                center: Vec3::from(c),
                radius: r,
            }),
        })
        .collect()
}

fn face_joint_deformers(joints: usize) -> Vec<Deformer> {
    let mut out = Vec::new();
    let mut add = |joint: usize, translation_weight: f64, shape: Shape, center: Vec3, radius: f64, amplitude: f64| {
        if joint < joints {
            out.push(Deformer {
                drive: Drive::JointMotion {
                    joint,
                    translation_weight,
                },
                shape,
                falloff: Falloff { center, radius },
                amplitude,
            });
        }
    };
    add(0, 0.1, Shape::Radial, Vec3::new(0.0, -11.0, 4.0), 5.0, 1.5);
    add(
        1,
        1.0,
        Shape::Fixed {
            direction: Vec3::new(0.0, -0.3, 1.0).normalize(),
        },
        face_surface(0.0, -9.0),
        5.0,
        3.0,
    );
    add(
        4,
        1.0,
        Shape::Fixed { direction: Vec3::y() },
        face_surface(0.0, 7.0),
        4.0,
        2.0,
    );
    add(6, 1.0, Shape::Radial, face_surface(5.0, -4.0), 3.0, 2.0);
    add(7, 1.0, Shape::Radial, face_surface(-5.0, -4.0), 3.0, 2.0);
    out
}

fn face_numeric(count: usize, rng: &mut ChaCha8Rng) -> (Vec<NumericSpec>, Vec<Deformer>) {
    let mut specs = Vec::with_capacity(count);
    let mut deformers = Vec::with_capacity(count);
    for i in 0..count {
        let center = face_surface(rng.random_range(-6.0..6.0), rng.random_range(-9.0..7.0));
        let radius = rng.random_range(2.5..4.5);
        let direction = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(0.2..1.0),
        )
        .normalize();
        let variant = if count == 1 && i % 6 == 5 { 0 } else { i % 6 };
        let (drive, shape, amplitude, bipolar) = match variant {
            0 => (Drive::Linear { control: i }, Shape::Fixed { direction }, rng.random_range(0.5..1.5), true),
            1 => (Drive::SignedSquare { control: i }, Shape::Fixed { direction }, rng.random_range(0.5..1.5), true),
            2 => (
                Drive::Tanh { control: i, gain: 2.0 },
                Shape::Fixed { direction },
                rng.random_range(0.5..1.5),
                true,
            ),
            3 => (Drive::Square { control: i }, Shape::Radial, rng.random_range(0.5..1.2), false),
            4 => {
                let axis = Vec3::new(center.x / 81.0, center.y / 156.25, center.z / 100.0).normalize();
                (Drive::Linear { control: i }, Shape::Twist { axis }, rng.random_range(0.15..0.35), true)
            }
            _ => (
                Drive::Product {
                    controls: [i, (i + 1) % count],
                },
                Shape::Fixed { direction },
                rng.random_range(0.5..1.5),
                false,
            ),
        };
        let range = if bipolar { Range::new(-1.0, 1.0) } else { Range::new(0.0, 1.0) };
        specs.push(NumericSpec {
            name: format!("shape_{i:02}"),
            range,
            rest: 0.0,
        });
        deformers.push(Deformer {
            drive,
            shape,
            falloff: Falloff { center, radius },
            amplitude,
        });
    }
    (specs, deformers)
}

fn body_joint_deformers(joints: usize) -> Vec<Deformer> {
    (1..joints)
        .map(|j| Deformer {
            drive: Drive::JointMotion {
                joint: j,
                translation_weight: 0.0,
            },
            shape: Shape::Radial,
            falloff: Falloff {
                center: Vec3::from(BODY_JOINTS[j].pivot),
                radius: 5.0,
            },
            amplitude: 0.8,
        })
        .collect()
}

impl SyntheticRig {
    /// Builds a procedural rig and its rest mesh.
    pub fn build(config: &SyntheticConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (mesh, templates, numeric, deformers) = match config.kind {
            RigKind::Face => {
                let mesh = face_mesh(config.vertices)?;
                let (numeric, mut numeric_deformers) = face_numeric(config.numeric, &mut rng);
                let mut deformers = face_joint_deformers(config.joints);
                deformers.append(&mut numeric_deformers);
                (mesh, &FACE_JOINTS[..config.joints], numeric, deformers)
            }
            RigKind::Body => (
                body_mesh(config.vertices)?,
                &BODY_JOINTS[..config.joints],
                Vec::new(),
                body_joint_deformers(config.joints),
            ),
        };
        let spec = RigSpec {
            joints: template_spec(templates),
            numeric,
            mesh_hash: mesh.content_hash(),
        };
        Self::from_parts(mesh, spec, template_joints(templates), deformers, config.deformers_enabled)
    }

    /// Assembles a rig from explicit parts, validating indices and weights.
    pub fn from_parts(
        mesh: Mesh,
        spec: RigSpec,
        joints: Vec<SkeletonJoint>,
        deformers: Vec<Deformer>,
        deformers_enabled: bool,
    ) -> Result<Self> {
        Self::from_description(
            mesh,
            Description {
                spec,
                joints,
                deformers,
                deformers_enabled,
            },
        )
    }

    fn from_description(mesh: Mesh, desc: Description) -> Result<Self> {
        desc.spec.validate()?;
        if desc.spec.mesh_hash != mesh.content_hash() {
            return Err(Error::HashMismatch {
                context: "synthetic rig mesh",
                expected: desc.spec.mesh_hash.clone(),
                found: mesh.content_hash(),
            });
        }
        if desc.joints.len() != desc.spec.joint_count() {
            return Err(Error::DimensionMismatch {
                context: "skeleton joints",
                expected: desc.spec.joint_count(),
                actual: desc.joints.len(),
            });
        }
        for (k, j) in desc.joints.iter().enumerate() {
            match j.parent {
                Some(p) if p >= k => {
                    return Err(Error::Config(format!("joint {k} has parent {p}; parents must come first")))
                }
                None if k != 0 => return Err(Error::Config(format!("joint {k} has no parent; only joint 0 may be the root"))),
                _ => {}
            }
            if (k == 0) != j.skin.is_none() {
                return Err(Error::Config("only the root joint has no skinning region".into()));
            }
        }
        let c = desc.spec.numeric_count();
        let j = desc.spec.joint_count();
        for d in &desc.deformers {
            let ok = match d.drive {
                Drive::Linear { control }
                | Drive::SignedSquare { control }
                | Drive::Tanh { control, .. }
                | Drive::Square { control } => control < c,
                Drive::Product { controls } => controls.iter().all(|&k| k < c),
                Drive::JointMotion { joint, .. } => joint < j,
            };
            if !ok || !(d.falloff.radius > 0.0) {
                return Err(Error::Config(format!("invalid deformer {d:?}")));
            }
        }

        let skin = mesh
            .vertices()
            .iter()
            .map(|v| {
                let mut w: Vec<(usize, f64)> = desc
                    .joints
                    .iter()
                    .enumerate()
                    .filter_map(|(k, jt)| jt.skin.map(|f| (k, f.weight(v))))
                    .filter(|&(_, w)| w > 0.0)
                    .collect();
                let total: f64 = w.iter().map(|p| p.1).sum();
                if total > 1.0 {
                    w.iter_mut().for_each(|p| p.1 /= total);
                }
                let rest = 1.0 - w.iter().map(|p| p.1).sum::<f64>();
                if rest > 0.0 {
                    w.insert(0, (0, rest));
                }
                w
            })
            .collect();
        let supports = desc
            .deformers
            .iter()
            .map(|d| {
                mesh.vertices()
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (i, d.falloff.weight(v)))
                    .filter(|&(_, w)| w > 0.0)
                    .collect()
            })
            .collect();
        Ok(Self {
            mesh,
            desc,
            skin,
            supports,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.desc)?)
    }

    /// Restores a rig saved with [`to_json`](Self::to_json) on its rest mesh.
    pub fn from_json(text: &str, mesh: Mesh) -> Result<Self> {
        Self::from_description(mesh, serde_json::from_str(text)?)
    }

    pub fn joints(&self) -> &[SkeletonJoint] {
        &self.desc.joints
    }

    pub fn deformers(&self) -> &[Deformer] {
        &self.desc.deformers
    }

    pub fn deformers_enabled(&self) -> bool {
        self.desc.deformers_enabled
    }

    pub fn set_deformers_enabled(&mut self, enabled: bool) {
        self.desc.deformers_enabled = enabled;
    }

    /// Per vertex `(joint, ω)` pairs with positive weight.
    pub fn skin_weights(&self) -> &[Vec<(usize, f64)>] {
        &self.skin
    }

    /// World-space deformation `Sₖ = S_parent ∘ T(p + t)·X·T(−p)` of every
    /// joint.
    pub fn joint_deformations(&self, pose: &Pose) -> Result<Vec<Affine>> {
        self.desc.spec.check_pose(pose)?;
        let mut out: Vec<Affine> = Vec::with_capacity(self.desc.joints.len());
        for (k, joint) in self.desc.joints.iter().enumerate() {
            let a = &pose.joints[k];
            let p = joint.pivot;
            let local = Affine::new(a.linear, p + a.translation - a.linear * p);
            let world = match joint.parent {
                Some(parent) => out[parent].compose(&local),
                None => local,
            };
            out.push(world);
        }
        Ok(out)
    }

    /// Posed joint frames `Mₖ = [Sₖ.X | Sₖ(pₖ)]`.
    pub fn joint_frames(&self, pose: &Pose) -> Result<Vec<Affine>> {
        Ok(self
            .joint_deformations(pose)?
            .iter()
            .zip(&self.desc.joints)
            .map(|(s, j)| Affine::new(s.linear, s.apply(&j.pivot)))
            .collect())
    }

    /// Rest frames `M°ₖ = [I | pₖ]`.
    pub fn rest_frames(&self) -> Vec<Affine> {
        self.desc.joints.iter().map(|j| Affine::translation(j.pivot)).collect()
    }

    /// `Tᵢ = Σₖ ωᵢₖ Sₖ`.
    pub fn blend_transforms(&self, pose: &Pose) -> Result<Vec<Affine>> {
        let s = self.joint_deformations(pose)?;
        Ok(self.skin.iter().map(|w| blend(w, &s)).collect())
    }

    fn drive_value(&self, drive: &Drive, pose: &Pose) -> f64 {
        let x = |k: usize| pose.numeric[k] - self.desc.spec.numeric[k].rest;
        match *drive {
            Drive::Linear { control } => x(control),
            Drive::SignedSquare { control } => x(control) * x(control).abs(),
            Drive::Tanh { control, gain } => (gain * x(control)).tanh(),
            Drive::Square { control } => x(control) * x(control),
            Drive::Product { controls: [a, b] } => x(a) * x(b),
            Drive::JointMotion {
                joint,
                translation_weight,
            } => {
                let a = &pose.joints[joint];
                (a.linear - nalgebra::Matrix3::identity()).norm_squared()
                    + translation_weight * a.translation.norm_squared()
            }
        }
    }

    /// Analytic local displacement `bᵢ(pose)` of every vertex; zero when the
    /// deformer stack is disabled.
    pub fn nonlinear_field(&self, pose: &Pose) -> Result<Vec<Vec3>> {
        self.desc.spec.check_pose(pose)?;
        let rest = self.mesh.vertices();
        let mut out = vec![Vec3::zeros(); rest.len()];
        if !self.desc.deformers_enabled {
            return Ok(out);
        }
        for (d, support) in self.desc.deformers.iter().zip(&self.supports) {
            let g = self.drive_value(&d.drive, pose);
            if g == 0.0 {
                continue;
            }
            for &(i, w) in support {
                let v = rest[i];
                out[i] += match d.shape {
                    Shape::Fixed { direction } => direction * (d.amplitude * w * g),
                    Shape::Radial => (v - d.falloff.center) * (d.amplitude * w * g / d.falloff.radius),
                    Shape::Twist { axis } => {
                        let r = v - d.falloff.center;
                        Rotation3::from_axis_angle(&Unit::new_normalize(axis), d.amplitude * w * g) * r - r
                    }
                };
            }
        }
        Ok(out)
    }

    /// Influence-space control indices that can move `vertex`: every
    /// ancestor-or-self of a joint skinning it, every joint or numeric
    /// control driving a deformer whose support contains it.
    pub fn authored_influence(&self) -> Vec<Vec<usize>> {
        let n = self.mesh.vertex_count();
        let j = self.desc.spec.joint_count();
        let mut sets = vec![std::collections::BTreeSet::new(); n];
        for (i, weights) in self.skin.iter().enumerate() {
            for &(k, _) in weights {
                let mut cur = Some(k);
                while let Some(c) = cur {
                    sets[i].insert(c);
                    cur = self.desc.joints[c].parent;
                }
            }
        }
        if self.desc.deformers_enabled {
            for (d, support) in self.desc.deformers.iter().zip(&self.supports) {
                let controls: Vec<usize> = match d.drive {
                    Drive::Linear { control }
                    | Drive::SignedSquare { control }
                    | Drive::Tanh { control, .. }
                    | Drive::Square { control } => vec![j + control],
                    Drive::Product { controls } => controls.iter().map(|&c| j + c).collect(),
                    Drive::JointMotion { joint, .. } => vec![joint],
                };
                for &(i, _) in support {
                    sets[i].extend(controls.iter().copied());
                }
            }
        }
        sets.into_iter().map(|s| s.into_iter().collect()).collect()
    }
}

fn blend(weights: &[(usize, f64)], s: &[Affine]) -> Affine {
    let mut t = Affine::new(nalgebra::Matrix3::zeros(), Vec3::zeros());
    for &(k, w) in weights {
        t = t.add(&s[k].scaled(w));
    }
    t
}

impl Rig for SyntheticRig {
    fn spec(&self) -> &RigSpec {
        &self.desc.spec
    }

    fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    fn evaluate(&self, pose: &Pose, injection: &Injection<'_>) -> Result<VertexField> {
        check_injection(injection, self.mesh.vertex_count())?;
        let s = self.joint_deformations(pose)?;
        let nl = self.nonlinear_field(pose)?;
        let values = self
            .mesh
            .vertices()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let t = blend(&self.skin[i], &s);
                let local = v + nl[i];
                match injection {
                    Injection::None => t.apply(&local),
                    Injection::UniformOffset(o) => t.apply(&(local + o)),
                    Injection::Offsets(m) => t.apply(&(local + m.get(&i).copied().unwrap_or_default())),
                    Injection::UniformReplace(h) => t.apply_homogeneous(h),
                    Injection::Replace(m) => match m.get(&i) {
                        Some(h) => t.apply_homogeneous(h),
                        None => t.apply(&local),
                    },
                }
            })
            .collect();
        Ok(VertexField::cartesian(values))
    }

    fn linear_transforms(&self, pose: &Pose) -> Option<Result<Vec<Affine>>> {
        Some(self.blend_transforms(pose))
    }
}
