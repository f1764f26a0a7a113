//! Which controls move which vertices, and where to put anchors.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::sample_params;
use super::probe::extract_nonlinear;
use super::{Injection, Rig, RigSpec};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Vec3};
use crate::reconstruction::AnchorSet;

/// Default displacement threshold as a fraction of the face height.
pub const DEFAULT_THRESHOLD_FRACTION: f64 = 1e-4;
/// Perturbation step as a fraction of the control's half-range.
pub const DEFAULT_STEP_FRACTION: f64 = 0.8;

/// Per-anchor lists of influencing controls, in the index space of
/// [`RigSpec::control_count`] (joints first, then numeric controls).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceMap {
    pub controls: Vec<Vec<usize>>,
}

impl InfluenceMap {
    /// Lists control `k` for vertex slot `i` when `displacement[i][k] > tau`.
    pub fn from_displacements(displacement: &[Vec<f64>], tau: f64) -> Self {
        Self {
            controls: displacement
                .iter()
                .map(|row| (0..row.len()).filter(|&k| row[k] > tau).collect())
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    /// Feature-vector positions read by anchor `anchor`'s network.
    pub fn feature_indices(&self, spec: &RigSpec, anchor: usize) -> Vec<usize> {
        self.controls[anchor].iter().flat_map(|&k| spec.feature_slice(k)).collect()
    }
}

/// Largest displacement of each listed vertex under single-control
/// perturbations over `probes` random poses. Row `i` has one entry per
/// control in the influence index space.
pub fn influence_displacements(
    rig: &dyn Rig,
    vertices: &[usize],
    probes: usize,
    step_fraction: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let spec = rig.spec();
    let n = rig.mesh().vertex_count();
    if let Some(&bad) = vertices.iter().find(|&&v| v >= n) {
        return Err(Error::IndexOutOfRange {
            context: "influence vertex",
            index: bad,
            len: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![vec![0.0; spec.control_count()]; vertices.len()];
    for _ in 0..probes {
        let params = sample_params(spec, &mut rng);
        let base = rig.evaluate(&spec.compose(&params)?, &Injection::None)?;
        for control in spec.scalar_controls() {
            let range = spec.range_of(control);
            let value = spec.get(&params, control);
            let step = step_fraction * range.half_width();
            let moved = if value <= range.mid() { value + step } else { value - step };
            let mut perturbed = params.clone();
            spec.set(&mut perturbed, control, moved);
            let posed = rig.evaluate(&spec.compose(&perturbed)?, &Injection::None)?;
            let k = spec.control_of(control);
            for (row, &v) in out.iter_mut().zip(vertices) {
                let d = (posed.values[v] - base.values[v]).norm();
                if d > row[k] {
                    row[k] = d;
                }
            }
        }
    }
    Ok(out)
}

/// Controls that displace each anchor by more than `tau` (cm) in any of
/// `probes` random poses.
pub fn influence_map(rig: &dyn Rig, anchors: &AnchorSet, probes: usize, tau: f64, seed: u64) -> Result<InfluenceMap> {
    let disp = influence_displacements(rig, &anchors.indices, probes, DEFAULT_STEP_FRACTION, seed)?;
    Ok(InfluenceMap::from_displacements(&disp, tau))
}

/// `1e-4 ×` the mesh height.
pub fn default_threshold(mesh: &Mesh) -> f64 {
    DEFAULT_THRESHOLD_FRACTION * mesh.height()
}

/// Settings of the anchor selection heuristic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorPolicy {
    /// Poses over which the variance of `v_nl` is measured.
    pub variance_poses: usize,
    /// Poses used to count controls per vertex.
    pub density_poses: usize,
    pub seed: u64,
}

impl Default for AnchorPolicy {
    fn default() -> Self {
        Self {
            variance_poses: 32,
            density_poses: 8,
            seed: 0,
        }
    }
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // min-heap on distance
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

/// Lowers `dist` to the edge-length geodesic distance from `source` where
/// that is shorter.
fn relax_from(mesh: &Mesh, source: usize, dist: &mut [f64]) {
    let verts = mesh.vertices();
    let mut local = vec![f64::INFINITY; mesh.vertex_count()];
    let mut heap = BinaryHeap::new();
    local[source] = 0.0;
    heap.push(Entry(0.0, source));
    while let Some(Entry(d, v)) = heap.pop() {
        if d > local[v] {
            continue;
        }
        // nothing beyond here can improve the running minimum
        if d >= dist[v] && v != source {
            continue;
        }
        dist[v] = dist[v].min(d);
        for &u in mesh.neighbors(v) {
            let nd = d + (verts[u] - verts[v]).norm();
            if nd < local[u] {
                local[u] = nd;
                heap.push(Entry(nd, u));
            }
        }
    }
    dist[source] = 0.0;
}

/// Per-vertex variance of `v_nl` (summed over axes) over random poses.
pub fn nonlinear_variance(rig: &dyn Rig, poses: usize, seed: u64) -> Result<Vec<f64>> {
    let spec = rig.spec();
    let n = rig.mesh().vertex_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = vec![Vec3::zeros(); n];
    let mut sq = vec![0.0; n];
    for p in 0..poses {
        let pose = spec.compose(&sample_params(spec, &mut rng))?;
        let sample = extract_nonlinear(rig, &pose, p)?;
        for (i, v) in sample.local.values.iter().enumerate() {
            sum[i] += v;
            sq[i] += v.norm_squared();
        }
    }
    let m = poses.max(1) as f64;
    Ok(sum
        .iter()
        .zip(&sq)
        .map(|(s, q)| (q / m - (s / m).norm_squared()).max(0.0))
        .collect())
}

/// Anchors in selection order: the highest-variance vertex first, then
/// farthest-point sampling over the geodesic graph distance scaled by the
/// local control count, among vertices whose variance is above the median (and above round-off).
/// When those run out the remaining vertices are used.
pub fn anchor_order(rig: &dyn Rig, count: usize, policy: &AnchorPolicy) -> Result<Vec<usize>> {
    let mesh = rig.mesh();
    let n = mesh.vertex_count();
    if count == 0 || count > n {
        return Err(Error::InvalidAnchors(format!("cannot select {count} anchors from {n} vertices")));
    }
    let score = nonlinear_variance(rig, policy.variance_poses, policy.seed)?;
    let all: Vec<usize> = (0..n).collect();
    let disp = influence_displacements(rig, &all, policy.density_poses, DEFAULT_STEP_FRACTION, policy.seed ^ 0x5eed)?;
    let tau = default_threshold(mesh);
    let density: Vec<f64> = disp
        .iter()
        .map(|row| 1.0 + row.iter().filter(|&&d| d > tau).count() as f64)
        .collect();

    let mut sorted = score.clone();
    sorted.sort_by(f64::total_cmp);
    // extraction round-off leaves variances near 1e-28 on vertices the
    // deformers never touch; they must not count as above the median
    let floor = 1e-10 * sorted[n - 1];
    let cut = sorted[n / 2].max(floor);
    let preferred: Vec<bool> = score.iter().map(|&s| s > cut).collect();

    let first = (0..n)
        .max_by(|&a, &b| score[a].total_cmp(&score[b]).then(b.cmp(&a)))
        .expect("mesh is non-empty");
    let mut order = vec![first];
    let mut chosen = vec![false; n];
    chosen[first] = true;
    let mut dist = vec![f64::INFINITY; n];
    relax_from(mesh, first, &mut dist);
    while order.len() < count {
        let pick = |restrict: bool| {
            (0..n)
                .filter(|&v| !chosen[v] && (!restrict || preferred[v]))
                .max_by(|&a, &b| (dist[a] * density[a]).total_cmp(&(dist[b] * density[b])).then(b.cmp(&a)))
        };
        let next = pick(true).or_else(|| pick(false)).expect("count <= n leaves a vertex");
        chosen[next] = true;
        order.push(next);
        relax_from(mesh, next, &mut dist);
    }
    Ok(order)
}

pub fn select_anchors(rig: &dyn Rig, count: usize, policy: &AnchorPolicy) -> Result<AnchorSet> {
    Ok(AnchorSet::uniform(anchor_order(rig, count, policy)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rig::synthetic::{Deformer, Drive, Falloff, Shape, SkeletonJoint};
    use crate::rig::{Channel, ChannelKind, JointSpec, NumericSpec, Range, SyntheticConfig, SyntheticRig};
    use crate::shapes;

    fn small_face() -> SyntheticRig {
        SyntheticRig::build(&SyntheticConfig {
            vertices: 500,
            numeric: 10,
            ..SyntheticConfig::face()
        })
        .unwrap()
    }

    /// Root joint plus one numeric control warping a cap around +y.
    fn single_region_rig() -> SyntheticRig {
        let mesh = shapes::sphere_with_vertices(500, 5.0);
        let spec = RigSpec {
            joints: vec![JointSpec {
                name: "root".into(),
                channels: vec![Channel {
                    kind: ChannelKind::Ry,
                    range: Range::new(-0.5, 0.5),
                }],
                rest_transform_known: true,
            }],
            numeric: vec![NumericSpec {
                name: "cap".into(),
                range: Range::new(-1.0, 1.0),
                rest: 0.0,
            }],
            mesh_hash: mesh.content_hash(),
        };
        let joints = vec![SkeletonJoint {
            name: "root".into(),
            parent: None,
            pivot: Vec3::zeros(),
            skin: None,
        }];
        let deformers = vec![Deformer {
            drive: Drive::Tanh { control: 0, gain: 1.5 },
            shape: Shape::Fixed { direction: Vec3::x() },
            falloff: Falloff {
                center: Vec3::new(0.0, 5.0, 0.0),
                radius: 3.0,
            },
            amplitude: 1.0,
        }];
        SyntheticRig::from_parts(mesh, spec, joints, deformers, true).unwrap()
    }

    #[test]
    fn recovered_map_equals_authored_map() {
        let rig = small_face();
        let vertices: Vec<usize> = (0..rig.mesh().vertex_count()).step_by(7).collect();
        let disp = influence_displacements(&rig, &vertices, 20, DEFAULT_STEP_FRACTION, 4).unwrap();
        let map = InfluenceMap::from_displacements(&disp, 0.0);
        let authored = rig.authored_influence();
        for (slot, &v) in vertices.iter().enumerate() {
            assert_eq!(map.controls[slot], authored[v], "vertex {v}");
            // the root joint moves everything
            assert!(map.controls[slot].contains(&0));
        }
    }

    #[test]
    fn raising_threshold_never_adds_controls() {
        let rig = small_face();
        let anchors = AnchorSet::uniform(vec![3, 90, 250, 400]);
        let disp = influence_displacements(&rig, &anchors.indices, 10, DEFAULT_STEP_FRACTION, 1).unwrap();
        let mut prev = InfluenceMap::from_displacements(&disp, 0.0);
        for tau in [1e-6, 1e-3, 1e-2, 0.1, 1.0] {
            let next = InfluenceMap::from_displacements(&disp, tau);
            for (a, b) in prev.controls.iter().zip(&next.controls) {
                assert!(b.iter().all(|k| a.contains(k)));
            }
            prev = next;
        }
    }

    #[test]
    fn feature_indices_follow_controls() {
        let rig = small_face();
        let spec = rig.spec();
        let map = InfluenceMap {
            controls: vec![vec![1, spec.joint_count() + 2, spec.joint_count() + 5]],
        };
        let idx = map.feature_indices(spec, 0);
        assert_eq!(idx.len(), 14);
        assert_eq!(&idx[..12], &(12..24).collect::<Vec<_>>()[..]);
        assert_eq!(idx[12], 12 * spec.joint_count() + 2);
    }

    #[test]
    fn first_anchor_has_highest_variance() {
        let rig = small_face();
        let policy = AnchorPolicy {
            variance_poses: 8,
            density_poses: 2,
            seed: 3,
        };
        let var = nonlinear_variance(&rig, 8, 3).unwrap();
        let best = (0..var.len()).max_by(|&a, &b| var[a].total_cmp(&var[b])).unwrap();
        assert_eq!(select_anchors(&rig, 1, &policy).unwrap().indices, vec![best]);
    }

    #[test]
    fn anchor_sets_are_nested() {
        let rig = small_face();
        let policy = AnchorPolicy {
            variance_poses: 8,
            density_poses: 2,
            seed: 5,
        };
        let n = rig.mesh().vertex_count();
        let sets: Vec<Vec<usize>> = [1usize, 2, 5]
            .iter()
            .map(|&p| select_anchors(&rig, (n * p).div_ceil(100), &policy).unwrap().indices)
            .collect();
        assert!(sets[1].starts_with(&sets[0]));
        assert!(sets[2].starts_with(&sets[1]));
        let mut dedup = sets[2].clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), sets[2].len());
    }

    #[test]
    fn anchors_land_in_the_deforming_region() {
        let rig = single_region_rig();
        let policy = AnchorPolicy {
            variance_poses: 10,
            density_poses: 2,
            seed: 1,
        };
        let var = nonlinear_variance(&rig, 10, 1).unwrap();
        let anchors = select_anchors(&rig, 6, &policy).unwrap();
        let region = rig.deformers()[0].falloff;
        for &a in &anchors.indices {
            assert!(region.weight(&rig.mesh().vertices()[a]) > 0.0);
            assert!(var[a] > 0.0);
        }
    }

    #[test]
    fn too_many_anchors_is_an_error() {
        let rig = single_region_rig();
        let n = rig.mesh().vertex_count();
        assert!(select_anchors(&rig, n + 1, &AnchorPolicy::default()).is_err());
        assert!(select_anchors(&rig, 0, &AnchorPolicy::default()).is_err());
    }
}
