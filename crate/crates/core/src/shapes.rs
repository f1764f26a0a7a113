//! Procedural test meshes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mesh::{Mesh, Vec3};

/// Triangulated latitude/longitude sphere with `2 + rings·segments` vertices.
/// Vertex 0 is the north pole (+y), the last vertex the south pole.
pub fn uv_sphere(rings: usize, segments: usize, radius: f64) -> Mesh {
    assert!(rings >= 1 && segments >= 3, "sphere needs rings >= 1 and segments >= 3");
    let mut verts = vec![Vec3::new(0.0, radius, 0.0)];
    for r in 0..rings {
        let theta = std::f64::consts::PI * (r + 1) as f64 / (rings + 1) as f64;
        for s in 0..segments {
            let phi = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
            verts.push(Vec3::new(
                radius * theta.sin() * phi.sin(),
                radius * theta.cos(),
                radius * theta.sin() * phi.cos(),
            ));
        }
    }
    let south = verts.len();
    verts.push(Vec3::new(0.0, -radius, 0.0));

    let ring = |r: usize, s: usize| 1 + r * segments + s % segments;
    let mut faces = Vec::new();
    for s in 0..segments {
        faces.push(vec![0, ring(0, s), ring(0, s + 1)]);
    }
    for r in 0..rings - 1 {
        for s in 0..segments {
            let (a, b) = (ring(r, s), ring(r, s + 1));
            let (c, d) = (ring(r + 1, s), ring(r + 1, s + 1));
            faces.push(vec![a, c, d]);
            faces.push(vec![a, d, b]);
        }
    }
    for s in 0..segments {
        faces.push(vec![south, ring(rings - 1, s + 1), ring(rings - 1, s)]);
    }
    Mesh::new(verts, faces).expect("sphere construction is valid")
}

/// Sphere whose vertex count is close to `target`.
pub fn sphere_with_vertices(target: usize, radius: f64) -> Mesh {
    let target = target.max(5);
    // segments ≈ 2·rings keeps triangles close to isotropic
    let rings = (((target - 2) as f64 / 2.0).sqrt().round() as usize).max(1);
    let segments = ((target - 2) as f64 / rings as f64).round().max(3.0) as usize;
    uv_sphere(rings, segments, radius)
}

/// Planar triangulated grid of `nx × ny` vertices in the xy-plane.
pub fn grid(nx: usize, ny: usize, spacing: f64) -> Mesh {
    assert!(nx >= 2 && ny >= 2, "grid needs at least 2x2 vertices");
    let verts = (0..ny)
        .flat_map(|j| (0..nx).map(move |i| Vec3::new(i as f64 * spacing, j as f64 * spacing, 0.0)))
        .collect();
    let id = |i: usize, j: usize| j * nx + i;
    let mut faces = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            faces.push(vec![id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            faces.push(vec![id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    Mesh::new(verts, faces).expect("grid construction is valid")
}

/// Random connected mesh with roughly `target` vertices: a sphere or a grid
/// with jittered positions and shuffled vertex labels.
pub fn random_mesh(target: usize, seed: u64) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = if rng.random_bool(0.5) {
        sphere_with_vertices(target, rng.random_range(1.0..20.0))
    } else {
        let nx = rng.random_range(4..=((target as f64).sqrt() as usize * 2).max(5));
        let ny = (target / nx).max(2);
        grid(nx, ny, rng.random_range(0.1..2.0))
    };
    let n = base.vertex_count();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    // order[new] = old
    let mut new_of = vec![0; n];
    for (new, &old) in order.iter().enumerate() {
        new_of[old] = new;
    }
    let verts = order
        .iter()
        .map(|&old| {
            base.vertices()[old]
                + Vec3::new(
                    rng.random_range(-0.05..0.05),
                    rng.random_range(-0.05..0.05),
                    rng.random_range(-0.05..0.05),
                )
        })
        .collect();
    let faces = base
        .faces()
        .iter()
        .map(|f| f.iter().map(|&v| new_of[v]).collect())
        .collect();
    Mesh::new(verts, faces).expect("relabeling preserves validity")
}
