//! Wavefront OBJ reading and writing.
//!
//! Only `v` and `f` records are interpreted; normals, texture coordinates,
//! groups and materials are skipped. Output uses the shortest round-trip
//! float formatting so identical meshes produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{check_len, Error, Result};
use crate::mesh::{Mesh, Vec3, VertexField};

pub fn load_obj(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, path)
}

pub fn parse_obj(text: &str, path: &Path) -> Result<Mesh> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = content.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| parse_err(line, format!("bad vertex coordinate: {e}")))?;
                // x y z [w] or x y z r g b
                if coords.len() < 3 {
                    return Err(parse_err(line, "vertex needs 3 coordinates".into()));
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut face = Vec::new();
                for t in tokens {
                    let idx_str = t.split('/').next().unwrap_or("");
                    let idx: i64 = idx_str
                        .parse()
                        .map_err(|_| parse_err(line, format!("bad face index '{t}'")))?;
                    let resolved = if idx > 0 {
                        idx - 1
                    } else if idx < 0 {
                        vertices.len() as i64 + idx
                    } else {
                        return Err(parse_err(line, "face index 0 is invalid".into()));
                    };
                    if resolved < 0 || resolved as usize >= vertices.len() {
                        return Err(parse_err(line, format!("face index {idx} out of range")));
                    }
                    face.push(resolved as usize);
                }
                if face.len() < 3 {
                    return Err(parse_err(line, "face needs at least 3 vertices".into()));
                }
                faces.push(face);
            }
            _ => {}
        }
    }
    if faces.is_empty() {
        return Err(parse_err(text.lines().count(), "no faces found".into()));
    }
    Mesh::new(vertices, faces)
}

pub fn save_obj(mesh: &Mesh, positions: &VertexField, path: impl AsRef<Path>) -> Result<()> {
    let text = format_obj(mesh, positions, None)?;
    write_text(path.as_ref(), &text)
}

/// Writes positions with a per-vertex RGB color in `[0, 1]` (`v x y z r g b`).
pub fn save_obj_colored(
    mesh: &Mesh,
    positions: &VertexField,
    colors: &[[f64; 3]],
    path: impl AsRef<Path>,
) -> Result<()> {
    let text = format_obj(mesh, positions, Some(colors))?;
    write_text(path.as_ref(), &text)
}

pub fn format_obj(mesh: &Mesh, positions: &VertexField, colors: Option<&[[f64; 3]]>) -> Result<String> {
    check_len("obj positions", mesh.vertex_count(), positions.len())?;
    if let Some(c) = colors {
        check_len("obj colors", mesh.vertex_count(), c.len())?;
    }
    let mut out = String::new();
    for (i, v) in positions.values.iter().enumerate() {
        write!(out, "v {} {} {}", v.x, v.y, v.z).unwrap();
        if let Some(c) = colors {
            let [r, g, b] = c[i];
            write!(out, " {r} {g} {b}").unwrap();
        }
        out.push('\n');
    }
    for f in mesh.faces() {
        out.push('f');
        for &i in f {
            write!(out, " {}", i + 1).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    fn parse(text: &str) -> Result<Mesh> {
        parse_obj(text, Path::new("test.obj"))
    }

    #[test]
    fn single_triangle() {
        let m = parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        assert_eq!(m.vertex_count(), 3);
        assert_eq!(m.degrees(), vec![2.0; 3]);
    }

    #[test]
    fn quad_face_and_slash_syntax() {
        let m = parse("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n").unwrap();
        assert_eq!(m.neighbors(0), &[1, 3]);
        assert_eq!(m.neighbors(2), &[1, 3]);
    }

    #[test]
    fn negative_indices() {
        let m = parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n").unwrap();
        assert_eq!(m.faces()[0], vec![0, 1, 2]);
    }

    #[test]
    fn unreferenced_vertex_is_named() {
        let err = parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 5 5 5\nf 1 2 3\n").unwrap_err();
        assert!(matches!(err, Error::IsolatedVertex(3)), "{err}");
    }

    #[test]
    fn parse_error_has_line_number() {
        let err = parse("v 0 0 0\nv 1 zero 0\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
        let err = parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }));
    }

    #[test]
    fn round_trip_and_byte_stability() {
        let dir = tempfile::tempdir().unwrap();
        let m = shapes::random_mesh(150, 4);
        let a = dir.path().join("a.obj");
        let b = dir.path().join("b.obj");
        save_obj(&m, &m.positions(), &a).unwrap();
        let back = load_obj(&a).unwrap();
        assert!(back.positions().max_distance(&m.positions()) < 1e-6);
        assert_eq!(back.faces(), m.faces());
        save_obj(&back, &back.positions(), &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn colored_vertices_parse_as_positions() {
        let m = parse("v 0 0 0 1 0 0\nv 1 0 0 0 1 0\nv 0 1 0 0 0 1\nf 1 2 3\n").unwrap();
        assert_eq!(m.vertices()[1], Vec3::x());
    }
}
