//! Heatmap OBJ and histogram CSV export.

use std::fmt::Write as _;
use std::path::Path;

use super::metrics::{histogram, quantile};
use crate::error::{check_len, Error, Result};
use crate::mesh::{Mesh, VertexField};
use crate::obj::save_obj_colored;

/// Color of a zero error.
pub const FLOOR_COLOR: [f64; 3] = [0.1, 0.2, 0.9];
/// Color at and above the ceiling.
pub const CEILING_COLOR: [f64; 3] = [0.9, 0.1, 0.1];

/// Linear blend from [`FLOOR_COLOR`] to [`CEILING_COLOR`]; errors above
/// `ceiling` are clamped.
pub fn heat_colors(errors: &[f64], ceiling: f64) -> Vec<[f64; 3]> {
    errors
        .iter()
        .map(|&e| {
            let t = if ceiling > 0.0 { (e / ceiling).clamp(0.0, 1.0) } else { 0.0 };
            [0, 1, 2].map(|c| (1.0 - t) * FLOOR_COLOR[c] + t * CEILING_COLOR[c])
        })
        .collect()
}

/// Writes `positions` colored by per-vertex `errors`. The ceiling defaults to
/// the 99th percentile of the errors.
pub fn export_heatmap(
    mesh: &Mesh,
    positions: &VertexField,
    errors: &[f64],
    ceiling: Option<f64>,
    path: impl AsRef<Path>,
) -> Result<()> {
    check_len("heatmap errors", mesh.vertex_count(), errors.len())?;
    let ceiling = ceiling.unwrap_or_else(|| quantile(errors, 0.99));
    save_obj_colored(mesh, positions, &heat_colors(errors, ceiling), path)
}

pub fn histogram_csv(errors: &[f64], bins: usize) -> String {
    let ceiling = errors.iter().copied().fold(0.0, f64::max);
    let mut out = String::from("bin_start,bin_end,fraction\n");
    for (a, b, f) in histogram(errors, bins, ceiling) {
        let _ = writeln!(out, "{a:.9e},{b:.9e},{f}");
    }
    out
}

/// Equal-width histogram over `[0, max error]` as CSV.
pub fn export_histogram(errors: &[f64], bins: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, histogram_csv(errors, bins)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    #[test]
    fn zero_errors_give_a_uniform_floor_color() {
        let mesh = shapes::grid(3, 3, 1.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("heat.obj");
        export_heatmap(&mesh, &mesh.positions(), &[0.0; 9], None, &path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let floor = format!(" {} {} {}", FLOOR_COLOR[0], FLOOR_COLOR[1], FLOOR_COLOR[2]);
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 9);
        assert!(text.lines().filter(|l| l.starts_with("v ")).all(|l| l.ends_with(&floor)));
    }

    #[test]
    fn colors_clamp_above_the_ceiling() {
        let c = heat_colors(&[0.0, 0.5, 1.0, 7.0], 1.0);
        assert_eq!(c[2], c[3]);
        assert_eq!(c[3], CEILING_COLOR);
        assert!((c[1][0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn half_and_half_histogram() {
        let csv = histogram_csv(&[0.0, 1.0, 0.0, 1.0], 2);
        let fractions: Vec<&str> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
        assert_eq!(fractions, vec!["0.5", "0.5"]);
    }
}
