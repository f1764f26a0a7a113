//! Per-vertex reconstruction error accumulation.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::mesh::VertexField;

/// Euclidean per-vertex errors over all evaluated poses, with running
/// summaries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// Pose-major raw errors: pose `p` occupies `p·n .. (p+1)·n`.
    pub errors: Vec<f64>,
    pub poses: usize,
    /// Vertices per pose.
    pub vertices: usize,
    sum: f64,
    max: f64,
    /// Network-space mean squared error of the differential output, when
    /// the method has one.
    pub prediction_mse: Option<f64>,
    /// Mean squared error of the anchor outputs, when the method has them.
    pub anchor_mse: Option<f64>,
    /// Hash of the test split the report was computed on.
    pub split_hash: Option<String>,
}

impl ErrorReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mean(&self) -> f64 {
        if self.errors.is_empty() {
            0.0
        } else {
            self.sum / self.errors.len() as f64
        }
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    /// Recomputes mean and max from the raw errors.
    pub fn recompute(&self) -> (f64, f64) {
        if self.errors.is_empty() {
            return (0.0, 0.0);
        }
        let mean = self.errors.iter().sum::<f64>() / self.errors.len() as f64;
        let max = self.errors.iter().copied().fold(0.0, f64::max);
        (mean, max)
    }

    /// Mean and max as percentages of `size` (e.g. the face height).
    pub fn percent_of(&self, size: f64) -> (f64, f64) {
        (100.0 * self.mean() / size, 100.0 * self.max() / size)
    }

    /// Fraction of errors per bin over `[0, ceiling]`; values above the
    /// ceiling land in the last bin. The ceiling defaults to the max error.
    pub fn histogram(&self, bins: usize, ceiling: Option<f64>) -> Vec<(f64, f64, f64)> {
        histogram(&self.errors, bins, ceiling.unwrap_or(self.max))
    }

    /// Mean error of each vertex across poses.
    pub fn vertex_means(&self) -> Vec<f64> {
        let n = self.vertices;
        let mut out = vec![0.0; n];
        if self.poses == 0 {
            return out;
        }
        for pose in self.errors.chunks_exact(n) {
            for (o, e) in out.iter_mut().zip(pose) {
                *o += e;
            }
        }
        out.iter_mut().for_each(|o| *o /= self.poses as f64);
        out
    }

    /// Errors of pose `p`.
    pub fn pose_errors(&self, p: usize) -> &[f64] {
        &self.errors[p * self.vertices..(p + 1) * self.vertices]
    }
}

/// Appends the per-vertex distances between `predicted` and `truth`.
pub fn reconstruction_errors(predicted: &VertexField, truth: &VertexField, report: &mut ErrorReport) -> Result<()> {
    check_len("reconstruction errors", truth.len(), predicted.len())?;
    if report.poses > 0 && report.vertices != truth.len() {
        return Err(Error::DimensionMismatch {
            context: "vertices per pose",
            expected: report.vertices,
            actual: truth.len(),
        });
    }
    report.vertices = truth.len();
    report.errors.reserve(truth.len());
    for (p, t) in predicted.values.iter().zip(&truth.values) {
        let e = (p - t).norm();
        report.sum += e;
        report.max = report.max.max(e);
        report.errors.push(e);
    }
    report.poses += 1;
    Ok(())
}

/// `(start, end, fraction)` per bin over `[0, ceiling]`.
pub fn histogram(errors: &[f64], bins: usize, ceiling: f64) -> Vec<(f64, f64, f64)> {
    let bins = bins.max(1);
    let width = if ceiling > 0.0 { ceiling / bins as f64 } else { 0.0 };
    let mut counts = vec![0usize; bins];
    for &e in errors {
        let b = if width > 0.0 { ((e / width) as usize).min(bins - 1) } else { 0 };
        counts[b] += 1;
    }
    let total = errors.len().max(1) as f64;
    counts
        .iter()
        .enumerate()
        .map(|(b, &c)| (b as f64 * width, (b + 1) as f64 * width, c as f64 / total))
        .collect()
}

/// `q`-quantile (0..=1) by nearest rank.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q.clamp(0.0, 1.0) * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Vec3;

    fn field(v: &[[f64; 3]]) -> VertexField {
        VertexField::cartesian(v.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect())
    }

    #[test]
    fn identical_fields_have_zero_error() {
        let a = field(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let mut r = ErrorReport::new();
        reconstruction_errors(&a, &a, &mut r).unwrap();
        assert_eq!((r.mean(), r.max()), (0.0, 0.0));
    }

    #[test]
    fn hand_arithmetic() {
        let truth = field(&[[0.0; 3]; 4]);
        let mut pred = truth.clone();
        pred.values[2].x = 1.0;
        let mut r = ErrorReport::new();
        reconstruction_errors(&pred, &truth, &mut r).unwrap();
        assert_eq!(r.mean(), 0.25);
        assert_eq!(r.max(), 1.0);
        assert_eq!(r.vertex_means(), vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn errors_scale_linearly() {
        let truth = field(&[[0.0; 3], [1.0, 1.0, 1.0], [2.0, 0.0, -1.0]]);
        let mut pred = truth.clone();
        pred.values[0] += Vec3::new(0.3, -0.1, 0.2);
        pred.values[2] += Vec3::new(-0.5, 0.0, 0.25);
        let mut scaled = truth.clone();
        for (s, (p, t)) in scaled.values.iter_mut().zip(pred.values.iter().zip(&truth.values)) {
            *s = t + (p - t) * 3.0;
        }
        let (mut a, mut b) = (ErrorReport::new(), ErrorReport::new());
        reconstruction_errors(&pred, &truth, &mut a).unwrap();
        reconstruction_errors(&scaled, &truth, &mut b).unwrap();
        assert!((b.mean() - 3.0 * a.mean()).abs() < 1e-12);
        assert!((b.max() - 3.0 * a.max()).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let mut r = ErrorReport::new();
        assert!(reconstruction_errors(&field(&[[0.0; 3]]), &field(&[[0.0; 3]; 2]), &mut r).is_err());
    }

    #[test]
    fn two_bin_histogram() {
        let h = histogram(&[0.0, 1.0, 0.0, 1.0], 2, 1.0);
        assert_eq!(h.iter().map(|b| b.2).collect::<Vec<_>>(), vec![0.5, 0.5]);
    }

    #[test]
    fn quantiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(quantile(&v, 0.99), 99.0);
        assert_eq!(quantile(&v, 1.0), 100.0);
        assert_eq!(quantile(&[], 0.5), 0.0);
    }
}
