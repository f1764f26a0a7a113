//! One-parameter ablation sweeps with CSV output.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::baselines::{evaluate_bundle, EvalContext};
use super::metrics::ErrorReport;
use crate::error::{Error, Result};
use crate::pipeline::training::{train_all, ModelConfig};
use crate::pipeline::Dataset;
use crate::reconstruction::{AnchorSet, FactorizedSystem};
use crate::rig::{anchor_order, influence_map, AnchorPolicy, InfluenceMap, Rig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepProtocol {
    /// PCA components as a percentage of the vertex count.
    PcPercent,
    /// Hidden layers of the differential network.
    Layers,
    /// Anchors as a percentage of the vertex count; sets are nested.
    AnchorPercent,
    /// Percentage of the train split used.
    TrainSize,
}

impl SweepProtocol {
    pub fn column(&self) -> &'static str {
        match self {
            SweepProtocol::PcPercent => "pc_percent",
            SweepProtocol::Layers => "hidden_layers",
            SweepProtocol::AnchorPercent => "anchor_percent",
            SweepProtocol::TrainSize => "train_percent",
        }
    }
}

impl std::str::FromStr for SweepProtocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "pc_percent" | "pc" => SweepProtocol::PcPercent,
            "layers" => SweepProtocol::Layers,
            "anchor_percent" | "anchors" => SweepProtocol::AnchorPercent,
            "train_size" => SweepProtocol::TrainSize,
            other => return Err(Error::Config(format!("unknown sweep protocol {other:?}"))),
        })
    }
}

/// Settings held fixed across a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepBase {
    pub model: ModelConfig,
    pub anchor_fraction: f64,
    pub anchor_policy: AnchorPolicy,
    pub influence_probes: usize,
    /// Influence threshold in cm.
    pub influence_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub report: ErrorReport,
}

pub fn anchor_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).max(1)
}

/// Trains and evaluates one model per grid value on `dataset`.
pub fn sweep(
    rig: &dyn Rig,
    dataset: &Dataset,
    protocol: SweepProtocol,
    grid: &[f64],
    base: &SweepBase,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let mesh = rig.mesh();
    let n = mesh.vertex_count();
    // nested anchors: one ordering, prefixes per grid value
    let max_fraction = match protocol {
        SweepProtocol::AnchorPercent => grid.iter().fold(0.0f64, |a, &g| a.max(g / 100.0)),
        _ => base.anchor_fraction,
    };
    let order = anchor_order(rig, anchor_count(n, max_fraction), &base.anchor_policy)?;
    let all = AnchorSet::uniform(order.clone());
    let influence = influence_map(rig, &all, base.influence_probes, base.influence_threshold, base.anchor_policy.seed)?;
    let prefix = |count: usize| -> (AnchorSet, InfluenceMap) {
        let count = count.min(order.len());
        (
            AnchorSet::uniform(order[..count].to_vec()),
            InfluenceMap {
                controls: influence.controls[..count].to_vec(),
            },
        )
    };

    let mut rows = Vec::with_capacity(grid.len());
    for &value in grid {
        let mut cfg = base.model.clone();
        let mut data = None;
        let mut anchors = prefix(anchor_count(n, base.anchor_fraction));
        match protocol {
            SweepProtocol::PcPercent => cfg.pc_fraction = value / 100.0,
            SweepProtocol::Layers => cfg.differential_shape.hidden_layers = value as usize,
            SweepProtocol::AnchorPercent => anchors = prefix(anchor_count(n, value / 100.0)),
            SweepProtocol::TrainSize => {
                data = Some(dataset.resplit(dataset.split.with_train_fraction(value / 100.0)?)?);
            }
        }
        let data = data.as_ref().unwrap_or(dataset);
        let outcome = train_all(data, mesh, &anchors.0, &anchors.1, &cfg)?;
        let sys = FactorizedSystem::for_mesh(mesh, &anchors.0)?;
        let ctx = EvalContext::new(rig, data)?;
        let report = evaluate_bundle(&ctx, &outcome.bundle, &sys)?;
        log::info!(
            "{} = {value}: mean {:.5} max {:.5}",
            protocol.column(),
            report.mean(),
            report.max()
        );
        rows.push(SweepRow { value, report });
    }
    Ok(rows)
}

/// Columns: value, differential MSE, anchor MSE, mean error, max error.
pub fn sweep_csv(protocol: SweepProtocol, rows: &[SweepRow]) -> String {
    let mut out = format!("{},prediction_mse,anchor_mse,mean_error,max_error\n", protocol.column());
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.9e}")).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.9e},{:.9e}",
            r.value,
            opt(r.report.prediction_mse),
            opt(r.report.anchor_mse),
            r.report.mean(),
            r.report.max()
        );
    }
    out
}

pub fn write_sweep_csv(protocol: SweepProtocol, rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, sweep_csv(protocol, rows)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_one_row_per_grid_value() {
        let rows: Vec<SweepRow> = [1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|&value| {
                let mut report = ErrorReport::new();
                report.prediction_mse = Some(0.5);
                SweepRow { value, report }
            })
            .collect();
        let csv = sweep_csv(SweepProtocol::PcPercent, &rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "pc_percent,prediction_mse,anchor_mse,mean_error,max_error");
        assert!(lines[1].starts_with("1,5.000000000e-1,,"));
    }

    #[test]
    fn protocols_parse() {
        for (s, p) in [
            ("pc_percent", SweepProtocol::PcPercent),
            ("layers", SweepProtocol::Layers),
            ("anchor_percent", SweepProtocol::AnchorPercent),
            ("train_size", SweepProtocol::TrainSize),
        ] {
            assert_eq!(s.parse::<SweepProtocol>().unwrap(), p);
        }
        assert!("width".parse::<SweepProtocol>().is_err());
    }
}
