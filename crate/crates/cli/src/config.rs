//! Run configuration: preset defaults, overlaid by a JSON config file, then
//! by command-line flags.

use std::path::Path;

use clap::ValueEnum;
use deltarig_core::eval::SweepProtocol;
use deltarig_core::pipeline::ModelConfig;
use deltarig_core::rig::{AnchorPolicy, RigKind, SyntheticConfig};
use deltarig_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Reduced widths and epochs that fit a desktop CPU.
    Desk,
    /// Full network sizes and training length.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigSettings {
    pub kind: RigKind,
    pub vertices: usize,
    pub joints: usize,
    pub numeric: usize,
}

impl RigSettings {
    pub fn synthetic(&self, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            kind: self.kind,
            vertices: self.vertices,
            joints: self.joints,
            numeric: self.numeric,
            seed,
            deformers_enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorSettings {
    /// Anchors as a fraction of the vertex count.
    pub fraction: f64,
    pub policy: AnchorPolicy,
    pub influence_probes: usize,
    /// Influence threshold in cm; defaults to a small fraction of the mesh
    /// height.
    pub influence_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub histogram_bins: usize,
    /// Heatmap color ceiling in cm; defaults to the 99th percentile.
    pub heatmap_ceiling: Option<f64>,
    pub sequence_keys: usize,
    pub frames_per_key: usize,
    /// Also train and score the Cartesian-space network baseline.
    pub local_baseline: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSettings {
    pub protocol: SweepProtocol,
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSettings {
    /// Grid mesh dimensions used when no mesh is given.
    pub grid: [usize; 2],
    pub anchors: usize,
}

/// Fully resolved settings of one invocation. Every output directory gets a
/// copy in its manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    /// Drives the rig, pose sampling, anchor selection and network seeds.
    pub seed: u64,
    pub rig: RigSettings,
    pub poses: usize,
    pub anchors: AnchorSettings,
    pub model: ModelConfig,
    pub eval: EvalSettings,
    pub sweep: SweepSettings,
    pub spectrum: SpectrumSettings,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (vertices, poses, model) = match preset {
            Preset::Desk => (4000, 2000, ModelConfig::desk()),
            Preset::Full => (4403, 10_000, ModelConfig::full()),
        };
        let face = SyntheticConfig::face();
        Self {
            preset,
            seed: 0,
            rig: RigSettings {
                kind: RigKind::Face,
                vertices,
                joints: face.joints,
                numeric: face.numeric,
            },
            poses,
            anchors: AnchorSettings {
                fraction: 0.02,
                policy: AnchorPolicy::default(),
                influence_probes: 100,
                influence_threshold: None,
            },
            model,
            eval: EvalSettings {
                histogram_bins: 20,
                heatmap_ceiling: None,
                sequence_keys: 4,
                frames_per_key: 12,
                local_baseline: true,
            },
            sweep: SweepSettings {
                protocol: SweepProtocol::PcPercent,
                grid: vec![1.0, 2.0, 5.0, 10.0],
            },
            spectrum: SpectrumSettings {
                grid: [10, 20],
                anchors: 1,
            },
        }
    }

    /// Preset defaults overlaid with the partial JSON in `config`.
    pub fn resolve(preset: Option<Preset>, config: Option<&Path>) -> Result<Self> {
        let overlay = match config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
                serde_json::from_str::<Value>(&text)?
            }
            None => Value::Object(Default::default()),
        };
        if !overlay.is_object() {
            return Err(Error::Config("config file must hold a JSON object".into()));
        }
        // the flag wins over the file, the file over the desk default
        let file_preset = overlay
            .get("preset")
            .map(|p| serde_json::from_value::<Preset>(p.clone()))
            .transpose()?;
        let preset = preset.or(file_preset).unwrap_or(Preset::Desk);
        let mut base = serde_json::to_value(Self::preset(preset))?;
        merge(&mut base, overlay);
        base["preset"] = serde_json::to_value(preset)?;
        let cfg: Self = serde_json::from_value(base)?;
        Ok(cfg)
    }

    /// Copies the top-level seed into every component that draws randomness.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.anchors.policy.seed = seed;
        self.model = self.model.with_seed(seed);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.poses == 0 {
            return Err(Error::Config("poses must be positive".into()));
        }
        if !(self.anchors.fraction > 0.0 && self.anchors.fraction <= 1.0) {
            return Err(Error::Config(format!("anchor fraction {} out of range", self.anchors.fraction)));
        }
        if self.sweep.grid.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        self.model.validate()
    }
}

/// Recursive object merge; non-object values in `overlay` replace.
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_preset_and_keeps_the_rest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"poses": 64, "rig": {"vertices": 300}}"#).unwrap();
        let cfg = RunConfig::resolve(None, Some(&path)).unwrap();
        assert_eq!(cfg.poses, 64);
        assert_eq!(cfg.rig.vertices, 300);
        assert_eq!(cfg.rig.numeric, RunConfig::preset(Preset::Desk).rig.numeric);
        assert_eq!(cfg.model, ModelConfig::desk());
    }

    #[test]
    fn preset_flag_beats_file_preset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"preset": "desk"}"#).unwrap();
        let cfg = RunConfig::resolve(Some(Preset::Full), Some(&path)).unwrap();
        assert_eq!(cfg.preset, Preset::Full);
        assert_eq!(cfg.model, ModelConfig::full());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"posse": 64}"#).unwrap();
        assert!(RunConfig::resolve(None, Some(&path)).is_err());
    }

    #[test]
    fn seed_reaches_every_component() {
        let cfg = RunConfig::preset(Preset::Desk).with_seed(9);
        assert_eq!(cfg.anchors.policy.seed, 9);
        assert_eq!(cfg.model.differential_train.seed, 9);
        assert_eq!(cfg.model.subspace_train.seed, 9);
    }
}
