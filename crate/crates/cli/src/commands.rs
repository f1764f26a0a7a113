//! Subcommand implementations. Each reads its inputs, writes artifacts into
//! `out` and finishes with a manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use deltarig_core::eval::{
    baseline_lbs, baseline_local, baseline_pca_regression, evaluate_bundle, evaluate_poses, export_heatmap,
    export_histogram, keyframe_sequence, sweep, write_sweep_csv, EvalContext, ErrorReport, SweepBase,
};
use deltarig_core::eval::sweep::anchor_count;
use deltarig_core::mesh::Mesh;
use deltarig_core::nn::ModelBundle;
use deltarig_core::obj::{load_obj, save_obj};
use deltarig_core::pipeline::{generate_dataset, predict_full, train_all, Dataset};
use deltarig_core::rig::influence::default_threshold;
use deltarig_core::rig::{influence_map, select_anchors, InfluenceMap, Injection, PoseParams};
use deltarig_core::spectral::SpectralProbe;
use deltarig_core::{shapes, AnchorSet, Error, FactorizedSystem, Result, Rig, SyntheticRig};
use serde_json::json;

use crate::config::RunConfig;
use crate::manifest::Manifest;

pub const MESH_FILE: &str = "rest.obj";
pub const RIG_FILE: &str = "rig.json";
pub const ANCHORS_FILE: &str = "anchors.json";
pub const INFLUENCE_FILE: &str = "influence.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn create_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(io_err(out))
}

/// Rest mesh and rig description written by `make-rig`.
pub fn load_rig(dir: &Path, manifest: &mut Manifest) -> Result<SyntheticRig> {
    let mesh_path = dir.join(MESH_FILE);
    let rig_path = dir.join(RIG_FILE);
    manifest.input(&mesh_path)?;
    manifest.input(&rig_path)?;
    SyntheticRig::from_json(&read(&rig_path)?, load_obj(&mesh_path)?)
}

fn load_dataset(dir: &Path, mesh: &Mesh, manifest: &mut Manifest) -> Result<Dataset> {
    for f in ["dataset.bin", "dataset.json"] {
        manifest.input(&dir.join(f))?;
    }
    Dataset::load(dir, Some(&mesh.content_hash()))
}

fn load_bundle(dir: &Path, mesh: &Mesh, manifest: &mut Manifest) -> Result<ModelBundle> {
    for f in ["bundle.json", "weights.bin"] {
        manifest.input(&dir.join(f))?;
    }
    ModelBundle::load(dir, Some(&mesh.content_hash()))
}

fn influence_threshold(cfg: &RunConfig, mesh: &Mesh) -> f64 {
    cfg.anchors.influence_threshold.unwrap_or_else(|| default_threshold(mesh))
}

pub fn make_rig(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    create_dir(out)?;
    let rig = SyntheticRig::build(&cfg.rig.synthetic(cfg.seed))?;
    save_obj(rig.mesh(), &rig.mesh().positions(), out.join(MESH_FILE))?;
    write(&out.join(RIG_FILE), &rig.to_json()?)?;
    let mut m = Manifest::new("make-rig", cfg);
    m.summary = json!({
        "vertices": rig.mesh().vertex_count(),
        "joints": rig.spec().joint_count(),
        "numeric_controls": rig.spec().numeric_count(),
        "mesh_hash": rig.mesh().content_hash(),
        "height_cm": rig.mesh().height(),
    });
    m.write(out, &[MESH_FILE, RIG_FILE])
}

pub fn gen_data(cfg: &RunConfig, rig_dir: &Path, out: &Path) -> Result<PathBuf> {
    let mut m = Manifest::new("gen-data", cfg);
    let rig = load_rig(rig_dir, &mut m)?;
    create_dir(out)?;
    let n = rig.mesh().vertex_count();
    let anchors = select_anchors(&rig, anchor_count(n, cfg.anchors.fraction), &cfg.anchors.policy)?;
    let influence = influence_map(
        &rig,
        &anchors,
        cfg.anchors.influence_probes,
        influence_threshold(cfg, rig.mesh()),
        cfg.seed,
    )?;
    let data = generate_dataset(&rig, cfg.poses, cfg.seed, &anchors)?;
    data.save(out)?;
    write(&out.join(ANCHORS_FILE), &anchors.to_json()?)?;
    write(&out.join(INFLUENCE_FILE), &serde_json::to_string_pretty(&influence)?)?;
    m.summary = json!({
        "poses": data.len(),
        "train": data.split.train.len(),
        "test": data.split.test.len(),
        "anchors": anchors.len(),
        "resamples": data.resamples,
        "test_split_hash": data.split.test_hash(),
    });
    m.write(out, &["dataset.bin", "dataset.json", ANCHORS_FILE, INFLUENCE_FILE])
}

pub fn train(cfg: &RunConfig, rig_dir: &Path, data_dir: &Path, out: &Path) -> Result<PathBuf> {
    let mut m = Manifest::new("train", cfg);
    let rig = load_rig(rig_dir, &mut m)?;
    let data = load_dataset(data_dir, rig.mesh(), &mut m)?;
    let influence_path = data_dir.join(INFLUENCE_FILE);
    m.input(&influence_path)?;
    let influence: InfluenceMap = serde_json::from_str(&read(&influence_path)?)?;
    create_dir(out)?;
    let outcome = train_all(&data, rig.mesh(), &data.anchors, &influence, &cfg.model)?;
    outcome.bundle.save(out)?;

    let mut diff = String::from("epoch,loss\n");
    for (e, l) in outcome.differential_report.loss_trace.iter().enumerate() {
        let _ = writeln!(diff, "{e},{l:.9e}");
    }
    write(&out.join("loss_differential.csv"), &diff)?;
    let mut anchors = String::from("anchor,final_loss\n");
    for (a, r) in outcome.anchor_reports.iter().enumerate() {
        let _ = writeln!(anchors, "{a},{:.9e}", r.final_loss());
    }
    write(&out.join("loss_anchors.csv"), &anchors)?;

    m.summary = json!({
        "differential_final_loss": outcome.differential_report.final_loss(),
        "differential_steps": outcome.differential_report.steps,
        "components": outcome.bundle.differential.pca.k(),
        "anchor_networks": outcome.anchor_reports.len(),
    });
    m.write(
        out,
        &["bundle.json", "weights.bin", "loss_differential.csv", "loss_anchors.csv"],
    )
}

fn report_row(out: &mut String, method: &str, r: &ErrorReport, height: f64) {
    let (mp, xp) = r.percent_of(height);
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.9e}")).unwrap_or_default();
    let _ = writeln!(
        out,
        "{method},{:.9e},{:.9e},{mp:.6},{xp:.6},{},{}",
        r.mean(),
        r.max(),
        opt(r.prediction_mse),
        opt(r.anchor_mse)
    );
}

pub fn eval(cfg: &RunConfig, rig_dir: &Path, data_dir: &Path, model_dir: &Path, out: &Path) -> Result<PathBuf> {
    let mut m = Manifest::new("eval", cfg);
    let rig = load_rig(rig_dir, &mut m)?;
    let mesh = rig.mesh();
    let data = load_dataset(data_dir, mesh, &mut m)?;
    let bundle = load_bundle(model_dir, mesh, &mut m)?;
    create_dir(out)?;
    let sys = FactorizedSystem::for_mesh(mesh, &bundle.anchors)?;
    let ctx = EvalContext::new(&rig, &data)?;

    let ours = evaluate_bundle(&ctx, &bundle, &sys)?;
    let lbs = baseline_lbs(&ctx)?;
    let k = cfg.model.component_count(mesh.vertex_count(), data.split.train.len());
    let pca = baseline_pca_regression(&ctx, k)?;
    let local = if cfg.eval.local_baseline {
        Some(baseline_local(&ctx, &cfg.model)?.0)
    } else {
        None
    };

    let height = mesh.height();
    let mut csv = String::from("method,mean_error,max_error,mean_percent_height,max_percent_height,prediction_mse,anchor_mse\n");
    report_row(&mut csv, "ours", &ours, height);
    report_row(&mut csv, "lbs", &lbs, height);
    report_row(&mut csv, "pca", &pca, height);
    if let Some(l) = &local {
        report_row(&mut csv, "local", l, height);
    }
    write(&out.join("report.csv"), &csv)?;
    export_histogram(&ours.errors, cfg.eval.histogram_bins, out.join("histogram.csv"))?;
    export_heatmap(
        mesh,
        &mesh.positions(),
        &ours.vertex_means(),
        cfg.eval.heatmap_ceiling,
        out.join("heatmap.obj"),
    )?;

    let poses = keyframe_sequence(rig.spec(), cfg.eval.sequence_keys, cfg.eval.frames_per_key, cfg.seed)?;
    let seq = evaluate_poses(&rig, &bundle, &sys, &poses)?;
    let mut seq_csv = String::from("frame,mean_error,max_error\n");
    for f in 0..seq.poses {
        let e = seq.pose_errors(f);
        let mean = e.iter().sum::<f64>() / e.len().max(1) as f64;
        let max = e.iter().copied().fold(0.0, f64::max);
        let _ = writeln!(seq_csv, "{f},{mean:.9e},{max:.9e}");
    }
    write(&out.join("sequence.csv"), &seq_csv)?;

    // expected orderings, recorded rather than enforced
    let expectations = json!({
        "mean_below_half_lbs": ours.mean() <= 0.5 * lbs.mean(),
        "mean_below_pca": ours.mean() <= pca.mean(),
        "max_below_local": local.as_ref().map(|l| ours.max() <= l.max()),
    });
    m.summary = json!({
        "test_split_hash": ours.split_hash,
        "ours": {"mean": ours.mean(), "max": ours.max()},
        "lbs": {"mean": lbs.mean(), "max": lbs.max()},
        "pca": {"mean": pca.mean(), "max": pca.max(), "components": k},
        "local": local.as_ref().map(|l| json!({"mean": l.mean(), "max": l.max()})),
        "sequence": {"frames": seq.poses, "mean": seq.mean(), "max": seq.max()},
        "expectations": expectations,
    });
    m.write(out, &["report.csv", "histogram.csv", "heatmap.obj", "sequence.csv"])
}

pub fn predict(cfg: &RunConfig, rig_dir: &Path, model_dir: &Path, pose: Option<&Path>, out: &Path) -> Result<PathBuf> {
    let mut m = Manifest::new("predict", cfg);
    let rig = load_rig(rig_dir, &mut m)?;
    let bundle = load_bundle(model_dir, rig.mesh(), &mut m)?;
    let spec = rig.spec();
    let params = match pose {
        Some(path) => {
            m.input(path)?;
            serde_json::from_str::<PoseParams>(&read(path)?)?
        }
        None => spec.rest_params(),
    };
    let pose = spec.compose(&params)?;
    create_dir(out)?;
    let sys = FactorizedSystem::for_mesh(rig.mesh(), &bundle.anchors)?;
    let pred = predict_full(&bundle, &sys, &rig, &pose)?;
    save_obj(rig.mesh(), &pred.positions, out.join("deformed.obj"))?;
    let truth = rig.evaluate(&pose, &Injection::None)?;
    m.summary = json!({ "max_distance_to_rig": pred.positions.max_distance(&truth) });
    m.write(out, &["deformed.obj"])
}

pub fn run_sweep(cfg: &RunConfig, rig_dir: &Path, data_dir: &Path, out: &Path) -> Result<PathBuf> {
    let mut m = Manifest::new("sweep", cfg);
    let rig = load_rig(rig_dir, &mut m)?;
    let data = load_dataset(data_dir, rig.mesh(), &mut m)?;
    create_dir(out)?;
    let base = SweepBase {
        model: cfg.model.clone(),
        anchor_fraction: cfg.anchors.fraction,
        anchor_policy: cfg.anchors.policy.clone(),
        influence_probes: cfg.anchors.influence_probes,
        influence_threshold: influence_threshold(cfg, rig.mesh()),
    };
    let rows = sweep(&rig, &data, cfg.sweep.protocol, &cfg.sweep.grid, &base)?;
    let file = format!("sweep_{}.csv", cfg.sweep.protocol.column());
    write_sweep_csv(cfg.sweep.protocol, &rows, out.join(&file))?;
    m.summary = json!({
        "protocol": cfg.sweep.protocol,
        "rows": rows.iter().map(|r| json!({"value": r.value, "mean": r.report.mean(), "max": r.report.max()})).collect::<Vec<_>>(),
    });
    m.write(out, &[file.as_str()])
}

pub fn analyze_spectrum(cfg: &RunConfig, mesh_path: Option<&Path>, out: &Path) -> Result<PathBuf> {
    let mut m = Manifest::new("analyze-spectrum", cfg);
    let mesh = match mesh_path {
        Some(p) => {
            m.input(p)?;
            load_obj(p)?
        }
        None => shapes::grid(cfg.spectrum.grid[0], cfg.spectrum.grid[1], 1.0),
    };
    let n = mesh.vertex_count();
    let count = cfg.spectrum.anchors.clamp(1, n);
    // evenly spread over the vertex order
    let anchors = AnchorSet::uniform((0..count).map(|i| i * n / count).collect());
    create_dir(out)?;
    let probe = SpectralProbe::new(&mesh, &anchors)?;
    let table = probe.table()?;
    let mut csv = String::from("mode,eigenvalue,amplification,amplification_times_eigenvalue\n");
    let mut worst: f64 = 0.0;
    for r in &table {
        let prod = r.amplification * r.eigenvalue;
        worst = worst.max((prod - 1.0).abs());
        let _ = writeln!(csv, "{},{:.12e},{:.12e},{:.12e}", r.mode, r.eigenvalue, r.amplification, prod);
    }
    write(&out.join("spectrum.csv"), &csv)?;
    m.summary = json!({
        "vertices": n,
        "anchors": anchors.indices,
        "modes": table.len(),
        "max_product_deviation": worst,
    });
    m.write(out, &["spectrum.csv"])
}
