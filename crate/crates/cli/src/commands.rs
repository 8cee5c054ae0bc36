use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use gnelf_core::dataio::{
    gen_toy_views, load_blender_dataset, load_camera_set, write_atomic, write_blender_dataset, BlenderOptions,
    OrbitRig, SceneDataset, Split, ToySceneSpec, ToyShapes,
};
use gnelf_core::geometry::{Pose, Vec3};
use gnelf_core::pipeline::{ablate_masking, evaluate, GNelf, Precision, PresetConfig, RenderOptions, TrainLog, TrainRecord, Trainer};
use serde::Deserialize;

use crate::{CliError, CliResult, GlobalOpts};

pub const CHECKPOINT_FILE: &str = "checkpoint.gnlf";
pub const EXPORT_FILE: &str = "model_f16.gnlf";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const CONFIG_FILE: &str = "config.toml";

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

/// Base preset from `--config` (default `small`), then `--set`, then `--seed`.
pub fn resolve_preset(g: &GlobalOpts) -> CliResult<PresetConfig> {
    let base = match &g.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            PresetConfig::from_toml_str(&text).map_err(|e| usage(e.to_string()))?
        }
        None => PresetConfig::small(),
    };
    let mut preset = base.with_overrides(&g.overrides).map_err(|e| usage(e.to_string()))?;
    if let Some(seed) = g.seed {
        preset.seed = seed;
    }
    Ok(preset)
}

/// Loads one split from a Blender-format directory (`transforms_{split}.json`)
/// or a forward-facing one (`cameras_{split}.json`).
pub fn load_split(dir: &Path, split: Split, background: [f32; 3]) -> CliResult<SceneDataset> {
    if !dir.is_dir() {
        return Err(usage(format!("data directory {} does not exist", dir.display())));
    }
    let blender = dir.join(format!("transforms_{}.json", split.as_str()));
    let cameras = dir.join(format!("cameras_{}.json", split.as_str()));
    let data = if blender.is_file() {
        let empty = std::fs::read_to_string(&blender)
            .ok()
            .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
            .and_then(|v| v.get("frames").and_then(|f| f.as_array()).map(Vec::is_empty))
            .unwrap_or(false);
        if empty {
            return Err(usage(format!("split {} in {} has no frames", split.as_str(), dir.display())));
        }
        let opts = BlenderOptions {
            background,
            ..BlenderOptions::default()
        };
        load_blender_dataset(dir, split, &opts)?
    } else if cameras.is_file() {
        load_camera_set(&cameras, split, background)?
    } else {
        return Err(usage(format!("split {} not found in {}", split.as_str(), dir.display())));
    };
    if data.is_empty() {
        return Err(usage(format!("split {} in {} has no frames", split.as_str(), dir.display())));
    }
    Ok(data)
}

fn parse_split(s: &str) -> CliResult<Split> {
    Split::parse(s).map_err(|e| usage(e.to_string()))
}

fn load_model(path: &Path) -> CliResult<GNelf<f32>> {
    Ok(GNelf::<f32>::load(path)?.0)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out split used for periodic validation; skipped when absent.
    #[arg(long, default_value = "val")]
    pub val_split: String,
    /// Continue from `<out>/checkpoint.gnlf`.
    #[arg(long)]
    pub resume: bool,
    /// Suppress progress lines on stderr.
    #[arg(long)]
    pub quiet: bool,
}

fn read_log(path: &Path) -> CliResult<Vec<TrainRecord>> {
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| runtime(format!("{}: bad log line: {e}", path.display()))))
        .collect()
}

fn write_log(path: &Path, records: &[TrainRecord]) -> CliResult {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    Ok(write_atomic(path, text.as_bytes())?)
}

pub fn cmd_train(g: &GlobalOpts, a: &TrainArgs) -> CliResult {
    let out = g.out.as_ref().ok_or_else(|| usage("train needs --out DIR"))?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let log_path = out.join(LOG_FILE);
    let resumed = if a.resume {
        if !ckpt_path.is_file() {
            return Err(usage(format!("--resume: {} not found", ckpt_path.display())));
        }
        let (mut model, state) = GNelf::<f32>::load(&ckpt_path)?;
        let state = state.ok_or_else(|| runtime("checkpoint has no optimizer state to resume from"))?;
        model.preset = model.preset.with_overrides(&g.overrides).map_err(|e| usage(e.to_string()))?;
        Some((model, state))
    } else {
        None
    };
    let preset = match &resumed {
        Some((m, _)) => m.preset.clone(),
        None => resolve_preset(g)?,
    };
    let train = load_split(&a.data, Split::Train, preset.background)?;
    let val_split = parse_split(&a.val_split)?;
    let val = match load_split(&a.data, val_split, preset.background) {
        Ok(v) => Some(v),
        Err(CliError::Usage(_)) => None,
        Err(e) => return Err(e),
    };
    let parallel = g.threads > 1;
    let mut records = Vec::new();
    let mut trainer = match resumed {
        Some((model, state)) => {
            records = read_log(&log_path)?;
            records.retain(|r| r.step <= state.step);
            Trainer::resume(model, state, &train, val.as_ref(), parallel)?
        }
        None => {
            let model = GNelf::for_dataset(preset.clone(), &train).map_err(|e| usage(e.to_string()))?;
            Trainer::new(model, &train, val.as_ref(), parallel)?
        }
    };
    std::fs::create_dir_all(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    write_atomic(&out.join(CONFIG_FILE), trainer.model().preset.to_toml_string().as_bytes())?;

    let save = |t: &Trainer<'_, f32>, records: &[TrainRecord]| -> CliResult {
        let meta = serde_json::json!({ "seed": t.model().preset.seed });
        t.model().save(&ckpt_path, Precision::F32, Some(t.state()), meta)?;
        write_log(&log_path, records)
    };
    let every = trainer.model().preset.checkpoint_every;
    while !trainer.is_done() {
        let rec = match trainer.step() {
            Ok(r) => r,
            Err(e) => {
                // parameters are untouched by a failed step: save them as the last good state
                save(&trainer, &records)?;
                return Err(runtime(format!("{e}; last good checkpoint at {}", ckpt_path.display())));
            }
        };
        if !a.quiet && (rec.val_psnr.is_some() || rec.step % 100 == 0) {
            let loss = rec.loss.map_or("skipped".to_string(), |l| format!("{l:.6}"));
            let val = rec.val_psnr.map_or(String::new(), |p| format!(" val_psnr {p:.2}"));
            eprintln!("step {} loss {loss}{val} ({:.1}s)", rec.step, rec.elapsed_s);
        }
        let step = rec.step;
        records.push(rec);
        if every > 0 && step % every == 0 {
            save(&trainer, &records)?;
        }
    }
    save(&trainer, &records)?;
    trainer
        .model()
        .save(&out.join(EXPORT_FILE), Precision::F16, None, serde_json::json!({}))?;
    let log = TrainLog { records };
    if !a.quiet {
        if let Some(p) = log.last_val_psnr() {
            eprintln!("final val_psnr {p:.2}");
        }
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSON file holding a 4×4 camera-to-world matrix, bare or as `{"pose": ...}`.
    #[arg(long, conflicts_with_all = ["azimuth", "elevation", "radius"])]
    pub pose_file: Option<PathBuf>,
    /// Orbit azimuth in degrees around the scene-box center.
    #[arg(long, allow_hyphen_values = true)]
    pub azimuth: Option<f64>,
    #[arg(long, allow_hyphen_values = true, default_value_t = 30.0)]
    pub elevation: f64,
    #[arg(long, default_value_t = 4.0)]
    pub radius: f64,
    /// Output PNG; defaults to `<out>/render.png`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PoseFile {
    Bare([[f64; 4]; 4]),
    Wrapped { pose: [[f64; 4]; 4] },
}

pub fn orbit_pose(model: &GNelf<f32>, azimuth: f64, elevation: f64, radius: f64) -> gnelf_core::Result<Pose<f64>> {
    let [lo, hi] = model.scene.aabb;
    let center = Vec3::from_f64([0, 1, 2].map(|i| 0.5 * (lo[i] + hi[i])));
    Pose::orbit(azimuth, elevation, radius, center)
}

pub fn cmd_render(g: &GlobalOpts, a: &RenderArgs) -> CliResult {
    let output = match (&a.output, &g.out) {
        (Some(p), _) => p.clone(),
        (None, Some(dir)) => dir.join("render.png"),
        (None, None) => return Err(usage("render needs --output PATH or --out DIR")),
    };
    let model = load_model(&a.checkpoint)?;
    let pose = match (&a.pose_file, a.azimuth) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let m = match serde_json::from_str::<PoseFile>(&text) {
                Ok(PoseFile::Bare(m)) | Ok(PoseFile::Wrapped { pose: m }) => m,
                Err(e) => return Err(usage(format!("{}: not a 4x4 pose: {e}", path.display()))),
            };
            Pose::from_f64(m).map_err(|e| usage(e.to_string()))?
        }
        (None, Some(az)) => orbit_pose(&model, az, a.elevation, a.radius).map_err(|e| usage(e.to_string()))?,
        (None, None) => return Err(usage("render needs --pose-file or --azimuth")),
    };
    let opts = RenderOptions {
        scale: g.scale,
        parallel: g.threads > 1,
        ..RenderOptions::default()
    };
    let img = model
        .render_image(&model.scene.intrinsics, &pose, opts)
        .map_err(|e| usage(e.to_string()))?;
    img.save_png(&output)?;
    println!("{} ({}x{})", output.display(), img.width(), img.height());
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// One JSON record per view, then one for the mean.
    #[arg(long)]
    pub json: bool,
}

pub fn cmd_eval(g: &GlobalOpts, a: &EvalArgs) -> CliResult {
    let split = parse_split(&a.split)?;
    let model = load_model(&a.checkpoint)?;
    let data = load_split(&a.data, split, model.scene.background)?;
    let report = evaluate(&model, &data, g.scale, g.threads > 1).map_err(|e| usage(e.to_string()))?;
    if a.json {
        for v in &report.views {
            println!("{}", serde_json::to_string(v).expect("serializable"));
        }
        println!(
            "{}",
            serde_json::json!({"view": "mean", "psnr": report.mean_psnr, "ssim": report.mean_ssim})
        );
    } else {
        println!("{:>6}  {:>8}  {:>7}", "view", "PSNR", "SSIM");
        for v in &report.views {
            let s = v.ssim.map_or("-".to_string(), |s| format!("{s:.4}"));
            println!("{:>6}  {:>8.3}  {:>7}", v.view, v.psnr, s);
        }
        let s = report.mean_ssim.map_or("-".to_string(), |s| format!("{s:.4}"));
        println!("{:>6}  {:>8.3}  {:>7}", "mean", report.mean_psnr, s);
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Mask depths; defaults to `0, L/2, L`.
    #[arg(long, value_delimiter = ',')]
    pub ks: Vec<usize>,
    #[arg(long)]
    pub json: bool,
}

pub fn cmd_ablate(g: &GlobalOpts, a: &AblateArgs) -> CliResult {
    let split = parse_split(&a.split)?;
    let model = load_model(&a.checkpoint)?;
    let levels = model.grid.config().levels;
    let ks = if a.ks.is_empty() {
        vec![0, levels / 2, levels]
    } else {
        a.ks.clone()
    };
    if let Some(k) = ks.iter().find(|&&k| k > levels) {
        return Err(usage(format!("k = {k} exceeds the model's {levels} levels")));
    }
    let data = load_split(&a.data, split, model.scene.background)?;
    let rows = ablate_masking(&model, &data, &ks, g.scale, g.threads > 1)?;
    if a.json {
        for r in &rows {
            println!("{}", serde_json::to_string(r).expect("serializable"));
        }
    } else {
        println!("{:>10}  {:>8}  {:>10}", "mask", "PSNR", "cos-sim");
        for r in &rows {
            let label = if r.k == 0 { "w/o mask".to_string() } else { format!("Top-{}", r.k) };
            println!("{label:>10}  {:>8.3}  {:>10.5}", r.psnr, r.similarity);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ShapesArg {
    Boxes,
    Spheres,
    Mixed,
}

#[derive(Debug, Args)]
pub struct GenToyArgs {
    #[arg(long, default_value_t = 3)]
    pub count: usize,
    #[arg(long, value_enum, default_value_t = ShapesArg::Mixed)]
    pub shapes: ShapesArg,
    #[arg(long, default_value_t = 20)]
    pub views: usize,
    #[arg(long, default_value_t = 4)]
    pub val_views: usize,
    #[arg(long, default_value_t = 4)]
    pub test_views: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    /// Background as `r,g,b` in [0,1].
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.0f32, 0.0, 0.0])]
    pub background: Vec<f32>,
}

pub fn cmd_gen_toy(g: &GlobalOpts, a: &GenToyArgs) -> CliResult {
    let out = g.out.as_ref().ok_or_else(|| usage("gen-toy needs --out DIR"))?;
    if a.width == 0 || a.height == 0 || a.views == 0 {
        return Err(usage("width, height and views must be positive"));
    }
    if a.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(usage("background channels must lie in [0,1]"));
    }
    let shapes = match a.shapes {
        ShapesArg::Boxes => ToyShapes::Boxes,
        ShapesArg::Spheres => ToyShapes::Spheres,
        ShapesArg::Mixed => ToyShapes::Mixed,
    };
    let seed = g.seed.unwrap_or(0);
    let mut spec = ToySceneSpec::new(seed, a.count, shapes);
    spec.background = [a.background[0], a.background[1], a.background[2]];
    let scene = spec.scene();
    let rig = OrbitRig::default();
    for (split, n) in [(Split::Train, a.views), (Split::Val, a.val_views), (Split::Test, a.test_views)] {
        if n > 0 {
            let data = gen_toy_views(&scene, &rig, n, a.width, a.height, seed, split);
            write_blender_dataset(out, &data)?;
        }
    }
    let desc = serde_json::to_string_pretty(&scene).expect("serializable");
    write_atomic(&out.join("scene.json"), desc.as_bytes())?;
    println!("{}", out.display());
    Ok(())
}
