//! Acceptance suite A1–A8. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use gnelf_core::dataio::{
    gen_toy_views, read_checkpoint, read_checkpoint_file, OrbitRig, SceneDataset, Split, ToySceneSpec, ToyShapes,
};
use gnelf_core::geometry::{pixel_ray, Aabb, CameraIntrinsics, Pose, Ray};
use gnelf_core::gridenc::{hash_index, HashTriPlane, LevelMask, Plane};
use gnelf_core::optim::grad_check;
use gnelf_core::pipeline::{
    ablate_masking, foreground_mask, mask_iou, GNelf, Precision, PresetConfig, RenderOptions, SceneInfo, TrainLog,
    Trainer,
};
use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn a1_hash_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let prime = BigUint::from(2_654_435_761u64);
    let start = Instant::now();
    for _ in 0..100_000 {
        let x: u32 = rng.gen();
        let y: u32 = rng.gen();
        let t = 1u32 << rng.gen_range(0..=31);
        let want = (BigUint::from(x) ^ (BigUint::from(y) * &prime)) % BigUint::from(t);
        let got = hash_index(x, y, t);
        ensure(BigUint::from(got) == want, format!("hash({x}, {y}, {t}) = {got}, oracle {want}"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 1.0, format!("took {secs:.2}s"))?;
    Ok(format!("1e5 triples exact in {secs:.2}s"))
}

fn a2_interpolation() -> Check {
    let start = Instant::now();
    let cfg = PresetConfig::tiny_test().grid;
    let mut grid = HashTriPlane::<f32>::zeros(cfg, Aabb::cube(1.0)).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for p in grid.params_mut() {
        *p = rng.gen_range(-1.0..1.0);
    }
    let mut worst: f64 = 0.0;
    let mut vertex_checks = 0;
    for _ in 0..10_000 {
        let plane = Plane::ALL[rng.gen_range(0..3)];
        let level = rng.gen_range(0..cfg.levels);
        let (u, v): (f32, f32) = (rng.gen(), rng.gen());
        let c = grid.corners(plane, level, u, v);
        let sum: f64 = c.weights.iter().map(|w| *w as f64).sum();
        worst = worst.max((sum - 1.0).abs());

        let lay = *grid.layout(plane, level);
        if lay.dense {
            let r = lay.resolution;
            let (x, y) = (rng.gen_range(0..=r), rng.gen_range(0..=r));
            let uv = (x as f32 / r as f32, y as f32 / r as f32);
            let feat = grid.plane_feature(plane, level, uv);
            let off = grid.entry_offset(plane, level, x, y);
            let stored = &grid.params()[off..off + cfg.feature_dim];
            ensure(
                feat.iter().zip(stored).all(|(a, b)| a.to_bits() == b.to_bits()),
                format!("vertex ({x}, {y}) of {plane:?} level {level}: {feat:?} vs {stored:?}"),
            )?;
            vertex_checks += 1;
        }
    }
    ensure(worst <= 1e-6, format!("weights sum off by {worst:e}"))?;
    ensure(vertex_checks > 1000, "too few dense-level queries")?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 1.0, format!("took {secs:.2}s"))?;
    Ok(format!("max |Σw-1| = {worst:.1e}, {vertex_checks} vertices bit-exact, {secs:.2}s"))
}

fn toy_rays(data: &SceneDataset, n: usize, seed: u64) -> (Vec<Ray<f64>>, Vec<[f64; 3]>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = &data.intrinsics;
    let mut rays = Vec::new();
    let mut targets = Vec::new();
    while rays.len() < n {
        let f = &data.frames[rng.gen_range(0..data.len())];
        let (i, j) = (rng.gen_range(0..cam.width), rng.gen_range(0..cam.height));
        rays.push(pixel_ray(cam, &f.pose, i as f64, j as f64));
        targets.push(f.image.get(i, j).map(f64::from));
    }
    (rays, targets)
}

fn pick(rng: &mut ChaCha8Rng, pool: &[usize], n: usize) -> Vec<usize> {
    if pool.len() <= n {
        return pool.to_vec();
    }
    rand::seq::index::sample(rng, pool.len(), n).into_iter().map(|i| pool[i]).collect()
}

fn a3_gradients() -> Check {
    let start = Instant::now();
    let data = gen_toy_views(&ToySceneSpec::new(3, 3, ToyShapes::Mixed).scene(), &OrbitRig::default(), 4, 64, 64, 3, Split::Train);
    let mut model = GNelf::<f64>::for_dataset(PresetConfig::tiny_test(), &data).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for p in model.grid.params_mut() {
        *p = rng.gen_range(-0.5..0.5);
    }
    let (rays, targets) = toy_rays(&data, 24, 3);
    let g = model
        .batch_gradients(&rays, &targets, false)
        .map_err(|e| e.to_string())?
        .ok_or("every probe ray missed")?;
    const H: f64 = 1e-5;
    let mut lines = Vec::new();
    let mut worst: f64 = 0.0;

    // (a) grid entries touched by the batch
    let touched: Vec<usize> = (0..g.grid.len()).filter(|&i| g.grid[i] != 0.0).collect();
    let idx = pick(&mut rng, &touched, 64);
    ensure(idx.len() >= 64, format!("only {} grid entries touched", idx.len()))?;
    let theta = model.grid.params().to_vec();
    let mut probe = model.clone();
    let r = grad_check(
        |p| {
            probe.grid.params_mut().copy_from_slice(p);
            probe.batch_loss(&rays, &targets).unwrap().unwrap()
        },
        &theta,
        &g.grid,
        &idx,
        H,
    );
    lines.push(format!("grid {:.1e}", r.max_rel_error));
    worst = worst.max(r.max_rel_error);

    // (b) every LSTM block, (c) head weights and biases
    let theta = model.decoder.params().to_vec();
    let mut lstm_worst: f64 = 0.0;
    let mut lstm_checked = 0;
    let mut head_idx = Vec::new();
    for block in model.decoder.blocks() {
        let pool: Vec<usize> = block.range.clone().collect();
        if block.name.starts_with("head") {
            head_idx.extend(pool);
            continue;
        }
        let idx = pick(&mut rng, &pool, 64);
        let r = grad_check(
            |p| {
                probe.decoder.params_mut().copy_from_slice(p);
                probe.batch_loss(&rays, &targets).unwrap().unwrap()
            },
            &theta,
            &g.decoder,
            &idx,
            H,
        );
        ensure(
            r.max_rel_error < 1e-2,
            format!("{}: rel error {:.3e} at {} ({} vs {})", block.name, r.max_rel_error, r.worst_index, r.worst_analytic, r.worst_numeric),
        )?;
        lstm_worst = lstm_worst.max(r.max_rel_error);
        lstm_checked += r.checked;
    }
    lines.push(format!("lstm {lstm_worst:.1e} ({lstm_checked} coords)"));
    worst = worst.max(lstm_worst);
    let idx = pick(&mut rng, &head_idx, 64);
    let r = grad_check(
        |p| {
            probe.decoder.params_mut().copy_from_slice(p);
            probe.batch_loss(&rays, &targets).unwrap().unwrap()
        },
        &theta,
        &g.decoder,
        &idx,
        H,
    );
    lines.push(format!("head {:.1e}", r.max_rel_error));
    worst = worst.max(r.max_rel_error);

    ensure(worst < 1e-2, format!("max relative error {worst:.3e} ({})", lines.join(", ")))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, format!("took {secs:.1}s"))?;
    Ok(format!("{} in {secs:.1}s", lines.join(", ")))
}

fn toy_scene_info() -> SceneInfo {
    SceneInfo {
        intrinsics: CameraIntrinsics::from_fov_x(800, 800, 0.6911112).unwrap(),
        aabb: [[-1.5; 3], [1.5; 3]],
        background: [1.0; 3],
        ndc: None,
    }
}

fn a4_parameters(tmp: &Path) -> Check {
    let start = Instant::now();
    let small = PresetConfig::small();
    let dec = small.decoder_config().parameter_count();
    let grid = small.grid.parameter_count();
    ensure(dec == 23_299, format!("decoder has {dec} parameters"))?;
    let off = (grid as f64 - 474_432.0).abs() / 474_432.0;
    ensure(off <= 0.01, format!("grid has {grid} parameters ({:.2}% off)", off * 100.0))?;
    ensure(grid == 472_146, format!("pinned grid count changed: {grid}"))?;
    let model = GNelf::<f32>::new(small, toy_scene_info(), 0).map_err(|e| e.to_string())?;
    let path = tmp.join("small_f16.gnlf");
    model
        .save(&path, Precision::F16, None, serde_json::json!({}))
        .map_err(|e| e.to_string())?;
    let bytes = std::fs::metadata(&path).map_err(|e| e.to_string())?.len();
    ensure(bytes <= 1_048_576, format!("f16 export is {bytes} bytes"))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, format!("took {secs:.1}s"))?;
    Ok(format!(
        "decoder {dec}, grid {grid} ({:.2}% from 474,432), total {}, f16 export {bytes} B, {secs:.2}s",
        off * 100.0,
        dec + grid
    ))
}

struct ToyRun {
    model: GNelf<f32>,
    val: SceneDataset,
}

fn smoothed(log: &TrainLog, window: usize, upto: u64) -> Vec<f64> {
    let losses: Vec<f64> = log.records.iter().filter(|r| r.step <= upto).filter_map(|r| r.loss).collect();
    losses.chunks_exact(window).map(|c| c.iter().sum::<f64>() / window as f64).collect()
}

fn a5_overfit(run: &mut Option<ToyRun>) -> Check {
    let start = Instant::now();
    let spec = ToySceneSpec::new(5, 3, ToyShapes::Mixed);
    let scene = spec.scene();
    let rig = OrbitRig::default();
    let train = gen_toy_views(&scene, &rig, 20, 64, 64, spec.seed, Split::Train);
    let val = gen_toy_views(&scene, &rig, 4, 64, 64, spec.seed, Split::Val);
    let preset = PresetConfig::tiny_test();
    ensure(preset.total_steps <= 20_000, "step budget exceeds 20k")?;
    let model = GNelf::<f32>::for_dataset(preset, &train).map_err(|e| e.to_string())?;
    let mut trainer = Trainer::new(model, &train, Some(&val), false).map_err(|e| e.to_string())?;
    let log = trainer.run(|_, _| Ok(())).map_err(|e| e.to_string())?;
    let toy_psnr = log.last_val_psnr().ok_or("no validation PSNR recorded")?;
    let toy_secs = start.elapsed().as_secs_f64();

    // constant-color scene: no primitives, every pixel the background
    let mut flat = ToySceneSpec::new(6, 0, ToyShapes::Mixed);
    flat.background = [0.3, 0.6, 0.9];
    let flat_scene = flat.scene();
    let flat_train = gen_toy_views(&flat_scene, &rig, 20, 64, 64, 6, Split::Train);
    let flat_val = gen_toy_views(&flat_scene, &rig, 4, 64, 64, 6, Split::Val);
    let mut p = PresetConfig::tiny_test();
    p.total_steps = 2000;
    let m = GNelf::<f32>::for_dataset(p, &flat_train).map_err(|e| e.to_string())?;
    let mut t = Trainer::new(m, &flat_train, Some(&flat_val), false).map_err(|e| e.to_string())?;
    let flat_log = t.run(|_, _| Ok(())).map_err(|e| e.to_string())?;
    let flat_psnr = flat_log.last_val_psnr().ok_or("no validation PSNR recorded")?;
    let flat_loss = flat_log.records.last().and_then(|r| r.loss).unwrap_or(f64::NAN);

    let secs = start.elapsed().as_secs_f64();
    let windows = smoothed(&log, 100, 5000);
    let rises = windows.windows(2).filter(|w| w[1] > w[0]).count();
    eprintln!(
        "  A5 detail: toy {toy_psnr:.2} dB after {} steps ({toy_secs:.0}s); constant {flat_psnr:.2} dB, final loss {flat_loss:.2e}; \
         100-step loss windows: {} of {} rise",
        log.records.len(),
        rises,
        windows.len().saturating_sub(1)
    );
    *run = Some(ToyRun {
        model: trainer.into_parts().0,
        val,
    });
    ensure(toy_psnr >= 25.0, format!("held-out PSNR {toy_psnr:.2} dB < 25"))?;
    ensure(flat_psnr >= 40.0, format!("constant scene PSNR {flat_psnr:.2} dB < 40"))?;
    ensure(flat_loss < 1e-4, format!("constant scene loss {flat_loss:e}"))?;
    ensure(secs <= 1800.0, format!("took {secs:.0}s"))?;
    let (first, last) = (windows.first().copied().unwrap_or(0.0), windows.last().copied().unwrap_or(0.0));
    ensure(last < 0.1 * first, format!("smoothed loss {first:.2e} -> {last:.2e}"))?;
    Ok(format!("held-out {toy_psnr:.2} dB, constant {flat_psnr:.2} dB, {secs:.0}s on this machine"))
}

fn a6_masking(run: &Option<ToyRun>) -> Check {
    let run = run.as_ref().ok_or("needs the A5 model")?;
    let m = &run.model;
    let levels = m.grid.config().levels;
    let ks = [0, levels / 2, levels];
    let rows = ablate_masking(m, &run.val, &ks, 1, false).map_err(|e| e.to_string())?;
    let psnrs: Vec<f64> = rows.iter().map(|r| r.psnr).collect();
    let sims: Vec<f64> = rows.iter().map(|r| r.similarity).collect();
    let mut iou = 0.0;
    for f in &run.val.frames {
        let opts = RenderOptions {
            scale: 1,
            mask: LevelMask::top(levels / 2),
            parallel: false,
        };
        let img = m.render_image(&run.val.intrinsics, &f.pose, opts).map_err(|e| e.to_string())?;
        let bg = run.val.background;
        iou += mask_iou(&foreground_mask(&img, bg, 0.1), &foreground_mask(&f.image, bg, 0.1)).map_err(|e| e.to_string())?;
    }
    iou /= run.val.len() as f64;
    let table = format!("k={ks:?} psnr={psnrs:.2?} cos={sims:.4?} iou(k={})={iou:.3}", levels / 2);
    ensure(psnrs.windows(2).all(|w| w[1] < w[0]), format!("PSNR not strictly decreasing: {table}"))?;
    ensure(sims.windows(2).all(|w| w[1] < w[0]), format!("similarity not strictly decreasing: {table}"))?;
    ensure(iou >= 0.8, format!("silhouette IoU below 0.8: {table}"))?;
    Ok(table)
}

fn a7_determinism(tmp: &Path) -> Check {
    let data = tmp.join("a7_data");
    let code = gnelf_cli::run([
        "gnelf", "gen-toy", "--out", data.to_str().unwrap(), "--seed", "7", "--views", "6", "--width", "32", "--height", "32",
    ]);
    ensure(code == 0, format!("gen-toy exited {code}"))?;
    let cfg = tmp.join("a7.toml");
    std::fs::write(&cfg, "name = \"tiny-test\"\ntotal_steps = 40\nbatch_size = 64\nval_every = 20\n").map_err(|e| e.to_string())?;
    let mut traces = Vec::new();
    for run in 0..2 {
        let out = tmp.join(format!("a7_run{run}"));
        let code = gnelf_cli::run([
            "gnelf",
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "42",
            "--threads",
            "1",
            "--quiet",
        ]);
        ensure(code == 0, format!("train run {run} exited {code}"))?;
        let text = std::fs::read_to_string(out.join("train_log.jsonl")).map_err(|e| e.to_string())?;
        let losses: Vec<Option<u64>> = text
            .lines()
            .map(|l| {
                let v: serde_json::Value = serde_json::from_str(l).unwrap();
                v["loss"].as_f64().map(f64::to_bits)
            })
            .collect();
        traces.push(losses);
    }
    ensure(traces[0].len() == 40, format!("{} log records", traces[0].len()))?;
    ensure(traces[0] == traces[1], "loss traces differ between runs")?;

    let (model, _) = GNelf::<f32>::load(&tmp.join("a7_run0/checkpoint.gnlf")).map_err(|e| e.to_string())?;
    let pose = Pose::orbit(40.0, 25.0, 4.0, gnelf_core::geometry::Vec3::zero()).unwrap();
    let cam = model.scene.intrinsics;
    let seq = model
        .render_image(&cam, &pose, RenderOptions { parallel: false, ..RenderOptions::default() })
        .map_err(|e| e.to_string())?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let par = pool
        .install(|| model.render_image(&cam, &pose, RenderOptions::default()))
        .map_err(|e| e.to_string())?;
    let same = seq.data().iter().zip(par.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    ensure(same, "parallel and sequential renders differ")?;
    Ok("2 CLI train runs bit-identical over 40 steps; parallel render == sequential".into())
}

fn f16_quantum(x: f32) -> f32 {
    let a = x.abs();
    if a < 2f32.powi(-14) {
        2f32.powi(-24)
    } else {
        2f32.powi(a.log2().floor() as i32 - 10)
    }
}

fn a8_checkpoint(tmp: &Path) -> Check {
    let mut model = GNelf::<f32>::new(PresetConfig::tiny_test(), toy_scene_info(), 8).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for p in model.grid.params_mut() {
        *p = rng.gen_range(-2.0f32..2.0) * 10f32.powi(rng.gen_range(-6..1));
    }
    let state = gnelf_core::pipeline::TrainState::new(&model);
    let path = tmp.join("a8.gnlf");
    model
        .save(&path, Precision::F32, Some(&state), serde_json::json!({}))
        .map_err(|e| e.to_string())?;
    let (back, st) = GNelf::<f32>::load(&path).map_err(|e| e.to_string())?;
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    ensure(bits(back.grid.params()) == bits(model.grid.params()), "grid not bit-exact")?;
    ensure(bits(back.decoder.params()) == bits(model.decoder.params()), "decoder not bit-exact")?;
    ensure(st.as_ref() == Some(&state), "optimizer state differs")?;

    let half = tmp.join("a8_f16.gnlf");
    model
        .save(&half, Precision::F16, None, serde_json::json!({}))
        .map_err(|e| e.to_string())?;
    let (h, _) = GNelf::<f32>::load(&half).map_err(|e| e.to_string())?;
    let mut worst: f32 = 0.0;
    for (a, b) in model
        .grid
        .params()
        .iter()
        .chain(model.decoder.params())
        .zip(h.grid.params().iter().chain(h.decoder.params()))
    {
        let q = f16_quantum(*a);
        ensure((a - b).abs() <= q, format!("{a} reloaded as {b}, quantum {q}"))?;
        worst = worst.max((a - b).abs() / q);
    }

    let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    let mut corrupt = vec![bytes[..bytes.len() - 10].to_vec(), bytes[..bytes.len() / 2].to_vec()];
    let mut flipped = bytes.clone();
    flipped[2] ^= 0xff;
    corrupt.push(flipped);
    let mut lenbad = bytes.clone();
    lenbad[5..9].copy_from_slice(&u32::MAX.to_le_bytes());
    corrupt.push(lenbad);
    for (i, c) in corrupt.iter().enumerate() {
        let p = tmp.join(format!("corrupt{i}.gnlf"));
        std::fs::write(&p, c).map_err(|e| e.to_string())?;
        let e1 = read_checkpoint_file(&p).err().ok_or(format!("corrupt file {i} accepted"))?.to_string();
        let e2 = read_checkpoint(c).err().ok_or(format!("corrupt file {i} accepted"))?.to_string();
        ensure(e1 == e2, format!("non-deterministic rejection: {e1} / {e2}"))?;
        if i < 2 {
            ensure(e1.contains("tensor "), format!("truncation error names no tensor: {e1}"))?;
        }
    }
    Ok(format!("f32 bit-exact, f16 max error {worst:.2} quanta, {} corrupt files rejected", corrupt.len()))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut toy = None;
    let mut results: Vec<(&str, &str, Check, f64)> = Vec::new();
    let mut record = |id: &'static str, name: &'static str, f: &mut dyn FnMut() -> Check| {
        let start = Instant::now();
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let status = if r.is_ok() { "PASS" } else { "FAIL" };
        let detail = match &r {
            Ok(d) | Err(d) => d.clone(),
        };
        println!("{id} {status} {name} ({secs:.1}s): {detail}");
        results.push((id, name, r, secs));
    };
    record("A1", "hash oracle", &mut a1_hash_oracle);
    record("A2", "interpolation", &mut a2_interpolation);
    record("A3", "gradient suite", &mut a3_gradients);
    record("A4", "parameter accounting", &mut || a4_parameters(tmp.path()));
    record("A5", "toy-scene overfit", &mut || a5_overfit(&mut toy));
    record("A6", "masking trend", &mut || a6_masking(&toy));
    record("A7", "determinism", &mut || a7_determinism(tmp.path()));
    record("A8", "checkpoint round trip", &mut || a8_checkpoint(tmp.path()));
    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
