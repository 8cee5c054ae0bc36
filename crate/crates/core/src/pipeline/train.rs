use std::time::Instant;

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::mean_psnr;
use super::model::{GNelf, TrainState};
use super::render::RayBatch;
use crate::dataio::SceneDataset;
use crate::decoder::DecoderForward;
use crate::error::{Error, Result};
use crate::geometry::{pixel_ray, Pose, Ray};
use crate::gridenc::LevelMask;
use crate::optim::mse_loss;
use crate::scalar::Scalar;

/// Rays per backward chunk. Each chunk accumulates into its own gradient
/// buffer and buffers are summed in chunk order, so the result does not
/// depend on the thread count.
pub const TRAIN_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    /// 1-based index of the completed step.
    pub step: u64,
    /// `None` when every sampled ray missed the volume.
    pub loss: Option<f64>,
    pub rays: usize,
    pub lr_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_psnr: Option<f64>,
    pub elapsed_s: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<Option<f64>> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn last_val_psnr(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.val_psnr)
    }
}

pub struct Trainer<'a, T> {
    model: GNelf<T>,
    state: TrainState<T>,
    train: &'a SceneDataset,
    val: Option<&'a SceneDataset>,
    poses: Vec<Pose<T>>,
    parallel: bool,
    started: Instant,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    pub fn new(model: GNelf<T>, train: &'a SceneDataset, val: Option<&'a SceneDataset>, parallel: bool) -> Result<Self> {
        let state = TrainState::new(&model);
        Self::resume(model, state, train, val, parallel)
    }

    pub fn resume(
        model: GNelf<T>,
        state: TrainState<T>,
        train: &'a SceneDataset,
        val: Option<&'a SceneDataset>,
        parallel: bool,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::domain("training set is empty"));
        }
        if state.grid.len() != model.grid.parameter_count() || state.decoder.len() != model.decoder.parameter_count() {
            return Err(Error::shape("optimizer state does not match the model"));
        }
        let poses = train
            .frames
            .iter()
            .map(|f| Pose::from_f64(f.pose.to_f64()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            state,
            train,
            val,
            poses,
            parallel,
            started: Instant::now(),
        })
    }

    pub fn model(&self) -> &GNelf<T> {
        &self.model
    }

    pub fn state(&self) -> &TrainState<T> {
        &self.state
    }

    pub fn into_parts(self) -> (GNelf<T>, TrainState<T>) {
        (self.model, self.state)
    }

    pub fn step_index(&self) -> u64 {
        self.state.step
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.model.preset.total_steps
    }

    /// Draws the batch for step `step` from a stream keyed by `(seed, step)`,
    /// so a resumed run sees the same batches as an uninterrupted one.
    fn sample(&self, step: u64) -> (Vec<Ray<T>>, Vec<[T; 3]>) {
        let preset = &self.model.preset;
        let mut rng = ChaCha8Rng::seed_from_u64(preset.seed);
        rng.set_stream(step);
        let cam = &self.train.intrinsics;
        let per_frame = cam.width * cam.height;
        let total = per_frame * self.train.len();
        let mut rays = Vec::with_capacity(preset.batch_size);
        let mut targets = Vec::with_capacity(preset.batch_size);
        for _ in 0..preset.batch_size {
            let idx = rng.gen_range(0..total);
            let (f, px) = (idx / per_frame, idx % per_frame);
            let (i, j) = (px % cam.width, px / cam.width);
            rays.push(pixel_ray(cam, &self.poses[f], i as f64, j as f64));
            targets.push(self.train.frames[f].image.get(i, j).map(|c| T::c(c as f64)));
        }
        (rays, targets)
    }

    /// One Adam step on both parameter groups.
    pub fn step(&mut self) -> Result<TrainRecord> {
        let step = self.state.step;
        let preset = &self.model.preset;
        let (rays, targets) = self.sample(step);
        let lr_scale = preset.optimizer.lr_scale(step, preset.total_steps);
        let mut record = TrainRecord {
            step: step + 1,
            loss: None,
            rays: 0,
            lr_scale,
            val_psnr: None,
            elapsed_s: 0.0,
            seed: preset.seed,
        };
        if let Some(g) = self.model.batch_gradients(&rays, &targets, self.parallel)? {
            let bad = |v: &[T]| v.iter().any(|x| !x.is_finite());
            if !g.loss.is_finite() || bad(&g.grid) || bad(&g.decoder) {
                return Err(Error::Diverged {
                    step: step + 1,
                    detail: format!("loss {} or its gradient is not finite", g.loss),
                });
            }
            add_into(&mut self.state.grid.grads, &g.grid);
            add_into(&mut self.state.decoder.grads, &g.decoder);
            let opt = self.model.preset.optimizer;
            self.state
                .grid
                .step_with_lr(self.model.grid.params_mut(), opt.grid_lr * lr_scale)?;
            self.state
                .decoder
                .step_with_lr(self.model.decoder.params_mut(), opt.decoder_lr * lr_scale)?;
            record.loss = Some(g.loss.to_f64_lossy());
            record.rays = g.rays;
        }
        let preset = &self.model.preset;
        self.state.step += 1;
        let s = self.state.step;
        if preset.val_every > 0 && (s % preset.val_every == 0 || s == preset.total_steps) {
            record.val_psnr = self.validate()?;
        }
        record.elapsed_s = self.started.elapsed().as_secs_f64();
        Ok(record)
    }

    /// Mean PSNR over the first `val_views` held-out views at `val_scale`.
    pub fn validate(&self) -> Result<Option<f64>> {
        let Some(val) = self.val else { return Ok(None) };
        if val.is_empty() {
            return Ok(None);
        }
        let p = &self.model.preset;
        mean_psnr(&self.model, val, p.val_views, p.val_scale, LevelMask::NONE, self.parallel).map(Some)
    }

    /// Steps until `total_steps`, handing each record to `on_record`.
    pub fn run(&mut self, mut on_record: impl FnMut(&Self, &TrainRecord) -> Result<()>) -> Result<TrainLog> {
        let mut log = TrainLog::default();
        while !self.is_done() {
            let rec = self.step()?;
            on_record(self, &rec)?;
            log.records.push(rec);
        }
        Ok(log)
    }
}

fn add_into<T: Scalar>(acc: &mut [T], part: &[T]) {
    for (a, p) in acc.iter_mut().zip(part) {
        *a += *p;
    }
}

/// Batch loss and its gradient with respect to every model parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradients<T> {
    pub loss: T,
    /// Rays that hit the volume; misses are excluded from the loss.
    pub rays: usize,
    pub grid: Vec<T>,
    pub decoder: Vec<T>,
}

type Chunk<T> = (RayBatch<T>, Vec<[T; 3]>);

impl<T: Scalar> GNelf<T> {
    fn train_chunks(&self, rays: &[Ray<T>], targets: &[[T; 3]]) -> Result<Vec<Chunk<T>>> {
        if rays.len() != targets.len() {
            return Err(Error::shape(format!("{} rays but {} targets", rays.len(), targets.len())));
        }
        Ok(rays
            .chunks(TRAIN_CHUNK)
            .zip(targets.chunks(TRAIN_CHUNK))
            .map(|(r, t)| {
                let b = self.prepare_batch(r);
                let tg = b.index.iter().map(|&i| t[i]).collect();
                (b, tg)
            })
            .filter(|(b, _)| b.len() > 0)
            .collect())
    }

    fn chunk_backward(&self, batch: &RayBatch<T>, fwd: &DecoderForward<T>, upstream: ArrayView2<'_, T>, grid_grads: &mut [T]) -> Result<Vec<T>> {
        let mut dec = vec![T::zero(); self.decoder.parameter_count()];
        let d_feat = self.decoder.backward(fwd, upstream, &mut dec)?;
        for (row, p) in d_feat.rows().into_iter().zip(&batch.points) {
            self.grid
                .point_feature_backward(*p, LevelMask::NONE, row.as_slice().expect("contiguous"), grid_grads);
        }
        Ok(dec)
    }

    /// Mean squared error over the rays that hit the volume, `None` if all miss.
    pub fn batch_loss(&self, rays: &[Ray<T>], targets: &[[T; 3]]) -> Result<Option<T>> {
        let chunks = self.train_chunks(rays, targets)?;
        if chunks.is_empty() {
            return Ok(None);
        }
        let mut pred = Vec::new();
        for (b, _) in &chunks {
            pred.extend(self.forward_batch(b, LevelMask::NONE, false)?.rgb.iter().copied());
        }
        let target: Vec<T> = chunks.iter().flat_map(|(_, t)| t.iter().flatten().copied()).collect();
        Ok(Some(mse_loss(&pred, &target)?.0))
    }

    /// Forward with activation caching, MSE, then backpropagation through the
    /// decoder and into the grid. Chunks of [`TRAIN_CHUNK`] rays each
    /// accumulate into a fresh buffer; buffers are summed in chunk order.
    pub fn batch_gradients(&self, rays: &[Ray<T>], targets: &[[T; 3]], parallel: bool) -> Result<Option<BatchGradients<T>>> {
        let chunks = self.train_chunks(rays, targets)?;
        if chunks.is_empty() {
            return Ok(None);
        }
        let forward = |(b, _): &Chunk<T>| self.forward_batch(b, LevelMask::NONE, true);
        let fwds: Vec<DecoderForward<T>> = if parallel {
            chunks.par_iter().map(forward).collect::<Result<_>>()?
        } else {
            chunks.iter().map(forward).collect::<Result<_>>()?
        };
        let pred: Vec<T> = fwds.iter().flat_map(|f| f.rgb.iter().copied()).collect();
        let target: Vec<T> = chunks.iter().flat_map(|(_, t)| t.iter().flatten().copied()).collect();
        let (loss, grad) = mse_loss(&pred, &target)?;
        let mut upstreams = Vec::with_capacity(chunks.len());
        let mut off = 0;
        for (b, _) in &chunks {
            let n = 3 * b.len();
            upstreams.push(ArrayView2::from_shape((b.len(), 3), &grad[off..off + n]).expect("shape"));
            off += n;
        }
        let n_grid = self.grid.parameter_count();
        let mut out = BatchGradients {
            loss,
            rays: pred.len() / 3,
            grid: vec![T::zero(); n_grid],
            decoder: vec![T::zero(); self.decoder.parameter_count()],
        };
        if parallel {
            let parts: Vec<(Vec<T>, Vec<T>)> = chunks
                .par_iter()
                .zip(fwds.par_iter())
                .zip(upstreams.par_iter())
                .map(|(((b, _), f), u)| {
                    let mut grid = vec![T::zero(); n_grid];
                    let dec = self.chunk_backward(b, f, *u, &mut grid)?;
                    Ok((grid, dec))
                })
                .collect::<Result<_>>()?;
            for (grid, dec) in parts {
                add_into(&mut out.grid, &grid);
                add_into(&mut out.decoder, &dec);
            }
        } else {
            let mut scratch = vec![T::zero(); n_grid];
            for (((b, _), f), u) in chunks.iter().zip(&fwds).zip(&upstreams) {
                scratch.fill(T::zero());
                let dec = self.chunk_backward(b, f, *u, &mut scratch)?;
                add_into(&mut out.grid, &scratch);
                add_into(&mut out.decoder, &dec);
            }
        }
        Ok(Some(out))
    }
}

/// Fits a fresh model to `data` sequentially.
pub fn train<T: Scalar>(preset: super::PresetConfig, data: &SceneDataset, val: Option<&SceneDataset>) -> Result<(GNelf<T>, TrainLog)> {
    let model = GNelf::for_dataset(preset, data)?;
    let mut trainer = Trainer::new(model, data, val, false)?;
    let log = trainer.run(|_, _| Ok(()))?;
    Ok((trainer.into_parts().0, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{gen_toy_scene, Frame, Split, ToySceneSpec, ToyShapes};
    use crate::frame::Image;
    use crate::geometry::{CameraIntrinsics, Vec3};
    use crate::pipeline::PresetConfig;

    fn tiny(steps: u64) -> PresetConfig {
        let mut p = PresetConfig::tiny_test();
        p.total_steps = steps;
        p.batch_size = 96;
        p.seq_len = 16;
        p.val_every = 0;
        p
    }

    fn toy() -> SceneDataset {
        gen_toy_scene(&ToySceneSpec::new(1, 3, ToyShapes::Mixed), 4, 16, 16)
    }

    #[test]
    fn sequential_runs_are_bit_identical() {
        let data = toy();
        let (_, a) = train::<f32>(tiny(12), &data, None).unwrap();
        let (_, b) = train::<f32>(tiny(12), &data, None).unwrap();
        assert_eq!(a.losses(), b.losses());
        let steps: Vec<u64> = a.records.iter().map(|r| r.step).collect();
        assert_eq!(steps, (1..=12).collect::<Vec<_>>());
    }

    #[test]
    fn parallel_matches_sequential() {
        let data = toy();
        let m = GNelf::<f32>::for_dataset(tiny(5), &data).unwrap();
        let mut seq = Trainer::new(m.clone(), &data, None, false).unwrap();
        let mut par = Trainer::new(m, &data, None, true).unwrap();
        let a = seq.run(|_, _| Ok(())).unwrap();
        let b = par.run(|_, _| Ok(())).unwrap();
        assert_eq!(a.losses(), b.losses());
        assert_eq!(seq.model().grid.params(), par.model().grid.params());
    }

    #[test]
    fn all_miss_batch_is_skipped() {
        let cam = CameraIntrinsics::new(8, 8, 8.0).unwrap();
        // camera outside the box looking away from it
        let pose = Pose::look_at(Vec3::new(0.0, 0.0, 3.0), Vec3::new(0.0, 0.0, 6.0), Vec3::new(0.0, 1.0, 0.0)).unwrap();
        let data = SceneDataset {
            frames: vec![Frame {
                pose,
                image: Image::filled(8, 8, [0.5; 3]),
            }],
            intrinsics: cam,
            aabb: crate::geometry::Aabb::cube(1.0),
            background: [0.0; 3],
            split: Split::Train,
            ndc: None,
        };
        let m = GNelf::<f32>::for_dataset(tiny(3), &data).unwrap();
        let before = m.grid.params().to_vec();
        let mut t = Trainer::new(m, &data, None, false).unwrap();
        let rec = t.step().unwrap();
        assert_eq!((rec.loss, rec.rays, rec.step), (None, 0, 1));
        assert_eq!(t.model().grid.params(), &before[..]);
        assert_eq!(t.state().grid.t, 0);
    }

    #[test]
    fn resume_continues_identically() {
        let data = toy();
        let (_, full) = train::<f32>(tiny(8), &data, None).unwrap();
        let m = GNelf::<f32>::for_dataset(tiny(8), &data).unwrap();
        let mut t = Trainer::new(m, &data, None, false).unwrap();
        for _ in 0..3 {
            t.step().unwrap();
        }
        let ck = t.model().to_checkpoint(crate::pipeline::Precision::F32, Some(t.state()), serde_json::json!({})).unwrap();
        let (m2, st2) = GNelf::<f32>::from_checkpoint(&ck).unwrap();
        let mut t2 = Trainer::resume(m2, st2.unwrap(), &data, None, false).unwrap();
        let rest = t2.run(|_, _| Ok(())).unwrap();
        assert_eq!(rest.records[0].step, 4);
        assert_eq!(rest.losses(), full.losses()[3..].to_vec());
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut data = toy();
        data.frames.clear();
        assert!(train::<f32>(tiny(1), &data, None).is_err());
    }
}
