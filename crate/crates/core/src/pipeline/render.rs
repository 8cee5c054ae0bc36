use ndarray::Array2;
use rayon::prelude::*;

use super::model::GNelf;
use crate::decoder::DecoderForward;
use crate::error::{Error, Result};
use crate::frame::Image;
use crate::geometry::{pixel_ray, CameraIntrinsics, Pose, Ray, Vec3};
use crate::gridenc::{sh_encode_unchecked, LevelMask, SH_DIM};
use crate::scalar::Scalar;

/// Rays per decoder batch when rendering. Fixed so results never depend on
/// how work is split across threads.
pub const RENDER_CHUNK: usize = 256;

/// Rays that hit the volume, laid out for the batched decoder.
pub(crate) struct RayBatch<T> {
    /// Position of each batch ray in the caller's slice.
    pub index: Vec<usize>,
    /// `K * B` points, time-major (`t * B + b`).
    pub points: Vec<Vec3<T>>,
    pub dirs: Array2<T>,
}

impl<T> RayBatch<T> {
    pub fn len(&self) -> usize {
        self.index.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderOptions {
    pub scale: usize,
    pub mask: LevelMask,
    /// Spread ray chunks over the rayon pool. Output is bit-identical either way.
    pub parallel: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            scale: 1,
            mask: LevelMask::NONE,
            parallel: true,
        }
    }
}

impl RenderOptions {
    pub fn scale(scale: usize) -> Self {
        Self {
            scale,
            ..Self::default()
        }
    }
}

impl<T: Scalar> GNelf<T> {
    pub(crate) fn prepare_batch(&self, rays: &[Ray<T>]) -> RayBatch<T> {
        let k = self.seq_len();
        let mut index = Vec::new();
        let mut seqs = Vec::new();
        for (i, ray) in rays.iter().enumerate() {
            if let Some(points) = self.sample_ray(ray) {
                index.push(i);
                seqs.push(points);
            }
        }
        let b = index.len();
        let mut points = Vec::with_capacity(k * b);
        for t in 0..k {
            points.extend(seqs.iter().map(|s| s[t]));
        }
        let mut dirs = Array2::zeros((b, SH_DIM));
        for (row, &i) in index.iter().enumerate() {
            let enc = sh_encode_unchecked(rays[i].direction);
            dirs.row_mut(row).as_slice_mut().expect("contiguous").copy_from_slice(&enc);
        }
        RayBatch { index, points, dirs }
    }

    pub(crate) fn batch_features(&self, batch: &RayBatch<T>, mask: LevelMask) -> Array2<T> {
        let n = self.grid.point_feature_dim();
        let mut feats = Array2::zeros((batch.points.len(), n));
        for (row, p) in feats.rows_mut().into_iter().zip(&batch.points) {
            self.grid
                .point_feature_into(*p, mask, row.into_slice().expect("contiguous"));
        }
        feats
    }

    pub(crate) fn forward_batch(&self, batch: &RayBatch<T>, mask: LevelMask, keep_cache: bool) -> Result<DecoderForward<T>> {
        let feats = self.batch_features(batch, mask);
        self.decoder
            .forward(feats, batch.dirs.clone(), self.seq_len(), keep_cache)
    }

    /// Colors for a slice of rays evaluated as one batch; misses get the background.
    fn render_batch(&self, rays: &[Ray<T>], mask: LevelMask) -> Result<Vec<[T; 3]>> {
        let mut out = vec![self.background(); rays.len()];
        let batch = self.prepare_batch(rays);
        if batch.len() == 0 {
            return Ok(out);
        }
        let fwd = self.forward_batch(&batch, mask, false)?;
        for (row, &i) in batch.index.iter().enumerate() {
            out[i] = [fwd.rgb[[row, 0]], fwd.rgb[[row, 1]], fwd.rgb[[row, 2]]];
        }
        Ok(out)
    }

    /// Colors for many rays, evaluated in fixed chunks of [`RENDER_CHUNK`].
    pub fn render_rays(&self, rays: &[Ray<T>], mask: LevelMask, parallel: bool) -> Result<Vec<[T; 3]>> {
        let chunks: Vec<Result<Vec<[T; 3]>>> = if parallel {
            rays.par_chunks(RENDER_CHUNK)
                .map(|c| self.render_batch(c, mask))
                .collect()
        } else {
            rays.chunks(RENDER_CHUNK).map(|c| self.render_batch(c, mask)).collect()
        };
        let mut out = Vec::with_capacity(rays.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    pub fn render_ray(&self, ray: &Ray<T>) -> Result<[T; 3]> {
        self.render_ray_masked(ray, LevelMask::NONE)
    }

    pub fn render_ray_masked(&self, ray: &Ray<T>, mask: LevelMask) -> Result<[T; 3]> {
        Ok(self.render_batch(std::slice::from_ref(ray), mask)?[0])
    }

    /// Renders a `W/scale × H/scale` view.
    pub fn render_image(&self, cam: &CameraIntrinsics, pose: &Pose<f64>, opts: RenderOptions) -> Result<Image> {
        if ![1, 2, 4, 8].contains(&opts.scale) {
            return Err(Error::domain(format!("scale {} not in {{1, 2, 4, 8}}", opts.scale)));
        }
        if cam.width % opts.scale != 0 || cam.height % opts.scale != 0 {
            return Err(Error::domain(format!(
                "scale {} does not divide {}x{}",
                opts.scale, cam.width, cam.height
            )));
        }
        let cam = cam.scaled(opts.scale);
        let pose: Pose<T> = Pose::from_f64(pose.to_f64())?;
        let rays: Vec<Ray<T>> = (0..cam.height)
            .flat_map(|j| (0..cam.width).map(move |i| (i, j)))
            .map(|(i, j)| pixel_ray(&cam, &pose, i as f64, j as f64))
            .collect();
        let colors = self.render_rays(&rays, opts.mask, opts.parallel)?;
        let data = colors
            .iter()
            .flat_map(|c| c.iter().map(|v| v.to_f32_lossy()))
            .collect();
        Image::from_data(cam.width, cam.height, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridenc::sh_encode;
    use crate::pipeline::{PresetConfig, SceneInfo};
    use ndarray::Array2;

    fn model() -> GNelf<f64> {
        let scene = SceneInfo {
            intrinsics: CameraIntrinsics::from_fov_x(16, 16, 0.9).unwrap(),
            aabb: [[-1.0; 3], [1.0; 3]],
            background: [0.2, 0.4, 0.6],
            ndc: None,
        };
        let mut p = PresetConfig::tiny_test();
        p.seq_len = 8;
        let mut m = GNelf::new(p, scene, 11).unwrap();
        for (i, v) in m.grid.params_mut().iter_mut().enumerate() {
            *v = ((i as f64) * 0.37).sin();
        }
        m
    }

    #[test]
    fn miss_returns_background_exactly() {
        let m = model();
        let ray = Ray::new(Vec3::new(0.0, 3.0, 0.0), Vec3::new(0.0, 1.0, 0.0)).unwrap();
        assert_eq!(m.render_ray(&ray).unwrap(), [0.2f32, 0.4, 0.6].map(f64::from));
    }

    #[test]
    fn untrained_color_in_open_unit_cube() {
        let m = GNelf::<f32>::new(PresetConfig::tiny_test(), model().scene.clone(), 0).unwrap();
        let ray = Ray::new(Vec3::new(0.0, 0.0, 3.0), Vec3::new(0.1, 0.0, -1.0)).unwrap();
        let c = m.render_ray(&ray).unwrap();
        assert!(c.iter().all(|v| v.is_finite() && *v > 0.0 && *v < 1.0), "{c:?}");
    }

    #[test]
    fn matches_manual_composition() {
        let m = model();
        let ray = Ray::new(Vec3::new(0.3, -2.5, 0.4), Vec3::new(-0.1, 1.0, 0.05)).unwrap();
        // intersect → sample → features → decode, spelled out
        let (t0, t1) = crate::geometry::intersect_aabb(&ray, m.grid.aabb()).unwrap();
        let k = m.seq_len();
        let mut feats = Array2::zeros((k, m.grid.point_feature_dim()));
        for t in 0..k {
            let s = t0 + (t as f64 + 0.5) / k as f64 * (t1 - t0);
            let f = m.grid.point_feature(ray.at(s), LevelMask::NONE).unwrap();
            feats.row_mut(t).assign(&ndarray::ArrayView1::from(&f));
        }
        let want = m.decoder.decode_ray(feats.view(), &sh_encode(ray.direction).unwrap()).unwrap();
        let got = m.render_ray(&ray).unwrap();
        for c in 0..3 {
            assert!((got[c] - want[c]).abs() < 1e-12, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn one_pixel_image_equals_render_ray() {
        let m = model();
        let cam = CameraIntrinsics::new(1, 1, 1.0).unwrap();
        let pose = Pose::<f64>::orbit(30.0, 20.0, 3.0, Vec3::zero()).unwrap();
        let img = m.render_image(&cam, &pose, RenderOptions::default()).unwrap();
        let ray = pixel_ray(&cam, &pose, 0.0, 0.0);
        let c = m.render_ray(&ray).unwrap();
        assert_eq!(img.get(0, 0), c.map(|v| v as f32));
    }

    #[test]
    fn parallel_matches_sequential_and_is_repeatable() {
        let m = model();
        let cam = CameraIntrinsics::from_fov_x(40, 24, 0.9).unwrap();
        let pose = Pose::<f64>::orbit(75.0, 25.0, 3.0, Vec3::zero()).unwrap();
        let seq = RenderOptions {
            parallel: false,
            ..RenderOptions::default()
        };
        let a = m.render_image(&cam, &pose, seq).unwrap();
        let b = m.render_image(&cam, &pose, RenderOptions::default()).unwrap();
        let c = m.render_image(&cam, &pose, RenderOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(b, c);
        let s8 = m.render_image(&cam, &pose, RenderOptions::scale(8)).unwrap();
        assert_eq!((s8.width(), s8.height()), (5, 3));
        assert!(m.render_image(&cam, &pose, RenderOptions::scale(3)).is_err());
    }
}
