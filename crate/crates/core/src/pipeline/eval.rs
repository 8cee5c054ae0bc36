use serde::{Deserialize, Serialize};

use super::metrics::{psnr, ssim, SSIM_WINDOW};
use super::model::GNelf;
use super::render::RenderOptions;
use crate::dataio::SceneDataset;
use crate::error::{Error, Result};
use crate::frame::Image;
use crate::gridenc::{grid_similarity, LevelMask};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view: usize,
    pub psnr: f64,
    /// Absent when the view is smaller than the SSIM window.
    pub ssim: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub k: usize,
    pub psnr: f64,
    /// Mean cosine similarity to the unmasked renders.
    pub similarity: f64,
}

fn render_views<T: Scalar>(model: &GNelf<T>, data: &SceneDataset, count: usize, opts: RenderOptions) -> Result<Vec<(Image, Image)>> {
    data.frames
        .iter()
        .take(count)
        .map(|f| {
            let img = model.render_image(&data.intrinsics, &f.pose, opts)?;
            Ok((img, f.image.downsample(opts.scale)))
        })
        .collect()
}

pub(crate) fn mean_psnr<T: Scalar>(
    model: &GNelf<T>,
    data: &SceneDataset,
    count: usize,
    scale: usize,
    mask: LevelMask,
    parallel: bool,
) -> Result<f64> {
    let opts = RenderOptions { scale, mask, parallel };
    let views = render_views(model, data, count, opts)?;
    if views.is_empty() {
        return Err(Error::domain("no views to evaluate"));
    }
    let mut sum = 0.0;
    for (img, gt) in &views {
        sum += psnr(img, gt)?;
    }
    Ok(sum / views.len() as f64)
}

/// Per-view and mean PSNR/SSIM over every frame of `data`.
pub fn evaluate<T: Scalar>(model: &GNelf<T>, data: &SceneDataset, scale: usize, parallel: bool) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::domain("cannot evaluate an empty split"));
    }
    let opts = RenderOptions {
        scale,
        mask: LevelMask::NONE,
        parallel,
    };
    let mut views = Vec::with_capacity(data.len());
    for (i, (img, gt)) in render_views(model, data, data.len(), opts)?.into_iter().enumerate() {
        let s = if img.width() >= SSIM_WINDOW && img.height() >= SSIM_WINDOW {
            Some(ssim(&img, &gt)?)
        } else {
            None
        };
        views.push(ViewMetrics {
            view: i,
            psnr: psnr(&img, &gt)?,
            ssim: s,
        });
    }
    let n = views.len() as f64;
    let mean_psnr = views.iter().map(|v| v.psnr).sum::<f64>() / n;
    let mean_ssim = views
        .iter()
        .map(|v| v.ssim)
        .sum::<Option<f64>>()
        .map(|s| s / n);
    Ok(EvalReport {
        views,
        mean_psnr,
        mean_ssim,
    })
}

/// Renders every view of `data` with the top `k` levels masked, for each `k`.
pub fn ablate_masking<T: Scalar>(model: &GNelf<T>, data: &SceneDataset, ks: &[usize], scale: usize, parallel: bool) -> Result<Vec<AblationRow>> {
    let levels = model.grid.config().levels;
    if let Some(&k) = ks.iter().find(|&&k| k > levels) {
        return Err(Error::domain(format!("mask depth {k} exceeds {levels} levels")));
    }
    if data.is_empty() {
        return Err(Error::domain("cannot ablate on an empty split"));
    }
    let opts = |k| RenderOptions {
        scale,
        mask: LevelMask::top(k),
        parallel,
    };
    let base = render_views(model, data, data.len(), opts(0))?;
    let n = base.len() as f64;
    ks.iter()
        .map(|&k| {
            let views = if k == 0 {
                base.clone()
            } else {
                render_views(model, data, data.len(), opts(k))?
            };
            let (mut p, mut s) = (0.0, 0.0);
            for ((img, gt), (unmasked, _)) in views.iter().zip(&base) {
                p += psnr(img, gt)?;
                s += grid_similarity(img, unmasked)?;
            }
            Ok(AblationRow {
                k,
                psnr: p / n,
                similarity: s / n,
            })
        })
        .collect()
}
