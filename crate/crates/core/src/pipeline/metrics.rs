use crate::error::{Error, Result};
use crate::frame::Image;

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn same_shape(a: &Image, b: &Image) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::shape(format!(
            "images differ in size: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

pub fn mse(img: &Image, reference: &Image) -> Result<f64> {
    same_shape(img, reference)?;
    let n = img.data().len().max(1) as f64;
    Ok(img
        .data()
        .iter()
        .zip(reference.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum::<f64>()
        / n)
}

/// `-10 log10(MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(img: &Image, reference: &Image) -> Result<f64> {
    let m = mse(img, reference)?;
    if m <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * m.log10()).min(PSNR_CAP))
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let x = i as f64 - half;
            (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter over the valid region.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM: 11×11 Gaussian window (σ = 1.5), valid region only, averaged
/// over pixels and then over channels.
pub fn ssim(img: &Image, reference: &Image) -> Result<f64> {
    same_shape(img, reference)?;
    let (w, h) = (img.width(), img.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::domain(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let k = gaussian_window();
    let mut total = 0.0;
    for c in 0..3 {
        let a: Vec<f64> = img.data().iter().skip(c).step_by(3).map(|&v| v as f64).collect();
        let b: Vec<f64> = reference.data().iter().skip(c).step_by(3).map(|&v| v as f64).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
        let (mu_a, ow, oh) = filter_valid(&a, w, h, &k);
        let (mu_b, _, _) = filter_valid(&b, w, h, &k);
        let (aa, _, _) = filter_valid(&prod(&a, &a), w, h, &k);
        let (bb, _, _) = filter_valid(&prod(&b, &b), w, h, &k);
        let (ab, _, _) = filter_valid(&prod(&a, &b), w, h, &k);
        let mut sum = 0.0;
        for i in 0..ow * oh {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
        total += sum / (ow * oh) as f64;
    }
    Ok(total / 3.0)
}

/// Pixels whose color differs from `background` by more than `tol` in any channel.
pub fn foreground_mask(img: &Image, background: [f32; 3], tol: f32) -> Vec<bool> {
    img.data()
        .chunks_exact(3)
        .map(|p| (0..3).any(|c| (p[c] - background[c]).abs() > tol))
        .collect()
}

/// Intersection over union of two masks; 1 when both are empty.
pub fn mask_iou(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("masks differ in length"));
    }
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}
