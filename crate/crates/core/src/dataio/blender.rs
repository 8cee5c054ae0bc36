use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{write_atomic, Frame, SceneDataset, Split};
use crate::error::{Error, Result};
use crate::frame::Image;
use crate::geometry::{Aabb, CameraIntrinsics, Pose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlenderOptions {
    /// Integer box-filter factor applied to every image.
    pub downsample: usize,
    /// Composited under RGBA pixels; white for the synthetic 360° scenes.
    pub background: [f32; 3],
    /// Used when the transforms file carries no `aabb` entry.
    pub default_aabb: Aabb<f64>,
}

impl Default for BlenderOptions {
    fn default() -> Self {
        Self {
            downsample: 1,
            background: [1.0; 3],
            default_aabb: Aabb::cube(1.5),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TransformsFile {
    camera_angle_x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    camera_angle_y: Option<f64>,
    frames: Vec<TransformFrame>,
    /// Extension written by the toy generator: `[min, max]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    aabb: Option<[[f64; 3]; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    background: Option<[f32; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TransformFrame {
    file_path: String,
    transform_matrix: Vec<Vec<f64>>,
}

fn resolve_image(dir: &Path, file_path: &str) -> PathBuf {
    let p = dir.join(file_path);
    if p.extension().is_none() {
        p.with_extension("png")
    } else {
        p
    }
}

/// Loads `transforms_{split}.json` and its images from a Blender-format scene directory.
pub fn load_blender_dataset(dir: &Path, split: Split, opts: &BlenderOptions) -> Result<SceneDataset> {
    if opts.downsample == 0 {
        return Err(Error::domain("downsample factor must be >= 1"));
    }
    let json_path = dir.join(format!("transforms_{}.json", split.as_str()));
    let text = std::fs::read_to_string(&json_path).map_err(|e| Error::load(&json_path, e.to_string()))?;
    let file: TransformsFile =
        serde_json::from_str(&text).map_err(|e| Error::load(&json_path, format!("malformed transforms: {e}")))?;
    if !(file.camera_angle_x > 0.0 && file.camera_angle_x < std::f64::consts::PI) {
        return Err(Error::load(&json_path, format!("camera_angle_x {} out of range", file.camera_angle_x)));
    }
    let background = file.background.unwrap_or(opts.background);
    let aabb = match file.aabb {
        Some([lo, hi]) => Aabb::new(Vec3::from_f64(lo), Vec3::from_f64(hi))
            .map_err(|e| Error::load(&json_path, e.to_string()))?,
        None => opts.default_aabb,
    };
    let mut frames = Vec::with_capacity(file.frames.len());
    let mut dims: Option<(usize, usize)> = None;
    for (i, fr) in file.frames.iter().enumerate() {
        let m = &fr.transform_matrix;
        if m.len() != 4 || m.iter().any(|r| r.len() != 4) {
            return Err(Error::load(&json_path, format!("frame {i}: transform_matrix must be 4x4")));
        }
        let mut arr = [[0.0; 4]; 4];
        for r in 0..4 {
            arr[r].copy_from_slice(&m[r]);
        }
        let pose = Pose::from_f64(arr).map_err(|e| Error::load(&json_path, format!("frame {i}: {e}")))?;
        let img_path = resolve_image(dir, &fr.file_path);
        let image = Image::load_png(&img_path, background)?.downsample(opts.downsample);
        match dims {
            None => dims = Some((image.width(), image.height())),
            Some(d) if d != (image.width(), image.height()) => {
                return Err(Error::load(&img_path, format!("image size {}x{} differs from {}x{}", image.width(), image.height(), d.0, d.1)));
            }
            _ => {}
        }
        frames.push(Frame { pose, image });
    }
    let (w, h) = dims.ok_or_else(|| Error::load(&json_path, "no frames"))?;
    let intrinsics = CameraIntrinsics::from_fov_x(w, h, file.camera_angle_x)?;
    if let Some(ay) = file.camera_angle_y {
        let fy = 0.5 * h as f64 / (0.5 * ay).tan();
        if (fy - intrinsics.focal).abs() > 0.01 * intrinsics.focal {
            return Err(Error::load(
                &json_path,
                format!("non-square pixels: fx = {:.3}, fy = {fy:.3}", intrinsics.focal),
            ));
        }
    }
    let data = SceneDataset {
        frames,
        intrinsics,
        aabb,
        background,
        split,
        ndc: None,
    };
    data.validate().map_err(|e| Error::load(&json_path, e.to_string()))?;
    Ok(data)
}

/// Writes a dataset as `transforms_{split}.json` plus `{split}/r_{i}.png`.
/// The scene box and background are stored as extra fields.
pub fn write_blender_dataset(dir: &Path, data: &SceneDataset) -> Result<()> {
    let cam = &data.intrinsics;
    let angle_x = 2.0 * (0.5 * cam.width as f64 / cam.focal).atan();
    let split = data.split.as_str();
    let mut frames = Vec::with_capacity(data.frames.len());
    for (i, f) in data.frames.iter().enumerate() {
        let rel = format!("./{split}/r_{i}.png");
        f.image.save_png(&dir.join(&rel))?;
        frames.push(TransformFrame {
            file_path: rel,
            transform_matrix: f.pose.to_f64().iter().map(|r| r.to_vec()).collect(),
        });
    }
    let file = TransformsFile {
        camera_angle_x: angle_x,
        camera_angle_y: None,
        frames,
        aabb: Some([data.aabb.min.to_f64(), data.aabb.max.to_f64()]),
        background: Some(data.background),
    };
    let text = serde_json::to_string_pretty(&file).expect("serializable");
    write_atomic(&dir.join(format!("transforms_{split}.json")), text.as_bytes())
}
