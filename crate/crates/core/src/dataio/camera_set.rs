use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Frame, SceneDataset, Split};
use crate::error::{Error, Result};
use crate::frame::Image;
use crate::geometry::{Aabb, CameraIntrinsics, NdcParams, Pose};

/// Forward-facing capture description: `{intrinsics, near, frames: [{pose, image}]}`.
/// Poses are camera-to-world with the scene in front of the cameras along -z.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSetFile {
    pub intrinsics: CameraIntrinsics,
    pub near: f64,
    pub frames: Vec<CameraSetFrame>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSetFrame {
    pub pose: [[f64; 4]; 4],
    /// PNG path relative to the camera-set file.
    pub image: String,
}

/// Loads a camera-set JSON file. Sampling happens in NDC, so the scene box is `[-1, 1]^3`.
pub fn load_camera_set(path: &Path, split: Split, background: [f32; 3]) -> Result<SceneDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
    let file: CameraSetFile =
        serde_json::from_str(&text).map_err(|e| Error::load(path, format!("malformed camera set: {e}")))?;
    file.intrinsics.validate().map_err(|e| Error::load(path, e.to_string()))?;
    if !(file.near > 0.0) {
        return Err(Error::load(path, "near plane must be positive"));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut frames = Vec::with_capacity(file.frames.len());
    for (i, fr) in file.frames.iter().enumerate() {
        let pose = Pose::from_f64(fr.pose).map_err(|e| Error::load(path, format!("frame {i}: {e}")))?;
        let image = Image::load_png(&base.join(&fr.image), background)?;
        frames.push(Frame { pose, image });
    }
    let cam = file.intrinsics;
    let data = SceneDataset {
        frames,
        intrinsics: cam,
        aabb: Aabb::cube(1.0),
        background,
        split,
        ndc: Some(NdcParams {
            focal: cam.focal,
            width: cam.width,
            height: cam.height,
            near: file.near,
        }),
    };
    data.validate().map_err(|e| Error::load(path, e.to_string()))?;
    Ok(data)
}
