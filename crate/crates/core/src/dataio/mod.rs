//! Datasets, the procedural toy-scene oracle, and the checkpoint container.

mod blender;
mod camera_set;
mod checkpoint;
mod toy;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use blender::{load_blender_dataset, write_blender_dataset, BlenderOptions};
pub use camera_set::{load_camera_set, CameraSetFile, CameraSetFrame};
pub use checkpoint::{
    read_checkpoint, read_checkpoint_file, write_checkpoint, Checkpoint, CheckpointHeader, Tensor, TensorData,
    TensorEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use toy::{gen_toy_scene, gen_toy_views, oracle_render, OrbitRig, Primitive, PrimitiveKind, ToyScene, ToySceneSpec, ToyShapes};

use crate::error::{Error, Result};
use crate::frame::Image;
use crate::geometry::{Aabb, CameraIntrinsics, NdcParams, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::domain(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub pose: Pose<f64>,
    pub image: Image,
}

/// Posed images sharing one set of intrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDataset {
    pub frames: Vec<Frame>,
    pub intrinsics: CameraIntrinsics,
    pub aabb: Aabb<f64>,
    pub background: [f32; 3],
    pub split: Split,
    /// Present for forward-facing scenes sampled in NDC.
    pub ndc: Option<NdcParams>,
}

impl SceneDataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Checks shared intrinsics, finite pixels in `[0,1]`, and pose orthonormality.
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        for (i, f) in self.frames.iter().enumerate() {
            if f.image.width() != self.intrinsics.width || f.image.height() != self.intrinsics.height {
                return Err(Error::shape(format!(
                    "frame {i} is {}x{}, intrinsics say {}x{}",
                    f.image.width(),
                    f.image.height(),
                    self.intrinsics.width,
                    self.intrinsics.height
                )));
            }
            if !f.image.is_finite_unit() {
                return Err(Error::domain(format!("frame {i} has pixels outside [0,1]")));
            }
            f.pose.validate()?;
        }
        Ok(())
    }
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
