use std::path::Path;

use half::f16;
use serde::{Deserialize, Serialize};

use super::preset::{PresetConfig, SceneMode};
use crate::dataio::{
    read_checkpoint_file, write_atomic, write_checkpoint, Checkpoint, SceneDataset, Tensor, TensorData,
};
use crate::decoder::RayColorDecoder;
use crate::error::{Error, Result};
use crate::geometry::{sample_in_box, sample_points, to_ndc, Aabb, CameraIntrinsics, NdcParams, Ray, Vec3};
use crate::gridenc::{HashTriPlane, Plane};
use crate::optim::ParamGroup;
use crate::scalar::Scalar;

/// Scene facts a model needs at render time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneInfo {
    pub intrinsics: CameraIntrinsics,
    /// `[min, max]`.
    pub aabb: [[f64; 3]; 2],
    pub background: [f32; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ndc: Option<NdcParams>,
}

impl SceneInfo {
    pub fn from_dataset(data: &SceneDataset) -> Self {
        Self {
            intrinsics: data.intrinsics,
            aabb: [data.aabb.min.to_f64(), data.aabb.max.to_f64()],
            background: data.background,
            ndc: data.ndc,
        }
    }

    pub fn aabb<T: Scalar>(&self) -> Result<Aabb<T>> {
        Aabb::new(Vec3::from_f64(self.aabb[0]), Vec3::from_f64(self.aabb[1]))
    }
}

/// Adam state for both parameter groups plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    /// Completed training steps.
    pub step: u64,
    pub grid: ParamGroup<T>,
    pub decoder: ParamGroup<T>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(model: &GNelf<T>) -> Self {
        let opt = &model.preset.optimizer;
        Self {
            step: 0,
            grid: ParamGroup::new("grid", model.grid.parameter_count(), opt.grid_hyper()),
            decoder: ParamGroup::new("decoder", model.decoder.parameter_count(), opt.decoder_hyper()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F16,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelHeader {
    preset: PresetConfig,
    scene: SceneInfo,
}

/// A G-NeLF model: tri-plane grid, ray decoder, and the scene it was fit to.
#[derive(Debug, Clone)]
pub struct GNelf<T> {
    pub preset: PresetConfig,
    pub scene: SceneInfo,
    pub grid: HashTriPlane<T>,
    pub decoder: RayColorDecoder<T>,
}

fn plane_name(p: Plane) -> &'static str {
    match p {
        Plane::Xy => "xy",
        Plane::Xz => "xz",
        Plane::Yz => "yz",
    }
}

impl<T: Scalar> GNelf<T> {
    /// Freshly initialized model; grid and decoder draw from streams derived from `seed`.
    pub fn new(preset: PresetConfig, scene: SceneInfo, seed: u64) -> Result<Self> {
        preset.validate()?;
        if preset.scene_mode == SceneMode::NdcForward && scene.ndc.is_none() {
            return Err(Error::Config("ndc-forward scene mode needs NDC parameters in the dataset".into()));
        }
        let grid = HashTriPlane::new(preset.grid, scene.aabb()?, seed)?;
        let decoder = RayColorDecoder::new(preset.decoder_config(), seed.wrapping_add(0x5eed))?;
        Ok(Self {
            preset,
            scene,
            grid,
            decoder,
        })
    }

    pub fn for_dataset(preset: PresetConfig, data: &SceneDataset) -> Result<Self> {
        let seed = preset.seed;
        Self::new(preset, SceneInfo::from_dataset(data), seed)
    }

    pub fn parameter_count(&self) -> usize {
        self.grid.parameter_count() + self.decoder.parameter_count()
    }

    pub fn seq_len(&self) -> usize {
        self.preset.seq_len
    }

    pub fn background(&self) -> [T; 3] {
        self.scene.background.map(|c| T::c(c as f64))
    }

    /// The K sample points of `ray`, or `None` when it never enters the volume.
    pub fn sample_ray(&self, ray: &Ray<T>) -> Option<Vec<Vec3<T>>> {
        let k = self.preset.seq_len;
        let aabb = self.grid.aabb();
        let seq = match (self.preset.scene_mode, &self.scene.ndc) {
            (SceneMode::NdcForward, Some(ndc)) => {
                let seg = to_ndc(ray, ndc).ok()?;
                if !seg.length.is_finite() || !seg.ray.origin.is_finite() {
                    return None;
                }
                let mut seq = sample_points(&seg.ray, T::zero(), seg.length, k).ok()?;
                for p in &mut seq.points {
                    *p = aabb.clamp(*p);
                }
                seq
            }
            _ => sample_in_box(ray, aabb, k),
        };
        seq.valid.then_some(seq.points)
    }

    /// Checkpoint holding the model (and, in f32, optionally the optimizer state).
    pub fn to_checkpoint(&self, precision: Precision, state: Option<&TrainState<T>>, mut meta: serde_json::Value) -> Result<Checkpoint> {
        if precision == Precision::F16 && state.is_some() {
            return Err(Error::Contract("optimizer state is only stored in f32 checkpoints".into()));
        }
        let pack = |v: &[T]| match precision {
            Precision::F32 => TensorData::F32(v.iter().map(|x| x.to_f32_lossy()).collect()),
            Precision::F16 => TensorData::F16(v.iter().map(|x| f16::from_f32(x.to_f32_lossy())).collect()),
        };
        let mut tensors = Vec::new();
        let f = self.grid.config().feature_dim;
        let params = self.grid.params();
        for plane in Plane::ALL {
            for level in 0..self.grid.config().levels {
                let lay = self.grid.layout(plane, level);
                let span = &params[lay.offset..lay.offset + lay.entries * f];
                tensors.push(Tensor {
                    name: format!("grid.{}.l{level}", plane_name(plane)),
                    shape: vec![lay.entries, f],
                    data: pack(span),
                });
            }
        }
        for block in self.decoder.blocks() {
            tensors.push(Tensor {
                name: format!("decoder.{}", block.name),
                shape: vec![block.range.len()],
                data: pack(&self.decoder.params()[block.range.clone()]),
            });
        }
        if let Some(st) = state {
            for (group, name) in [(&st.grid, "grid"), (&st.decoder, "decoder")] {
                tensors.push(Tensor {
                    name: format!("adam.{name}.m"),
                    shape: vec![group.len()],
                    data: pack(&group.m),
                });
                tensors.push(Tensor {
                    name: format!("adam.{name}.v"),
                    shape: vec![group.len()],
                    data: pack(&group.v),
                });
            }
            if let serde_json::Value::Object(map) = &mut meta {
                map.insert("step".into(), st.step.into());
                map.insert("adam_t".into(), serde_json::json!([st.grid.t, st.decoder.t]));
            } else {
                meta = serde_json::json!({"step": st.step, "adam_t": [st.grid.t, st.decoder.t]});
            }
        }
        let header = ModelHeader {
            preset: self.preset.clone(),
            scene: self.scene.clone(),
        };
        Ok(Checkpoint {
            config: serde_json::to_value(header).expect("header serializes"),
            meta,
            tensors,
        })
    }

    /// Rebuilds a model, plus the optimizer state when the checkpoint carries one.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, Option<TrainState<T>>)> {
        let header: ModelHeader = serde_json::from_value(ckpt.config.clone())
            .map_err(|e| Error::Checkpoint(format!("bad model config: {e}")))?;
        let mut model = Self::new(header.preset, header.scene, 0)?;
        let take = |name: &str, len: usize| -> Result<Vec<T>> {
            let t = ckpt
                .tensor(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.data.len() != len {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has {} values, expected {len}",
                    t.data.len()
                )));
            }
            let vals = t.data.to_f32();
            if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!("tensor {name} has a non-finite value at {i}")));
            }
            Ok(vals.into_iter().map(|v| T::c(v as f64)).collect())
        };
        let f = model.grid.config().feature_dim;
        let mut grid = vec![T::zero(); model.grid.parameter_count()];
        for plane in Plane::ALL {
            for level in 0..model.grid.config().levels {
                let lay = *model.grid.layout(plane, level);
                let vals = take(&format!("grid.{}.l{level}", plane_name(plane)), lay.entries * f)?;
                grid[lay.offset..lay.offset + vals.len()].copy_from_slice(&vals);
            }
        }
        model.grid.set_params(grid)?;
        let mut dec = vec![T::zero(); model.decoder.parameter_count()];
        for block in model.decoder.blocks() {
            let vals = take(&format!("decoder.{}", block.name), block.range.len())?;
            dec[block.range.clone()].copy_from_slice(&vals);
        }
        model.decoder.set_params(dec)?;

        let state = if ckpt.tensor("adam.grid.m").is_some() {
            let mut st = TrainState::new(&model);
            let (ng, nd) = (st.grid.len(), st.decoder.len());
            st.grid.m = take("adam.grid.m", ng)?;
            st.grid.v = take("adam.grid.v", ng)?;
            st.decoder.m = take("adam.decoder.m", nd)?;
            st.decoder.v = take("adam.decoder.v", nd)?;
            st.step = ckpt.meta.get("step").and_then(|v| v.as_u64()).unwrap_or(0);
            if let Some(t) = ckpt.meta.get("adam_t").and_then(|v| v.as_array()) {
                st.grid.t = t.first().and_then(|v| v.as_u64()).unwrap_or(0);
                st.decoder.t = t.get(1).and_then(|v| v.as_u64()).unwrap_or(0);
            }
            Some(st)
        } else {
            None
        };
        Ok((model, state))
    }

    pub fn save(&self, path: &Path, precision: Precision, state: Option<&TrainState<T>>, meta: serde_json::Value) -> Result<()> {
        let bytes = write_checkpoint(&self.to_checkpoint(precision, state, meta)?)?;
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<(Self, Option<TrainState<T>>)> {
        let ckpt = read_checkpoint_file(path)?;
        Self::from_checkpoint(&ckpt).map_err(|e| Error::load(path, e.to_string()))
    }
}
