use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::hash::hash_index;
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};
use crate::scalar::Scalar;

/// Magnitude of the uniform initialization of table entries.
pub const INIT_SCALE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub levels: usize,
    pub r_min: u32,
    pub r_max: u32,
    pub feature_dim: usize,
    /// Maximum entries per level-plane table; a power of two.
    pub table_cap: u32,
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::Config("grid.levels must be >= 1".into()));
        }
        if self.r_min == 0 || self.r_min > self.r_max {
            return Err(Error::Config(format!(
                "grid resolutions need 1 <= r_min <= r_max, got {}..{}",
                self.r_min, self.r_max
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("grid.feature_dim must be >= 1".into()));
        }
        if !self.table_cap.is_power_of_two() {
            return Err(Error::Config(format!("grid.table_cap {} is not a power of two", self.table_cap)));
        }
        Ok(())
    }

    /// Width of a point feature: three planes times all levels.
    pub fn point_feature_dim(&self) -> usize {
        3 * self.levels * self.feature_dim
    }

    /// `3 * sum_l min((r_l + 1)^2, T_max) * F`.
    pub fn parameter_count(&self) -> usize {
        let per_plane: usize = resolution_ladder(self)
            .iter()
            .map(|&r| level_entries(r, self.table_cap).0)
            .sum();
        3 * per_plane * self.feature_dim
    }
}

/// Geometric ladder `r_l = floor(r_min * b^l)` with endpoints pinned to `r_min` and `r_max`.
pub fn resolution_ladder(cfg: &GridConfig) -> Vec<u32> {
    let l = cfg.levels;
    if l == 1 {
        return vec![cfg.r_min];
    }
    let growth = ((cfg.r_max as f64).ln() - (cfg.r_min as f64).ln()) / (l - 1) as f64;
    let mut ladder: Vec<u32> = (0..l)
        .map(|i| (cfg.r_min as f64 * (growth * i as f64).exp()).floor() as u32)
        .collect();
    ladder[0] = cfg.r_min;
    ladder[l - 1] = cfg.r_max;
    for i in 1..l {
        ladder[i] = ladder[i].clamp(ladder[i - 1], cfg.r_max);
    }
    ladder
}

/// `(entries, dense)` for a level of resolution `r`.
fn level_entries(r: u32, cap: u32) -> (usize, bool) {
    let dense_entries = (r as u64 + 1) * (r as u64 + 1);
    if dense_entries <= cap as u64 {
        (dense_entries as usize, true)
    } else {
        (cap as usize, false)
    }
}

/// The three feature planes, in concatenation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Plane {
    Xy = 0,
    Xz = 1,
    Yz = 2,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Xy, Plane::Xz, Plane::Yz];

    #[inline]
    pub fn project<T: Copy>(self, p: Vec3<T>) -> (T, T) {
        match self {
            Plane::Xy => (p.x, p.y),
            Plane::Xz => (p.x, p.z),
            Plane::Yz => (p.y, p.z),
        }
    }
}

/// Number of highest-resolution levels whose features are zeroed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LevelMask {
    pub masked_top_k: usize,
}

impl LevelMask {
    pub const NONE: LevelMask = LevelMask { masked_top_k: 0 };

    pub fn top(k: usize) -> Self {
        Self { masked_top_k: k }
    }

    #[inline]
    pub fn is_masked(&self, level: usize, levels: usize) -> bool {
        level + self.masked_top_k >= levels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelLayout {
    pub resolution: u32,
    pub dense: bool,
    pub entries: usize,
    /// Offset of this table's first scalar in the flat parameter vector.
    pub offset: usize,
}

/// Four lattice corners touched by a bilinear lookup: flat scalar offsets and weights.
#[derive(Debug, Clone, Copy)]
pub struct Corners<T> {
    pub offsets: [usize; 4],
    pub weights: [T; 4],
}

/// Hash-based multi-resolution tri-plane. All entries live in one flat
/// vector laid out plane-major, then level, then entry, then channel.
#[derive(Debug, Clone)]
pub struct HashTriPlane<T> {
    config: GridConfig,
    aabb: Aabb<T>,
    layout: Vec<LevelLayout>,
    params: Vec<T>,
}

impl<T: Scalar> HashTriPlane<T> {
    /// Zero-initialized grid.
    pub fn zeros(config: GridConfig, aabb: Aabb<T>) -> Result<Self> {
        config.validate()?;
        let mut layout = Vec::with_capacity(3 * config.levels);
        let mut offset = 0;
        let ladder = resolution_ladder(&config);
        for _ in Plane::ALL {
            for &r in &ladder {
                let (entries, dense) = level_entries(r, config.table_cap);
                layout.push(LevelLayout {
                    resolution: r,
                    dense,
                    entries,
                    offset,
                });
                offset += entries * config.feature_dim;
            }
        }
        Ok(Self {
            config,
            aabb,
            layout,
            params: vec![T::zero(); offset],
        })
    }

    /// Entries uniform in `[-1e-4, 1e-4]`, deterministic in `seed`.
    pub fn new(config: GridConfig, aabb: Aabb<T>, seed: u64) -> Result<Self> {
        let mut grid = Self::zeros(config, aabb)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut grid.params {
            *p = T::c(rng.gen_range(-INIT_SCALE..INIT_SCALE));
        }
        Ok(grid)
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn aabb(&self) -> &Aabb<T> {
        &self.aabb
    }

    pub fn layout(&self, plane: Plane, level: usize) -> &LevelLayout {
        &self.layout[plane as usize * self.config.levels + level]
    }

    pub fn resolutions(&self) -> Vec<u32> {
        self.layout[..self.config.levels].iter().map(|l| l.resolution).collect()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn set_params(&mut self, values: Vec<T>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::shape(format!(
                "grid expects {} parameters, got {}",
                self.params.len(),
                values.len()
            )));
        }
        self.params = values;
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn point_feature_dim(&self) -> usize {
        self.config.point_feature_dim()
    }

    /// Flat offset of the entry at lattice vertex `(x, y)`.
    pub fn entry_offset(&self, plane: Plane, level: usize, x: u32, y: u32) -> usize {
        let lay = self.layout(plane, level);
        let idx = if lay.dense {
            (y as usize) * (lay.resolution as usize + 1) + x as usize
        } else {
            hash_index(x, y, self.config.table_cap) as usize
        };
        lay.offset + idx * self.config.feature_dim
    }

    /// Bilinear corners of `uv` (clamped to `[0,1]^2`) on one plane-level.
    #[inline]
    pub fn corners(&self, plane: Plane, level: usize, u: T, v: T) -> Corners<T> {
        let lay = self.layout(plane, level);
        let r = lay.resolution;
        let rs = T::from_u32(r).unwrap();
        let pu = u.max(T::zero()).min(T::one()) * rs;
        let pv = v.max(T::zero()).min(T::one()) * rs;
        let iu = pu.floor().to_u32().unwrap_or(0).min(r - 1);
        let iv = pv.floor().to_u32().unwrap_or(0).min(r - 1);
        let fu = pu - T::from_u32(iu).unwrap();
        let fv = pv - T::from_u32(iv).unwrap();
        let (gu, gv) = (T::one() - fu, T::one() - fv);
        Corners {
            offsets: [
                self.entry_offset(plane, level, iu, iv),
                self.entry_offset(plane, level, iu + 1, iv),
                self.entry_offset(plane, level, iu, iv + 1),
                self.entry_offset(plane, level, iu + 1, iv + 1),
            ],
            weights: [gu * gv, fu * gv, gu * fv, fu * fv],
        }
    }

    /// Bilinearly interpolated feature of one plane-level at `uv`.
    pub fn plane_feature(&self, plane: Plane, level: usize, uv: (T, T)) -> Vec<T> {
        let mut out = vec![T::zero(); self.config.feature_dim];
        self.blend_into(&self.corners(plane, level, uv.0, uv.1), &mut out);
        out
    }

    #[inline]
    fn blend_into(&self, c: &Corners<T>, out: &mut [T]) {
        let f = self.config.feature_dim;
        for (ch, o) in out.iter_mut().enumerate().take(f) {
            let mut acc = T::zero();
            for k in 0..4 {
                acc += c.weights[k] * self.params[c.offsets[k] + ch];
            }
            *o = acc;
        }
    }

    /// Feature of a world-space point: per plane, per level, `F` channels.
    pub fn point_feature(&self, x: Vec3<T>, mask: LevelMask) -> Result<Vec<T>> {
        if !x.is_finite() {
            return Err(Error::domain("point_feature needs finite coordinates"));
        }
        let mut out = vec![T::zero(); self.point_feature_dim()];
        self.point_feature_into(x, mask, &mut out);
        Ok(out)
    }

    /// Allocation-free variant of [`Self::point_feature`]; `out` has `3 L F` slots.
    pub fn point_feature_into(&self, x: Vec3<T>, mask: LevelMask, out: &mut [T]) {
        let levels = self.config.levels;
        let f = self.config.feature_dim;
        let n = self.aabb.normalize(x);
        for plane in Plane::ALL {
            let (u, v) = plane.project(n);
            for level in 0..levels {
                let slot = &mut out[(plane as usize * levels + level) * f..][..f];
                if mask.is_masked(level, levels) {
                    slot.fill(T::zero());
                } else {
                    self.blend_into(&self.corners(plane, level, u, v), slot);
                }
            }
        }
    }

    /// Scatter-adds `upstream * weight` into the gradient of every touched entry.
    /// Entries that collide under the hash simply accumulate.
    pub fn point_feature_backward(&self, x: Vec3<T>, mask: LevelMask, upstream: &[T], grads: &mut [T]) {
        let levels = self.config.levels;
        let f = self.config.feature_dim;
        let n = self.aabb.normalize(x);
        for plane in Plane::ALL {
            let (u, v) = plane.project(n);
            for level in 0..levels {
                if mask.is_masked(level, levels) {
                    continue;
                }
                let up = &upstream[(plane as usize * levels + level) * f..][..f];
                if up.iter().all(|g| *g == T::zero()) {
                    continue;
                }
                let c = self.corners(plane, level, u, v);
                for k in 0..4 {
                    let w = c.weights[k];
                    for ch in 0..f {
                        grads[c.offsets[k] + ch] += w * up[ch];
                    }
                }
            }
        }
    }
}
