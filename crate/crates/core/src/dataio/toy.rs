//! Procedural scenes of flat-colored boxes and spheres with an analytic
//! first-hit renderer, used as ground truth for desk-scale training runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Frame, SceneDataset, Split};
use crate::frame::Image;
use crate::geometry::{generate_ray, intersect_aabb, Aabb, CameraIntrinsics, Pose, Ray, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    Box,
    Sphere,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    pub center: [f64; 3],
    /// Half extents for boxes; `size[0]` is the radius of a sphere.
    pub size: [f64; 3],
    pub color: [f32; 3],
}

impl Primitive {
    /// Nearest intersection distance with `t >= 0`; zero when the origin is inside.
    pub fn intersect(&self, ray: &Ray<f64>) -> Option<f64> {
        let c = Vec3::from_f64(self.center);
        match self.kind {
            PrimitiveKind::Box => {
                let s = Vec3::from_f64(self.size);
                let aabb = Aabb { min: c - s, max: c + s };
                intersect_aabb(ray, &aabb).map(|(t0, _)| t0)
            }
            PrimitiveKind::Sphere => {
                let r = self.size[0];
                let oc = ray.origin - c;
                let b = oc.dot(ray.direction);
                let cc = oc.dot(oc) - r * r;
                let disc = b * b - cc;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let (t0, t1) = (-b - sq, -b + sq);
                if t1 < 0.0 {
                    None
                } else {
                    Some(t0.max(0.0))
                }
            }
        }
    }

    pub fn contains(&self, p: Vec3<f64>) -> bool {
        let c: Vec3<f64> = Vec3::from_f64(self.center);
        match self.kind {
            PrimitiveKind::Box => (0..3).all(|i| (p[i] - c[i]).abs() <= self.size[i]),
            PrimitiveKind::Sphere => (p - c).norm() <= self.size[0],
        }
    }

    pub fn bounds(&self) -> Aabb<f64> {
        let c = Vec3::from_f64(self.center);
        let s = match self.kind {
            PrimitiveKind::Box => Vec3::from_f64(self.size),
            PrimitiveKind::Sphere => Vec3::from_f64([self.size[0]; 3]),
        };
        Aabb { min: c - s, max: c + s }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyShapes {
    Boxes,
    Spheres,
    Mixed,
}

/// Seeded description of a procedural scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToySceneSpec {
    pub seed: u64,
    pub count: usize,
    pub shapes: ToyShapes,
    /// Every primitive lies fully inside these bounds.
    pub bounds: Aabb<f64>,
    pub background: [f32; 3],
}

impl ToySceneSpec {
    pub fn new(seed: u64, count: usize, shapes: ToyShapes) -> Self {
        Self {
            seed,
            count,
            shapes,
            bounds: Aabb::cube(0.9),
            background: [0.0; 3],
        }
    }

    pub fn scene(&self) -> ToyScene {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let lo = self.bounds.min.to_f64();
        let hi = self.bounds.max.to_f64();
        let half: Vec<f64> = (0..3).map(|i| 0.5 * (hi[i] - lo[i])).collect();
        let min_half = half.iter().cloned().fold(f64::INFINITY, f64::min);
        let primitives = (0..self.count)
            .map(|i| {
                let kind = match self.shapes {
                    ToyShapes::Boxes => PrimitiveKind::Box,
                    ToyShapes::Spheres => PrimitiveKind::Sphere,
                    ToyShapes::Mixed if i % 2 == 0 => PrimitiveKind::Box,
                    ToyShapes::Mixed => PrimitiveKind::Sphere,
                };
                let size = match kind {
                    PrimitiveKind::Box => [0, 1, 2].map(|a| rng.gen_range(0.2..0.45) * half[a]),
                    PrimitiveKind::Sphere => [rng.gen_range(0.25..0.45) * min_half; 3],
                };
                let center = [0, 1, 2].map(|a| rng.gen_range(lo[a] + size[a]..hi[a] - size[a]));
                // bright enough to separate from a black background
                let mut color = [0, 1, 2].map(|_| rng.gen_range(0.05f32..0.95));
                let peak = color.iter().cloned().fold(0.0f32, f32::max);
                if peak < 0.6 {
                    let k = rng.gen_range(0..3);
                    color[k] = rng.gen_range(0.6..0.95);
                }
                Primitive { kind, center, size, color }
            })
            .collect();
        ToyScene {
            primitives,
            background: self.background,
        }
    }
}

/// Flat-shaded primitives over a constant background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyScene {
    pub primitives: Vec<Primitive>,
    pub background: [f32; 3],
}

impl ToyScene {
    /// Nearest hit: `(distance, primitive index)`.
    pub fn trace(&self, ray: &Ray<f64>) -> Option<(f64, usize)> {
        self.primitives
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.intersect(ray).map(|t| (t, i)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    pub fn ray_color(&self, ray: &Ray<f64>) -> [f32; 3] {
        self.trace(ray)
            .map(|(_, i)| self.primitives[i].color)
            .unwrap_or(self.background)
    }
}

/// Ground-truth image: per pixel, the flat color of the nearest primitive, or the background.
pub fn oracle_render(scene: &ToyScene, cam: &CameraIntrinsics, pose: &Pose<f64>) -> Image {
    let mut img = Image::filled(cam.width, cam.height, scene.background);
    for j in 0..cam.height {
        for i in 0..cam.width {
            let ray = generate_ray(cam, pose, i, j).expect("pixel in range");
            img.set(i, j, scene.ray_color(&ray));
        }
    }
    img
}

/// Cameras on a sphere around the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitRig {
    pub radius: f64,
    /// Elevation band in degrees.
    pub elevation: (f64, f64),
    /// Horizontal field of view in radians.
    pub angle_x: f64,
}

impl Default for OrbitRig {
    fn default() -> Self {
        Self {
            radius: 4.0,
            elevation: (15.0, 40.0),
            angle_x: 0.9,
        }
    }
}

/// Renders `n_views` oracle views. Azimuths are evenly spaced; held-out splits
/// are offset by half a spacing so they never coincide with training views.
pub fn gen_toy_views(
    scene: &ToyScene,
    rig: &OrbitRig,
    n_views: usize,
    width: usize,
    height: usize,
    seed: u64,
    split: Split,
) -> SceneDataset {
    let cam = CameraIntrinsics::from_fov_x(width, height, rig.angle_x).expect("valid toy camera");
    let split_tag = match split {
        Split::Train => 0,
        Split::Val => 1,
        Split::Test => 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9 * (split_tag + 1)));
    let spacing = 360.0 / n_views.max(1) as f64;
    let phase = match split {
        Split::Train => 0.0,
        Split::Val => 0.5 * spacing,
        Split::Test => 0.25 * spacing,
    };
    let frames = (0..n_views)
        .map(|v| {
            let az = phase + spacing * v as f64;
            let el = rng.gen_range(rig.elevation.0..=rig.elevation.1);
            let pose = Pose::orbit(az, el, rig.radius, Vec3::zero()).expect("valid orbit");
            Frame {
                image: oracle_render(scene, &cam, &pose),
                pose,
            }
        })
        .collect();
    SceneDataset {
        frames,
        intrinsics: cam,
        aabb: Aabb::cube(1.0),
        background: scene.background,
        split,
        ndc: None,
    }
}

/// Training views of a seeded toy scene on the default orbit rig.
pub fn gen_toy_scene(spec: &ToySceneSpec, n_views: usize, width: usize, height: usize) -> SceneDataset {
    gen_toy_views(&spec.scene(), &OrbitRig::default(), n_views, width, height, spec.seed, Split::Train)
}
