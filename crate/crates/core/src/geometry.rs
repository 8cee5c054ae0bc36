//! Pinhole cameras, ray generation, slab intersection, ordered sampling and
//! the forward-facing NDC warp.

use std::ops::{Add, Index, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> Vec3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn from_f64(v: [f64; 3]) -> Self {
        Self::new(T::c(v[0]), T::c(v[1]), T::c(v[2]))
    }

    pub fn to_f64(self) -> [f64; 3] {
        [self.x.to_f64_lossy(), self.y.to_f64_lossy(), self.z.to_f64_lossy()]
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Self {
        self * (T::one() / self.norm())
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn as_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn map(self, f: impl Fn(T) -> T) -> Self {
        Self::new(f(self.x), f(self.y), f(self.z))
    }
}

impl<T: Scalar> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Scalar> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Scalar> Mul<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Scalar> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T> Index<usize> for Vec3<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    /// Intrinsics with the principal point at the image center.
    pub fn new(width: usize, height: usize, focal: f64) -> Result<Self> {
        let cam = Self {
            width,
            height,
            focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Focal length from a horizontal field of view, `f = 0.5 W / tan(0.5 angle)`.
    pub fn from_fov_x(width: usize, height: usize, angle_x: f64) -> Result<Self> {
        Self::new(width, height, 0.5 * width as f64 / (0.5 * angle_x).tan())
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || !(self.focal > 0.0) || !self.focal.is_finite() {
            return Err(Error::domain(format!(
                "camera needs positive width, height and focal, got {}x{} f={}",
                self.width, self.height, self.focal
            )));
        }
        Ok(())
    }

    /// Intrinsics for an image downsampled by an integer factor.
    pub fn scaled(&self, factor: usize) -> Self {
        let s = factor as f64;
        Self {
            width: self.width / factor,
            height: self.height / factor,
            focal: self.focal / s,
            cx: self.cx / s,
            cy: self.cy / s,
        }
    }
}

/// Camera-to-world rigid transform, row-major 4x4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T> {
    pub matrix: [[T; 4]; 4],
}

impl<T: Scalar> Pose<T> {
    pub fn identity() -> Self {
        let mut m = [[T::zero(); 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = T::one();
        }
        Self { matrix: m }
    }

    /// Validates orthonormality of the rotation block (1e-4) and the homogeneous row.
    pub fn new(matrix: [[T; 4]; 4]) -> Result<Self> {
        let pose = Self { matrix };
        pose.validate()?;
        Ok(pose)
    }

    pub fn from_f64(m: [[f64; 4]; 4]) -> Result<Self> {
        Self::new(m.map(|row| row.map(T::c)))
    }

    pub fn to_f64(&self) -> [[f64; 4]; 4] {
        self.matrix.map(|row| row.map(|v| v.to_f64_lossy()))
    }

    pub fn from_rotation_translation(rot: [[T; 3]; 3], t: Vec3<T>) -> Result<Self> {
        let mut m = [[T::zero(); 4]; 4];
        for r in 0..3 {
            m[r][..3].copy_from_slice(&rot[r]);
        }
        m[0][3] = t.x;
        m[1][3] = t.y;
        m[2][3] = t.z;
        m[3][3] = T::one();
        Self::new(m)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.matrix;
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::domain("pose contains non-finite entries"));
        }
        let tol = 1e-4;
        let last = [0.0, 0.0, 0.0, 1.0];
        for c in 0..4 {
            if (m[3][c].to_f64_lossy() - last[c]).abs() > tol {
                return Err(Error::domain("pose last row must be (0,0,0,1)"));
            }
        }
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = (0..3)
                    .map(|r| m[r][a].to_f64_lossy() * m[r][b].to_f64_lossy())
                    .sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                if (dot - expect).abs() > tol {
                    return Err(Error::domain(format!(
                        "pose rotation not orthonormal (column {a}·{b} = {dot})"
                    )));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn rotate(&self, v: Vec3<T>) -> Vec3<T> {
        let m = &self.matrix;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    #[inline]
    pub fn translation(&self) -> Vec3<T> {
        Vec3::new(self.matrix[0][3], self.matrix[1][3], self.matrix[2][3])
    }

    /// Camera at `eye` looking at `target`, OpenGL convention (camera looks down -z, +y up).
    pub fn look_at(eye: Vec3<T>, target: Vec3<T>, up: Vec3<T>) -> Result<Self> {
        let back = (eye - target).normalized();
        let mut right = up.cross(back);
        if right.norm() < T::c(1e-9) {
            right = Vec3::new(T::one(), T::zero(), T::zero()).cross(back);
        }
        let right = right.normalized();
        let cam_up = back.cross(right);
        let rot = [
            [right.x, cam_up.x, back.x],
            [right.y, cam_up.y, back.y],
            [right.z, cam_up.z, back.z],
        ];
        Self::from_rotation_translation(rot, eye)
    }

    /// Orbit parameterization shared by the CLI and the render service: z-up world,
    /// azimuth measured in the xy plane from +x, elevation above the xy plane, degrees.
    pub fn orbit(azimuth_deg: f64, elevation_deg: f64, radius: f64, look_at: Vec3<T>) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::domain(format!("orbit radius must be positive, got {radius}")));
        }
        let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
        let offset = Vec3::from_f64([
            radius * el.cos() * az.cos(),
            radius * el.cos() * az.sin(),
            radius * el.sin(),
        ]);
        let up = Vec3::new(T::zero(), T::zero(), T::one());
        Self::look_at(look_at + offset, look_at, up)
    }
}

/// A ray with unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray<T> {
    pub origin: Vec3<T>,
    pub direction: Vec3<T>,
}

impl<T: Scalar> Ray<T> {
    /// Normalizes `direction`.
    pub fn new(origin: Vec3<T>, direction: Vec3<T>) -> Result<Self> {
        let n = direction.norm();
        if !(n > T::zero()) || !n.is_finite() || !origin.is_finite() {
            return Err(Error::domain("ray needs finite origin and non-zero direction"));
        }
        Ok(Self {
            origin,
            direction: direction * (T::one() / n),
        })
    }

    #[inline]
    pub fn at(&self, t: T) -> Vec3<T> {
        self.origin + self.direction * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb<T> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
}

impl<T: Scalar> Aabb<T> {
    pub fn new(min: Vec3<T>, max: Vec3<T>) -> Result<Self> {
        if !(min.x < max.x && min.y < max.y && min.z < max.z) {
            return Err(Error::domain("aabb min must be < max componentwise"));
        }
        Ok(Self { min, max })
    }

    /// The cube `[-h, h]^3`.
    pub fn cube(half: f64) -> Self {
        Self {
            min: Vec3::from_f64([-half; 3]),
            max: Vec3::from_f64([half; 3]),
        }
    }

    pub fn contains(&self, p: Vec3<T>) -> bool {
        (0..3).all(|i| self.min[i] <= p[i] && p[i] <= self.max[i])
    }

    pub fn clamp(&self, p: Vec3<T>) -> Vec3<T> {
        Vec3::new(
            p.x.max(self.min.x).min(self.max.x),
            p.y.max(self.min.y).min(self.max.y),
            p.z.max(self.min.z).min(self.max.z),
        )
    }

    /// Maps a point inside the box to `[0,1]^3`.
    #[inline]
    pub fn normalize(&self, p: Vec3<T>) -> Vec3<T> {
        Vec3::new(
            (p.x - self.min.x) / (self.max.x - self.min.x),
            (p.y - self.min.y) / (self.max.y - self.min.y),
            (p.z - self.min.z) / (self.max.z - self.min.z),
        )
    }

    pub fn diagonal(&self) -> T {
        (self.max - self.min).norm()
    }
}

/// K ordered samples along a ray, near to far.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSequence<T> {
    pub points: Vec<Vec3<T>>,
    pub ts: Vec<T>,
    pub valid: bool,
}

impl<T: Scalar> PointSequence<T> {
    pub fn invalid() -> Self {
        Self {
            points: Vec::new(),
            ts: Vec::new(),
            valid: false,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Ray through pixel column `i`, row `j`. No half-pixel offset.
pub fn generate_ray<T: Scalar>(cam: &CameraIntrinsics, pose: &Pose<T>, i: usize, j: usize) -> Result<Ray<T>> {
    if i >= cam.width || j >= cam.height {
        return Err(Error::domain(format!(
            "pixel ({i}, {j}) outside {}x{} image",
            cam.width, cam.height
        )));
    }
    Ok(pixel_ray(cam, pose, i as f64, j as f64))
}

/// Same as [`generate_ray`] for continuous pixel coordinates; no range check.
pub fn pixel_ray<T: Scalar>(cam: &CameraIntrinsics, pose: &Pose<T>, i: f64, j: f64) -> Ray<T> {
    let f = T::c(cam.focal);
    let dir_cam = Vec3::new(
        (T::c(i) - T::c(cam.cx)) / f,
        -(T::c(j) - T::c(cam.cy)) / f,
        -T::one(),
    );
    let d = pose.rotate(dir_cam);
    Ray {
        origin: pose.translation(),
        direction: d.normalized(),
    }
}

/// Slab test. Returns `(t_near, t_far)` with `0 <= t_near < t_far`, or `None` on a miss.
/// Zero direction components produce IEEE infinities; NaNs from `0 * inf` are
/// discarded by `max`/`min`.
pub fn intersect_aabb<T: Scalar>(ray: &Ray<T>, aabb: &Aabb<T>) -> Option<(T, T)> {
    let mut t_near = T::zero();
    let mut t_far = T::infinity();
    for axis in 0..3 {
        let inv = T::one() / ray.direction[axis];
        let t0 = (aabb.min[axis] - ray.origin[axis]) * inv;
        let t1 = (aabb.max[axis] - ray.origin[axis]) * inv;
        let (lo, hi) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
        if lo.is_nan() || hi.is_nan() {
            // origin on a slab plane with a parallel direction: inside iff within slab
            if ray.origin[axis] < aabb.min[axis] || ray.origin[axis] > aabb.max[axis] {
                return None;
            }
            continue;
        }
        t_near = t_near.max(lo);
        t_far = t_far.min(hi);
    }
    if t_near < t_far && t_far.is_finite() {
        Some((t_near, t_far))
    } else {
        None
    }
}

/// Mid-bin depths `t_k = t_near + (k + 0.5)/K (t_far - t_near)`.
pub fn sample_depths<T: Scalar>(t_near: T, t_far: T, count: usize) -> Vec<T> {
    let span = t_far - t_near;
    let k_inv = T::one() / T::from_usize_lossy(count);
    (0..count)
        .map(|k| t_near + (T::from_usize_lossy(k) + T::c(0.5)) * k_inv * span)
        .collect()
}

/// Deterministic ordered samples along the ray segment `[t_near, t_far]`.
pub fn sample_points<T: Scalar>(ray: &Ray<T>, t_near: T, t_far: T, count: usize) -> Result<PointSequence<T>> {
    if count == 0 {
        return Err(Error::domain("sample count must be >= 1"));
    }
    if !(t_near < t_far) {
        return Err(Error::domain("sample_points needs t_near < t_far"));
    }
    let ts = sample_depths(t_near, t_far, count);
    let points = ts.iter().map(|&t| ray.at(t)).collect();
    Ok(PointSequence {
        points,
        ts,
        valid: true,
    })
}

/// Intersects, samples and clamps the samples into the box so round-off never
/// leaves a point outside it.
pub fn sample_in_box<T: Scalar>(ray: &Ray<T>, aabb: &Aabb<T>, count: usize) -> PointSequence<T> {
    match intersect_aabb(ray, aabb) {
        Some((t0, t1)) => {
            let mut seq = sample_points(ray, t0, t1, count).expect("t0 < t1 and count >= 1");
            for p in &mut seq.points {
                *p = aabb.clamp(*p);
            }
            seq
        }
        None => PointSequence::invalid(),
    }
}

/// Forward-facing NDC parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NdcParams {
    pub focal: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
}

/// A ray in NDC space: the segment `origin + s * delta`, `s in [0, 1]`, spans
/// the near plane (`z = -1`) to infinity (`z = 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NdcSegment<T> {
    pub ray: Ray<T>,
    /// Length of the unnormalized NDC direction; the far end sits at `ray.at(length)`.
    pub length: T,
}

/// Forward-facing NDC warp. The origin is first moved to the near plane, then
/// mapped through the standard projective transform. The returned ray has a
/// unit direction; its far end is `length` away.
pub fn to_ndc<T: Scalar>(ray: &Ray<T>, params: &NdcParams) -> Result<NdcSegment<T>> {
    let d = ray.direction;
    if !(d.z < T::zero()) {
        return Err(Error::domain("NDC conversion needs a ray pointing down -z"));
    }
    let near = T::c(params.near);
    let t = -(near + ray.origin.z) / d.z;
    let o = ray.origin + d * t;
    let two = T::c(2.0);
    let fx = T::c(2.0 * params.focal / params.width as f64);
    let fy = T::c(2.0 * params.focal / params.height as f64);
    let origin = Vec3::new(-fx * o.x / o.z, -fy * o.y / o.z, T::one() + two * near / o.z);
    let delta = Vec3::new(
        -fx * (d.x / d.z - o.x / o.z),
        -fy * (d.y / d.z - o.y / o.z),
        -two * near / o.z,
    );
    let length = delta.norm();
    Ok(NdcSegment {
        ray: Ray {
            origin,
            direction: delta * (T::one() / length),
        },
        length,
    })
}

/// Inverse of the NDC point map for points with `z_ndc < 1`.
pub fn ndc_to_world<T: Scalar>(p: Vec3<T>, params: &NdcParams) -> Vec3<T> {
    let near = T::c(params.near);
    let z = T::c(2.0) * near / (p.z - T::one());
    let fx = T::c(2.0 * params.focal / params.width as f64);
    let fy = T::c(2.0 * params.focal / params.height as f64);
    Vec3::new(-p.x * z / fx, -p.y * z / fy, z)
}

/// Forward NDC point map, `z <= -near` lands in `z_ndc in [-1, 1)`.
pub fn world_to_ndc<T: Scalar>(p: Vec3<T>, params: &NdcParams) -> Vec3<T> {
    let near = T::c(params.near);
    let fx = T::c(2.0 * params.focal / params.width as f64);
    let fy = T::c(2.0 * params.focal / params.height as f64);
    Vec3::new(-fx * p.x / p.z, -fy * p.y / p.z, T::one() + T::c(2.0) * near / p.z)
}
