use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scalar::Scalar;

/// Number of real spherical-harmonics coefficients up to degree 4 (bands 0..=3).
pub const SH_DIM: usize = 16;

/// Real spherical-harmonics basis for a unit direction, 16 coefficients in
/// (l, m) order l = 0..3, m = -l..l.
pub fn sh_encode<T: Scalar>(dir: Vec3<T>) -> Result<[T; SH_DIM]> {
    let n = dir.norm().to_f64_lossy();
    if !((n - 1.0).abs() <= 1e-4) {
        return Err(Error::domain(format!("direction must be unit length, |d| = {n}")));
    }
    Ok(sh_encode_unchecked(dir))
}

pub(crate) fn sh_encode_unchecked<T: Scalar>(dir: Vec3<T>) -> [T; SH_DIM] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    let c = T::c;
    [
        c(0.28209479177387814),
        c(-0.48860251190291987) * y,
        c(0.48860251190291987) * z,
        c(-0.48860251190291987) * x,
        c(1.0925484305920792) * xy,
        c(-1.0925484305920792) * yz,
        c(0.94617469575755997) * zz - c(0.31539156525251999),
        c(-1.0925484305920792) * xz,
        c(0.54627421529603959) * (xx - yy),
        c(0.59004358992664352) * y * (c(-3.0) * xx + yy),
        c(2.8906114426405538) * xy * z,
        c(0.45704579946446572) * y * (T::one() - c(5.0) * zz),
        c(0.3731763325901154) * z * (c(5.0) * zz - c(3.0)),
        c(0.45704579946446572) * x * (T::one() - c(5.0) * zz),
        c(1.4453057213202769) * z * (xx - yy),
        c(0.59004358992664352) * x * (-xx + c(3.0) * yy),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng) -> Vec3<f64> {
        let z: f64 = rng.gen_range(-1.0..1.0);
        let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let r = (1.0 - z * z).sqrt();
        Vec3::new(r * phi.cos(), r * phi.sin(), z)
    }

    #[test]
    fn constant_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let e = sh_encode(random_unit(&mut rng)).unwrap();
            assert!((e[0] - 0.28209479177).abs() < 1e-11);
        }
    }

    #[test]
    fn polar_axis_kills_nonzero_orders() {
        let e = sh_encode(Vec3::<f64>::new(0.0, 0.0, 1.0)).unwrap();
        // (l, m) with m = 0 live at 0, 2, 6, 12
        for (i, v) in e.iter().enumerate() {
            if ![0, 2, 6, 12].contains(&i) {
                assert_eq!(*v, 0.0, "coefficient {i}");
            }
        }
    }

    #[test]
    fn rejects_non_unit() {
        assert!(sh_encode(Vec3::<f32>::new(0.0, 0.0, 2.0)).is_err());
        assert!(sh_encode(Vec3::<f32>::new(f32::NAN, 0.0, 1.0)).is_err());
    }

    #[test]
    fn orthonormal_under_sphere_integration() {
        // spherical Fibonacci lattice: equal-area quadrature on the sphere
        let n = 100_000;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let mut gram = [[0.0f64; SH_DIM]; SH_DIM];
        for k in 0..n {
            let z = 1.0 - (2.0 * k as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * k as f64;
            let e = sh_encode(Vec3::new(r * phi.cos(), r * phi.sin(), z)).unwrap();
            for i in 0..SH_DIM {
                for j in 0..SH_DIM {
                    gram[i][j] += e[i] * e[j];
                }
            }
        }
        let w = 4.0 * std::f64::consts::PI / n as f64;
        for i in 0..SH_DIM {
            for j in 0..SH_DIM {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram[i][j] * w - expect).abs() < 1e-2, "<Y{i}, Y{j}> = {}", gram[i][j] * w);
            }
        }
    }

    #[test]
    fn monte_carlo_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let mut gram = [[0.0f64; SH_DIM]; SH_DIM];
        for _ in 0..n {
            let e = sh_encode(random_unit(&mut rng)).unwrap();
            for i in 0..SH_DIM {
                for j in 0..SH_DIM {
                    gram[i][j] += e[i] * e[j];
                }
            }
        }
        let w = 4.0 * std::f64::consts::PI / n as f64;
        for i in 0..SH_DIM {
            for j in 0..SH_DIM {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram[i][j] * w - expect).abs() < 1e-2);
            }
        }
    }
}
