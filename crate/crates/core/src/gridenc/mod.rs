//! Hash-based multi-resolution tri-plane encoding and direction encoding.

mod hash;
mod sh;
mod triplane;

pub use hash::{hash_index, HASH_PRIME};
pub use sh::{sh_encode, SH_DIM};
pub(crate) use sh::sh_encode_unchecked;
pub use triplane::{
    resolution_ladder, Corners, GridConfig, HashTriPlane, LevelLayout, LevelMask, Plane, INIT_SCALE,
};

use crate::error::{Error, Result};
use crate::frame::Image;

/// Cosine similarity of two images flattened to vectors.
pub fn grid_similarity(a: &Image, b: &Image) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::shape(format!(
            "similarity of {}x{} vs {}x{} images",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedSimilarity("zero-norm image".into()));
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}
