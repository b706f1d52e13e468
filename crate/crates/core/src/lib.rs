//! Sketch-guided editing of voxel radiance fields.
//!
//! A base field is copied and optimized so that new content fills the regions
//! outlined by sketch masks, guided by an image-space score provider, while a
//! distance-weighted preservation term holds everything else in place.

pub mod field;
pub mod geom;
pub mod editor;
pub mod guidance;
pub mod imageio;
pub mod io_util;
pub mod metrics;
pub mod render;
pub mod sketch;

pub use field::RadianceField;
pub use geom::{Aabb, Vec3};
pub use render::{Camera, RenderOptions, RenderOutput};
pub use sketch::{Mask, SketchSet, SketchView};
