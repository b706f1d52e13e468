//! Scenes shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use sketchedit_core::field::{synth_primitives, Primitive, Shape};
use sketchedit_core::guidance::{AnalyticTargetProvider, Target};
use sketchedit_core::render::{render_view, RenderOptions};
use sketchedit_core::{Aabb, Camera, Mask, RadianceField, SketchSet, SketchView, Vec3};

pub const BASE_ALBEDO: [f64; 3] = [0.25, 0.45, 0.85];
pub const TARGET_ALBEDO: [f64; 3] = [0.85, 0.45, 0.25];
pub const CUBE_ALBEDO: [f64; 3] = [0.9, 0.3, 0.2];
pub const CUBE_CENTER: [f64; 3] = [0.0, 0.72, 0.0];
pub const CUBE_HALF: f64 = 0.17;
pub const GUIDANCE_K: f64 = 3e-11;

pub struct DeskScene {
    pub base: RadianceField,
    pub target: Arc<RadianceField>,
    pub sketches: SketchSet,
    pub opts: RenderOptions,
}

impl DeskScene {
    pub fn provider(&self) -> Arc<AnalyticTargetProvider> {
        Arc::new(
            AnalyticTargetProvider::new(Target::Field { field: self.target.clone(), options: self.opts }, GUIDANCE_K)
                .unwrap(),
        )
    }
}

pub fn sphere(albedo: [f64; 3]) -> Primitive {
    Primitive { shape: Shape::Sphere { center: [0.0; 3], radius: 0.5 }, albedo }
}

pub fn cube() -> Primitive {
    Primitive { shape: Shape::Box { center: CUBE_CENTER, half: [CUBE_HALF; 3] }, albedo: CUBE_ALBEDO }
}

pub fn sketch_camera(azimuth_deg: f64, res: usize) -> Camera {
    Camera::orbit(azimuth_deg, 0.0, 3.2, Vec3::zeros(), res, res, 40f64.to_radians(), 0.1, 10.0).unwrap()
}

/// Masks where a field's rendered alpha exceeds one half.
pub fn silhouette_sketches(field: &RadianceField, cameras: &[Camera], opts: &RenderOptions) -> SketchSet {
    SketchSet::new(
        cameras
            .iter()
            .map(|cam| {
                let a = render_view(field, cam, opts).alpha;
                let w = cam.width();
                SketchView::new(cam.clone(), Mask::from_fn(w, cam.height(), |x, y| a[y * w + x] > 0.5)).unwrap()
            })
            .collect(),
    )
}

/// Blue sphere base; the target adds a red cube on top and shifts the sphere toward orange.
/// Sketches are the cube's silhouettes from the front and the side.
pub fn desk_scene(resolution: usize) -> DeskScene {
    let bbox = Aabb::centered_cube(1.0);
    let base = synth_primitives(&[sphere(BASE_ALBEDO)], [resolution; 3], bbox).unwrap();
    let target = synth_primitives(&[sphere(TARGET_ALBEDO), cube()], [resolution; 3], bbox).unwrap();
    let cube_only = synth_primitives(&[cube()], [resolution; 3], bbox).unwrap();
    let opts = RenderOptions::for_field(&base);
    let sketches = silhouette_sketches(&cube_only, &[sketch_camera(0.0, 64), sketch_camera(90.0, 64)], &opts);
    DeskScene { base, target: Arc::new(target), sketches, opts }
}
