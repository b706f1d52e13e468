//! Random training viewpoints around the sketched region.

use rand::Rng;

use super::EditConfig;
use crate::geom::{Aabb, Vec3};
use crate::render::Camera;
use crate::sketch::SketchSet;

const MAX_TRIES: usize = 32;

/// Samples orbit cameras near the sketch viewpoints that keep the whole edit box in frame.
#[derive(Clone, Debug)]
pub struct ViewSampler {
    center: Vec3,
    corners: [Vec3; 8],
    azimuth: [f64; 2],
    elevation: [f64; 2],
    radius: [f64; 2],
    fov_y: f64,
    near: f64,
    far: f64,
    fallback: Camera,
}

impl ViewSampler {
    pub fn new(sketches: &SketchSet, edit_bbox: &Aabb, field_bbox: &Aabb, config: &EditConfig) -> Self {
        let center = field_bbox.center();
        let cams: Vec<&Camera> = sketches.views().iter().map(|v| v.camera()).collect();
        let (mut sx, mut sy) = (0.0, 0.0);
        for c in &cams {
            let a = c.orbit_angles(&center).0.to_radians();
            sx += a.sin();
            sy += a.cos();
        }
        let mean_az = sx.atan2(sy).to_degrees();
        let radius = config.radius_range.unwrap_or_else(|| {
            let d: Vec<f64> = cams.iter().map(|c| (c.eye() - center).norm()).collect();
            let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = d.iter().cloned().fold(0.0, f64::max);
            [0.9 * lo, 1.1 * hi]
        });
        let first = cams[0];
        let fallback = cams
            .iter()
            .min_by(|a, b| {
                let da = (a.eye() - edit_bbox.center()).norm();
                let db = (b.eye() - edit_bbox.center()).norm();
                da.total_cmp(&db)
            })
            .unwrap();
        Self {
            center,
            corners: edit_bbox.corners(),
            azimuth: [mean_az - config.azimuth_span_deg, mean_az + config.azimuth_span_deg],
            elevation: config.elevation_range_deg,
            radius,
            fov_y: first.fov_y(),
            near: first.near(),
            far: first.far(),
            fallback: (*fallback).clone(),
        }
    }

    /// A `res`×`res` camera; falls back to the sketch camera closest to the edit box
    /// when no sampled view frames the box.
    pub fn sample(&self, rng: &mut impl Rng, res: usize) -> Camera {
        for _ in 0..MAX_TRIES {
            let az = rng.random_range(self.azimuth[0]..=self.azimuth[1]);
            let el = rng.random_range(self.elevation[0]..=self.elevation[1]);
            let r = rng.random_range(self.radius[0]..=self.radius[1]);
            let Ok(cam) = Camera::orbit(az, el, r, self.center, res, res, self.fov_y, self.near, self.far) else {
                continue;
            };
            if self.corners.iter().all(|p| cam.in_frustum(p)) {
                return cam;
            }
        }
        self.fallback.with_resolution(res, res)
    }
}
