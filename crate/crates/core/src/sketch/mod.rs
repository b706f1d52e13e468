//! Sketch masks and the geometry tying them to 3D points.
//!
//! Image-space distances are measured in normalized units: pixel offsets
//! divided by `max(width, height)`. A point's per-view distance is the
//! distance from its projected pixel to the nearest mask pixel, raised to
//! `distance_power` (2 by default). Points projecting off the image get the
//! boundary distance plus how far they overshoot; points behind the camera
//! get `(normalized diagonal + 1)^power`.

mod edt;
mod fill;

pub use edt::squared_edt;
pub use fill::{fill_enclosed, fill_scribble, rasterize_strokes, FillError, FilledScribble, ScribbleInput};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geom::{Aabb, Vec3};
use crate::imageio::{self, ImageIoError};
use crate::render::Camera;

pub const DEFAULT_BETA: f64 = 0.05;
pub const DEFAULT_DISTANCE_POWER: u32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum SketchError {
    #[error("beta must be positive, got {0}")]
    NonPositiveBeta(f64),
    #[error("distance power must be 1 or 2, got {0}")]
    BadDistancePower(u32),
    #[error("the sketch masks' extrusions share no voxel")]
    EmptyIntersection,
    #[error("sketch set has no views")]
    NoViews,
    #[error("mask is {mask:?} but its camera renders {camera:?}")]
    SizeMismatch { mask: (usize, usize), camera: (usize, usize) },
    #[error("bad sketch package: {0}")]
    BadPackage(String),
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Row-major boolean image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![false; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), width * height);
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        Self::from_vec(width, height, (0..width * height).map(|i| f(i % width, i / width)).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = on;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [bool] {
        &mut self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Inclusive pixel bounds `[x0, y0, x1, y1]` of the inside pixels.
    pub fn bounding_rect(&self) -> Option<[usize; 4]> {
        let mut r: Option<[usize; 4]> = None;
        for (i, _) in self.data.iter().enumerate().filter(|(_, &b)| b) {
            let (x, y) = (i % self.width, i / self.width);
            r = Some(match r {
                None => [x, y, x, y],
                Some([x0, y0, x1, y1]) => [x0.min(x), y0.min(y), x1.max(x), y1.max(y)],
            });
        }
        r
    }
}

/// Preservation weight `1 - exp(-D^2 / (2 beta^2))`.
pub fn preservation_weight(d: f64, beta: f64) -> Result<f64, SketchError> {
    if !(beta > 0.0) {
        return Err(SketchError::NonPositiveBeta(beta));
    }
    Ok(weight_unchecked(d, beta))
}

#[inline]
pub(crate) fn weight_unchecked(d: f64, beta: f64) -> f64 {
    -(-(d * d) / (2.0 * beta * beta)).exp_m1()
}

/// One sketch: the camera it was drawn from, its filled mask and the mask's distance field.
#[derive(Clone, Debug)]
pub struct SketchView {
    camera: Camera,
    mask: Mask,
    /// Squared distance in pixels to the nearest mask pixel.
    dist_sq: Vec<f64>,
    pub canvas: Option<Vec<[f64; 3]>>,
}

impl SketchView {
    pub fn new(camera: Camera, mask: Mask) -> Result<Self, SketchError> {
        if (mask.width, mask.height) != (camera.width(), camera.height()) {
            return Err(SketchError::SizeMismatch {
                mask: (mask.width, mask.height),
                camera: (camera.width(), camera.height()),
            });
        }
        let dist_sq = squared_edt(&mask.data, mask.width, mask.height);
        Ok(Self { camera, mask, dist_sq, canvas: None })
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    fn norm(&self) -> f64 {
        self.mask.width.max(self.mask.height) as f64
    }

    /// Normalized Euclidean distance from pixel `(x, y)` to the mask.
    pub fn pixel_distance(&self, x: usize, y: usize) -> f64 {
        self.dist_sq[y * self.mask.width + x].sqrt() / self.norm()
    }

    /// Value used when the view says nothing about a point: behind the camera, or an empty mask.
    pub fn far_distance(&self, power: u32) -> f64 {
        let (w, h) = (self.mask.width as f64, self.mask.height as f64);
        ((w * w + h * h).sqrt() / self.norm() + 1.0).powi(power as i32)
    }

    /// Per-view distance `d_j` of a 3D point.
    pub fn distance(&self, p: &Vec3, power: u32) -> f64 {
        let far = self.far_distance(power);
        let Ok(pr) = self.camera.project(p) else { return far };
        let (w, h) = (self.mask.width as i64, self.mask.height as i64);
        let [px, py] = pr.pixel;
        let cx = px.clamp(0, w - 1);
        let cy = py.clamp(0, h - 1);
        let inside = self.dist_sq[cy as usize * self.mask.width + cx as usize];
        if inside >= edt::FAR {
            return far;
        }
        let overshoot = (((px - cx).pow(2) + (py - cy).pow(2)) as f64).sqrt();
        ((inside.sqrt() + overshoot) / self.norm()).powi(power as i32)
    }

    /// Whether `p` projects onto an inside pixel of this view.
    pub fn contains_projection(&self, p: &Vec3) -> bool {
        match self.camera.project(p) {
            Ok(pr) => {
                let [x, y] = pr.pixel;
                x >= 0
                    && y >= 0
                    && (x as usize) < self.mask.width
                    && (y as usize) < self.mask.height
                    && self.mask.get(x as usize, y as usize)
            }
            Err(_) => false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SketchSet {
    views: Vec<SketchView>,
    distance_power: u32,
}

impl SketchSet {
    /// A set to be filled with [`push`](Self::push).
    pub fn empty() -> Self {
        Self { views: Vec::new(), distance_power: DEFAULT_DISTANCE_POWER }
    }

    pub fn new(views: Vec<SketchView>) -> Self {
        if views.len() < 2 {
            log::warn!("{} sketch view(s); at least two are recommended to pin down the edit region", views.len());
        }
        Self { views, distance_power: DEFAULT_DISTANCE_POWER }
    }

    pub fn with_distance_power(mut self, power: u32) -> Result<Self, SketchError> {
        if !(power == 1 || power == 2) {
            return Err(SketchError::BadDistancePower(power));
        }
        self.distance_power = power;
        Ok(self)
    }

    pub fn views(&self) -> &[SketchView] {
        &self.views
    }

    pub fn distance_power(&self) -> u32 {
        self.distance_power
    }

    pub fn push(&mut self, view: SketchView) {
        self.views.push(view);
    }

    pub fn remove(&mut self, index: usize) -> Option<SketchView> {
        (index < self.views.len()).then(|| self.views.remove(index))
    }

    /// Mean of the per-view distances.
    pub fn multiview_distance(&self, p: &Vec3) -> f64 {
        if self.views.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.views.iter().map(|v| v.distance(p, self.distance_power)).sum();
        sum / self.views.len() as f64
    }

    /// Coarse 3D edit region: the bound of all cells (on a `resolution` grid over
    /// `field_bbox`) whose centers fall inside every view's mask rectangle between
    /// the clip planes.
    pub fn edit_bbox(&self, field_bbox: &Aabb, resolution: [usize; 3]) -> Result<Aabb, SketchError> {
        if self.views.is_empty() {
            return Err(SketchError::NoViews);
        }
        let rects: Vec<[usize; 4]> = self
            .views
            .iter()
            .map(|v| v.mask.bounding_rect().ok_or(SketchError::EmptyIntersection))
            .collect::<Result<_, _>>()?;
        let size = field_bbox.size();
        let mut out: Option<Aabb> = None;
        for k in 0..resolution[2] {
            for j in 0..resolution[1] {
                for i in 0..resolution[0] {
                    let idx = [i, j, k];
                    let lo: [f64; 3] = std::array::from_fn(|a| field_bbox.min[a] + idx[a] as f64 * size[a] / resolution[a] as f64);
                    let hi: [f64; 3] = std::array::from_fn(|a| field_bbox.min[a] + (idx[a] + 1) as f64 * size[a] / resolution[a] as f64);
                    let center = Vec3::new(0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2]));
                    let inside_all = self.views.iter().zip(&rects).all(|(v, r)| match v.camera.project(&center) {
                        Ok(pr) => {
                            let [x, y] = pr.pixel;
                            pr.depth >= v.camera.near()
                                && pr.depth <= v.camera.far()
                                && x >= r[0] as i64
                                && x <= r[2] as i64
                                && y >= r[1] as i64
                                && y <= r[3] as i64
                        }
                        Err(_) => false,
                    });
                    if inside_all {
                        out = Some(match out {
                            None => Aabb::new(lo, hi),
                            Some(b) => Aabb::new(
                                std::array::from_fn(|a| b.min[a].min(lo[a])),
                                std::array::from_fn(|a| b.max[a].max(hi[a])),
                            ),
                        });
                    }
                }
            }
        }
        out.and_then(|b| b.intersection(field_bbox)).ok_or(SketchError::EmptyIntersection)
    }

    /// Digest of every camera and mask, for provenance records.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.distance_power.to_le_bytes());
        for v in &self.views {
            h.update(serde_json::to_vec(&v.camera).unwrap());
            h.update((v.mask.width as u32).to_le_bytes());
            h.update((v.mask.height as u32).to_le_bytes());
            let bytes: Vec<u8> = v.mask.data.iter().map(|&b| b as u8).collect();
            h.update(bytes);
        }
        hex::encode(h.finalize())
    }
}

/// Contents of `sketchset.json` in a sketch package.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PackageManifest {
    pub views: Vec<String>,
    pub beta: f64,
    pub distance_power: u32,
}

/// Writes `view_%02d/{mask.png,camera.json[,canvas.png]}` plus `sketchset.json`.
pub fn save_package(dir: &Path, set: &SketchSet, beta: f64) -> Result<(), SketchError> {
    std::fs::create_dir_all(dir)?;
    let mut names = Vec::new();
    for (i, v) in set.views.iter().enumerate() {
        let name = format!("view_{i:02}");
        let vd = dir.join(&name);
        std::fs::create_dir_all(&vd)?;
        imageio::write_png(&vd.join("mask.png"), &imageio::encode_mask_png(&v.mask)?)?;
        crate::io_util::write_atomic(&vd.join("camera.json"), &serde_json::to_vec_pretty(&v.camera)?)?;
        if let Some(canvas) = &v.canvas {
            let png = imageio::encode_png(v.mask.width, v.mask.height, canvas, None)?;
            imageio::write_png(&vd.join("canvas.png"), &png)?;
        }
        names.push(name);
    }
    let manifest = PackageManifest { views: names, beta, distance_power: set.distance_power };
    crate::io_util::write_atomic(&dir.join("sketchset.json"), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_package(dir: &Path) -> Result<(SketchSet, PackageManifest), SketchError> {
    let manifest: PackageManifest = serde_json::from_slice(&std::fs::read(dir.join("sketchset.json"))?)?;
    if manifest.views.is_empty() {
        return Err(SketchError::NoViews);
    }
    let mut views = Vec::new();
    for name in &manifest.views {
        let vd = dir.join(name);
        let camera: Camera = serde_json::from_slice(&std::fs::read(vd.join("camera.json"))?)?;
        let mask = imageio::read_mask_png(&vd.join("mask.png"))?;
        let mut view = SketchView::new(camera, mask)?;
        let canvas_path = vd.join("canvas.png");
        if canvas_path.exists() {
            let (w, h, px) = imageio::read_rgb_png(&canvas_path)?;
            if (w, h) != (view.mask.width, view.mask.height) {
                return Err(SketchError::BadPackage(format!("{name}/canvas.png is {w}x{h}")));
            }
            view.canvas = Some(px);
        }
        views.push(view);
    }
    let set = SketchSet::new(views).with_distance_power(manifest.distance_power)?;
    Ok((set, manifest))
}
