//! Dense voxel radiance field.
//!
//! Parameters live on the nodes of a regular lattice spanning the bounding
//! box (`resolution` nodes per axis, so node `0` sits on `bbox.min` and node
//! `resolution - 1` on `bbox.max`). A point is evaluated by trilinear
//! interpolation of the raw parameters followed by the activations:
//! `softplus` for density and `sigmoid` for each color channel.
//!
//! An [`OccupancyGrid`] with one cell per lattice node (cells partition the
//! box uniformly) marks which regions the renderer is allowed to sample.

mod io;
mod synth;

pub use io::{MAGIC, VERSION_TAG};
pub use synth::{scene_primitives, stamp_primitive, synth_primitives, synth_scene, Primitive, SceneKind, Shape};

use std::collections::BTreeMap;

use crate::geom::{Aabb, Vec3};
use crate::sketch::SketchSet;

/// Pre-activation density of synthesized empty space. `softplus(-9) ≈ 1.2e-4`.
pub const EMPTY_DENSITY_PARAM: f32 = -9.0;
/// Pre-activation density written by [`RadianceField::carve`]. `softplus(-30) ≈ 9e-14`.
pub const CARVED_DENSITY_PARAM: f32 = -30.0;
pub const DEFAULT_PRUNE_THRESHOLD: f64 = 1.0;

#[derive(Debug, thiserror::Error)]
pub enum FieldError {
    #[error("box does not overlap the field bounds")]
    NoOverlap,
    #[error("sketch set has no views")]
    EmptySketchSet,
    #[error("invalid resolution {0:?}: every axis needs at least 2 nodes")]
    InvalidResolution([usize; 3]),
    #[error("invalid bounding box {0:?}")]
    InvalidBounds(Aabb),
    #[error("not a field checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0:?}")]
    VersionMismatch(String),
    #[error("checkpoint is truncated")]
    TruncatedFile,
    #[error("checkpoint checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("unsupported checkpoint flags {0:#04x}")]
    UnsupportedFlags(u8),
    #[error("bad checkpoint metadata: {0}")]
    BadMetadata(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Inverse of [`sigmoid`] for `y` in `(0, 1)`.
pub fn logit(y: f64) -> f64 {
    let y = y.clamp(1e-6, 1.0 - 1e-6);
    (y / (1.0 - y)).ln()
}

#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    resolution: [usize; 3],
    bits: Vec<u64>,
    prune_threshold: f64,
}

impl OccupancyGrid {
    pub fn new(resolution: [usize; 3], prune_threshold: f64) -> Self {
        let n = resolution.iter().product::<usize>();
        Self { resolution, bits: vec![0; n.div_ceil(64)], prune_threshold }
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn cell_count(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn prune_threshold(&self) -> f64 {
        self.prune_threshold
    }

    pub fn set_prune_threshold(&mut self, threshold: f64) {
        self.prune_threshold = threshold;
    }

    pub fn words(&self) -> &[u64] {
        &self.bits
    }

    pub(crate) fn words_mut(&mut self) -> &mut [u64] {
        &mut self.bits
    }

    #[inline]
    pub fn cell_index(&self, c: [usize; 3]) -> usize {
        c[0] + self.resolution[0] * (c[1] + self.resolution[1] * c[2])
    }

    pub fn cell_coords(&self, index: usize) -> [usize; 3] {
        let [rx, ry, _] = self.resolution;
        [index % rx, (index / rx) % ry, index / (rx * ry)]
    }

    #[inline]
    pub fn get(&self, index: usize) -> bool {
        self.bits[index >> 6] >> (index & 63) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, index: usize, on: bool) {
        let word = &mut self.bits[index >> 6];
        if on {
            *word |= 1 << (index & 63);
        } else {
            *word &= !(1 << (index & 63));
        }
    }

    pub fn fill(&mut self, on: bool) {
        let n = self.cell_count();
        for i in 0..n {
            self.set(i, on);
        }
    }

    pub fn count_on(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }
}

/// Result of locating a point in the node lattice.
#[derive(Clone, Copy, Debug)]
pub struct Lookup {
    /// Index of the lower corner node.
    pub base: usize,
    /// Fractional position inside the lattice cell, each in `[0, 1]`.
    pub frac: [f64; 3],
}

impl Lookup {
    /// Trilinear weights in the corner order used by [`RadianceField::corner_offsets`].
    #[inline]
    pub fn weights(&self) -> [f64; 8] {
        let [fx, fy, fz] = self.frac;
        let (gx, gy, gz) = (1.0 - fx, 1.0 - fy, 1.0 - fz);
        [
            gx * gy * gz,
            fx * gy * gz,
            gx * fy * gz,
            fx * fy * gz,
            gx * gy * fz,
            fx * gy * fz,
            gx * fy * fz,
            fx * fy * fz,
        ]
    }
}

/// Activated field value at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldSample {
    pub density: f64,
    pub color: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct RadianceField {
    resolution: [usize; 3],
    bbox: Aabb,
    density: Vec<f32>,
    color: Vec<f32>,
    occupancy: OccupancyGrid,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl RadianceField {
    /// A field with every parameter set to the given raw values and all occupancy bits on.
    pub fn new(
        resolution: [usize; 3],
        bbox: Aabb,
        density_param: f32,
        color_param: f32,
    ) -> Result<Self, FieldError> {
        if resolution.iter().any(|&r| r < 2) {
            return Err(FieldError::InvalidResolution(resolution));
        }
        if !bbox.is_valid() {
            return Err(FieldError::InvalidBounds(bbox));
        }
        let n = resolution.iter().product::<usize>();
        let mut occupancy = OccupancyGrid::new(resolution, DEFAULT_PRUNE_THRESHOLD);
        occupancy.fill(true);
        Ok(Self {
            resolution,
            bbox,
            density: vec![density_param; n],
            color: vec![color_param; 3 * n],
            occupancy,
            metadata: BTreeMap::new(),
        })
    }

    pub(crate) fn from_parts(
        resolution: [usize; 3],
        bbox: Aabb,
        density: Vec<f32>,
        color: Vec<f32>,
        occupancy: OccupancyGrid,
        metadata: BTreeMap<String, serde_json::Value>,
    ) -> Self {
        Self { resolution, bbox, density, color, occupancy, metadata }
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn bbox(&self) -> &Aabb {
        &self.bbox
    }

    pub fn node_count(&self) -> usize {
        self.density.len()
    }

    pub fn density_params(&self) -> &[f32] {
        &self.density
    }

    pub fn density_params_mut(&mut self) -> &mut [f32] {
        &mut self.density
    }

    /// Interleaved RGB raw parameters, three per node.
    pub fn color_params(&self) -> &[f32] {
        &self.color
    }

    pub fn color_params_mut(&mut self) -> &mut [f32] {
        &mut self.color
    }

    pub fn occupancy(&self) -> &OccupancyGrid {
        &self.occupancy
    }

    pub fn occupancy_mut(&mut self) -> &mut OccupancyGrid {
        &mut self.occupancy
    }

    /// Lattice spacing per axis.
    pub fn spacing(&self) -> Vec3 {
        let s = self.bbox.size();
        Vec3::new(
            s.x / (self.resolution[0] - 1) as f64,
            s.y / (self.resolution[1] - 1) as f64,
            s.z / (self.resolution[2] - 1) as f64,
        )
    }

    #[inline]
    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution[0] * (j + self.resolution[1] * k)
    }

    pub fn node_coords(&self, index: usize) -> [usize; 3] {
        let [rx, ry, _] = self.resolution;
        [index % rx, (index / rx) % ry, index / (rx * ry)]
    }

    pub fn node_position(&self, index: usize) -> Vec3 {
        let c = self.node_coords(index);
        let h = self.spacing();
        let min = self.bbox.min_v();
        Vec3::new(
            min.x + c[0] as f64 * h.x,
            min.y + c[1] as f64 * h.y,
            min.z + c[2] as f64 * h.z,
        )
    }

    /// Index offsets of the 8 cell corners relative to [`Lookup::base`].
    #[inline]
    pub fn corner_offsets(&self) -> [usize; 8] {
        let sx = 1;
        let sy = self.resolution[0];
        let sz = self.resolution[0] * self.resolution[1];
        [0, sx, sy, sx + sy, sz, sz + sx, sz + sy, sz + sy + sx]
    }

    /// Locates `p` in the lattice; `None` outside the bounding box.
    #[inline]
    pub fn locate(&self, p: &Vec3) -> Option<Lookup> {
        let mut cell = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let lo = self.bbox.min[a];
            let hi = self.bbox.max[a];
            if !(p[a] >= lo && p[a] <= hi) {
                return None;
            }
            let cells = self.resolution[a] - 1;
            let u = (p[a] - lo) / (hi - lo) * cells as f64;
            let i = (u.floor() as usize).min(cells - 1);
            cell[a] = i;
            frac[a] = u - i as f64;
        }
        Some(Lookup { base: self.node_index(cell[0], cell[1], cell[2]), frac })
    }

    /// Interpolated raw (pre-activation) density and color.
    #[inline]
    pub fn raw_at(&self, lookup: &Lookup) -> (f64, [f64; 3]) {
        let w = lookup.weights();
        let offs = self.corner_offsets();
        let mut d = 0.0;
        let mut c = [0.0; 3];
        for k in 0..8 {
            let n = lookup.base + offs[k];
            let wk = w[k];
            d += wk * self.density[n] as f64;
            let ci = 3 * n;
            c[0] += wk * self.color[ci] as f64;
            c[1] += wk * self.color[ci + 1] as f64;
            c[2] += wk * self.color[ci + 2] as f64;
        }
        (d, c)
    }

    /// Interpolated raw density only.
    #[inline]
    pub fn raw_density_at(&self, lookup: &Lookup) -> f64 {
        let w = lookup.weights();
        let offs = self.corner_offsets();
        (0..8).map(|k| w[k] * self.density[lookup.base + offs[k]] as f64).sum()
    }

    /// Activated value at one point; outside the box the field is empty and black.
    pub fn sample(&self, p: &Vec3) -> FieldSample {
        match self.locate(p) {
            None => FieldSample { density: 0.0, color: [0.0; 3] },
            Some(l) => {
                let (d, c) = self.raw_at(&l);
                FieldSample { density: softplus(d), color: c.map(sigmoid) }
            }
        }
    }

    pub fn eval(&self, points: &[Vec3]) -> Vec<FieldSample> {
        points.iter().map(|p| self.sample(p)).collect()
    }

    pub fn density_at(&self, p: &Vec3) -> f64 {
        self.locate(p).map_or(0.0, |l| softplus(self.raw_density_at(&l)))
    }

    /// Occupancy cell containing `p`, if inside the box.
    #[inline]
    pub fn occupancy_cell(&self, p: &Vec3) -> Option<usize> {
        let res = self.occupancy.resolution;
        let mut c = [0usize; 3];
        for a in 0..3 {
            let lo = self.bbox.min[a];
            let hi = self.bbox.max[a];
            if !(p[a] >= lo && p[a] <= hi) {
                return None;
            }
            let u = (p[a] - lo) / (hi - lo) * res[a] as f64;
            c[a] = (u as usize).min(res[a] - 1);
        }
        Some(self.occupancy.cell_index(c))
    }

    pub fn is_occupied(&self, p: &Vec3) -> bool {
        self.occupancy_cell(p).is_some_and(|c| self.occupancy.get(c))
    }

    /// Bounds of one occupancy cell.
    pub fn cell_bounds(&self, cell: usize) -> Aabb {
        let c = self.occupancy.cell_coords(cell);
        let res = self.occupancy.resolution;
        let mut b = Aabb::new([0.0; 3], [0.0; 3]);
        for a in 0..3 {
            let h = (self.bbox.max[a] - self.bbox.min[a]) / res[a] as f64;
            b.min[a] = self.bbox.min[a] + c[a] as f64 * h;
            b.max[a] = self.bbox.min[a] + (c[a] + 1) as f64 * h;
        }
        b
    }

    /// Max activated density over the 8 corners and the center of a cell.
    pub fn cell_max_density(&self, cell: usize) -> f64 {
        let b = self.cell_bounds(cell);
        let mut best = self.density_at(&b.center());
        for corner in b.corners() {
            best = best.max(self.density_at(&corner));
        }
        best
    }

    /// Sets each occupancy bit from the density test, ignoring any schedule.
    pub fn rebuild_occupancy(&mut self) {
        use rayon::prelude::*;
        let bits: Vec<bool> = (0..self.occupancy.cell_count())
            .into_par_iter()
            .map(|c| self.cell_max_density(c) > self.occupancy.prune_threshold)
            .collect();
        for (c, on) in bits.into_iter().enumerate() {
            self.occupancy.set(c, on);
        }
    }

    /// Turns on every occupancy cell that overlaps `region`. Returns how many cells it covers.
    pub fn seed_edit_region(&mut self, region: &Aabb) -> Result<usize, FieldError> {
        if self.bbox.intersection(region).is_none() {
            return Err(FieldError::NoOverlap);
        }
        let overlapping = |strict: bool| -> Vec<usize> {
            (0..self.occupancy.cell_count())
                .filter(|&c| {
                    let b = self.cell_bounds(c);
                    (0..3).all(|a| {
                        if strict {
                            b.min[a] < region.max[a] && region.min[a] < b.max[a]
                        } else {
                            b.min[a] <= region.max[a] && region.min[a] <= b.max[a]
                        }
                    })
                })
                .collect()
        };
        let mut cells = overlapping(true);
        if cells.is_empty() {
            // degenerate box lying exactly on cell faces
            cells = overlapping(false);
        }
        for &c in &cells {
            self.occupancy.set(c, true);
        }
        Ok(cells.len())
    }

    /// Scheduled occupancy pruning. Before `warmup_iters`, and on iterations that
    /// are not multiples of `period`, nothing happens; otherwise every bit is
    /// recomputed from the density test. Returns whether the grid was rebuilt.
    pub fn prune(&mut self, iteration: usize, warmup_iters: usize, period: usize) -> bool {
        if iteration < warmup_iters || period == 0 || iteration % period != 0 {
            return false;
        }
        self.rebuild_occupancy();
        true
    }

    /// Empties the visual hull of the sketch masks: every node whose position
    /// projects inside the mask of every view. Returns the number of carved nodes.
    pub fn carve(&mut self, sketches: &SketchSet) -> Result<usize, FieldError> {
        if sketches.views().is_empty() {
            return Err(FieldError::EmptySketchSet);
        }
        let mut carved = 0;
        for n in 0..self.node_count() {
            let p = self.node_position(n);
            if sketches.views().iter().all(|v| v.contains_projection(&p)) {
                self.density[n] = CARVED_DENSITY_PARAM;
                if let Some(c) = self.occupancy_cell(&p) {
                    self.occupancy.set(c, false);
                }
                carved += 1;
            }
        }
        Ok(carved)
    }

    /// Stable digest of every grid, used for provenance records.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for r in self.resolution {
            h.update((r as u32).to_le_bytes());
        }
        for v in self.bbox.min.iter().chain(self.bbox.max.iter()) {
            h.update(v.to_le_bytes());
        }
        for v in &self.density {
            h.update(v.to_le_bytes());
        }
        for v in &self.color {
            h.update(v.to_le_bytes());
        }
        for w in self.occupancy.words() {
            h.update(w.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Default ray-marching step: half the finest lattice spacing along the diagonal.
    pub fn default_step(&self) -> f64 {
        let max_res = *self.resolution.iter().max().unwrap() as f64;
        self.bbox.diagonal() / (2.0 * max_res)
    }
}
