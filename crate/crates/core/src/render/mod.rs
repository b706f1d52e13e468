//! Ray marching, alpha compositing and its reverse pass.
//!
//! Per ray, samples sit at a fixed spacing `step` inside the part of the
//! field box that lies between the clip planes. Samples whose occupancy cell
//! is off are skipped. With `alpha_i = 1 - exp(-sigma_i * step)` and
//! `T_i = prod_{k<i} (1 - alpha_k)`:
//!
//! ```text
//! alpha = sum T_i alpha_i
//! rgb   = sum T_i alpha_i c_i + (1 - alpha) * background
//! depth = sum T_i alpha_i t_i / max(alpha, 1e-6)
//! ```
//!
//! Marching stops once `T` drops below [`EARLY_STOP_TRANSMITTANCE`].

mod camera;

pub use camera::{BehindCamera, Camera, CameraError, CameraJson, Projection, Ray};

use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::field::{Lookup, RadianceField};
use crate::geom::Vec3;

pub const EARLY_STOP_TRANSMITTANCE: f64 = 1e-4;
pub const DEPTH_EPS: f64 = 1e-6;
const RAY_CHUNK: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("pixel gradients contain non-finite values")]
    NonFiniteGradient,
    #[error("expected {expected} pixel gradients, got {got}")]
    GradientShape { expected: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub step: f64,
    pub background: [f64; 3],
    pub use_occupancy: bool,
    /// When set, each ray's sample offset is drawn uniformly in `[0, step)` from this seed.
    pub jitter_seed: Option<u64>,
}

impl RenderOptions {
    pub fn for_field(field: &RadianceField) -> Self {
        Self { step: field.default_step(), background: [1.0; 3], use_occupancy: true, jitter_seed: None }
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }
}

/// One evaluated sample along a ray.
#[derive(Clone, Copy, Debug)]
pub struct TraceSample {
    pub t: f64,
    pub point: Vec3,
    pub lookup: Lookup,
    pub sigma: f64,
    pub alpha: f64,
    pub color: [f64; 3],
    /// Transmittance in front of this sample.
    pub transmittance: f64,
}

/// Composited value of one ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Composite {
    pub rgb: [f64; 3],
    pub alpha: f64,
    pub depth: f64,
}

/// Samples of a batch of rays, flattened in ray order.
#[derive(Clone, Debug)]
pub struct RayTrace {
    pub samples: Vec<TraceSample>,
    /// `samples[offsets[r]..offsets[r + 1]]` belong to ray `r`.
    pub offsets: Vec<usize>,
    pub composites: Vec<Composite>,
    pub step: f64,
    pub background: [f64; 3],
}

impl RayTrace {
    pub fn ray_count(&self) -> usize {
        self.composites.len()
    }

    pub fn ray_samples(&self, r: usize) -> &[TraceSample] {
        &self.samples[self.offsets[r]..self.offsets[r + 1]]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[f64; 3]>,
    pub alpha: Vec<f64>,
    pub depth: Vec<f64>,
    pub background: [f64; 3],
}

impl RenderOutput {
    fn from_composites(width: usize, height: usize, c: &[Composite], background: [f64; 3]) -> Self {
        Self {
            width,
            height,
            rgb: c.iter().map(|c| c.rgb).collect(),
            alpha: c.iter().map(|c| c.alpha).collect(),
            depth: c.iter().map(|c| c.depth).collect(),
            background,
        }
    }

    /// Row-major interleaved RGB.
    pub fn rgb_flat(&self) -> Vec<f64> {
        self.rgb.iter().flat_map(|c| c.iter().copied()).collect()
    }
}

/// Gradient with respect to the raw field parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrad {
    pub density: Vec<f64>,
    pub color: Vec<f64>,
}

impl FieldGrad {
    pub fn zeros_like(field: &RadianceField) -> Self {
        Self { density: vec![0.0; field.node_count()], color: vec![0.0; 3 * field.node_count()] }
    }

    pub fn add_scaled(&mut self, other: &FieldGrad, scale: f64) {
        for (a, b) in self.density.iter_mut().zip(&other.density) {
            *a += scale * b;
        }
        for (a, b) in self.color.iter_mut().zip(&other.color) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.density.iter_mut().chain(self.color.iter_mut()).for_each(|v| *v *= s);
    }

    pub fn max_abs(&self) -> f64 {
        self.density.iter().chain(&self.color).fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.density.iter().chain(&self.color).all(|v| v.is_finite())
    }
}

/// Gradient of a loss with respect to one sample's alpha and activated color.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SampleGrad {
    pub alpha: f64,
    pub color: [f64; 3],
}

/// Front-to-back compositing of `(alpha, color, t)` samples.
pub fn composite(samples: &[(f64, [f64; 3], f64)], background: [f64; 3]) -> Composite {
    let mut t_acc = 1.0;
    let mut rgb = [0.0; 3];
    let mut alpha = 0.0;
    let mut depth = 0.0;
    for &(a, c, t) in samples {
        if t_acc < EARLY_STOP_TRANSMITTANCE {
            break;
        }
        let w = t_acc * a;
        for ch in 0..3 {
            rgb[ch] += w * c[ch];
        }
        alpha += w;
        depth += w * t;
        t_acc *= 1.0 - a;
    }
    for ch in 0..3 {
        rgb[ch] += (1.0 - alpha) * background[ch];
    }
    Composite { rgb, alpha, depth: depth / alpha.max(DEPTH_EPS) }
}

fn ray_offset(seed: Option<u64>, ray_index: usize) -> f64 {
    match seed {
        None => 0.5,
        Some(s) => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(s ^ (ray_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            rng.random::<f64>()
        }
    }
}

/// Marches one ray, appending its samples to `out`.
pub fn march_into(
    field: &RadianceField,
    ray: &Ray,
    near: f64,
    far: f64,
    opts: &RenderOptions,
    offset: f64,
    out: &mut Vec<TraceSample>,
) -> Composite {
    let bg = opts.background;
    let empty = Composite { rgb: bg, alpha: 0.0, depth: 0.0 };
    let Some((enter, exit)) = field.bbox().ray_interval(&ray.origin, &ray.dir) else {
        return empty;
    };
    let t0 = enter.max(near);
    let t1 = exit.min(far);
    if t0 >= t1 {
        return empty;
    }
    let step = opts.step;
    let mut t_acc = 1.0;
    let mut rgb = [0.0; 3];
    let mut alpha = 0.0;
    let mut depth = 0.0;
    let mut k = 0usize;
    loop {
        let t = t0 + (k as f64 + offset) * step;
        k += 1;
        if t > t1 {
            break;
        }
        if t_acc < EARLY_STOP_TRANSMITTANCE {
            break;
        }
        let p = ray.origin + ray.dir * t;
        if opts.use_occupancy && !field.is_occupied(&p) {
            continue;
        }
        let Some(lookup) = field.locate(&p) else { continue };
        let (raw_d, raw_c) = field.raw_at(&lookup);
        let sigma = crate::field::softplus(raw_d);
        let a = -(-sigma * step).exp_m1();
        let color = raw_c.map(crate::field::sigmoid);
        let w = t_acc * a;
        for ch in 0..3 {
            rgb[ch] += w * color[ch];
        }
        alpha += w;
        depth += w * t;
        out.push(TraceSample { t, point: p, lookup, sigma, alpha: a, color, transmittance: t_acc });
        t_acc *= 1.0 - a;
    }
    debug_assert!(alpha <= 1.0 + 1e-6, "compositing weights sum to {alpha}");
    for ch in 0..3 {
        rgb[ch] += (1.0 - alpha) * bg[ch];
    }
    Composite { rgb, alpha, depth: depth / alpha.max(DEPTH_EPS) }
}

/// Marches a single ray and returns its samples together with the composite.
pub fn march(field: &RadianceField, ray: &Ray, near: f64, far: f64, opts: &RenderOptions) -> (Vec<TraceSample>, Composite) {
    let mut samples = Vec::new();
    let c = march_into(field, ray, near, far, opts, ray_offset(opts.jitter_seed, 0), &mut samples);
    (samples, c)
}

/// Marches a batch of rays. Work is split into fixed chunks so the result
/// does not depend on the number of worker threads.
pub fn trace_rays(field: &RadianceField, rays: &[Ray], near: f64, far: f64, opts: &RenderOptions) -> RayTrace {
    let chunks: Vec<(Vec<TraceSample>, Vec<usize>, Vec<Composite>)> = rays
        .par_chunks(RAY_CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut samples = Vec::with_capacity(chunk.len() * 16);
            let mut counts = Vec::with_capacity(chunk.len());
            let mut comps = Vec::with_capacity(chunk.len());
            for (ri, ray) in chunk.iter().enumerate() {
                let before = samples.len();
                let offset = ray_offset(opts.jitter_seed, ci * RAY_CHUNK + ri);
                comps.push(march_into(field, ray, near, far, opts, offset, &mut samples));
                counts.push(samples.len() - before);
            }
            (samples, counts, comps)
        })
        .collect();
    let total: usize = chunks.iter().map(|c| c.0.len()).sum();
    let mut samples = Vec::with_capacity(total);
    let mut offsets = Vec::with_capacity(rays.len() + 1);
    let mut composites = Vec::with_capacity(rays.len());
    offsets.push(0);
    for (s, counts, comps) in chunks {
        samples.extend(s);
        for n in counts {
            offsets.push(offsets.last().unwrap() + n);
        }
        composites.extend(comps);
    }
    RayTrace { samples, offsets, composites, step: opts.step, background: opts.background }
}

pub fn trace_view(field: &RadianceField, camera: &Camera, opts: &RenderOptions) -> RayTrace {
    trace_rays(field, &camera.generate_rays(None), camera.near(), camera.far(), opts)
}

pub fn render_view(field: &RadianceField, camera: &Camera, opts: &RenderOptions) -> RenderOutput {
    let trace = trace_view(field, camera, opts);
    RenderOutput::from_composites(camera.width(), camera.height(), &trace.composites, opts.background)
}

pub fn trace_output(trace: &RayTrace, camera: &Camera) -> RenderOutput {
    RenderOutput::from_composites(camera.width(), camera.height(), &trace.composites, trace.background)
}

/// Reverse pass of the compositing equations: maps per-ray gradients
/// `[d rgb, d alpha]` onto per-sample alpha and color gradients.
pub fn composite_backward(trace: &RayTrace, ray_grads: &[[f64; 4]]) -> Vec<SampleGrad> {
    assert_eq!(ray_grads.len(), trace.ray_count());
    let bg = trace.background;
    let mut out = vec![SampleGrad::default(); trace.samples.len()];
    let ranges: Vec<(usize, usize)> = (0..trace.ray_count()).map(|r| (trace.offsets[r], trace.offsets[r + 1])).collect();
    // chunk by ray ranges, each chunk writes a disjoint slice
    let mut rest: &mut [SampleGrad] = &mut out;
    let mut jobs = Vec::new();
    let mut consumed = 0;
    for chunk in ranges.chunks(RAY_CHUNK).zip(ray_grads.chunks(RAY_CHUNK)) {
        let end = chunk.0.last().map_or(consumed, |r| r.1);
        let (head, tail) = rest.split_at_mut(end - consumed);
        jobs.push((chunk, head, consumed));
        rest = tail;
        consumed = end;
    }
    jobs.into_par_iter().for_each(|((rngs, grads), slice, base)| {
        for (&(s0, s1), g) in rngs.iter().zip(grads) {
            let g_rgb = [g[0], g[1], g[2]];
            let g_alpha = g[3];
            if g_rgb == [0.0; 3] && g_alpha == 0.0 {
                continue;
            }
            let mut after = 0.0;
            for i in (s0..s1).rev() {
                let s = &trace.samples[i];
                let e = g_rgb[0] * (s.color[0] - bg[0]) + g_rgb[1] * (s.color[1] - bg[1]) + g_rgb[2] * (s.color[2] - bg[2]) + g_alpha;
                let w = s.transmittance * s.alpha;
                let dst = &mut slice[i - base];
                dst.alpha = s.transmittance * (e - after);
                dst.color = [g_rgb[0] * w, g_rgb[1] * w, g_rgb[2] * w];
                after = s.alpha * e + (1.0 - s.alpha) * after;
            }
        }
    });
    out
}

/// Chains per-sample gradients through the activations and trilinear weights into `grad`.
/// Applied sequentially in sample order so the sum is deterministic.
pub fn scatter_sample_grads(field: &RadianceField, trace: &RayTrace, sample_grads: &[SampleGrad], grad: &mut FieldGrad) {
    let offs = field.corner_offsets();
    for (s, g) in trace.samples.iter().zip(sample_grads) {
        if g.alpha == 0.0 && g.color == [0.0; 3] {
            continue;
        }
        // d alpha / d sigma = step * (1 - alpha); d softplus(x) / dx = 1 - exp(-softplus(x))
        let d_raw_density = g.alpha * trace.step * (1.0 - s.alpha) * -(-s.sigma).exp_m1();
        let d_raw_color = [
            g.color[0] * s.color[0] * (1.0 - s.color[0]),
            g.color[1] * s.color[1] * (1.0 - s.color[1]),
            g.color[2] * s.color[2] * (1.0 - s.color[2]),
        ];
        let w = s.lookup.weights();
        for k in 0..8 {
            let n = s.lookup.base + offs[k];
            grad.density[n] += w[k] * d_raw_density;
            let ci = 3 * n;
            grad.color[ci] += w[k] * d_raw_color[0];
            grad.color[ci + 1] += w[k] * d_raw_color[1];
            grad.color[ci + 2] += w[k] * d_raw_color[2];
        }
    }
}

/// Gradient of `sum_pixels <g, [rgb, alpha]>` with respect to the field parameters.
pub fn render_backward(
    field: &RadianceField,
    camera: &Camera,
    opts: &RenderOptions,
    pixel_gradients: &[[f64; 4]],
) -> Result<FieldGrad, RenderError> {
    if pixel_gradients.len() != camera.pixel_count() {
        return Err(RenderError::GradientShape { expected: camera.pixel_count(), got: pixel_gradients.len() });
    }
    if pixel_gradients.iter().flatten().any(|v| !v.is_finite()) {
        return Err(RenderError::NonFiniteGradient);
    }
    let trace = trace_view(field, camera, opts);
    let sample_grads = composite_backward(&trace, pixel_gradients);
    let mut grad = FieldGrad::zeros_like(field);
    scatter_sample_grads(field, &trace, &sample_grads, &mut grad);
    Ok(grad)
}

/// Fraction of pixels whose composited weights exceed one (should always be zero).
pub fn max_weight_sum(trace: &RayTrace) -> f64 {
    (0..trace.ray_count())
        .map(|r| trace.ray_samples(r).iter().map(|s| s.transmittance * s.alpha).sum::<f64>())
        .fold(0.0, f64::max)
}
