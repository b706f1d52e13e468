//! Loss terms of the editing objective and their gradients.
//!
//! Per-sample terms return [`SampleGrad`]s to be scattered into the field;
//! per-pixel terms return `[d rgb, d alpha]` gradients for
//! [`composite_backward`](crate::render::composite_backward).

use crate::field::{sigmoid, softplus, RadianceField};
use crate::render::{composite_backward, scatter_sample_grads, trace_view, FieldGrad, RayTrace, RenderOptions, SampleGrad};
use crate::sketch::SketchSet;

pub const ALPHA_CLAMP: f64 = 1e-5;

/// Binary entropy in nats, with `0 ln 0 = 0`.
pub fn binary_entropy(a: f64) -> f64 {
    let xlogx = |x: f64| if x > 0.0 { x * x.ln() } else { 0.0 };
    -(xlogx(a) + xlogx(1.0 - a))
}

/// Mean binary entropy of an alpha image and its per-pixel derivative.
/// The derivative is evaluated with alpha clamped to `[1e-5, 1 - 1e-5]`.
pub fn sparsity_loss(alpha: &[f64]) -> (f64, Vec<f64>) {
    let n = alpha.len().max(1) as f64;
    let loss = alpha.iter().map(|&a| binary_entropy(a.clamp(0.0, 1.0))).sum::<f64>() / n;
    let grad = alpha
        .iter()
        .map(|&a| {
            let a = a.clamp(ALPHA_CLAMP, 1.0 - ALPHA_CLAMP);
            ((1.0 - a) / a).ln() / n
        })
        .collect();
    (loss, grad)
}

/// Per-sample inputs of the preservation term that do not depend on the edited field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaseSample {
    pub weight: f64,
    /// Thresholded base occupancy, 0 or 1.
    pub occupied: f64,
    pub color: [f64; 3],
}

/// Looks up the base field at every trace sample (the two fields share one lattice)
/// and attaches the sketch weight.
pub fn base_samples(
    base: &RadianceField,
    trace: &RayTrace,
    sketches: &SketchSet,
    beta: f64,
    occupancy_threshold: f64,
) -> Vec<BaseSample> {
    use rayon::prelude::*;
    trace
        .samples
        .par_iter()
        .map(|s| {
            let (raw_d, raw_c) = base.raw_at(&s.lookup);
            let alpha_o = -(-softplus(raw_d) * trace.step).exp_m1();
            let d = sketches.multiview_distance(&s.point);
            BaseSample {
                weight: crate::sketch::weight_unchecked(d, beta),
                occupied: if alpha_o > occupancy_threshold { 1.0 } else { 0.0 },
                color: raw_c.map(sigmoid),
            }
        })
        .collect()
}

/// `(1/K) sum_i w_i [BCE(alpha_e, occ_o) + lambda_c occ_o |c_e - c_o|^2]` over the trace samples,
/// with `alpha_e` clamped to `[1e-5, 1 - 1e-5]` inside the cross-entropy.
pub fn preservation_loss(trace: &RayTrace, base: &[BaseSample], lambda_c: f64) -> (f64, Vec<SampleGrad>) {
    assert_eq!(trace.samples.len(), base.len());
    let k = trace.samples.len();
    if k == 0 {
        return (0.0, Vec::new());
    }
    let inv_k = 1.0 / k as f64;
    let mut loss = 0.0;
    let grads = trace
        .samples
        .iter()
        .zip(base)
        .map(|(s, b)| {
            if b.weight == 0.0 {
                return SampleGrad::default();
            }
            let in_range = s.alpha > ALPHA_CLAMP && s.alpha < 1.0 - ALPHA_CLAMP;
            let a = s.alpha.clamp(ALPHA_CLAMP, 1.0 - ALPHA_CLAMP);
            let o = b.occupied;
            let bce = -(o * a.ln() + (1.0 - o) * (1.0 - a).ln());
            let dc = [s.color[0] - b.color[0], s.color[1] - b.color[1], s.color[2] - b.color[2]];
            let sq = dc[0] * dc[0] + dc[1] * dc[1] + dc[2] * dc[2];
            loss += b.weight * (bce + lambda_c * o * sq);
            let d_alpha = if in_range { -o / a + (1.0 - o) / (1.0 - a) } else { 0.0 };
            let c = 2.0 * lambda_c * o * b.weight * inv_k;
            SampleGrad { alpha: b.weight * inv_k * d_alpha, color: [c * dc[0], c * dc[1], c * dc[2]] }
        })
        .collect();
    (loss * inv_k, grads)
}

/// `(1/(H W N)) sum_j sum_{x in M_j} -ln clamp(alpha_j(x), 1e-5, 1)`, with its field gradient.
pub fn silhouette_loss(field: &RadianceField, sketches: &SketchSet, opts: &RenderOptions) -> (f64, FieldGrad) {
    let mut grad = FieldGrad::zeros_like(field);
    let n = sketches.views().len();
    if n == 0 {
        return (0.0, grad);
    }
    let mut loss = 0.0;
    for view in sketches.views() {
        let cam = view.camera();
        let norm = 1.0 / (cam.pixel_count() * n) as f64;
        let opts = RenderOptions { jitter_seed: None, ..*opts };
        let trace = trace_view(field, cam, &opts);
        let mut pixel = vec![[0.0; 4]; cam.pixel_count()];
        let mut any = false;
        for (i, (&inside, c)) in view.mask().as_slice().iter().zip(&trace.composites).enumerate() {
            if !inside {
                continue;
            }
            let a = c.alpha.clamp(ALPHA_CLAMP, 1.0);
            loss -= a.ln() * norm;
            if c.alpha > ALPHA_CLAMP && c.alpha < 1.0 {
                pixel[i][3] = -norm / c.alpha;
                any = true;
            }
        }
        if any {
            let sg = composite_backward(&trace, &pixel);
            scatter_sample_grads(field, &trace, &sg, &mut grad);
        }
    }
    (loss, grad)
}

/// Mean over pixels and channels of the squared color error, with per-pixel gradients.
pub fn photometric_loss(rgb: &[[f64; 3]], target: &[[f64; 3]]) -> (f64, Vec<[f64; 4]>) {
    assert_eq!(rgb.len(), target.len());
    let n = (3 * rgb.len()).max(1) as f64;
    let mut loss = 0.0;
    let grads = rgb
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = [p[0] - t[0], p[1] - t[1], p[2] - t[2]];
            loss += d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            [2.0 * d[0] / n, 2.0 * d[1] / n, 2.0 * d[2] / n, 0.0]
        })
        .collect();
    (loss / n, grads)
}
