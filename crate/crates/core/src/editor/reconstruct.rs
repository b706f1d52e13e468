//! Fitting a field to posed images by photometric loss.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{losses, Adam, AdamParams, EditError};
use crate::field::RadianceField;
use crate::geom::Aabb;
use crate::render::{composite_backward, scatter_sample_grads, trace_rays, Camera, FieldGrad, RenderOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    pub resolution: [usize; 3],
    pub iterations: usize,
    pub lr: f64,
    pub rays_per_iter: usize,
    pub seed: u64,
    pub background: [f64; 3],
    /// Occupancy is rebuilt every this many iterations once past half the schedule.
    pub prune_period: usize,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            resolution: [64; 3],
            iterations: 3000,
            lr: 0.05,
            rays_per_iter: 4096,
            seed: 0,
            background: [1.0; 3],
            prune_period: 200,
        }
    }
}

/// Optimizes a fresh field inside `bbox` so its renderings match `views`.
/// Returns the field and the photometric loss of every iteration.
pub fn reconstruct(
    views: &[(Camera, Vec<[f64; 3]>)],
    bbox: Aabb,
    config: &ReconstructConfig,
) -> Result<(RadianceField, Vec<f64>), EditError> {
    if views.is_empty() {
        return Err(EditError::Config("reconstruction needs at least one view".into()));
    }
    for (cam, img) in views {
        if img.len() != cam.pixel_count() {
            return Err(EditError::Config(format!("image has {} pixels, camera {}", img.len(), cam.pixel_count())));
        }
    }
    let mut field = RadianceField::new(config.resolution, bbox, -2.0, 0.0)?;
    let mut adam = Adam::new(&field, AdamParams::default());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let (cam, img) = &views[rng.random_range(0..views.len())];
        let n = config.rays_per_iter.min(cam.pixel_count());
        let mut pixels = sample(&mut rng, cam.pixel_count(), n).into_vec();
        pixels.sort_unstable();
        let rays = cam.generate_rays(Some(&pixels));
        let opts = RenderOptions {
            step: field.default_step(),
            background: config.background,
            use_occupancy: true,
            jitter_seed: Some(rng.random()),
        };
        let trace = trace_rays(&field, &rays, cam.near(), cam.far(), &opts);
        let rgb: Vec<[f64; 3]> = trace.composites.iter().map(|c| c.rgb).collect();
        let target: Vec<[f64; 3]> = pixels.iter().map(|&p| img[p]).collect();
        let (loss, pixel_grads) = losses::photometric_loss(&rgb, &target);
        if !loss.is_finite() {
            return Err(EditError::NonFiniteLoss { iteration: it, what: "photometric".into() });
        }
        let sg = composite_backward(&trace, &pixel_grads);
        let mut grad = FieldGrad::zeros_like(&field);
        scatter_sample_grads(&field, &trace, &sg, &mut grad);
        let lr = config.lr * 0.1f64.powf(it as f64 / config.iterations as f64);
        adam.step(&mut field, &grad, lr, lr);
        field.prune(it + 1, config.iterations / 2, config.prune_period);
        history.push(loss);
    }
    Ok((field, history))
}
