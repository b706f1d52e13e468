use serde::{Deserialize, Serialize};

use super::EditError;

/// Every knob of an edit job. JSON keys equal the field names; missing keys take the defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditConfig {
    pub lambda_pres: f64,
    pub lambda_sil: f64,
    pub lambda_sp: f64,
    pub lambda_c: f64,
    pub beta: f64,
    /// Exponent applied to per-view image distances, 1 or 2.
    pub distance_power: u32,
    pub iterations: usize,
    pub warmup_iters: usize,
    pub prune_period: usize,
    pub lr: f64,
    /// Learning rate at the last iteration, as a fraction of `lr` (exponential decay).
    pub lr_final_factor: f64,
    /// Multiplier on `lr` for density parameters.
    pub density_lr_scale: f64,
    /// Rays per training view; the view is rendered as a square image of `sqrt(rays_per_iter)` pixels.
    pub rays_per_iter: usize,
    pub seed: u64,
    /// Base samples with `alpha > occupancy_threshold` count as occupied in the preservation term.
    pub occupancy_threshold: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Factor applied to the summed objective before the optimizer sees it.
    pub loss_scale: f64,
    pub jitter: bool,
    pub background: [f64; 3],
    /// Training views: azimuth within this many degrees of the sketches' mean azimuth.
    pub azimuth_span_deg: f64,
    pub elevation_range_deg: [f64; 2],
    /// Training view distance range; derived from the sketch cameras when absent.
    pub radius_range: Option<[f64; 2]>,
    /// Ray-march step; the field default when absent.
    pub step: Option<f64>,
    /// Write a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: usize,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            lambda_pres: 5e-6,
            lambda_sil: 1.0,
            lambda_sp: 5e-4,
            lambda_c: 5.0,
            beta: crate::sketch::DEFAULT_BETA,
            distance_power: crate::sketch::DEFAULT_DISTANCE_POWER,
            iterations: 10000,
            warmup_iters: 1000,
            prune_period: 100,
            lr: 0.005,
            lr_final_factor: 0.1,
            density_lr_scale: 10.0,
            rays_per_iter: 64 * 64,
            seed: 0,
            occupancy_threshold: 0.5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            loss_scale: 1e9,
            jitter: true,
            background: [1.0; 3],
            azimuth_span_deg: 90.0,
            elevation_range_deg: [-10.0, 60.0],
            radius_range: None,
            step: None,
            checkpoint_every: 0,
        }
    }
}

impl EditConfig {
    pub fn validate(&self) -> Result<(), EditError> {
        let bad = |m: String| Err(EditError::Config(m));
        for (name, v) in [
            ("lambda_pres", self.lambda_pres),
            ("lambda_sil", self.lambda_sil),
            ("lambda_sp", self.lambda_sp),
            ("lambda_c", self.lambda_c),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        if !(self.beta > 0.0) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.distance_power == 1 || self.distance_power == 2) {
            return bad(format!("distance_power must be 1 or 2, got {}", self.distance_power));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be non-negative, got {}", self.lr));
        }
        if !(self.lr_final_factor > 0.0) || !(self.density_lr_scale >= 0.0) || !(self.loss_scale > 0.0) {
            return bad("lr_final_factor and loss_scale must be positive, density_lr_scale non-negative".into());
        }
        if self.iterations <= self.warmup_iters {
            return bad(format!("iterations ({}) must exceed warmup_iters ({})", self.iterations, self.warmup_iters));
        }
        if self.rays_per_iter < 4 {
            return bad(format!("rays_per_iter must be at least 4, got {}", self.rays_per_iter));
        }
        if !(0.0..1.0).contains(&self.occupancy_threshold) {
            return bad(format!("occupancy_threshold must lie in [0, 1), got {}", self.occupancy_threshold));
        }
        let [lo, hi] = self.elevation_range_deg;
        if !(lo <= hi && lo > -90.0 && hi < 90.0) {
            return bad(format!("elevation_range_deg {lo}..{hi} must lie inside (-90, 90)"));
        }
        if let Some([a, b]) = self.radius_range {
            if !(a > 0.0 && a <= b) {
                return bad(format!("radius_range {a}..{b} is invalid"));
            }
        }
        if let Some(s) = self.step {
            if !(s > 0.0) {
                return bad(format!("step must be positive, got {s}"));
            }
        }
        Ok(())
    }

    pub fn train_resolution(&self) -> usize {
        (self.rays_per_iter as f64).sqrt().round() as usize
    }

    /// Learning rate used at `iteration`.
    pub fn lr_at(&self, iteration: usize) -> f64 {
        if self.iterations == 0 {
            return self.lr;
        }
        self.lr * self.lr_final_factor.powf(iteration as f64 / self.iterations as f64)
    }

    /// Stable digest of the serialized config.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(serde_json::to_vec(self).unwrap()))
    }
}
