//! Image-space guidance: score providers and the distillation gradient.
//!
//! A provider receives a clean rendering plus a timestep and a noise seed,
//! forms its own noisy input from them, and returns the denoiser residual
//! `eps_hat - eps` per RGB pixel. [`sds_pixel_gradient`] scales that residual
//! by `w(t) = 1 - alpha_bar(t)`; chaining it through the renderer is up to the caller.

mod providers;
mod spec;
pub mod wire;

pub use providers::{AnalyticTargetProvider, EchoProvider, ExternalProvider, MirrorProvider, Target};
pub use spec::{cube_target, ProviderSpec, DEFAULT_ANALYTIC_K, DEFAULT_CUBE_ALBEDO};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geom::Vec3;
use crate::render::Camera;

pub const SCHEDULE_STEPS: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum GuidanceError {
    #[error("guidance provider did not answer after {attempts} attempt(s)")]
    ProviderTimeout { attempts: u32 },
    #[error("provider returned {got} values, expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("provider returned non-finite values")]
    NonFinite,
    #[error("provider speaks protocol version {0}, expected 1")]
    HandshakeVersionError(u64),
    #[error("stream does not start with the protocol magic")]
    BadMagic,
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("frame of {0} bytes exceeds the limit")]
    FrameTooLarge(u64),
    #[error("provider error: {0}")]
    Remote(String),
    #[error("invalid guidance config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Cosine,
    Linear,
}

/// Cumulative signal fraction `alpha_bar(t)` for `t = 0..SCHEDULE_STEPS`, strictly decreasing.
pub fn alpha_bar_schedule(kind: ScheduleKind) -> Vec<f64> {
    match kind {
        ScheduleKind::Cosine => {
            let s = 0.008;
            let f = |t: f64| (((t / SCHEDULE_STEPS as f64) + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
            // per-step betas capped at 0.999 keep the tail strictly positive
            let mut acc = 1.0;
            (0..SCHEDULE_STEPS)
                .map(|t| {
                    let beta = (1.0 - f(t as f64 + 1.0) / f(t as f64)).min(0.999);
                    acc *= 1.0 - beta;
                    acc
                })
                .collect()
        }
        ScheduleKind::Linear => {
            let mut acc = 1.0;
            (0..SCHEDULE_STEPS)
                .map(|t| {
                    let beta = 1e-4 + (0.02 - 1e-4) * t as f64 / (SCHEDULE_STEPS - 1) as f64;
                    acc *= 1.0 - beta;
                    acc
                })
                .collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    pub prompt: String,
    pub guidance_scale: f64,
    /// Inclusive timestep range sampled uniformly.
    pub t_range: [usize; 2],
    pub schedule: ScheduleKind,
    pub directional_prompts: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            prompt: String::new(),
            guidance_scale: 100.0,
            t_range: [20, 980],
            schedule: ScheduleKind::Cosine,
            directional_prompts: true,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<(), GuidanceError> {
        let [lo, hi] = self.t_range;
        if !(lo < hi && hi < SCHEDULE_STEPS) {
            return Err(GuidanceError::Config(format!("t_range {lo}..{hi} must satisfy 0 <= min < max < {SCHEDULE_STEPS}")));
        }
        if !(self.guidance_scale > 0.0) {
            return Err(GuidanceError::Config(format!("guidance_scale must be positive, got {}", self.guidance_scale)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRequest {
    pub width: usize,
    pub height: usize,
    /// Row-major interleaved RGB in `[0, 1]`.
    pub image: Vec<f32>,
    pub prompt: String,
    pub timestep: usize,
    pub guidance_scale: f64,
    pub seed: u64,
    /// View the image was rendered from, for providers that need it.
    pub camera: Option<Camera>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreResponse {
    /// Residual `eps_hat - eps`, same layout as the request image.
    pub pixel_gradient: Vec<f32>,
    pub provider_info: String,
}

pub trait GuidanceProvider: Send + Sync {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, GuidanceError>;
}

/// Suffix bins: elevation above 60 is overhead, below -30 bottom; otherwise
/// azimuth within 45 of the front is front, within 135 side, else back.
pub fn directional_suffix(azimuth_deg: f64, elevation_deg: f64) -> &'static str {
    if elevation_deg > 60.0 {
        return "overhead view";
    }
    if elevation_deg < -30.0 {
        return "bottom view";
    }
    let az = (azimuth_deg + 180.0).rem_euclid(360.0) - 180.0;
    if az.abs() <= 45.0 {
        "front view"
    } else if az.abs() <= 135.0 {
        "side view"
    } else {
        "back view"
    }
}

pub fn directional_prompt(prompt: &str, azimuth_deg: f64, elevation_deg: f64) -> String {
    format!("{prompt}, {}", directional_suffix(azimuth_deg, elevation_deg))
}

pub fn directional_prompt_for(prompt: &str, camera: &Camera, scene_center: &Vec3) -> String {
    let (az, el) = camera.orbit_angles(scene_center);
    directional_prompt(prompt, az, el)
}

/// One distillation gradient sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SdsSample {
    pub gradient: Vec<[f64; 3]>,
    pub timestep: usize,
    pub weight: f64,
    pub seed: u64,
}

/// Queries `provider` at a given timestep and noise seed and returns `w(t) (eps_hat - eps)`.
#[allow(clippy::too_many_arguments)]
pub fn sds_pixel_gradient_at(
    image: &[[f64; 3]],
    width: usize,
    height: usize,
    camera: Option<&Camera>,
    prompt: &str,
    config: &GuidanceConfig,
    schedule: &[f64],
    provider: &dyn GuidanceProvider,
    timestep: usize,
    seed: u64,
) -> Result<SdsSample, GuidanceError> {
    let n = width * height;
    if image.len() != n {
        return Err(GuidanceError::ShapeMismatch { expected: n, got: image.len() });
    }
    let request = ScoreRequest {
        width,
        height,
        image: image.iter().flat_map(|c| c.map(|v| v as f32)).collect(),
        prompt: prompt.to_owned(),
        timestep,
        guidance_scale: config.guidance_scale,
        seed,
        camera: camera.cloned(),
    };
    let response = provider.score(&request)?;
    if response.pixel_gradient.len() != 3 * n {
        return Err(GuidanceError::ShapeMismatch { expected: 3 * n, got: response.pixel_gradient.len() });
    }
    if response.pixel_gradient.iter().any(|v| !v.is_finite()) {
        return Err(GuidanceError::NonFinite);
    }
    let weight = 1.0 - schedule[timestep];
    let gradient = response
        .pixel_gradient
        .chunks_exact(3)
        .map(|c| [weight * c[0] as f64, weight * c[1] as f64, weight * c[2] as f64])
        .collect();
    Ok(SdsSample { gradient, timestep, weight, seed })
}

/// Draws a timestep uniformly from `t_range` and a noise seed from `rng`, then
/// calls [`sds_pixel_gradient_at`]. The prompt gets a view suffix when enabled
/// and a camera is known.
#[allow(clippy::too_many_arguments)]
pub fn sds_pixel_gradient(
    image: &[[f64; 3]],
    width: usize,
    height: usize,
    camera: Option<&Camera>,
    scene_center: &Vec3,
    config: &GuidanceConfig,
    schedule: &[f64],
    provider: &dyn GuidanceProvider,
    rng: &mut impl Rng,
) -> Result<SdsSample, GuidanceError> {
    let timestep = rng.random_range(config.t_range[0]..=config.t_range[1]);
    let seed = rng.random::<u64>();
    let prompt = match camera {
        Some(c) if config.directional_prompts => directional_prompt_for(&config.prompt, c, scene_center),
        _ => config.prompt.clone(),
    };
    sds_pixel_gradient_at(image, width, height, camera, &prompt, config, schedule, provider, timestep, seed)
}
