use std::net::TcpStream;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use super::wire;
use super::{GuidanceError, GuidanceProvider, ScoreRequest, ScoreResponse};
use crate::field::RadianceField;
use crate::render::{render_view, RenderOptions};

/// A denoiser that predicts the injected noise exactly: the residual is always zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct EchoProvider;

impl GuidanceProvider for EchoProvider {
    fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse, GuidanceError> {
        Ok(ScoreResponse { pixel_gradient: vec![0.0; req.image.len()], provider_info: "echo".into() })
    }
}

/// Returns the request image itself. Useful as a loopback server behind the wire protocol.
#[derive(Clone, Copy, Debug, Default)]
pub struct MirrorProvider;

impl GuidanceProvider for MirrorProvider {
    fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse, GuidanceError> {
        Ok(ScoreResponse { pixel_gradient: req.image.clone(), provider_info: "mirror".into() })
    }
}

#[derive(Clone, Debug)]
pub enum Target {
    /// Rendered from the request's camera at the request's resolution.
    Field { field: Arc<RadianceField>, options: RenderOptions },
    /// A fixed image used for every request of matching size.
    Image { width: usize, height: usize, rgb: Vec<[f64; 3]> },
}

/// Stands in for a denoiser whose prediction error pulls renders toward a known
/// target: the residual is `k (image - target)` plus optional Gaussian noise
/// drawn from the request seed.
#[derive(Clone, Debug)]
pub struct AnalyticTargetProvider {
    pub target: Target,
    pub k: f64,
    pub noise_level: f64,
}

impl AnalyticTargetProvider {
    pub fn new(target: Target, k: f64) -> Result<Self, GuidanceError> {
        if !(k > 0.0 && k <= 1.0) {
            return Err(GuidanceError::Config(format!("k must lie in (0, 1], got {k}")));
        }
        Ok(Self { target, k, noise_level: 0.0 })
    }

    pub fn with_noise(mut self, noise_level: f64) -> Self {
        self.noise_level = noise_level;
        self
    }

    fn target_for(&self, req: &ScoreRequest) -> Result<Vec<[f64; 3]>, GuidanceError> {
        match &self.target {
            Target::Field { field, options } => {
                let cam = req
                    .camera
                    .as_ref()
                    .ok_or_else(|| GuidanceError::Config("a field target needs the request camera".into()))?;
                Ok(render_view(field, &cam.with_resolution(req.width, req.height), options).rgb)
            }
            Target::Image { width, height, rgb } => {
                if (*width, *height) != (req.width, req.height) {
                    return Err(GuidanceError::ShapeMismatch { expected: 3 * width * height, got: req.image.len() });
                }
                Ok(rgb.clone())
            }
        }
    }
}

impl GuidanceProvider for AnalyticTargetProvider {
    fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse, GuidanceError> {
        let target = self.target_for(req)?;
        if req.image.len() != 3 * target.len() {
            return Err(GuidanceError::ShapeMismatch { expected: 3 * target.len(), got: req.image.len() });
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(req.seed);
        let pixel_gradient = req
            .image
            .iter()
            .zip(target.iter().flatten())
            .map(|(&i, &t)| {
                let mut r = self.k * (i as f64 - t);
                if self.noise_level > 0.0 {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    r += self.noise_level * n;
                }
                r as f32
            })
            .collect();
        Ok(ScoreResponse { pixel_gradient, provider_info: format!("analytic k={}", self.k) })
    }
}

/// Client for a provider running in another process, reached over TCP.
pub struct ExternalProvider {
    addr: String,
    timeout: Duration,
    conn: Mutex<Option<TcpStream>>,
}

impl ExternalProvider {
    pub const ATTEMPTS: u32 = 2;

    /// Connects and performs the handshake eagerly so misconfiguration surfaces at once.
    pub fn connect(addr: impl Into<String>, timeout: Duration) -> Result<Self, GuidanceError> {
        let p = Self::lazy(addr, timeout);
        let stream = p.open()?;
        *p.conn.lock().unwrap() = Some(stream);
        Ok(p)
    }

    /// Creates the client without contacting the server.
    pub fn lazy(addr: impl Into<String>, timeout: Duration) -> Self {
        Self { addr: addr.into(), timeout, conn: Mutex::new(None) }
    }

    fn open(&self) -> Result<TcpStream, GuidanceError> {
        let mut s = wire::connect(&self.addr, self.timeout)?;
        wire::client_handshake(&mut s)?;
        Ok(s)
    }
}

fn is_transient(e: &GuidanceError) -> bool {
    matches!(e, GuidanceError::Io(_) | GuidanceError::ProviderTimeout { .. })
}

impl GuidanceProvider for ExternalProvider {
    fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse, GuidanceError> {
        let mut guard = self.conn.lock().unwrap();
        for attempt in 1..=Self::ATTEMPTS {
            let result = (|| {
                if guard.is_none() {
                    *guard = Some(self.open()?);
                }
                wire::client_score(guard.as_mut().unwrap(), req)
            })();
            match result {
                Ok(resp) => {
                    if resp.pixel_gradient.len() != req.image.len() {
                        return Err(GuidanceError::ShapeMismatch { expected: req.image.len(), got: resp.pixel_gradient.len() });
                    }
                    return Ok(resp);
                }
                Err(e) if is_transient(&e) => {
                    log::warn!("guidance provider at {} failed (attempt {attempt}): {e}", self.addr);
                    *guard = None;
                }
                Err(e) => return Err(e),
            }
        }
        Err(GuidanceError::ProviderTimeout { attempts: Self::ATTEMPTS })
    }
}
