//! Serializable provider choice, shared by the command line and the studio.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{AnalyticTargetProvider, EchoProvider, ExternalProvider, GuidanceError, GuidanceProvider, Target};
use crate::field::{stamp_primitive, Primitive, RadianceField, Shape};
use crate::geom::Aabb;
use crate::render::RenderOptions;

pub const DEFAULT_ANALYTIC_K: f64 = 3e-11;
pub const DEFAULT_CUBE_ALBEDO: [f64; 3] = [0.9, 0.3, 0.2];

fn default_k() -> f64 {
    DEFAULT_ANALYTIC_K
}

fn default_albedo() -> [f64; 3] {
    DEFAULT_CUBE_ALBEDO
}

fn default_timeout() -> f64 {
    30.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderSpec {
    Echo,
    External {
        endpoint: String,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
    },
    /// Analytic target: the base with a solid box filling the edit region.
    AnalyticCube {
        #[serde(default = "default_k")]
        k: f64,
        #[serde(default = "default_albedo")]
        albedo: [f64; 3],
        #[serde(default)]
        noise: f64,
    },
}

impl Default for ProviderSpec {
    fn default() -> Self {
        Self::Echo
    }
}

impl ProviderSpec {
    pub fn build(&self, base: &RadianceField, edit_bbox: &Aabb) -> Result<Arc<dyn GuidanceProvider>, GuidanceError> {
        Ok(match self {
            Self::Echo => Arc::new(EchoProvider),
            Self::External { endpoint, timeout_secs } => {
                if !(*timeout_secs > 0.0) {
                    return Err(GuidanceError::Config(format!("timeout must be positive, got {timeout_secs}")));
                }
                Arc::new(ExternalProvider::connect(endpoint.clone(), Duration::from_secs_f64(*timeout_secs))?)
            }
            Self::AnalyticCube { k, albedo, noise } => {
                let target = cube_target(base, edit_bbox, *albedo);
                let options = RenderOptions::for_field(base);
                Arc::new(AnalyticTargetProvider::new(Target::Field { field: Arc::new(target), options }, *k)?.with_noise(*noise))
            }
        })
    }
}

/// The base with an axis-aligned box stamped into `edit_bbox`, inset by
/// one and a half lattice spacings (the edit box is padded by whole cells).
pub fn cube_target(base: &RadianceField, edit_bbox: &Aabb, albedo: [f64; 3]) -> RadianceField {
    let spacing = base.spacing();
    let size = edit_bbox.size();
    let c = edit_bbox.center();
    let half = std::array::from_fn(|a| (0.5 * size[a] - 1.5 * spacing[a]).max(spacing[a]));
    let mut target = base.clone();
    stamp_primitive(&mut target, &Primitive { shape: Shape::Box { center: [c.x, c.y, c.z], half }, albedo });
    target
}
