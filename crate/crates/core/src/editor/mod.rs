//! The editing optimization.
//!
//! An edit job starts from a deep copy of the base field, switches on the
//! occupancy cells of the sketches' edit box and then repeats [`EditJob::step`]:
//! render a random view, add the guidance gradient and the sparsity term on its
//! pixels, the preservation term on its ray samples, the silhouette term on
//! every sketch view, and take one optimizer step.

mod adam;
mod config;
pub mod losses;
mod reconstruct;
mod views;

pub use adam::{Adam, AdamParams};
pub use config::EditConfig;
pub use reconstruct::{reconstruct, ReconstructConfig};
pub use views::ViewSampler;

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::field::{FieldError, RadianceField};
use crate::geom::Aabb;
use crate::guidance::{alpha_bar_schedule, sds_pixel_gradient, GuidanceConfig, GuidanceError, GuidanceProvider};
use crate::render::{composite_backward, scatter_sample_grads, trace_view, FieldGrad, RenderOptions, RenderError};
use crate::sketch::{SketchError, SketchSet};

#[derive(Debug, thiserror::Error)]
pub enum EditError {
    #[error("invalid edit config: {0}")]
    Config(String),
    #[error("non-finite {what} at iteration {iteration}")]
    NonFiniteLoss { iteration: usize, what: String },
    #[error("base and edited fields do not share a lattice")]
    LatticeMismatch,
    #[error("edit cancelled")]
    Cancelled,
    #[error(transparent)]
    Sketch(#[from] SketchError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Loss values of one iteration. `l_sds` is half the mean squared guidance residual,
/// the quantity whose gradient the residual is for an analytic target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub l_sds: f64,
    pub l_pres: f64,
    pub l_sil: f64,
    pub l_sp: f64,
    pub l_total: f64,
    pub lr: f64,
}

pub fn loss_csv(history: &[LossRecord]) -> String {
    let mut s = String::from("iteration,l_sds,l_pres,l_sil,l_sp,l_total,lr\n");
    for r in history {
        s.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e}\n",
            r.iteration, r.l_sds, r.l_pres, r.l_sil, r.l_sp, r.l_total, r.lr
        ));
    }
    s
}

pub fn write_loss_csv(path: &Path, history: &[LossRecord]) -> std::io::Result<()> {
    crate::io_util::write_atomic(path, loss_csv(history).as_bytes())
}

pub struct EditJob {
    base: Arc<RadianceField>,
    edited: RadianceField,
    sketches: SketchSet,
    edit_bbox: Aabb,
    config: EditConfig,
    guidance: GuidanceConfig,
    provider: Arc<dyn GuidanceProvider>,
    schedule: Vec<f64>,
    sampler: ViewSampler,
    adam: Adam,
    rng: ChaCha8Rng,
    step_len: f64,
    iteration: usize,
    history: Vec<LossRecord>,
}

impl EditJob {
    pub fn new(
        base: Arc<RadianceField>,
        sketches: SketchSet,
        config: EditConfig,
        guidance: GuidanceConfig,
        provider: Arc<dyn GuidanceProvider>,
    ) -> Result<Self, EditError> {
        config.validate()?;
        guidance.validate()?;
        if sketches.views().is_empty() {
            return Err(SketchError::NoViews.into());
        }
        let sketches = sketches.with_distance_power(config.distance_power)?;
        let edit_bbox = sketches.edit_bbox(base.bbox(), base.occupancy().resolution())?;
        let mut edited = (*base).clone();
        edited.seed_edit_region(&edit_bbox)?;
        let sampler = ViewSampler::new(&sketches, &edit_bbox, base.bbox(), &config);
        let adam = Adam::new(&edited, AdamParams { beta1: config.adam_beta1, beta2: config.adam_beta2, eps: config.adam_eps });
        let step_len = config.step.unwrap_or_else(|| base.default_step());
        Ok(Self {
            schedule: alpha_bar_schedule(guidance.schedule),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            base,
            edited,
            sketches,
            edit_bbox,
            config,
            guidance,
            provider,
            sampler,
            adam,
            step_len,
            iteration: 0,
            history: Vec::new(),
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn edited(&self) -> &RadianceField {
        &self.edited
    }

    pub fn base(&self) -> &RadianceField {
        &self.base
    }

    pub fn edit_bbox(&self) -> &Aabb {
        &self.edit_bbox
    }

    pub fn history(&self) -> &[LossRecord] {
        &self.history
    }

    pub fn config(&self) -> &EditConfig {
        &self.config
    }

    pub fn sketches(&self) -> &SketchSet {
        &self.sketches
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions { step: self.step_len, background: self.config.background, use_occupancy: true, jitter_seed: None }
    }

    fn check(&self, what: &str, v: f64) -> Result<(), EditError> {
        if v.is_finite() {
            Ok(())
        } else {
            Err(EditError::NonFiniteLoss { iteration: self.iteration, what: what.into() })
        }
    }

    /// One optimization iteration.
    pub fn step(&mut self) -> Result<LossRecord, EditError> {
        let cfg = &self.config;
        let res = cfg.train_resolution();
        let camera = self.sampler.sample(&mut self.rng, res);
        let jitter_seed = cfg.jitter.then(|| self.rng.random::<u64>());
        let opts = RenderOptions { jitter_seed, ..self.render_options() };
        let trace = trace_view(&self.edited, &camera, &opts);
        let rgb: Vec<[f64; 3]> = trace.composites.iter().map(|c| c.rgb).collect();
        let alpha: Vec<f64> = trace.composites.iter().map(|c| c.alpha).collect();

        // pixel-space terms: guidance and sparsity
        let sds = sds_pixel_gradient(
            &rgb,
            res,
            res,
            Some(&camera),
            &self.base.bbox().center(),
            &self.guidance,
            &self.schedule,
            self.provider.as_ref(),
            &mut self.rng,
        )?;
        let l_sds = 0.5 * sds.gradient.iter().flatten().map(|g| g * g).sum::<f64>() / (3 * rgb.len()) as f64;
        let (l_sp, sp_grad) = losses::sparsity_loss(&alpha);
        let pixel: Vec<[f64; 4]> = sds
            .gradient
            .iter()
            .zip(&sp_grad)
            .map(|(g, &s)| [g[0], g[1], g[2], cfg.lambda_sp * s])
            .collect();
        let mut sample_grads = composite_backward(&trace, &pixel);

        // preservation on the same samples
        let base_samples = losses::base_samples(&self.base, &trace, &self.sketches, cfg.beta, cfg.occupancy_threshold);
        let (l_pres, pres_grads) = losses::preservation_loss(&trace, &base_samples, cfg.lambda_c);
        for (g, p) in sample_grads.iter_mut().zip(&pres_grads) {
            g.alpha += cfg.lambda_pres * p.alpha;
            for c in 0..3 {
                g.color[c] += cfg.lambda_pres * p.color[c];
            }
        }
        let mut grad = FieldGrad::zeros_like(&self.edited);
        scatter_sample_grads(&self.edited, &trace, &sample_grads, &mut grad);

        // silhouettes on every sketch view
        let (l_sil, sil_grad) = if cfg.lambda_sil > 0.0 {
            losses::silhouette_loss(&self.edited, &self.sketches, &self.render_options())
        } else {
            (0.0, FieldGrad::zeros_like(&self.edited))
        };
        grad.add_scaled(&sil_grad, cfg.lambda_sil);

        let l_total = l_sds + cfg.lambda_pres * l_pres + cfg.lambda_sil * l_sil + cfg.lambda_sp * l_sp;
        for (what, v) in [("l_sds", l_sds), ("l_pres", l_pres), ("l_sil", l_sil), ("l_sp", l_sp)] {
            self.check(what, v)?;
        }
        if !grad.is_finite() {
            return Err(EditError::NonFiniteLoss { iteration: self.iteration, what: "gradient".into() });
        }

        grad.scale(cfg.loss_scale);
        let lr = cfg.lr_at(self.iteration);
        self.adam.step(&mut self.edited, &grad, lr * cfg.density_lr_scale, lr);
        let record = LossRecord { iteration: self.iteration, l_sds, l_pres, l_sil, l_sp, l_total, lr };
        self.iteration += 1;
        self.edited.prune(self.iteration, self.config.warmup_iters, self.config.prune_period);
        self.history.push(record);
        Ok(record)
    }

    /// Runs the remaining iterations. `on_step` sees the job after every step;
    /// setting `cancel` stops the run with [`EditError::Cancelled`].
    pub fn run(
        &mut self,
        cancel: Option<&AtomicBool>,
        mut on_step: impl FnMut(&EditJob, &LossRecord),
    ) -> Result<(), EditError> {
        while self.iteration < self.config.iterations {
            if cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
                return Err(EditError::Cancelled);
            }
            let r = self.step()?;
            on_step(self, &r);
        }
        Ok(())
    }

    /// The edited field with provenance appended to its metadata.
    pub fn finish(self) -> (RadianceField, Vec<LossRecord>) {
        let mut field = self.edited;
        let mut edits = match field.metadata.remove("edits") {
            Some(serde_json::Value::Array(a)) => a,
            _ => Vec::new(),
        };
        edits.push(serde_json::json!({
            "base_hash": self.base.content_hash(),
            "config_hash": self.config.content_hash(),
            "config": self.config,
            "prompt": self.guidance.prompt,
            "sketch_hash": self.sketches.content_hash(),
            "iterations": self.iteration,
        }));
        field.metadata.insert("edits".into(), serde_json::Value::Array(edits));
        (field, self.history)
    }
}

/// Copies `base`, seeds the edit region and runs the full schedule.
pub fn edit(
    base: &RadianceField,
    sketches: &SketchSet,
    config: &EditConfig,
    guidance: &GuidanceConfig,
    provider: Arc<dyn GuidanceProvider>,
) -> Result<(RadianceField, Vec<LossRecord>), EditError> {
    let mut job = EditJob::new(Arc::new(base.clone()), sketches.clone(), config.clone(), guidance.clone(), provider)?;
    job.run(None, |_, _| {})?;
    Ok(job.finish())
}

pub struct EditStage {
    pub sketches: SketchSet,
    pub config: EditConfig,
    pub guidance: GuidanceConfig,
    pub provider: Arc<dyn GuidanceProvider>,
}

/// Applies the stages in order, each output becoming the next base.
pub fn edit_progressive(base: &RadianceField, stages: &[EditStage]) -> Result<RadianceField, EditError> {
    let mut current = base.clone();
    for s in stages {
        current = edit(&current, &s.sketches, &s.config, &s.guidance, s.provider.clone())?.0;
    }
    Ok(current)
}
