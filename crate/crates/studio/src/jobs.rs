//! Sessions and background edit jobs.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::Serialize;
use sketchedit_core::editor::{EditConfig, EditError, EditJob, LossRecord};
use sketchedit_core::guidance::{GuidanceConfig, GuidanceProvider, ProviderSpec};
use sketchedit_core::imageio::encode_png;
use sketchedit_core::render::{render_view, RenderOptions};
use sketchedit_core::{RadianceField, SketchSet};
use tokio::sync::watch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Created,
    Running,
    Done,
    Failed,
    Cancelled,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Done | Self::Failed | Self::Cancelled)
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum JobEvent {
    Progress { iteration: usize, losses: LossRecord, preview_url: String },
    Status { status: JobStatus, error: Option<String> },
}

pub struct Job {
    pub id: String,
    pub session: String,
    pub iterations: usize,
    cancel: AtomicBool,
    status: Mutex<JobStatus>,
    events: Mutex<Vec<JobEvent>>,
    /// Number of recorded events; subscribers wait on changes.
    event_count: watch::Sender<usize>,
    preview: Mutex<Option<Vec<u8>>>,
}

impl Job {
    fn new(id: String, session: String, iterations: usize) -> Self {
        Self {
            id,
            session,
            iterations,
            cancel: AtomicBool::new(false),
            status: Mutex::new(JobStatus::Created),
            events: Mutex::new(Vec::new()),
            event_count: watch::channel(0).0,
            preview: Mutex::new(None),
        }
    }

    pub fn status(&self) -> JobStatus {
        *self.status.lock().unwrap()
    }

    /// Moves the state machine forward; backward or repeated terminal transitions are ignored.
    fn transition(&self, to: JobStatus) -> bool {
        let mut s = self.status.lock().unwrap();
        let allowed = match (*s, to) {
            (JobStatus::Created, JobStatus::Running) => true,
            (JobStatus::Created | JobStatus::Running, t) => t.is_terminal(),
            _ => false,
        };
        if allowed {
            *s = to;
        }
        allowed
    }

    fn push(&self, e: JobEvent) {
        let mut ev = self.events.lock().unwrap();
        ev.push(e);
        self.event_count.send_replace(ev.len());
    }

    pub fn events_from(&self, start: usize) -> Vec<JobEvent> {
        self.events.lock().unwrap().get(start..).map(<[JobEvent]>::to_vec).unwrap_or_default()
    }

    pub fn subscribe(&self) -> watch::Receiver<usize> {
        self.event_count.subscribe()
    }

    pub fn cancel(&self) {
        self.cancel.store(true, Ordering::Relaxed);
    }

    pub fn preview(&self) -> Option<Vec<u8>> {
        self.preview.lock().unwrap().clone()
    }

    pub fn last_progress(&self) -> Option<(usize, LossRecord)> {
        self.events.lock().unwrap().iter().rev().find_map(|e| match e {
            JobEvent::Progress { iteration, losses, .. } => Some((*iteration, *losses)),
            _ => None,
        })
    }
}

#[derive(Debug)]
pub enum StartError {
    Busy,
    Edit(EditError),
}

pub struct Session {
    pub id: String,
    /// Never modified; replaced wholesale by "use as base".
    pub base: Arc<RadianceField>,
    /// Result of the latest finished edit or carve.
    pub current: Option<Arc<RadianceField>>,
    pub sketches: SketchSet,
    pub job: Option<Arc<Job>>,
}

impl Session {
    pub fn new(id: String, base: RadianceField) -> Self {
        Self { id, base: Arc::new(base), current: None, sketches: SketchSet::empty(), job: None }
    }

    pub fn current_field(&self) -> Arc<RadianceField> {
        self.current.clone().unwrap_or_else(|| self.base.clone())
    }

    pub fn running(&self) -> bool {
        self.job.as_ref().is_some_and(|j| !j.status().is_terminal())
    }
}

pub struct Settings {
    /// Used when an edit request names no provider.
    pub default_provider: ProviderSpec,
    pub preview_every: usize,
    pub preview_size: usize,
    pub state_dir: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        Self { default_provider: ProviderSpec::Echo, preview_every: 50, preview_size: 128, state_dir: None }
    }
}

pub struct Studio {
    pub settings: Settings,
    pub sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    pub jobs: RwLock<HashMap<String, Arc<Job>>>,
}

impl Studio {
    pub fn new(settings: Settings) -> Self {
        Self { settings, sessions: RwLock::new(HashMap::new()), jobs: RwLock::new(HashMap::new()) }
    }

    pub fn session(&self, id: &str) -> Option<Arc<Mutex<Session>>> {
        self.sessions.read().unwrap().get(id).cloned()
    }

    pub fn job(&self, id: &str) -> Option<Arc<Job>> {
        self.jobs.read().unwrap().get(id).cloned()
    }

    pub fn insert_session(&self, session: Session) -> Arc<Mutex<Session>> {
        let id = session.id.clone();
        let s = Arc::new(Mutex::new(session));
        self.sessions.write().unwrap().insert(id, s.clone());
        s
    }

    /// Writes the session's fields and sketches under the state directory, if one is configured.
    pub fn persist(&self, session: &Session) {
        let Some(root) = &self.settings.state_dir else { return };
        if let Err(e) = persist_session(&root.join(&session.id), session) {
            log::warn!("could not persist session {}: {e}", session.id);
        }
    }

    /// Reloads every session directory found under the state directory.
    pub fn restore(&self) {
        let Some(root) = &self.settings.state_dir else { return };
        let Ok(entries) = std::fs::read_dir(root) else { return };
        for entry in entries.flatten() {
            let dir = entry.path();
            let Some(id) = dir.file_name().and_then(|n| n.to_str()).map(str::to_owned) else { continue };
            match restore_session(&dir, id.clone()) {
                Ok(s) => {
                    self.insert_session(s);
                }
                Err(e) => log::warn!("skipping stored session {id}: {e}"),
            }
        }
    }

    /// Starts an edit of the session's base field on a worker thread.
    pub fn start_job(
        self: &Arc<Self>,
        session: &Arc<Mutex<Session>>,
        config: EditConfig,
        guidance: GuidanceConfig,
        provider: Arc<dyn GuidanceProvider>,
    ) -> Result<Arc<Job>, StartError> {
        let mut s = session.lock().unwrap();
        if s.running() {
            return Err(StartError::Busy);
        }
        let edit = EditJob::new(s.base.clone(), s.sketches.clone(), config, guidance, provider).map_err(StartError::Edit)?;
        let job = Arc::new(Job::new(uuid::Uuid::new_v4().to_string(), s.id.clone(), edit.config().iterations));
        s.job = Some(job.clone());
        drop(s);
        self.jobs.write().unwrap().insert(job.id.clone(), job.clone());
        let (studio, session, j) = (self.clone(), session.clone(), job.clone());
        std::thread::spawn(move || studio.run_job(edit, &session, &j));
        Ok(job)
    }

    fn run_job(&self, mut edit: EditJob, session: &Arc<Mutex<Session>>, job: &Arc<Job>) {
        job.transition(JobStatus::Running);
        let every = self.settings.preview_every.max(1);
        let size = self.settings.preview_size;
        let preview_cam = edit.sketches().views()[0].camera().with_resolution(size, size);
        let opts: RenderOptions = edit.render_options();
        let result = edit.run(Some(&job.cancel), |j, r| {
            let done = r.iteration + 1;
            if done % every == 0 || done == j.config().iterations {
                let out = render_view(j.edited(), &preview_cam, &opts);
                match encode_png(size, size, &out.rgb, None) {
                    Ok(png) => *job.preview.lock().unwrap() = Some(png),
                    Err(e) => log::warn!("preview encoding failed: {e}"),
                }
                job.push(JobEvent::Progress {
                    iteration: done,
                    losses: *r,
                    preview_url: format!("/api/v1/job/{}/preview.png?iteration={done}", job.id),
                });
            }
        });
        let (status, error) = match result {
            Ok(()) => {
                let (field, _) = edit.finish();
                let mut s = session.lock().unwrap();
                s.current = Some(Arc::new(field));
                self.persist(&s);
                (JobStatus::Done, None)
            }
            Err(EditError::Cancelled) => (JobStatus::Cancelled, None),
            Err(e) => (JobStatus::Failed, Some(e.to_string())),
        };
        if job.transition(status) {
            job.push(JobEvent::Status { status, error });
        }
    }
}

fn persist_session(dir: &Path, s: &Session) -> Result<(), Box<dyn std::error::Error>> {
    std::fs::create_dir_all(dir)?;
    s.base.save(dir.join("base.skfd"))?;
    match &s.current {
        Some(f) => f.save(dir.join("current.skfd"))?,
        None => {
            let _ = std::fs::remove_file(dir.join("current.skfd"));
        }
    }
    let sk = dir.join("sketches");
    let _ = std::fs::remove_dir_all(&sk);
    if !s.sketches.views().is_empty() {
        sketchedit_core::sketch::save_package(&sk, &s.sketches, sketchedit_core::sketch::DEFAULT_BETA)?;
    }
    Ok(())
}

fn restore_session(dir: &Path, id: String) -> Result<Session, Box<dyn std::error::Error>> {
    let mut s = Session::new(id, RadianceField::load(dir.join("base.skfd"))?);
    let current = dir.join("current.skfd");
    if current.exists() {
        s.current = Some(Arc::new(RadianceField::load(current)?));
    }
    let sk = dir.join("sketches");
    if sk.exists() {
        s.sketches = sketchedit_core::sketch::load_package(&sk)?.0;
    }
    Ok(s)
}
