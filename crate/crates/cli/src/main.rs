use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::{Map, Value};

use sketchedit_core::editor::{self, EditConfig, EditError, EditJob, ReconstructConfig};
use sketchedit_core::field::{synth_scene, FieldError, SceneKind};
use sketchedit_core::guidance::{
    AnalyticTargetProvider, GuidanceConfig, GuidanceError, GuidanceProvider, ProviderSpec, Target, DEFAULT_ANALYTIC_K,
    DEFAULT_CUBE_ALBEDO,
};
use sketchedit_core::imageio::{self, ImageIoError};
use sketchedit_core::io_util::write_atomic;
use sketchedit_core::metrics::evaluate;
use sketchedit_core::render::{render_view, CameraError, RenderOptions};
use sketchedit_core::sketch::{self, fill_scribble, ScribbleInput, SketchError};
use sketchedit_core::{Aabb, Camera, RadianceField, SketchSet, SketchView};

#[derive(Parser)]
#[command(name = "sketchedit", version, about = "Sketch-guided editing of voxel radiance fields")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Voxelize a synthetic scene.
    Synth(SynthArgs),
    /// Fit a field to posed images.
    Reconstruct(ReconstructArgs),
    /// Render views of a field to PNG.
    Render(RenderArgs),
    /// Build a sketch package from stroke JSON or mask PNGs.
    Sketchpack(SketchpackArgs),
    /// Run an edit job.
    Edit(EditArgs),
    /// Empty the visual hull of the sketches.
    Carve(CarveArgs),
    /// Score an edit against its base.
    Eval(EvalArgs),
    /// Start the studio HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "sphere")]
    kind: SceneKind,
    #[arg(long, default_value_t = 64)]
    res: usize,
    /// Half extent of the cubic bounding box.
    #[arg(long, default_value_t = 1.0)]
    half: f64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Directory of `*/image.png` + `*/camera.json` pairs (as written by `render`).
    views: PathBuf,
    /// Half extent of the cubic bounding box.
    #[arg(long, default_value_t = 1.0)]
    half: f64,
    /// ReconstructConfig JSON; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    res: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    field: PathBuf,
    /// Render N views evenly spaced in azimuth.
    #[arg(long, conflicts_with = "camera")]
    orbit: Option<usize>,
    /// Render from a camera JSON file.
    #[arg(long)]
    camera: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, default_value_t = 3.2)]
    radius: f64,
    #[arg(long, default_value_t = 20.0)]
    elevation: f64,
    /// Vertical field of view in degrees.
    #[arg(long, default_value_t = 40.0)]
    fov: f64,
    /// Also write alpha.png per view.
    #[arg(long)]
    alpha: bool,
    /// Output directory; each view goes to `view_NN/{image.png,camera.json}`.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct SketchpackArgs {
    /// Stroke JSON: {"views":[{"camera": {...}, "strokes": [[x,y],...] or [[[x,y],...],...]}]}.
    #[arg(long, conflicts_with = "mask")]
    strokes: Option<PathBuf>,
    /// Mask PNG, paired in order with --camera.
    #[arg(long)]
    mask: Vec<PathBuf>,
    #[arg(long)]
    camera: Vec<PathBuf>,
    #[arg(long, default_value_t = sketch::DEFAULT_BETA)]
    beta: f64,
    #[arg(long, default_value_t = sketch::DEFAULT_DISTANCE_POWER)]
    distance_power: u32,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum ProviderKind {
    Analytic,
    Echo,
    External,
}

#[derive(Args)]
struct EditArgs {
    base: PathBuf,
    /// Sketch package directory.
    #[arg(long)]
    sketch: PathBuf,
    #[arg(long, value_enum, default_value = "analytic")]
    provider: ProviderKind,
    /// Analytic target: `cube` (a box stamped into the edit region) or an SKFD path.
    #[arg(long, default_value = "cube")]
    target: String,
    /// Analytic residual gain.
    #[arg(long, default_value_t = DEFAULT_ANALYTIC_K)]
    k: f64,
    /// Color of the `cube` target, as r,g,b in [0, 1].
    #[arg(long, value_delimiter = ',', num_args = 3)]
    target_color: Option<Vec<f64>>,
    /// host:port of an external provider.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value_t = 30.0)]
    timeout_secs: f64,
    /// EditConfig JSON; any subset of keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// GuidanceConfig JSON; any subset of keys.
    #[arg(long)]
    guidance: Option<PathBuf>,
    #[arg(long)]
    prompt: Option<String>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda_pres: Option<f64>,
    #[arg(long)]
    lambda_sil: Option<f64>,
    #[arg(long)]
    lambda_sp: Option<f64>,
    #[arg(long)]
    warmup_iters: Option<usize>,
    /// Override any EditConfig key: --set key=json_value (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Loss CSV path (default: <output>.loss.csv).
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    /// Directory for periodic checkpoints (with checkpoint_every > 0).
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct CarveArgs {
    field: PathBuf,
    #[arg(long)]
    sketch: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    edited: PathBuf,
    #[arg(long)]
    sketch: PathBuf,
    /// Also write the JSON report here.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: std::net::SocketAddr,
    /// UI bundle served at `/`.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    /// Persist sessions (SKFD + sketch packages) here.
    #[arg(long)]
    state_dir: Option<PathBuf>,
    /// External provider used when an edit request names none; otherwise the echo provider.
    #[arg(long)]
    provider_endpoint: Option<String>,
    #[arg(long, default_value_t = 50)]
    preview_every: usize,
}

/// Failure classes with their exit codes.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Io(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Io(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Io(m) | Failure::Numerical(m) => f.write_str(m),
        }
    }
}

fn io_failure(context: impl std::fmt::Display, e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("{context}: {e}"))
}

impl From<EditError> for Failure {
    fn from(e: EditError) -> Self {
        match e {
            EditError::NonFiniteLoss { .. } => Failure::Numerical(e.to_string()),
            EditError::Io(_) | EditError::Field(_) => Failure::Io(e.to_string()),
            EditError::Guidance(ref g) => Failure::from_guidance(g, e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl Failure {
    fn from_guidance(g: &GuidanceError, msg: String) -> Self {
        match g {
            GuidanceError::Config(_) => Failure::Usage(msg),
            GuidanceError::NonFinite => Failure::Numerical(msg),
            _ => Failure::Io(msg),
        }
    }
}

type Outcome = Result<(), Failure>;

fn load_field(path: &Path) -> Result<RadianceField, Failure> {
    RadianceField::load(path).map_err(|e| io_failure(path.display(), e))
}

fn save_field(field: &RadianceField, path: &Path) -> Outcome {
    field.save(path).map_err(|e| io_failure(path.display(), e))
}

fn load_sketches(dir: &Path) -> Result<(SketchSet, f64), Failure> {
    let (set, manifest) = sketch::load_package(dir).map_err(|e| match e {
        SketchError::Io(_) | SketchError::Image(_) | SketchError::Json(_) | SketchError::BadPackage(_) => {
            io_failure(dir.display(), e)
        }
        other => Failure::Usage(format!("{}: {other}", dir.display())),
    })?;
    Ok((set, manifest.beta))
}

fn read_json_object(path: &Path) -> Result<Map<String, Value>, Failure> {
    let bytes = std::fs::read(path).map_err(|e| io_failure(path.display(), e))?;
    match serde_json::from_slice(&bytes).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))? {
        Value::Object(m) => Ok(m),
        _ => Err(Failure::Usage(format!("{}: expected a JSON object", path.display()))),
    }
}

fn read_camera(path: &Path) -> Result<Camera, Failure> {
    let bytes = std::fs::read(path).map_err(|e| io_failure(path.display(), e))?;
    serde_json::from_slice(&bytes).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Outcome {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_failure(parent.display(), e))?;
    }
    write_atomic(path, bytes).map_err(|e| io_failure(path.display(), e))
}

fn image_failure(path: &Path, e: ImageIoError) -> Failure {
    io_failure(path.display(), e)
}

fn synth(a: SynthArgs) -> Outcome {
    if a.res < 2 || !(a.half > 0.0) {
        return Err(Failure::Usage("--res must be at least 2 and --half positive".into()));
    }
    let field = synth_scene(a.kind, a.res, Aabb::centered_cube(a.half)).map_err(|e| Failure::Usage(e.to_string()))?;
    save_field(&field, &a.output)?;
    println!("wrote {} ({}^3 nodes)", a.output.display(), a.res);
    Ok(())
}

fn view_dirs(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_failure(dir.display(), e))?
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.join("camera.json").exists())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn reconstruct(a: ReconstructArgs) -> Outcome {
    let mut cfg = match &a.config {
        Some(p) => read_json_object(p)?,
        None => Map::new(),
    };
    let mut set = |k: &str, v: Option<Value>| {
        if let Some(v) = v {
            cfg.insert(k.into(), v);
        }
    };
    set("resolution", a.res.map(|r| serde_json::json!([r, r, r])));
    set("iterations", a.iters.map(Value::from));
    set("lr", a.lr.map(Value::from));
    set("seed", a.seed.map(Value::from));
    let config: ReconstructConfig =
        serde_json::from_value(Value::Object(cfg)).map_err(|e| Failure::Usage(format!("reconstruct config: {e}")))?;
    let mut views = Vec::new();
    for d in view_dirs(&a.views)? {
        let cam = read_camera(&d.join("camera.json"))?;
        let img_path = d.join("image.png");
        let (w, h, rgb) = imageio::read_rgb_png(&img_path).map_err(|e| image_failure(&img_path, e))?;
        if (w, h) != (cam.width(), cam.height()) {
            return Err(Failure::Usage(format!("{}: image is {w}x{h}, camera {}x{}", d.display(), cam.width(), cam.height())));
        }
        views.push((cam, rgb));
    }
    if views.is_empty() {
        return Err(Failure::Usage(format!("{} holds no view directories", a.views.display())));
    }
    let (field, history) = editor::reconstruct(&views, Aabb::centered_cube(a.half), &config)?;
    save_field(&field, &a.output)?;
    println!(
        "fitted {} views in {} iterations, final loss {:.3e}; wrote {}",
        views.len(),
        history.len(),
        history.last().copied().unwrap_or(f64::NAN),
        a.output.display()
    );
    Ok(())
}

fn render(a: RenderArgs) -> Outcome {
    let field = load_field(&a.field)?;
    let center = field.bbox().center();
    let cameras: Vec<Camera> = match (&a.camera, a.orbit) {
        (Some(p), _) => vec![read_camera(p)?],
        (None, Some(n)) if n > 0 => (0..n)
            .map(|i| {
                let az = 360.0 * i as f64 / n as f64;
                Camera::orbit(az, a.elevation, a.radius, center, a.size, a.size, a.fov.to_radians(), 0.1, 10.0 * a.radius)
            })
            .collect::<Result<_, CameraError>>()
            .map_err(|e| Failure::Usage(e.to_string()))?,
        _ => return Err(Failure::Usage("give --orbit N (N > 0) or --camera FILE".into())),
    };
    let opts = RenderOptions::for_field(&field);
    for (i, cam) in cameras.iter().enumerate() {
        let out = render_view(&field, cam, &opts);
        let dir = a.output.join(format!("view_{i:02}"));
        let png = imageio::encode_png(out.width, out.height, &out.rgb, None).map_err(|e| image_failure(&dir, e))?;
        write_file(&dir.join("image.png"), &png)?;
        if a.alpha {
            let png = imageio::encode_gray_png(out.width, out.height, &out.alpha).map_err(|e| image_failure(&dir, e))?;
            write_file(&dir.join("alpha.png"), &png)?;
        }
        write_file(&dir.join("camera.json"), &serde_json::to_vec_pretty(cam).expect("camera serializes"))?;
    }
    println!("wrote {} view(s) to {}", cameras.len(), a.output.display());
    Ok(())
}

#[derive(serde::Deserialize)]
#[serde(untagged)]
enum StrokeList {
    One(Vec<[f64; 2]>),
    Many(Vec<Vec<[f64; 2]>>),
}

#[derive(serde::Deserialize)]
struct StrokeView {
    camera: Camera,
    strokes: StrokeList,
}

#[derive(serde::Deserialize)]
struct StrokeFile {
    views: Vec<StrokeView>,
}

fn sketchpack(a: SketchpackArgs) -> Outcome {
    let mut views = Vec::new();
    let usage = |e: &dyn std::fmt::Display| Failure::Usage(e.to_string());
    if let Some(path) = &a.strokes {
        let bytes = std::fs::read(path).map_err(|e| io_failure(path.display(), e))?;
        let file: StrokeFile = serde_json::from_slice(&bytes).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        for (i, v) in file.views.into_iter().enumerate() {
            let strokes = match v.strokes {
                StrokeList::One(s) => vec![s],
                StrokeList::Many(s) => s,
            };
            let filled =
                fill_scribble(&ScribbleInput::Strokes(strokes), v.camera.width(), v.camera.height()).map_err(|e| usage(&e))?;
            if filled.open_curve {
                eprintln!("warning: view {i}: stroke does not enclose a region; using the stroke itself");
            }
            views.push(SketchView::new(v.camera, filled.mask).map_err(|e| usage(&e))?);
        }
    } else {
        if a.mask.is_empty() || a.mask.len() != a.camera.len() {
            return Err(Failure::Usage("give --strokes FILE, or matching --mask/--camera pairs".into()));
        }
        for (m, c) in a.mask.iter().zip(&a.camera) {
            let mask = imageio::read_mask_png(m).map_err(|e| image_failure(m, e))?;
            views.push(SketchView::new(read_camera(c)?, mask).map_err(|e| usage(&e))?);
        }
    }
    if views.is_empty() {
        return Err(Failure::Usage("no views given".into()));
    }
    let n = views.len();
    let set = SketchSet::new(views).with_distance_power(a.distance_power).map_err(|e| usage(&e))?;
    if !(a.beta > 0.0) {
        return Err(Failure::Usage(format!("--beta must be positive, got {}", a.beta)));
    }
    sketch::save_package(&a.output, &set, a.beta).map_err(|e| io_failure(a.output.display(), e))?;
    println!("wrote {n} view(s) to {}", a.output.display());
    Ok(())
}

fn edit_config(a: &EditArgs, package_beta: f64) -> Result<EditConfig, Failure> {
    let mut cfg = Map::new();
    // the package's beta is the default; a config file or flag overrides it
    cfg.insert("beta".into(), Value::from(package_beta));
    if let Some(p) = &a.config {
        cfg.extend(read_json_object(p)?);
    }
    let flags: [(&str, Option<Value>); 8] = [
        ("iterations", a.iters.map(Value::from)),
        ("seed", a.seed.map(Value::from)),
        ("lr", a.lr.map(Value::from)),
        ("beta", a.beta.map(Value::from)),
        ("lambda_pres", a.lambda_pres.map(Value::from)),
        ("lambda_sil", a.lambda_sil.map(Value::from)),
        ("lambda_sp", a.lambda_sp.map(Value::from)),
        ("warmup_iters", a.warmup_iters.map(Value::from)),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.insert(k.into(), v);
        }
    }
    for o in &a.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
        let v = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        cfg.insert(k.trim().to_string(), v);
    }
    let config: EditConfig =
        serde_json::from_value(Value::Object(cfg)).map_err(|e| Failure::Usage(format!("edit config: {e}")))?;
    config.validate()?;
    Ok(config)
}

fn guidance_config(a: &EditArgs) -> Result<GuidanceConfig, Failure> {
    let mut cfg = match &a.guidance {
        Some(p) => read_json_object(p)?,
        None => Map::new(),
    };
    if let Some(p) = &a.prompt {
        cfg.insert("prompt".into(), Value::from(p.clone()));
    }
    let g: GuidanceConfig =
        serde_json::from_value(Value::Object(cfg)).map_err(|e| Failure::Usage(format!("guidance config: {e}")))?;
    g.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(g)
}

fn edit_provider(a: &EditArgs, base: &RadianceField, sketches: &SketchSet) -> Result<Arc<dyn GuidanceProvider>, Failure> {
    let bbox = sketches
        .edit_bbox(base.bbox(), base.occupancy().resolution())
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let guidance_failure = |e: GuidanceError| {
        let msg = e.to_string();
        Failure::from_guidance(&e, msg)
    };
    match a.provider {
        ProviderKind::Echo => Ok(ProviderSpec::Echo.build(base, &bbox).map_err(guidance_failure)?),
        ProviderKind::External => {
            let endpoint = a.endpoint.clone().ok_or_else(|| Failure::Usage("--provider external needs --endpoint".into()))?;
            Ok(ProviderSpec::External { endpoint, timeout_secs: a.timeout_secs }.build(base, &bbox).map_err(guidance_failure)?)
        }
        ProviderKind::Analytic if a.target == "cube" => {
            let albedo = match &a.target_color {
                Some(c) => [c[0], c[1], c[2]],
                None => DEFAULT_CUBE_ALBEDO,
            };
            Ok(ProviderSpec::AnalyticCube { k: a.k, albedo, noise: 0.0 }.build(base, &bbox).map_err(guidance_failure)?)
        }
        ProviderKind::Analytic => {
            let target = load_field(Path::new(&a.target))?;
            let options = RenderOptions::for_field(base);
            let p = AnalyticTargetProvider::new(Target::Field { field: Arc::new(target), options }, a.k).map_err(guidance_failure)?;
            Ok(Arc::new(p))
        }
    }
}

fn edit(a: EditArgs) -> Outcome {
    let base = Arc::new(load_field(&a.base)?);
    let (sketches, package_beta) = load_sketches(&a.sketch)?;
    let config = edit_config(&a, package_beta)?;
    let guidance = guidance_config(&a)?;
    let provider = edit_provider(&a, &base, &sketches)?;
    let checkpoint_dir = a.checkpoint_dir.clone().unwrap_or_else(|| {
        a.output.parent().filter(|p| !p.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    });
    let every = config.checkpoint_every;
    let total = config.iterations;
    let mut job = EditJob::new(base, sketches, config, guidance, provider)?;
    let mut checkpoint_error = None;
    job.run(None, |j, r| {
        let done = r.iteration + 1;
        if done % 100 == 0 || done == total {
            log::info!("iteration {done}/{total}: total loss {:.4e}", r.l_total);
        }
        if every > 0 && done % every == 0 && checkpoint_error.is_none() {
            let path = checkpoint_dir.join(format!("checkpoint_{done:06}.skfd"));
            if let Err(e) = std::fs::create_dir_all(&checkpoint_dir).map_err(FieldError::from).and_then(|_| j.edited().save(&path)) {
                checkpoint_error = Some(io_failure(path.display(), e));
            }
        }
    })?;
    if let Some(e) = checkpoint_error {
        return Err(e);
    }
    let (field, history) = job.finish();
    save_field(&field, &a.output)?;
    let csv = a.loss_csv.clone().unwrap_or_else(|| {
        let mut p = a.output.clone().into_os_string();
        p.push(".loss.csv");
        PathBuf::from(p)
    });
    write_file(&csv, editor::loss_csv(&history).as_bytes())?;
    println!("wrote {} and {}", a.output.display(), csv.display());
    Ok(())
}

fn carve(a: CarveArgs) -> Outcome {
    let mut field = load_field(&a.field)?;
    let (sketches, _) = load_sketches(&a.sketch)?;
    let n = field.carve(&sketches).map_err(|e| Failure::Usage(e.to_string()))?;
    save_field(&field, &a.output)?;
    println!("carved {n} nodes; wrote {}", a.output.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Outcome {
    let base = load_field(&a.base)?;
    let edited = load_field(&a.edited)?;
    if base.resolution() != edited.resolution() {
        eprintln!("note: base and edited fields have different resolutions");
    }
    let (sketches, _) = load_sketches(&a.sketch)?;
    let report = evaluate(&base, &edited, &sketches, &RenderOptions::for_field(&base));
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    eprint!("{}", report.table());
    println!("{json}");
    if let Some(p) = &a.output {
        write_file(p, json.as_bytes())?;
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Outcome {
    let settings = sketchedit_studio::Settings {
        default_provider: match a.provider_endpoint {
            Some(endpoint) => ProviderSpec::External { endpoint, timeout_secs: 30.0 },
            None => ProviderSpec::Echo,
        },
        preview_every: a.preview_every.max(1),
        state_dir: a.state_dir,
        ..Default::default()
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| io_failure("runtime", e))?;
    rt.block_on(sketchedit_studio::serve(a.addr, settings, a.static_dir)).map_err(|e| io_failure(a.addr, e))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Render(a) => render(a),
        Command::Sketchpack(a) => sketchpack(a),
        Command::Edit(a) => edit(a),
        Command::Carve(a) => carve(a),
        Command::Eval(a) => eval(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
