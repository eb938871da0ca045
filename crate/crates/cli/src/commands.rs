use std::fs;
use std::path::{Path, PathBuf};

use componerf::checkpoint::{load_checkpoint, save_checkpoint};
use componerf::fields::{ColorSpace, CompositionMode};
use componerf::fixtures;
use componerf::guidance::{GuidanceError, NoisePolicy, RemoteClient};
use componerf::layout::{parse_layout, Layout};
use componerf::lifecycle::{decompose_nodes, recompose as recompose_scene, FINETUNE_STEPS};
use componerf::render::{orbit_cameras, psnr, Camera, ImageBuffer, View};
use componerf::scene::{SceneConfig, SceneModel};
use componerf::trainer::{train, TrainConfig, TrainError, TrainHooks, TrainReport};
use serde_json::json;

use crate::error::CliError;
use crate::guidance::{self, GuidanceSpec};
use crate::{ColorMode, ComposeArgs, DecomposeArgs, EvalArgs, Mode, Preset, RecomposeArgs, RenderArgs, SceneArgs, TrainArgs};

const CHECKPOINT_NAME: &str = "scene.ckpt";
const SNAPSHOT_DIR: &str = "snapshots";

fn load_layout(path: &Path) -> Result<Layout, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
    parse_layout(&text).map_err(|e| CliError::input(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::output(path, e))
}

fn scene_config(args: &SceneArgs) -> Result<SceneConfig, CliError> {
    let mode = match args.mode {
        Mode::Density => CompositionMode::DensityBased,
        Mode::Color => CompositionMode::ColorBased,
    };
    let mut cfg = match &args.scene_config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::input(path, e))?
        }
        None => {
            let mut cfg = match args.preset {
                Preset::Full => SceneConfig::default(),
                Preset::Desk => fixtures::surrogate_scene_config(mode),
            };
            cfg.local.color_space = match args.color {
                ColorMode::Latent => ColorSpace::Latent,
                ColorMode::Rgb => ColorSpace::Rgb,
            };
            cfg.composition.color_dim = cfg.local.color_dim();
            cfg.background = vec![0.0; cfg.local.color_dim()];
            cfg
        }
    };
    cfg.composition.mode = mode;
    cfg.validate().map_err(CliError::Config)?;
    Ok(cfg)
}

fn train_config(args: &TrainArgs, mut cfg: TrainConfig) -> Result<TrainConfig, CliError> {
    if let Some(s) = args.steps {
        cfg.steps = s;
    }
    cfg.resolution = args.resolution;
    if let Some(k) = args.snapshot_every {
        cfg.snapshot_every = k;
    }
    if let Some(lr) = args.lr {
        cfg.adam.lr = lr;
    }
    if let Some(a) = args.alpha_g {
        cfg.weights.alpha_g = a;
    }
    if let Some(a) = args.alpha_l {
        cfg.weights.alpha_l = a;
    }
    if let Some(b) = args.beta {
        cfg.weights.beta = b;
    }
    if args.deterministic {
        cfg.noise = NoisePolicy::Seeded;
    }
    cfg.validate().map_err(CliError::Config)?;
    Ok(cfg)
}

/// Writes `{stem}.png` for RGB images and `{stem}.latent` otherwise.
fn write_image(img: &ImageBuffer, dir: &Path, stem: &str) -> Result<PathBuf, CliError> {
    let path = if img.channels == 3 { dir.join(format!("{stem}.png")) } else { dir.join(format!("{stem}.latent")) };
    let written = if img.channels == 3 { img.write_png(&path) } else { img.write_latent(&path) };
    written.map_err(|e| CliError::output(&path, e))?;
    Ok(path)
}

fn write_weights(img: &ImageBuffer, dir: &Path, stem: &str) -> Result<(), CliError> {
    let path = dir.join(format!("{stem}.png"));
    img.write_weights_png(&path).map_err(|e| CliError::output(&path, e))
}

/// Global and per-node views from a fixed front camera every snapshot.
struct Snapshots {
    dir: PathBuf,
    camera: Camera,
}

impl TrainHooks<f32> for Snapshots {
    fn on_snapshot(&mut self, layout: &Layout, scene: &SceneModel<f32>) -> Result<(), String> {
        let mut views = vec![(View::Global, "global".to_string(), "scene".to_string())];
        views.extend(layout.boxes.iter().enumerate().map(|(j, b)| (View::Local(j), "local".to_string(), b.id.clone())));
        for (view, kind, id) in views {
            let img = scene.render(layout, &self.camera, view).map_err(|e| e.to_string())?;
            let stem = format!("step_{}_{kind}_{id}", scene.step);
            write_image(&img, &self.dir, &format!("{stem}_image")).map_err(|e| e.to_string())?;
            write_weights(&img, &self.dir, &format!("{stem}_weights_sum")).map_err(|e| e.to_string())?;
        }
        Ok(())
    }
}

/// Train and checkpoint; a guidance failure still leaves a checkpoint of
/// the last completed step behind.
fn run_training(
    layout: &Layout,
    scene: &mut SceneModel<f32>,
    spec: &GuidanceSpec,
    out: &Path,
) -> Result<(TrainReport, PathBuf), CliError> {
    let mut provider = guidance::provider(spec, layout, &scene.config)?;
    let snap_dir = out.join(SNAPSHOT_DIR);
    if scene.train.snapshot_every > 0 {
        create_dir(&snap_dir)?;
    }
    let res = scene.train.resolution;
    let mut hooks = Snapshots {
        dir: snap_dir,
        camera: Camera::orbit(fixtures::ORBIT_RADIUS, 0.0, fixtures::ORBIT_ELEVATION, 60.0, res, res),
    };
    let ckpt = out.join(CHECKPOINT_NAME);
    let steps = scene.train.steps;
    match train(layout, scene, provider.as_mut(), steps, &mut hooks) {
        Ok(report) => {
            save_checkpoint(scene, layout, &ckpt)?;
            Ok((report, ckpt))
        }
        Err(TrainError::GuidanceFailure { step, source }) => {
            save_checkpoint(scene, layout, &ckpt)?;
            Err(CliError::Interrupted { step, source, checkpoint: ckpt })
        }
        Err(e) => Err(e.into()),
    }
}

fn print_json(v: serde_json::Value) {
    println!("{v}");
}

pub fn compose(a: ComposeArgs) -> Result<(), CliError> {
    let mut layout = load_layout(&a.layout)?;
    if let Some(seed) = a.train.seed {
        layout.seed = seed;
    }
    let config = scene_config(&a.scene)?;
    let train_cfg = train_config(&a.train, TrainConfig::default())?;
    let spec = GuidanceSpec::required(a.train.guidance.as_deref())?;
    create_dir(&a.out)?;
    let mut scene = SceneModel::<f32>::new(&layout, config, train_cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let (report, ckpt) = run_training(&layout, &mut scene, &spec, &a.out)?;
    print_json(json!({
        "checkpoint": ckpt,
        "steps": report.steps_run,
        "skipped_non_finite": report.skipped_non_finite,
    }));
    Ok(())
}

fn decoder(flag: Option<&str>) -> Result<RemoteClient, CliError> {
    match GuidanceSpec::resolve(flag)? {
        Some(GuidanceSpec::Remote(url)) => guidance::remote(&url),
        _ => Err(CliError::DecodeUnavailable),
    }
}

fn view_for(layout: &Layout, node: Option<&str>) -> Result<View, CliError> {
    match node {
        None => Ok(View::Global),
        Some(id) => layout
            .index_of(id)
            .map(View::Local)
            .ok_or_else(|| CliError::Config(format!("unknown node `{id}`"))),
    }
}

pub fn render(a: RenderArgs) -> Result<(), CliError> {
    let (scene, layout) = load_checkpoint(&a.ckpt)?;
    let view = view_for(&layout, a.node.as_deref())?;
    let decode = if a.rgb && scene.channels() != 3 { Some(decoder(a.guidance.as_deref())?) } else { None };
    if a.frames == 0 {
        return Err(CliError::Config("--frames must be >= 1".into()));
    }
    let cams = if a.frames == 1 {
        vec![Camera::orbit(a.radius, a.azimuth, a.elevation, 60.0, a.resolution, a.resolution)]
    } else {
        orbit_cameras(a.frames, a.radius, a.elevation, a.resolution, a.resolution)
    };
    create_dir(&a.out)?;
    let mut files = Vec::new();
    for (i, cam) in cams.iter().enumerate() {
        let img = scene.render(&layout, cam, view).map_err(|e| CliError::Config(e.to_string()))?;
        let shown = match &decode {
            Some(client) => client.decode(&img)?,
            None => img.clone(),
        };
        files.push(write_image(&shown, &a.out, &format!("frame_{i:03}"))?);
        write_weights(&img, &a.out, &format!("frame_{i:03}_weights_sum"))?;
    }
    print_json(json!({ "frames": files }));
    Ok(())
}

pub fn decompose(a: DecomposeArgs) -> Result<(), CliError> {
    let (scene, layout) = load_checkpoint(&a.ckpt)?;
    if let Some(id) = a.node.iter().find(|id| layout.find(id).is_none()) {
        return Err(CliError::Config(format!("unknown node `{id}`")));
    }
    let only = (!a.node.is_empty()).then_some(a.node.as_slice());
    let caches = decompose_nodes(&scene, &layout, &a.out, only)?;
    print_json(json!({ "caches": caches }));
    Ok(())
}

pub fn recompose(a: RecomposeArgs) -> Result<(), CliError> {
    let mut layout = load_layout(&a.layout)?;
    if let Some(seed) = a.train.seed {
        layout.seed = seed;
    }
    if let Some(id) = a.node.iter().find(|id| layout.find(id).is_none()) {
        return Err(CliError::Config(format!("unknown node `{id}`")));
    }
    if !a.node.is_empty() {
        for b in layout.boxes.iter_mut().filter(|b| !a.node.contains(&b.id)) {
            b.cache_ref = None;
        }
    }
    let config = match &a.ckpt {
        Some(path) => load_checkpoint(path)?.0.config,
        None => scene_config(&a.scene)?,
    };
    let train_cfg = train_config(&a.train, TrainConfig::finetune())?;
    let base = a.layout.parent().unwrap_or(Path::new("."));
    let mut scene = recompose_scene(&layout, config, train_cfg, base)?;
    create_dir(&a.out)?;
    let spec = GuidanceSpec::resolve(a.train.guidance.as_deref())?;
    let (steps, ckpt) = match spec {
        Some(spec) => {
            let (report, ckpt) = run_training(&layout, &mut scene, &spec, &a.out)?;
            (report.steps_run, ckpt)
        }
        None if a.train.steps.is_some_and(|s| s > 0) => {
            return Err(CliError::Config("finetuning needs --guidance or COMPONERF_GUIDANCE_URL".into()));
        }
        None => {
            let ckpt = a.out.join(CHECKPOINT_NAME);
            save_checkpoint(&scene, &layout, &ckpt)?;
            (0, ckpt)
        }
    };
    print_json(json!({
        "checkpoint": ckpt,
        "steps": steps,
        "loaded": layout.boxes.iter().filter(|b| b.cache_ref.is_some()).map(|b| &b.id).collect::<Vec<_>>(),
        "default_finetune_steps": FINETUNE_STEPS,
    }));
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let (scene, layout) = load_checkpoint(&a.ckpt)?;
    let spec = GuidanceSpec::resolve(a.guidance.as_deref())?.ok_or_else(|| {
        CliError::Guidance(GuidanceError::MissingTarget(
            "eval needs --guidance mock:TARGET.json (PSNR) or remote:URL (CLIP)".into(),
        ))
    })?;
    if a.frames == 0 {
        return Err(CliError::Config("--frames must be >= 1".into()));
    }
    let cams = orbit_cameras(a.frames, fixtures::ORBIT_RADIUS, fixtures::ORBIT_ELEVATION, a.resolution, a.resolution);
    let mut frames = Vec::with_capacity(cams.len());
    for cam in &cams {
        frames.push(scene.render(&layout, cam, View::Global).map_err(|e| CliError::Config(e.to_string()))?);
    }
    let report = match spec {
        GuidanceSpec::Mock(path) => {
            let target = guidance::load_target(&path, &layout, scene.channels())?;
            let scores: Vec<f64> = cams
                .iter()
                .zip(&frames)
                .map(|(cam, img)| psnr(&img.pixels, &target.render_exact(cam, None, &scene.config.background).pixels))
                .collect();
            report("oracle", "psnr", &cams, &scores, None)
        }
        GuidanceSpec::Remote(url) => {
            let client = guidance::remote(&url)?;
            let rgb: Vec<ImageBuffer> = if scene.channels() == 3 {
                frames
            } else {
                frames.iter().map(|f| client.decode(f)).collect::<Result<_, _>>()?
            };
            let prompt = a.prompt.clone().unwrap_or_else(|| layout.global_prompt.clone());
            let r = client.clip_score(&prompt, &rgb)?;
            report("clip", "clip_score", &cams, &r.scores, Some(&prompt))
        }
    };
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    match &a.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(dir)?;
            }
            fs::write(path, format!("{text}\n")).map_err(|e| CliError::output(path, e))?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn report(mode: &str, metric: &str, cams: &[Camera], scores: &[f64], prompt: Option<&str>) -> serde_json::Value {
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    json!({
        "mode": mode,
        "metric": metric,
        "prompt": prompt,
        "views": cams.iter().zip(scores).map(|(c, s)| json!({
            "azimuth": c.azimuth_deg,
            "elevation": c.elevation_deg,
            "score": s,
        })).collect::<Vec<_>>(),
        "mean": mean,
    })
}
