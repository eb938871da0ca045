//! Train the two-sphere surrogate with mock guidance and report orbit PSNR.
//!
//! cargo run --release -p componerf-core --example surrogate -- [steps]

use std::time::Instant;

use componerf::fields::CompositionMode;
use componerf::fixtures;
use componerf::guidance::MockGuidance;
use componerf::render::{psnr, View};
use componerf::scene::SceneModel;
use componerf::trainer::{train, StepStats, TrainHooks};

struct Log(Instant);

impl<R> TrainHooks<R> for Log {
    fn on_step(&mut self, s: &StepStats) {
        if (s.step + 1) % 100 == 0 {
            println!("step {:5}  global {:9.4}  local {:9.4}  sparsity {:.4}  {:6.1}s", s.step + 1, s.global, s.local, s.sparsity, self.0.elapsed().as_secs_f64());
        }
    }
}

fn main() {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let layout = fixtures::two_sphere_layout();
    let target = fixtures::two_sphere_target();
    let cfg = fixtures::surrogate_scene_config(CompositionMode::DensityBased);
    let bg = cfg.background.clone();
    let mut scene = SceneModel::<f32>::new(&layout, cfg, fixtures::surrogate_train_config(steps)).unwrap();
    println!("{} parameters", scene.param_count());
    let mut guidance = MockGuidance::new(target.clone(), bg.clone());
    let t0 = Instant::now();
    let report = train(&layout, &mut scene, &mut guidance, steps, &mut Log(t0)).unwrap();
    println!("trained {} steps ({} skipped) in {:.1}s", report.steps_run, report.skipped_non_finite, t0.elapsed().as_secs_f64());
    let mut total = 0.0;
    let cams = fixtures::orbit(8, 64);
    for cam in &cams {
        let img = scene.render(&layout, cam, View::Global).unwrap();
        let want = target.render_exact(cam, None, &bg);
        let p = psnr(&img.pixels, &want.pixels);
        println!("az {:7.1}  psnr {p:.2}", cam.azimuth_deg);
        total += p;
    }
    println!("mean psnr {:.2}", total / cams.len() as f64);
}
