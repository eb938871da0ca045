#![allow(dead_code)]

use componerf::autodiff::{binary_entropy, record_frame, Gradients, LossWeights, Upstream};
use componerf::fields::{ColorSpace, CompositionConfig, CompositionMode, HashGridConfig, LocalFieldConfig};
use componerf::geometry::Sampling;
use componerf::layout::{Box3, Layout};
use componerf::math::{Real, Vec3};
use componerf::render::Camera;
use componerf::scene::{SceneConfig, SceneModel};
use componerf::trainer::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A few hundred parameters per node: small enough for finite differences.
pub fn tiny_config(mode: CompositionMode) -> SceneConfig {
    SceneConfig {
        local: LocalFieldConfig {
            grid: HashGridConfig { levels: 2, features: 2, coarsest: 2, finest: 4, log2_table_size: 6 },
            hidden: 8,
            hidden_layers: 1,
            color_space: ColorSpace::Rgb,
            ..LocalFieldConfig::default()
        },
        composition: CompositionConfig {
            mode,
            depth: 4,
            width: 4,
            h_dim: 3,
            grid: HashGridConfig { levels: 1, features: 2, coarsest: 2, finest: 2, log2_table_size: 4 },
            color_dim: 3,
            ..CompositionConfig::default()
        },
        n_per_box: 8,
        final_delta: 1e10,
        background: vec![0.2, 0.1, 0.3],
    }
}

pub fn one_box() -> Layout {
    Layout {
        global_prompt: "a thing".into(),
        seed: 3,
        boxes: vec![Box3::new("thing", Vec3::ZERO, Vec3::splat(0.5), "a thing")],
    }
}

pub fn two_boxes() -> Layout {
    Layout {
        global_prompt: "two things".into(),
        seed: 5,
        boxes: vec![
            Box3::new("a", Vec3::new(-0.2, 0.0, 0.0), Vec3::new(0.35, 0.3, 0.3), "thing a"),
            Box3::new("b", Vec3::new(0.25, 0.05, 0.0), Vec3::new(0.3, 0.3, 0.35), "thing b"),
        ],
    }
}

/// Replace every parameter with a uniform draw so no calibrator is at its
/// identity start and every parameter has a non-trivial gradient.
pub fn randomize<R: Real>(scene: &mut SceneModel<R>, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in scene.tensors_mut() {
        for v in t.iter_mut() {
            *v = R::of(rng.random_range(-scale..scale));
        }
    }
}

pub fn scene<R: Real>(layout: &Layout, cfg: SceneConfig) -> SceneModel<R> {
    SceneModel::new(layout, cfg, TrainConfig::default()).unwrap()
}

pub fn camera(res: u32) -> Camera {
    Camera::orbit(1.6, 30.0, 20.0, 50.0, res, res)
}

pub fn target(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(0.0..1.0)).collect()
}

/// `½α_g‖G−T‖² + ½α_l Σ_j ‖L_j−T_j‖² + β·mean H(w_local)`.
pub fn total_loss(scene: &SceneModel<f64>, layout: &Layout, cam: &Camera, targets: &[Vec<f64>], w: &LossWeights) -> f64 {
    let opts = scene.config.render_options(Sampling::Midpoint);
    let (_, views) = record_frame(scene, layout, cam, &opts);
    let sq = |a: &[f64], b: &[f64]| 0.5 * a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut l = w.alpha_g * sq(&views.global.pixels, &targets[0]);
    for (j, v) in views.locals.iter().enumerate() {
        l += w.alpha_l * sq(&v.pixels, &targets[j + 1]);
    }
    l + w.beta * views.local_weights.iter().map(|x| binary_entropy(*x)).sum::<f64>() / views.local_weights.len() as f64
}

pub fn analytic(scene: &SceneModel<f64>, layout: &Layout, cam: &Camera, targets: &[Vec<f64>], w: &LossWeights) -> Gradients<f64> {
    let opts = scene.config.render_options(Sampling::Midpoint);
    let (tape, views) = record_frame(scene, layout, cam, &opts);
    let res = |img: &[f64], t: &[f64], a: f64| -> Vec<f64> { img.iter().zip(t).map(|(x, y)| a * (x - y)).collect() };
    let g = res(&views.global.pixels, &targets[0], w.alpha_g);
    let locals: Vec<Vec<f64>> =
        views.locals.iter().enumerate().map(|(j, v)| res(&v.pixels, &targets[j + 1], w.alpha_l)).collect();
    tape.backward(
        scene,
        &Upstream { global: Some(&g), locals: locals.iter().map(|l| Some(l.as_slice())).collect(), sparsity: w.beta },
    )
    .unwrap()
}

/// Worst relative error of the analytic gradient against a fourth-order
/// central stencil. Each parameter is probed at two steps and the better
/// match counts: a stencil straddling a ReLU kink only misleads the larger
/// step, roundoff only the smaller one, while a wrong gradient fails both.
pub fn max_rel_error(scene: &SceneModel<f64>, layout: &Layout, cam: &Camera, targets: &[Vec<f64>], w: &LossWeights) -> f64 {
    let grads = analytic(scene, layout, cam, targets, w).flatten();
    let mut worst: f64 = 0.0;
    let mut probe = scene.clone();
    let mut i = 0;
    for t in 0..scene.tensors().len() {
        for k in 0..scene.tensors()[t].len() {
            let orig = scene.tensors()[t][k];
            let mut at = |d: f64| {
                probe.tensors_mut()[t][k] = orig + d;
                total_loss(&probe, layout, cam, targets, w)
            };
            let a = grads[i];
            let mut best = f64::INFINITY;
            for h in [1e-4, 1e-5] {
                let fd = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
                best = best.min((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
            }
            probe.tensors_mut()[t][k] = orig;
            worst = worst.max(best);
            i += 1;
        }
    }
    worst
}
