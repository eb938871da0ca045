mod common;

use common::*;
use componerf::autodiff::{assemble_total_gradient, record_frame, GradError, LossWeights, Upstream};
use componerf::fields::CompositionMode;
use componerf::geometry::Sampling;
use componerf::render::Camera;

#[test]
fn fused_loss_gradient_matches_finite_differences_in_both_modes() {
    let layout = two_boxes();
    let cam = camera(6);
    let w = LossWeights { alpha_g: 1.0, alpha_l: 0.7, beta: 0.3 };
    for mode in [CompositionMode::DensityBased, CompositionMode::ColorBased] {
        let mut scene = scene::<f64>(&layout, tiny_config(mode));
        randomize(&mut scene, 17, 0.5);
        let n = 6 * 6 * 3;
        let targets: Vec<Vec<f64>> = (0..3).map(|i| target(n, i)).collect();
        let err = max_rel_error(&scene, &layout, &cam, &targets, &w);
        assert!(err < 1e-4, "{mode:?}: max relative error {err}");
    }
}

#[test]
fn zero_image_gradient_gives_zero_parameter_gradients() {
    let layout = two_boxes();
    let mut scene = scene::<f64>(&layout, tiny_config(CompositionMode::DensityBased));
    randomize(&mut scene, 2, 0.5);
    let (tape, views) = record_frame(&scene, &layout, &camera(8), &scene.config.render_options(Sampling::Midpoint));
    let g = tape.backward_from_image_grad(&scene, &vec![0.0; views.global.pixels.len()]).unwrap();
    assert_eq!(g.max_abs(), 0.0);
    assert_eq!(
        tape.backward_from_image_grad(&scene, &[0.0; 5]).unwrap_err(),
        GradError::ShapeMismatch { expected: views.global.pixels.len(), actual: 5 }
    );
}

#[test]
fn injected_residual_equals_scalar_photometric_backward() {
    let layout = one_box();
    let mut scene = scene::<f64>(&layout, tiny_config(CompositionMode::DensityBased));
    randomize(&mut scene, 4, 0.5);
    let cam = camera(8);
    let t = target(8 * 8 * 3, 9);
    let (tape, views) = record_frame(&scene, &layout, &cam, &scene.config.render_options(Sampling::Midpoint));
    let residual: Vec<f64> = views.global.pixels.iter().zip(&t).map(|(a, b)| a - b).collect();
    let injected = tape.backward_from_image_grad(&scene, &residual).unwrap();
    let w = LossWeights { alpha_g: 1.0, alpha_l: 0.0, beta: 0.0 };
    let direct = analytic(&scene, &layout, &cam, &[t.clone(), t.clone()], &w);
    assert_eq!(injected.tensors, direct.tensors);
}

#[test]
fn nodes_off_the_rays_receive_no_gradient() {
    let layout = two_boxes();
    let mut scene = scene::<f64>(&layout, tiny_config(CompositionMode::DensityBased));
    randomize(&mut scene, 8, 0.5);
    // straight down onto the part of box b outside box a
    let cam = Camera {
        position: componerf::math::Vec3::new(0.4, 0.05, 3.0),
        target: componerf::math::Vec3::new(0.4, 0.05, 0.0),
        fov_deg: 4.0,
        height: 6,
        width: 6,
        azimuth_deg: 0.0,
        elevation_deg: 0.0,
    };
    let opts = scene.config.render_options(Sampling::Midpoint);
    let (tape, views) = record_frame(&scene, &layout, &cam, &opts);
    assert!(views.locals[0].weight_sum.iter().all(|w| *w == 0.0), "box a must be missed");
    let ones = vec![1.0; views.global.pixels.len()];
    let g = tape
        .backward(&scene, &Upstream { global: Some(&ones), locals: vec![Some(&ones), Some(&ones)], sparsity: 1.0 })
        .unwrap();
    assert!(g.get("node/a").unwrap().iter().all(|v| *v == 0.0));
    assert!(g.get("node/b").unwrap().iter().any(|v| *v != 0.0));
}

#[test]
fn fused_upstream_equals_weighted_assembly() {
    let layout = two_boxes();
    let mut scene = scene::<f64>(&layout, tiny_config(CompositionMode::DensityBased));
    randomize(&mut scene, 12, 0.5);
    let (tape, views) = record_frame(&scene, &layout, &camera(6), &scene.config.render_options(Sampling::Midpoint));
    let n = views.global.pixels.len();
    let (gg, g0, g1) = (target(n, 1), target(n, 2), target(n, 3));
    let w = LossWeights { alpha_g: 2.0, alpha_l: 0.5, beta: 0.25 };
    let global = tape.backward(&scene, &Upstream { global: Some(&gg), locals: vec![], sparsity: 0.0 }).unwrap();
    let l0 = tape.backward(&scene, &Upstream { global: None, locals: vec![Some(&g0), None], sparsity: 0.0 }).unwrap();
    let l1 = tape.backward(&scene, &Upstream { global: None, locals: vec![None, Some(&g1)], sparsity: 0.0 }).unwrap();
    let sp = tape.backward(&scene, &Upstream { global: None, locals: vec![], sparsity: 1.0 }).unwrap();
    let assembled = assemble_total_gradient(&global, &[l0, l1], &sp, &w).unwrap();
    let scale = |v: &[f64], a: f64| v.iter().map(|x| a * x).collect::<Vec<_>>();
    let (sg, s0, s1) = (scale(&gg, 2.0), scale(&g0, 0.5), scale(&g1, 0.5));
    let fused = tape
        .backward(&scene, &Upstream { global: Some(&sg), locals: vec![Some(&s0), Some(&s1)], sparsity: 0.25 })
        .unwrap();
    for (a, b) in assembled.flatten().iter().zip(fused.flatten()) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
    }
    // α_l = β = 0 leaves only the scaled global term
    let only = assemble_total_gradient(&global, &[sp.clone()], &sp, &LossWeights { alpha_g: 3.0, alpha_l: 0.0, beta: 0.0 }).unwrap();
    let mut want = global.clone();
    want.scale(3.0);
    assert_eq!(only, want);
}
