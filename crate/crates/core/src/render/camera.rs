//! Pinhole cameras on the upper hemisphere around the scene origin.
//!
//! Conventions: +z is up, the camera looks at its target, pixel rays go
//! through pixel centers (`col + 0.5`, `row + 0.5`), and `fov` is the full
//! vertical field of view (images are square in practice).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Ray;
use crate::math::Vec3;

pub const TRAIN_RADIUS: (f64, f64) = (1.0, 1.5);
pub const TRAIN_FOV: (f64, f64) = (40.0, 70.0);
pub const TEST_FOV: f64 = 60.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: Vec3,
    pub target: Vec3,
    pub fov_deg: f64,
    pub height: u32,
    pub width: u32,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
}

struct Basis {
    right: Vec3,
    up: Vec3,
    forward: Vec3,
    focal: f64,
}

impl Camera {
    /// Camera at `radius` from the origin, looking at it.
    pub fn orbit(radius: f64, azimuth_deg: f64, elevation_deg: f64, fov_deg: f64, height: u32, width: u32) -> Self {
        let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
        let position = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * radius;
        Self { position, target: Vec3::ZERO, fov_deg, height, width, azimuth_deg, elevation_deg }
    }

    fn basis(&self) -> Basis {
        let forward = (self.target - self.position).normalized();
        let mut right = forward.cross(Vec3::new(0.0, 0.0, 1.0));
        if right.norm() < 1e-9 {
            // looking straight down or up
            right = forward.cross(Vec3::new(0.0, 1.0, 0.0));
        }
        let right = right.normalized();
        let up = right.cross(forward);
        let focal = 0.5 * self.height as f64 / (0.5 * self.fov_deg.to_radians()).tan();
        Basis { right, up, forward, focal }
    }

    pub fn ray(&self, row: u32, col: u32) -> Ray {
        let b = self.basis();
        self.ray_with(&b, row, col)
    }

    fn ray_with(&self, b: &Basis, row: u32, col: u32) -> Ray {
        let x = (col as f64 + 0.5 - 0.5 * self.width as f64) / b.focal;
        let y = -(row as f64 + 0.5 - 0.5 * self.height as f64) / b.focal;
        let d = b.right * x + b.up * y + b.forward;
        Ray::new(self.position, d, (row, col))
    }

    /// One ray per pixel in row-major order.
    pub fn rays(&self) -> Vec<Ray> {
        let b = self.basis();
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .map(|(r, c)| self.ray_with(&b, r, c))
            .collect()
    }

    /// Continuous image coordinates `(row, col)` of a world point in front of
    /// the camera, in the same convention as [`ray`](Self::ray).
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        let b = self.basis();
        let v = p - self.position;
        let z = v.dot(b.forward);
        if z <= 0.0 {
            return None;
        }
        let x = v.dot(b.right) / z;
        let y = v.dot(b.up) / z;
        Some((0.5 * self.height as f64 - y * b.focal, 0.5 * self.width as f64 + x * b.focal))
    }
}

/// Random camera on the upper hemisphere (area-uniform direction, radius
/// uniform in `[1.0, 1.5]`). Training draws the fov from `[40, 70]` degrees;
/// test cameras use 60.
pub fn sample_camera<G: Rng + ?Sized>(rng: &mut G, phase: Phase, height: u32, width: u32) -> Camera {
    let radius = rng.random_range(TRAIN_RADIUS.0..=TRAIN_RADIUS.1);
    let azimuth = rng.random_range(-180.0..180.0);
    let elevation = rng.random_range(0.0f64..1.0).asin().to_degrees();
    let fov = match phase {
        Phase::Train => rng.random_range(TRAIN_FOV.0..=TRAIN_FOV.1),
        Phase::Test => TEST_FOV,
    };
    Camera::orbit(radius, azimuth, elevation, fov, height, width)
}

/// `n` evenly spaced cameras on a circle at fixed radius and elevation.
pub fn orbit_cameras(n: usize, radius: f64, elevation_deg: f64, height: u32, width: u32) -> Vec<Camera> {
    (0..n)
        .map(|i| {
            let az = -180.0 + 360.0 * i as f64 / n as f64;
            Camera::orbit(radius, az, elevation_deg, TEST_FOV, height, width)
        })
        .collect()
}
