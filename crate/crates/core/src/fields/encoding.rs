//! Fixed spherical-harmonic encoding of view directions (degree 4, 16 terms).

use crate::math::{Real, Vec3};

pub const SH_DIM: usize = 16;

pub fn encode_direction<R: Real>(d: Vec3, out: &mut [R]) {
    debug_assert_eq!(out.len(), SH_DIM);
    let (x, y, z) = (d.x, d.y, d.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let v = [
        0.282_094_791_773_878_14,
        -0.488_602_511_902_919_9 * y,
        0.488_602_511_902_919_9 * z,
        -0.488_602_511_902_919_9 * x,
        1.092_548_430_592_079_2 * x * y,
        -1.092_548_430_592_079_2 * y * z,
        0.946_174_695_757_56 * zz - 0.315_391_565_252_52,
        -1.092_548_430_592_079_2 * x * z,
        0.546_274_215_296_039_6 * (xx - yy),
        0.590_043_589_926_643_5 * y * (-3.0 * xx + yy),
        2.890_611_442_640_553_8 * x * y * z,
        0.457_045_799_464_465_7 * y * (1.0 - 5.0 * zz),
        0.373_176_332_590_115_4 * z * (5.0 * zz - 3.0),
        0.457_045_799_464_465_7 * x * (1.0 - 5.0 * zz),
        1.445_305_721_320_277 * z * (xx - yy),
        0.590_043_589_926_643_5 * x * (-xx + 3.0 * yy),
    ];
    for (o, v) in out.iter_mut().zip(v) {
        *o = R::of(v);
    }
}
