//! Planar angle and frame helpers shared by the simulator, preprocessing and optimizer.

use std::f64::consts::PI;

const TWO_PI: f64 = 2.0 * PI;

/// Maps an angle into (−π, π].
#[inline]
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TWO_PI);
    if r > PI {
        r - TWO_PI
    } else {
        r
    }
}

/// Signed minimal difference `a − b`, in (−π, π].
#[inline]
pub fn wrap_angle_diff(a: f64, b: f64) -> f64 {
    normalize_angle(a - b)
}

/// Rotates a planar vector counter-clockwise by `angle`.
#[inline]
pub fn rotate(angle: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// Undoes a heading-angle wrap so consecutive samples never jump by more than π.
pub fn unwrap_angles(angles: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(angles.len());
    let mut prev: Option<f64> = None;
    for &a in angles {
        let next = match prev {
            None => a,
            Some(p) => p + wrap_angle_diff(a, p),
        };
        out.push(next);
        prev = Some(next);
    }
    out
}
