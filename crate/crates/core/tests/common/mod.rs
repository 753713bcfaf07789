#![allow(dead_code)]

use lrtv4d_core::geometry::gaussian_taps;
use lrtv4d_core::{AcquisitionGeometry, MotionTrajectory, RigidTransform, Volume4D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_volume(dims: [usize; 4], rng: &mut ChaCha8Rng) -> Volume4D {
    let n = dims.iter().product();
    Volume4D::from_vec(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_motion(geom: &AcquisitionGeometry, n_t: usize, rot: f64, trans: f64, rng: &mut ChaCha8Rng) -> MotionTrajectory {
    let n_s = geom.lr_dims()[2];
    let transforms = (0..n_t * n_s)
        .map(|_| {
            RigidTransform::new(
                [0; 3].map(|_| rng.random_range(-rot..=rot)),
                [0; 3].map(|_| rng.random_range(-trans..=trans)),
            )
            .unwrap()
        })
        .collect();
    MotionTrajectory::from_transforms(n_t, n_s, transforms).unwrap()
}

/// Rz(yaw) Ry(pitch) Rx(roll), written out independently.
pub fn rotation(deg: [f64; 3]) -> [[f64; 3]; 3] {
    let [a, b, c] = deg.map(f64::to_radians);
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    let (sc, cc) = c.sin_cos();
    [
        [cc * cb, cc * sb * sa - sc * ca, cc * sb * ca + sc * sa],
        [sc * cb, sc * sb * sa + cc * ca, sc * sb * ca - cc * sa],
        [-sb, cb * sa, cb * ca],
    ]
}

/// Dense matrix of the operator for timepoint `n`, built one entry at a time
/// from the sampling definition: each LR voxel integrates the Gaussian slice
/// profile over HR lattice points, each read by trilinear interpolation at
/// its motion-mapped position.
pub fn dense_operator(geom: &AcquisitionGeometry, motion: &MotionTrajectory, n: usize) -> Vec<Vec<f64>> {
    let hr = geom.hr_dims;
    let lr = geom.lr_dims();
    let s = geom.hr_spacing();
    let mid = hr.map(|d| (d as f64 - 1.0) / 2.0);
    let taps: Vec<Vec<f64>> = (0..3).map(|a| gaussian_taps(geom.blur.fwhm_mm[a], s[a]).unwrap()).collect();
    let n_hr: usize = hr.iter().product();
    let mut rows = Vec::new();
    for h in 0..lr[2] {
        let t = motion.get(n, h);
        let r = rotation(t.rotation_deg);
        for k in 0..lr[1] {
            for b in 0..lr[0] {
                let mut row = vec![0.0; n_hr];
                let c = [0, 1, 2].map(|a| {
                    let d = geom.downsample[a] as f64;
                    d * [b, k, h][a] as f64 + (d - 1.0) / 2.0
                });
                let rad = taps.iter().map(|t| (t.len() as i64 - 1) / 2).collect::<Vec<_>>();
                for (i, wx) in taps[0].iter().enumerate() {
                    for (j, wy) in taps[1].iter().enumerate() {
                        for (l, wz) in taps[2].iter().enumerate() {
                            let u = [
                                c[0] + (i as i64 - rad[0]) as f64,
                                c[1] + (j as i64 - rad[1]) as f64,
                                c[2] + (l as i64 - rad[2]) as f64,
                            ];
                            let p = [0, 1, 2].map(|a| s[a] * (u[a] - mid[a]));
                            let q = [0, 1, 2].map(|a| {
                                r[a][0] * p[0] + r[a][1] * p[1] + r[a][2] * p[2] + t.translation_mm[a]
                            });
                            let v = [0, 1, 2].map(|a| q[a] / s[a] + mid[a]);
                            if (0..3).any(|a| v[a] < -0.5 || v[a] > hr[a] as f64 - 0.5) {
                                continue;
                            }
                            let w = wx * wy * wz;
                            add_trilinear(&mut row, v, hr, w);
                        }
                    }
                }
                rows.push(row);
            }
        }
    }
    rows
}

pub fn add_trilinear(row: &mut [f64], v: [f64; 3], dims: [usize; 3], w: f64) {
    let axis = |x: f64, n: usize| -> [(usize, f64); 2] {
        if n == 1 {
            return [(0, 1.0), (0, 0.0)];
        }
        let c = x.clamp(0.0, (n - 1) as f64);
        let i0 = (c.floor() as usize).min(n - 2);
        let f = c - i0 as f64;
        [(i0, 1.0 - f), (i0 + 1, f)]
    };
    let ax = axis(v[0], dims[0]);
    let ay = axis(v[1], dims[1]);
    let az = axis(v[2], dims[2]);
    for (x, fx) in ax {
        for (y, fy) in ay {
            for (z, fz) in az {
                row[x + dims[0] * (y + dims[1] * z)] += w * fx * fy * fz;
            }
        }
    }
}
