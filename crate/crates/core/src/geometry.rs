//! Slice acquisition model: per-slice rigid motion, separable Gaussian
//! slice profile, and integer decimation, packaged as a linear operator with
//! an exact adjoint.
//!
//! Both grids are centered on the physical origin. High-resolution voxel
//! `(i, j, l)` sits at `hr_spacing * ((i, j, l) - (hr_dims - 1) / 2)`; a
//! low-resolution voxel `(b, k, h)` covers `downsample` high-resolution voxels
//! per axis and sits at the center of that block.
//!
//! The observation of volume `n`, slice `h` at scanner position `p` pulls the
//! object intensity at `M_{n,h}(p) = R (p - c) + c + t`, with `c` the volume
//! center (the origin) and `R = Rz(yaw) Ry(pitch) Rx(roll)`.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, ensure_dims, Error, Result};
use crate::tensor4d::Volume4D;

/// Standard deviation of a Gaussian with unit full width at half maximum.
pub const FWHM_TO_SIGMA: f64 = 1.0 / 2.354_820_045_030_949_4;
/// Gaussian taps are kept out to this many standard deviations.
const KERNEL_RADIUS_SIGMAS: f64 = 4.0;

/// Rigid pose: rotation angles in degrees and translation in millimetres.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidTransform {
    /// `[roll, pitch, yaw]`, rotations about x, y and z.
    pub rotation_deg: [f64; 3],
    pub translation_mm: [f64; 3],
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn new(rotation_deg: [f64; 3], translation_mm: [f64; 3]) -> Result<Self> {
        let t = Self {
            rotation_deg,
            translation_mm,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Self {
            rotation_deg: [0.0; 3],
            translation_mm: t,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_arg!(
            self.rotation_deg
                .iter()
                .chain(&self.translation_mm)
                .all(|v| v.is_finite()),
            "rigid transform parameters must be finite: {self:?}"
        );
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.rotation_deg == [0.0; 3] && self.translation_mm == [0.0; 3]
    }

    /// `Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let [roll, pitch, yaw] = self.rotation_deg.map(f64::to_radians);
        let (sx, cx) = roll.sin_cos();
        let (sy, cy) = pitch.sin_cos();
        let (sz, cz) = yaw.sin_cos();
        let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx);
        let ry = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
        let rz = Matrix3::new(cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0);
        rz * ry * rx
    }

    /// 4x4 homogeneous matrix for rotation about `center` followed by translation.
    pub fn homogeneous(&self, center: [f64; 3]) -> [[f64; 4]; 4] {
        let r = self.rotation_matrix();
        let c = Vector3::from(center);
        let off = c - r * c + Vector3::from(self.translation_mm);
        let mut out = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = r[(i, j)];
            }
            out[i][3] = off[i];
        }
        out[3][3] = 1.0;
        out
    }
}

/// Map `p` through `t`, rotating about `center`.
pub fn transform_point(p: [f64; 3], t: &RigidTransform, center: [f64; 3]) -> [f64; 3] {
    let r = t.rotation_matrix();
    let c = Vector3::from(center);
    let q = r * (Vector3::from(p) - c) + c + Vector3::from(t.translation_mm);
    [q[0], q[1], q[2]]
}

/// One rigid transform per (timepoint, slice), timepoint-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionTrajectory {
    n_timepoints: usize,
    n_slices: usize,
    transforms: Vec<RigidTransform>,
}

const MOTION_HEADER: &str = "n,h,roll_deg,pitch_deg,yaw_deg,tx_mm,ty_mm,tz_mm";

impl MotionTrajectory {
    pub fn identity(n_timepoints: usize, n_slices: usize) -> Self {
        Self {
            n_timepoints,
            n_slices,
            transforms: vec![RigidTransform::identity(); n_timepoints * n_slices],
        }
    }

    pub fn from_transforms(
        n_timepoints: usize,
        n_slices: usize,
        transforms: Vec<RigidTransform>,
    ) -> Result<Self> {
        ensure_dims!(
            transforms.len() == n_timepoints * n_slices,
            "expected {} transforms, got {}",
            n_timepoints * n_slices,
            transforms.len()
        );
        for t in &transforms {
            t.validate()?;
        }
        Ok(Self {
            n_timepoints,
            n_slices,
            transforms,
        })
    }

    pub fn n_timepoints(&self) -> usize {
        self.n_timepoints
    }

    pub fn n_slices(&self) -> usize {
        self.n_slices
    }

    pub fn get(&self, n: usize, h: usize) -> &RigidTransform {
        &self.transforms[n * self.n_slices + h]
    }

    pub fn set(&mut self, n: usize, h: usize, t: RigidTransform) {
        self.transforms[n * self.n_slices + h] = t;
    }

    pub fn transforms(&self) -> &[RigidTransform] {
        &self.transforms
    }

    /// Check that the trajectory covers `n_timepoints` volumes of `geom`.
    pub fn check_against(&self, geom: &AcquisitionGeometry, n_timepoints: usize) -> Result<()> {
        let h = geom.lr_dims()[2];
        ensure_dims!(
            self.n_timepoints == n_timepoints && self.n_slices == h,
            "motion covers {}x{} (timepoints x slices), expected {}x{}",
            self.n_timepoints,
            self.n_slices,
            n_timepoints,
            h
        );
        Ok(())
    }

    /// CSV with header `n,h,roll_deg,pitch_deg,yaw_deg,tx_mm,ty_mm,tz_mm`;
    /// indices are zero-based.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(MOTION_HEADER);
        s.push('\n');
        for n in 0..self.n_timepoints {
            for h in 0..self.n_slices {
                let t = self.get(n, h);
                let [r, p, y] = t.rotation_deg;
                let [x, yy, z] = t.translation_mm;
                // {:?} prints the shortest round-tripping representation
                let _ = writeln!(s, "{n},{h},{r:?},{p:?},{y:?},{x:?},{yy:?},{z:?}");
            }
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Argument("motion CSV is empty".into()))?;
        ensure_arg!(
            header.trim() == MOTION_HEADER,
            "motion CSV header must be `{MOTION_HEADER}`, got `{header}`"
        );
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            ensure_arg!(
                fields.len() == 8,
                "motion CSV row {} has {} fields, expected 8",
                lineno + 2,
                fields.len()
            );
            let parse_idx = |s: &str| {
                s.parse::<usize>()
                    .map_err(|e| Error::Argument(format!("row {}: bad index `{s}`: {e}", lineno + 2)))
            };
            let mut vals = [0.0; 6];
            for (v, s) in vals.iter_mut().zip(&fields[2..]) {
                *v = s.parse::<f64>().map_err(|e| {
                    Error::Argument(format!("row {}: bad number `{s}`: {e}", lineno + 2))
                })?;
            }
            let t = RigidTransform::new(
                [vals[0], vals[1], vals[2]],
                [vals[3], vals[4], vals[5]],
            )?;
            rows.push((parse_idx(fields[0])?, parse_idx(fields[1])?, t));
        }
        ensure_arg!(!rows.is_empty(), "motion CSV has no rows");
        let n_t = rows.iter().map(|r| r.0).max().unwrap_or(0) + 1;
        let n_s = rows.iter().map(|r| r.1).max().unwrap_or(0) + 1;
        ensure_arg!(
            rows.len() == n_t * n_s,
            "motion CSV must contain exactly one row per (n, h): {} rows for {n_t}x{n_s}",
            rows.len()
        );
        let mut seen = vec![false; n_t * n_s];
        let mut out = Self::identity(n_t, n_s);
        for (n, h, t) in rows {
            let i = n * n_s + h;
            ensure_arg!(!seen[i], "duplicate motion row for n={n}, h={h}");
            seen[i] = true;
            out.transforms[i] = t;
        }
        Ok(out)
    }
}

/// Gaussian slice profile, full width at half maximum per axis in mm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlurSpec {
    pub fwhm_mm: [f64; 3],
}

impl BlurSpec {
    pub fn none() -> Self {
        Self { fwhm_mm: [0.0; 3] }
    }

    /// In-plane FWHM of 1.2 voxels, through-plane FWHM of one slice thickness.
    pub fn slice_profile(in_plane_spacing: f64, slice_thickness: f64) -> Self {
        Self {
            fwhm_mm: [1.2 * in_plane_spacing, 1.2 * in_plane_spacing, slice_thickness],
        }
    }
}

/// Grids and degradation operators of one acquisition.
#[derive(Clone, Debug, PartialEq)]
pub struct AcquisitionGeometry {
    pub hr_dims: [usize; 3],
    pub downsample: [usize; 3],
    /// Low-resolution in-plane voxel size.
    pub in_plane_spacing: f64,
    /// Low-resolution slice thickness.
    pub slice_thickness: f64,
    pub blur: BlurSpec,
    /// Acquisition order of the low-resolution slices (zero-based).
    pub interleave: Vec<usize>,
}

impl AcquisitionGeometry {
    /// Geometry with the default slice profile and interleaved order.
    pub fn new(
        hr_dims: [usize; 3],
        downsample: [usize; 3],
        in_plane_spacing: f64,
        slice_thickness: f64,
    ) -> Result<Self> {
        ensure_arg!(
            downsample.iter().all(|&d| d >= 1),
            "downsample factors must be >= 1, got {downsample:?}"
        );
        let h = hr_dims[2] / downsample[2];
        let geom = Self {
            hr_dims,
            downsample,
            in_plane_spacing,
            slice_thickness,
            blur: BlurSpec::slice_profile(in_plane_spacing, slice_thickness),
            interleave: interleaved_order(h),
        };
        geom.validate()?;
        Ok(geom)
    }

    /// Unit spacing, no blur, no decimation, sequential slices: the operator
    /// reduces to motion resampling alone.
    pub fn identity(dims: [usize; 3]) -> Self {
        Self {
            hr_dims: dims,
            downsample: [1, 1, 1],
            in_plane_spacing: 1.0,
            slice_thickness: 1.0,
            blur: BlurSpec::none(),
            interleave: (0..dims[2]).collect(),
        }
    }

    /// 48x48x12 reconstruction grid from 6 slices of 3 mm.
    pub fn desk() -> Self {
        Self::new([48, 48, 12], [1, 1, 2], 1.74, 3.0).expect("valid built-in geometry")
    }

    /// 144x144 matrix, 18 slices of 3 mm, reconstructed at 1.5 mm through-plane.
    pub fn clinical() -> Self {
        Self::new([144, 144, 36], [1, 1, 2], 1.74, 3.0).expect("valid built-in geometry")
    }

    pub fn with_blur(mut self, blur: BlurSpec) -> Result<Self> {
        self.blur = blur;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_arg!(
            self.hr_dims.iter().all(|&d| d >= 1),
            "hr_dims must be >= 1, got {:?}",
            self.hr_dims
        );
        ensure_arg!(
            self.downsample.iter().all(|&d| d >= 1),
            "downsample factors must be >= 1, got {:?}",
            self.downsample
        );
        for axis in 0..3 {
            ensure_arg!(
                self.hr_dims[axis] % self.downsample[axis] == 0,
                "hr_dims {:?} not divisible by downsample factors {:?}",
                self.hr_dims,
                self.downsample
            );
        }
        ensure_arg!(
            self.in_plane_spacing > 0.0 && self.slice_thickness > 0.0,
            "spacings must be positive"
        );
        ensure_arg!(
            self.blur.fwhm_mm.iter().all(|f| f.is_finite() && *f >= 0.0),
            "blur FWHM must be >= 0, got {:?}",
            self.blur.fwhm_mm
        );
        let h = self.lr_dims()[2];
        let mut seen = vec![false; h];
        ensure_arg!(
            self.interleave.len() == h,
            "interleave must list {h} slices, got {}",
            self.interleave.len()
        );
        for &s in &self.interleave {
            ensure_arg!(s < h && !seen[s], "interleave is not a permutation of 0..{h}");
            seen[s] = true;
        }
        Ok(())
    }

    pub fn lr_dims(&self) -> [usize; 3] {
        [
            self.hr_dims[0] / self.downsample[0],
            self.hr_dims[1] / self.downsample[1],
            self.hr_dims[2] / self.downsample[2],
        ]
    }

    pub fn lr_spacing(&self) -> [f64; 3] {
        [self.in_plane_spacing, self.in_plane_spacing, self.slice_thickness]
    }

    pub fn hr_spacing(&self) -> [f64; 3] {
        let lr = self.lr_spacing();
        [
            lr[0] / self.downsample[0] as f64,
            lr[1] / self.downsample[1] as f64,
            lr[2] / self.downsample[2] as f64,
        ]
    }

    /// Physical rotation center shared by both grids.
    pub fn center(&self) -> [f64; 3] {
        [0.0; 3]
    }

    fn hr_mid(&self) -> [f64; 3] {
        self.hr_dims.map(|d| (d as f64 - 1.0) / 2.0)
    }

    /// Physical position of a (fractional) high-resolution index.
    pub fn hr_to_physical(&self, idx: [f64; 3]) -> [f64; 3] {
        let s = self.hr_spacing();
        let m = self.hr_mid();
        [0, 1, 2].map(|a| s[a] * (idx[a] - m[a]))
    }

    /// Fractional high-resolution index of a physical position.
    pub fn physical_to_hr(&self, p: [f64; 3]) -> [f64; 3] {
        let s = self.hr_spacing();
        let m = self.hr_mid();
        [0, 1, 2].map(|a| p[a] / s[a] + m[a])
    }

    /// High-resolution lattice index of the center of LR voxel `(b, k, h)`.
    pub fn lr_center_hr_index(&self, lr: [usize; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| {
            let d = self.downsample[a];
            (d * lr[a]) as f64 + (d as f64 - 1.0) / 2.0
        })
    }

    pub fn lr_center_physical(&self, lr: [usize; 3]) -> [f64; 3] {
        self.hr_to_physical(self.lr_center_hr_index(lr))
    }

    pub fn hr_origin(&self) -> [f64; 3] {
        self.hr_to_physical([0.0; 3])
    }

    pub fn lr_origin(&self) -> [f64; 3] {
        self.lr_center_physical([0, 0, 0])
    }

    /// Zero HR series with this geometry's spacing and origin.
    pub fn hr_volume(&self, n_timepoints: usize, tr: f64) -> Result<Volume4D> {
        let [a, b, c] = self.hr_dims;
        let s = self.hr_spacing();
        Volume4D::zeros([a, b, c, n_timepoints])?
            .with_spacing([s[0], s[1], s[2], tr])?
            .with_origin(self.hr_origin())
    }

    /// Zero LR series with this geometry's spacing and origin.
    pub fn lr_volume(&self, n_timepoints: usize, tr: f64) -> Result<Volume4D> {
        let [a, b, c] = self.lr_dims();
        let s = self.lr_spacing();
        Volume4D::zeros([a, b, c, n_timepoints])?
            .with_spacing([s[0], s[1], s[2], tr])?
            .with_origin(self.lr_origin())
    }

    /// Position of each slice within its volume's acquisition sequence.
    pub fn acquisition_rank(&self) -> Vec<usize> {
        let mut rank = vec![0; self.interleave.len()];
        for (pos, &s) in self.interleave.iter().enumerate() {
            rank[s] = pos;
        }
        rank
    }
}

/// Even slices first, then odd: `0, 2, 4, ..., 1, 3, 5, ...`.
pub fn interleaved_order(n_slices: usize) -> Vec<usize> {
    (0..n_slices).step_by(2).chain((1..n_slices).step_by(2)).collect()
}

/// Normalized, symmetric 1D Gaussian taps sampled at `spacing`. A zero FWHM
/// yields the single tap `[1.0]`.
pub fn gaussian_taps(fwhm_mm: f64, spacing_mm: f64) -> Result<Vec<f64>> {
    ensure_arg!(
        fwhm_mm.is_finite() && fwhm_mm >= 0.0,
        "FWHM must be >= 0, got {fwhm_mm}"
    );
    ensure_arg!(spacing_mm > 0.0, "spacing must be > 0, got {spacing_mm}");
    if fwhm_mm == 0.0 {
        return Ok(vec![1.0]);
    }
    let sigma = fwhm_mm * FWHM_TO_SIGMA / spacing_mm;
    let radius = (KERNEL_RADIUS_SIGMAS * sigma).ceil() as i64;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    Ok(taps)
}

/// Separable 3D kernel given as one odd-length tap vector per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparableKernel {
    pub taps: [Vec<f64>; 3],
}

impl SeparableKernel {
    pub fn radius(&self, axis: usize) -> usize {
        (self.taps[axis].len() - 1) / 2
    }

    pub fn is_identity(&self) -> bool {
        self.taps.iter().all(|t| t.len() == 1)
    }

    pub fn weight(&self, offset: [isize; 3]) -> f64 {
        (0..3)
            .map(|a| {
                let i = offset[a] + self.radius(a) as isize;
                if i < 0 || i as usize >= self.taps[a].len() {
                    0.0
                } else {
                    self.taps[a][i as usize]
                }
            })
            .product()
    }
}

/// Slice-profile kernel sampled on the high-resolution lattice.
pub fn build_blur_kernel(geom: &AcquisitionGeometry) -> Result<SeparableKernel> {
    let s = geom.hr_spacing();
    Ok(SeparableKernel {
        taps: [
            gaussian_taps(geom.blur.fwhm_mm[0], s[0])?,
            gaussian_taps(geom.blur.fwhm_mm[1], s[1])?,
            gaussian_taps(geom.blur.fwhm_mm[2], s[2])?,
        ],
    })
}

/// Linear interpolation stencil along one axis: `(i0, i1, frac)`. Positions
/// within half a voxel of the edge clamp to it; beyond that the sample lies
/// outside the field of view.
#[inline]
fn axis_stencil(v: f64, n: usize) -> Option<(usize, usize, f64)> {
    let hi = n as f64 - 0.5;
    if !(v >= -0.5 && v <= hi) {
        return None;
    }
    if n == 1 {
        return Some((0, 0, 0.0));
    }
    let c = v.clamp(0.0, (n - 1) as f64);
    let i0 = (c.floor() as usize).min(n - 2);
    Some((i0, i0 + 1, c - i0 as f64))
}

/// Trilinear stencil: 8 flat indices and weights, or `None` outside the FOV.
#[inline]
pub(crate) fn trilinear_stencil(v: [f64; 3], dims: [usize; 3]) -> Option<([usize; 8], [f64; 8])> {
    let (x0, x1, fx) = axis_stencil(v[0], dims[0])?;
    let (y0, y1, fy) = axis_stencil(v[1], dims[1])?;
    let (z0, z1, fz) = axis_stencil(v[2], dims[2])?;
    let sx = dims[0];
    let sxy = dims[0] * dims[1];
    let idx = [
        x0 + sx * y0 + sxy * z0,
        x1 + sx * y0 + sxy * z0,
        x0 + sx * y1 + sxy * z0,
        x1 + sx * y1 + sxy * z0,
        x0 + sx * y0 + sxy * z1,
        x1 + sx * y0 + sxy * z1,
        x0 + sx * y1 + sxy * z1,
        x1 + sx * y1 + sxy * z1,
    ];
    let (gx, gy, gz) = (1.0 - fx, 1.0 - fy, 1.0 - fz);
    let w = [
        gx * gy * gz,
        fx * gy * gz,
        gx * fy * gz,
        fx * fy * gz,
        gx * gy * fz,
        fx * gy * fz,
        gx * fy * fz,
        fx * fy * fz,
    ];
    Some((idx, w))
}

/// Affine map from scanner-frame HR lattice coordinates to object-frame HR
/// indices for one slice.
#[derive(Clone, Copy, Debug)]
struct SliceMap {
    a: [[f64; 3]; 3],
    o: [f64; 3],
}

impl SliceMap {
    fn new(geom: &AcquisitionGeometry, t: &RigidTransform) -> Self {
        let s = geom.hr_spacing();
        let m = geom.hr_mid();
        let r = t.rotation_matrix();
        let mut a = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] = r[(i, j)] * (s[j] / s[i]);
            }
        }
        let mut o = [0.0; 3];
        for i in 0..3 {
            let am: f64 = (0..3).map(|j| a[i][j] * m[j]).sum();
            o[i] = (m[i] - am) + t.translation_mm[i] / s[i];
        }
        Self { a, o }
    }

    #[inline]
    fn apply(&self, u: [f64; 3]) -> [f64; 3] {
        let a = &self.a;
        [
            a[0][0] * u[0] + a[0][1] * u[1] + a[0][2] * u[2] + self.o[0],
            a[1][0] * u[0] + a[1][1] * u[1] + a[1][2] * u[2] + self.o[1],
            a[2][0] * u[0] + a[2][1] * u[1] + a[2][2] * u[2] + self.o[2],
        ]
    }
}

/// The degradation operator `A = D S M` for a fixed geometry and motion.
///
/// Each LR voxel is a Gaussian-weighted sum of trilinear samples of the HR
/// volume taken on the HR lattice around the voxel center, after mapping
/// through the slice's rigid transform. Samples outside the HR field of view
/// contribute zero; an LR voxel whose center maps outside is flagged invalid.
#[derive(Clone, Debug)]
pub struct ForwardModel {
    geom: AcquisitionGeometry,
    kernel: SeparableKernel,
    n_timepoints: usize,
    maps: Vec<SliceMap>,
    valid: Vec<bool>,
}

impl ForwardModel {
    pub fn new(geom: &AcquisitionGeometry, motion: &MotionTrajectory) -> Result<Self> {
        geom.validate()?;
        ensure_dims!(
            motion.n_slices() == geom.lr_dims()[2],
            "motion has {} slices per volume, geometry has {}",
            motion.n_slices(),
            geom.lr_dims()[2]
        );
        let kernel = build_blur_kernel(geom)?;
        let maps: Vec<SliceMap> = motion
            .transforms()
            .iter()
            .map(|t| SliceMap::new(geom, t))
            .collect();
        let n_timepoints = motion.n_timepoints();
        let [lb, lk, lh] = geom.lr_dims();
        let mut valid = vec![false; lb * lk * lh * n_timepoints];
        for n in 0..n_timepoints {
            for h in 0..lh {
                let map = &maps[n * lh + h];
                for k in 0..lk {
                    for b in 0..lb {
                        let v = map.apply(geom.lr_center_hr_index([b, k, h]));
                        valid[b + lb * (k + lk * (h + lh * n))] =
                            trilinear_stencil(v, geom.hr_dims).is_some();
                    }
                }
            }
        }
        Ok(Self {
            geom: geom.clone(),
            kernel,
            n_timepoints,
            maps,
            valid,
        })
    }

    pub fn geometry(&self) -> &AcquisitionGeometry {
        &self.geom
    }

    pub fn kernel(&self) -> &SeparableKernel {
        &self.kernel
    }

    pub fn n_timepoints(&self) -> usize {
        self.n_timepoints
    }

    /// Per LR voxel (4D, LR layout): does its center map inside the HR FOV?
    pub fn validity_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn hr_shape(&self) -> [usize; 4] {
        let [a, b, c] = self.geom.hr_dims;
        [a, b, c, self.n_timepoints]
    }

    pub fn lr_shape(&self) -> [usize; 4] {
        let [a, b, c] = self.geom.lr_dims();
        [a, b, c, self.n_timepoints]
    }

    fn slab_extent(&self) -> (usize, usize, usize) {
        let [lb, lk, _] = self.geom.lr_dims();
        let d = self.geom.downsample;
        let ax = d[0] * (lb - 1) + 2 * self.kernel.radius(0) + 1;
        let ay = d[1] * (lk - 1) + 2 * self.kernel.radius(1) + 1;
        (ax, ay, self.kernel.taps[2].len())
    }

    /// Scanner-frame HR lattice coordinate of slab sample `(ax, ay, l)` for slice `h`.
    #[inline]
    fn lattice(&self, h: usize, ax: usize, ay: usize, l: usize) -> [f64; 3] {
        let d = self.geom.downsample;
        let half = |a: usize| (d[a] as f64 - 1.0) / 2.0;
        [
            ax as f64 - self.kernel.radius(0) as f64 + half(0),
            ay as f64 - self.kernel.radius(1) as f64 + half(1),
            (d[2] * h) as f64 + half(2) + l as f64 - self.kernel.radius(2) as f64,
        ]
    }

    /// Apply `A` to an HR series.
    pub fn forward(&self, x: &Volume4D) -> Result<Volume4D> {
        ensure_dims!(
            x.dims() == self.hr_shape(),
            "HR series has shape {:?}, operator expects {:?}",
            x.dims(),
            self.hr_shape()
        );
        let [lb, lk, lh] = self.geom.lr_dims();
        let per_vol = lb * lk * lh;
        let mut out = self.geom.lr_volume(self.n_timepoints, x.spacing()[3])?;
        out.data_mut()
            .par_chunks_mut(per_vol)
            .enumerate()
            .for_each(|(n, dst)| self.forward_volume(x.volume(n), n, dst));
        Ok(out)
    }

    fn forward_volume(&self, src: &[f64], n: usize, dst: &mut [f64]) {
        let [lb, lk, lh] = self.geom.lr_dims();
        let d = self.geom.downsample;
        let (axn, ayn, _) = self.slab_extent();
        let [gx, gy, gz] = &self.kernel.taps;
        let hr = self.geom.hr_dims;
        let mut plane = vec![0.0; axn * ayn];
        let mut rows = vec![0.0; lk * axn];
        for h in 0..lh {
            let map = &self.maps[n * lh + h];
            // through-plane profile collapsed onto the slice plane
            for ay in 0..ayn {
                for ax in 0..axn {
                    let mut acc = 0.0;
                    for (l, wz) in gz.iter().enumerate() {
                        let v = map.apply(self.lattice(h, ax, ay, l));
                        if let Some((idx, w)) = trilinear_stencil(v, hr) {
                            let s: f64 = (0..8).map(|q| w[q] * src[idx[q]]).sum();
                            acc += wz * s;
                        }
                    }
                    plane[ax + axn * ay] = acc;
                }
            }
            for k in 0..lk {
                for ax in 0..axn {
                    rows[ax + axn * k] = gy
                        .iter()
                        .enumerate()
                        .map(|(j, w)| w * plane[ax + axn * (d[1] * k + j)])
                        .sum();
                }
            }
            for k in 0..lk {
                for b in 0..lb {
                    dst[b + lb * (k + lk * h)] = gx
                        .iter()
                        .enumerate()
                        .map(|(i, w)| w * rows[d[0] * b + i + axn * k])
                        .sum();
                }
            }
        }
    }

    /// Apply `Aᵀ` to an LR series.
    pub fn adjoint(&self, t: &Volume4D) -> Result<Volume4D> {
        ensure_dims!(
            t.dims() == self.lr_shape(),
            "LR series has shape {:?}, operator expects {:?}",
            t.dims(),
            self.lr_shape()
        );
        let per_vol: usize = self.geom.hr_dims.iter().product();
        let mut out = self.geom.hr_volume(self.n_timepoints, t.spacing()[3])?;
        out.data_mut()
            .par_chunks_mut(per_vol)
            .enumerate()
            .for_each(|(n, dst)| self.adjoint_volume(t.volume(n), n, dst));
        Ok(out)
    }

    fn adjoint_volume(&self, src: &[f64], n: usize, dst: &mut [f64]) {
        let [lb, lk, lh] = self.geom.lr_dims();
        let d = self.geom.downsample;
        let (axn, ayn, _) = self.slab_extent();
        let [gx, gy, gz] = &self.kernel.taps;
        let hr = self.geom.hr_dims;
        let mut plane = vec![0.0; axn * ayn];
        let mut rows = vec![0.0; lk * axn];
        for h in 0..lh {
            let map = &self.maps[n * lh + h];
            rows.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..lk {
                for b in 0..lb {
                    let y = src[b + lb * (k + lk * h)];
                    for (i, w) in gx.iter().enumerate() {
                        rows[d[0] * b + i + axn * k] += w * y;
                    }
                }
            }
            plane.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..lk {
                for (j, w) in gy.iter().enumerate() {
                    let ay = d[1] * k + j;
                    for ax in 0..axn {
                        plane[ax + axn * ay] += w * rows[ax + axn * k];
                    }
                }
            }
            for ay in 0..ayn {
                for ax in 0..axn {
                    let p = plane[ax + axn * ay];
                    if p == 0.0 {
                        continue;
                    }
                    for (l, wz) in gz.iter().enumerate() {
                        let v = map.apply(self.lattice(h, ax, ay, l));
                        if let Some((idx, w)) = trilinear_stencil(v, hr) {
                            let c = wz * p;
                            for q in 0..8 {
                                dst[idx[q]] += w[q] * c;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `A x` for one-off use; see [`ForwardModel`].
pub fn forward_project(
    x: &Volume4D,
    geom: &AcquisitionGeometry,
    motion: &MotionTrajectory,
) -> Result<Volume4D> {
    motion.check_against(geom, x.n_timepoints())?;
    ForwardModel::new(geom, motion)?.forward(x)
}

/// `Aᵀ t` for one-off use; see [`ForwardModel`].
pub fn adjoint_project(
    t: &Volume4D,
    geom: &AcquisitionGeometry,
    motion: &MotionTrajectory,
) -> Result<Volume4D> {
    motion.check_against(geom, t.n_timepoints())?;
    ForwardModel::new(geom, motion)?.adjoint(t)
}

/// Scattered observations of one volume: physical positions of every LR
/// voxel after its slice's motion, with the observed intensities.
#[derive(Clone, Debug, Default)]
pub struct PointCloud {
    pub positions: Vec<[f64; 3]>,
    pub values: Vec<f64>,
}

pub fn compose_grid_positions(
    t: &Volume4D,
    geom: &AcquisitionGeometry,
    motion: &MotionTrajectory,
    n: usize,
) -> Result<PointCloud> {
    let [lb, lk, lh] = geom.lr_dims();
    ensure_dims!(
        t.spatial_dims() == [lb, lk, lh],
        "observation has spatial dims {:?}, geometry expects {:?}",
        t.spatial_dims(),
        [lb, lk, lh]
    );
    motion.check_against(geom, t.n_timepoints())?;
    ensure_arg!(n < t.n_timepoints(), "timepoint {n} out of range");
    let center = geom.center();
    let mut cloud = PointCloud {
        positions: Vec::with_capacity(lb * lk * lh),
        values: Vec::with_capacity(lb * lk * lh),
    };
    for h in 0..lh {
        let m = motion.get(n, h);
        for k in 0..lk {
            for b in 0..lb {
                let p = geom.lr_center_physical([b, k, h]);
                let q = if m.is_identity() { p } else { transform_point(p, m, center) };
                cloud.positions.push(q);
                cloud.values.push(t.get(b, k, h, n));
            }
        }
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: [f64; 3], b: [f64; 3], tol: f64) -> bool {
        a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn transform_point_basics() {
        let c = [0.0; 3];
        let p = [1.5, -2.0, 3.25];
        assert_eq!(transform_point(p, &RigidTransform::identity(), c), p);
        let t = RigidTransform::translation([1.0, 2.0, 3.0]);
        assert!(close(transform_point(p, &t, c), [2.5, 0.0, 6.25], 1e-15));
        let yaw = RigidTransform::new([0.0, 0.0, 90.0], [0.0; 3]).unwrap();
        assert!(close(transform_point([1.0, 0.0, 0.0], &yaw, c), [0.0, 1.0, 0.0], 1e-12));
    }

    #[test]
    fn rotation_order_is_z_y_x() {
        // roll then yaw: x-rotation first moves y to z, then z-rotation leaves z.
        let t = RigidTransform::new([90.0, 0.0, 90.0], [0.0; 3]).unwrap();
        let q = transform_point([0.0, 1.0, 0.0], &t, [0.0; 3]);
        assert!(close(q, [0.0, 0.0, 1.0], 1e-12));
        let q = transform_point([1.0, 0.0, 0.0], &t, [0.0; 3]);
        assert!(close(q, [0.0, 1.0, 0.0], 1e-12));
    }

    #[test]
    fn homogeneous_matrix_is_proper_rotation() {
        let t = RigidTransform::new([12.0, -33.0, 71.0], [1.0, 2.0, 3.0]).unwrap();
        let r = t.rotation_matrix();
        assert!((r.determinant() - 1.0).abs() < 1e-10);
        assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-10);
        let h = t.homogeneous([4.0, 5.0, 6.0]);
        let p = [0.3, 0.7, -1.1];
        let q: Vec<f64> = (0..3)
            .map(|i| h[i][0] * p[0] + h[i][1] * p[1] + h[i][2] * p[2] + h[i][3])
            .collect();
        assert!(close([q[0], q[1], q[2]], transform_point(p, &t, [4.0, 5.0, 6.0]), 1e-12));
        assert!(RigidTransform::new([f64::NAN, 0.0, 0.0], [0.0; 3]).is_err());
    }

    #[test]
    fn gaussian_taps_properties() {
        assert_eq!(gaussian_taps(0.0, 1.0).unwrap(), vec![1.0]);
        assert!(gaussian_taps(-1.0, 1.0).is_err());
        for fwhm in [0.5, 1.0, 2.2, 3.0, 7.5] {
            let taps = gaussian_taps(fwhm, 1.3).unwrap();
            assert!((taps.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(taps.len() % 2, 1);
        }
    }

    #[test]
    fn kernel_center_matches_continuous_gaussian() {
        let taps = gaussian_taps(3.0, 1.0).unwrap();
        let sigma = 3.0 / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
        let expect = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        let center = taps[(taps.len() - 1) / 2];
        assert!((center - expect).abs() < 1e-6, "{center} vs {expect}");
    }

    #[test]
    fn zero_fwhm_geometry_gives_identity_kernel() {
        let g = AcquisitionGeometry::identity([4, 4, 4]);
        assert!(build_blur_kernel(&g).unwrap().is_identity());
    }

    #[test]
    fn geometry_validation() {
        assert!(AcquisitionGeometry::new([48, 48, 11], [1, 1, 2], 1.74, 3.0).is_err());
        assert!(AcquisitionGeometry::new([48, 48, 12], [1, 1, 2], 0.0, 3.0).is_err());
        let mut g = AcquisitionGeometry::desk();
        assert_eq!(g.lr_dims(), [48, 48, 6]);
        assert_eq!(g.interleave, vec![0, 2, 4, 1, 3, 5]);
        g.interleave = vec![0, 0, 1, 2, 3, 4];
        assert!(g.validate().is_err());
    }

    #[test]
    fn motion_csv_round_trip_and_errors() {
        let mut m = MotionTrajectory::identity(2, 3);
        m.set(1, 2, RigidTransform::new([1.5, -0.1, 1e-7], [0.3, 0.0, -8.0]).unwrap());
        let text = m.to_csv();
        assert!(text.starts_with(MOTION_HEADER));
        assert_eq!(MotionTrajectory::from_csv(&text).unwrap(), m);
        assert!(MotionTrajectory::from_csv("n,h\n").is_err());
        let missing: String = text
            .lines()
            .enumerate()
            .filter(|&(i, _)| i != 2)
            .map(|(_, l)| l)
            .collect::<Vec<_>>()
            .join("\n");
        assert!(MotionTrajectory::from_csv(&missing).is_err());
    }

    #[test]
    fn identity_operator_is_identity() {
        let g = AcquisitionGeometry::identity([5, 4, 3]);
        let m = MotionTrajectory::identity(2, 3);
        let data: Vec<f64> = (0..120).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = Volume4D::from_vec([5, 4, 3, 2], data).unwrap();
        let y = forward_project(&x, &g, &m).unwrap();
        let back = adjoint_project(&x, &g, &m).unwrap();
        for ((a, b), c) in x.data().iter().zip(y.data()).zip(back.data()) {
            assert!((a - b).abs() < 1e-12 && (a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let g = AcquisitionGeometry::new([12, 12, 6], [2, 2, 2], 2.0, 3.0).unwrap();
        let mut m = MotionTrajectory::identity(3, 3);
        m.set(1, 1, RigidTransform::new([10.0, 5.0, -3.0], [1.0, 2.0, 0.5]).unwrap());
        let x = g.hr_volume(3, 1.0).unwrap();
        let y = forward_project(&x, &g, &m).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
        let z = adjoint_project(&y, &g, &m).unwrap();
        assert!(z.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let g = AcquisitionGeometry::identity([4, 4, 4]);
        let m = MotionTrajectory::identity(2, 3);
        let x = Volume4D::zeros([4, 4, 4, 2]).unwrap();
        assert!(matches!(forward_project(&x, &g, &m), Err(Error::Dimension(_))));
        let m = MotionTrajectory::identity(2, 4);
        let x = Volume4D::zeros([4, 4, 3, 2]).unwrap();
        assert!(matches!(forward_project(&x, &g, &m), Err(Error::Dimension(_))));
    }

    #[test]
    fn constant_image_stays_constant_in_fov() {
        let g = AcquisitionGeometry::new([16, 16, 16], [1, 1, 2], 1.74, 3.0).unwrap();
        let mut m = MotionTrajectory::identity(1, 8);
        m.set(0, 3, RigidTransform::new([0.0, 0.0, 3.0], [0.5, -0.4, 0.0]).unwrap());
        let x = g.hr_volume(1, 1.0).unwrap().with_data(vec![2.5; 16 * 16 * 16]).unwrap();
        let model = ForwardModel::new(&g, &m).unwrap();
        let y = model.forward(&x).unwrap();
        // voxels far enough from the FOV border see only in-FOV samples
        for h in 2..6 {
            for k in 5..11 {
                for b in 5..11 {
                    assert!((y.get(b, k, h, 0) - 2.5).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn identity_motion_cloud_is_regular_grid() {
        let g = AcquisitionGeometry::new([8, 8, 4], [1, 1, 2], 2.0, 3.0).unwrap();
        let t = g.lr_volume(1, 1.0).unwrap();
        let cloud = compose_grid_positions(&t, &g, &MotionTrajectory::identity(1, 2), 0).unwrap();
        assert_eq!(cloud.positions.len(), 8 * 8 * 2);
        assert!(close(cloud.positions[0], [-7.0, -7.0, -1.5], 1e-12));
        assert!(close(cloud.positions[8 * 8], [-7.0, -7.0, 1.5], 1e-12));
        let mut m = MotionTrajectory::identity(1, 2);
        m.set(0, 0, RigidTransform::translation([0.0, 5.0, 0.0]));
        m.set(0, 1, RigidTransform::translation([0.0, 5.0, 0.0]));
        let shifted = compose_grid_positions(&t, &g, &m, 0).unwrap();
        for (a, b) in cloud.positions.iter().zip(&shifted.positions) {
            assert!(close([a[0], a[1] + 5.0, a[2]], *b, 1e-12));
        }
    }
}
