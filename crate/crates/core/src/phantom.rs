//! Synthetic ground truth and the degradation `T_n = D S M_n X_n + z`.
//!
//! The phantom is a stack of concentric ellipsoids split into left and
//! right hemispheres. Every (layer, hemisphere) pair is a region with its
//! own additive BOLD signal, so regional means are known exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, ensure_dims, Error, Result};
use crate::geometry::{forward_project, AcquisitionGeometry, MotionTrajectory, RigidTransform};
use crate::tensor4d::Volume4D;

/// Integer region labels over a 3D grid; 0 is background.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub dims: [usize; 3],
    pub labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(dims: [usize; 3], labels: Vec<u32>) -> Result<Self> {
        ensure_dims!(
            labels.len() == dims.iter().product::<usize>(),
            "label map {:?} needs {} entries, got {}",
            dims,
            dims.iter().product::<usize>(),
            labels.len()
        );
        Ok(Self { dims, labels })
    }

    pub fn get(&self, b: usize, k: usize, h: usize) -> u32 {
        self.labels[b + self.dims[0] * (k + self.dims[1] * h)]
    }

    /// Sorted nonzero labels present in the map.
    pub fn region_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.labels.iter().copied().filter(|&l| l > 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Voxels with a nonzero label.
    pub fn support(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l > 0).collect()
    }
}

/// BOLD signal of one region: `amplitude * sin(2π f t + phase) + drift * n/(N-1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionBold {
    pub amplitude: f64,
    pub frequency_hz: f64,
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub drift: f64,
}

impl RegionBold {
    pub fn at(&self, n: usize, n_timepoints: usize, tr: f64) -> f64 {
        let t = n as f64 * tr;
        let ramp = if n_timepoints > 1 {
            n as f64 / (n_timepoints - 1) as f64
        } else {
            0.0
        };
        self.amplitude * (std::f64::consts::TAU * self.frequency_hz * t + self.phase).sin()
            + self.drift * ramp
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub hr_dims: [usize; 3],
    pub n_timepoints: usize,
    /// Repetition time in seconds.
    pub tr: f64,
    /// Semi-axes of the nested ellipsoids as fractions of the half field of view, outermost first.
    pub layer_radii: Vec<f64>,
    pub layer_intensities: Vec<f64>,
    /// Peak absolute value of the smooth texture added inside the object.
    pub texture_amplitude: f64,
    /// One entry per region, ordered by label starting at 1.
    pub bold: Vec<RegionBold>,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        let freqs = [0.03, 0.05, 0.08];
        let bold = freqs
            .iter()
            .flat_map(|&f| {
                [
                    RegionBold {
                        amplitude: 0.04,
                        frequency_hz: f,
                        phase: 0.0,
                        drift: 0.01,
                    },
                    RegionBold {
                        amplitude: 0.04,
                        frequency_hz: f,
                        phase: 0.4,
                        drift: -0.01,
                    },
                ]
            })
            .collect();
        Self {
            hr_dims: [48, 48, 12],
            n_timepoints: 24,
            tr: 1.0,
            layer_radii: vec![0.85, 0.6, 0.32],
            layer_intensities: vec![0.35, 0.6, 0.8],
            texture_amplitude: 0.06,
            bold,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn n_regions(&self) -> usize {
        2 * self.layer_radii.len()
    }

    pub fn validate(&self) -> Result<()> {
        ensure_arg!(
            self.hr_dims[0] >= 16 && self.hr_dims[1] >= 16 && self.hr_dims[2] >= 8,
            "phantom dims must be at least (16,16,8), got {:?}",
            self.hr_dims
        );
        ensure_arg!(self.n_timepoints >= 8, "phantom needs at least 8 timepoints");
        ensure_arg!(self.tr > 0.0 && self.tr.is_finite(), "tr must be > 0");
        ensure_arg!(!self.layer_radii.is_empty(), "at least one layer required");
        ensure_arg!(
            self.layer_radii.len() == self.layer_intensities.len(),
            "{} layer radii but {} intensities",
            self.layer_radii.len(),
            self.layer_intensities.len()
        );
        ensure_arg!(
            self.layer_radii.windows(2).all(|w| w[0] > w[1]) && self.layer_radii.iter().all(|r| *r > 0.0),
            "layer radii must be positive and strictly decreasing"
        );
        ensure_arg!(
            self.bold.len() == self.n_regions(),
            "{} regions need {} bold entries, got {}",
            self.n_regions(),
            self.n_regions(),
            self.bold.len()
        );
        let nyquist = 0.5 / self.tr;
        for (i, b) in self.bold.iter().enumerate() {
            ensure_arg!(b.amplitude >= 0.0, "region {} amplitude must be >= 0", i + 1);
            ensure_arg!(
                b.frequency_hz >= 0.0 && b.frequency_hz < nyquist,
                "region {} frequency {} Hz is not below Nyquist {} Hz",
                i + 1,
                b.frequency_hz,
                nyquist
            );
            ensure_arg!(b.phase.is_finite() && b.drift.is_finite(), "region {} bold not finite", i + 1);
        }
        ensure_arg!(self.texture_amplitude >= 0.0, "texture_amplitude must be >= 0");
        Ok(())
    }
}

/// One low-frequency plane wave of the texture.
struct Wave {
    k: [f64; 3],
    phase: f64,
}

fn texture_waves(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> Vec<Wave> {
    (0..8)
        .map(|_| {
            // at most two cycles across each axis
            let k = std::array::from_fn(|a| {
                rng.random_range(-2.0..=2.0) * std::f64::consts::TAU / dims[a] as f64
            });
            Wave {
                k,
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            }
        })
        .collect()
}

/// Ground-truth series and its HR label map.
pub fn make_phantom(spec: &PhantomSpec) -> Result<(Volume4D, LabelMap)> {
    spec.validate()?;
    let [nx, ny, nz] = spec.hr_dims;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let waves = texture_waves(&mut rng, spec.hr_dims);
    let wave_norm = waves.len() as f64;

    let mid = [nx, ny, nz].map(|d| (d as f64 - 1.0) / 2.0);
    let half = [nx, ny, nz].map(|d| d as f64 / 2.0);
    let per_vol = nx * ny * nz;
    let mut labels = vec![0u32; per_vol];
    let mut base = vec![0.0; per_vol];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = [x as f64, y as f64, z as f64];
                let r2 = |frac: f64| -> f64 {
                    (0..3)
                        .map(|a| ((p[a] - mid[a]) / (frac * half[a])).powi(2))
                        .sum()
                };
                let Some(layer) = spec.layer_radii.iter().rposition(|&f| r2(f) <= 1.0) else {
                    continue;
                };
                let hemi = usize::from(p[0] > mid[0]);
                let i = x + nx * (y + ny * z);
                labels[i] = (2 * layer + hemi + 1) as u32;
                let tex: f64 = waves
                    .iter()
                    .map(|w| (w.k[0] * p[0] + w.k[1] * p[1] + w.k[2] * p[2] + w.phase).cos())
                    .sum::<f64>()
                    / wave_norm;
                base[i] = spec.layer_intensities[layer] + spec.texture_amplitude * tex;
            }
        }
    }

    let n_t = spec.n_timepoints;
    let mut data = vec![0.0; per_vol * n_t];
    for n in 0..n_t {
        let signal: Vec<f64> = spec.bold.iter().map(|b| b.at(n, n_t, spec.tr)).collect();
        let dst = &mut data[n * per_vol..(n + 1) * per_vol];
        for ((d, &l), &b) in dst.iter_mut().zip(&labels).zip(&base) {
            if l > 0 {
                *d = b + signal[l as usize - 1];
            }
        }
    }
    if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Argument(format!(
            "phantom intensity {v} leaves [0, 1]; lower the layer intensities, texture or bold amplitudes"
        )));
    }
    let x = Volume4D::from_vec([nx, ny, nz, n_t], data)?.with_spacing([1.0, 1.0, 1.0, spec.tr])?;
    Ok((x, LabelMap::new(spec.hr_dims, labels)?))
}

/// Ground truth placed on `geom`'s HR grid (spacing and origin taken from it).
pub fn make_phantom_on(spec: &PhantomSpec, geom: &AcquisitionGeometry) -> Result<(Volume4D, LabelMap)> {
    ensure_dims!(
        spec.hr_dims == geom.hr_dims,
        "phantom dims {:?} differ from geometry HR dims {:?}",
        spec.hr_dims,
        geom.hr_dims
    );
    let (x, labels) = make_phantom(spec)?;
    let mut out = geom.hr_volume(spec.n_timepoints, spec.tr)?;
    out.data_mut().copy_from_slice(x.data());
    Ok((out, labels))
}

/// Regional mean series of the phantom minus its temporal constant, i.e. the injected signal.
pub fn injected_signal(spec: &PhantomSpec, region: u32, n: usize) -> f64 {
    spec.bold[region as usize - 1].at(n, spec.n_timepoints, spec.tr)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationSpec {
    pub max_rotation_deg: f64,
    pub max_translation_mm: f64,
    /// Largest per-slice increment of each rotation angle in the random walk.
    pub walk_step_deg: f64,
    pub walk_step_mm: f64,
    /// Chance that a timepoint carries a sudden large excursion.
    pub burst_probability: f64,
    /// Timepoints that always carry a burst.
    pub burst_timepoints: Vec<usize>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self {
            max_rotation_deg: 15.0,
            max_translation_mm: 8.0,
            walk_step_deg: 0.3,
            walk_step_mm: 0.15,
            burst_probability: 0.0,
            burst_timepoints: vec![12],
            noise_sigma: 0.01,
            seed: 0,
        }
    }
}

impl DegradationSpec {
    /// Identity motion, no noise.
    pub fn none() -> Self {
        Self {
            max_rotation_deg: 0.0,
            max_translation_mm: 0.0,
            walk_step_deg: 0.0,
            walk_step_mm: 0.0,
            burst_probability: 0.0,
            burst_timepoints: Vec::new(),
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("max_rotation_deg", self.max_rotation_deg),
            ("max_translation_mm", self.max_translation_mm),
            ("walk_step_deg", self.walk_step_deg),
            ("walk_step_mm", self.walk_step_mm),
            ("noise_sigma", self.noise_sigma),
        ] {
            ensure_arg!(v.is_finite() && v >= 0.0, "{name} must be finite and >= 0, got {v}");
        }
        ensure_arg!(
            (0.0..=1.0).contains(&self.burst_probability),
            "burst_probability must lie in [0, 1]"
        );
        Ok(())
    }
}

/// Random-walk motion sampled per slice in acquisition order.
///
/// The six rigid parameters take uniform steps bounded by the walk step and
/// are clamped to the motion bounds. A burst adds a large offset, drawn
/// between half and all of each bound, to every slice of its timepoint.
pub fn make_motion(
    spec: &DegradationSpec,
    geom: &AcquisitionGeometry,
    n_timepoints: usize,
) -> Result<MotionTrajectory> {
    spec.validate()?;
    geom.validate()?;
    let n_slices = geom.lr_dims()[2];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let bounds = [
        spec.max_rotation_deg,
        spec.max_rotation_deg,
        spec.max_rotation_deg,
        spec.max_translation_mm,
        spec.max_translation_mm,
        spec.max_translation_mm,
    ];
    let steps = [
        spec.walk_step_deg,
        spec.walk_step_deg,
        spec.walk_step_deg,
        spec.walk_step_mm,
        spec.walk_step_mm,
        spec.walk_step_mm,
    ];
    let mut state = [0.0f64; 6];
    let mut out = MotionTrajectory::identity(n_timepoints, n_slices);
    for n in 0..n_timepoints {
        let random_burst = spec.burst_probability > 0.0 && rng.random_bool(spec.burst_probability);
        let burst = if random_burst || spec.burst_timepoints.contains(&n) {
            let mut off = [0.0; 6];
            for (o, b) in off.iter_mut().zip(bounds) {
                if b > 0.0 {
                    let mag = rng.random_range(0.5 * b..=b);
                    *o = if rng.random_bool(0.5) { mag } else { -mag };
                }
            }
            Some(off)
        } else {
            None
        };
        for &h in &geom.interleave {
            for ((s, st), b) in state.iter_mut().zip(steps).zip(bounds) {
                if st > 0.0 {
                    *s = (*s + rng.random_range(-st..=st)).clamp(-b, b);
                }
            }
            let mut p = state;
            if let Some(off) = burst {
                for ((pi, o), b) in p.iter_mut().zip(off).zip(bounds) {
                    *pi = (*pi + o).clamp(-b, b);
                }
            }
            out.set(n, h, RigidTransform::new([p[0], p[1], p[2]], [p[3], p[4], p[5]])?);
        }
    }
    Ok(out)
}

/// Adds seeded white Gaussian noise in place.
pub fn add_noise(t: &mut Volume4D, sigma: f64, seed: u64) -> Result<()> {
    ensure_arg!(sigma >= 0.0 && sigma.is_finite(), "noise sigma must be >= 0");
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Argument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in t.data_mut() {
        *v += normal.sample(&mut rng);
    }
    Ok(())
}

/// Forward projection plus Gaussian noise.
pub fn degrade(
    x: &Volume4D,
    geom: &AcquisitionGeometry,
    motion: &MotionTrajectory,
    sigma: f64,
    seed: u64,
) -> Result<Volume4D> {
    let mut t = forward_project(x, geom, motion)?;
    add_noise(&mut t, sigma, seed)?;
    Ok(t)
}

/// Label of the HR voxel nearest to each LR voxel center.
pub fn lr_labels(labels: &LabelMap, geom: &AcquisitionGeometry) -> Result<LabelMap> {
    ensure_dims!(
        labels.dims == geom.hr_dims,
        "label map {:?} does not match HR dims {:?}",
        labels.dims,
        geom.hr_dims
    );
    let lr = geom.lr_dims();
    let mut out = Vec::with_capacity(lr.iter().product());
    for h in 0..lr[2] {
        for k in 0..lr[1] {
            for b in 0..lr[0] {
                let c = geom.lr_center_hr_index([b, k, h]);
                let idx: [usize; 3] =
                    std::array::from_fn(|a| (c[a].round().max(0.0) as usize).min(geom.hr_dims[a] - 1));
                out.push(labels.get(idx[0], idx[1], idx[2]));
            }
        }
    }
    LabelMap::new(lr, out)
}
