//! Single-step scattered-data interpolation of each volume on its own, the
//! baselines the 4D solver is compared against.
//!
//! Every target node gathers the samples within the kernel support (measured
//! in target voxels) and takes their kernel-weighted mean. Nodes whose total
//! weight falls below [`MIN_WEIGHT`] are uncovered and set to zero.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, ensure_dims, Error, Result};
use crate::geometry::{compose_grid_positions, AcquisitionGeometry, MotionTrajectory};
use crate::tensor4d::{Volume3D, Volume4D};

pub const MIN_WEIGHT: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpMethod {
    /// Radial tent `max(0, 1 - r)`.
    Linear,
    /// Separable Keys cubic convolution, `a = -0.5`.
    Cubic,
    /// Separable Lanczos-3 windowed sinc.
    Sinc,
}

impl InterpMethod {
    pub const ALL: [InterpMethod; 3] = [Self::Linear, Self::Cubic, Self::Sinc];

    /// Default support radius in target voxels.
    pub fn support(self) -> f64 {
        match self {
            Self::Linear => 1.0,
            Self::Cubic => 2.0,
            Self::Sinc => 3.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Cubic => "cubic",
            Self::Sinc => "sinc",
        }
    }

    /// Kernel weight of an offset given in target voxels, for a kernel
    /// stretched to the given support.
    fn weight(self, d: [f64; 3], support: f64) -> f64 {
        match self {
            Self::Linear => {
                let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() / support;
                (1.0 - r).max(0.0)
            }
            Self::Cubic => {
                let s = 2.0 / support;
                d.iter().map(|x| keys(x * s)).product()
            }
            Self::Sinc => {
                let s = 3.0 / support;
                d.iter().map(|x| lanczos3(x * s)).product()
            }
        }
    }
}

impl std::str::FromStr for InterpMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "cubic" => Ok(Self::Cubic),
            "sinc" => Ok(Self::Sinc),
            other => Err(Error::Argument(format!("unknown interpolation method `{other}`"))),
        }
    }
}

fn keys(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x < 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn lanczos3(x: f64) -> f64 {
    if x.abs() < 3.0 {
        sinc(x) * sinc(x / 3.0)
    } else {
        0.0
    }
}

/// Regular target grid: node `(i, j, l)` sits at `origin + spacing * (i, j, l)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl GridSpec {
    pub fn hr_of(geom: &AcquisitionGeometry) -> Self {
        Self {
            dims: geom.hr_dims,
            spacing: geom.hr_spacing(),
            origin: geom.hr_origin(),
        }
    }

    pub fn node_position(&self, idx: [usize; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| self.origin[a] + self.spacing[a] * idx[a] as f64)
    }

    fn to_index(&self, p: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| (p[a] - self.origin[a]) / self.spacing[a])
    }
}

#[derive(Clone, Debug)]
pub struct ScatteredSamples {
    pub positions: Vec<[f64; 3]>,
    pub values: Vec<f64>,
    pub target: GridSpec,
}

impl ScatteredSamples {
    pub fn validate(&self) -> Result<()> {
        ensure_arg!(!self.positions.is_empty(), "scattered samples are empty");
        ensure_dims!(
            self.positions.len() == self.values.len(),
            "{} positions but {} values",
            self.positions.len(),
            self.values.len()
        );
        ensure_arg!(
            self.positions.iter().flatten().chain(&self.values).all(|v| v.is_finite()),
            "scattered samples must be finite"
        );
        ensure_arg!(
            self.target.dims.iter().all(|&d| d >= 1)
                && self.target.spacing.iter().all(|&s| s > 0.0),
            "invalid target grid {:?}",
            self.target
        );
        Ok(())
    }
}

/// Interpolated volume and per-node coverage.
#[derive(Clone, Debug)]
pub struct Interpolated {
    pub volume: Volume3D,
    pub covered: Vec<bool>,
}

impl Interpolated {
    pub fn coverage_fraction(&self) -> f64 {
        self.covered.iter().filter(|c| **c).count() as f64 / self.covered.len() as f64
    }
}

pub fn interpolate_volume(s: &ScatteredSamples, method: InterpMethod) -> Result<Interpolated> {
    interpolate_volume_with_support(s, method, method.support())
}

/// Samples bucketed by nearest target node, on a grid padded by the search radius.
struct Buckets {
    pad: usize,
    dims: [usize; 3],
    offsets: Vec<usize>,
    items: Vec<usize>,
    coords: Vec<[f64; 3]>,
}

impl Buckets {
    fn new(coords: Vec<[f64; 3]>, target: [usize; 3], pad: usize) -> Self {
        let dims = target.map(|d| d + 2 * pad);
        let cell = |v: [f64; 3]| -> Option<usize> {
            let mut idx = [0usize; 3];
            for a in 0..3 {
                let r = v[a].round() + pad as f64;
                if !(r >= 0.0 && r < dims[a] as f64) {
                    return None;
                }
                idx[a] = r as usize;
            }
            Some(idx[0] + dims[0] * (idx[1] + dims[1] * idx[2]))
        };
        let ncells = dims.iter().product::<usize>();
        let cells: Vec<Option<usize>> = coords.iter().map(|&v| cell(v)).collect();
        let mut counts = vec![0usize; ncells + 1];
        for c in cells.iter().flatten() {
            counts[c + 1] += 1;
        }
        for i in 0..ncells {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut items = vec![0usize; counts[ncells]];
        for (i, c) in cells.iter().enumerate() {
            if let Some(c) = c {
                items[fill[*c]] = i;
                fill[*c] += 1;
            }
        }
        Self {
            pad,
            dims,
            offsets: counts,
            items,
            coords,
        }
    }

    /// Samples whose bucket lies within `reach` nodes of target node `node`.
    fn around(&self, node: [usize; 3], reach: usize) -> impl Iterator<Item = usize> + '_ {
        let lo = node.map(|v| v + self.pad - reach);
        let hi = [0, 1, 2].map(|a| (node[a] + self.pad + reach).min(self.dims[a] - 1));
        (lo[2]..=hi[2]).flat_map(move |z| {
            (lo[1]..=hi[1]).flat_map(move |y| {
                let row = self.dims[0] * (y + self.dims[1] * z);
                let a = self.offsets[row + lo[0]];
                let b = self.offsets[row + hi[0] + 1];
                self.items[a..b].iter().copied()
            })
        })
    }
}

/// Like [`interpolate_volume`] with an explicit support radius in target voxels.
pub fn interpolate_volume_with_support(
    s: &ScatteredSamples,
    method: InterpMethod,
    support: f64,
) -> Result<Interpolated> {
    s.validate()?;
    ensure_arg!(support > 0.0 && support.is_finite(), "support must be > 0");
    let target = s.target;
    let reach = support.ceil() as usize + 1;
    let coords: Vec<[f64; 3]> = s.positions.iter().map(|&p| target.to_index(p)).collect();
    let buckets = Buckets::new(coords, target.dims, reach);

    let [nx, ny, nz] = target.dims;
    let plane = nx * ny;
    let mut values = vec![0.0; plane * nz];
    let mut covered = vec![false; plane * nz];
    values
        .par_chunks_mut(plane)
        .zip(covered.par_chunks_mut(plane))
        .enumerate()
        .for_each(|(z, (vals, cov))| {
            for y in 0..ny {
                for x in 0..nx {
                    let node = [x, y, z];
                    let mut wsum = 0.0;
                    let mut acc = 0.0;
                    for i in buckets.around(node, reach) {
                        let c = buckets.coords[i];
                        let d = [c[0] - x as f64, c[1] - y as f64, c[2] - z as f64];
                        if d.iter().any(|v| v.abs() >= support) {
                            continue;
                        }
                        let w = method.weight(d, support);
                        wsum += w;
                        acc += w * s.values[i];
                    }
                    if wsum >= MIN_WEIGHT {
                        vals[x + nx * y] = acc / wsum;
                        cov[x + nx * y] = true;
                    }
                }
            }
        });
    let mut volume = Volume3D::new(target.dims, values)?;
    volume.spacing = target.spacing;
    Ok(Interpolated { volume, covered })
}

/// Per-volume baseline reconstruction of a whole series.
#[derive(Clone, Debug)]
pub struct SeriesInterpolation {
    pub series: Volume4D,
    /// Coverage per HR voxel, same layout as `series`.
    pub covered: Vec<bool>,
    pub coverage_fraction: Vec<f64>,
}

pub fn reconstruct_series_3d(
    t: &Volume4D,
    motion: &MotionTrajectory,
    geom: &AcquisitionGeometry,
    method: InterpMethod,
) -> Result<SeriesInterpolation> {
    geom.validate()?;
    ensure_dims!(
        t.spatial_dims() == geom.lr_dims(),
        "observation has spatial dims {:?}, geometry expects {:?}",
        t.spatial_dims(),
        geom.lr_dims()
    );
    motion.check_against(geom, t.n_timepoints())?;
    let target = GridSpec::hr_of(geom);
    let volumes: Vec<Interpolated> = (0..t.n_timepoints())
        .map(|n| {
            let cloud = compose_grid_positions(t, geom, motion, n)?;
            interpolate_volume(
                &ScatteredSamples {
                    positions: cloud.positions,
                    values: cloud.values,
                    target,
                },
                method,
            )
        })
        .collect::<Result<_>>()?;
    let mut series = geom.hr_volume(t.n_timepoints(), t.spacing()[3])?;
    let mut covered = Vec::with_capacity(series.len());
    let mut coverage_fraction = Vec::with_capacity(volumes.len());
    for (n, v) in volumes.into_iter().enumerate() {
        series.volume_mut(n).copy_from_slice(&v.volume.data);
        coverage_fraction.push(v.coverage_fraction());
        covered.extend(v.covered);
    }
    Ok(SeriesInterpolation {
        series,
        covered,
        coverage_fraction,
    })
}
