//! Functional connectivity: ROI averaging, band-pass filtering, Pearson
//! correlation and carpet-plot export.

use std::fmt::Write as _;

use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{ensure_arg, ensure_dims, Error, Result};
use crate::phantom::LabelMap;
use crate::tensor4d::Volume4D;

pub const DEFAULT_BAND_HZ: (f64, f64) = (0.01, 0.1);

/// Region-averaged series, one row per region.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiTimeSeries {
    pub region_ids: Vec<u32>,
    pub series: Vec<Vec<f64>>,
    pub tr: f64,
}

impl RoiTimeSeries {
    pub fn new(region_ids: Vec<u32>, series: Vec<Vec<f64>>, tr: f64) -> Result<Self> {
        ensure_dims!(
            region_ids.len() == series.len(),
            "{} region ids for {} series",
            region_ids.len(),
            series.len()
        );
        ensure_arg!(!series.is_empty(), "no regions");
        let n = series[0].len();
        ensure_dims!(series.iter().all(|s| s.len() == n), "series differ in length");
        ensure_arg!(
            series.iter().flatten().all(|v| v.is_finite()),
            "series contain non-finite values"
        );
        ensure_arg!(tr > 0.0, "tr must be > 0");
        Ok(Self {
            region_ids,
            series,
            tr,
        })
    }

    pub fn n_regions(&self) -> usize {
        self.series.len()
    }

    pub fn n_timepoints(&self) -> usize {
        self.series[0].len()
    }

    pub fn nyquist(&self) -> f64 {
        0.5 / self.tr
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        for id in &self.region_ids {
            let _ = write!(s, ",region_{id}");
        }
        s.push('\n');
        for n in 0..self.n_timepoints() {
            let _ = write!(s, "{:?}", n as f64 * self.tr);
            for row in &self.series {
                let _ = write!(s, ",{:?}", row[n]);
            }
            s.push('\n');
        }
        s
    }
}

fn check_labels(x: &Volume4D, labels: &LabelMap) -> Result<()> {
    ensure_dims!(
        labels.dims == x.spatial_dims(),
        "label map {:?} does not match series spatial dims {:?}",
        labels.dims,
        x.spatial_dims()
    );
    Ok(())
}

/// Mean of each labelled region at every timepoint.
pub fn roi_average(x: &Volume4D, labels: &LabelMap) -> Result<RoiTimeSeries> {
    check_labels(x, labels)?;
    let ids = labels.region_ids();
    ensure_arg!(!ids.is_empty(), "label map has no regions");
    let series = ids
        .par_iter()
        .map(|&id| {
            let voxels: Vec<usize> = labels
                .labels
                .iter()
                .enumerate()
                .filter(|(_, l)| **l == id)
                .map(|(i, _)| i)
                .collect();
            (0..x.n_timepoints())
                .map(|n| {
                    let v = x.volume(n);
                    voxels.iter().map(|&i| v[i]).sum::<f64>() / voxels.len() as f64
                })
                .collect()
        })
        .collect();
    RoiTimeSeries::new(ids, series, x.spacing()[3])
}

/// Zero-phase FFT mask keeping `low <= |f| <= high`.
///
/// The mean survives only when `low == 0`.
pub fn bandpass(ts: &RoiTimeSeries, low: f64, high: f64) -> Result<RoiTimeSeries> {
    let nyq = ts.nyquist();
    ensure_arg!(
        low >= 0.0 && low < high && high <= nyq,
        "band ({low}, {high}) Hz must satisfy 0 <= low < high <= {nyq}"
    );
    let n = ts.n_timepoints();
    let df = 1.0 / (n as f64 * ts.tr);
    let keep: Vec<bool> = (0..n)
        .map(|k| {
            let f = k.min(n - k) as f64 * df;
            f >= low && f <= high
        })
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let series = ts
        .series
        .iter()
        .map(|row| {
            let mut buf: Vec<Complex<f64>> = row.iter().map(|&v| Complex::new(v, 0.0)).collect();
            fwd.process(&mut buf);
            for (c, k) in buf.iter_mut().zip(&keep) {
                if !k {
                    *c = Complex::new(0.0, 0.0);
                }
            }
            inv.process(&mut buf);
            buf.iter().map(|c| c.re / n as f64).collect()
        })
        .collect();
    RoiTimeSeries::new(ts.region_ids.clone(), series, ts.tr)
}

/// Symmetric Pearson correlation matrix with unit diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct FcMatrix {
    pub region_ids: Vec<u32>,
    /// Row-major `R x R`.
    pub values: Vec<f64>,
}

impl FcMatrix {
    pub fn size(&self) -> usize {
        self.region_ids.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size() + j]
    }

    /// Frobenius norm of the difference to another matrix over the same regions.
    pub fn distance(&self, other: &FcMatrix) -> Result<f64> {
        ensure_dims!(
            self.region_ids == other.region_ids,
            "FC matrices cover different regions"
        );
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("region");
        for id in &self.region_ids {
            let _ = write!(s, ",{id}");
        }
        s.push('\n');
        for (i, id) in self.region_ids.iter().enumerate() {
            let _ = write!(s, "{id}");
            for j in 0..self.size() {
                let _ = write!(s, ",{:?}", self.get(i, j));
            }
            s.push('\n');
        }
        s
    }
}

fn centered(row: &[f64]) -> (Vec<f64>, f64) {
    let mean = row.iter().sum::<f64>() / row.len() as f64;
    let c: Vec<f64> = row.iter().map(|v| v - mean).collect();
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    (c, norm)
}

pub fn pearson_fc(ts: &RoiTimeSeries) -> Result<FcMatrix> {
    let r = ts.n_regions();
    ensure_arg!(r >= 2, "FC needs at least 2 regions, got {r}");
    ensure_arg!(ts.n_timepoints() >= 3, "FC needs at least 3 timepoints");
    let rows: Vec<(Vec<f64>, f64)> = ts.series.iter().map(|s| centered(s)).collect();
    for ((_, norm), id) in rows.iter().zip(&ts.region_ids) {
        if *norm == 0.0 {
            return Err(Error::Numeric(format!(
                "region {id} has a constant series; its correlation is undefined"
            )));
        }
    }
    let upper: Vec<Vec<f64>> = (0..r)
        .into_par_iter()
        .map(|i| {
            (i + 1..r)
                .map(|j| {
                    let dot: f64 = rows[i].0.iter().zip(&rows[j].0).map(|(a, b)| a * b).sum();
                    (dot / (rows[i].1 * rows[j].1)).clamp(-1.0, 1.0)
                })
                .collect()
        })
        .collect();
    let mut values = vec![0.0; r * r];
    for i in 0..r {
        values[i * r + i] = 1.0;
        for (off, v) in upper[i].iter().enumerate() {
            let j = i + 1 + off;
            values[i * r + j] = *v;
            values[j * r + i] = *v;
        }
    }
    Ok(FcMatrix {
        region_ids: ts.region_ids.clone(),
        values,
    })
}

/// Voxel-by-time matrix of z-scored series, rows grouped by region.
#[derive(Clone, Debug, PartialEq)]
pub struct Carpet {
    pub rows: Vec<Vec<f64>>,
    /// Flat voxel index of each row.
    pub voxels: Vec<usize>,
    /// `(region, first_row, end_row)` with `end_row` exclusive.
    pub boundaries: Vec<(u32, usize, usize)>,
}

impl Carpet {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Mean absolute z over all rows at timepoint `n`.
    pub fn mean_abs_z(&self, n: usize) -> f64 {
        self.rows.iter().map(|r| r[n].abs()).sum::<f64>() / self.rows.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(s, "{}", line.join(","));
        }
        s
    }

    pub fn boundaries_csv(&self) -> String {
        let mut s = String::from("region,first_row,end_row\n");
        for (id, a, b) in &self.boundaries {
            let _ = writeln!(s, "{id},{a},{b}");
        }
        s
    }
}

/// Z-scores every labelled voxel's series; a constant series maps to zeros.
pub fn carpet_export(x: &Volume4D, labels: &LabelMap) -> Result<Carpet> {
    check_labels(x, labels)?;
    let ids = labels.region_ids();
    ensure_arg!(!ids.is_empty(), "label map selects no voxels");
    let n_t = x.n_timepoints();
    let mut voxels = Vec::new();
    let mut boundaries = Vec::new();
    for &id in &ids {
        let start = voxels.len();
        voxels.extend(
            labels
                .labels
                .iter()
                .enumerate()
                .filter(|(_, l)| **l == id)
                .map(|(i, _)| i),
        );
        boundaries.push((id, start, voxels.len()));
    }
    let rows = voxels
        .par_iter()
        .map(|&i| {
            let s: Vec<f64> = (0..n_t).map(|n| x.volume(n)[i]).collect();
            let mean = s.iter().sum::<f64>() / n_t as f64;
            let sd = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n_t as f64).sqrt();
            if sd == 0.0 {
                vec![0.0; n_t]
            } else {
                s.iter().map(|v| (v - mean) / sd).collect()
            }
        })
        .collect();
    Ok(Carpet {
        rows,
        voxels,
        boundaries,
    })
}
