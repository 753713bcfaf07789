//! Image quality measures: Laplacian sharpness, temporal SD, SSIM, SNR and PSNR.
//!
//! Masks are spatial `&[bool]` in `b,k,h` order. Neighbourhood measures
//! (Laplacian, SSIM windows) read unmasked neighbours; only the averaging
//! is restricted to the mask.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{ensure_arg, ensure_dims, Error, Result};
use crate::geometry::gaussian_taps;
use crate::tensor4d::{Volume3D, Volume4D};

pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_RADIUS: usize = 5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_mask(mask: Option<&[bool]>, len: usize) -> Result<usize> {
    match mask {
        None => Ok(len),
        Some(m) => {
            ensure_dims!(m.len() == len, "mask has {} entries, volume has {}", m.len(), len);
            let count = m.iter().filter(|v| **v).count();
            ensure_arg!(count > 0, "mask selects no voxels");
            Ok(count)
        }
    }
}

fn in_mask(mask: Option<&[bool]>, i: usize) -> bool {
    mask.is_none_or(|m| m[i])
}

/// 6-neighbour Laplacian with replicate boundary.
pub fn laplacian(v: &Volume3D) -> Volume3D {
    let [nx, ny, nz] = v.dims;
    let d = &v.data;
    let mut out = vec![0.0; d.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = x + nx * (y + ny * z);
                let c = d[i];
                let mut s = -6.0 * c;
                s += if x > 0 { d[i - 1] } else { c };
                s += if x + 1 < nx { d[i + 1] } else { c };
                s += if y > 0 { d[i - nx] } else { c };
                s += if y + 1 < ny { d[i + nx] } else { c };
                s += if z > 0 { d[i - nx * ny] } else { c };
                s += if z + 1 < nz { d[i + nx * ny] } else { c };
                out[i] = s;
            }
        }
    }
    Volume3D {
        dims: v.dims,
        spacing: v.spacing,
        data: out,
    }
}

/// Population variance of the Laplacian over the mask.
pub fn sharpness_laplacian(v: &Volume3D, mask: Option<&[bool]>) -> Result<f64> {
    let count = check_mask(mask, v.len())? as f64;
    let lap = laplacian(v);
    let vals = lap.data.iter().enumerate().filter(|(i, _)| in_mask(mask, *i));
    let mean = vals.clone().map(|(_, l)| l).sum::<f64>() / count;
    Ok(vals.map(|(_, l)| (l - mean) * (l - mean)).sum::<f64>() / count)
}

/// Sharpness of the temporal mean volume of a series.
pub fn series_sharpness(x: &Volume4D, mask: Option<&[bool]>) -> Result<f64> {
    sharpness_laplacian(&x.temporal_mean(), mask)
}

/// Per-voxel temporal standard deviation (denominator N) and its masked mean.
pub fn temporal_sd(x: &Volume4D, mask: Option<&[bool]>) -> Result<(Volume3D, f64)> {
    let n_t = x.n_timepoints();
    ensure_arg!(n_t >= 2, "temporal SD needs at least 2 timepoints, got {n_t}");
    let per_vol = x.voxels_per_volume();
    let count = check_mask(mask, per_vol)?;
    let d = x.data();
    let sd: Vec<f64> = (0..per_vol)
        .map(|i| {
            let mean = (0..n_t).map(|n| d[i + n * per_vol]).sum::<f64>() / n_t as f64;
            let var = (0..n_t)
                .map(|n| (d[i + n * per_vol] - mean).powi(2))
                .sum::<f64>()
                / n_t as f64;
            var.sqrt()
        })
        .collect();
    let mean = sd
        .iter()
        .enumerate()
        .filter(|(i, _)| in_mask(mask, *i))
        .map(|(_, s)| s)
        .sum::<f64>()
        / count as f64;
    let s = x.spacing();
    Ok((
        Volume3D {
            dims: x.spatial_dims(),
            spacing: [s[0], s[1], s[2]],
            data: sd,
        },
        mean,
    ))
}

/// Separable Gaussian filter; taps falling outside the volume are dropped and
/// the remaining weights renormalized.
fn window_filter(data: &[f64], dims: [usize; 3], taps: &[f64]) -> Vec<f64> {
    let r = taps.len() / 2;
    let mut cur = data.to_vec();
    for axis in 0..3 {
        let stride = match axis {
            0 => 1,
            1 => dims[0],
            _ => dims[0] * dims[1],
        };
        let n = dims[axis];
        let mut next = vec![0.0; cur.len()];
        for (i, out) in next.iter_mut().enumerate() {
            let pos = (i / stride) % n;
            let lo = pos.saturating_sub(r);
            let hi = (pos + r).min(n - 1);
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for q in lo..=hi {
                let w = taps[q + r - pos];
                acc += w * cur[i - pos * stride + q * stride];
                wsum += w;
            }
            *out = acc / wsum;
        }
        cur = next;
    }
    cur
}

fn ssim_taps() -> Vec<f64> {
    let raw: Vec<f64> = (-(SSIM_RADIUS as isize)..=SSIM_RADIUS as isize)
        .map(|i| (-((i * i) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / s).collect()
}

/// Local SSIM map with dynamic range `l`.
pub fn ssim_map(a: &Volume3D, b: &Volume3D, l: f64) -> Result<Volume3D> {
    ensure_dims!(a.dims == b.dims, "ssim inputs differ in shape: {:?} vs {:?}", a.dims, b.dims);
    ensure_arg!(l > 0.0 && l.is_finite(), "dynamic range must be > 0, got {l}");
    let taps = ssim_taps();
    let c1 = (SSIM_K1 * l).powi(2);
    let c2 = (SSIM_K2 * l).powi(2);
    let aa: Vec<f64> = a.data.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.data.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    let inputs = [&a.data[..], &b.data[..], &aa[..], &bb[..], &ab[..]];
    let f: Vec<Vec<f64>> = inputs
        .par_iter()
        .map(|d| window_filter(d, a.dims, &taps))
        .collect();
    let data = (0..a.len())
        .map(|i| {
            let (ma, mb) = (f[0][i], f[1][i]);
            let va = f[2][i] - ma * ma;
            let vb = f[3][i] - mb * mb;
            let cov = f[4][i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .collect();
    Ok(Volume3D {
        dims: a.dims,
        spacing: a.spacing,
        data,
    })
}

/// Joint intensity range `max(a ∪ b) - min(a ∪ b)` over the mask.
pub fn dynamic_range(a: &Volume3D, b: &Volume3D, mask: Option<&[bool]>) -> f64 {
    let (lo, hi) = a
        .data
        .iter()
        .zip(&b.data)
        .enumerate()
        .filter(|(i, _)| in_mask(mask, *i))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, (x, y))| {
            (lo.min(*x).min(*y), hi.max(*x).max(*y))
        });
    hi - lo
}

/// Mean local SSIM over the mask with an explicit dynamic range.
pub fn ssim_with_range(a: &Volume3D, b: &Volume3D, mask: Option<&[bool]>, l: f64) -> Result<f64> {
    let count = check_mask(mask, a.len())?;
    let map = ssim_map(a, b, l)?;
    Ok(map
        .data
        .iter()
        .enumerate()
        .filter(|(i, _)| in_mask(mask, *i))
        .map(|(_, s)| s)
        .sum::<f64>()
        / count as f64)
}

/// Mean local SSIM, dynamic range taken jointly from both inputs.
pub fn ssim(a: &Volume3D, b: &Volume3D, mask: Option<&[bool]>) -> Result<f64> {
    ensure_dims!(a.dims == b.dims, "ssim inputs differ in shape: {:?} vs {:?}", a.dims, b.dims);
    check_mask(mask, a.len())?;
    let l = dynamic_range(a, b, mask);
    ensure_arg!(l > 0.0, "both ssim inputs are the same constant; dynamic range is 0");
    ssim_with_range(a, b, mask, l)
}

/// Mean over timepoints of per-volume SSIM against a reference series.
pub fn series_ssim(reference: &Volume4D, test: &Volume4D, mask: Option<&[bool]>) -> Result<f64> {
    ensure_dims!(
        reference.dims() == test.dims(),
        "series differ in shape: {:?} vs {:?}",
        reference.dims(),
        test.dims()
    );
    let per: Vec<Result<f64>> = (0..reference.n_timepoints())
        .into_par_iter()
        .map(|n| ssim(&reference.volume3d(n), &test.volume3d(n), mask))
        .collect();
    let mut acc = 0.0;
    for s in per {
        acc += s?;
    }
    Ok(acc / reference.n_timepoints() as f64)
}

fn powers(reference: &[f64], test: &[f64], mask: Option<&[bool]>) -> Result<(f64, f64, f64, usize)> {
    ensure_dims!(
        reference.len() == test.len(),
        "inputs differ in length: {} vs {}",
        reference.len(),
        test.len()
    );
    let count = check_mask(mask, reference.len())?;
    let mut signal = 0.0;
    let mut error = 0.0;
    let mut peak = 0.0f64;
    for (i, (r, t)) in reference.iter().zip(test).enumerate() {
        if in_mask(mask, i) {
            signal += r * r;
            error += (r - t) * (r - t);
            peak = peak.max(r.abs());
        }
    }
    Ok((signal, error, peak, count))
}

/// `10 log10(Σ ref² / Σ (ref - test)²)` in dB. Returns `+inf` when the two agree exactly.
pub fn snr(reference: &[f64], test: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    let (signal, error, _, _) = powers(reference, test, mask)?;
    if signal == 0.0 {
        return Err(Error::Argument("reference has zero power".into()));
    }
    if error == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / error).log10())
}

/// `10 log10(peak² / MSE)` with `peak = max |ref|` in dB. Returns `+inf` when the two agree exactly.
pub fn psnr(reference: &[f64], test: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    let (_, error, peak, count) = powers(reference, test, mask)?;
    if peak == 0.0 {
        return Err(Error::Argument("reference has zero peak".into()));
    }
    if error == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / (error / count as f64)).log10())
}

/// Repeats a spatial mask over every timepoint.
pub fn broadcast_mask(mask: &[bool], n_timepoints: usize) -> Vec<bool> {
    mask.repeat(n_timepoints)
}

/// Separable Gaussian smoothing with replicate boundary, FWHM in voxels per axis.
pub fn gaussian_smooth(v: &Volume3D, fwhm_vox: [f64; 3]) -> Result<Volume3D> {
    let mut cur = v.data.clone();
    let dims = v.dims;
    for axis in 0..3 {
        let taps = gaussian_taps(fwhm_vox[axis], 1.0)?;
        let r = (taps.len() / 2) as isize;
        let stride = [1, dims[0], dims[0] * dims[1]][axis];
        let n = dims[axis] as isize;
        let mut next = vec![0.0; cur.len()];
        for (i, out) in next.iter_mut().enumerate() {
            let pos = ((i / stride) % dims[axis]) as isize;
            let base = i as isize - pos * stride as isize;
            *out = taps
                .iter()
                .enumerate()
                .map(|(t, w)| {
                    let q = (pos + t as isize - r).clamp(0, n - 1);
                    w * cur[(base + q * stride as isize) as usize]
                })
                .sum();
        }
        cur = next;
    }
    Ok(Volume3D {
        dims,
        spacing: v.spacing,
        data: cur,
    })
}

/// Scores of one series.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodMetrics {
    pub method: String,
    pub sharpness: f64,
    pub mean_temporal_sd: f64,
    pub ssim: Option<f64>,
    pub snr_db: Option<f64>,
    pub psnr_db: Option<f64>,
}

/// Scores a series; reference-based scores need a reference of the same shape.
pub fn evaluate_series(
    method: &str,
    x: &Volume4D,
    reference: Option<&Volume4D>,
    mask: Option<&[bool]>,
) -> Result<MethodMetrics> {
    let sharpness = series_sharpness(x, mask)?;
    let (_, mean_temporal_sd) = temporal_sd(x, mask)?;
    let (ssim, snr_db, psnr_db) = match reference {
        Some(r) => {
            let m4 = mask.map(|m| broadcast_mask(m, x.n_timepoints()));
            (
                Some(series_ssim(r, x, mask)?),
                Some(snr(r.data(), x.data(), m4.as_deref())?),
                Some(psnr(r.data(), x.data(), m4.as_deref())?),
            )
        }
        None => (None, None, None),
    };
    Ok(MethodMetrics {
        method: method.to_string(),
        sharpness,
        mean_temporal_sd,
        ssim,
        snr_db,
        psnr_db,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MethodMetrics>,
    /// Method whose sharpness and SD the deltas are taken against.
    pub baseline: Option<String>,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "method,sharpness,mean_temporal_sd,ssim,snr_db,psnr_db,delta_sharpness,delta_sd";

    fn baseline_row(&self) -> Option<&MethodMetrics> {
        let name = self.baseline.as_deref()?;
        self.rows.iter().find(|r| r.method == name)
    }

    fn deltas(&self, r: &MethodMetrics) -> (Option<f64>, Option<f64>) {
        match self.baseline_row() {
            Some(b) => (
                Some(r.sharpness - b.sharpness),
                Some(r.mean_temporal_sd - b.mean_temporal_sd),
            ),
            None => (None, None),
        }
    }

    pub fn to_csv(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map_or_else(String::new, |x| format!("{x:?}"))
        }
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let (ds, dsd) = self.deltas(r);
            let _ = writeln!(
                s,
                "{},{:?},{:?},{},{},{},{},{}",
                r.method,
                r.sharpness,
                r.mean_temporal_sd,
                opt(r.ssim),
                opt(r.snr_db),
                opt(r.psnr_db),
                opt(ds),
                opt(dsd)
            );
        }
        s
    }

    pub fn to_table(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
        }
        let cols = ["method", "sharpness", "mean SD", "SSIM", "SNR dB", "PSNR dB", "Δ sharp", "Δ SD"];
        let mut cells: Vec<Vec<String>> = vec![cols.iter().map(|c| c.to_string()).collect()];
        for r in &self.rows {
            let (ds, dsd) = self.deltas(r);
            cells.push(vec![
                r.method.clone(),
                format!("{:.6}", r.sharpness),
                format!("{:.6}", r.mean_temporal_sd),
                opt(r.ssim),
                opt(r.snr_db),
                opt(r.psnr_db),
                opt(ds),
                opt(dsd),
            ]);
        }
        let widths: Vec<usize> = (0..cols.len())
            .map(|c| cells.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut s = String::new();
        for (i, row) in cells.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect();
            let _ = writeln!(s, "{}", line.join("  "));
            if i == 0 {
                let _ = writeln!(s, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(dims: [usize; 3], f: impl Fn(usize, usize, usize) -> f64) -> Volume3D {
        let mut data = Vec::new();
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Volume3D::new(dims, data).unwrap()
    }

    #[test]
    fn constant_volume_has_zero_sharpness() {
        let v = vol([6, 5, 4], |_, _, _| 0.7);
        assert_eq!(sharpness_laplacian(&v, None).unwrap(), 0.0);
    }

    #[test]
    fn impulse_sharpness_closed_form() {
        let dims = [9, 9, 9];
        let v = vol(dims, |x, y, z| if (x, y, z) == (4, 4, 4) { 1.0 } else { 0.0 });
        let m = 729.0;
        // Laplacian: -6 at the impulse, +1 at its six neighbours, mean 0
        let expect = (36.0 + 6.0) / m;
        assert!((sharpness_laplacian(&v, None).unwrap() - expect).abs() < 1e-10);
    }

    #[test]
    fn alternating_voxel_sd_is_half() {
        let x = Volume4D::from_vec([1, 1, 1, 4], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let (map, mean) = temporal_sd(&x, None).unwrap();
        assert_eq!(map.data, vec![0.5]);
        assert_eq!(mean, 0.5);
        let one = Volume4D::zeros([2, 2, 2, 1]).unwrap();
        assert!(temporal_sd(&one, None).is_err());
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let v = vol([12, 10, 8], |x, y, z| ((x * 3 + y * 5 + z * 7) % 11) as f64 / 10.0);
        assert!((ssim(&v, &v, None).unwrap() - 1.0).abs() < 1e-12);
        let max = v.data.iter().cloned().fold(f64::MIN, f64::max);
        let inv = Volume3D::new(v.dims, v.data.iter().map(|a| max - a).collect()).unwrap();
        assert!(ssim(&v, &inv, None).unwrap() < 1.0);
        let w = vol([12, 10, 8], |x, _, _| x as f64);
        let a = ssim(&v, &w, None).unwrap();
        assert_eq!(a, ssim(&w, &v, None).unwrap());
    }

    #[test]
    fn snr_formula_and_sentinel() {
        let r = vec![1.0, -1.0, 1.0, -1.0];
        assert_eq!(snr(&r, &r, None).unwrap(), f64::INFINITY);
        assert_eq!(psnr(&r, &r, None).unwrap(), f64::INFINITY);
        // power 4, error power 0.04 -> 20 dB
        let t: Vec<f64> = r.iter().map(|v| v + 0.1).collect();
        assert!((snr(&r, &t, None).unwrap() - 20.0).abs() < 1e-12);
        assert!(snr(&[0.0; 4], &t, None).is_err());
    }

    #[test]
    fn smoothing_preserves_constants() {
        let v = vol([7, 6, 5], |_, _, _| 2.5);
        let s = gaussian_smooth(&v, [2.0, 2.0, 1.0]).unwrap();
        assert!(s.data.iter().all(|x| (x - 2.5).abs() < 1e-12));
    }

    #[test]
    fn empty_mask_is_rejected() {
        let v = vol([3, 3, 3], |x, _, _| x as f64);
        assert!(sharpness_laplacian(&v, Some(&[false; 27])).is_err());
    }

    #[test]
    fn report_csv_and_table() {
        let row = |m: &str, s: f64| MethodMetrics {
            method: m.into(),
            sharpness: s,
            mean_temporal_sd: 0.5,
            ssim: None,
            snr_db: Some(10.0),
            psnr_db: None,
        };
        let rep = MetricsReport {
            rows: vec![row("observed", 1.0), row("lrtv", 3.0)],
            baseline: Some("observed".into()),
        };
        let csv = rep.to_csv();
        assert_eq!(csv.lines().nth(2), Some("lrtv,3.0,0.5,,10.0,,2.0,0.0"));
        assert_eq!(rep.to_table().lines().count(), 4);
    }
}
