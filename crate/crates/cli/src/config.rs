//! Declarative run configuration (JSON).

use std::path::{Path, PathBuf};

use lrtv4d_core::geometry::{interleaved_order, BlurSpec};
use lrtv4d_core::{AcquisitionGeometry, DegradationSpec, PhantomSpec, ReconConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::volume_io::Dtype;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub hr_dims: [usize; 3],
    pub downsample: [usize; 3],
    pub in_plane_spacing_mm: f64,
    pub slice_thickness_mm: f64,
    /// Defaults to the slice profile of the spacing and thickness.
    pub blur_fwhm_mm: Option<[f64; 3]>,
    /// Defaults to even slices then odd slices.
    pub interleave: Option<Vec<usize>>,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        let g = AcquisitionGeometry::desk();
        Self {
            hr_dims: g.hr_dims,
            downsample: g.downsample,
            in_plane_spacing_mm: g.in_plane_spacing,
            slice_thickness_mm: g.slice_thickness,
            blur_fwhm_mm: None,
            interleave: None,
        }
    }
}

impl GeometryConfig {
    pub fn build(&self) -> CliResult<AcquisitionGeometry> {
        let mut g = AcquisitionGeometry::new(
            self.hr_dims,
            self.downsample,
            self.in_plane_spacing_mm,
            self.slice_thickness_mm,
        )?;
        if let Some(fwhm_mm) = self.blur_fwhm_mm {
            g = g.with_blur(BlurSpec { fwhm_mm })?;
        }
        if let Some(order) = &self.interleave {
            g.interleave = order.clone();
        } else {
            g.interleave = interleaved_order(g.lr_dims()[2]);
        }
        g.validate()?;
        Ok(g)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FcOptions {
    /// Band-pass edges in Hz; `null` skips filtering.
    pub band_hz: Option<[f64; 2]>,
}

impl Default for FcOptions {
    fn default() -> Self {
        let (lo, hi) = lrtv4d_core::fc::DEFAULT_BAND_HZ;
        Self {
            band_hz: Some([lo, hi]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsOptions {
    /// Name of the series the deltas are reported against.
    pub baseline: Option<String>,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        Self {
            baseline: Some("observed".into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub phantom: PhantomSpec,
    pub degradation: DegradationSpec,
    pub recon: ReconConfig,
    pub metrics: MetricsOptions,
    pub fc: FcOptions,
    /// Overrides the phantom and degradation seeds when set.
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub dtype: Dtype,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            geometry: GeometryConfig::default(),
            phantom: PhantomSpec::default(),
            degradation: DegradationSpec::default(),
            recon: ReconConfig::default(),
            metrics: MetricsOptions::default(),
            fc: FcOptions::default(),
            seed: None,
            output_dir: PathBuf::from("out"),
            dtype: Dtype::Float32,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let geom = self.geometry.build()?;
        self.phantom.validate()?;
        self.degradation.validate()?;
        self.recon.validate()?;
        if self.phantom.hr_dims != geom.hr_dims {
            return Err(CliError::Validation(format!(
                "phantom.hr_dims {:?} differs from geometry.hr_dims {:?}",
                self.phantom.hr_dims, geom.hr_dims
            )));
        }
        if let Some([lo, hi]) = self.fc.band_hz {
            let nyq = 0.5 / self.phantom.tr;
            if !(lo >= 0.0 && lo < hi && hi <= nyq) {
                return Err(CliError::Validation(format!(
                    "fc.band_hz ({lo}, {hi}) must satisfy 0 <= low < high <= {nyq}"
                )));
            }
        }
        Ok(())
    }

    /// Applies a command-line seed and output directory.
    pub fn with_overrides(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        if let Some(s) = seed {
            self.seed = Some(s);
        }
        if let Some(s) = self.seed {
            self.phantom.seed = s;
            self.degradation.seed = s;
        }
        if let Some(o) = out {
            self.output_dir = o;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
        assert_eq!(cfg.geometry.build().unwrap(), AcquisitionGeometry::desk());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"recon": {"lambda": 1}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"extra": 1}"#).is_err());
    }

    #[test]
    fn seed_override_reaches_both_specs() {
        let cfg = RunConfig::default().with_overrides(Some(7), None);
        assert_eq!(cfg.phantom.seed, 7);
        assert_eq!(cfg.degradation.seed, 7);
    }

    #[test]
    fn mismatched_phantom_dims_fail_validation() {
        let mut cfg = RunConfig::default();
        cfg.phantom.hr_dims = [16, 16, 8];
        assert!(matches!(cfg.validate(), Err(CliError::Validation(_))));
    }
}
