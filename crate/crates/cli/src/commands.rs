//! Subcommand implementations. Each validates all inputs before staging any output.

use std::path::{Path, PathBuf};

use lrtv4d_core::fc::{bandpass, carpet_export, pearson_fc, roi_average};
use lrtv4d_core::interp3d::reconstruct_series_3d;
use lrtv4d_core::metrics::evaluate_series;
use lrtv4d_core::phantom::{degrade, lr_labels, make_motion, make_phantom_on};
use lrtv4d_core::recon::reconstruct;
use lrtv4d_core::{InterpMethod, LabelMap, MetricsReport, MotionTrajectory, Volume4D};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::volume_io::{labels_to_volume, read_labels, read_volume, Staged};

/// Reconstruction method of `reconstruct`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Lrtv,
    Baseline(InterpMethod),
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("lrtv") {
            Ok(Method::Lrtv)
        } else {
            s.parse::<InterpMethod>().map(Method::Baseline).map_err(|e| e.to_string())
        }
    }
}

/// Paths written by a command, in commit order.
pub type Written = Vec<PathBuf>;

fn out(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

pub fn cmd_phantom(cfg: &RunConfig) -> CliResult<Written> {
    let geom = cfg.geometry.build()?;
    let (truth, labels) = make_phantom_on(&cfg.phantom, &geom)?;
    let mut s = Staged::new();
    s.add_volume(&out(cfg, "truth.json"), &truth, cfg.dtype)?;
    s.add_volume(&out(cfg, "labels.json"), &labels_to_volume(&labels), cfg.dtype)?;
    s.commit()
}

pub fn cmd_degrade(cfg: &RunConfig, truth: &Path, labels: Option<&Path>) -> CliResult<Written> {
    let geom = cfg.geometry.build()?;
    let x = read_volume(truth)?;
    let lr_l = labels.map(|p| read_labels(p).and_then(|l| Ok(lr_labels(&l, &geom)?))).transpose()?;
    let motion = make_motion(&cfg.degradation, &geom, x.n_timepoints())?;
    let t = degrade(&x, &geom, &motion, cfg.degradation.noise_sigma, cfg.degradation.seed)?;
    let mut s = Staged::new();
    s.add_volume(&out(cfg, "observed.json"), &t, cfg.dtype)?;
    s.add(&out(cfg, "motion.csv"), motion.to_csv().as_bytes())?;
    if let Some(l) = lr_l {
        s.add_volume(&out(cfg, "labels_lr.json"), &labels_to_volume(&l), cfg.dtype)?;
    }
    s.commit()
}

fn read_motion(path: &Path) -> CliResult<MotionTrajectory> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    MotionTrajectory::from_csv(&text).map_err(|e| CliError::io(path, e))
}

/// Result of `reconstruct`; `warning` is set when the solver hit its iteration cap.
pub struct ReconOutcome {
    pub written: Written,
    pub warning: Option<String>,
}

pub fn cmd_reconstruct(cfg: &RunConfig, observed: &Path, motion: &Path, method: Method) -> CliResult<ReconOutcome> {
    match method {
        Method::Lrtv => reconstruct_lrtv(cfg, observed, motion),
        Method::Baseline(b) => Ok(ReconOutcome {
            written: cmd_interp(cfg, observed, motion, b)?,
            warning: None,
        }),
    }
}

fn reconstruct_lrtv(cfg: &RunConfig, observed: &Path, motion: &Path) -> CliResult<ReconOutcome> {
    let geom = cfg.geometry.build()?;
    let t = read_volume(observed)?;
    let mt = read_motion(motion)?;
    let (x, report) = reconstruct(&t, &geom, &mt, &cfg.recon)?;
    let mut s = Staged::new();
    s.add_volume(&out(cfg, "recon_lrtv.json"), &x, cfg.dtype)?;
    s.add(&out(cfg, "convergence.csv"), report.to_csv().as_bytes())?;
    Ok(ReconOutcome {
        written: s.commit()?,
        warning: report.warning,
    })
}

pub fn cmd_interp(cfg: &RunConfig, observed: &Path, motion: &Path, method: InterpMethod) -> CliResult<Written> {
    let geom = cfg.geometry.build()?;
    let t = read_volume(observed)?;
    let mt = read_motion(motion)?;
    let r = reconstruct_series_3d(&t, &mt, &geom, method)?;
    let mask = r
        .series
        .with_data(r.covered.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect())?;
    let name = method.name();
    let mut s = Staged::new();
    s.add_volume(&out(cfg, &format!("recon_{name}.json")), &r.series, cfg.dtype)?;
    s.add_volume(&out(cfg, &format!("coverage_{name}.json")), &mask, cfg.dtype)?;
    s.commit()
}

/// `NAME=PATH` pair of the metrics command.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NamedPath {
    pub name: String,
    pub path: PathBuf,
}

impl std::str::FromStr for NamedPath {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('=') {
            Some((n, p)) if !n.is_empty() && !p.is_empty() => Ok(Self {
                name: n.to_string(),
                path: PathBuf::from(p),
            }),
            _ => Err(format!("expected NAME=PATH, got '{s}'")),
        }
    }
}

fn mask_for(x: &Volume4D, labels: &[LabelMap], name: &str) -> CliResult<Option<Vec<bool>>> {
    if labels.is_empty() {
        return Ok(None);
    }
    labels
        .iter()
        .find(|l| l.dims == x.spatial_dims())
        .map(|l| Some(l.support()))
        .ok_or_else(|| {
            CliError::Validation(format!(
                "no label map matches the spatial dims {:?} of series '{name}'",
                x.spatial_dims()
            ))
        })
}

pub fn cmd_metrics(
    cfg: &RunConfig,
    series: &[NamedPath],
    reference: Option<&Path>,
    labels: &[PathBuf],
) -> CliResult<(Written, MetricsReport)> {
    if series.is_empty() {
        return Err(CliError::Validation("metrics needs at least one --series".into()));
    }
    let reference = reference.map(read_volume).transpose()?;
    let labels: Vec<LabelMap> = labels.iter().map(|p| read_labels(p)).collect::<CliResult<_>>()?;
    let mut rows = Vec::new();
    for sp in series {
        let x = read_volume(&sp.path)?;
        let mask = mask_for(&x, &labels, &sp.name)?;
        // reference scores only apply on the reference grid
        let r = reference.as_ref().filter(|r| r.dims() == x.dims());
        rows.push(evaluate_series(&sp.name, &x, r, mask.as_deref())?);
    }
    let report = MetricsReport {
        rows,
        baseline: cfg.metrics.baseline.clone(),
    };
    let mut s = Staged::new();
    s.add(&out(cfg, "metrics.csv"), report.to_csv().as_bytes())?;
    Ok((s.commit()?, report))
}

pub fn cmd_fc(cfg: &RunConfig, series: &Path, labels: &Path) -> CliResult<Written> {
    let x = read_volume(series)?;
    let l = read_labels(labels)?;
    let mut ts = roi_average(&x, &l)?;
    if let Some([lo, hi]) = cfg.fc.band_hz {
        ts = bandpass(&ts, lo, hi)?;
    }
    let fc = pearson_fc(&ts)?;
    let carpet = carpet_export(&x, &l)?;
    let mut s = Staged::new();
    s.add(&out(cfg, "fc.csv"), fc.to_csv().as_bytes())?;
    s.add(&out(cfg, "roi_timeseries.csv"), ts.to_csv().as_bytes())?;
    s.add(&out(cfg, "carpet.csv"), carpet.to_csv().as_bytes())?;
    s.add(&out(cfg, "carpet_regions.csv"), carpet.boundaries_csv().as_bytes())?;
    s.commit()
}
