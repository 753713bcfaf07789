//! Motion-compensated 4D reconstruction of slice-scattered image time series.
//!
//! The observation model maps a latent high-resolution series through
//! per-slice rigid motion, a separable blur and decimation. [`recon`] inverts
//! it with an ADMM solver combining weighted trace norms of the four tensor
//! unfoldings with spatial total variation. [`interp3d`] provides the
//! per-volume scattered-data baselines, [`phantom`] synthesizes ground truth
//! and observations, and [`metrics`] / [`fc`] score the results.

pub mod error;
pub mod fc;
pub mod geometry;
pub mod interp3d;
pub mod metrics;
pub mod phantom;
pub mod recon;
pub mod tensor4d;

pub use error::{Error, Result};
pub use geometry::{AcquisitionGeometry, BlurSpec, MotionTrajectory, RigidTransform};
pub use fc::{FcMatrix, RoiTimeSeries};
pub use interp3d::{InterpMethod, ScatteredSamples};
pub use metrics::MetricsReport;
pub use phantom::{DegradationSpec, LabelMap, PhantomSpec};
pub use recon::{ConvergenceReport, ReconConfig, StepRule};
pub use tensor4d::{Matrix2D, Volume3D, Volume4D};
