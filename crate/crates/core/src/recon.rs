//! ADMM reconstruction of the latent 4D series.
//!
//! The objective is
//!
//! ```text
//! ‖mask ⊙ (A x - t)‖² + λ_rank Σ_i α_i ‖x_(i)‖_tr + λ_tv Σ_n TV_ε(x_n)
//! ```
//!
//! Each unfolding gets an auxiliary copy `Y_i` with scaled dual `U_i`. One
//! outer iteration runs a few Armijo gradient steps on the smooth
//! x-subproblem, thresholds the singular values of every `x + U_i`
//! unfolding, and takes a dual ascent step. Iteration stops once
//! `‖x^k - x^{k-1}‖ / ‖t‖` falls below `epsilon`.

use std::collections::VecDeque;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, ensure_dims, Error, Result};
use crate::geometry::{AcquisitionGeometry, ForwardModel, MotionTrajectory};
use crate::interp3d::{reconstruct_series_3d, InterpMethod};
use crate::tensor4d::{self, fold, svt, unfold, Volume4D};

/// Initial trial step of each Armijo search.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Always `init_step`.
    Fixed,
    /// Barzilai-Borwein estimate from the previous step, `init_step` before one exists.
    BarzilaiBorwein,
    /// Unit trial step along the gradient scaled by a per-voxel curvature bound.
    DiagonalScaling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    pub lambda_rank: f64,
    pub lambda_tv: f64,
    pub alpha: [f64; 4],
    pub rho: f64,
    /// Stopping threshold on the relative change of `x`.
    pub epsilon: f64,
    pub max_outer_iters: usize,
    /// Gradient steps on the x-subproblem per outer iteration.
    pub inner_steps: usize,
    pub init_step: f64,
    pub step_shrink: f64,
    pub max_backtracks: usize,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo_c: f64,
    pub step_rule: StepRule,
    /// Smoothing of the TV magnitude, in normalized intensity units.
    pub tv_smoothing: f64,
    /// Scale the observation to unit peak before solving.
    pub normalize: bool,
    /// Start the auxiliaries at zero instead of at the initial estimate.
    pub zero_aux_init: bool,
    /// Number of past iterates mixed by Anderson acceleration; 0 runs plain ADMM.
    pub anderson_memory: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            lambda_rank: 0.01,
            lambda_tv: 0.01,
            alpha: [0.25; 4],
            rho: 0.1,
            epsilon: 1e-5,
            max_outer_iters: 200,
            inner_steps: 5,
            init_step: 1e-2,
            step_shrink: 0.5,
            max_backtracks: 20,
            armijo_c: 1e-4,
            step_rule: StepRule::DiagonalScaling,
            tv_smoothing: 1e-3,
            normalize: true,
            zero_aux_init: false,
            anderson_memory: 5,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_arg!(
            self.lambda_rank >= 0.0 && self.lambda_tv >= 0.0,
            "regularization weights must be >= 0"
        );
        tensor4d::validate_alpha(&self.alpha)?;
        ensure_arg!(self.rho > 0.0, "rho must be > 0, got {}", self.rho);
        ensure_arg!(self.epsilon > 0.0, "epsilon must be > 0");
        ensure_arg!(self.max_outer_iters >= 1, "max_outer_iters must be >= 1");
        ensure_arg!(self.init_step > 0.0, "init_step must be > 0");
        ensure_arg!(
            self.step_shrink > 0.0 && self.step_shrink < 1.0,
            "step_shrink must lie in (0, 1)"
        );
        ensure_arg!(
            self.armijo_c > 0.0 && self.armijo_c < 1.0,
            "armijo_c must lie in (0, 1)"
        );
        ensure_arg!(self.tv_smoothing > 0.0, "tv_smoothing must be > 0");
        Ok(())
    }
}

/// Smoothed isotropic TV summed over volumes, spatial axes only:
/// `Σ sqrt(|∇x|² + ε²) - ε` with forward differences and replicate boundary.
pub fn tv_value(x: &Volume4D, eps: f64) -> f64 {
    let [nx, ny, nz, nt] = x.dims();
    let per: Vec<f64> = (0..nt)
        .into_par_iter()
        .map(|n| {
            let v = x.volume(n);
            let mut acc = 0.0;
            for z in 0..nz {
                for y in 0..ny {
                    for xi in 0..nx {
                        let (gx, gy, gz) = forward_diffs(v, [nx, ny, nz], xi, y, z);
                        acc += (gx * gx + gy * gy + gz * gz + eps * eps).sqrt() - eps;
                    }
                }
            }
            acc
        })
        .collect();
    per.iter().sum()
}

#[inline]
fn forward_diffs(v: &[f64], d: [usize; 3], x: usize, y: usize, z: usize) -> (f64, f64, f64) {
    let i = x + d[0] * (y + d[1] * z);
    let c = v[i];
    let gx = if x + 1 < d[0] { v[i + 1] - c } else { 0.0 };
    let gy = if y + 1 < d[1] { v[i + d[0]] - c } else { 0.0 };
    let gz = if z + 1 < d[2] { v[i + d[0] * d[1]] - c } else { 0.0 };
    (gx, gy, gz)
}

/// Gradient of [`tv_value`]: `Dᵀ (∇x / sqrt(|∇x|² + ε²))`.
pub fn tv_gradient(x: &Volume4D, eps: f64) -> Volume4D {
    let [nx, ny, nz, _] = x.dims();
    let per_vol = nx * ny * nz;
    let mut out = x.zeros_like();
    out.data_mut()
        .par_chunks_mut(per_vol)
        .enumerate()
        .for_each(|(n, dst)| {
            let v = x.volume(n);
            let mut px = vec![0.0; per_vol];
            let mut py = vec![0.0; per_vol];
            let mut pz = vec![0.0; per_vol];
            for z in 0..nz {
                for y in 0..ny {
                    for xi in 0..nx {
                        let (gx, gy, gz) = forward_diffs(v, [nx, ny, nz], xi, y, z);
                        let s = (gx * gx + gy * gy + gz * gz + eps * eps).sqrt();
                        let i = xi + nx * (y + ny * z);
                        px[i] = gx / s;
                        py[i] = gy / s;
                        pz[i] = gz / s;
                    }
                }
            }
            for z in 0..nz {
                for y in 0..ny {
                    for xi in 0..nx {
                        let i = xi + nx * (y + ny * z);
                        let mut g = -(px[i] + py[i] + pz[i]);
                        if xi > 0 {
                            g += px[i - 1];
                        }
                        if y > 0 {
                            g += py[i - nx];
                        }
                        if z > 0 {
                            g += pz[i - nx * ny];
                        }
                        dst[i] = g;
                    }
                }
            }
        });
    out
}

/// Per-voxel bound on the row sums of `|Hessian|` of [`tv_value`], from the
/// lagged-diffusivity majorizer `Σ_v |∇x_v|² / φ_v`.
pub fn tv_curvature_bound(x: &Volume4D, eps: f64) -> Volume4D {
    let [nx, ny, nz, _] = x.dims();
    let per_vol = nx * ny * nz;
    let mut out = x.zeros_like();
    out.data_mut()
        .par_chunks_mut(per_vol)
        .enumerate()
        .for_each(|(n, dst)| {
            let v = x.volume(n);
            for z in 0..nz {
                for y in 0..ny {
                    for xi in 0..nx {
                        let (gx, gy, gz) = forward_diffs(v, [nx, ny, nz], xi, y, z);
                        let w = 2.0 / (gx * gx + gy * gy + gz * gz + eps * eps).sqrt();
                        let i = xi + nx * (y + ny * z);
                        for (ok, j) in [(xi + 1 < nx, i + 1), (y + 1 < ny, i + nx), (z + 1 < nz, i + nx * ny)] {
                            if ok {
                                dst[i] += w;
                                dst[j] += w;
                            }
                        }
                    }
                }
            }
        });
    out
}

/// An observation bound to its forward operator.
pub struct Problem {
    model: ForwardModel,
    observed: Volume4D,
    mask: Vec<f64>,
    /// `Aᵀ (mask ⊙ A 1)`: row sums of `|AᵀMA|`.
    data_curvature: Vec<f64>,
}

impl Problem {
    pub fn new(t: &Volume4D, geom: &AcquisitionGeometry, motion: &MotionTrajectory) -> Result<Self> {
        ensure_dims!(
            t.spatial_dims() == geom.lr_dims(),
            "observation has spatial dims {:?}, geometry expects {:?}",
            t.spatial_dims(),
            geom.lr_dims()
        );
        motion.check_against(geom, t.n_timepoints())?;
        let model = ForwardModel::new(geom, motion)?;
        let mask: Vec<f64> = model
            .validity_mask()
            .iter()
            .map(|&v| if v { 1.0 } else { 0.0 })
            .collect();
        let mut ones = model.geometry().hr_volume(t.n_timepoints(), 1.0)?;
        ones.data_mut().fill(1.0);
        let mut row_sums = model.forward(&ones)?;
        for (r, m) in row_sums.data_mut().iter_mut().zip(&mask) {
            *r *= m;
        }
        let data_curvature = model.adjoint(&row_sums)?.into_data();
        Ok(Self {
            model,
            observed: t.clone(),
            mask,
            data_curvature,
        })
    }

    pub fn model(&self) -> &ForwardModel {
        &self.model
    }

    pub fn observed(&self) -> &Volume4D {
        &self.observed
    }

    /// Frobenius norm of the observation over valid voxels.
    pub fn observed_norm(&self) -> f64 {
        self.observed
            .data()
            .iter()
            .zip(&self.mask)
            .map(|(v, m)| m * v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn masked_residual(&self, ax: &Volume4D) -> Volume4D {
        let data: Vec<f64> = ax
            .data()
            .iter()
            .zip(self.observed.data())
            .zip(&self.mask)
            .map(|((a, t), m)| m * (a - t))
            .collect();
        let mut r = ax.zeros_like();
        r.data_mut().copy_from_slice(&data);
        r
    }

    fn fidelity_of(&self, ax: &Volume4D) -> f64 {
        ax.data()
            .iter()
            .zip(self.observed.data())
            .zip(&self.mask)
            .map(|((a, t), m)| m * (a - t) * (a - t))
            .sum()
    }

    pub fn data_fidelity(&self, x: &Volume4D) -> Result<f64> {
        Ok(self.fidelity_of(&self.model.forward(x)?))
    }

    fn rescaled(&self, c: f64) -> Self {
        Self {
            model: self.model.clone(),
            observed: self.observed.scaled(c),
            mask: self.mask.clone(),
            data_curvature: self.data_curvature.clone(),
        }
    }
}

/// Masked sum of squared residuals `‖mask ⊙ (A x - t)‖²`.
pub fn data_fidelity(
    x: &Volume4D,
    t: &Volume4D,
    geom: &AcquisitionGeometry,
    motion: &MotionTrajectory,
) -> Result<f64> {
    Problem::new(t, geom, motion)?.data_fidelity(x)
}

/// Objective value split into its three terms (regularizers already weighted).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveTerms {
    pub data_fidelity: f64,
    pub rank_term: f64,
    pub tv_term: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.data_fidelity + self.rank_term + self.tv_term
    }
}

fn objective_terms(problem: &Problem, x: &Volume4D, cfg: &ReconConfig) -> Result<ObjectiveTerms> {
    let rank_term = if cfg.lambda_rank > 0.0 {
        cfg.lambda_rank * tensor4d::rank_surrogate(x, &cfg.alpha)?
    } else {
        0.0
    };
    let tv_term = if cfg.lambda_tv > 0.0 {
        cfg.lambda_tv * tv_value(x, cfg.tv_smoothing)
    } else {
        0.0
    };
    Ok(ObjectiveTerms {
        data_fidelity: problem.data_fidelity(x)?,
        rank_term,
        tv_term,
    })
}

/// Full objective: data fidelity plus weighted rank surrogate and TV.
pub fn objective(
    x: &Volume4D,
    t: &Volume4D,
    geom: &AcquisitionGeometry,
    motion: &MotionTrajectory,
    cfg: &ReconConfig,
) -> Result<f64> {
    cfg.validate()?;
    let problem = Problem::new(t, geom, motion)?;
    Ok(objective_terms(&problem, x, cfg)?.total())
}

/// Primal, auxiliary and dual variables of the splitting.
#[derive(Clone, Debug)]
pub struct AdmmState {
    pub x: Volume4D,
    pub y: [Volume4D; 4],
    pub u: [Volume4D; 4],
    pub iteration: usize,
    pub history: Vec<IterationRecord>,
    /// Last accepted x-update step, reused as the next initial trial.
    pub step_hint: Option<f64>,
}

impl AdmmState {
    /// Auxiliaries at `x`, duals at zero.
    pub fn new(x: Volume4D) -> Self {
        let zero = x.zeros_like();
        Self {
            y: std::array::from_fn(|_| x.clone()),
            u: std::array::from_fn(|_| zero.clone()),
            x,
            iteration: 0,
            history: Vec::new(),
            step_hint: None,
        }
    }

    /// Auxiliaries and duals at zero.
    pub fn zeroed(x: Volume4D) -> Self {
        let zero = x.zeros_like();
        Self {
            y: std::array::from_fn(|_| zero.clone()),
            u: std::array::from_fn(|_| zero.clone()),
            x,
            iteration: 0,
            history: Vec::new(),
            step_hint: None,
        }
    }

    /// `max_i ‖x - Y_i‖ / ‖x‖`.
    pub fn primal_residual(&self) -> f64 {
        let xn = self.x.norm();
        if xn == 0.0 {
            return 0.0;
        }
        self.y
            .iter()
            .map(|y| {
                self.x
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
            / xn
    }
}

/// The smooth x-subproblem with `Y`, `U` frozen.
struct XSubproblem<'a> {
    problem: &'a Problem,
    /// `Y_i - U_i`
    anchors: [Volume4D; 4],
    cfg: &'a ReconConfig,
}

impl XSubproblem<'_> {
    fn value(&self, x: &Volume4D, ax: &Volume4D) -> f64 {
        let fid = self.problem.fidelity_of(ax);
        let quad: f64 = self
            .anchors
            .iter()
            .map(|c| {
                x.data()
                    .iter()
                    .zip(c.data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum();
        let tv = if self.cfg.lambda_tv > 0.0 {
            self.cfg.lambda_tv * tv_value(x, self.cfg.tv_smoothing)
        } else {
            0.0
        };
        fid + 0.5 * self.cfg.rho * quad + tv
    }

    fn gradient(&self, x: &Volume4D, ax: &Volume4D) -> Result<Volume4D> {
        let r = self.problem.masked_residual(ax);
        let mut g = self.problem.model.adjoint(&r)?;
        g.scale(2.0);
        let rho = self.cfg.rho;
        let gd = g.data_mut();
        for c in &self.anchors {
            for ((gi, xi), ci) in gd.iter_mut().zip(x.data()).zip(c.data()) {
                *gi += rho * (xi - ci);
            }
        }
        if self.cfg.lambda_tv > 0.0 {
            g.axpy(self.cfg.lambda_tv, &tv_gradient(x, self.cfg.tv_smoothing));
        }
        if !g.is_finite() {
            return Err(Error::Numeric("x-update gradient is not finite".into()));
        }
        Ok(g)
    }

    /// Gradient divided elementwise by a bound on the local curvature of the subproblem.
    fn scaled_direction(&self, x: &Volume4D, g: &Volume4D) -> Volume4D {
        let quad = self.cfg.rho * self.anchors.len() as f64;
        let tv = (self.cfg.lambda_tv > 0.0).then(|| tv_curvature_bound(x, self.cfg.tv_smoothing));
        let mut p = g.clone();
        for (i, (pi, dc)) in p.data_mut().iter_mut().zip(&self.problem.data_curvature).enumerate() {
            let mut d = 2.0 * dc + quad;
            if let Some(tv) = &tv {
                d += self.cfg.lambda_tv * tv.data()[i];
            }
            *pi /= d;
        }
        p
    }
}

/// Outcome of one x-update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct XUpdateInfo {
    pub value_before: f64,
    pub value_after: f64,
    pub steps_taken: usize,
    /// Subproblem value after each accepted step never exceeded the previous one.
    pub monotone: bool,
}

/// Long Barzilai-Borwein step `sᵀs / sᵀy`, if the curvature along `s` is positive.
fn bb_step(x: &Volume4D, x_prev: &Volume4D, g: &Volume4D, g_prev: &Volume4D) -> Option<f64> {
    let mut ss = 0.0;
    let mut sy = 0.0;
    for (((a, b), c), d) in x.data().iter().zip(x_prev.data()).zip(g.data()).zip(g_prev.data()) {
        let si = a - b;
        ss += si * si;
        sy += si * (c - d);
    }
    (sy > 0.0 && ss > 0.0).then(|| ss / sy).filter(|s| s.is_finite())
}

/// Armijo-backtracked gradient descent on the x-subproblem.
pub fn x_update(state: &mut AdmmState, problem: &Problem, cfg: &ReconConfig) -> Result<XUpdateInfo> {
    let anchors = std::array::from_fn(|i| {
        let mut c = state.y[i].clone();
        c.axpy(-1.0, &state.u[i]);
        c
    });
    let sub = XSubproblem {
        problem,
        anchors,
        cfg,
    };
    let model = &problem.model;
    let mut x = state.x.clone();
    let mut ax = model.forward(&x)?;
    let mut f = sub.value(&x, &ax);
    let value_before = f;
    let mut monotone = true;
    let mut steps_taken = 0;
    let mut prev: Option<(Volume4D, Volume4D)> = None;
    for _ in 0..cfg.inner_steps {
        let g = sub.gradient(&x, &ax)?;
        let dir = match cfg.step_rule {
            StepRule::DiagonalScaling => sub.scaled_direction(&x, &g),
            _ => g.clone(),
        };
        let gg = g.dot(&dir);
        if gg == 0.0 {
            break;
        }
        let ag = model.forward(&dir)?;
        let mut step = match (&prev, cfg.step_rule) {
            (Some((xp, gp)), StepRule::BarzilaiBorwein) => {
                bb_step(&x, xp, &g, gp).unwrap_or(state.step_hint.unwrap_or(cfg.init_step))
            }
            (None, StepRule::BarzilaiBorwein) => state.step_hint.unwrap_or(cfg.init_step),
            (_, StepRule::Fixed) => cfg.init_step,
            (_, StepRule::DiagonalScaling) => 1.0,
        };
        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            let mut x_try = x.clone();
            x_try.axpy(-step, &dir);
            let mut ax_try = ax.clone();
            ax_try.axpy(-step, &ag);
            let f_try = sub.value(&x_try, &ax_try);
            if f_try.is_finite() && f_try <= f - cfg.armijo_c * step * gg {
                accepted = Some((x_try, ax_try, f_try));
                break;
            }
            step *= cfg.step_shrink;
        }
        let Some((x_new, ax_new, f_new)) = accepted else {
            break;
        };
        monotone &= f_new <= f;
        state.step_hint = Some(step);
        prev = Some((std::mem::replace(&mut x, x_new), g));
        ax = ax_new;
        f = f_new;
        steps_taken += 1;
    }
    state.x = x;
    Ok(XUpdateInfo {
        value_before,
        value_after: f,
        steps_taken,
        monotone,
    })
}

/// `Y_i = fold_i(SVT_{λ α_i / ρ}(unfold_i(x + U_i)))` for all four modes.
pub fn y_update(state: &mut AdmmState, cfg: &ReconConfig) -> Result<()> {
    let dims = state.x.dims();
    let x = &state.x;
    let u = &state.u;
    let new: Vec<Result<Volume4D>> = tensor4d::rayon_modes(|mode| {
        let i = mode - 1;
        let mut v = x.clone();
        v.axpy(1.0, &u[i]);
        let tau = cfg.lambda_rank * cfg.alpha[i] / cfg.rho;
        if tau == 0.0 {
            return Ok(v);
        }
        let y = fold(mode, dims, &svt(&unfold(&v, mode)?, tau)?)?;
        v.data_mut().copy_from_slice(y.data());
        Ok(v)
    });
    for (slot, y) in state.y.iter_mut().zip(new) {
        *slot = y?;
    }
    Ok(())
}

/// Dual ascent `U_i += x - Y_i`.
pub fn u_update(state: &mut AdmmState) {
    for (u, y) in state.u.iter_mut().zip(&state.y) {
        for ((ui, xi), yi) in u.data_mut().iter_mut().zip(state.x.data()).zip(y.data()) {
            *ui += xi - yi;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub data_fidelity: f64,
    pub rank_term: f64,
    pub tv_term: f64,
    pub rel_change: f64,
    pub primal_residual: f64,
    pub subproblem_before: f64,
    pub subproblem_after: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    /// Set when the solver stopped at `max_outer_iters`.
    pub warning: Option<String>,
    /// Intensity scale divided out before solving; objective values in
    /// `history` are in the scaled units.
    pub scale: f64,
    /// Every x-update left its subproblem value non-increasing.
    pub subproblem_monotone: bool,
}

impl ConvergenceReport {
    pub const CSV_HEADER: &'static str =
        "iter,objective,data_fidelity,rank_term,tv_term,rel_change,primal_residual";

    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    pub fn final_rel_change(&self) -> Option<f64> {
        self.history.last().map(|r| r.rel_change)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.history {
            let _ = writeln!(
                s,
                "{},{:?},{:?},{:?},{:?},{:?},{:?}",
                r.iter,
                r.objective,
                r.data_fidelity,
                r.rank_term,
                r.tv_term,
                r.rel_change,
                r.primal_residual
            );
        }
        s
    }
}

/// Safeguarded type-II Anderson acceleration of the outer fixed-point map
/// `z -> G(z)` with `z = (x, Y, U)` flattened.
struct Anderson {
    memory: usize,
    prev: Option<(Vec<f64>, Vec<f64>)>,
    df: VecDeque<Vec<f64>>,
    dg: VecDeque<Vec<f64>>,
    residual_prev: f64,
}

impl Anderson {
    fn new(memory: usize) -> Self {
        Self {
            memory,
            prev: None,
            df: VecDeque::new(),
            dg: VecDeque::new(),
            residual_prev: f64::INFINITY,
        }
    }

    /// Next iterate from the start point `z` and its image `gz`. The history
    /// is dropped whenever the fixed-point residual grows.
    fn step(&mut self, z: &[f64], gz: Vec<f64>) -> Vec<f64> {
        let f: Vec<f64> = gz.iter().zip(z).map(|(g, z)| g - z).collect();
        let residual = dot(&f, &f).sqrt();
        if residual > self.residual_prev {
            self.df.clear();
            self.dg.clear();
        } else if let Some((g_prev, f_prev)) = &self.prev {
            self.df.push_back(f.iter().zip(f_prev).map(|(a, b)| a - b).collect());
            self.dg.push_back(gz.iter().zip(g_prev).map(|(a, b)| a - b).collect());
            if self.df.len() > self.memory {
                self.df.pop_front();
                self.dg.pop_front();
            }
        }
        self.residual_prev = residual;
        let mut next = gz.clone();
        if let Some(gamma) = self.coefficients(&f) {
            for (g, dg) in gamma.iter().zip(&self.dg) {
                for (n, d) in next.iter_mut().zip(dg) {
                    *n -= g * d;
                }
            }
        }
        self.prev = Some((gz, f));
        next
    }

    /// Least-squares weights `argmin ‖f - ΔF γ‖` via regularized normal equations.
    fn coefficients(&self, f: &[f64]) -> Option<Vec<f64>> {
        let m = self.df.len();
        if m == 0 {
            return None;
        }
        let mut gram = DMatrix::<f64>::zeros(m, m);
        let mut rhs = DVector::<f64>::zeros(m);
        for i in 0..m {
            rhs[i] = dot(&self.df[i], f);
            for j in 0..=i {
                let v = dot(&self.df[i], &self.df[j]);
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        let reg = 1e-10 * gram.trace() / m as f64;
        for i in 0..m {
            gram[(i, i)] += reg;
        }
        let gamma = gram.cholesky()?.solve(&rhs);
        gamma.iter().all(|g| g.is_finite()).then(|| gamma.iter().copied().collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn pack(state: &AdmmState) -> Vec<f64> {
    let mut z = Vec::with_capacity(9 * state.x.len());
    z.extend_from_slice(state.x.data());
    for v in state.y.iter().chain(&state.u) {
        z.extend_from_slice(v.data());
    }
    z
}

fn unpack(z: &[f64], state: &mut AdmmState) {
    let n = state.x.len();
    let mut chunks = z.chunks_exact(n);
    let targets = std::iter::once(&mut state.x).chain(state.y.iter_mut()).chain(state.u.iter_mut());
    for (t, c) in targets.zip(&mut chunks) {
        t.data_mut().copy_from_slice(c);
    }
}

/// Linear baseline with every uncovered voxel replaced by its mean over the
/// timepoints where it is covered (0 if it never is).
pub fn initial_estimate(
    t: &Volume4D,
    geom: &AcquisitionGeometry,
    motion: &MotionTrajectory,
) -> Result<Volume4D> {
    let base = reconstruct_series_3d(t, motion, geom, InterpMethod::Linear)?;
    let mut x = base.series;
    let per_vol = x.voxels_per_volume();
    let n_t = x.n_timepoints();
    let data = x.data_mut();
    for i in 0..per_vol {
        let (mut sum, mut count) = (0.0, 0usize);
        for n in 0..n_t {
            if base.covered[i + n * per_vol] {
                sum += data[i + n * per_vol];
                count += 1;
            }
        }
        let fill = if count > 0 { sum / count as f64 } else { 0.0 };
        for n in 0..n_t {
            if !base.covered[i + n * per_vol] {
                data[i + n * per_vol] = fill;
            }
        }
    }
    Ok(x)
}

/// Largest absolute observed value over valid voxels.
fn observed_peak(problem: &Problem) -> f64 {
    problem
        .observed
        .data()
        .iter()
        .zip(&problem.mask)
        .filter(|(_, m)| **m > 0.0)
        .fold(0.0, |acc, (v, _)| acc.max(v.abs()))
}

/// Motion-compensated 4D reconstruction.
///
/// Starts from the per-volume linear baseline of the observation and runs
/// the ADMM iteration until the relative change drops below `cfg.epsilon`.
/// Reaching `max_outer_iters` is not an error: the lowest-objective iterate
/// is returned with a warning in the report.
pub fn reconstruct(
    t: &Volume4D,
    geom: &AcquisitionGeometry,
    motion: &MotionTrajectory,
    cfg: &ReconConfig,
) -> Result<(Volume4D, ConvergenceReport)> {
    cfg.validate()?;
    let raw = Problem::new(t, geom, motion)?;
    let peak = observed_peak(&raw);
    let out_template = geom.hr_volume(t.n_timepoints(), t.spacing()[3])?;
    if peak == 0.0 {
        return Ok((
            out_template,
            ConvergenceReport {
                history: Vec::new(),
                converged: true,
                warning: None,
                scale: 1.0,
                subproblem_monotone: true,
            },
        ));
    }
    let scale = if cfg.normalize { peak } else { 1.0 };
    let problem = raw.rescaled(1.0 / scale);
    let t_norm = problem.observed_norm();

    let init = initial_estimate(problem.observed(), geom, motion)?;
    let mut state = if cfg.zero_aux_init {
        AdmmState::zeroed(init)
    } else {
        AdmmState::new(init)
    };

    let mut anderson = (cfg.anderson_memory > 0).then(|| Anderson::new(cfg.anderson_memory));
    let mut best: Option<(f64, Volume4D)> = None;
    let mut converged = false;
    let mut monotone = true;
    for k in 1..=cfg.max_outer_iters {
        let x_prev = state.x.clone();
        let z = anderson.is_some().then(|| pack(&state));
        let info = x_update(&mut state, &problem, cfg)?;
        monotone &= info.monotone && info.value_after <= info.value_before;
        y_update(&mut state, cfg)?;
        u_update(&mut state);
        state.iteration = k;
        let primal_residual = state.primal_residual();
        if let (Some(aa), Some(z)) = (anderson.as_mut(), z) {
            let next = aa.step(&z, pack(&state));
            unpack(&next, &mut state);
        }

        let diff: f64 = state
            .x
            .data()
            .iter()
            .zip(x_prev.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let rel_change = diff / t_norm;
        let terms = objective_terms(&problem, &state.x, cfg)?;
        let objective = terms.total();
        if !objective.is_finite() {
            return Err(Error::Numeric(format!("objective became non-finite at iteration {k}")));
        }
        state.history.push(IterationRecord {
            iter: k,
            objective,
            data_fidelity: terms.data_fidelity,
            rank_term: terms.rank_term,
            tv_term: terms.tv_term,
            rel_change,
            primal_residual,
            subproblem_before: info.value_before,
            subproblem_after: info.value_after,
        });
        if rel_change < cfg.epsilon {
            converged = true;
            break;
        }
        if best.as_ref().is_none_or(|(f, _)| objective < *f) {
            best = Some((objective, state.x.clone()));
        }
    }

    let mut x = if converged {
        state.x
    } else {
        best.map(|(_, x)| x).unwrap_or(state.x)
    };
    x.scale(scale);
    let mut out = out_template;
    out.data_mut().copy_from_slice(x.data());
    let warning = (!converged).then(|| {
        format!(
            "no convergence after {} iterations (last relative change {:.3e})",
            cfg.max_outer_iters,
            state.history.last().map_or(f64::NAN, |r| r.rel_change)
        )
    });
    Ok((
        out,
        ConvergenceReport {
            history: state.history,
            converged,
            warning,
            scale,
            subproblem_monotone: monotone,
        },
    ))
}
