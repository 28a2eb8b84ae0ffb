use std::f64::consts::PI;

use log::warn;
use nalgebra::{DMatrix, Matrix3, Matrix6, SMatrix, SVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::{condition_covariance, FilterState};
use crate::dynamics::{
    block, ErrorCovariance, ErrorVector, ImuNoiseModel, ImuSample, Vec3, BIAS_ACC, ERR_DIM, POS,
    THETA, VEL,
};
use crate::error::{Error, Result};
use crate::manifold::skew;

/// Measurement noise covariances for the three update types.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasurementNoise {
    pub r_zupt: Matrix3<f64>,
    pub r_acc: Matrix3<f64>,
    /// `diag(σ_p² I, σ_v² I)`.
    pub r_vis: Matrix6<f64>,
}

impl MeasurementNoise {
    pub fn from_sigmas(sigma_zupt: f64, sigma_acc: f64, sigma_p: f64, sigma_v: f64) -> Self {
        Self {
            r_zupt: Matrix3::identity() * sigma_zupt * sigma_zupt,
            r_acc: Matrix3::identity() * sigma_acc * sigma_acc,
            r_vis: visual_covariance(sigma_p, sigma_v),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let diag = self
            .r_zupt
            .diagonal()
            .iter()
            .chain(self.r_acc.diagonal().iter())
            .chain(self.r_vis.diagonal().iter())
            .copied()
            .collect::<Vec<_>>();
        if diag.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::Config(
                "measurement noise diagonals must be positive".into(),
            ));
        }
        Ok(())
    }
}

pub fn visual_covariance(sigma_p: f64, sigma_v: f64) -> Matrix6<f64> {
    let vp = sigma_p * sigma_p;
    let vv = sigma_v * sigma_v;
    Matrix6::from_diagonal(&Vector6::new(vp, vp, vp, vv, vv, vv))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UpdateStatus {
    Applied,
    /// Innovation covariance too badly conditioned; state left untouched.
    Rejected { condition: f64 },
    /// Trigger condition not met; state left untouched.
    NotTriggered,
}

#[derive(Clone, Copy, Debug)]
pub struct UpdateOutcome<const M: usize> {
    pub state: FilterState,
    pub innovation: SVector<f64, M>,
    pub status: UpdateStatus,
}

impl<const M: usize> UpdateOutcome<M> {
    pub fn applied(&self) -> bool {
        self.status == UpdateStatus::Applied
    }
}

fn condition_number<const M: usize>(s: &SMatrix<f64, M, M>) -> f64 {
    let d = DMatrix::from_iterator(M, M, s.iter().copied());
    let eig = d.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Generic EKF correction with a Joseph-form covariance update, followed by
/// error injection.
pub fn ekf_update<const M: usize>(
    fs: &FilterState,
    z: &SVector<f64, M>,
    h: &SVector<f64, M>,
    jac: &SMatrix<f64, M, ERR_DIM>,
    r: &SMatrix<f64, M, M>,
) -> Result<UpdateOutcome<M>> {
    if jac.iter().any(|v| !v.is_finite()) || z.iter().chain(h.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite measurement or Jacobian".into()));
    }
    if r.cholesky().is_none() {
        return Err(Error::InvalidInput(
            "measurement covariance is not positive definite".into(),
        ));
    }
    let innovation = z - h;
    let p = &fs.p;
    let pht = p * jac.transpose();
    let s = crate::linalg::symmetrize(&(jac * pht + r));
    let cond = condition_number(&s);
    if !(cond <= fs.options.max_condition) {
        warn!(
            "rejecting {M}-dim update at t = {} ns: innovation covariance condition number {cond:.3e}",
            fs.t
        );
        return Ok(UpdateOutcome {
            state: *fs,
            innovation,
            status: UpdateStatus::Rejected { condition: cond },
        });
    }
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::Numerical("innovation covariance lost definiteness".into()))?;
    // K = P Hᵀ S⁻¹  ⇔  Kᵀ = S⁻¹ H P
    let gain: SMatrix<f64, ERR_DIM, M> = chol.solve(&pht.transpose()).transpose();
    let dx: ErrorVector = gain * innovation;
    let ikh = ErrorCovariance::identity() - gain * jac;
    let p_new = ikh * p * ikh.transpose() + gain * r * gain.transpose();
    let corrected = FilterState {
        p: condition_covariance(&p_new),
        ..*fs
    };
    Ok(UpdateOutcome {
        state: inject_and_reset(&corrected, &dx)?,
        innovation,
        status: UpdateStatus::Applied,
    })
}

/// Folds the error estimate into the nominal state and resets it to zero.
pub fn inject_and_reset(fs: &FilterState, dx: &ErrorVector) -> Result<FilterState> {
    if dx.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite error-state correction".into()));
    }
    let dtheta = block(dx, THETA);
    if dtheta.norm() > PI {
        return Err(Error::Divergence(format!(
            "orientation correction of {:.3} rad exceeds π; reinitialise the filter",
            dtheta.norm()
        )));
    }
    let nominal = fs.nominal.boxplus(dx);
    let p = if fs.options.full_reset_jacobian {
        let mut g = ErrorCovariance::identity();
        g.fixed_view_mut::<3, 3>(THETA, THETA)
            .copy_from(&(Matrix3::identity() - skew(&(dtheta * 0.5))));
        condition_covariance(&(g * fs.p * g.transpose()))
    } else {
        fs.p
    };
    Ok(FilterState { nominal, p, ..*fs })
}

/// Zero-velocity pseudo-measurement of the body-frame velocity. The nominal
/// velocity is set to zero afterwards.
pub fn zupt_update(fs: &FilterState, r_zupt: &Matrix3<f64>) -> Result<UpdateOutcome<3>> {
    let rt = fs.nominal.q.to_rotation_matrix().transpose();
    let h = rt * fs.nominal.v;
    let mut jac = SMatrix::<f64, 3, ERR_DIM>::zeros();
    jac.fixed_view_mut::<3, 3>(0, THETA).copy_from(&skew(&h));
    jac.fixed_view_mut::<3, 3>(0, VEL).copy_from(&rt);
    let mut out = ekf_update(fs, &Vector3::zeros(), &h, &jac, r_zupt)?;
    if out.applied() {
        out.state.nominal.v = Vec3::zeros();
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationarityThresholds {
    /// Per-axis accelerometer standard deviation, m/s².
    pub sigma_acc: f64,
    /// Per-axis gyroscope standard deviation, rad/s.
    pub sigma_gyro: f64,
}

impl Default for StationarityThresholds {
    fn default() -> Self {
        Self {
            sigma_acc: 0.05,
            sigma_gyro: 0.01,
        }
    }
}

pub const MIN_STATIONARY_WINDOW: usize = 20;

/// True when every axis of both sensors has a sample standard deviation
/// below its threshold over the window.
pub fn detect_stationary(window: &[ImuSample], thresholds: &StationarityThresholds) -> Result<bool> {
    if window.len() < MIN_STATIONARY_WINDOW {
        return Err(Error::InsufficientData(format!(
            "stationarity window has {} samples, need at least {MIN_STATIONARY_WINDOW}",
            window.len()
        )));
    }
    let n = window.len() as f64;
    let std_of = |get: &dyn Fn(&ImuSample) -> Vec3| -> Vec3 {
        let mean = window.iter().map(get).sum::<Vec3>() / n;
        let var = window
            .iter()
            .map(|s| (get(s) - mean).map(|d| d * d))
            .sum::<Vec3>()
            / (n - 1.0);
        var.map(f64::sqrt)
    };
    let acc = std_of(&|s| s.accel);
    let gyro = std_of(&|s| s.omega);
    Ok(acc.iter().all(|s| *s < thresholds.sigma_acc)
        && gyro.iter().all(|s| *s < thresholds.sigma_gyro))
}

/// Gravity-alignment update from a quasi-static accelerometer reading.
///
/// At rest the accelerometer measures `Rᵀ(-g)`, so the predicted
/// measurement is `h = R(q)ᵀ(-g_world)` and the residual vanishes at rest.
/// With the additive bias error convention used for injection, the bias
/// column of the Jacobian is `+I`.
pub fn gravity_update(
    fs: &FilterState,
    a_m: &Vec3,
    noise: &ImuNoiseModel,
    r_acc: &Matrix3<f64>,
    trigger_eps: f64,
) -> Result<UpdateOutcome<3>> {
    let z = a_m - fs.nominal.b_a;
    let g = noise.gravity();
    let rt = fs.nominal.q.to_rotation_matrix().transpose();
    let h = rt * (-g);
    if !((z.norm() - g.norm()).abs() < trigger_eps) {
        return Ok(UpdateOutcome {
            state: *fs,
            innovation: z - h,
            status: UpdateStatus::NotTriggered,
        });
    }
    let mut jac = SMatrix::<f64, 3, ERR_DIM>::zeros();
    jac.fixed_view_mut::<3, 3>(0, THETA).copy_from(&skew(&h));
    jac.fixed_view_mut::<3, 3>(0, BIAS_ACC)
        .copy_from(&Matrix3::identity());
    ekf_update(fs, &z, &h, &jac, r_acc)
}

/// Position and velocity reported by the visual front-end.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VisualObservation {
    pub p: Vec3,
    pub v: Vec3,
}

pub fn visual_jacobian() -> SMatrix<f64, 6, ERR_DIM> {
    let mut jac = SMatrix::<f64, 6, ERR_DIM>::zeros();
    jac.fixed_view_mut::<3, 3>(0, POS)
        .copy_from(&Matrix3::identity());
    jac.fixed_view_mut::<3, 3>(3, VEL)
        .copy_from(&Matrix3::identity());
    jac
}

/// Loosely-coupled position/velocity update.
pub fn visual_update(
    fs: &FilterState,
    z: &VisualObservation,
    r_vis: &Matrix6<f64>,
) -> Result<UpdateOutcome<6>> {
    let mut zv = Vector6::zeros();
    zv.fixed_rows_mut::<3>(0).copy_from(&z.p);
    zv.fixed_rows_mut::<3>(3).copy_from(&z.v);
    let mut h = Vector6::zeros();
    h.fixed_rows_mut::<3>(0).copy_from(&fs.nominal.p);
    h.fixed_rows_mut::<3>(3).copy_from(&fs.nominal.v);
    ekf_update(fs, &zv, &h, &visual_jacobian(), r_vis)
}
