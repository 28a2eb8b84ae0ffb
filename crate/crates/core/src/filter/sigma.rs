use nalgebra::{Matrix3, SMatrix, Vector3};

use super::{FilterState, SigmaSpread, SutParams};
use crate::dynamics::{
    propagate_nominal, ErrorCovariance, ErrorVector, ImuNoiseModel, ImuSample, NominalState,
    ERR_DIM, THETA,
};
use crate::error::Result;
use crate::linalg;
use crate::manifold::UnitQuaternion;

/// Scaled unscented transform weights for an `n`-dimensional state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SigmaWeights {
    pub lambda: f64,
    /// `n + λ`, the factor applied to the covariance before the Cholesky.
    pub spread: f64,
    pub mean0: f64,
    pub cov0: f64,
    /// Weight of each of the `2n` outer points (mean and covariance alike).
    pub outer: f64,
}

impl SigmaWeights {
    pub fn new(sut: &SutParams, n: usize) -> Self {
        let nf = n as f64;
        let lambda = sut.alpha * sut.alpha * (nf + sut.kappa) - nf;
        let spread = nf + lambda;
        let mean0 = lambda / spread;
        Self {
            lambda,
            spread,
            mean0,
            cov0: mean0 + 1.0 - sut.alpha * sut.alpha + sut.beta,
            outer: 0.5 / spread,
        }
    }
}

/// Weighted mean and covariance of `2n + 1` tangent-space samples.
fn weighted_moments<const N: usize>(
    samples: &[SMatrix<f64, N, 1>],
    w: &SigmaWeights,
) -> (SMatrix<f64, N, 1>, SMatrix<f64, N, N>) {
    let mut mean = samples[0] * w.mean0;
    for s in &samples[1..] {
        mean += s * w.outer;
    }
    let d0 = samples[0] - mean;
    let mut cov = d0 * d0.transpose() * w.cov0;
    for s in &samples[1..] {
        let d = s - mean;
        cov += d * d.transpose() * w.outer;
    }
    (mean, linalg::symmetrize(&cov))
}

/// Sigma-point refinement of the orientation-error covariance.
///
/// Orientation sigma points are injected on the right of the previous
/// orientation, integrated through the attitude kinematics with the previous
/// biases, and retracted against `q_pred` with the logarithmic map. The
/// weighted mean of the retracted points is estimated, not assumed zero.
pub fn sukf_refine_orientation(
    fs_prev: &FilterState,
    p_eskf: &ErrorCovariance,
    q_pred: &UnitQuaternion,
    u: &ImuSample,
    dt: f64,
) -> Result<Matrix3<f64>> {
    let w = SigmaWeights::new(&fs_prev.sut, 3);
    let source = match fs_prev.options.sigma_spread {
        SigmaSpread::Propagated => p_eskf,
        SigmaSpread::Previous => &fs_prev.p,
    };
    let p_theta = linalg::symmetrize(&source.fixed_view::<3, 3>(THETA, THETA).into_owned());
    let sqrt = linalg::cholesky_with_jitter(&(p_theta * w.spread))?;

    let q_prev = fs_prev.nominal.q;
    let step = UnitQuaternion::exp(&((u.omega - fs_prev.nominal.b_g) * dt));
    let q_pred_inv = q_pred.inverse();
    let retract = |chi: &Vector3<f64>| {
        let q_inj = q_prev * UnitQuaternion::exp(chi);
        let q_prop = q_inj * step;
        (q_pred_inv * q_prop).log()
    };

    let mut samples = [Vector3::zeros(); 7];
    samples[0] = retract(&Vector3::zeros());
    for i in 0..3 {
        let col: Vector3<f64> = sqrt.column(i).into_owned();
        samples[1 + i] = retract(&col);
        samples[4 + i] = retract(&(-col));
    }
    let (_, cov) = weighted_moments(&samples, &w);
    Ok(cov)
}

/// Sigma-point propagation of the full 15-dim error covariance (without
/// process noise). Euclidean blocks are handled additively, orientation
/// through right injection and logarithmic retraction against `nominal_next`.
pub fn full_sigma_propagate(
    fs_prev: &FilterState,
    nominal_next: &NominalState,
    u: &ImuSample,
    dt: f64,
    noise: &ImuNoiseModel,
) -> Result<ErrorCovariance> {
    let w = SigmaWeights::new(&fs_prev.sut, ERR_DIM);
    let sqrt = linalg::cholesky_with_jitter(&(fs_prev.p * w.spread))?;

    let propagate_point = |dx: &ErrorVector| -> Result<ErrorVector> {
        let x = fs_prev.nominal.boxplus(dx);
        let next = propagate_nominal(&x, u, dt, noise)?;
        Ok(nominal_next.boxminus(&next))
    };

    let mut samples = Vec::with_capacity(2 * ERR_DIM + 1);
    samples.push(propagate_point(&ErrorVector::zeros())?);
    for sign in [1.0, -1.0] {
        for i in 0..ERR_DIM {
            let col: ErrorVector = sqrt.column(i) * sign;
            samples.push(propagate_point(&col)?);
        }
    }
    let (_, cov) = weighted_moments(&samples, &w);
    Ok(cov)
}
