//! Nominal-state IMU kinematics, Gauss–Markov bias models, the continuous
//! error-state Jacobians and their Van Loan discretisation.

use nalgebra::{Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::manifold::{skew, UnitQuaternion};

pub type Vec3 = Vector3<f64>;

/// Error-state dimension.
pub const ERR_DIM: usize = 15;
/// Continuous noise vector dimension `[n_g, n_a, w_ba, w_bg]`.
pub const NOISE_DIM: usize = 12;

/// Offsets of each 3-block in the error state `[δθ, δv, δp, δb_a, δb_g]`.
pub const THETA: usize = 0;
pub const VEL: usize = 3;
pub const POS: usize = 6;
pub const BIAS_ACC: usize = 9;
pub const BIAS_GYRO: usize = 12;

/// Largest accepted integration step, in seconds. Longer gaps mean lost data.
pub const MAX_STEP: f64 = 0.1;

pub type ErrorCovariance = SMatrix<f64, ERR_DIM, ERR_DIM>;
pub type ErrorVector = SMatrix<f64, ERR_DIM, 1>;
pub type NoiseJacobian = SMatrix<f64, ERR_DIM, NOISE_DIM>;
pub type ContinuousNoise = SMatrix<f64, NOISE_DIM, NOISE_DIM>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NominalState {
    pub q: UnitQuaternion,
    /// World-frame velocity, m/s.
    pub v: Vec3,
    /// World-frame position, m.
    pub p: Vec3,
    /// Accelerometer bias, m/s².
    pub b_a: Vec3,
    /// Gyroscope bias, rad/s.
    pub b_g: Vec3,
}

impl Default for NominalState {
    fn default() -> Self {
        Self {
            q: UnitQuaternion::identity(),
            v: Vec3::zeros(),
            p: Vec3::zeros(),
            b_a: Vec3::zeros(),
            b_g: Vec3::zeros(),
        }
    }
}

impl NominalState {
    pub fn is_finite(&self) -> bool {
        self.q.is_finite()
            && self.v.iter().all(|x| x.is_finite())
            && self.p.iter().all(|x| x.is_finite())
            && self.b_a.iter().all(|x| x.is_finite())
            && self.b_g.iter().all(|x| x.is_finite())
    }

    /// Applies `δx` with a body-frame rotation and additive Euclidean blocks.
    pub fn boxplus(&self, dx: &ErrorVector) -> NominalState {
        NominalState {
            q: self.q * UnitQuaternion::exp(&block(dx, THETA)),
            v: self.v + block(dx, VEL),
            p: self.p + block(dx, POS),
            b_a: self.b_a + block(dx, BIAS_ACC),
            b_g: self.b_g + block(dx, BIAS_GYRO),
        }
    }

    /// Error vector `δx` such that `self.boxplus(δx) == other`.
    pub fn boxminus(&self, other: &NominalState) -> ErrorVector {
        let mut dx = ErrorVector::zeros();
        dx.fixed_rows_mut::<3>(THETA)
            .copy_from(&(self.q.inverse() * other.q).log());
        dx.fixed_rows_mut::<3>(VEL).copy_from(&(other.v - self.v));
        dx.fixed_rows_mut::<3>(POS).copy_from(&(other.p - self.p));
        dx.fixed_rows_mut::<3>(BIAS_ACC)
            .copy_from(&(other.b_a - self.b_a));
        dx.fixed_rows_mut::<3>(BIAS_GYRO)
            .copy_from(&(other.b_g - self.b_g));
        dx
    }
}

#[inline]
pub(crate) fn block(dx: &ErrorVector, offset: usize) -> Vec3 {
    Vec3::new(dx[offset], dx[offset + 1], dx[offset + 2])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    /// Timestamp, nanoseconds.
    pub t: i64,
    /// Measured angular rate, rad/s.
    pub omega: Vec3,
    /// Measured specific force, m/s².
    pub accel: Vec3,
}

/// IMU noise densities, bias processes and gravity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuNoiseModel {
    /// Gyro white noise, rad/s/√Hz.
    pub sigma_g: f64,
    /// Accelerometer white noise, m/s²/√Hz.
    pub sigma_a: f64,
    /// Gyro bias driving noise.
    pub sigma_wg: f64,
    /// Accelerometer bias driving noise.
    pub sigma_wa: f64,
    /// Gauss–Markov correlation time of the gyro bias, s. `f64::INFINITY` gives a random walk.
    pub tau_g: f64,
    pub tau_a: f64,
    /// Gravity in the world frame, m/s².
    pub g_world: [f64; 3],
    /// Accept any gravity magnitude (otherwise it must lie in [9.7, 9.9]).
    #[serde(default)]
    pub custom_gravity: bool,
}

impl Default for ImuNoiseModel {
    /// EuRoC MAV (ADIS16448) calibration values.
    fn default() -> Self {
        Self {
            sigma_g: 1.6968e-4,
            sigma_a: 2.0e-3,
            sigma_wg: 1.9393e-5,
            sigma_wa: 3.0e-3,
            tau_g: 1000.0,
            tau_a: 1000.0,
            g_world: [0.0, 0.0, -9.81],
            custom_gravity: false,
        }
    }
}

impl ImuNoiseModel {
    pub fn gravity(&self) -> Vec3 {
        Vec3::from(self.g_world)
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            ("sigma_g", self.sigma_g),
            ("sigma_a", self.sigma_a),
            ("sigma_wg", self.sigma_wg),
            ("sigma_wa", self.sigma_wa),
        ];
        for (name, s) in sigmas {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("imu.{name} must be positive, got {s}")));
            }
        }
        for (name, tau) in [("tau_g", self.tau_g), ("tau_a", self.tau_a)] {
            // NaN fails this comparison too
            if !(tau > 0.0) {
                return Err(Error::Config(format!("imu.{name} must be positive, got {tau}")));
            }
        }
        let g = self.gravity().norm();
        if !g.is_finite() || (!self.custom_gravity && !(9.7..=9.9).contains(&g)) {
            return Err(Error::Config(format!(
                "gravity magnitude {g} outside [9.7, 9.9] m/s²"
            )));
        }
        Ok(())
    }
}

fn check_step(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt <= MAX_STEP) {
        return Err(Error::InvalidStep { dt, max: MAX_STEP });
    }
    Ok(())
}

/// One integration step of the nominal kinematics.
///
/// Orientation uses the exact exponential of the bias-corrected rate,
/// velocity and position a trapezoid with the mid-step orientation, and the
/// biases follow the noise-free Gauss–Markov mean.
pub fn propagate_nominal(
    x: &NominalState,
    u: &ImuSample,
    dt: f64,
    noise: &ImuNoiseModel,
) -> Result<NominalState> {
    check_step(dt)?;
    let omega = u.omega - x.b_g;
    let q_next = x.q * UnitQuaternion::exp(&(omega * dt));
    let q_mid = x.q * UnitQuaternion::exp(&(omega * (0.5 * dt)));
    let a_world = q_mid.rotate(&(u.accel - x.b_a)) + noise.gravity();
    Ok(NominalState {
        q: q_next,
        v: x.v + a_world * dt,
        p: x.p + x.v * dt + a_world * (0.5 * dt * dt),
        b_a: x.b_a * (-dt / noise.tau_a).exp(),
        b_g: x.b_g * (-dt / noise.tau_g).exp(),
    })
}

/// Continuous-time error dynamics `δẋ = A δx + G n`.
pub fn error_jacobians(
    x: &NominalState,
    u: &ImuSample,
    noise: &ImuNoiseModel,
) -> (ErrorCovariance, NoiseJacobian) {
    let rot = x.q.to_rotation_matrix();
    let ident = Matrix3::<f64>::identity();
    let mut a = ErrorCovariance::zeros();
    a.fixed_view_mut::<3, 3>(THETA, THETA)
        .copy_from(&(-skew(&(u.omega - x.b_g))));
    a.fixed_view_mut::<3, 3>(THETA, BIAS_GYRO)
        .copy_from(&(-ident));
    a.fixed_view_mut::<3, 3>(VEL, THETA)
        .copy_from(&(-rot * skew(&(u.accel - x.b_a))));
    a.fixed_view_mut::<3, 3>(VEL, BIAS_ACC).copy_from(&(-rot));
    a.fixed_view_mut::<3, 3>(POS, VEL).copy_from(&ident);
    a.fixed_view_mut::<3, 3>(BIAS_ACC, BIAS_ACC)
        .copy_from(&(-ident / noise.tau_a));
    a.fixed_view_mut::<3, 3>(BIAS_GYRO, BIAS_GYRO)
        .copy_from(&(-ident / noise.tau_g));

    let mut g = NoiseJacobian::zeros();
    g.fixed_view_mut::<3, 3>(THETA, 0).copy_from(&(-ident));
    g.fixed_view_mut::<3, 3>(VEL, 3).copy_from(&(-rot));
    g.fixed_view_mut::<3, 3>(BIAS_ACC, 6).copy_from(&ident);
    g.fixed_view_mut::<3, 3>(BIAS_GYRO, 9).copy_from(&ident);
    (a, g)
}

/// `Q_c = diag(σ_g² I, σ_a² I, σ_wa² I, σ_wg² I)`.
pub fn process_noise(noise: &ImuNoiseModel) -> Result<ContinuousNoise> {
    for (name, s) in [
        ("sigma_g", noise.sigma_g),
        ("sigma_a", noise.sigma_a),
        ("sigma_wa", noise.sigma_wa),
        ("sigma_wg", noise.sigma_wg),
    ] {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Config(format!("imu.{name} must be positive, got {s}")));
        }
    }
    let mut qc = ContinuousNoise::zeros();
    let vars = [
        noise.sigma_g * noise.sigma_g,
        noise.sigma_a * noise.sigma_a,
        noise.sigma_wa * noise.sigma_wa,
        noise.sigma_wg * noise.sigma_wg,
    ];
    for (blk, var) in vars.iter().enumerate() {
        for i in 0..3 {
            qc[(3 * blk + i, 3 * blk + i)] = *var;
        }
    }
    Ok(qc)
}

/// Van Loan discretisation of `(A, G Q_c Gᵀ)` over `dt`.
///
/// Builds `M = [[-A dt, G Qc Gᵀ dt], [0, Aᵀ dt]]`, takes `E = exp(M)` and
/// returns `Φ = E₂₂ᵀ` and `Q_d = Φ E₁₂`, symmetrised.
pub fn van_loan_discretize<const N: usize, const K: usize>(
    a: &SMatrix<f64, N, N>,
    g: &SMatrix<f64, N, K>,
    qc: &SMatrix<f64, K, K>,
    dt: f64,
) -> Result<(SMatrix<f64, N, N>, SMatrix<f64, N, N>)> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidStep { dt, max: f64::INFINITY });
    }
    let gqg = g * qc * g.transpose();
    let (e12, e22) =
        linalg::expm_block_triangular(&(-a * dt), &(gqg * dt), &(a.transpose() * dt))?;
    let phi = e22.transpose();
    let qd = linalg::symmetrize(&(phi * e12));
    Ok((phi, qd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn rest_sample() -> ImuSample {
        ImuSample {
            t: 0,
            omega: Vec3::zeros(),
            accel: Vec3::new(0.0, 0.0, 9.81),
        }
    }

    #[test]
    fn static_equilibrium() {
        let noise = ImuNoiseModel::default();
        let x = NominalState {
            b_a: Vec3::new(0.0, 0.0, 0.0),
            ..Default::default()
        };
        let next = propagate_nominal(&x, &rest_sample(), 0.005, &noise).unwrap();
        assert_eq!(next.q, x.q);
        assert_eq!(next.v, Vec3::zeros());
        assert_eq!(next.p, Vec3::zeros());

        let biased = NominalState {
            b_g: Vec3::new(1e-3, 0.0, 0.0),
            ..Default::default()
        };
        let u = ImuSample {
            omega: Vec3::new(1e-3, 0.0, 0.0),
            ..rest_sample()
        };
        let next = propagate_nominal(&biased, &u, 0.005, &noise).unwrap();
        assert_relative_eq!(next.b_g.x, 1e-3 * (-0.005 / noise.tau_g).exp());
    }

    #[test]
    fn constant_rate_quarter_turn() {
        let noise = ImuNoiseModel::default();
        let u = ImuSample {
            t: 0,
            omega: Vec3::new(0.0, 0.0, PI),
            accel: Vec3::new(0.0, 0.0, 9.81),
        };
        let next = propagate_nominal(&NominalState::default(), &u, 0.05, &noise).unwrap();
        let mut x = NominalState::default();
        for _ in 0..10 {
            x = propagate_nominal(&x, &u, 0.05, &noise).unwrap();
        }
        let expected = UnitQuaternion::from_axis_angle(&Vec3::z(), FRAC_PI_2);
        assert!(x.q.approx_eq(&expected, 1e-9));
        assert!(next.q.approx_eq(&UnitQuaternion::from_axis_angle(&Vec3::z(), PI * 0.05), 1e-12));
    }

    #[test]
    fn step_guard() {
        let noise = ImuNoiseModel::default();
        let x = NominalState::default();
        for dt in [0.0, -0.01, 0.1000001, f64::NAN] {
            assert!(matches!(
                propagate_nominal(&x, &rest_sample(), dt, &noise),
                Err(Error::InvalidStep { .. })
            ));
        }
        assert!(propagate_nominal(&x, &rest_sample(), 0.1, &noise).is_ok());
    }

    #[test]
    fn jacobian_blocks() {
        let noise = ImuNoiseModel::default();
        let (a, g) = error_jacobians(&NominalState::default(), &rest_sample(), &noise);
        let expected = -skew(&Vec3::new(0.0, 0.0, 9.81));
        assert_eq!(a.fixed_view::<3, 3>(VEL, THETA).into_owned(), expected);
        assert_eq!(
            a.fixed_view::<3, 3>(POS, VEL).into_owned(),
            Matrix3::identity()
        );
        assert_eq!(
            g.fixed_view::<3, 3>(BIAS_GYRO, 9).into_owned(),
            Matrix3::identity()
        );
        // position row has no noise input
        assert_eq!(g.fixed_rows::<3>(POS).into_owned(), SMatrix::<f64, 3, 12>::zeros());

        let rw = ImuNoiseModel {
            tau_a: f64::INFINITY,
            tau_g: f64::INFINITY,
            ..noise
        };
        let (a, _) = error_jacobians(&NominalState::default(), &rest_sample(), &rw);
        assert_eq!(
            a.fixed_view::<6, 6>(BIAS_ACC, BIAS_ACC).into_owned(),
            SMatrix::<f64, 6, 6>::zeros()
        );
    }

    #[test]
    fn process_noise_layout() {
        let ones = ImuNoiseModel {
            sigma_g: 1.0,
            sigma_a: 1.0,
            sigma_wa: 1.0,
            sigma_wg: 1.0,
            ..Default::default()
        };
        assert_eq!(process_noise(&ones).unwrap(), ContinuousNoise::identity());
        let qc = process_noise(&ImuNoiseModel {
            sigma_g: 2.0,
            ..ones
        })
        .unwrap();
        assert_eq!(qc[(0, 0)], 4.0);
        assert_eq!(qc[(2, 2)], 4.0);
        assert_eq!(qc[(3, 3)], 1.0);
        let euroc = process_noise(&ImuNoiseModel::default()).unwrap();
        assert_relative_eq!(euroc[(0, 0)], 2.879e-8, max_relative = 1e-3);
        assert!(process_noise(&ImuNoiseModel {
            sigma_wa: 0.0,
            ..ones
        })
        .is_err());
    }

    #[test]
    fn van_loan_zero_dynamics() {
        let a = ErrorCovariance::zeros();
        let (_, g) = error_jacobians(&NominalState::default(), &rest_sample(), &ImuNoiseModel::default());
        let qc = process_noise(&ImuNoiseModel::default()).unwrap();
        let dt = 0.005;
        let (phi, qd) = van_loan_discretize(&a, &g, &qc, dt).unwrap();
        assert_relative_eq!(phi, ErrorCovariance::identity(), epsilon = 1e-12);
        assert_relative_eq!(qd, g * qc * g.transpose() * dt, epsilon = 1e-12);
    }

    #[test]
    fn van_loan_scalar_gauss_markov() {
        for (tau, dt) in [(1.0, 0.005), (0.3, 0.1), (50.0, 0.01)] {
            let a = SMatrix::<f64, 1, 1>::new(-1.0 / tau);
            let g = SMatrix::<f64, 1, 1>::new(1.0);
            let qc = SMatrix::<f64, 1, 1>::new(1.0);
            let (phi, qd) = van_loan_discretize(&a, &g, &qc, dt).unwrap();
            let f: f64 = (-dt / tau).exp();
            assert_relative_eq!(phi[(0, 0)], f, max_relative = 1e-10);
            let expected = tau / 2.0 * (1.0 - (-2.0 * dt / tau).exp());
            assert_relative_eq!(qd[(0, 0)], expected, max_relative = 1e-10);
        }
    }

    #[test]
    fn boxplus_boxminus_inverse() {
        let x = NominalState {
            q: UnitQuaternion::from_euler_zyx(0.2, -0.1, 1.3),
            v: Vec3::new(1.0, 2.0, 3.0),
            p: Vec3::new(-4.0, 0.5, 2.0),
            b_a: Vec3::new(0.01, 0.02, -0.03),
            b_g: Vec3::new(1e-3, -2e-3, 5e-4),
        };
        let dx = ErrorVector::from_iterator((0..15).map(|i| 0.01 * (i as f64 - 7.0)));
        let y = x.boxplus(&dx);
        assert_relative_eq!(x.boxminus(&y), dx, epsilon = 1e-12);
    }
}
