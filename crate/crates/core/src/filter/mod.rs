//! Error-state filtering: the hybrid orientation-refined propagation, the
//! ESKF and full sigma-point baselines, and the EKF-form measurement updates.

mod sigma;
mod update;

use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    error_jacobians, process_noise, propagate_nominal, van_loan_discretize, ErrorCovariance,
    ImuNoiseModel, ImuSample, NominalState, THETA,
};
use crate::error::{Error, Result};
use crate::linalg;

pub use sigma::{full_sigma_propagate, sukf_refine_orientation, SigmaWeights};
pub use update::{
    detect_stationary, ekf_update, gravity_update, inject_and_reset, visual_covariance,
    visual_jacobian, visual_update, zupt_update, MeasurementNoise, MIN_STATIONARY_WINDOW, StationarityThresholds, UpdateOutcome, UpdateStatus, VisualObservation,
};

/// The four compared estimators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    /// Plain error-state EKF propagation.
    Eskf,
    /// 15-dim error-state sigma-point propagation (31 points).
    FullSukf,
    /// ESKF propagation with sigma-point refinement of the orientation block.
    HybridQf,
    /// `HybridQf` with quality-driven visual measurement covariance.
    AdaptiveHybridQf,
}

impl FilterMode {
    pub const ALL: [FilterMode; 4] = [
        FilterMode::Eskf,
        FilterMode::FullSukf,
        FilterMode::HybridQf,
        FilterMode::AdaptiveHybridQf,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FilterMode::Eskf => "eskf",
            FilterMode::FullSukf => "full_sukf",
            FilterMode::HybridQf => "hybrid_qf",
            FilterMode::AdaptiveHybridQf => "adaptive_hybrid_qf",
        }
    }

    pub fn refines_orientation(&self) -> bool {
        matches!(self, FilterMode::HybridQf | FilterMode::AdaptiveHybridQf)
    }
}

impl fmt::Display for FilterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FilterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "eskf" => Ok(FilterMode::Eskf),
            "full_sukf" | "sukf" => Ok(FilterMode::FullSukf),
            "hybrid_qf" | "hybrid" => Ok(FilterMode::HybridQf),
            "adaptive_hybrid_qf" | "adaptive" => Ok(FilterMode::AdaptiveHybridQf),
            other => Err(Error::Config(format!("unknown filter mode '{other}'"))),
        }
    }
}

/// Scaled unscented transform parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SutParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for SutParams {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

impl SutParams {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!(
                "sut.alpha must be in (0, 1], got {}",
                self.alpha
            )));
        }
        let nf = n as f64;
        let lambda = self.alpha * self.alpha * (nf + self.kappa) - nf;
        if !(nf + lambda > 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!(
                "sut parameters give n + λ = {} for n = {n}",
                nf + lambda
            )));
        }
        Ok(())
    }
}

/// Which orientation covariance seeds the hybrid refinement's sigma points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SigmaSpread {
    /// The ESKF-propagated block `P_θθ(k|k-1)`.
    #[default]
    Propagated,
    /// The posterior block of the previous step `P_θθ(k-1|k-1)`.
    Previous,
}

impl FromStr for SigmaSpread {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "propagated" => Ok(SigmaSpread::Propagated),
            "previous" => Ok(SigmaSpread::Previous),
            other => Err(Error::Config(format!("unknown sigma spread '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterOptions {
    /// Apply `G = I - [δθ/2]×` to the covariance after injection.
    pub full_reset_jacobian: bool,
    /// Innovation covariances with a larger condition number are rejected.
    pub max_condition: f64,
    pub sigma_spread: SigmaSpread,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self {
            full_reset_jacobian: false,
            max_condition: 1e12,
            sigma_spread: SigmaSpread::Propagated,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterState {
    pub nominal: NominalState,
    pub p: ErrorCovariance,
    /// Time of the last processed sample, nanoseconds.
    pub t: i64,
    pub mode: FilterMode,
    pub sut: SutParams,
    pub options: FilterOptions,
}

impl FilterState {
    pub fn new(nominal: NominalState, p: ErrorCovariance, t: i64, mode: FilterMode) -> Self {
        Self {
            nominal,
            p,
            t,
            mode,
            sut: SutParams::default(),
            options: FilterOptions::default(),
        }
    }

    pub fn with_sut(mut self, sut: SutParams) -> Self {
        self.sut = sut;
        self
    }

    pub fn with_options(mut self, options: FilterOptions) -> Self {
        self.options = options;
        self
    }

    pub fn orientation_covariance(&self) -> Matrix3<f64> {
        self.p.fixed_view::<3, 3>(THETA, THETA).into_owned()
    }
}

/// Keeps `P` symmetric and projects it back onto the PSD cone if roundoff
/// pushed its smallest eigenvalue below `-1e-12·trace`.
pub(crate) fn condition_covariance(p: &ErrorCovariance) -> ErrorCovariance {
    linalg::condition_psd(p, 1e-12)
}

/// Propagates the filter to the timestamp of `u`.
pub fn propagate(fs: &FilterState, u: &ImuSample, noise: &ImuNoiseModel) -> Result<FilterState> {
    if u.t <= fs.t {
        return Err(Error::InvalidInput(format!(
            "IMU sample at {} ns does not advance filter time {} ns",
            u.t, fs.t
        )));
    }
    let dt = (u.t - fs.t) as f64 * 1e-9;
    let nominal = propagate_nominal(&fs.nominal, u, dt, noise)?;
    let (a, g) = error_jacobians(&fs.nominal, u, noise);
    let qc = process_noise(noise)?;
    let (phi, qd) = van_loan_discretize(&a, &g, &qc, dt)?;

    let p = match fs.mode {
        FilterMode::Eskf => phi * fs.p * phi.transpose() + qd,
        FilterMode::HybridQf | FilterMode::AdaptiveHybridQf => {
            let p_eskf = linalg::symmetrize(&(phi * fs.p * phi.transpose() + qd));
            let p_theta = sukf_refine_orientation(fs, &p_eskf, &nominal.q, u, dt)?;
            blend_orientation(&p_eskf, &p_theta)
        }
        FilterMode::FullSukf => full_sigma_propagate(fs, &nominal, u, dt, noise)? + qd,
    };

    Ok(FilterState {
        nominal,
        p: condition_covariance(&p),
        t: u.t,
        ..*fs
    })
}

/// Replaces the orientation block with `½(P_θθ^SUKF + (P_θθ^ESKF)ᵀ)`,
/// leaving every other entry of `P_eskf` as it was.
pub fn hybrid_blend(p_eskf: &ErrorCovariance, p_theta_sukf: &Matrix3<f64>) -> ErrorCovariance {
    condition_covariance(&blend_orientation(p_eskf, p_theta_sukf))
}

fn blend_orientation(p_eskf: &ErrorCovariance, p_theta_sukf: &Matrix3<f64>) -> ErrorCovariance {
    let eskf_block = p_eskf.fixed_view::<3, 3>(THETA, THETA).into_owned();
    let blended = (p_theta_sukf + eskf_block.transpose()) * 0.5;
    let mut p = *p_eskf;
    p.fixed_view_mut::<3, 3>(THETA, THETA).copy_from(&blended);
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Vec3;
    use crate::manifold::UnitQuaternion;
    use approx::assert_relative_eq;

    fn rest(t: i64) -> ImuSample {
        ImuSample {
            t,
            omega: Vec3::zeros(),
            accel: Vec3::new(0.0, 0.0, 9.81),
        }
    }

    fn spd(scale: f64) -> ErrorCovariance {
        let m = ErrorCovariance::from_fn(|i, j| ((i * 7 + j * 3) % 11) as f64 * 0.01);
        m * m.transpose() * scale + ErrorCovariance::identity() * scale
    }

    #[test]
    fn mode_parsing() {
        for mode in FilterMode::ALL {
            assert_eq!(mode.as_str().parse::<FilterMode>().unwrap(), mode);
        }
        assert!("kalman".parse::<FilterMode>().is_err());
    }

    #[test]
    fn sut_validation() {
        assert!(SutParams::default().validate(3).is_ok());
        assert!(SutParams::default().validate(15).is_ok());
        assert!(SutParams { alpha: 0.0, ..Default::default() }.validate(3).is_err());
        assert!(SutParams { alpha: 1.5, ..Default::default() }.validate(3).is_err());
        assert!(SutParams { alpha: 1.0, beta: 2.0, kappa: -3.0 }.validate(3).is_err());
    }

    #[test]
    fn static_stream_grows_covariance_by_qd() {
        let noise = ImuNoiseModel::default();
        let mut fs = FilterState::new(
            NominalState::default(),
            ErrorCovariance::zeros(),
            0,
            FilterMode::Eskf,
        );
        let dt_ns = 5_000_000;
        for k in 1..=200 {
            let prev = fs;
            fs = propagate(&fs, &rest(k * dt_ns), &noise).unwrap();
            assert_eq!(fs.nominal.q, prev.nominal.q);
            assert_eq!(fs.nominal.v, Vec3::zeros());
            assert_eq!(fs.nominal.p, Vec3::zeros());
            assert!(fs.p.trace() > prev.p.trace());
        }
        assert!(linalg::is_psd(&fs.p, 1e-12));
    }

    #[test]
    fn time_must_advance() {
        let noise = ImuNoiseModel::default();
        let fs = FilterState::new(NominalState::default(), spd(1e-4), 10, FilterMode::Eskf);
        assert!(propagate(&fs, &rest(10), &noise).is_err());
        // a 0.2 s gap trips the step guard
        assert!(matches!(
            propagate(&fs, &rest(10 + 200_000_000), &noise),
            Err(Error::InvalidStep { .. })
        ));
    }

    #[test]
    fn hybrid_keeps_nominal_identical_to_eskf() {
        let noise = ImuNoiseModel::default();
        let nominal = NominalState {
            q: UnitQuaternion::from_euler_zyx(0.1, 0.2, 0.3),
            v: Vec3::new(1.0, 0.0, 0.5),
            ..Default::default()
        };
        let mut eskf = FilterState::new(nominal, spd(1e-3), 0, FilterMode::Eskf);
        let mut hybrid = FilterState {
            mode: FilterMode::HybridQf,
            ..eskf
        };
        for k in 1..=100 {
            let u = ImuSample {
                t: k * 5_000_000,
                omega: Vec3::new(0.3, -1.0, 2.0 * (k as f64 * 0.05).sin()),
                accel: Vec3::new(0.5, 0.1, 9.7),
            };
            eskf = propagate(&eskf, &u, &noise).unwrap();
            hybrid = propagate(&hybrid, &u, &noise).unwrap();
            assert_eq!(eskf.nominal, hybrid.nominal);
        }
    }

    #[test]
    fn hybrid_matches_eskf_when_orientation_spread_vanishes() {
        let noise = ImuNoiseModel::default();
        let mut p = spd(1e-4);
        p.fixed_view_mut::<3, 15>(0, 0).fill(0.0);
        p.fixed_view_mut::<15, 3>(0, 0).fill(0.0);
        p.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(Matrix3::identity() * 1e-18));
        let eskf = FilterState::new(NominalState::default(), p, 0, FilterMode::Eskf);
        let hybrid = FilterState {
            mode: FilterMode::HybridQf,
            ..eskf
        };
        let u = ImuSample {
            t: 5_000_000,
            omega: Vec3::new(0.0, 0.0, 3.0),
            accel: Vec3::new(0.0, 0.0, 9.81),
        };
        let a = propagate(&eskf, &u, &noise).unwrap();
        let b = propagate(&hybrid, &u, &noise).unwrap();
        assert_relative_eq!(a.p, b.p, epsilon = 1e-9);
    }

    #[test]
    fn blend_fixed_point_and_zero_refinement() {
        let p = spd(1e-3);
        let block = p.fixed_view::<3, 3>(0, 0).into_owned();
        let same = hybrid_blend(&p, &block);
        assert_relative_eq!(same, p, epsilon = 1e-18);

        // half of the ESKF block; stays PSD because the rest of P is well conditioned
        let p = ErrorCovariance::identity() * 1e-2;
        let zeroed = hybrid_blend(&p, &Matrix3::zeros());
        assert_relative_eq!(
            zeroed.fixed_view::<3, 3>(0, 0).into_owned(),
            Matrix3::identity() * 0.5e-2
        );
    }

    #[test]
    fn blend_preserves_other_blocks_bitwise() {
        let p = spd(1e-3);
        let refined = p.fixed_view::<3, 3>(0, 0).into_owned() * 1.1;
        let out = hybrid_blend(&p, &refined);
        for i in 0..15 {
            for j in 0..15 {
                if i >= 3 || j >= 3 {
                    assert_eq!(out[(i, j)].to_bits(), p[(i, j)].to_bits(), "entry ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn full_sukf_tracks_eskf_for_small_spread() {
        let noise = ImuNoiseModel::default();
        let nominal = NominalState {
            q: UnitQuaternion::from_euler_zyx(0.3, -0.2, 1.0),
            v: Vec3::new(0.5, -0.2, 0.1),
            ..Default::default()
        };
        let eskf = FilterState::new(nominal, spd(1e-5), 0, FilterMode::Eskf);
        let full = FilterState {
            mode: FilterMode::FullSukf,
            ..eskf
        };
        let u = ImuSample {
            t: 5_000_000,
            omega: Vec3::new(0.5, 1.0, -2.0),
            accel: Vec3::new(1.0, -0.5, 9.9),
        };
        let a = propagate(&eskf, &u, &noise).unwrap();
        let b = propagate(&full, &u, &noise).unwrap();
        assert_eq!(a.nominal, b.nominal);
        // the linearised and sigma-point transitions agree to first order
        let rel = (a.p - b.p).norm() / a.p.norm();
        assert!(rel < 1e-3, "relative Frobenius difference {rel}");
    }
}
