//! Synthetic sequences with analytic ground truth.
//!
//! IMU samples are the exact body rate and specific force of an analytic
//! trajectory plus Gauss–Markov biases and white noise. Visual measurements
//! are the true position and velocity plus Gaussian noise, degraded during
//! corruption episodes that also emit matching quality-metric signatures.

use std::f64::consts::{FRAC_PI_2, TAU};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ImuBias, SequenceBundle, VisualMeasurement};
use crate::adaptive::QualityMetrics;
use crate::dynamics::{ImuNoiseModel, ImuSample, Vec3};
use crate::error::{Error, Result};
use crate::evaluation::TrajectorySample;
use crate::manifold::UnitQuaternion;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectoryKind {
    /// Level circle flown tangentially.
    Circle { radius: f64, rate: f64 },
    /// Lissajous figure-eight with oscillating attitude.
    Figure8 { ax: f64, ay: f64, az: f64, rate: f64 },
    /// Slow circle under fast multi-axis rotation; `peak_rate` bounds the
    /// norm of the Euler-angle rates.
    AggressiveRotation { peak_rate: f64 },
    /// Fixed, slightly tilted pose.
    Static,
    /// Rest-to-rest minimum-jerk segments through the waypoints, looping.
    WaypointSpline {
        waypoints: Vec<[f64; 4]>,
        segment_time: f64,
    },
}

impl TrajectoryKind {
    pub fn circle() -> Self {
        Self::Circle {
            radius: 2.0,
            rate: 0.5,
        }
    }

    pub fn figure8() -> Self {
        Self::Figure8 {
            ax: 3.0,
            ay: 1.5,
            az: 0.3,
            rate: TAU / 20.0,
        }
    }

    pub fn aggressive_rotation() -> Self {
        Self::AggressiveRotation { peak_rate: 3.0 }
    }

    /// Square of side 4 m with a height change, yaw following the edges.
    pub fn waypoint_spline() -> Self {
        Self::WaypointSpline {
            waypoints: vec![
                [0.0, 0.0, 1.0, 0.0],
                [4.0, 0.0, 1.5, FRAC_PI_2],
                [4.0, 4.0, 1.0, FRAC_PI_2 * 2.0],
                [0.0, 4.0, 1.5, FRAC_PI_2 * 3.0],
            ],
            segment_time: 4.0,
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "circle" => Ok(Self::circle()),
            "figure8" => Ok(Self::figure8()),
            "aggressive_rotation" => Ok(Self::aggressive_rotation()),
            "static" => Ok(Self::Static),
            "waypoint_spline" => Ok(Self::waypoint_spline()),
            other => Err(Error::Config(format!("unknown trajectory '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Circle { .. } => "circle",
            Self::Figure8 { .. } => "figure8",
            Self::AggressiveRotation { .. } => "aggressive_rotation",
            Self::Static => "static",
            Self::WaypointSpline { .. } => "waypoint_spline",
        }
    }
}

/// Position, its first two derivatives, and ZYX Euler angles with rates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kinematics {
    pub p: Vec3,
    pub v: Vec3,
    pub a: Vec3,
    /// (roll, pitch, yaw)
    pub euler: Vec3,
    pub euler_rate: Vec3,
}

impl Kinematics {
    pub fn orientation(&self) -> UnitQuaternion {
        UnitQuaternion::from_euler_zyx(self.euler.x, self.euler.y, self.euler.z)
    }

    /// Body-frame angular velocity from the Euler-angle rates.
    pub fn body_rate(&self) -> Vec3 {
        let (sr, cr) = self.euler.x.sin_cos();
        let (sp, cp) = self.euler.y.sin_cos();
        let d = self.euler_rate;
        Vec3::new(
            d.x - d.z * sp,
            d.y * cr + d.z * cp * sr,
            -d.y * sr + d.z * cp * cr,
        )
    }
}

fn sine(amp: f64, w: f64, phase: f64, t: f64) -> (f64, f64, f64) {
    let (s, c) = (w * t + phase).sin_cos();
    (amp * s, amp * w * c, -amp * w * w * s)
}

fn min_jerk(s: f64) -> (f64, f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    (
        10.0 * s3 - 15.0 * s3 * s + 6.0 * s3 * s2,
        30.0 * s2 - 60.0 * s3 + 30.0 * s2 * s2,
        60.0 * s - 180.0 * s2 + 120.0 * s3,
    )
}

pub fn kinematics(kind: &TrajectoryKind, t: f64) -> Kinematics {
    match kind {
        TrajectoryKind::Circle { radius, rate } => {
            let (s, c) = (rate * t).sin_cos();
            Kinematics {
                p: Vec3::new(radius * c, radius * s, 1.0),
                v: Vec3::new(-radius * rate * s, radius * rate * c, 0.0),
                a: Vec3::new(-radius * rate * rate * c, -radius * rate * rate * s, 0.0),
                euler: Vec3::new(0.0, 0.0, rate * t + FRAC_PI_2),
                euler_rate: Vec3::new(0.0, 0.0, *rate),
            }
        }
        TrajectoryKind::Figure8 { ax, ay, az, rate } => {
            let w = *rate;
            let x = sine(*ax, w, 0.0, t);
            let y = sine(*ay, 2.0 * w, 0.0, t);
            let z = sine(*az, w, FRAC_PI_2, t);
            let roll = sine(0.2, 2.0 * w, 0.0, t);
            let pitch = sine(0.15, w, FRAC_PI_2, t);
            let yaw = sine(0.5, w, 0.0, t);
            Kinematics {
                p: Vec3::new(x.0, y.0, 1.0 + z.0),
                v: Vec3::new(x.1, y.1, z.1),
                a: Vec3::new(x.2, y.2, z.2),
                euler: Vec3::new(roll.0, pitch.0, yaw.0),
                euler_rate: Vec3::new(roll.1, pitch.1, yaw.1),
            }
        }
        TrajectoryKind::AggressiveRotation { peak_rate } => {
            let per_axis = peak_rate / 3f64.sqrt();
            let amps = [0.5, 0.35, 1.0];
            let phases = [0.0, 1.0, 2.0];
            let ang: Vec<_> = (0..3)
                .map(|i| sine(amps[i], per_axis / amps[i], phases[i], t))
                .collect();
            let r = 1.0;
            let w = 0.5;
            let (s, c) = (w * t).sin_cos();
            Kinematics {
                p: Vec3::new(r * c, r * s, 1.0),
                v: Vec3::new(-r * w * s, r * w * c, 0.0),
                a: Vec3::new(-r * w * w * c, -r * w * w * s, 0.0),
                euler: Vec3::new(ang[0].0, ang[1].0, ang[2].0),
                euler_rate: Vec3::new(ang[0].1, ang[1].1, ang[2].1),
            }
        }
        TrajectoryKind::Static => Kinematics {
            p: Vec3::new(0.0, 0.0, 1.0),
            v: Vec3::zeros(),
            a: Vec3::zeros(),
            euler: Vec3::new(0.05, -0.03, 0.4),
            euler_rate: Vec3::zeros(),
        },
        TrajectoryKind::WaypointSpline {
            waypoints,
            segment_time,
        } => {
            let n = waypoints.len();
            if n == 0 || !(*segment_time > 0.0) {
                return kinematics(&TrajectoryKind::Static, t);
            }
            let k = (t / segment_time).floor().max(0.0);
            let s = (t - k * segment_time) / segment_time;
            let i = (k as usize) % n;
            let from = waypoints[i];
            let to = waypoints[(i + 1) % n];
            let laps = (k as usize / n) as f64;
            // unwrap yaw so that looping keeps turning the same way
            let yaw_from = from[3] + laps * TAU;
            let mut yaw_to = to[3] + laps * TAU;
            if i + 1 == n {
                yaw_to += TAU;
            }
            let (h, dh, ddh) = min_jerk(s);
            let (dh, ddh) = (dh / segment_time, ddh / (segment_time * segment_time));
            let d = Vec3::new(to[0] - from[0], to[1] - from[1], to[2] - from[2]);
            let dyaw = yaw_to - yaw_from;
            Kinematics {
                p: Vec3::new(from[0], from[1], from[2]) + d * h,
                v: d * dh,
                a: d * ddh,
                euler: Vec3::new(0.0, 0.0, yaw_from + dyaw * h),
                euler_rate: Vec3::new(0.0, 0.0, dyaw * dh),
            }
        }
    }
}

/// Mean and per-field standard deviation of synthetic quality metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSignature {
    pub mean: QualityMetrics,
    pub jitter: QualityMetrics,
}

impl MetricSignature {
    pub fn benign() -> Self {
        Self {
            mean: QualityMetrics {
                intensity: 120.0,
                entropy: 7.4,
                blur: 150.0,
                pose_chi2: 0.8,
                culled_keyframes: 0.0,
                projection_error: 0.5,
                num_inliers: 150.0,
            },
            jitter: QualityMetrics {
                intensity: 3.0,
                entropy: 0.05,
                blur: 10.0,
                pose_chi2: 0.1,
                culled_keyframes: 0.0,
                projection_error: 0.05,
                num_inliers: 5.0,
            },
        }
    }

    /// Dark, low-texture frames with a failing pose optimisation.
    pub fn degraded() -> Self {
        Self {
            mean: QualityMetrics {
                intensity: 40.0,
                entropy: 5.0,
                blur: 400.0,
                pose_chi2: 15.0,
                culled_keyframes: 4.0,
                projection_error: 3.0,
                num_inliers: 30.0,
            },
            jitter: QualityMetrics {
                intensity: 5.0,
                entropy: 0.2,
                blur: 30.0,
                pose_chi2: 1.0,
                culled_keyframes: 0.5,
                projection_error: 0.3,
                num_inliers: 5.0,
            },
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> QualityMetrics {
        let mut draw = |mean: f64, sd: f64| {
            let z: f64 = StandardNormal.sample(rng);
            (mean + sd * z).max(0.0)
        };
        QualityMetrics {
            intensity: draw(self.mean.intensity, self.jitter.intensity).min(255.0),
            entropy: draw(self.mean.entropy, self.jitter.entropy).min(8.0),
            blur: draw(self.mean.blur, self.jitter.blur),
            pose_chi2: draw(self.mean.pose_chi2, self.jitter.pose_chi2),
            culled_keyframes: draw(self.mean.culled_keyframes, self.jitter.culled_keyframes).round(),
            projection_error: draw(self.mean.projection_error, self.jitter.projection_error),
            num_inliers: draw(self.mean.num_inliers, self.jitter.num_inliers).round(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CorruptionKind {
    /// No visual measurements.
    Dropout,
    /// Position and velocity noise multiplied by `factor`.
    NoiseSpike { factor: f64 },
    /// Constant position offset.
    BiasJump { offset: [f64; 3] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionEpisode {
    /// Seconds from the start of the sequence.
    pub start: f64,
    pub end: f64,
    pub kind: CorruptionKind,
    /// Metric signature written during the episode; degraded when absent.
    #[serde(default)]
    pub signature: Option<MetricSignature>,
}

impl CorruptionEpisode {
    pub fn new(start: f64, end: f64, kind: CorruptionKind) -> Self {
        Self {
            start,
            end,
            kind,
            signature: None,
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub trajectory: TrajectoryKind,
    /// Seconds.
    pub duration: f64,
    pub imu_rate: f64,
    pub vo_rate: f64,
    pub noise: ImuNoiseModel,
    /// Standard deviation of VO position noise, m.
    pub vo_sigma_p: f64,
    /// Standard deviation of VO velocity noise, m/s.
    pub vo_sigma_v: f64,
    /// Standard deviations of the initial accelerometer and gyro biases.
    pub initial_bias_sigma: [f64; 2],
    pub corruption_episodes: Vec<CorruptionEpisode>,
    pub benign_metrics: MetricSignature,
    pub seed: u64,
    /// Disables every noise source (IMU, bias, VO and metric jitter).
    #[serde(default)]
    pub noise_free: bool,
    /// Timestamp of the first sample, ns.
    #[serde(default)]
    pub t0: i64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            trajectory: TrajectoryKind::figure8(),
            duration: 60.0,
            imu_rate: 200.0,
            vo_rate: 20.0,
            noise: ImuNoiseModel::default(),
            vo_sigma_p: 0.02,
            vo_sigma_v: 0.05,
            initial_bias_sigma: [0.02, 0.002],
            corruption_episodes: Vec::new(),
            benign_metrics: MetricSignature::benign(),
            seed: 0,
            noise_free: false,
            t0: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn new(trajectory: TrajectoryKind, duration: f64, seed: u64) -> Self {
        Self {
            trajectory,
            duration,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Config(format!("duration must be positive, got {}", self.duration)));
        }
        if !(self.imu_rate > 0.0 && self.vo_rate > 0.0 && self.vo_rate <= self.imu_rate) {
            return Err(Error::Config(format!(
                "rates need 0 < vo_rate ≤ imu_rate, got imu {} Hz, vo {} Hz",
                self.imu_rate, self.vo_rate
            )));
        }
        if 1.0 / self.imu_rate > crate::dynamics::MAX_STEP {
            return Err(Error::Config(format!(
                "imu_rate {} Hz is below the minimum integration rate",
                self.imu_rate
            )));
        }
        if !(self.vo_sigma_p >= 0.0 && self.vo_sigma_v >= 0.0)
            || self.initial_bias_sigma.iter().any(|s| !(*s >= 0.0))
        {
            return Err(Error::Config("noise standard deviations must be ≥ 0".into()));
        }
        for e in &self.corruption_episodes {
            if !(0.0 <= e.start && e.start < e.end && e.end <= self.duration) {
                return Err(Error::Config(format!(
                    "corruption episode [{}, {}) is not inside [0, {}]",
                    e.start, e.end, self.duration
                )));
            }
            if let CorruptionKind::NoiseSpike { factor } = e.kind {
                if !(factor >= 0.0 && factor.is_finite()) {
                    return Err(Error::Config(format!("noise spike factor {factor} must be ≥ 0")));
                }
            }
        }
        self.noise.validate()
    }

    /// Fraction of the timeline covered by corruption episodes.
    pub fn corrupted_fraction(&self) -> f64 {
        self.corruption_episodes
            .iter()
            .map(|e| e.end - e.start)
            .sum::<f64>()
            / self.duration
    }
}

// independent random streams so that changing one source leaves the others intact
const STREAM_IMU: u64 = 1;
const STREAM_BIAS: u64 = 2;
const STREAM_VO: u64 = 3;
const STREAM_METRICS: u64 = 4;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn gaussian3(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::from_fn(|_, _| StandardNormal.sample(rng))
}

struct BiasProcess {
    decay: f64,
    step_sd: f64,
}

impl BiasProcess {
    fn new(sigma_w: f64, tau: f64, dt: f64) -> Self {
        if tau.is_finite() {
            let decay = (-dt / tau).exp();
            Self {
                decay,
                step_sd: sigma_w * (0.5 * tau * (1.0 - decay * decay)).sqrt(),
            }
        } else {
            Self {
                decay: 1.0,
                step_sd: sigma_w * dt.sqrt(),
            }
        }
    }

    fn step(&self, b: &Vec3, rng: &mut ChaCha8Rng) -> Vec3 {
        b * self.decay + gaussian3(rng) * self.step_sd
    }
}

fn truth_sample(t_ns: i64, k: &Kinematics) -> TrajectorySample {
    TrajectorySample {
        t: t_ns,
        p: k.p,
        q: k.orientation(),
        v: Some(k.v),
    }
}

/// Generates a deterministic synthetic sequence.
///
/// Ground truth is emitted at the IMU rate. The IMU sample at `t_k` carries
/// the rate and specific force at the middle of `(t_{k-1}, t_k]`, the
/// interval it is integrated over.
pub fn simulate(spec: &ScenarioSpec) -> Result<SequenceBundle> {
    spec.validate()?;
    let dt_ns = (1e9 / spec.imu_rate).round() as i64;
    let dt = dt_ns as f64 * 1e-9;
    let n = (spec.duration / dt).round() as usize;
    let vo_every = ((spec.imu_rate / spec.vo_rate).round() as usize).max(1);
    let g = spec.noise.gravity();
    let noise_scale = if spec.noise_free { 0.0 } else { 1.0 };

    let mut imu_rng = rng(spec.seed, STREAM_IMU);
    let mut bias_rng = rng(spec.seed, STREAM_BIAS);
    let mut vo_rng = rng(spec.seed, STREAM_VO);
    let mut metric_rng = rng(spec.seed, STREAM_METRICS);

    let ba_proc = BiasProcess::new(spec.noise.sigma_wa * noise_scale, spec.noise.tau_a, dt);
    let bg_proc = BiasProcess::new(spec.noise.sigma_wg * noise_scale, spec.noise.tau_g, dt);
    let mut b_a = gaussian3(&mut bias_rng) * spec.initial_bias_sigma[0] * noise_scale;
    let mut b_g = gaussian3(&mut bias_rng) * spec.initial_bias_sigma[1] * noise_scale;
    let sd_g = spec.noise.sigma_g / dt.sqrt() * noise_scale;
    let sd_a = spec.noise.sigma_a / dt.sqrt() * noise_scale;

    let mut imu = Vec::with_capacity(n + 1);
    let mut ground_truth = Vec::with_capacity(n + 1);
    let mut gt_biases = Vec::with_capacity(n + 1);
    let mut vo = Vec::with_capacity(n / vo_every + 1);

    for k in 0..=n {
        let t_ns = spec.t0 + k as i64 * dt_ns;
        let t = k as f64 * dt;
        if k > 0 {
            // biases evolve over the interval that ends here
            b_a = ba_proc.step(&b_a, &mut bias_rng);
            b_g = bg_proc.step(&b_g, &mut bias_rng);
        }
        let mid = kinematics(&spec.trajectory, t - 0.5 * dt);
        let specific_force = mid.orientation().inverse().rotate(&(mid.a - g));
        imu.push(ImuSample {
            t: t_ns,
            omega: mid.body_rate() + b_g + gaussian3(&mut imu_rng) * sd_g,
            accel: specific_force + b_a + gaussian3(&mut imu_rng) * sd_a,
        });

        let now = kinematics(&spec.trajectory, t);
        ground_truth.push(truth_sample(t_ns, &now));
        gt_biases.push(ImuBias { b_a, b_g });

        if k > 0 && k % vo_every == 0 {
            let episode = spec.corruption_episodes.iter().find(|e| e.contains(t));
            let mut p_sd = spec.vo_sigma_p * noise_scale;
            let mut v_sd = spec.vo_sigma_v * noise_scale;
            let mut offset = Vec3::zeros();
            let signature = match episode {
                None => spec.benign_metrics,
                Some(e) => {
                    match &e.kind {
                        CorruptionKind::Dropout => continue,
                        CorruptionKind::NoiseSpike { factor } => {
                            p_sd *= factor;
                            v_sd *= factor;
                        }
                        CorruptionKind::BiasJump { offset: o } => offset = Vec3::from(*o),
                    }
                    e.signature.unwrap_or_else(MetricSignature::degraded)
                }
            };
            let metrics = if spec.noise_free {
                signature.mean
            } else {
                signature.sample(&mut metric_rng)
            };
            vo.push(VisualMeasurement {
                t: t_ns,
                p_vis: now.p + offset + gaussian3(&mut vo_rng) * p_sd,
                v_vis: now.v + gaussian3(&mut vo_rng) * v_sd,
                metrics,
            });
        }
    }

    Ok(SequenceBundle {
        name: format!("{}_seed{}", spec.trajectory.name(), spec.seed),
        imu,
        ground_truth,
        gt_biases,
        vo,
        frames: Vec::new(),
    })
}

/// Three equal episodes (dropout, noise spike, position jump) spread over the
/// timeline and covering `fraction` of it.
pub fn standard_corruption(duration: f64, fraction: f64) -> Vec<CorruptionEpisode> {
    let len = duration * fraction / 3.0;
    let kinds = [
        CorruptionKind::Dropout,
        CorruptionKind::NoiseSpike { factor: 20.0 },
        CorruptionKind::BiasJump {
            offset: [0.5, -0.4, 0.3],
        },
    ];
    kinds
        .into_iter()
        .enumerate()
        .map(|(i, kind)| {
            let centre = duration * (i as f64 + 1.0) / 4.0;
            CorruptionEpisode::new(centre - 0.5 * len, centre + 0.5 * len, kind)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn static_noise_free_imu_is_gravity_reaction() {
        let spec = ScenarioSpec {
            trajectory: TrajectoryKind::Static,
            duration: 1.0,
            noise_free: true,
            ..Default::default()
        };
        let b = simulate(&spec).unwrap();
        let q = kinematics(&TrajectoryKind::Static, 0.0).orientation();
        let expected = q.inverse().rotate(&(-spec.noise.gravity()));
        for s in &b.imu {
            assert_eq!(s.omega, Vec3::zeros());
            assert_relative_eq!(s.accel, expected, epsilon = 1e-12);
        }
        assert_eq!(b.imu.len(), 201);
        assert_eq!(b.vo.len(), 20);
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let spec = ScenarioSpec {
            corruption_episodes: standard_corruption(10.0, 0.2),
            ..ScenarioSpec::new(TrajectoryKind::figure8(), 10.0, 42)
        };
        let a = simulate(&spec).unwrap();
        let b = simulate(&spec).unwrap();
        assert_eq!(a, b);
        let other = simulate(&ScenarioSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a.imu, other.imu);
    }

    #[test]
    fn body_rate_matches_finite_difference() {
        for kind in [
            TrajectoryKind::circle(),
            TrajectoryKind::figure8(),
            TrajectoryKind::aggressive_rotation(),
            TrajectoryKind::waypoint_spline(),
        ] {
            for &t in &[0.3, 1.7, 5.2, 11.9] {
                let h = 1e-6;
                let q0 = kinematics(&kind, t - h).orientation();
                let q1 = kinematics(&kind, t + h).orientation();
                let fd = (q0.inverse() * q1).log() / (2.0 * h);
                assert_relative_eq!(kinematics(&kind, t).body_rate(), fd, epsilon = 1e-6);
                let p0 = kinematics(&kind, t - h);
                let p1 = kinematics(&kind, t + h);
                assert_relative_eq!(kinematics(&kind, t).v, (p1.p - p0.p) / (2.0 * h), epsilon = 1e-6);
                assert_relative_eq!(kinematics(&kind, t).a, (p1.v - p0.v) / (2.0 * h), epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn aggressive_rotation_peak_rate() {
        let kind = TrajectoryKind::aggressive_rotation();
        let peak = (0..20_000)
            .map(|k| kinematics(&kind, k as f64 * 0.005).euler_rate.norm())
            .fold(0.0, f64::max);
        assert!(peak <= 3.0 + 1e-9 && peak > 2.5, "peak {peak}");
    }

    #[test]
    fn corruption_episodes_shape_vo() {
        let spec = ScenarioSpec {
            trajectory: TrajectoryKind::circle(),
            duration: 20.0,
            corruption_episodes: standard_corruption(20.0, 0.3),
            noise_free: true,
            ..Default::default()
        };
        let b = simulate(&spec).unwrap();
        let eps = &spec.corruption_episodes;
        assert_relative_eq!(spec.corrupted_fraction(), 0.3, epsilon = 1e-12);
        let in_episode = |m: &VisualMeasurement, i: usize| eps[i].contains(m.t as f64 * 1e-9);
        assert!(b.vo.iter().all(|m| !in_episode(m, 0)));
        let jumped: Vec<_> = b.vo.iter().filter(|m| in_episode(m, 2)).collect();
        assert!(!jumped.is_empty());
        for m in jumped {
            let truth = kinematics(&spec.trajectory, m.t as f64 * 1e-9).p;
            assert_relative_eq!(m.p_vis - truth, Vec3::new(0.5, -0.4, 0.3), epsilon = 1e-12);
            assert!(m.metrics.pose_chi2 > 10.0);
        }
        assert!(b.vo.iter().filter(|m| !eps.iter().any(|e| e.contains(m.t as f64 * 1e-9))).all(|m| m.metrics.pose_chi2 < 1.0));
    }

    #[test]
    fn episodes_must_fit_the_timeline() {
        let spec = ScenarioSpec {
            duration: 5.0,
            corruption_episodes: vec![CorruptionEpisode::new(4.0, 6.0, CorruptionKind::Dropout)],
            ..Default::default()
        };
        assert!(matches!(simulate(&spec), Err(Error::Config(_))));
    }
}
