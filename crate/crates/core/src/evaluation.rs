//! Trajectory association, rigid alignment, error metrics, runtime accounting
//! and metric-vs-error correlation.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::Vec3;
use crate::error::{Error, Result};
use crate::manifold::UnitQuaternion;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectorySample {
    pub t: i64,
    pub p: Vec3,
    pub q: UnitQuaternion,
    pub v: Option<Vec3>,
}

impl TrajectorySample {
    pub fn new(t: i64, p: Vec3, q: UnitQuaternion) -> Self {
        Self { t, p, q, v: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pair {
    pub est: TrajectorySample,
    pub gt: TrajectorySample,
}

pub const DEFAULT_MAX_DT: f64 = 0.005;

/// Nearest-neighbour association of each estimate to a ground-truth sample
/// within `max_dt` seconds. Both inputs must be sorted by time.
pub fn associate(
    est: &[TrajectorySample],
    gt: &[TrajectorySample],
    max_dt: f64,
) -> Result<Vec<Pair>> {
    let sorted = |s: &[TrajectorySample]| s.windows(2).all(|w| w[0].t <= w[1].t);
    if !sorted(est) || !sorted(gt) {
        return Err(Error::Data("trajectories must be sorted by timestamp".into()));
    }
    let max_ns = (max_dt * 1e9).round() as i64;
    let mut pairs = Vec::new();
    let mut j = 0usize;
    for e in est {
        while j + 1 < gt.len() && gt[j + 1].t <= e.t {
            j += 1;
        }
        let best = [j, j + 1]
            .into_iter()
            .filter(|&k| k < gt.len())
            .min_by_key(|&k| (gt[k].t - e.t).abs());
        if let Some(k) = best {
            if (gt[k].t - e.t).abs() <= max_ns {
                pairs.push(Pair { est: *e, gt: gt[k] });
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyAssociation);
    }
    Ok(pairs)
}

/// Similarity transform `x ↦ s·R·x + t` mapping estimates onto ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Alignment {
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
    pub scale: f64,
}

impl Alignment {
    pub fn identity() -> Self {
        Self {
            r: Matrix3::identity(),
            t: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.r * p * self.scale + self.t
    }

    pub fn rotation(&self) -> UnitQuaternion {
        UnitQuaternion::from_rotation_matrix(&self.r)
    }
}

/// Closed-form least-squares alignment of estimated onto ground-truth
/// positions (Umeyama). Scale is fixed to one unless `with_scale`.
pub fn align_umeyama(pairs: &[Pair], with_scale: bool) -> Result<Alignment> {
    if pairs.len() < 3 {
        return Err(Error::DegenerateAlignment(format!(
            "need at least 3 pairs, got {}",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let mu_e = pairs.iter().map(|p| p.est.p).sum::<Vec3>() / n;
    let mu_g = pairs.iter().map(|p| p.gt.p).sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_e = 0.0;
    for p in pairs {
        let de = p.est.p - mu_e;
        cov += (p.gt.p - mu_g) * de.transpose();
        var_e += de.norm_squared();
    }
    cov /= n;
    var_e /= n;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut sv = svd.singular_values;
    // order singular values descending so the rank test reads the smallest
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let largest = sv[idx[0]];
    if !(largest > 0.0) || sv[idx[1]] <= 1e-12 * largest {
        return Err(Error::DegenerateAlignment(format!(
            "centred positions have rank < 2 (singular values {:.3e}, {:.3e}, {:.3e})",
            sv[0], sv[1], sv[2]
        )));
    }
    let mut d = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        d[(idx[2], idx[2])] = -1.0;
        sv[idx[2]] = -sv[idx[2]];
    }
    let r = u * d * v_t;
    let scale = if with_scale {
        if var_e <= 0.0 {
            return Err(Error::DegenerateAlignment("estimate has zero spread".into()));
        }
        sv.sum() / var_e
    } else {
        1.0
    };
    Ok(Alignment {
        r,
        t: mu_g - r * mu_e * scale,
        scale,
    })
}

/// Rigid (no scale) alignment.
pub fn align_se3(pairs: &[Pair]) -> Result<Alignment> {
    align_umeyama(pairs, false)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PositionErrors {
    pub ate_rmse: f64,
    pub rmse_x: f64,
    pub rmse_y: f64,
    pub rmse_z: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EulerErrors {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    /// Some sample is within 1° of gimbal lock.
    pub unreliable: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub ate_rmse: f64,
    pub rmse_x: f64,
    pub rmse_y: f64,
    pub rmse_z: f64,
    pub roll_rmse: f64,
    pub pitch_rmse: f64,
    pub yaw_rmse: f64,
    pub quat_rmse: f64,
    pub n_pairs: usize,
    pub euler_unreliable: bool,
    /// Euler errors computed without rotating the estimates.
    pub raw_roll_rmse: f64,
    pub raw_pitch_rmse: f64,
    pub raw_yaw_rmse: f64,
}

fn rms(sum_sq: f64, n: usize) -> f64 {
    (sum_sq / n as f64).sqrt()
}

fn aligned_pairs(pairs: &[Pair], alignment: &Alignment) -> Vec<Pair> {
    let rot = alignment.rotation();
    pairs
        .iter()
        .map(|p| Pair {
            est: TrajectorySample {
                p: alignment.apply(&p.est.p),
                q: rot * p.est.q,
                v: p.est.v.map(|v| alignment.r * v * alignment.scale),
                ..p.est
            },
            gt: p.gt,
        })
        .collect()
}

/// Positional RMSE, optionally after rigid alignment.
pub fn ate(pairs: &[Pair], aligned: bool) -> Result<PositionErrors> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no pairs to evaluate".into()));
    }
    let alignment = if aligned {
        align_se3(pairs)?
    } else {
        Alignment::identity()
    };
    let mut sq = Vector3::zeros();
    for p in pairs {
        let d = alignment.apply(&p.est.p) - p.gt.p;
        sq += d.component_mul(&d);
    }
    let n = pairs.len();
    Ok(PositionErrors {
        ate_rmse: rms(sq.sum(), n),
        rmse_x: rms(sq.x, n),
        rmse_y: rms(sq.y, n),
        rmse_z: rms(sq.z, n),
    })
}

/// Angle of `q_gt⁻¹ ⊗ q_est` in degrees.
pub fn rotation_error_deg(gt: &UnitQuaternion, est: &UnitQuaternion) -> f64 {
    let w = (gt.inverse() * *est).w().abs().min(1.0);
    (2.0 * w.acos()).to_degrees()
}

/// RMSE of the per-pair rotation angle, in degrees. Orientations are used as
/// given; rotate them beforehand to evaluate after alignment.
pub fn quat_rmse(pairs: &[Pair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no pairs to evaluate".into()));
    }
    let sum: f64 = pairs
        .iter()
        .map(|p| rotation_error_deg(&p.gt.q, &p.est.q).powi(2))
        .sum();
    Ok(rms(sum, pairs.len()))
}

/// Wraps an angle in degrees to `(-180, 180]`.
pub fn wrap_deg(a: f64) -> f64 {
    let r = a.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

pub fn euler_rmse(pairs: &[Pair]) -> Result<EulerErrors> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no pairs to evaluate".into()));
    }
    let mut sq = [0.0; 3];
    let mut unreliable = false;
    for p in pairs {
        let (re, pe, ye) = p.est.q.to_euler_zyx();
        let (rg, pg, yg) = p.gt.q.to_euler_zyx();
        unreliable |= pe.to_degrees().abs() > 89.0 || pg.to_degrees().abs() > 89.0;
        for (k, (a, b)) in [(re, rg), (pe, pg), (ye, yg)].into_iter().enumerate() {
            sq[k] += wrap_deg(a.to_degrees() - b.to_degrees()).powi(2);
        }
    }
    let n = pairs.len();
    Ok(EulerErrors {
        roll: rms(sq[0], n),
        pitch: rms(sq[1], n),
        yaw: rms(sq[2], n),
        unreliable,
    })
}

/// Full error report: positions and orientations after rigid alignment, plus
/// raw Euler errors.
pub fn evaluate(pairs: &[Pair], aligned: bool) -> Result<ErrorReport> {
    let alignment = if aligned {
        align_se3(pairs)?
    } else {
        Alignment::identity()
    };
    let moved = aligned_pairs(pairs, &alignment);
    let pos = ate(&moved, false)?;
    let euler = euler_rmse(&moved)?;
    let raw = euler_rmse(pairs)?;
    Ok(ErrorReport {
        ate_rmse: pos.ate_rmse,
        rmse_x: pos.rmse_x,
        rmse_y: pos.rmse_y,
        rmse_z: pos.rmse_z,
        roll_rmse: euler.roll,
        pitch_rmse: euler.pitch,
        yaw_rmse: euler.yaw,
        quat_rmse: quat_rmse(&moved)?,
        n_pairs: pairs.len(),
        euler_unreliable: euler.unreliable || raw.unreliable,
        raw_roll_rmse: raw.roll,
        raw_pitch_rmse: raw.pitch,
        raw_yaw_rmse: raw.yaw,
    })
}

pub fn real_time_factor(sequence_duration: f64, processing_time: f64) -> Result<f64> {
    if !(sequence_duration > 0.0 && processing_time > 0.0) {
        return Err(Error::InvalidInput(format!(
            "durations must be positive, got {sequence_duration} and {processing_time}"
        )));
    }
    Ok(sequence_duration / processing_time)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub mode: String,
    pub processing_time: f64,
    pub rtf: f64,
    pub mean_step_latency: f64,
    pub p99_step_latency: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeTiming {
    pub mode: String,
    /// Total wall-clock seconds.
    pub processing_time: f64,
    /// Per-step latencies in seconds.
    pub step_latencies: Vec<f64>,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn timing_report(timings: &[ModeTiming], sequence_duration: f64) -> Result<Vec<TimingRow>> {
    timings
        .iter()
        .map(|m| {
            let mut lat = m.step_latencies.clone();
            lat.sort_by(f64::total_cmp);
            let mean = if lat.is_empty() {
                0.0
            } else {
                lat.iter().sum::<f64>() / lat.len() as f64
            };
            Ok(TimingRow {
                mode: m.mode.clone(),
                processing_time: m.processing_time,
                rtf: real_time_factor(sequence_duration, m.processing_time)?,
                mean_step_latency: mean,
                p99_step_latency: percentile(&lat, 0.99),
            })
        })
        .collect()
}

/// Pearson correlation; `None` when either column has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

pub const UNDEFINED: &str = "undefined";

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        self.values[i][j]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (name, row) in self.names.iter().zip(&self.values) {
            out.push_str(name);
            for v in row {
                match v {
                    Some(r) => write!(out, ",{r}").unwrap(),
                    None => write!(out, ",{UNDEFINED}").unwrap(),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Pearson correlation between every metric column and the per-window ATE.
/// The ATE column is appended last under the name `ate`.
pub fn metric_correlation(
    metrics: &[(String, Vec<f64>)],
    per_window_ate: &[f64],
) -> Result<CorrelationMatrix> {
    let n = per_window_ate.len();
    if n < 10 {
        return Err(Error::InsufficientData(format!(
            "correlation needs at least 10 windows, got {n}"
        )));
    }
    if let Some((name, col)) = metrics.iter().find(|(_, c)| c.len() != n) {
        return Err(Error::InvalidInput(format!(
            "metric column '{name}' has {} rows, ATE has {n}",
            col.len()
        )));
    }
    let mut names: Vec<String> = metrics.iter().map(|(n, _)| n.clone()).collect();
    names.push("ate".into());
    let mut cols: Vec<&[f64]> = metrics.iter().map(|(_, c)| c.as_slice()).collect();
    cols.push(per_window_ate);
    let values = cols
        .iter()
        .map(|a| cols.iter().map(|b| pearson(a, b)).collect())
        .collect();
    Ok(CorrelationMatrix { names, values })
}
