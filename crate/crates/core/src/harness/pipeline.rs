//! Time-ordered estimation loop, multi-mode comparison, parameter sweeps and
//! propagation benchmarks.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::time::Instant;

use log::{debug, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::config::{InitSource, RunConfig};
use super::{ImuBias, SequenceBundle, VisualMeasurement};
use crate::adaptive::{compute_static_metrics, AdaptiveCovariance, GrayscaleFrame, QualityMetrics};
use crate::dynamics::{ErrorVector, ImuSample, NominalState, Vec3};
use crate::error::{Error, Result};
use crate::evaluation::{associate, evaluate, ErrorReport, ModeTiming, TrajectorySample};
use crate::filter::{
    detect_stationary, gravity_update, propagate, visual_covariance, visual_update, zupt_update,
    FilterMode, FilterState, UpdateStatus, VisualObservation,
};
use crate::linalg;
use crate::manifold::UnitQuaternion;

/// One visual update as seen by the filter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VisualLog {
    pub t: i64,
    pub theta_p: f64,
    pub theta_v: f64,
    /// Noise actually used for the update.
    pub sigma_p: f64,
    pub sigma_v: f64,
    pub innovation: [f64; 6],
    pub applied: bool,
    pub metrics: QualityMetrics,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunLog {
    pub visual: Vec<VisualLog>,
    pub zupt_updates: usize,
    pub gravity_updates: usize,
    /// Updates refused because the innovation covariance was ill-conditioned.
    pub rejections: usize,
    pub divergence: Option<String>,
}

impl RunLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "t_ns,theta_p,theta_v,sigma_p,sigma_v,nu_px,nu_py,nu_pz,nu_vx,nu_vy,nu_vz,applied,\
             intensity,entropy,blur,pose_chi2,culled_kf,projection_error,num_inliers\n",
        );
        for v in &self.visual {
            let m = &v.metrics;
            write!(out, "{},{},{},{},{}", v.t, v.theta_p, v.theta_v, v.sigma_p, v.sigma_v).unwrap();
            for n in v.innovation {
                write!(out, ",{n}").unwrap();
            }
            writeln!(
                out,
                ",{},{},{},{},{},{},{},{}",
                u8::from(v.applied),
                m.intensity,
                m.entropy,
                m.blur,
                m.pose_chi2,
                m.culled_keyframes,
                m.projection_error,
                m.num_inliers
            )
            .unwrap();
        }
        out
    }
}

/// Wall-clock accounting in seconds.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunTiming {
    pub total: f64,
    pub propagation: f64,
    pub updates: f64,
    /// Duration of every propagation step.
    pub step_latencies: Vec<f64>,
}

impl RunTiming {
    pub fn mean_step(&self) -> f64 {
        if self.step_latencies.is_empty() {
            0.0
        } else {
            self.step_latencies.iter().sum::<f64>() / self.step_latencies.len() as f64
        }
    }

    pub fn mode_timing(&self, mode: FilterMode) -> ModeTiming {
        ModeTiming {
            mode: mode.as_str().to_string(),
            processing_time: self.total,
            step_latencies: self.step_latencies.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub mode: FilterMode,
    /// Posterior state after every IMU sample.
    pub trajectory: Vec<TrajectorySample>,
    pub biases: Vec<ImuBias>,
    pub log: RunLog,
    pub timing: RunTiming,
    /// The filter diverged and the outputs stop early.
    pub diverged: bool,
}

impl RunOutput {
    pub fn trajectory_csv(&self) -> String {
        let mut buf = Vec::new();
        super::io::write_trajectory(&self.trajectory, &self.biases, &mut buf)
            .expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("trajectory CSV is ASCII")
    }
}

fn nearest_index(ts: impl Iterator<Item = i64>, t: i64) -> Option<usize> {
    ts.enumerate()
        .min_by_key(|(_, s)| (s - t).abs())
        .map(|(i, _)| i)
}

fn initial_nominal(bundle: &SequenceBundle, cfg: &RunConfig) -> Result<NominalState> {
    let t0 = bundle.imu[0].t;
    match cfg.init.source {
        InitSource::GroundTruth => {
            let i = nearest_index(bundle.ground_truth.iter().map(|s| s.t), t0).ok_or_else(|| {
                Error::InsufficientData(format!(
                    "sequence '{}' has no ground truth to initialise from",
                    bundle.name
                ))
            })?;
            let gt = &bundle.ground_truth;
            let v = gt[i].v.unwrap_or_else(|| {
                let (a, b) = (i.saturating_sub(1), (i + 1).min(gt.len() - 1));
                if a == b {
                    Vec3::zeros()
                } else {
                    (gt[b].p - gt[a].p) / ((gt[b].t - gt[a].t) as f64 * 1e-9)
                }
            });
            let bias = if cfg.init.use_gt_biases {
                bundle.gt_biases.get(i).copied()
            } else {
                None
            };
            Ok(NominalState {
                q: gt[i].q,
                v,
                p: gt[i].p,
                b_a: bias.map_or_else(Vec3::zeros, |b| b.b_a),
                b_g: bias.map_or_else(Vec3::zeros, |b| b.b_g),
            })
        }
        InitSource::Gravity => {
            let n = cfg.stationarity.window.min(bundle.imu.len());
            let f = bundle.imu[..n].iter().map(|s| s.accel).sum::<Vec3>() / n as f64;
            let roll = f.y.atan2(f.z);
            let pitch = (-f.x).atan2((f.y * f.y + f.z * f.z).sqrt());
            let (p, v) = bundle
                .vo
                .first()
                .map_or((Vec3::zeros(), Vec3::zeros()), |m| (m.p_vis, m.v_vis));
            Ok(NominalState {
                q: UnitQuaternion::from_euler_zyx(roll, pitch, 0.0),
                v,
                p,
                b_a: Vec3::zeros(),
                b_g: Vec3::zeros(),
            })
        }
    }
}

fn initial_state(bundle: &SequenceBundle, cfg: &RunConfig) -> Result<FilterState> {
    let mut nominal = initial_nominal(bundle, cfg)?;
    let p0 = cfg.init.covariance();
    if cfg.init.perturb {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let z = ErrorVector::from_fn(|_, _| StandardNormal.sample(&mut rng));
        let l = linalg::cholesky_with_jitter(&p0)?;
        nominal = nominal.boxplus(&(l * z));
    }
    Ok(FilterState::new(nominal, p0, bundle.imu[0].t, cfg.mode)
        .with_sut(cfg.sut)
        .with_options(cfg.filter))
}

fn snapshot(fs: &FilterState) -> (TrajectorySample, ImuBias) {
    (
        TrajectorySample {
            t: fs.t,
            p: fs.nominal.p,
            q: fs.nominal.q,
            v: Some(fs.nominal.v),
        },
        ImuBias {
            b_a: fs.nominal.b_a,
            b_g: fs.nominal.b_g,
        },
    )
}

/// Replaces the image statistics of `m` with ones computed from the latest
/// frame at or before its timestamp.
fn frame_metrics(
    m: &VisualMeasurement,
    frames: &[GrayscaleFrame],
    cfg: &RunConfig,
) -> Result<QualityMetrics> {
    let idx = frames.partition_point(|f| f.t <= m.t);
    if idx == 0 {
        return Ok(m.metrics);
    }
    let s = compute_static_metrics(&frames[idx - 1], cfg.metrics.laplacian)?;
    Ok(QualityMetrics {
        intensity: s.intensity,
        entropy: s.entropy,
        blur: s.blur,
        ..m.metrics
    })
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::Divergence(_) | Error::Numerical(_))
}

/// Runs the filter over a bundle.
pub fn run_pipeline(bundle: &SequenceBundle, cfg: &RunConfig) -> Result<RunOutput> {
    run_pipeline_with(bundle, cfg, |_| {})
}

/// Runs the filter, calling `observer` with the posterior after every IMU
/// sample.
pub fn run_pipeline_with<F>(bundle: &SequenceBundle, cfg: &RunConfig, mut observer: F) -> Result<RunOutput>
where
    F: FnMut(&FilterState),
{
    bundle.validate()?;
    cfg.validate()?;
    let started = Instant::now();
    let noise = cfg.measurement_noise();
    let thresholds = cfg.stationarity.thresholds();
    let mut params = cfg.adaptive;
    if cfg.metrics.calibrate_chi2 && !bundle.vo.is_empty() {
        let end = bundle.vo[0].t + (cfg.metrics.calibration_window * 1e9) as i64;
        let window: Vec<_> = bundle.vo.iter().take_while(|m| m.t <= end).map(|m| m.metrics).collect();
        params.norm_bounds.calibrate_pose_chi2(&window)?;
    }
    let mut scorer = AdaptiveCovariance::new(params)?;
    let adaptive = cfg.mode == FilterMode::AdaptiveHybridQf;

    let mut fs = initial_state(bundle, cfg)?;
    let mut trajectory = Vec::with_capacity(bundle.imu.len());
    let mut biases = Vec::with_capacity(bundle.imu.len());
    let (s, b) = snapshot(&fs);
    trajectory.push(s);
    biases.push(b);
    observer(&fs);

    let mut log = RunLog::default();
    let mut timing = RunTiming {
        step_latencies: Vec::with_capacity(bundle.imu.len()),
        ..Default::default()
    };
    let mut window: VecDeque<ImuSample> = VecDeque::with_capacity(cfg.stationarity.window + 1);
    let mut vo_idx = bundle.vo.partition_point(|m| m.t <= fs.t);
    let mut diverged = false;

    let mut step = |fs: &FilterState, u: &ImuSample, log: &mut RunLog, window: &mut VecDeque<ImuSample>, vo_idx: &mut usize| -> Result<FilterState> {
        let mut fs = *fs;
        window.push_back(*u);
        if window.len() > cfg.stationarity.window {
            window.pop_front();
        }
        let st = &cfg.stationarity;
        if window.len() == st.window
            && (st.zupt || st.gravity)
            && detect_stationary(window.make_contiguous(), &thresholds)?
            && (window.iter().map(|s| s.omega).sum::<Vec3>() / window.len() as f64).norm() < st.max_rate
        {
            if st.zupt {
                let out = zupt_update(&fs, &noise.r_zupt)?;
                match out.status {
                    UpdateStatus::Applied => log.zupt_updates += 1,
                    UpdateStatus::Rejected { .. } => log.rejections += 1,
                    UpdateStatus::NotTriggered => {}
                }
                fs = out.state;
            }
            if st.gravity {
                let a_mean = window.iter().map(|s| s.accel).sum::<Vec3>() / window.len() as f64;
                let out = gravity_update(&fs, &a_mean, &cfg.imu, &noise.r_acc, st.gravity_eps)?;
                match out.status {
                    UpdateStatus::Applied => log.gravity_updates += 1,
                    UpdateStatus::Rejected { .. } => log.rejections += 1,
                    UpdateStatus::NotTriggered => {}
                }
                fs = out.state;
            }
        }
        while *vo_idx < bundle.vo.len() && bundle.vo[*vo_idx].t <= u.t {
            let m = &bundle.vo[*vo_idx];
            *vo_idx += 1;
            let metrics = if bundle.frames.is_empty() {
                m.metrics
            } else {
                frame_metrics(m, &bundle.frames, cfg)?
            };
            let scored = scorer.step(&metrics);
            let (sigma_p, sigma_v) = if adaptive {
                (scored.sigma_p, scored.sigma_v)
            } else {
                (cfg.meas.sigma_p, cfg.meas.sigma_v)
            };
            let r = visual_covariance(sigma_p, sigma_v);
            let out = visual_update(&fs, &VisualObservation { p: m.p_vis, v: m.v_vis }, &r)?;
            if let UpdateStatus::Rejected { .. } = out.status {
                log.rejections += 1;
            }
            log.visual.push(VisualLog {
                t: m.t,
                theta_p: scored.theta_p,
                theta_v: scored.theta_v,
                sigma_p,
                sigma_v,
                innovation: out.innovation.into(),
                applied: out.applied(),
                metrics,
            });
            fs = out.state;
        }
        if !fs.nominal.is_finite() || fs.p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!("non-finite state at t = {} ns", u.t)));
        }
        Ok(fs)
    };

    for u in &bundle.imu[1..] {
        let t_prop = Instant::now();
        let propagated = propagate(&fs, u, &cfg.imu);
        let dt = t_prop.elapsed().as_secs_f64();
        timing.step_latencies.push(dt);
        timing.propagation += dt;
        let result = propagated.and_then(|p| {
            let t_upd = Instant::now();
            let r = step(&p, u, &mut log, &mut window, &mut vo_idx);
            timing.updates += t_upd.elapsed().as_secs_f64();
            r
        });
        match result {
            Ok(next) => fs = next,
            Err(e) if is_divergence(&e) => {
                warn!("{}: {} diverged at t = {} ns: {e}", bundle.name, cfg.mode, u.t);
                log.divergence = Some(e.to_string());
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
        let (s, b) = snapshot(&fs);
        trajectory.push(s);
        biases.push(b);
        observer(&fs);
    }
    timing.total = started.elapsed().as_secs_f64();
    debug!(
        "{}: {} finished, {} visual updates, {} rejections",
        bundle.name,
        cfg.mode,
        log.visual.len(),
        log.rejections
    );
    Ok(RunOutput {
        mode: cfg.mode,
        trajectory,
        biases,
        log,
        timing,
        diverged,
    })
}

/// Associates a run with the bundle's ground truth and scores it.
pub fn evaluate_run(bundle: &SequenceBundle, out: &RunOutput, cfg: &RunConfig) -> Result<ErrorReport> {
    let pairs = associate(&out.trajectory, &bundle.ground_truth, cfg.eval.max_dt)?;
    evaluate(&pairs, cfg.eval.align)
}

/// Per-step normalised estimation error squared against ground truth
/// (including biases when the bundle carries them). Steps whose covariance
/// is singular score `+∞`.
pub fn nees_series(bundle: &SequenceBundle, cfg: &RunConfig) -> Result<Vec<f64>> {
    let gt = &bundle.ground_truth;
    let mut out = Vec::with_capacity(bundle.imu.len());
    let mut j = 0usize;
    run_pipeline_with(bundle, cfg, |fs| {
        while j + 1 < gt.len() && gt[j].t < fs.t {
            j += 1;
        }
        if gt[j].t != fs.t {
            return;
        }
        let bias = bundle.gt_biases.get(j);
        let truth = NominalState {
            q: gt[j].q,
            v: gt[j].v.unwrap_or_else(Vec3::zeros),
            p: gt[j].p,
            b_a: bias.map_or(fs.nominal.b_a, |b| b.b_a),
            b_g: bias.map_or(fs.nominal.b_g, |b| b.b_g),
        };
        let e = fs.nominal.boxminus(&truth);
        match fs.p.cholesky() {
            Some(c) => out.push(e.dot(&c.solve(&e))),
            None => out.push(f64::INFINITY),
        }
    })?;
    Ok(out)
}

/// `100·(base − new)/base`; zero when both are equal.
pub fn relative_improvement(base: f64, new: f64) -> f64 {
    if base == new {
        0.0
    } else {
        100.0 * (base - new) / base
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModeResult {
    pub mode: FilterMode,
    pub report: Option<ErrorReport>,
    pub diverged: bool,
    pub processing_time: f64,
    pub mean_step_latency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub results: Vec<ModeResult>,
    /// `(new, base)` mode pairs, one column each.
    pub columns: Vec<(FilterMode, FilterMode)>,
    /// Rows `rotation`, `position`, `time`; percent improvement of `new` over `base`.
    pub improvements: Vec<(String, Vec<f64>)>,
    /// Mean propagation step is ordered ESKF < hybrid < full sigma-point.
    pub timing_order_ok: bool,
}

pub const COMPARISON_COLUMNS: [(FilterMode, FilterMode); 4] = [
    (FilterMode::HybridQf, FilterMode::Eskf),
    (FilterMode::HybridQf, FilterMode::FullSukf),
    (FilterMode::AdaptiveHybridQf, FilterMode::HybridQf),
    (FilterMode::AdaptiveHybridQf, FilterMode::Eskf),
];

impl Comparison {
    pub fn result(&self, mode: FilterMode) -> Option<&ModeResult> {
        self.results.iter().find(|r| r.mode == mode)
    }

    pub fn improvement(&self, row: &str, column: (FilterMode, FilterMode)) -> Option<f64> {
        let c = self.columns.iter().position(|&x| x == column)?;
        self.improvements.iter().find(|(r, _)| r == row).map(|(_, v)| v[c])
    }

    /// Relative-improvement table, one column per mode pair.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric");
        for (new, base) in &self.columns {
            write!(out, ",{new}_vs_{base}").unwrap();
        }
        out.push('\n');
        for (row, values) in &self.improvements {
            out.push_str(row);
            for v in values {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn reports_csv(&self) -> String {
        let mut out = String::from(
            "mode,diverged,ate_rmse,rmse_x,rmse_y,rmse_z,roll_rmse,pitch_rmse,yaw_rmse,quat_rmse,processing_time,mean_step_latency\n",
        );
        for r in &self.results {
            write!(out, "{},{}", r.mode, r.diverged).unwrap();
            match &r.report {
                Some(e) => write!(
                    out,
                    ",{},{},{},{},{},{},{},{}",
                    e.ate_rmse, e.rmse_x, e.rmse_y, e.rmse_z, e.roll_rmse, e.pitch_rmse, e.yaw_rmse, e.quat_rmse
                )
                .unwrap(),
                None => out.push_str(",,,,,,,,"),
            }
            writeln!(out, ",{},{}", r.processing_time, r.mean_step_latency).unwrap();
        }
        out
    }
}

fn mode_result(bundle: &SequenceBundle, cfg: &RunConfig) -> Result<ModeResult> {
    let out = run_pipeline(bundle, cfg)?;
    let report = match evaluate_run(bundle, &out, cfg) {
        Ok(r) => Some(r),
        Err(e) if out.diverged => {
            warn!("{}: no report for diverged run: {e}", cfg.mode);
            None
        }
        Err(e) => return Err(e),
    };
    Ok(ModeResult {
        mode: cfg.mode,
        report,
        diverged: out.diverged,
        processing_time: out.timing.total,
        mean_step_latency: out.timing.mean_step(),
    })
}

/// Builds the comparison from per-mode results.
pub fn summarize(results: Vec<ModeResult>) -> Comparison {
    let get = |m: FilterMode| results.iter().find(|r| r.mode == m);
    let metric = |r: &ModeResult, row: &str| match row {
        "rotation" => r.report.map_or(f64::NAN, |e| e.quat_rmse),
        "position" => r.report.map_or(f64::NAN, |e| e.ate_rmse),
        _ => r.processing_time,
    };
    let columns: Vec<_> = COMPARISON_COLUMNS
        .into_iter()
        .filter(|(a, b)| get(*a).is_some() && get(*b).is_some())
        .collect();
    let improvements = ["rotation", "position", "time"]
        .into_iter()
        .map(|row| {
            let values = columns
                .iter()
                .map(|&(new, base)| {
                    relative_improvement(metric(get(base).unwrap(), row), metric(get(new).unwrap(), row))
                })
                .collect();
            (row.to_string(), values)
        })
        .collect();
    let lat = |m| get(m).map(|r: &ModeResult| r.mean_step_latency);
    let timing_order_ok = match (lat(FilterMode::Eskf), lat(FilterMode::HybridQf), lat(FilterMode::FullSukf)) {
        (Some(e), Some(h), Some(f)) => e < h && h < f,
        _ => false,
    };
    Comparison {
        results,
        columns,
        improvements,
        timing_order_ok,
    }
}

/// Runs every mode on the same bundle, one after the other so that timings
/// do not compete for cores.
pub fn compare_modes(bundle: &SequenceBundle, base: &RunConfig) -> Result<Comparison> {
    let results = FilterMode::ALL
        .iter()
        .map(|&m| mode_result(bundle, &base.with_mode(m)))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(results))
}

/// Adaptive parameters a sweep may vary.
pub const SWEEP_KEYS: [&str; 7] = ["w_thr", "d_thr", "s", "alpha", "beta", "gamma", "zeta"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SweepStrategy {
    /// One variable at a time around the base configuration.
    Ovat,
    /// Cartesian product of all ranges.
    Full,
}

impl std::str::FromStr for SweepStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ovat" => Ok(Self::Ovat),
            "full" | "grid" => Ok(Self::Full),
            other => Err(Error::Config(format!("unknown sweep strategy '{other}'"))),
        }
    }
}

/// Parameter name and the values to try.
pub type SweepGrid = Vec<(String, Vec<f64>)>;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub settings: Vec<(String, f64)>,
    /// Infinite when the run diverged.
    pub ate_rmse: f64,
    pub quat_rmse: f64,
    pub diverged: bool,
}

fn sweep_key(name: &str) -> Result<String> {
    let short = name.strip_prefix("adaptive.").unwrap_or(name);
    if SWEEP_KEYS.contains(&short) {
        Ok(format!("adaptive.{short}"))
    } else {
        Err(Error::Config(format!(
            "cannot sweep '{name}'; expected one of {}",
            SWEEP_KEYS.join(", ")
        )))
    }
}

/// Every setting a sweep will evaluate, in a fixed order.
pub fn sweep_points(grid: &SweepGrid, strategy: SweepStrategy) -> Result<Vec<Vec<(String, f64)>>> {
    if grid.is_empty() || grid.iter().any(|(_, v)| v.is_empty()) {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let keyed: Vec<(String, &Vec<f64>)> = grid
        .iter()
        .map(|(k, v)| sweep_key(k).map(|key| (key, v)))
        .collect::<Result<_>>()?;
    Ok(match strategy {
        SweepStrategy::Ovat => keyed
            .iter()
            .flat_map(|(k, vals)| vals.iter().map(move |v| vec![(k.clone(), *v)]))
            .collect(),
        SweepStrategy::Full => keyed.iter().fold(vec![Vec::new()], |acc, (k, vals)| {
            acc.iter()
                .flat_map(|prefix| {
                    vals.iter().map(move |v| {
                        let mut p = prefix.clone();
                        p.push((k.clone(), *v));
                        p
                    })
                })
                .collect()
        }),
    })
}

/// Evaluates every grid point in parallel and ranks them by ATE; ties keep
/// grid order.
pub fn sweep(
    bundle: &SequenceBundle,
    base: &RunConfig,
    grid: &SweepGrid,
    strategy: SweepStrategy,
) -> Result<Vec<SweepRow>> {
    let points = sweep_points(grid, strategy)?;
    let mut rows = points
        .into_par_iter()
        .map(|settings| {
            let mut cfg = *base;
            for (k, v) in &settings {
                cfg.set(k, &v.to_string())?;
            }
            let r = mode_result(bundle, &cfg)?;
            Ok(SweepRow {
                settings,
                ate_rmse: r.report.map_or(f64::INFINITY, |e| e.ate_rmse),
                quat_rmse: r.report.map_or(f64::INFINITY, |e| e.quat_rmse),
                diverged: r.diverged,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.ate_rmse.total_cmp(&b.ate_rmse));
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("rank,settings,ate_rmse,quat_rmse,diverged\n");
    for (i, r) in rows.iter().enumerate() {
        let settings: Vec<String> = r.settings.iter().map(|(k, v)| format!("{k}={v}")).collect();
        writeln!(
            out,
            "{},{},{},{},{}",
            i + 1,
            settings.join(";"),
            r.ate_rmse,
            r.quat_rmse,
            r.diverged
        )
        .unwrap();
    }
    out
}

/// Repeats full runs of each mode until at least `min_steps` propagation
/// steps were timed. Runs are sequential.
pub fn bench(
    bundle: &SequenceBundle,
    base: &RunConfig,
    modes: &[FilterMode],
    min_steps: usize,
) -> Result<Vec<ModeTiming>> {
    if bundle.imu.len() < 2 {
        return Err(Error::InsufficientData("benchmark needs at least two IMU samples".into()));
    }
    modes
        .iter()
        .map(|&mode| {
            let cfg = base.with_mode(mode);
            let mut timing = ModeTiming {
                mode: mode.as_str().to_string(),
                ..Default::default()
            };
            while timing.step_latencies.len() < min_steps.max(1) {
                let out = run_pipeline(bundle, &cfg)?;
                timing.processing_time += out.timing.total;
                timing.step_latencies.extend(out.timing.step_latencies);
            }
            Ok(timing)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::sim::{simulate, MetricSignature, ScenarioSpec, TrajectoryKind};

    fn quiet(trajectory: TrajectoryKind, duration: f64) -> ScenarioSpec {
        ScenarioSpec {
            trajectory,
            duration,
            noise_free: true,
            ..Default::default()
        }
    }

    #[test]
    fn static_noise_free_eskf_stays_put() {
        let bundle = simulate(&quiet(TrajectoryKind::Static, 10.0)).unwrap();
        let cfg = RunConfig::default().with_mode(FilterMode::Eskf);
        let out = run_pipeline(&bundle, &cfg).unwrap();
        let start = bundle.ground_truth[0].p;
        let end = out.trajectory.last().unwrap().p;
        assert!((end - start).norm() < 1e-6, "moved {}", (end - start).norm());
        assert!(out.log.zupt_updates > 0 && out.log.gravity_updates > 0);
        assert!(!out.diverged);
    }

    #[test]
    fn circle_with_exact_vo_tracks_truth() {
        let bundle = simulate(&quiet(TrajectoryKind::circle(), 20.0)).unwrap();
        let cfg = RunConfig::default().with_mode(FilterMode::Eskf);
        let out = run_pipeline(&bundle, &cfg).unwrap();
        let report = evaluate_run(&bundle, &out, &cfg).unwrap();
        assert!(report.ate_rmse < 1e-3, "ATE {}", report.ate_rmse);
    }

    #[test]
    fn benign_metrics_keep_adaptive_at_the_floor_and_equal_to_hybrid() {
        let spec = ScenarioSpec {
            benign_metrics: MetricSignature::benign(),
            ..ScenarioSpec::new(TrajectoryKind::figure8(), 10.0, 3)
        };
        let mut bundle = simulate(&spec).unwrap();
        for m in &mut bundle.vo {
            m.metrics = QualityMetrics::benign();
        }
        let cfg = RunConfig::default();
        let hybrid = run_pipeline(&bundle, &cfg.with_mode(FilterMode::HybridQf)).unwrap();
        let adaptive = run_pipeline(&bundle, &cfg.with_mode(FilterMode::AdaptiveHybridQf)).unwrap();
        assert!(adaptive.log.visual.iter().all(|v| v.sigma_p == cfg.adaptive.min_cov_p));
        assert_eq!(hybrid.trajectory, adaptive.trajectory);
    }

    #[test]
    fn divergence_stops_the_run_with_partial_output() {
        let mut bundle = simulate(&quiet(TrajectoryKind::circle(), 2.0)).unwrap();
        bundle.imu[100].omega = Vec3::new(f64::NAN, 0.0, 0.0);
        let out = run_pipeline(&bundle, &RunConfig::default()).unwrap();
        assert!(out.diverged);
        assert!(out.trajectory.len() < bundle.imu.len());
        assert!(out.log.divergence.is_some());
    }

    #[test]
    fn comparing_a_mode_with_itself_gives_zero() {
        let r = ModeResult {
            mode: FilterMode::Eskf,
            report: Some(ErrorReport {
                ate_rmse: 0.3,
                quat_rmse: 1.2,
                ..Default::default()
            }),
            diverged: false,
            processing_time: 4.0,
            mean_step_latency: 1e-5,
        };
        let results = FilterMode::ALL.iter().map(|&mode| ModeResult { mode, ..r.clone() }).collect();
        let cmp = summarize(results);
        assert_eq!(cmp.columns.len(), 4);
        for (_, row) in &cmp.improvements {
            assert!(row.iter().all(|v| *v == 0.0));
        }
        let csv = cmp.to_csv();
        assert!(csv.starts_with("metric,hybrid_qf_vs_eskf,"));
        assert!(csv.contains("\nrotation,") && csv.contains("\nposition,") && csv.contains("\ntime,"));
    }

    #[test]
    fn sweep_grid_shapes() {
        let grid: SweepGrid = vec![("w_thr".into(), vec![0.1, 0.2, 0.3]), ("s".into(), vec![-1.0, 1.0])];
        assert_eq!(sweep_points(&grid, SweepStrategy::Ovat).unwrap().len(), 5);
        assert_eq!(sweep_points(&grid, SweepStrategy::Full).unwrap().len(), 6);
        assert!(matches!(sweep_points(&Vec::new(), SweepStrategy::Ovat), Err(Error::Config(_))));
        assert!(sweep_points(&vec![("sigma_g".into(), vec![1.0])], SweepStrategy::Ovat).is_err());
    }
}
