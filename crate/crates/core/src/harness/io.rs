//! CSV and PGM readers/writers for EuRoC ASL sequences, VO replays and
//! estimated trajectories.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use log::warn;

use super::{ImuBias, SequenceBundle, VisualMeasurement};
use crate::adaptive::{self, GrayscaleFrame, QualityMetrics};
use crate::dynamics::{ImuSample, Vec3};
use crate::error::{Error, Result};
use crate::evaluation::TrajectorySample;
use crate::manifold::UnitQuaternion;

/// Quaternions whose norm deviates more than this from one are rejected.
pub const QUAT_NORM_TOL: f64 = 1e-3;

struct Row {
    line: u64,
    t: i64,
    values: Vec<f64>,
}

fn parse_error(source_name: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source_name.to_string(),
        line,
        message: message.into(),
    }
}

/// Reads comma-separated rows of `timestamp, values...`, parsing at most
/// `parsed` value columns. Lines starting with `#` are comments; a first row
/// whose timestamp is not an integer is taken as a header.
fn read_rows<R: Read>(
    reader: R,
    source_name: &str,
    min_cols: usize,
    max_cols: usize,
    parsed: usize,
) -> Result<Vec<Row>> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    let mut record = csv::StringRecord::new();
    let mut first = true;
    loop {
        let more = csv.read_record(&mut record).map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(source_name, line, e.to_string())
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        if (record.len() == 1 && record[0].is_empty()) || record[0].starts_with('#') {
            continue;
        }
        let header_like = first && record[0].parse::<i64>().is_err();
        first = false;
        if header_like {
            continue;
        }
        if record.len() < min_cols || record.len() > max_cols {
            let expected = if min_cols == max_cols {
                format!("{min_cols}")
            } else if max_cols == usize::MAX {
                format!("at least {min_cols}")
            } else {
                format!("{min_cols} to {max_cols}")
            };
            return Err(parse_error(
                source_name,
                line,
                format!("expected {expected} columns, found {}", record.len()),
            ));
        }
        let t = record[0].parse::<i64>().map_err(|_| {
            parse_error(
                source_name,
                line,
                format!("timestamp '{}' is not an integer nanosecond count", &record[0]),
            )
        })?;
        let values = record
            .iter()
            .skip(1)
            .take(parsed)
            .enumerate()
            .map(|(i, field)| match field.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_error(
                    source_name,
                    line,
                    format!("column {}: '{field}' is not a finite number", i + 2),
                )),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(Row { line, t, values });
    }
    if rows.is_empty() {
        return Err(Error::InsufficientData(format!("{source_name}: no data rows")));
    }
    for w in rows.windows(2) {
        if w[1].t <= w[0].t {
            let what = if w[1].t == w[0].t { "duplicate" } else { "non-monotone" };
            return Err(Error::Data(format!(
                "{source_name}:{}: {what} timestamp {} after {}",
                w[1].line, w[1].t, w[0].t
            )));
        }
    }
    Ok(rows)
}

fn vec3(v: &[f64]) -> Vec3 {
    Vec3::new(v[0], v[1], v[2])
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn source_name(path: &Path) -> String {
    path.display().to_string()
}

/// Parses an EuRoC `imu0/data.csv` stream: timestamp, ω xyz, a xyz.
pub fn parse_euroc_imu<R: Read>(reader: R, source_name: &str) -> Result<Vec<ImuSample>> {
    Ok(read_rows(reader, source_name, 7, 7, 6)?
        .into_iter()
        .map(|r| ImuSample {
            t: r.t,
            omega: vec3(&r.values[0..3]),
            accel: vec3(&r.values[3..6]),
        })
        .collect())
}

pub fn load_euroc_imu(path: impl AsRef<Path>) -> Result<Vec<ImuSample>> {
    let path = path.as_ref();
    parse_euroc_imu(open(path)?, &source_name(path))
}

/// Parses ground truth: timestamp, p xyz, q wxyz, then optionally v xyz,
/// gyro bias xyz and accelerometer bias xyz. Further columns are ignored.
/// Bias entries are returned only if every row carries them.
pub fn parse_ground_truth_with_biases<R: Read>(
    reader: R,
    source_name: &str,
) -> Result<(Vec<TrajectorySample>, Vec<ImuBias>)> {
    let rows = read_rows(reader, source_name, 8, usize::MAX, 16)?;
    let mut samples = Vec::with_capacity(rows.len());
    let mut biases = Vec::with_capacity(rows.len());
    for r in &rows {
        let v = &r.values;
        let norm = (v[3] * v[3] + v[4] * v[4] + v[5] * v[5] + v[6] * v[6]).sqrt();
        if (norm - 1.0).abs() > QUAT_NORM_TOL {
            return Err(Error::Data(format!(
                "{source_name}:{}: quaternion norm {norm} is not within {QUAT_NORM_TOL} of 1",
                r.line
            )));
        }
        let q = UnitQuaternion::new(v[3], v[4], v[5], v[6])
            .map_err(|e| parse_error(source_name, r.line, e.to_string()))?;
        samples.push(TrajectorySample {
            t: r.t,
            p: vec3(&v[0..3]),
            q,
            v: (v.len() >= 10).then(|| vec3(&v[7..10])),
        });
        if v.len() >= 16 {
            biases.push(ImuBias {
                b_g: vec3(&v[10..13]),
                b_a: vec3(&v[13..16]),
            });
        }
    }
    if biases.len() != samples.len() {
        biases.clear();
    }
    Ok((samples, biases))
}

pub fn parse_ground_truth<R: Read>(reader: R, source_name: &str) -> Result<Vec<TrajectorySample>> {
    parse_ground_truth_with_biases(reader, source_name).map(|(s, _)| s)
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<Vec<TrajectorySample>> {
    let path = path.as_ref();
    parse_ground_truth(open(path)?, &source_name(path))
}

pub fn load_ground_truth_with_biases(
    path: impl AsRef<Path>,
) -> Result<(Vec<TrajectorySample>, Vec<ImuBias>)> {
    let path = path.as_ref();
    parse_ground_truth_with_biases(open(path)?, &source_name(path))
}

/// Column order of the VO replay format.
pub const VO_COLUMNS: [&str; 14] = [
    "t_ns",
    "p_x",
    "p_y",
    "p_z",
    "v_x",
    "v_y",
    "v_z",
    "intensity",
    "entropy",
    "blur",
    "pose_chi2",
    "culled_kf",
    "projection_error",
    "num_inliers",
];

/// Parses a VO replay. Trailing metric columns may be omitted; missing ones
/// take benign defaults.
pub fn parse_vo_replay<R: Read>(reader: R, source_name: &str) -> Result<Vec<VisualMeasurement>> {
    let rows = read_rows(reader, source_name, 7, 14, 13)?;
    let mut warned = false;
    let out = rows
        .iter()
        .map(|r| {
            let v = &r.values;
            let benign = QualityMetrics::benign();
            if v.len() < 13 && !warned {
                warned = true;
                warn!(
                    "{source_name}:{}: {} of 7 quality-metric columns missing, using benign defaults",
                    r.line,
                    13 - v.len()
                );
            }
            let get = |i: usize, default: f64| v.get(i).copied().unwrap_or(default);
            let metrics = QualityMetrics {
                intensity: get(6, benign.intensity),
                entropy: get(7, benign.entropy),
                blur: get(8, benign.blur),
                pose_chi2: get(9, benign.pose_chi2),
                culled_keyframes: get(10, benign.culled_keyframes),
                projection_error: get(11, benign.projection_error),
                num_inliers: get(12, benign.num_inliers),
            };
            VisualMeasurement {
                t: r.t,
                p_vis: vec3(&v[0..3]),
                v_vis: vec3(&v[3..6]),
                metrics,
            }
        })
        .collect();
    Ok(out)
}

pub fn load_vo_replay(path: impl AsRef<Path>) -> Result<Vec<VisualMeasurement>> {
    let path = path.as_ref();
    parse_vo_replay(open(path)?, &source_name(path))
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn write_euroc_imu<W: Write>(samples: &[ImuSample], mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],w_RS_S_z [rad s^-1],a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],a_RS_S_z [m s^-2]"
    )?;
    for s in samples {
        writeln!(
            w,
            "{},{}",
            s.t,
            join(&[s.omega.x, s.omega.y, s.omega.z, s.accel.x, s.accel.y, s.accel.z])
        )?;
    }
    Ok(())
}

/// Writes `t_ns, p xyz, q wxyz`, then `v xyz` when every sample has a
/// velocity or biases follow (zero when unknown), then gyro and
/// accelerometer bias columns when `biases` is non-empty.
pub fn write_trajectory<W: Write>(
    samples: &[TrajectorySample],
    biases: &[ImuBias],
    mut w: W,
) -> std::io::Result<()> {
    let with_bias = !biases.is_empty() && biases.len() == samples.len();
    let with_v = with_bias || samples.iter().all(|s| s.v.is_some());
    write!(w, "#t_ns,p_x,p_y,p_z,q_w,q_x,q_y,q_z")?;
    if with_v {
        write!(w, ",v_x,v_y,v_z")?;
    }
    if with_bias {
        write!(w, ",bg_x,bg_y,bg_z,ba_x,ba_y,ba_z")?;
    }
    writeln!(w)?;
    for (i, s) in samples.iter().enumerate() {
        let [qw, qx, qy, qz] = s.q.to_array();
        write!(w, "{},{}", s.t, join(&[s.p.x, s.p.y, s.p.z, qw, qx, qy, qz]))?;
        if with_v {
            let v = s.v.unwrap_or_else(Vec3::zeros);
            write!(w, ",{}", join(&[v.x, v.y, v.z]))?;
        }
        if with_bias {
            let b = &biases[i];
            write!(
                w,
                ",{}",
                join(&[b.b_g.x, b.b_g.y, b.b_g.z, b.b_a.x, b.b_a.y, b.b_a.z])
            )?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_vo_replay<W: Write>(vo: &[VisualMeasurement], mut w: W) -> std::io::Result<()> {
    writeln!(w, "#{}", VO_COLUMNS.join(","))?;
    for m in vo {
        let q = &m.metrics;
        writeln!(
            w,
            "{},{}",
            m.t,
            join(&[
                m.p_vis.x,
                m.p_vis.y,
                m.p_vis.z,
                m.v_vis.x,
                m.v_vis.y,
                m.v_vis.z,
                q.intensity,
                q.entropy,
                q.blur,
                q.pose_chi2,
                q.culled_keyframes,
                q.projection_error,
                q.num_inliers,
            ])
        )?;
    }
    Ok(())
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn save_trajectory(path: impl AsRef<Path>, samples: &[TrajectorySample]) -> Result<()> {
    write_file(path.as_ref(), |w| write_trajectory(samples, &[], w))
}

/// Reads `<timestamp_ns>.pgm` frames from a directory, sorted by time.
pub fn load_pgm_frames(dir: impl AsRef<Path>) -> Result<Vec<GrayscaleFrame>> {
    let dir = dir.as_ref();
    let mut frames = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("pgm") {
            continue;
        }
        let t = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<i64>().ok())
            .ok_or_else(|| {
                Error::Data(format!(
                    "{}: frame file names must be nanosecond timestamps",
                    path.display()
                ))
            })?;
        let frame = adaptive::read_pgm(open(&path)?, t)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        frames.push(frame);
    }
    frames.sort_by_key(|f| f.t);
    Ok(frames)
}

pub fn save_pgm(path: impl AsRef<Path>, frame: &GrayscaleFrame) -> Result<()> {
    write_file(path.as_ref(), |w| adaptive::write_pgm(frame, w))
}

/// File locations of one sequence.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SequencePaths {
    pub imu: PathBuf,
    pub ground_truth: Option<PathBuf>,
    pub vo: Option<PathBuf>,
    pub frames: Option<PathBuf>,
}

impl SequencePaths {
    /// Standard layout under a sequence directory, accepting both
    /// `<dir>/mav0/...` and `<dir>/...`. Missing optional files are skipped.
    pub fn from_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        let root = if dir.join("mav0").is_dir() {
            dir.join("mav0")
        } else {
            dir.to_path_buf()
        };
        let existing = |p: PathBuf| p.exists().then_some(p);
        SequencePaths {
            imu: root.join("imu0").join("data.csv"),
            ground_truth: existing(root.join("state_groundtruth_estimate0").join("data.csv")),
            vo: existing(root.join("vo").join("data.csv")),
            frames: existing(root.join("cam0").join("pgm")),
        }
    }
}

pub fn load_sequence(name: &str, paths: &SequencePaths) -> Result<SequenceBundle> {
    let imu = load_euroc_imu(&paths.imu)?;
    let (ground_truth, gt_biases) = match &paths.ground_truth {
        Some(p) => load_ground_truth_with_biases(p)?,
        None => (Vec::new(), Vec::new()),
    };
    let vo = match &paths.vo {
        Some(p) => load_vo_replay(p)?,
        None => Vec::new(),
    };
    let frames = match &paths.frames {
        Some(p) => load_pgm_frames(p)?,
        None => Vec::new(),
    };
    let bundle = SequenceBundle {
        name: name.to_string(),
        imu,
        ground_truth,
        gt_biases,
        vo,
        frames,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Writes a bundle in the layout understood by [`SequencePaths::from_dir`].
pub fn save_sequence(dir: impl AsRef<Path>, bundle: &SequenceBundle) -> Result<SequencePaths> {
    let root = dir.as_ref().join("mav0");
    let paths = SequencePaths {
        imu: root.join("imu0").join("data.csv"),
        ground_truth: Some(root.join("state_groundtruth_estimate0").join("data.csv")),
        vo: Some(root.join("vo").join("data.csv")),
        frames: (!bundle.frames.is_empty()).then(|| root.join("cam0").join("pgm")),
    };
    write_file(&paths.imu, |w| write_euroc_imu(&bundle.imu, w))?;
    if let Some(p) = &paths.ground_truth {
        write_file(p, |w| write_trajectory(&bundle.ground_truth, &bundle.gt_biases, w))?;
    }
    if let Some(p) = &paths.vo {
        write_file(p, |w| write_vo_replay(&bundle.vo, w))?;
    }
    if let Some(dir) = &paths.frames {
        for f in &bundle.frames {
            save_pgm(dir.join(format!("{}.pgm", f.t)), f)?;
        }
    }
    Ok(paths)
}
