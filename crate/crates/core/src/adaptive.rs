//! Image-quality metrics, confidence scores and the adaptive visual
//! measurement covariance.

use std::io::{Read, Write};

use nalgebra::Matrix6;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::visual_covariance;

/// Front-end and image statistics attached to one visual measurement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityMetrics {
    /// Mean pixel intensity in `[0, 255]`.
    pub intensity: f64,
    /// Shannon entropy of the intensity histogram, bits in `[0, 8]`.
    pub entropy: f64,
    /// Variance of the Laplacian.
    pub blur: f64,
    pub pose_chi2: f64,
    pub culled_keyframes: f64,
    /// Mean reprojection error in pixels. Logged but not used for scoring.
    pub projection_error: f64,
    pub num_inliers: f64,
}

impl QualityMetrics {
    /// Metrics that indicate a perfectly reliable frame under the default
    /// normalisation bounds: maximal entropy, everything else zero.
    pub fn benign() -> Self {
        Self {
            intensity: 0.0,
            entropy: 8.0,
            blur: 0.0,
            pose_chi2: 0.0,
            culled_keyframes: 0.0,
            projection_error: 0.0,
            num_inliers: 0.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        let all = [
            self.intensity,
            self.entropy,
            self.blur,
            self.pose_chi2,
            self.culled_keyframes,
            self.projection_error,
            self.num_inliers,
        ];
        all.iter().all(|v| v.is_finite() && *v >= 0.0)
            && self.intensity <= 255.0
            && self.entropy <= 8.0
    }
}

impl Default for QualityMetrics {
    fn default() -> Self {
        Self::benign()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormalizedMetrics {
    pub intensity_n: f64,
    pub entropy_n: f64,
    pub blur_n: f64,
    pub pose_chi2_n: f64,
    pub culled_kf_n: f64,
    pub delta_intensity_n: f64,
    pub delta_blur_n: f64,
    pub delta_pose_chi2_n: f64,
    pub delta_culled_kf_n: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

impl Bounds {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn normalize(&self, v: f64) -> f64 {
        ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(Error::Config(format!(
                "normalisation bounds for {name} need min < max, got ({}, {})",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormBounds {
    pub intensity: Bounds,
    pub entropy: Bounds,
    pub blur: Bounds,
    pub pose_chi2: Bounds,
    pub culled_keyframes: Bounds,
}

impl Default for NormBounds {
    fn default() -> Self {
        Self {
            intensity: Bounds::new(0.0, 255.0),
            entropy: Bounds::new(0.0, 8.0),
            blur: Bounds::new(0.0, 1500.0),
            pose_chi2: Bounds::new(0.0, 10.0),
            culled_keyframes: Bounds::new(0.0, 10.0),
        }
    }
}

impl NormBounds {
    pub fn validate(&self) -> Result<()> {
        self.intensity.validate("intensity")?;
        self.entropy.validate("entropy")?;
        self.blur.validate("blur")?;
        self.pose_chi2.validate("pose_chi2")?;
        self.culled_keyframes.validate("culled_keyframes")
    }

    /// Replaces the χ² upper bound with ten times the median over a
    /// calibration window.
    pub fn calibrate_pose_chi2(&mut self, window: &[QualityMetrics]) -> Result<()> {
        let mut values: Vec<f64> = window.iter().map(|m| m.pose_chi2).collect();
        if values.is_empty() {
            return Err(Error::InsufficientData(
                "empty χ² calibration window".into(),
            ));
        }
        values.sort_by(f64::total_cmp);
        let mid = values.len() / 2;
        let median = if values.len() % 2 == 0 {
            0.5 * (values[mid - 1] + values[mid])
        } else {
            values[mid]
        };
        let max = 10.0 * median;
        if max > self.pose_chi2.min {
            self.pose_chi2.max = max;
            Ok(())
        } else {
            Err(Error::Data(format!(
                "χ² calibration median {median} gives an empty normalisation range"
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveParams {
    pub w_thr: f64,
    pub d_thr: f64,
    pub s: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub zeta: f64,
    pub min_cov_p: f64,
    pub max_cov_p: f64,
    pub min_cov_v: f64,
    pub max_cov_v: f64,
    pub norm_bounds: NormBounds,
}

impl Default for AdaptiveParams {
    fn default() -> Self {
        Self {
            w_thr: 0.2,
            d_thr: 0.95,
            s: 1.0,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            zeta: 1.0,
            min_cov_p: 0.02,
            max_cov_p: 1.0,
            min_cov_v: 0.05,
            max_cov_v: 2.0,
            norm_bounds: NormBounds::default(),
        }
    }
}

impl AdaptiveParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(self.w_thr) && unit(self.d_thr) && self.w_thr <= self.d_thr) {
            return Err(Error::Config(format!(
                "thresholds need 0 ≤ w_thr ≤ d_thr ≤ 1, got w_thr = {}, d_thr = {}",
                self.w_thr, self.d_thr
            )));
        }
        if !self.s.is_finite() {
            return Err(Error::Config("CASEF shape s must be finite".into()));
        }
        for (name, w) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("zeta", self.zeta),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("dynamic weight {name} must be ≥ 0, got {w}")));
            }
        }
        for (name, lo, hi) in [
            ("position", self.min_cov_p, self.max_cov_p),
            ("velocity", self.min_cov_v, self.max_cov_v),
        ] {
            if !(lo > 0.0 && lo < hi && hi.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} covariance bounds need 0 < min < max, got ({lo}, {hi})"
                )));
            }
        }
        self.norm_bounds.validate()
    }
}

/// Row-major 8-bit grayscale image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayscaleFrame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    pub t: i64,
}

impl GrayscaleFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>, t: i64) -> Result<Self> {
        if width.checked_mul(height) != Some(pixels.len()) {
            return Err(Error::InvalidInput(format!(
                "{width}x{height} frame needs {} pixels, got {}",
                width.saturating_mul(height),
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            t,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn at(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }
}

const PGM_MAX_DIM: usize = 1 << 14;

fn pgm_token(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::InvalidInput("PGM header: expected a number".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::InvalidInput("PGM header: number out of range".into()))
}

/// Parses a binary (P5) 8-bit PGM image.
pub fn parse_pgm(bytes: &[u8], t: i64) -> Result<GrayscaleFrame> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::InvalidInput("not a binary PGM (missing P5 magic)".into()));
    }
    let mut pos = 2;
    let width = pgm_token(bytes, &mut pos)?;
    let height = pgm_token(bytes, &mut pos)?;
    let maxval = pgm_token(bytes, &mut pos)?;
    if width == 0 || height == 0 || width > PGM_MAX_DIM || height > PGM_MAX_DIM {
        return Err(Error::InvalidInput(format!(
            "unsupported PGM dimensions {width}x{height}"
        )));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::InvalidInput(format!(
            "only 8-bit PGM is supported, maxval = {maxval}"
        )));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::InvalidInput("PGM header: missing separator before raster".into()));
    }
    pos += 1;
    let n = width * height;
    let raster = &bytes[pos..];
    if raster.len() < n {
        return Err(Error::InvalidInput(format!(
            "PGM raster truncated: need {n} bytes, got {}",
            raster.len()
        )));
    }
    let mut pixels = raster[..n].to_vec();
    if maxval != 255 {
        for p in &mut pixels {
            if usize::from(*p) > maxval {
                return Err(Error::InvalidInput(format!(
                    "PGM pixel {p} exceeds maxval {maxval}"
                )));
            }
            *p = ((usize::from(*p) * 255 + maxval / 2) / maxval) as u8;
        }
    }
    GrayscaleFrame::new(width, height, pixels, t)
}

pub fn read_pgm<R: Read>(mut reader: R, t: i64) -> Result<GrayscaleFrame> {
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| Error::InvalidInput(format!("reading PGM: {e}")))?;
    parse_pgm(&bytes, t)
}

pub fn write_pgm<W: Write>(frame: &GrayscaleFrame, mut w: W) -> std::io::Result<()> {
    write!(w, "P5\n{} {}\n255\n", frame.width, frame.height)?;
    w.write_all(&frame.pixels)
}

/// Discrete Laplacian stencil used for the blur metric.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianKernel {
    #[default]
    FourNeighbor,
    EightNeighbor,
}

impl std::str::FromStr for LaplacianKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "4" | "four" | "four_neighbor" => Ok(Self::FourNeighbor),
            "8" | "eight" | "eight_neighbor" => Ok(Self::EightNeighbor),
            other => Err(Error::Config(format!("unknown Laplacian kernel '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StaticMetrics {
    pub intensity: f64,
    pub entropy: f64,
    pub blur: f64,
}

pub fn mean_intensity(frame: &GrayscaleFrame) -> f64 {
    let sum: u64 = frame.pixels.iter().map(|&p| u64::from(p)).sum();
    sum as f64 / frame.pixels.len() as f64
}

pub fn entropy(frame: &GrayscaleFrame) -> f64 {
    let mut hist = [0u64; 256];
    for &p in &frame.pixels {
        hist[usize::from(p)] += 1;
    }
    let n = frame.pixels.len() as f64;
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0)
}

/// Population variance of the Laplacian response over interior pixels.
pub fn laplacian_variance(frame: &GrayscaleFrame, kernel: LaplacianKernel) -> Result<f64> {
    let (w, h) = (frame.width, frame.height);
    if w < 3 || h < 3 {
        return Err(Error::InvalidInput(format!(
            "blur needs a frame of at least 3x3, got {w}x{h}"
        )));
    }
    let px = |r: usize, c: usize| f64::from(frame.at(r, c));
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let cross = px(r - 1, c) + px(r + 1, c) + px(r, c - 1) + px(r, c + 1);
            let lap = match kernel {
                LaplacianKernel::FourNeighbor => cross - 4.0 * px(r, c),
                LaplacianKernel::EightNeighbor => {
                    let diag = px(r - 1, c - 1)
                        + px(r - 1, c + 1)
                        + px(r + 1, c - 1)
                        + px(r + 1, c + 1);
                    cross + diag - 8.0 * px(r, c)
                }
            };
            sum += lap;
            sum_sq += lap * lap;
        }
    }
    let n = ((w - 2) * (h - 2)) as f64;
    let mean = sum / n;
    Ok((sum_sq / n - mean * mean).max(0.0))
}

pub fn compute_static_metrics(
    frame: &GrayscaleFrame,
    kernel: LaplacianKernel,
) -> Result<StaticMetrics> {
    if frame.pixels.is_empty() {
        return Err(Error::InvalidInput("empty frame".into()));
    }
    Ok(StaticMetrics {
        intensity: mean_intensity(frame),
        entropy: entropy(frame),
        blur: laplacian_variance(frame, kernel)?,
    })
}

/// Min-max normalisation of each metric plus absolute frame-to-frame
/// differences of the normalised values. Without a previous frame all
/// differences are zero.
pub fn normalize_metrics(
    raw: &QualityMetrics,
    prev: Option<&QualityMetrics>,
    bounds: &NormBounds,
) -> NormalizedMetrics {
    let cur = [
        bounds.intensity.normalize(raw.intensity),
        bounds.blur.normalize(raw.blur),
        bounds.pose_chi2.normalize(raw.pose_chi2),
        bounds.culled_keyframes.normalize(raw.culled_keyframes),
    ];
    let delta = match prev {
        Some(p) => {
            let before = [
                bounds.intensity.normalize(p.intensity),
                bounds.blur.normalize(p.blur),
                bounds.pose_chi2.normalize(p.pose_chi2),
                bounds.culled_keyframes.normalize(p.culled_keyframes),
            ];
            std::array::from_fn(|i| (cur[i] - before[i]).abs().clamp(0.0, 1.0))
        }
        None => [0.0; 4],
    };
    NormalizedMetrics {
        intensity_n: cur[0],
        entropy_n: bounds.entropy.normalize(raw.entropy),
        blur_n: cur[1],
        pose_chi2_n: cur[2],
        culled_kf_n: cur[3],
        delta_intensity_n: delta[0],
        delta_blur_n: delta[1],
        delta_pose_chi2_n: delta[2],
        delta_culled_kf_n: delta[3],
    }
}

/// Clipped adaptive saturation exponential: `(e^{s x} − 1) / (e^s − 1)` on
/// `x` clipped to `[0, 1]`, and the identity as `s → 0`.
pub fn casef(x: f64, s: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    if s.abs() < 1e-6 {
        return x;
    }
    ((s * x).exp_m1() / s.exp_m1()).clamp(0.0, 1.0)
}

/// Static (position) and dynamic (velocity) confidence scores, 0 meaning
/// fully reliable.
pub fn confidence_scores(nm: &NormalizedMetrics, params: &AdaptiveParams) -> (f64, f64) {
    let u_p = (1.0 - nm.entropy_n)
        .max(nm.blur_n)
        .max(nm.pose_chi2_n)
        .max(nm.culled_kf_n);
    let u_v = (params.alpha * nm.delta_intensity_n)
        .max(params.beta * nm.delta_blur_n)
        .max(params.gamma * nm.delta_pose_chi2_n)
        .max(params.zeta * nm.delta_culled_kf_n);
    (casef(u_p, params.s), casef(u_v, params.s))
}

/// Maps a confidence score to a standard deviation between the bounds.
pub fn adaptive_sigma(theta: f64, w_thr: f64, d_thr: f64, min: f64, max: f64) -> f64 {
    if theta > d_thr {
        max
    } else if theta > w_thr {
        min + theta * (max - min)
    } else {
        min
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveNoise {
    pub sigma_p: f64,
    pub sigma_v: f64,
}

impl AdaptiveNoise {
    pub fn covariance(&self) -> Matrix6<f64> {
        visual_covariance(self.sigma_p, self.sigma_v)
    }
}

pub fn adaptive_sigmas(theta_p: f64, theta_v: f64, params: &AdaptiveParams) -> AdaptiveNoise {
    AdaptiveNoise {
        sigma_p: adaptive_sigma(
            theta_p,
            params.w_thr,
            params.d_thr,
            params.min_cov_p,
            params.max_cov_p,
        ),
        sigma_v: adaptive_sigma(
            theta_v,
            params.w_thr,
            params.d_thr,
            params.min_cov_v,
            params.max_cov_v,
        ),
    }
}

/// `diag(σ_p² I₃, σ_v² I₃)` from the two confidence scores.
pub fn adaptive_covariance(theta_p: f64, theta_v: f64, params: &AdaptiveParams) -> Matrix6<f64> {
    adaptive_sigmas(theta_p, theta_v, params).covariance()
}

/// Stateful wrapper that remembers the previous frame's metrics.
#[derive(Clone, Debug)]
pub struct AdaptiveCovariance {
    params: AdaptiveParams,
    prev: Option<QualityMetrics>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AdaptiveStep {
    pub normalized: NormalizedMetrics,
    pub theta_p: f64,
    pub theta_v: f64,
    pub sigma_p: f64,
    pub sigma_v: f64,
}

impl AdaptiveCovariance {
    pub fn new(params: AdaptiveParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, prev: None })
    }

    pub fn params(&self) -> &AdaptiveParams {
        &self.params
    }

    pub fn step(&mut self, metrics: &QualityMetrics) -> AdaptiveStep {
        let normalized = normalize_metrics(metrics, self.prev.as_ref(), &self.params.norm_bounds);
        self.prev = Some(*metrics);
        let (theta_p, theta_v) = confidence_scores(&normalized, &self.params);
        let noise = adaptive_sigmas(theta_p, theta_v, &self.params);
        AdaptiveStep {
            normalized,
            theta_p,
            theta_v,
            sigma_p: noise.sigma_p,
            sigma_v: noise.sigma_v,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn frame(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> GrayscaleFrame {
        let pixels = (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).map(|(r, c)| f(r, c)).collect();
        GrayscaleFrame::new(w, h, pixels, 0).unwrap()
    }

    #[test]
    fn constant_frame_metrics() {
        let f = frame(16, 12, |_, _| 128);
        let m = compute_static_metrics(&f, LaplacianKernel::FourNeighbor).unwrap();
        assert_eq!(m.intensity, 128.0);
        assert_eq!(m.entropy, 0.0);
        assert_eq!(m.blur, 0.0);
    }

    #[test]
    fn uniform_histogram_has_eight_bits() {
        let f = frame(256, 4, |r, c| ((r * 256 + c) % 256) as u8);
        assert_relative_eq!(entropy(&f), 8.0, epsilon = 1e-12);
    }

    #[test]
    fn checkerboard_blur_matches_direct_loop() {
        let f = frame(9, 7, |r, c| if (r + c) % 2 == 0 { 0 } else { 255 });
        let m = compute_static_metrics(&f, LaplacianKernel::FourNeighbor).unwrap();
        assert_relative_eq!(mean_intensity(&frame(8, 8, |r, c| if (r + c) % 2 == 0 { 0 } else { 255 })), 127.5);

        // two-pass reference: collect every response then take the variance
        let mut lap = Vec::new();
        for r in 1..6 {
            for c in 1..8 {
                let v = |rr: usize, cc: usize| f.at(rr, cc) as f64;
                lap.push(v(r - 1, c) + v(r + 1, c) + v(r, c - 1) + v(r, c + 1) - 4.0 * v(r, c));
            }
        }
        let mean = lap.iter().sum::<f64>() / lap.len() as f64;
        let var = lap.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / lap.len() as f64;
        assert_relative_eq!(m.blur, var, max_relative = 1e-12);
        assert!(m.blur > 0.0);
    }

    #[test]
    fn tiny_frame_blur_is_rejected() {
        let f = frame(2, 5, |_, _| 1);
        assert!(matches!(
            compute_static_metrics(&f, LaplacianKernel::FourNeighbor),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn pgm_round_trip_and_rejections() {
        let f = frame(5, 3, |r, c| (r * 40 + c * 7) as u8);
        let mut buf = Vec::new();
        write_pgm(&f, &mut buf).unwrap();
        assert_eq!(parse_pgm(&buf, 0).unwrap(), f);

        let with_comment = b"P5\n# made by hand\n2 1\n255\n\x01\x02";
        assert_eq!(parse_pgm(with_comment, 3).unwrap().pixels(), &[1, 2]);
        assert!(parse_pgm(b"P2\n2 1\n255\n12", 0).is_err());
        assert!(parse_pgm(b"P5\n2 2\n255\n\x01", 0).is_err());
        assert!(parse_pgm(b"P5\n2 2\n65535\n\x01\x02\x03\x04", 0).is_err());
        assert!(parse_pgm(b"P5\n0 2\n255\n", 0).is_err());
        assert!(parse_pgm(b"P5", 0).is_err());
    }

    #[test]
    fn normalisation_examples() {
        let b = NormBounds::default();
        assert_eq!(b.entropy.normalize(0.0), 0.0);
        assert_eq!(b.entropy.normalize(8.0), 1.0);
        assert_eq!(b.entropy.normalize(4.0), 0.5);
        assert_eq!(b.blur.normalize(-5.0), 0.0);
        assert_eq!(b.blur.normalize(1e9), 1.0);

        let m = QualityMetrics {
            intensity: 90.0,
            blur: 300.0,
            pose_chi2: 2.0,
            ..QualityMetrics::benign()
        };
        let first = normalize_metrics(&m, None, &b);
        assert_eq!(first.delta_intensity_n, 0.0);
        assert_eq!(first.delta_pose_chi2_n, 0.0);
        let same = normalize_metrics(&m, Some(&m), &b);
        assert_eq!(same.delta_blur_n, 0.0);
        assert_eq!(same.delta_culled_kf_n, 0.0);

        let darker = QualityMetrics { intensity: 39.0, ..m };
        let d = normalize_metrics(&darker, Some(&m), &b);
        assert_relative_eq!(d.delta_intensity_n, 51.0 / 255.0, epsilon = 1e-15);
    }

    #[test]
    fn chi2_calibration_uses_ten_times_median() {
        let mut b = NormBounds::default();
        let window: Vec<_> = [1.0, 3.0, 2.0, 100.0]
            .iter()
            .map(|&c| QualityMetrics {
                pose_chi2: c,
                ..Default::default()
            })
            .collect();
        b.calibrate_pose_chi2(&window).unwrap();
        assert_eq!(b.pose_chi2.max, 25.0);
        assert!(b.calibrate_pose_chi2(&[]).is_err());
    }

    #[test]
    fn casef_examples() {
        for s in [-3.0, -1e-7, 0.0, 0.5, 1.0, 4.0] {
            assert_eq!(casef(0.0, s), 0.0);
            assert_relative_eq!(casef(1.0, s), 1.0, epsilon = 1e-15);
        }
        let expected = (0.5f64.exp() - 1.0) / (1f64.exp() - 1.0);
        assert_relative_eq!(casef(0.5, 1.0), expected, epsilon = 1e-12);
        assert!((casef(0.5, 1.0) - 0.377_540_668_798_145_4).abs() < 1e-9);
        assert_eq!(casef(-0.3, 2.0), 0.0);
        assert_eq!(casef(1.7, 2.0), 1.0);
        for s in [1e-7, -1e-7] {
            for x in [0.1, 0.5, 0.9] {
                assert!((casef(x, s) - x).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn confidence_examples() {
        let p = AdaptiveParams::default();
        let perfect = NormalizedMetrics {
            entropy_n: 1.0,
            ..Default::default()
        };
        assert_eq!(confidence_scores(&perfect, &p), (0.0, 0.0));

        let bad_chi2 = NormalizedMetrics {
            entropy_n: 1.0,
            pose_chi2_n: 1.0,
            ..Default::default()
        };
        assert_relative_eq!(confidence_scores(&bad_chi2, &p).0, 1.0, epsilon = 1e-15);

        let halves = NormalizedMetrics {
            entropy_n: 1.0,
            delta_intensity_n: 0.5,
            delta_blur_n: 0.5,
            delta_pose_chi2_n: 0.5,
            delta_culled_kf_n: 0.5,
            ..Default::default()
        };
        let linear = AdaptiveParams { s: 1e-9, ..p };
        assert_relative_eq!(confidence_scores(&halves, &linear).1, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn algorithm_examples() {
        let p = AdaptiveParams::default();
        let n = adaptive_sigmas(0.0, 0.0, &p);
        assert_eq!(n.sigma_p, p.min_cov_p);
        assert_eq!(n.sigma_v, p.min_cov_v);
        let n = adaptive_sigmas(1.0, 1.0, &p);
        assert_eq!(n.sigma_p, p.max_cov_p);
        assert_eq!(n.sigma_v, p.max_cov_v);
        assert_relative_eq!(adaptive_sigmas(0.5, 0.0, &p).sigma_p, 0.51, epsilon = 1e-15);
        let r = adaptive_covariance(0.5, 0.0, &p);
        assert_relative_eq!(r[(0, 0)], 0.51 * 0.51, epsilon = 1e-15);
        assert_relative_eq!(r[(5, 5)], p.min_cov_v * p.min_cov_v, epsilon = 1e-15);
        assert_eq!(r[(0, 1)], 0.0);
    }

    #[test]
    fn params_validation() {
        assert!(AdaptiveParams::default().validate().is_ok());
        assert!(AdaptiveParams { w_thr: 0.9, d_thr: 0.5, ..Default::default() }
            .validate()
            .is_err());
        assert!(AdaptiveParams { min_cov_p: 2.0, ..Default::default() }
            .validate()
            .is_err());
        assert!(AdaptiveParams { gamma: -1.0, ..Default::default() }
            .validate()
            .is_err());
    }

    #[test]
    fn benign_stream_stays_at_minimum() {
        let mut ac = AdaptiveCovariance::new(AdaptiveParams::default()).unwrap();
        for _ in 0..5 {
            let step = ac.step(&QualityMetrics::benign());
            assert_eq!(step.sigma_p, 0.02);
            assert_eq!(step.sigma_v, 0.05);
        }
    }

    proptest! {
        #[test]
        fn casef_is_monotone_onto_unit(x in -0.5f64..1.5, dx in 0.0f64..0.5, s in -20.0f64..20.0) {
            let a = casef(x, s);
            let b = casef(x + dx, s);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(b >= a - 1e-15);
        }

        #[test]
        fn sigma_stays_in_bounds(theta in 0.0f64..=1.0, w in 0.0f64..0.5, d in 0.5f64..=1.0) {
            let s = adaptive_sigma(theta, w, d, 0.02, 1.0);
            prop_assert!((0.02..=1.0).contains(&s));
            let s2 = adaptive_sigma((theta + 0.01).min(1.0), w, d, 0.02, 1.0);
            prop_assert!(s2 >= s);
        }

        #[test]
        fn confidence_is_monotone_in_badness(chi in 0.0f64..1.0, extra in 0.0f64..0.5, blur in 0.0f64..1.0) {
            let p = AdaptiveParams::default();
            let a = NormalizedMetrics { entropy_n: 1.0, pose_chi2_n: chi, blur_n: blur, ..Default::default() };
            let b = NormalizedMetrics { pose_chi2_n: (chi + extra).min(1.0), ..a };
            let swapped = NormalizedMetrics { pose_chi2_n: blur, blur_n: chi, ..a };
            prop_assert!(confidence_scores(&b, &p).0 >= confidence_scores(&a, &p).0);
            prop_assert_eq!(confidence_scores(&swapped, &p).0, confidence_scores(&a, &p).0);
        }
    }
}
