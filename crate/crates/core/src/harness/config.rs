//! Run configuration with flat dotted keys.
//!
//! Values resolve in order: built-in defaults, a TOML file, `QFVIO_*`
//! environment variables, then explicit `key=value` overrides. Every key is
//! addressed by its dotted path, e.g. `imu.sigma_g` or
//! `adaptive.norm_bounds.pose_chi2.max`; in TOML these are plain nested
//! tables or dotted keys.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::adaptive::{AdaptiveParams, LaplacianKernel};
use crate::dynamics::{ErrorCovariance, ImuNoiseModel, BIAS_ACC, BIAS_GYRO, POS, THETA, VEL};
use crate::error::{Error, Result};
use crate::evaluation::DEFAULT_MAX_DT;
use crate::filter::{
    FilterMode, FilterOptions, MeasurementNoise, StationarityThresholds, SutParams,
    MIN_STATIONARY_WINDOW,
};

pub const ENV_PREFIX: &str = "QFVIO_";

/// Standard deviations of the measurement models.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSigmas {
    /// Zero-velocity pseudo-measurement, m/s.
    pub sigma_zupt: f64,
    /// Per-sample accelerometer noise for the gravity update, m/s².
    pub sigma_acc: f64,
    /// Fixed visual position noise, m. Also the adaptive lower bound by default.
    pub sigma_p: f64,
    /// Fixed visual velocity noise, m/s.
    pub sigma_v: f64,
}

impl Default for MeasurementSigmas {
    fn default() -> Self {
        Self {
            sigma_zupt: 0.01,
            sigma_acc: 0.05,
            sigma_p: 0.02,
            sigma_v: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationarityConfig {
    /// Number of IMU samples in the detection window.
    pub window: usize,
    pub sigma_acc: f64,
    pub sigma_gyro: f64,
    /// Largest mean angular rate over the window still treated as rest, rad/s.
    pub max_rate: f64,
    pub zupt: bool,
    pub gravity: bool,
    /// Gravity update fires when `| ‖a − b_a‖ − ‖g‖ |` is below this, m/s².
    pub gravity_eps: f64,
}

impl Default for StationarityConfig {
    fn default() -> Self {
        let thr = StationarityThresholds::default();
        Self {
            window: 50,
            sigma_acc: thr.sigma_acc,
            sigma_gyro: thr.sigma_gyro,
            max_rate: 0.05,
            zupt: true,
            gravity: true,
            gravity_eps: 0.05,
        }
    }
}

impl StationarityConfig {
    pub fn thresholds(&self) -> StationarityThresholds {
        StationarityThresholds {
            sigma_acc: self.sigma_acc,
            sigma_gyro: self.sigma_gyro,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSource {
    /// Pose and velocity of the ground-truth sample nearest the first IMU sample.
    GroundTruth,
    /// Roll and pitch from the mean specific force of the first window, zero
    /// yaw; position and velocity from the first visual measurement if any.
    Gravity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub source: InitSource,
    pub sigma_theta: f64,
    pub sigma_v: f64,
    pub sigma_p: f64,
    pub sigma_ba: f64,
    pub sigma_bg: f64,
    /// Draw the initial error from `N(0, P₀)` using the run seed.
    pub perturb: bool,
    /// Start from the ground-truth biases when the bundle has them.
    pub use_gt_biases: bool,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            source: InitSource::GroundTruth,
            sigma_theta: 0.02,
            sigma_v: 0.05,
            sigma_p: 0.02,
            sigma_ba: 0.02,
            sigma_bg: 0.002,
            perturb: false,
            use_gt_biases: false,
        }
    }
}

impl InitConfig {
    pub fn covariance(&self) -> ErrorCovariance {
        let mut p = ErrorCovariance::zeros();
        for (offset, s) in [
            (THETA, self.sigma_theta),
            (VEL, self.sigma_v),
            (POS, self.sigma_p),
            (BIAS_ACC, self.sigma_ba),
            (BIAS_GYRO, self.sigma_bg),
        ] {
            for i in 0..3 {
                p[(offset + i, offset + i)] = s * s;
            }
        }
        p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub laplacian: LaplacianKernel,
    /// Replace the χ² normalisation maximum with 10× the median over the
    /// first `calibration_window` seconds of visual measurements.
    pub calibrate_chi2: bool,
    pub calibration_window: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            laplacian: LaplacianKernel::FourNeighbor,
            calibrate_chi2: false,
            calibration_window: 5.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Association tolerance, s.
    pub max_dt: f64,
    /// Rigidly align the estimate before computing errors.
    pub align: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            max_dt: DEFAULT_MAX_DT,
            align: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: FilterMode,
    pub seed: u64,
    pub imu: ImuNoiseModel,
    pub meas: MeasurementSigmas,
    pub adaptive: AdaptiveParams,
    pub sut: SutParams,
    pub filter: FilterOptions,
    pub stationarity: StationarityConfig,
    pub init: InitConfig,
    pub metrics: MetricsConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: FilterMode::HybridQf,
            seed: 0,
            imu: ImuNoiseModel::default(),
            meas: MeasurementSigmas::default(),
            adaptive: AdaptiveParams::default(),
            sut: SutParams::default(),
            filter: FilterOptions::default(),
            stationarity: StationarityConfig::default(),
            init: InitConfig::default(),
            metrics: MetricsConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn flatten(prefix: &str, table: &Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

/// Converts `new` to the type of `like` where TOML allows it losslessly
/// (integers written for float fields).
fn coerce(new: Value, like: &Value) -> Value {
    match (new, like) {
        (Value::Integer(i), Value::Float(_)) => Value::Float(i as f64),
        (Value::Array(items), Value::Array(like_items)) => match like_items.first() {
            Some(first) => Value::Array(items.into_iter().map(|v| coerce(v, first)).collect()),
            None => Value::Array(items),
        },
        (v, _) => v,
    }
}

fn parse_scalar(raw: &str) -> Option<Value> {
    let doc: Table = format!("v = {raw}").parse().ok()?;
    doc.get("v").cloned()
}

fn key_from_env(name: &str) -> Option<String> {
    let rest = name.strip_prefix(ENV_PREFIX)?;
    Some(rest.to_ascii_lowercase().replace("__", "."))
}

impl RunConfig {
    fn table(&self) -> Table {
        Table::try_from(self).expect("configuration serialises to a TOML table")
    }

    /// Every key with its current value, sorted by key.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        flatten("", &self.table(), &mut out);
        let mut entries: Vec<_> = out
            .into_iter()
            .map(|(k, v)| {
                let shown = match v {
                    Value::String(s) => s,
                    other => other.to_string(),
                };
                (k, shown)
            })
            .collect();
        entries.sort();
        entries
    }

    pub fn keys(&self) -> Vec<String> {
        self.entries().into_iter().map(|(k, _)| k).collect()
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries()
            .into_iter()
            .find_map(|(k, v)| (k == key).then_some(v))
    }

    fn set_value(&mut self, key: &str, value: Value) -> Result<()> {
        let mut table = self.table();
        let mut parts = key.split('.').peekable();
        let mut node = &mut table;
        let unknown = || Error::Config(format!("unknown configuration key '{key}'"));
        loop {
            let part = parts.next().ok_or_else(unknown)?;
            if parts.peek().is_none() {
                let slot = node.get_mut(part).ok_or_else(unknown)?;
                if slot.is_table() {
                    return Err(unknown());
                }
                *slot = coerce(value, slot);
                break;
            }
            node = node
                .get_mut(part)
                .and_then(Value::as_table_mut)
                .ok_or_else(unknown)?;
        }
        *self = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| {
                Error::Config(format!("invalid value for '{key}': {}", e.message()))
            })?;
        Ok(())
    }

    /// Sets one key from its textual form. Strings need no quotes.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let raw = raw.trim();
        let value = match key {
            "mode" => Value::String(FilterMode::from_str(raw)?.as_str().to_string()),
            "metrics.laplacian" => {
                let k = LaplacianKernel::from_str(raw)?;
                Value::try_from(k).map_err(|e| Error::Config(e.to_string()))?
            }
            _ => match parse_scalar(raw) {
                Some(v) => v,
                None => Value::String(raw.to_string()),
            },
        };
        self.set_value(key, value)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| {
            Error::Config(format!("override '{assignment}' is not of the form key=value"))
        })?;
        self.set(k.trim(), v)
    }

    pub fn merge_toml(&mut self, text: &str) -> Result<()> {
        let table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("invalid TOML: {}", e.message())))?;
        let mut values = Vec::new();
        flatten("", &table, &mut values);
        for (k, v) in values {
            match (&*k, v) {
                ("mode" | "metrics.laplacian", Value::String(s)) => self.set(&k, &s)?,
                (_, v) => self.set_value(&k, v)?,
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.merge_toml(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Applies every `QFVIO_<SECTION>__<KEY>` variable; `__` separates path
    /// components and names are case-insensitive.
    pub fn apply_env<I>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut pairs: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| key_from_env(&k).map(|key| (key, v)))
            .collect();
        pairs.sort();
        for (key, v) in pairs {
            self.set(&key, &v)?;
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serialises to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.imu.validate()?;
        self.adaptive.validate()?;
        let n = if self.mode == FilterMode::FullSukf { 15 } else { 3 };
        self.sut.validate(n)?;
        self.measurement_noise().validate()?;
        if !(self.filter.max_condition > 1.0) {
            return Err(Error::Config(format!(
                "filter.max_condition must exceed 1, got {}",
                self.filter.max_condition
            )));
        }
        if self.stationarity.window < MIN_STATIONARY_WINDOW {
            return Err(Error::Config(format!(
                "stationarity.window must be at least {MIN_STATIONARY_WINDOW}, got {}",
                self.stationarity.window
            )));
        }
        let st = &self.stationarity;
        if !(st.sigma_acc > 0.0 && st.sigma_gyro > 0.0 && st.gravity_eps > 0.0 && st.max_rate > 0.0) {
            return Err(Error::Config("stationarity thresholds must be positive".into()));
        }
        let i = &self.init;
        if [i.sigma_theta, i.sigma_v, i.sigma_p, i.sigma_ba, i.sigma_bg]
            .iter()
            .any(|s| !(*s > 0.0 && s.is_finite()))
        {
            return Err(Error::Config("initial standard deviations must be positive".into()));
        }
        if !(self.eval.max_dt > 0.0) {
            return Err(Error::Config("eval.max_dt must be positive".into()));
        }
        if self.metrics.calibrate_chi2 && !(self.metrics.calibration_window > 0.0) {
            return Err(Error::Config("metrics.calibration_window must be positive".into()));
        }
        Ok(())
    }

    pub fn measurement_noise(&self) -> MeasurementNoise {
        MeasurementNoise::from_sigmas(
            self.meas.sigma_zupt,
            self.meas.sigma_acc,
            self.meas.sigma_p,
            self.meas.sigma_v,
        )
    }

    /// Same configuration with another filter mode.
    pub fn with_mode(&self, mode: FilterMode) -> Self {
        Self { mode, ..*self }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn fixed_visual_noise_matches_adaptive_floor() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.meas.sigma_p, cfg.adaptive.min_cov_p);
        assert_eq!(cfg.meas.sigma_v, cfg.adaptive.min_cov_v);
    }

    #[test]
    fn dotted_keys_set_nested_values() {
        let mut cfg = RunConfig::default();
        cfg.set("imu.sigma_g", "1e-3").unwrap();
        cfg.set("adaptive.norm_bounds.pose_chi2.max", "20").unwrap();
        cfg.set("mode", "adaptive").unwrap();
        cfg.set("imu.tau_g", "inf").unwrap();
        cfg.set("imu.g_world", "[0, 0, -9.8]").unwrap();
        cfg.set("metrics.laplacian", "8").unwrap();
        assert_eq!(cfg.imu.sigma_g, 1e-3);
        assert_eq!(cfg.adaptive.norm_bounds.pose_chi2.max, 20.0);
        assert_eq!(cfg.mode, FilterMode::AdaptiveHybridQf);
        assert!(cfg.imu.tau_g.is_infinite());
        assert_eq!(cfg.imu.g_world, [0.0, 0.0, -9.8]);
        assert_eq!(cfg.metrics.laplacian, LaplacianKernel::EightNeighbor);
        assert_eq!(cfg.get("adaptive.norm_bounds.pose_chi2.max").as_deref(), Some("20.0"));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.set("imu.sigma_q", "1"), Err(Error::Config(_))));
        assert!(matches!(cfg.set("imu", "1"), Err(Error::Config(_))));
        assert!(matches!(cfg.set("imu.sigma_g", "abc"), Err(Error::Config(_))));
        assert!(matches!(cfg.set("mode", "kalman"), Err(Error::Config(_))));
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn toml_file_with_sections_and_dotted_keys() {
        let text = r#"
mode = "eskf"
seed = 7
imu.sigma_a = 0.01

[adaptive]
w_thr = 0.3
norm_bounds.blur = { min = 0.0, max = 900.0 }
"#;
        let cfg = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.mode, FilterMode::Eskf);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.imu.sigma_a, 0.01);
        assert_eq!(cfg.adaptive.w_thr, 0.3);
        assert_eq!(cfg.adaptive.norm_bounds.blur.max, 900.0);
        assert!(RunConfig::from_toml_str("[adaptive]\nwthr = 1").is_err());
        assert!(RunConfig::from_toml_str("adaptive.w_thr = 0.99\nadaptive.d_thr = 0.5").is_err());
    }

    #[test]
    fn environment_overrides() {
        let mut cfg = RunConfig::default();
        cfg.apply_env(vec![
            ("QFVIO_ADAPTIVE__S".to_string(), "-2".to_string()),
            ("QFVIO_MODE".to_string(), "full_sukf".to_string()),
            ("PATH".to_string(), "/bin".to_string()),
        ])
        .unwrap();
        assert_eq!(cfg.adaptive.s, -2.0);
        assert_eq!(cfg.mode, FilterMode::FullSukf);
        assert!(cfg
            .apply_env(vec![("QFVIO_NOPE".to_string(), "1".to_string())])
            .is_err());
    }

    #[test]
    fn every_entry_can_be_set_to_itself() {
        let cfg = RunConfig::default();
        let mut copy = cfg;
        for (k, v) in cfg.entries() {
            copy.set(&k, &v).unwrap();
        }
        assert_eq!(copy, cfg);
    }

    #[test]
    fn initial_covariance_diagonal() {
        let p = InitConfig::default().covariance();
        assert_eq!(p[(THETA, THETA)], 0.02 * 0.02);
        assert_eq!(p[(BIAS_GYRO + 2, BIAS_GYRO + 2)], 0.002 * 0.002);
        assert_eq!(p[(0, 1)], 0.0);
    }
}
