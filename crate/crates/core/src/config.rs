//! Flat key=value configuration for the pipeline executable.
//!
//! The format is one `key = value` pair per line; `#` starts a comment.
//! Unknown keys are rejected so typos fail fast at startup.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::alert::{SeverityThresholds, SinkConfig};
use crate::blobs::Connectivity;
use crate::detect::{DetectParams, StructuringElement};
use crate::imaging::HsvRange;
use crate::monitor::{Credentials, MonitorConfig};
use crate::pipeline::EngineConfig;
use crate::trajectory::HoughParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown key `{key}` (line {line})")]
    UnknownKey { key: String, line: usize },
    #[error("key `{key}`: {message}")]
    BadValue { key: String, message: String },
    #[error("missing required key `{key}`")]
    MissingKey { key: String },
    #[error("{0}")]
    Invalid(String),
}

/// Where the event stream (newline-delimited JSON) goes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventLog {
    Stdout,
    File(PathBuf),
    /// Suppress the event stream entirely.
    Null,
}

/// Fully resolved pipeline configuration.
#[derive(Debug)]
pub struct PipelineConfig {
    /// Frame directory or frame-stream file.
    pub input: PathBuf,
    pub detect: DetectParams,
    pub connectivity: Connectivity,
    pub hough: HoughParams,
    pub thresholds: SeverityThresholds,
    pub sinks: Vec<SinkConfig>,
    pub monitor: Option<MonitorConfig>,
    pub snapshot_dir: Option<PathBuf>,
    pub event_log: EventLog,
    /// Use wall-clock event timestamps instead of frame timestamps.
    pub live: bool,
}

/// Raw parsed pairs with duplicate/unknown-key detection. Shared by the
/// pipeline config and the scenario-file format.
pub(crate) struct KeyValues {
    values: BTreeMap<String, (String, usize)>,
    consumed: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

impl KeyValues {
    pub(crate) fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: line_no,
                    message: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    line: line_no,
                    message: "empty key".into(),
                });
            }
            if let Some((_, first_line)) = values.get(&key) {
                return Err(ConfigError::Syntax {
                    line: line_no,
                    message: format!("duplicate key `{key}` (first on line {first_line})"),
                });
            }
            values.insert(key, (value, line_no));
        }
        Ok(KeyValues {
            values,
            consumed: Default::default(),
        })
    }

    pub(crate) fn get(&self, key: &str) -> Option<&str> {
        self.consumed.borrow_mut().insert(key.to_string());
        self.values.get(key).map(|(v, _)| v.as_str())
    }

    pub(crate) fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| ConfigError::BadValue {
                key: key.to_string(),
                message: format!("`{raw}`: {e}"),
            }),
        }
    }

    pub(crate) fn bool_key(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("yes") | Some("1") => Ok(true),
            Some("false") | Some("no") | Some("0") => Ok(false),
            Some(other) => Err(ConfigError::BadValue {
                key: key.to_string(),
                message: format!("`{other}` is not a boolean"),
            }),
        }
    }

    /// Error out on keys that no consumer asked about.
    pub(crate) fn reject_unknown(&self) -> Result<(), ConfigError> {
        let consumed = self.consumed.borrow();
        for (key, (_, line)) in &self.values {
            if !consumed.contains(key) {
                return Err(ConfigError::UnknownKey {
                    key: key.clone(),
                    line: *line,
                });
            }
        }
        Ok(())
    }
}

fn positive<T: PartialOrd + Default + Copy + std::fmt::Display>(
    key: &str,
    v: T,
) -> Result<T, ConfigError> {
    if v > T::default() {
        Ok(v)
    } else {
        Err(ConfigError::BadValue {
            key: key.into(),
            message: format!("{v} must be positive"),
        })
    }
}

/// Parse only the detection-engine keys (thresholds, kernels, color gate,
/// line fit). This is the dialect embedders hand to an in-process engine;
/// I/O keys such as `input` or sinks are rejected as unknown.
pub fn parse_engine_config(text: &str) -> Result<EngineConfig, ConfigError> {
    let kv = KeyValues::parse(text)?;
    let cfg = engine_params(&kv)?;
    kv.reject_unknown()?;
    Ok(cfg)
}

fn engine_params(kv: &KeyValues) -> Result<EngineConfig, ConfigError> {
    let defaults = DetectParams::default();
    let detect = DetectParams {
        diff_threshold: kv.parsed::<u8>("diff_threshold")?.unwrap_or(defaults.diff_threshold),
        erode_kernel: StructuringElement::rect(
            positive("erode_w", kv.parsed::<u32>("erode_w")?.unwrap_or(2))?,
            positive("erode_h", kv.parsed::<u32>("erode_h")?.unwrap_or(1))?,
        ),
        dilate_kernel: StructuringElement::rect(
            positive("dilate_w", kv.parsed::<u32>("dilate_w")?.unwrap_or(4))?,
            positive("dilate_h", kv.parsed::<u32>("dilate_h")?.unwrap_or(2))?,
        ),
        hsv_range: HsvRange {
            h_lo: kv.parsed("hue_lo")?.unwrap_or(defaults.hsv_range.h_lo),
            h_hi: kv.parsed("hue_hi")?.unwrap_or(defaults.hsv_range.h_hi),
            s_lo: kv.parsed("sat_lo")?.unwrap_or(defaults.hsv_range.s_lo),
            s_hi: kv.parsed("sat_hi")?.unwrap_or(defaults.hsv_range.s_hi),
            v_lo: kv.parsed("val_lo")?.unwrap_or(defaults.hsv_range.v_lo),
            v_hi: kv.parsed("val_hi")?.unwrap_or(defaults.hsv_range.v_hi),
        },
        min_blob_area: kv.parsed("min_blob_area")?.unwrap_or(defaults.min_blob_area),
        morph_passes: kv.parsed("morph_passes")?.unwrap_or(defaults.morph_passes),
        color_gate: kv.bool_key("color_gate", defaults.color_gate)?,
    };

    let connectivity = match kv.get("connectivity") {
        None | Some("8") => Connectivity::Eight,
        Some("4") => Connectivity::Four,
        Some(other) => {
            return Err(ConfigError::BadValue {
                key: "connectivity".into(),
                message: format!("`{other}` must be 4 or 8"),
            })
        }
    };

    let hough_defaults = HoughParams::default();
    let hough = HoughParams {
        theta_bins: kv.parsed("hough_theta_bins")?.unwrap_or(hough_defaults.theta_bins),
        rho_resolution: kv
            .parsed("hough_rho_resolution")?
            .unwrap_or(hough_defaults.rho_resolution),
        vote_threshold: kv
            .parsed("hough_vote_threshold")?
            .unwrap_or(hough_defaults.vote_threshold),
        max_lines: kv.parsed("hough_max_lines")?.unwrap_or(hough_defaults.max_lines),
    };
    if hough.theta_bins < 2 {
        return Err(ConfigError::BadValue {
            key: "hough_theta_bins".into(),
            message: "must be >= 2".into(),
        });
    }
    positive("hough_rho_resolution", hough.rho_resolution)?;
    if hough.vote_threshold < 1 || hough.max_lines < 1 {
        return Err(ConfigError::Invalid(
            "hough_vote_threshold and hough_max_lines must be >= 1".into(),
        ));
    }

    let thresholds_default = SeverityThresholds::default();
    let thresholds = SeverityThresholds {
        watch_below_pct: kv
            .parsed("severity_watch_pct")?
            .unwrap_or(thresholds_default.watch_below_pct),
        warning_below_pct: kv
            .parsed("severity_warning_pct")?
            .unwrap_or(thresholds_default.warning_below_pct),
    };
    if thresholds.watch_below_pct > thresholds.warning_below_pct {
        return Err(ConfigError::Invalid(
            "severity_watch_pct must not exceed severity_warning_pct".into(),
        ));
    }

    Ok(EngineConfig {
        detect,
        connectivity,
        hough,
        thresholds,
    })
}

/// Parse a pipeline config document. `base_dir` anchors relative paths.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<PipelineConfig, ConfigError> {
    let kv = KeyValues::parse(text)?;

    let input_raw = kv
        .get("input")
        .ok_or(ConfigError::MissingKey { key: "input".into() })?
        .to_string();
    let input = resolve(base_dir, &input_raw);

    let engine = engine_params(&kv)?;

    let mut sinks = Vec::new();
    if let Some(url) = kv.get("sink_webhook_url") {
        sinks.push(SinkConfig::Webhook { url: url.to_string() });
    }
    match (kv.get("sink_sms_url"), kv.get("sink_sms_to")) {
        (Some(url), Some(to)) => sinks.push(SinkConfig::Sms {
            gateway_url: url.to_string(),
            to: to.to_string(),
        }),
        (Some(_), None) | (None, Some(_)) => {
            return Err(ConfigError::Invalid(
                "sink_sms_url and sink_sms_to must be set together".into(),
            ))
        }
        (None, None) => {}
    }
    if let Some(path) = kv.get("sink_serial_file") {
        let path = resolve(base_dir, path);
        sinks.push(SinkConfig::SerialFile { path });
    }
    if let Some(addr) = kv.get("sink_serial_tcp") {
        sinks.push(SinkConfig::SerialTcp {
            addr: addr.to_string(),
        });
    }

    let monitor = if kv.bool_key("monitor_enabled", false)? {
        let username = kv
            .get("monitor_username")
            .ok_or(ConfigError::MissingKey {
                key: "monitor_username".into(),
            })?
            .to_string();
        let password = kv
            .get("monitor_password")
            .ok_or(ConfigError::MissingKey {
                key: "monitor_password".into(),
            })?
            .to_string();
        let history = kv.parsed::<usize>("monitor_history")?.unwrap_or(256);
        if history < 1 {
            return Err(ConfigError::BadValue {
                key: "monitor_history".into(),
                message: "must be >= 1".into(),
            });
        }
        Some(MonitorConfig {
            bind_address: kv
                .get("monitor_bind")
                .unwrap_or("127.0.0.1:8080")
                .to_string(),
            credentials: Credentials::new(&username, &password),
            page_title: kv
                .get("monitor_title")
                .unwrap_or("Flow Detection Monitor")
                .to_string(),
            max_event_history: history,
        })
    } else {
        // consume the keys so they are legal (but inert) when disabled
        for k in [
            "monitor_username",
            "monitor_password",
            "monitor_bind",
            "monitor_title",
            "monitor_history",
        ] {
            kv.get(k);
        }
        None
    };

    let snapshot_dir = kv.get("snapshot_dir").map(|p| resolve(base_dir, p));

    let event_log = match kv.get("event_log") {
        None | Some("stdout") => EventLog::Stdout,
        Some("null") | Some("none") => EventLog::Null,
        Some(path) => EventLog::File(resolve(base_dir, path)),
    };

    let live = kv.bool_key("live", false)?;

    kv.reject_unknown()?;

    Ok(PipelineConfig {
        input,
        detect: engine.detect,
        connectivity: engine.connectivity,
        hough: engine.hough,
        thresholds: engine.thresholds,
        sinks,
        monitor,
        snapshot_dir,
        event_log,
        live,
    })
}

fn resolve(base_dir: &Path, raw: &str) -> PathBuf {
    let p = PathBuf::from(raw);
    if p.is_absolute() {
        p
    } else {
        base_dir.join(p)
    }
}

/// Read and parse a config file; relative paths resolve against the file's
/// directory. Validates that referenced input paths exist.
pub fn load_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let cfg = parse_config(&text, base)?;
    if !cfg.input.exists() {
        return Err(ConfigError::Invalid(format!(
            "input path does not exist: {}",
            cfg.input.display()
        )));
    }
    if let Some(dir) = &cfg.snapshot_dir {
        if !dir.is_dir() {
            return Err(ConfigError::Invalid(format!(
                "snapshot_dir is not a directory: {}",
                dir.display()
            )));
        }
    }
    Ok(cfg)
}
