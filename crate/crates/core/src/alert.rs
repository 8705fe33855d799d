//! Event construction and multi-channel dispatch: SMS-style text
//! formatting, serial command encoding, webhook delivery and snapshot
//! persistence.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::Serialize;
use thiserror::Error;

use crate::blobs::FlowBlob;
use crate::imaging::{encode_png, Frame, ImagingError};
use crate::trajectory::{CompassDirection, FlowTrajectory};

#[derive(Debug, Error)]
pub enum AlertError {
    #[error("an event requires at least one flow")]
    NoFlows,
    #[error("snapshot persistence failed: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("snapshot encoding failed: {0}")]
    Encoding(#[from] ImagingError),
    #[error("malformed serial frame: {0}")]
    BadSerialFrame(String),
}

/// Alert severity, derived from total flow area relative to the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Severity {
    Watch,
    Warning,
    Critical,
}

impl Severity {
    /// Uppercase word used in SMS text.
    pub fn sms_word(&self) -> &'static str {
        match self {
            Severity::Watch => "WATCH",
            Severity::Warning => "WARNING",
            Severity::Critical => "CRITICAL",
        }
    }

    /// Single-byte wire code used by the serial alert channel.
    pub fn serial_code(&self) -> u8 {
        match self {
            Severity::Watch => b'W',
            Severity::Warning => b'A',
            Severity::Critical => b'C',
        }
    }
}

/// One alert-worthy detection on one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EruptionEvent {
    /// Unique, strictly increasing per run.
    pub event_id: u64,
    /// UTC milliseconds (frame time, not wall clock).
    pub timestamp_ms: u64,
    pub frame_id: u64,
    /// Never empty.
    pub flows: Vec<(FlowBlob, FlowTrajectory)>,
    pub snapshot_path: Option<PathBuf>,
    pub severity: Severity,
}

/// Severity cut points as percentages of frame area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeverityThresholds {
    /// Below this percentage: Watch.
    pub watch_below_pct: f64,
    /// Below this percentage: Warning; at or above: Critical.
    pub warning_below_pct: f64,
}

impl Default for SeverityThresholds {
    fn default() -> Self {
        SeverityThresholds {
            watch_below_pct: 0.5,
            warning_below_pct: 2.0,
        }
    }
}

/// Assigns monotone event ids and derives severity.
#[derive(Debug)]
pub struct EventBuilder {
    next_id: u64,
    pub thresholds: SeverityThresholds,
}

impl Default for EventBuilder {
    fn default() -> Self {
        EventBuilder {
            next_id: 1,
            thresholds: SeverityThresholds::default(),
        }
    }
}

impl EventBuilder {
    pub fn new(thresholds: SeverityThresholds) -> Self {
        EventBuilder {
            next_id: 1,
            thresholds,
        }
    }

    /// Build an event for the given flows on `frame`. Severity: Watch when
    /// total flow area is under `watch_below_pct` percent of the frame,
    /// Warning under `warning_below_pct`, Critical otherwise.
    pub fn build_event(
        &mut self,
        flows: Vec<(FlowBlob, FlowTrajectory)>,
        frame: &Frame,
    ) -> Result<EruptionEvent, AlertError> {
        if flows.is_empty() {
            return Err(AlertError::NoFlows);
        }
        let total_area: u64 = flows.iter().map(|(b, _)| b.area).sum();
        let pct = 100.0 * total_area as f64 / frame.pixel_count() as f64;
        let severity = if pct < self.thresholds.watch_below_pct {
            Severity::Watch
        } else if pct < self.thresholds.warning_below_pct {
            Severity::Warning
        } else {
            Severity::Critical
        };
        let event = EruptionEvent {
            event_id: self.next_id,
            timestamp_ms: frame.timestamp_ms,
            frame_id: frame.frame_id,
            flows,
            snapshot_path: None,
            severity,
        };
        self.next_id += 1;
        Ok(event)
    }
}

/// JSON document POSTed to webhooks and served by the monitor. Downstream
/// receivers parse it, so field names and shapes are stable.
#[derive(Debug, Clone, Serialize)]
pub struct EventPayload {
    pub event_id: u64,
    pub timestamp_ms: u64,
    pub frame_id: u64,
    pub severity: Severity,
    pub flows: Vec<FlowPayload>,
    pub snapshot: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowPayload {
    pub area: u64,
    pub centroid: [f64; 2],
    pub grados: f64,
    pub direction: CompassDirection,
    pub deviation: f64,
}

impl EventPayload {
    pub fn from_event(e: &EruptionEvent) -> Self {
        EventPayload {
            event_id: e.event_id,
            timestamp_ms: e.timestamp_ms,
            frame_id: e.frame_id,
            severity: e.severity,
            flows: e
                .flows
                .iter()
                .map(|(b, t)| FlowPayload {
                    area: b.area,
                    centroid: [b.centroid.0, b.centroid.1],
                    grados: t.grados,
                    direction: t.direction,
                    deviation: t.displayed_deviation,
                })
                .collect(),
            snapshot: e
                .snapshot_path
                .as_ref()
                .map(|p| p.to_string_lossy().into_owned()),
        }
    }
}

/// Serialized webhook/monitor payload for an event. One serialization path
/// for every consumer, so stored and dispatched bytes are identical.
pub fn payload_json(e: &EruptionEvent) -> String {
    serde_json::to_string(&EventPayload::from_event(e)).expect("payload serializes")
}

fn iso8601(timestamp_ms: u64) -> String {
    let dt: DateTime<Utc> =
        DateTime::from_timestamp_millis(timestamp_ms as i64).unwrap_or_default();
    dt.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

pub const SMS_MAX_LEN: usize = 160;

/// One-line GSM-7-safe alert text, at most [`SMS_MAX_LEN`] characters:
/// `VOLCAN ALERTA <SEVERITY> flujos=<n> dir=<d1,..> area=<total>px t=<iso8601>`.
/// When the full direction list does not fit, trailing entries collapse to
/// `+<count>`.
pub fn format_sms(e: &EruptionEvent) -> String {
    let n = e.flows.len();
    let total_area: u64 = e.flows.iter().map(|(b, _)| b.area).sum();
    let when = iso8601(e.timestamp_ms);
    let labels: Vec<&str> = e.flows.iter().map(|(_, t)| t.direction.label()).collect();

    let render = |dir_list: &str| {
        format!(
            "VOLCAN ALERTA {} flujos={} dir={} area={}px t={}",
            e.severity.sms_word(),
            n,
            dir_list,
            total_area,
            when
        )
    };

    // longest prefix of the direction list that fits the budget
    for keep in (0..=n).rev() {
        let mut list = labels[..keep].join(",");
        if keep < n {
            if keep > 0 {
                list.push(',');
            }
            list.push('+');
            list.push_str(&(n - keep).to_string());
        }
        let msg = render(&list);
        if msg.len() <= SMS_MAX_LEN {
            return msg;
        }
    }
    // unreachable for any real event; defensive hard cut
    let mut msg = render("+");
    msg.truncate(SMS_MAX_LEN);
    msg
}

/// Serial wire encoding: severity byte (`W`/`A`/`C`), one direction byte
/// per flow (`1` NE, `2` NW, `3` SW, `4` SE, `0` indeterminate), then `\n`.
pub fn encode_serial(e: &EruptionEvent) -> Vec<u8> {
    let mut out = Vec::with_capacity(e.flows.len() + 2);
    out.push(e.severity.serial_code());
    out.extend(e.flows.iter().map(|(_, t)| t.direction.serial_code()));
    out.push(b'\n');
    out
}

/// Inverse of [`encode_serial`], for receivers and round-trip checks.
pub fn decode_serial(bytes: &[u8]) -> Result<(Severity, Vec<CompassDirection>), AlertError> {
    let (&last, body) = bytes
        .split_last()
        .ok_or_else(|| AlertError::BadSerialFrame("empty".into()))?;
    if last != b'\n' {
        return Err(AlertError::BadSerialFrame("missing terminator".into()));
    }
    let (&sev, dirs) = body
        .split_first()
        .ok_or_else(|| AlertError::BadSerialFrame("missing severity".into()))?;
    let severity = match sev {
        b'W' => Severity::Watch,
        b'A' => Severity::Warning,
        b'C' => Severity::Critical,
        other => {
            return Err(AlertError::BadSerialFrame(format!(
                "unknown severity byte 0x{other:02x}"
            )))
        }
    };
    let directions = dirs
        .iter()
        .map(|&b| match b {
            b'1' => Ok(CompassDirection::NE),
            b'2' => Ok(CompassDirection::NW),
            b'3' => Ok(CompassDirection::SW),
            b'4' => Ok(CompassDirection::SE),
            b'0' => Ok(CompassDirection::Indeterminate),
            other => Err(AlertError::BadSerialFrame(format!(
                "unknown direction byte 0x{other:02x}"
            ))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((severity, directions))
}

/// Persist the frame as `event_<event_id>_<frame_id>.png` under `dir` and
/// record the path on the event.
pub fn persist_snapshot(
    frame: &Frame,
    e: &mut EruptionEvent,
    dir: &Path,
) -> Result<PathBuf, AlertError> {
    let path = dir.join(format!("event_{}_{}.png", e.event_id, e.frame_id));
    let bytes = encode_png(frame)?;
    std::fs::write(&path, bytes)?;
    e.snapshot_path = Some(path.clone());
    Ok(path)
}

/// Alert delivery channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SinkConfig {
    /// HTTP POST of the event payload JSON.
    Webhook { url: String },
    /// HTTP POST `{"to": .., "body": ..}` to an SMS gateway.
    Sms { gateway_url: String, to: String },
    /// Serial byte stream appended to a file or FIFO.
    SerialFile { path: PathBuf },
    /// Serial byte stream written to a TCP endpoint.
    SerialTcp { addr: String },
}

impl SinkConfig {
    /// Stable name used in delivery reports.
    pub fn describe(&self) -> String {
        match self {
            SinkConfig::Webhook { url } => format!("webhook {url}"),
            SinkConfig::Sms { gateway_url, to } => format!("sms {to} via {gateway_url}"),
            SinkConfig::SerialFile { path } => format!("serial file {}", path.display()),
            SinkConfig::SerialTcp { addr } => format!("serial tcp {addr}"),
        }
    }
}

/// Outcome of delivering one event to one sink.
#[derive(Debug, Clone, Serialize)]
pub struct SinkOutcome {
    pub sink: String,
    pub delivered: bool,
    pub attempts: u32,
    pub error: Option<String>,
}

/// Per-sink outcomes for one event, in sink-configuration order.
#[derive(Debug, Clone, Serialize)]
pub struct DeliveryReport {
    pub event_id: u64,
    pub outcomes: Vec<SinkOutcome>,
}

impl DeliveryReport {
    pub fn all_delivered(&self) -> bool {
        self.outcomes.iter().all(|o| o.delivered)
    }
}

const MAX_ATTEMPTS: u32 = 3;
const BACKOFF: [Duration; 2] = [Duration::from_secs(1), Duration::from_secs(2)];
const HTTP_TIMEOUT: Duration = Duration::from_secs(5);

fn post_json(url: &str, body: String) -> Result<(), String> {
    let client = reqwest::blocking::Client::builder()
        .timeout(HTTP_TIMEOUT)
        .build()
        .map_err(|e| e.to_string())?;
    let resp = client
        .post(url)
        .header("content-type", "application/json")
        .body(body)
        .send()
        .map_err(|e| e.to_string())?;
    if resp.status().is_success() {
        Ok(())
    } else {
        Err(format!("status {}", resp.status().as_u16()))
    }
}

fn deliver_once(e: &EruptionEvent, sink: &SinkConfig) -> Result<(), String> {
    match sink {
        SinkConfig::Webhook { url } => post_json(url, payload_json(e)),
        SinkConfig::Sms { gateway_url, to } => {
            let body = serde_json::json!({ "to": to, "body": format_sms(e) }).to_string();
            post_json(gateway_url, body)
        }
        SinkConfig::SerialFile { path } => (|| {
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)?;
            f.write_all(&encode_serial(e))?;
            f.flush()
        })()
        .map_err(|err| err.to_string()),
        SinkConfig::SerialTcp { addr } => (|| {
            let mut stream = std::net::TcpStream::connect(addr)?;
            stream.write_all(&encode_serial(e))?;
            stream.flush()
        })()
        .map_err(|err| err.to_string()),
    }
}

fn deliver_with_retry(e: &EruptionEvent, sink: &SinkConfig) -> SinkOutcome {
    let mut last_error = None;
    for attempt in 1..=MAX_ATTEMPTS {
        match deliver_once(e, sink) {
            Ok(()) => {
                return SinkOutcome {
                    sink: sink.describe(),
                    delivered: true,
                    attempts: attempt,
                    error: None,
                }
            }
            Err(err) => last_error = Some(err),
        }
        if attempt < MAX_ATTEMPTS {
            std::thread::sleep(BACKOFF[(attempt - 1) as usize]);
        }
    }
    SinkOutcome {
        sink: sink.describe(),
        delivered: false,
        attempts: MAX_ATTEMPTS,
        error: last_error,
    }
}

/// Fan an event out to every configured sink concurrently. Each sink gets
/// up to three attempts with exponential backoff; one sink's failure never
/// blocks the others. Failures are reported, not raised.
pub fn dispatch(e: &EruptionEvent, sinks: &[SinkConfig]) -> DeliveryReport {
    let outcomes = std::thread::scope(|scope| {
        let handles: Vec<_> = sinks
            .iter()
            .map(|sink| scope.spawn(move || deliver_with_retry(e, sink)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sink worker panicked"))
            .collect()
    });
    DeliveryReport {
        event_id: e.event_id,
        outcomes,
    }
}
