//! Per-frame engine and the end-to-end pipeline runner.
//!
//! [`Engine`] holds the cross-frame state (previous frame, previous blobs,
//! event counter) and turns one incoming frame into flows and, when any
//! survive, an event. [`run_pipeline`] wires a frame source through the
//! engine and fans events out to sinks, the event log, and the monitor.

use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::alert::{
    dispatch, payload_json, persist_snapshot, AlertError, EruptionEvent, EventBuilder,
    SeverityThresholds,
};
use crate::blobs::{analyze_mask, Connectivity, ExtractedBlob, FlowBlob};
use crate::config::{EventLog, PipelineConfig};
use crate::detect::{detect_perturbation, DetectError, DetectParams};
use crate::imaging::{encode_png, Frame};
use crate::monitor::{serve_status, EventSummary, MonitorError, MonitorState, PipelineState};
use crate::stream::{FrameSource, StreamError};
use crate::trajectory::{
    estimate_trajectory, hough_transform, CompassDirection, FlowTrajectory, HoughParams,
    TrajectorySource,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("frame source: {0}")]
    Source(#[from] StreamError),
    #[error("monitor: {0}")]
    Monitor(#[from] MonitorError),
    #[error("event log: {0}")]
    EventLog(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Detect(#[from] DetectError),
}

/// Everything the engine needs that is not per-frame state.
#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub detect: DetectParams,
    pub connectivity: Connectivity,
    pub hough: HoughParams,
    pub thresholds: SeverityThresholds,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            detect: DetectParams::default(),
            connectivity: Connectivity::Eight,
            hough: HoughParams::default(),
            thresholds: SeverityThresholds::default(),
        }
    }
}

/// Output of processing one frame.
#[derive(Debug)]
pub struct FrameResult {
    pub frame_id: u64,
    /// True for the first frame of a stream, which only primes the engine.
    pub first_frame: bool,
    /// Surviving flows with their trajectories, in blob label order.
    pub flows: Vec<(FlowBlob, FlowTrajectory)>,
    /// Built whenever `flows` is non-empty.
    pub event: Option<EruptionEvent>,
}

/// Stateful frame-pair processor: differencing, blob analysis, line fitting,
/// trajectory estimation and event construction, in frame order.
pub struct Engine {
    cfg: EngineConfig,
    prev_frame: Option<Frame>,
    /// Blobs of the previously processed pair, used for cross-frame matching.
    prev_blobs: Vec<FlowBlob>,
    builder: EventBuilder,
}

impl Engine {
    pub fn new(cfg: EngineConfig) -> Self {
        let builder = EventBuilder::new(cfg.thresholds);
        Engine {
            cfg,
            prev_frame: None,
            prev_blobs: Vec::new(),
            builder,
        }
    }

    /// The most recently ingested frame (after [`process`](Self::process),
    /// the frame just handed in). Used for snapshots and monitor previews.
    pub fn last_frame(&self) -> Option<&Frame> {
        self.prev_frame.as_ref()
    }

    /// Ingest the next frame. The first frame primes the differencer and
    /// yields an empty result; every later frame is paired with its
    /// predecessor.
    pub fn process(&mut self, frame: Frame) -> Result<FrameResult, EngineError> {
        let frame_id = frame.frame_id;
        let Some(prev) = self.prev_frame.take() else {
            self.prev_frame = Some(frame);
            return Ok(FrameResult {
                frame_id,
                first_frame: true,
                flows: Vec::new(),
                event: None,
            });
        };

        let mask = match detect_perturbation(&prev, &frame, &self.cfg.detect) {
            Ok(m) => m,
            Err(e) => {
                // Restore state so one bad frame doesn't poison the pair chain.
                self.prev_frame = Some(prev);
                return Err(e.into());
            }
        };
        let blobs = analyze_mask(&mask, self.cfg.connectivity, self.cfg.detect.min_blob_area);
        let lines = hough_transform(&mask, &self.cfg.hough);

        let matches = match_blobs(&blobs, &self.prev_blobs);
        let mut flows = Vec::with_capacity(blobs.len());
        for (b, matched) in blobs.iter().zip(matches) {
            let trajectory = estimate_trajectory(&b.blob, matched, &lines)
                // An unmatched blob with an isotropic axis has no usable
                // angle; it still counts as a flow, with direction unknown.
                .unwrap_or(FlowTrajectory {
                    grados: 0.0,
                    direction: CompassDirection::Indeterminate,
                    displayed_deviation: 0.0,
                    source: TrajectorySource::Pca,
                });
            flows.push((b.blob.clone(), trajectory));
        }

        let event = if flows.is_empty() {
            None
        } else {
            Some(
                self.builder
                    .build_event(flows.clone(), &frame)
                    .expect("flows is non-empty"),
            )
        };

        self.prev_blobs = blobs.into_iter().map(|b| b.blob).collect();
        self.prev_frame = Some(frame);
        Ok(FrameResult {
            frame_id,
            first_frame: false,
            flows,
            event,
        })
    }
}

/// Greedy nearest-centroid matching in label order. A pair matches when the
/// centroid distance is within twice the square root of the larger blob's
/// area; each previous blob is claimed at most once.
fn match_blobs<'p>(
    curr: &[ExtractedBlob],
    prev: &'p [FlowBlob],
) -> Vec<Option<&'p FlowBlob>> {
    let mut claimed = vec![false; prev.len()];
    curr.iter()
        .map(|c| {
            let mut best: Option<(usize, f64)> = None;
            for (j, p) in prev.iter().enumerate() {
                if claimed[j] {
                    continue;
                }
                let d = (c.blob.centroid.0 - p.centroid.0)
                    .hypot(c.blob.centroid.1 - p.centroid.1);
                let gate = 2.0 * (c.blob.area.max(p.area) as f64).sqrt();
                if d <= gate && best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
            best.map(|(j, _)| {
                claimed[j] = true;
                &prev[j]
            })
        })
        .collect()
}

/// Counters returned by [`run_pipeline`] and printed at stream end.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PipelineMetrics {
    /// Frames successfully ingested (including the priming frame).
    pub frames: u64,
    /// Frames dropped because they failed to decode or process.
    pub frames_skipped: u64,
    pub events: u64,
    /// Mean engine latency per ingested frame, milliseconds.
    pub mean_latency_ms: f64,
    /// Ingested frames divided by wall-clock runtime.
    pub fps: f64,
    pub elapsed_s: f64,
}

fn now_ms() -> u64 {
    use std::time::{SystemTime, UNIX_EPOCH};
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Run the full pipeline over the configured input until the source ends.
///
/// Per-frame failures are logged to stderr and skipped; sink failures are
/// reported but never abort the run. The event stream written to the
/// configured log is newline-delimited JSON, one payload per event, and is
/// byte-deterministic for a given (config, input) unless `live` timestamps
/// are enabled.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineMetrics, PipelineError> {
    let source = FrameSource::open(&cfg.input)?;

    let mut log_writer: Box<dyn Write> = match &cfg.event_log {
        EventLog::Stdout => Box::new(std::io::stdout()),
        EventLog::File(path) => Box::new(std::io::BufWriter::new(std::fs::File::create(path)?)),
        EventLog::Null => Box::new(std::io::sink()),
    };

    let monitor_state = cfg
        .monitor
        .as_ref()
        .map(|mc| Arc::new(MonitorState::new(mc.max_event_history)));
    let _monitor_handle = match (&cfg.monitor, &monitor_state) {
        (Some(mc), Some(state)) => {
            let handle = serve_status(mc, state.clone())?;
            eprintln!("monitor listening on http://{}", handle.local_addr());
            Some(handle)
        }
        _ => None,
    };

    let mut engine = Engine::new(EngineConfig {
        detect: cfg.detect.clone(),
        connectivity: cfg.connectivity,
        hough: cfg.hough.clone(),
        thresholds: cfg.thresholds,
    });

    let started = Instant::now();
    let mut last_preview = Instant::now() - Duration::from_secs(3600);
    let mut frames = 0u64;
    let mut skipped = 0u64;
    let mut events = 0u64;
    let mut engine_time = Duration::ZERO;
    let mut degraded = false;

    for item in source {
        let frame = match item {
            Ok(f) => f,
            Err(e) => {
                eprintln!("skipping unreadable frame: {e}");
                skipped += 1;
                degraded = true;
                continue;
            }
        };
        let t0 = Instant::now();
        let result = match engine.process(frame) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("skipping frame: {e}");
                skipped += 1;
                degraded = true;
                continue;
            }
        };
        engine_time += t0.elapsed();
        frames += 1;

        if let Some(mut event) = result.event {
            if cfg.live {
                event.timestamp_ms = now_ms();
            }
            if let Some(dir) = &cfg.snapshot_dir {
                let frame_ref = engine.last_frame().expect("frame just ingested");
                if let Err(e) = persist_snapshot(frame_ref, &mut event, dir) {
                    // Snapshot loss downgrades the event, never drops it.
                    eprintln!("snapshot failed for event {}: {e}", event.event_id);
                }
            }
            let payload = payload_json(&event);
            writeln!(log_writer, "{payload}")?;
            let report = dispatch(&event, &cfg.sinks);
            for outcome in report.outcomes.iter().filter(|o| !o.delivered) {
                eprintln!(
                    "event {}: delivery to {} failed after {} attempts: {}",
                    event.event_id,
                    outcome.sink,
                    outcome.attempts,
                    outcome.error.as_deref().unwrap_or("unknown error"),
                );
            }
            events += 1;
            if let Some(state) = &monitor_state {
                state.record_event(
                    payload,
                    EventSummary {
                        event_id: event.event_id,
                        frame_id: event.frame_id,
                        timestamp_ms: event.timestamp_ms,
                        severity: event.severity,
                        flow_count: event.flows.len(),
                    },
                );
            }
        }

        if let Some(state) = &monitor_state {
            let elapsed = started.elapsed().as_secs_f64();
            state.record_frame(if elapsed > 0.0 { frames as f64 / elapsed } else { 0.0 });
            state.set_pipeline_state(if degraded {
                PipelineState::Degraded
            } else {
                PipelineState::Running
            });
            // PNG encoding is costly at full resolution; refresh the
            // preview at most once a second.
            if last_preview.elapsed() >= Duration::from_secs(1) {
                if let Some(frame_ref) = engine.last_frame() {
                    if let Ok(png) = encode_png(frame_ref) {
                        state.set_latest_frame_png(png);
                        last_preview = Instant::now();
                    }
                }
            }
        }
    }

    log_writer.flush()?;
    let elapsed_s = started.elapsed().as_secs_f64();
    Ok(PipelineMetrics {
        frames,
        frames_skipped: skipped,
        events,
        mean_latency_ms: if frames > 0 {
            engine_time.as_secs_f64() * 1000.0 / frames as f64
        } else {
            0.0
        },
        fps: if elapsed_s > 0.0 {
            frames as f64 / elapsed_s
        } else {
            0.0
        },
        elapsed_s,
    })
}

/// Run a prepared frame iterator through an engine, collecting the events.
/// Shared by `detect-once` and tests that bypass the filesystem.
pub fn process_frames<I>(
    engine: &mut Engine,
    frames: I,
) -> Result<Vec<FrameResult>, EngineError>
where
    I: IntoIterator<Item = Frame>,
{
    frames.into_iter().map(|f| engine.process(f)).collect()
}

// Keep the variant reachable for callers composing their own loops.
impl From<AlertError> for PipelineError {
    fn from(e: AlertError) -> Self {
        PipelineError::EventLog(std::io::Error::other(e.to_string()))
    }
}
