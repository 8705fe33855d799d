//! Synthetic eruption scenarios and the detection-rate benchmark.
//!
//! A [`Scenario`] describes a short fixed-camera clip: a static gradient
//! background with optional per-pixel Gaussian sensor noise, and optionally
//! one incandescent flow — an anti-aliased thick segment whose tail advances
//! along a screen bearing while its length grows. Generation is fully
//! deterministic: the same scenario yields byte-identical frames on every
//! run, which is what makes the benchmark reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::alert::SeverityThresholds;
use crate::blobs::Connectivity;
use crate::config::{ConfigError, KeyValues};
use crate::detect::DetectParams;
use crate::imaging::{hsv_to_rgb, Frame, HsvPixel};
use crate::pipeline::{Engine, EngineConfig};
use crate::trajectory::HoughParams;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario `{id}`: {message}")]
    InvalidScenario { id: String, message: String },
    #[error("scenario `{id}`: flow leaves the frame at frame {frame}")]
    FlowOutOfBounds { id: String, frame: u32 },
    #[error("scenario file: {0}")]
    Parse(#[from] ConfigError),
    #[error("scenario `{id}`: {message}")]
    Engine { id: String, message: String },
}

/// The moving flow within a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSpec {
    /// Initial tail position (vent), pixels.
    pub start: (f64, f64),
    /// Screen bearing of advance, degrees: 0 = right, 90 = up.
    pub bearing_deg: f64,
    /// Tail advance per frame, pixels.
    pub speed: f64,
    /// Stroke width, pixels.
    pub width: f64,
    /// Length added per frame, pixels.
    pub growth: f64,
    /// Flow color; the default sits inside the default detection gate.
    pub color: HsvPixel,
}

impl Default for FlowSpec {
    fn default() -> Self {
        FlowSpec {
            start: (160.0, 120.0),
            bearing_deg: 315.0,
            speed: 2.0,
            width: 6.0,
            growth: 2.0,
            color: HsvPixel {
                h: 170.0,
                s: 0.8,
                v: 0.9,
            },
        }
    }
}

/// One synthetic clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub frames: u32,
    pub size: (u32, u32),
    /// Per-pixel Gaussian luminance noise, standard deviation in levels.
    pub noise_sigma: f64,
    pub flow: Option<FlowSpec>,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |message: String| SimError::InvalidScenario {
            id: self.id.clone(),
            message,
        };
        if self.frames == 0 {
            return Err(fail("frames must be >= 1".into()));
        }
        if self.size.0 == 0 || self.size.1 == 0 {
            return Err(fail(format!("zero dimension {}x{}", self.size.0, self.size.1)));
        }
        // `>= 0` phrased to also reject NaN.
        let below = |v: f64, min: f64| v.is_nan() || v < min;
        if below(self.noise_sigma, 0.0) {
            return Err(fail(format!("noise_sigma {} must be >= 0", self.noise_sigma)));
        }
        if let Some(flow) = &self.flow {
            if below(flow.speed, 0.0) || below(flow.growth, 0.0) {
                return Err(fail("flow speed and growth must be >= 0".into()));
            }
            if below(flow.width, 1.0) {
                return Err(fail(format!("flow width {} must be >= 1", flow.width)));
            }
        }
        Ok(())
    }
}

/// Initial streak length before growth is applied.
fn initial_length(flow: &FlowSpec) -> f64 {
    flow.width.max(2.0)
}

/// Static background: a diagonal gray ramp, dark enough that the flow color
/// clears the differencing threshold everywhere.
fn background_level(x: u32, y: u32, w: u32, h: u32) -> u8 {
    let span = (w + h).saturating_sub(2).max(1) as u64;
    (40 + (x as u64 + y as u64) * 56 / span) as u8
}

fn background_frame(w: u32, h: u32) -> Frame {
    let mut data = Vec::with_capacity(w as usize * h as usize * 3);
    for y in 0..h {
        for x in 0..w {
            let g = background_level(x, y, w, h);
            data.extend_from_slice(&[g, g, g]);
        }
    }
    Frame::new(w, h, data).expect("validated dimensions")
}

/// Segment endpoints at frame `t`: the tail has advanced `speed·t` from the
/// start and the head leads it by the current length.
fn segment_at(flow: &FlowSpec, t: u32) -> ((f64, f64), (f64, f64)) {
    let rad = flow.bearing_deg.to_radians();
    // Screen bearing: y grows downward, so 90° (up) is negative y.
    let (dx, dy) = (rad.cos(), -rad.sin());
    let tail_dist = flow.speed * t as f64;
    let len = initial_length(flow) + flow.growth * t as f64;
    let tail = (flow.start.0 + dx * tail_dist, flow.start.1 + dy * tail_dist);
    let head = (tail.0 + dx * len, tail.1 + dy * len);
    (tail, head)
}

fn point_in_frame(p: (f64, f64), w: u32, h: u32) -> bool {
    p.0 >= 0.0 && p.1 >= 0.0 && p.0 <= (w - 1) as f64 && p.1 <= (h - 1) as f64
}

/// Distance from point `p` to the segment `[a, b]`.
fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 <= f64::EPSILON {
        0.0
    } else {
        (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * vx, a.1 + t * vy);
    (p.0 - cx).hypot(p.1 - cy)
}

/// Composite an anti-aliased capsule (thick segment with round caps) over
/// the frame. Coverage ramps linearly across a one-pixel band at the edge.
fn draw_capsule(frame: &mut Frame, a: (f64, f64), b: (f64, f64), radius: f64, rgb: (u8, u8, u8)) {
    let pad = radius + 1.5;
    let x0 = (a.0.min(b.0) - pad).floor().max(0.0) as u32;
    let y0 = (a.1.min(b.1) - pad).floor().max(0.0) as u32;
    let x1 = (a.0.max(b.0) + pad).ceil().min((frame.width - 1) as f64) as u32;
    let y1 = (a.1.max(b.1) + pad).ceil().min((frame.height - 1) as f64) as u32;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d = segment_distance((x as f64, y as f64), a, b);
            let alpha = (radius + 0.5 - d).clamp(0.0, 1.0);
            if alpha <= 0.0 {
                continue;
            }
            let (br, bg, bb) = frame.pixel(x, y);
            let blend = |under: u8, over: u8| -> u8 {
                (under as f64 * (1.0 - alpha) + over as f64 * alpha).round() as u8
            };
            frame.set_pixel(x, y, (blend(br, rgb.0), blend(bg, rgb.1), blend(bb, rgb.2)));
        }
    }
}

/// Add per-pixel Gaussian luminance noise. Each frame draws from its own
/// RNG stream so sequences are deterministic yet frames are independent.
fn add_noise(frame: &mut Frame, sigma: f64, seed: u64, frame_idx: u32) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame_idx as u64);
    let normal = Normal::new(0.0, sigma).expect("sigma validated non-negative");
    for px in frame.data.chunks_exact_mut(3) {
        let n: f64 = normal.sample(&mut rng);
        for c in px {
            *c = (*c as f64 + n).round().clamp(0.0, 255.0) as u8;
        }
    }
}

/// Render frame `t` of the scenario. Frame ids count from zero and
/// timestamps advance 100 ms per frame (a nominal 10 fps clip). Frames are
/// independent, so long sequences can be generated without holding them
/// all in memory.
pub fn generate_frame(s: &Scenario, t: u32) -> Result<Frame, SimError> {
    s.validate()?;
    if t >= s.frames {
        return Err(SimError::InvalidScenario {
            id: s.id.clone(),
            message: format!("frame {t} out of range (scenario has {})", s.frames),
        });
    }
    let (w, h) = s.size;
    let mut frame = background_frame(w, h);
    if let Some(flow) = &s.flow {
        let (tail, head) = segment_at(flow, t);
        if !point_in_frame(tail, w, h) || !point_in_frame(head, w, h) {
            return Err(SimError::FlowOutOfBounds {
                id: s.id.clone(),
                frame: t,
            });
        }
        let rgb = hsv_to_rgb(&flow.color);
        draw_capsule(&mut frame, tail, head, flow.width / 2.0, rgb);
    }
    if s.noise_sigma > 0.0 {
        add_noise(&mut frame, s.noise_sigma, s.seed, t);
    }
    frame.frame_id = t as u64;
    frame.timestamp_ms = t as u64 * 100;
    Ok(frame)
}

/// Render the scenario's full frame sequence (see [`generate_frame`]).
pub fn generate_sequence(s: &Scenario) -> Result<Vec<Frame>, SimError> {
    s.validate()?;
    (0..s.frames).map(|t| generate_frame(s, t)).collect()
}

// ---------------------------------------------------------------------------
// Scenario files
// ---------------------------------------------------------------------------

/// Parse a flat key=value scenario file. `id` defaults to the file stem and
/// is usually supplied by the caller.
pub fn parse_scenario(text: &str, default_id: &str) -> Result<Scenario, SimError> {
    let kv = KeyValues::parse(text)?;
    let id = kv.get("id").unwrap_or(default_id).to_string();
    let frames = kv.parsed::<u32>("frames")?.unwrap_or(24);
    let width = kv.parsed::<u32>("width")?.unwrap_or(320);
    let height = kv.parsed::<u32>("height")?.unwrap_or(240);
    let noise_sigma = kv.parsed::<f64>("noise_sigma")?.unwrap_or(0.0);
    let seed = kv.parsed::<u64>("seed")?.unwrap_or(0);

    let defaults = FlowSpec::default();
    let has_flow = kv.bool_key("flow", false)?
        || ["flow_start_x", "flow_bearing", "flow_speed"]
            .iter()
            .any(|k| kv.get(k).is_some());
    let flow = if has_flow {
        Some(FlowSpec {
            start: (
                kv.parsed::<f64>("flow_start_x")?.unwrap_or(defaults.start.0),
                kv.parsed::<f64>("flow_start_y")?.unwrap_or(defaults.start.1),
            ),
            bearing_deg: kv.parsed::<f64>("flow_bearing")?.unwrap_or(defaults.bearing_deg),
            speed: kv.parsed::<f64>("flow_speed")?.unwrap_or(defaults.speed),
            width: kv.parsed::<f64>("flow_width")?.unwrap_or(defaults.width),
            growth: kv.parsed::<f64>("flow_growth")?.unwrap_or(defaults.growth),
            color: HsvPixel {
                h: kv.parsed::<f64>("flow_hue")?.unwrap_or(defaults.color.h),
                s: kv.parsed::<f64>("flow_sat")?.unwrap_or(defaults.color.s),
                v: kv.parsed::<f64>("flow_val")?.unwrap_or(defaults.color.v),
            },
        })
    } else {
        for k in [
            "flow_start_y",
            "flow_width",
            "flow_growth",
            "flow_hue",
            "flow_sat",
            "flow_val",
        ] {
            kv.get(k);
        }
        None
    };
    kv.reject_unknown().map_err(SimError::Parse)?;
    let s = Scenario {
        id,
        frames,
        size: (width, height),
        noise_sigma,
        flow,
        seed,
    };
    s.validate()?;
    Ok(s)
}

/// Serialize a scenario to the key=value file format; round-trips through
/// [`parse_scenario`].
pub fn write_scenario(s: &Scenario) -> String {
    let mut out = String::new();
    let mut line = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    line("id", s.id.clone());
    line("frames", s.frames.to_string());
    line("width", s.size.0.to_string());
    line("height", s.size.1.to_string());
    line("noise_sigma", format!("{}", s.noise_sigma));
    line("seed", s.seed.to_string());
    if let Some(f) = &s.flow {
        line("flow", "true".into());
        line("flow_start_x", format!("{}", f.start.0));
        line("flow_start_y", format!("{}", f.start.1));
        line("flow_bearing", format!("{}", f.bearing_deg));
        line("flow_speed", format!("{}", f.speed));
        line("flow_width", format!("{}", f.width));
        line("flow_growth", format!("{}", f.growth));
        line("flow_hue", format!("{}", f.color.h));
        line("flow_sat", format!("{}", f.color.s));
        line("flow_val", format!("{}", f.color.v));
    }
    out
}

// ---------------------------------------------------------------------------
// Benchmark
// ---------------------------------------------------------------------------

/// One row of the benchmark table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScenarioRow {
    pub scenario_id: String,
    pub eruption_present: bool,
    /// For flow scenarios: at least one event fired. For calm scenarios:
    /// a false event fired (i.e. `true` is a failure).
    pub detected: bool,
    /// Detection score in hundredths of a percent (10000 = 100%).
    pub detection_centipct: u32,
}

/// Detection-rate report: one row per scenario plus an aggregate
/// success/error split. Percentages are carried in integer hundredths of
/// a percent so the split is exact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BenchmarkReport {
    pub rows: Vec<ScenarioRow>,
    pub success_centipct: u32,
    pub error_centipct: u32,
}

/// Round-half-up division returning hundredths of a percent.
fn round_centipct(numer: u64, denom: u64) -> u32 {
    if denom == 0 {
        return 0;
    }
    ((numer * 10_000 * 2 + denom) / (denom * 2)) as u32
}

/// Mean of per-scenario scores (each in centipercent), rounded half-up,
/// plus its complement. The two always sum to exactly 10000.
pub fn aggregate_centipct(scores: &[u32]) -> (u32, u32) {
    if scores.is_empty() {
        return (10_000, 0);
    }
    let sum: u64 = scores.iter().map(|&s| s as u64).sum();
    let n = scores.len() as u64;
    let success = ((sum * 2 + n) / (n * 2)) as u32;
    (success, 10_000 - success)
}

impl BenchmarkReport {
    pub fn from_rows(rows: Vec<ScenarioRow>) -> Self {
        let scores: Vec<u32> = rows.iter().map(|r| r.detection_centipct).collect();
        let (success_centipct, error_centipct) = aggregate_centipct(&scores);
        BenchmarkReport {
            rows,
            success_centipct,
            error_centipct,
        }
    }

    pub fn success_pct(&self) -> f64 {
        self.success_centipct as f64 / 100.0
    }

    pub fn error_pct(&self) -> f64 {
        self.error_centipct as f64 / 100.0
    }

    /// Count of calm scenarios that fired an event.
    pub fn false_event_scenarios(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| !r.eruption_present && r.detected)
            .count()
    }

    /// Aligned-column text table with the aggregate rows at the bottom.
    pub fn to_table_text(&self) -> String {
        let id_w = self
            .rows
            .iter()
            .map(|r| r.scenario_id.len())
            .chain(["SCENARIO".len()])
            .max()
            .unwrap_or(8);
        let mut out = String::new();
        out.push_str(&format!(
            "{:<id_w$}  {:>8}  {:>8}  {:>9}\n",
            "SCENARIO", "ERUPTION", "DETECTED", "DETECTION"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<id_w$}  {:>8}  {:>8}  {:>8}%\n",
                r.scenario_id,
                if r.eruption_present { "yes" } else { "no" },
                if r.detected { "yes" } else { "no" },
                format_centipct(r.detection_centipct),
            ));
        }
        out.push_str(&format!(
            "{:<id_w$}  {:>8}  {:>8}  {:>8}%\n",
            "Result Succ",
            "",
            "",
            format_centipct(self.success_centipct)
        ));
        out.push_str(&format!(
            "{:<id_w$}  {:>8}  {:>8}  {:>8}%\n",
            "Result Err",
            "",
            "",
            format_centipct(self.error_centipct)
        ));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Format centipercent as a fixed two-decimal percentage string.
pub fn format_centipct(cp: u32) -> String {
    format!("{}.{:02}", cp / 100, cp % 100)
}

/// Run one scenario through the detection pipeline and score it.
fn bench_one(s: &Scenario, params: &DetectParams) -> Result<ScenarioRow, SimError> {
    let frames = generate_sequence(s)?;
    let mut engine = Engine::new(EngineConfig {
        detect: params.clone(),
        connectivity: Connectivity::Eight,
        hough: HoughParams::default(),
        thresholds: SeverityThresholds::default(),
    });
    let mut active_frames = 0u64;
    let mut hit_frames = 0u64;
    let mut events = 0u64;
    for frame in frames {
        let result = engine.process(frame).map_err(|e| SimError::Engine {
            id: s.id.clone(),
            message: e.to_string(),
        })?;
        if result.first_frame {
            continue;
        }
        if s.flow.is_some() {
            active_frames += 1;
            if !result.flows.is_empty() {
                hit_frames += 1;
            }
        }
        if result.event.is_some() {
            events += 1;
        }
    }
    Ok(match &s.flow {
        Some(_) => ScenarioRow {
            scenario_id: s.id.clone(),
            eruption_present: true,
            detected: events >= 1,
            detection_centipct: round_centipct(hit_frames, active_frames),
        },
        None => ScenarioRow {
            scenario_id: s.id.clone(),
            eruption_present: false,
            detected: events > 0,
            // A calm clip scores 100% when it stays silent, 0% otherwise.
            detection_centipct: if events == 0 { 10_000 } else { 0 },
        },
    })
}

/// Score every scenario with the given detector parameters. Scenarios are
/// independent, so they run in parallel; rows keep the input order.
pub fn run_benchmark(
    scenarios: &[Scenario],
    params: &DetectParams,
) -> Result<BenchmarkReport, SimError> {
    let rows = scenarios
        .par_iter()
        .map(|s| bench_one(s, params))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BenchmarkReport::from_rows(rows))
}

/// The built-in evaluation set: 50 flow scenarios spanning bearings,
/// speeds 1–4 px/frame, widths 4–8 px and noise up to σ=2, plus 50 calm
/// scenarios over the same noise levels. All clips are 24 frames at
/// 320×240, with the flow path placed to stay in bounds.
pub fn default_benchmark_scenarios() -> Vec<Scenario> {
    const SIGMAS: [f64; 5] = [0.0, 0.5, 1.0, 1.5, 2.0];
    const FRAMES: u32 = 24;
    const SIZE: (u32, u32) = (320, 240);
    let mut out = Vec::with_capacity(100);
    for i in 0..50u32 {
        let bearing = (i as f64 * 36.6 + 5.0) % 360.0;
        let speed = 1.0 + (i % 4) as f64;
        let width = 4.0 + (i % 5) as f64;
        let growth = 2.0 + (i % 2) as f64;
        let flow = FlowSpec {
            start: place_start(bearing, speed, width, growth, FRAMES, SIZE),
            bearing_deg: bearing,
            speed,
            width,
            growth,
            ..FlowSpec::default()
        };
        out.push(Scenario {
            id: format!("flow-{i:02}"),
            frames: FRAMES,
            size: SIZE,
            noise_sigma: SIGMAS[(i % 5) as usize],
            flow: Some(flow),
            seed: 1000 + i as u64,
        });
    }
    for i in 0..50u32 {
        out.push(Scenario {
            id: format!("calm-{i:02}"),
            frames: FRAMES,
            size: SIZE,
            noise_sigma: SIGMAS[(i % 5) as usize],
            flow: None,
            seed: 9000 + i as u64,
        });
    }
    out
}

/// Center the whole flow path in the frame so neither endpoint leaves it.
pub fn place_start(
    bearing: f64,
    speed: f64,
    width: f64,
    growth: f64,
    frames: u32,
    size: (u32, u32),
) -> (f64, f64) {
    let last = (frames - 1) as f64;
    let total = speed * last + width.max(2.0) + growth * last;
    let rad = bearing.to_radians();
    let (dx, dy) = (rad.cos(), -rad.sin());
    let cx = size.0 as f64 / 2.0;
    let cy = size.1 as f64 / 2.0;
    (cx - dx * total / 2.0, cy - dy * total / 2.0)
}
