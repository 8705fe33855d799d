//! Flow trajectory estimation: Hough line transform over perturbation
//! masks, slope-form conversion, motion-vector angles and compass-direction
//! classification.

use serde::Serialize;
use thiserror::Error;

use crate::blobs::FlowBlob;
use crate::imaging::BinaryMask;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("centroids are identical; no motion vector")]
    ZeroDisplacement,
    #[error("degenerate axis and no cross-frame match")]
    IndeterminateTrajectory,
}

/// A detected line in normal form: `x·cosθ + y·sinθ = r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HoughLine {
    /// Signed distance from the origin, pixels.
    pub r: f64,
    /// Normal angle, radians in [0, π).
    pub theta: f64,
    /// Accumulator count.
    pub votes: u32,
}

/// Discretization of the line transform.
#[derive(Debug, Clone, PartialEq)]
pub struct HoughParams {
    pub theta_bins: usize,
    pub rho_resolution: f64,
    pub vote_threshold: u32,
    pub max_lines: usize,
}

impl Default for HoughParams {
    fn default() -> Self {
        HoughParams {
            theta_bins: 180,
            rho_resolution: 1.0,
            vote_threshold: 20,
            max_lines: 5,
        }
    }
}

impl HoughParams {
    fn validate(&self) {
        assert!(self.theta_bins >= 2, "theta_bins must be >= 2");
        assert!(self.rho_resolution > 0.0, "rho_resolution must be > 0");
        assert!(self.vote_threshold >= 1, "vote_threshold must be >= 1");
        assert!(self.max_lines >= 1, "max_lines must be >= 1");
    }
}

/// Vote accumulator over (θ bin, quantized r). Public so callers can verify
/// the transform cell-for-cell against reference implementations.
#[derive(Debug, Clone, PartialEq)]
pub struct HoughAccumulator {
    pub theta_bins: usize,
    pub rho_resolution: f64,
    /// Quantized-r index of counts column 0 (most negative representable r).
    pub r_quant_min: i64,
    pub n_rho: usize,
    /// Row-major: counts[theta_idx * n_rho + (r_quant - r_quant_min)].
    pub counts: Vec<u32>,
}

impl HoughAccumulator {
    /// Left-edge angle of a θ bin.
    pub fn theta_of(&self, theta_idx: usize) -> f64 {
        theta_idx as f64 * std::f64::consts::PI / self.theta_bins as f64
    }

    pub fn get(&self, theta_idx: usize, r_quant: i64) -> u32 {
        if theta_idx >= self.theta_bins
            || r_quant < self.r_quant_min
            || r_quant >= self.r_quant_min + self.n_rho as i64
        {
            return 0;
        }
        self.counts[theta_idx * self.n_rho + (r_quant - self.r_quant_min) as usize]
    }
}

/// Accumulate votes: each set pixel (x,y) votes, in every θ bin, for
/// `r = x·cosθ + y·sinθ` rounded to the nearest multiple of `rho_resolution`.
pub fn hough_accumulate(m: &BinaryMask, p: &HoughParams) -> HoughAccumulator {
    p.validate();
    let diag = ((m.width as f64).hypot(m.height as f64) / p.rho_resolution).ceil() as i64 + 1;
    let (r_quant_min, n_rho) = (-diag, (2 * diag + 1) as usize);
    let mut counts = vec![0u32; p.theta_bins * n_rho];
    let trig: Vec<(f64, f64)> = (0..p.theta_bins)
        .map(|k| {
            let t = k as f64 * std::f64::consts::PI / p.theta_bins as f64;
            (t.cos(), t.sin())
        })
        .collect();
    for (x, y) in m.iter_set() {
        for (k, &(c, s)) in trig.iter().enumerate() {
            let r = x as f64 * c + y as f64 * s;
            let rq = (r / p.rho_resolution).round() as i64;
            counts[k * n_rho + (rq - r_quant_min) as usize] += 1;
        }
    }
    HoughAccumulator {
        theta_bins: p.theta_bins,
        rho_resolution: p.rho_resolution,
        r_quant_min,
        n_rho,
        counts,
    }
}

/// A cell is a peak iff it meets the vote threshold and is strictly greater
/// than its 8 accumulator neighbors, or equal to the greatest of them and
/// first in (θ index, quantized r) order among the equal cells.
fn is_peak(acc: &HoughAccumulator, k: usize, rq: i64) -> bool {
    let v = acc.get(k, rq);
    if v < 1 {
        return false;
    }
    for dk in -1i64..=1 {
        for dr in -1i64..=1 {
            if dk == 0 && dr == 0 {
                continue;
            }
            let nk = k as i64 + dk;
            if nk < 0 || nk >= acc.theta_bins as i64 {
                continue;
            }
            let nrq = rq + dr;
            let nv = acc.get(nk as usize, nrq);
            if nv > v || (nv == v && (nk as usize, nrq) < (k, rq)) {
                return false;
            }
        }
    }
    true
}

/// Extract peak lines: cells with `votes >= vote_threshold` that are local
/// maxima, sorted by votes descending (ties by (θ, r) ascending), truncated
/// to `max_lines`.
pub fn hough_transform(m: &BinaryMask, p: &HoughParams) -> Vec<HoughLine> {
    let acc = hough_accumulate(m, p);
    hough_peaks(&acc, p)
}

/// Peak extraction over an existing accumulator (see [`hough_transform`]).
pub fn hough_peaks(acc: &HoughAccumulator, p: &HoughParams) -> Vec<HoughLine> {
    let mut peaks: Vec<(u32, usize, i64)> = Vec::new();
    for k in 0..acc.theta_bins {
        for i in 0..acc.n_rho {
            let rq = acc.r_quant_min + i as i64;
            let v = acc.counts[k * acc.n_rho + i];
            if v >= p.vote_threshold && is_peak(acc, k, rq) {
                peaks.push((v, k, rq));
            }
        }
    }
    peaks.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    peaks.truncate(p.max_lines);
    peaks
        .into_iter()
        .map(|(votes, k, rq)| HoughLine {
            r: rq as f64 * acc.rho_resolution,
            theta: acc.theta_of(k),
            votes,
        })
        .collect()
}

/// Slope-intercept form of a normal-form line, or the vertical marker when
/// the normal is horizontal (sinθ below tolerance):
/// `y = (−cosθ/sinθ)·x + r/sinθ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SlopeForm {
    Slope { slope: f64, intercept: f64 },
    VerticalLine { x: f64 },
}

pub fn line_to_slope_form(l: &HoughLine) -> SlopeForm {
    let s = l.theta.sin();
    if s.abs() <= 1e-9 {
        SlopeForm::VerticalLine { x: l.r }
    } else {
        SlopeForm::Slope {
            slope: -l.theta.cos() / s,
            intercept: l.r / s,
        }
    }
}

/// Motion-vector angle between matched centroids, degrees in [0,360).
/// The y component is negated so 90° means screen-up.
pub fn motion_angle(
    prev_centroid: (f64, f64),
    curr_centroid: (f64, f64),
) -> Result<f64, TrajectoryError> {
    let dx = curr_centroid.0 - prev_centroid.0;
    let dy = curr_centroid.1 - prev_centroid.1;
    if dx == 0.0 && dy == 0.0 {
        return Err(TrajectoryError::ZeroDisplacement);
    }
    Ok(normalize_degrees((-dy).atan2(dx).to_degrees()))
}

fn normalize_degrees(d: f64) -> f64 {
    let mut d = d % 360.0;
    if d < 0.0 {
        d += 360.0;
    }
    // collapse the 360.0 boundary and -0.0
    if d >= 360.0 || d == 0.0 {
        d = 0.0;
    }
    d
}

/// Compass sector of a flow's motion vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum CompassDirection {
    NE,
    NW,
    SW,
    SE,
    Indeterminate,
}

impl CompassDirection {
    /// Single-byte wire code used by the serial alert channel.
    pub fn serial_code(&self) -> u8 {
        match self {
            CompassDirection::NE => b'1',
            CompassDirection::NW => b'2',
            CompassDirection::SW => b'3',
            CompassDirection::SE => b'4',
            CompassDirection::Indeterminate => b'0',
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            CompassDirection::NE => "NE",
            CompassDirection::NW => "NW",
            CompassDirection::SW => "SW",
            CompassDirection::SE => "SE",
            CompassDirection::Indeterminate => "Indeterminate",
        }
    }
}

/// Sector table over `grados` in [0,360): [0,90] SE, (90,180) SW,
/// [180,270] NW, (270,360) NE. The displayed deviation is the distance to
/// the sector center (45/135/225/315) — except in SW, which reports
/// `|grados − 45|` to match the behavior of the original field systems this
/// replaces (kept deliberately; see module docs).
pub fn classify_direction(grados: f64) -> (CompassDirection, f64) {
    debug_assert!((0.0..360.0).contains(&grados), "grados {grados}");
    if grados <= 90.0 {
        (CompassDirection::SE, (grados - 45.0).abs())
    } else if grados < 180.0 {
        (CompassDirection::SW, (grados - 45.0).abs())
    } else if grados <= 270.0 {
        (CompassDirection::NW, (grados - 225.0).abs())
    } else {
        (CompassDirection::NE, (grados - 315.0).abs())
    }
}

/// How a trajectory's angle was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectorySource {
    /// Principal-axis orientation (no usable motion vector).
    Pca,
    /// Motion vector, no corroborating line.
    Hough,
    /// Motion vector corroborated by the top Hough line.
    Fused,
}

/// Estimated motion of one flow blob.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowTrajectory {
    /// Motion-vector angle, degrees in [0,360), 90 = screen-up.
    pub grados: f64,
    pub direction: CompassDirection,
    pub displayed_deviation: f64,
    pub source: TrajectorySource,
}

/// Angular distance between two axis orientations (mod 180°).
fn axis_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(180.0);
    d.min(180.0 - d)
}

/// Bearing of an undirected axis after downslope disambiguation: take the
/// half of the axis whose endpoint has the greater y (screen-down); a
/// perfectly horizontal axis resolves rightward.
fn axis_to_bearing(principal_angle: f64) -> f64 {
    let rad = principal_angle.to_radians();
    let (dx, dy) = if rad.sin() > 0.0 {
        (rad.cos(), rad.sin())
    } else {
        (1.0, 0.0)
    };
    normalize_degrees((-dy).atan2(dx).to_degrees())
}

/// Combine cross-frame motion, the blob's principal axis and the frame's
/// Hough lines into one trajectory.
///
/// With a match and at least one pixel of displacement the angle comes from
/// the motion vector; the source is `Fused` when the top Hough line's
/// direction (normal + 90°) agrees with the blob axis within 10°, otherwise
/// `Hough`. Sub-pixel displacement falls back to the axis (source `Pca`),
/// as does an unmatched blob; a degenerate axis yields `Indeterminate`
/// direction when matched and an error when not.
pub fn estimate_trajectory(
    blob: &FlowBlob,
    matched_prev: Option<&FlowBlob>,
    hough: &[HoughLine],
) -> Result<FlowTrajectory, TrajectoryError> {
    if let Some(prev) = matched_prev {
        let dx = blob.centroid.0 - prev.centroid.0;
        let dy = blob.centroid.1 - prev.centroid.1;
        if dx.hypot(dy) >= 1.0 {
            let grados = motion_angle(prev.centroid, blob.centroid)
                .expect("displacement >= 1px cannot be zero");
            let fused = hough.first().is_some_and(|top| {
                let line_dir = (top.theta.to_degrees() + 90.0).rem_euclid(180.0);
                !blob.is_degenerate() && axis_distance(line_dir, blob.principal_angle) <= 10.0
            });
            let (direction, displayed_deviation) = classify_direction(grados);
            return Ok(FlowTrajectory {
                grados,
                direction,
                displayed_deviation,
                source: if fused {
                    TrajectorySource::Fused
                } else {
                    TrajectorySource::Hough
                },
            });
        }
        // matched but essentially stationary: orientation-only estimate
        if blob.is_degenerate() {
            return Ok(FlowTrajectory {
                grados: 0.0,
                direction: CompassDirection::Indeterminate,
                displayed_deviation: 0.0,
                source: TrajectorySource::Pca,
            });
        }
        let grados = axis_to_bearing(blob.principal_angle);
        let (direction, displayed_deviation) = classify_direction(grados);
        return Ok(FlowTrajectory {
            grados,
            direction,
            displayed_deviation,
            source: TrajectorySource::Pca,
        });
    }

    if blob.is_degenerate() {
        return Err(TrajectoryError::IndeterminateTrajectory);
    }
    let grados = axis_to_bearing(blob.principal_angle);
    let (direction, displayed_deviation) = classify_direction(grados);
    Ok(FlowTrajectory {
        grados,
        direction,
        displayed_deviation,
        source: TrajectorySource::Pca,
    })
}
