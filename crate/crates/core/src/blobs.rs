//! Connected-component extraction and per-blob geometry: area, centroid,
//! perimeter, bounding box and PCA principal axis.

use std::collections::VecDeque;

use serde::Serialize;
use thiserror::Error;

use crate::imaging::BinaryMask;

#[derive(Debug, Error)]
pub enum BlobError {
    #[error("blob has no pixels")]
    EmptyBlob,
}

/// Neighborhood used when growing components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(&self) -> &'static [(i64, i64)] {
        match self {
            Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
            Connectivity::Eight => &[
                (1, 0),
                (-1, 0),
                (0, 1),
                (0, -1),
                (1, 1),
                (1, -1),
                (-1, 1),
                (-1, -1),
            ],
        }
    }
}

/// One connected region of the perturbation mask with its shape statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowBlob {
    /// 1-based label, assigned in raster-scan order of each region's first pixel.
    pub label: u32,
    pub area: u64,
    /// Sub-pixel centroid (x, y).
    pub centroid: (f64, f64),
    /// Count of blob pixels with at least one 4-neighbor outside the blob.
    pub perimeter: u64,
    /// Inclusive (x_min, y_min, x_max, y_max).
    pub bbox: (u32, u32, u32, u32),
    /// Principal-axis orientation, degrees in [0, 180), y pointing down.
    pub principal_angle: f64,
    /// λ₁/λ₂ of the coordinate covariance; ∞ for collinear blobs, 1 when degenerate.
    pub eigenvalue_ratio: f64,
}

impl FlowBlob {
    /// True when PCA could not pick an axis (isotropic second moments).
    pub fn is_degenerate(&self) -> bool {
        self.eigenvalue_ratio == 1.0
    }
}

/// A labeled region together with its pixel coordinates, which downstream
/// stages need for the axis fit and Hough voting.
#[derive(Debug, Clone)]
pub struct ExtractedBlob {
    pub blob: FlowBlob,
    pub pixels: Vec<(u32, u32)>,
}

/// Label the maximal connected regions of set bits. Geometry fields are
/// computed exactly; the principal-axis fields hold their degenerate
/// defaults until [`pca_axis`] fills them (see [`analyze_mask`]).
pub fn connected_components(m: &BinaryMask, connectivity: Connectivity) -> Vec<ExtractedBlob> {
    let (w, h) = (m.width as i64, m.height as i64);
    let mut seen = vec![false; (w * h) as usize];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    let offsets = connectivity.offsets();

    for sy in 0..h {
        for sx in 0..w {
            let si = (sy * w + sx) as usize;
            if seen[si] || !m.get(sx as u32, sy as u32) {
                continue;
            }
            seen[si] = true;
            queue.push_back((sx, sy));
            let mut pixels = Vec::new();
            while let Some((x, y)) = queue.pop_front() {
                pixels.push((x as u32, y as u32));
                for &(dx, dy) in offsets {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let ni = (ny * w + nx) as usize;
                    if !seen[ni] && m.get(nx as u32, ny as u32) {
                        seen[ni] = true;
                        queue.push_back((nx, ny));
                    }
                }
            }
            let label = out.len() as u32 + 1;
            out.push(region_stats(label, pixels, m));
        }
    }
    out
}

fn region_stats(label: u32, pixels: Vec<(u32, u32)>, m: &BinaryMask) -> ExtractedBlob {
    let area = pixels.len() as u64;
    let (mut sx, mut sy) = (0u64, 0u64);
    let (mut x_min, mut y_min, mut x_max, mut y_max) = (u32::MAX, u32::MAX, 0u32, 0u32);
    let mut perimeter = 0u64;
    for &(x, y) in &pixels {
        sx += x as u64;
        sy += y as u64;
        x_min = x_min.min(x);
        y_min = y_min.min(y);
        x_max = x_max.max(x);
        y_max = y_max.max(y);
        let on_edge = [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)].iter().any(|&(dx, dy)| {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            nx < 0
                || ny < 0
                || nx >= m.width as i64
                || ny >= m.height as i64
                || !m.get(nx as u32, ny as u32)
        });
        if on_edge {
            perimeter += 1;
        }
    }
    let centroid = (sx as f64 / area as f64, sy as f64 / area as f64);
    ExtractedBlob {
        blob: FlowBlob {
            label,
            area,
            centroid,
            perimeter,
            bbox: (x_min, y_min, x_max, y_max),
            principal_angle: 0.0,
            eigenvalue_ratio: 1.0,
        },
        pixels,
    }
}

/// Principal axis of a pixel set: orientation (degrees, [0,180), y down) of
/// the larger-eigenvalue eigenvector of the population covariance, plus the
/// eigenvalue ratio λ₁/λ₂ (∞ when collinear). Isotropic sets — single
/// pixels, perfect squares — have no preferred axis and return (0, 1).
pub fn pca_axis(pixels: &[(u32, u32)]) -> Result<(f64, f64), BlobError> {
    if pixels.is_empty() {
        return Err(BlobError::EmptyBlob);
    }
    let n = pixels.len() as f64;
    let mean_x = pixels.iter().map(|&(x, _)| x as f64).sum::<f64>() / n;
    let mean_y = pixels.iter().map(|&(_, y)| y as f64).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in pixels {
        let dx = x as f64 - mean_x;
        let dy = y as f64 - mean_y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    sxx /= n;
    syy /= n;
    sxy /= n;

    let half_trace = (sxx + syy) / 2.0;
    let root = (((sxx - syy) / 2.0).powi(2) + sxy * sxy).sqrt();
    if root <= 1e-9 * half_trace.max(f64::MIN_POSITIVE) {
        // isotropic: eigenvalues coincide, no axis is preferred
        return Ok((0.0, 1.0));
    }
    let lambda1 = half_trace + root;
    let lambda2 = half_trace - root;

    // eigenvector for λ₁; pick the better-conditioned of the two forms
    let (vx, vy) = {
        let a = (lambda1 - syy, sxy);
        let b = (sxy, lambda1 - sxx);
        if a.0 * a.0 + a.1 * a.1 >= b.0 * b.0 + b.1 * b.1 {
            a
        } else {
            b
        }
    };
    let mut angle = vy.atan2(vx).to_degrees() % 180.0;
    if angle < 0.0 {
        angle += 180.0;
    }
    // guard against -0.0 and the 180.0 boundary after rounding
    if angle >= 180.0 {
        angle -= 180.0;
    }
    let angle = if angle == 0.0 { 0.0 } else { angle };

    let ratio = if lambda2 <= 1e-12 * lambda1 {
        f64::INFINITY
    } else {
        lambda1 / lambda2
    };
    Ok((angle, ratio))
}

/// Keep exactly the blobs with `area >= min_area`, preserving order.
pub fn filter_blobs(blobs: Vec<ExtractedBlob>, min_area: u64) -> Vec<ExtractedBlob> {
    blobs.into_iter().filter(|b| b.blob.area >= min_area).collect()
}

/// Full blob stage: label the mask, fill in each region's principal axis,
/// and drop regions below the area floor.
pub fn analyze_mask(
    m: &BinaryMask,
    connectivity: Connectivity,
    min_area: u64,
) -> Vec<ExtractedBlob> {
    let mut blobs = filter_blobs(connected_components(m, connectivity), min_area);
    for b in &mut blobs {
        let (angle, ratio) = pca_axis(&b.pixels).expect("labeled region is non-empty");
        b.blob.principal_angle = angle;
        b.blob.eigenvalue_ratio = ratio;
    }
    blobs
}
