//! Pixel-buffer core: frame decoding, HSV conversion and range segmentation.

use std::io::Cursor;

use thiserror::Error;

/// Errors from frame construction and image decoding.
#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("malformed image: {0}")]
    Malformed(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("pixel buffer length {actual} does not match {width}x{height} RGB")]
    BufferSize {
        width: u32,
        height: u32,
        actual: usize,
    },
    #[error("zero frame dimension {0}x{1}")]
    ZeroDimension(u32, u32),
}

/// Input image container formats accepted by [`decode_frame`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Ppm,
    Png,
}

/// A decoded raster frame. Pixels are stored as packed row-major RGB,
/// three bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
    /// Monotonically increasing sequence number within a stream.
    pub frame_id: u64,
    /// UTC milliseconds.
    pub timestamp_ms: u64,
}

impl Frame {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::ZeroDimension(width, height));
        }
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(ImagingError::BufferSize {
                width,
                height,
                actual: data.len(),
            });
        }
        Ok(Frame {
            width,
            height,
            data,
            frame_id: 0,
            timestamp_ms: 0,
        })
    }

    /// Frame filled with a single RGB color.
    pub fn filled(width: u32, height: u32, rgb: (u8, u8, u8)) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            data.extend_from_slice(&[rgb.0, rgb.1, rgb.2]);
        }
        Frame::new(width, height, data).expect("non-zero dimensions")
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> (u8, u8, u8) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        (self.data[i], self.data[i + 1], self.data[i + 2])
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: (u8, u8, u8)) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i] = rgb.0;
        self.data[i + 1] = rgb.1;
        self.data[i + 2] = rgb.2;
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn same_dimensions(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// A pixel in HSV space: hue in degrees `[0, 360)`, saturation and value
/// as fractions in `[0, 1]`. Hue is stored as 0 when saturation is 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HsvPixel {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

/// Inclusive HSV gate. A hue range with `h_lo > h_hi` wraps through 0°.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HsvRange {
    pub h_lo: f64,
    pub h_hi: f64,
    pub s_lo: f64,
    pub s_hi: f64,
    pub v_lo: f64,
    pub v_hi: f64,
}

impl HsvRange {
    pub fn contains(&self, p: &HsvPixel) -> bool {
        let hue_ok = if self.h_lo <= self.h_hi {
            p.h >= self.h_lo && p.h <= self.h_hi
        } else {
            // wrapped range crossing 0°
            p.h >= self.h_lo || p.h <= self.h_hi
        };
        hue_ok
            && p.s >= self.s_lo
            && p.s <= self.s_hi
            && p.v >= self.v_lo
            && p.v <= self.v_hi
    }
}

impl Default for HsvRange {
    /// Hot-flow color gate: hue 139–202° with moderate saturation/value floors.
    fn default() -> Self {
        HsvRange {
            h_lo: 139.0,
            h_hi: 202.0,
            s_lo: 0.2,
            s_hi: 1.0,
            v_lo: 0.3,
            v_hi: 1.0,
        }
    }
}

/// Per-pixel boolean raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: u32,
    pub height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width as usize * height as usize);
        BinaryMask {
            width,
            height,
            bits,
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn same_dimensions(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Coordinates of set bits in raster order.
    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| ((i as u32) % w, (i as u32) / w))
    }
}

/// Standard hexcone RGB→HSV conversion over 8-bit channels.
pub fn rgb_to_hsv(r: u8, g: u8, b: u8) -> HsvPixel {
    let rf = r as f64 / 255.0;
    let gf = g as f64 / 255.0;
    let bf = b as f64 / 255.0;
    let max = rf.max(gf).max(bf);
    let min = rf.min(gf).min(bf);
    let range = max - min;

    let v = max;
    if max == 0.0 {
        return HsvPixel { h: 0.0, s: 0.0, v };
    }
    let s = range / max;
    if range == 0.0 {
        return HsvPixel { h: 0.0, s, v };
    }

    let mut h = if max == rf {
        60.0 * ((gf - bf) / range)
    } else if max == gf {
        60.0 * ((bf - rf) / range) + 120.0
    } else {
        60.0 * ((rf - gf) / range) + 240.0
    };
    if h < 0.0 {
        h += 360.0;
    }
    HsvPixel { h, s, v }
}

/// Inverse hexcone conversion back to 8-bit RGB.
pub fn hsv_to_rgb(p: &HsvPixel) -> (u8, u8, u8) {
    let c = p.v * p.s;
    let hp = (p.h / 60.0).rem_euclid(6.0);
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let m = p.v - c;
    let (rf, gf, bf) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let scale = |f: f64| ((f + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    (scale(rf), scale(gf), scale(bf))
}

/// Mask of pixels whose HSV value lies inside `range` on all three channels.
pub fn in_range(frame: &Frame, range: &HsvRange) -> BinaryMask {
    let mut mask = BinaryMask::new(frame.width, frame.height);
    for y in 0..frame.height {
        for x in 0..frame.width {
            let (r, g, b) = frame.pixel(x, y);
            if range.contains(&rgb_to_hsv(r, g, b)) {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

/// Decode an encoded image into a frame. `frame_id` and `timestamp_ms`
/// are left at zero for the ingestion layer to assign.
pub fn decode_frame(bytes: &[u8], format: ImageFormat) -> Result<Frame, ImagingError> {
    match format {
        ImageFormat::Ppm => decode_ppm(bytes),
        ImageFormat::Png => decode_png(bytes),
    }
}

/// Sniff the container format from magic bytes.
pub fn sniff_format(bytes: &[u8]) -> Result<ImageFormat, ImagingError> {
    if bytes.starts_with(b"P6") {
        Ok(ImageFormat::Ppm)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        Ok(ImageFormat::Png)
    } else {
        Err(ImagingError::UnsupportedFormat(
            "unrecognized image magic".into(),
        ))
    }
}

fn decode_ppm(bytes: &[u8]) -> Result<Frame, ImagingError> {
    let mut pos = 0usize;

    let mut next_token = |bytes: &[u8]| -> Result<Vec<u8>, ImagingError> {
        // skip whitespace and '#' comment lines
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(ImagingError::Malformed("truncated PPM header".into()));
        }
        Ok(bytes[start..pos].to_vec())
    };

    let magic = next_token(bytes)?;
    if magic != b"P6" {
        return Err(ImagingError::UnsupportedFormat(format!(
            "PPM magic {:?}, only P6 is supported",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut read_u32 = |bytes: &[u8], what: &str| -> Result<u32, ImagingError> {
        let tok = next_token(bytes)?;
        std::str::from_utf8(&tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImagingError::Malformed(format!("bad PPM {what}")))
    };
    let width = read_u32(bytes, "width")?;
    let height = read_u32(bytes, "height")?;
    let maxval = read_u32(bytes, "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(ImagingError::UnsupportedFormat(format!(
            "PPM maxval {maxval}, only 8-bit supported"
        )));
    }
    // exactly one whitespace byte separates the header from pixel data
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(ImagingError::Malformed("missing PPM data separator".into()));
    }
    pos += 1;

    let expected = width as usize * height as usize * 3;
    let data = &bytes[pos..];
    if data.len() < expected {
        return Err(ImagingError::Malformed(format!(
            "PPM pixel data truncated: {} of {expected} bytes",
            data.len()
        )));
    }
    Frame::new(width, height, data[..expected].to_vec())
}

fn decode_png(bytes: &[u8]) -> Result<Frame, ImagingError> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| ImagingError::Malformed(e.to_string()))?;
    let rgb = img.to_rgb8();
    let (width, height) = rgb.dimensions();
    Frame::new(width, height, rgb.into_raw())
}

/// Encode a frame as an 8-bit RGB PNG.
pub fn encode_png(frame: &Frame) -> Result<Vec<u8>, ImagingError> {
    let mut out = Cursor::new(Vec::new());
    let img = image::RgbImage::from_raw(frame.width, frame.height, frame.data.clone())
        .expect("frame buffer length is validated at construction");
    img.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| ImagingError::Malformed(e.to_string()))?;
    Ok(out.into_inner())
}
