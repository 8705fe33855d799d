//! Inter-frame perturbation detection: layer comparison of consecutive
//! frames, difference thresholding and morphological cleanup.

use thiserror::Error;

use crate::imaging::{in_range, BinaryMask, Frame, HsvRange};

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("frame dimension mismatch: {prev_w}x{prev_h} vs {curr_w}x{curr_h}")]
    DimensionMismatch {
        prev_w: u32,
        prev_h: u32,
        curr_w: u32,
        curr_h: u32,
    },
}

/// Per-pixel difference magnitudes, 0–255, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<u8>,
}

impl DiffMap {
    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.values[y as usize * self.width as usize + x as usize]
    }
}

/// Rectangular structuring element anchored at its center (floor division).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StructuringElement {
    pub w: u32,
    pub h: u32,
}

impl StructuringElement {
    pub fn rect(w: u32, h: u32) -> Self {
        assert!(w >= 1 && h >= 1);
        StructuringElement { w, h }
    }

    fn anchor(&self) -> (i64, i64) {
        (self.w as i64 / 2, self.h as i64 / 2)
    }

    /// Footprint offsets relative to the anchor.
    fn offsets(&self) -> Vec<(i64, i64)> {
        let (ax, ay) = self.anchor();
        let mut out = Vec::with_capacity((self.w * self.h) as usize);
        for dy in 0..self.h as i64 {
            for dx in 0..self.w as i64 {
                out.push((dx - ax, dy - ay));
            }
        }
        out
    }
}

/// Tunable perturbation-detection parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectParams {
    /// Binarization threshold over the per-pixel difference magnitude.
    pub diff_threshold: u8,
    pub erode_kernel: StructuringElement,
    pub dilate_kernel: StructuringElement,
    /// Hot-flow color gate applied to the current frame.
    pub hsv_range: HsvRange,
    /// Blobs below this pixel area are discarded downstream.
    pub min_blob_area: u64,
    /// Number of erode passes, then the same number of dilate passes.
    pub morph_passes: u32,
    /// When false, detection runs on frame difference alone.
    pub color_gate: bool,
}

impl Default for DetectParams {
    fn default() -> Self {
        DetectParams {
            diff_threshold: 30,
            erode_kernel: StructuringElement::rect(2, 1),
            dilate_kernel: StructuringElement::rect(4, 2),
            hsv_range: HsvRange::default(),
            min_blob_area: 5,
            morph_passes: 2,
            color_gate: true,
        }
    }
}

/// Per-pixel difference: max over the three channels of `|curr - prev|`.
pub fn abs_diff(prev: &Frame, curr: &Frame) -> Result<DiffMap, DetectError> {
    if !prev.same_dimensions(curr) {
        return Err(DetectError::DimensionMismatch {
            prev_w: prev.width,
            prev_h: prev.height,
            curr_w: curr.width,
            curr_h: curr.height,
        });
    }
    let values = prev
        .data
        .chunks_exact(3)
        .zip(curr.data.chunks_exact(3))
        .map(|(p, c)| {
            let dr = (c[0] as i16 - p[0] as i16).unsigned_abs() as u8;
            let dg = (c[1] as i16 - p[1] as i16).unsigned_abs() as u8;
            let db = (c[2] as i16 - p[2] as i16).unsigned_abs() as u8;
            dr.max(dg).max(db)
        })
        .collect();
    Ok(DiffMap {
        width: prev.width,
        height: prev.height,
        values,
    })
}

/// Bit set iff the difference magnitude is at least `tau`; `tau = 0` yields
/// the all-true mask.
pub fn threshold_diff(d: &DiffMap, tau: u8) -> BinaryMask {
    BinaryMask::from_bits(
        d.width,
        d.height,
        d.values.iter().map(|&v| v >= tau).collect(),
    )
}

/// Morphological erosion. An output bit is set iff every in-bounds pixel
/// under the kernel footprint is set; out-of-bounds cells are ignored.
pub fn erode(m: &BinaryMask, k: &StructuringElement) -> BinaryMask {
    let offsets = k.offsets();
    let mut out = BinaryMask::new(m.width, m.height);
    for y in 0..m.height as i64 {
        for x in 0..m.width as i64 {
            let all = offsets.iter().all(|&(dx, dy)| {
                let (nx, ny) = (x + dx, y + dy);
                nx < 0
                    || ny < 0
                    || nx >= m.width as i64
                    || ny >= m.height as i64
                    || m.get(nx as u32, ny as u32)
            });
            if all {
                out.set(x as u32, y as u32, true);
            }
        }
    }
    out
}

/// Morphological dilation with the reflected kernel footprint.
pub fn dilate(m: &BinaryMask, k: &StructuringElement) -> BinaryMask {
    let offsets = k.offsets();
    let mut out = BinaryMask::new(m.width, m.height);
    for y in 0..m.height as i64 {
        for x in 0..m.width as i64 {
            let any = offsets.iter().any(|&(dx, dy)| {
                let (nx, ny) = (x - dx, y - dy);
                nx >= 0
                    && ny >= 0
                    && nx < m.width as i64
                    && ny < m.height as i64
                    && m.get(nx as u32, ny as u32)
            });
            if any {
                out.set(x as u32, y as u32, true);
            }
        }
    }
    out
}

/// Noise cleanup: `morph_passes` erosions followed by `morph_passes`
/// dilations with the configured kernels.
pub fn morph_ops(m: &BinaryMask, p: &DetectParams) -> BinaryMask {
    let mut mask = m.clone();
    for _ in 0..p.morph_passes {
        mask = erode(&mask, &p.erode_kernel);
    }
    for _ in 0..p.morph_passes {
        mask = dilate(&mask, &p.dilate_kernel);
    }
    mask
}

fn mask_and(a: &BinaryMask, b: &BinaryMask) -> BinaryMask {
    debug_assert!(a.same_dimensions(b));
    BinaryMask::from_bits(
        a.width,
        a.height,
        a.bits()
            .iter()
            .zip(b.bits().iter())
            .map(|(&x, &y)| x && y)
            .collect(),
    )
}

/// Full perturbation stage: a pixel is a perturbation only if it changed
/// between frames and (when the color gate is on) currently matches the
/// hot-flow color range, cleaned up by the morphology passes.
pub fn detect_perturbation(
    prev: &Frame,
    curr: &Frame,
    p: &DetectParams,
) -> Result<BinaryMask, DetectError> {
    let diff = abs_diff(prev, curr)?;
    let mut mask = threshold_diff(&diff, p.diff_threshold);
    if p.color_gate {
        mask = mask_and(&mask, &in_range(curr, &p.hsv_range));
    }
    Ok(morph_ops(&mask, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::hsv_to_rgb;
    use crate::imaging::HsvPixel;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Reference dilation by stamping the footprint over every set pixel.
    /// Stamping the direct footprint equals gathering the reflected one.
    pub(crate) fn dilate_ref(m: &BinaryMask, k: &StructuringElement) -> BinaryMask {
        let mut out = BinaryMask::new(m.width, m.height);
        for (x, y) in m.iter_set() {
            for (dx, dy) in k.offsets() {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx >= 0 && ny >= 0 && nx < m.width as i64 && ny < m.height as i64 {
                    out.set(nx as u32, ny as u32, true);
                }
            }
        }
        out
    }

    /// Reference erosion via complement duality: the complement of dilating
    /// the complement with the *reflected* footprint (stamped as negated
    /// offsets, since erosion here gathers the direct footprint).
    pub(crate) fn erode_ref(m: &BinaryMask, k: &StructuringElement) -> BinaryMask {
        let mut stamped = BinaryMask::new(m.width, m.height);
        for y in 0..m.height {
            for x in 0..m.width {
                if m.get(x, y) {
                    continue; // stamp over the complement
                }
                for (dx, dy) in k.offsets() {
                    let (nx, ny) = (x as i64 - dx, y as i64 - dy);
                    if nx >= 0 && ny >= 0 && nx < m.width as i64 && ny < m.height as i64 {
                        stamped.set(nx as u32, ny as u32, true);
                    }
                }
            }
        }
        BinaryMask::from_bits(
            m.width,
            m.height,
            stamped.bits().iter().map(|&b| !b).collect(),
        )
    }

    fn random_mask(w: u32, h: u32, density: f64, seed: u64) -> BinaryMask {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        BinaryMask::from_bits(
            w,
            h,
            (0..w as usize * h as usize)
                .map(|_| rng.gen_bool(density))
                .collect(),
        )
    }

    #[test]
    fn abs_diff_identical_frames_is_zero() {
        let f = Frame::filled(5, 4, (10, 200, 30));
        let d = abs_diff(&f, &f).unwrap();
        assert!(d.values.iter().all(|&v| v == 0));
    }

    #[test]
    fn abs_diff_black_to_white_is_255() {
        let a = Frame::filled(3, 3, (0, 0, 0));
        let b = Frame::filled(3, 3, (255, 255, 255));
        let d = abs_diff(&a, &b).unwrap();
        assert!(d.values.iter().all(|&v| v == 255));
    }

    #[test]
    fn abs_diff_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let a = Frame::new(8, 8, (0..192).map(|_| rng.gen()).collect()).unwrap();
        let b = Frame::new(8, 8, (0..192).map(|_| rng.gen()).collect()).unwrap();
        let d = abs_diff(&a, &b).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let (pr, pg, pb) = a.pixel(x, y);
                let (cr, cg, cb) = b.pixel(x, y);
                let expect = [
                    (cr as i32 - pr as i32).abs(),
                    (cg as i32 - pg as i32).abs(),
                    (cb as i32 - pb as i32).abs(),
                ]
                .into_iter()
                .max()
                .unwrap() as u8;
                assert_eq!(d.get(x, y), expect);
            }
        }
    }

    #[test]
    fn abs_diff_dimension_mismatch() {
        let a = Frame::filled(3, 3, (0, 0, 0));
        let b = Frame::filled(4, 3, (0, 0, 0));
        assert!(matches!(
            abs_diff(&a, &b),
            Err(DetectError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn threshold_edges() {
        let d = DiffMap {
            width: 2,
            height: 1,
            values: vec![0, 0],
        };
        assert_eq!(threshold_diff(&d, 1).count_ones(), 0);
        assert_eq!(threshold_diff(&d, 0).count_ones(), 2);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let values: Vec<u8> = (0..64).map(|_| rng.gen()).collect();
        let d = DiffMap {
            width: 8,
            height: 8,
            values: values.clone(),
        };
        let m = threshold_diff(&d, 30);
        for (i, &v) in values.iter().enumerate() {
            assert_eq!(m.bits()[i], v >= 30);
        }
    }

    #[test]
    fn erode_full_and_empty_masks() {
        let k = StructuringElement::rect(2, 1);
        let full = BinaryMask::from_bits(4, 4, vec![true; 16]);
        assert_eq!(erode(&full, &k).count_ones(), 16);
        let empty = BinaryMask::new(4, 4);
        assert_eq!(erode(&empty, &k).count_ones(), 0);
    }

    #[test]
    fn dilate_full_and_empty_masks() {
        let k = StructuringElement::rect(4, 2);
        let empty = BinaryMask::new(4, 4);
        assert_eq!(dilate(&empty, &k).count_ones(), 0);
        let full = BinaryMask::from_bits(4, 4, vec![true; 16]);
        assert_eq!(dilate(&full, &k).count_ones(), 16);
    }

    #[test]
    fn single_pixel_erode_matches_reference() {
        let mut m = BinaryMask::new(7, 7);
        m.set(3, 3, true);
        let k = StructuringElement::rect(2, 1);
        assert_eq!(erode(&m, &k), erode_ref(&m, &k));
    }

    #[test]
    fn single_pixel_dilate_stamps_kernel_shape() {
        let mut m = BinaryMask::new(9, 9);
        m.set(4, 4, true);
        let k = StructuringElement::rect(4, 2);
        let out = dilate(&m, &k);
        assert_eq!(out, dilate_ref(&m, &k));
        // 4x2 kernel anchored at (2,1): stamped region x in [2,5], y in [3,4]
        assert_eq!(out.count_ones(), 8);
        for y in 3..=4 {
            for x in 2..=5 {
                assert!(out.get(x, y), "expected set at ({x},{y})");
            }
        }
    }

    #[test]
    fn morphology_matches_reference_on_random_masks() {
        let kernels = [
            StructuringElement::rect(2, 1),
            StructuringElement::rect(4, 2),
            StructuringElement::rect(3, 3),
            StructuringElement::rect(1, 1),
        ];
        for seed in 0..50 {
            let m = random_mask(32, 32, 0.4, seed);
            for k in &kernels {
                assert_eq!(erode(&m, k), erode_ref(&m, k), "erode seed {seed}");
                assert_eq!(dilate(&m, k), dilate_ref(&m, k), "dilate seed {seed}");
            }
        }
    }

    #[test]
    fn morph_ops_equals_primitive_composition() {
        let p = DetectParams::default();
        let m = random_mask(32, 32, 0.5, 77);
        let manual = dilate(
            &dilate(
                &erode(&erode(&m, &p.erode_kernel), &p.erode_kernel),
                &p.dilate_kernel,
            ),
            &p.dilate_kernel,
        );
        assert_eq!(morph_ops(&m, &p), manual);
    }

    #[test]
    fn morph_ops_removes_speckle_noise() {
        let mut m = BinaryMask::new(16, 16);
        for (x, y) in [(2, 2), (7, 5), (12, 11), (1, 14)] {
            m.set(x, y, true);
        }
        let p = DetectParams::default();
        assert_eq!(morph_ops(&m, &p).count_ones(), 0);
    }

    #[test]
    fn morph_ops_keeps_solid_block() {
        let mut m = BinaryMask::new(32, 32);
        for y in 5..25 {
            for x in 5..25 {
                m.set(x, y, true);
            }
        }
        let p = DetectParams::default();
        let out = morph_ops(&m, &p);
        // composition of reference primitives
        let mut expect = m.clone();
        for _ in 0..2 {
            expect = erode_ref(&expect, &p.erode_kernel);
        }
        for _ in 0..2 {
            expect = dilate_ref(&expect, &p.dilate_kernel);
        }
        assert_eq!(out, expect);
        assert!(out.count_ones() > 300);
    }

    #[test]
    fn detect_perturbation_identical_frames_is_empty() {
        let f = Frame::filled(16, 16, (120, 60, 200));
        let p = DetectParams::default();
        assert_eq!(detect_perturbation(&f, &f, &p).unwrap().count_ones(), 0);
    }

    #[test]
    fn detect_perturbation_finds_in_range_patch() {
        let prev = Frame::filled(32, 32, (100, 100, 100));
        let mut curr = prev.clone();
        // bright magenta patch, gated by a range that includes hue 300
        for y in 10..20 {
            for x in 10..20 {
                curr.set_pixel(x, y, (255, 0, 255));
            }
        }
        let p = DetectParams {
            hsv_range: HsvRange {
                h_lo: 250.0,
                h_hi: 340.0,
                s_lo: 0.5,
                s_hi: 1.0,
                v_lo: 0.5,
                v_hi: 1.0,
            },
            ..DetectParams::default()
        };
        let mask = detect_perturbation(&prev, &curr, &p).unwrap();
        // morphology keeps the patch interior
        for y in 10..20 {
            for x in 12..18 {
                assert!(mask.get(x, y), "interior pixel ({x},{y}) missing");
            }
        }
        // and nothing far from the patch
        assert!(!mask.get(0, 0));
        assert!(!mask.get(31, 31));
    }

    #[test]
    fn detect_perturbation_color_gate_excludes_out_of_range_patch() {
        let prev = Frame::filled(32, 32, (100, 100, 100));
        let mut curr = prev.clone();
        for y in 10..20 {
            for x in 10..20 {
                // bright red: huge diff, hue 0 far outside 139-202
                curr.set_pixel(x, y, (255, 0, 0));
            }
        }
        let p = DetectParams::default();
        assert_eq!(detect_perturbation(&prev, &curr, &p).unwrap().count_ones(), 0);
    }

    #[test]
    fn detect_perturbation_diff_only_mode() {
        let prev = Frame::filled(32, 32, (100, 100, 100));
        let mut curr = prev.clone();
        for y in 10..20 {
            for x in 10..20 {
                curr.set_pixel(x, y, (255, 0, 0));
            }
        }
        let p = DetectParams {
            color_gate: false,
            ..DetectParams::default()
        };
        assert!(detect_perturbation(&prev, &curr, &p).unwrap().count_ones() > 0);
    }

    #[test]
    fn in_range_flow_color_default_gate() {
        // the synthetic flow color must pass the default gate
        let rgb = hsv_to_rgb(&HsvPixel {
            h: 170.0,
            s: 0.8,
            v: 0.9,
        });
        let f = Frame::filled(2, 2, rgb);
        assert_eq!(in_range(&f, &HsvRange::default()).count_ones(), 4);
    }

    proptest! {
        #[test]
        fn abs_diff_is_symmetric(seed in 0u64..500) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = Frame::new(6, 6, (0..108).map(|_| rng.gen()).collect()).unwrap();
            let b = Frame::new(6, 6, (0..108).map(|_| rng.gen()).collect()).unwrap();
            prop_assert_eq!(abs_diff(&a, &b).unwrap(), abs_diff(&b, &a).unwrap());
        }

        #[test]
        fn adjunction_on_random_masks(seed in 0u64..200, kw in 1u32..5, kh in 1u32..4) {
            let m = random_mask(16, 16, 0.5, seed);
            let k = StructuringElement::rect(kw, kh);
            let opened = dilate(&erode(&m, &k), &k);
            let closed = erode(&dilate(&m, &k), &k);
            for y in 0..16 {
                for x in 0..16 {
                    prop_assert!(!opened.get(x, y) || m.get(x, y), "open ⊆ m at ({},{})", x, y);
                    prop_assert!(!m.get(x, y) || closed.get(x, y), "m ⊆ close at ({},{})", x, y);
                }
            }
        }

        #[test]
        fn dilation_distributes_over_union(seed in 0u64..200) {
            let a = random_mask(12, 12, 0.3, seed);
            let b = random_mask(12, 12, 0.3, seed.wrapping_add(1000));
            let k = StructuringElement::rect(4, 2);
            let union = BinaryMask::from_bits(
                12,
                12,
                a.bits().iter().zip(b.bits()).map(|(&x, &y)| x || y).collect(),
            );
            let da = dilate(&a, &k);
            let db = dilate(&b, &k);
            let expect = BinaryMask::from_bits(
                12,
                12,
                da.bits().iter().zip(db.bits()).map(|(&x, &y)| x || y).collect(),
            );
            prop_assert_eq!(dilate(&union, &k), expect);
        }

        #[test]
        fn detect_perturbation_no_change_no_output(seed in 0u64..50, tau in 1u8..255) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let f = Frame::new(8, 8, (0..192).map(|_| rng.gen()).collect()).unwrap();
            let p = DetectParams { diff_threshold: tau, ..DetectParams::default() };
            prop_assert_eq!(detect_perturbation(&f, &f, &p).unwrap().count_ones(), 0);
        }
    }
}
