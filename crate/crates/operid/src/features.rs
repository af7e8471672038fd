//! Sliding-window color/texture descriptor extraction.
//!
//! Each 48x128 pedestrian crop is described by 125 subwindows (square
//! windows of sides 16/32/48, stride 8). A subwindow contributes a 72-bin
//! joint HSV histogram (8 hue x 3 saturation x 3 value bins) and a 30-bin
//! texture histogram (rotation-invariant uniform MB-LBP codes at block
//! sides 3/7/11, 10 bins each). Bins are truncated at 255 and square-root
//! transformed, giving a 125 * 102 = 12,750-dimensional descriptor.

use crate::error::{Error, Result};

/// Descriptor extraction parameters. Defaults reproduce the published
/// 12,750-dimensional representation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub target_width: usize,
    pub target_height: usize,
    pub window_scales: Vec<usize>,
    pub stride: usize,
    pub h_bins: usize,
    pub s_bins: usize,
    pub v_bins: usize,
    pub lbp_block_sides: Vec<usize>,
    pub truncation_cap: f64,
    pub apply_sqrt: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            target_width: 48,
            target_height: 128,
            window_scales: vec![16, 32, 48],
            stride: 8,
            h_bins: 8,
            s_bins: 3,
            v_bins: 3,
            lbp_block_sides: vec![3, 7, 11],
            truncation_cap: 255.0,
            apply_sqrt: true,
        }
    }
}

impl FeatureConfig {
    pub fn color_bins(&self) -> usize {
        self.h_bins * self.s_bins * self.v_bins
    }

    pub fn texture_bins(&self) -> usize {
        RIU2_CODES * self.lbp_block_sides.len()
    }

    /// Subwindow top-left corners: scale ascending, then row-major.
    pub fn subwindows(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for &side in &self.window_scales {
            if side > self.target_width || side > self.target_height {
                continue;
            }
            let mut y = 0;
            while y + side <= self.target_height {
                let mut x = 0;
                while x + side <= self.target_width {
                    out.push((side, x, y));
                    x += self.stride;
                }
                y += self.stride;
            }
        }
        out
    }

    pub fn descriptor_len(&self) -> usize {
        self.subwindows().len() * (self.color_bins() + self.texture_bins())
    }
}

/// Row-major RGB image with channels in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct PixelImage {
    pub width: usize,
    pub height: usize,
    pixels: Vec<[f64; 3]>,
}

impl PixelImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::EmptyImage);
        }
        for p in &pixels {
            for &c in p {
                if !(0.0..=1.0).contains(&c) || c.is_nan() {
                    return Err(Error::OutOfRangeChannel);
                }
            }
        }
        Ok(PixelImage {
            width,
            height,
            pixels,
        })
    }

    pub fn constant(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self> {
        PixelImage::new(width, height, vec![rgb; width * height])
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    fn pixel_clamped(&self, x: isize, y: isize) -> [f64; 3] {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.pixel(x, y)
    }
}

/// Bilinear resize to the target dimensions.
pub fn resize(image: &PixelImage, target_w: usize, target_h: usize) -> Result<PixelImage> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::EmptyImage);
    }
    if image.width == target_w && image.height == target_h {
        return Ok(image.clone());
    }
    let sx = image.width as f64 / target_w as f64;
    let sy = image.height as f64 / target_h as f64;
    let mut pixels = Vec::with_capacity(target_w * target_h);
    for oy in 0..target_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).max(0.0);
        let y0 = fy.floor() as isize;
        let wy = fy - y0 as f64;
        for ox in 0..target_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).max(0.0);
            let x0 = fx.floor() as isize;
            let wx = fx - x0 as f64;
            let mut rgb = [0.0; 3];
            for c in 0..3 {
                let p00 = image.pixel_clamped(x0, y0)[c];
                let p10 = image.pixel_clamped(x0 + 1, y0)[c];
                let p01 = image.pixel_clamped(x0, y0 + 1)[c];
                let p11 = image.pixel_clamped(x0 + 1, y0 + 1)[c];
                let top = p00 * (1.0 - wx) + p10 * wx;
                let bot = p01 * (1.0 - wx) + p11 * wx;
                rgb[c] = (top * (1.0 - wy) + bot * wy).clamp(0.0, 1.0);
            }
            pixels.push(rgb);
        }
    }
    PixelImage::new(target_w, target_h, pixels)
}

/// Quantizes an RGB pixel into joint HSV bin coordinates.
///
/// Hue bins are 45-degree sectors; saturation and value bins are uniform
/// thirds with the top edge clamped into the last bin. Achromatic pixels
/// (S = 0) land in hue bin 0 and saturation bin 0.
pub fn rgb_to_hsv_bins(rgb: [f64; 3], config: &FeatureConfig) -> Result<(usize, usize, usize)> {
    for &c in &rgb {
        if !(0.0..=1.0).contains(&c) || c.is_nan() {
            return Err(Error::OutOfRangeChannel);
        }
    }
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let v_bin = ((v * config.v_bins as f64).floor() as usize).min(config.v_bins - 1);
    if s == 0.0 {
        return Ok((0, 0, v_bin));
    }
    let mut h = if max == r {
        60.0 * ((g - b) / delta)
    } else if max == g {
        60.0 * (2.0 + (b - r) / delta)
    } else {
        60.0 * (4.0 + (r - g) / delta)
    };
    if h < 0.0 {
        h += 360.0;
    }
    let sector = 360.0 / config.h_bins as f64;
    let h_bin = ((h / sector).floor() as usize).min(config.h_bins - 1);
    let s_bin = ((s * config.s_bins as f64).floor() as usize).min(config.s_bins - 1);
    Ok((h_bin, s_bin, v_bin))
}

/// Number of rotation-invariant uniform codes for 8 neighbors.
pub const RIU2_CODES: usize = 10;

/// riu2 lookup: uniform 8-bit patterns (at most 2 circular transitions)
/// map to their popcount, everything else to 9.
pub fn riu2_table() -> [u8; 256] {
    let mut table = [0u8; 256];
    for pattern in 0..256usize {
        let mut transitions = 0;
        for i in 0..8 {
            let a = (pattern >> i) & 1;
            let b = (pattern >> ((i + 1) % 8)) & 1;
            if a != b {
                transitions += 1;
            }
        }
        table[pattern] = if transitions <= 2 {
            (pattern.count_ones()) as u8
        } else {
            9
        };
    }
    table
}

/// Luminance grid with `pad` pixels of edge replication on each side, so
/// block means stay defined near borders. Block sums are accumulated
/// directly (not via a summed-area table) so blocks with identical content
/// produce bit-identical means and the >= tie in the code map is exact.
struct PaddedLuminance {
    width: usize, // padded width
    pad: usize,
    values: Vec<f64>,
}

impl PaddedLuminance {
    fn new(image: &PixelImage, pad: usize) -> Self {
        let w = image.width + 2 * pad;
        let h = image.height + 2 * pad;
        let mut values = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let [r, g, b] =
                    image.pixel_clamped(x as isize - pad as isize, y as isize - pad as isize);
                values.push(0.299 * r + 0.587 * g + 0.114 * b);
            }
        }
        PaddedLuminance { width: w, pad, values }
    }

    /// Mean luminance of the block of side `side` centered at image
    /// coordinate (cx, cy).
    fn block_mean(&self, cx: isize, cy: isize, side: usize) -> f64 {
        let r = (side / 2) as isize;
        let x0 = (cx - r + self.pad as isize) as usize;
        let y0 = (cy - r + self.pad as isize) as usize;
        let mut sum = 0.0;
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                sum += self.values[y * self.width + x];
            }
        }
        sum / (side * side) as f64
    }
}

// Neighbor block centers, clockwise from top-left; riu2 removes the
// start-point dependence but the circular adjacency must stay fixed.
const NEIGHBOR_OFFSETS: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
];

/// Computes the per-pixel MB-LBP riu2 code grid for one block side.
///
/// For each pixel, the 8 surrounding block means (3x3 block grid centered
/// on the pixel) are compared >= against the center block mean; the 8-bit
/// pattern is mapped through the riu2 table.
pub fn mblbp_code_map(image: &PixelImage, block_side: usize) -> Result<Vec<u8>> {
    if block_side % 2 == 0 || block_side == 0 {
        return Err(Error::EvenBlockSide(block_side));
    }
    let table = riu2_table();
    // max reach: neighbor center offset (block_side) plus block radius
    let pad = block_side + block_side / 2;
    let integral = PaddedLuminance::new(image, pad);
    let mut codes = Vec::with_capacity(image.width * image.height);
    for y in 0..image.height as isize {
        for x in 0..image.width as isize {
            let center = integral.block_mean(x, y, block_side);
            let mut pattern = 0usize;
            for (bit, &(dx, dy)) in NEIGHBOR_OFFSETS.iter().enumerate() {
                let neighbor = integral.block_mean(
                    x + dx * block_side as isize,
                    y + dy * block_side as isize,
                    block_side,
                );
                if neighbor >= center {
                    pattern |= 1 << bit;
                }
            }
            codes.push(table[pattern]);
        }
    }
    Ok(codes)
}

/// Extracts the full descriptor from an image already at target size.
///
/// Output layout: subwindows in the order of [`FeatureConfig::subwindows`];
/// within a subwindow, the 72 color bins (index h*9 + s*3 + v) followed by
/// 10 texture bins per block side in ascending block-side order.
pub fn extract_descriptor(image: &PixelImage, config: &FeatureConfig) -> Result<Vec<f64>> {
    if image.width != config.target_width || image.height != config.target_height {
        return Err(Error::WrongImageSize {
            expected_w: config.target_width,
            expected_h: config.target_height,
            got_w: image.width,
            got_h: image.height,
        });
    }
    let w = image.width;

    // per-pixel HSV bin index
    let mut hsv_index = Vec::with_capacity(w * image.height);
    for y in 0..image.height {
        for x in 0..w {
            let (h, s, v) = rgb_to_hsv_bins(image.pixel(x, y), config)?;
            hsv_index.push(h * config.s_bins * config.v_bins + s * config.v_bins + v);
        }
    }
    // per-pixel riu2 code per block side
    let mut code_maps = Vec::new();
    for &side in &config.lbp_block_sides {
        code_maps.push(mblbp_code_map(image, side)?);
    }

    let color_bins = config.color_bins();
    let texture_bins = config.texture_bins();
    let mut descriptor = Vec::with_capacity(config.descriptor_len());
    for (side, x0, y0) in config.subwindows() {
        let mut hist = vec![0.0f64; color_bins + texture_bins];
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                let idx = y * w + x;
                hist[hsv_index[idx]] += 1.0;
                for (s, codes) in code_maps.iter().enumerate() {
                    hist[color_bins + s * RIU2_CODES + codes[idx] as usize] += 1.0;
                }
            }
        }
        for v in &mut hist {
            let clamped = v.min(config.truncation_cap);
            descriptor.push(if config.apply_sqrt {
                clamped.sqrt()
            } else {
                clamped
            });
        }
    }
    Ok(descriptor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subwindow_counts_per_scale() {
        let config = FeatureConfig::default();
        let windows = config.subwindows();
        let count = |s: usize| windows.iter().filter(|w| w.0 == s).count();
        assert_eq!(count(16), 75);
        assert_eq!(count(32), 39);
        assert_eq!(count(48), 11);
        assert_eq!(windows.len(), 125);
        assert_eq!(config.descriptor_len(), 12_750);
    }

    #[test]
    fn resize_to_target_from_larger_source() {
        let img = PixelImage::constant(135, 360, [0.2, 0.4, 0.6]).unwrap();
        let out = resize(&img, 48, 128).unwrap();
        assert_eq!((out.width, out.height), (48, 128));
        for y in 0..out.height {
            for x in 0..out.width {
                for c in 0..3 {
                    assert!((0.0..=1.0).contains(&out.pixel(x, y)[c]));
                }
            }
        }
    }

    #[test]
    fn resize_identity() {
        let mut pixels = Vec::new();
        for i in 0..48 * 128 {
            let v = (i % 97) as f64 / 96.0;
            pixels.push([v, 1.0 - v, 0.5]);
        }
        let img = PixelImage::new(48, 128, pixels).unwrap();
        let out = resize(&img, 48, 128).unwrap();
        assert_eq!(img, out);
    }

    #[test]
    fn resize_single_pixel_extends() {
        let img = PixelImage::constant(1, 1, [1.0, 0.0, 0.0]).unwrap();
        let out = resize(&img, 48, 128).unwrap();
        for y in 0..128 {
            for x in 0..48 {
                assert_eq!(out.pixel(x, y), [1.0, 0.0, 0.0]);
            }
        }
    }

    #[test]
    fn hsv_bins_hand_cases() {
        let config = FeatureConfig::default();
        // pure red: H=0, S=1, V=1
        assert_eq!(rgb_to_hsv_bins([1.0, 0.0, 0.0], &config).unwrap(), (0, 2, 2));
        // mid gray: achromatic, V=0.5
        assert_eq!(rgb_to_hsv_bins([0.5, 0.5, 0.5], &config).unwrap(), (0, 0, 1));
        // pure green: H=120 -> floor(120/45)=2
        assert_eq!(rgb_to_hsv_bins([0.0, 1.0, 0.0], &config).unwrap(), (2, 2, 2));
    }

    #[test]
    fn hsv_rejects_out_of_range() {
        let config = FeatureConfig::default();
        assert!(rgb_to_hsv_bins([1.2, 0.0, 0.0], &config).is_err());
    }

    #[test]
    fn riu2_has_ten_codes() {
        let table = riu2_table();
        let mut seen = std::collections::BTreeSet::new();
        for code in table {
            seen.insert(code);
        }
        assert_eq!(seen.len(), 10);
        assert_eq!(seen.iter().copied().collect::<Vec<_>>(), (0..10).collect::<Vec<_>>());
        // alternating pattern has 8 transitions -> catch-all class
        assert_eq!(table[0b10101010], 9);
        // all ones is uniform with popcount 8
        assert_eq!(table[0xFF], 8);
        assert_eq!(table[0x00], 0);
    }

    #[test]
    fn constant_image_codes_are_all_eight() {
        let img = PixelImage::constant(48, 128, [0.5, 0.5, 0.5]).unwrap();
        for side in [3, 7, 11] {
            let codes = mblbp_code_map(&img, side).unwrap();
            assert!(codes.iter().all(|&c| c == 8));
        }
    }

    #[test]
    fn mblbp_rejects_even_block_side() {
        let img = PixelImage::constant(8, 8, [0.5, 0.5, 0.5]).unwrap();
        assert!(matches!(mblbp_code_map(&img, 4), Err(Error::EvenBlockSide(4))));
    }

    #[test]
    fn descriptor_length_and_gray_values() {
        let config = FeatureConfig::default();
        let img = PixelImage::constant(48, 128, [0.5, 0.5, 0.5]).unwrap();
        let desc = extract_descriptor(&img, &config).unwrap();
        assert_eq!(desc.len(), 12_750);
        let per_window = config.color_bins() + config.texture_bins();
        let windows = config.subwindows();
        let gray_bin = 1; // (h=0, s=0, v=1) -> 0*9 + 0*3 + 1
        for (i, (side, _, _)) in windows.iter().enumerate() {
            let chunk = &desc[i * per_window..(i + 1) * per_window];
            if *side == 16 {
                // 256 pixels truncated to 255, then sqrt
                assert!((chunk[gray_bin] - 255.0f64.sqrt()).abs() < 1e-12);
            }
            // all color mass in the gray bin
            for (j, &v) in chunk[..72].iter().enumerate() {
                if j != gray_bin {
                    assert_eq!(v, 0.0);
                }
            }
            // all texture mass in code 8 of each scale
            for s in 0..3 {
                let tex = &chunk[72 + s * 10..72 + (s + 1) * 10];
                for (j, &v) in tex.iter().enumerate() {
                    if j == 8 {
                        assert!(v > 0.0);
                    } else {
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn descriptor_elements_bounded() {
        let mut pixels = Vec::new();
        for i in 0..48 * 128 {
            let v = (i * 31 % 251) as f64 / 250.0;
            let u = (i * 17 % 239) as f64 / 238.0;
            pixels.push([v, u, (v + u) / 2.0]);
        }
        let img = PixelImage::new(48, 128, pixels).unwrap();
        let desc = extract_descriptor(&img, &FeatureConfig::default()).unwrap();
        let cap = 255.0f64.sqrt();
        for &v in &desc {
            assert!((0.0..=cap + 1e-12).contains(&v));
        }
    }

    #[test]
    fn color_bins_sum_to_pixel_count_without_truncation() {
        let mut config = FeatureConfig::default();
        config.apply_sqrt = false;
        config.truncation_cap = f64::INFINITY;
        let mut pixels = Vec::new();
        for i in 0..48 * 128 {
            let v = (i * 7 % 101) as f64 / 100.0;
            pixels.push([v, v * 0.5, 1.0 - v]);
        }
        let img = PixelImage::new(48, 128, pixels).unwrap();
        let desc = extract_descriptor(&img, &config).unwrap();
        let per_window = config.color_bins() + config.texture_bins();
        for (i, (side, _, _)) in config.subwindows().iter().enumerate() {
            let chunk = &desc[i * per_window..(i + 1) * per_window];
            let color_sum: f64 = chunk[..72].iter().sum();
            assert_eq!(color_sum, (side * side) as f64);
        }
    }

    #[test]
    fn wrong_size_rejected() {
        let img = PixelImage::constant(48, 64, [0.5, 0.5, 0.5]).unwrap();
        assert!(matches!(
            extract_descriptor(&img, &FeatureConfig::default()),
            Err(Error::WrongImageSize { .. })
        ));
    }
}
