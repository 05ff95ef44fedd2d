//! Deterministic heatmap rendering of relevance maps.
//!
//! Maps are collapsed over channels, normalized by a high percentile of the
//! positive values (so a handful of hot pixels cannot crush the display
//! range), pushed through a colormap, and upscaled with nearest-neighbor
//! sampling. Interpolating an attribution would invent attributions between
//! pixels, so no smoothing is applied anywhere.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::lrp::RelevanceMap;
use crate::tensor::Tensor;

pub const DEFAULT_OUTPUT_SIZE: (usize, usize) = (256, 256);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Colormap {
    #[default]
    Grayscale,
    /// Black through red and yellow to white.
    Heat,
}

#[derive(Debug, Clone, Copy)]
pub struct HeatmapConfig {
    pub colormap: Colormap,
    /// Percentile of the positive values used as the clip point, in (50, 100].
    pub clip_percentile: f64,
    /// Target (height, width); defaults to 256x256, never below the source.
    pub output_size: Option<(usize, usize)>,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        HeatmapConfig {
            colormap: Colormap::Grayscale,
            clip_percentile: 99.0,
            output_size: None,
        }
    }
}

/// 8-bit raster image, grayscale (1 channel) or RGB (3 channels),
/// row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Raster {
            width,
            height,
            channels,
            pixels: vec![0; width * height * channels],
        }
    }

    fn put(&mut self, x: usize, y: usize, value: &[u8]) {
        let base = (y * self.width + x) * self.channels;
        self.pixels[base..base + self.channels].copy_from_slice(value);
    }

    fn get(&self, x: usize, y: usize) -> &[u8] {
        let base = (y * self.width + x) * self.channels;
        &self.pixels[base..base + self.channels]
    }

    /// Grayscale promoted to RGB; RGB returned as-is.
    pub fn to_rgb(&self) -> Raster {
        if self.channels == 3 {
            return self.clone();
        }
        let mut pixels = Vec::with_capacity(self.pixels.len() * 3);
        for &g in &self.pixels {
            pixels.extend_from_slice(&[g, g, g]);
        }
        Raster {
            width: self.width,
            height: self.height,
            channels: 3,
            pixels,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RenderError {
    BadClipPercentile { got: f64 },
    /// Requested output is smaller than the source in some extent.
    OutputTooSmall { source: (usize, usize), requested: (usize, usize) },
    HeightMismatch { heights: Vec<usize> },
    LabelCount { images: usize, labels: usize },
    NoImages,
    BadRank { rank: usize },
}

impl fmt::Display for RenderError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RenderError::BadClipPercentile { got } => {
                write!(f, "clip percentile must lie in (50, 100], got {got}")
            }
            RenderError::OutputTooSmall { source, requested } => write!(
                f,
                "output size {requested:?} smaller than source {source:?}; upscale only"
            ),
            RenderError::HeightMismatch { heights } => {
                write!(f, "side-by-side images must share a height, got {heights:?}")
            }
            RenderError::LabelCount { images, labels } => {
                write!(f, "{images} images but {labels} labels")
            }
            RenderError::NoImages => write!(f, "no images to compose"),
            RenderError::BadRank { rank } => {
                write!(f, "heatmap source must have rank 1-3, got {rank}")
            }
        }
    }
}

impl core::error::Error for RenderError {}

/// Renders a relevance map as a heatmap raster.
pub fn render_heatmap(map: &RelevanceMap, config: &HeatmapConfig) -> Result<Raster, RenderError> {
    render_values(&map.values, config)
}

/// Renders any nonnegative tensor (rank 1-3) as a heatmap raster.
pub fn render_values(values: &Tensor, config: &HeatmapConfig) -> Result<Raster, RenderError> {
    if !(config.clip_percentile > 50.0 && config.clip_percentile <= 100.0) {
        return Err(RenderError::BadClipPercentile {
            got: config.clip_percentile,
        });
    }
    let plane = collapse_channels(values)?;
    let (h, w) = (plane.shape()[0], plane.shape()[1]);

    let clip = positive_percentile(plane.data(), config.clip_percentile);
    let mut raster = Raster::new(
        w,
        h,
        match config.colormap {
            Colormap::Grayscale => 1,
            Colormap::Heat => 3,
        },
    );
    if clip > 0.0 {
        for y in 0..h {
            for x in 0..w {
                let t = (plane.data()[y * w + x] / clip).min(1.0);
                match config.colormap {
                    Colormap::Grayscale => raster.put(x, y, &[to_byte(t)]),
                    Colormap::Heat => raster.put(x, y, &heat_rgb(t)),
                }
            }
        }
    }

    let target = match config.output_size {
        Some((th, tw)) => {
            if th < h || tw < w {
                return Err(RenderError::OutputTooSmall {
                    source: (h, w),
                    requested: (th, tw),
                });
            }
            (th, tw)
        }
        None => (DEFAULT_OUTPUT_SIZE.0.max(h), DEFAULT_OUTPUT_SIZE.1.max(w)),
    };
    Ok(upscale_nearest(&raster, target.0, target.1))
}

/// Horizontal concatenation with one-pixel dividers and a label strip.
pub fn render_side_by_side(images: &[Raster], labels: &[&str]) -> Result<Raster, RenderError> {
    if images.is_empty() {
        return Err(RenderError::NoImages);
    }
    if labels.len() != images.len() {
        return Err(RenderError::LabelCount {
            images: images.len(),
            labels: labels.len(),
        });
    }
    let h = images[0].height;
    if images.iter().any(|i| i.height != h) {
        return Err(RenderError::HeightMismatch {
            heights: images.iter().map(|i| i.height).collect(),
        });
    }

    let channels = if images.iter().any(|i| i.channels == 3) { 3 } else { 1 };
    let total_w: usize = images.iter().map(|i| i.width).sum::<usize>() + images.len() - 1;
    let mut out = Raster::new(total_w, h + LABEL_STRIP_HEIGHT, channels);

    let gray = vec![128u8; channels];
    let white = vec![255u8; channels];
    let mut x0 = 0usize;
    for (i, img) in images.iter().enumerate() {
        let src = if channels == 3 { img.to_rgb() } else { img.clone() };
        for y in 0..h {
            for x in 0..img.width {
                out.put(x0 + x, y, src.get(x, y));
            }
        }
        draw_label(&mut out, labels[i], x0, img.width, h + 2, &white);
        x0 += img.width;
        if i + 1 < images.len() {
            for y in 0..out.height {
                out.put(x0, y, &gray);
            }
            x0 += 1;
        }
    }
    Ok(out)
}

fn collapse_channels(values: &Tensor) -> Result<Tensor, RenderError> {
    match values.rank() {
        3 => Ok(values.sum_axis(0).expect("axis 0 of rank-3 tensor")),
        2 => Ok(values.clone()),
        1 => Ok(values
            .reshape(vec![1, values.len()])
            .expect("rank-1 reshape")),
        rank => Err(RenderError::BadRank { rank }),
    }
}

/// Nearest-rank percentile of the strictly positive values; 0 when there are
/// none, which renders an all-black image.
fn positive_percentile(values: &[f64], percentile: f64) -> f64 {
    let mut pos: Vec<f64> = values.iter().copied().filter(|&v| v > 0.0).collect();
    if pos.is_empty() {
        return 0.0;
    }
    pos.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let rank = libm::ceil(percentile / 100.0 * pos.len() as f64) as usize;
    pos[rank.clamp(1, pos.len()) - 1]
}

fn to_byte(t: f64) -> u8 {
    libm::round(255.0 * t) as u8
}

fn heat_rgb(t: f64) -> [u8; 3] {
    let r = (3.0 * t).min(1.0);
    let g = (3.0 * t - 1.0).clamp(0.0, 1.0);
    let b = (3.0 * t - 2.0).clamp(0.0, 1.0);
    [to_byte(r), to_byte(g), to_byte(b)]
}

fn upscale_nearest(src: &Raster, th: usize, tw: usize) -> Raster {
    if th == src.height && tw == src.width {
        return src.clone();
    }
    let mut out = Raster::new(tw, th, src.channels);
    for y in 0..th {
        let sy = y * src.height / th;
        for x in 0..tw {
            let sx = x * src.width / tw;
            out.put(x, y, src.get(sx, sy));
        }
    }
    out
}

pub const LABEL_STRIP_HEIGHT: usize = 11;
const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;

fn draw_label(out: &mut Raster, text: &str, x0: usize, width: usize, y0: usize, color: &[u8]) {
    let advance = GLYPH_W + 1;
    let text_w = text.chars().count() * advance;
    let start = x0 + width.saturating_sub(text_w) / 2;
    let mut x = start;
    for ch in text.chars() {
        let rows = glyph(ch.to_ascii_uppercase());
        for (dy, row) in rows.iter().enumerate() {
            for dx in 0..GLYPH_W {
                if row & (1 << (GLYPH_W - 1 - dx)) != 0 {
                    let px = x + dx;
                    let py = y0 + dy;
                    if px < x0 + width && px < out.width && py < out.height {
                        out.put(px, py, color);
                    }
                }
            }
        }
        x += advance;
    }
}

/// 5x7 bitmap glyphs (rows top to bottom, bit 4 is the left column) covering
/// digits, uppercase letters, and the punctuation the CLI emits in labels.
fn glyph(ch: char) -> [u8; GLYPH_H] {
    match ch {
        ' ' => [0, 0, 0, 0, 0, 0, 0],
        '0' => [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
        '1' => [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
        '2' => [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
        '3' => [0b01110, 0b10001, 0b00001, 0b00110, 0b00001, 0b10001, 0b01110],
        '4' => [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
        '5' => [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
        '6' => [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
        '7' => [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000],
        '8' => [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
        '9' => [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100],
        'A' => [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
        'B' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110],
        'C' => [0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110],
        'D' => [0b11100, 0b10010, 0b10001, 0b10001, 0b10001, 0b10010, 0b11100],
        'E' => [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111],
        'F' => [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000],
        'G' => [0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111],
        'H' => [0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
        'I' => [0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
        'J' => [0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100],
        'K' => [0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001],
        'L' => [0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111],
        'M' => [0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001],
        'N' => [0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001, 0b10001],
        'O' => [0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'P' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000],
        'Q' => [0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101],
        'R' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001],
        'S' => [0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110],
        'T' => [0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100],
        'U' => [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'V' => [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100],
        'W' => [0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010],
        'X' => [0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001],
        'Y' => [0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100, 0b00100],
        'Z' => [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111],
        '.' => [0, 0, 0, 0, 0, 0b00110, 0b00110],
        ',' => [0, 0, 0, 0, 0, 0b00100, 0b01000],
        ':' => [0, 0b00110, 0b00110, 0, 0b00110, 0b00110, 0],
        '-' => [0, 0, 0, 0b11111, 0, 0, 0],
        '_' => [0, 0, 0, 0, 0, 0, 0b11111],
        '/' => [0b00001, 0b00010, 0b00010, 0b00100, 0b01000, 0b01000, 0b10000],
        '(' => [0b00010, 0b00100, 0b01000, 0b01000, 0b01000, 0b00100, 0b00010],
        ')' => [0b01000, 0b00100, 0b00010, 0b00010, 0b00010, 0b00100, 0b01000],
        '+' => [0, 0b00100, 0b00100, 0b11111, 0b00100, 0b00100, 0],
        '=' => [0, 0, 0b11111, 0, 0b11111, 0, 0],
        '%' => [0b11001, 0b11010, 0b00010, 0b00100, 0b01000, 0b01011, 0b10011],
        _ => [0b11111, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11111],
    }
}
