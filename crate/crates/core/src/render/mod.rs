//! Rasterizers, the sketch observation model and image metrics.

mod csg;
mod sketch;
mod svg;

use std::io::Cursor;
use std::path::Path;

use thiserror::Error;

pub use csg::{render_csg2d, CsgScene, CsgShape, CSG_SCALE};
pub use sketch::sketch_render;
pub use svg::{render_tinysvg, Color, PALETTE, SVG_SCALE};

pub const WIDTH: usize = 128;
pub const HEIGHT: usize = 128;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("canvas shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("metric needs a single-channel canvas, got {0} channels")]
    NotGray(usize),
    #[error("png: {0}")]
    Png(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("program is not a {0} scene: {1}")]
    Program(&'static str, String),
}

/// Row-major image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Canvas {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Canvas {
    pub fn new(width: usize, height: usize, channels: usize, fill: f32) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Canvas {
            width,
            height,
            channels,
            data: vec![fill; width * height * channels],
        }
    }

    /// 128×128 single-channel canvas of zeros.
    pub fn gray() -> Self {
        Canvas::new(WIDTH, HEIGHT, 1, 0.0)
    }

    /// 128×128 RGB canvas filled with white.
    pub fn white_rgb() -> Self {
        Canvas::new(WIDTH, HEIGHT, 3, 1.0)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn set(&mut self, x: usize, y: usize, value: &[f32]) {
        let i = (y * self.width + x) * self.channels;
        self.data[i..i + self.channels].copy_from_slice(value);
    }

    /// Pixels with any nonzero channel (meaningful for ink-on-black canvases).
    pub fn count_nonzero(&self) -> usize {
        self.data
            .chunks(self.channels)
            .filter(|px| px.iter().any(|&v| v > 0.0))
            .count()
    }

    /// Values quantized to 8 bits, row-major, channels interleaved.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_bytes(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Self {
        assert_eq!(bytes.len(), width * height * channels);
        Canvas {
            width,
            height,
            channels,
            data: bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        }
    }

    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(if self.channels == 1 {
                png::ColorType::Grayscale
            } else {
                png::ColorType::Rgb
            });
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().expect("in-memory png header");
            writer
                .write_image_data(&self.to_bytes())
                .expect("in-memory png data");
        }
        out
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self, RenderError> {
        let mut decoder = png::Decoder::new(Cursor::new(bytes));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder.read_info().map_err(|e| RenderError::Png(e.to_string()))?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| RenderError::Png(e.to_string()))?;
        let (w, h) = (info.width as usize, info.height as usize);
        let bytes = &buf[..info.buffer_size()];
        let canvas = match info.color_type {
            png::ColorType::Grayscale => Canvas::from_bytes(w, h, 1, bytes),
            png::ColorType::Rgb => Canvas::from_bytes(w, h, 3, bytes),
            png::ColorType::GrayscaleAlpha => {
                let g: Vec<u8> = bytes.chunks(2).map(|c| c[0]).collect();
                Canvas::from_bytes(w, h, 1, &g)
            }
            png::ColorType::Rgba => {
                let rgb: Vec<u8> = bytes.chunks(4).flat_map(|c| [c[0], c[1], c[2]]).collect();
                Canvas::from_bytes(w, h, 3, &rgb)
            }
            other => return Err(RenderError::Png(format!("unsupported color type {other:?}"))),
        };
        Ok(canvas)
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<(), RenderError> {
        std::fs::write(path, self.to_png())?;
        Ok(())
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<Self, RenderError> {
        Self::from_png(&std::fs::read(path)?)
    }

    /// LZ4 frame size of the raw 8-bit pixel buffer.
    pub fn compressed_size(&self) -> usize {
        use std::io::Write;
        let mut enc = lz4_flex::frame::FrameEncoder::new(Vec::new());
        enc.write_all(&self.to_bytes()).expect("lz4 into memory");
        enc.finish().expect("lz4 into memory").len()
    }
}

fn same_shape(a: &Canvas, b: &Canvas) -> Result<(), RenderError> {
    if a.shape() != b.shape() {
        return Err(RenderError::ShapeMismatch(a.shape(), b.shape()));
    }
    Ok(())
}

/// Intersection over union of two binary single-channel canvases (values
/// above one half count as set). Two empty canvases have IoU 1.
pub fn iou(a: &Canvas, b: &Canvas) -> Result<f64, RenderError> {
    same_shape(a, b)?;
    if a.channels != 1 {
        return Err(RenderError::NotGray(a.channels));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let (x, y) = (x > 0.5, y > 0.5);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

pub const PIXEL_TOLERANCE: f32 = 0.005;

/// Fraction of pixels whose largest channel difference is at most `tol`.
pub fn pixel_match_fraction(a: &Canvas, b: &Canvas, tol: f32) -> Result<f64, RenderError> {
    same_shape(a, b)?;
    let c = a.channels;
    let matched = a
        .data
        .chunks(c)
        .zip(b.data.chunks(c))
        .filter(|(p, q)| p.iter().zip(q.iter()).all(|(x, y)| (x - y).abs() <= tol))
        .count();
    Ok(matched as f64 / (a.width * a.height) as f64)
}

pub const SOLVE_THRESHOLD: f64 = 0.99;
