//! Depth maps and RGB images, with their PNG encodings.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use super::GeometryError;

/// Row-major depth in meters; 0 marks a missing measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, GeometryError> {
        if values.len() != width * height {
            return Err(GeometryError::DimensionMismatch(format!(
                "depth map {width}×{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        Ok(DepthMap { width, height, values })
    }

    pub fn constant(width: usize, height: usize, depth: f64) -> Self {
        DepthMap {
            width,
            height,
            values: vec![depth; width * height],
        }
    }

    pub fn at(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Rounds every depth to whole millimeters, the resolution of the PNG form.
    pub fn quantize_mm(&mut self) {
        for v in &mut self.values {
            *v = (*v * 1000.0).round().clamp(0.0, u16::MAX as f64) / 1000.0;
        }
    }

    /// 16-bit single-channel PNG in millimeters.
    pub fn write_png(&self, path: &Path) -> Result<(), GeometryError> {
        let mm: Vec<u8> = self
            .values
            .iter()
            .flat_map(|&v| ((v * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16).to_be_bytes())
            .collect();
        write_png(
            path,
            self.width,
            self.height,
            png::ColorType::Grayscale,
            png::BitDepth::Sixteen,
            &mm,
        )
    }

    pub fn read_png(path: &Path) -> Result<Self, GeometryError> {
        let (w, h, color, depth, bytes) = read_png(path)?;
        if color != png::ColorType::Grayscale || depth != png::BitDepth::Sixteen {
            return Err(GeometryError::FormatViolation(format!(
                "depth PNG must be 16-bit grayscale, got {color:?} {depth:?}"
            )));
        }
        let values = bytes
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 1000.0)
            .collect();
        DepthMap::new(w, h, values)
    }
}

/// Planar RGB in [0, 1], indexed (channel, row, col).
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, GeometryError> {
        if values.len() != 3 * width * height {
            return Err(GeometryError::DimensionMismatch(format!(
                "RGB image {width}×{height} needs {} values, got {}",
                3 * width * height,
                values.len()
            )));
        }
        Ok(RgbImage { width, height, values })
    }

    /// Snaps values to the 8-bit levels `k / 255` of the PNG form.
    pub fn quantize_u8(&mut self) {
        for v in &mut self.values {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }

    pub fn write_png(&self, path: &Path) -> Result<(), GeometryError> {
        let plane = self.width * self.height;
        let mut bytes = Vec::with_capacity(3 * plane);
        for p in 0..plane {
            for c in 0..3 {
                bytes.push((self.values[c * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        write_png(
            path,
            self.width,
            self.height,
            png::ColorType::Rgb,
            png::BitDepth::Eight,
            &bytes,
        )
    }

    pub fn read_png(path: &Path) -> Result<Self, GeometryError> {
        let (w, h, color, depth, bytes) = read_png(path)?;
        if color != png::ColorType::Rgb || depth != png::BitDepth::Eight {
            return Err(GeometryError::FormatViolation(format!(
                "RGB PNG must be 8-bit RGB, got {color:?} {depth:?}"
            )));
        }
        let plane = w * h;
        let mut values = vec![0.0; 3 * plane];
        for (p, px) in bytes.chunks_exact(3).enumerate() {
            for c in 0..3 {
                values[c * plane + p] = px[c] as f64 / 255.0;
            }
        }
        RgbImage::new(w, h, values)
    }
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    data: &[u8],
) -> Result<(), GeometryError> {
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut writer = enc
        .write_header()
        .map_err(|e| GeometryError::FormatViolation(format!("PNG encode: {e}")))?;
    writer
        .write_image_data(data)
        .map_err(|e| GeometryError::FormatViolation(format!("PNG encode: {e}")))?;
    writer
        .finish()
        .map_err(|e| GeometryError::FormatViolation(format!("PNG encode: {e}")))?;
    Ok(())
}

type Decoded = (usize, usize, png::ColorType, png::BitDepth, Vec<u8>);

fn read_png(path: &Path) -> Result<Decoded, GeometryError> {
    let file = std::io::BufReader::new(File::open(path)?);
    let decoder = png::Decoder::new(file);
    let mut reader = decoder
        .read_info()
        .map_err(|e| GeometryError::FormatViolation(format!("PNG decode {}: {e}", path.display())))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| GeometryError::FormatViolation("PNG too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| GeometryError::FormatViolation(format!("PNG decode {}: {e}", path.display())))?;
    buf.truncate(info.buffer_size());
    Ok((
        info.width as usize,
        info.height as usize,
        info.color_type,
        info.bit_depth,
        buf,
    ))
}
