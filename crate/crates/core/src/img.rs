//! Square RGB images with 8-bit channels.
//!
//! Rendering produces integer pixels so PNG round-trips are bit-exact; the
//! model consumes the normalized `[0,1]` view.

use crate::error::{Error, Result};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub size: usize,
    /// Row-major RGB, `3 * size * size` bytes.
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn filled(size: usize, color: [u8; 3]) -> RgbImage {
        let mut pixels = Vec::with_capacity(size * size * 3);
        for _ in 0..size * size {
            pixels.extend_from_slice(&color);
        }
        RgbImage { size, pixels }
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, color: [u8; 3]) {
        let i = (y * self.size + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&color);
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.size + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Channel values scaled to `[0,1]`.
    pub fn to_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&b| b as f64 / 255.0).collect()
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let w = std::io::BufWriter::new(file);
        let mut enc = png::Encoder::new(w, self.size as u32, self.size as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Corpus(format!("png header: {e}")))?;
        writer
            .write_image_data(&self.pixels)
            .map_err(|e| Error::Corpus(format!("png write: {e}")))?;
        Ok(())
    }

    pub fn read_png(path: &Path) -> Result<RgbImage> {
        let file = std::fs::File::open(path)?;
        let decoder = png::Decoder::new(std::io::BufReader::new(file));
        let mut reader = decoder
            .read_info()
            .map_err(|e| Error::Corpus(format!("png read: {e}")))?;
        let mut buf = vec![0u8; reader.output_buffer_size()];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Corpus(format!("png frame: {e}")))?;
        if info.width != info.height {
            return Err(Error::Corpus("expected a square image".into()));
        }
        if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
            return Err(Error::Corpus("expected 8-bit RGB".into()));
        }
        buf.truncate(info.buffer_size());
        Ok(RgbImage {
            size: info.width as usize,
            pixels: buf,
        })
    }
}
