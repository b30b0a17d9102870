//! Floating-point raster images and 8-bit PNG I/O.
//!
//! All pixel processing happens on `Image`: H×W×C `f64` in [0,1], row-major
//! HWC. PNGs are the only on-disk format; values map `v/255` on load and
//! `round(v*255)` on save, so a save/load round trip of quantized data is
//! exact.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(h: usize, w: usize, c: usize) -> Self {
        Image { h, w, c, data: vec![0.0; h * w * c] }
    }

    pub fn from_data(h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w * c {
            return Err(Error::shape(
                "image::from_data",
                format!("{h}x{w}x{c} needs {} values, got {}", h * w * c, data.len()),
            ));
        }
        Ok(Image { h, w, c, data })
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, ch: usize) -> f64 {
        self.data[(y * self.w + x) * self.c + ch]
    }

    #[inline]
    pub fn at_mut(&mut self, y: usize, x: usize, ch: usize) -> &mut f64 {
        &mut self.data[(y * self.w + x) * self.c + ch]
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Reflect-pad on the bottom/right so both spatial dims become multiples
    /// of `m`. Returns the padded image and the original size.
    pub fn pad_to_multiple(&self, m: usize) -> (Image, (usize, usize)) {
        let h2 = self.h.div_ceil(m) * m;
        let w2 = self.w.div_ceil(m) * m;
        if h2 == self.h && w2 == self.w {
            return (self.clone(), (self.h, self.w));
        }
        let mut out = Image::new(h2, w2, self.c);
        for y in 0..h2 {
            let sy = reflect_index(y, self.h);
            for x in 0..w2 {
                let sx = reflect_index(x, self.w);
                for ch in 0..self.c {
                    *out.at_mut(y, x, ch) = self.at(sy, sx, ch);
                }
            }
        }
        (out, (self.h, self.w))
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Image> {
        if y0 + h > self.h || x0 + w > self.w {
            return Err(Error::shape(
                "image::crop",
                format!("{h}x{w}+{y0}+{x0} exceeds {}x{}", self.h, self.w),
            ));
        }
        let mut out = Image::new(h, w, self.c);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..self.c {
                    *out.at_mut(y, x, ch) = self.at(y0 + y, x0 + x, ch);
                }
            }
        }
        Ok(out)
    }

    pub fn hflip(&self) -> Image {
        let mut out = Image::new(self.h, self.w, self.c);
        for y in 0..self.h {
            for x in 0..self.w {
                for ch in 0..self.c {
                    *out.at_mut(y, x, ch) = self.at(y, self.w - 1 - x, ch);
                }
            }
        }
        out
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

fn reflect_index(i: usize, n: usize) -> usize {
    if i < n {
        return i;
    }
    // mirror without repeating the edge pixel; degenerate n=1 maps to 0
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let j = i % period;
    if j < n {
        j
    } else {
        period - j
    }
}

/// Write an 8-bit PNG (grayscale for c=1, RGB for c=3) atomically: the file
/// appears only after a successful full write.
pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    let color = match img.c {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => {
            return Err(Error::InvalidArgument(format!(
                "png output supports 1 or 3 channels, got {c}"
            )))
        }
    };
    let tmp = tmp_path(path);
    {
        let file = fs::File::create(&tmp)?;
        let wtr = BufWriter::new(file);
        let mut enc = png::Encoder::new(wtr, img.w as u32, img.h as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
        writer
            .write_image_data(&img.to_u8())
            .map_err(|e| Error::Png(e.to_string()))?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_png(path: &Path) -> Result<Image> {
    let file = fs::File::open(path)?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| Error::Png("image too large".into()))?];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Png(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Png(format!("{path:?}: only 8-bit PNGs are supported")));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    if w == 0 || h == 0 {
        return Err(Error::Png(format!("{path:?}: zero-sized image")));
    }
    let bytes = &buf[..info.buffer_size()];
    let (c, data): (usize, Vec<f64>) = match info.color_type {
        png::ColorType::Grayscale => (1, bytes.iter().map(|b| *b as f64 / 255.0).collect()),
        png::ColorType::Rgb => (3, bytes.iter().map(|b| *b as f64 / 255.0).collect()),
        png::ColorType::Rgba => (
            3,
            bytes
                .chunks_exact(4)
                .flat_map(|px| px[..3].iter().map(|b| *b as f64 / 255.0))
                .collect(),
        ),
        png::ColorType::GrayscaleAlpha => (
            1,
            bytes
                .chunks_exact(2)
                .map(|px| px[0] as f64 / 255.0)
                .collect(),
        ),
        other => return Err(Error::Png(format!("{path:?}: unsupported color type {other:?}"))),
    };
    Image::from_data(h, w, c, data)
}

/// Atomic byte-file write (temp file then rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn tmp_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp~");
    path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_exact_after_quantization() {
        let dir = std::env::temp_dir().join("mvksr_img_test");
        fs::create_dir_all(&dir).unwrap();
        let mut img = Image::new(5, 7, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = ((i * 37) % 256) as f64 / 255.0;
        }
        let p = dir.join("rt.png");
        save_png(&img, &p).unwrap();
        let back = load_png(&p).unwrap();
        assert_eq!(back.h, 5);
        assert_eq!(back.w, 7);
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pad_to_multiple_reflects_and_restores() {
        let mut img = Image::new(5, 3, 1);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = i as f64 / 20.0;
        }
        let (padded, (h, w)) = img.pad_to_multiple(4);
        assert_eq!(padded.h % 4, 0);
        assert_eq!(padded.w % 4, 0);
        let cropped = padded.crop(0, 0, h, w).unwrap();
        assert_eq!(cropped, img);
        // reflected row: row 5 mirrors row 3
        assert_eq!(padded.at(5, 0, 0), img.at(3, 0, 0));
    }

    #[test]
    fn hflip_is_involution() {
        let mut img = Image::new(3, 4, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i % 9) as f64 / 9.0;
        }
        assert_eq!(img.hflip().hflip(), img);
    }
}
