//! RGB float images with resampling and PNG I/O, plus binary masks.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Interleaved RGB image, row-major, channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::invalid(format!(
                "image {width}x{height} needs {} values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn black(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn clamp01(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    /// Bilinear sample at continuous pixel-center coordinates; `None` outside
    /// the image.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<[f64; 3]> {
        let (w, h) = (self.width as f64, self.height as f64);
        if x < -0.5 || y < -0.5 || x > w - 0.5 || y > h - 0.5 {
            return None;
        }
        let xc = x.clamp(0.0, w - 1.0);
        let yc = y.clamp(0.0, h - 1.0);
        let (x0, y0) = (xc.floor() as usize, yc.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (xc - x0 as f64, yc - y0 as f64);
        let mut out = [0.0; 3];
        let (a, b, c, d) = (self.pixel(x0, y0), self.pixel(x1, y0), self.pixel(x0, y1), self.pixel(x1, y1));
        for ch in 0..3 {
            let top = a[ch] * (1.0 - fx) + b[ch] * fx;
            let bot = c[ch] * (1.0 - fx) + d[ch] * fx;
            out[ch] = top * (1.0 - fy) + bot * fy;
        }
        Some(out)
    }

    /// Bilinear resize with pixel-center alignment. Same-size resizes return
    /// an exact copy.
    pub fn resize(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = Image::black(width, height);
        for y in 0..height {
            for x in 0..width {
                let src_x = (x as f64 + 0.5) * sx - 0.5;
                let src_y = (y as f64 + 0.5) * sy - 0.5;
                let rgb = self
                    .sample_bilinear(src_x.clamp(0.0, self.width as f64 - 1.0), src_y.clamp(0.0, self.height as f64 - 1.0))
                    .expect("clamped inside");
                out.set_pixel(x, y, rgb);
            }
        }
        out
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Image {
        let mut out = Image::black(width, height);
        for y in 0..height {
            for x in 0..width {
                out.set_pixel(x, y, self.pixel(x0 + x, y0 + y));
            }
        }
        out
    }

    pub fn channel_mean(&self, ch: usize) -> f64 {
        self.data.iter().skip(ch).step_by(3).sum::<f64>() / (self.width * self.height) as f64
    }

    pub fn channel_std(&self, ch: usize) -> f64 {
        let m = self.channel_mean(ch);
        let var = self.data.iter().skip(ch).step_by(3).map(|v| (v - m).powi(2)).sum::<f64>()
            / (self.width * self.height) as f64;
        var.sqrt()
    }

    /// Mean absolute 4-neighbour Laplacian over interior pixels and all
    /// channels; a simple high-frequency energy measure.
    pub fn mean_abs_laplacian(&self) -> f64 {
        let (w, h) = (self.width, self.height);
        if w < 3 || h < 3 {
            return 0.0;
        }
        let mut acc = 0.0;
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                for ch in 0..3 {
                    let at = |xx: usize, yy: usize| self.data[(yy * w + xx) * 3 + ch];
                    acc += (4.0 * at(x, y) - at(x - 1, y) - at(x + 1, y) - at(x, y - 1) - at(x, y + 1)).abs();
                }
            }
        }
        acc / ((w - 2) * (h - 2) * 3) as f64
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / self.data.len() as f64
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Image> {
        Image::new(width, height, bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let img_err = |e: png::EncodingError| Error::Image { path: path.to_path_buf(), message: e.to_string() };
        let mut writer = enc.write_header().map_err(img_err)?;
        writer.write_image_data(&self.to_rgb8()).map_err(img_err)?;
        writer.finish().map_err(img_err)?;
        Ok(())
    }

    /// Loads 8-bit or 16-bit grayscale/RGB/RGBA PNGs as RGB.
    pub fn load_png(path: &Path) -> Result<Image> {
        let img_err = |m: String| Error::Image { path: path.to_path_buf(), message: m };
        let file = File::open(path).map_err(|e| img_err(e.to_string()))?;
        let mut dec = png::Decoder::new(BufReader::new(file));
        dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = dec.read_info().map_err(|e| img_err(e.to_string()))?;
        let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| img_err("image too large".into()))?];
        let info = reader.next_frame(&mut buf).map_err(|e| img_err(e.to_string()))?;
        let (w, h) = (info.width as usize, info.height as usize);
        let bytes = &buf[..info.buffer_size()];
        let rgb: Vec<u8> = match info.color_type {
            png::ColorType::Rgb => bytes.to_vec(),
            png::ColorType::Rgba => bytes.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            png::ColorType::Grayscale => bytes.iter().flat_map(|&g| [g, g, g]).collect(),
            png::ColorType::GrayscaleAlpha => bytes.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
            other => return Err(img_err(format!("unsupported color type {other:?}"))),
        };
        Image::from_rgb8(w, h, &rgb)
    }
}

/// Binary image mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::empty(width, height);
        for y in 0..height {
            for x in 0..width {
                m.bits[y * width + x] = f(x, y);
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Euclidean dilation by `radius` pixels.
    pub fn dilate(&self, radius: f64) -> Mask {
        let r = radius.ceil() as isize;
        Mask::from_fn(self.width, self.height, |x, y| {
            for dy in -r..=r {
                for dx in -r..=r {
                    if ((dx * dx + dy * dy) as f64) > radius * radius {
                        continue;
                    }
                    let (xx, yy) = (x as isize + dx, y as isize + dy);
                    if xx >= 0 && yy >= 0 && (xx as usize) < self.width && (yy as usize) < self.height && self.get(xx as usize, yy as usize) {
                        return true;
                    }
                }
            }
            false
        })
    }
}

/// Stacks equally sized images into an NCHW tensor.
pub fn to_nchw(images: &[&Image]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::invalid("empty image batch"))?;
    let (w, h) = (first.width, first.height);
    let plane = w * h;
    let mut data = vec![0.0; images.len() * 3 * plane];
    for (n, img) in images.iter().enumerate() {
        if img.width != w || img.height != h {
            return Err(Error::invalid("images in a batch must share one size"));
        }
        for (p, px) in img.data.chunks_exact(3).enumerate() {
            for ch in 0..3 {
                data[(n * 3 + ch) * plane + p] = px[ch];
            }
        }
    }
    Tensor::new(&[images.len(), 3, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_at_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = Image::from_rgb8(2, 2, &[0, 10, 20, 30, 40, 50, 60, 70, 80, 255, 128, 1]).unwrap();
        img.save_png(&path).unwrap();
        assert_eq!(Image::load_png(&path).unwrap(), img);
    }

    #[test]
    fn nchw_layout() {
        let img = Image::new(2, 1, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let t = to_nchw(&[&img]).unwrap();
        assert_eq!(t.shape(), &[1, 3, 1, 2]);
        assert_eq!(t.data(), &[0.1, 0.4, 0.2, 0.5, 0.3, 0.6]);
    }

    #[test]
    fn dilation_grows_mask() {
        let m = Mask::from_fn(9, 9, |x, y| x == 4 && y == 4);
        let d = m.dilate(2.0);
        assert!(m.is_subset_of(&d));
        assert_eq!(d.count(), 13);
    }
}
