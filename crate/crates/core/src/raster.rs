//! Raster containers: 8-bit RGB images, binary masks and raw float intensities.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interleaved 8-bit RGB image, row-major.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::domain(format!(
                "rgb buffer of {} bytes does not match {width}x{height}x3",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    /// Copies a `w`×`h` window starting at (`x0`, `y0`).
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::domain(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut out = Image::new(w, h);
        for y in 0..h {
            let src = ((y0 + y) * self.width + x0) * 3;
            let dst = y * w * 3;
            out.data[dst..dst + w * 3].copy_from_slice(&self.data[src..src + w * 3]);
        }
        Ok(out)
    }

    /// Pastes `tile` with its top-left corner at (`x0`, `y0`).
    pub fn blit(&mut self, tile: &Image, x0: usize, y0: usize) -> Result<()> {
        if x0 + tile.width > self.width || y0 + tile.height > self.height {
            return Err(Error::domain("blit outside destination"));
        }
        for y in 0..tile.height {
            let src = y * tile.width * 3;
            let dst = ((y0 + y) * self.width + x0) * 3;
            self.data[dst..dst + tile.width * 3].copy_from_slice(&tile.data[src..src + tile.width * 3]);
        }
        Ok(())
    }

    /// Bilinear resize with pixel-center alignment. Same-size resize is a copy.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Image {
        if (width, height) == self.dims() {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = Image::new(width, height);
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f64;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f64;
                let (a, b, c, d) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
                let mut px = [0u8; 3];
                for ch in 0..3 {
                    let top = a[ch] as f64 * (1.0 - wx) + b[ch] as f64 * wx;
                    let bot = c[ch] as f64 * (1.0 - wx) + d[ch] as f64 * wx;
                    px[ch] = to_u8(top * (1.0 - wy) + bot * wy);
                }
                out.put(x, y, px);
            }
        }
        out
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = open_image(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Image::from_raw(w as usize, h as usize, img.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer length checked at construction");
        buf.save(path).map_err(|e| Error::Format {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }
}

#[inline]
pub(crate) fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(Error::MissingFiles(vec![path.to_owned()]));
    }
    image::open(path).map_err(|e| Error::Format {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

/// Binary mask, row-major.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::domain(format!(
                "mask buffer of {} does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    /// Foreground pixel coordinates `(x, y)` in row-major order.
    pub fn foreground(&self) -> Vec<(usize, usize)> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(|(i, _)| (i % self.width, i / self.width))
            .collect()
    }

    /// Nearest-neighbour resize with pixel-center sampling.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Mask {
        if (width, height) == self.dims() {
            return self.clone();
        }
        Mask::from_fn(width, height, |x, y| {
            let sx = (((x as f64 + 0.5) * self.width as f64 / width as f64) as usize).min(self.width - 1);
            let sy = (((y as f64 + 0.5) * self.height as f64 / height as f64) as usize).min(self.height - 1);
            self.get(sx, sy)
        })
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Mask {
        Mask::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y))
    }

    /// Loads a single-channel mask; a pixel is foreground when it equals
    /// `class_id` or 255.
    pub fn load_png(path: &Path, class_id: u8) -> Result<Mask> {
        let img = open_image(path)?.to_luma8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| v == class_id || v == 255).collect();
        Mask::from_vec(w as usize, h as usize, data)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let raw = self.data.iter().map(|&v| if v { 255 } else { 0 }).collect();
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length checked at construction");
        buf.save(path).map_err(|e| Error::Format {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }
}

/// Imaging modality; CT and MR intensities are min-max rescaled on ingest.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Ct,
    Mr,
    #[default]
    Rgb,
}

/// Unnormalized intensities with 1 or 3 interleaved channels.
#[derive(Clone, PartialEq, Debug)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::domain(format!("unsupported channel count {channels}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::domain("empty raw image"));
        }
        if data.len() != width * height * channels {
            return Err(Error::domain("raw buffer size does not match dimensions"));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_image(img: &Image) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            channels: 3,
            data: img.as_bytes().iter().map(|&v| v as f64).collect(),
        }
    }

    /// Loads a PNG keeping grayscale files single-channel.
    pub fn load_png(path: &Path) -> Result<RawImage> {
        let img = open_image(path)?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        if img.color().channel_count() <= 2 {
            let data = img.to_luma16().into_raw().into_iter().map(|v| v as f64).collect();
            RawImage::new(w, h, 1, data)
        } else {
            let data = img.to_rgb8().into_raw().into_iter().map(|v| v as f64).collect();
            RawImage::new(w, h, 3, data)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_and_blit_are_inverse() {
        let img = Image::from_fn(6, 4, |x, y| [x as u8, y as u8, (x * y) as u8]);
        let tile = img.crop(2, 1, 3, 2).unwrap();
        assert_eq!(tile.get(0, 0), img.get(2, 1));
        let mut canvas = Image::new(6, 4);
        canvas.blit(&tile, 2, 1).unwrap();
        assert_eq!(canvas.get(4, 2), img.get(4, 2));
        assert!(img.crop(5, 0, 3, 1).is_err());
    }

    #[test]
    fn same_size_resize_is_identity() {
        let img = Image::from_fn(7, 5, |x, y| [(x * 30) as u8, (y * 40) as u8, 9]);
        assert_eq!(img.resize_bilinear(7, 5), img);
        let m = Mask::from_fn(7, 5, |x, y| x > y);
        assert_eq!(m.resize_nearest(7, 5), m);
    }

    #[test]
    fn nearest_upscale_replicates() {
        let m = Mask::from_fn(2, 2, |x, y| x == 1 && y == 0);
        let up = m.resize_nearest(4, 4);
        assert_eq!(up.count(), 4);
        assert!(up.get(2, 0) && up.get(3, 1) && !up.get(1, 0));
    }

    #[test]
    fn raw_image_rejects_bad_shapes() {
        assert!(RawImage::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(RawImage::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(RawImage::new(0, 2, 1, vec![]).is_err());
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(5, 3, |x, y| [x as u8 * 50, y as u8 * 80, 7]);
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        assert_eq!(Image::load_png(&p).unwrap(), img);
        let m = Mask::from_fn(5, 3, |x, _| x % 2 == 0);
        let q = dir.path().join("m.png");
        m.save_png(&q).unwrap();
        assert_eq!(Mask::load_png(&q, 1).unwrap(), m);
        assert!(matches!(Image::load_png(&dir.path().join("nope.png")), Err(Error::MissingFiles(_))));
    }
}
