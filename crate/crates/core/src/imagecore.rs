//! Rasters, file I/O, and the pixel operators shared by weak-label generation
//! and the pretext-task degradations.
//!
//! Real-valued rasters are stored as `f64` in `[0, 1]`, row-major with
//! channels interleaved. Files are 8-bit PNG (gray or RGB) or binary PGM/PPM.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{bail, Error, Result};

/// Rec.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

/// Continuous weak-label raster in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

fn check_unit(data: &[f64]) -> Result<()> {
    if let Some((i, v)) = data
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        bail!(Argument, "value {v} at index {i} lies outside [0, 1]");
    }
    Ok(())
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            bail!(Argument, "images have 1 or 3 channels, got {channels}");
        }
        if data.len() != height * width * channels {
            bail!(
                Shape,
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            );
        }
        check_unit(&data)?;
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image from `f(y, x, c)`; values are clamped into `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c).clamp(0.0, 1.0));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Extracts one channel as a single-channel image.
    pub fn channel(&self, c: usize) -> Image {
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Image::from_raw(self.height, self.width, 1, data)
    }

    fn from_planes(height: usize, width: usize, planes: &[Image]) -> Image {
        let channels = planes.len();
        let mut data = vec![0.0; height * width * channels];
        for (c, plane) in planes.iter().enumerate() {
            for (i, v) in plane.data.iter().enumerate() {
                data[i * channels + c] = *v;
            }
        }
        Image::from_raw(height, width, channels, data)
    }

    fn map_planes(&self, f: impl Fn(&Image) -> Image) -> Image {
        if self.channels == 1 {
            return f(self);
        }
        let planes: Vec<Image> = (0..self.channels).map(|c| f(&self.channel(c))).collect();
        Image::from_planes(planes[0].height, planes[0].width, &planes)
    }
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            bail!(
                Shape,
                "{height}x{width} mask needs {} values, got {}",
                height * width,
                data.len()
            );
        }
        if let Some(v) = data.iter().find(|v| **v > 1) {
            bail!(Argument, "mask values must be 0 or 1, found {v}");
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x) as u8);
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.data[y * self.width + x] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn same_dims(&self, other: &BinaryMask) -> bool {
        self.height == other.height && self.width == other.width
    }
}

impl TextureMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            bail!(
                Shape,
                "{height}x{width} texture map needs {} values, got {}",
                height * width,
                data.len()
            );
        }
        check_unit(&data)?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }

    /// Views the map as a single-channel image.
    pub fn to_image(&self) -> Image {
        Image::from_raw(self.height, self.width, 1, self.data.clone())
    }
}

/// Anything that can be written as an 8-bit raster.
pub trait Raster {
    fn dims(&self) -> (usize, usize, usize);
    fn to_bytes(&self) -> Vec<u8>;
}

fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

impl Raster for Image {
    fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }
}

impl Raster for TextureMap {
    fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, 1)
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }
}

impl Raster for BinaryMask {
    fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, 1)
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| v * 255).collect()
    }
}

fn decode(path: &Path) -> Result<DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let reader = image::ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png | ImageFormat::Pnm) => {}
        Some(other) => bail!(Format, "{}: unsupported format {other:?}", path.display()),
        None => bail!(Format, "{}: unrecognized file signature", path.display()),
    }
    reader
        .decode()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Reads an 8-bit gray or RGB raster; alpha is dropped with a warning.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, bytes) = match img {
        DynamicImage::ImageLuma8(buf) => (1, buf.into_raw()),
        DynamicImage::ImageRgb8(buf) => (3, buf.into_raw()),
        DynamicImage::ImageLumaA8(_) => {
            log::warn!("{}: dropping alpha channel", path.display());
            (1, img.to_luma8().into_raw())
        }
        DynamicImage::ImageRgba8(_) => {
            log::warn!("{}: dropping alpha channel", path.display());
            (3, img.to_rgb8().into_raw())
        }
        other => bail!(
            Format,
            "{}: only 8-bit gray/RGB rasters are supported, got {:?}",
            path.display(),
            other.color()
        ),
    };
    let data = bytes.into_iter().map(|b| b as f64 / 255.0).collect();
    Ok(Image::from_raw(h, w, channels, data))
}

/// Reads a mask file; any gray value `>= 128` is foreground.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let img = to_grayscale(&load_image(path)?);
    let data = img.data.iter().map(|&v| quantize(v) >= 128).map(u8::from).collect();
    Ok(BinaryMask {
        height: img.height,
        width: img.width,
        data,
    })
}

/// Writes `raster` as an 8-bit PNG.
pub fn save_image(raster: &impl Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w, c) = raster.dims();
    let color = if c == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    image::save_buffer_with_format(
        path,
        &raster.to_bytes(),
        w as u32,
        h as u32,
        color,
        ImageFormat::Png,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })
}

/// Rec.601 luma; single-channel input passes through unchanged.
pub fn to_grayscale(img: &Image) -> Image {
    if img.channels == 1 {
        return img.clone();
    }
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| (LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2]).clamp(0.0, 1.0))
        .collect();
    Image::from_raw(img.height, img.width, 1, data)
}

fn bilinear_taps(out: usize, inp: usize) -> Vec<(usize, usize, f64)> {
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(inp - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resampling with half-pixel-centred coordinates.
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        bail!(Argument, "resize target {out_h}x{out_w} has a zero dimension");
    }
    let ys = bilinear_taps(out_h, img.height);
    let xs = bilinear_taps(out_w, img.width);
    let c = img.channels;
    let mut data = Vec::with_capacity(out_h * out_w * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let top = img.get(y0, x0, ch) * (1.0 - fx) + img.get(y0, x1, ch) * fx;
                let bot = img.get(y1, x0, ch) * (1.0 - fx) + img.get(y1, x1, ch) * fx;
                data.push((top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0));
            }
        }
    }
    Ok(Image::from_raw(out_h, out_w, c, data))
}

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
pub fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

/// Sampled Gaussian of radius `ceil(3 sigma)`, normalised to unit sum.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        bail!(Argument, "gaussian sigma must be positive, got {sigma}");
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    Ok(k)
}

fn blur_plane(src: &Image, kernel: &[f64]) -> Image {
    let (h, w) = (src.height, src.width);
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        let row = &src.data[y * w..(y + 1) * w];
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, wt)| wt * row[reflect101(x as isize + k as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let v: f64 = kernel
                .iter()
                .enumerate()
                .map(|(k, wt)| wt * tmp[reflect101(y as isize + k as isize - r, h) * w + x])
                .sum();
            out[y * w + x] = v.clamp(0.0, 1.0);
        }
    }
    Image::from_raw(h, w, 1, out)
}

/// Separable Gaussian blur with reflect-101 borders, applied per channel.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    let kernel = gaussian_kernel(sigma)?;
    Ok(img.map_planes(|p| blur_plane(p, &kernel)))
}

/// Adds clamped `N(0, noise_sigma^2)` noise drawn from a ChaCha8 stream seeded by `seed`.
pub fn add_gaussian_noise(img: &Image, noise_sigma: f64, seed: u64) -> Result<Image> {
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        bail!(Argument, "noise sigma must be non-negative, got {noise_sigma}");
    }
    if noise_sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::Argument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = img
        .data
        .iter()
        .map(|&v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0))
        .collect();
    Ok(Image::from_raw(img.height, img.width, img.channels, data))
}

/// Bilinear downscale by `factor` followed by bilinear upscale to the original size.
pub fn down_up_sample(img: &Image, factor: usize) -> Result<Image> {
    if factor < 2 {
        bail!(Argument, "down/up factor must be at least 2, got {factor}");
    }
    if img.height < factor || img.width < factor {
        bail!(
            Argument,
            "{}x{} image is smaller than factor {factor}",
            img.height,
            img.width
        );
    }
    let small = resize_bilinear(img, img.height / factor, img.width / factor)?;
    resize_bilinear(&small, img.height, img.width)
}
