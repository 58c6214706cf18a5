//! Weak-label texture maps: the clamped magnitude of the Gaussian high-pass
//! residual of the luma channel, zeroed outside the face region.

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::imagecore::{gaussian_blur, to_grayscale, BinaryMask, Image, TextureMap};

/// Ellipse semi-axes of the fallback face region, as fractions of width and height.
pub const FALLBACK_SEMI_AXES: (f64, f64) = (0.42, 0.46);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextureConfig {
    pub sigma: f64,
    pub scale: f64,
    pub binarize_threshold: Option<f64>,
}

impl Default for TextureConfig {
    fn default() -> Self {
        Self {
            sigma: 2.0,
            scale: 0.2,
            binarize_threshold: None,
        }
    }
}

impl TextureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            bail!(Argument, "texture sigma must be positive, got {}", self.sigma);
        }
        if !(self.scale > 0.0) {
            bail!(Argument, "texture scale must be positive, got {}", self.scale);
        }
        if let Some(t) = self.binarize_threshold {
            check_threshold(t)?;
        }
        Ok(())
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t < 1.0) {
        bail!(Argument, "binarize threshold must lie in (0, 1), got {t}");
    }
    Ok(())
}

/// `clamp(|g - blur(g)| / scale, 0, 1)` on the luma channel `g`.
pub fn extract_texture(img: &Image, cfg: &TextureConfig) -> Result<TextureMap> {
    cfg.validate()?;
    let gray = to_grayscale(img);
    let smooth = gaussian_blur(&gray, cfg.sigma)?;
    let data = gray
        .data()
        .iter()
        .zip(smooth.data())
        .map(|(g, s)| ((g - s).abs() / cfg.scale).clamp(0.0, 1.0))
        .collect();
    Ok(TextureMap::from_raw(gray.height(), gray.width(), data))
}

pub fn apply_face_mask(t: &TextureMap, face: &BinaryMask) -> Result<TextureMap> {
    if t.height() != face.height() || t.width() != face.width() {
        bail!(
            Argument,
            "texture map is {}x{} but face mask is {}x{}",
            t.height(),
            t.width(),
            face.height(),
            face.width()
        );
    }
    let data = t
        .data()
        .iter()
        .zip(face.data())
        .map(|(v, &m)| if m == 1 { *v } else { 0.0 })
        .collect();
    Ok(TextureMap::from_raw(t.height(), t.width(), data))
}

/// Centred ellipse covering the typical face position in a portrait crop.
///
/// A crude stand-in for a face parser; prefer a supplied mask file when one
/// exists.
pub fn fallback_face_mask(img: &Image) -> BinaryMask {
    ellipse_mask(img.height(), img.width())
}

pub(crate) fn ellipse_mask(h: usize, w: usize) -> BinaryMask {
    let (ax, ay) = (FALLBACK_SEMI_AXES.0 * w as f64, FALLBACK_SEMI_AXES.1 * h as f64);
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    BinaryMask::from_fn(h, w, |y, x| {
        let dx = x as f64 + 0.5 - cx;
        let dy = y as f64 + 0.5 - cy;
        (dx / ax).powi(2) + (dy / ay).powi(2) <= 1.0
    })
}

pub fn binarize_texture(t: &TextureMap, threshold: f64) -> Result<BinaryMask> {
    check_threshold(threshold)?;
    let data = t.data().iter().map(|&v| u8::from(v >= threshold)).collect();
    BinaryMask::new(t.height(), t.width(), data)
}

/// Full weak-label generation: texture extraction then face masking.
pub fn weak_label(img: &Image, face: Option<&BinaryMask>, cfg: &TextureConfig) -> Result<TextureMap> {
    let t = extract_texture(img, cfg)?;
    match face {
        Some(m) => apply_face_mask(&t, m),
        None => apply_face_mask(&t, &fallback_face_mask(img)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::reflect101;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, 3, |_, _, _| rng.random::<f64>()).unwrap()
    }

    #[test]
    fn constant_image_has_no_texture() {
        for v in [0.0, 0.3, 1.0] {
            let img = Image::filled(16, 16, 3, v).unwrap();
            let t = extract_texture(&img, &TextureConfig::default()).unwrap();
            assert!(t.data().iter().all(|x| x.abs() <= 1e-6));
        }
    }

    /// Residual computed with a dense 2-D kernel, independent of the separable path.
    fn residual_oracle(img: &Image, sigma: f64, scale: f64) -> Vec<f64> {
        let r = (3.0 * sigma).ceil() as isize;
        let (h, w) = (img.height(), img.width());
        let mut weights = Vec::new();
        let mut total = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                let v = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
                weights.push((dy, dx, v));
                total += v;
            }
        }
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let blurred: f64 = weights
                    .iter()
                    .map(|&(dy, dx, v)| {
                        v / total
                            * img.get(reflect101(y as isize + dy, h), reflect101(x as isize + dx, w), 0)
                    })
                    .sum();
                out[y * w + x] = ((img.get(y, x, 0) - blurred).abs() / scale).min(1.0);
            }
        }
        out
    }

    #[test]
    fn step_edge_band() {
        let img = Image::from_fn(16, 16, 1, |_, x, _| if x < 8 { 0.0 } else { 1.0 }).unwrap();
        let cfg = TextureConfig {
            sigma: 1.0,
            ..Default::default()
        };
        let t = extract_texture(&img, &cfg).unwrap();
        let oracle = residual_oracle(&img, 1.0, cfg.scale);
        for (a, b) in t.data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6);
        }
        for y in 0..16 {
            assert!(t.get(y, 7) > 0.5 && t.get(y, 8) > 0.5);
            // columns at least 3 sigma from the edge (reflect-101 keeps the borders flat)
            for x in (0..=4).chain(11..16) {
                assert!(t.get(y, x) < 1e-4, "({y},{x}) = {}", t.get(y, x));
            }
        }
    }

    #[test]
    fn outputs_in_unit_range() {
        let t = extract_texture(&random_image(20, 20, 1), &TextureConfig::default()).unwrap();
        assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn face_mask_product() {
        let t = TextureMap::new(4, 4, vec![0.5; 16]).unwrap();
        assert_eq!(apply_face_mask(&t, &BinaryMask::ones(4, 4)).unwrap(), t);
        let zero = apply_face_mask(&t, &BinaryMask::zeros(4, 4)).unwrap();
        assert!(zero.data().iter().all(|v| *v == 0.0));
        let checker = BinaryMask::from_fn(4, 4, |y, x| (x + y) % 2 == 0);
        let out = apply_face_mask(&t, &checker).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let want = if (x + y) % 2 == 0 { 0.5 } else { 0.0 };
                assert_eq!(out.get(y, x), want);
            }
        }
        assert!(apply_face_mask(&t, &BinaryMask::ones(3, 4)).is_err());
    }

    #[test]
    fn fallback_ellipse_region() {
        let img = Image::filled(100, 100, 3, 0.5).unwrap();
        let m = fallback_face_mask(&img);
        assert_eq!(m, fallback_face_mask(&img));
        let mut expect = 0;
        for y in 0..100 {
            for x in 0..100 {
                let px = x as f64 + 0.5 - 50.0;
                let py = y as f64 + 0.5 - 50.0;
                let inside = px * px / (42.0 * 42.0) + py * py / (46.0 * 46.0) <= 1.0;
                assert_eq!(m.get(y, x), inside);
                expect += inside as usize;
            }
        }
        assert_eq!(m.count(), expect);
        // pixel-centre rasterization of an ellipse tracks pi*a*b closely
        let area = std::f64::consts::PI * 42.0 * 46.0;
        assert!((m.count() as f64 - area).abs() / area < 0.01);
    }

    #[test]
    fn binarize_rules() {
        let zero = TextureMap::new(2, 2, vec![0.0; 4]).unwrap();
        assert_eq!(binarize_texture(&zero, 0.5).unwrap().count(), 0);
        let t = TextureMap::new(1, 2, vec![0.4, 0.6]).unwrap();
        let b = binarize_texture(&t, 0.5).unwrap();
        assert_eq!(b.data(), &[0, 1]);
        let as_map = TextureMap::new(1, 2, b.data().iter().map(|&v| v as f64).collect()).unwrap();
        assert_eq!(binarize_texture(&as_map, 0.5).unwrap(), b);
        assert!(binarize_texture(&t, 0.0).is_err());
        assert!(binarize_texture(&t, 1.0).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = [
            TextureConfig { sigma: 0.0, ..Default::default() },
            TextureConfig { scale: -1.0, ..Default::default() },
            TextureConfig { binarize_threshold: Some(1.2), ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
        assert!(TextureConfig::default().validate().is_ok());
    }

    #[test]
    fn translation_equivariance_interior() {
        let img = random_image(40, 40, 3);
        let (dy, dx) = (2usize, 3usize);
        let shifted = Image::from_fn(40, 40, 3, |y, x, c| {
            img.get(y.saturating_sub(dy), x.saturating_sub(dx), c)
        })
        .unwrap();
        let cfg = TextureConfig::default();
        let a = extract_texture(&img, &cfg).unwrap();
        let b = extract_texture(&shifted, &cfg).unwrap();
        let margin = (3.0 * cfg.sigma).ceil() as usize + dx.max(dy);
        for y in margin..40 - margin {
            for x in margin..40 - margin {
                assert!((b.get(y, x) - a.get(y - dy, x - dx)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn larger_scale_never_increases_response() {
        let img = random_image(24, 24, 4);
        let mut prev: Option<TextureMap> = None;
        for scale in [0.05, 0.1, 0.2, 0.4, 0.8] {
            let cfg = TextureConfig { scale, ..Default::default() };
            let t = extract_texture(&img, &cfg).unwrap();
            if let Some(p) = &prev {
                assert!(t.data().iter().zip(p.data()).all(|(a, b)| a <= b));
            }
            prev = Some(t);
        }
    }

    #[test]
    fn smoothing_removes_texture() {
        let cfg = TextureConfig::default();
        for seed in 0..3 {
            let img = random_image(32, 32, seed);
            let smooth = gaussian_blur(&img, 4.0).unwrap();
            let before = extract_texture(&img, &cfg).unwrap().mean();
            let after = extract_texture(&smooth, &cfg).unwrap().mean();
            assert!(after < before, "{after} !< {before}");
        }
    }

    #[test]
    fn masked_map_zero_off_face() {
        let img = random_image(32, 32, 8);
        let t = weak_label(&img, None, &TextureConfig::default()).unwrap();
        let face = fallback_face_mask(&img);
        for (v, m) in t.data().iter().zip(face.data()) {
            if *m == 0 {
                assert_eq!(*v, 0.0);
            }
        }
    }
}
