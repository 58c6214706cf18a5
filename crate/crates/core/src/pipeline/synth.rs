//! Procedural stand-in for a face corpus: a shaded skin-tone ellipse with
//! fine noise on a contrasting background, darker curved strokes as wrinkles,
//! and a panel of simulated annotators who each miss, shift, and thicken or
//! thin the strokes a little.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::fusion::annotator_file_name;
use crate::imagecore::{gaussian_blur, save_image, BinaryMask, Image};
use crate::pipeline::dataset::{DatasetManifest, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotatorNoise {
    /// Probability that an annotator misses a stroke entirely.
    pub drop_prob: f64,
    /// Maximum shift (Euclidean length) of an annotator's whole mask, in pixels.
    pub jitter: i32,
    /// Maximum change of stroke half-width, in pixels.
    pub morph_radius: i32,
}

impl Default for AnnotatorNoise {
    fn default() -> Self {
        Self {
            drop_prob: 0.15,
            jitter: 1,
            morph_radius: 1,
        }
    }
}

impl AnnotatorNoise {
    pub fn none() -> Self {
        Self {
            drop_prob: 0.0,
            jitter: 0,
            morph_radius: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub count: usize,
    pub size: usize,
    pub n_annotators: usize,
    pub seed: u64,
    /// Inclusive range of strokes per face.
    pub wrinkle_count_range: [usize; 2],
    /// Inclusive range of stroke widths in pixels.
    pub stroke_width_range: [usize; 2],
    pub annotator_noise: AnnotatorNoise,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 124,
            size: 64,
            n_annotators: 3,
            seed: 0,
            wrinkle_count_range: [2, 6],
            stroke_width_range: [1, 3],
            annotator_noise: AnnotatorNoise::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 32 || !self.size.is_power_of_two() {
            bail!(Argument, "size must be a power of two >= 32, got {}", self.size);
        }
        if self.n_annotators == 0 {
            bail!(Argument, "need at least one annotator");
        }
        let [lo, hi] = self.wrinkle_count_range;
        if lo > hi {
            bail!(Argument, "wrinkle count range {lo}..={hi} is empty");
        }
        let [lo, hi] = self.stroke_width_range;
        if lo == 0 || lo > hi {
            bail!(Argument, "stroke width range {lo}..={hi} must be non-empty and start at 1 or more");
        }
        let n = &self.annotator_noise;
        if !(0.0..=1.0).contains(&n.drop_prob) || n.jitter < 0 || n.morph_radius < 0 {
            bail!(Argument, "invalid annotator noise {n:?}");
        }
        Ok(())
    }
}

/// Independent seed for item `index` under `master`.
pub fn item_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Quadratic Bezier stroke.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stroke {
    pub points: [(f64, f64); 3],
    pub width: usize,
    pub darkness: f64,
}

impl Stroke {
    fn radius(&self) -> f64 {
        self.width as f64 / 2.0 + 0.15
    }

    fn polyline(&self, dy: f64, dx: f64) -> Vec<(f64, f64)> {
        const STEPS: usize = 48;
        let [p0, p1, p2] = self.points;
        (0..=STEPS)
            .map(|i| {
                let t = i as f64 / STEPS as f64;
                let (a, b, c) = ((1.0 - t) * (1.0 - t), 2.0 * t * (1.0 - t), t * t);
                (
                    a * p0.0 + b * p1.0 + c * p2.0 + dy,
                    a * p0.1 + b * p1.1 + c * p2.1 + dx,
                )
            })
            .collect()
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vy, vx) = (b.0 - a.0, b.1 - a.1);
    let len2 = vy * vy + vx * vx;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * vy + (p.1 - a.1) * vx) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (ey, ex) = (p.0 - a.0 - t * vy, p.1 - a.1 - t * vx);
    (ey * ey + ex * ex).sqrt()
}

/// Distance from every pixel centre to the polyline, or infinity beyond `reach`.
fn distance_field(line: &[(f64, f64)], size: usize, reach: f64) -> Vec<f64> {
    let mut out = vec![f64::INFINITY; size * size];
    for seg in line.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let y0 = (a.0.min(b.0) - reach - 0.5).floor().max(0.0) as usize;
        let y1 = ((a.0.max(b.0) + reach - 0.5).ceil().max(0.0) as usize).min(size - 1);
        let x0 = (a.1.min(b.1) - reach - 0.5).floor().max(0.0) as usize;
        let x1 = ((a.1.max(b.1) + reach - 0.5).ceil().max(0.0) as usize).min(size - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = segment_distance((y as f64 + 0.5, x as f64 + 0.5), a, b);
                let cell = &mut out[y * size + x];
                *cell = cell.min(d);
            }
        }
    }
    out
}

fn stroke_mask(stroke: &Stroke, size: usize, radius: f64, shift: (i32, i32), face: &BinaryMask) -> BinaryMask {
    let field = distance_field(&stroke.polyline(shift.0 as f64, shift.1 as f64), size, radius + 1.0);
    let data = field
        .iter()
        .zip(face.data())
        .map(|(&d, &f)| u8::from(d <= radius && f == 1))
        .collect();
    BinaryMask::new(size, size, data).expect("square mask")
}

fn union(into: &mut BinaryMask, other: &BinaryMask) {
    let h = into.height();
    let w = into.width();
    let data: Vec<u8> = into.data().iter().zip(other.data()).map(|(a, b)| a | b).collect();
    *into = BinaryMask::new(h, w, data).expect("same dims");
}

/// One generated face with its ground truth and annotator panel.
#[derive(Debug, Clone)]
pub struct SynthSample {
    pub image_id: String,
    pub image: Image,
    pub face: BinaryMask,
    pub truth: BinaryMask,
    pub strokes: Vec<Stroke>,
    pub annotators: Vec<BinaryMask>,
}

pub fn sample_id(index: usize) -> String {
    format!("face_{index:04}")
}

/// Deterministic in `(cfg, index)`; independent of `cfg.count`.
pub fn synth_sample(cfg: &SynthConfig, index: usize) -> Result<SynthSample> {
    cfg.validate()?;
    let seed = item_seed(cfg.seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = cfg.size;
    let sf = s as f64;

    let cy = sf / 2.0 + rng.random_range(-0.03..=0.03) * sf;
    let cx = sf / 2.0 + rng.random_range(-0.03..=0.03) * sf;
    let ay = rng.random_range(0.40..=0.46) * sf;
    let ax = rng.random_range(0.36..=0.42) * sf;
    let face = BinaryMask::from_fn(s, s, |y, x| {
        let (u, v) = ((y as f64 + 0.5 - cy) / ay, (x as f64 + 0.5 - cx) / ax);
        u * u + v * v <= 1.0
    });

    let light = [0.93, 0.79, 0.69];
    let dark = [0.56, 0.39, 0.29];
    let t: f64 = rng.random();
    let skin: Vec<f64> = (0..3).map(|c| light[c] + t * (dark[c] - light[c])).collect();
    let bg_base = [
        [0.20, 0.35, 0.60],
        [0.25, 0.55, 0.35],
        [0.15, 0.15, 0.20],
        [0.55, 0.60, 0.70],
    ][rng.random_range(0..4)];
    let light_dir: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (ly, lx) = (light_dir.sin(), light_dir.cos());

    let white: Vec<f64> = (0..s * s).map(|_| StandardNormal.sample(&mut rng)).collect();
    let fine = gaussian_blur(&Image::from_raw(s, s, 1, white), 1.0)?;
    let std = (fine.data().iter().map(|v| v * v).sum::<f64>() / (s * s) as f64).sqrt().max(1e-12);
    let grain: Vec<f64> = fine.data().iter().map(|v| 0.015 * v / std).collect();

    let mut n_strokes = rng.random_range(cfg.wrinkle_count_range[0]..=cfg.wrinkle_count_range[1]);
    let mut strokes = Vec::with_capacity(n_strokes);
    while n_strokes > 0 {
        n_strokes -= 1;
        let r = 0.65 * rng.random::<f64>().sqrt();
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let (my, mx) = (cy + r * ay * phi.sin(), cx + r * ax * phi.cos());
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let half = rng.random_range(0.08..=0.2) * sf;
        let bend = rng.random_range(-0.3..=0.3) * half;
        let (dy, dx) = (theta.sin(), theta.cos());
        strokes.push(Stroke {
            points: [
                (my - half * dy, mx - half * dx),
                (my + bend * dx, mx - bend * dy),
                (my + half * dy, mx + half * dx),
            ],
            width: rng.random_range(cfg.stroke_width_range[0]..=cfg.stroke_width_range[1]),
            darkness: rng.random_range(0.25..=0.40),
        });
    }

    // antialiased darkening: coverage falls off over one pixel around the stroke edge
    let mut shade = vec![1.0f64; s * s];
    let mut truth = BinaryMask::zeros(s, s);
    for st in &strokes {
        let r = st.radius();
        let field = distance_field(&st.polyline(0.0, 0.0), s, r + 1.0);
        for (i, d) in field.iter().enumerate() {
            let cover = (r + 0.5 - d).clamp(0.0, 1.0);
            if cover > 0.0 && face.data()[i] == 1 {
                shade[i] = shade[i].min(1.0 - st.darkness * cover);
            }
        }
        union(&mut truth, &stroke_mask(st, s, r, (0, 0), &face));
    }

    let mut data = Vec::with_capacity(s * s * 3);
    for y in 0..s {
        for x in 0..s {
            let i = y * s + x;
            let (u, v) = ((y as f64 + 0.5 - cy) / ay, (x as f64 + 0.5 - cx) / ax);
            for c in 0..3 {
                let val = if face.data()[i] == 1 {
                    let lit = 1.0 - 0.18 * (u * u + v * v) + 0.06 * (u * ly + v * lx);
                    (skin[c] * lit + grain[i]) * shade[i]
                } else {
                    bg_base[c] * (0.85 + 0.15 * (y as f64 / sf))
                };
                data.push(val.clamp(0.0, 1.0));
            }
        }
    }
    let image = Image::new(s, s, 3, data)?;

    let annotators = (0..cfg.n_annotators)
        .map(|a| annotate(&strokes, &face, s, &cfg.annotator_noise, item_seed(seed, 1 + a as u64)))
        .collect();

    Ok(SynthSample {
        image_id: sample_id(index),
        image,
        face,
        truth,
        strokes,
        annotators,
    })
}

/// Uniform over integer offsets of Euclidean length at most `jitter`.
fn jitter_offset(rng: &mut ChaCha8Rng, jitter: i32) -> (i32, i32) {
    let offsets: Vec<(i32, i32)> = (-jitter..=jitter)
        .flat_map(|dy| (-jitter..=jitter).map(move |dx| (dy, dx)))
        .filter(|(dy, dx)| dy * dy + dx * dx <= jitter * jitter)
        .collect();
    offsets[rng.random_range(0..offsets.len())]
}

/// One annotator's view: each stroke kept with probability `1 - drop_prob`,
/// the whole drawing shifted by at most `jitter` pixels, and every
/// stroke half-width changed by a uniform amount in `[-morph, morph]`
/// (floored at half a pixel so thin strokes survive thinning).
pub fn annotate(strokes: &[Stroke], face: &BinaryMask, size: usize, noise: &AnnotatorNoise, seed: u64) -> BinaryMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift = jitter_offset(&mut rng, noise.jitter);
    let m = noise.morph_radius as f64;
    let delta = if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
    let mut out = BinaryMask::zeros(size, size);
    for st in strokes {
        if noise.drop_prob > 0.0 && rng.random::<f64>() < noise.drop_prob {
            continue;
        }
        let r = (st.radius() + delta).max(0.5);
        union(&mut out, &stroke_mask(st, size, r, shift, face));
    }
    out
}

fn rel(dir: &str, name: String) -> PathBuf {
    Path::new(dir).join(name)
}

/// Writes every sample under `out_dir/samples/` and the manifest as
/// `out_dir/manifest.json`.
pub fn synth_dataset(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    let sample_dir = out_dir.join("samples");
    std::fs::create_dir_all(&sample_dir).map_err(|e| Error::io(&sample_dir, e))?;
    let mut samples = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let s = synth_sample(cfg, i)?;
        let id = &s.image_id;
        let image_path = rel("samples", format!("{id}.png"));
        let face_path = rel("samples", format!("{id}.face.png"));
        let truth_path = rel("samples", format!("{id}.truth.png"));
        save_image(&s.image, out_dir.join(&image_path))?;
        save_image(&s.face, out_dir.join(&face_path))?;
        save_image(&s.truth, out_dir.join(&truth_path))?;
        let mut ann_paths = Vec::with_capacity(s.annotators.len());
        for (a, m) in s.annotators.iter().enumerate() {
            let p = rel("samples", annotator_file_name(id, a + 1));
            save_image(m, out_dir.join(&p))?;
            ann_paths.push(p);
        }
        samples.push(Sample {
            image_id: id.clone(),
            image_path,
            face_mask_path: Some(face_path),
            annotator_mask_paths: ann_paths,
            fused_gt_path: None,
            weak_label_path: None,
            true_mask_path: Some(truth_path),
        });
    }
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        seed: cfg.seed,
        samples,
    };
    manifest.save()?;
    Ok(manifest)
}
