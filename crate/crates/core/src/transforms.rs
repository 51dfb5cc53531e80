//! Train-time augmentation and eval-time resize + normalization.
//!
//! The augmentation pipeline runs in `f32` and quantizes to `u8` once at the
//! end. Order: affine warp, color jitter, sharpness, flips.

use image::RgbImage;
use rand::Rng;

use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub scale_min: f64,
    pub scale_max: f64,
    pub max_rotation_deg: f64,
    /// Maximum shift along each axis, as a fraction of the image side.
    pub translation_fraction: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    pub sharpness_factor: f64,
    pub sharpness_probability: f64,
    pub hflip_probability: f64,
    pub vflip_probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            scale_min: 0.95,
            scale_max: 1.25,
            max_rotation_deg: 30.0,
            translation_fraction: 0.1,
            brightness: 0.15,
            contrast: 0.15,
            saturation: 0.15,
            hue: 0.05,
            sharpness_factor: 0.25,
            sharpness_probability: 0.5,
            hflip_probability: 0.5,
            vflip_probability: 0.5,
        }
    }
}

impl AugmentConfig {
    /// A configuration that leaves every image untouched.
    pub fn identity() -> Self {
        Self {
            scale_min: 1.0,
            scale_max: 1.0,
            max_rotation_deg: 0.0,
            translation_fraction: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
            sharpness_factor: 1.0,
            sharpness_probability: 0.0,
            hflip_probability: 0.0,
            vflip_probability: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("sharpness_probability", self.sharpness_probability),
            ("hflip_probability", self.hflip_probability),
            ("vflip_probability", self.vflip_probability),
        ] {
            ensure!((0.0..=1.0).contains(&p), "augment.{name} = {p} not in [0, 1]");
        }
        ensure!(
            self.scale_min > 0.0 && self.scale_min <= self.scale_max,
            "augment scale range [{}, {}] invalid",
            self.scale_min,
            self.scale_max
        );
        ensure!(self.max_rotation_deg >= 0.0, "augment.max_rotation_deg must be >= 0");
        ensure!(
            (0.0..1.0).contains(&self.translation_fraction),
            "augment.translation_fraction must be in [0, 1)"
        );
        for (name, j) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
        ] {
            ensure!((0.0..=1.0).contains(&j), "augment.{name} = {j} not in [0, 1]");
        }
        ensure!((0.0..=0.5).contains(&self.hue), "augment.hue must be in [0, 0.5]");
        ensure!(self.sharpness_factor >= 0.0, "augment.sharpness_factor must be >= 0");
        Ok(())
    }
}

/// Per-channel mean/std applied after scaling pixels to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl NormStats {
    pub const IMAGENET: NormStats = NormStats {
        mean: [0.485, 0.456, 0.406],
        std: [0.229, 0.224, 0.225],
    };

    pub fn new(mean: [f32; 3], std: [f32; 3]) -> Result<Self> {
        ensure!(
            std.iter().all(|s| *s > 0.0 && s.is_finite()),
            "normalization std must be positive, got {std:?}"
        );
        Ok(Self { mean, std })
    }
}

impl Default for NormStats {
    fn default() -> Self {
        Self::IMAGENET
    }
}

/// Height x width x 3 float array, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub side: usize,
    pub data: Vec<f32>,
}

impl FloatImage {
    pub fn from_rgb(img: &RgbImage) -> Self {
        assert_eq!(img.width(), img.height(), "patches are square");
        Self {
            side: img.width() as usize,
            data: img.as_raw().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.side + x) * 3 + c]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.side, self.side, 3)
    }

    fn to_rgb(&self) -> RgbImage {
        let raw = self.data.iter().map(|&v| quantize(v)).collect();
        RgbImage::from_raw(self.side as u32, self.side as u32, raw).expect("buffer sized for image")
    }
}

fn quantize(v: f32) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Bilinear,
    Nearest,
}

/// Resizes a square u8 image to `side x side`.
pub fn resize(img: &RgbImage, side: usize, mode: Interpolation) -> Result<RgbImage> {
    let out = resize_float(&FloatImage::from_rgb(img), side, mode)?;
    Ok(out.to_rgb())
}

/// Half-pixel-center resampling with edge clamping.
pub fn resize_float(img: &FloatImage, side: usize, mode: Interpolation) -> Result<FloatImage> {
    ensure!(side > 0, "resize target side must be positive");
    if side == img.side {
        return Ok(img.clone());
    }
    let scale = img.side as f32 / side as f32;
    let max = (img.side - 1) as f32;
    let mut data = Vec::with_capacity(side * side * 3);
    for oy in 0..side {
        let sy = ((oy as f32 + 0.5) * scale - 0.5).clamp(0.0, max);
        for ox in 0..side {
            let sx = ((ox as f32 + 0.5) * scale - 0.5).clamp(0.0, max);
            match mode {
                Interpolation::Nearest => {
                    let (y, x) = (sy.round() as usize, sx.round() as usize);
                    for c in 0..3 {
                        data.push(img.at(y, x, c));
                    }
                }
                Interpolation::Bilinear => {
                    for c in 0..3 {
                        data.push(bilinear(img, sy, sx, c));
                    }
                }
            }
        }
    }
    Ok(FloatImage { side, data })
}

fn bilinear(img: &FloatImage, y: f32, x: f32, c: usize) -> f32 {
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(img.side - 1);
    let x1 = (x0 + 1).min(img.side - 1);
    let fy = y - y0 as f32;
    let fx = x - x0 as f32;
    let top = img.at(y0, x0, c) * (1.0 - fx) + img.at(y0, x1, c) * fx;
    let bot = img.at(y1, x0, c) * (1.0 - fx) + img.at(y1, x1, c) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Mirror `x` into `[0, n - 1]` about the edge pixel centers.
fn reflect(x: f32, n: usize) -> f32 {
    if n == 1 {
        return 0.0;
    }
    let max = (n - 1) as f32;
    let period = 2.0 * max;
    let mut r = x.abs() % period;
    if r > max {
        r = period - r;
    }
    r
}

/// Resize to `target_side`, scale to `[0, 1]`, normalize per channel.
pub fn apply_eval_transform(img: &RgbImage, target_side: usize, stats: &NormStats) -> Result<FloatImage> {
    let mut out = resize_float(&FloatImage::from_rgb(img), target_side, Interpolation::Bilinear)?;
    for px in out.data.chunks_exact_mut(3) {
        for c in 0..3 {
            px[c] = (px[c] / 255.0 - stats.mean[c]) / stats.std[c];
        }
    }
    Ok(out)
}

/// The random train-time augmentation. All randomness comes from `rng`,
/// and the same number of draws is made regardless of configuration.
pub fn apply_train_augment<R: Rng + ?Sized>(img: &RgbImage, config: &AugmentConfig, rng: &mut R) -> RgbImage {
    let mut x = FloatImage::from_rgb(img);

    let scale = uniform(rng, config.scale_min, config.scale_max);
    let angle = uniform(rng, -config.max_rotation_deg, config.max_rotation_deg).to_radians();
    let max_shift = config.translation_fraction * x.side as f64;
    let tx = uniform(rng, -max_shift, max_shift);
    let ty = uniform(rng, -max_shift, max_shift);
    if scale != 1.0 || angle != 0.0 || tx != 0.0 || ty != 0.0 {
        x = affine(&x, scale, angle, tx, ty);
    }

    let brightness = uniform(rng, 1.0 - config.brightness, 1.0 + config.brightness) as f32;
    let contrast = uniform(rng, 1.0 - config.contrast, 1.0 + config.contrast) as f32;
    let saturation = uniform(rng, 1.0 - config.saturation, 1.0 + config.saturation) as f32;
    let hue = uniform(rng, -config.hue, config.hue) as f32;
    if brightness != 1.0 {
        adjust_brightness(&mut x, brightness);
    }
    if contrast != 1.0 {
        adjust_contrast(&mut x, contrast);
    }
    if saturation != 1.0 {
        adjust_saturation(&mut x, saturation);
    }
    if hue != 0.0 {
        adjust_hue(&mut x, hue);
    }

    if rng.random::<f64>() < config.sharpness_probability && config.sharpness_factor != 1.0 {
        adjust_sharpness(&mut x, config.sharpness_factor as f32);
    }
    if rng.random::<f64>() < config.hflip_probability {
        flip(&mut x, true);
    }
    if rng.random::<f64>() < config.vflip_probability {
        flip(&mut x, false);
    }
    x.to_rgb()
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.random();
    if lo == hi {
        lo
    } else {
        lo + (hi - lo) * u
    }
}

/// Inverse-mapped affine warp about the image center with reflected borders.
fn affine(img: &FloatImage, scale: f64, angle: f64, tx: f64, ty: f64) -> FloatImage {
    let n = img.side;
    let center = (n as f64 - 1.0) / 2.0;
    let (sin, cos) = angle.sin_cos();
    let mut data = Vec::with_capacity(img.data.len());
    for oy in 0..n {
        for ox in 0..n {
            let dx = ox as f64 - center - tx;
            let dy = oy as f64 - center - ty;
            let sx = (cos * dx + sin * dy) / scale + center;
            let sy = (-sin * dx + cos * dy) / scale + center;
            let sx = reflect(sx as f32, n);
            let sy = reflect(sy as f32, n);
            for c in 0..3 {
                data.push(bilinear(img, sy, sx, c));
            }
        }
    }
    FloatImage { side: n, data }
}

fn gray(px: &[f32]) -> f32 {
    0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
}

fn adjust_brightness(img: &mut FloatImage, factor: f32) {
    for v in &mut img.data {
        *v = (*v * factor).clamp(0.0, 255.0);
    }
}

fn adjust_contrast(img: &mut FloatImage, factor: f32) {
    let mean = img.data.chunks_exact(3).map(gray).sum::<f32>() / (img.side * img.side) as f32;
    for v in &mut img.data {
        *v = (factor * *v + (1.0 - factor) * mean).clamp(0.0, 255.0);
    }
}

fn adjust_saturation(img: &mut FloatImage, factor: f32) {
    for px in img.data.chunks_exact_mut(3) {
        let g = gray(px);
        for v in px.iter_mut() {
            *v = (factor * *v + (1.0 - factor) * g).clamp(0.0, 255.0);
        }
    }
}

/// Rotates hue by `shift` turns via HSV.
fn adjust_hue(img: &mut FloatImage, shift: f32) {
    for px in img.data.chunks_exact_mut(3) {
        let (r, g, b) = (px[0] / 255.0, px[1] / 255.0, px[2] / 255.0);
        let max = r.max(g).max(b);
        let min = r.min(g).min(b);
        let delta = max - min;
        if delta <= 0.0 {
            continue;
        }
        let mut h = if max == r {
            ((g - b) / delta).rem_euclid(6.0)
        } else if max == g {
            (b - r) / delta + 2.0
        } else {
            (r - g) / delta + 4.0
        } / 6.0;
        h = (h + shift).rem_euclid(1.0);
        let s = delta / max;
        let v = max;
        let h6 = h * 6.0;
        let i = h6.floor();
        let f = h6 - i;
        let p = v * (1.0 - s);
        let q = v * (1.0 - s * f);
        let t = v * (1.0 - s * (1.0 - f));
        let (r, g, b) = match i as i32 % 6 {
            0 => (v, t, p),
            1 => (q, v, p),
            2 => (p, v, t),
            3 => (p, q, v),
            4 => (t, p, v),
            _ => (v, p, q),
        };
        px[0] = r * 255.0;
        px[1] = g * 255.0;
        px[2] = b * 255.0;
    }
}

/// Blend with a 3x3 smoothed copy (kernel 1-5-1 / 13, border pixels kept).
fn adjust_sharpness(img: &mut FloatImage, factor: f32) {
    let n = img.side;
    if n < 3 {
        return;
    }
    let src = img.data.clone();
    let at = |y: usize, x: usize, c: usize| src[(y * n + x) * 3 + c];
    for y in 1..n - 1 {
        for x in 1..n - 1 {
            for c in 0..3 {
                let mut acc = 4.0 * at(y, x, c);
                for dy in 0..3 {
                    for dx in 0..3 {
                        acc += at(y + dy - 1, x + dx - 1, c);
                    }
                }
                let blurred = acc / 13.0;
                let orig = at(y, x, c);
                img.data[(y * n + x) * 3 + c] = (blurred + factor * (orig - blurred)).clamp(0.0, 255.0);
            }
        }
    }
}

fn flip(img: &mut FloatImage, horizontal: bool) {
    let n = img.side;
    let src = img.data.clone();
    for y in 0..n {
        for x in 0..n {
            let (sy, sx) = if horizontal { (y, n - 1 - x) } else { (n - 1 - y, x) };
            for c in 0..3 {
                img.data[(y * n + x) * 3 + c] = src[(sy * n + sx) * 3 + c];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn pattern(side: u32) -> RgbImage {
        RgbImage::from_fn(side, side, |x, y| {
            image::Rgb([(x * 2) as u8, (y * 2) as u8, ((x * y) % 251) as u8])
        })
    }

    #[test]
    fn identity_config_is_pixel_exact() {
        let img = pattern(128);
        let mut rng = seed::rng(3);
        for _ in 0..4 {
            assert_eq!(apply_train_augment(&img, &AugmentConfig::identity(), &mut rng), img);
        }
    }

    #[test]
    fn augment_is_seeded_and_shape_preserving() {
        let img = pattern(128);
        let cfg = AugmentConfig::default();
        let a = apply_train_augment(&img, &cfg, &mut seed::rng(9));
        let b = apply_train_augment(&img, &cfg, &mut seed::rng(9));
        let c = apply_train_augment(&img, &cfg, &mut seed::rng(10));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.dimensions(), (128, 128));
    }

    #[test]
    fn eval_transform_closed_forms() {
        let img = pattern(128);
        let id = NormStats::new([0.0; 3], [1.0; 3]).unwrap();
        let out = apply_eval_transform(&img, 128, &id).unwrap();
        for (o, i) in out.data.iter().zip(img.as_raw()) {
            assert_eq!(*o, *i as f32 / 255.0);
        }

        let white = RgbImage::from_pixel(128, 128, image::Rgb([255, 255, 255]));
        let half = NormStats::new([0.5; 3], [0.5; 3]).unwrap();
        let out = apply_eval_transform(&white, 128, &half).unwrap();
        assert!(out.data.iter().all(|&v| v == 1.0));

        assert!(apply_eval_transform(&img, 0, &id).is_err());
    }

    #[test]
    fn eval_upsample_keeps_corners() {
        let img = pattern(128);
        let id = NormStats::new([0.0; 3], [1.0; 3]).unwrap();
        let out = apply_eval_transform(&img, 224, &id).unwrap();
        assert_eq!(out.shape(), (224, 224, 3));
        for (oy, ox, sy, sx) in [(0, 0, 0, 0), (0, 223, 0, 127), (223, 0, 127, 0), (223, 223, 127, 127)] {
            for c in 0..3 {
                let src = img.get_pixel(sx, sy)[c] as f32 / 255.0;
                assert!((out.at(oy, ox, c) - src).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn resize_identity_and_shape() {
        let img = pattern(128);
        assert_eq!(resize(&img, 128, Interpolation::Bilinear).unwrap(), img);
        assert_eq!(resize(&img, 224, Interpolation::Bilinear).unwrap().dimensions(), (224, 224));
        assert!(resize(&img, 0, Interpolation::Nearest).is_err());
    }

    #[test]
    fn checkerboard_bilinear_grid() {
        let img = RgbImage::from_fn(2, 2, |x, y| {
            let v = if (x + y) % 2 == 0 { 0 } else { 255 };
            image::Rgb([v, v, v])
        });
        let out = resize_float(&FloatImage::from_rgb(&img), 4, Interpolation::Bilinear).unwrap();
        // Source coordinates for the 4 outputs are -0.25, 0.25, 0.75, 1.25,
        // clamped to 0, 0.25, 0.75, 1.
        let coords = [0.0f32, 0.25, 0.75, 1.0];
        for (oy, &y) in coords.iter().enumerate() {
            for (ox, &x) in coords.iter().enumerate() {
                let expected = 255.0 * ((1.0 - y) * x + y * (1.0 - x));
                assert!((out.at(oy, ox, 0) - expected).abs() < 1e-4, "({oy},{ox})");
            }
        }
        assert_eq!(out.at(1, 1, 0), 95.625);
    }

    #[test]
    fn reflect_mirrors_about_edges() {
        assert_eq!(reflect(-1.0, 5), 1.0);
        assert_eq!(reflect(5.0, 5), 3.0);
        assert_eq!(reflect(2.5, 5), 2.5);
        assert_eq!(reflect(9.0, 5), 1.0);
    }

    #[test]
    fn config_validation() {
        AugmentConfig::default().validate().unwrap();
        let mut c = AugmentConfig::default();
        c.hflip_probability = 1.5;
        assert!(c.validate().is_err());
        let mut c = AugmentConfig::default();
        c.scale_min = 2.0;
        assert!(c.validate().is_err());
        let mut c = AugmentConfig::default();
        c.max_rotation_deg = -1.0;
        assert!(c.validate().is_err());
        assert!(NormStats::new([0.0; 3], [1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn hue_round_trip_at_zero_shift() {
        let mut x = FloatImage::from_rgb(&pattern(16));
        let before = x.clone();
        adjust_hue(&mut x, 0.0);
        for (a, b) in x.data.iter().zip(&before.data) {
            assert!((a - b).abs() < 1e-3);
        }
    }
}
