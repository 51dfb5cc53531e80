use image::{Rgb, RgbImage};
use mitobal::seed;
use mitobal::transforms::{apply_train_augment, AugmentConfig};

fn channel_means(img: &RgbImage) -> [f64; 3] {
    let mut s = [0.0; 3];
    for p in img.pixels() {
        for c in 0..3 {
            s[c] += p[c] as f64;
        }
    }
    let n = (img.width() * img.height()) as f64;
    s.map(|v| v / n)
}

/// On a flat grey patch only the brightness factor can move a channel mean:
/// geometry and flips keep a constant image constant, and contrast,
/// saturation and hue act around grey. So every copy stays within the
/// brightness bound (plus rounding), and the average shift is centred on zero.
#[test]
fn monte_carlo_mean_shift_on_flat_patch() {
    let v = 128.0;
    let img = RgbImage::from_pixel(32, 32, Rgb([v as u8; 3]));
    let cfg = AugmentConfig::default();
    let mut rng = seed::rng(99);
    let n = 10_000;
    let mut sum = [0.0; 3];
    let mut sum_sq = [0.0; 3];
    for _ in 0..n {
        let m = channel_means(&apply_train_augment(&img, &cfg, &mut rng));
        for c in 0..3 {
            let shift = m[c] - v;
            assert!(shift.abs() <= cfg.brightness * v + 1.0, "channel {c} shifted by {shift}");
            sum[c] += shift;
            sum_sq[c] += shift * shift;
        }
    }
    for c in 0..3 {
        let mean = sum[c] / n as f64;
        let var = sum_sq[c] / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert!(mean.abs() <= 3.0 * se + 0.5, "channel {c}: mean shift {mean} (se {se})");
    }
}

/// On a textured patch geometric resampling also moves the mean, but the
/// average shift over many copies stays inside 15% of the dynamic range.
#[test]
fn monte_carlo_mean_shift_on_textured_patch() {
    let img = RgbImage::from_fn(32, 32, |x, y| {
        Rgb([(100 + (x * 3) % 60) as u8, (80 + (y * 5) % 90) as u8, (150 + ((x + y) * 2) % 50) as u8])
    });
    let base = channel_means(&img);
    let cfg = AugmentConfig::default();
    let mut rng = seed::rng(7);
    let n = 10_000;
    let mut sum = [0.0; 3];
    for _ in 0..n {
        let m = channel_means(&apply_train_augment(&img, &cfg, &mut rng));
        for c in 0..3 {
            sum[c] += m[c] - base[c];
        }
    }
    for c in 0..3 {
        let shift = sum[c] / n as f64;
        assert!(shift.abs() <= 0.15 * 255.0, "channel {c}: mean shift {shift}");
    }
}
