//! Synthetic, easily separable stand-in for the real patch corpus: pink
//! stroma with one dark nucleus per patch. Atypical nuclei are larger, darker
//! and lobed; normal ones are small and round. Nine colour tints play the
//! role of acquisition domains.

use std::f64::consts::PI;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::dataset::{Label, Manifest, PatchRecord};
use crate::error::{ensure, Result};
use crate::imageio::{self, PATCH_SIDE};
use crate::seed::{self, Rng};
use crate::fsutil;

const TINTS: [[f64; 3]; 9] = [
    [1.00, 1.00, 1.00],
    [0.95, 0.90, 1.05],
    [1.05, 0.95, 0.92],
    [0.92, 0.97, 1.02],
    [1.02, 0.88, 0.98],
    [0.97, 1.04, 0.95],
    [1.06, 1.00, 1.06],
    [0.90, 0.92, 0.96],
    [1.00, 0.94, 1.08],
];

/// Renders one patch.
pub fn render_patch(label: Label, domain: usize, rng: &mut Rng) -> RgbImage {
    let tint = TINTS[domain % TINTS.len()];
    let side = PATCH_SIDE as f64;
    let (cx, cy) = (
        side / 2.0 + rng.random_range(-8.0..8.0),
        side / 2.0 + rng.random_range(-8.0..8.0),
    );
    let (radius, wobble, lobes, core) = match label {
        Label::Normal => (rng.random_range(9.0..13.0), 0.05, 2.0, [95.0, 55.0, 130.0]),
        Label::Atypical => (
            rng.random_range(19.0..25.0),
            rng.random_range(0.2..0.3),
            rng.random_range(3..6) as f64,
            [55.0, 25.0, 90.0],
        ),
    };
    let phase = rng.random_range(0.0..2.0 * PI);
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.02..0.08),
                rng.random_range(0.02..0.08),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(6.0..14.0),
            )
        })
        .collect();
    let stroma = [232.0, 182.0, 212.0];
    RgbImage::from_fn(PATCH_SIDE, PATCH_SIDE, |x, y| {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        let texture: f64 = waves.iter().map(|(a, b, p, amp)| amp * (a * fx + b * fy + p).sin()).sum();
        let (dx, dy) = (fx - cx, fy - cy);
        let r = (dx * dx + dy * dy).sqrt();
        let theta = dy.atan2(dx);
        let boundary = radius * (1.0 + wobble * (lobes * theta + phase).sin());
        // soft edge, about 1.5 px wide
        let inside = 1.0 / (1.0 + ((r - boundary) / 1.5).exp());
        let grain: f64 = rng.random_range(-6.0..6.0);
        let mut px = [0u8; 3];
        for c in 0..3 {
            let v = (stroma[c] + texture) * (1.0 - inside) + core[c] * inside + grain;
            px[c] = (v * tint[c]).round().clamp(0.0, 255.0) as u8;
        }
        Rgb(px)
    })
}

/// Writes `n` toy patches (a `positive_fraction` share atypical) under
/// `dir/images` plus `dir/manifest.csv`, and returns the manifest.
pub fn generate_toy_dataset(dir: &Path, n: usize, positive_fraction: f64, seed: u64) -> Result<Manifest> {
    ensure!(n > 0, "toy dataset needs at least one patch");
    ensure!(
        (0.0..=1.0).contains(&positive_fraction),
        "positive fraction must lie in [0, 1]"
    );
    let n_pos = (n as f64 * positive_fraction).round() as usize;
    let mut labels: Vec<Label> = (0..n)
        .map(|i| if i < n_pos { Label::Atypical } else { Label::Normal })
        .collect();
    let mut rng = seed::rng(seed::derive(seed, "toy", 0));
    labels.shuffle(&mut rng);
    let image_dir = dir.join("images");
    fsutil::create_dir(&image_dir)?;
    let mut records = Vec::with_capacity(n);
    for (i, label) in labels.into_iter().enumerate() {
        let domain = i % TINTS.len();
        let img = render_patch(label, domain, &mut rng);
        let id = format!("toy_{i:04}");
        let path = image_dir.join(format!("{id}.png"));
        imageio::write_png(&path, &img)?;
        records.push(PatchRecord::real(id, path, label, format!("domain{domain}")));
    }
    let manifest = Manifest::from_records(records)?;
    manifest.write(&dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dark_fraction(img: &RgbImage) -> f64 {
        img.pixels().filter(|p| (p[0] as u32 + p[1] as u32 + p[2] as u32) < 330).count() as f64
            / (PATCH_SIDE * PATCH_SIDE) as f64
    }

    #[test]
    fn classes_differ_in_nucleus_area() {
        let mut rng = seed::rng(0);
        for d in 0..9 {
            let n = dark_fraction(&render_patch(Label::Normal, d, &mut rng));
            let a = dark_fraction(&render_patch(Label::Atypical, d, &mut rng));
            assert!(a > 2.0 * n, "domain {d}: {a} vs {n}");
        }
    }

    #[test]
    fn dataset_counts() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_toy_dataset(dir.path(), 40, 0.15, 1).unwrap();
        assert_eq!(m.len(), 40);
        assert_eq!(m.count_label(Label::Atypical), 6);
        let again = crate::dataset::load_manifest(&dir.path().join("manifest.csv")).unwrap();
        assert_eq!(again, m);
    }
}
