//! Seeded synthetic images, corpora, and annotated benchmark pairs.
//!
//! The benchmark pairs share a textured shape between source and target while
//! randomizing the texture instantiation, the background, and the shape
//! placement; target backgrounds additionally receive distractor patches cut
//! from the shape texture. Keypoints on the shape carry exact groundtruth
//! correspondences jittered per annotator.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::eval::{AnnotationSet, Keypoint, PairAnnotation};
use crate::image::ImageGray;

/// Multi-octave value noise in `[0, 1]`.
pub fn value_noise(width: usize, height: usize, cell: usize, octaves: usize, seed: u64) -> ImageGray {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![0.0f32; width * height];
    let mut amp = 1.0f32;
    let mut total = 0.0f32;
    let mut c = cell.max(2);
    for _ in 0..octaves {
        let gw = width / c + 2;
        let gh = height / c + 2;
        let lattice: Vec<f32> = (0..gw * gh).map(|_| rng.random::<f32>()).collect();
        for r in 0..height {
            let fy = r as f32 / c as f32;
            let y0 = fy.floor() as usize;
            let ty = fy - y0 as f32;
            for col in 0..width {
                let fx = col as f32 / c as f32;
                let x0 = fx.floor() as usize;
                let tx = fx - x0 as f32;
                let v00 = lattice[y0 * gw + x0];
                let v01 = lattice[y0 * gw + x0 + 1];
                let v10 = lattice[(y0 + 1) * gw + x0];
                let v11 = lattice[(y0 + 1) * gw + x0 + 1];
                let top = v00 + tx * (v01 - v00);
                let bot = v10 + tx * (v11 - v10);
                acc[r * width + col] += amp * (top + ty * (bot - top));
            }
        }
        total += amp;
        amp *= 0.5;
        c = (c / 2).max(2);
    }
    ImageGray::new(width, height, acc.into_iter().map(|v| (v / total).clamp(0.0, 1.0)).collect())
}

/// A corpus of textured images for statistics gathering.
pub fn synth_corpus(count: usize, width: usize, height: usize, seed: u64) -> Vec<ImageGray> {
    (0..count)
        .map(|i| value_noise(width, height, 8, 3, seed.wrapping_add(i as u64 * 7919)))
        .collect()
}

/// One benchmark pair: images plus annotations with exact-groundtruth jitter.
pub struct BenchmarkPair {
    pub source: ImageGray,
    pub target: ImageGray,
    pub annotation: PairAnnotation,
}

/// Standard normal via Box-Muller.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Generates `n_pairs` annotated source/target pairs. Deterministic per
/// (seed, index).
pub fn synth_benchmark(n_pairs: usize, n_annotators: usize, seed: u64) -> Vec<BenchmarkPair> {
    (0..n_pairs).map(|i| benchmark_pair(i, n_annotators, seed)).collect()
}

fn benchmark_pair(index: usize, n_annotators: usize, seed: u64) -> BenchmarkPair {
    let base = seed.wrapping_mul(0x9e37_79b9).wrapping_add(index as u64 * 104_729);
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    let (w, h) = (96usize, 72usize);
    let bg_src = value_noise(w, h, 16, 2, base ^ 0x11);
    let bg_tgt = value_noise(w, h, 16, 2, base ^ 0x22);
    // Shared shape texture: the target instance is a correlated re-rendering,
    // not a pixel copy.
    let tex_w = 64usize;
    let tex = value_noise(tex_w, tex_w, 5, 3, base ^ 0x33);
    let tex_alt = value_noise(tex_w, tex_w, 5, 3, base ^ 0x44);
    let blend = 0.35f32;
    let gain: f32 = 0.85 + 0.3 * rng.random::<f32>();

    // Ellipse geometry; the same shape appears in both images.
    let (ax, by) = (17.0f64, 12.0f64);
    let cx_s = w as f64 / 2.0 + rng.random_range(-6.0..6.0);
    let cy_s = h as f64 / 2.0 + rng.random_range(-4.0..4.0);
    let dx = rng.random_range(-8..=8) as f64;
    let dy = rng.random_range(-6..=6) as f64;
    let (cx_t, cy_t) = (cx_s + dx, cy_s + dy);

    let inside = |x: f64, y: f64, cx: f64, cy: f64| -> bool {
        let nx = (x - cx) / ax;
        let ny = (y - cy) / by;
        nx * nx + ny * ny <= 1.0
    };
    let tex_at = |img: &ImageGray, x: f64, y: f64, cx: f64, cy: f64| -> f32 {
        let tx = ((x - cx) + tex_w as f64 / 2.0).clamp(0.0, tex_w as f64 - 1.0) as usize;
        let ty = ((y - cy) + tex_w as f64 / 2.0).clamp(0.0, tex_w as f64 - 1.0) as usize;
        img.get(ty, tx)
    };

    let source = ImageGray::from_fn(w, h, |r, c| {
        let (x, y) = (c as f64, r as f64);
        if inside(x, y, cx_s, cy_s) {
            tex_at(&tex, x, y, cx_s, cy_s)
        } else {
            bg_src.get(r, c)
        }
    });
    let mut target_px = vec![0.0f32; w * h];
    for r in 0..h {
        for c in 0..w {
            let (x, y) = (c as f64, r as f64);
            target_px[r * w + c] = if inside(x, y, cx_t, cy_t) {
                let a = tex_at(&tex, x, y, cx_t, cy_t);
                let b = tex_at(&tex_alt, x, y, cx_t, cy_t);
                (gain * ((1.0 - blend) * a + blend * b)).clamp(0.0, 1.0)
            } else {
                bg_tgt.get(r, c)
            };
        }
    }
    // Distractor patches in the target background, cut from the shape
    // texture at wrong locations.
    for _ in 0..4 {
        let ps = 12usize;
        let ox = rng.random_range(0..tex_w - ps);
        let oy = rng.random_range(0..tex_w - ps);
        let px = rng.random_range(0..w - ps);
        let py = rng.random_range(0..h - ps);
        // keep distractors off the shape
        let overlaps =
            inside(px as f64 + ps as f64 / 2.0, py as f64 + ps as f64 / 2.0, cx_t, cy_t);
        if overlaps {
            continue;
        }
        for r in 0..ps {
            for c in 0..ps {
                target_px[(py + r) * w + px + c] = tex.get(oy + r, ox + c);
            }
        }
    }
    let target = ImageGray::new(w, h, target_px);

    // Keypoints on the shape in shape-local coordinates.
    let local: [(f64, f64); 9] = [
        (0.0, 0.0),
        (-0.5, 0.0),
        (0.5, 0.0),
        (0.0, -0.5),
        (0.0, 0.5),
        (-0.45, -0.45),
        (0.45, -0.45),
        (-0.45, 0.45),
        (0.45, 0.45),
    ];
    let mut keypoints = Vec::new();
    for (k, &(lx, ly)) in local.iter().enumerate() {
        let sx = cx_s + lx * ax;
        let sy = cy_s + ly * by;
        let gx = sx + dx;
        let gy = sy + dy;
        if !(2.0..w as f64 - 2.0).contains(&sx)
            || !(2.0..h as f64 - 2.0).contains(&sy)
            || !(2.0..w as f64 - 2.0).contains(&gx)
            || !(2.0..h as f64 - 2.0).contains(&gy)
        {
            continue;
        }
        let annotations = (0..n_annotators)
            .map(|_| {
                let jx = (gx + 0.6 * normal(&mut rng)).clamp(0.0, w as f64 - 1.0);
                let jy = (gy + 0.6 * normal(&mut rng)).clamp(0.0, h as f64 - 1.0);
                Some([jx, jy])
            })
            .collect();
        keypoints.push(Keypoint {
            id: format!("kp{k}"),
            source_xy: [sx, sy],
            annotations,
        });
    }
    let annotation = PairAnnotation {
        source: format!("pair_{index:03}_src.png"),
        target: format!("pair_{index:03}_tgt.png"),
        source_size: [w, h],
        target_size: [w, h],
        keypoints,
    };
    BenchmarkPair { source, target, annotation }
}

/// Writes a benchmark to disk: PNG pairs plus `annotations.json`.
pub fn write_benchmark(
    pairs: &[BenchmarkPair],
    dir: impl AsRef<std::path::Path>,
) -> std::io::Result<std::path::PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for p in pairs {
        crate::image::save_png(&p.source, dir.join(&p.annotation.source))
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        crate::image::save_png(&p.target, dir.join(&p.annotation.target))
            .map_err(|e| std::io::Error::other(e.to_string()))?;
    }
    let set = AnnotationSet { pairs: pairs.iter().map(|p| p.annotation.clone()).collect() };
    let path = dir.join("annotations.json");
    std::fs::write(&path, serde_json::to_string_pretty(&set).expect("serializable"))?;
    Ok(path)
}
