//! Synthetic stand-in data generators. The generators write the exact same
//! on-disk formats the loaders consume (IDX containers, directory-per-video
//! PGM frames plus a JSON manifest), so every ingestion path is exercised
//! end to end without external downloads.

use crate::datasets::{VideoManifestEntry, IDX_IMAGE_MAGIC, IDX_LABEL_MAGIC};
use crate::error::Result;
use crate::io::write_intensity_pgm;
use byteorder::{BigEndian, WriteBytesExt};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::io::{BufWriter, Write};
use std::path::Path;

enum Stroke {
    Line(f64, f64, f64, f64),
    Ellipse(f64, f64, f64, f64),
    Arc(f64, f64, f64, f64, f64, f64),
}

fn digit_strokes(label: usize) -> Vec<Stroke> {
    use Stroke::*;
    match label {
        0 => vec![Ellipse(0.5, 0.5, 0.30, 0.42)],
        1 => vec![Line(0.35, 0.25, 0.55, 0.10), Line(0.55, 0.10, 0.55, 0.90)],
        2 => vec![
            Arc(0.5, 0.30, 0.22, 0.22, 180.0, 420.0),
            Line(0.66, 0.45, 0.30, 0.90),
            Line(0.30, 0.90, 0.72, 0.90),
        ],
        3 => vec![
            Arc(0.48, 0.30, 0.20, 0.20, 150.0, 420.0),
            Arc(0.48, 0.68, 0.22, 0.22, 270.0, 540.0),
        ],
        4 => vec![
            Line(0.60, 0.10, 0.25, 0.62),
            Line(0.25, 0.62, 0.75, 0.62),
            Line(0.62, 0.35, 0.62, 0.92),
        ],
        5 => vec![
            Line(0.70, 0.12, 0.32, 0.12),
            Line(0.32, 0.12, 0.30, 0.48),
            Arc(0.48, 0.65, 0.24, 0.24, 250.0, 540.0),
        ],
        6 => vec![Arc(0.52, 0.30, 0.30, 0.45, 120.0, 250.0), Ellipse(0.48, 0.68, 0.22, 0.22)],
        7 => vec![Line(0.25, 0.12, 0.75, 0.12), Line(0.75, 0.12, 0.42, 0.92)],
        8 => vec![Ellipse(0.5, 0.30, 0.19, 0.19), Ellipse(0.5, 0.70, 0.23, 0.22)],
        9 => vec![
            Ellipse(0.52, 0.32, 0.22, 0.22),
            Arc(0.48, 0.70, 0.30, 0.45, 300.0, 430.0),
            Line(0.73, 0.34, 0.62, 0.90),
        ],
        _ => unreachable!("digit label out of range"),
    }
}

/// Render one stroke-sketched digit with random affine distortion, pen
/// wobble and pixel noise. 28x28, values in [0, 1].
pub fn render_digit(label: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = 28usize;
    let mut points: Vec<(f64, f64)> = Vec::new();
    for s in digit_strokes(label) {
        match s {
            Stroke::Line(x0, y0, x1, y1) => {
                for i in 0..60 {
                    let t = i as f64 / 59.0;
                    points.push((x0 + (x1 - x0) * t, y0 + (y1 - y0) * t));
                }
            }
            Stroke::Ellipse(cx, cy, rx, ry) => {
                for i in 0..120 {
                    let t = i as f64 / 119.0 * std::f64::consts::TAU;
                    points.push((cx + rx * t.cos(), cy + ry * t.sin()));
                }
            }
            Stroke::Arc(cx, cy, rx, ry, a0, a1) => {
                for i in 0..100 {
                    let a = (a0 + (a1 - a0) * i as f64 / 99.0).to_radians();
                    points.push((cx + rx * a.cos(), cy + ry * a.sin()));
                }
            }
        }
    }
    let ang: f64 = rng.gen_range(-0.22..0.22);
    let sc = rng.gen_range(0.85..1.1);
    let shx = rng.gen_range(-0.15..0.15);
    let tx = rng.gen_range(-0.06..0.06);
    let ty = rng.gen_range(-0.06..0.06);
    let (c, s) = (ang.cos(), ang.sin());
    let wobble = Normal::new(0.0, 0.004).unwrap();
    let pen: f64 = rng.gen_range(0.9..1.6);
    let sigma = pen / 2.0;
    let gain = rng.gen_range(0.85..1.0);

    let mut img = Array2::<f64>::zeros((n, n));
    for &(px, py) in &points {
        // rotation * shear, scaled, around the image center, then jitter
        let ux = px - 0.5;
        let uy = py - 0.5;
        let vx = (c * (ux + shx * uy) - s * uy) * sc + 0.5 + tx + wobble.sample(rng);
        let vy = (s * (ux + shx * uy) + c * uy) * sc + 0.5 + ty + wobble.sample(rng);
        let xi = vx * (n - 1) as f64;
        let yi = vy * (n - 1) as f64;
        let r = (3.0 * sigma).ceil() as isize;
        let x0 = (xi.round() as isize - r).max(0);
        let x1 = (xi.round() as isize + r).min(n as isize - 1);
        let y0 = (yi.round() as isize - r).max(0);
        let y1 = (yi.round() as isize + r).min(n as isize - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d2 = (x as f64 - xi).powi(2) + (y as f64 - yi).powi(2);
                let v = (-d2 / (2.0 * sigma * sigma)).exp();
                let cell = &mut img[[y as usize, x as usize]];
                *cell = cell.max(v);
            }
        }
    }
    let noise = Normal::new(0.0, 0.02).unwrap();
    img.mapv_inplace(|v| (v * gain + noise.sample(rng)).clamp(0.0, 1.0));
    img
}

/// Generate a balanced digit dataset and write it as an IDX image/label
/// file pair (`images.idx`, `labels.idx` under `dir`).
pub fn write_digit_idx(dir: &Path, per_class: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = per_class * 10;
    let mut iw = BufWriter::new(std::fs::File::create(dir.join("images.idx"))?);
    iw.write_u32::<BigEndian>(IDX_IMAGE_MAGIC)?;
    iw.write_u32::<BigEndian>(count as u32)?;
    iw.write_u32::<BigEndian>(28)?;
    iw.write_u32::<BigEndian>(28)?;
    let mut lw = BufWriter::new(std::fs::File::create(dir.join("labels.idx"))?);
    lw.write_u32::<BigEndian>(IDX_LABEL_MAGIC)?;
    lw.write_u32::<BigEndian>(count as u32)?;
    for _ in 0..per_class {
        for label in 0..10usize {
            let img = render_digit(label, &mut rng);
            for &v in img.iter() {
                iw.write_u8((v * 255.0).round() as u8)?;
            }
            lw.write_u8(label as u8)?;
        }
    }
    iw.flush()?;
    lw.flush()?;
    Ok(())
}

/// Per-category motion pattern of the synthetic "actor" blob.
fn actor_state(category: usize, t: f64, phase: f64, speed: f64) -> (f64, f64, f64, f64, Vec<(f64, f64, f64)>) {
    // returns (cx, cy, half_w, half_h, satellites[(cx, cy, r)])
    let tau = std::f64::consts::TAU;
    let walk_x = 0.12 + 0.76 * ((t * speed + phase) % 1.0);
    match category {
        // walk: steady horizontal translation with a scissoring stride
        0 => {
            let stride = ((t * 4.0 * speed + phase) * tau).sin();
            (walk_x, 0.62, 0.05 + 0.025 * stride.abs(), 0.15, vec![])
        }
        // run: fast translation with forward lean (wider, shorter)
        1 => {
            let x = 0.12 + 0.76 * ((t * 2.2 * speed + phase) % 1.0);
            (x, 0.64, 0.08, 0.11, vec![])
        }
        // jump: slow drift with big tucked hops
        2 => {
            let hop = ((t * 1.6 * speed + phase) * tau).sin().max(0.0);
            let x = 0.12 + 0.76 * ((t * 0.5 * speed + phase) % 1.0);
            (x, 0.60 - 0.24 * hop, 0.05 + 0.04 * hop, 0.13 - 0.04 * hop, vec![])
        }
        // side gallop: diagonal drift
        3 => {
            let u = (t * speed + phase) % 1.0;
            (0.12 + 0.76 * u, 0.35 + 0.4 * u, 0.06, 0.12, vec![])
        }
        // bend: stationary, height collapses periodically
        4 => {
            let b = 0.5 + 0.5 * ((t * 1.5 * speed + phase) * tau).sin();
            (0.5, 0.62 + 0.08 * b, 0.06, 0.15 - 0.08 * b, vec![])
        }
        // jumping jack: width/height oscillate in antiphase
        5 => {
            let b = 0.5 + 0.5 * ((t * 2.0 * speed + phase) * tau).sin();
            (0.5, 0.60, 0.04 + 0.08 * b, 0.16 - 0.05 * b, vec![])
        }
        // one-hand wave: satellite blob oscillating beside the head
        6 => {
            let a = ((t * 2.5 * speed + phase) * tau).sin();
            (0.5, 0.62, 0.05, 0.14, vec![(0.62 + 0.06 * a, 0.36 - 0.06 * a.abs(), 0.035)])
        }
        // two-hand wave: two satellites in antiphase
        7 => {
            let a = ((t * 2.5 * speed + phase) * tau).sin();
            (
                0.5,
                0.62,
                0.05,
                0.14,
                vec![
                    (0.64 + 0.05 * a, 0.38 - 0.05 * a.abs(), 0.035),
                    (0.36 - 0.05 * a, 0.38 - 0.05 * a.abs(), 0.035),
                ],
            )
        }
        // pjump: vertical oscillation in place
        8 => {
            let hop = ((t * 2.0 * speed + phase) * tau).sin().abs();
            (0.5, 0.62 - 0.2 * hop, 0.055, 0.13, vec![])
        }
        // skip: brisk translation with quick visible bobbing
        9 => {
            let hop = ((t * 6.0 * speed + phase) * tau).sin().abs();
            let x = 0.12 + 0.76 * ((t * 1.4 * speed + phase) % 1.0);
            (x, 0.64 - 0.12 * hop, 0.05, 0.12, vec![])
        }
        _ => unreachable!("action category out of range"),
    }
}

fn render_action_frame(
    category: usize,
    t: f64,
    phase: f64,
    speed: f64,
    size: f64,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    let (cx, cy, hw, hh, sats) = actor_state(category, t, phase, speed);
    let noise = Normal::new(0.0, 0.01).unwrap();
    Array2::from_shape_fn((n, n), |(y, x)| {
        let fx = (x as f64 + 0.5) / n as f64;
        let fy = (y as f64 + 0.5) / n as f64;
        // soft-edged ellipse actor over a mid-gray background
        let dx = (fx - cx) / (hw * size);
        let dy = (fy - cy) / (hh * size);
        let mut v = 0.35 + noise.sample(rng);
        let d = dx * dx + dy * dy;
        if d < 1.0 {
            v = 0.95 - 0.15 * d;
        }
        for &(sx, sy, sr) in &sats {
            let ds = ((fx - sx) / (sr * size)).powi(2) + ((fy - sy) / (sr * size)).powi(2);
            if ds < 1.0 {
                v = v.max(0.9);
            }
        }
        v.clamp(0.0, 1.0)
    })
}

pub struct VideoSynthParams {
    pub categories: usize,
    pub videos_per_category: usize,
    /// Inclusive frame-count range; each video draws uniformly from it.
    pub frames: (usize, usize),
    /// Number of distinct subjects cycled over the videos.
    pub subjects: usize,
    pub grid: usize,
    pub seed: u64,
}

impl VideoSynthParams {
    /// 10 categories x 9 videos, 30-100 frames: the Weizmann-style corpus.
    pub fn weizmann_style(grid: usize, seed: u64) -> Self {
        Self { categories: 10, videos_per_category: 9, frames: (30, 100), subjects: 9, grid, seed }
    }

    /// 6 categories x 25 subjects = 150 scene-1 videos: the KTH-style corpus.
    pub fn kth_style(grid: usize, seed: u64) -> Self {
        Self { categories: 6, videos_per_category: 25, frames: (40, 80), subjects: 25, grid, seed }
    }
}

/// Write a directory-per-video synthetic action corpus plus manifest.json.
pub fn write_video_dataset(root: &Path, p: &VideoSynthParams) -> Result<()> {
    std::fs::create_dir_all(root)?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut manifest = Vec::new();
    for cat in 0..p.categories {
        for v in 0..p.videos_per_category {
            let subject = v % p.subjects + 1;
            let dir_name = format!("cat{cat}_sub{subject:02}_v{v:02}");
            let dir = root.join(&dir_name);
            std::fs::create_dir_all(&dir)?;
            let m = rng.gen_range(p.frames.0..=p.frames.1);
            let phase = rng.gen_range(0.0..1.0);
            // subject-specific gait and build
            let speed = 0.8 + 0.4 * (subject as f64 % 5.0) / 4.0;
            let size = 0.85 + 0.3 * (subject as f64 % 3.0) / 2.0;
            for f in 0..m {
                let t = f as f64 / 30.0;
                let frame = render_action_frame(cat, t, phase, speed, size, p.grid, &mut rng);
                write_intensity_pgm(&dir.join(format!("frame_{f:04}.pgm")), &frame)?;
            }
            manifest.push(VideoManifestEntry {
                video_dir: dir_name,
                label: cat,
                subject,
                scene: 1,
            });
        }
    }
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(root.join("manifest.json"), json)?;
    Ok(())
}
