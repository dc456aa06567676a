//! Dataset ingestion: IDX digit containers, directory-per-video frame
//! datasets with a JSON manifest, frame preprocessing and sub-sequence
//! splitting for the recurrent network.

use crate::error::{DpuError, Result};
use crate::io::read_gray_image;
use crate::num::Real;
use byteorder::{BigEndian, ReadBytesExt};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::io::{BufReader, Read, Write};
use std::path::Path;

pub const IDX_IMAGE_MAGIC: u32 = 2051;
pub const IDX_LABEL_MAGIC: u32 = 2049;

/// One classified still image on the DPU grid, values in [0, 1].
#[derive(Clone, Debug)]
pub struct ImageSample<R: Real> {
    pub image: Array2<R>,
    pub label: usize,
}

/// One video: ordered frames, a label, and an identity used for voting.
#[derive(Clone, Debug)]
pub struct VideoSample<R: Real> {
    pub frames: Vec<Array2<R>>,
    pub label: usize,
    pub source_id: String,
    pub subject: usize,
}

/// A length-N window of one video, tagged with its source.
#[derive(Clone, Debug)]
pub struct SubSequence<R: Real> {
    pub frames: Vec<Array2<R>>,
    pub label: usize,
    pub source_id: String,
}

/// Nearest-neighbor resize preserving aspect ratio, centered on a
/// zero-padded target grid.
pub fn fit_to_grid<R: Real>(img: &Array2<R>, grid: (usize, usize)) -> Array2<R> {
    let (h, w) = img.dim();
    let scale = (grid.0 as f64 / h as f64).min(grid.1 as f64 / w as f64);
    let th = ((h as f64 * scale).round() as usize).clamp(1, grid.0);
    let tw = ((w as f64 * scale).round() as usize).clamp(1, grid.1);
    let oy = (grid.0 - th) / 2;
    let ox = (grid.1 - tw) / 2;
    let mut out = Array2::zeros(grid);
    for y in 0..th {
        for x in 0..tw {
            let sy = ((y as f64 + 0.5) / scale) as usize;
            let sx = ((x as f64 + 0.5) / scale) as usize;
            out[[oy + y, ox + x]] = img[[sy.min(h - 1), sx.min(w - 1)]];
        }
    }
    out
}

fn read_idx_u32(r: &mut impl Read) -> Result<u32> {
    Ok(r.read_u32::<BigEndian>()?)
}

/// Load an IDX image/label file pair: pixels scaled to [0, 1] and
/// nearest-neighbor fitted to the DPU grid.
pub fn load_mnist<R: Real>(
    image_file: &Path,
    label_file: &Path,
    grid: (usize, usize),
) -> Result<Vec<ImageSample<R>>> {
    let mut ir = BufReader::new(std::fs::File::open(image_file)?);
    let magic = read_idx_u32(&mut ir)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(DpuError::Format(format!("bad IDX image magic {magic}")));
    }
    let count = read_idx_u32(&mut ir)? as usize;
    let h = read_idx_u32(&mut ir)? as usize;
    let w = read_idx_u32(&mut ir)? as usize;
    if h == 0 || w == 0 || h > grid.0 || w > grid.1 {
        return Err(DpuError::Format(format!("IDX image size {h}x{w} unusable on grid {grid:?}")));
    }
    let mut pixels = vec![0u8; count * h * w];
    ir.read_exact(&mut pixels)
        .map_err(|_| DpuError::Format("IDX image payload truncated".into()))?;

    let mut lr = BufReader::new(std::fs::File::open(label_file)?);
    let lmagic = read_idx_u32(&mut lr)?;
    if lmagic != IDX_LABEL_MAGIC {
        return Err(DpuError::Format(format!("bad IDX label magic {lmagic}")));
    }
    let lcount = read_idx_u32(&mut lr)? as usize;
    if lcount != count {
        return Err(DpuError::Format(format!(
            "IDX count mismatch: {count} images vs {lcount} labels"
        )));
    }
    let mut labels = vec![0u8; count];
    lr.read_exact(&mut labels)
        .map_err(|_| DpuError::Format("IDX label payload truncated".into()))?;

    let inv = 1.0 / 255.0;
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let raw = Array2::from_shape_fn((h, w), |(y, x)| {
            R::from_f64c(pixels[i * h * w + y * w + x] as f64 * inv)
        });
        samples.push(ImageSample { image: fit_to_grid(&raw, grid), label: labels[i] as usize });
    }
    Ok(samples)
}

/// Entry in the video-dataset manifest.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct VideoManifestEntry {
    pub video_dir: String,
    pub label: usize,
    pub subject: usize,
    pub scene: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoDatasetKind {
    /// 90 videos, 10 categories; seeded 60/30 split by video.
    Weizmann,
    /// Scene-1 subset; subjects 1..=16 train, the rest test.
    KthScene1,
}

/// A video dataset split into train/test video lists.
pub struct VideoDataset<R: Real> {
    pub train: Vec<VideoSample<R>>,
    pub test: Vec<VideoSample<R>>,
    pub categories: usize,
}

impl<R: Real> VideoDataset<R> {
    /// (source_id, label, is_train) rows for the split audit CSV.
    pub fn split_rows(&self) -> Vec<(String, usize, bool)> {
        let mut rows: Vec<_> = self
            .train
            .iter()
            .map(|v| (v.source_id.clone(), v.label, true))
            .chain(self.test.iter().map(|v| (v.source_id.clone(), v.label, false)))
            .collect();
        rows.sort();
        rows
    }

    pub fn export_split_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "source_id,label,split")?;
        for (id, label, train) in self.split_rows() {
            writeln!(f, "{id},{label},{}", if train { "train" } else { "test" })?;
        }
        Ok(())
    }
}

/// Seed of the fixed Weizmann-style 60/30 split.
pub const WEIZMANN_SPLIT_SEED: u64 = 7;

/// Load a directory-per-video dataset described by `manifest.json` at the
/// root. Frames are sorted by file name, loaded as grayscale [0, 1], and
/// aspect-preserving fitted to the grid.
pub fn load_video_dataset<R: Real>(
    root: &Path,
    grid: (usize, usize),
    kind: VideoDatasetKind,
) -> Result<VideoDataset<R>> {
    let text = std::fs::read_to_string(root.join("manifest.json"))?;
    let entries: Vec<VideoManifestEntry> = serde_json::from_str(&text)?;
    if entries.is_empty() {
        return Err(DpuError::Format("empty video manifest".into()));
    }
    let mut videos = Vec::new();
    for e in &entries {
        if kind == VideoDatasetKind::KthScene1 && e.scene != 1 {
            continue;
        }
        let dir = root.join(&e.video_dir);
        let mut files: Vec<_> = std::fs::read_dir(&dir)
            .map_err(|_| DpuError::Format(format!("missing video directory {}", e.video_dir)))?
            .filter_map(|d| d.ok().map(|d| d.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(DpuError::Format(format!("video directory {} has no frames", e.video_dir)));
        }
        let mut frames = Vec::with_capacity(files.len());
        for f in &files {
            let img: Array2<R> = read_gray_image(f)?;
            frames.push(fit_to_grid(&img, grid));
        }
        videos.push(VideoSample {
            frames,
            label: e.label,
            source_id: e.video_dir.clone(),
            subject: e.subject,
        });
    }
    let categories = videos.iter().map(|v| v.label).max().unwrap() + 1;
    let (train, test) = match kind {
        VideoDatasetKind::Weizmann => {
            // class-stratified 2:1 split, fixed seed, by video
            let mut by_class: BTreeMap<usize, Vec<VideoSample<R>>> = BTreeMap::new();
            for v in videos {
                by_class.entry(v.label).or_default().push(v);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(WEIZMANN_SPLIT_SEED);
            let mut train = Vec::new();
            let mut test = Vec::new();
            for (_, mut vs) in by_class {
                vs.sort_by(|a, b| a.source_id.cmp(&b.source_id));
                let mut idx: Vec<usize> = (0..vs.len()).collect();
                idx.shuffle(&mut rng);
                let n_train = vs.len() * 2 / 3;
                let train_idx: std::collections::BTreeSet<usize> =
                    idx.into_iter().take(n_train).collect();
                for (i, v) in vs.into_iter().enumerate() {
                    if train_idx.contains(&i) {
                        train.push(v);
                    } else {
                        test.push(v);
                    }
                }
            }
            (train, test)
        }
        VideoDatasetKind::KthScene1 => {
            let (train, test): (Vec<_>, Vec<_>) = videos.into_iter().partition(|v| v.subject <= 16);
            (train, test)
        }
    };
    if train.is_empty() || test.is_empty() {
        return Err(DpuError::Format("degenerate train/test video split".into()));
    }
    Ok(VideoDataset { train, test, categories })
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Preprocess {
    /// Subtract the per-pixel temporal median background, take the absolute
    /// difference, and binarize at `fraction` of each frame's maximum.
    ThresholdForeground { fraction: f64 },
    RawGrayscale,
}

impl Preprocess {
    pub fn default_foreground() -> Self {
        Preprocess::ThresholdForeground { fraction: 0.2 }
    }
}

pub fn preprocess_frames<R: Real>(frames: &[Array2<R>], method: Preprocess) -> Vec<Array2<R>> {
    match method {
        Preprocess::RawGrayscale => frames.to_vec(),
        Preprocess::ThresholdForeground { fraction } => {
            if frames.is_empty() {
                return Vec::new();
            }
            let dim = frames[0].dim();
            let background = Array2::from_shape_fn(dim, |idx| {
                let mut vals: Vec<R> = frames.iter().map(|f| f[idx]).collect();
                vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let n = vals.len();
                if n % 2 == 1 {
                    vals[n / 2]
                } else {
                    (vals[n / 2 - 1] + vals[n / 2]) / R::from_f64c(2.0)
                }
            });
            let frac = R::from_f64c(fraction);
            frames
                .iter()
                .map(|f| {
                    let diff = Array2::from_shape_fn(dim, |idx| (f[idx] - background[idx]).abs());
                    let max = diff.iter().cloned().fold(R::zero(), R::max);
                    if max <= R::zero() {
                        return Array2::zeros(dim);
                    }
                    let thresh = frac * max;
                    diff.mapv(|v| if v > thresh { R::one() } else { R::zero() })
                })
                .collect()
        }
    }
}

/// Consecutive non-overlapping windows of length n; the trailing remainder
/// is dropped. Videos shorter than n yield no sub-sequences.
pub fn split_subsequences<R: Real>(video: &VideoSample<R>, n: usize) -> Result<Vec<SubSequence<R>>> {
    if n < 1 {
        return Err(DpuError::Usage("sub-sequence length must be >= 1".into()));
    }
    let m = video.frames.len();
    if m < n {
        eprintln!(
            "warning: video {} has {m} frames, shorter than the window {n}; skipped",
            video.source_id
        );
        return Ok(Vec::new());
    }
    Ok((0..m / n)
        .map(|i| SubSequence {
            frames: video.frames[i * n..(i + 1) * n].to_vec(),
            label: video.label,
            source_id: video.source_id.clone(),
        })
        .collect())
}
