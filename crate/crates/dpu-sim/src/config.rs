//! Experiment configuration: one JSON document per experiment with an
//! explicit schema version. Loading applies documented defaults; the fully
//! populated document (defaults included) is echoed into every run's
//! artifacts and into the report's config snapshot.

use crate::datasets::{
    load_mnist, load_video_dataset, preprocess_frames, split_subsequences, ImageSample,
    Preprocess, SubSequence, VideoDatasetKind,
};
use crate::dpu::{DpuConfig, ErrorModel};
use crate::error::{DpuError, Result};
use crate::io::DpuConfigFile;
use crate::num::Real;
use crate::trainer::{AdaptiveStagePlan, TrainConfig};
use std::path::{Path, PathBuf};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    D2nn,
    Dnin,
    Drnn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Zeros,
    Random,
}

/// Architecture hyper-parameters. Unused fields for the selected `arch`
/// are ignored but still echoed.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    pub classes: usize,
    /// D2NN: number of cascaded phase layers.
    pub layers: usize,
    /// D-NIN: output feature maps per block.
    pub blocks: Vec<usize>,
    /// D-NIN-1++: append an electronic fully connected tail.
    pub electronic_fc: bool,
    /// D-RNN fusing coefficient lambda.
    pub fusing_lambda: f64,
    /// D-RNN sub-sequence length N.
    pub seq_len: usize,
    pub init: InitKind,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            classes: 10,
            layers: 3,
            blocks: vec![3],
            electronic_fc: false,
            fusing_lambda: 0.2,
            seq_len: 3,
            init: InitKind::Zeros,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoStyle {
    Weizmann,
    Kth,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Synthetic handwritten-digit corpus written to and read back from
    /// IDX containers under `dir` (generated on first use).
    SynthDigits { dir: PathBuf, train_per_class: usize, test_per_class: usize, seed: u64 },
    /// Pre-existing IDX image/label files (e.g. real MNIST).
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    /// Synthetic action-video corpus written to and read back from a
    /// directory-of-PGM-frames layout under `dir` (generated on first use).
    SynthVideo { dir: PathBuf, style: VideoStyle, seed: u64 },
    /// Pre-existing video corpus with a manifest.json at its root.
    Video { root: PathBuf, style: VideoStyle, foreground_fraction: f64 },
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    /// D2NN staged plans (ignored by D-RNN read-out-only adaptation).
    pub stages: Vec<AdaptiveStagePlan>,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self { stages: Vec::new() }
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReadoutConfig {
    /// D-RNN++: pooled hidden-state nodes for the ridge read-out.
    pub pooled_nodes: usize,
    /// Ridge regularization; None selects a scale-aware default.
    pub alpha: Option<f64>,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        Self { pooled_nodes: 2500, alpha: None }
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Pooled-node counts for the accuracy-vs-nodes sweep.
    pub pooled_nodes: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { pooled_nodes: vec![100, 400, 900, 1600, 2500] }
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub arch: Arch,
    /// Modulator/sensor grid side (square). Ignored when `dpu` is given.
    #[serde(default = "default_grid")]
    pub grid: usize,
    /// Full optical-stage override; defaults derive from `grid`.
    #[serde(default)]
    pub dpu: Option<DpuConfigFile>,
    #[serde(default = "default_dataset")]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "ErrorModel::disabled")]
    pub error_model: ErrorModel,
    #[serde(default)]
    pub model: ModelParams,
    #[serde(default)]
    pub adapt: AdaptConfig,
    #[serde(default)]
    pub readout: ReadoutConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    /// Existing model directory consumed by inject/adapt/readout/eval/sweep.
    #[serde(default)]
    pub model_dir: Option<PathBuf>,
    /// Existing run report consumed by the `report` verb.
    #[serde(default)]
    pub report_path: Option<PathBuf>,
    /// Cap on training/test samples (sub-sequences for video), 0 = all.
    #[serde(default)]
    pub max_train: usize,
    #[serde(default)]
    pub max_test: usize,
}

fn default_grid() -> usize {
    112
}

fn default_dataset() -> DatasetConfig {
    DatasetConfig::SynthDigits {
        dir: PathBuf::from("data/digits"),
        train_per_class: 1000,
        test_per_class: 200,
        seed: 9,
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DpuError::Usage(format!("config {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| {
            DpuError::Usage(format!(
                "config {} line {} column {}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(DpuError::Usage(format!(
                "config schema_version {} unsupported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.grid < 8 {
            return Err(DpuError::Usage("grid must be at least 8".into()));
        }
        self.train.validate().map_err(|e| DpuError::Usage(e.to_string()))?;
        if self.model.classes < 2 {
            return Err(DpuError::Usage("classes must be at least 2".into()));
        }
        if matches!(self.arch, Arch::D2nn) && self.model.layers < 1 {
            return Err(DpuError::Usage("d2nn needs at least one layer".into()));
        }
        if matches!(self.arch, Arch::Dnin) && self.model.blocks.iter().any(|&b| b == 0) {
            return Err(DpuError::Usage("dnin blocks must have at least one map".into()));
        }
        if matches!(self.arch, Arch::Drnn)
            && !(0.0..1.0).contains(&self.model.fusing_lambda)
        {
            return Err(DpuError::Usage("fusing_lambda must lie in [0,1)".into()));
        }
        match &self.dataset {
            DatasetConfig::SynthDigits { train_per_class, test_per_class, .. } => {
                if *train_per_class == 0 || *test_per_class == 0 {
                    return Err(DpuError::Usage("per-class counts must be positive".into()));
                }
            }
            DatasetConfig::Video { foreground_fraction, .. } => {
                if !(0.0..=1.0).contains(foreground_fraction) {
                    return Err(DpuError::Usage("foreground_fraction must lie in [0,1]".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Optical-stage config: the explicit `dpu` block when present, else
    /// the documented grid-derived defaults.
    pub fn dpu_config<R: Real>(&self) -> Result<DpuConfig<R>> {
        match &self.dpu {
            Some(file) => file.to_cfg(),
            None => Ok(DpuConfig::with_grid(self.grid)),
        }
    }

    /// Fully populated document (all defaults applied), for echoing into
    /// run artifacts and report snapshots.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if self.dpu.is_none() {
            if let Ok(dc) = self.dpu_config::<f64>() {
                v["dpu"] = serde_json::to_value(DpuConfigFile::from_cfg(&dc))
                    .expect("dpu config serializes");
            }
        }
        v
    }

    pub fn write_echo(&self, out_dir: &Path) -> Result<()> {
        let f = std::fs::File::create(out_dir.join("config.json"))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), &self.echo())
            .map_err(|e| DpuError::Format(format!("config echo: {e}")))?;
        Ok(())
    }
}

fn cap<T>(mut v: Vec<T>, max: usize) -> Vec<T> {
    if max > 0 && v.len() > max {
        v.truncate(max);
    }
    v
}

/// Materialized image dataset for feed-forward runs.
pub fn load_image_sets<R: Real>(
    cfg: &ExperimentConfig,
) -> Result<(Vec<ImageSample<R>>, Vec<ImageSample<R>>)> {
    let grid = (cfg.grid, cfg.grid);
    let (train, test) = match &cfg.dataset {
        DatasetConfig::SynthDigits { dir, train_per_class, test_per_class, seed } => {
            let train_dir = dir.join("train");
            let test_dir = dir.join("test");
            if !train_dir.join("images.idx").exists() {
                crate::synth::write_digit_idx(&train_dir, *train_per_class, *seed)?;
            }
            if !test_dir.join("images.idx").exists() {
                crate::synth::write_digit_idx(&test_dir, *test_per_class, seed.wrapping_add(1))?;
            }
            (
                load_mnist(&train_dir.join("images.idx"), &train_dir.join("labels.idx"), grid)?,
                load_mnist(&test_dir.join("images.idx"), &test_dir.join("labels.idx"), grid)?,
            )
        }
        DatasetConfig::Idx { train_images, train_labels, test_images, test_labels } => (
            load_mnist(train_images, train_labels, grid)?,
            load_mnist(test_images, test_labels, grid)?,
        ),
        _ => {
            return Err(DpuError::Usage(
                "feed-forward architectures need an image dataset (synth_digits or idx)".into(),
            ))
        }
    };
    Ok((cap(train, cfg.max_train), cap(test, cfg.max_test)))
}

/// Materialized sub-sequence dataset for recurrent runs:
/// (train, test, categories).
pub fn load_video_sets<R: Real>(
    cfg: &ExperimentConfig,
) -> Result<(Vec<SubSequence<R>>, Vec<SubSequence<R>>, usize)> {
    let grid = (cfg.grid, cfg.grid);
    let (root, style, foreground) = match &cfg.dataset {
        DatasetConfig::SynthVideo { dir, style, seed } => {
            if !dir.join("manifest.json").exists() {
                let params = match style {
                    VideoStyle::Weizmann => {
                        crate::synth::VideoSynthParams::weizmann_style(cfg.grid, *seed)
                    }
                    VideoStyle::Kth => crate::synth::VideoSynthParams::kth_style(cfg.grid, *seed),
                };
                crate::synth::write_video_dataset(dir, &params)?;
            }
            (dir.clone(), *style, 0.2)
        }
        DatasetConfig::Video { root, style, foreground_fraction } => {
            (root.clone(), *style, *foreground_fraction)
        }
        _ => {
            return Err(DpuError::Usage(
                "recurrent architectures need a video dataset (synth_video or video)".into(),
            ))
        }
    };
    let kind = match style {
        VideoStyle::Weizmann => VideoDatasetKind::Weizmann,
        VideoStyle::Kth => VideoDatasetKind::KthScene1,
    };
    let ds = load_video_dataset::<R>(&root, grid, kind)?;
    let categories = ds.categories;
    let make = |videos: &[crate::datasets::VideoSample<R>]| -> Result<Vec<SubSequence<R>>> {
        let mut subs = Vec::new();
        for v in videos {
            let frames =
                preprocess_frames(&v.frames, Preprocess::ThresholdForeground {
                    fraction: foreground,
                });
            let clean = crate::datasets::VideoSample {
                frames,
                label: v.label,
                source_id: v.source_id.clone(),
                subject: v.subject,
            };
            subs.extend(split_subsequences(&clean, cfg.model.seq_len)?);
        }
        Ok(subs)
    };
    let train = cap(make(&ds.train)?, cfg.max_train);
    let test = cap(make(&ds.test)?, cfg.max_test);
    Ok((train, test, categories))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({ "schema_version": 1, "arch": "d2nn" })
    }

    #[test]
    fn defaults_are_applied_and_echoed() {
        let cfg: ExperimentConfig = serde_json::from_value(minimal()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.grid, 112);
        assert_eq!(cfg.model.layers, 3);
        assert_eq!(cfg.train.batch_size, 20);
        let echo = cfg.echo();
        // defaults not present in the source document appear in the echo
        assert_eq!(echo["train"]["batch_size"], 20);
        assert!(echo["dpu"]["grid"].is_array() || echo["dpu"]["grid"].is_u64());
        assert_eq!(echo["sweep"]["pooled_nodes"][4], 2500);
    }

    #[test]
    fn unknown_fields_and_bad_schema_are_usage_errors() {
        let mut v = minimal();
        v["bogus"] = serde_json::json!(1);
        assert!(serde_json::from_value::<ExperimentConfig>(v).is_err());
        let mut v = minimal();
        v["schema_version"] = serde_json::json!(99);
        let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
        assert!(matches!(cfg.validate(), Err(DpuError::Usage(_))));
    }

    #[test]
    fn load_reports_line_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, "{\n  \"schema_version\": 1,\n  \"arch\": oops\n}").unwrap();
        let err = ExperimentConfig::load(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn synth_digit_sets_generate_once_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg: ExperimentConfig = serde_json::from_value(minimal()).unwrap();
        cfg.grid = 32;
        cfg.dataset = DatasetConfig::SynthDigits {
            dir: dir.path().to_path_buf(),
            train_per_class: 2,
            test_per_class: 1,
            seed: 3,
        };
        cfg.max_train = 5;
        let (train, test) = load_image_sets::<f64>(&cfg).unwrap();
        assert_eq!(train.len(), 5);
        assert_eq!(test.len(), 10);
        assert_eq!(train[0].image.dim(), (32, 32));
        // second load hits the cached files
        let (train2, _) = load_image_sets::<f64>(&cfg).unwrap();
        assert_eq!(train[0].image, train2[0].image);
    }
}
