//! On-disk formats: the binary matrix/field container, 8-bit PGM image
//! export, and the versioned model manifest that makes a trained network a
//! directory of phase binaries plus one JSON file.

use crate::dpu::DpuConfig;
use crate::error::{DpuError, Result};
use crate::field::{ComplexField, InputMode, PhaseLayer, Quantizer};
use crate::network::{
    D2nnSpec, DetectorRegions, DninBlock, DninSpec, DrnnReadout, DrnnSpec,
};
use crate::num::Real;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use num_complex::Complex;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

/// Current binary container revision.
const MAGIC: &[u8; 4] = b"DPU1";
const KIND_MATRIX: u8 = 1;
const KIND_FIELD: u8 = 2;

fn write_header(w: &mut impl Write, kind: u8, dim: (usize, usize)) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u8(kind)?;
    w.write_u64::<LittleEndian>(dim.0 as u64)?;
    w.write_u64::<LittleEndian>(dim.1 as u64)?;
    Ok(())
}

fn read_header(r: &mut impl Read, expect_kind: u8) -> Result<(usize, usize)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DpuError::Format("bad container magic".into()));
    }
    let kind = r.read_u8()?;
    if kind != expect_kind {
        return Err(DpuError::Format(format!(
            "container kind {kind} does not match expected {expect_kind}"
        )));
    }
    let h = r.read_u64::<LittleEndian>()? as usize;
    let w = r.read_u64::<LittleEndian>()? as usize;
    if h == 0 || w == 0 || h.checked_mul(w).is_none() {
        return Err(DpuError::Format("bad container dimensions".into()));
    }
    Ok((h, w))
}

/// Write a real matrix (phase layer payloads use this) as little-endian f64,
/// row-major.
pub fn write_matrix<R: Real>(path: &Path, m: &Array2<R>) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut w, KIND_MATRIX, m.dim())?;
    for &v in m.iter() {
        w.write_f64::<LittleEndian>(v.to_f64c())?;
    }
    Ok(())
}

pub fn read_matrix<R: Real>(path: &Path) -> Result<Array2<R>> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let (h, w) = read_header(&mut r, KIND_MATRIX)?;
    let mut data = Vec::with_capacity(h * w);
    for _ in 0..h * w {
        data.push(R::from_f64c(r.read_f64::<LittleEndian>()?));
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(DpuError::Format("trailing bytes after matrix payload".into()));
    }
    Array2::from_shape_vec((h, w), data)
        .map_err(|e| DpuError::Format(format!("matrix shape: {e}")))
}

pub fn write_phase_layer<R: Real>(path: &Path, layer: &PhaseLayer<R>) -> Result<()> {
    write_matrix(path, &layer.raw)
}

pub fn read_phase_layer<R: Real>(path: &Path) -> Result<PhaseLayer<R>> {
    Ok(PhaseLayer::new(read_matrix(path)?))
}

/// Complex field container: geometry (pitch, wavelength) then interleaved
/// re/im little-endian f64, row-major.
pub fn write_field<R: Real>(path: &Path, field: &ComplexField<R>) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut w, KIND_FIELD, field.grid.dim())?;
    w.write_f64::<LittleEndian>(field.pitch.to_f64c())?;
    w.write_f64::<LittleEndian>(field.wavelength.to_f64c())?;
    for v in field.grid.iter() {
        w.write_f64::<LittleEndian>(v.re.to_f64c())?;
        w.write_f64::<LittleEndian>(v.im.to_f64c())?;
    }
    Ok(())
}

pub fn read_field<R: Real>(path: &Path) -> Result<ComplexField<R>> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let (h, w) = read_header(&mut r, KIND_FIELD)?;
    let pitch = R::from_f64c(r.read_f64::<LittleEndian>()?);
    let wavelength = R::from_f64c(r.read_f64::<LittleEndian>()?);
    let mut data = Vec::with_capacity(h * w);
    for _ in 0..h * w {
        let re = R::from_f64c(r.read_f64::<LittleEndian>()?);
        let im = R::from_f64c(r.read_f64::<LittleEndian>()?);
        data.push(Complex::new(re, im));
    }
    let grid = Array2::from_shape_vec((h, w), data)
        .map_err(|e| DpuError::Format(format!("field shape: {e}")))?;
    ComplexField::new(grid, pitch, wavelength)
}

/// 8-bit PGM of a phase layer: [0, 2pi) maps linearly onto [0, 255].
pub fn write_phase_pgm<R: Real>(path: &Path, layer: &PhaseLayer<R>) -> Result<()> {
    let wrapped = layer.wrapped();
    let scale = 256.0 / R::two_pi().to_f64c();
    write_pgm_u8(path, &wrapped.mapv(|p| (p.to_f64c() * scale).floor().min(255.0) as u8))
}

/// 8-bit PGM of a normalized intensity image; values clamp to [0, 1].
pub fn write_intensity_pgm<R: Real>(path: &Path, img: &Array2<R>) -> Result<()> {
    write_pgm_u8(
        path,
        &img.mapv(|v| (v.to_f64c().clamp(0.0, 1.0) * 255.0).round() as u8),
    )
}

fn write_pgm_u8(path: &Path, img: &Array2<u8>) -> Result<()> {
    let (h, w) = img.dim();
    let buf = image::GrayImage::from_raw(w as u32, h as u32, img.iter().cloned().collect())
        .ok_or_else(|| DpuError::Format("pgm buffer size mismatch".into()))?;
    buf.save_with_format(path, image::ImageFormat::Pnm)
        .map_err(|e| DpuError::Format(format!("pgm write {}: {e}", path.display())))
}

/// Grayscale image file (PGM/PNG) loaded as [0, 1] reals.
pub fn read_gray_image<R: Real>(path: &Path) -> Result<Array2<R>> {
    let img = image::open(path)
        .map_err(|e| DpuError::Format(format!("image read {}: {e}", path.display())))?
        .into_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        R::from_f64c(img.get_pixel(x as u32, y as u32)[0] as f64 / 255.0)
    }))
}

// ---------------------------------------------------------------------------
// Model manifest

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "model.json";

/// Serializable view of a DpuConfig (concrete f64, converted on load).
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct DpuConfigFile {
    pub grid: (usize, usize),
    pub pitch: f64,
    pub wavelength: f64,
    pub pre_distance: f64,
    pub post_distance: f64,
    pub input_mode: InputMode,
    pub hidden_mode: InputMode,
    pub phase_bits: u32,
    pub measure_bits: u32,
    pub pad_factor: usize,
    pub band_limit: bool,
}

impl DpuConfigFile {
    pub fn from_cfg<R: Real>(cfg: &DpuConfig<R>) -> Self {
        Self {
            grid: cfg.grid,
            pitch: cfg.pitch.to_f64c(),
            wavelength: cfg.wavelength.to_f64c(),
            pre_distance: cfg.pre_distance.to_f64c(),
            post_distance: cfg.post_distance.to_f64c(),
            input_mode: cfg.input_mode,
            hidden_mode: cfg.hidden_mode,
            phase_bits: cfg.phase_quantizer.bits,
            measure_bits: cfg.measure_quantizer.bits,
            pad_factor: cfg.pad_factor,
            band_limit: cfg.band_limit,
        }
    }

    pub fn to_cfg<R: Real>(&self) -> Result<DpuConfig<R>> {
        let cfg = DpuConfig {
            grid: self.grid,
            pitch: R::from_f64c(self.pitch),
            wavelength: R::from_f64c(self.wavelength),
            pre_distance: R::from_f64c(self.pre_distance),
            post_distance: R::from_f64c(self.post_distance),
            input_mode: self.input_mode,
            hidden_mode: self.hidden_mode,
            phase_quantizer: Quantizer::new(self.phase_bits, R::two_pi(), false)?,
            measure_quantizer: Quantizer::new(self.measure_bits, R::one(), true)?,
            pad_factor: self.pad_factor,
            band_limit: self.band_limit,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReadoutManifest {
    Dpu { layer: String },
    Electronic { pooled_nodes: usize, weights: String },
}

/// One trained model on disk: this manifest plus the referenced binaries.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub arch: String,
    pub dpu: DpuConfigFile,
    pub regions: DetectorRegions,
    pub decision_coeffs: Vec<f64>,
    /// D2NN cascade layers, or D-NIN per-block layer files.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layers: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub blocks: Vec<BlockManifest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusion: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout_layer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub electronic_fc: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_layer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readin_layer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusing_lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout: Option<ReadoutManifest>,
}

/// A trained network of any of the three architectures.
pub enum ModelSpec<R: Real> {
    D2nn(D2nnSpec<R>),
    Dnin(DninSpec<R>),
    Drnn(DrnnSpec<R>),
}

impl<R: Real> ModelSpec<R> {
    pub fn arch(&self) -> &'static str {
        match self {
            ModelSpec::D2nn(_) => "d2nn",
            ModelSpec::Dnin(_) => "dnin",
            ModelSpec::Drnn(_) => "drnn",
        }
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct BlockManifest {
    pub dpu_layers: Vec<String>,
    pub beta: String,
}

fn coeffs_out<R: Real>(c: &[R]) -> Vec<f64> {
    c.iter().map(|v| v.to_f64c()).collect()
}

fn coeffs_in<R: Real>(c: &[f64]) -> Vec<R> {
    c.iter().map(|&v| R::from_f64c(v)).collect()
}

/// Save a model as `dir/model.json` plus binary payload files.
pub fn save_model<R: Real>(
    dir: &Path,
    cfg: &DpuConfig<R>,
    model: &ModelSpec<R>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut m = ModelManifest {
        format_version: MANIFEST_VERSION,
        arch: model.arch().to_string(),
        dpu: DpuConfigFile::from_cfg(cfg),
        regions: DetectorRegions { regions: vec![], rows: 0, cols: 0 },
        decision_coeffs: vec![],
        layers: vec![],
        blocks: vec![],
        fusion: None,
        readout_layer: None,
        electronic_fc: None,
        memory_layer: None,
        readin_layer: None,
        fusing_lambda: None,
        seq_len: None,
        readout: None,
    };
    match model {
        ModelSpec::D2nn(spec) => {
            m.regions = spec.regions.clone();
            m.decision_coeffs = coeffs_out(&spec.decision_coeffs);
            for (i, layer) in spec.layers.iter().enumerate() {
                let name = format!("layer_{i:02}.dpb");
                write_phase_layer(&dir.join(&name), layer)?;
                m.layers.push(name);
            }
        }
        ModelSpec::Dnin(spec) => {
            m.regions = spec.regions.clone();
            m.decision_coeffs = coeffs_out(&spec.decision_coeffs);
            for (bi, block) in spec.blocks.iter().enumerate() {
                let mut files = Vec::new();
                for (j, layer) in block.dpu_layers.iter().enumerate() {
                    let name = format!("block_{bi:02}_layer_{j:02}.dpb");
                    write_phase_layer(&dir.join(&name), layer)?;
                    files.push(name);
                }
                let beta_name = format!("block_{bi:02}_beta.dpb");
                write_matrix(&dir.join(&beta_name), &block.beta)?;
                m.blocks.push(BlockManifest { dpu_layers: files, beta: beta_name });
            }
            m.fusion = Some(coeffs_out(&spec.fusion));
            let ro = "readout.dpb".to_string();
            write_phase_layer(&dir.join(&ro), &spec.readout_layer)?;
            m.readout_layer = Some(ro);
            if let Some(fc) = &spec.electronic_fc {
                let name = "electronic_fc.dpb".to_string();
                write_matrix(&dir.join(&name), fc)?;
                m.electronic_fc = Some(name);
            }
        }
        ModelSpec::Drnn(spec) => {
            m.regions = spec.regions.clone();
            m.decision_coeffs = coeffs_out(&spec.decision_coeffs);
            let mem = "memory.dpb".to_string();
            write_phase_layer(&dir.join(&mem), &spec.memory_layer)?;
            m.memory_layer = Some(mem);
            let ri = "readin.dpb".to_string();
            write_phase_layer(&dir.join(&ri), &spec.readin_layer)?;
            m.readin_layer = Some(ri);
            m.fusing_lambda = Some(spec.fusing_lambda.to_f64c());
            m.seq_len = Some(spec.seq_len);
            m.readout = Some(match &spec.readout {
                DrnnReadout::Dpu { layer } => {
                    let name = "readout.dpb".to_string();
                    write_phase_layer(&dir.join(&name), layer)?;
                    ReadoutManifest::Dpu { layer: name }
                }
                DrnnReadout::Electronic { pooled_nodes, weights } => {
                    let name = "readout_weights.dpb".to_string();
                    write_matrix(&dir.join(&name), weights)?;
                    ReadoutManifest::Electronic { pooled_nodes: *pooled_nodes, weights: name }
                }
            });
        }
    }
    let json = serde_json::to_string_pretty(&m)?;
    std::fs::write(dir.join(MANIFEST_NAME), json)?;
    Ok(())
}

fn manifest_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

/// Load a model directory written by `save_model`.
pub fn load_model<R: Real>(dir: &Path) -> Result<(DpuConfig<R>, ModelSpec<R>)> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_NAME))?;
    let m: ModelManifest = serde_json::from_str(&text)?;
    if m.format_version != MANIFEST_VERSION {
        return Err(DpuError::Format(format!(
            "manifest version {} unsupported (expected {MANIFEST_VERSION})",
            m.format_version
        )));
    }
    let cfg: DpuConfig<R> = m.dpu.to_cfg()?;
    let need = |o: &Option<String>, what: &str| -> Result<String> {
        o.clone().ok_or_else(|| DpuError::Format(format!("manifest missing {what}")))
    };
    let model = match m.arch.as_str() {
        "d2nn" => {
            let mut layers = Vec::new();
            for name in &m.layers {
                layers.push(read_phase_layer(&manifest_path(dir, name))?);
            }
            let mut spec = D2nnSpec::new(layers, m.regions.clone())?;
            spec.decision_coeffs = coeffs_in(&m.decision_coeffs);
            ModelSpec::D2nn(spec)
        }
        "dnin" => {
            let mut blocks = Vec::new();
            for b in &m.blocks {
                let mut dpu_layers = Vec::new();
                for name in &b.dpu_layers {
                    dpu_layers.push(read_phase_layer(&manifest_path(dir, name))?);
                }
                let beta = read_matrix(&manifest_path(dir, &b.beta))?;
                blocks.push(DninBlock { dpu_layers, beta });
            }
            let fusion = m
                .fusion
                .as_ref()
                .ok_or_else(|| DpuError::Format("manifest missing fusion".into()))?;
            let spec = DninSpec {
                blocks,
                fusion: coeffs_in(fusion),
                readout_layer: read_phase_layer(&manifest_path(
                    dir,
                    &need(&m.readout_layer, "readout_layer")?,
                ))?,
                electronic_fc: match &m.electronic_fc {
                    Some(name) => Some(read_matrix(&manifest_path(dir, name))?),
                    None => None,
                },
                regions: m.regions.clone(),
                decision_coeffs: coeffs_in(&m.decision_coeffs),
            };
            spec.validate()?;
            ModelSpec::Dnin(spec)
        }
        "drnn" => {
            let readout = match m
                .readout
                .as_ref()
                .ok_or_else(|| DpuError::Format("manifest missing readout".into()))?
            {
                ReadoutManifest::Dpu { layer } => DrnnReadout::Dpu {
                    layer: read_phase_layer(&manifest_path(dir, layer))?,
                },
                ReadoutManifest::Electronic { pooled_nodes, weights } => {
                    DrnnReadout::Electronic {
                        pooled_nodes: *pooled_nodes,
                        weights: read_matrix(&manifest_path(dir, weights))?,
                    }
                }
            };
            let spec = DrnnSpec {
                memory_layer: read_phase_layer(&manifest_path(
                    dir,
                    &need(&m.memory_layer, "memory_layer")?,
                ))?,
                readin_layer: read_phase_layer(&manifest_path(
                    dir,
                    &need(&m.readin_layer, "readin_layer")?,
                ))?,
                fusing_lambda: R::from_f64c(
                    m.fusing_lambda
                        .ok_or_else(|| DpuError::Format("manifest missing fusing_lambda".into()))?,
                ),
                seq_len: m
                    .seq_len
                    .ok_or_else(|| DpuError::Format("manifest missing seq_len".into()))?,
                readout,
                regions: m.regions.clone(),
                decision_coeffs: coeffs_in(&m.decision_coeffs),
            };
            spec.validate()?;
            ModelSpec::Drnn(spec)
        }
        other => return Err(DpuError::Format(format!("unknown architecture {other}"))),
    };
    Ok((cfg, model))
}
