//! Complex optical field state and the pointwise physical primitives:
//! amplitude encoding, phase modulation, intensity detection and device
//! quantization.

use crate::error::{DpuError, Result};
use crate::num::Real;
use ndarray::Array2;
use num_complex::Complex;

/// A 2-D complex optical field sampled on a regular grid.
#[derive(Clone, Debug)]
pub struct ComplexField<R: Real> {
    pub grid: Array2<Complex<R>>,
    /// Meters per pixel.
    pub pitch: R,
    /// Meters.
    pub wavelength: R,
}

impl<R: Real> ComplexField<R> {
    pub fn new(grid: Array2<Complex<R>>, pitch: R, wavelength: R) -> Result<Self> {
        let (h, w) = grid.dim();
        if h < 2 || w < 2 {
            return Err(DpuError::Config(format!("field grid too small: {h}x{w}")));
        }
        if pitch <= R::zero() || wavelength <= R::zero() {
            return Err(DpuError::Config("pitch and wavelength must be positive".into()));
        }
        Ok(Self { grid, pitch, wavelength })
    }

    pub fn zeros(h: usize, w: usize, pitch: R, wavelength: R) -> Result<Self> {
        Self::new(Array2::zeros((h, w)), pitch, wavelength)
    }

    pub fn height(&self) -> usize {
        self.grid.dim().0
    }

    pub fn width(&self) -> usize {
        self.grid.dim().1
    }

    /// Total energy sum |u|^2.
    pub fn energy(&self) -> R {
        self.grid.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn same_geometry(&self, other: &Self) -> bool {
        self.grid.dim() == other.grid.dim()
            && self.pitch == other.pitch
            && self.wavelength == other.wavelength
    }
}

/// Trainable 2-D phase modulation pattern. The unconstrained raw values are
/// the optimizer's parameters; the deployed phase is `raw mod 2pi`,
/// optionally quantized.
#[derive(Clone, Debug)]
pub struct PhaseLayer<R: Real> {
    pub raw: Array2<R>,
}

impl<R: Real> PhaseLayer<R> {
    pub fn new(raw: Array2<R>) -> Self {
        Self { raw }
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self { raw: Array2::zeros((h, w)) }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.raw.dim()
    }

    /// Uniform random phases in [0, 2pi).
    pub fn random<G: rand::Rng + ?Sized>(h: usize, w: usize, rng: &mut G) -> Self {
        let tp = R::two_pi();
        Self { raw: Array2::from_shape_fn((h, w), |_| R::from_f64c(rng.gen::<f64>()) * tp) }
    }

    /// Deployed phases wrapped into [0, 2pi).
    pub fn wrapped(&self) -> Array2<R> {
        let tp = R::two_pi();
        self.raw.mapv(|v| {
            let m = v % tp;
            if m < R::zero() {
                m + tp
            } else {
                m
            }
        })
    }

    /// Deployed phases: wrapped then quantized by `q`.
    pub fn deployed(&self, q: &Quantizer<R>) -> Array2<R> {
        let mut p = self.wrapped();
        p.mapv_inplace(|v| q.apply(v));
        p
    }
}

/// Uniform quantizer with 2^bits levels spanning [0, range_max].
///
/// Two level layouts exist in the hardware: a wrapping quantity like phase
/// places its 2^bits levels at k * range / 2^bits (the top of the range is
/// identified with 0, so pi is exactly representable at 8 bits), while a
/// measurement ADC places them at k * range / (2^bits - 1) so that
/// range_max itself is a level.
#[derive(Clone, Debug, PartialEq)]
pub struct Quantizer<R: Real> {
    pub bits: u32,
    pub range_max: R,
    /// true: levels include range_max (ADC style); false: half-open wrap style.
    pub inclusive_top: bool,
}

impl<R: Real> Quantizer<R> {
    pub fn new(bits: u32, range_max: R, inclusive_top: bool) -> Result<Self> {
        if bits < 1 {
            return Err(DpuError::Config("quantizer needs bits >= 1".into()));
        }
        if range_max <= R::zero() {
            return Err(DpuError::Config("quantizer range_max must be > 0".into()));
        }
        Ok(Self { bits, range_max, inclusive_top })
    }

    /// 8-bit phase quantizer over [0, 2pi), wrap style.
    pub fn phase_8bit() -> Self {
        Self { bits: 8, range_max: R::two_pi(), inclusive_top: false }
    }

    /// 16-bit measurement quantizer over normalized intensity [0, 1].
    pub fn measure_16bit() -> Self {
        Self { bits: 16, range_max: R::one(), inclusive_top: true }
    }

    fn step(&self) -> R {
        let n = (1u64 << self.bits) as f64;
        let denom = if self.inclusive_top { n - 1.0 } else { n };
        self.range_max / R::from_f64c(denom)
    }

    /// Clamp to [0, range_max] and round to the nearest level.
    pub fn apply(&self, v: R) -> R {
        let step = self.step();
        let top = if self.inclusive_top { self.range_max } else { self.range_max - step };
        let clamped = v.max(R::zero()).min(self.range_max);
        ((clamped / step).round() * step).min(top)
    }

    pub fn apply_map(&self, values: &Array2<R>) -> Array2<R> {
        values.mapv(|v| self.apply(v))
    }
}

/// Input coding mode of the DMD stage.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputMode {
    /// Amplitude is 1 where pixel > threshold * frame max, else 0.
    Binary { threshold: f64 },
    /// Amplitude is pixel / frame max (all zero if the frame is zero).
    Grayscale,
}

impl InputMode {
    pub fn binary_default() -> Self {
        InputMode::Binary { threshold: 0.5 }
    }
}

/// Encode a non-negative real image into the amplitude of a coherent field
/// with zero phase.
pub fn encode_amplitude<R: Real>(
    image: &Array2<R>,
    mode: InputMode,
    pitch: R,
    wavelength: R,
) -> Result<ComplexField<R>> {
    let amp = encode_amplitude_real(image, mode);
    ComplexField::new(amp.mapv(|a| Complex::new(a, R::zero())), pitch, wavelength)
}

/// Real amplitude of the encoding, shared by forward and backward paths.
pub fn encode_amplitude_real<R: Real>(image: &Array2<R>, mode: InputMode) -> Array2<R> {
    let max = image.iter().cloned().fold(R::zero(), R::max);
    match mode {
        InputMode::Binary { threshold } => {
            let th = R::from_f64c(threshold) * max;
            if max <= R::zero() {
                Array2::zeros(image.dim())
            } else {
                image.mapv(|v| if v > th { R::one() } else { R::zero() })
            }
        }
        InputMode::Grayscale => {
            if max <= R::zero() {
                Array2::zeros(image.dim())
            } else {
                image.mapv(|v| v / max)
            }
        }
    }
}

/// Per-pixel multiplication by exp(i * phase).
pub fn phase_modulate<R: Real>(
    field: &ComplexField<R>,
    phases: &Array2<R>,
) -> Result<ComplexField<R>> {
    if field.grid.dim() != phases.dim() {
        return Err(DpuError::Config(format!(
            "phase layer {:?} does not match field {:?}",
            phases.dim(),
            field.grid.dim()
        )));
    }
    let mut grid = field.grid.clone();
    ndarray::Zip::from(&mut grid).and(phases).for_each(|u, &p| {
        *u *= Complex::new(p.cos(), p.sin());
    });
    Ok(ComplexField { grid, pitch: field.pitch, wavelength: field.wavelength })
}

/// Photodetector response: |u|^2 per pixel.
pub fn detect_intensity<R: Real>(field: &ComplexField<R>) -> Array2<R> {
    field.grid.mapv(|c| c.norm_sqr())
}
