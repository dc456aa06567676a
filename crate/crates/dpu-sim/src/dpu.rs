//! One full DPU evaluation: encode, modulate, diffract, detect, quantize —
//! with analytic gradients for in-silico training and a pluggable
//! imperfection model standing in for the physical system.

use crate::error::{DpuError, Result};
use crate::field::{
    detect_intensity, encode_amplitude_real, ComplexField, InputMode, PhaseLayer, Quantizer,
};
use crate::num::Real;
use crate::propagation::PropagationOperator;
use ndarray::Array2;
use num_complex::Complex;
use rand::Rng;

/// Geometry, coding and quantization of one DPU.
#[derive(Clone, Debug)]
pub struct DpuConfig<R: Real> {
    pub grid: (usize, usize),
    pub pitch: R,
    pub wavelength: R,
    /// DMD -> SLM relay distance (0 = unit-magnification image relay).
    pub pre_distance: R,
    /// SLM -> sensor diffraction distance; must be positive.
    pub post_distance: R,
    /// Coding of the first-layer (external) inputs.
    pub input_mode: InputMode,
    /// Coding of buffered hidden-layer transfers inside cascades.
    pub hidden_mode: InputMode,
    pub phase_quantizer: Quantizer<R>,
    pub measure_quantizer: Quantizer<R>,
    pub pad_factor: usize,
    pub band_limit: bool,
}

/// Distance at which the diffraction cone of one modulator pixel spans
/// roughly the full grid: z = n * pitch^2 / wavelength.
pub fn full_cone_distance<R: Real>(n: usize, pitch: R, wavelength: R) -> R {
    R::from_f64c(n as f64) * pitch * pitch / wavelength
}

impl<R: Real> DpuConfig<R> {
    /// Device defaults: 8 um pitch, 698 nm wavelength, 8-bit phase,
    /// 16-bit measurement, binary first-layer input, grayscale transfers.
    pub fn with_grid(n: usize) -> Self {
        let pitch = R::from_f64c(8e-6);
        let wavelength = R::from_f64c(698e-9);
        Self {
            grid: (n, n),
            pitch,
            wavelength,
            pre_distance: R::zero(),
            post_distance: full_cone_distance(n, pitch, wavelength),
            input_mode: InputMode::binary_default(),
            hidden_mode: InputMode::Grayscale,
            phase_quantizer: Quantizer::phase_8bit(),
            measure_quantizer: Quantizer::measure_16bit(),
            pad_factor: 2,
            band_limit: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.post_distance <= R::zero() {
            return Err(DpuError::Config(
                "post_distance must be > 0: the diffractive connection requires free-space propagation".into(),
            ));
        }
        if self.pre_distance < R::zero() {
            return Err(DpuError::Config("pre_distance must be >= 0".into()));
        }
        if self.grid.0 < 2 || self.grid.1 < 2 {
            return Err(DpuError::Config("grid must be at least 2x2".into()));
        }
        Ok(())
    }
}

/// Injected system imperfections for the hardware-in-the-loop stand-in.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ErrorModel {
    pub enabled: bool,
    /// Sensor-plane lateral misalignment in pixels (dx = columns, dy = rows),
    /// applied by bilinear resampling of the intensity.
    pub shift: (f64, f64),
    /// Deployed phase distortion: 2pi * (phi / 2pi)^gamma.
    pub phase_gamma: f64,
    /// Gaussian readout noise std as a fraction of the per-frame maximum.
    pub readout_noise_sigma: f64,
}

impl ErrorModel {
    pub fn disabled() -> Self {
        Self { enabled: false, shift: (0.0, 0.0), phase_gamma: 1.0, readout_noise_sigma: 0.0 }
    }

    pub fn is_identity(&self) -> bool {
        !self.enabled
            || (self.shift == (0.0, 0.0)
                && self.phase_gamma == 1.0
                && self.readout_noise_sigma == 0.0)
    }
}

/// Saved intermediates of one smooth forward pass, consumed by `backward`.
pub struct DpuTrace<R: Real> {
    /// Field right after phase modulation.
    modulated: Array2<Complex<R>>,
    /// Phases used by this pass.
    phases: Array2<R>,
    /// Field at the sensor plane.
    sensor: Array2<Complex<R>>,
    /// Per-frame intensity maximum used for normalization (constant in backward).
    frame_max: R,
    /// Maximum of the raw input image (grayscale encode scale).
    input_max: R,
    mode: InputMode,
}

impl<R: Real> DpuTrace<R> {
    /// Per-frame normalization constant captured by this pass.
    pub fn frame_max(&self) -> R {
        self.frame_max
    }

    /// Raw (un-normalized) sensor-plane intensity of this pass.
    pub fn sensor_intensity(&self) -> Array2<R> {
        self.sensor.mapv(|c| c.norm_sqr())
    }
}

/// Precomputed propagation operators for one DpuConfig; all DPU evaluations
/// go through this.
pub struct DpuEngine<R: Real> {
    pub cfg: DpuConfig<R>,
    pre: Option<PropagationOperator<R>>,
    post: PropagationOperator<R>,
}

impl<R: Real> DpuEngine<R> {
    pub fn new(cfg: DpuConfig<R>) -> Result<Self> {
        cfg.validate()?;
        let pre = if cfg.pre_distance > R::zero() {
            Some(PropagationOperator::new(
                cfg.grid,
                cfg.pitch,
                cfg.wavelength,
                cfg.pre_distance,
                cfg.pad_factor,
                cfg.band_limit,
            )?)
        } else {
            None
        };
        let post = PropagationOperator::new(
            cfg.grid,
            cfg.pitch,
            cfg.wavelength,
            cfg.post_distance,
            cfg.pad_factor,
            cfg.band_limit,
        )?;
        Ok(Self { cfg, pre, post })
    }

    fn check_dims(&self, image: &Array2<R>, layer: &PhaseLayer<R>) -> Result<()> {
        if image.dim() != self.cfg.grid {
            return Err(DpuError::Config(format!(
                "input image {:?} does not match grid {:?}",
                image.dim(),
                self.cfg.grid
            )));
        }
        if layer.dim() != self.cfg.grid {
            return Err(DpuError::Config(format!(
                "phase layer {:?} does not match grid {:?}",
                layer.dim(),
                self.cfg.grid
            )));
        }
        Ok(())
    }

    /// Core optical chain on already-deployed phases. Returns the trace and
    /// the max-normalized (unquantized) sensor intensity.
    fn run_chain(
        &self,
        image: &Array2<R>,
        phases: &Array2<R>,
        mode: InputMode,
    ) -> Result<(DpuTrace<R>, Array2<R>)> {
        let input_max = image.iter().cloned().fold(R::zero(), R::max);
        let amplitude = encode_amplitude_real(image, mode);
        let encoded = ComplexField::new(
            amplitude.mapv(|a| Complex::new(a, R::zero())),
            self.cfg.pitch,
            self.cfg.wavelength,
        )?;
        let modulator_in = match &self.pre {
            Some(op) => op.propagate(&encoded)?.grid,
            None => encoded.grid.clone(),
        };
        let mut modulated = modulator_in.clone();
        ndarray::Zip::from(&mut modulated).and(phases).for_each(|u, &p| {
            *u *= Complex::new(p.cos(), p.sin());
        });
        let sensor = self
            .post
            .propagate(&ComplexField {
                grid: modulated.clone(),
                pitch: self.cfg.pitch,
                wavelength: self.cfg.wavelength,
            })?
            .grid;
        let intensity = detect_intensity(&ComplexField {
            grid: sensor.clone(),
            pitch: self.cfg.pitch,
            wavelength: self.cfg.wavelength,
        });
        let frame_max = intensity.iter().cloned().fold(R::zero(), R::max);
        let normalized = if frame_max > R::zero() {
            intensity.mapv(|v| v / frame_max)
        } else {
            intensity
        };
        Ok((
            DpuTrace {
                modulated,
                phases: phases.clone(),
                sensor,
                frame_max,
                input_max,
                mode,
            },
            normalized,
        ))
    }

    /// Deployed forward pass: quantized phases, normalized and 16-bit
    /// quantized measurement.
    pub fn forward(
        &self,
        image: &Array2<R>,
        layer: &PhaseLayer<R>,
        mode: InputMode,
    ) -> Result<Array2<R>> {
        self.check_dims(image, layer)?;
        let phases = layer.deployed(&self.cfg.phase_quantizer);
        let (_, normalized) = self.run_chain(image, &phases, mode)?;
        Ok(self.cfg.measure_quantizer.apply_map(&normalized))
    }

    /// Deployed forward without the final measurement quantization: used
    /// where the intensity feeds an electronic buffer that fuses values
    /// before digitization (the recurrent state update).
    pub fn forward_unquantized(
        &self,
        image: &Array2<R>,
        layer: &PhaseLayer<R>,
        mode: InputMode,
    ) -> Result<Array2<R>> {
        self.check_dims(image, layer)?;
        let phases = layer.deployed(&self.cfg.phase_quantizer);
        let (_, normalized) = self.run_chain(image, &phases, mode)?;
        Ok(normalized)
    }

    /// Smooth training forward: quantizers treated as identity (the
    /// straight-through convention), raw phases used directly.
    pub fn forward_traced(
        &self,
        image: &Array2<R>,
        layer: &PhaseLayer<R>,
        mode: InputMode,
    ) -> Result<(DpuTrace<R>, Array2<R>)> {
        self.check_dims(image, layer)?;
        self.run_chain(image, &layer.raw, mode)
    }

    /// Analytic reverse pass over a trace. `cotangent` is dL/d(out) for the
    /// normalized intensity `out` returned by `forward_traced`. Returns
    /// (dL/d raw phases, dL/d input image).
    ///
    /// Per-frame normalization and the encode scale are treated as constants;
    /// binarization and quantizers pass gradients straight through.
    pub fn backward(
        &self,
        trace: &DpuTrace<R>,
        cotangent: &Array2<R>,
    ) -> Result<(Array2<R>, Array2<R>)> {
        let inv_max =
            if trace.frame_max > R::zero() { R::one() / trace.frame_max } else { R::zero() };
        // d|u|^2 contributes cot * u to dL/d(conj u).
        let cot_sensor = Array2::from_shape_fn(trace.sensor.dim(), |idx| {
            trace.sensor[idx] * (cotangent[idx] * inv_max)
        });
        let cot_modulated = self
            .post
            .propagate_adjoint(&ComplexField {
                grid: cot_sensor,
                pitch: self.cfg.pitch,
                wavelength: self.cfg.wavelength,
            })?
            .grid;
        // dL/dphi = 2 Re(conj(cot) * i * u) at the modulated field.
        let two = R::from_f64c(2.0);
        let grad_phase = Array2::from_shape_fn(trace.modulated.dim(), |idx| {
            let c = cot_modulated[idx].conj() * (trace.modulated[idx] * Complex::i());
            two * c.re
        });
        // Through the modulation into the incoming field: multiply by the
        // conjugate modulation exp(-i phi).
        let cot_modulator_in = Array2::from_shape_fn(trace.modulated.dim(), |idx| {
            let p = trace.phases[idx];
            cot_modulated[idx] * Complex::new(p.cos(), -p.sin())
        });
        let cot_encoded = match &self.pre {
            Some(op) => {
                op.propagate_adjoint(&ComplexField {
                    grid: cot_modulator_in,
                    pitch: self.cfg.pitch,
                    wavelength: self.cfg.wavelength,
                })?
                .grid
            }
            None => cot_modulator_in,
        };
        // Real amplitude: dL/da = 2 Re(cot).
        let grad_amplitude = cot_encoded.mapv(|c| two * c.re);
        let grad_input = match trace.mode {
            InputMode::Binary { .. } => grad_amplitude,
            InputMode::Grayscale => {
                let scale =
                    if trace.input_max > R::zero() { R::one() / trace.input_max } else { R::zero() };
                grad_amplitude.mapv(|g| g * scale)
            }
        };
        Ok((grad_phase, grad_input))
    }

    /// Physical-twin forward: deployed phases distorted by gamma, sensor
    /// intensity laterally shifted, Gaussian readout noise added and clamped,
    /// then normalized and quantized. With the model disabled this is
    /// bit-identical to `forward`.
    pub fn forward_physical<G: Rng>(
        &self,
        image: &Array2<R>,
        layer: &PhaseLayer<R>,
        mode: InputMode,
        err: &ErrorModel,
        rng: &mut G,
    ) -> Result<Array2<R>> {
        let normalized = self.physical_chain(image, layer, mode, err, rng)?;
        Ok(self.cfg.measure_quantizer.apply_map(&normalized))
    }

    /// `forward_physical` minus the final quantization; pairs with
    /// `forward_unquantized` on the ideal side.
    pub fn forward_physical_unquantized<G: Rng>(
        &self,
        image: &Array2<R>,
        layer: &PhaseLayer<R>,
        mode: InputMode,
        err: &ErrorModel,
        rng: &mut G,
    ) -> Result<Array2<R>> {
        self.physical_chain(image, layer, mode, err, rng)
    }

    fn physical_chain<G: Rng>(
        &self,
        image: &Array2<R>,
        layer: &PhaseLayer<R>,
        mode: InputMode,
        err: &ErrorModel,
        rng: &mut G,
    ) -> Result<Array2<R>> {
        if err.is_identity() {
            return self.forward_unquantized(image, layer, mode);
        }
        self.check_dims(image, layer)?;
        let mut phases = layer.deployed(&self.cfg.phase_quantizer);
        if err.phase_gamma != 1.0 {
            let gamma = R::from_f64c(err.phase_gamma);
            let tp = R::two_pi();
            phases.mapv_inplace(|p| tp * (p / tp).powf(gamma));
        }
        let (trace, _) = self.run_chain(image, &phases, mode)?;
        let mut intensity = Array2::from_shape_fn(trace.sensor.dim(), |idx| {
            trace.sensor[idx].norm_sqr()
        });
        if err.shift != (0.0, 0.0) {
            intensity = shift_bilinear(&intensity, err.shift.0, err.shift.1);
        }
        if err.readout_noise_sigma > 0.0 {
            let max = intensity.iter().cloned().fold(R::zero(), R::max);
            let sigma = R::from_f64c(err.readout_noise_sigma) * max;
            intensity.mapv_inplace(|v| {
                let n = R::std_normal(rng);
                (v + sigma * n).max(R::zero())
            });
        }
        let max = intensity.iter().cloned().fold(R::zero(), R::max);
        Ok(if max > R::zero() { intensity.mapv(|v| v / max) } else { intensity })
    }

    /// Operation count of one DPU pass under the documented convention: the
    /// optical diffraction is one dense complex (HW x HW) matrix-vector
    /// product at 8 real ops per entry, plus 2 HW each for modulation and
    /// detection; the electronic side pays 2 HW for quantization and
    /// buffering plus any electronic read-out ops supplied by the caller.
    pub fn count_ops(&self, electronic_readout_ops: u128) -> OpsCount {
        count_ops(&self.cfg, electronic_readout_ops)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct OpsCount {
    pub optical: u128,
    pub electronic: u128,
}

impl OpsCount {
    pub fn ratio(&self) -> f64 {
        self.optical as f64 / self.electronic as f64
    }
}

pub fn count_ops<R: Real>(cfg: &DpuConfig<R>, electronic_readout_ops: u128) -> OpsCount {
    let n = (cfg.grid.0 * cfg.grid.1) as u128;
    OpsCount {
        optical: 8 * n * n + 2 * n + 2 * n,
        electronic: 2 * n + electronic_readout_ops,
    }
}

/// Resample `img` so content moves by (+dx columns, +dy rows), bilinear,
/// zero outside the frame.
pub fn shift_bilinear<R: Real>(img: &Array2<R>, dx: f64, dy: f64) -> Array2<R> {
    let (h, w) = img.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let sy = y as f64 - dy;
        let sx = x as f64 - dx;
        let y0 = sy.floor();
        let x0 = sx.floor();
        let fy = R::from_f64c(sy - y0);
        let fx = R::from_f64c(sx - x0);
        let one = R::one();
        let sample = |yy: f64, xx: f64| -> R {
            if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
                R::zero()
            } else {
                img[(yy as usize, xx as usize)]
            }
        };
        sample(y0, x0) * (one - fy) * (one - fx)
            + sample(y0, x0 + 1.0) * (one - fy) * fx
            + sample(y0 + 1.0, x0) * fy * (one - fx)
            + sample(y0 + 1.0, x0 + 1.0) * fy * fx
    })
}
