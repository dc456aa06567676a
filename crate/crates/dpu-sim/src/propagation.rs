//! Free-space diffraction between parallel planes via the band-limited
//! angular spectrum method: zero-pad, forward FFT, multiply by the
//! precomputed transfer function, inverse FFT, crop.

use crate::error::{DpuError, Result};
use crate::field::ComplexField;
use crate::num::Real;
use ndarray::{s, Array2};
use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// In-place 2-D FFT over an owned array (rows then columns).
pub struct Fft2<R: Real> {
    h: usize,
    w: usize,
    row_fwd: Arc<dyn Fft<R>>,
    row_inv: Arc<dyn Fft<R>>,
    col_fwd: Arc<dyn Fft<R>>,
    col_inv: Arc<dyn Fft<R>>,
}

impl<R: Real> Fft2<R> {
    pub fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    fn run(&self, data: &mut Array2<Complex<R>>, forward: bool) {
        assert_eq!(data.dim(), (self.h, self.w));
        let row = if forward { &self.row_fwd } else { &self.row_inv };
        let col = if forward { &self.col_fwd } else { &self.col_inv };
        {
            let slice = data.as_slice_mut().expect("contiguous row-major array");
            row.process(slice);
        }
        // Columns: transpose, run as rows, transpose back.
        let mut t = data.t().as_standard_layout().into_owned();
        {
            let slice = t.as_slice_mut().expect("contiguous");
            col.process(slice);
        }
        *data = t.t().as_standard_layout().into_owned();
    }

    /// Unnormalized forward transform.
    pub fn forward(&self, data: &mut Array2<Complex<R>>) {
        self.run(data, true);
    }

    /// Inverse transform normalized by 1/(h*w).
    pub fn inverse(&self, data: &mut Array2<Complex<R>>) {
        self.run(data, false);
        let scale = R::one() / R::from_f64c((self.h * self.w) as f64);
        data.mapv_inplace(|c| c * scale);
    }
}

/// FFT sample frequencies (cycles per meter) for n samples at the given pitch.
fn fft_freqs<R: Real>(n: usize, pitch: R) -> Vec<R> {
    let nf = R::from_f64c(n as f64);
    let d = R::one() / (nf * pitch);
    (0..n)
        .map(|i| {
            let k = if i <= (n - 1) / 2 { i as i64 } else { i as i64 - n as i64 };
            R::from_f64c(k as f64) * d
        })
        .collect()
}

/// Precomputed free-space propagation over a fixed grid geometry.
pub struct PropagationOperator<R: Real> {
    pub distance: R,
    pub pitch: R,
    pub wavelength: R,
    pub grid: (usize, usize),
    pub pad_factor: usize,
    pub band_limit: bool,
    /// Transfer function on the padded grid, in FFT (unshifted) order.
    transfer: Array2<Complex<R>>,
    fft: Fft2<R>,
}

impl<R: Real> PropagationOperator<R> {
    pub fn new(
        grid: (usize, usize),
        pitch: R,
        wavelength: R,
        distance: R,
        pad_factor: usize,
        band_limit: bool,
    ) -> Result<Self> {
        if pad_factor < 1 {
            return Err(DpuError::Config("pad_factor must be >= 1".into()));
        }
        if distance < R::zero() {
            return Err(DpuError::Config("propagation distance must be >= 0".into()));
        }
        if pitch <= R::zero() || wavelength <= R::zero() {
            return Err(DpuError::Config("pitch and wavelength must be positive".into()));
        }
        let (h, w) = (grid.0 * pad_factor, grid.1 * pad_factor);
        let fy = fft_freqs(h, pitch);
        let fx = fft_freqs(w, pitch);
        let inv_wl2 = R::one() / (wavelength * wavelength);
        let two_pi = R::two_pi();
        // Matsushima-style band limit keeps the sampled transfer phase below
        // aliasing for the padded window.
        let (fy_lim, fx_lim) = if band_limit && distance > R::zero() {
            let dfy = R::one() / (R::from_f64c(h as f64) * pitch);
            let dfx = R::one() / (R::from_f64c(w as f64) * pitch);
            let two = R::from_f64c(2.0);
            let ly = R::one()
                / (((two * dfy * distance) * (two * dfy * distance) + R::one()).sqrt()
                    * wavelength);
            let lx = R::one()
                / (((two * dfx * distance) * (two * dfx * distance) + R::one()).sqrt()
                    * wavelength);
            (ly, lx)
        } else {
            (R::infinity(), R::infinity())
        };
        let transfer = Array2::from_shape_fn((h, w), |(i, j)| {
            let arg = inv_wl2 - fx[j] * fx[j] - fy[i] * fy[i];
            if arg <= R::zero() {
                // Evanescent components zeroed.
                Complex::new(R::zero(), R::zero())
            } else if fy[i].abs() > fy_lim || fx[j].abs() > fx_lim {
                Complex::new(R::zero(), R::zero())
            } else {
                let kz = two_pi * arg.sqrt() * distance;
                Complex::new(kz.cos(), kz.sin())
            }
        });
        Ok(Self {
            distance,
            pitch,
            wavelength,
            grid,
            pad_factor,
            band_limit,
            transfer,
            fft: Fft2::new(h, w),
        })
    }

    fn check_geometry(&self, field: &ComplexField<R>) -> Result<()> {
        if field.grid.dim() != self.grid
            || field.pitch != self.pitch
            || field.wavelength != self.wavelength
        {
            return Err(DpuError::Config(format!(
                "field geometry {:?}/{}/{} does not match operator {:?}/{}/{}",
                field.grid.dim(),
                field.pitch.to_f64c(),
                field.wavelength.to_f64c(),
                self.grid,
                self.pitch.to_f64c(),
                self.wavelength.to_f64c()
            )));
        }
        Ok(())
    }

    fn apply(&self, field: &ComplexField<R>, conjugate: bool) -> Result<ComplexField<R>> {
        self.check_geometry(field)?;
        if self.distance == R::zero() {
            return Ok(field.clone());
        }
        let (h0, w0) = self.grid;
        let (h, w) = (h0 * self.pad_factor, w0 * self.pad_factor);
        let (oy, ox) = ((h - h0) / 2, (w - w0) / 2);
        let mut padded: Array2<Complex<R>> = Array2::zeros((h, w));
        padded.slice_mut(s![oy..oy + h0, ox..ox + w0]).assign(&field.grid);
        self.fft.forward(&mut padded);
        if conjugate {
            ndarray::Zip::from(&mut padded).and(&self.transfer).for_each(|u, &t| {
                *u *= t.conj();
            });
        } else {
            ndarray::Zip::from(&mut padded).and(&self.transfer).for_each(|u, &t| {
                *u *= t;
            });
        }
        self.fft.inverse(&mut padded);
        let grid = padded.slice(s![oy..oy + h0, ox..ox + w0]).to_owned();
        Ok(ComplexField { grid, pitch: self.pitch, wavelength: self.wavelength })
    }

    /// Forward propagation by `distance`.
    pub fn propagate(&self, field: &ComplexField<R>) -> Result<ComplexField<R>> {
        self.apply(field, false)
    }

    /// Adjoint of `propagate` under the standard complex inner product:
    /// the same pipeline with the conjugated transfer function.
    pub fn propagate_adjoint(&self, cotangent: &ComplexField<R>) -> Result<ComplexField<R>> {
        self.apply(cotangent, true)
    }
}
