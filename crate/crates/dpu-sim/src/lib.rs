//! Differentiable simulator and training toolkit for reconfigurable
//! diffractive optoelectronic processing units (DPUs) and the network
//! architectures built from them (D2NN, D-NIN-1, D-RNN).

pub mod error;
pub mod num;

pub mod datasets;
pub mod dpu;
pub mod field;
pub mod io;
pub mod network;
pub mod propagation;
pub mod config;
pub mod report;
pub mod synth;
pub mod trainer;

pub use error::{DpuError, Result};
pub use num::Real;

/// Double-precision aliases (the acceptance-grade default scalar).
pub type ComplexField64 = field::ComplexField<f64>;
pub type PhaseLayer64 = field::PhaseLayer<f64>;
/// Single-precision aliases (opt-in speed mode).
pub type ComplexField32 = field::ComplexField<f32>;
pub type PhaseLayer32 = field::PhaseLayer<f32>;
