//! Simulation library for background calibration of time-interleaved ADC
//! (TI-ADC) mismatches in a dual-polarization coherent receiver.
//!
//! The receiver's slicer error is backpropagated through the receiver DSP
//! (a real 4x4 MIMO T/2 fractionally spaced equalizer) to produce the error
//! signal seen at the ADC outputs. That error drives either
//!
//! * an all-digital *Compensation Equalizer* (per-lane offset subtraction
//!   followed by an M-periodic time-varying FIR), or
//! * mixed-signal trims (per-interleave gain, sampling phase and offset
//!   corrections applied before quantization),
//!
//! both adapted by stochastic gradient descent. A config-driven harness runs
//! Monte Carlo and convergence experiments and emits CSV results.

pub mod error;
pub mod signal;
pub mod txchain;
pub mod afe;
pub mod compeq;
pub mod rxdsp;
pub mod ebp;
pub mod metrics;
pub mod config;
pub mod harness;

pub use error::{Error, Result};
