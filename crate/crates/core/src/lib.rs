//! Simulation toolkit for microwave pulse synthesis with wideband RF DACs.
//!
//! The crate models the full signal path of a qubit control stack at desk
//! scale: a sampled-data DAC with selectable reconstruction waveforms and
//! Nyquist-zone imaging (`dac`), baseband pulse shapes (`pulse`), an
//! instruction-driven waveform sequencer with phase-coherent NCOs (`seq`),
//! room-temperature analog chains built from mixers, amplifiers and filters
//! (`chain`), spectral and decay-fit metrics (`metrics`), and a driven
//! transmon simulator connecting waveform quality to gate error (`qubit`).

pub mod chain;
pub mod dac;
pub mod fit;
pub mod metrics;
pub mod opt;
pub mod pulse;
pub mod qubit;
pub mod seq;

pub use num_complex::Complex64;
