//! Fourier phase retrieval with a known background.
//!
//! A real sample `X` sits on a support `Ω` inside a larger array whose other
//! entries `Y` are known. Only the Fourier intensities `|DFT(Z)|²` of the
//! combined array are measured. The crate provides the forward model, the
//! iterative solvers (PGD, BDR, BDR1, CBDR, HIO), linear-algebra recovery and
//! certificates, image metrics, file formats and experiment drivers.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which is what the experiment drivers use.

pub mod analysis;
pub mod error;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod projections;
pub mod rng;
pub mod scalar;
pub mod solvers;
pub mod spectral;
pub mod types;

pub use error::{Error, Result};
pub use scalar::Real;
pub use types::{
    assemble, extract, CombinedObject, Dims, Field, IntensityMeasurements, Method, Shape, SolverConfig, SolverRun,
    SupportMask, TraceEntry,
};

pub type Field64 = Field<f64>;
pub type CombinedObject64 = CombinedObject<f64>;
pub type Intensity64 = IntensityMeasurements<f64>;
pub type SolverConfig64 = SolverConfig<f64>;
pub type SolverRun64 = SolverRun<f64>;
