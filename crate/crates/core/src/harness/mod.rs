//! Experiment drivers: instance generation, trials, sweeps, benchmarks and
//! verification reports.
//!
//! Every trial draws its randomness from `mix_seed(master, cell, trial)`,
//! so results do not depend on the number of workers or on run order.

pub mod bench;
pub mod generate;
pub mod pool;
pub mod sweep;
pub mod trial;
pub mod verify;

pub use bench::{image_benchmark, location_bias_study, noise_benchmark, ImageBenchConfig};
pub use generate::{add_noise, gen_background, gen_signal, phantom, NoiseSpec, SignalKind};
pub use pool::Pool;
pub use sweep::{sweep_phase_transition, SweepConfig, SweepGrid};
pub use trial::{run_trial, Placement, SignalSource, TrialOutcome, TrialSpec};
