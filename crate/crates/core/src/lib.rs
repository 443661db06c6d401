//! Stabilizability analysis of the 2x2 linear hyperbolic system
//!
//! ```text
//! y1_t + y1_x + a y2 = 0,   y2_t - lambda y2_x + b y1 = 0,   x in (0, L),
//! y2(t, L) = y1(t, L),      y1(t, 0) = k y2(t, 0),
//! ```
//!
//! under proportional boundary feedback, together with an observer-based
//! backstepping controller for the lengths where proportional feedback fails.

pub mod backstepping;
pub mod charfn;
pub mod error;
pub mod linalg;
pub mod marginal;
pub mod params;
pub mod simulator;
pub mod spectral;

pub use charfn::{char_parts, eval_char, eval_char_normalized, CharParts, ComplexValue};
pub use error::{Error, Result};
pub use marginal::{block_index, critical_length, marginal_curves, threshold_k, BlockIndex, CriticalLength, MarginalCurve};
pub use params::{reduce_general, SystemParams};
pub use spectral::{count_unstable, k1_imaginary_roots, refine_root, seed_unstable_roots, ContourSpec, SpectralReport, Verdict};
pub use simulator::{default_initial_data, fit_decay_rate, run_simulation, EnergyTrace, InitialData, SimConfig, SimOutput, SimState};
pub use backstepping::{run_closed_loop, run_target_system, solve_kernels, ClosedLoopConfig, ClosedLoopTrace, KernelGrid, TargetConfig, TargetKind};
