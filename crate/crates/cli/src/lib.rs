//! Library side of the `hstab` command: parameter sweeps, SVG heat maps and
//! `key=value` configuration files.

pub mod config;
pub mod heatmap;
pub mod sweep;

pub use heatmap::{render_heatmap, render_svg};
pub use sweep::{run_sweep, Cell, CellCount, Method, Range, SweepResult, SweepSpec};
