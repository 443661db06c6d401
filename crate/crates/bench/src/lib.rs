//! Benchmarks for `hstab-core`. See `benches/`.
