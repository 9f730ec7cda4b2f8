//! Criterion benchmarks for the tiler and the simulated execution modes;
//! run with `cargo bench -p oocstencil-bench`.
