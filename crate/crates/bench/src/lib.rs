//! Criterion benchmarks for the eigentrack kernels; see `benches/kernels.rs`.
