//! Criterion benchmarks for the cincgan kernels live under `benches/`.
