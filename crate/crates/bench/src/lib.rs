//! Criterion benchmarks for the rendering and matching kernels; see `benches/`.
