//! Criterion benchmarks for the offload solvers live in `benches/`.
