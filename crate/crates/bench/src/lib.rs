//! Criterion benchmarks for the compile and simulate pipeline live in `benches/`.
