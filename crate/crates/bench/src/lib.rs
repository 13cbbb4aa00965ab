//! Criterion benchmarks for the scheduling crate; see `benches/`.
