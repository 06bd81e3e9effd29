//! Criterion benchmarks for scoring and regression fitting; see `benches/`.
