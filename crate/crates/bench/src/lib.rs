//! Criterion benchmarks for the planning library; see `benches/`.
