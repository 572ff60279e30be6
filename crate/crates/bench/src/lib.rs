//! Criterion benchmarks for the inference path; see `benches/`.
