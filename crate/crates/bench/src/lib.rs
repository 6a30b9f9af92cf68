//! Criterion benchmarks for the avoinv crate; see `benches/`.
