//! Criterion benchmarks for the core crate; see `benches/model.rs`.
