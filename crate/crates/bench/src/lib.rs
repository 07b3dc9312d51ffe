//! Criterion benchmarks for `bdistill-core`; see `benches/core.rs`.
