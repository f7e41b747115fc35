//! Criterion benchmarks for `condwalk`; see `benches/`.
