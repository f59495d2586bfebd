//! Criterion benchmarks live in the `benches` directory.
