//! Criterion benchmarks for the hot paths of `actprior`; see `benches/`.
