//! Criterion benchmarks for the coders and block structuring live in `benches/`.
