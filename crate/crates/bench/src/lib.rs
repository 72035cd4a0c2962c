//! Criterion benchmarks for the cloudsquat toolkit live under `benches/`.
