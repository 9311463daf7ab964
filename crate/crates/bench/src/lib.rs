//! Benchmarks live in `benches/`; run `cargo bench -p shelfid-bench`.
