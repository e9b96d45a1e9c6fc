//! Benchmarks live in `benches/`; run them with `cargo bench -p score-recon-bench`.
