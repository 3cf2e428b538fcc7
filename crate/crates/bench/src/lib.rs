//! Benchmark-only crate; the measurements live in `benches/pipeline.rs`.
//! Run them with `cargo bench -p remgate-bench`.
