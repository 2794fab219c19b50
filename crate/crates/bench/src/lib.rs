//! Benchmark-only package; see `benches/pipeline.rs` for the timed paths
//! (SVD, soft thresholding, estimators, samplers, campaign runner).
