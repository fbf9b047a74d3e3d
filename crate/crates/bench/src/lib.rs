//! Benchmark-only crate: see `benches/solver_steps.rs` for the criterion
//! benchmarks covering the solver's inner loops (particle updates,
//! flow-matching steps, trajectory integration, kernel costs, and the
//! one-dimensional Wasserstein distance).
