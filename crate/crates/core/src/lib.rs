//! Row-action solvers for consistent overdetermined linear systems.
//!
//! The crate centers on Kaczmarz-type iterations: each step projects the
//! current estimate onto the solution hyperplane of one row (or, for the
//! two-subspace method, onto the intersection of two row hyperplanes).
//! Around the solvers sit:
//!
//! * [`linalg`]: dense row-major matrices, hyperplane projections, row
//!   standardization, and smallest singular values.
//! * [`analysis`]: coherence parameters, the pairwise improvement factor,
//!   scaled condition numbers, and expected-convergence bound curves.
//! * [`solvers`]: row/pair sampling, single- and two-subspace steps, the
//!   oversized-step scalar, and full iteration drivers with traces.
//! * [`generators`]: seeded construction of coherent standardized test
//!   systems, initial estimates, and bounded noise.
//! * [`experiments`]: multi-trial envelopes, verification harnesses for the
//!   per-step identity and the expected contraction inequalities, noise
//!   threshold studies, and the improvement-factor grid.
//! * [`io`]: Matrix Market exchange files and trace/envelope CSV output.
//!
//! All randomness flows through a counter-based generator seeded explicitly,
//! so every solve, experiment, and generated system is reproducible from a
//! `u64` seed alone.

pub mod analysis;
pub mod experiments;
pub mod generators;
pub mod io;
pub mod linalg;
pub mod solvers;
