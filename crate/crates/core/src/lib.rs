//! Distributed block-coordinate descent for elastic-net regularized GLMs.
//!
//! Features are split into `M` disjoint blocks, one per worker. Each outer
//! iteration every worker runs one cycle of coordinate descent over its block
//! against a block-diagonal quadratic model of the loss, the per-block margin
//! deltas are summed with an allreduce, a line search picks the step length on
//! the merged direction, and a trust-region multiplier `mu` is adapted so that
//! full steps (and therefore the exact zeros produced by soft-thresholding)
//! are accepted most of the time.
//!
//! Module map:
//!
//! * [`glm`] - losses, the elastic-net penalty and per-example working weights.
//! * [`block`] - feature shards and the per-worker coordinate descent pass.
//! * [`driver`] - the outer loop: merge, line search, `mu` adaptation, `fit`.
//! * [`runtime`] - SPMD worker harness, allreduce transports, the straggler
//!   monitor used by asynchronous load balancing.
//! * [`data`] - LIBSVM parsing, hash partitioning, shard files.
//! * [`eval`] - auPRC, suboptimality and the dense serial reference solver.
//! * [`cli`] - the `splitglm` command line.

pub mod block;
pub mod cli;
pub mod data;
pub mod driver;
pub mod error;
pub mod eval;
pub mod glm;
pub mod runtime;

pub use block::{BlockCursor, BlockDelta, FeatureShard, StopSignal};
pub use driver::{fit, FitResult, IterationStats, ModelState, SolveMode, SolverConfig};
pub use error::{Error, Result};
pub use glm::{ElasticNetPenalty, LossKind, WorkingSet};
pub use runtime::{spawn_spmd, Transport};
