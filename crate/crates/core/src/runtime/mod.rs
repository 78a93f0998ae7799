//! SPMD runtime: the reduction contract every worker talks to, the progress
//! monitor behind asynchronous load balancing, and the worker harness.
//!
//! Two transports implement [`Transport`]: [`InProcTransport`] (threads in one
//! process sharing a barrier) and [`TcpTransport`] (one process per rank,
//! binary tree over TCP). Both sum contributions in the same fixed tree order,
//! so a reduction yields the same bits on every rank and on either transport.

mod inproc;
mod monitor;
mod tcp;

use std::sync::Arc;

use crate::error::Result;

pub use inproc::{spawn_spmd, spawn_spmd_with, InProcTransport, SpmdOptions};
pub use monitor::{alb_threshold, ProgressMonitor};
pub use tcp::{TcpConfig, TcpTransport};

/// What a collective carries. Only used for accounting and for detecting
/// ranks that disagree on the call sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Collective {
    /// A length-`n` vector over examples.
    Vector,
    /// A handful of scalar slots.
    Scalars,
}

impl Collective {
    pub(crate) fn code(self) -> u32 {
        match self {
            Collective::Vector => 0,
            Collective::Scalars => 1,
        }
    }
}

/// Per-rank counters. Payload bytes count this rank's contribution
/// (8 bytes per double); wire bytes include frame headers and tree traffic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TransportStats {
    pub vector_reduces: u64,
    pub scalar_reduces: u64,
    pub vector_payload_bytes: u64,
    pub scalar_payload_bytes: u64,
    pub wire_bytes_sent: u64,
    pub wire_bytes_received: u64,
}

impl TransportStats {
    pub fn payload_bytes(&self) -> u64 {
        self.vector_payload_bytes + self.scalar_payload_bytes
    }

    pub(crate) fn record(&mut self, kind: Collective, len: usize) {
        let bytes = 8 * len as u64;
        match kind {
            Collective::Vector => {
                self.vector_reduces += 1;
                self.vector_payload_bytes += bytes;
            }
            Collective::Scalars => {
                self.scalar_reduces += 1;
                self.scalar_payload_bytes += bytes;
            }
        }
    }
}

/// Completion reports and stop queries for load-balanced block passes.
/// Iterations are numbered from 1.
pub trait ProgressChannel: Send + Sync {
    /// Idempotent per rank and iteration.
    fn report_complete(&self, iteration: u64, rank: usize);
    fn should_stop(&self, iteration: u64) -> bool;
    /// Number of completions that fire the stop signal.
    fn threshold(&self) -> usize;
}

/// Collective summation shared by all workers of one job.
///
/// Every rank must issue the same sequence of collectives with the same
/// kinds and lengths.
pub trait Transport: Send {
    fn rank(&self) -> usize;
    fn world_size(&self) -> usize;

    /// Elementwise sum across ranks; the result is bitwise identical on
    /// every rank.
    fn allreduce(&mut self, kind: Collective, data: &[f64]) -> Result<Vec<f64>>;

    fn stats(&self) -> TransportStats;

    fn progress(&self) -> Arc<dyn ProgressChannel>;

    fn allreduce_sum(&mut self, data: &[f64]) -> Result<Vec<f64>> {
        self.allreduce(Collective::Vector, data)
    }

    fn allreduce_scalars(&mut self, slots: &[f64]) -> Result<Vec<f64>> {
        self.allreduce(Collective::Scalars, slots)
    }
}

pub(crate) fn tree_children(rank: usize, world: usize) -> impl Iterator<Item = usize> {
    [2 * rank + 1, 2 * rank + 2].into_iter().filter(move |&c| c < world)
}

pub(crate) fn tree_parent(rank: usize) -> Option<usize> {
    (rank > 0).then(|| (rank - 1) / 2)
}

/// Sum in the fixed binary-tree order: a node adds its left then right
/// subtree totals onto its own contribution.
pub(crate) fn tree_sum(inputs: &[Vec<f64>]) -> Vec<f64> {
    fn subtotal(rank: usize, inputs: &[Vec<f64>]) -> Vec<f64> {
        let mut acc = inputs[rank].clone();
        for child in tree_children(rank, inputs.len()) {
            let part = subtotal(child, inputs);
            for (a, b) in acc.iter_mut().zip(&part) {
                *a += b;
            }
        }
        acc
    }
    subtotal(0, inputs)
}
