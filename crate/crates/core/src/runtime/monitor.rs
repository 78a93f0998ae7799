use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use super::ProgressChannel;

/// `ceil(kappa * M)` clamped to `1..=M`.
///
/// A tiny slack keeps products like `0.7 * 10` from rounding up past the
/// integer they represent.
pub fn alb_threshold(kappa: f64, world: usize) -> usize {
    let raw = (kappa * world as f64 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(world.max(1))
}

#[derive(Debug)]
struct Pass {
    iteration: u64,
    completed: Vec<bool>,
    count: usize,
}

/// Counts ranks that finished a full cycle over their block in the current
/// iteration and fires once `threshold` of them have.
///
/// State is keyed by iteration number, so a new iteration implicitly resets
/// the flags and a fired signal never un-fires within its iteration.
#[derive(Debug)]
pub struct ProgressMonitor {
    threshold: usize,
    pass: Mutex<Pass>,
    fired: AtomicU64,
}

impl ProgressMonitor {
    pub fn new(world: usize, threshold: usize) -> Self {
        Self {
            threshold: threshold.clamp(1, world.max(1)),
            pass: Mutex::new(Pass {
                iteration: 0,
                completed: vec![false; world],
                count: 0,
            }),
            fired: AtomicU64::new(0),
        }
    }

    pub fn with_kappa(world: usize, kappa: f64) -> Self {
        Self::new(world, alb_threshold(kappa, world))
    }

    /// Records a completion. Returns true if this call fired the signal.
    pub fn report(&self, iteration: u64, rank: usize) -> bool {
        let mut pass = self.pass.lock().unwrap_or_else(|e| e.into_inner());
        if iteration < pass.iteration || rank >= pass.completed.len() {
            return false;
        }
        if iteration > pass.iteration {
            pass.iteration = iteration;
            pass.completed.iter_mut().for_each(|f| *f = false);
            pass.count = 0;
        }
        if pass.completed[rank] {
            return false;
        }
        pass.completed[rank] = true;
        pass.count += 1;
        if pass.count == self.threshold {
            self.fired.fetch_max(iteration, Ordering::AcqRel);
            return true;
        }
        false
    }

    pub fn completed(&self, iteration: u64) -> usize {
        let pass = self.pass.lock().unwrap_or_else(|e| e.into_inner());
        if pass.iteration == iteration {
            pass.count
        } else {
            0
        }
    }

    pub fn fired(&self, iteration: u64) -> bool {
        self.fired.load(Ordering::Acquire) >= iteration
    }
}

impl ProgressChannel for ProgressMonitor {
    fn report_complete(&self, iteration: u64, rank: usize) {
        self.report(iteration, rank);
    }

    fn should_stop(&self, iteration: u64) -> bool {
        self.fired(iteration)
    }

    fn threshold(&self) -> usize {
        self.threshold
    }
}
