use std::collections::HashMap;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;

use super::monitor::ProgressMonitor;
use super::{tree_sum, Collective, ProgressChannel, Transport, TransportStats};
use crate::error::{Error, Result};

#[derive(Debug)]
struct Completed {
    result: Arc<Vec<f64>>,
    readers_left: usize,
}

#[derive(Debug)]
struct Rendezvous {
    open_seq: u64,
    descriptor: Option<(usize, Collective, usize)>,
    contributions: Vec<Option<Vec<f64>>>,
    arrived: usize,
    completed: HashMap<u64, Completed>,
    departed: Vec<bool>,
    poisoned: Option<String>,
}

#[derive(Debug)]
struct World {
    size: usize,
    state: Mutex<Rendezvous>,
    wake: Condvar,
    monitor: Arc<ProgressMonitor>,
}

impl World {
    fn lock(&self) -> MutexGuard<'_, Rendezvous> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// One rank's handle on an in-process world of threads.
///
/// Dropping the handle marks the rank as gone; any peer blocked in (or later
/// entering) a collective that can no longer complete gets an error instead
/// of waiting forever.
#[derive(Debug)]
pub struct InProcTransport {
    rank: usize,
    world: Arc<World>,
    seq: u64,
    stats: TransportStats,
}

/// Options for [`spawn_spmd_with`].
#[derive(Debug, Clone, Copy)]
pub struct SpmdOptions {
    /// Fraction of ranks whose completed pass stops a load-balanced pass.
    pub kappa: f64,
}

impl Default for SpmdOptions {
    fn default() -> Self {
        Self { kappa: 0.75 }
    }
}

impl InProcTransport {
    /// Handles for all ranks of a fresh world.
    pub fn world(size: usize, options: SpmdOptions) -> Vec<InProcTransport> {
        assert!(size >= 1, "world size must be positive");
        let world = Arc::new(World {
            size,
            state: Mutex::new(Rendezvous {
                open_seq: 1,
                descriptor: None,
                contributions: vec![None; size],
                arrived: 0,
                completed: HashMap::new(),
                departed: vec![false; size],
                poisoned: None,
            }),
            wake: Condvar::new(),
            monitor: Arc::new(ProgressMonitor::with_kappa(size, options.kappa)),
        });
        (0..size)
            .map(|rank| InProcTransport {
                rank,
                world: Arc::clone(&world),
                seq: 0,
                stats: TransportStats::default(),
            })
            .collect()
    }

    fn poison(&self, state: &mut Rendezvous, message: String) -> Error {
        state.poisoned.get_or_insert(message.clone());
        self.world.wake.notify_all();
        Error::Protocol(message)
    }
}

impl Transport for InProcTransport {
    fn rank(&self) -> usize {
        self.rank
    }

    fn world_size(&self) -> usize {
        self.world.size
    }

    fn allreduce(&mut self, kind: Collective, data: &[f64]) -> Result<Vec<f64>> {
        self.seq += 1;
        let seq = self.seq;
        let world = Arc::clone(&self.world);
        let mut state = world.lock();
        if let Some(msg) = &state.poisoned {
            return Err(Error::Protocol(msg.clone()));
        }
        if state.open_seq != seq {
            let msg = format!(
                "rank {} entered collective #{seq} while #{} is open",
                self.rank, state.open_seq
            );
            return Err(self.poison(&mut state, msg));
        }
        match state.descriptor {
            None => state.descriptor = Some((self.rank, kind, data.len())),
            Some((first, k, len)) if k != kind || len != data.len() => {
                let msg = format!(
                    "collective #{seq}: rank {} issued {kind:?}[{}] but rank {first} issued {k:?}[{len}]",
                    self.rank,
                    data.len()
                );
                return Err(self.poison(&mut state, msg));
            }
            Some(_) => {}
        }
        state.contributions[self.rank] = Some(data.to_vec());
        state.arrived += 1;
        if state.arrived == world.size {
            let inputs: Vec<Vec<f64>> = state
                .contributions
                .iter_mut()
                .map(|c| c.take().expect("every rank contributed"))
                .collect();
            let result = Arc::new(tree_sum(&inputs));
            state.completed.insert(
                seq,
                Completed {
                    result,
                    readers_left: world.size,
                },
            );
            state.open_seq += 1;
            state.descriptor = None;
            state.arrived = 0;
            world.wake.notify_all();
        }
        loop {
            if let Some(done) = state.completed.get_mut(&seq) {
                let result = Arc::clone(&done.result);
                done.readers_left -= 1;
                if done.readers_left == 0 {
                    state.completed.remove(&seq);
                }
                drop(state);
                self.stats.record(kind, data.len());
                return Ok(result.as_ref().clone());
            }
            if let Some(msg) = &state.poisoned {
                return Err(Error::Protocol(msg.clone()));
            }
            if let Some(gone) = state.departed.iter().position(|&d| d) {
                return Err(Error::Transport(format!(
                    "rank {gone} left before collective #{seq} completed"
                )));
            }
            state = world.wake.wait(state).unwrap_or_else(|e| e.into_inner());
        }
    }

    fn stats(&self) -> TransportStats {
        self.stats
    }

    fn progress(&self) -> Arc<dyn ProgressChannel> {
        Arc::clone(&self.world.monitor) as Arc<dyn ProgressChannel>
    }
}

impl Drop for InProcTransport {
    fn drop(&mut self) {
        let mut state = self.world.lock();
        state.departed[self.rank] = true;
        self.world.wake.notify_all();
    }
}

/// Runs `body` once per rank on its own thread against a shared in-process
/// world and returns the per-rank results in rank order, or the first error.
pub fn spawn_spmd<R, F>(world_size: usize, body: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(&mut InProcTransport) -> Result<R> + Sync,
{
    spawn_spmd_with(world_size, SpmdOptions::default(), body)
}

pub fn spawn_spmd_with<R, F>(world_size: usize, options: SpmdOptions, body: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(&mut InProcTransport) -> Result<R> + Sync,
{
    if world_size == 0 {
        return Err(Error::invalid("world size must be at least 1"));
    }
    let handles = InProcTransport::world(world_size, options);
    let body = &body;
    let outcomes: Vec<Result<R>> = thread::scope(|scope| {
        let joins: Vec<_> = handles
            .into_iter()
            .map(|mut transport| {
                let rank = transport.rank;
                let join = thread::Builder::new()
                    .name(format!("rank-{rank}"))
                    .spawn_scoped(scope, move || body(&mut transport))
                    .expect("spawn worker thread");
                (rank, join)
            })
            .collect();
        joins
            .into_iter()
            .map(|(rank, join)| match join.join() {
                Ok(res) => res,
                Err(panic) => {
                    let message = panic
                        .downcast_ref::<&str>()
                        .map(|s| s.to_string())
                        .or_else(|| panic.downcast_ref::<String>().cloned())
                        .unwrap_or_else(|| "panicked".to_string());
                    Err(Error::Join { rank, message })
                }
            })
            .collect()
    });
    // Prefer the root cause: protocol or worker errors over the disconnects
    // they trigger on other ranks.
    let mut results = Vec::with_capacity(world_size);
    let mut first_err: Option<Error> = None;
    for outcome in outcomes {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => {
                let replace = match (&first_err, &e) {
                    (None, _) => true,
                    (Some(Error::Transport(_)), e) => !matches!(e, Error::Transport(_)),
                    _ => false,
                };
                if replace {
                    first_err = Some(e);
                }
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(results),
    }
}
