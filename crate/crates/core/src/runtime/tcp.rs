//! Wire transport: one process per rank, a binary reduction tree over TCP.
//!
//! Frame layout (all little-endian):
//!
//! ```text
//! [u32 tag][u32 payload length in bytes][payload]
//! ```
//!
//! Data frames carry IEEE-754 doubles. The tag holds the collective sequence
//! number in its low 30 bits and the collective kind in bit 30. Control frames
//! set bit 31, carry the iteration number in the low 31 bits and a one-byte
//! payload (`1` = pass complete, `2` = stop).
//!
//! Ranks open two kinds of connections, each introduced by a 5-byte hello
//! `[u32 rank][u8 channel]`: a data link from every non-root rank to its tree
//! parent, and a control link from every non-root rank to rank 0, which
//! coordinates the load-balancing stop signal.

use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::monitor::{alb_threshold, ProgressMonitor};
use super::{tree_children, tree_parent, Collective, ProgressChannel, Transport, TransportStats};
use crate::error::{Error, Result};

const CONTROL_BIT: u32 = 1 << 31;
const KIND_BIT: u32 = 1 << 30;
const SEQ_MASK: u32 = KIND_BIT - 1;
const ITER_MASK: u32 = CONTROL_BIT - 1;

const CHANNEL_DATA: u8 = 0;
const CHANNEL_CONTROL: u8 = 1;

const MSG_COMPLETE: u8 = 1;
const MSG_STOP: u8 = 2;

const HEADER_BYTES: u64 = 8;

#[derive(Debug, Clone)]
pub struct TcpConfig {
    pub rank: usize,
    /// `host:port` for every rank, indexed by rank.
    pub peers: Vec<String>,
    pub kappa: f64,
    /// How long to keep retrying outbound connections while peers start up.
    pub connect_timeout: Duration,
    /// Read timeout on data links; `None` blocks indefinitely.
    pub io_timeout: Option<Duration>,
}

impl TcpConfig {
    pub fn new(rank: usize, peers: Vec<String>) -> Self {
        Self {
            rank,
            peers,
            kappa: 0.75,
            connect_timeout: Duration::from_secs(30),
            io_timeout: None,
        }
    }
}

pub(crate) fn data_tag(seq: u64, kind: Collective) -> u32 {
    (seq as u32 & SEQ_MASK) | (kind.code() << 30)
}

pub(crate) fn control_tag(iteration: u64) -> u32 {
    CONTROL_BIT | (iteration as u32 & ITER_MASK)
}

pub(crate) fn encode_frame(tag: u32, payload: &[u8]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + payload.len());
    buf.extend_from_slice(&tag.to_le_bytes());
    buf.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    buf.extend_from_slice(payload);
    buf
}

pub(crate) fn encode_doubles(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub(crate) fn decode_doubles(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect()
}

fn read_header(stream: &mut impl Read) -> io::Result<(u32, u32)> {
    let mut head = [0u8; 8];
    stream.read_exact(&mut head)?;
    let tag = u32::from_le_bytes(head[..4].try_into().unwrap());
    let len = u32::from_le_bytes(head[4..].try_into().unwrap());
    Ok((tag, len))
}

fn io_err(context: impl std::fmt::Display, e: io::Error) -> Error {
    Error::Transport(format!("{context}: {e}"))
}

fn connect_with_retry(addr: &str, deadline: Instant) -> Result<TcpStream> {
    loop {
        let attempt = addr
            .to_socket_addrs()
            .map_err(|e| io_err(format!("resolve {addr}"), e))?
            .find_map(|a| TcpStream::connect(a).ok());
        if let Some(s) = attempt {
            s.set_nodelay(true).ok();
            return Ok(s);
        }
        if Instant::now() >= deadline {
            return Err(Error::Transport(format!("could not connect to {addr}")));
        }
        thread::sleep(Duration::from_millis(20));
    }
}

struct TcpProgress {
    rank: usize,
    threshold: usize,
    /// Rank 0 only.
    monitor: Option<ProgressMonitor>,
    /// Non-root only: highest iteration for which a stop arrived.
    stop_seen: AtomicU64,
    /// Non-root: the link to rank 0. Rank 0: links to every other rank.
    links: Vec<Mutex<TcpStream>>,
}

impl TcpProgress {
    fn broadcast_stop(&self, iteration: u64) {
        let frame = encode_frame(control_tag(iteration), &[MSG_STOP]);
        for link in &self.links {
            let mut s = link.lock().unwrap_or_else(|e| e.into_inner());
            // a peer that already left simply misses the signal
            let _ = s.write_all(&frame);
        }
    }

    fn root_report(&self, iteration: u64, rank: usize) {
        if let Some(m) = &self.monitor {
            if m.report(iteration, rank) {
                self.broadcast_stop(iteration);
            }
        }
    }
}

impl ProgressChannel for TcpProgress {
    fn report_complete(&self, iteration: u64, rank: usize) {
        if self.rank == 0 {
            self.root_report(iteration, rank);
        } else if let Some(link) = self.links.first() {
            let frame = encode_frame(control_tag(iteration), &[MSG_COMPLETE]);
            let mut s = link.lock().unwrap_or_else(|e| e.into_inner());
            let _ = s.write_all(&frame);
        }
    }

    fn should_stop(&self, iteration: u64) -> bool {
        match &self.monitor {
            Some(m) => m.fired(iteration),
            None => self.stop_seen.load(Ordering::Acquire) >= iteration,
        }
    }

    fn threshold(&self) -> usize {
        self.threshold
    }
}

/// Reads control frames until the link closes.
fn control_reader(progress: Arc<TcpProgress>, mut stream: TcpStream, peer: usize) {
    loop {
        let Ok((tag, len)) = read_header(&mut stream) else { return };
        if tag & CONTROL_BIT == 0 || len != 1 {
            return;
        }
        let mut msg = [0u8; 1];
        if stream.read_exact(&mut msg).is_err() {
            return;
        }
        let iteration = (tag & ITER_MASK) as u64;
        match msg[0] {
            MSG_COMPLETE => progress.root_report(iteration, peer),
            MSG_STOP => {
                progress.stop_seen.fetch_max(iteration, Ordering::AcqRel);
            }
            _ => return,
        }
    }
}

/// One rank of a TCP job.
pub struct TcpTransport {
    rank: usize,
    world: usize,
    seq: u64,
    parent: Option<TcpStream>,
    children: Vec<TcpStream>,
    progress: Arc<TcpProgress>,
    readers: Vec<JoinHandle<()>>,
    stats: TransportStats,
}

impl std::fmt::Debug for TcpTransport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TcpTransport")
            .field("rank", &self.rank)
            .field("world", &self.world)
            .field("seq", &self.seq)
            .finish_non_exhaustive()
    }
}

impl TcpTransport {
    /// Binds this rank's address, connects to its tree parent and (for
    /// non-root ranks) to rank 0's control link, then accepts the inbound
    /// links it expects.
    pub fn connect(config: &TcpConfig) -> Result<Self> {
        let world = config.peers.len();
        let rank = config.rank;
        if world == 0 || rank >= world {
            return Err(Error::invalid(format!("rank {rank} outside a world of {world} peers")));
        }
        let listener = TcpListener::bind(&config.peers[rank])
            .map_err(|e| io_err(format!("bind {}", config.peers[rank]), e))?;
        Self::connect_with_listener(config, listener)
    }

    /// Like [`TcpTransport::connect`] but with an already bound listener,
    /// which lets tests bind port 0 first and share the chosen addresses.
    pub fn connect_with_listener(config: &TcpConfig, listener: TcpListener) -> Result<Self> {
        let world = config.peers.len();
        let rank = config.rank;
        if world == 0 || rank >= world {
            return Err(Error::invalid(format!("rank {rank} outside a world of {world} peers")));
        }
        let deadline = Instant::now() + config.connect_timeout;
        let hello = |channel: u8| {
            let mut h = (rank as u32).to_le_bytes().to_vec();
            h.push(channel);
            h
        };

        let mut parent = None;
        let mut root_link = None;
        if let Some(p) = tree_parent(rank) {
            let mut s = connect_with_retry(&config.peers[p], deadline)?;
            s.write_all(&hello(CHANNEL_DATA)).map_err(|e| io_err("hello", e))?;
            parent = Some(s);
            let mut c = connect_with_retry(&config.peers[0], deadline)?;
            c.write_all(&hello(CHANNEL_CONTROL)).map_err(|e| io_err("hello", e))?;
            root_link = Some(c);
        }

        let child_ranks: Vec<usize> = tree_children(rank, world).collect();
        let expected_control = if rank == 0 { world - 1 } else { 0 };
        let mut children: Vec<Option<TcpStream>> = (0..child_ranks.len()).map(|_| None).collect();
        let mut control: Vec<Option<TcpStream>> = (0..world).map(|_| None).collect();
        let mut pending = child_ranks.len() + expected_control;
        listener.set_nonblocking(true).map_err(|e| io_err("listener", e))?;
        while pending > 0 {
            match listener.accept() {
                Ok((mut s, _)) => {
                    s.set_nonblocking(false).map_err(|e| io_err("accept", e))?;
                    s.set_nodelay(true).ok();
                    s.set_read_timeout(Some(Duration::from_secs(10))).ok();
                    let mut h = [0u8; 5];
                    s.read_exact(&mut h).map_err(|e| io_err("read hello", e))?;
                    s.set_read_timeout(None).ok();
                    let from = u32::from_le_bytes(h[..4].try_into().unwrap()) as usize;
                    match h[4] {
                        CHANNEL_DATA => {
                            let slot = child_ranks.iter().position(|&c| c == from).ok_or_else(|| {
                                Error::Protocol(format!("rank {from} is not a tree child of {rank}"))
                            })?;
                            if children[slot].replace(s).is_some() {
                                return Err(Error::Protocol(format!("duplicate data link from {from}")));
                            }
                        }
                        CHANNEL_CONTROL if rank == 0 && from > 0 && from < world => {
                            if control[from].replace(s).is_some() {
                                return Err(Error::Protocol(format!("duplicate control link from {from}")));
                            }
                        }
                        other => {
                            return Err(Error::Protocol(format!(
                                "unexpected hello channel {other} from rank {from}"
                            )))
                        }
                    }
                    pending -= 1;
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        return Err(Error::Transport(format!(
                            "rank {rank}: timed out waiting for {pending} inbound links"
                        )));
                    }
                    thread::sleep(Duration::from_millis(5));
                }
                Err(e) => return Err(io_err("accept", e)),
            }
        }
        let children: Vec<TcpStream> = children.into_iter().map(|c| c.expect("all children")).collect();
        for s in children.iter().chain(parent.iter()) {
            s.set_read_timeout(config.io_timeout).map_err(|e| io_err("timeout", e))?;
        }

        let threshold = alb_threshold(config.kappa, world);
        let mut reader_streams = Vec::new();
        let links: Vec<Mutex<TcpStream>> = if rank == 0 {
            control
                .into_iter()
                .enumerate()
                .skip(1)
                .map(|(peer, s)| {
                    let s = s.expect("all control links");
                    let r = s.try_clone().map_err(|e| io_err("clone", e))?;
                    reader_streams.push((peer, r));
                    Ok(Mutex::new(s))
                })
                .collect::<Result<_>>()?
        } else {
            let s = root_link.expect("non-root has a root link");
            reader_streams.push((0, s.try_clone().map_err(|e| io_err("clone", e))?));
            vec![Mutex::new(s)]
        };
        let progress = Arc::new(TcpProgress {
            rank,
            threshold,
            monitor: (rank == 0).then(|| ProgressMonitor::new(world, threshold)),
            stop_seen: AtomicU64::new(0),
            links,
        });
        let readers = reader_streams
            .into_iter()
            .map(|(peer, s)| {
                let p = Arc::clone(&progress);
                thread::Builder::new()
                    .name(format!("ctl-{rank}-{peer}"))
                    .spawn(move || control_reader(p, s, peer))
                    .map_err(|e| io_err("spawn control reader", e))
            })
            .collect::<Result<_>>()?;

        Ok(Self {
            rank,
            world,
            seq: 0,
            parent,
            children,
            progress,
            readers,
            stats: TransportStats::default(),
        })
    }

    fn send(&mut self, to_parent: bool, child: usize, frame: &[u8]) -> Result<()> {
        let stream = if to_parent {
            self.parent.as_mut().expect("parent link")
        } else {
            &mut self.children[child]
        };
        stream.write_all(frame).map_err(|e| io_err("send", e))?;
        self.stats.wire_bytes_sent += frame.len() as u64;
        Ok(())
    }

    fn recv(&mut self, from_parent: bool, child: usize, tag: u32, len: usize) -> Result<Vec<f64>> {
        let rank = self.rank;
        let stream = if from_parent {
            self.parent.as_mut().expect("parent link")
        } else {
            &mut self.children[child]
        };
        let (got_tag, got_len) = read_header(stream).map_err(|e| io_err(format!("rank {rank} recv"), e))?;
        if got_tag != tag || got_len as usize != 8 * len {
            return Err(Error::Protocol(format!(
                "rank {rank}: expected frame tag {tag:#x} with {} bytes, got tag {got_tag:#x} with {got_len}",
                8 * len
            )));
        }
        let mut payload = vec![0u8; 8 * len];
        stream
            .read_exact(&mut payload)
            .map_err(|e| io_err(format!("rank {rank} recv payload"), e))?;
        self.stats.wire_bytes_received += HEADER_BYTES + payload.len() as u64;
        Ok(decode_doubles(&payload))
    }
}

impl Transport for TcpTransport {
    fn rank(&self) -> usize {
        self.rank
    }

    fn world_size(&self) -> usize {
        self.world
    }

    fn allreduce(&mut self, kind: Collective, data: &[f64]) -> Result<Vec<f64>> {
        self.seq += 1;
        let tag = data_tag(self.seq, kind);
        let mut acc = data.to_vec();
        for c in 0..self.children.len() {
            let part = self.recv(false, c, tag, data.len())?;
            for (a, b) in acc.iter_mut().zip(&part) {
                *a += b;
            }
        }
        let result = if self.parent.is_some() {
            let frame = encode_frame(tag, &encode_doubles(&acc));
            self.send(true, 0, &frame)?;
            self.recv(true, 0, tag, data.len())?
        } else {
            acc
        };
        if !self.children.is_empty() {
            let frame = encode_frame(tag, &encode_doubles(&result));
            for c in 0..self.children.len() {
                self.send(false, c, &frame)?;
            }
        }
        self.stats.record(kind, data.len());
        Ok(result)
    }

    fn stats(&self) -> TransportStats {
        self.stats
    }

    fn progress(&self) -> Arc<dyn ProgressChannel> {
        Arc::clone(&self.progress) as Arc<dyn ProgressChannel>
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        for link in &self.progress.links {
            let s = link.lock().unwrap_or_else(|e| e.into_inner());
            let _ = s.shutdown(Shutdown::Both);
        }
        for s in self.children.iter().chain(self.parent.iter()) {
            let _ = s.shutdown(Shutdown::Both);
        }
        for r in self.readers.drain(..) {
            let _ = r.join();
        }
    }
}
