//! Command-line entry points: `repartition`, `train`, `predict`, `eval`.
//!
//! Exit codes: 0 success, 2 usage or invalid input, 3 numerical failure,
//! 4 I/O or malformed files, 1 anything else (a worker panic).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::block::FeatureShard;
use crate::data::{
    self, fmt_f64, load_shard_dir, partition_features, read_feature_map, read_labels, read_libsvm, repartition,
    Dataset,
};
use crate::driver::{fit, gather_weights, write_history_csv, FitResult, SolveMode, SolverConfig};
use crate::error::{Error, Result};
use crate::eval::auprc;
use crate::glm::LossKind;
use crate::runtime::{spawn_spmd_with, SpmdOptions, TcpConfig, TcpTransport, Transport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) | Error::Parse { .. } => EXIT_USAGE,
        Error::LineSearch { .. } | Error::Oracle(_) | Error::UndefinedMetric(_) => EXIT_NUMERICAL,
        Error::Io(_) | Error::Format { .. } | Error::Transport(_) | Error::Protocol(_) => EXIT_IO,
        Error::Join { .. } => EXIT_OTHER,
    }
}

#[derive(Debug, Parser)]
#[command(name = "splitglm", version, about = "Feature-split distributed elastic-net GLM solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Bsp,
    Alb,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LossArg {
    Squared,
    Logistic,
    Probit,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
enum TransportArg {
    Inproc,
    Tcp,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split a LIBSVM file into per-node feature shards.
    Repartition {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        nodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model. `--data` is a LIBSVM file or a directory of shards.
    Train(TrainArgs),
    /// Score LIBSVM data with a weights file.
    Predict {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to stdout.
        #[arg(long)]
        scores_out: Option<PathBuf>,
    },
    /// auPRC of scores against labels.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        /// One label per line.
        #[arg(long, conflicts_with = "data")]
        labels: Option<PathBuf>,
        /// Take labels from a LIBSVM file instead.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

#[derive(Debug, clap::Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Label file overriding the one next to the shards.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = LossArg::Logistic)]
    loss: LossArg,
    #[arg(long, default_value_t = 0.0)]
    l1: f64,
    #[arg(long, default_value_t = 0.0)]
    l2: f64,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long, value_enum, default_value_t = ModeArg::Bsp)]
    mode: ModeArg,
    #[arg(long, default_value_t = 0.75)]
    kappa: f64,
    #[arg(long, default_value_t = 1e-6)]
    nu: f64,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    mu_adaptive: Switch,
    #[arg(long, default_value_t = 1000)]
    max_outer: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = TransportArg::Inproc)]
    transport: TransportArg,
    /// This process's rank (tcp only).
    #[arg(long)]
    rank: Option<usize>,
    /// Comma-separated host:port of every rank, in rank order (tcp only).
    #[arg(long, value_delimiter = ',')]
    peers: Vec<String>,
    /// History CSV.
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    #[arg(long)]
    weights_out: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if code == EXIT_OK { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Repartition { data, nodes, seed, out: dir } => {
            let dataset = Dataset::read(&data)?;
            let ids: Vec<usize> = (0..dataset.num_features()).collect();
            let spec = partition_features(&ids, nodes, seed)?;
            let written = repartition(&dataset, &spec, &dir)?;
            writeln!(
                out,
                "wrote {} shards ({} examples, {} features) to {}",
                written.shards.len(),
                dataset.n(),
                dataset.num_features(),
                dir.display()
            )?;
            Ok(())
        }
        Command::Train(args) => train(&args, out),
        Command::Predict { weights, data, scores_out } => {
            let scores = predict_file(&weights, &data)?;
            let text: String = scores.iter().map(|&s| fmt_f64(s) + "\n").collect();
            match scores_out {
                Some(path) => fs::write(path, text)?,
                None => out.write_all(text.as_bytes())?,
            }
            Ok(())
        }
        Command::Eval { scores, labels, data } => {
            let s = read_labels(&scores)?;
            let y = match (labels, data) {
                (Some(l), _) => read_labels(&l)?,
                (None, Some(d)) => Dataset::read(&d)?.labels,
                (None, None) => return Err(Error::invalid("eval needs --labels or --data")),
            };
            writeln!(out, "{}", fmt_f64(auprc(&s, &y)?))?;
            Ok(())
        }
    }
}

/// Training data as seen by this process.
struct Loaded {
    shards: Vec<FeatureShard>,
    raw_ids: Vec<u64>,
    num_features: usize,
}

fn load_for_training(args: &TrainArgs, nodes: usize, only_rank: Option<usize>) -> Result<Loaded> {
    if args.data.is_dir() {
        let mut shards = Vec::new();
        let ranks: Vec<usize> = match only_rank {
            Some(r) => vec![r],
            None => (0..nodes).collect(),
        };
        let mut p = 0;
        for m in ranks {
            let (header, mut shard) = load_shard_dir(&args.data, m)?;
            if header.nodes != nodes {
                return Err(Error::invalid(format!(
                    "{} was split for {} nodes, not {nodes}",
                    args.data.display(),
                    header.nodes
                )));
            }
            if let Some(l) = &args.labels {
                shard = with_labels(shard, read_labels(l)?)?;
            }
            p = header.p;
            shards.push(shard);
        }
        let raw_ids = read_feature_map(&args.data.join(data::MAP_FILE))?;
        Ok(Loaded {
            shards,
            raw_ids,
            num_features: p,
        })
    } else {
        let mut dataset = Dataset::from_records(read_libsvm(fs::File::open(&args.data)?)?);
        if let Some(l) = &args.labels {
            let labels = read_labels(l)?;
            if labels.len() != dataset.n() {
                return Err(Error::invalid(format!("{} labels for {} examples", labels.len(), dataset.n())));
            }
            dataset.labels = labels;
        }
        let ids: Vec<usize> = (0..dataset.num_features()).collect();
        let spec = partition_features(&ids, nodes, args.seed)?;
        let mut shards = dataset.shards(&spec)?;
        if let Some(r) = only_rank {
            shards = vec![shards.swap_remove(r)];
        }
        Ok(Loaded {
            shards,
            num_features: dataset.num_features(),
            raw_ids: dataset.raw_ids,
        })
    }
}

fn with_labels(shard: FeatureShard, labels: Vec<f64>) -> Result<FeatureShard> {
    let cols = shard
        .columns()
        .map(|(j, c)| (j, c.rows.iter().copied().zip(c.values.iter().copied()).collect()))
        .collect();
    FeatureShard::new(shard.node_id(), shard.n(), shard.num_features(), cols, labels)
}

fn solver_config(args: &TrainArgs) -> SolverConfig {
    let loss = match args.loss {
        LossArg::Squared => LossKind::Squared,
        LossArg::Logistic => LossKind::Logistic,
        LossArg::Probit => LossKind::Probit,
    };
    let mut cfg = SolverConfig::new(loss, args.l1, args.l2);
    cfg.mode = match args.mode {
        ModeArg::Bsp => SolveMode::Bsp,
        ModeArg::Alb => SolveMode::Alb,
    };
    cfg.kappa = args.kappa;
    cfg.nu = args.nu;
    cfg.mu_adaptive = matches!(args.mu_adaptive, Switch::On);
    cfg.max_outer = args.max_outer;
    cfg.tol = args.tol;
    cfg
}

fn train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let config = solver_config(args);
    config.validate()?;
    let (result, weights) = match args.transport {
        TransportArg::Inproc => {
            if args.rank.is_some() || !args.peers.is_empty() {
                return Err(Error::invalid("--rank/--peers need --transport tcp"));
            }
            let nodes = match (args.nodes, args.data.is_dir()) {
                (Some(m), _) => m,
                (None, true) => data::read_shard_file(&args.data.join(data::shard_file_name(0)))?.0.nodes,
                (None, false) => 1,
            };
            let loaded = load_for_training(args, nodes, None)?;
            let p = loaded.num_features;
            let shards = &loaded.shards;
            let options = SpmdOptions { kappa: config.kappa };
            let mut per_rank = spawn_spmd_with(nodes, options, |t| {
                let res = fit(&shards[t.rank()], &config, t)?;
                let w = gather_weights(t, &res, p)?;
                Ok((res, w))
            })?;
            let (res, w) = per_rank.swap_remove(0);
            (Some((res, loaded.raw_ids)), w)
        }
        TransportArg::Tcp => {
            let rank = args
                .rank
                .ok_or_else(|| Error::invalid("--transport tcp needs --rank"))?;
            if args.peers.is_empty() {
                return Err(Error::invalid("--transport tcp needs --peers"));
            }
            let nodes = args.peers.len();
            if args.nodes.is_some_and(|m| m != nodes) {
                return Err(Error::invalid(format!("--nodes disagrees with {nodes} peers")));
            }
            if rank >= nodes {
                return Err(Error::invalid(format!("rank {rank} outside 0..{nodes}")));
            }
            let mut loaded = load_for_training(args, nodes, Some(rank))?;
            let shard = loaded.shards.remove(0);
            let mut tcp_config = TcpConfig::new(rank, args.peers.clone());
            tcp_config.kappa = config.kappa;
            let mut transport = TcpTransport::connect(&tcp_config)?;
            let res = fit(&shard, &config, &mut transport)?;
            let w = gather_weights(&mut transport, &res, loaded.num_features)?;
            let keep = (transport.rank() == 0).then_some((res, loaded.raw_ids));
            (keep, w)
        }
    };

    // only rank 0 (or the in-process host) writes outputs
    let Some((result, raw_ids)) = result else {
        return Ok(());
    };
    if let Some(path) = &args.weights_out {
        write_weights(path, &weights, &raw_ids)?;
    }
    if let Some(path) = &args.metrics_out {
        write_history_csv(fs::File::create(path)?, &result.history)?;
    }
    report(out, &result, &weights)?;
    Ok(())
}

fn report(out: &mut dyn Write, result: &FitResult, weights: &[f64]) -> Result<()> {
    let objective = result.final_objective().map(fmt_f64).unwrap_or_else(|| "n/a".into());
    writeln!(
        out,
        "iterations={} objective={} nnz={} converged={}",
        result.history.len(),
        objective,
        crate::eval::nnz(weights),
        result.converged
    )?;
    Ok(())
}

fn idmap_path(weights: &Path) -> PathBuf {
    let mut s = weights.as_os_str().to_owned();
    s.push(".idmap");
    PathBuf::from(s)
}

/// `feature_id value` per line for every internal id, plus the raw-id map
/// in `<path>.idmap`.
pub fn write_weights(path: &Path, weights: &[f64], raw_ids: &[u64]) -> Result<()> {
    let text: String = weights.iter().enumerate().map(|(j, &b)| format!("{j} {}\n", fmt_f64(b))).collect();
    fs::write(path, text)?;
    data::write_feature_map(&idmap_path(path), raw_ids)
}

/// Reads a weights file and its id map. Missing ids read as zero.
pub fn read_weights(path: &Path) -> Result<(Vec<f64>, Vec<u64>)> {
    let raw_ids = read_feature_map(&idmap_path(path))?;
    let mut weights = vec![0.0; raw_ids.len()];
    let bad = |line: usize, message: String| Error::Format {
        path: path.display().to_string(),
        message: format!("line {line}: {message}"),
    };
    for (k, line) in fs::read_to_string(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(j), Some(v), None) = (it.next(), it.next(), it.next()) else {
            return Err(bad(k + 1, "expected `feature_id value`".into()));
        };
        let j: usize = j.parse().map_err(|_| bad(k + 1, format!("bad feature id {j}")))?;
        let v: f64 = v.parse().map_err(|_| bad(k + 1, format!("bad value {v}")))?;
        *weights
            .get_mut(j)
            .ok_or_else(|| bad(k + 1, format!("feature {j} not in the id map")))? = v;
    }
    Ok((weights, raw_ids))
}

/// Margins of raw LIBSVM data under a weights file. Raw ids the model never
/// saw contribute nothing.
pub fn predict_file(weights: &Path, data: &Path) -> Result<Vec<f64>> {
    let (beta, raw_ids) = read_weights(weights)?;
    let index: BTreeMap<u64, usize> = raw_ids.iter().enumerate().map(|(k, &r)| (r, k)).collect();
    let records = read_libsvm(fs::File::open(data)?)?;
    Ok(records
        .iter()
        .map(|r| {
            r.entries
                .iter()
                .filter_map(|(id, v)| index.get(id).map(|&j| v * beta[j]))
                .sum()
        })
        .collect())
}
