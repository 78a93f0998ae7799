//! LIBSVM ingestion, pseudo-random feature partitioning and the feature-major
//! shard files each worker loads.
//!
//! Raw feature ids are remapped to dense 0-based internal ids in increasing
//! raw order. The map is written next to the shards (`features.map`) so that
//! raw data can be scored with internal-id weights later.
//!
//! Shard file layout (text, numbers in shortest round-trip form):
//!
//! ```text
//! shard node=1 nodes=4 n=200 p=37 seed=7 columns=9
//! 3 0:0.5 17:-1.25
//! ...
//! sha256 <hex digest of all preceding bytes>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::block::FeatureShard;
use crate::error::{Error, Result};

pub const LABELS_FILE: &str = "labels.txt";
pub const MAP_FILE: &str = "features.map";

pub fn shard_file_name(node: usize) -> String {
    format!("shard-{node}.txt")
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// One example-major input line. Entries hold raw ids, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct LibsvmRecord {
    pub label: f64,
    pub entries: Vec<(u64, f64)>,
}

/// Parses `label id:value id:value ...`. Anything after `#` is a comment.
/// Explicit zeros are dropped.
pub fn parse_libsvm_line(line: &str, line_no: usize) -> Result<LibsvmRecord> {
    let err = |message: String| Error::Parse { line: line_no, message };
    let body = line.split('#').next().unwrap_or("");
    let mut tokens = body.split_whitespace();
    let label_tok = tokens.next().ok_or_else(|| err("empty line".into()))?;
    let label: f64 = label_tok
        .parse()
        .map_err(|_| err(format!("bad label {label_tok:?}")))?;
    if !label.is_finite() {
        return Err(err(format!("non-finite label {label_tok:?}")));
    }
    let mut entries = Vec::new();
    for tok in tokens {
        let (id, value) = tok
            .split_once(':')
            .ok_or_else(|| err(format!("expected id:value, got {tok:?}")))?;
        let id: u64 = id.parse().map_err(|_| err(format!("bad feature id in {tok:?}")))?;
        let value: f64 = value.parse().map_err(|_| err(format!("bad value in {tok:?}")))?;
        if !value.is_finite() {
            return Err(err(format!("non-finite value in {tok:?}")));
        }
        // zeros stay until the duplicate check has seen their ids
        entries.push((id, value));
    }
    entries.sort_by_key(|e| e.0);
    if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(err(format!("feature {} appears twice", w[0].0)));
    }
    entries.retain(|e| e.1 != 0.0);
    Ok(LibsvmRecord { label, entries })
}

/// Reads every non-blank line of a LIBSVM stream.
pub fn read_libsvm(reader: impl Read) -> Result<Vec<LibsvmRecord>> {
    let mut out = Vec::new();
    for (k, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.split('#').next().unwrap_or("").trim().is_empty() {
            continue;
        }
        out.push(parse_libsvm_line(&line, k + 1)?);
    }
    Ok(out)
}

/// Example-major data with dense internal feature ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub labels: Vec<f64>,
    /// Per example, `(internal id, value)` sorted by id.
    pub rows: Vec<Vec<(usize, f64)>>,
    /// `raw_ids[internal]` is the id that appeared in the input.
    pub raw_ids: Vec<u64>,
}

impl Dataset {
    pub fn from_records(records: Vec<LibsvmRecord>) -> Self {
        let mut raw: Vec<u64> = records.iter().flat_map(|r| r.entries.iter().map(|e| e.0)).collect();
        raw.sort_unstable();
        raw.dedup();
        let index: BTreeMap<u64, usize> = raw.iter().enumerate().map(|(k, &id)| (id, k)).collect();
        let mut labels = Vec::with_capacity(records.len());
        let mut rows = Vec::with_capacity(records.len());
        for r in records {
            labels.push(r.label);
            rows.push(r.entries.iter().map(|&(id, v)| (index[&id], v)).collect());
        }
        Self { labels, rows, raw_ids: raw }
    }

    /// Builds from internal ids directly (`raw_ids` becomes the identity).
    pub fn from_rows(labels: Vec<f64>, rows: Vec<Vec<(usize, f64)>>, num_features: usize) -> Result<Self> {
        if labels.len() != rows.len() {
            return Err(Error::invalid(format!("{} labels for {} rows", labels.len(), rows.len())));
        }
        let mut rows = rows;
        for (i, row) in rows.iter_mut().enumerate() {
            row.sort_by_key(|e| e.0);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::invalid(format!("row {i}: feature {} appears twice", w[0].0)));
                }
            }
            if let Some(&(j, _)) = row.iter().find(|e| e.0 >= num_features) {
                return Err(Error::invalid(format!("row {i}: feature {j} outside 0..{num_features}")));
            }
            if row.iter().any(|e| !e.1.is_finite()) {
                return Err(Error::invalid(format!("row {i}: non-finite value")));
            }
            row.retain(|e| e.1 != 0.0);
        }
        Ok(Self {
            labels,
            rows,
            raw_ids: (0..num_features as u64).collect(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(Self::from_records(read_libsvm(fs::File::open(path)?)?))
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn num_features(&self) -> usize {
        self.raw_ids.len()
    }

    /// Feature-major copy: `columns[j]` lists `(example, value)` by example.
    pub fn columns(&self) -> Vec<Vec<(u32, f64)>> {
        let mut cols = vec![Vec::new(); self.num_features()];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                cols[j].push((i as u32, v));
            }
        }
        cols
    }

    /// `X beta` for internal-id weights.
    pub fn margins(&self, beta: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, v)| v * beta.get(j).copied().unwrap_or(0.0)).sum())
            .collect()
    }

    /// In-memory shards, one per node of `spec`.
    pub fn shards(&self, spec: &PartitionSpec) -> Result<Vec<FeatureShard>> {
        if self.n() > u32::MAX as usize {
            return Err(Error::invalid("too many examples for u32 row indices"));
        }
        let mut columns: Vec<Option<Vec<(u32, f64)>>> = self.columns().into_iter().map(Some).collect();
        (0..spec.nodes)
            .map(|m| {
                let cols = spec.sets[m]
                    .iter()
                    .map(|&j| {
                        let c = columns
                            .get_mut(j)
                            .and_then(Option::take)
                            .ok_or_else(|| Error::invalid(format!("unknown feature id {j}")))?;
                        Ok((j, c))
                    })
                    .collect::<Result<Vec<_>>>()?;
                FeatureShard::new(m, self.n(), self.num_features(), cols, self.labels.clone())
            })
            .collect()
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Node owning internal feature `id`.
pub fn feature_node(id: u64, seed: u64, nodes: usize) -> usize {
    (splitmix64(id ^ splitmix64(seed)) % nodes as u64) as usize
}

/// Assignment of every observed feature to one of `nodes` blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionSpec {
    pub nodes: usize,
    pub seed: u64,
    /// `sets[m]`: feature ids owned by node `m`, ascending.
    pub sets: Vec<Vec<usize>>,
}

impl PartitionSpec {
    pub fn node_of(&self, id: usize) -> Option<usize> {
        self.sets.iter().position(|s| s.binary_search(&id).is_ok())
    }
}

pub fn partition_features(observed: &[usize], nodes: usize, seed: u64) -> Result<PartitionSpec> {
    if nodes == 0 {
        return Err(Error::invalid("number of nodes must be at least 1"));
    }
    let mut sets = vec![Vec::new(); nodes];
    for &j in observed {
        sets[feature_node(j as u64, seed, nodes)].push(j);
    }
    for s in &mut sets {
        s.sort_unstable();
        s.dedup();
    }
    Ok(PartitionSpec { nodes, seed, sets })
}

/// Header of a shard file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShardHeader {
    pub node: usize,
    pub nodes: usize,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    pub columns: usize,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn render_shard(header: &ShardHeader, columns: &[(usize, &[(u32, f64)])]) -> String {
    let mut body = format!(
        "shard node={} nodes={} n={} p={} seed={} columns={}\n",
        header.node, header.nodes, header.n, header.p, header.seed, header.columns
    );
    for (j, entries) in columns {
        body.push_str(&j.to_string());
        for &(i, v) in *entries {
            body.push(' ');
            body.push_str(&i.to_string());
            body.push(':');
            body.push_str(&fmt_f64(v));
        }
        body.push('\n');
    }
    let digest = Sha256::digest(body.as_bytes());
    body.push_str("sha256 ");
    body.push_str(&hex(&digest));
    body.push('\n');
    body
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    f.sync_all()?;
    Ok(())
}

/// Files produced by [`repartition`].
#[derive(Debug, Clone, PartialEq)]
pub struct RepartitionOutput {
    pub shards: Vec<PathBuf>,
    pub labels: PathBuf,
    pub map: PathBuf,
}

/// Writes one shard file per node, the label file and the id map into
/// `out_dir` (created if missing).
pub fn repartition(data: &Dataset, spec: &PartitionSpec, out_dir: &Path) -> Result<RepartitionOutput> {
    fs::create_dir_all(out_dir)?;
    let columns = data.columns();
    let p = data.num_features();
    let mut seen = vec![false; p];
    for set in &spec.sets {
        for &j in set {
            if j >= p {
                return Err(Error::invalid(format!("partition names unknown feature id {j}")));
            }
            seen[j] = true;
        }
    }
    if let Some(j) = seen.iter().position(|s| !s) {
        return Err(Error::invalid(format!("feature {j} is not assigned to any node")));
    }

    let mut shards = Vec::with_capacity(spec.nodes);
    for (m, set) in spec.sets.iter().enumerate() {
        let cols: Vec<(usize, &[(u32, f64)])> = set.iter().map(|&j| (j, columns[j].as_slice())).collect();
        let header = ShardHeader {
            node: m,
            nodes: spec.nodes,
            n: data.n(),
            p,
            seed: spec.seed,
            columns: cols.len(),
        };
        let path = out_dir.join(shard_file_name(m));
        write_file(&path, &render_shard(&header, &cols))?;
        shards.push(path);
    }

    let labels = out_dir.join(LABELS_FILE);
    write_file(&labels, &data.labels.iter().map(|&y| fmt_f64(y) + "\n").collect::<String>())?;
    let map = out_dir.join(MAP_FILE);
    write_feature_map(&map, &data.raw_ids)?;
    Ok(RepartitionOutput { shards, labels, map })
}

/// `internal raw` per line.
pub fn write_feature_map(path: &Path, raw_ids: &[u64]) -> Result<()> {
    let text: String = raw_ids.iter().enumerate().map(|(k, r)| format!("{k} {r}\n")).collect();
    write_file(path, &text)
}

pub fn read_feature_map(path: &Path) -> Result<Vec<u64>> {
    let text = fs::read_to_string(path)?;
    let bad = |line: usize, message: String| Error::Format {
        path: path.display().to_string(),
        message: format!("line {line}: {message}"),
    };
    let mut raw = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(bad(k + 1, "expected `internal raw`".into()));
        };
        if a.parse::<usize>().ok() != Some(k) {
            return Err(bad(k + 1, format!("internal id {a} out of sequence")));
        }
        raw.push(b.parse().map_err(|_| bad(k + 1, format!("bad raw id {b}")))?);
    }
    if raw.windows(2).any(|w| w[0] >= w[1]) {
        return Err(bad(0, "raw ids are not strictly increasing".into()));
    }
    Ok(raw)
}

pub fn read_labels(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            let y: f64 = l.trim().parse().map_err(|_| Error::Parse {
                line: k + 1,
                message: format!("bad label {l:?} in {}", path.display()),
            })?;
            if y.is_finite() {
                Ok(y)
            } else {
                Err(Error::Parse {
                    line: k + 1,
                    message: format!("non-finite label in {}", path.display()),
                })
            }
        })
        .collect()
}

fn parse_header(line: &str) -> Option<ShardHeader> {
    let mut it = line.split_whitespace();
    if it.next()? != "shard" {
        return None;
    }
    let mut fields = BTreeMap::new();
    for tok in it {
        let (k, v) = tok.split_once('=')?;
        fields.insert(k, v.parse::<u64>().ok()?);
    }
    if fields.len() != 6 {
        return None;
    }
    Some(ShardHeader {
        node: *fields.get("node")? as usize,
        nodes: *fields.get("nodes")? as usize,
        n: *fields.get("n")? as usize,
        p: *fields.get("p")? as usize,
        seed: *fields.get("seed")?,
        columns: *fields.get("columns")? as usize,
    })
}

/// Reads and verifies a shard file; returns the header and the columns.
pub fn read_shard_file(path: &Path) -> Result<(ShardHeader, Vec<(usize, Vec<(u32, f64)>)>)> {
    let text = fs::read_to_string(path)?;
    let bad = |message: String| Error::Format {
        path: path.display().to_string(),
        message,
    };
    let body_end = text
        .trim_end_matches('\n')
        .rfind('\n')
        .map(|k| k + 1)
        .ok_or_else(|| bad("missing checksum trailer".into()))?;
    let (body, trailer) = text.split_at(body_end);
    let want = trailer
        .trim_end()
        .strip_prefix("sha256 ")
        .ok_or_else(|| bad("missing checksum trailer".into()))?;
    if hex(&Sha256::digest(body.as_bytes())) != want {
        return Err(bad("checksum mismatch".into()));
    }

    let mut lines = body.lines();
    let header = lines
        .next()
        .and_then(parse_header)
        .ok_or_else(|| bad("bad header line".into()))?;
    let mut columns = Vec::with_capacity(header.columns);
    let mut prev: Option<usize> = None;
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        let mut toks = line.split_whitespace();
        let j: usize = toks
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad(format!("line {lineno}: bad feature id")))?;
        if prev.is_some_and(|p| p >= j) {
            return Err(bad(format!("line {lineno}: feature ids not increasing")));
        }
        prev = Some(j);
        let entries = toks
            .map(|t| {
                let (i, v) = t.split_once(':')?;
                Some((i.parse::<u32>().ok()?, v.parse::<f64>().ok()?))
            })
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad(format!("line {lineno}: bad entry")))?;
        columns.push((j, entries));
    }
    if columns.len() != header.columns {
        return Err(bad(format!("header says {} columns, found {}", header.columns, columns.len())));
    }
    if header.node >= header.nodes {
        return Err(bad(format!("node {} of {}", header.node, header.nodes)));
    }
    Ok((header, columns))
}

/// Loads a worker's shard with its labels.
pub fn load_shard(shard_path: &Path, labels_path: &Path) -> Result<(ShardHeader, FeatureShard)> {
    let (header, columns) = read_shard_file(shard_path)?;
    let labels = read_labels(labels_path)?;
    let shard = FeatureShard::new(header.node, header.n, header.p, columns, labels).map_err(|e| Error::Format {
        path: shard_path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok((header, shard))
}

/// Loads shard `node` from a directory written by [`repartition`].
pub fn load_shard_dir(dir: &Path, node: usize) -> Result<(ShardHeader, FeatureShard)> {
    load_shard(&dir.join(shard_file_name(node)), &dir.join(LABELS_FILE))
}
