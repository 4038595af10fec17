//! Execution backends: the contract, a deterministic simulated executor over
//! materialized catalog data, and an SQL adapter seam with a mock that
//! replays canned profiles.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::catalog::{Catalog, MaterializedTable, Value};
use crate::error::{Error, Result};
use crate::querygraph::{
    canonical_ids, format_hash, graph_hash, structural_counts, validate_result, ColumnRef,
    ExprKind, NodeId, NodeKind, QueryGraph, StructuralCounts,
};

/// Hidden ground-truth constants of the simulated engine (milliseconds).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruth {
    /// Per row and per selected byte.
    pub scan: f64,
    pub arith: f64,
    pub string: f64,
    pub date: f64,
    pub sort_nlogn: f64,
    pub sort_width: f64,
    pub join_build: f64,
    pub join_probe: f64,
    pub join_task: f64,
    pub join_output: f64,
    pub agg_input: f64,
    pub agg_output: f64,
}

impl Default for GroundTruth {
    fn default() -> Self {
        GroundTruth {
            scan: 0.0005,
            arith: 0.0004,
            string: 0.0012,
            date: 0.0006,
            sort_nlogn: 0.001,
            sort_width: 0.0002,
            join_build: 0.0008,
            join_probe: 0.0005,
            join_task: 0.05,
            join_output: 0.0003,
            agg_input: 0.0006,
            agg_output: 0.0003,
        }
    }
}

impl GroundTruth {
    pub fn expr(&self, kind: ExprKind) -> f64 {
        match kind {
            ExprKind::Arith => self.arith,
            ExprKind::String => self.string,
            ExprKind::Date => self.date,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackendConfig {
    pub parallel_tasks: u32,
    pub ground_truth: GroundTruth,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            parallel_tasks: 4,
            ground_truth: GroundTruth::default(),
        }
    }
}

/// Measured statistics of one operator instance. For a Join, `input_rows`
/// is `[build, probe]`; for a Scan it is empty.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorStats {
    pub node: NodeId,
    pub kind: String,
    pub input_rows: Vec<u64>,
    pub output_rows: u64,
    pub cpu_time_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExecutionProfile {
    pub cpu_time_ms: f64,
    pub scanned_bytes: u64,
    pub structural: StructuralCounts,
    pub per_operator: Vec<OperatorStats>,
}

/// Exact per-node output row counts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CardinalityEstimate {
    pub rows: BTreeMap<NodeId, u64>,
}

impl CardinalityEstimate {
    pub fn get(&self, id: NodeId) -> Option<u64> {
        self.rows.get(&id).copied()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BackendStats {
    pub executions: u64,
    pub probes: u64,
    /// Metered separately; never part of a workload profile.
    pub probe_cpu_ms: f64,
}

pub trait ExecutionBackend: Send + Sync {
    fn catalog(&self) -> &Catalog;
    fn execute(&self, g: &QueryGraph) -> Result<ExecutionProfile>;
    fn probe_cardinalities(&self, g: &QueryGraph) -> Result<CardinalityEstimate>;
    fn stats(&self) -> BackendStats;
    /// Degree of parallelism the engine schedules joins with.
    fn parallel_tasks(&self) -> u32 {
        4
    }
}

// ---------------------------------------------------------------------------
// Simulated engine
// ---------------------------------------------------------------------------

/// Rows of a core relation as row indices into each participating table.
struct Rel {
    tables: Vec<String>,
    idx: Vec<Vec<u32>>,
}

impl Rel {
    fn len(&self) -> usize {
        self.idx.first().map(Vec::len).unwrap_or(0)
    }
}

enum TopRel {
    Core(Rel),
    Grouped { cols: Vec<ColumnRef>, rows: Vec<Vec<i64>> },
}

impl TopRel {
    fn len(&self) -> usize {
        match self {
            TopRel::Core(r) => r.len(),
            TopRel::Grouped { rows, .. } => rows.len(),
        }
    }
}

pub struct SimulatedBackend {
    catalog: Catalog,
    config: BackendConfig,
    /// table -> column -> order-preserving integer codes
    data: HashMap<String, HashMap<String, Vec<i64>>>,
    row_counts: HashMap<String, usize>,
    executions: AtomicU64,
    probes: AtomicU64,
    probe_cpu: Mutex<f64>,
}

fn encode_column(values: &[Value]) -> Vec<i64> {
    if values.iter().all(|v| v.ordinal().is_some()) {
        return values.iter().map(|v| v.ordinal().expect("checked")).collect();
    }
    let mut dict: Vec<&Value> = values.iter().collect();
    dict.sort();
    dict.dedup();
    values
        .iter()
        .map(|v| dict.binary_search(&v).expect("value is in its dictionary") as i64)
        .collect()
}

impl SimulatedBackend {
    pub fn new(catalog: Catalog, tables: &[MaterializedTable]) -> Result<Self> {
        Self::with_config(catalog, tables, BackendConfig::default())
    }

    pub fn with_config(catalog: Catalog, tables: &[MaterializedTable], config: BackendConfig) -> Result<Self> {
        if config.parallel_tasks < 1 {
            return Err(Error::Validation("parallel_tasks must be ≥ 1".into()));
        }
        let mut data = HashMap::new();
        let mut row_counts = HashMap::new();
        for ts in &catalog.tables {
            let t = tables
                .iter()
                .find(|t| t.name == ts.name)
                .ok_or_else(|| Error::Backend(format!("no data for table `{}`", ts.name)))?;
            if t.row_count() as u64 != ts.row_count {
                return Err(Error::Backend(format!(
                    "table `{}` has {} rows but the catalog says {}",
                    ts.name,
                    t.row_count(),
                    ts.row_count
                )));
            }
            let mut cols = HashMap::new();
            for c in &ts.columns {
                let col = t
                    .column(&c.name)
                    .ok_or_else(|| Error::Backend(format!("no data for `{}.{}`", ts.name, c.name)))?;
                cols.insert(c.name.clone(), encode_column(&col.values));
            }
            row_counts.insert(ts.name.clone(), t.row_count());
            data.insert(ts.name.clone(), cols);
        }
        Ok(SimulatedBackend {
            catalog,
            config,
            data,
            row_counts,
            executions: AtomicU64::new(0),
            probes: AtomicU64::new(0),
            probe_cpu: Mutex::new(0.0),
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn column(&self, c: &ColumnRef) -> Result<&[i64]> {
        self.data
            .get(&c.table)
            .and_then(|t| t.get(&c.column))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Backend(format!("missing column {c}")))
    }

    fn value_at(&self, rel: &Rel, c: &ColumnRef, row: usize) -> Result<i64> {
        let pos = rel
            .tables
            .iter()
            .position(|t| *t == c.table)
            .ok_or_else(|| Error::Backend(format!("{c} is not in scope")))?;
        Ok(self.column(c)?[rel.idx[pos][row] as usize])
    }

    /// Runs the graph, returning per-operator stats in post-order.
    fn run(&self, g: &QueryGraph) -> Result<Vec<OperatorStats>> {
        validate_result(g, &self.catalog)?;
        let gt = &self.config.ground_truth;
        let mut stats: Vec<OperatorStats> = Vec::new();
        let mut core: HashMap<NodeId, Rel> = HashMap::new();
        let mut top: Option<TopRel> = None;
        for id in g.post_order() {
            let children = g.children(id);
            let kind = g.kind(id);
            let (input_rows, output_rows, cpu) = match kind {
                NodeKind::Scan { table, columns } => {
                    let n = self.row_counts[table];
                    let ts = self.catalog.table(table).expect("validated");
                    let bytes: u64 = columns
                        .iter()
                        .map(|c| ts.column(c).expect("validated").bytes_per_value)
                        .sum();
                    core.insert(
                        id,
                        Rel {
                            tables: vec![table.clone()],
                            idx: vec![(0..n as u32).collect()],
                        },
                    );
                    (vec![], n as u64, n as f64 * bytes as f64 * gt.scan)
                }
                NodeKind::Filter { predicates } => {
                    let input = core.remove(&children[0]).expect("post-order");
                    let n_in = input.len();
                    let mut keep = Vec::with_capacity(n_in);
                    let cols = predicates
                        .iter()
                        .map(|p| {
                            let bound = p.bound.ordinal().ok_or_else(|| {
                                Error::Backend(format!("non-range literal on {}", p.column))
                            })?;
                            Ok((self.column(&p.column)?, bound))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    for &r in &input.idx[0] {
                        if cols.iter().all(|(col, bound)| col[r as usize] <= *bound) {
                            keep.push(r);
                        }
                    }
                    let out = keep.len() as u64;
                    core.insert(
                        id,
                        Rel {
                            tables: input.tables,
                            idx: vec![keep],
                        },
                    );
                    (
                        vec![n_in as u64],
                        out,
                        n_in as f64 * gt.arith * predicates.len() as f64,
                    )
                }
                NodeKind::Join { left_key, right_key } => {
                    let left = core.remove(&children[0]).expect("post-order");
                    let right = core.remove(&children[1]).expect("post-order");
                    let (nl, nr) = (left.len(), right.len());
                    // build on the smaller input, ties to the left
                    let build_left = nl <= nr;
                    let (build, build_key, probe, probe_key) = if build_left {
                        (&left, left_key, &right, right_key)
                    } else {
                        (&right, right_key, &left, left_key)
                    };
                    let mut table: HashMap<i64, Vec<usize>> = HashMap::new();
                    for r in 0..build.len() {
                        table.entry(self.value_at(build, build_key, r)?).or_default().push(r);
                    }
                    let mut pairs: Vec<(usize, usize)> = Vec::new();
                    for r in 0..probe.len() {
                        if let Some(ms) = table.get(&self.value_at(probe, probe_key, r)?) {
                            for &m in ms {
                                pairs.push((m, r));
                            }
                        }
                    }
                    let mut tables = left.tables.clone();
                    tables.extend(right.tables.iter().cloned());
                    let mut idx: Vec<Vec<u32>> = vec![Vec::with_capacity(pairs.len()); tables.len()];
                    for &(b, p) in &pairs {
                        let (l, r) = if build_left { (b, p) } else { (p, b) };
                        for (k, col) in left.idx.iter().enumerate() {
                            idx[k].push(col[l]);
                        }
                        for (k, col) in right.idx.iter().enumerate() {
                            idx[left.idx.len() + k].push(col[r]);
                        }
                    }
                    let out = pairs.len() as u64;
                    let (nb, np) = if build_left { (nl, nr) } else { (nr, nl) };
                    let width = g.output_width(id) as f64;
                    let cpu = gt.join_build * nb as f64
                        + gt.join_probe * np as f64
                        + gt.join_task * self.config.parallel_tasks as f64
                        + gt.join_output * out as f64 * width;
                    core.insert(id, Rel { tables, idx });
                    (vec![nb as u64, np as u64], out, cpu)
                }
                NodeKind::Aggregate { group_by, .. } => {
                    let input = self.take_top(&mut core, &mut top, children[0]);
                    let n_in = input.len();
                    let keys: Vec<Vec<i64>> = match &input {
                        TopRel::Core(rel) => (0..n_in)
                            .map(|r| group_by.iter().map(|c| self.value_at(rel, c, r)).collect())
                            .collect::<Result<_>>()?,
                        TopRel::Grouped { cols, rows } => {
                            let pos: Vec<usize> = group_by
                                .iter()
                                .map(|c| cols.iter().position(|x| x == c).expect("validated"))
                                .collect();
                            rows.iter()
                                .map(|row| pos.iter().map(|&p| row[p]).collect())
                                .collect()
                        }
                    };
                    let mut seen = HashSet::new();
                    let mut rows = Vec::new();
                    for k in keys {
                        if seen.insert(k.clone()) {
                            rows.push(k);
                        }
                    }
                    if group_by.is_empty() {
                        rows = vec![Vec::new()];
                    }
                    let out = rows.len() as u64;
                    top = Some(TopRel::Grouped {
                        cols: group_by.clone(),
                        rows,
                    });
                    let cpu = gt.agg_input * n_in as f64
                        + gt.agg_output * out as f64 * group_by.len() as f64;
                    (vec![n_in as u64], out, cpu)
                }
                NodeKind::Sort { .. } => {
                    let input = self.take_top(&mut core, &mut top, children[0]);
                    let n = input.len() as f64;
                    top = Some(input);
                    let width = g.output_width(id) as f64;
                    let cpu = gt.sort_nlogn * n * n.max(2.0).log2() + gt.sort_width * n * width;
                    (vec![n as u64], n as u64, cpu)
                }
                NodeKind::EvalScalar { expr, repeat, .. } => {
                    let input = self.take_top(&mut core, &mut top, children[0]);
                    let n = input.len() as u64;
                    top = Some(input);
                    (vec![n], n, n as f64 * gt.expr(*expr) * *repeat as f64)
                }
            };
            stats.push(OperatorStats {
                node: id,
                kind: kind.name().to_string(),
                input_rows,
                output_rows,
                cpu_time_ms: cpu,
            });
        }
        Ok(stats)
    }

    fn take_top(&self, core: &mut HashMap<NodeId, Rel>, top: &mut Option<TopRel>, child: NodeId) -> TopRel {
        match core.remove(&child) {
            Some(rel) => TopRel::Core(rel),
            None => top.take().expect("chain input was produced"),
        }
    }

    fn scanned_bytes(&self, g: &QueryGraph) -> u64 {
        g.scans()
            .iter()
            .map(|(_, t, cols)| {
                let ts = self.catalog.table(t).expect("validated");
                cols.iter()
                    .map(|c| ts.column(c).expect("validated").scan_weight)
                    .sum::<u64>()
            })
            .sum()
    }
}

impl ExecutionBackend for SimulatedBackend {
    fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    fn execute(&self, g: &QueryGraph) -> Result<ExecutionProfile> {
        let per_operator = self.run(g)?;
        self.executions.fetch_add(1, Ordering::Relaxed);
        Ok(ExecutionProfile {
            cpu_time_ms: per_operator.iter().map(|s| s.cpu_time_ms).sum(),
            scanned_bytes: self.scanned_bytes(g),
            structural: structural_counts(g),
            per_operator,
        })
    }

    fn probe_cardinalities(&self, g: &QueryGraph) -> Result<CardinalityEstimate> {
        let per_operator = self.run(g)?;
        // a COUNT(*) per node: charge the core's work without materialization
        let gt = &self.config.ground_truth;
        let cost: f64 = per_operator
            .iter()
            .filter(|s| g.kind(s.node).is_core())
            .map(|s| match g.kind(s.node) {
                NodeKind::Join { .. } => {
                    s.cpu_time_ms - gt.join_output * s.output_rows as f64 * g.output_width(s.node) as f64
                }
                _ => s.cpu_time_ms,
            })
            .sum();
        self.probes.fetch_add(1, Ordering::Relaxed);
        *self.probe_cpu.lock().expect("probe meter lock") += cost;
        Ok(CardinalityEstimate {
            rows: per_operator.iter().map(|s| (s.node, s.output_rows)).collect(),
        })
    }

    fn stats(&self) -> BackendStats {
        BackendStats {
            executions: self.executions.load(Ordering::Relaxed),
            probes: self.probes.load(Ordering::Relaxed),
            probe_cpu_ms: *self.probe_cpu.lock().expect("probe meter lock"),
        }
    }

    fn parallel_tasks(&self) -> u32 {
        self.config.parallel_tasks
    }
}

// ---------------------------------------------------------------------------
// Profile text format
// ---------------------------------------------------------------------------

pub fn profile_to_text(p: &ExecutionProfile) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "cpu_time_ms={}", p.cpu_time_ms);
    let _ = writeln!(s, "scanned_bytes={}", p.scanned_bytes);
    let c = &p.structural;
    let _ = writeln!(
        s,
        "joins={} aggregates={} sorts={} tables={}",
        c.joins, c.aggregates, c.sorts, c.tables
    );
    for op in &p.per_operator {
        let ins = op
            .input_rows
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(",");
        let _ = writeln!(
            s,
            "op {} {} in={ins} out={} cpu={}",
            op.node, op.kind, op.output_rows, op.cpu_time_ms
        );
    }
    s
}

pub fn profile_from_text(text: &str) -> std::result::Result<ExecutionProfile, AdapterError> {
    let bad = |what: &str| AdapterError::Parse(format!("malformed profile: {what}"));
    let mut lines = text.lines();
    let mut field = |key: &str| -> std::result::Result<String, AdapterError> {
        let line = lines.next().ok_or_else(|| bad(key))?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .map(str::to_string)
            .ok_or_else(|| bad(key))
    };
    let cpu_time_ms: f64 = field("cpu_time_ms")?.parse().map_err(|_| bad("cpu_time_ms"))?;
    let scanned_bytes: u64 = field("scanned_bytes")?.parse().map_err(|_| bad("scanned_bytes"))?;
    let counts_line = lines.next().ok_or_else(|| bad("counts"))?;
    let mut counts = [0u32; 4];
    for (i, (part, key)) in counts_line
        .split(' ')
        .zip(["joins", "aggregates", "sorts", "tables"])
        .enumerate()
    {
        counts[i] = part
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(key))?;
    }
    let mut per_operator = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let parts: Vec<&str> = line.split(' ').collect();
        if parts.len() != 6 || parts[0] != "op" {
            return Err(bad("operator line"));
        }
        let node = parts[1]
            .strip_prefix('n')
            .and_then(|n| n.parse().ok())
            .map(NodeId)
            .ok_or_else(|| bad("node id"))?;
        let ins = parts[3].strip_prefix("in=").ok_or_else(|| bad("in"))?;
        let input_rows = if ins.is_empty() {
            Vec::new()
        } else {
            ins.split(',')
                .map(|v| v.parse().map_err(|_| bad("in")))
                .collect::<std::result::Result<_, _>>()?
        };
        per_operator.push(OperatorStats {
            node,
            kind: parts[2].to_string(),
            input_rows,
            output_rows: parts[4]
                .strip_prefix("out=")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad("out"))?,
            cpu_time_ms: parts[5]
                .strip_prefix("cpu=")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad("cpu"))?,
        });
    }
    Ok(ExecutionProfile {
        cpu_time_ms,
        scanned_bytes,
        structural: StructuralCounts {
            joins: counts[0],
            aggregates: counts[1],
            sorts: counts[2],
            tables: counts[3],
        },
        per_operator,
    })
}

/// Renames the node ids of per-operator rows through `map`.
pub fn remap_profile(p: &ExecutionProfile, map: &HashMap<NodeId, NodeId>) -> ExecutionProfile {
    let mut out = p.clone();
    for op in out.per_operator.iter_mut() {
        if let Some(n) = map.get(&op.node) {
            op.node = *n;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// SQL adapters
// ---------------------------------------------------------------------------

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdapterError {
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("bad remote profile: {0}")]
    Parse(String),
}

impl AdapterError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, AdapterError::Connection(_) | AdapterError::Timeout(_))
    }
}

/// Remote engine seam: SQL in, profile out. Node ids in the returned
/// profile are canonical ids of the submitted query.
pub trait SqlAdapter: Send + Sync {
    fn submit_sql(&self, sql: &str) -> std::result::Result<ExecutionProfile, AdapterError>;
}

pub fn profile_file_name(exact_hash: u64) -> String {
    format!("{}.profile", format_hash(exact_hash))
}

/// Replays canned profiles from `<dir>/<exact hash>.profile`.
pub struct MockAdapter {
    dir: PathBuf,
}

impl MockAdapter {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        MockAdapter { dir: dir.into() }
    }
}

impl SqlAdapter for MockAdapter {
    fn submit_sql(&self, sql: &str) -> std::result::Result<ExecutionProfile, AdapterError> {
        let g = crate::translator::parse_sql(sql).map_err(|e| AdapterError::Parse(e.to_string()))?;
        let path = self.dir.join(profile_file_name(graph_hash(&g, false)));
        let text = fs::read_to_string(&path)
            .map_err(|e| AdapterError::Connection(format!("{}: {e}", path.display())))?;
        profile_from_text(&text)
    }
}

/// Backend over an [`SqlAdapter`]. Cardinality probes go to `prober`, which
/// stands in for the auxiliary COUNT(*) queries.
pub struct AdapterBackend<A> {
    adapter: A,
    prober: Arc<dyn ExecutionBackend>,
    max_retries: u32,
    executions: AtomicU64,
}

impl<A: SqlAdapter> AdapterBackend<A> {
    pub fn new(adapter: A, prober: Arc<dyn ExecutionBackend>) -> Self {
        AdapterBackend {
            adapter,
            prober,
            max_retries: 2,
            executions: AtomicU64::new(0),
        }
    }

    pub fn with_retries(mut self, n: u32) -> Self {
        self.max_retries = n;
        self
    }
}

impl<A: SqlAdapter> ExecutionBackend for AdapterBackend<A> {
    fn catalog(&self) -> &Catalog {
        self.prober.catalog()
    }

    fn execute(&self, g: &QueryGraph) -> Result<ExecutionProfile> {
        validate_result(g, self.catalog())?;
        let sql = crate::translator::to_sql(g)?;
        let mut attempt = 0;
        let profile = loop {
            match self.adapter.submit_sql(&sql) {
                Ok(p) => break p,
                Err(e) if e.is_retryable() && attempt < self.max_retries => attempt += 1,
                Err(e) => return Err(e.into()),
            }
        };
        self.executions.fetch_add(1, Ordering::Relaxed);
        let back: HashMap<NodeId, NodeId> = canonical_ids(g).into_iter().map(|(o, c)| (c, o)).collect();
        Ok(remap_profile(&profile, &back))
    }

    fn probe_cardinalities(&self, g: &QueryGraph) -> Result<CardinalityEstimate> {
        self.prober.probe_cardinalities(g)
    }

    fn stats(&self) -> BackendStats {
        let inner = self.prober.stats();
        BackendStats {
            executions: self.executions.load(Ordering::Relaxed),
            ..inner
        }
    }

    fn parallel_tasks(&self) -> u32 {
        self.prober.parallel_tasks()
    }
}

/// Passes calls through and writes every executed profile (canonical ids)
/// into `dir`, producing the canned files [`MockAdapter`] replays.
pub struct RecordingBackend {
    inner: Arc<dyn ExecutionBackend>,
    dir: PathBuf,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn ExecutionBackend>, dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(RecordingBackend { inner, dir })
    }
}

impl ExecutionBackend for RecordingBackend {
    fn catalog(&self) -> &Catalog {
        self.inner.catalog()
    }

    fn execute(&self, g: &QueryGraph) -> Result<ExecutionProfile> {
        let p = self.inner.execute(g)?;
        let canon = remap_profile(&p, &canonical_ids(g));
        let path = self.dir.join(profile_file_name(graph_hash(g, false)));
        fs::write(&path, profile_to_text(&canon)).map_err(|e| Error::io(&path, e))?;
        Ok(p)
    }

    fn probe_cardinalities(&self, g: &QueryGraph) -> Result<CardinalityEstimate> {
        self.inner.probe_cardinalities(g)
    }

    fn stats(&self) -> BackendStats {
        self.inner.stats()
    }

    fn parallel_tasks(&self) -> u32 {
        self.inner.parallel_tasks()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::demo_dataset;
    use crate::querygraph::{AggFunc, GraphBuilder, Predicate};

    fn demo_backend() -> SimulatedBackend {
        let (c, t) = demo_dataset();
        SimulatedBackend::new(c, &t).unwrap()
    }

    fn scan_orders(filter: Option<Value>) -> QueryGraph {
        let mut b = GraphBuilder::new();
        let s = b.scan("orders", &["o_custkey", "o_date", "o_id"]);
        let root = match filter {
            Some(v) => b.add(
                NodeKind::Filter {
                    predicates: vec![Predicate::new(ColumnRef::new("orders", "o_total"), v)],
                },
                &[s],
            ),
            None => s,
        };
        b.finish(root)
    }

    #[test]
    fn scan_costs_follow_ground_truth() {
        let be = demo_backend();
        let p = be.execute(&scan_orders(None)).unwrap();
        assert_eq!(p.scanned_bytes, 20_000);
        assert!((p.cpu_time_ms - 10.0).abs() < 1e-9);
        assert_eq!(p.per_operator.len(), 1);
    }

    #[test]
    fn empty_filter_zeroes_downstream() {
        let be = demo_backend();
        let min = be.catalog().column(&ColumnRef::new("orders", "o_total")).unwrap().min_value.clone();
        let below = Value::Decimal(min.unwrap().ordinal().unwrap() - 1);
        let mut g = scan_orders(Some(below));
        let f = g.root;
        let a = g.next_id();
        g.nodes.push(crate::querygraph::OperatorNode {
            id: a,
            kind: NodeKind::Aggregate {
                group_by: vec![ColumnRef::new("orders", "o_id")],
                funcs: vec![AggFunc::CountStar],
            },
        });
        g.edges.push((a, f));
        g.root = a;
        let p = be.execute(&g).unwrap();
        assert_eq!(p.per_operator[1].output_rows, 0);
        assert_eq!(p.per_operator[2].cpu_time_ms, 0.0);
        let cards = be.probe_cardinalities(&g).unwrap();
        assert_eq!(cards.get(f), Some(0));
        assert_eq!(cards.get(a), Some(0));
    }

    #[test]
    fn join_builds_on_smaller_side() {
        let be = demo_backend();
        let mut b = GraphBuilder::new();
        let o = b.scan("orders", &["o_custkey"]);
        let c = b.scan("customer", &["c_id"]);
        let j = b.add(
            NodeKind::Join {
                left_key: ColumnRef::new("orders", "o_custkey"),
                right_key: ColumnRef::new("customer", "c_id"),
            },
            &[o, c],
        );
        let p = be.execute(&b.finish(j)).unwrap();
        let join = p.per_operator.iter().find(|s| s.kind == "Join").unwrap();
        assert_eq!(join.input_rows, vec![100, 1000]);
        // every order has a customer
        assert_eq!(join.output_rows, 1000);
    }

    #[test]
    fn probe_matches_execute_and_is_metered_apart() {
        let be = demo_backend();
        let g = scan_orders(Some(Value::Decimal(50_000)));
        let p = be.execute(&g).unwrap();
        let before = be.stats();
        let cards = be.probe_cardinalities(&g).unwrap();
        for s in &p.per_operator {
            assert_eq!(cards.get(s.node), Some(s.output_rows));
        }
        let after = be.stats();
        assert_eq!(after.executions, before.executions);
        assert_eq!(after.probes, before.probes + 1);
        assert!(after.probe_cpu_ms > before.probe_cpu_ms);
        assert_eq!(be.execute(&g).unwrap(), p);
    }

    #[test]
    fn profile_text_round_trips() {
        let be = demo_backend();
        let p = be.execute(&scan_orders(Some(Value::Decimal(12_345)))).unwrap();
        assert_eq!(profile_from_text(&profile_to_text(&p)).unwrap(), p);
        assert!(matches!(profile_from_text("garbage"), Err(AdapterError::Parse(_))));
    }

    #[test]
    fn adapter_error_classes() {
        assert!(AdapterError::Timeout("t".into()).is_retryable());
        assert!(AdapterError::Connection("c".into()).is_retryable());
        assert!(!AdapterError::Auth("a".into()).is_retryable());
        assert!(!AdapterError::Parse("p".into()).is_retryable());
    }

    struct Flaky {
        failures: Mutex<u32>,
        profile: ExecutionProfile,
    }

    impl SqlAdapter for Flaky {
        fn submit_sql(&self, _: &str) -> std::result::Result<ExecutionProfile, AdapterError> {
            let mut f = self.failures.lock().unwrap();
            if *f > 0 {
                *f -= 1;
                return Err(AdapterError::Timeout("slow".into()));
            }
            Ok(self.profile.clone())
        }
    }

    #[test]
    fn timeouts_are_retried() {
        let be: Arc<dyn ExecutionBackend> = Arc::new(demo_backend());
        let g = scan_orders(None);
        let profile = be.execute(&g).unwrap();
        let ok = AdapterBackend::new(
            Flaky { failures: Mutex::new(2), profile: profile.clone() },
            be.clone(),
        );
        assert_eq!(ok.execute(&g).unwrap().cpu_time_ms, profile.cpu_time_ms);
        let give_up = AdapterBackend::new(Flaky { failures: Mutex::new(5), profile }, be).with_retries(1);
        assert!(matches!(
            give_up.execute(&g),
            Err(Error::Adapter(AdapterError::Timeout(_)))
        ));
    }
}
