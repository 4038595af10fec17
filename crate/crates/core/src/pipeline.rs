//! End-to-end synthesis: pool lookup, Phase I bounding, Phase II tuning,
//! translation and reporting.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::hash::Hasher;
use std::time::Instant;

use fnv::FnvHasher;
use rayon::prelude::*;

use crate::backend::{ExecutionBackend, ExecutionProfile};
use crate::bounding::{
    choose_base_graphs, feasibility_and_compensation, inject_structure, BoundingCache, CompensationConfig,
    UNDER_TARGET_SCAN,
};
use crate::error::{Error, Result};
use crate::numeric::percentile;
use crate::pool::{Lookup, PoolEntry, QueryPool};
use crate::predsearch::{select_predicate_columns, tune, PredicateSpace, ScoringMode, SearchConfig, SearchContext};
use crate::querygraph::{
    canonical_form, format_hash, graph_hash, parse_canonical, structural_counts, QueryGraph, StructuralCounts,
};
use crate::trace::{compute_mismatch, qerror, ConstraintMode, OperatorKind, StructuralProfile, TraceRecord};
use crate::translator::to_sql;
use crate::LocalModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackendKind {
    Simulated,
    MockAdapter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub search: SearchConfig,
    pub compensation: CompensationConfig,
    pub tau: f64,
    pub parallelism: usize,
    /// Phase I candidates tried before settling for a best effort.
    pub max_candidates: usize,
    pub tolerances: Option<[f64; 2]>,
    pub weights: Option<[f64; 2]>,
    pub eta: Option<f64>,
    pub backend: BackendKind,
    pub mock_dir: Option<String>,
    /// Wall-clock latency breaks byte-determinism of the report, so it is off
    /// unless asked for.
    pub report_latency: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            search: SearchConfig::default(),
            compensation: CompensationConfig::default(),
            tau: 0.5,
            parallelism: 1,
            max_candidates: 3,
            tolerances: None,
            weights: None,
            eta: None,
            backend: BackendKind::Simulated,
            mock_dir: None,
            report_latency: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Parse(format!("config `{key}`: bad value `{v}`")))
}

fn parse_pair(key: &str, v: &str) -> Result<[f64; 2]> {
    let (a, b) = v
        .split_once(',')
        .ok_or_else(|| Error::Parse(format!("config `{key}` expects `a,b`")))?;
    Ok([parse_num(key, a.trim())?, parse_num(key, b.trim())?])
}

impl PipelineConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let s = &mut self.search;
        match key.trim() {
            "n_rand" => s.n_rand = parse_num(key, v)?,
            "n_calls" => s.n_calls = parse_num(key, v)?,
            "window" => {
                let [a, b] = parse_pair(key, v)?;
                s.window = (a, b);
            }
            "shrink" => s.shrink = parse_num(key, v)?,
            "bucket_cap" => s.bucket_cap = parse_num(key, v)?,
            "max_dims" => s.max_dims = parse_num(key, v)?,
            "max_executions" => s.max_executions = parse_num(key, v)?,
            "stop_tolerance" => s.stop_tolerance = parse_num(key, v)?,
            "jitter" => s.jitter = parse_num(key, v)?,
            "scoring" => {
                s.mode = match v {
                    "hybrid" => ScoringMode::Hybrid,
                    "always" => ScoringMode::AlwaysExecute,
                    _ => return Err(Error::Parse(format!("scoring must be hybrid|always, got `{v}`"))),
                }
            }
            "seed" => s.seed = parse_num(key, v)?,
            "max_repeat" => self.compensation.max_repeat = parse_num(key, v)?,
            "compensation_margin" => self.compensation.margin = parse_num(key, v)?,
            "tau" => self.tau = parse_num(key, v)?,
            "parallelism" => self.parallelism = parse_num::<usize>(key, v)?.max(1),
            "max_candidates" => self.max_candidates = parse_num::<usize>(key, v)?.max(1),
            "tolerances" => self.tolerances = Some(parse_pair(key, v)?),
            "weights" => self.weights = Some(parse_pair(key, v)?),
            "eta" => self.eta = Some(parse_num(key, v)?),
            "backend" => {
                self.backend = match v {
                    "simulated" => BackendKind::Simulated,
                    "mock-adapter" => BackendKind::MockAdapter,
                    _ => return Err(Error::Parse(format!("backend must be simulated|mock-adapter, got `{v}`"))),
                }
            }
            "mock_dir" => self.mock_dir = Some(v.to_string()),
            "report_latency" => self.report_latency = parse_num(key, v)?,
            other => return Err(Error::Parse(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("config line `{line}` is not key=value")))?;
            cfg.set(k, v)?;
        }
        cfg.search.validate()?;
        Ok(cfg)
    }

    /// Every key with its current value, in the format [`PipelineConfig::parse`] reads.
    pub fn to_text(&self) -> String {
        let s = &self.search;
        let mut out = String::new();
        let mode = match s.mode {
            ScoringMode::Hybrid => "hybrid",
            ScoringMode::AlwaysExecute => "always",
        };
        let backend = match self.backend {
            BackendKind::Simulated => "simulated",
            BackendKind::MockAdapter => "mock-adapter",
        };
        let _ = writeln!(out, "n_rand={}", s.n_rand);
        let _ = writeln!(out, "n_calls={}", s.n_calls);
        let _ = writeln!(out, "window={},{}", s.window.0, s.window.1);
        let _ = writeln!(out, "shrink={}", s.shrink);
        let _ = writeln!(out, "bucket_cap={}", s.bucket_cap);
        let _ = writeln!(out, "max_dims={}", s.max_dims);
        let _ = writeln!(out, "max_executions={}", s.max_executions);
        let _ = writeln!(out, "stop_tolerance={}", s.stop_tolerance);
        let _ = writeln!(out, "jitter={}", s.jitter);
        let _ = writeln!(out, "scoring={mode}");
        let _ = writeln!(out, "seed={}", s.seed);
        let _ = writeln!(out, "max_repeat={}", self.compensation.max_repeat);
        let _ = writeln!(out, "compensation_margin={}", self.compensation.margin);
        let _ = writeln!(out, "tau={}", self.tau);
        let _ = writeln!(out, "parallelism={}", self.parallelism);
        let _ = writeln!(out, "max_candidates={}", self.max_candidates);
        if let Some([a, b]) = self.tolerances {
            let _ = writeln!(out, "tolerances={a},{b}");
        }
        if let Some([a, b]) = self.weights {
            let _ = writeln!(out, "weights={a},{b}");
        }
        if let Some(e) = self.eta {
            let _ = writeln!(out, "eta={e}");
        }
        let _ = writeln!(out, "backend={backend}");
        if let Some(d) = &self.mock_dir {
            let _ = writeln!(out, "mock_dir={d}");
        }
        let _ = writeln!(out, "report_latency={}", self.report_latency);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reuse {
    Miss,
    Exact,
    Template,
    Proxy,
}

impl Reuse {
    pub fn as_str(self) -> &'static str {
        match self {
            Reuse::Miss => "miss",
            Reuse::Exact => "exact",
            Reuse::Template => "template",
            Reuse::Proxy => "proxy",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Reuse::Miss, Reuse::Exact, Reuse::Template, Reuse::Proxy]
            .into_iter()
            .find(|r| r.as_str() == s)
    }
}

/// One report row. Achieved fields are absent when the record failed.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub record_id: String,
    pub timestamp_ms: i64,
    pub target_cpu_ms: f64,
    pub target_bytes: f64,
    pub achieved_cpu_ms: Option<f64>,
    pub achieved_bytes: Option<u64>,
    pub cpu_qerror: Option<f64>,
    pub bytes_qerror: Option<f64>,
    /// Target counts (or presence bits) for join, aggregate, sort.
    pub target_ops: [Option<u32>; 3],
    pub achieved_ops: Option<[u32; 3]>,
    /// Per-kind absolute structural error, presence-collapsed where needed.
    pub op_error: Option<[u32; 3]>,
    pub within_tolerance: bool,
    pub reuse: Reuse,
    pub executions: u32,
    pub evaluations: usize,
    pub phase1_calls: u32,
    pub flag: String,
    pub exact_hash: Option<u64>,
    pub latency_ms: Option<f64>,
}

struct Outcome {
    graph: QueryGraph,
    profile: ExecutionProfile,
    executions: u32,
    evaluations: usize,
    phase1_calls: u32,
    flag: String,
}

pub struct SynthesisOutput {
    pub workload: String,
    pub report: String,
    pub rows: Vec<ReportRow>,
    pub sql: Vec<Option<String>>,
    /// Greedy column selections run over the whole trace, counted inside the
    /// bounding cache; equals the sum of the rows' `phase1_calls`.
    pub greedy_selections: u64,
}

fn record_seed(base: u64, record_id: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(record_id.as_bytes());
    base ^ h.finish()
}

struct Synth<'a> {
    backend: &'a dyn ExecutionBackend,
    model: &'a LocalModel,
    config: &'a PipelineConfig,
    cache: BoundingCache,
}

impl Synth<'_> {
    fn search_config(&self, record: &TraceRecord) -> SearchConfig {
        SearchConfig {
            seed: record_seed(self.config.search.seed, &record.record_id),
            ..self.config.search.clone()
        }
    }

    fn space(&self, g: &QueryGraph) -> Result<PredicateSpace> {
        match select_predicate_columns(g, self.backend.catalog(), self.config.search.max_dims) {
            Err(Error::NoTunablePredicates) => Ok(PredicateSpace {
                dims: Vec::new(),
                allocation: Vec::new(),
            }),
            other => other,
        }
    }

    fn tune(&self, record: &TraceRecord, template: &QueryGraph, phase1_calls: u32, flag: String) -> Result<Outcome> {
        let space = self.space(template)?;
        let cfg = self.search_config(record);
        let mut ctx = SearchContext::new(template, &space, record.targets.cpu_time_ms, self.model, self.backend, &cfg);
        ctx.eta = record.targets.eta;
        let out = tune(&ctx)?;
        Ok(Outcome {
            graph: out.graph,
            profile: out.profile,
            executions: out.executions,
            evaluations: out.evaluations,
            phase1_calls,
            flag,
        })
    }

    /// Phase I with fallbacks: when no table set of the required size
    /// exists, fewer joins are used and the record is flagged.
    fn bound(&self, record: &TraceRecord) -> Result<(QueryGraph, u32, String)> {
        let catalog = self.backend.catalog();
        let y_bytes = record.targets.scanned_bytes;
        let y_cpu = record.targets.cpu_time_ms;
        let mut structure = record.structure.clone();
        let mut flag = String::new();
        let mut calls = 0;
        let bases = loop {
            match choose_base_graphs(catalog, &structure, y_bytes, &self.cache) {
                Ok(b) => break b,
                Err(Error::Infeasible { code, .. }) if structure.required(OperatorKind::Join) > 0 => {
                    if flag.is_empty() {
                        flag = code.to_string();
                    }
                    structure = reduce_joins(&structure);
                }
                Err(e) => return Err(e),
            }
        };
        calls += bases.greedy_calls;
        let mut fallback: Option<QueryGraph> = None;
        for cand in bases.candidates.iter().take(self.config.max_candidates) {
            let g = inject_structure(&cand.graph, &structure, catalog)?;
            match feasibility_and_compensation(&g, y_cpu, self.model, self.backend, self.config.compensation) {
                Ok(c) => {
                    if !cand.feasible && flag.is_empty() {
                        flag = UNDER_TARGET_SCAN.to_string();
                    }
                    return Ok((c.graph, calls, flag));
                }
                Err(Error::Infeasible { code, .. }) => {
                    if fallback.is_none() {
                        fallback = Some(g);
                        if flag.is_empty() {
                            flag = code.to_string();
                        }
                    }
                }
                Err(e) => return Err(e),
            }
        }
        let g = fallback.ok_or_else(|| Error::infeasible(crate::bounding::NO_CONNECTED_SET, "no candidates"))?;
        Ok((g, calls, flag))
    }

    fn fresh(&self, record: &TraceRecord) -> Result<Outcome> {
        let (template, calls, flag) = self.bound(record)?;
        self.tune(record, &template, calls, flag)
    }
}

fn reduce_joins(s: &StructuralProfile) -> StructuralProfile {
    let mut s = s.clone();
    for c in s.constraints.iter_mut() {
        if c.kind == OperatorKind::Join {
            c.mode = match c.mode {
                ConstraintMode::ExactCount(v) => ConstraintMode::ExactCount(v.saturating_sub(1)),
                ConstraintMode::Presence(_) => ConstraintMode::Presence(false),
            };
        }
    }
    s
}

fn op_error(structure: &StructuralProfile, counts: &StructuralCounts) -> [u32; 3] {
    OperatorKind::ALL.map(|k| {
        let got = k.count_in(counts);
        match structure.get(k).map(|c| c.mode) {
            Some(ConstraintMode::ExactCount(v)) => got.abs_diff(v),
            Some(ConstraintMode::Presence(p)) => (got > 0) as u32 ^ p as u32,
            None => 0,
        }
    })
}

/// Applies config-level tolerance/weight/eta overrides to every record.
pub fn apply_overrides(records: &mut [TraceRecord], config: &PipelineConfig) {
    for r in records {
        if let Some(t) = config.tolerances {
            r.targets.tolerances = t;
        }
        if let Some(w) = config.weights {
            r.targets.weights = w;
        }
        if let Some(e) = config.eta {
            r.targets.eta = e;
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Fresh,
    Template,
    Exact,
    HashFree,
}

fn classify(records: &[TraceRecord]) -> Vec<Class> {
    let mut seen_q = HashSet::new();
    let mut seen_p = HashSet::new();
    records
        .iter()
        .map(|r| {
            let class = match (&r.query_hash, &r.param_hash) {
                (None, None) => Class::HashFree,
                (Some(q), _) if seen_q.contains(q) => Class::Exact,
                (_, Some(p)) if seen_p.contains(p) => Class::Template,
                _ => Class::Fresh,
            };
            if let Some(q) = &r.query_hash {
                seen_q.insert(q.clone());
            }
            if let Some(p) = &r.param_hash {
                seen_p.insert(p.clone());
            }
            class
        })
        .collect()
}

/// Runs the whole trace. Records are classified up front so that the
/// parallel phases cannot change which pool entry a record sees.
pub fn synthesize_workload(
    trace: &[TraceRecord],
    backend: &dyn ExecutionBackend,
    model: &LocalModel,
    config: &PipelineConfig,
    pool: &QueryPool,
) -> Result<SynthesisOutput> {
    config.search.validate()?;
    let synth = Synth {
        backend,
        model,
        config,
        cache: BoundingCache::new(),
    };
    let classes = classify(trace);
    let n = trace.len();
    let mut results: Vec<Option<(Result<Outcome>, Reuse, Option<f64>)>> = (0..n).map(|_| None).collect();

    let workers = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism.max(1))
        .build()
        .map_err(|e| Error::Backend(e.to_string()))?;
    let timed = |f: &dyn Fn() -> Result<Outcome>| -> (Result<Outcome>, Option<f64>) {
        let t = Instant::now();
        let r = f();
        (r, config.report_latency.then(|| t.elapsed().as_secs_f64() * 1000.0))
    };

    let commit = |i: usize, out: &Result<Outcome>| {
        if let Ok(o) = out {
            let r = &trace[i];
            let mismatch = compute_mismatch(&o.profile, &r.targets);
            if let Ok(entry) = PoolEntry::new(&o.graph, &o.profile, &r.record_id, mismatch) {
                let (e, p) = (entry.exact_hash, entry.param_hash);
                let _ = pool.insert(entry);
                pool.bind(r, e, p);
            }
        }
    };

    // Misses and template hits run in parallel, each phase committed in
    // record order.
    let parallel_phase = |class: Class, results: &mut Vec<Option<(Result<Outcome>, Reuse, Option<f64>)>>| {
        let idx: Vec<usize> = (0..n).filter(|&i| classes[i] == class).collect();
        let done: Vec<(usize, Result<Outcome>, Reuse, Option<f64>)> = workers.install(|| {
            idx.par_iter()
                .map(|&i| {
                    let r = &trace[i];
                    let (reuse, (out, lat)) = match (class, pool.lookup(r)) {
                        (Class::Template, Lookup::Template(e)) => (
                            Reuse::Template,
                            timed(&|| synth.tune(r, &e.graph.with_predicates(&[]), 0, String::new())),
                        ),
                        _ => (Reuse::Miss, timed(&|| synth.fresh(r))),
                    };
                    (i, out, reuse, lat)
                })
                .collect()
        });
        for (i, out, reuse, lat) in done {
            commit(i, &out);
            results[i] = Some((out, reuse, lat));
        }
    };
    parallel_phase(Class::Fresh, &mut results);
    parallel_phase(Class::Template, &mut results);

    for i in 0..n {
        let r = &trace[i];
        match classes[i] {
            Class::Exact => {
                let (out, reuse, lat) = match pool.lookup(r) {
                    Lookup::Exact(e) => {
                        let t = Instant::now();
                        let o = Outcome {
                            graph: e.graph,
                            profile: e.profile,
                            executions: 0,
                            evaluations: 0,
                            phase1_calls: 0,
                            flag: String::new(),
                        };
                        (Ok(o), Reuse::Exact, config.report_latency.then(|| t.elapsed().as_secs_f64() * 1000.0))
                    }
                    // first occurrence failed; synthesize now
                    _ => {
                        let (o, l) = timed(&|| synth.fresh(r));
                        (o, Reuse::Miss, l)
                    }
                };
                commit(i, &out);
                results[i] = Some((out, reuse, lat));
            }
            Class::HashFree => {
                let (out, reuse, lat) = match pool.lookup(r) {
                    Lookup::Proxy(e, _) => {
                        let (o, l) = timed(&|| synth.tune(r, &e.graph.with_predicates(&[]), 0, String::new()));
                        (o, Reuse::Proxy, l)
                    }
                    _ => {
                        let (o, l) = timed(&|| synth.fresh(r));
                        (o, Reuse::Miss, l)
                    }
                };
                commit(i, &out);
                results[i] = Some((out, reuse, lat));
            }
            _ => {}
        }
    }

    let mut rows = Vec::with_capacity(n);
    let mut sql = Vec::with_capacity(n);
    let mut workload = String::new();
    for (r, res) in trace.iter().zip(results) {
        let (out, reuse, latency_ms) = res.expect("every record processed");
        let target_ops = OperatorKind::ALL.map(|k| r.structure.value(k));
        let eta = r.targets.eta;
        let row = match &out {
            Ok(o) => {
                // Canonical form so replays of a pooled graph print the same text.
                let text = to_sql(&parse_canonical(&canonical_form(&o.graph, false))?)?;
                let h = graph_hash(&o.graph, false);
                let _ = writeln!(workload, "-- record_id={} hash={}", r.record_id, format_hash(h));
                let _ = writeln!(workload, "{text};");
                sql.push(Some(text));
                let counts = structural_counts(&o.graph);
                ReportRow {
                    record_id: r.record_id.clone(),
                    timestamp_ms: r.timestamp_ms,
                    target_cpu_ms: r.targets.cpu_time_ms,
                    target_bytes: r.targets.scanned_bytes,
                    achieved_cpu_ms: Some(o.profile.cpu_time_ms),
                    achieved_bytes: Some(o.profile.scanned_bytes),
                    cpu_qerror: Some(qerror(o.profile.cpu_time_ms, r.targets.cpu_time_ms, eta)),
                    bytes_qerror: Some(qerror(o.profile.scanned_bytes as f64, r.targets.scanned_bytes, eta)),
                    target_ops,
                    achieved_ops: Some(OperatorKind::ALL.map(|k| k.count_in(&counts))),
                    op_error: Some(op_error(&r.structure, &counts)),
                    within_tolerance: r.targets.within_tolerance(&o.profile),
                    reuse,
                    executions: o.executions,
                    evaluations: o.evaluations,
                    phase1_calls: o.phase1_calls,
                    flag: o.flag.clone(),
                    exact_hash: Some(h),
                    latency_ms,
                }
            }
            Err(e) => {
                let _ = writeln!(workload, "-- record_id={} error={}", r.record_id, e.to_string().replace('\n', " "));
                sql.push(None);
                ReportRow {
                    record_id: r.record_id.clone(),
                    timestamp_ms: r.timestamp_ms,
                    target_cpu_ms: r.targets.cpu_time_ms,
                    target_bytes: r.targets.scanned_bytes,
                    achieved_cpu_ms: None,
                    achieved_bytes: None,
                    cpu_qerror: None,
                    bytes_qerror: None,
                    target_ops,
                    achieved_ops: None,
                    op_error: None,
                    within_tolerance: false,
                    reuse,
                    executions: 0,
                    evaluations: 0,
                    phase1_calls: 0,
                    flag: match e {
                        Error::Infeasible { code, .. } => code.to_string(),
                        _ => "error".to_string(),
                    },
                    exact_hash: None,
                    latency_ms,
                }
            }
        };
        rows.push(row);
    }
    let report = report_to_string(&rows, config.report_latency);
    Ok(SynthesisOutput {
        workload,
        report,
        rows,
        sql,
        greedy_selections: synth.cache.selections.load(std::sync::atomic::Ordering::Relaxed),
    })
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

const REPORT_HEADER: [&str; 24] = [
    "record_id",
    "timestamp_ms",
    "cpu_time_ms",
    "scanned_bytes",
    "num_joins",
    "num_aggs",
    "num_sorts",
    "achieved_cpu_time_ms",
    "achieved_scanned_bytes",
    "achieved_joins",
    "achieved_aggs",
    "achieved_sorts",
    "cpu_qerror",
    "bytes_qerror",
    "join_error",
    "agg_error",
    "sort_error",
    "within_tolerance",
    "reuse",
    "executions",
    "evaluations",
    "phase1_calls",
    "flag",
    "hash",
];

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub records: usize,
    pub failed: usize,
    pub cpu_qerror: [f64; 3],
    pub bytes_qerror: [f64; 3],
    pub op_mae: [f64; 3],
    pub reuse: [usize; 4],
    pub executions: u64,
    pub flagged: usize,
    pub within_tolerance: usize,
}

/// Percentiles (p50, p90, p99) and MAEs over the rows that produced a query.
pub fn summarize(rows: &[ReportRow]) -> Summary {
    let ok: Vec<&ReportRow> = rows.iter().filter(|r| r.cpu_qerror.is_some()).collect();
    let pcts = |vals: Vec<f64>| -> [f64; 3] {
        [0.5, 0.9, 0.99].map(|q| percentile(&vals, q).unwrap_or(f64::NAN))
    };
    let cpu = pcts(ok.iter().filter_map(|r| r.cpu_qerror).collect());
    let bytes = pcts(ok.iter().filter_map(|r| r.bytes_qerror).collect());
    let mut op_mae = [0.0; 3];
    for k in 0..3 {
        let errs: Vec<f64> = ok.iter().filter_map(|r| r.op_error.map(|e| e[k] as f64)).collect();
        op_mae[k] = if errs.is_empty() {
            0.0
        } else {
            errs.iter().sum::<f64>() / errs.len() as f64
        };
    }
    let mut reuse = [0; 4];
    for r in rows {
        reuse[r.reuse as usize] += 1;
    }
    Summary {
        records: rows.len(),
        failed: rows.len() - ok.len(),
        cpu_qerror: cpu,
        bytes_qerror: bytes,
        op_mae,
        reuse,
        executions: rows.iter().map(|r| r.executions as u64).sum(),
        flagged: rows.iter().filter(|r| !r.flag.is_empty()).count(),
        within_tolerance: rows.iter().filter(|r| r.within_tolerance).count(),
    }
}

pub fn summary_to_string(s: &Summary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# records={} failed={} flagged={} within_tolerance={}", s.records, s.failed, s.flagged, s.within_tolerance);
    let _ = writeln!(
        out,
        "# cpu_qerror p50={} p90={} p99={}",
        s.cpu_qerror[0], s.cpu_qerror[1], s.cpu_qerror[2]
    );
    let _ = writeln!(
        out,
        "# bytes_qerror p50={} p90={} p99={}",
        s.bytes_qerror[0], s.bytes_qerror[1], s.bytes_qerror[2]
    );
    let _ = writeln!(out, "# op_mae join={} aggregate={} sort={}", s.op_mae[0], s.op_mae[1], s.op_mae[2]);
    let _ = writeln!(
        out,
        "# reuse miss={} exact={} template={} proxy={}",
        s.reuse[0], s.reuse[1], s.reuse[2], s.reuse[3]
    );
    let _ = writeln!(out, "# executions={}", s.executions);
    out
}

/// Empty for an empty trace; otherwise CSV rows followed by `#` summary lines.
pub fn report_to_string(rows: &[ReportRow], latency: bool) -> String {
    if rows.is_empty() {
        return String::new();
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = REPORT_HEADER.to_vec();
    if latency {
        header.push("latency_ms");
    }
    w.write_record(&header).expect("in-memory write");
    for r in rows {
        let ops = |k: usize| opt(&r.target_ops[k]);
        let ach = |k: usize| opt(&r.achieved_ops.map(|a| a[k]));
        let err = |k: usize| opt(&r.op_error.map(|a| a[k]));
        let mut rec = vec![
            r.record_id.clone(),
            r.timestamp_ms.to_string(),
            r.target_cpu_ms.to_string(),
            r.target_bytes.to_string(),
            ops(0),
            ops(1),
            ops(2),
            opt(&r.achieved_cpu_ms),
            opt(&r.achieved_bytes),
            ach(0),
            ach(1),
            ach(2),
            opt(&r.cpu_qerror),
            opt(&r.bytes_qerror),
            err(0),
            err(1),
            err(2),
            r.within_tolerance.to_string(),
            r.reuse.as_str().to_string(),
            r.executions.to_string(),
            r.evaluations.to_string(),
            r.phase1_calls.to_string(),
            r.flag.clone(),
            opt(&r.exact_hash.map(format_hash)),
        ];
        if latency {
            rec.push(opt(&r.latency_ms));
        }
        w.write_record(&rec).expect("in-memory write");
    }
    let mut text = String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8 csv");
    text.push_str(&summary_to_string(&summarize(rows)));
    text
}

/// Reads the per-record rows back; the trailing `#` summary is ignored so
/// callers can recompute it.
pub fn parse_report(text: &str) -> Result<Vec<ReportRow>> {
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    if body.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| Error::Parse(format!("report lacks `{name}`")));
    let idx: Vec<usize> = REPORT_HEADER.iter().map(|h| need(h)).collect::<Result<_>>()?;
    let lat = col("latency_ms");
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let f = |k: usize| rec.get(idx[k]).unwrap_or("");
        fn o<T: std::str::FromStr>(s: &str) -> Result<Option<T>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| Error::Parse(format!("bad report value `{s}`")))
            }
        }
        let req = |k: usize| -> Result<f64> { o(f(k))?.ok_or_else(|| Error::Parse("missing report value".into())) };
        let achieved_ops = match (o(f(9))?, o(f(10))?, o(f(11))?) {
            (Some(a), Some(b), Some(c)) => Some([a, b, c]),
            _ => None,
        };
        let op_error = match (o(f(14))?, o(f(15))?, o(f(16))?) {
            (Some(a), Some(b), Some(c)) => Some([a, b, c]),
            _ => None,
        };
        rows.push(ReportRow {
            record_id: f(0).to_string(),
            timestamp_ms: o(f(1))?.unwrap_or(0),
            target_cpu_ms: req(2)?,
            target_bytes: req(3)?,
            target_ops: [o(f(4))?, o(f(5))?, o(f(6))?],
            achieved_cpu_ms: o(f(7))?,
            achieved_bytes: o(f(8))?,
            achieved_ops,
            cpu_qerror: o(f(12))?,
            bytes_qerror: o(f(13))?,
            op_error,
            within_tolerance: f(17) == "true",
            reuse: Reuse::parse(f(18)).ok_or_else(|| Error::Parse(format!("bad reuse kind `{}`", f(18))))?,
            executions: o(f(19))?.unwrap_or(0),
            evaluations: o(f(20))?.unwrap_or(0),
            phase1_calls: o(f(21))?.unwrap_or(0),
            flag: f(22).to_string(),
            exact_hash: o::<String>(f(23))?.and_then(|h| u64::from_str_radix(&h, 16).ok()),
            latency_ms: match lat {
                Some(i) => o(rec.get(i).unwrap_or(""))?,
                None => None,
            },
        });
    }
    Ok(rows)
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::backend::SimulatedBackend;
    use crate::catalog::demo_dataset;
    use crate::costmodel::{collect_profiles, fit, JoinRegressorKind};
    use crate::trace::{gen_synthetic_trace, TraceGenOptions};
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn fixture() -> &'static (SimulatedBackend, LocalModel) {
        static F: OnceLock<(SimulatedBackend, LocalModel)> = OnceLock::new();
        F.get_or_init(|| {
            let (c, t) = demo_dataset();
            let be = SimulatedBackend::new(c, &t).unwrap();
            let model = fit(&collect_profiles(&be, 150, 3).unwrap(), JoinRegressorKind::Parametric, 4).unwrap();
            (be, model)
        })
    }

    fn interp(mut v: Vec<f64>, q: f64) -> f64 {
        v.sort_by(f64::total_cmp);
        let pos = q * (v.len() - 1) as f64;
        let i = pos as usize;
        let j = (i + 1).min(v.len() - 1);
        v[i] + (v[j] - v[i]) * (pos - i as f64)
    }

    fn summary_line(report: &str, key: &str) -> [f64; 3] {
        let line = report.lines().find(|l| l.starts_with(&format!("# {key} "))).unwrap();
        let vals: Vec<f64> = line.split_whitespace().skip(2).map(|kv| kv.split_once('=').unwrap().1.parse().unwrap()).collect();
        [vals[0], vals[1], vals[2]]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(4))]

        #[test]
        fn report_and_workload_invariants(seed in 0u64..1000, n in 3usize..7, max_exec in 5u32..30) {
            let (be, model) = fixture();
            let opts = TraceGenOptions { dup: 0.3, ..TraceGenOptions::default() };
            let trace = gen_synthetic_trace(be, n, seed, opts).unwrap();
            let mut cfg = PipelineConfig::default();
            cfg.search.max_executions = max_exec;
            cfg.search.seed = seed;
            let out = synthesize_workload(&trace.records, be, model, &cfg, &QueryPool::default()).unwrap();
            let rows = parse_report(&out.report).unwrap();
            prop_assert_eq!(&rows, &out.rows);

            let cpu: Vec<f64> = rows.iter().filter_map(|r| r.cpu_qerror).collect();
            if !cpu.is_empty() {
                let got = summary_line(&out.report, "cpu_qerror");
                for (k, q) in [0.5, 0.9, 0.99].into_iter().enumerate() {
                    prop_assert!((got[k] - interp(cpu.clone(), q)).abs() <= 1e-9 * got[k].abs().max(1.0));
                }
            }
            for r in &rows {
                prop_assert!(r.executions <= max_exec);
            }
            for (i, r) in rows.iter().enumerate().filter(|(_, r)| r.reuse == Reuse::Exact) {
                let src = rows.iter().position(|s| s.exact_hash == r.exact_hash).unwrap();
                prop_assert!(src < i);
                prop_assert_eq!(&out.sql[i], &out.sql[src]);
            }

            let again = synthesize_workload(&trace.records, be, model, &cfg, &QueryPool::default()).unwrap();
            prop_assert_eq!(again.workload, out.workload);
            prop_assert_eq!(again.report, out.report);
        }
    }
}
