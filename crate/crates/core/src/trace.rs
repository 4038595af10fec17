//! Anonymized workload traces: targets, structural constraints, the CSV
//! format, the mismatch objective and a synthetic trace generator with a
//! hidden answer key.

use std::collections::HashSet;
use std::fs;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::{ExecutionBackend, ExecutionProfile};
use crate::catalog::{Catalog, Value};
use crate::error::{Error, Result};
use crate::numeric::qerror_floored;
use crate::querygraph::{
    canonical_form, format_hash, graph_hash, parse_canonical, sample_with_rng, NodeKind, Predicate,
    QueryGraph, SampleBounds, StructuralCounts,
};

/// Per-metric targets with tolerances, weights and the floor `eta`.
/// Metric order everywhere is `[cpu_time_ms, scanned_bytes]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetProfile {
    pub cpu_time_ms: f64,
    pub scanned_bytes: f64,
    pub tolerances: [f64; 2],
    pub weights: [f64; 2],
    pub eta: f64,
}

impl TargetProfile {
    pub fn new(cpu_time_ms: f64, scanned_bytes: f64) -> Self {
        TargetProfile {
            cpu_time_ms,
            scanned_bytes,
            tolerances: [0.2, 0.2],
            weights: [1.0, 1.0],
            eta: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cpu_time_ms >= 0.0 && self.scanned_bytes >= 0.0) {
            return Err(Error::Validation("targets must be ≥ 0".into()));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) || self.weights.iter().all(|w| *w == 0.0) {
            return Err(Error::Validation("weights must be ≥ 0 and not all zero".into()));
        }
        if !(self.eta > 0.0) {
            return Err(Error::Validation("eta must be > 0".into()));
        }
        if self.tolerances.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::Validation("tolerances must be ≥ 0".into()));
        }
        Ok(())
    }

    /// Whether both metrics are within their relative tolerance.
    pub fn within_tolerance(&self, p: &ExecutionProfile) -> bool {
        let rel = |g: f64, y: f64| (g - y).abs() / y.max(self.eta);
        rel(p.cpu_time_ms, self.cpu_time_ms) <= self.tolerances[0]
            && rel(p.scanned_bytes as f64, self.scanned_bytes) <= self.tolerances[1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OperatorKind {
    Join,
    Aggregate,
    Sort,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 3] = [OperatorKind::Join, OperatorKind::Aggregate, OperatorKind::Sort];

    pub fn count_in(self, c: &StructuralCounts) -> u32 {
        match self {
            OperatorKind::Join => c.joins,
            OperatorKind::Aggregate => c.aggregates,
            OperatorKind::Sort => c.sorts,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintMode {
    ExactCount(u32),
    Presence(bool),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StructuralConstraint {
    pub kind: OperatorKind,
    pub mode: ConstraintMode,
    /// ε_H, in operator counts.
    pub tolerance: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StructuralProfile {
    pub constraints: Vec<StructuralConstraint>,
}

impl StructuralProfile {
    pub fn exact(joins: u32, aggregates: u32, sorts: u32) -> Self {
        let c = |kind, v| StructuralConstraint {
            kind,
            mode: ConstraintMode::ExactCount(v),
            tolerance: 0,
        };
        StructuralProfile {
            constraints: vec![
                c(OperatorKind::Join, joins),
                c(OperatorKind::Aggregate, aggregates),
                c(OperatorKind::Sort, sorts),
            ],
        }
    }

    pub fn get(&self, kind: OperatorKind) -> Option<&StructuralConstraint> {
        self.constraints.iter().find(|c| c.kind == kind)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.constraints {
            if !seen.insert(c.kind) {
                return Err(Error::Validation(format!("two constraints on {:?}", c.kind)));
            }
        }
        Ok(())
    }

    pub fn is_satisfied_by(&self, counts: &StructuralCounts) -> bool {
        self.constraints.iter().all(|c| {
            let got = c.kind.count_in(counts);
            match c.mode {
                ConstraintMode::ExactCount(v) => got.abs_diff(v) <= c.tolerance,
                ConstraintMode::Presence(p) => (got > 0) == p,
            }
        })
    }

    /// Operator count to build for `kind`: the exact count, 1 for presence,
    /// 0 when unconstrained or absent.
    pub fn required(&self, kind: OperatorKind) -> u32 {
        match self.get(kind).map(|c| c.mode) {
            Some(ConstraintMode::ExactCount(v)) => v,
            Some(ConstraintMode::Presence(true)) => 1,
            _ => 0,
        }
    }

    /// Value used for proxy signatures and error metrics.
    pub fn value(&self, kind: OperatorKind) -> Option<u32> {
        self.get(kind).map(|c| match c.mode {
            ConstraintMode::ExactCount(v) => v,
            ConstraintMode::Presence(p) => p as u32,
        })
    }

    pub fn is_presence(&self) -> bool {
        self.constraints
            .iter()
            .any(|c| matches!(c.mode, ConstraintMode::Presence(_)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub record_id: String,
    pub timestamp_ms: i64,
    pub targets: TargetProfile,
    pub structure: StructuralProfile,
    pub query_hash: Option<String>,
    pub param_hash: Option<String>,
}

/// Σ w·|g − y| / max(y, η) over cpu time and scanned bytes.
pub fn compute_mismatch(profile: &ExecutionProfile, targets: &TargetProfile) -> f64 {
    let g = [profile.cpu_time_ms, profile.scanned_bytes as f64];
    let y = [targets.cpu_time_ms, targets.scanned_bytes];
    (0..2)
        .filter(|&m| targets.weights[m] != 0.0)
        .map(|m| targets.weights[m] * (g[m] - y[m]).abs() / y[m].max(targets.eta))
        .sum()
}

/// Q-error with both sides floored at `eta`.
pub fn qerror(measured: f64, target: f64, eta: f64) -> f64 {
    qerror_floored(measured, target, eta)
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

pub const TRACE_HEADER: [&str; 9] = [
    "record_id",
    "timestamp_ms",
    "cpu_time_ms",
    "scanned_bytes",
    "num_joins",
    "num_aggs",
    "num_sorts",
    "query_hash",
    "param_hash",
];

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>> {
    let presence = text
        .lines()
        .next()
        .is_some_and(|l| l.starts_with('#') && l.contains("mode=presence"));
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse(format!("trace header: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let required = |name: &str| col(name).ok_or_else(|| Error::Parse(format!("trace lacks column `{name}`")));
    let (i_id, i_ts, i_cpu, i_bytes) = (
        required("record_id")?,
        required("timestamp_ms")?,
        required("cpu_time_ms")?,
        required("scanned_bytes")?,
    );
    let count_cols = [
        (OperatorKind::Join, col("num_joins")),
        (OperatorKind::Aggregate, col("num_aggs")),
        (OperatorKind::Sort, col("num_sorts")),
    ];
    let (i_qh, i_ph) = (col("query_hash"), col("param_hash"));

    let mut out: Vec<TraceRecord> = Vec::new();
    let mut ids = HashSet::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::Parse(format!("trace row {}: {e}", line + 1)))?;
        let cell = |i: Option<usize>| i.and_then(|i| row.get(i)).filter(|s| !s.is_empty());
        let record_id = cell(Some(i_id))
            .ok_or_else(|| Error::Parse(format!("trace row {}: empty record_id", line + 1)))?
            .to_string();
        let num = |i: usize, what: &str| -> Result<f64> {
            let s = cell(Some(i))
                .ok_or_else(|| Error::Parse(format!("record {record_id}: missing {what}")))?;
            let v: f64 = s
                .parse()
                .map_err(|_| Error::Parse(format!("record {record_id}: bad {what} `{s}`")))?;
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Parse(format!("record {record_id}: {what} must be ≥ 0")));
            }
            Ok(v)
        };
        let timestamp_ms: i64 = cell(Some(i_ts))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse(format!("record {record_id}: bad timestamp_ms")))?;
        let targets = TargetProfile::new(num(i_cpu, "cpu_time_ms")?, num(i_bytes, "scanned_bytes")?);
        let mut constraints = Vec::new();
        for (kind, idx) in count_cols {
            let Some(s) = cell(idx) else { continue };
            let v: u32 = s
                .parse()
                .map_err(|_| Error::Parse(format!("record {record_id}: bad count `{s}`")))?;
            let mode = if presence {
                if v > 1 {
                    return Err(Error::Parse(format!(
                        "record {record_id}: presence value must be 0 or 1"
                    )));
                }
                ConstraintMode::Presence(v == 1)
            } else {
                ConstraintMode::ExactCount(v)
            };
            constraints.push(StructuralConstraint {
                kind,
                mode,
                tolerance: 0,
            });
        }
        if !ids.insert(record_id.clone()) {
            return Err(Error::Parse(format!("duplicate record_id `{record_id}`")));
        }
        if let Some(prev) = out.last() {
            if timestamp_ms < prev.timestamp_ms {
                return Err(Error::Ordering {
                    record_id,
                    timestamp: timestamp_ms,
                    previous: prev.timestamp_ms,
                });
            }
        }
        out.push(TraceRecord {
            record_id,
            timestamp_ms,
            targets,
            structure: StructuralProfile { constraints },
            query_hash: cell(i_qh).map(str::to_string),
            param_hash: cell(i_ph).map(str::to_string),
        });
    }
    Ok(out)
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace(&text)
}

pub fn trace_to_string(records: &[TraceRecord]) -> String {
    let presence = records.iter().any(|r| r.structure.is_presence());
    let mut out = String::new();
    if presence {
        out.push_str("# mode=presence\n");
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACE_HEADER).expect("in-memory write");
    for r in records {
        let count = |k| r.structure.value(k).map(|v| v.to_string()).unwrap_or_default();
        w.write_record([
            r.record_id.clone(),
            r.timestamp_ms.to_string(),
            r.targets.cpu_time_ms.to_string(),
            r.targets.scanned_bytes.to_string(),
            count(OperatorKind::Join),
            count(OperatorKind::Aggregate),
            count(OperatorKind::Sort),
            r.query_hash.clone().unwrap_or_default(),
            r.param_hash.clone().unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf8"));
    out
}

pub fn save_trace(records: &[TraceRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, trace_to_string(records)).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Synthetic traces
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceGenOptions {
    /// Fraction of records that repeat an earlier record exactly.
    pub dup: f64,
    /// Fraction of records that reuse an earlier template with new literals.
    pub template_dup: f64,
    pub presence: bool,
    pub with_hashes: bool,
    pub bounds: SampleBounds,
}

impl Default for TraceGenOptions {
    fn default() -> Self {
        TraceGenOptions {
            dup: 0.0,
            template_dup: 0.0,
            presence: false,
            with_hashes: true,
            bounds: SampleBounds {
                max_joins: 2,
                max_aggs: 2,
                max_sorts: 1,
                max_evals: 1,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnswerKeyEntry {
    pub record_id: String,
    pub graph: QueryGraph,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTrace {
    pub records: Vec<TraceRecord>,
    pub answer_key: Vec<AnswerKeyEntry>,
}

fn vendor_token(tag: &str, canonical: &str) -> String {
    let mut h = FnvHasher::default();
    h.write(tag.as_bytes());
    h.write(canonical.as_bytes());
    format_hash(h.finish())
}

/// Redraws every Filter literal uniformly within its column's domain.
fn resample_literals(g: &QueryGraph, catalog: &Catalog, rng: &mut impl Rng) -> QueryGraph {
    let preds: Vec<Predicate> = g
        .predicates()
        .into_iter()
        .map(|p| {
            let cs = catalog.column(&p.column).expect("validated graph");
            let (lo, hi) = cs.ordinal_range().expect("range predicate column");
            Predicate::new(
                p.column.clone(),
                Value::from_ordinal(cs.value_kind, rng.gen_range(lo..=hi)).expect("non-text"),
            )
        })
        .collect();
    let mut out = g.clone();
    for n in out.nodes.iter_mut() {
        if let NodeKind::Filter { predicates } = &mut n.kind {
            for p in predicates.iter_mut() {
                if let Some(q) = preds.iter().find(|q| q.column == p.column) {
                    p.bound = q.bound.clone();
                }
            }
        }
    }
    out
}

pub const TRACE_EPOCH_MS: i64 = 1_700_000_000_000;

/// Samples `n` random graphs, executes them and emits a trace whose targets
/// are the measured profiles. Exactly `round(dup·n)` records repeat an
/// earlier record and `round(template_dup·n)` reuse an earlier template with
/// fresh literals; all other records have hashes not seen before.
pub fn gen_synthetic_trace(
    backend: &dyn ExecutionBackend,
    n: usize,
    seed: u64,
    opts: TraceGenOptions,
) -> Result<SyntheticTrace> {
    let catalog = backend.catalog();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_dup = (opts.dup * n as f64).round() as usize;
    let n_tpl = (opts.template_dup * n as f64).round() as usize;
    if n > 0 && n_dup + n_tpl > n - 1 {
        return Err(Error::Validation("duplication fractions leave no room for originals".into()));
    }
    let mut roles = vec![0u8; n];
    if n > 1 {
        let mut later: Vec<usize> = (1..n).collect();
        later.shuffle(&mut rng);
        for &i in &later[..n_dup] {
            roles[i] = 1;
        }
        for &i in &later[n_dup..n_dup + n_tpl] {
            roles[i] = 2;
        }
    }

    let mut records: Vec<TraceRecord> = Vec::with_capacity(n);
    let mut key: Vec<AnswerKeyEntry> = Vec::with_capacity(n);
    let mut exact_seen: HashSet<u64> = HashSet::new();
    let mut param_seen: HashSet<u64> = HashSet::new();
    let mut timestamp = TRACE_EPOCH_MS;
    for (i, role) in roles.iter().enumerate() {
        timestamp += rng.gen_range(0..=2_000);
        let record_id = format!("q{:04}", i + 1);
        let graph = match role {
            1 => {
                let src = rng.gen_range(0..i);
                let mut r = records[src].clone();
                r.record_id = record_id.clone();
                r.timestamp_ms = timestamp;
                records.push(r);
                key.push(AnswerKeyEntry {
                    record_id,
                    graph: key[src].graph.clone(),
                });
                continue;
            }
            2 => {
                // a template with literals; fall back to a fresh graph when none exists
                let candidates: Vec<usize> = (0..i)
                    .filter(|&j| !key[j].graph.predicates().is_empty())
                    .collect();
                let mut found = None;
                if let Some(&src) = candidates.choose(&mut rng) {
                    for _ in 0..32 {
                        let g = resample_literals(&key[src].graph, catalog, &mut rng);
                        if !exact_seen.contains(&graph_hash(&g, false)) {
                            found = Some(g);
                            break;
                        }
                    }
                }
                match found {
                    Some(g) => g,
                    None => fresh_graph(catalog, opts.bounds, &mut rng, &exact_seen, &param_seen)?,
                }
            }
            _ => fresh_graph(catalog, opts.bounds, &mut rng, &exact_seen, &param_seen)?,
        };
        exact_seen.insert(graph_hash(&graph, false));
        param_seen.insert(graph_hash(&graph, true));
        let profile = backend.execute(&graph)?;
        let counts = profile.structural;
        let structure = if opts.presence {
            StructuralProfile {
                constraints: OperatorKind::ALL
                    .iter()
                    .map(|&kind| StructuralConstraint {
                        kind,
                        mode: ConstraintMode::Presence(kind.count_in(&counts) > 0),
                        tolerance: 0,
                    })
                    .collect(),
            }
        } else {
            StructuralProfile::exact(counts.joins, counts.aggregates, counts.sorts)
        };
        let (query_hash, param_hash) = if opts.with_hashes {
            (
                Some(vendor_token("q:", &canonical_form(&graph, false))),
                Some(vendor_token("p:", &canonical_form(&graph, true))),
            )
        } else {
            (None, None)
        };
        records.push(TraceRecord {
            record_id: record_id.clone(),
            timestamp_ms: timestamp,
            targets: TargetProfile::new(profile.cpu_time_ms, profile.scanned_bytes as f64),
            structure,
            query_hash,
            param_hash,
        });
        key.push(AnswerKeyEntry { record_id, graph });
    }
    Ok(SyntheticTrace {
        records,
        answer_key: key,
    })
}

fn fresh_graph(
    catalog: &Catalog,
    bounds: SampleBounds,
    rng: &mut impl Rng,
    exact_seen: &HashSet<u64>,
    param_seen: &HashSet<u64>,
) -> Result<QueryGraph> {
    for _ in 0..1000 {
        let g = sample_with_rng(catalog, bounds, rng);
        if !exact_seen.contains(&graph_hash(&g, false)) && !param_seen.contains(&graph_hash(&g, true)) {
            return Ok(g);
        }
    }
    Err(Error::Validation("could not sample a new distinct query graph".into()))
}

pub fn answer_key_to_string(key: &[AnswerKeyEntry]) -> String {
    let mut out = String::new();
    for e in key {
        out.push_str(&format!("-- record_id={}\n", e.record_id));
        out.push_str(&canonical_form(&e.graph, false));
        out.push('\n');
    }
    out
}

pub fn parse_answer_key(text: &str) -> Result<Vec<AnswerKeyEntry>> {
    let mut out = Vec::new();
    for block in text.split("-- record_id=").filter(|b| !b.trim().is_empty()) {
        let (id, body) = block
            .split_once('\n')
            .ok_or_else(|| Error::Parse("answer key entry without graph".into()))?;
        out.push(AnswerKeyEntry {
            record_id: id.trim().to_string(),
            graph: parse_canonical(body)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::SimulatedBackend;
    use crate::catalog::demo_dataset;

    fn demo_backend() -> SimulatedBackend {
        let (c, t) = demo_dataset();
        SimulatedBackend::new(c, &t).unwrap()
    }

    fn profile(cpu: f64, bytes: u64) -> ExecutionProfile {
        ExecutionProfile {
            cpu_time_ms: cpu,
            scanned_bytes: bytes,
            structural: StructuralCounts::default(),
            per_operator: Vec::new(),
        }
    }

    #[test]
    fn mismatch_examples() {
        let t = TargetProfile::new(100.0, 5000.0);
        assert_eq!(compute_mismatch(&profile(100.0, 5000), &t), 0.0);
        let mut t1 = TargetProfile::new(100.0, 5000.0);
        t1.weights = [1.0, 0.0];
        assert_eq!(compute_mismatch(&profile(150.0, 1), &t1), 0.5);
        let t0 = TargetProfile::new(0.0, 0.0);
        assert_eq!(compute_mismatch(&profile(2.0, 0), &t0), 2.0);
    }

    #[test]
    fn qerror_examples() {
        assert_eq!(qerror(1.5, 1.5, 1.0), 1.0);
        assert_eq!(qerror(2.0, 1.0, 0.1), 2.0);
        assert_eq!(qerror(0.0, 0.0, 1.0), 1.0);
    }

    const HEADER: &str = "record_id,timestamp_ms,cpu_time_ms,scanned_bytes,num_joins,num_aggs,num_sorts,query_hash,param_hash\n";

    #[test]
    fn equal_timestamps_keep_file_order() {
        let text = format!("{HEADER}b,5,1,2,0,0,0,h1,p1\na,5,1,2,0,0,0,,\nc,5,3.5,2,1,0,0,h2,\n");
        let rs = parse_trace(&text).unwrap();
        let ids: Vec<&str> = rs.iter().map(|r| r.record_id.as_str()).collect();
        assert_eq!(ids, ["b", "a", "c"]);
        assert_eq!(rs[1].query_hash, None);
        assert_eq!(rs[2].param_hash, None);
        assert_eq!(rs[2].query_hash.as_deref(), Some("h2"));
    }

    #[test]
    fn negative_cpu_rejected() {
        let text = format!("{HEADER}a,5,-1,2,0,0,0,,\n");
        assert!(matches!(parse_trace(&text), Err(Error::Parse(_))));
    }

    #[test]
    fn decreasing_timestamps_rejected() {
        let text = format!("{HEADER}a,5,1,2,0,0,0,,\nb,4,1,2,0,0,0,,\n");
        assert!(matches!(parse_trace(&text), Err(Error::Ordering { .. })));
    }

    #[test]
    fn missing_param_hash_column() {
        let text = "record_id,timestamp_ms,cpu_time_ms,scanned_bytes,num_joins,num_aggs,num_sorts,query_hash\na,1,2,3,0,1,0,h\n";
        let rs = parse_trace(text).unwrap();
        assert_eq!(rs[0].param_hash, None);
        assert_eq!(rs[0].structure.required(OperatorKind::Aggregate), 1);
    }

    #[test]
    fn presence_mode() {
        let text = format!("# mode=presence\n{HEADER}a,1,2,3,1,0,1,,\n");
        let rs = parse_trace(&text).unwrap();
        let s = &rs[0].structure;
        assert!(s.is_presence());
        let counts = StructuralCounts { joins: 2, aggregates: 0, sorts: 1, tables: 3 };
        assert!(s.is_satisfied_by(&counts));
        assert_eq!(parse_trace(&trace_to_string(&rs)).unwrap(), rs);
    }

    #[test]
    fn structural_satisfaction_tolerance_zero() {
        let s = StructuralProfile::exact(1, 0, 0);
        assert!(s.is_satisfied_by(&StructuralCounts { joins: 1, aggregates: 0, sorts: 0, tables: 2 }));
        assert!(!s.is_satisfied_by(&StructuralCounts { joins: 1, aggregates: 1, sorts: 0, tables: 2 }));
        assert!(StructuralProfile::default().is_satisfied_by(&StructuralCounts::default()));
    }

    #[test]
    fn single_record_carries_measured_targets() {
        let be = demo_backend();
        let opts = TraceGenOptions {
            bounds: SampleBounds { max_joins: 0, max_aggs: 0, max_sorts: 0, max_evals: 0 },
            ..Default::default()
        };
        let t = gen_synthetic_trace(&be, 1, 5, opts).unwrap();
        assert_eq!(t.records.len(), 1);
        let p = be.execute(&t.answer_key[0].graph).unwrap();
        assert_eq!(t.records[0].targets.cpu_time_ms.to_bits(), p.cpu_time_ms.to_bits());
        assert_eq!(t.records[0].targets.scanned_bytes, p.scanned_bytes as f64);
        assert_eq!(t.records[0].structure, StructuralProfile::exact(0, 0, 0));
    }

    #[test]
    fn duplication_knob_is_exact() {
        let be = demo_backend();
        let opts = TraceGenOptions { dup: 0.4, ..Default::default() };
        let t = gen_synthetic_trace(&be, 50, 7, opts).unwrap();
        let mut seen = HashSet::new();
        let repeats = t
            .records
            .iter()
            .filter(|r| !seen.insert(r.query_hash.clone().unwrap()))
            .count();
        assert_eq!(repeats, 20);
        let text = trace_to_string(&t.records);
        let again = gen_synthetic_trace(&be, 50, 7, opts).unwrap();
        assert_eq!(trace_to_string(&again.records), text);
        assert_eq!(parse_trace(&text).unwrap(), t.records);
        let key = answer_key_to_string(&t.answer_key);
        assert_eq!(parse_answer_key(&key).unwrap(), parse_answer_key(&answer_key_to_string(&again.answer_key)).unwrap());
    }
}

#[cfg(test)]
mod props {
    use proptest::prelude::*;

    use super::*;
    use crate::backend::SimulatedBackend;
    use crate::catalog::{gen_synthetic_catalog, SyntheticSpec};

    fn profile(cpu: f64, bytes: u64) -> ExecutionProfile {
        ExecutionProfile {
            cpu_time_ms: cpu,
            scanned_bytes: bytes,
            structural: Default::default(),
            per_operator: Vec::new(),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn qerror_is_symmetric(a in 1e-6f64..1e9, b in 1e-6f64..1e9, eta in 1e-9f64..1.0) {
            prop_assert_eq!(qerror(a, b, eta), qerror(b, a, eta));
            prop_assert!(qerror(a, b, eta) >= 1.0);
        }

        #[test]
        fn mismatch_is_zero_iff_weighted_metrics_match(
            cpu in 0.01f64..1e4,
            bytes in 1u64..1_000_000,
            dc in prop_oneof![Just(0.0), 0.001f64..100.0],
            db in prop_oneof![Just(0u64), 1u64..1000],
            w_cpu in prop_oneof![Just(0.0), 0.1f64..2.0],
        ) {
            let mut t = TargetProfile::new(cpu, bytes as f64);
            t.weights = [w_cpu, 1.0];
            let m = compute_mismatch(&profile(cpu + dc, bytes + db), &t);
            let matches = (w_cpu == 0.0 || dc == 0.0) && db == 0;
            prop_assert_eq!(m == 0.0, matches);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn answer_key_reproduces_targets(seed in any::<u64>(), dup in 0.0f64..0.4) {
            let (c, t) = gen_synthetic_catalog(SyntheticSpec { n_tables: 4, rows_per_table: 300, seed: 11 }).unwrap();
            let be = SimulatedBackend::new(c, &t).unwrap();
            let opts = TraceGenOptions { dup, template_dup: 0.1, ..TraceGenOptions::default() };
            let trace = gen_synthetic_trace(&be, 20, seed, opts).unwrap();
            for (r, k) in trace.records.iter().zip(&trace.answer_key) {
                prop_assert_eq!(&r.record_id, &k.record_id);
                let p = be.execute(&k.graph).unwrap();
                prop_assert_eq!(p.cpu_time_ms.to_bits(), r.targets.cpu_time_ms.to_bits());
                prop_assert_eq!(p.scanned_bytes as f64, r.targets.scanned_bytes);
                prop_assert!(r.structure.is_satisfied_by(&p.structural));
            }
        }
    }
}
