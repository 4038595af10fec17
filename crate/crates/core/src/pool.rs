//! Query pool: reuse of generated queries by exact hash, parameterized hash
//! and, for hash-free records, a nearest proxy signature.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::RwLock;

use crate::backend::{profile_from_text, profile_to_text, remap_profile, ExecutionProfile};
use crate::error::{Error, Result};
use crate::querygraph::{canonical_form, canonical_ids, format_hash, graph_hash, parse_canonical, QueryGraph};
use crate::trace::{OperatorKind, TraceRecord};

#[derive(Clone, Debug, PartialEq)]
pub struct PoolEntry {
    pub exact_hash: u64,
    pub param_hash: u64,
    /// Stored with canonical node ids; `profile` refers to the same ids.
    pub graph: QueryGraph,
    pub profile: ExecutionProfile,
    pub record_id: String,
    /// Insertion sequence number.
    pub inserted: u64,
    pub mismatch: f64,
}

impl PoolEntry {
    /// Builds an entry, canonicalizing node ids of graph and profile.
    pub fn new(graph: &QueryGraph, profile: &ExecutionProfile, record_id: &str, mismatch: f64) -> Result<Self> {
        let ids = canonical_ids(graph);
        let canon = parse_canonical(&canonical_form(graph, false))?;
        Ok(PoolEntry {
            exact_hash: graph_hash(graph, false),
            param_hash: graph_hash(graph, true),
            graph: canon,
            profile: remap_profile(profile, &ids),
            record_id: record_id.to_string(),
            inserted: 0,
            mismatch,
        })
    }

    fn check(&self) -> Result<()> {
        if graph_hash(&self.graph, false) != self.exact_hash || graph_hash(&self.graph, true) != self.param_hash {
            return Err(Error::Validation(format!(
                "pool entry {} does not match its graph",
                format_hash(self.exact_hash)
            )));
        }
        Ok(())
    }
}

/// `[ln(1+cpu), ln(1+bytes), joins, aggregates, sorts]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProxySignature(pub [f64; 5]);

impl ProxySignature {
    pub fn of_record(r: &TraceRecord) -> Self {
        let s = &r.structure;
        let count = |k| s.value(k).unwrap_or(0) as f64;
        ProxySignature([
            r.targets.cpu_time_ms.ln_1p(),
            r.targets.scanned_bytes.ln_1p(),
            count(OperatorKind::Join),
            count(OperatorKind::Aggregate),
            count(OperatorKind::Sort),
        ])
    }

    /// Signature of what an entry measured, with counts collapsed to
    /// presence bits wherever the record only carries presence.
    pub fn of_entry(e: &PoolEntry, like: &TraceRecord) -> Self {
        let c = &e.profile.structural;
        let count = |k: OperatorKind| {
            let v = k.count_in(c) as f64;
            if like.structure.get(k).is_some_and(|x| matches!(x.mode, crate::trace::ConstraintMode::Presence(_))) {
                v.min(1.0)
            } else {
                v
            }
        };
        ProxySignature([
            e.profile.cpu_time_ms.ln_1p(),
            (e.profile.scanned_bytes as f64).ln_1p(),
            count(OperatorKind::Join),
            count(OperatorKind::Aggregate),
            count(OperatorKind::Sort),
        ])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Lookup {
    Exact(PoolEntry),
    Template(PoolEntry),
    Proxy(PoolEntry, f64),
    Miss,
}

impl Lookup {
    pub fn kind(&self) -> &'static str {
        match self {
            Lookup::Exact(_) => "exact",
            Lookup::Template(_) => "template",
            Lookup::Proxy(..) => "proxy",
            Lookup::Miss => "miss",
        }
    }
}

#[derive(Default)]
struct Inner {
    entries: BTreeMap<u64, PoolEntry>,
    /// param hash → exact hashes in insertion order
    templates: HashMap<u64, Vec<u64>>,
    /// vendor token → pool hash, bound on first occurrence
    vendor_exact: HashMap<String, u64>,
    vendor_param: HashMap<String, u64>,
    next: u64,
}

pub struct QueryPool {
    inner: RwLock<Inner>,
    pub tau: f64,
}

impl Default for QueryPool {
    fn default() -> Self {
        QueryPool::new(0.5)
    }
}

impl QueryPool {
    pub fn new(tau: f64) -> Self {
        QueryPool {
            inner: RwLock::new(Inner::default()),
            tau,
        }
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("pool lock").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, exact_hash: u64) -> Option<PoolEntry> {
        self.inner.read().expect("pool lock").entries.get(&exact_hash).cloned()
    }

    pub fn entries(&self) -> Vec<PoolEntry> {
        self.inner.read().expect("pool lock").entries.values().cloned().collect()
    }

    /// Inserts or, for a known exact hash, replaces when the new mismatch is
    /// lower. Returns whether the pool changed.
    pub fn insert(&self, mut entry: PoolEntry) -> Result<bool> {
        entry.check()?;
        let mut inner = self.inner.write().expect("pool lock");
        if let Some(old) = inner.entries.get(&entry.exact_hash) {
            if entry.mismatch >= old.mismatch {
                return Ok(false);
            }
            entry.inserted = old.inserted;
        } else {
            entry.inserted = inner.next;
            inner.next += 1;
            inner.templates.entry(entry.param_hash).or_default().push(entry.exact_hash);
        }
        inner.entries.insert(entry.exact_hash, entry);
        Ok(true)
    }

    /// Records which pool hashes a record's vendor tokens stand for. Only the
    /// first binding of a token counts.
    pub fn bind(&self, record: &TraceRecord, exact_hash: u64, param_hash: u64) {
        let mut inner = self.inner.write().expect("pool lock");
        if let Some(q) = &record.query_hash {
            inner.vendor_exact.entry(q.clone()).or_insert(exact_hash);
        }
        if let Some(p) = &record.param_hash {
            inner.vendor_param.entry(p.clone()).or_insert(param_hash);
        }
    }

    pub fn lookup(&self, record: &TraceRecord) -> Lookup {
        let inner = self.inner.read().expect("pool lock");
        if let Some(e) = record
            .query_hash
            .as_ref()
            .and_then(|q| inner.vendor_exact.get(q))
            .and_then(|h| inner.entries.get(h))
        {
            return Lookup::Exact(e.clone());
        }
        if let Some(e) = record
            .param_hash
            .as_ref()
            .and_then(|p| inner.vendor_param.get(p))
            .and_then(|h| inner.templates.get(h))
            .and_then(|hs| hs.first())
            .and_then(|h| inner.entries.get(h))
        {
            return Lookup::Template(e.clone());
        }
        if record.query_hash.is_some() || record.param_hash.is_some() || inner.entries.is_empty() {
            return Lookup::Miss;
        }
        let sigs: Vec<(&PoolEntry, ProxySignature)> = inner
            .entries
            .values()
            .map(|e| (e, ProxySignature::of_entry(e, record)))
            .collect();
        let n = sigs.len() as f64;
        let mut mean = [0.0; 5];
        let mut sd = [0.0; 5];
        for (_, s) in &sigs {
            for i in 0..5 {
                mean[i] += s.0[i] / n;
            }
        }
        for (_, s) in &sigs {
            for i in 0..5 {
                sd[i] += (s.0[i] - mean[i]).powi(2) / n;
            }
        }
        let sd = sd.map(|v| if v > 1e-12 { v.sqrt() } else { 1.0 });
        let q = ProxySignature::of_record(record);
        let dist = |s: &ProxySignature| -> f64 {
            (0..5)
                .map(|i| ((s.0[i] - q.0[i]) / sd[i]).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let best = sigs
            .iter()
            .map(|(e, s)| (dist(s), *e))
            .reduce(|a, b| if b.0 < a.0 { b } else { a });
        match best {
            Some((d, e)) if d <= self.tau => Lookup::Proxy(e.clone(), d),
            _ => Lookup::Miss,
        }
    }

    /// Writes `<hash>.graph` and `<hash>.profile` per entry plus `index.csv`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let inner = self.inner.read().expect("pool lock");
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = [
            "exact_hash",
            "param_hash",
            "record_id",
            "inserted",
            "mismatch",
            "cpu_time_ms",
            "scanned_bytes",
            "graph_file",
            "profile_file",
        ];
        w.write_record(header).map_err(|e| Error::Parse(e.to_string()))?;
        for e in inner.entries.values() {
            let h = format_hash(e.exact_hash);
            let graph_file = format!("{h}.graph");
            let profile_file = format!("{h}.profile");
            let gp = dir.join(&graph_file);
            fs::write(&gp, canonical_form(&e.graph, false)).map_err(|err| Error::io(&gp, err))?;
            let pp = dir.join(&profile_file);
            fs::write(&pp, profile_to_text(&e.profile)).map_err(|err| Error::io(&pp, err))?;
            w.write_record([
                h,
                format_hash(e.param_hash),
                e.record_id.clone(),
                e.inserted.to_string(),
                e.mismatch.to_string(),
                e.profile.cpu_time_ms.to_string(),
                e.profile.scanned_bytes.to_string(),
                graph_file,
                profile_file,
            ])
            .map_err(|err| Error::Parse(err.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        let ip = dir.join("index.csv");
        fs::write(&ip, bytes).map_err(|e| Error::io(&ip, e))
    }

    pub fn load(dir: impl AsRef<Path>, tau: f64) -> Result<Self> {
        let dir = dir.as_ref();
        let ip = dir.join("index.csv");
        let text = fs::read_to_string(&ip).map_err(|e| Error::io(&ip, e))?;
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut entries: Vec<PoolEntry> = Vec::new();
        let hex = |s: &str| u64::from_str_radix(s, 16).map_err(|_| Error::Parse(format!("bad hash `{s}`")));
        for row in rdr.records() {
            let row = row.map_err(|e| Error::Parse(e.to_string()))?;
            if row.len() != 9 {
                return Err(Error::Parse(format!("pool index row has {} fields", row.len())));
            }
            let gp = dir.join(&row[7]);
            let graph = parse_canonical(&fs::read_to_string(&gp).map_err(|e| Error::io(&gp, e))?)?;
            let pp = dir.join(&row[8]);
            let profile = profile_from_text(&fs::read_to_string(&pp).map_err(|e| Error::io(&pp, e))?)?;
            let entry = PoolEntry {
                exact_hash: hex(&row[0])?,
                param_hash: hex(&row[1])?,
                graph,
                profile,
                record_id: row[2].to_string(),
                inserted: row[3].parse().map_err(|_| Error::Parse("bad insertion number".into()))?,
                mismatch: row[4].parse().map_err(|_| Error::Parse("bad mismatch".into()))?,
            };
            entry.check()?;
            entries.push(entry);
        }
        entries.sort_by_key(|e| e.inserted);
        let pool = QueryPool::new(tau);
        {
            let mut inner = pool.inner.write().expect("pool lock");
            for e in entries {
                inner.next = inner.next.max(e.inserted + 1);
                inner.templates.entry(e.param_hash).or_default().push(e.exact_hash);
                inner.entries.insert(e.exact_hash, e);
            }
        }
        Ok(pool)
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::backend::{ExecutionBackend, SimulatedBackend};
    use crate::catalog::{demo_dataset, Value};
    use crate::querygraph::{ColumnRef, GraphBuilder, Predicate};
    use crate::translator::to_sql;
    use crate::trace::{StructuralProfile, TargetProfile};
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn backend() -> &'static SimulatedBackend {
        static B: OnceLock<SimulatedBackend> = OnceLock::new();
        B.get_or_init(|| {
            let (c, t) = demo_dataset();
            SimulatedBackend::new(c, &t).unwrap()
        })
    }

    fn entry(v: i64, i: usize) -> PoolEntry {
        let mut b = GraphBuilder::new();
        let s = b.scan("orders", &["o_id", "o_total"]);
        let g = b.finish(s);
        let g = g.with_predicates(&[Predicate::new(ColumnRef::new("orders", "o_id"), Value::Integer(v))]);
        let p = backend().execute(&g).unwrap();
        PoolEntry::new(&g, &p, &format!("r{i}"), 0.1).unwrap()
    }

    fn record(id: &str, q: &str) -> TraceRecord {
        TraceRecord {
            record_id: id.into(),
            timestamp_ms: 0,
            targets: TargetProfile::new(1.0, 1000.0),
            structure: StructuralProfile::exact(0, 0, 0),
            query_hash: Some(q.into()),
            param_hash: Some(format!("p{q}")),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn save_load_preserves_entries(vals in prop::collection::vec(1i64..1000, 1..6)) {
            let pool = QueryPool::default();
            for (i, &v) in vals.iter().enumerate() {
                pool.insert(entry(v, i)).unwrap();
            }
            let dir = tempfile::tempdir().unwrap();
            pool.save(dir.path()).unwrap();
            let back = QueryPool::load(dir.path(), 0.5).unwrap();
            prop_assert_eq!(back.entries(), pool.entries());
        }

        #[test]
        fn exact_lookup_returns_bound_graph(v in 1i64..1000) {
            let e = entry(v, 0);
            let pool = QueryPool::default();
            pool.insert(e.clone()).unwrap();
            let r = record("x", &format!("q{v}"));
            pool.bind(&r, e.exact_hash, e.param_hash);
            match pool.lookup(&r) {
                Lookup::Exact(hit) => {
                    prop_assert_eq!(canonical_form(&hit.graph, false), canonical_form(&e.graph, false));
                    prop_assert_eq!(to_sql(&hit.graph).unwrap(), to_sql(&e.graph).unwrap());
                }
                other => prop_assert!(false, "expected exact hit, got {:?}", other),
            }
        }
    }
}
