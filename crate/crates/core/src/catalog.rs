//! Proxy-dataset metadata: tables, per-column statistics, the schema join
//! graph, and the synthetic star/snowflake generator that backs the
//! simulated engine.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt;
use std::fs;
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Integer,
    Decimal,
    Date,
    Text,
}

impl ValueKind {
    pub fn is_numeric(self) -> bool {
        matches!(self, ValueKind::Integer | ValueKind::Decimal)
    }

    /// Range predicates are only searched over ordered non-text domains.
    pub fn is_rangeable(self) -> bool {
        !matches!(self, ValueKind::Text)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ValueKind::Integer => "integer",
            ValueKind::Decimal => "decimal",
            ValueKind::Date => "date",
            ValueKind::Text => "text",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "integer" => Ok(ValueKind::Integer),
            "decimal" => Ok(ValueKind::Decimal),
            "date" => Ok(ValueKind::Date),
            "text" => Ok(ValueKind::Text),
            other => Err(Error::Parse(format!("unknown value kind `{other}`"))),
        }
    }
}

/// A domain value. Decimals are fixed-point hundredths, dates are days since
/// 1970-01-01.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Integer(i64),
    Decimal(i64),
    Date(i32),
    Text(String),
}

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid epoch")
}

impl Value {
    pub fn kind(&self) -> ValueKind {
        match self {
            Value::Integer(_) => ValueKind::Integer,
            Value::Decimal(_) => ValueKind::Decimal,
            Value::Date(_) => ValueKind::Date,
            Value::Text(_) => ValueKind::Text,
        }
    }

    /// Order-preserving integer image of a non-text value.
    pub fn ordinal(&self) -> Option<i64> {
        match self {
            Value::Integer(v) | Value::Decimal(v) => Some(*v),
            Value::Date(d) => Some(*d as i64),
            Value::Text(_) => None,
        }
    }

    pub fn from_ordinal(kind: ValueKind, v: i64) -> Option<Value> {
        match kind {
            ValueKind::Integer => Some(Value::Integer(v)),
            ValueKind::Decimal => Some(Value::Decimal(v)),
            ValueKind::Date => i32::try_from(v).ok().map(Value::Date),
            ValueKind::Text => None,
        }
    }

    /// Parses the canonical text form of a value of a known kind.
    pub fn parse(kind: ValueKind, s: &str) -> Result<Value> {
        let bad = || Error::Parse(format!("bad {} value `{s}`", kind.as_str()));
        match kind {
            ValueKind::Integer => s.parse().map(Value::Integer).map_err(|_| bad()),
            ValueKind::Decimal => parse_decimal(s).map(Value::Decimal).ok_or_else(bad),
            ValueKind::Date => {
                let d = NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| bad())?;
                let days = d.signed_duration_since(epoch()).num_days();
                i32::try_from(days).map(Value::Date).map_err(|_| bad())
            }
            ValueKind::Text => Ok(Value::Text(s.to_string())),
        }
    }

    /// Infers the kind of a non-text literal from its syntax: ISO dates,
    /// numbers with a `.` are decimals, everything else integers.
    pub fn parse_literal(s: &str) -> Result<Value> {
        let b = s.as_bytes();
        if b.len() == 10 && b[4] == b'-' && b[7] == b'-' {
            Value::parse(ValueKind::Date, s)
        } else if s.contains('.') {
            Value::parse(ValueKind::Decimal, s)
        } else {
            Value::parse(ValueKind::Integer, s)
        }
    }
}

fn parse_decimal(s: &str) -> Option<i64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() || frac.len() > 2 || !frac.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let units: i64 = int.parse().ok()?;
    let mut hundredths: i64 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
    if frac.len() == 1 {
        hundredths *= 10;
    }
    let v = units.checked_mul(100)?.checked_add(hundredths)?;
    Some(if neg { -v } else { v })
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Integer(v) => write!(f, "{v}"),
            Value::Decimal(v) => {
                let sign = if *v < 0 { "-" } else { "" };
                let a = v.unsigned_abs();
                write!(f, "{sign}{}.{:02}", a / 100, a % 100)
            }
            Value::Date(d) => {
                let date = if *d >= 0 {
                    epoch().checked_add_days(Days::new(*d as u64))
                } else {
                    epoch().checked_sub_days(Days::new(d.unsigned_abs() as u64))
                };
                match date {
                    Some(date) => write!(f, "{}", date.format("%Y-%m-%d")),
                    None => write!(f, "{d}"),
                }
            }
            Value::Text(s) => write!(f, "{s}"),
        }
    }
}

/// `table.column` reference.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        ColumnRef {
            table: table.into(),
            column: column.into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.split_once('.') {
            Some((t, c)) if !t.is_empty() && !c.is_empty() && !c.contains('.') => {
                Ok(ColumnRef::new(t, c))
            }
            _ => Err(Error::Parse(format!("bad column reference `{s}`"))),
        }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColumnStats {
    pub name: String,
    pub table: String,
    pub value_kind: ValueKind,
    pub bytes_per_value: u64,
    pub scan_weight: u64,
    pub min_value: Option<Value>,
    pub max_value: Option<Value>,
    pub distinct_count: u64,
}

impl ColumnStats {
    pub fn column_ref(&self) -> ColumnRef {
        ColumnRef::new(&self.table, &self.name)
    }

    /// `(min, max)` ordinals for rangeable columns with known bounds.
    pub fn ordinal_range(&self) -> Option<(i64, i64)> {
        Some((self.min_value.as_ref()?.ordinal()?, self.max_value.as_ref()?.ordinal()?))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableStats {
    pub name: String,
    pub row_count: u64,
    pub columns: Vec<ColumnStats>,
}

impl TableStats {
    pub fn column(&self, name: &str) -> Option<&ColumnStats> {
        self.columns.iter().find(|c| c.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JoinEdge {
    pub left: ColumnRef,
    pub right: ColumnRef,
}

impl JoinEdge {
    pub fn touches(&self, table: &str) -> bool {
        self.left.table == table || self.right.table == table
    }

    /// The key on `table`'s side and the key on the other side.
    pub fn oriented(&self, table: &str) -> Option<(&ColumnRef, &ColumnRef)> {
        if self.left.table == table {
            Some((&self.left, &self.right))
        } else if self.right.table == table {
            Some((&self.right, &self.left))
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct SchemaJoinGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<JoinEdge>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Catalog {
    pub dataset_id: String,
    pub tables: Vec<TableStats>,
    pub join_graph: SchemaJoinGraph,
}

impl Catalog {
    pub fn table(&self, name: &str) -> Option<&TableStats> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn column(&self, c: &ColumnRef) -> Option<&ColumnStats> {
        self.table(&c.table)?.column(&c.column)
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.tables.iter().position(|t| t.name == name)
    }

    /// Checks every catalog invariant; returns the first violation.
    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for t in &self.tables {
            if !names.insert(t.name.as_str()) {
                return Err(Error::Validation(format!("duplicate table `{}`", t.name)));
            }
            if t.row_count < 1 {
                return Err(Error::Validation(format!("table `{}` has no rows", t.name)));
            }
            let mut cols = HashSet::new();
            for c in &t.columns {
                if !cols.insert(c.name.as_str()) {
                    return Err(Error::Validation(format!(
                        "duplicate column `{}.{}`",
                        t.name, c.name
                    )));
                }
                if c.table != t.name {
                    return Err(Error::Validation(format!(
                        "column `{}` listed under `{}` but names table `{}`",
                        c.name, t.name, c.table
                    )));
                }
                if c.scan_weight != t.row_count * c.bytes_per_value {
                    return Err(Error::Validation(format!(
                        "scan_weight of `{}.{}` is {}, expected {}",
                        t.name,
                        c.name,
                        c.scan_weight,
                        t.row_count * c.bytes_per_value
                    )));
                }
                if c.distinct_count < 1 {
                    return Err(Error::Validation(format!(
                        "distinct_count of `{}.{}` must be ≥ 1",
                        t.name, c.name
                    )));
                }
                match (&c.min_value, &c.max_value) {
                    (Some(lo), Some(hi)) => {
                        if lo.kind() != c.value_kind || hi.kind() != c.value_kind {
                            return Err(Error::Validation(format!(
                                "min/max of `{}.{}` do not match its kind",
                                t.name, c.name
                            )));
                        }
                        if lo > hi {
                            return Err(Error::Validation(format!(
                                "min > max for `{}.{}`",
                                t.name, c.name
                            )));
                        }
                    }
                    (None, None) => {}
                    _ => {
                        return Err(Error::Validation(format!(
                            "`{}.{}` has only one of min/max",
                            t.name, c.name
                        )))
                    }
                }
            }
            if t.columns.is_empty() {
                return Err(Error::Validation(format!("table `{}` has no columns", t.name)));
            }
        }
        for n in &self.join_graph.nodes {
            if self.table(n).is_none() {
                return Err(Error::Validation(format!("join graph names unknown table `{n}`")));
            }
        }
        for e in &self.join_graph.edges {
            let l = self.column(&e.left).ok_or_else(|| {
                Error::Validation(format!("join edge endpoint `{}` does not exist", e.left))
            })?;
            let r = self.column(&e.right).ok_or_else(|| {
                Error::Validation(format!("join edge endpoint `{}` does not exist", e.right))
            })?;
            if l.value_kind != r.value_kind {
                return Err(Error::Validation(format!(
                    "join edge {} = {} joins different kinds",
                    e.left, e.right
                )));
            }
            if e.left.table == e.right.table {
                return Err(Error::Validation(format!(
                    "join edge {} = {} is a self edge",
                    e.left, e.right
                )));
            }
        }
        Ok(())
    }

    /// Edges with both endpoints inside `tables`.
    pub fn edges_within<'a>(&'a self, tables: &'a [String]) -> impl Iterator<Item = &'a JoinEdge> {
        self.join_graph.edges.iter().filter(move |e| {
            tables.iter().any(|t| *t == e.left.table) && tables.iter().any(|t| *t == e.right.table)
        })
    }

    /// Whether `tables` induces a connected subgraph of the schema join graph.
    pub fn is_connected(&self, tables: &[String]) -> bool {
        if tables.is_empty() {
            return false;
        }
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        let mut queue = VecDeque::from([tables[0].as_str()]);
        seen.insert(tables[0].as_str());
        while let Some(t) = queue.pop_front() {
            for e in self.edges_within(tables) {
                if let Some((_, other)) = e.oriented(t) {
                    if seen.insert(other.table.as_str()) {
                        queue.push_back(other.table.as_str());
                    }
                }
            }
        }
        seen.len() == tables.len()
    }
}

/// Every connected `k`-subset of tables, in lexicographic order of catalog
/// table positions. Each set lists its tables in catalog order.
pub fn connected_table_subsets(catalog: &Catalog, k: usize) -> Vec<Vec<String>> {
    let n = catalog.tables.len();
    let mut out = Vec::new();
    if k == 0 || k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let set: Vec<String> = idx.iter().map(|&i| catalog.tables[i].name.clone()).collect();
        if catalog.is_connected(&set) {
            out.push(set);
        }
        // next combination
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] < n - k + i {
                idx[i] += 1;
                for j in (i + 1)..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
            if i == 0 {
                return out;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Catalog file
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CatalogFile {
    dataset_id: String,
    #[serde(default)]
    tables: Vec<TableEntry>,
    #[serde(default)]
    columns: Vec<ColumnEntry>,
    #[serde(default)]
    join_edges: Vec<EdgeEntry>,
}

#[derive(Serialize, Deserialize)]
struct TableEntry {
    name: String,
    row_count: u64,
}

#[derive(Serialize, Deserialize)]
struct ColumnEntry {
    table: String,
    name: String,
    value_kind: ValueKind,
    bytes_per_value: u64,
    scan_weight: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    min_value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_value: Option<String>,
    distinct_count: u64,
}

#[derive(Serialize, Deserialize)]
struct EdgeEntry {
    left: String,
    right: String,
}

pub fn catalog_to_string(catalog: &Catalog) -> String {
    let file = CatalogFile {
        dataset_id: catalog.dataset_id.clone(),
        tables: catalog
            .tables
            .iter()
            .map(|t| TableEntry {
                name: t.name.clone(),
                row_count: t.row_count,
            })
            .collect(),
        columns: catalog
            .tables
            .iter()
            .flat_map(|t| t.columns.iter())
            .map(|c| ColumnEntry {
                table: c.table.clone(),
                name: c.name.clone(),
                value_kind: c.value_kind,
                bytes_per_value: c.bytes_per_value,
                scan_weight: c.scan_weight,
                min_value: c.min_value.as_ref().map(|v| v.to_string()),
                max_value: c.max_value.as_ref().map(|v| v.to_string()),
                distinct_count: c.distinct_count,
            })
            .collect(),
        join_edges: catalog
            .join_graph
            .edges
            .iter()
            .map(|e| EdgeEntry {
                left: e.left.to_string(),
                right: e.right.to_string(),
            })
            .collect(),
    };
    toml::to_string(&file).expect("catalog serializes")
}

pub fn parse_catalog(text: &str) -> Result<Catalog> {
    let file: CatalogFile =
        toml::from_str(text).map_err(|e| Error::Parse(format!("catalog: {e}")))?;
    let mut tables: Vec<TableStats> = file
        .tables
        .into_iter()
        .map(|t| TableStats {
            name: t.name,
            row_count: t.row_count,
            columns: Vec::new(),
        })
        .collect();
    for c in file.columns {
        let table = tables
            .iter_mut()
            .find(|t| t.name == c.table)
            .ok_or_else(|| {
                Error::Validation(format!("column `{}` names unknown table `{}`", c.name, c.table))
            })?;
        let parse_bound = |s: Option<String>| -> Result<Option<Value>> {
            s.map(|s| Value::parse(c.value_kind, &s)).transpose()
        };
        table.columns.push(ColumnStats {
            min_value: parse_bound(c.min_value)?,
            max_value: parse_bound(c.max_value)?,
            name: c.name,
            table: c.table,
            value_kind: c.value_kind,
            bytes_per_value: c.bytes_per_value,
            scan_weight: c.scan_weight,
            distinct_count: c.distinct_count,
        });
    }
    let edges = file
        .join_edges
        .into_iter()
        .map(|e| {
            Ok(JoinEdge {
                left: ColumnRef::parse(&e.left)?,
                right: ColumnRef::parse(&e.right)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    for e in &edges {
        for side in [&e.left, &e.right] {
            if !tables.iter().any(|t| t.name == side.table) {
                return Err(Error::Validation(format!(
                    "join edge references missing table `{}`",
                    side.table
                )));
            }
        }
    }
    let catalog = Catalog {
        dataset_id: file.dataset_id,
        join_graph: SchemaJoinGraph {
            nodes: tables.iter().map(|t| t.name.clone()).collect(),
            edges,
        },
        tables,
    };
    catalog.validate()?;
    Ok(catalog)
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_catalog(&text)
}

pub fn save_catalog(catalog: &Catalog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, catalog_to_string(catalog)).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Materialized tables
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct ColumnData {
    pub name: String,
    pub kind: ValueKind,
    pub values: Vec<Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaterializedTable {
    pub name: String,
    pub columns: Vec<ColumnData>,
}

impl MaterializedTable {
    pub fn row_count(&self) -> usize {
        self.columns.first().map(|c| c.values.len()).unwrap_or(0)
    }

    pub fn column(&self, name: &str) -> Option<&ColumnData> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Column-major text: a header naming `column:kind` pairs, then one line
    /// of comma-separated canonical values per column.
    pub fn to_text(&self) -> String {
        let mut out = self
            .columns
            .iter()
            .map(|c| format!("{}:{}", c.name, c.kind.as_str()))
            .collect::<Vec<_>>()
            .join(",");
        out.push('\n');
        for c in &self.columns {
            let line = c
                .values
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",");
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    pub fn from_text(name: &str, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("table `{name}`: empty file")))?;
        let mut columns = Vec::new();
        for field in header.split(',') {
            let (col, kind) = field
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("table `{name}`: bad header field `{field}`")))?;
            columns.push(ColumnData {
                name: col.to_string(),
                kind: ValueKind::parse(kind)?,
                values: Vec::new(),
            });
        }
        for c in columns.iter_mut() {
            let line = lines.next().ok_or_else(|| {
                Error::Parse(format!("table `{name}`: missing data line for `{}`", c.name))
            })?;
            if !line.is_empty() {
                c.values = line
                    .split(',')
                    .map(|s| Value::parse(c.kind, s))
                    .collect::<Result<_>>()?;
            }
        }
        let n = columns.first().map(|c| c.values.len()).unwrap_or(0);
        if columns.iter().any(|c| c.values.len() != n) {
            return Err(Error::Parse(format!("table `{name}`: ragged columns")));
        }
        Ok(MaterializedTable {
            name: name.to_string(),
            columns,
        })
    }
}

pub fn table_file_name(table: &str) -> String {
    format!("{table}.tbl")
}

pub const CATALOG_FILE: &str = "catalog.toml";

/// Writes `catalog.toml` and one `.tbl` file per table into `dir`.
pub fn save_dataset(dir: impl AsRef<Path>, catalog: &Catalog, tables: &[MaterializedTable]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_catalog(catalog, dir.join(CATALOG_FILE))?;
    for t in tables {
        let p = dir.join(table_file_name(&t.name));
        fs::write(&p, t.to_text()).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// Loads a dataset directory written by [`save_dataset`].
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(Catalog, Vec<MaterializedTable>)> {
    let dir = dir.as_ref();
    let catalog = load_catalog(dir.join(CATALOG_FILE))?;
    let mut tables = Vec::new();
    for t in &catalog.tables {
        let p = dir.join(table_file_name(&t.name));
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        tables.push(MaterializedTable::from_text(&t.name, &text)?);
    }
    Ok((catalog, tables))
}

/// Recomputes row counts, min/max and distinct counts from data. Byte widths
/// come from `bytes_per_value`.
pub fn compute_table_stats(table: &MaterializedTable, bytes_per_value: &BTreeMap<String, u64>) -> TableStats {
    let rows = table.row_count() as u64;
    let columns = table
        .columns
        .iter()
        .map(|c| {
            let bpv = bytes_per_value.get(&c.name).copied().unwrap_or(8);
            let distinct: HashSet<&Value> = c.values.iter().collect();
            let (min_value, max_value) = if c.kind.is_rangeable() {
                (c.values.iter().min().cloned(), c.values.iter().max().cloned())
            } else {
                (None, None)
            };
            ColumnStats {
                name: c.name.clone(),
                table: table.name.clone(),
                value_kind: c.kind,
                bytes_per_value: bpv,
                scan_weight: rows * bpv,
                min_value,
                max_value,
                distinct_count: distinct.len().max(1) as u64,
            }
        })
        .collect();
    TableStats {
        name: table.name.clone(),
        row_count: rows,
        columns,
    }
}

// ---------------------------------------------------------------------------
// Synthetic star/snowflake schema
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub n_tables: usize,
    pub rows_per_table: u64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Two-table demo: `orders` (1000 rows) and `customer` (100 rows).
    pub fn demo() -> Self {
        SyntheticSpec {
            n_tables: 2,
            rows_per_table: 1000,
            seed: 7,
        }
    }
}

enum Gen {
    Sequence,
    Uniform(i64, i64),
    Text,
}

struct ColSpec {
    name: String,
    kind: ValueKind,
    bytes: u64,
    gen: Gen,
}

fn col(name: &str, kind: ValueKind, bytes: u64, gen: Gen) -> ColSpec {
    ColSpec {
        name: name.to_string(),
        kind,
        bytes,
        gen,
    }
}

const DAY_2020_01_01: i64 = 18262;

/// Generates a deterministic star/snowflake schema with populated data.
///
/// The fact table is `orders`; dimensions are added in a fixed order
/// (`customer`, `region`, `part`, `supplier`, then `dim6`, `dim7`, ...).
/// Every emitted statistic is recomputed from the generated rows.
pub fn gen_synthetic_catalog(spec: SyntheticSpec) -> Result<(Catalog, Vec<MaterializedTable>)> {
    use ValueKind::*;
    if spec.n_tables < 1 {
        return Err(Error::Validation("n_tables must be ≥ 1".into()));
    }
    if spec.rows_per_table < 1 {
        return Err(Error::Validation("rows_per_table must be ≥ 1".into()));
    }
    let fact_rows = spec.rows_per_table as i64;
    let cust_rows = (fact_rows / 10).max(1);
    let region_rows = (fact_rows / 100).max(2);
    let part_rows = (fact_rows / 5).max(1);
    let supp_rows = (fact_rows / 20).max(1);
    let dim_rows = (fact_rows / 10).max(1);

    let mut orders = vec![
        col("o_id", Integer, 8, Gen::Sequence),
        col("o_custkey", Integer, 8, Gen::Uniform(1, cust_rows)),
        col("o_total", Decimal, 8, Gen::Uniform(100, 100_000)),
        col("o_date", Date, 4, Gen::Uniform(DAY_2020_01_01, DAY_2020_01_01 + 1460)),
        col("o_comment", Text, 40, Gen::Text),
    ];
    let mut defs: Vec<(String, i64, Vec<ColSpec>)> = Vec::new();
    let mut edges: Vec<(&str, String, String, String)> = Vec::new();
    if spec.n_tables >= 2 {
        defs.push((
            "customer".into(),
            cust_rows,
            vec![
                col("c_id", Integer, 8, Gen::Sequence),
                col("c_name", Text, 20, Gen::Text),
                col("c_region", Integer, 4, Gen::Uniform(1, region_rows)),
            ],
        ));
        edges.push(("orders", "o_custkey".into(), "customer".into(), "c_id".into()));
    }
    if spec.n_tables >= 3 {
        defs.push((
            "region".into(),
            region_rows,
            vec![
                col("r_id", Integer, 4, Gen::Sequence),
                col("r_name", Text, 12, Gen::Text),
                col("r_pop", Integer, 8, Gen::Uniform(1_000, 1_000_000)),
            ],
        ));
        edges.push(("customer", "c_region".into(), "region".into(), "r_id".into()));
    }
    if spec.n_tables >= 4 {
        orders.push(col("o_partkey", Integer, 8, Gen::Uniform(1, part_rows)));
        defs.push((
            "part".into(),
            part_rows,
            vec![
                col("p_id", Integer, 8, Gen::Sequence),
                col("p_price", Decimal, 8, Gen::Uniform(100, 200_000)),
                col("p_size", Integer, 4, Gen::Uniform(1, 50)),
                col("p_brand", Text, 10, Gen::Text),
            ],
        ));
        edges.push(("orders", "o_partkey".into(), "part".into(), "p_id".into()));
    }
    if spec.n_tables >= 5 {
        orders.push(col("o_suppkey", Integer, 8, Gen::Uniform(1, supp_rows)));
        defs.push((
            "supplier".into(),
            supp_rows,
            vec![
                col("s_id", Integer, 8, Gen::Sequence),
                col("s_acctbal", Decimal, 8, Gen::Uniform(-99_999, 999_999)),
                col("s_since", Date, 4, Gen::Uniform(DAY_2020_01_01 - 3650, DAY_2020_01_01)),
                col("s_name", Text, 16, Gen::Text),
            ],
        ));
        edges.push(("orders", "o_suppkey".into(), "supplier".into(), "s_id".into()));
    }
    for k in 6..=spec.n_tables {
        let fk = format!("o_d{k}key");
        orders.push(col(&fk, Integer, 8, Gen::Uniform(1, dim_rows)));
        defs.push((
            format!("dim{k}"),
            dim_rows,
            vec![
                col(&format!("d{k}_id"), Integer, 8, Gen::Sequence),
                col(&format!("d{k}_val"), Integer, 4, Gen::Uniform(0, 1000)),
                col(&format!("d{k}_date"), Date, 4, Gen::Uniform(DAY_2020_01_01, DAY_2020_01_01 + 730)),
            ],
        ));
        edges.push(("orders", fk, format!("dim{k}"), format!("d{k}_id")));
    }
    defs.insert(0, ("orders".into(), fact_rows, orders));

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut tables = Vec::new();
    let mut stats = Vec::new();
    for (name, rows, cols) in defs {
        let mut data = Vec::new();
        let mut widths = BTreeMap::new();
        for c in &cols {
            widths.insert(c.name.clone(), c.bytes);
            let values: Vec<Value> = (0..rows)
                .map(|i| match c.gen {
                    Gen::Sequence => Value::from_ordinal(c.kind, i + 1).expect("non-text"),
                    Gen::Uniform(lo, hi) => {
                        Value::from_ordinal(c.kind, rng.gen_range(lo..=hi)).expect("non-text")
                    }
                    Gen::Text => Value::Text(
                        (0..c.bytes)
                            .map(|_| rng.gen_range(b'a'..=b'z') as char)
                            .collect(),
                    ),
                })
                .collect();
            data.push(ColumnData {
                name: c.name.clone(),
                kind: c.kind,
                values,
            });
        }
        let table = MaterializedTable { name, columns: data };
        stats.push(compute_table_stats(&table, &widths));
        tables.push(table);
    }
    let catalog = Catalog {
        dataset_id: format!(
            "synthetic-t{}-r{}-s{}",
            spec.n_tables, spec.rows_per_table, spec.seed
        ),
        join_graph: SchemaJoinGraph {
            nodes: stats.iter().map(|t| t.name.clone()).collect(),
            edges: edges
                .into_iter()
                .map(|(lt, lc, rt, rc)| JoinEdge {
                    left: ColumnRef::new(lt, lc),
                    right: ColumnRef::new(rt, rc),
                })
                .collect(),
        },
        tables: stats,
    };
    catalog.validate()?;
    Ok((catalog, tables))
}

/// The fixed two-table demo dataset.
pub fn demo_dataset() -> (Catalog, Vec<MaterializedTable>) {
    gen_synthetic_catalog(SyntheticSpec::demo()).expect("demo spec is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(c: &Catalog) -> Vec<String> {
        c.tables.iter().map(|t| t.name.clone()).collect()
    }

    #[test]
    fn demo_shape_matches_definition() {
        let (c, _) = demo_dataset();
        assert_eq!(names(&c), vec!["orders", "customer"]);
        let o = c.table("orders").unwrap();
        assert_eq!(o.row_count, 1000);
        let widths: Vec<(&str, u64)> = o
            .columns
            .iter()
            .map(|c| (c.name.as_str(), c.bytes_per_value))
            .collect();
        assert_eq!(
            widths,
            vec![("o_id", 8), ("o_custkey", 8), ("o_total", 8), ("o_date", 4), ("o_comment", 40)]
        );
        let cu = c.table("customer").unwrap();
        assert_eq!(cu.row_count, 100);
        let widths: Vec<(&str, u64)> = cu
            .columns
            .iter()
            .map(|c| (c.name.as_str(), c.bytes_per_value))
            .collect();
        assert_eq!(widths, vec![("c_id", 8), ("c_name", 20), ("c_region", 4)]);
        assert_eq!(o.column("o_comment").unwrap().scan_weight, 40_000);
        assert_eq!(c.join_graph.edges.len(), 1);
        assert_eq!(c.join_graph.edges[0].left, ColumnRef::new("orders", "o_custkey"));
        assert_eq!(c.join_graph.edges[0].right, ColumnRef::new("customer", "c_id"));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_synthetic_catalog(SyntheticSpec { n_tables: 5, rows_per_table: 500, seed: 3 }).unwrap();
        let b = gen_synthetic_catalog(SyntheticSpec { n_tables: 5, rows_per_table: 500, seed: 3 }).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic_catalog(SyntheticSpec { n_tables: 5, rows_per_table: 500, seed: 4 }).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn stats_match_data() {
        let (cat, tables) =
            gen_synthetic_catalog(SyntheticSpec { n_tables: 7, rows_per_table: 300, seed: 11 }).unwrap();
        for t in &tables {
            let ts = cat.table(&t.name).unwrap();
            let widths = ts
                .columns
                .iter()
                .map(|c| (c.name.clone(), c.bytes_per_value))
                .collect();
            assert_eq!(&compute_table_stats(t, &widths), ts);
            for (c, cs) in t.columns.iter().zip(&ts.columns) {
                if c.kind == ValueKind::Text {
                    assert!(c.values.iter().all(|v| match v {
                        Value::Text(s) => s.len() as u64 == cs.bytes_per_value,
                        _ => false,
                    }));
                }
            }
        }
    }

    #[test]
    fn value_text_forms() {
        assert_eq!(Value::Decimal(1250).to_string(), "12.50");
        assert_eq!(Value::Decimal(-5).to_string(), "-0.05");
        assert_eq!(Value::Date(DAY_2020_01_01 as i32).to_string(), "2020-01-01");
        for v in [Value::Decimal(-5), Value::Decimal(100_000), Value::Date(-3), Value::Integer(-7)] {
            assert_eq!(Value::parse_literal(&v.to_string()).unwrap(), v);
        }
        assert_eq!(Value::parse(ValueKind::Decimal, "3.5").unwrap(), Value::Decimal(350));
        assert!(Value::parse(ValueKind::Decimal, "3.555").is_err());
    }

    #[test]
    fn minimal_catalog_loads() {
        let text = r#"
dataset_id = "mini"

[[tables]]
name = "t"
row_count = 10

[[columns]]
table = "t"
name = "a"
value_kind = "integer"
bytes_per_value = 4
scan_weight = 40
min_value = "1"
max_value = "10"
distinct_count = 10
"#;
        let c = parse_catalog(text).unwrap();
        assert_eq!(c.tables.len(), 1);
        assert!(c.join_graph.edges.is_empty());
    }

    #[test]
    fn dangling_edge_rejected() {
        let (c, _) = demo_dataset();
        let mut text = catalog_to_string(&c);
        text.push_str("\n[[join_edges]]\nleft = \"orders.o_id\"\nright = \"lineitem.l_orderkey\"\n");
        assert!(matches!(parse_catalog(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn bad_weight_rejected() {
        let (c, _) = demo_dataset();
        let text = catalog_to_string(&c).replace("scan_weight = 40000", "scan_weight = 39999");
        assert!(matches!(parse_catalog(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn demo_round_trips_byte_exact() {
        let (c, tables) = demo_dataset();
        let text = catalog_to_string(&c);
        let back = parse_catalog(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(catalog_to_string(&back), text);
        for t in &tables {
            let again = MaterializedTable::from_text(&t.name, &t.to_text()).unwrap();
            assert_eq!(&again, t);
        }
    }

    #[test]
    fn connected_subsets() {
        let (c, _) = demo_dataset();
        assert_eq!(
            connected_table_subsets(&c, 2),
            vec![vec!["orders".to_string(), "customer".to_string()]]
        );
        assert_eq!(connected_table_subsets(&c, 1).len(), 2);
        assert!(connected_table_subsets(&c, 3).is_empty());

        let mut disconnected = c.clone();
        disconnected.join_graph.edges.clear();
        assert!(connected_table_subsets(&disconnected, 2).is_empty());
    }

    #[test]
    fn connected_subsets_match_bfs_oracle() {
        let (c, _) = gen_synthetic_catalog(SyntheticSpec { n_tables: 7, rows_per_table: 100, seed: 1 }).unwrap();
        let n = c.tables.len();
        for k in 1..=n {
            let got = connected_table_subsets(&c, k);
            // brute force over bitmasks
            let mut expected = 0;
            for mask in 0u32..(1 << n) {
                if mask.count_ones() as usize != k {
                    continue;
                }
                let set: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
                let mut reach = vec![set[0]];
                let mut i = 0;
                while i < reach.len() {
                    let t = &c.tables[reach[i]].name;
                    for e in &c.join_graph.edges {
                        if let Some((_, o)) = e.oriented(t) {
                            let oi = c.table_index(&o.table).unwrap();
                            if set.contains(&oi) && !reach.contains(&oi) {
                                reach.push(oi);
                            }
                        }
                    }
                    i += 1;
                }
                if reach.len() == k {
                    expected += 1;
                }
            }
            assert_eq!(got.len(), expected, "k={k}");
            for s in &got {
                assert_eq!(s.len(), k);
                assert!(c.is_connected(s));
            }
        }
    }
}

#[cfg(test)]
mod props {
    use proptest::prelude::*;

    use super::*;

    fn bfs_connected(catalog: &Catalog, set: &[String]) -> bool {
        let mut seen = vec![set[0].clone()];
        let mut i = 0;
        while i < seen.len() {
            let cur = seen[i].clone();
            for e in &catalog.join_graph.edges {
                if let Some((_, other)) = e.oriented(&cur) {
                    if set.contains(&other.table) && !seen.contains(&other.table) {
                        seen.push(other.table.clone());
                    }
                }
            }
            i += 1;
        }
        seen.len() == set.len()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn connected_subsets_match_brute_force(n_tables in 1usize..=7, seed in any::<u64>(), k in 1usize..=5) {
            let (c, _) = gen_synthetic_catalog(SyntheticSpec { n_tables, rows_per_table: 20, seed }).unwrap();
            let got = connected_table_subsets(&c, k);
            let n = c.tables.len();
            let mut want = Vec::new();
            for mask in 0u32..1 << n {
                if mask.count_ones() as usize != k {
                    continue;
                }
                let set: Vec<String> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| c.tables[i].name.clone()).collect();
                if bfs_connected(&c, &set) {
                    want.push(set);
                }
            }
            want.sort();
            let mut got_sorted = got.clone();
            got_sorted.sort();
            prop_assert_eq!(got_sorted, want);
        }

        #[test]
        fn catalog_stats_equal_recomputed_stats(n_tables in 1usize..=6, rows in 1u64..400, seed in any::<u64>()) {
            let (c, tables) = gen_synthetic_catalog(SyntheticSpec { n_tables, rows_per_table: rows, seed }).unwrap();
            prop_assert!(c.validate().is_ok());
            for t in &tables {
                let declared = c.table(&t.name).unwrap();
                let widths = declared.columns.iter().map(|col| (col.name.clone(), col.bytes_per_value)).collect();
                prop_assert_eq!(&compute_table_stats(t, &widths), declared);
            }
        }
    }
}
