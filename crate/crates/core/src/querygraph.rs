//! Operator DAG intermediate representation: validation, structural counts,
//! canonical text (which doubles as the on-disk format) and hashing.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::hash::Hasher;

use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use crate::catalog::ColumnRef;
use crate::catalog::{Catalog, Value, ValueKind};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// One-sided range predicate `column <= bound`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Predicate {
    pub column: ColumnRef,
    pub bound: Value,
}

impl Predicate {
    pub fn new(column: ColumnRef, bound: Value) -> Self {
        Predicate { column, bound }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AggFunc {
    CountStar,
    Sum(ColumnRef),
}

impl fmt::Display for AggFunc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggFunc::CountStar => write!(f, "count(*)"),
            AggFunc::Sum(c) => write!(f, "sum({c})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SortDirection {
    Asc,
    Desc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExprKind {
    Arith,
    String,
    Date,
}

impl ExprKind {
    pub const ALL: [ExprKind; 3] = [ExprKind::Arith, ExprKind::String, ExprKind::Date];

    pub fn as_str(self) -> &'static str {
        match self {
            ExprKind::Arith => "arith",
            ExprKind::String => "string",
            ExprKind::Date => "date",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        ExprKind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Whether the expression can take a column of `kind` as input.
    pub fn accepts(self, kind: ValueKind) -> bool {
        match self {
            ExprKind::Arith => kind.is_numeric(),
            ExprKind::String => kind == ValueKind::Text,
            ExprKind::Date => kind == ValueKind::Date,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Scan { table: String, columns: Vec<String> },
    Filter { predicates: Vec<Predicate> },
    Join { left_key: ColumnRef, right_key: ColumnRef },
    Aggregate { group_by: Vec<ColumnRef>, funcs: Vec<AggFunc> },
    Sort { keys: Vec<ColumnRef>, direction: SortDirection },
    EvalScalar { expr: ExprKind, input: ColumnRef, repeat: u32 },
}

impl NodeKind {
    pub fn name(&self) -> &'static str {
        match self {
            NodeKind::Scan { .. } => "Scan",
            NodeKind::Filter { .. } => "Filter",
            NodeKind::Join { .. } => "Join",
            NodeKind::Aggregate { .. } => "Aggregate",
            NodeKind::Sort { .. } => "Sort",
            NodeKind::EvalScalar { .. } => "EvalScalar",
        }
    }

    /// Scan, Filter and Join make up the join core; the rest sit above it.
    pub fn is_core(&self) -> bool {
        matches!(self, NodeKind::Scan { .. } | NodeKind::Filter { .. } | NodeKind::Join { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OperatorNode {
    pub id: NodeId,
    pub kind: NodeKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryGraph {
    pub nodes: Vec<OperatorNode>,
    /// `(parent, child)` pairs; a parent's children appear in child order.
    pub edges: Vec<(NodeId, NodeId)>,
    pub root: NodeId,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct StructuralCounts {
    pub joins: u32,
    pub aggregates: u32,
    pub sorts: u32,
    pub tables: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub node: Option<NodeId>,
    pub code: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Some(n) => write!(f, "{} at {n}: {}", self.code, self.detail),
            None => write!(f, "{}: {}", self.code, self.detail),
        }
    }
}

/// Incremental graph construction with sequential ids.
#[derive(Default)]
pub struct GraphBuilder {
    nodes: Vec<OperatorNode>,
    edges: Vec<(NodeId, NodeId)>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, kind: NodeKind, children: &[NodeId]) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(OperatorNode { id, kind });
        self.edges.extend(children.iter().map(|&c| (id, c)));
        id
    }

    pub fn scan(&mut self, table: &str, columns: &[&str]) -> NodeId {
        self.add(
            NodeKind::Scan {
                table: table.to_string(),
                columns: columns.iter().map(|c| c.to_string()).collect(),
            },
            &[],
        )
    }

    pub fn finish(self, root: NodeId) -> QueryGraph {
        QueryGraph {
            nodes: self.nodes,
            edges: self.edges,
            root,
        }
    }
}

impl QueryGraph {
    pub fn node(&self, id: NodeId) -> Option<&OperatorNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn kind(&self, id: NodeId) -> &NodeKind {
        &self.node(id).expect("node id belongs to graph").kind
    }

    pub fn children(&self, id: NodeId) -> Vec<NodeId> {
        self.edges
            .iter()
            .filter(|(p, _)| *p == id)
            .map(|(_, c)| *c)
            .collect()
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.edges.iter().find(|(_, c)| *c == id).map(|(p, _)| *p)
    }

    pub fn next_id(&self) -> NodeId {
        NodeId(self.nodes.iter().map(|n| n.id.0 + 1).max().unwrap_or(0))
    }

    /// Node ids in post-order from the root (children before parents).
    pub fn post_order(&self) -> Vec<NodeId> {
        fn walk(g: &QueryGraph, id: NodeId, out: &mut Vec<NodeId>, seen: &mut HashSet<NodeId>) {
            if !seen.insert(id) {
                return;
            }
            for c in g.children(id) {
                walk(g, c, out, seen);
            }
            out.push(id);
        }
        let mut out = Vec::new();
        walk(self, self.root, &mut out, &mut HashSet::new());
        out
    }

    /// Tables scanned beneath `id`, in post-order.
    pub fn tables_under(&self, id: NodeId) -> Vec<String> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            if let NodeKind::Scan { table, .. } = self.kind(n) {
                out.push(table.clone());
            }
            let mut ch = self.children(n);
            ch.reverse();
            stack.extend(ch);
        }
        out
    }

    pub fn scans(&self) -> Vec<(NodeId, &str, &[String])> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.kind {
                NodeKind::Scan { table, columns } => Some((n.id, table.as_str(), columns.as_slice())),
                _ => None,
            })
            .collect()
    }

    pub fn scan_of(&self, table: &str) -> Option<NodeId> {
        self.scans().into_iter().find(|s| s.1 == table).map(|s| s.0)
    }

    /// Topmost Scan/Filter/Join node: descend from the root through the
    /// Aggregate/Sort/EvalScalar chain.
    pub fn core_root(&self) -> NodeId {
        let mut id = self.root;
        while !self.kind(id).is_core() {
            match self.children(id).first() {
                Some(c) => id = *c,
                None => break,
            }
        }
        id
    }

    /// Column references visible above `id`.
    pub fn output_columns(&self, id: NodeId) -> Vec<ColumnRef> {
        match self.kind(id) {
            NodeKind::Scan { table, columns } => {
                columns.iter().map(|c| ColumnRef::new(table, c)).collect()
            }
            NodeKind::Join { .. } => self
                .children(id)
                .into_iter()
                .flat_map(|c| self.output_columns(c))
                .collect(),
            NodeKind::Aggregate { group_by, .. } => group_by.clone(),
            NodeKind::Filter { .. } | NodeKind::Sort { .. } | NodeKind::EvalScalar { .. } => self
                .children(id)
                .first()
                .map(|&c| self.output_columns(c))
                .unwrap_or_default(),
        }
    }

    /// Number of values per output row, counting aggregate results and
    /// computed scalar items.
    pub fn output_width(&self, id: NodeId) -> usize {
        match self.kind(id) {
            NodeKind::Scan { columns, .. } => columns.len(),
            NodeKind::Join { .. } => self
                .children(id)
                .into_iter()
                .map(|c| self.output_width(c))
                .sum(),
            NodeKind::Aggregate { group_by, funcs } => group_by.len() + funcs.len(),
            NodeKind::EvalScalar { repeat, .. } => {
                self.children(id).first().map(|&c| self.output_width(c)).unwrap_or(0)
                    + *repeat as usize
            }
            NodeKind::Filter { .. } | NodeKind::Sort { .. } => self
                .children(id)
                .first()
                .map(|&c| self.output_width(c))
                .unwrap_or(0),
        }
    }

    /// Returns a copy whose node ids are mapped through `f`.
    pub fn relabeled(&self, f: impl Fn(NodeId) -> NodeId) -> QueryGraph {
        QueryGraph {
            nodes: self
                .nodes
                .iter()
                .map(|n| OperatorNode {
                    id: f(n.id),
                    kind: n.kind.clone(),
                })
                .collect(),
            edges: self.edges.iter().map(|&(p, c)| (f(p), f(c))).collect(),
            root: f(self.root),
        }
    }

    /// All Filter predicates, in post-order.
    pub fn predicates(&self) -> Vec<Predicate> {
        self.post_order()
            .into_iter()
            .filter_map(|id| match self.kind(id) {
                NodeKind::Filter { predicates } => Some(predicates.clone()),
                _ => None,
            })
            .flatten()
            .collect()
    }

    /// Replaces every Filter with the given predicates: existing filters are
    /// removed, then one Filter per table is placed directly above its Scan.
    /// Predicates on tables the graph does not scan are ignored.
    pub fn with_predicates(&self, preds: &[Predicate]) -> QueryGraph {
        let mut g = self.clone();
        // drop existing filters, rewiring their parent to the scan
        let filters: Vec<NodeId> = g
            .nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Filter { .. }))
            .map(|n| n.id)
            .collect();
        for f in filters {
            let child = g.children(f)[0];
            g.edges.retain(|&(p, _)| p != f);
            for e in g.edges.iter_mut() {
                if e.1 == f {
                    e.1 = child;
                }
            }
            if g.root == f {
                g.root = child;
            }
            g.nodes.retain(|n| n.id != f);
        }
        let mut by_table: BTreeMap<&str, Vec<Predicate>> = BTreeMap::new();
        for p in preds {
            by_table.entry(p.column.table.as_str()).or_default().push(p.clone());
        }
        for (table, ps) in by_table {
            let Some(scan) = g.scan_of(table) else { continue };
            let id = g.next_id();
            g.nodes.push(OperatorNode {
                id,
                kind: NodeKind::Filter { predicates: ps },
            });
            for e in g.edges.iter_mut() {
                if e.1 == scan {
                    e.1 = id;
                }
            }
            g.edges.push((id, scan));
            if g.root == scan {
                g.root = id;
            }
        }
        g
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

fn violation(node: Option<NodeId>, code: &'static str, detail: impl Into<String>) -> Violation {
    Violation {
        node,
        code,
        detail: detail.into(),
    }
}

/// Checks the graph invariants plus the shape the translator and backends
/// accept: Filters sit directly on Scans, Join inputs are core nodes, each
/// table is scanned once, and nodes above the core see unambiguous column
/// names.
pub fn validate(g: &QueryGraph, catalog: &Catalog) -> std::result::Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for n in &g.nodes {
        if !ids.insert(n.id) {
            out.push(violation(Some(n.id), "duplicate id", "node id used twice"));
        }
    }
    for &(p, c) in &g.edges {
        if !ids.contains(&p) || !ids.contains(&c) {
            out.push(violation(None, "dangling edge", format!("{p} -> {c}")));
        }
    }
    if !ids.contains(&g.root) {
        out.push(violation(None, "root", format!("root {} is not a node", g.root)));
    }
    if !out.is_empty() {
        return Err(out);
    }

    // cycle check by iterative colouring
    let mut state: HashMap<NodeId, u8> = HashMap::new();
    let mut cyclic = false;
    for n in &g.nodes {
        if state.contains_key(&n.id) {
            continue;
        }
        let mut stack = vec![(n.id, false)];
        while let Some((id, done)) = stack.pop() {
            if done {
                state.insert(id, 2);
                continue;
            }
            match state.get(&id) {
                Some(1) => {
                    cyclic = true;
                    continue;
                }
                Some(2) => continue,
                _ => {}
            }
            state.insert(id, 1);
            stack.push((id, true));
            for c in g.children(id) {
                match state.get(&c) {
                    Some(1) => cyclic = true,
                    Some(2) => {}
                    _ => stack.push((c, false)),
                }
            }
        }
    }
    if cyclic {
        out.push(violation(None, "not acyclic", "edges form a cycle"));
        return Err(out);
    }

    let mut parents: HashMap<NodeId, usize> = HashMap::new();
    for &(_, c) in &g.edges {
        *parents.entry(c).or_default() += 1;
    }
    let roots: Vec<NodeId> = g
        .nodes
        .iter()
        .filter(|n| !parents.contains_key(&n.id))
        .map(|n| n.id)
        .collect();
    if roots != [g.root] {
        out.push(violation(
            None,
            "root",
            format!("expected single root {}, found {}", g.root, roots.len()),
        ));
    }
    for (c, k) in &parents {
        if *k > 1 {
            out.push(violation(Some(*c), "shared node", "node has several parents"));
        }
    }

    for n in &g.nodes {
        let arity = g.children(n.id).len();
        let (code, ok) = match n.kind {
            NodeKind::Scan { .. } => ("scan arity", arity == 0),
            NodeKind::Join { .. } => ("join arity", arity == 2),
            _ => ("arity", arity == 1),
        };
        if !ok {
            out.push(violation(
                Some(n.id),
                code,
                format!("{} has {arity} children", n.kind.name()),
            ));
        }
    }
    if !out.is_empty() {
        return Err(out);
    }

    let mut scanned = HashSet::new();
    for n in &g.nodes {
        check_node(g, catalog, n, &mut scanned, &mut out);
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

fn check_node(
    g: &QueryGraph,
    catalog: &Catalog,
    n: &OperatorNode,
    scanned: &mut HashSet<String>,
    out: &mut Vec<Violation>,
) {
    let id = Some(n.id);
    let children = g.children(n.id);
    let column_exists = |c: &ColumnRef| catalog.column(c).is_some();
    match &n.kind {
        NodeKind::Scan { table, columns } => {
            let Some(t) = catalog.table(table) else {
                out.push(violation(id, "unknown table", table.clone()));
                return;
            };
            if !scanned.insert(table.clone()) {
                out.push(violation(id, "table scanned twice", table.clone()));
            }
            if columns.is_empty() {
                out.push(violation(id, "empty scan", table.clone()));
            }
            let mut seen = HashSet::new();
            for c in columns {
                if t.column(c).is_none() {
                    out.push(violation(id, "unknown column", format!("{table}.{c}")));
                }
                if !seen.insert(c) {
                    out.push(violation(id, "duplicate column", format!("{table}.{c}")));
                }
            }
        }
        NodeKind::Filter { predicates } => {
            let child = children[0];
            let NodeKind::Scan { table, .. } = g.kind(child) else {
                out.push(violation(id, "filter placement", "Filter input must be a Scan"));
                return;
            };
            if predicates.is_empty() {
                out.push(violation(id, "empty filter", "no predicates"));
            }
            for p in predicates {
                if &p.column.table != table {
                    out.push(violation(
                        id,
                        "unreachable column",
                        format!("{} is not from {table}", p.column),
                    ));
                    continue;
                }
                match catalog.column(&p.column) {
                    None => out.push(violation(id, "unknown column", p.column.to_string())),
                    Some(cs) if !cs.value_kind.is_rangeable() => out.push(violation(
                        id,
                        "predicate kind",
                        format!("{} is not range-comparable", p.column),
                    )),
                    Some(cs) if cs.value_kind != p.bound.kind() => out.push(violation(
                        id,
                        "predicate kind",
                        format!("literal kind does not match {}", p.column),
                    )),
                    Some(_) => {}
                }
            }
        }
        NodeKind::Join { left_key, right_key } => {
            for c in &children {
                if !g.kind(*c).is_core() {
                    out.push(violation(id, "join input", "Join inputs must be Scan, Filter or Join"));
                }
            }
            let left_tables = g.tables_under(children[0]);
            let right_tables = g.tables_under(children[1]);
            if !left_tables.contains(&left_key.table) || !right_tables.contains(&right_key.table) {
                out.push(violation(
                    id,
                    "join keys",
                    format!("{left_key} = {right_key} does not match the join inputs"),
                ));
            }
            let l = catalog.column(left_key);
            let r = catalog.column(right_key);
            match (l, r) {
                (Some(l), Some(r)) if l.value_kind != r.value_kind => out.push(violation(
                    id,
                    "join keys",
                    format!("{left_key} and {right_key} have different kinds"),
                )),
                (Some(_), Some(_)) => {}
                _ => out.push(violation(
                    id,
                    "unknown column",
                    format!("{left_key} = {right_key}"),
                )),
            }
            for key in [left_key, right_key] {
                let visible = g
                    .scans()
                    .iter()
                    .any(|(_, t, cols)| *t == key.table && cols.contains(&key.column));
                if !visible {
                    out.push(violation(
                        id,
                        "join keys",
                        format!("{key} is not selected by its Scan"),
                    ));
                }
            }
        }
        NodeKind::Aggregate { group_by, funcs } => {
            let schema = top_schema(g, children[0], n.id, out);
            for c in group_by {
                if !schema.contains(c) {
                    out.push(violation(id, "unreachable column", c.to_string()));
                }
            }
            if group_by.iter().collect::<HashSet<_>>().len() != group_by.len() {
                out.push(violation(id, "duplicate column", "repeated group key"));
            }
            if funcs.is_empty() {
                out.push(violation(id, "empty aggregate", "no aggregate functions"));
            }
            for f in funcs {
                if let AggFunc::Sum(c) = f {
                    if !schema.contains(c) {
                        out.push(violation(id, "unreachable column", c.to_string()));
                    } else if !catalog.column(c).is_some_and(|cs| cs.value_kind.is_numeric()) {
                        out.push(violation(id, "aggregate kind", format!("SUM over non-numeric {c}")));
                    }
                }
            }
        }
        NodeKind::Sort { keys, .. } => {
            let schema = top_schema(g, children[0], n.id, out);
            if keys.is_empty() {
                out.push(violation(id, "empty sort", "no sort keys"));
            }
            for c in keys {
                if !schema.contains(c) {
                    out.push(violation(id, "unreachable column", c.to_string()));
                }
            }
            if keys.iter().collect::<HashSet<_>>().len() != keys.len() {
                out.push(violation(id, "duplicate column", "repeated sort key"));
            }
        }
        NodeKind::EvalScalar { expr, input, repeat } => {
            let schema = top_schema(g, children[0], n.id, out);
            if !schema.contains(input) {
                out.push(violation(id, "unreachable column", input.to_string()));
            } else if !catalog.column(input).is_some_and(|cs| expr.accepts(cs.value_kind)) {
                out.push(violation(
                    id,
                    "expression kind",
                    format!("{} cannot take {input}", expr.as_str()),
                ));
            }
            if *repeat < 1 {
                out.push(violation(id, "repeat", "repeat_count must be ≥ 1"));
            }
        }
    }
    if !n.kind.is_core() {
        return;
    }
    // nothing above the core may feed back into it
    for c in children {
        if !g.kind(c).is_core() {
            out.push(violation(id, "core shape", "core operator above a non-core node"));
        }
    }
    if let Some(col) = n.kind_column_refs().into_iter().find(|c| !column_exists(c)) {
        out.push(violation(id, "unknown column", col.to_string()));
    }
}

/// Child schema for a node above the core; bare column names must be
/// unique there since the translator refers to them unqualified.
fn top_schema(g: &QueryGraph, child: NodeId, at: NodeId, out: &mut Vec<Violation>) -> Vec<ColumnRef> {
    let schema = g.output_columns(child);
    let mut names = HashSet::new();
    for c in &schema {
        if !names.insert(c.column.as_str()) {
            out.push(violation(
                Some(at),
                "ambiguous column",
                format!("`{}` appears more than once below", c.column),
            ));
        }
    }
    schema
}

impl OperatorNode {
    fn kind_column_refs(&self) -> Vec<ColumnRef> {
        match &self.kind {
            NodeKind::Join { left_key, right_key } => vec![left_key.clone(), right_key.clone()],
            _ => Vec::new(),
        }
    }
}

pub fn validate_result(g: &QueryGraph, catalog: &Catalog) -> Result<()> {
    validate(g, catalog).map_err(Error::InvalidGraph)
}

pub fn structural_counts(g: &QueryGraph) -> StructuralCounts {
    let mut c = StructuralCounts::default();
    for n in &g.nodes {
        match n.kind {
            NodeKind::Scan { .. } => c.tables += 1,
            NodeKind::Join { .. } => c.joins += 1,
            NodeKind::Aggregate { .. } => c.aggregates += 1,
            NodeKind::Sort { .. } => c.sorts += 1,
            _ => {}
        }
    }
    c
}

// ---------------------------------------------------------------------------
// Canonical form
// ---------------------------------------------------------------------------

fn join_list<T: fmt::Display>(items: &[T], sep: &str) -> String {
    items.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(sep)
}

fn pred_text(p: &Predicate, parameterized: bool) -> String {
    if parameterized {
        format!("{}<=?", p.column)
    } else {
        format!("{}<={}", p.column, p.bound)
    }
}

/// Attribute text of one node. Join keys are oriented to the given child
/// order so the text does not depend on the original left/right choice.
fn attr_text(g: &QueryGraph, id: NodeId, ordered_children: &[NodeId], parameterized: bool) -> String {
    match g.kind(id) {
        NodeKind::Scan { table, columns } => {
            let mut cols = columns.clone();
            cols.sort();
            format!("table={table} cols={}", cols.join(","))
        }
        NodeKind::Filter { predicates } => {
            let mut ps = predicates.clone();
            ps.sort();
            let texts: Vec<String> = ps.iter().map(|p| pred_text(p, parameterized)).collect();
            format!("preds={}", texts.join(";"))
        }
        NodeKind::Join { left_key, right_key } => {
            let first = g.tables_under(ordered_children[0]);
            let (l, r) = if first.contains(&left_key.table) {
                (left_key, right_key)
            } else {
                (right_key, left_key)
            };
            format!("left={l} right={r}")
        }
        NodeKind::Aggregate { group_by, funcs } => {
            let mut gb = group_by.clone();
            gb.sort();
            let mut fs: Vec<String> = funcs.iter().map(|f| f.to_string()).collect();
            fs.sort();
            format!("group={} aggs={}", join_list(&gb, ","), fs.join(","))
        }
        NodeKind::Sort { keys, direction } => {
            let dir = match direction {
                SortDirection::Asc => "asc",
                SortDirection::Desc => "desc",
            };
            format!("keys={} dir={dir}", join_list(keys, ","))
        }
        NodeKind::EvalScalar { expr, input, repeat } => {
            format!("expr={} input={input} repeat={repeat}", expr.as_str())
        }
    }
}

/// Id-free subtree text used to order Join inputs.
fn signature(g: &QueryGraph, id: NodeId, parameterized: bool) -> String {
    let children = canonical_children(g, id);
    let mut s = format!("{}[{}]", g.kind(id).name(), attr_text(g, id, &children, parameterized));
    for c in children {
        s.push('(');
        s.push_str(&signature(g, c, parameterized));
        s.push(')');
    }
    s
}

/// Children in canonical order: Join inputs sorted by (literal-free
/// signature, exact signature), everything else as stored.
fn canonical_children(g: &QueryGraph, id: NodeId) -> Vec<NodeId> {
    let mut ch = g.children(id);
    if matches!(g.kind(id), NodeKind::Join { .. }) && ch.len() == 2 {
        let key = |c: NodeId| (signature(g, c, true), signature(g, c, false));
        if key(ch[1]) < key(ch[0]) {
            ch.swap(0, 1);
        }
    }
    ch
}

/// Maps each node id to its canonical (post-order) id.
pub fn canonical_ids(g: &QueryGraph) -> HashMap<NodeId, NodeId> {
    fn walk(g: &QueryGraph, id: NodeId, map: &mut HashMap<NodeId, NodeId>) {
        for c in canonical_children(g, id) {
            walk(g, c, map);
        }
        let next = NodeId(map.len() as u32);
        map.insert(id, next);
    }
    let mut map = HashMap::new();
    walk(g, g.root, &mut map);
    map
}

/// Deterministic text form. Nodes are listed in post-order with canonical
/// ids `n0, n1, ...`; graphs equal up to id renaming and Join input order
/// print identically. With `parameterized`, Filter literals become `?`.
pub fn canonical_form(g: &QueryGraph, parameterized: bool) -> String {
    let ids = canonical_ids(g);
    let mut order: Vec<(NodeId, NodeId)> = ids.iter().map(|(&orig, &canon)| (canon, orig)).collect();
    order.sort();
    let mut out = String::new();
    let mut edges = Vec::new();
    for (canon, orig) in &order {
        let children = canonical_children(g, *orig);
        out.push_str(&format!(
            "{canon} {} {}\n",
            g.kind(*orig).name(),
            attr_text(g, *orig, &children, parameterized)
        ));
        for c in children {
            edges.push(format!("{canon} -> {}\n", ids[&c]));
        }
    }
    out.push_str("edges\n");
    for e in edges {
        out.push_str(&e);
    }
    out.push_str(&format!("root {}\n", ids[&g.root]));
    out
}

/// Stable FNV-1a 64 over the canonical text.
pub fn graph_hash(g: &QueryGraph, parameterized: bool) -> u64 {
    let mut h = FnvHasher::default();
    h.write(canonical_form(g, parameterized).as_bytes());
    h.finish()
}

pub fn format_hash(h: u64) -> String {
    format!("{h:016x}")
}

fn parse_node_id(s: &str) -> Result<NodeId> {
    s.strip_prefix('n')
        .and_then(|n| n.parse().ok())
        .map(NodeId)
        .ok_or_else(|| Error::Parse(format!("bad node id `{s}`")))
}

fn parse_column_list(s: &str) -> Result<Vec<ColumnRef>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(ColumnRef::parse).collect()
}

fn parse_kind(name: &str, attrs: &HashMap<&str, &str>) -> Result<NodeKind> {
    let get = |k: &str| {
        attrs
            .get(k)
            .copied()
            .ok_or_else(|| Error::Parse(format!("{name} node missing `{k}`")))
    };
    Ok(match name {
        "Scan" => NodeKind::Scan {
            table: get("table")?.to_string(),
            columns: get("cols")?.split(',').map(str::to_string).collect(),
        },
        "Filter" => NodeKind::Filter {
            predicates: get("preds")?
                .split(';')
                .map(|p| {
                    let (c, lit) = p
                        .split_once("<=")
                        .ok_or_else(|| Error::Parse(format!("bad predicate `{p}`")))?;
                    if lit == "?" {
                        return Err(Error::Parse("parameterized form has no literals".into()));
                    }
                    Ok(Predicate::new(ColumnRef::parse(c)?, Value::parse_literal(lit)?))
                })
                .collect::<Result<_>>()?,
        },
        "Join" => NodeKind::Join {
            left_key: ColumnRef::parse(get("left")?)?,
            right_key: ColumnRef::parse(get("right")?)?,
        },
        "Aggregate" => NodeKind::Aggregate {
            group_by: parse_column_list(get("group")?)?,
            funcs: get("aggs")?
                .split(',')
                .map(|f| {
                    if f == "count(*)" {
                        Ok(AggFunc::CountStar)
                    } else if let Some(c) = f.strip_prefix("sum(").and_then(|r| r.strip_suffix(')')) {
                        Ok(AggFunc::Sum(ColumnRef::parse(c)?))
                    } else {
                        Err(Error::Parse(format!("bad aggregate `{f}`")))
                    }
                })
                .collect::<Result<_>>()?,
        },
        "Sort" => NodeKind::Sort {
            keys: parse_column_list(get("keys")?)?,
            direction: match get("dir")? {
                "asc" => SortDirection::Asc,
                "desc" => SortDirection::Desc,
                d => return Err(Error::Parse(format!("bad sort direction `{d}`"))),
            },
        },
        "EvalScalar" => NodeKind::EvalScalar {
            expr: ExprKind::parse(get("expr")?)
                .ok_or_else(|| Error::Parse("bad expression kind".into()))?,
            input: ColumnRef::parse(get("input")?)?,
            repeat: get("repeat")?
                .parse()
                .map_err(|_| Error::Parse("bad repeat count".into()))?,
        },
        other => return Err(Error::Parse(format!("unknown node kind `{other}`"))),
    })
}

/// Parses the exact canonical form back into a graph.
pub fn parse_canonical(text: &str) -> Result<QueryGraph> {
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut root = None;
    let mut in_edges = false;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if line == "edges" {
            in_edges = true;
        } else if let Some(r) = line.strip_prefix("root ") {
            root = Some(parse_node_id(r.trim())?);
        } else if in_edges {
            let (p, c) = line
                .split_once(" -> ")
                .ok_or_else(|| Error::Parse(format!("bad edge `{line}`")))?;
            edges.push((parse_node_id(p)?, parse_node_id(c)?));
        } else {
            let mut parts = line.split(' ');
            let id = parse_node_id(parts.next().unwrap_or(""))?;
            let name = parts
                .next()
                .ok_or_else(|| Error::Parse(format!("node line `{line}` has no kind")))?;
            let attrs: HashMap<&str, &str> = parts
                .map(|kv| kv.split_once('=').unwrap_or((kv, "")))
                .collect();
            nodes.push(OperatorNode {
                id,
                kind: parse_kind(name, &attrs)?,
            });
        }
    }
    Ok(QueryGraph {
        nodes,
        edges,
        root: root.ok_or_else(|| Error::Parse("missing root line".into()))?,
    })
}

// ---------------------------------------------------------------------------
// Random sampling
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleBounds {
    pub max_joins: u32,
    pub max_aggs: u32,
    pub max_sorts: u32,
    /// Upper bound on EvalScalar nodes (0 or 1 in practice).
    pub max_evals: u32,
}

impl Default for SampleBounds {
    fn default() -> Self {
        SampleBounds {
            max_joins: 2,
            max_aggs: 2,
            max_sorts: 1,
            max_evals: 1,
        }
    }
}

/// Random valid graph: per-table Scan (+Filter) under a join tree grown along
/// schema edges, then optional EvalScalar, nested Aggregates and Sorts.
pub fn sample_random_graph(catalog: &Catalog, bounds: SampleBounds, seed: u64) -> QueryGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with_rng(catalog, bounds, &mut rng)
}

pub fn sample_with_rng(catalog: &Catalog, bounds: SampleBounds, rng: &mut impl Rng) -> QueryGraph {
    let want_joins = rng.gen_range(0..=bounds.max_joins) as usize;
    let start = rng.gen_range(0..catalog.tables.len());
    let mut tables = vec![catalog.tables[start].name.clone()];
    // (table already in the set, key there, new table, key on new table)
    let mut links: Vec<(ColumnRef, ColumnRef)> = Vec::new();
    while links.len() < want_joins {
        let frontier: Vec<(ColumnRef, ColumnRef)> = catalog
            .join_graph
            .edges
            .iter()
            .filter_map(|e| {
                let l_in = tables.contains(&e.left.table);
                let r_in = tables.contains(&e.right.table);
                match (l_in, r_in) {
                    (true, false) => Some((e.left.clone(), e.right.clone())),
                    (false, true) => Some((e.right.clone(), e.left.clone())),
                    _ => None,
                }
            })
            .collect();
        let Some(link) = frontier.choose(rng).cloned() else { break };
        tables.push(link.1.table.clone());
        links.push(link);
    }

    let mut b = GraphBuilder::new();
    let mut subtree: HashMap<String, NodeId> = HashMap::new();
    for t in &tables {
        let ts = catalog.table(t).expect("sampled table exists");
        let mut cols: BTreeSet<String> = BTreeSet::new();
        for (a, c) in &links {
            for k in [a, c] {
                if &k.table == t {
                    cols.insert(k.column.clone());
                }
            }
        }
        for c in &ts.columns {
            if rng.gen_bool(0.5) {
                cols.insert(c.name.clone());
            }
        }
        if cols.is_empty() {
            cols.insert(ts.columns.choose(rng).expect("tables have columns").name.clone());
        }
        let cols: Vec<String> = cols.into_iter().collect();
        let scan = b.add(
            NodeKind::Scan {
                table: t.clone(),
                columns: cols.clone(),
            },
            &[],
        );
        let rangeable: Vec<&str> = cols
            .iter()
            .filter(|c| {
                ts.column(c)
                    .is_some_and(|cs| cs.value_kind.is_rangeable() && cs.ordinal_range().is_some())
            })
            .map(String::as_str)
            .collect();
        let mut node = scan;
        if !rangeable.is_empty() && rng.gen_bool(0.7) {
            let n_preds = rng.gen_range(1..=rangeable.len().min(2));
            let mut picked: Vec<&str> = rangeable.choose_multiple(rng, n_preds).copied().collect();
            picked.sort();
            let predicates = picked
                .into_iter()
                .map(|c| {
                    let cs = ts.column(c).expect("column exists");
                    let (lo, hi) = cs.ordinal_range().expect("rangeable");
                    let v = rng.gen_range(lo..=hi);
                    Predicate::new(
                        ColumnRef::new(t, c),
                        Value::from_ordinal(cs.value_kind, v).expect("non-text"),
                    )
                })
                .collect();
            node = b.add(NodeKind::Filter { predicates }, &[scan]);
        }
        subtree.insert(t.clone(), node);
    }

    let mut core = subtree[&tables[0]];
    for (inside, new) in &links {
        core = b.add(
            NodeKind::Join {
                left_key: inside.clone(),
                right_key: new.clone(),
            },
            &[core, subtree[&new.table]],
        );
    }

    let mut top = core;
    let schema: Vec<ColumnRef> = tables
        .iter()
        .flat_map(|t| {
            let scan_cols = b
                .nodes
                .iter()
                .find_map(|n| match &n.kind {
                    NodeKind::Scan { table, columns } if table == t => Some(columns.clone()),
                    _ => None,
                })
                .unwrap_or_default();
            scan_cols.into_iter().map(move |c| ColumnRef::new(t, c))
        })
        .collect();
    let names: HashSet<&str> = schema.iter().map(|c| c.column.as_str()).collect();
    if names.len() != schema.len() {
        // ambiguous bare names: keep the core only
        return b.finish(core);
    }
    let kind_of = |c: &ColumnRef| catalog.column(c).expect("schema column exists").value_kind;

    if bounds.max_evals > 0 && rng.gen_bool(0.3) {
        let expr = *ExprKind::ALL.choose(rng).expect("nonempty");
        let inputs: Vec<&ColumnRef> = schema.iter().filter(|c| expr.accepts(kind_of(c))).collect();
        if let Some(input) = inputs.choose(rng) {
            top = b.add(
                NodeKind::EvalScalar {
                    expr,
                    input: (*input).clone(),
                    repeat: rng.gen_range(1..=4),
                },
                &[top],
            );
        }
    }

    let n_aggs = rng.gen_range(0..=bounds.max_aggs);
    let mut visible = schema.clone();
    for _ in 0..n_aggs {
        let n_keys = rng.gen_range(1..=visible.len().min(2));
        let mut group_by: Vec<ColumnRef> = visible.choose_multiple(rng, n_keys).cloned().collect();
        group_by.sort();
        let mut funcs = vec![AggFunc::CountStar];
        let numeric: Vec<&ColumnRef> = visible.iter().filter(|c| kind_of(c).is_numeric()).collect();
        if let Some(c) = numeric.choose(rng) {
            if rng.gen_bool(0.7) {
                funcs.push(AggFunc::Sum((*c).clone()));
            }
        }
        top = b.add(NodeKind::Aggregate { group_by: group_by.clone(), funcs }, &[top]);
        visible = group_by;
    }

    let n_sorts = rng.gen_range(0..=bounds.max_sorts);
    for _ in 0..n_sorts {
        let n_keys = rng.gen_range(1..=visible.len().min(2));
        let keys: Vec<ColumnRef> = visible.choose_multiple(rng, n_keys).cloned().collect();
        let direction = if rng.gen_bool(0.5) {
            SortDirection::Asc
        } else {
            SortDirection::Desc
        };
        top = b.add(NodeKind::Sort { keys, direction }, &[top]);
    }
    b.finish(top)
}
