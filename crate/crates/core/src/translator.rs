//! Rule-based query graph to SQL translation, and the inverse parser for
//! the emitted subset.
//!
//! The join core becomes one `SELECT ... FROM a INNER JOIN b ON ... WHERE`
//! block (columns qualified when several tables are joined). Nodes above the
//! core are applied bottom-up: an Aggregate always wraps its input as a
//! derived table, a Sort adds `ORDER BY` unless the block already has one,
//! and EvalScalar items join the select list unless the block is grouped or
//! ordered.

use std::collections::BTreeMap;

use sqlparser::ast::{
    self, BinaryOperator, DateTimeField, Expr, FunctionArg, FunctionArgExpr, FunctionArguments, GroupByExpr,
    JoinConstraint, JoinOperator, SelectItem, SetExpr, Statement, TableFactor, TableWithJoins, UnaryOperator,
};
use sqlparser::dialect::GenericDialect;
use sqlparser::parser::Parser;

use crate::catalog::{Value, ValueKind};
use crate::error::{Error, Result};
use crate::querygraph::{
    AggFunc, ColumnRef, ExprKind, NodeId, NodeKind, OperatorNode, Predicate, QueryGraph, SortDirection,
};

struct Block {
    star: bool,
    items: Vec<String>,
    from: String,
    filters: Vec<String>,
    group_by: Vec<String>,
    order_by: Option<String>,
}

impl Block {
    fn render(&self) -> String {
        let mut items = Vec::new();
        if self.star {
            items.push("*".to_string());
        }
        items.extend(self.items.iter().cloned());
        let mut s = format!("SELECT {} FROM {}", items.join(", "), self.from);
        if !self.filters.is_empty() {
            s.push_str(&format!(" WHERE {}", self.filters.join(" AND ")));
        }
        if !self.group_by.is_empty() {
            s.push_str(&format!(" GROUP BY {}", self.group_by.join(", ")));
        }
        if let Some(o) = &self.order_by {
            s.push_str(&format!(" ORDER BY {o}"));
        }
        s
    }

    fn wrap(self, alias: usize) -> Block {
        Block {
            star: true,
            items: Vec::new(),
            from: format!("({}) AS t{alias}", self.render()),
            filters: Vec::new(),
            group_by: Vec::new(),
            order_by: None,
        }
    }
}

fn literal(v: &Value) -> String {
    match v {
        Value::Date(_) | Value::Text(_) => format!("'{v}'"),
        _ => v.to_string(),
    }
}

fn expr_sql(kind: ExprKind, col: &str) -> String {
    match kind {
        ExprKind::Arith => format!("({col} * 1.0001 + 1)"),
        ExprKind::String => format!("UPPER({col})"),
        ExprKind::Date => format!("EXTRACT(DAY FROM {col})"),
    }
}

fn from_core(g: &QueryGraph, id: NodeId, col: &dyn Fn(&ColumnRef) -> String, filters: &mut Vec<String>) -> String {
    match g.kind(id) {
        NodeKind::Scan { table, .. } => table.clone(),
        NodeKind::Filter { predicates } => {
            filters.extend(predicates.iter().map(|p| format!("{} <= {}", col(&p.column), literal(&p.bound))));
            from_core(g, g.children(id)[0], col, filters)
        }
        NodeKind::Join { left_key, right_key } => {
            let ch = g.children(id);
            let left = from_core(g, ch[0], col, filters);
            let mut right = from_core(g, ch[1], col, filters);
            if matches!(g.kind(ch[1]), NodeKind::Join { .. }) {
                right = format!("({right})");
            }
            let (l, r) = if g.tables_under(ch[0]).contains(&left_key.table) {
                (left_key, right_key)
            } else {
                (right_key, left_key)
            };
            format!("{left} INNER JOIN {right} ON {} = {}", col(l), col(r))
        }
        _ => unreachable!("core nodes only"),
    }
}

/// Emits single-line SQL for a valid graph.
pub fn to_sql(g: &QueryGraph) -> Result<String> {
    let core = g.core_root();
    let qualified = g.tables_under(core).len() > 1;
    let qual = |c: &ColumnRef| {
        if qualified {
            c.to_string()
        } else {
            c.column.clone()
        }
    };
    let bare = |c: &ColumnRef| c.column.clone();

    let mut filters = Vec::new();
    let from = from_core(g, core, &qual, &mut filters);
    let mut block = Block {
        star: false,
        items: g.output_columns(core).iter().map(qual).collect(),
        from,
        filters,
        group_by: Vec::new(),
        order_by: None,
    };
    let mut in_core = true;

    let mut chain = Vec::new();
    let mut id = g.root;
    while id != core {
        chain.push(id);
        id = *g
            .children(id)
            .first()
            .ok_or_else(|| Error::Validation(format!("{} above the core has no input", g.kind(id).name())))?;
    }
    chain.reverse();

    let (mut wraps, mut evals, mut aggs) = (0, 0, 0);
    for id in chain {
        let name: &dyn Fn(&ColumnRef) -> String = if in_core { &qual } else { &bare };
        match g.kind(id) {
            NodeKind::EvalScalar { expr, input, repeat } => {
                if !block.group_by.is_empty() || block.order_by.is_some() {
                    wraps += 1;
                    block = block.wrap(wraps);
                    in_core = false;
                }
                evals += 1;
                let col = if in_core { qual(input) } else { bare(input) };
                let text = expr_sql(*expr, &col);
                block
                    .items
                    .extend((1..=*repeat).map(|i| format!("{text} AS e{evals}_{i}")));
            }
            NodeKind::Aggregate { group_by, funcs } => {
                wraps += 1;
                block = block.wrap(wraps);
                in_core = false;
                aggs += 1;
                block.star = false;
                block.items = group_by.iter().map(bare).collect();
                for (i, f) in funcs.iter().enumerate() {
                    let call = match f {
                        AggFunc::CountStar => "COUNT(*)".to_string(),
                        AggFunc::Sum(c) => format!("SUM({})", c.column),
                    };
                    block.items.push(format!("{call} AS a{aggs}_{}", i + 1));
                }
                block.group_by = group_by.iter().map(bare).collect();
            }
            NodeKind::Sort { keys, direction } => {
                if block.order_by.is_some() {
                    wraps += 1;
                    block = block.wrap(wraps);
                    in_core = false;
                }
                let dir = match direction {
                    SortDirection::Asc => "ASC",
                    SortDirection::Desc => "DESC",
                };
                let name: &dyn Fn(&ColumnRef) -> String = if in_core { name } else { &bare };
                let keys: Vec<String> = keys.iter().map(|k| format!("{} {dir}", name(k))).collect();
                block.order_by = Some(keys.join(", "));
            }
            other => {
                return Err(Error::Validation(format!("{} above the join core", other.name())));
            }
        }
    }
    Ok(block.render())
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

fn unsupported(what: impl Into<String>) -> Error {
    Error::OutOfSubset(what.into())
}

struct Builder {
    g: QueryGraph,
}

impl Builder {
    fn add(&mut self, kind: NodeKind, children: &[NodeId]) -> NodeId {
        let id = NodeId(self.g.nodes.len() as u32);
        self.g.nodes.push(OperatorNode { id, kind });
        self.g.edges.extend(children.iter().map(|&c| (id, c)));
        id
    }
}

fn column_of(e: &Expr) -> Option<(Option<String>, String)> {
    match e {
        Expr::Identifier(i) => Some((None, i.value.clone())),
        Expr::CompoundIdentifier(p) if p.len() == 2 => Some((Some(p[0].value.clone()), p[1].value.clone())),
        Expr::Nested(inner) => column_of(inner),
        _ => None,
    }
}

fn literal_of(e: &Expr) -> Result<Value> {
    match e {
        Expr::Value(ast::Value::Number(n, _)) => Value::parse_literal(n),
        Expr::Value(ast::Value::SingleQuotedString(s)) => Value::parse(ValueKind::Date, s),
        Expr::UnaryOp {
            op: UnaryOperator::Minus,
            expr,
        } => match expr.as_ref() {
            Expr::Value(ast::Value::Number(n, _)) => Value::parse_literal(&format!("-{n}")),
            _ => Err(unsupported(format!("literal `{e}`"))),
        },
        _ => Err(unsupported(format!("literal `{e}`"))),
    }
}

fn is_number(e: &Expr, text: &str) -> bool {
    matches!(e, Expr::Value(ast::Value::Number(n, _)) if n == text)
}

fn single_arg(f: &ast::Function) -> Option<&FunctionArgExpr> {
    if f.over.is_some() || f.filter.is_some() || !f.within_group.is_empty() {
        return None;
    }
    match &f.args {
        FunctionArguments::List(list) if list.args.len() == 1 && list.duplicate_treatment.is_none() => {
            match &list.args[0] {
                FunctionArg::Unnamed(a) => Some(a),
                _ => None,
            }
        }
        _ => None,
    }
}

fn function_name(f: &ast::Function) -> String {
    f.name.to_string().to_ascii_uppercase()
}

/// Recognizes the three scalar expression shapes `to_sql` emits.
fn eval_of(e: &Expr) -> Option<(ExprKind, Option<String>, String)> {
    match e {
        Expr::Nested(inner) => match inner.as_ref() {
            Expr::BinaryOp {
                left,
                op: BinaryOperator::Plus,
                right,
            } if is_number(right, "1") => match left.as_ref() {
                Expr::BinaryOp {
                    left: col,
                    op: BinaryOperator::Multiply,
                    right: factor,
                } if is_number(factor, "1.0001") => {
                    let (t, c) = column_of(col)?;
                    Some((ExprKind::Arith, t, c))
                }
                _ => None,
            },
            _ => None,
        },
        Expr::Function(f) if function_name(f) == "UPPER" => match single_arg(f)? {
            FunctionArgExpr::Expr(a) => {
                let (t, c) = column_of(a)?;
                Some((ExprKind::String, t, c))
            }
            _ => None,
        },
        Expr::Extract {
            field: DateTimeField::Day,
            expr,
            ..
        } => {
            let (t, c) = column_of(expr)?;
            Some((ExprKind::Date, t, c))
        }
        _ => None,
    }
}

/// Column resolution scope of one block.
enum Scope {
    /// Join core over base tables; `single` is the table when only one.
    Core { tables: Vec<String> },
    /// Derived input: bare names resolve against the child's output.
    Derived { columns: Vec<ColumnRef> },
}

impl Scope {
    fn resolve(&self, table: Option<String>, column: String) -> Result<ColumnRef> {
        match (self, table) {
            (Scope::Core { tables }, Some(t)) if tables.contains(&t) => Ok(ColumnRef::new(t, column)),
            (Scope::Core { tables }, None) if tables.len() == 1 => Ok(ColumnRef::new(tables[0].clone(), column)),
            (Scope::Derived { columns }, None) => {
                let mut hits = columns.iter().filter(|c| c.column == column);
                match (hits.next(), hits.next()) {
                    (Some(c), None) => Ok(c.clone()),
                    _ => Err(unsupported(format!("cannot resolve column `{column}`"))),
                }
            }
            (_, t) => Err(unsupported(format!(
                "cannot resolve column `{}{column}`",
                t.map(|t| format!("{t}.")).unwrap_or_default()
            ))),
        }
    }
}

fn conjuncts(e: &Expr, out: &mut Vec<Expr>) {
    match e {
        Expr::BinaryOp {
            left,
            op: BinaryOperator::And,
            right,
        } => {
            conjuncts(left, out);
            conjuncts(right, out);
        }
        Expr::Nested(inner) => conjuncts(inner, out),
        other => out.push(other.clone()),
    }
}

/// Join tree of base tables: returns the scan-or-join node, recording
/// each scan by table.
fn parse_factor_tree(
    b: &mut Builder,
    twj: &TableWithJoins,
    scans: &mut BTreeMap<String, NodeId>,
    joins: &mut Vec<(NodeId, Expr)>,
) -> Result<NodeId> {
    let mut left = parse_factor(b, &twj.relation, scans, joins)?;
    for j in &twj.joins {
        let JoinOperator::Inner(JoinConstraint::On(on)) = &j.join_operator else {
            return Err(unsupported("only INNER JOIN ... ON is supported"));
        };
        let right = parse_factor(b, &j.relation, scans, joins)?;
        // keys are attached once the scans exist
        let id = b.add(
            NodeKind::Join {
                left_key: ColumnRef::new("", ""),
                right_key: ColumnRef::new("", ""),
            },
            &[left, right],
        );
        joins.push((id, on.clone()));
        left = id;
    }
    Ok(left)
}

fn parse_factor(
    b: &mut Builder,
    f: &TableFactor,
    scans: &mut BTreeMap<String, NodeId>,
    joins: &mut Vec<(NodeId, Expr)>,
) -> Result<NodeId> {
    match f {
        TableFactor::Table {
            name,
            alias: None,
            args: None,
            ..
        } => {
            let table = name.to_string();
            if scans.contains_key(&table) {
                return Err(unsupported(format!("table `{table}` referenced twice")));
            }
            let id = b.add(
                NodeKind::Scan {
                    table: table.clone(),
                    columns: Vec::new(),
                },
                &[],
            );
            scans.insert(table, id);
            Ok(id)
        }
        TableFactor::NestedJoin {
            table_with_joins,
            alias: None,
        } => parse_factor_tree(b, table_with_joins, scans, joins),
        other => Err(unsupported(format!("table factor `{other}`"))),
    }
}

fn set_node_kind(b: &mut Builder, id: NodeId, kind: NodeKind) {
    b.g.nodes[id.0 as usize].kind = kind;
}

fn parse_core(b: &mut Builder, select: &ast::Select) -> Result<(NodeId, Scope, Vec<SelectItem>)> {
    let mut scans = BTreeMap::new();
    let mut joins = Vec::new();
    let mut top = parse_factor_tree(b, &select.from[0], &mut scans, &mut joins)?;
    let scope = Scope::Core {
        tables: scans.keys().cloned().collect(),
    };

    for (id, on) in joins {
        let Expr::BinaryOp {
            left,
            op: BinaryOperator::Eq,
            right,
        } = &on
        else {
            return Err(unsupported(format!("join condition `{on}`")));
        };
        let key = |e: &Expr| -> Result<ColumnRef> {
            let (t, c) = column_of(e).ok_or_else(|| unsupported(format!("join key `{e}`")))?;
            scope.resolve(t, c)
        };
        let (l, r) = (key(left)?, key(right)?);
        set_node_kind(
            b,
            id,
            NodeKind::Join {
                left_key: l,
                right_key: r,
            },
        );
    }

    // plain columns go to their Scan; anything after them is left to the caller
    let mut rest = Vec::new();
    for item in &select.projection {
        let plain = match item {
            SelectItem::UnnamedExpr(e) if rest.is_empty() => column_of(e),
            _ => None,
        };
        match plain {
            Some((t, c)) => {
                let col = scope.resolve(t, c)?;
                let scan = scans[&col.table];
                if let NodeKind::Scan { columns, .. } = &mut b.g.nodes[scan.0 as usize].kind {
                    if columns.contains(&col.column) {
                        return Err(unsupported(format!("column {col} selected twice")));
                    }
                    columns.push(col.column);
                }
            }
            None => rest.push(item.clone()),
        }
    }

    if let Some(w) = &select.selection {
        let mut parts = Vec::new();
        conjuncts(w, &mut parts);
        let mut by_table: BTreeMap<String, Vec<Predicate>> = BTreeMap::new();
        for p in parts {
            let Expr::BinaryOp {
                left,
                op: BinaryOperator::LtEq,
                right,
            } = &p
            else {
                return Err(unsupported(format!("predicate `{p}`")));
            };
            let (t, c) = column_of(left).ok_or_else(|| unsupported(format!("predicate `{p}`")))?;
            let col = scope.resolve(t, c)?;
            by_table
                .entry(col.table.clone())
                .or_default()
                .push(Predicate::new(col, literal_of(right)?));
        }
        for (table, preds) in by_table {
            let scan = scans[&table];
            let f = b.add(NodeKind::Filter { predicates: preds }, &[scan]);
            // rewire the scan's parent (if any) to the filter
            let n = b.g.edges.len() - 1;
            for (i, e) in b.g.edges.iter_mut().enumerate() {
                if i != n && e.1 == scan {
                    e.1 = f;
                }
            }
            if top == scan {
                top = f;
            }
        }
    }
    Ok((top, scope, rest))
}

fn eval_nodes(b: &mut Builder, mut top: NodeId, scope: &Scope, items: &[SelectItem]) -> Result<NodeId> {
    let mut current: Option<(String, ExprKind, ColumnRef, u32)> = None;
    let flush = |b: &mut Builder, top: &mut NodeId, cur: Option<(String, ExprKind, ColumnRef, u32)>| {
        if let Some((_, expr, input, repeat)) = cur {
            *top = b.add(NodeKind::EvalScalar { expr, input, repeat }, &[*top]);
        }
    };
    for item in items {
        let SelectItem::ExprWithAlias { expr, alias } = item else {
            return Err(unsupported(format!("select item `{item}`")));
        };
        let group = alias
            .value
            .strip_prefix('e')
            .and_then(|r| r.split_once('_'))
            .map(|(n, _)| n.to_string())
            .ok_or_else(|| unsupported(format!("select item `{item}`")))?;
        let (kind, t, c) = eval_of(expr).ok_or_else(|| unsupported(format!("expression `{expr}`")))?;
        let col = scope.resolve(t, c)?;
        match &mut current {
            Some((g, k, i, r)) if *g == group => {
                if *k != kind || *i != col {
                    return Err(unsupported(format!("mixed items under alias group e{group}")));
                }
                *r += 1;
            }
            _ => {
                flush(b, &mut top, current.take());
                current = Some((group, kind, col, 1));
            }
        }
    }
    flush(b, &mut top, current);
    Ok(top)
}

fn parse_query(b: &mut Builder, q: &ast::Query) -> Result<NodeId> {
    if q.with.is_some()
        || q.limit.is_some()
        || !q.limit_by.is_empty()
        || q.offset.is_some()
        || q.fetch.is_some()
        || !q.locks.is_empty()
    {
        return Err(unsupported("only plain SELECT blocks are supported"));
    }
    let SetExpr::Select(select) = q.body.as_ref() else {
        return Err(unsupported("set operations are not supported"));
    };
    if select.distinct.is_some()
        || select.having.is_some()
        || select.top.is_some()
        || select.qualify.is_some()
        || !select.named_window.is_empty()
        || select.from.len() != 1
    {
        return Err(unsupported("unsupported SELECT clause"));
    }
    let group_by = match &select.group_by {
        GroupByExpr::Expressions(e, m) if m.is_empty() => e.clone(),
        _ => return Err(unsupported("unsupported GROUP BY")),
    };

    let derived = match &select.from[0] {
        TableWithJoins {
            relation: TableFactor::Derived {
                lateral: false,
                subquery,
                alias: Some(_),
            },
            joins,
        } if joins.is_empty() => Some(subquery),
        _ => None,
    };

    let (mut top, scope) = match derived {
        Some(sub) => {
            let child = parse_query(b, sub)?;
            let scope = Scope::Derived {
                columns: b.g.output_columns(child),
            };
            if group_by.is_empty() {
                let mut items = select.projection.iter();
                if !matches!(items.next(), Some(SelectItem::Wildcard(_))) {
                    return Err(unsupported("derived block must select `*` or aggregate"));
                }
                let rest: Vec<SelectItem> = items.cloned().collect();
                (eval_nodes(b, child, &scope, &rest)?, scope)
            } else {
                let keys = group_by
                    .iter()
                    .map(|e| {
                        let (t, c) = column_of(e).ok_or_else(|| unsupported(format!("group key `{e}`")))?;
                        scope.resolve(t, c)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let mut funcs = Vec::new();
                for item in &select.projection {
                    let e = match item {
                        SelectItem::UnnamedExpr(e) | SelectItem::ExprWithAlias { expr: e, .. } => e,
                        _ => return Err(unsupported(format!("select item `{item}`"))),
                    };
                    if let Some((t, c)) = column_of(e) {
                        if !keys.contains(&scope.resolve(t, c)?) {
                            return Err(unsupported(format!("`{e}` is not a group key")));
                        }
                        continue;
                    }
                    let Expr::Function(f) = e else {
                        return Err(unsupported(format!("select item `{item}`")));
                    };
                    let arg = single_arg(f).ok_or_else(|| unsupported(format!("function `{f}`")))?;
                    funcs.push(match (function_name(f).as_str(), arg) {
                        ("COUNT", FunctionArgExpr::Wildcard) => AggFunc::CountStar,
                        ("SUM", FunctionArgExpr::Expr(a)) => {
                            let (t, c) = column_of(a).ok_or_else(|| unsupported(format!("function `{f}`")))?;
                            AggFunc::Sum(scope.resolve(t, c)?)
                        }
                        _ => return Err(unsupported(format!("function `{f}`"))),
                    });
                }
                let top = b.add(NodeKind::Aggregate { group_by: keys, funcs }, &[child]);
                let scope = Scope::Derived {
                    columns: b.g.output_columns(top),
                };
                (top, scope)
            }
        }
        None => {
            if !group_by.is_empty() {
                return Err(unsupported("GROUP BY directly over base tables"));
            }
            let (core, scope, rest) = parse_core(b, select)?;
            (eval_nodes(b, core, &scope, &rest)?, scope)
        }
    };

    if let Some(order) = &q.order_by {
        if order.interpolate.is_some() || order.exprs.is_empty() {
            return Err(unsupported("unsupported ORDER BY"));
        }
        let asc = order.exprs[0].asc.unwrap_or(true);
        let mut keys = Vec::new();
        for o in &order.exprs {
            if o.asc.unwrap_or(true) != asc || o.nulls_first.is_some() || o.with_fill.is_some() {
                return Err(unsupported("mixed ORDER BY directions"));
            }
            let (t, c) = column_of(&o.expr).ok_or_else(|| unsupported(format!("sort key `{}`", o.expr)))?;
            let key = match &scope {
                Scope::Core { .. } => scope.resolve(t, c)?,
                Scope::Derived { .. } => Scope::Derived {
                    columns: b.g.output_columns(top),
                }
                .resolve(t, c)?,
            };
            keys.push(key);
        }
        let direction = if asc { SortDirection::Asc } else { SortDirection::Desc };
        top = b.add(NodeKind::Sort { keys, direction }, &[top]);
    }
    Ok(top)
}

/// Parses SQL in the subset [`to_sql`] emits back into a query graph.
pub fn parse_sql(sql: &str) -> Result<QueryGraph> {
    let stmts = Parser::parse_sql(&GenericDialect {}, sql).map_err(|e| unsupported(e.to_string()))?;
    let [Statement::Query(q)] = stmts.as_slice() else {
        return Err(unsupported("expected exactly one SELECT statement"));
    };
    let mut b = Builder {
        g: QueryGraph {
            nodes: Vec::new(),
            edges: Vec::new(),
            root: NodeId(0),
        },
    };
    let root = parse_query(&mut b, q)?;
    b.g.root = root;
    Ok(b.g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::demo_dataset;
    use crate::querygraph::{canonical_form, sample_random_graph, validate, GraphBuilder, SampleBounds};

    fn round_trips(g: &QueryGraph) {
        let sql = to_sql(g).unwrap();
        let back = parse_sql(&sql).unwrap_or_else(|e| panic!("{e}\n{sql}"));
        for p in [false, true] {
            assert_eq!(canonical_form(&back, p), canonical_form(g, p), "{sql}");
        }
    }

    #[test]
    fn minimal_scan() {
        let mut b = GraphBuilder::new();
        let s = b.scan("customer", &["c_id"]);
        let g = b.finish(s);
        assert_eq!(to_sql(&g).unwrap(), "SELECT c_id FROM customer");
        round_trips(&g);
    }

    #[test]
    fn join_with_filter() {
        let mut b = GraphBuilder::new();
        let o = b.scan("orders", &["o_id", "o_custkey", "o_date"]);
        let f = b.add(
            NodeKind::Filter {
                predicates: vec![
                    Predicate::new(ColumnRef::new("orders", "o_date"), Value::Date(19_000)),
                    Predicate::new(ColumnRef::new("orders", "o_total"), Value::Decimal(-1250)),
                ],
            },
            &[o],
        );
        let c = b.scan("customer", &["c_id", "c_name"]);
        let j = b.add(
            NodeKind::Join {
                left_key: ColumnRef::new("orders", "o_custkey"),
                right_key: ColumnRef::new("customer", "c_id"),
            },
            &[f, c],
        );
        let g = b.finish(j);
        let sql = to_sql(&g).unwrap();
        assert_eq!(
            sql,
            "SELECT orders.o_id, orders.o_custkey, orders.o_date, customer.c_id, customer.c_name \
             FROM orders INNER JOIN customer ON orders.o_custkey = customer.c_id \
             WHERE orders.o_date <= '2022-01-08' AND orders.o_total <= -12.50"
        );
        round_trips(&g);
    }

    #[test]
    fn stacked_aggregates_nest() {
        let (c, _) = demo_dataset();
        let mut b = GraphBuilder::new();
        let o = b.scan("orders", &["o_id", "o_custkey", "o_total"]);
        let e = b.add(
            NodeKind::EvalScalar {
                expr: ExprKind::Arith,
                input: ColumnRef::new("orders", "o_total"),
                repeat: 2,
            },
            &[o],
        );
        let a1 = b.add(
            NodeKind::Aggregate {
                group_by: vec![ColumnRef::new("orders", "o_custkey"), ColumnRef::new("orders", "o_id")],
                funcs: vec![AggFunc::CountStar, AggFunc::Sum(ColumnRef::new("orders", "o_id"))],
            },
            &[e],
        );
        let a2 = b.add(
            NodeKind::Aggregate {
                group_by: vec![ColumnRef::new("orders", "o_custkey")],
                funcs: vec![AggFunc::CountStar],
            },
            &[a1],
        );
        let s = b.add(
            NodeKind::Sort {
                keys: vec![ColumnRef::new("orders", "o_custkey")],
                direction: SortDirection::Desc,
            },
            &[a2],
        );
        let g = b.finish(s);
        assert!(validate(&g, &c).is_ok());
        let sql = to_sql(&g).unwrap();
        assert_eq!(sql.matches("GROUP BY").count(), 2);
        assert!(sql.contains("(o_total * 1.0001 + 1) AS e1_2"), "{sql}");
        round_trips(&g);
    }

    #[test]
    fn random_graphs_round_trip() {
        let (c, _) = demo_dataset();
        let bounds = SampleBounds {
            max_joins: 1,
            max_aggs: 2,
            max_sorts: 2,
            max_evals: 2,
        };
        for seed in 0..300 {
            round_trips(&sample_random_graph(&c, bounds, seed));
        }
    }

    #[test]
    fn deterministic_output() {
        let (c, _) = demo_dataset();
        let g = sample_random_graph(&c, SampleBounds::default(), 11);
        assert_eq!(to_sql(&g).unwrap(), to_sql(&g).unwrap());
    }

    #[test]
    fn rejects_out_of_subset() {
        for sql in [
            "SELECT c_id, ROW_NUMBER() OVER (ORDER BY c_id) FROM customer",
            "SELECT c_id FROM customer LIMIT 3",
            "SELECT c_id FROM customer WHERE c_id > 3",
            "SELECT c_id FROM customer LEFT JOIN orders ON customer.c_id = orders.o_custkey",
            "DELETE FROM customer",
        ] {
            assert!(matches!(parse_sql(sql), Err(Error::OutOfSubset(_))), "{sql}");
        }
    }
}
