//! Phase I: scan-bytes bounding by greedy data-aware column selection,
//! structural operator injection, and EvalScalar cost compensation.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use crate::backend::ExecutionBackend;
use crate::catalog::{connected_table_subsets, Catalog, ColumnStats, JoinEdge};
use crate::error::{Error, Result};
use crate::querygraph::{
    AggFunc, ColumnRef, ExprKind, GraphBuilder, NodeId, NodeKind, OperatorNode, QueryGraph,
    SortDirection,
};
use crate::trace::{ConstraintMode, OperatorKind, StructuralProfile};
use crate::LocalModel;

/// Reason codes reported for infeasible records.
pub const NO_CONNECTED_SET: &str = "no_connected_set";
pub const UNDER_TARGET_SCAN: &str = "under_target_scan";
pub const COMPENSATION_CAP: &str = "compensation_cap";
pub const STRUCTURE: &str = "structure";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TableSelection {
    pub table: String,
    /// Selected columns in the order they were added.
    pub columns: Vec<String>,
    pub mandatory: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnSelection {
    pub tables: Vec<TableSelection>,
    /// Spanning-tree join edges, oriented (inside, newly reached), in BFS order.
    pub joins: Vec<(ColumnRef, ColumnRef)>,
    pub achieved_bytes: u64,
    pub under_target: bool,
    /// Weight of the last column added in the completion step.
    pub last_added_weight: Option<u64>,
}

/// Grounding of a table set: the join spanning tree, mandatory keys and
/// the weight-sorted completion candidates. Independent of the target.
#[derive(Clone, Debug)]
struct Grounding {
    joins: Vec<(ColumnRef, ColumnRef)>,
    mandatory: Vec<Vec<String>>,
    /// (weight, table, column)
    candidates: Vec<(u64, String, String)>,
}

fn ground(catalog: &Catalog, table_set: &[String]) -> Grounding {
    let mut reached = vec![table_set[0].clone()];
    let mut joins = Vec::new();
    let mut i = 0;
    while i < reached.len() {
        let t = reached[i].clone();
        for e in catalog.edges_within(table_set) {
            if let Some((mine, other)) = e.oriented(&t) {
                if !reached.contains(&other.table) {
                    reached.push(other.table.clone());
                    joins.push((mine.clone(), other.clone()));
                }
            }
        }
        i += 1;
    }
    let mandatory: Vec<Vec<String>> = table_set
        .iter()
        .map(|t| {
            let mut keys: Vec<String> = Vec::new();
            for (a, b) in &joins {
                for k in [a, b] {
                    if &k.table == t && !keys.contains(&k.column) {
                        keys.push(k.column.clone());
                    }
                }
            }
            keys
        })
        .collect();
    let mut candidates: Vec<(u64, String, String)> = table_set
        .iter()
        .zip(&mandatory)
        .flat_map(|(t, m)| {
            catalog
                .table(t)
                .map(|ts| ts.columns.as_slice())
                .unwrap_or_default()
                .iter()
                .filter(|c| !m.contains(&c.name))
                .map(|c| (c.scan_weight, t.clone(), c.name.clone()))
                .collect::<Vec<_>>()
        })
        .collect();
    candidates.sort();
    Grounding {
        joins,
        mandatory,
        candidates,
    }
}

fn select_with(catalog: &Catalog, table_set: &[String], g: &Grounding, y_scan: f64) -> ColumnSelection {
    let weight = |t: &str, c: &str| -> u64 {
        catalog
            .column(&ColumnRef::new(t, c))
            .map(|c| c.scan_weight)
            .unwrap_or(0)
    };
    let mut tables: Vec<TableSelection> = table_set
        .iter()
        .zip(&g.mandatory)
        .map(|(t, m)| TableSelection {
            table: t.clone(),
            columns: m.clone(),
            mandatory: m.clone(),
        })
        .collect();
    let mut s: u64 = tables
        .iter()
        .flat_map(|t| t.columns.iter().map(move |c| weight(&t.table, c)))
        .sum();

    // per-group initialization
    let y_bar = y_scan / table_set.len() as f64;
    for sel in tables.iter_mut().filter(|t| t.columns.is_empty()) {
        let Some(ts) = catalog.table(&sel.table) else { continue };
        let best: Option<&ColumnStats> = ts.columns.iter().min_by(|a, b| {
            let da = (a.scan_weight as f64 - y_bar).abs();
            let db = (b.scan_weight as f64 - y_bar).abs();
            da.partial_cmp(&db)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.name.cmp(&b.name))
        });
        if let Some(c) = best {
            sel.columns.push(c.name.clone());
            s += c.scan_weight;
        }
    }

    // global greedy completion in ascending (weight, table, column)
    let mut last = None;
    for (w, t, c) in &g.candidates {
        if s as f64 >= y_scan {
            break;
        }
        let sel = tables.iter_mut().find(|x| &x.table == t).expect("candidate table is selected");
        if sel.columns.contains(c) {
            continue;
        }
        sel.columns.push(c.clone());
        s += w;
        last = Some(*w);
    }
    ColumnSelection {
        tables,
        joins: g.joins.clone(),
        achieved_bytes: s,
        under_target: (s as f64) < y_scan,
        last_added_weight: last,
    }
}

/// Greedy data-aware column selection over a connected table set.
pub fn greedy_column_selection(catalog: &Catalog, table_set: &[String], y_scan: f64) -> ColumnSelection {
    select_with(catalog, table_set, &ground(catalog, table_set), y_scan)
}

/// Read-mostly cache of groundings keyed by (table set, ⌊log₂ y⌋). Only
/// target-independent work is cached, so cached and uncached results agree.
#[derive(Default)]
pub struct BoundingCache {
    entries: Mutex<HashMap<(Vec<String>, i32), Grounding>>,
    pub selections: AtomicU64,
    pub hits: AtomicU64,
}

impl BoundingCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn bucket(y_scan: f64) -> i32 {
        if y_scan >= 1.0 {
            y_scan.log2().floor() as i32
        } else {
            -1
        }
    }

    pub fn select(&self, catalog: &Catalog, table_set: &[String], y_scan: f64) -> ColumnSelection {
        self.selections.fetch_add(1, Ordering::Relaxed);
        let key = (table_set.to_vec(), Self::bucket(y_scan));
        let cached = self.entries.lock().expect("cache lock").get(&key).cloned();
        let g = match cached {
            Some(g) => {
                self.hits.fetch_add(1, Ordering::Relaxed);
                g
            }
            None => {
                let g = ground(catalog, table_set);
                self.entries.lock().expect("cache lock").insert(key, g.clone());
                g
            }
        };
        select_with(catalog, table_set, &g, y_scan)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundedBaseGraph {
    pub graph: QueryGraph,
    pub selection: ColumnSelection,
    pub feasible: bool,
    /// Predicted CPU at maximal predicate openness, once checked.
    pub predicted_max_cpu: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaseGraphs {
    pub candidates: Vec<BoundedBaseGraph>,
    pub greedy_calls: u32,
}

/// Scans plus the spanning-tree joins of a selection, left-deep in BFS order.
pub fn base_graph(sel: &ColumnSelection) -> QueryGraph {
    let mut b = GraphBuilder::new();
    let mut scan_ids: HashMap<&str, NodeId> = HashMap::new();
    for t in &sel.tables {
        let id = b.add(
            NodeKind::Scan {
                table: t.table.clone(),
                columns: t.columns.clone(),
            },
            &[],
        );
        scan_ids.insert(t.table.as_str(), id);
    }
    let mut core = scan_ids[sel.tables[0].table.as_str()];
    for (inside, new) in &sel.joins {
        core = b.add(
            NodeKind::Join {
                left_key: inside.clone(),
                right_key: new.clone(),
            },
            &[core, scan_ids[new.table.as_str()]],
        );
    }
    b.finish(core)
}

/// Enumerates connected table sets of the size the join constraint implies,
/// selects columns for each, and ranks by |S − y|.
pub fn choose_base_graphs(
    catalog: &Catalog,
    structure: &StructuralProfile,
    y_scan: f64,
    cache: &BoundingCache,
) -> Result<BaseGraphs> {
    let joins = structure.required(OperatorKind::Join) as usize;
    let sets = connected_table_subsets(catalog, joins + 1);
    if sets.is_empty() {
        return Err(Error::infeasible(
            NO_CONNECTED_SET,
            format!("no connected table set of size {}", joins + 1),
        ));
    }
    let mut candidates: Vec<BoundedBaseGraph> = sets
        .iter()
        .map(|set| {
            let selection = cache.select(catalog, set, y_scan);
            BoundedBaseGraph {
                graph: base_graph(&selection),
                feasible: !selection.under_target,
                selection,
                predicted_max_cpu: None,
            }
        })
        .collect();
    let greedy_calls = candidates.len() as u32;
    if candidates.iter().any(|c| c.feasible) {
        candidates.retain(|c| c.feasible);
    }
    candidates.sort_by(|a, b| {
        let da = (a.selection.achieved_bytes as f64 - y_scan).abs();
        let db = (b.selection.achieved_bytes as f64 - y_scan).abs();
        da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(BaseGraphs {
        candidates,
        greedy_calls,
    })
}

/// Core output columns ranked by distinct count ascending, then name.
fn ranked_columns(g: &QueryGraph, catalog: &Catalog) -> Vec<ColumnRef> {
    let mut cols = g.output_columns(g.core_root());
    cols.sort_by_key(|c| {
        (
            catalog.column(c).map(|s| s.distinct_count).unwrap_or(u64::MAX),
            c.column.clone(),
            c.table.clone(),
        )
    });
    cols
}

/// Adds the Aggregate and Sort nodes the profile requires above the core.
/// Aggregates nest with group keys shrinking outward (inner ⊇ outer).
pub fn inject_structure(base: &QueryGraph, structure: &StructuralProfile, catalog: &Catalog) -> Result<QueryGraph> {
    let counts = crate::querygraph::structural_counts(base);
    for kind in OperatorKind::ALL {
        let Some(c) = structure.get(kind) else { continue };
        if kind == OperatorKind::Join {
            let ok = match c.mode {
                ConstraintMode::ExactCount(v) => counts.joins.abs_diff(v) <= c.tolerance,
                ConstraintMode::Presence(p) => (counts.joins > 0) == p,
            };
            if !ok {
                return Err(Error::infeasible(
                    STRUCTURE,
                    format!("base graph has {} joins", counts.joins),
                ));
            }
        }
    }
    let want_aggs = structure.required(OperatorKind::Aggregate).saturating_sub(counts.aggregates);
    let want_sorts = structure.required(OperatorKind::Sort).saturating_sub(counts.sorts);
    if want_aggs == 0 && want_sorts == 0 {
        return Ok(base.clone());
    }
    let ranked = ranked_columns(base, catalog);
    let names: BTreeSet<&str> = ranked.iter().map(|c| c.column.as_str()).collect();
    if names.len() != ranked.len() {
        return Err(Error::infeasible(STRUCTURE, "ambiguous column names above the join core"));
    }
    let numeric = |c: &&ColumnRef| catalog.column(c).is_some_and(|s| s.value_kind.is_numeric());
    let mut g = base.clone();
    let mut visible = ranked.clone();
    let mut top = g.root;
    for level in 0..want_aggs {
        let k = ((want_aggs - level) as usize).clamp(1, visible.len().max(1));
        let group_by: Vec<ColumnRef> = visible.iter().take(k).cloned().collect();
        let mut funcs = vec![AggFunc::CountStar];
        if let Some(c) = visible.iter().find(numeric) {
            funcs.push(AggFunc::Sum(c.clone()));
        }
        top = push_above(&mut g, top, NodeKind::Aggregate { group_by: group_by.clone(), funcs });
        visible = group_by;
    }
    for _ in 0..want_sorts {
        let keys = vec![visible[0].clone()];
        top = push_above(
            &mut g,
            top,
            NodeKind::Sort {
                keys,
                direction: SortDirection::Asc,
            },
        );
    }
    g.root = top;
    Ok(g)
}

fn push_above(g: &mut QueryGraph, child: NodeId, kind: NodeKind) -> NodeId {
    let id = g.next_id();
    g.nodes.push(OperatorNode { id, kind });
    g.edges.push((id, child));
    id
}

/// Inserts `kind` directly above `below`, rewiring its parent.
fn insert_above(g: &mut QueryGraph, below: NodeId, kind: NodeKind) -> NodeId {
    let id = g.next_id();
    for e in g.edges.iter_mut() {
        if e.1 == below {
            e.1 = id;
        }
    }
    g.nodes.push(OperatorNode { id, kind });
    g.edges.push((id, below));
    if g.root == below {
        g.root = id;
    }
    id
}

/// `ceil(gap / unit)` applications.
pub fn repeat_for_gap(gap: f64, unit: f64) -> u64 {
    (gap / unit).ceil().max(1.0) as u64
}

#[derive(Clone, Debug, PartialEq)]
pub struct Compensation {
    pub graph: QueryGraph,
    pub predicted_max_cpu: f64,
    pub added: Vec<(ExprKind, u32)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompensationConfig {
    /// Cap on one EvalScalar's repeat count.
    pub max_repeat: u32,
    /// Compensate up to `y·(1 + margin)` so predicates keep room to cut.
    pub margin: f64,
}

impl Default for CompensationConfig {
    fn default() -> Self {
        CompensationConfig {
            max_repeat: 10_000,
            margin: 0.25,
        }
    }
}

/// Predicts CPU at maximal predicate openness and, when short of `y_cpu`,
/// stacks EvalScalar nodes above the join core, cheapest kind first.
pub fn feasibility_and_compensation(
    g: &QueryGraph,
    y_cpu: f64,
    model: &LocalModel,
    backend: &dyn ExecutionBackend,
    config: CompensationConfig,
) -> Result<Compensation> {
    let catalog = backend.catalog();
    let open = g.with_predicates(&[]);
    let cards = backend.probe_cardinalities(&open)?;
    let mut predicted = model.predict_query(&open, catalog, &cards)?;
    if predicted >= y_cpu {
        return Ok(Compensation {
            graph: open,
            predicted_max_cpu: predicted,
            added: Vec::new(),
        });
    }
    let core = open.core_root();
    let rows = cards.get(core).unwrap_or(0);
    let ranked = ranked_columns(&open, catalog);
    let mut options: Vec<(f64, ExprKind, ColumnRef)> = ExprKind::ALL
        .iter()
        .filter_map(|&k| {
            let unit = model.eval_unit_cost(k, rows)?;
            let input = ranked
                .iter()
                .find(|c| catalog.column(c).is_some_and(|s| k.accepts(s.value_kind)))?;
            (unit > 0.0).then(|| (unit, k, input.clone()))
        })
        .collect();
    options.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));

    let goal = y_cpu * (1.0 + config.margin.max(0.0));
    let mut graph = open;
    let mut below = core;
    let mut added = Vec::new();
    for (unit, kind, input) in options {
        let k = repeat_for_gap(goal - predicted, unit).min(config.max_repeat as u64) as u32;
        below = insert_above(
            &mut graph,
            below,
            NodeKind::EvalScalar {
                expr: kind,
                input,
                repeat: k,
            },
        );
        added.push((kind, k));
        let cards = backend.probe_cardinalities(&graph)?;
        predicted = model.predict_query(&graph, catalog, &cards)?;
        if predicted >= goal {
            break;
        }
    }
    if predicted < y_cpu {
        return Err(Error::infeasible(
            COMPENSATION_CAP,
            format!("predicted {predicted:.3} ms at maximal openness, target {y_cpu:.3} ms"),
        ));
    }
    Ok(Compensation {
        graph,
        predicted_max_cpu: predicted,
        added,
    })
}

/// Schema edges usable for a table set, for diagnostics.
pub fn edges_for<'a>(catalog: &'a Catalog, tables: &'a [String]) -> Vec<&'a JoinEdge> {
    catalog.edges_within(tables).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::SimulatedBackend;
    use crate::catalog::demo_dataset;
    use crate::costmodel::{collect_profiles, fit, JoinRegressorKind};
    use crate::querygraph::{structural_counts, validate};

    fn set(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn demo_join_selection_hand_trace() {
        let (c, _) = demo_dataset();
        let sel = greedy_column_selection(&c, &set(&["orders", "customer"]), 20_000.0);
        assert_eq!(sel.achieved_bytes, 23_200);
        assert!(!sel.under_target);
        let mut o = sel.tables[0].columns.clone();
        o.sort();
        assert_eq!(o, ["o_custkey", "o_date", "o_id"]);
        let mut cu = sel.tables[1].columns.clone();
        cu.sort();
        assert_eq!(cu, ["c_id", "c_name", "c_region"]);
        assert_eq!(sel.tables[0].mandatory, ["o_custkey"]);
        assert_eq!(sel.tables[1].mandatory, ["c_id"]);
        assert_eq!(sel.last_added_weight, Some(8000));
    }

    #[test]
    fn single_table_step_two() {
        let (c, _) = demo_dataset();
        let sel = greedy_column_selection(&c, &set(&["customer"]), 1900.0);
        assert_eq!(sel.tables[0].columns, ["c_name"]);
        assert_eq!(sel.achieved_bytes, 2000);
        assert_eq!(sel.last_added_weight, None);
    }

    #[test]
    fn exhaustion_sets_flag() {
        let (c, _) = demo_dataset();
        let sel = greedy_column_selection(&c, &set(&["customer"]), 1e9);
        assert!(sel.under_target);
        assert_eq!(sel.tables[0].columns.len(), 3);
        assert_eq!(sel.achieved_bytes, 3200);
    }

    #[test]
    fn base_graph_choices() {
        let (c, _) = demo_dataset();
        let cache = BoundingCache::new();
        let r = choose_base_graphs(&c, &StructuralProfile::exact(1, 0, 0), 20_000.0, &cache).unwrap();
        assert_eq!(r.candidates.len(), 1);
        assert!(validate(&r.candidates[0].graph, &c).is_ok());
        let err = choose_base_graphs(&c, &StructuralProfile::exact(3, 0, 0), 20_000.0, &cache);
        assert!(matches!(err, Err(Error::Infeasible { code: NO_CONNECTED_SET, .. })));
    }

    #[test]
    fn ranking_prefers_closer_bytes() {
        let (c, _) = demo_dataset();
        let cache = BoundingCache::new();
        // singletons: orders reaches 8000 exactly with one column, customer tops out at 3200
        let r = choose_base_graphs(&c, &StructuralProfile::exact(0, 0, 0), 8000.0, &cache).unwrap();
        assert_eq!(r.greedy_calls, 2);
        assert_eq!(r.candidates.len(), 1);
        assert_eq!(r.candidates[0].selection.tables[0].table, "orders");
        let again = choose_base_graphs(&c, &StructuralProfile::exact(0, 0, 0), 8100.0, &cache).unwrap();
        assert_eq!(cache.hits.load(Ordering::Relaxed), 2);
        assert_eq!(
            again.candidates[0].selection,
            greedy_column_selection(&c, &set(&["orders"]), 8100.0)
        );
    }

    #[test]
    fn injection_matches_profile() {
        let (c, _) = demo_dataset();
        let base = base_graph(&greedy_column_selection(&c, &set(&["orders", "customer"]), 20_000.0));
        let g = inject_structure(&base, &StructuralProfile::exact(1, 1, 1), &c).unwrap();
        assert!(validate(&g, &c).is_ok());
        assert_eq!(g.kind(g.root).name(), "Sort");
        let g2 = inject_structure(&base, &StructuralProfile::exact(1, 2, 0), &c).unwrap();
        assert!(validate(&g2, &c).is_ok());
        let counts = structural_counts(&g2);
        assert_eq!((counts.aggregates, counts.sorts), (2, 0));
        let outer = g2.kind(g2.root).clone();
        let inner = g2.kind(g2.children(g2.root)[0]).clone();
        match (outer, inner) {
            (NodeKind::Aggregate { group_by: o, .. }, NodeKind::Aggregate { group_by: i, .. }) => {
                assert!(o.iter().all(|k| i.contains(k)));
                assert!(i.len() > o.len());
            }
            _ => panic!("expected stacked aggregates"),
        }
        let presence = StructuralProfile {
            constraints: vec![crate::trace::StructuralConstraint {
                kind: OperatorKind::Join,
                mode: ConstraintMode::Presence(true),
                tolerance: 0,
            }],
        };
        assert_eq!(inject_structure(&base, &presence, &c).unwrap(), base);
        assert!(inject_structure(&base, &StructuralProfile::exact(0, 0, 0), &c).is_err());
    }

    #[test]
    fn compensation_rules() {
        assert_eq!(repeat_for_gap(20.0, 0.4), 50);
        let (c, t) = demo_dataset();
        let be = SimulatedBackend::new(c.clone(), &t).unwrap();
        let model: LocalModel = fit(&collect_profiles(&be, 150, 3).unwrap(), JoinRegressorKind::Parametric, 4).unwrap();
        let base = base_graph(&greedy_column_selection(&c, &set(&["orders"]), 8000.0));
        let cfg = CompensationConfig::default();

        let unchanged = feasibility_and_compensation(&base, 1.0, &model, &be, cfg).unwrap();
        assert_eq!(unchanged.graph, base);
        assert!(unchanged.added.is_empty());

        let comp = feasibility_and_compensation(&base, 50.0, &model, &be, cfg).unwrap();
        assert!(comp.predicted_max_cpu >= 50.0);
        assert_eq!(comp.added[0].0, ExprKind::Arith);
        assert!(validate(&comp.graph, &c).is_ok());
        assert_eq!(structural_counts(&comp.graph), structural_counts(&base));

        let capped = feasibility_and_compensation(&base, 1e6, &model, &be, cfg);
        assert!(matches!(capped, Err(Error::Infeasible { code: COMPENSATION_CAP, .. })));
    }
}
