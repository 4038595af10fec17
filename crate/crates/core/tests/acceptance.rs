//! Acceptance criteria 1–7. Each test prints one `criterion N: PASS|FAIL`
//! line with the measured values, then asserts.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wsynth::backend::{ExecutionBackend, SimulatedBackend};
use wsynth::bounding::greedy_column_selection;
use wsynth::catalog::{
    gen_synthetic_catalog, Catalog, ColumnRef, ColumnStats, JoinEdge, SchemaJoinGraph, SyntheticSpec, TableStats, Value,
    ValueKind,
};
use wsynth::costmodel::{collect_profiles, fit, relative_error, JoinFeatures, JoinRegressorKind, OperatorFeatures};
use wsynth::numeric::median;
use wsynth::pipeline::{summarize, synthesize_workload, PipelineConfig, Reuse, SynthesisOutput};
use wsynth::pool::QueryPool;
use wsynth::predsearch::ScoringMode;
use wsynth::querygraph::{canonical_form, sample_random_graph, ExprKind, Predicate, QueryGraph, SampleBounds};
use wsynth::trace::{gen_synthetic_trace, TraceGenOptions, TraceRecord};
use wsynth::translator::{parse_sql, to_sql};
use wsynth::{LocalModel, ProfileSample};

fn report(n: u32, pass: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

struct Suite {
    backend: SimulatedBackend,
    model: LocalModel,
}

/// The closed-loop dataset: 4 tables of 5000 rows, model fitted on 200
/// profiling queries drawn with a different seed than the traces.
fn suite() -> &'static Suite {
    static SUITE: OnceLock<Suite> = OnceLock::new();
    SUITE.get_or_init(|| {
        let (catalog, tables) = gen_synthetic_catalog(SyntheticSpec {
            n_tables: 4,
            rows_per_table: 5000,
            seed: 7,
        })
        .unwrap();
        let backend = SimulatedBackend::new(catalog, &tables).unwrap();
        let samples = collect_profiles(&backend, 200, 1).unwrap();
        let model = fit(&samples, JoinRegressorKind::Parametric, backend.parallel_tasks()).unwrap();
        Suite { backend, model }
    })
}

fn closed_loop_trace() -> Vec<TraceRecord> {
    gen_synthetic_trace(&suite().backend, 50, 2, TraceGenOptions::default())
        .unwrap()
        .records
}

fn run(trace: &[TraceRecord], cfg: &PipelineConfig) -> (SynthesisOutput, Duration) {
    let s = suite();
    let t = Instant::now();
    let out = synthesize_workload(trace, &s.backend, &s.model, cfg, &QueryPool::new(cfg.tau)).unwrap();
    (out, t.elapsed())
}

// ---------------------------------------------------------------------------
// 1. Greedy column selection against an exhaustive oracle
// ---------------------------------------------------------------------------

fn random_catalog(rng: &mut ChaCha8Rng) -> Catalog {
    let n_tables = rng.gen_range(1..=4);
    let mut budget = 12 - n_tables; // one column per table is guaranteed
    let mut tables = Vec::new();
    for t in 0..n_tables {
        let name = format!("t{t}");
        let extra = rng.gen_range(0..=budget.min(4));
        budget -= extra;
        let rows = rng.gen_range(1..=2000u64);
        let columns = (0..=extra)
            .map(|c| {
                let bpv = rng.gen_range(1..=16u64);
                ColumnStats {
                    name: format!("{name}_c{c}"),
                    table: name.clone(),
                    value_kind: ValueKind::Integer,
                    bytes_per_value: bpv,
                    scan_weight: rows * bpv,
                    min_value: Some(Value::Integer(0)),
                    max_value: Some(Value::Integer(rows as i64)),
                    distinct_count: rows,
                }
            })
            .collect();
        tables.push(TableStats {
            name,
            row_count: rows,
            columns,
        });
    }
    // random spanning tree over random key columns
    let mut edges = Vec::new();
    for t in 1..n_tables {
        let p = rng.gen_range(0..t);
        let pick = |tb: &TableStats, rng: &mut ChaCha8Rng| tb.columns[rng.gen_range(0..tb.columns.len())].column_ref();
        let left = pick(&tables[p], rng);
        let right = pick(&tables[t], rng);
        edges.push(JoinEdge { left, right });
    }
    let catalog = Catalog {
        dataset_id: "oracle".into(),
        join_graph: SchemaJoinGraph {
            nodes: tables.iter().map(|t| t.name.clone()).collect(),
            edges,
        },
        tables,
    };
    catalog.validate().unwrap();
    catalog
}

/// Best achievable bytes over every column subset containing `mandatory`;
/// returns whether any subset reaches `y`.
fn exhaustive_feasible(columns: &[(ColumnRef, u64)], mandatory: &[ColumnRef], y: f64) -> bool {
    let n = columns.len();
    (0u32..1 << n).any(|mask| {
        let chosen = |i: usize| mask & (1 << i) != 0;
        let has_mandatory = mandatory
            .iter()
            .all(|m| columns.iter().enumerate().any(|(i, (c, _))| chosen(i) && c == m));
        let s: u64 = (0..n).filter(|&i| chosen(i)).map(|i| columns[i].1).sum();
        has_mandatory && s as f64 >= y
    })
}

#[test]
fn criterion_1_greedy_selection_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut violations = Vec::new();
    for case in 0..200 {
        let catalog = random_catalog(&mut rng);
        let tables: Vec<String> = catalog.tables.iter().map(|t| t.name.clone()).collect();
        let total: u64 = catalog.tables.iter().flat_map(|t| &t.columns).map(|c| c.scan_weight).sum();
        let y = rng.gen_range(0.0..total as f64 * 1.3);
        let sel = greedy_column_selection(&catalog, &tables, y);

        let columns: Vec<(ColumnRef, u64)> = catalog
            .tables
            .iter()
            .flat_map(|t| &t.columns)
            .map(|c| (c.column_ref(), c.scan_weight))
            .collect();
        let keys: Vec<ColumnRef> = sel.joins.iter().flat_map(|(a, b)| [a.clone(), b.clone()]).collect();
        let selected = |c: &ColumnRef| {
            sel.tables
                .iter()
                .any(|t| t.table == c.table && t.columns.iter().any(|x| x == &c.column))
        };
        if sel.joins.len() + 1 != tables.len() {
            violations.push(format!("case {case}: {} joins for {} tables", sel.joins.len(), tables.len()));
        }
        if !keys.iter().all(selected) {
            violations.push(format!("case {case}: join key missing"));
        }
        if sel.tables.iter().any(|t| t.columns.is_empty()) {
            violations.push(format!("case {case}: table without columns"));
        }
        let achieved: u64 = sel
            .tables
            .iter()
            .flat_map(|t| t.columns.iter().map(move |c| (t.table.clone(), c.clone())))
            .map(|(t, c)| catalog.column(&ColumnRef::new(t, c)).unwrap().scan_weight)
            .sum();
        if achieved != sel.achieved_bytes {
            violations.push(format!("case {case}: achieved {} != {achieved}", sel.achieved_bytes));
        }
        if sel.under_target && exhaustive_feasible(&columns, &keys, y) {
            violations.push(format!("case {case}: under target although a feasible subset exists"));
        }
        if let Some(w) = sel.last_added_weight {
            if achieved as f64 - y >= w as f64 && !sel.under_target {
                violations.push(format!("case {case}: overshoot {} ≥ last weight {w}", achieved as f64 - y));
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = violations.is_empty() && elapsed < Duration::from_secs(10);
    report(
        1,
        pass,
        format!("200 catalogs, {} violations, {:.2}s (limit 10s)", violations.len(), elapsed.as_secs_f64()),
    );
    assert!(pass, "{violations:?}");
}

// ---------------------------------------------------------------------------
// 2. Closed loop
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_closed_loop() {
    let trace = closed_loop_trace();
    let (out, elapsed) = run(&trace, &PipelineConfig::default());
    let s = summarize(&out.rows);
    let pass = s.failed == 0
        && s.cpu_qerror[0] <= 1.5
        && s.cpu_qerror[2] <= 5.0
        && s.bytes_qerror[0] <= 2.0
        && s.op_mae[0] == 0.0
        && s.op_mae[2] == 0.0
        && s.op_mae[1] <= 0.1
        && elapsed < Duration::from_secs(300);
    report(
        2,
        pass,
        format!(
            "n=50 cpu q-error p50={:.3} p99={:.3} (≤1.5, ≤5.0); bytes p50={:.3} (≤2.0); \
             MAE join={} agg={} sort={} (0, ≤0.1, 0); failed={}; {:.1}s (limit 300s)",
            s.cpu_qerror[0],
            s.cpu_qerror[2],
            s.bytes_qerror[0],
            s.op_mae[0],
            s.op_mae[1],
            s.op_mae[2],
            s.failed,
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 3. Hybrid scoring ablation
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_hybrid_scoring_ablation() {
    let trace = closed_loop_trace();
    let hybrid_cfg = PipelineConfig::default();
    let mut always_cfg = hybrid_cfg.clone();
    always_cfg.search.mode = ScoringMode::AlwaysExecute;
    let hybrid = summarize(&run(&trace, &hybrid_cfg).0.rows);
    let always = summarize(&run(&trace, &always_cfg).0.rows);
    let ratio = hybrid.executions as f64 / always.executions as f64;
    let degradation = hybrid.cpu_qerror[0] - always.cpu_qerror[0];
    let pass = ratio <= 0.5 && degradation <= 0.2;
    report(
        3,
        pass,
        format!(
            "executions hybrid={} always={} ratio={ratio:.3} (≤0.5); median cpu q-error degradation={degradation:.3} (≤0.2)",
            hybrid.executions, always.executions
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 4. Local model accuracy and coefficient recovery
// ---------------------------------------------------------------------------

fn held_out_error(model: &LocalModel, backend: &SimulatedBackend) -> f64 {
    let mut errors = Vec::new();
    for i in 0..50 {
        let g = sample_random_graph(backend.catalog(), wsynth::costmodel::profiling_bounds(), 10_000 + i);
        let measured = backend.execute(&g).unwrap().cpu_time_ms;
        let cards = backend.probe_cardinalities(&g).unwrap();
        let predicted = model.predict_query(&g, backend.catalog(), &cards).unwrap();
        errors.push(relative_error(predicted, measured));
    }
    median(&errors).unwrap()
}

/// Noiseless samples from known coefficients for every operator family.
fn family_samples(rng: &mut ChaCha8Rng) -> (Vec<ProfileSample>, Vec<(&'static str, Vec<f64>)>) {
    let mut coef = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(1e-4..1e-2)).collect() };
    let truth = vec![
        ("scan", coef(1)),
        ("filter", coef(2)),
        ("eval_arith", coef(2)),
        ("eval_string", coef(2)),
        ("eval_date", coef(2)),
        ("sort", coef(3)),
        ("join", coef(4)),
        ("aggregate", coef(3)),
    ];
    let c = |name: &str| truth.iter().find(|(n, _)| *n == name).unwrap().1.clone();
    let mut samples = Vec::new();
    let mut push = |features: OperatorFeatures<f64>, cpu: f64| samples.push(ProfileSample { features, cpu_time_ms: cpu });
    for i in 1..=40u64 {
        let rows = (i * i * 37 % 9973 + 10) as f64;
        let other = (i * 53 % 997 + 1) as f64;
        let small = (i % 5 + 1) as f64;
        let k = c("scan");
        push(OperatorFeatures::Scan { rows, bytes_per_row: small * 8.0 }, k[0] * rows * small * 8.0);
        let k = c("filter");
        push(OperatorFeatures::Filter { rows_in: rows, predicates: small }, k[0] * rows * small + k[1] * small);
        for (name, expr) in [("eval_arith", ExprKind::Arith), ("eval_string", ExprKind::String), ("eval_date", ExprKind::Date)] {
            let k = c(name);
            push(
                OperatorFeatures::EvalScalar { expr, rows_in: rows, repeat: small },
                k[0] * rows * small + k[1] * small,
            );
        }
        let k = c("sort");
        push(
            OperatorFeatures::Sort { rows, width: small },
            k[0] * rows * rows.log2() + k[1] * rows * small + k[2],
        );
        let j = JoinFeatures::new(rows as u64, other as u64, (rows as u64).min(other as u64), small as usize, (i % 7 + 1) as u32, (i % 2 + 1) as usize);
        let k = c("join");
        push(
            OperatorFeatures::Join(j),
            k[0] * j.build * j.keys + k[1] * j.probe * j.keys + k[2] * j.tasks + k[3] * j.materialize,
        );
        let k = c("aggregate");
        push(
            OperatorFeatures::Aggregate { rows_in: rows, rows_out: other, keys: small },
            k[0] * rows + k[1] * other * small + k[2],
        );
    }
    (samples, truth)
}

fn fitted(model: &LocalModel, name: &str) -> Vec<f64> {
    let c = &model.coefficients;
    match name {
        "scan" => vec![c.scan.unwrap()],
        "filter" => c.filter.unwrap().to_vec(),
        "eval_arith" => c.eval_arith.unwrap().to_vec(),
        "eval_string" => c.eval_string.unwrap().to_vec(),
        "eval_date" => c.eval_date.unwrap().to_vec(),
        "sort" => c.sort.unwrap().to_vec(),
        "join" => {
            let m = c.join_match.unwrap();
            vec![m[0], m[1], m[2], c.join_material.unwrap()]
        }
        "aggregate" => c.aggregate.unwrap().to_vec(),
        _ => unreachable!(),
    }
}

#[test]
fn criterion_4_local_model() {
    let s = suite();
    let err = held_out_error(&s.model, &s.backend);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (samples, truth) = family_samples(&mut rng);
    let model = fit(&samples, JoinRegressorKind::Parametric, 4).unwrap();
    let mut worst: f64 = 0.0;
    for (name, want) in &truth {
        for (got, want) in fitted(&model, name).iter().zip(want) {
            worst = worst.max((got - want).abs() / want.abs());
        }
    }
    let pass = err <= 0.2 && worst <= 1e-6;
    report(
        4,
        pass,
        format!("held-out median relative error={err:.4} (≤0.2); worst coefficient recovery error={worst:.2e} (≤1e-6)"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 5. Reuse fidelity and determinism
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_reuse_fidelity() {
    let s = suite();
    let opts = TraceGenOptions {
        dup: 0.4,
        template_dup: 0.2,
        ..TraceGenOptions::default()
    };
    let trace = gen_synthetic_trace(&s.backend, 50, 5, opts).unwrap().records;
    let cfg = PipelineConfig::default();
    let (a, _) = run(&trace, &cfg);
    let (b, _) = run(&trace, &cfg);
    let (c, _) = run(
        &trace,
        &PipelineConfig {
            parallelism: 4,
            ..cfg.clone()
        },
    );
    let exact = a.rows.iter().filter(|r| r.reuse == Reuse::Exact).count();
    let rate = exact as f64 / trace.len() as f64;
    let templates: Vec<_> = a.rows.iter().filter(|r| r.reuse == Reuse::Template).collect();
    let template_calls: u32 = templates.iter().map(|r| r.phase1_calls).sum();
    // the cache counts every greedy selection; all of them belong to misses
    let miss_calls: u64 = a.rows.iter().filter(|r| r.reuse == Reuse::Miss).map(|r| r.phase1_calls as u64).sum();
    let telemetry_ok = miss_calls == a.greedy_selections;
    let deterministic = a.workload == b.workload && a.report == b.report && a.workload == c.workload && a.report == c.report;
    let pass = (rate - 0.4).abs() < 1e-12 && !templates.is_empty() && template_calls == 0 && telemetry_ok && deterministic;
    report(
        5,
        pass,
        format!(
            "exact-hit rate={rate:.3} (=0.4); template hits={} with {template_calls} Phase-I calls (=0); \
             cache selections={} all from misses={telemetry_ok}; byte-identical reruns={deterministic}",
            templates.len(),
            a.greedy_selections
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 6. Translator round trip
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_translator_round_trip() {
    let catalog = &suite().backend.catalog().clone();
    let bounds = SampleBounds {
        max_joins: 3,
        max_aggs: 2,
        max_sorts: 2,
        max_evals: 1,
    };
    let mut failures = Vec::new();
    for seed in 0..1000 {
        let g = sample_random_graph(catalog, bounds, seed);
        let ok = to_sql(&g).and_then(|sql| parse_sql(&sql)).map(|back| {
            canonical_form(&back, false) == canonical_form(&g, false)
                && canonical_form(&back, true) == canonical_form(&g, true)
        });
        if !matches!(ok, Ok(true)) {
            failures.push(seed);
        }
    }
    let pass = failures.is_empty();
    report(6, pass, format!("1000 graphs, {} failures", failures.len()));
    assert!(pass, "failing seeds {failures:?}");
}

// ---------------------------------------------------------------------------
// 7. Backend properties
// ---------------------------------------------------------------------------

/// Lowers one bound, or adds a bound on the first rangeable scanned column.
fn tightened(g: &QueryGraph, catalog: &Catalog, rng: &mut ChaCha8Rng) -> Option<(Vec<Predicate>, Vec<Predicate>)> {
    let mut preds = g.predicates();
    if preds.is_empty() {
        let (_, table, cols) = g.scans().into_iter().next()?;
        let stats = cols
            .iter()
            .filter_map(|c| catalog.column(&ColumnRef::new(table, c.as_str())))
            .find(|c| c.ordinal_range().is_some_and(|(lo, hi)| lo < hi))?;
        preds.push(Predicate::new(stats.column_ref(), stats.max_value.clone()?));
    }
    let i = rng.gen_range(0..preds.len());
    let stats = catalog.column(&preds[i].column)?;
    let (lo, _) = stats.ordinal_range()?;
    let cur = preds[i].bound.ordinal()?;
    let lower = rng.gen_range(lo.min(cur)..=cur);
    let mut tight = preds.clone();
    tight[i].bound = Value::from_ordinal(stats.value_kind, lower)?;
    Some((preds, tight))
}

#[test]
fn criterion_7_backend_properties() {
    let s = suite();
    let catalog = s.backend.catalog();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut nondet, mut nonadd, mut nonmono, mut cases) = (0, 0, 0, 0);
    let mut seed = 0;
    while cases < 500 {
        seed += 1;
        let g = sample_random_graph(catalog, wsynth::costmodel::profiling_bounds(), 50_000 + seed);
        let Some((loose, tight)) = tightened(&g, catalog, &mut rng) else { continue };
        cases += 1;
        let a = g.with_predicates(&loose);
        let b = g.with_predicates(&tight);
        let p1 = s.backend.execute(&a).unwrap();
        let p2 = s.backend.execute(&a).unwrap();
        if p1 != p2 || p1.cpu_time_ms.to_bits() != p2.cpu_time_ms.to_bits() {
            nondet += 1;
        }
        let sum: f64 = p1.per_operator.iter().map(|o| o.cpu_time_ms).sum();
        if sum.to_bits() != p1.cpu_time_ms.to_bits() || p1.per_operator.iter().any(|o| o.cpu_time_ms < 0.0) {
            nonadd += 1;
        }
        let pt = s.backend.execute(&b).unwrap();
        let rows = |p: &wsynth::backend::ExecutionProfile| -> Vec<(wsynth::querygraph::NodeId, u64)> {
            let mut v: Vec<_> = p.per_operator.iter().map(|o| (o.node, o.output_rows)).collect();
            v.sort();
            v
        };
        let (rl, rt) = (rows(&p1), rows(&pt));
        if rl.len() != rt.len() || rl.iter().zip(&rt).any(|((n1, r1), (n2, r2))| n1 != n2 || r2 > r1) {
            nonmono += 1;
        }
    }
    let pass = nondet == 0 && nonadd == 0 && nonmono == 0;
    report(
        7,
        pass,
        format!("{cases} cases: nondeterministic={nondet} non-additive={nonadd} non-monotone={nonmono}"),
    );
    assert!(pass);
}
