//! Phase II: predicate-column selection and two-stage Bayesian predicate
//! tuning with hybrid (predict, then execute near the target) scoring.

use std::cell::Cell;

use crate::backend::{ExecutionBackend, ExecutionProfile};
use crate::bo::{Acquisition, AskTell, Dimension, Goal};
use crate::catalog::{Catalog, Value, ValueKind};
use crate::error::{Error, Result};
use crate::querygraph::{ColumnRef, Predicate, QueryGraph};
use crate::LocalModel;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredicateDim {
    pub column: ColumnRef,
    pub kind: ValueKind,
    /// Ordinal domain `[lo, hi]` (see [`Value::ordinal`]).
    pub lo: i64,
    pub hi: i64,
}

impl PredicateDim {
    pub fn width(&self) -> i64 {
        self.hi - self.lo
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredicateSpace {
    pub dims: Vec<PredicateDim>,
    /// Dimensions given to each scanned table, in scan order.
    pub allocation: Vec<(String, usize)>,
}

/// One bound per dimension: predicate `column <= x[i]`.
pub type PredicateVector = Vec<i64>;

impl PredicateSpace {
    pub fn predicates(&self, x: &[i64]) -> Vec<Predicate> {
        self.dims
            .iter()
            .zip(x)
            .map(|(d, v)| Predicate::new(d.column.clone(), Value::from_ordinal(d.kind, *v).expect("rangeable kind")))
            .collect()
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        x.len() == self.dims.len() && self.dims.iter().zip(x).all(|(d, v)| d.lo <= *v && *v <= d.hi)
    }
}

/// Largest-remainder apportionment of `total` seats by `weights`, with each
/// party capped; seats a capped party cannot take go to the others.
fn apportion(weights: &[u64], caps: &[usize], total: usize) -> Vec<usize> {
    let mut seats = vec![0usize; weights.len()];
    let mut open: Vec<usize> = (0..weights.len()).filter(|&i| caps[i] > 0 && weights[i] > 0).collect();
    let mut left = total.min(caps.iter().sum());
    while left > 0 && !open.is_empty() {
        let sum: u64 = open.iter().map(|&i| weights[i]).sum();
        let quotas: Vec<(usize, f64)> = open
            .iter()
            .map(|&i| (i, weights[i] as f64 * left as f64 / sum as f64))
            .collect();
        let mut given = 0;
        for &(i, q) in &quotas {
            let s = (q.floor() as usize).min(caps[i] - seats[i]);
            seats[i] += s;
            given += s;
        }
        let mut rem: Vec<(usize, f64)> = quotas.iter().map(|&(i, q)| (i, q - q.floor())).collect();
        rem.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
        for (i, _) in rem {
            if given >= left {
                break;
            }
            if seats[i] < caps[i] {
                seats[i] += 1;
                given += 1;
            }
        }
        if given == 0 {
            break;
        }
        left -= given;
        open.retain(|&i| seats[i] < caps[i]);
    }
    seats
}

/// Picks at most `max_dims` predicate columns: dimensions go to tables in
/// proportion to row count; within a table, Scan-selected range columns rank
/// by effective width `min(distinct, rows)` descending, then name.
pub fn select_predicate_columns(g: &QueryGraph, catalog: &Catalog, max_dims: usize) -> Result<PredicateSpace> {
    let mut tables = Vec::new();
    for (_, table, columns) in g.scans() {
        let Some(ts) = catalog.table(table) else { continue };
        let mut eligible: Vec<PredicateDim> = columns
            .iter()
            .filter_map(|c| ts.column(c))
            .filter(|c| c.value_kind.is_rangeable())
            .filter_map(|c| {
                let (lo, hi) = c.ordinal_range()?;
                (lo < hi).then(|| PredicateDim {
                    column: c.column_ref(),
                    kind: c.value_kind,
                    lo,
                    hi,
                })
            })
            .collect();
        eligible.sort_by_key(|d| {
            let c = catalog.column(&d.column).expect("column from catalog");
            (std::cmp::Reverse(c.distinct_count.min(ts.row_count)), d.column.column.clone())
        });
        tables.push((table.to_string(), ts.row_count, eligible));
    }
    if tables.iter().all(|t| t.2.is_empty()) {
        return Err(Error::NoTunablePredicates);
    }
    let weights: Vec<u64> = tables.iter().map(|t| t.1).collect();
    let caps: Vec<usize> = tables.iter().map(|t| t.2.len()).collect();
    let seats = apportion(&weights, &caps, max_dims);
    let mut dims = Vec::new();
    let mut allocation = Vec::new();
    for ((name, _, eligible), n) in tables.into_iter().zip(seats) {
        allocation.push((name, n));
        dims.extend(eligible.into_iter().take(n));
    }
    Ok(PredicateSpace { dims, allocation })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoringMode {
    /// Predict first; execute only inside the window around the target.
    Hybrid,
    AlwaysExecute,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchConfig {
    pub n_rand: usize,
    pub n_calls: usize,
    pub window: (f64, f64),
    pub shrink: f64,
    pub bucket_cap: u64,
    pub max_dims: usize,
    /// Backend executions per record, including the final verification.
    pub max_executions: u32,
    /// Stop once an executed point is within this relative error.
    pub stop_tolerance: f64,
    pub jitter: f64,
    pub mode: ScoringMode,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            n_rand: 8,
            n_calls: 24,
            window: (0.5, 2.0),
            shrink: 0.1,
            bucket_cap: 256,
            max_dims: 3,
            max_executions: 40,
            stop_tolerance: 0.05,
            jitter: 0.005,
            mode: ScoringMode::Hybrid,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.window;
        if !(0.0 < a && a <= 1.0 && 1.0 <= b) {
            return Err(Error::Validation(format!("window ({a}, {b}) must satisfy 0 < a <= 1 <= b")));
        }
        if self.n_rand < 2 {
            return Err(Error::Validation("n_rand must be at least 2".into()));
        }
        if self.bucket_cap < 2 || self.max_executions < 1 || !(0.0..=0.5).contains(&self.shrink) {
            return Err(Error::Validation("bucket_cap >= 2, max_executions >= 1, shrink in [0, 0.5]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub x: PredicateVector,
    pub predicted_cpu: f64,
    /// Observed CPU when executed, otherwise the prediction.
    pub cpu: f64,
    pub score: f64,
    pub executed: bool,
    pub stage: u8,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SearchState {
    pub history: Vec<Evaluation>,
    pub seed_above: Option<usize>,
    pub seed_below: Option<usize>,
    pub stopped: bool,
}

impl SearchState {
    pub fn best(&self) -> Option<&Evaluation> {
        self.history
            .iter()
            .reduce(|a, b| if b.score > a.score { b } else { a })
    }
}

/// Everything one tuning session needs. Executions are counted locally.
pub struct SearchContext<'a> {
    pub template: &'a QueryGraph,
    pub space: &'a PredicateSpace,
    pub y_cpu: f64,
    pub eta: f64,
    pub model: &'a LocalModel,
    pub backend: &'a dyn ExecutionBackend,
    pub config: &'a SearchConfig,
    executions: Cell<u32>,
}

impl<'a> SearchContext<'a> {
    pub fn new(
        template: &'a QueryGraph,
        space: &'a PredicateSpace,
        y_cpu: f64,
        model: &'a LocalModel,
        backend: &'a dyn ExecutionBackend,
        config: &'a SearchConfig,
    ) -> Self {
        SearchContext {
            template,
            space,
            y_cpu,
            eta: 1.0,
            model,
            backend,
            config,
            executions: Cell::new(0),
        }
    }

    pub fn executions(&self) -> u32 {
        self.executions.get()
    }

    /// Executions still available to the search; one is kept for the final
    /// verification.
    fn search_budget_left(&self) -> bool {
        self.executions.get() + 1 < self.config.max_executions
    }

    pub fn graph(&self, x: &[i64]) -> QueryGraph {
        self.template.with_predicates(&self.space.predicates(x))
    }

    fn execute(&self, g: &QueryGraph) -> Result<ExecutionProfile> {
        self.executions.set(self.executions.get() + 1);
        self.backend.execute(g)
    }

    fn in_window(&self, predicted: f64) -> bool {
        let (a, b) = self.config.window;
        predicted >= self.y_cpu * a && predicted <= self.y_cpu * b
    }

    fn wants_execution(&self, predicted: f64) -> bool {
        match self.config.mode {
            ScoringMode::Hybrid => self.in_window(predicted),
            ScoringMode::AlwaysExecute => true,
        }
    }
}

pub fn score(cpu: f64, y_cpu: f64) -> f64 {
    -(cpu - y_cpu) * (cpu - y_cpu)
}

/// Scores one predicate vector. Returns `None` when the point would need an
/// execution but the budget is spent.
pub fn score_predicates(x: &[i64], ctx: &SearchContext<'_>, stage: u8) -> Result<Option<Evaluation>> {
    let g = ctx.graph(x);
    let cards = ctx.backend.probe_cardinalities(&g)?;
    let predicted = ctx.model.predict_query(&g, ctx.backend.catalog(), &cards)?;
    let executed = ctx.wants_execution(predicted);
    if executed && !ctx.search_budget_left() {
        return Ok(None);
    }
    let cpu = if executed {
        ctx.execute(&g)?.cpu_time_ms
    } else {
        predicted
    };
    Ok(Some(Evaluation {
        x: x.to_vec(),
        predicted_cpu: predicted,
        cpu,
        score: score(cpu, ctx.y_cpu),
        executed,
        stage,
    }))
}

/// Surrogate target: log CPU, so relative errors weigh the same at every
/// scale.
fn log_cpu(cpu: f64, eta: f64) -> f64 {
    cpu.max(eta).ln()
}

fn close_enough(e: &Evaluation, ctx: &SearchContext<'_>) -> bool {
    e.executed && (e.cpu - ctx.y_cpu).abs() < ctx.config.stop_tolerance * ctx.y_cpu.max(ctx.eta)
}

fn to_vector(x: &[f64]) -> PredicateVector {
    x.iter().map(|v| v.round() as i64).collect()
}

/// Runs `n_rand + n_calls` asks against `opt`, appending to `state`.
fn run_stage(opt: &mut AskTell<f64>, n: usize, stage: u8, ctx: &SearchContext<'_>, state: &mut SearchState) -> Result<()> {
    for _ in 0..n {
        let x = to_vector(&opt.ask());
        let Some(e) = score_predicates(&x, ctx, stage)? else {
            state.stopped = true;
            return Ok(());
        };
        opt.tell(x.iter().map(|v| *v as f64).collect(), log_cpu(e.cpu, ctx.eta));
        let done = close_enough(&e, ctx);
        state.history.push(e);
        if done {
            state.stopped = true;
            return Ok(());
        }
    }
    Ok(())
}

fn seeds(state: &mut SearchState, y: f64) {
    let mut above: Option<(usize, f64)> = None;
    let mut below: Option<(usize, f64)> = None;
    for (i, e) in state.history.iter().enumerate() {
        let gap = e.cpu - y;
        let slot = if gap >= 0.0 { &mut above } else { &mut below };
        if slot.map_or(true, |(_, g)| gap.abs() < g) {
            *slot = Some((i, gap.abs()));
        }
    }
    state.seed_above = above.map(|s| s.0);
    state.seed_below = below.map(|s| s.0);
}

/// Global exploration over the full domain with expected improvement.
pub fn stage1_global(ctx: &SearchContext<'_>) -> Result<SearchState> {
    let dims: Vec<Dimension<f64>> = ctx
        .space
        .dims
        .iter()
        .map(|d| Dimension {
            lo: d.lo as f64,
            hi: d.hi as f64,
            step: Some(1.0),
        })
        .collect();
    let cfg = ctx.config;
    let mut opt = AskTell::new(
        dims,
        Goal::Target(log_cpu(ctx.y_cpu, ctx.eta)),
        Acquisition::ExpectedImprovement,
        cfg.n_rand,
        cfg.seed,
    );
    let mut state = SearchState::default();
    run_stage(&mut opt, cfg.n_rand + cfg.n_calls, 1, ctx, &mut state)?;
    seeds(&mut state, ctx.y_cpu);
    Ok(state)
}

/// `ceil(width / (cap - 1))`, the step that leaves at most `cap` values.
pub fn bucket_step(width: i64, cap: u64) -> i64 {
    let cap = cap.max(2) as i64;
    ((width + cap - 2) / (cap - 1)).max(1)
}

/// Shrunk, bucketed box around a seed.
pub fn local_box(space: &PredicateSpace, seed: &[i64], shrink: f64, cap: u64) -> Vec<Dimension<f64>> {
    space
        .dims
        .iter()
        .zip(seed)
        .map(|(d, &s)| {
            let half = (shrink * d.width() as f64).ceil() as i64;
            let lo = (s - half).max(d.lo);
            let hi = (s + half).min(d.hi);
            let width = hi - lo;
            let step = if width as u64 > cap { bucket_step(width, cap) } else { 1 };
            Dimension {
                lo: lo as f64,
                hi: hi as f64,
                step: Some(step as f64),
            }
        })
        .collect()
}

/// Local refinement around both seeds; the returned state carries the whole
/// history, Stage 1 included.
pub fn stage2_local(mut state: SearchState, ctx: &SearchContext<'_>) -> Result<SearchState> {
    let cfg = ctx.config;
    let seed_points: Vec<PredicateVector> = [state.seed_above, state.seed_below]
        .into_iter()
        .flatten()
        .map(|i| state.history[i].x.clone())
        .collect();
    for (k, seed) in seed_points.into_iter().enumerate() {
        if state.stopped {
            break;
        }
        let dims = local_box(ctx.space, &seed, cfg.shrink, cfg.bucket_cap);
        let mut opt = AskTell::new(
            dims.clone(),
            Goal::Target(log_cpu(ctx.y_cpu, ctx.eta)),
            Acquisition::GreedyMean { jitter: cfg.jitter },
            cfg.n_rand,
            cfg.seed.wrapping_add(1 + k as u64),
        );
        // prior knowledge: Stage-1 points inside the box
        for e in &state.history {
            let inside = e.x.iter().zip(&dims).all(|(v, d)| d.lo <= *v as f64 && *v as f64 <= d.hi);
            if inside {
                opt.tell(e.x.iter().map(|v| *v as f64).collect(), log_cpu(e.cpu, ctx.eta));
            }
        }
        run_stage(&mut opt, cfg.n_rand + cfg.n_calls, 2, ctx, &mut state)?;
    }
    Ok(state)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneOutcome {
    pub graph: QueryGraph,
    pub profile: ExecutionProfile,
    pub executions: u32,
    pub evaluations: usize,
    pub best: Option<Evaluation>,
    pub seed_above: Option<PredicateVector>,
    pub seed_below: Option<PredicateVector>,
}

/// Stage 1, Stage 2, then one verifying execution of the best vector.
pub fn tune(ctx: &SearchContext<'_>) -> Result<TuneOutcome> {
    if ctx.space.dims.is_empty() {
        let graph = ctx.template.with_predicates(&[]);
        let profile = ctx.execute(&graph)?;
        return Ok(TuneOutcome {
            graph,
            profile,
            executions: ctx.executions(),
            evaluations: 0,
            best: None,
            seed_above: None,
            seed_below: None,
        });
    }
    let state = stage1_global(ctx)?;
    let state = stage2_local(state, ctx)?;
    let best = state.best().cloned();
    let x = match &best {
        Some(b) => b.x.clone(),
        None => ctx.space.dims.iter().map(|d| d.hi).collect(),
    };
    let graph = ctx.graph(&x);
    let profile = ctx.execute(&graph)?;
    Ok(TuneOutcome {
        graph,
        profile,
        executions: ctx.executions(),
        evaluations: state.history.len(),
        best,
        seed_above: state.seed_above.map(|i| state.history[i].x.clone()),
        seed_below: state.seed_below.map(|i| state.history[i].x.clone()),
    })
}


#[cfg(test)]
mod props {
    use std::sync::OnceLock;

    use proptest::prelude::*;

    use super::*;
    use crate::backend::SimulatedBackend;
    use crate::bounding::{base_graph, feasibility_and_compensation, greedy_column_selection};
    use crate::catalog::demo_dataset;
    use crate::costmodel::{collect_profiles, fit, JoinRegressorKind};

    fn fixture() -> &'static (SimulatedBackend, LocalModel, QueryGraph) {
        static F: OnceLock<(SimulatedBackend, LocalModel, QueryGraph)> = OnceLock::new();
        F.get_or_init(|| {
            let (c, t) = demo_dataset();
            let be = SimulatedBackend::new(c, &t).unwrap();
            let model = fit(&collect_profiles(&be, 150, 3).unwrap(), JoinRegressorKind::Parametric, 4).unwrap();
            let sel = greedy_column_selection(be.catalog(), &["orders".to_string(), "customer".to_string()], 30_000.0);
            let g = feasibility_and_compensation(&base_graph(&sel), 60.0, &model, &be, Default::default())
                .unwrap()
                .graph;
            (be, model, g)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn search_respects_domains_window_and_monotonicity(y in 5.0f64..80.0, seed in any::<u64>()) {
            let (be, model, g) = fixture();
            let space = select_predicate_columns(g, be.catalog(), 2).unwrap();
            let cfg = SearchConfig { seed, stop_tolerance: 0.0, ..SearchConfig::default() };
            let ctx = SearchContext::new(g, &space, y, model, be, &cfg);
            let s1 = stage1_global(&ctx).unwrap();
            let best1 = s1.best().map(|e| e.score);
            let boxes: Vec<Vec<Dimension<f64>>> = [s1.seed_above, s1.seed_below]
                .into_iter()
                .flatten()
                .map(|i| local_box(&space, &s1.history[i].x, cfg.shrink, cfg.bucket_cap))
                .collect();
            let s2 = stage2_local(s1, &ctx).unwrap();
            let (a, b) = cfg.window;
            for e in &s2.history {
                prop_assert!(space.contains(&e.x));
                prop_assert_eq!(e.executed, e.predicted_cpu >= a * y && e.predicted_cpu <= b * y);
                if e.stage == 2 {
                    let inside = boxes.iter().any(|bx| {
                        e.x.iter().zip(bx).all(|(v, d)| d.lo <= *v as f64 && *v as f64 <= d.hi)
                    });
                    prop_assert!(inside, "{:?} outside every Stage-2 box", e.x);
                }
            }
            if let Some(b1) = best1 {
                prop_assert!(s2.best().unwrap().score >= b1);
            }
            prop_assert!(ctx.executions() < cfg.max_executions);
        }

        #[test]
        fn tuning_is_deterministic(y in 5.0f64..80.0, seed in any::<u64>()) {
            let (be, model, g) = fixture();
            let space = select_predicate_columns(g, be.catalog(), 2).unwrap();
            let cfg = SearchConfig { seed, ..SearchConfig::default() };
            let run = || tune(&SearchContext::new(g, &space, y, model, be, &cfg)).unwrap();
            let (first, second) = (run(), run());
            prop_assert!(first.executions <= cfg.max_executions);
            prop_assert_eq!(crate::translator::to_sql(&first.graph).unwrap(), crate::translator::to_sql(&second.graph).unwrap());
            prop_assert_eq!(first, second);
        }
    }
}
