//! Local performance models: per-operator parametric CPU predictors fitted
//! by least squares from profiling runs, an optional tree-ensemble join
//! regressor, and query-level aggregation over probed cardinalities.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{CardinalityEstimate, ExecutionBackend};
use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::gbdt::{BoostParams, TreeEnsemble};
use crate::numeric::{median, nonneg_least_squares, Scalar, SolveError};
use crate::querygraph::{sample_with_rng, ExprKind, NodeId, NodeKind, QueryGraph, SampleBounds};

/// Inputs of the hash-join predictor. `ratio` is build over probe with the
/// probe side floored at 1; `log_build` is `ln(1 + build)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JoinFeatures<F> {
    pub build: F,
    pub probe: F,
    pub ratio: F,
    pub log_build: F,
    /// Output rows times output width.
    pub materialize: F,
    pub tasks: F,
    pub keys: F,
}

impl<F: Scalar> JoinFeatures<F> {
    pub fn new(build: u64, probe: u64, output: u64, width: usize, tasks: u32, keys: usize) -> Self {
        let b = F::from_count(build);
        let p = F::from_count(probe);
        JoinFeatures {
            build: b,
            probe: p,
            ratio: b / p.max(F::one()),
            log_build: b.ln_1p(),
            materialize: F::from_count(output) * F::from_count(width as u64),
            tasks: F::from_count(tasks as u64),
            keys: F::from_count(keys as u64),
        }
    }

    /// The six regressor inputs.
    pub fn vector(&self) -> Vec<F> {
        vec![self.build, self.probe, self.ratio, self.log_build, self.materialize, self.tasks]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OperatorFeatures<F> {
    Scan { rows: F, bytes_per_row: F },
    Filter { rows_in: F, predicates: F },
    EvalScalar { expr: ExprKind, rows_in: F, repeat: F },
    Sort { rows: F, width: F },
    Join(JoinFeatures<F>),
    Aggregate { rows_in: F, rows_out: F, keys: F },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    Scan,
    Filter,
    Eval(ExprKind),
    Sort,
    Join,
    Aggregate,
}

impl<F: Scalar> OperatorFeatures<F> {
    pub fn model_kind(&self) -> ModelKind {
        match self {
            OperatorFeatures::Scan { .. } => ModelKind::Scan,
            OperatorFeatures::Filter { .. } => ModelKind::Filter,
            OperatorFeatures::EvalScalar { expr, .. } => ModelKind::Eval(*expr),
            OperatorFeatures::Sort { .. } => ModelKind::Sort,
            OperatorFeatures::Join(_) => ModelKind::Join,
            OperatorFeatures::Aggregate { .. } => ModelKind::Aggregate,
        }
    }

    /// Regression design row of the parametric form.
    fn design(&self) -> Vec<F> {
        match *self {
            OperatorFeatures::Scan { rows, bytes_per_row } => vec![rows * bytes_per_row],
            OperatorFeatures::Filter { rows_in, predicates } => vec![rows_in * predicates, predicates],
            OperatorFeatures::EvalScalar { rows_in, repeat, .. } => vec![rows_in * repeat, repeat],
            OperatorFeatures::Sort { rows, width } => {
                let n_log_n = if rows > F::zero() { rows * rows.max(F::lit(2.0)).log2() } else { F::zero() };
                vec![n_log_n, rows * width, F::one()]
            }
            OperatorFeatures::Join(j) => vec![j.build * j.keys, j.probe * j.keys, j.tasks, j.materialize],
            OperatorFeatures::Aggregate { rows_in, rows_out, keys } => {
                vec![rows_in, rows_out * keys, F::one()]
            }
        }
    }
}

/// Fitted constants per operator kind; `None` when the kind was not fitted.
/// Hash and fetch unit costs are folded into the join coefficients.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OperatorCoefficients<F> {
    /// α_s per row-byte.
    #[serde(skip_serializing_if = "Option::is_none", default = "none")]
    pub scan: Option<F>,
    /// (α per row-application, β per application).
    #[serde(skip_serializing_if = "Option::is_none", default = "none")]
    pub filter: Option<[F; 2]>,
    #[serde(skip_serializing_if = "Option::is_none", default = "none")]
    pub eval_arith: Option<[F; 2]>,
    #[serde(skip_serializing_if = "Option::is_none", default = "none")]
    pub eval_string: Option<[F; 2]>,
    #[serde(skip_serializing_if = "Option::is_none", default = "none")]
    pub eval_date: Option<[F; 2]>,
    /// (α n·log₂n, β n·width, γ).
    #[serde(skip_serializing_if = "Option::is_none", default = "none")]
    pub sort: Option<[F; 3]>,
    /// (α build·keys, β probe·keys, δ per task).
    #[serde(skip_serializing_if = "Option::is_none", default = "none")]
    pub join_match: Option<[F; 3]>,
    /// ε per output value.
    #[serde(skip_serializing_if = "Option::is_none", default = "none")]
    pub join_material: Option<F>,
    /// (α input row, β output row·key, γ).
    #[serde(skip_serializing_if = "Option::is_none", default = "none")]
    pub aggregate: Option<[F; 3]>,
}

fn none<T>() -> Option<T> {
    None
}

impl<F: Scalar> OperatorCoefficients<F> {
    pub fn eval(&self, kind: ExprKind) -> Option<[F; 2]> {
        match kind {
            ExprKind::Arith => self.eval_arith,
            ExprKind::String => self.eval_string,
            ExprKind::Date => self.eval_date,
        }
    }

    fn vector(&self, kind: ModelKind) -> Option<Vec<F>> {
        match kind {
            ModelKind::Scan => self.scan.map(|a| vec![a]),
            ModelKind::Filter => self.filter.map(|c| c.to_vec()),
            ModelKind::Eval(e) => self.eval(e).map(|c| c.to_vec()),
            ModelKind::Sort => self.sort.map(|c| c.to_vec()),
            ModelKind::Join => Some(vec![
                self.join_match?[0],
                self.join_match?[1],
                self.join_match?[2],
                self.join_material?,
            ]),
            ModelKind::Aggregate => self.aggregate.map(|c| c.to_vec()),
        }
    }

    fn set(&mut self, kind: ModelKind, c: &[F]) {
        match kind {
            ModelKind::Scan => self.scan = Some(c[0]),
            ModelKind::Filter => self.filter = Some([c[0], c[1]]),
            ModelKind::Eval(ExprKind::Arith) => self.eval_arith = Some([c[0], c[1]]),
            ModelKind::Eval(ExprKind::String) => self.eval_string = Some([c[0], c[1]]),
            ModelKind::Eval(ExprKind::Date) => self.eval_date = Some([c[0], c[1]]),
            ModelKind::Sort => self.sort = Some([c[0], c[1], c[2]]),
            ModelKind::Join => {
                self.join_match = Some([c[0], c[1], c[2]]);
                self.join_material = Some(c[3]);
            }
            ModelKind::Aggregate => self.aggregate = Some([c[0], c[1], c[2]]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum JoinRegressor<F> {
    Parametric,
    TreeEnsemble(TreeEnsemble<F>),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta<F> {
    pub samples: u64,
    /// In-sample mean relative error over all samples.
    pub mean_relative_error: F,
    pub median_relative_error: F,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalModel<F> {
    pub coefficients: OperatorCoefficients<F>,
    pub join_regressor: JoinRegressor<F>,
    /// Task count joins were profiled with.
    pub tasks: u32,
    pub meta: TrainingMeta<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileSample<F> {
    pub features: OperatorFeatures<F>,
    pub cpu_time_ms: F,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum JoinRegressorKind {
    #[default]
    Parametric,
    TreeEnsemble,
}

/// Column that must stay in every fit: the leading per-row term. Dropping
/// it means the samples cannot identify the form.
const REQUIRED_COLUMNS: &[usize] = &[0];

fn fit_kind<F: Scalar>(kind: ModelKind, samples: &[&ProfileSample<F>]) -> Result<Vec<F>> {
    if samples.len() < 2 {
        return Err(Error::Model(format!(
            "insufficient samples for {kind:?}: {} < 2",
            samples.len()
        )));
    }
    let a: Vec<Vec<F>> = samples.iter().map(|s| s.features.design()).collect();
    let y: Vec<F> = samples.iter().map(|s| s.cpu_time_ms).collect();
    if a[0].len() > 1 && a.iter().all(|r| *r == a[0]) {
        return Err(Error::Model(format!("degenerate design for {kind:?}: all features equal")));
    }
    match nonneg_least_squares(&a, &y, REQUIRED_COLUMNS) {
        Ok(c) if c.iter().all(|v| v.is_finite()) => Ok(c),
        Ok(_) => Err(Error::Model(format!("non-finite fit for {kind:?}"))),
        Err(SolveError::RankDeficient(_)) => {
            Err(Error::Model(format!("degenerate design for {kind:?}")))
        }
        Err(SolveError::Shape) => Err(Error::Model(format!("bad design shape for {kind:?}"))),
    }
}

/// Least-squares fit of every operator kind present in `samples`.
pub fn fit<F: Scalar>(samples: &[ProfileSample<F>], join: JoinRegressorKind, tasks: u32) -> Result<LocalModel<F>> {
    if samples.is_empty() {
        return Err(Error::Model("no profiling samples".into()));
    }
    let mut groups: BTreeMap<ModelKind, Vec<&ProfileSample<F>>> = BTreeMap::new();
    for s in samples {
        if !(s.cpu_time_ms >= F::zero()) {
            return Err(Error::Model("negative measured cpu".into()));
        }
        groups.entry(s.features.model_kind()).or_default().push(s);
    }
    let mut coefficients = OperatorCoefficients::default();
    for (kind, group) in &groups {
        let c = fit_kind(*kind, group)?;
        coefficients.set(*kind, &c);
    }
    let join_regressor = match join {
        JoinRegressorKind::Parametric => JoinRegressor::Parametric,
        JoinRegressorKind::TreeEnsemble => {
            let rows: Vec<&ProfileSample<F>> = groups.get(&ModelKind::Join).cloned().unwrap_or_default();
            if rows.len() < 2 {
                return Err(Error::Model("insufficient join samples for the tree ensemble".into()));
            }
            let x: Vec<Vec<F>> = rows
                .iter()
                .map(|s| match s.features {
                    OperatorFeatures::Join(j) => j.vector(),
                    _ => unreachable!("grouped by kind"),
                })
                .collect();
            let y: Vec<F> = rows.iter().map(|s| s.cpu_time_ms).collect();
            JoinRegressor::TreeEnsemble(TreeEnsemble::fit(&x, &y, BoostParams::default()))
        }
    };
    let mut model = LocalModel {
        coefficients,
        join_regressor,
        tasks,
        meta: TrainingMeta::default(),
    };
    let errors: Vec<F> = samples
        .iter()
        .map(|s| {
            let p = model.predict_operator(&s.features)?;
            Ok(relative_error(p, s.cpu_time_ms))
        })
        .collect::<Result<_>>()?;
    model.meta = TrainingMeta {
        samples: samples.len() as u64,
        mean_relative_error: errors.iter().fold(F::zero(), |a, b| a + *b) / F::from_count(errors.len() as u64),
        median_relative_error: median(&errors).unwrap_or_default(),
    };
    Ok(model)
}

/// `|p − y| / y`, with both sides floored at 1 µs.
pub fn relative_error<F: Scalar>(predicted: F, measured: F) -> F {
    let floor = F::lit(1e-3);
    (predicted - measured).abs() / measured.max(floor)
}

impl<F: Scalar> LocalModel<F> {
    pub fn predict_operator(&self, features: &OperatorFeatures<F>) -> Result<F> {
        let kind = features.model_kind();
        let raw = match (features, &self.join_regressor) {
            (OperatorFeatures::Join(j), JoinRegressor::TreeEnsemble(t)) => t.predict(&j.vector()),
            _ => {
                let c = self
                    .coefficients
                    .vector(kind)
                    .ok_or_else(|| Error::Model(format!("no fitted coefficients for {kind:?}")))?;
                features
                    .design()
                    .iter()
                    .zip(&c)
                    .fold(F::zero(), |s, (x, c)| s + *x * *c)
            }
        };
        Ok(if raw.is_finite() { raw.max(F::zero()) } else { F::zero() })
    }

    /// Sum of per-node predictions.
    pub fn predict_query(&self, g: &QueryGraph, catalog: &Catalog, cards: &CardinalityEstimate) -> Result<F> {
        let mut total = F::zero();
        for id in g.post_order() {
            let f = node_features(g, catalog, cards, self.tasks, id)?;
            total += self.predict_operator(&f)?;
        }
        Ok(total)
    }

    /// Predicted cost of one application of `kind` over `rows` input rows.
    pub fn eval_unit_cost(&self, kind: ExprKind, rows: u64) -> Option<F> {
        let f = OperatorFeatures::EvalScalar {
            expr: kind,
            rows_in: F::from_count(rows),
            repeat: F::one(),
        };
        self.coefficients.eval(kind)?;
        self.predict_operator(&f).ok()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("model file: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

fn card(cards: &CardinalityEstimate, id: NodeId) -> Result<u64> {
    cards
        .get(id)
        .ok_or_else(|| Error::Model(format!("missing cardinality for {id}")))
}

/// Features of node `id` from graph attributes and per-node output counts.
pub fn node_features<F: Scalar>(
    g: &QueryGraph,
    catalog: &Catalog,
    cards: &CardinalityEstimate,
    tasks: u32,
    id: NodeId,
) -> Result<OperatorFeatures<F>> {
    let children = g.children(id);
    let child_rows = |i: usize| card(cards, children[i]);
    Ok(match g.kind(id) {
        NodeKind::Scan { table, columns } => {
            let ts = catalog
                .table(table)
                .ok_or_else(|| Error::Model(format!("unknown table `{table}`")))?;
            let bytes: u64 = columns
                .iter()
                .map(|c| ts.column(c).map(|c| c.bytes_per_value).unwrap_or(0))
                .sum();
            OperatorFeatures::Scan {
                rows: F::from_count(card(cards, id)?),
                bytes_per_row: F::from_count(bytes),
            }
        }
        NodeKind::Filter { predicates } => OperatorFeatures::Filter {
            rows_in: F::from_count(child_rows(0)?),
            predicates: F::from_count(predicates.len() as u64),
        },
        NodeKind::EvalScalar { expr, repeat, .. } => OperatorFeatures::EvalScalar {
            expr: *expr,
            rows_in: F::from_count(child_rows(0)?),
            repeat: F::from_count(*repeat as u64),
        },
        NodeKind::Sort { .. } => OperatorFeatures::Sort {
            rows: F::from_count(child_rows(0)?),
            width: F::from_count(g.output_width(id) as u64),
        },
        NodeKind::Join { .. } => {
            let (l, r) = (child_rows(0)?, child_rows(1)?);
            let (build, probe) = if l <= r { (l, r) } else { (r, l) };
            OperatorFeatures::Join(JoinFeatures::new(
                build,
                probe,
                card(cards, id)?,
                g.output_width(id),
                tasks,
                1,
            ))
        }
        NodeKind::Aggregate { group_by, .. } => OperatorFeatures::Aggregate {
            rows_in: F::from_count(child_rows(0)?),
            rows_out: F::from_count(card(cards, id)?),
            keys: F::from_count(group_by.len() as u64),
        },
    })
}

/// Profiling harness bounds: every operator kind appears regularly.
pub fn profiling_bounds() -> SampleBounds {
    SampleBounds {
        max_joins: 3,
        max_aggs: 2,
        max_sorts: 2,
        max_evals: 1,
    }
}

/// Executes `n_queries` random graphs and emits one sample per operator.
pub fn collect_profiles<F: Scalar>(
    backend: &dyn ExecutionBackend,
    n_queries: usize,
    seed: u64,
) -> Result<Vec<ProfileSample<F>>> {
    collect_profiles_with(backend, n_queries, seed, profiling_bounds())
}

pub fn collect_profiles_with<F: Scalar>(
    backend: &dyn ExecutionBackend,
    n_queries: usize,
    seed: u64,
    bounds: SampleBounds,
) -> Result<Vec<ProfileSample<F>>> {
    let catalog = backend.catalog();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..n_queries {
        let g = sample_with_rng(catalog, bounds, &mut rng);
        let profile = backend.execute(&g)?;
        let cards = CardinalityEstimate {
            rows: profile.per_operator.iter().map(|s| (s.node, s.output_rows)).collect(),
        };
        for op in &profile.per_operator {
            out.push(ProfileSample {
                features: node_features(&g, catalog, &cards, backend.parallel_tasks(), op.node)?,
                cpu_time_ms: F::lit(op.cpu_time_ms),
            });
        }
    }
    Ok(out)
}
