use std::path::PathBuf;

use thiserror::Error;

use crate::backend::AdapterError;
use crate::querygraph::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("invalid query graph: {}", format_violations(.0))]
    InvalidGraph(Vec<Violation>),
    #[error("trace ordering violation at record {record_id}: timestamp {timestamp} < {previous}")]
    Ordering {
        record_id: String,
        timestamp: i64,
        previous: i64,
    },
    #[error("backend error: {0}")]
    Backend(String),
    #[error("adapter error: {0}")]
    Adapter(#[from] AdapterError),
    #[error("model error: {0}")]
    Model(String),
    #[error("infeasible: {code}: {detail}")]
    Infeasible { code: &'static str, detail: String },
    #[error("unsupported SQL: {0}")]
    OutOfSubset(String),
    #[error("no tunable predicates")]
    NoTunablePredicates,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn infeasible(code: &'static str, detail: impl Into<String>) -> Self {
        Error::Infeasible {
            code,
            detail: detail.into(),
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
