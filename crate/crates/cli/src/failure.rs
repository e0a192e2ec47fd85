//! Exit-code classification: 1 usage, 2 data, 3 numerical failure.

use carl_core::archgraph::{DatasetError, SynthError};
use carl_core::predictor::PredictorError;
use carl_core::report::ReportError;
use carl_core::search::SearchError;
use carl_core::tensor::TensorError;

pub const USAGE: u8 = 1;
pub const DATA: u8 = 2;
pub const NUMERIC: u8 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }

    pub fn usage(msg: impl std::fmt::Display) -> Self {
        Self::new(USAGE, anyhow::anyhow!("{msg}"))
    }

    pub fn data(msg: impl std::fmt::Display) -> Self {
        Self::new(DATA, anyhow::anyhow!("{msg}"))
    }

    pub fn numeric(msg: impl std::fmt::Display) -> Self {
        Self::new(NUMERIC, anyhow::anyhow!("{msg}"))
    }

    pub fn context(mut self, ctx: impl std::fmt::Display + Send + Sync + 'static) -> Self {
        self.error = self.error.context(ctx);
        self
    }
}

pub type Result<T> = std::result::Result<T, Failure>;

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::new(DATA, e)
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        let code = match e {
            DatasetError::Portion(_) => USAGE,
            _ => DATA,
        };
        Self::new(code, e)
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        Self::new(DATA, e)
    }
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        Self::new(DATA, e)
    }
}

impl From<TensorError> for Failure {
    fn from(e: TensorError) -> Self {
        Self::new(NUMERIC, e)
    }
}

impl From<PredictorError> for Failure {
    fn from(e: PredictorError) -> Self {
        let code = match e {
            PredictorError::Tensor(_) | PredictorError::Diverged { .. } => NUMERIC,
            PredictorError::Config(_) | PredictorError::TooFew(_) => USAGE,
            PredictorError::Checkpoint(_) | PredictorError::Manifest(_) | PredictorError::VocabMismatch { .. } => DATA,
        };
        Self::new(code, e)
    }
}

impl From<SearchError> for Failure {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::Predictor(p) => p.into(),
            SearchError::Config(_) => Self::new(USAGE, e),
            _ => Self::new(DATA, e),
        }
    }
}

impl From<carl_core::metrics::MetricError> for Failure {
    fn from(e: carl_core::metrics::MetricError) -> Self {
        Self::new(NUMERIC, e)
    }
}
