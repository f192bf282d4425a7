use thiserror::Error;

use crate::harness::HarnessError;
use crate::io::IoError;
use crate::model::ModelError;
use crate::ocp::OcpError;
use crate::polytope::PolytopeError;
use crate::qp::QpError;
use crate::synthesis::SynthesisError;

/// Umbrella error for callers that drive the whole pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Ocp(#[from] OcpError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Io(#[from] IoError),
}
