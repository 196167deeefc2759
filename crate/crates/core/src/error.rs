use thiserror::Error;

use crate::mesh::Mesh;

/// Errors produced anywhere in the inversion pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// The mesher failed to produce an acceptable triangulation. When the
    /// failure happened after relaxation started, the last mesh and the
    /// displacement norm of the final iteration are attached.
    #[error("meshing error: {message}")]
    Mesh {
        message: String,
        displacement: Option<f64>,
        last_mesh: Option<Box<Mesh>>,
    },

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("linear algebra error: {0}")]
    LinearAlgebra(String),

    #[error("instability at step {step}: {reason}")]
    Stability { step: usize, reason: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("sampler aborted: {0}")]
    SamplerAbort(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn mesh(message: impl Into<String>) -> Self {
        Error::Mesh {
            message: message.into(),
            displacement: None,
            last_mesh: None,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
