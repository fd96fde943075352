//! Spiral toolpath planning on multiply connected triangle-mesh surfaces.
//!
//! The pipeline turns a genus-0 open surface with holes into a single
//! continuous, boundary-conforming spiral milling path:
//!
//! 1. [`slitmap`] maps the surface conformally onto a unit disk or annulus
//!    in which every hole becomes a concentric circular-arc slit.
//! 2. [`field_init`] builds an initial scalar field from the slit-domain
//!    radius through an optimized monotone radial profile.
//! 3. [`optimizer`] improves the field by topology-preserving radial motion
//!    of the domain mesh, keeping boundaries co-circular and faces upright.
//! 4. [`toolpath`] extracts an Archimedean spiral in the optimized domain
//!    and maps it back to the surface.
//! 5. [`metrics`] scores the result: length, smoothness, coverage
//!    redundancy, scallop consistency and impact indicators.
//!
//! All stages are deterministic: identical inputs produce bit-identical
//! outputs.

pub mod domain;
pub mod energy;
pub mod field_init;
pub mod fixtures;
pub mod mesh;
pub mod metrics;
pub mod optimizer;
pub mod slitmap;
mod sparse;
pub mod toolpath;

use std::path::PathBuf;

pub use domain::{DomainEmbedding, ScalarField, SlitDomain, SlitMode};
pub use energy::{CutterSpec, EnergyParams, EnergyReport};
pub use mesh::{Channel, TriMesh};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Coarse error class used by callers that map failures to process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Unreadable or malformed input (file, config, path data).
    BadInput,
    /// Geometrically valid input the method cannot operate on.
    Infeasible,
    /// Internal failure (solver breakdown, invariant violation).
    Internal,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("non-manifold edge ({a}, {b}) borders {count} faces")]
    NonManifold { a: usize, b: usize, count: usize },
    #[error("genus/boundary requirements violated: {0}")]
    Topology(String),
    #[error("{count} degenerate faces (area below threshold)")]
    DegenerateFaces { count: usize },
    #[error("mesh channel {0:?} missing")]
    MissingChannel(Channel),
    #[error("linear solve failed: {0}")]
    Solve(String),
    #[error("anchor lies on the boundary")]
    AnchorOnBoundary,
    #[error("anchor too close to boundary: distance {dist:.6}, minimum {min:.6}")]
    AnchorNearBoundary { dist: f64, min: f64 },
    #[error("infeasible initial profile: {0}")]
    InfeasibleProfile(String),
    #[error("profile feasibility violated: {count} inverted domain faces")]
    ProfileInversion { count: usize },
    #[error("mesh state invalid: {0}")]
    MeshStateInvalid(String),
    #[error("field is constant: every face gradient is degenerate")]
    FieldConstant,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("level spacing infeasible: {0}")]
    SpacingInfeasible(String),
    #[error("slit deflection infeasible: {0}")]
    SlitDeflection(String),
    #[error("toolpath is empty or too short: {0}")]
    EmptyPath(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            Io { .. } | Parse { .. } | InvalidParameter(_) | EmptyPath(_) => ErrorKind::BadInput,
            NonManifold { .. }
            | Topology(_)
            | DegenerateFaces { .. }
            | AnchorOnBoundary
            | AnchorNearBoundary { .. }
            | InfeasibleProfile(_)
            | ProfileInversion { .. }
            | FieldConstant
            | SpacingInfeasible(_)
            | SlitDeflection(_) => ErrorKind::Infeasible,
            MissingChannel(_) | Solve(_) | MeshStateInvalid(_) => ErrorKind::Internal,
        }
    }
}
