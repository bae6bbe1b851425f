//! Tracking eigenvalue hypersurfaces of parametric elliptic eigenproblems.
//!
//! The pipeline solves the discrete eigenproblem at sparse-grid parameter
//! points ([`snapshot`]), matches neighbouring snapshots with an optimal
//! assignment ([`matching`]), checks each match through the projection
//! matrix ([`verification`]), refines where checks fail ([`refinement`]),
//! turns local matchings into global surface labels ([`propagation`]) and
//! interpolates the labeled samples ([`surrogate`]).

pub mod banded;
pub mod config;
pub mod delaunay;
pub mod eigensolver;
pub mod expr;
pub mod fem;
pub mod grid;
pub mod matching;
pub mod propagation;
pub mod refinement;
pub mod report;
pub mod snapshot;
pub mod surrogate;
pub mod verification;

pub use config::{parse_config, CoeffSpec, ConfigError, RunConfig, SymMat2, Window};
pub use eigensolver::{solve_window, SolverError, WindowSpectrum};
pub use fem::{assemble_mass, assemble_stiffness, build_mesh, FemError, Mesh, SymmetricSparseMatrix};
pub use grid::{
    forward_points, gamma_set, midpoint_toward, neighbours, tensor_grid, DyadicCoord, GridError, ParamBox, ParamPoint,
};
pub use matching::{apriori_match, cost_matrix, solve_assignment, Assignment, CostMatrix, MatchError, MatchedPair};
pub use propagation::{
    count_wrongly_matched, error_table, label_run, reference_solution, ErrorRow, MatchGraph, PropagationError,
    SurfaceLabeling,
};
pub use refinement::{run_adaptive, LevelRecord, RefineError, RunState, Termination};
pub use report::{emit_reports, ReportError, RunArtifacts};
pub use snapshot::{Snapshot, SnapshotError, SnapshotSource, SnapshotStore};
pub use surrogate::{Surrogate, SurrogateError};
pub use verification::{verify, CertificationReport, Verdict};

/// Any error the pipeline can raise.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
