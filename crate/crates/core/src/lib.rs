//! Evaluation library for 12-core template-guided prostate biopsy.
//!
//! Geometry lives in a fixed template frame (millimetres; x lateral, right
//! positive; y anterior positive; z toward the base). The modules build the
//! sextant protocol, simulate operators, score coverage, run the paired
//! statistics and plan cores.

pub mod analysis;
pub mod coverage;
pub mod error;
pub mod geometry;
pub mod io;
pub mod planner;
pub mod protocol;
pub mod sim;
pub mod stats;

pub use coverage::{
    score_biopsy, score_session, BiopsyScore, CoverageConfig, CoverageGrid, SessionScore,
};
pub use error::{Error, Result};
pub use geometry::{
    clip_segment_to_ellipsoid, rigid_align, zone_error, Cylinder, Ellipsoid, Mat3, Point3,
    RigidTransform, Segment, Sphere, Vec3,
};
pub use planner::{make_plan, Optimizer, Plan, PlanConfig};
pub use protocol::{
    build_protocol, default_gland, default_protocol, validate_protocol, Level, Placement,
    Position, ProtocolSpec, SectorId, SectorSpec, Side, Violation,
};
pub use sim::{
    simulate_cohort, simulate_session, simulate_trajectory, Cohort, CohortConfig, Modality,
    NoiseLevels, OperatorProfile, Session, Trajectory,
};
pub use stats::{paired_t_test, two_way_anova, variance_reproducibility_test, AnovaTable, PairedSample, TTestResult};
