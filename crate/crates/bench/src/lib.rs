//! Fixtures shared by the criterion benchmarks.

use biopsy_core::{
    default_gland, default_protocol, simulate_cohort, CohortConfig, OperatorProfile, ProtocolSpec,
    Session,
};

pub fn protocol() -> ProtocolSpec {
    let g = default_gland();
    default_protocol(&g, biopsy_core::protocol::DEFAULT_PIVOT, 17.0).expect("default protocol")
}

/// Calibrated 14-operator cohort, as used by the comparison command.
pub fn cohort_sessions(seed: u64) -> Vec<Session> {
    let p = protocol();
    let cfg = CohortConfig::new(14, OperatorProfile::calibrated(3.5).expect("calibration"), seed);
    simulate_cohort(&cfg, &p).expect("cohort").sessions
}
