//! Paired 2D/4D comparison of a cohort: error tests, reproducibility tests,
//! coverage comparisons and the location ANOVA.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::Serialize;

use crate::coverage::{score_biopsy, score_session, BiopsyScore, CoverageConfig, SessionScore};
use crate::error::{Error, Result};
use crate::protocol::{Level, Position, ProtocolSpec};
use crate::sim::{pair_biopsies, pair_sessions, Modality, PairKey, Session};
use crate::stats::{
    mean_sd, paired_t_test, two_way_anova, variance_reproducibility_test, AnovaTable,
    PairedSample, TTestResult,
};

/// Scores of one session, biopsies in session order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionEvaluation {
    pub operator: u32,
    pub repeat: u32,
    pub modality: Modality,
    pub biopsies: Vec<BiopsyScore>,
    pub coverage: SessionScore,
}

pub fn evaluate_sessions(
    sessions: &[Session],
    protocol: &ProtocolSpec,
    config: &CoverageConfig,
) -> Result<Vec<SessionEvaluation>> {
    config.validate()?;
    sessions
        .par_iter()
        .map(|s| {
            let (biopsies, coverage) = score_session(s, protocol, config)?;
            Ok(SessionEvaluation {
                operator: s.operator,
                repeat: s.repeat,
                modality: s.modality,
                biopsies,
                coverage,
            })
        })
        .collect()
}

/// Biopsy-level 2D/4D samples (first = 2D, second = 4D) with the sector
/// factors of each pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedErrors {
    pub keys: Vec<PairKey>,
    pub entry: PairedSample,
    pub target: PairedSample,
    pub levels: Vec<Level>,
    pub positions: Vec<Position>,
}

pub fn paired_errors(
    sessions: &[Session],
    excluded: &BTreeSet<PairKey>,
    protocol: &ProtocolSpec,
) -> Result<PairedErrors> {
    let pairs = pair_biopsies(sessions, excluded)?;
    let n = pairs.len();
    let (mut e2, mut e4, mut t2, mut t4) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    let mut labels = Vec::with_capacity(n);
    for p in &pairs {
        let spec = protocol.sector(p.key.sector).ok_or_else(|| {
            Error::Validation(format!("sector {} missing from protocol", p.key.sector))
        })?;
        let a = score_biopsy(p.two_d, spec, &protocol.gland);
        let b = score_biopsy(p.four_d, spec, &protocol.gland);
        e2.push(a.entry_error);
        e4.push(b.entry_error);
        t2.push(a.target_error);
        t4.push(b.target_error);
        labels.push(format!("op{:02}-r{}-{}", p.key.operator, p.key.repeat, p.key.sector));
    }
    Ok(PairedErrors {
        keys: pairs.iter().map(|p| p.key).collect(),
        entry: PairedSample::labelled(e2, e4, labels.clone())?,
        target: PairedSample::labelled(t2, t4, labels)?,
        levels: pairs.iter().map(|p| p.key.sector.level).collect(),
        positions: pairs.iter().map(|p| p.key.sector.position).collect(),
    })
}

/// One 2D-versus-4D comparison. `result` holds the test or the reason it
/// could not be computed (for example a zero-variance difference).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub name: &'static str,
    pub n: usize,
    pub mean_2d: f64,
    pub sd_2d: f64,
    pub mean_4d: f64,
    pub sd_4d: f64,
    pub result: std::result::Result<TTestResult, String>,
}

impl Comparison {
    fn new(name: &'static str, sample: &PairedSample, result: Result<TTestResult>) -> Self {
        let (mean_2d, sd_2d) = mean_sd(&sample.first);
        let (mean_4d, sd_4d) = mean_sd(&sample.second);
        Comparison {
            name,
            n: sample.len(),
            mean_2d,
            sd_2d,
            mean_4d,
            sd_4d,
            result: result.map_err(|e| e.to_string()),
        }
    }

    fn squared_deviation(name: &'static str, sample: &PairedSample) -> Self {
        let sq = PairedSample {
            first: crate::stats::squared_deviations(&sample.first),
            second: crate::stats::squared_deviations(&sample.second),
            labels: sample.labels.clone(),
        };
        let mut c = Comparison::new(name, &sq, variance_reproducibility_test(sample));
        c.n = sample.len();
        c
    }

    pub fn significant(&self, alpha: f64) -> Option<bool> {
        self.result.as_ref().ok().map(|t| t.significant(alpha))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnovaReport {
    /// Response analysed: 2D minus 4D error per biopsy pair.
    pub response: &'static str,
    pub table: std::result::Result<AnovaTable, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortComparison {
    pub n_pairs: usize,
    pub n_session_pairs: usize,
    /// Entry error, target error, their squared-deviation reproducibility
    /// tests, volume per biopsy and single-coverage fraction.
    pub comparisons: Vec<Comparison>,
    pub anova: Vec<AnovaReport>,
}

impl CohortComparison {
    pub fn get(&self, name: &str) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.name == name)
    }

    /// Comparisons and ANOVA tables that could not be computed.
    pub fn warnings(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .comparisons
            .iter()
            .filter_map(|c| c.result.as_ref().err().map(|e| format!("{}: {e}", c.name)))
            .collect();
        out.extend(
            self.anova
                .iter()
                .filter_map(|a| a.table.as_ref().err().map(|e| format!("anova {}: {e}", a.response))),
        );
        out
    }
}

pub const ENTRY_ERROR: &str = "entry_error_mm";
pub const TARGET_ERROR: &str = "target_error_mm";
pub const ENTRY_SQ_DEV: &str = "entry_sq_dev_mm2";
pub const TARGET_SQ_DEV: &str = "target_sq_dev_mm2";
pub const VOLUME_PER_BIOPSY: &str = "vol_per_biopsy_mm3";
pub const SINGLE_FRACTION: &str = "single_fraction";

fn differences(s: &PairedSample) -> Vec<f64> {
    s.first.iter().zip(&s.second).map(|(a, b)| a - b).collect()
}

/// Full paired comparison. Biopsy-level tests use the pairs not listed in
/// `excluded`; coverage tests pair whole sessions.
pub fn compare_cohort(
    sessions: &[Session],
    excluded: &BTreeSet<PairKey>,
    protocol: &ProtocolSpec,
    config: &CoverageConfig,
) -> Result<CohortComparison> {
    let errors = paired_errors(sessions, excluded, protocol)?;
    if errors.keys.is_empty() {
        return Err(Error::Pairing("no 2D/4D biopsy pairs to compare".into()));
    }
    let session_pairs = pair_sessions(sessions)?;
    let evaluated: Vec<(SessionScore, SessionScore)> = session_pairs
        .par_iter()
        .map(|p| {
            let a = score_session(p.two_d, protocol, config)?.1;
            let b = score_session(p.four_d, protocol, config)?.1;
            Ok((a, b))
        })
        .collect::<Result<_>>()?;
    let volume = PairedSample::new(
        evaluated.iter().map(|p| p.0.volume_per_biopsy).collect(),
        evaluated.iter().map(|p| p.1.volume_per_biopsy).collect(),
    )?;
    let fraction = PairedSample::new(
        evaluated.iter().map(|p| p.0.single_coverage_fraction).collect(),
        evaluated.iter().map(|p| p.1.single_coverage_fraction).collect(),
    )?;

    let comparisons = vec![
        Comparison::new(ENTRY_ERROR, &errors.entry, paired_t_test(&errors.entry)),
        Comparison::new(TARGET_ERROR, &errors.target, paired_t_test(&errors.target)),
        Comparison::squared_deviation(ENTRY_SQ_DEV, &errors.entry),
        Comparison::squared_deviation(TARGET_SQ_DEV, &errors.target),
        Comparison::new(VOLUME_PER_BIOPSY, &volume, paired_t_test(&volume)),
        Comparison::new(SINGLE_FRACTION, &fraction, paired_t_test(&fraction)),
    ];
    let anova = [(TARGET_ERROR, &errors.target), (ENTRY_ERROR, &errors.entry)]
        .into_iter()
        .map(|(response, s)| AnovaReport {
            response,
            table: two_way_anova(&differences(s), &errors.levels, &errors.positions)
                .map_err(|e| e.to_string()),
        })
        .collect();
    Ok(CohortComparison {
        n_pairs: errors.keys.len(),
        n_session_pairs: session_pairs.len(),
        comparisons,
        anova,
    })
}
