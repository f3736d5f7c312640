//! Seeded model of an operator performing 12-core sessions under 2D or 4D
//! guidance.
//!
//! Noise model: the tip lands at the target centre plus isotropic normal
//! noise (`sigma_tip`). The shaft is aimed through the entry-zone centre
//! plus an independent isotropic normal offset (`sigma_entry`), i.e. the
//! pivot-aligned direction is tilted about the tip. The two sigmas control
//! target and entry errors separately.
//!
//! Every trajectory draws from its own ChaCha8 stream seeded with
//! `mix(master_seed, operator stream, modality, sector index)`; see
//! [`stream_seed`]. The mixing function is fixed so cohorts are reproducible
//! across versions.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, Segment, Vec3};
use crate::protocol::{ProtocolSpec, SectorId, SectorSpec};

/// Mean target-zone errors (mm) reported for the 2D and 4D sessions.
pub const REPORTED_TARGET_MEAN_2D: f64 = 6.79;
pub const REPORTED_TARGET_MEAN_4D: f64 = 5.1;
/// Mean entry-zone errors (mm) reported for the 2D and 4D sessions.
pub const REPORTED_ENTRY_MEAN_2D: f64 = 5.28;
pub const REPORTED_ENTRY_MEAN_4D: f64 = 5.19;
/// 42 of 336 biopsies were left out of the paired analysis.
pub const DEFAULT_DROPOUT_RATE: f64 = 42.0 / 336.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "2D")]
    TwoD,
    #[serde(rename = "4D")]
    FourD,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::TwoD, Modality::FourD];

    fn tag(self) -> u64 {
        match self {
            Modality::TwoD => 2,
            Modality::FourD => 4,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::TwoD => "2D",
            Modality::FourD => "4D",
        })
    }
}

impl FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "2D" => Ok(Modality::TwoD),
            "4D" => Ok(Modality::FourD),
            _ => Err(Error::Validation(format!("unknown modality '{s}'"))),
        }
    }
}

/// Noise magnitudes (mm) for one guidance modality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevels {
    pub sigma_tip: f64,
    pub sigma_entry: f64,
}

impl NoiseLevels {
    pub const ZERO: NoiseLevels = NoiseLevels {
        sigma_tip: 0.0,
        sigma_entry: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma_tip", self.sigma_tip), ("sigma_entry", self.sigma_entry)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0 (got {v})")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorProfile {
    pub two_d: NoiseLevels,
    pub four_d: NoiseLevels,
}

impl OperatorProfile {
    pub fn uniform(levels: NoiseLevels) -> Self {
        OperatorProfile {
            two_d: levels,
            four_d: levels,
        }
    }

    pub fn noise(&self, m: Modality) -> NoiseLevels {
        match m {
            Modality::TwoD => self.two_d,
            Modality::FourD => self.four_d,
        }
    }

    /// Sigmas whose expected zone errors equal the reported mean target and
    /// entry errors, for ideal zones of radius `zone_radius`.
    pub fn calibrated(zone_radius: f64) -> Result<Self> {
        Ok(OperatorProfile {
            two_d: NoiseLevels {
                sigma_tip: calibrate_sigma(REPORTED_TARGET_MEAN_2D, zone_radius)?,
                sigma_entry: calibrate_sigma(REPORTED_ENTRY_MEAN_2D, zone_radius)?,
            },
            four_d: NoiseLevels {
                sigma_tip: calibrate_sigma(REPORTED_TARGET_MEAN_4D, zone_radius)?,
                sigma_entry: calibrate_sigma(REPORTED_ENTRY_MEAN_4D, zone_radius)?,
            },
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.two_d.validate()?;
        self.four_d.validate()
    }
}

/// One biopsy core: `segment.a` is the entry end, `segment.b` the tip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub sector: SectorId,
    pub segment: Segment,
}

impl Trajectory {
    pub fn entry(&self) -> Point3 {
        self.segment.a
    }

    pub fn tip(&self) -> Point3 {
        self.segment.b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub operator: u32,
    /// Repetition index when an operator performs several sessions per modality.
    pub repeat: u32,
    pub modality: Modality,
    pub trajectories: Vec<Trajectory>,
}

impl Session {
    /// Checks that every sector appears exactly once.
    pub fn validate(&self) -> Result<()> {
        let present: BTreeSet<SectorId> = self.trajectories.iter().map(|t| t.sector).collect();
        if present.len() != self.trajectories.len() {
            return Err(Error::Validation(format!(
                "operator {} {} session lists a sector twice",
                self.operator, self.modality
            )));
        }
        let missing: Vec<String> = SectorId::all()
            .into_iter()
            .filter(|s| !present.contains(s))
            .map(|s| s.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Validation(format!(
                "operator {} {} session is missing sector(s): {}",
                self.operator,
                self.modality,
                missing.join(", ")
            )));
        }
        Ok(())
    }

    pub fn trajectory(&self, sector: SectorId) -> Option<&Trajectory> {
        self.trajectories.iter().find(|t| t.sector == sector)
    }

    pub fn segments(&self) -> Vec<Segment> {
        self.trajectories.iter().map(|t| t.segment).collect()
    }
}

/// SplitMix64 finaliser.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for one trajectory: an order-sensitive SplitMix64 chain over
/// `(master_seed, operator_stream, modality, sector_index)`.
pub fn stream_seed(master_seed: u64, operator_stream: u64, modality: Modality, sector_index: u64) -> u64 {
    [operator_stream, modality.tag(), sector_index]
        .into_iter()
        .fold(mix64(master_seed), |acc, v| mix64(acc ^ mix64(v)))
}

const DROPOUT_STREAM: u64 = 0xD809_0A7E;

fn normal3<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    Vec3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

/// Simulates one core aimed at `sector`.
///
/// The tip noise is drawn first, then the entry noise, so both streams are
/// consumed identically whatever the sigmas are.
pub fn simulate_trajectory<R: Rng + ?Sized>(
    noise: &NoiseLevels,
    sector: &SectorSpec,
    pivot: Point3,
    core_length_mm: f64,
    rng: &mut R,
) -> Result<Trajectory> {
    noise.validate()?;
    let tip = sector.target_zone.center + normal3(rng) * noise.sigma_tip;
    let aim = sector.entry_zone.center + normal3(rng) * noise.sigma_entry;
    if tip.distance(pivot) <= 1e-9 {
        return Err(Error::SimulationDegenerate(format!(
            "tip coincides with the pivot for {}",
            sector.sector
        )));
    }
    let direction = (tip - aim).normalized().filter(|_| tip.distance(aim) > 1e-9).ok_or_else(|| {
        Error::SimulationDegenerate(format!("tip coincides with the aim point for {}", sector.sector))
    })?;
    let entry = tip - direction * core_length_mm;
    Ok(Trajectory {
        sector: sector.sector,
        segment: Segment::new(entry, tip)?,
    })
}

/// One full session: a trajectory for every sector, each from its own stream.
pub fn simulate_session(
    profile: &OperatorProfile,
    modality: Modality,
    protocol: &ProtocolSpec,
    operator: u32,
    repeat: u32,
    operator_stream: u64,
    master_seed: u64,
) -> Result<Session> {
    let noise = profile.noise(modality);
    let trajectories = protocol
        .sectors
        .iter()
        .map(|spec| {
            let seed = stream_seed(master_seed, operator_stream, modality, spec.sector.index() as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            simulate_trajectory(&noise, spec, protocol.pivot, protocol.core_length_mm, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Session {
        operator,
        repeat,
        modality,
        trajectories,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortConfig {
    pub n_operators: u32,
    pub sessions_per_modality: u32,
    /// One profile shared by everybody, or one per operator.
    pub profiles: Vec<OperatorProfile>,
    pub master_seed: u64,
    /// Fraction of biopsy pairs dropped from paired analyses; `None` keeps all.
    pub dropout_rate: Option<f64>,
}

impl CohortConfig {
    pub fn new(n_operators: u32, profile: OperatorProfile, master_seed: u64) -> Self {
        CohortConfig {
            n_operators,
            sessions_per_modality: 1,
            profiles: vec![profile],
            master_seed,
            dropout_rate: None,
        }
    }

    fn profile(&self, operator: u32) -> &OperatorProfile {
        if self.profiles.len() == 1 {
            &self.profiles[0]
        } else {
            &self.profiles[operator as usize]
        }
    }
}

/// Key identifying one 2D/4D biopsy pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairKey {
    pub operator: u32,
    pub repeat: u32,
    pub sector: SectorId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub master_seed: u64,
    /// Sessions ordered by operator, repeat, then 2D before 4D.
    pub sessions: Vec<Session>,
    /// Pairs left out of paired analyses (exclusion emulation).
    pub excluded: BTreeSet<PairKey>,
}

/// Matched 2D/4D cores for one operator, repeat and sector.
#[derive(Debug, Clone, Copy)]
pub struct BiopsyPair<'a> {
    pub key: PairKey,
    pub two_d: &'a Trajectory,
    pub four_d: &'a Trajectory,
}

/// Matched 2D/4D sessions for one operator and repeat.
#[derive(Debug, Clone, Copy)]
pub struct SessionPair<'a> {
    pub operator: u32,
    pub repeat: u32,
    pub two_d: &'a Session,
    pub four_d: &'a Session,
}

/// Matches 2D and 4D sessions by (operator, repeat). Every session must
/// have exactly one partner.
pub fn pair_sessions(sessions: &[Session]) -> Result<Vec<SessionPair<'_>>> {
    let mut out = Vec::new();
    let mut used = vec![false; sessions.len()];
    for (i, s) in sessions.iter().enumerate() {
        if s.modality != Modality::TwoD {
            continue;
        }
        let partners: Vec<usize> = sessions
            .iter()
            .enumerate()
            .filter(|(_, o)| {
                o.modality == Modality::FourD && o.operator == s.operator && o.repeat == s.repeat
            })
            .map(|(j, _)| j)
            .collect();
        match partners.as_slice() {
            [j] if !used[*j] && !used[i] => {
                used[i] = true;
                used[*j] = true;
                out.push(SessionPair {
                    operator: s.operator,
                    repeat: s.repeat,
                    two_d: s,
                    four_d: &sessions[*j],
                });
            }
            _ => {
                return Err(Error::Pairing(format!(
                    "operator {} repeat {}: expected exactly one 4D partner, found {}",
                    s.operator,
                    s.repeat,
                    partners.len()
                )))
            }
        }
    }
    if let Some(i) = used.iter().position(|u| !u) {
        let s = &sessions[i];
        return Err(Error::Pairing(format!(
            "operator {} repeat {} {} session has no partner",
            s.operator, s.repeat, s.modality
        )));
    }
    out.sort_by_key(|p| (p.operator, p.repeat));
    Ok(out)
}

/// Biopsy-level pairs across matched sessions, skipping `excluded` keys.
pub fn pair_biopsies<'a>(
    sessions: &'a [Session],
    excluded: &BTreeSet<PairKey>,
) -> Result<Vec<BiopsyPair<'a>>> {
    let mut out = Vec::new();
    for sp in pair_sessions(sessions)? {
        for sector in SectorId::all() {
            let key = PairKey {
                operator: sp.operator,
                repeat: sp.repeat,
                sector,
            };
            if excluded.contains(&key) {
                continue;
            }
            match (sp.two_d.trajectory(sector), sp.four_d.trajectory(sector)) {
                (Some(a), Some(b)) => out.push(BiopsyPair {
                    key,
                    two_d: a,
                    four_d: b,
                }),
                (None, None) => {}
                _ => {
                    return Err(Error::Pairing(format!(
                        "operator {} sector {sector} present in only one modality",
                        sp.operator
                    )))
                }
            }
        }
    }
    Ok(out)
}

impl Cohort {
    pub fn session_pairs(&self) -> Result<Vec<SessionPair<'_>>> {
        pair_sessions(&self.sessions)
    }

    pub fn biopsy_pairs(&self) -> Result<Vec<BiopsyPair<'_>>> {
        pair_biopsies(&self.sessions, &self.excluded)
    }

    pub fn n_biopsies(&self) -> usize {
        self.sessions.iter().map(|s| s.trajectories.len()).sum()
    }
}

/// Paired cohort: each operator performs a 2D then a 4D session on the same
/// sector list. Operators are simulated in parallel and merged in order.
pub fn simulate_cohort(config: &CohortConfig, protocol: &ProtocolSpec) -> Result<Cohort> {
    if config.n_operators < 1 {
        return Err(Error::Config("need at least one operator".into()));
    }
    if config.sessions_per_modality < 1 {
        return Err(Error::Config("need at least one session per modality".into()));
    }
    if config.profiles.len() != 1 && config.profiles.len() != config.n_operators as usize {
        return Err(Error::Config(format!(
            "expected 1 or {} operator profiles, got {}",
            config.n_operators,
            config.profiles.len()
        )));
    }
    for p in &config.profiles {
        p.validate()?;
    }
    if let Some(rate) = config.dropout_rate {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must be in [0, 1) (got {rate})")));
        }
    }

    let reps = config.sessions_per_modality;
    let per_operator: Vec<Vec<Session>> = (0..config.n_operators)
        .into_par_iter()
        .map(|op| {
            let profile = config.profile(op);
            let mut out = Vec::with_capacity(2 * reps as usize);
            for repeat in 0..reps {
                let stream = u64::from(op) * u64::from(reps) + u64::from(repeat);
                for modality in Modality::ALL {
                    out.push(simulate_session(
                        profile,
                        modality,
                        protocol,
                        op,
                        repeat,
                        stream,
                        config.master_seed,
                    )?);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let sessions: Vec<Session> = per_operator.into_iter().flatten().collect();

    let mut excluded = BTreeSet::new();
    if let Some(rate) = config.dropout_rate {
        let keys: Vec<PairKey> = sessions
            .iter()
            .filter(|s| s.modality == Modality::TwoD)
            .flat_map(|s| {
                s.trajectories.iter().map(move |t| PairKey {
                    operator: s.operator,
                    repeat: s.repeat,
                    sector: t.sector,
                })
            })
            .collect();
        let n_drop = (rate * keys.len() as f64).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(config.master_seed ^ mix64(DROPOUT_STREAM)));
        for i in sample(&mut rng, keys.len(), n_drop) {
            excluded.insert(keys[i]);
        }
    }

    Ok(Cohort {
        master_seed: config.master_seed,
        sessions,
        excluded,
    })
}

/// `E[max(0, |X| − r)]` for `X ~ N(0, σ²I₃)`.
///
/// With `u = r/σ`, the closed form over the Maxwell distribution of `|X|` is
/// `σ·(2·sqrt(2/π)·exp(−u²/2) − u·erfc(u/√2))`.
pub fn expected_zone_error(sigma: f64, radius: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let u = radius / sigma;
    let v = sigma
        * (2.0 * (2.0 / std::f64::consts::PI).sqrt() * (-0.5 * u * u).exp()
            - u * statrs::function::erf::erfc(u / std::f64::consts::SQRT_2));
    v.max(0.0)
}

/// Noise sigma whose expected zone error equals `target_mean_error`, by
/// bisection on [`expected_zone_error`] (monotone increasing in sigma).
pub fn calibrate_sigma(target_mean_error: f64, zone_radius: f64) -> Result<f64> {
    if !(target_mean_error >= 0.0 && target_mean_error.is_finite()) {
        return Err(Error::Config(format!(
            "target mean error must be finite and >= 0 (got {target_mean_error})"
        )));
    }
    if !(zone_radius >= 0.0 && zone_radius.is_finite()) {
        return Err(Error::Config(format!("zone radius must be >= 0 (got {zone_radius})")));
    }
    if target_mean_error == 0.0 {
        return Ok(0.0);
    }
    let f = |s: f64| expected_zone_error(s, zone_radius) - target_mean_error;
    let mut lo = 0.0;
    let mut hi = target_mean_error.max(zone_radius).max(1.0);
    while f(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
