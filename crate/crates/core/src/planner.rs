//! Coverage-maximising core placement under the shared transrectal pivot.
//!
//! Candidates are lattice targets inside the gland; each induces a core that
//! ends at the target and runs back toward the pivot, exactly like the
//! protocol cores. Coverage is always counted with
//! [`CoverageGrid::cylinder_voxels`], so plan scores and session scores share
//! one implementation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coverage::{
    exploration_cylinder, rasterize_segments, score_grid, CoverageConfig, CoverageGrid, SessionScore,
    DEFAULT_RADIUS_MM, DEFAULT_VOXEL_MM,
};
use crate::error::{Error, Result};
use crate::geometry::{Ellipsoid, Point3, Segment, Vec3};
use crate::protocol::{ProtocolSpec, DEFAULT_CORE_LENGTH_MM, DEFAULT_PIVOT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Optimizer {
    Greedy,
    Anneal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub n_cores: usize,
    pub spacing_mm: f64,
    pub pivot: Point3,
    pub core_length_mm: f64,
    pub radius_mm: f64,
    pub voxel_mm: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub anneal_steps: usize,
    pub cooling: f64,
    /// Initial annealing temperature, in mm³ of coverage.
    pub initial_temperature: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            n_cores: 12,
            spacing_mm: 3.0,
            pivot: DEFAULT_PIVOT,
            core_length_mm: DEFAULT_CORE_LENGTH_MM,
            radius_mm: DEFAULT_RADIUS_MM,
            voxel_mm: DEFAULT_VOXEL_MM,
            optimizer: Optimizer::Greedy,
            seed: 0,
            anneal_steps: 200,
            cooling: 0.95,
            initial_temperature: 50.0,
        }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cores < 1 {
            return Err(Error::Config("plan needs at least one core".into()));
        }
        if !(1.0..=10.0).contains(&self.spacing_mm) {
            return Err(Error::Config(format!(
                "candidate spacing must be in [1, 10] mm (got {})",
                self.spacing_mm
            )));
        }
        if !(self.core_length_mm > 0.0 && self.core_length_mm.is_finite()) {
            return Err(Error::Config("core length must be > 0".into()));
        }
        if !(self.cooling > 0.0 && self.cooling < 1.0) {
            return Err(Error::Config(format!(
                "cooling ratio must be in (0, 1) (got {})",
                self.cooling
            )));
        }
        if !self.pivot.is_finite() {
            return Err(Error::Config("pivot must be finite".into()));
        }
        self.coverage().validate()
    }

    pub fn coverage(&self) -> CoverageConfig {
        CoverageConfig {
            radius_mm: self.radius_mm,
            voxel_mm: self.voxel_mm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannedCore {
    pub target: Point3,
    pub segment: Segment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub cores: Vec<PlannedCore>,
    /// Union coverage of all cores, mm³.
    pub union_volume: f64,
    /// Coverage added by each greedy pick, mm³ (empty for non-greedy plans).
    pub marginal_gains: Vec<f64>,
}

impl Plan {
    pub fn segments(&self) -> Vec<Segment> {
        self.cores.iter().map(|c| c.segment).collect()
    }
}

/// Core of `core_length` ending at `target`, directed away from `pivot`.
pub fn induced_core(pivot: Point3, target: Point3, core_length: f64) -> Result<PlannedCore> {
    let dir = (target - pivot)
        .normalized()
        .ok_or_else(|| Error::PlanningInfeasible("target coincides with the pivot".into()))?;
    Ok(PlannedCore {
        target,
        segment: Segment::new(target - dir * core_length, target)?,
    })
}

/// Lattice targets strictly inside the gland, centred on the gland centre,
/// ordered by z, then y, then x.
pub fn candidate_targets(gland: &Ellipsoid, spacing: f64) -> Vec<Point3> {
    let (lo, hi) = gland.bounding_box();
    let c = gland.center;
    let steps = |lo: f64, hi: f64, c: f64| {
        let first = ((lo - c) / spacing).ceil() as i64;
        let last = ((hi - c) / spacing).floor() as i64;
        first..=last
    };
    let mut out = Vec::new();
    for k in steps(lo.z, hi.z, c.z) {
        for j in steps(lo.y, hi.y, c.y) {
            for i in steps(lo.x, hi.x, c.x) {
                let p = c + Vec3::new(i as f64, j as f64, k as f64) * spacing;
                if gland.strictly_contains(p) {
                    out.push(p);
                }
            }
        }
    }
    out
}

struct Candidate {
    core: PlannedCore,
    voxels: Vec<u32>,
}

fn core_voxels(grid: &CoverageGrid, gland: &Ellipsoid, core: &PlannedCore, radius: f64) -> Vec<u32> {
    exploration_cylinder(&core.segment, gland, radius)
        .map(|c| grid.cylinder_voxels(&c, gland))
        .unwrap_or_default()
}

/// Greedy maximisation of union coverage: each round adds the candidate with
/// the largest marginal voxel gain, ties going to the lowest candidate index.
pub fn greedy_plan(gland: &Ellipsoid, config: &PlanConfig) -> Result<Plan> {
    config.validate()?;
    if gland.contains(config.pivot) {
        return Err(Error::PlanningInfeasible("pivot lies inside the gland".into()));
    }
    let grid = CoverageGrid::for_gland(gland, config.voxel_mm)?;
    let candidates: Vec<Candidate> = candidate_targets(gland, config.spacing_mm)
        .into_par_iter()
        .filter_map(|t| {
            let core = induced_core(config.pivot, t, config.core_length_mm).ok()?;
            gland.clip_segment(&core.segment)?;
            let voxels = core_voxels(&grid, gland, &core, config.radius_mm);
            Some(Candidate { core, voxels })
        })
        .collect();
    if candidates.len() < config.n_cores {
        return Err(Error::PlanningInfeasible(format!(
            "{} feasible candidates for {} cores",
            candidates.len(),
            config.n_cores
        )));
    }

    let voxel_volume = grid.voxel_volume();
    let mut covered = vec![false; grid.counts.len()];
    let mut taken = vec![false; candidates.len()];
    let mut cores = Vec::with_capacity(config.n_cores);
    let mut gains = Vec::with_capacity(config.n_cores);
    let mut n_covered = 0usize;
    for _ in 0..config.n_cores {
        let marginal: Vec<usize> = candidates
            .par_iter()
            .map(|c| c.voxels.iter().filter(|&&v| !covered[v as usize]).count())
            .collect();
        let mut best: Option<(usize, usize)> = None;
        for (i, &g) in marginal.iter().enumerate() {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|(_, bg)| g > bg) {
                best = Some((i, g));
            }
        }
        let (i, g) = best.expect("enough candidates checked above");
        taken[i] = true;
        for &v in &candidates[i].voxels {
            covered[v as usize] = true;
        }
        n_covered += g;
        cores.push(candidates[i].core);
        gains.push(g as f64 * voxel_volume);
    }
    Ok(Plan {
        cores,
        union_volume: n_covered as f64 * voxel_volume,
        marginal_gains: gains,
    })
}

/// Scores a plan through the coverage-metrics path.
pub fn evaluate_plan(plan: &Plan, gland: &Ellipsoid, config: &CoverageConfig) -> Result<SessionScore> {
    let grid = rasterize_segments(&plan.segments(), gland, config)?;
    Ok(score_grid(&grid))
}

/// Simulated annealing over target perturbations of at most `spacing_mm`
/// per axis, with geometric cooling. The best plan seen is returned, so the
/// output never covers less than the input.
pub fn anneal_refine(plan: &Plan, gland: &Ellipsoid, config: &PlanConfig) -> Result<Plan> {
    config.validate()?;
    if config.anneal_steps == 0 || plan.cores.is_empty() {
        return Ok(plan.clone());
    }
    let grid = CoverageGrid::for_gland(gland, config.voxel_mm)?;
    let voxel_volume = grid.voxel_volume();
    let mut counts = vec![0u16; grid.counts.len()];
    let mut lists: Vec<Vec<u32>> = plan
        .cores
        .iter()
        .map(|c| core_voxels(&grid, gland, c, config.radius_mm))
        .collect();
    for l in &lists {
        for &v in l {
            counts[v as usize] += 1;
        }
    }
    let mut n_covered = counts.iter().filter(|&&c| c > 0).count();
    let mut cores = plan.cores.clone();
    let mut best = (n_covered, cores.clone());
    let start_covered = n_covered;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut temperature = config.initial_temperature;
    let s = config.spacing_mm;
    for _ in 0..config.anneal_steps {
        let idx = rng.random_range(0..cores.len());
        let offset = Vec3::new(
            rng.random_range(-s..=s),
            rng.random_range(-s..=s),
            rng.random_range(-s..=s),
        );
        let accept_draw: f64 = rng.random();
        let target = cores[idx].target + offset;
        temperature *= config.cooling;
        if !gland.strictly_contains(target) {
            continue;
        }
        let Ok(core) = induced_core(config.pivot, target, config.core_length_mm) else {
            continue;
        };
        if gland.clip_segment(&core.segment).is_none() {
            continue;
        }
        let new_list = core_voxels(&grid, gland, &core, config.radius_mm);

        let mut lost = 0usize;
        for &v in &lists[idx] {
            counts[v as usize] -= 1;
            if counts[v as usize] == 0 {
                lost += 1;
            }
        }
        let mut gained = 0usize;
        for &v in &new_list {
            if counts[v as usize] == 0 {
                gained += 1;
            }
            counts[v as usize] += 1;
        }
        let delta = (gained as f64 - lost as f64) * voxel_volume;
        let accept = delta >= 0.0 || accept_draw < (delta / temperature.max(1e-300)).exp();
        if accept {
            n_covered = n_covered + gained - lost;
            lists[idx] = new_list;
            cores[idx] = core;
            if n_covered > best.0 {
                best = (n_covered, cores.clone());
            }
        } else {
            for &v in &new_list {
                counts[v as usize] -= 1;
            }
            for &v in &lists[idx] {
                counts[v as usize] += 1;
            }
        }
    }

    if best.0 <= start_covered {
        return Ok(plan.clone());
    }
    Ok(Plan {
        cores: best.1,
        union_volume: best.0 as f64 * voxel_volume,
        marginal_gains: Vec::new(),
    })
}

/// Greedy plan, refined by annealing when the config asks for it.
pub fn make_plan(gland: &Ellipsoid, config: &PlanConfig) -> Result<Plan> {
    let greedy = greedy_plan(gland, config)?;
    match config.optimizer {
        Optimizer::Greedy => Ok(greedy),
        Optimizer::Anneal => anneal_refine(&greedy, gland, config),
    }
}

/// The protocol's ideal cores as a plan (targets at the target-zone centres).
pub fn protocol_plan(protocol: &ProtocolSpec, config: &CoverageConfig) -> Result<Plan> {
    let cores = protocol
        .sectors
        .iter()
        .map(|s| induced_core(protocol.pivot, s.target_zone.center, protocol.core_length_mm))
        .collect::<Result<Vec<_>>>()?;
    let mut plan = Plan {
        cores,
        union_volume: 0.0,
        marginal_gains: Vec::new(),
    };
    plan.union_volume = evaluate_plan(&plan, &protocol.gland, config)?.explored_volume;
    Ok(plan)
}
