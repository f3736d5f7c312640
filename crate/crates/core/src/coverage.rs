//! Per-biopsy zone errors, voxelised union of exploration cylinders, and the
//! redundancy / single-coverage statistics built on it.
//!
//! A core explores a flat-capped cylinder of radius 5.6 mm (0.6 mm needle
//! plus a 5 mm safety margin) around its in-gland segment. Only voxels whose
//! centre lies inside the gland are counted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{zone_error, Cylinder, Ellipsoid, Point3, Segment, Vec3};
use crate::protocol::{ProtocolSpec, SectorId, SectorSpec};
use crate::sim::{Session, Trajectory};

pub const DEFAULT_RADIUS_MM: f64 = 5.6;
pub const DEFAULT_VOXEL_MM: f64 = 0.5;
pub const MIN_VOXEL_MM: f64 = 0.2;
pub const MAX_VOXEL_MM: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub radius_mm: f64,
    pub voxel_mm: f64,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        CoverageConfig {
            radius_mm: DEFAULT_RADIUS_MM,
            voxel_mm: DEFAULT_VOXEL_MM,
        }
    }
}

impl CoverageConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius_mm > 0.0 && self.radius_mm.is_finite()) {
            return Err(Error::Config(format!(
                "cylinder radius must be > 0 (got {})",
                self.radius_mm
            )));
        }
        if !(MIN_VOXEL_MM..=MAX_VOXEL_MM).contains(&self.voxel_mm) {
            return Err(Error::Config(format!(
                "voxel size must be in [{MIN_VOXEL_MM}, {MAX_VOXEL_MM}] mm (got {})",
                self.voxel_mm
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiopsyScore {
    pub sector: SectorId,
    pub entry_error: f64,
    pub target_error: f64,
    pub in_gland_length: f64,
    /// The core never enters the gland; `entry_error` is then measured from
    /// the entry end of the trajectory.
    pub missed_gland: bool,
}

/// Entry error at the gland-surface crossing nearest the entry end, target
/// error at the tip, and the in-gland core length.
pub fn score_biopsy(t: &Trajectory, spec: &SectorSpec, gland: &Ellipsoid) -> BiopsyScore {
    let target_error = zone_error(t.tip(), &spec.target_zone);
    match gland.clip_segment(&t.segment) {
        Some(inside) => {
            let (t0, _) = gland
                .line_crossings(&t.segment)
                .expect("a clipped segment implies two crossings");
            BiopsyScore {
                sector: t.sector,
                entry_error: zone_error(t.segment.point_at(t0), &spec.entry_zone),
                target_error,
                in_gland_length: inside.length(),
                missed_gland: false,
            }
        }
        None => BiopsyScore {
            sector: t.sector,
            entry_error: zone_error(t.entry(), &spec.entry_zone),
            target_error,
            in_gland_length: 0.0,
            missed_gland: true,
        },
    }
}

/// Voxel grid over the gland's bounding box holding per-voxel core counts.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageGrid {
    pub origin: Point3,
    pub voxel_mm: f64,
    pub dims: [usize; 3],
    pub counts: Vec<u16>,
    /// Voxels covered by each core on its own, in input order.
    pub per_core_voxels: Vec<usize>,
}

impl CoverageGrid {
    /// Empty grid covering the axis-aligned bounding box of `gland`.
    pub fn for_gland(gland: &Ellipsoid, voxel_mm: f64) -> Result<Self> {
        if !(MIN_VOXEL_MM..=MAX_VOXEL_MM).contains(&voxel_mm) {
            return Err(Error::Config(format!(
                "voxel size must be in [{MIN_VOXEL_MM}, {MAX_VOXEL_MM}] mm (got {voxel_mm})"
            )));
        }
        let (lo, hi) = gland.bounding_box();
        let span = hi - lo;
        let n = |s: f64| ((s / voxel_mm).ceil() as usize).max(1);
        let dims = [n(span.x), n(span.y), n(span.z)];
        Ok(CoverageGrid {
            origin: lo,
            voxel_mm,
            dims,
            counts: vec![0; dims[0] * dims[1] * dims[2]],
            per_core_voxels: Vec::new(),
        })
    }

    pub fn voxel_volume(&self) -> f64 {
        self.voxel_mm.powi(3)
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Point3 {
        let v = self.voxel_mm;
        self.origin + Vec3::new((i as f64 + 0.5) * v, (j as f64 + 0.5) * v, (k as f64 + 0.5) * v)
    }

    pub fn count(&self, i: usize, j: usize, k: usize) -> u16 {
        self.counts[self.index(i, j, k)]
    }

    /// Clamped voxel-index range whose centres can fall in `[lo, hi]`.
    fn index_range(&self, lo: f64, hi: f64, origin: f64, n: usize) -> (usize, usize) {
        let v = self.voxel_mm;
        let first = ((lo - origin) / v - 0.5).ceil().max(0.0) as usize;
        let last = ((hi - origin) / v - 0.5).floor();
        if last < 0.0 {
            return (1, 0);
        }
        (first, (last as usize).min(n.saturating_sub(1)))
    }

    /// Linear indices of voxels whose centre is inside both `cylinder` and
    /// `gland`, in increasing order.
    pub fn cylinder_voxels(&self, cylinder: &Cylinder, gland: &Ellipsoid) -> Vec<u32> {
        let (lo, hi) = cylinder.bounding_box();
        let (i0, i1) = self.index_range(lo.x, hi.x, self.origin.x, self.dims[0]);
        let (j0, j1) = self.index_range(lo.y, hi.y, self.origin.y, self.dims[1]);
        let (k0, k1) = self.index_range(lo.z, hi.z, self.origin.z, self.dims[2]);
        let mut out = Vec::new();
        for k in k0..=k1 {
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let c = self.center(i, j, k);
                    if cylinder.contains(c) && gland.contains(c) {
                        out.push(self.index(i, j, k) as u32);
                    }
                }
            }
        }
        out
    }

    /// Adds one core's voxel list to the counts.
    pub fn add_core(&mut self, voxels: &[u32]) {
        for &v in voxels {
            self.counts[v as usize] = self.counts[v as usize].saturating_add(1);
        }
        self.per_core_voxels.push(voxels.len());
    }

    pub fn covered_voxels(&self) -> usize {
        self.counts.iter().filter(|&&c| c >= 1).count()
    }

    pub fn single_voxels(&self) -> usize {
        self.counts.iter().filter(|&&c| c == 1).count()
    }

    pub fn explored_volume(&self) -> f64 {
        self.covered_voxels() as f64 * self.voxel_volume()
    }

    /// Standalone volume of each core at this voxelisation.
    pub fn per_core_volumes(&self) -> Vec<f64> {
        let v = self.voxel_volume();
        self.per_core_voxels.iter().map(|&n| n as f64 * v).collect()
    }

    /// Covered voxels with at least one face neighbour that is uncovered or
    /// off the grid.
    pub fn boundary_voxels(&self) -> usize {
        let [nx, ny, nz] = self.dims;
        let covered = |i: isize, j: isize, k: isize| {
            i >= 0
                && j >= 0
                && k >= 0
                && (i as usize) < nx
                && (j as usize) < ny
                && (k as usize) < nz
                && self.count(i as usize, j as usize, k as usize) > 0
        };
        let mut n = 0;
        for idx in 0..self.counts.len() {
            if self.counts[idx] == 0 {
                continue;
            }
            let [i, j, k] = self.coords(idx).map(|x| x as isize);
            let faces = [
                (i - 1, j, k),
                (i + 1, j, k),
                (i, j - 1, k),
                (i, j + 1, k),
                (i, j, k - 1),
                (i, j, k + 1),
            ];
            if faces.iter().any(|&(a, b, c)| !covered(a, b, c)) {
                n += 1;
            }
        }
        n
    }

    /// Number of voxel centres inside `gland` (its discretised volume).
    pub fn gland_voxels(&self, gland: &Ellipsoid) -> usize {
        let [nx, ny, nz] = self.dims;
        (0..nz)
            .into_par_iter()
            .map(|k| {
                let mut n = 0;
                for j in 0..ny {
                    for i in 0..nx {
                        if gland.contains(self.center(i, j, k)) {
                            n += 1;
                        }
                    }
                }
                n
            })
            .sum()
    }
}

/// Exploration cylinder around the in-gland part of `segment`, if any.
pub fn exploration_cylinder(segment: &Segment, gland: &Ellipsoid, radius: f64) -> Option<Cylinder> {
    let inside = gland.clip_segment(segment)?;
    Cylinder::new(inside, radius).ok()
}

/// Voxelises the union of exploration cylinders of `segments`.
pub fn rasterize_segments(
    segments: &[Segment],
    gland: &Ellipsoid,
    config: &CoverageConfig,
) -> Result<CoverageGrid> {
    config.validate()?;
    let mut grid = CoverageGrid::for_gland(gland, config.voxel_mm)?;
    let lists: Vec<Vec<u32>> = segments
        .par_iter()
        .map(|s| {
            exploration_cylinder(s, gland, config.radius_mm)
                .map(|c| grid.cylinder_voxels(&c, gland))
                .unwrap_or_default()
        })
        .collect();
    for l in &lists {
        grid.add_core(l);
    }
    Ok(grid)
}

pub fn rasterize_session(
    session: &Session,
    gland: &Ellipsoid,
    config: &CoverageConfig,
) -> Result<CoverageGrid> {
    rasterize_segments(&session.segments(), gland, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionScore {
    pub explored_volume: f64,
    pub volume_per_biopsy: f64,
    pub redundancy_ratio: f64,
    pub single_coverage_fraction: f64,
    /// No voxel was covered; ratios are reported as zero.
    pub empty: bool,
}

/// Union volume, volume per biopsy, redundancy ratio (union over the sum of
/// standalone volumes) and the share of covered voxels hit by exactly one core.
pub fn session_score(grid: &CoverageGrid, n_biopsies: usize, per_biopsy_volumes: &[f64]) -> SessionScore {
    let covered = grid.covered_voxels();
    let explored = covered as f64 * grid.voxel_volume();
    let standalone: f64 = per_biopsy_volumes.iter().sum();
    if covered == 0 || n_biopsies == 0 || standalone <= 0.0 {
        return SessionScore {
            explored_volume: explored,
            volume_per_biopsy: 0.0,
            redundancy_ratio: 0.0,
            single_coverage_fraction: 0.0,
            empty: true,
        };
    }
    SessionScore {
        explored_volume: explored,
        volume_per_biopsy: explored / n_biopsies as f64,
        redundancy_ratio: explored / standalone,
        single_coverage_fraction: grid.single_voxels() as f64 / covered as f64,
        empty: false,
    }
}

/// [`session_score`] using the grid's own per-core volumes.
pub fn score_grid(grid: &CoverageGrid) -> SessionScore {
    session_score(grid, grid.per_core_voxels.len(), &grid.per_core_volumes())
}

/// Per-biopsy scores plus the coverage score for one session.
pub fn score_session(
    session: &Session,
    protocol: &ProtocolSpec,
    config: &CoverageConfig,
) -> Result<(Vec<BiopsyScore>, SessionScore)> {
    let biopsies = session
        .trajectories
        .iter()
        .map(|t| {
            let spec = protocol.sector(t.sector).ok_or_else(|| {
                Error::Validation(format!("sector {} missing from protocol", t.sector))
            })?;
            Ok(score_biopsy(t, spec, &protocol.gland))
        })
        .collect::<Result<Vec<_>>>()?;
    let grid = rasterize_session(session, &protocol.gland, config)?;
    Ok((biopsies, score_grid(&grid)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeEstimate {
    pub volume: f64,
    /// 95% binomial half-width.
    pub half_width: f64,
}

const MC_CHUNK: usize = 1 << 16;

/// Rejection-sampling estimate of `|gland ∩ ⋃ cylinders|`: uniform points in
/// the gland's bounding box, hit when inside the gland and any cylinder.
///
/// Samples are drawn in fixed-size chunks, each from a stream seeded by
/// `rng`, so the estimate does not depend on the thread count.
pub fn monte_carlo_volume<R: Rng + ?Sized>(
    segments: &[Segment],
    gland: &Ellipsoid,
    radius: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<VolumeEstimate> {
    if n_samples < 10_000 {
        return Err(Error::Config(format!(
            "need at least 10^4 samples (got {n_samples})"
        )));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Config(format!("radius must be > 0 (got {radius})")));
    }
    let cylinders: Vec<(Cylinder, Point3, Point3)> = segments
        .iter()
        .filter_map(|s| exploration_cylinder(s, gland, radius))
        .map(|c| {
            let (lo, hi) = c.bounding_box();
            (c, lo, hi)
        })
        .collect();
    let (lo, hi) = gland.bounding_box();
    let span = hi - lo;
    let box_volume = span.x * span.y * span.z;
    if cylinders.is_empty() {
        return Ok(VolumeEstimate {
            volume: 0.0,
            half_width: 0.0,
        });
    }

    let n_chunks = n_samples.div_ceil(MC_CHUNK);
    let seeds: Vec<u64> = (0..n_chunks).map(|_| rng.random()).collect();
    let hits: usize = seeds
        .par_iter()
        .enumerate()
        .map(|(c, &seed)| {
            let mut local = ChaCha8Rng::seed_from_u64(seed);
            let n = MC_CHUNK.min(n_samples - c * MC_CHUNK);
            let mut hits = 0usize;
            for _ in 0..n {
                let p = lo + Vec3::new(
                    local.random::<f64>() * span.x,
                    local.random::<f64>() * span.y,
                    local.random::<f64>() * span.z,
                );
                if !gland.contains(p) {
                    continue;
                }
                let inside_any = cylinders.iter().any(|(cyl, a, b)| {
                    p.x >= a.x
                        && p.x <= b.x
                        && p.y >= a.y
                        && p.y <= b.y
                        && p.z >= a.z
                        && p.z <= b.z
                        && cyl.contains(p)
                });
                if inside_any {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    let frac = hits as f64 / n_samples as f64;
    Ok(VolumeEstimate {
        volume: box_volume * frac,
        half_width: 1.96 * box_volume * (frac * (1.0 - frac) / n_samples as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{default_gland, default_protocol, DEFAULT_PIVOT};
    use crate::sim::{simulate_session, Modality, NoiseLevels, OperatorProfile};
    use std::f64::consts::PI;

    fn interior_core() -> Segment {
        Segment::new(Vec3::new(0.0, 0.0, -8.5), Vec3::new(0.0, 0.0, 8.5)).unwrap()
    }

    #[test]
    fn single_interior_core_matches_cylinder_volume() {
        let g = default_gland();
        let grid = rasterize_segments(&[interior_core()], &g, &CoverageConfig::default()).unwrap();
        let analytic = PI * 5.6 * 5.6 * 17.0;
        assert!((analytic - 1674.846).abs() < 1e-3);
        let rel = (grid.explored_volume() - analytic).abs() / analytic;
        assert!(rel < 0.02, "relative error {rel}");
        let s = score_grid(&grid);
        assert_eq!(s.redundancy_ratio, 1.0);
        assert_eq!(s.single_coverage_fraction, 1.0);
    }

    #[test]
    fn duplicate_cores_double_count() {
        let g = default_gland();
        let one = rasterize_segments(&[interior_core()], &g, &CoverageConfig::default()).unwrap();
        let two =
            rasterize_segments(&[interior_core(), interior_core()], &g, &CoverageConfig::default())
                .unwrap();
        assert_eq!(one.explored_volume(), two.explored_volume());
        assert!(two.counts.iter().all(|&c| c == 0 || c == 2));
        let s = score_grid(&two);
        assert_eq!(s.redundancy_ratio, 0.5);
        assert_eq!(s.single_coverage_fraction, 0.0);
    }

    #[test]
    fn empty_session_scores_zero() {
        let g = default_gland();
        let grid = rasterize_segments(&[], &g, &CoverageConfig::default()).unwrap();
        assert!(grid.counts.iter().all(|&c| c == 0));
        let s = score_grid(&grid);
        assert!(s.empty);
        assert_eq!(s.explored_volume, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mc = monte_carlo_volume(&[], &g, 5.6, 10_000, &mut rng).unwrap();
        assert_eq!(mc.volume, 0.0);
    }

    #[test]
    fn voxel_size_out_of_range_is_rejected() {
        let g = default_gland();
        for v in [0.1, 2.5] {
            let cfg = CoverageConfig {
                voxel_mm: v,
                ..CoverageConfig::default()
            };
            assert!(matches!(
                rasterize_segments(&[], &g, &cfg),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn only_gland_voxels_are_counted() {
        let g = default_gland();
        let cfg = CoverageConfig {
            radius_mm: 100.0,
            voxel_mm: 1.0,
        };
        let seg = Segment::new(Vec3::new(0.0, 0.0, -60.0), Vec3::new(0.0, 0.0, 60.0)).unwrap();
        let grid = rasterize_segments(&[seg], &g, &cfg).unwrap();
        assert_eq!(grid.covered_voxels(), grid.gland_voxels(&g));
        for (idx, &c) in grid.counts.iter().enumerate() {
            let [i, j, k] = grid.coords(idx);
            if c > 0 {
                assert!(g.contains(grid.center(i, j, k)));
            }
        }
    }

    #[test]
    fn whole_gland_cylinder_saturates_monte_carlo() {
        let g = default_gland();
        let seg = Segment::new(Vec3::new(0.0, 0.0, -60.0), Vec3::new(0.0, 0.0, 60.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mc = monte_carlo_volume(&[seg], &g, 100.0, 400_000, &mut rng).unwrap();
        assert!((mc.volume - g.volume()).abs() <= mc.half_width, "{mc:?}");
    }

    #[test]
    fn monte_carlo_needs_enough_samples() {
        let g = default_gland();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(monte_carlo_volume(&[interior_core()], &g, 5.6, 9_999, &mut rng).is_err());
    }

    #[test]
    fn perfect_trajectory_scores_zero() {
        let p = default_protocol(&default_gland(), DEFAULT_PIVOT, 17.0).unwrap();
        let s = simulate_session(
            &OperatorProfile::uniform(NoiseLevels::ZERO),
            Modality::TwoD,
            &p,
            0,
            0,
            0,
            0,
        )
        .unwrap();
        for t in &s.trajectories {
            let sc = score_biopsy(t, p.sector(t.sector).unwrap(), &p.gland);
            assert!(sc.entry_error < 1e-9 && sc.target_error == 0.0, "{sc:?}");
            assert!(!sc.missed_gland);
            assert!(sc.in_gland_length > 0.0 && sc.in_gland_length <= 17.0 + 1e-9);
        }
    }

    #[test]
    fn tip_offset_reproduces_reported_mean() {
        let p = default_protocol(&default_gland(), DEFAULT_PIVOT, 17.0).unwrap();
        let spec = p.sectors[2];
        let tip = spec.target_zone.center + Vec3::new(0.0, 0.0, 10.29);
        let t = Trajectory {
            sector: spec.sector,
            segment: Segment::new(tip - Vec3::new(0.0, -1.0, 0.0) * 17.0, tip).unwrap(),
        };
        let sc = score_biopsy(&t, &spec, &p.gland);
        assert!((sc.target_error - 6.79).abs() < 1e-9);
    }

    #[test]
    fn core_outside_gland_is_flagged() {
        let p = default_protocol(&default_gland(), DEFAULT_PIVOT, 17.0).unwrap();
        let spec = p.sectors[0];
        let t = Trajectory {
            sector: spec.sector,
            segment: Segment::new(Vec3::new(0.0, -60.0, 0.0), Vec3::new(0.0, -43.0, 0.0)).unwrap(),
        };
        let sc = score_biopsy(&t, &spec, &p.gland);
        assert!(sc.missed_gland);
        assert_eq!(sc.in_gland_length, 0.0);
        assert!((sc.entry_error - zone_error(t.entry(), &spec.entry_zone)).abs() < 1e-12);
    }
}
