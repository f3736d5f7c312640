//! Default gland model and the 12-core sextant protocol with ideal entry and
//! target zones.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Ellipsoid, Point3, RigidTransform, Segment, Sphere, Vec3};

/// Semi-axes (mm) of the default 40 ml gland: left-right, antero-posterior,
/// cranio-caudal.
pub const DEFAULT_SEMI_AXES: Vec3 = Vec3::new(25.0, 17.0, 22.5);
/// Virtual transrectal needle-guide pivot, posterior and caudal to the gland.
pub const DEFAULT_PIVOT: Point3 = Vec3::new(0.0, -45.0, -35.0);
/// Typical 18 G core length. Not a measured quantity; override as needed.
pub const DEFAULT_CORE_LENGTH_MM: f64 = 17.0;
/// Ideal zones are 7 mm in diameter.
pub const DEFAULT_ZONE_RADIUS_MM: f64 = 3.5;
/// Tolerance on the implicit surface equation for entry-zone centres.
pub const SURFACE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    Apex,
    Mid,
    Base,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Position {
    Paramedian,
    Lateral,
}

impl Side {
    pub const ALL: [Side; 2] = [Side::Left, Side::Right];

    /// Sign of the x coordinate on this side.
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => -1.0,
            Side::Right => 1.0,
        }
    }

    pub fn mirrored(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Apex, Level::Mid, Level::Base];

    pub fn index(self) -> usize {
        self as usize
    }

    fn as_str(self) -> &'static str {
        match self {
            Level::Apex => "apex",
            Level::Mid => "mid",
            Level::Base => "base",
        }
    }
}

impl Position {
    pub const ALL: [Position; 2] = [Position::Paramedian, Position::Lateral];

    pub fn index(self) -> usize {
        self as usize
    }

    fn as_str(self) -> &'static str {
        match self {
            Position::Paramedian => "paramedian",
            Position::Lateral => "lateral",
        }
    }
}

/// One of the twelve protocol locations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SectorId {
    pub side: Side,
    pub level: Level,
    pub position: Position,
}

impl SectorId {
    pub const fn new(side: Side, level: Level, position: Position) -> Self {
        SectorId {
            side,
            level,
            position,
        }
    }

    /// All twelve sectors in canonical order (side, level, position).
    pub fn all() -> [SectorId; 12] {
        let mut out = [SectorId::new(Side::Left, Level::Apex, Position::Paramedian); 12];
        let mut i = 0;
        for side in Side::ALL {
            for level in Level::ALL {
                for position in Position::ALL {
                    out[i] = SectorId::new(side, level, position);
                    i += 1;
                }
            }
        }
        out
    }

    /// Position in [`SectorId::all`].
    pub fn index(self) -> usize {
        (self.side as usize) * 6 + self.level.index() * 2 + self.position.index()
    }

    pub fn mirrored(self) -> SectorId {
        SectorId {
            side: self.side.mirrored(),
            ..self
        }
    }
}

impl fmt::Display for SectorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}-{}-{}",
            self.side.as_str(),
            self.level.as_str(),
            self.position.as_str()
        )
    }
}

impl FromStr for SectorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split('-').collect();
        let bad = || Error::Validation(format!("unknown sector '{s}'"));
        let [side, level, position] = parts.as_slice() else {
            return Err(bad());
        };
        let side = match side.to_ascii_lowercase().as_str() {
            "left" => Side::Left,
            "right" => Side::Right,
            _ => return Err(bad()),
        };
        let level = match level.to_ascii_lowercase().as_str() {
            "apex" => Level::Apex,
            "mid" => Level::Mid,
            "base" => Level::Base,
            _ => return Err(bad()),
        };
        let position = match position.to_ascii_lowercase().as_str() {
            "paramedian" => Position::Paramedian,
            "lateral" => Position::Lateral,
            _ => return Err(bad()),
        };
        Ok(SectorId::new(side, level, position))
    }
}

impl TryFrom<String> for SectorId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SectorId> for String {
    fn from(s: SectorId) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorSpec {
    pub sector: SectorId,
    pub entry_zone: Sphere,
    pub target_zone: Sphere,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub gland: Ellipsoid,
    pub pivot: Point3,
    pub core_length_mm: f64,
    pub sectors: Vec<SectorSpec>,
}

impl ProtocolSpec {
    pub fn sector(&self, id: SectorId) -> Option<&SectorSpec> {
        self.sectors.iter().find(|s| s.sector == id)
    }

    /// Moves gland, pivot and every zone by `t`.
    pub fn transformed(&self, t: &RigidTransform) -> ProtocolSpec {
        ProtocolSpec {
            gland: self.gland.transformed(t),
            pivot: t.apply(self.pivot),
            core_length_mm: self.core_length_mm,
            sectors: self
                .sectors
                .iter()
                .map(|s| SectorSpec {
                    sector: s.sector,
                    entry_zone: s.entry_zone.transformed(t),
                    target_zone: s.target_zone.transformed(t),
                })
                .collect(),
        }
    }

    /// Same protocol with every zone resized to `radius`.
    pub fn with_zone_radius(&self, radius: f64) -> Result<ProtocolSpec> {
        let mut out = self.clone();
        for s in &mut out.sectors {
            s.entry_zone = Sphere::new(s.entry_zone.center, radius)?;
            s.target_zone = Sphere::new(s.target_zone.center, radius)?;
        }
        Ok(out)
    }
}

/// Where target centres sit, as fractions of the gland semi-axes in its
/// local frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    /// |x| / a for paramedian targets.
    pub paramedian_x: f64,
    /// |x| / a for lateral targets.
    pub lateral_x: f64,
    /// y / b for all targets (negative is posterior). Zero puts the target
    /// deep enough for a 17 mm core to lie almost entirely in the gland.
    pub depth_y: f64,
    /// |z| / c for apex and base targets; mid targets sit at z = 0.
    pub level_z: f64,
    pub zone_radius_mm: f64,
}

impl Default for Placement {
    fn default() -> Self {
        Placement {
            paramedian_x: 0.25,
            lateral_x: 0.65,
            depth_y: 0.0,
            level_z: 0.58,
            zone_radius_mm: DEFAULT_ZONE_RADIUS_MM,
        }
    }
}

impl Placement {
    /// Target centre in the gland's local frame.
    pub fn local_target(&self, id: SectorId, semi_axes: Vec3) -> Vec3 {
        let fx = match id.position {
            Position::Paramedian => self.paramedian_x,
            Position::Lateral => self.lateral_x,
        };
        let fz = match id.level {
            Level::Apex => -self.level_z,
            Level::Mid => 0.0,
            Level::Base => self.level_z,
        };
        Vec3::new(
            id.side.sign() * fx * semi_axes.x,
            self.depth_y * semi_axes.y,
            fz * semi_axes.z,
        )
    }
}

/// The 40 ml gland: axis-aligned, centred at the origin.
pub fn default_gland() -> Ellipsoid {
    Ellipsoid::axis_aligned(Vec3::ZERO, DEFAULT_SEMI_AXES).expect("default gland is valid")
}

/// First surface crossing of the ray `from → to`, where `from` is outside
/// the gland. `None` when the ray never reaches the gland before `to`.
pub fn first_crossing(gland: &Ellipsoid, from: Point3, to: Point3) -> Option<Point3> {
    let ray = Segment::new(from, to).ok()?;
    let (t0, _) = gland.line_crossings(&ray)?;
    (0.0..=1.0).contains(&t0).then(|| ray.point_at(t0))
}

/// The 12-core protocol with the default placement fractions.
pub fn default_protocol(gland: &Ellipsoid, pivot: Point3, core_length_mm: f64) -> Result<ProtocolSpec> {
    build_protocol(gland, pivot, core_length_mm, &Placement::default())
}

/// Places target centres by `placement`, induces entry centres as the first
/// gland-surface crossing of the ray pivot → target, then validates.
pub fn build_protocol(
    gland: &Ellipsoid,
    pivot: Point3,
    core_length_mm: f64,
    placement: &Placement,
) -> Result<ProtocolSpec> {
    gland.validate()?;
    if !pivot.is_finite() || gland.contains(pivot) {
        return Err(Error::Precondition(
            "pivot must lie strictly outside the gland".into(),
        ));
    }
    if !(core_length_mm > 0.0 && core_length_mm.is_finite()) {
        return Err(Error::Config(format!(
            "core length must be > 0 (got {core_length_mm})"
        )));
    }
    let radius = placement.zone_radius_mm;

    let mut violations = Vec::new();
    let mut sectors = Vec::with_capacity(12);
    for id in SectorId::all() {
        let target = gland.to_world(placement.local_target(id, gland.semi_axes));
        if !gland.strictly_contains(target) {
            violations.push(Violation::TargetOutsideGland(id));
            continue;
        }
        let Some(entry) = first_crossing(gland, pivot, target) else {
            violations.push(Violation::EntryOffSurface {
                sector: id,
                residual: f64::NAN,
            });
            continue;
        };
        sectors.push(SectorSpec {
            sector: id,
            entry_zone: Sphere::new(entry, radius)?,
            target_zone: Sphere::new(target, radius)?,
        });
    }
    if !violations.is_empty() {
        return Err(Error::ProtocolInvalid(violations));
    }

    let spec = ProtocolSpec {
        gland: *gland,
        pivot,
        core_length_mm,
        sectors,
    };
    let violations = validate_protocol(&spec);
    if violations.is_empty() {
        Ok(spec)
    } else {
        Err(Error::ProtocolInvalid(violations))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    WrongSectorCount(usize),
    DuplicateSector(SectorId),
    TargetOutsideGland(SectorId),
    EntryOffSurface { sector: SectorId, residual: f64 },
    EntryOverlap { a: SectorId, b: SectorId, distance: f64 },
    TargetOverlap { a: SectorId, b: SectorId, distance: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::WrongSectorCount(n) => write!(f, "expected 12 sectors, found {n}"),
            Violation::DuplicateSector(s) => write!(f, "sector {s} listed twice"),
            Violation::TargetOutsideGland(s) => write!(f, "target of {s} not inside the gland"),
            Violation::EntryOffSurface { sector, residual } => {
                write!(f, "entry of {sector} off the gland surface (residual {residual:.3e})")
            }
            Violation::EntryOverlap { a, b, distance } => {
                write!(f, "entry zones {a} and {b} overlap ({distance:.3} mm apart)")
            }
            Violation::TargetOverlap { a, b, distance } => {
                write!(f, "target zones {a} and {b} overlap ({distance:.3} mm apart)")
            }
        }
    }
}

/// Checks every sector and protocol invariant; returns all violations found
/// (empty means valid).
pub fn validate_protocol(p: &ProtocolSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    if p.sectors.len() != 12 {
        out.push(Violation::WrongSectorCount(p.sectors.len()));
    }
    let mut seen = [false; 12];
    for s in &p.sectors {
        let i = s.sector.index();
        if seen[i] {
            out.push(Violation::DuplicateSector(s.sector));
        }
        seen[i] = true;
    }
    for s in &p.sectors {
        if !p.gland.strictly_contains(s.target_zone.center) {
            out.push(Violation::TargetOutsideGland(s.sector));
        }
        let residual = p.gland.implicit(s.entry_zone.center);
        if residual.is_nan() || residual.abs() > SURFACE_TOLERANCE {
            out.push(Violation::EntryOffSurface {
                sector: s.sector,
                residual,
            });
        }
    }
    for (i, s) in p.sectors.iter().enumerate() {
        for t in &p.sectors[i + 1..] {
            let d = s.entry_zone.center.distance(t.entry_zone.center);
            if d < s.entry_zone.radius + t.entry_zone.radius {
                out.push(Violation::EntryOverlap {
                    a: s.sector,
                    b: t.sector,
                    distance: d,
                });
            }
            let d = s.target_zone.center.distance(t.target_zone.center);
            if d < s.target_zone.radius + t.target_zone.radius {
                out.push(Violation::TargetOverlap {
                    a: s.sector,
                    b: t.sector,
                    distance: d,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn protocol() -> ProtocolSpec {
        default_protocol(&default_gland(), DEFAULT_PIVOT, DEFAULT_CORE_LENGTH_MM).unwrap()
    }

    #[test]
    fn default_gland_is_forty_ml() {
        let g = default_gland();
        let v = 4.0 / 3.0 * std::f64::consts::PI * 25.0 * 17.0 * 22.5;
        assert!((g.volume() - v).abs() <= 1e-9 * v);
        assert!((g.volume() - 40_055.3).abs() < 0.1);
        assert!(g.contains(Vec3::ZERO));
        assert!(!g.contains(Vec3::new(26.0, 0.0, 0.0)));
    }

    #[test]
    fn sector_ids_round_trip_and_are_distinct() {
        let all = SectorId::all();
        for (i, s) in all.iter().enumerate() {
            assert_eq!(s.index(), i);
            assert_eq!(s.to_string().parse::<SectorId>().unwrap(), *s);
        }
        assert!("left-apex".parse::<SectorId>().is_err());
        assert!("left-top-lateral".parse::<SectorId>().is_err());
    }

    #[test]
    fn default_protocol_is_valid() {
        let p = protocol();
        assert_eq!(p.sectors.len(), 12);
        assert!(validate_protocol(&p).is_empty());
    }

    #[test]
    fn default_protocol_is_left_right_symmetric() {
        let p = protocol();
        let mirror = |v: Vec3| Vec3::new(-v.x, v.y, v.z);
        for s in &p.sectors {
            let m = p.sector(s.sector.mirrored()).unwrap();
            assert!(mirror(s.entry_zone.center).distance(m.entry_zone.center) < 1e-9);
            assert!(mirror(s.target_zone.center).distance(m.target_zone.center) < 1e-9);
        }
    }

    #[test]
    fn entries_are_on_the_posterior_surface() {
        let p = protocol();
        for s in &p.sectors {
            assert!(p.gland.outward_normal(s.entry_zone.center).y < 0.0, "{}", s.sector);
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(protocol(), protocol());
    }

    #[test]
    fn pivot_inside_gland_is_rejected() {
        let err = default_protocol(&default_gland(), Vec3::ZERO, 17.0).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn shrunk_gland_is_valid_or_lists_pairs() {
        // 10 ml: scale every semi-axis by 0.25^(1/3).
        let k = 0.25f64.powf(1.0 / 3.0);
        let g = Ellipsoid::axis_aligned(Vec3::ZERO, DEFAULT_SEMI_AXES * k).unwrap();
        match default_protocol(&g, DEFAULT_PIVOT, 17.0) {
            Ok(p) => assert!(validate_protocol(&p).is_empty()),
            Err(Error::ProtocolInvalid(v)) => {
                assert!(!v.is_empty());
                assert!(v.iter().all(|x| matches!(
                    x,
                    Violation::EntryOverlap { .. } | Violation::TargetOverlap { .. }
                )));
            }
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn coincident_targets_name_both_sectors() {
        let mut p = protocol();
        let c = p.sectors[0].target_zone.center;
        p.sectors[1].target_zone.center = c;
        let v = validate_protocol(&p);
        let (a, b) = (p.sectors[0].sector, p.sectors[1].sector);
        let overlaps: Vec<_> = v
            .iter()
            .filter(|x| matches!(x, Violation::TargetOverlap { .. }))
            .collect();
        assert_eq!(overlaps.len(), 1);
        assert_eq!(
            overlaps[0],
            &Violation::TargetOverlap { a, b, distance: 0.0 }
        );
    }

    #[test]
    fn displaced_entry_is_flagged() {
        let mut p = protocol();
        let s = &mut p.sectors[3];
        let n = p.gland.outward_normal(s.entry_zone.center);
        s.entry_zone.center += n * 1.0;
        let id = s.sector;
        let v = validate_protocol(&p);
        assert!(v
            .iter()
            .any(|x| matches!(x, Violation::EntryOffSurface { sector, .. } if *sector == id)));
    }

    #[test]
    fn outside_target_is_reported() {
        let placement = Placement {
            lateral_x: 1.2,
            ..Placement::default()
        };
        let err = build_protocol(&default_gland(), DEFAULT_PIVOT, 17.0, &placement).unwrap_err();
        let Error::ProtocolInvalid(v) = err else { panic!() };
        assert_eq!(v.len(), 6);
    }
}
