//! Session files (schema-versioned JSON), CSV reports and PGM coverage
//! slices.
//!
//! A session file carries the frame declaration, the gland, the protocol
//! block and a list of sessions. Coordinates are millimetres in the template
//! frame. Plans use the same layout with modality `"PLAN"` and free-form
//! core labels.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coverage::{BiopsyScore, CoverageGrid, SessionScore};
use crate::error::{Error, Result};
use crate::geometry::{Ellipsoid, Point3, Segment};
use crate::planner::Plan;
use crate::protocol::{validate_protocol, ProtocolSpec, SectorId, SectorSpec};
use crate::sim::{Cohort, Modality, PairKey, Session, Trajectory};

pub const SCHEMA_VERSION: u32 = 1;
pub const FRAME_UNITS: &str = "mm";
pub const FRAME_CONVENTION: &str = "x: lateral, right +; y: anterior +; z: toward base +";
pub const PLAN_MODALITY: &str = "PLAN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Frame {
    pub units: String,
    pub convention: String,
}

impl Default for Frame {
    fn default() -> Self {
        Frame {
            units: FRAME_UNITS.into(),
            convention: FRAME_CONVENTION.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolBlock {
    pub pivot: Point3,
    pub core_length_mm: f64,
    pub sectors: Vec<SectorSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiopsyRecord {
    /// Sector name (`left-apex-paramedian`, ...) or a plan core label.
    pub sector: String,
    pub entry: Point3,
    pub tip: Point3,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionRecord {
    pub operator: u32,
    #[serde(default)]
    pub repeat: u32,
    /// `"2D"`, `"4D"` or `"PLAN"`.
    pub modality: String,
    pub biopsies: Vec<BiopsyRecord>,
}

/// Free-form provenance recorded by the generator (seed, noise levels...).
pub type Metadata = serde_json::Map<String, serde_json::Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionFile {
    pub schema_version: u32,
    pub frame: Frame,
    pub gland: Ellipsoid,
    pub protocol: ProtocolBlock,
    #[serde(default, skip_serializing_if = "Metadata::is_empty")]
    pub metadata: Metadata,
    #[serde(default)]
    pub sessions: Vec<SessionRecord>,
}

/// Plan cores read back from a file.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanRecord {
    pub operator: u32,
    pub labels: Vec<String>,
    pub segments: Vec<Segment>,
}

/// Validated contents of a session file.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSessions {
    pub protocol: ProtocolSpec,
    pub sessions: Vec<Session>,
    pub excluded: BTreeSet<PairKey>,
    pub plans: Vec<PlanRecord>,
}

fn record_from_trajectory(t: &Trajectory, excluded: bool) -> BiopsyRecord {
    BiopsyRecord {
        sector: t.sector.to_string(),
        entry: t.entry(),
        tip: t.tip(),
        excluded,
    }
}

impl SessionFile {
    pub fn new(protocol: &ProtocolSpec) -> Self {
        SessionFile {
            schema_version: SCHEMA_VERSION,
            frame: Frame::default(),
            gland: protocol.gland,
            protocol: ProtocolBlock {
                pivot: protocol.pivot,
                core_length_mm: protocol.core_length_mm,
                sectors: protocol.sectors.clone(),
            },
            metadata: Metadata::new(),
            sessions: Vec::new(),
        }
    }

    pub fn from_cohort(protocol: &ProtocolSpec, cohort: &Cohort) -> Self {
        let mut f = SessionFile::new(protocol);
        for s in &cohort.sessions {
            f.push_session(s, &cohort.excluded);
        }
        f
    }

    pub fn push_session(&mut self, s: &Session, excluded: &BTreeSet<PairKey>) {
        let biopsies = s
            .trajectories
            .iter()
            .map(|t| {
                let key = PairKey {
                    operator: s.operator,
                    repeat: s.repeat,
                    sector: t.sector,
                };
                record_from_trajectory(t, excluded.contains(&key))
            })
            .collect();
        self.sessions.push(SessionRecord {
            operator: s.operator,
            repeat: s.repeat,
            modality: s.modality.to_string(),
            biopsies,
        });
    }

    pub fn push_plan(&mut self, operator: u32, plan: &Plan) {
        let biopsies = plan
            .cores
            .iter()
            .enumerate()
            .map(|(i, c)| BiopsyRecord {
                sector: format!("core-{:02}", i + 1),
                entry: c.segment.a,
                tip: c.segment.b,
                excluded: false,
            })
            .collect();
        self.sessions.push(SessionRecord {
            operator,
            repeat: 0,
            modality: PLAN_MODALITY.into(),
            biopsies,
        });
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("session file serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::Parse(format!("line {}, column {}: {e}", e.line(), e.column()))
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        SessionFile::from_json(&text)
    }

    pub fn protocol_spec(&self) -> Result<ProtocolSpec> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Validation(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.frame.units != FRAME_UNITS {
            return Err(Error::Validation(format!(
                "frame.units must be \"{FRAME_UNITS}\" (got \"{}\")",
                self.frame.units
            )));
        }
        self.gland
            .validate()
            .map_err(|e| Error::Validation(format!("gland: {e}")))?;
        let p = ProtocolSpec {
            gland: self.gland,
            pivot: self.protocol.pivot,
            core_length_mm: self.protocol.core_length_mm,
            sectors: self.protocol.sectors.clone(),
        };
        if !p.pivot.is_finite() || !(p.core_length_mm > 0.0 && p.core_length_mm.is_finite()) {
            return Err(Error::Validation(
                "protocol pivot must be finite and core_length_mm > 0".into(),
            ));
        }
        for s in &p.sectors {
            check_zone(&s.entry_zone, s.sector, "entry_zone")?;
            check_zone(&s.target_zone, s.sector, "target_zone")?;
        }
        let v = validate_protocol(&p);
        if !v.is_empty() {
            return Err(Error::ProtocolInvalid(v));
        }
        Ok(p)
    }

    /// Validates the whole document and converts it to domain values.
    pub fn load(&self) -> Result<LoadedSessions> {
        let protocol = self.protocol_spec()?;
        let mut sessions = Vec::new();
        let mut excluded = BTreeSet::new();
        let mut plans = Vec::new();
        for (si, rec) in self.sessions.iter().enumerate() {
            let at = |bi: usize| format!("sessions[{si}].biopsies[{bi}]");
            let segment = |bi: usize, b: &BiopsyRecord| -> Result<Segment> {
                if !b.entry.is_finite() || !b.tip.is_finite() {
                    return Err(Error::Validation(format!("{}: non-finite coordinate", at(bi))));
                }
                Segment::new(b.entry, b.tip)
                    .map_err(|e| Error::Validation(format!("{}: {e}", at(bi))))
            };
            if rec.modality.trim().eq_ignore_ascii_case(PLAN_MODALITY) {
                let segments = rec
                    .biopsies
                    .iter()
                    .enumerate()
                    .map(|(bi, b)| segment(bi, b))
                    .collect::<Result<Vec<_>>>()?;
                plans.push(PlanRecord {
                    operator: rec.operator,
                    labels: rec.biopsies.iter().map(|b| b.sector.clone()).collect(),
                    segments,
                });
                continue;
            }
            let modality: Modality = rec
                .modality
                .parse()
                .map_err(|e| Error::Validation(format!("sessions[{si}].modality: {e}")))?;
            let mut trajectories = Vec::with_capacity(rec.biopsies.len());
            for (bi, b) in rec.biopsies.iter().enumerate() {
                let sector: SectorId = b
                    .sector
                    .parse()
                    .map_err(|e| Error::Validation(format!("{}.sector: {e}", at(bi))))?;
                trajectories.push(Trajectory {
                    sector,
                    segment: segment(bi, b)?,
                });
                if b.excluded {
                    excluded.insert(PairKey {
                        operator: rec.operator,
                        repeat: rec.repeat,
                        sector,
                    });
                }
            }
            let session = Session {
                operator: rec.operator,
                repeat: rec.repeat,
                modality,
                trajectories,
            };
            session
                .validate()
                .map_err(|e| Error::Validation(format!("sessions[{si}]: {e}")))?;
            sessions.push(session);
        }
        Ok(LoadedSessions {
            protocol,
            sessions,
            excluded,
            plans,
        })
    }
}

fn check_zone(s: &crate::geometry::Sphere, id: SectorId, which: &str) -> Result<()> {
    if !s.center.is_finite() || !(s.radius > 0.0 && s.radius.is_finite()) {
        return Err(Error::Validation(format!(
            "protocol sector {id}: {which} needs a finite centre and radius > 0"
        )));
    }
    Ok(())
}

/// Writes `bytes` to `path` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |p: &Path| {
        let p: PathBuf = p.to_path_buf();
        move |source| Error::Io { path: p, source }
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Session identifier used in report rows and file names.
pub fn session_label(operator: u32, repeat: u32, modality: &str) -> String {
    if repeat == 0 {
        format!("op{operator:02}_{modality}")
    } else {
        format!("op{operator:02}_r{repeat}_{modality}")
    }
}

pub const BIOPSY_CSV_HEADER: &str = "operator,modality,sector,entry_error_mm,target_error_mm";
pub const SESSION_CSV_HEADER: &str =
    "operator,modality,explored_mm3,vol_per_biopsy_mm3,redundancy,single_fraction";

pub fn biopsy_csv_row(operator: u32, modality: &str, s: &BiopsyScore) -> String {
    format!(
        "{operator},{modality},{},{:.4},{:.4}",
        s.sector, s.entry_error, s.target_error
    )
}

pub fn session_csv_row(operator: u32, modality: &str, s: &SessionScore) -> String {
    let fraction = if s.empty {
        String::new()
    } else {
        format!("{:.4}", s.single_coverage_fraction)
    };
    format!(
        "{operator},{modality},{:.2},{:.2},{:.4},{fraction}",
        s.explored_volume, s.volume_per_biopsy, s.redundancy_ratio
    )
}

/// Grey level of a voxel count: `min(64·count, 255)`.
pub fn pgm_level(count: u16) -> u8 {
    (u32::from(count) * 64).min(255) as u8
}

/// One binary PGM (P5, maxval 255) of the z-slice `k`, anterior at the top.
pub fn pgm_slice(grid: &CoverageGrid, k: usize) -> Vec<u8> {
    let [nx, ny, _] = grid.dims;
    let mut out = format!("P5\n{nx} {ny}\n255\n").into_bytes();
    out.reserve(nx * ny);
    for j in (0..ny).rev() {
        for i in 0..nx {
            out.push(pgm_level(grid.count(i, j, k)));
        }
    }
    out
}

/// Writes `slice_KKK.pgm` for every z-slice plus `voxels.csv` listing the
/// non-zero counts as `i,j,k,count`.
pub fn write_grid(grid: &CoverageGrid, dir: &Path) -> Result<()> {
    for k in 0..grid.dims[2] {
        write_atomic(&dir.join(format!("slice_{k:03}.pgm")), &pgm_slice(grid, k))?;
    }
    let mut csv = String::from("i,j,k,count\n");
    for (idx, &c) in grid.counts.iter().enumerate() {
        if c > 0 {
            let [i, j, k] = grid.coords(idx);
            let _ = writeln!(csv, "{i},{j},{k},{c}");
        }
    }
    write_atomic(&dir.join("voxels.csv"), csv.as_bytes())
}
