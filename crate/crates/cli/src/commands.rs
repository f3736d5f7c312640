use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};

use biopsy_core::analysis::{compare_cohort, evaluate_sessions, CohortComparison};
use biopsy_core::coverage::rasterize_segments;
use biopsy_core::io::{
    biopsy_csv_row, session_csv_row, session_label, write_atomic, write_grid, LoadedSessions,
    SessionFile, BIOPSY_CSV_HEADER, SESSION_CSV_HEADER,
};
use biopsy_core::planner::{evaluate_plan, make_plan, protocol_plan, Optimizer, PlanConfig};
use biopsy_core::protocol::{default_gland, default_protocol, DEFAULT_PIVOT};
use biopsy_core::sim::{simulate_cohort, CohortConfig, NoiseLevels, OperatorProfile};
use biopsy_core::stats::AnovaRow;
use biopsy_core::{CoverageConfig, Error, Modality, ProtocolSpec, SessionScore};

use crate::{CompareArgs, EvaluateArgs, OptimizerArg, PlanArgs, RunArgs, SimulateArgs};

const DEFAULT_ZONE_DIAMETER_MM: f64 = 7.0;

impl RunArgs {
    fn validate(&self) -> Result<(), Error> {
        let positive = [
            ("--voxel-mm", self.voxel_mm),
            ("--radius-mm", self.radius_mm),
            ("--core-length-mm", self.core_length_mm),
            ("--zone-diameter-mm", self.zone_diameter_mm.unwrap_or(DEFAULT_ZONE_DIAMETER_MM)),
        ];
        for (flag, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{flag} must be > 0 (got {v})")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("--alpha must be in (0, 1) (got {})", self.alpha)));
        }
        self.coverage().validate()
    }

    fn coverage(&self) -> CoverageConfig {
        CoverageConfig {
            radius_mm: self.radius_mm,
            voxel_mm: self.voxel_mm,
        }
    }

    fn zone_radius(&self) -> f64 {
        self.zone_diameter_mm.unwrap_or(DEFAULT_ZONE_DIAMETER_MM) / 2.0
    }

    fn load(&self, file: &Path) -> Result<LoadedSessions> {
        let doc = SessionFile::read(file)?;
        let mut loaded = doc
            .load()
            .with_context(|| format!("validating {}", file.display()))?;
        if self.zone_diameter_mm.is_some() {
            loaded.protocol = loaded.protocol.with_zone_radius(self.zone_radius())?;
        }
        Ok(loaded)
    }
}

fn write(out: &Path, name: &str, contents: &str) -> Result<()> {
    write_atomic(&out.join(name), contents.as_bytes())?;
    Ok(())
}

fn default_protocol_for(run: &RunArgs) -> Result<ProtocolSpec, Error> {
    default_protocol(&default_gland(), DEFAULT_PIVOT, run.core_length_mm)?
        .with_zone_radius(run.zone_radius())
        .and_then(|p| {
            let v = biopsy_core::validate_protocol(&p);
            if v.is_empty() {
                Ok(p)
            } else {
                Err(Error::ProtocolInvalid(v))
            }
        })
}

fn profile(a: &SimulateArgs, zone_radius: f64) -> Result<OperatorProfile, Error> {
    let calibrated = OperatorProfile::calibrated(zone_radius)?;
    let p = OperatorProfile {
        two_d: NoiseLevels {
            sigma_tip: a.sigma_2d_tip.unwrap_or(calibrated.two_d.sigma_tip),
            sigma_entry: a.sigma_2d_entry.unwrap_or(calibrated.two_d.sigma_entry),
        },
        four_d: NoiseLevels {
            sigma_tip: a.sigma_4d_tip.unwrap_or(calibrated.four_d.sigma_tip),
            sigma_entry: a.sigma_4d_entry.unwrap_or(calibrated.four_d.sigma_entry),
        },
    };
    p.validate()?;
    Ok(p)
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    a.run.validate()?;
    if a.operators == 0 {
        return Err(Error::Config("--operators must be at least 1".into()).into());
    }
    let protocol = default_protocol_for(&a.run)?;
    let profile = profile(a, a.run.zone_radius())?;
    let mut cfg = CohortConfig::new(a.operators, profile, a.run.seed);
    cfg.dropout_rate = a.dropout;
    let cohort = simulate_cohort(&cfg, &protocol)?;

    let mut doc = SessionFile::from_cohort(&protocol, &cohort);
    doc.metadata.insert("seed".into(), a.run.seed.into());
    doc.metadata.insert("operators".into(), a.operators.into());
    doc.metadata.insert(
        "profile".into(),
        serde_json::to_value(profile).expect("profile serialises"),
    );
    write(&a.run.out, "sessions.json", &doc.to_json())?;

    let evaluated = evaluate_sessions(&cohort.sessions, &protocol, &a.run.coverage())?;
    let mut s = String::new();
    let _ = writeln!(s, "seed {}", a.run.seed);
    let _ = writeln!(
        s,
        "{} operators, {} sessions, {} biopsies, {} pairs excluded",
        a.operators,
        cohort.sessions.len(),
        cohort.n_biopsies(),
        cohort.excluded.len()
    );
    for m in Modality::ALL {
        let n = profile.noise(m);
        let rows: Vec<_> = evaluated.iter().filter(|e| e.modality == m).collect();
        let biopsies: Vec<_> = rows.iter().flat_map(|e| &e.biopsies).collect();
        let mean = |f: &dyn Fn(&biopsy_core::BiopsyScore) -> f64| {
            biopsies.iter().map(|b| f(b)).sum::<f64>() / biopsies.len().max(1) as f64
        };
        let vpb = rows.iter().map(|e| e.coverage.volume_per_biopsy).sum::<f64>()
            / rows.len().max(1) as f64;
        let _ = writeln!(
            s,
            "{m}: sigma_tip {:.4} mm, sigma_entry {:.4} mm; mean target error {:.2} mm, mean entry error {:.2} mm, {:.0} mm3 per biopsy",
            n.sigma_tip,
            n.sigma_entry,
            mean(&|b| b.target_error),
            mean(&|b| b.entry_error),
            vpb
        );
    }
    write(&a.run.out, "summary.txt", &s)?;
    print!("{s}");
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    a.run.validate()?;
    let loaded = a.run.load(&a.file)?;
    let evaluated = evaluate_sessions(&loaded.sessions, &loaded.protocol, &a.run.coverage())?;

    let mut biopsies = format!("{BIOPSY_CSV_HEADER}\n");
    let mut sessions = format!("{SESSION_CSV_HEADER}\n");
    for e in &evaluated {
        let m = e.modality.to_string();
        for b in &e.biopsies {
            biopsies.push_str(&biopsy_csv_row(e.operator, &m, b));
            biopsies.push('\n');
        }
        sessions.push_str(&session_csv_row(e.operator, &m, &e.coverage));
        sessions.push('\n');
    }
    for p in &loaded.plans {
        let grid = rasterize_segments(&p.segments, &loaded.protocol.gland, &a.run.coverage())?;
        let score = biopsy_core::coverage::score_grid(&grid);
        sessions.push_str(&session_csv_row(p.operator, biopsy_core::io::PLAN_MODALITY, &score));
        sessions.push('\n');
    }
    write(&a.run.out, "biopsies.csv", &biopsies)?;
    write(&a.run.out, "sessions.csv", &sessions)?;

    if a.pgm {
        for s in &loaded.sessions {
            let grid = rasterize_segments(&s.segments(), &loaded.protocol.gland, &a.run.coverage())?;
            let dir = a
                .run
                .out
                .join("coverage")
                .join(session_label(s.operator, s.repeat, &s.modality.to_string()));
            write_grid(&grid, &dir)?;
        }
        for p in &loaded.plans {
            let grid = rasterize_segments(&p.segments, &loaded.protocol.gland, &a.run.coverage())?;
            let dir = a.run.out.join("coverage").join(session_label(
                p.operator,
                0,
                biopsy_core::io::PLAN_MODALITY,
            ));
            write_grid(&grid, &dir)?;
        }
    }
    println!(
        "scored {} sessions ({} biopsies) into {}",
        evaluated.len(),
        evaluated.iter().map(|e| e.biopsies.len()).sum::<usize>(),
        a.run.out.display()
    );
    Ok(())
}

fn fmt_p(p: f64) -> String {
    format!("{p:.6}")
}

fn anova_row(out: &mut String, response: &str, source: &str, r: &AnovaRow) {
    let _ = writeln!(
        out,
        "{response},{source},{:.6},{},{:.6},{:.6},{}",
        r.ss,
        r.df,
        r.ms,
        r.f,
        fmt_p(r.p)
    );
}

fn compare_csv(c: &CohortComparison, alpha: f64) -> String {
    let mut out = String::from("measure,n,modality,mean,sd,t,df,p,significant\n");
    for cmp in &c.comparisons {
        let (t, df, p, sig) = match &cmp.result {
            Ok(r) => (
                format!("{:.6}", r.t),
                format!("{}", r.df),
                fmt_p(r.p_two_sided),
                r.significant(alpha).to_string(),
            ),
            Err(_) => Default::default(),
        };
        let _ = writeln!(
            out,
            "{},{},2D,{:.6},{:.6},{t},{df},{p},{sig}",
            cmp.name, cmp.n, cmp.mean_2d, cmp.sd_2d
        );
        let _ = writeln!(out, "{},{},4D,{:.6},{:.6},,,,", cmp.name, cmp.n, cmp.mean_4d, cmp.sd_4d);
    }
    out
}

fn anova_csv(c: &CohortComparison) -> String {
    let mut out = String::from("response,source,ss,df,ms,f,p\n");
    for a in &c.anova {
        if let Ok(t) = &a.table {
            anova_row(&mut out, a.response, "level", &t.factor_a);
            anova_row(&mut out, a.response, "position", &t.factor_b);
            anova_row(&mut out, a.response, "level:position", &t.interaction);
            let _ = writeln!(
                out,
                "{},residual,{:.6},{},{:.6},,",
                a.response, t.residual.ss, t.residual.df, t.residual.ms
            );
        }
    }
    out
}

fn compare_text(c: &CohortComparison, alpha: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} biopsy pairs, {} session pairs, alpha {alpha}",
        c.n_pairs, c.n_session_pairs
    );
    let _ = writeln!(s);
    for cmp in &c.comparisons {
        let _ = writeln!(
            s,
            "{:<20} n={:<4} 2D {:>10.3} ({:.3})  4D {:>10.3} ({:.3})",
            cmp.name, cmp.n, cmp.mean_2d, cmp.sd_2d, cmp.mean_4d, cmp.sd_4d
        );
        match &cmp.result {
            Ok(r) => {
                let verdict = if r.significant(alpha) { "significant" } else { "not significant" };
                let _ = writeln!(s, "{:<20} t = {:.3}, df = {}, p = {:.4}: {verdict}", "", r.t, r.df, r.p_two_sided);
            }
            Err(e) => {
                let _ = writeln!(s, "{:<20} not computed: {e}", "");
            }
        }
    }
    for a in &c.anova {
        let _ = writeln!(s);
        let _ = writeln!(s, "two-way ANOVA of the 2D - 4D difference in {}", a.response);
        match &a.table {
            Ok(t) => {
                for (name, r) in [
                    ("level", &t.factor_a),
                    ("position", &t.factor_b),
                    ("level:position", &t.interaction),
                ] {
                    let _ = writeln!(
                        s,
                        "  {name:<15} SS {:>10.3}  df {:>3}  F {:>8.3}  p {:.4}",
                        r.ss, r.df, r.f, r.p
                    );
                }
                let _ = writeln!(
                    s,
                    "  {:<15} SS {:>10.3}  df {:>3}",
                    "residual", t.residual.ss, t.residual.df
                );
            }
            Err(e) => {
                let _ = writeln!(s, "  not computed: {e}");
            }
        }
    }
    s
}

pub fn compare(a: &CompareArgs) -> Result<()> {
    a.run.validate()?;
    let loaded = a.run.load(&a.file)?;
    let c = compare_cohort(&loaded.sessions, &loaded.excluded, &loaded.protocol, &a.run.coverage())?;
    let text = compare_text(&c, a.run.alpha);
    write(&a.run.out, "compare.csv", &compare_csv(&c, a.run.alpha))?;
    write(&a.run.out, "anova.csv", &anova_csv(&c))?;
    write(&a.run.out, "compare.txt", &text)?;
    print!("{text}");
    for w in c.warnings() {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn plan_row(out: &mut String, source: &str, cores: usize, s: &SessionScore) {
    let fraction = if s.empty {
        String::new()
    } else {
        format!("{:.4}", s.single_coverage_fraction)
    };
    let _ = writeln!(
        out,
        "{source},{cores},{:.2},{:.2},{:.4},{fraction}",
        s.explored_volume, s.volume_per_biopsy, s.redundancy_ratio
    );
}

pub fn plan(a: &PlanArgs) -> Result<()> {
    a.run.validate()?;
    let gland = default_gland();
    let cfg = PlanConfig {
        n_cores: a.cores,
        spacing_mm: a.spacing_mm,
        pivot: DEFAULT_PIVOT,
        core_length_mm: a.run.core_length_mm,
        radius_mm: a.run.radius_mm,
        voxel_mm: a.run.voxel_mm,
        optimizer: match a.optimizer {
            OptimizerArg::Greedy => Optimizer::Greedy,
            OptimizerArg::Anneal => Optimizer::Anneal,
        },
        seed: a.run.seed,
        anneal_steps: a.anneal_steps,
        ..PlanConfig::default()
    };
    cfg.validate()?;
    let protocol = default_protocol_for(&a.run)?;
    let plan = make_plan(&gland, &cfg)?;
    let reference = protocol_plan(&protocol, &a.run.coverage())?;
    let plan_score = evaluate_plan(&plan, &gland, &a.run.coverage())?;
    let ref_score = evaluate_plan(&reference, &gland, &a.run.coverage())?;

    let mut doc = SessionFile::new(&protocol);
    doc.metadata.insert("seed".into(), a.run.seed.into());
    doc.metadata.insert(
        "planner".into(),
        serde_json::to_value(cfg).expect("plan config serialises"),
    );
    doc.push_plan(0, &plan);
    write(&a.run.out, "plan.json", &doc.to_json())?;

    let mut csv = String::from("source,cores,explored_mm3,vol_per_biopsy_mm3,redundancy,single_fraction\n");
    plan_row(&mut csv, "protocol", reference.cores.len(), &ref_score);
    plan_row(&mut csv, "plan", plan.cores.len(), &plan_score);
    write(&a.run.out, "plan_comparison.csv", &csv)?;
    if a.pgm {
        let grid = rasterize_segments(&plan.segments(), &gland, &a.run.coverage())?;
        write_grid(&grid, &a.run.out.join("coverage").join("plan"))?;
    }
    print!("{csv}");
    Ok(())
}
