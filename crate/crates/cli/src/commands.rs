use std::fmt::Write as _;

use choreo4::bvp::{
    kepler_seed, reg_state_at, residual_from_state, seed_to_regularized, solve_reg, tau_for_time,
    BvpKind, Problem, RegOrbit, RegSeed, SolutionRecord,
};
use choreo4::continuation::{
    census, discover_families, label_families, refine_periodic, trace_family, write_curves_csv,
    write_records_csv, FamilyCurve, FamilyPoint, SeedGrid, VERIFY_TOL,
};
use choreo4::dynamics::{
    eight_initial_conditions, propagate_choreography, refined_period, FourBody, SystemState,
};
use choreo4::integrate;
use choreo4::symmetry::relative_diff;
use choreo4::table::{check_rows, parse_table, row_by_index, RowThresholds, TableRow, TABLE};

use crate::config::{Chart, RunConfig};
use crate::output::write_atomic;
use crate::CliError;

pub const TRAJECTORY_CSV_HEADER: &str = "# choreo4 trajectory v1";
pub const VERIFY_CSV_HEADER: &str = "# choreo4 table-check v1";

fn row(i: usize) -> Result<&'static TableRow, CliError> {
    row_by_index(i).ok_or_else(|| CliError::Usage(format!("table rows are 1..=24, got {i}")))
}

/// Start of `propagate`, `solve` and `trace`: a record file, else a row.
fn start(cfg: &RunConfig) -> Result<(RegSeed, f64), CliError> {
    if let Some(path) = &cfg.record {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read record {}: {e}", path.display())))?;
        let r = SolutionRecord::from_text(&text)?;
        return Ok((r.seed, r.tau0));
    }
    match cfg.row {
        Some(i) => {
            let r = row(i)?;
            Ok((r.seed(), r.tau0))
        }
        None => Err(CliError::Usage(
            "give a start with --row N or --record PATH".into(),
        )),
    }
}

fn trajectory_line(out: &mut String, s: &SystemState) {
    let b = &s.bodies;
    let _ = writeln!(
        out,
        "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
        s.t,
        b[0].r.x,
        b[0].r.y,
        b[1].r.x,
        b[1].r.y,
        b[2].r.x,
        b[2].r.y,
        b[3].r.x,
        b[3].r.y,
        b[3].v.x,
        b[3].v.y
    );
}

pub fn propagate(cfg: &RunConfig) -> Result<(), CliError> {
    let p = cfg.problem()?;
    let consts = eight_initial_conditions();
    let default_span = if cfg.choreography {
        consts.period
    } else {
        p.orbit_period()
    };
    let span = cfg.span.unwrap_or(default_span);
    if !(span >= 0.0 && span.is_finite()) {
        return Err(CliError::Usage(format!(
            "span must be finite and non-negative, got {span}"
        )));
    }
    let mut csv = format!("{TRAJECTORY_CSV_HEADER}\nt,x1,y1,x2,y2,x3,y3,x,y,vx,vy\n");
    let n = cfg.points.max(1);
    let times: Vec<f64> = (0..=n).map(|k| span * k as f64 / n as f64).collect();
    if span == 0.0 {
        let path = write_atomic(&cfg.out, "trajectory.csv", csv.as_bytes())?;
        println!("span=0");
        println!("wrote={}", path.display());
        return Ok(());
    }
    if cfg.choreography {
        let tr = propagate_choreography(span, &p.cfg)?;
        let mut last = consts.ic;
        for &t in &times {
            let mut s = SystemState::from_vector(t, &tr.eval(t)?);
            s.bodies[3].r.x = f64::NAN;
            s.bodies[3].r.y = f64::NAN;
            s.bodies[3].v.x = f64::NAN;
            s.bodies[3].v.y = f64::NAN;
            trajectory_line(&mut csv, &s);
            last = s;
        }
        let closure = (0..3)
            .map(|i| last.bodies[i].max_abs_diff(&consts.ic.bodies[i]))
            .fold(0.0, f64::max);
        let path = write_atomic(&cfg.out, "trajectory.csv", csv.as_bytes())?;
        println!("span={span}");
        println!("closure={closure:e}");
        println!("wrote={}", path.display());
        return Ok(());
    }
    let (seed, _) = start(cfg)?;
    let states: Vec<SystemState> = match cfg.chart {
        Chart::Reg => {
            let orbit = RegOrbit::new(&seed, span, &p)?;
            times
                .iter()
                .map(|&t| orbit.system_at(t))
                .collect::<Result<_, _>>()?
        }
        Chart::Cart => {
            let c = seed.to_cartesian(&consts)?;
            let y0 = consts.with_test_particle(c.body()).to_vector();
            let sys = FourBody::new(p.masses);
            let tr = integrate::propagate(&sys, y0, (0.0, span), &p.cfg)?;
            times
                .iter()
                .map(|&t| Ok(SystemState::from_vector(t, &tr.eval(t)?)))
                .collect::<Result<_, choreo4::Error>>()?
        }
    };
    for s in &states {
        trajectory_line(&mut csv, s);
    }
    let (first, last) = (states[0].bodies[3], states[states.len() - 1].bodies[3]);
    let path = write_atomic(&cfg.out, "trajectory.csv", csv.as_bytes())?;
    println!("span={span}");
    println!("closure={:e}", relative_diff(&last, &first));
    println!("closure_abs={:e}", last.max_abs_diff(&first));
    println!("wrote={}", path.display());
    Ok(())
}

pub fn seed(cfg: &RunConfig) -> Result<(), CliError> {
    let p = cfg.problem()?;
    let c = kepler_seed(&cfg.kepler, &p.consts)?;
    let s = seed_to_regularized(&c, &p.consts)?;
    let tau0 = tau_for_time(&s, p.target_time(), &p)?;
    let end = reg_state_at(&s, tau0, &p)?;
    let r = residual_from_state(BvpKind::R, &end, &p);
    let rec = SolutionRecord {
        kind: BvpKind::R,
        seed: s,
        tau0,
        t0: end.t,
        residual_norm: r[0].abs().max(r[1].abs()),
    };
    let text = rec.to_text();
    let path = write_atomic(&cfg.out, "seed.txt", text.as_bytes())?;
    println!("x0={:e}", c.x0);
    println!("vy0={:e}", c.vy0);
    print!("{text}");
    println!("wrote={}", path.display());
    Ok(())
}

pub fn solve(cfg: &RunConfig) -> Result<(), CliError> {
    let p = cfg.problem()?;
    let (guess, tau0) = start(cfg)?;
    if cfg.periodic {
        let cand = FamilyPoint::evaluate(&guess, tau0, &p)?;
        let r = refine_periodic(&cand, &p, &cfg.newton, cfg.samples, VERIFY_TOL)?;
        let rec = SolutionRecord {
            kind: BvpKind::R,
            seed: r.point.seed,
            tau0: r.point.tau0,
            t0: r.point.t0,
            residual_norm: r.point.residual,
        };
        let text = rec.to_text();
        let path = write_atomic(&cfg.out, "solution.txt", text.as_bytes())?;
        print!("{text}");
        println!("motion={}", r.motion);
        println!("shooting={}", r.shooting);
        print!("{}", r.report);
        println!("wrote={}", path.display());
        return if r.report.success() {
            Ok(())
        } else {
            Err(CliError::Verification(
                "the refined orbit fails the symmetry check".into(),
            ))
        };
    }
    let rec = solve_reg(cfg.kind, &guess, tau0, cfg.fix, &p, &cfg.newton)?;
    let text = rec.to_text();
    let path = write_atomic(&cfg.out, "solution.txt", text.as_bytes())?;
    print!("{text}");
    println!("wrote={}", path.display());
    Ok(())
}

fn trace_starts(cfg: &RunConfig, p: &Problem) -> Result<Vec<FamilyPoint>, CliError> {
    let seeds: Vec<(RegSeed, f64)> = if cfg.record.is_some() || cfg.row.is_some() {
        vec![start(cfg)?]
    } else {
        let rows = cfg
            .rows
            .unwrap_or(crate::config::Rows { first: 1, last: 6 });
        (rows.first..=rows.last)
            .map(|i| row(i).map(|r| (r.seed(), r.tau0)))
            .collect::<Result<_, _>>()?
    };
    seeds
        .iter()
        .map(|(s, t)| FamilyPoint::solve(s, *t, p, &cfg.newton).map_err(CliError::from))
        .collect()
}

pub fn trace(cfg: &RunConfig) -> Result<(), CliError> {
    let p = cfg.problem()?;
    let cont = &cfg.continuation;
    let curves: Vec<FamilyCurve> = if cfg.discover {
        discover_families(&SeedGrid::default(), cont, &p, &cfg.newton)?
    } else {
        let mut curves = Vec::new();
        for s in trace_starts(cfg, &p)? {
            curves.push(trace_family(&s, cont, &p)?);
        }
        label_families(&mut curves, cont.family_window, &p, &cfg.newton);
        curves
    };
    let cen = census(&curves, &p, &cfg.newton, cfg.samples, VERIFY_TOL);
    let mut buf = Vec::new();
    write_curves_csv(&mut buf, &curves)?;
    let curves_path = write_atomic(&cfg.out, "curves.csv", &buf)?;
    buf.clear();
    write_records_csv(&mut buf, &cen.records)?;
    let records_path = write_atomic(&cfg.out, "records.csv", &buf)?;
    for c in &curves {
        let fam = c
            .family_index
            .map(|i| i.to_string())
            .unwrap_or_else(|| "-".into());
        println!(
            "curve family={fam} points={} crossing={} ends={} | {}",
            c.len(),
            c.crossing
                .map(|x| format!("{x:.9}"))
                .unwrap_or_else(|| "-".into()),
            c.ends.0,
            c.ends.1
        );
        if c.is_truncated() {
            eprintln!(
                "warning: curve of family {fam} is truncated ({} | {})",
                c.ends.0, c.ends.1
            );
        }
    }
    for r in &cen.records {
        let (rep, u, w) = r.point.active();
        println!(
            "orbit family={} rep={rep} u={u:.12e} w={w:.12e} tau0={:.12} motion={} shooting={} verified={}",
            r.family_index.map(|i| i.to_string()).unwrap_or_else(|| "-".into()),
            r.point.tau0,
            r.motion,
            r.shooting,
            r.report.success()
        );
    }
    for (fam, s, e) in &cen.rejected {
        eprintln!("warning: candidate at s={s:.6} of family {fam:?} rejected: {e}");
    }
    println!("curves={} orbits={}", curves.len(), cen.records.len());
    println!("wrote={}", curves_path.display());
    println!("wrote={}", records_path.display());
    Ok(())
}

pub fn verify_table(cfg: &RunConfig) -> Result<(), CliError> {
    let p = cfg.problem()?;
    let rows: Vec<TableRow> = match &cfg.table {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Usage(format!("cannot read table {}: {e}", path.display()))
            })?;
            parse_table(&text)?
        }
        None => TABLE.to_vec(),
    };
    let rows: Vec<TableRow> = rows
        .into_iter()
        .filter(|r| cfg.rows.is_none_or(|w| w.contains(r.index)))
        .collect();
    if rows.is_empty() {
        return Err(CliError::Usage("no table rows selected".into()));
    }
    let th = RowThresholds::default();
    let mut csv = format!(
        "{VERIFY_CSV_HEADER}\nrow,residual,time_defect,closure,symmetry,closure_at_period,pass\n"
    );
    let mut failed = Vec::new();
    for (r, res) in rows.iter().zip(check_rows(&rows, &p, cfg.samples)) {
        match res {
            Ok(c) => {
                let pass = c.passes(&th);
                println!(
                    "row {:2} residual={:.2e} time={:+.2e} closure={:.2e} symmetry={:.2e} {}",
                    c.index,
                    c.residual,
                    c.time_defect,
                    c.closure,
                    c.report.symmetry,
                    if pass { "PASS" } else { "FAIL" }
                );
                let _ = writeln!(
                    csv,
                    "{},{:e},{:e},{:e},{:e},{:e},{pass}",
                    c.index,
                    c.residual,
                    c.time_defect,
                    c.closure,
                    c.report.symmetry,
                    c.closure_at_period
                );
                if !pass {
                    failed.push(c.index);
                }
            }
            Err(e) => {
                println!("row {:2} error: {e} FAIL", r.index);
                let _ = writeln!(csv, "{},,,,,,false", r.index);
                failed.push(r.index);
            }
        }
    }
    let path = write_atomic(&cfg.out, "table-check.csv", csv.as_bytes())?;
    println!("passed={}/{}", rows.len() - failed.len(), rows.len());
    println!("wrote={}", path.display());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!("rows {failed:?} fail")))
    }
}

pub fn export_constants(cfg: &RunConfig) -> Result<(), CliError> {
    let p = cfg.problem()?;
    let c = eight_initial_conditions();
    let refined = refined_period();
    let m = p.masses;
    let mut text = String::new();
    let _ = writeln!(text, "period={:e}", c.period);
    let _ = writeln!(text, "period_refined={:e}", refined.refined);
    let _ = writeln!(text, "tbar={:e}", c.tbar);
    let _ = writeln!(text, "boundary_time={:e}", p.target_time());
    let _ = writeln!(text, "orbit_period={:e}", p.orbit_period());
    let _ = writeln!(text, "masses={},{},{},{}", m.m1, m.m2, m.m3, m.m4);
    for (i, b) in c.ic.bodies.iter().take(3).enumerate() {
        let k = i + 1;
        let _ = writeln!(
            text,
            "x{k}={:e}\ny{k}={:e}\nvx{k}={:e}\nvy{k}={:e}",
            b.r.x, b.r.y, b.v.x, b.v.y
        );
    }
    let path = write_atomic(&cfg.out, "constants.txt", text.as_bytes())?;
    print!("{text}");
    println!("wrote={}", path.display());
    Ok(())
}
