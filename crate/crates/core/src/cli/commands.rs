use std::collections::BTreeMap;

use rayon::prelude::*;

use super::Outcome;
use crate::cell::{solve_cell, CellQuery, CellSolution};
use crate::error::{Error, Result};
use crate::evolve::{cole_hopf_check, convergence_study, solve_error_system, ColeHopfConfig};
use crate::io::{format_number, Cell, Command, ExperimentConfig, OutputSink, Table};
use crate::qualitative::{detect_non_mfg, run_asymptotic_sweep, run_example_1d, AsymptoticConfig, Example1DConfig};
use crate::sensitivity::{db_dP, db_dalpha, solve_all_directions, Direction};

/// Step of the central differences printed next to the sensitivity constants.
const FD_STEP: f64 = 1e-3;

pub(crate) fn validate(cfg: &ExperimentConfig) -> Result<()> {
    match cfg.command {
        Command::Evolve => cfg.evolution().map(|_| ()),
        Command::Converge => cfg.convergence().map(|_| ()),
        Command::Sweep => {
            cfg.cell_query()?;
            cfg.sweep_direction()?;
            if cfg.sweep.p_values.is_empty() || cfg.sweep.alphas.is_empty() {
                return Err(Error::Config("sweep needs at least one P value and one alpha".into()));
            }
            Ok(())
        }
        Command::Example1d => {
            cfg.cell_query()?;
            cfg.example.p_list().map(|_| ())
        }
        _ => cfg.cell_query().map(|_| ()),
    }
}

pub(crate) fn dispatch(cfg: &ExperimentConfig, sink: &mut OutputSink) -> Result<Outcome> {
    match cfg.command {
        Command::Cell => cell(cfg, sink),
        Command::Sweep => sweep(cfg, sink),
        Command::Sensitivity => sensitivity(cfg, sink),
        Command::Example1d => example1d(cfg, sink),
        Command::Asymptotic => asymptotic(cfg, sink),
        Command::Evolve => evolve(cfg, sink),
        Command::Converge => converge(cfg, sink),
        Command::Selftest => unreachable!("selftest writes no files"),
    }
}

fn cell_header(dim: usize) -> Vec<String> {
    let mut h: Vec<String> = (1..=dim).map(|i| format!("P_{i}")).collect();
    h.push("alpha".into());
    h.push("H_bar".into());
    h.extend((1..=dim).map(|i| format!("b_bar_{i}")));
    h.extend(["hjb_residual", "fp_residual", "iterations"].map(String::from));
    h
}

fn cell_row(q: &CellQuery, sol: &CellSolution) -> Vec<Cell> {
    let mut row: Vec<Cell> = q.p.iter().map(|&x| x.into()).collect();
    row.push(q.alpha.into());
    row.push(sol.h_bar.into());
    row.extend(sol.b_bar.iter().map(|&x| Cell::from(x)));
    row.push(sol.residuals.hjb.into());
    row.push(sol.residuals.fp.into());
    row.push(sol.iterations.into());
    row
}

fn cell(cfg: &ExperimentConfig, sink: &mut OutputSink) -> Result<Outcome> {
    let q = cfg.cell_query()?;
    let sol = solve_cell(&q).map_err(|e| e.at_point(&q.p, q.alpha))?;
    let mut t = Table::new(cell_header(q.grid.dim()));
    t.push(cell_row(&q, &sol));
    sink.write_table("cell.csv", &t)?;
    if q.grid.dim() == 1 {
        let g = q.grid;
        let pts = |f: &[f64]| -> Vec<(f64, f64)> { (0..g.total_points()).map(|i| (g.point(i)[0], f[i])).collect() };
        sink.write_plot("u.dat", &pts(sol.u.values()))?;
        sink.write_plot("m.dat", &pts(sol.m.values()))?;
    }
    let mut residuals = BTreeMap::new();
    residuals.insert("hjb".into(), sol.residuals.hjb);
    residuals.insert("fp".into(), sol.residuals.fp);
    residuals.insert("mass_defect".into(), (crate::grid::integrate(&sol.m) - 1.0).abs());
    Ok(Outcome {
        residuals,
        summary: vec![format!("H_bar = {}", format_number(sol.h_bar))],
    })
}

fn sweep(cfg: &ExperimentConfig, sink: &mut OutputSink) -> Result<Outcome> {
    let base = cfg.cell_query()?;
    let dir = cfg.sweep_direction()?;
    let points: Vec<(Vec<f64>, f64)> = cfg
        .sweep
        .alphas
        .iter()
        .flat_map(|&a| cfg.sweep.p_values.iter().map(move |&s| (s, a)))
        .map(|(s, a)| (dir.iter().map(|d| d * s).collect(), a))
        .collect();
    let solved = points
        .par_iter()
        .map(|(p, a)| {
            let q = base.at(p.clone(), *a);
            solve_cell(&q).map(|s| (q, s)).map_err(|e| e.at_point(p, *a))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = Table::new(cell_header(base.grid.dim()));
    let mut worst: f64 = 0.0;
    for (q, s) in &solved {
        t.push(cell_row(q, s));
        worst = worst.max(s.residuals.hjb).max(s.residuals.fp);
    }
    sink.write_table("sweep.csv", &t)?;
    for (k, &a) in cfg.sweep.alphas.iter().enumerate() {
        let pts: Vec<(f64, f64)> = cfg
            .sweep
            .p_values
            .iter()
            .zip(solved.iter().filter(|(q, _)| q.alpha == a))
            .map(|(&s, (_, sol))| (s, sol.h_bar))
            .collect();
        sink.write_plot(&format!("h_bar_alpha_{k}.dat"), &pts)?;
    }
    let mut residuals = BTreeMap::new();
    residuals.insert("max_residual".into(), worst);
    Ok(Outcome {
        residuals,
        summary: vec![format!("{} points solved", solved.len())],
    })
}

fn sensitivity(cfg: &ExperimentConfig, sink: &mut OutputSink) -> Result<Outcome> {
    let q = cfg.cell_query()?;
    let base = solve_cell(&q).map_err(|e| e.at_point(&q.p, q.alpha))?;
    let sens = solve_all_directions(&base, &q).map_err(|e| e.at_point(&q.p, q.alpha))?;
    let h = |p: Vec<f64>, a: f64| -> Result<f64> {
        let qq = q.at(p.clone(), a);
        solve_cell_from_base(&qq, &base).map_err(|e| e.at_point(&p, a))
    };
    let dim = q.grid.dim();
    let mut header: Vec<String> = (1..=dim).map(|i| format!("P_{i}")).collect();
    header.extend(["alpha", "direction", "constant", "fd_reference", "defect"].map(String::from));
    let mut t = Table::new(header);
    let mut db_header = vec!["direction".to_string()];
    db_header.extend((1..=dim).map(|i| format!("db_bar_{i}")));
    let mut dbt = Table::new(db_header);
    let mut residuals = BTreeMap::new();
    let mut summary = Vec::new();
    for s in &sens {
        let (name, fd, db) = match s.direction {
            Direction::Axis(i) => {
                let mut plus = q.p.clone();
                let mut minus = q.p.clone();
                plus[i] += FD_STEP;
                minus[i] -= FD_STEP;
                let fd = (h(plus, q.alpha)? - h(minus, q.alpha)?) / (2.0 * FD_STEP);
                (format!("P_{}", i + 1), fd, db_dP(&base, s)?)
            }
            Direction::Alpha => {
                let lo = (q.alpha - FD_STEP).max(0.0);
                let hi = q.alpha + FD_STEP;
                let fd = (h(q.p.clone(), hi)? - h(q.p.clone(), lo)?) / (hi - lo);
                ("alpha".to_string(), fd, db_dalpha(&base, s)?)
            }
        };
        let mut row: Vec<Cell> = q.p.iter().map(|&x| x.into()).collect();
        row.push(q.alpha.into());
        row.push(name.clone().into());
        row.push(s.constant.into());
        row.push(fd.into());
        row.push((s.constant - fd).abs().into());
        t.push(row);
        let mut drow: Vec<Cell> = vec![name.clone().into()];
        drow.extend(db.iter().map(|&x| Cell::from(x)));
        dbt.push(drow);
        residuals.insert(format!("{name}_block_residual"), s.residual);
        residuals.insert(format!("{name}_formula_gap"), (s.constant - s.formula_constant).abs());
        summary.push(format!("d H_bar / d {name} = {}", format_number(s.constant)));
    }
    sink.write_table("sensitivity.csv", &t)?;
    sink.write_table("drift_sensitivity.csv", &dbt)?;
    Ok(Outcome { residuals, summary })
}

fn solve_cell_from_base(q: &CellQuery, base: &CellSolution) -> Result<f64> {
    crate::cell::solve_cell_from(q, Some(base)).map(|s| s.h_bar)
}

fn example1d(cfg: &ExperimentConfig, sink: &mut OutputSink) -> Result<Outcome> {
    let q = cfg.cell_query()?;
    if q.grid.dim() != 1 {
        return Err(Error::Config("example1d runs on a 1-D grid".into()));
    }
    let mut ec = Example1DConfig::default_with(q.grid, cfg.example.p_step);
    ec.p_list = cfg.example.p_list()?;
    ec.alpha = cfg.example.alpha;
    ec.base = q.at(vec![ec.p_list[0]], ec.alpha);
    let records = run_example_1d(&ec)?;
    let report = detect_non_mfg(&records, cfg.query.newton_tol)?;
    let mut t = Table::new([
        "P",
        "alpha",
        "H_bar",
        "dH_dP",
        "b_bar",
        "m_L2_sq",
        "gap",
        "identity_defect",
        "error_estimate",
        "flags",
    ]);
    let opt = |x: Option<f64>| -> Cell { x.map_or(Cell::Text(String::new()), Cell::Num) };
    for (r, c) in records.iter().zip(&report.checks) {
        t.push(vec![
            r.p.into(),
            r.alpha.into(),
            r.h_bar.into(),
            r.dh_dp.into(),
            r.b_bar.into(),
            r.m_l2_sq.into(),
            r.gap.into(),
            opt(c.identity_defect),
            opt(c.error_estimate),
            if c.flagged { "non-mfg-gap" } else { "" }.into(),
        ]);
    }
    sink.write_table("example1d.csv", &t)?;
    let ratio: Vec<(f64, f64)> = records.iter().map(|r| (r.p, r.dh_dp / r.b_bar)).collect();
    sink.write_plot("dh_dp_over_b_bar.dat", &ratio)?;
    let mass: Vec<(f64, f64)> = records.iter().map(|r| (r.p, r.m_l2_sq)).collect();
    sink.write_plot("m_l2_sq.dat", &mass)?;
    let mut residuals = BTreeMap::new();
    residuals.insert("max_identity_defect".into(), report.max_identity_defect);
    residuals.insert("flagged_samples".into(), report.flagged as f64);
    Ok(Outcome {
        residuals,
        summary: vec![format!(
            "{} samples, {} flagged, max identity defect {}",
            records.len(),
            report.flagged,
            format_number(report.max_identity_defect)
        )],
    })
}

fn asymptotic(cfg: &ExperimentConfig, sink: &mut OutputSink) -> Result<Outcome> {
    let q = cfg.cell_query()?;
    let mut ac = AsymptoticConfig::new(q, cfg.asymptotic.alphas.clone(), cfg.asymptotic.p_magnitudes.clone());
    ac.direction = cfg.sweep_direction()?;
    let sweep = run_asymptotic_sweep(&ac)?;
    let mut t = Table::new([
        "alpha",
        "P_norm",
        "H_bar",
        "H_over_half_P2",
        "b_minus_P_rel",
        "grad_u_over_P",
        "drift_bound",
        "drift_bound_holds",
        "gradient_bound_holds",
    ]);
    for r in &sweep.records {
        t.push(vec![
            r.alpha.into(),
            r.p_norm.into(),
            r.h_bar.into(),
            r.h_over_half_p2.into(),
            r.b_minus_p_rel.into(),
            r.grad_u_over_p.into(),
            r.drift_bound.into(),
            r.drift_bound_holds.to_string().into(),
            r.gradient_bound_holds.to_string().into(),
        ]);
    }
    sink.write_table("asymptotic.csv", &t)?;
    for (k, &a) in sweep.alphas.iter().enumerate() {
        let pts: Vec<(f64, f64)> = sweep
            .records
            .iter()
            .filter(|r| r.alpha == a)
            .map(|r| (r.p_norm, r.h_over_half_p2))
            .collect();
        sink.write_plot(&format!("h_ratio_alpha_{k}.dat"), &pts)?;
    }
    Ok(Outcome {
        residuals: BTreeMap::new(),
        summary: vec![format!("{} records", sweep.records.len())],
    })
}

fn evolve(cfg: &ExperimentConfig, sink: &mut OutputSink) -> Result<Outcome> {
    let ec = cfg.evolution()?;
    let run = solve_error_system(&ec)?;
    let mut t = Table::new(["t", "E", "grad_v_L2_sq", "n_L3_2", "min_density"]);
    for d in &run.diagnostics {
        t.push(vec![
            d.t.into(),
            d.energy.into(),
            d.grad_v_sq.into(),
            d.n_lp.into(),
            d.min_density.into(),
        ]);
    }
    sink.write_table("evolve.csv", &t)?;
    let energy: Vec<(f64, f64)> = run.diagnostics.iter().map(|d| (d.t, d.energy)).collect();
    sink.write_plot("energy.dat", &energy)?;
    let mut residuals = BTreeMap::new();
    residuals.insert("dissipation_lhs".into(), run.dissipation_lhs());
    residuals.insert("dissipation_rhs".into(), run.dissipation_rhs());
    residuals.insert("energy_drift".into(), run.energy_drift());
    residuals.insert("max_mass_drift".into(), run.max_mass_drift);
    residuals.insert("min_density".into(), run.min_density);
    residuals.insert("coupling_iterations".into(), run.coupling_iterations as f64);
    let mut summary = vec![format!(
        "coupling converged in {} sweeps, energy drift {}",
        run.coupling_iterations,
        format_number(run.energy_drift())
    )];
    if run.sign_flagged() {
        summary.push("warning: a dissipation integrand is negative".into());
    }
    if let Some(steps) = cfg.evolve.cole_hopf_steps {
        let r = cole_hopf_check(&run, &ColeHopfConfig { time_steps: steps })?;
        residuals.insert("cole_hopf_defect".into(), r.defect);
        summary.push(format!("transform defect {}", format_number(r.defect)));
    }
    Ok(Outcome { residuals, summary })
}

fn converge(cfg: &ExperimentConfig, sink: &mut OutputSink) -> Result<Outcome> {
    let cc = cfg.convergence()?;
    let report = convergence_study(&cc)?;
    let slope = match report.grad_v_slope {
        Some(s) => format_number(s),
        None => "exact".to_string(),
    };
    let mut t = Table::new(["epsilon", "time_steps", "D", "N", "reconstruction_error", "slope"]);
    for r in &report.rows {
        t.push(vec![
            r.epsilon.into(),
            r.time_steps.into(),
            r.grad_v_integral.into(),
            r.n_p_integral.into(),
            r.reconstruction_error.into(),
            slope.clone().into(),
        ]);
    }
    sink.write_table("converge.csv", &t)?;
    let pts: Vec<(f64, f64)> = report.rows.iter().map(|r| (r.epsilon, r.grad_v_integral)).collect();
    sink.write_plot("dissipation_vs_eps.dat", &pts)?;
    let mut residuals = BTreeMap::new();
    if let Some(s) = report.grad_v_slope {
        residuals.insert("slope".into(), s);
    }
    let worst = report.rows.iter().map(|r| r.dissipation_defect).fold(0.0, f64::max);
    residuals.insert("max_dissipation_defect".into(), worst);
    Ok(Outcome {
        residuals,
        summary: vec![format!("slope {slope}")],
    })
}
