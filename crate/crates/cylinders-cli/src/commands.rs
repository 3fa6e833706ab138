//! Subcommand implementations and their exit-code contract:
//! 0 success/certified, 2 structural failure, 3 numeric infeasibility,
//! 4 parse or validation error (1 for everything else).

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use cylinders::analysis::{self, AnalysisError};
use cylinders::geometry::{Cylinder, ProjectionKind};
use cylinders::linalg::SymMat;
use cylinders::simulation::{self, CorridorSection};
use cylinders::synthesis::{self, CclOptions, SynthesisError};
use nalgebra::DMatrix;

use crate::format::{self, ControllerFile};

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub type CmdResult = Result<(), Failure>;

fn fail(code: u8, error: anyhow::Error) -> Failure {
    Failure { code, error }
}

fn parse_fail(error: anyhow::Error) -> Failure {
    fail(4, error)
}

trait Ctx<T> {
    fn or_code(self, code: u8) -> Result<T, Failure>;
}

impl<T> Ctx<T> for Result<T> {
    fn or_code(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| fail(code, e))
    }
}

fn print_matrix(label: &str, m: &DMatrix<f64>) {
    println!("{label}: {}x{}", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|j| format!("{:>14.6e}", m[(i, j)]))
            .collect();
        println!("  [{}]", row.join(", "));
    }
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

pub fn analyze(
    problem_path: &Path,
    output_map: Option<&str>,
    alpha_grid: Option<Vec<f64>>,
) -> CmdResult {
    let file = format::load_problem(problem_path).map_err(parse_fail)?;
    let (sys, file_c) = file.analysis_system().map_err(parse_fail)?;
    let c = match output_map {
        Some(text) => format::parse_matrix_literal(text).map_err(parse_fail)?,
        None => file_c.ok_or_else(|| {
            parse_fail(anyhow!(
                "no output map: provide --output-map or an [analysis] C entry"
            ))
        })?,
    };

    let report =
        analysis::check_output_regularity(&c, sys.drift()).map_err(|e| fail(4, anyhow!("{e}")))?;
    println!(
        "regularity: {} (rank {} of {} rows, closure residual {:.3e})",
        if report.ok { "ok" } else { "FAILED" },
        report.output_rank,
        report.rows,
        report.residual
    );
    if !report.ok {
        return Err(fail(
            2,
            anyhow!("output map is not regular for this system"),
        ));
    }

    let grid = match alpha_grid.or_else(|| file.options.alpha_grid.clone()) {
        Some(g) => g,
        None => {
            analysis::default_alpha_grid(&c, sys.drift()).map_err(|e| fail(1, anyhow!("{e}")))?
        }
    };
    let found = match analysis::find_attracting_cylinder(&sys, &c, &grid) {
        Ok(found) => found,
        Err(AnalysisError::Infeasible {
            best_margin,
            per_alpha,
        }) => {
            println!("infeasible over the alpha grid; best margin {best_margin:.3e}");
            println!(
                "{:>12} {:>10} {:>14} {:>14}",
                "alpha", "feasible", "log det P", "margin"
            );
            for st in &per_alpha {
                println!(
                    "{:>12.6} {:>10} {:>14.6e} {:>14.6e}",
                    st.alpha, st.feasible, st.log_det, st.margin
                );
            }
            return Err(fail(
                3,
                anyhow!("no alpha in the grid admits a certificate"),
            ));
        }
        Err(e) => return Err(fail(1, anyhow!("{e}"))),
    };

    println!("alpha: {}", found.alpha);
    print_matrix("P", found.p.as_matrix());
    println!(
        "cylinder: rank {} in dimension {}",
        found.cylinder.rank(),
        found.cylinder.ambient_dim()
    );
    println!("margin: {:.6e}", found.lmi_margin);
    let (p_vals, _) = found.p.eigen();
    let semiaxes: Vec<String> = p_vals
        .iter()
        .map(|&l| format!("{:.6}", 1.0 / l.sqrt()))
        .collect();
    println!("cross-section semiaxes: [{}]", semiaxes.join(", "));
    if found.p.dim() == 1 {
        // scalar case: the attracting bound on the squared output
        println!("scalar_bound: {}", 1.0 / found.p.as_matrix()[(0, 0)]);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// synthesize
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn synthesize(
    problem_path: &Path,
    output: &Path,
    paper_mode: bool,
    alpha_grid: Option<Vec<f64>>,
    stop_tol: Option<f64>,
    max_iters: Option<usize>,
    no_early_exit: bool,
    min_norm_y: bool,
) -> CmdResult {
    let file = format::load_problem(problem_path).map_err(parse_fail)?;
    let problem = file.synthesis_problem().map_err(parse_fail)?;

    let grid = if paper_mode {
        vec![file.options.paper_alpha.ok_or_else(|| {
            parse_fail(anyhow!(
                "--paper-mode needs options.paper_alpha in the problem file"
            ))
        })?]
    } else if let Some(g) = alpha_grid {
        g
    } else if let Some(g) = file.options.alpha_grid.clone() {
        g
    } else {
        let lifted = synthesis::assemble(&problem);
        let reduced = synthesis::reduce(&lifted).map_err(|e| fail(1, anyhow!("{e}")))?;
        analysis::default_alpha_grid(
            &DMatrix::identity(reduced.drift.nrows(), reduced.drift.nrows()),
            &reduced.drift,
        )
        .map_err(|e| fail(1, anyhow!("{e}")))?
    };
    let mut ccl = CclOptions::default();
    if let Some(v) = stop_tol.or(file.options.stop_tol) {
        ccl.stop_tol = v;
    }
    if let Some(v) = max_iters.or(file.options.max_iters) {
        ccl.max_iters = v;
    }
    if no_early_exit {
        ccl.early_exit = false;
    } else if let Some(v) = file.options.early_exit {
        ccl.early_exit = v;
    }
    ccl.min_norm_y = min_norm_y;

    let outcome = match synthesis::synthesize(&problem, &grid, &ccl) {
        Ok(outcome) => outcome,
        Err(SynthesisError::SolvabilityFailed { residual }) => {
            println!("solvability: FAILED (relative residual {residual:.3e})");
            return Err(fail(2, anyhow!("structural solvability condition fails")));
        }
        Err(SynthesisError::NoFeasibleAlpha { attempts }) => {
            println!("{:>12} outcome", "alpha");
            for at in &attempts {
                println!("{:>12.6} {:?}", at.alpha, at.outcome);
            }
            return Err(fail(3, anyhow!("no alpha produced a verified controller")));
        }
        Err(e) => return Err(fail(1, anyhow!("{e}"))),
    };

    let d = &outcome.diagnostics;
    println!(
        "solvability: ok (residual {:.3e}{})",
        d.solvability.residual,
        d.solvability
            .tracking_residual
            .map(|r| format!(", tracking form {r:.3e}"))
            .unwrap_or_default()
    );
    println!("alpha: {}", d.chosen_alpha);
    let chosen = d
        .attempts
        .iter()
        .find(|a| a.alpha == d.chosen_alpha)
        .expect("chosen alpha recorded");
    println!(
        "iterations: {} minimization steps{}{}",
        chosen.trace_history.len(),
        if d.ccl_early_exit { ", early exit" } else { "" },
        if d.ccl_converged {
            ", trace converged"
        } else {
            ""
        }
    );
    if !chosen.trace_history.is_empty() {
        let hist: Vec<String> = chosen
            .trace_history
            .iter()
            .map(|t| format!("{t:.4}"))
            .collect();
        let k = problem.target.target_dim();
        println!(
            "trace history (target 2k = {}): [{}]",
            2 * k,
            hist.join(", ")
        );
    }
    print_matrix("P", outcome.closed_loop.p.as_matrix());
    println!("margin: {:.6e}", outcome.closed_loop.margin);

    let ctrl = &outcome.controller;
    if ctrl.is_effectively_static(1e-6) && ctrl.order() > 0 {
        println!("note: controller is effectively static (dynamic blocks below 1e-6)");
    }
    if ctrl.order() == problem.plant.state_dim() {
        // observer-shaped problems: distance to the one-step corrector form
        let gap =
            cylinders::linalg::fro(&(&ctrl.a - (&problem.plant.a - &ctrl.b_y * &problem.plant.c)));
        println!("observer structure gap |A3 - (A1 - B3*D1)|: {gap:.6e}");
    }

    let out_file = ControllerFile::from_parts(
        ctrl,
        &outcome.closed_loop.p,
        outcome.closed_loop.alpha,
        Some(outcome.closed_loop.margin),
    );
    format::save_controller(output, &out_file).or_code(1)?;
    println!("controller written to {}", output.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

pub fn verify(
    problem_path: &Path,
    controller_path: &Path,
    alpha: Option<f64>,
    soft: Option<f64>,
) -> CmdResult {
    let file = format::load_problem(problem_path).map_err(parse_fail)?;
    let problem = file.synthesis_problem().map_err(parse_fail)?;
    let ctrl_file = format::load_controller(controller_path).map_err(parse_fail)?;
    let ctrl = ctrl_file.controller(&problem.dims()).map_err(parse_fail)?;
    let p = ctrl_file.p_matrix().map_err(parse_fail)?;
    let alpha = alpha.unwrap_or(ctrl_file.certificate.alpha);

    let (m, n) = synthesis::close_loop_physical(&problem.plant, &problem.reference, &ctrl)
        .map_err(|e| fail(1, anyhow!("{e}")))?;
    let target = problem.target.stacked();
    let sys = analysis::DisturbedSystem::new(m, n, problem.bound.clone())
        .map_err(|e| fail(1, anyhow!("{e}")))?;
    let check = analysis::check_certificate(&sys, &target, &p, alpha)
        .map_err(|e| fail(1, anyhow!("{e}")))?;
    println!("alpha: {alpha}");
    println!("margin: {:.6e}", check.margin);
    println!("relative_margin: {:.6e}", check.relative_margin());
    match soft {
        None => {
            if check.margin < 0.0 {
                println!("certified: the target cylinder is invariant and attracting");
                Ok(())
            } else {
                println!("NOT certified (margin is nonnegative)");
                Err(fail(
                    3,
                    anyhow!("certificate check failed with margin {:.3e}", check.margin),
                ))
            }
        }
        Some(rel) => {
            if check.relative_margin() <= rel {
                println!("within the soft tolerance {rel:.1e} (rounded data accepted)");
                Ok(())
            } else {
                println!("outside the soft tolerance {rel:.1e}");
                Err(fail(
                    3,
                    anyhow!(
                        "relative margin {:.3e} exceeds {rel:.1e}",
                        check.relative_margin()
                    ),
                ))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub fn simulate(
    problem_path: &Path,
    controller_path: &Path,
    out_dir: &Path,
    dt_override: Option<f64>,
    horizon_override: Option<f64>,
) -> CmdResult {
    let file = format::load_problem(problem_path).map_err(parse_fail)?;
    let problem = file.synthesis_problem().map_err(parse_fail)?;
    let ctrl_file = format::load_controller(controller_path).map_err(parse_fail)?;
    let ctrl = ctrl_file.controller(&problem.dims()).map_err(parse_fail)?;
    let p = ctrl_file.p_matrix().map_err(parse_fail)?;

    let sim = file
        .simulation
        .as_ref()
        .ok_or_else(|| parse_fail(anyhow!("missing [simulation] section")))?;
    let signal = file
        .signal_spec()
        .map_err(parse_fail)?
        .expect("simulation section present");
    let dims = problem.dims();
    let s0 = format::to_vector(&sim.s0, dims.state(), "s0").map_err(parse_fail)?;
    let dt = dt_override.unwrap_or(sim.dt);
    let horizon = horizon_override.unwrap_or(sim.horizon);

    let (m, n) = synthesis::close_loop_physical(&problem.plant, &problem.reference, &ctrl)
        .map_err(|e| fail(1, anyhow!("{e}")))?;
    let trace = match simulation::simulate(&m, &n, &signal, &s0, dt, horizon, Some(&problem.bound))
    {
        Ok(trace) => trace,
        Err(simulation::SimulationError::Diverged { t }) => {
            return Err(fail(1, anyhow!("simulation diverged at t = {t}")));
        }
        Err(e) => return Err(fail(4, anyhow!("{e}"))),
    };

    let target = problem.target.stacked();
    let series =
        simulation::membership_series(&trace, &target, &p).map_err(|e| fail(1, anyhow!("{e}")))?;
    let q = SymMat::symmetrize(target.transpose() * p.as_matrix() * &target)
        .map_err(|e| fail(1, anyhow!("{e}")))?;
    let cylinder = Cylinder::new(q).map_err(|e| fail(1, anyhow!("{e}")))?;

    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))
        .or_code(1)?;
    let labels = format::state_labels(&dims);

    write_trace_csv(&out_dir.join("trace.csv"), &trace, &series.values, &labels).or_code(1)?;

    let axes = sim
        .projection_axes
        .map(|[i, j]| (i - 1, j - 1))
        .or_else(|| format::corridor_pairs_from_target(&target).first().copied());
    if let Some((i, j)) = axes {
        let proj = simulation::projection_series(&trace, &cylinder, i, j)
            .map_err(|e| fail(4, anyhow!("{e}")))?;
        write_projection_csv(&out_dir.join("projection.csv"), &trace, &proj).or_code(1)?;
    }

    let pairs: Vec<(usize, usize)> = match &sim.corridor_pairs {
        Some(list) => list.iter().map(|[i, j]| (i - 1, j - 1)).collect(),
        None => format::corridor_pairs_from_target(&target),
    };
    if !pairs.is_empty() {
        write_corridor_csv(
            &out_dir.join("corridor.csv"),
            &trace,
            &cylinder,
            &pairs,
            &labels,
        )
        .or_code(1)?;
    }

    match series.entry_time {
        Some(t) => println!("entry_time: {t}"),
        None => println!("entry_time: never"),
    }
    println!("max_after_entry: {}", series.max_after_entry);
    println!(
        "invariance: {}",
        if series.invariance_violated {
            "VIOLATED"
        } else {
            "ok"
        }
    );
    println!("csv written to {}", out_dir.display());
    if series.invariance_violated {
        return Err(fail(3, anyhow!("membership exceeded 1 + 1e-6 after entry")));
    }
    Ok(())
}

fn write_trace_csv(
    path: &Path,
    trace: &simulation::Trace,
    values: &[f64],
    labels: &[String],
) -> Result<()> {
    let mut out = String::new();
    out.push('t');
    for l in labels {
        out.push(',');
        out.push_str(l);
    }
    out.push_str(",V\n");
    for (i, t) in trace.times.iter().enumerate() {
        out.push_str(&t.to_string());
        for v in trace.states[i].iter() {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{}\n", values[i]));
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn write_projection_csv(
    path: &Path,
    trace: &simulation::Trace,
    proj: &simulation::ProjectionSeries,
) -> Result<()> {
    let mut out = String::from("series,t,u,v\n");
    for (i, (u, v)) in proj.points.iter().enumerate() {
        out.push_str(&format!("trajectory,{},{u},{v}\n", trace.times[i]));
    }
    match proj.shape.kind {
        ProjectionKind::WholePlane => {}
        ProjectionKind::Strip => {
            if let Some((normal, w)) = proj.shape.strip_params() {
                // two parallel boundary lines spanning the trajectory extent
                let dir = nalgebra::DVector::from_column_slice(&[-normal[1], normal[0]]);
                let mut smin = f64::INFINITY;
                let mut smax = f64::NEG_INFINITY;
                for (u, v) in &proj.points {
                    let s = dir[0] * u + dir[1] * v;
                    smin = smin.min(s);
                    smax = smax.max(s);
                }
                let spread = (smax - smin).max(1.0);
                let (lo, hi) = (smin - 0.2 * spread, smax + 0.2 * spread);
                for (name, side) in [("boundary1", w), ("boundary2", -w)] {
                    for s in [lo, hi] {
                        let u = side * normal[0] + s * dir[0];
                        let v = side * normal[1] + s * dir[1];
                        out.push_str(&format!("{name},,{u},{v}\n"));
                    }
                }
            }
        }
        ProjectionKind::Ellipse => {
            if let Some(pts) = proj.shape.ellipse_boundary(256) {
                for (u, v) in pts {
                    out.push_str(&format!("boundary1,,{u},{v}\n"));
                }
            }
        }
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn write_corridor_csv(
    path: &Path,
    trace: &simulation::Trace,
    cylinder: &Cylinder,
    pairs: &[(usize, usize)],
    labels: &[String],
) -> Result<()> {
    let mut forms = Vec::new();
    for &(i, j) in pairs {
        let proj = cylinder
            .project_to_plane(i, j)
            .map_err(|e| anyhow!("projection ({},{}): {e}", i + 1, j + 1))?;
        forms.push(proj.form().clone());
    }
    let mut out = String::from("t");
    for &(i, j) in pairs {
        out.push_str(&format!(",{0},{1},lo_{0},hi_{0}", labels[i], labels[j]));
    }
    out.push('\n');
    for (row, t) in trace.times.iter().enumerate() {
        out.push_str(&t.to_string());
        for (p_idx, &(i, j)) in pairs.iter().enumerate() {
            let xi = trace.states[row][i];
            let xj = trace.states[row][j];
            out.push_str(&format!(",{xi},{xj}"));
            match simulation::corridor_interval(&forms[p_idx], xj) {
                CorridorSection::Interval { lo, hi } => out.push_str(&format!(",{lo},{hi}")),
                _ => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

// ---------------------------------------------------------------------------
// geometry
// ---------------------------------------------------------------------------

pub fn geometry_image(path: &Path) -> CmdResult {
    let file = format::load_geometry(path).map_err(parse_fail)?;
    let q = format::to_matrix(&file.cylinder.q, "Q").map_err(parse_fail)?;
    let q = SymMat::new(q).map_err(|e| parse_fail(anyhow!("Q: {e}")))?;
    let cyl = Cylinder::new(q).map_err(|e| parse_fail(anyhow!("Q: {e}")))?;
    println!(
        "source: rank {} in dimension {}",
        cyl.rank(),
        cyl.ambient_dim()
    );
    let Some(map) = &file.map else {
        print_matrix("form", cyl.form().as_matrix());
        return Ok(());
    };
    let c = format::to_matrix(&map.c, "C").map_err(parse_fail)?;
    let image = cyl.image(&c, 0.0).map_err(|e| fail(2, anyhow!("{e}")))?;
    println!(
        "image: rank {} in dimension {}",
        image.rank(),
        image.ambient_dim()
    );
    print_matrix("form", image.form().as_matrix());
    Ok(())
}

pub fn geometry_project(
    path: &Path,
    axes: &[usize],
    out: Option<&PathBuf>,
    samples: usize,
) -> CmdResult {
    let file = format::load_geometry(path).map_err(parse_fail)?;
    let q = format::to_matrix(&file.cylinder.q, "Q").map_err(parse_fail)?;
    let q = SymMat::new(q).map_err(|e| parse_fail(anyhow!("Q: {e}")))?;
    let cyl = Cylinder::new(q).map_err(|e| parse_fail(anyhow!("Q: {e}")))?;
    if axes.len() != 2 || axes.contains(&0) {
        return Err(parse_fail(anyhow!("--axes needs two 1-based indices")));
    }
    let (i, j) = (axes[0] - 1, axes[1] - 1);
    let proj = cyl
        .project_to_plane(i, j)
        .map_err(|e| parse_fail(anyhow!("{e}")))?;
    let kind = match proj.kind {
        ProjectionKind::WholePlane => "whole-plane",
        ProjectionKind::Strip => "strip",
        ProjectionKind::Ellipse => "ellipse",
    };
    println!("projection: {kind}");
    print_matrix("form", proj.form().as_matrix());
    if let Some((normal, w)) = proj.strip_params() {
        println!(
            "strip: |{:.6}*u + {:.6}*v| <= {:.6}",
            normal[0], normal[1], w
        );
    }
    if let Some(out_path) = out {
        let mut csv = String::from("u,v\n");
        match proj.kind {
            ProjectionKind::Ellipse => {
                for (u, v) in proj.ellipse_boundary(samples).unwrap() {
                    csv.push_str(&format!("{u},{v}\n"));
                }
            }
            ProjectionKind::Strip => {
                let (normal, w) = proj.strip_params().unwrap();
                let dir = [-normal[1], normal[0]];
                for side in [w, -w] {
                    for s in [-1.0, 1.0] {
                        let span = samples as f64;
                        let u = side * normal[0] + s * span * dir[0];
                        let v = side * normal[1] + s * span * dir[1];
                        csv.push_str(&format!("{u},{v}\n"));
                    }
                }
            }
            ProjectionKind::WholePlane => {}
        }
        std::fs::write(out_path, csv)
            .with_context(|| format!("writing {}", out_path.display()))
            .or_code(1)?;
        println!("boundary written to {}", out_path.display());
    }
    Ok(())
}
