//! Experiment orchestration: the cell, effective, solve, green, and rates
//! stages share corrector caching, a worker pool, and one PASS/FLAG report.
//!
//! Hard invariants (solver convergence, reciprocity, mean-zero structure,
//! ellipticity) abort the run with an error; estimate-ratio drifts only
//! FLAG, because the constants in the underlying bounds are not known.
//! Numerical work for each stage is reduced first and written in a single
//! writer phase, so every artifact is complete or absent.

use crate::cache::{cache_path, read_bundle, write_bundle};
use crate::cell::{build_bundle, flux_divergence_mismatch, CorrectorBundle};
use crate::coefficients::{sample_grid, GridCoefficients};
use crate::config::{to_toml_string, Command, LambdaPolicy, RunConfig};
use crate::effective::{assemble_homogenized, check_effective_ellipticity, EffectiveTensors};
use crate::error::{Error, Result};
use crate::green::{
    ball_average, bmo_norm, check_pointwise_bounds, green_column, node_near, BoundReport,
    GreenColumn, Sigmas, DEFAULT_RHO_CELLS,
};
use crate::rates::{
    green_convergence, residual_identity_check, run_rate_experiment, FitOutcome, RateExperiment,
    RateReport, RateTable,
};
use crate::report::{effective_csv, field_csv, fmt_num, green_csv, rates_csv, Report};
use crate::solver::{
    assemble_l0, assemble_leps, select_lambda, solve_dirichlet, validate_eps, DirichletProblem,
    DomainMesh, Field,
};
use crate::svg::{log_log_plot, Series};
use rayon::prelude::*;
use std::path::PathBuf;

/// Observation poles for the green stage.
pub const GREEN_POLES: [(f64, f64); 4] = [(0.25, 0.25), (0.75, 0.25), (0.5, 0.5), (0.25, 0.75)];

/// Well-separated interior pairs for Green-function convergence. Coordinates
/// are multiples of 1/4, so for every eps on a dyadic ladder the observation
/// window of `green_convergence` lines up with the period lattice and the
/// measured envelope carries a stable prefactor across the sweep.
pub const GREEN_PAIRS: [((f64, f64), (f64, f64)); 2] =
    [((0.25, 0.5), (0.75, 0.5)), ((0.25, 0.25), (0.75, 0.75))];

/// Reciprocity is exact at the matrix level (the adjoint is the exact
/// transpose), so any relative mismatch beyond solver noise is a bug.
pub const RECIPROCITY_TOL: f64 = 1e-6;

const INEQ_IDS: [&str; 13] = [
    "decay",
    "delta_x",
    "lin_delta_x",
    "delta_y",
    "lin_delta_y",
    "delta_xy",
    "lin_delta_xy",
    "log",
    "grad_x",
    "osc_x",
    "osc_pole",
    "grad_mixed",
    "grad_pole",
];

#[derive(Debug)]
pub struct RunOutcome {
    pub report: Report,
    pub files: Vec<PathBuf>,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    report: Report,
    files: Vec<PathBuf>,
    grid: Option<GridCoefficients>,
    bundle: Option<CorrectorBundle>,
    eff: Option<EffectiveTensors>,
    effective_done: bool,
    lambda: Option<f64>,
}

impl Ctx<'_> {
    fn write(&mut self, name: &str, content: &str) -> Result<()> {
        let path = self.cfg.out_dir.join(name);
        std::fs::write(&path, content)?;
        self.files.push(path);
        Ok(())
    }
}

pub fn run(cfg: &RunConfig, command: Command) -> Result<RunOutcome> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let mut ctx = Ctx {
        cfg,
        report: Report::new(),
        files: Vec::new(),
        grid: None,
        bundle: None,
        eff: None,
        effective_done: false,
        lambda: None,
    };
    ctx.write("config_echo.toml", &to_toml_string(cfg))?;
    let result = pool.install(|| dispatch(&mut ctx, command));
    // The report survives failed runs; flags alone never fail a run.
    let report_path = cfg.out_dir.join("report.txt");
    if std::fs::write(&report_path, ctx.report.render()).is_ok() {
        ctx.files.push(report_path);
    }
    result.map(|()| RunOutcome {
        report: ctx.report,
        files: ctx.files,
    })
}

fn dispatch(ctx: &mut Ctx, command: Command) -> Result<()> {
    match command {
        Command::Cell => stage_cell(ctx),
        Command::Effective => stage_effective(ctx),
        Command::Solve => stage_solve(ctx),
        Command::Green => stage_green(ctx),
        Command::Rates => stage_rates(ctx),
        Command::All => {
            stage_cell(ctx)?;
            stage_effective(ctx)?;
            stage_solve(ctx)?;
            stage_green(ctx)?;
            stage_rates(ctx)
        }
    }
}

fn stage_cell(ctx: &mut Ctx) -> Result<()> {
    if ctx.bundle.is_some() {
        return Ok(());
    }
    let cfg = ctx.cfg;
    let grid = sample_grid(&cfg.set, cfg.torus_n)?;
    let cache_dir = cfg.resolved_cache_dir();
    std::fs::create_dir_all(&cache_dir)?;
    let path = cache_path(&cache_dir, &cfg.set, cfg.torus_n);
    let mut cached = None;
    if path.exists() {
        match read_bundle(&path) {
            Ok(b) if b.n == cfg.torus_n && b.m == cfg.set.m => cached = Some(b),
            Ok(b) => eprintln!(
                "warning: cache {} has N={}, m={}; config wants N={}, m={}; recomputing",
                path.display(),
                b.n,
                b.m,
                cfg.torus_n,
                cfg.set.m
            ),
            Err(e) => eprintln!("warning: ignoring cache {}: {e}; recomputing", path.display()),
        }
    }
    let bundle = match cached {
        Some(b) => {
            ctx.report
                .pass(format!("cell: correctors loaded from cache ({})", path.display()));
            b
        }
        None => {
            let (b, eff) = build_bundle(&grid, cfg.tol)?;
            write_bundle(&path, &b)?;
            ctx.files.push(path.clone());
            ctx.report
                .pass(format!("cell: correctors computed and cached ({})", path.display()));
            ctx.eff = Some(eff);
            b
        }
    };

    let worst = bundle
        .residuals
        .iter()
        .fold((String::new(), 0.0f64), |acc, (name, r)| {
            if *r > acc.1 {
                (name.clone(), *r)
            } else {
                acc
            }
        });
    ctx.report.check(
        worst.1 <= 10.0 * cfg.tol,
        format!(
            "cell: largest corrector residual {} ({})",
            fmt_num(worst.1),
            if worst.0.is_empty() { "none" } else { worst.0.as_str() }
        ),
    );

    // Mean-zero structure of the oscillatory differences is exact by
    // construction; a violation is a bug, not a tolerance issue.
    let mut scale = 0.0f64;
    let mut worst_mean = 0.0f64;
    for f in &bundle.b {
        scale = scale.max(f.sup());
        for r in 0..bundle.m {
            for c in 0..bundle.m {
                let comp = f.comp(r, c);
                let mean = comp.iter().sum::<f64>() / comp.len() as f64;
                worst_mean = worst_mean.max(mean.abs());
            }
        }
    }
    let limit = 1e-8 * scale.max(1e-300);
    if worst_mean > limit {
        return Err(Error::InvariantViolated(format!(
            "oscillatory difference b has mean {} (limit {}, scale {})",
            fmt_num(worst_mean),
            fmt_num(limit),
            fmt_num(scale)
        )));
    }
    ctx.report.pass(format!(
        "cell: oscillatory differences mean-zero (largest |mean| {}, scale {})",
        fmt_num(worst_mean),
        fmt_num(scale)
    ));

    let rel = flux_divergence_mismatch(&bundle);
    ctx.report.check(
        rel <= 1e-2,
        format!("cell: flux-corrector divergence reproduces b (relative mismatch {})", fmt_num(rel)),
    );

    ctx.grid = Some(grid);
    ctx.bundle = Some(bundle);
    Ok(())
}

fn stage_effective(ctx: &mut Ctx) -> Result<()> {
    stage_cell(ctx)?;
    if ctx.effective_done {
        return Ok(());
    }
    if ctx.eff.is_none() {
        let grid = ctx.grid.as_ref().unwrap();
        let bundle = ctx.bundle.as_ref().unwrap();
        ctx.eff = Some(assemble_homogenized(grid, &bundle.chi)?);
    }
    let eff = ctx.eff.as_ref().unwrap();
    let eigenvalue = check_effective_ellipticity(eff)?;
    let csv = effective_csv(eff);
    let eff_cfg = {
        let mut root = toml::map::Map::new();
        root.insert(
            "coefficients".into(),
            crate::config::coefficients_to_value(&eff.to_constant_set()),
        );
        toml::to_string(&toml::Value::Table(root)).expect("static table serializes")
    };
    // The constant-coefficient config must parse back to the same set.
    let round = crate::config::parse_config_str(&eff_cfg)?;
    let same = round.set.canonical_string() == eff.to_constant_set().canonical_string();
    if !same {
        return Err(Error::InvariantViolated(
            "effective tensors do not round-trip the config format".into(),
        ));
    }
    ctx.report.pass(format!(
        "effective: leading tensor elliptic (smallest symmetric eigenvalue {})",
        fmt_num(eigenvalue)
    ));
    ctx.report
        .pass("effective: constant-coefficient config round-trips".to_string());
    ctx.write("effective.csv", &csv)?;
    ctx.write("effective_config.toml", &eff_cfg)?;
    ctx.effective_done = true;
    Ok(())
}

fn ensure_lambda(ctx: &mut Ctx) -> Result<f64> {
    stage_effective(ctx)?;
    if let Some(l) = ctx.lambda {
        return Ok(l);
    }
    let cfg = ctx.cfg;
    let lambda = match cfg.lambda {
        LambdaPolicy::Fixed(v) => {
            ctx.report.pass(format!("lambda = {} (fixed by config)", fmt_num(v)));
            v
        }
        LambdaPolicy::Auto => {
            let eff = ctx.eff.as_ref().unwrap();
            let l = select_lambda(
                &cfg.set,
                Some(eff),
                cfg.eps_list[0],
                cfg.cells_per_period,
                24,
                cfg.seed,
            )?;
            ctx.report
                .pass(format!("lambda = {} (coercivity probe)", fmt_num(l)));
            l
        }
    };
    ctx.lambda = Some(lambda);
    Ok(lambda)
}

fn stage_solve(ctx: &mut Ctx) -> Result<()> {
    let lambda = ensure_lambda(ctx)?;
    let cfg = ctx.cfg;
    let eff = ctx.eff.as_ref().unwrap();
    struct SolveRow {
        r: usize,
        eps_its: usize,
        hom_its: usize,
        l2: f64,
        linf: f64,
        u_eps: Field,
        u0: Field,
    }
    let rows: Vec<SolveRow> = cfg
        .eps_list
        .par_iter()
        .map(|&eps| -> Result<SolveRow> {
            let r = validate_eps(eps)?;
            let mesh = DomainMesh::new(cfg.cells_per_period * r);
            let m = cfg.set.m;
            let f = Field::from_fn(mesh.cells, m, |_, _, out| out.fill(1.0));
            let prob = DirichletProblem::homogeneous(&f);
            let op = assemble_leps(&cfg.set, mesh, eps, lambda)?;
            let (u_eps, stats_eps) = solve_dirichlet(&op, &prob, cfg.tol)?;
            let op0 = assemble_l0(eff, mesh, lambda)?;
            let (u0, stats_hom) = solve_dirichlet(&op0, &prob, cfg.tol)?;
            let diff = u_eps.sub(&u0);
            Ok(SolveRow {
                r,
                eps_its: stats_eps.iterations,
                hom_its: stats_hom.iterations,
                l2: crate::solver::norm_window(&diff, crate::solver::NormKind::L2, 0.0, 1.0),
                linf: diff.sup(),
                u_eps,
                u0,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    for row in &rows {
        ctx.report.pass(format!(
            "solve eps=1/{}: L_eps {} iterations, L_0 {} iterations, |u_eps - u0| L2 {} Linf {}",
            row.r,
            row.eps_its,
            row.hom_its,
            fmt_num(row.l2),
            fmt_num(row.linf)
        ));
    }
    for row in &rows {
        ctx.write(&format!("solution_eps_{}.csv", row.r), &field_csv(&row.u_eps))?;
        ctx.write(&format!("solution_u0_{}.csv", row.r), &field_csv(&row.u0))?;
    }
    Ok(())
}

fn stage_green(ctx: &mut Ctx) -> Result<()> {
    let lambda = ensure_lambda(ctx)?;
    let cfg = ctx.cfg;
    struct GreenRow {
        r: usize,
        eps: f64,
        bounds: BoundReport,
        bmo: f64,
        reciprocity: f64,
    }
    let rows: Vec<GreenRow> = cfg
        .eps_list
        .par_iter()
        .map(|&eps| -> Result<GreenRow> {
            let r = validate_eps(eps)?;
            let mesh = DomainMesh::new(cfg.cells_per_period * r);
            let rho = DEFAULT_RHO_CELLS * mesh.h();
            let op = assemble_leps(&cfg.set, mesh, eps, lambda)?;
            let adj = op.adjoint();
            let poles: Vec<(usize, usize)> = GREEN_POLES
                .iter()
                .map(|&(x1, x2)| node_near(mesh, x1, x2))
                .collect();
            let direct: Vec<GreenColumn> = poles
                .iter()
                .map(|&p| green_column(&op, p, rho, cfg.tol))
                .collect::<Result<Vec<_>>>()?;
            let adjoint: Vec<GreenColumn> = poles
                .iter()
                .map(|&p| green_column(&adj, p, rho, cfg.tol))
                .collect::<Result<Vec<_>>>()?;

            // Reciprocity: the ball average of a direct column at another
            // pole equals the transposed adjoint average, exactly at the
            // matrix level.
            let m = cfg.set.m;
            let scale = direct
                .iter()
                .map(|c| c.sup())
                .fold(0.0f64, f64::max)
                .max(1e-300);
            let mut mismatch = 0.0f64;
            for (pi, _) in poles.iter().enumerate() {
                for (qi, &q) in poles.iter().enumerate() {
                    if pi == qi {
                        continue;
                    }
                    for ga in 0..m {
                        let at_q = ball_average(&direct[pi].fields[ga], q, rho);
                        for be in 0..m {
                            let back = ball_average(&adjoint[qi].fields[be], poles[pi], rho);
                            mismatch = mismatch.max((at_q[be] - back[ga]).abs());
                        }
                    }
                }
            }
            let reciprocity = mismatch / scale;
            if reciprocity > RECIPROCITY_TOL {
                return Err(Error::InvariantViolated(format!(
                    "green reciprocity off by {} (relative) at eps=1/{r}",
                    fmt_num(reciprocity)
                )));
            }
            let bounds = check_pointwise_bounds(&direct, &adjoint, &Sigmas::default(), cfg.seed);
            let bmo = direct
                .iter()
                .map(|c| bmo_norm(&c.fields[0], 48, cfg.seed))
                .fold(0.0f64, f64::max);
            Ok(GreenRow {
                r,
                eps,
                bounds,
                bmo,
                reciprocity,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    for row in &rows {
        ctx.report.pass(format!(
            "green eps=1/{}: reciprocity mismatch {} (relative), {} bound samples ({} excluded near poles, {} near corners), BMO {}",
            row.r,
            fmt_num(row.reciprocity),
            row.bounds.rows.len(),
            row.bounds.excluded_near,
            row.bounds.excluded_corner,
            fmt_num(row.bmo)
        ));
    }
    // Constant drift across eps: FLAG when a bound family's worst ratio
    // grows by more than 2x from the coarsest eps, or the BMO norm does.
    if rows.len() >= 2 {
        for ineq in INEQ_IDS {
            let base = rows[0].bounds.max_ratio(ineq);
            let worst = rows
                .iter()
                .map(|r| r.bounds.max_ratio(ineq))
                .fold(0.0f64, f64::max);
            if rows.iter().any(|r| r.bounds.count(ineq) == 0) {
                ctx.report.pass(format!(
                    "green {ineq}: insufficient samples for drift tracking"
                ));
            } else {
                ctx.report.check(
                    worst <= 2.0 * base.max(1e-300),
                    format!(
                        "green {ineq}: max ratio {} at eps=1/{}, worst {} across eps",
                        fmt_num(base),
                        rows[0].r,
                        fmt_num(worst)
                    ),
                );
            }
        }
        let bmo_base = rows[0].bmo.max(1e-300);
        let bmo_worst = rows.iter().map(|r| r.bmo).fold(0.0f64, f64::max);
        ctx.report.check(
            bmo_worst <= 2.0 * bmo_base,
            format!(
                "green BMO: {} at eps=1/{}, worst {} across eps",
                fmt_num(rows[0].bmo),
                rows[0].r,
                fmt_num(bmo_worst)
            ),
        );
    }
    let csv_rows: Vec<(f64, &BoundReport)> = rows.iter().map(|r| (r.eps, &r.bounds)).collect();
    ctx.write("green_report.csv", &green_csv(&csv_rows))?;
    Ok(())
}

fn slope_line(report: &mut Report, context: &str, table: Option<&RateTable>, min_slope: f64) {
    let Some(table) = table else {
        report.flag(format!("{context}: table missing"));
        return;
    };
    match table.fit {
        FitOutcome::Exact => report.pass(format!("{context}: errors at solver floor (exact)")),
        FitOutcome::Fit { slope, residual } => report.check(
            slope >= min_slope,
            format!(
                "{context}: slope {} (want >= {}), log-fit residual {}",
                fmt_num(slope),
                fmt_num(min_slope),
                fmt_num(residual)
            ),
        ),
    }
}

fn stage_rates(ctx: &mut Ctx) -> Result<()> {
    let lambda = ensure_lambda(ctx)?;
    let cfg = ctx.cfg;
    let eff = ctx.eff.as_ref().unwrap().clone();

    // Numeric phase: everything that borrows the corrector bundle.
    let bundle = ctx.bundle.as_ref().unwrap();
    let swept = if cfg.eps_list.len() >= 3 {
        let exp = RateExperiment {
            set: &cfg.set,
            eff: &eff,
            bundle,
            eps_list: &cfg.eps_list,
            cells_per_period: cfg.cells_per_period,
            lambda,
            tol: cfg.tol,
            volume: &|_, _, out| out.fill(1.0),
            with_correctors: true,
        };
        let rate_report = run_rate_experiment(&exp)?;
        let gc = green_convergence(
            &cfg.set,
            &eff,
            &GREEN_PAIRS,
            &cfg.eps_list,
            cfg.cells_per_period,
            lambda,
            DEFAULT_RHO_CELLS,
            cfg.tol,
        )?;
        Some((rate_report, gc))
    } else {
        None
    };
    // Residual identity at the coarsest eps, refined once in the mesh.
    let eps = cfg.eps_list[0];
    let p = cfg.cells_per_period;
    let coarse = residual_identity_check(&cfg.set, &eff, bundle, eps, p, lambda)?;
    let fine = residual_identity_check(&cfg.set, &eff, bundle, eps, 2 * p, lambda)?;

    // Report and writer phase.
    let mut reports: Vec<(String, RateReport)> = Vec::new();
    match swept {
        Some((rate_report, gc)) => {
            slope_line(&mut ctx.report, "rates l2", rate_report.table("l2"), 0.9);
            slope_line(
                &mut ctx.report,
                "rates h1_corrected",
                rate_report.table("h1_corrected"),
                0.9,
            );
            if let Some(t) = rate_report.table("h1") {
                match t.fit {
                    FitOutcome::Exact => {
                        ctx.report.pass("rates h1: errors at solver floor (exact)")
                    }
                    FitOutcome::Fit { slope, .. } => ctx.report.check(
                        slope < 0.5,
                        format!(
                            "rates h1: uncorrected slope {} (expected to stall below 0.5)",
                            fmt_num(slope)
                        ),
                    ),
                }
            }
            for t in &gc.tables {
                if t.label.starts_with("pair") {
                    slope_line(
                        &mut ctx.report,
                        &format!("green convergence {}", t.label),
                        Some(t),
                        0.8,
                    );
                }
            }
            let svg_series: Vec<Series> = rate_report
                .tables
                .iter()
                .map(|t| Series {
                    label: t.label.clone(),
                    points: t.points.clone(),
                })
                .collect();
            ctx.write(
                "rates.svg",
                &log_log_plot(
                    &format!("{}: errors vs eps", cfg.label()),
                    "eps",
                    "error",
                    &svg_series,
                ),
            )?;
            reports.push((cfg.label().to_string(), rate_report));
            reports.push((cfg.label().to_string(), gc));
        }
        None => ctx.report.pass(format!(
            "rates: skipped slope fits ({} eps values, need 3)",
            cfg.eps_list.len()
        )),
    }

    if fine.mismatch_direct <= 1e-10 && fine.mismatch_eform <= 1e-10 {
        ctx.report
            .pass("rates: residual identity exact (constant coefficients)");
    } else {
        let r_direct = coarse.mismatch_direct / fine.mismatch_direct.max(1e-300);
        let r_eform = coarse.mismatch_eform / fine.mismatch_eform.max(1e-300);
        ctx.report.check(
            r_direct >= 2.0 && r_eform >= 2.0,
            format!(
                "rates: residual identity mismatch refines {}x (direct), {}x (flux form) at eps=1/{}",
                fmt_num(r_direct),
                fmt_num(r_eform),
                validate_eps(eps)?
            ),
        );
    }

    if !reports.is_empty() {
        ctx.write("rates.csv", &rates_csv(&reports))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config_str;

    #[test]
    fn identity_all_run_produces_artifacts_and_no_flags() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            "preset = \"identity\"\n[run]\ntorus_n = 16\ncells_per_period = 4\n\
             eps = [0.5, 0.25, 0.125]\nout = {:?}\nthreads = 2\nlambda = 1.0\n",
            dir.path().to_str().unwrap()
        );
        let cfg = parse_config_str(&text).unwrap();
        let outcome = run(&cfg, Command::All).unwrap();
        assert_eq!(outcome.report.flags(), 0, "{}", outcome.report.render());
        for name in [
            "config_echo.toml",
            "effective.csv",
            "effective_config.toml",
            "green_report.csv",
            "rates.csv",
            "rates.svg",
            "report.txt",
            "solution_eps_2.csv",
            "solution_u0_8.csv",
        ] {
            assert!(dir.path().join(name).exists(), "missing {name}");
        }
        let report = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
        assert!(report.contains("computed and cached"));

        // Warm rerun: cell stage loads from cache and CSVs are byte-identical.
        let rates1 = std::fs::read(dir.path().join("rates.csv")).unwrap();
        let green1 = std::fs::read(dir.path().join("green_report.csv")).unwrap();
        let outcome2 = run(&cfg, Command::All).unwrap();
        assert_eq!(outcome2.report.flags(), 0);
        let report2 = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
        assert!(report2.contains("loaded from cache"));
        assert_eq!(rates1, std::fs::read(dir.path().join("rates.csv")).unwrap());
        assert_eq!(green1, std::fs::read(dir.path().join("green_report.csv")).unwrap());
    }
}
