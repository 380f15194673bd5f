use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use amerikan::{
    american_oracle, doob_meyer_k, driver_bsde_solve, extract_boundary, format_sig17, k_equivalence, k_formula,
    prop21_bound_check, reconstruct_measure, refinement_study, run_equivalence_suite, simulate_paths, skorokhod_sum,
    snell_lsmc, solve_obstacle, solve_penalized, solve_semilinear, ContactCriterion, EvalPoint, GridSpec, MarketParams,
    OptionSpec, PdeSolution, RegressionBasis, SuiteConfig, TimeSchedule, ORACLE_STEPS,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{read_file, seed_override, Format, RunConfig, ValidateArgs};
use crate::CliError;

const DEFAULT_GRID: usize = 800;
const DEFAULT_PENALTY: f64 = 1e5;
const DEFAULT_PATHS: usize = 100_000;
const DEFAULT_KPROCESS_PATHS: usize = 10_000;
const DEFAULT_STEPS: usize = 50;

#[derive(Serialize)]
struct Contract<'a> {
    market: &'a MarketParams,
    option: &'a OptionSpec,
    point: &'a EvalPoint,
}

fn contract(cfg: &RunConfig) -> Contract<'_> {
    Contract {
        market: &cfg.params,
        option: &cfg.spec,
        point: &cfg.point,
    }
}

/// One record per price run: JSON object or a two-line CSV.
fn emit_price(
    cfg: &RunConfig,
    method: &str,
    price: f64,
    stderr: Option<f64>,
    started: Instant,
    details: Value,
) -> Result<(), CliError> {
    let runtime = started.elapsed().as_secs_f64();
    let mut out = io::stdout().lock();
    match cfg.format.unwrap_or(Format::Json) {
        Format::Json => {
            let record = json!({
                "price": price,
                "stderr": stderr,
                "method": method,
                "params": contract(cfg),
                "runtime_seconds": runtime,
                "details": details,
            });
            serde_json::to_writer(&mut out, &record).map_err(io::Error::other)?;
            writeln!(out)?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(["method", "price", "stderr", "runtime_seconds"])?;
            w.write_record([
                method.to_string(),
                format_sig17(price),
                stderr.map(format_sig17).unwrap_or_default(),
                format_sig17(runtime),
            ])?;
            w.flush()?;
        }
    }
    Ok(())
}

fn no_method(cfg: &RunConfig, command: &str) -> Result<(), CliError> {
    match &cfg.method {
        Some(m) => Err(CliError::Usage(format!("`{command}` takes no --method (got `{m}`)"))),
        None => Ok(()),
    }
}

fn grid(cfg: &RunConfig) -> Result<GridSpec, CliError> {
    let n = cfg.grid.unwrap_or(DEFAULT_GRID);
    Ok(GridSpec::for_contract(&cfg.params, &cfg.spec, n, n)?)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path).map_err(|e| {
        io::Error::new(e.kind(), format!("cannot create {}: {e}", path.display()))
    })?))
}

/// `--out` file or stdout.
fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(path) => Box::new(create(path)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn price_tree(cfg: RunConfig) -> Result<(), CliError> {
    no_method(&cfg, "price tree")?;
    let started = Instant::now();
    let steps = cfg.steps.unwrap_or(ORACLE_STEPS);
    let oracle = american_oracle(&cfg.params, &cfg.spec, &cfg.point, steps)?;
    let details = json!({
        "steps": steps,
        "coarse": oracle.coarse,
        "fine": oracle.fine,
        "pair_disagreement": oracle.pair_disagreement(),
    });
    emit_price(&cfg, "crr-richardson", oracle.value, None, started, details)
}

pub fn price_pde(cfg: RunConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let grid = grid(&cfg)?;
    let method = cfg.method.as_deref().unwrap_or("obstacle");
    let sol = match method {
        "obstacle" => solve_obstacle(&cfg.params, &cfg.spec, &grid)?,
        "penalized" => solve_penalized(&cfg.params, &cfg.spec, &grid, cfg.penalty.unwrap_or(DEFAULT_PENALTY))?,
        "semilinear" => solve_semilinear(&cfg.params, &cfg.spec, &grid)?,
        other => {
            return Err(CliError::Usage(format!(
                "unknown PDE method `{other}`, expected obstacle, penalized or semilinear"
            )))
        }
    };
    let price = sol.value_at(cfg.point.start, cfg.point.spot)?;
    if let Some(path) = &cfg.out {
        write_surface(&sol, &cfg, create(path)?)?;
    }
    let details = json!({
        "grid": sol.grid,
        "solver": sol.method,
        "diagnostics": sol.diagnostics,
    });
    emit_price(&cfg, &format!("pde-{method}"), price, None, started, details)
}

/// `time,price,value,contact,measure_density` over the whole grid.
fn write_surface(sol: &PdeSolution, cfg: &RunConfig, out: impl Write) -> Result<(), CliError> {
    let measure = reconstruct_measure(sol, &cfg.params, &cfg.spec)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "price", "value", "contact", "measure_density"])?;
    for k in 0..sol.n_times() {
        let t = format_sig17(sol.times[k]);
        for (i, &x) in sol.nodes.iter().enumerate() {
            w.write_record([
                t.as_str(),
                &format_sig17(x),
                &format_sig17(sol.value(k, i)),
                if sol.in_contact(k, i) { "true" } else { "false" },
                &format_sig17(measure.at(k, i)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn bundle(cfg: &RunConfig, default_paths: usize) -> Result<Arc<amerikan::PathBundle>, CliError> {
    let steps = cfg.steps.unwrap_or(DEFAULT_STEPS);
    let schedule = TimeSchedule::uniform(cfg.point.start, cfg.params.expiry, steps)?;
    let n = cfg.paths.unwrap_or(default_paths);
    Ok(Arc::new(simulate_paths(
        &cfg.params,
        &cfg.point,
        &schedule,
        n,
        cfg.seed,
    )?))
}

pub fn price_bsde(cfg: RunConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let basis = RegressionBasis::default();
    let method = cfg.method.as_deref().unwrap_or("snell");
    let solve = match method {
        "snell" => snell_lsmc,
        "driver" => driver_bsde_solve,
        other => {
            return Err(CliError::Usage(format!(
                "unknown BSDE method `{other}`, expected snell or driver"
            )))
        }
    };
    let paths = bundle(&cfg, DEFAULT_PATHS)?;
    let sol = solve(paths, &cfg.spec, &cfg.params, &basis)?;
    let details = serde_json::to_value(sol.summary()).map_err(io::Error::other)?;
    emit_price(
        &cfg,
        &format!("bsde-{method}"),
        sol.y0.value,
        Some(sol.y0.std_error),
        started,
        details,
    )
}

pub fn boundary(cfg: RunConfig) -> Result<(), CliError> {
    no_method(&cfg, "boundary")?;
    let sol = solve_obstacle(&cfg.params, &cfg.spec, &grid(&cfg)?)?;
    let report = extract_boundary(&sol)?;
    let mut out = sink(&cfg.out)?;
    match cfg.format.unwrap_or(Format::Csv) {
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, &report).map_err(io::Error::other)?;
            writeln!(out)?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(["time", "boundary_price", "contact_nodes"])?;
            for ((t, level), nodes) in report.times.iter().zip(&report.levels).zip(&report.contact_nodes) {
                w.write_record([
                    format_sig17(*t),
                    level.map(format_sig17).unwrap_or_else(|| "none".into()),
                    nodes.to_string(),
                ])?;
            }
            w.flush()?;
            return Ok(());
        }
    }
    out.flush()?;
    Ok(())
}

pub fn kprocess(cfg: RunConfig) -> Result<(), CliError> {
    no_method(&cfg, "kprocess")?;
    if cfg.format == Some(Format::Json) {
        return Err(CliError::Usage(
            "kprocess writes CSV paths; --format json is not available".into(),
        ));
    }
    let basis = RegressionBasis::default();
    let pde = solve_obstacle(&cfg.params, &cfg.spec, &grid(&cfg)?)?;
    let paths = bundle(&cfg, DEFAULT_KPROCESS_PATHS)?;
    let sol = snell_lsmc(paths.clone(), &cfg.spec, &cfg.params, &basis)?;
    let k_dm = doob_meyer_k(&sol, &cfg.spec, &cfg.params)?;
    let k_f = k_formula(&paths, &cfg.spec, &cfg.params, ContactCriterion::Pde(&pde))?;
    let equivalence = k_equivalence(&k_dm, &k_f)?;
    let bound = prop21_bound_check(
        &k_dm,
        &paths,
        &cfg.spec,
        &cfg.params,
        ContactCriterion::Pde(&pde),
        &sol.step_errors(),
        3.0,
    )?;

    let times = paths.schedule().times();
    let mut w = csv::Writer::from_writer(sink(&cfg.out)?);
    w.write_record(["path_id", "time", "x", "y", "k_dm", "k_formula"])?;
    for i in 0..paths.n_paths() {
        let id = i.to_string();
        for (k, t) in times.iter().enumerate() {
            w.write_record([
                id.as_str(),
                &format_sig17(*t),
                &format_sig17(paths.value(i, k)),
                &format_sig17(sol.y.get(i, k)),
                &format_sig17(k_dm.get(i, k)),
                &format_sig17(k_f.get(i, k)),
            ])?;
        }
    }
    w.flush()?;

    let summary = json!({
        "discrepancy": equivalence,
        "prop21": bound,
        "skorokhod_sum": skorokhod_sum(&sol, &cfg.spec),
        "solution": sol.summary(),
        "params": contract(&cfg),
    });
    let text = serde_json::to_string(&summary).map_err(io::Error::other)?;
    // With the CSV on stdout the summary moves to stderr.
    if cfg.out.is_some() {
        println!("{text}");
    } else {
        eprintln!("{text}");
    }
    Ok(())
}

pub fn validate(args: ValidateArgs) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(path) => SuiteConfig::from_json(&read_file(path)?)?,
        None => SuiteConfig::acceptance(),
    };
    if let Some(seed) = seed_override(args.seed)? {
        cfg.seed = seed;
    }
    let report = run_equivalence_suite(&cfg)?;
    let refinement = if args.refinement {
        Some(refinement_study(&cfg)?)
    } else {
        None
    };

    if let Some(prefix) = &args.out {
        let with = |ext: &str| {
            let mut name = prefix.as_os_str().to_owned();
            name.push(ext);
            PathBuf::from(name)
        };
        let mut json_out = create(&with(".json"))?;
        json_out.write_all(report.to_json().as_bytes())?;
        json_out.flush()?;
        report.write_csv(create(&with(".csv"))?)?;
        if let Some(table) = &refinement {
            let mut out = create(&with(".refinement.json"))?;
            serde_json::to_writer_pretty(&mut out, table).map_err(io::Error::other)?;
            out.flush()?;
        }
    }
    {
        let mut out = io::stdout().lock();
        match args.format.unwrap_or(Format::Json) {
            Format::Json => writeln!(out, "{}", report.to_json())?,
            Format::Csv => report.write_csv(&mut out)?,
        }
    }

    let mut problems: Vec<String> = report
        .failures()
        .map(|o| {
            format!(
                "{} / {}: measured {} vs tolerance {} {}",
                o.set,
                o.check,
                o.measured.map(format_sig17).unwrap_or_else(|| "n/a".into()),
                format_sig17(o.tolerance),
                o.detail
            )
        })
        .collect();
    if let Some(table) = &refinement {
        problems.extend(
            table
                .studies
                .iter()
                .filter(|s| !s.monotone)
                .map(|s| format!("{} / {}: error not decreasing at rungs {:?}", s.set, s.name, s.flagged)),
        );
    }
    if problems.is_empty() {
        Ok(())
    } else {
        for p in &problems {
            eprintln!("FAIL {p}");
        }
        Err(CliError::CheckFailed(format!("{} check(s) failed", problems.len())))
    }
}
