use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use qclab::analysis::lemma1_suite;
use qclab::beltrami::principal_solution_with;
use qclab::geometry::{cantor_cover, reference_indices, CantorSet, DiskCover};
use qclab::io::save_principal_map;
use qclab::plot::{loglog_svg, Series};
use qclab::removability::{removability_sweep, ExperimentReport, LedgerRow};
use qclab::transforms::TransformPlan;
use qclab::{Complex64, Region};

use crate::config::{self, FileConfig, Overrides, ResolvedGrid, ResolvedLemma1, ResolvedSolve, RunRecord};
use crate::{Failure, GlobalArgs};

const VERSION: &str = env!("CARGO_PKG_VERSION");

fn overrides(g: &GlobalArgs) -> Overrides {
    Overrides { n: g.n, half_width: g.half_width, seed: g.seed }
}

fn out_dir(g: &GlobalArgs, command: &str) -> PathBuf {
    match &g.out {
        Some(dir) => dir.clone(),
        None => std::env::var_os("QCLAB_OUT")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("qclab-out"))
            .join(command),
    }
}

fn record(g: &GlobalArgs, command: &'static str) -> RunRecord {
    RunRecord {
        version: VERSION,
        command,
        threads: rayon::current_num_threads(),
        deterministic: g.deterministic,
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::config("io", format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| io_failure(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), Failure> {
    w.flush().map_err(|e| io_failure(path, e))
}

/// Creates the output directory and writes `config.toml`; echoes it on stdout.
fn start_run<S: serde::Serialize>(
    g: &GlobalArgs,
    command: &'static str,
    grid: &ResolvedGrid,
    body: &S,
) -> Result<PathBuf, Failure> {
    let dir = out_dir(g, command);
    fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    let text = config::echo(&record(g, command), grid, command, body)?;
    write_text(&dir.join("config.toml"), &text)?;
    println!("qclab {VERSION} {command} (seed {})", grid.seed);
    print!("{text}");
    println!("output: {}", dir.display());
    Ok(dir)
}

pub fn solve(g: &GlobalArgs, file: &FileConfig, flag_mu: Option<&str>) -> Result<(), Failure> {
    let grid = ResolvedGrid::resolve(&file.grid, &overrides(g), 256)?;
    let (solve, mu_spec) = ResolvedSolve::resolve(&file.solve, flag_mu)?;
    let spec = grid.spec()?;
    let mu = config::build_mu(mu_spec, spec, grid.seed)?;
    let dir = start_run(g, "solve", &grid, &solve)?;

    let plan = TransformPlan::new(spec);
    let map = principal_solution_with(&plan, &mu, grid.tolerance, solve.max_iterations)?;
    save_principal_map(&map, &dir)?;

    let increments: Vec<(f64, f64)> =
        map.increments.iter().enumerate().map(|(i, &v)| ((i + 1) as f64, v)).collect();
    let svg = loglog_svg("Neumann increments", "iteration", "relative increment", &[Series::new("increment", increments)]);
    write_text(&dir.join("increments.svg"), &svg)?;

    let d = &map.diagnostics;
    let summary = format!(
        "residual = {:e}\niterations = {}\nnormalization_ok = {} ({:.3e} <= {:.3e})\ndecay_ok = {} (tail {:.3e}, slope {:.3})\nbeltrami_ok = {} ({:.3e} <= {:.3e})\n",
        map.residual,
        map.iterations,
        d.normalization_ok,
        d.origin_value,
        d.origin_allowance,
        d.decay_ok,
        d.tail_bound,
        d.tail_slope,
        d.beltrami_ok,
        d.beltrami_residual,
        d.beltrami_allowance,
    );
    write_text(&dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

pub fn lemma1(g: &GlobalArgs, file: &FileConfig, flag_mu: Option<&str>) -> Result<(), Failure> {
    let grid = ResolvedGrid::resolve(&file.grid, &overrides(g), 256)?;
    let (resolved, mu_spec) = ResolvedLemma1::resolve(&file.lemma1, flag_mu)?;
    let spec = grid.spec()?;
    let mu = config::build_mu(mu_spec, spec, grid.seed)?;
    let gmax = resolved.generations.iter().copied().max().unwrap_or(0);
    let set = CantorSet::with_embedding(resolved.lambda, gmax, Complex64::new(0.0, 0.0), resolved.cantor_side)?;
    let covers = resolved
        .generations
        .iter()
        .map(|&gen| cantor_cover(&set, gen))
        .collect::<qclab::Result<Vec<DiskCover>>>()?;
    let critical = if mu.k() > 0.0 { mu.distortion() / (mu.distortion() - 1.0) } else { f64::INFINITY };
    let dir = start_run(g, "lemma1", &grid, &resolved)?;
    for &p in resolved.p.iter().filter(|&&p| p >= critical) {
        eprintln!("warning: p = {p} is at or above K/(K-1) = {critical}; its column is flagged _above_critical");
    }

    let plan = TransformPlan::new(spec);
    let report = lemma1_suite(&plan, &mu, &covers, &resolved.p, &Region::centered_disk(resolved.window), grid.tolerance)?;
    let path = dir.join("report.csv");
    let mut w = create(&path)?;
    report.write_csv(&mut w)?;
    finish(w, &path)?;

    let index = |i: usize| resolved.generations[i] as f64;
    let mut series = vec![
        Series::new("sup |phi_n - phi|", report.rows.iter().enumerate().map(|(i, r)| (index(i), r.sup_phi)).collect()),
        Series::new("sup |phi_n^-1 - phi^-1|", report.rows.iter().enumerate().map(|(i, r)| (index(i), r.sup_phi_inv)).collect()),
    ];
    for (k, p) in report.p_list.iter().enumerate() {
        series.push(Series::new(
            format!("||J_n - J||_{p}"),
            report.rows.iter().enumerate().map(|(i, r)| (index(i), r.jacobian[k])).collect(),
        ));
    }
    write_text(&dir.join("lemma1.svg"), &loglog_svg("Truncation convergence", "generation", "error", &series))?;
    for r in &report.rows {
        println!("generation {}: sup_phi {:.3e}, sup_phi_inv {:.3e}", index(r.index - 1), r.sup_phi, r.sup_phi_inv);
    }
    Ok(())
}

pub fn sweep(g: &GlobalArgs, file: &FileConfig) -> Result<(), Failure> {
    let grid = ResolvedGrid::resolve(&file.grid, &overrides(g), 256)?;
    let config = config::resolve_sweep(&file.sweep, &grid)?;
    let dir = start_run(g, "sweep", &grid, &config::SweepEcho::from(&config))?;

    let report = removability_sweep(&config)?;
    type Writer = fn(&ExperimentReport, &mut BufWriter<File>) -> qclab::Result<()>;
    let mut outputs: Vec<(&str, Writer)> =
        vec![("report.csv", |r, w| r.write_csv(w)), ("pairings.csv", |r, w| r.write_pairings_csv(w))];
    if !report.failures.is_empty() {
        outputs.push(("failures.csv", |r, w| r.write_failures_csv(w)));
    }
    for (name, write) in outputs {
        let path = dir.join(name);
        let mut w = create(&path)?;
        write(&report, &mut w)?;
        finish(w, &path)?;
    }
    for cell in &report.ledgers {
        let rows = &cell.ledger.rows;
        let gen = |r: &LedgerRow| r.generation as f64;
        let series = [
            Series::new("term I", rows.iter().map(|r| (gen(r), r.term_i.value)).collect()),
            Series::new("term II", rows.iter().map(|r| (gen(r), r.term_ii.value)).collect()),
            Series::new("gauge sum", rows.iter().map(|r| (gen(r), r.eps)).collect()),
        ];
        let title = format!("alpha={} K={} lambda={}", cell.alpha, cell.distortion, cell.lambda);
        let name = format!("bounds_a{}_K{}_l{}.svg", cell.alpha, cell.distortion, cell.lambda);
        write_text(&dir.join(name), &loglog_svg(&title, "generation", "bound", &series))?;
    }
    println!("{} rows, {} cells, {} failed", report.rows.len(), report.ledgers.len(), report.failures.len());
    if let Some(first) = report.failures.first() {
        return Err(Failure::numerical(
            "sweep-cell",
            format!(
                "{} of {} cells failed; first (alpha={}, K={}, lambda={}): {}",
                report.failures.len(),
                report.failures.len() + report.ledgers.len(),
                first.alpha,
                first.distortion,
                first.lambda,
                first.message
            ),
        ));
    }
    Ok(())
}

/// `alpha=.. K=.. [n=2]` → prints the critical index next to the earlier indices.
pub fn indices(pairs: &[String]) -> Result<(), Failure> {
    let (mut alpha, mut distortion, mut dimension) = (None, None, 2u32);
    for pair in pairs {
        let bad = || Failure::config("invalid-parameter", format!("expected KEY=VALUE, got '{pair}'"));
        let (key, value) = pair.split_once('=').ok_or_else(bad)?;
        match key.trim() {
            "alpha" => alpha = Some(value.trim().parse::<f64>().map_err(|_| bad())?),
            "K" => distortion = Some(value.trim().parse::<f64>().map_err(|_| bad())?),
            "n" => dimension = value.trim().parse::<u32>().map_err(|_| bad())?,
            _ => return Err(Failure::config("invalid-parameter", format!("unknown key '{key}' (alpha, K, n)"))),
        }
    }
    let (Some(alpha), Some(distortion)) = (alpha, distortion) else {
        return Err(Failure::config("invalid-parameter", "--indices needs alpha=.. and K=..".into()));
    };
    let r = reference_indices(alpha, distortion, dimension)?;
    println!("alpha = {}, K = {}, n = {}", r.alpha, r.distortion, r.dimension);
    println!("d = {}", r.critical);
    println!("KM = {}", r.koskela_martio);
    println!("KM_lambda = {}", r.koskela_martio_lambda);
    println!("KZ = {}", r.kilpelainen_zhong);
    Ok(())
}
