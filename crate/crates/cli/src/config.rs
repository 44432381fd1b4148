//! Config file sections, flag overrides and the resolved record echoed into every run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use qclab::geometry::{checkerboard, constant_disk, radial_stretch, DEFAULT_CANTOR_SIDE};
use qclab::removability::{Generator, SweepConfig};
use qclab::{beltrami, GridSpec};

use crate::Failure;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    /// Informational `[run]` record from an echoed config; ignored on input.
    #[serde(default, rename = "run")]
    _run: Option<toml::Table>,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub solve: SolveSection,
    #[serde(default)]
    pub lemma1: Lemma1Section,
    #[serde(default)]
    pub sweep: SweepSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n: Option<usize>,
    #[serde(rename = "L")]
    pub half_width: Option<f64>,
    pub tolerance: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSection {
    pub mu: Option<String>,
    pub max_iterations: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lemma1Section {
    pub mu: Option<String>,
    pub lambda: Option<f64>,
    pub generations: Option<Vec<u32>>,
    pub p: Option<Vec<f64>>,
    pub window: Option<f64>,
    pub cantor_side: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub alpha: Option<Vec<f64>>,
    #[serde(rename = "K")]
    pub distortion: Option<Vec<f64>>,
    pub lambda: Option<Vec<f64>>,
    pub generations: Option<Vec<u32>>,
    pub generator: Option<Generator>,
    pub test_radii: Option<Vec<f64>>,
    pub cantor_side: Option<f64>,
    pub p_term_i: Option<f64>,
}

pub fn read_config(path: Option<&Path>) -> Result<FileConfig, Failure> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config("io", format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::config("config", format!("{}: {}", path.display(), e.message())))
}

/// Grid flags given on the command line; they win over the config file.
#[derive(Debug, Default, Clone, Copy)]
pub struct Overrides {
    pub n: Option<usize>,
    pub half_width: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvedGrid {
    pub n: usize,
    #[serde(rename = "L")]
    pub half_width: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl ResolvedGrid {
    pub fn resolve(file: &GridSection, flags: &Overrides, default_n: usize) -> Result<Self, Failure> {
        let grid = Self {
            n: flags.n.or(file.n).unwrap_or(default_n),
            half_width: flags.half_width.or(file.half_width).unwrap_or(4.0),
            tolerance: file.tolerance.unwrap_or(beltrami::DEFAULT_TOLERANCE),
            seed: flags.seed.or(file.seed).unwrap_or(qclab::analysis::DEFAULT_SEED),
        };
        if !(grid.tolerance > 0.0) {
            return Err(Failure::config("invalid-parameter", format!("tolerance must be positive (got {})", grid.tolerance)));
        }
        grid.spec()?;
        Ok(grid)
    }

    pub fn spec(&self) -> Result<GridSpec, Failure> {
        Ok(GridSpec::new(self.n, self.half_width)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BeltramiSpec {
    Zero,
    ConstantDisk(f64),
    Radial(f64),
    Checkerboard(f64, usize),
}

/// `zero`, `constant-disk:k`, `radial:K` or `checkerboard:k[:cells]`.
pub fn parse_mu(text: &str) -> Result<BeltramiSpec, Failure> {
    let bad = |msg: String| Failure::config("invalid-parameter", msg);
    let mut parts = text.trim().split(':');
    let name = parts.next().unwrap_or_default();
    let args: Vec<&str> = parts.collect();
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("not a number in coefficient spec '{text}': {s}")));
    let spec = match (name, args.as_slice()) {
        ("zero", []) => BeltramiSpec::Zero,
        ("constant-disk", [k]) => BeltramiSpec::ConstantDisk(num(k)?),
        ("radial", [big_k]) => BeltramiSpec::Radial(num(big_k)?),
        ("checkerboard", [k]) => BeltramiSpec::Checkerboard(num(k)?, 8),
        ("checkerboard", [k, cells]) => BeltramiSpec::Checkerboard(
            num(k)?,
            cells.parse().map_err(|_| bad(format!("checkerboard cells must be a count (got {cells})")))?,
        ),
        _ => {
            return Err(bad(format!(
                "unknown coefficient '{text}'; expected zero, constant-disk:k, radial:K or checkerboard:k[:cells]"
            )))
        }
    };
    match spec {
        BeltramiSpec::ConstantDisk(k) | BeltramiSpec::Checkerboard(k, _) if !(k < 1.0) => {
            Err(bad(format!("k must be < 1 (got {k})")))
        }
        BeltramiSpec::ConstantDisk(k) | BeltramiSpec::Checkerboard(k, _) if !(k >= 0.0) => {
            Err(bad(format!("k must be >= 0 (got {k})")))
        }
        BeltramiSpec::Radial(big_k) if !(big_k >= 1.0) || !big_k.is_finite() => {
            Err(bad(format!("K must be >= 1 (got {big_k})")))
        }
        _ => Ok(spec),
    }
}

pub fn build_mu(mu: BeltramiSpec, spec: GridSpec, seed: u64) -> qclab::Result<qclab::beltrami::BeltramiCoefficient> {
    match mu {
        BeltramiSpec::Zero => Ok(qclab::beltrami::BeltramiCoefficient::zero(spec)),
        BeltramiSpec::ConstantDisk(k) => constant_disk(spec, k),
        BeltramiSpec::Radial(big_k) => radial_stretch(spec, big_k),
        BeltramiSpec::Checkerboard(k, cells) => checkerboard(spec, k, cells, seed),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedSolve {
    pub mu: String,
    pub max_iterations: usize,
}

impl ResolvedSolve {
    pub fn resolve(file: &SolveSection, flag_mu: Option<&str>) -> Result<(Self, BeltramiSpec), Failure> {
        let text = flag_mu.map(str::to_string).or_else(|| file.mu.clone()).unwrap_or_else(|| "zero".into());
        let mu = parse_mu(&text)?;
        let max_iterations = file.max_iterations.unwrap_or(beltrami::DEFAULT_MAX_ITER);
        if max_iterations == 0 {
            return Err(Failure::config("invalid-parameter", "max_iterations must be positive".into()));
        }
        Ok((Self { mu: text, max_iterations }, mu))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedLemma1 {
    pub mu: String,
    pub lambda: f64,
    pub generations: Vec<u32>,
    pub p: Vec<f64>,
    pub window: f64,
    pub cantor_side: f64,
}

impl ResolvedLemma1 {
    pub fn resolve(file: &Lemma1Section, flag_mu: Option<&str>) -> Result<(Self, BeltramiSpec), Failure> {
        let text = flag_mu.map(str::to_string).or_else(|| file.mu.clone()).unwrap_or_else(|| "radial:2".into());
        let mu = parse_mu(&text)?;
        let resolved = Self {
            mu: text,
            lambda: file.lambda.unwrap_or(0.25),
            generations: file.generations.clone().unwrap_or_else(|| vec![1, 2, 3]),
            p: file.p.clone().unwrap_or_else(|| vec![1.5]),
            window: file.window.unwrap_or(1.5),
            cantor_side: file.cantor_side.unwrap_or(DEFAULT_CANTOR_SIDE),
        };
        if let Some(&p) = resolved.p.iter().find(|&&p| !(p >= 1.0)) {
            return Err(Failure::config("invalid-parameter", format!("exponents in p must be >= 1 (got {p})")));
        }
        if !(resolved.window > 0.0) {
            return Err(Failure::config("invalid-parameter", format!("window radius must be positive (got {})", resolved.window)));
        }
        Ok((resolved, mu))
    }
}

pub fn resolve_sweep(file: &SweepSection, grid: &ResolvedGrid) -> Result<SweepConfig, Failure> {
    let d = SweepConfig::default();
    let config = SweepConfig {
        n: grid.n,
        half_width: grid.half_width,
        tolerance: grid.tolerance,
        seed: grid.seed,
        alpha: file.alpha.clone().unwrap_or(d.alpha),
        distortion: file.distortion.clone().unwrap_or(d.distortion),
        lambda: file.lambda.clone().unwrap_or(d.lambda),
        generations: file.generations.clone().unwrap_or(d.generations),
        generator: file.generator.unwrap_or(d.generator),
        test_radii: file.test_radii.clone().unwrap_or(d.test_radii),
        cantor_side: file.cantor_side.unwrap_or(d.cantor_side),
        p_term_i: file.p_term_i.or(d.p_term_i),
    };
    config.validate()?;
    Ok(config)
}

/// The `[sweep]` part of a resolved [`SweepConfig`]; grid values live in `[grid]`.
#[derive(Debug, Serialize)]
pub struct SweepEcho {
    pub alpha: Vec<f64>,
    #[serde(rename = "K")]
    pub distortion: Vec<f64>,
    pub lambda: Vec<f64>,
    pub generations: Vec<u32>,
    pub generator: Generator,
    pub test_radii: Vec<f64>,
    pub cantor_side: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_term_i: Option<f64>,
}

impl From<&SweepConfig> for SweepEcho {
    fn from(c: &SweepConfig) -> Self {
        Self {
            alpha: c.alpha.clone(),
            distortion: c.distortion.clone(),
            lambda: c.lambda.clone(),
            generations: c.generations.clone(),
            generator: c.generator,
            test_radii: c.test_radii.clone(),
            cantor_side: c.cantor_side,
            p_term_i: c.p_term_i,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub version: &'static str,
    pub command: &'static str,
    pub threads: usize,
    pub deterministic: bool,
}

/// Serializes the resolved configuration; the result is itself a valid `--config` file.
pub fn echo<S: Serialize>(run: &RunRecord, grid: &ResolvedGrid, section: &str, body: &S) -> Result<String, Failure> {
    let mut table = toml::Table::new();
    table.insert("run".into(), toml::Value::try_from(run).map_err(internal)?);
    table.insert("grid".into(), toml::Value::try_from(grid).map_err(internal)?);
    table.insert(section.into(), toml::Value::try_from(body).map_err(internal)?);
    toml::to_string(&table).map_err(internal)
}

fn internal<E: std::fmt::Display>(e: E) -> Failure {
    Failure::config("format", format!("cannot serialize the resolved config: {e}"))
}
