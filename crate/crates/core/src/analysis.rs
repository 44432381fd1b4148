//! Empirical regularity and integrability measurements of solved maps.

use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::beltrami::{
    jacobian, least_squares_slope, principal_solution, JacobianMethod, MapInverter, PrincipalMap,
};
use crate::beltrami::BeltramiCoefficient;
use crate::error::{Error, Result};
use crate::geometry::{truncate_coefficient, DiskCover};
use crate::grid::{ComplexField, GridSpec, Region};
use crate::transforms::TransformPlan;


pub const DEFAULT_PAIRS: usize = 2000;
pub const DEFAULT_SEED: u64 = 0x9e37_79b9;

/// The default compact window `|z| <= 1.5`.
pub fn default_window() -> Region {
    Region::centered_disk(1.5)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HolderFit {
    pub radii: Vec<f64>,
    /// `ω̂(r)`: the largest `|f(z) - f(w)|` over the sampled pairs at distance `≈ r`.
    pub modulus: Vec<f64>,
    pub exponent: f64,
    /// RMS deviation of `log ω̂` from the fitted line.
    pub residual: f64,
    /// Whether `ω̂` is non-decreasing up to a 5% tolerance.
    pub monotone: bool,
}

fn window_cells(spec: &GridSpec, window: &Region) -> Result<Vec<usize>> {
    let mask = window.mask(spec);
    let cells: Vec<usize> = (0..spec.len()).filter(|&i| mask.get(i)).collect();
    if cells.is_empty() {
        return Err(Error::EmptyRegion);
    }
    Ok(cells)
}

/// Pairs `(z, w)` of cell indices with `z` in the window and `|z - w| ≈ r`,
/// offsets rounded to the lattice.
/// Integer offsets whose length is within 3% of `r` (in cells), or the closest ones if none are.
fn lattice_shell(r: f64) -> Vec<(i64, i64)> {
    let m = r.ceil() as i64 + 1;
    let all: Vec<((i64, i64), f64)> = (-m..=m)
        .flat_map(|a| (-m..=m).map(move |b| (a, b)))
        .filter(|&(a, b)| a != 0 || b != 0)
        .map(|(a, b)| ((a, b), ((a * a + b * b) as f64).sqrt()))
        .collect();
    let shell: Vec<(i64, i64)> = all.iter().filter(|(_, l)| (l - r).abs() <= 0.03 * r).map(|p| p.0).collect();
    if !shell.is_empty() {
        return shell;
    }
    let best = all.iter().map(|(_, l)| (l - r).abs()).fold(f64::INFINITY, f64::min);
    all.iter().filter(|(_, l)| (l - r).abs() <= best + 1e-12).map(|p| p.0).collect()
}

fn sample_pairs(
    spec: &GridSpec,
    cells: &[usize],
    r: f64,
    pairs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize)>> {
    let n = spec.n() as i64;
    let offsets = lattice_shell(r / spec.spacing());
    let mut out = Vec::with_capacity(pairs);
    let mut attempts = 0;
    while out.len() < pairs {
        attempts += 1;
        if attempts > 20 * pairs {
            return Err(Error::InvalidParameter(format!(
                "window too small for radius {r}: pairs leave the grid"
            )));
        }
        let base = cells[rng.gen_range(0..cells.len())];
        let (a, b) = offsets[rng.gen_range(0..offsets.len())];
        let (j, k) = ((base as i64) / n + a, (base as i64) % n + b);
        if j < 0 || k < 0 || j >= n || k >= n {
            continue;
        }
        out.push((base, (j * n + k) as usize));
    }
    Ok(out)
}

pub fn holder_exponent(f: &ComplexField, window: &Region, radii: &[f64]) -> Result<HolderFit> {
    holder_exponent_with(f, window, radii, DEFAULT_PAIRS, DEFAULT_SEED)
}

pub fn holder_exponent_with(
    f: &ComplexField,
    window: &Region,
    radii: &[f64],
    pairs: usize,
    seed: u64,
) -> Result<HolderFit> {
    let spec = *f.spec();
    let h = spec.spacing();
    if radii.len() < 4 {
        return Err(Error::InvalidParameter("need at least 4 radii".into()));
    }
    let (lo, hi) = radii
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    if lo < 2.0 * h * (1.0 - 1e-12) {
        return Err(Error::InvalidParameter(format!("radii must be >= 2 spacings ({})", 2.0 * h)));
    }
    if (hi / lo).log10() < 1.5 - 1e-12 {
        return Err(Error::InvalidParameter("radii must span at least 1.5 decades".into()));
    }
    let cells = window_cells(&spec, window)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals = f.values();
    let mut modulus = Vec::with_capacity(radii.len());
    for &r in radii {
        let sample = sample_pairs(&spec, &cells, r, pairs, &mut rng)?;
        let w = sample
            .iter()
            .map(|&(a, b)| (vals[a] - vals[b]).norm())
            .fold(0.0, f64::max);
        modulus.push(w);
    }
    let pts: Vec<(f64, f64)> = radii
        .iter()
        .zip(&modulus)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&r, &w)| (r.ln(), w.ln()))
        .collect();
    let exponent = least_squares_slope(&pts);
    let residual = if pts.len() >= 2 {
        let m = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
        (pts.iter().map(|p| (p.1 - my - exponent * (p.0 - mx)).powi(2)).sum::<f64>() / m).sqrt()
    } else {
        f64::NAN
    };
    let mut order: Vec<usize> = (0..radii.len()).collect();
    order.sort_by(|&a, &b| radii[a].total_cmp(&radii[b]));
    let monotone = order.windows(2).all(|w| modulus[w[1]] >= 0.95 * modulus[w[0]]);
    Ok(HolderFit { radii: radii.to_vec(), modulus, exponent, residual, monotone })
}

/// `n` radii spaced geometrically from `lo` to `hi`.
pub fn geometric_radii(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1).max(1) as f64))
        .collect()
}

/// Largest quotient `|f(z) - f(w)| / |z - w|^α` over random pairs in the window
/// at all scales: an empirical Hölder constant.
pub fn holder_constant(f: &ComplexField, window: &Region, alpha: f64, pairs: usize, seed: u64) -> Result<f64> {
    let spec = *f.spec();
    let h = spec.spacing();
    let cells = window_cells(&spec, window)?;
    let reach = window.outer_radius().min(spec.half_width());
    let radii = geometric_radii(h, 2.0 * reach, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals = f.values();
    let mask = window.mask(&spec);
    let mut best: f64 = 0.0;
    for &r in &radii {
        let Ok(sample) = sample_pairs(&spec, &cells, r, pairs, &mut rng) else {
            continue;
        };
        for (a, b) in sample {
            if !mask.get(b) {
                continue;
            }
            let d = (spec.point_at(a) - spec.point_at(b)).norm();
            best = best.max((vals[a] - vals[b]).norm() / d.powf(alpha));
        }
    }
    Ok(best)
}

/// Norms `||J||_{L^p(region)}` and, from several resolutions, the blow-up exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrabilityScan {
    /// `(p, ||J||_p)` on the finest supplied grid.
    pub norms: Vec<(f64, f64)>,
    /// Refinement growth rate of the shell mass `∫ J^p` near the singular point, per `p`.
    pub growth: Vec<(f64, f64)>,
    /// The `p` where growth turns from decay to divergence; infinite if it never does.
    pub p_star: Option<f64>,
}

/// Scans `L^p` norms of a Jacobian. With `detect_blowup`, the fields must be the
/// same Jacobian at two or more resolutions (coarse to fine), and `p*` is located
/// as the zero crossing of the refinement growth rate of `∫_{2h<|z-s|<4h} J^p`
/// around the singular point `s` (the location of `max J` if none is given).
pub fn integrability_scan(
    fields: &[&ComplexField],
    region: &Region,
    p_list: &[f64],
    detect_blowup: bool,
    singular: Option<Complex64>,
) -> Result<IntegrabilityScan> {
    let finest = fields
        .iter()
        .max_by_key(|f| f.spec().n())
        .ok_or_else(|| Error::InvalidParameter("no Jacobian supplied".into()))?;
    if p_list.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::InvalidParameter("exponents must be positive".into()));
    }
    let abs = finest.map(|v| Complex64::new(v.re.abs(), 0.0));
    let mask = region.mask(finest.spec());
    let norms = p_list
        .iter()
        .map(|&p| Ok((p, abs.lp_norm(p, Some(&mask))?)))
        .collect::<Result<Vec<_>>>()?;
    if !detect_blowup {
        return Ok(IntegrabilityScan { norms, growth: Vec::new(), p_star: None });
    }
    if fields.len() < 2 {
        return Err(Error::InvalidParameter(
            "blow-up detection needs at least two grid resolutions".into(),
        ));
    }
    let mut sorted: Vec<&ComplexField> = fields.to_vec();
    sorted.sort_by_key(|f| f.spec().n());
    let (coarse, fine) = (sorted[sorted.len() - 2], sorted[sorted.len() - 1]);
    let s = singular.unwrap_or_else(|| {
        let (idx, _) = fine
            .values()
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v.re > acc.1 { (i, v.re) } else { acc });
        fine.spec().point_at(idx)
    });
    let (hc, hf) = (coarse.spec().spacing(), fine.spec().spacing());
    let growth: Vec<(f64, f64)> = p_list
        .iter()
        .map(|&p| {
            let mc = shell_mass(coarse, s, p);
            let mf = shell_mass(fine, s, p);
            (p, (mf / mc).log2() / (hc / hf).log2())
        })
        .collect();
    let mut p_star = Some(f64::INFINITY);
    for w in growth.windows(2) {
        let ((p0, g0), (p1, g1)) = (w[0], w[1]);
        if g0 < 0.0 && g1 >= 0.0 {
            p_star = Some(p0 + (p1 - p0) * (-g0) / (g1 - g0));
            break;
        }
    }
    if let Some(&(p0, g0)) = growth.first() {
        if g0 >= 0.0 {
            p_star = Some(p0);
        }
    }
    Ok(IntegrabilityScan { norms, growth, p_star })
}

fn shell_mass(j: &ComplexField, s: Complex64, p: f64) -> f64 {
    let spec = j.spec();
    let h = spec.spacing();
    let shell = Region::annulus(s, 2.0 * h, 4.0 * h).mask(spec);
    j.values()
        .iter()
        .zip(shell.bits())
        .filter(|(_, &b)| b)
        .map(|(v, _)| v.re.abs().powf(p))
        .sum::<f64>()
        * spec.cell_area()
}

/// `∫_{Ω} J^{K/(K-1)}` over the union of the 2-dilates of a cover, by sub-cell quadrature.
pub fn area_distortion_integral(j: &ComplexField, cover: &DiskCover, distortion: f64) -> Result<f64> {
    if !(distortion > 1.0) {
        return Err(Error::InvalidParameter(format!("need K > 1 (got {distortion})")));
    }
    let e = distortion / (distortion - 1.0);
    j.disk_union_integral(&cover.dilated_pairs(2.0), |v| v.re.max(0.0).powf(e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoublingReport {
    /// `∫_{4D_j} J^{1/2} / ∫_{2D_j} J^{1/2}` per disk.
    pub ratios: Vec<f64>,
    pub max: f64,
    pub min: f64,
}

pub fn doubling_check(j: &ComplexField, cover: &DiskCover) -> Result<DoublingReport> {
    let sqrt = |v: Complex64| v.re.max(0.0).sqrt();
    let ratios = cover
        .disks()
        .iter()
        .map(|d| {
            let outer = j.disk_integral(d.center, 4.0 * d.radius, sqrt)?;
            let inner = j.disk_integral(d.center, 2.0 * d.radius, sqrt)?;
            Ok(outer / inner)
        })
        .collect::<Result<Vec<f64>>>()?;
    let max = ratios.iter().cloned().fold(f64::NAN, f64::max);
    let min = ratios.iter().cloned().fold(f64::NAN, f64::min);
    Ok(DoublingReport { ratios, max, min })
}

/// One truncation step of the convergence suite.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub index: usize,
    pub sup_phi: f64,
    pub sup_phi_inv: f64,
    /// `||Jφ_n - Jφ||_{L^p(window)}`, one entry per configured `p`.
    pub jacobian: Vec<f64>,
    /// `||∂(φ - φ_n)||_{2p} / ||B((μ - μ_n)∂φ)||_{2p}` at the first configured `p`.
    pub operator_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub p_list: Vec<f64>,
    /// `K/(K-1)`; exponents at or above it are flagged in the CSV header.
    pub critical_p: f64,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceReport {
    pub fn above_critical(&self) -> Vec<f64> {
        self.p_list.iter().cloned().filter(|&p| p >= self.critical_p).collect()
    }

    /// CSV with columns `n, sup_phi, sup_phi_inv` and one `jac_p<p>` column per exponent;
    /// exponents at or above `K/(K-1)` get the suffix `_above_critical`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::from("n,sup_phi,sup_phi_inv");
        for &p in &self.p_list {
            header.push_str(&format!(",jac_p{p}"));
            if p >= self.critical_p {
                header.push_str("_above_critical");
            }
        }
        writeln!(w, "{header}")?;
        if self.rows.is_empty() {
            write!(w, "0,0,0")?;
            for _ in &self.p_list {
                write!(w, ",0")?;
            }
            writeln!(w)?;
            return Ok(());
        }
        for row in &self.rows {
            write!(w, "{},{:e},{:e}", row.index, row.sup_phi, row.sup_phi_inv)?;
            for v in &row.jacobian {
                write!(w, ",{v:e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Solves for `μ` and for each truncation `μ_n = truncate(μ, cover_n)` and
/// records the three convergence metrics on the window.
pub fn lemma1_suite(
    plan: &TransformPlan,
    mu: &BeltramiCoefficient,
    covers: &[DiskCover],
    p_list: &[f64],
    window: &Region,
    tol: f64,
) -> Result<ConvergenceReport> {
    let spec = *mu.spec();
    let critical_p = if mu.k() > 0.0 { mu.distortion() / (mu.distortion() - 1.0) } else { f64::INFINITY };
    if p_list.iter().any(|&p| !(p >= 1.0)) {
        return Err(Error::InvalidParameter("convergence exponents must be >= 1".into()));
    }
    let base = principal_solution(plan, mu, tol)?;
    let j_base = jacobian(&base, JacobianMethod::Spectral)?;
    let mask = window.mask(&spec);
    let targets: Vec<Complex64> = (0..spec.len())
        .filter(|&i| mask.get(i))
        .map(|i| spec.point_at(i))
        .collect();
    let inv_base = inverse_samples(&base, &targets);
    let mut rows = Vec::with_capacity(covers.len());
    for (i, cover) in covers.iter().enumerate() {
        let index = i + 1;
        let mu_n = truncate_coefficient(mu, cover)?;
        let map_n = principal_solution(plan, &mu_n, tol).map_err(|e| tag(e, index))?;
        let sup_phi = map_n.phi.sub(&base.phi)?.sup_norm(Some(&mask));
        let inv_n = inverse_samples(&map_n, &targets);
        let sup_phi_inv = inv_n
            .iter()
            .zip(&inv_base)
            .filter_map(|(a, b)| Some((a.as_ref()? - b.as_ref()?).norm()))
            .fold(0.0, f64::max);
        let j_n = jacobian(&map_n, JacobianMethod::Spectral).map_err(|e| tag(e, index))?;
        let diff = j_n.sub(&j_base)?;
        let jac = p_list
            .iter()
            .map(|&p| diff.lp_norm(p, Some(&mask)))
            .collect::<Result<Vec<_>>>()?;
        let operator_ratio = match p_list.first() {
            Some(&p) => operator_identity_ratio(plan, &base, &map_n, p)?,
            None => f64::NAN,
        };
        rows.push(ConvergenceRow { index, sup_phi, sup_phi_inv, jacobian: jac, operator_ratio });
    }
    Ok(ConvergenceReport { p_list: p_list.to_vec(), critical_p, rows })
}

fn tag(e: Error, index: usize) -> Error {
    Error::Truncation { index, source: Box::new(e) }
}

fn inverse_samples(map: &PrincipalMap, targets: &[Complex64]) -> Vec<Option<Complex64>> {
    let inv = MapInverter::new(&map.phi);
    targets.par_iter().map(|&w| inv.invert(w).ok()).collect()
}

/// `||∂(φ - φ_n)||_{2p} / ||B((μ - μ_n)∂φ)||_{2p}` over the whole grid; the
/// numerator and denominator are linked by `(I - Bμ_n)∂(φ - φ_n) = B((μ - μ_n)∂φ)`,
/// so the ratio is bounded by the norm of `(I - Bμ_n)^{-1}` on `L^{2p}`.
pub fn operator_identity_ratio(
    plan: &TransformPlan,
    map: &PrincipalMap,
    map_n: &PrincipalMap,
    p: f64,
) -> Result<f64> {
    let dphi = map.h.map(|v| v + 1.0);
    let rhs_density = map.mu.field().sub(map_n.mu.field())?.mul(&dphi)?;
    let rhs = plan.beurling(&rhs_density)?;
    let lhs = map.h.sub(&map_n.h)?;
    let den = rhs.lp_norm(2.0 * p, None)?;
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(lhs.lp_norm(2.0 * p, None)? / den)
}

/// Residual of `(I - Bμ_n)(h - h_n) = B((μ - μ_n)(1 + h))`, relative to the right side.
pub fn operator_identity_residual(plan: &TransformPlan, map: &PrincipalMap, map_n: &PrincipalMap) -> Result<f64> {
    let diff = map.h.sub(&map_n.h)?;
    let lhs = diff.sub(&plan.beurling(&map_n.mu.field().mul(&diff)?)?)?;
    let dphi = map.h.map(|v| v + 1.0);
    let rhs = plan.beurling(&map.mu.field().sub(map_n.mu.field())?.mul(&dphi)?)?;
    let den = rhs.lp_norm(2.0, None)?;
    let num = lhs.sub(&rhs)?.lp_norm(2.0, None)?;
    Ok(if den > 0.0 { num / den } else { num })
}

/// `sup|F_n - F|` on a window against `C_f (sup|φ_n⁻¹ - φ⁻¹|)^α`, with
/// `F = f∘φ⁻¹` and `F_n = f∘φ_n⁻¹`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferCheck {
    pub sup_difference: f64,
    pub sup_inverse_difference: f64,
    pub bound: f64,
    pub holds: bool,
}

pub fn uniform_transfer(
    f: &ComplexField,
    map: &PrincipalMap,
    map_n: &PrincipalMap,
    window: &Region,
    holder_constant: f64,
    alpha: f64,
) -> Result<TransferCheck> {
    let spec = *f.spec();
    let mask = window.mask(&spec);
    let targets: Vec<Complex64> = (0..spec.len())
        .filter(|&i| mask.get(i))
        .map(|i| spec.point_at(i))
        .collect();
    let a = inverse_samples(map, &targets);
    let b = inverse_samples(map_n, &targets);
    let mut sup_difference: f64 = 0.0;
    let mut sup_inverse_difference: f64 = 0.0;
    for (za, zb) in a.iter().zip(&b) {
        let (Some(za), Some(zb)) = (za, zb) else { continue };
        sup_inverse_difference = sup_inverse_difference.max((za - zb).norm());
        if let (Some(fa), Some(fb)) = (f.interpolate(*za), f.interpolate(*zb)) {
            sup_difference = sup_difference.max((fa - fb).norm());
        }
    }
    let bound = holder_constant * sup_inverse_difference.powf(alpha);
    // slack for the bilinear interpolation of f between samples
    let slack = 1e-9 + f.sup_norm(None) * 1e-12;
    Ok(TransferCheck { sup_difference, sup_inverse_difference, bound, holds: sup_difference <= bound + slack })
}
