//! Principal solutions of `∂̄φ = μ ∂φ` for coefficients supported in the unit disk.
//!
//! The Neumann iteration solves `h = B(μh) + B(μ)` for `h = ∂φ - 1`; the map is
//! then `φ = z + C(ω)` with the density `ω = ∂̄φ = μ(1 + h)`. Since the discrete
//! `B` is unitary on `L²`, each step contracts by `sup|μ| = k`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{ComplexField, DerivativeMethod, GridSpec, Mask, Region};
use crate::transforms::TransformPlan;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 400;

pub fn k_from_distortion(distortion: f64) -> f64 {
    (distortion - 1.0) / (distortion + 1.0)
}

pub fn distortion_from_k(k: f64) -> f64 {
    (1.0 + k) / (1.0 - k)
}

/// A Beltrami coefficient with a certified bound `sup|μ| <= k < 1`, vanishing
/// outside the open unit disk.
#[derive(Debug, Clone, PartialEq)]
pub struct BeltramiCoefficient {
    field: ComplexField,
    k: f64,
}

impl BeltramiCoefficient {
    pub fn new(field: ComplexField, k: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&k) {
            return Err(Error::DistortionTooLarge(k));
        }
        let spec = *field.spec();
        for (idx, v) in field.values().iter().enumerate() {
            let a = v.norm();
            // a few ulps of slack for coefficients built as k·(unit complex)
            if a - k > 4.0 * f64::EPSILON * k {
                return Err(Error::BoundViolation { value: a, k });
            }
            let z = spec.point_at(idx);
            if a > 0.0 && z.norm() >= 1.0 {
                return Err(Error::SupportViolation { z, value: a });
            }
        }
        Ok(Self { field, k })
    }

    /// Certifies the bound from the samples themselves.
    pub fn from_field(field: ComplexField) -> Result<Self> {
        let k = field.sup_norm(None);
        Self::new(field, k)
    }

    pub fn zero(spec: GridSpec) -> Self {
        Self { field: ComplexField::zeros(spec), k: 0.0 }
    }

    pub fn field(&self) -> &ComplexField {
        &self.field
    }

    pub fn spec(&self) -> &GridSpec {
        self.field.spec()
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// The distortion `K = (1 + k)/(1 - k)`.
    pub fn distortion(&self) -> f64 {
        distortion_from_k(self.k)
    }

    pub fn is_zero(&self) -> bool {
        self.field.values().iter().all(|v| *v == ZERO)
    }

    /// Cells within two cells of a jump of size `> k/2` between neighbouring samples.
    pub fn discontinuity_band(&self) -> Mask {
        let spec = *self.spec();
        let n = spec.n();
        let threshold = 0.5 * self.k;
        let vals = self.field.values();
        let mut jump = vec![false; n * n];
        if self.k > 0.0 {
            for j in 0..n {
                for k in 0..n {
                    let v = vals[j * n + k];
                    if j + 1 < n && (vals[(j + 1) * n + k] - v).norm() > threshold {
                        jump[j * n + k] = true;
                        jump[(j + 1) * n + k] = true;
                    }
                    if k + 1 < n && (vals[j * n + k + 1] - v).norm() > threshold {
                        jump[j * n + k] = true;
                        jump[j * n + k + 1] = true;
                    }
                }
            }
        }
        let mut band = vec![false; n * n];
        for j in 0..n {
            for k in 0..n {
                if !jump[j * n + k] {
                    continue;
                }
                for a in j.saturating_sub(2)..(j + 3).min(n) {
                    for b in k.saturating_sub(2)..(k + 3).min(n) {
                        band[a * n + b] = true;
                    }
                }
            }
        }
        Mask::from_bits(spec, band).expect("band matches grid")
    }
}

/// Output of [`neumann_solve`].
#[derive(Debug, Clone)]
pub struct NeumannSolution {
    /// Fixed point of `h = B(μh) + B(μ)`, i.e. `∂φ - 1`.
    pub h: ComplexField,
    /// `||h - B(μh) - B(μ)||₂` after the last step.
    pub residual: f64,
    pub iterations: usize,
    /// `||h_{m+1} - h_m||₂` for every step.
    pub increments: Vec<f64>,
}

/// Iterates `h_{m+1} = B(μ h_m) + B(μ)` from `h_0 = 0` until
/// `||h_{m+1} - h_m||₂ <= tol ||h_{m+1}||₂`.
pub fn neumann_solve(
    plan: &TransformPlan,
    mu: &BeltramiCoefficient,
    tol: f64,
    max_iter: usize,
) -> Result<NeumannSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive (got {tol})")));
    }
    plan.spec().ensure_same(mu.spec())?;
    let spec = *mu.spec();
    let mu_vals = mu.field().values();
    let mut h = ComplexField::zeros(spec);
    let mut increments = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter.max(1) {
        let next = step(plan, mu_vals, &h)?;
        let inc = next.sub(&h)?.lp_norm(2.0, None)?;
        let size = next.lp_norm(2.0, None)?;
        increments.push(inc);
        h = next;
        if inc <= tol * size {
            converged = true;
            break;
        }
    }
    let residual = step(plan, mu_vals, &h)?.sub(&h)?.lp_norm(2.0, None)?;
    if !converged {
        let last = match increments.as_slice() {
            [.., a, b] if *a > 0.0 => b / a,
            _ => f64::NAN,
        };
        return Err(Error::NonConvergence {
            iterations: increments.len(),
            last,
            history: increments,
        });
    }
    Ok(NeumannSolution { h, residual, iterations: increments.len(), increments })
}

fn step(plan: &TransformPlan, mu: &[Complex64], h: &ComplexField) -> Result<ComplexField> {
    let spec = *h.spec();
    let rhs: Vec<Complex64> = mu
        .par_iter()
        .zip(h.values().par_iter())
        .map(|(&m, &v)| m * (ONE + v))
        .collect();
    plan.beurling(&ComplexField::from_raw(spec, rhs))
}

/// Recorded checks of the normalization, decay and equation residual of a solved map.
#[derive(Debug, Clone, PartialEq)]
pub struct MapDiagnostics {
    /// `|φ|` at the cell center nearest the origin.
    pub origin_value: f64,
    /// Allowed value: `2 h sup|Dφ|` over the 3x3 block around that cell.
    pub origin_allowance: f64,
    pub normalization_ok: bool,
    /// The constant `φ(z) - z → c` at infinity forced by `φ(0) = 0`; zero for a
    /// map that is both principal and normalized at the origin.
    pub offset_at_infinity: Complex64,
    /// `max |φ(z) - z - c| |z|` on `L/2 < |z| < L`.
    pub tail_bound: f64,
    /// Log-log slope of the binned tail; `≈ -1` for `O(1/|z|)` decay.
    pub tail_slope: f64,
    pub decay_ok: bool,
    /// `||∂̄φ - μ∂φ||₂ / ||∂φ||₂` (central differences) on `|z| <= L/2` away from
    /// the discontinuities of `μ`.
    pub beltrami_residual: f64,
    pub beltrami_allowance: f64,
    pub beltrami_ok: bool,
    /// Fraction of the density's `L¹` mass beyond `|z| = L/2`.
    pub support_tail_fraction: f64,
}

impl MapDiagnostics {
    pub fn all_ok(&self) -> bool {
        self.normalization_ok && self.decay_ok && self.beltrami_ok
    }
}

/// A solved Beltrami equation.
#[derive(Debug, Clone)]
pub struct PrincipalMap {
    pub phi: ComplexField,
    /// Neumann fixed point, `∂φ - 1`.
    pub h: ComplexField,
    /// `∂̄φ = μ(1 + h)`, so that `φ = z + C(density)`.
    pub density: ComplexField,
    pub mu: BeltramiCoefficient,
    pub residual: f64,
    pub iterations: usize,
    pub increments: Vec<f64>,
    pub tolerance: f64,
    pub diagnostics: MapDiagnostics,
}

impl PrincipalMap {
    pub fn spec(&self) -> &GridSpec {
        self.phi.spec()
    }

    /// Reassembles a map from stored samples, recomputing the density and diagnostics.
    pub fn from_parts(
        phi: ComplexField,
        h: ComplexField,
        mu: BeltramiCoefficient,
        residual: f64,
        iterations: usize,
        tolerance: f64,
    ) -> Result<Self> {
        phi.spec().ensure_same(h.spec())?;
        phi.spec().ensure_same(mu.spec())?;
        let density = mu.field().zip_map(&h, |m, v| m * (ONE + v))?;
        let spec = *phi.spec();
        let limit = 0.5 * spec.half_width();
        let (mut total, mut tail) = (0.0, 0.0);
        for (idx, v) in density.values().iter().enumerate() {
            total += v.norm();
            if spec.point_at(idx).norm() > limit {
                tail += v.norm();
            }
        }
        let tail_fraction = if total > 0.0 { tail / total } else { 0.0 };
        let offset = -unnormalized_cauchy_at_origin(&density);
        let diagnostics = diagnose(&phi, &mu, tolerance, offset, tail_fraction);
        Ok(Self {
            phi,
            h,
            density,
            mu,
            residual,
            iterations,
            increments: Vec::new(),
            tolerance,
            diagnostics,
        })
    }

    /// `φ` at an arbitrary point by bilinear interpolation.
    pub fn eval(&self, z: Complex64) -> Option<Complex64> {
        self.phi.interpolate(z)
    }
}

pub fn principal_solution(
    plan: &TransformPlan,
    mu: &BeltramiCoefficient,
    tol: f64,
) -> Result<PrincipalMap> {
    principal_solution_with(plan, mu, tol, DEFAULT_MAX_ITER)
}

pub fn principal_solution_with(
    plan: &TransformPlan,
    mu: &BeltramiCoefficient,
    tol: f64,
    max_iter: usize,
) -> Result<PrincipalMap> {
    let sol = neumann_solve(plan, mu, tol, max_iter)?;
    let density = mu.field().zip_map(&sol.h, |m, v| m * (ONE + v))?;
    let (cauchy, support) = plan.cauchy_with_diagnostics(&density)?;
    let phi = cauchy.map_with_point(|z, v| z + v);
    let offset = -unnormalized_cauchy_at_origin(&density);
    let diagnostics = diagnose(&phi, mu, tol, offset, support.tail_fraction);
    Ok(PrincipalMap {
        phi,
        h: sol.h,
        density,
        mu: mu.clone(),
        residual: sol.residual,
        iterations: sol.iterations,
        increments: sol.increments,
        tolerance: tol,
        diagnostics,
    })
}

fn unnormalized_cauchy_at_origin(f: &ComplexField) -> Complex64 {
    let spec = f.spec();
    let mut acc = ZERO;
    for (idx, &v) in f.values().iter().enumerate() {
        if v != ZERO {
            acc -= v / spec.point_at(idx);
        }
    }
    acc * (spec.cell_area() / std::f64::consts::PI)
}

fn diagnose(
    phi: &ComplexField,
    mu: &BeltramiCoefficient,
    tol: f64,
    offset: Complex64,
    support_tail_fraction: f64,
) -> MapDiagnostics {
    let spec = *phi.spec();
    let n = spec.n();
    let h = spec.spacing();
    let l = spec.half_width();

    let (d, dbar) = phi.wirtinger(DerivativeMethod::CentralDifference);

    let (j0, k0) = spec.nearest(Complex64::new(0.0, 0.0));
    let origin_value = phi.get(j0, k0).norm();
    let mut local_sup: f64 = 0.0;
    for a in j0.saturating_sub(1)..(j0 + 2).min(n) {
        for b in k0.saturating_sub(1)..(k0 + 2).min(n) {
            local_sup = local_sup.max(d.get(a, b).norm() + dbar.get(a, b).norm());
        }
    }
    let origin_allowance = 2.0 * h * local_sup;

    // tail on L/2 < |z| < L, binned in eight shells
    let bins = 8usize;
    let mut shell_max = vec![0.0f64; bins];
    let mut tail_bound: f64 = 0.0;
    for (idx, &v) in phi.values().iter().enumerate() {
        let z = spec.point_at(idx);
        let r = z.norm();
        if r <= 0.5 * l || r >= l {
            continue;
        }
        let t = (v - z - offset).norm();
        tail_bound = tail_bound.max(t * r);
        let b = (((r - 0.5 * l) / (0.5 * l)) * bins as f64) as usize;
        shell_max[b.min(bins - 1)] = shell_max[b.min(bins - 1)].max(t);
    }
    let negligible = 1e-12 * (1.0 + l);
    let (tail_slope, decay_ok) = if shell_max.iter().all(|&t| t <= negligible) {
        (f64::NEG_INFINITY, true)
    } else {
        let pts: Vec<(f64, f64)> = shell_max
            .iter()
            .enumerate()
            .filter(|(_, &t)| t > 0.0)
            .map(|(b, &t)| ((0.5 * l * (1.0 + (b as f64 + 0.5) / bins as f64)).ln(), t.ln()))
            .collect();
        let slope = least_squares_slope(&pts);
        (slope, slope <= -0.8)
    };

    let band = mu.discontinuity_band();
    let region = Region::centered_disk(0.5 * l).mask(&spec).and_not(&band);
    let defect = mu
        .field()
        .mul(&d)
        .and_then(|mud| dbar.sub(&mud))
        .expect("fields share a grid");
    let num = defect.lp_norm(2.0, Some(&region)).unwrap_or(0.0);
    let den = d.lp_norm(2.0, Some(&region)).unwrap_or(1.0);
    let beltrami_residual = if den > 0.0 { num / den } else { 0.0 };
    let beltrami_allowance = (10.0 * tol).max(5.0 * h);

    MapDiagnostics {
        origin_value,
        origin_allowance,
        normalization_ok: origin_value <= origin_allowance,
        offset_at_infinity: offset,
        tail_bound,
        tail_slope,
        decay_ok,
        beltrami_residual,
        beltrami_allowance,
        beltrami_ok: beltrami_residual <= beltrami_allowance,
        support_tail_fraction,
    }
}

pub(crate) fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let m = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianMethod {
    /// `|1 + h|² - |ω|²` from the solver's own densities (`∂φ = 1 + Bω`, `∂̄φ = ω`).
    Spectral,
    /// `|∂φ|² - |∂̄φ|²` from central differences of the sampled map.
    CentralDifference,
}

/// `J = |∂φ|² - |∂̄φ|²` as a real field (zero imaginary part).
pub fn jacobian(map: &PrincipalMap, method: JacobianMethod) -> Result<ComplexField> {
    let j = match method {
        JacobianMethod::Spectral => map
            .h
            .zip_map(&map.density, |h, w| Complex64::new((ONE + h).norm_sqr() - w.norm_sqr(), 0.0))?,
        JacobianMethod::CentralDifference => {
            let (d, dbar) = map.phi.wirtinger(DerivativeMethod::CentralDifference);
            d.zip_map(&dbar, |a, b| Complex64::new(a.norm_sqr() - b.norm_sqr(), 0.0))?
        }
    };
    let scale = j.sup_norm(None).max(1.0);
    let count = j.values().iter().filter(|v| v.re < -1e-9 * scale).count();
    let allowed = 4 * map.spec().n();
    if count > allowed {
        return Err(Error::NegativeJacobian { count, allowed });
    }
    Ok(j)
}

/// Damped-Newton inversion of the bilinear interpolant of a sampled map.
pub struct MapInverter<'a> {
    phi: &'a ComplexField,
    origin: Complex64,
    cell: f64,
    buckets: usize,
    table: Vec<Vec<u32>>,
    tolerance: f64,
}

impl<'a> MapInverter<'a> {
    pub fn new(phi: &'a ComplexField) -> Self {
        let spec = phi.spec();
        let (mut lo, mut hi) = (
            Complex64::new(f64::INFINITY, f64::INFINITY),
            Complex64::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        );
        for v in phi.values() {
            lo = Complex64::new(lo.re.min(v.re), lo.im.min(v.im));
            hi = Complex64::new(hi.re.max(v.re), hi.im.max(v.im));
        }
        let buckets = (spec.n() / 2).max(1);
        let extent = (hi.re - lo.re).max(hi.im - lo.im).max(1e-12);
        let cell = extent / buckets as f64 * (1.0 + 1e-9);
        let mut table = vec![Vec::new(); buckets * buckets];
        for (idx, v) in phi.values().iter().enumerate() {
            let a = (((v.re - lo.re) / cell) as usize).min(buckets - 1);
            let b = (((v.im - lo.im) / cell) as usize).min(buckets - 1);
            table[a * buckets + b].push(idx as u32);
        }
        Self {
            phi,
            origin: lo,
            cell,
            buckets,
            table,
            tolerance: 1e-10 * (1.0 + extent),
        }
    }

    fn seed(&self, w: Complex64) -> Result<usize> {
        let rel = (w - self.origin) / self.cell;
        let nb = self.buckets as i64;
        let (a, b) = (rel.re.floor() as i64, rel.im.floor() as i64);
        if a < -1 || b < -1 || a > nb || b > nb {
            return Err(Error::OutsideImage(w));
        }
        let mut best: Option<(f64, usize)> = None;
        for ring in 0..nb {
            for da in -ring..=ring {
                for db in -ring..=ring {
                    if da.abs() != ring && db.abs() != ring {
                        continue;
                    }
                    let (x, y) = (a + da, b + db);
                    if x < 0 || y < 0 || x >= nb || y >= nb {
                        continue;
                    }
                    for &idx in &self.table[(x * nb + y) as usize] {
                        let d = (self.phi.values()[idx as usize] - w).norm();
                        if best.map_or(true, |(bd, _)| d < bd) {
                            best = Some((d, idx as usize));
                        }
                    }
                }
            }
            // one extra ring after the first hit guarantees the nearest sample
            if let Some((d, idx)) = best {
                if d <= ring as f64 * self.cell {
                    return Ok(idx);
                }
            }
        }
        best.map(|(_, idx)| idx).ok_or(Error::OutsideImage(w))
    }

    pub fn invert(&self, w: Complex64) -> Result<Complex64> {
        let spec = self.phi.spec();
        let h = spec.spacing();
        let mut z = spec.point_at(self.seed(w)?);
        let eval = |z: Complex64| self.phi.interpolate(z);
        let mut fz = eval(z).ok_or(Error::OutsideImage(w))? - w;
        let delta = 1e-6 * h;
        for _ in 0..60 {
            if fz.norm() <= self.tolerance {
                return Ok(z);
            }
            // forward differences stay inside the hull by stepping toward the center
            let sx = if spec.contains_interpolable(z + delta) { delta } else { -delta };
            let sy = if spec.contains_interpolable(z + Complex64::new(0.0, delta)) { delta } else { -delta };
            let fx = (eval(z + sx).ok_or(Error::OutsideImage(w))? - w - fz) / sx;
            let fy = (eval(z + Complex64::new(0.0, sy)).ok_or(Error::OutsideImage(w))? - w - fz) / sy;
            let det = fx.re * fy.im - fy.re * fx.im;
            if det.abs() < 1e-300 {
                break;
            }
            let dx = (-fz.re * fy.im + fy.re * fz.im) / det;
            let dy = (-fx.re * fz.im + fz.re * fx.im) / det;
            let dz = Complex64::new(dx, dy);
            let mut t = 1.0;
            let mut moved = false;
            while t > 1e-8 {
                let cand = z + dz * t;
                if let Some(v) = eval(cand) {
                    let fc = v - w;
                    if fc.norm() < fz.norm() {
                        z = cand;
                        fz = fc;
                        moved = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        if fz.norm() <= self.tolerance * 100.0 {
            Ok(z)
        } else if !spec.contains_interpolable(z) {
            Err(Error::OutsideImage(w))
        } else {
            Err(Error::InversionStagnated { target: w, residual: fz.norm() })
        }
    }
}

/// Inverts the map at each target; fails on the first target that cannot be inverted.
pub fn invert_map(map: &PrincipalMap, targets: &[Complex64]) -> Result<Vec<Complex64>> {
    let inv = MapInverter::new(&map.phi);
    targets.par_iter().map(|&w| inv.invert(w)).collect()
}

/// `F = f ∘ φ⁻¹` on the grid, with cells whose preimage cannot be found masked out.
#[derive(Debug, Clone)]
pub struct Composition {
    pub field: ComplexField,
    pub valid: Mask,
    pub excluded_area: f64,
}

pub fn compose_with_inverse(f: &ComplexField, map: &PrincipalMap) -> Result<Composition> {
    compose_field_with_inverse(f, &map.phi)
}

/// [`compose_with_inverse`] for a bare sampled homeomorphism.
pub fn compose_field_with_inverse(f: &ComplexField, phi: &ComplexField) -> Result<Composition> {
    let spec = *phi.spec();
    spec.ensure_same(f.spec())?;
    let inv = MapInverter::new(phi);
    let results: Vec<Option<Complex64>> = (0..spec.len())
        .into_par_iter()
        .map(|idx| {
            let w = spec.point_at(idx);
            inv.invert(w).ok().and_then(|z| f.interpolate(z))
        })
        .collect();
    let bits: Vec<bool> = results.iter().map(Option::is_some).collect();
    let values = results.into_iter().map(|v| v.unwrap_or(ZERO)).collect();
    let valid = Mask::from_bits(spec, bits)?;
    let excluded_area = spec.len() as f64 * spec.cell_area() - valid.area();
    Ok(Composition { field: ComplexField::new(spec, values)?, valid, excluded_area })
}
