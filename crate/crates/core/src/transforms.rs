//! The Beurling transform `B` and the renormalized Cauchy transform `C`.
//!
//! `B` is applied as the unit-modulus Fourier multiplier `ξ̄/ξ` on the periodic
//! grid (`m(0) = 0`), so it is an exact isometry of the discrete `L²`. `C` is an
//! aperiodic convolution with the kernel `1/(π z)` evaluated by zero-padded FFTs,
//! renormalized so that `Cf(0) = 0`:
//!
//! ```text
//! Cf(z) = (1/π) Σ_w f(w) h² (1/(z - w) + 1/w)
//! ```
//!
//! `beurling_direct` is an `O(n⁴)` principal-value quadrature kept as an oracle.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft::{signed_frequency, Fft2};
use crate::grid::{ComplexField, GridSpec};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Largest grid accepted by [`beurling_direct`].
pub const DIRECT_ORACLE_LIMIT: usize = 64;

#[derive(Debug, Clone)]
pub struct TransformPlan {
    spec: GridSpec,
    fft: Fft2,
    multiplier: Vec<Complex64>,
    fft_padded: Fft2,
    cauchy_kernel_hat: Vec<Complex64>,
}

/// Diagnostics for the support policy of [`TransformPlan::cauchy`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportDiagnostics {
    /// `∫ |f|` over `|z| > L/2`.
    pub tail_mass: f64,
    /// Tail mass relative to the total `L¹` mass.
    pub tail_fraction: f64,
}

impl TransformPlan {
    pub fn new(spec: GridSpec) -> Self {
        let n = spec.n();
        let multiplier = (0..n * n)
            .map(|idx| {
                let (j, k) = (idx / n, idx % n);
                let xi = Complex64::new(
                    signed_frequency(j, n) as f64,
                    signed_frequency(k, n) as f64,
                );
                if xi == ZERO {
                    ZERO
                } else {
                    xi.conj() / xi
                }
            })
            .collect();

        let m = 2 * n;
        let h = spec.spacing();
        let mut kernel = vec![ZERO; m * m];
        for a in 0..m {
            for b in 0..m {
                let da = signed_frequency(a, m);
                let db = signed_frequency(b, m);
                if da == 0 && db == 0 || da.unsigned_abs() as usize >= n || db.unsigned_abs() as usize >= n {
                    continue;
                }
                kernel[a * m + b] = Complex64::new(h / PI, 0.0) / Complex64::new(da as f64, db as f64);
            }
        }
        let fft_padded = Fft2::new(m);
        fft_padded.forward(&mut kernel);

        Self {
            spec,
            fft: Fft2::new(n),
            multiplier,
            fft_padded,
            cauchy_kernel_hat: kernel,
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Multiplier table of `B` in FFT bin order.
    pub fn multiplier(&self) -> &[Complex64] {
        &self.multiplier
    }

    /// Discrete Beurling transform via the multiplier `ξ̄/ξ`.
    pub fn beurling(&self, f: &ComplexField) -> Result<ComplexField> {
        self.spec.ensure_same(f.spec())?;
        let mut data = f.values().to_vec();
        self.fft.forward(&mut data);
        data.par_iter_mut()
            .zip(self.multiplier.par_iter())
            .for_each(|(v, m)| *v *= m);
        self.fft.inverse(&mut data);
        Ok(ComplexField::from_raw(self.spec, data))
    }

    /// Renormalized Cauchy transform sampled at the cell centers.
    pub fn cauchy(&self, f: &ComplexField) -> Result<ComplexField> {
        Ok(self.cauchy_with_diagnostics(f)?.0)
    }

    pub fn cauchy_with_diagnostics(
        &self,
        f: &ComplexField,
    ) -> Result<(ComplexField, SupportDiagnostics)> {
        self.spec.ensure_same(f.spec())?;
        let n = self.spec.n();
        let m = 2 * n;
        let mut padded = vec![ZERO; m * m];
        for j in 0..n {
            padded[j * m..j * m + n].copy_from_slice(&f.values()[j * n..(j + 1) * n]);
        }
        self.fft_padded.forward(&mut padded);
        padded
            .par_iter_mut()
            .zip(self.cauchy_kernel_hat.par_iter())
            .for_each(|(v, k)| *v *= k);
        self.fft_padded.inverse(&mut padded);

        let at_origin = self.unnormalized_at(f, ZERO);
        let mut out = Vec::with_capacity(n * n);
        for j in 0..n {
            out.extend(padded[j * m..j * m + n].iter().map(|v| v - at_origin));
        }
        Ok((ComplexField::from_raw(self.spec, out), self.support(f)))
    }

    /// Direct evaluation of the renormalized Cauchy transform at an arbitrary
    /// point. A source cell coinciding with `z` is skipped (its symmetric
    /// contribution vanishes). At `z = 0` every term cancels exactly.
    pub fn cauchy_at(&self, f: &ComplexField, z: Complex64) -> Result<Complex64> {
        self.spec.ensure_same(f.spec())?;
        let h2 = self.spec.cell_area();
        let mut acc = ZERO;
        for (idx, &v) in f.values().iter().enumerate() {
            if v == ZERO {
                continue;
            }
            let w = self.spec.point_at(idx);
            if w == z {
                continue;
            }
            acc += v * (1.0 / (z - w) + 1.0 / w);
        }
        Ok(acc * (h2 / PI))
    }

    fn unnormalized_at(&self, f: &ComplexField, z: Complex64) -> Complex64 {
        let h2 = self.spec.cell_area();
        let mut acc = ZERO;
        for (idx, &v) in f.values().iter().enumerate() {
            if v == ZERO {
                continue;
            }
            let w = self.spec.point_at(idx);
            if w != z {
                acc += v / (z - w);
            }
        }
        acc * (h2 / PI)
    }

    fn support(&self, f: &ComplexField) -> SupportDiagnostics {
        let h2 = self.spec.cell_area();
        let limit = 0.5 * self.spec.half_width();
        let mut total = 0.0;
        let mut tail = 0.0;
        for (idx, v) in f.values().iter().enumerate() {
            let a = v.norm();
            total += a;
            if self.spec.point_at(idx).norm() > limit {
                tail += a;
            }
        }
        SupportDiagnostics {
            tail_mass: tail * h2,
            tail_fraction: if total > 0.0 { tail / total } else { 0.0 },
        }
    }
}

/// Principal-value quadrature of `Bf(z) = -(1/π) Σ_w f(w) h² / (z - w)²`; the self
/// cell contributes nothing.
pub fn beurling_direct(f: &ComplexField) -> Result<ComplexField> {
    beurling_direct_with_limit(f, DIRECT_ORACLE_LIMIT)
}

pub fn beurling_direct_with_limit(f: &ComplexField, limit: usize) -> Result<ComplexField> {
    let spec = *f.spec();
    let n = spec.n();
    if n > limit {
        return Err(Error::OracleLimit { n, limit });
    }
    let sources: Vec<(i64, i64, Complex64)> = f
        .values()
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != ZERO)
        .map(|(idx, &v)| ((idx / n) as i64, (idx % n) as i64, v))
        .collect();
    let values = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (j, k) = ((idx / n) as i64, (idx % n) as i64);
            let mut acc = ZERO;
            for &(sj, sk, v) in &sources {
                if sj == j && sk == k {
                    continue;
                }
                let d = Complex64::new((j - sj) as f64, (k - sk) as f64);
                acc += v / (d * d);
            }
            // h² / (h d)² = 1 / d²
            -acc / PI
        })
        .collect();
    Ok(ComplexField::from_raw(spec, values))
}

/// Empirical check of `|Cf(z) - Cf(w)| <= C |z - w|^{1-1/p} ||f||_{2p}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderBoundReport {
    pub p: f64,
    /// `sup |Cf(z) - Cf(w)| / |z - w|^{1-1/p}` over the sampled pairs.
    pub quotient: f64,
    /// `||f||_{2p}`.
    pub norm_2p: f64,
    /// `quotient / norm_2p`; zero when `f` vanishes.
    pub ratio: f64,
}

/// Samples 4000 point pairs uniformly from `|z| < L/2` (fixed seed, so the same
/// continuous points are used at every resolution) and evaluates the Hölder
/// quotient of `Cf` with the bilinear interpolant.
pub fn holder_seminorm_bound_check(
    plan: &TransformPlan,
    f: &ComplexField,
    p: f64,
) -> Result<HolderBoundReport> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidParameter(format!("need 1 < p < inf (got {p})")));
    }
    let cf = plan.cauchy(f)?;
    let radius = 0.5 * plan.spec().half_width();
    let exponent = 1.0 - 1.0 / p;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c0de);
    let draw = |rng: &mut ChaCha8Rng| loop {
        let z = Complex64::new(rng.gen_range(-radius..radius), rng.gen_range(-radius..radius));
        if z.norm() < radius {
            return z;
        }
    };
    let mut quotient: f64 = 0.0;
    for _ in 0..4000 {
        let z = draw(&mut rng);
        let w = draw(&mut rng);
        let d = (z - w).norm();
        if d < 1e-9 {
            continue;
        }
        let (Some(a), Some(b)) = (cf.interpolate(z), cf.interpolate(w)) else {
            continue;
        };
        quotient = quotient.max((a - b).norm() / d.powf(exponent));
    }
    let norm_2p = f.lp_norm(2.0 * p, None)?;
    let ratio = if norm_2p > 0.0 { quotient / norm_2p } else { 0.0 };
    Ok(HolderBoundReport { p, quotient, norm_2p, ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{DerivativeMethod, Mask, Region};

    fn bump(z: Complex64, r: f64) -> f64 {
        let t = z.norm_sqr() / (r * r);
        if t < 1.0 {
            (1.0 - t).powi(6)
        } else {
            0.0
        }
    }

    fn rel_l2(a: &ComplexField, b: &ComplexField, mask: Option<&Mask>) -> f64 {
        a.sub(b).unwrap().lp_norm(2.0, mask).unwrap() / b.lp_norm(2.0, mask).unwrap()
    }

    #[test]
    fn multiplier_is_unimodular_with_zero_mean() {
        let plan = TransformPlan::new(GridSpec::new(32, 2.0).unwrap());
        let m = plan.multiplier();
        assert_eq!(m[0], ZERO);
        for v in &m[1..] {
            assert!((v.norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn transforms_of_zero_vanish() {
        let spec = GridSpec::new(32, 2.0).unwrap();
        let plan = TransformPlan::new(spec);
        let zero = ComplexField::zeros(spec);
        assert!(plan.beurling(&zero).unwrap().values().iter().all(|v| *v == ZERO));
        assert!(plan.cauchy(&zero).unwrap().values().iter().all(|v| *v == ZERO));
        assert!(beurling_direct(&zero).unwrap().values().iter().all(|v| *v == ZERO));
    }

    #[test]
    fn beurling_intertwines_dbar_and_d() {
        let spec = GridSpec::new(256, 4.0).unwrap();
        let plan = TransformPlan::new(spec);
        let g = ComplexField::sample(spec, |z| {
            Complex64::new((-z.norm_sqr() / 0.4).exp(), 0.0) * (z + Complex64::new(0.2, 0.1))
        })
        .unwrap();
        let (d, dbar) = g.wirtinger(DerivativeMethod::Spectral);
        let bd = plan.beurling(&dbar).unwrap();
        assert!(rel_l2(&bd, &d, None) < 1e-8);
    }

    #[test]
    fn direct_oracle_single_cell() {
        let spec = GridSpec::new(16, 2.0).unwrap();
        let h = spec.spacing();
        let src = (8, 8);
        let mut vals = vec![ZERO; spec.len()];
        vals[spec.index(src.0, src.1)] = Complex64::new(1.0 / (h * h), 0.0);
        let f = ComplexField::new(spec, vals).unwrap();
        let b = beurling_direct(&f).unwrap();
        let w = spec.point(src.0, src.1);
        for idx in 0..spec.len() {
            let z = spec.point_at(idx);
            if z == w {
                assert_eq!(b.values()[idx], ZERO);
                continue;
            }
            let exact = -1.0 / (PI * (z - w) * (z - w));
            assert!((b.values()[idx] - exact).norm() <= 1e-12 * exact.norm());
        }
    }

    #[test]
    fn direct_oracle_refuses_large_grids() {
        let spec = GridSpec::new(128, 4.0).unwrap();
        let f = ComplexField::zeros(spec);
        assert!(matches!(beurling_direct(&f), Err(Error::OracleLimit { n: 128, limit: 64 })));
    }

    #[test]
    fn direct_oracle_on_dbar_of_bump() {
        let spec = GridSpec::new(64, 4.0).unwrap();
        let g = ComplexField::sample_real(spec, |z| bump(z, 1.0)).unwrap();
        let (d, dbar) = g.wirtinger(DerivativeMethod::Spectral);
        let b = beurling_direct(&dbar).unwrap();
        assert!(rel_l2(&b, &d, None) < 0.05);
    }

    #[test]
    fn fft_and_direct_agree_on_disk_indicator_away_from_boundary() {
        let spec = GridSpec::new(64, 4.0).unwrap();
        let plan = TransformPlan::new(spec);
        let chi = ComplexField::sample_real(spec, |z| if z.norm() < 1.0 { 1.0 } else { 0.0 }).unwrap();
        let fast = plan.beurling(&chi).unwrap();
        let slow = beurling_direct(&chi).unwrap();
        let h = spec.spacing();
        // the multiplier rings around the jump, so agreement improves with distance from it
        let mut last = f64::INFINITY;
        for band in [2.0, 4.0, 6.0] {
            let keep = Region::centered_disk(2.0)
                .mask(&spec)
                .and_not(&crate::grid::circle_band(&spec, ZERO, 1.0, band * h));
            let err = rel_l2(&fast, &slow, Some(&keep));
            assert!(err < last, "band {band}: {err}");
            last = err;
        }
        assert!(last < 0.05, "relative error {last}");
    }

    #[test]
    fn cauchy_inverts_dbar_on_smooth_density() {
        let spec = GridSpec::new(256, 4.0).unwrap();
        let plan = TransformPlan::new(spec);
        let f = ComplexField::sample(spec, |z| Complex64::new(bump(z, 1.0), 0.5 * bump(z - 0.2, 0.6))).unwrap();
        let cf = plan.cauchy(&f).unwrap();
        let (_, dbar) = cf.wirtinger(DerivativeMethod::CentralDifference);
        let inner = Region::centered_disk(spec.half_width() / 2.0).mask(&spec);
        assert!(rel_l2(&dbar, &f, Some(&inner)) < 0.02);
        assert_eq!(plan.cauchy_at(&f, ZERO).unwrap(), ZERO);
    }

    #[test]
    fn cauchy_of_disk_indicator() {
        let spec = GridSpec::new(256, 4.0).unwrap();
        let plan = TransformPlan::new(spec);
        let chi = ComplexField::sample_real(spec, |z| if z.norm() < 1.0 { 1.0 } else { 0.0 }).unwrap();
        let cf = plan.cauchy(&chi).unwrap();
        let (_, dbar) = cf.wirtinger(DerivativeMethod::CentralDifference);
        let inner = Region::centered_disk(2.0).mask(&spec);
        assert!(rel_l2(&dbar, &chi, Some(&inner)) < 0.02 * 10.0);
        // Continuous solution: C χ = z̄ inside, 1/z outside (up to the renormalization
        // constant, which vanishes by symmetry).
        let exact = ComplexField::sample(spec, |z| if z.norm() < 1.0 { z.conj() } else { 1.0 / z }).unwrap();
        let away = inner.and_not(&crate::grid::circle_band(&spec, ZERO, 1.0, 2.0 * spec.spacing()));
        let sup = cf.sub(&exact).unwrap().sup_norm(Some(&away));
        assert!(sup < 1e-2, "sup error {sup}");
        assert_eq!(plan.cauchy_at(&chi, ZERO).unwrap(), ZERO);
    }

    #[test]
    fn holder_quotient_is_homogeneous_and_zero_for_zero() {
        let spec = GridSpec::new(128, 4.0).unwrap();
        let plan = TransformPlan::new(spec);
        let zero = ComplexField::zeros(spec);
        let r0 = holder_seminorm_bound_check(&plan, &zero, 2.0).unwrap();
        assert_eq!(r0.quotient, 0.0);
        let chi = ComplexField::sample_real(spec, |z| if z.norm() < 1.0 { 1.0 } else { 0.0 }).unwrap();
        let r1 = holder_seminorm_bound_check(&plan, &chi, 2.0).unwrap();
        let r2 = holder_seminorm_bound_check(&plan, &chi.scale(Complex64::new(0.0, -3.0)), 2.0).unwrap();
        assert!((r2.quotient / r1.quotient - 3.0).abs() < 1e-10);
        assert!((r2.norm_2p / r1.norm_2p - 3.0).abs() < 1e-10);
        assert!((r2.ratio - r1.ratio).abs() < 1e-10 * r1.ratio);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn beurling_is_an_isometry(seed in any::<u64>()) {
                let spec = GridSpec::new(32, 2.0).unwrap();
                let plan = TransformPlan::new(spec);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let vals = (0..spec.len()).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
                let f = ComplexField::new(spec, vals).unwrap();
                let bf = plan.beurling(&f).unwrap();
                let mean = f.integral(None) / (4.0 * spec.half_width().powi(2));
                // m(0) = 0 removes the mean, the rest is preserved exactly
                let f0 = f.map(|v| v - mean);
                let ratio = bf.lp_norm(2.0, None).unwrap() / f0.lp_norm(2.0, None).unwrap();
                prop_assert!((ratio - 1.0).abs() < 1e-12);
                let bbf = plan.beurling(&bf).unwrap();
                let ratio2 = bbf.lp_norm(2.0, None).unwrap() / f0.lp_norm(2.0, None).unwrap();
                prop_assert!((ratio2 - 1.0).abs() < 1e-12);
            }

            #[test]
            fn cauchy_vanishes_at_origin(seed in any::<u64>()) {
                let spec = GridSpec::new(16, 2.0).unwrap();
                let plan = TransformPlan::new(spec);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let vals = (0..spec.len()).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
                let f = ComplexField::new(spec, vals).unwrap();
                prop_assert_eq!(plan.cauchy_at(&f, ZERO).unwrap(), ZERO);
            }
        }
    }
}
