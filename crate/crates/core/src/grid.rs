//! Uniform periodic grids over `[-L, L)²`, complex fields sampled at cell centers,
//! Wirtinger derivatives, norms and midpoint quadrature.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{signed_frequency, Fft2};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Square grid of `n x n` cells covering `[-L, L)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    n: usize,
    half_width: f64,
}

impl GridSpec {
    pub fn new(n: usize, half_width: f64) -> Result<Self> {
        if n < 16 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "n must be a power of two >= 16 (got {n})"
            )));
        }
        if !(half_width.is_finite() && half_width >= 2.0) {
            return Err(Error::InvalidGrid(format!(
                "half width L must be >= 2 (got {half_width})"
            )));
        }
        Ok(Self { n, half_width })
    }

    /// The default grid: 512 cells per side on `[-4, 4)²`.
    pub fn default_grid() -> Self {
        Self { n: 512, half_width: 4.0 }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn cell_area(&self) -> f64 {
        let h = self.spacing();
        h * h
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn index(&self, j: usize, k: usize) -> usize {
        j * self.n + k
    }

    /// Cell-center coordinate of sample `(j, k)`; `j` runs along the real axis.
    pub fn point(&self, j: usize, k: usize) -> Complex64 {
        let h = self.spacing();
        Complex64::new(
            -self.half_width + (j as f64 + 0.5) * h,
            -self.half_width + (k as f64 + 0.5) * h,
        )
    }

    pub fn point_at(&self, idx: usize) -> Complex64 {
        self.point(idx / self.n, idx % self.n)
    }

    /// Fractional sample coordinates of `z`, so that integer values hit cell centers.
    pub fn fractional(&self, z: Complex64) -> (f64, f64) {
        let h = self.spacing();
        (
            (z.re + self.half_width) / h - 0.5,
            (z.im + self.half_width) / h - 0.5,
        )
    }

    /// Whether `z` lies inside the hull of the cell centers (where bilinear
    /// interpolation is defined).
    pub fn contains_interpolable(&self, z: Complex64) -> bool {
        let (x, y) = self.fractional(z);
        let top = (self.n - 1) as f64;
        (0.0..=top).contains(&x) && (0.0..=top).contains(&y)
    }

    /// Index of the cell whose center is nearest to `z`, clamped to the grid.
    pub fn nearest(&self, z: Complex64) -> (usize, usize) {
        let (x, y) = self.fractional(z);
        let clamp = |v: f64| v.round().clamp(0.0, (self.n - 1) as f64) as usize;
        (clamp(x), clamp(y))
    }

    pub fn ensure_same(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                expected_n: self.n,
                expected_l: self.half_width,
                found_n: other.n,
                found_l: other.half_width,
            })
        }
    }
}

/// Complex samples on a [`GridSpec`], stored row-major with index `j * n + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    spec: GridSpec,
    values: Vec<Complex64>,
    singular: bool,
}

impl ComplexField {
    pub fn new(spec: GridSpec, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::InvalidGrid(format!(
                "expected {} samples, got {}",
                spec.len(),
                values.len()
            )));
        }
        if let Some(idx) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite {
                j: idx / spec.n(),
                k: idx % spec.n(),
            });
        }
        Ok(Self { spec, values, singular: false })
    }

    /// Wraps samples that may contain non-finite values at an integrable
    /// singularity; the field is flagged accordingly.
    pub fn with_singularity(spec: GridSpec, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::InvalidGrid(format!(
                "expected {} samples, got {}",
                spec.len(),
                values.len()
            )));
        }
        Ok(Self { spec, values, singular: true })
    }

    pub(crate) fn from_raw(spec: GridSpec, values: Vec<Complex64>) -> Self {
        debug_assert_eq!(values.len(), spec.len());
        Self { spec, values, singular: false }
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Self::from_raw(spec, vec![ZERO; spec.len()])
    }

    pub fn constant(spec: GridSpec, c: Complex64) -> Self {
        Self::from_raw(spec, vec![c; spec.len()])
    }

    /// Samples `f` at every cell center.
    pub fn sample<F>(spec: GridSpec, f: F) -> Result<Self>
    where
        F: Fn(Complex64) -> Complex64 + Sync,
    {
        let values: Vec<Complex64> = (0..spec.len())
            .into_par_iter()
            .map(|i| f(spec.point_at(i)))
            .collect();
        Self::new(spec, values)
    }

    /// Samples a real-valued function; the imaginary part is zero.
    pub fn sample_real<F>(spec: GridSpec, f: F) -> Result<Self>
    where
        F: Fn(Complex64) -> f64 + Sync,
    {
        Self::sample(spec, |z| Complex64::new(f(z), 0.0))
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    pub fn get(&self, j: usize, k: usize) -> Complex64 {
        self.values[self.spec.index(j, k)]
    }

    pub fn map<F>(&self, f: F) -> Self
    where
        F: Fn(Complex64) -> Complex64 + Sync,
    {
        Self::from_raw(self.spec, self.values.par_iter().map(|&v| f(v)).collect())
    }

    /// Pointwise map with access to the cell-center coordinate.
    pub fn map_with_point<F>(&self, f: F) -> Self
    where
        F: Fn(Complex64, Complex64) -> Complex64 + Sync,
    {
        let spec = self.spec;
        Self::from_raw(
            spec,
            self.values
                .par_iter()
                .enumerate()
                .map(|(i, &v)| f(spec.point_at(i), v))
                .collect(),
        )
    }

    pub fn zip_map<F>(&self, other: &Self, f: F) -> Result<Self>
    where
        F: Fn(Complex64, Complex64) -> Complex64 + Sync,
    {
        self.spec.ensure_same(&other.spec)?;
        Ok(Self::from_raw(
            self.spec,
            self.values
                .par_iter()
                .zip(other.values.par_iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: Complex64) -> Self {
        self.map(|v| v * c)
    }

    pub fn conj(&self) -> Self {
        self.map(|v| v.conj())
    }

    /// Largest sample modulus (restricted to `mask` when given).
    pub fn sup_norm(&self, mask: Option<&Mask>) -> f64 {
        match mask {
            None => self.values.iter().map(|v| v.norm()).fold(0.0, f64::max),
            Some(m) => self
                .values
                .iter()
                .zip(m.bits())
                .filter(|(_, &b)| b)
                .map(|(v, _)| v.norm())
                .fold(0.0, f64::max),
        }
    }

    /// Midpoint-rule `L^p` norm, `(Σ |f|^p h²)^{1/p}`, over `mask` or the whole grid.
    pub fn lp_norm(&self, p: f64, mask: Option<&Mask>) -> Result<f64> {
        if !(p.is_finite() && p >= 1.0) {
            return Err(Error::InvalidParameter(format!("p must be finite and >= 1 (got {p})")));
        }
        let area = self.spec.cell_area();
        let sum: f64 = match mask {
            None => self.values.iter().map(|v| v.norm().powf(p)).sum(),
            Some(m) => {
                self.spec.ensure_same(&m.spec)?;
                if m.count() == 0 {
                    return Err(Error::EmptyRegion);
                }
                self.values
                    .iter()
                    .zip(m.bits())
                    .filter(|(_, &b)| b)
                    .map(|(v, _)| v.norm().powf(p))
                    .sum()
            }
        };
        Ok((sum * area).powf(1.0 / p))
    }

    /// Midpoint-rule integral of the samples over `mask` or the whole grid.
    pub fn integral(&self, mask: Option<&Mask>) -> Complex64 {
        let area = self.spec.cell_area();
        let sum: Complex64 = match mask {
            None => self.values.iter().sum(),
            Some(m) => self
                .values
                .iter()
                .zip(m.bits())
                .filter(|(_, &b)| b)
                .map(|(v, _)| *v)
                .sum(),
        };
        sum * area
    }

    /// Bilinear interpolation between cell centers; `None` outside their hull.
    pub fn interpolate(&self, z: Complex64) -> Option<Complex64> {
        let n = self.spec.n();
        let (x, y) = self.spec.fractional(z);
        let top = (n - 1) as f64;
        if !(0.0..=top).contains(&x) || !(0.0..=top).contains(&y) {
            return None;
        }
        let j0 = (x.floor() as usize).min(n - 2);
        let k0 = (y.floor() as usize).min(n - 2);
        let tx = x - j0 as f64;
        let ty = y - k0 as f64;
        let v00 = self.get(j0, k0);
        let v10 = self.get(j0 + 1, k0);
        let v01 = self.get(j0, k0 + 1);
        let v11 = self.get(j0 + 1, k0 + 1);
        Some(
            v00 * ((1.0 - tx) * (1.0 - ty))
                + v10 * (tx * (1.0 - ty))
                + v01 * ((1.0 - tx) * ty)
                + v11 * (tx * ty),
        )
    }

    /// Integral of `g(field)` over a disk using a sub-cell midpoint rule on the
    /// bilinear interpolant. The disk is resolved by at least 32 points per
    /// diameter and two per grid cell, so the rule is meaningful for disks far
    /// smaller than a cell.
    pub fn disk_integral<G>(&self, center: Complex64, radius: f64, g: G) -> Result<f64>
    where
        G: Fn(Complex64) -> f64,
    {
        self.disk_union_integral(&[(center, radius)], g)
    }

    /// Integral of `g(field)` over a union of disks; points covered by several
    /// disks are counted once.
    pub fn disk_union_integral<G>(&self, disks: &[(Complex64, f64)], g: G) -> Result<f64>
    where
        G: Fn(Complex64) -> f64,
    {
        let h = self.spec.spacing();
        let mut total = 0.0;
        for (idx, &(c, r)) in disks.iter().enumerate() {
            let m = 32usize.max((4.0 * r / h).ceil() as usize);
            let step = 2.0 * r / m as f64;
            let neighbors: Vec<(Complex64, f64)> = disks
                .iter()
                .enumerate()
                .filter(|&(o, &(c2, r2))| o != idx && (c - c2).norm() < r + r2)
                .map(|(_, &d)| d)
                .collect();
            let mut acc = 0.0;
            for a in 0..m {
                let x = c.re - r + (a as f64 + 0.5) * step;
                for b in 0..m {
                    let y = c.im - r + (b as f64 + 0.5) * step;
                    let z = Complex64::new(x, y);
                    if (z - c).norm() >= r {
                        continue;
                    }
                    let multiplicity =
                        1 + neighbors.iter().filter(|&&(c2, r2)| (z - c2).norm() < r2).count();
                    let v = self.interpolate(z).ok_or(Error::DiskLeavesGrid { index: idx })?;
                    acc += g(v) / multiplicity as f64;
                }
            }
            total += acc * step * step;
        }
        Ok(total)
    }

    /// Wirtinger derivatives `(∂f, ∂̄f)` with `∂ = (∂x - i∂y)/2`, `∂̄ = (∂x + i∂y)/2`.
    pub fn wirtinger(&self, method: DerivativeMethod) -> (Self, Self) {
        match method {
            DerivativeMethod::Spectral => self.wirtinger_spectral(),
            DerivativeMethod::CentralDifference => self.wirtinger_central(),
        }
    }

    fn wirtinger_spectral(&self) -> (Self, Self) {
        let n = self.spec.n();
        let fft = Fft2::new(n);
        let mut hat = self.values.clone();
        fft.forward(&mut hat);
        let base = std::f64::consts::PI / self.spec.half_width();
        let mut d = vec![ZERO; n * n];
        let mut dbar = vec![ZERO; n * n];
        for j in 0..n {
            for k in 0..n {
                let idx = j * n + k;
                if j == n / 2 || k == n / 2 {
                    continue;
                }
                let kx = base * signed_frequency(j, n) as f64;
                let ky = base * signed_frequency(k, n) as f64;
                let v = hat[idx];
                // ∂x ↔ i kx, ∂y ↔ i ky
                d[idx] = v * Complex64::new(0.5 * ky, 0.5 * kx);
                dbar[idx] = v * Complex64::new(-0.5 * ky, 0.5 * kx);
            }
        }
        fft.inverse(&mut d);
        fft.inverse(&mut dbar);
        (Self::from_raw(self.spec, d), Self::from_raw(self.spec, dbar))
    }

    fn wirtinger_central(&self) -> (Self, Self) {
        let n = self.spec.n();
        let h = self.spec.spacing();
        let f = &self.values;
        let at = |j: usize, k: usize| f[j * n + k];
        let diff = |v: [Complex64; 3], pos: usize| -> Complex64 {
            match pos {
                0 => (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h),
                2 => (3.0 * v[2] - 4.0 * v[1] + v[0]) / (2.0 * h),
                _ => (v[2] - v[0]) / (2.0 * h),
            }
        };
        let partials: Vec<(Complex64, Complex64)> = (0..n * n)
            .into_par_iter()
            .map(|idx| {
                let (j, k) = (idx / n, idx % n);
                let dx = if j == 0 {
                    diff([at(0, k), at(1, k), at(2, k)], 0)
                } else if j == n - 1 {
                    diff([at(n - 3, k), at(n - 2, k), at(n - 1, k)], 2)
                } else {
                    diff([at(j - 1, k), at(j, k), at(j + 1, k)], 1)
                };
                let dy = if k == 0 {
                    diff([at(j, 0), at(j, 1), at(j, 2)], 0)
                } else if k == n - 1 {
                    diff([at(j, n - 3), at(j, n - 2), at(j, n - 1)], 2)
                } else {
                    diff([at(j, k - 1), at(j, k), at(j, k + 1)], 1)
                };
                (dx, dy)
            })
            .collect();
        let i = Complex64::i();
        let d = partials.iter().map(|&(dx, dy)| 0.5 * (dx - i * dy)).collect();
        let dbar = partials.iter().map(|&(dx, dy)| 0.5 * (dx + i * dy)).collect();
        (Self::from_raw(self.spec, d), Self::from_raw(self.spec, dbar))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeMethod {
    /// Fourier differentiation; only for smooth fields decayed near the cell boundary.
    Spectral,
    /// Second-order central differences, one-sided at the grid edge.
    CentralDifference,
}

/// Boolean cell mask on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    spec: GridSpec,
    bits: Vec<bool>,
}

impl Mask {
    pub fn full(spec: GridSpec) -> Self {
        Self { spec, bits: vec![true; spec.len()] }
    }

    pub fn empty(spec: GridSpec) -> Self {
        Self { spec, bits: vec![false; spec.len()] }
    }

    pub fn from_predicate<F>(spec: GridSpec, f: F) -> Self
    where
        F: Fn(Complex64) -> bool + Sync,
    {
        Self {
            spec,
            bits: (0..spec.len()).into_par_iter().map(|i| f(spec.point_at(i))).collect(),
        }
    }

    pub fn from_bits(spec: GridSpec, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != spec.len() {
            return Err(Error::InvalidGrid("mask length does not match grid".into()));
        }
        Ok(Self { spec, bits })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, idx: usize) -> bool {
        self.bits[idx]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn area(&self) -> f64 {
        self.count() as f64 * self.spec.cell_area()
    }

    pub fn and(&self, other: &Mask) -> Mask {
        Mask {
            spec: self.spec,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && b).collect(),
        }
    }

    pub fn or(&self, other: &Mask) -> Mask {
        Mask {
            spec: self.spec,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| a || b).collect(),
        }
    }

    pub fn and_not(&self, other: &Mask) -> Mask {
        Mask {
            spec: self.spec,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && !b).collect(),
        }
    }

    pub fn not(&self) -> Mask {
        Mask { spec: self.spec, bits: self.bits.iter().map(|&b| !b).collect() }
    }
}

/// Geometric region, realized on a grid as a [`Mask`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Region {
    Whole,
    Disk { center: (f64, f64), radius: f64 },
    Annulus { center: (f64, f64), inner: f64, outer: f64 },
    Union(Vec<Region>),
}

impl Region {
    pub fn disk(center: Complex64, radius: f64) -> Self {
        Region::Disk { center: (center.re, center.im), radius }
    }

    pub fn centered_disk(radius: f64) -> Self {
        Region::Disk { center: (0.0, 0.0), radius }
    }

    pub fn annulus(center: Complex64, inner: f64, outer: f64) -> Self {
        Region::Annulus { center: (center.re, center.im), inner, outer }
    }

    pub fn contains(&self, z: Complex64) -> bool {
        match self {
            Region::Whole => true,
            Region::Disk { center, radius } => {
                (z - Complex64::new(center.0, center.1)).norm() < *radius
            }
            Region::Annulus { center, inner, outer } => {
                let r = (z - Complex64::new(center.0, center.1)).norm();
                r >= *inner && r < *outer
            }
            Region::Union(parts) => parts.iter().any(|p| p.contains(z)),
        }
    }

    pub fn mask(&self, spec: &GridSpec) -> Mask {
        Mask::from_predicate(*spec, |z| self.contains(z))
    }

    /// Radius of the smallest centered disk containing the region (infinite for `Whole`).
    pub fn outer_radius(&self) -> f64 {
        match self {
            Region::Whole => f64::INFINITY,
            Region::Disk { center, radius } => Complex64::new(center.0, center.1).norm() + radius,
            Region::Annulus { center, outer, .. } => Complex64::new(center.0, center.1).norm() + outer,
            Region::Union(parts) => parts.iter().map(Region::outer_radius).fold(0.0, f64::max),
        }
    }
}

/// Cells within `band` of the circle `|z - center| = radius`.
pub fn circle_band(spec: &GridSpec, center: Complex64, radius: f64, band: f64) -> Mask {
    Mask::from_predicate(*spec, |z| ((z - center).norm() - radius).abs() < band)
}
