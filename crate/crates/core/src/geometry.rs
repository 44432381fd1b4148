//! Coefficient generators, four-corner Cantor sets, disk covers and the
//! partitions of unity subordinate to them.

use std::io::{BufRead, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beltrami::{k_from_distortion, BeltramiCoefficient};
use crate::error::{Error, Result};
use crate::grid::{ComplexField, GridSpec, Mask};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub center: Complex64,
    pub radius: f64,
}

impl Disk {
    pub fn new(center: Complex64, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() || !center.re.is_finite() || !center.im.is_finite() {
            return Err(Error::InvalidParameter(format!("disk radius must be positive (got {radius})")));
        }
        Ok(Self { center, radius })
    }

    pub fn dilate(&self, factor: f64) -> Disk {
        Disk { center: self.center, radius: self.radius * factor }
    }

    pub fn diameter(&self) -> f64 {
        2.0 * self.radius
    }

    pub fn contains(&self, z: Complex64) -> bool {
        (z - self.center).norm() < self.radius
    }
}

/// Pairwise disjoint disks `D_j`; the proof works with `D_j`, `2D_j` and `4D_j`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiskCover {
    disks: Vec<Disk>,
}

impl DiskCover {
    pub fn new(disks: Vec<Disk>) -> Result<Self> {
        for (i, a) in disks.iter().enumerate() {
            for (j, b) in disks.iter().enumerate().skip(i + 1) {
                if (a.center - b.center).norm() < a.radius + b.radius {
                    return Err(Error::NotDisjoint(i, j));
                }
            }
        }
        Ok(Self { disks })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn disks(&self) -> &[Disk] {
        &self.disks
    }

    pub fn len(&self) -> usize {
        self.disks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.disks.is_empty()
    }

    pub fn dilated(&self, factor: f64) -> Vec<Disk> {
        self.disks.iter().map(|d| d.dilate(factor)).collect()
    }

    /// `(center, radius)` pairs of the dilated disks, the form used by disk quadrature.
    pub fn dilated_pairs(&self, factor: f64) -> Vec<(Complex64, f64)> {
        self.disks.iter().map(|d| (d.center, d.radius * factor)).collect()
    }

    /// Whether `z` lies in some dilated disk.
    pub fn covers(&self, z: Complex64, factor: f64) -> bool {
        self.disks.iter().any(|d| d.dilate(factor).contains(z))
    }

    /// Cell centers inside the union of the dilated disks.
    pub fn mask(&self, spec: &GridSpec, factor: f64) -> Mask {
        let n = spec.n();
        let mut bits = vec![false; spec.len()];
        for d in &self.disks {
            let r = d.radius * factor;
            let (j0, j1) = cell_range(spec, d.center.re, r);
            let (k0, k1) = cell_range(spec, d.center.im, r);
            for j in j0..j1 {
                for k in k0..k1 {
                    if (spec.point(j, k) - d.center).norm() < r {
                        bits[j * n + k] = true;
                    }
                }
            }
        }
        Mask::from_bits(*spec, bits).expect("mask matches grid")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "j,center_re,center_im,radius")?;
        for (j, d) in self.disks.iter().enumerate() {
            writeln!(w, "{j},{:e},{:e},{:e}", d.center.re, d.center.im, d.radius)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut disks = Vec::new();
        for (line_no, line) in r.lines().enumerate() {
            let line = line?;
            if line_no == 0 || line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 4 {
                return Err(Error::Format(format!("line {}: expected 4 columns", line_no + 1)));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Format(format!("line {}: {e}", line_no + 1)))
            };
            disks.push(Disk::new(Complex64::new(num(cols[1])?, num(cols[2])?), num(cols[3])?)?);
        }
        Self::new(disks)
    }
}

/// Half-open range of cell indices whose centers can lie within `r` of `c` along one axis.
fn cell_range(spec: &GridSpec, c: f64, r: f64) -> (usize, usize) {
    let h = spec.spacing();
    let l = spec.half_width();
    let lo = ((c - r + l) / h - 0.5).floor().max(0.0) as usize;
    let hi = (((c + r + l) / h - 0.5).ceil() as usize + 1).min(spec.n());
    (lo.min(spec.n()), hi)
}

/// The four-corner Cantor set: each square keeps its four corner subsquares of
/// side `λ·side`. Generation 0 is a square of the given side centered at `center`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CantorSet {
    pub ratio: f64,
    pub generations: u32,
    pub center: (f64, f64),
    pub side: f64,
}

pub const DEFAULT_CANTOR_SIDE: f64 = 1.3;

impl CantorSet {
    pub fn new(ratio: f64, generations: u32) -> Result<Self> {
        Self::with_embedding(ratio, generations, Complex64::new(0.0, 0.0), DEFAULT_CANTOR_SIDE)
    }

    pub fn with_embedding(ratio: f64, generations: u32, center: Complex64, side: f64) -> Result<Self> {
        if !(ratio > 0.0 && ratio <= 0.5) {
            return Err(Error::InvalidParameter(format!("Cantor ratio must lie in (0, 1/2] (got {ratio})")));
        }
        if !(side > 0.0) || center.norm() + side * std::f64::consts::FRAC_1_SQRT_2 >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "Cantor square of side {side} at {center} does not fit in the unit disk"
            )));
        }
        Ok(Self { ratio, generations, center: (center.re, center.im), side })
    }

    /// The ratio whose set has the given dimension: `λ = 4^{-1/dim}`.
    pub fn ratio_for_dimension(dim: f64) -> f64 {
        4f64.powf(-1.0 / dim)
    }

    /// `log 4 / log(1/λ)`.
    pub fn dimension(&self) -> f64 {
        4f64.ln() / (1.0 / self.ratio).ln()
    }

    pub fn side_at(&self, generation: u32) -> f64 {
        self.side * self.ratio.powi(generation as i32)
    }

    /// Centers of the `4^g` squares of generation `g`.
    pub fn square_centers(&self, generation: u32) -> Vec<Complex64> {
        let mut centers = vec![Complex64::new(self.center.0, self.center.1)];
        let mut side = self.side;
        for _ in 0..generation {
            let offset = 0.5 * side * (1.0 - self.ratio);
            let mut next = Vec::with_capacity(centers.len() * 4);
            for c in &centers {
                for (sx, sy) in [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
                    next.push(c + Complex64::new(sx * offset, sy * offset));
                }
            }
            centers = next;
            side *= self.ratio;
        }
        centers
    }

    /// Membership in the closed generation-`g` union of squares.
    pub fn contains(&self, z: Complex64, generation: u32) -> bool {
        let mut c = Complex64::new(self.center.0, self.center.1);
        let mut side = self.side;
        for _ in 0..generation {
            let half = 0.5 * side;
            let d = z - c;
            if d.re.abs() > half || d.im.abs() > half {
                return false;
            }
            let sub = side * self.ratio;
            let offset = 0.5 * (side - sub);
            // the nearest corner square is the only candidate
            c += Complex64::new(offset * d.re.signum(), offset * d.im.signum());
            side = sub;
        }
        let d = z - c;
        d.re.abs() <= 0.5 * side && d.im.abs() <= 0.5 * side
    }
}

/// One disk per generation-`g` square, centered at the square with radius
/// `side·√2/4`, so that the 2-dilate circumscribes the square.
pub fn cantor_cover(set: &CantorSet, generation: u32) -> Result<DiskCover> {
    if generation > set.generations {
        return Err(Error::InvalidParameter(format!(
            "generation {generation} exceeds the set's {} generations",
            set.generations
        )));
    }
    let r = set.side_at(generation) * std::f64::consts::SQRT_2 / 4.0;
    let disks = set
        .square_centers(generation)
        .into_iter()
        .map(|c| Disk::new(c, r))
        .collect::<Result<Vec<_>>>()?;
    DiskCover::new(disks)
}

/// `Σ_j diam(dilation · D_j)^s`.
pub fn cover_sum(cover: &DiskCover, s: f64, dilation: u32) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::InvalidParameter(format!("exponent must be positive (got {s})")));
    }
    if !matches!(dilation, 1 | 2 | 4) {
        return Err(Error::InvalidParameter(format!("dilation must be 1, 2 or 4 (got {dilation})")));
    }
    Ok(cover
        .disks()
        .iter()
        .map(|d| (d.diameter() * dilation as f64).powf(s))
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModulusOfContinuity {
    /// `ω(r) = C r^α`.
    Power { c: f64, alpha: f64 },
    /// Piecewise linear through `(r_i, ω_i)`, starting at `(0, 0)`.
    Table { r: Vec<f64>, omega: Vec<f64> },
}

impl ModulusOfContinuity {
    pub fn power(c: f64, alpha: f64) -> Result<Self> {
        if !(c >= 0.0) || !(alpha >= 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!("power modulus needs C >= 0, alpha in [0,1] (got {c}, {alpha})")));
        }
        Ok(Self::Power { c, alpha })
    }

    pub fn table(r: Vec<f64>, omega: Vec<f64>) -> Result<Self> {
        if r.len() != omega.len() || r.is_empty() {
            return Err(Error::InvalidParameter("modulus table needs matching non-empty columns".into()));
        }
        let ok_r = r.windows(2).all(|w| w[0] < w[1]) && r[0] > 0.0;
        let ok_w = omega.windows(2).all(|w| w[0] <= w[1]) && omega[0] >= 0.0;
        if !ok_r || !ok_w || omega.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "modulus table must be increasing in r and non-decreasing in omega".into(),
            ));
        }
        Ok(Self::Table { r, omega })
    }

    /// A constant modulus (continuity without a rate), as a table.
    pub fn constant(value: f64) -> Result<Self> {
        Self::table(vec![1e-300, 1.0], vec![value, value])
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            Self::Power { c, alpha } => c * t.powf(*alpha),
            Self::Table { r, omega } => {
                if t >= *r.last().unwrap() {
                    return *omega.last().unwrap();
                }
                let i = r.partition_point(|&x| x <= t);
                let (r0, w0) = if i == 0 { (0.0, 0.0) } else { (r[i - 1], omega[i - 1]) };
                w0 + (omega[i] - w0) * (t - r0) / (r[i] - r0)
            }
        }
    }
}

fn check_alpha_k(alpha: f64, distortion: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1] (got {alpha})")));
    }
    if !(distortion >= 1.0) || !distortion.is_finite() {
        return Err(Error::InvalidParameter(format!("K must be >= 1 (got {distortion})")));
    }
    Ok(())
}

/// `d = 2(1 + αK)/(K + 1)`.
pub fn critical_index(alpha: f64, distortion: f64) -> Result<f64> {
    check_alpha_k(alpha, distortion)?;
    Ok(2.0 * (1.0 + alpha * distortion) / (distortion + 1.0))
}

/// Earlier removability indices, for comparison with [`critical_index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceIndices {
    pub alpha: f64,
    pub distortion: f64,
    pub dimension: u32,
    pub critical: f64,
    /// `(1/K)(1 + α/K)`.
    pub koskela_martio: f64,
    /// `min(1, nα)`.
    pub koskela_martio_lambda: f64,
    /// `α(n - 1)`.
    pub kilpelainen_zhong: f64,
}

pub fn reference_indices(alpha: f64, distortion: f64, dimension: u32) -> Result<ReferenceIndices> {
    let critical = critical_index(alpha, distortion)?;
    let n = dimension as f64;
    Ok(ReferenceIndices {
        alpha,
        distortion,
        dimension,
        critical,
        koskela_martio: (1.0 + alpha / distortion) / distortion,
        koskela_martio_lambda: (n * alpha).min(1.0),
        kilpelainen_zhong: alpha * (n - 1.0),
    })
}

/// `h(t) = t^{2/(K+1)} ω(2t)^{2K/(K+1)}`.
pub fn hausdorff_gauge(t: f64, omega: &ModulusOfContinuity, distortion: f64) -> Result<f64> {
    if !(0.0..0.5).contains(&t) {
        return Err(Error::InvalidParameter(format!("gauge argument must lie in [0, 1/2) (got {t})")));
    }
    if !(distortion >= 1.0) {
        return Err(Error::InvalidParameter(format!("K must be >= 1 (got {distortion})")));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let k1 = distortion + 1.0;
    Ok(t.powf(2.0 / k1) * omega.eval(2.0 * t).powf(2.0 * distortion / k1))
}

/// `μ_ε = μ χ_{C \ Ω_ε}` with `Ω_ε` the union of the 2-dilates.
pub fn truncate_coefficient(mu: &BeltramiCoefficient, cover: &DiskCover) -> Result<BeltramiCoefficient> {
    let omega = cover.mask(mu.spec(), 2.0);
    let values = mu
        .field()
        .values()
        .iter()
        .enumerate()
        .map(|(idx, &v)| if omega.get(idx) { ZERO } else { v })
        .collect();
    BeltramiCoefficient::new(ComplexField::new(*mu.spec(), values)?, mu.k())
}

/// Quintic smoothstep, `C²` with slopes vanishing at both ends.
fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
}

fn smoothstep_slope(t: f64) -> f64 {
    if !(0.0..=1.0).contains(&t) {
        return 0.0;
    }
    30.0 * t * t * (1.0 - t) * (1.0 - t)
}

/// Radial cutoff equal to 1 on `2D`, 0 outside `4D`.
fn cutoff(d: &Disk, z: Complex64) -> f64 {
    let r = (z - d.center).norm();
    1.0 - smoothstep((r - 2.0 * d.radius) / (2.0 * d.radius))
}

fn cutoff_gradient(d: &Disk, z: Complex64) -> Complex64 {
    let v = z - d.center;
    let r = v.norm();
    if r == 0.0 {
        return ZERO;
    }
    let slope = -smoothstep_slope((r - 2.0 * d.radius) / (2.0 * d.radius)) / (2.0 * d.radius);
    v / r * slope
}

/// Samples of one `ψ_j` on the block of cells covering `4D_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPatch {
    pub j0: usize,
    pub k0: usize,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl PartitionPatch {
    pub fn get(&self, j: usize, k: usize) -> f64 {
        if j < self.j0 || k < self.k0 || j >= self.j0 + self.rows || k >= self.k0 + self.cols {
            return 0.0;
        }
        self.values[(j - self.j0) * self.cols + (k - self.k0)]
    }
}

/// `ψ_j = η_j / max(Σ η, 1)` with `η_j` the radial cutoff of disk `j`.
#[derive(Debug, Clone)]
pub struct PartitionOfUnity {
    spec: GridSpec,
    cover: DiskCover,
    neighbours: Vec<Vec<usize>>,
    pub patches: Vec<PartitionPatch>,
    /// `sup|Dψ_j| · diam(2D_j)` for each disk.
    pub gradient_constants: Vec<f64>,
    /// Largest of `gradient_constants`.
    pub c_pu: f64,
}

impl PartitionOfUnity {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn cover(&self) -> &DiskCover {
        &self.cover
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// `ψ_j` as a dense real field.
    pub fn field(&self, j: usize) -> ComplexField {
        let p = &self.patches[j];
        let n = self.spec.n();
        let mut values = vec![ZERO; n * n];
        for a in 0..p.rows {
            for b in 0..p.cols {
                values[(p.j0 + a) * n + p.k0 + b] = Complex64::new(p.values[a * p.cols + b], 0.0);
            }
        }
        ComplexField::new(self.spec, values).expect("finite partition values")
    }

    /// `Σ_j ψ_j` as a dense real field.
    pub fn sum(&self) -> ComplexField {
        let n = self.spec.n();
        let mut values = vec![ZERO; n * n];
        for p in &self.patches {
            for a in 0..p.rows {
                for b in 0..p.cols {
                    values[(p.j0 + a) * n + p.k0 + b].re += p.values[a * p.cols + b];
                }
            }
        }
        ComplexField::new(self.spec, values).expect("finite partition values")
    }

    /// `ψ_j` at an arbitrary point, from the analytic cutoffs.
    pub fn eval(&self, j: usize, z: Complex64) -> f64 {
        let (value, _) = self.eval_with_gradient(j, z);
        value
    }

    /// `(ψ_j(z), ∇ψ_j(z))` with the gradient packed as `∂x + i ∂y`.
    pub fn eval_with_gradient(&self, j: usize, z: Complex64) -> (f64, Complex64) {
        let disks = self.cover.disks();
        let eta = cutoff(&disks[j], z);
        let grad_eta = cutoff_gradient(&disks[j], z);
        let mut total = eta;
        let mut grad_total = grad_eta;
        for &i in &self.neighbours[j] {
            total += cutoff(&disks[i], z);
            grad_total += cutoff_gradient(&disks[i], z);
        }
        if total <= 1.0 {
            (eta, grad_eta)
        } else {
            (eta / total, (grad_eta * total - grad_total * eta) / (total * total))
        }
    }
}

/// Builds the partition of unity subordinate to the 4-dilates of a cover.
pub fn partition_of_unity(cover: &DiskCover, spec: &GridSpec) -> Result<PartitionOfUnity> {
    let h = spec.spacing();
    let edge = spec.half_width() - 0.5 * h;
    let disks = cover.disks();
    for (index, d) in disks.iter().enumerate() {
        let r = 4.0 * d.radius;
        if d.center.re.abs() + r > edge || d.center.im.abs() + r > edge {
            return Err(Error::DiskLeavesGrid { index });
        }
    }
    let neighbours: Vec<Vec<usize>> = disks
        .iter()
        .enumerate()
        .map(|(j, a)| {
            disks
                .iter()
                .enumerate()
                .filter(|&(i, b)| i != j && (a.center - b.center).norm() < 4.0 * (a.radius + b.radius))
                .map(|(i, _)| i)
                .collect()
        })
        .collect();

    let n = spec.n();
    let mut total = vec![0.0f64; n * n];
    let mut raw = Vec::with_capacity(disks.len());
    for d in disks {
        let (j0, j1) = cell_range(spec, d.center.re, 4.0 * d.radius);
        let (k0, k1) = cell_range(spec, d.center.im, 4.0 * d.radius);
        let (rows, cols) = (j1 - j0, k1 - k0);
        let mut values = vec![0.0; rows * cols];
        for a in 0..rows {
            for b in 0..cols {
                let eta = cutoff(d, spec.point(j0 + a, k0 + b));
                values[a * cols + b] = eta;
                total[(j0 + a) * n + k0 + b] += eta;
            }
        }
        raw.push(PartitionPatch { j0, k0, rows, cols, values });
    }
    for p in &mut raw {
        for a in 0..p.rows {
            for b in 0..p.cols {
                let s = total[(p.j0 + a) * n + p.k0 + b];
                p.values[a * p.cols + b] /= s.max(1.0);
            }
        }
    }

    let mut pu = PartitionOfUnity {
        spec: *spec,
        cover: cover.clone(),
        neighbours,
        patches: raw,
        gradient_constants: Vec::new(),
        c_pu: 0.0,
    };
    // the gradient is measured on a fine mesh over each 4-dilate
    let m = 96;
    let constants: Vec<f64> = (0..disks.len())
        .map(|j| {
            let d = &disks[j];
            let r = 4.0 * d.radius;
            let mut sup: f64 = 0.0;
            for a in 0..=m {
                for b in 0..=m {
                    let z = d.center
                        + Complex64::new(-r + 2.0 * r * a as f64 / m as f64, -r + 2.0 * r * b as f64 / m as f64);
                    let (_, g) = pu.eval_with_gradient(j, z);
                    sup = sup.max(g.norm());
                }
            }
            sup * 4.0 * d.radius
        })
        .collect();
    pu.c_pu = constants.iter().cloned().fold(0.0, f64::max);
    pu.gradient_constants = constants;
    Ok(pu)
}

/// `μ(z) = -((K-1)/(K+1)) (z/z̄) χ_𝔻`, with `μ(0) = 0`.
pub fn radial_stretch(spec: GridSpec, distortion: f64) -> Result<BeltramiCoefficient> {
    if !(distortion >= 1.0) || !distortion.is_finite() {
        return Err(Error::InvalidParameter(format!("K must be >= 1 (got {distortion})")));
    }
    let k = k_from_distortion(distortion);
    let field = ComplexField::sample(spec, |z| {
        let r = z.norm();
        if r >= 1.0 || r == 0.0 {
            ZERO
        } else {
            -k * z / z.conj()
        }
    })?;
    BeltramiCoefficient::new(field, k)
}

/// `μ = k χ_𝔻`.
pub fn constant_disk(spec: GridSpec, k: f64) -> Result<BeltramiCoefficient> {
    if !(0.0..1.0).contains(&k) {
        return Err(Error::DistortionTooLarge(k));
    }
    let field = ComplexField::sample(spec, |z| if z.norm() < 1.0 { Complex64::new(k, 0.0) } else { ZERO })?;
    BeltramiCoefficient::new(field, k)
}

/// `μ = ±k` on a seeded random `cells x cells` pattern over `[-1, 1]²`, cut to `𝔻`.
pub fn checkerboard(spec: GridSpec, k: f64, cells: usize, seed: u64) -> Result<BeltramiCoefficient> {
    if !(0.0..1.0).contains(&k) {
        return Err(Error::DistortionTooLarge(k));
    }
    if cells == 0 {
        return Err(Error::InvalidParameter("checkerboard needs at least one cell".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signs: Vec<f64> = (0..cells * cells)
        .map(|_| if rng.gen::<bool>() { k } else { -k })
        .collect();
    let field = ComplexField::sample(spec, |z| {
        if z.norm() >= 1.0 {
            return ZERO;
        }
        let a = (((z.re + 1.0) / 2.0 * cells as f64) as usize).min(cells - 1);
        let b = (((z.im + 1.0) / 2.0 * cells as f64) as usize).min(cells - 1);
        Complex64::new(signs[a * cells + b], 0.0)
    })?;
    BeltramiCoefficient::new(field, k)
}
