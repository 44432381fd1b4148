//! Acceptance criteria; one PASS/FAIL line each, non-zero exit if any fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qclab::analysis::{
    area_distortion_integral, default_window, geometric_radii, holder_exponent, integrability_scan, lemma1_suite,
};
use qclab::beltrami::{jacobian, principal_solution, JacobianMethod, PrincipalMap};
use qclab::geometry::{
    cantor_cover, constant_disk, cover_sum, critical_index, radial_stretch, truncate_coefficient, CantorSet, DiskCover,
};
use qclab::removability::{
    dbar_pairing, exponent_identity, removability_sweep, square_indicator, Generator, SweepConfig, TestFunction,
};
use qclab::transforms::{beurling_direct, TransformPlan};
use qclab::{Complex64, ComplexField, GridSpec, Mask, Region};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn grid(n: usize, l: f64) -> GridSpec {
    GridSpec::new(n, l).unwrap()
}

fn rel_l2(a: &ComplexField, b: &ComplexField, mask: Option<&Mask>) -> f64 {
    a.sub(b).unwrap().lp_norm(2.0, mask).unwrap() / b.lp_norm(2.0, mask).unwrap()
}

fn bump(z: Complex64, r: f64) -> f64 {
    let t = z.norm_sqr() / (r * r);
    if t < 1.0 {
        (1.0 - t).powi(4)
    } else {
        0.0
    }
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn beurling_isometry() -> Outcome {
    let spec = grid(256, 4.0);
    let plan = TransformPlan::new(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let mut vals: Vec<Complex64> =
            (0..spec.len()).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        // the multiplier vanishes at zero frequency, so isometry holds on mean-zero fields
        let mean = vals.iter().sum::<Complex64>() / vals.len() as f64;
        vals.iter_mut().for_each(|v| *v -= mean);
        let f = ComplexField::new(spec, vals).unwrap();
        let b = plan.beurling(&f).unwrap();
        let ratio = b.lp_norm(2.0, None).unwrap() / f.lp_norm(2.0, None).unwrap();
        worst = worst.max((ratio - 1.0).abs());
    }
    let t = start.elapsed();
    outcome(worst <= 1e-12 && t < Duration::from_secs(5), format!("max |ratio-1| = {worst:.2e} (tol 1e-12), {t:.2?} (< 5 s)"))
}

fn oracle_errors(n: usize) -> (Vec<f64>, Vec<f64>) {
    let spec = grid(n, 2.0);
    let plan = TransformPlan::new(spec);
    // the periodic images of the FFT route only matter far from the support
    let zone = Region::centered_disk(0.5 * spec.half_width()).mask(&spec);
    let densities: [Box<dyn Fn(Complex64) -> Complex64 + Sync>; 3] = [
        Box::new(|z| Complex64::new(bump(z, 1.0), 0.0)),
        Box::new(|z| (z - Complex64::new(0.1, -0.2)) * bump(z, 0.9)),
        Box::new(|z| Complex64::from_polar(bump(z - Complex64::new(0.2, 0.1), 0.8), 3.0 * z.re)),
    ];
    let (mut inner, mut whole) = (Vec::new(), Vec::new());
    for g in &densities {
        let f = ComplexField::sample(spec, g).unwrap();
        let fast = plan.beurling(&f).unwrap();
        let slow = beurling_direct(&f).unwrap();
        inner.push(rel_l2(&fast, &slow, Some(&zone)));
        whole.push(rel_l2(&fast, &slow, None));
    }
    (inner, whole)
}

fn oracle_agreement() -> Outcome {
    let start = Instant::now();
    let (fine, whole) = oracle_errors(64);
    let t = start.elapsed();
    let (coarse, _) = oracle_errors(32);
    let worst = fine.iter().cloned().fold(0.0, f64::max);
    let refines = fine.iter().zip(&coarse).all(|(f, c)| f < c);
    let pct = |v: &[f64]| v.iter().map(|e| format!("{:.2}%", 100.0 * e)).collect::<Vec<_>>().join(", ");
    outcome(
        worst <= 0.05 && refines && t < Duration::from_secs(30),
        format!(
            "relative L2 errors on |z| <= L/2: {} (tol 5%), at 32^2: {}; whole grid: {}; {t:.2?} (< 30 s)",
            pct(&fine),
            pct(&coarse),
            pct(&whole)
        ),
    )
}

fn closed_form_errors(n: usize) -> (f64, f64, Duration) {
    let spec = grid(n, 4.0);
    let plan = TransformPlan::new(spec);
    let h = spec.spacing();
    let k = 0.3;
    let mut slowest = Duration::ZERO;
    let start = Instant::now();
    let disk = principal_solution(&plan, &constant_disk(spec, k).unwrap(), 1e-8).unwrap();
    slowest = slowest.max(start.elapsed());
    let start = Instant::now();
    let radial = principal_solution(&plan, &radial_stretch(spec, 2.0).unwrap(), 1e-8).unwrap();
    slowest = slowest.max(start.elapsed());
    let (mut e_disk, mut e_radial): (f64, f64) = (0.0, 0.0);
    for idx in 0..spec.len() {
        let z = spec.point_at(idx);
        let r = z.norm();
        if (r - 1.0).abs() < 2.0 * h {
            continue;
        }
        let exact = if r < 1.0 { z + k * z.conj() } else { z + k / z };
        e_disk = e_disk.max((disk.phi.values()[idx] - exact).norm());
        if r < 2.0 * h {
            continue;
        }
        let exact = if r < 1.0 { z / r.sqrt() } else { z };
        e_radial = e_radial.max((radial.phi.values()[idx] - exact).norm());
    }
    (e_disk, e_radial, slowest)
}

fn closed_form_maps() -> Outcome {
    let (d256, r256, _) = closed_form_errors(256);
    let (d512, r512, t) = closed_form_errors(512);
    let pass = d512 <= 5e-2 && r512 <= 5e-2 && d512 < d256 && r512 < r256 && t < Duration::from_secs(120);
    outcome(
        pass,
        format!(
            "sup error at 512: disk {d512:.2e}, radial {r512:.2e} (tol 5e-2); at 256: {d256:.2e}, {r256:.2e}; slowest solve {t:.2?} (< 2 min)"
        ),
    )
}

fn radial_map(n: usize) -> PrincipalMap {
    let spec = grid(n, 4.0);
    principal_solution(&TransformPlan::new(spec), &radial_stretch(spec, 2.0).unwrap(), 1e-8).unwrap()
}

fn radial_holder_exponent() -> Outcome {
    let map = radial_map(512);
    let h = map.spec().spacing();
    let fit = holder_exponent(&map.phi, &Region::centered_disk(0.1), &geometric_radii(2.0 * h, 1.0, 8)).unwrap();
    outcome((fit.exponent - 0.5).abs() <= 0.05, format!("fitted exponent {:.4} (target 0.50 +/- 0.05)", fit.exponent))
}

fn integrability_threshold() -> Outcome {
    let coarse = jacobian(&radial_map(256), JacobianMethod::Spectral).unwrap();
    let fine = jacobian(&radial_map(512), JacobianMethod::Spectral).unwrap();
    let scan = integrability_scan(
        &[&coarse, &fine],
        &Region::centered_disk(1.0),
        &[1.5, 1.8, 2.0, 2.2],
        true,
        Some(ZERO),
    )
    .unwrap();
    let p = scan.p_star.unwrap_or(f64::NAN);
    outcome((p - 2.0).abs() <= 0.1, format!("p* = {p:.4} (target 2.0 +/- 0.1) from 256/512"))
}

fn area_distortion() -> Outcome {
    let spec = grid(256, 4.0);
    let plan = TransformPlan::new(spec);
    let set = CantorSet::new(0.25, 3).unwrap();
    let mut values = Vec::new();
    for mu in [radial_stretch(spec, 2.0).unwrap(), constant_disk(spec, 1.0 / 3.0).unwrap()] {
        for g in 1..=3 {
            let cover = cantor_cover(&set, g).unwrap();
            let map = principal_solution(&plan, &truncate_coefficient(&mu, &cover).unwrap(), 1e-8).unwrap();
            let jac = jacobian(&map, JacobianMethod::Spectral).unwrap();
            values.push(area_distortion_integral(&jac, &cover, 2.0).unwrap());
        }
    }
    let worst = values.iter().cloned().fold(0.0, f64::max);
    outcome(
        worst <= 1.1,
        format!(
            "max integral {worst:.4} (<= 1.1) over radial and disk K=2, g=1..3: [{}]",
            values.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn truncation_suite() -> Outcome {
    let spec = grid(256, 4.0);
    let plan = TransformPlan::new(spec);
    let set = CantorSet::new(0.25, 4).unwrap();
    let covers: Vec<DiskCover> = (1..=4).map(|g| cantor_cover(&set, g).unwrap()).collect();
    let cells: Vec<usize> = covers.iter().map(|c| c.mask(&spec, 2.0).count()).collect();
    let start = Instant::now();
    let report = lemma1_suite(&plan, &radial_stretch(spec, 2.0).unwrap(), &covers, &[1.5], &default_window(), 1e-8).unwrap();
    let t = start.elapsed();
    let sup: Vec<f64> = report.rows.iter().map(|r| r.sup_phi).collect();
    let inv: Vec<f64> = report.rows.iter().map(|r| r.sup_phi_inv).collect();
    let jac: Vec<f64> = report.rows.iter().map(|r| r.jacobian[0]).collect();
    let final_share = sup[3] / sup[0];
    let pass = strictly_decreasing(&sup)
        && strictly_decreasing(&inv)
        && strictly_decreasing(&jac)
        && final_share <= 0.2
        && t < Duration::from_secs(600);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(" ");
    outcome(
        pass,
        format!(
            "sup|phi_n-phi| [{}], sup|inv| [{}], L1.5 J [{}]; final/first {:.1}% (<= 20%); truncated cells {cells:?}; {t:.2?} (< 10 min)",
            fmt(&sup),
            fmt(&inv),
            fmt(&jac),
            100.0 * final_share
        ),
    )
}

fn exponent_bookkeeping() -> Outcome {
    let mut failures = 0;
    for i in 0..10 {
        for j in 0..10 {
            let alpha = 0.05 + 0.95 * i as f64 / 9.0;
            let k = 1.0 + 19.0 * j as f64 / 9.0;
            if exponent_identity(alpha, k).is_err() {
                failures += 1;
            }
        }
    }
    let mut anchors = true;
    for i in 0..=20 {
        let alpha = i as f64 / 20.0;
        anchors &= critical_index(alpha.max(1e-3), 1.0).unwrap() == 1.0 + alpha.max(1e-3);
        let k = 1.0 + i as f64 * 0.7;
        anchors &= critical_index(1.0, k).unwrap() == 2.0;
    }
    outcome(
        failures == 0 && anchors,
        format!("{failures}/100 identity failures (tol 1e-12); anchors d(a,1)=1+a, d(1,K)=2 exact: {anchors}"),
    )
}

fn covering_dichotomy() -> Outcome {
    let start = Instant::now();
    let pairs = [
        (0.25, 0.8),
        (0.25, 1.2),
        (0.25, 1.9),
        (0.1, 0.5),
        (0.1, 0.7),
        (0.2, 0.7),
        (0.2, 1.0),
        (0.35, 1.2),
        (0.35, 1.5),
        (0.45, 1.6),
        (0.45, 1.8),
        (0.5, 1.9),
    ];
    let mut ok = true;
    let (mut decaying, mut growing) = (0, 0);
    let mut worst: f64 = 0.0;
    for (lambda, s) in pairs {
        let set = CantorSet::with_embedding(lambda, 4, ZERO, 1.0).unwrap();
        let dim = 4f64.ln() / (1.0 / lambda).ln();
        let predicted = 4.0 * lambda.powf(s);
        for g in 0..4 {
            let a = cover_sum(&cantor_cover(&set, g).unwrap(), s, 2).unwrap();
            let b = cover_sum(&cantor_cover(&set, g + 1).unwrap(), s, 2).unwrap();
            worst = worst.max((b / a - predicted).abs() / predicted);
            ok &= (b < a) == (s > dim);
        }
        if s > dim {
            decaying += 1;
        } else {
            growing += 1;
        }
    }
    let t = start.elapsed();
    outcome(
        ok && worst <= 1e-12 && decaying > 0 && growing > 0 && t < Duration::from_secs(1),
        format!("12 pairs ({decaying} decaying, {growing} growing), max ratio error {worst:.1e} vs 4*lambda^s; {t:.2?} (< 1 s)"),
    )
}

fn pairing_controls() -> Outcome {
    let spec = grid(512, 4.0);
    let plan = TransformPlan::new(spec);
    let test = TestFunction::new(Complex64::new(0.1, 0.0), 1.0).unwrap();
    let holo = dbar_pairing(&ComplexField::sample(spec, |z| z * z).unwrap(), None, &test).unwrap().relative();
    let conj = dbar_pairing(&ComplexField::sample(spec, |z| z.conj()).unwrap(), None, &test).unwrap();
    let mass_err = (conj.value - test.mass()).norm() / test.mass();
    let square = plan.cauchy(&square_indicator(spec, 1.0).unwrap()).unwrap();
    let exact = test.integral_over_rect(-0.5, 0.5, -0.5, 0.5);
    let cauchy_err = (dbar_pairing(&square, None, &test).unwrap().value - exact).norm() / exact;

    let config = SweepConfig {
        generator: Generator::Radial,
        alpha: vec![0.5],
        distortion: vec![2.0],
        lambda: vec![0.25],
        ..SweepConfig::default()
    };
    let report = removability_sweep(&config).unwrap();
    let gmax = *config.generations.iter().max().unwrap();
    let sweep = report
        .pairings
        .iter()
        .filter(|p| p.generation == gmax)
        .map(|p| p.result.relative())
        .fold(f64::NAN, f64::max);
    let pass = holo <= 1e-5 && mass_err <= 1e-4 && cauchy_err <= 0.01 && report.failures.is_empty() && sweep <= 1e-3;
    outcome(
        pass,
        format!(
            "holomorphic {holo:.1e} (<= 1e-5), conjugate mass {mass_err:.1e} (<= 1e-4), Cauchy square {:.3}% (<= 1%), sweep control at g={gmax} {sweep:.1e} (<= 1e-3)",
            100.0 * cauchy_err
        ),
    )
}

fn bound_decay() -> Outcome {
    let (alpha, k, lambda) = (0.9, 1.5, 0.25);
    let config = SweepConfig { alpha: vec![alpha], distortion: vec![k], lambda: vec![lambda], ..SweepConfig::default() };
    let start = Instant::now();
    let report = removability_sweep(&config).unwrap();
    let t = start.elapsed();
    if !report.failures.is_empty() || report.ledgers.len() != 1 {
        return outcome(false, format!("sweep failures: {:?}", report.failures));
    }
    let ledger = &report.ledgers[0].ledger;
    let pred_i = 4.0 * lambda.powf(alpha + 2.0);
    let pred_ii = 4.0 * lambda.powf(alpha + 1.0);
    let ratios = ledger.ratios();
    let within = ratios
        .iter()
        .all(|&(ri, rii)| (ri / pred_i - 1.0).abs() <= 0.3 && (rii / pred_ii - 1.0).abs() <= 0.3);

    let dense = CantorSet::ratio_for_dimension(1.95);
    let d = critical_index(alpha, k).unwrap();
    let config = SweepConfig { lambda: vec![dense], ..config };
    let report = removability_sweep(&config).unwrap();
    let grows = report.failures.is_empty()
        && report.ledgers[0].ledger.rows.windows(2).all(|w| w[1].term_ii.diam_factor > w[0].term_ii.diam_factor);
    let pass = ledger.bounds_decreasing() && within && grows && t < Duration::from_secs(900);
    outcome(
        pass,
        format!(
            "ratios I/II per generation [{}] vs predicted {pred_i:.4}/{pred_ii:.4} (+/-30%); dim 1.95 > d = {d:.3}: II diam factor grows = {grows}; sweep {t:.2?} (< 15 min)",
            ratios.iter().map(|(a, b)| format!("{a:.4}/{b:.4}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("Beurling isometry on 256^2", beurling_isometry),
        ("FFT vs direct Beurling on 64^2", oracle_agreement),
        ("closed-form principal maps", closed_form_maps),
        ("Hoelder exponent 1/K for the radial stretch", radial_holder_exponent),
        ("Jacobian integrability threshold", integrability_threshold),
        ("area distortion normalization", area_distortion),
        ("truncation convergence suite", truncation_suite),
        ("exponent bookkeeping", exponent_bookkeeping),
        ("covering dichotomy", covering_dichotomy),
        ("pairing controls", pairing_controls),
        ("bound decay over generations", bound_decay),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!("{} {:>2} {name}: {}", if result.pass { "PASS" } else { "FAIL" }, i + 1, result.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
