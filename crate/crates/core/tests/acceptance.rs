//! The acceptance gate: one test per criterion, each printing a single
//! pass/fail line with the measured quantities. Criteria cover basis
//! orthonormality, the estimator's algebraic unit-mass identity, the
//! forward-map dualities, MA asymptotics, the dual estimator
//! representation, and scaled-down reproductions of the Monte-Carlo study
//! (normality, variance decay, consistency, and the alpha rule).
//!
//! Criterion 6 documents a known discrepancy: the psi_1 small-x asymptote
//! ratio measures about 6.59 against the stated [0.9, 1.1] band, so its
//! test fails red by design. The psi_2 branch passes. See
//! ACCEPTANCE_STATUS.md at the repo root for the analysis.

use aggmix::estimator::{
    estimate, estimate_via_periodogram, truncation_kn, EstimatorConfig,
};
use aggmix::gegenbauer::GegenbauerBasis;
use aggmix::harness::{
    mise, run_experiment, table1_case, variance_slope, ExperimentSpec,
};
use aggmix::ma_repr::{innovation_variance, tail_check, MACoefficients};
use aggmix::mixture::{appendix_a_psi, farima_spectral, MixtureDensity};
use aggmix::quad::{tanh_sinh, QuadOptions};
use aggmix::simulate::gaussian_synthesis;
use aggmix::special::gamma;
use std::time::Instant;

fn report(criterion: &str, pass: bool, detail: &str, started: Instant) -> bool {
    println!(
        "criterion {criterion}: {} ({detail}, {:.1}s)",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    pass
}

#[test]
fn criterion_01_gegenbauer_orthonormality() {
    let started = Instant::now();
    let mut max_dev: f64 = 0.0;
    for alpha in [0.2, 0.5, 0.6] {
        let basis = GegenbauerBasis::build(alpha, 10).unwrap();
        for j in 0..=10usize {
            for k in j..=10usize {
                let r = tanh_sinh(
                    |p| {
                        basis.evaluate(j, p.x).unwrap()
                            * basis.evaluate(k, p.x).unwrap()
                            * (p.left * p.right).powf(alpha)
                    },
                    -1.0,
                    1.0,
                    QuadOptions::with_tol(1e-12),
                )
                .unwrap();
                let target = if j == k { 1.0 } else { 0.0 };
                max_dev = max_dev.max((r.value - target).abs());
            }
        }
    }
    let pass = report(
        "01 gegenbauer orthonormality",
        max_dev < 1e-8,
        &format!("max |<G_j,G_k> - delta_jk| = {max_dev:.3e} over alpha in {{0.2, 0.5, 0.6}}, j,k <= 10"),
        started,
    );
    assert!(pass, "orthonormality deviation {max_dev:.3e} exceeds 1e-8");
}

#[test]
fn criterion_02_unit_mass_identity() {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for case in 1..=3u8 {
        let (mixture, _, alpha) = table1_case(case).unwrap();
        let config = EstimatorConfig::new(alpha, 0.41);
        let synth = aggmix::simulate::GaussianSynthesizer::new(&mixture, 1500, 1.0).unwrap();
        let seeds = if case < 3 { 17 } else { 16 };
        for s in 0..seeds {
            let series = synth.synthesize(1000 + 100 * case as u64 + s).unwrap();
            let est = estimate(&series.values, &config).unwrap();
            let mass = est.mass().unwrap();
            worst = worst.max((mass - 1.0).abs());
            count += 1;
        }
    }
    assert_eq!(count, 50, "the criterion covers 50 series");
    let pass = report(
        "02 unit-mass identity",
        worst < 1e-6,
        &format!("max |mass - 1| = {worst:.3e} over 50 series across all Table-1 cases"),
        started,
    );
    assert!(pass, "unit-mass deviation {worst:.3e} exceeds 1e-6");
}

#[test]
fn criterion_03_farima_duality() {
    let started = Instant::now();
    let mixture = MixtureDensity::farima(0.25).unwrap();
    let sigma0 = mixture.covariance(0, 1.0).unwrap();
    let integral = 2.0
        * tanh_sinh(
            |p| farima_spectral(p.x, 0.25).unwrap(),
            0.0,
            std::f64::consts::PI,
            QuadOptions::with_tol(1e-10),
        )
        .unwrap()
        .value;
    // FARIMA(0, d, 0) variance with unit innovations
    let reference = gamma(1.0 - 0.5) / gamma(1.0 - 0.25).powi(2);
    let dev = (sigma0 - integral).abs();
    let dev_ref = (sigma0 - reference).abs().max((integral - reference).abs());
    let pass = report(
        "03 farima duality",
        dev < 1e-5 && dev_ref < 1e-5,
        &format!(
            "sigma(0) = {sigma0:.10}, int f = {integral:.10}, closed form = {reference:.10}"
        ),
        started,
    );
    assert!(pass, "duality gap {dev:.3e} or oracle gap {dev_ref:.3e} exceeds 1e-5");
}

#[test]
fn criterion_04_kolmogorov_variance() {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for d in [0.1, 0.25, 0.4] {
        let s2 = innovation_variance(|lam| farima_spectral(lam, d)).unwrap();
        worst = worst.max((s2 - 1.0).abs());
    }
    let pass = report(
        "04 kolmogorov variance",
        worst < 1e-6,
        &format!("max |sigma^2 - 1| = {worst:.3e} for d in {{0.1, 0.25, 0.4}}"),
        started,
    );
    assert!(pass, "innovation variance deviates by {worst:.3e}");
}

#[test]
fn criterion_05_ma_asymptotics() {
    let started = Instant::now();
    let (d, kappa, a_star) = (0.2, 0.1, 0.8);
    let ma = MACoefficients::for_product(d, kappa, a_star, 4096).unwrap();
    let j = 2000usize;
    let ratio = ma.psi[j] * (j as f64).powf(1.0 - d) * gamma(d) / ma.g_sum();
    let tail = tail_check(&ma.psi, d).unwrap();
    let band = (0.95..=1.05).contains(&ratio);
    let diff_ok = tail.diff_exponent <= d - 2.0 + 0.1;
    let pass = report(
        "05 ma asymptotics",
        band && diff_ok,
        &format!(
            "psi ratio at j = 2000 is {ratio:.6}, diff exponent {:.4} (bound {:.1})",
            tail.diff_exponent,
            d - 2.0 + 0.1
        ),
        started,
    );
    assert!(pass, "ratio {ratio:.6} outside [0.95, 1.05] or diff exponent {:.4} above bound", tail.diff_exponent);
}

#[test]
fn criterion_06_appendix_a_asymptotics() {
    let started = Instant::now();
    let (d, kappa, a_star) = (0.2, 0.1, 0.8);
    let x = 1e-3;
    let (p1, _) = appendix_a_psi(x, d, kappa, a_star).unwrap();
    let asym1 = a_star.powf(kappa + 1.0) / (kappa + 1.0) * x.powf(d);
    let r1 = p1 / asym1;
    let (_, p2) = appendix_a_psi(-x, d, kappa, a_star).unwrap();
    let asym2 = gamma(d) * gamma(1.0 - d) * x.powf(kappa + d);
    let r2 = p2 / asym2;
    let ok1 = (0.9..=1.1).contains(&r1);
    let ok2 = (0.9..=1.1).contains(&r2);
    let pass = report(
        "06 appendix A asymptotics",
        ok1 && ok2,
        &format!(
            "psi_1 ratio = {r1:.6} ({}), psi_2 ratio = {r2:.6} ({})",
            if ok1 { "in band" } else { "OUTSIDE [0.9, 1.1]" },
            if ok2 { "in band" } else { "OUTSIDE [0.9, 1.1]" }
        ),
        started,
    );
    assert!(
        pass,
        "psi_1 ratio {r1:.6} and psi_2 ratio {r2:.6} must both lie in [0.9, 1.1]; \
         the quadrature value psi_1(1e-3) = {p1:.8} is pinned against an \
         independent oracle, so the stated psi_1 band is not attainable from \
         the defining integral (see ACCEPTANCE_STATUS.md)"
    );
}

#[test]
fn criterion_07_dual_representation() {
    let started = Instant::now();
    let (mixture, _, alpha) = table1_case(1).unwrap();
    let series = gaussian_synthesis(&mixture, 2048, 1.0, 11).unwrap();
    let config = EstimatorConfig::new(alpha, 0.41);
    let est = estimate(&series.values, &config).unwrap();
    let points = [-0.5, 0.0, 0.5, 0.96];
    let dual = estimate_via_periodogram(&series.values, &config, &points).unwrap();
    let mut worst: f64 = 0.0;
    for (i, &p) in points.iter().enumerate() {
        worst = worst.max((est.density(p) - dual[i]).abs());
    }
    let pass = report(
        "07 dual representation",
        worst < 1e-4,
        &format!("max |covariance-form - periodogram-form| = {worst:.3e} at n = 2048, seed 11"),
        started,
    );
    assert!(pass, "dual representation gap {worst:.3e} exceeds 1e-4");
}

#[test]
fn criterion_08_normality() {
    let started = Instant::now();
    let mut spec = ExperimentSpec::case_preset(1).unwrap();
    spec.m = 200;
    let report_data = run_experiment(&spec).unwrap();
    let row = &report_data.normality[0];
    let pass = report(
        "08 normality",
        row.p_value > 0.05,
        &format!(
            "Shapiro-Wilk at x = -0.5: W = {:.6}, p = {:.4} (M = 200, n = 1500, seed 1)",
            row.w, row.p_value
        ),
        started,
    );
    assert!(pass, "normality p-value {:.4} is not above 0.05", row.p_value);
}

#[test]
fn criterion_09_variance_decay() {
    let started = Instant::now();
    let mut spec = ExperimentSpec::case_preset(1).unwrap();
    spec.m = 200;
    let slope = variance_slope(&spec, &[500, 1000, 2000, 4000]).unwrap();
    let pass = report(
        "09 variance decay",
        (0.8..=1.2).contains(&slope.gamma_hat),
        &format!(
            "gamma_hat = {:.4} from n in {{500, 1000, 2000, 4000}} at M = 200",
            slope.gamma_hat
        ),
        started,
    );
    assert!(pass, "gamma_hat {:.4} outside [0.8, 1.2]", slope.gamma_hat);
}

#[test]
fn criterion_10_consistency() {
    let started = Instant::now();
    let mut spec = ExperimentSpec::case_preset(1).unwrap();
    spec.m = 100;
    spec.kn = Some(3);
    spec.gamma = None;
    let report_1500 = run_experiment(&spec).unwrap();
    let coverage =
        aggmix::harness::median_iqr_coverage(&report_1500, -0.9, 0.98).unwrap();
    let (mixture, _, _) = table1_case(1).unwrap();
    let mut spec_small = spec.clone();
    spec_small.n = 500;
    let mise_small = mise(&run_experiment(&spec_small).unwrap(), &mixture).unwrap();
    let mut spec_large = spec.clone();
    spec_large.n = 5000;
    let mise_large = mise(&run_experiment(&spec_large).unwrap(), &mixture).unwrap();
    let pass = report(
        "10 consistency",
        coverage >= 0.90 && mise_large < mise_small,
        &format!(
            "median-in-IQR coverage = {:.1}% on [-0.9, 0.98]; MISE(5000) = {mise_large:.4e} vs MISE(500) = {mise_small:.4e}",
            100.0 * coverage
        ),
        started,
    );
    assert!(
        pass,
        "coverage {coverage:.3} below 0.90 or MISE not decreasing ({mise_large:.4e} vs {mise_small:.4e})"
    );
}

#[test]
fn criterion_11_alpha_rule() {
    let started = Instant::now();
    let (mixture, _, _) = table1_case(1).unwrap();
    let mut mises = Vec::new();
    for alpha in [0.2, 0.5, 0.8] {
        let mut spec = ExperimentSpec::case_preset(1).unwrap();
        spec.m = 100;
        spec.alpha = Some(alpha);
        spec.kn = Some(3);
        spec.gamma = None;
        let r = run_experiment(&spec).unwrap();
        mises.push(mise(&r, &mixture).unwrap());
    }
    let pass = report(
        "11 alpha rule",
        mises[1] <= mises[0] && mises[1] <= mises[2],
        &format!(
            "MISE at alpha 0.2/0.5/0.8 = {:.4e}/{:.4e}/{:.4e}",
            mises[0], mises[1], mises[2]
        ),
        started,
    );
    assert!(
        pass,
        "MISE at alpha = 0.5 ({:.4e}) must not exceed alpha = 0.2 ({:.4e}) or 0.8 ({:.4e})",
        mises[1], mises[0], mises[2]
    );
}

#[test]
fn truncation_rule_spot_check() {
    // the published-scale run uses Kn = 3 at n = 1500 under gamma = 0.41;
    // pin it so preset changes cannot silently shift the acceptance runs
    assert_eq!(truncation_kn(1500, 0.41).unwrap(), 3);
}
