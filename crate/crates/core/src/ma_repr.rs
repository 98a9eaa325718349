//! Moving-average (Wold) representation machinery.
//!
//! The aggregated process with a product mixture factors as
//! f(lambda) = f_d(lambda) g(lambda), a FARIMA long-memory factor times an
//! analytic short-memory factor. This module computes
//!
//! - the FARIMA coefficients h_j = Gamma(j+d) / (Gamma(j+1) Gamma(d)),
//! - the causal factor g_j of the analytic part via cepstral factorization
//!   (Fourier coefficients of log g, then the recursive exponential of the
//!   one-sided cepstrum),
//! - the composed coefficients psi_j = (h * g)_j normalized to psi_0 = 1,
//! - innovation variances by the Kolmogorov formula
//!   sigma^2 = 2 pi exp((2 pi)^(-1) int log f), and
//! - tail diagnostics for the asymptotic laws psi_j ~ c j^(d-1) and
//!   |psi_j - psi_{j+1}| = O(j^(d-2)).

use crate::mixture::{farima_spectral, MixtureDensity};
use crate::quad::{tanh_sinh, QuadOptions};
use crate::{Error, Result};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
/// Cepstral sampling grid size; analytic factors have geometrically
/// decaying cepstra, so aliasing at this size is far below coefficient
/// tolerances for exported lengths up to [`MAX_J`].
const CEPSTRUM_GRID: usize = 1 << 14;
/// Largest exported coefficient index.
pub const MAX_J: usize = 4096;

/// Wold-representation coefficients of a long-memory process with spectral
/// density f = f_d g.
#[derive(Debug, Clone)]
pub struct MACoefficients {
    /// Composed coefficients psi_0..psi_J with psi_0 = 1.
    pub psi: Vec<f64>,
    /// FARIMA factor h_0..h_J.
    pub h: Vec<f64>,
    /// Analytic (short-memory) factor g_0..g_J with g_0 = 1.
    pub g: Vec<f64>,
    /// Innovation variance of the composed process, by the Kolmogorov
    /// formula; equals sigma_g2 / (2 pi) because the FARIMA factor
    /// contributes variance exactly 1.
    pub sigma2: f64,
    /// Innovation variance 2 pi exp(c_0) of the analytic factor alone.
    pub sigma_g2: f64,
    /// Memory parameter of the FARIMA factor.
    pub d: f64,
}

impl MACoefficients {
    /// Coefficients for the pure FARIMA process (analytic factor constant 1).
    pub fn for_farima(d: f64, j_max: usize) -> Result<Self> {
        Self::assemble(d, |_| Ok(1.0), j_max)
    }

    /// Coefficients for the product mixture: FARIMA factor with memory d,
    /// analytic factor from the compensator mixture with exponent kappa on
    /// [-a_star, 0] at unit innovation variance.
    pub fn for_product(d: f64, kappa: f64, a_star: f64, j_max: usize) -> Result<Self> {
        let comp = MixtureDensity::compensator(kappa, a_star)?;
        Self::assemble(d, move |lam| comp.spectral(lam, 1.0), j_max)
    }

    /// Assemble from a memory parameter and an analytic spectral factor.
    ///
    /// Computes both variance conventions independently (the Kolmogorov
    /// quadrature of log f and the cepstral 2 pi exp(c_0)) and fails loudly
    /// when their stated relation sigma2 = sigma_g2 / (2 pi) is violated
    /// beyond 1e-8.
    pub fn assemble<F>(d: f64, mut g_spectral: F, j_max: usize) -> Result<Self>
    where
        F: FnMut(f64) -> Result<f64>,
    {
        let h = farima_h(d, j_max)?;
        let (g, sigma_g2) = cepstral_g(&mut g_spectral, j_max)?;
        let psi = compose_psi(&h, &g)?;
        let sigma2 = innovation_variance(|lam| Ok(farima_spectral(lam, d)? * g_spectral(lam)?))?;
        let stated = sigma_g2 / TWO_PI;
        if (sigma2 - stated).abs() > 1e-8 * stated.max(1.0) {
            return Err(Error::Quadrature(format!(
                "variance conventions disagree: Kolmogorov sigma2 = {sigma2}, \
                 cepstral sigma_g2 / 2 pi = {stated}"
            )));
        }
        Ok(Self { psi, h, g, sigma2, sigma_g2, d })
    }

    /// Sum of the analytic-factor coefficients, the constant in the
    /// composition asymptotics psi_j ~ (sum g_k / Gamma(d)) j^(d-1).
    pub fn g_sum(&self) -> f64 {
        self.g.iter().sum()
    }

    /// Largest absolute convolution residual psi_k - sum_j h_{k-j} g_j;
    /// zero up to floating error by construction.
    pub fn convolution_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for k in 0..self.psi.len() {
            let mut s = 0.0;
            for j in 0..=k {
                s += self.h[k - j] * self.g[j];
            }
            worst = worst.max((self.psi[k] - s).abs());
        }
        worst
    }

    /// Increment of the partial sums of psi_j^2 over the last ten stored
    /// indices, a square-summability proxy. The bound 1e-6 at J = 4096 is
    /// attainable for d up to about 0.2; fatter tails need a longer
    /// expansion for the same increment.
    pub fn tail_sq_increment(&self) -> f64 {
        self.psi.iter().rev().take(10).map(|p| p * p).sum()
    }

    /// Spectral density reconstructed from the truncated expansion,
    /// (sigma2 / 2 pi) |sum_j psi_j e^{i j lambda}|^2. Truncation-limited
    /// near lambda = 0.
    pub fn spectral_reconstruction(&self, lambda: f64) -> f64 {
        let mut s = Complex64::new(0.0, 0.0);
        // Horner on e^{i lambda} over descending j
        let z = Complex64::from_polar(1.0, lambda);
        for &p in self.psi.iter().rev() {
            s = s * z + p;
        }
        self.sigma2 / TWO_PI * s.norm_sqr()
    }
}

/// FARIMA coefficients h_0..h_J by the stable recurrence
/// h_0 = 1, h_j = h_{j-1} (j - 1 + d) / j.
pub fn farima_h(d: f64, j_max: usize) -> Result<Vec<f64>> {
    if !(0.0..0.5).contains(&d) || d == 0.0 {
        return Err(Error::InvalidParameter(format!("d must lie in (0, 1/2), got {d}")));
    }
    let mut h = Vec::with_capacity(j_max + 1);
    h.push(1.0);
    for j in 1..=j_max {
        let prev = h[j - 1];
        h.push(prev * (j as f64 - 1.0 + d) / j as f64);
    }
    Ok(h)
}

/// Cepstral factorization of an analytic spectral density.
///
/// Samples log g on a 2^14 equispaced grid, takes Fourier coefficients c_k,
/// and builds the causal factor by the recursive exponential
/// b_0 = 1, b_m = m^(-1) sum_{k=1}^m k c_k b_{m-k}. Returns (b, sigma_g2)
/// with sigma_g2 = 2 pi exp(c_0); b_0 = 1 holds by construction.
pub fn cepstral_g<F>(g: &mut F, j_max: usize) -> Result<(Vec<f64>, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    if j_max >= CEPSTRUM_GRID / 2 {
        return Err(Error::InvalidParameter(format!(
            "requested {j_max} coefficients exceeds half the cepstral grid \
             ({CEPSTRUM_GRID}); aliasing would corrupt the tail"
        )));
    }
    let m = CEPSTRUM_GRID;
    let mut buf = Vec::with_capacity(m);
    for l in 0..m {
        // wrap the upper half of the FFT grid into [-pi, 0); g is even and
        // 2 pi periodic, so the sample value is unchanged
        let lam = if 2 * l <= m {
            TWO_PI * l as f64 / m as f64
        } else {
            TWO_PI * l as f64 / m as f64 - TWO_PI
        };
        let v = g(lam)?;
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "analytic spectral factor must be positive and finite, got \
                 {v} at lambda = {lam}"
            )));
        }
        buf.push(Complex64::new(v.ln(), 0.0));
    }
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    // real, even input: coefficients are real; keep k = 0..=j_max
    let c: Vec<f64> = buf[..=j_max].iter().map(|z| z.re / m as f64).collect();
    let sigma_g2 = TWO_PI * c[0].exp();
    let mut b = vec![0.0; j_max + 1];
    b[0] = 1.0;
    for mm in 1..=j_max {
        let mut acc = 0.0;
        for k in 1..=mm {
            acc += k as f64 * c[k] * b[mm - k];
        }
        b[mm] = acc / mm as f64;
    }
    Ok((b, sigma_g2))
}

/// Discrete convolution of equal-length coefficient vectors, truncated to
/// the common length and normalized so the 0th term is 1.
pub fn compose_psi(h: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    if h.len() != g.len() {
        return Err(Error::InvalidParameter(format!(
            "compose_psi needs equal lengths, got {} and {}",
            h.len(),
            g.len()
        )));
    }
    if h.is_empty() {
        return Err(Error::InvalidParameter("compose_psi needs nonempty inputs".into()));
    }
    let mut psi = vec![0.0; h.len()];
    for (k, slot) in psi.iter_mut().enumerate() {
        let mut s = 0.0;
        for j in 0..=k {
            s += h[k - j] * g[j];
        }
        *slot = s;
    }
    let p0 = psi[0];
    if p0 == 0.0 || !p0.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "leading convolution term is {p0}; cannot normalize psi_0 to 1"
        )));
    }
    for p in psi.iter_mut() {
        *p /= p0;
    }
    Ok(psi)
}

/// Innovation variance by the Kolmogorov formula
/// sigma^2 = 2 pi exp((2 pi)^(-1) int_{-pi}^{pi} log f(lambda) d lambda)
/// for an even spectral density. The quadrature handles the integrable
/// log singularity of long-memory densities at lambda = 0.
pub fn innovation_variance<F>(mut f: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut failure: Option<Error> = None;
    let r = tanh_sinh(
        |p| match f(p.x) {
            Ok(v) if v > 0.0 => v.ln(),
            Ok(v) => {
                if failure.is_none() {
                    failure = Some(Error::Quadrature(format!(
                        "spectral density must be positive, got {v} at lambda = {}",
                        p.x
                    )));
                }
                f64::NAN
            }
            Err(e) => {
                if failure.is_none() {
                    failure = Some(e);
                }
                f64::NAN
            }
        },
        0.0,
        std::f64::consts::PI,
        QuadOptions::with_tol(1e-12),
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let r = r?;
    if !r.converged {
        return Err(Error::Quadrature(format!(
            "log-spectral integral did not converge (last increment {:.3e}); \
             the log-integrability condition may fail",
            r.abs_err
        )));
    }
    Ok(TWO_PI * (r.value / std::f64::consts::PI).exp())
}

/// Tail diagnostics for the asymptotic laws of the composed coefficients.
#[derive(Debug, Clone)]
pub struct TailCheck {
    /// Fitted log-log exponent of psi_j over the last decade of indices.
    pub psi_exponent: f64,
    /// Fitted log-log exponent of |psi_j - psi_{j+1}|.
    pub diff_exponent: f64,
    /// Whether psi_exponent lies within (d - 1) plus or minus 0.05.
    pub psi_pass: bool,
    /// Whether diff_exponent is at most (d - 2) + 0.1.
    pub diff_pass: bool,
    /// Memory parameter the bands were evaluated against.
    pub d: f64,
}

/// Fit tail exponents of a coefficient sequence over its last decade
/// (indices from ceil(J/10) to J, J = len - 1) and compare against the
/// asymptotic bands psi_j ~ c j^(d-1), |psi_j - psi_{j+1}| = O(j^(d-2)).
pub fn tail_check(psi: &[f64], d: f64) -> Result<TailCheck> {
    if psi.len() < 100 {
        return Err(Error::InsufficientData(format!(
            "tail_check needs at least 100 coefficients, got {}",
            psi.len()
        )));
    }
    let j_max = psi.len() - 1;
    let start = j_max.div_ceil(10);
    let psi_exponent = loglog_slope((start..j_max).filter_map(|j| {
        let v = psi[j].abs();
        (v > 0.0).then(|| ((j as f64).ln(), v.ln()))
    }))?;
    let diff_exponent = loglog_slope((start..j_max).filter_map(|j| {
        let v = (psi[j] - psi[j + 1]).abs();
        (v > 0.0).then(|| ((j as f64).ln(), v.ln()))
    }))?;
    Ok(TailCheck {
        psi_exponent,
        diff_exponent,
        psi_pass: (psi_exponent - (d - 1.0)).abs() <= 0.05,
        diff_pass: diff_exponent <= d - 2.0 + 0.1,
        d,
    })
}

fn loglog_slope<I: Iterator<Item = (f64, f64)>>(pairs: I) -> Result<f64> {
    let pts: Vec<(f64, f64)> = pairs.collect();
    if pts.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "log-log fit needs at least 10 usable points, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Ok(sxy / sxx)
}
