//! Orthonormal Gegenbauer basis for the weight (1 - x^2)^alpha.
//!
//! The basis functions are G_k = C_k^(alpha + 1/2) / sqrt(gamma_k), where
//! C_k is the classical Gegenbauer (ultraspherical) polynomial and gamma_k
//! its squared weighted L2 norm. The monomial coefficient table g[k][j] is
//! the object the estimator consumes: the coefficient estimates are
//! zeta_hat_k = sum_j g[k][j] (acov(j) - acov(j+2)).
//!
//! Projection integrals use a Gauss-Jacobi rule with parameters
//! (alpha, alpha), built by the Golub-Welsch algorithm on the Jacobi matrix
//! of the monic recurrence; nodes double until two successive estimates
//! agree or a cap is hit, and the achieved error is reported either way.

use crate::special::{beta, ln_gamma};
use crate::{Error, Result};
use num_complex::Complex64;

/// Degrees beyond this are rejected: the monomial coefficient table loses
/// enough precision past degree ~30 that evaluation error would exceed the
/// orthonormality tolerance, and the truncation rule never asks for more.
const MAX_SUPPORTED_DEGREE: usize = 30;

/// Orthonormal Gegenbauer basis up to a fixed maximum degree.
#[derive(Debug, Clone)]
pub struct GegenbauerBasis {
    alpha: f64,
    max_degree: usize,
    /// monomial_coeffs[k][j] is the coefficient of x^j in G_k.
    monomial_coeffs: Vec<Vec<f64>>,
    /// norms[k] is gamma_k, the squared weighted norm of C_k^(alpha+1/2).
    norms: Vec<f64>,
}

/// Result of a projection integral: value plus achieved accuracy.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    /// The integral estimate.
    pub value: f64,
    /// Difference between the last two node-doubling stages.
    pub error_estimate: f64,
    /// Whether the doubling converged before the node cap.
    pub converged: bool,
    /// Node count of the final rule.
    pub nodes_used: usize,
}

/// Closed-form squared norm gamma_k of C_k^(alpha + 1/2) under (1-x^2)^alpha.
pub fn norm_gamma_k(k: usize, alpha: f64) -> f64 {
    let kf = k as f64;
    let ln = std::f64::consts::PI.ln() - 2.0 * alpha * 2f64.ln() + ln_gamma(kf + 2.0 * alpha + 1.0)
        - (kf + alpha + 0.5).ln()
        - 2.0 * ln_gamma(alpha + 0.5)
        - ln_gamma(kf + 1.0);
    ln.exp()
}

impl GegenbauerBasis {
    /// Build the orthonormal basis for the weight (1 - x^2)^alpha.
    ///
    /// `alpha` must exceed -1/2 (below that the normalization used here is
    /// undefined) and `max_degree` must stay within the supported
    /// conditioning range.
    pub fn build(alpha: f64, max_degree: usize) -> Result<Self> {
        if !alpha.is_finite() || alpha <= -0.5 {
            return Err(Error::InvalidParameter(format!(
                "Gegenbauer basis needs alpha > -1/2, got {alpha}"
            )));
        }
        if max_degree > MAX_SUPPORTED_DEGREE {
            return Err(Error::InvalidParameter(format!(
                "degree {max_degree} exceeds the supported maximum {MAX_SUPPORTED_DEGREE}; \
                 the monomial table is too ill-conditioned past that"
            )));
        }
        let lambda = alpha + 0.5;
        // classical recurrence on monomial coefficient vectors:
        // C_0 = 1, C_1 = 2 lambda x,
        // k C_k = 2 (k - 1 + lambda) x C_{k-1} - (k - 2 + 2 lambda) C_{k-2}
        let mut cs: Vec<Vec<f64>> = Vec::with_capacity(max_degree + 1);
        cs.push(vec![1.0]);
        if max_degree >= 1 {
            cs.push(vec![0.0, 2.0 * lambda]);
        }
        for k in 2..=max_degree {
            let kf = k as f64;
            let mut next = vec![0.0; k + 1];
            for (j, &c) in cs[k - 1].iter().enumerate() {
                next[j + 1] += 2.0 * (kf - 1.0 + lambda) / kf * c;
            }
            for (j, &c) in cs[k - 2].iter().enumerate() {
                next[j] -= (kf - 2.0 + 2.0 * lambda) / kf * c;
            }
            cs.push(next);
        }
        let norms: Vec<f64> = (0..=max_degree).map(|k| norm_gamma_k(k, alpha)).collect();
        let monomial_coeffs = cs
            .into_iter()
            .zip(norms.iter())
            .map(|(c, &g)| {
                let s = g.sqrt();
                c.into_iter().map(|v| v / s).collect()
            })
            .collect();
        Ok(Self { alpha, max_degree, monomial_coeffs, norms })
    }

    /// The weight exponent alpha.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Highest available degree.
    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// Monomial coefficients g[k][j] of G_k, length k + 1.
    pub fn coefficients(&self, k: usize) -> Result<&[f64]> {
        self.monomial_coeffs
            .get(k)
            .map(|v| v.as_slice())
            .ok_or_else(|| self.degree_error(k))
    }

    /// Squared norm gamma_k of the unnormalized polynomial.
    pub fn norm(&self, k: usize) -> Result<f64> {
        self.norms.get(k).copied().ok_or_else(|| self.degree_error(k))
    }

    fn degree_error(&self, k: usize) -> Error {
        Error::InvalidParameter(format!(
            "degree {k} exceeds basis maximum {}",
            self.max_degree
        ))
    }

    /// Evaluate G_k at a real point by Horner's rule on the monomial table.
    pub fn evaluate(&self, k: usize, x: f64) -> Result<f64> {
        let c = self.coefficients(k)?;
        let mut y = 0.0;
        for &cj in c.iter().rev() {
            y = y * x + cj;
        }
        Ok(y)
    }

    /// Evaluate G_k at a complex point (the estimator kernel needs
    /// G_k(e^{i lambda})).
    pub fn evaluate_complex(&self, k: usize, z: Complex64) -> Result<Complex64> {
        let c = self.coefficients(k)?;
        let mut y = Complex64::new(0.0, 0.0);
        for &cj in c.iter().rev() {
            y = y * z + cj;
        }
        Ok(y)
    }

    /// Projection zeta_k = int (1-x^2)^alpha f(x) G_k(x) dx by Gauss-Jacobi
    /// quadrature with node doubling.
    ///
    /// The rule carries the (1-x^2)^alpha weight, so `f` is sampled bare.
    /// Node counts double from 32 until two successive estimates differ by
    /// less than 1e-10 (relative to the estimate magnitude, floored
    /// absolutely) or the 4096-node cap; non-convergence is reported in the
    /// returned record, not as an error, since rough integrands (jumps at
    /// support edges) still produce a usable value with an honest error bar.
    pub fn project<F: FnMut(f64) -> f64>(&self, mut f: F, k: usize) -> Result<Projection> {
        self.coefficients(k)?; // degree check
        let mut n = 32usize;
        let mut prev: Option<f64> = None;
        let mut best;
        let mut err = f64::INFINITY;
        let mut used;
        loop {
            let rule = gauss_jacobi(n, self.alpha, self.alpha)?;
            let mut acc = 0.0;
            for &(x, w) in &rule {
                acc += w * f(x) * self.evaluate(k, x)?;
            }
            if !acc.is_finite() {
                return Err(Error::Quadrature(format!(
                    "projection integrand produced a non-finite sum at {n} nodes"
                )));
            }
            used = n;
            if let Some(p) = prev {
                err = (acc - p).abs();
                if err <= 1e-10 * acc.abs().max(1.0) {
                    return Ok(Projection {
                        value: acc,
                        error_estimate: err,
                        converged: true,
                        nodes_used: used,
                    });
                }
            }
            best = acc;
            prev = Some(acc);
            if n >= 4096 {
                break;
            }
            n *= 2;
        }
        Ok(Projection { value: best, error_estimate: err, converged: false, nodes_used: used })
    }
}

/// Gauss-Jacobi nodes and weights for the weight (1-x)^a (1+x)^b on [-1, 1].
///
/// Golub-Welsch: nodes are the eigenvalues of the symmetric tridiagonal
/// Jacobi matrix of the monic recurrence, weights are mu_0 times the squared
/// first components of the normalized eigenvectors. Returned sorted by node.
pub fn gauss_jacobi(n: usize, a: f64, b: f64) -> Result<Vec<(f64, f64)>> {
    if n == 0 {
        return Err(Error::InvalidParameter("Gauss-Jacobi rule needs n >= 1".into()));
    }
    if a <= -1.0 || b <= -1.0 {
        return Err(Error::InvalidParameter(format!(
            "Jacobi weight needs exponents > -1, got ({a}, {b})"
        )));
    }
    // total weight mass mu_0 = 2^(a+b+1) B(a+1, b+1)
    let mu0 = 2f64.powf(a + b + 1.0) * beta(a + 1.0, b + 1.0);
    // monic recurrence coefficients (Gautschi's formulas)
    let mut diag = vec![0.0f64; n];
    let mut off = vec![0.0f64; n]; // off[k] couples k and k+1; off[n-1] unused
    let apb = a + b;
    for (k, d) in diag.iter_mut().enumerate() {
        let kf = k as f64;
        let den = (2.0 * kf + apb) * (2.0 * kf + apb + 2.0);
        *d = if den == 0.0 {
            // k = 0 with a + b = 0: the limit value is (b - a) / 2 = 0 here
            // only when a = b; for a + b = 0 generally it is (b - a) / (a+b+2)
            (b - a) / (apb + 2.0)
        } else {
            (b * b - a * a) / den
        };
    }
    for k in 1..n {
        let kf = k as f64;
        let num = 4.0 * kf * (kf + a) * (kf + b) * (kf + apb);
        let den = (2.0 * kf + apb).powi(2) * (2.0 * kf + apb + 1.0) * (2.0 * kf + apb - 1.0);
        off[k - 1] = (num / den).sqrt();
    }
    let (nodes, first_components) = symmetric_tridiagonal_eigen(&mut diag, &mut off)?;
    let mut out: Vec<(f64, f64)> = nodes
        .into_iter()
        .zip(first_components)
        .map(|(x, z)| (x, mu0 * z * z))
        .collect();
    out.sort_by(|l, r| l.0.total_cmp(&r.0));
    Ok(out)
}

/// QL eigensolver with implicit shifts for a symmetric tridiagonal matrix,
/// accumulating only the first row of the eigenvector matrix (all that
/// Golub-Welsch weights need). Overwrites its inputs.
fn symmetric_tridiagonal_eigen(
    d: &mut [f64],
    e: &mut [f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = d.len();
    let mut z = vec![0.0f64; n];
    if n == 0 {
        return Ok((Vec::new(), z));
    }
    z[0] = 1.0;
    if n >= 1 {
        e[n - 1] = 0.0;
    }
    for l in 0..n {
        let mut iter = 0;
        loop {
            // find a negligible off-diagonal element
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 50 {
                return Err(Error::Quadrature(
                    "tridiagonal QL failed to converge within 50 sweeps".into(),
                ));
            }
            // Wilkinson shift
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut i = m;
            let mut underflowed = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let bb = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    // the rotation annihilated early; roll the correction in
                    // and restart the sweep for this eigenvalue
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflowed = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * bb;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - bb;
                // apply the rotation to the tracked first-row vector
                let zf = z[i + 1];
                z[i + 1] = s * z[i] + c * zf;
                z[i] = c * z[i] - s * zf;
            }
            if underflowed {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok((d.to_vec(), z))
}
