//! Small complex linear-algebra helpers on top of nalgebra.
//!
//! Everything here works on dynamically sized `Complex64` matrices. Hermitian
//! positive-definite systems go through Cholesky; eigen work uses
//! `SymmetricEigen`, which handles Hermitian complex matrices.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const C_ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const C_ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Real part of the Frobenius inner product `<a, b> = Tr(a^H b)`.
pub fn re_inner(a: &CMat, b: &CMat) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// `Tr(a^H b)` without forming the product.
pub fn inner(a: &CMat, b: &CMat) -> Complex64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

pub fn frob_norm_sq(a: &CMat) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

/// Symmetrizes rounding noise: returns `(m + m^H) / 2`.
pub fn hermitize(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

/// Solve `a x = b` for Hermitian positive-definite `a`.
pub fn solve_hpd(a: &CMat, b: &CMat, what: &str) -> Result<CMat> {
    let chol = hermitize(a)
        .cholesky()
        .ok_or_else(|| Error::Singular(what.to_string()))?;
    Ok(chol.solve(b))
}

/// `log2 det(a)` for Hermitian positive-definite `a`.
pub fn log2_det_hpd(a: &CMat, what: &str) -> Result<f64> {
    let chol = hermitize(a)
        .cholesky()
        .ok_or_else(|| Error::Singular(what.to_string()))?;
    let l = chol.l();
    let mut acc = 0.0;
    for i in 0..l.nrows() {
        let d = l[(i, i)].re;
        if d <= 0.0 {
            return Err(Error::Singular(what.to_string()));
        }
        acc += d.log2();
    }
    Ok(2.0 * acc)
}

/// Largest eigenpair of a Hermitian matrix by power iteration, with a full
/// eigendecomposition fallback when the iteration stagnates. The returned
/// value is padded by the final residual so callers that need an upper bound
/// on the spectrum (surrogate construction) stay on the safe side.
pub fn hermitian_max_eig(m: &CMat, tol: f64, max_iter: usize) -> (f64, CVec) {
    let n = m.nrows();
    if n == 0 {
        return (0.0, CVec::zeros(0));
    }
    let scale = m.iter().map(|x| x.norm()).fold(0.0f64, f64::max);
    if scale == 0.0 {
        let mut v = CVec::zeros(n);
        v[0] = C_ONE;
        return (0.0, v);
    }
    // Deterministic start with a mild phase ramp to avoid orthogonal starts
    // on structured matrices.
    let mut v = CVec::from_fn(n, |i, _| Complex64::new(1.0, 0.3 + i as f64 * 0.1));
    v /= Complex64::new(v.norm(), 0.0);
    let mut lambda = 0.0f64;
    for it in 0..max_iter {
        let w = m * &v;
        let new_lambda = re_inner_vec(&v, &w);
        let norm = w.norm();
        if norm == 0.0 {
            break;
        }
        let w = w / Complex64::new(norm, 0.0);
        let delta = (new_lambda - lambda).abs();
        lambda = new_lambda;
        v = w;
        if it > 2 && delta <= tol * lambda.abs().max(scale * 1e-12) {
            let resid = (m * &v - v.scale(lambda)).norm();
            if resid <= tol * scale {
                return (lambda + resid, v);
            }
        }
    }
    // Stagnated (clustered or adversarial spectrum): do it exactly.
    let se = hermitize(m).symmetric_eigen();
    let (idx, &val) = se
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let v = se.eigenvectors.column(idx).into_owned();
    (val + scale * 1e-14, v)
}

fn re_inner_vec(a: &CVec, b: &CVec) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Largest generalized eigenpair of the Hermitian pencil `(s, t)` with `t`
/// positive definite, via the Cholesky reduction `t = L L^H`,
/// `M = L^-1 s L^-H`. The eigenvector is returned with unit norm.
pub fn generalized_max_eig(s: &CMat, t: &CMat, what: &str) -> Result<(f64, CVec)> {
    let n = t.nrows();
    let chol = hermitize(t)
        .cholesky()
        .ok_or_else(|| Error::Singular(what.to_string()))?;
    let l = chol.l();
    // M = L^-1 S L^-H, built column by column with triangular solves.
    let s_h = hermitize(s);
    let mut inv_l_s = s_h.clone();
    assert!(l.solve_lower_triangular_mut(&mut inv_l_s), "triangular solve");
    let mut m = inv_l_s.adjoint();
    assert!(l.solve_lower_triangular_mut(&mut m), "triangular solve");
    let m = m.adjoint();
    let se = hermitize(&m).symmetric_eigen();
    let (idx, &val) = se
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let y = se.eigenvectors.column(idx).into_owned();
    // w = L^-H y
    let mut w = y;
    assert!(l.adjoint().solve_upper_triangular_mut(&mut w), "triangular solve");
    let norm = w.norm();
    if norm == 0.0 {
        return Err(Error::Singular(what.to_string()));
    }
    w /= Complex64::new(norm, 0.0);
    if n > 0 {
        // Deterministic sign/phase convention: largest-magnitude entry real positive.
        let (k, _) = w
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().partial_cmp(&b.1.norm()).unwrap())
            .unwrap();
        let ph = w[k] / Complex64::new(w[k].norm(), 0.0);
        w /= ph;
    }
    Ok((val, w))
}

/// i.i.d. circularly symmetric complex Gaussian matrix, per-entry variance
/// `var` (real and imaginary parts each carry `var / 2`).
pub fn complex_gaussian<R: Rng>(rows: usize, cols: usize, var: f64, rng: &mut R) -> CMat {
    if var == 0.0 {
        return CMat::zeros(rows, cols);
    }
    let normal = Normal::new(0.0, (var / 2.0).sqrt()).expect("valid std dev");
    CMat::from_fn(rows, cols, |_, _| {
        Complex64::new(normal.sample(rng), normal.sample(rng))
    })
}

/// Unit-modulus phase vector `exp(j theta_l)`.
pub fn phase_vector(theta: &[f64]) -> CVec {
    CVec::from_iterator(theta.len(), theta.iter().map(|&t| Complex64::from_polar(1.0, t)))
}

/// Wraps an angle into the RIS phase domain `(0, 2*pi]`.
pub fn wrap_phase(theta: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut t = theta.rem_euclid(two_pi);
    if t == 0.0 {
        t = two_pi;
    }
    t
}

/// SplitMix64 step, used for deriving independent stream seeds.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Documented seed-splitting rule: independent streams are derived from a
/// base seed and a stream index by two SplitMix64 rounds. Used for task
/// sampling, per-realization channels, and per-restart initialization.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(base) ^ splitmix64(stream.wrapping_add(0xA5A5_A5A5)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_hpd(n: usize, rng: &mut impl Rng) -> CMat {
        let a = complex_gaussian(n, n, 1.0, rng);
        &a * a.adjoint() + CMat::identity(n, n).scale(0.1)
    }

    #[test]
    fn solve_hpd_roundtrip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let a = random_hpd(4, &mut rng);
        let b = complex_gaussian(4, 2, 1.0, &mut rng);
        let x = solve_hpd(&a, &b, "test").unwrap();
        assert!((a * x - b).norm() < 1e-10);
    }

    #[test]
    fn log2_det_matches_eigenvalues() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let a = random_hpd(5, &mut rng);
        let se = hermitize(&a).symmetric_eigen();
        let expected: f64 = se.eigenvalues.iter().map(|l| l.log2()).sum();
        let got = log2_det_hpd(&a, "test").unwrap();
        assert!((got - expected).abs() < 1e-9);
    }

    #[test]
    fn generalized_eig_maximizes_quotient() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let s = random_hpd(4, &mut rng);
        let t = random_hpd(4, &mut rng);
        let (val, w) = generalized_max_eig(&s, &t, "test").unwrap();
        let quot = |v: &CVec| {
            let num = (v.adjoint() * &s * v)[(0, 0)].re;
            let den = (v.adjoint() * &t * v)[(0, 0)].re;
            num / den
        };
        assert!((quot(&w) - val).abs() / val < 1e-10);
        for _ in 0..200 {
            let probe = complex_gaussian(4, 1, 1.0, &mut rng).column(0).into_owned();
            assert!(quot(&probe) <= val * (1.0 + 1e-10));
        }
    }

    #[test]
    fn power_iteration_upper_bounds_spectrum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let m = random_hpd(6, &mut rng);
            let (lam, _) = hermitian_max_eig(&m, 1e-12, 2000);
            let se = hermitize(&m).symmetric_eigen();
            let exact = se.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
            assert!(lam >= exact - 1e-12 * exact.abs());
            assert!(lam <= exact * (1.0 + 1e-6) + 1e-9);
        }
    }

    #[test]
    fn complex_gaussian_moments() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let m = complex_gaussian(200, 200, 2.5, &mut rng);
        let mean_power = frob_norm_sq(&m) / (200.0 * 200.0);
        assert!((mean_power - 2.5).abs() / 2.5 < 0.02);
    }

    #[test]
    fn wrap_phase_domain() {
        assert_eq!(wrap_phase(0.0), std::f64::consts::TAU);
        assert!(wrap_phase(-0.1) > 0.0 && wrap_phase(-0.1) <= std::f64::consts::TAU);
        assert!((wrap_phase(7.0) - (7.0 - std::f64::consts::TAU)).abs() < 1e-15);
    }

    use rand::SeedableRng;
}
