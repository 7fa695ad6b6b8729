//! Dense linear-algebra helpers shared by the propagators.
//!
//! General (non-symmetric) eigendecompositions come from faer, whose QR
//! iteration handles the clustered `±iω` spectra of the two-spin generators;
//! everything else uses nalgebra.

use nalgebra::{Complex, DMatrix, DVector};

pub(crate) type C64 = Complex<f64>;

/// Eigenvector matrices with a 1-norm condition number above this are
/// treated as singular.
pub(crate) const MAX_CONDITION: f64 = 1.0e12;

/// Complex eigendecomposition `M = R Λ R⁻¹` of a real square matrix.
#[derive(Clone, Debug)]
pub(crate) struct Eigen {
    pub values: DVector<C64>,
    pub vectors: DMatrix<C64>,
    pub inverse: DMatrix<C64>,
}

/// Reasons a diagonalization is refused.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum EigenFailure {
    NoConvergence,
    IllConditioned(f64),
}

pub(crate) fn to_complex(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|v| C64::new(v, 0.0))
}

fn norm1(m: &DMatrix<C64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn finite<'a>(m: impl IntoIterator<Item = &'a C64>) -> bool {
    m.into_iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub(crate) fn eigen(m: &DMatrix<f64>) -> Result<Eigen, EigenFailure> {
    assert!(m.is_square());
    let n = m.nrows();
    if m.iter().any(|v| !v.is_finite()) {
        return Err(EigenFailure::NoConvergence);
    }
    let fm = faer::Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)]);
    let evd = fm.eigen().map_err(|_| EigenFailure::NoConvergence)?;
    let (u, s) = (evd.U(), evd.S().column_vector());
    let values = DVector::from_fn(n, |k, _| C64::new(s[k].re, s[k].im));
    let mut vectors = DMatrix::from_fn(n, n, |i, j| C64::new(u[(i, j)].re, u[(i, j)].im));
    for mut col in vectors.column_iter_mut() {
        let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.0 {
            col.unscale_mut(norm);
        }
    }
    if !finite(values.iter()) || !finite(vectors.iter()) {
        return Err(EigenFailure::NoConvergence);
    }

    let inverse = vectors
        .clone()
        .try_inverse()
        .ok_or(EigenFailure::IllConditioned(f64::INFINITY))?;
    if !finite(inverse.iter()) {
        return Err(EigenFailure::IllConditioned(f64::INFINITY));
    }
    let condition = norm1(&vectors) * norm1(&inverse);
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(EigenFailure::IllConditioned(condition));
    }
    Ok(Eigen {
        values,
        vectors,
        inverse,
    })
}

/// `(e^{τλ} − 1)/λ`, with the series limit near `λ = 0`.
pub(crate) fn phi1(lambda: C64, tau: f64) -> C64 {
    let z = lambda * tau;
    if z.norm() < 1.0e-8 {
        C64::new(tau, 0.0) * (C64::new(1.0, 0.0) + z / 2.0 + z * z / 6.0)
    } else {
        (z.exp() - C64::new(1.0, 0.0)) / lambda
    }
}

/// Largest absolute imaginary part relative to the real magnitude.
pub(crate) fn imaginary_residue(m: &DMatrix<C64>) -> f64 {
    let scale = m.iter().map(|z| z.re.abs()).fold(1.0, f64::max);
    m.iter().map(|z| z.im.abs()).fold(0.0, f64::max) / scale
}

/// `exp(τM)` and `∫₀^τ exp((τ−λ)M) dλ · y` from one exponential of the
/// augmented matrix `[[M, y], [0, 0]]` (scaling and squaring, Padé).
#[cfg(test)]
pub(crate) fn expm_affine(
    m: &DMatrix<f64>,
    y: &DVector<f64>,
    tau: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = m.nrows();
    let mut aug = DMatrix::<f64>::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&(m * tau));
    aug.view_mut((0, n), (n, 1)).copy_from(&(y * tau));
    let e = aug.exp();
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, 1)).column(0).into_owned(),
    )
}

/// Skew-symmetric real matrix prepared for repeated exponentiation
/// `exp(θK)` through the Hermitian eigenproblem of `iK`.
#[derive(Clone, Debug)]
pub(crate) struct SkewExp {
    vectors: DMatrix<C64>,
    vectors_adj: DMatrix<C64>,
    values: DVector<f64>,
}

impl SkewExp {
    pub fn new(k: &DMatrix<f64>) -> Self {
        let h = to_complex(k) * C64::new(0.0, 1.0);
        // iK is Hermitian when K is real skew-symmetric.
        let eig = nalgebra::linalg::SymmetricEigen::new(h);
        let vectors = eig.eigenvectors;
        let vectors_adj = vectors.adjoint();
        SkewExp {
            vectors,
            vectors_adj,
            values: eig.eigenvalues,
        }
    }

    /// `exp(θK)`; `K = −i (iK)` so the phases are `e^{−iθλ}`.
    pub fn exp(&self, theta: f64) -> DMatrix<f64> {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let phase = C64::from_polar(1.0, -theta * self.values[j]);
            for i in 0..n {
                scaled[(i, j)] *= phase;
            }
        }
        (scaled * &self.vectors_adj).map(|z| z.re)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruct(e: &Eigen) -> DMatrix<C64> {
        &e.vectors * DMatrix::from_diagonal(&e.values) * &e.inverse
    }

    #[test]
    fn eigen_reconstructs_general_matrix() {
        let m = DMatrix::from_row_slice(
            4,
            4,
            &[
                -0.3, 2.0, 0.1, 0.0, -2.0, -0.5, 0.4, 0.2, 0.0, 0.7, -1.1, 3.0, 0.5, 0.0, -3.0,
                -0.2,
            ],
        );
        let e = eigen(&m).unwrap();
        let back = reconstruct(&e);
        for (a, b) in back.iter().zip(to_complex(&m).iter()) {
            assert!((a - b).norm() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn eigen_handles_repeated_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -1.0, -2.0, 0.0]));
        let e = eigen(&m).unwrap();
        let back = reconstruct(&e);
        for (a, b) in back.iter().zip(to_complex(&m).iter()) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn eigen_rejects_jordan_block() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(matches!(eigen(&m), Err(EigenFailure::IllConditioned(_))));
    }

    #[test]
    fn eigen_of_zero_matrix_is_usable_or_refused() {
        let m = DMatrix::<f64>::zeros(3, 3);
        if let Ok(e) = eigen(&m) {
            assert!(reconstruct(&e).iter().all(|z| z.norm() < 1e-14));
        }
    }

    #[test]
    fn phi1_limits() {
        let tau = 0.3;
        let small = phi1(C64::new(1e-12, 0.0), tau);
        assert!((small.re - tau * (1.0 + 1.5e-13)).abs() < 1e-18);
        let lam = C64::new(-2.0, 1.0);
        let direct = ((lam * tau).exp() - 1.0) / lam;
        assert!((phi1(lam, tau) - direct).norm() < 1e-15);
    }

    #[test]
    fn skew_exp_matches_pade() {
        let k = DMatrix::from_row_slice(3, 3, &[0.0, 1.5, -0.2, -1.5, 0.0, 0.7, 0.2, -0.7, 0.0]);
        let se = SkewExp::new(&k);
        let a = se.exp(0.37);
        let b = (&k * 0.37).exp();
        assert!((a - b).amax() < 1e-13);
    }
}
