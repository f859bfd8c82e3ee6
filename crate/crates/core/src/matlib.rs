//! Dense real-matrix utilities shared by the rest of the crate.
//!
//! Everything here operates on small `DMatrix<f64>` values (orders up to a
//! few dozen). The Lyapunov solver has two independent routes: the
//! Kronecker-vectorised linear system, used by default, and a complex Schur
//! (Bartels–Stewart) route kept for cross-checking.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type RealMatrix = DMatrix<f64>;

/// Absolute margin on the spectral abscissa used by `is_hurwitz` callers
/// throughout the crate.
pub const DEFAULT_HURWITZ_MARGIN: f64 = 1e-9;

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 10_000;

pub fn sym(m: &RealMatrix) -> RealMatrix {
    (m + m.transpose()) * 0.5
}

pub fn asym(m: &RealMatrix) -> RealMatrix {
    (m - m.transpose()) * 0.5
}

/// Splits a square matrix into its symmetric and antisymmetric parts.
pub fn split_sym_asym(m: &RealMatrix) -> Result<(RealMatrix, RealMatrix)> {
    ensure_square(m, "split_sym_asym")?;
    Ok((sym(m), asym(m)))
}

/// Frobenius inner product `tr(AᵀB)`.
pub fn frob_inner(a: &RealMatrix, b: &RealMatrix) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn all_finite(m: &RealMatrix) -> bool {
    m.iter().all(|x| x.is_finite())
}

pub(crate) fn ensure_square(m: &RealMatrix, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{what}: expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub(crate) fn ensure_shape(m: &RealMatrix, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::Dimension(format!(
            "{what}: expected {rows}x{cols}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Canonical commutation matrix `I_{n/2} ⊗ [[0, 1], [-1, 0]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CcrMatrix {
    order: usize,
    matrix: RealMatrix,
}

impl CcrMatrix {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 || !order.is_multiple_of(2) {
            return Err(Error::Dimension(format!(
                "CCR matrix order must be even and positive, got {order}"
            )));
        }
        let mut matrix = RealMatrix::zeros(order, order);
        for k in (0..order).step_by(2) {
            matrix[(k, k + 1)] = 1.0;
            matrix[(k + 1, k)] = -1.0;
        }
        Ok(Self { order, matrix })
    }

    /// Wraps an arbitrary antisymmetric nonsingular matrix (used for
    /// non-standard plant CCR matrices loaded from files).
    pub fn from_matrix(matrix: RealMatrix) -> Result<Self> {
        ensure_square(&matrix, "CCR matrix")?;
        let order = matrix.nrows();
        if order == 0 || !order.is_multiple_of(2) {
            return Err(Error::Dimension(format!(
                "CCR matrix order must be even and positive, got {order}"
            )));
        }
        let scale = 1.0 + matrix.norm();
        if (&matrix + matrix.transpose()).norm() > 1e-12 * scale {
            return Err(Error::Precondition("CCR matrix must be antisymmetric".into()));
        }
        if matrix.clone().lu().determinant().abs() < 1e-12 {
            return Err(Error::Precondition("CCR matrix must be nonsingular".into()));
        }
        Ok(Self { order, matrix })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn matrix(&self) -> &RealMatrix {
        &self.matrix
    }

    /// True when the matrix is the standard block form, so that `Θ⁻¹ = −Θ`.
    pub fn is_standard(&self) -> bool {
        CcrMatrix::new(self.order).map(|s| s.matrix == self.matrix).unwrap_or(false)
    }

    /// Inverse; exact `−Θ` for the standard block form.
    pub fn inverse(&self) -> RealMatrix {
        if self.is_standard() {
            -&self.matrix
        } else {
            self.matrix
                .clone()
                .try_inverse()
                .expect("CCR matrix is nonsingular by construction")
        }
    }
}

/// Shorthand for [`CcrMatrix::new`].
pub fn ccr_block(n: usize) -> Result<CcrMatrix> {
    CcrMatrix::new(n)
}

pub fn block_diag(a: &RealMatrix, b: &RealMatrix) -> RealMatrix {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = RealMatrix::zeros(ra + rb, ca + cb);
    out.view_mut((0, 0), (ra, ca)).copy_from(a);
    out.view_mut((ra, ca), (rb, cb)).copy_from(b);
    out
}

/// Assembles `[[a, b], [c, d]]` from conforming blocks.
pub fn block2x2(a: &RealMatrix, b: &RealMatrix, c: &RealMatrix, d: &RealMatrix) -> RealMatrix {
    let (r1, c1) = a.shape();
    let (r2, c2) = d.shape();
    assert_eq!(b.shape(), (r1, c2));
    assert_eq!(c.shape(), (r2, c1));
    let mut out = RealMatrix::zeros(r1 + r2, c1 + c2);
    out.view_mut((0, 0), (r1, c1)).copy_from(a);
    out.view_mut((0, c1), (r1, c2)).copy_from(b);
    out.view_mut((r1, 0), (r2, c1)).copy_from(c);
    out.view_mut((r1, c1), (r2, c2)).copy_from(d);
    out
}

/// Eigenvalues of a real square matrix via the real Schur form.
pub fn eigenvalues(m: &RealMatrix) -> Result<Vec<Complex64>> {
    ensure_square(m, "eigenvalues")?;
    if !all_finite(m) {
        return Err(Error::Numerical("eigenvalues: matrix has non-finite entries".into()));
    }
    // QR iterations occasionally stall; the transpose and a rescaled copy
    // have the same spectrum but follow different shift sequences.
    let scale = m.norm().max(f64::MIN_POSITIVE);
    let attempts = [(m.clone(), 1.0), (m.transpose(), 1.0), (m / scale, scale)];
    for (mat, factor) in attempts {
        if let Some(schur) = Schur::try_new(mat, EIGEN_EPS, EIGEN_MAX_ITER) {
            return Ok(schur.complex_eigenvalues().iter().map(|z| z * factor).collect());
        }
    }
    Err(Error::Numerical(format!(
        "eigenvalue iteration did not converge (order {}, norm {:.3e})",
        m.nrows(),
        m.norm()
    )))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HurwitzVerdict {
    pub is_hurwitz: bool,
    pub spectral_abscissa: f64,
}

/// Hurwitz test with an absolute margin: passes iff `max Re λ < −margin`.
pub fn is_hurwitz(m: &RealMatrix, margin: f64) -> Result<HurwitzVerdict> {
    let eigs = eigenvalues(m)?;
    let spectral_abscissa = eigs.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    Ok(HurwitzVerdict { is_hurwitz: spectral_abscissa < -margin, spectral_abscissa })
}

/// Column-stacking vectorisation.
pub fn vec(m: &RealMatrix) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> RealMatrix {
    assert_eq!(v.len(), rows * cols);
    RealMatrix::from_column_slice(rows, cols, v.as_slice())
}

/// Kronecker sum `I ⊗ M + M ⊗ I`.
pub fn kron_sum(m: &RealMatrix) -> Result<RealMatrix> {
    ensure_square(m, "kron_sum")?;
    let id = RealMatrix::identity(m.nrows(), m.nrows());
    Ok(id.kronecker(m) + m.kronecker(&id))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LyapunovMethod {
    /// Solve the `n² × n²` Kronecker system by LU.
    #[default]
    Kronecker,
    /// Complex Schur form followed by triangular back-substitution.
    Schur,
}

#[derive(Debug, Clone)]
pub struct LyapunovSolution {
    pub x: RealMatrix,
    pub residual_norm: f64,
}

/// Solves `A X + X Aᵀ + W = 0` for Hurwitz `A`.
///
/// The dual equation `AᵀQ + QA + W = 0` is this call with `Aᵀ`.
pub fn solve_lyapunov(a: &RealMatrix, w: &RealMatrix) -> Result<LyapunovSolution> {
    solve_lyapunov_with(a, w, LyapunovMethod::Kronecker)
}

pub fn solve_lyapunov_with(
    a: &RealMatrix,
    w: &RealMatrix,
    method: LyapunovMethod,
) -> Result<LyapunovSolution> {
    ensure_square(a, "solve_lyapunov (A)")?;
    ensure_shape(w, a.nrows(), a.nrows(), "solve_lyapunov (W)")?;
    let verdict = is_hurwitz(a, 0.0)?;
    if !verdict.is_hurwitz {
        return Err(Error::Unstable { abscissa: verdict.spectral_abscissa });
    }
    let x = solve_lyapunov_unchecked(a, w, method)?;
    let residual_norm = (a * &x + &x * a.transpose() + w).norm();
    Ok(LyapunovSolution { x, residual_norm })
}

/// Lyapunov solve without the spectral precheck; the caller has already
/// established that `a` is Hurwitz.
pub(crate) fn solve_lyapunov_unchecked(
    a: &RealMatrix,
    w: &RealMatrix,
    method: LyapunovMethod,
) -> Result<RealMatrix> {
    let mut x = match method {
        LyapunovMethod::Kronecker => lyapunov_kronecker(a, w)?,
        LyapunovMethod::Schur => lyapunov_schur(a, w)?,
    };
    if (w - w.transpose()).norm() <= 1e-14 * (1.0 + w.norm()) {
        x = sym(&x);
    }
    Ok(x)
}

fn lyapunov_kronecker(a: &RealMatrix, w: &RealMatrix) -> Result<RealMatrix> {
    let n = a.nrows();
    let k = kron_sum(a)?;
    let rhs = -vec(w);
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("Kronecker-sum matrix is singular".into()))?;
    Ok(unvec(&sol, n, n))
}

fn lyapunov_schur(a: &RealMatrix, w: &RealMatrix) -> Result<RealMatrix> {
    let n = a.nrows();
    let ac = a.map(|x| Complex64::new(x, 0.0));
    let schur = Schur::try_new(ac, EIGEN_EPS, EIGEN_MAX_ITER)
        .ok_or_else(|| Error::Numerical("complex Schur iteration did not converge".into()))?;
    let (u, t) = schur.unpack();
    let wc = w.map(|x| Complex64::new(x, 0.0));
    let wt = u.adjoint() * wc * &u;

    // T Y + Y Tᴴ + W̃ = 0, columns from last to first.
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for j in (0..n).rev() {
        let mut rhs: Vec<Complex64> = (0..n).map(|i| -wt[(i, j)]).collect();
        for k in (j + 1)..n {
            let coef = t[(j, k)].conj();
            for (i, r) in rhs.iter_mut().enumerate() {
                *r -= y[(i, k)] * coef;
            }
        }
        let shift = t[(j, j)].conj();
        for i in (0..n).rev() {
            let mut acc = rhs[i];
            for l in (i + 1)..n {
                acc -= t[(i, l)] * y[(l, j)];
            }
            let diag = t[(i, i)] + shift;
            if diag.norm() == 0.0 {
                return Err(Error::Numerical("Schur Lyapunov: singular diagonal".into()));
            }
            y[(i, j)] = acc / diag;
        }
    }
    let x = &u * y * u.adjoint();
    Ok(x.map(|z| z.re))
}

/// `exp(λ Θ φ)` for symmetric `φ`; the result preserves `Θ` (`Σ Θ Σᵀ = Θ`).
pub fn symplectic_exp(theta: &CcrMatrix, phi: &RealMatrix, lambda: f64) -> Result<RealMatrix> {
    ensure_shape(phi, theta.order(), theta.order(), "symplectic_exp (phi)")?;
    if (phi - phi.transpose()).norm() > 1e-12 * (1.0 + phi.norm()) {
        return Err(Error::Precondition("symplectic_exp: phi must be symmetric".into()));
    }
    let generator = theta.matrix() * sym(phi) * lambda;
    Ok(generator.exp())
}

/// Smallest eigenvalue of the Hermitian matrix `P + iΘ` through its real
/// symmetric embedding `[[P, −Θ], [Θ, P]]` (same spectrum, each value doubled).
pub fn hermitian_min_eig(p: &RealMatrix, theta: &RealMatrix) -> f64 {
    let emb = block2x2(p, &(-theta), theta, p);
    emb.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}
