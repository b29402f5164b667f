//! Equilibrium shift of a converged quadratic under an L2 penalty increment.
//!
//! A converged loss is modelled locally as
//! `E(w) = (w - w*)ᵀ H (w - w*) + C` with `H` symmetric PSD. Adding
//! `δλ·wᵀw` moves the minimum to `ŵ* = (H + δλ I)⁻¹ H w*`. Coordinates with
//! larger curvature keep more of their magnitude, which is what lets a
//! uniformly growing penalty separate weights without ever estimating `H`.
//!
//! Everything here is a pure function of immutable inputs.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Componentwise symmetry slack accepted without a warning.
pub const SYMMETRY_WARN_TOL: f64 = 1e-9;
/// Smallest eigenvalue still considered PSD.
pub const PSD_EIGEN_TOL: f64 = -1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum QuadError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("hessian must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("hessian is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("penalty increment must be positive, got {0}")]
    NonPositiveIncrement(f64),
    #[error("curvature h_ii must be non-negative, got {0}")]
    NegativeCurvature(f64),
    #[error("linear system H + δλI is singular")]
    Singular,
    #[error("degenerate 2x2 determinant |Ĥ| = {0:e}")]
    DegenerateDeterminant(f64),
    #[error("gradient descent did not converge after {iters} iterations (|grad|∞ = {grad_norm:e})")]
    NotConverged { iters: usize, grad_norm: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, QuadError>;

/// Local quadratic model of a converged loss: Hessian, minimiser and offset.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel {
    hessian: DMatrix<f64>,
    w_star: DVector<f64>,
    offset: f64,
}

impl QuadraticModel {
    /// Validates and symmetrises the Hessian.
    ///
    /// Asymmetry above [`SYMMETRY_WARN_TOL`] is logged, then `(H + Hᵀ)/2` is
    /// stored. Eigenvalues below [`PSD_EIGEN_TOL`] are rejected.
    pub fn new(hessian: DMatrix<f64>, w_star: DVector<f64>, offset: f64) -> Result<Self> {
        let (rows, cols) = hessian.shape();
        if rows != cols {
            return Err(QuadError::NotSquare { rows, cols });
        }
        if w_star.len() != rows {
            return Err(QuadError::DimensionMismatch { expected: rows, got: w_star.len() });
        }
        if hessian.iter().any(|v| !v.is_finite()) {
            return Err(QuadError::NonFinite("hessian"));
        }
        if w_star.iter().any(|v| !v.is_finite()) || !offset.is_finite() {
            return Err(QuadError::NonFinite("w_star/offset"));
        }
        let asym = (&hessian - hessian.transpose()).amax();
        if asym > SYMMETRY_WARN_TOL {
            log::warn!("hessian asymmetric by {asym:e}; symmetrising");
        }
        let hessian = (&hessian + hessian.transpose()) * 0.5;
        let min_eigenvalue = min_eigenvalue(&hessian);
        if min_eigenvalue < PSD_EIGEN_TOL {
            return Err(QuadError::NotPsd { min_eigenvalue });
        }
        Ok(Self { hessian, w_star, offset })
    }

    /// Builds a model from row-major nested rows.
    pub fn from_rows(rows: &[Vec<f64>], w_star: &[f64], offset: f64) -> Result<Self> {
        let n = rows.len();
        for r in rows {
            if r.len() != n {
                return Err(QuadError::NotSquare { rows: n, cols: r.len() });
            }
        }
        let h = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::new(h, DVector::from_column_slice(w_star), offset)
    }

    pub fn dim(&self) -> usize {
        self.w_star.len()
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn w_star(&self) -> &DVector<f64> {
        &self.w_star
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        SymmetricEigen::new(self.hessian.clone()).eigenvalues
    }

    /// `E(w) = (w - w*)ᵀ H (w - w*) + C`.
    pub fn energy(&self, w: &DVector<f64>) -> f64 {
        let d = w - &self.w_star;
        d.dot(&(&self.hessian * &d)) + self.offset
    }

    /// `Ê(w) = E(w) + δλ wᵀw`.
    pub fn perturbed_energy(&self, w: &DVector<f64>, delta_lambda: f64) -> f64 {
        self.energy(w) + delta_lambda * w.dot(w)
    }

    /// Half-gradient of `Ê`: `H(w - w*) + δλ w`. Same zero set as `∇Ê`.
    pub fn perturbed_half_gradient(&self, w: &DVector<f64>, delta_lambda: f64) -> DVector<f64> {
        &self.hessian * (w - &self.w_star) + w * delta_lambda
    }

    /// Returns a copy with a different minimiser.
    pub fn with_w_star(&self, w_star: DVector<f64>) -> Result<Self> {
        if w_star.len() != self.dim() {
            return Err(QuadError::DimensionMismatch { expected: self.dim(), got: w_star.len() });
        }
        Ok(Self { w_star, ..self.clone() })
    }
}

fn min_eigenvalue(h: &DMatrix<f64>) -> f64 {
    if h.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(h.clone()).eigenvalues.min()
}

/// Increment `δλ` added to the L2 penalty factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyIncrement(f64);

impl PenaltyIncrement {
    pub fn new(delta_lambda: f64) -> Result<Self> {
        if !(delta_lambda.is_finite() && delta_lambda > 0.0) {
            return Err(QuadError::NonPositiveIncrement(delta_lambda));
        }
        Ok(Self(delta_lambda))
    }

    /// Unvalidated increment, for controls (`δλ = 0`) and negative penalties.
    pub fn from_raw(delta_lambda: f64) -> Self {
        Self(delta_lambda)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Whether `δλ` is small against the smallest positive eigenvalue of `H`
    /// (factor 10 margin). Logs a warning when it is not.
    pub fn is_small_for(self, model: &QuadraticModel) -> bool {
        let eig = model.eigenvalues();
        let min_pos = eig.iter().copied().filter(|&e| e > 1e-12).fold(f64::INFINITY, f64::min);
        let ok = self.0 * 10.0 <= min_pos;
        if !ok {
            log::warn!("δλ = {:e} is not small against min positive eigenvalue {min_pos:e}", self.0);
        }
        ok
    }
}

/// New minimiser and per-coordinate shrink ratios `ŵ*_i / w*_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkReport {
    pub w_hat: Vec<f64>,
    /// `None` where `w*_i = 0`.
    pub ratios: Vec<Option<f64>>,
}

impl ShrinkReport {
    pub fn new(w_star: &DVector<f64>, w_hat: &DVector<f64>) -> Self {
        let ratios = w_star
            .iter()
            .zip(w_hat.iter())
            .map(|(&s, &h)| if s == 0.0 { None } else { Some(h / s) })
            .collect();
        Self { w_hat: w_hat.iter().copied().collect(), ratios }
    }

    /// max − min over defined ratios; 0 with fewer than two.
    pub fn spread(&self) -> f64 {
        let defined: Vec<f64> = self.ratios.iter().flatten().copied().collect();
        if defined.len() < 2 {
            return 0.0;
        }
        let max = defined.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = defined.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }
}

/// Solves `(H + δλI) ŵ = H w*`.
///
/// Uses a Cholesky factorisation when `H + δλI` is positive definite and
/// falls back to LU otherwise. With `δλ ≤ 0` a rank-deficient system is
/// reported as [`QuadError::Singular`].
pub fn perturbed_minimum(model: &QuadraticModel, inc: PenaltyIncrement) -> Result<DVector<f64>> {
    let n = model.dim();
    let dl = inc.value();
    if !dl.is_finite() {
        return Err(QuadError::NonFinite("delta_lambda"));
    }
    let a = model.hessian() + DMatrix::<f64>::identity(n, n) * dl;
    let rhs = model.hessian() * model.w_star();
    if dl <= 0.0 {
        let eig = SymmetricEigen::new(a.clone()).eigenvalues;
        let scale = eig.amax().max(1.0);
        if eig.iter().any(|e| e.abs() <= 1e-12 * scale) {
            return Err(QuadError::Singular);
        }
    }
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(&rhs));
    }
    a.lu().solve(&rhs).ok_or(QuadError::Singular)
}

/// Shrink ratio of an isolated coordinate: `h / (h + δλ) = 1 / (δλ/h + 1)`.
pub fn diagonal_ratio(h_ii: f64, inc: PenaltyIncrement) -> Result<f64> {
    let dl = inc.value();
    if !(dl.is_finite() && dl > 0.0) {
        return Err(QuadError::NonPositiveIncrement(dl));
    }
    if !(h_ii >= 0.0) {
        return Err(QuadError::NegativeCurvature(h_ii));
    }
    if h_ii == 0.0 {
        return Ok(0.0);
    }
    Ok(h_ii / (h_ii + dl))
}

fn two_d_entries(model: &QuadraticModel, dl: f64) -> Result<(f64, f64, f64, f64)> {
    if model.dim() != 2 {
        return Err(QuadError::DimensionMismatch { expected: 2, got: model.dim() });
    }
    let h = model.hessian();
    let (h11, h12, h22) = (h[(0, 0)], h[(0, 1)], h[(1, 1)]);
    let det = (h11 + dl) * (h22 + dl) - h12 * h12;
    if !(det > 0.0) {
        return Err(QuadError::DegenerateDeterminant(det));
    }
    Ok((h11, h12, h22, det))
}

/// Approximate 2-D shrink ratios with the `δλ·h12·w*` cross-term dropped:
/// `r1 = (h11h22 + h11δλ − h12²)/|Ĥ|`, `r2 = (h11h22 + h22δλ − h12²)/|Ĥ|`.
pub fn two_d_ratios(model: &QuadraticModel, inc: PenaltyIncrement) -> Result<(f64, f64)> {
    let dl = inc.value();
    let (h11, h12, h22, det) = two_d_entries(model, dl)?;
    let base = h11 * h22 - h12 * h12;
    Ok(((base + h11 * dl) / det, (base + h22 * dl) / det))
}

/// Exact 2-D ratios from the closed-form inverse, cross-term included.
/// Entries with `w*_i = 0` are `None`.
pub fn two_d_ratios_exact(
    model: &QuadraticModel,
    inc: PenaltyIncrement,
) -> Result<(Option<f64>, Option<f64>)> {
    let dl = inc.value();
    let (h11, h12, h22, det) = two_d_entries(model, dl)?;
    let (w1, w2) = (model.w_star()[0], model.w_star()[1]);
    let base = h11 * h22 - h12 * h12;
    let hat1 = ((base + h11 * dl) * w1 + dl * h12 * w2) / det;
    let hat2 = ((base + h22 * dl) * w2 + dl * h12 * w1) / det;
    let r = |hat: f64, w: f64| if w == 0.0 { None } else { Some(hat / w) };
    Ok((r(hat1, w1), r(hat2, w2)))
}

/// Gradient descent on `Ê` from `w*`, stopping once `‖H(w−w*) + δλw‖∞ < tol`.
///
/// Independent of the factorisation path in [`perturbed_minimum`]; converges
/// for `0 < step < 2/(λ_max(H) + δλ)`.
pub fn gd_minimize_quadratic(
    model: &QuadraticModel,
    inc: PenaltyIncrement,
    step: f64,
    max_iters: usize,
    tol: f64,
) -> Result<DVector<f64>> {
    if !(tol > 0.0) {
        return Err(QuadError::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(QuadError::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let dl = inc.value();
    let mut w = model.w_star().clone();
    let mut grad_norm = f64::INFINITY;
    for _ in 0..=max_iters {
        let g = model.perturbed_half_gradient(&w, dl);
        grad_norm = g.amax();
        if !grad_norm.is_finite() {
            break;
        }
        if grad_norm < tol {
            return Ok(w);
        }
        w.axpy(-step, &g, 1.0);
    }
    Err(QuadError::NotConverged { iters: max_iters, grad_norm })
}

/// `‖closed form − GD minimiser‖∞` for one model, with GD run at step
/// `1/(λ_max + δλ)` until the gradient falls below `1e-13`.
pub fn oracle_residual(model: &QuadraticModel, inc: PenaltyIncrement) -> Result<f64> {
    let closed = perturbed_minimum(model, inc)?;
    let lmax = model.eigenvalues().max();
    let gd = gd_minimize_quadratic(model, inc, 1.0 / (lmax + inc.value()), 5_000_000, 1e-13)?;
    Ok((closed - gd).amax())
}

/// Applies cumulative penalties `k·δλ`, `k = 1..=steps`, to the original model.
pub fn iterated_shrink(
    model: &QuadraticModel,
    inc: PenaltyIncrement,
    steps: usize,
) -> Result<Vec<ShrinkReport>> {
    if steps == 0 {
        return Err(QuadError::InvalidArgument("steps must be >= 1".into()));
    }
    (1..=steps)
        .map(|k| {
            let cumulative = PenaltyIncrement::from_raw(inc.value() * k as f64);
            let w_hat = perturbed_minimum(model, cumulative)?;
            Ok(ShrinkReport::new(model.w_star(), &w_hat))
        })
        .collect()
}

/// Random symmetric PSD matrix `Q diag(λ) Qᵀ` with eigenvalues uniform in
/// `[lo, hi]` and `Q` orthogonalised from a Gaussian draw.
pub fn random_psd<R: Rng + ?Sized>(dim: usize, lo: f64, hi: f64, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.sample(StandardNormal));
    let q = g.qr().q();
    let eig = DVector::<f64>::from_fn(dim, |_, _| rng.random_range(lo..=hi));
    let h = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    (&h + h.transpose()) * 0.5
}
