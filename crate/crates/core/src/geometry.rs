//! Local transfer geometry of donor patching.
//!
//! The receiver's post-quantization objective is modeled around its own
//! quantization vector `ρ_R` as
//!
//! ```text
//! g(δ) = g0 + ½ (δ − ρ_R)ᵀ H (δ − ρ_R),    H ≻ 0
//! ```
//!
//! Along a donor direction `ρ_D` the best scale is
//! `λ* = ρ_DᵀHρ_R / ρ_DᵀHρ_D`, and the share of the receiver-side gain
//! `g(0) − g(ρ_R)` it recovers equals the squared `H`-cosine of `ρ_D` and
//! `ρ_R`. [`CubicModel`] adds a third-order perturbation with a known
//! Hessian-Lipschitz constant `L`, under which the same identity holds up to
//! a remainder bounded by `(L/6)(‖ρ_R‖³ + ‖λ*ρ_D − ρ_R‖³)`.
//!
//! Everything here is f64.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct QuadraticModel {
    h: DMatrix<f64>,
    rho_r: DVector<f64>,
    g0: f64,
}

impl QuadraticModel {
    pub fn new(h: DMatrix<f64>, rho_r: DVector<f64>, g0: f64) -> Result<Self> {
        let d = rho_r.len();
        if h.nrows() != d || h.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: h.nrows().max(h.ncols()),
            });
        }
        for i in 0..d {
            for j in (i + 1)..d {
                if (h[(i, j)] - h[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::NotPositiveDefinite(format!(
                        "asymmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if Cholesky::new(h.clone()).is_none() {
            return Err(Error::NotPositiveDefinite(
                "Cholesky factorization failed".into(),
            ));
        }
        Ok(Self { h, rho_r, g0 })
    }

    pub fn dim(&self) -> usize {
        self.rho_r.len()
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn rho_r(&self) -> &DVector<f64> {
        &self.rho_r
    }

    pub fn g0(&self) -> f64 {
        self.g0
    }

    /// `uᵀ H v`.
    pub fn h_inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.dot(&(&self.h * v))
    }

    fn check_dim(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Same Hessian and base value, receiver vector replaced.
    pub fn with_rho_r(&self, rho_r: DVector<f64>) -> Result<Self> {
        self.check_dim(&rho_r)?;
        Ok(Self {
            h: self.h.clone(),
            rho_r,
            g0: self.g0,
        })
    }
}

fn nonzero(v: &DVector<f64>, what: &'static str) -> Result<()> {
    if v.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroVector(what));
    }
    Ok(())
}

/// `g0 + ½(δ−ρ_R)ᵀH(δ−ρ_R)`.
pub fn quadratic_objective(m: &QuadraticModel, delta: &DVector<f64>) -> Result<f64> {
    m.check_dim(delta)?;
    let u = delta - &m.rho_r;
    Ok(m.g0 + 0.5 * m.h_inner(&u, &u))
}

/// Closed-form minimizer of `λ ↦ g(λ·ρ_D)`.
pub fn optimal_lambda(m: &QuadraticModel, rho_d: &DVector<f64>) -> Result<f64> {
    m.check_dim(rho_d)?;
    nonzero(rho_d, "donor vector")?;
    Ok(m.h_inner(rho_d, &m.rho_r) / m.h_inner(rho_d, rho_d))
}

/// Squared `H`-weighted cosine between `ρ_D` and `ρ_R`.
pub fn h_cos_sq(m: &QuadraticModel, rho_d: &DVector<f64>) -> Result<f64> {
    m.check_dim(rho_d)?;
    nonzero(rho_d, "donor vector")?;
    nonzero(&m.rho_r, "receiver vector")?;
    let cross = m.h_inner(rho_d, &m.rho_r);
    Ok(cross * cross / (m.h_inner(rho_d, rho_d) * m.h_inner(&m.rho_r, &m.rho_r)))
}

/// `[g(0) − g(λ*ρ_D)] / [g(0) − g(ρ_R)]` by direct evaluation of the
/// objective.
pub fn recovered_fraction(m: &QuadraticModel, rho_d: &DVector<f64>) -> Result<f64> {
    nonzero(&m.rho_r, "receiver vector")?;
    let lambda = optimal_lambda(m, rho_d)?;
    let g_zero = quadratic_objective(m, &DVector::zeros(m.dim()))?;
    let g_patch = quadratic_objective(m, &(rho_d * lambda))?;
    let g_ideal = quadratic_objective(m, &m.rho_r)?;
    let full_gain = g_zero - g_ideal;
    if full_gain == 0.0 {
        return Err(Error::Degenerate("g(0) equals g(rho_R)".into()));
    }
    Ok((g_zero - g_patch) / full_gain)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineSearchResult {
    pub lambda: f64,
    pub value: f64,
    /// The minimizer sits on the bracket edge, so the bracket may not
    /// contain an interior minimum.
    pub at_boundary: bool,
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
pub fn line_search_lambda<F>(mut objective: F, bracket: (f64, f64), tol: f64) -> LineSearchResult
where
    F: FnMut(f64) -> f64,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (lo, hi) = if bracket.0 <= bracket.1 {
        bracket
    } else {
        (bracket.1, bracket.0)
    };
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (objective(c), objective(d));
    // Stop once the bracket is within tolerance or stops shrinking.
    for _ in 0..500 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = objective(x);
    let (f_lo, f_hi) = (objective(lo), objective(hi));
    if f_lo <= fx && f_lo <= f_hi && (x - lo) <= 2.0 * tol.max(f64::EPSILON * lo.abs()) {
        return LineSearchResult {
            lambda: lo,
            value: f_lo,
            at_boundary: true,
        };
    }
    if f_hi <= fx && (hi - x) <= 2.0 * tol.max(f64::EPSILON * hi.abs()) {
        return LineSearchResult {
            lambda: hi,
            value: f_hi,
            at_boundary: true,
        };
    }
    LineSearchResult {
        lambda: x,
        value: fx,
        at_boundary: false,
    }
}

/// Golden-section search along `λ·ρ_D` that widens `[-10, 10]` until the
/// minimizer is interior.
pub fn line_search_along(
    m: &QuadraticModel,
    rho_d: &DVector<f64>,
    tol: f64,
) -> Result<LineSearchResult> {
    m.check_dim(rho_d)?;
    let mut half_width = 10.0;
    loop {
        let res = line_search_lambda(
            |l| quadratic_objective(m, &(rho_d * l)).expect("dimension checked"),
            (-half_width, half_width),
            tol,
        );
        if !res.at_boundary || half_width > 1e12 {
            return Ok(res);
        }
        half_width *= 8.0;
    }
}

/// One `c·(uᵀx)³` term of a cubic perturbation, `u` a unit vector.
#[derive(Debug, Clone)]
pub struct CubicTerm {
    pub coeff: f64,
    pub dir: DVector<f64>,
}

/// Quadratic model plus `(L/6)·Σ_k c_k (u_kᵀ(δ−ρ_R))³` with `Σ|c_k| = 1` and
/// unit `u_k`, whose Hessian is `L`-Lipschitz and vanishes at `ρ_R`.
#[derive(Debug, Clone)]
pub struct CubicModel {
    base: QuadraticModel,
    lipschitz: f64,
    terms: Vec<CubicTerm>,
}

impl CubicModel {
    /// Directions are normalized and coefficients rescaled to unit `ℓ1` norm.
    pub fn new(base: QuadraticModel, lipschitz: f64, terms: Vec<CubicTerm>) -> Result<Self> {
        if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "Lipschitz constant must be finite and >= 0, got {lipschitz}"
            )));
        }
        let l1: f64 = terms.iter().map(|t| t.coeff.abs()).sum();
        if lipschitz > 0.0 && l1 == 0.0 {
            return Err(Error::ZeroVector("cubic coefficients"));
        }
        let mut normalized = Vec::with_capacity(terms.len());
        for t in terms {
            base.check_dim(&t.dir)?;
            let n = t.dir.norm();
            if n == 0.0 {
                return Err(Error::ZeroVector("cubic direction"));
            }
            normalized.push(CubicTerm {
                coeff: if l1 > 0.0 { t.coeff / l1 } else { 0.0 },
                dir: t.dir / n,
            });
        }
        Ok(Self {
            base,
            lipschitz,
            terms: normalized,
        })
    }

    pub fn base(&self) -> &QuadraticModel {
        &self.base
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn terms(&self) -> &[CubicTerm] {
        &self.terms
    }

    /// Same perturbation, receiver vector replaced.
    pub fn with_rho_r(&self, rho_r: DVector<f64>) -> Result<Self> {
        Ok(Self {
            base: self.base.with_rho_r(rho_r)?,
            lipschitz: self.lipschitz,
            terms: self.terms.clone(),
        })
    }

    /// The cubic remainder `r(δ)` alone.
    pub fn remainder(&self, delta: &DVector<f64>) -> Result<f64> {
        self.base.check_dim(delta)?;
        if self.lipschitz == 0.0 {
            return Ok(0.0);
        }
        let u = delta - &self.base.rho_r;
        let s: f64 = self
            .terms
            .iter()
            .map(|t| t.coeff * t.dir.dot(&u).powi(3))
            .sum();
        Ok(self.lipschitz / 6.0 * s)
    }
}

pub fn cubic_objective(m: &CubicModel, delta: &DVector<f64>) -> Result<f64> {
    Ok(quadratic_objective(&m.base, delta)? + m.remainder(delta)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Deviation {
    pub epsilon: f64,
    pub bound: f64,
}

/// Departure of the cubic model from the cosine-squared recovery law, and
/// its theoretical bound (Euclidean norms).
pub fn second_order_deviation(m: &CubicModel, rho_d: &DVector<f64>) -> Result<Deviation> {
    let base = &m.base;
    let lambda = optimal_lambda(base, rho_d)?;
    let c = h_cos_sq(base, rho_d)?;
    let zero = DVector::zeros(base.dim());
    let patch = rho_d * lambda;
    let g_zero = cubic_objective(m, &zero)?;
    let g_patch = cubic_objective(m, &patch)?;
    let g_ideal = cubic_objective(m, &base.rho_r)?;
    let epsilon = (g_zero - g_patch) - c * (g_zero - g_ideal);
    let bound =
        m.lipschitz / 6.0 * (base.rho_r.norm().powi(3) + (&patch - &base.rho_r).norm().powi(3));
    Ok(Deviation { epsilon, bound })
}

/// Seeded random instances for Monte-Carlo verification.
pub mod sampling {
    use super::*;

    pub const MAX_CONDITION: f64 = 1e4;

    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    pub fn normal_vector(rng: &mut impl Rng, d: usize) -> DVector<f64> {
        DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)))
    }

    /// `AᵀA + 1e-3·d·I` with `A` standard normal, eigenvalues clipped from
    /// below so the condition number is at most `max_cond`.
    pub fn random_spd(rng: &mut impl Rng, d: usize, max_cond: f64) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut h = a.transpose() * &a;
        for i in 0..d {
            h[(i, i)] += 1e-3 * d as f64;
        }
        let eig = SymmetricEigen::new(h);
        let top = eig.eigenvalues.max();
        let floor = top / max_cond;
        let clipped = eig.eigenvalues.map(|e| e.max(floor));
        let q = &eig.eigenvectors;
        let h = q * DMatrix::from_diagonal(&clipped) * q.transpose();
        (&h + h.transpose()) * 0.5
    }

    /// Rescales `v` to `H`-norm `target`.
    pub fn with_h_norm(h: &DMatrix<f64>, v: DVector<f64>, target: f64) -> DVector<f64> {
        let n = v.dot(&(h * &v)).sqrt();
        v * (target / n)
    }

    /// A receiver model and a donor vector partially aligned with `ρ_R`.
    /// Both vectors have `H`-norm in `[0.5, 2]`.
    pub fn random_instance(seed: u64, d: usize) -> (QuadraticModel, DVector<f64>) {
        let mut rng = rng(seed);
        let h = random_spd(&mut rng, d, MAX_CONDITION);
        let rho_r = normal_vector(&mut rng, d);
        let rho_r = with_h_norm(&h, rho_r, rng.random_range(0.5..2.0));
        let mix: f64 = rng.random_range(-2.0..2.0);
        let rho_d = &rho_r * mix + normal_vector(&mut rng, d);
        let rho_d = with_h_norm(&h, rho_d, rng.random_range(0.5..2.0));
        let g0 = rng.random_range(-1.0..1.0);
        let model = QuadraticModel::new(h, rho_r, g0).expect("clipped spectrum is SPD");
        (model, rho_d)
    }

    /// A cubic perturbation of [`random_instance`] with `min(d, 3)` terms.
    pub fn random_cubic(seed: u64, d: usize, lipschitz: f64) -> (CubicModel, DVector<f64>) {
        let (base, rho_d) = random_instance(seed, d);
        let mut rng = rng(seed ^ 0x9e37_79b9_7f4a_7c15);
        let terms = (0..d.min(3))
            .map(|_| CubicTerm {
                coeff: rng.sample::<f64, _>(StandardNormal),
                dir: normal_vector(&mut rng, d),
            })
            .collect();
        let model = CubicModel::new(base, lipschitz, terms).expect("valid random terms");
        (model, rho_d)
    }
}

/// Per-instance outcome of [`verify`].
#[derive(Debug, Clone, Serialize)]
pub struct InstanceRecord {
    pub index: usize,
    pub seed: u64,
    pub dim: usize,
    pub lipschitz: f64,
    pub lambda_star: f64,
    pub lambda_search: f64,
    pub cos_sq: f64,
    pub fraction: f64,
    pub epsilon: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub instances: Vec<InstanceRecord>,
    pub passed: usize,
    pub failed: usize,
}

/// Tolerances applied by [`verify`].
pub mod tolerance {
    pub const FRACTION_VS_COS_SQ: f64 = 1e-9;
    pub const LAMBDA_VS_SEARCH: f64 = 1e-6;
    pub const QUADRATIC_EPSILON: f64 = 1e-10;
    pub const SEARCH_TOL: f64 = 1e-10;
}

/// Runs `count` seeded instances, cycling over `dims`. Every fifth instance
/// is purely quadratic (`L = 0`); the rest draw `L` from `[0.1, 5)`.
pub fn verify(count: usize, dims: &[usize], seed: u64) -> Result<VerifyReport> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::InvalidConfig(
            "dimensions must be nonempty and positive".into(),
        ));
    }
    let mut lrng = sampling::rng(seed);
    let mut instances = Vec::with_capacity(count);
    for index in 0..count {
        let dim = dims[index % dims.len()];
        let inst_seed = seed.wrapping_mul(1_000_003).wrapping_add(index as u64);
        let drawn: f64 = lrng.random_range(0.1..5.0);
        let lipschitz = if index % 5 == 0 { 0.0 } else { drawn };
        let (cubic, rho_d) = sampling::random_cubic(inst_seed, dim, lipschitz);
        let base = cubic.base();
        let lambda_star = optimal_lambda(base, &rho_d)?;
        let lambda_search = line_search_along(base, &rho_d, tolerance::SEARCH_TOL)?.lambda;
        let cos_sq = h_cos_sq(base, &rho_d)?;
        let fraction = recovered_fraction(base, &rho_d)?;
        let dev = second_order_deviation(&cubic, &rho_d)?;
        let eps_ok = if lipschitz == 0.0 {
            dev.epsilon.abs() <= tolerance::QUADRATIC_EPSILON
        } else {
            dev.epsilon.abs() <= dev.bound
        };
        let pass = (fraction - cos_sq).abs() <= tolerance::FRACTION_VS_COS_SQ
            && (lambda_star - lambda_search).abs() <= tolerance::LAMBDA_VS_SEARCH
            && (0.0..=1.0 + 1e-12).contains(&cos_sq)
            && eps_ok;
        instances.push(InstanceRecord {
            index,
            seed: inst_seed,
            dim,
            lipschitz,
            lambda_star,
            lambda_search,
            cos_sq,
            fraction,
            epsilon: dev.epsilon,
            bound: dev.bound,
            pass,
        });
    }
    let passed = instances.iter().filter(|r| r.pass).count();
    Ok(VerifyReport {
        failed: instances.len() - passed,
        passed,
        instances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_case() -> (QuadraticModel, DVector<f64>) {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let m = QuadraticModel::new(h, DVector::from_vec(vec![1.0, 1.0]), 0.0).unwrap();
        (m, DVector::from_vec(vec![1.0, 0.0]))
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    #[test]
    fn rejects_non_spd() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            QuadraticModel::new(h, v(&[1.0, 1.0]), 0.0),
            Err(Error::NotPositiveDefinite(_))
        ));
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(QuadraticModel::new(h, v(&[1.0, 1.0]), 0.0).is_err());
        let h = DMatrix::identity(3, 3);
        assert!(matches!(
            QuadraticModel::new(h, v(&[1.0, 1.0]), 0.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn objective_examples() {
        let (m, _) = diag_case();
        assert_eq!(quadratic_objective(&m, m.rho_r()).unwrap(), 0.0);
        // Hand expansion: ½(2·1² + 1·1²) = 1.5.
        assert_eq!(quadratic_objective(&m, &v(&[0.0, 0.0])).unwrap(), 1.5);
        assert_eq!(
            quadratic_objective(&m, &(m.rho_r() * 2.0)).unwrap(),
            quadratic_objective(&m, &v(&[0.0, 0.0])).unwrap()
        );
        assert!(quadratic_objective(&m, &v(&[1.0])).is_err());
    }

    #[test]
    fn optimal_lambda_examples() {
        let (m, rho_d) = diag_case();
        assert_eq!(optimal_lambda(&m, m.rho_r()).unwrap(), 1.0);
        assert!((optimal_lambda(&m, &(m.rho_r() * 4.0)).unwrap() - 0.25).abs() < 1e-15);
        let search = line_search_lambda(
            |l| quadratic_objective(&m, &(&rho_d * l)).unwrap(),
            (-10.0, 10.0),
            1e-8,
        );
        assert!((search.lambda - 1.0).abs() < 1e-6);
        assert!(!search.at_boundary);
        assert_eq!(optimal_lambda(&m, &rho_d).unwrap(), 1.0);
        assert!(matches!(
            optimal_lambda(&m, &v(&[0.0, 0.0])),
            Err(Error::ZeroVector(_))
        ));
    }

    #[test]
    fn cos_sq_examples() {
        let (m, rho_d) = diag_case();
        // (ρ_DᵀHρ_R)² / (ρ_DᵀHρ_D · ρ_RᵀHρ_R) = 2² / (2·3).
        let oracle = {
            let hd = [2.0 * rho_d[0], rho_d[1]];
            let cross = hd[0] * 1.0 + hd[1] * 1.0;
            cross * cross / ((hd[0] * rho_d[0] + hd[1] * rho_d[1]) * 3.0)
        };
        assert!((oracle - 2.0 / 3.0).abs() < 1e-15);
        assert!((h_cos_sq(&m, &rho_d).unwrap() - oracle).abs() < 1e-15);
        assert!((recovered_fraction(&m, &rho_d).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((h_cos_sq(&m, &(m.rho_r() * -3.0)).unwrap() - 1.0).abs() < 1e-15);

        let id = QuadraticModel::new(DMatrix::identity(2, 2), v(&[1.0, 0.0]), 0.0).unwrap();
        assert_eq!(h_cos_sq(&id, &v(&[0.0, 2.0])).unwrap(), 0.0);
    }

    #[test]
    fn fraction_extremes() {
        let (m, _) = diag_case();
        assert!((recovered_fraction(&m, m.rho_r()).unwrap() - 1.0).abs() < 1e-15);
        // H-orthogonal to (1,1) under diag(2,1): (1,-2).
        let orth = v(&[1.0, -2.0]);
        assert_eq!(m.h_inner(&orth, m.rho_r()), 0.0);
        assert_eq!(recovered_fraction(&m, &orth).unwrap(), 0.0);
        let zero_r = m.with_rho_r(v(&[0.0, 0.0])).unwrap();
        assert!(recovered_fraction(&zero_r, &orth).is_err());
    }

    #[test]
    fn line_search_contract() {
        let r = line_search_lambda(|l| (l - 1.0) * (l - 1.0), (-10.0, 10.0), 1e-8);
        assert!((r.lambda - 1.0).abs() <= 1e-8);
        assert!(!r.at_boundary);
        let r = line_search_lambda(|l| l, (-3.0, 5.0), 1e-8);
        assert_eq!(r.lambda, -3.0);
        assert!(r.at_boundary);
        let r = line_search_lambda(|l| -l, (-3.0, 5.0), 1e-8);
        assert_eq!(r.lambda, 5.0);
        assert!(r.at_boundary);
    }

    #[test]
    fn cubic_degenerate_cases() {
        let (base, rho_d) = diag_case();
        let terms = vec![CubicTerm {
            coeff: 1.0,
            dir: v(&[1.0, 1.0]),
        }];
        let flat = CubicModel::new(base.clone(), 0.0, terms.clone()).unwrap();
        for d in [v(&[0.0, 0.0]), v(&[0.3, -2.0]), rho_d.clone()] {
            assert_eq!(
                cubic_objective(&flat, &d).unwrap(),
                quadratic_objective(&base, &d).unwrap()
            );
        }
        let bent = CubicModel::new(base.clone(), 2.5, terms).unwrap();
        assert_eq!(cubic_objective(&bent, base.rho_r()).unwrap(), base.g0());
        let dev = second_order_deviation(&flat, &rho_d).unwrap();
        assert!(dev.epsilon.abs() <= 1e-10);
        assert_eq!(dev.bound, 0.0);
        assert!(CubicModel::new(base.clone(), -1.0, vec![]).is_err());
        assert!(CubicModel::new(base, 1.0, vec![]).is_err());
    }

    #[test]
    fn cubic_remainder_respects_lipschitz_bound() {
        // |r(δ)| ≤ (L/6)‖δ − ρ‖³ for the normalized family.
        for seed in 0..50 {
            let (m, _) = sampling::random_cubic(seed, 5, 3.0);
            let mut rng = sampling::rng(seed + 1000);
            let delta = sampling::normal_vector(&mut rng, 5);
            let r = m.remainder(&delta).unwrap();
            let bound = 3.0 / 6.0 * (&delta - m.base().rho_r()).norm().powi(3);
            assert!(r.abs() <= bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn sampled_spd_respects_condition_cap() {
        let mut rng = sampling::rng(3);
        for d in [2, 8, 32] {
            let h = sampling::random_spd(&mut rng, d, 1e4);
            let eig = SymmetricEigen::new(h.clone()).eigenvalues;
            assert!(eig.min() > 0.0);
            assert!(eig.max() / eig.min() <= 1e4 * (1.0 + 1e-8));
            assert!(QuadraticModel::new(h, DVector::zeros(d), 0.0).is_ok());
        }
    }

    #[test]
    fn verify_small_batch_passes() {
        let report = verify(40, &[2, 8], 11).unwrap();
        assert_eq!(
            report.failed,
            0,
            "{:?}",
            report.instances.iter().find(|r| !r.pass)
        );
        assert!(report.instances.iter().any(|r| r.lipschitz == 0.0));
        assert!(verify(3, &[], 1).is_err());
    }
}
