//! Kinetics linearized around an equilibrium: renormalized dispersion, the
//! decay rate `ν(k)`, the symmetric operator `L` and Kubo correlations.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::collision::{CollisionError, CollisionTable};
use crate::lattice::DispersionField;
use crate::numerics::{mean, Neumaier};
use crate::state::{equilibrium_field, DistributionField, InverseTemperature, StateError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearizedError {
    #[error(transparent)]
    Collision(#[from] CollisionError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("dense linearized operator limited to {max} grid points, got {points}")]
    GridTooLarge { points: usize, max: usize },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn equilibrium(table: &CollisionTable, beta: f64, mu: f64) -> Result<DistributionField, LinearizedError> {
    Ok(equilibrium_field(table.dispersion(), InverseTemperature::Finite(beta), mu, table.statistics())?)
}

/// What the mean-field shift is computed from.
#[derive(Debug, Clone, Copy)]
pub enum Reference<'a> {
    Field(&'a DistributionField),
    Equilibrium { beta: f64, mu: f64 },
}

/// `ω^λ = ω + λ(R₀ + λR₁)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenormalizedDispersion {
    pub lambda: f64,
    pub r0: Vec<f64>,
    /// Only defined around an equilibrium (it is a `β`-derivative).
    pub r1: Option<Vec<f64>>,
    pub omega_lambda: Vec<f64>,
}

/// `N^{-d} Σ_{k₂} g(k₂) (V̂(0) + θV̂(k₁−k₂))` at every `k₁`.
fn mean_field(disp: &DispersionField, theta: f64, g: &[f64]) -> Vec<f64> {
    let grid = disp.grid();
    let vhat = disp.potential_hat();
    let v0 = vhat[grid.index(&vec![0; grid.dim()])];
    (0..grid.len())
        .map(|k1| {
            let mut acc = Neumaier::default();
            for (k2, gk) in g.iter().enumerate() {
                acc.add(gk * (v0 + theta * vhat[grid.sub(k1, k2)]));
            }
            acc.total() / g.len() as f64
        })
        .collect()
}

pub fn renormalize(
    disp: &DispersionField,
    statistics: crate::state::Statistics,
    reference: Reference<'_>,
    lambda: f64,
) -> Result<RenormalizedDispersion, LinearizedError> {
    let theta = statistics.require_theta("renormalization")?;
    let (field, beta) = match reference {
        Reference::Field(f) => {
            if f.grid() != disp.grid() {
                return Err(CollisionError::GridMismatch.into());
            }
            (f.clone(), None)
        }
        Reference::Equilibrium { beta, mu } => {
            (equilibrium_field(disp, InverseTemperature::Finite(beta), mu, statistics)?, Some(beta))
        }
    };
    let w = field.values();
    let r0 = mean_field(disp, theta, w);
    let r1 = beta.map(|b| {
        let ww: Vec<f64> = w.iter().map(|x| x * (1.0 + theta * x)).collect();
        let fluct = mean_field(disp, theta, &ww);
        fluct.iter().zip(&r0).map(|(a, b0)| -b * a * b0).collect::<Vec<f64>>()
    });
    let omega_lambda = disp
        .omega()
        .iter()
        .enumerate()
        .map(|(k, o)| {
            let second = r1.as_ref().map_or(0.0, |r| r[k]);
            o + lambda * (r0[k] + lambda * second)
        })
        .collect();
    Ok(RenormalizedDispersion { lambda, r0, r1, omega_lambda })
}

/// `Re ν(k₁) = (π/2) N^{-2d} Σ (V̂₂₃+θV̂₂₄)² δ_ε(Ω) W̃₂W₃W₄ / W₁` at the
/// equilibrium `(β, μ)`.
pub fn decay_rate(table: &CollisionTable, beta: f64, mu: f64) -> Result<Vec<f64>, LinearizedError> {
    let theta = table.theta()?;
    let eq = equilibrium(table, beta, mu)?;
    let w = eq.values();
    let tilde = eq.tilde();
    let raw = table.quadrature(|q| {
        let c = q.v23 + theta * q.v24;
        0.5 * PI * c * c * q.delta * tilde[q.k2] * w[q.k3] * w[q.k4]
    });
    Ok(raw.iter().zip(w).map(|(r, wk)| r / wk).collect())
}

/// `ν` from the time integral
/// `−∫₀^∞ dt e^{−εt} N^{-2d} Σ e^{iΩt} V̂₂₃(V̂₂₄+θV̂₂₃)(W₃W₄ − W₂W₄ − θW₂W̃₃)`
/// with the trapezoid rule of step `h`, summed in closed form over all steps.
/// The damping is the table width `ε`.
pub fn decay_rate_time_integral(
    table: &CollisionTable,
    beta: f64,
    mu: f64,
    h: f64,
) -> Result<Vec<Complex64>, LinearizedError> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(LinearizedError::InvalidArgument(format!("time step must be positive, got {h}")));
    }
    let theta = table.theta()?;
    let eq = equilibrium(table, beta, mu)?;
    let w = eq.values();
    let tilde = eq.tilde();
    let eta = table.epsilon();
    let m = w.len();
    let out = (0..m)
        .into_par_iter()
        .map(|k1| {
            table.quadrature_at_complex(k1, |q| {
                let coupling = q.v23 * (q.v24 + theta * q.v23);
                let bracket = w[q.k3] * w[q.k4] - w[q.k2] * w[q.k4] - theta * w[q.k2] * tilde[q.k3];
                // h Σ_{n≥0}' z^n with z = e^{(−η+iΩ)h}
                let z = Complex64::new(-eta * h, q.gap * h).exp();
                let trapezoid = h * (1.0 / (1.0 - z) - 0.5);
                -coupling * bracket * trapezoid
            })
        })
        .collect();
    Ok(out)
}

/// Dense `L` with `⟨f, Lf⟩ = N^{-d} fᵀ L f` and the weights `U_β`.
#[derive(Debug, Clone)]
pub struct LinearizedOperator {
    pub matrix: DMatrix<f64>,
    /// `(W_β W̃_β)^{1/2}`
    pub ubeta: Vec<f64>,
}

pub const MAX_POINTS: usize = 4096;

/// Accumulates `(π/4) N^{-2d} Σ w v vᵀ` over all quadruples, with
/// `v = e₁+e₂−e₃−e₄` and `w = |V̂₂₃+θV̂₂₄|² δ_ε W₁W₂W̃₃W̃₄`. Entries `(a,b)`
/// and `(b,a)` receive identical contributions in identical order, so the
/// matrix is exactly symmetric.
pub fn assemble_l(table: &CollisionTable, beta: f64, mu: f64) -> Result<LinearizedOperator, LinearizedError> {
    let theta = table.theta()?;
    let m = table.grid().len();
    if m > MAX_POINTS {
        return Err(LinearizedError::GridTooLarge { points: m, max: MAX_POINTS });
    }
    let eq = equilibrium(table, beta, mu)?;
    let w = eq.values();
    let tilde = eq.tilde();
    let scale = 0.25 * PI * table.pair_weight();

    // chunk count depends on the grid only, so the merge order is fixed
    let chunks = (((1usize << 25) / (m * m)).clamp(1, 8)).min(m);
    let bounds: Vec<(usize, usize)> = (0..chunks).map(|c| (c * m / chunks, (c + 1) * m / chunks)).collect();
    let partials: Vec<Vec<f64>> = bounds
        .par_iter()
        .map(|&(lo, hi)| {
            let mut acc = vec![0.0; m * m];
            let mut v: Vec<(usize, f64)> = Vec::with_capacity(4);
            for k1 in lo..hi {
                table.for_each_quad(k1, |q| {
                    let c = q.v23 + theta * q.v24;
                    let weight = c * c * q.delta * w[q.k1] * w[q.k2] * tilde[q.k3] * tilde[q.k4];
                    if weight == 0.0 {
                        return;
                    }
                    v.clear();
                    for (k, s) in [(q.k1, 1.0), (q.k2, 1.0), (q.k3, -1.0), (q.k4, -1.0)] {
                        match v.iter_mut().find(|e| e.0 == k) {
                            Some(e) => e.1 += s,
                            None => v.push((k, s)),
                        }
                    }
                    for &(a, va) in &v {
                        if va == 0.0 {
                            continue;
                        }
                        for &(b, vb) in &v {
                            acc[a * m + b] += weight * va * vb;
                        }
                    }
                });
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; m * m];
    for p in &partials {
        for (t, x) in total.iter_mut().zip(p) {
            *t += x;
        }
    }
    let matrix = DMatrix::from_fn(m, m, |a, b| scale * total[a * m + b]);
    let ubeta = w.iter().zip(&tilde).map(|(a, b)| (a * b).sqrt()).collect();
    Ok(LinearizedOperator { matrix, ubeta })
}

impl LinearizedOperator {
    pub fn dim(&self) -> usize {
        self.ubeta.len()
    }

    /// Largest absolute entry.
    pub fn max_norm(&self) -> f64 {
        self.matrix.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(f)).iter().copied().collect()
    }

    /// `⟨f, Lf⟩ = N^{-d} fᵀ L f`.
    pub fn quadratic_form(&self, f: &[f64]) -> f64 {
        let lf = self.apply(f);
        let terms: Vec<f64> = f.iter().zip(&lf).map(|(a, b)| a * b).collect();
        mean(&terms)
    }

    /// `max |L − Lᵀ|`.
    pub fn asymmetry(&self) -> f64 {
        (&self.matrix - self.matrix.transpose()).iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `U_β^{-1} L U_β^{-1}`.
    pub fn generator(&self) -> DMatrix<f64> {
        let u = &self.ubeta;
        DMatrix::from_fn(self.dim(), self.dim(), |a, b| self.matrix[(a, b)] / (u[a] * u[b]))
    }
}

/// Direct quadruple sum `(π/4) N^{-3d} Σ w (f₁+f₂−f₃−f₄)²`, independent of
/// the assembled matrix.
pub fn quadratic_form_direct(table: &CollisionTable, beta: f64, mu: f64, f: &[f64]) -> Result<f64, LinearizedError> {
    let theta = table.theta()?;
    let eq = equilibrium(table, beta, mu)?;
    if f.len() != eq.values().len() {
        return Err(LinearizedError::LengthMismatch { expected: eq.values().len(), got: f.len() });
    }
    let w = eq.values();
    let tilde = eq.tilde();
    let per = table.quadrature(|q| {
        let c = q.v23 + theta * q.v24;
        let s = f[q.k1] + f[q.k2] - f[q.k3] - f[q.k4];
        c * c * q.delta * w[q.k1] * w[q.k2] * tilde[q.k3] * tilde[q.k4] * s * s
    });
    Ok(0.25 * PI * mean(&per))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Eigenvalues with `|λ| ≤ tol · ‖L‖_max`.
    pub kernel_dim: usize,
    /// Smallest eigenvalue above the kernel threshold.
    pub gap: Option<f64>,
    pub norm: f64,
}

fn sorted_eigen(matrix: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(matrix);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Eigenvalues of `L` (the first `count` if given), kernel dimension and gap.
pub fn spectrum(op: &LinearizedOperator, count: Option<usize>, tol: f64) -> Spectrum {
    let norm = op.max_norm();
    let (mut eigenvalues, _) = sorted_eigen(op.matrix.clone());
    let threshold = tol * norm;
    let kernel_dim = eigenvalues.iter().filter(|l| l.abs() <= threshold).count();
    let gap = eigenvalues.iter().copied().find(|&l| l > threshold);
    if let Some(c) = count {
        eigenvalues.truncate(c);
    }
    Spectrum { eigenvalues, kernel_dim, gap, norm }
}

/// Eigenvectors of `L` spanning its numerical kernel, as columns.
pub fn kernel_basis(op: &LinearizedOperator, tol: f64) -> DMatrix<f64> {
    let threshold = tol * op.max_norm();
    let (values, vectors) = sorted_eigen(op.matrix.clone());
    let cols: Vec<usize> = (0..values.len()).filter(|&i| values[i].abs() <= threshold).collect();
    DMatrix::from_fn(vectors.nrows(), cols.len(), |r, c| vectors[(r, cols[c])])
}

/// Eigendecomposition of `G = U_β^{-1} L U_β^{-1}` reused across times.
#[derive(Debug, Clone)]
pub struct KuboPropagator {
    /// Ascending, clipped at zero (`G` is semidefinite by construction).
    pub rates: Vec<f64>,
    vectors: DMatrix<f64>,
    ubeta: Vec<f64>,
}

impl KuboPropagator {
    pub fn new(op: &LinearizedOperator) -> Self {
        let (values, vectors) = sorted_eigen(op.generator());
        let rates = values.into_iter().map(|l| l.max(0.0)).collect();
        Self { rates, vectors, ubeta: op.ubeta.clone() }
    }

    /// `N^{-d} ⟨U η̂, e^{−G|t|} U η̂⟩` at each time.
    pub fn correlation(&self, eta_hat: &[f64], times: &[f64]) -> Result<Vec<f64>, LinearizedError> {
        let m = self.ubeta.len();
        if eta_hat.len() != m {
            return Err(LinearizedError::LengthMismatch { expected: m, got: eta_hat.len() });
        }
        let x = DVector::from_iterator(m, eta_hat.iter().zip(&self.ubeta).map(|(e, u)| e * u));
        let coeffs = self.vectors.tr_mul(&x);
        Ok(times
            .iter()
            .map(|t| {
                let terms: Vec<f64> = coeffs
                    .iter()
                    .zip(&self.rates)
                    .map(|(c, r)| c * c * (-r * t.abs()).exp())
                    .collect();
                crate::numerics::pairwise_sum(&terms) / m as f64
            })
            .collect())
    }

    /// Smallest rate of `G` above `tol · max rate`.
    pub fn gap(&self, tol: f64) -> Option<f64> {
        let top = self.rates.last().copied().unwrap_or(0.0);
        self.rates.iter().copied().find(|&r| r > tol * top)
    }
}

pub fn kubo_correlation(op: &LinearizedOperator, eta_hat: &[f64], times: &[f64]) -> Result<Vec<f64>, LinearizedError> {
    KuboPropagator::new(op).correlation(eta_hat, times)
}

/// Equal-time value `N^{-d} Σ |η̂|² W_β W̃_β`.
pub fn static_correlation(op: &LinearizedOperator, eta_hat: &[f64]) -> f64 {
    let terms: Vec<f64> = eta_hat.iter().zip(&op.ubeta).map(|(e, u)| e * e * u * u).collect();
    mean(&terms)
}

/// `N^{-d} Σ f̂₁ f̂₂ W_β e^{−ν t}`.
pub fn exponential_decay_check(nu: &[f64], f1: &[f64], f2: &[f64], w_beta: &[f64], t: f64) -> f64 {
    let terms: Vec<f64> = (0..nu.len()).map(|k| f1[k] * f2[k] * w_beta[k] * (-nu[k] * t).exp()).collect();
    mean(&terms)
}

/// Partial sums `Σ_{n≤K} (−t)ⁿ/n! N^{-d} Σ f̂₁f̂₂W_β νⁿ` for `K = 0..=order`.
pub fn decay_series_partial_sums(nu: &[f64], f1: &[f64], f2: &[f64], w_beta: &[f64], t: f64, order: usize) -> Vec<f64> {
    let mut term: Vec<f64> = (0..nu.len()).map(|k| f1[k] * f2[k] * w_beta[k]).collect();
    let mut sums = Vec::with_capacity(order + 1);
    let mut running = 0.0;
    for n in 0..=order {
        running += mean(&term);
        sums.push(running);
        for (k, x) in term.iter_mut().enumerate() {
            *x *= -t * nu[k] / (n + 1) as f64;
        }
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{HoppingModel, MomentumGrid, Site};
    use crate::state::Statistics;

    fn disp(n: usize, v1: f64, v2: f64) -> DispersionField {
        let pot = vec![
            Site::new(vec![0, 0], 1.0),
            Site::new(vec![1, 0], v1),
            Site::new(vec![-1, 0], v1),
            Site::new(vec![0, 1], v2),
            Site::new(vec![0, -1], v2),
        ];
        HoppingModel::nearest_neighbor(2, 1.0, pot).unwrap().dispersion(&MomentumGrid::new(2, n).unwrap()).unwrap()
    }

    #[test]
    fn renormalization_at_zero_coupling_is_identity() {
        let d = disp(4, 0.3, 0.1);
        let r = renormalize(&d, Statistics::Boson, Reference::Equilibrium { beta: 1.0, mu: 0.0 }, 0.0).unwrap();
        assert_eq!(r.omega_lambda, d.omega());
        assert!(r.r1.is_some());
    }

    #[test]
    fn contact_potential_shift_is_flat() {
        let g = MomentumGrid::new(2, 4).unwrap();
        let d = HoppingModel::nearest_neighbor(2, 1.0, HoppingModel::contact_potential(2, 1.5))
            .unwrap()
            .dispersion(&g)
            .unwrap();
        let r = renormalize(&d, Statistics::Boson, Reference::Equilibrium { beta: 1.0, mu: 0.5 }, 0.1).unwrap();
        let eq = equilibrium_field(&d, InverseTemperature::Finite(1.0), 0.5, Statistics::Boson).unwrap();
        let rho = mean(eq.values());
        for x in &r.r0 {
            assert!((x - 3.0 * rho).abs() < 1e-14);
        }
    }

    #[test]
    fn matrix_reproduces_quadratic_form() {
        let d = disp(4, 0.3, 0.1);
        let t = CollisionTable::build(&d, Statistics::Boson, 0.2).unwrap();
        let op = assemble_l(&t, 1.0, 0.5).unwrap();
        assert_eq!(op.asymmetry(), 0.0);
        let f: Vec<f64> = (0..16).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
        let direct = quadratic_form_direct(&t, 1.0, 0.5, &f).unwrap();
        assert!((op.quadratic_form(&f) - direct).abs() <= 1e-12 * direct.abs());
    }

    #[test]
    fn zero_potential_gives_zero_operator() {
        let g = MomentumGrid::new(2, 4).unwrap();
        let zero = HoppingModel::nearest_neighbor(2, 1.0, vec![]).unwrap().dispersion(&g).unwrap();
        let t = CollisionTable::build(&zero, Statistics::Fermion, 0.2).unwrap();
        let op = assemble_l(&t, 1.0, 4.0).unwrap();
        let s = spectrum(&op, None, 1e-10);
        assert!(s.eigenvalues.iter().all(|&l| l == 0.0));
        assert_eq!(s.gap, None);
    }

    #[test]
    fn kubo_starts_at_static_value() {
        let d = disp(4, 0.3, 0.1);
        let t = CollisionTable::build(&d, Statistics::Fermion, 0.2).unwrap();
        let op = assemble_l(&t, 0.8, 4.0).unwrap();
        let eta: Vec<f64> = (0..16).map(|k| d.gradient(k)[0]).collect();
        let c = kubo_correlation(&op, &eta, &[0.0, 1.0, 2.0]).unwrap();
        let s = static_correlation(&op, &eta);
        assert!((c[0] - s).abs() <= 1e-12 * s);
        assert!(c[1] < c[0] && c[2] < c[1]);
    }

    #[test]
    fn decay_series_converges_to_closed_form() {
        let nu = vec![0.3, 1.2, 0.7];
        let one = vec![1.0; 3];
        let w = vec![0.5, 0.2, 0.9];
        let closed = exponential_decay_check(&nu, &one, &one, &w, 0.5);
        let sums = decay_series_partial_sums(&nu, &one, &one, &w, 0.5, 12);
        assert!((sums[12] - closed).abs() < 1e-13);
        assert!((sums[0] - mean(&w)).abs() < 1e-15);
    }

    #[test]
    fn decay_rate_vanishes_for_inert_fermions() {
        let g = MomentumGrid::new(2, 4).unwrap();
        let d = HoppingModel::nearest_neighbor(2, 1.0, HoppingModel::contact_potential(2, 1.0))
            .unwrap()
            .dispersion(&g)
            .unwrap();
        let t = CollisionTable::build(&d, Statistics::Fermion, 0.1).unwrap();
        assert!(decay_rate(&t, 1.0, 4.0).unwrap().iter().all(|&x| x == 0.0));
        assert!(decay_rate_time_integral(&t, 1.0, 4.0, 0.01).unwrap().iter().all(|z| z.norm() == 0.0));
    }
}
